#pragma once

// TensorArchive: the single container format shared with the exporter.
//
// Layout (all integers little-endian):
//   [0,4)    magic "TCA1"
//   [4,12)   u64 manifest length in bytes
//   [12,..)  manifest, UTF-8 JSON: name -> {dtype, shape, offset, length}
//   payload  raw buffers; every offset is an absolute file offset and a
//            multiple of 64. f32/i64 are row-major; utf8 lists are the
//            strings joined by '\n'.

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "tca/tensor.hpp"

namespace tca {

enum class DType { f32, i64, utf8 };

const char* dtype_name(DType t);
std::size_t dtype_size(DType t);  // 1 for utf8

struct EntryInfo {
    DType dtype = DType::f32;
    std::vector<std::int64_t> shape;
    std::uint64_t offset = 0;
    std::uint64_t length = 0;

    std::uint64_t element_count() const;
};

struct InspectResult {
    std::map<std::string, EntryInfo> entries;
    std::vector<std::string> violations;
    bool ok() const { return violations.empty(); }
};

class TensorArchive {
public:
    static constexpr char kMagic[4] = {'T', 'C', 'A', '1'};
    static constexpr std::uint64_t kAlignment = 64;

    void put_f32(const std::string& name, std::vector<std::int64_t> shape,
                 std::span<const float> values);
    void put_matrix(const std::string& name, const Matrix& m);
    void put_vector(const std::string& name, std::span<const float> v);
    void put_i64(const std::string& name, std::vector<std::int64_t> shape,
                 std::span<const std::int64_t> values);
    void put_scalar(const std::string& name, std::int64_t value);
    void put_strings(const std::string& name, const std::vector<std::string>& items);

    // Merges another archive's entries into this one; later puts win.
    void merge(const TensorArchive& other);

    bool contains(const std::string& name) const;
    const EntryInfo& info(const std::string& name) const;
    std::vector<std::string> names() const;
    std::size_t size() const { return entries_.size(); }

    // Rank-2 entries as is, rank-1 entries as a single row.
    Matrix matrix(const std::string& name) const;
    Vector vector(const std::string& name) const;
    std::vector<std::int64_t> i64(const std::string& name) const;
    std::int64_t scalar_i64(const std::string& name) const;
    std::vector<std::string> strings(const std::string& name) const;
    std::span<const std::uint8_t> raw(const std::string& name) const;

    std::vector<std::uint8_t> serialize() const;
    void save(const std::filesystem::path& path) const;

    // Throws ArchiveError carrying the first violation.
    static TensorArchive parse(std::span<const std::uint8_t> bytes);
    static TensorArchive load(const std::filesystem::path& path);

    // Validates without throwing on content problems.
    static InspectResult inspect(std::span<const std::uint8_t> bytes);
    static InspectResult inspect_file(const std::filesystem::path& path);

private:
    struct Entry {
        EntryInfo info;
        std::vector<std::uint8_t> bytes;
    };
    const Entry& entry(const std::string& name, DType expected) const;
    void put_raw(const std::string& name, DType dtype, std::vector<std::int64_t> shape,
                 std::vector<std::uint8_t> bytes);

    std::map<std::string, Entry> entries_;
};

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);

}  // namespace tca
