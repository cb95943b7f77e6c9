#include "tca/archive.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "json.hpp"
#include "tca/errors.hpp"

namespace tca {

static_assert(std::endian::native == std::endian::little,
              "archive I/O assumes a little-endian host");

namespace {

using json = nlohmann::json;

std::uint64_t align_up(std::uint64_t x, std::uint64_t a) { return (x + a - 1) / a * a; }

bool parse_dtype(const std::string& s, DType& out) {
    if (s == "f32") out = DType::f32;
    else if (s == "i64") out = DType::i64;
    else if (s == "utf8") out = DType::utf8;
    else return false;
    return true;
}

std::uint64_t read_u64(const std::uint8_t* p) {
    std::uint64_t v = 0;
    std::memcpy(&v, p, sizeof v);
    return v;
}

std::vector<std::string> split_lines(std::span<const std::uint8_t> bytes) {
    std::vector<std::string> items;
    if (bytes.empty()) return items;
    std::string cur;
    for (std::uint8_t b : bytes) {
        if (b == '\n') {
            items.push_back(std::move(cur));
            cur.clear();
        } else {
            cur.push_back(static_cast<char>(b));
        }
    }
    items.push_back(std::move(cur));
    return items;
}

json manifest_json(const std::map<std::string, EntryInfo>& infos) {
    json m = json::object();
    for (const auto& [name, info] : infos) {
        m[name] = {{"dtype", dtype_name(info.dtype)},
                   {"shape", info.shape},
                   {"offset", info.offset},
                   {"length", info.length}};
    }
    return m;
}

}  // namespace

const char* dtype_name(DType t) {
    switch (t) {
        case DType::f32: return "f32";
        case DType::i64: return "i64";
        case DType::utf8: return "utf8";
    }
    return "?";
}

std::size_t dtype_size(DType t) {
    switch (t) {
        case DType::f32: return 4;
        case DType::i64: return 8;
        case DType::utf8: return 1;
    }
    return 1;
}

std::uint64_t EntryInfo::element_count() const {
    std::uint64_t n = 1;
    for (auto d : shape) n *= static_cast<std::uint64_t>(d);
    return n;
}

void TensorArchive::put_raw(const std::string& name, DType dtype,
                            std::vector<std::int64_t> shape, std::vector<std::uint8_t> bytes) {
    for (auto d : shape) {
        if (d < 0) throw ArchiveError("negative dimension in shape of '" + name + "'");
    }
    Entry e;
    e.info.dtype = dtype;
    e.info.shape = std::move(shape);
    e.info.length = bytes.size();
    if (dtype != DType::utf8 && e.info.element_count() * dtype_size(dtype) != bytes.size()) {
        throw ArchiveError("entry '" + name + "' shape does not match its data");
    }
    e.bytes = std::move(bytes);
    entries_[name] = std::move(e);
}

void TensorArchive::put_f32(const std::string& name, std::vector<std::int64_t> shape,
                            std::span<const float> values) {
    std::vector<std::uint8_t> bytes(values.size_bytes());
    std::memcpy(bytes.data(), values.data(), bytes.size());
    put_raw(name, DType::f32, std::move(shape), std::move(bytes));
}

void TensorArchive::put_matrix(const std::string& name, const Matrix& m) {
    put_f32(name, {static_cast<std::int64_t>(m.rows()), static_cast<std::int64_t>(m.cols())},
            m.data());
}

void TensorArchive::put_vector(const std::string& name, std::span<const float> v) {
    put_f32(name, {static_cast<std::int64_t>(v.size())}, v);
}

void TensorArchive::put_i64(const std::string& name, std::vector<std::int64_t> shape,
                            std::span<const std::int64_t> values) {
    std::vector<std::uint8_t> bytes(values.size_bytes());
    std::memcpy(bytes.data(), values.data(), bytes.size());
    put_raw(name, DType::i64, std::move(shape), std::move(bytes));
}

void TensorArchive::put_scalar(const std::string& name, std::int64_t value) {
    put_i64(name, {}, std::span<const std::int64_t>(&value, 1));
}

void TensorArchive::put_strings(const std::string& name, const std::vector<std::string>& items) {
    std::string joined;
    for (std::size_t i = 0; i < items.size(); ++i) {
        if (items[i].find('\n') != std::string::npos) {
            throw ArchiveError("string list '" + name + "' item contains a newline");
        }
        if (i) joined.push_back('\n');
        joined += items[i];
    }
    put_raw(name, DType::utf8, {static_cast<std::int64_t>(items.size())},
            std::vector<std::uint8_t>(joined.begin(), joined.end()));
}

void TensorArchive::merge(const TensorArchive& other) {
    for (const auto& [name, e] : other.entries_) entries_[name] = e;
}

bool TensorArchive::contains(const std::string& name) const { return entries_.count(name) > 0; }

const EntryInfo& TensorArchive::info(const std::string& name) const {
    auto it = entries_.find(name);
    if (it == entries_.end()) throw ArchiveError("missing entry '" + name + "'");
    return it->second.info;
}

std::vector<std::string> TensorArchive::names() const {
    std::vector<std::string> out;
    out.reserve(entries_.size());
    for (const auto& kv : entries_) out.push_back(kv.first);
    return out;
}

const TensorArchive::Entry& TensorArchive::entry(const std::string& name, DType expected) const {
    auto it = entries_.find(name);
    if (it == entries_.end()) throw ArchiveError("missing entry '" + name + "'");
    if (it->second.info.dtype != expected) {
        throw ArchiveError("entry '" + name + "' has dtype " + dtype_name(it->second.info.dtype) +
                           ", expected " + dtype_name(expected));
    }
    return it->second;
}

Matrix TensorArchive::matrix(const std::string& name) const {
    const Entry& e = entry(name, DType::f32);
    const auto& s = e.info.shape;
    std::size_t rows = 0, cols = 0;
    if (s.size() == 2) {
        rows = static_cast<std::size_t>(s[0]);
        cols = static_cast<std::size_t>(s[1]);
    } else if (s.size() == 1) {
        rows = 1;
        cols = static_cast<std::size_t>(s[0]);
    } else {
        throw ArchiveError("entry '" + name + "' is not a matrix");
    }
    std::vector<float> v(rows * cols);
    std::memcpy(v.data(), e.bytes.data(), e.bytes.size());
    return Matrix(rows, cols, std::move(v));
}

Vector TensorArchive::vector(const std::string& name) const {
    const Entry& e = entry(name, DType::f32);
    Vector v(e.bytes.size() / sizeof(float));
    std::memcpy(v.data(), e.bytes.data(), e.bytes.size());
    return v;
}

std::vector<std::int64_t> TensorArchive::i64(const std::string& name) const {
    const Entry& e = entry(name, DType::i64);
    std::vector<std::int64_t> v(e.bytes.size() / sizeof(std::int64_t));
    std::memcpy(v.data(), e.bytes.data(), e.bytes.size());
    return v;
}

std::int64_t TensorArchive::scalar_i64(const std::string& name) const {
    auto v = i64(name);
    if (v.size() != 1) throw ArchiveError("entry '" + name + "' is not a scalar");
    return v[0];
}

std::vector<std::string> TensorArchive::strings(const std::string& name) const {
    const Entry& e = entry(name, DType::utf8);
    auto items = split_lines(e.bytes);
    if (e.info.shape.size() == 1 &&
        items.size() != static_cast<std::size_t>(e.info.shape[0])) {
        throw ArchiveError("string list '" + name + "' holds " + std::to_string(items.size()) +
                           " items, shape says " + std::to_string(e.info.shape[0]));
    }
    return items;
}

std::span<const std::uint8_t> TensorArchive::raw(const std::string& name) const {
    auto it = entries_.find(name);
    if (it == entries_.end()) throw ArchiveError("missing entry '" + name + "'");
    return it->second.bytes;
}

std::vector<std::uint8_t> TensorArchive::serialize() const {
    std::map<std::string, EntryInfo> infos;
    for (const auto& [name, e] : entries_) infos[name] = e.info;

    // Offsets are printed into the manifest, so iterate until the payload
    // start no longer moves.
    std::uint64_t payload_start = 0;
    std::string manifest;
    for (int pass = 0; pass < 16; ++pass) {
        std::uint64_t cursor = payload_start;
        for (auto& [name, info] : infos) {
            info.offset = cursor;
            cursor = align_up(cursor + info.length, kAlignment);
        }
        manifest = manifest_json(infos).dump();
        const std::uint64_t start = align_up(12 + manifest.size(), kAlignment);
        if (start == payload_start) break;
        payload_start = start;
    }

    std::uint64_t total = payload_start;
    for (const auto& kv : infos) total = std::max(total, kv.second.offset + kv.second.length);
    std::vector<std::uint8_t> out(total, 0);
    std::memcpy(out.data(), kMagic, 4);
    const std::uint64_t mlen = manifest.size();
    std::memcpy(out.data() + 4, &mlen, 8);
    std::memcpy(out.data() + 12, manifest.data(), manifest.size());
    for (const auto& [name, e] : entries_) {
        std::memcpy(out.data() + infos[name].offset, e.bytes.data(), e.bytes.size());
    }
    return out;
}

void TensorArchive::save(const std::filesystem::path& path) const {
    auto bytes = serialize();
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw ArchiveError("cannot open '" + path.string() + "' for writing");
    f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw ArchiveError("write failed for '" + path.string() + "'");
}

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw ArchiveError("cannot open '" + path.string() + "'");
    std::ostringstream ss;
    ss << f.rdbuf();
    const std::string s = ss.str();
    return std::vector<std::uint8_t>(s.begin(), s.end());
}

InspectResult TensorArchive::inspect(std::span<const std::uint8_t> bytes) {
    InspectResult r;
    auto fail = [&](std::string msg) { r.violations.push_back(std::move(msg)); };
    if (bytes.size() < 12) {
        fail("truncated header: " + std::to_string(bytes.size()) + " bytes");
        return r;
    }
    if (std::memcmp(bytes.data(), kMagic, 4) != 0) {
        fail("bad magic");
        return r;
    }
    const std::uint64_t mlen = read_u64(bytes.data() + 4);
    if (mlen > bytes.size() - 12) {
        fail("manifest overrun: manifest length " + std::to_string(mlen) + " exceeds file");
        return r;
    }
    json manifest;
    try {
        manifest = json::parse(bytes.begin() + 12, bytes.begin() + 12 + static_cast<std::ptrdiff_t>(mlen));
    } catch (const json::exception& e) {
        fail(std::string("manifest is not valid JSON: ") + e.what());
        return r;
    }
    if (!manifest.is_object()) {
        fail("manifest is not a JSON object");
        return r;
    }

    const std::uint64_t header_end = 12 + mlen;
    std::vector<std::pair<std::uint64_t, std::uint64_t>> spans;
    for (auto it = manifest.begin(); it != manifest.end(); ++it) {
        const std::string& name = it.key();
        const json& v = it.value();
        EntryInfo info;
        try {
            if (!parse_dtype(v.at("dtype").get<std::string>(), info.dtype)) {
                fail(name + ": unknown dtype");
                continue;
            }
            info.shape = v.at("shape").get<std::vector<std::int64_t>>();
            info.offset = v.at("offset").get<std::uint64_t>();
            info.length = v.at("length").get<std::uint64_t>();
        } catch (const json::exception& e) {
            fail(name + ": malformed manifest record");
            continue;
        }
        bool shape_ok = true;
        for (auto d : info.shape) shape_ok = shape_ok && d >= 0;
        if (!shape_ok) {
            fail(name + ": negative dimension");
            continue;
        }
        if (info.dtype != DType::utf8 &&
            info.length != info.element_count() * dtype_size(info.dtype)) {
            fail(name + ": length " + std::to_string(info.length) + " does not match shape");
        }
        if (info.offset % kAlignment != 0) fail(name + ": offset not 64-byte aligned");
        if (info.offset < header_end) fail(name + ": offset inside header");
        if (info.offset > bytes.size() || info.length > bytes.size() - info.offset) {
            fail(name + ": payload overrun");
            r.entries[name] = info;
            continue;
        }
        const auto payload = bytes.subspan(info.offset, info.length);
        if (info.dtype == DType::f32) {
            std::vector<float> vals(info.length / 4);
            std::memcpy(vals.data(), payload.data(), vals.size() * 4);
            if (!all_finite(vals)) fail(name + ": non-finite values");
        } else if (info.dtype == DType::utf8 && info.shape.size() == 1) {
            if (split_lines(payload).size() != static_cast<std::size_t>(info.shape[0])) {
                fail(name + ": string count does not match shape");
            }
        }
        if (info.length > 0) spans.emplace_back(info.offset, info.offset + info.length);
        r.entries[name] = info;
    }
    std::sort(spans.begin(), spans.end());
    for (std::size_t i = 1; i < spans.size(); ++i) {
        if (spans[i].first < spans[i - 1].second) {
            fail("overlapping payloads at offset " + std::to_string(spans[i].first));
        }
    }
    return r;
}

InspectResult TensorArchive::inspect_file(const std::filesystem::path& path) {
    return inspect(read_file_bytes(path));
}

TensorArchive TensorArchive::parse(std::span<const std::uint8_t> bytes) {
    InspectResult r = inspect(bytes);
    if (!r.ok()) throw ArchiveError(r.violations.front());
    TensorArchive a;
    for (const auto& [name, info] : r.entries) {
        Entry e;
        e.info = info;
        const auto payload = bytes.subspan(info.offset, info.length);
        e.bytes.assign(payload.begin(), payload.end());
        a.entries_[name] = std::move(e);
    }
    return a;
}

TensorArchive TensorArchive::load(const std::filesystem::path& path) {
    auto bytes = read_file_bytes(path);
    try {
        return parse(bytes);
    } catch (const ArchiveError& e) {
        throw ArchiveError(path.string() + ": " + e.what());
    }
}

}  // namespace tca
