#pragma once

// Domain-aware token reservoir: one bounded buffer of anchor stacks per
// class, keyed by the entropy of the admitting prediction.

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "tca/archive.hpp"
#include "tca/tensor.hpp"

namespace tca {

struct EncoderWeights;

enum class ReservoirStrategy { fifo, uncertainty, similarity, diversity };

std::string to_string(ReservoirStrategy s);
ReservoirStrategy parse_strategy(const std::string& s);

struct AnchorRecord {
    double entropy_key = 0.0;
    Matrix anchor_stack;  // L x D_v
    std::uint64_t sample_seq = 0;
};

enum class AdmissionKind { admitted, rejected_pred_mismatch, rejected_by_strategy };

std::string to_string(AdmissionKind k);

struct AdmissionOutcome {
    AdmissionKind kind = AdmissionKind::admitted;
    std::optional<std::uint64_t> evicted_seq;

    bool admitted() const { return kind == AdmissionKind::admitted; }
};

// -p ln p, with 0 ln 0 = 0. Throws DomainError outside [0, 1].
double class_entropy(double p);

struct AnchorSelection {
    std::size_t class_id;
    Vector anchor;  // mean stored cls token of the previous layer
};

class Reservoir {
public:
    Reservoir(std::size_t classes, std::size_t capacity, ReservoirStrategy strategy,
              std::size_t layers, std::size_t width);

    std::size_t classes() const { return buffers_.size(); }
    std::size_t capacity() const { return capacity_; }
    ReservoirStrategy strategy() const { return strategy_; }
    std::size_t layers() const { return layers_; }
    std::size_t width() const { return width_; }

    // Offers a record for class c. probs are the base zero-shot
    // probabilities; the record is only eligible when c is their argmax.
    AdmissionOutcome try_admit(std::size_t c, std::span<const float> probs, AnchorRecord record);

    std::span<const AnchorRecord> buffer(std::size_t c) const;
    bool empty() const;
    std::size_t total_size() const;

    // Per-layer mean of the stored stacks of class c (L x D_v); empty when
    // the buffer is empty.
    const Matrix& class_mean(std::size_t c) const;

    // Class whose mean layer-(block_id - 1) anchor is most cosine-similar to
    // cls_input. Nothing on a cold reservoir or for block 1, which has no
    // preceding layer.
    std::optional<AnchorSelection> select_anchor_class(std::span<const float> cls_input,
                                                       int block_id) const;

    void to_archive(TensorArchive& archive) const;
    // Replays stored records in sequence order; the strategy given here
    // governs later admissions.
    static Reservoir from_archive(const TensorArchive& archive, std::size_t classes,
                                  std::size_t capacity, ReservoirStrategy strategy,
                                  std::size_t layers, std::size_t width);
    std::uint64_t max_sample_seq() const;

private:
    std::optional<std::size_t> pick_victim(std::size_t c, const AnchorRecord& candidate) const;
    void recompute_mean(std::size_t c);

    std::size_t capacity_;
    ReservoirStrategy strategy_;
    std::size_t layers_;
    std::size_t width_;
    std::vector<std::vector<AnchorRecord>> buffers_;
    std::vector<Matrix> means_;
};

// Cosine between the projected mean final-layer anchor of each class and its
// text embedding; nothing for classes with an empty buffer.
std::vector<std::optional<double>> anchor_alignment(const Reservoir& r,
                                                    const Matrix& text_embeddings,
                                                    const EncoderWeights& w);

}  // namespace tca
