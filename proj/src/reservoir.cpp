#include "tca/reservoir.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "tca/encoder.hpp"
#include "tca/errors.hpp"

namespace tca {

namespace {

std::span<const float> final_anchor(const AnchorRecord& r) {
    return r.anchor_stack.row(r.anchor_stack.rows() - 1);
}

// Smallest pairwise cosine distance among the final-layer anchors, skipping
// index `skip`. Infinite when fewer than two records remain.
double min_pairwise_distance(const std::vector<const AnchorRecord*>& set, std::size_t skip) {
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < set.size(); ++i) {
        if (i == skip) continue;
        for (std::size_t j = i + 1; j < set.size(); ++j) {
            if (j == skip) continue;
            best = std::min(best, 1.0 - cosine_or_zero(final_anchor(*set[i]), final_anchor(*set[j])));
        }
    }
    return best;
}

// True when a should be retained over b on entropy grounds.
bool retains_over(const AnchorRecord& a, const AnchorRecord& b) {
    if (a.entropy_key != b.entropy_key) return a.entropy_key < b.entropy_key;
    return a.sample_seq < b.sample_seq;
}

std::string record_prefix(std::size_t c, std::size_t i) {
    return "reservoir/" + std::to_string(c) + "/" + std::to_string(i) + "/";
}

}  // namespace

std::string to_string(ReservoirStrategy s) {
    switch (s) {
        case ReservoirStrategy::fifo: return "fifo";
        case ReservoirStrategy::uncertainty: return "uncertainty";
        case ReservoirStrategy::similarity: return "similarity";
        case ReservoirStrategy::diversity: return "diversity";
    }
    return "?";
}

ReservoirStrategy parse_strategy(const std::string& s) {
    if (s == "fifo") return ReservoirStrategy::fifo;
    if (s == "uncertainty") return ReservoirStrategy::uncertainty;
    if (s == "similarity") return ReservoirStrategy::similarity;
    if (s == "diversity") return ReservoirStrategy::diversity;
    throw InputError("unknown reservoir strategy '" + s + "'");
}

std::string to_string(AdmissionKind k) {
    switch (k) {
        case AdmissionKind::admitted: return "admitted";
        case AdmissionKind::rejected_pred_mismatch: return "rejected_pred_mismatch";
        case AdmissionKind::rejected_by_strategy: return "rejected_by_strategy";
    }
    return "?";
}

double class_entropy(double p) {
    if (!(p >= 0.0 && p <= 1.0)) throw DomainError("probability outside [0, 1]");
    if (p == 0.0) return 0.0;
    return -p * std::log(p);
}

Reservoir::Reservoir(std::size_t classes, std::size_t capacity, ReservoirStrategy strategy,
                     std::size_t layers, std::size_t width)
    : capacity_(capacity), strategy_(strategy), layers_(layers), width_(width),
      buffers_(classes), means_(classes) {
    if (capacity == 0) throw InputError("reservoir capacity must be at least 1");
}

std::span<const AnchorRecord> Reservoir::buffer(std::size_t c) const { return buffers_.at(c); }

bool Reservoir::empty() const { return total_size() == 0; }

std::size_t Reservoir::total_size() const {
    std::size_t n = 0;
    for (const auto& b : buffers_) n += b.size();
    return n;
}

const Matrix& Reservoir::class_mean(std::size_t c) const { return means_.at(c); }

std::uint64_t Reservoir::max_sample_seq() const {
    std::uint64_t m = 0;
    for (const auto& b : buffers_) {
        for (const auto& r : b) m = std::max(m, r.sample_seq);
    }
    return m;
}

void Reservoir::recompute_mean(std::size_t c) {
    const auto& buf = buffers_[c];
    if (buf.empty()) {
        means_[c] = Matrix();
        return;
    }
    std::vector<double> acc(layers_ * width_, 0.0);
    for (const auto& r : buf) {
        const auto& d = r.anchor_stack.data();
        for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += d[i];
    }
    Matrix mean(layers_, width_);
    const double inv = 1.0 / static_cast<double>(buf.size());
    for (std::size_t i = 0; i < acc.size(); ++i) mean.data()[i] = static_cast<float>(acc[i] * inv);
    means_[c] = std::move(mean);
}

std::optional<std::size_t> Reservoir::pick_victim(std::size_t c,
                                                  const AnchorRecord& candidate) const {
    const auto& buf = buffers_[c];
    switch (strategy_) {
        case ReservoirStrategy::fifo: {
            auto it = std::min_element(buf.begin(), buf.end(), [](const auto& a, const auto& b) {
                return a.sample_seq < b.sample_seq;
            });
            return static_cast<std::size_t>(it - buf.begin());
        }
        case ReservoirStrategy::uncertainty:
        case ReservoirStrategy::similarity: {
            std::size_t worst = 0;
            for (std::size_t i = 1; i < buf.size(); ++i) {
                if (retains_over(buf[worst], buf[i])) worst = i;
            }
            if (!retains_over(candidate, buf[worst])) return std::nullopt;
            if (strategy_ == ReservoirStrategy::similarity && buf.size() >= 2) {
                double to_candidate = 0.0;
                for (const auto& r : buf) to_candidate += cosine_or_zero(final_anchor(candidate), final_anchor(r));
                to_candidate /= static_cast<double>(buf.size());
                double pairwise = 0.0;
                std::size_t pairs = 0;
                for (std::size_t i = 0; i < buf.size(); ++i) {
                    for (std::size_t j = i + 1; j < buf.size(); ++j) {
                        pairwise += cosine_or_zero(final_anchor(buf[i]), final_anchor(buf[j]));
                        ++pairs;
                    }
                }
                pairwise /= static_cast<double>(pairs);
                if (to_candidate < pairwise) return std::nullopt;
            }
            return worst;
        }
        case ReservoirStrategy::diversity: {
            std::vector<const AnchorRecord*> set;
            for (const auto& r : buf) set.push_back(&r);
            set.push_back(&candidate);
            std::size_t a = 0, b = 1;
            double closest = -std::numeric_limits<double>::infinity();
            for (std::size_t i = 0; i < set.size(); ++i) {
                for (std::size_t j = i + 1; j < set.size(); ++j) {
                    const double s = cosine_or_zero(final_anchor(*set[i]), final_anchor(*set[j]));
                    if (s > closest) {
                        closest = s;
                        a = i;
                        b = j;
                    }
                }
            }
            // Drop the member whose removal leaves the more spread-out set;
            // entropy, then age, settles ties.
            const double without_a = min_pairwise_distance(set, a);
            const double without_b = min_pairwise_distance(set, b);
            std::size_t drop;
            if (without_a != without_b) {
                drop = without_a > without_b ? a : b;
            } else {
                drop = retains_over(*set[a], *set[b]) ? b : a;
            }
            if (drop == buf.size()) return std::nullopt;
            return drop;
        }
    }
    return std::nullopt;
}

AdmissionOutcome Reservoir::try_admit(std::size_t c, std::span<const float> probs,
                                      AnchorRecord record) {
    if (c >= buffers_.size()) throw InputError("class id out of range");
    if (probs.size() != buffers_.size()) {
        throw ShapeError("probability vector does not match the class count");
    }
    if (record.anchor_stack.rows() != layers_ || record.anchor_stack.cols() != width_) {
        throw ShapeError("anchor stack shape does not match the reservoir");
    }
    if (!(record.entropy_key >= 0.0)) throw DomainError("entropy key must be nonnegative");
    if (argmax(probs) != c) return {AdmissionKind::rejected_pred_mismatch, std::nullopt};

    auto& buf = buffers_[c];
    AdmissionOutcome outcome{AdmissionKind::admitted, std::nullopt};
    if (buf.size() >= capacity_) {
        auto victim = pick_victim(c, record);
        if (!victim) return {AdmissionKind::rejected_by_strategy, std::nullopt};
        outcome.evicted_seq = buf[*victim].sample_seq;
        buf.erase(buf.begin() + static_cast<std::ptrdiff_t>(*victim));
    }
    buf.push_back(std::move(record));
    recompute_mean(c);
    return outcome;
}

std::optional<AnchorSelection> Reservoir::select_anchor_class(std::span<const float> cls_input,
                                                              int block_id) const {
    if (block_id < 2 || static_cast<std::size_t>(block_id) > layers_ + 1) return std::nullopt;
    const std::size_t layer_row = static_cast<std::size_t>(block_id - 2);
    std::optional<AnchorSelection> best;
    double best_sim = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < buffers_.size(); ++c) {
        if (buffers_[c].empty()) continue;
        const auto mean_row = means_[c].row(layer_row);
        const double s = cosine_or_zero(cls_input, mean_row);
        if (s > best_sim) {
            best_sim = s;
            best = AnchorSelection{c, Vector(mean_row.begin(), mean_row.end())};
        }
    }
    return best;
}

void Reservoir::to_archive(TensorArchive& archive) const {
    for (std::size_t c = 0; c < buffers_.size(); ++c) {
        for (std::size_t i = 0; i < buffers_[c].size(); ++i) {
            const auto& r = buffers_[c][i];
            const std::string p = record_prefix(c, i);
            archive.put_matrix(p + "stack", r.anchor_stack);
            const float key = static_cast<float>(r.entropy_key);
            archive.put_f32(p + "key", {}, std::span<const float>(&key, 1));
            archive.put_scalar(p + "seq", static_cast<std::int64_t>(r.sample_seq));
        }
    }
}

Reservoir Reservoir::from_archive(const TensorArchive& archive, std::size_t classes,
                                  std::size_t capacity, ReservoirStrategy strategy,
                                  std::size_t layers, std::size_t width) {
    Reservoir r(classes, capacity, strategy, layers, width);
    for (std::size_t c = 0; c < classes; ++c) {
        for (std::size_t i = 0; archive.contains(record_prefix(c, i) + "stack"); ++i) {
            const std::string p = record_prefix(c, i);
            AnchorRecord rec;
            rec.anchor_stack = archive.matrix(p + "stack");
            rec.entropy_key = archive.vector(p + "key").at(0);
            rec.sample_seq = archive.contains(p + "seq")
                                 ? static_cast<std::uint64_t>(archive.scalar_i64(p + "seq"))
                                 : i;
            if (rec.anchor_stack.rows() != layers || rec.anchor_stack.cols() != width) {
                throw ArchiveError("reservoir snapshot stack has the wrong shape");
            }
            if (r.buffers_[c].size() >= capacity) {
                throw ArchiveError("reservoir snapshot exceeds capacity for class " +
                                   std::to_string(c));
            }
            r.buffers_[c].push_back(std::move(rec));
        }
        r.recompute_mean(c);
    }
    return r;
}

std::vector<std::optional<double>> anchor_alignment(const Reservoir& r,
                                                    const Matrix& text_embeddings,
                                                    const EncoderWeights& w) {
    std::vector<std::optional<double>> out(r.classes());
    for (std::size_t c = 0; c < r.classes(); ++c) {
        if (r.buffer(c).empty()) continue;
        const Matrix& mean = r.class_mean(c);
        const Vector projected = project_cls(mean.row(mean.rows() - 1), w);
        out[c] = cosine_or_zero(projected, text_embeddings.row(c));
    }
    return out;
}

}  // namespace tca
