#pragma once

// Token condensation: cross-head rank scoring (optionally guided by a
// reservoir anchor), pruning of the lowest-ranked tokens, and K-center
// merging of the ambiguous band between the keep and prune thresholds.

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "tca/encoder.hpp"
#include "tca/tensor.hpp"

namespace tca {

class Reservoir;

std::size_t round_half_up(double x);

struct StageCounts {
    std::size_t n_in = 0;
    std::size_t n_final = 0;
    std::size_t n_pruned = 0;
    std::size_t n_after_prune = 0;
    std::size_t n_untouched = 0;
    std::size_t band = 0;
    std::size_t centers = 0;

    bool skipped() const { return n_final == n_in; }
};

struct CondensationPlan {
    double keep_rate = 0.9;
    double merge_prune_ratio = 2.0;  // removed tokens merged : pruned
    std::size_t centers = 2;

    void validate() const;
    StageCounts stage(std::size_t n_in) const;
};

// H x n per-head patch scores; higher means more attended.
using HeadScores = Matrix;

// Average over heads of the softmaxed cls attention to each patch.
Vector baseline_scores(const BlockTrace& trace);

// Per head, the mean of the cls-query logit and the anchor-query logit to
// each patch key. The anchor only scores; it is never a value. Without an
// anchor this is the plain cls-row logits.
HeadScores augmented_scores(const BlockTrace& trace, const std::optional<Vector>& anchor,
                            const BlockWeights& weights, std::size_t heads, double ln_eps);

// Mean over heads of each token's descending-score rank (1 = most attended).
std::vector<double> cross_head_rank(const HeadScores& scores);

struct Partition {
    std::vector<std::size_t> untouched;  // ascending position
    std::vector<std::size_t> band;       // ascending position
    std::vector<std::size_t> pruned;     // ascending position
};

// Orders positions by rank (ties by position): the first n_untouched are
// kept, the next `band` are merge candidates, the rest are pruned.
Partition partition(std::span<const double> rank, const StageCounts& counts);

// Farthest-first K-center under d = 1 - cosine. Seeds at the lowest
// seed_rank. Returns indices into points in selection order.
std::vector<std::size_t> kcenter_greedy(const Matrix& points, std::size_t k,
                                        std::span<const double> seed_rank);

double cosine_distance(std::span<const float> a, std::span<const float> b);

// Max over points of the distance to the nearest listed center.
double kcenter_radius(const Matrix& points, std::span<const std::size_t> centers);

struct MergeResult {
    Matrix merged;                        // centers.size() x D_v
    std::vector<std::size_t> assignment;  // per point, slot of its center
};

MergeResult merge_clusters(const Matrix& points, std::span<const std::size_t> centers);

// Status of every original patch after one stage.
namespace mask {
inline constexpr int absent = -2;  // removed before this stage
inline constexpr int pruned = -1;
inline constexpr int kept = 0;
// k >= 1: folded into merged cluster k
}  // namespace mask

struct StageRecord {
    int block_id = 0;
    StageCounts counts;
    std::optional<std::size_t> anchor_class;
    std::vector<int> mask;
};

struct CondenseResult {
    TokenMatrix tokens;
    StageRecord record;
};

// Applies one stage given a per-patch rank (lower is better).
CondenseResult condense(const TokenMatrix& t, std::span<const double> rank,
                        const StageCounts& counts, std::size_t total_patches);

enum class ScoringMode { anchor_rank, baseline_attention };

// Encoder hook wiring the condensation stages to the reservoir. Records
// every stage it runs.
class CondensationStageHook final : public CondensationHook {
public:
    CondensationStageHook(CondensationPlan plan, ScoringMode mode, const Reservoir* reservoir,
                          std::size_t total_patches);

    std::size_t expected_patches(int block_id, std::size_t n_in) const override;
    TokenMatrix condense(const TokenMatrix& post_attention, const BlockContext& ctx) override;

    const std::vector<StageRecord>& stages() const { return stages_; }

private:
    CondensationPlan plan_;
    ScoringMode mode_;
    const Reservoir* reservoir_;
    std::size_t total_patches_;
    std::vector<StageRecord> stages_;
};

}  // namespace tca
