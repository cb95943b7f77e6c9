#include "tca/condensation.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "tca/errors.hpp"
#include "tca/reservoir.hpp"

namespace tca {

std::size_t round_half_up(double x) {
    if (x < 0.0) throw DomainError("cannot round a negative count");
    return static_cast<std::size_t>(std::floor(x + 0.5));
}

void CondensationPlan::validate() const {
    if (!(keep_rate > 0.0 && keep_rate <= 1.0)) throw InputError("keep rate must lie in (0, 1]");
    if (!(merge_prune_ratio >= 0.0) || !std::isfinite(merge_prune_ratio)) {
        throw InputError("merge:prune ratio must be a nonnegative number");
    }
    if (centers == 0) throw InputError("at least one merge center is required");
}

StageCounts CondensationPlan::stage(std::size_t n_in) const {
    StageCounts s;
    s.n_in = n_in;
    s.n_final = std::clamp<std::size_t>(round_half_up(keep_rate * static_cast<double>(n_in)), 1,
                                        std::max<std::size_t>(n_in, 1));
    const std::size_t removed = n_in - s.n_final;
    if (removed == 0) {
        s.n_after_prune = n_in;
        s.n_untouched = n_in;
        return s;
    }
    s.n_pruned = std::min(removed,
                          round_half_up(static_cast<double>(removed) / (1.0 + merge_prune_ratio)));
    s.n_after_prune = n_in - s.n_pruned;
    if (s.n_pruned == removed) {
        // Nothing left to fold together: pure pruning.
        s.n_untouched = s.n_final;
        return s;
    }
    s.centers = std::min(centers, s.n_final);
    s.n_untouched = s.n_final - s.centers;
    s.band = s.n_after_prune - s.n_untouched;
    return s;
}

Vector baseline_scores(const BlockTrace& trace) {
    const Matrix& a = trace.cls_attention;
    Vector s(a.cols(), 0.0f);
    for (std::size_t i = 0; i < a.cols(); ++i) {
        double acc = 0.0;
        for (std::size_t h = 0; h < a.rows(); ++h) acc += a(h, i);
        s[i] = static_cast<float>(acc / static_cast<double>(a.rows()));
    }
    return s;
}

HeadScores augmented_scores(const BlockTrace& trace, const std::optional<Vector>& anchor,
                            const BlockWeights& weights, std::size_t heads, double ln_eps) {
    if (!anchor) return trace.cls_logits;
    const std::size_t n = trace.cls_logits.cols();
    const std::size_t width = trace.keys.cols();
    const std::size_t dh = width / heads;
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
    const Vector q = block_query(*anchor, weights, ln_eps);
    HeadScores out(heads, n);
    for (std::size_t h = 0; h < heads; ++h) {
        const std::size_t off = h * dh;
        for (std::size_t i = 0; i < n; ++i) {
            double acc = 0.0;
            for (std::size_t d = 0; d < dh; ++d) {
                acc += static_cast<double>(q[off + d]) * trace.keys(i + 1, off + d);
            }
            const float anchor_logit = static_cast<float>(acc * scale);
            out(h, i) = (trace.cls_logits(h, i) + anchor_logit) / 2.0f;
        }
    }
    return out;
}

std::vector<double> cross_head_rank(const HeadScores& scores) {
    const std::size_t heads = scores.rows();
    const std::size_t n = scores.cols();
    std::vector<double> mean_rank(n, 0.0);
    std::vector<std::size_t> order(n);
    for (std::size_t h = 0; h < heads; ++h) {
        std::iota(order.begin(), order.end(), 0);
        std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
            return scores(h, a) > scores(h, b);
        });
        for (std::size_t r = 0; r < n; ++r) mean_rank[order[r]] += static_cast<double>(r + 1);
    }
    for (double& r : mean_rank) r /= static_cast<double>(heads);
    return mean_rank;
}

Partition partition(std::span<const double> rank, const StageCounts& counts) {
    const std::size_t n = rank.size();
    if (counts.n_in != n || counts.n_untouched + counts.band + counts.n_pruned != n) {
        throw ContractError("stage counts do not cover the live patches");
    }
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return rank[a] < rank[b]; });
    Partition p;
    auto first = order.begin();
    p.untouched.assign(first, first + static_cast<std::ptrdiff_t>(counts.n_untouched));
    first += static_cast<std::ptrdiff_t>(counts.n_untouched);
    p.band.assign(first, first + static_cast<std::ptrdiff_t>(counts.band));
    first += static_cast<std::ptrdiff_t>(counts.band);
    p.pruned.assign(first, order.end());
    std::sort(p.untouched.begin(), p.untouched.end());
    std::sort(p.band.begin(), p.band.end());
    std::sort(p.pruned.begin(), p.pruned.end());
    return p;
}

double cosine_distance(std::span<const float> a, std::span<const float> b) {
    return 1.0 - cosine_or_zero(a, b);
}

std::vector<std::size_t> kcenter_greedy(const Matrix& points, std::size_t k,
                                        std::span<const double> seed_rank) {
    const std::size_t n = points.rows();
    if (seed_rank.size() != n) throw ShapeError("seed ranks do not match the point count");
    std::vector<std::size_t> centers;
    if (n == 0 || k == 0) return centers;
    if (k >= n) {
        centers.resize(n);
        std::iota(centers.begin(), centers.end(), 0);
        return centers;
    }
    const std::size_t seed = static_cast<std::size_t>(
        std::min_element(seed_rank.begin(), seed_rank.end()) - seed_rank.begin());
    centers.push_back(seed);
    std::vector<double> nearest(n);
    for (std::size_t i = 0; i < n; ++i) nearest[i] = cosine_distance(points.row(i), points.row(seed));
    std::vector<bool> chosen(n, false);
    chosen[seed] = true;
    while (centers.size() < k) {
        std::size_t next = n;
        for (std::size_t i = 0; i < n; ++i) {
            if (chosen[i]) continue;
            if (next == n || nearest[i] > nearest[next]) next = i;
        }
        chosen[next] = true;
        centers.push_back(next);
        for (std::size_t i = 0; i < n; ++i) {
            nearest[i] = std::min(nearest[i], cosine_distance(points.row(i), points.row(next)));
        }
    }
    return centers;
}

double kcenter_radius(const Matrix& points, std::span<const std::size_t> centers) {
    double radius = 0.0;
    for (std::size_t i = 0; i < points.rows(); ++i) {
        double best = std::numeric_limits<double>::infinity();
        for (std::size_t c : centers) best = std::min(best, cosine_distance(points.row(i), points.row(c)));
        radius = std::max(radius, best);
    }
    return radius;
}

MergeResult merge_clusters(const Matrix& points, std::span<const std::size_t> centers) {
    const std::size_t n = points.rows();
    const std::size_t k = centers.size();
    const std::size_t width = points.cols();
    MergeResult r;
    r.assignment.assign(n, 0);
    std::vector<bool> is_center(n, false);
    for (std::size_t slot = 0; slot < k; ++slot) {
        if (centers[slot] >= n) throw ShapeError("center index out of range");
        is_center[centers[slot]] = true;
        r.assignment[centers[slot]] = slot;
    }
    for (std::size_t i = 0; i < n; ++i) {
        if (is_center[i]) continue;
        std::size_t best = 0;
        double best_d = std::numeric_limits<double>::infinity();
        for (std::size_t slot = 0; slot < k; ++slot) {
            const double d = cosine_distance(points.row(i), points.row(centers[slot]));
            if (d < best_d) {
                best_d = d;
                best = slot;
            }
        }
        r.assignment[i] = best;
    }
    std::vector<double> acc(k * width, 0.0);
    std::vector<std::size_t> members(k, 0);
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t slot = r.assignment[i];
        ++members[slot];
        for (std::size_t j = 0; j < width; ++j) acc[slot * width + j] += points(i, j);
    }
    r.merged = Matrix(k, width);
    for (std::size_t slot = 0; slot < k; ++slot) {
        for (std::size_t j = 0; j < width; ++j) {
            r.merged(slot, j) = static_cast<float>(acc[slot * width + j] / static_cast<double>(members[slot]));
        }
    }
    return r;
}

CondenseResult condense(const TokenMatrix& t, std::span<const double> rank,
                        const StageCounts& counts, std::size_t total_patches) {
    t.check_consistent();
    const std::size_t n = t.patch_count();
    if (rank.size() != n || counts.n_in != n) throw ContractError("rank/count mismatch with tokens");

    CondenseResult out;
    out.record.counts = counts;
    out.record.mask.assign(total_patches, mask::absent);
    auto mark = [&](std::size_t pos, int status) {
        for (int id : t.patch_ids[pos]) out.record.mask.at(static_cast<std::size_t>(id)) = status;
    };

    if (counts.skipped()) {
        for (std::size_t i = 0; i < n; ++i) mark(i, mask::kept);
        out.tokens = t;
        return out;
    }

    const Partition part = partition(rank, counts);
    for (std::size_t i : part.untouched) mark(i, mask::kept);
    for (std::size_t i : part.pruned) mark(i, mask::pruned);

    std::vector<std::size_t> rows{0};
    for (std::size_t i : part.untouched) rows.push_back(i + 1);
    Matrix kept = t.tokens.select_rows(rows);

    TokenMatrix& r = out.tokens;
    r.tokens = Matrix(1 + counts.n_untouched + counts.centers, t.tokens.cols());
    std::copy(kept.data().begin(), kept.data().end(), r.tokens.data().begin());
    for (std::size_t i : part.untouched) r.patch_ids.push_back(t.patch_ids[i]);

    if (counts.centers > 0) {
        std::vector<std::size_t> band_rows;
        std::vector<double> band_rank;
        for (std::size_t i : part.band) {
            band_rows.push_back(i + 1);
            band_rank.push_back(rank[i]);
        }
        const Matrix points = t.tokens.select_rows(band_rows);
        const auto centers = kcenter_greedy(points, counts.centers, band_rank);
        const MergeResult merged = merge_clusters(points, centers);
        std::vector<std::vector<int>> ids(centers.size());
        for (std::size_t b = 0; b < part.band.size(); ++b) {
            const std::size_t slot = merged.assignment[b];
            mark(part.band[b], static_cast<int>(slot) + 1);
            const auto& src = t.patch_ids[part.band[b]];
            ids[slot].insert(ids[slot].end(), src.begin(), src.end());
        }
        for (std::size_t slot = 0; slot < centers.size(); ++slot) {
            std::copy(merged.merged.row(slot).begin(), merged.merged.row(slot).end(),
                      r.tokens.row(1 + counts.n_untouched + slot).begin());
            std::sort(ids[slot].begin(), ids[slot].end());
            r.patch_ids.push_back(std::move(ids[slot]));
        }
    }
    return out;
}

CondensationStageHook::CondensationStageHook(CondensationPlan plan, ScoringMode mode,
                                             const Reservoir* reservoir, std::size_t total_patches)
    : plan_(plan), mode_(mode), reservoir_(reservoir), total_patches_(total_patches) {
    plan_.validate();
}

std::size_t CondensationStageHook::expected_patches(int, std::size_t n_in) const {
    return plan_.stage(n_in).n_final;
}

TokenMatrix CondensationStageHook::condense(const TokenMatrix& post_attention,
                                            const BlockContext& ctx) {
    const StageCounts counts = plan_.stage(post_attention.patch_count());
    std::vector<double> rank;
    std::optional<std::size_t> anchor_class;
    if (!counts.skipped()) {
        if (mode_ == ScoringMode::baseline_attention) {
            const Vector s = baseline_scores(ctx.trace);
            rank.reserve(s.size());
            for (float v : s) rank.push_back(-static_cast<double>(v));
        } else {
            std::optional<Vector> anchor;
            if (reservoir_ != nullptr) {
                if (auto sel = reservoir_->select_anchor_class(ctx.trace.cls_input, ctx.block_id)) {
                    anchor_class = sel->class_id;
                    anchor = std::move(sel->anchor);
                }
            }
            rank = cross_head_rank(augmented_scores(ctx.trace, anchor, ctx.weights,
                                                    ctx.config.heads, ctx.config.ln_eps));
        }
    } else {
        rank.assign(counts.n_in, 0.0);
    }
    CondenseResult r = tca::condense(post_attention, rank, counts, total_patches_);
    r.record.block_id = ctx.block_id;
    r.record.anchor_class = anchor_class;
    stages_.push_back(std::move(r.record));
    return std::move(r.tokens);
}

}  // namespace tca
