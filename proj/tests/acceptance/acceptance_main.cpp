// One PASS/FAIL line per acceptance criterion. Exit status is the number of
// failures, capped at 1.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>
#include <set>
#include <string>
#include <vector>

#include "generators.hpp"
#include "oracles.hpp"
#include "synthetic_task.hpp"
#include "tca/condensation.hpp"
#include "tca/correction.hpp"
#include "tca/flops.hpp"
#include "tca/pipeline.hpp"
#include "tca/reservoir.hpp"
#include "tca/toy_model.hpp"

using namespace tca;

namespace {

struct Outcome {
    bool pass = true;
    std::string detail;
};

int failures = 0;

void report(const std::string& name, const std::function<Outcome()>& check) {
    Outcome o;
    try {
        o = check();
    } catch (const std::exception& e) {
        o = {false, std::string("exception: ") + e.what()};
    }
    if (!o.pass) ++failures;
    std::printf("%s %-24s %s\n", o.pass ? "PASS" : "FAIL", name.c_str(), o.detail.c_str());
    std::fflush(stdout);
}

std::string fmt(const char* f, double a) {
    char buf[64];
    std::snprintf(buf, sizeof buf, f, a);
    return buf;
}

std::vector<std::vector<float>> rows_of(const Matrix& m) {
    std::vector<std::vector<float>> out;
    for (std::size_t i = 0; i < m.rows(); ++i) out.push_back(m.row_vector(i));
    return out;
}

// ViT-B/16 counts against the published figures.
Outcome flops_claim() {
    const auto cfg = EncoderConfig::vit_b16();
    const double vanilla = static_cast<double>(vanilla_flops(cfg).total());
    CondensationPlan p90{0.9, 2.0, 2}, p70{0.7, 2.0, 2};
    const double r90 = static_cast<double>(flops_estimate(cfg, p90).total()) / vanilla;
    const double r70 = static_cast<double>(flops_estimate(cfg, p70).total()) / vanilla;
    const bool ok = std::abs(vanilla - 17.59e9) <= 0.02 * 17.59e9 && r90 >= 0.86 && r90 <= 0.89 &&
                    r70 >= 0.64 && r70 <= 0.69;
    return {ok, fmt("vanilla=%.4gG", vanilla / 1e9) + fmt(" ratio@0.9=%.4f", r90) +
                    fmt(" ratio@0.7=%.4f", r70) + " (tol 2%, [0.86,0.89], [0.64,0.69])"};
}

// R = 1, lambda = 0 must reproduce the zero-shot predictions, and the
// identity hook must leave the encoder bitwise unchanged.
Outcome identity() {
    ToyGeometry g;
    auto w = std::make_shared<const EncoderWeights>(make_toy_encoder(g, 11));
    const auto text = make_toy_text(5, g.embed_dim, 11);
    const auto data = make_toy_dataset(100, g.image_side, 5, 11);
    RunConfig vanilla;
    vanilla.mode = RunMode::vanilla;
    vanilla.condense_blocks = g.condense_blocks;
    RunConfig id = vanilla;
    id.mode = RunMode::tca;
    id.plan.keep_rate = 1.0;
    id.correction.lambda = 0.0;
    std::vector<std::size_t> a, b;
    run_stream(data, w, text, vanilla, [&](const SampleResult& r) { a.push_back(r.predicted); });
    run_stream(data, w, text, id, [&](const SampleResult& r) { b.push_back(r.predicted); });
    std::size_t diff = 0;
    for (std::size_t i = 0; i < a.size(); ++i) diff += a[i] != b[i];
    std::size_t bitwise = 0;
    for (std::size_t i = 0; i < data.size(); ++i) {
        const auto px = data.pixels(i);
        IdentityHook hook;
        const auto plain = encode(px, *w);
        const auto hooked = encode(px, *w, &hook);
        bitwise += plain.z != hooked.z || plain.anchor_stack != hooked.anchor_stack;
    }
    return {a.size() == 100 && diff == 0 && bitwise == 0,
            "samples=100 prediction_diffs=" + std::to_string(diff) +
                " hook_bitwise_diffs=" + std::to_string(bitwise)};
}

// Patch count after a stage equals round(R * n_in) (at least 1), and the
// partition covers every position exactly once.
Outcome token_count() {
    gen::Rng rng(101);
    std::size_t bad = 0;
    for (int trial = 0; trial < 1000; ++trial) {
        const auto n = gen::index(rng, 4, 300);
        const double r = gen::uniform(rng, 0.05, 1.0);
        CondensationPlan plan{r, gen::uniform(rng, 0.0, 5.0), gen::index(rng, 1, 6)};
        const auto counts = plan.stage(n);
        const auto expected = std::max<std::size_t>(1, static_cast<std::size_t>(std::floor(r * n + 0.5)));
        std::vector<double> rank(n);
        for (auto& x : rank) x = gen::uniform(rng, 1, 12);
        const auto part = partition(rank, counts);
        std::vector<int> seen(n, 0);
        for (const auto* s : {&part.untouched, &part.band, &part.pruned}) {
            for (auto i : *s) ++seen.at(i);
        }
        const bool exhaustive = std::all_of(seen.begin(), seen.end(), [](int v) { return v == 1; });
        TokenMatrix t;
        t.tokens = gen::normal_matrix(rng, n + 1, 8);
        for (std::size_t i = 0; i < n; ++i) t.patch_ids.push_back({static_cast<int>(i)});
        const auto out = condense(t, rank, counts, n);
        if (counts.n_final != expected || out.tokens.patch_count() != expected || !exhaustive) ++bad;
    }
    return {bad == 0, "trials=1000 violations=" + std::to_string(bad)};
}

Outcome kcenter_bound() {
    gen::Rng rng(202);
    double worst = 0.0;
    std::size_t bad = 0;
    for (int trial = 0; trial < 100; ++trial) {
        const auto n = gen::index(rng, 1, 10);
        const auto k = gen::index(rng, 1, 3);
        const auto pts = gen::normal_matrix(rng, n, 64);
        std::vector<double> rank(n);
        for (auto& x : rank) x = gen::uniform(rng, 1, 10);
        const auto centers = kcenter_greedy(pts, k, rank);
        const auto rows = rows_of(pts);
        const double greedy = oracle::radius_of(rows, centers);
        const double best = oracle::brute_force_kcenter_radius(rows, k);
        if (best > 0) worst = std::max(worst, greedy / best);
        if (greedy > 2.0 * best + 1e-9) ++bad;
    }
    return {bad == 0, "sets=100 width=64 worst_ratio=" + fmt("%.3f", worst) + " bound=2"};
}

Outcome rank_invariance() {
    gen::Rng rng(303);
    std::size_t bad = 0;
    for (int trial = 0; trial < 1000; ++trial) {
        const auto h = gen::index(rng, 1, 12), n = gen::index(rng, 1, 64);
        auto scores = gen::normal_matrix(rng, h, n);
        const auto base = cross_head_rank(scores);
        const auto head = gen::index(rng, 0, h - 1);
        const double a = gen::uniform(rng, 0.1, 5), b = gen::uniform(rng, -3, 3);
        for (float& x : scores.row(head)) {
            x = trial % 2 ? static_cast<float>(a * x + b) : static_cast<float>(std::exp(x / 2.0));
        }
        bad += cross_head_rank(scores) != base;
    }
    Matrix tied(1, 3, 2.0f);
    const bool ties = cross_head_rank(tied) == std::vector<double>{1.0, 2.0, 3.0};
    return {bad == 0 && ties, "trials=1000 violations=" + std::to_string(bad) +
                                  " tie_example=" + (ties ? "ok" : "wrong")};
}

Outcome reservoir_oracle() {
    std::string detail;
    bool ok = true;
    for (auto s : {ReservoirStrategy::fifo, ReservoirStrategy::uncertainty, ReservoirStrategy::similarity,
                   ReservoirStrategy::diversity}) {
        gen::Rng rng(404 + static_cast<std::uint64_t>(s));
        const std::size_t classes = 4, capacity = 3, layers = 3, width = 8;
        Reservoir r(classes, capacity, s, layers, width);
        oracle::ReservoirSimulator sim(classes, capacity, s);
        std::size_t mismatches = 0, overflows = 0;
        for (std::uint64_t step = 0; step < 1000; ++step) {
            const auto top = gen::index(rng, 0, classes - 1);
            const auto c = gen::index(rng, 0, 9) < 8 ? top : gen::index(rng, 0, classes - 1);
            const auto probs = gen::probs_with_argmax(rng, classes, top);
            const auto stack = gen::normal_matrix(rng, layers, width);
            const double key = class_entropy(probs[c]);
            const bool expected = sim.offer(c, top, key, step, stack.row_vector(layers - 1));
            const bool admitted = r.try_admit(c, probs, AnchorRecord{key, stack, step}).admitted();
            mismatches += admitted != expected;
            for (std::size_t k = 0; k < classes; ++k) {
                std::vector<std::uint64_t> seqs;
                for (const auto& rec : r.buffer(k)) seqs.push_back(rec.sample_seq);
                std::sort(seqs.begin(), seqs.end());
                mismatches += seqs != sim.seqs(k);
                overflows += r.buffer(k).size() > capacity;
            }
        }
        ok = ok && mismatches == 0 && overflows == 0;
        detail += to_string(s) + "=" + std::to_string(mismatches) + "/" + std::to_string(overflows) + " ";
    }
    return {ok, "steps=1000 mismatches/overflows " + detail};
}

Outcome correction_algebra() {
    gen::Rng rng(505);
    std::size_t bad = 0;
    double uniform_err = 0.0;
    for (int trial = 0; trial < 200; ++trial) {
        const std::size_t classes = gen::index(rng, 2, 6), layers = gen::index(rng, 1, 12), width = 6;
        const auto p = gen::probs_with_argmax(rng, classes, gen::index(rng, 0, classes - 1));
        const auto tok = gen::normal_vector(rng, classes);
        if (correct(p, tok, 0.0) != p) ++bad;

        const double beta = std::pow(10.0, gen::uniform(rng, -3, 6));
        const auto dir = trial % 2 ? LayerEmphasis::deep : LayerEmphasis::shallow;
        const auto w = layer_weights(beta, layers, dir);
        double sum = 0.0;
        for (float x : w) sum += x;
        if (std::abs(sum - 1.0) > 1e-6) ++bad;

        Reservoir r(classes, 3, ReservoirStrategy::fifo, layers, width);
        for (int i = 0; i < 8; ++i) {
            const auto c = gen::index(rng, 0, classes - 1);
            const auto probs = gen::probs_with_argmax(rng, classes, c);
            r.try_admit(c, probs, AnchorRecord{0.1, gen::normal_matrix(rng, layers, width), std::uint64_t(i)});
        }
        const auto pt = token_level_probs(gen::normal_matrix(rng, layers, width), r, w);
        for (float x : pt) bad += !(x >= -1.0f && x <= 1.0f);
    }
    for (std::size_t layers : {1, 4, 12, 24}) {
        for (auto dir : {LayerEmphasis::shallow, LayerEmphasis::deep}) {
            for (float x : layer_weights(1e6, layers, dir)) {
                uniform_err = std::max(uniform_err, std::abs(x - 1.0 / static_cast<double>(layers)));
            }
        }
    }
    return {bad == 0 && uniform_err <= 1e-6,
            "trials=200 violations=" + std::to_string(bad) + fmt(" uniform_err@1e6=%.2e", uniform_err)};
}

// Vanilla is the oracle on a stream built so that distractor patches pull
// the final embedding toward one class while shallow anchors stay clean.
Outcome synthetic_adaptation() {
    const auto task = synthetic::make_task({});
    RunConfig vanilla;
    vanilla.mode = RunMode::vanilla;
    const auto base = run_stream(task.data, task.weights, task.text, vanilla);
    const auto adapted = run_stream(task.data, task.weights, task.text, RunConfig{});
    const double acc_v = base.accuracy.value_or(0), acc_t = adapted.accuracy.value_or(0);
    const auto& trace = adapted.alignment.at(task.majority_class);
    const double slope = trace.slope();
    return {acc_t >= acc_v && slope >= 0.0 && trace.values.size() >= 2,
            fmt("samples=%.0f", double(task.data.size())) + fmt(" corrupted=%.0f", double(task.corrupted)) +
                fmt(" acc_vanilla=%.4f", acc_v) + fmt(" acc_tca=%.4f", acc_t) +
                " majority_class=" + std::to_string(task.majority_class) +
                fmt(" alignment_points=%.0f", double(trace.values.size())) + fmt(" slope=%.3e", slope)};
}

}  // namespace

int main() {
    report("flops", flops_claim);
    report("identity", identity);
    report("token-count", token_count);
    report("kcenter-2x", kcenter_bound);
    report("rank-invariance", rank_invariance);
    report("reservoir-oracle", reservoir_oracle);
    report("correction-algebra", correction_algebra);
    report("synthetic-adaptation", synthetic_adaptation);
    std::printf("%d failure(s)\n", failures);
    return failures == 0 ? 0 : 1;
}
