#include <gtest/gtest.h>

#include <cmath>
#include <memory>

#include "generators.hpp"
#include "tca/errors.hpp"
#include "tca/flops.hpp"
#include "tca/pipeline.hpp"
#include "tca/toy_model.hpp"

using namespace tca;

namespace {

// Hand expansion of the cost model for one uniform block.
double block_cost(double attn_m, double mlp_m, double d) {
    return 4 * attn_m * d * d + 2 * attn_m * attn_m * d + 8 * mlp_m * d * d;
}

struct Toy {
    std::shared_ptr<const EncoderWeights> weights;
    TextEmbeddings text;
    Dataset data;
};

Toy make_toy(std::size_t samples, std::uint64_t seed) {
    ToyGeometry g;
    return Toy{std::make_shared<const EncoderWeights>(make_toy_encoder(g, seed)), make_toy_text(3, g.embed_dim, seed),
               make_toy_dataset(samples, g.image_side, 3, seed)};
}

RunConfig toy_config(RunMode mode) {
    RunConfig c;
    c.mode = mode;
    c.condense_blocks = {2, 3};
    return c;
}

std::vector<SampleResult> collect(const Toy& toy, const RunConfig& config, RunSummary* summary = nullptr) {
    std::vector<SampleResult> out;
    auto s = run_stream(toy.data, toy.weights, toy.text, config, [&](const SampleResult& r) { out.push_back(r); });
    if (summary) *summary = s;
    return out;
}

}  // namespace

TEST(Flops, VanillaVitB16MatchesHandExpansion) {
    const auto c = EncoderConfig::vit_b16();
    const double expected = 12 * block_cost(197, 197, 768) + 196.0 * 768 * 768;
    EXPECT_EQ(static_cast<double>(vanilla_flops(c).total()), expected);
    EXPECT_NEAR(expected / 17.59e9, 1.0, 0.02);
}

TEST(Flops, CondensedVitB16MatchesHandExpansion) {
    const auto c = EncoderConfig::vit_b16();
    // 196 -> 176 -> 158 -> 142 at blocks 4, 7 and 10.
    const double d = 768;
    double expected = 196.0 * d * d;
    const double tokens_in[] = {197, 197, 197, 197, 177, 177, 177, 159, 159, 159, 143, 143};
    const double tokens_out[] = {197, 197, 197, 177, 177, 177, 159, 159, 159, 143, 143, 143};
    for (int l = 0; l < 12; ++l) expected += block_cost(tokens_in[l], tokens_out[l], d);
    expected += 2 * d * (196 + 176 + 158);
    EXPECT_EQ(static_cast<double>(flops_estimate(c, CondensationPlan{0.9, 2.0, 2}).total()), expected);
}

TEST(Flops, RatiosAtPaperRates) {
    const auto c = EncoderConfig::vit_b16();
    const double vanilla = static_cast<double>(vanilla_flops(c).total());
    const double r9 = flops_estimate(c, CondensationPlan{0.9, 2.0, 2}).total() / vanilla;
    const double r7 = flops_estimate(c, CondensationPlan{0.7, 2.0, 2}).total() / vanilla;
    EXPECT_GE(r9, 0.86);
    EXPECT_LE(r9, 0.89);
    EXPECT_GE(r7, 0.64);
    EXPECT_LE(r7, 0.69);
    EXPECT_EQ(flops_estimate(c, CondensationPlan{1.0, 2.0, 2}).total(), vanilla_flops(c).total());
}

TEST(Flops, StrictlyDecreasingInRate) {
    const auto c = EncoderConfig::vit_b16();
    std::uint64_t prev = 0;
    for (int i = 1; i <= 100; ++i) {
        const double rate = i / 100.0;
        const auto f = flops_estimate(c, CondensationPlan{rate, 2.0, 2}).total();
        if (i > 1) EXPECT_GT(f, prev) << rate;
        prev = f;
    }
}

TEST(Pipeline, VanillaMatchesZeroShot) {
    auto toy = make_toy(12, 1);
    auto results = collect(toy, toy_config(RunMode::vanilla));
    for (std::size_t i = 0; i < results.size(); ++i) {
        auto z = encode(toy.data.pixels(i), *toy.weights).z;
        EXPECT_EQ(results[i].predicted, argmax(zero_shot_probs(z, toy.text.embeddings, 0.01)));
        EXPECT_TRUE(results[i].stages.empty());
        EXPECT_FALSE(results[i].admission);
        EXPECT_EQ(results[i].flops, vanilla_flops(toy.weights->config).total());
    }
}

TEST(Pipeline, IdentityConfigurationMatchesVanilla) {
    auto toy = make_toy(40, 2);
    auto vanilla = collect(toy, toy_config(RunMode::vanilla));
    auto cfg = toy_config(RunMode::tca);
    cfg.plan.keep_rate = 1.0;
    cfg.correction.lambda = 0.0;
    auto tca = collect(toy, cfg);
    ASSERT_EQ(tca.size(), vanilla.size());
    for (std::size_t i = 0; i < tca.size(); ++i) EXPECT_EQ(tca[i].predicted, vanilla[i].predicted);
}

TEST(Pipeline, ColdStartLeavesPredictionUncorrected) {
    auto toy = make_toy(1, 3);
    TcaPipeline p(toy.weights, toy.text, toy_config(RunMode::tca));
    auto r = p.process_sample(toy.data.pixels(0), toy.data.label(0));
    EXPECT_EQ(r.predicted, r.base_predicted);
    ASSERT_EQ(r.stages.size(), 2u);
    for (const auto& s : r.stages) EXPECT_FALSE(s.anchor_class);
    ASSERT_TRUE(r.admission);
    EXPECT_TRUE(r.admission->admitted());
    EXPECT_EQ(p.reservoir().total_size(), 1u);
    EXPECT_TRUE(r.alignment);
}

TEST(Pipeline, StageCountsFollowTheRate) {
    auto toy = make_toy(10, 4);
    for (double rate : {0.3, 0.5, 0.7, 0.9}) {
        auto cfg = toy_config(RunMode::tca);
        cfg.plan.keep_rate = rate;
        for (const auto& r : collect(toy, cfg)) {
            ASSERT_FALSE(r.error);
            for (const auto& s : r.stages) {
                EXPECT_EQ(s.counts.n_final, std::max<std::size_t>(1, round_half_up(rate * s.counts.n_in)));
            }
        }
    }
}

TEST(Pipeline, BaselineModePrunesOnly) {
    auto toy = make_toy(8, 5);
    for (const auto& r : collect(toy, toy_config(RunMode::baseline_evit))) {
        ASSERT_EQ(r.stages.size(), 2u);
        for (const auto& s : r.stages) {
            for (int m : s.mask) EXPECT_LE(m, 0);
        }
        EXPECT_FALSE(r.admission);
    }
}

TEST(Pipeline, RerunIsDeterministic) {
    auto toy = make_toy(30, 6);
    RunSummary a, b;
    auto ra = collect(toy, toy_config(RunMode::tca), &a);
    auto rb = collect(toy, toy_config(RunMode::tca), &b);
    ASSERT_EQ(ra.size(), rb.size());
    for (std::size_t i = 0; i < ra.size(); ++i) {
        EXPECT_EQ(ra[i].predicted, rb[i].predicted);
        EXPECT_EQ(ra[i].entropy_key, rb[i].entropy_key);
        EXPECT_EQ(ra[i].alignment, rb[i].alignment);
        ASSERT_EQ(ra[i].stages.size(), rb[i].stages.size());
        for (std::size_t s = 0; s < ra[i].stages.size(); ++s) EXPECT_EQ(ra[i].stages[s].mask, rb[i].stages[s].mask);
    }
    EXPECT_EQ(a.flops_total, b.flops_total);
    EXPECT_EQ(a.accuracy, b.accuracy);
}

TEST(Pipeline, EmptyDataset) {
    auto toy = make_toy(0, 7);
    auto s = run_stream(toy.data, toy.weights, toy.text, toy_config(RunMode::tca));
    EXPECT_EQ(s.samples, 0u);
    EXPECT_FALSE(s.accuracy);
}

TEST(Pipeline, SummaryAggregates) {
    auto toy = make_toy(20, 8);
    RunSummary s;
    auto results = collect(toy, toy_config(RunMode::tca), &s);
    std::size_t correct = 0, admitted = 0;
    for (const auto& r : results) {
        correct += r.correct();
        admitted += r.admission && r.admission->admitted();
    }
    EXPECT_EQ(s.samples, 20u);
    EXPECT_EQ(s.correct, correct);
    ASSERT_TRUE(s.accuracy);
    EXPECT_DOUBLE_EQ(*s.accuracy, correct / 20.0);
    std::size_t total_admissions = 0;
    for (auto a : s.admissions) total_admissions += a;
    EXPECT_EQ(total_admissions, admitted);
    for (auto size : s.reservoir_sizes) EXPECT_LE(size, 3u);
    EXPECT_LT(s.flops_ratio, 1.0);
}

TEST(Pipeline, SampleErrorsAreRecorded) {
    auto toy = make_toy(1, 9);
    TcaPipeline p(toy.weights, toy.text, toy_config(RunMode::tca));
    auto r = p.process_sample(Vector(7, 0.0f));
    EXPECT_TRUE(r.error);
    EXPECT_EQ(p.summary().errors, 1u);
}

TEST(Pipeline, RejectsMismatchedInputs) {
    auto toy = make_toy(1, 10);
    auto bad_text = make_toy_text(3, 16, 10);
    EXPECT_THROW(TcaPipeline(toy.weights, bad_text, toy_config(RunMode::tca)), InputError);
    auto cfg = toy_config(RunMode::tca);
    cfg.plan.keep_rate = 0.0;
    EXPECT_THROW(TcaPipeline(toy.weights, toy.text, cfg), InputError);
    cfg = toy_config(RunMode::tca);
    cfg.condense_blocks = {9};
    EXPECT_THROW(TcaPipeline(toy.weights, toy.text, cfg), InputError);
}

TEST(Pipeline, WarmStartContinuesSequence) {
    auto toy = make_toy(6, 11);
    TcaPipeline first(toy.weights, toy.text, toy_config(RunMode::tca));
    for (std::size_t i = 0; i < 6; ++i) first.process_sample(toy.data.pixels(i), toy.data.label(i));
    TensorArchive snap;
    first.reservoir().to_archive(snap);
    auto warm = Reservoir::from_archive(snap, 3, 3, ReservoirStrategy::diversity, 4, 64);
    TcaPipeline second(toy.weights, toy.text, toy_config(RunMode::tca), warm);
    auto r = second.process_sample(toy.data.pixels(0), toy.data.label(0));
    EXPECT_TRUE(r.stages[0].anchor_class);
}

TEST(ClassTrace, Slope) {
    ClassTrace t{{0, 1, 2, 3}, {1, 3, 5, 7}};
    EXPECT_DOUBLE_EQ(t.slope(), 2.0);
    EXPECT_EQ((ClassTrace{{4}, {0.5}}).slope(), 0.0);
}

TEST(LeaveOneOut, ReturnsOneValuePerPatch) {
    auto toy = make_toy(1, 12);
    auto d = leave_one_out_influence(toy.data.pixels(0), *toy.weights, toy.text, 0.01);
    EXPECT_EQ(d.size(), 16u);
    for (double v : d) EXPECT_TRUE(std::isfinite(v));
}

TEST(LeaveOneOut, RedundantPatchHasNoInfluence) {
    // An 8x8 grid of 4x4 patches with zero positional embedding; every
    // patch after the first is a copy of it, so dropping any one copy only
    // shifts its share of attention between identical tokens.
    ToyGeometry g;
    g.image_side = 32;
    g.patch_side = 4;
    auto w = make_toy_encoder(g, 13);
    w.pos_embed = Matrix(w.pos_embed.rows(), w.pos_embed.cols(), 0.0f);
    gen::Rng rng(13);
    Vector img(w.config.pixel_count());
    const auto colors = gen::normal_vector(rng, 12);
    for (std::size_t ch = 0; ch < 3; ++ch) {
        for (std::size_t y = 0; y < 32; ++y) {
            for (std::size_t x = 0; x < 32; ++x) img[ch * 1024 + y * 32 + x] = colors[ch * 4 + (y % 4) / 2 * 2 + (x % 4) / 2];
        }
    }
    auto text = make_toy_text(3, g.embed_dim, 13);
    auto d = leave_one_out_influence(img, w, text, 0.01, 0);
    ASSERT_EQ(d.size(), 64u);
    double worst = 0;
    for (double v : d) worst = std::max(worst, std::abs(v));
    EXPECT_LT(worst, 1e-3);
}
