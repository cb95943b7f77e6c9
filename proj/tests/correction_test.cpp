#include <gtest/gtest.h>

#include <cmath>

#include "generators.hpp"
#include "tca/correction.hpp"
#include "tca/errors.hpp"
#include "tca/reservoir.hpp"

using namespace tca;

namespace {

double sum(const Vector& v) {
    double s = 0;
    for (float x : v) s += x;
    return s;
}

Matrix negated(Matrix m) {
    for (float& x : m.data()) x = -x;
    return m;
}

}  // namespace

TEST(LayerWeights, LargeBetaIsUniform) {
    for (auto dir : {LayerEmphasis::shallow, LayerEmphasis::deep}) {
        for (float w : layer_weights(1e6, 12, dir)) EXPECT_NEAR(w, 1.0 / 12, 1e-6);
    }
}

TEST(LayerWeights, SmallBetaCollapses) {
    auto deep = layer_weights(0.05, 12, LayerEmphasis::deep);
    EXPECT_GT(double(deep[11]), 1.0 - 1e-8);
    auto shallow = layer_weights(0.05, 12, LayerEmphasis::shallow);
    EXPECT_GT(double(shallow[0]), 1.0 - 1e-8);
}

TEST(LayerWeights, FlipReverses) {
    gen::Rng rng(1);
    for (int trial = 0; trial < 100; ++trial) {
        const double beta = std::exp(gen::uniform(rng, std::log(1e-3), std::log(1e6)));
        const auto layers = gen::index(rng, 1, 24);
        auto deep = layer_weights(beta, layers, LayerEmphasis::deep);
        auto shallow = layer_weights(beta, layers, LayerEmphasis::shallow);
        std::reverse(shallow.begin(), shallow.end());
        EXPECT_EQ(deep, shallow);
    }
}

TEST(LayerWeights, NormalizedAndMonotone) {
    gen::Rng rng(2);
    for (int trial = 0; trial < 500; ++trial) {
        const double beta = std::exp(gen::uniform(rng, std::log(1e-3), std::log(1e6)));
        const auto layers = gen::index(rng, 1, 48);
        auto deep = layer_weights(beta, layers, LayerEmphasis::deep);
        ASSERT_NEAR(sum(deep), 1.0, 1e-6);
        for (std::size_t l = 1; l < layers; ++l) {
            ASSERT_GE(deep[l], deep[l - 1]);
            ASSERT_GE(deep[l - 1], 0.0f);
        }
        auto shallow = layer_weights(beta, layers, LayerEmphasis::shallow);
        ASSERT_NEAR(sum(shallow), 1.0, 1e-6);
        for (std::size_t l = 1; l < layers; ++l) ASSERT_LE(shallow[l], shallow[l - 1]);
    }
}

TEST(LayerWeights, RejectsNonPositiveBeta) {
    EXPECT_THROW(layer_weights(0.0, 12, LayerEmphasis::deep), DomainError);
}

TEST(TokenLevelProbs, Examples) {
    gen::Rng rng(3);
    auto stack = gen::normal_matrix(rng, 5, 8);
    auto w = layer_weights(0.5, 5, LayerEmphasis::shallow);

    Reservoir empty(3, 1, ReservoirStrategy::fifo, 5, 8);
    EXPECT_EQ(token_level_probs(stack, empty, w), (Vector{0, 0, 0}));

    Reservoir r(3, 1, ReservoirStrategy::fifo, 5, 8);
    r.try_admit(0, Vector{0.8f, 0.1f, 0.1f}, AnchorRecord{0.1, stack, 0});
    r.try_admit(2, Vector{0.1f, 0.1f, 0.8f}, AnchorRecord{0.1, negated(stack), 1});
    auto p = token_level_probs(stack, r, w);
    EXPECT_NEAR(p[0], 1.0, 1e-6);
    EXPECT_EQ(p[1], 0.0f);
    EXPECT_NEAR(p[2], -1.0, 1e-6);
}

TEST(TokenLevelProbs, BoundedByOne) {
    gen::Rng rng(4);
    for (int trial = 0; trial < 200; ++trial) {
        const auto layers = gen::index(rng, 1, 6);
        Reservoir r(3, 3, ReservoirStrategy::fifo, layers, 5);
        for (std::uint64_t s = 0; s < 6; ++s) {
            const auto top = gen::index(rng, 0, 2);
            r.try_admit(top, gen::probs_with_argmax(rng, 3, top), AnchorRecord{0.1, gen::normal_matrix(rng, layers, 5), s});
        }
        // Every other trial probes with a stored stack itself.
        Matrix probe = gen::normal_matrix(rng, layers, 5);
        for (std::size_t c = 0; c < 3 && trial % 2 == 0; ++c) {
            if (!r.buffer(c).empty()) probe = r.buffer(c)[0].anchor_stack;
        }
        auto p = token_level_probs(probe, r, layer_weights(gen::uniform(rng, 1e-3, 10), layers, LayerEmphasis::deep));
        for (float v : p) {
            ASSERT_GE(v, -1.0f);
            ASSERT_LE(v, 1.0f);
        }
    }
}

TEST(Correct, Examples) {
    const Vector p{0.2f, 0.5f, 0.3f};
    EXPECT_EQ(correct(p, Vector{0.9f, -0.4f, 1.0f}, 0.0), p);

    const Vector uniform{1.0f / 3, 1.0f / 3, 1.0f / 3};
    auto c = correct(uniform, Vector{1, 0, 0}, 2.0);
    EXPECT_EQ(argmax(c), 0u);
    EXPECT_NEAR(c[0], 1.0 / 3 + 2.0, 1e-6);

    EXPECT_THROW(correct(p, Vector{1, 0}, 1.0), ShapeError);
}

TEST(Correct, ArgmaxIgnoresCommonShift) {
    gen::Rng rng(5);
    for (int trial = 0; trial < 300; ++trial) {
        const auto n = gen::index(rng, 2, 10);
        auto p = gen::normal_vector(rng, n);
        auto t = gen::normal_vector(rng, n);
        const double lambda = gen::uniform(rng, 0, 8);
        auto base = correct(p, t, lambda);
        Vector shifted = t;
        const float k = static_cast<float>(gen::uniform(rng, -1, 1));
        for (auto& x : shifted) x += k;
        EXPECT_EQ(argmax(correct(p, shifted, lambda)), argmax(base));
    }
}
