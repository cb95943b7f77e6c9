#pragma once

// Analytic multiply-accumulate count of the visual tower, one MAC = one
// FLOP. Layernorm, softmax and GELU are not counted.

#include <cstdint>
#include <span>
#include <vector>

#include "tca/condensation.hpp"
#include "tca/encoder.hpp"

namespace tca {

struct BlockTokens {
    std::size_t attention_tokens = 0;  // incl. cls
    std::size_t mlp_tokens = 0;        // incl. cls
    std::size_t scored_keys = 0;       // patches scored with the anchor row
};

struct FlopsBreakdown {
    std::uint64_t patch_embed = 0;
    std::uint64_t attention = 0;
    std::uint64_t mlp = 0;
    std::uint64_t anchor_scoring = 0;

    std::uint64_t total() const { return patch_embed + attention + mlp + anchor_scoring; }
};

FlopsBreakdown flops_for_blocks(const EncoderConfig& config, std::span<const BlockTokens> blocks);

// Token counts per block when every condensation block applies `plan`.
std::vector<BlockTokens> planned_block_tokens(const EncoderConfig& config,
                                              const CondensationPlan& plan, bool anchor_scoring);

FlopsBreakdown flops_estimate(const EncoderConfig& config, const CondensationPlan& plan,
                              bool anchor_scoring = true);

FlopsBreakdown vanilla_flops(const EncoderConfig& config);

}  // namespace tca
