#include "tca/flops.hpp"

namespace tca {

FlopsBreakdown flops_for_blocks(const EncoderConfig& config, std::span<const BlockTokens> blocks) {
    const std::uint64_t d = config.width;
    const std::uint64_t hidden = config.mlp_width();
    FlopsBreakdown f;
    f.patch_embed = static_cast<std::uint64_t>(config.num_patches()) * d * config.patch_dim();
    for (const auto& b : blocks) {
        const std::uint64_t m = b.attention_tokens;
        const std::uint64_t m2 = b.mlp_tokens;
        f.attention += 4 * m * d * d + 2 * m * m * d;
        f.mlp += 2 * m2 * d * hidden;
        f.anchor_scoring += 2 * d * b.scored_keys;
    }
    return f;
}

std::vector<BlockTokens> planned_block_tokens(const EncoderConfig& config,
                                              const CondensationPlan& plan, bool anchor_scoring) {
    std::vector<BlockTokens> out;
    std::size_t n = config.num_patches();
    for (std::size_t l = 1; l <= config.layers; ++l) {
        BlockTokens b;
        b.attention_tokens = n + 1;
        if (config.condenses_at(static_cast<int>(l))) {
            const StageCounts s = plan.stage(n);
            if (!s.skipped()) {
                if (anchor_scoring) b.scored_keys = n;
                n = s.n_final;
            }
        }
        b.mlp_tokens = n + 1;
        out.push_back(b);
    }
    return out;
}

FlopsBreakdown flops_estimate(const EncoderConfig& config, const CondensationPlan& plan,
                              bool anchor_scoring) {
    const auto blocks = planned_block_tokens(config, plan, anchor_scoring);
    return flops_for_blocks(config, blocks);
}

FlopsBreakdown vanilla_flops(const EncoderConfig& config) {
    CondensationPlan identity;
    identity.keep_rate = 1.0;
    return flops_estimate(config, identity, false);
}

}  // namespace tca
