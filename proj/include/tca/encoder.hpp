#pragma once

// Pre-norm ViT visual tower (CLIP layout) with a token-reduction hook
// between the attention and MLP sub-layers of selected blocks.

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "tca/archive.hpp"
#include "tca/tensor.hpp"

namespace tca {

struct EncoderConfig {
    std::size_t image_side = 224;
    std::size_t patch_side = 16;
    std::size_t layers = 12;
    std::size_t heads = 12;
    std::size_t width = 768;  // D_v
    double mlp_ratio = 4.0;
    std::size_t embed_dim = 512;  // D
    std::vector<int> condense_blocks{4, 7, 10};  // 1-indexed
    double ln_eps = 1e-5;

    std::size_t grid() const { return image_side / patch_side; }
    std::size_t num_patches() const { return grid() * grid(); }
    std::size_t head_dim() const { return width / heads; }
    std::size_t mlp_width() const;
    std::size_t patch_dim() const { return 3 * patch_side * patch_side; }
    std::size_t pixel_count() const { return 3 * image_side * image_side; }
    bool condenses_at(int block_id) const;

    // Throws InputError describing the first broken invariant.
    void validate() const;

    static EncoderConfig vit_b16();
};

struct LayerNormParams {
    Vector gain;
    Vector bias;
};

struct BlockWeights {
    LayerNormParams ln1;
    LayerNormParams ln2;
    Matrix wq, wk, wv, wo;  // D_v x D_v, out x in
    Vector bq, bk, bv, bo;  // optional, empty when absent
    Matrix mlp_in;          // mlp_width x D_v
    Vector mlp_in_b;
    Matrix mlp_out;  // D_v x mlp_width
    Vector mlp_out_b;
};

struct EncoderWeights {
    EncoderConfig config;
    Matrix patch_embed;  // D_v x 3*patch^2
    Matrix pos_embed;    // (N+1) x D_v
    Vector cls_init;     // D_v
    std::optional<LayerNormParams> ln_pre;
    std::vector<BlockWeights> blocks;
    LayerNormParams ln_post;
    Matrix proj;  // D x D_v

    // Shapes must agree with config and every value must be finite.
    void validate() const;

    // Geometry is inferred from tensor shapes. The head count comes from
    // "visual/heads" when present, otherwise width / 64.
    static EncoderWeights from_archive(const TensorArchive& archive,
                                       std::vector<int> condense_blocks = {4, 7, 10});
    void to_archive(TensorArchive& archive) const;
};

// Position 0 is the anchor-position (<cls>) token. patch_ids[i] lists the
// original patch indices folded into live patch token i (row i + 1).
struct TokenMatrix {
    Matrix tokens;
    std::vector<std::vector<int>> patch_ids;

    std::size_t patch_count() const { return tokens.rows() == 0 ? 0 : tokens.rows() - 1; }
    void check_consistent() const;
};

struct BlockTrace {
    int block_id = 0;
    Matrix cls_logits;     // H x n, pre-softmax logits of the cls query row
    Matrix cls_attention;  // H x n, the same row after the softmax over all keys
    Matrix keys;        // (n+1) x D_v, projected keys of the live tokens
    Vector cls_input;   // cls token entering the block
    Vector cls_output;  // cls token leaving the block (post residual)
};

struct BlockContext {
    int block_id;
    const EncoderConfig& config;
    const BlockWeights& weights;
    const BlockTrace& trace;
};

// Token reduction run inside a block. The encoder checks the result against
// expected_patches() and raises ContractError on a mismatch.
class CondensationHook {
public:
    virtual ~CondensationHook() = default;
    virtual std::size_t expected_patches(int block_id, std::size_t n_in) const = 0;
    virtual TokenMatrix condense(const TokenMatrix& post_attention, const BlockContext& ctx) = 0;
};

class IdentityHook final : public CondensationHook {
public:
    std::size_t expected_patches(int, std::size_t n_in) const override { return n_in; }
    TokenMatrix condense(const TokenMatrix& t, const BlockContext&) override { return t; }
};

struct BlockOutput {
    TokenMatrix tokens;
    BlockTrace trace;
};

struct EncodeResult {
    Vector z;            // D
    Matrix anchor_stack; // L x D_v, cls output of every block
    std::vector<BlockTrace> traces;
};

TokenMatrix embed(std::span<const float> pixels, const EncoderWeights& w);

// Projected keys for a token matrix under one block's weights.
Matrix block_keys(const Matrix& tokens, const BlockWeights& bw, double ln_eps);
// Projected query of a single token.
Vector block_query(std::span<const float> token, const BlockWeights& bw, double ln_eps);

BlockOutput forward_block(const TokenMatrix& input, int block_id, const EncoderWeights& w,
                          CondensationHook* hook = nullptr);

EncodeResult encode_tokens(TokenMatrix tokens, const EncoderWeights& w,
                           CondensationHook* hook = nullptr);
EncodeResult encode(std::span<const float> pixels, const EncoderWeights& w,
                    CondensationHook* hook = nullptr);

// Maps a residual-stream cls token into the joint embedding space.
Vector project_cls(std::span<const float> cls, const EncoderWeights& w);

// softmax_c(cos(z, t_c) / tau) over the rows of text_embeddings.
Vector zero_shot_probs(std::span<const float> z, const Matrix& text_embeddings, double tau);

}  // namespace tca
