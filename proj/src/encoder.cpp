#include "tca/encoder.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "tca/errors.hpp"

namespace tca {

namespace {

std::string block_prefix(std::size_t i) { return "visual/blocks/" + std::to_string(i) + "/"; }

void expect_shape(const Matrix& m, std::size_t r, std::size_t c, const std::string& what) {
    if (m.rows() != r || m.cols() != c) {
        throw ShapeError(what + " is " + std::to_string(m.rows()) + "x" + std::to_string(m.cols()) +
                         ", expected " + std::to_string(r) + "x" + std::to_string(c));
    }
}

void expect_len(const Vector& v, std::size_t n, const std::string& what, bool optional = false) {
    if (optional && v.empty()) return;
    if (v.size() != n) {
        throw ShapeError(what + " has " + std::to_string(v.size()) + " values, expected " +
                         std::to_string(n));
    }
}

void expect_finite(std::span<const float> v, const std::string& what) {
    if (!all_finite(v)) throw InputError(what + " contains non-finite values");
}

Vector optional_vector(const TensorArchive& a, const std::string& name) {
    return a.contains(name) ? a.vector(name) : Vector{};
}

LayerNormParams load_ln(const TensorArchive& a, const std::string& stem) {
    return {a.vector(stem + ".g"), a.vector(stem + ".b")};
}

void store_ln(TensorArchive& a, const std::string& stem, const LayerNormParams& p) {
    a.put_vector(stem + ".g", p.gain);
    a.put_vector(stem + ".b", p.bias);
}

// Multi-head attention over all rows; returns the concatenated head outputs
// and fills the cls-row logits of the trace.
Matrix attend(const Matrix& q, const Matrix& k, const Matrix& v, std::size_t heads,
              Matrix& cls_logits, Matrix& cls_attention) {
    const std::size_t m = q.rows();
    const std::size_t width = q.cols();
    const std::size_t dh = width / heads;
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
    Matrix out(m, width);
    cls_logits = Matrix(heads, m - 1);
    cls_attention = Matrix(heads, m - 1);
    const std::ptrdiff_t jobs = static_cast<std::ptrdiff_t>(heads * m);
#pragma omp parallel for schedule(static) if (m * m * width > (1u << 18))
    for (std::ptrdiff_t job = 0; job < jobs; ++job) {
        const std::size_t h = static_cast<std::size_t>(job) / m;
        const std::size_t i = static_cast<std::size_t>(job) % m;
        const std::size_t off = h * dh;
        std::vector<float> logits(m);
        for (std::size_t j = 0; j < m; ++j) {
            double acc = 0.0;
            for (std::size_t d = 0; d < dh; ++d) {
                acc += static_cast<double>(q(i, off + d)) * k(j, off + d);
            }
            logits[j] = static_cast<float>(acc * scale);
        }
        if (i == 0) {
            for (std::size_t j = 1; j < m; ++j) cls_logits(h, j - 1) = logits[j];
        }
        const Vector a = softmax(logits);
        if (i == 0) {
            for (std::size_t j = 1; j < m; ++j) cls_attention(h, j - 1) = a[j];
        }
        for (std::size_t d = 0; d < dh; ++d) {
            double acc = 0.0;
            for (std::size_t j = 0; j < m; ++j) acc += static_cast<double>(a[j]) * v(j, off + d);
            out(i, off + d) = static_cast<float>(acc);
        }
    }
    return out;
}

void add_inplace(Matrix& x, const Matrix& y) {
    auto& xd = x.data();
    const auto& yd = y.data();
    for (std::size_t i = 0; i < xd.size(); ++i) xd[i] += yd[i];
}

}  // namespace

std::size_t EncoderConfig::mlp_width() const {
    return static_cast<std::size_t>(std::llround(mlp_ratio * static_cast<double>(width)));
}

bool EncoderConfig::condenses_at(int block_id) const {
    return std::find(condense_blocks.begin(), condense_blocks.end(), block_id) !=
           condense_blocks.end();
}

void EncoderConfig::validate() const {
    if (patch_side == 0 || image_side == 0 || image_side % patch_side != 0) {
        throw InputError("image side " + std::to_string(image_side) +
                         " is not divisible by patch side " + std::to_string(patch_side));
    }
    if (heads == 0 || width == 0 || width % heads != 0) {
        throw InputError("width " + std::to_string(width) + " is not divisible by " +
                         std::to_string(heads) + " heads");
    }
    if (layers == 0) throw InputError("encoder needs at least one block");
    if (!(mlp_ratio > 0.0)) throw InputError("mlp ratio must be positive");
    for (std::size_t i = 0; i < condense_blocks.size(); ++i) {
        const int b = condense_blocks[i];
        if (b < 1 || static_cast<std::size_t>(b) > layers) {
            throw InputError("condensation block " + std::to_string(b) + " outside [1, " +
                             std::to_string(layers) + "]");
        }
        if (i > 0 && b <= condense_blocks[i - 1]) {
            throw InputError("condensation blocks must be strictly increasing");
        }
    }
}

EncoderConfig EncoderConfig::vit_b16() { return EncoderConfig{}; }

void EncoderWeights::validate() const {
    const auto& c = config;
    c.validate();
    const std::size_t d = c.width;
    expect_shape(patch_embed, d, c.patch_dim(), "patch_embed");
    expect_shape(pos_embed, c.num_patches() + 1, d, "pos_embed");
    expect_len(cls_init, d, "cls");
    if (ln_pre) {
        expect_len(ln_pre->gain, d, "ln_pre.g");
        expect_len(ln_pre->bias, d, "ln_pre.b");
    }
    if (blocks.size() != c.layers) {
        throw ShapeError("expected " + std::to_string(c.layers) + " blocks, have " +
                         std::to_string(blocks.size()));
    }
    const std::size_t hidden = c.mlp_width();
    for (std::size_t i = 0; i < blocks.size(); ++i) {
        const auto& b = blocks[i];
        const std::string p = "block " + std::to_string(i) + " ";
        expect_len(b.ln1.gain, d, p + "ln1.g");
        expect_len(b.ln1.bias, d, p + "ln1.b");
        expect_len(b.ln2.gain, d, p + "ln2.g");
        expect_len(b.ln2.bias, d, p + "ln2.b");
        expect_shape(b.wq, d, d, p + "wq");
        expect_shape(b.wk, d, d, p + "wk");
        expect_shape(b.wv, d, d, p + "wv");
        expect_shape(b.wo, d, d, p + "wo");
        expect_len(b.bq, d, p + "bq", true);
        expect_len(b.bk, d, p + "bk", true);
        expect_len(b.bv, d, p + "bv", true);
        expect_len(b.bo, d, p + "bo", true);
        expect_shape(b.mlp_in, hidden, d, p + "mlp_in.w");
        expect_len(b.mlp_in_b, hidden, p + "mlp_in.b");
        expect_shape(b.mlp_out, d, hidden, p + "mlp_out.w");
        expect_len(b.mlp_out_b, d, p + "mlp_out.b");
        for (const Matrix* m : {&b.wq, &b.wk, &b.wv, &b.wo, &b.mlp_in, &b.mlp_out}) {
            expect_finite(m->data(), p + "weights");
        }
    }
    expect_len(ln_post.gain, d, "ln_post.g");
    expect_len(ln_post.bias, d, "ln_post.b");
    expect_shape(proj, c.embed_dim, d, "proj");
    expect_finite(patch_embed.data(), "patch_embed");
    expect_finite(pos_embed.data(), "pos_embed");
    expect_finite(proj.data(), "proj");
    expect_finite(cls_init, "cls");
}

EncoderWeights EncoderWeights::from_archive(const TensorArchive& a,
                                            std::vector<int> condense_blocks) {
    EncoderWeights w;
    w.patch_embed = a.matrix("visual/patch_embed");
    w.pos_embed = a.matrix("visual/pos_embed");
    w.cls_init = a.vector("visual/cls");
    w.proj = a.matrix("visual/proj");

    auto& c = w.config;
    c.width = w.patch_embed.rows();
    const auto patch_area = w.patch_embed.cols() / 3;
    c.patch_side = static_cast<std::size_t>(std::llround(std::sqrt(static_cast<double>(patch_area))));
    if (c.patch_side * c.patch_side * 3 != w.patch_embed.cols()) {
        throw ShapeError("patch_embed columns are not 3 * patch_side^2");
    }
    if (w.pos_embed.rows() < 2) throw ShapeError("pos_embed needs at least two rows");
    const auto n = w.pos_embed.rows() - 1;
    const auto grid = static_cast<std::size_t>(std::llround(std::sqrt(static_cast<double>(n))));
    if (grid * grid != n) throw ShapeError("pos_embed rows do not form a square patch grid");
    c.image_side = grid * c.patch_side;
    c.embed_dim = w.proj.rows();
    c.heads = a.contains("visual/heads") ? static_cast<std::size_t>(a.scalar_i64("visual/heads"))
                                          : c.width / 64;
    if (c.heads == 0) c.heads = 1;

    std::size_t layers = 0;
    while (a.contains(block_prefix(layers) + "wq")) ++layers;
    c.layers = layers;
    c.condense_blocks = std::move(condense_blocks);

    if (a.contains("visual/ln_pre.g")) w.ln_pre = load_ln(a, "visual/ln_pre");
    for (std::size_t i = 0; i < layers; ++i) {
        const std::string p = block_prefix(i);
        BlockWeights b;
        b.ln1 = load_ln(a, p + "ln1");
        b.ln2 = load_ln(a, p + "ln2");
        b.wq = a.matrix(p + "wq");
        b.wk = a.matrix(p + "wk");
        b.wv = a.matrix(p + "wv");
        b.wo = a.matrix(p + "wo");
        b.bq = optional_vector(a, p + "bq");
        b.bk = optional_vector(a, p + "bk");
        b.bv = optional_vector(a, p + "bv");
        b.bo = optional_vector(a, p + "bo");
        b.mlp_in = a.matrix(p + "mlp_in.w");
        b.mlp_in_b = a.vector(p + "mlp_in.b");
        b.mlp_out = a.matrix(p + "mlp_out.w");
        b.mlp_out_b = a.vector(p + "mlp_out.b");
        w.blocks.push_back(std::move(b));
    }
    if (!w.blocks.empty()) {
        c.mlp_ratio = static_cast<double>(w.blocks[0].mlp_in.rows()) / static_cast<double>(c.width);
    }
    w.ln_post = load_ln(a, "visual/ln_post");
    w.validate();
    return w;
}

void EncoderWeights::to_archive(TensorArchive& a) const {
    a.put_matrix("visual/patch_embed", patch_embed);
    a.put_matrix("visual/pos_embed", pos_embed);
    a.put_vector("visual/cls", cls_init);
    a.put_matrix("visual/proj", proj);
    a.put_scalar("visual/heads", static_cast<std::int64_t>(config.heads));
    if (ln_pre) store_ln(a, "visual/ln_pre", *ln_pre);
    store_ln(a, "visual/ln_post", ln_post);
    for (std::size_t i = 0; i < blocks.size(); ++i) {
        const std::string p = block_prefix(i);
        const auto& b = blocks[i];
        store_ln(a, p + "ln1", b.ln1);
        store_ln(a, p + "ln2", b.ln2);
        a.put_matrix(p + "wq", b.wq);
        a.put_matrix(p + "wk", b.wk);
        a.put_matrix(p + "wv", b.wv);
        a.put_matrix(p + "wo", b.wo);
        if (!b.bq.empty()) a.put_vector(p + "bq", b.bq);
        if (!b.bk.empty()) a.put_vector(p + "bk", b.bk);
        if (!b.bv.empty()) a.put_vector(p + "bv", b.bv);
        if (!b.bo.empty()) a.put_vector(p + "bo", b.bo);
        a.put_matrix(p + "mlp_in.w", b.mlp_in);
        a.put_vector(p + "mlp_in.b", b.mlp_in_b);
        a.put_matrix(p + "mlp_out.w", b.mlp_out);
        a.put_vector(p + "mlp_out.b", b.mlp_out_b);
    }
}

void TokenMatrix::check_consistent() const {
    if (tokens.rows() < 2) throw ContractError("token matrix needs the cls token and one patch");
    if (patch_ids.size() != tokens.rows() - 1) {
        throw ContractError("token matrix has " + std::to_string(tokens.rows() - 1) +
                            " patches but " + std::to_string(patch_ids.size()) + " id lists");
    }
}

TokenMatrix embed(std::span<const float> pixels, const EncoderWeights& w) {
    const auto& c = w.config;
    if (pixels.size() != c.pixel_count()) {
        throw InputError("image has " + std::to_string(pixels.size()) + " values, expected " +
                         std::to_string(c.pixel_count()));
    }
    const std::size_t grid = c.grid();
    const std::size_t p = c.patch_side;
    const std::size_t side = c.image_side;
    const std::size_t n = c.num_patches();

    // Unfold into rows of (channel, y, x) to match a conv kernel flattened
    // in that order.
    Matrix patches(n, c.patch_dim());
    for (std::size_t gy = 0; gy < grid; ++gy) {
        for (std::size_t gx = 0; gx < grid; ++gx) {
            auto row = patches.row(gy * grid + gx);
            std::size_t k = 0;
            for (std::size_t ch = 0; ch < 3; ++ch) {
                for (std::size_t y = 0; y < p; ++y) {
                    for (std::size_t x = 0; x < p; ++x) {
                        row[k++] = pixels[ch * side * side + (gy * p + y) * side + gx * p + x];
                    }
                }
            }
        }
    }
    const Matrix projected = linear(patches, w.patch_embed);

    TokenMatrix t;
    t.tokens = Matrix(n + 1, c.width);
    for (std::size_t j = 0; j < c.width; ++j) t.tokens(0, j) = w.cls_init[j] + w.pos_embed(0, j);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < c.width; ++j) {
            t.tokens(i + 1, j) = projected(i, j) + w.pos_embed(i + 1, j);
        }
        t.patch_ids.push_back({static_cast<int>(i)});
    }
    if (w.ln_pre) t.tokens = layernorm_rows(t.tokens, w.ln_pre->gain, w.ln_pre->bias, c.ln_eps);
    return t;
}

Matrix block_keys(const Matrix& tokens, const BlockWeights& bw, double ln_eps) {
    return linear(layernorm_rows(tokens, bw.ln1.gain, bw.ln1.bias, ln_eps), bw.wk, bw.bk);
}

Vector block_query(std::span<const float> token, const BlockWeights& bw, double ln_eps) {
    return linear(layernorm(token, bw.ln1.gain, bw.ln1.bias, ln_eps), bw.wq, bw.bq);
}

BlockOutput forward_block(const TokenMatrix& input, int block_id, const EncoderWeights& w,
                          CondensationHook* hook) {
    const auto& c = w.config;
    if (block_id < 1 || static_cast<std::size_t>(block_id) > w.blocks.size()) {
        throw InputError("block id " + std::to_string(block_id) + " out of range");
    }
    if (input.tokens.cols() != c.width) {
        throw ShapeError("token width " + std::to_string(input.tokens.cols()) + " != " +
                         std::to_string(c.width));
    }
    input.check_consistent();
    const BlockWeights& bw = w.blocks[static_cast<std::size_t>(block_id - 1)];

    BlockOutput out;
    BlockTrace& trace = out.trace;
    trace.block_id = block_id;
    trace.cls_input = input.tokens.row_vector(0);

    const Matrix h = layernorm_rows(input.tokens, bw.ln1.gain, bw.ln1.bias, c.ln_eps);
    const Matrix q = linear(h, bw.wq, bw.bq);
    trace.keys = linear(h, bw.wk, bw.bk);
    const Matrix v = linear(h, bw.wv, bw.bv);
    const Matrix heads = attend(q, trace.keys, v, c.heads, trace.cls_logits, trace.cls_attention);

    TokenMatrix x{input.tokens, input.patch_ids};
    add_inplace(x.tokens, linear(heads, bw.wo, bw.bo));

    if (hook != nullptr && c.condenses_at(block_id)) {
        const std::size_t n_in = x.patch_count();
        const std::size_t expected = hook->expected_patches(block_id, n_in);
        const Vector cls_before = x.tokens.row_vector(0);
        BlockContext ctx{block_id, c, bw, trace};
        TokenMatrix reduced = hook->condense(x, ctx);
        reduced.check_consistent();
        if (reduced.tokens.cols() != c.width) {
            throw ContractError("condensation changed the token width");
        }
        if (reduced.patch_count() != expected) {
            throw ContractError("block " + std::to_string(block_id) + ": condensation produced " +
                                std::to_string(reduced.patch_count()) + " patches, expected " +
                                std::to_string(expected));
        }
        if (reduced.tokens.row_vector(0) != cls_before) {
            throw ContractError("condensation altered the cls token");
        }
        x = std::move(reduced);
    }

    Matrix hidden = linear(layernorm_rows(x.tokens, bw.ln2.gain, bw.ln2.bias, c.ln_eps),
                           bw.mlp_in, bw.mlp_in_b);
    gelu_inplace(hidden);
    add_inplace(x.tokens, linear(hidden, bw.mlp_out, bw.mlp_out_b));

    trace.cls_output = x.tokens.row_vector(0);
    out.tokens = std::move(x);
    return out;
}

EncodeResult encode_tokens(TokenMatrix tokens, const EncoderWeights& w, CondensationHook* hook) {
    const auto& c = w.config;
    EncodeResult r;
    r.anchor_stack = Matrix(c.layers, c.width);
    for (std::size_t l = 0; l < c.layers; ++l) {
        BlockOutput b = forward_block(tokens, static_cast<int>(l + 1), w, hook);
        std::copy(b.trace.cls_output.begin(), b.trace.cls_output.end(), r.anchor_stack.row(l).begin());
        tokens = std::move(b.tokens);
        r.traces.push_back(std::move(b.trace));
    }
    r.z = project_cls(tokens.tokens.row(0), w);
    return r;
}

EncodeResult encode(std::span<const float> pixels, const EncoderWeights& w, CondensationHook* hook) {
    return encode_tokens(embed(pixels, w), w, hook);
}

Vector project_cls(std::span<const float> cls, const EncoderWeights& w) {
    return linear(layernorm(cls, w.ln_post.gain, w.ln_post.bias, w.config.ln_eps), w.proj);
}

Vector zero_shot_probs(std::span<const float> z, const Matrix& text_embeddings, double tau) {
    if (!(tau > 0.0)) throw DomainError("temperature must be positive");
    if (text_embeddings.cols() != z.size()) {
        throw ShapeError("text embeddings have width " + std::to_string(text_embeddings.cols()) +
                         ", image embedding has " + std::to_string(z.size()));
    }
    std::vector<double> logits(text_embeddings.rows());
    double mx = -1e300;
    for (std::size_t c = 0; c < logits.size(); ++c) {
        logits[c] = cosine(z, text_embeddings.row(c)) / tau;
        mx = std::max(mx, logits[c]);
    }
    double sum = 0.0;
    for (double& l : logits) {
        l = std::exp(l - mx);
        sum += l;
    }
    Vector p(logits.size());
    for (std::size_t c = 0; c < p.size(); ++c) p[c] = static_cast<float>(logits[c] / sum);
    return p;
}

}  // namespace tca
