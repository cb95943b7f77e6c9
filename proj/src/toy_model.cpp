#include "tca/toy_model.hpp"

#include <cmath>
#include <random>

namespace tca {

namespace {

Matrix random_matrix(std::mt19937_64& rng, std::size_t rows, std::size_t cols, double scale) {
    std::normal_distribution<double> dist(0.0, scale);
    Matrix m(rows, cols);
    for (float& x : m.data()) x = static_cast<float>(dist(rng));
    return m;
}

Vector random_vector(std::mt19937_64& rng, std::size_t n, double scale) {
    return random_matrix(rng, 1, n, scale).data();
}

LayerNormParams unit_ln(std::size_t n) { return {Vector(n, 1.0f), Vector(n, 0.0f)}; }

}  // namespace

EncoderConfig ToyGeometry::config() const {
    EncoderConfig c;
    c.layers = layers;
    c.heads = heads;
    c.width = width;
    c.embed_dim = embed_dim;
    c.image_side = image_side;
    c.patch_side = patch_side;
    c.mlp_ratio = 4.0;
    c.condense_blocks = condense_blocks;
    return c;
}

EncoderWeights make_toy_encoder(const ToyGeometry& g, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    EncoderWeights w;
    w.config = g.config();
    const auto& c = w.config;
    const double s = 1.0 / std::sqrt(static_cast<double>(c.width));
    w.patch_embed = random_matrix(rng, c.width, c.patch_dim(), 1.0 / std::sqrt(double(c.patch_dim())));
    w.pos_embed = random_matrix(rng, c.num_patches() + 1, c.width, 0.1);
    w.cls_init = random_vector(rng, c.width, 1.0);
    w.ln_pre = unit_ln(c.width);
    for (std::size_t l = 0; l < c.layers; ++l) {
        BlockWeights b;
        b.ln1 = unit_ln(c.width);
        b.ln2 = unit_ln(c.width);
        b.wq = random_matrix(rng, c.width, c.width, s);
        b.wk = random_matrix(rng, c.width, c.width, s);
        b.wv = random_matrix(rng, c.width, c.width, s);
        b.wo = random_matrix(rng, c.width, c.width, s);
        b.mlp_in = random_matrix(rng, c.mlp_width(), c.width, s);
        b.mlp_in_b = random_vector(rng, c.mlp_width(), 0.02);
        b.mlp_out = random_matrix(rng, c.width, c.mlp_width(), 1.0 / std::sqrt(double(c.mlp_width())));
        b.mlp_out_b = random_vector(rng, c.width, 0.02);
        w.blocks.push_back(std::move(b));
    }
    w.ln_post = unit_ln(c.width);
    w.proj = random_matrix(rng, c.embed_dim, c.width, s);
    w.validate();
    return w;
}

TextEmbeddings make_toy_text(std::size_t classes, std::size_t embed_dim, std::uint64_t seed) {
    std::mt19937_64 rng(seed ^ 0x7465787400000000ull);
    TextEmbeddings t;
    t.embeddings = random_matrix(rng, classes, embed_dim, 1.0);
    for (std::size_t c = 0; c < classes; ++c) {
        const double n = norm(t.embeddings.row(c));
        for (float& x : t.embeddings.row(c)) x = static_cast<float>(x / n);
        t.classnames.push_back("class_" + std::to_string(c));
    }
    return t;
}

Dataset make_toy_dataset(std::size_t count, std::size_t image_side, std::size_t classes,
                         std::uint64_t seed) {
    std::mt19937_64 rng(seed ^ 0x6461746100000000ull);
    std::vector<Vector> pixels;
    std::vector<std::int64_t> labels;
    for (std::size_t i = 0; i < count; ++i) {
        pixels.push_back(random_vector(rng, 3 * image_side * image_side, 1.0));
        labels.push_back(static_cast<std::int64_t>(i % classes));
    }
    return Dataset::from_samples(image_side, pixels, labels);
}

TensorArchive make_toy_archive(const ToyGeometry& g, std::size_t classes, std::size_t samples,
                               std::uint64_t seed) {
    TensorArchive a;
    make_toy_encoder(g, seed).to_archive(a);
    make_toy_text(classes, g.embed_dim, seed).to_archive(a);
    a.merge(make_toy_dataset(samples, g.image_side, classes, seed).archive());
    return a;
}

}  // namespace tca
