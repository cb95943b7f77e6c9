#include "tca/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>

#include "tca/errors.hpp"
#include "tca/flops.hpp"

namespace tca {

std::string to_string(RunMode m) {
    switch (m) {
        case RunMode::tca: return "tca";
        case RunMode::baseline_evit: return "baseline-evit";
        case RunMode::vanilla: return "vanilla";
    }
    return "?";
}

RunMode parse_mode(const std::string& s) {
    if (s == "tca") return RunMode::tca;
    if (s == "baseline-evit") return RunMode::baseline_evit;
    if (s == "vanilla") return RunMode::vanilla;
    throw InputError("unknown mode '" + s + "'");
}

void RunConfig::validate() const {
    plan.validate();
    correction.validate();
    if (reservoir_capacity == 0) throw InputError("reservoir size must be at least 1");
    if (!(tau > 0.0)) throw InputError("tau must be positive");
    for (std::size_t i = 0; i < condense_blocks.size(); ++i) {
        if (condense_blocks[i] < 1) throw InputError("condensation blocks are 1-indexed");
        if (i > 0 && condense_blocks[i] <= condense_blocks[i - 1]) {
            throw InputError("condensation blocks must be strictly increasing");
        }
    }
}

TextEmbeddings TextEmbeddings::from_archive(const TensorArchive& a) {
    TextEmbeddings t;
    t.embeddings = a.matrix("text/embeddings");
    if (a.contains("text/classnames")) {
        t.classnames = a.strings("text/classnames");
        if (t.classnames.size() != t.embeddings.rows()) {
            throw InputError("class name count does not match the text embeddings");
        }
    }
    if (t.embeddings.rows() < 1) throw InputError("no class embeddings");
    for (std::size_t c = 0; c < t.embeddings.rows(); ++c) {
        if (norm(t.embeddings.row(c)) == 0.0) {
            throw DegenerateVectorError("text embedding row " + std::to_string(c) + " is zero");
        }
    }
    return t;
}

void TextEmbeddings::to_archive(TensorArchive& a) const {
    a.put_matrix("text/embeddings", embeddings);
    if (!classnames.empty()) a.put_strings("text/classnames", classnames);
}

Dataset::Dataset(TensorArchive archive) : archive_(std::move(archive)) {
    const auto count = archive_.scalar_i64("meta/count");
    const auto side = archive_.scalar_i64("meta/image_side");
    if (count < 0 || side <= 0) throw InputError("dataset metadata out of range");
    count_ = static_cast<std::size_t>(count);
    image_side_ = static_cast<std::size_t>(side);
    for (std::size_t i = 0; i < count_; ++i) {
        const std::string p = "sample/" + std::to_string(i) + "/pixels";
        if (archive_.info(p).element_count() != 3 * image_side_ * image_side_) {
            throw InputError(p + " does not hold a 3x" + std::to_string(image_side_) + "x" +
                             std::to_string(image_side_) + " image");
        }
    }
}

Dataset Dataset::from_samples(std::size_t image_side, const std::vector<Vector>& pixels,
                              const std::vector<std::int64_t>& labels) {
    TensorArchive a;
    a.put_scalar("meta/count", static_cast<std::int64_t>(pixels.size()));
    a.put_scalar("meta/image_side", static_cast<std::int64_t>(image_side));
    const auto s = static_cast<std::int64_t>(image_side);
    for (std::size_t i = 0; i < pixels.size(); ++i) {
        const std::string p = "sample/" + std::to_string(i) + "/";
        a.put_f32(p + "pixels", {3, s, s}, pixels[i]);
        a.put_scalar(p + "label", i < labels.size() ? labels[i] : -1);
    }
    return Dataset(std::move(a));
}

Vector Dataset::pixels(std::size_t i) const {
    return archive_.vector("sample/" + std::to_string(i) + "/pixels");
}

std::optional<std::int64_t> Dataset::label(std::size_t i) const {
    const std::string name = "sample/" + std::to_string(i) + "/label";
    if (!archive_.contains(name)) return std::nullopt;
    const auto v = archive_.scalar_i64(name);
    if (v < 0) return std::nullopt;
    return v;
}

double ClassTrace::slope() const {
    const std::size_t n = values.size();
    if (n < 2) return 0.0;
    double mx = 0.0, my = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        mx += static_cast<double>(steps[i]);
        my += values[i];
    }
    mx /= static_cast<double>(n);
    my /= static_cast<double>(n);
    double sxy = 0.0, sxx = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double dx = static_cast<double>(steps[i]) - mx;
        sxy += dx * (values[i] - my);
        sxx += dx * dx;
    }
    return sxx == 0.0 ? 0.0 : sxy / sxx;
}

namespace {

std::shared_ptr<const EncoderWeights> with_blocks(std::shared_ptr<const EncoderWeights> w,
                                                  const std::vector<int>& blocks) {
    if (w->config.condense_blocks == blocks) return w;
    auto copy = std::make_shared<EncoderWeights>(*w);
    copy->config.condense_blocks = blocks;
    return copy;
}

std::uint64_t sample_flops(const EncoderConfig& config, const std::vector<StageRecord>& stages,
                           bool anchor_scoring) {
    std::vector<BlockTokens> blocks;
    std::size_t n = config.num_patches();
    for (std::size_t l = 1; l <= config.layers; ++l) {
        BlockTokens b;
        b.attention_tokens = n + 1;
        for (const auto& s : stages) {
            if (s.block_id != static_cast<int>(l) || s.counts.skipped()) continue;
            if (anchor_scoring) b.scored_keys = n;
            n = s.counts.n_final;
        }
        b.mlp_tokens = n + 1;
        blocks.push_back(b);
    }
    return flops_for_blocks(config, blocks).total();
}

}  // namespace

TcaPipeline::TcaPipeline(std::shared_ptr<const EncoderWeights> weights, TextEmbeddings text,
                         RunConfig config, std::optional<Reservoir> warm_start)
    : weights_(with_blocks(std::move(weights), config.condense_blocks)),
      text_(std::move(text)),
      config_(std::move(config)),
      reservoir_(warm_start ? std::move(*warm_start)
                            : Reservoir(text_.classes(), config_.reservoir_capacity,
                                        config_.strategy, weights_->config.layers,
                                        weights_->config.width)) {
    config_.validate();
    weights_->config.validate();
    if (text_.embeddings.cols() != weights_->config.embed_dim) {
        throw InputError("text embeddings have width " + std::to_string(text_.embeddings.cols()) +
                         ", the encoder projects to " + std::to_string(weights_->config.embed_dim));
    }
    if (reservoir_.classes() != text_.classes() || reservoir_.layers() != weights_->config.layers ||
        reservoir_.width() != weights_->config.width) {
        throw InputError("warm-start reservoir does not match the model and classes");
    }
    if (config_.mode == RunMode::baseline_evit) config_.plan.merge_prune_ratio = 0.0;
    layer_weights_ = layer_weights(config_.correction.beta, weights_->config.layers,
                                   config_.correction.direction);
    next_seq_ = reservoir_.empty() ? 0 : reservoir_.max_sample_seq() + 1;
    totals_.mode = config_.mode;
    totals_.admissions.assign(text_.classes(), 0);
    totals_.alignment.resize(text_.classes());
    totals_.flops_vanilla = vanilla_flops(weights_->config).total();
}

SampleResult TcaPipeline::process_sample(std::span<const float> pixels,
                                         std::optional<std::int64_t> label) {
    const auto start = std::chrono::steady_clock::now();
    const EncoderWeights& w = *weights_;
    SampleResult r;
    r.index = next_index_++;
    r.label = label;
    try {
        std::optional<CondensationStageHook> hook;
        if (config_.mode == RunMode::tca) {
            hook.emplace(config_.plan, ScoringMode::anchor_rank, &reservoir_, w.config.num_patches());
        } else if (config_.mode == RunMode::baseline_evit) {
            hook.emplace(config_.plan, ScoringMode::baseline_attention, nullptr,
                         w.config.num_patches());
        }
        const EncodeResult enc = encode(pixels, w, hook ? &*hook : nullptr);
        if (hook) r.stages = hook->stages();

        const Vector p = zero_shot_probs(enc.z, text_.embeddings, config_.tau);
        r.base_predicted = argmax(p);
        r.confidence = p[r.base_predicted];
        r.entropy_key = class_entropy(std::clamp(static_cast<double>(p[r.base_predicted]), 0.0, 1.0));

        if (config_.mode == RunMode::tca) {
            const Vector token = token_level_probs(enc.anchor_stack, reservoir_, layer_weights_);
            r.predicted = argmax(correct(p, token, config_.correction.lambda));
            AnchorRecord rec{r.entropy_key, enc.anchor_stack, next_seq_++};
            r.admission = reservoir_.try_admit(r.base_predicted, p, std::move(rec));
            const Matrix& mean = reservoir_.class_mean(r.base_predicted);
            if (!mean.empty()) {
                r.alignment = cosine_or_zero(project_cls(mean.row(mean.rows() - 1), w),
                                             text_.embeddings.row(r.base_predicted));
            }
        } else {
            r.predicted = r.base_predicted;
        }
        r.flops = sample_flops(w.config, r.stages, config_.mode == RunMode::tca);
    } catch (const Error& e) {
        r.error = e.what();
    }
    r.latency_ms =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
    accumulate(r);
    return r;
}

void TcaPipeline::accumulate(const SampleResult& r) {
    auto& t = totals_;
    ++t.samples;
    if (r.error) ++t.errors;
    if (r.label) {
        ++t.labeled;
        if (r.correct()) ++t.correct;
    }
    t.flops_total += r.flops;
    if (r.admission && r.admission->admitted()) ++t.admissions[r.base_predicted];
    if (r.alignment) {
        t.alignment[r.base_predicted].steps.push_back(r.index);
        t.alignment[r.base_predicted].values.push_back(*r.alignment);
    }
}

RunSummary TcaPipeline::summary() const {
    RunSummary s = totals_;
    if (s.labeled > 0) s.accuracy = static_cast<double>(s.correct) / static_cast<double>(s.labeled);
    const std::size_t ok = s.samples - s.errors;
    if (ok > 0) {
        s.flops_mean = static_cast<double>(s.flops_total) / static_cast<double>(ok);
        s.flops_ratio = s.flops_mean / static_cast<double>(s.flops_vanilla);
    }
    s.reservoir_sizes.clear();
    for (std::size_t c = 0; c < reservoir_.classes(); ++c) {
        s.reservoir_sizes.push_back(reservoir_.buffer(c).size());
    }
    return s;
}

RunSummary run_stream(const Dataset& data, std::shared_ptr<const EncoderWeights> weights,
                      const TextEmbeddings& text, const RunConfig& config, const SampleSink& sink) {
    if (data.size() > 0 && data.image_side() != weights->config.image_side) {
        throw InputError("dataset image side " + std::to_string(data.image_side()) +
                         " does not match the model's " +
                         std::to_string(weights->config.image_side));
    }
    TcaPipeline pipeline(std::move(weights), text, config);
    for (std::size_t i = 0; i < data.size(); ++i) {
        const SampleResult r = pipeline.process_sample(data.pixels(i), data.label(i));
        if (sink) sink(r);
    }
    return pipeline.summary();
}

std::vector<double> leave_one_out_influence(std::span<const float> pixels, const EncoderWeights& w,
                                            const TextEmbeddings& text, double tau,
                                            std::optional<std::size_t> class_id) {
    const TokenMatrix base = embed(pixels, w);
    const Vector z = encode_tokens(base, w).z;
    const std::size_t c = class_id ? *class_id : argmax(zero_shot_probs(z, text.embeddings, tau));
    if (c >= text.classes()) throw InputError("class id out of range");
    const double reference = cosine(z, text.embeddings.row(c));

    const std::size_t n = base.patch_count();
    std::vector<double> delta(n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        std::vector<std::size_t> rows;
        TokenMatrix reduced;
        for (std::size_t r = 0; r <= n; ++r) {
            if (r == i + 1) continue;
            rows.push_back(r);
            if (r > 0) reduced.patch_ids.push_back(base.patch_ids[r - 1]);
        }
        reduced.tokens = base.tokens.select_rows(rows);
        const Vector zi = encode_tokens(std::move(reduced), w).z;
        delta[i] = cosine(zi, text.embeddings.row(c)) - reference;
    }
    return delta;
}

}  // namespace tca
