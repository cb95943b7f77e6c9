#pragma once

// Online adaptation loop: one sample at a time, encode with condensation,
// correct the zero-shot logits from the reservoir, predict, then offer the
// sample's anchor stack to the reservoir.

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "tca/archive.hpp"
#include "tca/condensation.hpp"
#include "tca/correction.hpp"
#include "tca/encoder.hpp"
#include "tca/reservoir.hpp"

namespace tca {

enum class RunMode { tca, baseline_evit, vanilla };

std::string to_string(RunMode m);
RunMode parse_mode(const std::string& s);

struct RunConfig {
    CondensationPlan plan;
    CorrectionConfig correction;
    std::size_t reservoir_capacity = 3;
    ReservoirStrategy strategy = ReservoirStrategy::diversity;
    std::vector<int> condense_blocks{4, 7, 10};
    double tau = 0.01;
    RunMode mode = RunMode::tca;
    std::int64_t seed = 0;
    bool record_timing = false;

    void validate() const;
};

struct TextEmbeddings {
    Matrix embeddings;  // C x D
    std::vector<std::string> classnames;

    std::size_t classes() const { return embeddings.rows(); }
    static TextEmbeddings from_archive(const TensorArchive& a);
    void to_archive(TensorArchive& a) const;
};

class Dataset {
public:
    explicit Dataset(TensorArchive archive);
    static Dataset from_samples(std::size_t image_side, const std::vector<Vector>& pixels,
                                const std::vector<std::int64_t>& labels);

    std::size_t size() const { return count_; }
    std::size_t image_side() const { return image_side_; }
    Vector pixels(std::size_t i) const;
    std::optional<std::int64_t> label(std::size_t i) const;
    const TensorArchive& archive() const { return archive_; }

private:
    TensorArchive archive_;
    std::size_t count_ = 0;
    std::size_t image_side_ = 0;
};

struct SampleResult {
    std::size_t index = 0;
    std::size_t predicted = 0;       // argmax of the corrected scores
    std::size_t base_predicted = 0;  // argmax of the zero-shot probabilities
    std::optional<std::int64_t> label;
    double confidence = 0.0;  // zero-shot probability of base_predicted
    double entropy_key = 0.0;
    std::optional<AdmissionOutcome> admission;
    std::optional<double> alignment;  // base_predicted class, after admission
    std::vector<StageRecord> stages;
    std::uint64_t flops = 0;
    double latency_ms = 0.0;
    std::optional<std::string> error;

    bool correct() const { return label && !error && *label == static_cast<std::int64_t>(predicted); }
};

struct ClassTrace {
    std::vector<std::size_t> steps;
    std::vector<double> values;

    // Least-squares slope of values against steps; 0 with fewer than two points.
    double slope() const;
};

struct RunSummary {
    RunMode mode = RunMode::tca;
    std::size_t samples = 0;
    std::size_t labeled = 0;
    std::size_t correct = 0;
    std::size_t errors = 0;
    std::optional<double> accuracy;
    std::uint64_t flops_total = 0;
    double flops_mean = 0.0;
    std::uint64_t flops_vanilla = 0;
    double flops_ratio = 0.0;
    std::vector<std::size_t> admissions;      // per class
    std::vector<std::size_t> reservoir_sizes; // per class at the end
    std::vector<ClassTrace> alignment;        // per class
};

class TcaPipeline {
public:
    TcaPipeline(std::shared_ptr<const EncoderWeights> weights, TextEmbeddings text, RunConfig config,
                std::optional<Reservoir> warm_start = std::nullopt);

    SampleResult process_sample(std::span<const float> pixels,
                                std::optional<std::int64_t> label = std::nullopt);

    const Reservoir& reservoir() const { return reservoir_; }
    const RunConfig& config() const { return config_; }
    const EncoderWeights& weights() const { return *weights_; }
    const TextEmbeddings& text() const { return text_; }

    // Aggregate of every sample processed so far.
    RunSummary summary() const;

private:
    void accumulate(const SampleResult& r);

    std::shared_ptr<const EncoderWeights> weights_;
    TextEmbeddings text_;
    RunConfig config_;
    Reservoir reservoir_;
    Vector layer_weights_;
    std::uint64_t next_seq_ = 0;
    std::size_t next_index_ = 0;
    RunSummary totals_;
};

using SampleSink = std::function<void(const SampleResult&)>;

// Processes the dataset strictly in order.
RunSummary run_stream(const Dataset& data, std::shared_ptr<const EncoderWeights> weights,
                      const TextEmbeddings& text, const RunConfig& config,
                      const SampleSink& sink = {});

// cos(z without patch i, t_c) - cos(z, t_c) for every patch, with the patch
// removed from the token set before the first block. Uses the zero-shot
// prediction when class_id is not given.
std::vector<double> leave_one_out_influence(std::span<const float> pixels, const EncoderWeights& w,
                                            const TextEmbeddings& text, double tau,
                                            std::optional<std::size_t> class_id = std::nullopt);

}  // namespace tca
