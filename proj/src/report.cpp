#include "tca/report.hpp"

#include "tca/errors.hpp"

namespace tca {

using nlohmann::json;

json config_to_json(const RunConfig& c) {
    return {{"mode", to_string(c.mode)},
            {"rate", c.plan.keep_rate},
            {"ratio", c.plan.merge_prune_ratio},
            {"k", c.plan.centers},
            {"lambda", c.correction.lambda},
            {"beta", c.correction.beta},
            {"direction", to_string(c.correction.direction)},
            {"reservoir", c.reservoir_capacity},
            {"strategy", to_string(c.strategy)},
            {"blocks", c.condense_blocks},
            {"tau", c.tau},
            {"seed", c.seed}};
}

json sample_to_json(const SampleResult& r, bool include_timing) {
    json j;
    j["index"] = r.index;
    j["predicted"] = r.predicted;
    j["base_predicted"] = r.base_predicted;
    j["label"] = r.label ? json(*r.label) : json(nullptr);
    j["confidence"] = r.confidence;
    j["entropy_key"] = r.entropy_key;
    if (r.admission) {
        j["admission"] = {{"outcome", to_string(r.admission->kind)},
                          {"evicted_seq", r.admission->evicted_seq ? json(*r.admission->evicted_seq)
                                                                   : json(nullptr)}};
    } else {
        j["admission"] = nullptr;
    }
    j["alignment"] = r.alignment ? json(*r.alignment) : json(nullptr);
    json stages = json::array();
    for (const auto& s : r.stages) {
        stages.push_back({{"block", s.block_id},
                          {"n_in", s.counts.n_in},
                          {"n_final", s.counts.n_final},
                          {"n_pruned", s.counts.n_pruned},
                          {"untouched", s.counts.n_untouched},
                          {"band", s.counts.band},
                          {"centers", s.counts.centers},
                          {"anchor_class", s.anchor_class ? json(*s.anchor_class) : json(nullptr)},
                          {"mask", s.mask}});
    }
    j["stages"] = std::move(stages);
    j["flops"] = r.flops;
    if (include_timing) j["latency_ms"] = r.latency_ms;
    j["error"] = r.error ? json(*r.error) : json(nullptr);
    return j;
}

json summary_to_json(const RunSummary& s, const RunConfig& config,
                     const std::vector<std::string>& classnames) {
    json j;
    j["mode"] = to_string(s.mode);
    j["samples"] = s.samples;
    j["labeled"] = s.labeled;
    j["correct"] = s.correct;
    j["errors"] = s.errors;
    if (s.accuracy) j["accuracy"] = *s.accuracy;
    j["flops_total"] = s.flops_total;
    j["flops_mean"] = s.flops_mean;
    j["flops_vanilla"] = s.flops_vanilla;
    j["flops_ratio"] = s.flops_ratio;
    j["admissions"] = s.admissions;
    j["reservoir_sizes"] = s.reservoir_sizes;
    json align = json::array();
    for (std::size_t c = 0; c < s.alignment.size(); ++c) {
        const auto& t = s.alignment[c];
        if (t.values.empty()) continue;
        json row = {{"class", c},
                    {"points", t.values.size()},
                    {"first", t.values.front()},
                    {"last", t.values.back()},
                    {"slope", t.slope()}};
        if (c < classnames.size()) row["name"] = classnames[c];
        align.push_back(std::move(row));
    }
    j["alignment"] = std::move(align);
    j["config"] = config_to_json(config);
    return j;
}

ReportWriter::ReportWriter(std::filesystem::path prefix, bool include_timing)
    : prefix_(std::move(prefix)), include_timing_(include_timing) {
    if (prefix_.has_parent_path()) std::filesystem::create_directories(prefix_.parent_path());
    samples_.open(samples_path(), std::ios::trunc);
    if (!samples_) throw InputError("cannot write '" + samples_path().string() + "'");
}

std::filesystem::path ReportWriter::samples_path() const {
    return std::filesystem::path(prefix_.string() + ".jsonl");
}

std::filesystem::path ReportWriter::summary_path() const {
    return std::filesystem::path(prefix_.string() + ".summary.json");
}

void ReportWriter::write(const SampleResult& r) {
    samples_ << sample_to_json(r, include_timing_).dump() << '\n';
}

void ReportWriter::finish(const json& summary) {
    samples_.flush();
    std::ofstream f(summary_path(), std::ios::trunc);
    if (!f) throw InputError("cannot write '" + summary_path().string() + "'");
    f << summary.dump(2) << '\n';
}

}  // namespace tca
