#pragma once

// JSON-lines sample records and the run summary document.

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "tca/pipeline.hpp"

namespace tca {

nlohmann::json config_to_json(const RunConfig& config);
nlohmann::json sample_to_json(const SampleResult& r, bool include_timing);
nlohmann::json summary_to_json(const RunSummary& s, const RunConfig& config,
                               const std::vector<std::string>& classnames);

// Writes <prefix>.jsonl while samples stream in and <prefix>.summary.json
// at the end.
class ReportWriter {
public:
    ReportWriter(std::filesystem::path prefix, bool include_timing);

    void write(const SampleResult& r);
    void finish(const nlohmann::json& summary);

    std::filesystem::path samples_path() const;
    std::filesystem::path summary_path() const;

private:
    std::filesystem::path prefix_;
    bool include_timing_;
    std::ofstream samples_;
};

}  // namespace tca
