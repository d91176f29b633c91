#pragma once

#include <map>
#include <string>
#include <vector>

#include "afl/sim.hpp"

namespace afl {

// Frozen contract: any change is a breaking version bump.
inline constexpr const char* kMetricsCsvHeader =
    "round,grad_norm_sq,loss,test_acc,stale_min,stale_mean,stale_max,inv_K,K_bar,K_hat_sq,fresh_count";

// Parse the flat sectioned key/value config document (sections: model, data,
// server, worker, sim). Unknown keys are rejected with a suggestion.
RunConfig parse_config(const std::string& path);
RunConfig parse_config_text(const std::string& text, const std::string& origin = "<string>");

// Shortest round-trip decimal formatting (std::to_chars).
std::string format_double(double v);

std::string metrics_to_csv(const MetricsTrace& trace);
void export_metrics(const MetricsTrace& trace, const std::string& path);

std::string condition_report_to_csv(const ConditionReport& report);
std::string condition_report_digest(const ConditionReport& report);

// Build checker inputs from a run configuration (worst-case K per policy,
// tau from the delay model, L from the model family).
LrCheckInputs checker_inputs_from_config(const RunConfig& cfg);

// ---- presets ----------------------------------------------------------------

struct PresetSummary {
    std::string name;
    std::vector<std::string> digest;          // human-readable lines
    std::vector<std::string> files_written;
    std::map<std::string, double> values;     // machine-checkable outcomes
};

// name in {lower-bound, speedup-sweep, heterogeneity-sweep, staleness-ablation,
// cs-vs-cd}; params override preset defaults (e.g. G=1, T=200, seeds=5).
PresetSummary run_preset(const std::string& name, const std::map<std::string, std::string>& params,
                         const std::string& out_dir);

}  // namespace afl
