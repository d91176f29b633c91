#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "afl/errors.hpp"
#include "afl/harness.hpp"

namespace py = pybind11;
using namespace afl;

namespace {

py::dict result_to_dict(const Experiment& exp, const RunResult& res) {
    py::dict out;
    out["final_model"] = res.final_model;
    out["diverged"] = res.trace.diverged;
    out["rounds"] = res.trace.rounds.size();
    out["csv"] = metrics_to_csv(res.trace);
    if (!res.trace.rounds.empty()) {
        const RoundRecord& last = res.trace.rounds.back();
        out["final_loss"] = last.loss;
        out["final_grad_norm_sq"] = last.grad_norm_sq;
        if (last.test_acc) out["final_test_acc"] = *last.test_acc;
    }
    const ParamVector grad = system_gradient(exp, res.final_model);
    double sq = 0.0;
    for (const double g : grad) sq += g * g;
    out["grad_norm_sq_at_final"] = sq;
    return out;
}

py::dict run_text(const std::string& text) {
    const RunConfig cfg = parse_config_text(text);
    const Experiment exp = materialize(cfg);
    return result_to_dict(exp, run_experiment(exp));
}

py::dict run_file(const std::string& path) {
    const RunConfig cfg = parse_config(path);
    const Experiment exp = materialize(cfg);
    return result_to_dict(exp, run_experiment(exp));
}

TheoremId theorem_from_name(const std::string& name) {
    if (name == "cd-general") return TheoremId::CdGeneral;
    if (name == "cd-uniform") return TheoremId::CdUniform;
    if (name == "cs") return TheoremId::Cs;
    throw ConfigError("theorem must be cd-general, cd-uniform or cs");
}

py::dict check_conditions(const std::string& theorem, double eta, double eta_l, double lipschitz,
                          int64_t tau, int m, int big_m, const std::vector<std::vector<int>>& k_rounds,
                          int m_prime, double sigma_l, double sigma_g, int64_t rounds) {
    LrCheckInputs in;
    in.eta = eta;
    in.eta_l = eta_l;
    in.lipschitz = lipschitz;
    in.tau = tau;
    in.m = m;
    in.M = big_m;
    in.m_prime = m_prime;
    in.k_rounds = k_rounds;
    in.sigma_l = sigma_l;
    in.sigma_g = sigma_g;
    in.rounds = rounds;
    const ConditionReport report = check_lr_conditions(theorem_from_name(theorem), in);

    py::dict out;
    py::list checks;
    for (const ConditionCheck& c : report.checks) {
        py::dict item;
        item["label"] = c.label;
        item["lhs"] = c.lhs;
        item["rhs"] = c.rhs;
        item["strict"] = c.strict;
        item["pass"] = c.pass;
        checks.append(item);
    }
    out["checks"] = checks;
    out["alpha_L"] = report.alpha_l;
    out["alpha_G"] = report.alpha_g;
    out["error_floor"] = report.error_floor;
    out["all_pass"] = report.all_pass();
    out["csv"] = condition_report_to_csv(report);
    return out;
}

py::tuple step_stats_py(const std::vector<int>& k) {
    const StepStats s = step_stats(k);
    return py::make_tuple(s.inv_k, s.k_bar, s.k_hat_sq);
}

py::dict preset_py(const std::string& name, const std::map<std::string, std::string>& params,
                   const std::string& out_dir) {
    const PresetSummary summary = run_preset(name, params, out_dir);
    py::dict out;
    out["name"] = summary.name;
    out["digest"] = summary.digest;
    out["files"] = summary.files_written;
    out["values"] = summary.values;
    return out;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "Anarchic federated learning simulator (AFA-CD / AFA-CS)";

    m.def("run_text", &run_text, py::arg("config_text"),
          "Run one experiment from a config document; returns trace summary and CSV.");
    m.def("run_file", &run_file, py::arg("config_path"));
    m.def("check_conditions", &check_conditions, py::arg("theorem"), py::arg("eta"),
          py::arg("eta_l"), py::arg("lipschitz"), py::arg("tau"), py::arg("m"), py::arg("M"),
          py::arg("k_rounds"), py::arg("m_prime") = 0, py::arg("sigma_l") = 0.0,
          py::arg("sigma_g") = 0.0, py::arg("rounds") = 1,
          "Evaluate the learning-rate preconditions of the selected theorem.");
    m.def("step_stats", &step_stats_py, py::arg("k_values"),
          "Returns (1/K_t, K_bar_t, K_hat_sq_t) for one round's local-step counts.");
    m.def("run_preset", &preset_py, py::arg("name"), py::arg("params"), py::arg("out_dir"));
    m.attr("METRICS_CSV_HEADER") = kMetricsCsvHeader;
    m.attr("__version__") = "0.1.0";
}
