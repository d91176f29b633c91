#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "afl/errors.hpp"
#include "afl/harness.hpp"

namespace {

using namespace afl;

std::map<std::string, std::string> parse_kv(const std::vector<std::string>& raw) {
    std::map<std::string, std::string> out;
    for (const std::string& item : raw) {
        const auto eq = item.find('=');
        if (eq == std::string::npos) throw ConfigError("--param expects k=v, got \"" + item + "\"");
        out[item.substr(0, eq)] = item.substr(eq + 1);
    }
    return out;
}

// "family[:k=v,k=v]" -> a gradcheck target. Families: quadratic, shifted_square, logreg.
struct GradcheckTarget {
    ModelSpec model;
    Dataset dataset;
    Partition part;
    LocalData data;
};

GradcheckTarget parse_model_spec(const std::string& spec, uint64_t seed) {
    std::string family = spec;
    std::map<std::string, double> opts;
    if (const auto colon = spec.find(':'); colon != std::string::npos) {
        family = spec.substr(0, colon);
        std::string rest = spec.substr(colon + 1);
        size_t pos = 0;
        while (pos < rest.size()) {
            const auto comma = rest.find(',', pos);
            const std::string item = rest.substr(pos, comma == std::string::npos ? rest.size() - pos
                                                                                 : comma - pos);
            const auto eq = item.find('=');
            if (eq == std::string::npos) throw ConfigError("bad model option \"" + item + "\"");
            opts[item.substr(0, eq)] = std::stod(item.substr(eq + 1));
            pos = comma == std::string::npos ? rest.size() : comma + 1;
        }
    }
    GradcheckTarget t;
    if (family == "quadratic") {
        const int d = static_cast<int>(opts.count("d") ? opts["d"] : 3);
        Rng rng(seed);
        ParamVector center(d);
        for (double& v : center) v = 2.0 * rng.next_double() - 1.0;
        t.model = Quadratic{center};
    } else if (family == "shifted_square") {
        const double g = opts.count("g") ? opts["g"] : 1.0;
        const int sign = opts.count("sign") ? static_cast<int>(opts["sign"]) : -1;
        t.model = ShiftedSquare{sign, g};
    } else if (family == "logreg") {
        const int d = static_cast<int>(opts.count("d") ? opts["d"] : 10);
        const int c = static_cast<int>(opts.count("c") ? opts["c"] : 4);
        const double l2 = opts.count("l2") ? opts["l2"] : 0.0;
        t.model = LogReg{d, c, l2};
        t.dataset = gen_synthetic_logreg(std::max<int64_t>(40L * c, 200), d, c, 3.0, seed);
        t.part.owner = 0;
        for (int64_t i = 0; i < t.dataset.n; ++i) t.part.indices.push_back(i);
        t.data = {&t.dataset, &t.part};
    } else {
        throw ConfigError("unknown model family \"" + family +
                          "\"; expected quadratic, shifted_square or logreg");
    }
    return t;
}

int cmd_run(const std::string& config_path, const std::string& out_dir,
            const std::string& mnist_images, const std::string& mnist_labels) {
    RunConfig cfg = parse_config(config_path);
    if (!mnist_images.empty() || !mnist_labels.empty()) {
        if (mnist_images.empty() || mnist_labels.empty()) {
            throw ConfigError("--mnist-images and --mnist-labels must be given together");
        }
        IdxData idx;
        if (const auto* prev = std::get_if<IdxData>(&cfg.data)) idx = *prev;
        idx.images = mnist_images;
        idx.labels = mnist_labels;
        cfg.data = idx;
    }
    std::filesystem::create_directories(out_dir);
    const Experiment exp = materialize(cfg);
    const RunResult res = run_experiment(exp);
    const std::string csv_path = (std::filesystem::path(out_dir) / "metrics.csv").string();
    export_metrics(res.trace, csv_path);

    if (res.trace.diverged) {
        std::cout << "DIVERGED after " << res.trace.rounds.size() << " rounds: "
                  << res.trace.divergence_note << "\n";
    }
    if (!res.trace.rounds.empty()) {
        const RoundRecord& last = res.trace.rounds.back();
        std::cout << "rounds=" << res.trace.rounds.size()
                  << " final_loss=" << format_double(last.loss)
                  << " final_grad_norm_sq=" << format_double(last.grad_norm_sq);
        if (last.test_acc) std::cout << " test_acc=" << format_double(*last.test_acc);
        std::cout << "\n";
    }
    std::cout << "metrics: " << csv_path << "\n";
    return res.trace.diverged ? 2 : 0;
}

int cmd_preset(const std::string& name, const std::vector<std::string>& params,
               const std::string& out_dir) {
    const PresetSummary summary = run_preset(name, parse_kv(params), out_dir);
    std::cout << summary.name << "\n";
    for (const auto& line : summary.digest) std::cout << "  " << line << "\n";
    for (const auto& f : summary.files_written) std::cout << "  wrote " << f << "\n";
    return 0;
}

int cmd_check(const std::string& config_path, const std::string& theorem,
              const std::string& out_dir) {
    const RunConfig cfg = parse_config(config_path);
    TheoremId id;
    if (theorem == "cd-general") {
        id = TheoremId::CdGeneral;
    } else if (theorem == "cd-uniform") {
        id = TheoremId::CdUniform;
    } else if (theorem == "cs") {
        id = TheoremId::Cs;
    } else {
        throw ConfigError("--theorem must be cd-general, cd-uniform or cs");
    }
    const ConditionReport report = check_lr_conditions(id, checker_inputs_from_config(cfg));
    std::cout << condition_report_digest(report);
    if (!out_dir.empty()) {
        std::filesystem::create_directories(out_dir);
        const std::string path = (std::filesystem::path(out_dir) / "conditions.csv").string();
        std::ofstream out(path, std::ios::binary);
        if (!out) throw IoError("cannot write " + path);
        out << condition_report_to_csv(report);
        std::cout << "conditions: " << path << "\n";
    }
    return report.all_pass() ? 0 : 1;
}

int cmd_gradcheck(const std::string& spec, int points, double h, uint64_t seed, double threshold) {
    GradcheckTarget t = parse_model_spec(spec, seed);
    const int dim = param_dim(t.model);
    Rng rng(seed + 1);
    double worst = 0.0;
    for (int i = 0; i < points; ++i) {
        ParamVector x(dim);
        for (double& v : x) v = 2.0 * rng.next_double() - 1.0;
        worst = std::max(worst, finite_diff_check(t.model, t.data, x, h));
    }
    std::cout << "max relative error over " << points << " points: " << format_double(worst)
              << " (threshold " << format_double(threshold) << ")\n";
    return worst < threshold ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Anarchic federated learning simulator"};
    app.require_subcommand(1);

    std::string config_path;
    std::string out_dir = ".";
    std::string mnist_images;
    std::string mnist_labels;
    auto* run = app.add_subcommand("run", "Run one experiment from a config file");
    run->add_option("--config", config_path, "Config file path")->required();
    run->add_option("--out", out_dir, "Output directory for metrics.csv");
    run->add_option("--mnist-images", mnist_images, "IDX image file (overrides config)");
    run->add_option("--mnist-labels", mnist_labels, "IDX label file (overrides config)");

    std::string preset_name;
    std::vector<std::string> preset_params;
    std::string preset_out = ".";
    auto* preset = app.add_subcommand("preset", "Run a named experiment preset");
    preset->add_option("name", preset_name,
                       "lower-bound | speedup-sweep | heterogeneity-sweep | staleness-ablation | "
                       "cs-vs-cd")
        ->required();
    preset->add_option("--param", preset_params, "Override a preset parameter, k=v");
    preset->add_option("--out", preset_out, "Output directory");

    std::string check_config;
    std::string theorem;
    std::string check_out;
    auto* check = app.add_subcommand("check-conditions", "Evaluate learning-rate preconditions");
    check->add_option("--config", check_config, "Config file path")->required();
    check->add_option("--theorem", theorem, "cd-general | cd-uniform | cs")->required();
    check->add_option("--out", check_out, "Directory for the conditions.csv sidecar");

    std::string model_spec;
    int points = 100;
    double h = 1e-5;
    uint64_t seed = 7;
    double threshold = 1e-5;
    auto* gradcheck = app.add_subcommand("gradcheck", "Finite-difference gradient verification");
    gradcheck->add_option("--model", model_spec, "e.g. quadratic:d=5, shifted_square:g=1, logreg:d=10,c=4")
        ->required();
    gradcheck->add_option("--points", points, "Random probe points");
    gradcheck->add_option("--step", h, "Central difference step h");
    gradcheck->add_option("--seed", seed, "Probe seed");
    gradcheck->add_option("--threshold", threshold, "Max acceptable relative error");

    CLI11_PARSE(app, argc, argv);

    try {
        if (run->parsed()) return cmd_run(config_path, out_dir, mnist_images, mnist_labels);
        if (preset->parsed()) return cmd_preset(preset_name, preset_params, preset_out);
        if (check->parsed()) return cmd_check(check_config, theorem, check_out);
        if (gradcheck->parsed()) return cmd_gradcheck(model_spec, points, h, seed, threshold);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
