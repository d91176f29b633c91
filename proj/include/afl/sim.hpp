#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "afl/server.hpp"

namespace afl {

// ---- model families (per-worker objectives) --------------------------------

struct QuadraticFamily {
    std::vector<ParamVector> centers;  // one per worker
};

// Worker 0 optimizes (x + G)^2, worker 1 optimizes (x - G)^2.
struct ShiftedSquareFamily {
    double shift = 1.0;
};

struct LogRegFamily {
    int dim = 0;
    int classes = 0;
    double l2 = 0.0;
};

using ModelFamily = std::variant<QuadraticFamily, ShiftedSquareFamily, LogRegFamily>;

ModelSpec worker_model(const ModelFamily& family, int worker);
int family_param_dim(const ModelFamily& family);

// ---- arrival processes ------------------------------------------------------

struct UniformArrivals {
    int m = 1;  // distinct workers per round, uniform without replacement
};

struct WeightedArrivals {
    std::vector<double> probs;  // per worker, sums to 1
    int m = 1;                  // sequential proportional draws without replacement
};

struct SingleArrival {
    int worker = 0;
};

struct TraceArrivals {
    std::vector<std::vector<int>> rounds;
};

using ArrivalProcess = std::variant<UniformArrivals, WeightedArrivals, SingleArrival, TraceArrivals>;

// ---- delay models -----------------------------------------------------------

struct ZeroDelay {};

// Pull uniformly among the last R models: staleness uniform on [0, min(R-1, t)].
struct UniformLastR {
    int r = 5;
};

struct BoundedRandomDelay {
    int64_t tau_max = 0;
    std::vector<double> pmf;  // over {0..tau_max}
};

using DelayModel = std::variant<ZeroDelay, UniformLastR, BoundedRandomDelay>;

int64_t delay_bound(const DelayModel& delay);

// ---- run configuration ------------------------------------------------------

struct SyntheticData {
    int64_t n = 0;
    double separation = 5.0;
    int64_t test_n = 0;  // 0 = no test set (no test-accuracy column values)
};

struct IdxData {
    std::string images;
    std::string labels;
    std::string test_images;  // optional
    std::string test_labels;
};

using DataSource = std::variant<std::monostate, SyntheticData, IdxData>;

struct RunConfig {
    ModelFamily family;
    int workers = 1;    // M
    int collected = 1;  // m
    double eta = 1.0;
    double eta_l = 0.1;
    int64_t rounds = 0;  // T
    ArrivalProcess arrivals = UniformArrivals{1};
    DelayModel delay = ZeroDelay{};
    StepPolicy steps = ConstantSteps{1};
    WorkerOptimizer optimizer = PlainSgd{};
    int batch_size = 64;
    double sigma_l = 0.0;
    ServerMode mode = ServerMode::CrossDevice;
    uint64_t seed = 0;
    std::optional<int64_t> tau_max;  // default: delay_bound(delay)
    bool cs_bootstrap = true;        // one update per worker before round 0
    std::optional<ParamVector> x0;   // default: zeros
    bool record_trajectories = false;

    // LogReg only.
    DataSource data = std::monostate{};
    int classes_per_worker = 0;  // p; 0 = all classes
    int64_t per_worker = 0;      // 0 = n / M
    uint64_t partition_seed = 0; // 0 = derived from seed

    int64_t effective_tau_max() const;
};

struct RoundRecord {
    int64_t round = 0;
    double grad_norm_sq = 0.0;
    double loss = 0.0;
    std::optional<double> test_acc;
    int64_t stale_min = 0;
    double stale_mean = 0.0;
    int64_t stale_max = 0;
    StepStats steps;
    int fresh_count = 0;  // updates computed at the current round
};

struct MetricsTrace {
    std::vector<RoundRecord> rounds;
    bool diverged = false;
    std::string divergence_note;
};

struct RunResult {
    MetricsTrace trace;
    ParamVector final_model;
};

// ---- operations -------------------------------------------------------------

std::vector<int> sample_arrivals(const ArrivalProcess& process, int workers, int64_t round, Rng& rng);

int64_t sample_staleness(const DelayModel& delay, int64_t round, int worker, Rng& rng);

// Materialized experiment: config plus the data it runs on.
struct Experiment {
    RunConfig cfg;
    Dataset train;
    std::vector<Partition> parts;
    Dataset test;
    std::vector<Partition> test_parts;

    LocalData local(int worker) const;
    bool has_data() const { return train.n > 0; }
    bool has_test() const { return test.n > 0; }
};

// Build datasets/partitions per cfg.data (no-op for synthetic families).
Experiment materialize(const RunConfig& cfg);

// One communication round: sample arrivals and staleness, run local updates
// against ring models, aggregate (CD) or ingest-then-aggregate (CS), advance.
// Appends the round's record to `trace`.
void run_round(ServerState& state, const Experiment& exp, MetricsTrace& trace);

RunResult run_experiment(const RunConfig& cfg);
RunResult run_experiment(const Experiment& exp);

// System objective f = (1/M) sum f_i and its exact gradient.
double system_loss(const Experiment& exp, const ParamVector& x);
ParamVector system_gradient(const Experiment& exp, const ParamVector& x);

struct ConstantEstimates {
    double sigma_l_sq_hat = 0.0;  // max Monte-Carlo estimate of E||g - grad f_i||^2
    double sigma_g_sq_hat = 0.0;  // max over probes/workers of ||grad f_i - grad f||^2
    double l_hat = 0.0;           // secant lower witness of the Lipschitz constant
};

// Empirical witnesses for the variance/smoothness constants: max cross-worker
// gradient gap, Monte-Carlo local-gradient variance, and a secant lower bound
// on L over probe pairs.
ConstantEstimates estimate_constants(const Experiment& exp, std::span<const ParamVector> probes,
                                     int samples_per_point, uint64_t seed);

}  // namespace afl
