#pragma once

#include <cstdint>
#include <span>
#include <variant>
#include <vector>

#include "afl/numerics.hpp"
#include "afl/rng.hpp"

namespace afl {

struct ConstantSteps {
    int c = 1;
};

// Integer drawn uniformly from [1, 2c] at each pull.
struct DynamicUniformSteps {
    int c = 1;
};

struct PerWorkerFixedSteps {
    std::vector<int> k;
};

using StepPolicy = std::variant<ConstantSteps, DynamicUniformSteps, PerWorkerFixedSteps>;

struct PlainSgd {};

struct FedProx {
    double mu = 0.1;
};

struct Scaffold {
    ParamVector ci;  // local control variate
    ParamVector c;   // server control variate
};

using WorkerOptimizer = std::variant<PlainSgd, FedProx, Scaffold>;

struct WorkerUpdate {
    int worker_id = 0;
    int64_t pulled_version = 0;  // mu
    int k_used = 0;
    ParamVector grad_avg;  // G: (1/K) * running sum, index-ascending

    // Test instrumentation: local iterates x^0..x^K when recording was on.
    std::vector<ParamVector> trajectory;
    // Refreshed local control variate (Scaffold only, empty otherwise).
    ParamVector scaffold_ci;
};

int choose_local_steps(const StepPolicy& policy, int worker_id, int64_t round, Rng& rng);

// K steps of the worker-side optimizer from the pulled model. The update
// carries the average of the raw stochastic gradients (PlainSGD, Scaffold)
// or of the proximal-corrected directions (FedProx).
WorkerUpdate local_update(const ParamVector& x_pulled, int64_t pulled_version, int k, double eta_l,
                          const WorkerOptimizer& opt, const ModelSpec& model, const LocalData& data,
                          int batch_size, double sigma_l, Rng& rng, bool record_trajectory = false);

// (1/K) * sum of exact local gradients over the realized iterates; pass the
// K gradient-evaluation points (the trajectory minus its final iterate).
ParamVector delta_on_trajectory(const ModelSpec& model, const LocalData& data,
                                std::span<const ParamVector> trajectory);

}  // namespace afl
