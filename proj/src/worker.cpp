#include "afl/worker.hpp"

#include <cmath>

#include "afl/errors.hpp"

namespace afl {

int choose_local_steps(const StepPolicy& policy, int worker_id, int64_t /*round*/, Rng& rng) {
    if (const auto* c = std::get_if<ConstantSteps>(&policy)) {
        if (c->c < 1) throw ConfigError("constant step count must be >= 1");
        return c->c;
    }
    if (const auto* d = std::get_if<DynamicUniformSteps>(&policy)) {
        if (d->c < 1) throw ConfigError("dynamic step parameter must be >= 1");
        return 1 + static_cast<int>(rng.next_below(static_cast<uint64_t>(2 * d->c)));
    }
    const auto& fixed = std::get<PerWorkerFixedSteps>(policy);
    if (worker_id < 0 || worker_id >= static_cast<int>(fixed.k.size())) {
        throw ConfigError("no fixed step count for worker " + std::to_string(worker_id));
    }
    if (fixed.k[worker_id] < 1) throw ConfigError("fixed step counts must be >= 1");
    return fixed.k[worker_id];
}

WorkerUpdate local_update(const ParamVector& x_pulled, int64_t pulled_version, int k, double eta_l,
                          const WorkerOptimizer& opt, const ModelSpec& model, const LocalData& data,
                          int batch_size, double sigma_l, Rng& rng, bool record_trajectory) {
    if (eta_l <= 0.0) throw ConfigError("worker learning rate must be positive");
    if (k < 1) throw ConfigError("local step count must be >= 1");

    const auto* prox = std::get_if<FedProx>(&opt);
    const auto* scaf = std::get_if<Scaffold>(&opt);
    if (scaf != nullptr &&
        (scaf->ci.size() != x_pulled.size() || scaf->c.size() != x_pulled.size())) {
        throw ConfigError("scaffold control variates must have the model dimension");
    }

    WorkerUpdate out;
    out.pulled_version = pulled_version;
    out.k_used = k;

    ParamVector x = x_pulled;
    ParamVector sum(x.size(), 0.0);
    ParamVector dir(x.size());
    if (record_trajectory) {
        out.trajectory.reserve(k + 1);
        out.trajectory.push_back(x);
    }

    for (int step = 0; step < k; ++step) {
        GradSample sample = stochastic_gradient(model, data, x, batch_size, sigma_l, rng);
        const ParamVector& g = sample.grad;
        for (size_t j = 0; j < x.size(); ++j) {
            double dj = g[j];
            if (prox != nullptr) dj += prox->mu * (x[j] - x_pulled[j]);
            if (scaf != nullptr) dj += scaf->c[j] - scaf->ci[j];
            dir[j] = dj;
            // FedProx returns the proximal-corrected direction; the others
            // return the raw stochastic gradient.
            sum[j] += (prox != nullptr) ? dj : g[j];
            x[j] -= eta_l * dj;
        }
        for (size_t j = 0; j < x.size(); ++j) {
            if (!std::isfinite(x[j])) {
                throw DivergenceError("nonfinite iterate at local step " + std::to_string(step), step);
            }
        }
        if (record_trajectory) out.trajectory.push_back(x);
    }

    out.grad_avg.resize(x.size());
    const double inv_k = 1.0 / static_cast<double>(k);
    for (size_t j = 0; j < x.size(); ++j) out.grad_avg[j] = sum[j] * inv_k;

    if (scaf != nullptr) {
        // c_i <- c_i - c + (x_pulled - x_K) / (K * eta_l)
        out.scaffold_ci.resize(x.size());
        const double scale = 1.0 / (static_cast<double>(k) * eta_l);
        for (size_t j = 0; j < x.size(); ++j) {
            out.scaffold_ci[j] = scaf->ci[j] - scaf->c[j] + (x_pulled[j] - x[j]) * scale;
        }
    }
    return out;
}

ParamVector delta_on_trajectory(const ModelSpec& model, const LocalData& data,
                                std::span<const ParamVector> trajectory) {
    if (trajectory.empty()) throw ConfigError("delta_on_trajectory needs a nonempty trajectory");
    ParamVector acc(trajectory[0].size(), 0.0);
    for (const ParamVector& x : trajectory) {
        const ParamVector g = full_gradient(model, data, x);
        for (size_t j = 0; j < acc.size(); ++j) acc[j] += g[j];
    }
    const double inv_k = 1.0 / static_cast<double>(trajectory.size());
    for (double& v : acc) v *= inv_k;
    return acc;
}

}  // namespace afl
