#include "afl/server.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "afl/errors.hpp"

namespace afl {

void VersionRing::push(int64_t round, ParamVector x) {
    if (!models_.empty() && round != newest_round() + 1) {
        throw ConfigError("version ring rounds must be contiguous");
    }
    if (models_.empty()) base_round_ = round;
    models_.push_back(std::move(x));
    while (static_cast<int64_t>(models_.size()) > capacity_) {
        models_.pop_front();
        ++base_round_;
    }
}

const ParamVector& VersionRing::model_at(int64_t round) const {
    if (models_.empty() || round < base_round_ || round > newest_round()) {
        throw BoundedDelayError("version " + std::to_string(round) +
                                " is outside the ring [" + std::to_string(base_round_) + ", " +
                                std::to_string(newest_round()) + "]");
    }
    return models_[round - base_round_];
}

bool MemoryTable::all_initialized() const {
    return std::all_of(slots.begin(), slots.end(), [](const MemorySlot& s) { return s.initialized; });
}

int MemoryTable::first_uninitialized() const {
    for (size_t i = 0; i < slots.size(); ++i) {
        if (!slots[i].initialized) return static_cast<int>(i);
    }
    return -1;
}

namespace {

void check_staleness(int64_t round, int64_t version, int64_t tau_max, int worker) {
    const int64_t staleness = round - version;
    if (staleness > tau_max) {
        throw BoundedDelayError("worker " + std::to_string(worker) + " update has staleness " +
                                std::to_string(staleness) + " > tau_max " + std::to_string(tau_max));
    }
}

}  // namespace

ParamVector afa_cd_aggregate(const ParamVector& x, std::span<const WorkerUpdate> updates,
                             double eta, double eta_l, int64_t round, int64_t tau_max) {
    if (updates.empty()) throw ConfigError("AFA-CD aggregation needs at least one update");
    for (const WorkerUpdate& u : updates) {
        check_staleness(round, u.pulled_version, tau_max, u.worker_id);
        if (u.grad_avg.size() != x.size()) {
            throw ConfigError("update from worker " + std::to_string(u.worker_id) +
                              " has dimension " + std::to_string(u.grad_avg.size()) + ", expected " +
                              std::to_string(x.size()));
        }
    }
    // Worker-id-ascending summation keeps the aggregate independent of
    // arrival order (stable for duplicate arrivals).
    std::vector<size_t> order(updates.size());
    std::iota(order.begin(), order.end(), size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](size_t a, size_t b) { return updates[a].worker_id < updates[b].worker_id; });

    ParamVector sum(x.size(), 0.0);
    for (const size_t idx : order) {
        const ParamVector& g = updates[idx].grad_avg;
        for (size_t j = 0; j < sum.size(); ++j) sum[j] += g[j];
    }
    const double scale = eta * eta_l / static_cast<double>(updates.size());
    ParamVector next(x.size());
    for (size_t j = 0; j < x.size(); ++j) next[j] = x[j] - scale * sum[j];
    return next;
}

IngestResult afa_cs_ingest(MemoryTable& memory, const WorkerUpdate& update) {
    if (update.worker_id < 0 || update.worker_id >= static_cast<int>(memory.slots.size())) {
        throw ConfigError("memory table has no slot for worker " + std::to_string(update.worker_id));
    }
    MemorySlot& slot = memory.slots[update.worker_id];
    if (slot.initialized && update.pulled_version < slot.version) {
        return IngestResult::RejectedStale;
    }
    slot.grad = update.grad_avg;
    slot.version = update.pulled_version;
    slot.initialized = true;
    return IngestResult::Stored;
}

ParamVector afa_cs_aggregate(const ParamVector& x, const MemoryTable& memory,
                             double eta, double eta_l, int64_t round, int64_t tau_max) {
    if (memory.slots.empty()) throw ConfigError("AFA-CS aggregation needs a nonempty memory table");
    if (const int missing = memory.first_uninitialized(); missing >= 0) {
        throw WarmStartError("worker " + std::to_string(missing) +
                                 " has not reported yet; AFA-CS needs one update per slot",
                             missing);
    }
    ParamVector sum(x.size(), 0.0);
    for (size_t i = 0; i < memory.slots.size(); ++i) {
        const MemorySlot& slot = memory.slots[i];
        check_staleness(round, slot.version, tau_max, static_cast<int>(i));
        if (slot.grad.size() != x.size()) {
            throw ConfigError("slot " + std::to_string(i) + " dimension mismatch");
        }
        for (size_t j = 0; j < sum.size(); ++j) sum[j] += slot.grad[j];
    }
    const double scale = eta * eta_l / static_cast<double>(memory.slots.size());
    ParamVector next(x.size());
    for (size_t j = 0; j < x.size(); ++j) next[j] = x[j] - scale * sum[j];
    return next;
}

StepStats step_stats(std::span<const int> k_values) {
    if (k_values.empty()) throw ConfigError("step statistics need at least one K value");
    StepStats s;
    for (const int k : k_values) {
        if (k < 1) throw ConfigError("local step counts must be >= 1");
        s.inv_k += 1.0 / static_cast<double>(k);
        s.k_bar += static_cast<double>(k);
        s.k_hat_sq += static_cast<double>(k) * static_cast<double>(k);
    }
    const double inv_m = 1.0 / static_cast<double>(k_values.size());
    s.inv_k *= inv_m;
    s.k_bar *= inv_m;
    s.k_hat_sq *= inv_m;
    return s;
}

bool ConditionReport::all_pass() const {
    return std::all_of(checks.begin(), checks.end(), [](const ConditionCheck& c) { return c.pass; });
}

const char* theorem_name(TheoremId id) {
    switch (id) {
        case TheoremId::CdGeneral: return "cd-general";
        case TheoremId::CdUniform: return "cd-uniform";
        case TheoremId::Cs: return "cs";
    }
    return "?";
}

namespace {

ConditionCheck make_check(std::string label, double lhs, double rhs, bool strict) {
    ConditionCheck c;
    c.label = std::move(label);
    c.lhs = lhs;
    c.rhs = rhs;
    c.strict = strict;
    c.pass = strict ? (lhs < rhs) : (lhs <= rhs);
    return c;
}

struct RoundAverages {
    double inv_k = 0.0;     // avg over rounds of (1/m) sum 1/K
    double k_bar = 0.0;     // avg over rounds of mean K
    double k_hat_sq = 0.0;  // avg over rounds of mean K^2
    double sum_k_sq = 0.0;  // avg over rounds of sum K^2 (CS condition 3)
    int k_max = 1;
    double worst_k_hat_sq = 0.0;
    double worst_sum_k_sq = 0.0;
};

RoundAverages averages(const std::vector<std::vector<int>>& k_rounds) {
    if (k_rounds.empty()) throw ConfigError("condition check needs at least one round of K values");
    RoundAverages a;
    for (const auto& ks : k_rounds) {
        const StepStats s = step_stats(ks);
        a.inv_k += s.inv_k;
        a.k_bar += s.k_bar;
        a.k_hat_sq += s.k_hat_sq;
        const double sum_sq = s.k_hat_sq * static_cast<double>(ks.size());
        a.sum_k_sq += sum_sq;
        a.worst_k_hat_sq = std::max(a.worst_k_hat_sq, s.k_hat_sq);
        a.worst_sum_k_sq = std::max(a.worst_sum_k_sq, sum_sq);
        for (const int k : ks) a.k_max = std::max(a.k_max, k);
    }
    const double inv_t = 1.0 / static_cast<double>(k_rounds.size());
    a.inv_k *= inv_t;
    a.k_bar *= inv_t;
    a.k_hat_sq *= inv_t;
    a.sum_k_sq *= inv_t;
    return a;
}

}  // namespace

ConditionReport check_lr_conditions(TheoremId theorem, const LrCheckInputs& in) {
    if (!(in.eta > 0.0) || !(in.eta_l > 0.0) || !(in.lipschitz > 0.0)) {
        throw ConfigError("condition check needs positive eta, eta_l and L");
    }
    const double eta = in.eta;
    const double eta_l = in.eta_l;
    const double L = in.lipschitz;
    const double tau = static_cast<double>(in.tau);
    const RoundAverages avg = averages(in.k_rounds);
    const double k_max = static_cast<double>(avg.k_max);

    ConditionReport report;
    report.theorem = theorem;
    double floor_factor = 4.0;

    // Local-drift condition shared by all three theorems, at the worst-case K.
    const double drift_lhs =
        6.0 * eta_l * eta_l * (2.0 * k_max * k_max - 3.0 * k_max + 1.0) * L * L;
    report.checks.push_back(make_check("6*etaL^2*(2K^2-3K+1)*L^2 <= 1", drift_lhs, 1.0, false));

    switch (theorem) {
        case TheoremId::CdGeneral: {
            report.checks.push_back(make_check(
                "180*etaL^2*K^2*L^2*tau < 1",
                180.0 * eta_l * eta_l * k_max * k_max * L * L * tau, 1.0, true));
            report.checks.push_back(make_check(
                "2*L*eta*etaL + 6*tau^2*L^2*eta^2*etaL^2 <= 1",
                2.0 * L * eta * eta_l + 6.0 * tau * tau * L * L * eta * eta * eta_l * eta_l, 1.0,
                false));
            const double m = static_cast<double>(in.m);
            report.alpha_l = (L * eta * eta_l / m) * avg.inv_k +
                             (3.0 * tau * tau * L * L * eta * eta * eta_l * eta_l / m) * avg.inv_k +
                             (15.0 * eta_l * eta_l * L * L / 2.0) * avg.k_bar;
            report.alpha_g = 1.5 + 45.0 * L * L * eta_l * eta_l * avg.k_hat_sq;
            break;
        }
        case TheoremId::CdUniform: {
            report.checks.push_back(make_check(
                "L*eta*etaL + L^2*eta^2*etaL^2*tau^2 <= 1/(2M)",
                L * eta * eta_l + L * L * eta * eta * eta_l * eta_l * tau * tau,
                1.0 / (2.0 * static_cast<double>(in.M)), false));
            report.checks.push_back(make_check(
                "120*L^2*Khat^2*etaL^2*tau < 1",
                120.0 * L * L * avg.worst_k_hat_sq * eta_l * eta_l * tau, 1.0, true));
            const double m = static_cast<double>(in.m);
            report.alpha_l = (L * eta * eta_l / m) * avg.inv_k +
                             (2.0 * tau * tau * L * L * eta * eta * eta_l * eta_l / m) * avg.inv_k +
                             5.0 * eta_l * eta_l * L * L * avg.k_bar;
            report.alpha_g = 30.0 * L * L * eta_l * eta_l * avg.k_hat_sq;
            break;
        }
        case TheoremId::Cs: {
            const double M = static_cast<double>(in.M);
            const double lag = static_cast<double>(in.M - in.m_prime);
            report.checks.push_back(make_check(
                "(eta*etaL*(M-m')^2*L^2*tau^2/M^2 + L/2)*eta*etaL <= 1/4",
                (eta * eta_l * lag * lag * L * L * tau * tau / (M * M) + L / 2.0) * eta * eta_l,
                0.25, false));
            report.checks.push_back(make_check(
                "30*L^2*etaL^2*tau/M * sum(K^2) <= 1/4",
                (30.0 * L * L * eta_l * eta_l * tau / M) * avg.worst_sum_k_sq, 0.25, false));
            report.alpha_l =
                (4.0 / M) *
                (5.0 * L * L * eta_l * eta_l * avg.k_bar +
                 (2.0 * eta * eta * eta_l * eta_l * lag * lag * L * L * tau * tau / (M * M) +
                  L * eta * eta_l) *
                     avg.inv_k);
            report.alpha_g = (120.0 * L * L * eta_l * eta_l / M) * avg.k_hat_sq;
            floor_factor = 1.0;
            break;
        }
    }
    report.error_floor =
        floor_factor * (report.alpha_l * in.sigma_l * in.sigma_l + report.alpha_g * in.sigma_g * in.sigma_g);
    return report;
}

}  // namespace afl
