#pragma once

#include <cstdint>
#include <deque>
#include <span>
#include <string>
#include <vector>

#include "afl/worker.hpp"

namespace afl {

enum class ServerMode { CrossDevice, CrossSilo };

// Last tau_max + 1 global models, indexed by round.
class VersionRing {
public:
    VersionRing() = default;
    VersionRing(int64_t tau_max, ParamVector x0) : capacity_(tau_max + 1) { push(0, std::move(x0)); }

    void push(int64_t round, ParamVector x);
    const ParamVector& model_at(int64_t round) const;  // throws BoundedDelayError if evicted
    int64_t newest_round() const { return base_round_ + static_cast<int64_t>(models_.size()) - 1; }
    int64_t oldest_round() const { return base_round_; }

private:
    int64_t capacity_ = 1;
    int64_t base_round_ = 0;
    std::deque<ParamVector> models_;
};

struct MemorySlot {
    ParamVector grad;
    int64_t version = -1;
    bool initialized = false;
};

struct MemoryTable {
    std::vector<MemorySlot> slots;

    explicit MemoryTable(int workers = 0) : slots(workers) {}
    bool all_initialized() const;
    int first_uninitialized() const;  // -1 when none
};

enum class IngestResult { Stored, RejectedStale };

struct ServerState {
    int64_t round = 0;
    ParamVector model;
    VersionRing ring;
    ServerMode mode = ServerMode::CrossDevice;
    MemoryTable memory;  // CS only

    // Scaffold variates, kept here because the server owns them between
    // participations (empty unless the worker optimizer is Scaffold).
    std::vector<ParamVector> scaffold_ci;
    ParamVector scaffold_c;
};

// x - eta * eta_l * mean(G_i), summed in worker-id-ascending order.
// Every update must satisfy round - pulled_version <= tau_max.
ParamVector afa_cd_aggregate(const ParamVector& x, std::span<const WorkerUpdate> updates,
                             double eta, double eta_l, int64_t round, int64_t tau_max);

// Store (or refresh) worker i's slot; a version older than the stored one is
// rejected and leaves the memory unchanged.
IngestResult afa_cs_ingest(MemoryTable& memory, const WorkerUpdate& update);

// x - eta * eta_l * mean over all M slots; requires every slot initialized
// and no slot older than tau_max rounds.
ParamVector afa_cs_aggregate(const ParamVector& x, const MemoryTable& memory,
                             double eta, double eta_l, int64_t round, int64_t tau_max);

struct StepStats {
    double inv_k = 0.0;     // (1/m) * sum 1/K_i
    double k_bar = 0.0;     // mean
    double k_hat_sq = 0.0;  // mean of squares
};

StepStats step_stats(std::span<const int> k_values);

enum class TheoremId { CdGeneral, CdUniform, Cs };

struct ConditionCheck {
    std::string label;
    double lhs = 0.0;
    double rhs = 0.0;
    bool strict = false;  // pass requires lhs < rhs instead of <=
    bool pass = false;
};

struct ConditionReport {
    TheoremId theorem = TheoremId::CdGeneral;
    std::vector<ConditionCheck> checks;
    double alpha_l = 0.0;
    double alpha_g = 0.0;
    // Non-vanishing part of the bound: factor * (alpha_l sigma_l^2 + alpha_g sigma_g^2),
    // factor 4 for the CD theorems and 1 for CS.
    double error_floor = 0.0;

    bool all_pass() const;
};

struct LrCheckInputs {
    double eta = 1.0;
    double eta_l = 0.1;
    double lipschitz = 1.0;
    int64_t tau = 0;
    int m = 1;   // collected updates per round (CD)
    int M = 1;   // total workers (CS / uniform)
    int m_prime = 0;  // fresh-worker count for the CS theorem; 0 = worst case
    // One list of local-step counts per round; a single list is treated as
    // the same (worst-case) round repeated.
    std::vector<std::vector<int>> k_rounds;
    double sigma_l = 0.0;
    double sigma_g = 0.0;
    int64_t rounds = 1;  // T
};

// Evaluates the selected theorem's learning-rate inequalities exactly as
// printed and the matching alpha_L / alpha_G constants.
ConditionReport check_lr_conditions(TheoremId theorem, const LrCheckInputs& in);

const char* theorem_name(TheoremId id);

}  // namespace afl
