#include "afl/sim.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <iostream>
#include <numeric>

#include "afl/errors.hpp"

namespace afl {

ModelSpec worker_model(const ModelFamily& family, int worker) {
    if (const auto* q = std::get_if<QuadraticFamily>(&family)) {
        if (worker < 0 || worker >= static_cast<int>(q->centers.size())) {
            throw ConfigError("no quadratic center for worker " + std::to_string(worker));
        }
        return Quadratic{q->centers[worker]};
    }
    if (const auto* s = std::get_if<ShiftedSquareFamily>(&family)) {
        if (worker < 0 || worker > 1) {
            throw ConfigError("the shifted-square pair has exactly two workers");
        }
        return ShiftedSquare{worker == 0 ? -1 : +1, s->shift};
    }
    const auto& lr = std::get<LogRegFamily>(family);
    return LogReg{lr.dim, lr.classes, lr.l2};
}

int family_param_dim(const ModelFamily& family) {
    return param_dim(worker_model(family, 0));
}

int64_t delay_bound(const DelayModel& delay) {
    if (std::holds_alternative<ZeroDelay>(delay)) return 0;
    if (const auto* u = std::get_if<UniformLastR>(&delay)) return u->r - 1;
    return std::get<BoundedRandomDelay>(delay).tau_max;
}

int64_t RunConfig::effective_tau_max() const {
    return tau_max.value_or(delay_bound(delay));
}

std::vector<int> sample_arrivals(const ArrivalProcess& process, int workers, int64_t round, Rng& rng) {
    if (const auto* u = std::get_if<UniformArrivals>(&process)) {
        if (u->m < 1 || u->m > workers) throw ConfigError("uniform arrivals need 1 <= m <= M");
        std::vector<int> ids(workers);
        std::iota(ids.begin(), ids.end(), 0);
        std::vector<int> out(u->m);
        for (int j = 0; j < u->m; ++j) {
            const uint64_t pick = j + rng.next_below(static_cast<uint64_t>(workers - j));
            std::swap(ids[j], ids[pick]);
            out[j] = ids[j];
        }
        return out;
    }
    if (const auto* w = std::get_if<WeightedArrivals>(&process)) {
        if (static_cast<int>(w->probs.size()) != workers) {
            throw ConfigError("weighted arrivals need one probability per worker");
        }
        if (w->m < 1 || w->m > workers) throw ConfigError("weighted arrivals need 1 <= m <= M");
        double total = 0.0;
        for (const double p : w->probs) {
            if (p < 0.0) throw ConfigError("arrival probabilities must be nonnegative");
            total += p;
        }
        if (std::abs(total - 1.0) > 1e-12) {
            throw ConfigError("arrival probabilities must sum to 1");
        }
        // Sequential proportional draws without replacement.
        std::vector<int> remaining(workers);
        std::iota(remaining.begin(), remaining.end(), 0);
        std::vector<double> mass(w->probs);
        std::vector<int> out;
        out.reserve(w->m);
        double remaining_mass = total;
        for (int draw = 0; draw < w->m; ++draw) {
            size_t chosen = remaining.size() - 1;
            if (remaining_mass > 0.0) {
                const double r = rng.next_double() * remaining_mass;
                double acc = 0.0;
                for (size_t j = 0; j < remaining.size(); ++j) {
                    acc += mass[remaining[j]];
                    if (r < acc) {
                        chosen = j;
                        break;
                    }
                }
            } else {
                chosen = static_cast<size_t>(rng.next_below(remaining.size()));
            }
            const int worker = remaining[chosen];
            out.push_back(worker);
            remaining_mass -= mass[worker];
            remaining.erase(remaining.begin() + static_cast<std::ptrdiff_t>(chosen));
        }
        return out;
    }
    if (const auto* s = std::get_if<SingleArrival>(&process)) {
        if (s->worker < 0 || s->worker >= workers) throw ConfigError("single-arrival worker out of range");
        return {s->worker};
    }
    const auto& trace = std::get<TraceArrivals>(process);
    if (round < 0 || round >= static_cast<int64_t>(trace.rounds.size())) {
        throw ConfigError("arrival trace exhausted at round " + std::to_string(round));
    }
    const auto& list = trace.rounds[round];
    if (list.empty()) throw ConfigError("arrival trace has an empty round " + std::to_string(round));
    for (const int w : list) {
        if (w < 0 || w >= workers) throw ConfigError("arrival trace names worker out of range");
    }
    return list;
}

int64_t sample_staleness(const DelayModel& delay, int64_t round, int /*worker*/, Rng& rng) {
    if (std::holds_alternative<ZeroDelay>(delay)) return 0;
    if (const auto* u = std::get_if<UniformLastR>(&delay)) {
        const int64_t cap = std::min<int64_t>(u->r - 1, round);
        return static_cast<int64_t>(rng.next_below(static_cast<uint64_t>(cap + 1)));
    }
    const auto& b = std::get<BoundedRandomDelay>(delay);
    double total = 0.0;
    for (const double p : b.pmf) total += p;
    const double r = rng.next_double() * total;
    double acc = 0.0;
    int64_t value = static_cast<int64_t>(b.pmf.size()) - 1;
    for (size_t j = 0; j < b.pmf.size(); ++j) {
        acc += b.pmf[j];
        if (r < acc) {
            value = static_cast<int64_t>(j);
            break;
        }
    }
    return std::min(value, std::min(b.tau_max, round));
}

LocalData Experiment::local(int worker) const {
    if (!has_data()) return {};
    return {&train, &parts[worker]};
}

namespace {

void validate(const Experiment& exp) {
    const RunConfig& cfg = exp.cfg;
    if (cfg.workers < 1) throw ConfigError("M must be >= 1");
    if (cfg.collected < 1 || cfg.collected > cfg.workers) throw ConfigError("m must be in [1, M]");
    if (!(cfg.eta > 0.0)) throw ConfigError("eta must be positive");
    if (!(cfg.eta_l > 0.0)) throw ConfigError("eta_l must be positive");
    if (cfg.rounds < 0) throw ConfigError("T must be >= 0");
    if (cfg.sigma_l < 0.0) throw ConfigError("sigma_l must be >= 0");
    if (cfg.effective_tau_max() < delay_bound(cfg.delay)) {
        throw ConfigError("tau_max is below the delay model's bound");
    }
    if (const auto* q = std::get_if<QuadraticFamily>(&cfg.family)) {
        if (static_cast<int>(q->centers.size()) != cfg.workers) {
            throw ConfigError("quadratic family needs one center per worker");
        }
        for (const auto& c : q->centers) {
            if (c.size() != q->centers[0].size()) {
                throw ConfigError("quadratic centers must share one dimension");
            }
        }
    }
    if (std::holds_alternative<ShiftedSquareFamily>(cfg.family) && cfg.workers != 2) {
        throw ConfigError("the shifted-square family is a two-worker construction");
    }
    if (std::holds_alternative<LogRegFamily>(cfg.family)) {
        if (!exp.has_data()) throw ConfigError("logistic regression needs a data source");
        if (static_cast<int>(exp.parts.size()) != cfg.workers) {
            throw ConfigError("need one partition per worker");
        }
    }
    if (cfg.x0 && static_cast<int>(cfg.x0->size()) != family_param_dim(cfg.family)) {
        throw ConfigError("x0 dimension does not match the model family");
    }
}

struct RoundOutcome {
    std::vector<WorkerUpdate> updates;
    std::vector<int64_t> staleness;
    std::vector<int> k_values;
};

WorkerOptimizer optimizer_for(const ServerState& state, const RunConfig& cfg, int worker) {
    if (std::holds_alternative<Scaffold>(cfg.optimizer)) {
        return Scaffold{state.scaffold_ci[worker], state.scaffold_c};
    }
    return cfg.optimizer;
}

WorkerUpdate run_worker(const ServerState& state, const Experiment& exp, int worker, int64_t round,
                        int64_t staleness, Rng& worker_rng) {
    const RunConfig& cfg = exp.cfg;
    const int64_t pulled = round - staleness;
    const ParamVector& x_pull = state.ring.model_at(pulled);
    Rng step_rng = substream(cfg.seed, static_cast<uint64_t>(pulled), static_cast<uint64_t>(worker),
                             StreamTag::StepChoice);
    const int k = choose_local_steps(cfg.steps, worker, pulled, step_rng);
    WorkerUpdate upd = local_update(x_pull, pulled, k, cfg.eta_l, optimizer_for(state, cfg, worker),
                                    worker_model(cfg.family, worker), exp.local(worker), cfg.batch_size,
                                    cfg.sigma_l, worker_rng, cfg.record_trajectories);
    upd.worker_id = worker;
    return upd;
}

void apply_scaffold_refresh(ServerState& state, const RunConfig& cfg,
                            const std::vector<WorkerUpdate>& updates) {
    if (!std::holds_alternative<Scaffold>(cfg.optimizer)) return;
    // c <- c + (1/M) * sum of received control-variate deltas.
    ParamVector delta_sum(state.model.size(), 0.0);
    for (const WorkerUpdate& u : updates) {
        for (size_t j = 0; j < delta_sum.size(); ++j) {
            delta_sum[j] += u.scaffold_ci[j] - state.scaffold_ci[u.worker_id][j];
        }
        state.scaffold_ci[u.worker_id] = u.scaffold_ci;
    }
    const double inv_m = 1.0 / static_cast<double>(cfg.workers);
    for (size_t j = 0; j < delta_sum.size(); ++j) state.scaffold_c[j] += inv_m * delta_sum[j];
}

RoundRecord observe(const Experiment& exp, const ServerState& state) {
    RoundRecord rec;
    rec.round = state.round;
    const ParamVector grad = system_gradient(exp, state.model);
    double norm_sq = 0.0;
    for (const double g : grad) norm_sq += g * g;
    rec.grad_norm_sq = norm_sq;
    rec.loss = system_loss(exp, state.model);
    if (exp.has_test()) {
        const auto& lr = std::get<LogRegFamily>(exp.cfg.family);
        std::vector<int64_t> all(exp.test.n);
        std::iota(all.begin(), all.end(), 0);
        rec.test_acc = logreg_accuracy(LogReg{lr.dim, lr.classes, lr.l2}, exp.test, all, state.model);
    }
    return rec;
}

}  // namespace

void run_round(ServerState& state, const Experiment& exp, MetricsTrace& trace) {
    const RunConfig& cfg = exp.cfg;
    const int64_t t = state.round;
    const int64_t tau_max = cfg.effective_tau_max();

    RoundRecord rec = observe(exp, state);

    Rng arrivals_rng = substream(cfg.seed, static_cast<uint64_t>(t), 0, StreamTag::Arrivals);
    const std::vector<int> arrivals = sample_arrivals(cfg.arrivals, cfg.workers, t, arrivals_rng);

    RoundOutcome outcome;
    outcome.updates.reserve(arrivals.size());
    for (const int worker : arrivals) {
        Rng delay_rng = substream(cfg.seed, static_cast<uint64_t>(t), static_cast<uint64_t>(worker),
                                  StreamTag::Delay);
        const int64_t staleness = sample_staleness(cfg.delay, t, worker, delay_rng);
        Rng worker_rng = substream(cfg.seed, static_cast<uint64_t>(t), static_cast<uint64_t>(worker),
                                   StreamTag::Worker);
        WorkerUpdate upd = run_worker(state, exp, worker, t, staleness, worker_rng);
        outcome.staleness.push_back(staleness);
        outcome.k_values.push_back(upd.k_used);
        outcome.updates.push_back(std::move(upd));
    }

    ParamVector next;
    if (state.mode == ServerMode::CrossDevice) {
        next = afa_cd_aggregate(state.model, outcome.updates, cfg.eta, cfg.eta_l, t, tau_max);
        rec.fresh_count = static_cast<int>(std::count(outcome.staleness.begin(), outcome.staleness.end(), 0));
        rec.stale_min = *std::min_element(outcome.staleness.begin(), outcome.staleness.end());
        rec.stale_max = *std::max_element(outcome.staleness.begin(), outcome.staleness.end());
        rec.stale_mean = std::accumulate(outcome.staleness.begin(), outcome.staleness.end(), 0.0) /
                         static_cast<double>(outcome.staleness.size());
    } else {
        static const bool verbose = std::getenv("AFLSIM_LOG") != nullptr;
        for (const WorkerUpdate& upd : outcome.updates) {
            if (afa_cs_ingest(state.memory, upd) == IngestResult::RejectedStale && verbose) {
                std::cerr << "[aflsim] round " << t << ": stale overwrite from worker "
                          << upd.worker_id << " rejected (slot is newer)\n";
            }
        }
        next = afa_cs_aggregate(state.model, state.memory, cfg.eta, cfg.eta_l, t, tau_max);
        // Staleness metrics describe the aggregated memory, not the arrivals.
        int64_t lo = t, hi = 0;
        double mean = 0.0;
        int fresh = 0;
        for (const MemorySlot& slot : state.memory.slots) {
            const int64_t age = t - slot.version;
            lo = std::min(lo, age);
            hi = std::max(hi, age);
            mean += static_cast<double>(age);
            if (age == 0) ++fresh;
        }
        rec.stale_min = lo;
        rec.stale_max = hi;
        rec.stale_mean = mean / static_cast<double>(state.memory.slots.size());
        rec.fresh_count = fresh;
    }
    for (const double v : next) {
        if (!std::isfinite(v)) {
            throw DivergenceError("nonfinite global model after round " + std::to_string(t),
                                  static_cast<int>(t));
        }
    }
    apply_scaffold_refresh(state, cfg, outcome.updates);
    rec.steps = step_stats(outcome.k_values);

    state.model = next;
    ++state.round;
    state.ring.push(state.round, state.model);
    trace.rounds.push_back(std::move(rec));
}

Experiment materialize(const RunConfig& cfg) {
    Experiment exp;
    exp.cfg = cfg;
    if (!std::holds_alternative<LogRegFamily>(cfg.family)) return exp;

    const auto& lr = std::get<LogRegFamily>(cfg.family);
    const uint64_t part_seed = cfg.partition_seed != 0 ? cfg.partition_seed : cfg.seed + 0x5eedULL;

    if (const auto* syn = std::get_if<SyntheticData>(&cfg.data)) {
        exp.train = gen_synthetic_logreg(syn->n, lr.dim, lr.classes, syn->separation, part_seed);
        if (syn->test_n > 0) {
            exp.test = gen_synthetic_logreg(syn->test_n, lr.dim, lr.classes, syn->separation,
                                            part_seed + 1);
        }
    } else if (const auto* idx = std::get_if<IdxData>(&cfg.data)) {
        exp.train = load_idx(idx->images, idx->labels);
        if (!idx->test_images.empty()) exp.test = load_idx(idx->test_images, idx->test_labels);
        if (exp.train.d != lr.dim || exp.train.classes > lr.classes) {
            throw ConfigError("IDX dataset shape does not match the configured model");
        }
    } else {
        throw ConfigError("logistic regression needs a data source (synthetic or idx)");
    }

    PartitionPlan plan;
    plan.workers = cfg.workers;
    plan.classes_per_worker = cfg.classes_per_worker > 0 ? cfg.classes_per_worker : exp.train.classes;
    plan.per_worker = cfg.per_worker > 0 ? cfg.per_worker : exp.train.n / cfg.workers;
    plan.seed = part_seed;
    exp.parts = partition_by_label(exp.train, plan);

    if (exp.has_test()) {
        PartitionPlan test_plan = plan;
        // Same plan shape, scaled to the test set size.
        test_plan.per_worker =
            std::max<int64_t>(1, plan.per_worker * exp.test.n / exp.train.n);
        test_plan.seed = part_seed + 2;  // independent seed
        exp.test_parts = partition_by_label(exp.test, test_plan);
    }
    return exp;
}

RunResult run_experiment(const RunConfig& cfg) { return run_experiment(materialize(cfg)); }

RunResult run_experiment(const Experiment& exp) {
    validate(exp);
    const RunConfig& cfg = exp.cfg;
    const int64_t tau_max = cfg.effective_tau_max();

    ServerState state;
    state.mode = cfg.mode;
    state.model = cfg.x0.value_or(ParamVector(family_param_dim(cfg.family), 0.0));
    state.ring = VersionRing(tau_max, state.model);
    if (cfg.mode == ServerMode::CrossSilo) state.memory = MemoryTable(cfg.workers);
    if (std::holds_alternative<Scaffold>(cfg.optimizer)) {
        state.scaffold_ci.assign(cfg.workers, ParamVector(state.model.size(), 0.0));
        state.scaffold_c.assign(state.model.size(), 0.0);
    }

    RunResult result;
    if (cfg.mode == ServerMode::CrossSilo && cfg.cs_bootstrap) {
        // Warm start: one update per worker against x_0 before round 0.
        for (int w = 0; w < cfg.workers; ++w) {
            Rng step_rng = substream(cfg.seed, 0, static_cast<uint64_t>(w), StreamTag::StepChoice);
            const int k = choose_local_steps(cfg.steps, w, 0, step_rng);
            Rng boot_rng = substream(cfg.seed, 0, static_cast<uint64_t>(w), StreamTag::Bootstrap);
            WorkerUpdate upd = local_update(state.model, 0, k, cfg.eta_l,
                                            optimizer_for(state, cfg, w), worker_model(cfg.family, w),
                                            exp.local(w), cfg.batch_size, cfg.sigma_l, boot_rng,
                                            cfg.record_trajectories);
            upd.worker_id = w;
            afa_cs_ingest(state.memory, upd);
        }
    }

    for (int64_t t = 0; t < cfg.rounds; ++t) {
        try {
            run_round(state, exp, result.trace);
        } catch (const DivergenceError& e) {
            result.trace.diverged = true;
            result.trace.divergence_note = e.what();
            break;
        }
    }
    result.final_model = state.model;
    return result;
}

double system_loss(const Experiment& exp, const ParamVector& x) {
    double acc = 0.0;
    for (int w = 0; w < exp.cfg.workers; ++w) {
        acc += loss_eval(worker_model(exp.cfg.family, w), exp.local(w), x);
    }
    return acc / static_cast<double>(exp.cfg.workers);
}

ParamVector system_gradient(const Experiment& exp, const ParamVector& x) {
    ParamVector acc(x.size(), 0.0);
    for (int w = 0; w < exp.cfg.workers; ++w) {
        const ParamVector g = full_gradient(worker_model(exp.cfg.family, w), exp.local(w), x);
        for (size_t j = 0; j < acc.size(); ++j) acc[j] += g[j];
    }
    const double inv_m = 1.0 / static_cast<double>(exp.cfg.workers);
    for (double& v : acc) v *= inv_m;
    return acc;
}

ConstantEstimates estimate_constants(const Experiment& exp, std::span<const ParamVector> probes,
                                     int samples_per_point, uint64_t seed) {
    if (probes.size() < 2) throw ConfigError("constant estimation needs at least two probe points");
    ConstantEstimates est;
    std::vector<ParamVector> system_grads;
    system_grads.reserve(probes.size());

    for (size_t p = 0; p < probes.size(); ++p) {
        const ParamVector& x = probes[p];
        const ParamVector gf = system_gradient(exp, x);
        system_grads.push_back(gf);
        for (int w = 0; w < exp.cfg.workers; ++w) {
            const ModelSpec model = worker_model(exp.cfg.family, w);
            const ParamVector gi = full_gradient(model, exp.local(w), x);
            double gap = 0.0;
            for (size_t j = 0; j < gi.size(); ++j) {
                const double d = gi[j] - gf[j];
                gap += d * d;
            }
            est.sigma_g_sq_hat = std::max(est.sigma_g_sq_hat, gap);

            if (samples_per_point > 0) {
                Rng rng = substream(seed, p, static_cast<uint64_t>(w), StreamTag::Probe);
                double mse = 0.0;
                for (int s = 0; s < samples_per_point; ++s) {
                    const GradSample sample = stochastic_gradient(
                        model, exp.local(w), x, exp.cfg.batch_size, exp.cfg.sigma_l, rng);
                    double err = 0.0;
                    for (size_t j = 0; j < gi.size(); ++j) {
                        const double d = sample.grad[j] - gi[j];
                        err += d * d;
                    }
                    mse += err;
                }
                est.sigma_l_sq_hat = std::max(est.sigma_l_sq_hat, mse / samples_per_point);
            }
        }
    }

    for (size_t a = 0; a < probes.size(); ++a) {
        for (size_t b = a + 1; b < probes.size(); ++b) {
            double dist_sq = 0.0;
            for (size_t j = 0; j < probes[a].size(); ++j) {
                const double d = probes[a][j] - probes[b][j];
                dist_sq += d * d;
            }
            if (dist_sq < 1e-24) continue;  // duplicate probe pair
            double grad_gap_sq = 0.0;
            for (size_t j = 0; j < system_grads[a].size(); ++j) {
                const double d = system_grads[a][j] - system_grads[b][j];
                grad_gap_sq += d * d;
            }
            est.l_hat = std::max(est.l_hat, std::sqrt(grad_gap_sq / dist_sq));
        }
    }
    return est;
}

}  // namespace afl
