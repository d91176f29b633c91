#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>

#include "afl/errors.hpp"
#include "afl/sim.hpp"

using namespace afl;

namespace {

const std::vector<double> kPaperWeights = {0.19, 0.19, 0.1, 0.1, 0.1, 0.1, 0.1, 0.1, 0.01, 0.01};

// Exact inclusion probabilities of sequential proportional sampling without
// replacement, by enumerating every ordered m-tuple.
void enumerate(const std::vector<double>& probs, std::vector<int>& chosen, double prob_so_far,
               int depth, int m, std::vector<double>& inclusion) {
    if (depth == m) {
        for (const int w : chosen) inclusion[w] += prob_so_far;
        return;
    }
    double remaining = 0.0;
    for (size_t w = 0; w < probs.size(); ++w) {
        if (std::find(chosen.begin(), chosen.end(), static_cast<int>(w)) == chosen.end()) {
            remaining += probs[w];
        }
    }
    for (size_t w = 0; w < probs.size(); ++w) {
        if (std::find(chosen.begin(), chosen.end(), static_cast<int>(w)) != chosen.end()) continue;
        chosen.push_back(static_cast<int>(w));
        enumerate(probs, chosen, prob_so_far * probs[w] / remaining, depth + 1, m, inclusion);
        chosen.pop_back();
    }
}

RunConfig two_quadratics() {
    RunConfig cfg;
    cfg.family = QuadraticFamily{{{-1.0}, {1.0}}};
    cfg.workers = 2;
    cfg.collected = 2;
    cfg.arrivals = UniformArrivals{2};
    cfg.steps = ConstantSteps{1};
    cfg.sigma_l = 0.0;
    cfg.seed = 3;
    return cfg;
}

bool traces_equal(const MetricsTrace& a, const MetricsTrace& b) {
    if (a.rounds.size() != b.rounds.size() || a.diverged != b.diverged) return false;
    for (size_t i = 0; i < a.rounds.size(); ++i) {
        const RoundRecord& x = a.rounds[i];
        const RoundRecord& y = b.rounds[i];
        if (x.grad_norm_sq != y.grad_norm_sq || x.loss != y.loss || x.test_acc != y.test_acc ||
            x.stale_min != y.stale_min || x.stale_mean != y.stale_mean ||
            x.stale_max != y.stale_max || x.fresh_count != y.fresh_count ||
            x.steps.inv_k != y.steps.inv_k || x.steps.k_bar != y.steps.k_bar ||
            x.steps.k_hat_sq != y.steps.k_hat_sq) {
            return false;
        }
    }
    return true;
}

}  // namespace

TEST_CASE("arrival processes produce the documented sets") {
    Rng rng(5);
    const auto all = sample_arrivals(UniformArrivals{4}, 4, 0, rng);
    CHECK(std::set<int>(all.begin(), all.end()) == std::set<int>{0, 1, 2, 3});

    const auto single = sample_arrivals(SingleArrival{0}, 4, 17, rng);
    CHECK(single == std::vector<int>{0});

    TraceArrivals trace;
    trace.rounds = {{1, 2}, {0}};
    CHECK(sample_arrivals(trace, 4, 0, rng) == std::vector<int>{1, 2});
    CHECK(sample_arrivals(trace, 4, 1, rng) == std::vector<int>{0});
    CHECK_THROWS_AS(sample_arrivals(trace, 4, 2, rng), ConfigError);

    CHECK_THROWS_AS(sample_arrivals(WeightedArrivals{{0.5, 0.4}, 1}, 2, 0, rng), ConfigError);
}

TEST_CASE("uniform arrivals without replacement are uniform over subsets") {
    const int workers = 6;
    const int m = 3;
    const int n = 60000;
    std::vector<int> inclusion(workers, 0);
    for (int round = 0; round < n; ++round) {
        Rng rng = substream(12, static_cast<uint64_t>(round), 0, StreamTag::Arrivals);
        const auto picks = sample_arrivals(UniformArrivals{m}, workers, round, rng);
        CHECK(std::set<int>(picks.begin(), picks.end()).size() == picks.size());
        for (const int w : picks) ++inclusion[w];
    }
    for (const int count : inclusion) {
        CHECK(std::abs(count / static_cast<double>(n) - 0.5) < 0.01);
    }
}

TEST_CASE("weighted arrivals match the enumeration oracle") {
    const int m = 5;
    std::vector<double> oracle(10, 0.0);
    std::vector<int> chosen;
    enumerate(kPaperWeights, chosen, 1.0, 0, m, oracle);
    double total = 0.0;
    for (const double p : oracle) total += p;
    REQUIRE(total == doctest::Approx(m).epsilon(1e-9));

    const int n = 100000;
    std::vector<int> counts(10, 0);
    for (int round = 0; round < n; ++round) {
        Rng rng = substream(99, static_cast<uint64_t>(round), 0, StreamTag::Arrivals);
        for (const int w : sample_arrivals(WeightedArrivals{kPaperWeights, m}, 10, round, rng)) {
            ++counts[w];
        }
    }
    for (int w = 0; w < 10; ++w) {
        CAPTURE(w);
        CHECK(std::abs(counts[w] / static_cast<double>(n) - oracle[w]) < 0.01);
    }
    CHECK(counts[0] > counts[8]);
}

TEST_CASE("staleness sampling respects caps and uniformity") {
    Rng none(1);
    CHECK(sample_staleness(ZeroDelay{}, 100, 0, none) == 0);

    for (int trial = 0; trial < 200; ++trial) {
        Rng rng(trial);
        const int64_t tau = sample_staleness(UniformLastR{5}, 2, 0, rng);
        CHECK(tau >= 0);
        CHECK(tau <= 2);
    }

    const int n = 100000;
    std::vector<int> counts(5, 0);
    Rng rng(314);
    for (int i = 0; i < n; ++i) ++counts[sample_staleness(UniformLastR{5}, 1000, 0, rng)];
    for (int v = 0; v < 5; ++v) {
        CHECK(std::abs(counts[v] / static_cast<double>(n) - 0.2) < 0.01);
    }

    Rng clamp_rng(7);
    const BoundedRandomDelay late{3, {0.0, 0.0, 0.0, 1.0}};
    CHECK(sample_staleness(late, 1, 0, clamp_rng) == 1);  // capped at the round index
    CHECK(sample_staleness(late, 50, 0, clamp_rng) == 3);
}

TEST_CASE("full participation with zero delay and K=1 is one gradient-descent step") {
    RunConfig cfg = two_quadratics();
    cfg.eta = 1.0;
    cfg.eta_l = 0.1;
    cfg.rounds = 1;
    cfg.x0 = ParamVector{0.7};
    const Experiment exp = materialize(cfg);
    const RunResult res = run_experiment(exp);
    const ParamVector grad = system_gradient(exp, *cfg.x0);
    CHECK(res.final_model[0] == doctest::Approx(0.7 - 0.1 * grad[0]).epsilon(1e-15));
}

TEST_CASE("adversarial single arrivals optimize f_1 only") {
    RunConfig cfg;
    cfg.family = ShiftedSquareFamily{1.0};
    cfg.workers = 2;
    cfg.collected = 1;
    cfg.arrivals = SingleArrival{0};
    cfg.steps = ConstantSteps{1};
    cfg.eta = 1.0;
    cfg.eta_l = 0.1;
    cfg.sigma_l = 0.0;
    cfg.rounds = 200;
    cfg.seed = 1;
    const RunResult res = run_experiment(cfg);

    // x_{t+1} = x_t - 0.1 * 2(x_t + 1), replicated exactly.
    double x = 0.0;
    for (int t = 0; t < 200; ++t) x = x - 0.1 * (2.0 * (x + 1.0));
    CHECK(res.final_model[0] == x);
    CHECK(std::abs(res.final_model[0] + 1.0) < 1e-3);

    // Error floor: ||grad f||^2 stays within 1% of 4G^2 after convergence.
    for (size_t t = 100; t < res.trace.rounds.size(); ++t) {
        CHECK(res.trace.rounds[t].grad_norm_sq >= 0.99 * 4.0);
        CHECK(res.trace.rounds[t].grad_norm_sq <= 1.01 * 4.0);
    }
}

TEST_CASE("AFA-CS with alternating single arrivals drives the gradient to zero") {
    RunConfig cfg = two_quadratics();
    cfg.mode = ServerMode::CrossSilo;
    cfg.collected = 1;
    TraceArrivals alternating;
    for (int t = 0; t < 500; ++t) alternating.rounds.push_back({t % 2});
    cfg.arrivals = std::move(alternating);
    cfg.delay = ZeroDelay{};
    cfg.tau_max = 1;
    cfg.eta = 4.0;
    cfg.eta_l = 0.05;
    cfg.rounds = 500;
    cfg.x0 = ParamVector{3.0};

    // The configured rates satisfy the cross-silo theorem's preconditions.
    LrCheckInputs in;
    in.eta = cfg.eta;
    in.eta_l = cfg.eta_l;
    in.lipschitz = 1.0;
    in.tau = 1;
    in.m = 1;
    in.M = 2;
    in.k_rounds = {{1, 1}};
    REQUIRE(check_lr_conditions(TheoremId::Cs, in).all_pass());

    const Experiment exp = materialize(cfg);
    const RunResult res = run_experiment(exp);
    const ParamVector grad = system_gradient(exp, res.final_model);
    CHECK(grad[0] * grad[0] < 1e-6);
    CHECK(std::abs(res.final_model[0]) < 1e-3);
}

TEST_CASE("uniform arrivals under bounded delay converge past 1e-6") {
    RunConfig cfg = two_quadratics();
    cfg.delay = UniformLastR{3};  // tau_max = 2
    cfg.eta = 2.0;
    cfg.eta_l = 0.05;
    cfg.rounds = 2000;
    cfg.x0 = ParamVector{3.0};

    LrCheckInputs in;
    in.eta = cfg.eta;
    in.eta_l = cfg.eta_l;
    in.lipschitz = 1.0;
    in.tau = 2;
    in.m = 2;
    in.M = 2;
    in.k_rounds = {{1, 1}};
    REQUIRE(check_lr_conditions(TheoremId::CdUniform, in).all_pass());

    const RunResult res = run_experiment(cfg);
    double best = 1e300;
    for (const RoundRecord& r : res.trace.rounds) best = std::min(best, r.grad_norm_sq);
    CHECK(best < 1e-6);
}

TEST_CASE("synchronous FedAvg reference reproduces AFA-CD bitwise") {
    RunConfig cfg;
    cfg.family = QuadraticFamily{{{-1.0, 0.5}, {0.0, -0.5}, {1.0, 1.0}, {2.0, -1.0}}};
    cfg.workers = 4;
    cfg.collected = 4;
    cfg.arrivals = UniformArrivals{4};
    cfg.delay = ZeroDelay{};
    cfg.steps = ConstantSteps{5};
    cfg.eta = 1.0;
    cfg.eta_l = 0.05;
    cfg.sigma_l = 0.3;
    cfg.rounds = 30;
    cfg.seed = 77;
    const RunResult sim = run_experiment(cfg);

    // Directly-coded synchronous two-sided-rate FedAvg.
    const auto& family = std::get<QuadraticFamily>(cfg.family);
    ParamVector x(2, 0.0);
    for (int64_t t = 0; t < cfg.rounds; ++t) {
        ParamVector agg(2, 0.0);
        for (int w = 0; w < cfg.workers; ++w) {
            Rng rng = substream(cfg.seed, static_cast<uint64_t>(t), static_cast<uint64_t>(w),
                                StreamTag::Worker);
            ParamVector xi = x;
            ParamVector sum(2, 0.0);
            for (int k = 0; k < 5; ++k) {
                GradSample g = stochastic_gradient(Quadratic{family.centers[w]}, {}, xi, 1,
                                                   cfg.sigma_l, rng);
                for (int j = 0; j < 2; ++j) {
                    sum[j] += g.grad[j];
                    xi[j] -= cfg.eta_l * g.grad[j];
                }
            }
            const double inv_k = 1.0 / 5.0;
            for (int j = 0; j < 2; ++j) agg[j] += sum[j] * inv_k;
        }
        const double scale = cfg.eta * cfg.eta_l / cfg.workers;
        for (int j = 0; j < 2; ++j) x[j] -= scale * agg[j];
    }
    CHECK(sim.final_model == x);
}

TEST_CASE("identical configs yield bitwise-identical traces") {
    RunConfig cfg;
    cfg.family = LogRegFamily{6, 4, 0.0};
    cfg.data = SyntheticData{400, 4.0, 100};
    cfg.workers = 8;
    cfg.collected = 3;
    cfg.classes_per_worker = 2;
    cfg.per_worker = 20;
    cfg.arrivals = WeightedArrivals{{0.2, 0.2, 0.1, 0.1, 0.1, 0.1, 0.1, 0.1}, 3};
    cfg.delay = UniformLastR{4};
    cfg.steps = DynamicUniformSteps{3};
    cfg.optimizer = FedProx{0.1};
    cfg.batch_size = 8;
    cfg.eta = 1.0;
    cfg.eta_l = 0.05;
    cfg.rounds = 40;
    cfg.seed = 2718;

    const RunResult a = run_experiment(cfg);
    const RunResult b = run_experiment(cfg);
    CHECK(a.final_model == b.final_model);
    CHECK(traces_equal(a.trace, b.trace));
    REQUIRE(a.trace.rounds.size() == 40);
    for (const RoundRecord& r : a.trace.rounds) {
        CHECK(r.stale_max <= 3);
        CHECK(std::isfinite(r.grad_norm_sq));
        CHECK(std::isfinite(r.loss));
        REQUIRE(r.test_acc.has_value());
    }
}

TEST_CASE("T=0 leaves the model untouched") {
    RunConfig cfg = two_quadratics();
    cfg.rounds = 0;
    cfg.x0 = ParamVector{0.4};
    const RunResult res = run_experiment(cfg);
    CHECK(res.trace.rounds.empty());
    CHECK(res.final_model == ParamVector{0.4});
}

TEST_CASE("nonfinite iterates truncate the trace and set the diverged flag") {
    RunConfig cfg = two_quadratics();
    cfg.eta_l = 1e200;
    cfg.steps = ConstantSteps{4};
    cfg.rounds = 10;
    cfg.x0 = ParamVector{3.0};
    const RunResult res = run_experiment(cfg);
    CHECK(res.trace.diverged);
    CHECK(res.trace.rounds.size() < 10);
    CHECK_FALSE(res.trace.divergence_note.empty());
}

TEST_CASE("scaffold and fedprox run end to end under asynchrony") {
    for (const bool scaffold : {false, true}) {
        RunConfig cfg;
        cfg.family = QuadraticFamily{{{-2.0}, {-1.0}, {1.0}, {2.0}}};
        cfg.workers = 4;
        cfg.collected = 2;
        cfg.arrivals = UniformArrivals{2};
        cfg.delay = UniformLastR{3};
        cfg.steps = ConstantSteps{3};
        cfg.optimizer = scaffold ? WorkerOptimizer{Scaffold{}} : WorkerOptimizer{FedProx{0.1}};
        cfg.eta = 1.0;
        cfg.eta_l = 0.05;
        cfg.sigma_l = 0.05;
        cfg.rounds = 150;
        cfg.seed = 11;
        cfg.x0 = ParamVector{4.0};
        const RunResult res = run_experiment(cfg);
        CHECK_FALSE(res.trace.diverged);
        CHECK(res.trace.rounds.back().grad_norm_sq < 1.0);
    }
}

namespace {

// Serialize a dataset as an IDX pair (rows x cols must equal d).
void write_idx_pair(const Dataset& ds, int rows, int cols, const std::string& images_path,
                    const std::string& labels_path) {
    auto push_be = [](std::ofstream& out, uint32_t v) {
        const unsigned char bytes[4] = {static_cast<unsigned char>(v >> 24),
                                        static_cast<unsigned char>(v >> 16),
                                        static_cast<unsigned char>(v >> 8),
                                        static_cast<unsigned char>(v)};
        out.write(reinterpret_cast<const char*>(bytes), 4);
    };
    std::ofstream img(images_path, std::ios::binary);
    push_be(img, 0x00000803u);
    push_be(img, static_cast<uint32_t>(ds.n));
    push_be(img, static_cast<uint32_t>(rows));
    push_be(img, static_cast<uint32_t>(cols));
    for (const double v : ds.features) {
        const double clamped = std::clamp(v, 0.0, 1.0);
        img.put(static_cast<char>(std::lround(clamped * 255.0)));
    }
    std::ofstream lbl(labels_path, std::ios::binary);
    push_be(lbl, 0x00000801u);
    push_be(lbl, static_cast<uint32_t>(ds.n));
    for (const int32_t label : ds.labels) lbl.put(static_cast<char>(label));
}

}  // namespace

TEST_CASE("experiments run end to end from IDX files") {
    Dataset raw = gen_synthetic_logreg(240, 4, 3, 2.0, 55);
    // Squash features into the byte range the IDX format carries.
    for (double& v : raw.features) v = 0.5 + v / 8.0;
    const auto dir = std::filesystem::temp_directory_path();
    const std::string img = (dir / "afl_sim_train_images").string();
    const std::string lbl = (dir / "afl_sim_train_labels").string();
    const std::string timg = (dir / "afl_sim_test_images").string();
    const std::string tlbl = (dir / "afl_sim_test_labels").string();
    write_idx_pair(raw, 2, 2, img, lbl);
    write_idx_pair(raw, 2, 2, timg, tlbl);

    RunConfig cfg;
    cfg.family = LogRegFamily{4, 3, 0.0};
    cfg.data = IdxData{img, lbl, timg, tlbl};
    cfg.workers = 3;
    cfg.collected = 2;
    cfg.classes_per_worker = 2;
    cfg.per_worker = 30;
    cfg.arrivals = UniformArrivals{2};
    cfg.delay = UniformLastR{2};
    cfg.steps = ConstantSteps{3};
    cfg.batch_size = 10;
    cfg.eta = 1.0;
    cfg.eta_l = 0.1;
    cfg.rounds = 25;
    cfg.seed = 14;

    const Experiment exp = materialize(cfg);
    CHECK(exp.train.n == 240);
    CHECK(exp.train.d == 4);
    CHECK(exp.has_test());
    const RunResult res = run_experiment(exp);
    CHECK_FALSE(res.trace.diverged);
    REQUIRE(res.trace.rounds.size() == 25);
    CHECK(res.trace.rounds.back().test_acc.has_value());

    // Model/dataset shape mismatches are rejected up front.
    RunConfig wrong = cfg;
    wrong.family = LogRegFamily{9, 3, 0.0};
    CHECK_THROWS_AS(materialize(wrong), ConfigError);

    for (const auto& path : {img, lbl, timg, tlbl}) std::remove(path.c_str());
}

TEST_CASE("constant witnesses match the closed forms") {
    SUBCASE("shifted-square pair") {
        RunConfig cfg;
        cfg.family = ShiftedSquareFamily{1.0};
        cfg.workers = 2;
        cfg.sigma_l = 0.0;
        Experiment exp = materialize(cfg);
        const std::vector<ParamVector> probes = {{-0.5}, {0.7}, {2.0}};
        const ConstantEstimates est = estimate_constants(exp, probes, 4, 5);
        CHECK(est.sigma_g_sq_hat == doctest::Approx(4.0).epsilon(1e-12));
        CHECK(est.l_hat == doctest::Approx(2.0).epsilon(1e-12));
        CHECK(est.sigma_l_sq_hat < 1e-12);
    }
    SUBCASE("two quadratics at +-1") {
        Experiment exp = materialize(two_quadratics());
        const std::vector<ParamVector> probes = {{0.0}, {1.5}, {1.5}};  // duplicate pair skipped
        const ConstantEstimates est = estimate_constants(exp, probes, 4, 5);
        CHECK(est.sigma_g_sq_hat == doctest::Approx(1.0).epsilon(1e-12));
        CHECK(est.l_hat == doctest::Approx(1.0).epsilon(1e-12));
    }
}
