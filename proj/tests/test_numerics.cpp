#include <doctest.h>

#include <cmath>

#include "afl/errors.hpp"
#include "afl/numerics.hpp"

using namespace afl;

namespace {

LocalData whole_dataset(const Dataset& ds, Partition& part) {
    part.owner = 0;
    part.indices.clear();
    for (int64_t i = 0; i < ds.n; ++i) part.indices.push_back(i);
    return {&ds, &part};
}

double norm(const ParamVector& v) {
    double s = 0.0;
    for (const double x : v) s += x * x;
    return std::sqrt(s);
}

}  // namespace

TEST_CASE("full gradient matches closed forms") {
    CHECK(full_gradient(Quadratic{{0.0, 0.0}}, {}, {0.0, 0.0}) == ParamVector{0.0, 0.0});
    CHECK(full_gradient(Quadratic{{3.0}}, {}, {1.0}) == ParamVector{-2.0});
    CHECK(full_gradient(ShiftedSquare{-1, 1.0}, {}, {0.0}) == ParamVector{2.0});
    CHECK(full_gradient(ShiftedSquare{+1, 1.0}, {}, {0.0}) == ParamVector{-2.0});
}

TEST_CASE("gradients reject dimension mismatches and empty data") {
    CHECK_THROWS_AS(full_gradient(Quadratic{{0.0, 0.0}}, {}, {1.0}), ConfigError);
    CHECK_THROWS_AS(loss_eval(ShiftedSquare{-1, 1.0}, {}, {1.0, 2.0}), ConfigError);
    CHECK_THROWS_AS(full_gradient(LogReg{3, 2, 0.0}, {}, ParamVector(8, 0.0)), DataError);
}

TEST_CASE("full-batch stochastic gradient equals the exact gradient") {
    const Dataset ds = gen_synthetic_logreg(60, 4, 3, 3.0, 11);
    Partition part;
    const LocalData data = whole_dataset(ds, part);
    const LogReg model{4, 3, 0.0};
    ParamVector x(param_dim(model));
    Rng init(3);
    for (double& v : x) v = init.next_double() - 0.5;

    Rng rng(5);
    const GradSample s = stochastic_gradient(model, data, x, static_cast<int>(ds.n), 0.0, rng);
    CHECK(s.grad == full_gradient(model, data, x));
    CHECK(s.is_stochastic);

    Rng rng2(5);
    const GradSample noiseless =
        stochastic_gradient(Quadratic{{1.0, -1.0}}, {}, {0.5, 0.5}, 1, 0.0, rng2);
    CHECK(noiseless.grad == full_gradient(Quadratic{{1.0, -1.0}}, {}, {0.5, 0.5}));

    CHECK_THROWS_AS(stochastic_gradient(model, data, x, static_cast<int>(ds.n) + 1, 0.0, rng),
                    DataError);
}

TEST_CASE("injected-noise gradient is unbiased: Monte Carlo mean") {
    const Quadratic model{{0.0}};
    const int n = 100000;
    const double sigma = 0.2;
    Rng rng(2024);
    double mean = 0.0;
    for (int i = 0; i < n; ++i) {
        mean += stochastic_gradient(model, {}, {1.0}, 1, sigma, rng).grad[0];
    }
    mean /= n;
    CHECK(std::abs(mean - 1.0) < 3.0 * sigma / std::sqrt(static_cast<double>(n)));
}

TEST_CASE("unbiasedness across families within 4 standard errors") {
    const int n = 10000;
    const Dataset ds = gen_synthetic_logreg(50, 3, 2, 3.0, 21);
    Partition part;
    const LocalData logreg_data = whole_dataset(ds, part);

    auto run = [&](const ModelSpec& model, const LocalData& data, double sigma, int batch) {
        const int dim = param_dim(model);
        ParamVector x(dim, 0.25);
        const ParamVector exact = full_gradient(model, data, x);
        std::vector<double> sum(dim, 0.0), sum_sq(dim, 0.0);
        for (int i = 0; i < n; ++i) {
            Rng rng(1000 + i);
            const GradSample s = stochastic_gradient(model, data, x, batch, sigma, rng);
            for (int j = 0; j < dim; ++j) {
                sum[j] += s.grad[j];
                sum_sq[j] += s.grad[j] * s.grad[j];
            }
        }
        for (int j = 0; j < dim; ++j) {
            const double mean = sum[j] / n;
            const double var = std::max(sum_sq[j] / n - mean * mean, 0.0);
            const double se = std::sqrt(var / n);
            CAPTURE(j);
            CHECK(std::abs(mean - exact[j]) <= 4.0 * se + 1e-12);
        }
    };
    run(Quadratic{{0.3, -0.7}}, {}, 0.5, 1);
    run(ShiftedSquare{-1, 1.0}, {}, 0.3, 1);
    run(LogReg{3, 2, 0.0}, logreg_data, 0.0, 5);
}

TEST_CASE("loss values match closed forms") {
    // f = (f_1 + f_2) / 2 = x^2 + G^2 at x = 0.
    const double f1 = loss_eval(ShiftedSquare{-1, 1.0}, {}, {0.0});
    const double f2 = loss_eval(ShiftedSquare{+1, 1.0}, {}, {0.0});
    CHECK((f1 + f2) / 2.0 == 1.0);
    CHECK(loss_eval(Quadratic{{2.0, -1.0}}, {}, {2.0, -1.0}) == 0.0);

    // Zero weights predict uniformly: cross-entropy ln C per sample.
    const Dataset ds = gen_synthetic_logreg(40, 3, 5, 3.0, 9);
    Partition part;
    const LocalData data = whole_dataset(ds, part);
    const LogReg model{3, 5, 0.0};
    CHECK(loss_eval(model, data, ParamVector(param_dim(model), 0.0)) ==
          doctest::Approx(std::log(5.0)).epsilon(1e-12));
}

TEST_CASE("finite differences validate every family's gradient") {
    Rng rng(77);
    Partition part;
    const Dataset ds = gen_synthetic_logreg(80, 5, 4, 3.0, 33);
    const LocalData logreg_data = whole_dataset(ds, part);

    ParamVector xq(3);
    for (double& v : xq) v = 2.0 * rng.next_double() - 1.0;
    CHECK(finite_diff_check(Quadratic{{0.1, 0.2, 0.3}}, {}, xq, 1e-5) < 1e-8);
    CHECK(finite_diff_check(ShiftedSquare{-1, 1.0}, {}, {0.5}, 1e-4) < 1e-7);

    const LogReg model{5, 4, 0.01};
    for (int trial = 0; trial < 100; ++trial) {
        ParamVector x(param_dim(model));
        for (double& v : x) v = 2.0 * rng.next_double() - 1.0;
        CHECK(finite_diff_check(model, logreg_data, x, 1e-5) < 1e-5);
    }
}

TEST_CASE("smoothness witness: gradient differences bounded by L") {
    Rng rng(13);
    for (int trial = 0; trial < 200; ++trial) {
        ParamVector x(4), y(4);
        for (int j = 0; j < 4; ++j) {
            x[j] = 4.0 * rng.next_double() - 2.0;
            y[j] = 4.0 * rng.next_double() - 2.0;
        }
        const Quadratic q{{0.5, -0.5, 1.0, 0.0}};
        const ParamVector gx = full_gradient(q, {}, x);
        const ParamVector gy = full_gradient(q, {}, y);
        ParamVector diff(4), dxy(4);
        for (int j = 0; j < 4; ++j) {
            diff[j] = gx[j] - gy[j];
            dxy[j] = x[j] - y[j];
        }
        CHECK(norm(diff) <= 1.0 * norm(dxy) * (1.0 + 1e-12));

        const double sx = 4.0 * rng.next_double() - 2.0;
        const double sy = 4.0 * rng.next_double() - 2.0;
        const double gsx = full_gradient(ShiftedSquare{-1, 1.0}, {}, {sx})[0];
        const double gsy = full_gradient(ShiftedSquare{-1, 1.0}, {}, {sy})[0];
        CHECK(std::abs(gsx - gsy) <= 2.0 * std::abs(sx - sy) * (1.0 + 1e-12));
    }
}

TEST_CASE("heterogeneity witness: the shifted-square pair shows 4G^2 everywhere") {
    const double g = 1.5;
    Rng rng(99);
    for (int trial = 0; trial < 50; ++trial) {
        const double x = 10.0 * rng.next_double() - 5.0;
        const double g1 = full_gradient(ShiftedSquare{-1, g}, {}, {x})[0];
        const double g2 = full_gradient(ShiftedSquare{+1, g}, {}, {x})[0];
        const double gf = 0.5 * (g1 + g2);
        CHECK(std::abs((g1 - gf) * (g1 - gf) - 4.0 * g * g) < 1e-9);
        CHECK(std::abs((g2 - gf) * (g2 - gf) - 4.0 * g * g) < 1e-9);
    }
}
