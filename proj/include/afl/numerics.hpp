#pragma once

#include <variant>
#include <vector>

#include "afl/data.hpp"
#include "afl/rng.hpp"

namespace afl {

using ParamVector = std::vector<double>;

// f_i(x) = 0.5 * ||x - center||^2
struct Quadratic {
    ParamVector center;
};

// One arm of the two-worker lower-bound pair: f(x) = (x - sign * shift)^2,
// so sign = -1 gives (x + G)^2 and sign = +1 gives (x - G)^2 (1-d).
struct ShiftedSquare {
    int sign = -1;
    double shift = 1.0;
};

// Multinomial logistic regression, softmax cross-entropy, optional ridge term.
// Parameters are laid out as classes rows of (dim weights + 1 bias).
struct LogReg {
    int dim = 0;
    int classes = 0;
    double l2 = 0.0;
};

using ModelSpec = std::variant<Quadratic, ShiftedSquare, LogReg>;

int param_dim(const ModelSpec& model);

// A worker's local data. Synthetic families (Quadratic, ShiftedSquare) carry
// no data and leave both pointers null.
struct LocalData {
    const Dataset* dataset = nullptr;
    const Partition* part = nullptr;

    bool empty() const { return part == nullptr || part->indices.empty(); }
    int64_t size() const { return part == nullptr ? 0 : static_cast<int64_t>(part->indices.size()); }
};

struct GradSample {
    ParamVector grad;
    bool is_stochastic = false;
    int batch_size = 0;
};

// Exact local gradient over the worker's full data; deterministic.
ParamVector full_gradient(const ModelSpec& model, const LocalData& data, const ParamVector& x);

// Unbiased stochastic gradient. LogReg subsamples a batch without replacement;
// the synthetic families add isotropic N(0, sigma_l^2) noise to the exact gradient.
GradSample stochastic_gradient(const ModelSpec& model, const LocalData& data, const ParamVector& x,
                               int batch_size, double sigma_l, Rng& rng);

double loss_eval(const ModelSpec& model, const LocalData& data, const ParamVector& x);

// Max over coordinates of |central difference - analytic| / (|analytic| + h).
double finite_diff_check(const ModelSpec& model, const LocalData& data, const ParamVector& x, double h);

// Fraction of `data` classified correctly by a LogReg parameter vector.
double logreg_accuracy(const LogReg& model, const Dataset& dataset,
                       std::span<const int64_t> indices, const ParamVector& x);

}  // namespace afl
