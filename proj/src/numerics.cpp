#include "afl/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "afl/errors.hpp"

namespace afl {

namespace {

void require_dim(const ModelSpec& model, const ParamVector& x) {
    const int d = param_dim(model);
    if (static_cast<int>(x.size()) != d) {
        throw ConfigError("parameter vector has dimension " + std::to_string(x.size()) +
                          ", model expects " + std::to_string(d));
    }
}

// Softmax cross-entropy gradient accumulated over the given sample indices.
// Parameter layout: class c occupies [c*(d+1), c*(d+1)+d) weights then bias.
void logreg_accumulate(const LogReg& model, const Dataset& ds, std::span<const int64_t> indices,
                       const ParamVector& x, ParamVector& grad, double* loss) {
    const int d = model.dim;
    const int C = model.classes;
    std::vector<double> logits(C);
    for (const int64_t idx : indices) {
        const auto row = ds.row(idx);
        double max_logit = -1e300;
        for (int c = 0; c < C; ++c) {
            const double* w = x.data() + c * (d + 1);
            double z = w[d];  // bias
            for (int j = 0; j < d; ++j) z += w[j] * row[j];
            logits[c] = z;
            max_logit = std::max(max_logit, z);
        }
        double denom = 0.0;
        for (int c = 0; c < C; ++c) {
            logits[c] = std::exp(logits[c] - max_logit);
            denom += logits[c];
        }
        const int32_t y = ds.labels[idx];
        if (loss != nullptr) *loss += -std::log(logits[y] / denom);
        if (!grad.empty()) {
            for (int c = 0; c < C; ++c) {
                const double p = logits[c] / denom - (c == y ? 1.0 : 0.0);
                double* g = grad.data() + c * (d + 1);
                for (int j = 0; j < d; ++j) g[j] += p * row[j];
                g[d] += p;
            }
        }
    }
}

std::span<const int64_t> require_logreg_data(const LocalData& data) {
    if (data.empty() || data.dataset == nullptr) {
        throw DataError("logistic regression requires a nonempty local partition");
    }
    return {data.part->indices.data(), data.part->indices.size()};
}

}  // namespace

int param_dim(const ModelSpec& model) {
    if (const auto* q = std::get_if<Quadratic>(&model)) return static_cast<int>(q->center.size());
    if (std::holds_alternative<ShiftedSquare>(model)) return 1;
    const auto& lr = std::get<LogReg>(model);
    return lr.classes * (lr.dim + 1);
}

ParamVector full_gradient(const ModelSpec& model, const LocalData& data, const ParamVector& x) {
    require_dim(model, x);
    if (const auto* q = std::get_if<Quadratic>(&model)) {
        ParamVector g(x.size());
        for (size_t j = 0; j < x.size(); ++j) g[j] = x[j] - q->center[j];
        return g;
    }
    if (const auto* s = std::get_if<ShiftedSquare>(&model)) {
        return {2.0 * (x[0] - s->sign * s->shift)};
    }
    const auto& lr = std::get<LogReg>(model);
    const auto indices = require_logreg_data(data);
    ParamVector g(x.size(), 0.0);
    logreg_accumulate(lr, *data.dataset, indices, x, g, nullptr);
    const double inv_n = 1.0 / static_cast<double>(indices.size());
    for (size_t j = 0; j < g.size(); ++j) g[j] = g[j] * inv_n + lr.l2 * x[j];
    return g;
}

GradSample stochastic_gradient(const ModelSpec& model, const LocalData& data, const ParamVector& x,
                               int batch_size, double sigma_l, Rng& rng) {
    require_dim(model, x);
    if (std::holds_alternative<LogReg>(model)) {
        const auto& lr = std::get<LogReg>(model);
        const auto indices = require_logreg_data(data);
        const int64_t n = static_cast<int64_t>(indices.size());
        if (batch_size < 1 || batch_size > n) {
            throw DataError("batch size " + std::to_string(batch_size) + " exceeds partition size " +
                            std::to_string(n));
        }
        if (batch_size == n) {
            return {full_gradient(model, data, x), true, batch_size};
        }
        // Partial Fisher-Yates: a without-replacement batch, fresh per step.
        std::vector<int64_t> pool(indices.begin(), indices.end());
        std::vector<int64_t> batch(batch_size);
        for (int b = 0; b < batch_size; ++b) {
            const uint64_t pick = b + rng.next_below(static_cast<uint64_t>(n - b));
            std::swap(pool[b], pool[pick]);
            batch[b] = pool[b];
        }
        ParamVector g(x.size(), 0.0);
        logreg_accumulate(lr, *data.dataset, {batch.data(), batch.size()}, x, g, nullptr);
        const double inv_b = 1.0 / static_cast<double>(batch_size);
        for (size_t j = 0; j < g.size(); ++j) g[j] = g[j] * inv_b + lr.l2 * x[j];
        return {std::move(g), true, batch_size};
    }
    // Synthetic families: exact gradient plus isotropic noise.
    ParamVector g = full_gradient(model, data, x);
    if (sigma_l > 0.0) {
        for (double& gj : g) gj += sigma_l * rng.next_normal();
    }
    return {std::move(g), true, std::max(batch_size, 1)};
}

double loss_eval(const ModelSpec& model, const LocalData& data, const ParamVector& x) {
    require_dim(model, x);
    if (const auto* q = std::get_if<Quadratic>(&model)) {
        double acc = 0.0;
        for (size_t j = 0; j < x.size(); ++j) {
            const double diff = x[j] - q->center[j];
            acc += diff * diff;
        }
        return 0.5 * acc;
    }
    if (const auto* s = std::get_if<ShiftedSquare>(&model)) {
        const double diff = x[0] - s->sign * s->shift;
        return diff * diff;
    }
    const auto& lr = std::get<LogReg>(model);
    const auto indices = require_logreg_data(data);
    double loss = 0.0;
    ParamVector no_grad;
    logreg_accumulate(lr, *data.dataset, indices, x, no_grad, &loss);
    loss /= static_cast<double>(indices.size());
    if (lr.l2 > 0.0) {
        double sq = 0.0;
        for (const double xj : x) sq += xj * xj;
        loss += 0.5 * lr.l2 * sq;
    }
    return loss;
}

double finite_diff_check(const ModelSpec& model, const LocalData& data, const ParamVector& x, double h) {
    if (h <= 0.0) throw ConfigError("finite difference step must be positive");
    const ParamVector analytic = full_gradient(model, data, x);
    ParamVector probe = x;
    double worst = 0.0;
    for (size_t j = 0; j < x.size(); ++j) {
        probe[j] = x[j] + h;
        const double f_plus = loss_eval(model, data, probe);
        probe[j] = x[j] - h;
        const double f_minus = loss_eval(model, data, probe);
        probe[j] = x[j];
        const double central = (f_plus - f_minus) / (2.0 * h);
        const double rel = std::abs(central - analytic[j]) / (std::abs(analytic[j]) + h);
        worst = std::max(worst, rel);
    }
    return worst;
}

double logreg_accuracy(const LogReg& model, const Dataset& dataset,
                       std::span<const int64_t> indices, const ParamVector& x) {
    const int d = model.dim;
    const int C = model.classes;
    int64_t correct = 0;
    for (const int64_t idx : indices) {
        const auto row = dataset.row(idx);
        int best = 0;
        double best_z = -1e300;
        for (int c = 0; c < C; ++c) {
            const double* w = x.data() + c * (d + 1);
            double z = w[d];
            for (int j = 0; j < d; ++j) z += w[j] * row[j];
            if (z > best_z) {
                best_z = z;
                best = c;
            }
        }
        if (best == dataset.labels[idx]) ++correct;
    }
    return indices.empty() ? 0.0 : static_cast<double>(correct) / static_cast<double>(indices.size());
}

}  // namespace afl
