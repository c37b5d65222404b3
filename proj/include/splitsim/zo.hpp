#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "splitsim/common.hpp"
#include "splitsim/rng.hpp"

namespace splitsim {

/// Perturbation direction sampled uniformly from the sphere of radius
/// sqrt(dim), so that E[u u^T] = I.
struct Direction {
    std::vector<double> coords;

    std::size_t dim() const { return coords.size(); }
};

inline Direction sample_direction(std::size_t dim, RngStream& rng) {
    if (dim == 0) throw Error("direction dimension must be positive");
    Direction u;
    u.coords.resize(dim);
    double norm = 0.0;
    do {
        for (std::size_t i = 0; i < dim; ++i) u.coords[i] = rng.normal();
        norm = l2_norm(u.coords);
    } while (norm == 0.0);
    const double radius = std::sqrt(static_cast<double>(dim));
    for (double& c : u.coords) c = (c / norm) * radius;
    return u;
}

/// Two-point gradient estimate: gradient = (delta / 2 lambda) * u with
/// delta = f(x + lambda u) - f(x - lambda u).
struct ZoEstimate {
    std::vector<double> gradient;
    double loss_plus = 0.0;
    double loss_minus = 0.0;
    double delta = 0.0;
};

/// Performs exactly two loss evaluations on scratch copies; x is never
/// mutated. Non-finite losses abort with the offending side named.
template <typename LossFn>
ZoEstimate zo_estimate(LossFn&& loss_at, const std::vector<double>& x, const Direction& u,
                       double lambda) {
    if (!(lambda > 0.0)) throw Error("zo_estimate requires lambda > 0");
    if (u.dim() != x.size()) {
        throw Error("zo_estimate direction dimension " + std::to_string(u.dim()) +
                    " does not match parameter dimension " + std::to_string(x.size()));
    }

    std::vector<double> probe(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) probe[i] = x[i] + lambda * u.coords[i];
    const double loss_plus = loss_at(probe);
    if (!std::isfinite(loss_plus)) {
        throw Error("loss at x + lambda*u is not finite (" + std::to_string(loss_plus) + ")");
    }
    for (std::size_t i = 0; i < x.size(); ++i) probe[i] = x[i] - lambda * u.coords[i];
    const double loss_minus = loss_at(probe);
    if (!std::isfinite(loss_minus)) {
        throw Error("loss at x - lambda*u is not finite (" + std::to_string(loss_minus) + ")");
    }

    ZoEstimate est;
    est.loss_plus = loss_plus;
    est.loss_minus = loss_minus;
    est.delta = loss_plus - loss_minus;
    const double scale = est.delta / (2.0 * lambda);
    est.gradient.resize(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) est.gradient[i] = scale * u.coords[i];
    return est;
}

/// Average of independent two-point estimates over the given directions.
/// With a single direction this is identical to zo_estimate.
template <typename LossFn>
ZoEstimate zo_estimate_averaged(LossFn&& loss_at, const std::vector<double>& x,
                                const std::vector<Direction>& directions, double lambda) {
    if (directions.empty()) throw Error("zo_estimate_averaged requires at least one direction");
    for (const Direction& u : directions) {
        if (u.dim() != directions.front().dim()) {
            throw Error("zo_estimate_averaged directions have mixed dimensions");
        }
    }
    if (directions.size() == 1) return zo_estimate(loss_at, x, directions.front(), lambda);

    ZoEstimate acc;
    acc.gradient.assign(x.size(), 0.0);
    for (const Direction& u : directions) {
        const ZoEstimate est = zo_estimate(loss_at, x, u, lambda);
        for (std::size_t i = 0; i < x.size(); ++i) acc.gradient[i] += est.gradient[i];
        acc.loss_plus += est.loss_plus;
        acc.loss_minus += est.loss_minus;
        acc.delta += est.delta;
    }
    const double inv = 1.0 / static_cast<double>(directions.size());
    for (double& g : acc.gradient) g *= inv;
    acc.loss_plus *= inv;
    acc.loss_minus *= inv;
    acc.delta *= inv;
    return acc;
}

struct SmoothingConfig {
    double lambda = 0.005;
    long long num_perturbations = 1;

    void validate() const {
        if (!(lambda > 0.0)) throw Error("smoothing lambda must be positive");
        if (num_perturbations < 1) throw Error("num_perturbations must be >= 1");
    }
};

/// Quadratic test objective f(x) = 0.5 x'Ax + b'x with a symmetric A.
/// Ball smoothing shifts a quadratic by a constant only, so the smoothed
/// gradient equals the plain gradient Ax + b for every smoothing radius.
class QuadraticLoss {
public:
    QuadraticLoss(Matrix a, std::vector<double> b) : a_(std::move(a)), b_(std::move(b)) {
        if (a_.rows != a_.cols) throw Error("quadratic matrix must be square");
        if (a_.rows != b_.size()) throw Error("quadratic matrix and offset sizes differ");
        for (std::size_t i = 0; i < a_.rows; ++i) {
            for (std::size_t j = i + 1; j < a_.cols; ++j) {
                if (a_.at(i, j) != a_.at(j, i)) throw Error("quadratic matrix must be symmetric");
            }
        }
    }

    static QuadraticLoss diagonal(const std::vector<double>& diag, std::vector<double> b) {
        Matrix a(diag.size(), diag.size());
        for (std::size_t i = 0; i < diag.size(); ++i) a.at(i, i) = diag[i];
        return QuadraticLoss(std::move(a), std::move(b));
    }

    std::size_t dim() const { return b_.size(); }

    double value(const std::vector<double>& x) const {
        check_dim(x);
        double s = 0.0;
        for (std::size_t i = 0; i < dim(); ++i) {
            double row = 0.0;
            for (std::size_t j = 0; j < dim(); ++j) row += a_.at(i, j) * x[j];
            s += 0.5 * x[i] * row + b_[i] * x[i];
        }
        return s;
    }

    std::vector<double> gradient(const std::vector<double>& x) const {
        check_dim(x);
        std::vector<double> g(dim());
        for (std::size_t i = 0; i < dim(); ++i) {
            double row = 0.0;
            for (std::size_t j = 0; j < dim(); ++j) row += a_.at(i, j) * x[j];
            g[i] = row + b_[i];
        }
        return g;
    }

    std::vector<double> smoothed_gradient(const std::vector<double>& x, double lambda) const {
        if (!(lambda >= 0.0)) throw Error("smoothing radius must be non-negative");
        return gradient(x);
    }

    /// Upper bound on the smoothness constant (max absolute row sum);
    /// exact for diagonal matrices.
    double smoothness() const {
        double best = 0.0;
        for (std::size_t i = 0; i < dim(); ++i) {
            double row = 0.0;
            for (std::size_t j = 0; j < dim(); ++j) row += std::abs(a_.at(i, j));
            best = std::max(best, row);
        }
        return best;
    }

    double operator()(const std::vector<double>& x) const { return value(x); }

private:
    void check_dim(const std::vector<double>& x) const {
        if (x.size() != dim()) throw Error("quadratic input dimension mismatch");
    }

    Matrix a_;
    std::vector<double> b_;
};

}  // namespace splitsim
