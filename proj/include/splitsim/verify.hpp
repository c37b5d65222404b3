#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <functional>
#include <string>
#include <vector>

#include "splitsim/common.hpp"
#include "splitsim/config.hpp"
#include "splitsim/rng.hpp"
#include "splitsim/sim.hpp"
#include "splitsim/zo.hpp"

namespace splitsim {

/// One verified property: `measured` must stay within `bound`.
struct PropertyCheck {
    std::string name;
    double measured = 0.0;
    double bound = 0.0;
    bool pass = false;
};

namespace detail {

struct MomentAccumulator {
    // Per-coordinate running mean/variance plus the same for |g|^2.
    std::vector<double> mean;
    std::vector<double> m2;
    double sq_mean = 0.0;
    double sq_m2 = 0.0;
    long long count = 0;

    explicit MomentAccumulator(std::size_t dim) : mean(dim, 0.0), m2(dim, 0.0) {}

    void add(const std::vector<double>& g) {
        ++count;
        const double inv = 1.0 / static_cast<double>(count);
        double sq = 0.0;
        for (std::size_t i = 0; i < g.size(); ++i) {
            sq += g[i] * g[i];
            const double delta = g[i] - mean[i];
            mean[i] += delta * inv;
            m2[i] += delta * (g[i] - mean[i]);
        }
        const double delta = sq - sq_mean;
        sq_mean += delta * inv;
        sq_m2 += delta * (sq - sq_mean);
    }

    double coord_se(std::size_t i) const {
        const double var = m2[i] / static_cast<double>(count);
        return std::sqrt(var / static_cast<double>(count));
    }

    double sq_se() const {
        const double var = sq_m2 / static_cast<double>(count);
        return std::sqrt(var / static_cast<double>(count));
    }
};

using ScalarLoss = std::function<double(const std::vector<double>&)>;

inline MomentAccumulator sample_estimator_moments(const ScalarLoss& loss,
                                                  const std::vector<double>& x, double lambda,
                                                  long long draws, RngStream& rng) {
    MomentAccumulator acc(x.size());
    for (long long n = 0; n < draws; ++n) {
        const Direction u = sample_direction(x.size(), rng);
        acc.add(zo_estimate(loss, x, u, lambda).gradient);
    }
    return acc;
}

}  // namespace detail

/// Monte-Carlo checks of the two-point estimator's moments on smooth test
/// objectives: the estimator mean matches the smoothed gradient, its bias
/// against the plain gradient stays under (L/2) lambda d^{3/2}, and its
/// second moment stays under 2d|grad|^2 + (L^2/2) lambda^2 d^3, each with a
/// 6-standard-error Monte-Carlo margin.
inline std::vector<PropertyCheck> lemma1_suite(std::uint64_t seed, long long draws = 100000) {
    std::vector<PropertyCheck> checks;
    const std::vector<std::size_t> dims = {2, 8, 32};
    const std::vector<double> lambdas = {1e-1, 1e-2, 1e-3};

    std::uint64_t stream_id = 0;
    for (std::size_t d : dims) {
        std::vector<double> diag(d), offset(d), x(d);
        for (std::size_t i = 0; i < d; ++i) {
            diag[i] = d == 1 ? 2.0 : 0.5 + 1.5 * static_cast<double>(i) / static_cast<double>(d - 1);
            offset[i] = 0.25 * static_cast<double>(static_cast<int>(i % 3) - 1);
            x[i] = (i % 2 == 0 ? 1.0 : -1.0) * (0.5 + static_cast<double>(i) / static_cast<double>(d));
        }
        const QuadraticLoss quad = QuadraticLoss::diagonal(diag, offset);
        const double quad_smoothness = quad.smoothness();
        const std::vector<double> quad_grad = quad.gradient(x);
        const double quad_grad_sq = dot(quad_grad, quad_grad);

        const detail::ScalarLoss quad_loss = [&quad](const std::vector<double>& v) {
            return quad.value(v);
        };

        // Mean vs smoothed gradient, coordinate-wise.
        {
            RngStream rng = RngStream::derive({seed, 0, stream_id++, StreamRole::client_perturb});
            const auto acc = detail::sample_estimator_moments(quad_loss, x, 0.005, draws, rng);
            const std::vector<double> smoothed = quad.smoothed_gradient(x, 0.005);
            double worst = 0.0;
            for (std::size_t i = 0; i < d; ++i) {
                const double se = acc.coord_se(i);
                const double gap = std::abs(acc.mean[i] - smoothed[i]);
                worst = std::max(worst, se > 0.0 ? gap / se : 0.0);
            }
            checks.push_back({"estimator mean vs smoothed gradient (quadratic, d=" +
                                  std::to_string(d) + "), worst gap in standard errors",
                              worst, 6.0, worst <= 6.0});
        }

        // Cosine sum: genuinely biased smooth objective with L = 1.
        std::vector<double> cos_x(d);
        for (std::size_t i = 0; i < d; ++i) {
            cos_x[i] = 0.3 + 0.1 * static_cast<double>(i % 7);
        }
        const detail::ScalarLoss cos_loss = [](const std::vector<double>& v) {
            double s = 0.0;
            for (double c : v) s += std::cos(c);
            return s;
        };
        std::vector<double> cos_grad(d);
        for (std::size_t i = 0; i < d; ++i) cos_grad[i] = -std::sin(cos_x[i]);
        const double cos_grad_sq = dot(cos_grad, cos_grad);

        for (double lambda : lambdas) {
            const double d_real = static_cast<double>(d);
            struct Family {
                const char* tag;
                const detail::ScalarLoss* loss;
                const std::vector<double>* point;
                double smoothness;
                const std::vector<double>* grad;
                double grad_sq;
            };
            const Family families[] = {
                {"quadratic", &quad_loss, &x, quad_smoothness, &quad_grad, quad_grad_sq},
                {"cosine", &cos_loss, &cos_x, 1.0, &cos_grad, cos_grad_sq},
            };
            for (const Family& family : families) {
                RngStream rng =
                    RngStream::derive({seed, 0, stream_id++, StreamRole::client_perturb});
                const auto acc = detail::sample_estimator_moments(*family.loss, *family.point,
                                                                  lambda, draws, rng);

                double gap_sq = 0.0;
                double se_sq = 0.0;
                for (std::size_t i = 0; i < d; ++i) {
                    const double gap = acc.mean[i] - (*family.grad)[i];
                    gap_sq += gap * gap;
                    const double se = acc.coord_se(i);
                    se_sq += se * se;
                }
                const double bias_bound =
                    0.5 * family.smoothness * lambda * std::pow(d_real, 1.5) +
                    6.0 * std::sqrt(se_sq);
                checks.push_back({std::string("bias bound (") + family.tag +
                                      ", d=" + std::to_string(d) +
                                      ", lambda=" + detail::format_double(lambda) + ")",
                                  std::sqrt(gap_sq), bias_bound, std::sqrt(gap_sq) <= bias_bound});

                const double moment_bound =
                    2.0 * d_real * family.grad_sq +
                    0.5 * family.smoothness * family.smoothness * lambda * lambda * d_real *
                        d_real * d_real +
                    6.0 * acc.sq_se();
                checks.push_back({std::string("second-moment bound (") + family.tag +
                                      ", d=" + std::to_string(d) +
                                      ", lambda=" + detail::format_double(lambda) + ")",
                                  acc.sq_mean, moment_bound, acc.sq_mean <= moment_bound});
            }
        }
    }
    return checks;
}

/// Fixed-delay arithmetic of the matched-tau schedule: T1 * t_straggler
/// equals T0 * t_server whenever the times divide evenly, and the reported
/// gap is exactly the rounding error otherwise.
inline std::vector<PropertyCheck> straggler_suite() {
    std::vector<PropertyCheck> checks;

    const StragglerIdentity a = straggler_identity_check(100, 8.0, 2.0);
    checks.push_back({"matched tau for t_straggler=8, t_server=2",
                      static_cast<double>(a.tau), 4.0, a.tau == 4});
    checks.push_back({"compressed rounds T1 = ceil(100 / 4)", static_cast<double>(a.t1_rounds),
                      25.0, a.t1_rounds == 25});
    checks.push_back({"total time 25 * 8 equals 100 * 2", a.total_time, 200.0,
                      a.total_time == 200.0 && a.reference_time == 200.0});
    checks.push_back({"relative gap at exact division", a.relative_gap, 0.0,
                      a.relative_gap == 0.0});

    const StragglerIdentity b = straggler_identity_check(57, 3.0, 3.0);
    checks.push_back({"degenerate t_straggler = t_server keeps tau = 1",
                      static_cast<double>(b.tau), 1.0,
                      b.tau == 1 && b.total_time == 57.0 * 3.0 && b.relative_gap == 0.0});

    const StragglerIdentity c = straggler_identity_check(100, 7.0, 2.0);
    checks.push_back({"non-divisible times: tau rounds to 4", static_cast<double>(c.tau), 4.0,
                      c.tau == 4});
    checks.push_back({"non-divisible times: gap is exactly 12.5%", c.relative_gap, 0.125,
                      c.relative_gap == 0.125 && c.total_time == 175.0});

    bool multiples_ok = true;
    for (long long k = 1; k <= 6; ++k) {
        const StragglerIdentity m =
            straggler_identity_check(120, static_cast<double>(k) * 2.0, 2.0);
        if (m.relative_gap != 0.0 || m.tau != k) multiples_ok = false;
    }
    checks.push_back({"gap stays 0 over integer straggler/server ratios", multiples_ok ? 0.0 : 1.0,
                      0.0, multiples_ok});
    return checks;
}

/// A single client at full participation with unit global step must be
/// indistinguishable from a plain pair training loop: the per-round
/// parameter vectors agree bitwise.
inline std::vector<PropertyCheck> reduction_suite(std::uint64_t seed, long long rounds = 200) {
    ExperimentConfig cfg;
    cfg.seed = seed;
    cfg.rounds = rounds;
    cfg.eval_interval = 50;
    cfg.hidden = {6};
    cfg.activation = Activation::tanh;
    cfg.cut_auto = false;
    cfg.cut_layer = 1;
    cfg.tau = 3;
    cfg.eta_mode = EtaMode::manual;
    cfg.eta_g = 1.0;
    cfg.eta_s = 0.01;
    cfg.eta_c = 0.005;
    cfg.lambda = 0.005;
    cfg.clients = 1;
    cfg.participation = 1.0;
    cfg.batch_size = 8;
    cfg.classes = 2;
    cfg.dim = 4;
    cfg.samples_per_class = 30;
    cfg.spread = 1.0;
    cfg.iid_partition = true;
    cfg.holdout_fraction = 0.2;

    const SimResult orchestrated = run_experiment(cfg, true);
    const SimResult standalone = run_single_pair(cfg, true);

    long long mismatched_rounds = 0;
    if (orchestrated.param_trace.size() != standalone.param_trace.size()) {
        mismatched_rounds = rounds;
    } else {
        for (std::size_t t = 0; t < orchestrated.param_trace.size(); ++t) {
            const auto& a = orchestrated.param_trace[t];
            const auto& b = standalone.param_trace[t];
            if (a.size() != b.size() ||
                std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) != 0) {
                ++mismatched_rounds;
            }
        }
    }
    return {{"single-client run matches the standalone pair loop bitwise over " +
                 std::to_string(rounds) + " rounds (mismatched rounds)",
             static_cast<double>(mismatched_rounds), 0.0, mismatched_rounds == 0}};
}

}  // namespace splitsim
