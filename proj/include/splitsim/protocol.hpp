#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "splitsim/common.hpp"
#include "splitsim/model.hpp"
#include "splitsim/rng.hpp"
#include "splitsim/zo.hpp"

namespace splitsim {

/// Uplink message for one round: the unperturbed cut-layer embedding plus
/// one +/- pair per perturbation (one pair in the default single-probe
/// configuration, so three matrices total), and the batch labels.
struct UpLink {
    Matrix h;
    std::vector<Matrix> h_plus;
    std::vector<Matrix> h_minus;
    std::vector<int> labels;
    std::uint64_t round_nonce = 0;

    std::size_t num_perturbations() const { return h_plus.size(); }
    std::size_t matrix_count() const { return 1 + h_plus.size() + h_minus.size(); }
};

/// Downlink message: one loss difference per perturbation. A single probe
/// means the entire feedback for a round is one scalar.
struct DownLink {
    std::vector<double> deltas;
    std::uint64_t round_nonce = 0;

    std::size_t scalar_count() const { return deltas.size(); }
};

struct ClientRoundState {
    std::vector<double> params;
    std::vector<Direction> directions;
    Batch batch;
    double eta_c = 0.0;
    double lambda = 0.0;
    std::uint64_t round_nonce = 0;
};

struct ServerRoundState {
    std::vector<double> params;
    long long tau = 1;
    long long steps_done = 0;
    double eta_s = 0.0;
    double lambda = 0.0;
    long long num_perturbations = 1;
};

/// Per-pair-round instrumentation counters.
struct PairRoundStats {
    long long client_forward_passes = 0;
    long long server_loss_evals = 0;
    long long uplink_matrices = 0;
    long long uplink_scalars = 0;
    long long downlink_scalars = 0;
};

/// Fresh client round state; directions are sampled fresh every round.
inline ClientRoundState make_client_round_state(std::vector<double> client_params, Batch batch,
                                                double eta_c, double lambda,
                                                long long num_perturbations, RngStream& rng,
                                                std::uint64_t round_nonce) {
    if (num_perturbations < 1) throw Error("client round needs at least one perturbation");
    ClientRoundState state;
    state.params = std::move(client_params);
    state.batch = std::move(batch);
    state.eta_c = eta_c;
    state.lambda = lambda;
    state.round_nonce = round_nonce;
    state.directions.reserve(static_cast<std::size_t>(num_perturbations));
    for (long long p = 0; p < num_perturbations; ++p) {
        state.directions.push_back(sample_direction(state.params.size(), rng));
    }
    return state;
}

/// Client phase 1: unperturbed and +/- perturbed cut-layer embeddings.
/// Perturbations act on a scratch copy; the client parameters are not
/// touched until the downlink arrives.
inline UpLink client_emit_embeddings(const SplitModel& model, const ClientRoundState& state,
                                     PairRoundStats* stats = nullptr) {
    UpLink up;
    up.round_nonce = state.round_nonce;
    up.labels = state.batch.labels;
    up.h = model.forward_client(state.params, state.batch.inputs);
    if (stats) ++stats->client_forward_passes;

    std::vector<double> probe(state.params.size());
    for (const Direction& u : state.directions) {
        if (u.dim() != state.params.size()) throw Error("client direction dimension mismatch");
        for (std::size_t i = 0; i < probe.size(); ++i) {
            probe[i] = state.params[i] + state.lambda * u.coords[i];
        }
        up.h_plus.push_back(model.forward_client(probe, state.batch.inputs));
        for (std::size_t i = 0; i < probe.size(); ++i) {
            probe[i] = state.params[i] - state.lambda * u.coords[i];
        }
        up.h_minus.push_back(model.forward_client(probe, state.batch.inputs));
        if (stats) stats->client_forward_passes += 2;
    }
    if (stats) {
        stats->uplink_matrices += static_cast<long long>(up.matrix_count());
        stats->uplink_scalars +=
            static_cast<long long>(up.matrix_count() * up.h.rows * up.h.cols + up.labels.size());
    }
    return up;
}

/// tau local server steps, every one of them against the same stale
/// unperturbed embedding. ServerLossFn has the shape
/// double(params, embedding, labels); each step costs two evaluations per
/// perturbation.
template <typename ServerLossFn>
void server_unbalanced_update(ServerRoundState& state, const Matrix& h,
                              const std::vector<int>& labels, RngStream& rng,
                              ServerLossFn&& loss_fn, PairRoundStats* stats = nullptr) {
    if (state.tau < 1) throw Error("server update requires tau >= 1");
    if (state.num_perturbations < 1) throw Error("server update needs at least one perturbation");

    auto loss_at = [&](const std::vector<double>& params) {
        if (stats) ++stats->server_loss_evals;
        return loss_fn(params, h, labels);
    };

    for (long long step = 0; step < state.tau; ++step) {
        std::vector<Direction> directions;
        directions.reserve(static_cast<std::size_t>(state.num_perturbations));
        for (long long p = 0; p < state.num_perturbations; ++p) {
            directions.push_back(sample_direction(state.params.size(), rng));
        }
        ZoEstimate est;
        try {
            est = zo_estimate_averaged(loss_at, state.params, directions, state.lambda);
        } catch (const Error& e) {
            throw Error("server local step " + std::to_string(step) + ": " + e.what());
        }
        for (std::size_t i = 0; i < state.params.size(); ++i) {
            state.params[i] -= state.eta_s * est.gradient[i];
        }
        ++state.steps_done;
    }
}

/// Loss differences on the perturbed embeddings, evaluated at the
/// post-update server parameters. Two evaluations per perturbation.
template <typename ServerLossFn>
DownLink server_emit_delta(const ServerRoundState& state, const UpLink& up,
                           ServerLossFn&& loss_fn, PairRoundStats* stats = nullptr) {
    if (state.steps_done != state.tau) {
        throw Error("server must complete all " + std::to_string(state.tau) +
                    " local steps before emitting the client delta (done " +
                    std::to_string(state.steps_done) + ")");
    }
    if (up.h_plus.size() != up.h_minus.size()) throw Error("uplink perturbation lists disagree");

    DownLink down;
    down.round_nonce = up.round_nonce;
    for (std::size_t p = 0; p < up.h_plus.size(); ++p) {
        const double loss_plus = loss_fn(state.params, up.h_plus[p], up.labels);
        const double loss_minus = loss_fn(state.params, up.h_minus[p], up.labels);
        if (stats) stats->server_loss_evals += 2;
        if (!std::isfinite(loss_plus) || !std::isfinite(loss_minus)) {
            throw Error("non-finite loss while computing the client delta");
        }
        down.deltas.push_back(loss_plus - loss_minus);
    }
    if (stats) stats->downlink_scalars += static_cast<long long>(down.deltas.size());
    return down;
}

/// Client update: x_c <- x_c - eta_c * mean_p (delta_p / 2 lambda) u_p.
/// The displacement is an exact linear combination of the round's
/// directions; with one perturbation it is rank one.
inline void client_apply_update(ClientRoundState& state, const DownLink& down) {
    if (down.round_nonce != state.round_nonce) {
        throw Error("downlink nonce " + std::to_string(down.round_nonce) +
                    " does not match round nonce " + std::to_string(state.round_nonce));
    }
    if (down.deltas.size() != state.directions.size()) {
        throw Error("downlink carries " + std::to_string(down.deltas.size()) +
                    " deltas for " + std::to_string(state.directions.size()) + " perturbations");
    }
    if (!(state.lambda > 0.0)) throw Error("client update requires lambda > 0");
    const double inv_count = 1.0 / static_cast<double>(down.deltas.size());
    for (std::size_t p = 0; p < down.deltas.size(); ++p) {
        if (!std::isfinite(down.deltas[p])) throw Error("downlink delta is not finite");
        const double coeff = state.eta_c * (down.deltas[p] / (2.0 * state.lambda)) * inv_count;
        const Direction& u = state.directions[p];
        for (std::size_t i = 0; i < state.params.size(); ++i) {
            state.params[i] -= coeff * u.coords[i];
        }
    }
}

struct RoundParams {
    long long tau = 1;
    double eta_c = 0.0;
    double eta_s = 0.0;
    double lambda = 0.005;
    long long num_perturbations = 1;
};

struct PairRoundResult {
    std::vector<double> client_params;
    std::vector<double> server_params;
    PairRoundStats stats;
    double train_loss = 0.0;
};

/// One full client-server round against the given starting parameters.
/// train_loss is instrumentation (the round-start loss on the unperturbed
/// embedding) and does not count against the protocol evaluation budget.
using MessageObserver = std::function<void(const UpLink&, const DownLink&)>;

inline PairRoundResult run_pair_round(const SplitModel& model,
                                      const std::vector<double>& client_params,
                                      const std::vector<double>& server_params,
                                      Batch batch, const RoundParams& params,
                                      RngStream& client_rng, RngStream& server_rng,
                                      std::uint64_t round_nonce,
                                      const MessageObserver& observer = {}) {
    PairRoundResult result;
    ClientRoundState client = make_client_round_state(client_params, std::move(batch),
                                                      params.eta_c, params.lambda,
                                                      params.num_perturbations, client_rng,
                                                      round_nonce);
    const UpLink up = client_emit_embeddings(model, client, &result.stats);

    ServerRoundState server;
    server.params = server_params;
    server.tau = params.tau;
    server.eta_s = params.eta_s;
    server.lambda = params.lambda;
    server.num_perturbations = params.num_perturbations;

    auto loss_fn = [&model](const std::vector<double>& p, const Matrix& embedding,
                            const std::vector<int>& labels) {
        return model.forward_server_loss(p, embedding, labels);
    };
    result.train_loss = model.forward_server_loss(server.params, up.h, up.labels);

    server_unbalanced_update(server, up.h, up.labels, server_rng, loss_fn, &result.stats);
    const DownLink down = server_emit_delta(server, up, loss_fn, &result.stats);
    client_apply_update(client, down);
    if (observer) observer(up, down);

    result.client_params = std::move(client.params);
    result.server_params = std::move(server.params);
    return result;
}

}  // namespace splitsim
