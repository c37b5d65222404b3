#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "splitsim/common.hpp"
#include "splitsim/rng.hpp"

namespace splitsim {

/// Global model halves held by the two aggregators: the client half by the
/// federation server, the server half by the split server.
struct GlobalState {
    std::vector<double> client_params;
    std::vector<double> server_params;
    long long round = 0;
    double eta_g = 0.3;
};

struct ParticipantUpdate {
    int client_id = 0;
    std::vector<double> client_params;
    std::vector<double> server_params;
};

/// Copies handed to a pair at round start. Participants always begin from
/// the exact global parameters; nobody holds state across rounds.
struct PairInit {
    std::vector<double> client_params;
    std::vector<double> server_params;
};

inline PairInit broadcast(const GlobalState& global) {
    return {global.client_params, global.server_params};
}

/// Equal weights whose left-to-right sum is exactly 1: the last entry
/// absorbs the rounding residual of the 1/n representation.
inline std::vector<double> equal_weights(std::size_t participants) {
    if (participants == 0) throw Error("cannot weight an empty participant set");
    std::vector<double> weights(participants, 1.0 / static_cast<double>(participants));
    double partial = 0.0;
    for (std::size_t m = 0; m + 1 < participants; ++m) partial += weights[m];
    weights.back() = 1.0 - partial;
    return weights;
}

/// Both halves move by the eta_g-scaled, equally weighted mean of the
/// participant deltas, summed in ascending client id. A single participant
/// at eta_g = 1 replaces the global parameters exactly.
inline void aggregate(GlobalState& global, std::vector<ParticipantUpdate> participants) {
    if (participants.empty()) throw Error("aggregate requires at least one participant");
    std::sort(participants.begin(), participants.end(),
              [](const ParticipantUpdate& a, const ParticipantUpdate& b) {
                  return a.client_id < b.client_id;
              });
    for (const ParticipantUpdate& p : participants) {
        if (p.client_params.size() != global.client_params.size() ||
            p.server_params.size() != global.server_params.size()) {
            throw Error("participant " + std::to_string(p.client_id) +
                        " has mismatched parameter dimensions");
        }
    }

    if (global.eta_g == 1.0 && participants.size() == 1) {
        global.client_params = participants.front().client_params;
        global.server_params = participants.front().server_params;
        global.round += 1;
        return;
    }

    const std::vector<double> weights = equal_weights(participants.size());
    auto apply = [&](std::vector<double>& global_half,
                     std::vector<double> ParticipantUpdate::*half) {
        std::vector<double> acc(global_half.size(), 0.0);
        for (std::size_t m = 0; m < participants.size(); ++m) {
            const std::vector<double>& part = participants[m].*half;
            for (std::size_t i = 0; i < acc.size(); ++i) {
                acc[i] += weights[m] * (part[i] - global_half[i]);
            }
        }
        for (std::size_t i = 0; i < global_half.size(); ++i) {
            global_half[i] += global.eta_g * acc[i];
        }
    };
    apply(global.client_params, &ParticipantUpdate::client_params);
    apply(global.server_params, &ParticipantUpdate::server_params);
    global.round += 1;
}

/// ceil(fraction * M) distinct client ids, uniform without replacement,
/// returned in ascending order.
inline std::vector<int> select_participants(int num_clients, double fraction, RngStream& rng) {
    if (num_clients < 1) throw Error("selection requires at least one client");
    if (!(fraction > 0.0) || fraction > 1.0) {
        throw Error("participation fraction must lie in (0, 1]");
    }
    const auto count = static_cast<std::size_t>(
        std::ceil(fraction * static_cast<double>(num_clients)));
    const std::vector<std::size_t> picked =
        rng.sample_without_replacement(static_cast<std::size_t>(num_clients), count);
    std::vector<int> ids;
    ids.reserve(picked.size());
    for (std::size_t id : picked) ids.push_back(static_cast<int>(id));
    return ids;
}

}  // namespace splitsim
