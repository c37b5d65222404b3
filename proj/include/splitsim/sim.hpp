#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "splitsim/aggregation.hpp"
#include "splitsim/common.hpp"
#include "splitsim/config.hpp"
#include "splitsim/data.hpp"
#include "splitsim/metrics.hpp"
#include "splitsim/model.hpp"
#include "splitsim/protocol.hpp"
#include "splitsim/rng.hpp"
#include "splitsim/trace.hpp"

namespace splitsim {

/// Per-client compute delays. Time is simulated and dimensionless; network
/// latency is folded into the client delay draw.
struct DelayModel {
    DelayKind kind = DelayKind::exponential;
    std::vector<double> client_means;
    double server_step_time = 1.0;
    double exchange_overhead = 0.0;

    void validate() const {
        if (!(server_step_time > 0.0)) throw Error("server step time must be positive");
        if (exchange_overhead < 0.0) throw Error("exchange overhead must be >= 0");
        if (client_means.empty()) throw Error("delay model needs per-client means");
        for (double m : client_means) {
            if (!(m > 0.0)) throw Error("client delay means must be positive");
        }
    }
};

struct RoundTiming {
    std::vector<double> client_times;
    double straggler_time = 0.0;
    double server_busy_time = 0.0;
    double round_wall_clock = 0.0;
};

/// One synchronous round: every participant draws a compute delay, the
/// straggler sets the client side, the server is busy for tau local steps,
/// and the round closes when both sides are done.
inline RoundTiming draw_round_timing(const DelayModel& delays, const std::vector<int>& participants,
                                     long long tau, RngStream& rng) {
    delays.validate();
    if (participants.empty()) throw Error("round timing needs at least one participant");
    if (tau < 1) throw Error("round timing requires tau >= 1");

    RoundTiming timing;
    for (int id : participants) {
        if (id < 0 || static_cast<std::size_t>(id) >= delays.client_means.size()) {
            throw Error("participant " + std::to_string(id) + " has no delay mean");
        }
        const double mean = delays.client_means[static_cast<std::size_t>(id)];
        const double t = delays.kind == DelayKind::exponential ? rng.exponential(mean) : mean;
        timing.client_times.push_back(t);
    }
    timing.straggler_time =
        *std::max_element(timing.client_times.begin(), timing.client_times.end());
    timing.server_busy_time = static_cast<double>(tau) * delays.server_step_time;
    timing.round_wall_clock =
        std::max(timing.straggler_time, timing.server_busy_time) + delays.exchange_overhead;
    return timing;
}

struct StragglerIdentity {
    long long tau = 0;
    long long t1_rounds = 0;
    double total_time = 0.0;
    double reference_time = 0.0;  // t0 * t_server
    double relative_gap = 0.0;
};

/// With tau matched to the straggler/server time ratio, T0 rounds of work
/// collapse to T1 = ceil(T0 / tau) rounds and the total time approaches
/// T0 * t_server; the gap reported is pure rounding.
inline StragglerIdentity straggler_identity_check(long long t0_rounds, double t_straggler,
                                                  double t_server) {
    if (t0_rounds < 1) throw Error("straggler identity needs a positive round count");
    if (!(t_server > 0.0) || !(t_straggler >= t_server)) {
        throw Error("straggler identity requires t_straggler >= t_server > 0");
    }
    StragglerIdentity result;
    result.tau = std::max<long long>(1, std::llround(t_straggler / t_server));
    result.t1_rounds = (t0_rounds + result.tau - 1) / result.tau;
    result.total_time = static_cast<double>(result.t1_rounds) * t_straggler;
    result.reference_time = static_cast<double>(t0_rounds) * t_server;
    result.relative_gap =
        std::abs(result.total_time - result.reference_time) / result.reference_time;
    return result;
}

struct SimResult {
    std::vector<RunRecord> records;
    GlobalState final_state;
    SplitDims dims;
    std::size_t cut = 0;
    double final_accuracy = 0.0;
    double total_simulated_time = 0.0;
    /// Concatenated (client, server) parameters after every round; filled
    /// only when requested.
    std::vector<std::vector<double>> param_trace;
};

namespace detail {

struct Workbench {
    Dataset train;
    Dataset holdout;
    PartitionPlan partition;
    SplitModel model;
    RoundParams round_params;
    DelayModel delays;
};

inline Workbench prepare_workbench(const ExperimentConfig& cfg) {
    cfg.validate();

    Dataset full = cfg.source == DataSource::blobs
                       ? make_blobs(static_cast<int>(cfg.classes),
                                    static_cast<std::size_t>(cfg.dim),
                                    static_cast<std::size_t>(cfg.samples_per_class), cfg.spread,
                                    cfg.seed)
                       : load_csv(cfg.csv_path, cfg.label_column);
    auto [train, holdout] = split_holdout(full, cfg.holdout_fraction, cfg.seed);

    const auto clients = static_cast<std::size_t>(cfg.clients);
    PartitionPlan partition = cfg.iid_partition
                                  ? partition_iid(train, clients, cfg.seed)
                                  : partition_dirichlet(train, clients, cfg.alpha, cfg.seed);

    ModelSpec spec = ModelSpec::mlp(train.features.cols, cfg.hidden,
                                    static_cast<std::size_t>(train.num_classes), cfg.activation);
    const std::size_t cut = cfg.cut_auto ? recommend_cut(spec, static_cast<double>(cfg.tau))
                                         : cfg.cut_layer;

    RoundParams round_params;
    round_params.tau = cfg.tau;
    round_params.eta_c = cfg.effective_eta_c();
    round_params.eta_s = cfg.effective_eta_s();
    round_params.lambda = cfg.lambda;
    round_params.num_perturbations = cfg.perturbations;

    DelayModel delays;
    delays.kind = cfg.delay_kind;
    delays.client_means = cfg.effective_delay_means();
    delays.server_step_time = cfg.server_step_time;
    delays.exchange_overhead = cfg.exchange_overhead;

    return Workbench{std::move(train), std::move(holdout), std::move(partition),
                     SplitModel(std::move(spec), cut), round_params, std::move(delays)};
}

inline std::vector<double> concat_params(const GlobalState& global) {
    std::vector<double> all = global.client_params;
    all.insert(all.end(), global.server_params.begin(), global.server_params.end());
    return all;
}

}  // namespace detail

/// Full orchestration: select -> broadcast -> pair rounds -> aggregate,
/// with simulated wall-clock accounting. Held-out evaluation runs outside
/// the simulated clock. Deterministic per (config, seed): every consumer of
/// randomness has its own derived stream, so results do not depend on pair
/// execution order.
inline SimResult run_experiment(const ExperimentConfig& cfg, bool keep_param_trace = false,
                                TraceWriter* trace_writer = nullptr) {
    detail::Workbench bench = detail::prepare_workbench(cfg);
    const SplitDims dims = bench.model.dims();

    RngStream init_rng = RngStream::derive({cfg.seed, 0, 0, StreamRole::param_init});
    const std::vector<double> full_params = bench.model.init_full_params(init_rng);

    GlobalState global;
    global.client_params.assign(full_params.begin(), full_params.begin() + dims.client);
    global.server_params.assign(full_params.begin() + dims.client, full_params.end());
    global.eta_g = cfg.effective_eta_g();

    SimResult result;
    result.dims = dims;
    result.cut = bench.model.cut();
    double clock = 0.0;
    double last_accuracy = 0.0;

    if (cfg.rounds == 0) {
        result.final_accuracy = bench.model.accuracy(detail::concat_params(global),
                                                     bench.holdout.features,
                                                     bench.holdout.labels);
        result.final_state = std::move(global);
        return result;
    }

    for (long long t = 0; t < cfg.rounds; ++t) {
        RngStream select_rng =
            RngStream::derive({cfg.seed, 0, static_cast<std::uint64_t>(t), StreamRole::selection});
        const std::vector<int> participants = select_participants(
            static_cast<int>(cfg.clients), cfg.participation, select_rng);

        RngStream timing_rng =
            RngStream::derive({cfg.seed, 0, static_cast<std::uint64_t>(t), StreamRole::timing});
        const RoundTiming timing =
            draw_round_timing(bench.delays, participants, cfg.tau, timing_rng);

        std::vector<ParticipantUpdate> updates;
        double loss_sum = 0.0;
        long long uplink_scalars = 0;
        long long downlink_scalars = 0;
        for (int id : participants) {
            const PairInit init = broadcast(global);
            RngStream batch_rng = RngStream::derive({cfg.seed, static_cast<std::uint64_t>(id),
                                                     static_cast<std::uint64_t>(t),
                                                     StreamRole::batch});
            Batch batch = draw_batch(bench.train,
                                     bench.partition.client_indices[static_cast<std::size_t>(id)],
                                     static_cast<std::size_t>(cfg.batch_size), batch_rng);
            RngStream client_rng = RngStream::derive({cfg.seed, static_cast<std::uint64_t>(id),
                                                      static_cast<std::uint64_t>(t),
                                                      StreamRole::client_perturb});
            RngStream server_rng = RngStream::derive({cfg.seed, static_cast<std::uint64_t>(id),
                                                      static_cast<std::uint64_t>(t),
                                                      StreamRole::server_perturb});
            MessageObserver observer;
            if (trace_writer) {
                observer = [trace_writer](const UpLink& up, const DownLink& down) {
                    trace_writer->write_uplink(up);
                    trace_writer->write_downlink(down);
                };
            }
            PairRoundResult pair = run_pair_round(bench.model, init.client_params,
                                                  init.server_params, std::move(batch),
                                                  bench.round_params, client_rng, server_rng,
                                                  static_cast<std::uint64_t>(t), observer);
            loss_sum += pair.train_loss;
            uplink_scalars += pair.stats.uplink_scalars;
            downlink_scalars += pair.stats.downlink_scalars;
            updates.push_back({id, std::move(pair.client_params), std::move(pair.server_params)});
        }

        aggregate(global, std::move(updates));
        clock += timing.round_wall_clock;

        if (t % cfg.eval_interval == 0 || t == cfg.rounds - 1) {
            const std::vector<double> full = detail::concat_params(global);
            last_accuracy =
                bench.model.accuracy(full, bench.holdout.features, bench.holdout.labels);
        }

        RunRecord record;
        record.round = t;
        record.simulated_time = clock;
        record.train_loss = loss_sum / static_cast<double>(participants.size());
        record.eval_accuracy = last_accuracy;
        record.comm_rounds = t + 1;
        record.uplink_scalars = uplink_scalars;
        record.downlink_scalars = downlink_scalars;
        result.records.push_back(record);

        if (keep_param_trace) result.param_trace.push_back(detail::concat_params(global));
    }

    result.final_accuracy = last_accuracy;
    result.total_simulated_time = clock;
    result.final_state = std::move(global);
    return result;
}

/// Reference single-pair loop: one client trains against its split server
/// with no selection and no aggregation; round outputs feed the next round
/// directly. Uses the same derived streams as the orchestrated path.
inline SimResult run_single_pair(const ExperimentConfig& cfg, bool keep_param_trace = false) {
    if (cfg.clients != 1) throw Error("the single-pair loop requires federation.clients = 1");
    detail::Workbench bench = detail::prepare_workbench(cfg);
    const SplitDims dims = bench.model.dims();

    RngStream init_rng = RngStream::derive({cfg.seed, 0, 0, StreamRole::param_init});
    const std::vector<double> full_params = bench.model.init_full_params(init_rng);
    std::vector<double> client_params(full_params.begin(), full_params.begin() + dims.client);
    std::vector<double> server_params(full_params.begin() + dims.client, full_params.end());

    SimResult result;
    result.dims = dims;
    result.cut = bench.model.cut();
    double last_accuracy = 0.0;

    for (long long t = 0; t < cfg.rounds; ++t) {
        RngStream batch_rng =
            RngStream::derive({cfg.seed, 0, static_cast<std::uint64_t>(t), StreamRole::batch});
        Batch batch = draw_batch(bench.train, bench.partition.client_indices[0],
                                 static_cast<std::size_t>(cfg.batch_size), batch_rng);
        RngStream client_rng = RngStream::derive(
            {cfg.seed, 0, static_cast<std::uint64_t>(t), StreamRole::client_perturb});
        RngStream server_rng = RngStream::derive(
            {cfg.seed, 0, static_cast<std::uint64_t>(t), StreamRole::server_perturb});
        PairRoundResult pair =
            run_pair_round(bench.model, client_params, server_params, std::move(batch),
                           bench.round_params, client_rng, server_rng,
                           static_cast<std::uint64_t>(t));
        client_params = std::move(pair.client_params);
        server_params = std::move(pair.server_params);

        if (t % cfg.eval_interval == 0 || t == cfg.rounds - 1) {
            std::vector<double> full = client_params;
            full.insert(full.end(), server_params.begin(), server_params.end());
            last_accuracy =
                bench.model.accuracy(full, bench.holdout.features, bench.holdout.labels);
        }

        RunRecord record;
        record.round = t;
        record.train_loss = pair.train_loss;
        record.eval_accuracy = last_accuracy;
        record.comm_rounds = t + 1;
        record.uplink_scalars = pair.stats.uplink_scalars;
        record.downlink_scalars = pair.stats.downlink_scalars;
        result.records.push_back(record);

        if (keep_param_trace) {
            std::vector<double> full = client_params;
            full.insert(full.end(), server_params.begin(), server_params.end());
            result.param_trace.push_back(std::move(full));
        }
    }

    result.final_accuracy = last_accuracy;
    result.final_state.client_params = std::move(client_params);
    result.final_state.server_params = std::move(server_params);
    result.final_state.round = cfg.rounds;
    return result;
}

}  // namespace splitsim
