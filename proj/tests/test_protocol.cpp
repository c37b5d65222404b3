#include <doctest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <limits>
#include <vector>

#include "splitsim/protocol.hpp"
#include "splitsim/trace.hpp"

using namespace splitsim;

namespace {

SplitModel small_model() {
    ModelSpec spec;
    spec.layers = {{3, 4, Activation::tanh}, {4, 3, Activation::identity}};
    return SplitModel(spec, 1);
}

Batch small_batch(const SplitModel& model, RngStream& rng, std::size_t rows = 4) {
    Batch batch;
    batch.inputs = Matrix(rows, model.spec().input_dim());
    for (double& v : batch.inputs.data) v = rng.normal();
    batch.labels.resize(rows);
    for (int& y : batch.labels) {
        y = static_cast<int>(rng.uniform_index(model.num_classes()));
    }
    return batch;
}

}  // namespace

TEST_CASE("zero perturbation scale collapses the embedding triple") {
    const SplitModel model = small_model();
    RngStream rng(1);
    RngStream dir_rng(2);
    ClientRoundState state = make_client_round_state(
        std::vector<double>(model.dims().client, 0.25), small_batch(model, rng), 0.01, 0.0, 1,
        dir_rng, 0);
    const UpLink up = client_emit_embeddings(model, state);
    CHECK(up.h.data == up.h_plus[0].data);
    CHECK(up.h.data == up.h_minus[0].data);
}

TEST_CASE("a basis direction on a linear client moves one feature") {
    ModelSpec spec;
    spec.layers = {{1, 1, Activation::identity}, {1, 2, Activation::identity}};
    SplitModel model(spec, 1);
    REQUIRE(model.dims().client == 2);

    ClientRoundState state;
    state.params = {1.0, 0.0};  // weight 1, bias 0
    state.lambda = 0.1;
    Direction u;
    u.coords = {std::sqrt(2.0), 0.0};  // e1 scaled to the sphere radius
    state.directions = {u};
    state.batch.inputs = Matrix(1, 1);
    state.batch.inputs.at(0, 0) = 1.0;
    state.batch.labels = {0};

    const UpLink up = client_emit_embeddings(model, state);
    const double shift = 0.1 * std::sqrt(2.0);
    CHECK(up.h_plus[0].at(0, 0) - up.h.at(0, 0) == doctest::Approx(shift).epsilon(1e-15));
    CHECK(up.h_minus[0].at(0, 0) - up.h.at(0, 0) == doctest::Approx(-shift).epsilon(1e-15));
}

TEST_CASE("emission leaves client parameters untouched and replays identically") {
    const SplitModel model = small_model();
    RngStream batch_rng(3);
    const Batch batch = small_batch(model, batch_rng);
    const std::vector<double> params(model.dims().client, 0.1);

    RngStream dir_a(9), dir_b(9);
    ClientRoundState a = make_client_round_state(params, batch, 0.01, 0.005, 1, dir_a, 5);
    ClientRoundState b = make_client_round_state(params, batch, 0.01, 0.005, 1, dir_b, 5);
    const UpLink up_a = client_emit_embeddings(model, a);
    const UpLink up_b = client_emit_embeddings(model, b);
    CHECK(up_a.h.data == up_b.h.data);
    CHECK(up_a.h_plus[0].data == up_b.h_plus[0].data);
    CHECK(up_a.h_minus[0].data == up_b.h_minus[0].data);
    CHECK(a.params == params);
}

TEST_CASE("one server step equals a zo estimate plus one descent update") {
    const SplitModel model = small_model();
    RngStream batch_rng(4);
    const Batch batch = small_batch(model, batch_rng);
    RngStream init(5);
    const std::vector<double> start = model.init_full_params(init);
    const std::vector<double> server0(start.begin() + model.dims().client, start.end());

    RngStream dir_rng(11);
    ClientRoundState client = make_client_round_state(
        std::vector<double>(model.dims().client, 0.2), batch, 0.01, 0.005, 1, dir_rng, 0);
    const UpLink up = client_emit_embeddings(model, client);

    auto loss_fn = [&model](const std::vector<double>& p, const Matrix& h,
                            const std::vector<int>& labels) {
        return model.forward_server_loss(p, h, labels);
    };

    ServerRoundState server{server0, 1, 0, 0.05, 0.005, 1};
    RngStream server_rng(21);
    server_unbalanced_update(server, up.h, up.labels, server_rng, loss_fn);

    // Replay by hand with an identically seeded stream.
    RngStream replay_rng(21);
    const Direction u = sample_direction(server0.size(), replay_rng);
    const ZoEstimate est = zo_estimate(
        [&](const std::vector<double>& p) { return loss_fn(p, up.h, up.labels); }, server0, u,
        0.005);
    std::vector<double> expected = server0;
    for (std::size_t i = 0; i < expected.size(); ++i) expected[i] -= 0.05 * est.gradient[i];
    CHECK(server.params == expected);
    CHECK(server.steps_done == 1);
}

TEST_CASE("zero server step size leaves parameters unchanged across steps") {
    const SplitModel model = small_model();
    RngStream batch_rng(6);
    const Batch batch = small_batch(model, batch_rng);
    RngStream dir_rng(12);
    ClientRoundState client = make_client_round_state(
        std::vector<double>(model.dims().client, 0.2), batch, 0.01, 0.005, 1, dir_rng, 0);
    const UpLink up = client_emit_embeddings(model, client);

    auto loss_fn = [&model](const std::vector<double>& p, const Matrix& h,
                            const std::vector<int>& labels) {
        return model.forward_server_loss(p, h, labels);
    };
    const std::vector<double> server0(model.dims().server, 0.3);
    ServerRoundState server{server0, 5, 0, 0.0, 0.005, 1};
    RngStream server_rng(31);
    server_unbalanced_update(server, up.h, up.labels, server_rng, loss_fn);
    CHECK(server.params == server0);
    CHECK(server.steps_done == 5);
}

TEST_CASE("three server steps replay a scripted three-step descent") {
    const SplitModel model = small_model();
    RngStream batch_rng(7);
    const Batch batch = small_batch(model, batch_rng);
    RngStream dir_rng(13);
    ClientRoundState client = make_client_round_state(
        std::vector<double>(model.dims().client, -0.1), batch, 0.01, 0.005, 1, dir_rng, 0);
    const UpLink up = client_emit_embeddings(model, client);

    auto loss_fn = [&model](const std::vector<double>& p, const Matrix& h,
                            const std::vector<int>& labels) {
        return model.forward_server_loss(p, h, labels);
    };
    RngStream init(8);
    const std::vector<double> full = model.init_full_params(init);
    const std::vector<double> server0(full.begin() + model.dims().client, full.end());

    ServerRoundState server{server0, 3, 0, 0.02, 0.005, 1};
    RngStream server_rng(41);
    server_unbalanced_update(server, up.h, up.labels, server_rng, loss_fn);

    RngStream replay_rng(41);
    std::vector<double> x = server0;
    for (int step = 0; step < 3; ++step) {
        const Direction u = sample_direction(x.size(), replay_rng);
        const ZoEstimate est = zo_estimate(
            [&](const std::vector<double>& p) { return loss_fn(p, up.h, up.labels); }, x, u,
            0.005);
        for (std::size_t i = 0; i < x.size(); ++i) x[i] -= 0.02 * est.gradient[i];
    }
    CHECK(server.params == x);
}

TEST_CASE("every server step reads the same stale embedding") {
    const SplitModel model = small_model();
    RngStream batch_rng(14);
    const Batch batch = small_batch(model, batch_rng);
    RngStream dir_rng(15);
    ClientRoundState client = make_client_round_state(
        std::vector<double>(model.dims().client, 0.05), batch, 0.01, 0.005, 1, dir_rng, 0);
    const UpLink up = client_emit_embeddings(model, client);

    std::vector<std::vector<double>> seen;
    auto spy_loss = [&](const std::vector<double>& p, const Matrix& h,
                        const std::vector<int>& labels) {
        seen.push_back(h.data);
        return model.forward_server_loss(p, h, labels);
    };
    ServerRoundState server{std::vector<double>(model.dims().server, 0.2), 4, 0, 0.02, 0.005, 1};
    RngStream server_rng(51);
    server_unbalanced_update(server, up.h, up.labels, server_rng, spy_loss);
    REQUIRE(seen.size() == 8);  // two evaluations per step
    for (const auto& h : seen) CHECK(h == up.h.data);
}

TEST_CASE("a non-finite server loss aborts the round with its step index") {
    const SplitModel model = small_model();
    RngStream batch_rng(19);
    const Batch batch = small_batch(model, batch_rng);
    RngStream dir_rng(20);
    ClientRoundState client = make_client_round_state(
        std::vector<double>(model.dims().client, 0.1), batch, 0.01, 0.005, 1, dir_rng, 0);
    const UpLink up = client_emit_embeddings(model, client);

    int calls = 0;
    auto exploding_loss = [&](const std::vector<double>& p, const Matrix& h,
                              const std::vector<int>& labels) {
        ++calls;
        if (calls > 4) return std::numeric_limits<double>::infinity();  // blows up in step 2
        return model.forward_server_loss(p, h, labels);
    };
    ServerRoundState server{std::vector<double>(model.dims().server, 0.2), 5, 0, 0.02, 0.005, 1};
    RngStream server_rng(71);
    CHECK_THROWS_WITH_AS(
        server_unbalanced_update(server, up.h, up.labels, server_rng, exploding_loss),
        doctest::Contains("step 2"), Error);
}

TEST_CASE("delta emission is antisymmetric and recomputable") {
    const SplitModel model = small_model();
    RngStream batch_rng(16);
    const Batch batch = small_batch(model, batch_rng);
    RngStream dir_rng(17);
    ClientRoundState client = make_client_round_state(
        std::vector<double>(model.dims().client, 0.15), batch, 0.01, 0.01, 1, dir_rng, 3);
    UpLink up = client_emit_embeddings(model, client);

    auto loss_fn = [&model](const std::vector<double>& p, const Matrix& h,
                            const std::vector<int>& labels) {
        return model.forward_server_loss(p, h, labels);
    };
    ServerRoundState server{std::vector<double>(model.dims().server, -0.2), 2, 0, 0.02, 0.01, 1};
    RngStream server_rng(61);
    server_unbalanced_update(server, up.h, up.labels, server_rng, loss_fn);

    const DownLink down = server_emit_delta(server, up, loss_fn);
    REQUIRE(down.deltas.size() == 1);
    CHECK(down.round_nonce == 3);

    // Direct recomputation from the traced pieces.
    const double plus = model.forward_server_loss(server.params, up.h_plus[0], up.labels);
    const double minus = model.forward_server_loss(server.params, up.h_minus[0], up.labels);
    CHECK(down.deltas[0] == plus - minus);

    UpLink swapped = up;
    std::swap(swapped.h_plus, swapped.h_minus);
    const DownLink negated = server_emit_delta(server, swapped, loss_fn);
    CHECK(negated.deltas[0] == -down.deltas[0]);

    UpLink equal = up;
    equal.h_minus = equal.h_plus;
    const DownLink zero = server_emit_delta(server, equal, loss_fn);
    CHECK(zero.deltas[0] == 0.0);
}

TEST_CASE("delta emission requires the full server schedule first") {
    const SplitModel model = small_model();
    auto loss_fn = [&model](const std::vector<double>& p, const Matrix& h,
                            const std::vector<int>& labels) {
        return model.forward_server_loss(p, h, labels);
    };
    ServerRoundState server{std::vector<double>(model.dims().server, 0.0), 3, 1, 0.02, 0.01, 1};
    UpLink up;
    CHECK_THROWS_WITH_AS(server_emit_delta(server, up, loss_fn), doctest::Contains("local steps"),
                         Error);
}

TEST_CASE("client update is an exact rank-one step along the round direction") {
    ClientRoundState state;
    state.params = {1.0, -2.0, 0.5, 3.0};
    state.lambda = 0.125;
    state.eta_c = 0.25;  // 2 * lambda
    state.round_nonce = 9;
    Direction u;
    u.coords = {2.0, -1.0, 1.0, 0.5};
    state.directions = {u};

    SUBCASE("zero delta leaves parameters unchanged") {
        const std::vector<double> before = state.params;
        client_apply_update(state, DownLink{{0.0}, 9});
        CHECK(state.params == before);
    }

    SUBCASE("eta_c = 2 lambda and unit delta subtract exactly u") {
        const std::vector<double> before = state.params;
        client_apply_update(state, DownLink{{1.0}, 9});
        for (std::size_t i = 0; i < 4; ++i) {
            CHECK(state.params[i] == before[i] - u.coords[i]);
        }
    }

    SUBCASE("displacement is proportional to u with the formula coefficient") {
        const std::vector<double> before = state.params;
        const double delta = -0.7;
        client_apply_update(state, DownLink{{delta}, 9});
        const double coeff = state.eta_c * (delta / (2.0 * state.lambda)) * 1.0;
        for (std::size_t i = 0; i < 4; ++i) {
            CHECK(state.params[i] == before[i] - coeff * u.coords[i]);
        }
    }

    SUBCASE("stale nonce and malformed downlinks are rejected") {
        CHECK_THROWS_WITH_AS(client_apply_update(state, DownLink{{1.0}, 8}),
                             doctest::Contains("nonce"), Error);
        CHECK_THROWS_AS(client_apply_update(state, DownLink{{1.0, 2.0}, 9}), Error);
        CHECK_THROWS_AS(client_apply_update(state, DownLink{{std::nan("")}, 9}), Error);
    }
}

TEST_CASE("round budgets: three uplink matrices, one scalar down, 2 tau + 2 server evals") {
    const SplitModel model = small_model();
    for (long long tau : {1, 2, 4, 8}) {
        RngStream batch_rng(70 + tau);
        RngStream client_rng(80 + tau);
        RngStream server_rng(90 + tau);
        RngStream init(7);
        const std::vector<double> full = model.init_full_params(init);
        const SplitDims d = model.dims();
        RoundParams params{tau, 0.01, 0.02, 0.005, 1};
        const PairRoundResult result = run_pair_round(
            model, std::vector<double>(full.begin(), full.begin() + d.client),
            std::vector<double>(full.begin() + d.client, full.end()),
            small_batch(model, batch_rng), params, client_rng, server_rng, 0);
        CHECK(result.stats.uplink_matrices == 3);
        CHECK(result.stats.downlink_scalars == 1);
        CHECK(result.stats.client_forward_passes == 3);
        CHECK(result.stats.server_loss_evals == 2 * tau + 2);
    }
}

TEST_CASE("multi-probe rounds scale the budgets with the probe count") {
    const SplitModel model = small_model();
    const long long tau = 3;
    const long long probes = 2;
    RngStream batch_rng(71);
    RngStream client_rng(81);
    RngStream server_rng(91);
    RngStream init(7);
    const std::vector<double> full = model.init_full_params(init);
    const SplitDims d = model.dims();
    RoundParams params{tau, 0.01, 0.02, 0.005, probes};
    const PairRoundResult result = run_pair_round(
        model, std::vector<double>(full.begin(), full.begin() + d.client),
        std::vector<double>(full.begin() + d.client, full.end()), small_batch(model, batch_rng),
        params, client_rng, server_rng, 0);
    CHECK(result.stats.uplink_matrices == 1 + 2 * probes);
    CHECK(result.stats.downlink_scalars == probes);
    CHECK(result.stats.client_forward_passes == 1 + 2 * probes);
    CHECK(result.stats.server_loss_evals == 2 * probes * tau + 2 * probes);
}

TEST_CASE("round trace files round-trip the exchanged messages") {
    const SplitModel model = small_model();
    RngStream batch_rng(100);
    RngStream client_rng(101);
    RngStream server_rng(102);
    RngStream init(7);
    const std::vector<double> full = model.init_full_params(init);
    const SplitDims d = model.dims();

    const auto path = std::filesystem::temp_directory_path() / "splitsim_trace_test.bin";
    UpLink traced_up;
    DownLink traced_down;
    {
        TraceWriter writer(path.string());
        RoundParams params{2, 0.01, 0.02, 0.005, 1};
        run_pair_round(model, std::vector<double>(full.begin(), full.begin() + d.client),
                       std::vector<double>(full.begin() + d.client, full.end()),
                       small_batch(model, batch_rng), params, client_rng, server_rng, 12,
                       [&](const UpLink& up, const DownLink& down) {
                           traced_up = up;
                           traced_down = down;
                           writer.write_uplink(up);
                           writer.write_downlink(down);
                       });
    }

    TraceReader reader(path.string());
    const std::vector<TraceRecord> records = reader.read_all();
    REQUIRE(records.size() == 2);
    CHECK(records[0].tag == 'U');
    CHECK(records[0].uplink.round_nonce == 12);
    CHECK(records[0].uplink.h.data == traced_up.h.data);
    CHECK(records[0].uplink.h_plus[0].data == traced_up.h_plus[0].data);
    CHECK(records[0].uplink.h_minus[0].data == traced_up.h_minus[0].data);
    CHECK(records[0].uplink.labels == traced_up.labels);
    CHECK(records[1].tag == 'D');
    CHECK(records[1].downlink.deltas == traced_down.deltas);
    CHECK(records[1].downlink.round_nonce == 12);
    std::filesystem::remove(path);
}

TEST_CASE("the protocol descends a quadratic surrogate on average") {
    // Client embedding is its own parameter vector; the server loss is a
    // separable strictly convex quadratic. Step sizes follow the coupled
    // schedule eta_c = tau * eta, eta_s = eta with eta inside the smooth
    // stability window for L = 1.
    const std::size_t dim_c = 8, dim_s = 8;
    const long long tau = 3;
    const double eta = 1.0 / (64.0 * (static_cast<double>(tau) + 2.0 * dim_s));
    const double eta_s = eta;
    const double eta_c = static_cast<double>(tau) * eta;
    const double lambda = 0.001;

    std::vector<double> target_s(dim_s), target_c(dim_c);
    for (std::size_t i = 0; i < dim_s; ++i) target_s[i] = 0.5 - 0.1 * static_cast<double>(i);
    for (std::size_t i = 0; i < dim_c; ++i) target_c[i] = -0.4 + 0.1 * static_cast<double>(i);

    auto surrogate = [&](const std::vector<double>& xs, const Matrix& h) {
        double s = 0.0;
        for (std::size_t i = 0; i < dim_s; ++i) {
            s += 0.5 * (xs[i] - target_s[i]) * (xs[i] - target_s[i]);
        }
        for (std::size_t i = 0; i < dim_c; ++i) {
            s += 0.5 * (h.at(0, i) - target_c[i]) * (h.at(0, i) - target_c[i]);
        }
        return s;
    };
    auto loss_fn = [&](const std::vector<double>& xs, const Matrix& h,
                       const std::vector<int>&) { return surrogate(xs, h); };

    double mean_final = 0.0;
    double mean_initial = 0.0;
    const int num_seeds = 20;
    for (int seed = 0; seed < num_seeds; ++seed) {
        std::vector<double> x_c(dim_c, 1.0), x_s(dim_s, -1.0);
        RngStream client_rng(1000 + seed);
        RngStream server_rng(2000 + seed);
        auto embed = [&](const std::vector<double>& v) {
            Matrix h(1, dim_c);
            for (std::size_t i = 0; i < dim_c; ++i) h.at(0, i) = v[i];
            return h;
        };
        mean_initial += surrogate(x_s, embed(x_c));
        for (int round = 0; round < 200; ++round) {
            ClientRoundState client;
            client.params = x_c;
            client.eta_c = eta_c;
            client.lambda = lambda;
            client.round_nonce = static_cast<std::uint64_t>(round);
            client.directions = {sample_direction(dim_c, client_rng)};

            UpLink up;
            up.round_nonce = client.round_nonce;
            up.h = embed(x_c);
            std::vector<double> probe = x_c;
            for (std::size_t i = 0; i < dim_c; ++i) {
                probe[i] = x_c[i] + lambda * client.directions[0].coords[i];
            }
            up.h_plus = {embed(probe)};
            for (std::size_t i = 0; i < dim_c; ++i) {
                probe[i] = x_c[i] - lambda * client.directions[0].coords[i];
            }
            up.h_minus = {embed(probe)};

            ServerRoundState server{x_s, tau, 0, eta_s, lambda, 1};
            server_unbalanced_update(server, up.h, up.labels, server_rng, loss_fn);
            const DownLink down = server_emit_delta(server, up, loss_fn);
            client_apply_update(client, down);
            x_c = client.params;
            x_s = server.params;
        }
        mean_final += surrogate(x_s, embed(x_c));
    }
    mean_final /= num_seeds;
    mean_initial /= num_seeds;
    CHECK(mean_final < mean_initial);
}
