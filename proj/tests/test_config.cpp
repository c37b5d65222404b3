#include <doctest.h>

#include <cmath>
#include <string>

#include "splitsim/config.hpp"

using namespace splitsim;

TEST_CASE("defaults survive an empty config body") {
    const ExperimentConfig cfg = ExperimentConfig::parse("");
    CHECK(cfg.seed == 1);
    CHECK(cfg.rounds == 100);
    CHECK(cfg.tau == 1);
    CHECK(cfg.batch_size == 32);
    CHECK(cfg.lambda == 0.005);
    CHECK(cfg.eta_g == 0.3);
    CHECK(cfg.eta_s == 0.01);
    CHECK(cfg.eta_c == 0.005);
    CHECK(cfg.clients == 10);
    CHECK(cfg.participation == 0.5);
    CHECK(cfg.cut_auto);
}

TEST_CASE("snapshots are a parse fixpoint") {
    ExperimentConfig cfg;
    cfg.seed = 42;
    cfg.rounds = 17;
    cfg.hidden = {12, 7};
    cfg.activation = Activation::tanh;
    cfg.cut_auto = false;
    cfg.cut_layer = 2;
    cfg.tau = 4;
    cfg.eta_mode = EtaMode::theory;
    cfg.eta = 0.025;
    cfg.eta_g_theory = true;
    cfg.delay_means = {1.0, 2.0, 4.0};
    cfg.clients = 3;
    cfg.iid_partition = true;
    cfg.source = DataSource::blobs;
    cfg.validate();

    const std::string snap = cfg.snapshot();
    const ExperimentConfig reparsed = ExperimentConfig::parse(snap);
    CHECK(reparsed.snapshot() == snap);
    CHECK(reparsed.seed == 42);
    CHECK(reparsed.hidden == std::vector<std::size_t>{12, 7});
    CHECK(reparsed.cut_layer == 2);
    CHECK(!reparsed.cut_auto);
    CHECK(reparsed.eta_mode == EtaMode::theory);
    CHECK(reparsed.eta_g_theory);
    CHECK(reparsed.delay_means == std::vector<double>{1.0, 2.0, 4.0});
    CHECK(reparsed.iid_partition);
}

TEST_CASE("validation failures carry field paths") {
    const std::string text = R"(
[train]
tau = 0
lambda = -1
[federation]
participation = 0
)";
    try {
        ExperimentConfig::parse(text);
        FAIL("expected a ConfigError");
    } catch (const ConfigError& e) {
        const std::string what = e.what();
        CHECK(what.find("train.tau") != std::string::npos);
        CHECK(what.find("train.lambda") != std::string::npos);
        CHECK(what.find("federation.participation") != std::string::npos);
    }
}

TEST_CASE("unknown keys, duplicates and loose lines are rejected") {
    CHECK_THROWS_WITH_AS(ExperimentConfig::parse("[run]\nspeed = 3\n"),
                         doctest::Contains("run.speed"), ConfigError);
    CHECK_THROWS_WITH_AS(ExperimentConfig::parse("[run]\nseed = 1\nseed = 2\n"),
                         doctest::Contains("duplicate"), ConfigError);
    CHECK_THROWS_WITH_AS(ExperimentConfig::parse("seed = 1\n"), doctest::Contains("section"),
                         ConfigError);
    CHECK_THROWS_WITH_AS(ExperimentConfig::parse("[run]\nseed\n"),
                         doctest::Contains("key = value"), ConfigError);
}

TEST_CASE("step-size modes resolve as configured") {
    ExperimentConfig cfg;
    cfg.tau = 4;
    cfg.clients = 9;

    cfg.eta_mode = EtaMode::table;
    CHECK(cfg.effective_eta_s() == 0.01);
    CHECK(cfg.effective_eta_c() == 0.005);
    CHECK(cfg.effective_eta_g() == 0.3);

    cfg.eta_mode = EtaMode::theory;
    cfg.eta = 0.02;
    CHECK(cfg.effective_eta_s() == 0.02);
    CHECK(cfg.effective_eta_c() == 4.0 * 0.02);

    cfg.eta_g_theory = true;
    CHECK(cfg.effective_eta_g() == doctest::Approx(std::sqrt(36.0)));
}

TEST_CASE("delay means default to a log-spaced ladder") {
    ExperimentConfig cfg;
    cfg.clients = 4;
    cfg.server_step_time = 2.0;
    const std::vector<double> means = cfg.effective_delay_means();
    REQUIRE(means.size() == 4);
    CHECK(means.front() == doctest::Approx(2.0));
    CHECK(means.back() == doctest::Approx(16.0));
    for (std::size_t i = 1; i < means.size(); ++i) CHECK(means[i] > means[i - 1]);

    cfg.delay_means = {5.0};
    CHECK(cfg.effective_delay_means() == std::vector<double>(4, 5.0));
}

TEST_CASE("comments and spacing are tolerated") {
    const std::string text = R"(
# experiment setup
[run]
seed = 9   # inline comment
rounds = 3

[train]
tau = 2
)";
    const ExperimentConfig cfg = ExperimentConfig::parse(text);
    CHECK(cfg.seed == 9);
    CHECK(cfg.rounds == 3);
    CHECK(cfg.tau == 2);
}

TEST_CASE("csv source requires a path") {
    ExperimentConfig cfg;
    cfg.source = DataSource::csv;
    cfg.csv_path = "";
    CHECK_THROWS_WITH_AS(cfg.validate(), doctest::Contains("data.csv_path"), ConfigError);
}

TEST_CASE("loading a missing config names the path") {
    CHECK_THROWS_WITH_AS(ExperimentConfig::load("/no/such/config.cfg"),
                         doctest::Contains("/no/such/config.cfg"), Error);
}
