#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "splitsim/common.hpp"
#include "splitsim/model.hpp"

namespace splitsim {

struct ConfigError : Error {
    explicit ConfigError(const std::vector<std::string>& problems)
        : Error(join(problems)), problems(problems) {}

    std::vector<std::string> problems;

private:
    static std::string join(const std::vector<std::string>& problems) {
        std::string msg = "invalid configuration:";
        for (const std::string& p : problems) msg += "\n  " + p;
        return msg;
    }
};

enum class DelayKind { exponential, fixed };
enum class EtaMode { table, theory, manual };
enum class DataSource { blobs, csv };

/// Experiment description. The file format is plain key = value lines under
/// [section] headers; snapshot() emits the canonical form, which parses
/// back to an identical config.
struct ExperimentConfig {
    // [run]
    std::uint64_t seed = 1;
    long long rounds = 100;
    long long eval_interval = 1;

    // [model]
    std::vector<std::size_t> hidden = {16};
    Activation activation = Activation::relu;
    bool cut_auto = true;
    std::size_t cut_layer = 1;

    // [train]
    long long tau = 1;
    EtaMode eta_mode = EtaMode::table;
    double eta = 0.01;        // unified step size for the theory-coupled mode
    bool eta_g_theory = false;  // eta_g = sqrt(tau * clients)
    double eta_g = 0.3;
    double eta_s = 0.01;
    double eta_c = 0.005;
    double lambda = 0.005;
    long long perturbations = 1;
    long long batch_size = 32;

    // [federation]
    long long clients = 10;
    double participation = 0.5;

    // [delay]
    DelayKind delay_kind = DelayKind::exponential;
    std::vector<double> delay_means;  // empty selects the log-spaced default
    double server_step_time = 1.0;
    double exchange_overhead = 0.0;

    // [data]
    DataSource source = DataSource::blobs;
    long long classes = 3;
    long long dim = 16;
    long long samples_per_class = 200;
    double spread = 1.0;
    bool iid_partition = false;
    double alpha = 1.0;
    double holdout_fraction = 0.2;
    std::string csv_path;
    std::string label_column = "label";

    /// Step sizes actually used by a run, after mode resolution.
    double effective_eta_s() const {
        return eta_mode == EtaMode::theory ? eta : eta_s;
    }
    double effective_eta_c() const {
        return eta_mode == EtaMode::theory ? static_cast<double>(tau) * eta : eta_c;
    }
    double effective_eta_g() const {
        if (eta_g_theory) return std::sqrt(static_cast<double>(tau * clients));
        return eta_g;
    }

    /// Per-client exponential means; when unset, log-spaced over
    /// [1, 8] * server_step_time.
    std::vector<double> effective_delay_means() const {
        std::vector<double> means;
        if (delay_means.empty()) {
            for (long long m = 0; m < clients; ++m) {
                const double frac = clients > 1
                                        ? static_cast<double>(m) / static_cast<double>(clients - 1)
                                        : 0.0;
                means.push_back(server_step_time * std::pow(8.0, frac));
            }
        } else if (delay_means.size() == 1) {
            means.assign(static_cast<std::size_t>(clients), delay_means.front());
        } else {
            means = delay_means;
        }
        return means;
    }

    void validate() const {
        std::vector<std::string> problems;
        auto check = [&](bool ok, const std::string& path, const std::string& why) {
            if (!ok) problems.push_back(path + ": " + why);
        };
        check(rounds >= 0, "run.rounds", "must be >= 0");
        check(eval_interval >= 1, "run.eval_interval", "must be >= 1");
        check(!hidden.empty(), "model.hidden", "needs at least one hidden width");
        for (std::size_t h : hidden) {
            if (h == 0) {
                problems.push_back("model.hidden: widths must be positive");
                break;
            }
        }
        check(cut_auto || cut_layer >= 1, "model.cut_layer", "must be 'auto' or an index >= 1");
        check(cut_auto || cut_layer <= hidden.size(), "model.cut_layer",
              "must leave at least one layer on the server (max " +
                  std::to_string(hidden.size()) + ")");
        check(tau >= 1, "train.tau", "must be >= 1");
        check(eta > 0.0, "train.eta", "must be positive");
        check(eta_g_theory || eta_g > 0.0, "train.eta_g", "must be positive or 'theory'");
        check(eta_s > 0.0, "train.eta_s", "must be positive");
        check(eta_c > 0.0, "train.eta_c", "must be positive");
        check(lambda > 0.0, "train.lambda", "must be positive");
        check(perturbations >= 1, "train.perturbations", "must be >= 1");
        check(batch_size >= 1, "train.batch_size", "must be >= 1");
        check(clients >= 1, "federation.clients", "must be >= 1");
        check(participation > 0.0 && participation <= 1.0, "federation.participation",
              "must lie in (0, 1]");
        check(server_step_time > 0.0, "delay.server_step_time", "must be positive");
        check(exchange_overhead >= 0.0, "delay.exchange_overhead", "must be >= 0");
        if (!delay_means.empty()) {
            check(delay_means.size() == 1 ||
                      delay_means.size() == static_cast<std::size_t>(clients),
                  "delay.client_means",
                  "needs 1 or federation.clients entries, found " +
                      std::to_string(delay_means.size()));
            for (double m : delay_means) {
                if (!(m > 0.0)) {
                    problems.push_back("delay.client_means: entries must be positive");
                    break;
                }
            }
        }
        if (source == DataSource::blobs) {
            check(classes >= 2, "data.classes", "must be >= 2");
            check(dim >= 1, "data.dim", "must be >= 1");
            check(samples_per_class >= 1, "data.samples_per_class", "must be >= 1");
            check(spread >= 0.0, "data.spread", "must be >= 0");
        } else {
            check(!csv_path.empty(), "data.csv_path", "required when data.source = csv");
        }
        check(iid_partition || alpha > 0.0, "data.alpha", "must be positive or 'iid'");
        check(holdout_fraction >= 0.0 && holdout_fraction < 1.0, "data.holdout_fraction",
              "must lie in [0, 1)");
        if (!problems.empty()) throw ConfigError(problems);
    }

    static ExperimentConfig parse(const std::string& text);
    static ExperimentConfig load(const std::string& path);
    std::string snapshot() const;
};

namespace detail {

inline std::string trim(const std::string& s) {
    std::size_t a = 0;
    std::size_t b = s.size();
    while (a < b && (s[a] == ' ' || s[a] == '\t')) ++a;
    while (b > a && (s[b - 1] == ' ' || s[b - 1] == '\t' || s[b - 1] == '\r')) --b;
    return s.substr(a, b - a);
}

struct ConfigFields {
    std::map<std::string, std::string> values;  // "section.key" -> raw value
    std::vector<std::string> problems;

    bool has(const std::string& path) const { return values.count(path) != 0; }

    std::string take(const std::string& path) {
        auto it = values.find(path);
        if (it == values.end()) return {};
        std::string v = it->second;
        values.erase(it);
        return v;
    }
};

inline ConfigFields tokenize_config(const std::string& text) {
    ConfigFields fields;
    std::string section;
    std::istringstream in(text);
    std::string raw;
    std::size_t line_no = 0;
    while (std::getline(in, raw)) {
        ++line_no;
        std::string line = trim(raw);
        const std::size_t comment = line.find('#');
        if (comment != std::string::npos) line = trim(line.substr(0, comment));
        if (line.empty()) continue;
        if (line.front() == '[') {
            if (line.back() != ']') {
                fields.problems.push_back("line " + std::to_string(line_no) +
                                          ": unterminated section header");
                continue;
            }
            section = trim(line.substr(1, line.size() - 2));
            continue;
        }
        const std::size_t eq = line.find('=');
        if (eq == std::string::npos) {
            fields.problems.push_back("line " + std::to_string(line_no) +
                                      ": expected key = value");
            continue;
        }
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        if (section.empty() || key.empty()) {
            fields.problems.push_back("line " + std::to_string(line_no) +
                                      ": keys must live inside a [section]");
            continue;
        }
        const std::string path = section + "." + key;
        if (fields.values.count(path)) {
            fields.problems.push_back(path + ": duplicate key");
            continue;
        }
        fields.values[path] = value;
    }
    return fields;
}

template <typename T>
inline bool parse_number(const std::string& text, T& out) {
    std::istringstream ss(text);
    ss >> out;
    return static_cast<bool>(ss) && ss.eof();
}

inline std::vector<std::string> split_csv_list(const std::string& text) {
    std::vector<std::string> parts;
    std::string cell;
    std::stringstream ss(text);
    while (std::getline(ss, cell, ',')) parts.push_back(trim(cell));
    return parts;
}

inline std::string format_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

}  // namespace detail

inline ExperimentConfig ExperimentConfig::parse(const std::string& text) {
    detail::ConfigFields fields = detail::tokenize_config(text);
    ExperimentConfig cfg;
    auto& problems = fields.problems;

    auto get_u64 = [&](const std::string& path, std::uint64_t& out) {
        if (!fields.has(path)) return;
        if (!detail::parse_number(fields.take(path), out)) {
            problems.push_back(path + ": expected an unsigned integer");
        }
    };
    auto get_ll = [&](const std::string& path, long long& out) {
        if (!fields.has(path)) return;
        if (!detail::parse_number(fields.take(path), out)) {
            problems.push_back(path + ": expected an integer");
        }
    };
    auto get_double = [&](const std::string& path, double& out) {
        if (!fields.has(path)) return;
        if (!detail::parse_number(fields.take(path), out)) {
            problems.push_back(path + ": expected a number");
        }
    };
    auto get_string = [&](const std::string& path, std::string& out) {
        if (fields.has(path)) out = fields.take(path);
    };

    get_u64("run.seed", cfg.seed);
    get_ll("run.rounds", cfg.rounds);
    get_ll("run.eval_interval", cfg.eval_interval);

    if (fields.has("model.hidden")) {
        cfg.hidden.clear();
        for (const std::string& cell : detail::split_csv_list(fields.take("model.hidden"))) {
            std::size_t width = 0;
            if (!detail::parse_number(cell, width)) {
                problems.push_back("model.hidden: '" + cell + "' is not a width");
                break;
            }
            cfg.hidden.push_back(width);
        }
    }
    if (fields.has("model.activation")) {
        try {
            cfg.activation = parse_activation(fields.take("model.activation"));
        } catch (const Error& e) {
            problems.push_back(std::string("model.activation: ") + e.what());
        }
    }
    if (fields.has("model.cut_layer")) {
        const std::string value = fields.take("model.cut_layer");
        if (value == "auto") {
            cfg.cut_auto = true;
        } else if (detail::parse_number(value, cfg.cut_layer)) {
            cfg.cut_auto = false;
        } else {
            problems.push_back("model.cut_layer: expected 'auto' or an index");
        }
    }

    get_ll("train.tau", cfg.tau);
    if (fields.has("train.eta_mode")) {
        const std::string mode = fields.take("train.eta_mode");
        if (mode == "table") {
            cfg.eta_mode = EtaMode::table;
        } else if (mode == "theory") {
            cfg.eta_mode = EtaMode::theory;
        } else if (mode == "manual") {
            cfg.eta_mode = EtaMode::manual;
        } else {
            problems.push_back("train.eta_mode: expected table, theory or manual");
        }
    }
    get_double("train.eta", cfg.eta);
    if (fields.has("train.eta_g")) {
        const std::string value = fields.take("train.eta_g");
        if (value == "theory") {
            cfg.eta_g_theory = true;
        } else if (detail::parse_number(value, cfg.eta_g)) {
            cfg.eta_g_theory = false;
        } else {
            problems.push_back("train.eta_g: expected a number or 'theory'");
        }
    }
    get_double("train.eta_s", cfg.eta_s);
    get_double("train.eta_c", cfg.eta_c);
    get_double("train.lambda", cfg.lambda);
    get_ll("train.perturbations", cfg.perturbations);
    get_ll("train.batch_size", cfg.batch_size);

    get_ll("federation.clients", cfg.clients);
    get_double("federation.participation", cfg.participation);

    if (fields.has("delay.distribution")) {
        const std::string kind = fields.take("delay.distribution");
        if (kind == "exponential") {
            cfg.delay_kind = DelayKind::exponential;
        } else if (kind == "fixed") {
            cfg.delay_kind = DelayKind::fixed;
        } else {
            problems.push_back("delay.distribution: expected exponential or fixed");
        }
    }
    if (fields.has("delay.client_means")) {
        const std::string value = fields.take("delay.client_means");
        cfg.delay_means.clear();
        if (value != "auto") {
            for (const std::string& cell : detail::split_csv_list(value)) {
                double mean = 0.0;
                if (!detail::parse_number(cell, mean)) {
                    problems.push_back("delay.client_means: '" + cell + "' is not a number");
                    break;
                }
                cfg.delay_means.push_back(mean);
            }
        }
    }
    get_double("delay.server_step_time", cfg.server_step_time);
    get_double("delay.exchange_overhead", cfg.exchange_overhead);

    if (fields.has("data.source")) {
        const std::string source = fields.take("data.source");
        if (source == "blobs") {
            cfg.source = DataSource::blobs;
        } else if (source == "csv") {
            cfg.source = DataSource::csv;
        } else {
            problems.push_back("data.source: expected blobs or csv");
        }
    }
    get_ll("data.classes", cfg.classes);
    get_ll("data.dim", cfg.dim);
    get_ll("data.samples_per_class", cfg.samples_per_class);
    get_double("data.spread", cfg.spread);
    if (fields.has("data.alpha")) {
        const std::string value = fields.take("data.alpha");
        if (value == "iid") {
            cfg.iid_partition = true;
        } else if (detail::parse_number(value, cfg.alpha)) {
            cfg.iid_partition = false;
        } else {
            problems.push_back("data.alpha: expected a number or 'iid'");
        }
    }
    get_double("data.holdout_fraction", cfg.holdout_fraction);
    get_string("data.csv_path", cfg.csv_path);
    get_string("data.label_column", cfg.label_column);

    for (const auto& [path, value] : fields.values) {
        problems.push_back(path + ": unknown key");
    }
    if (!problems.empty()) throw ConfigError(problems);
    cfg.validate();
    return cfg;
}

inline ExperimentConfig ExperimentConfig::load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open config file '" + path + "'");
    std::stringstream buffer;
    buffer << in.rdbuf();
    return parse(buffer.str());
}

inline std::string ExperimentConfig::snapshot() const {
    std::ostringstream out;
    out << "[run]\n";
    out << "seed = " << seed << "\n";
    out << "rounds = " << rounds << "\n";
    out << "eval_interval = " << eval_interval << "\n";
    out << "\n[model]\n";
    out << "hidden = ";
    for (std::size_t i = 0; i < hidden.size(); ++i) {
        if (i) out << ",";
        out << hidden[i];
    }
    out << "\n";
    out << "activation = " << to_string(activation) << "\n";
    out << "cut_layer = ";
    if (cut_auto) {
        out << "auto\n";
    } else {
        out << cut_layer << "\n";
    }
    out << "\n[train]\n";
    out << "tau = " << tau << "\n";
    out << "eta_mode = "
        << (eta_mode == EtaMode::table ? "table"
                                       : eta_mode == EtaMode::theory ? "theory" : "manual")
        << "\n";
    out << "eta = " << detail::format_double(eta) << "\n";
    out << "eta_g = " << (eta_g_theory ? "theory" : detail::format_double(eta_g)) << "\n";
    out << "eta_s = " << detail::format_double(eta_s) << "\n";
    out << "eta_c = " << detail::format_double(eta_c) << "\n";
    out << "lambda = " << detail::format_double(lambda) << "\n";
    out << "perturbations = " << perturbations << "\n";
    out << "batch_size = " << batch_size << "\n";
    out << "\n[federation]\n";
    out << "clients = " << clients << "\n";
    out << "participation = " << detail::format_double(participation) << "\n";
    out << "\n[delay]\n";
    out << "distribution = " << (delay_kind == DelayKind::exponential ? "exponential" : "fixed")
        << "\n";
    out << "client_means = ";
    if (delay_means.empty()) {
        out << "auto";
    } else {
        for (std::size_t i = 0; i < delay_means.size(); ++i) {
            if (i) out << ",";
            out << detail::format_double(delay_means[i]);
        }
    }
    out << "\n";
    out << "server_step_time = " << detail::format_double(server_step_time) << "\n";
    out << "exchange_overhead = " << detail::format_double(exchange_overhead) << "\n";
    out << "\n[data]\n";
    out << "source = " << (source == DataSource::blobs ? "blobs" : "csv") << "\n";
    out << "classes = " << classes << "\n";
    out << "dim = " << dim << "\n";
    out << "samples_per_class = " << samples_per_class << "\n";
    out << "spread = " << detail::format_double(spread) << "\n";
    out << "alpha = " << (iid_partition ? "iid" : detail::format_double(alpha)) << "\n";
    out << "holdout_fraction = " << detail::format_double(holdout_fraction) << "\n";
    out << "csv_path = " << csv_path << "\n";
    out << "label_column = " << label_column << "\n";
    return out.str();
}

}  // namespace splitsim
