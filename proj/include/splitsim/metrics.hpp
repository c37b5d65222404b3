#pragma once

#include <cstdio>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "splitsim/common.hpp"

namespace splitsim {

/// One row per global round; simulated_time is cumulative, the scalar
/// counters are per round.
struct RunRecord {
    long long round = 0;
    double simulated_time = 0.0;
    double train_loss = 0.0;
    double eval_accuracy = 0.0;
    long long comm_rounds = 0;
    long long uplink_scalars = 0;
    long long downlink_scalars = 0;
};

inline constexpr const char* kRecordsHeader =
    "round,simulated_time,train_loss,eval_accuracy,comm_rounds,uplink_scalars,downlink_scalars";

/// Deterministic formatting: 17 significant digits, so identical runs
/// produce byte-identical files and reads recover exact doubles.
inline void write_records(const std::vector<RunRecord>& records, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw Error("cannot write records file '" + path + "'");
    out << kRecordsHeader << "\n";
    char buf[64];
    for (const RunRecord& r : records) {
        out << r.round << ",";
        std::snprintf(buf, sizeof(buf), "%.17g", r.simulated_time);
        out << buf << ",";
        std::snprintf(buf, sizeof(buf), "%.17g", r.train_loss);
        out << buf << ",";
        std::snprintf(buf, sizeof(buf), "%.17g", r.eval_accuracy);
        out << buf << ",";
        out << r.comm_rounds << "," << r.uplink_scalars << "," << r.downlink_scalars << "\n";
    }
    if (!out) throw Error("write to '" + path + "' failed");
}

inline std::vector<RunRecord> read_records(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open records file '" + path + "'");
    std::string line;
    if (!std::getline(in, line)) throw Error("records file '" + path + "' is empty");
    std::vector<RunRecord> records;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        RunRecord r;
        std::stringstream ss(line);
        std::string cell;
        auto next = [&](const char* field) {
            if (!std::getline(ss, cell, ',')) {
                throw Error("records line " + std::to_string(line_no) + ": missing " + field);
            }
            return cell;
        };
        r.round = std::stoll(next("round"));
        r.simulated_time = std::stod(next("simulated_time"));
        r.train_loss = std::stod(next("train_loss"));
        r.eval_accuracy = std::stod(next("eval_accuracy"));
        r.comm_rounds = std::stoll(next("comm_rounds"));
        r.uplink_scalars = std::stoll(next("uplink_scalars"));
        r.downlink_scalars = std::stoll(next("downlink_scalars"));
        records.push_back(r);
    }
    return records;
}

/// First round whose held-out accuracy reaches the target; nullopt when the
/// run never gets there.
inline std::optional<long long> rounds_to_target(const std::vector<RunRecord>& records,
                                                 double target) {
    for (const RunRecord& r : records) {
        if (r.eval_accuracy >= target) return r.round;
    }
    return std::nullopt;
}

struct SpeedupRow {
    long long tau = 0;
    std::optional<long long> rounds;
    std::optional<double> ratio;  // rounds(tau=1) / rounds(tau)
};

/// Speedup table across a tau sweep that shares every other setting.
/// Requires the tau = 1 baseline; runs that never reach the target get a
/// blank ratio.
inline std::vector<SpeedupRow> speedup_report(
    const std::map<long long, std::vector<RunRecord>>& runs_by_tau, double target) {
    const auto baseline = runs_by_tau.find(1);
    if (baseline == runs_by_tau.end()) throw Error("speedup report requires a tau = 1 baseline");
    const std::optional<long long> base_rounds = rounds_to_target(baseline->second, target);

    std::vector<SpeedupRow> rows;
    for (const auto& [tau, records] : runs_by_tau) {
        SpeedupRow row;
        row.tau = tau;
        row.rounds = rounds_to_target(records, target);
        if (base_rounds && row.rounds) {
            if (*row.rounds > 0) {
                row.ratio = static_cast<double>(*base_rounds) / static_cast<double>(*row.rounds);
            } else if (*base_rounds == 0) {
                row.ratio = 1.0;
            }
        }
        rows.push_back(row);
    }
    return rows;
}

inline void write_speedup_report(const std::vector<SpeedupRow>& rows, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw Error("cannot write speedup report '" + path + "'");
    out << "tau,rounds_to_target,ratio_vs_tau1\n";
    char buf[64];
    for (const SpeedupRow& row : rows) {
        out << row.tau << ",";
        if (row.rounds) {
            out << *row.rounds;
        } else {
            out << "not_reached";
        }
        out << ",";
        if (row.ratio) {
            std::snprintf(buf, sizeof(buf), "%.17g", *row.ratio);
            out << buf;
        }
        out << "\n";
    }
}

/// Flat key = value summary, one pair per line.
inline void write_summary(const std::vector<std::pair<std::string, std::string>>& entries,
                          const std::string& path) {
    std::ofstream out(path);
    if (!out) throw Error("cannot write summary '" + path + "'");
    for (const auto& [key, value] : entries) out << key << " = " << value << "\n";
}

}  // namespace splitsim
