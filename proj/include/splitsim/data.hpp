#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "splitsim/common.hpp"
#include "splitsim/model.hpp"
#include "splitsim/rng.hpp"

namespace splitsim {

struct Dataset {
    Matrix features;
    std::vector<int> labels;
    int num_classes = 0;

    std::size_t size() const { return features.rows; }

    void validate() const {
        if (features.rows != labels.size()) throw Error("dataset rows and labels disagree");
        if (num_classes < 1) throw Error("dataset needs at least one class");
        for (int y : labels) {
            if (y < 0 || y >= num_classes) {
                throw Error("label " + std::to_string(y) + " outside [0, " +
                            std::to_string(num_classes) + ")");
            }
        }
    }
};

/// Zero mean, unit variance per column; constant columns are left centered.
inline void standardize(Dataset& ds) {
    if (ds.features.rows == 0) return;
    const double n = static_cast<double>(ds.features.rows);
    for (std::size_t c = 0; c < ds.features.cols; ++c) {
        double mean = 0.0;
        for (std::size_t r = 0; r < ds.features.rows; ++r) mean += ds.features.at(r, c);
        mean /= n;
        double var = 0.0;
        for (std::size_t r = 0; r < ds.features.rows; ++r) {
            const double d = ds.features.at(r, c) - mean;
            var += d * d;
        }
        var /= n;
        const double scale = var > 0.0 ? 1.0 / std::sqrt(var) : 1.0;
        for (std::size_t r = 0; r < ds.features.rows; ++r) {
            ds.features.at(r, c) = (ds.features.at(r, c) - mean) * scale;
        }
    }
}

/// Gaussian clusters with one mean per class, class-major row order,
/// standardized. Deterministic per seed.
inline Dataset make_blobs(int num_classes, std::size_t dim, std::size_t samples_per_class,
                          double spread, std::uint64_t seed) {
    if (num_classes < 1) throw Error("make_blobs needs at least one class");
    if (dim == 0) throw Error("make_blobs needs a positive dimension");
    if (samples_per_class == 0) throw Error("make_blobs needs at least one sample per class");
    if (spread < 0.0) throw Error("make_blobs spread must be non-negative");

    RngStream rng = RngStream::derive({seed, 0, 0, StreamRole::data_gen});
    Matrix means(static_cast<std::size_t>(num_classes), dim);
    for (double& m : means.data) m = 3.0 * rng.normal();

    Dataset ds;
    ds.num_classes = num_classes;
    ds.features = Matrix(static_cast<std::size_t>(num_classes) * samples_per_class, dim);
    ds.labels.resize(ds.features.rows);
    std::size_t row = 0;
    for (int cls = 0; cls < num_classes; ++cls) {
        for (std::size_t s = 0; s < samples_per_class; ++s, ++row) {
            ds.labels[row] = cls;
            for (std::size_t c = 0; c < dim; ++c) {
                ds.features.at(row, c) =
                    means.at(static_cast<std::size_t>(cls), c) + spread * rng.normal();
            }
        }
    }
    standardize(ds);
    return ds;
}

struct PartitionPlan {
    std::vector<std::vector<std::size_t>> client_indices;
    double dirichlet_alpha = 0.0;  // 0 marks an IID plan
    bool iid = false;

    void validate(std::size_t dataset_size) const {
        std::vector<char> seen(dataset_size, 0);
        std::size_t covered = 0;
        for (std::size_t m = 0; m < client_indices.size(); ++m) {
            if (client_indices[m].empty()) {
                throw Error("client " + std::to_string(m) + " received no samples");
            }
            for (std::size_t idx : client_indices[m]) {
                if (idx >= dataset_size) throw Error("partition index out of range");
                if (seen[idx]) throw Error("partition assigns a sample twice");
                seen[idx] = 1;
                ++covered;
            }
        }
        if (covered != dataset_size) throw Error("partition does not cover the dataset");
    }
};

namespace detail {

inline void repair_empty_clients(PartitionPlan& plan) {
    for (std::size_t m = 0; m < plan.client_indices.size(); ++m) {
        while (plan.client_indices[m].empty()) {
            std::size_t largest = 0;
            for (std::size_t k = 1; k < plan.client_indices.size(); ++k) {
                if (plan.client_indices[k].size() > plan.client_indices[largest].size()) {
                    largest = k;
                }
            }
            if (plan.client_indices[largest].size() <= 1) {
                throw Error("not enough samples to give every client one");
            }
            plan.client_indices[m].push_back(plan.client_indices[largest].back());
            plan.client_indices[largest].pop_back();
        }
    }
}

}  // namespace detail

/// Per-class proportions drawn from Dirichlet(alpha); larger alpha
/// approaches an IID split. Empty clients are repaired by moving one
/// sample from the largest client.
inline PartitionPlan partition_dirichlet(const Dataset& ds, std::size_t num_clients, double alpha,
                                         std::uint64_t seed) {
    ds.validate();
    if (num_clients == 0) throw Error("partition needs at least one client");
    if (!(alpha > 0.0)) throw Error("dirichlet alpha must be positive");
    if (ds.size() < num_clients) {
        throw Error("dataset of " + std::to_string(ds.size()) + " samples cannot cover " +
                    std::to_string(num_clients) + " clients");
    }

    RngStream rng = RngStream::derive({seed, 0, 0, StreamRole::partition});
    PartitionPlan plan;
    plan.dirichlet_alpha = alpha;
    plan.client_indices.resize(num_clients);

    for (int cls = 0; cls < ds.num_classes; ++cls) {
        std::vector<std::size_t> rows;
        for (std::size_t r = 0; r < ds.size(); ++r) {
            if (ds.labels[r] == cls) rows.push_back(r);
        }
        if (rows.empty()) continue;
        rng.shuffle(rows);

        std::vector<double> weights(num_clients);
        double total = 0.0;
        for (double& w : weights) {
            w = rng.gamma(alpha);
            total += w;
        }
        std::size_t assigned = 0;
        double cumulative = 0.0;
        for (std::size_t m = 0; m < num_clients; ++m) {
            cumulative += weights[m];
            const std::size_t upto =
                m + 1 == num_clients
                    ? rows.size()
                    : static_cast<std::size_t>(std::floor(
                          cumulative / total * static_cast<double>(rows.size())));
            for (; assigned < upto && assigned < rows.size(); ++assigned) {
                plan.client_indices[m].push_back(rows[assigned]);
            }
        }
    }

    detail::repair_empty_clients(plan);
    plan.validate(ds.size());
    return plan;
}

/// Round-robin over a globally shuffled index order.
inline PartitionPlan partition_iid(const Dataset& ds, std::size_t num_clients,
                                   std::uint64_t seed) {
    ds.validate();
    if (num_clients == 0) throw Error("partition needs at least one client");
    if (ds.size() < num_clients) {
        throw Error("dataset of " + std::to_string(ds.size()) + " samples cannot cover " +
                    std::to_string(num_clients) + " clients");
    }
    RngStream rng = RngStream::derive({seed, 0, 0, StreamRole::partition});
    std::vector<std::size_t> order(ds.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    rng.shuffle(order);

    PartitionPlan plan;
    plan.iid = true;
    plan.client_indices.resize(num_clients);
    for (std::size_t i = 0; i < order.size(); ++i) {
        plan.client_indices[i % num_clients].push_back(order[i]);
    }
    plan.validate(ds.size());
    return plan;
}

namespace detail {

inline bool parse_double_cell(const std::string& cell, double& out) {
    if (cell.empty()) return false;
    std::size_t pos = 0;
    try {
        out = std::stod(cell, &pos);
    } catch (const std::exception&) {
        return false;
    }
    return pos == cell.size();
}

inline std::vector<std::string> split_line(const std::string& line) {
    std::vector<std::string> cells;
    std::string cell;
    std::stringstream ss(line);
    while (std::getline(ss, cell, ',')) {
        while (!cell.empty() && (cell.back() == '\r' || cell.back() == ' ')) cell.pop_back();
        std::size_t start = 0;
        while (start < cell.size() && cell[start] == ' ') ++start;
        cells.push_back(cell.substr(start));
    }
    if (!line.empty() && line.back() == ',') cells.push_back("");
    return cells;
}

}  // namespace detail

/// Comma-separated text, '.' decimal separator, one sample per row. The
/// label column can be named (requires a header row) or given as an index.
/// Features are standardized after parsing.
inline Dataset load_csv(const std::string& path, const std::string& label_column) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open dataset file '" + path + "'");

    std::vector<std::string> lines;
    std::string line;
    while (std::getline(in, line)) lines.push_back(line);
    if (lines.empty()) throw Error("empty dataset in '" + path + "'");

    // The first row is a header when any of its cells is non-numeric.
    std::vector<std::string> header = detail::split_line(lines.front());
    bool has_header = false;
    for (const std::string& cell : header) {
        double ignored;
        if (!detail::parse_double_cell(cell, ignored)) {
            has_header = true;
            break;
        }
    }

    std::size_t label_idx = 0;
    bool label_found = false;
    if (has_header) {
        for (std::size_t i = 0; i < header.size(); ++i) {
            if (header[i] == label_column) {
                label_idx = i;
                label_found = true;
                break;
            }
        }
    }
    if (!label_found) {
        double idx = 0.0;
        if (!detail::parse_double_cell(label_column, idx) || idx < 0.0 ||
            idx != std::floor(idx)) {
            throw Error("label column '" + label_column + "' not found in '" + path + "'");
        }
        label_idx = static_cast<std::size_t>(idx);
    }

    const std::size_t first_data = has_header ? 1 : 0;
    if (lines.size() <= first_data) throw Error("empty dataset in '" + path + "'");

    const std::size_t num_cols = detail::split_line(lines[first_data]).size();
    if (label_idx >= num_cols) {
        throw Error("label column index " + std::to_string(label_idx) + " outside row width " +
                    std::to_string(num_cols));
    }

    Dataset ds;
    ds.features = Matrix(lines.size() - first_data, num_cols - 1);
    ds.labels.resize(lines.size() - first_data);
    int max_label = -1;
    for (std::size_t li = first_data; li < lines.size(); ++li) {
        const std::size_t line_no = li + 1;
        const std::vector<std::string> cells = detail::split_line(lines[li]);
        if (cells.size() != num_cols) {
            throw Error("line " + std::to_string(line_no) + ": expected " +
                        std::to_string(num_cols) + " cells, found " +
                        std::to_string(cells.size()));
        }
        const std::size_t row = li - first_data;
        std::size_t feature_col = 0;
        for (std::size_t c = 0; c < cells.size(); ++c) {
            double value;
            if (!detail::parse_double_cell(cells[c], value)) {
                throw Error("line " + std::to_string(line_no) + ": cannot parse '" + cells[c] +
                            "' as a number");
            }
            if (c == label_idx) {
                if (value < 0.0 || value != std::floor(value)) {
                    throw Error("line " + std::to_string(line_no) + ": label '" + cells[c] +
                                "' is not a non-negative integer");
                }
                ds.labels[row] = static_cast<int>(value);
                max_label = std::max(max_label, ds.labels[row]);
            } else {
                ds.features.at(row, feature_col++) = value;
            }
        }
    }
    ds.num_classes = max_label + 1;
    ds.validate();
    standardize(ds);
    return ds;
}

/// Writes features plus a trailing label column, 17 significant digits.
inline void save_csv(const Dataset& ds, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw Error("cannot write dataset file '" + path + "'");
    for (std::size_t c = 0; c < ds.features.cols; ++c) out << "f" << c << ",";
    out << "label\n";
    char buf[64];
    for (std::size_t r = 0; r < ds.size(); ++r) {
        for (std::size_t c = 0; c < ds.features.cols; ++c) {
            std::snprintf(buf, sizeof(buf), "%.17g", ds.features.at(r, c));
            out << buf << ",";
        }
        out << ds.labels[r] << "\n";
    }
}

/// Deterministic train/holdout row split; the holdout rows are for
/// evaluation only and never reach any client.
inline std::pair<Dataset, Dataset> split_holdout(const Dataset& ds, double holdout_fraction,
                                                 std::uint64_t seed) {
    ds.validate();
    if (holdout_fraction < 0.0 || holdout_fraction >= 1.0) {
        throw Error("holdout fraction must lie in [0, 1)");
    }
    std::vector<std::size_t> order(ds.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    RngStream rng = RngStream::derive({seed, 0, 0, StreamRole::holdout});
    rng.shuffle(order);

    const std::size_t holdout_count =
        static_cast<std::size_t>(std::floor(holdout_fraction * static_cast<double>(ds.size())));
    auto gather = [&](std::size_t first, std::size_t last) {
        Dataset part;
        part.num_classes = ds.num_classes;
        part.features = Matrix(last - first, ds.features.cols);
        part.labels.resize(last - first);
        for (std::size_t i = first; i < last; ++i) {
            const std::size_t src = order[i];
            part.labels[i - first] = ds.labels[src];
            for (std::size_t c = 0; c < ds.features.cols; ++c) {
                part.features.at(i - first, c) = ds.features.at(src, c);
            }
        }
        return part;
    };
    return {gather(holdout_count, ds.size()), gather(0, holdout_count)};
}

/// One minibatch drawn with replacement from the client's rows.
inline Batch draw_batch(const Dataset& ds, const std::vector<std::size_t>& client_rows,
                        std::size_t batch_size, RngStream& rng) {
    if (client_rows.empty()) throw Error("cannot draw a batch from an empty partition");
    if (batch_size == 0) throw Error("batch size must be positive");
    Batch batch;
    batch.inputs = Matrix(batch_size, ds.features.cols);
    batch.labels.resize(batch_size);
    for (std::size_t i = 0; i < batch_size; ++i) {
        const std::size_t src = client_rows[rng.uniform_index(client_rows.size())];
        batch.labels[i] = ds.labels[src];
        for (std::size_t c = 0; c < ds.features.cols; ++c) {
            batch.inputs.at(i, c) = ds.features.at(src, c);
        }
    }
    return batch;
}

}  // namespace splitsim
