#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "splitsim/common.hpp"
#include "splitsim/rng.hpp"

namespace splitsim {

enum class Activation { identity, relu, tanh };

inline Activation parse_activation(const std::string& name) {
    if (name == "identity") return Activation::identity;
    if (name == "relu") return Activation::relu;
    if (name == "tanh") return Activation::tanh;
    throw Error("unknown activation '" + name + "' (expected identity, relu or tanh)");
}

inline std::string to_string(Activation act) {
    switch (act) {
        case Activation::identity: return "identity";
        case Activation::relu: return "relu";
        case Activation::tanh: return "tanh";
    }
    return "identity";
}

/// Dense layer with its activation fused; cuts are only allowed between
/// dense layers, which keeps the parameter-count split unambiguous.
struct LayerSpec {
    std::size_t in_dim = 0;
    std::size_t out_dim = 0;
    Activation act = Activation::identity;

    std::size_t param_count() const { return in_dim * out_dim + out_dim; }
};

struct ModelSpec {
    std::vector<LayerSpec> layers;

    /// MLP with the given hidden widths; hidden layers use `hidden_act`,
    /// the final layer emits raw logits.
    static ModelSpec mlp(std::size_t input_dim, const std::vector<std::size_t>& hidden,
                         std::size_t output_dim, Activation hidden_act) {
        ModelSpec spec;
        std::size_t in = input_dim;
        for (std::size_t width : hidden) {
            spec.layers.push_back({in, width, hidden_act});
            in = width;
        }
        spec.layers.push_back({in, output_dim, Activation::identity});
        spec.validate();
        return spec;
    }

    void validate() const {
        if (layers.empty()) throw Error("model needs at least one layer");
        for (std::size_t i = 0; i < layers.size(); ++i) {
            if (layers[i].in_dim == 0 || layers[i].out_dim == 0) {
                throw Error("layer " + std::to_string(i) + " has a zero dimension");
            }
            if (i > 0 && layers[i].in_dim != layers[i - 1].out_dim) {
                throw Error("layer " + std::to_string(i) + " input dimension " +
                            std::to_string(layers[i].in_dim) + " does not match previous output " +
                            std::to_string(layers[i - 1].out_dim));
            }
        }
    }

    std::size_t input_dim() const { return layers.front().in_dim; }
    std::size_t output_dim() const { return layers.back().out_dim; }

    std::size_t param_count() const { return param_count_prefix(layers.size()); }

    /// Parameters in layers [0, cut).
    std::size_t param_count_prefix(std::size_t cut) const {
        std::size_t n = 0;
        for (std::size_t i = 0; i < cut && i < layers.size(); ++i) n += layers[i].param_count();
        return n;
    }
};

struct Batch {
    Matrix inputs;
    std::vector<int> labels;

    void validate(std::size_t num_classes) const {
        if (inputs.rows == 0) throw Error("batch must contain at least one sample");
        if (inputs.rows != labels.size()) throw Error("batch inputs and labels disagree in size");
        for (int y : labels) {
            if (y < 0 || static_cast<std::size_t>(y) >= num_classes) {
                throw Error("label " + std::to_string(y) + " outside [0, " +
                            std::to_string(num_classes) + ")");
            }
        }
    }
};

struct SplitDims {
    std::size_t total = 0;
    std::size_t client = 0;
    std::size_t server = 0;
};

inline double mean_cross_entropy(const Matrix& logits, std::span<const int> labels) {
    if (logits.rows != labels.size()) throw Error("logit rows and label count disagree");
    if (logits.rows == 0) throw Error("cross entropy over an empty batch");
    double total = 0.0;
    for (std::size_t r = 0; r < logits.rows; ++r) {
        const int y = labels[r];
        if (y < 0 || static_cast<std::size_t>(y) >= logits.cols) {
            throw Error("label " + std::to_string(y) + " outside logit range");
        }
        const double* row = logits.row(r);
        double max_logit = row[0];
        for (std::size_t c = 1; c < logits.cols; ++c) max_logit = std::max(max_logit, row[c]);
        if (!std::isfinite(max_logit)) {
            throw Error("non-finite logit in row " + std::to_string(r));
        }
        double sum_exp = 0.0;
        for (std::size_t c = 0; c < logits.cols; ++c) sum_exp += std::exp(row[c] - max_logit);
        total += max_logit + std::log(sum_exp) - row[y];
    }
    return total / static_cast<double>(logits.rows);
}

/// Forward-only layered network partitioned after `cut` dense layers.
/// Parameter layout per layer: weights row-major [out][in], then biases.
class SplitModel {
public:
    SplitModel(ModelSpec spec, std::size_t cut) : spec_(std::move(spec)), cut_(cut) {
        spec_.validate();
        if (spec_.layers.size() < 2) throw Error("a split model needs at least two dense layers");
        if (cut_ < 1 || cut_ > spec_.layers.size() - 1) {
            throw Error("cut layer " + std::to_string(cut_) + " outside [1, " +
                        std::to_string(spec_.layers.size() - 1) + "]");
        }
    }

    const ModelSpec& spec() const { return spec_; }
    std::size_t cut() const { return cut_; }
    std::size_t cut_width() const { return spec_.layers[cut_ - 1].out_dim; }
    std::size_t num_classes() const { return spec_.output_dim(); }

    SplitDims dims() const {
        SplitDims d;
        d.total = spec_.param_count();
        d.client = spec_.param_count_prefix(cut_);
        d.server = d.total - d.client;
        return d;
    }

    /// Client-side pass: layers [0, cut) producing the cut-layer embedding.
    Matrix forward_client(std::span<const double> params_client, const Matrix& inputs) const {
        if (params_client.size() != dims().client) {
            throw Error("client parameter count " + std::to_string(params_client.size()) +
                        " does not match d_c = " + std::to_string(dims().client));
        }
        return forward_range(params_client, 0, cut_, inputs);
    }

    Matrix forward_server_logits(std::span<const double> params_server,
                                 const Matrix& embedding) const {
        if (params_server.size() != dims().server) {
            throw Error("server parameter count " + std::to_string(params_server.size()) +
                        " does not match d_s = " + std::to_string(dims().server));
        }
        if (embedding.cols != cut_width()) {
            throw Error("embedding width " + std::to_string(embedding.cols) +
                        " does not match cut width " + std::to_string(cut_width()));
        }
        return forward_range(params_server, cut_, spec_.layers.size(), embedding);
    }

    double forward_server_loss(std::span<const double> params_server, const Matrix& embedding,
                               std::span<const int> labels) const {
        return mean_cross_entropy(forward_server_logits(params_server, embedding), labels);
    }

    /// Unsplit route: one pass over all layers. The split route must agree
    /// with this exactly.
    Matrix forward_full_logits(std::span<const double> params_full, const Matrix& inputs) const {
        if (params_full.size() != dims().total) {
            throw Error("full parameter count does not match d = " + std::to_string(dims().total));
        }
        return forward_range(params_full, 0, spec_.layers.size(), inputs);
    }

    double forward_full_loss(std::span<const double> params_full, const Matrix& inputs,
                             std::span<const int> labels) const {
        return mean_cross_entropy(forward_full_logits(params_full, inputs), labels);
    }

    double accuracy(std::span<const double> params_full, const Matrix& inputs,
                    std::span<const int> labels) const {
        if (inputs.rows == 0) return 0.0;
        const Matrix logits = forward_full_logits(params_full, inputs);
        std::size_t correct = 0;
        for (std::size_t r = 0; r < logits.rows; ++r) {
            const double* row = logits.row(r);
            std::size_t best = 0;
            for (std::size_t c = 1; c < logits.cols; ++c) {
                if (row[c] > row[best]) best = c;
            }
            if (static_cast<std::size_t>(labels[r]) == best) ++correct;
        }
        return static_cast<double>(correct) / static_cast<double>(logits.rows);
    }

    /// Scaled uniform init, entries ~ U(-1/sqrt(fan_in), +1/sqrt(fan_in)).
    std::vector<double> init_full_params(RngStream& rng) const {
        std::vector<double> params;
        params.reserve(dims().total);
        for (const LayerSpec& layer : spec_.layers) {
            const double bound = 1.0 / std::sqrt(static_cast<double>(layer.in_dim));
            for (std::size_t i = 0; i < layer.param_count(); ++i) {
                params.push_back((2.0 * rng.uniform01() - 1.0) * bound);
            }
        }
        return params;
    }

private:
    static double apply_activation(Activation act, double x) {
        switch (act) {
            case Activation::identity: return x;
            case Activation::relu: return x > 0.0 ? x : 0.0;
            case Activation::tanh: return std::tanh(x);
        }
        return x;
    }

    Matrix forward_range(std::span<const double> params, std::size_t first, std::size_t last,
                         const Matrix& input) const {
        if (input.cols != spec_.layers[first].in_dim) {
            throw Error("input width " + std::to_string(input.cols) + " does not match layer " +
                        std::to_string(first) + " input dimension " +
                        std::to_string(spec_.layers[first].in_dim));
        }
        Matrix current = input;
        std::size_t offset = 0;
        for (std::size_t li = first; li < last; ++li) {
            const LayerSpec& layer = spec_.layers[li];
            const double* weights = params.data() + offset;
            const double* bias = weights + layer.in_dim * layer.out_dim;
            Matrix next(current.rows, layer.out_dim);
            for (std::size_t r = 0; r < current.rows; ++r) {
                const double* in_row = current.row(r);
                double* out_row = next.row(r);
                for (std::size_t o = 0; o < layer.out_dim; ++o) {
                    double s = bias[o];
                    const double* w = weights + o * layer.in_dim;
                    for (std::size_t k = 0; k < layer.in_dim; ++k) s += w[k] * in_row[k];
                    out_row[o] = apply_activation(layer.act, s);
                }
            }
            current = std::move(next);
            offset += layer.param_count();
        }
        return current;
    }

    ModelSpec spec_;
    std::size_t cut_;
};

/// Cut index whose client parameter count is closest to sqrt(d / tau);
/// ties break toward the shallower client.
inline std::size_t recommend_cut(const ModelSpec& spec, double tau) {
    spec.validate();
    if (spec.layers.size() < 2) throw Error("recommend_cut needs at least two dense layers");
    if (!(tau >= 1.0)) throw Error("recommend_cut requires tau >= 1");
    const double total = static_cast<double>(spec.param_count());
    const double target = std::sqrt(total / tau);
    std::size_t best_cut = 1;
    double best_gap = std::abs(static_cast<double>(spec.param_count_prefix(1)) - target);
    for (std::size_t cut = 2; cut + 1 <= spec.layers.size(); ++cut) {
        const double gap = std::abs(static_cast<double>(spec.param_count_prefix(cut)) - target);
        if (gap < best_gap) {
            best_gap = gap;
            best_cut = cut;
        }
    }
    return best_cut;
}

}  // namespace splitsim
