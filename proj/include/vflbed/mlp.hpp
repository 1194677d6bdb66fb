#pragma once

#include <cmath>
#include <cstddef>
#include <numbers>
#include <vector>

#include "vflbed/errors.hpp"
#include "vflbed/matrix.hpp"
#include "vflbed/rng.hpp"

namespace vflbed {

/// Cosine-annealed SGD schedule: lr(t) = 0.5 * base * (1 + cos(pi * t / total)).
/// t advances once per optimizer step.
struct SGDSchedule {
    double base_lr = 0.0;
    std::size_t total_steps = 0;
    std::size_t current_step = 0;

    SGDSchedule() = default;
    SGDSchedule(double base, std::size_t total) : base_lr(base), total_steps(total) {
        if (base < 0.0) throw ConfigError("SGDSchedule: negative learning rate");
        if (total == 0) throw ConfigError("SGDSchedule: total_steps must be positive");
    }

    double lr() const {
        const double t = static_cast<double>(current_step) / static_cast<double>(total_steps);
        return 0.5 * base_lr * (1.0 + std::cos(std::numbers::pi * t));
    }

    void advance() {
        if (current_step < total_steps) ++current_step;
    }
};

struct Layer {
    DenseMatrix w;          // in_dim x out_dim
    std::vector<double> b;  // out_dim
};

struct LayerGrad {
    DenseMatrix dw;
    std::vector<double> db;
};

/// Activations recorded during a forward pass, needed for backprop.
/// inputs[l] is the input to layer l; preacts[l] its pre-activation output.
struct ForwardCache {
    std::vector<DenseMatrix> inputs;
    std::vector<DenseMatrix> preacts;
};

struct Gradients {
    std::vector<LayerGrad> layers;
    DenseMatrix input_grad;  // dLoss/dInput, batch x in_dim
};

/// Fully connected net: affine + ReLU on every layer except the last, which is
/// affine only (identity). Weights init uniform +-sqrt(6/fan_in), biases zero.
struct MLPModel {
    std::vector<Layer> layers;

    static MLPModel init(const std::vector<std::size_t>& dims, Rng rng) {
        if (dims.size() < 2) throw ConfigError("MLPModel: need at least input and output dims");
        for (std::size_t d : dims)
            if (d == 0) throw ConfigError("MLPModel: zero-width layer");
        MLPModel m;
        for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
            Layer layer;
            layer.w = DenseMatrix(dims[l], dims[l + 1]);
            const double bound = std::sqrt(6.0 / static_cast<double>(dims[l]));
            for (double& v : layer.w.data) v = rng.uniform(-bound, bound);
            layer.b.assign(dims[l + 1], 0.0);
            m.layers.push_back(std::move(layer));
        }
        return m;
    }

    std::size_t in_dim() const { return layers.front().w.rows; }
    std::size_t out_dim() const { return layers.back().w.cols; }

    std::size_t param_count() const {
        std::size_t n = 0;
        for (const Layer& l : layers) n += l.w.size() + l.b.size();
        return n;
    }
};

/// Forward pass. If `cache` is non-null it is filled for a later backward call.
inline DenseMatrix mlp_forward(const MLPModel& m, const DenseMatrix& x, ForwardCache* cache = nullptr) {
    if (x.cols != m.in_dim())
        throw InputError("mlp_forward: input width " + std::to_string(x.cols) + " != model input dim " +
                         std::to_string(m.in_dim()));
    if (cache) {
        cache->inputs.clear();
        cache->preacts.clear();
    }
    DenseMatrix cur = x;
    for (std::size_t l = 0; l < m.layers.size(); ++l) {
        if (cache) cache->inputs.push_back(cur);
        DenseMatrix z = matmul(cur, m.layers[l].w);
        for (std::size_t i = 0; i < z.rows; ++i) {
            double* zi = z.data.data() + i * z.cols;
            for (std::size_t j = 0; j < z.cols; ++j) zi[j] += m.layers[l].b[j];
        }
        if (cache) cache->preacts.push_back(z);
        const bool last = (l + 1 == m.layers.size());
        if (!last) {
            for (double& v : z.data) v = v > 0.0 ? v : 0.0;
        }
        cur = std::move(z);
    }
    return cur;
}

/// Backprop. `upstream` is dLoss/dOutput (batch x out_dim) for the same batch
/// the cache was filled with. Returns parameter grads and dLoss/dInput.
inline Gradients mlp_backward(const MLPModel& m, const ForwardCache& cache, const DenseMatrix& upstream) {
    if (cache.inputs.size() != m.layers.size())
        throw InputError("mlp_backward: cache does not match model depth");
    require_shape(upstream, cache.inputs.front().rows, m.out_dim(), "mlp_backward upstream");

    Gradients g;
    g.layers.resize(m.layers.size());
    DenseMatrix delta = upstream;
    for (std::size_t l = m.layers.size(); l-- > 0;) {
        const bool last = (l + 1 == m.layers.size());
        if (!last) {
            // Gate by the ReLU mask of this layer's pre-activation.
            const DenseMatrix& z = cache.preacts[l];
            for (std::size_t i = 0; i < delta.size(); ++i)
                if (z.data[i] <= 0.0) delta.data[i] = 0.0;
        }
        g.layers[l].dw = matmul_at_b(cache.inputs[l], delta);
        g.layers[l].db.assign(m.layers[l].b.size(), 0.0);
        for (std::size_t i = 0; i < delta.rows; ++i) {
            const double* di = delta.data.data() + i * delta.cols;
            for (std::size_t j = 0; j < delta.cols; ++j) g.layers[l].db[j] += di[j];
        }
        delta = matmul_a_bt(delta, m.layers[l].w);
    }
    g.input_grad = std::move(delta);
    return g;
}

/// theta <- theta - lr * grad. Zero grads leave the model bit-identical.
inline void sgd_step(MLPModel& m, const Gradients& g, double lr) {
    if (g.layers.size() != m.layers.size()) throw InputError("sgd_step: gradient/model depth mismatch");
    for (std::size_t l = 0; l < m.layers.size(); ++l) {
        Layer& layer = m.layers[l];
        const LayerGrad& lg = g.layers[l];
        if (!layer.w.same_shape(lg.dw) || layer.b.size() != lg.db.size())
            throw InputError("sgd_step: gradient shape mismatch at layer " + std::to_string(l));
        for (std::size_t i = 0; i < layer.w.size(); ++i) layer.w.data[i] -= lr * lg.dw.data[i];
        for (std::size_t j = 0; j < layer.b.size(); ++j) layer.b[j] -= lr * lg.db[j];
    }
}

/// Softmax probabilities, per-sample cross-entropy losses and the error matrix
/// (probs - onehot), which is dLoss_i/dlogits_i for per-sample loss.
struct SoftmaxCE {
    DenseMatrix probs;
    std::vector<double> losses;
    DenseMatrix error;

    double mean_loss() const {
        double s = 0.0;
        for (double l : losses) s += l;
        return s / static_cast<double>(losses.size());
    }
};

inline SoftmaxCE softmax_cross_entropy(const DenseMatrix& logits, std::span<const int> labels) {
    if (logits.rows != labels.size()) throw InputError("softmax_cross_entropy: label count mismatch");
    if (logits.rows == 0) throw InputError("softmax_cross_entropy: empty batch");
    SoftmaxCE out;
    out.probs = DenseMatrix(logits.rows, logits.cols);
    out.error = DenseMatrix(logits.rows, logits.cols);
    out.losses.resize(logits.rows);
    for (std::size_t i = 0; i < logits.rows; ++i) {
        const int y = labels[i];
        if (y < 0 || static_cast<std::size_t>(y) >= logits.cols)
            throw InputError("softmax_cross_entropy: label " + std::to_string(y) + " out of range");
        const double* zi = logits.data.data() + i * logits.cols;
        double zmax = zi[0];
        for (std::size_t c = 1; c < logits.cols; ++c) zmax = std::max(zmax, zi[c]);
        double sum = 0.0;
        for (std::size_t c = 0; c < logits.cols; ++c) sum += std::exp(zi[c] - zmax);
        const double lse = zmax + std::log(sum);
        out.losses[i] = lse - zi[y];
        for (std::size_t c = 0; c < logits.cols; ++c) {
            const double p = std::exp(zi[c] - lse);
            out.probs.at(i, c) = p;
            out.error.at(i, c) = p - (static_cast<std::size_t>(y) == c ? 1.0 : 0.0);
        }
    }
    return out;
}

/// argmax per row; ties resolve to the lowest class index.
inline std::vector<int> argmax_rows(const DenseMatrix& m) {
    std::vector<int> out(m.rows);
    for (std::size_t i = 0; i < m.rows; ++i) {
        const double* ri = m.data.data() + i * m.cols;
        std::size_t best = 0;
        for (std::size_t c = 1; c < m.cols; ++c)
            if (ri[c] > ri[best]) best = c;
        out[i] = static_cast<int>(best);
    }
    return out;
}

} // namespace vflbed
