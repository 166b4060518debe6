#pragma once

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

#include "wcmi/matrix.hpp"
#include "wcmi/rng.hpp"

namespace wcmi {

enum class LayerKind { affine, relu, tanh };

inline std::string layer_kind_name(LayerKind k) {
    switch (k) {
        case LayerKind::affine: return "affine";
        case LayerKind::relu: return "relu";
        case LayerKind::tanh: return "tanh";
    }
    throw std::logic_error("layer_kind_name: unknown kind");
}

inline LayerKind layer_kind_from_name(const std::string& s) {
    if (s == "affine") return LayerKind::affine;
    if (s == "relu") return LayerKind::relu;
    if (s == "tanh") return LayerKind::tanh;
    throw std::invalid_argument("unknown layer kind: " + s);
}

/// Element-wise nonlinearity slot in an architecture description.
enum class Activation { none, relu, tanh };

inline std::string activation_name(Activation a) {
    switch (a) {
        case Activation::none: return "none";
        case Activation::relu: return "relu";
        case Activation::tanh: return "tanh";
    }
    throw std::logic_error("activation_name: unknown activation");
}

inline Activation activation_from_name(const std::string& s) {
    if (s == "none") return Activation::none;
    if (s == "relu") return Activation::relu;
    if (s == "tanh") return Activation::tanh;
    throw std::invalid_argument("unknown activation: " + s);
}

/// Gradients of a scalar objective: flat parameter gradients aligned with the
/// network's parameter store, per-sample input gradients aligned with the
/// batch, and the objective value itself.
struct GradientBundle {
    double value = 0.0;
    Vec param_grads;
    Matrix input_grads;
};

/**
 * Feed-forward network over 64-bit reals: a chain of affine layers
 * (W row-major, then bias, in one flat parameter store) and element-wise
 * activations. Supplies exact reverse-mode gradients with respect to both
 * parameters and inputs, which lets projected-gradient attacks differentiate
 * through frozen networks.
 */
class Network {
public:
    struct Layer {
        LayerKind kind;
        std::size_t in = 0;
        std::size_t out = 0;
        std::size_t offset = 0;  // into the parameter store; affine layers only
    };

    Network() = default;

    /**
     * Builds a multilayer perceptron with the given layer widths
     * dims = [input, hidden..., output]. `hidden` activation follows every
     * affine layer but the last; `output` activation (if not affine) caps the
     * chain. Weights and biases start uniform in [-a, a] with
     * a = sqrt(6 / (fan_in + fan_out)).
     */
    static Network mlp(const std::vector<std::size_t>& dims, Activation hidden, Activation output,
                       SeededRng& rng) {
        if (dims.size() < 2) throw std::invalid_argument("Network::mlp: need at least two dims");
        for (std::size_t d : dims)
            if (d == 0) throw std::invalid_argument("Network::mlp: zero layer width");
        Network net;
        net.input_dim_ = dims.front();
        for (std::size_t i = 0; i + 1 < dims.size(); ++i) {
            net.push_affine(dims[i], dims[i + 1]);
            const Activation act = (i + 2 == dims.size()) ? output : hidden;
            if (act == Activation::relu) net.push_activation(LayerKind::relu, dims[i + 1]);
            if (act == Activation::tanh) net.push_activation(LayerKind::tanh, dims[i + 1]);
        }
        net.init_uniform(rng);
        return net;
    }

    /// Convenience: MLP with ReLU hidden activations and a linear output.
    static Network mlp(const std::vector<std::size_t>& dims, SeededRng& rng) {
        return mlp(dims, Activation::relu, Activation::none, rng);
    }

    /// Single affine layer with explicit weights; used for frozen analytic
    /// features and hand-constructed test cases.
    static Network linear(const Matrix& W, const Vec& b) {
        if (W.rows() != b.size()) throw std::invalid_argument("Network::linear: W/b mismatch");
        Network net;
        net.input_dim_ = W.cols();
        net.output_dim_ = W.rows();
        net.push_affine(W.cols(), W.rows());
        for (std::size_t i = 0; i < W.rows(); ++i)
            for (std::size_t j = 0; j < W.cols(); ++j) net.params_[i * W.cols() + j] = W(i, j);
        for (std::size_t i = 0; i < b.size(); ++i) net.params_[W.rows() * W.cols() + i] = b[i];
        return net;
    }

    /// Feeds `first`'s output into `second`, producing one network whose
    /// gradients flow through both parts.
    static Network chain(const Network& first, const Network& second) {
        if (first.output_dim_ != second.input_dim_)
            throw std::invalid_argument("Network::chain: dimension mismatch at the seam");
        Network net;
        net.input_dim_ = first.input_dim_;
        net.output_dim_ = second.output_dim_;
        net.layers_ = first.layers_;
        net.params_ = first.params_;
        const std::size_t base = net.params_.size();
        for (Layer layer : second.layers_) {
            if (layer.kind == LayerKind::affine) layer.offset += base;
            net.layers_.push_back(layer);
        }
        net.params_.insert(net.params_.end(), second.params_.begin(), second.params_.end());
        return net;
    }

    /// Appends an element-wise activation after the current last layer.
    Network& append_activation(LayerKind kind) {
        if (kind == LayerKind::affine)
            throw std::invalid_argument("append_activation: affine is not an activation");
        if (layers_.empty()) throw std::logic_error("append_activation: empty network");
        push_activation(kind, output_dim_);
        return *this;
    }

    std::size_t input_dim() const { return input_dim_; }
    std::size_t output_dim() const { return output_dim_; }
    std::size_t param_count() const { return params_.size(); }
    const Vec& params() const { return params_; }
    Vec& params() { return params_; }
    const std::vector<Layer>& layers() const { return layers_; }

    /// Row-wise forward pass; deterministic.
    Matrix forward(const Matrix& batch) const {
        check_input(batch);
        Matrix cur = batch;
        for (const Layer& layer : layers_) cur = apply_layer(layer, cur);
        return cur;
    }

    Vec forward_row(const Vec& x) const {
        Matrix b(1, x.size());
        for (std::size_t j = 0; j < x.size(); ++j) b(0, j) = x[j];
        return forward(b).row_copy(0);
    }

    /**
     * Reverse-mode gradients of <cotangent, forward(batch)> with respect to
     * every parameter and every input coordinate. `value` carries that inner
     * product.
     */
    GradientBundle backward(const Matrix& batch, const Matrix& cotangent) const {
        check_input(batch);
        // forward tape: activations at every layer boundary
        std::vector<Matrix> tape;
        tape.reserve(layers_.size() + 1);
        tape.push_back(batch);
        for (const Layer& layer : layers_) tape.push_back(apply_layer(layer, tape.back()));

        const Matrix& out = tape.back();
        if (cotangent.rows() != out.rows() || cotangent.cols() != out.cols())
            throw std::invalid_argument("Network::backward: cotangent shape mismatch");

        GradientBundle g;
        g.param_grads.assign(params_.size(), 0.0);
        for (std::size_t i = 0; i < out.rows(); ++i)
            for (std::size_t j = 0; j < out.cols(); ++j) g.value += cotangent(i, j) * out(i, j);

        Matrix grad = cotangent;
        for (std::size_t li = layers_.size(); li-- > 0;) {
            const Layer& layer = layers_[li];
            const Matrix& x = tape[li];
            const Matrix& y = tape[li + 1];
            const std::size_t n = grad.rows();
            if (layer.kind == LayerKind::affine) {
                const double* W = params_.data() + layer.offset;
                double* dW = g.param_grads.data() + layer.offset;
                double* db = dW + layer.out * layer.in;
                Matrix next(n, layer.in);
                for (std::size_t r = 0; r < n; ++r) {
                    const double* xr = x.row(r);
                    const double* gr = grad.row(r);
                    double* nr = next.row(r);
                    for (std::size_t o = 0; o < layer.out; ++o) {
                        const double go = gr[o];
                        if (go == 0.0) continue;
                        const double* Wo = W + o * layer.in;
                        double* dWo = dW + o * layer.in;
                        for (std::size_t i2 = 0; i2 < layer.in; ++i2) {
                            dWo[i2] += go * xr[i2];
                            nr[i2] += go * Wo[i2];
                        }
                        db[o] += go;
                    }
                }
                grad = std::move(next);
            } else if (layer.kind == LayerKind::relu) {
                // subgradient at 0 is 0: y > 0 exactly when the unit is active
                for (std::size_t r = 0; r < n; ++r)
                    for (std::size_t c = 0; c < layer.out; ++c)
                        if (!(y(r, c) > 0.0)) grad(r, c) = 0.0;
            } else {
                for (std::size_t r = 0; r < n; ++r)
                    for (std::size_t c = 0; c < layer.out; ++c)
                        grad(r, c) *= 1.0 - y(r, c) * y(r, c);
            }
        }
        g.input_grads = std::move(grad);
        return g;
    }

    bool operator==(const Network& other) const {
        if (params_ != other.params_ || input_dim_ != other.input_dim_ ||
            output_dim_ != other.output_dim_ || layers_.size() != other.layers_.size())
            return false;
        for (std::size_t i = 0; i < layers_.size(); ++i)
            if (layers_[i].kind != other.layers_[i].kind || layers_[i].in != other.layers_[i].in ||
                layers_[i].out != other.layers_[i].out)
                return false;
        return true;
    }

    /// Raw constructor for persistence: layer descriptors plus the flat store.
    static Network from_layers(std::vector<Layer> layers, Vec params, std::size_t input_dim,
                               std::size_t output_dim) {
        Network net;
        net.layers_ = std::move(layers);
        net.params_ = std::move(params);
        net.input_dim_ = input_dim;
        net.output_dim_ = output_dim;
        std::size_t expect = 0;
        std::size_t cur = input_dim;
        for (auto& layer : net.layers_) {
            if (layer.in != cur)
                throw std::invalid_argument("Network::from_layers: dimension chain broken");
            if (layer.kind == LayerKind::affine) {
                if (layer.offset != expect)
                    throw std::invalid_argument("Network::from_layers: bad parameter offset");
                expect += layer.out * layer.in + layer.out;
            } else if (layer.in != layer.out) {
                throw std::invalid_argument("Network::from_layers: activation must preserve dim");
            }
            cur = layer.out;
        }
        if (cur != output_dim || expect != net.params_.size())
            throw std::invalid_argument("Network::from_layers: size mismatch");
        return net;
    }

private:
    std::vector<Layer> layers_;
    Vec params_;
    std::size_t input_dim_ = 0;
    std::size_t output_dim_ = 0;

    void push_affine(std::size_t in, std::size_t out) {
        layers_.push_back({LayerKind::affine, in, out, params_.size()});
        params_.resize(params_.size() + out * in + out, 0.0);
        output_dim_ = out;
    }

    void push_activation(LayerKind kind, std::size_t dim) {
        layers_.push_back({kind, dim, dim, 0});
    }

    void init_uniform(SeededRng& rng) {
        for (const Layer& layer : layers_) {
            if (layer.kind != LayerKind::affine) continue;
            const double a = std::sqrt(6.0 / double(layer.in + layer.out));
            const std::size_t count = layer.out * layer.in + layer.out;
            for (std::size_t i = 0; i < count; ++i)
                params_[layer.offset + i] = rng.uniform(-a, a);
        }
    }

    void check_input(const Matrix& batch) const {
        if (layers_.empty()) throw std::logic_error("Network: empty");
        if (batch.cols() != input_dim_)
            throw std::invalid_argument("Network: batch has " + std::to_string(batch.cols()) +
                                        " columns, expected " + std::to_string(input_dim_));
    }

    Matrix apply_layer(const Layer& layer, const Matrix& x) const {
        const std::size_t n = x.rows();
        if (layer.kind == LayerKind::affine) {
            const double* W = params_.data() + layer.offset;
            const double* b = W + layer.out * layer.in;
            Matrix y(n, layer.out);
            for (std::size_t r = 0; r < n; ++r) {
                const double* xr = x.row(r);
                double* yr = y.row(r);
                for (std::size_t o = 0; o < layer.out; ++o) {
                    const double* Wo = W + o * layer.in;
                    double acc = b[o];
                    for (std::size_t i = 0; i < layer.in; ++i) acc += Wo[i] * xr[i];
                    yr[o] = acc;
                }
            }
            return y;
        }
        Matrix y = x;
        if (layer.kind == LayerKind::relu) {
            for (double& v : y.data())
                if (v < 0.0) v = 0.0;
        } else {
            for (double& v : y.data()) v = std::tanh(v);
        }
        return y;
    }
};

/**
 * Mean softmax cross-entropy over a batch of logit rows, in nats. When
 * `dlogits` is non-null it receives the gradient of the mean loss with
 * respect to every logit (softmax minus one-hot, divided by batch size).
 */
inline double softmax_cross_entropy(const Matrix& logits, const std::vector<int>& labels,
                                    Matrix* dlogits = nullptr) {
    if (logits.rows() != labels.size())
        throw std::invalid_argument("softmax_cross_entropy: batch/label size mismatch");
    if (logits.rows() == 0) throw std::invalid_argument("softmax_cross_entropy: empty batch");
    const std::size_t n = logits.rows(), k = logits.cols();
    if (dlogits) *dlogits = Matrix(n, k);
    double loss = 0.0;
    for (std::size_t r = 0; r < n; ++r) {
        const int label = labels[r];
        if (label < 0 || std::size_t(label) >= k)
            throw std::invalid_argument("softmax_cross_entropy: label out of range");
        const double* z = logits.row(r);
        double zmax = z[0];
        for (std::size_t j = 1; j < k; ++j) zmax = std::max(zmax, z[j]);
        double sum = 0.0;
        for (std::size_t j = 0; j < k; ++j) sum += std::exp(z[j] - zmax);
        const double lse = zmax + std::log(sum);
        loss += lse - z[label];
        if (dlogits) {
            double* d = dlogits->row(r);
            for (std::size_t j = 0; j < k; ++j)
                d[j] = (std::exp(z[j] - lse) - (std::size_t(label) == j ? 1.0 : 0.0)) / double(n);
        }
    }
    return loss / double(n);
}

/// Index of the largest logit; deterministic tie-break toward the lower index.
inline int argmax_row(const double* z, std::size_t k) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < k; ++j)
        if (z[j] > z[best]) best = j;
    return int(best);
}

}  // namespace wcmi
