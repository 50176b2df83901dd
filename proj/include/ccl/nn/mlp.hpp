#pragma once

#include "ccl/common.hpp"

#include <cmath>
#include <random>
#include <string>
#include <vector>

namespace ccl::nn {

enum class Act { Identity, Relu, Silu, Tanh };

template <typename S>
S act_forward(Act a, S z) {
    switch (a) {
        case Act::Relu: return z > S(0) ? z : S(0);
        case Act::Silu: return z / (S(1) + std::exp(-z));
        case Act::Tanh: return std::tanh(z);
        case Act::Identity: return z;
    }
    return z;
}

template <typename S>
S act_derivative(Act a, S z) {
    switch (a) {
        case Act::Relu: return z > S(0) ? S(1) : S(0);
        case Act::Silu: {
            const S s = S(1) / (S(1) + std::exp(-z));
            return s * (S(1) + z * (S(1) - s));
        }
        case Act::Tanh: {
            const S t = std::tanh(z);
            return S(1) - t * t;
        }
        case Act::Identity: return S(1);
    }
    return S(1);
}

struct LayoutEntry {
    std::string name;
    std::vector<int> shape;
    int offset = 0;
    int count = 0;
};

// Fully connected network operating on flat parameter vectors. Samples are
// matrix columns. Hidden layers are Linear [-> LayerNorm] -> activation; the
// output layer is linear. forward/backward are pure given (params, input).
template <typename S>
class Mlp {
public:
    struct Options {
        std::vector<int> dims;
        Act hidden_act = Act::Relu;
        bool layer_norm = false;
        bool zero_init_output = false;
    };

    struct Cache {
        std::vector<MatX<S>> x;         // x[l] = input to layer l; x[L] = output
        std::vector<MatX<S>> act_in;    // activation input per hidden layer
        std::vector<MatX<S>> norm;      // LayerNorm normalized values
        std::vector<Eigen::RowVectorX<S>> inv_sigma;
    };

    explicit Mlp(Options opt) : opt_(std::move(opt)) {
        require(opt_.dims.size() >= 2, "Mlp: need at least input and output dims");
        int off = 0;
        const int L = num_layers();
        for (int l = 0; l < L; ++l) {
            const int in = opt_.dims[l], out = opt_.dims[l + 1];
            auto add = [&](const std::string& name, std::vector<int> shape, int count) {
                layout_.push_back({name, std::move(shape), off, count});
                off += count;
            };
            const std::string p = "fc" + std::to_string(l);
            add(p + ".weight", {out, in}, out * in);
            add(p + ".bias", {out}, out);
            if (opt_.layer_norm && l < L - 1) {
                add(p + ".ln_gain", {out}, out);
                add(p + ".ln_bias", {out}, out);
            }
        }
        param_count_ = off;
    }

    int num_layers() const { return static_cast<int>(opt_.dims.size()) - 1; }
    int input_dim() const { return opt_.dims.front(); }
    int output_dim() const { return opt_.dims.back(); }
    int param_count() const { return param_count_; }
    const std::vector<LayoutEntry>& layout() const { return layout_; }
    const Options& options() const { return opt_; }

    void init_params(VecX<S>& params, std::mt19937_64& rng) const {
        params.setZero(param_count_);
        std::normal_distribution<double> unit(0.0, 1.0);
        const int L = num_layers();
        int e = 0;
        for (int l = 0; l < L; ++l) {
            const int in = opt_.dims[l];
            const bool zero = opt_.zero_init_output && l == L - 1;
            const double gain =
                (opt_.hidden_act == Act::Relu || opt_.hidden_act == Act::Silu) ? std::sqrt(2.0) : 1.0;
            const double std_dev = (l == L - 1 ? 1.0 : gain) / std::sqrt(double(in));
            const LayoutEntry& w = layout_[e++];
            if (!zero) {
                for (int i = 0; i < w.count; ++i)
                    params[w.offset + i] = static_cast<S>(unit(rng) * std_dev);
            } else {
                // keep rng stream aligned whether or not the layer is zeroed
                for (int i = 0; i < w.count; ++i) unit(rng);
            }
            ++e;  // bias stays zero
            if (opt_.layer_norm && l < L - 1) {
                const LayoutEntry& g = layout_[e++];
                params.segment(g.offset, g.count).setOnes();
                ++e;  // ln bias stays zero
            }
        }
    }

    MatX<S> forward(const VecX<S>& params, const MatX<S>& X, Cache* cache = nullptr) const {
        require(params.size() == param_count_, "Mlp::forward: parameter length mismatch");
        require(X.rows() == input_dim(), "Mlp::forward: input dim mismatch");
        const int L = num_layers();
        if (cache) {
            cache->x.assign(L + 1, {});
            cache->act_in.assign(L, {});
            cache->norm.assign(L, {});
            cache->inv_sigma.assign(L, {});
            cache->x[0] = X;
        }
        MatX<S> h = X;
        int e = 0;
        for (int l = 0; l < L; ++l) {
            const int in = opt_.dims[l], out = opt_.dims[l + 1];
            auto W = weight_map(params, e, out, in);
            auto b = vec_map(params, e + 1);
            MatX<S> z = (W * h).colwise() + b;
            e += 2;
            if (l < L - 1) {
                if (opt_.layer_norm) {
                    auto gamma = vec_map(params, e);
                    auto beta = vec_map(params, e + 1);
                    e += 2;
                    Eigen::RowVectorX<S> mu = z.colwise().mean();
                    MatX<S> centered = z.rowwise() - mu;
                    Eigen::RowVectorX<S> inv_sigma =
                        (centered.array().square().colwise().mean() + S(kLnEps)).sqrt().inverse().matrix();
                    MatX<S> zn = (centered.array().rowwise() * inv_sigma.array()).matrix();
                    z = (((zn.array().colwise() * gamma.array()).colwise()) + beta.array()).matrix();
                    if (cache) {
                        cache->norm[l] = std::move(zn);
                        cache->inv_sigma[l] = std::move(inv_sigma);
                    }
                }
                if (cache) cache->act_in[l] = z;
                h = z.unaryExpr([&](S v) { return act_forward(opt_.hidden_act, v); });
            } else {
                h = std::move(z);
            }
            if (cache) cache->x[l + 1] = h;
        }
        return h;
    }

    // dY is the loss gradient at the output. Parameter gradients accumulate
    // into *dparams when non-null; the return value is the input gradient.
    MatX<S> backward(const VecX<S>& params, const Cache& cache, const MatX<S>& dY,
                     VecX<S>* dparams) const {
        const int L = num_layers();
        if (dparams) require(dparams->size() == param_count_, "Mlp::backward: grad length mismatch");
        MatX<S> delta = dY;
        for (int l = L - 1; l >= 0; --l) {
            const int in = opt_.dims[l], out = opt_.dims[l + 1];
            const int e = entry_index(l);
            if (l < L - 1) {
                delta.array() *=
                    cache.act_in[l].unaryExpr([&](S v) { return act_derivative(opt_.hidden_act, v); }).array();
                if (opt_.layer_norm) {
                    auto gamma = vec_map(params, e + 2);
                    if (dparams) {
                        grad_vec(*dparams, e + 2) +=
                            (delta.array() * cache.norm[l].array()).rowwise().sum().matrix();
                        grad_vec(*dparams, e + 3) += delta.rowwise().sum();
                    }
                    MatX<S> dzn = (delta.array().colwise() * gamma.array()).matrix();
                    // column-wise LayerNorm backward
                    Eigen::RowVectorX<S> mean_dzn = dzn.colwise().mean();
                    Eigen::RowVectorX<S> mean_dzn_zn =
                        (dzn.array() * cache.norm[l].array()).colwise().mean().matrix();
                    MatX<S> dz = (((dzn.rowwise() - mean_dzn).array() -
                                   cache.norm[l].array().rowwise() * mean_dzn_zn.array())
                                      .rowwise() *
                                  cache.inv_sigma[l].array())
                                     .matrix();
                    delta = std::move(dz);
                }
            }
            auto W = weight_map(params, e, out, in);
            if (dparams) {
                grad_weight(*dparams, e, out, in).noalias() += delta * cache.x[l].transpose();
                grad_vec(*dparams, e + 1) += delta.rowwise().sum();
            }
            if (l > 0) {
                delta = (W.transpose() * delta).eval();
            } else {
                return W.transpose() * delta;
            }
        }
        return {};
    }

private:
    static constexpr double kLnEps = 1e-5;

    // hidden layers carry {W, b, ln_gain, ln_bias} when layer_norm is on;
    // the output layer always carries {W, b} and is last, so the offset of
    // layer l only depends on the hidden layers before it
    int entry_index(int layer) const { return layer * (opt_.layer_norm ? 4 : 2); }

    Eigen::Map<const MatX<S>> weight_map(const VecX<S>& p, int entry, int out, int in) const {
        return {p.data() + layout_[entry].offset, out, in};
    }
    Eigen::Map<MatX<S>> grad_weight(VecX<S>& p, int entry, int out, int in) const {
        return {p.data() + layout_[entry].offset, out, in};
    }
    Eigen::Map<const VecX<S>> vec_map(const VecX<S>& p, int entry) const {
        return {p.data() + layout_[entry].offset, layout_[entry].count};
    }
    Eigen::Map<VecX<S>> grad_vec(VecX<S>& p, int entry) const {
        return {p.data() + layout_[entry].offset, layout_[entry].count};
    }

    Options opt_;
    std::vector<LayoutEntry> layout_;
    int param_count_ = 0;
};

}  // namespace ccl::nn
