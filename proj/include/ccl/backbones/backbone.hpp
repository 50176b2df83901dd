#pragma once

#include "ccl/common.hpp"
#include "ccl/nn/losses.hpp"
#include "ccl/nn/mlp.hpp"

#include <memory>
#include <random>
#include <string>
#include <vector>

namespace ccl::backbones {

enum class BackboneKind { MlpBaseline, ConvTaskNet };

struct InputShape {
    int channels = 1;
    int height = 28;
    int width = 28;
    int dim() const { return channels * height * width; }
    bool operator==(const InputShape&) const = default;
};

struct BackboneSpec {
    BackboneKind kind = BackboneKind::MlpBaseline;
    InputShape input_shape{1, 28, 28};
    int num_classes = 10;

    static BackboneSpec mlp_baseline() { return {BackboneKind::MlpBaseline, {1, 28, 28}, 10}; }
    static BackboneSpec conv_tasknet(InputShape in = {1, 28, 28}) {
        return {BackboneKind::ConvTaskNet, in, 10};
    }
};

// Small CNN: 3x3 valid conv to `kFilters` maps, ReLU, average pooling, then a
// two-layer dense head. Input columns are channel-major flattened images
// (index = c*H*W + y*W + x). The dense head width is picked per input shape
// to land the total parameter count near the 4.8K budget; the layout manifest
// records the actual count.
template <typename S>
class ConvTaskNet {
public:
    static constexpr int kFilters = 4;

    ConvTaskNet(InputShape in, int num_classes) : in_(in), classes_(num_classes) {
        if (in.height == 28 && in.width == 28 && in.channels == 1) {
            pool_ = 2;
            hidden_ = 7;  // theta_dim = 4859
        } else if (in.height == 32 && in.width == 32 && in.channels == 3) {
            pool_ = 3;
            hidden_ = 11;  // theta_dim = 4643
        } else {
            throw std::invalid_argument("ConvTaskNet: unsupported input shape");
        }
        conv_h_ = in.height - 2;
        conv_w_ = in.width - 2;
        require(conv_h_ % pool_ == 0 && conv_w_ % pool_ == 0, "ConvTaskNet: pool mismatch");
        pooled_h_ = conv_h_ / pool_;
        pooled_w_ = conv_w_ / pool_;
        const int pooled_dim = kFilters * pooled_h_ * pooled_w_;

        const int conv_w_count = kFilters * in.channels * 9;
        layout_.push_back({"conv.weight", {kFilters, in.channels, 3, 3}, 0, conv_w_count});
        layout_.push_back({"conv.bias", {kFilters}, conv_w_count, kFilters});
        fc_offset_ = conv_w_count + kFilters;

        fc_ = std::make_unique<nn::Mlp<S>>(typename nn::Mlp<S>::Options{
            {pooled_dim, hidden_, classes_}, nn::Act::Relu, false, false});
        for (const auto& e : fc_->layout()) {
            layout_.push_back({e.name, e.shape, e.offset + fc_offset_, e.count});
        }
        theta_dim_ = fc_offset_ + fc_->param_count();
    }

    int theta_dim() const { return theta_dim_; }
    const std::vector<nn::LayoutEntry>& layout() const { return layout_; }

    struct Cache {
        MatX<S> X;
        MatX<S> conv_pre;  // (filters*conv_h*conv_w) x B, pre-ReLU
        MatX<S> pooled;    // pooled_dim x B
        typename nn::Mlp<S>::Cache fc;
    };

    void init_params(VecX<S>& theta, std::mt19937_64& rng) const {
        theta.setZero(theta_dim_);
        std::normal_distribution<double> unit(0.0, 1.0);
        const double conv_std = std::sqrt(2.0 / (in_.channels * 9.0));
        for (int i = 0; i < layout_[0].count; ++i)
            theta[i] = static_cast<S>(unit(rng) * conv_std);
        VecX<S> fc_params;
        fc_->init_params(fc_params, rng);
        theta.segment(fc_offset_, fc_params.size()) = fc_params;
    }

    MatX<S> forward(const VecX<S>& theta, const MatX<S>& X, Cache* cache = nullptr) const {
        const Eigen::Index B = X.cols();
        const int C = in_.channels, H = in_.height, W = in_.width;
        MatX<S> conv_pre(kFilters * conv_h_ * conv_w_, B);
        const S* wp = theta.data();
        const S* bp = theta.data() + layout_[1].offset;
        for (Eigen::Index n = 0; n < B; ++n) {
            const S* img = X.col(n).data();
            S* out = conv_pre.col(n).data();
            for (int f = 0; f < kFilters; ++f) {
                const S* wf = wp + f * C * 9;
                for (int i = 0; i < conv_h_; ++i) {
                    for (int j = 0; j < conv_w_; ++j) {
                        S acc = bp[f];
                        for (int c = 0; c < C; ++c) {
                            const S* plane = img + c * H * W;
                            const S* wfc = wf + c * 9;
                            for (int di = 0; di < 3; ++di) {
                                const S* row = plane + (i + di) * W + j;
                                acc += wfc[di * 3 + 0] * row[0] + wfc[di * 3 + 1] * row[1] +
                                       wfc[di * 3 + 2] * row[2];
                            }
                        }
                        out[f * conv_h_ * conv_w_ + i * conv_w_ + j] = acc;
                    }
                }
            }
        }

        MatX<S> pooled(kFilters * pooled_h_ * pooled_w_, B);
        const S inv_area = S(1) / S(pool_ * pool_);
        for (Eigen::Index n = 0; n < B; ++n) {
            const S* cp = conv_pre.col(n).data();
            S* pp = pooled.col(n).data();
            for (int f = 0; f < kFilters; ++f) {
                for (int pi = 0; pi < pooled_h_; ++pi) {
                    for (int pj = 0; pj < pooled_w_; ++pj) {
                        S acc = S(0);
                        for (int di = 0; di < pool_; ++di) {
                            for (int dj = 0; dj < pool_; ++dj) {
                                const S v = cp[f * conv_h_ * conv_w_ + (pi * pool_ + di) * conv_w_ +
                                               (pj * pool_ + dj)];
                                acc += v > S(0) ? v : S(0);
                            }
                        }
                        pp[f * pooled_h_ * pooled_w_ + pi * pooled_w_ + pj] = acc * inv_area;
                    }
                }
            }
        }

        VecX<S> fc_params = theta.segment(fc_offset_, fc_->param_count());
        MatX<S> logits = fc_->forward(fc_params, pooled, cache ? &cache->fc : nullptr);
        if (cache) {
            cache->X = X;
            cache->conv_pre = std::move(conv_pre);
            cache->pooled = std::move(pooled);
        }
        return logits;
    }

    void backward(const VecX<S>& theta, const Cache& cache, const MatX<S>& dlogits,
                  VecX<S>& dtheta) const {
        require(dtheta.size() == theta_dim_, "ConvTaskNet::backward: grad size mismatch");
        VecX<S> fc_params = theta.segment(fc_offset_, fc_->param_count());
        VecX<S> dfc = VecX<S>::Zero(fc_->param_count());
        MatX<S> dpooled = fc_->backward(fc_params, cache.fc, dlogits, &dfc);
        dtheta.segment(fc_offset_, dfc.size()) += dfc;

        const Eigen::Index B = cache.X.cols();
        const int C = in_.channels, H = in_.height, W = in_.width;
        const S inv_area = S(1) / S(pool_ * pool_);
        S* dwp = dtheta.data();
        S* dbp = dtheta.data() + layout_[1].offset;
        for (Eigen::Index n = 0; n < B; ++n) {
            const S* img = cache.X.col(n).data();
            const S* cp = cache.conv_pre.col(n).data();
            const S* dp = dpooled.col(n).data();
            for (int f = 0; f < kFilters; ++f) {
                S* dwf = dwp + f * C * 9;
                for (int pi = 0; pi < pooled_h_; ++pi) {
                    for (int pj = 0; pj < pooled_w_; ++pj) {
                        const S g = dp[f * pooled_h_ * pooled_w_ + pi * pooled_w_ + pj] * inv_area;
                        for (int di = 0; di < pool_; ++di) {
                            for (int dj = 0; dj < pool_; ++dj) {
                                const int i = pi * pool_ + di, j = pj * pool_ + dj;
                                const S pre = cp[f * conv_h_ * conv_w_ + i * conv_w_ + j];
                                if (pre <= S(0)) continue;
                                dbp[f] += g;
                                for (int c = 0; c < C; ++c) {
                                    const S* plane = img + c * H * W;
                                    S* dwfc = dwf + c * 9;
                                    for (int ki = 0; ki < 3; ++ki) {
                                        const S* row = plane + (i + ki) * W + j;
                                        dwfc[ki * 3 + 0] += g * row[0];
                                        dwfc[ki * 3 + 1] += g * row[1];
                                        dwfc[ki * 3 + 2] += g * row[2];
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }

private:
    InputShape in_;
    int classes_;
    int pool_ = 2, hidden_ = 7;
    int conv_h_ = 0, conv_w_ = 0, pooled_h_ = 0, pooled_w_ = 0;
    int fc_offset_ = 0;
    int theta_dim_ = 0;
    std::vector<nn::LayoutEntry> layout_;
    std::unique_ptr<nn::Mlp<S>> fc_;
};

// Unified prediction network over flat parameter vectors. Pure: forward has
// no internal state and is deterministic given (theta, batch).
template <typename S>
class Backbone {
public:
    struct Cache {
        typename nn::Mlp<S>::Cache mlp;
        typename ConvTaskNet<S>::Cache conv;
    };

    explicit Backbone(const BackboneSpec& spec) : spec_(spec) {
        if (spec.kind == BackboneKind::MlpBaseline) {
            mlp_ = std::make_unique<nn::Mlp<S>>(typename nn::Mlp<S>::Options{
                {spec.input_shape.dim(), 256, 128, spec.num_classes}, nn::Act::Relu, false, false});
        } else {
            conv_ = std::make_unique<ConvTaskNet<S>>(spec.input_shape, spec.num_classes);
        }
    }

    // Toy factory for tests and gradient oracles: a bare MLP with custom dims.
    static Backbone custom_mlp(std::vector<int> dims) {
        Backbone b;
        b.spec_.kind = BackboneKind::MlpBaseline;
        b.spec_.input_shape = {1, 1, dims.front()};
        b.spec_.num_classes = dims.back();
        b.mlp_ = std::make_unique<nn::Mlp<S>>(
            typename nn::Mlp<S>::Options{std::move(dims), nn::Act::Relu, false, false});
        return b;
    }

    const BackboneSpec& spec() const { return spec_; }
    int theta_dim() const { return mlp_ ? mlp_->param_count() : conv_->theta_dim(); }
    const std::vector<nn::LayoutEntry>& layout() const {
        return mlp_ ? mlp_->layout() : conv_->layout();
    }
    int num_classes() const { return spec_.num_classes; }

    VecX<S> init_params(std::uint64_t seed) const {
        std::mt19937_64 rng(seed);
        VecX<S> theta;
        if (mlp_) {
            mlp_->init_params(theta, rng);
        } else {
            conv_->init_params(theta, rng);
        }
        return theta;
    }

    MatX<S> forward(const VecX<S>& theta, const MatX<S>& X, Cache* cache = nullptr) const {
        require(theta.size() == theta_dim(), "Backbone::forward: parameter length mismatch");
        require(X.rows() == spec_.input_shape.dim(), "Backbone::forward: batch shape mismatch");
        require(theta.allFinite(), "Backbone::forward: non-finite parameter values");
        if (mlp_) return mlp_->forward(theta, X, cache ? &cache->mlp : nullptr);
        return conv_->forward(theta, X, cache ? &cache->conv : nullptr);
    }

    void backward(const VecX<S>& theta, const Cache& cache, const MatX<S>& dlogits,
                  VecX<S>& dtheta) const {
        if (mlp_) {
            mlp_->backward(theta, cache.mlp, dlogits, &dtheta);
        } else {
            conv_->backward(theta, cache.conv, dlogits, dtheta);
        }
    }

    // Mean cross-entropy and its gradient w.r.t. theta (accumulated).
    S loss_and_grad(const VecX<S>& theta, const MatX<S>& X, const std::vector<int>& y,
                    VecX<S>* dtheta) const {
        Cache cache;
        MatX<S> logits = forward(theta, X, dtheta ? &cache : nullptr);
        MatX<S> dlogits;
        const S loss = nn::softmax_cross_entropy(logits, y, dtheta ? &dlogits : nullptr);
        if (dtheta) backward(theta, cache, dlogits, *dtheta);
        return loss;
    }

private:
    Backbone() = default;
    BackboneSpec spec_;
    std::unique_ptr<nn::Mlp<S>> mlp_;
    std::unique_ptr<ConvTaskNet<S>> conv_;
};

}  // namespace ccl::backbones
