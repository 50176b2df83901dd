#pragma once

#include "ccl/common.hpp"
#include "ccl/nn/mlp.hpp"

#include <random>

namespace ccl::nn {

// Context encoder over current-batch statistics: per-pixel mean and biased
// variance feed a small MLP. Statistics come from the batch directly (no
// running averages), so the whole mapping is differentiable end to end.
template <typename S>
class StatsEncoder {
public:
    StatsEncoder(int input_dim, int hidden, int out_dim)
        : input_dim_(input_dim),
          net_(typename Mlp<S>::Options{{2 * input_dim, hidden, out_dim}, Act::Relu, false, false}) {}

    int param_count() const { return net_.param_count(); }
    int output_dim() const { return net_.output_dim(); }
    int input_dim() const { return input_dim_; }
    const Mlp<S>& net() const { return net_; }

    void init_params(VecX<S>& params, std::mt19937_64& rng) const { net_.init_params(params, rng); }

    static VecX<S> stats_of(const MatX<S>& batch) {
        require(batch.cols() > 0, "StatsEncoder: empty batch");
        const Eigen::Index d = batch.rows();
        VecX<S> s(2 * d);
        VecX<S> mean = batch.rowwise().mean();
        s.head(d) = mean;
        s.tail(d) = (batch.colwise() - mean).array().square().rowwise().mean().matrix();
        return s;
    }

    struct Cache {
        MatX<S> batch;
        VecX<S> mean;
        typename Mlp<S>::Cache mlp;
    };

    VecX<S> encode(const VecX<S>& params, const MatX<S>& batch, Cache* cache = nullptr) const {
        require(batch.rows() == input_dim_, "StatsEncoder: input dim mismatch");
        VecX<S> s = stats_of(batch);
        MatX<S> in(s.size(), 1);
        in.col(0) = s;
        MatX<S> out = net_.forward(params, in, cache ? &cache->mlp : nullptr);
        if (cache) {
            cache->batch = batch;
            cache->mean = s.head(input_dim_);
        }
        return out.col(0);
    }

    // Accumulates encoder parameter gradients; optionally also produces the
    // gradient w.r.t. the batch pixels (through mean and variance).
    void backward(const VecX<S>& params, const Cache& cache, const VecX<S>& dctx,
                  VecX<S>* dparams, MatX<S>* dbatch = nullptr) const {
        MatX<S> dy(dctx.size(), 1);
        dy.col(0) = dctx;
        MatX<S> dstats = net_.backward(params, cache.mlp, dy, dparams);
        if (dbatch) {
            const Eigen::Index d = input_dim_;
            const Eigen::Index B = cache.batch.cols();
            const S invB = S(1) / S(B);
            dbatch->resize(d, B);
            // d mean_p / d x_pb = 1/B ; d var_p / d x_pb = 2 (x_pb - mean_p)/B
            for (Eigen::Index b = 0; b < B; ++b) {
                dbatch->col(b) =
                    dstats.col(0).head(d) * invB +
                    (dstats.col(0).tail(d).array() * S(2) * invB *
                     (cache.batch.col(b) - cache.mean).array())
                        .matrix();
            }
        }
    }

private:
    int input_dim_;
    Mlp<S> net_;
};

}  // namespace ccl::nn
