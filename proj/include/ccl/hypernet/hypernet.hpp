#pragma once

#include "ccl/backbones/backbone.hpp"
#include "ccl/common.hpp"
#include "ccl/data/taskstream.hpp"
#include "ccl/diag/metrics.hpp"
#include "ccl/diag/probes.hpp"
#include "ccl/nn/mlp.hpp"
#include "ccl/nn/stats_encoder.hpp"

#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace ccl::hypernet {

enum class EncoderKind { OracleOnehot, BatchStatsDirect, GradientContext };

EncoderKind encoder_from_string(const std::string& name);
std::string to_string(EncoderKind k);

struct HyperNetConfig {
    int episodes = 200;
    bool cosine_lr_decay = true;  // anneal the step size to zero over the run
    int rank = 64;
    int context_dim = 64;
    double v_init_scale = 0.01;
    double lr = 1e-3;
    double contrastive_weight = 0.1;
    double contrastive_margin = 0.3;
    double base_drop_rate = 0.3;
    bool capsules = false;
    int capsule_count = 8;
    double capsule_tau = 1.0;
    double direction_momentum = 0.9;
    double memory_lr = 0.1;
    int batch_size = 64;
    int context_batch = 64;
    int steps_per_task = 1;  // optimization steps per task within an episode
    int grad_projection_dim = 128;
    EncoderKind encoder = EncoderKind::OracleOnehot;
    std::uint64_t seed = 0;
};

// theta = theta_base + V * rank_vector. Affine in theta_base by construction.
template <typename S>
VecX<S> compose_params(const VecX<S>& theta_base, const MatX<S>& V, const VecX<S>& rank_vec) {
    require(V.rows() == theta_base.size() && V.cols() == rank_vec.size(),
            "compose_params: dimension mismatch");
    return theta_base + V * rank_vec;
}

// Hinge-style separation loss over unordered context pairs:
// weight * sum_{i<j} max(0, cos(c_i, c_j) - margin).
// Gradients accumulate into *dcontexts when non-null.
template <typename S>
double contrastive_context_loss(const std::vector<VecX<S>>& contexts, double weight, double margin,
                                std::vector<VecX<S>>* dcontexts = nullptr) {
    require(contexts.size() >= 2, "contrastive_context_loss: need at least two contexts");
    if (dcontexts) {
        dcontexts->resize(contexts.size());
        for (std::size_t i = 0; i < contexts.size(); ++i) {
            if ((*dcontexts)[i].size() != contexts[i].size()) {
                (*dcontexts)[i] = VecX<S>::Zero(contexts[i].size());
            }
        }
    }
    double loss = 0.0;
    const double eps = 1e-12;
    for (std::size_t i = 0; i < contexts.size(); ++i) {
        for (std::size_t j = i + 1; j < contexts.size(); ++j) {
            const double ni = std::max(double(contexts[i].norm()), eps);
            const double nj = std::max(double(contexts[j].norm()), eps);
            const double cosine = double(contexts[i].dot(contexts[j])) / (ni * nj);
            const double slack = cosine - margin;
            if (slack <= 0.0) continue;
            loss += weight * slack;
            if (dcontexts) {
                VecX<S> ui = contexts[i] / S(ni);
                VecX<S> uj = contexts[j] / S(nj);
                (*dcontexts)[i] += S(weight) * (uj - S(cosine) * ui) / S(ni);
                (*dcontexts)[j] += S(weight) * (ui - S(cosine) * uj) / S(nj);
            }
        }
    }
    return loss;
}

// Routed generator: N capsule MLPs over the context, mixed by a softmax over
// similarity * magnitude * (1 + surprise) / tau. Directions and associative
// memories are running state updated outside the gradient path.
template <typename S>
struct CapsuleBank {
    int count = 8;
    int context_dim = 64;
    int out_per_capsule = 8;
    S tau = S(1);
    S direction_momentum = S(0.9);
    S memory_lr = S(0.1);

    // one shared topology; per-capsule parameters are stacked segments
    std::unique_ptr<nn::Mlp<S>> capsule_net;
    MatX<S> directions;             // context_dim x count, unit columns
    std::vector<MatX<S>> memories;  // count of context_dim x context_dim

    CapsuleBank(int n, int ctx_dim, int out_dim)
        : count(n), context_dim(ctx_dim), out_per_capsule(out_dim) {
        capsule_net = std::make_unique<nn::Mlp<S>>(typename nn::Mlp<S>::Options{
            {ctx_dim, ctx_dim, out_dim}, nn::Act::Silu, false, false});
        directions.setZero(ctx_dim, n);
        memories.assign(n, MatX<S>::Zero(ctx_dim, ctx_dim));
    }

    int rank() const { return count * out_per_capsule; }
    int params_per_capsule() const { return capsule_net->param_count(); }
    int total_capsule_params() const { return count * params_per_capsule(); }

    void init(std::mt19937_64& rng, VecX<S>& caps_params, VecX<S>& log_m) {
        caps_params.resize(total_capsule_params());
        for (int i = 0; i < count; ++i) {
            VecX<S> p;
            capsule_net->init_params(p, rng);
            caps_params.segment(i * params_per_capsule(), params_per_capsule()) = p;
        }
        log_m = VecX<S>::Zero(count);
        std::normal_distribution<double> g(0.0, 1.0);
        for (int i = 0; i < count; ++i) {
            for (int d = 0; d < context_dim; ++d) directions(d, i) = S(g(rng));
            directions.col(i).normalize();
        }
    }
};

template <typename S>
struct RouteCache {
    VecX<S> context;
    VecX<S> similarity;     // s_i = cos(d_i, c)
    VecX<S> surprise;       // sigma_i, detached
    VecX<S> magnitude;      // m_i = exp(log_m_i)
    VecX<S> alpha;          // softmax weights
    MatX<S> capsule_out;    // out_per_capsule x count (pre-weighting)
    std::vector<typename nn::Mlp<S>::Cache> net_caches;
    S context_norm = S(0);
};

template <typename S>
struct RouteResult {
    VecX<S> alpha;
    VecX<S> rank_vec;
};

template <typename S>
RouteResult<S> capsule_route(const CapsuleBank<S>& bank, const VecX<S>& caps_params,
                             const VecX<S>& log_m, const VecX<S>& context,
                             RouteCache<S>* cache = nullptr) {
    require(context.size() == bank.context_dim, "capsule_route: context length mismatch");
    const int N = bank.count;
    const double eps = 1e-12;
    const double cnorm = std::max(double(context.norm()), eps);

    VecX<S> s(N), sigma(N), m(N), scores(N);
    for (int i = 0; i < N; ++i) {
        s[i] = S(double(bank.directions.col(i).dot(context)) / cnorm);
        VecX<S> predicted = bank.memories[i] * bank.directions.col(i);
        const double err = double((context - predicted).squaredNorm());
        sigma[i] = S(err / (cnorm * cnorm + eps));  // normalized squared prediction error
        m[i] = std::exp(log_m[i]);
        scores[i] = s[i] * m[i] * (S(1) + sigma[i]) / bank.tau;
    }
    // stable softmax
    VecX<S> alpha = scores;
    alpha.array() -= alpha.maxCoeff();
    alpha = alpha.array().exp();
    alpha /= alpha.sum();

    MatX<S> caps_out(bank.out_per_capsule, N);
    if (cache) cache->net_caches.assign(N, {});
    for (int i = 0; i < N; ++i) {
        VecX<S> p = caps_params.segment(i * bank.params_per_capsule(), bank.params_per_capsule());
        MatX<S> in(bank.context_dim, 1);
        in.col(0) = context;
        caps_out.col(i) =
            bank.capsule_net->forward(p, in, cache ? &cache->net_caches[i] : nullptr).col(0);
    }

    VecX<S> rank_vec(bank.rank());
    for (int i = 0; i < N; ++i) {
        rank_vec.segment(i * bank.out_per_capsule, bank.out_per_capsule) = alpha[i] * caps_out.col(i);
    }
    if (cache) {
        cache->context = context;
        cache->similarity = s;
        cache->surprise = sigma;
        cache->magnitude = m;
        cache->alpha = alpha;
        cache->capsule_out = caps_out;
        cache->context_norm = S(cnorm);
    }
    return {std::move(alpha), std::move(rank_vec)};
}

// VJP of capsule_route: accumulates capsule-parameter and log-magnitude
// gradients, returns the context gradient. Directions, memories and the
// surprise signal stay out of the gradient path.
template <typename S>
VecX<S> capsule_route_backward(const CapsuleBank<S>& bank, const VecX<S>& caps_params,
                               const RouteCache<S>& cache, const VecX<S>& d_rank,
                               VecX<S>* dcaps_params, VecX<S>* dlog_m) {
    const int N = bank.count;
    VecX<S> dcontext = VecX<S>::Zero(bank.context_dim);
    VecX<S> dalpha(N);
    for (int i = 0; i < N; ++i) {
        const auto dr = d_rank.segment(i * bank.out_per_capsule, bank.out_per_capsule);
        dalpha[i] = dr.dot(cache.capsule_out.col(i));
        // through the capsule network
        MatX<S> dy(bank.out_per_capsule, 1);
        dy.col(0) = cache.alpha[i] * dr;
        VecX<S> p = caps_params.segment(i * bank.params_per_capsule(), bank.params_per_capsule());
        VecX<S> dp = VecX<S>::Zero(bank.params_per_capsule());
        MatX<S> din = bank.capsule_net->backward(p, cache.net_caches[i], dy,
                                                 dcaps_params ? &dp : nullptr);
        if (dcaps_params) {
            dcaps_params->segment(i * bank.params_per_capsule(), bank.params_per_capsule()) += dp;
        }
        dcontext += din.col(0);
    }
    // softmax backward
    const S inner = cache.alpha.dot(dalpha);
    VecX<S> dscores = (cache.alpha.array() * (dalpha.array() - inner)).matrix();
    for (int i = 0; i < N; ++i) {
        const S factor = cache.magnitude[i] * (S(1) + cache.surprise[i]) / bank.tau;
        if (dlog_m) {
            (*dlog_m)[i] += dscores[i] * cache.similarity[i] * factor;  // d m/d log_m = m
        }
        // d s_i / d c = (d_i - s_i * c_hat) / |c|
        VecX<S> chat = cache.context / cache.context_norm;
        dcontext += dscores[i] * factor *
                    (bank.directions.col(i) - cache.similarity[i] * chat) / cache.context_norm;
    }
    return dcontext;
}

// Training-time state update: EMA of routing-weighted directions (kept unit
// norm) and a delta-rule associative memory per capsule.
template <typename S>
void capsule_state_update(CapsuleBank<S>& bank, const RouteCache<S>& cache) {
    for (int i = 0; i < bank.count; ++i) {
        const S a = cache.alpha[i];
        const S mix = (S(1) - bank.direction_momentum) * a;
        VecX<S> d = (S(1) - mix) * bank.directions.col(i) + mix * cache.context;
        const S n = d.norm();
        if (n > S(1e-12)) bank.directions.col(i) = d / n;
        VecX<S> predicted = bank.memories[i] * bank.directions.col(i);
        bank.memories[i] += bank.memory_lr * a * (cache.context - predicted) *
                            bank.directions.col(i).transpose();
    }
}

// Meta-learned conditional-regeneration state. Trainable pieces are flat
// vectors; frozen and running state live alongside.
struct HyperNetState {
    HyperNetConfig config;
    backbones::BackboneSpec backbone_spec;
    int theta_dim = 0;

    Vec theta_base;
    Mat V;           // theta_dim x rank
    Vec gen_params;  // plain generator MLP  (unused in capsule mode)
    Vec caps_params;
    Vec log_m;
    Vec enc_params;

    Mat grad_projection;  // frozen random projection (gradient encoder only)
    std::optional<CapsuleBank<Real>> capsules;
};

// One-hot before projection (exposed for tests and the oracle encoder).
Vec oracle_onehot(int task_index, int num_tasks);

// Learned linear projection of the one-hot task identity.
Vec oracle_context(const HyperNetState& state, int task_index, int num_tasks);

// Current-batch statistics through the encoder MLP.
Vec batch_stats_context(const HyperNetState& state, const Mat& batch);

// Projected loss gradient (real labels) through the encoder MLP. The gradient
// signal is treated as an input: no second-order terms flow back through it.
Vec gradient_context(const HyperNetState& state, const backbones::Backbone<Real>& bb,
                     const Mat& batch, const std::vector<int>& labels);

// Rank vector for a context under the configured generator.
Vec generator_rank_vec(const HyperNetState& state, const Vec& context);

// theta_base + V * g(context); deterministic, no dropout.
Vec generate_params(const HyperNetState& state, const Vec& context);

// Base-dropout generation: when dropped, the context branch is rescaled to
// the base norm: V g(c) * |theta_base| / (|V g(c)| + eps).
Vec apply_base_dropout(const HyperNetState& state, const Vec& context, bool drop_flag);

struct HyperNetRunResult {
    HyperNetState state;
    diag::AccuracyMatrix acc_matrix;  // identical rows by construction
};

HyperNetRunResult joint_train_hypernet(const HyperNetConfig& config,
                                       const data::TaskStream& stream,
                                       const backbones::BackboneSpec& backbone_spec);

// Per-task contexts from the cached calibration batches (or the projection
// for the oracle encoder).
std::vector<Vec> evaluation_contexts(const HyperNetState& state, const data::TaskStream& stream);

std::vector<double> evaluate_hypernet(const HyperNetState& state, const data::TaskStream& stream,
                                      const backbones::BackboneSpec& backbone_spec);

std::unique_ptr<diag::ProbeSubject> make_hypernet_probe_subject(
    const HyperNetState& state, const data::TaskStream& stream,
    const backbones::BackboneSpec& backbone_spec);

void save_hypernet_state(const std::string& path, const HyperNetState& state);
HyperNetState load_hypernet_state(const std::string& path);

}  // namespace ccl::hypernet
