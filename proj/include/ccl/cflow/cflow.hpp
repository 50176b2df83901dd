#pragma once

#include "ccl/backbones/backbone.hpp"
#include "ccl/common.hpp"
#include "ccl/data/taskstream.hpp"
#include "ccl/diag/metrics.hpp"
#include "ccl/diag/probes.hpp"
#include "ccl/nn/mlp.hpp"
#include "ccl/nn/stats_encoder.hpp"

#include <cmath>
#include <memory>
#include <string>
#include <vector>

namespace ccl::cflow {

enum class Integrator { Euler, Rk4 };

struct CFlowConfig {
    int episodes = 80;
    int flow_layers = 3;
    int flow_hidden = 256;
    double replay_ratio = 0.3;
    int replay_per_task = 100;
    double meta_lr = 1e-3;
    Integrator integrator = Integrator::Rk4;
    int integration_steps = 10;
    int context_dim = 32;
    int time_freqs = 16;
    int batch_size = 128;
    int calibration_batch = 64;
    int steps_per_task = 4;        // optimization steps per task within an episode walk
    double ema_momentum = 0.99;    // running-statistics momentum of the context encoder
    double flow_output_gain = 0.1; // scales the flow-net output; keeps the field gentle
    std::uint64_t seed = 0;
};

// [sin(2*pi*m*t), cos(2*pi*m*t)] for m = 1..num_freqs.
template <typename S>
VecX<S> time_embedding(S t, int num_freqs) {
    VecX<S> e(2 * num_freqs);
    for (int m = 1; m <= num_freqs; ++m) {
        const S phase = S(2.0 * M_PI) * S(m) * t;
        e[m - 1] = std::sin(phase);
        e[num_freqs + m - 1] = std::cos(phase);
    }
    return e;
}

// dtheta/dt = f(theta, c, t): an MLP over the concatenation
// [theta; c; time_embedding(t)]. The output layer starts at zero so the
// initial flow is the identity map on theta0.
template <typename S>
class FlowField {
public:
    using Cache = typename nn::Mlp<S>::Cache;

    FlowField(int theta_dim, int context_dim, int time_freqs, int hidden, int layers,
              S output_gain = S(1))
        : theta_dim_(theta_dim),
          context_dim_(context_dim),
          time_freqs_(time_freqs),
          gain_(output_gain) {
        require(layers >= 2, "FlowField: need at least two linear layers");
        std::vector<int> dims;
        dims.push_back(theta_dim + context_dim + 2 * time_freqs);
        for (int l = 0; l < layers - 1; ++l) dims.push_back(hidden);
        dims.push_back(theta_dim);
        net_ = std::make_unique<nn::Mlp<S>>(
            typename nn::Mlp<S>::Options{dims, nn::Act::Tanh, false, /*zero_init_output=*/true});
    }

    const nn::Mlp<S>& net() const { return *net_; }
    int param_count() const { return net_->param_count(); }
    int theta_dim() const { return theta_dim_; }
    int context_dim() const { return context_dim_; }

    VecX<S> eval(const VecX<S>& params, const VecX<S>& theta, const VecX<S>& ctx, S t,
                 typename nn::Mlp<S>::Cache* cache = nullptr) const {
        require(theta.size() == theta_dim_, "FlowField: theta size mismatch");
        require(ctx.size() == context_dim_, "FlowField: context size mismatch");
        MatX<S> in(theta_dim_ + context_dim_ + 2 * time_freqs_, 1);
        in.col(0).head(theta_dim_) = theta;
        in.col(0).segment(theta_dim_, context_dim_) = ctx;
        in.col(0).tail(2 * time_freqs_) = time_embedding<S>(t, time_freqs_);
        return gain_ * net_->forward(params, in, cache).col(0);
    }

    // VJP of one evaluation: adds parameter gradients into *dparams and the
    // context gradient into dctx; returns the gradient w.r.t. theta.
    VecX<S> backward(const VecX<S>& params, const typename nn::Mlp<S>::Cache& cache,
                     const VecX<S>& dout, VecX<S>* dparams, VecX<S>& dctx) const {
        MatX<S> dy(theta_dim_, 1);
        dy.col(0) = gain_ * dout;
        MatX<S> din = net_->backward(params, cache, dy, dparams);
        dctx += din.col(0).segment(theta_dim_, context_dim_);
        return din.col(0).head(theta_dim_);
    }

private:
    int theta_dim_, context_dim_, time_freqs_;
    S gain_ = S(1);
    std::unique_ptr<nn::Mlp<S>> net_;
};

template <typename Field, typename S>
struct IntegrationCache {
    // one field cache per evaluation, in forward order
    std::vector<typename Field::Cache> stages;
    std::vector<S> stage_t;
    Integrator integrator = Integrator::Rk4;
    int steps = 0;
};

// Integrates dtheta/dt = f(theta, c, t) over t in [0,1] from theta0 with a
// fixed step count. Deterministic; throws on non-finite state. Field must
// provide eval(params, theta, ctx, t, Cache*) and
// backward(params, cache, dout, dparams*, dctx&).
template <typename S, typename Field>
VecX<S> flow_integrate(const VecX<S>& theta0, const VecX<S>& ctx, const Field& field,
                       const VecX<S>& flow_params, Integrator integrator, int steps,
                       IntegrationCache<Field, S>* cache = nullptr) {
    require(steps >= 1, "flow_integrate: need at least one step");
    const S h = S(1) / S(steps);
    VecX<S> theta = theta0;
    if (cache) {
        cache->stages.clear();
        cache->stage_t.clear();
        cache->integrator = integrator;
        cache->steps = steps;
    }
    auto f = [&](const VecX<S>& th, S t) {
        if (!cache) return field.eval(flow_params, th, ctx, t, nullptr);
        cache->stages.emplace_back();
        cache->stage_t.push_back(t);
        return field.eval(flow_params, th, ctx, t, &cache->stages.back());
    };
    for (int n = 0; n < steps; ++n) {
        const S t = S(n) * h;
        if (integrator == Integrator::Euler) {
            theta += h * f(theta, t);
        } else {
            VecX<S> k1 = f(theta, t);
            VecX<S> k2 = f(theta + (h / S(2)) * k1, t + h / S(2));
            VecX<S> k3 = f(theta + (h / S(2)) * k2, t + h / S(2));
            VecX<S> k4 = f(theta + h * k3, t + h);
            theta += (h / S(6)) * (k1 + S(2) * k2 + S(2) * k3 + k4);
        }
        if (!theta.allFinite()) {
            throw TrainingDiverged("flow_integrate: non-finite state at step " + std::to_string(n));
        }
    }
    return theta;
}

// Reverse pass through the unrolled integration. dtheta1 is the loss gradient
// at the final state; outputs are the gradients w.r.t. theta0, the field
// parameters (accumulated) and the context (accumulated).
template <typename S, typename Field>
VecX<S> flow_integrate_backward(const Field& field, const VecX<S>& flow_params,
                                const IntegrationCache<Field, S>& cache, const VecX<S>& dtheta1,
                                VecX<S>* dflow_params, VecX<S>& dctx) {
    const int steps = cache.steps;
    const S h = S(1) / S(steps);
    VecX<S> lambda = dtheta1;
    const int per_step = cache.integrator == Integrator::Euler ? 1 : 4;
    for (int n = steps - 1; n >= 0; --n) {
        const int base = n * per_step;
        if (cache.integrator == Integrator::Euler) {
            VecX<S> g =
                field.backward(flow_params, cache.stages[base], h * lambda, dflow_params, dctx);
            lambda += g;
        } else {
            // forward: k1..k4 at stages base..base+3
            VecX<S> dk1 = (h / S(6)) * lambda;
            VecX<S> dk2 = (h / S(3)) * lambda;
            VecX<S> dk3 = (h / S(3)) * lambda;
            VecX<S> dk4 = (h / S(6)) * lambda;
            VecX<S> g4 =
                field.backward(flow_params, cache.stages[base + 3], dk4, dflow_params, dctx);
            dk3 += h * g4;
            VecX<S> g3 =
                field.backward(flow_params, cache.stages[base + 2], dk3, dflow_params, dctx);
            dk2 += (h / S(2)) * g3;
            VecX<S> g2 =
                field.backward(flow_params, cache.stages[base + 1], dk2, dflow_params, dctx);
            dk1 += (h / S(2)) * g2;
            VecX<S> g1 = field.backward(flow_params, cache.stages[base], dk1, dflow_params, dctx);
            lambda += g1 + g2 + g3 + g4;
        }
    }
    return lambda;
}

// Meta-learned state: shared initialization, flow network and context
// encoder. The encoder consumes EMA running input statistics; the running
// buffers update outside the gradient path, so they drift toward global
// dataset statistics and the resulting context carries no task identity.
struct FlowState {
    Vec theta0;
    Vec flow_params;
    Vec encoder_params;
    Vec running_mean;  // EMA over training batches, gradient-free
    Vec running_var;
    int theta_dim = 0;
    int context_dim = 32;
    int time_freqs = 16;
    int flow_hidden = 256;
    int flow_layers = 3;
    int encoder_input_dim = 0;
};

struct CFlowRunResult {
    FlowState state;
    diag::AccuracyMatrix acc_matrix;
};

// Meta-trains over `episodes`, each walking a random permutation of all
// tasks (sequential task transitions; tasks already seen in the walk are
// revisited through small replay buffers). Episodes are grouped into K
// blocks whose walks end at task k; row k of the matrix is the evaluation at
// block k's end, so it reflects a state most recently exposed to task k.
CFlowRunResult meta_train_cflow(const CFlowConfig& config, const data::TaskStream& stream,
                                const backbones::BackboneSpec& backbone_spec);

// Evaluates per-task test accuracy, regenerating parameters from each task's
// calibration context.
std::vector<double> evaluate_cflow(const FlowState& state, const CFlowConfig& config,
                                   const data::TaskStream& stream,
                                   const backbones::BackboneSpec& backbone_spec);

std::unique_ptr<diag::ProbeSubject> make_cflow_probe_subject(
    const FlowState& state, const CFlowConfig& config, const data::TaskStream& stream,
    const backbones::BackboneSpec& backbone_spec);

void save_flow_state(const std::string& path, const FlowState& state);
FlowState load_flow_state(const std::string& path);

}  // namespace ccl::cflow
