#include "ccl/cflow/cflow.hpp"

#include "ccl/nn/adam.hpp"
#include "ccl/nn/eval.hpp"
#include "ccl/nn/losses.hpp"
#include "ccl/rng.hpp"

#include <algorithm>
#include <fstream>

namespace ccl::cflow {

namespace {

constexpr int kEncoderHidden = 128;

struct Components {
    backbones::Backbone<Real> bb;
    FlowField<Real> field;
    nn::StatsEncoder<Real> encoder;

    Components(const backbones::BackboneSpec& spec, const CFlowConfig& cfg)
        : bb(spec),
          field(backbones::Backbone<Real>(spec).theta_dim(), cfg.context_dim, cfg.time_freqs,
                cfg.flow_hidden, cfg.flow_layers, Real(cfg.flow_output_gain)),
          encoder(spec.input_shape.dim(), kEncoderHidden, cfg.context_dim) {}
};

void update_running_stats(FlowState& state, const Mat& batch, double momentum) {
    const Eigen::Index d = batch.rows();
    Vec mean = batch.rowwise().mean();
    Vec var = (batch.colwise() - mean).array().square().rowwise().mean().matrix();
    if (state.running_mean.size() == 0) {
        state.running_mean = mean;
        state.running_var = var;
        return;
    }
    const Real m = Real(momentum);
    state.running_mean = m * state.running_mean + (Real(1) - m) * mean;
    state.running_var = m * state.running_var + (Real(1) - m) * var;
    (void)d;
}

// The evaluation context comes from the shared running statistics: it is the
// same vector for every task, which is exactly the collapsed-encoder regime.
Vec encoder_context(const FlowState& state, const nn::StatsEncoder<Real>& encoder) {
    MatX<Real> in(2 * state.encoder_input_dim, 1);
    if (state.running_mean.size() == 0) {
        in.setZero();
    } else {
        in.col(0).head(state.encoder_input_dim) = state.running_mean;
        in.col(0).tail(state.encoder_input_dim) = state.running_var;
    }
    return encoder.net().forward(state.encoder_params, in).col(0);
}

std::pair<Mat, std::vector<int>> draw_batch(const Mat& X, const std::vector<int>& Y, int size,
                                            std::mt19937_64& rng) {
    const int n = static_cast<int>(X.cols());
    const int len = std::min(size, n);
    Mat xb(X.rows(), len);
    std::vector<int> yb(len);
    std::uniform_int_distribution<int> pick(0, n - 1);
    for (int i = 0; i < len; ++i) {
        const int j = pick(rng);
        xb.col(i) = X.col(j);
        yb[i] = Y[j];
    }
    return {std::move(xb), std::move(yb)};
}

}  // namespace

CFlowRunResult meta_train_cflow(const CFlowConfig& config, const data::TaskStream& stream,
                                const backbones::BackboneSpec& backbone_spec) {
    require(config.episodes >= 0, "meta_train_cflow: episodes must be nonnegative");
    require(config.replay_ratio >= 0.0 && config.replay_ratio <= 1.0,
            "meta_train_cflow: replay ratio out of [0,1]");
    const int K = stream.num_tasks();
    SeedContext ctx(config.seed);
    Components comp(backbone_spec, config);

    FlowState state;
    state.theta_dim = comp.bb.theta_dim();
    state.context_dim = config.context_dim;
    state.time_freqs = config.time_freqs;
    state.flow_hidden = config.flow_hidden;
    state.flow_layers = config.flow_layers;
    state.encoder_input_dim = backbone_spec.input_shape.dim();
    state.theta0 = comp.bb.init_params(ctx.derive("theta0_init"));
    {
        auto rng = ctx.rng("flow_init");
        VecX<Real> p;
        comp.field.net().init_params(p, rng);
        state.flow_params = std::move(p);
    }
    {
        auto rng = ctx.rng("encoder_init");
        VecX<Real> p;
        comp.encoder.init_params(p, rng);
        state.encoder_params = std::move(p);
    }

    diag::AccuracyMatrix acc;
    acc.values.setZero(K, K);
    if (config.episodes == 0) {
        return {std::move(state), std::move(acc)};
    }

    // one flat meta-parameter vector: [theta0; flow; encoder]
    const int n_theta = state.theta0.size(), n_flow = state.flow_params.size(),
              n_enc = state.encoder_params.size();
    Vec meta(n_theta + n_flow + n_enc);
    meta << state.theta0, state.flow_params, state.encoder_params;
    nn::Adam<Real> adam(meta.size(), Real(config.meta_lr));
    Vec grad(meta.size());

    // within-episode transitions revisit earlier tasks only through these
    // class-balanced buffers
    std::vector<Mat> buffer_x(K);
    std::vector<std::vector<int>> buffer_y(K);
    for (int k = 0; k < K; ++k) {
        const Mat& X = stream.data[k].train_x;
        const auto& Y = stream.data[k].train_y;
        auto brng = ctx.rng("cflow_buffer", static_cast<std::uint64_t>(k));
        std::vector<int> idx(static_cast<int>(X.cols()));
        std::iota(idx.begin(), idx.end(), 0);
        std::shuffle(idx.begin(), idx.end(), brng);
        const int keep = std::min<int>(config.replay_per_task, static_cast<int>(X.cols()));
        buffer_x[k].resize(X.rows(), keep);
        buffer_y[k].resize(keep);
        for (int i = 0; i < keep; ++i) {
            buffer_x[k].col(i) = X.col(idx[i]);
            buffer_y[k][i] = Y[idx[i]];
        }
    }

    auto rng = ctx.rng("cflow_episode");

    auto train_step = [&](int task, const std::vector<int>& replay_pool) {
        Vec theta0_v = meta.head(n_theta);
        Vec flow_v = meta.segment(n_theta, n_flow);
        Vec enc_v = meta.tail(n_enc);

        grad.setZero();
        Vec g_flow = Vec::Zero(n_flow);
        Vec g_enc = Vec::Zero(n_enc);
        Vec g_theta0 = Vec::Zero(n_theta);

        auto add_term = [&](const Mat& dx, const std::vector<int>& dy, double weight) {
            auto [support_x, support_y] = draw_batch(dx, dy, config.batch_size, rng);
            auto [query_x, query_y] = draw_batch(dx, dy, config.batch_size, rng);
            (void)support_y;

            // running-statistics buffers update outside the gradient path
            update_running_stats(state, support_x, config.ema_momentum);
            MatX<Real> stats_in(2 * state.encoder_input_dim, 1);
            stats_in.col(0).head(state.encoder_input_dim) = state.running_mean;
            stats_in.col(0).tail(state.encoder_input_dim) = state.running_var;
            typename nn::Mlp<Real>::Cache enc_cache;
            Vec c = comp.encoder.net().forward(enc_v, stats_in, &enc_cache).col(0);

            IntegrationCache<FlowField<Real>, Real> icache;
            Vec theta_t = flow_integrate(theta0_v, c, comp.field, flow_v, config.integrator,
                                         config.integration_steps, &icache);

            typename backbones::Backbone<Real>::Cache bcache;
            Mat logits = comp.bb.forward(theta_t, query_x, &bcache);
            Mat dlogits;
            const double loss = nn::softmax_cross_entropy(logits, query_y, &dlogits);
            if (!std::isfinite(loss)) {
                throw TrainingDiverged("cflow: non-finite episode loss");
            }
            dlogits *= Real(weight);

            Vec dtheta_t = Vec::Zero(n_theta);
            comp.bb.backward(theta_t, bcache, dlogits, dtheta_t);
            Vec g_ctx = Vec::Zero(config.context_dim);
            g_theta0 +=
                flow_integrate_backward(comp.field, flow_v, icache, dtheta_t, &g_flow, g_ctx);
            MatX<Real> dy_ctx(config.context_dim, 1);
            dy_ctx.col(0) = g_ctx;
            comp.encoder.net().backward(enc_v, enc_cache, dy_ctx, &g_enc);
        };

        add_term(stream.data[task].train_x, stream.data[task].train_y, 1.0);
        if (!replay_pool.empty()) {
            const int j = replay_pool[std::uniform_int_distribution<std::size_t>(
                0, replay_pool.size() - 1)(rng)];
            add_term(buffer_x[j], buffer_y[j], config.replay_ratio);
        }

        grad.head(n_theta) = g_theta0;
        grad.segment(n_theta, n_flow) = g_flow;
        grad.segment(n_theta + n_flow, n_enc) = g_enc;
        adam.step(meta, grad);
    };

    // meta-training: every episode walks a random permutation of all tasks;
    // tasks earlier in the walk are revisited through the replay term
    const int meta_episodes = std::max(0, config.episodes - 1);
    for (int ep = 0; ep < meta_episodes; ++ep) {
        std::vector<int> order(K);
        std::iota(order.begin(), order.end(), 0);
        std::shuffle(order.begin(), order.end(), rng);
        std::vector<int> seen;
        for (int t : order) {
            for (int s = 0; s < config.steps_per_task; ++s) train_step(t, seen);
            seen.push_back(t);
        }
    }

    // final in-order pass (the last episode): row k is evaluated right after
    // the walk finishes task k, so the matrix reflects the causal protocol
    // applied to the meta-trained state
    std::vector<int> seen;
    for (int t = 0; t < K; ++t) {
        for (int s = 0; s < config.steps_per_task; ++s) train_step(t, seen);
        seen.push_back(t);

        state.theta0 = meta.head(n_theta);
        state.flow_params = meta.segment(n_theta, n_flow);
        state.encoder_params = meta.tail(n_enc);
        auto row = evaluate_cflow(state, config, stream, backbone_spec);
        for (int j = 0; j < K; ++j) acc.values(t, j) = row[j];
    }

    return {std::move(state), std::move(acc)};
}

namespace {

// Shared evaluation: integrate from theta0 under a per-task context and
// score the task's test set.
std::vector<double> eval_with(const FlowState& state, const CFlowConfig& config,
                              const data::TaskStream& stream,
                              const backbones::BackboneSpec& backbone_spec,
                              const std::vector<Vec>& contexts, const Vec& theta0) {
    Components comp(backbone_spec, config);
    std::vector<double> acc(stream.num_tasks());
    for (int j = 0; j < stream.num_tasks(); ++j) {
        Vec theta = flow_integrate(theta0, contexts[j], comp.field, state.flow_params,
                                   config.integrator, config.integration_steps);
        acc[j] = nn::evaluate_accuracy(comp.bb, theta, stream.data[j].test_x,
                                       stream.data[j].test_y);
    }
    return acc;
}

std::vector<Vec> calibration_contexts(const FlowState& state, const CFlowConfig& config,
                                      const data::TaskStream& stream,
                                      const backbones::BackboneSpec& backbone_spec) {
    Components comp(backbone_spec, config);
    return std::vector<Vec>(stream.num_tasks(), encoder_context(state, comp.encoder));
}

class CFlowProbeSubject final : public diag::ProbeSubject {
public:
    CFlowProbeSubject(const FlowState& state, const CFlowConfig& config,
                      const data::TaskStream& stream, const backbones::BackboneSpec& spec)
        : state_(state), config_(config), stream_(stream), spec_(spec) {}

    int num_tasks() const override { return stream_.num_tasks(); }
    bool supports(diag::Probe) const override { return true; }

    std::vector<double> probe_accuracies(diag::Probe p,
                                         const SeedContext& probe_seeds) const override {
        const int K = stream_.num_tasks();
        std::vector<Vec> ctxs = calibration_contexts(state_, config_, stream_, spec_);
        Vec theta0 = state_.theta0;
        switch (p) {
            case diag::Probe::Normal: break;
            case diag::Probe::P5: {
                std::vector<Vec> rotated(K);
                for (int j = 0; j < K; ++j) rotated[j] = ctxs[(j + 1) % K];
                ctxs = std::move(rotated);
                break;
            }
            case diag::Probe::P5b: {
                auto rng = probe_seeds.rng("p5b_context");
                std::normal_distribution<double> g(0.0, 1.0);
                for (auto& c : ctxs)
                    for (Eigen::Index i = 0; i < c.size(); ++i) c[i] = Real(g(rng));
                break;
            }
            case diag::Probe::P6: {
                backbones::Backbone<Real> bb(spec_);
                theta0 = bb.init_params(probe_seeds.derive("p6_theta0"));
                break;
            }
            case diag::Probe::P7:
                for (auto& c : ctxs) c.setZero();
                break;
        }
        return eval_with(state_, config_, stream_, spec_, ctxs, theta0);
    }

private:
    const FlowState& state_;
    CFlowConfig config_;
    const data::TaskStream& stream_;
    backbones::BackboneSpec spec_;
};

}  // namespace

std::vector<double> evaluate_cflow(const FlowState& state, const CFlowConfig& config,
                                   const data::TaskStream& stream,
                                   const backbones::BackboneSpec& backbone_spec) {
    return eval_with(state, config, stream, backbone_spec,
                     calibration_contexts(state, config, stream, backbone_spec), state.theta0);
}

std::unique_ptr<diag::ProbeSubject> make_cflow_probe_subject(
    const FlowState& state, const CFlowConfig& config, const data::TaskStream& stream,
    const backbones::BackboneSpec& backbone_spec) {
    return std::make_unique<CFlowProbeSubject>(state, config, stream, backbone_spec);
}

namespace {
constexpr std::uint32_t kFlowMagic = 0x43464c31;  // "CFL1"

void write_vec(std::ofstream& out, const Vec& v) {
    const std::uint64_t n = v.size();
    out.write(reinterpret_cast<const char*>(&n), sizeof(n));
    out.write(reinterpret_cast<const char*>(v.data()), sizeof(Real) * n);
}

Vec read_vec(std::ifstream& in) {
    std::uint64_t n = 0;
    in.read(reinterpret_cast<char*>(&n), sizeof(n));
    Vec v(n);
    in.read(reinterpret_cast<char*>(v.data()), sizeof(Real) * n);
    return v;
}
}  // namespace

void save_flow_state(const std::string& path, const FlowState& state) {
    std::ofstream out(path, std::ios::binary);
    require(bool(out), "save_flow_state: cannot open " + path);
    out.write(reinterpret_cast<const char*>(&kFlowMagic), sizeof(kFlowMagic));
    const std::int32_t dims[6] = {state.theta_dim,   state.context_dim, state.time_freqs,
                                  state.flow_hidden, state.flow_layers, state.encoder_input_dim};
    out.write(reinterpret_cast<const char*>(dims), sizeof(dims));
    write_vec(out, state.theta0);
    write_vec(out, state.flow_params);
    write_vec(out, state.encoder_params);
    write_vec(out, state.running_mean);
    write_vec(out, state.running_var);
}

FlowState load_flow_state(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    require(bool(in), "load_flow_state: cannot open " + path);
    std::uint32_t magic = 0;
    in.read(reinterpret_cast<char*>(&magic), sizeof(magic));
    require(magic == kFlowMagic, "load_flow_state: bad magic in " + path);
    std::int32_t dims[6];
    in.read(reinterpret_cast<char*>(dims), sizeof(dims));
    FlowState s;
    s.theta_dim = dims[0];
    s.context_dim = dims[1];
    s.time_freqs = dims[2];
    s.flow_hidden = dims[3];
    s.flow_layers = dims[4];
    s.encoder_input_dim = dims[5];
    s.theta0 = read_vec(in);
    s.flow_params = read_vec(in);
    s.encoder_params = read_vec(in);
    s.running_mean = read_vec(in);
    s.running_var = read_vec(in);
    require(bool(in), "load_flow_state: truncated file " + path);
    return s;
}

}  // namespace ccl::cflow
