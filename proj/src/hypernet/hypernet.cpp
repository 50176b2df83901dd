#include "ccl/hypernet/hypernet.hpp"

#include "ccl/nn/adam.hpp"
#include "ccl/nn/eval.hpp"
#include "ccl/nn/losses.hpp"
#include "ccl/rng.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>

namespace ccl::hypernet {

EncoderKind encoder_from_string(const std::string& name) {
    if (name == "oracle_onehot") return EncoderKind::OracleOnehot;
    if (name == "batch_stats_direct") return EncoderKind::BatchStatsDirect;
    if (name == "gradient_context") return EncoderKind::GradientContext;
    throw std::invalid_argument("unknown encoder kind: " + name);
}

std::string to_string(EncoderKind k) {
    switch (k) {
        case EncoderKind::OracleOnehot: return "oracle_onehot";
        case EncoderKind::BatchStatsDirect: return "batch_stats_direct";
        case EncoderKind::GradientContext: return "gradient_context";
    }
    return "oracle_onehot";
}

namespace {

constexpr int kStatsHidden = 128;
constexpr int kGenHidden = 256;
constexpr double kDropEps = 1e-8;

nn::Mlp<Real> make_generator(const HyperNetConfig& cfg) {
    return nn::Mlp<Real>(typename nn::Mlp<Real>::Options{
        {cfg.context_dim, kGenHidden, kGenHidden, cfg.rank}, nn::Act::Silu, true, false});
}

nn::StatsEncoder<Real> make_stats_encoder(const HyperNetConfig& cfg, int input_dim) {
    return nn::StatsEncoder<Real>(input_dim, kStatsHidden, cfg.context_dim);
}

nn::Mlp<Real> make_grad_encoder(const HyperNetConfig& cfg) {
    return nn::Mlp<Real>(typename nn::Mlp<Real>::Options{
        {cfg.grad_projection_dim, cfg.grad_projection_dim, cfg.context_dim}, nn::Act::Relu, false,
        false});
}

Mat calibration_batch(const data::TaskStream& stream, int task, int size) {
    const Mat& X = stream.data[task].train_x;
    const int n = std::min<int>(size, static_cast<int>(X.cols()));
    return X.leftCols(n);
}

std::vector<int> calibration_labels(const data::TaskStream& stream, int task, int size) {
    const auto& Y = stream.data[task].train_y;
    const int n = std::min<int>(size, static_cast<int>(Y.size()));
    return std::vector<int>(Y.begin(), Y.begin() + n);
}

}  // namespace

Vec oracle_onehot(int task_index, int num_tasks) {
    require(task_index >= 0 && task_index < num_tasks, "oracle_onehot: task index out of range");
    Vec e = Vec::Zero(num_tasks);
    e[task_index] = Real(1);
    return e;
}

Vec oracle_context(const HyperNetState& state, int task_index, int num_tasks) {
    require(state.config.encoder == EncoderKind::OracleOnehot,
            "oracle_context: state uses a different encoder");
    // enc_params is the flattened projection, context_dim x K
    Eigen::Map<const Mat> W(state.enc_params.data(), state.config.context_dim, num_tasks);
    Vec onehot = oracle_onehot(task_index, num_tasks);
    return W * onehot;
}

Vec batch_stats_context(const HyperNetState& state, const Mat& batch) {
    require(state.config.encoder == EncoderKind::BatchStatsDirect,
            "batch_stats_context: state uses a different encoder");
    nn::StatsEncoder<Real> enc(static_cast<int>(batch.rows()), kStatsHidden,
                               state.config.context_dim);
    return enc.encode(state.enc_params, batch);
}

Vec gradient_context(const HyperNetState& state, const backbones::Backbone<Real>& bb,
                     const Mat& batch, const std::vector<int>& labels) {
    require(state.config.encoder == EncoderKind::GradientContext,
            "gradient_context: state uses a different encoder");
    require(!labels.empty(), "gradient_context: labeled batch required");
    Vec grad = Vec::Zero(bb.theta_dim());
    bb.loss_and_grad(state.theta_base, batch, labels, &grad);
    Vec projected = state.grad_projection * grad;
    nn::Mlp<Real> enc = make_grad_encoder(state.config);
    MatX<Real> in(projected.size(), 1);
    in.col(0) = projected;
    return enc.forward(state.enc_params, in).col(0);
}

Vec generator_rank_vec(const HyperNetState& state, const Vec& context) {
    require(context.size() == state.config.context_dim,
            "generator_rank_vec: context length mismatch");
    if (state.capsules) {
        return capsule_route(*state.capsules, state.caps_params, state.log_m, context).rank_vec;
    }
    nn::Mlp<Real> gen = make_generator(state.config);
    MatX<Real> in(context.size(), 1);
    in.col(0) = context;
    return gen.forward(state.gen_params, in).col(0);
}

Vec generate_params(const HyperNetState& state, const Vec& context) {
    return compose_params<Real>(state.theta_base, state.V, generator_rank_vec(state, context));
}

Vec apply_base_dropout(const HyperNetState& state, const Vec& context, bool drop_flag) {
    if (!drop_flag) return generate_params(state, context);
    Vec delta = state.V * generator_rank_vec(state, context);
    const double scale =
        double(state.theta_base.norm()) / (double(delta.norm()) + kDropEps);
    return Real(scale) * delta;
}

namespace {

// Bundles the per-encoder machinery used by training and evaluation.
struct Encoders {
    std::optional<nn::StatsEncoder<Real>> stats;
    std::optional<nn::Mlp<Real>> grad_mlp;
};

Encoders make_encoders(const HyperNetConfig& cfg, int input_dim) {
    Encoders e;
    if (cfg.encoder == EncoderKind::BatchStatsDirect) e.stats = make_stats_encoder(cfg, input_dim);
    if (cfg.encoder == EncoderKind::GradientContext) e.grad_mlp = make_grad_encoder(cfg);
    return e;
}

struct ContextCaches {
    typename nn::StatsEncoder<Real>::Cache stats;
    typename nn::Mlp<Real>::Cache grad_mlp;
    Vec grad_projected;  // input to the gradient-context MLP
};

// Computes the context for one task during training; fills caches so the
// encoder can receive gradients.
Vec training_context(const HyperNetState& state, const Encoders& enc,
                     const backbones::Backbone<Real>& bb, int task, int num_tasks,
                     const Mat& ctx_batch, const std::vector<int>& ctx_labels,
                     ContextCaches* caches) {
    switch (state.config.encoder) {
        case EncoderKind::OracleOnehot: {
            Eigen::Map<const Mat> W(state.enc_params.data(), state.config.context_dim, num_tasks);
            return W.col(task);
        }
        case EncoderKind::BatchStatsDirect:
            return enc.stats->encode(state.enc_params, ctx_batch, caches ? &caches->stats : nullptr);
        case EncoderKind::GradientContext: {
            Vec grad = Vec::Zero(bb.theta_dim());
            bb.loss_and_grad(state.theta_base, ctx_batch, ctx_labels, &grad);
            Vec projected = state.grad_projection * grad;  // frozen projection, no grad flow
            MatX<Real> in(projected.size(), 1);
            in.col(0) = projected;
            Vec c = enc.grad_mlp->forward(state.enc_params, in, caches ? &caches->grad_mlp : nullptr)
                        .col(0);
            if (caches) caches->grad_projected = projected;
            return c;
        }
    }
    throw std::logic_error("unreachable");
}

// Routes d(loss)/d(context) into the encoder parameter gradient.
void context_backward(const HyperNetState& state, const Encoders& enc, int task, int num_tasks,
                      const ContextCaches& caches, const Vec& dctx, Vec& denc) {
    switch (state.config.encoder) {
        case EncoderKind::OracleOnehot: {
            Eigen::Map<Mat> dW(denc.data(), state.config.context_dim, num_tasks);
            dW.col(task) += dctx;
            return;
        }
        case EncoderKind::BatchStatsDirect:
            enc.stats->backward(state.enc_params, caches.stats, dctx, &denc);
            return;
        case EncoderKind::GradientContext: {
            MatX<Real> dy(dctx.size(), 1);
            dy.col(0) = dctx;
            enc.grad_mlp->backward(state.enc_params, caches.grad_mlp, dy, &denc);
            return;
        }
    }
}

}  // namespace

HyperNetRunResult joint_train_hypernet(const HyperNetConfig& config,
                                       const data::TaskStream& stream,
                                       const backbones::BackboneSpec& backbone_spec) {
    require(config.episodes >= 0, "joint_train_hypernet: episodes must be nonnegative");
    require(config.base_drop_rate >= 0.0 && config.base_drop_rate <= 1.0,
            "joint_train_hypernet: drop rate out of [0,1]");
    require(config.contrastive_weight >= 0.0,
            "joint_train_hypernet: contrastive weight must be nonnegative");
    const int K = stream.num_tasks();
    SeedContext ctx(config.seed);
    const backbones::Backbone<Real> bb(backbone_spec);

    HyperNetState state;
    state.config = config;
    state.backbone_spec = backbone_spec;
    state.theta_dim = bb.theta_dim();
    state.theta_base = bb.init_params(ctx.derive("theta_base_init"));

    {
        auto rng = ctx.rng("v_init");
        std::normal_distribution<double> g(0.0, config.v_init_scale);
        state.V.resize(bb.theta_dim(), config.rank);
        for (Eigen::Index j = 0; j < state.V.cols(); ++j)
            for (Eigen::Index i = 0; i < state.V.rows(); ++i) state.V(i, j) = Real(g(rng));
    }

    nn::Mlp<Real> generator = make_generator(config);
    if (config.capsules) {
        require(config.capsule_count * (config.rank / config.capsule_count) == config.rank,
                "joint_train_hypernet: rank must divide evenly across capsules");
        state.capsules.emplace(config.capsule_count, config.context_dim,
                               config.rank / config.capsule_count);
        state.capsules->tau = Real(config.capsule_tau);
        state.capsules->direction_momentum = Real(config.direction_momentum);
        state.capsules->memory_lr = Real(config.memory_lr);
        auto rng = ctx.rng("capsule_init");
        state.capsules->init(rng, state.caps_params, state.log_m);
    } else {
        auto rng = ctx.rng("generator_init");
        generator.init_params(state.gen_params, rng);
    }

    Encoders enc = make_encoders(config, backbone_spec.input_shape.dim());
    switch (config.encoder) {
        case EncoderKind::OracleOnehot: {
            auto rng = ctx.rng("oracle_projection_init");
            std::normal_distribution<double> g(0.0, 1.0);
            state.enc_params.resize(config.context_dim * K);
            for (Eigen::Index i = 0; i < state.enc_params.size(); ++i)
                state.enc_params[i] = Real(g(rng));
            break;
        }
        case EncoderKind::BatchStatsDirect: {
            auto rng = ctx.rng("stats_encoder_init");
            enc.stats->init_params(state.enc_params, rng);
            break;
        }
        case EncoderKind::GradientContext: {
            auto rng = ctx.rng("grad_encoder_init");
            enc.grad_mlp->init_params(state.enc_params, rng);
            auto prng = ctx.rng("grad_projection_frozen");
            std::normal_distribution<double> g(0.0, 1.0 / std::sqrt(double(bb.theta_dim())));
            state.grad_projection.resize(config.grad_projection_dim, bb.theta_dim());
            for (Eigen::Index i = 0; i < state.grad_projection.rows(); ++i)
                for (Eigen::Index j = 0; j < state.grad_projection.cols(); ++j)
                    state.grad_projection(i, j) = Real(g(prng));
            break;
        }
    }

    diag::AccuracyMatrix acc;
    acc.values.setZero(K, K);
    if (config.episodes == 0) {
        return {std::move(state), std::move(acc)};
    }

    nn::Adam<Real> opt_base(state.theta_base.size(), Real(config.lr));
    nn::Adam<Real> opt_v(state.V.size(), Real(config.lr));
    nn::Adam<Real> opt_gen(config.capsules ? state.caps_params.size() : state.gen_params.size(),
                           Real(config.lr));
    nn::Adam<Real> opt_logm(config.capsules ? state.log_m.size() : 0, Real(config.lr));
    nn::Adam<Real> opt_enc(state.enc_params.size(), Real(config.lr));

    auto episode_rng = ctx.rng("episode");
    std::uniform_real_distribution<double> unit(0.0, 1.0);

    Vec g_base(state.theta_base.size());
    Vec g_v_flat(state.V.size());
    Vec g_gen(config.capsules ? state.caps_params.size() : state.gen_params.size());
    Vec g_logm(config.capsules ? state.log_m.size() : 0);
    Vec g_enc(state.enc_params.size());

    for (int episode = 0; episode < config.episodes; ++episode) {
        if (config.cosine_lr_decay) {
            // settle late training: unconstrained late wandering inflates
            // |V g(c)| until the backbone saturates
            const double progress = double(episode) / double(config.episodes);
            const Real lr = Real(config.lr * 0.5 * (1.0 + std::cos(M_PI * progress)));
            opt_base.set_learning_rate(lr);
            opt_v.set_learning_rate(lr);
            opt_gen.set_learning_rate(lr);
            opt_logm.set_learning_rate(lr);
            opt_enc.set_learning_rate(lr);
        }
        // random task permutation; one optimization step per task
        std::vector<int> order(K);
        std::iota(order.begin(), order.end(), 0);
        std::shuffle(order.begin(), order.end(), episode_rng);

        for (int t : order) {
          for (int step = 0; step < config.steps_per_task; ++step) {
            // contexts for every task (contrastive term spans all of them)
            std::vector<Vec> contexts(K);
            std::vector<ContextCaches> caches(K);
            for (int k = 0; k < K; ++k) {
                const Mat& X = stream.data[k].train_x;
                const auto& Y = stream.data[k].train_y;
                const int n = static_cast<int>(X.cols());
                const int len = std::min(config.context_batch, n);
                Mat cb(X.rows(), len);
                std::vector<int> cl(len);
                std::uniform_int_distribution<int> pick(0, n - 1);
                for (int i = 0; i < len; ++i) {
                    const int j = pick(episode_rng);
                    cb.col(i) = X.col(j);
                    cl[i] = Y[j];
                }
                contexts[k] = training_context(state, enc, bb, k, K, cb, cl, &caches[k]);
            }

            // query batch from the sampled task
            const Mat& X = stream.data[t].train_x;
            const auto& Y = stream.data[t].train_y;
            const int n = static_cast<int>(X.cols());
            const int len = std::min(config.batch_size, n);
            Mat xb(X.rows(), len);
            std::vector<int> yb(len);
            std::uniform_int_distribution<int> pick(0, n - 1);
            for (int i = 0; i < len; ++i) {
                const int j = pick(episode_rng);
                xb.col(i) = X.col(j);
                yb[i] = Y[j];
            }

            const bool dropped = unit(episode_rng) < config.base_drop_rate;

            // forward: rank vector, composed parameters, task loss
            RouteCache<Real> route_cache;
            typename nn::Mlp<Real>::Cache gen_cache;
            Vec rank_vec;
            if (config.capsules) {
                rank_vec = capsule_route(*state.capsules, state.caps_params, state.log_m,
                                         contexts[t], &route_cache)
                               .rank_vec;
            } else {
                MatX<Real> in(contexts[t].size(), 1);
                in.col(0) = contexts[t];
                rank_vec = generator.forward(state.gen_params, in, &gen_cache).col(0);
            }
            Vec delta = state.V * rank_vec;
            double drop_scale = 1.0;
            Vec theta;
            if (dropped) {
                drop_scale = double(state.theta_base.norm()) / (double(delta.norm()) + kDropEps);
                theta = Real(drop_scale) * delta;
            } else {
                theta = state.theta_base + delta;
            }

            typename backbones::Backbone<Real>::Cache bcache;
            Mat logits = bb.forward(theta, xb, &bcache);
            Mat dlogits;
            double loss = nn::softmax_cross_entropy(logits, yb, &dlogits);

            std::vector<Vec> dcontexts(K);
            for (int k = 0; k < K; ++k) dcontexts[k] = Vec::Zero(config.context_dim);
            if (config.contrastive_weight > 0.0 && K >= 2) {
                loss += contrastive_context_loss<Real>(contexts, config.contrastive_weight,
                                                       config.contrastive_margin, &dcontexts);
            }
            if (!std::isfinite(loss)) {
                throw TrainingDiverged("hypernet: non-finite episode loss at episode " +
                                       std::to_string(episode));
            }

            // backward
            g_base.setZero();
            g_v_flat.setZero();
            g_gen.setZero();
            if (config.capsules) g_logm.setZero();
            g_enc.setZero();

            Vec dtheta = Vec::Zero(bb.theta_dim());
            bb.backward(theta, bcache, dlogits, dtheta);

            Vec ddelta;
            if (dropped) {
                // rescale factor treated as a constant: the dropped branch
                // trains the context pathway only
                ddelta = Real(drop_scale) * dtheta;
            } else {
                g_base += dtheta;
                ddelta = dtheta;
            }
            Eigen::Map<Mat> gV(g_v_flat.data(), state.V.rows(), state.V.cols());
            gV += ddelta * rank_vec.transpose();
            Vec drank = state.V.transpose() * ddelta;

            if (config.capsules) {
                dcontexts[t] += capsule_route_backward(*state.capsules, state.caps_params,
                                                       route_cache, drank, &g_gen, &g_logm);
            } else {
                MatX<Real> dy(drank.size(), 1);
                dy.col(0) = drank;
                MatX<Real> din = generator.backward(state.gen_params, gen_cache, dy, &g_gen);
                dcontexts[t] += din.col(0);
            }

            for (int k = 0; k < K; ++k) {
                if (dcontexts[k].squaredNorm() == Real(0)) continue;
                context_backward(state, enc, k, K, caches[k], dcontexts[k], g_enc);
            }

            opt_base.step(state.theta_base, g_base);
            {
                Vec v_flat = Eigen::Map<Vec>(state.V.data(), state.V.size());
                opt_v.step(v_flat, g_v_flat);
                Eigen::Map<Vec>(state.V.data(), state.V.size()) = v_flat;
            }
            if (config.capsules) {
                opt_gen.step(state.caps_params, g_gen);
                opt_logm.step(state.log_m, g_logm);
                capsule_state_update(*state.capsules, route_cache);
            } else {
                opt_gen.step(state.gen_params, g_gen);
            }
            opt_enc.step(state.enc_params, g_enc);
          }
        }
    }

    // conditional regeneration: parameters always come fresh from context, so
    // the accuracy row is training-history independent; rows are identical
    auto row = evaluate_hypernet(state, stream, backbone_spec);
    for (int i = 0; i < K; ++i)
        for (int j = 0; j < K; ++j) acc.values(i, j) = row[j];

    return {std::move(state), std::move(acc)};
}

std::vector<Vec> evaluation_contexts(const HyperNetState& state, const data::TaskStream& stream) {
    const int K = stream.num_tasks();
    std::vector<Vec> contexts(K);
    const backbones::Backbone<Real> bb(state.backbone_spec);
    for (int k = 0; k < K; ++k) {
        switch (state.config.encoder) {
            case EncoderKind::OracleOnehot:
                contexts[k] = oracle_context(state, k, K);
                break;
            case EncoderKind::BatchStatsDirect:
                contexts[k] = batch_stats_context(
                    state, calibration_batch(stream, k, state.config.context_batch));
                break;
            case EncoderKind::GradientContext:
                contexts[k] = gradient_context(
                    state, bb, calibration_batch(stream, k, state.config.context_batch),
                    calibration_labels(stream, k, state.config.context_batch));
                break;
        }
    }
    return contexts;
}

namespace {

std::vector<double> eval_with_contexts(const HyperNetState& state, const data::TaskStream& stream,
                                       const backbones::BackboneSpec& backbone_spec,
                                       const std::vector<Vec>& contexts, const Vec& theta_base) {
    const backbones::Backbone<Real> bb(backbone_spec);
    std::vector<double> acc(stream.num_tasks());
    for (int j = 0; j < stream.num_tasks(); ++j) {
        Vec theta = theta_base + state.V * generator_rank_vec(state, contexts[j]);
        acc[j] = nn::evaluate_accuracy(bb, theta, stream.data[j].test_x, stream.data[j].test_y);
    }
    return acc;
}

class HyperNetProbeSubject final : public diag::ProbeSubject {
public:
    HyperNetProbeSubject(const HyperNetState& state, const data::TaskStream& stream,
                         const backbones::BackboneSpec& spec)
        : state_(state), stream_(stream), spec_(spec) {}

    int num_tasks() const override { return stream_.num_tasks(); }
    bool supports(diag::Probe) const override { return true; }

    std::vector<double> probe_accuracies(diag::Probe p,
                                         const SeedContext& probe_seeds) const override {
        const int K = stream_.num_tasks();
        std::vector<Vec> ctxs = evaluation_contexts(state_, stream_);
        Vec theta_base = state_.theta_base;
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
                theta_base = bb.init_params(probe_seeds.derive("p6_theta_base"));
                break;
            }
            case diag::Probe::P7:
                for (auto& c : ctxs) c.setZero();
                break;
        }
        return eval_with_contexts(state_, stream_, spec_, ctxs, theta_base);
    }

private:
    const HyperNetState& state_;
    const data::TaskStream& stream_;
    backbones::BackboneSpec spec_;
};

}  // namespace

std::vector<double> evaluate_hypernet(const HyperNetState& state, const data::TaskStream& stream,
                                      const backbones::BackboneSpec& backbone_spec) {
    return eval_with_contexts(state, stream, backbone_spec, evaluation_contexts(state, stream),
                              state.theta_base);
}

std::unique_ptr<diag::ProbeSubject> make_hypernet_probe_subject(
    const HyperNetState& state, const data::TaskStream& stream,
    const backbones::BackboneSpec& backbone_spec) {
    return std::make_unique<HyperNetProbeSubject>(state, stream, backbone_spec);
}

namespace {
constexpr std::uint32_t kHyperMagic = 0x48595031;  // "HYP1"

void write_vec(std::ofstream& out, const Vec& v) {
    const std::uint64_t n = v.size();
    out.write(reinterpret_cast<const char*>(&n), sizeof(n));
    out.write(reinterpret_cast<const char*>(v.data()), sizeof(Real) * n);
}
void write_mat(std::ofstream& out, const Mat& m) {
    const std::uint64_t r = m.rows(), c = m.cols();
    out.write(reinterpret_cast<const char*>(&r), sizeof(r));
    out.write(reinterpret_cast<const char*>(&c), sizeof(c));
    out.write(reinterpret_cast<const char*>(m.data()), sizeof(Real) * m.size());
}
Vec read_vec(std::ifstream& in) {
    std::uint64_t n = 0;
    in.read(reinterpret_cast<char*>(&n), sizeof(n));
    Vec v(n);
    in.read(reinterpret_cast<char*>(v.data()), sizeof(Real) * n);
    return v;
}
Mat read_mat(std::ifstream& in) {
    std::uint64_t r = 0, c = 0;
    in.read(reinterpret_cast<char*>(&r), sizeof(r));
    in.read(reinterpret_cast<char*>(&c), sizeof(c));
    Mat m(r, c);
    in.read(reinterpret_cast<char*>(m.data()), sizeof(Real) * m.size());
    return m;
}
}  // namespace

void save_hypernet_state(const std::string& path, const HyperNetState& state) {
    std::ofstream out(path, std::ios::binary);
    require(bool(out), "save_hypernet_state: cannot open " + path);
    out.write(reinterpret_cast<const char*>(&kHyperMagic), sizeof(kHyperMagic));
    const std::int32_t meta[4] = {state.theta_dim, static_cast<std::int32_t>(state.config.encoder),
                                  state.config.capsules ? 1 : 0, state.config.rank};
    out.write(reinterpret_cast<const char*>(meta), sizeof(meta));
    write_vec(out, state.theta_base);
    write_mat(out, state.V);
    write_vec(out, state.gen_params);
    write_vec(out, state.caps_params);
    write_vec(out, state.log_m);
    write_vec(out, state.enc_params);
    write_mat(out, state.grad_projection);
    const std::int32_t has_caps = state.capsules ? 1 : 0;
    out.write(reinterpret_cast<const char*>(&has_caps), sizeof(has_caps));
    if (state.capsules) {
        write_mat(out, state.capsules->directions);
        for (const auto& m : state.capsules->memories) write_mat(out, m);
    }
}

HyperNetState load_hypernet_state(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    require(bool(in), "load_hypernet_state: cannot open " + path);
    std::uint32_t magic = 0;
    in.read(reinterpret_cast<char*>(&magic), sizeof(magic));
    require(magic == kHyperMagic, "load_hypernet_state: bad magic in " + path);
    std::int32_t meta[4];
    in.read(reinterpret_cast<char*>(meta), sizeof(meta));
    HyperNetState s;
    s.theta_dim = meta[0];
    s.config.encoder = static_cast<EncoderKind>(meta[1]);
    s.config.capsules = meta[2] != 0;
    s.config.rank = meta[3];
    s.theta_base = read_vec(in);
    s.V = read_mat(in);
    s.gen_params = read_vec(in);
    s.caps_params = read_vec(in);
    s.log_m = read_vec(in);
    s.enc_params = read_vec(in);
    s.grad_projection = read_mat(in);
    std::int32_t has_caps = 0;
    in.read(reinterpret_cast<char*>(&has_caps), sizeof(has_caps));
    if (has_caps) {
        s.capsules.emplace(s.config.capsule_count, s.config.context_dim,
                           s.config.rank / s.config.capsule_count);
        s.capsules->directions = read_mat(in);
        for (auto& m : s.capsules->memories) m = read_mat(in);
    }
    require(bool(in), "load_hypernet_state: truncated file " + path);
    return s;
}

}  // namespace ccl::hypernet
