#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "ccl/hypernet/hypernet.hpp"
#include "ccl/nn/losses.hpp"
#include "testutil.hpp"

#include <cmath>
#include <filesystem>
#include <random>

namespace fs = std::filesystem;

using namespace ccl;
using namespace ccl::hypernet;

namespace {

data::TaskStream synthetic_stream(std::uint64_t seed, int train_pc = 12, int test_pc = 6) {
    data::LabeledPool pool;
    pool.shape = {1, 28, 28};
    pool.x.resize(784, 30 * 10);
    pool.y.reserve(300);
    std::mt19937_64 rng(55);
    std::uniform_real_distribution<double> noise(0.0, 0.05);
    int col = 0;
    for (int c = 0; c < 10; ++c) {
        for (int i = 0; i < 30; ++i, ++col) {
            // class c lights up its own pixel block: orthogonal, easy to fit
            for (int p = 0; p < 784; ++p) {
                const bool on = p >= 78 * c && p < 78 * (c + 1);
                pool.x(p, col) = Real((on ? 0.8 : 0.02) + noise(rng));
            }
            pool.y.push_back(c);
        }
    }
    return data::build_stream_from_pool("split_mnist", seed, train_pc, test_pc, pool);
}

HyperNetConfig tiny_config(EncoderKind enc, std::uint64_t seed, bool capsules = false) {
    HyperNetConfig cfg;
    cfg.episodes = 10;
    cfg.batch_size = 16;
    cfg.context_batch = 16;
    cfg.encoder = enc;
    cfg.capsules = capsules;
    cfg.seed = seed;
    return cfg;
}

}  // namespace

TEST_CASE("compose_params hand case and affinity in theta_base") {
    Vec base = Vec::Zero(3);
    Mat V(3, 2);
    V << 1, 0, 0, 1, 1, 1;
    Vec r(2);
    r << 2, 3;
    Vec theta = compose_params<Real>(base, V, r);
    CHECK(theta[0] == doctest::Approx(2));
    CHECK(theta[1] == doctest::Approx(3));
    CHECK(theta[2] == doctest::Approx(5));

    Vec delta(3);
    delta << 0.5, -1, 2;
    Vec shifted = compose_params<Real>((base + delta).eval(), V, r);
    CHECK((shifted - (theta + delta)).cwiseAbs().maxCoeff() < 1e-6);

    Mat bad(2, 2);
    CHECK_THROWS_AS(compose_params<Real>(base, bad, r), std::invalid_argument);
}

TEST_CASE("zero generator or zero V reproduce theta_base exactly") {
    auto stream = synthetic_stream(0);
    auto cfg = tiny_config(EncoderKind::OracleOnehot, 1);
    cfg.episodes = 0;
    auto result = joint_train_hypernet(cfg, stream, backbones::BackboneSpec::conv_tasknet());
    HyperNetState& s = result.state;

    Vec c = Vec::Ones(cfg.context_dim);
    s.gen_params.setZero();
    Vec theta = generate_params(s, c);
    CHECK(theta == s.theta_base);  // g(c) = 0 under all-zero generator params

    // restore a nonzero generator, zero V instead
    std::mt19937_64 rng(3);
    std::normal_distribution<double> g(0.0, 0.5);
    for (Eigen::Index i = 0; i < s.gen_params.size(); ++i) s.gen_params[i] = Real(g(rng));
    s.V.setZero();
    CHECK(generate_params(s, c) == s.theta_base);
}

TEST_CASE("oracle context basics") {
    CHECK(oracle_onehot(0, 5) == (Vec(5) << 1, 0, 0, 0, 0).finished());
    CHECK_THROWS_AS(oracle_onehot(5, 5), std::invalid_argument);

    auto stream = synthetic_stream(0);
    auto cfg = tiny_config(EncoderKind::OracleOnehot, 2);
    cfg.episodes = 0;
    auto result = joint_train_hypernet(cfg, stream, backbones::BackboneSpec::conv_tasknet());
    Vec a = oracle_context(result.state, 1, 5);
    Vec b = oracle_context(result.state, 1, 5);
    CHECK(a.size() == 64);
    CHECK(a == b);
    Vec other = oracle_context(result.state, 2, 5);
    CHECK(a != other);
}

TEST_CASE("batch stats context: determinism, zero batch, input differentiability") {
    nn::StatsEncoder<double> enc(6, 8, 4);
    VecX<double> params;
    std::mt19937_64 rng(1);
    enc.init_params(params, rng);

    MatX<double> batch(6, 5);
    batch.setRandom();
    VecX<double> c1 = enc.encode(params, batch);
    VecX<double> c2 = enc.encode(params, batch);
    CHECK(c1 == c2);

    MatX<double> zeros = MatX<double>::Zero(6, 3);
    VecX<double> cz = enc.encode(params, zeros);
    MatX<double> zin = MatX<double>::Zero(12, 1);
    VecX<double> expected = enc.net().forward(params, zin).col(0);
    CHECK(cz == expected);

    CHECK_THROWS_AS(enc.encode(params, MatX<double>(6, 0)), std::invalid_argument);

    // analytic batch gradient of u . c(batch) vs central differences
    VecX<double> u(4);
    u << 0.3, -0.7, 0.2, 0.9;
    typename nn::StatsEncoder<double>::Cache cache;
    enc.encode(params, batch, &cache);
    MatX<double> dbatch;
    enc.backward(params, cache, u, nullptr, &dbatch);
    const double h = 1e-6;
    for (auto [i, j] : std::vector<std::pair<int, int>>{{0, 0}, {3, 2}, {5, 4}, {2, 1}}) {
        MatX<double> bp = batch, bm = batch;
        bp(i, j) += h;
        bm(i, j) -= h;
        const double fd = (u.dot(enc.encode(params, bp)) - u.dot(enc.encode(params, bm))) / (2 * h);
        CHECK(dbatch(i, j) == doctest::Approx(fd).epsilon(1e-4));
    }
}

TEST_CASE("gradient context: determinism and fixed projection") {
    auto stream = synthetic_stream(0);
    auto cfg = tiny_config(EncoderKind::GradientContext, 3);
    cfg.episodes = 0;
    auto spec = backbones::BackboneSpec::conv_tasknet();
    auto result = joint_train_hypernet(cfg, stream, spec);
    backbones::Backbone<Real> bb(spec);

    Mat batch = stream.data[0].train_x.leftCols(8);
    std::vector<int> labels(stream.data[0].train_y.begin(), stream.data[0].train_y.begin() + 8);
    Vec c1 = gradient_context(result.state, bb, batch, labels);
    Vec c2 = gradient_context(result.state, bb, batch, labels);
    CHECK(c1 == c2);
    CHECK(c1.size() == 64);
    CHECK_THROWS_AS(gradient_context(result.state, bb, batch, {}), std::invalid_argument);

    // the frozen projection is bit-identical across a whole training run
    Mat frozen_before = result.state.grad_projection;
    auto trained =
        joint_train_hypernet(tiny_config(EncoderKind::GradientContext, 3), stream, spec);
    CHECK(trained.state.grad_projection == frozen_before);  // same seed -> same init, never updated
}

TEST_CASE("capsule routing: uniform, two-capsule softmax, temperature limit") {
    const int ctx_dim = 8;
    CapsuleBank<double> bank(4, ctx_dim, 2);
    std::mt19937_64 rng(0);
    VecX<double> caps_params, log_m;
    bank.init(rng, caps_params, log_m);

    VecX<double> c(ctx_dim);
    c.setRandom();
    c.normalize();

    // identical directions and memories -> equal scores -> uniform routing
    for (int i = 0; i < 4; ++i) {
        bank.directions.col(i) = c;
        bank.memories[i] = c * c.transpose();  // predicts c exactly: surprise 0
    }
    RouteCache<double> cache;
    auto res = capsule_route(bank, caps_params, log_m, c, &cache);
    for (int i = 0; i < 4; ++i) CHECK(res.alpha[i] == doctest::Approx(0.25).epsilon(1e-9));
    // routing entropy log2 4 = 2 bits at uniform
    double entropy = 0;
    for (int i = 0; i < 4; ++i) entropy -= res.alpha[i] * std::log2(res.alpha[i]);
    CHECK(entropy == doctest::Approx(2.0).epsilon(1e-9));
    CHECK(res.alpha.sum() == doctest::Approx(1.0).epsilon(1e-12));

    // two-capsule toy with scores (1, 0): alpha = (0.731, 0.269)
    CapsuleBank<double> two(2, ctx_dim, 2);
    VecX<double> cp2, lm2;
    two.init(rng, cp2, lm2);
    two.directions.col(0) = c;  // cos = 1
    VecX<double> orth = VecX<double>::Zero(ctx_dim);
    orth[0] = -c[1];
    orth[1] = c[0];
    orth.normalize();
    two.directions.col(1) = orth;  // cos ~= 0
    two.memories[0] = c * two.directions.col(0).transpose();
    two.memories[1] = c * two.directions.col(1).transpose();
    auto r2 = capsule_route(two, cp2, lm2, c);
    CHECK(r2.alpha[0] == doctest::Approx(std::exp(1.0) / (std::exp(1.0) + 1.0)).epsilon(1e-6));
    CHECK(r2.alpha[1] == doctest::Approx(1.0 / (std::exp(1.0) + 1.0)).epsilon(1e-6));

    // temperature to zero: argmax becomes one-hot
    two.tau = 1e-3;
    auto sharp = capsule_route(two, cp2, lm2, c);
    CHECK(sharp.alpha[0] == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("capsule routing weights are a probability vector for random contexts") {
    CapsuleBank<double> bank(8, 16, 8);
    std::mt19937_64 rng(2);
    VecX<double> caps_params, log_m;
    bank.init(rng, caps_params, log_m);
    std::normal_distribution<double> g(0.0, 1.0);
    for (int trial = 0; trial < 50; ++trial) {
        VecX<double> c(16);
        for (int i = 0; i < 16; ++i) c[i] = g(rng);
        auto res = capsule_route(bank, caps_params, log_m, c);
        CHECK(res.alpha.sum() == doctest::Approx(1.0).epsilon(1e-9));
        CHECK(res.alpha.minCoeff() >= 0.0);
        CHECK(res.rank_vec.size() == 64);
    }
}

TEST_CASE("capsule directions stay unit norm through state updates") {
    CapsuleBank<double> bank(4, 8, 2);
    std::mt19937_64 rng(4);
    VecX<double> caps_params, log_m;
    bank.init(rng, caps_params, log_m);
    std::normal_distribution<double> g(0.0, 1.0);
    for (int step = 0; step < 200; ++step) {
        VecX<double> c(8);
        for (int i = 0; i < 8; ++i) c[i] = g(rng);
        RouteCache<double> cache;
        capsule_route(bank, caps_params, log_m, c, &cache);
        capsule_state_update(bank, cache);
        for (int i = 0; i < 4; ++i) {
            CHECK(bank.directions.col(i).norm() == doctest::Approx(1.0).epsilon(1e-9));
        }
    }
}

TEST_CASE("capsule route gradients match finite differences") {
    CapsuleBank<double> bank(3, 6, 2);
    std::mt19937_64 rng(8);
    VecX<double> caps_params, log_m;
    bank.init(rng, caps_params, log_m);
    log_m << 0.2, -0.1, 0.3;
    VecX<double> c(6);
    c << 0.5, -0.3, 0.8, 0.1, -0.6, 0.4;
    VecX<double> u(6);  // rank = 3*2
    u << 0.7, -0.2, 0.5, 0.9, -0.4, 0.3;

    RouteCache<double> cache;
    capsule_route(bank, caps_params, log_m, c, &cache);
    VecX<double> dcaps = VecX<double>::Zero(caps_params.size());
    VecX<double> dlogm = VecX<double>::Zero(3);
    VecX<double> dc = capsule_route_backward(bank, caps_params, cache, u, &dcaps, &dlogm);

    auto loss = [&](const VecX<double>& cp, const VecX<double>& lm, const VecX<double>& cc) {
        return u.dot(capsule_route(bank, cp, lm, cc).rank_vec);
    };
    std::mt19937_64 coord_rng(9);
    {
        auto coords = testutil::sample_coords(static_cast<int>(caps_params.size()), 12, coord_rng);
        auto f = [&](const Eigen::VectorXd& cp) { return loss(cp, log_m, c); };
        CHECK(testutil::max_relative_grad_error(f, caps_params, dcaps, coords) < 1e-3);
    }
    {
        std::vector<int> coords = {0, 1, 2};
        auto f = [&](const Eigen::VectorXd& lm) { return loss(caps_params, lm, c); };
        CHECK(testutil::max_relative_grad_error(f, log_m, dlogm, coords) < 1e-3);
    }
    {
        std::vector<int> coords = {0, 2, 4, 5};
        auto f = [&](const Eigen::VectorXd& cc) { return loss(caps_params, log_m, cc); };
        CHECK(testutil::max_relative_grad_error(f, c, dc, coords) < 1e-3);
    }
}

TEST_CASE("generator chain gradients match finite differences on a toy backbone") {
    // full conditional-regeneration chain in double precision:
    // loss(backbone(X, theta_base + V g(c))) w.r.t. generator params, V, c
    auto bb = backbones::Backbone<double>::custom_mlp({4, 2});
    const int theta_dim = bb.theta_dim();
    const int ctx_dim = 5, rank = 3;
    nn::Mlp<double> gen(typename nn::Mlp<double>::Options{{ctx_dim, 8, 8, rank}, nn::Act::Silu,
                                                          true, false});
    VecX<double> gen_params;
    std::mt19937_64 rng(21);
    gen.init_params(gen_params, rng);
    MatX<double> V(theta_dim, rank);
    V.setRandom();
    V *= 0.3;
    VecX<double> theta_base = bb.init_params(1);
    VecX<double> c(ctx_dim);
    c << 0.2, -0.5, 0.9, 0.1, -0.3;
    MatX<double> X(4, 6);
    X.setRandom();
    std::vector<int> y = {0, 1, 0, 1, 1, 0};

    auto loss_of = [&](const VecX<double>& gp, const MatX<double>& Vm, const VecX<double>& cc,
                       const VecX<double>& base) {
        MatX<double> in(ctx_dim, 1);
        in.col(0) = cc;
        VecX<double> r = gen.forward(gp, in).col(0);
        VecX<double> theta = base + Vm * r;
        return double(bb.loss_and_grad(theta, X, y, nullptr));
    };

    // analytic
    typename nn::Mlp<double>::Cache gcache;
    MatX<double> in(ctx_dim, 1);
    in.col(0) = c;
    VecX<double> r = gen.forward(gen_params, in, &gcache).col(0);
    VecX<double> theta = theta_base + V * r;
    VecX<double> dtheta = VecX<double>::Zero(theta_dim);
    bb.loss_and_grad(theta, X, y, &dtheta);
    MatX<double> dV = dtheta * r.transpose();
    VecX<double> drank = V.transpose() * dtheta;
    MatX<double> dy(rank, 1);
    dy.col(0) = drank;
    VecX<double> dgen = VecX<double>::Zero(gen_params.size());
    MatX<double> dctx_m = gen.backward(gen_params, gcache, dy, &dgen);

    std::mt19937_64 coord_rng(31);
    {
        auto coords = testutil::sample_coords(static_cast<int>(gen_params.size()), 16, coord_rng);
        auto f = [&](const Eigen::VectorXd& gp) { return loss_of(gp, V, c, theta_base); };
        CHECK(testutil::max_relative_grad_error(f, gen_params, dgen, coords) < 1e-3);
    }
    {
        // flatten V for the FD utility
        VecX<double> v_flat = Eigen::Map<VecX<double>>(V.data(), V.size());
        VecX<double> dv_flat = Eigen::Map<VecX<double>>(dV.data(), dV.size());
        auto coords = testutil::sample_coords(static_cast<int>(v_flat.size()), 10, coord_rng);
        auto f = [&](const Eigen::VectorXd& vf) {
            MatX<double> Vm = Eigen::Map<const MatX<double>>(vf.data(), theta_dim, rank);
            return loss_of(gen_params, Vm, c, theta_base);
        };
        CHECK(testutil::max_relative_grad_error(f, v_flat, dv_flat, coords) < 1e-3);
    }
    {
        std::vector<int> coords = {0, 1, 2, 3, 4};
        VecX<double> dc = dctx_m.col(0);
        auto f = [&](const Eigen::VectorXd& cc) { return loss_of(gen_params, V, cc, theta_base); };
        CHECK(testutil::max_relative_grad_error(f, c, dc, coords) < 1e-3);
    }
    {
        // gradient w.r.t. theta_base equals dtheta (affine path)
        auto coords = testutil::sample_coords(theta_dim, 8, coord_rng);
        auto f = [&](const Eigen::VectorXd& base) { return loss_of(gen_params, V, c, base); };
        CHECK(testutil::max_relative_grad_error(f, theta_base, dtheta, coords) < 1e-3);
    }
}

TEST_CASE("contrastive loss cases and gradient") {
    VecX<double> e1 = VecX<double>::Zero(4), e2 = VecX<double>::Zero(4);
    e1[0] = 1;
    e2[1] = 1;
    std::vector<VecX<double>> orth = {e1, e2};
    CHECK(contrastive_context_loss<double>(orth, 1.0, 0.0) == doctest::Approx(0.0));

    std::vector<VecX<double>> same = {e1, e1};
    CHECK(contrastive_context_loss<double>(same, 1.0, 0.0) == doctest::Approx(1.0));
    CHECK(contrastive_context_loss<double>(same, 0.0, 0.0) == doctest::Approx(0.0));

    std::vector<VecX<double>> one = {e1};
    CHECK_THROWS_AS(contrastive_context_loss<double>(one, 1.0, 0.0), std::invalid_argument);

    // gradient vs finite differences on three random contexts
    std::mt19937_64 rng(12);
    std::normal_distribution<double> g(0.0, 1.0);
    std::vector<VecX<double>> ctxs(3, VecX<double>(4));
    for (auto& c : ctxs)
        for (int i = 0; i < 4; ++i) c[i] = g(rng);
    std::vector<VecX<double>> grads;
    contrastive_context_loss<double>(ctxs, 0.7, 0.1, &grads);
    const double h = 1e-6;
    for (int k = 0; k < 3; ++k) {
        for (int i = 0; i < 4; ++i) {
            auto cp = ctxs, cm = ctxs;
            cp[k][i] += h;
            cm[k][i] -= h;
            const double fd = (contrastive_context_loss<double>(cp, 0.7, 0.1) -
                               contrastive_context_loss<double>(cm, 0.7, 0.1)) /
                              (2 * h);
            CHECK(grads[k][i] == doctest::Approx(fd).epsilon(1e-5));
        }
    }
}

TEST_CASE("base dropout forward semantics") {
    auto stream = synthetic_stream(0);
    auto cfg = tiny_config(EncoderKind::OracleOnehot, 5);
    cfg.episodes = 0;
    auto result = joint_train_hypernet(cfg, stream, backbones::BackboneSpec::conv_tasknet());
    HyperNetState& s = result.state;
    Vec c = oracle_context(s, 0, 5);

    CHECK(apply_base_dropout(s, c, false) == generate_params(s, c));

    // dropped with V g(c) = 0: output is exactly zero (epsilon guards the div)
    Mat saved_v = s.V;
    s.V.setZero();
    Vec dropped = apply_base_dropout(s, c, true);
    CHECK(dropped.cwiseAbs().maxCoeff() == Real(0));
    s.V = saved_v;

    // rescale toy: make V g(c) = (1,0,...) and |theta_base| = 2
    Vec g = generator_rank_vec(s, c);
    Vec target = Vec::Zero(s.theta_dim);
    target[0] = 1;
    Mat V_toy = target * g.transpose() / g.squaredNorm();
    s.V = V_toy;
    s.theta_base.setZero();
    s.theta_base[1] = 2;
    Vec out = apply_base_dropout(s, c, true);
    CHECK(out[0] == doctest::Approx(2.0).epsilon(1e-4));
    CHECK(std::abs(out[1]) < 1e-4);
}

TEST_CASE("zero episodes leave the state at initialization; training is deterministic") {
    auto stream = synthetic_stream(2);
    auto spec = backbones::BackboneSpec::conv_tasknet();
    auto cfg = tiny_config(EncoderKind::OracleOnehot, 6);
    cfg.episodes = 0;
    auto zero = joint_train_hypernet(cfg, stream, spec);
    backbones::Backbone<Real> bb(spec);
    SeedContext ctx(6);
    CHECK(zero.state.theta_base == bb.init_params(ctx.derive("theta_base_init")));
    CHECK(zero.acc_matrix.values.cwiseAbs().maxCoeff() == 0.0);

    auto a = joint_train_hypernet(tiny_config(EncoderKind::OracleOnehot, 6), stream, spec);
    auto b = joint_train_hypernet(tiny_config(EncoderKind::OracleOnehot, 6), stream, spec);
    CHECK(a.acc_matrix.values == b.acc_matrix.values);
    CHECK(a.state.theta_base == b.state.theta_base);
    CHECK(a.state.V == b.state.V);

    // identical rows by construction
    for (int i = 1; i < 5; ++i) {
        CHECK(a.acc_matrix.values.row(i) == a.acc_matrix.values.row(0));
    }
}

TEST_CASE("small training runs lift accuracy above chance for all encoders") {
    auto stream = synthetic_stream(3, 16, 8);
    auto spec = backbones::BackboneSpec::conv_tasknet();
    for (auto enc : {EncoderKind::OracleOnehot, EncoderKind::BatchStatsDirect,
                     EncoderKind::GradientContext}) {
        auto cfg = tiny_config(enc, 11);
        cfg.episodes = 60;
        auto result = joint_train_hypernet(cfg, stream, spec);
        CHECK(diag::avg_accuracy(result.acc_matrix) > 1.5 * data::chance_accuracy(stream));
    }
    // capsule variant
    auto cfg = tiny_config(EncoderKind::OracleOnehot, 12, /*capsules=*/true);
    cfg.episodes = 60;
    auto caps = joint_train_hypernet(cfg, stream, spec);
    CHECK(diag::avg_accuracy(caps.acc_matrix) > 1.5 * data::chance_accuracy(stream));
}

TEST_CASE("hypernet state serialization round-trips") {
    auto stream = synthetic_stream(1);
    auto cfg = tiny_config(EncoderKind::BatchStatsDirect, 8);
    cfg.episodes = 2;
    auto result = joint_train_hypernet(cfg, stream, backbones::BackboneSpec::conv_tasknet());
    const auto path = (fs::temp_directory_path() / "ccl_hyper_state.bin").string();
    save_hypernet_state(path, result.state);
    HyperNetState loaded = load_hypernet_state(path);
    CHECK(loaded.theta_base == result.state.theta_base);
    CHECK(loaded.V == result.state.V);
    CHECK(loaded.gen_params == result.state.gen_params);
    CHECK(loaded.enc_params == result.state.enc_params);
    fs::remove(path);
}
