#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "ccl/cflow/cflow.hpp"
#include "ccl/nn/losses.hpp"
#include "testutil.hpp"

#include <cmath>
#include <filesystem>
#include <random>

using namespace ccl;
using namespace ccl::cflow;

namespace {

// dtheta/dt = theta, the closed-form test system (solution: theta0 * e^t)
template <typename S>
struct LinearField {
    struct Cache {};
    VecX<S> eval(const VecX<S>&, const VecX<S>& theta, const VecX<S>&, S, Cache*) const {
        return theta;
    }
    VecX<S> backward(const VecX<S>&, const Cache&, const VecX<S>& dout, VecX<S>*, VecX<S>&) const {
        return dout;
    }
};

data::TaskStream synthetic_stream(std::uint64_t seed, int train_pc = 12, int test_pc = 6) {
    data::LabeledPool pool;
    pool.shape = {1, 28, 28};
    pool.x.resize(784, 30 * 10);
    pool.y.reserve(300);
    std::mt19937_64 rng(77);
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

}  // namespace

TEST_CASE("time embedding basics") {
    auto e0 = time_embedding<double>(0.0, 16);
    CHECK(e0.size() == 32);
    CHECK(e0.head(16).cwiseAbs().maxCoeff() == doctest::Approx(0.0).epsilon(1e-12));
    CHECK((e0.tail(16).array() - 1.0).abs().maxCoeff() == doctest::Approx(0.0).epsilon(1e-12));
    // integer frequencies: t=1 wraps to the t=0 embedding
    auto e1 = time_embedding<double>(1.0, 16);
    CHECK((e1 - e0).cwiseAbs().maxCoeff() < 1e-9);
}

TEST_CASE("zero flow field is an exact identity on theta0") {
    FlowField<Real> field(10, 4, 2, 8, 3);
    std::mt19937_64 rng(0);
    VecX<Real> params;
    field.net().init_params(params, rng);  // output layer zero-initialized
    Vec theta0(10), ctx(4);
    theta0.setRandom();
    ctx.setRandom();
    for (auto integ : {Integrator::Euler, Integrator::Rk4}) {
        for (int steps : {1, 3, 10}) {
            Vec theta1 = flow_integrate<Real>(theta0, ctx, field, params, integ, steps);
            CHECK(theta1 == theta0);
        }
    }
}

TEST_CASE("constant flow integrates to theta0 + v for both integrators") {
    FlowField<double> field(6, 3, 2, 8, 3);
    std::mt19937_64 rng(0);
    VecX<double> params;
    field.net().init_params(params, rng);
    // the output layer is zeroed by init; drive it with a bias-only field
    const auto& layout = field.net().layout();
    const auto& bias_entry = layout.back();
    VecX<double> v(6);
    v << 0.3, -0.2, 0.05, 0.4, -0.15, 0.22;
    params.segment(bias_entry.offset, bias_entry.count) = v;

    VecX<double> theta0(6), ctx(3);
    theta0.setZero();
    ctx.setRandom();
    for (auto integ : {Integrator::Euler, Integrator::Rk4}) {
        VecX<double> theta1 = flow_integrate<double>(theta0, ctx, field, params, integ, 7);
        CHECK((theta1 - v).cwiseAbs().maxCoeff() < 1e-12);
    }
}

TEST_CASE("linear system: RK4 reaches e to 1e-5, Euler error shrinks like 1/steps") {
    LinearField<double> field;
    VecX<double> theta0(1), ctx(0), params(0);
    theta0 << 1.0;
    const double e = std::exp(1.0);

    VecX<double> rk = flow_integrate<double>(theta0, ctx, field, params, Integrator::Rk4, 10);
    CHECK(std::abs(rk[0] - e) < 1e-5);

    auto euler_err = [&](int steps) {
        VecX<double> th =
            flow_integrate<double>(theta0, ctx, field, params, Integrator::Euler, steps);
        return std::abs(th[0] - e);
    };
    const double e10 = euler_err(10), e100 = euler_err(100), e1000 = euler_err(1000);
    CHECK(e10 > e100);
    CHECK(e100 > e1000);
    // first-order: error ratio tracks the step ratio
    CHECK(e10 / e100 == doctest::Approx(10.0).epsilon(0.25));
    CHECK(e100 / e1000 == doctest::Approx(10.0).epsilon(0.25));
}

TEST_CASE("RK4 observed convergence order is at least 3.5 on the linear system") {
    LinearField<double> field;
    VecX<double> theta0(1), ctx(0), params(0);
    theta0 << 1.0;
    const double e = std::exp(1.0);
    std::vector<double> log_h, log_err;
    for (int steps : {2, 4, 8, 16, 32}) {
        VecX<double> th =
            flow_integrate<double>(theta0, ctx, field, params, Integrator::Rk4, steps);
        log_h.push_back(std::log(1.0 / steps));
        log_err.push_back(std::log(std::abs(th[0] - e)));
    }
    // least-squares slope of log err vs log h
    const int n = static_cast<int>(log_h.size());
    double mx = 0, my = 0;
    for (int i = 0; i < n; ++i) {
        mx += log_h[i];
        my += log_err[i];
    }
    mx /= n;
    my /= n;
    double num = 0, den = 0;
    for (int i = 0; i < n; ++i) {
        num += (log_h[i] - mx) * (log_err[i] - my);
        den += (log_h[i] - mx) * (log_h[i] - mx);
    }
    const double slope = num / den;
    CHECK(slope >= 3.5);
}

TEST_CASE("unrolled integrator gradients match finite differences on a toy") {
    // 10-parameter toy backbone behind a small flow net; episode loss is the
    // cross-entropy of the integrated parameters on a fixed batch
    auto bb = backbones::Backbone<double>::custom_mlp({4, 2});
    const int theta_dim = bb.theta_dim();
    FlowField<double> field(theta_dim, 3, 2, 8, 3);
    std::mt19937_64 rng(5);
    VecX<double> flow_params;
    field.net().init_params(flow_params, rng);
    // give the zero-initialized output layer real weights so the flow is active
    std::normal_distribution<double> g(0.0, 0.3);
    const auto& wout = field.net().layout()[field.net().layout().size() - 2];
    const auto& bout = field.net().layout().back();
    for (int i = 0; i < wout.count; ++i) flow_params[wout.offset + i] = g(rng) * 0.05;
    for (int i = 0; i < bout.count; ++i) flow_params[bout.offset + i] = g(rng) * 0.05;

    VecX<double> theta0 = bb.init_params(3);
    VecX<double> ctx(3);
    ctx << 0.4, -0.2, 0.8;
    MatX<double> X(4, 6);
    X.setRandom();
    std::vector<int> y = {0, 1, 1, 0, 1, 0};

    auto loss_of = [&](const VecX<double>& th0, const VecX<double>& fp, const VecX<double>& c) {
        VecX<double> theta =
            flow_integrate<double>(th0, c, field, fp, Integrator::Rk4, 4);
        return double(bb.loss_and_grad(theta, X, y, nullptr));
    };

    // analytic gradients
    IntegrationCache<FlowField<double>, double> cache;
    VecX<double> theta1 =
        flow_integrate<double>(theta0, ctx, field, flow_params, Integrator::Rk4, 4, &cache);
    VecX<double> dtheta1 = VecX<double>::Zero(theta_dim);
    bb.loss_and_grad(theta1, X, y, &dtheta1);
    VecX<double> dflow = VecX<double>::Zero(flow_params.size());
    VecX<double> dctx = VecX<double>::Zero(3);
    VecX<double> dtheta0 =
        flow_integrate_backward<double>(field, flow_params, cache, dtheta1, &dflow, dctx);

    std::mt19937_64 coord_rng(17);
    // flow parameters, output bias explicitly included
    {
        auto coords = testutil::sample_coords(static_cast<int>(flow_params.size()), 12, coord_rng);
        coords.push_back(bout.offset);
        coords.push_back(bout.offset + 2);
        auto f = [&](const Eigen::VectorXd& fp) { return loss_of(theta0, fp, ctx); };
        CHECK(testutil::max_relative_grad_error(f, flow_params, dflow, coords) < 1e-3);
    }
    // theta0
    {
        auto coords = testutil::sample_coords(theta_dim, 10, coord_rng);
        auto f = [&](const Eigen::VectorXd& th) { return loss_of(th, flow_params, ctx); };
        CHECK(testutil::max_relative_grad_error(f, theta0, dtheta0, coords) < 1e-3);
    }
    // context
    {
        std::vector<int> coords = {0, 1, 2};
        auto f = [&](const Eigen::VectorXd& c) { return loss_of(theta0, flow_params, c); };
        CHECK(testutil::max_relative_grad_error(f, ctx, dctx, coords) < 1e-3);
    }
    // Euler path as well
    {
        IntegrationCache<FlowField<double>, double> ec;
        VecX<double> t1 =
            flow_integrate<double>(theta0, ctx, field, flow_params, Integrator::Euler, 6, &ec);
        VecX<double> dt1 = VecX<double>::Zero(theta_dim);
        bb.loss_and_grad(t1, X, y, &dt1);
        VecX<double> df = VecX<double>::Zero(flow_params.size());
        VecX<double> dc = VecX<double>::Zero(3);
        VecX<double> dth0 = flow_integrate_backward<double>(field, flow_params, ec, dt1, &df, dc);
        auto f = [&](const Eigen::VectorXd& th) {
            VecX<double> theta =
                flow_integrate<double>(th, ctx, field, flow_params, Integrator::Euler, 6);
            return double(bb.loss_and_grad(theta, X, y, nullptr));
        };
        auto coords = testutil::sample_coords(theta_dim, 10, coord_rng);
        CHECK(testutil::max_relative_grad_error(f, theta0, dth0, coords) < 1e-3);
    }
}

TEST_CASE("zero meta-training episodes leave theta0 at its initialization") {
    auto stream = synthetic_stream(0);
    auto spec = backbones::BackboneSpec::conv_tasknet();
    CFlowConfig cfg;
    cfg.episodes = 0;
    cfg.seed = 4;
    auto result = meta_train_cflow(cfg, stream, spec);
    backbones::Backbone<Real> bb(spec);
    SeedContext ctx(4);
    Vec expected = bb.init_params(ctx.derive("theta0_init"));
    CHECK(result.state.theta0 == expected);
}

TEST_CASE("tiny cflow run is deterministic and well-formed") {
    auto stream = synthetic_stream(1);
    auto spec = backbones::BackboneSpec::conv_tasknet();
    CFlowConfig cfg;
    cfg.episodes = 5;
    cfg.integration_steps = 3;
    cfg.batch_size = 16;
    cfg.seed = 9;
    auto a = meta_train_cflow(cfg, stream, spec);
    auto b = meta_train_cflow(cfg, stream, spec);
    CHECK(a.acc_matrix.values == b.acc_matrix.values);
    CHECK(a.state.theta0 == b.state.theta0);
    CHECK(a.acc_matrix.values.minCoeff() >= 0.0);
    CHECK(a.acc_matrix.values.maxCoeff() <= 1.0);
    CHECK(a.acc_matrix.values.rows() == 5);

    // probes run read-only and the control path gives delta zero
    auto subject = make_cflow_probe_subject(a.state, cfg, stream, spec);
    SeedContext probe_seeds(123);
    Vec theta0_before = a.state.theta0;
    auto report = diag::run_probe_suite(*subject, probe_seeds);
    CHECK(a.state.theta0 == theta0_before);
    CHECK(report.p5_acc.has_value());
    CHECK(report.p6_acc.has_value());
    CHECK(report.normal_acc >= 0.0);
}

TEST_CASE("flow state serialization round-trips") {
    namespace fs = std::filesystem;
    FlowState s;
    s.theta_dim = 4;
    s.context_dim = 3;
    s.time_freqs = 2;
    s.flow_hidden = 8;
    s.flow_layers = 3;
    s.encoder_input_dim = 10;
    s.theta0 = Vec::Random(4);
    s.flow_params = Vec::Random(20);
    s.encoder_params = Vec::Random(15);
    const auto path = (fs::temp_directory_path() / "ccl_flow_state.bin").string();
    save_flow_state(path, s);
    FlowState t = load_flow_state(path);
    CHECK(t.theta0 == s.theta0);
    CHECK(t.flow_params == s.flow_params);
    CHECK(t.encoder_params == s.encoder_params);
    CHECK(t.context_dim == 3);
    fs::remove(path);
}
