#include "ccl/trainers/seqtrainer.hpp"

#include "ccl/nn/adam.hpp"
#include "ccl/nn/eval.hpp"
#include "ccl/nn/losses.hpp"
#include "ccl/rng.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace ccl::trainers {

Method method_from_string(const std::string& name) {
    if (name == "naive_sgd") return Method::NaiveSgd;
    if (name == "ewc") return Method::Ewc;
    if (name == "si") return Method::Si;
    if (name == "lwf") return Method::Lwf;
    if (name == "replay") return Method::Replay;
    throw std::invalid_argument("unknown sequential method: " + name);
}

std::string to_string(Method m) {
    switch (m) {
        case Method::NaiveSgd: return "naive_sgd";
        case Method::Ewc: return "ewc";
        case Method::Si: return "si";
        case Method::Lwf: return "lwf";
        case Method::Replay: return "replay";
    }
    return "naive_sgd";
}

double ewc_penalty(const Vec& params, const Vec& anchor, const Vec& fisher_diag, double lambda,
                   Vec* grad) {
    require(params.size() == anchor.size() && params.size() == fisher_diag.size(),
            "ewc_penalty: length mismatch");
    Vec delta = params - anchor;
    const double penalty =
        0.5 * lambda *
        (fisher_diag.cast<double>().array() * delta.cast<double>().array().square()).sum();
    if (grad) {
        grad->array() += Real(lambda) * fisher_diag.array() * delta.array();
    }
    return penalty;
}

double si_quadratic_penalty(const Vec& params, const Vec& anchor, const Vec& omega, double c,
                            Vec* grad) {
    require(params.size() == anchor.size() && params.size() == omega.size(),
            "si_quadratic_penalty: length mismatch");
    Vec delta = params - anchor;
    const double penalty =
        c * (omega.cast<double>().array() * delta.cast<double>().array().square()).sum();
    if (grad) {
        grad->array() += Real(2.0 * c) * omega.array() * delta.array();
    }
    return penalty;
}

Vec estimate_fisher_diag(const backbones::Backbone<Real>& bb, const Vec& params, const Mat& X,
                         int num_samples, std::mt19937_64& rng) {
    require(X.cols() > 0, "estimate_fisher_diag: empty data");
    require(num_samples >= 1, "estimate_fisher_diag: need at least one sample");
    Vec fisher = Vec::Zero(bb.theta_dim());
    std::uniform_int_distribution<Eigen::Index> pick(0, X.cols() - 1);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    Vec grad(bb.theta_dim());
    for (int s = 0; s < num_samples; ++s) {
        const Eigen::Index i = pick(rng);
        typename backbones::Backbone<Real>::Cache cache;
        Mat logits = bb.forward(params, X.col(i), &cache);
        Mat p = nn::softmax(logits);
        // label drawn from the model's predictive distribution
        double r = unit(rng);
        int y = 0;
        for (; y < p.rows() - 1; ++y) {
            r -= p(y, 0);
            if (r <= 0.0) break;
        }
        // d(-log p(y|x))/d logits = p - onehot(y); the sign drops under the
        // square so the negative log-likelihood gradient serves directly
        Mat dlogits = p;
        dlogits(y, 0) -= Real(1);
        grad.setZero();
        bb.backward(params, cache, dlogits, grad);
        fisher.array() += grad.array().square();
    }
    fisher /= Real(num_samples);
    return fisher;
}

void si_accumulate(Vec& running_w, const Vec& grad, const Vec& delta_theta) {
    require(running_w.size() == grad.size() && grad.size() == delta_theta.size(),
            "si_accumulate: length mismatch");
    running_w.array() += (-grad.array()) * delta_theta.array();
}

Vec si_task_omega(const Vec& running_w, const Vec& total_delta, double damping,
                  bool ratio_variant) {
    require(running_w.size() == total_delta.size(), "si_task_omega: length mismatch");
    Vec numer = ratio_variant ? running_w : running_w.cwiseMax(Real(0));
    return numer.array() / (total_delta.array().square() + Real(damping));
}

double lwf_loss(const Mat& student_logits, const Mat& teacher_logits, double alpha,
                double temperature, Mat* dstudent) {
    const double kl = nn::kl_softmax<Real>(teacher_logits, student_logits, Real(temperature),
                                           Real(alpha), dstudent);
    return alpha * kl;
}

void ReplayBuffer::add_task(int task_index, const Mat& x, const std::vector<int>& y) {
    const int n = std::min<int>(cap_, static_cast<int>(x.cols()));
    require(task_index == static_cast<int>(xs_.size()),
            "ReplayBuffer: tasks must be added in order");
    xs_.push_back(x.leftCols(n));
    ys_.push_back(std::vector<int>(y.begin(), y.begin() + n));
    total_ += n;
}

std::pair<Mat, std::vector<int>> ReplayBuffer::sample(int size, std::mt19937_64& rng) const {
    if (total_ == 0 || size <= 0) return {Mat(), {}};
    Mat x(xs_.front().rows(), size);
    std::vector<int> y(size);
    std::uniform_int_distribution<int> pick(0, total_ - 1);
    for (int i = 0; i < size; ++i) {
        int flat = pick(rng);
        std::size_t t = 0;
        while (flat >= static_cast<int>(ys_[t].size())) {
            flat -= static_cast<int>(ys_[t].size());
            ++t;
        }
        x.col(i) = xs_[t].col(flat);
        y[i] = ys_[t][flat];
    }
    return {std::move(x), std::move(y)};
}

namespace {

std::vector<int> epoch_order(int n, std::mt19937_64& rng) {
    std::vector<int> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    return order;
}

}  // namespace

SeqTrainResult train_sequential(const SeqTrainConfig& config, const data::TaskStream& stream,
                                const backbones::BackboneSpec& backbone_spec) {
    require(config.epochs_per_task >= 1, "train_sequential: epochs must be >= 1");
    require(stream.num_tasks() >= 1, "train_sequential: empty stream");
    const int K = stream.num_tasks();
    const backbones::Backbone<Real> bb(backbone_spec);
    SeedContext ctx(config.seed);

    Vec theta = bb.init_params(ctx.derive("backbone_init"));
    ImportanceState imp;
    imp.fisher_diag = Vec::Zero(bb.theta_dim());
    imp.omega = Vec::Zero(bb.theta_dim());
    ReplayBuffer buffer(config.params.replay_per_task);
    Vec teacher_theta;

    diag::AccuracyMatrix acc;
    acc.values.setZero(K, K);

    for (int k = 0; k < K; ++k) {
        const Mat& X = stream.data[k].train_x;
        const std::vector<int>& Y = stream.data[k].train_y;
        const int n = static_cast<int>(X.cols());

        nn::Adam<Real> adam(bb.theta_dim(), Real(config.learning_rate));
        if (config.method == Method::Lwf && k > 0) teacher_theta = theta;

        Vec si_w = Vec::Zero(bb.theta_dim());
        const Vec theta_task_start = theta;

        auto batch_rng = ctx.rng("batch_order", static_cast<std::uint64_t>(k));
        auto replay_rng = ctx.rng("replay_draw", static_cast<std::uint64_t>(k));

        for (int epoch = 0; epoch < config.epochs_per_task; ++epoch) {
            auto order = epoch_order(n, batch_rng);
            for (int start = 0; start < n; start += config.batch_size) {
                const int len = std::min(config.batch_size, n - start);
                Mat xb(X.rows(), len);
                std::vector<int> yb(len);
                for (int i = 0; i < len; ++i) {
                    xb.col(i) = X.col(order[start + i]);
                    yb[i] = Y[order[start + i]];
                }

                // replay items are appended to the batch; the cross-entropy
                // mean then weights current and replayed data by count
                if (config.method == Method::Replay && !buffer.empty()) {
                    auto [xr, yr] = buffer.sample(len, replay_rng);
                    Mat joined(xb.rows(), xb.cols() + xr.cols());
                    joined << xb, xr;
                    xb = std::move(joined);
                    yb.insert(yb.end(), yr.begin(), yr.end());
                }

                typename backbones::Backbone<Real>::Cache cache;
                Mat logits = bb.forward(theta, xb, &cache);
                Mat dlogits;
                double loss = nn::softmax_cross_entropy(logits, yb, &dlogits);

                if (config.method == Method::Lwf && k > 0) {
                    Mat teacher_logits = bb.forward(teacher_theta, xb);
                    // T^2 balances the distillation gradient against the
                    // cross-entropy term (softened targets shrink it by T^2)
                    const double t2 =
                        config.params.lwf_temperature * config.params.lwf_temperature;
                    loss += lwf_loss(logits, teacher_logits, config.params.lwf_alpha * t2,
                                     config.params.lwf_temperature, &dlogits);
                }

                Vec grad = Vec::Zero(bb.theta_dim());
                bb.backward(theta, cache, dlogits, grad);

                if (k > 0) {
                    if (config.method == Method::Ewc) {
                        loss += ewc_penalty(theta, imp.anchor, imp.fisher_diag,
                                            config.params.ewc_lambda, &grad);
                    } else if (config.method == Method::Si) {
                        loss += si_quadratic_penalty(theta, imp.anchor, imp.omega,
                                                     config.params.si_c, &grad);
                    }
                }

                if (!std::isfinite(loss)) {
                    throw TrainingDiverged("non-finite loss in " + to_string(config.method) +
                                           " at task " + std::to_string(k));
                }

                if (config.method == Method::Si) {
                    const Vec before = theta;
                    adam.step(theta, grad);
                    si_accumulate(si_w, grad, theta - before);
                } else {
                    adam.step(theta, grad);
                }
            }
        }

        // row k: evaluate on every task's test set
        for (int j = 0; j < K; ++j) {
            acc.values(k, j) =
                nn::evaluate_accuracy(bb, theta, stream.data[j].test_x, stream.data[j].test_y);
        }

        if (config.method == Method::Ewc) {
            auto fisher_rng = ctx.rng("fisher", static_cast<std::uint64_t>(k));
            const int samples = std::min<int>(config.params.fisher_samples, n);
            imp.fisher_diag += estimate_fisher_diag(bb, theta, X, samples, fisher_rng);
            imp.anchor = theta;
            imp.has_anchor = true;
        } else if (config.method == Method::Si) {
            imp.omega += si_task_omega(si_w, theta - theta_task_start, config.params.si_damping,
                                       config.params.si_ratio_variant);
            imp.anchor = theta;
            imp.has_anchor = true;
        } else if (config.method == Method::Replay) {
            // store a seeded random subset; the raw split is class-blocked,
            // so a prefix would hold a single class
            auto store_rng = ctx.rng("buffer_store", static_cast<std::uint64_t>(k));
            std::vector<int> idx = epoch_order(n, store_rng);
            const int keep = std::min<int>(config.params.replay_per_task, n);
            Mat xs(X.rows(), keep);
            std::vector<int> ys(keep);
            for (int i = 0; i < keep; ++i) {
                xs.col(i) = X.col(idx[i]);
                ys[i] = Y[idx[i]];
            }
            buffer.add_task(k, xs, ys);
        }
    }

    return {std::move(acc), std::move(theta)};
}

namespace {

class SeqProbeSubject final : public diag::ProbeSubject {
public:
    SeqProbeSubject(const backbones::BackboneSpec& spec, Vec theta, const data::TaskStream& stream)
        : bb_(spec), theta_(std::move(theta)), stream_(stream) {}

    int num_tasks() const override { return stream_.num_tasks(); }

    bool supports(diag::Probe p) const override {
        // no context pathway: wrong/random/zero context all evaluate the
        // same parameters; replacing the base is undefined here
        return p != diag::Probe::P6;
    }

    std::vector<double> probe_accuracies(diag::Probe, const SeedContext&) const override {
        std::vector<double> acc(stream_.num_tasks());
        for (int j = 0; j < stream_.num_tasks(); ++j) {
            acc[j] = nn::evaluate_accuracy(bb_, theta_, stream_.data[j].test_x,
                                           stream_.data[j].test_y);
        }
        return acc;
    }

private:
    backbones::Backbone<Real> bb_;
    Vec theta_;
    const data::TaskStream& stream_;
};

}  // namespace

std::unique_ptr<diag::ProbeSubject> make_seq_probe_subject(
    const backbones::BackboneSpec& backbone_spec, Vec theta, const data::TaskStream& stream) {
    return std::make_unique<SeqProbeSubject>(backbone_spec, std::move(theta), stream);
}

}  // namespace ccl::trainers
