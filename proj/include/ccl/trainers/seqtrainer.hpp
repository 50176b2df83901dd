#pragma once

#include "ccl/backbones/backbone.hpp"
#include "ccl/common.hpp"
#include "ccl/data/taskstream.hpp"
#include "ccl/diag/metrics.hpp"
#include "ccl/diag/probes.hpp"

#include <memory>
#include <random>
#include <string>
#include <vector>

namespace ccl::trainers {

enum class Method { NaiveSgd, Ewc, Si, Lwf, Replay };

Method method_from_string(const std::string& name);
std::string to_string(Method m);

struct MethodParams {
    double ewc_lambda = 400.0;
    double si_c = 1.0;
    double si_damping = 0.1;        // xi; the paper never states it
    bool si_ratio_variant = false;  // signed ratio form instead of the clamped path integral
    double lwf_alpha = 1.0;
    double lwf_temperature = 2.0;
    int replay_per_task = 200;
    int fisher_samples = 512;
};

struct SeqTrainConfig {
    Method method = Method::NaiveSgd;
    int epochs_per_task = 5;
    int batch_size = 64;
    double learning_rate = 1e-3;
    MethodParams params;
    std::uint64_t seed = 0;
};

// Anchored importance state shared by EWC and SI.
struct ImportanceState {
    Vec fisher_diag;  // nonnegative, EWC
    Vec omega;        // nonnegative, SI
    Vec anchor;       // theta* snapshot
    bool has_anchor = false;
};

// (lambda/2) * sum_i F_i (theta_i - anchor_i)^2. Adds the derivative into
// *grad when non-null.
double ewc_penalty(const Vec& params, const Vec& anchor, const Vec& fisher_diag, double lambda,
                   Vec* grad = nullptr);

// c * sum_i Omega_i (theta_i - anchor_i)^2 (no 1/2 factor).
double si_quadratic_penalty(const Vec& params, const Vec& anchor, const Vec& omega, double c,
                            Vec* grad = nullptr);

// Diagonal Fisher information estimate: mean of squared log-likelihood
// gradients over sampled inputs, labels drawn from the model's predictive
// distribution.
Vec estimate_fisher_diag(const backbones::Backbone<Real>& bb, const Vec& params, const Mat& X,
                         int num_samples, std::mt19937_64& rng);

// running_w += (-grad) .* delta_theta
void si_accumulate(Vec& running_w, const Vec& grad, const Vec& delta_theta);

// Per-task importance: max(0, w_i) / (total_delta_i^2 + xi). The ratio
// variant drops the clamp.
Vec si_task_omega(const Vec& running_w, const Vec& total_delta, double damping,
                  bool ratio_variant = false);

// alpha * KL( softmax(teacher/T) || softmax(student/T) ), natural log.
double lwf_loss(const Mat& student_logits, const Mat& teacher_logits, double alpha,
                double temperature, Mat* dstudent = nullptr);

class ReplayBuffer {
public:
    explicit ReplayBuffer(int per_task_cap) : cap_(per_task_cap) {}

    // Stores the first `cap` samples of the task split, insertion order kept.
    void add_task(int task_index, const Mat& x, const std::vector<int>& y);

    bool empty() const { return total_ == 0; }
    int size() const { return total_; }
    int capacity_per_task() const { return cap_; }

    // Uniform sample with replacement across every stored item. An empty
    // buffer yields an empty batch.
    std::pair<Mat, std::vector<int>> sample(int size, std::mt19937_64& rng) const;

private:
    int cap_;
    int total_ = 0;
    std::vector<Mat> xs_;
    std::vector<std::vector<int>> ys_;
};

struct SeqTrainResult {
    diag::AccuracyMatrix acc_matrix;
    Vec final_theta;
};

// Trains sequentially on tasks 1..K; row i of the matrix holds accuracies on
// every test set after finishing task i. Task k's raw data is only read
// during task k (earlier tasks only through the replay buffer).
SeqTrainResult train_sequential(const SeqTrainConfig& config, const data::TaskStream& stream,
                                const backbones::BackboneSpec& backbone_spec);

// Context-free probe view over the final parameters: every probe evaluates
// the same theta, so deltas are exactly zero.
std::unique_ptr<diag::ProbeSubject> make_seq_probe_subject(
    const backbones::BackboneSpec& backbone_spec, Vec theta, const data::TaskStream& stream);

}  // namespace ccl::trainers
