#pragma once

#include "ccl/common.hpp"

#include <cmath>
#include <vector>

namespace ccl::nn {

// Column-wise stable softmax over logits (classes x batch).
template <typename S>
MatX<S> softmax(const MatX<S>& logits) {
    MatX<S> p = logits;
    for (Eigen::Index c = 0; c < p.cols(); ++c) {
        p.col(c).array() -= p.col(c).maxCoeff();
        p.col(c) = p.col(c).array().exp();
        p.col(c) /= p.col(c).sum();
    }
    return p;
}

// Mean cross-entropy over the batch. When dlogits is non-null it receives
// d(loss)/d(logits) = (softmax - onehot) / batch.
template <typename S>
S softmax_cross_entropy(const MatX<S>& logits, const std::vector<int>& labels,
                        MatX<S>* dlogits = nullptr) {
    const Eigen::Index B = logits.cols();
    require(static_cast<Eigen::Index>(labels.size()) == B,
            "softmax_cross_entropy: label count mismatch");
    MatX<S> p = softmax(logits);
    S loss = S(0);
    for (Eigen::Index c = 0; c < B; ++c) {
        loss -= std::log(std::max(p(labels[c], c), S(1e-12)));
    }
    loss /= S(B);
    if (dlogits) {
        *dlogits = p / S(B);
        for (Eigen::Index c = 0; c < B; ++c) (*dlogits)(labels[c], c) -= S(1) / S(B);
    }
    return loss;
}

// KL( softmax(teacher/T) || softmax(student/T) ), natural log, averaged over
// the batch. Gradient w.r.t. the student logits accumulates into *dstudent
// scaled by `weight` when non-null.
template <typename S>
S kl_softmax(const MatX<S>& teacher_logits, const MatX<S>& student_logits, S temperature,
             S weight = S(1), MatX<S>* dstudent = nullptr) {
    require(teacher_logits.rows() == student_logits.rows() &&
                teacher_logits.cols() == student_logits.cols(),
            "kl_softmax: shape mismatch");
    require(temperature > S(0), "kl_softmax: temperature must be positive");
    const Eigen::Index B = student_logits.cols();
    MatX<S> pt = softmax<S>(teacher_logits / temperature);
    MatX<S> ps = softmax<S>(student_logits / temperature);
    S kl = S(0);
    for (Eigen::Index c = 0; c < B; ++c) {
        kl += (pt.col(c).array() *
               ((pt.col(c).array().max(S(1e-12))) / ps.col(c).array().max(S(1e-12))).log())
                  .sum();
    }
    kl /= S(B);
    if (dstudent) {
        // d/d(student logits) of mean KL = (ps - pt) / (T * B)
        dstudent->noalias() += (ps - pt) * (weight / (temperature * S(B)));
    }
    return kl;
}

template <typename S>
double accuracy(const MatX<S>& logits, const std::vector<int>& labels) {
    const Eigen::Index B = logits.cols();
    require(static_cast<Eigen::Index>(labels.size()) == B, "accuracy: label count mismatch");
    if (B == 0) return 0.0;
    int hits = 0;
    for (Eigen::Index c = 0; c < B; ++c) {
        Eigen::Index best;
        logits.col(c).maxCoeff(&best);
        if (static_cast<int>(best) == labels[c]) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(B);
}

}  // namespace ccl::nn
