#pragma once

#include "ccl/backbones/backbone.hpp"
#include "ccl/common.hpp"
#include "ccl/nn/losses.hpp"

#include <vector>

namespace ccl::nn {

// Accuracy of a flat parameter vector over a full labeled set, evaluated in
// chunks to bound peak memory.
template <typename S>
double evaluate_accuracy(const backbones::Backbone<S>& bb, const VecX<S>& theta, const MatX<S>& X,
                         const std::vector<int>& y, Eigen::Index chunk = 512) {
    const Eigen::Index n = X.cols();
    if (n == 0) return 0.0;
    long hits = 0;
    for (Eigen::Index start = 0; start < n; start += chunk) {
        const Eigen::Index len = std::min(chunk, n - start);
        MatX<S> logits = bb.forward(theta, X.middleCols(start, len));
        for (Eigen::Index c = 0; c < len; ++c) {
            Eigen::Index best;
            logits.col(c).maxCoeff(&best);
            if (static_cast<int>(best) == y[start + c]) ++hits;
        }
    }
    return static_cast<double>(hits) / static_cast<double>(n);
}

}  // namespace ccl::nn
