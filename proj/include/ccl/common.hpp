#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <stdexcept>
#include <string>

namespace ccl {

// Scalar used for production training. Oracle tests instantiate the templated
// cores with double where finite-difference checks need the extra precision.
using Real = float;

template <typename S>
using MatX = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>;
template <typename S>
using VecX = Eigen::Matrix<S, Eigen::Dynamic, 1>;

using Mat = MatX<Real>;
using Vec = VecX<Real>;

// Thrown when a training run produces a non-finite loss. The harness records
// the seed as failed instead of silently clipping.
struct TrainingDiverged : std::runtime_error {
    explicit TrainingDiverged(const std::string& what) : std::runtime_error(what) {}
};

inline void require(bool cond, const std::string& msg) {
    if (!cond) throw std::invalid_argument(msg);
}

}  // namespace ccl
