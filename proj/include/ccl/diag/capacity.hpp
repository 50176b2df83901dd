#pragma once

#include "ccl/common.hpp"

namespace ccl::diag {

struct BoundInputs {
    double cctx_bits = 0.0;  // context channel capacity estimate, bits
    int num_tasks = 2;
    double fgt_max = 0.97;  // empirical maximal forgetting (fraction)
};

// H(T) = log2 K under a uniform task distribution.
double task_entropy(int num_tasks);

// Forgetting lower bound: max(0, 1 - C_ctx / H(T)) * Fgt_max.
double ccc_lower_bound(const BoundInputs& in);

// C = d * bits per parameter.
double parameter_capacity(long d, double bits_per_param);

// K above which retaining all tasks is impossible: C / R_min.
double task_collapse_threshold(double capacity_bits, double r_min_bits);

// log2 of the binomial coefficient C(N, k), via log-gamma.
double combinatorial_capacity(long n, long k);

// exp of the Shannon entropy (natural log) of normalized singular values.
double effective_rank(const Eigen::MatrixXd& m);

// Empirical proxy: max(0, -delta_p5), clamped to [0, 1].
double cctx_proxy(double delta_p5);

}  // namespace ccl::diag
