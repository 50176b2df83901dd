#include "ccl/diag/capacity.hpp"

#include <Eigen/SVD>

#include <cmath>

namespace ccl::diag {

double task_entropy(int num_tasks) {
    require(num_tasks >= 1, "task_entropy: K must be >= 1");
    return std::log2(static_cast<double>(num_tasks));
}

double ccc_lower_bound(const BoundInputs& in) {
    require(in.num_tasks >= 2, "ccc_lower_bound: K must be >= 2");
    require(in.cctx_bits >= 0.0, "ccc_lower_bound: capacity must be nonnegative");
    require(in.fgt_max >= 0.0 && in.fgt_max <= 1.0, "ccc_lower_bound: fgt_max out of [0,1]");
    const double h = task_entropy(in.num_tasks);
    return std::max(0.0, 1.0 - in.cctx_bits / h) * in.fgt_max;
}

double parameter_capacity(long d, double bits_per_param) {
    require(d >= 1, "parameter_capacity: d must be >= 1");
    require(bits_per_param > 0.0, "parameter_capacity: bits per parameter must be positive");
    return static_cast<double>(d) * bits_per_param;
}

double task_collapse_threshold(double capacity_bits, double r_min_bits) {
    require(r_min_bits > 0.0, "task_collapse_threshold: R_min must be positive");
    require(capacity_bits >= 0.0, "task_collapse_threshold: capacity must be nonnegative");
    return capacity_bits / r_min_bits;
}

double combinatorial_capacity(long n, long k) {
    require(k >= 0 && n >= 0 && k <= n, "combinatorial_capacity: need 0 <= k <= N");
    const double ln_binom =
        std::lgamma(double(n) + 1.0) - std::lgamma(double(k) + 1.0) - std::lgamma(double(n - k) + 1.0);
    return ln_binom / std::log(2.0);
}

double effective_rank(const Eigen::MatrixXd& m) {
    require(m.size() > 0, "effective_rank: empty matrix");
    Eigen::BDCSVD<Eigen::MatrixXd> svd(m);
    Eigen::VectorXd s = svd.singularValues();
    const double total = s.sum();
    require(total > 0.0, "effective_rank: all-zero matrix");
    double entropy = 0.0;
    for (Eigen::Index i = 0; i < s.size(); ++i) {
        const double p = s[i] / total;
        if (p > 0.0) entropy -= p * std::log(p);
    }
    return std::exp(entropy);
}

double cctx_proxy(double delta_p5) {
    return std::min(1.0, std::max(0.0, -delta_p5));
}

}  // namespace ccl::diag
