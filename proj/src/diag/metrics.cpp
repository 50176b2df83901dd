#include "ccl/diag/metrics.hpp"

namespace ccl::diag {

double avg_accuracy(const AccuracyMatrix& m) {
    require(m.values.rows() == m.values.cols() && m.values.rows() >= 1,
            "avg_accuracy: empty or non-square matrix");
    return m.values.row(m.values.rows() - 1).mean();
}

double avg_forgetting(const AccuracyMatrix& m) {
    const int K = m.num_tasks();
    require(m.values.rows() == m.values.cols() && K >= 2, "avg_forgetting: need K >= 2");
    double total = 0.0;
    for (int j = 0; j < K - 1; ++j) {
        double peak = m.values(j, j);
        for (int t = j; t <= K - 2; ++t) peak = std::max(peak, m.values(t, j));
        total += peak - m.values(K - 1, j);
    }
    return total / (K - 1);
}

double backward_transfer(const AccuracyMatrix& m) {
    const int K = m.num_tasks();
    require(m.values.rows() == m.values.cols() && K >= 2, "backward_transfer: need K >= 2");
    double total = 0.0;
    for (int j = 0; j < K - 1; ++j) total += m.values(K - 1, j) - m.values(j, j);
    return total / (K - 1);
}

}  // namespace ccl::diag
