#pragma once

#include "ccl/common.hpp"

#include <string>

namespace ccl::diag {

// Entry (i, j): accuracy on task j after training through task i. Fractions
// in [0,1] internally; percentage points appear only at presentation.
struct AccuracyMatrix {
    Eigen::MatrixXd values;

    int num_tasks() const { return static_cast<int>(values.rows()); }
};

// Mean of the final row.
double avg_accuracy(const AccuracyMatrix& m);

// Mean over tasks j < K of (peak accuracy on j across rows j..K-1) minus the
// final-row accuracy on j.
double avg_forgetting(const AccuracyMatrix& m);

// Mean over tasks j < K of final-row minus diagonal accuracy.
double backward_transfer(const AccuracyMatrix& m);

}  // namespace ccl::diag
