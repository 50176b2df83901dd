#pragma once

#include "ccl/harness/runner.hpp"

#include <string>

namespace ccl::harness {

// Writes the run figures into `dir`:
//   phase_transition.svg   C_ctx proxy vs forgetting scatter
//   acc_matrix_<m>.svg     per-method accuracy-matrix heatmap (first seed)
//   p5_bars.svg            normal vs wrong-context accuracy bars
void emit_plots(const ResultRecord& record, const std::string& dir);

}  // namespace ccl::harness
