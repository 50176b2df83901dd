#pragma once

#include "ccl/common.hpp"
#include "ccl/rng.hpp"

#include <optional>
#include <string>
#include <vector>

namespace ccl::diag {

// Probe family:
//   P5  wrong task context (rotate to task (k+1) mod K)
//   P5b random Gaussian context
//   P6  random base/initial parameters, correct context
//   P7  zero context
enum class Probe { Normal, P5, P5b, P6, P7 };

enum class ProbeClass { Theta0Memorizer, ContextDependent, Degenerate };

std::string to_string(ProbeClass c);
std::string to_string(Probe p);

struct ProbeReport {
    double normal_acc = 0.0;
    std::optional<double> p5_acc, p5b_acc, p6_acc, p7_acc;
    double delta_p5 = 0.0;        // p5_acc - normal_acc (fraction)
    double cctx_proxy = 0.0;      // max(0, -delta_p5)
    std::optional<double> effective_rank;
    ProbeClass classification = ProbeClass::Degenerate;
};

// Trained artifact exposing context-conditional evaluation. Implementations
// must be read-only: probing may not mutate the trained state.
class ProbeSubject {
public:
    virtual ~ProbeSubject() = default;
    virtual int num_tasks() const = 0;
    virtual bool supports(Probe p) const = 0;
    // Accuracy on each task's test set under the probe condition.
    virtual std::vector<double> probe_accuracies(Probe p, const SeedContext& probe_seeds) const = 0;
};

// Runs every supported probe and fills the report. Classification follows the
// interpretation grid: theta0-memorizer iff |d_P5| < 0.02 and d_P6 < -0.20;
// context-dependent iff d_P5 < -0.50; degenerate otherwise.
ProbeReport run_probe_suite(const ProbeSubject& subject, const SeedContext& probe_seeds);

}  // namespace ccl::diag
