#include "ccl/diag/probes.hpp"

#include "ccl/diag/capacity.hpp"

#include <numeric>

namespace ccl::diag {

std::string to_string(ProbeClass c) {
    switch (c) {
        case ProbeClass::Theta0Memorizer: return "theta0_memorizer";
        case ProbeClass::ContextDependent: return "context_dependent";
        case ProbeClass::Degenerate: return "degenerate";
    }
    return "degenerate";
}

std::string to_string(Probe p) {
    switch (p) {
        case Probe::Normal: return "normal";
        case Probe::P5: return "p5";
        case Probe::P5b: return "p5b";
        case Probe::P6: return "p6";
        case Probe::P7: return "p7";
    }
    return "normal";
}

namespace {
double mean_of(const std::vector<double>& v) {
    require(!v.empty(), "probe produced no accuracies");
    return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}
}  // namespace

ProbeReport run_probe_suite(const ProbeSubject& subject, const SeedContext& probe_seeds) {
    ProbeReport report;
    report.normal_acc = mean_of(subject.probe_accuracies(Probe::Normal, probe_seeds));

    auto run = [&](Probe p) -> std::optional<double> {
        if (!subject.supports(p)) return std::nullopt;
        return mean_of(subject.probe_accuracies(p, probe_seeds));
    };
    report.p5_acc = run(Probe::P5);
    report.p5b_acc = run(Probe::P5b);
    report.p6_acc = run(Probe::P6);
    report.p7_acc = run(Probe::P7);

    report.delta_p5 = report.p5_acc ? *report.p5_acc - report.normal_acc : 0.0;
    report.cctx_proxy = diag::cctx_proxy(report.delta_p5);

    const bool p6_big_drop = report.p6_acc && (*report.p6_acc - report.normal_acc) < -0.20;
    if (std::abs(report.delta_p5) < 0.02 && p6_big_drop) {
        report.classification = ProbeClass::Theta0Memorizer;
    } else if (report.delta_p5 < -0.50) {
        report.classification = ProbeClass::ContextDependent;
    } else {
        report.classification = ProbeClass::Degenerate;
    }
    return report;
}

}  // namespace ccl::diag
