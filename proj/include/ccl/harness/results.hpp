#pragma once

#include "ccl/harness/runner.hpp"

#include <nlohmann/json_fwd.hpp>

#include <string>

namespace ccl::harness {

// Aggregates (mean, sample stddev; zero stddev for a single seed) over the
// non-failed seeds.
void recompute_aggregates(MethodOutcome& outcome);

nlohmann::json record_to_json(const ResultRecord& record);
ResultRecord record_from_json(const nlohmann::json& j);

// One row per method: ACC, Fgt, P5 delta, C_ctx proxy as mean +- std.
std::string summary_table(const ResultRecord& record);
std::string summary_csv(const ResultRecord& record);

}  // namespace ccl::harness
