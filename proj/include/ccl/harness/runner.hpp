#pragma once

#include "ccl/common.hpp"
#include "ccl/data/taskstream.hpp"
#include "ccl/diag/metrics.hpp"
#include "ccl/diag/probes.hpp"

#include <nlohmann/json_fwd.hpp>

#include <optional>
#include <string>
#include <vector>

namespace ccl::harness {

enum class Mode { Quick, Full };

struct ExperimentConfig {
    std::string benchmark = "split_mnist";
    std::vector<std::string> methods;
    std::vector<std::uint64_t> seeds = {0, 1, 2, 3};
    Mode mode = Mode::Full;
    std::string device = "auto";  // auto|cpu|accelerator; runs on cpu either way
    std::string output_root;      // resolved against CCL_RESULTS_DIR, default "results"
    std::string data_dir;         // resolved against CCL_DATA_DIR, default "data"
    int train_per_class = 0;      // 0 = mode default (full 500, quick 200)
    int test_per_class = 0;       // 0 = mode default (full 200, quick 100)
    std::string command_line;     // echoed into command.txt
};

struct SeedOutcome {
    std::uint64_t seed = 0;
    bool failed = false;
    std::string error;
    diag::AccuracyMatrix acc_matrix;
    double acc = 0, fgt = 0, bwt = 0;
    diag::ProbeReport probe;
    std::optional<double> effective_rank;
    double wall_seconds = 0;
};

struct Aggregate {
    double mean = 0, stddev = 0;
};

struct MethodOutcome {
    std::string method;
    std::vector<SeedOutcome> seeds;
    Aggregate acc, fgt, bwt, delta_p5, cctx;
};

struct ResultRecord {
    int schema_version = 1;
    ExperimentConfig config;
    std::string timestamp;
    double wall_seconds = 0;
    std::vector<MethodOutcome> methods;
    std::string run_dir;
};

// All dispatchable method names.
const std::vector<std::string>& registered_methods();
bool is_registered(const std::string& method);

int default_train_per_class(Mode mode);
int default_test_per_class(Mode mode);

// Derives every random stream of a run from one master seed.
SeedContext make_run_context(std::uint64_t seed);

// Trains one (method, seed) pair on a prebuilt stream and probes the result.
SeedOutcome run_method_seed(const std::string& method, std::uint64_t seed, Mode mode,
                            const data::TaskStream& stream);

// Full pipeline: per (method, seed) build stream, train, evaluate, probe;
// persists results.json, figures and command.txt into a timestamped
// directory under the output root. Seed failures are recorded, not fatal.
ResultRecord run_experiment(const ExperimentConfig& config);

std::string resolve_output_root(const std::string& cli_value);

}  // namespace ccl::harness
