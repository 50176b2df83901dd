#include "ccl/harness/runner.hpp"

#include "ccl/cflow/cflow.hpp"
#include "ccl/diag/capacity.hpp"
#include "ccl/harness/figures.hpp"
#include "ccl/harness/results.hpp"
#include "ccl/hypernet/hypernet.hpp"
#include "ccl/rng.hpp"
#include "ccl/trainers/seqtrainer.hpp"

#include <nlohmann/json.hpp>

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>

namespace fs = std::filesystem;

namespace ccl::harness {

const std::vector<std::string>& registered_methods() {
    static const std::vector<std::string> methods = {
        "naive_sgd",        "ewc",
        "si",               "lwf",
        "replay",           "cflow",
        "hypernet_oracle",  "hypernet_learned",
        "hypernet_gradctx", "capsule_oracle",
        "capsule_gradctx"};
    return methods;
}

bool is_registered(const std::string& method) {
    const auto& m = registered_methods();
    return std::find(m.begin(), m.end(), method) != m.end();
}

int default_train_per_class(Mode mode) { return mode == Mode::Full ? 500 : 200; }
int default_test_per_class(Mode mode) { return mode == Mode::Full ? 200 : 100; }

SeedContext make_run_context(std::uint64_t seed) { return SeedContext(seed); }

namespace {

backbones::BackboneSpec backbone_for(const std::string& method, const data::TaskStream& stream) {
    if (method == "naive_sgd" || method == "ewc" || method == "si" || method == "lwf" ||
        method == "replay") {
        backbones::BackboneSpec spec = backbones::BackboneSpec::mlp_baseline();
        spec.input_shape = stream.input_shape;
        return spec;
    }
    return backbones::BackboneSpec::conv_tasknet(stream.input_shape);
}

cflow::CFlowConfig cflow_config(Mode mode, std::uint64_t seed) {
    cflow::CFlowConfig cfg;
    cfg.episodes = mode == Mode::Full ? 80 : 20;
    cfg.seed = seed;
    return cfg;
}

hypernet::HyperNetConfig hypernet_config(const std::string& method, Mode mode,
                                         std::uint64_t seed) {
    hypernet::HyperNetConfig cfg;
    cfg.episodes = mode == Mode::Full ? 200 : 50;
    cfg.seed = seed;
    if (method == "hypernet_oracle" || method == "capsule_oracle") {
        cfg.encoder = hypernet::EncoderKind::OracleOnehot;
        // anti-collapse mechanisms are tied to the learned encoders
        cfg.contrastive_weight = 0.0;
        cfg.base_drop_rate = 0.0;
    } else if (method == "hypernet_learned") {
        cfg.encoder = hypernet::EncoderKind::BatchStatsDirect;
    } else {
        cfg.encoder = hypernet::EncoderKind::GradientContext;
    }
    cfg.capsules = method.rfind("capsule_", 0) == 0;
    return cfg;
}

}  // namespace

SeedOutcome run_method_seed(const std::string& method, std::uint64_t seed, Mode mode,
                            const data::TaskStream& stream) {
    require(is_registered(method), "unknown method: " + method);
    SeedOutcome out;
    out.seed = seed;
    const auto t0 = std::chrono::steady_clock::now();
    const SeedContext probe_seeds(SeedContext(seed).derive("probe"));

    try {
        const backbones::BackboneSpec spec = backbone_for(method, stream);
        if (method == "cflow") {
            cflow::CFlowConfig cfg = cflow_config(mode, seed);
            auto result = cflow::meta_train_cflow(cfg, stream, spec);
            out.acc_matrix = result.acc_matrix;
            auto subject = cflow::make_cflow_probe_subject(result.state, cfg, stream, spec);
            out.probe = diag::run_probe_suite(*subject, probe_seeds);
        } else if (method.rfind("hypernet_", 0) == 0 || method.rfind("capsule_", 0) == 0) {
            hypernet::HyperNetConfig cfg = hypernet_config(method, mode, seed);
            auto result = hypernet::joint_train_hypernet(cfg, stream, spec);
            out.acc_matrix = result.acc_matrix;
            auto subject = hypernet::make_hypernet_probe_subject(result.state, stream, spec);
            out.probe = diag::run_probe_suite(*subject, probe_seeds);
            out.effective_rank = diag::effective_rank(result.state.V.cast<double>());
            out.probe.effective_rank = out.effective_rank;
        } else {
            trainers::SeqTrainConfig cfg;
            cfg.method = trainers::method_from_string(method);
            cfg.epochs_per_task = mode == Mode::Full ? 5 : 2;
            cfg.seed = seed;
            auto result = trainers::train_sequential(cfg, stream, spec);
            out.acc_matrix = result.acc_matrix;
            auto subject = trainers::make_seq_probe_subject(spec, result.final_theta, stream);
            out.probe = diag::run_probe_suite(*subject, probe_seeds);
        }
        out.acc = diag::avg_accuracy(out.acc_matrix);
        out.fgt = stream.num_tasks() >= 2 ? diag::avg_forgetting(out.acc_matrix) : 0.0;
        out.bwt = stream.num_tasks() >= 2 ? diag::backward_transfer(out.acc_matrix) : 0.0;
    } catch (const std::exception& e) {
        out.failed = true;
        out.error = e.what();
    }
    out.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return out;
}

namespace {

std::string now_timestamp() {
    const auto now = std::chrono::system_clock::now();
    const std::time_t t = std::chrono::system_clock::to_time_t(now);
    std::tm tm{};
    localtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof(buf), "%Y%m%d_%H%M%S", &tm);
    return buf;
}

std::string methods_hash(const std::vector<std::string>& methods) {
    std::string joined;
    for (const auto& m : methods) {
        joined += m;
        joined += ',';
    }
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%08llx",
                  static_cast<unsigned long long>(fnv1a(joined) & 0xffffffffULL));
    return buf;
}

fs::path unique_run_dir(const std::string& root, const std::string& name) {
    fs::path dir = fs::path(root) / name;
    int suffix = 1;
    while (fs::exists(dir)) {
        dir = fs::path(root) / (name + "_" + std::to_string(suffix++));
    }
    return dir;
}

}  // namespace

std::string resolve_output_root(const std::string& cli_value) {
    if (!cli_value.empty()) return cli_value;
    if (const char* env = std::getenv("CCL_RESULTS_DIR"); env && *env) return env;
    return "results";
}

ResultRecord run_experiment(const ExperimentConfig& config) {
    require(!config.seeds.empty(), "run_experiment: seed list is empty");
    require(!config.methods.empty(), "run_experiment: method list is empty");
    for (const auto& m : config.methods) {
        require(is_registered(m), "unknown method: " + m);  // reject before any training
    }
    require(config.device == "auto" || config.device == "cpu" || config.device == "accelerator",
            "run_experiment: device must be auto|cpu|accelerator");

    ResultRecord record;
    record.config = config;
    record.config.data_dir = data::resolve_data_dir(config.data_dir);
    record.config.output_root = resolve_output_root(config.output_root);
    if (record.config.train_per_class == 0)
        record.config.train_per_class = default_train_per_class(config.mode);
    if (record.config.test_per_class == 0)
        record.config.test_per_class = default_test_per_class(config.mode);
    record.timestamp = now_timestamp();

    const auto t0 = std::chrono::steady_clock::now();
    for (const auto& method : record.config.methods) {
        MethodOutcome mo;
        mo.method = method;
        for (std::uint64_t seed : record.config.seeds) {
            data::TaskStream stream =
                data::build_stream(record.config.benchmark, seed, record.config.train_per_class,
                                   record.config.test_per_class, record.config.data_dir);
            SeedOutcome so = run_method_seed(method, seed, record.config.mode, stream);
            if (so.failed) {
                std::cerr << "[ccl] seed " << seed << " of " << method
                          << " failed: " << so.error << "\n";
            }
            mo.seeds.push_back(std::move(so));
        }
        recompute_aggregates(mo);
        record.methods.push_back(std::move(mo));
    }
    record.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

    // persist
    const std::string name = record.config.benchmark + "_" + methods_hash(record.config.methods) +
                             "_" + record.timestamp;
    const fs::path dir = unique_run_dir(record.config.output_root, name);
    fs::create_directories(dir);
    record.run_dir = dir.string();

    {
        std::ofstream out(dir / "results.json");
        out << record_to_json(record).dump(2) << "\n";
    }
    {
        std::ofstream out(dir / "command.txt");
        if (!record.config.command_line.empty()) {
            out << record.config.command_line << "\n";
        } else {
            out << "ccl_bench --benchmark " << record.config.benchmark << " --methods ";
            for (std::size_t i = 0; i < record.config.methods.size(); ++i) {
                out << record.config.methods[i]
                    << (i + 1 < record.config.methods.size() ? "," : "");
            }
            out << " --seeds ";
            for (std::size_t i = 0; i < record.config.seeds.size(); ++i) {
                out << record.config.seeds[i] << (i + 1 < record.config.seeds.size() ? "," : "");
            }
            if (record.config.mode == Mode::Quick) out << " --quick";
            out << "\n";
        }
    }
    {
        std::ofstream out(dir / "summary.csv");
        out << summary_csv(record);
    }
    emit_plots(record, dir.string());
    std::cout << summary_table(record);
    std::cout << "[ccl] results written to " << dir.string() << "\n";
    return record;
}

}  // namespace ccl::harness
