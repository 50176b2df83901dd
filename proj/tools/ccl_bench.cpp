#include "ccl/harness/results.hpp"
#include "ccl/harness/runner.hpp"

#include <CLI11.hpp>

#include <iostream>
#include <sstream>

namespace {

std::vector<std::string> split_csv(const std::string& csv) {
    std::vector<std::string> out;
    std::stringstream ss(csv);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Continual-learning benchmark harness with context-capacity diagnostics"};

    bool quick = false;
    std::string seeds_csv = "0,1,2,3";
    std::string benchmark = "split";
    std::string methods_csv =
        "naive_sgd,ewc,si,lwf,replay,cflow,hypernet_oracle,hypernet_learned";
    std::string device = "auto";
    std::string out_dir;
    std::string data_dir;
    int train_per_class = 0;
    int test_per_class = 0;
    bool list_methods = false;

    app.add_flag("--quick", quick,
                 "Quick mode: 2 epochs, 200 train samples/class, reduced meta-training episodes "
                 "(non-evidentiary)");
    app.add_option("--seeds", seeds_csv, "Comma-separated seed list (default 0,1,2,3)");
    app.add_option("--benchmark", benchmark, "split | permuted | cifar10");
    app.add_option("--methods", methods_csv, "Comma-separated method subset");
    app.add_option("--device", device, "auto | cpu | accelerator (runs on cpu)");
    app.add_option("--out", out_dir, "Results root (default: CCL_RESULTS_DIR or ./results)");
    app.add_option("--data-dir", data_dir, "Dataset cache root (default: CCL_DATA_DIR or ./data)");
    app.add_option("--train-per-class", train_per_class,
                   "Override train samples per class (0 = mode default)");
    app.add_option("--test-per-class", test_per_class,
                   "Override test samples per class (0 = mode default)");
    app.add_flag("--list-methods", list_methods, "List registered methods and exit");

    CLI11_PARSE(app, argc, argv);

    if (list_methods) {
        for (const auto& m : ccl::harness::registered_methods()) std::cout << m << "\n";
        return 0;
    }

    ccl::harness::ExperimentConfig cfg;
    if (benchmark == "split" || benchmark == "split_mnist") {
        cfg.benchmark = "split_mnist";
    } else if (benchmark == "permuted" || benchmark == "permuted_mnist") {
        cfg.benchmark = "permuted_mnist";
    } else if (benchmark == "cifar10" || benchmark == "split_cifar10") {
        cfg.benchmark = "split_cifar10";
    } else {
        std::cerr << "unknown benchmark: " << benchmark << "\n";
        return 1;
    }
    cfg.methods = split_csv(methods_csv);
    cfg.seeds.clear();
    for (const auto& s : split_csv(seeds_csv)) cfg.seeds.push_back(std::stoull(s));
    cfg.mode = quick ? ccl::harness::Mode::Quick : ccl::harness::Mode::Full;
    cfg.device = device;
    cfg.output_root = out_dir;
    cfg.data_dir = data_dir;
    cfg.train_per_class = train_per_class;
    cfg.test_per_class = test_per_class;
    {
        std::ostringstream cmd;
        for (int i = 0; i < argc; ++i) cmd << (i ? " " : "") << argv[i];
        cfg.command_line = cmd.str();
    }

    try {
        ccl::harness::run_experiment(cfg);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
