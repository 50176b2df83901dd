#pragma once

#include "ccl/backbones/backbone.hpp"
#include "ccl/common.hpp"

#include <nlohmann/json_fwd.hpp>

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace ccl::data {

struct TaskSpec {
    int task_index = 0;
    std::vector<int> class_labels;
    std::optional<std::vector<int>> permutation;  // pixel-index bijection (permuted benchmark)
};

struct TaskData {
    Mat train_x;  // input_dim x n, columns are samples in [0,1]
    std::vector<int> train_y;
    Mat test_x;
    std::vector<int> test_y;
};

struct TaskStream {
    std::string benchmark_name;
    backbones::InputShape input_shape;
    int num_global_classes = 10;
    int train_per_class = 0;
    int test_per_class = 0;
    std::uint64_t seed = 0;
    std::vector<TaskSpec> tasks;
    std::vector<TaskData> data;

    int num_tasks() const { return static_cast<int>(tasks.size()); }
};

// Raw labeled pool as loaded from the dataset cache.
struct LabeledPool {
    Mat x;  // input_dim x n
    std::vector<int> y;
    backbones::InputShape shape;
};

// IDX (MNIST-style) readers. Pixel values are normalized to [0,1].
LabeledPool load_idx_pool(const std::string& dir);
// CIFAR-10 binary batches (data_batch_*.bin / test_batch.bin), pooled.
LabeledPool load_cifar10_pool(const std::string& dir);

// Builds one of {split_mnist, permuted_mnist, split_cifar10}. Deterministic:
// the same (benchmark, seed, budgets) yields bit-identical tensors.
TaskStream build_stream(const std::string& benchmark_name, std::uint64_t seed, int train_per_class,
                        int test_per_class, const std::string& data_dir);

// Variant used by tests: build from an in-memory pool instead of the cache.
TaskStream build_stream_from_pool(const std::string& benchmark_name, std::uint64_t seed,
                                  int train_per_class, int test_per_class,
                                  const LabeledPool& pool);

double chance_accuracy(const TaskStream& stream);

// Content hash over every tensor and label in the stream (order-sensitive).
std::uint64_t stream_content_hash(const TaskStream& stream);

// Manifest recording benchmark, seed, budgets and per-task class lists.
nlohmann::json stream_manifest(const TaskStream& stream);

// Resolves the dataset cache directory: explicit flag > CCL_DATA_DIR > ./data.
std::string resolve_data_dir(const std::string& cli_value);

}  // namespace ccl::data
