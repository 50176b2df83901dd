#include "ccl/data/taskstream.hpp"

#include "ccl/rng.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <numeric>

namespace fs = std::filesystem;

namespace ccl::data {
namespace {

std::uint32_t read_be32(std::istream& in) {
    unsigned char b[4];
    in.read(reinterpret_cast<char*>(b), 4);
    return (std::uint32_t(b[0]) << 24) | (std::uint32_t(b[1]) << 16) | (std::uint32_t(b[2]) << 8) |
           std::uint32_t(b[3]);
}

std::vector<unsigned char> read_idx_labels(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    require(bool(in), "cannot open label file: " + path.string());
    require(read_be32(in) == 0x00000801u, "bad IDX label magic: " + path.string());
    const std::uint32_t n = read_be32(in);
    std::vector<unsigned char> labels(n);
    in.read(reinterpret_cast<char*>(labels.data()), n);
    require(bool(in), "truncated label file: " + path.string());
    return labels;
}

void read_idx_images(const fs::path& path, Mat& out, int col_offset) {
    std::ifstream in(path, std::ios::binary);
    require(bool(in), "cannot open image file: " + path.string());
    require(read_be32(in) == 0x00000803u, "bad IDX image magic: " + path.string());
    const std::uint32_t n = read_be32(in);
    const std::uint32_t rows = read_be32(in), cols = read_be32(in);
    require(rows == 28 && cols == 28, "unexpected IDX image size");
    std::vector<unsigned char> buf(rows * cols);
    for (std::uint32_t i = 0; i < n; ++i) {
        in.read(reinterpret_cast<char*>(buf.data()), buf.size());
        require(bool(in), "truncated image file: " + path.string());
        for (std::uint32_t p = 0; p < rows * cols; ++p) {
            out(p, col_offset + i) = Real(buf[p]) / Real(255);
        }
    }
}

std::uint32_t idx_image_count(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    require(bool(in), "cannot open image file: " + path.string());
    require(read_be32(in) == 0x00000803u, "bad IDX image magic: " + path.string());
    return read_be32(in);
}

}  // namespace

LabeledPool load_idx_pool(const std::string& dir) {
    const fs::path root(dir);
    std::vector<std::pair<fs::path, fs::path>> pairs;
    auto add_if_present = [&](const char* img, const char* lab) {
        if (fs::exists(root / img) && fs::exists(root / lab)) {
            pairs.emplace_back(root / img, root / lab);
        }
    };
    add_if_present("train-images-idx3-ubyte", "train-labels-idx1-ubyte");
    add_if_present("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte");
    if (pairs.empty()) {
        add_if_present("mnist-images-idx3-ubyte", "mnist-labels-idx1-ubyte");
    }
    require(!pairs.empty(), "MNIST dataset unavailable in '" + dir +
                                "' and downloading is disabled; run tools/fetch_mnist.py");

    std::size_t total = 0;
    for (const auto& [img, lab] : pairs) total += idx_image_count(img);

    LabeledPool pool;
    pool.shape = {1, 28, 28};
    pool.x.resize(784, static_cast<Eigen::Index>(total));
    pool.y.reserve(total);
    int offset = 0;
    for (const auto& [img, lab] : pairs) {
        auto labels = read_idx_labels(lab);
        read_idx_images(img, pool.x, offset);
        for (unsigned char l : labels) pool.y.push_back(int(l));
        offset += static_cast<int>(labels.size());
    }
    require(pool.y.size() == total, "IDX image/label count mismatch in " + dir);
    return pool;
}

LabeledPool load_cifar10_pool(const std::string& dir) {
    const fs::path root(dir);
    std::vector<fs::path> files;
    for (int i = 1; i <= 5; ++i) {
        fs::path p = root / ("data_batch_" + std::to_string(i) + ".bin");
        if (fs::exists(p)) files.push_back(p);
    }
    if (fs::exists(root / "test_batch.bin")) files.push_back(root / "test_batch.bin");
    require(!files.empty(), "CIFAR-10 dataset unavailable in '" + dir +
                                "' and downloading is disabled; place the binary batches there");

    constexpr int kRecord = 1 + 3072;
    std::size_t total = 0;
    for (const auto& f : files) {
        const auto sz = fs::file_size(f);
        require(sz % kRecord == 0, "corrupt CIFAR batch: " + f.string());
        total += sz / kRecord;
    }
    LabeledPool pool;
    pool.shape = {3, 32, 32};
    pool.x.resize(3072, static_cast<Eigen::Index>(total));
    pool.y.reserve(total);
    std::vector<unsigned char> rec(kRecord);
    Eigen::Index col = 0;
    for (const auto& f : files) {
        std::ifstream in(f, std::ios::binary);
        while (in.read(reinterpret_cast<char*>(rec.data()), kRecord)) {
            pool.y.push_back(int(rec[0]));
            for (int p = 0; p < 3072; ++p) pool.x(p, col) = Real(rec[1 + p]) / Real(255);
            ++col;
        }
    }
    return pool;
}

namespace {

constexpr int kNumTasks = 5;

// First-N draw from a per-class seeded shuffle; train and test are disjoint
// by construction (consecutive slices of one shuffle).
struct ClassDraw {
    std::vector<int> train_idx, test_idx;
};

ClassDraw draw_class(const std::vector<int>& pool_indices, std::uint64_t seed, int cls,
                     int train_n, int test_n) {
    require(static_cast<int>(pool_indices.size()) >= train_n + test_n,
            "budget exceeds available samples for class " + std::to_string(cls) + " (" +
                std::to_string(pool_indices.size()) + " available, " +
                std::to_string(train_n + test_n) + " requested)");
    std::vector<int> shuffled = pool_indices;
    SeedContext ctx(seed);
    auto rng = ctx.rng("class_shuffle", static_cast<std::uint64_t>(cls));
    std::shuffle(shuffled.begin(), shuffled.end(), rng);
    ClassDraw d;
    d.train_idx.assign(shuffled.begin(), shuffled.begin() + train_n);
    d.test_idx.assign(shuffled.begin() + train_n, shuffled.begin() + train_n + test_n);
    return d;
}

void gather(const LabeledPool& pool, const std::vector<int>& idx, Mat& x, std::vector<int>& y) {
    const Eigen::Index start = x.cols();
    x.conservativeResize(Eigen::NoChange, start + static_cast<Eigen::Index>(idx.size()));
    for (std::size_t i = 0; i < idx.size(); ++i) {
        x.col(start + static_cast<Eigen::Index>(i)) = pool.x.col(idx[i]);
        y.push_back(pool.y[idx[i]]);
    }
}

}  // namespace

TaskStream build_stream_from_pool(const std::string& benchmark_name, std::uint64_t seed,
                                  int train_per_class, int test_per_class,
                                  const LabeledPool& pool) {
    require(train_per_class >= 1 && test_per_class >= 1, "budgets must be >= 1");
    require(benchmark_name == "split_mnist" || benchmark_name == "permuted_mnist" ||
                benchmark_name == "split_cifar10",
            "unknown benchmark name: " + benchmark_name);

    const int num_classes = 10;
    std::vector<std::vector<int>> by_class(num_classes);
    for (std::size_t i = 0; i < pool.y.size(); ++i) {
        require(pool.y[i] >= 0 && pool.y[i] < num_classes, "label out of range in pool");
        by_class[pool.y[i]].push_back(static_cast<int>(i));
    }

    TaskStream stream;
    stream.benchmark_name = benchmark_name;
    stream.input_shape = pool.shape;
    stream.num_global_classes = num_classes;
    stream.train_per_class = train_per_class;
    stream.test_per_class = test_per_class;
    stream.seed = seed;

    std::vector<ClassDraw> draws(num_classes);
    for (int c = 0; c < num_classes; ++c) {
        draws[c] = draw_class(by_class[c], seed, c, train_per_class, test_per_class);
    }

    if (benchmark_name == "permuted_mnist") {
        const int dim = pool.shape.dim();
        for (int k = 0; k < kNumTasks; ++k) {
            TaskSpec spec;
            spec.task_index = k;
            spec.class_labels.resize(num_classes);
            std::iota(spec.class_labels.begin(), spec.class_labels.end(), 0);
            std::vector<int> perm(dim);
            std::iota(perm.begin(), perm.end(), 0);
            SeedContext ctx(seed);
            auto rng = ctx.rng("pixel_permutation", static_cast<std::uint64_t>(k));
            std::shuffle(perm.begin(), perm.end(), rng);
            spec.permutation = perm;

            TaskData td;
            td.train_x.resize(dim, 0);
            td.test_x.resize(dim, 0);
            for (int c = 0; c < num_classes; ++c) {
                gather(pool, draws[c].train_idx, td.train_x, td.train_y);
                gather(pool, draws[c].test_idx, td.test_x, td.test_y);
            }
            auto apply_perm = [&](Mat& x) {
                Mat permuted(x.rows(), x.cols());
                for (int p = 0; p < dim; ++p) permuted.row(p) = x.row(perm[p]);
                x = std::move(permuted);
            };
            apply_perm(td.train_x);
            apply_perm(td.test_x);
            stream.tasks.push_back(std::move(spec));
            stream.data.push_back(std::move(td));
        }
        return stream;
    }

    // split benchmarks: classes {0,1},{2,3},{4,5},{6,7},{8,9}
    for (int k = 0; k < kNumTasks; ++k) {
        TaskSpec spec;
        spec.task_index = k;
        spec.class_labels = {2 * k, 2 * k + 1};
        TaskData td;
        td.train_x.resize(pool.shape.dim(), 0);
        td.test_x.resize(pool.shape.dim(), 0);
        for (int c : spec.class_labels) {
            gather(pool, draws[c].train_idx, td.train_x, td.train_y);
            gather(pool, draws[c].test_idx, td.test_x, td.test_y);
        }
        stream.tasks.push_back(std::move(spec));
        stream.data.push_back(std::move(td));
    }
    return stream;
}

TaskStream build_stream(const std::string& benchmark_name, std::uint64_t seed, int train_per_class,
                        int test_per_class, const std::string& data_dir) {
    require(benchmark_name == "split_mnist" || benchmark_name == "permuted_mnist" ||
                benchmark_name == "split_cifar10",
            "unknown benchmark name: " + benchmark_name);
    const fs::path root(data_dir);
    LabeledPool pool = (benchmark_name == "split_cifar10")
                           ? load_cifar10_pool((root / "cifar10").string())
                           : load_idx_pool((root / "mnist").string());
    return build_stream_from_pool(benchmark_name, seed, train_per_class, test_per_class, pool);
}

double chance_accuracy(const TaskStream& stream) {
    require(stream.num_global_classes >= 1, "stream not built");
    return 1.0 / static_cast<double>(stream.num_global_classes);
}

std::uint64_t stream_content_hash(const TaskStream& stream) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    auto mix = [&h](const void* data, std::size_t bytes) {
        const auto* p = static_cast<const unsigned char*>(data);
        for (std::size_t i = 0; i < bytes; ++i) {
            h ^= p[i];
            h *= 0x100000001b3ULL;
        }
    };
    for (const auto& td : stream.data) {
        mix(td.train_x.data(), sizeof(Real) * td.train_x.size());
        mix(td.train_y.data(), sizeof(int) * td.train_y.size());
        mix(td.test_x.data(), sizeof(Real) * td.test_x.size());
        mix(td.test_y.data(), sizeof(int) * td.test_y.size());
    }
    return h;
}

nlohmann::json stream_manifest(const TaskStream& stream) {
    nlohmann::json tasks = nlohmann::json::array();
    for (const auto& t : stream.tasks) {
        nlohmann::json jt;
        jt["task_index"] = t.task_index;
        jt["class_labels"] = t.class_labels;
        jt["permuted"] = t.permutation.has_value();
        tasks.push_back(jt);
    }
    return nlohmann::json{{"benchmark", stream.benchmark_name},
                          {"seed", stream.seed},
                          {"train_per_class", stream.train_per_class},
                          {"test_per_class", stream.test_per_class},
                          {"num_global_classes", stream.num_global_classes},
                          {"content_hash", stream_content_hash(stream)},
                          {"tasks", tasks}};
}

std::string resolve_data_dir(const std::string& cli_value) {
    if (!cli_value.empty()) return cli_value;
    if (const char* env = std::getenv("CCL_DATA_DIR"); env && *env) return env;
    return "data";
}

}  // namespace ccl::data
