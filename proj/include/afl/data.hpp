#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace afl {

// Row-major feature matrix with integer class labels.
struct Dataset {
    int64_t n = 0;
    int d = 0;
    int classes = 0;
    std::vector<double> features;  // n * d
    std::vector<int32_t> labels;   // n

    std::span<const double> row(int64_t i) const {
        return {features.data() + i * d, static_cast<size_t>(d)};
    }
};

// One worker's view into a Dataset.
struct Partition {
    int owner = 0;
    std::vector<int64_t> indices;
    std::vector<int32_t> classes_present;  // sorted, distinct
};

struct PartitionPlan {
    int workers = 1;             // M
    int classes_per_worker = 1;  // p
    int64_t per_worker = 0;      // equal sample count per worker
    uint64_t seed = 0;
};

// n points from C Gaussian clusters whose means have norm `separation`;
// label = cluster id, assigned round-robin so every class is populated.
Dataset gen_synthetic_logreg(int64_t n, int d, int classes, double separation, uint64_t seed);

// Label-skew split: each worker draws p classes uniformly without replacement,
// then its samples evenly across those classes, disjointly from other workers.
std::vector<Partition> partition_by_label(const Dataset& dataset, const PartitionPlan& plan);

// IDX-format (MNIST distribution) reader; pixels scaled to [0, 1].
Dataset load_idx(const std::string& images_path, const std::string& labels_path);

}  // namespace afl
