#include "afl/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

#include "afl/errors.hpp"
#include "afl/rng.hpp"

namespace afl {

Dataset gen_synthetic_logreg(int64_t n, int d, int classes, double separation, uint64_t seed) {
    if (n < classes) {
        throw ConfigError("need at least one sample per class: n=" + std::to_string(n) +
                          " < C=" + std::to_string(classes));
    }
    if (d < 1 || classes < 2 || separation <= 0.0) {
        throw ConfigError("synthetic dataset requires d >= 1, C >= 2, separation > 0");
    }
    Rng rng = substream(seed, 0, 0, StreamTag::Data);

    // Cluster means of norm `separation`, evenly spaced on a ring in the
    // first two coordinates with a seed-dependent phase; d = 1 alternates
    // the two endpoints.
    std::vector<double> means(static_cast<size_t>(classes) * d, 0.0);
    const double phase = rng.next_double();
    for (int c = 0; c < classes; ++c) {
        if (d == 1) {
            means[c] = (c % 2 == 0 ? separation : -separation);
        } else {
            const double angle = 2.0 * 3.14159265358979323846 * (c + phase) / classes;
            means[c * d + 0] = separation * std::cos(angle);
            means[c * d + 1] = separation * std::sin(angle);
        }
    }

    Dataset ds;
    ds.n = n;
    ds.d = d;
    ds.classes = classes;
    ds.features.resize(static_cast<size_t>(n) * d);
    ds.labels.resize(n);
    for (int64_t i = 0; i < n; ++i) {
        const int c = static_cast<int>(i % classes);  // round-robin keeps classes balanced
        ds.labels[i] = c;
        for (int j = 0; j < d; ++j) {
            ds.features[i * d + j] = means[c * d + j] + rng.next_normal();
        }
    }
    return ds;
}

std::vector<Partition> partition_by_label(const Dataset& dataset, const PartitionPlan& plan) {
    if (plan.workers < 1) throw ConfigError("partition plan needs at least one worker");
    if (plan.classes_per_worker < 1 || plan.classes_per_worker > dataset.classes) {
        throw ConfigError("classes per worker must be in [1, " + std::to_string(dataset.classes) + "]");
    }
    if (plan.per_worker < 1) throw ConfigError("per-worker sample count must be positive");

    Rng rng = substream(plan.seed, 0, 0, StreamTag::Data);

    // Remaining (undrawn) sample indices per class.
    std::vector<std::vector<int64_t>> pools(dataset.classes);
    for (int64_t i = 0; i < dataset.n; ++i) pools[dataset.labels[i]].push_back(i);

    const int p = plan.classes_per_worker;
    std::vector<Partition> parts;
    parts.reserve(plan.workers);
    for (int w = 0; w < plan.workers; ++w) {
        // p classes uniformly without replacement (within this worker).
        std::vector<int32_t> all_classes(dataset.classes);
        for (int c = 0; c < dataset.classes; ++c) all_classes[c] = c;
        std::vector<int32_t> chosen(p);
        for (int j = 0; j < p; ++j) {
            const uint64_t pick = j + rng.next_below(static_cast<uint64_t>(dataset.classes - j));
            std::swap(all_classes[j], all_classes[pick]);
            chosen[j] = all_classes[j];
        }
        std::sort(chosen.begin(), chosen.end());

        Partition part;
        part.owner = w;
        part.classes_present = chosen;
        part.indices.reserve(plan.per_worker);

        // Evenly split the worker's quota across its chosen classes.
        for (int j = 0; j < p; ++j) {
            const int64_t quota = plan.per_worker / p + (j < plan.per_worker % p ? 1 : 0);
            auto& pool = pools[chosen[j]];
            if (static_cast<int64_t>(pool.size()) < quota) {
                throw PartitionError("worker " + std::to_string(w) + " starved: class " +
                                         std::to_string(chosen[j]) + " has " +
                                         std::to_string(pool.size()) + " samples left, needs " +
                                         std::to_string(quota),
                                     w);
            }
            for (int64_t k = 0; k < quota; ++k) {
                const uint64_t pick = rng.next_below(pool.size());
                part.indices.push_back(pool[pick]);
                pool[pick] = pool.back();
                pool.pop_back();
            }
        }
        std::sort(part.indices.begin(), part.indices.end());
        parts.push_back(std::move(part));
    }
    return parts;
}

namespace {

uint32_t read_be_u32(std::ifstream& in, const std::string& path) {
    unsigned char buf[4];
    if (!in.read(reinterpret_cast<char*>(buf), 4)) {
        throw FormatError(path + ": truncated IDX header");
    }
    return (uint32_t(buf[0]) << 24) | (uint32_t(buf[1]) << 16) | (uint32_t(buf[2]) << 8) | uint32_t(buf[3]);
}

}  // namespace

Dataset load_idx(const std::string& images_path, const std::string& labels_path) {
    std::ifstream img(images_path, std::ios::binary);
    if (!img) throw FormatError("cannot open " + images_path);
    if (const uint32_t magic = read_be_u32(img, images_path); magic != 0x00000803u) {
        throw FormatError(images_path + ": bad IDX image magic");
    }
    const uint32_t n = read_be_u32(img, images_path);
    const uint32_t rows = read_be_u32(img, images_path);
    const uint32_t cols = read_be_u32(img, images_path);
    const size_t pixel_count = size_t(n) * rows * cols;
    std::vector<unsigned char> pixels(pixel_count);
    if (!img.read(reinterpret_cast<char*>(pixels.data()), static_cast<std::streamsize>(pixel_count))) {
        throw FormatError(images_path + ": truncated IDX image payload");
    }

    std::ifstream lbl(labels_path, std::ios::binary);
    if (!lbl) throw FormatError("cannot open " + labels_path);
    if (const uint32_t magic = read_be_u32(lbl, labels_path); magic != 0x00000801u) {
        throw FormatError(labels_path + ": bad IDX label magic");
    }
    const uint32_t n_labels = read_be_u32(lbl, labels_path);
    if (n_labels != n) {
        throw FormatError("IDX image/label count mismatch: " + std::to_string(n) + " vs " +
                          std::to_string(n_labels));
    }
    std::vector<unsigned char> raw_labels(n_labels);
    if (!lbl.read(reinterpret_cast<char*>(raw_labels.data()), static_cast<std::streamsize>(n_labels))) {
        throw FormatError(labels_path + ": truncated IDX label payload");
    }

    Dataset ds;
    ds.n = n;
    ds.d = static_cast<int>(rows * cols);
    ds.features.resize(pixel_count);
    for (size_t i = 0; i < pixel_count; ++i) ds.features[i] = pixels[i] / 255.0;
    ds.labels.resize(n);
    int32_t max_label = 0;
    for (uint32_t i = 0; i < n; ++i) {
        ds.labels[i] = raw_labels[i];
        max_label = std::max(max_label, ds.labels[i]);
    }
    ds.classes = max_label + 1;
    return ds;
}

}  // namespace afl
