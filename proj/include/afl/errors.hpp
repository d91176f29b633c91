#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace afl {

// Misconfiguration: bad keys, bad dimensions, invalid parameter ranges.
struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// Dataset-level problems: empty partitions, batch larger than partition.
struct DataError : std::runtime_error {
    explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};

// Malformed external files (IDX ingest).
struct FormatError : std::runtime_error {
    explicit FormatError(const std::string& msg) : std::runtime_error(msg) {}
};

// Infeasible partition plan; names the starved worker.
struct PartitionError : std::runtime_error {
    PartitionError(const std::string& msg, int worker)
        : std::runtime_error(msg), worker_id(worker) {}
    int worker_id;
};

// An update older than the configured maximum delay reached an aggregate.
struct BoundedDelayError : std::runtime_error {
    explicit BoundedDelayError(const std::string& msg) : std::runtime_error(msg) {}
};

// AFA-CS aggregation requested before every memory slot holds an update.
struct WarmStartError : std::runtime_error {
    WarmStartError(const std::string& msg, int worker)
        : std::runtime_error(msg), worker_id(worker) {}
    int worker_id;
};

// A nonfinite iterate appeared during a local update.
struct DivergenceError : std::runtime_error {
    DivergenceError(const std::string& msg, int step)
        : std::runtime_error(msg), step_index(step) {}
    int step_index;
};

struct IoError : std::runtime_error {
    explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace afl
