#pragma once

#include <stdexcept>
#include <string>

namespace vflbed {

/// Invalid or inconsistent configuration (bad dimensions, unknown keys,
/// out-of-range hyperparameters). Raised before any training starts.
struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& what) : std::runtime_error("config error: " + what) {}
};

/// Malformed caller input to an otherwise valid component (shape mismatch,
/// non-finite values, empty batch).
struct InputError : std::runtime_error {
    explicit InputError(const std::string& what) : std::runtime_error("input error: " + what) {}
};

/// Filesystem / serialization failure (missing file, bad magic, short read).
struct IoError : std::runtime_error {
    explicit IoError(const std::string& what) : std::runtime_error("i/o error: " + what) {}
};

/// Raw data that does not match the expected schema. Carries the offending
/// column so ingestion failures are actionable.
struct IngestError : std::runtime_error {
    IngestError(const std::string& column, const std::string& what)
        : std::runtime_error("ingest error [column '" + column + "']: " + what), column_name(column) {}
    std::string column_name;
};

/// Training produced a non-finite loss; the run aborts and the caller decides
/// whether to retry with a different seed.
struct DivergedError : std::runtime_error {
    DivergedError(int epoch, int batch)
        : std::runtime_error("training diverged (non-finite loss) at epoch " + std::to_string(epoch) +
                             ", batch " + std::to_string(batch)),
          epoch(epoch), batch(batch) {}
    int epoch;
    int batch;
};

/// Broken internal invariant; indicates a bug, not a user mistake.
struct InternalError : std::logic_error {
    explicit InternalError(const std::string& what) : std::logic_error("internal error: " + what) {}
};

} // namespace vflbed
