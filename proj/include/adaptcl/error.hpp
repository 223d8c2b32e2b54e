#pragma once

#include <stdexcept>
#include <string>

namespace adaptcl {

// Base class for all library errors. Subclasses map onto CLI exit codes:
// ConfigError -> 2, everything else -> 1.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Shape/rank mismatch between tensor operands.
class DimensionError : public Error {
public:
    using Error::Error;
};

// Invalid configuration value or inconsistent hyperparameters.
class ConfigError : public Error {
public:
    using Error::Error;
};

// Violated API precondition (empty task, non-scalar loss, duplicate class id, ...).
class ContractError : public Error {
public:
    using Error::Error;
};

// Malformed or truncated weight/tensor file.
class FormatError : public Error {
public:
    using Error::Error;
};

// Unreadable or mis-sized input during raw-data ingestion.
class IngestError : public Error {
public:
    using Error::Error;
};

// Index outside a valid range (e.g. block index >= num_blocks).
class RangeError : public Error {
public:
    using Error::Error;
};

} // namespace adaptcl
