#pragma once

#include <stdexcept>
#include <string>

namespace rsb {

/// Shape/dimension mismatch between operands.
class DimensionError : public std::invalid_argument {
public:
    explicit DimensionError(const std::string& what) : std::invalid_argument(what) {}
};

/// A precondition of an operation was violated by the caller.
class ContractError : public std::invalid_argument {
public:
    explicit ContractError(const std::string& what) : std::invalid_argument(what) {}
};

/// A batch had no samples in one treatment arm; the caller may resample.
class EmptyArmError : public ContractError {
public:
    explicit EmptyArmError(const std::string& what) : ContractError(what) {}
};

/// Malformed input file.
class ParseError : public std::runtime_error {
public:
    explicit ParseError(const std::string& what) : std::runtime_error(what) {}
};

/// Invalid or inconsistent experiment configuration.
class ConfigError : public std::runtime_error {
public:
    explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

/// Training produced a non-finite loss.
class TrainingDivergedError : public std::runtime_error {
public:
    explicit TrainingDivergedError(const std::string& what) : std::runtime_error(what) {}
};

} // namespace rsb
