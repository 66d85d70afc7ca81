#pragma once

#include <stdexcept>
#include <string>

namespace mmfuse {

/// Base class for every error raised by the toolkit.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Shape or dimension disagreement between operands.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// A forward or backward computation produced NaN/Inf, or an op was asked to
/// evaluate outside its domain.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Misuse of the computation graph (backward on a consumed graph, non-scalar
/// root, ...).
class GraphError : public Error {
 public:
  using Error::Error;
};

/// Invalid configuration value.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Checkpoint does not belong to the supplied configuration.
class CheckpointError : public Error {
 public:
  using Error::Error;
};

/// A minibatch too small to form negative (marginal) pairs.
class InsufficientBatchError : public Error {
 public:
  using Error::Error;
};

enum class DataErrc {
  io,
  bad_magic,
  version_mismatch,
  truncated,
  dim_mismatch,
  invalid_record,
  bad_manifest,
  duplicate_id,
  missing_file,
};

const char* to_string(DataErrc code);

/// Errors raised while reading or validating embedding containers and
/// manifests. Each failure mode carries a distinct code.
class DataError : public Error {
 public:
  DataError(DataErrc code, const std::string& what)
      : Error(std::string(to_string(code)) + ": " + what), code_(code) {}

  DataErrc code() const noexcept { return code_; }

 private:
  DataErrc code_;
};

}  // namespace mmfuse
