// Copyright (C) 2026 The dpef Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>

namespace dpef {

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Tensor extents do not line up for the requested operation.
class DimensionError : public Error {
public:
    using Error::Error;
};

class ConfigError : public Error {
public:
    using Error::Error;
};

/// Input is numerically degenerate (e.g. normalizing a zero row).
class DegenerateInputError : public Error {
public:
    using Error::Error;
};

/// NaN or Inf produced by an op; `op()` names the producer and `step()` the
/// training step, or -1 outside training.
class NonFiniteError : public Error {
public:
    explicit NonFiniteError(std::string op, long long step = -1)
        : Error("non-finite value produced by op '" + op + "'" +
                (step >= 0 ? " at training step " + std::to_string(step) : std::string())),
          op_(std::move(op)), step_(step) {}
    const std::string& op() const noexcept { return op_; }
    long long step() const noexcept { return step_; }

private:
    std::string op_;
    long long step_ = -1;
};

class DataError : public Error {
public:
    using Error::Error;
};

class IndexError : public Error {
public:
    using Error::Error;
};

class SelectionTooSmallError : public Error {
public:
    using Error::Error;
};

/// A required component (for example one part feature) is missing.
class AssemblyError : public Error {
public:
    using Error::Error;
};

/// Checkpoint header or payload could not be decoded.
class FormatError : public Error {
public:
    using Error::Error;
};

}  // namespace dpef
