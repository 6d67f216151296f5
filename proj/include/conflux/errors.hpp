// Copyright 2026 The Conflux Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>

namespace conflux {

/// Base of every error the toolkit throws.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Bad input: malformed files, violated preconditions, misaligned checkpoints,
/// invalid configuration. The CLI maps this to exit code 2.
class ValidationError : public Error {
public:
    using Error::Error;
};

/// Checkpoint file does not conform to the on-disk format.
class FormatError : public ValidationError {
public:
    using ValidationError::ValidationError;
};

/// Filesystem or network failure.
class IoError : public Error {
public:
    using Error::Error;
};

/// An experiment precondition did not hold (e.g. the attack never took).
/// The CLI maps this to exit code 3.
class GateFailure : public Error {
public:
    using Error::Error;
};

} // namespace conflux
