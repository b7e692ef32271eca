// Copyright 2026 the tdse-toolkit authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <stdexcept>
#include <string>

namespace tdse {

/// Base class of every error thrown by the library.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

/// Invalid experiment configuration or CLI arguments (exit code 1).
class ConfigError : public Error {
public:
    using Error::Error;
};

/// Mismatched operator/state dimensions.
class DimensionError : public Error {
public:
    using Error::Error;
};

/// Eigensolver failure or reconstruction residual beyond tolerance.
class EigensolverError : public Error {
public:
    EigensolverError(const std::string& msg, double residual)
        : Error(msg), residual_(residual) {}
    double residual() const { return residual_; }

private:
    double residual_;
};

/// Field value outside its declared bounds beyond the grid's reach.
class HypothesisViolation : public Error {
public:
    using Error::Error;
};

/// Field evaluated outside [0, T].
class HorizonError : public Error {
public:
    using Error::Error;
};

/// Malformed matrix/vector/CSV text input.
class ParseError : public Error {
public:
    using Error::Error;
};

/// Filesystem failures.
class IoError : public Error {
public:
    using Error::Error;
};

/// Reference solver did not reach its tolerance within the step cap.
class ReferenceError : public Error {
public:
    ReferenceError(const std::string& msg, double gap) : Error(msg), gap_(gap) {}
    double gap() const { return gap_; }

private:
    double gap_;
};

}  // namespace tdse
