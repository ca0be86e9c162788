// Copyright 2026 The subnet-tune Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <stdexcept>
#include <string>

namespace subnet_tune {

/// Operand shapes do not line up.
struct DimensionError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

/// An argument lies outside the domain of the operation (probability not in
/// [0,1], division by zero, negative standard deviation, ...).
struct DomainError : std::domain_error {
    using std::domain_error::domain_error;
};

/// A computation produced NaN or Inf.
struct NonFiniteError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Step index outside the schedule, or advancing past the end.
struct ScheduleError : std::out_of_range {
    using std::out_of_range::out_of_range;
};

/// A training run could not continue (non-finite update, divergence).
struct TrainingAborted : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Malformed or inconsistent configuration.
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

}  // namespace subnet_tune
