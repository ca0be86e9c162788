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

// Umbrella header for the library (everything except the CLI).

#pragma once

#include "subnet_tune/checkpoint.hpp"
#include "subnet_tune/config_io.hpp"
#include "subnet_tune/errors.hpp"
#include "subnet_tune/experiment.hpp"
#include "subnet_tune/gradcheck.hpp"
#include "subnet_tune/metrics.hpp"
#include "subnet_tune/model.hpp"
#include "subnet_tune/optimizer.hpp"
#include "subnet_tune/report_io.hpp"
#include "subnet_tune/rng.hpp"
#include "subnet_tune/schedule.hpp"
#include "subnet_tune/selection.hpp"
#include "subnet_tune/strategy.hpp"
#include "subnet_tune/tasks.hpp"
#include "subnet_tune/tensor.hpp"
#include "subnet_tune/trainer.hpp"
