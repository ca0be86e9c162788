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

// Cyclic two-stage clock. Steps are 1-based. With stage length us, step t is
// in Stage I iff ceil(t/us) is odd; the first step of every Stage II is a
// mask-refresh step. A cycle is one Stage I followed by one Stage II.
//
// When ms is not a multiple of 2*us the run simply continues to t = ms: a
// trailing partial Stage I accumulates into nothing, and a trailing partial
// Stage II still refreshes at its first step and keeps that mask.

#pragma once

#include <cmath>
#include <cstddef>
#include <optional>
#include <string>

#include "subnet_tune/errors.hpp"

namespace subnet_tune {

enum class Stage { none, one, two };

inline const char* to_string(Stage s) {
    switch (s) {
        case Stage::none: return "-";
        case Stage::one: return "I";
        case Stage::two: return "II";
    }
    return "?";
}

struct ScheduleEvents {
    std::size_t step = 0;
    std::optional<std::size_t> entered_cycle;
    std::optional<Stage> entered_stage;
    bool refresh_mask = false;

    friend bool operator==(const ScheduleEvents&, const ScheduleEvents&) = default;
};

class StageSchedule {
public:
    StageSchedule() = default;

    /// us = max(1, round(ms * ur)); n = floor(ms / (2 us)).
    StageSchedule(std::size_t total_steps, double update_ratio) : ms_(total_steps), ur_(update_ratio) {
        if (total_steps == 0) throw ScheduleError("schedule needs at least one step");
        if (!(update_ratio > 0.0 && update_ratio < 1.0))
            throw DomainError("update ratio " + std::to_string(update_ratio) + " outside (0,1)");
        const double raw = std::round(static_cast<double>(total_steps) * update_ratio);
        us_ = raw < 1.0 ? 1 : static_cast<std::size_t>(raw);
        n_ = ms_ / (2 * us_);
    }

    [[nodiscard]] std::size_t total_steps() const noexcept { return ms_; }
    [[nodiscard]] double update_ratio() const noexcept { return ur_; }
    [[nodiscard]] std::size_t stage_length() const noexcept { return us_; }
    [[nodiscard]] std::size_t full_cycles() const noexcept { return n_; }
    /// Current step; 0 before the first advance().
    [[nodiscard]] std::size_t step() const noexcept { return t_; }
    [[nodiscard]] std::size_t cycle() const { return cycle_of(t_); }
    [[nodiscard]] bool finished() const noexcept { return t_ >= ms_; }

    [[nodiscard]] Stage stage_of(std::size_t t) const {
        check(t);
        return ceil_div(t, us_) % 2 == 1 ? Stage::one : Stage::two;
    }

    [[nodiscard]] bool is_refresh_step(std::size_t t) const {
        check(t);
        return ceil_div(t, us_) % 2 == 0 && (t - 1) % us_ == 0;
    }

    [[nodiscard]] std::size_t cycle_of(std::size_t t) const {
        check(t);
        return (t - 1) / (2 * us_);
    }

    [[nodiscard]] Stage stage() const { return stage_of(t_); }

    /// Moves to the next step and reports what begins there.
    ScheduleEvents advance() {
        if (t_ >= ms_) throw ScheduleError("cannot advance past step " + std::to_string(ms_));
        ++t_;
        ScheduleEvents ev;
        ev.step = t_;
        if ((t_ - 1) % (2 * us_) == 0) ev.entered_cycle = cycle_of(t_);
        if ((t_ - 1) % us_ == 0) ev.entered_stage = stage_of(t_);
        ev.refresh_mask = is_refresh_step(t_);
        return ev;
    }

private:
    static std::size_t ceil_div(std::size_t a, std::size_t b) { return (a + b - 1) / b; }

    void check(std::size_t t) const {
        if (t < 1 || t > ms_)
            throw ScheduleError("step " + std::to_string(t) + " outside [1, " + std::to_string(ms_) + "]");
    }

    std::size_t ms_ = 0;
    double ur_ = 0.0;
    std::size_t us_ = 1;
    std::size_t n_ = 0;
    std::size_t t_ = 0;
};

}  // namespace subnet_tune
