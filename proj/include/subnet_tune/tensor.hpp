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

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "subnet_tune/errors.hpp"
#include "subnet_tune/rng.hpp"

namespace subnet_tune {

struct Shape {
    std::size_t rows = 0;
    std::size_t cols = 0;

    [[nodiscard]] std::size_t size() const noexcept { return rows * cols; }
    friend bool operator==(const Shape&, const Shape&) = default;
};

inline std::string to_string(Shape s) {
    return "(" + std::to_string(s.rows) + "x" + std::to_string(s.cols) + ")";
}

/// Dense row-major matrix of doubles.
class Matrix {
public:
    Matrix() = default;
    Matrix(std::size_t rows, std::size_t cols, double fill = 0.0) : shape_{rows, cols}, data_(rows * cols, fill) {}
    explicit Matrix(Shape s, double fill = 0.0) : Matrix(s.rows, s.cols, fill) {}

    Matrix(std::size_t rows, std::size_t cols, std::vector<double> data) : shape_{rows, cols}, data_(std::move(data)) {
        if (data_.size() != rows * cols) {
            throw DimensionError("matrix data length " + std::to_string(data_.size()) + " does not match shape " +
                                 to_string(shape_));
        }
    }

    /// Nested initializer: Matrix{{1, 2}, {3, 4}}.
    Matrix(std::initializer_list<std::initializer_list<double>> rows) {
        shape_.rows = rows.size();
        shape_.cols = rows.size() == 0 ? 0 : rows.begin()->size();
        data_.reserve(shape_.size());
        for (const auto& r : rows) {
            if (r.size() != shape_.cols) throw DimensionError("ragged matrix initializer");
            data_.insert(data_.end(), r.begin(), r.end());
        }
    }

    [[nodiscard]] std::size_t rows() const noexcept { return shape_.rows; }
    [[nodiscard]] std::size_t cols() const noexcept { return shape_.cols; }
    [[nodiscard]] Shape shape() const noexcept { return shape_; }
    [[nodiscard]] std::size_t size() const noexcept { return data_.size(); }

    double& operator()(std::size_t r, std::size_t c) noexcept { return data_[r * shape_.cols + c]; }
    double operator()(std::size_t r, std::size_t c) const noexcept { return data_[r * shape_.cols + c]; }
    double& operator[](std::size_t i) noexcept { return data_[i]; }
    double operator[](std::size_t i) const noexcept { return data_[i]; }

    [[nodiscard]] std::span<double> flat() noexcept { return data_; }
    [[nodiscard]] std::span<const double> flat() const noexcept { return data_; }
    [[nodiscard]] const std::vector<double>& data() const noexcept { return data_; }

    [[nodiscard]] const double* row_ptr(std::size_t r) const noexcept { return data_.data() + r * shape_.cols; }
    [[nodiscard]] double* row_ptr(std::size_t r) noexcept { return data_.data() + r * shape_.cols; }

    [[nodiscard]] std::span<const double> row(std::size_t r) const noexcept {
        return std::span<const double>(data_).subspan(r * shape_.cols, shape_.cols);
    }

    void fill(double v) { std::fill(data_.begin(), data_.end(), v); }

    [[nodiscard]] bool all_finite() const noexcept {
        return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
    }

    friend bool operator==(const Matrix&, const Matrix&) = default;

private:
    Shape shape_{};
    std::vector<double> data_;
};

inline void require_finite(const Matrix& m, const char* what) {
    if (!m.all_finite()) throw NonFiniteError(std::string(what) + " produced a non-finite value");
}

inline void require_same_shape(const Matrix& a, const Matrix& b, const char* what) {
    if (a.shape() != b.shape()) {
        throw DimensionError(std::string(what) + ": shape mismatch " + to_string(a.shape()) + " vs " +
                             to_string(b.shape()));
    }
}

inline Matrix matmul(const Matrix& a, const Matrix& b) {
    if (a.cols() != b.rows()) {
        throw DimensionError("matmul: " + to_string(a.shape()) + " x " + to_string(b.shape()));
    }
    Matrix out(a.rows(), b.cols());
    const std::size_t n = a.cols(), m = b.cols();
    for (std::size_t i = 0; i < a.rows(); ++i) {
        double* orow = out.row_ptr(i);
        for (std::size_t k = 0; k < n; ++k) {
            const double aik = a(i, k);
            const double* brow = b.row_ptr(k);
            for (std::size_t j = 0; j < m; ++j) orow[j] += aik * brow[j];
        }
    }
    require_finite(out, "matmul");
    return out;
}

/// a^T * b without materializing the transpose.
inline Matrix matmul_tn(const Matrix& a, const Matrix& b) {
    if (a.rows() != b.rows()) {
        throw DimensionError("matmul_tn: " + to_string(a.shape()) + "^T x " + to_string(b.shape()));
    }
    Matrix out(a.cols(), b.cols());
    for (std::size_t k = 0; k < a.rows(); ++k) {
        const double* brow = b.row_ptr(k);
        for (std::size_t i = 0; i < a.cols(); ++i) {
            const double aki = a(k, i);
            double* orow = out.row_ptr(i);
            for (std::size_t j = 0; j < b.cols(); ++j) orow[j] += aki * brow[j];
        }
    }
    require_finite(out, "matmul_tn");
    return out;
}

/// a * b^T without materializing the transpose.
inline Matrix matmul_nt(const Matrix& a, const Matrix& b) {
    if (a.cols() != b.cols()) {
        throw DimensionError("matmul_nt: " + to_string(a.shape()) + " x " + to_string(b.shape()) + "^T");
    }
    Matrix out(a.rows(), b.rows());
    for (std::size_t i = 0; i < a.rows(); ++i) {
        for (std::size_t j = 0; j < b.rows(); ++j) {
            double acc = 0.0;
            for (std::size_t k = 0; k < a.cols(); ++k) acc += a(i, k) * b(j, k);
            out(i, j) = acc;
        }
    }
    require_finite(out, "matmul_nt");
    return out;
}

enum class ElementwiseOp { add, sub, mul, div };

inline Matrix elementwise(const Matrix& a, const Matrix& b, ElementwiseOp op) {
    require_same_shape(a, b, "elementwise");
    Matrix out(a.shape());
    for (std::size_t i = 0; i < a.size(); ++i) {
        switch (op) {
            case ElementwiseOp::add: out[i] = a[i] + b[i]; break;
            case ElementwiseOp::sub: out[i] = a[i] - b[i]; break;
            case ElementwiseOp::mul: out[i] = a[i] * b[i]; break;
            case ElementwiseOp::div:
                if (b[i] == 0.0) throw DomainError("elementwise div: zero divisor at index " + std::to_string(i));
                out[i] = a[i] / b[i];
                break;
        }
    }
    require_finite(out, "elementwise");
    return out;
}

/// Binary matrix whose entries are independently 1 with probability keep_prob.
inline Matrix bernoulli_mask(Shape shape, double keep_prob, Rng& rng) {
    if (!(keep_prob >= 0.0 && keep_prob <= 1.0)) {
        throw DomainError("bernoulli_mask: keep probability " + std::to_string(keep_prob) + " outside [0,1]");
    }
    Matrix out(shape);
    for (double& v : out.flat()) v = rng.uniform() < keep_prob ? 1.0 : 0.0;
    return out;
}

inline Matrix gaussian_init(Shape shape, double mean, double stddev, Rng& rng) {
    if (!(stddev >= 0.0)) throw DomainError("gaussian_init: negative standard deviation");
    Matrix out(shape, mean);
    if (stddev == 0.0) return out;
    for (double& v : out.flat()) v = rng.normal(mean, stddev);
    return out;
}

inline double squared_norm(const Matrix& m) {
    double acc = 0.0;
    for (double v : m.flat()) acc += v * v;
    return acc;
}

/// A named parameter block: current value W(t), pretrained snapshot W(0) and
/// the gradient of the most recent backward pass. All three share one shape.
struct ParamTensor {
    std::string name;
    Matrix value;
    Matrix pretrained;
    Matrix grad;
    bool maskable = false;

    ParamTensor() = default;
    ParamTensor(std::string n, Matrix v, bool is_maskable)
        : name(std::move(n)), value(std::move(v)), pretrained(value), grad(value.shape()), maskable(is_maskable) {}

    [[nodiscard]] Shape shape() const noexcept { return value.shape(); }
    void zero_grad() { grad.fill(0.0); }
};

}  // namespace subnet_tune
