// Copyright 2026 The recsae Authors
// SPDX-License-Identifier: Apache-2.0
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "recsae/matrix.h"

#include <algorithm>
#include <cassert>
#include <cmath>
#include <string>

#include "recsae/error.h"

namespace recsae {

Matrix::Matrix(size_t rows, size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (data_.size() != rows_ * cols_) {
    throw ConfigError("matrix data length " + std::to_string(data_.size()) +
                      " does not match shape " + std::to_string(rows_) + "x" +
                      std::to_string(cols_));
  }
}

void Matrix::fill(double value) { std::fill(data_.begin(), data_.end(), value); }

bool Matrix::all_finite() const { return recsae::all_finite(data_); }

double dot(std::span<const double> a, std::span<const double> b) {
  assert(a.size() == b.size());
  double sum = 0.0;
  for (size_t i = 0; i < a.size(); ++i) sum += a[i] * b[i];
  return sum;
}

double squared_norm(std::span<const double> a) { return dot(a, a); }

double squared_distance(std::span<const double> a, std::span<const double> b) {
  assert(a.size() == b.size());
  double sum = 0.0;
  for (size_t i = 0; i < a.size(); ++i) {
    const double diff = a[i] - b[i];
    sum += diff * diff;
  }
  return sum;
}

bool all_finite(std::span<const double> a) {
  return std::all_of(a.begin(), a.end(),
                     [](double v) { return std::isfinite(v); });
}

void matvec(const Matrix& a, std::span<const double> x, std::span<double> out) {
  assert(x.size() == a.cols() && out.size() == a.rows());
  for (size_t r = 0; r < a.rows(); ++r) out[r] = dot(a.row(r), x);
}

void matvec_transposed(const Matrix& a, std::span<const double> x,
                       std::span<double> out) {
  assert(x.size() == a.rows() && out.size() == a.cols());
  std::fill(out.begin(), out.end(), 0.0);
  for (size_t r = 0; r < a.rows(); ++r) {
    if (x[r] != 0.0) axpy(x[r], a.row(r), out);
  }
}

Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows()) {
    throw ConfigError("matmul shape mismatch: " + std::to_string(a.cols()) +
                      " vs " + std::to_string(b.rows()));
  }
  Matrix out(a.rows(), b.cols());
  for (size_t i = 0; i < a.rows(); ++i) {
    for (size_t k = 0; k < a.cols(); ++k) {
      const double aik = a(i, k);
      for (size_t j = 0; j < b.cols(); ++j) out(i, j) += aik * b(k, j);
    }
  }
  return out;
}

Matrix transpose(const Matrix& a) {
  Matrix out(a.cols(), a.rows());
  for (size_t r = 0; r < a.rows(); ++r) {
    for (size_t c = 0; c < a.cols(); ++c) out(c, r) = a(r, c);
  }
  return out;
}

void axpy(double scale, std::span<const double> x, std::span<double> y) {
  assert(x.size() == y.size());
  for (size_t i = 0; i < x.size(); ++i) y[i] += scale * x[i];
}

}  // namespace recsae
