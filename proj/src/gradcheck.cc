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

#include "recsae/gradcheck.h"

#include <algorithm>
#include <cmath>
#include <vector>

#include "recsae/error.h"

namespace recsae {

GradCheckReport finite_diff_check(const ScalarFunction& f,
                                  std::span<const double> analytic_grad,
                                  std::span<const double> point, double h,
                                  double tol, DiffScheme scheme) {
  if (!(h > 0.0)) throw ConfigError("finite_diff_check: h must be positive");
  if (analytic_grad.size() != point.size()) {
    throw ConfigError("finite_diff_check: gradient and point sizes differ");
  }
  GradCheckReport report;
  std::vector<double> x(point.begin(), point.end());
  bool finite = true;
  auto central = [&](size_t i, double step) {
    const double saved = x[i];
    x[i] = saved + step;
    const double f_plus = f(x);
    x[i] = saved - step;
    const double f_minus = f(x);
    x[i] = saved;
    finite = finite && std::isfinite(f_plus) && std::isfinite(f_minus);
    return (f_plus - f_minus) / (2.0 * step);
  };
  for (size_t i = 0; i < x.size(); ++i) {
    double numeric = central(i, h);
    if (scheme == DiffScheme::kRichardson) {
      numeric = (4.0 * central(i, h / 2.0) - numeric) / 3.0;
    }
    if (!finite) {
      report.passed = false;
      report.worst_index = i;
      report.message = "non-finite evaluation at index " + std::to_string(i);
      return report;
    }
    const double a = analytic_grad[i];
    const double rel =
        std::abs(a - numeric) /
        std::max(1e-8, std::abs(a) + std::abs(numeric));
    if (rel > report.max_relative_error) {
      report.max_relative_error = rel;
      report.worst_index = i;
    }
  }
  if (report.max_relative_error > tol) {
    report.passed = false;
    report.message = "relative error " +
                     std::to_string(report.max_relative_error) +
                     " at index " + std::to_string(report.worst_index);
  }
  return report;
}

}  // namespace recsae
