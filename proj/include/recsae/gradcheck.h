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

#ifndef RECSAE_GRADCHECK_H_
#define RECSAE_GRADCHECK_H_

#include <cstddef>
#include <functional>
#include <span>
#include <string>

namespace recsae {

struct GradCheckReport {
  bool passed = true;
  double max_relative_error = 0.0;
  size_t worst_index = 0;
  std::string message;  // set when a check fails
};

using ScalarFunction = std::function<double(std::span<const double>)>;

enum class DiffScheme {
  kCentral,     // (f(x+h) - f(x-h)) / 2h
  kRichardson,  // (4 D(h/2) - D(h)) / 3 on central differences D
};

// Compares `analytic_grad` against finite differences of `f` around
// `point`. Relative error per coordinate is |a - n| / max(1e-8, |a| + |n|).
// Richardson removes the h^2 term, so a step large enough to keep rounding
// noise off small gradients stays accurate on strongly curved ones.
GradCheckReport finite_diff_check(const ScalarFunction& f,
                                  std::span<const double> analytic_grad,
                                  std::span<const double> point, double h,
                                  double tol,
                                  DiffScheme scheme = DiffScheme::kCentral);

}  // namespace recsae

#endif  // RECSAE_GRADCHECK_H_
