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

#ifndef RECSAE_ACTIVATIONS_H_
#define RECSAE_ACTIVATIONS_H_

#include <cmath>

namespace recsae {

// Branches on sign so exp() never overflows.
inline double sigmoid(double x) {
  if (x >= 0.0) {
    return 1.0 / (1.0 + std::exp(-x));
  }
  const double e = std::exp(x);
  return e / (1.0 + e);
}

// Derivative expressed through the output value s = sigmoid(x).
inline double sigmoid_grad_from_output(double s) { return s * (1.0 - s); }

inline double sigmoid_grad(double x) {
  return sigmoid_grad_from_output(sigmoid(x));
}

inline double relu(double x) { return x > 0.0 ? x : 0.0; }

// Subgradient 0 at the kink.
inline double relu_grad(double x) { return x > 0.0 ? 1.0 : 0.0; }

// log(1 + exp(x)) without overflow.
inline double softplus(double x) {
  if (x > 0.0) return x + std::log1p(std::exp(-x));
  return std::log1p(std::exp(x));
}

// Binary cross-entropy of sigmoid(logit) against a {0,1} label.
inline double bce_with_logit(double logit, double label) {
  return softplus(logit) - label * logit;
}

}  // namespace recsae

#endif  // RECSAE_ACTIVATIONS_H_
