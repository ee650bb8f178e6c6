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

#ifndef RECSAE_ADAM_H_
#define RECSAE_ADAM_H_

#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

namespace recsae {

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

// Moment buffers for one parameter block.
struct AdamState {
  AdamState() = default;
  AdamState(size_t n, AdamConfig cfg)
      : config(cfg), first_moment(n, 0.0), second_moment(n, 0.0) {}

  AdamConfig config;
  std::vector<double> first_moment;
  std::vector<double> second_moment;
  uint64_t step = 0;
};

// Bias-corrected Adam update in place. Throws NumericError naming `block`
// when a gradient is not finite, ConfigError on shape mismatch.
void adam_step(std::span<double> params, std::span<const double> grads,
               AdamState& state, std::string_view block = "parameters");

}  // namespace recsae

#endif  // RECSAE_ADAM_H_
