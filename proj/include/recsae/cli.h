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

#ifndef RECSAE_CLI_H_
#define RECSAE_CLI_H_

#include <ostream>

namespace recsae {

// Entry point of the `recsae` tool. Returns the process exit code:
// 0 success, 2 configuration error, 3 data error, 4 numeric failure.
int run_cli(int argc, const char* const* argv, std::ostream& out,
            std::ostream& err);

}  // namespace recsae

#endif  // RECSAE_CLI_H_
