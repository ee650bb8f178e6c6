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

#ifndef RECSAE_HASH_H_
#define RECSAE_HASH_H_

#include <cstdint>
#include <cstring>
#include <span>
#include <string>
#include <string_view>

namespace recsae {

// 64-bit FNV-1a, used for artifact fingerprints.
class Fnv1a {
 public:
  void update(const void* data, size_t n) {
    const auto* bytes = static_cast<const unsigned char*>(data);
    for (size_t i = 0; i < n; ++i) {
      state_ ^= bytes[i];
      state_ *= 0x100000001B3ULL;
    }
  }
  void update(std::string_view s) {
    update(s.data(), s.size());
    update_u64(s.size());
  }
  void update_u64(uint64_t v) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    update(b, 8);
  }
  void update(std::span<const double> values) {
    update_u64(values.size());
    for (double v : values) {
      uint64_t bits;
      std::memcpy(&bits, &v, sizeof bits);
      update_u64(bits);
    }
  }

  uint64_t digest() const { return state_; }
  std::string hex() const {
    static constexpr char kDigits[] = "0123456789abcdef";
    std::string out(16, '0');
    for (int i = 0; i < 16; ++i) {
      out[15 - i] = kDigits[(state_ >> (4 * i)) & 0xF];
    }
    return out;
  }

 private:
  uint64_t state_ = 0xCBF29CE484222325ULL;
};

}  // namespace recsae

#endif  // RECSAE_HASH_H_
