// Copyright 2026 The PEPL Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.
#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>
#include <vector>

namespace pepl {

using Rng = std::mt19937_64;

/// Independent stream keyed by a seed and a list of tags (stream id, epoch, step...).
/// Every random draw in a run comes from a stream derived this way, so any
/// step's randomness can be reconstructed from (seed, tags) alone.
inline Rng derive_rng(std::uint64_t seed, std::initializer_list<std::uint64_t> tags) {
    std::vector<std::uint32_t> words;
    words.reserve(2 + 2 * tags.size());
    words.push_back(static_cast<std::uint32_t>(seed));
    words.push_back(static_cast<std::uint32_t>(seed >> 32));
    for (auto t : tags) {
        words.push_back(static_cast<std::uint32_t>(t));
        words.push_back(static_cast<std::uint32_t>(t >> 32));
    }
    std::seed_seq seq(words.begin(), words.end());
    return Rng(seq);
}

namespace stream {
inline constexpr std::uint64_t kDataGen = 1;
inline constexpr std::uint64_t kSplit = 2;
inline constexpr std::uint64_t kLabeledOrder = 3;
inline constexpr std::uint64_t kUnlabeledOrder = 4;
inline constexpr std::uint64_t kStep = 5;
inline constexpr std::uint64_t kModelInit = 6;
}  // namespace stream

}  // namespace pepl
