/*
 * facekit - 3D face modelling, registration and fitting from synthetic and captured data.
 *
 * File: core/include/facekit/common/random.hpp
 *
 * Copyright 2026 The facekit authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 * http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */
#pragma once

#include <cstdint>
#include <random>
#include <vector>

namespace facekit {

/// Seeded random stream. Streams with different (seed, stream) pairs are
/// independent, so per-sample generators can be created without sharing state
/// across threads.
class Rng
{
public:
    explicit Rng(std::uint64_t seed, std::uint64_t stream = 0)
    {
        std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                          static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32),
                          0x9e3779b9u};
        engine_.seed(seq);
    }

    double normal() { return normal_(engine_); }
    double uniform() { return uniform_(engine_); }
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform_(engine_); }
    std::size_t index(std::size_t n) { return std::uniform_int_distribution<std::size_t>(0, n - 1)(engine_); }

    std::vector<double> normal_vector(std::size_t n)
    {
        std::vector<double> v(n);
        for (auto& x : v) {
            x = normal();
        }
        return v;
    }

    std::mt19937_64& engine() { return engine_; }

private:
    std::mt19937_64 engine_;
    std::normal_distribution<double> normal_{0.0, 1.0};
    std::uniform_real_distribution<double> uniform_{0.0, 1.0};
};

} // namespace facekit
