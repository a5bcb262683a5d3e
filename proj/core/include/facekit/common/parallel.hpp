/*
 * facekit - 3D face modelling, registration and fitting from synthetic and captured data.
 *
 * File: core/include/facekit/common/parallel.hpp
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

#include <cstddef>
#include <functional>
#include <vector>

namespace facekit {

/// Number of worker threads used by parallel_for. Defaults to the hardware
/// concurrency, overridable with the FACEKIT_THREADS environment variable.
int thread_count();
void set_thread_count(int count);

/// Runs body(i) for every i in [begin, end). Work is split into contiguous
/// chunks; body must only write state owned by index i, which makes results
/// independent of the thread count.
void parallel_for(std::size_t begin, std::size_t end, const std::function<void(std::size_t)>& body);

/// Deterministic parallel sum: the range is cut into fixed-size blocks (the
/// block layout does not depend on the thread count), each block is reduced
/// sequentially and block results are added in block order.
template <typename T, typename F>
T deterministic_sum(std::size_t begin, std::size_t end, std::size_t block, T zero, F&& term)
{
    if (end <= begin) {
        return zero;
    }
    const std::size_t blocks = (end - begin + block - 1) / block;
    std::vector<T> partial(blocks, zero);
    parallel_for(0, blocks, [&](std::size_t b) {
        T acc = zero;
        const std::size_t lo = begin + b * block;
        const std::size_t hi = std::min(end, lo + block);
        for (std::size_t i = lo; i < hi; ++i) {
            acc += term(i);
        }
        partial[b] = acc;
    });
    T total = zero;
    for (const auto& p : partial) {
        total += p;
    }
    return total;
}

} // namespace facekit
