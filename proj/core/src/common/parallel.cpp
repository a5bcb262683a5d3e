/*
 * facekit - 3D face modelling, registration and fitting from synthetic and captured data.
 *
 * File: core/src/common/parallel.cpp
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
#include "facekit/common/parallel.hpp"

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <thread>

namespace facekit {

namespace {

int initial_thread_count()
{
    if (const char* env = std::getenv("FACEKIT_THREADS")) {
        const int n = std::atoi(env);
        if (n > 0) {
            return n;
        }
    }
    return std::max(1u, std::thread::hardware_concurrency());
}

std::atomic<int>& thread_setting()
{
    static std::atomic<int> value{initial_thread_count()};
    return value;
}

} // namespace

int thread_count()
{
    return thread_setting().load();
}

void set_thread_count(int count)
{
    thread_setting().store(std::max(1, count));
}

void parallel_for(std::size_t begin, std::size_t end, const std::function<void(std::size_t)>& body)
{
    if (end <= begin) {
        return;
    }
    const std::size_t n = end - begin;
    const std::size_t workers = std::min<std::size_t>(static_cast<std::size_t>(thread_count()), n);
    if (workers <= 1) {
        for (std::size_t i = begin; i < end; ++i) {
            body(i);
        }
        return;
    }

    std::exception_ptr failure;
    std::mutex failure_mutex;
    auto run_chunk = [&](std::size_t w) {
        const std::size_t lo = begin + n * w / workers;
        const std::size_t hi = begin + n * (w + 1) / workers;
        try {
            for (std::size_t i = lo; i < hi; ++i) {
                body(i);
            }
        } catch (...) {
            std::lock_guard lock(failure_mutex);
            if (!failure) {
                failure = std::current_exception();
            }
        }
    };

    std::vector<std::thread> threads;
    threads.reserve(workers - 1);
    for (std::size_t w = 1; w < workers; ++w) {
        threads.emplace_back(run_chunk, w);
    }
    run_chunk(0);
    for (auto& t : threads) {
        t.join();
    }
    if (failure) {
        std::rethrow_exception(failure);
    }
}

} // namespace facekit
