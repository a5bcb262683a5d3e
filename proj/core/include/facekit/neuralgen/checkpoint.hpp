/*
 * facekit - 3D face modelling, registration and fitting from synthetic and captured data.
 *
 * File: core/include/facekit/neuralgen/checkpoint.hpp
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

#include "facekit/neuralgen/networks.hpp"

#include <filesystem>

namespace facekit::neuralgen {

/// "FVKG" container: magic, version, spec hash, step, spec JSON, then every
/// parameter tensor in declaration order as (name, shape, float32 values).
void save_checkpoint(const std::filesystem::path& path, const Generator& generator, std::uint64_t step);

struct Checkpoint
{
    Generator generator;
    std::uint64_t step = 0;
    std::uint64_t specHash = 0;
};

/// Throws ParseError on a malformed or truncated file and Error when the
/// stored tensors do not match the stored spec.
Checkpoint load_checkpoint(const std::filesystem::path& path);

} // namespace facekit::neuralgen
