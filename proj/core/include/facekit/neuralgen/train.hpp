/*
 * facekit - 3D face modelling, registration and fitting from synthetic and captured data.
 *
 * File: core/include/facekit/neuralgen/train.hpp
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

#include "facekit/neuralgen/losses.hpp"

#include <string>
#include <vector>

namespace facekit::neuralgen {

struct TraceEntry
{
    int step = 0;
    double generatorLoss = 0.0;
    double reconstruction = 0.0;
    double adversarial = 0.0;
    double pathLength = 0.0;
    double discriminatorLoss = 0.0;
    double r1 = 0.0;
};

struct TrainResult
{
    Generator generator;
    Discriminator discriminator;
    Discriminator normalDiscriminator;
    std::vector<TraceEntry> trace;
    bool aborted = false;
    std::string diagnostic;
};

/// Alternating discriminator / generator Adam steps (the discriminator steps
/// are skipped when the adversarial weight is zero). Batches are drawn from a
/// per-epoch permutation and latents from per-step streams, all derived from
/// config.seed. Stops early, with aborted set, when the generator loss exceeds
/// 1000x its first value; throws NumericError on a NaN loss.
TrainResult train(GeneratorKind kind, std::span<const TrainingSample> dataset, const GeneratorSpec& spec,
                  const TrainConfig& config);

/// One JSON object per line.
std::string trace_line(const TraceEntry& e);

} // namespace facekit::neuralgen
