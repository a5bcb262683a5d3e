/*
 * facekit - 3D face modelling, registration and fitting from synthetic and captured data.
 *
 * File: core/include/facekit/neuralgen/losses.hpp
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

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

namespace facekit::neuralgen {

struct TrainConfig
{
    double lambdaS = 10.0;
    double lambdaT = 10.0;
    double lambdaE = 10.0;
    double adversarialWeight = 1.0;
    double learningRate = 2e-3;
    double discriminatorLearningRate = 2e-3;
    double adamBeta1 = 0.0;
    double adamBeta2 = 0.99;
    int batchSize = 4;
    int steps = 2000;
    double r1Weight = 1.0;
    double pathLengthWeight = 0.0;
    bool normalDiscriminatorEnabled = true;
    std::uint64_t seed = 0;
    /// JSON-lines loss trace; empty disables.
    std::filesystem::path tracePath;
    /// Checkpoints every checkpointEvery steps (and at the end) when set.
    std::filesystem::path checkpointDir;
    int checkpointEvery = 0;

    void validate() const;
};

/// A conditional map with its detailed ground truth (paired) or without it
/// (unpaired, coarse-derived). Unpaired samples reconstruct their own condition.
struct TrainingSample
{
    geometry::UVMap cond;
    std::optional<geometry::UVMap> target;
};

struct LossContext
{
    std::uint64_t step = 0;
    /// Running mean of the path length, the target of the path-length penalty.
    double pathLengthMean = 0.0;
};

struct GeneratorLoss
{
    double total = 0.0;
    double reconstruction = 0.0;
    double adversarial = 0.0;
    double pathLength = 0.0;
    double pathLengthMeasured = 0.0; ///< mean |J^T y| over the batch
    std::vector<double> grad;         ///< d total / d generator parameters
};

struct DiscriminatorLoss
{
    double total = 0.0;
    double logistic = 0.0;
    double r1 = 0.0;
    std::vector<double> gradMain;
    std::vector<double> gradNormal;
};

/// Discriminator input built from a condition and an output (or ground truth):
/// normalised condition and output, masked.
Tensor main_discriminator_input(const GeneratorSpec& spec, const geometry::UVMap& cond, const geometry::UVMap& output);
/// Normal map of the output geometry, plus normalised expression offsets for
/// the expression generator.
Tensor normal_discriminator_input(const GeneratorSpec& spec, const geometry::UVMap& cond, const geometry::UVMap& output,
                                  NormalMapLayer::Cache* cache = nullptr);

/// Reconstruction kernel: per-sample mean over masked texels of the weighted
/// squared channel differences. Returns the loss and adds its gradient.
double reconstruction_loss(const GeneratorSpec& spec, const TrainConfig& config, const geometry::UVMap& output,
                           const geometry::UVMap& target, geometry::UVMap* grad = nullptr);

/// Detail-generator objective: reconstruction against ground truth (paired) or
/// the condition (unpaired) plus the non-saturating adversarial term over both
/// discriminators, averaged over the batch.
GeneratorLoss loss_detail(const Generator& generator, const Discriminator& main, const Discriminator& normal,
                          std::span<const TrainingSample> batch, std::span<const DetailLatent> latents,
                          const TrainConfig& config, const LossContext& context = {});
/// Expression-refinement objective with the expression discriminator pair.
GeneratorLoss loss_exp(const Generator& generator, const Discriminator& main, const Discriminator& normal,
                       std::span<const TrainingSample> batch, std::span<const DetailLatent> latents,
                       const TrainConfig& config, const LossContext& context = {});

/// Logistic discriminator loss on fakes and paired reals, with the R1 penalty
/// on reals.
DiscriminatorLoss discriminator_loss(const Generator& generator, const Discriminator& main, const Discriminator& normal,
                                     std::span<const TrainingSample> batch, std::span<const DetailLatent> latents,
                                     const TrainConfig& config);

} // namespace facekit::neuralgen
