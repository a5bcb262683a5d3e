/*
 * facekit - 3D face modelling, registration and fitting from synthetic and captured data.
 *
 * File: core/src/neuralgen/train.cpp
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
#include "facekit/neuralgen/train.hpp"

#include "facekit/common/adam.hpp"
#include "facekit/common/error.hpp"
#include "facekit/neuralgen/checkpoint.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

namespace facekit::neuralgen {

namespace {

constexpr double kDivergenceFactor = 1e3;
constexpr double kPathLengthDecay = 0.99;

void check_dataset(GeneratorKind kind, std::span<const TrainingSample> dataset, const GeneratorSpec& spec)
{
    if (spec.kind != kind) {
        throw Error(std::string("spec describes a ") + to_string(spec.kind) + " generator, asked to train " + to_string(kind));
    }
    if (dataset.empty()) {
        throw Error("training dataset is empty");
    }
    for (std::size_t i = 0; i < dataset.size(); ++i) {
        const auto& s = dataset[i];
        if (s.cond.width != spec.outputResolution || s.cond.height != spec.outputResolution || s.cond.channels != spec.inChannels) {
            throw Error("training sample " + std::to_string(i) + " is " + std::to_string(s.cond.width) + "x" +
                        std::to_string(s.cond.height) + "x" + std::to_string(s.cond.channels) + ", generator expects " +
                        std::to_string(spec.outputResolution) + "x" + std::to_string(spec.outputResolution) + "x" +
                        std::to_string(spec.inChannels));
        }
    }
}

} // namespace

std::string trace_line(const TraceEntry& e)
{
    nlohmann::json j;
    j["step"] = e.step;
    j["generator"] = e.generatorLoss;
    j["reconstruction"] = e.reconstruction;
    j["adversarial"] = e.adversarial;
    j["path_length"] = e.pathLength;
    j["discriminator"] = e.discriminatorLoss;
    j["r1"] = e.r1;
    return j.dump();
}

TrainResult train(GeneratorKind kind, std::span<const TrainingSample> dataset, const GeneratorSpec& spec,
                  const TrainConfig& config)
{
    config.validate();
    spec.validate();
    check_dataset(kind, dataset, spec);

    const bool adversarial = config.adversarialWeight > 0.0;
    const DiscriminatorKind mainKind = kind == GeneratorKind::Detail ? DiscriminatorKind::Detail : DiscriminatorKind::Expression;
    const DiscriminatorKind normalKind =
        kind == GeneratorKind::Detail ? DiscriminatorKind::NormalDetail : DiscriminatorKind::NormalExpression;
    TrainResult result{Generator(spec, config.seed), Discriminator(mainKind, spec, config.seed + 1),
                       Discriminator(normalKind, spec, config.seed + 2), {}, false, {}};

    Adam optG(result.generator.parameters().size(), {config.learningRate, config.adamBeta1, config.adamBeta2, 1e-8});
    Adam optD(result.discriminator.parameters().size(), {config.discriminatorLearningRate, config.adamBeta1, config.adamBeta2, 1e-8});
    Adam optN(result.normalDiscriminator.parameters().size(), {config.discriminatorLearningRate, config.adamBeta1, config.adamBeta2, 1e-8});

    std::ofstream traceOut;
    if (!config.tracePath.empty()) {
        traceOut.open(config.tracePath);
        if (!traceOut) {
            throw Error("cannot write loss trace " + config.tracePath.string());
        }
    }
    if (!config.checkpointDir.empty()) {
        std::filesystem::create_directories(config.checkpointDir);
    }

    Rng order(config.seed, 1);
    std::vector<std::size_t> perm(dataset.size());
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), order.engine());
    std::size_t cursor = 0;
    const auto batchSize = static_cast<std::size_t>(config.batchSize);

    double initial = 0.0;
    double pathMean = 0.0;
    std::vector<TrainingSample> batch;
    std::vector<DetailLatent> latents;
    for (int step = 0; step < config.steps; ++step) {
        batch.clear();
        latents.clear();
        Rng latentRng(config.seed, 0x1000000ull + static_cast<std::uint64_t>(step));
        for (std::size_t b = 0; b < batchSize; ++b) {
            if (cursor == perm.size()) {
                std::shuffle(perm.begin(), perm.end(), order.engine());
                cursor = 0;
            }
            batch.push_back(dataset[perm[cursor++]]);
            latents.push_back(DetailLatent::sample(spec, latentRng));
        }

        TraceEntry entry;
        entry.step = step;
        if (adversarial) {
            const auto d = discriminator_loss(result.generator, result.discriminator, result.normalDiscriminator, batch, latents, config);
            optD.step(result.discriminator.parameters().data(), d.gradMain);
            if (config.normalDiscriminatorEnabled) {
                optN.step(result.normalDiscriminator.parameters().data(), d.gradNormal);
            }
            entry.discriminatorLoss = d.total;
            entry.r1 = d.r1;
        }
        const LossContext ctx{static_cast<std::uint64_t>(step), pathMean};
        const auto g = kind == GeneratorKind::Detail
                           ? loss_detail(result.generator, result.discriminator, result.normalDiscriminator, batch, latents, config, ctx)
                           : loss_exp(result.generator, result.discriminator, result.normalDiscriminator, batch, latents, config, ctx);
        if (config.pathLengthWeight > 0.0) {
            pathMean = step == 0 ? g.pathLengthMeasured : kPathLengthDecay * pathMean + (1.0 - kPathLengthDecay) * g.pathLengthMeasured;
        }
        entry.generatorLoss = g.total;
        entry.reconstruction = g.reconstruction;
        entry.adversarial = g.adversarial;
        entry.pathLength = g.pathLength;
        if (!std::isfinite(g.total) || !std::isfinite(entry.discriminatorLoss)) {
            throw NumericError("training loss became NaN at step " + std::to_string(step));
        }
        result.trace.push_back(entry);
        if (traceOut) {
            traceOut << trace_line(entry) << '\n';
        }
        if (step == 0) {
            initial = g.total;
        } else if (g.total > kDivergenceFactor * std::max(initial, 1e-12)) {
            result.aborted = true;
            result.diagnostic = "generator loss " + std::to_string(g.total) + " exceeded 1000x the initial " +
                                std::to_string(initial) + " at step " + std::to_string(step);
            break;
        }
        optG.step(result.generator.parameters().data(), g.grad);

        if (!config.checkpointDir.empty() && config.checkpointEvery > 0 && (step + 1) % config.checkpointEvery == 0) {
            save_checkpoint(config.checkpointDir / ("generator_step" + std::to_string(step + 1) + ".fvkg"), result.generator,
                            static_cast<std::uint64_t>(step + 1));
        }
    }
    if (!config.checkpointDir.empty()) {
        save_checkpoint(config.checkpointDir / "generator.fvkg", result.generator, result.trace.size());
    }
    return result;
}

} // namespace facekit::neuralgen
