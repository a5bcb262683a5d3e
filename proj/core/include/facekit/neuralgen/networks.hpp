/*
 * facekit - 3D face modelling, registration and fitting from synthetic and captured data.
 *
 * File: core/include/facekit/neuralgen/networks.hpp
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

#include "facekit/common/random.hpp"
#include "facekit/geometry/uv.hpp"
#include "facekit/neuralgen/layers.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace facekit::neuralgen {

enum class GeneratorKind
{
    Detail,     ///< 6-channel geometry + texture
    Expression, ///< 3-channel geometry refinement
};

const char* to_string(GeneratorKind kind);
GeneratorKind generator_kind_from_string(const std::string& name);

/// Architecture of a conditional generator. Level l runs at
/// baseResolution * 2^l; the output is the first outChannels of the conditional
/// input plus a learned, scaled offset.
struct GeneratorSpec
{
    GeneratorKind kind = GeneratorKind::Detail;
    int baseResolution = 4;
    int outputResolution = 64;
    int inChannels = 6;
    int outChannels = 6;
    int latentDim = 512;
    int mappingDepth = 4;
    std::vector<int> channelsPerLevel{256, 128, 64, 32, 16};
    /// Conditional input normalisation (v - shift) * scale, per input channel.
    std::vector<double> inputShift;
    std::vector<double> inputScale;
    /// Offset scale per output channel (mm for geometry).
    std::vector<double> outputScale;

    static GeneratorSpec detail(int resolution = 64);
    static GeneratorSpec expression(int resolution = 64);
    /// 16 * 2^(levels - 1 - l) capped at 256.
    static std::vector<int> default_channels(int levels);

    int levels() const;
    int level_resolution(int level) const { return baseResolution << level; }
    /// Level noise is lifted to the output resolution by nearest up-sampling
    /// with this factor; levels whose factor reaches noiseTile carry nothing.
    int noise_upsample(int level) const { return outputResolution / level_resolution(level); }
    /// Output tile whose masked mean is removed from the lifted noise, so
    /// noise has no content at 8x8-pooled scale.
    static constexpr int noiseTile = 8;

    void validate() const;
    std::string to_json() const;
    static GeneratorSpec from_json(const std::string& text);
    /// FNV-1a over the canonical JSON form.
    std::uint64_t hash() const;
};

/// Latent code and one noise plane per generator level.
struct DetailLatent
{
    std::vector<double> z;
    std::vector<std::vector<double>> noise;

    static DetailLatent sample(const GeneratorSpec& spec, Rng& rng);
    static DetailLatent zeros(const GeneratorSpec& spec);
    /// Throws if sizes disagree with spec or any value is non-finite.
    void validate(const GeneratorSpec& spec) const;
    std::size_t size() const;
    /// z followed by the noise planes.
    std::vector<double> flatten() const;
    void assign(std::span<const double> flat);
};

/// Encoder, mapping network and style-modulated synthesis ladder.
class Generator
{
public:
    Generator() = default;
    Generator(GeneratorSpec spec, std::uint64_t seed);

    const GeneratorSpec& spec() const { return spec_; }
    ParameterSet& parameters() { return params_; }
    const ParameterSet& parameters() const { return params_; }

    struct Trace
    {
        Tensor cond;
        std::vector<double> z;
        std::vector<std::vector<double>> mappingPre; // pre-activation per layer
        std::vector<std::vector<double>> mappingIn;  // input per layer
        std::vector<double> w;
        std::vector<Tensor> encoderPre;   // per level
        std::vector<Tensor> features;     // per level
        std::vector<std::vector<double>> styles;
        std::vector<std::vector<double>> noise; // lifted, high-passed plane per level (output resolution)
        std::vector<Tensor> convIn;
        std::vector<Tensor> convOut;
        std::vector<Tensor> preActivation;
        Tensor finalIn;
        std::vector<std::uint8_t> mask;
        bool fromW = false;
    };

    struct Gradients
    {
        std::vector<double> params;
        std::vector<double> z;
        std::vector<double> w;
        std::vector<std::vector<double>> noise;
    };

    /// Style vector for a latent code.
    std::vector<double> mapping(std::span<const double> z) const;
    /// Feature pyramid (level 0 first) of a conditional input.
    std::vector<Tensor> encode(const geometry::UVMap& cond) const;

    geometry::UVMap forward(const geometry::UVMap& cond, const DetailLatent& latent, Trace* trace = nullptr) const;
    /// Forward pass from a given style vector (bypasses the mapping network).
    geometry::UVMap forward_w(const geometry::UVMap& cond, std::span<const double> w,
                              const std::vector<std::vector<double>>& noise, Trace* trace = nullptr) const;

    /// Reverse pass for gradOutput (same layout as the output map). Parameter
    /// gradients are accumulated into grads.params when it is non-empty.
    void backward(const Trace& trace, const geometry::UVMap& gradOutput, Gradients& grads) const;
    /// Zeroed gradient buffers; without params, parameter gradients are
    /// computed into scratch space and the encoder pass is skipped.
    Gradients make_gradients(bool withParams) const;

private:
    void check_cond(const geometry::UVMap& cond) const;
    geometry::UVMap synthesize(const geometry::UVMap& cond, std::vector<double> w,
                               const std::vector<std::vector<double>>& noise, Trace* trace) const;

    GeneratorSpec spec_;
    ParameterSet params_;
    std::vector<Dense> mapping_;
    std::vector<Conv2d> encoder_;
    std::size_t constant_ = 0;
    std::vector<Conv2d> conv_;
    std::vector<Dense> style_;
    std::vector<std::size_t> noiseStrength_;
    Conv2d toOutput_;
};

enum class DiscriminatorKind
{
    Detail,           ///< condition (6) + detail output (6)
    NormalDetail,     ///< normal map of the detail geometry (3)
    Expression,       ///< condition (6) + refined geometry (3)
    NormalExpression, ///< normal map of the refined geometry (3) + expression offsets (3)
};

const char* to_string(DiscriminatorKind kind);
int discriminator_channels(DiscriminatorKind kind);
/// Channel layout description used in error messages.
std::string discriminator_layout(DiscriminatorKind kind);

/// Strided convolution ladder to the base resolution followed by a dense logit.
class Discriminator
{
public:
    Discriminator() = default;
    Discriminator(DiscriminatorKind kind, const GeneratorSpec& spec, std::uint64_t seed);

    DiscriminatorKind kind() const { return kind_; }
    int resolution() const { return resolution_; }
    ParameterSet& parameters() { return params_; }
    const ParameterSet& parameters() const { return params_; }

    struct Trace
    {
        std::vector<Tensor> inputs; // input to each conv
        std::vector<Tensor> pre;    // pre-activation of each conv
        std::vector<double> flat;
    };

    double forward(const Tensor& input, Trace* trace = nullptr) const;
    /// Accumulates dLogit * d(logit)/d(params) into paramGrads (if non-empty) and
    /// returns the input gradient.
    Tensor backward(const Trace& trace, double dLogit, std::span<double> paramGrads) const;

private:
    DiscriminatorKind kind_ = DiscriminatorKind::Detail;
    int resolution_ = 0;
    ParameterSet params_;
    std::vector<Conv2d> convs_;
    Dense logit_;
};

} // namespace facekit::neuralgen
