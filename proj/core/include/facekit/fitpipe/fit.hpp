/*
 * facekit - 3D face modelling, registration and fitting from synthetic and captured data.
 *
 * File: core/include/facekit/fitpipe/fit.hpp
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

#include "facekit/morphable/base_model.hpp"
#include "facekit/neuralgen/checkpoint.hpp"
#include "facekit/neuralgen/networks.hpp"
#include "facekit/render/camera.hpp"
#include "facekit/render/image_io.hpp"
#include "facekit/render/sh.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace facekit::fitpipe {

using geometry::TriMesh;
using geometry::UVMap;
using geometry::Vec3;

struct PhaseConfig
{
    int iterations = 100;
    double learningRate = 0.02; ///< latent / coefficient step size
};

struct FitConfig
{
    int imageWidth = 256;
    int imageHeight = 256;
    double focal = 800.0; ///< pixels, principal point at the image centre

    int warmupIterations = 150; ///< pose-only landmark steps before phase one
    PhaseConfig base{200, 0.05};
    PhaseConfig detail{100, 0.02};
    PhaseConfig expression{100, 0.02};
    double angleRate = 0.01;       ///< rad per step
    double translationRate = 2.0;  ///< mm per step
    double lightingRate = 0.01;
    double finalRateFraction = 0.1; ///< learning rates decay linearly to this share

    double wLms = 1e-2;  ///< per squared pixel, averaged over landmarks
    double wPhoto = 10.0; ///< per squared RGB error, averaged over covered pixels and channels
    double wRegShape = 1e-4;
    double wRegTexture = 1e-5;
    double wRegExpression = 1e-4;
    double wRegNoise = 1.0;   ///< mean squared noise value, summed over levels
    double wRegLatent = 0.01; ///< mean squared z

    std::uint64_t seed = 0;

    void validate() const;
    render::Camera camera() const;
    std::string to_json() const;
    static FitConfig from_json(const std::string& text);
};

struct PhaseTraces
{
    std::vector<double> warmup;
    std::vector<double> base;
    std::vector<double> detail;
    std::vector<double> expression;
};

/// Identifies a generator checkpoint: spec hash plus a hash of its parameters.
struct GeneratorId
{
    std::uint64_t specHash = 0;
    std::uint64_t parameterHash = 0;
    bool operator==(const GeneratorId&) const = default;
};

GeneratorId generator_id(const neuralgen::Generator& generator);

struct FitMeshes
{
    TriMesh base;    ///< base model with expression
    TriMesh detail;  ///< neutral detailed geometry and texture
    TriMesh refined; ///< refined expression geometry with the detailed texture
};

struct FitResult
{
    morphable::BaseParams baseParams;
    render::Pose pose;
    render::SHLighting lighting;
    neuralgen::DetailLatent detailLatent;
    neuralgen::DetailLatent expLatent;
    FitMeshes meshes;
    PhaseTraces lossTrace;
    double landmarkError = 0.0;      ///< mean pixel distance after the last phase
    double initialLandmarkError = 0.0; ///< at the landmark-initialised pose, before phase one
    double baseLandmarkError = 0.0;  ///< after phase one
    double photoError = 0.0;         ///< RGB RMSE over covered pixels after the last phase
    double basePhotoError = 0.0;     ///< after phase one
    GeneratorId detailGenerator;
    GeneratorId expGenerator;
};

/// Pretrained networks used by phases two and three.
struct Generators
{
    const neuralgen::Checkpoint* detail = nullptr;
    const neuralgen::Checkpoint* expression = nullptr;
};

/// Output of phase one.
struct BaseFit
{
    morphable::BaseParams params;
    render::Pose pose;
    render::SHLighting lighting;
    std::vector<double> warmupTrace;
    std::vector<double> trace;
    double initialLandmarkError = 0.0;
    double landmarkError = 0.0;
    double photoError = 0.0;
};

/// Phase one: pose warmup on landmarks, then joint landmark + photometric +
/// coefficient-prior optimisation of shape, texture, expression, pose and
/// lighting. Needs at least 6 landmarks with 2D positions.
BaseFit fit_base(const render::Image& image, const geometry::LandmarkSet& landmarks2d, const morphable::BaseModel& model,
                 const FitConfig& config);

struct UnwrappedBase
{
    UVMap shape;      ///< S_base: neutral geometry (3 ch)
    UVMap texture;    ///< T_base (3 ch)
    UVMap expression; ///< E_base: expression offsets (3 ch)

    /// C_detail = S_base + T_base (6 ch).
    UVMap detail_condition() const;
};

UnwrappedBase unwrap_stage(const morphable::BaseModel& model, const morphable::BaseParams& params, int resolution);

/// C_exp = (S_detail + E_base) + E_base (6 ch).
UVMap expression_condition(const UVMap& detailGeometry, const UVMap& expression);

/// Fixed inputs of phases two and three.
struct FitScene
{
    const render::Image* image = nullptr;
    const geometry::LandmarkSet* landmarks2d = nullptr;
    render::Pose pose;
    render::SHLighting lighting;
};

struct LatentFit
{
    neuralgen::DetailLatent latent;
    UVMap output;
    std::vector<double> trace;
    double photoError = 0.0;
    double landmarkError = 0.0;
};

/// Phase two: optimises z_detail and the injected noise so that the rendered
/// generator output (resampled to the template, expression offsets added per
/// vertex) matches the image. Pose and lighting stay fixed.
LatentFit fit_detail(const FitScene& scene, const UVMap& cond, const std::vector<Vec3>& expressionOffsets,
                     const morphable::BaseModel& model, const neuralgen::Checkpoint& generator, const FitConfig& config);

/// Phase three: optimises z_exp and noise for the refined geometry; colours
/// come from the fixed detailed texture.
LatentFit fit_exp_refine(const FitScene& scene, const UVMap& detailOutput, const UVMap& expression,
                         const morphable::BaseModel& model, const neuralgen::Checkpoint& generator, const FitConfig& config);

/// Resamples a geometry map (3 ch) and an optional texture map (3 ch) to the
/// template vertices. Colours are clamped to [0, 1].
TriMesh assemble_final(const UVMap& geometry, const UVMap* texture, const geometry::TemplateAtlas& templ);

/// Deterministic evaluation of the generator stages for given parameters and latents.
struct PipelineMaps
{
    UnwrappedBase base;
    UVMap detail;  ///< G_detail output (6 ch)
    UVMap refined; ///< G_exp output (3 ch)
};

PipelineMaps evaluate_pipeline(const morphable::BaseModel& model, const Generators& generators, const morphable::BaseParams& params,
                               const neuralgen::DetailLatent& detailLatent, const neuralgen::DetailLatent& expLatent);
FitMeshes pipeline_meshes(const morphable::BaseModel& model, const morphable::BaseParams& params, const PipelineMaps& maps);

/// All three phases and the final assembly.
FitResult fit_image(const render::Image& image, const geometry::LandmarkSet& landmarks2d, const morphable::BaseModel& model,
                    const Generators& generators, const FitConfig& config);

/// Face with the base shape, texture and expression of baseFrom and the
/// detail and expression latents of detailFrom (the refined mesh). Throws
/// when either result was fitted with different generators.
TriMesh detail_transfer(const FitResult& baseFrom, const FitResult& detailFrom, const morphable::BaseModel& model,
                        const Generators& generators);

/// Pooled decomposition of a transferred geometry map against its donors:
/// mean per-texel distance of the 8x8-pooled geometry to the base donor's,
/// and correlation of the high-pass generator residual with each donor's.
struct TransferDecomposition
{
    double lowFrequencyDeviation = 0.0; ///< mm
    double detailDonorCorrelation = 0.0;
    double baseDonorCorrelation = 0.0;
};

/// Each *Refined is a refined geometry map and each *Base the matching
/// S_base + E_base map; residual = refined - base.
TransferDecomposition transfer_decomposition(const UVMap& transferRefined, const UVMap& transferBase, const UVMap& baseDonorRefined,
                                             const UVMap& baseDonorBase, const UVMap& detailDonorRefined, const UVMap& detailDonorBase,
                                             int poolFactor = 8);

} // namespace facekit::fitpipe
