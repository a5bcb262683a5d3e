/*
 * facekit - 3D face modelling, registration and fitting from synthetic and captured data.
 *
 * File: core/include/facekit/harness/synth.hpp
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

#include "facekit/geometry/uv.hpp"
#include "facekit/registration/rigid.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace facekit::harness {

using geometry::TriMesh;
using geometry::Vec2;
using geometry::Vec3;

/// Parameters of the synthetic face population. Everything generated from a
/// spec is a pure function of (spec, indices).
struct SynthSpec
{
    std::uint64_t seed = 1;
    int identityCount = 72;
    int expressionsPerIdentity = 21; ///< index 0 is the neutral expression
    double identityAmplitude = 8.0;  ///< RMS of the smooth identity displacement (mm)
    double expressionAmplitude = 3.0; ///< peak expression displacement (mm)
    double detailAmplitude = 0.5;    ///< RMS of the fine geometric detail (mm)
    double scanNoise = 0.0;          ///< per-axis Gaussian scan noise (mm)
    int scanPoints = 20000;
    int templateGrid = 57;
    int identityFactors = 12;
    /// Per-factor multipliers on the identity coefficients (empty = all 1).
    std::vector<double> factorSpread;

    void validate() const;
    std::string to_json() const;
    static SynthSpec from_json(const std::string& text);
};

/// The template the population is built on.
geometry::TemplateAtlas synth_template(const SynthSpec& spec);

/// Neutral detailed identity: template + smooth low-rank displacement + fine
/// detail along +z, with a smooth albedo carrying a fine darkening pattern
/// that is tied to the geometric detail.
TriMesh synth_identity(const SynthSpec& spec, int index);
/// The same identity without geometric detail and with the fine albedo
/// pattern at half contrast, as a low-resolution capture would record it.
TriMesh synth_identity_coarse(const SynthSpec& spec, int index);

/// Per-vertex expression offsets; expression 0 gives zeros. Offsets of the
/// same expression index share a localised basis across identities.
std::vector<Vec3> synth_expression(const SynthSpec& spec, int identityIndex, int expressionIndex);
/// Fine-scale correction that a detailed expression scan adds on top of the
/// smooth offsets: -0.15 |offset| along +z.
std::vector<Vec3> expression_refinement(std::span<const Vec3> offsets);
/// Detailed identity in the given expression: neutral + offsets + refinement.
TriMesh synth_expression_mesh(const SynthSpec& spec, int identityIndex, int expressionIndex);

/// Area-weighted surface samples with per-axis Gaussian noise of spec.scanNoise,
/// source-triangle normals and 3D landmarks at the given template vertices.
registration::ScanTarget synth_scan(const TriMesh& mesh, const geometry::LandmarkSet& landmarks, const SynthSpec& spec,
                                    std::uint64_t stream = 0);

/// Dense noise-free target made of the mesh vertices and vertex normals.
registration::ScanTarget mesh_target(const TriMesh& mesh, const geometry::LandmarkSet& landmarks);

} // namespace facekit::harness
