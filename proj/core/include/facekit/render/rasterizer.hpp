/*
 * facekit - 3D face modelling, registration and fitting from synthetic and captured data.
 *
 * File: core/include/facekit/render/rasterizer.hpp
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

#include "facekit/geometry/mesh.hpp"
#include "facekit/render/camera.hpp"
#include "facekit/render/sh.hpp"

#include <memory>
#include <vector>

namespace facekit::render {

struct RenderOptions
{
    double nearPlane = 10.0;
    bool recordGradients = true;
    Vec3 background = Vec3::Zero();
};

struct RenderState;

/// Rasterised frame. Pixel (x, y) has its centre at (x + 0.5, y + 0.5); row 0
/// is the top of the image. Image values are linear RGB in [0, 1].
struct RenderOutput
{
    int width = 0;
    int height = 0;
    std::vector<double> image;        ///< height * width * 3
    std::vector<double> depth;        ///< +inf where nothing is drawn
    std::vector<std::uint8_t> mask;   ///< coverage
    std::vector<int> triangle;        ///< -1 where nothing is drawn
    std::vector<Vec3> barycentric;    ///< perspective-correct weights of the visible triangle
    std::shared_ptr<const RenderState> state; ///< forward record for render_backward

    std::size_t pixel(int x, int y) const { return static_cast<std::size_t>(y) * static_cast<std::size_t>(width) + static_cast<std::size_t>(x); }
    std::size_t covered_count() const;
};

/// Z-buffered rasterisation with back-face culling. Colour = interpolated
/// vertex albedo times SH irradiance of the interpolated camera-space normal,
/// clamped to [0, 1]. Depth ties go to the lower triangle id. Screen-degenerate
/// triangles are skipped. Needs per-vertex colours.
RenderOutput render(const geometry::TriMesh& mesh, const Pose& pose, const SHLighting& lighting, const Camera& camera,
                    const RenderOptions& options = {});

struct RenderGradients
{
    std::vector<Vec3> positions;
    std::vector<Vec3> colors;
    Vec3 eulerAngles = Vec3::Zero();
    Vec3 translation = Vec3::Zero();
    SHLighting lighting; ///< gradient per coefficient
};

/// Gradients of sum(imageGrad .* image). Pixel-to-triangle assignment is held
/// fixed; within a triangle the perspective-correct barycentrics, the
/// interpolated normals (through the area-weighted vertex normals), albedo and
/// lighting are differentiated exactly. Clamped channels pass no gradient.
/// Throws when the output carries no forward record.
RenderGradients render_backward(const RenderOutput& output, std::span<const double> imageGrad);

} // namespace facekit::render
