/*
 * facekit - 3D face modelling, registration and fitting from synthetic and captured data.
 *
 * File: core/include/facekit/geometry/uv.hpp
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

#include <Eigen/Core>

#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <span>
#include <vector>

namespace facekit::geometry {

/// Semantic landmarks given as template vertex indices, optionally paired with
/// observed 2D (pixels) or 3D (millimetres) positions.
struct LandmarkSet
{
    std::vector<int> vertexIndices;
    std::vector<Vec2> points2d;
    std::vector<Vec3> points3d;

    std::size_t size() const { return vertexIndices.size(); }
};

/// Multi-channel raster over the template UV atlas. Texel (x, y) covers the
/// uv square [x/W, (x+1)/W] x [y/H, (y+1)/H]; row y grows with v.
/// Channels are interleaved: data[(y * width + x) * channels + c].
struct UVMap
{
    int width = 0;
    int height = 0;
    int channels = 0;
    std::vector<double> data;
    std::vector<std::uint8_t> mask;

    static UVMap zeros(int width, int height, int channels, std::vector<std::uint8_t> mask);

    std::size_t texel_count() const { return static_cast<std::size_t>(width) * static_cast<std::size_t>(height); }
    std::size_t index(int x, int y) const { return static_cast<std::size_t>(y) * static_cast<std::size_t>(width) + static_cast<std::size_t>(x); }
    double& at(int x, int y, int c) { return data[index(x, y) * static_cast<std::size_t>(channels) + static_cast<std::size_t>(c)]; }
    double at(int x, int y, int c) const { return data[index(x, y) * static_cast<std::size_t>(channels) + static_cast<std::size_t>(c)]; }
    bool masked(int x, int y) const { return mask[index(x, y)] != 0; }
    std::size_t masked_count() const;

    /// Copies channels [first, first + count) into a new map with the same mask.
    UVMap slice(int first, int count) const;
    /// Zeroes every unmasked texel.
    void apply_mask();
};

/// Channel-wise concatenation; both maps must share size and mask.
UVMap concat(const UVMap& a, const UVMap& b);

/// For every texel whose centre is covered by a triangle in uv space: the
/// covering triangle and the barycentric weights of the texel centre.
struct UvRasterIndex
{
    int resolution = 0;
    std::vector<int> triangle;    ///< -1 for uncovered texels
    std::vector<Vec3> barycentric;
    std::vector<std::uint8_t> mask;
};

/// Neutral template mesh with its single-chart uv layout and landmark
/// indices. Raster indices are built lazily per resolution and cached; the
/// atlas is safe to share across threads.
class TemplateAtlas
{
public:
    TemplateAtlas() = default;
    TemplateAtlas(TriMesh mesh, LandmarkSet landmarks);

    const TriMesh& mesh() const { return mesh_; }
    const LandmarkSet& landmarks() const { return landmarks_; }
    std::size_t vertex_count() const { return mesh_.vertices.size(); }

    const UvRasterIndex& uv_index(int resolution) const;
    const std::vector<std::uint8_t>& mask(int resolution) const { return uv_index(resolution).mask; }

private:
    struct Cache
    {
        std::mutex mutex;
        std::map<int, std::unique_ptr<UvRasterIndex>> byResolution;
    };

    TriMesh mesh_;
    LandmarkSet landmarks_;
    std::shared_ptr<Cache> cache_ = std::make_shared<Cache>();
};

/// Rasterises the mesh in uv space: a texel is covered when its centre lies
/// inside a triangle (inclusive edges); shared edges go to the lowest triangle id.
UvRasterIndex build_uv_index(const TriMesh& mesh, int resolution);

/// Barycentric interpolation of a per-vertex attribute (n x channels) into a
/// square map. Throws for resolution < 4.
UVMap unwrap_to_uv(const TemplateAtlas& atlas, const Eigen::MatrixXd& attribute, int resolution);
UVMap unwrap_to_uv(const TemplateAtlas& atlas, std::span<const Vec3> attribute, int resolution);

/// Linear map from texel values to per-vertex values. Weights are stored in
/// CSR form so the adjoint (scatter back to texels) is available to callers
/// that differentiate through resampling.
struct ResamplePlan
{
    int width = 0;
    int height = 0;
    std::vector<std::size_t> offsets; ///< size n + 1
    std::vector<std::size_t> texels;
    std::vector<double> weights;
    int fallbackCount = 0;           ///< vertices that fell back to the nearest masked texel

    std::size_t vertex_count() const { return offsets.empty() ? 0 : offsets.size() - 1; }

    /// values(v, c) = sum_k w_k * map(texel_k, firstChannel + c)
    Eigen::MatrixXd apply(const UVMap& map, int firstChannel, int channelCount) const;
    std::vector<Vec3> apply3(const UVMap& map, int firstChannel) const;
    /// Adds the adjoint of apply3: grad_map(texel_k, firstChannel + c) += w_k * grad(v, c).
    void scatter3(std::span<const Vec3> grad, UVMap& gradMap, int firstChannel) const;
};

/// Per vertex: bilinear sample at the vertex uv when all four neighbours are
/// masked; otherwise a least-squares affine fit over the masked texels of the
/// surrounding 4x4 block; if that block cannot support a plane, the nearest
/// masked texel (counted in fallbackCount).
ResamplePlan make_resample_plan(const std::vector<std::uint8_t>& mask, int width, int height, std::span<const Vec2> uvs);

struct ResampleResult
{
    Eigen::MatrixXd values; ///< n x channels
    int fallbackCount = 0;
};

ResampleResult resample_uv_to_vertices(const UVMap& map, const TemplateAtlas& atlas);

/// Bilinear up-sampling that only mixes masked texels (weights renormalised).
/// The target mask takes the mask value of the nearest source texel.
UVMap upsample_uv(const UVMap& map, int targetResolution);

struct NormalMapResult
{
    UVMap normals;
    int fallbackCount = 0; ///< texels whose cross product vanished
};

/// Unit normals of a 3-channel geometry map: normalize(dP/du x dP/dv) with
/// central differences inside the mask and one-sided ones at its boundary.
NormalMapResult normal_map(const UVMap& geometry);

/// 8x8 (or factor x factor) block average of a map, masked texels only.
UVMap average_pool(const UVMap& map, int factor);

/// Mesh whose vertices are the masked texels of a 3-channel geometry map that
/// belong to a fully masked 2x2 texel quad; each quad gives two triangles
/// wound counter-clockwise in uv. uvs are the texel centres.
struct UvGridMesh
{
    TriMesh mesh;
    std::vector<std::size_t> texelOfVertex;
};

UvGridMesh uv_grid_mesh(const UVMap& geometry);

} // namespace facekit::geometry
