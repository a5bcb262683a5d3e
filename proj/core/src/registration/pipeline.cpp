/*
 * facekit - 3D face modelling, registration and fitting from synthetic and captured data.
 *
 * File: core/src/registration/pipeline.cpp
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
#include "facekit/registration/pipeline.hpp"

#include "facekit/common/error.hpp"

#include <limits>

namespace facekit::registration {

NonrigidIcpResult register_coarse(const geometry::TriMesh& templ, const geometry::LandmarkSet& templLandmarks,
                                  const ScanTarget& target, const NonrigidIcpConfig& config)
{
    const RigidTransform align = landmark_align(templ, templLandmarks, target, false);
    geometry::TriMesh aligned = templ;
    aligned.vertices = align.apply(templ.vertices);
    return nonrigid_icp(aligned, templLandmarks, target, config);
}

DetailedRegistration register_detailed(const morphable::BaseModel& model, const ScanTarget& target,
                                       const DetailedRegistrationConfig& config)
{
    if (config.detailResolution < config.baseResolution) {
        throw Error("register_detailed: detail resolution below base resolution");
    }
    DetailedRegistration out;
    out.fit = fit_base_to_scan(model, target, config.fit);
    out.baseMesh = fitted_mesh(model, out.fit);

    const auto& atlas = model.templ;
    const auto base = geometry::unwrap_to_uv(atlas, out.baseMesh.vertices, config.baseResolution);
    auto dense = geometry::upsample_uv(base, config.detailResolution);
    const auto grid = geometry::uv_grid_mesh(dense);
    if (grid.mesh.triangles.empty()) {
        throw Error("register_detailed: up-sampled geometry map has no complete texel quads");
    }

    // Template landmarks move to the grid vertex nearest in uv.
    geometry::LandmarkSet gridLandmarks;
    ScanTarget gridTarget;
    gridTarget.points = target.points;
    gridTarget.normals = target.normals;
    const auto& templ = atlas.mesh();
    const auto& tl = target.landmarks3d;
    for (std::size_t i = 0; i < tl.size() && i < tl.points3d.size(); ++i) {
        const auto& uv = templ.uvs.at(static_cast<std::size_t>(tl.vertexIndices[i]));
        int best = 0;
        double bestD = std::numeric_limits<double>::infinity();
        for (std::size_t v = 0; v < grid.mesh.uvs.size(); ++v) {
            const double d = (grid.mesh.uvs[v] - uv).squaredNorm();
            if (d < bestD) {
                bestD = d;
                best = static_cast<int>(v);
            }
        }
        gridLandmarks.vertexIndices.push_back(best);
        gridTarget.landmarks3d.vertexIndices.push_back(best);
        gridTarget.landmarks3d.points3d.push_back(tl.points3d[i]);
    }

    out.icp = nonrigid_icp(grid.mesh, gridLandmarks, gridTarget, config.icp);
    out.denseMesh = out.icp.mesh;
    out.geometry = dense;
    for (std::size_t v = 0; v < grid.texelOfVertex.size(); ++v) {
        const std::size_t t = grid.texelOfVertex[v];
        for (int c = 0; c < 3; ++c) {
            out.geometry.data[t * 3 + static_cast<std::size_t>(c)] = out.denseMesh.vertices[v][c];
        }
    }
    const auto resampled = geometry::resample_uv_to_vertices(out.geometry, atlas);
    out.resampled = out.baseMesh;
    for (std::size_t v = 0; v < out.resampled.vertices.size(); ++v) {
        out.resampled.vertices[v] = resampled.values.row(static_cast<Eigen::Index>(v)).transpose();
    }
    return out;
}

} // namespace facekit::registration
