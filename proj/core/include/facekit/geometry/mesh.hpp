/*
 * facekit - 3D face modelling, registration and fitting from synthetic and captured data.
 *
 * File: core/include/facekit/geometry/mesh.hpp
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

#include <Eigen/Core>

#include <array>
#include <vector>

namespace facekit::geometry {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Triangle = std::array<int, 3>;

/// Fixed-topology triangle mesh. Positions are in millimetres, colours are
/// linear RGB in [0, 1] and texture coordinates live in the unit square.
/// colors and uvs are either empty or hold one entry per vertex.
struct TriMesh
{
    std::vector<Vec3> vertices;
    std::vector<Triangle> triangles;
    std::vector<Vec3> colors;
    std::vector<Vec2> uvs;

    std::size_t vertex_count() const { return vertices.size(); }
    bool has_colors() const { return !colors.empty(); }
    bool has_uvs() const { return !uvs.empty(); }
};

/// Throws if indices are out of range or attribute arrays have the wrong length.
void validate(const TriMesh& mesh);

/// True if both meshes have identical triangle lists and vertex counts.
bool same_topology(const TriMesh& a, const TriMesh& b);

/// Area-weighted vertex normals. Throws if a vertex is not referenced by any triangle.
std::vector<Vec3> vertex_normals(const TriMesh& mesh);

/// Unnormalised face normal (b - a) x (c - a); its length is twice the area.
Vec3 face_normal_scaled(const TriMesh& mesh, int triangle);

struct BoundingBox
{
    Vec3 min;
    Vec3 max;
    Vec3 extent() const { return max - min; }
    double diagonal() const { return extent().norm(); }
    double major_axis() const { return extent().maxCoeff(); }
};

BoundingBox bounding_box(const std::vector<Vec3>& points);

/// Flattens positions into [x0, y0, z0, x1, ...].
Eigen::VectorXd flatten(const std::vector<Vec3>& points);
std::vector<Vec3> unflatten(const Eigen::VectorXd& flat);

/// Icosahedron subdivided `levels` times and projected onto a sphere.
TriMesh make_icosphere(int levels, double radius);

} // namespace facekit::geometry
