/*
 * facekit - 3D face modelling, registration and fitting from synthetic and captured data.
 *
 * File: core/src/geometry/mesh.cpp
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
#include "facekit/geometry/mesh.hpp"

#include "facekit/common/error.hpp"

#include <Eigen/Geometry>

#include <map>
#include <string>

namespace facekit::geometry {

void validate(const TriMesh& mesh)
{
    const auto n = static_cast<int>(mesh.vertices.size());
    for (std::size_t f = 0; f < mesh.triangles.size(); ++f) {
        for (int idx : mesh.triangles[f]) {
            if (idx < 0 || idx >= n) {
                throw Error("face " + std::to_string(f) + " references vertex " + std::to_string(idx) +
                            " but the mesh has " + std::to_string(n) + " vertices");
            }
        }
    }
    if (!mesh.colors.empty() && mesh.colors.size() != mesh.vertices.size()) {
        throw Error("colour count " + std::to_string(mesh.colors.size()) + " does not match vertex count " +
                    std::to_string(n));
    }
    if (!mesh.uvs.empty() && mesh.uvs.size() != mesh.vertices.size()) {
        throw Error("uv count " + std::to_string(mesh.uvs.size()) + " does not match vertex count " +
                    std::to_string(n));
    }
}

bool same_topology(const TriMesh& a, const TriMesh& b)
{
    return a.vertices.size() == b.vertices.size() && a.triangles == b.triangles;
}

Vec3 face_normal_scaled(const TriMesh& mesh, int triangle)
{
    const auto& t = mesh.triangles[static_cast<std::size_t>(triangle)];
    const Vec3& a = mesh.vertices[static_cast<std::size_t>(t[0])];
    const Vec3& b = mesh.vertices[static_cast<std::size_t>(t[1])];
    const Vec3& c = mesh.vertices[static_cast<std::size_t>(t[2])];
    return (b - a).cross(c - a);
}

std::vector<Vec3> vertex_normals(const TriMesh& mesh)
{
    std::vector<Vec3> normals(mesh.vertices.size(), Vec3::Zero());
    std::vector<char> referenced(mesh.vertices.size(), 0);
    for (std::size_t f = 0; f < mesh.triangles.size(); ++f) {
        const Vec3 fn = face_normal_scaled(mesh, static_cast<int>(f));
        for (int idx : mesh.triangles[f]) {
            normals[static_cast<std::size_t>(idx)] += fn;
            referenced[static_cast<std::size_t>(idx)] = 1;
        }
    }
    for (std::size_t i = 0; i < normals.size(); ++i) {
        if (!referenced[i]) {
            throw Error("vertex " + std::to_string(i) + " is not referenced by any triangle");
        }
        const double len = normals[i].norm();
        normals[i] = len > 0.0 ? Vec3(normals[i] / len) : Vec3(0.0, 0.0, 1.0);
    }
    return normals;
}

BoundingBox bounding_box(const std::vector<Vec3>& points)
{
    BoundingBox box{Vec3::Constant(std::numeric_limits<double>::infinity()),
                    Vec3::Constant(-std::numeric_limits<double>::infinity())};
    for (const auto& p : points) {
        box.min = box.min.cwiseMin(p);
        box.max = box.max.cwiseMax(p);
    }
    return box;
}

Eigen::VectorXd flatten(const std::vector<Vec3>& points)
{
    Eigen::VectorXd flat(static_cast<Eigen::Index>(3 * points.size()));
    for (std::size_t i = 0; i < points.size(); ++i) {
        flat.segment<3>(static_cast<Eigen::Index>(3 * i)) = points[i];
    }
    return flat;
}

std::vector<Vec3> unflatten(const Eigen::VectorXd& flat)
{
    std::vector<Vec3> points(static_cast<std::size_t>(flat.size() / 3));
    for (std::size_t i = 0; i < points.size(); ++i) {
        points[i] = flat.segment<3>(static_cast<Eigen::Index>(3 * i));
    }
    return points;
}

TriMesh make_icosphere(int levels, double radius)
{
    const double t = (1.0 + std::sqrt(5.0)) / 2.0;
    TriMesh mesh;
    mesh.vertices = {{-1, t, 0}, {1, t, 0},   {-1, -t, 0}, {1, -t, 0}, {0, -1, t},  {0, 1, t},
                     {0, -1, -t}, {0, 1, -t}, {t, 0, -1},  {t, 0, 1},  {-t, 0, -1}, {-t, 0, 1}};
    mesh.triangles = {{0, 11, 5}, {0, 5, 1},  {0, 1, 7},   {0, 7, 10}, {0, 10, 11}, {1, 5, 9},  {5, 11, 4},
                      {11, 10, 2}, {10, 7, 6}, {7, 1, 8},  {3, 9, 4},  {3, 4, 2},   {3, 2, 6},  {3, 6, 8},
                      {3, 8, 9},  {4, 9, 5},  {2, 4, 11}, {6, 2, 10}, {8, 6, 7},   {9, 8, 1}};
    for (auto& v : mesh.vertices) {
        v.normalize();
    }
    for (int level = 0; level < levels; ++level) {
        std::map<std::pair<int, int>, int> midpoint;
        auto mid = [&](int a, int b) {
            const auto key = std::minmax(a, b);
            if (auto it = midpoint.find(key); it != midpoint.end()) {
                return it->second;
            }
            const Vec3 p = (mesh.vertices[static_cast<std::size_t>(a)] + mesh.vertices[static_cast<std::size_t>(b)])
                               .normalized();
            mesh.vertices.push_back(p);
            const int idx = static_cast<int>(mesh.vertices.size() - 1);
            midpoint.emplace(key, idx);
            return idx;
        };
        std::vector<Triangle> next;
        next.reserve(mesh.triangles.size() * 4);
        for (const auto& tri : mesh.triangles) {
            const int ab = mid(tri[0], tri[1]);
            const int bc = mid(tri[1], tri[2]);
            const int ca = mid(tri[2], tri[0]);
            next.push_back({tri[0], ab, ca});
            next.push_back({tri[1], bc, ab});
            next.push_back({tri[2], ca, bc});
            next.push_back({ab, bc, ca});
        }
        mesh.triangles = std::move(next);
    }
    for (auto& v : mesh.vertices) {
        v *= radius;
    }
    return mesh;
}

} // namespace facekit::geometry
