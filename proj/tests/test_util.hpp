/*
 * facekit - 3D face modelling, registration and fitting from synthetic and captured data.
 *
 * File: tests/test_util.hpp
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
#include "facekit/geometry/mesh.hpp"
#include "facekit/registration/kdtree.hpp"
#include "facekit/registration/rigid.hpp"

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <string>

namespace facekit::test {

/// Random triangle soup over n vertices; every vertex is referenced.
inline geometry::TriMesh random_mesh(std::uint64_t seed, int vertexCount, int extraTriangles)
{
    Rng rng(seed);
    geometry::TriMesh mesh;
    for (int i = 0; i < vertexCount; ++i) {
        mesh.vertices.emplace_back(rng.uniform(-50, 50), rng.uniform(-50, 50), rng.uniform(-50, 50));
    }
    for (int i = 0; i + 2 < vertexCount; i += 3) {
        mesh.triangles.push_back({i, i + 1, i + 2});
    }
    for (int k = vertexCount - vertexCount % 3; k < vertexCount; ++k) {
        mesh.triangles.push_back({k, (k + 1) % vertexCount, (k + 2) % vertexCount});
    }
    for (int t = 0; t < extraTriangles; ++t) {
        int a = static_cast<int>(rng.index(static_cast<std::size_t>(vertexCount)));
        int b = static_cast<int>(rng.index(static_cast<std::size_t>(vertexCount)));
        int c = static_cast<int>(rng.index(static_cast<std::size_t>(vertexCount)));
        if (a != b && b != c && a != c) {
            mesh.triangles.push_back({a, b, c});
        }
    }
    return mesh;
}

inline double relative_error(double analytic, double numeric, double floor = 1e-8)
{
    return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

/// Relative error of two gradient vectors measured on their norms.
inline double vector_relative_error(const Eigen::VectorXd& a, const Eigen::VectorXd& b)
{
    const double scale = std::max({a.norm(), b.norm(), 1e-12});
    return (a - b).norm() / scale;
}

inline Eigen::Matrix3d random_rotation(Rng& rng)
{
    Eigen::Quaterniond q(rng.normal(), rng.normal(), rng.normal(), rng.normal());
    return q.normalized().toRotationMatrix();
}

/// Smooth radial-basis displacement with peak amplitude `amp`.
inline geometry::TriMesh rbf_deform(const geometry::TriMesh& mesh, std::uint64_t seed, double amp)
{
    Rng rng(seed);
    struct Centre { geometry::Vec3 c; geometry::Vec3 d; };
    std::vector<Centre> centres;
    for (int k = 0; k < 6; ++k) {
        const auto& v = mesh.vertices[rng.index(mesh.vertices.size())];
        centres.push_back({v, geometry::Vec3(rng.normal(), rng.normal(), rng.normal()).normalized()});
    }
    geometry::TriMesh out = mesh;
    double peak = 0.0;
    std::vector<geometry::Vec3> disp(mesh.vertices.size(), geometry::Vec3::Zero());
    for (std::size_t i = 0; i < mesh.vertices.size(); ++i) {
        for (const auto& c : centres) disp[i] += c.d * std::exp(-(mesh.vertices[i] - c.c).squaredNorm() / (2 * 40.0 * 40.0));
        peak = std::max(peak, disp[i].norm());
    }
    for (std::size_t i = 0; i < mesh.vertices.size(); ++i) out.vertices[i] += disp[i] * (amp / peak);
    return out;
}

/// Mean point-to-plane distance of `pts` to the surface sampled by target.
inline double surface_distance(const std::vector<geometry::Vec3>& pts, const registration::ScanTarget& target)
{
    registration::KdTree tree(target.points);
    double sum = 0.0;
    for (const auto& p : pts) {
        const auto hit = tree.nearest(p);
        sum += std::abs(target.normals[static_cast<std::size_t>(hit.index)].dot(p - target.points[static_cast<std::size_t>(hit.index)]));
    }
    return sum / static_cast<double>(pts.size());
}

inline std::filesystem::path temp_dir(const std::string& name)
{
    auto dir = std::filesystem::temp_directory_path() / ("facekit_test_" + name);
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

} // namespace facekit::test
