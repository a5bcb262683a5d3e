/*
 * facekit - 3D face modelling, registration and fitting from synthetic and captured data.
 *
 * File: core/src/geometry/face_template.cpp
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
#include "facekit/geometry/face_template.hpp"

#include "facekit/common/error.hpp"

#include <cmath>
#include <numbers>

namespace facekit::geometry {

namespace {

constexpr double kWidth = 150.0;
constexpr double kHeight = 190.0;
constexpr double kDepth = 90.0;

double gauss(double du, double dv, double su, double sv)
{
    return std::exp(-0.5 * (du * du / (su * su) + dv * dv / (sv * sv)));
}

} // namespace

Vec3 face_surface(const Vec2& uv)
{
    const double u = uv.x();
    const double v = uv.y();
    const double nx = 2.0 * (u - 0.5);
    const double ny = 2.0 * (v - 0.5);
    const double r2 = nx * nx + ny * ny;
    double z = kDepth * std::sqrt(std::max(0.0, 1.0 - 0.85 * r2));
    // Nose ridge and tip.
    z += 18.0 * gauss(u - 0.5, v - 0.47, 0.045, 0.05) + 8.0 * gauss(u - 0.5, v - 0.56, 0.03, 0.08);
    // Eye sockets and brow ridge.
    z -= 9.0 * gauss(u - 0.33, v - 0.62, 0.07, 0.04) + 9.0 * gauss(u - 0.67, v - 0.62, 0.07, 0.04);
    z += 4.0 * gauss(u - 0.5, v - 0.71, 0.25, 0.025);
    // Cheekbones, lips and chin.
    z += 3.0 * gauss(u - 0.28, v - 0.48, 0.06, 0.06) + 3.0 * gauss(u - 0.72, v - 0.48, 0.06, 0.06);
    z += 4.0 * gauss(u - 0.5, v - 0.31, 0.1, 0.03) - 2.0 * gauss(u - 0.5, v - 0.23, 0.08, 0.02);
    z += 4.0 * gauss(u - 0.5, v - 0.13, 0.1, 0.04);
    return {(u - 0.5) * kWidth, (v - 0.5) * kHeight, z};
}

std::vector<Vec2> landmark_uv_layout()
{
    std::vector<Vec2> pts;
    pts.reserve(68);
    const double pi = std::numbers::pi;
    // Jaw 0-16, from the left temple around the chin to the right temple.
    for (int k = 0; k <= 16; ++k) {
        const double a = pi * (185.0 + k * (170.0 / 16.0)) / 180.0;
        pts.emplace_back(0.5 + 0.45 * std::cos(a), 0.52 + 0.44 * std::sin(a));
    }
    // Brows 17-26.
    for (int k = 0; k < 5; ++k) {
        const double t = k / 4.0;
        pts.emplace_back(0.22 + 0.2 * t, 0.72 + 0.03 * std::sin(pi * t));
    }
    for (int k = 0; k < 5; ++k) {
        const double t = k / 4.0;
        pts.emplace_back(0.58 + 0.2 * t, 0.72 + 0.03 * std::sin(pi * t));
    }
    // Nose bridge 27-30 and lower nose 31-35.
    for (int k = 0; k < 4; ++k) {
        pts.emplace_back(0.5, 0.65 - 0.05 * k);
    }
    for (int k = 0; k < 5; ++k) {
        const double du = (k - 2) * 0.035;
        pts.emplace_back(0.5 + du, 0.42 - 0.01 * (2 - std::abs(k - 2)));
    }
    // Eyes 36-41 and 42-47: outer corner, two upper, inner corner, two lower.
    auto eye = [&](double cu, double cv, bool left) {
        const double angles[6] = {180, 120, 60, 0, -60, -120};
        for (double deg : angles) {
            const double a = pi * deg / 180.0;
            const double du = 0.065 * std::cos(a) * (left ? 1.0 : -1.0);
            pts.emplace_back(cu + du, cv + 0.03 * std::sin(a));
        }
    };
    eye(0.33, 0.62, true);
    eye(0.67, 0.62, false);
    // Outer lip 48-59, inner lip 60-67 (counter-clockwise from the left corner).
    for (int k = 0; k < 12; ++k) {
        const double a = pi - k * (2.0 * pi / 12.0);
        pts.emplace_back(0.5 + 0.13 * std::cos(a), 0.29 + 0.055 * std::sin(a));
    }
    for (int k = 0; k < 8; ++k) {
        const double a = pi - k * (2.0 * pi / 8.0);
        pts.emplace_back(0.5 + 0.085 * std::cos(a), 0.29 + 0.022 * std::sin(a));
    }
    return pts;
}

double lower_face_weight(const Vec2& uv)
{
    return gauss(uv.x() - 0.5, uv.y() - 0.27, 0.2, 0.12);
}

double eye_region_weight(const Vec2& uv)
{
    return std::max(gauss(uv.x() - 0.33, uv.y() - 0.65, 0.09, 0.07), gauss(uv.x() - 0.67, uv.y() - 0.65, 0.09, 0.07));
}

TemplateAtlas make_face_template(int gridSize)
{
    if (gridSize < 8) {
        throw Error("face template grid must be at least 8");
    }
    const int g = gridSize;
    std::vector<int> remap(static_cast<std::size_t>(g * g), -1);
    TriMesh mesh;
    for (int j = 0; j < g; ++j) {
        for (int i = 0; i < g; ++i) {
            const Vec2 uv(static_cast<double>(i) / (g - 1), static_cast<double>(j) / (g - 1));
            const double nx = 2.0 * (uv.x() - 0.5);
            const double ny = 2.0 * (uv.y() - 0.5);
            if (nx * nx + ny * ny <= 1.0 + 1e-12) {
                remap[static_cast<std::size_t>(j * g + i)] = 0;
            }
        }
    }
    // Keep only cells whose three corners survive the disk clip; then compact.
    std::vector<Triangle> cells;
    auto keep = [&](int i, int j) { return remap[static_cast<std::size_t>(j * g + i)] >= 0; };
    for (int j = 0; j + 1 < g; ++j) {
        for (int i = 0; i + 1 < g; ++i) {
            const int a = j * g + i, b = j * g + i + 1, c = (j + 1) * g + i, d = (j + 1) * g + i + 1;
            // Alternate the diagonal so the lattice has no preferred direction.
            if ((i + j) % 2 == 0) {
                if (keep(i, j) && keep(i + 1, j) && keep(i + 1, j + 1)) cells.push_back({a, b, d});
                if (keep(i, j) && keep(i + 1, j + 1) && keep(i, j + 1)) cells.push_back({a, d, c});
            } else {
                if (keep(i, j) && keep(i + 1, j) && keep(i, j + 1)) cells.push_back({a, b, c});
                if (keep(i + 1, j) && keep(i + 1, j + 1) && keep(i, j + 1)) cells.push_back({b, d, c});
            }
        }
    }
    std::vector<int> used(static_cast<std::size_t>(g * g), -1);
    for (const auto& t : cells) {
        for (int idx : t) {
            used[static_cast<std::size_t>(idx)] = 0;
        }
    }
    for (int k = 0; k < g * g; ++k) {
        if (used[static_cast<std::size_t>(k)] < 0) {
            continue;
        }
        used[static_cast<std::size_t>(k)] = static_cast<int>(mesh.vertices.size());
        const Vec2 uv(static_cast<double>(k % g) / (g - 1), static_cast<double>(k / g) / (g - 1));
        mesh.uvs.push_back(uv);
        mesh.vertices.push_back(face_surface(uv));
        mesh.colors.emplace_back(0.78, 0.6, 0.5);
    }
    for (auto t : cells) {
        for (int& idx : t) {
            idx = used[static_cast<std::size_t>(idx)];
        }
        mesh.triangles.push_back(t);
    }

    LandmarkSet landmarks;
    for (const Vec2& target : landmark_uv_layout()) {
        double best = std::numeric_limits<double>::infinity();
        int bestIdx = 0;
        for (std::size_t v = 0; v < mesh.uvs.size(); ++v) {
            const double d = (mesh.uvs[v] - target).squaredNorm();
            if (d < best) {
                best = d;
                bestIdx = static_cast<int>(v);
            }
        }
        landmarks.vertexIndices.push_back(bestIdx);
    }
    return TemplateAtlas(std::move(mesh), std::move(landmarks));
}

} // namespace facekit::geometry
