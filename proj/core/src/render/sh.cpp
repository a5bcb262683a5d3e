/*
 * facekit - 3D face modelling, registration and fitting from synthetic and captured data.
 *
 * File: core/src/render/sh.cpp
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
#include "facekit/render/sh.hpp"

#include <cmath>

namespace facekit::render {

namespace {

constexpr double kPi = 3.14159265358979323846;
// Real SH normalisation times the Lambertian band factors pi, 2 pi / 3, pi / 4.
constexpr double kB0 = kPi * 0.282095;
constexpr double kB1 = (2.0 * kPi / 3.0) * 0.488603;
constexpr double kB2a = (kPi / 4.0) * 1.092548;
constexpr double kB2b = (kPi / 4.0) * 0.315392;
constexpr double kB2c = (kPi / 4.0) * 0.546274;

} // namespace

SHLighting SHLighting::ambient(double dc)
{
    SHLighting l;
    for (int c = 0; c < 3; ++c) {
        l.at(c, 0) = dc;
    }
    return l;
}

bool SHLighting::finite() const
{
    for (double c : coefficients) {
        if (!std::isfinite(c)) {
            return false;
        }
    }
    return true;
}

std::array<double, 9> sh_basis(const Vec3& n)
{
    const double x = n.x(), y = n.y(), z = n.z();
    return {kB0,
            kB1 * y,
            kB1 * z,
            kB1 * x,
            kB2a * x * y,
            kB2a * y * z,
            kB2b * (3.0 * z * z - 1.0),
            kB2a * x * z,
            kB2c * (x * x - y * y)};
}

Eigen::Matrix<double, 9, 3> sh_basis_jacobian(const Vec3& n)
{
    const double x = n.x(), y = n.y(), z = n.z();
    Eigen::Matrix<double, 9, 3> j;
    j << 0, 0, 0,
         0, kB1, 0,
         0, 0, kB1,
         kB1, 0, 0,
         kB2a * y, kB2a * x, 0,
         0, kB2a * z, kB2a * y,
         0, 0, kB2b * 6.0 * z,
         kB2a * z, 0, kB2a * x,
         kB2c * 2.0 * x, -kB2c * 2.0 * y, 0;
    return j;
}

Vec3 sh_irradiance(const Vec3& normal, const SHLighting& lighting)
{
    const double len = normal.norm();
    const Vec3 n = len > 0.0 ? Vec3(normal / len) : Vec3(0.0, 0.0, 1.0);
    const auto b = sh_basis(n);
    Vec3 out = Vec3::Zero();
    for (int c = 0; c < 3; ++c) {
        for (int i = 0; i < 9; ++i) {
            out[c] += lighting.at(c, i) * b[static_cast<std::size_t>(i)];
        }
    }
    return out;
}

SHLighting rotate_sh_z(const SHLighting& lighting, double angle)
{
    // A point at azimuth phi moves to phi + angle. Band-1 pairs (x, y) and the
    // band-2 pairs (xz, yz) rotate by angle, (x^2 - y^2, 2xy) by 2 angle.
    // Coefficients transform with the same rotation as the basis directions
    // because the environment is rotated, not the normal.
    const double c1 = std::cos(angle), s1 = std::sin(angle);
    const double c2 = std::cos(2.0 * angle), s2 = std::sin(2.0 * angle);
    SHLighting out = lighting;
    for (int ch = 0; ch < 3; ++ch) {
        const double ly = lighting.at(ch, 1), lx = lighting.at(ch, 3);
        out.at(ch, 3) = c1 * lx - s1 * ly;
        out.at(ch, 1) = s1 * lx + c1 * ly;
        const double lyz = lighting.at(ch, 5), lxz = lighting.at(ch, 7);
        out.at(ch, 7) = c1 * lxz - s1 * lyz;
        out.at(ch, 5) = s1 * lxz + c1 * lyz;
        // x^2 - y^2 and xy use different constants: B4 = a xy, B8 = c (x^2 - y^2) with a = 2c.
        const double lxy = lighting.at(ch, 4), lxx = lighting.at(ch, 8);
        out.at(ch, 8) = c2 * lxx - s2 * lxy;
        out.at(ch, 4) = s2 * lxx + c2 * lxy;
    }
    return out;
}

} // namespace facekit::render
