/*
 * facekit - 3D face modelling, registration and fitting from synthetic and captured data.
 *
 * File: core/include/facekit/render/sh.hpp
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

#include "facekit/render/camera.hpp"

#include <array>

namespace facekit::render {

/// Three-band spherical-harmonics irradiance: 9 coefficients per colour
/// channel stored channel-major (coefficients[9 * channel + i]).
struct SHLighting
{
    std::array<double, 27> coefficients{};

    double& at(int channel, int i) { return coefficients[static_cast<std::size_t>(9 * channel + i)]; }
    double at(int channel, int i) const { return coefficients[static_cast<std::size_t>(9 * channel + i)]; }

    /// DC-only lighting with the same value in every channel.
    static SHLighting ambient(double dc);
    bool finite() const;
};

/// The nine irradiance basis functions, Lambertian convolution folded in, in
/// the order 1, (y, z, x), (xy, yz, 3z^2 - 1, xz, x^2 - y^2).
std::array<double, 9> sh_basis(const Vec3& normal);
/// Rows: basis function; columns: d/dx, d/dy, d/dz (for a unit input).
Eigen::Matrix<double, 9, 3> sh_basis_jacobian(const Vec3& normal);

/// Per-channel irradiance sum_i c_i B_i(n); the normal is renormalised.
Vec3 sh_irradiance(const Vec3& normal, const SHLighting& lighting);

/// Coefficients of the same environment rotated by `angle` about the view (z) axis.
SHLighting rotate_sh_z(const SHLighting& lighting, double angle);

} // namespace facekit::render
