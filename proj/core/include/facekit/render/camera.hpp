/*
 * facekit - 3D face modelling, registration and fitting from synthetic and captured data.
 *
 * File: core/include/facekit/render/camera.hpp
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

#include <array>
#include <span>
#include <vector>

namespace facekit::render {

using geometry::Vec2;
using geometry::Vec3;

/// Head pose: Euler angles in radians applied about X, then Y, then Z
/// (R = Rz * Ry * Rx), followed by a translation in millimetres.
struct Pose
{
    Vec3 eulerAngles = Vec3::Zero();
    Vec3 translation = Vec3(0.0, 0.0, -500.0);

    Eigen::Matrix3d rotation() const;
    /// dR/d(angle k) for k = x, y, z.
    std::array<Eigen::Matrix3d, 3> rotation_derivatives() const;
};

/// Pinhole camera at the origin looking down -z with +y up. Image rows grow
/// downwards: u = cx + f x / (-z), v = cy - f y / (-z).
struct Camera
{
    double focal = 1000.0;
    double cx = 128.0;
    double cy = 128.0;
    int width = 256;
    int height = 256;

    /// Centred principal point and the given focal length.
    static Camera centred(int width, int height, double focal);
    void validate() const;
};

struct Projection
{
    std::vector<Vec2> points; ///< pixels
    std::vector<double> depth; ///< -z in camera space (mm)
    std::vector<Vec3> cameraPoints;
};

/// Projects R v + t. Throws when a vertex lies closer than nearPlane,
/// listing the offending indices.
Projection project(std::span<const Vec3> vertices, const Pose& pose, const Camera& camera, double nearPlane = 10.0);

struct ProjectionGradients
{
    std::vector<Vec3> vertices;
    Vec3 eulerAngles = Vec3::Zero();
    Vec3 translation = Vec3::Zero();
};

/// Reverse-mode gradient of sum <pointGrads_i, project(v_i)> for the selected vertices.
ProjectionGradients project_backward(std::span<const Vec3> vertices, const Pose& pose, const Camera& camera,
                                     std::span<const int> indices, std::span<const Vec2> pointGrads);

/// 2x3 Jacobian of the pixel position with respect to the camera-space point.
Eigen::Matrix<double, 2, 3> projection_jacobian(const Vec3& cameraPoint, const Camera& camera);

} // namespace facekit::render
