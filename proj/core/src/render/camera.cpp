/*
 * facekit - 3D face modelling, registration and fitting from synthetic and captured data.
 *
 * File: core/src/render/camera.cpp
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
#include "facekit/render/camera.hpp"

#include "facekit/common/error.hpp"

#include <cmath>
#include <sstream>

namespace facekit::render {

namespace {

Eigen::Matrix3d rot_x(double a)
{
    Eigen::Matrix3d r;
    r << 1, 0, 0, 0, std::cos(a), -std::sin(a), 0, std::sin(a), std::cos(a);
    return r;
}

Eigen::Matrix3d rot_y(double a)
{
    Eigen::Matrix3d r;
    r << std::cos(a), 0, std::sin(a), 0, 1, 0, -std::sin(a), 0, std::cos(a);
    return r;
}

Eigen::Matrix3d rot_z(double a)
{
    Eigen::Matrix3d r;
    r << std::cos(a), -std::sin(a), 0, std::sin(a), std::cos(a), 0, 0, 0, 1;
    return r;
}

Eigen::Matrix3d drot_x(double a)
{
    Eigen::Matrix3d r;
    r << 0, 0, 0, 0, -std::sin(a), -std::cos(a), 0, std::cos(a), -std::sin(a);
    return r;
}

Eigen::Matrix3d drot_y(double a)
{
    Eigen::Matrix3d r;
    r << -std::sin(a), 0, std::cos(a), 0, 0, 0, -std::cos(a), 0, -std::sin(a);
    return r;
}

Eigen::Matrix3d drot_z(double a)
{
    Eigen::Matrix3d r;
    r << -std::sin(a), -std::cos(a), 0, std::cos(a), -std::sin(a), 0, 0, 0, 0;
    return r;
}

} // namespace

Eigen::Matrix3d Pose::rotation() const
{
    return rot_z(eulerAngles.z()) * rot_y(eulerAngles.y()) * rot_x(eulerAngles.x());
}

std::array<Eigen::Matrix3d, 3> Pose::rotation_derivatives() const
{
    const double a = eulerAngles.x(), b = eulerAngles.y(), c = eulerAngles.z();
    return {rot_z(c) * rot_y(b) * drot_x(a), rot_z(c) * drot_y(b) * rot_x(a), drot_z(c) * rot_y(b) * rot_x(a)};
}

Camera Camera::centred(int width, int height, double focal)
{
    Camera c;
    c.width = width;
    c.height = height;
    c.focal = focal;
    c.cx = 0.5 * width;
    c.cy = 0.5 * height;
    return c;
}

void Camera::validate() const
{
    if (!(focal > 0.0)) {
        throw Error("camera focal length must be positive");
    }
    if (width <= 0 || height <= 0 || cx < 0.0 || cy < 0.0 || cx > width || cy > height) {
        throw Error("camera principal point must lie inside the image");
    }
}

Projection project(std::span<const Vec3> vertices, const Pose& pose, const Camera& camera, double nearPlane)
{
    camera.validate();
    const Eigen::Matrix3d R = pose.rotation();
    Projection out;
    out.points.resize(vertices.size());
    out.depth.resize(vertices.size());
    out.cameraPoints.resize(vertices.size());
    std::vector<std::size_t> behind;
    for (std::size_t i = 0; i < vertices.size(); ++i) {
        const Vec3 p = R * vertices[i] + pose.translation;
        const double d = -p.z();
        out.cameraPoints[i] = p;
        out.depth[i] = d;
        if (d < nearPlane) {
            behind.push_back(i);
            continue;
        }
        out.points[i] = Vec2(camera.cx + camera.focal * p.x() / d, camera.cy - camera.focal * p.y() / d);
    }
    if (!behind.empty()) {
        std::ostringstream msg;
        msg << behind.size() << " vertices lie in front of the near plane (" << nearPlane << " mm):";
        for (std::size_t k = 0; k < behind.size() && k < 20; ++k) {
            msg << ' ' << behind[k];
        }
        if (behind.size() > 20) {
            msg << " ...";
        }
        throw Error(msg.str());
    }
    return out;
}

Eigen::Matrix<double, 2, 3> projection_jacobian(const Vec3& p, const Camera& camera)
{
    const double d = -p.z();
    const double f = camera.focal;
    Eigen::Matrix<double, 2, 3> j;
    // u = cx + f x / d, v = cy - f y / d with d = -z, so dd/dz = -1.
    j << f / d, 0.0, f * p.x() / (d * d), 0.0, -f / d, -f * p.y() / (d * d);
    return j;
}

ProjectionGradients project_backward(std::span<const Vec3> vertices, const Pose& pose, const Camera& camera,
                                     std::span<const int> indices, std::span<const Vec2> pointGrads)
{
    if (indices.size() != pointGrads.size()) {
        throw Error("project_backward: index and gradient counts differ");
    }
    const Eigen::Matrix3d R = pose.rotation();
    const auto dR = pose.rotation_derivatives();
    ProjectionGradients g;
    g.vertices.assign(vertices.size(), Vec3::Zero());
    for (std::size_t k = 0; k < indices.size(); ++k) {
        const auto i = static_cast<std::size_t>(indices[k]);
        const Vec3& v = vertices[i];
        const Vec3 p = R * v + pose.translation;
        const Vec3 pbar = projection_jacobian(p, camera).transpose() * pointGrads[k];
        g.vertices[i] += R.transpose() * pbar;
        g.translation += pbar;
        for (int a = 0; a < 3; ++a) {
            g.eulerAngles[a] += pbar.dot(dR[static_cast<std::size_t>(a)] * v);
        }
    }
    return g;
}

} // namespace facekit::render
