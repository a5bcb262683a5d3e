/*
 * facekit - 3D face modelling, registration and fitting from synthetic and captured data.
 *
 * File: core/include/facekit/registration/rigid.hpp
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
#include "facekit/geometry/uv.hpp"

#include <Eigen/Core>

#include <span>

namespace facekit::registration {

using geometry::Vec3;

/// x -> scale * rotation * x + translation
struct RigidTransform
{
    Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
    Vec3 translation = Vec3::Zero();
    double scale = 1.0;

    Vec3 apply(const Vec3& p) const { return scale * (rotation * p) + translation; }
    std::vector<Vec3> apply(std::span<const Vec3> points) const;
    RigidTransform inverse() const;
    /// (*this) after `first`: x -> this(first(x))
    RigidTransform compose(const RigidTransform& first) const;
};

/// Scan or fused point cloud with optional unit normals and 3D landmarks.
struct ScanTarget
{
    std::vector<Vec3> points;
    std::vector<Vec3> normals;
    geometry::LandmarkSet landmarks3d;

    bool has_normals() const { return !normals.empty(); }
};

/// Closed-form least-squares similarity (withScale) or rigid transform
/// mapping src onto dst. Throws when fewer than 3 pairs are given or the
/// point configuration is degenerate (cross-covariance rank < 2).
RigidTransform umeyama_align(std::span<const Vec3> src, std::span<const Vec3> dst, bool withScale);

/// Rigid alignment of the template landmark vertices onto the 3D landmarks of
/// the target (matched by vertex index). Needs at least 4 shared landmarks.
RigidTransform landmark_align(const geometry::TriMesh& templ, const geometry::LandmarkSet& templLandmarks,
                              const ScanTarget& target, bool withScale = false);

} // namespace facekit::registration
