/*
 * facekit - 3D face modelling, registration and fitting from synthetic and captured data.
 *
 * File: core/src/registration/umeyama.cpp
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
#include "facekit/common/error.hpp"
#include "facekit/registration/rigid.hpp"

#include <Eigen/Dense>

#include <map>

namespace facekit::registration {

std::vector<Vec3> RigidTransform::apply(std::span<const Vec3> points) const
{
    std::vector<Vec3> out;
    out.reserve(points.size());
    for (const auto& p : points) {
        out.push_back(apply(p));
    }
    return out;
}

RigidTransform RigidTransform::inverse() const
{
    RigidTransform inv;
    inv.rotation = rotation.transpose();
    inv.scale = 1.0 / scale;
    inv.translation = -inv.scale * (inv.rotation * translation);
    return inv;
}

RigidTransform RigidTransform::compose(const RigidTransform& first) const
{
    RigidTransform out;
    out.rotation = rotation * first.rotation;
    out.scale = scale * first.scale;
    out.translation = scale * (rotation * first.translation) + translation;
    return out;
}

RigidTransform umeyama_align(std::span<const Vec3> src, std::span<const Vec3> dst, bool withScale)
{
    if (src.size() != dst.size()) {
        throw Error("umeyama_align: point sets differ in size (" + std::to_string(src.size()) + " vs " + std::to_string(dst.size()) + ")");
    }
    if (src.size() < 3) {
        throw Error("umeyama_align: need at least 3 point pairs, got " + std::to_string(src.size()));
    }
    const double n = static_cast<double>(src.size());
    Vec3 muSrc = Vec3::Zero(), muDst = Vec3::Zero();
    for (std::size_t i = 0; i < src.size(); ++i) {
        muSrc += src[i];
        muDst += dst[i];
    }
    muSrc /= n;
    muDst /= n;
    Eigen::Matrix3d cov = Eigen::Matrix3d::Zero();
    double varSrc = 0.0;
    for (std::size_t i = 0; i < src.size(); ++i) {
        const Vec3 a = src[i] - muSrc;
        const Vec3 b = dst[i] - muDst;
        cov += b * a.transpose();
        varSrc += a.squaredNorm();
    }
    cov /= n;
    varSrc /= n;

    Eigen::JacobiSVD<Eigen::Matrix3d> svd(cov, Eigen::ComputeFullU | Eigen::ComputeFullV);
    const Vec3 sv = svd.singularValues();
    if (sv(1) <= 1e-12 * std::max(sv(0), 1e-300) || varSrc <= 0.0) {
        throw Error("umeyama_align: degenerate configuration (covariance rank < 2)");
    }
    Eigen::Matrix3d s = Eigen::Matrix3d::Identity();
    if (svd.matrixU().determinant() * svd.matrixV().determinant() < 0.0) {
        s(2, 2) = -1.0;
    }
    RigidTransform t;
    t.rotation = svd.matrixU() * s * svd.matrixV().transpose();
    t.scale = withScale ? (sv.asDiagonal() * s).trace() / varSrc : 1.0;
    t.translation = muDst - t.scale * (t.rotation * muSrc);
    return t;
}

RigidTransform landmark_align(const geometry::TriMesh& templ, const geometry::LandmarkSet& templLandmarks,
                              const ScanTarget& target, bool withScale)
{
    const auto& tl = target.landmarks3d;
    if (tl.points3d.size() != tl.vertexIndices.size()) {
        throw Error("landmark_align: target landmarks carry no 3D coordinates");
    }
    std::map<int, Vec3> targetByVertex;
    for (std::size_t i = 0; i < tl.size(); ++i) {
        targetByVertex.emplace(tl.vertexIndices[i], tl.points3d[i]);
    }
    std::vector<Vec3> src, dst;
    for (int idx : templLandmarks.vertexIndices) {
        if (auto it = targetByVertex.find(idx); it != targetByVertex.end()) {
            src.push_back(templ.vertices.at(static_cast<std::size_t>(idx)));
            dst.push_back(it->second);
            targetByVertex.erase(it);
        }
    }
    if (src.size() < 4) {
        throw Error("landmark_align: need at least 4 shared landmarks, got " + std::to_string(src.size()));
    }
    return umeyama_align(src, dst, withScale);
}

} // namespace facekit::registration
