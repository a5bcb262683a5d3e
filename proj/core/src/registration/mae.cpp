/*
 * facekit - 3D face modelling, registration and fitting from synthetic and captured data.
 *
 * File: core/src/registration/mae.cpp
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
#include "facekit/registration/mae.hpp"

#include "facekit/common/error.hpp"
#include "facekit/common/parallel.hpp"
#include "facekit/registration/kdtree.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Geometry>

#include <cmath>
#include <limits>

namespace facekit::registration {

namespace {


std::vector<int> nearest_all(const KdTree& tree, const std::vector<Vec3>& pts)
{
    std::vector<int> idx(pts.size());
    parallel_for(0, pts.size(), [&](std::size_t i) { idx[i] = tree.nearest(pts[i]).index; });
    return idx;
}

double distance_to(const ScanTarget& gt, int q, const Vec3& x)
{
    const Vec3 d = x - gt.points[static_cast<std::size_t>(q)];
    return gt.has_normals() ? std::abs(gt.normals[static_cast<std::size_t>(q)].dot(d)) : d.norm();
}

} // namespace

MaeResult eval_mae(const geometry::TriMesh& fitted, const ScanTarget& groundTruth, const MaeConfig& config)
{
    if (fitted.vertices.empty() || groundTruth.points.empty()) {
        throw Error("eval_mae: empty input");
    }
    if (groundTruth.has_normals() && groundTruth.normals.size() != groundTruth.points.size()) {
        throw Error("eval_mae: ground-truth normals do not match the point count");
    }
    const auto box = geometry::bounding_box(groundTruth.points);
    if (box.major_axis() <= 0.0) {
        throw Error("eval_mae: ground truth has zero extent");
    }
    const double s = config.normalizedLength / box.major_axis();
    Vec3 centroid = Vec3::Zero();
    for (const auto& p : groundTruth.points) centroid += p;
    centroid /= static_cast<double>(groundTruth.points.size());

    ScanTarget gt;
    gt.normals = groundTruth.normals;
    gt.points.reserve(groundTruth.points.size());
    for (const auto& p : groundTruth.points) gt.points.push_back(s * (p - centroid));
    std::vector<Vec3> x;
    x.reserve(fitted.vertices.size());
    for (const auto& p : fitted.vertices) x.push_back(s * (p - centroid));

    // Start from matching centroids.
    Vec3 fc = Vec3::Zero(), gc = Vec3::Zero();
    for (const auto& p : x) fc += p;
    for (const auto& p : gt.points) gc += p;
    const Vec3 shift = gc / static_cast<double>(gt.points.size()) - fc / static_cast<double>(x.size());
    for (auto& p : x) p += shift;

    KdTree tree(gt.points);
    MaeResult result;
    double previous = std::numeric_limits<double>::infinity();
    const int pointIters = 10;
    for (int iter = 0; iter < config.icpIterations; ++iter) {
        const auto idx = nearest_all(tree, x);
        RigidTransform step;
        const bool planar = gt.has_normals() && iter >= pointIters;
        if (!planar) {
            std::vector<Vec3> dst(x.size());
            for (std::size_t i = 0; i < x.size(); ++i) dst[i] = gt.points[static_cast<std::size_t>(idx[i])];
            step = umeyama_align(x, dst, false);
        } else {
            Eigen::Matrix<double, 6, 6> h = Eigen::Matrix<double, 6, 6>::Zero();
            Eigen::Matrix<double, 6, 1> g = Eigen::Matrix<double, 6, 1>::Zero();
            for (std::size_t i = 0; i < x.size(); ++i) {
                const auto q = static_cast<std::size_t>(idx[i]);
                const Vec3& n = gt.normals[q];
                Eigen::Matrix<double, 6, 1> j;
                j.head<3>() = x[i].cross(n);
                j.tail<3>() = n;
                const double r = n.dot(x[i] - gt.points[q]);
                h += j * j.transpose();
                g += j * r;
            }
            h.diagonal().array() += 1e-9 * h.trace() + 1e-12;
            const Eigen::Matrix<double, 6, 1> d = -h.ldlt().solve(g);
            const Vec3 w = d.head<3>();
            if (w.norm() > 0.0) {
                step.rotation = Eigen::AngleAxisd(w.norm(), w.normalized()).toRotationMatrix();
            }
            step.translation = d.tail<3>();
        }
        x = step.apply(x);
        ++result.iterations;

        const auto after = nearest_all(tree, x);
        double energy = 0.0;
        for (std::size_t i = 0; i < x.size(); ++i) {
            const double d = distance_to(gt, after[i], x[i]);
            energy += d * d;
        }
        if (planar && std::abs(previous - energy) <= config.tolerance * std::max(previous, 1e-300)) {
            result.converged = true;
            break;
        }
        previous = energy;
    }

    const auto idx = nearest_all(tree, x);
    std::vector<double> d(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) d[i] = distance_to(gt, idx[i], x[i]);
    double sum = 0.0;
    for (double v : d) sum += v;
    result.mae = sum / static_cast<double>(d.size());
    double var = 0.0;
    for (double v : d) var += (v - result.mae) * (v - result.mae);
    result.var = var / static_cast<double>(d.size());
    return result;
}

} // namespace facekit::registration
