/*
 * facekit - 3D face modelling, registration and fitting from synthetic and captured data.
 *
 * File: core/include/facekit/registration/nonrigid_icp.hpp
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

#include "facekit/registration/rigid.hpp"

#include <Eigen/Core>

#include <vector>

namespace facekit::registration {

/// Embedded deformation graph over template vertices. Each node carries an
/// affine map A_j and translation t_j; a vertex deforms as
/// sum_j w_ij (A_j (v_i - g_j) + g_j + t_j).
struct DeformationGraph
{
    std::vector<Vec3> nodePositions;
    std::vector<std::pair<int, int>> nodeEdges; ///< undirected, j < k
    std::vector<Eigen::Matrix3d> nodeAffine;
    std::vector<Vec3> nodeTranslation;
    /// Per vertex: (node, weight) pairs, weights non-negative and summing to 1.
    std::vector<std::vector<std::pair<int, double>>> vertexWeights;

    std::size_t node_count() const { return nodePositions.size(); }
    std::vector<Vec3> deform(std::span<const Vec3> vertices) const;
    bool connected() const;
};

/// Poisson-disk node sampling over the vertices (radius searched so that the
/// node count is close to targetNodes), k-nearest-node edges (graph made
/// connected) and vertex weights over the `vertexNodes` nearest nodes.
DeformationGraph build_deformation_graph(std::span<const Vec3> vertices, int targetNodes, int nodeNeighbors = 6,
                                         int vertexNodes = 4);

struct NonrigidIcpConfig
{
    int targetNodes = 200;
    double wFit = 1.0;
    double wPointToPoint = 0.1; ///< stabilising point-to-point share of the fit term
    double wRigid = 20.0;
    double wSmooth = 2.0;
    double wLandmark = 1.0;
    int maxOuterIters = 60;
    double maxDistance = 10.0;       ///< correspondence rejection (mm)
    double maxNormalAngleDeg = 60.0; ///< correspondence rejection
    double initialRadius = 25.0;     ///< expected initial misalignment bound (mm)
    double relativeTolerance = 1e-7;
};

struct NonrigidIcpResult
{
    geometry::TriMesh mesh;
    DeformationGraph graph;
    std::vector<double> energyTrace; ///< energy after initialisation and after every accepted step
    int iterations = 0;
    bool converged = false;
};

/// Deforms a pre-aligned template onto the target by alternating
/// closest-point correspondences with damped Gauss-Newton solves of
///   wFit * sum (point-to-plane [+ point-to-point] residuals)
/// + wRigid * sum_j |A_j^T A_j - I|_F^2
/// + wSmooth * sum_(j,k) |A_j (g_k - g_j) + g_j + t_j - (g_k + t_k)|^2
/// + wLandmark * sum |v_l - p_l|^2.
/// Correspondences beyond maxDistance or with normals more than
/// maxNormalAngleDeg apart contribute the constant maxDistance^2. A step is
/// accepted only if the energy (re-evaluated with fresh correspondences)
/// decreases, so the trace is non-increasing.
NonrigidIcpResult nonrigid_icp(const geometry::TriMesh& templ, const geometry::LandmarkSet& templLandmarks,
                               const ScanTarget& target, const NonrigidIcpConfig& config);

} // namespace facekit::registration
