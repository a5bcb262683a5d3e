/*
 * facekit - 3D face modelling, registration and fitting from synthetic and captured data.
 *
 * File: core/include/facekit/registration/mae.hpp
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

namespace facekit::registration {

struct MaeConfig
{
    double normalizedLength = 200.0; ///< bounding-box major axis of the ground truth after scaling (mm)
    int icpIterations = 50;
    double tolerance = 1e-10;
};

struct MaeResult
{
    double mae = 0.0; ///< mm, at normalised scale
    double var = 0.0; ///< mm^2, population variance of the absolute distances
    int iterations = 0;
    bool converged = false;
};

/// Scales both inputs about the ground-truth centroid so that the ground
/// truth's bounding-box major axis equals normalizedLength, rigidly aligns
/// the fitted vertices to it by ICP, then reports the mean and variance of
/// the absolute vertex distances to the ground-truth surface (point-to-plane
/// when normals are given, otherwise to the nearest point).
MaeResult eval_mae(const geometry::TriMesh& fitted, const ScanTarget& groundTruth, const MaeConfig& config = {});

} // namespace facekit::registration
