/*
 * facekit - 3D face modelling, registration and fitting from synthetic and captured data.
 *
 * File: core/include/facekit/registration/scan_fit.hpp
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

#include "facekit/morphable/base_model.hpp"
#include "facekit/registration/rigid.hpp"

#include <string>
#include <vector>

namespace facekit::registration {

struct ScanFitConfig
{
    int iterations = 60;
    int correspondenceRefresh = 5; ///< iterations between closest-point updates
    double wLandmark = 0.1;        ///< per landmark, relative to the per-vertex fit term
    double wPrior = 1e-4;          ///< L2 prior on coefficients (standard-deviation units)
    double wPointToPoint = 0.1;    ///< point-to-point share when the scan has normals
    double maxDistance = 10.0;
    double maxNormalAngleDeg = 60.0;
    bool fitExpression = true;
    double stepScale = 1.0; ///< halved on divergence
};

struct ScanFitResult
{
    morphable::BaseParams params;
    RigidTransform alignment; ///< maps model coordinates to scan coordinates
    std::vector<double> lossTrace; ///< loss after every iteration (correspondences of that iteration)
    std::vector<int> refreshIterations; ///< iteration indices at which correspondences were refreshed
    int halvings = 0;
    bool aborted = false;
    std::string diagnostic;
};

/// Landmark-initialised fit of shape (and optionally expression) coefficients
/// plus a rigid pose to a scan. Between correspondence refreshes the
/// correspondences are held fixed and each damped Gauss-Newton step is only
/// taken if it lowers the loss, so the trace is non-increasing there.
/// Throws when the scan landmarks cannot initialise the alignment.
ScanFitResult fit_base_to_scan(const morphable::BaseModel& model, const ScanTarget& target, const ScanFitConfig& config);

/// Fitted mesh in scan coordinates.
geometry::TriMesh fitted_mesh(const morphable::BaseModel& model, const ScanFitResult& fit);

} // namespace facekit::registration
