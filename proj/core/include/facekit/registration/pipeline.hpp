/*
 * facekit - 3D face modelling, registration and fitting from synthetic and captured data.
 *
 * File: core/include/facekit/registration/pipeline.hpp
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

#include "facekit/geometry/uv.hpp"
#include "facekit/morphable/base_model.hpp"
#include "facekit/registration/nonrigid_icp.hpp"
#include "facekit/registration/scan_fit.hpp"

namespace facekit::registration {

/// Landmark alignment of the template onto the scan followed by non-rigid ICP.
NonrigidIcpResult register_coarse(const geometry::TriMesh& templ, const geometry::LandmarkSet& templLandmarks,
                                  const ScanTarget& target, const NonrigidIcpConfig& config = {});

struct DetailedRegistrationConfig
{
    ScanFitConfig fit;
    int baseResolution = 200;
    int detailResolution = 256; ///< 1024 for full-resolution detail, at a much higher cost
    NonrigidIcpConfig icp = [] {
        NonrigidIcpConfig c;
        c.targetNodes = 2000;
        c.maxDistance = 5.0;
        return c;
    }();
};

struct DetailedRegistration
{
    ScanFitResult fit;
    geometry::TriMesh baseMesh;  ///< fitted base model in scan coordinates
    geometry::TriMesh denseMesh; ///< deformed uv-grid mesh
    geometry::UVMap geometry;    ///< dense geometry map after deformation
    geometry::TriMesh resampled; ///< dense result resampled to the template topology
    NonrigidIcpResult icp;
};

/// Base-model fit, up-sampling of the fitted geometry in uv space from
/// baseResolution to detailResolution, non-rigid ICP of the resulting grid
/// mesh onto the scan and resampling back onto the template.
DetailedRegistration register_detailed(const morphable::BaseModel& model, const ScanTarget& target,
                                       const DetailedRegistrationConfig& config = {});

} // namespace facekit::registration
