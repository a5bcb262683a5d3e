/*
 * facekit - 3D face modelling, registration and fitting from synthetic and captured data.
 *
 * File: core/include/facekit/harness/study_io.hpp
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

#include "facekit/harness/datasets.hpp"
#include "facekit/render/camera.hpp"

#include <filesystem>
#include <string>

namespace facekit::harness {

/// On-disk layout of a synthetic study:
///   spec.json                      DatasetSpec
///   template.obj, template_landmarks.json
///   coarse/<id>.ply                coarse neutral meshes
///   detailed/<id>_e<k>.ply         detailed neutral (k = 0) and expressions
///   test/<id>_e<k>.ply             ground truth
///   test/<id>_e<k>_scan.ply        scan point cloud with normals
///   test/<id>_e<k>_scan_landmarks.json
///   test/<id>_e<k>.png, test/<id>_e<k>_landmarks.json   image-protocol view
///   test/<id>_e<k>_params.json     identity, expression, pose, lighting, camera
/// Scans and views are the ones run_eval regenerates for the same spec.
void write_study(const std::filesystem::path& dir, const DatasetSpec& spec, const SyntheticStudy& study, const render::Camera& camera);

struct StudyOnDisk
{
    DatasetSpec spec;
    SyntheticStudy study;
};

/// Reads everything but the scans and views. Meshes must share the template topology.
StudyOnDisk load_study(const std::filesystem::path& dir);

/// "0061_e03"
std::string sample_name(int identity, int expression);

} // namespace facekit::harness
