/*
 * facekit - 3D face modelling, registration and fitting from synthetic and captured data.
 *
 * File: core/include/facekit/harness/eval.hpp
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

#include "facekit/fitpipe/fit.hpp"
#include "facekit/harness/datasets.hpp"
#include "facekit/registration/mae.hpp"
#include "facekit/registration/scan_fit.hpp"

#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace facekit::harness {

enum class Protocol
{
    ScanFit,  ///< fit the base model to a simulated scan of each test face
    ImageFit, ///< fit to a rendering of each test face
};

const char* to_string(Protocol protocol);
Protocol protocol_from_string(const std::string& name);

struct EvalConfig
{
    std::string method = "full"; ///< row label in the table
    Protocol protocol = Protocol::ScanFit;
    SynthSpec scan;              ///< seed, scanNoise and scanPoints of the test scans
    registration::ScanFitConfig scanFit;
    fitpipe::FitConfig imageFit;
    registration::MaeConfig mae;
    bool oracle = true; ///< also evaluate the ground-truth-parameter fit

    std::string to_json() const;
    /// Missing keys keep their defaults.
    static EvalConfig from_json(const std::string& text);
};

struct SampleReport
{
    int identity = 0;
    int expression = 0;
    double mae = 0.0;       ///< mm
    double var = 0.0;       ///< mm^2
    double oracleMae = 0.0; ///< mm
    double oracleVar = 0.0;
    bool failed = false;
    std::string error;
};

/// Aggregates are over the samples that did not fail: mae is the mean of
/// the per-sample MAEs and var the mean of the per-sample variances.
struct EvalReport
{
    std::string method;
    Protocol protocol = Protocol::ScanFit;
    std::vector<SampleReport> samples;
    double mae = 0.0;
    double var = 0.0;
    double oracleMae = 0.0;
    int failures = 0;
    bool oracleFloorHolds = true; ///< oracle MAE <= fitted MAE on every evaluated sample
    std::string config;      ///< EvalConfig JSON
    std::string contentHash; ///< git blob SHA-1 of the model, generator ids, test meshes and config

    std::string to_json() const;
};

/// Mesh of the model coefficients that best reproduce the ground truth with
/// known correspondences (vertex least squares alternated with a rigid fit).
/// Seeded viewing conditions and rendering of test sample `index` for the
/// image protocol; landmarks are the exact projections of the ground-truth
/// landmark vertices.
struct SampleView
{
    render::Pose pose;
    render::SHLighting lighting;
    render::Image image;
    geometry::LandmarkSet landmarks;
};

SampleView render_sample(const TestSample& sample, const geometry::LandmarkSet& templateLandmarks, std::size_t index,
                         std::uint64_t seed, const render::Camera& camera);

TriMesh oracle_fit(const morphable::BaseModel& model, const TriMesh& groundTruth);

/// Lowest MAE the model reaches with ground-truth access: the better of
/// oracle_fit and a scan fit to the noise-free ground-truth surface.
registration::MaeResult oracle_mae(const morphable::BaseModel& model, const TriMesh& groundTruth,
                                   const registration::ScanFitConfig& scanFit, const registration::MaeConfig& mae);

/// Fits every test sample under the protocol, measures eval_mae against the
/// ground-truth mesh and aggregates. Per-sample failures are recorded in the
/// report. The image protocol uses the full pipeline when generators are
/// given and phase one alone otherwise.
EvalReport run_eval(const morphable::BaseModel& model, const fitpipe::Generators* generators, std::span<const TestSample> testSet,
                    const EvalConfig& config);

/// One row per report: method, protocol, samples, failures, MAE, Var, oracle MAE.
std::string report_table_csv(std::span<const EvalReport> reports);
void write_report(const EvalReport& report, const std::filesystem::path& jsonPath, const std::filesystem::path& csvPath);

/// git-style object hash: SHA-1 of "blob <size>\0" followed by the content.
std::string git_blob_hash(std::string_view content);

} // namespace facekit::harness
