/*
 * facekit - 3D face modelling, registration and fitting from synthetic and captured data.
 *
 * File: core/include/facekit/harness/datasets.hpp
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

#include "facekit/harness/synth.hpp"
#include "facekit/morphable/base_model.hpp"
#include "facekit/neuralgen/losses.hpp"

#include <span>
#include <string>
#include <vector>

namespace facekit::harness {

/// Identity index layout of a synthetic study: coarse identities first, then
/// detailed ones, then the test split.
struct DatasetSpec
{
    SynthSpec synth;
    int coarseCount = 48;
    int detailedCount = 12;
    int testCount = 12;
    int expressionsUsed = 5; ///< per detailed or test identity, neutral included
    /// Detailed identities vary less: their identity factors from this index
    /// on are scaled by narrowSpread.
    int narrowFrom = 6;
    double narrowSpread = 0.25;

    void validate() const;
    std::string to_json() const;
    static DatasetSpec from_json(const std::string& text);
    std::vector<int> coarse_ids() const;
    std::vector<int> detailed_ids() const;
    std::vector<int> test_ids() const;
    /// SynthSpec used for the detailed identities.
    SynthSpec detailed_synth() const;
};

struct TestSample
{
    int identity = 0;
    int expression = 0;
    TriMesh groundTruth; ///< detailed mesh in template topology
};

struct SyntheticStudy
{
    geometry::TemplateAtlas templ;
    std::vector<TriMesh> coarse;
    std::vector<morphable::DetailedIdentity> detailed;
    std::vector<TestSample> test;
};

/// Generates the coarse, detailed and test sets. Throws when an identity
/// index would appear in both the training and test split.
SyntheticStudy make_study(const DatasetSpec& spec);

/// Caps component counts at what the sample counts support.
morphable::BuildOptions clamp_options(const morphable::BuildOptions& options, std::size_t coarseCount,
                                      std::span<const morphable::DetailedIdentity> detailed);

/// Hybrid model (coarse + detailed) and the detailed-only ablation, with
/// component counts capped by clamp_options.
morphable::BaseModel build_full_model(const SyntheticStudy& study, const morphable::BuildOptions& options = {});
morphable::BaseModel build_detailed_only_model(const SyntheticStudy& study, const morphable::BuildOptions& options = {});

/// Detail-generator samples: condition = unwrapped coarse geometry and
/// colours; target (when paired) = the detailed geometry and colours.
std::vector<neuralgen::TrainingSample> detail_training_set(const SynthSpec& spec, std::span<const int> identities,
                                                           int resolution, bool paired = true);

/// Expression-generator samples for every (identity, expression) pair with
/// expression in [0, expressions): condition = (S_detail + E, E), target = the
/// refined expression geometry.
std::vector<neuralgen::TrainingSample> expression_training_set(const SynthSpec& spec, std::span<const int> identities,
                                                               int expressions, int resolution);

} // namespace facekit::harness
