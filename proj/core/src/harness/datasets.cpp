/*
 * facekit - 3D face modelling, registration and fitting from synthetic and captured data.
 *
 * File: core/src/harness/datasets.cpp
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
#include "facekit/harness/datasets.hpp"

#include "facekit/common/error.hpp"
#include "facekit/common/parallel.hpp"

#include <nlohmann/json.hpp>

#include <set>

namespace facekit::harness {

namespace {

std::vector<int> id_range(int begin, int count)
{
    std::vector<int> ids(static_cast<std::size_t>(count));
    for (int i = 0; i < count; ++i) {
        ids[static_cast<std::size_t>(i)] = begin + i;
    }
    return ids;
}

geometry::UVMap unwrap_mesh(const geometry::TemplateAtlas& atlas, const TriMesh& mesh, int resolution)
{
    return geometry::concat(geometry::unwrap_to_uv(atlas, std::span<const Vec3>(mesh.vertices), resolution),
                            geometry::unwrap_to_uv(atlas, std::span<const Vec3>(mesh.colors), resolution));
}

} // namespace

void DatasetSpec::validate() const
{
    synth.validate();
    if (coarseCount < 0 || detailedCount < 0 || testCount < 0) {
        throw Error("dataset counts must be non-negative");
    }
    if (coarseCount + detailedCount + testCount > synth.identityCount) {
        throw Error("dataset needs " + std::to_string(coarseCount + detailedCount + testCount) + " identities but the population has " +
                    std::to_string(synth.identityCount));
    }
    if (expressionsUsed < 1 || expressionsUsed > synth.expressionsPerIdentity) {
        throw Error("expressionsUsed must lie in [1, expressionsPerIdentity]");
    }
    if (narrowFrom < 0 || narrowSpread < 0) {
        throw Error("narrowFrom and narrowSpread must be non-negative");
    }
}

std::string DatasetSpec::to_json() const
{
    nlohmann::json j;
    j["synth"] = nlohmann::json::parse(synth.to_json());
    j["coarseCount"] = coarseCount;
    j["detailedCount"] = detailedCount;
    j["testCount"] = testCount;
    j["expressionsUsed"] = expressionsUsed;
    j["narrowFrom"] = narrowFrom;
    j["narrowSpread"] = narrowSpread;
    return j.dump(2);
}

DatasetSpec DatasetSpec::from_json(const std::string& text)
{
    DatasetSpec d;
    try {
        const auto j = nlohmann::json::parse(text);
        if (j.contains("synth")) {
            d.synth = SynthSpec::from_json(j.at("synth").dump());
        }
        d.coarseCount = j.value("coarseCount", d.coarseCount);
        d.detailedCount = j.value("detailedCount", d.detailedCount);
        d.testCount = j.value("testCount", d.testCount);
        d.expressionsUsed = j.value("expressionsUsed", d.expressionsUsed);
        d.narrowFrom = j.value("narrowFrom", d.narrowFrom);
        d.narrowSpread = j.value("narrowSpread", d.narrowSpread);
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("dataset spec: ") + e.what());
    }
    d.validate();
    return d;
}

std::vector<int> DatasetSpec::coarse_ids() const { return id_range(0, coarseCount); }
std::vector<int> DatasetSpec::detailed_ids() const { return id_range(coarseCount, detailedCount); }
std::vector<int> DatasetSpec::test_ids() const { return id_range(coarseCount + detailedCount, testCount); }

SynthSpec DatasetSpec::detailed_synth() const
{
    SynthSpec s = synth;
    s.factorSpread.assign(static_cast<std::size_t>(s.identityFactors), 1.0);
    for (int k = narrowFrom; k < s.identityFactors; ++k) {
        s.factorSpread[static_cast<std::size_t>(k)] = narrowSpread;
    }
    return s;
}

SyntheticStudy make_study(const DatasetSpec& spec)
{
    spec.validate();
    const auto coarseIds = spec.coarse_ids();
    const auto detailedIds = spec.detailed_ids();
    const auto testIds = spec.test_ids();
    std::set<int> train(coarseIds.begin(), coarseIds.end());
    train.insert(detailedIds.begin(), detailedIds.end());
    for (int id : testIds) {
        if (train.count(id) != 0) {
            throw Error("identity " + std::to_string(id) + " is in both the training and the test split");
        }
    }

    SyntheticStudy study;
    study.templ = synth_template(spec.synth);
    study.coarse.resize(coarseIds.size());
    parallel_for(0, coarseIds.size(), [&](std::size_t i) { study.coarse[i] = synth_identity_coarse(spec.synth, coarseIds[i]); });

    const SynthSpec narrow = spec.detailed_synth();
    study.detailed.resize(detailedIds.size());
    parallel_for(0, detailedIds.size(), [&](std::size_t i) {
        auto& d = study.detailed[i];
        d.neutral = synth_identity(narrow, detailedIds[i]);
        for (int e = 1; e < spec.expressionsUsed; ++e) {
            d.expressions.push_back(synth_expression_mesh(narrow, detailedIds[i], e));
        }
    });

    const auto perIdentity = static_cast<std::size_t>(spec.expressionsUsed);
    study.test.resize(testIds.size() * perIdentity);
    parallel_for(0, study.test.size(), [&](std::size_t k) {
        const int id = testIds[k / perIdentity];
        const int e = static_cast<int>(k % perIdentity);
        study.test[k] = {id, e, synth_expression_mesh(spec.synth, id, e)};
    });
    return study;
}

morphable::BuildOptions clamp_options(const morphable::BuildOptions& options, std::size_t coarse, std::span<const morphable::DetailedIdentity> detailed)
{
    std::size_t offsets = 0;
    for (const auto& d : detailed) {
        offsets += d.expressions.size();
    }
    const int primary = static_cast<int>(coarse > 0 ? coarse : detailed.size()) - 1;
    morphable::BuildOptions o = options;
    o.shapeComponents = std::min(o.shapeComponents, primary);
    o.textureComponents = std::min(o.textureComponents, primary);
    o.detailShapeComponents = coarse > 0 ? std::min(o.detailShapeComponents, static_cast<int>(detailed.size()) - 1) : 0;
    o.expressionComponents = std::min(o.expressionComponents, static_cast<int>(offsets) - 1);
    return o;
}

morphable::BaseModel build_full_model(const SyntheticStudy& study, const morphable::BuildOptions& options)
{
    return morphable::build_base_model(study.templ, study.coarse, study.detailed,
                                       clamp_options(options, study.coarse.size(), study.detailed));
}

morphable::BaseModel build_detailed_only_model(const SyntheticStudy& study, const morphable::BuildOptions& options)
{
    return morphable::build_base_model(study.templ, {}, study.detailed, clamp_options(options, 0, study.detailed));
}

std::vector<neuralgen::TrainingSample> detail_training_set(const SynthSpec& spec, std::span<const int> identities,
                                                           int resolution, bool paired)
{
    const auto atlas = synth_template(spec);
    std::vector<neuralgen::TrainingSample> out(identities.size());
    parallel_for(0, identities.size(), [&](std::size_t i) {
        out[i].cond = unwrap_mesh(atlas, synth_identity_coarse(spec, identities[i]), resolution);
        if (paired) {
            out[i].target = unwrap_mesh(atlas, synth_identity(spec, identities[i]), resolution);
        }
    });
    return out;
}

std::vector<neuralgen::TrainingSample> expression_training_set(const SynthSpec& spec, std::span<const int> identities,
                                                               int expressions, int resolution)
{
    if (expressions < 1 || expressions > spec.expressionsPerIdentity) {
        throw Error("expression count must lie in [1, expressionsPerIdentity]");
    }
    const auto atlas = synth_template(spec);
    const auto per = static_cast<std::size_t>(expressions);
    std::vector<neuralgen::TrainingSample> out(identities.size() * per);
    parallel_for(0, out.size(), [&](std::size_t k) {
        const int id = identities[k / per];
        const int e = static_cast<int>(k % per);
        const TriMesh neutral = synth_identity(spec, id);
        const auto offsets = synth_expression(spec, id, e);
        const auto refine = expression_refinement(offsets);
        std::vector<Vec3> base(neutral.vertices.size());
        std::vector<Vec3> refined(neutral.vertices.size());
        for (std::size_t v = 0; v < base.size(); ++v) {
            base[v] = neutral.vertices[v] + offsets[v];
            refined[v] = base[v] + refine[v];
        }
        out[k].cond = geometry::concat(geometry::unwrap_to_uv(atlas, std::span<const Vec3>(base), resolution),
                                       geometry::unwrap_to_uv(atlas, std::span<const Vec3>(offsets), resolution));
        out[k].target = geometry::unwrap_to_uv(atlas, std::span<const Vec3>(refined), resolution);
    });
    return out;
}

} // namespace facekit::harness
