/*
 * facekit - 3D face modelling, registration and fitting from synthetic and captured data.
 *
 * File: core/src/fitpipe/fit_io.cpp
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
#include "facekit/fitpipe/fit_io.hpp"

#include "facekit/common/error.hpp"

#include <nlohmann/json.hpp>

#include <fstream>
#include <sstream>

namespace facekit::fitpipe {

namespace {

using nlohmann::json;

json vec_json(const Eigen::VectorXd& v)
{
    return std::vector<double>(v.data(), v.data() + v.size());
}

Eigen::VectorXd json_vec(const json& j)
{
    const auto v = j.get<std::vector<double>>();
    return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

json latent_json(const neuralgen::DetailLatent& l)
{
    return {{"z", l.z}, {"noise", l.noise}};
}

neuralgen::DetailLatent json_latent(const json& j)
{
    neuralgen::DetailLatent l;
    l.z = j.at("z").get<std::vector<double>>();
    l.noise = j.at("noise").get<std::vector<std::vector<double>>>();
    return l;
}

json id_json(const GeneratorId& id)
{
    // Hex strings keep 64-bit values exact in every JSON reader.
    std::ostringstream a, b;
    a << std::hex << id.specHash;
    b << std::hex << id.parameterHash;
    return {{"specHash", a.str()}, {"parameterHash", b.str()}};
}

GeneratorId json_id(const json& j)
{
    return {std::stoull(j.at("specHash").get<std::string>(), nullptr, 16), std::stoull(j.at("parameterHash").get<std::string>(), nullptr, 16)};
}

} // namespace

std::string fit_to_json(const FitResult& r)
{
    json j;
    j["format"] = "facekit-fit";
    j["version"] = 1;
    j["baseParams"] = {{"shape", vec_json(r.baseParams.shape)},
                       {"texture", vec_json(r.baseParams.texture)},
                       {"expression", vec_json(r.baseParams.expression)}};
    j["pose"] = {{"eulerAngles", {r.pose.eulerAngles.x(), r.pose.eulerAngles.y(), r.pose.eulerAngles.z()}},
                 {"translation", {r.pose.translation.x(), r.pose.translation.y(), r.pose.translation.z()}}};
    j["lighting"] = r.lighting.coefficients;
    j["detailLatent"] = latent_json(r.detailLatent);
    j["expLatent"] = latent_json(r.expLatent);
    j["lossTrace"] = {{"warmup", r.lossTrace.warmup}, {"base", r.lossTrace.base}, {"detail", r.lossTrace.detail}, {"expression", r.lossTrace.expression}};
    j["landmarkError"] = r.landmarkError;
    j["initialLandmarkError"] = r.initialLandmarkError;
    j["baseLandmarkError"] = r.baseLandmarkError;
    j["photoError"] = r.photoError;
    j["basePhotoError"] = r.basePhotoError;
    j["detailGenerator"] = id_json(r.detailGenerator);
    j["expGenerator"] = id_json(r.expGenerator);
    return j.dump();
}

FitResult fit_from_json(const std::string& text)
{
    try {
        const json j = json::parse(text);
        if (j.value("format", "") != "facekit-fit" || j.value("version", 0) != 1) {
            throw ParseError("not a version 1 facekit fit file");
        }
        FitResult r;
        const auto& p = j.at("baseParams");
        r.baseParams.shape = json_vec(p.at("shape"));
        r.baseParams.texture = json_vec(p.at("texture"));
        r.baseParams.expression = json_vec(p.at("expression"));
        const auto e = j.at("pose").at("eulerAngles").get<std::vector<double>>();
        const auto t = j.at("pose").at("translation").get<std::vector<double>>();
        if (e.size() != 3 || t.size() != 3) {
            throw ParseError("pose needs three angles and three translation components");
        }
        r.pose.eulerAngles = Vec3(e[0], e[1], e[2]);
        r.pose.translation = Vec3(t[0], t[1], t[2]);
        r.lighting.coefficients = j.at("lighting").get<std::array<double, 27>>();
        r.detailLatent = json_latent(j.at("detailLatent"));
        r.expLatent = json_latent(j.at("expLatent"));
        const auto& tr = j.at("lossTrace");
        r.lossTrace.warmup = tr.at("warmup").get<std::vector<double>>();
        r.lossTrace.base = tr.at("base").get<std::vector<double>>();
        r.lossTrace.detail = tr.at("detail").get<std::vector<double>>();
        r.lossTrace.expression = tr.at("expression").get<std::vector<double>>();
        r.landmarkError = j.at("landmarkError").get<double>();
        r.initialLandmarkError = j.at("initialLandmarkError").get<double>();
        r.baseLandmarkError = j.at("baseLandmarkError").get<double>();
        r.photoError = j.at("photoError").get<double>();
        r.basePhotoError = j.at("basePhotoError").get<double>();
        r.detailGenerator = json_id(j.at("detailGenerator"));
        r.expGenerator = json_id(j.at("expGenerator"));
        return r;
    } catch (const json::exception& ex) {
        throw ParseError(std::string("fit file: ") + ex.what());
    } catch (const std::invalid_argument& ex) {
        throw ParseError(std::string("fit file: bad hash: ") + ex.what());
    }
}

void save_fit(const FitResult& result, const std::filesystem::path& path)
{
    std::ofstream out(path);
    if (!out) {
        throw Error("cannot write " + path.string());
    }
    out << fit_to_json(result) << '\n';
}

FitResult load_fit(const std::filesystem::path& path)
{
    std::ifstream in(path);
    if (!in) {
        throw Error("cannot read " + path.string());
    }
    std::stringstream ss;
    ss << in.rdbuf();
    return fit_from_json(ss.str());
}

void restore_meshes(FitResult& result, const morphable::BaseModel& model, const Generators& generators)
{
    const PipelineMaps maps = evaluate_pipeline(model, generators, result.baseParams, result.detailLatent, result.expLatent);
    result.meshes = pipeline_meshes(model, result.baseParams, maps);
}

} // namespace facekit::fitpipe
