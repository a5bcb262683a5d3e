/*
 * facekit - 3D face modelling, registration and fitting from synthetic and captured data.
 *
 * File: core/src/harness/study_io.cpp
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
#include "facekit/harness/study_io.hpp"

#include "facekit/common/error.hpp"
#include "facekit/geometry/mesh_io.hpp"
#include "facekit/harness/eval.hpp"
#include "facekit/render/image_io.hpp"

#include <nlohmann/json.hpp>

#include <cstdio>
#include <fstream>
#include <sstream>

namespace facekit::harness {

namespace fs = std::filesystem;

namespace {

std::string read_text(const fs::path& path)
{
    std::ifstream in(path);
    if (!in) {
        throw Error("cannot read " + path.string());
    }
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

void write_text(const fs::path& path, const std::string& text)
{
    std::ofstream out(path);
    if (!out) {
        throw Error("cannot write " + path.string());
    }
    out << text << '\n';
}

std::string id_name(int identity)
{
    char buf[16];
    std::snprintf(buf, sizeof(buf), "%04d", identity);
    return buf;
}

} // namespace

std::string sample_name(int identity, int expression)
{
    char buf[24];
    std::snprintf(buf, sizeof(buf), "%04d_e%02d", identity, expression);
    return buf;
}

void write_study(const fs::path& dir, const DatasetSpec& spec, const SyntheticStudy& study, const render::Camera& camera)
{
    spec.validate();
    camera.validate();
    const auto coarseIds = spec.coarse_ids();
    const auto detailedIds = spec.detailed_ids();
    if (study.coarse.size() != coarseIds.size() || study.detailed.size() != detailedIds.size()) {
        throw Error("study does not match its spec");
    }
    for (const char* sub : {"coarse", "detailed", "test"}) {
        fs::create_directories(dir / sub);
    }
    write_text(dir / "spec.json", spec.to_json());
    geometry::save_mesh(study.templ.mesh(), dir / "template.obj");
    geometry::save_landmarks(study.templ.landmarks(), dir / "template_landmarks.json");

    for (std::size_t i = 0; i < coarseIds.size(); ++i) {
        geometry::save_mesh(study.coarse[i], dir / "coarse" / (id_name(coarseIds[i]) + ".ply"));
    }
    for (std::size_t i = 0; i < detailedIds.size(); ++i) {
        const auto& d = study.detailed[i];
        geometry::save_mesh(d.neutral, dir / "detailed" / (sample_name(detailedIds[i], 0) + ".ply"));
        for (std::size_t e = 0; e < d.expressions.size(); ++e) {
            geometry::save_mesh(d.expressions[e], dir / "detailed" / (sample_name(detailedIds[i], static_cast<int>(e) + 1) + ".ply"));
        }
    }

    const auto& lms = study.templ.landmarks();
    for (std::size_t k = 0; k < study.test.size(); ++k) {
        const auto& s = study.test[k];
        const fs::path base = dir / "test" / sample_name(s.identity, s.expression);
        geometry::save_mesh(s.groundTruth, base.string() + ".ply");

        const auto scan = synth_scan(s.groundTruth, lms, spec.synth, k);
        geometry::save_point_cloud({scan.points, scan.normals, {}}, base.string() + "_scan.ply");
        geometry::save_landmarks(scan.landmarks3d, base.string() + "_scan_landmarks.json");

        const auto view = render_sample(s, lms, k, spec.synth.seed, camera);
        render::save_png(base.string() + ".png", view.image);
        geometry::save_landmarks(view.landmarks, base.string() + "_landmarks.json");

        nlohmann::json p;
        p["identity"] = s.identity;
        p["expression"] = s.expression;
        p["index"] = k;
        p["pose"] = {{"eulerAngles", {view.pose.eulerAngles.x(), view.pose.eulerAngles.y(), view.pose.eulerAngles.z()}},
                     {"translation", {view.pose.translation.x(), view.pose.translation.y(), view.pose.translation.z()}}};
        p["lighting"] = view.lighting.coefficients;
        p["camera"] = {{"focal", camera.focal}, {"cx", camera.cx}, {"cy", camera.cy}, {"width", camera.width}, {"height", camera.height}};
        write_text(base.string() + "_params.json", p.dump(2));
    }
}

StudyOnDisk load_study(const fs::path& dir)
{
    StudyOnDisk out;
    out.spec = DatasetSpec::from_json(read_text(dir / "spec.json"));
    const auto& spec = out.spec;
    auto templMesh = geometry::load_mesh(dir / "template.obj");
    auto templLms = geometry::load_landmarks(dir / "template_landmarks.json");
    out.study.templ = geometry::TemplateAtlas(std::move(templMesh), std::move(templLms));
    const TriMesh& topo = out.study.templ.mesh();

    for (int id : spec.coarse_ids()) {
        out.study.coarse.push_back(geometry::load_mesh(dir / "coarse" / (id_name(id) + ".ply"), &topo));
    }
    for (int id : spec.detailed_ids()) {
        morphable::DetailedIdentity d;
        d.neutral = geometry::load_mesh(dir / "detailed" / (sample_name(id, 0) + ".ply"), &topo);
        for (int e = 1; e < spec.expressionsUsed; ++e) {
            d.expressions.push_back(geometry::load_mesh(dir / "detailed" / (sample_name(id, e) + ".ply"), &topo));
        }
        out.study.detailed.push_back(std::move(d));
    }
    for (int id : spec.test_ids()) {
        for (int e = 0; e < spec.expressionsUsed; ++e) {
            out.study.test.push_back({id, e, geometry::load_mesh(dir / "test" / (sample_name(id, e) + ".ply"), &topo)});
        }
    }
    return out;
}

} // namespace facekit::harness
