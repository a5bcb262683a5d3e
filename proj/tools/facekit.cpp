/*
 * facekit - 3D face modelling, registration and fitting from synthetic and captured data.
 *
 * File: tools/facekit.cpp
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
#include "facekit/common/error.hpp"
#include "facekit/common/parallel.hpp"
#include "facekit/fitpipe/fit.hpp"
#include "facekit/fitpipe/fit_io.hpp"
#include "facekit/geometry/mesh_io.hpp"
#include "facekit/harness/eval.hpp"
#include "facekit/harness/study_io.hpp"
#include "facekit/morphable/base_model.hpp"
#include "facekit/neuralgen/checkpoint.hpp"
#include "facekit/neuralgen/train.hpp"
#include "facekit/registration/mae.hpp"
#include "facekit/registration/pipeline.hpp"
#include "facekit/render/image_io.hpp"
#include "facekit/render/rasterizer.hpp"

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>

using namespace facekit;
namespace fs = std::filesystem;
using geometry::TriMesh;
using geometry::Vec3;

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
    out << text;
}

std::vector<fs::path> ply_files(const fs::path& dir)
{
    if (!fs::is_directory(dir)) {
        throw Error(dir.string() + " is not a directory");
    }
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(dir)) {
        if (e.is_regular_file() && e.path().extension() == ".ply") {
            files.push_back(e.path());
        }
    }
    std::sort(files.begin(), files.end());
    return files;
}

/// Template mesh and landmarks: explicit paths or the study layout next to `near`.
geometry::TemplateAtlas load_template(const std::string& meshPath, const std::string& landmarkPath, const fs::path& near)
{
    const fs::path mesh = meshPath.empty() ? near.parent_path() / "template.obj" : fs::path(meshPath);
    const fs::path lms = landmarkPath.empty() ? near.parent_path() / "template_landmarks.json" : fs::path(landmarkPath);
    return geometry::TemplateAtlas(geometry::load_mesh(mesh), geometry::load_landmarks(lms));
}

struct GeneratorFiles
{
    std::string detail;
    std::string expression;
    std::optional<neuralgen::Checkpoint> detailCkpt;
    std::optional<neuralgen::Checkpoint> expressionCkpt;
    fitpipe::Generators generators;

    void add_options(CLI::App* app)
    {
        app->add_option("--gen-detail", detail, "Detail generator checkpoint (.fvkg)");
        app->add_option("--gen-exp", expression, "Expression generator checkpoint (.fvkg)");
    }

    /// Null when neither checkpoint is given; both are required otherwise.
    const fitpipe::Generators* load()
    {
        if (detail.empty() && expression.empty()) {
            return nullptr;
        }
        if (detail.empty() || expression.empty()) {
            throw Error("--gen-detail and --gen-exp must be given together");
        }
        detailCkpt = neuralgen::load_checkpoint(detail);
        expressionCkpt = neuralgen::load_checkpoint(expression);
        generators = {&*detailCkpt, &*expressionCkpt};
        return &generators;
    }
};

// synth ---------------------------------------------------------------------

struct SynthCommand
{
    std::string spec;
    std::string out;
    int imageSize = 256;
    double focal = 800.0;

    void run() const
    {
        const auto d = spec.empty() ? harness::DatasetSpec{} : harness::DatasetSpec::from_json(read_text(spec));
        const auto study = harness::make_study(d);
        harness::write_study(out, d, study, render::Camera::centred(imageSize, imageSize, focal));
        std::cout << "wrote " << study.coarse.size() << " coarse, " << study.detailed.size() << " detailed identities and "
                  << study.test.size() << " test samples to " << out << '\n';
    }
};

// build-model ---------------------------------------------------------------

struct BuildCommand
{
    std::string coarse;
    std::string detailed;
    std::string templateMesh;
    std::string templateLandmarks;
    std::string out;
    morphable::BuildOptions options;
    bool detailedOnly = false;

    void run() const
    {
        const fs::path detailedDir = detailed;
        const auto templ = load_template(templateMesh, templateLandmarks, detailedDir);
        const auto& topo = templ.mesh();

        std::vector<TriMesh> coarseMeshes;
        if (!coarse.empty() && !detailedOnly) {
            for (const auto& f : ply_files(coarse)) {
                coarseMeshes.push_back(geometry::load_mesh(f, &topo));
            }
        }
        // <id>_e00.ply is the neutral scan of <id>; other suffixes are expressions.
        std::map<std::string, morphable::DetailedIdentity> byId;
        for (const auto& f : ply_files(detailedDir)) {
            const std::string stem = f.stem().string();
            const auto cut = stem.rfind("_e");
            if (cut == std::string::npos) {
                throw Error("detailed scan " + f.string() + " is not named <id>_e<k>.ply");
            }
            auto& d = byId[stem.substr(0, cut)];
            auto mesh = geometry::load_mesh(f, &topo);
            if (std::stoi(stem.substr(cut + 2)) == 0) {
                d.neutral = std::move(mesh);
            } else {
                d.expressions.push_back(std::move(mesh));
            }
        }
        std::vector<morphable::DetailedIdentity> detailedSet;
        for (auto& [id, d] : byId) {
            if (d.neutral.vertices.empty()) {
                throw Error("identity " + id + " has no neutral scan");
            }
            detailedSet.push_back(std::move(d));
        }

        const auto clamped = harness::clamp_options(options, coarseMeshes.size(), detailedSet);
        const auto model = morphable::build_base_model(templ, coarseMeshes, detailedSet, clamped);
        morphable::save_model(model, out);
        std::cout << "model: " << coarseMeshes.size() << " coarse, " << detailedSet.size() << " detailed identities; shape "
                  << model.shape.components.cols() << ", texture " << model.texture.components.cols() << ", expression "
                  << model.expression.components.cols() << " components -> " << out << '\n';
    }
};

// register ------------------------------------------------------------------

struct RegisterCommand
{
    std::string model;
    std::string scan;
    std::string landmarks;
    std::string mode = "coarse";
    std::string out;
    std::string report;

    void run() const
    {
        const auto m = morphable::load_model(model);
        const auto cloud = geometry::load_point_cloud(scan);
        registration::ScanTarget target;
        target.points = cloud.points;
        target.normals = cloud.normals;
        target.landmarks3d = geometry::load_landmarks(landmarks);

        TriMesh registered;
        int iterations = 0;
        bool converged = false;
        if (mode == "coarse") {
            TriMesh mean = m.templ.mesh();
            mean.vertices = geometry::unflatten(m.shape.mean);
            const auto r = registration::register_coarse(mean, m.templ.landmarks(), target);
            registered = r.mesh;
            iterations = r.iterations;
            converged = r.converged;
        } else if (mode == "detailed") {
            const auto r = registration::register_detailed(m, target);
            registered = r.resampled;
            iterations = r.icp.iterations;
            converged = r.icp.converged;
        } else {
            throw Error("--mode must be coarse or detailed");
        }
        geometry::save_mesh(registered, out);
        const auto mae = registration::eval_mae(registered, target);
        const nlohmann::json j{{"mae", mae.mae}, {"var", mae.var}, {"iterations", iterations}, {"converged", converged}};
        if (!report.empty()) {
            write_text(report, j.dump(2) + "\n");
        }
        std::cout << j.dump() << '\n';
    }
};

// render --------------------------------------------------------------------

struct RenderCommand
{
    std::string mesh;
    std::string out;
    std::string depth;
    int width = 256;
    int height = 256;
    double focal = 800.0;
    std::vector<double> euler{0.0, 0.0, 0.0};
    std::vector<double> translation{0.0, 0.0, -600.0};
    double ambient = 0.9;

    void run() const
    {
        auto m = geometry::load_mesh(mesh);
        if (m.colors.empty()) {
            m.colors.assign(m.vertices.size(), Vec3(0.7, 0.7, 0.7));
        }
        render::Pose pose;
        pose.eulerAngles = Vec3(euler[0], euler[1], euler[2]);
        pose.translation = Vec3(translation[0], translation[1], translation[2]);
        render::RenderOptions options;
        options.recordGradients = false;
        const auto camera = render::Camera::centred(width, height, focal);
        const auto r = render::render(m, pose, render::SHLighting::ambient(ambient), camera, options);
        render::save_png(out, {r.width, r.height, r.image});
        if (!depth.empty()) {
            render::save_exr_depth(depth, r.depth, r.width, r.height);
        }
        std::cout << r.covered_count() << " pixels covered\n";
    }
};

// train ---------------------------------------------------------------------

struct TrainCommand
{
    std::string kind = "detail";
    std::string data;
    std::string out;
    std::string trace;
    int resolution = 64;
    int steps = 2000;
    int batch = 4;
    std::uint64_t seed = 0;
    bool noNormalDisc = false;

    void run() const
    {
        const auto k = neuralgen::generator_kind_from_string(kind);
        const auto spec = harness::DatasetSpec::from_json(read_text(fs::path(data) / "spec.json"));
        // Detailed-set training pairs are synthesised from the stored spec; the
        // synthesis is a pure function of it, so they equal the stored meshes.
        const auto ids = spec.detailed_ids();
        const auto samples = k == neuralgen::GeneratorKind::Detail
                                 ? harness::detail_training_set(spec.detailed_synth(), ids, resolution)
                                 : harness::expression_training_set(spec.detailed_synth(), ids, spec.expressionsUsed, resolution);
        neuralgen::TrainConfig cfg;
        cfg.steps = steps;
        cfg.batchSize = batch;
        cfg.seed = seed;
        cfg.normalDiscriminatorEnabled = !noNormalDisc;
        cfg.tracePath = trace;
        const auto gspec = k == neuralgen::GeneratorKind::Detail ? neuralgen::GeneratorSpec::detail(resolution)
                                                                 : neuralgen::GeneratorSpec::expression(resolution);
        const auto result = neuralgen::train(k, samples, gspec, cfg);
        neuralgen::save_checkpoint(out, result.generator, static_cast<std::uint64_t>(result.trace.size()));
        if (result.aborted) {
            std::cerr << "training aborted: " << result.diagnostic << '\n';
        }
        if (!result.trace.empty()) {
            std::cout << "first " << neuralgen::trace_line(result.trace.front()) << "\nlast  " << neuralgen::trace_line(result.trace.back())
                      << '\n';
        }
        std::cout << samples.size() << " samples, checkpoint -> " << out << '\n';
    }
};

// fit -----------------------------------------------------------------------

void render_phase(const TriMesh& mesh, const fitpipe::FitResult& r, const render::Camera& camera, const fs::path& path)
{
    render::RenderOptions options;
    options.recordGradients = false;
    const auto out = render::render(mesh, r.pose, r.lighting, camera, options);
    render::save_png(path, {out.width, out.height, out.image});
}

std::string trace_lines(const fitpipe::PhaseTraces& t)
{
    std::ostringstream s;
    const std::pair<const char*, const std::vector<double>*> phases[] = {
        {"warmup", &t.warmup}, {"base", &t.base}, {"detail", &t.detail}, {"expression", &t.expression}};
    for (const auto& [name, values] : phases) {
        for (std::size_t i = 0; i < values->size(); ++i) {
            s << nlohmann::json{{"phase", name}, {"iteration", i}, {"loss", (*values)[i]}}.dump() << '\n';
        }
    }
    return s.str();
}

struct FitCommand
{
    std::string image;
    std::string landmarks;
    std::string model;
    std::string config;
    std::string out;
    GeneratorFiles gens;

    void run()
    {
        const auto m = morphable::load_model(model);
        auto cfg = config.empty() ? fitpipe::FitConfig{} : fitpipe::FitConfig::from_json(read_text(config));
        const auto img = render::load_png(image);
        cfg.imageWidth = img.width;
        cfg.imageHeight = img.height;
        const auto lms = geometry::load_landmarks(landmarks);
        const auto* g = gens.load();
        fs::create_directories(out);
        const fs::path dir = out;
        const auto camera = cfg.camera();

        fitpipe::FitResult r;
        if (g != nullptr) {
            r = fitpipe::fit_image(img, lms, m, *g, cfg);
        } else {
            const auto b = fitpipe::fit_base(img, lms, m, cfg);
            r.baseParams = b.params;
            r.pose = b.pose;
            r.lighting = b.lighting;
            r.lossTrace.warmup = b.warmupTrace;
            r.lossTrace.base = b.trace;
            r.initialLandmarkError = b.initialLandmarkError;
            r.baseLandmarkError = r.landmarkError = b.landmarkError;
            r.basePhotoError = r.photoError = b.photoError;
            r.meshes.base = morphable::eval_base(m, b.params);
        }
        geometry::save_mesh(r.meshes.base, dir / "base.ply");
        render_phase(r.meshes.base, r, camera, dir / "base.png");
        if (g != nullptr) {
            geometry::save_mesh(r.meshes.detail, dir / "detail.ply");
            geometry::save_mesh(r.meshes.refined, dir / "refined.ply");
            render_phase(r.meshes.detail, r, camera, dir / "detail.png");
            render_phase(r.meshes.refined, r, camera, dir / "refined.png");
        }
        fitpipe::save_fit(r, dir / "fit.json");
        write_text(dir / "trace.jsonl", trace_lines(r.lossTrace));
        std::cout << "landmark error " << r.initialLandmarkError << " -> " << r.landmarkError << " px, photo RMSE " << r.photoError
                  << "; results in " << out << '\n';
    }
};

// transfer ------------------------------------------------------------------

struct TransferCommand
{
    std::string base;
    std::string detail;
    std::string model;
    std::string out;
    GeneratorFiles gens;

    void run()
    {
        const auto m = morphable::load_model(model);
        const auto* g = gens.load();
        if (g == nullptr) {
            throw Error("transfer needs --gen-detail and --gen-exp");
        }
        const auto a = fitpipe::load_fit(base);
        const auto b = fitpipe::load_fit(detail);
        geometry::save_mesh(fitpipe::detail_transfer(a, b, m, *g), out);
        std::cout << "transferred mesh -> " << out << '\n';
    }
};

// eval ----------------------------------------------------------------------

struct EvalCommand
{
    std::string model;
    std::string test;
    std::string protocol = "scan";
    std::string config;
    std::string method;
    std::string out;
    std::string csv;
    bool noOracle = false;
    GeneratorFiles gens;

    void run()
    {
        const auto m = morphable::load_model(model);
        const auto study = harness::load_study(test);
        auto cfg = config.empty() ? harness::EvalConfig{} : harness::EvalConfig::from_json(read_text(config));
        cfg.protocol = harness::protocol_from_string(protocol);
        cfg.scan = study.spec.synth;
        if (!method.empty()) {
            cfg.method = method;
        }
        if (noOracle) {
            cfg.oracle = false;
        }
        const auto report = harness::run_eval(m, gens.load(), study.study.test, cfg);
        harness::write_report(report, out, csv);
        std::cout << harness::report_table_csv(std::span<const harness::EvalReport>(&report, 1));
        if (report.failures > 0) {
            std::cerr << report.failures << " sample(s) failed; see " << out << '\n';
        }
    }
};

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"facekit: hybrid morphable face model, detail generators and image fitting"};
    app.require_subcommand(1);
    int threads = 0;
    app.add_option("--threads", threads, "Worker threads (default: FACEKIT_THREADS or all cores)");

    SynthCommand synth;
    auto* s = app.add_subcommand("synth", "Generate a synthetic study directory");
    s->add_option("--spec", synth.spec, "DatasetSpec JSON (defaults when omitted)");
    s->add_option("--out", synth.out, "Output directory")->required();
    s->add_option("--image-size", synth.imageSize, "Test render size in pixels");
    s->add_option("--focal", synth.focal, "Test render focal length in pixels");

    BuildCommand build;
    auto* b = app.add_subcommand("build-model", "Build the hybrid base model from registered meshes");
    b->add_option("--coarse", build.coarse, "Directory of coarse neutral meshes (*.ply)");
    b->add_option("--detailed", build.detailed, "Directory of detailed scans named <id>_e<k>.ply")->required();
    b->add_option("--template", build.templateMesh, "Template OBJ (default: ../template.obj next to --detailed)");
    b->add_option("--template-landmarks", build.templateLandmarks, "Template landmark JSON");
    b->add_option("--out", build.out, "Model file (.fvm)")->required();
    b->add_option("--shape", build.options.shapeComponents, "Coarse shape components");
    b->add_option("--shape-detail", build.options.detailShapeComponents, "Detailed shape components merged in");
    b->add_option("--tex", build.options.textureComponents, "Texture components");
    b->add_option("--exp", build.options.expressionComponents, "Expression components");
    b->add_flag("--detailed-only", build.detailedOnly, "Ignore the coarse set (ablation)");

    RegisterCommand reg;
    auto* r = app.add_subcommand("register", "Register the model template to a scan");
    r->add_option("--template", reg.model, "Model file (.fvm)")->required();
    r->add_option("--scan", reg.scan, "Scan point cloud (.ply)")->required();
    r->add_option("--landmarks", reg.landmarks, "3D landmark JSON")->required();
    r->add_option("--mode", reg.mode, "coarse or detailed")->check(CLI::IsMember({"coarse", "detailed"}));
    r->add_option("--out", reg.out, "Registered mesh")->required();
    r->add_option("--report", reg.report, "Registration report JSON");

    RenderCommand ren;
    auto* rn = app.add_subcommand("render", "Render a mesh under ambient light");
    rn->add_option("--mesh", ren.mesh, "Mesh (OBJ or PLY)")->required();
    rn->add_option("--out", ren.out, "Output PNG")->required();
    rn->add_option("--depth", ren.depth, "Optional EXR depth output");
    rn->add_option("--width", ren.width);
    rn->add_option("--height", ren.height);
    rn->add_option("--focal", ren.focal);
    rn->add_option("--euler", ren.euler, "Rotation angles x y z (rad)")->expected(3);
    rn->add_option("--translation", ren.translation, "Translation x y z (mm)")->expected(3);
    rn->add_option("--ambient", ren.ambient, "DC lighting coefficient");

    TrainCommand train;
    auto* t = app.add_subcommand("train", "Train a detail or expression generator on a study directory");
    t->add_option("--kind", train.kind, "detail or exp")->check(CLI::IsMember({"detail", "exp", "expression"}));
    t->add_option("--data", train.data, "Study directory written by synth")->required();
    t->add_option("--res", train.resolution, "Output resolution");
    t->add_option("--steps", train.steps);
    t->add_option("--batch", train.batch);
    t->add_option("--seed", train.seed);
    t->add_flag("--no-normal-disc", train.noNormalDisc, "Disable the normal-map discriminator");
    t->add_option("--trace", train.trace, "JSON-lines loss trace");
    t->add_option("--out", train.out, "Checkpoint (.fvkg)")->required();

    FitCommand fit;
    auto* f = app.add_subcommand("fit", "Fit the model (and generators) to an image");
    f->add_option("--image", fit.image, "Face image (PNG)")->required();
    f->add_option("--landmarks", fit.landmarks, "2D landmark JSON")->required();
    f->add_option("--model", fit.model, "Model file (.fvm)")->required();
    fit.gens.add_options(f);
    f->add_option("--config", fit.config, "FitConfig JSON");
    f->add_option("--out", fit.out, "Output directory")->required();

    TransferCommand transfer;
    auto* tr = app.add_subcommand("transfer", "Combine the base of one fit with the detail of another");
    tr->add_option("--base", transfer.base, "Fit JSON providing shape, texture and expression")->required();
    tr->add_option("--detail", transfer.detail, "Fit JSON providing the detail latents")->required();
    tr->add_option("--model", transfer.model, "Model file (.fvm)")->required();
    transfer.gens.add_options(tr);
    tr->add_option("--out", transfer.out, "Output mesh")->required();

    EvalCommand ev;
    auto* e = app.add_subcommand("eval", "Evaluate a model on the test split of a study directory");
    e->add_option("--model", ev.model, "Model file (.fvm)")->required();
    e->add_option("--test", ev.test, "Study directory written by synth")->required();
    e->add_option("--protocol", ev.protocol, "scan or image")->check(CLI::IsMember({"scan", "image"}));
    ev.gens.add_options(e);
    e->add_option("--config", ev.config, "EvalConfig JSON");
    e->add_option("--method", ev.method, "Row label");
    e->add_flag("--no-oracle", ev.noOracle, "Skip the oracle fits");
    e->add_option("--out", ev.out, "EvalReport JSON")->required();
    e->add_option("--csv", ev.csv, "MAE/Var table");

    CLI11_PARSE(app, argc, argv);
    if (threads > 0) {
        set_thread_count(threads);
    }
    try {
        if (*s) synth.run();
        if (*b) build.run();
        if (*r) reg.run();
        if (*rn) ren.run();
        if (*t) train.run();
        if (*f) fit.run();
        if (*tr) transfer.run();
        if (*e) ev.run();
    } catch (const std::exception& ex) {
        std::cerr << "error: " << ex.what() << '\n';
        return 1;
    }
    return 0;
}
