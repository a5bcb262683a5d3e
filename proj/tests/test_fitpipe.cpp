/*
 * facekit - 3D face modelling, registration and fitting from synthetic and captured data.
 *
 * File: tests/test_fitpipe.cpp
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
#include "facekit/harness/datasets.hpp"
#include "facekit/registration/rigid.hpp"
#include "facekit/render/rasterizer.hpp"

#include <doctest.h>

#include <chrono>
#include <cmath>

using namespace facekit;
using namespace facekit::fitpipe;

namespace {

struct Fixture
{
    morphable::BaseModel model;

    Fixture()
    {
        harness::DatasetSpec d;
        d.synth.seed = 5;
        d.synth.templateGrid = 41;
        d.coarseCount = 24;
        d.detailedCount = 6;
        d.testCount = 0;
        d.expressionsUsed = 4;
        model = harness::build_full_model(harness::make_study(d));
    }
};

const Fixture& fixture()
{
    static const Fixture f;
    return f;
}

struct Target
{
    morphable::BaseParams params;
    render::Pose pose;
    render::SHLighting lighting;
    render::Image image;
    geometry::LandmarkSet landmarks;
    TriMesh mesh;
};

Target make_target(const morphable::BaseModel& model, const FitConfig& config, std::uint64_t seed)
{
    Rng rng(seed);
    Target t;
    t.params = morphable::BaseParams::zeros(model);
    for (Eigen::Index i = 0; i < t.params.shape.size(); ++i) {
        t.params.shape[i] = (i < 10 ? 0.8 : 0.2) * rng.normal();
    }
    for (Eigen::Index i = 0; i < t.params.texture.size(); ++i) {
        t.params.texture[i] = 0.5 * rng.normal();
    }
    for (Eigen::Index i = 0; i < t.params.expression.size(); ++i) {
        t.params.expression[i] = 0.5 * rng.normal();
    }
    t.pose.eulerAngles = Vec3(rng.uniform(-0.15, 0.15), rng.uniform(-0.25, 0.25), rng.uniform(-0.08, 0.08));
    t.pose.translation = Vec3(rng.uniform(-15, 15), rng.uniform(-15, 15), -rng.uniform(550, 650));
    t.lighting = render::SHLighting::ambient(0.9);
    for (int c = 0; c < 3; ++c) {
        t.lighting.at(c, 0) += 0.05 * rng.normal();
        for (int k = 1; k < 4; ++k) {
            t.lighting.at(c, k) = 0.15 * rng.normal();
        }
    }
    t.mesh = morphable::eval_base(model, t.params);
    const auto out = render::render(t.mesh, t.pose, t.lighting, config.camera(), {10.0, false});
    t.image = {out.width, out.height, out.image};
    t.landmarks = model.templ.landmarks();
    std::vector<Vec3> pts;
    for (int idx : t.landmarks.vertexIndices) {
        pts.push_back(t.mesh.vertices[static_cast<std::size_t>(idx)]);
    }
    t.landmarks.points2d = render::project(pts, t.pose, config.camera()).points;
    return t;
}

double vertex_rmse(const TriMesh& a, const std::vector<Vec3>& b)
{
    double sq = 0.0;
    for (std::size_t v = 0; v < b.size(); ++v) {
        sq += (a.vertices[v] - b[v]).squaredNorm();
    }
    return std::sqrt(sq / static_cast<double>(b.size()));
}

} // namespace

TEST_CASE("fit_base round trip recovers landmarks and geometry")
{
    const auto& model = fixture().model;
    FitConfig config;
    int passed = 0;
    for (std::uint64_t seed = 1; seed <= 3; ++seed) {
        const Target t = make_target(model, config, seed);
        const auto start = std::chrono::steady_clock::now();
        const BaseFit fit = fit_base(t.image, t.landmarks, model, config);
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        // Shape recovery is compared after a rigid alignment, which removes
        // the pose/shape gauge freedom of the model.
        const auto fitted = morphable::eval_base(model, fit.params);
        const auto align = registration::umeyama_align(fitted.vertices, t.mesh.vertices, false);
        TriMesh aligned;
        aligned.vertices = align.apply(fitted.vertices);
        const auto box = geometry::bounding_box(t.mesh.vertices);
        const double diag = (box.max - box.min).norm();
        const double rmse = vertex_rmse(aligned, t.mesh.vertices);
        MESSAGE("seed " << seed << ": landmarks " << fit.initialLandmarkError << " -> " << fit.landmarkError << " px, rmse " << rmse
                        << " mm (" << 100.0 * rmse / diag << "% of diag), photo " << fit.photoError << ", " << secs << " s");
        CHECK(fit.landmarkError <= fit.initialLandmarkError);
        passed += fit.landmarkError < 1.0 && rmse < 0.01 * diag;
    }
    CHECK(passed >= 2);
}

namespace {

neuralgen::GeneratorSpec small_generator_spec(neuralgen::GeneratorKind kind)
{
    auto spec = kind == neuralgen::GeneratorKind::Detail ? neuralgen::GeneratorSpec::detail(32) : neuralgen::GeneratorSpec::expression(32);
    spec.channelsPerLevel = {24, 16, 12, 8};
    spec.latentDim = 32;
    spec.mappingDepth = 2;
    return spec;
}

/// A "trained" checkpoint: random weights everywhere including the output
/// layer, so the output depends on the latent.
neuralgen::Checkpoint random_checkpoint(neuralgen::GeneratorKind kind, std::uint64_t seed, double outputWeight = 0.3)
{
    neuralgen::Checkpoint c{neuralgen::Generator(small_generator_spec(kind), seed), 1, 0};
    auto& params = c.generator.parameters();
    Rng rng(seed + 100);
    for (std::size_t i = 0; i < params.slots().size(); ++i) {
        const auto& name = params.slot(i).name;
        if (name.find("to_output") != std::string::npos || name.find("noise") != std::string::npos) {
            for (auto& v : params.values(i)) {
                v = outputWeight * rng.normal();
            }
        }
    }
    c.specHash = c.generator.spec().hash();
    return c;
}

FitConfig quick_config()
{
    FitConfig c;
    c.base.iterations = 60;
    c.detail.iterations = 12;
    c.expression.iterations = 12;
    return c;
}

bool smoothed_non_increasing(const std::vector<double>& trace, int window, double tolerance)
{
    if (trace.size() < static_cast<std::size_t>(2 * window)) {
        return true;
    }
    std::vector<double> means;
    for (std::size_t i = 0; i + static_cast<std::size_t>(window) <= trace.size(); i += static_cast<std::size_t>(window)) {
        double s = 0.0;
        for (int k = 0; k < window; ++k) {
            s += trace[i + static_cast<std::size_t>(k)];
        }
        means.push_back(s / window);
    }
    for (std::size_t i = 1; i < means.size(); ++i) {
        if (means[i] > means[i - 1] * (1.0 + tolerance)) {
            return false;
        }
    }
    return true;
}

} // namespace

TEST_CASE("fit_base argument checks and the zero-iteration prior")
{
    const auto& model = fixture().model;
    FitConfig config;
    const Target t = make_target(model, config, 9);
    geometry::LandmarkSet five = t.landmarks;
    five.vertexIndices.resize(5);
    five.points2d.resize(5);
    CHECK_THROWS_AS(fit_base(t.image, five, model, config), Error);
    render::Image small = t.image;
    small.width = 128;
    CHECK_THROWS_AS(fit_base(small, t.landmarks, model, config), Error);
    FitConfig bad = config;
    bad.wPhoto = -1.0;
    CHECK_THROWS_AS(fit_base(t.image, t.landmarks, model, bad), Error);

    config.base.iterations = 0;
    const BaseFit fit = fit_base(t.image, t.landmarks, model, config);
    CHECK(fit.trace.empty());
    CHECK(fit.params.shape.isZero(0.0));
    CHECK(fit.params.texture.isZero(0.0));
    CHECK(fit.params.expression.isZero(0.0));
    CHECK(fit.landmarkError == fit.initialLandmarkError);
    CHECK(fit.initialLandmarkError < 10.0);
    CHECK(smoothed_non_increasing(fit.warmupTrace, 10, 1e-6));
}

TEST_CASE("unwrap stage and conditional layouts")
{
    const auto& model = fixture().model;
    const auto zero = morphable::BaseParams::zeros(model);
    const auto u = unwrap_stage(model, zero, 32);
    const auto mean = geometry::unwrap_to_uv(model.templ, std::span<const Vec3>(geometry::unflatten(model.shape.mean)), 32);
    CHECK(u.shape.data == mean.data);
    for (double v : u.expression.data) {
        REQUIRE(v == 0.0);
    }
    const auto c = u.detail_condition();
    CHECK(c.channels == 6);
    CHECK(c.slice(3, 3).data == u.texture.data);

    auto p = zero;
    p.expression[0] = 1.5;
    const auto ue = unwrap_stage(model, p, 32);
    CHECK(ue.shape.data == u.shape.data);
    const auto ce = expression_condition(ue.shape, ue.expression);
    REQUIRE(ce.channels == 6);
    for (std::size_t t = 0; t < ce.texel_count(); t += 7) {
        for (int k = 0; k < 3; ++k) {
            CHECK(ce.data[6 * t + static_cast<std::size_t>(k)] ==
                  ue.shape.data[3 * t + static_cast<std::size_t>(k)] + ue.expression.data[3 * t + static_cast<std::size_t>(k)]);
            CHECK(ce.data[6 * t + 3 + static_cast<std::size_t>(k)] == ue.expression.data[3 * t + static_cast<std::size_t>(k)]);
        }
    }
}

TEST_CASE("assemble_final: round trip, constant colour, topology")
{
    const auto& model = fixture().model;
    Rng rng(4);
    auto p = morphable::BaseParams::zeros(model);
    for (Eigen::Index i = 0; i < p.shape.size(); ++i) {
        p.shape[i] = rng.normal();
    }
    const auto mesh = morphable::eval_base(model, p);
    const auto g = geometry::unwrap_to_uv(model.templ, std::span<const Vec3>(mesh.vertices), 256);
    auto tex = g;
    for (std::size_t i = 0; i < tex.data.size(); i += 3) {
        tex.data[i] = 0.25;
        tex.data[i + 1] = 0.5;
        tex.data[i + 2] = 0.75;
    }
    const auto out = assemble_final(g, &tex, model.templ);
    CHECK(out.triangles == model.templ.mesh().triangles);
    double worst = 0.0;
    for (std::size_t v = 0; v < out.vertices.size(); ++v) {
        worst = std::max(worst, (out.vertices[v] - mesh.vertices[v]).norm());
        REQUIRE((out.colors[v] - Vec3(0.25, 0.5, 0.75)).norm() < 1e-12);
    }
    const auto box = geometry::bounding_box(mesh.vertices);
    MESSAGE("unwrap/assemble worst vertex error " << worst << " mm");
    CHECK(worst < 0.02 * (box.max - box.min).minCoeff());
    CHECK_THROWS_AS(assemble_final(tex.slice(0, 2), nullptr, model.templ), Error);
}

TEST_CASE("latent phases: checks, zero iterations, fixed scene blocks")
{
    const auto& model = fixture().model;
    FitConfig config = quick_config();
    const Target t = make_target(model, config, 2);
    const BaseFit base = fit_base(t.image, t.landmarks, model, config);
    const auto u = unwrap_stage(model, base.params, 32);
    const Eigen::VectorXd e = morphable::eval_geometry(model, base.params, true) - morphable::eval_geometry(model, base.params, false);
    const auto offsets = geometry::unflatten(e);
    const FitScene scene{&t.image, &t.landmarks, base.pose, base.lighting};

    auto detail = random_checkpoint(neuralgen::GeneratorKind::Detail, 1);
    auto untrained = detail;
    untrained.step = 0;
    CHECK_THROWS_AS(fit_detail(scene, u.detail_condition(), offsets, model, untrained, config), Error);
    const auto exp = random_checkpoint(neuralgen::GeneratorKind::Expression, 2);
    CHECK_THROWS_AS(fit_detail(scene, u.detail_condition(), offsets, model, exp, config), Error);

    FitConfig zeroIt = config;
    zeroIt.detail.iterations = 0;
    const auto z0 = fit_detail(scene, u.detail_condition(), offsets, model, detail, zeroIt);
    CHECK(z0.trace.empty());
    CHECK(z0.output.data == detail.generator.forward(u.detail_condition(), z0.latent).data);

    const auto fitted = fit_detail(scene, u.detail_condition(), offsets, model, detail, config);
    CHECK(fitted.latent.z != z0.latent.z);
    CHECK(fitted.trace.back() < fitted.trace.front());
    const auto refined = fit_exp_refine(scene, fitted.output, u.expression, model, exp, config);
    CHECK(refined.output.channels == 3);
    CHECK(refined.trace.back() < refined.trace.front());
}

TEST_CASE("identity generator leaves the phase-one photo error unchanged")
{
    const auto& model = fixture().model;
    FitConfig config;
    config.base.iterations = 150;
    config.detail.iterations = 30;
    const Target t = make_target(model, config, 3);
    const BaseFit base = fit_base(t.image, t.landmarks, model, config);
    // Untrained weights give output = condition; mark it trained so the phase runs.
    auto spec = small_generator_spec(neuralgen::GeneratorKind::Detail);
    spec.baseResolution = 8;
    spec.outputResolution = 128;
    spec.channelsPerLevel = {8, 8, 8, 8, 8};
    const neuralgen::Checkpoint identity{neuralgen::Generator(spec, 3), 1, spec.hash()};
    const auto u = unwrap_stage(model, base.params, 128);
    const Eigen::VectorXd e = morphable::eval_geometry(model, base.params, true) - morphable::eval_geometry(model, base.params, false);
    const FitScene scene{&t.image, &t.landmarks, base.pose, base.lighting};
    const auto fit = fit_detail(scene, u.detail_condition(), geometry::unflatten(e), model, identity, config);
    MESSAGE("phase one photo " << base.photoError << ", phase two " << fit.photoError);
    CHECK(std::abs(fit.photoError - base.photoError) <= 0.01 * base.photoError);
}

TEST_CASE("full pipeline: determinism, fixed pose, self transfer, smoothed traces")
{
    const auto& model = fixture().model;
    const FitConfig config = quick_config();
    const Target t = make_target(model, config, 4);
    const auto gd = random_checkpoint(neuralgen::GeneratorKind::Detail, 5);
    const auto ge = random_checkpoint(neuralgen::GeneratorKind::Expression, 6);
    const Generators gens{&gd, &ge};

    const int threads = thread_count();
    set_thread_count(1);
    const FitResult a = fit_image(t.image, t.landmarks, model, gens, config);
    set_thread_count(3);
    const FitResult b = fit_image(t.image, t.landmarks, model, gens, config);
    set_thread_count(threads);

    CHECK(a.meshes.refined.vertices == b.meshes.refined.vertices);
    CHECK(a.meshes.detail.colors == b.meshes.detail.colors);
    CHECK(a.detailLatent.flatten() == b.detailLatent.flatten());
    CHECK(a.expLatent.flatten() == b.expLatent.flatten());
    CHECK(a.lossTrace.base == b.lossTrace.base);
    CHECK(a.lossTrace.expression == b.lossTrace.expression);

    const BaseFit base = fit_base(t.image, t.landmarks, model, config);
    CHECK(a.pose.eulerAngles == base.pose.eulerAngles);
    CHECK(a.pose.translation == base.pose.translation);
    CHECK(a.lighting.coefficients == base.lighting.coefficients);
    CHECK(a.baseParams.expression == base.params.expression);
    CHECK(a.baseLandmarkError <= a.initialLandmarkError);
    CHECK(smoothed_non_increasing(a.lossTrace.base, 10, 0.02));

    CHECK(a.meshes.refined.triangles == model.templ.mesh().triangles);
    const TriMesh self = detail_transfer(a, a, model, gens);
    CHECK(self.vertices == a.meshes.refined.vertices);
    CHECK(self.colors == a.meshes.refined.colors);

    FitResult loaded = fit_from_json(fit_to_json(a));
    restore_meshes(loaded, model, gens);
    CHECK(loaded.meshes.refined.vertices == a.meshes.refined.vertices);
    CHECK(loaded.lighting.coefficients == a.lighting.coefficients);
    CHECK(detail_transfer(loaded, a, model, gens).vertices == self.vertices);
    CHECK_THROWS_AS(fit_from_json("{}"), ParseError);

    const auto other = random_checkpoint(neuralgen::GeneratorKind::Detail, 7);
    CHECK_THROWS_AS(detail_transfer(a, a, model, Generators{&other, &ge}), Error);
}

TEST_CASE("transfer decomposition arithmetic")
{
    const auto& model = fixture().model;
    const auto base = unwrap_stage(model, morphable::BaseParams::zeros(model), 32).shape;
    auto detailA = base;
    auto detailB = base;
    Rng rng(1);
    for (std::size_t i = 0; i < base.data.size(); ++i) {
        detailA.data[i] += 0.3 * rng.normal();
        detailB.data[i] += 0.3 * rng.normal();
    }
    detailA.apply_mask();
    detailB.apply_mask();
    // Base from A is the shared base here, details from B.
    const auto transfer = detailB;
    const auto d = transfer_decomposition(transfer, base, detailA, base, detailB, base);
    CHECK(d.detailDonorCorrelation == doctest::Approx(1.0));
    CHECK(std::abs(d.baseDonorCorrelation) < 0.1);
    CHECK(d.lowFrequencyDeviation < 0.3);
}

TEST_CASE("fit config json round trip")
{
    FitConfig c;
    c.seed = 17;
    c.detail.iterations = 7;
    c.wRegNoise = 0.5;
    const auto back = FitConfig::from_json(c.to_json());
    CHECK(back.to_json() == c.to_json());
    CHECK_THROWS_AS(FitConfig::from_json("{\"base\": {\"iterations\": -1}}"), Error);
    CHECK_THROWS_AS(FitConfig::from_json("not json"), ParseError);
}
