/*
 * facekit - 3D face modelling, registration and fitting from synthetic and captured data.
 *
 * File: tests/test_harness.cpp
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
#include "facekit/geometry/face_template.hpp"
#include "facekit/harness/datasets.hpp"
#include "facekit/harness/eval.hpp"
#include "facekit/harness/study_io.hpp"
#include "facekit/harness/synth.hpp"
#include "facekit/morphable/pca.hpp"
#include "facekit/registration/scan_fit.hpp"

#include <doctest.h>

#include <cmath>
#include <filesystem>

using namespace facekit;
using namespace facekit::harness;

namespace {

SynthSpec small_spec()
{
    SynthSpec s;
    s.seed = 11;
    s.templateGrid = 33;
    s.scanPoints = 4000;
    return s;
}

double correlation(std::span<const Vec3> a, std::span<const Vec3> b)
{
    double ab = 0.0, aa = 0.0, bb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        ab += a[i].dot(b[i]);
        aa += a[i].squaredNorm();
        bb += b[i].squaredNorm();
    }
    return ab / std::sqrt(aa * bb);
}

} // namespace

TEST_CASE("zero amplitudes reproduce the template exactly")
{
    SynthSpec s = small_spec();
    s.identityAmplitude = 0.0;
    s.detailAmplitude = 0.0;
    const auto templ = synth_template(s).mesh();
    for (int i : {0, 5, 71}) {
        const auto m = synth_identity(s, i);
        REQUIRE(m.vertices.size() == templ.vertices.size());
        for (std::size_t v = 0; v < m.vertices.size(); ++v) {
            REQUIRE(m.vertices[v] == templ.vertices[v]);
        }
        for (const auto& c : m.colors) {
            CHECK(c.minCoeff() >= 0.0);
            CHECK(c.maxCoeff() <= 1.0);
        }
    }
}

TEST_CASE("synthesis is a pure function of spec and index")
{
    const SynthSpec s = small_spec();
    const auto a = synth_identity(s, 3);
    const auto b = synth_identity(s, 3);
    CHECK(a.vertices == b.vertices);
    CHECK(a.colors == b.colors);
    const auto c = synth_identity(s, 4);
    CHECK(a.vertices != c.vertices);
    SynthSpec other = s;
    other.seed = 12;
    CHECK(synth_identity(other, 3).vertices != a.vertices);
    CHECK(synth_expression(s, 3, 2) == synth_expression(s, 3, 2));

    CHECK_THROWS_AS(synth_identity(s, s.identityCount), Error);
    CHECK_THROWS_AS(synth_expression(s, 0, s.expressionsPerIdentity), Error);
    SynthSpec bad = s;
    bad.detailAmplitude = -1.0;
    CHECK_THROWS_AS(synth_identity(bad, 0), Error);
    CHECK(SynthSpec::from_json(s.to_json()).to_json() == s.to_json());
}

TEST_CASE("identity amplitudes: smooth RMS and fine detail RMS")
{
    const SynthSpec s = small_spec();
    const auto templ = synth_template(s).mesh();
    double smooth = 0.0, detail = 0.0;
    const int n = 20;
    for (int i = 0; i < n; ++i) {
        const auto coarse = synth_identity_coarse(s, i);
        const auto fine = synth_identity(s, i);
        for (std::size_t v = 0; v < templ.vertices.size(); ++v) {
            smooth += (coarse.vertices[v] - templ.vertices[v]).squaredNorm();
            detail += (fine.vertices[v] - coarse.vertices[v]).squaredNorm();
        }
    }
    const double count = n * static_cast<double>(templ.vertices.size());
    CHECK(std::sqrt(smooth / count) == doctest::Approx(s.identityAmplitude).epsilon(0.35));
    CHECK(std::sqrt(detail / count) > 0.2 * s.detailAmplitude);
    CHECK(std::sqrt(detail / count) < 1.5 * s.detailAmplitude);
}

TEST_CASE("60 identities: 95% of shape variance within 20 components")
{
    SynthSpec s = small_spec();
    std::vector<Eigen::VectorXd> samples;
    for (int i = 0; i < 60; ++i) {
        samples.push_back(geometry::flatten(synth_identity(s, i).vertices));
    }
    const auto pca = morphable::build_pca(samples, 59, morphable::PcaChannel::Shape);
    const Eigen::VectorXd energy = pca.singularValues.array().square();
    const double total = energy.sum();
    double cumulative = 0.0;
    int needed = 0;
    while (cumulative < 0.95 * total) {
        cumulative += energy[needed++];
    }
    MESSAGE("components for 95%: " << needed);
    CHECK(needed <= 20);
}

TEST_CASE("expressions: neutral is zero, shared across identities, localised")
{
    const SynthSpec s = small_spec();
    const auto zero = synth_expression(s, 2, 0);
    for (const auto& v : zero) {
        REQUIRE(v == Vec3::Zero());
    }
    const auto uvs = synth_template(s).mesh().uvs;
    for (int e = 1; e < 6; ++e) {
        const auto a = synth_expression(s, 1, e);
        const auto b = synth_expression(s, 7, e);
        CHECK(correlation(a, b) > 0.7);
        double peak = 0.0;
        for (const auto& v : a) {
            peak = std::max(peak, v.norm());
        }
        CHECK(peak == doctest::Approx(s.expressionAmplitude).epsilon(0.6));
        double inside = 0.0, all = 0.0;
        for (std::size_t v = 0; v < a.size(); ++v) {
            const double w = std::max(geometry::lower_face_weight(uvs[v]), geometry::eye_region_weight(uvs[v]));
            inside += w * a[v].squaredNorm();
            all += a[v].squaredNorm();
        }
        CHECK(inside > 0.5 * all);
    }
    const auto mesh = synth_expression_mesh(s, 1, 3);
    const auto neutral = synth_identity(s, 1);
    const auto offsets = synth_expression(s, 1, 3);
    const auto refine = expression_refinement(offsets);
    for (std::size_t v = 0; v < mesh.vertices.size(); v += 37) {
        CHECK((mesh.vertices[v] - neutral.vertices[v] - offsets[v] - refine[v]).norm() < 1e-12);
    }
}

TEST_CASE("scan noise RMS and landmarks")
{
    SynthSpec s = small_spec();
    const auto atlas = synth_template(s);
    const auto mesh = synth_identity(s, 0);
    const auto clean = synth_scan(mesh, atlas.landmarks(), s, 4);
    s.scanNoise = 0.5;
    const auto noisy = synth_scan(mesh, atlas.landmarks(), s, 4);
    REQUIRE(noisy.points.size() == static_cast<std::size_t>(s.scanPoints));
    double sq = 0.0;
    for (std::size_t i = 0; i < noisy.points.size(); ++i) {
        const double d = (noisy.points[i] - clean.points[i]).dot(clean.normals[i]);
        sq += d * d;
    }
    const double rms = std::sqrt(sq / static_cast<double>(noisy.points.size()));
    CHECK(rms == doctest::Approx(0.5).epsilon(0.1));
    REQUIRE(noisy.landmarks3d.size() == atlas.landmarks().size());
    CHECK(noisy.landmarks3d.points3d[5] == mesh.vertices[static_cast<std::size_t>(atlas.landmarks().vertexIndices[5])]);
    CHECK(synth_scan(mesh, atlas.landmarks(), s, 5).points != noisy.points);
}

TEST_CASE("study splits are disjoint and sized as requested")
{
    DatasetSpec d;
    d.synth = small_spec();
    d.coarseCount = 6;
    d.detailedCount = 4;
    d.testCount = 3;
    d.expressionsUsed = 3;
    const auto study = make_study(d);
    CHECK(study.coarse.size() == 6);
    REQUIRE(study.detailed.size() == 4);
    CHECK(study.detailed[0].expressions.size() == 2);
    CHECK(study.test.size() == 9);
    for (const auto& t : study.test) {
        CHECK(t.identity >= 10);
    }
    d.coarseCount = 70;
    CHECK_THROWS_AS(make_study(d), Error);
}

TEST_CASE("detail training pairs: fine residual, pooled agreement")
{
    const SynthSpec s = small_spec();
    const std::vector<int> ids{0, 1};
    const auto pairs = detail_training_set(s, ids, 32);
    REQUIRE(pairs.size() == 2);
    const auto& p = pairs[0];
    REQUIRE(p.target);
    CHECK(p.cond.channels == 6);
    CHECK(p.target->channels == 6);
    double dz = 0.0, dxy = 0.0;
    for (std::size_t t = 0; t < p.cond.texel_count(); ++t) {
        if (p.cond.mask[t] == 0) {
            continue;
        }
        dz = std::max(dz, std::abs(p.target->data[t * 6 + 2] - p.cond.data[t * 6 + 2]));
        dxy = std::max(dxy, std::abs(p.target->data[t * 6] - p.cond.data[t * 6]));
    }
    CHECK(dz > 0.1);
    CHECK(dxy < 1e-9);
    const auto unpaired = detail_training_set(s, ids, 32, false);
    CHECK_FALSE(unpaired[0].target);

    const auto exp = expression_training_set(s, ids, 3, 32);
    REQUIRE(exp.size() == 6);
    CHECK(exp[0].cond.channels == 6);
    // Neutral: the target is the detailed neutral itself.
    const auto neutral = detail_training_set(s, std::vector<int>{0}, 32)[0].target->slice(0, 3);
    for (std::size_t i = 0; i < neutral.data.size(); ++i) {
        REQUIRE(exp[0].target->data[i] == doctest::Approx(neutral.data[i]));
    }
}

TEST_CASE("scan fit recovers a model-generated face")
{
    DatasetSpec d;
    d.synth = small_spec();
    d.coarseCount = 20;
    d.detailedCount = 6;
    d.testCount = 1;
    d.expressionsUsed = 3;
    const auto study = make_study(d);
    const auto model = build_full_model(study);
    auto params = morphable::BaseParams::zeros(model);
    Rng rng(3);
    for (Eigen::Index i = 0; i < std::min<Eigen::Index>(8, params.shape.size()); ++i) {
        params.shape[i] = 0.8 * rng.normal();
    }
    const auto truth = morphable::eval_base(model, params);
    SynthSpec scanSpec = d.synth;
    scanSpec.scanPoints = 8000;
    const auto scan = synth_scan(truth, model.templ.landmarks(), scanSpec);
    registration::ScanFitConfig cfg;
    cfg.fitExpression = false;
    const auto fit = registration::fit_base_to_scan(model, scan, cfg);
    const auto mesh = registration::fitted_mesh(model, fit);
    double sq = 0.0;
    for (std::size_t v = 0; v < mesh.vertices.size(); ++v) {
        sq += (mesh.vertices[v] - truth.vertices[v]).squaredNorm();
    }
    const double rmse = std::sqrt(sq / static_cast<double>(mesh.vertices.size()));
    MESSAGE("scan fit vertex RMSE " << rmse);
    CHECK(rmse < 0.5);
}

TEST_CASE("git blob hash matches git hash-object")
{
    // printf 'hello\n' | git hash-object --stdin
    CHECK(git_blob_hash("hello\n") == "ce013625030ba8dba906f756967f9e9ca394464a");
    CHECK(git_blob_hash("") == "e69de29bb2d1d6434b8b29ae775ad8c2e48c5391");
}

TEST_CASE("protocol names round trip")
{
    CHECK(protocol_from_string(to_string(Protocol::ScanFit)) == Protocol::ScanFit);
    CHECK(protocol_from_string(to_string(Protocol::ImageFit)) == Protocol::ImageFit);
    CHECK_THROWS_AS(protocol_from_string("mri"), Error);
}

TEST_CASE("EvalConfig JSON round trip")
{
    EvalConfig c;
    c.method = "ablation";
    c.protocol = Protocol::ImageFit;
    c.scan.scanNoise = 0.3;
    c.scanFit.iterations = 17;
    c.imageFit.base.iterations = 9;
    c.mae.icpIterations = 7;
    c.oracle = false;
    CHECK(EvalConfig::from_json(c.to_json()).to_json() == c.to_json());
    CHECK(EvalConfig::from_json("{}").to_json() == EvalConfig{}.to_json());
    CHECK_THROWS_AS(EvalConfig::from_json("{\"oracle\": 3"), ParseError);
}

TEST_CASE("scan protocol: oracle floor, full model beats detailed-only")
{
    DatasetSpec d;
    d.synth = small_spec();
    d.synth.scanNoise = 0.1;
    d.coarseCount = 30;
    d.detailedCount = 6;
    d.testCount = 4;
    d.expressionsUsed = 2;
    const auto study = make_study(d);
    const auto full = build_full_model(study);
    const auto detailedOnly = build_detailed_only_model(study);

    EvalConfig cfg;
    cfg.scan = d.synth;
    cfg.method = "full";
    const auto a = run_eval(full, nullptr, study.test, cfg);
    cfg.method = "detailed-only";
    const auto b = run_eval(detailedOnly, nullptr, study.test, cfg);
    MESSAGE("full " << a.mae << " (oracle " << a.oracleMae << "), detailed-only " << b.mae << " (oracle " << b.oracleMae << ")");

    CHECK(a.failures == 0);
    CHECK(b.failures == 0);
    CHECK(a.oracleFloorHolds);
    CHECK(b.oracleFloorHolds);
    CHECK(a.mae < b.mae);

    double mean = 0.0, var = 0.0;
    for (const auto& s : a.samples) {
        mean += s.mae;
        var += s.var;
    }
    CHECK(std::abs(a.mae - mean / static_cast<double>(a.samples.size())) < 1e-12);
    CHECK(std::abs(a.var - var / static_cast<double>(a.samples.size())) < 1e-12);
    CHECK(a.contentHash != b.contentHash);
    CHECK(a.contentHash.size() == 40);

    const auto again = run_eval(full, nullptr, study.test, EvalConfig{.method = "full", .scan = d.synth});
    CHECK(again.to_json() == a.to_json());

    const std::vector<EvalReport> both{a, b};
    const std::string csv = report_table_csv(both);
    CHECK(csv.rfind("method,protocol,samples,failures,MAE,Var,oracleMAE\n", 0) == 0);
    CHECK(csv.find("\ndetailed-only,scan,8,0,") != std::string::npos);
}

TEST_CASE("per-sample failures are recorded, not thrown")
{
    DatasetSpec d;
    d.synth = small_spec();
    d.coarseCount = 10;
    d.detailedCount = 3;
    d.testCount = 1;
    d.expressionsUsed = 2;
    const auto study = make_study(d);
    const auto model = build_full_model(study);
    std::vector<TestSample> bad(study.test.begin(), study.test.end());
    bad[0].groundTruth.vertices.pop_back();
    EvalConfig cfg;
    cfg.scan = d.synth;
    const auto r = run_eval(model, nullptr, bad, cfg);
    CHECK(r.failures == 1);
    CHECK(r.samples[0].failed);
    CHECK_FALSE(r.samples[0].error.empty());
    CHECK_THROWS_AS(run_eval(model, nullptr, std::span<const TestSample>{}, cfg), Error);
}

TEST_CASE("image protocol runs phase one without generators")
{
    DatasetSpec d;
    d.synth = small_spec();
    d.coarseCount = 16;
    d.detailedCount = 4;
    d.testCount = 1;
    d.expressionsUsed = 2;
    const auto study = make_study(d);
    const auto model = build_full_model(study);
    EvalConfig cfg;
    cfg.protocol = Protocol::ImageFit;
    cfg.scan = d.synth;
    cfg.imageFit.imageWidth = 128;
    cfg.imageFit.imageHeight = 128;
    cfg.imageFit.focal = 400;
    cfg.imageFit.warmupIterations = 40;
    cfg.imageFit.base.iterations = 60;
    const std::vector<TestSample> one{study.test.front()};
    const auto r = run_eval(model, nullptr, one, cfg);
    REQUIRE(r.failures == 0);
    MESSAGE("image protocol MAE " << r.mae << " oracle " << r.oracleMae);
    CHECK(std::isfinite(r.mae));
    CHECK(r.mae < 5.0);
    CHECK(r.oracleFloorHolds);
}

TEST_CASE("study directory round trip")
{
    DatasetSpec d;
    d.synth = small_spec();
    d.synth.templateGrid = 21;
    d.synth.scanPoints = 500;
    d.coarseCount = 3;
    d.detailedCount = 2;
    d.testCount = 1;
    d.expressionsUsed = 2;
    const auto study = make_study(d);
    const auto dir = std::filesystem::temp_directory_path() / "facekit_study_io_test";
    std::filesystem::remove_all(dir);
    write_study(dir, d, study, render::Camera::centred(64, 64, 200));
    CHECK(std::filesystem::exists(dir / "test" / (sample_name(5, 1) + "_scan.ply")));
    CHECK(std::filesystem::exists(dir / "test" / (sample_name(5, 1) + ".png")));

    const auto back = load_study(dir);
    CHECK(back.spec.to_json() == d.to_json());
    REQUIRE(back.study.coarse.size() == 3);
    REQUIRE(back.study.detailed.size() == 2);
    REQUIRE(back.study.detailed[1].expressions.size() == 1);
    REQUIRE(back.study.test.size() == 2);
    CHECK(back.study.test[1].expression == 1);
    CHECK(back.study.templ.landmarks().vertexIndices == study.templ.landmarks().vertexIndices);
    double worst = 0.0;
    for (std::size_t v = 0; v < study.test[1].groundTruth.vertices.size(); ++v) {
        worst = std::max(worst, (back.study.test[1].groundTruth.vertices[v] - study.test[1].groundTruth.vertices[v]).norm());
    }
    CHECK(worst < 1e-4); // float32 storage
    std::filesystem::remove_all(dir);
}
