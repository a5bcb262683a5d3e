/*
 * facekit - 3D face modelling, registration and fitting from synthetic and captured data.
 *
 * File: tests/acceptance.cpp
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
// Acceptance suite: one PASS/FAIL line per criterion; the exit status is
// nonzero when any criterion fails.

#include "fd_util.hpp"
#include "test_util.hpp"

#include "facekit/common/error.hpp"
#include "facekit/common/parallel.hpp"
#include "facekit/fitpipe/fit.hpp"
#include "facekit/geometry/face_template.hpp"
#include "facekit/harness/datasets.hpp"
#include "facekit/harness/eval.hpp"
#include "facekit/morphable/pca.hpp"
#include "facekit/neuralgen/checkpoint.hpp"
#include "facekit/neuralgen/layers.hpp"
#include "facekit/neuralgen/losses.hpp"
#include "facekit/neuralgen/train.hpp"
#include "facekit/registration/nonrigid_icp.hpp"
#include "facekit/registration/rigid.hpp"
#include "facekit/render/rasterizer.hpp"

#include <CLI11.hpp>
#include <Eigen/SVD>

#include <chrono>
#include <cstdio>
#include <functional>
#include <iostream>
#include <optional>
#include <sstream>

using namespace facekit;
using namespace facekit::test;
using geometry::TriMesh;
using geometry::UVMap;
using geometry::Vec3;

namespace {

struct Outcome
{
    bool pass = false;
    std::string detail;
};

struct Criterion
{
    std::string id;
    std::string title;
    double budgetSeconds = 0.0; ///< 0: no runtime limit
    std::function<Outcome()> run;
};

std::string fmt(const char* format, auto... args)
{
    char buf[512];
    std::snprintf(buf, sizeof buf, format, args...);
    return buf;
}

// Lazily built inputs shared by several criteria. Each is charged to the
// first criterion that needs it.
struct Shared
{
    std::optional<harness::SyntheticStudy> studyStore;
    std::optional<morphable::BaseModel> fullStore;
    std::optional<neuralgen::Checkpoint> detailGen;
    std::optional<neuralgen::Checkpoint> expGen;

    const harness::SyntheticStudy& study()
    {
        if (!studyStore) studyStore = harness::make_study(harness::DatasetSpec{});
        return *studyStore;
    }
    const morphable::BaseModel& full_model()
    {
        if (!fullStore) fullStore = harness::build_full_model(study());
        return *fullStore;
    }
};

Shared shared;

// Population the generators are trained on: ids [0, 200) for training and
// [200, 210) held out.
harness::SynthSpec generator_population()
{
    harness::SynthSpec s;
    s.identityCount = 220;
    return s;
}

std::vector<int> id_range(int first, int last)
{
    std::vector<int> ids;
    for (int i = first; i < last; ++i) ids.push_back(i);
    return ids;
}

// PCA ---------------------------------------------------------------------

Outcome pca_oracle()
{
    constexpr int n = 50, dim = 500, rank = 10;
    Rng rng(3);
    // Low-rank structure with well separated spectrum plus isotropic noise.
    Eigen::MatrixXd basis(dim, 20);
    for (Eigen::Index i = 0; i < basis.size(); ++i) basis.data()[i] = rng.normal();
    std::vector<Eigen::VectorXd> samples;
    for (int k = 0; k < n; ++k) {
        Eigen::VectorXd x = Eigen::VectorXd::Constant(dim, 2.0);
        for (int j = 0; j < 20; ++j) x += basis.col(j) * (rng.normal() * 10.0 / (1.0 + j));
        for (int d = 0; d < dim; ++d) x[d] += 0.05 * rng.normal();
        samples.push_back(x);
    }
    const auto model = morphable::build_pca(samples, rank, morphable::PcaChannel::Shape);

    Eigen::MatrixXd data(dim, n);
    for (int k = 0; k < n; ++k) data.col(k) = samples[static_cast<std::size_t>(k)];
    const Eigen::VectorXd mean = data.rowwise().mean();
    const Eigen::MatrixXd centred = data.colwise() - mean;
    const Eigen::JacobiSVD<Eigen::MatrixXd> svd(centred, Eigen::ComputeThinU);
    const Eigen::MatrixXd oracle = svd.matrixU().leftCols(rank);

    const double angle = morphable::max_principal_angle(model.components, oracle);
    double residualGap = 0.0;
    for (const auto& x : samples) {
        const Eigen::VectorXd mine = x - model.reconstruct(model.project(x));
        const Eigen::VectorXd ref = (x - mean) - oracle * (oracle.transpose() * (x - mean));
        residualGap = std::max(residualGap, (mine - ref).cwiseAbs().maxCoeff());
    }
    const double svGap = (model.singularValues - svd.singularValues().head(rank)).cwiseAbs().maxCoeff() / svd.singularValues()[0];
    return {angle < 1e-8 && residualGap < 1e-10,
            fmt("max principal angle %.2e rad (< 1e-8), residual gap %.2e (< 1e-10), singular value gap %.2e", angle, residualGap,
                svGap)};
}

// Gradients ---------------------------------------------------------------

struct GradientLog
{
    std::vector<std::pair<std::string, double>> entries;
    std::vector<double> tolerances;

    void add(const std::string& name, double err, double tol)
    {
        entries.emplace_back(name, err);
        tolerances.push_back(tol);
    }
    Outcome outcome() const
    {
        int failed = 0;
        std::size_t worst = 0;
        double worstRatio = -1.0;
        std::ostringstream fails;
        for (std::size_t i = 0; i < entries.size(); ++i) {
            const double ratio = entries[i].second / tolerances[i];
            if (!(entries[i].second <= tolerances[i])) {
                ++failed;
                fails << " " << entries[i].first << "=" << entries[i].second;
            }
            if (ratio > worstRatio || std::isnan(ratio)) {
                worstRatio = ratio;
                worst = i;
            }
        }
        std::string d = fmt("%zu checks, worst %s rel err %.2e (tol %.0e)", entries.size(), entries[worst].first.c_str(),
                            entries[worst].second, tolerances[worst]);
        if (failed) d += "; failing:" + fails.str();
        return {failed == 0, d};
    }
};

TriMesh coloured_face()
{
    auto mesh = geometry::make_face_template(25).mesh();
    for (std::size_t i = 0; i < mesh.vertices.size(); ++i) {
        const auto& uv = mesh.uvs[i];
        mesh.colors[i] = Vec3(0.5 + 0.3 * uv.x(), 0.4 + 0.2 * std::sin(6 * uv.y()), 0.3 + 0.2 * uv.x() * uv.y());
    }
    return mesh;
}

void render_gradients(GradientLog& log)
{
    using namespace render;
    const TriMesh mesh = coloured_face();
    Pose pose;
    pose.eulerAngles = Vec3(0.1, -0.15, 0.05);
    pose.translation = Vec3(3.0, -2.0, -520.0);
    SHLighting light = SHLighting::ambient(0.8);
    for (int c = 0; c < 3; ++c) {
        light.at(c, 1) = 0.1;
        light.at(c, 2) = 0.25;
        light.at(c, 3) = -0.1 + 0.05 * c;
        light.at(c, 6) = 0.05;
        light.at(c, 8) = -0.03;
    }
    const Camera camera = Camera::centred(32, 32, 90.0);
    Rng rng(7);
    std::vector<double> weights(32 * 32 * 3), target(32 * 32 * 3);
    for (auto& w : weights) w = rng.uniform(-1.0, 1.0);
    for (auto& t : target) t = rng.uniform(0.0, 1.0);
    auto linear = [&](const RenderOutput& out) { return dot(out.image, weights); };

    const auto out = render::render(mesh, pose, light, camera);
    if (out.covered_count() < 300) throw Error("gradient scene covers too few pixels");
    const auto g = render_backward(out, weights);

    {
        Eigen::VectorXd ana(27), num(27);
        for (int k = 0; k < 27; ++k) {
            const double eps = 1e-5;
            SHLighting hi = light, lo = light;
            hi.coefficients[static_cast<std::size_t>(k)] += eps;
            lo.coefficients[static_cast<std::size_t>(k)] -= eps;
            num(k) = (linear(render::render(mesh, pose, hi, camera)) - linear(render::render(mesh, pose, lo, camera))) / (2 * eps);
            ana(k) = g.lighting.coefficients[static_cast<std::size_t>(k)];
        }
        log.add("sh", vector_relative_error(ana, num), 1e-3);
    }
    {
        Rng pick(2);
        Eigen::VectorXd ana(30), num(30);
        for (int k = 0; k < 30; ++k) {
            const auto v = pick.index(mesh.vertices.size());
            const int c = static_cast<int>(pick.index(3));
            const double eps = 1e-5;
            TriMesh hi = mesh, lo = mesh;
            hi.colors[v][c] += eps;
            lo.colors[v][c] -= eps;
            num(k) = (linear(render::render(hi, pose, light, camera)) - linear(render::render(lo, pose, light, camera))) / (2 * eps);
            ana(k) = g.colors[v][c];
        }
        log.add("colors", vector_relative_error(ana, num), 1e-3);
    }
    {
        Eigen::Vector3d num;
        bool stable = true;
        for (int a = 0; a < 3; ++a) {
            const double eps = 1e-6;
            Pose hi = pose, lo = pose;
            hi.eulerAngles[a] += eps;
            lo.eulerAngles[a] -= eps;
            const auto rh = render::render(mesh, hi, light, camera), rl = render::render(mesh, lo, light, camera);
            stable = stable && rh.triangle == out.triangle && rl.triangle == out.triangle;
            num[a] = (linear(rh) - linear(rl)) / (2 * eps);
        }
        log.add("euler", stable ? vector_relative_error(g.eulerAngles, num) : std::nan(""), 1e-3);
    }
    {
        // Visibility held fixed: pixels whose triangle changes under any probe are dropped.
        const double eps = 1e-4;
        std::vector<RenderOutput> hi, lo;
        for (int a = 0; a < 3; ++a) {
            Pose ph = pose, pl = pose;
            ph.translation[a] += eps;
            pl.translation[a] -= eps;
            hi.push_back(render::render(mesh, ph, light, camera));
            lo.push_back(render::render(mesh, pl, light, camera));
        }
        std::vector<double> keep(out.image.size(), 1.0);
        for (std::size_t p = 0; p < out.mask.size(); ++p) {
            for (int a = 0; a < 3; ++a) {
                if (hi[a].triangle[p] != out.triangle[p] || lo[a].triangle[p] != out.triangle[p]) keep[3 * p] = keep[3 * p + 1] = keep[3 * p + 2] = 0.0;
            }
        }
        const double count = static_cast<double>(out.image.size());
        auto masked = [&](const RenderOutput& r) {
            double l = 0.0;
            for (std::size_t i = 0; i < r.image.size(); ++i) l += keep[i] * std::pow(r.image[i] - target[i], 2);
            return l / count;
        };
        std::vector<double> grad(out.image.size());
        for (std::size_t i = 0; i < grad.size(); ++i) grad[i] = keep[i] * 2.0 * (out.image[i] - target[i]) / count;
        const auto gp = render_backward(out, grad);
        Eigen::Vector3d num;
        for (int a = 0; a < 3; ++a) num[a] = (masked(hi[a]) - masked(lo[a])) / (2 * eps);
        log.add("translation", vector_relative_error(gp.translation, num), 1e-2);
    }
    {
        Rng pick(5);
        Eigen::VectorXd ana(20), num(20);
        for (int k = 0; k < 20; ++k) {
            const auto v = pick.index(mesh.vertices.size());
            const int c = static_cast<int>(pick.index(3));
            const double eps = 1e-5;
            TriMesh hi = mesh, lo = mesh;
            hi.vertices[v][c] += eps;
            lo.vertices[v][c] -= eps;
            num(k) = (linear(render::render(hi, pose, light, camera)) - linear(render::render(lo, pose, light, camera))) / (2 * eps);
            ana(k) = g.positions[v][c];
        }
        log.add("positions", vector_relative_error(ana, num), 1e-3);
    }
}

void layer_gradients(GradientLog& log)
{
    using namespace neuralgen;
    Rng rng(11);
    for (auto [k, s] : {std::pair{3, 1}, std::pair{3, 2}, std::pair{1, 1}}) {
        ParameterSet p;
        const auto conv = Conv2d::declare(p, "c", 3, 4, k, s, 1.3);
        conv.init(p, rng);
        randomise(p, 5, 0.2);
        Tensor x = random_tensor(rng, 3, 6, 6);
        const Tensor probe = random_tensor(rng, 4, conv.output_size(6), conv.output_size(6));
        auto f = [&] { return dot(conv.forward(p, x).data, probe.data); };
        std::vector<double> g(p.size(), 0.0);
        const Tensor dx = conv.backward(p, x, probe, g);
        const std::string name = fmt("conv%dx%d/s%d", k, k, s);
        log.add(name + " params", vector_relative_error(to_eigen(g), numeric_gradient(p.data(), all_coords(p.size()), f)), 1e-3);
        log.add(name + " input", vector_relative_error(to_eigen(dx.data), numeric_gradient(x.data, all_coords(x.size()), f)), 1e-3);
    }
    {
        ParameterSet p;
        const auto d = Dense::declare(p, "d", 5, 3, 0.7);
        d.init(p, rng);
        std::vector<double> x = rng.normal_vector(5), probe = rng.normal_vector(3);
        auto f = [&] { return dot(d.forward(p, x), probe); };
        std::vector<double> g(p.size(), 0.0);
        const auto dx = d.backward(p, x, probe, g);
        log.add("dense params", vector_relative_error(to_eigen(g), numeric_gradient(p.data(), all_coords(p.size()), f)), 1e-3);
        log.add("dense input", vector_relative_error(to_eigen(dx), numeric_gradient(x, all_coords(x.size()), f)), 1e-3);
    }
    {
        Tensor x = random_tensor(rng, 2, 4, 4);
        std::vector<double> styles = rng.normal_vector(4);
        std::vector<double> noise = rng.normal_vector(64);
        double strength = 0.7;
        const Tensor probe = random_tensor(rng, 2, 8, 8);
        auto f = [&] {
            Tensor y = style_modulate(x, styles);
            leaky_relu_inplace(y.data);
            Tensor u = upsample2x(y);
            add_noise_inplace(u, block_highpass(noise, 8, 8, 4), strength);
            return dot(u.data, probe.data);
        };
        const Tensor pre = style_modulate(x, styles);
        const auto hp = block_highpass(noise, 8, 8, 4);
        double dStrength = 0.0;
        std::vector<double> dn(64, 0.0);
        for (int c = 0; c < 2; ++c) {
            for (std::size_t i = 0; i < 64; ++i) {
                dStrength += probe.data[static_cast<std::size_t>(c) * 64 + i] * hp[i];
                dn[i] += strength * probe.data[static_cast<std::size_t>(c) * 64 + i];
            }
        }
        const auto dNoise = block_highpass(dn, 8, 8, 4);
        Tensor dy = upsample2x_backward(probe);
        leaky_relu_backward(pre.data, dy.data);
        std::vector<double> dStyles(4);
        const Tensor dx = style_modulate_backward(x, styles, dy, dStyles);
        log.add("style chain input", vector_relative_error(to_eigen(dx.data), numeric_gradient(x.data, all_coords(x.size()), f)), 1e-3);
        log.add("style chain styles", vector_relative_error(to_eigen(dStyles), numeric_gradient(styles, all_coords(4), f)), 1e-3);
        log.add("style chain noise", vector_relative_error(to_eigen(dNoise), numeric_gradient(noise, all_coords(64), f)), 1e-3);
        std::vector<double> sv{strength};
        auto fs = [&] {
            strength = sv[0];
            return f();
        };
        log.add("noise strength", relative_error(dStrength, numeric_gradient(sv, {0}, fs)(0)), 1e-3);

        std::vector<double> z = rng.normal_vector(7), pz = rng.normal_vector(7);
        auto fz = [&] { return dot(pixel_norm(z), pz); };
        log.add("pixel norm", vector_relative_error(to_eigen(pixel_norm_backward(z, pz)), numeric_gradient(z, all_coords(7), fz)), 1e-3);
    }
    {
        const UVMap cond = synthetic_cond(12, 4);
        const UVMap geom = cond.slice(0, 3);
        Tensor g = tensor_from_uv(geom, 0, 3);
        for (std::size_t i = 0; i < g.size(); ++i) g.data[i] += 0.3 * rng.normal() * (geom.mask[i % g.plane()] ? 1 : 0);
        const Tensor probe = random_tensor(rng, 3, 12, 12);
        auto f = [&] { return dot(NormalMapLayer::forward(g, geom.mask).data, probe.data); };
        NormalMapLayer::Cache cache;
        NormalMapLayer::forward(g, geom.mask, &cache);
        const Tensor dg = NormalMapLayer::backward(g, geom.mask, cache, probe);
        log.add("normal map layer", vector_relative_error(to_eigen(dg.data), numeric_gradient(g.data, all_coords(g.size()), f, 1e-6)), 1e-3);
    }
}

void network_gradients(GradientLog& log)
{
    using namespace neuralgen;
    for (auto kind : {GeneratorKind::Detail, GeneratorKind::Expression}) {
        const std::string k = to_string(kind);
        const auto spec = tiny_spec(kind);
        {
            Generator g(spec, 8);
            randomise(g.parameters(), 21, 0.3);
            const UVMap cond = synthetic_cond(16, 3, 6, kind == GeneratorKind::Expression);
            Rng rng(6);
            DetailLatent lat = DetailLatent::sample(spec, rng);
            UVMap probe = UVMap::zeros(16, 16, spec.outChannels, cond.mask);
            for (double& v : probe.data) v = rng.normal();
            probe.apply_mask();
            auto loss = [&] { return dot(g.forward(cond, lat).data, probe.data); };
            Generator::Trace trace;
            g.forward(cond, lat, &trace);
            auto grads = g.make_gradients(true);
            g.backward(trace, probe, grads);
            const auto coords = sample_coords(g.parameters().size(), 300, 2);
            log.add(k + " generator params", vector_relative_error(pick(grads.params, coords), numeric_gradient(g.parameters().data(), coords, loss)), 1e-3);
            log.add(k + " generator z", vector_relative_error(to_eigen(grads.z), numeric_gradient(lat.z, all_coords(lat.z.size()), loss)), 1e-3);
            for (std::size_t l = 0; l < lat.noise.size(); ++l) {
                const auto num = numeric_gradient(lat.noise[l], all_coords(lat.noise[l].size()), loss);
                log.add(k + fmt(" generator noise %zu", l), vector_relative_error(to_eigen(grads.noise[l]), num), 1e-3);
            }
        }

        const bool detail = kind == GeneratorKind::Detail;
        Generator g(spec, 1);
        Discriminator d(detail ? DiscriminatorKind::Detail : DiscriminatorKind::Expression, spec, 2);
        Discriminator dn(detail ? DiscriminatorKind::NormalDetail : DiscriminatorKind::NormalExpression, spec, 3);
        randomise(g.parameters(), 31, 0.2);
        randomise(d.parameters(), 32, 0.1);
        randomise(dn.parameters(), 33, 0.1);
        std::vector<TrainingSample> batch;
        std::vector<DetailLatent> latents;
        Rng rng(7);
        for (int i = 0; i < 3; ++i) {
            TrainingSample s;
            s.cond = synthetic_cond(16, 40 + static_cast<std::uint64_t>(i), 6, !detail);
            if (i < 2) {
                UVMap t = s.cond.slice(0, spec.outChannels);
                for (double& v : t.data) v += 0.5 * rng.normal();
                t.apply_mask();
                s.target = t;
            }
            batch.push_back(s);
            latents.push_back(DetailLatent::sample(spec, rng));
        }

        for (const Discriminator* disc : {&d, &dn}) {
            Discriminator copy = *disc;
            const int channels = discriminator_channels(copy.kind());
            Rng xr(4);
            Tensor x = random_tensor(xr, channels, 16, 16);
            Discriminator::Trace t;
            copy.forward(x, &t);
            std::vector<double> pg(copy.parameters().size(), 0.0);
            const Tensor dx = copy.backward(t, 1.0, pg);
            auto f = [&] { return copy.forward(x); };
            const std::string name = std::string(to_string(copy.kind())) + " discriminator";
            log.add(name + " input", vector_relative_error(to_eigen(dx.data), numeric_gradient(x.data, all_coords(x.size()), f)), 1e-3);
            const auto coords = sample_coords(copy.parameters().size(), 200, 3);
            log.add(name + " params", vector_relative_error(pick(pg, coords), numeric_gradient(copy.parameters().data(), coords, f)), 1e-3);
        }
        {
            TrainConfig cfg;
            cfg.adversarialWeight = 1.0;
            cfg.normalDiscriminatorEnabled = true;
            auto total = [&] {
                return detail ? loss_detail(g, d, dn, batch, latents, cfg) : loss_exp(g, d, dn, batch, latents, cfg);
            };
            const auto r = total();
            const auto coords = sample_coords(g.parameters().size(), 200, 17);
            auto f = [&] { return total().total; };
            log.add(k + " generator loss", vector_relative_error(pick(r.grad, coords), numeric_gradient(g.parameters().data(), coords, f)), 1e-3);
        }
        {
            TrainConfig cfg;
            cfg.r1Weight = 3.0;
            const auto r = discriminator_loss(g, d, dn, batch, latents, cfg);
            auto f = [&] { return discriminator_loss(g, d, dn, batch, latents, cfg).total; };
            const auto cm = sample_coords(d.parameters().size(), 150, 23);
            log.add(k + " discriminator loss (R1)", vector_relative_error(pick(r.gradMain, cm), numeric_gradient(d.parameters().data(), cm, f)), 1e-3);
            const auto cn = sample_coords(dn.parameters().size(), 150, 29);
            log.add(k + " normal discriminator loss (R1)", vector_relative_error(pick(r.gradNormal, cn), numeric_gradient(dn.parameters().data(), cn, f)), 1e-3);
        }
    }
}

Outcome gradient_suite()
{
    GradientLog log;
    render_gradients(log);
    layer_gradients(log);
    network_gradients(log);
    return log.outcome();
}

// Round trip --------------------------------------------------------------

struct Target
{
    morphable::BaseParams params;
    render::Pose pose;
    render::SHLighting lighting;
    render::Image image;
    geometry::LandmarkSet landmarks;
    TriMesh mesh;
};

Target make_target(const morphable::BaseModel& model, const fitpipe::FitConfig& config, std::uint64_t seed)
{
    Rng rng(seed);
    Target t;
    t.params = morphable::BaseParams::zeros(model);
    for (Eigen::Index i = 0; i < t.params.shape.size(); ++i) t.params.shape[i] = (i < 10 ? 0.8 : 0.2) * rng.normal();
    for (Eigen::Index i = 0; i < t.params.texture.size(); ++i) t.params.texture[i] = 0.5 * rng.normal();
    for (Eigen::Index i = 0; i < t.params.expression.size(); ++i) t.params.expression[i] = 0.5 * rng.normal();
    t.pose.eulerAngles = Vec3(rng.uniform(-0.15, 0.15), rng.uniform(-0.25, 0.25), rng.uniform(-0.08, 0.08));
    t.pose.translation = Vec3(rng.uniform(-15, 15), rng.uniform(-15, 15), -rng.uniform(550, 650));
    t.lighting = render::SHLighting::ambient(0.9);
    for (int c = 0; c < 3; ++c) {
        t.lighting.at(c, 0) += 0.05 * rng.normal();
        for (int k = 1; k < 4; ++k) t.lighting.at(c, k) = 0.15 * rng.normal();
    }
    t.mesh = morphable::eval_base(model, t.params);
    const auto out = render::render(t.mesh, t.pose, t.lighting, config.camera(), {10.0, false});
    t.image = {out.width, out.height, out.image};
    t.landmarks = model.templ.landmarks();
    std::vector<Vec3> pts;
    for (int idx : t.landmarks.vertexIndices) pts.push_back(t.mesh.vertices[static_cast<std::size_t>(idx)]);
    t.landmarks.points2d = render::project(pts, t.pose, config.camera()).points;
    return t;
}

Outcome round_trip()
{
    const auto& model = shared.full_model();
    const fitpipe::FitConfig config;
    int passed = 0;
    double worstLms = 0.0, worstRmse = 0.0;
    for (std::uint64_t seed = 1; seed <= 10; ++seed) {
        const Target t = make_target(model, config, seed);
        const auto fit = fitpipe::fit_base(t.image, t.landmarks, model, config);
        // Rigidly aligned, which removes the pose/shape gauge freedom.
        const TriMesh fitted = morphable::eval_base(model, fit.params);
        const auto align = registration::umeyama_align(fitted.vertices, t.mesh.vertices, false);
        const auto aligned = align.apply(fitted.vertices);
        double sq = 0.0;
        for (std::size_t v = 0; v < aligned.size(); ++v) sq += (aligned[v] - t.mesh.vertices[v]).squaredNorm();
        const auto box = geometry::bounding_box(t.mesh.vertices);
        const double relRmse = std::sqrt(sq / static_cast<double>(aligned.size())) / (box.max - box.min).norm();
        passed += fit.landmarkError < 1.0 && relRmse < 0.01;
        worstLms = std::max(worstLms, fit.landmarkError);
        worstRmse = std::max(worstRmse, relRmse);
    }
    return {passed >= 9, fmt("%d/10 faces pass (need 9); worst landmark error %.3f px, worst RMSE %.3f%% of diagonal", passed,
                             worstLms, 100.0 * worstRmse)};
}

// Registration ------------------------------------------------------------

Outcome registration_suite()
{
    using namespace registration;
    Rng rng(13);
    double worstRigid = 0.0;
    for (int trial = 0; trial < 5; ++trial) {
        std::vector<Vec3> src;
        for (int i = 0; i < 50; ++i) src.emplace_back(rng.normal() * 60.0, rng.normal() * 60.0, rng.normal() * 60.0);
        for (bool withScale : {true, false}) {
            RigidTransform t;
            t.rotation = random_rotation(rng);
            t.translation = Vec3(rng.normal(), rng.normal(), rng.normal()) * 50.0;
            t.scale = withScale ? rng.uniform(0.5, 2.0) : 1.0;
            const auto est = umeyama_align(src, t.apply(src), withScale);
            worstRigid = std::max({worstRigid, (est.rotation - t.rotation).cwiseAbs().maxCoeff(),
                                   (est.translation - t.translation).cwiseAbs().maxCoeff(), std::abs(est.scale - t.scale)});
        }
    }

    const auto atlas = geometry::make_face_template();
    const auto fine = geometry::make_face_template(113);
    double worstDistance = 0.0;
    bool monotone = true;
    for (std::uint64_t seed : {1u, 2u, 3u}) {
        const TriMesh deformedFine = rbf_deform(fine.mesh(), seed, 5.0);
        ScanTarget target;
        target.points = deformedFine.vertices;
        target.normals = geometry::vertex_normals(deformedFine);
        const TriMesh deformed = rbf_deform(atlas.mesh(), seed, 5.0);
        target.landmarks3d.vertexIndices = atlas.landmarks().vertexIndices;
        for (int idx : atlas.landmarks().vertexIndices) target.landmarks3d.points3d.push_back(deformed.vertices[static_cast<std::size_t>(idx)]);
        const auto res = nonrigid_icp(atlas.mesh(), atlas.landmarks(), target, {});
        worstDistance = std::max(worstDistance, surface_distance(res.mesh.vertices, target));
        for (std::size_t k = 1; k < res.energyTrace.size(); ++k) monotone = monotone && res.energyTrace[k] <= res.energyTrace[k - 1];
    }
    return {worstRigid < 1e-9 && worstDistance < 0.3 && monotone,
            fmt("umeyama worst error %.2e (< 1e-9); nonrigid ICP worst mean surface distance %.3f mm (< 0.3); energy traces %s",
                worstRigid, worstDistance, monotone ? "non-increasing" : "INCREASE")};
}

// Training ----------------------------------------------------------------

double rms(const std::vector<double>& v, const std::vector<std::uint8_t>& mask, int channels)
{
    double sq = 0.0;
    std::size_t n = 0;
    for (std::size_t t = 0; t < mask.size(); ++t) {
        if (!mask[t]) continue;
        for (int c = 0; c < channels; ++c) sq += v[t * static_cast<std::size_t>(channels) + static_cast<std::size_t>(c)] * v[t * static_cast<std::size_t>(channels) + static_cast<std::size_t>(c)];
        ++n;
    }
    return n ? std::sqrt(sq / static_cast<double>(n)) : 0.0;
}

UVMap difference(const UVMap& a, const UVMap& b)
{
    UVMap d = a;
    for (std::size_t i = 0; i < d.data.size(); ++i) d.data[i] -= b.data[i];
    return d;
}

double mean_reconstruction(const neuralgen::Generator& g, std::span<const neuralgen::TrainingSample> data)
{
    using namespace neuralgen;
    const auto& spec = g.spec();
    const Discriminator d(DiscriminatorKind::Detail, spec, 0), dn(DiscriminatorKind::NormalDetail, spec, 0);
    TrainConfig config;
    config.adversarialWeight = 0.0;
    Rng rng(17);
    double sum = 0.0;
    constexpr std::size_t chunk = 10;
    for (std::size_t i = 0; i < data.size(); i += chunk) {
        const auto batch = data.subspan(i, std::min(chunk, data.size() - i));
        std::vector<DetailLatent> latents;
        for (std::size_t k = 0; k < batch.size(); ++k) latents.push_back(DetailLatent::sample(spec, rng));
        sum += loss_detail(g, d, dn, batch, latents, config).reconstruction * static_cast<double>(batch.size());
    }
    return sum / static_cast<double>(data.size());
}

Outcome reconstruction_training()
{
    using namespace neuralgen;
    const auto population = generator_population();
    const auto train = harness::detail_training_set(population, id_range(0, 200), 64);
    const auto spec = GeneratorSpec::detail(64);
    TrainConfig config;
    config.adversarialWeight = 0.0;
    config.batchSize = 4;
    config.steps = 2000;
    config.seed = 1;
    auto result = neuralgen::train(GeneratorKind::Detail, train, spec, config);
    shared.detailGen = Checkpoint{result.generator, static_cast<std::uint64_t>(config.steps), spec.hash()};

    // Drop: reconstruction loss over the whole training set before and after.
    // An untrained generator reproduces its condition, whatever its seed.
    const double first = mean_reconstruction(Generator(spec, 0), train);
    const double late = mean_reconstruction(result.generator, train);
    const double drop = first / late;

    const auto held = harness::detail_training_set(population, id_range(200, 210), 64);
    const auto& g = result.generator;
    double worstIdentity = 0.0, worstLocality = 0.0;
    Rng rng(99);
    for (const auto& s : held) {
        const DetailLatent a = DetailLatent::sample(spec, rng);
        DetailLatent b = a;
        b.noise = DetailLatent::sample(spec, rng).noise;
        const UVMap outA = g.forward(s.cond, a);
        const UVMap outB = g.forward(s.cond, b);

        const UVMap pooledOut = geometry::average_pool(outA.slice(0, 3), 8);
        const UVMap pooledCond = geometry::average_pool(s.cond.slice(0, 3), 8);
        double dev = 0.0;
        std::size_t n = 0;
        for (std::size_t t = 0; t < pooledOut.mask.size(); ++t) {
            if (!pooledOut.mask[t]) continue;
            dev += (Eigen::Map<const Eigen::Vector3d>(&pooledOut.data[3 * t]) - Eigen::Map<const Eigen::Vector3d>(&pooledCond.data[3 * t])).norm();
            ++n;
        }
        worstIdentity = std::max(worstIdentity, dev / static_cast<double>(n));

        const UVMap diff = difference(outA, outB);
        const UVMap pooledDiff = geometry::average_pool(diff, 8);
        const double full = rms(diff.data, diff.mask, diff.channels);
        const double pooled = rms(pooledDiff.data, pooledDiff.mask, pooledDiff.channels);
        worstLocality = std::max(worstLocality, full > 0.0 ? pooled / full : 1.0);
    }
    const bool pass = !result.aborted && drop >= 10.0 && worstIdentity < 1.0 && worstLocality < 0.10;
    return {pass, fmt("training-set reconstruction loss %.4f -> %.4f (%.1fx, need 10x); held-out pooled identity deviation %.3f mm (< 1); "
                      "noise pooled/unpooled change %.2f%% (< 10%%)",
                      first, late, drop, worstIdentity, 100.0 * worstLocality)};
}

// Expression generator for the transfer checks: reconstruction objective
// on the same population and template.
const neuralgen::Checkpoint& expression_generator()
{
    using namespace neuralgen;
    if (!shared.expGen) {
        const auto data = harness::expression_training_set(generator_population(), id_range(0, 40), 5, 64);
        const auto spec = GeneratorSpec::expression(64);
        TrainConfig config;
        config.adversarialWeight = 0.0;
        config.steps = 400;
        config.seed = 2;
        auto result = neuralgen::train(GeneratorKind::Expression, data, spec, config);
        shared.expGen = Checkpoint{result.generator, static_cast<std::uint64_t>(config.steps), spec.hash()};
    }
    return *shared.expGen;
}

const neuralgen::Checkpoint& detail_generator()
{
    if (!shared.detailGen) reconstruction_training();
    return *shared.detailGen;
}

// Evaluation protocol -----------------------------------------------------

harness::EvalConfig scan_eval_config(const std::string& method)
{
    harness::EvalConfig config;
    config.method = method;
    config.protocol = harness::Protocol::ScanFit;
    config.scan.scanNoise = 0.1;
    return config;
}

Outcome evaluation_protocol()
{
    const auto& study = shared.study();
    const auto detailedOnly = harness::build_detailed_only_model(study);
    std::vector<harness::EvalReport> reports;
    reports.push_back(harness::run_eval(shared.full_model(), nullptr, study.test, scan_eval_config("full")));
    reports.push_back(harness::run_eval(detailedOnly, nullptr, study.test, scan_eval_config("detailed-only")));
    std::cout << harness::report_table_csv(reports);
    const auto& full = reports[0];
    const auto& ablation = reports[1];
    const bool pass = full.mae < ablation.mae && full.oracleFloorHolds && ablation.oracleFloorHolds;
    return {pass, fmt("MAE full %.4f < detailed-only %.4f mm; oracle floor %s/%s (oracle MAE %.4f / %.4f); failures %d/%d of %zu",
                      full.mae, ablation.mae, full.oracleFloorHolds ? "holds" : "VIOLATED",
                      ablation.oracleFloorHolds ? "holds" : "VIOLATED", full.oracleMae, ablation.oracleMae, full.failures,
                      ablation.failures, full.samples.size())};
}

// Determinism -------------------------------------------------------------

template <typename F>
auto at_threads(int n, F&& f)
{
    const int saved = thread_count();
    set_thread_count(n);
    try {
        auto r = f();
        set_thread_count(saved);
        return r;
    } catch (...) {
        set_thread_count(saved);
        throw;
    }
}

bool same_pca(const morphable::PcaModel& a, const morphable::PcaModel& b)
{
    return a.mean == b.mean && a.components == b.components && a.singularValues == b.singularValues && a.sampleCount == b.sampleCount;
}

bool same_trace(const std::vector<neuralgen::TraceEntry>& a, const std::vector<neuralgen::TraceEntry>& b)
{
    if (a.size() != b.size()) return false;
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (neuralgen::trace_line(a[i]) != neuralgen::trace_line(b[i])) return false;
    }
    return true;
}

fitpipe::FitConfig quick_fit_config()
{
    fitpipe::FitConfig c;
    c.imageWidth = c.imageHeight = 128;
    c.focal = 400.0;
    c.warmupIterations = 40;
    c.base.iterations = 40;
    c.detail.iterations = 8;
    c.expression.iterations = 8;
    return c;
}

Outcome determinism()
{
    using namespace neuralgen;
    const auto& study = shared.study();
    std::vector<std::string> broken;

    const auto m1 = at_threads(1, [&] { return harness::build_full_model(study); });
    const auto m3 = at_threads(3, [&] { return harness::build_full_model(study); });
    if (!same_pca(m1.shape, m3.shape) || !same_pca(m1.texture, m3.texture) || !same_pca(m1.expression, m3.expression)) broken.push_back("build");

    const auto data = harness::detail_training_set(generator_population(), id_range(0, 8), 64);
    TrainConfig tc;
    tc.steps = 6;
    tc.batchSize = 2;
    tc.seed = 5;
    tc.r1Weight = 1.0;
    tc.pathLengthWeight = 0.5;
    const auto spec = GeneratorSpec::detail(64);
    const auto t1 = at_threads(1, [&] { return neuralgen::train(GeneratorKind::Detail, data, spec, tc); });
    const auto t3 = at_threads(3, [&] { return neuralgen::train(GeneratorKind::Detail, data, spec, tc); });
    if (!(t1.generator.parameters().data() == t3.generator.parameters().data()) ||
        !(t1.discriminator.parameters().data() == t3.discriminator.parameters().data()) ||
        !(t1.normalDiscriminator.parameters().data() == t3.normalDiscriminator.parameters().data()) || !same_trace(t1.trace, t3.trace)) {
        broken.push_back("train");
    }

    // Without the long training run, the short one above stands in.
    const Checkpoint detail = shared.detailGen ? *shared.detailGen : Checkpoint{t1.generator, static_cast<std::uint64_t>(tc.steps), spec.hash()};
    const Checkpoint& exp = expression_generator();
    const fitpipe::Generators gens{&detail, &exp};
    const auto config = quick_fit_config();
    const auto view = harness::render_sample(study.test[0], m1.templ.landmarks(), 0, 7, config.camera());
    const auto f1 = at_threads(1, [&] { return fitpipe::fit_image(view.image, view.landmarks, m1, gens, config); });
    const auto f3 = at_threads(3, [&] { return fitpipe::fit_image(view.image, view.landmarks, m1, gens, config); });
    if (f1.meshes.refined.vertices != f3.meshes.refined.vertices || f1.meshes.detail.colors != f3.meshes.detail.colors ||
        f1.detailLatent.flatten() != f3.detailLatent.flatten() || f1.expLatent.flatten() != f3.expLatent.flatten() ||
        f1.lossTrace.base != f3.lossTrace.base || f1.lossTrace.expression != f3.lossTrace.expression) {
        broken.push_back("fit");
    }

    const std::vector<harness::TestSample> subset(study.test.begin(), study.test.begin() + 3);
    const auto evalConfig = scan_eval_config("full");
    const auto e1 = at_threads(1, [&] { return harness::run_eval(m1, nullptr, subset, evalConfig).to_json(); });
    const auto e3 = at_threads(3, [&] { return harness::run_eval(m1, nullptr, subset, evalConfig).to_json(); });
    if (e1 != e3) broken.push_back("eval");

    std::string which;
    for (const auto& b : broken) which += " " + b;
    return {broken.empty(), broken.empty() ? "build, train, fit and eval bitwise identical at 1 and 3 threads"
                                           : "differs across thread counts:" + which};
}

// Transfer ----------------------------------------------------------------

UVMap add_maps(const UVMap& a, const UVMap& b)
{
    UVMap s = a;
    for (std::size_t i = 0; i < s.data.size(); ++i) s.data[i] += b.data[i];
    return s;
}

Outcome transfer()
{
    const auto& study = shared.study();
    const auto& model = shared.full_model();
    const fitpipe::Generators gens{&detail_generator(), &expression_generator()};
    const fitpipe::FitConfig config;
    // Two identities, each with a non-neutral expression.
    const std::size_t ia = 1, ib = 6;
    const auto viewA = harness::render_sample(study.test[ia], model.templ.landmarks(), ia, 11, config.camera());
    const auto viewB = harness::render_sample(study.test[ib], model.templ.landmarks(), ib, 11, config.camera());
    const auto a = fitpipe::fit_image(viewA.image, viewA.landmarks, model, gens, config);
    const auto b = fitpipe::fit_image(viewB.image, viewB.landmarks, model, gens, config);

    const TriMesh self = fitpipe::detail_transfer(a, a, model, gens);
    const bool selfExact = self.vertices == a.meshes.refined.vertices && self.colors == a.meshes.refined.colors;

    const auto mapsA = fitpipe::evaluate_pipeline(model, gens, a.baseParams, a.detailLatent, a.expLatent);
    const auto mapsB = fitpipe::evaluate_pipeline(model, gens, b.baseParams, b.detailLatent, b.expLatent);
    const auto mapsT = fitpipe::evaluate_pipeline(model, gens, a.baseParams, b.detailLatent, b.expLatent);
    const UVMap baseA = add_maps(mapsA.base.shape, mapsA.base.expression);
    const UVMap baseB = add_maps(mapsB.base.shape, mapsB.base.expression);
    const auto dec = fitpipe::transfer_decomposition(mapsT.refined, baseA, mapsA.refined, baseA, mapsB.refined, baseB);
    const TriMesh cross = fitpipe::detail_transfer(a, b, model, gens);
    const bool consistent = cross.vertices == fitpipe::pipeline_meshes(model, a.baseParams, mapsT).refined.vertices;

    const bool pass = selfExact && consistent && dec.lowFrequencyDeviation < 1.0 && dec.detailDonorCorrelation > 0.5;
    return {pass, fmt("self-transfer %s; cross-transfer pooled deviation from base donor %.3f mm (< 1), residual correlation "
                      "with detail donor %.3f (> 0.5), with base donor %.3f; transferred mesh %s the pipeline maps",
                      selfExact ? "exact" : "NOT exact", dec.lowFrequencyDeviation, dec.detailDonorCorrelation,
                      dec.baseDonorCorrelation, consistent ? "matches" : "DIFFERS from")};
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"facekit acceptance suite"};
    std::vector<std::string> only;
    app.add_option("--only", only, "Run only the criteria with these ids");
    bool list = false;
    app.add_flag("--list", list, "List criterion ids and exit");
    CLI11_PARSE(app, argc, argv);

    const std::vector<Criterion> criteria{
        {"pca-oracle", "PCA matches a dense SVD oracle", 5.0, pca_oracle},
        {"gradients", "renderer and network gradients match central differences", 60.0, gradient_suite},
        {"round-trip", "analysis-by-synthesis round trip at 256x256", 600.0, round_trip},
        {"registration", "rigid recovery and nonrigid ICP on 5 mm deformations", 120.0, registration_suite},
        {"training", "reconstruction training at 64x64 on 200 pairs", 1800.0, reconstruction_training},
        {"eval-protocol", "MAE/Var table: full model beats the detailed-only ablation", 0.0, evaluation_protocol},
        {"determinism", "build, train, fit and eval reproducible across thread counts", 0.0, determinism},
        {"transfer", "self-transfer identity and pooled cross-transfer decomposition", 0.0, transfer},
    };
    if (list) {
        for (const auto& c : criteria) std::cout << c.id << "  " << c.title << "\n";
        return 0;
    }

    int failed = 0, ran = 0;
    for (const auto& c : criteria) {
        if (!only.empty() && std::find(only.begin(), only.end(), c.id) == only.end()) continue;
        ++ran;
        const auto start = std::chrono::steady_clock::now();
        Outcome o;
        try {
            o = c.run();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        std::string timing = fmt("%.1f s", secs);
        if (c.budgetSeconds > 0.0) {
            timing += fmt(" of %.0f s", c.budgetSeconds);
            if (secs >= c.budgetSeconds) {
                o.pass = false;
                timing += " OVER BUDGET";
            }
        }
        failed += !o.pass;
        std::cout << (o.pass ? "PASS" : "FAIL") << "  " << c.id << ": " << c.title << " | " << o.detail << " | " << timing << std::endl;
    }
    std::cout << (ran - failed) << "/" << ran << " criteria passed" << std::endl;
    return failed ? 1 : 0;
}
