/*
 * facekit - 3D face modelling, registration and fitting from synthetic and captured data.
 *
 * File: core/src/fitpipe/fit.cpp
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
#include "facekit/fitpipe/fit.hpp"

#include "facekit/common/adam.hpp"
#include "facekit/common/error.hpp"
#include "facekit/common/random.hpp"
#include "facekit/render/rasterizer.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <functional>

namespace facekit::fitpipe {

namespace {

using render::Image;
using render::Pose;
using render::RenderOutput;
using render::SHLighting;

constexpr std::uint64_t kDetailStream = 0xde7a11;
constexpr std::uint64_t kExpressionStream = 0xe4b2e55;

double rate_scale(const FitConfig& config, int step, int steps)
{
    if (steps <= 1) {
        return 1.0;
    }
    const double t = static_cast<double>(step) / static_cast<double>(steps - 1);
    return 1.0 - (1.0 - config.finalRateFraction) * t;
}

void check_finite(double loss, const char* phase, int step)
{
    if (!std::isfinite(loss)) {
        throw NumericError(std::string(phase) + ": loss is not finite at step " + std::to_string(step));
    }
}

struct PhotoTerm
{
    double loss = 0.0;
    double rmse = 0.0;
    std::vector<double> grad;
};

PhotoTerm photo_term(const RenderOutput& out, const Image& image, double weight)
{
    PhotoTerm p;
    p.grad.assign(out.image.size(), 0.0);
    const std::size_t covered = out.covered_count();
    if (covered == 0) {
        return p;
    }
    const double n = 3.0 * static_cast<double>(covered);
    double sq = 0.0;
    for (std::size_t i = 0; i < out.mask.size(); ++i) {
        if (out.mask[i] == 0) {
            continue;
        }
        for (std::size_t c = 0; c < 3; ++c) {
            const double d = out.image[3 * i + c] - image.data[3 * i + c];
            sq += d * d;
            p.grad[3 * i + c] = 2.0 * weight * d / n;
        }
    }
    p.loss = weight * sq / n;
    p.rmse = std::sqrt(sq / n);
    return p;
}

struct LandmarkTerm
{
    double loss = 0.0;
    double meanError = 0.0;
    std::vector<geometry::Vec2> pointGrads;
};

LandmarkTerm landmark_term(const std::vector<Vec3>& vertices, const geometry::LandmarkSet& lms, const Pose& pose,
                           const render::Camera& camera, double weight)
{
    std::vector<Vec3> subset;
    subset.reserve(lms.size());
    for (int idx : lms.vertexIndices) {
        subset.push_back(vertices[static_cast<std::size_t>(idx)]);
    }
    const auto proj = render::project(subset, pose, camera);
    LandmarkTerm t;
    const double k = static_cast<double>(lms.size());
    for (std::size_t i = 0; i < lms.size(); ++i) {
        const geometry::Vec2 d = proj.points[i] - lms.points2d[i];
        t.loss += d.squaredNorm();
        t.meanError += d.norm();
        t.pointGrads.push_back(2.0 * weight * d / k);
    }
    t.loss *= weight / k;
    t.meanError /= k;
    return t;
}

void check_landmarks(const geometry::LandmarkSet& lms, std::size_t vertexCount)
{
    if (lms.size() < 6 || lms.points2d.size() != lms.size()) {
        throw Error("fitting needs at least 6 landmarks with 2D positions, got " + std::to_string(lms.points2d.size()));
    }
    for (int idx : lms.vertexIndices) {
        if (idx < 0 || static_cast<std::size_t>(idx) >= vertexCount) {
            throw Error("landmark vertex " + std::to_string(idx) + " is not a template vertex");
        }
    }
}

void check_image(const Image& image, const FitConfig& config)
{
    if (image.width != config.imageWidth || image.height != config.imageHeight || image.data.size() != 3 * image.pixel_count()) {
        throw Error("image is " + std::to_string(image.width) + "x" + std::to_string(image.height) + " but the fit expects " +
                    std::to_string(config.imageWidth) + "x" + std::to_string(config.imageHeight));
    }
}

std::vector<double> pose_vector(const Pose& pose)
{
    return {pose.eulerAngles.x(), pose.eulerAngles.y(), pose.eulerAngles.z(),
            pose.translation.x(), pose.translation.y(), pose.translation.z()};
}

void assign_pose(Pose& pose, const std::vector<double>& v)
{
    pose.eulerAngles = Vec3(v[0], v[1], v[2]);
    pose.translation = Vec3(v[3], v[4], v[5]);
}

std::vector<double> pose_rates(const FitConfig& c)
{
    return {c.angleRate, c.angleRate, c.angleRate, c.translationRate, c.translationRate, c.translationRate};
}

/// Translation that puts the landmark centroid on the 2D centroid at the
/// depth implied by the landmark spread; rotation zero.
Pose initial_pose(const std::vector<Vec3>& vertices, const geometry::LandmarkSet& lms, const render::Camera& camera)
{
    Vec3 c3 = Vec3::Zero();
    geometry::Vec2 c2 = geometry::Vec2::Zero();
    for (std::size_t i = 0; i < lms.size(); ++i) {
        c3 += vertices[static_cast<std::size_t>(lms.vertexIndices[i])];
        c2 += lms.points2d[i];
    }
    const double k = static_cast<double>(lms.size());
    c3 /= k;
    c2 /= k;
    double s3 = 0.0, s2 = 0.0;
    for (std::size_t i = 0; i < lms.size(); ++i) {
        s3 += (vertices[static_cast<std::size_t>(lms.vertexIndices[i])] - c3).head<2>().squaredNorm();
        s2 += (lms.points2d[i] - c2).squaredNorm();
    }
    if (s2 <= 0.0 || s3 <= 0.0) {
        throw NumericError("landmarks are degenerate: zero spread");
    }
    const double depth = camera.focal * std::sqrt(s3 / s2);
    const Vec3 p((c2.x() - camera.cx) * depth / camera.focal, -(c2.y() - camera.cy) * depth / camera.focal, -depth);
    Pose pose;
    pose.translation = p - c3;
    return pose;
}

Eigen::VectorXd vec(const std::vector<Vec3>& v)
{
    return geometry::flatten(v);
}

double sum_squares(std::span<const double> v)
{
    double s = 0.0;
    for (double x : v) {
        s += x * x;
    }
    return s;
}

TriMesh template_mesh(const morphable::BaseModel& model)
{
    TriMesh mesh;
    mesh.triangles = model.templ.mesh().triangles;
    mesh.uvs = model.templ.mesh().uvs;
    return mesh;
}

const neuralgen::Generator& checked_generator(const neuralgen::Checkpoint& ckpt, neuralgen::GeneratorKind kind, const char* phase)
{
    if (ckpt.step == 0) {
        throw Error(std::string(phase) + ": generator checkpoint is untrained (step 0)");
    }
    if (ckpt.generator.spec().kind != kind) {
        throw Error(std::string(phase) + ": expected a " + neuralgen::to_string(kind) + " generator, got " +
                    neuralgen::to_string(ckpt.generator.spec().kind));
    }
    return ckpt.generator;
}

struct MeshUpdate
{
    std::vector<Vec3> vertices;
    std::vector<Vec3> colors;
};

/// Shared latent optimisation of phases two and three. toMesh maps the
/// generator output to vertices and colours; toGradMap carries the vertex
/// gradients back to an output-shaped map.
LatentFit optimise_latent(const FitScene& scene, const UVMap& cond, const neuralgen::Generator& gen, const morphable::BaseModel& model,
                          const FitConfig& config, const PhaseConfig& phase, std::uint64_t stream, const char* name,
                          const std::function<MeshUpdate(const UVMap&)>& toMesh,
                          const std::function<UVMap(const std::vector<Vec3>&, const std::vector<Vec3>&)>& toGradMap)
{
    if (scene.image == nullptr || scene.landmarks2d == nullptr) {
        throw Error(std::string(name) + ": scene needs an image and landmarks");
    }
    check_image(*scene.image, config);
    check_landmarks(*scene.landmarks2d, model.vertex_count());
    const auto& spec = gen.spec();
    Rng rng(config.seed, stream);
    LatentFit fit;
    fit.latent = neuralgen::DetailLatent::sample(spec, rng);
    std::vector<double> flat = fit.latent.flatten();
    Adam adam(flat.size(), Adam::Options{phase.learningRate, 0.9, 0.999, 1e-8});
    const render::Camera camera = config.camera();
    TriMesh mesh = template_mesh(model);
    const double zCount = static_cast<double>(spec.latentDim);

    for (int step = 0; step < phase.iterations; ++step) {
        neuralgen::Generator::Trace trace;
        const UVMap out = gen.forward(cond, fit.latent, &trace);
        MeshUpdate m = toMesh(out);
        mesh.vertices = std::move(m.vertices);
        mesh.colors = std::move(m.colors);
        const RenderOutput r = render::render(mesh, scene.pose, scene.lighting, camera);
        const PhotoTerm photo = photo_term(r, *scene.image, config.wPhoto);
        const LandmarkTerm lm = landmark_term(mesh.vertices, *scene.landmarks2d, scene.pose, camera, config.wLms);
        double reg = config.wRegLatent * sum_squares(fit.latent.z) / zCount;
        for (const auto& n : fit.latent.noise) {
            reg += config.wRegNoise * sum_squares(n) / static_cast<double>(n.size());
        }
        const double loss = photo.loss + lm.loss + reg;
        check_finite(loss, name, step);
        fit.trace.push_back(loss);

        render::RenderGradients rg = render::render_backward(r, photo.grad);
        const auto lg = render::project_backward(mesh.vertices, scene.pose, camera, scene.landmarks2d->vertexIndices, lm.pointGrads);
        for (std::size_t v = 0; v < rg.positions.size(); ++v) {
            rg.positions[v] += lg.vertices[v];
        }
        const UVMap gradMap = toGradMap(rg.positions, rg.colors);
        auto grads = gen.make_gradients(false);
        gen.backward(trace, gradMap, grads);

        std::vector<double> g;
        g.reserve(flat.size());
        for (std::size_t i = 0; i < grads.z.size(); ++i) {
            g.push_back(grads.z[i] + 2.0 * config.wRegLatent * fit.latent.z[i] / zCount);
        }
        for (std::size_t l = 0; l < grads.noise.size(); ++l) {
            const auto& n = fit.latent.noise[l];
            for (std::size_t i = 0; i < n.size(); ++i) {
                g.push_back(grads.noise[l][i] + 2.0 * config.wRegNoise * n[i] / static_cast<double>(n.size()));
            }
        }
        adam.set_learning_rate(phase.learningRate * rate_scale(config, step, phase.iterations));
        adam.step(flat, g);
        fit.latent.assign(flat);
    }

    fit.output = gen.forward(cond, fit.latent);
    MeshUpdate m = toMesh(fit.output);
    mesh.vertices = std::move(m.vertices);
    mesh.colors = std::move(m.colors);
    const RenderOutput r = render::render(mesh, scene.pose, scene.lighting, camera, {10.0, false});
    fit.photoError = photo_term(r, *scene.image, 1.0).rmse;
    fit.landmarkError = landmark_term(mesh.vertices, *scene.landmarks2d, scene.pose, camera, 1.0).meanError;
    return fit;
}

geometry::ResamplePlan plan_for(const morphable::BaseModel& model, int resolution)
{
    return geometry::make_resample_plan(model.templ.mask(resolution), resolution, resolution, model.templ.mesh().uvs);
}

void check_map(const UVMap& map, int resolution, int channels, const char* what)
{
    if (map.width != resolution || map.height != resolution || map.channels != channels) {
        throw Error(std::string(what) + " must be " + std::to_string(resolution) + "x" + std::to_string(resolution) + " with " +
                    std::to_string(channels) + " channels");
    }
}

std::uint64_t fnv1a(const void* data, std::size_t bytes, std::uint64_t h = 1469598103934665603ull)
{
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < bytes; ++i) {
        h ^= p[i];
        h *= 1099511628211ull;
    }
    return h;
}

} // namespace

void FitConfig::validate() const
{
    if (imageWidth < 1 || imageHeight < 1 || !(focal > 0.0)) {
        throw Error("fit config: image size and focal length must be positive");
    }
    for (const PhaseConfig* p : {&base, &detail, &expression}) {
        if (p->iterations < 0 || p->learningRate < 0.0) {
            throw Error("fit config: iterations and learning rates must be non-negative");
        }
    }
    if (warmupIterations < 0) {
        throw Error("fit config: warmupIterations must be non-negative");
    }
    for (double w : {wLms, wPhoto, wRegShape, wRegTexture, wRegExpression, wRegNoise, wRegLatent, angleRate, translationRate, lightingRate}) {
        if (!(w >= 0.0)) {
            throw Error("fit config: weights and rates must be non-negative");
        }
    }
    if (!(finalRateFraction > 0.0 && finalRateFraction <= 1.0)) {
        throw Error("fit config: finalRateFraction must lie in (0, 1]");
    }
}

render::Camera FitConfig::camera() const
{
    return render::Camera::centred(imageWidth, imageHeight, focal);
}

std::string FitConfig::to_json() const
{
    auto phase = [](const PhaseConfig& p) { return nlohmann::json{{"iterations", p.iterations}, {"learningRate", p.learningRate}}; };
    nlohmann::json j{{"imageWidth", imageWidth},
                     {"imageHeight", imageHeight},
                     {"focal", focal},
                     {"warmupIterations", warmupIterations},
                     {"base", phase(base)},
                     {"detail", phase(detail)},
                     {"expression", phase(expression)},
                     {"angleRate", angleRate},
                     {"translationRate", translationRate},
                     {"lightingRate", lightingRate},
                     {"finalRateFraction", finalRateFraction},
                     {"wLms", wLms},
                     {"wPhoto", wPhoto},
                     {"wRegShape", wRegShape},
                     {"wRegTexture", wRegTexture},
                     {"wRegExpression", wRegExpression},
                     {"wRegNoise", wRegNoise},
                     {"wRegLatent", wRegLatent},
                     {"seed", seed}};
    return j.dump(2);
}

FitConfig FitConfig::from_json(const std::string& text)
{
    try {
        const auto j = nlohmann::json::parse(text);
        FitConfig c;
        auto phase = [&](const char* key, PhaseConfig& p) {
            if (j.contains(key)) {
                p.iterations = j[key].value("iterations", p.iterations);
                p.learningRate = j[key].value("learningRate", p.learningRate);
            }
        };
        c.imageWidth = j.value("imageWidth", c.imageWidth);
        c.imageHeight = j.value("imageHeight", c.imageHeight);
        c.focal = j.value("focal", c.focal);
        c.warmupIterations = j.value("warmupIterations", c.warmupIterations);
        phase("base", c.base);
        phase("detail", c.detail);
        phase("expression", c.expression);
        c.angleRate = j.value("angleRate", c.angleRate);
        c.translationRate = j.value("translationRate", c.translationRate);
        c.lightingRate = j.value("lightingRate", c.lightingRate);
        c.finalRateFraction = j.value("finalRateFraction", c.finalRateFraction);
        c.wLms = j.value("wLms", c.wLms);
        c.wPhoto = j.value("wPhoto", c.wPhoto);
        c.wRegShape = j.value("wRegShape", c.wRegShape);
        c.wRegTexture = j.value("wRegTexture", c.wRegTexture);
        c.wRegExpression = j.value("wRegExpression", c.wRegExpression);
        c.wRegNoise = j.value("wRegNoise", c.wRegNoise);
        c.wRegLatent = j.value("wRegLatent", c.wRegLatent);
        c.seed = j.value("seed", c.seed);
        c.validate();
        return c;
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("fit config: ") + e.what());
    }
}

GeneratorId generator_id(const neuralgen::Generator& generator)
{
    const auto data = generator.parameters().data();
    return {generator.spec().hash(), fnv1a(data.data(), data.size() * sizeof(double))};
}

BaseFit fit_base(const Image& image, const geometry::LandmarkSet& landmarks2d, const morphable::BaseModel& model,
                 const FitConfig& config)
{
    config.validate();
    check_landmarks(landmarks2d, model.vertex_count());
    check_image(image, config);
    const render::Camera camera = config.camera();

    BaseFit fit;
    fit.params = morphable::BaseParams::zeros(model);
    const std::vector<Vec3> meanVertices = geometry::unflatten(morphable::eval_geometry(model, fit.params));
    fit.pose = initial_pose(meanVertices, landmarks2d, camera);

    // Pose-only warmup on the landmarks of the mean face.
    {
        std::vector<double> p = pose_vector(fit.pose);
        const std::vector<double> rates = pose_rates(config);
        Adam adam(6, Adam::Options{1.0, 0.9, 0.999, 1e-8});
        for (int step = 0; step < config.warmupIterations; ++step) {
            const LandmarkTerm lm = landmark_term(meanVertices, landmarks2d, fit.pose, camera, 1.0);
            check_finite(lm.loss, "pose warmup", step);
            fit.warmupTrace.push_back(lm.loss);
            const auto g = render::project_backward(meanVertices, fit.pose, camera, landmarks2d.vertexIndices, lm.pointGrads);
            const std::vector<double> grad{g.eulerAngles.x(), g.eulerAngles.y(), g.eulerAngles.z(),
                                           g.translation.x(), g.translation.y(), g.translation.z()};
            adam.set_learning_rate(rate_scale(config, step, config.warmupIterations));
            adam.step(p, grad, rates);
            assign_pose(fit.pose, p);
        }
    }
    fit.initialLandmarkError = landmark_term(meanVertices, landmarks2d, fit.pose, camera, 1.0).meanError;

    TriMesh mesh = template_mesh(model);
    auto update_mesh = [&](std::vector<std::uint8_t>* colorActive) {
        mesh.vertices = geometry::unflatten(morphable::eval_geometry(model, fit.params));
        const Eigen::VectorXd t = morphable::eval_texture(model, fit.params);
        mesh.colors = geometry::unflatten(t.cwiseMax(0.0).cwiseMin(1.0));
        if (colorActive != nullptr) {
            colorActive->resize(static_cast<std::size_t>(t.size()));
            for (Eigen::Index i = 0; i < t.size(); ++i) {
                (*colorActive)[static_cast<std::size_t>(i)] = t[i] > 0.0 && t[i] < 1.0;
            }
        }
    };

    // Ambient start whose brightness matches the image over the covered pixels.
    fit.lighting = SHLighting::ambient(1.0 / render::sh_basis(Vec3::UnitZ())[0]);
    {
        update_mesh(nullptr);
        const RenderOutput r = render::render(mesh, fit.pose, fit.lighting, camera, {10.0, false});
        double rendered = 0.0, observed = 0.0;
        for (std::size_t i = 0; i < r.mask.size(); ++i) {
            if (r.mask[i] != 0) {
                for (std::size_t c = 0; c < 3; ++c) {
                    rendered += r.image[3 * i + c];
                    observed += image.data[3 * i + c];
                }
            }
        }
        if (rendered > 0.0 && observed > 0.0) {
            fit.lighting = SHLighting::ambient(fit.lighting.at(0, 0) * observed / rendered);
        }
    }

    const Eigen::MatrixXd shapeBasis = model.shape.scaled_basis();
    const Eigen::MatrixXd texBasis = model.texture.scaled_basis();
    const Eigen::MatrixXd expBasis = model.expression.scaled_basis();
    Adam shapeAdam(static_cast<std::size_t>(fit.params.shape.size()), Adam::Options{config.base.learningRate, 0.9, 0.999, 1e-8});
    Adam texAdam(static_cast<std::size_t>(fit.params.texture.size()), Adam::Options{config.base.learningRate, 0.9, 0.999, 1e-8});
    Adam expAdam(static_cast<std::size_t>(fit.params.expression.size()), Adam::Options{config.base.learningRate, 0.9, 0.999, 1e-8});
    Adam poseAdam(6, Adam::Options{1.0, 0.9, 0.999, 1e-8});
    Adam lightAdam(27, Adam::Options{config.lightingRate, 0.9, 0.999, 1e-8});
    const std::vector<double> rates = pose_rates(config);
    std::vector<double> posev = pose_vector(fit.pose);
    std::vector<std::uint8_t> colorActive;

    auto block_step = [](Adam& adam, Eigen::VectorXd& p, const Eigen::VectorXd& g, double lr) {
        adam.set_learning_rate(lr);
        adam.step(std::span<double>(p.data(), static_cast<std::size_t>(p.size())),
                  std::span<const double>(g.data(), static_cast<std::size_t>(g.size())));
    };

    const int steps = config.base.iterations;
    for (int step = 0; step < steps; ++step) {
        update_mesh(&colorActive);
        const RenderOutput r = render::render(mesh, fit.pose, fit.lighting, camera);
        const PhotoTerm photo = photo_term(r, image, config.wPhoto);
        const LandmarkTerm lm = landmark_term(mesh.vertices, landmarks2d, fit.pose, camera, config.wLms);
        const double reg = config.wRegShape * fit.params.shape.squaredNorm() + config.wRegTexture * fit.params.texture.squaredNorm() +
                           config.wRegExpression * fit.params.expression.squaredNorm();
        const double loss = photo.loss + lm.loss + reg;
        check_finite(loss, "fit_base", step);
        fit.trace.push_back(loss);

        const render::RenderGradients rg = render::render_backward(r, photo.grad);
        const auto lg = render::project_backward(mesh.vertices, fit.pose, camera, landmarks2d.vertexIndices, lm.pointGrads);
        Eigen::VectorXd posGrad = vec(rg.positions) + vec(lg.vertices);
        Eigen::VectorXd colGrad = vec(rg.colors);
        for (Eigen::Index i = 0; i < colGrad.size(); ++i) {
            if (colorActive[static_cast<std::size_t>(i)] == 0) {
                colGrad[i] = 0.0;
            }
        }
        const double scale = rate_scale(config, step, steps);
        const double lr = config.base.learningRate * scale;
        Eigen::VectorXd gShape = shapeBasis.transpose() * posGrad + 2.0 * config.wRegShape * fit.params.shape;
        Eigen::VectorXd gTex = texBasis.transpose() * colGrad + 2.0 * config.wRegTexture * fit.params.texture;
        Eigen::VectorXd gExp = expBasis.transpose() * posGrad + 2.0 * config.wRegExpression * fit.params.expression;
        block_step(shapeAdam, fit.params.shape, gShape, lr);
        block_step(texAdam, fit.params.texture, gTex, lr);
        block_step(expAdam, fit.params.expression, gExp, lr);

        const Vec3 ge = rg.eulerAngles + lg.eulerAngles;
        const Vec3 gt = rg.translation + lg.translation;
        poseAdam.set_learning_rate(scale);
        poseAdam.step(posev, std::vector<double>{ge.x(), ge.y(), ge.z(), gt.x(), gt.y(), gt.z()}, rates);
        assign_pose(fit.pose, posev);
        lightAdam.set_learning_rate(config.lightingRate * scale);
        lightAdam.step(fit.lighting.coefficients, rg.lighting.coefficients);
    }

    update_mesh(nullptr);
    const RenderOutput r = render::render(mesh, fit.pose, fit.lighting, camera, {10.0, false});
    fit.photoError = photo_term(r, image, 1.0).rmse;
    fit.landmarkError = landmark_term(mesh.vertices, landmarks2d, fit.pose, camera, 1.0).meanError;
    return fit;
}

UVMap UnwrappedBase::detail_condition() const
{
    return geometry::concat(shape, texture);
}

UnwrappedBase unwrap_stage(const morphable::BaseModel& model, const morphable::BaseParams& params, int resolution)
{
    const Eigen::VectorXd neutral = morphable::eval_geometry(model, params, false);
    const Eigen::VectorXd posed = morphable::eval_geometry(model, params, true);
    const Eigen::VectorXd tex = morphable::eval_texture(model, params).cwiseMax(0.0).cwiseMin(1.0);
    UnwrappedBase u;
    u.shape = geometry::unwrap_to_uv(model.templ, std::span<const Vec3>(geometry::unflatten(neutral)), resolution);
    u.texture = geometry::unwrap_to_uv(model.templ, std::span<const Vec3>(geometry::unflatten(tex)), resolution);
    u.expression = geometry::unwrap_to_uv(model.templ, std::span<const Vec3>(geometry::unflatten(posed - neutral)), resolution);
    return u;
}

UVMap expression_condition(const UVMap& detailGeometry, const UVMap& expression)
{
    if (detailGeometry.channels != 3 || expression.channels != 3) {
        throw Error("expression condition needs 3-channel geometry and expression maps");
    }
    if (detailGeometry.width != expression.width || detailGeometry.height != expression.height || detailGeometry.mask != expression.mask) {
        throw Error("expression condition: maps differ in size or mask");
    }
    UVMap sum = detailGeometry;
    for (std::size_t i = 0; i < sum.data.size(); ++i) {
        sum.data[i] += expression.data[i];
    }
    return geometry::concat(sum, expression);
}

LatentFit fit_detail(const FitScene& scene, const UVMap& cond, const std::vector<Vec3>& expressionOffsets,
                     const morphable::BaseModel& model, const neuralgen::Checkpoint& generator, const FitConfig& config)
{
    config.validate();
    const auto& gen = checked_generator(generator, neuralgen::GeneratorKind::Detail, "fit_detail");
    const int res = gen.spec().outputResolution;
    check_map(cond, res, 6, "detail condition");
    if (expressionOffsets.size() != model.vertex_count()) {
        throw Error("fit_detail: one expression offset per template vertex expected");
    }
    const auto plan = plan_for(model, res);
    const auto mask = model.templ.mask(res);
    auto toMesh = [&](const UVMap& out) {
        MeshUpdate m{plan.apply3(out, 0), plan.apply3(out, 3)};
        for (std::size_t v = 0; v < m.vertices.size(); ++v) {
            m.vertices[v] += expressionOffsets[v];
        }
        return m;
    };
    auto toGrad = [&](const std::vector<Vec3>& pos, const std::vector<Vec3>& col) {
        UVMap g = UVMap::zeros(res, res, 6, mask);
        plan.scatter3(pos, g, 0);
        plan.scatter3(col, g, 3);
        return g;
    };
    return optimise_latent(scene, cond, gen, model, config, config.detail, kDetailStream, "fit_detail", toMesh, toGrad);
}

LatentFit fit_exp_refine(const FitScene& scene, const UVMap& detailOutput, const UVMap& expression,
                         const morphable::BaseModel& model, const neuralgen::Checkpoint& generator, const FitConfig& config)
{
    config.validate();
    const auto& gen = checked_generator(generator, neuralgen::GeneratorKind::Expression, "fit_exp_refine");
    const int res = gen.spec().outputResolution;
    check_map(detailOutput, res, 6, "detail output");
    check_map(expression, res, 3, "expression offsets");
    const UVMap cond = expression_condition(detailOutput.slice(0, 3), expression);
    const auto plan = plan_for(model, res);
    const auto mask = model.templ.mask(res);
    const std::vector<Vec3> colors = plan.apply3(detailOutput, 3);
    auto toMesh = [&](const UVMap& out) { return MeshUpdate{plan.apply3(out, 0), colors}; };
    auto toGrad = [&](const std::vector<Vec3>& pos, const std::vector<Vec3>&) {
        UVMap g = UVMap::zeros(res, res, 3, mask);
        plan.scatter3(pos, g, 0);
        return g;
    };
    return optimise_latent(scene, cond, gen, model, config, config.expression, kExpressionStream, "fit_exp_refine", toMesh, toGrad);
}

TriMesh assemble_final(const UVMap& geometry, const UVMap* texture, const geometry::TemplateAtlas& templ)
{
    if (geometry.channels != 3 || geometry.width != geometry.height) {
        throw Error("assemble_final needs a square 3-channel geometry map");
    }
    if (texture != nullptr && (texture->channels != 3 || texture->width != geometry.width || texture->height != geometry.height)) {
        throw Error("assemble_final: texture map must match the geometry map with 3 channels");
    }
    const auto plan = geometry::make_resample_plan(geometry.mask, geometry.width, geometry.height, templ.mesh().uvs);
    TriMesh mesh;
    mesh.triangles = templ.mesh().triangles;
    mesh.uvs = templ.mesh().uvs;
    mesh.vertices = plan.apply3(geometry, 0);
    if (texture != nullptr) {
        mesh.colors = plan.apply3(*texture, 0);
        for (auto& c : mesh.colors) {
            c = c.cwiseMax(0.0).cwiseMin(1.0);
        }
    }
    for (const auto& v : mesh.vertices) {
        if (!v.allFinite()) {
            throw NumericError("assemble_final: non-finite vertex");
        }
    }
    return mesh;
}

PipelineMaps evaluate_pipeline(const morphable::BaseModel& model, const Generators& generators, const morphable::BaseParams& params,
                               const neuralgen::DetailLatent& detailLatent, const neuralgen::DetailLatent& expLatent)
{
    if (generators.detail == nullptr || generators.expression == nullptr) {
        throw Error("pipeline needs both a detail and an expression generator");
    }
    const auto& gd = generators.detail->generator;
    const auto& ge = generators.expression->generator;
    if (gd.spec().outputResolution != ge.spec().outputResolution) {
        throw Error("detail and expression generators run at different resolutions");
    }
    PipelineMaps maps;
    maps.base = unwrap_stage(model, params, gd.spec().outputResolution);
    maps.detail = gd.forward(maps.base.detail_condition(), detailLatent);
    maps.refined = ge.forward(expression_condition(maps.detail.slice(0, 3), maps.base.expression), expLatent);
    return maps;
}

FitMeshes pipeline_meshes(const morphable::BaseModel& model, const morphable::BaseParams& params, const PipelineMaps& maps)
{
    FitMeshes m;
    m.base = morphable::eval_base(model, params);
    const UVMap texture = maps.detail.slice(3, 3);
    m.detail = assemble_final(maps.detail.slice(0, 3), &texture, model.templ);
    m.refined = assemble_final(maps.refined, &texture, model.templ);
    return m;
}

FitResult fit_image(const Image& image, const geometry::LandmarkSet& landmarks2d, const morphable::BaseModel& model,
                    const Generators& generators, const FitConfig& config)
{
    if (generators.detail == nullptr || generators.expression == nullptr) {
        throw Error("fit_image needs both a detail and an expression generator");
    }
    const BaseFit base = fit_base(image, landmarks2d, model, config);
    FitResult result;
    result.baseParams = base.params;
    result.pose = base.pose;
    result.lighting = base.lighting;
    result.lossTrace.warmup = base.warmupTrace;
    result.lossTrace.base = base.trace;
    result.initialLandmarkError = base.initialLandmarkError;
    result.baseLandmarkError = base.landmarkError;
    result.basePhotoError = base.photoError;
    result.detailGenerator = generator_id(generators.detail->generator);
    result.expGenerator = generator_id(generators.expression->generator);

    const int res = generators.detail->generator.spec().outputResolution;
    const UnwrappedBase unwrapped = unwrap_stage(model, base.params, res);
    const Eigen::VectorXd expressionFlat =
        morphable::eval_geometry(model, base.params, true) - morphable::eval_geometry(model, base.params, false);
    const FitScene scene{&image, &landmarks2d, base.pose, base.lighting};

    const LatentFit detail = fit_detail(scene, unwrapped.detail_condition(), geometry::unflatten(expressionFlat), model,
                                        *generators.detail, config);
    result.detailLatent = detail.latent;
    result.lossTrace.detail = detail.trace;
    const LatentFit refine = fit_exp_refine(scene, detail.output, unwrapped.expression, model, *generators.expression, config);
    result.expLatent = refine.latent;
    result.lossTrace.expression = refine.trace;

    const PipelineMaps maps = evaluate_pipeline(model, generators, result.baseParams, result.detailLatent, result.expLatent);
    result.meshes = pipeline_meshes(model, result.baseParams, maps);
    result.photoError = refine.photoError;
    result.landmarkError = refine.landmarkError;
    return result;
}

TriMesh detail_transfer(const FitResult& baseFrom, const FitResult& detailFrom, const morphable::BaseModel& model,
                        const Generators& generators)
{
    if (generators.detail == nullptr || generators.expression == nullptr) {
        throw Error("detail_transfer needs both generators");
    }
    const GeneratorId d = generator_id(generators.detail->generator);
    const GeneratorId e = generator_id(generators.expression->generator);
    if (!(baseFrom.detailGenerator == d && detailFrom.detailGenerator == d && baseFrom.expGenerator == e && detailFrom.expGenerator == e)) {
        throw Error("detail_transfer: checkpoint mismatch; both fits must come from the given generators");
    }
    const PipelineMaps maps = evaluate_pipeline(model, generators, baseFrom.baseParams, detailFrom.detailLatent, detailFrom.expLatent);
    return pipeline_meshes(model, baseFrom.baseParams, maps).refined;
}

TransferDecomposition transfer_decomposition(const UVMap& transferRefined, const UVMap& transferBase, const UVMap& baseDonorRefined,
                                             const UVMap& baseDonorBase, const UVMap& detailDonorRefined, const UVMap& detailDonorBase,
                                             int poolFactor)
{
    for (const UVMap* m : {&transferBase, &baseDonorRefined, &baseDonorBase, &detailDonorRefined, &detailDonorBase}) {
        if (m->channels != 3 || m->width != transferRefined.width || m->height != transferRefined.height || m->mask != transferRefined.mask) {
            throw Error("transfer_decomposition: maps must share size, mask and have 3 channels");
        }
    }
    if (transferRefined.channels != 3) {
        throw Error("transfer_decomposition: maps must have 3 channels");
    }
    TransferDecomposition out;
    const UVMap pt = geometry::average_pool(transferRefined, poolFactor);
    const UVMap pb = geometry::average_pool(baseDonorRefined, poolFactor);
    double dev = 0.0;
    int count = 0;
    for (std::size_t t = 0; t < pt.texel_count(); ++t) {
        if (pt.mask[t] == 0) {
            continue;
        }
        dev += (Eigen::Map<const Vec3>(&pt.data[3 * t]) - Eigen::Map<const Vec3>(&pb.data[3 * t])).norm();
        ++count;
    }
    out.lowFrequencyDeviation = count > 0 ? dev / count : 0.0;

    auto highpass = [&](const UVMap& refined, const UVMap& base) {
        UVMap r = refined;
        for (std::size_t i = 0; i < r.data.size(); ++i) {
            r.data[i] -= base.data[i];
        }
        r.apply_mask();
        const UVMap pooled = geometry::average_pool(r, poolFactor);
        for (int y = 0; y < r.height; ++y) {
            for (int x = 0; x < r.width; ++x) {
                if (!r.masked(x, y)) {
                    continue;
                }
                for (int c = 0; c < 3; ++c) {
                    r.at(x, y, c) -= pooled.at(x / poolFactor, y / poolFactor, c);
                }
            }
        }
        return r;
    };
    const UVMap ht = highpass(transferRefined, transferBase);
    const UVMap hb = highpass(baseDonorRefined, baseDonorBase);
    const UVMap hd = highpass(detailDonorRefined, detailDonorBase);
    auto corr = [](const UVMap& a, const UVMap& b) {
        double ab = 0.0, aa = 0.0, bb = 0.0;
        for (std::size_t i = 0; i < a.data.size(); ++i) {
            ab += a.data[i] * b.data[i];
            aa += a.data[i] * a.data[i];
            bb += b.data[i] * b.data[i];
        }
        return aa > 0.0 && bb > 0.0 ? ab / std::sqrt(aa * bb) : 0.0;
    };
    out.detailDonorCorrelation = corr(ht, hd);
    out.baseDonorCorrelation = corr(ht, hb);
    return out;
}

} // namespace facekit::fitpipe
