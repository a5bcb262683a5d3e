/*
 * facekit - 3D face modelling, registration and fitting from synthetic and captured data.
 *
 * File: core/src/harness/synth.cpp
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
#include "facekit/harness/synth.hpp"

#include "facekit/common/error.hpp"
#include "facekit/common/random.hpp"
#include "facekit/geometry/face_template.hpp"

#include <Eigen/Geometry>
#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <numbers>

namespace facekit::harness {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;
constexpr int kBumpsPerFactor = 3;
constexpr int kColorFactors = 4;
constexpr double kColorAmplitude = 0.06;
constexpr double kPatternContrast = 0.08;
constexpr int kDetailPatterns = 4;
constexpr int kWavesPerPattern = 6;
constexpr double kPatternSpread = 0.4;
constexpr double kIdentityDetail = 0.25; // identity-specific part of the albedo-linked pattern
constexpr double kGeometryOnlyDetail = 0.2;
constexpr double kRefinementGain = 0.15;
constexpr int kIdiosyncraticBumps = 6;
constexpr double kIdiosyncraticShare = 0.1; // of identityAmplitude

// Stream ids keep the shared basis and per-identity draws independent.
enum Stream : std::uint64_t
{
    ShapeBasis = 1,
    ColorBasis = 2,
    PatternBasis = 3,
    ExpressionBasis = 4,
    IdentityCoeffs = 1000,
    IdentityDetail = 1000000,
    IdentityExpression = 2000000,
    ScanSamples = 3000000,
};

struct Bump
{
    Vec2 centre;
    double sigma;
    Vec3 direction;
};

double bump_value(const Bump& b, const Vec2& uv)
{
    return std::exp(-0.5 * (uv - b.centre).squaredNorm() / (b.sigma * b.sigma));
}

Vec3 random_direction(Rng& rng, double zWeight)
{
    Vec3 d(rng.normal(), rng.normal(), zWeight * rng.normal());
    return d.normalized();
}

struct Wave
{
    Vec2 frequency;
    double phase;
};

std::vector<Wave> random_waves(Rng& rng, int count, double fmin, double fmax)
{
    std::vector<Wave> w;
    for (int q = 0; q < count; ++q) {
        const double f = rng.uniform(fmin, fmax);
        const double a = rng.uniform(0.0, kTwoPi);
        w.push_back({Vec2(f * std::cos(a), f * std::sin(a)), rng.uniform(0.0, kTwoPi)});
    }
    return w;
}

double wave_sum(const std::vector<Wave>& waves, const Vec2& uv)
{
    double s = 0.0;
    for (const auto& w : waves) {
        s += std::cos(kTwoPi * w.frequency.dot(uv) + w.phase);
    }
    return s / std::sqrt(0.5 * static_cast<double>(waves.size()));
}

// Shared population structure, rebuilt from the seed on demand.
struct Basis
{
    std::vector<std::vector<Bump>> shape;     // per identity factor
    std::vector<double> shapeNorm;            // RMS of each factor over the template
    std::vector<std::vector<Bump>> color;     // per colour factor
    std::vector<Vec3> colorDirection;
    std::vector<std::vector<Wave>> patterns;  // fine detail patterns
    std::vector<Bump> patternEnvelope;
    double patternNorm = 1.0;

    Basis(const SynthSpec& spec, const geometry::TriMesh& templ)
    {
        Rng shapeRng(spec.seed, ShapeBasis);
        for (int k = 0; k < spec.identityFactors; ++k) {
            std::vector<Bump> bumps;
            for (int m = 0; m < kBumpsPerFactor; ++m) {
                bumps.push_back({Vec2(shapeRng.uniform(0.1, 0.9), shapeRng.uniform(0.1, 0.9)), shapeRng.uniform(0.12, 0.3),
                                 random_direction(shapeRng, 2.0)});
            }
            shape.push_back(std::move(bumps));
        }
        for (const auto& bumps : shape) {
            double sq = 0.0;
            for (const auto& uv : templ.uvs) {
                sq += eval_field(bumps, uv).squaredNorm();
            }
            shapeNorm.push_back(std::sqrt(sq / static_cast<double>(templ.uvs.size())));
        }
        Rng colorRng(spec.seed, ColorBasis);
        for (int k = 0; k < kColorFactors; ++k) {
            std::vector<Bump> bumps;
            for (int m = 0; m < 2; ++m) {
                bumps.push_back({Vec2(colorRng.uniform(0.1, 0.9), colorRng.uniform(0.1, 0.9)), colorRng.uniform(0.15, 0.35), Vec3::Ones()});
            }
            color.push_back(std::move(bumps));
            colorDirection.push_back(Vec3(colorRng.uniform(0.5, 1.0), colorRng.uniform(0.3, 0.8), colorRng.uniform(0.2, 0.7)));
        }
        Rng patternRng(spec.seed, PatternBasis);
        // Forehead, both eye corners and a broad cheek region.
        const Vec2 centres[kDetailPatterns] = {Vec2(0.5, 0.8), Vec2(0.22, 0.6), Vec2(0.78, 0.6), Vec2(0.5, 0.38)};
        const double sigmas[kDetailPatterns] = {0.14, 0.09, 0.09, 0.22};
        for (int j = 0; j < kDetailPatterns; ++j) {
            patterns.push_back(random_waves(patternRng, kWavesPerPattern, 8.0, 13.0));
            patternEnvelope.push_back({centres[j], sigmas[j], Vec3::UnitZ()});
        }
        double sq = 0.0;
        for (const auto& uv : templ.uvs) {
            double v = 0.0;
            for (int j = 0; j < kDetailPatterns; ++j) {
                v += shared_pattern(j, uv);
            }
            sq += v * v;
        }
        patternNorm = std::sqrt(sq / static_cast<double>(templ.uvs.size()));
    }

    static Vec3 eval_field(const std::vector<Bump>& bumps, const Vec2& uv)
    {
        Vec3 d = Vec3::Zero();
        for (const auto& b : bumps) {
            d += bump_value(b, uv) * b.direction;
        }
        return d;
    }

    double shared_pattern(int j, const Vec2& uv) const
    {
        const auto uj = static_cast<std::size_t>(j);
        return bump_value(patternEnvelope[uj], uv) * wave_sum(patterns[uj], uv);
    }
};

struct IdentityDraw
{
    std::vector<double> shapeCoeffs;
    std::vector<double> colorCoeffs;
    std::vector<double> patternWeights;
    std::vector<Wave> albedoDetail;   // identity-specific, visible in the albedo
    std::vector<Wave> geometryDetail; // identity-specific, geometry only
    std::vector<Bump> idiosyncratic;  // identity-specific shape residual
};

IdentityDraw draw_identity(const SynthSpec& spec, int index)
{
    IdentityDraw d;
    Rng rng(spec.seed, IdentityCoeffs + static_cast<std::uint64_t>(index));
    for (int k = 0; k < spec.identityFactors; ++k) {
        const double spread = spec.factorSpread.empty() ? 1.0 : spec.factorSpread[static_cast<std::size_t>(k)];
        d.shapeCoeffs.push_back(spread * rng.normal());
    }
    for (int k = 0; k < kColorFactors; ++k) {
        d.colorCoeffs.push_back(rng.normal());
    }
    for (int j = 0; j < kDetailPatterns; ++j) {
        d.patternWeights.push_back(std::max(0.0, 1.0 + kPatternSpread * rng.normal()));
    }
    Rng detail(spec.seed, IdentityDetail + static_cast<std::uint64_t>(index));
    d.albedoDetail = random_waves(detail, kWavesPerPattern, 8.0, 13.0);
    d.geometryDetail = random_waves(detail, kWavesPerPattern, 8.0, 13.0);
    for (int m = 0; m < kIdiosyncraticBumps; ++m) {
        d.idiosyncratic.push_back({Vec2(detail.uniform(0.15, 0.85), detail.uniform(0.15, 0.85)), detail.uniform(0.05, 0.1),
                                   random_direction(detail, 1.0)});
    }
    return d;
}

void check_index(const SynthSpec& spec, int index)
{
    if (index < 0 || index >= spec.identityCount) {
        throw Error("identity index " + std::to_string(index) + " outside [0, " + std::to_string(spec.identityCount) + ")");
    }
}

// Shared rendering of an identity; detail and contrast select coarse or detailed.
TriMesh build_identity(const SynthSpec& spec, int index, bool withGeometryDetail, double patternContrast)
{
    spec.validate();
    check_index(spec, index);
    const auto atlas = synth_template(spec);
    TriMesh mesh = atlas.mesh();
    const Basis basis(spec, mesh);
    const IdentityDraw draw = draw_identity(spec, index);

    double weightSq = 0.0;
    for (int k = 0; k < spec.identityFactors; ++k) {
        const double lambda = 1.0 / (1.0 + 0.15 * k);
        weightSq += lambda * lambda;
    }
    const double shapeScale = spec.identityAmplitude / std::sqrt(weightSq);
    const Vec3 skin(0.72, 0.55, 0.46);
    mesh.colors.resize(mesh.vertices.size());

    for (std::size_t v = 0; v < mesh.vertices.size(); ++v) {
        const Vec2& uv = mesh.uvs[v];
        Vec3 offset = Vec3::Zero();
        for (int k = 0; k < spec.identityFactors; ++k) {
            const auto uk = static_cast<std::size_t>(k);
            const double lambda = 1.0 / (1.0 + 0.15 * k);
            offset += lambda * draw.shapeCoeffs[uk] * Basis::eval_field(basis.shape[uk], uv) / basis.shapeNorm[uk];
        }
        offset *= shapeScale;
        offset += kIdiosyncraticShare * spec.identityAmplitude * Basis::eval_field(draw.idiosyncratic, uv);
        mesh.vertices[v] += offset;

        double pattern = 0.0;
        for (int j = 0; j < kDetailPatterns; ++j) {
            pattern += draw.patternWeights[static_cast<std::size_t>(j)] * basis.shared_pattern(j, uv);
        }
        pattern = pattern / basis.patternNorm + kIdentityDetail * wave_sum(draw.albedoDetail, uv);
        if (withGeometryDetail) {
            const double geometric = pattern + kGeometryOnlyDetail * wave_sum(draw.geometryDetail, uv);
            mesh.vertices[v].z() -= spec.detailAmplitude * geometric;
        }

        Vec3 c = skin;
        for (int k = 0; k < kColorFactors; ++k) {
            const auto uk = static_cast<std::size_t>(k);
            c += kColorAmplitude * draw.colorCoeffs[uk] * Basis::eval_field(basis.color[uk], uv).x() * basis.colorDirection[uk];
        }
        c -= patternContrast * kPatternContrast * pattern * Vec3::Ones();
        mesh.colors[v] = c.cwiseMax(0.0).cwiseMin(1.0);
    }
    return mesh;
}

} // namespace

void SynthSpec::validate() const
{
    if (identityAmplitude < 0 || expressionAmplitude < 0 || detailAmplitude < 0 || scanNoise < 0) {
        throw Error("synthetic amplitudes must be non-negative");
    }
    if (expressionsPerIdentity < 1 || identityCount < 1 || identityFactors < 1 || scanPoints < 1 || templateGrid < 8) {
        throw Error("synthetic population sizes must be positive (template grid >= 8)");
    }
    if (!factorSpread.empty() && static_cast<int>(factorSpread.size()) != identityFactors) {
        throw Error("factorSpread must have one entry per identity factor");
    }
}

std::string SynthSpec::to_json() const
{
    nlohmann::json j;
    j["seed"] = seed;
    j["identityCount"] = identityCount;
    j["expressionsPerIdentity"] = expressionsPerIdentity;
    j["identityAmplitude"] = identityAmplitude;
    j["expressionAmplitude"] = expressionAmplitude;
    j["detailAmplitude"] = detailAmplitude;
    j["scanNoise"] = scanNoise;
    j["scanPoints"] = scanPoints;
    j["templateGrid"] = templateGrid;
    j["identityFactors"] = identityFactors;
    j["factorSpread"] = factorSpread;
    return j.dump();
}

SynthSpec SynthSpec::from_json(const std::string& text)
{
    try {
        const auto j = nlohmann::json::parse(text);
        SynthSpec s;
        s.seed = j.value("seed", s.seed);
        s.identityCount = j.value("identityCount", s.identityCount);
        s.expressionsPerIdentity = j.value("expressionsPerIdentity", s.expressionsPerIdentity);
        s.identityAmplitude = j.value("identityAmplitude", s.identityAmplitude);
        s.expressionAmplitude = j.value("expressionAmplitude", s.expressionAmplitude);
        s.detailAmplitude = j.value("detailAmplitude", s.detailAmplitude);
        s.scanNoise = j.value("scanNoise", s.scanNoise);
        s.scanPoints = j.value("scanPoints", s.scanPoints);
        s.templateGrid = j.value("templateGrid", s.templateGrid);
        s.identityFactors = j.value("identityFactors", s.identityFactors);
        s.factorSpread = j.value("factorSpread", s.factorSpread);
        s.validate();
        return s;
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("synth spec: ") + e.what());
    }
}

geometry::TemplateAtlas synth_template(const SynthSpec& spec)
{
    return geometry::make_face_template(spec.templateGrid);
}

TriMesh synth_identity(const SynthSpec& spec, int index)
{
    return build_identity(spec, index, true, 1.0);
}

TriMesh synth_identity_coarse(const SynthSpec& spec, int index)
{
    return build_identity(spec, index, false, 0.5);
}

std::vector<Vec3> synth_expression(const SynthSpec& spec, int identityIndex, int expressionIndex)
{
    spec.validate();
    check_index(spec, identityIndex);
    if (expressionIndex < 0 || expressionIndex >= spec.expressionsPerIdentity) {
        throw Error("expression index " + std::to_string(expressionIndex) + " outside [0, " +
                    std::to_string(spec.expressionsPerIdentity) + ")");
    }
    const auto atlas = synth_template(spec);
    const auto& uvs = atlas.mesh().uvs;
    std::vector<Vec3> offsets(uvs.size(), Vec3::Zero());
    if (expressionIndex == 0) {
        return offsets;
    }
    // Shared localised basis of this expression: mouth/jaw and eye regions.
    Rng shared(spec.seed, ExpressionBasis * 1000 + static_cast<std::uint64_t>(expressionIndex));
    std::vector<Bump> bumps;
    for (int m = 0; m < 3; ++m) {
        const bool eyes = shared.uniform() < 0.35;
        const Vec2 c = eyes ? Vec2(shared.uniform() < 0.5 ? 0.33 : 0.67, shared.uniform(0.56, 0.68))
                            : Vec2(shared.uniform(0.3, 0.7), shared.uniform(0.1, 0.4));
        bumps.push_back({c, shared.uniform(0.06, 0.14), random_direction(shared, 1.0)});
    }
    Rng own(spec.seed, IdentityExpression + static_cast<std::uint64_t>(identityIndex) * 64 + static_cast<std::uint64_t>(expressionIndex));
    const double gain = 1.0 + 0.2 * own.normal();
    const Bump personal{Vec2(own.uniform(0.3, 0.7), own.uniform(0.15, 0.4)), 0.08, random_direction(own, 1.0)};
    double peak = 0.0;
    auto region = [&](std::size_t v) { return std::max(geometry::lower_face_weight(uvs[v]), geometry::eye_region_weight(uvs[v])); };
    for (std::size_t v = 0; v < uvs.size(); ++v) {
        offsets[v] = region(v) * Basis::eval_field(bumps, uvs[v]);
        peak = std::max(peak, offsets[v].norm());
    }
    for (std::size_t v = 0; v < uvs.size(); ++v) {
        offsets[v] = spec.expressionAmplitude * (gain * offsets[v] / peak + 0.15 * region(v) * bump_value(personal, uvs[v]) * personal.direction);
    }
    return offsets;
}

std::vector<Vec3> expression_refinement(std::span<const Vec3> offsets)
{
    std::vector<Vec3> r(offsets.size());
    for (std::size_t v = 0; v < offsets.size(); ++v) {
        r[v] = Vec3(0.0, 0.0, -kRefinementGain * offsets[v].norm());
    }
    return r;
}

TriMesh synth_expression_mesh(const SynthSpec& spec, int identityIndex, int expressionIndex)
{
    TriMesh mesh = synth_identity(spec, identityIndex);
    const auto e = synth_expression(spec, identityIndex, expressionIndex);
    const auto r = expression_refinement(e);
    for (std::size_t v = 0; v < mesh.vertices.size(); ++v) {
        mesh.vertices[v] += e[v] + r[v];
    }
    return mesh;
}

registration::ScanTarget synth_scan(const TriMesh& mesh, const geometry::LandmarkSet& landmarks, const SynthSpec& spec,
                                    std::uint64_t stream)
{
    spec.validate();
    geometry::validate(mesh);
    std::vector<double> cumulative;
    double total = 0.0;
    for (std::size_t t = 0; t < mesh.triangles.size(); ++t) {
        total += 0.5 * geometry::face_normal_scaled(mesh, static_cast<int>(t)).norm();
        cumulative.push_back(total);
    }
    if (total <= 0.0) {
        throw NumericError("cannot sample a mesh with zero area");
    }
    Rng rng(spec.seed, ScanSamples + stream);
    registration::ScanTarget scan;
    for (int i = 0; i < spec.scanPoints; ++i) {
        const double r = rng.uniform() * total;
        const auto it = std::lower_bound(cumulative.begin(), cumulative.end(), r);
        const auto t = static_cast<std::size_t>(std::min<std::ptrdiff_t>(it - cumulative.begin(), static_cast<std::ptrdiff_t>(cumulative.size()) - 1));
        double a = rng.uniform(), b = rng.uniform();
        if (a + b > 1.0) {
            a = 1.0 - a;
            b = 1.0 - b;
        }
        const auto& tri = mesh.triangles[t];
        const Vec3& p0 = mesh.vertices[static_cast<std::size_t>(tri[0])];
        const Vec3& p1 = mesh.vertices[static_cast<std::size_t>(tri[1])];
        const Vec3& p2 = mesh.vertices[static_cast<std::size_t>(tri[2])];
        Vec3 p = p0 + a * (p1 - p0) + b * (p2 - p0);
        const Vec3 noise(rng.normal(), rng.normal(), rng.normal());
        p += spec.scanNoise * noise;
        scan.points.push_back(p);
        scan.normals.push_back(geometry::face_normal_scaled(mesh, static_cast<int>(t)).normalized());
    }
    scan.landmarks3d.vertexIndices = landmarks.vertexIndices;
    for (int idx : landmarks.vertexIndices) {
        scan.landmarks3d.points3d.push_back(mesh.vertices[static_cast<std::size_t>(idx)]);
    }
    return scan;
}

registration::ScanTarget mesh_target(const TriMesh& mesh, const geometry::LandmarkSet& landmarks)
{
    geometry::validate(mesh);
    registration::ScanTarget t;
    t.points = mesh.vertices;
    t.normals = geometry::vertex_normals(mesh);
    t.landmarks3d.vertexIndices = landmarks.vertexIndices;
    for (int idx : landmarks.vertexIndices) {
        if (idx < 0 || static_cast<std::size_t>(idx) >= mesh.vertices.size()) {
            throw Error("landmark vertex index out of range");
        }
        t.landmarks3d.points3d.push_back(mesh.vertices[static_cast<std::size_t>(idx)]);
    }
    return t;
}

} // namespace facekit::harness
