/*
 * facekit - 3D face modelling, registration and fitting from synthetic and captured data.
 *
 * File: core/src/render/rasterizer.cpp
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
#include "facekit/render/rasterizer.hpp"

#include "facekit/common/error.hpp"
#include "facekit/common/parallel.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>

namespace facekit::render {

struct RenderState
{
    std::vector<geometry::Triangle> triangles;
    std::vector<Vec3> vertices;     ///< world
    std::vector<Vec3> colors;
    std::vector<Vec3> normalSums;   ///< unnormalised area-weighted world normals
    std::vector<Vec3> worldNormals;
    std::vector<Vec3> cameraPoints;
    std::vector<Vec3> cameraNormals;
    Pose pose;
    SHLighting lighting;
    Camera camera;
    std::vector<double> unclamped; ///< per pixel shaded colour before clamping
};

std::size_t RenderOutput::covered_count() const
{
    return static_cast<std::size_t>(std::count(mask.begin(), mask.end(), std::uint8_t{1}));
}

namespace {

constexpr int kBandRows = 8;

double edge(const Vec2& a, const Vec2& b, const Vec2& p)
{
    return (b.x() - a.x()) * (p.y() - a.y()) - (b.y() - a.y()) * (p.x() - a.x());
}

struct TriSetup
{
    int id = -1;
    double area = 0.0; ///< signed screen-space area (twice)
    int x0 = 0, x1 = -1, y0 = 0, y1 = -1;
};

Vec3 pixel_ray(const Camera& camera, double px, double py)
{
    return Vec3((px - camera.cx) / camera.focal, -(py - camera.cy) / camera.focal, -1.0);
}

} // namespace

RenderOutput render(const geometry::TriMesh& mesh, const Pose& pose, const SHLighting& lighting, const Camera& camera,
                    const RenderOptions& options)
{
    camera.validate();
    const std::size_t n = mesh.vertices.size();
    if (!mesh.triangles.empty() && mesh.colors.size() != n) {
        throw Error("render needs one colour per vertex");
    }
    auto state = std::make_shared<RenderState>();
    state->triangles = mesh.triangles;
    state->vertices = mesh.vertices;
    state->colors = mesh.colors;
    state->pose = pose;
    state->lighting = lighting;
    state->camera = camera;

    state->normalSums.assign(n, Vec3::Zero());
    for (const auto& t : mesh.triangles) {
        const Vec3& a = mesh.vertices[static_cast<std::size_t>(t[0])];
        const Vec3 fn = (mesh.vertices[static_cast<std::size_t>(t[1])] - a).cross(mesh.vertices[static_cast<std::size_t>(t[2])] - a);
        for (int k : t) {
            state->normalSums[static_cast<std::size_t>(k)] += fn;
        }
    }
    const Eigen::Matrix3d R = pose.rotation();
    state->worldNormals.resize(n);
    state->cameraNormals.resize(n);
    state->cameraPoints.resize(n);
    std::vector<Vec2> screen(n);
    std::vector<char> inFront(n, 0);
    for (std::size_t i = 0; i < n; ++i) {
        const double len = state->normalSums[i].norm();
        state->worldNormals[i] = len > 0.0 ? Vec3(state->normalSums[i] / len) : Vec3(0.0, 0.0, 1.0);
        state->cameraNormals[i] = R * state->worldNormals[i];
        const Vec3 p = R * mesh.vertices[i] + pose.translation;
        state->cameraPoints[i] = p;
        const double d = -p.z();
        if (d >= options.nearPlane) {
            inFront[i] = 1;
            screen[i] = Vec2(camera.cx + camera.focal * p.x() / d, camera.cy - camera.focal * p.y() / d);
        }
    }

    const int W = camera.width, H = camera.height;
    std::vector<TriSetup> setups;
    setups.reserve(mesh.triangles.size());
    for (std::size_t f = 0; f < mesh.triangles.size(); ++f) {
        const auto& t = mesh.triangles[f];
        const auto a = static_cast<std::size_t>(t[0]), b = static_cast<std::size_t>(t[1]), c = static_cast<std::size_t>(t[2]);
        if (!inFront[a] || !inFront[b] || !inFront[c]) {
            continue;
        }
        const Vec3& pa = state->cameraPoints[a];
        const Vec3 fn = (state->cameraPoints[b] - pa).cross(state->cameraPoints[c] - pa);
        if (fn.dot(-pa) <= 0.0) {
            continue; // back-facing
        }
        TriSetup s;
        s.id = static_cast<int>(f);
        s.area = edge(screen[a], screen[b], screen[c]);
        if (std::abs(s.area) < 1e-12) {
            continue;
        }
        const double minx = std::min({screen[a].x(), screen[b].x(), screen[c].x()});
        const double maxx = std::max({screen[a].x(), screen[b].x(), screen[c].x()});
        const double miny = std::min({screen[a].y(), screen[b].y(), screen[c].y()});
        const double maxy = std::max({screen[a].y(), screen[b].y(), screen[c].y()});
        s.x0 = std::max(0, static_cast<int>(std::ceil(minx - 0.5)));
        s.x1 = std::min(W - 1, static_cast<int>(std::floor(maxx - 0.5)));
        s.y0 = std::max(0, static_cast<int>(std::ceil(miny - 0.5)));
        s.y1 = std::min(H - 1, static_cast<int>(std::floor(maxy - 0.5)));
        if (s.x0 > s.x1 || s.y0 > s.y1) {
            continue;
        }
        setups.push_back(s);
    }

    RenderOutput out;
    out.width = W;
    out.height = H;
    const auto pixels = static_cast<std::size_t>(W) * static_cast<std::size_t>(H);
    out.image.assign(pixels * 3, 0.0);
    out.depth.assign(pixels, std::numeric_limits<double>::infinity());
    out.mask.assign(pixels, 0);
    out.triangle.assign(pixels, -1);
    out.barycentric.assign(pixels, Vec3::Zero());
    state->unclamped.assign(pixels * 3, 0.0);

    const int bands = (H + kBandRows - 1) / kBandRows;
    parallel_for(0, static_cast<std::size_t>(bands), [&](std::size_t band) {
        const int by0 = static_cast<int>(band) * kBandRows;
        const int by1 = std::min(H - 1, by0 + kBandRows - 1);
        for (const auto& s : setups) {
            if (s.y1 < by0 || s.y0 > by1) {
                continue;
            }
            const auto& t = mesh.triangles[static_cast<std::size_t>(s.id)];
            const Vec2& A = screen[static_cast<std::size_t>(t[0])];
            const Vec2& B = screen[static_cast<std::size_t>(t[1])];
            const Vec2& C = screen[static_cast<std::size_t>(t[2])];
            const double da = -state->cameraPoints[static_cast<std::size_t>(t[0])].z();
            const double db = -state->cameraPoints[static_cast<std::size_t>(t[1])].z();
            const double dc = -state->cameraPoints[static_cast<std::size_t>(t[2])].z();
            for (int y = std::max(s.y0, by0); y <= std::min(s.y1, by1); ++y) {
                for (int x = s.x0; x <= s.x1; ++x) {
                    const Vec2 p(x + 0.5, y + 0.5);
                    const double w0 = edge(B, C, p) / s.area;
                    const double w1 = edge(C, A, p) / s.area;
                    const double w2 = edge(A, B, p) / s.area;
                    if (w0 < 0.0 || w1 < 0.0 || w2 < 0.0) {
                        continue;
                    }
                    // Perspective-correct weights and depth.
                    const double q0 = w0 / da, q1 = w1 / db, q2 = w2 / dc;
                    const double qs = q0 + q1 + q2;
                    const double depth = 1.0 / qs;
                    const std::size_t pix = out.pixel(x, y);
                    if (depth < out.depth[pix]) {
                        out.depth[pix] = depth;
                        out.triangle[pix] = s.id;
                        out.barycentric[pix] = Vec3(q0, q1, q2) / qs;
                        out.mask[pix] = 1;
                    }
                }
            }
        }
        for (int y = by0; y <= by1; ++y) {
            for (int x = 0; x < W; ++x) {
                const std::size_t pix = out.pixel(x, y);
                if (!out.mask[pix]) {
                    for (int c = 0; c < 3; ++c) out.image[3 * pix + static_cast<std::size_t>(c)] = options.background[c];
                    continue;
                }
                const auto& t = mesh.triangles[static_cast<std::size_t>(out.triangle[pix])];
                const Vec3& bw = out.barycentric[pix];
                Vec3 albedo = Vec3::Zero(), normal = Vec3::Zero();
                for (int k = 0; k < 3; ++k) {
                    albedo += bw[k] * mesh.colors[static_cast<std::size_t>(t[static_cast<std::size_t>(k)])];
                    normal += bw[k] * state->cameraNormals[static_cast<std::size_t>(t[static_cast<std::size_t>(k)])];
                }
                const Vec3 shaded = albedo.cwiseProduct(sh_irradiance(normal, lighting));
                for (int c = 0; c < 3; ++c) {
                    state->unclamped[3 * pix + static_cast<std::size_t>(c)] = shaded[c];
                    out.image[3 * pix + static_cast<std::size_t>(c)] = std::clamp(shaded[c], 0.0, 1.0);
                }
            }
        }
    });
    if (options.recordGradients) {
        out.state = std::move(state);
    }
    return out;
}

RenderGradients render_backward(const RenderOutput& output, std::span<const double> imageGrad)
{
    if (!output.state) {
        throw Error("render_backward needs a render output recorded with recordGradients = true");
    }
    const auto pixels = static_cast<std::size_t>(output.width) * static_cast<std::size_t>(output.height);
    if (imageGrad.size() != pixels * 3) {
        throw Error("render_backward: gradient has " + std::to_string(imageGrad.size()) + " entries, expected " +
                    std::to_string(pixels * 3));
    }
    const RenderState& st = *output.state;
    const std::size_t n = st.vertices.size();
    const Camera& cam = st.camera;

    struct Accum
    {
        std::vector<Vec3> point, normal, color;
        std::array<double, 27> light{};
    };
    const int bands = (output.height + kBandRows - 1) / kBandRows;
    std::vector<Accum> acc(static_cast<std::size_t>(bands));

    parallel_for(0, static_cast<std::size_t>(bands), [&](std::size_t band) {
        Accum& a = acc[band];
        a.point.assign(n, Vec3::Zero());
        a.normal.assign(n, Vec3::Zero());
        a.color.assign(n, Vec3::Zero());
        const int by0 = static_cast<int>(band) * kBandRows;
        const int by1 = std::min(output.height - 1, by0 + kBandRows - 1);
        for (int y = by0; y <= by1; ++y) {
            for (int x = 0; x < output.width; ++x) {
                const std::size_t pix = output.pixel(x, y);
                if (!output.mask[pix]) continue;
                Vec3 cbar;
                bool any = false;
                for (int c = 0; c < 3; ++c) {
                    const double u = st.unclamped[3 * pix + static_cast<std::size_t>(c)];
                    cbar[c] = (u >= 0.0 && u <= 1.0) ? imageGrad[3 * pix + static_cast<std::size_t>(c)] : 0.0;
                    any = any || cbar[c] != 0.0;
                }
                if (!any) continue;
                const auto& t = st.triangles[static_cast<std::size_t>(output.triangle[pix])];
                const Vec3& bw = output.barycentric[pix];
                std::array<std::size_t, 3> v{static_cast<std::size_t>(t[0]), static_cast<std::size_t>(t[1]), static_cast<std::size_t>(t[2])};
                Vec3 albedo = Vec3::Zero(), nu = Vec3::Zero();
                for (int k = 0; k < 3; ++k) {
                    albedo += bw[k] * st.colors[v[static_cast<std::size_t>(k)]];
                    nu += bw[k] * st.cameraNormals[v[static_cast<std::size_t>(k)]];
                }
                const double len = nu.norm();
                if (len <= 0.0) continue;
                const Vec3 nrm = nu / len;
                const auto basis = sh_basis(nrm);
                Vec3 irr = Vec3::Zero();
                for (int c = 0; c < 3; ++c)
                    for (int i = 0; i < 9; ++i) irr[c] += st.lighting.at(c, i) * basis[static_cast<std::size_t>(i)];

                const Vec3 albedoBar = cbar.cwiseProduct(irr);
                const Vec3 irrBar = cbar.cwiseProduct(albedo);
                Eigen::Matrix<double, 9, 1> lsum = Eigen::Matrix<double, 9, 1>::Zero();
                for (int c = 0; c < 3; ++c) {
                    for (int i = 0; i < 9; ++i) {
                        a.light[static_cast<std::size_t>(9 * c + i)] += irrBar[c] * basis[static_cast<std::size_t>(i)];
                        lsum(i) += irrBar[c] * st.lighting.at(c, i);
                    }
                }
                const Vec3 nbar = sh_basis_jacobian(nrm).transpose() * lsum;
                const Vec3 nubar = (nbar - nrm * nrm.dot(nbar)) / len;

                Vec3 bbar;
                for (int k = 0; k < 3; ++k) {
                    const std::size_t vk = v[static_cast<std::size_t>(k)];
                    a.normal[vk] += bw[k] * nubar;
                    a.color[vk] += bw[k] * albedoBar;
                    bbar[k] = st.cameraNormals[vk].dot(nubar) + st.colors[vk].dot(albedoBar);
                }
                // Barycentrics from the ray-plane intersection [e1 e2 -r] (b1, b2, s) = -A.
                const Vec3& A = st.cameraPoints[v[0]];
                Eigen::Matrix3d M;
                M.col(0) = st.cameraPoints[v[1]] - A;
                M.col(1) = st.cameraPoints[v[2]] - A;
                M.col(2) = -pixel_ray(cam, x + 0.5, y + 0.5);
                const Vec3 xbar(bbar[1] - bbar[0], bbar[2] - bbar[0], 0.0);
                const Vec3 yv = M.transpose().partialPivLu().solve(xbar);
                for (int k = 0; k < 3; ++k) {
                    a.point[v[static_cast<std::size_t>(k)]] -= bw[k] * yv;
                }
            }
        }
    });

    Accum total;
    total.point.assign(n, Vec3::Zero());
    total.normal.assign(n, Vec3::Zero());
    total.color.assign(n, Vec3::Zero());
    for (const auto& a : acc) {
        for (std::size_t i = 0; i < n; ++i) {
            total.point[i] += a.point[i];
            total.normal[i] += a.normal[i];
            total.color[i] += a.color[i];
        }
        for (std::size_t k = 0; k < 27; ++k) total.light[k] += a.light[k];
    }

    RenderGradients g;
    g.colors = std::move(total.color);
    g.lighting.coefficients = total.light;
    g.positions.assign(n, Vec3::Zero());
    const Eigen::Matrix3d R = st.pose.rotation();
    const auto dR = st.pose.rotation_derivatives();
    std::vector<Vec3> sumBar(n, Vec3::Zero());
    for (std::size_t i = 0; i < n; ++i) {
        const Vec3& pbar = total.point[i];
        g.positions[i] += R.transpose() * pbar;
        g.translation += pbar;
        const Vec3& nbar = total.normal[i];
        for (int k = 0; k < 3; ++k) {
            g.eulerAngles[k] += pbar.dot(dR[static_cast<std::size_t>(k)] * st.vertices[i]) +
                                nbar.dot(dR[static_cast<std::size_t>(k)] * st.worldNormals[i]);
        }
        const double len = st.normalSums[i].norm();
        if (len > 0.0) {
            const Vec3 wbar = R.transpose() * nbar;
            const Vec3& nw = st.worldNormals[i];
            sumBar[i] = (wbar - nw * nw.dot(wbar)) / len;
        }
    }
    for (const auto& t : st.triangles) {
        const auto a = static_cast<std::size_t>(t[0]), b = static_cast<std::size_t>(t[1]), c = static_cast<std::size_t>(t[2]);
        const Vec3 mbar = sumBar[a] + sumBar[b] + sumBar[c];
        if (mbar.isZero(0.0)) continue;
        const Vec3 e1 = st.vertices[b] - st.vertices[a];
        const Vec3 e2 = st.vertices[c] - st.vertices[a];
        const Vec3 e1bar = e2.cross(mbar);
        const Vec3 e2bar = mbar.cross(e1);
        g.positions[a] -= e1bar + e2bar;
        g.positions[b] += e1bar;
        g.positions[c] += e2bar;
    }
    return g;
}

} // namespace facekit::render
