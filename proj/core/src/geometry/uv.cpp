/*
 * facekit - 3D face modelling, registration and fitting from synthetic and captured data.
 *
 * File: core/src/geometry/uv.cpp
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
#include "facekit/geometry/uv.hpp"

#include "facekit/common/error.hpp"
#include "facekit/common/parallel.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <string>

namespace facekit::geometry {

UVMap UVMap::zeros(int width, int height, int channels, std::vector<std::uint8_t> mask)
{
    UVMap m;
    m.width = width;
    m.height = height;
    m.channels = channels;
    m.data.assign(static_cast<std::size_t>(width) * static_cast<std::size_t>(height) * static_cast<std::size_t>(channels), 0.0);
    if (mask.empty()) {
        mask.assign(static_cast<std::size_t>(width) * static_cast<std::size_t>(height), 1);
    }
    if (mask.size() != m.texel_count()) {
        throw Error("mask size does not match map size");
    }
    m.mask = std::move(mask);
    return m;
}

std::size_t UVMap::masked_count() const
{
    return static_cast<std::size_t>(std::count_if(mask.begin(), mask.end(), [](std::uint8_t m) { return m != 0; }));
}

UVMap UVMap::slice(int first, int count) const
{
    if (first < 0 || first + count > channels) {
        throw Error("channel slice out of range");
    }
    UVMap out = zeros(width, height, count, mask);
    for (std::size_t t = 0; t < texel_count(); ++t) {
        for (int c = 0; c < count; ++c) {
            out.data[t * static_cast<std::size_t>(count) + static_cast<std::size_t>(c)] =
                data[t * static_cast<std::size_t>(channels) + static_cast<std::size_t>(first + c)];
        }
    }
    return out;
}

void UVMap::apply_mask()
{
    const auto ch = static_cast<std::size_t>(channels);
    for (std::size_t t = 0; t < texel_count(); ++t) {
        if (!mask[t]) {
            std::fill_n(data.begin() + static_cast<std::ptrdiff_t>(t * ch), ch, 0.0);
        }
    }
}

UVMap concat(const UVMap& a, const UVMap& b)
{
    if (a.width != b.width || a.height != b.height) {
        throw Error("cannot concatenate maps of different size");
    }
    UVMap out = UVMap::zeros(a.width, a.height, a.channels + b.channels, a.mask);
    const auto ca = static_cast<std::size_t>(a.channels);
    const auto cb = static_cast<std::size_t>(b.channels);
    for (std::size_t t = 0; t < a.texel_count(); ++t) {
        std::copy_n(a.data.begin() + static_cast<std::ptrdiff_t>(t * ca), ca,
                    out.data.begin() + static_cast<std::ptrdiff_t>(t * (ca + cb)));
        std::copy_n(b.data.begin() + static_cast<std::ptrdiff_t>(t * cb), cb,
                    out.data.begin() + static_cast<std::ptrdiff_t>(t * (ca + cb) + ca));
    }
    return out;
}

TemplateAtlas::TemplateAtlas(TriMesh mesh, LandmarkSet landmarks) : mesh_(std::move(mesh)), landmarks_(std::move(landmarks))
{
    validate(mesh_);
    if (mesh_.uvs.size() != mesh_.vertices.size()) {
        throw Error("template mesh needs one uv per vertex");
    }
    for (std::size_t i = 0; i < mesh_.uvs.size(); ++i) {
        const Vec2& uv = mesh_.uvs[i];
        if (uv.x() < 0.0 || uv.x() > 1.0 || uv.y() < 0.0 || uv.y() > 1.0) {
            throw Error("template uv of vertex " + std::to_string(i) + " lies outside the unit square");
        }
    }
    for (std::size_t f = 0; f < mesh_.triangles.size(); ++f) {
        const auto& t = mesh_.triangles[f];
        const Vec2 e1 = mesh_.uvs[static_cast<std::size_t>(t[1])] - mesh_.uvs[static_cast<std::size_t>(t[0])];
        const Vec2 e2 = mesh_.uvs[static_cast<std::size_t>(t[2])] - mesh_.uvs[static_cast<std::size_t>(t[0])];
        if (std::abs(e1.x() * e2.y() - e1.y() * e2.x()) <= 0.0) {
            throw Error("template triangle " + std::to_string(f) + " is degenerate in uv space");
        }
    }
    for (int idx : landmarks_.vertexIndices) {
        if (idx < 0 || static_cast<std::size_t>(idx) >= mesh_.vertices.size()) {
            throw Error("landmark vertex index " + std::to_string(idx) + " is out of range");
        }
    }
}

const UvRasterIndex& TemplateAtlas::uv_index(int resolution) const
{
    std::lock_guard lock(cache_->mutex);
    auto& slot = cache_->byResolution[resolution];
    if (!slot) {
        slot = std::make_unique<UvRasterIndex>(build_uv_index(mesh_, resolution));
    }
    return *slot;
}

UvRasterIndex build_uv_index(const TriMesh& mesh, int resolution)
{
    if (resolution < 4) {
        throw Error("uv resolution must be at least 4, got " + std::to_string(resolution));
    }
    UvRasterIndex index;
    index.resolution = resolution;
    const auto texels = static_cast<std::size_t>(resolution) * static_cast<std::size_t>(resolution);
    index.triangle.assign(texels, -1);
    index.barycentric.assign(texels, Vec3::Zero());
    index.mask.assign(texels, 0);

    // Rows are independent; each row scans triangles in id order so the first
    // (lowest id) covering triangle wins.
    const double res = resolution;
    std::vector<std::array<double, 4>> boxes(mesh.triangles.size());
    for (std::size_t f = 0; f < mesh.triangles.size(); ++f) {
        const auto& t = mesh.triangles[f];
        const Vec2& a = mesh.uvs[static_cast<std::size_t>(t[0])];
        const Vec2& b = mesh.uvs[static_cast<std::size_t>(t[1])];
        const Vec2& c = mesh.uvs[static_cast<std::size_t>(t[2])];
        boxes[f] = {std::min({a.x(), b.x(), c.x()}), std::max({a.x(), b.x(), c.x()}),
                    std::min({a.y(), b.y(), c.y()}), std::max({a.y(), b.y(), c.y()})};
    }
    parallel_for(0, static_cast<std::size_t>(resolution), [&](std::size_t yRow) {
        const int y = static_cast<int>(yRow);
        const double v = (y + 0.5) / res;
        for (std::size_t f = 0; f < mesh.triangles.size(); ++f) {
            const auto& box = boxes[f];
            if (v < box[2] || v > box[3]) {
                continue;
            }
            const auto& t = mesh.triangles[f];
            const Vec2& a = mesh.uvs[static_cast<std::size_t>(t[0])];
            const Vec2& b = mesh.uvs[static_cast<std::size_t>(t[1])];
            const Vec2& c = mesh.uvs[static_cast<std::size_t>(t[2])];
            const double det = (b.x() - a.x()) * (c.y() - a.y()) - (c.x() - a.x()) * (b.y() - a.y());
            const int x0 = std::max(0, static_cast<int>(std::floor(box[0] * res - 0.5)));
            const int x1 = std::min(resolution - 1, static_cast<int>(std::ceil(box[1] * res - 0.5)));
            for (int x = x0; x <= x1; ++x) {
                const std::size_t texel = static_cast<std::size_t>(y) * static_cast<std::size_t>(resolution) + static_cast<std::size_t>(x);
                if (index.triangle[texel] >= 0) {
                    continue;
                }
                const double u = (x + 0.5) / res;
                const double l1 = ((u - a.x()) * (c.y() - a.y()) - (c.x() - a.x()) * (v - a.y())) / det;
                const double l2 = ((b.x() - a.x()) * (v - a.y()) - (u - a.x()) * (b.y() - a.y())) / det;
                const double l0 = 1.0 - l1 - l2;
                constexpr double eps = 1e-12;
                if (l0 >= -eps && l1 >= -eps && l2 >= -eps) {
                    Vec3 bary(std::max(l0, 0.0), std::max(l1, 0.0), std::max(l2, 0.0));
                    bary /= bary.sum();
                    index.triangle[texel] = static_cast<int>(f);
                    index.barycentric[texel] = bary;
                    index.mask[texel] = 1;
                }
            }
        }
    });
    return index;
}

UVMap unwrap_to_uv(const TemplateAtlas& atlas, const Eigen::MatrixXd& attribute, int resolution)
{
    if (resolution < 4) {
        throw Error("uv resolution must be at least 4, got " + std::to_string(resolution));
    }
    if (static_cast<std::size_t>(attribute.rows()) != atlas.vertex_count()) {
        throw Error("attribute has " + std::to_string(attribute.rows()) + " rows but the template has " +
                    std::to_string(atlas.vertex_count()) + " vertices");
    }
    const auto& index = atlas.uv_index(resolution);
    const int channels = static_cast<int>(attribute.cols());
    UVMap map = UVMap::zeros(resolution, resolution, channels, index.mask);
    const auto& tris = atlas.mesh().triangles;
    parallel_for(0, map.texel_count(), [&](std::size_t texel) {
        const int f = index.triangle[texel];
        if (f < 0) {
            return;
        }
        const auto& t = tris[static_cast<std::size_t>(f)];
        const Vec3& w = index.barycentric[texel];
        for (int c = 0; c < channels; ++c) {
            map.data[texel * static_cast<std::size_t>(channels) + static_cast<std::size_t>(c)] =
                attribute(t[0], c) + w[1] * (attribute(t[1], c) - attribute(t[0], c)) + w[2] * (attribute(t[2], c) - attribute(t[0], c));
        }
    });
    return map;
}

UVMap unwrap_to_uv(const TemplateAtlas& atlas, std::span<const Vec3> attribute, int resolution)
{
    Eigen::MatrixXd m(static_cast<Eigen::Index>(attribute.size()), 3);
    for (std::size_t i = 0; i < attribute.size(); ++i) {
        m.row(static_cast<Eigen::Index>(i)) = attribute[i].transpose();
    }
    return unwrap_to_uv(atlas, m, resolution);
}

Eigen::MatrixXd ResamplePlan::apply(const UVMap& map, int firstChannel, int channelCount) const
{
    if (map.width != width || map.height != height) {
        throw Error("resample plan was built for a different map size");
    }
    const std::size_t n = vertex_count();
    Eigen::MatrixXd out = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(n), channelCount);
    const auto ch = static_cast<std::size_t>(map.channels);
    for (std::size_t v = 0; v < n; ++v) {
        for (std::size_t k = offsets[v]; k < offsets[v + 1]; ++k) {
            const double* texel = &map.data[texels[k] * ch + static_cast<std::size_t>(firstChannel)];
            for (int c = 0; c < channelCount; ++c) {
                out(static_cast<Eigen::Index>(v), c) += weights[k] * texel[c];
            }
        }
    }
    return out;
}

std::vector<Vec3> ResamplePlan::apply3(const UVMap& map, int firstChannel) const
{
    const Eigen::MatrixXd m = apply(map, firstChannel, 3);
    std::vector<Vec3> out(static_cast<std::size_t>(m.rows()));
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = m.row(static_cast<Eigen::Index>(i)).transpose();
    }
    return out;
}

void ResamplePlan::scatter3(std::span<const Vec3> grad, UVMap& gradMap, int firstChannel) const
{
    const auto ch = static_cast<std::size_t>(gradMap.channels);
    for (std::size_t v = 0; v < vertex_count(); ++v) {
        for (std::size_t k = offsets[v]; k < offsets[v + 1]; ++k) {
            double* texel = &gradMap.data[texels[k] * ch + static_cast<std::size_t>(firstChannel)];
            for (int c = 0; c < 3; ++c) {
                texel[c] += weights[k] * grad[v][c];
            }
        }
    }
}

ResamplePlan make_resample_plan(const std::vector<std::uint8_t>& mask, int width, int height, std::span<const Vec2> uvs)
{
    if (mask.size() != static_cast<std::size_t>(width) * static_cast<std::size_t>(height)) {
        throw Error("mask size does not match map size");
    }
    ResamplePlan plan;
    plan.width = width;
    plan.height = height;
    plan.offsets.reserve(uvs.size() + 1);
    plan.offsets.push_back(0);
    auto masked = [&](int x, int y) {
        return x >= 0 && y >= 0 && x < width && y < height &&
               mask[static_cast<std::size_t>(y) * static_cast<std::size_t>(width) + static_cast<std::size_t>(x)] != 0;
    };
    auto texel_id = [&](int x, int y) {
        return static_cast<std::size_t>(y) * static_cast<std::size_t>(width) + static_cast<std::size_t>(x);
    };

    for (const Vec2& uv : uvs) {
        const double fx = uv.x() * width - 0.5;
        const double fy = uv.y() * height - 0.5;
        const int x0 = static_cast<int>(std::floor(fx));
        const int y0 = static_cast<int>(std::floor(fy));
        const double ax = fx - x0;
        const double ay = fy - y0;

        if (masked(x0, y0) && masked(x0 + 1, y0) && masked(x0, y0 + 1) && masked(x0 + 1, y0 + 1)) {
            plan.texels.insert(plan.texels.end(), {texel_id(x0, y0), texel_id(x0 + 1, y0), texel_id(x0, y0 + 1), texel_id(x0 + 1, y0 + 1)});
            plan.weights.insert(plan.weights.end(), {(1 - ax) * (1 - ay), ax * (1 - ay), (1 - ax) * ay, ax * ay});
            plan.offsets.push_back(plan.texels.size());
            continue;
        }

        // Affine least-squares fit over the masked texels of the 4x4 block.
        std::vector<std::pair<int, int>> support;
        for (int y = y0 - 1; y <= y0 + 2; ++y) {
            for (int x = x0 - 1; x <= x0 + 2; ++x) {
                if (masked(x, y)) {
                    support.emplace_back(x, y);
                }
            }
        }
        bool fitted = false;
        if (support.size() >= 3) {
            Eigen::MatrixXd a(static_cast<Eigen::Index>(support.size()), 3);
            for (std::size_t k = 0; k < support.size(); ++k) {
                a.row(static_cast<Eigen::Index>(k)) << 1.0, support[k].first - fx, support[k].second - fy;
            }
            const Eigen::Matrix3d ata = a.transpose() * a;
            Eigen::LDLT<Eigen::Matrix3d> ldlt(ata);
            const double cond = ata.diagonal().minCoeff();
            Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> eig(ata, Eigen::EigenvaluesOnly);
            if (ldlt.info() == Eigen::Success && eig.eigenvalues()(0) > 1e-6 * std::max(1.0, cond)) {
                // Value at the query point is e0^T (A^T A)^-1 A^T y.
                const Eigen::Vector3d e0 = ldlt.solve(Eigen::Vector3d::UnitX());
                const Eigen::VectorXd w = a * e0;
                for (std::size_t k = 0; k < support.size(); ++k) {
                    plan.texels.push_back(texel_id(support[k].first, support[k].second));
                    plan.weights.push_back(w(static_cast<Eigen::Index>(k)));
                }
                fitted = true;
            }
        }
        if (!fitted) {
            // Nearest masked texel by centre distance; ties go to the lowest texel id.
            double best = std::numeric_limits<double>::infinity();
            std::size_t bestTexel = 0;
            bool found = false;
            for (int y = 0; y < height; ++y) {
                for (int x = 0; x < width; ++x) {
                    if (!masked(x, y)) {
                        continue;
                    }
                    const double d = (x - fx) * (x - fx) + (y - fy) * (y - fy);
                    if (d < best) {
                        best = d;
                        bestTexel = texel_id(x, y);
                        found = true;
                    }
                }
            }
            if (!found) {
                throw Error("cannot resample from a map without masked texels");
            }
            plan.texels.push_back(bestTexel);
            plan.weights.push_back(1.0);
            ++plan.fallbackCount;
        }
        plan.offsets.push_back(plan.texels.size());
    }
    return plan;
}

ResampleResult resample_uv_to_vertices(const UVMap& map, const TemplateAtlas& atlas)
{
    const auto plan = make_resample_plan(map.mask, map.width, map.height, atlas.mesh().uvs);
    return {plan.apply(map, 0, map.channels), plan.fallbackCount};
}

UVMap upsample_uv(const UVMap& map, int targetResolution)
{
    if (targetResolution < map.width || targetResolution < map.height) {
        throw Error("target resolution " + std::to_string(targetResolution) + " is below the source resolution");
    }
    const int tw = targetResolution;
    const int th = targetResolution;
    std::vector<std::uint8_t> mask(static_cast<std::size_t>(tw) * static_cast<std::size_t>(th), 0);
    UVMap out = UVMap::zeros(tw, th, map.channels, mask);
    const auto ch = static_cast<std::size_t>(map.channels);
    const double sx = static_cast<double>(map.width) / tw;
    const double sy = static_cast<double>(map.height) / th;

    parallel_for(0, static_cast<std::size_t>(th), [&](std::size_t row) {
        const int y = static_cast<int>(row);
        const double fy = (y + 0.5) * sy - 0.5;
        const int ny = std::clamp(static_cast<int>(std::lround(fy)), 0, map.height - 1);
        const int y0 = static_cast<int>(std::floor(fy));
        const double ay = fy - y0;
        for (int x = 0; x < tw; ++x) {
            const double fx = (x + 0.5) * sx - 0.5;
            const int nx = std::clamp(static_cast<int>(std::lround(fx)), 0, map.width - 1);
            if (!map.masked(nx, ny)) {
                continue;
            }
            const int x0 = static_cast<int>(std::floor(fx));
            const double ax = fx - x0;
            double wsum = 0.0;
            const std::size_t dst = out.index(x, y);
            double* o = &out.data[dst * ch];
            for (int dy = 0; dy <= 1; ++dy) {
                for (int dx = 0; dx <= 1; ++dx) {
                    const int cx = std::clamp(x0 + dx, 0, map.width - 1);
                    const int cy = std::clamp(y0 + dy, 0, map.height - 1);
                    const double w = (dx ? ax : 1.0 - ax) * (dy ? ay : 1.0 - ay);
                    if (w <= 0.0 || !map.masked(cx, cy)) {
                        continue;
                    }
                    const double* s = &map.data[map.index(cx, cy) * ch];
                    for (std::size_t c = 0; c < ch; ++c) {
                        o[c] += w * s[c];
                    }
                    wsum += w;
                }
            }
            if (wsum <= 0.0) {
                // Only reachable when the source point sits exactly on the nearest texel.
                const double* s = &map.data[map.index(nx, ny) * ch];
                std::copy_n(s, ch, o);
            } else {
                for (std::size_t c = 0; c < ch; ++c) {
                    o[c] /= wsum;
                }
            }
            out.mask[dst] = 1;
        }
    });
    return out;
}

NormalMapResult normal_map(const UVMap& geometry)
{
    if (geometry.channels != 3) {
        throw Error("normal_map expects a 3-channel geometry map");
    }
    const int w = geometry.width;
    const int h = geometry.height;
    UVMap normals = UVMap::zeros(w, h, 3, geometry.mask);
    std::vector<std::uint8_t> valid(geometry.texel_count(), 0);

    auto pos = [&](int x, int y) {
        const double* p = &geometry.data[geometry.index(x, y) * 3];
        return Vec3(p[0], p[1], p[2]);
    };
    auto inside = [&](int x, int y) { return x >= 0 && y >= 0 && x < w && y < h && geometry.masked(x, y); };
    auto derivative = [&](int x, int y, int dx, int dy, double pitch) -> Vec3 {
        const bool fwd = inside(x + dx, y + dy);
        const bool bwd = inside(x - dx, y - dy);
        if (fwd && bwd) {
            return (pos(x + dx, y + dy) - pos(x - dx, y - dy)) / (2.0 * pitch);
        }
        if (fwd) {
            return (pos(x + dx, y + dy) - pos(x, y)) / pitch;
        }
        if (bwd) {
            return (pos(x, y) - pos(x - dx, y - dy)) / pitch;
        }
        return Vec3::Zero();
    };

    parallel_for(0, static_cast<std::size_t>(h), [&](std::size_t row) {
        const int y = static_cast<int>(row);
        for (int x = 0; x < w; ++x) {
            if (!geometry.masked(x, y)) {
                continue;
            }
            const Vec3 du = derivative(x, y, 1, 0, 1.0 / w);
            const Vec3 dv = derivative(x, y, 0, 1, 1.0 / h);
            const Vec3 n = du.cross(dv);
            const double len = n.norm();
            if (len > 1e-12) {
                const Vec3 unit = n / len;
                double* o = &normals.data[normals.index(x, y) * 3];
                o[0] = unit.x();
                o[1] = unit.y();
                o[2] = unit.z();
                valid[normals.index(x, y)] = 1;
            }
        }
    });

    int fallback = 0;
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            if (!geometry.masked(x, y) || valid[normals.index(x, y)]) {
                continue;
            }
            ++fallback;
            // Copy the nearest texel that has a valid normal (ring search).
            bool copied = false;
            for (int r = 1; r < std::max(w, h) && !copied; ++r) {
                double best = std::numeric_limits<double>::infinity();
                std::size_t bestIdx = 0;
                for (int yy = std::max(0, y - r); yy <= std::min(h - 1, y + r); ++yy) {
                    for (int xx = std::max(0, x - r); xx <= std::min(w - 1, x + r); ++xx) {
                        const std::size_t idx = normals.index(xx, yy);
                        if (!valid[idx]) {
                            continue;
                        }
                        const double d = (xx - x) * (xx - x) + (yy - y) * (yy - y);
                        if (d < best) {
                            best = d;
                            bestIdx = idx;
                        }
                    }
                }
                if (std::isfinite(best)) {
                    std::copy_n(&normals.data[bestIdx * 3], 3, &normals.data[normals.index(x, y) * 3]);
                    copied = true;
                }
            }
            if (!copied) {
                double* o = &normals.data[normals.index(x, y) * 3];
                o[0] = 0.0;
                o[1] = 0.0;
                o[2] = 1.0;
            }
        }
    }
    return {std::move(normals), fallback};
}

UVMap average_pool(const UVMap& map, int factor)
{
    if (factor < 1 || map.width % factor != 0 || map.height % factor != 0) {
        throw Error("pool factor must divide the map size");
    }
    const int pw = map.width / factor;
    const int ph = map.height / factor;
    UVMap out = UVMap::zeros(pw, ph, map.channels, std::vector<std::uint8_t>(static_cast<std::size_t>(pw * ph), 0));
    const auto ch = static_cast<std::size_t>(map.channels);
    for (int by = 0; by < ph; ++by) {
        for (int bx = 0; bx < pw; ++bx) {
            int count = 0;
            double* o = &out.data[out.index(bx, by) * ch];
            for (int y = by * factor; y < (by + 1) * factor; ++y) {
                for (int x = bx * factor; x < (bx + 1) * factor; ++x) {
                    if (!map.masked(x, y)) {
                        continue;
                    }
                    ++count;
                    const double* s = &map.data[map.index(x, y) * ch];
                    for (std::size_t c = 0; c < ch; ++c) {
                        o[c] += s[c];
                    }
                }
            }
            if (count > 0) {
                for (std::size_t c = 0; c < ch; ++c) {
                    o[c] /= count;
                }
                out.mask[out.index(bx, by)] = 1;
            }
        }
    }
    return out;
}

} // namespace facekit::geometry
