/*
 * facekit - 3D face modelling, registration and fitting from synthetic and captured data.
 *
 * File: tests/test_geometry.cpp
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
#include "test_util.hpp"

#include "facekit/common/error.hpp"
#include "facekit/common/parallel.hpp"
#include "facekit/geometry/face_template.hpp"
#include "facekit/geometry/mesh_io.hpp"
#include "facekit/geometry/uv.hpp"

#include <Eigen/Geometry>
#include <doctest.h>

#include <fstream>

using namespace facekit;
using namespace facekit::geometry;

namespace {

const TemplateAtlas& atlas()
{
    static const TemplateAtlas a = make_face_template();
    return a;
}

/// Full-mask map whose texel values are f(texel centre uv).
template <typename F>
UVMap analytic_map(int res, F&& f)
{
    UVMap m = UVMap::zeros(res, res, 3, std::vector<std::uint8_t>(static_cast<std::size_t>(res * res), 1));
    for (int y = 0; y < res; ++y) {
        for (int x = 0; x < res; ++x) {
            const Vec3 v = f(Vec2((x + 0.5) / res, (y + 0.5) / res));
            for (int c = 0; c < 3; ++c) m.at(x, y, c) = v[c];
        }
    }
    return m;
}

} // namespace

TEST_CASE("vertex normals of an icosphere are radial")
{
    // Levels 0 and 1 are symmetric at every vertex; finer levels converge to radial.
    double previous = 1.0;
    for (int level = 0; level <= 5; ++level) {
        const auto sphere = make_icosphere(level, 10.0);
        const auto n = vertex_normals(sphere);
        double worst = 0.0;
        for (std::size_t i = 0; i < n.size(); ++i) {
            worst = std::max(worst, (n[i] - sphere.vertices[i].normalized()).norm());
        }
        if (level <= 1) {
            CHECK(worst < 1e-3);
        } else {
            CHECK(worst < previous);
            previous = worst;
        }
    }
}

TEST_CASE("vertex normals of a single ccw triangle")
{
    TriMesh m;
    m.vertices = {Vec3(0, 0, 0), Vec3(1, 0, 0), Vec3(0, 1, 0)};
    m.triangles = {{0, 1, 2}};
    for (const auto& n : vertex_normals(m)) {
        CHECK(n.isApprox(Vec3(0, 0, 1)));
    }
}

TEST_CASE("vertex normals match a brute-force accumulation oracle")
{
    auto mesh = test::random_mesh(11, 200, 400);
    const auto n = vertex_normals(mesh);
    // Oracle: for every vertex scan all faces and accumulate the ones touching it.
    for (std::size_t v = 0; v < mesh.vertices.size(); ++v) {
        Vec3 acc = Vec3::Zero();
        for (const auto& t : mesh.triangles) {
            if (t[0] == static_cast<int>(v) || t[1] == static_cast<int>(v) || t[2] == static_cast<int>(v)) {
                const Vec3 a = mesh.vertices[static_cast<std::size_t>(t[0])];
                acc += (mesh.vertices[static_cast<std::size_t>(t[1])] - a).cross(mesh.vertices[static_cast<std::size_t>(t[2])] - a);
            }
        }
        CHECK((n[v] - acc.normalized()).norm() < 1e-12);
        CHECK(std::abs(n[v].norm() - 1.0) < 1e-6);
    }
}

TEST_CASE("isolated vertex is reported by index")
{
    TriMesh m;
    m.vertices = {Vec3(0, 0, 0), Vec3(1, 0, 0), Vec3(0, 1, 0), Vec3(5, 5, 5)};
    m.triangles = {{0, 1, 2}};
    try {
        vertex_normals(m);
        FAIL("expected an error");
    } catch (const Error& e) {
        CHECK(std::string(e.what()).find('3') != std::string::npos);
    }
}

TEST_CASE("template atlas invariants")
{
    const auto& a = atlas();
    const auto& mesh = a.mesh();
    CHECK(mesh.vertices.size() > 2000);
    CHECK(mesh.vertices.size() < 3000);
    CHECK(a.landmarks().size() == 68);
    for (const auto& uv : mesh.uvs) {
        CHECK(uv.minCoeff() >= 0.0);
        CHECK(uv.maxCoeff() <= 1.0);
    }
    const auto& idx = a.uv_index(200);
    for (std::size_t t = 0; t < idx.triangle.size(); ++t) {
        CHECK((idx.triangle[t] >= 0) == (idx.mask[t] != 0));
        if (idx.triangle[t] >= 0) {
            CHECK(idx.barycentric[t].minCoeff() >= 0.0);
            CHECK(std::abs(idx.barycentric[t].sum() - 1.0) < 1e-6);
        }
    }
}

TEST_CASE("unwrap of a constant attribute")
{
    std::vector<Vec3> c(atlas().vertex_count(), Vec3(1.5, -2.0, 3.25));
    const auto map = unwrap_to_uv(atlas(), c, 64);
    for (int y = 0; y < 64; ++y) {
        for (int x = 0; x < 64; ++x) {
            for (int ch = 0; ch < 3; ++ch) {
                CHECK(map.at(x, y, ch) == (map.masked(x, y) ? c[0][ch] : 0.0));
            }
        }
    }
    CHECK_THROWS_AS(unwrap_to_uv(atlas(), c, 3), Error);
}

TEST_CASE("unwrap of the uv coordinates reproduces texel centres")
{
    const int res = 200;
    Eigen::MatrixXd attr(static_cast<Eigen::Index>(atlas().vertex_count()), 2);
    for (std::size_t i = 0; i < atlas().vertex_count(); ++i) {
        attr.row(static_cast<Eigen::Index>(i)) = atlas().mesh().uvs[i].transpose();
    }
    const auto map = unwrap_to_uv(atlas(), attr, res);
    CHECK(map.masked_count() > 0);
    for (int y = 0; y < res; ++y) {
        for (int x = 0; x < res; ++x) {
            if (!map.masked(x, y)) continue;
            CHECK(std::abs(map.at(x, y, 0) - (x + 0.5) / res) < 1.0 / res);
            CHECK(std::abs(map.at(x, y, 1) - (y + 0.5) / res) < 1.0 / res);
        }
    }
}

TEST_CASE("unwrap then resample round trip of a smooth field at 256")
{
    std::vector<Vec3> field;
    double lo = 1e300, hi = -1e300;
    for (const auto& uv : atlas().mesh().uvs) {
        const Vec3 f(std::sin(3.0 * uv.x()) * 20.0, std::cos(2.0 * uv.y()) * 10.0 + uv.x() * 5.0, uv.x() * uv.y() * 30.0);
        field.push_back(f);
        lo = std::min(lo, f.minCoeff());
        hi = std::max(hi, f.maxCoeff());
    }
    const auto map = unwrap_to_uv(atlas(), field, 256);
    const auto back = resample_uv_to_vertices(map, atlas());
    double worst = 0.0;
    for (std::size_t i = 0; i < field.size(); ++i) {
        worst = std::max(worst, (back.values.row(static_cast<Eigen::Index>(i)).transpose() - field[i]).cwiseAbs().maxCoeff());
    }
    CHECK(worst < 0.02 * (hi - lo));
}

TEST_CASE("resample of a constant map is exact")
{
    std::vector<Vec3> c(atlas().vertex_count(), Vec3(0.25, 0.5, 0.75));
    const auto map = unwrap_to_uv(atlas(), c, 128);
    const auto back = resample_uv_to_vertices(map, atlas());
    for (Eigen::Index i = 0; i < back.values.rows(); ++i) {
        CHECK(std::abs(back.values(i, 0) - 0.25) < 1e-12);
        CHECK(std::abs(back.values(i, 1) - 0.5) < 1e-12);
        CHECK(std::abs(back.values(i, 2) - 0.75) < 1e-12);
    }
}

TEST_CASE("mean geometry round trip at 1024 stays within 0.1 mm")
{
    const auto& verts = atlas().mesh().vertices;
    const auto map = unwrap_to_uv(atlas(), verts, 1024);
    const auto back = resample_uv_to_vertices(map, atlas());
    double worst = 0.0;
    for (std::size_t i = 0; i < verts.size(); ++i) {
        worst = std::max(worst, (back.values.row(static_cast<Eigen::Index>(i)).transpose() - verts[i]).norm());
    }
    CHECK(worst < 0.1);
}

TEST_CASE("upsample: constants, ramps, idempotence and mask monotonicity")
{
    std::vector<Vec3> c(atlas().vertex_count(), Vec3(2.0, 2.0, 2.0));
    const auto constant = unwrap_to_uv(atlas(), c, 50);
    const auto up = upsample_uv(constant, 200);
    for (std::size_t t = 0; t < up.texel_count(); ++t) {
        if (up.mask[t]) {
            CHECK(up.data[3 * t] == doctest::Approx(2.0).epsilon(1e-14));
        }
    }
    // Mask monotonicity: a masked source texel maps to masked target texels.
    for (int y = 0; y < 50; ++y) {
        for (int x = 0; x < 50; ++x) {
            if (constant.masked(x, y)) {
                CHECK(up.masked(4 * x + 1, 4 * y + 1));
                CHECK(up.masked(4 * x + 2, 4 * y + 2));
            }
        }
    }
    const auto same = upsample_uv(constant, 50);
    CHECK(same.data == constant.data);
    CHECK(same.mask == constant.mask);

    const auto ramp = analytic_map(32, [](const Vec2& uv) { return Vec3(3.0 * uv.x() + 1.0, -2.0 * uv.y(), uv.x() + uv.y()); });
    const auto upRamp = upsample_uv(ramp, 128);
    double worst = 0.0;
    for (int y = 4; y < 124; ++y) {
        for (int x = 4; x < 124; ++x) {
            const Vec2 uv((x + 0.5) / 128, (y + 0.5) / 128);
            const Vec3 expect(3.0 * uv.x() + 1.0, -2.0 * uv.y(), uv.x() + uv.y());
            for (int ch = 0; ch < 3; ++ch) worst = std::max(worst, std::abs(upRamp.at(x, y, ch) - expect[ch]));
        }
    }
    CHECK(worst < 1e-6);
    CHECK_THROWS_AS(upsample_uv(ramp, 16), Error);
}

TEST_CASE("normal map of a sphere patch is radial and of a plane is +z")
{
    const double R = 100.0;
    const auto sphere = analytic_map(64, [&](const Vec2& uv) {
        const double x = (uv.x() - 0.5) * 100.0, y = (uv.y() - 0.5) * 100.0;
        return Vec3(x, y, std::sqrt(R * R - x * x - y * y));
    });
    const auto n = normal_map(sphere);
    CHECK(n.fallbackCount == 0);
    double worst = 0.0;
    for (int y = 2; y < 62; ++y) {
        for (int x = 2; x < 62; ++x) {
            const Vec3 p(sphere.at(x, y, 0), sphere.at(x, y, 1), sphere.at(x, y, 2));
            const Vec3 nn(n.normals.at(x, y, 0), n.normals.at(x, y, 1), n.normals.at(x, y, 2));
            worst = std::max(worst, (nn - p.normalized()).norm());
        }
    }
    CHECK(worst < 1e-2);
    for (std::size_t t = 0; t < n.normals.texel_count(); ++t) {
        const Vec3 v(n.normals.data[3 * t], n.normals.data[3 * t + 1], n.normals.data[3 * t + 2]);
        CHECK(std::abs(v.norm() - 1.0) < 1e-6);
    }

    const auto plane = analytic_map(16, [](const Vec2& uv) { return Vec3(uv.x() * 10, uv.y() * 10, 0.0); });
    const auto pn = normal_map(plane);
    for (std::size_t t = 0; t < pn.normals.texel_count(); ++t) {
        CHECK(pn.normals.data[3 * t + 2] == doctest::Approx(1.0));
    }
}

TEST_CASE("normal map falls back on degenerate texels")
{
    auto flat = analytic_map(8, [](const Vec2& uv) { return Vec3(uv.x(), uv.y(), 0.0); });
    for (int c = 0; c < 3; ++c) flat.at(3, 3, c) = 0.0; // collapses the differences around (3,3)
    for (int x = 0; x < 8; ++x) for (int c = 0; c < 3; ++c) flat.at(x, 3, c) = flat.at(0, 3, c);
    const auto n = normal_map(flat);
    CHECK(n.fallbackCount > 0);
    for (std::size_t t = 0; t < n.normals.texel_count(); ++t) {
        const Vec3 v(n.normals.data[3 * t], n.normals.data[3 * t + 1], n.normals.data[3 * t + 2]);
        CHECK(std::abs(v.norm() - 1.0) < 1e-6);
    }
}

TEST_CASE("uv raster, unwrap and normal map are thread-count independent")
{
    const auto& verts = atlas().mesh().vertices;
    const int saved = thread_count();
    set_thread_count(1);
    const auto a = unwrap_to_uv(atlas(), verts, 96);
    const auto na = normal_map(a);
    set_thread_count(4);
    const auto b = unwrap_to_uv(atlas(), verts, 96);
    const auto nb = normal_map(b);
    set_thread_count(saved);
    CHECK(a.data == b.data);
    CHECK(na.normals.data == nb.normals.data);
}

TEST_CASE("mesh io round trips float32 bitwise")
{
    auto mesh = atlas().mesh();
    Rng rng(3);
    for (auto& c : mesh.colors) c = Vec3(rng.uniform(), rng.uniform(), rng.uniform());
    const auto dir = test::temp_dir("meshio");
    for (const char* name : {"m.obj", "m.ply"}) {
        save_mesh(mesh, dir / name);
        const auto back = load_mesh(dir / name, &mesh);
        REQUIRE(back.vertices.size() == mesh.vertices.size());
        CHECK(back.triangles == mesh.triangles);
        for (std::size_t i = 0; i < mesh.vertices.size(); ++i) {
            for (int c = 0; c < 3; ++c) {
                CHECK(static_cast<float>(back.vertices[i][c]) == static_cast<float>(mesh.vertices[i][c]));
            }
            for (int c = 0; c < 2; ++c) {
                CHECK(static_cast<float>(back.uvs[i][c]) == static_cast<float>(mesh.uvs[i][c]));
            }
        }
        if (std::string(name) == "m.ply") {
            // PLY stores colours as 8-bit.
            for (std::size_t i = 0; i < mesh.vertices.size(); ++i) {
                CHECK((back.colors[i] - mesh.colors[i]).cwiseAbs().maxCoeff() <= 0.5 / 255.0 + 1e-9);
            }
        }
    }
}

TEST_CASE("mesh io errors")
{
    const auto dir = test::temp_dir("meshio_err");
    {
        std::ofstream f(dir / "bad.obj");
        f << "v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 7\n";
    }
    try {
        load_mesh(dir / "bad.obj");
        FAIL("expected an error");
    } catch (const Error& e) {
        CHECK(std::string(e.what()).find("face 0") != std::string::npos);
    }
    {
        std::ofstream f(dir / "garbage.obj");
        f << "v 0 0 0\nv 1 zero 0\n";
    }
    try {
        load_mesh(dir / "garbage.obj");
        FAIL("expected an error");
    } catch (const ParseError& e) {
        CHECK(std::string(e.what()).find("line 2") != std::string::npos);
    }
    auto small = atlas().mesh();
    save_mesh(small, dir / "t.obj");
    auto other = make_face_template(20).mesh();
    CHECK_THROWS_AS(load_mesh(dir / "t.obj", &other), Error);
}

TEST_CASE("landmark files round trip")
{
    const auto dir = test::temp_dir("landmarks");
    LandmarkSet lm;
    lm.vertexIndices = {3, 10, 42};
    lm.points2d = {Vec2(1.5, 2.5), Vec2(3, 4), Vec2(-1, 0.25)};
    save_landmarks(lm, dir / "lm.json");
    const auto back = load_landmarks(dir / "lm.json");
    CHECK(back.vertexIndices == lm.vertexIndices);
    CHECK(back.points2d.size() == 3);
    CHECK(back.points2d[2].isApprox(lm.points2d[2]));
}

TEST_CASE("uv grid mesh covers complete quads")
{
    const auto map = unwrap_to_uv(atlas(), atlas().mesh().vertices, 64);
    const auto grid = uv_grid_mesh(map);
    CHECK(grid.mesh.vertices.size() == grid.texelOfVertex.size());
    CHECK(grid.mesh.vertices.size() <= map.masked_count());
    const auto normals = vertex_normals(grid.mesh);
    // The template faces +z, and so must the grid.
    double meanZ = 0.0;
    for (const auto& n : normals) meanZ += n.z();
    CHECK(meanZ / static_cast<double>(normals.size()) > 0.5);
}
