/*
 * facekit - 3D face modelling, registration and fitting from synthetic and captured data.
 *
 * File: tests/test_render.cpp
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
#include "facekit/render/camera.hpp"
#include "facekit/render/image_io.hpp"
#include "facekit/render/rasterizer.hpp"
#include "facekit/render/sh.hpp"

#include <Eigen/Dense>
#include <doctest.h>

#include <fstream>

using namespace facekit;
using namespace facekit::render;
using geometry::TriMesh;

namespace {

template <typename... Args>
RenderOutput draw(Args&&... args)
{
    return facekit::render::render(std::forward<Args>(args)...);
}

TriMesh coloured_face()
{
    auto mesh = geometry::make_face_template(25).mesh();
    for (std::size_t i = 0; i < mesh.vertices.size(); ++i) {
        const auto& uv = mesh.uvs[i];
        mesh.colors[i] = Vec3(0.5 + 0.3 * uv.x(), 0.4 + 0.2 * std::sin(6 * uv.y()), 0.3 + 0.2 * uv.x() * uv.y());
    }
    return mesh;
}

SHLighting soft_light()
{
    SHLighting l = SHLighting::ambient(0.8);
    for (int c = 0; c < 3; ++c) {
        l.at(c, 1) = 0.1;
        l.at(c, 2) = 0.25;
        l.at(c, 3) = -0.1 + 0.05 * c;
        l.at(c, 6) = 0.05;
        l.at(c, 8) = -0.03;
    }
    return l;
}

struct Scene
{
    TriMesh mesh = coloured_face();
    Pose pose;
    SHLighting light = soft_light();
    Camera camera = Camera::centred(32, 32, 90.0);
    std::vector<double> weights;
    std::vector<double> target;

    Scene()
    {
        pose.eulerAngles = Vec3(0.1, -0.15, 0.05);
        pose.translation = Vec3(3.0, -2.0, -520.0);
        Rng rng(7);
        weights.resize(32 * 32 * 3);
        target.resize(32 * 32 * 3);
        for (auto& w : weights) w = rng.uniform(-1.0, 1.0);
        for (auto& t : target) t = rng.uniform(0.0, 1.0);
    }

    double linear_loss(const RenderOutput& out) const
    {
        double s = 0.0;
        for (std::size_t i = 0; i < out.image.size(); ++i) s += weights[i] * out.image[i];
        return s;
    }

    double photo_loss(const RenderOutput& out) const
    {
        double s = 0.0;
        for (std::size_t i = 0; i < out.image.size(); ++i) s += (out.image[i] - target[i]) * (out.image[i] - target[i]);
        return s / static_cast<double>(out.image.size());
    }

    std::vector<double> photo_grad(const RenderOutput& out) const
    {
        std::vector<double> g(out.image.size());
        for (std::size_t i = 0; i < g.size(); ++i) g[i] = 2.0 * (out.image[i] - target[i]) / static_cast<double>(g.size());
        return g;
    }
};

} // namespace

TEST_CASE("projection: principal point and pinhole formula")
{
    Camera cam = Camera::centred(200, 100, 500.0);
    Pose pose;
    pose.translation = Vec3::Zero();
    std::vector<Vec3> pts{Vec3(0, 0, -500.0), Vec3(10, 20, -250)};
    const auto p = project(pts, pose, cam);
    CHECK(p.points[0].isApprox(Vec2(100, 50)));
    CHECK(p.points[1].x() == doctest::Approx(100 + 500.0 * 10 / 250));
    CHECK(p.points[1].y() == doctest::Approx(50 - 500.0 * 20 / 250));
    CHECK(p.depth[1] == doctest::Approx(250));

    std::vector<Vec3> bad{Vec3(0, 0, -100), Vec3(0, 0, -5), Vec3(0, 0, 1)};
    try {
        project(bad, pose, cam);
        FAIL("expected an error");
    } catch (const Error& e) {
        const std::string msg = e.what();
        CHECK(msg.find(" 1") != std::string::npos);
        CHECK(msg.find(" 2") != std::string::npos);
    }
}

TEST_CASE("projection jacobian matches central differences")
{
    Rng rng(3);
    Camera cam = Camera::centred(256, 256, 800.0);
    Pose pose;
    pose.eulerAngles = Vec3(0.2, -0.3, 0.1);
    pose.translation = Vec3(5, -3, -480);
    std::vector<Vec3> verts;
    for (int i = 0; i < 10; ++i) verts.emplace_back(rng.uniform(-60, 60), rng.uniform(-80, 80), rng.uniform(-20, 40));
    std::vector<int> idx{0, 3, 5, 9};
    std::vector<Vec2> w;
    for (std::size_t k = 0; k < idx.size(); ++k) w.emplace_back(rng.normal(), rng.normal());
    auto loss = [&](const std::vector<Vec3>& v, const Pose& p) {
        const auto pr = project(v, p, cam);
        double s = 0.0;
        for (std::size_t k = 0; k < idx.size(); ++k) s += w[k].dot(pr.points[static_cast<std::size_t>(idx[k])]);
        return s;
    };
    const auto g = project_backward(verts, pose, cam, idx, w);
    const double eps = 1e-3;
    double worst = 0.0;
    for (int a = 0; a < 3; ++a) {
        Pose hi = pose, lo = pose;
        hi.eulerAngles[a] += eps;
        lo.eulerAngles[a] -= eps;
        worst = std::max(worst, test::relative_error(g.eulerAngles[a], (loss(verts, hi) - loss(verts, lo)) / (2 * eps)));
        hi = pose;
        lo = pose;
        hi.translation[a] += eps;
        lo.translation[a] -= eps;
        worst = std::max(worst, test::relative_error(g.translation[a], (loss(verts, hi) - loss(verts, lo)) / (2 * eps)));
        for (int i : idx) {
            auto vh = verts, vl = verts;
            vh[static_cast<std::size_t>(i)][a] += eps;
            vl[static_cast<std::size_t>(i)][a] -= eps;
            worst = std::max(worst, test::relative_error(g.vertices[static_cast<std::size_t>(i)][a], (loss(vh, pose) - loss(vl, pose)) / (2 * eps)));
        }
    }
    CHECK(worst < 1e-4);
}

TEST_CASE("sh irradiance: constant light and basis order")
{
    SHLighting dc;
    for (int c = 0; c < 3; ++c) dc.at(c, 0) = 1.0;
    Rng rng(1);
    for (int k = 0; k < 20; ++k) {
        const Vec3 n = Vec3(rng.normal(), rng.normal(), rng.normal()).normalized();
        const Vec3 e = sh_irradiance(n, dc);
        for (int c = 0; c < 3; ++c) CHECK(e[c] == doctest::Approx(0.282095 * M_PI));
    }
    CHECK(dc.coefficients.size() == 27);
    const auto b = sh_basis(Vec3(0, 0, 1));
    CHECK(b[1] == 0.0);
    CHECK(b[2] > 0.0);
    CHECK(b[3] == 0.0);
    CHECK(b[6] > 0.0);
    // Jacobian against finite differences of the basis.
    const Vec3 n(0.3, -0.5, 0.81);
    const auto j = sh_basis_jacobian(n);
    for (int a = 0; a < 3; ++a) {
        Vec3 hi = n, lo = n;
        hi[a] += 1e-6;
        lo[a] -= 1e-6;
        const auto bh = sh_basis(hi), bl = sh_basis(lo);
        for (int i = 0; i < 9; ++i) CHECK(j(i, a) == doctest::Approx((bh[static_cast<std::size_t>(i)] - bl[static_cast<std::size_t>(i)]) / 2e-6).epsilon(1e-6));
    }
}

TEST_CASE("sh lighting fitted to a directional source reproduces a sphere")
{
    auto sphere = geometry::make_icosphere(4, 40.0);
    sphere.colors.assign(sphere.vertices.size(), Vec3(0.8, 0.8, 0.8));
    Pose pose;
    const Camera cam = Camera::centred(64, 64, 600.0);
    const Vec3 light = Vec3(0.4, 0.5, 0.75).normalized();
    auto first = draw(sphere, pose, SHLighting::ambient(1.0), cam);
    // Reference: Lambertian directional shading of the interpolated normals.
    const auto& st = first;
    const Eigen::Matrix3d R = pose.rotation();
    const auto normals = geometry::vertex_normals(sphere);
    std::vector<Eigen::Matrix<double, 9, 1>> rows;
    std::vector<double> ref;
    std::vector<std::size_t> pix;
    for (std::size_t p = 0; p < st.mask.size(); ++p) {
        if (!st.mask[p]) continue;
        const auto& t = sphere.triangles[static_cast<std::size_t>(st.triangle[p])];
        Vec3 nn = Vec3::Zero();
        for (int k = 0; k < 3; ++k) nn += st.barycentric[p][k] * (R * normals[static_cast<std::size_t>(t[static_cast<std::size_t>(k)])]);
        nn.normalize();
        const auto b = sh_basis(nn);
        rows.push_back(Eigen::Map<const Eigen::Matrix<double, 9, 1>>(b.data()));
        ref.push_back(0.8 * std::max(0.0, nn.dot(light)));
        pix.push_back(p);
    }
    Eigen::MatrixXd A(static_cast<Eigen::Index>(rows.size()), 9);
    Eigen::VectorXd y(static_cast<Eigen::Index>(rows.size()));
    for (std::size_t i = 0; i < rows.size(); ++i) {
        A.row(static_cast<Eigen::Index>(i)) = 0.8 * rows[i].transpose();
        y(static_cast<Eigen::Index>(i)) = ref[i];
    }
    const Eigen::VectorXd c = A.colPivHouseholderQr().solve(y);
    SHLighting fitted;
    for (int ch = 0; ch < 3; ++ch) for (int i = 0; i < 9; ++i) fitted.at(ch, i) = c(i);
    const auto out = draw(sphere, pose, fitted, cam);
    double se = 0.0, lo = 1e9, hi = -1e9;
    for (std::size_t i = 0; i < pix.size(); ++i) {
        se += std::pow(out.image[3 * pix[i]] - ref[i], 2);
        lo = std::min(lo, ref[i]);
        hi = std::max(hi, ref[i]);
    }
    const double rmse = std::sqrt(se / static_cast<double>(pix.size()));
    MESSAGE("sphere sh fit rmse " << rmse << " of range " << hi - lo);
    CHECK(rmse < 0.02 * (hi - lo));
}

TEST_CASE("single red triangle covers the analytically predicted pixels")
{
    TriMesh tri;
    const double f = 100.0, d = 100.0;
    // Right triangle in screen space with legs along +u and -v (up), from pixel (4.2, 27.7).
    auto to_world = [&](double u, double v) { return Vec3((u - 16.0) * d / f, -(v - 16.0) * d / f, -d); };
    tri.vertices = {to_world(4.2, 27.7), to_world(26.9, 27.7), to_world(4.2, 3.4)};
    tri.triangles = {{0, 1, 2}};
    tri.colors.assign(3, Vec3(1.0, 0.0, 0.0));
    Pose pose;
    pose.translation = Vec3::Zero();
    const Camera cam = Camera::centred(32, 32, f);
    SHLighting light;
    for (int c = 0; c < 3; ++c) light.at(c, 0) = 0.5 / (0.282095 * M_PI);
    const auto out = draw(tri, pose, light, cam);
    // Oracle: pixel centres under the hypotenuse, counted row by row.
    long expected = 0;
    for (int y = 0; y < 32; ++y) {
        const double v = y + 0.5;
        if (v < 3.4 || v > 27.7) continue;
        const double umax = 4.2 + (26.9 - 4.2) * (v - 3.4) / (27.7 - 3.4);
        for (int x = 0; x < 32; ++x) {
            if (x + 0.5 >= 4.2 && x + 0.5 <= umax) ++expected;
        }
    }
    const long got = static_cast<long>(out.covered_count());
    CHECK(std::abs(got - expected) <= 24); // one row of slack
    for (std::size_t p = 0; p < out.mask.size(); ++p) {
        if (!out.mask[p]) continue;
        CHECK(out.image[3 * p] == doctest::Approx(0.5));
        CHECK(out.image[3 * p + 1] == 0.0);
        CHECK(out.image[3 * p + 2] == 0.0);
        CHECK(out.barycentric[p].minCoeff() >= 0.0);
        CHECK(out.barycentric[p].sum() == doctest::Approx(1.0));
        CHECK(std::isfinite(out.depth[p]));
    }
}

TEST_CASE("empty and back-facing meshes draw nothing")
{
    const Camera cam = Camera::centred(16, 16, 50.0);
    CHECK(draw(TriMesh{}, Pose{}, SHLighting::ambient(1.0), cam).covered_count() == 0);
    auto face = coloured_face();
    Pose back;
    back.eulerAngles = Vec3(0.0, M_PI, 0.0);
    CHECK(draw(face, back, SHLighting::ambient(1.0), cam).covered_count() == 0);
    const auto out = draw(face, Pose{}, SHLighting::ambient(1.0), cam, RenderOptions{10.0, false});
    CHECK_THROWS_AS(render_backward(out, std::vector<double>(out.image.size())), Error);
}

TEST_CASE("render gradients match central differences")
{
    Scene s;
    const auto out = draw(s.mesh, s.pose, s.light, s.camera);
    REQUIRE(out.covered_count() > 300);
    const auto g = render_backward(out, s.weights);

    SUBCASE("sh coefficients")
    {
        Eigen::VectorXd ana(27), num(27);
        for (int k = 0; k < 27; ++k) {
            const double eps = 1e-5;
            SHLighting hi = s.light, lo = s.light;
            hi.coefficients[static_cast<std::size_t>(k)] += eps;
            lo.coefficients[static_cast<std::size_t>(k)] -= eps;
            num(k) = (s.linear_loss(draw(s.mesh, s.pose, hi, s.camera)) - s.linear_loss(draw(s.mesh, s.pose, lo, s.camera))) / (2 * eps);
            ana(k) = g.lighting.coefficients[static_cast<std::size_t>(k)];
        }
        CHECK(test::vector_relative_error(ana, num) < 1e-3);
    }
    SUBCASE("vertex colours")
    {
        Rng rng(2);
        Eigen::VectorXd ana(30), num(30);
        for (int k = 0; k < 30; ++k) {
            const auto v = rng.index(s.mesh.vertices.size());
            const int c = static_cast<int>(rng.index(3));
            const double eps = 1e-5;
            TriMesh hi = s.mesh, lo = s.mesh;
            hi.colors[v][c] += eps;
            lo.colors[v][c] -= eps;
            num(k) = (s.linear_loss(draw(hi, s.pose, s.light, s.camera)) - s.linear_loss(draw(lo, s.pose, s.light, s.camera))) / (2 * eps);
            ana(k) = g.colors[v][c];
        }
        CHECK(test::vector_relative_error(ana, num) < 1e-3);
    }
    SUBCASE("uncovered vertex colours have zero gradient")
    {
        std::vector<char> used(s.mesh.vertices.size(), 0);
        for (std::size_t p = 0; p < out.mask.size(); ++p) {
            if (!out.mask[p]) continue;
            for (int k : s.mesh.triangles[static_cast<std::size_t>(out.triangle[p])]) used[static_cast<std::size_t>(k)] = 1;
        }
        int checked = 0;
        for (std::size_t v = 0; v < used.size(); ++v) {
            if (!used[v]) {
                CHECK(g.colors[v] == Vec3::Zero());
                ++checked;
            }
        }
        CHECK(checked > 0);
    }
    SUBCASE("euler angles")
    {
        Eigen::Vector3d num;
        for (int a = 0; a < 3; ++a) {
            const double eps = 1e-6;
            Pose hi = s.pose, lo = s.pose;
            hi.eulerAngles[a] += eps;
            lo.eulerAngles[a] -= eps;
            const auto rh = draw(s.mesh, hi, s.light, s.camera), rl = draw(s.mesh, lo, s.light, s.camera);
            REQUIRE(rh.triangle == out.triangle);
            REQUIRE(rl.triangle == out.triangle);
            num[a] = (s.linear_loss(rh) - s.linear_loss(rl)) / (2 * eps);
        }
        CHECK(test::vector_relative_error(g.eulerAngles, num) < 1e-3);
    }
    SUBCASE("translation through shading with the photometric loss")
    {
        const double eps = 1e-4;
        std::vector<RenderOutput> hi, lo;
        for (int a = 0; a < 3; ++a) {
            Pose ph = s.pose, pl = s.pose;
            ph.translation[a] += eps;
            pl.translation[a] -= eps;
            hi.push_back(draw(s.mesh, ph, s.light, s.camera));
            lo.push_back(draw(s.mesh, pl, s.light, s.camera));
        }
        // Hold visibility fixed: keep pixels whose triangle id never changes.
        std::vector<double> keep(out.image.size(), 1.0);
        for (std::size_t p = 0; p < out.mask.size(); ++p) {
            for (int a = 0; a < 3; ++a) {
                if (hi[a].triangle[p] != out.triangle[p] || lo[a].triangle[p] != out.triangle[p]) keep[3 * p] = keep[3 * p + 1] = keep[3 * p + 2] = 0.0;
            }
        }
        auto masked = [&](const RenderOutput& r) {
            double l = 0.0;
            for (std::size_t i = 0; i < r.image.size(); ++i) l += keep[i] * std::pow(r.image[i] - s.target[i], 2);
            return l / static_cast<double>(r.image.size());
        };
        auto grad = s.photo_grad(out);
        for (std::size_t i = 0; i < grad.size(); ++i) grad[i] *= keep[i];
        const auto gp = render_backward(out, grad);
        Eigen::Vector3d num;
        for (int a = 0; a < 3; ++a) num[a] = (masked(hi[a]) - masked(lo[a])) / (2 * eps);
        CHECK(test::vector_relative_error(gp.translation, num) < 1e-2);
    }
    SUBCASE("vertex positions")
    {
        Rng rng(5);
        Eigen::VectorXd ana(20), num(20);
        for (int k = 0; k < 20; ++k) {
            const auto v = rng.index(s.mesh.vertices.size());
            const int c = static_cast<int>(rng.index(3));
            const double eps = 1e-5;
            TriMesh hi = s.mesh, lo = s.mesh;
            hi.vertices[v][c] += eps;
            lo.vertices[v][c] -= eps;
            const auto rh = draw(hi, s.pose, s.light, s.camera), rl = draw(lo, s.pose, s.light, s.camera);
            num(k) = (s.linear_loss(rh) - s.linear_loss(rl)) / (2 * eps);
            ana(k) = g.positions[v][c];
        }
        CHECK(test::vector_relative_error(ana, num) < 1e-3);
    }
}

TEST_CASE("rendering is equivariant under view-axis rotation")
{
    auto mesh = coloured_face();
    const Camera cam = Camera::centred(64, 64, 180.0);
    Pose pose;
    const SHLighting light = soft_light();
    const auto base = draw(mesh, pose, light, cam);
    Pose rotated = pose;
    rotated.eulerAngles = Vec3(0, 0, M_PI / 2);
    const auto rot = draw(mesh, rotated, rotate_sh_z(light, M_PI / 2), cam);
    double se = 0.0;
    long count = 0;
    for (int y = 0; y < 64; ++y) {
        for (int x = 0; x < 64; ++x) {
            // Pixel offsets (du', dv') in the rotated frame come from (-dv', du') in the original.
            const double du = x + 0.5 - 32.0, dv = y + 0.5 - 32.0;
            const int sx = static_cast<int>(std::floor(32.0 - dv));
            const int sy = static_cast<int>(std::floor(32.0 + du));
            const std::size_t p = rot.pixel(x, y), q = base.pixel(sx, sy);
            if (!rot.mask[p] || !base.mask[q]) continue;
            for (int c = 0; c < 3; ++c) se += std::pow(rot.image[3 * p + static_cast<std::size_t>(c)] - base.image[3 * q + static_cast<std::size_t>(c)], 2);
            count += 3;
        }
    }
    REQUIRE(count > 1000);
    CHECK(std::sqrt(se / static_cast<double>(count)) < 0.01);
}

TEST_CASE("render output and gradients are thread-count independent")
{
    Scene s;
    s.camera = Camera::centred(96, 96, 270.0);
    s.weights.assign(96 * 96 * 3, 0.3);
    const int saved = thread_count();
    set_thread_count(1);
    const auto a = draw(s.mesh, s.pose, s.light, s.camera);
    const auto ga = render_backward(a, s.weights);
    set_thread_count(4);
    const auto b = draw(s.mesh, s.pose, s.light, s.camera);
    const auto gb = render_backward(b, s.weights);
    set_thread_count(saved);
    CHECK(a.image == b.image);
    CHECK(ga.positions == gb.positions);
    CHECK(ga.lighting.coefficients == gb.lighting.coefficients);
    for (double v : a.image) {
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
    }
}

TEST_CASE("png round trip and exr header")
{
    const auto dir = test::temp_dir("image_io");
    Image img;
    img.width = 5;
    img.height = 3;
    for (int i = 0; i < 45; ++i) img.data.push_back(std::pow(i / 44.0, 2.2));
    save_png(dir / "a.png", img);
    const auto back = load_png(dir / "a.png");
    CHECK(back.width == 5);
    CHECK(back.height == 3);
    for (std::size_t i = 0; i < img.data.size(); ++i) {
        CHECK(std::abs(std::pow(back.data[i], 1 / 2.2) - std::pow(img.data[i], 1 / 2.2)) <= 0.5 / 255 + 1e-9);
    }
    std::vector<double> depth(15, 500.0);
    save_exr_depth(dir / "d.exr", depth, 5, 3);
    std::ifstream in(dir / "d.exr", std::ios::binary);
    unsigned char magic[4];
    in.read(reinterpret_cast<char*>(magic), 4);
    CHECK(magic[0] == 0x76);
    CHECK(magic[1] == 0x2f);
    CHECK(magic[2] == 0x31);
    CHECK(magic[3] == 0x01);
}
