/*
 * facekit - 3D face modelling, registration and fitting from synthetic and captured data.
 *
 * File: core/src/neuralgen/layers.cpp
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
#include "facekit/neuralgen/layers.hpp"

#include "facekit/common/error.hpp"

#include <Eigen/Geometry>

#include <cmath>

namespace facekit::neuralgen {

std::size_t ParameterSet::add(std::string name, std::vector<int> shape)
{
    std::size_t n = 1;
    for (int d : shape) {
        n *= static_cast<std::size_t>(d);
    }
    slots_.push_back({std::move(name), data_.size(), n, std::move(shape)});
    data_.resize(data_.size() + n, 0.0);
    return slots_.size() - 1;
}

double ordered_sum(std::span<const double> a)
{
    double s = 0.0;
    for (double v : a) {
        s += v;
    }
    return s;
}

double ordered_dot(std::span<const double> a, std::span<const double> b)
{
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        s += a[i] * b[i];
    }
    return s;
}

namespace {

void im2col(const Tensor& x, int kernel, int stride, int ho, int wo, RowMatrix& col)
{
    const int pad = kernel / 2;
    col.setZero(static_cast<Eigen::Index>(x.channels) * kernel * kernel, static_cast<Eigen::Index>(ho) * wo);
    for (int c = 0; c < x.channels; ++c) {
        for (int dy = 0; dy < kernel; ++dy) {
            for (int dx = 0; dx < kernel; ++dx) {
                double* row = col.row((c * kernel + dy) * kernel + dx).data();
                for (int oy = 0; oy < ho; ++oy) {
                    const int iy = oy * stride + dy - pad;
                    if (iy < 0 || iy >= x.height) {
                        continue;
                    }
                    for (int ox = 0; ox < wo; ++ox) {
                        const int ix = ox * stride + dx - pad;
                        if (ix >= 0 && ix < x.width) {
                            row[oy * wo + ox] = x.at(c, iy, ix);
                        }
                    }
                }
            }
        }
    }
}

void col2im(const RowMatrix& col, int kernel, int stride, int ho, int wo, Tensor& dx)
{
    const int pad = kernel / 2;
    for (int c = 0; c < dx.channels; ++c) {
        for (int dy = 0; dy < kernel; ++dy) {
            for (int kx = 0; kx < kernel; ++kx) {
                const double* row = col.row((c * kernel + dy) * kernel + kx).data();
                for (int oy = 0; oy < ho; ++oy) {
                    const int iy = oy * stride + dy - pad;
                    if (iy < 0 || iy >= dx.height) {
                        continue;
                    }
                    for (int ox = 0; ox < wo; ++ox) {
                        const int ix = ox * stride + kx - pad;
                        if (ix >= 0 && ix < dx.width) {
                            dx.at(c, iy, ix) += row[oy * wo + ox];
                        }
                    }
                }
            }
        }
    }
}

} // namespace

Conv2d Conv2d::declare(ParameterSet& params, const std::string& name, int in, int out, int kernel, int stride, double gain)
{
    Conv2d c;
    c.in = in;
    c.out = out;
    c.kernel = kernel;
    c.stride = stride;
    c.gain = gain;
    c.weight = params.add(name + ".weight", {out, in, kernel, kernel});
    c.bias = params.add(name + ".bias", {out});
    return c;
}

void Conv2d::init(ParameterSet& params, Rng& rng, bool zero) const
{
    for (double& w : params.values(weight)) {
        w = zero ? 0.0 : rng.normal();
    }
    for (double& b : params.values(bias)) {
        b = 0.0;
    }
}

double Conv2d::scale() const
{
    return gain / std::sqrt(static_cast<double>(in * kernel * kernel));
}

Tensor Conv2d::forward(const ParameterSet& params, const Tensor& x) const
{
    if (x.channels != in) {
        throw Error("conv expects " + std::to_string(in) + " input channels, got " + std::to_string(x.channels));
    }
    const int ho = output_size(x.height);
    const int wo = output_size(x.width);
    Tensor y = Tensor::zeros(out, ho, wo);
    const Eigen::Map<const RowMatrix> w(params.values(weight).data(), out, in * kernel * kernel);
    const Eigen::Map<const Eigen::VectorXd> b(params.values(bias).data(), out);
    auto ym = y.matrix();
    if (kernel == 1 && stride == 1) {
        ym.noalias() = scale() * (w * x.matrix());
    } else {
        RowMatrix col;
        im2col(x, kernel, stride, ho, wo, col);
        ym.noalias() = scale() * (w * col);
    }
    ym.colwise() += b;
    return y;
}

Tensor Conv2d::backward(const ParameterSet& params, const Tensor& x, const Tensor& gradOut, std::span<double> grads,
                        bool wantInput) const
{
    const int ho = gradOut.height;
    const int wo = gradOut.width;
    const int k = in * kernel * kernel;
    const Eigen::Map<const RowMatrix> w(params.values(weight).data(), out, k);
    Eigen::Map<RowMatrix> gw(grad_slice(grads, params, weight).data(), out, k);
    Eigen::Map<Eigen::VectorXd> gb(grad_slice(grads, params, bias).data(), out);
    const auto go = gradOut.matrix();
    const std::size_t plane = gradOut.plane();
    for (int o = 0; o < out; ++o) {
        gb(o) += ordered_sum({gradOut.data.data() + static_cast<std::size_t>(o) * plane, plane});
    }
    const double s = scale();
    Tensor dx;
    if (kernel == 1 && stride == 1) {
        gw.noalias() += s * (go * x.matrix().transpose());
        if (wantInput) {
            dx = Tensor::zeros(in, x.height, x.width);
            dx.matrix().noalias() = s * (w.transpose() * go);
        }
        return dx;
    }
    RowMatrix col;
    im2col(x, kernel, stride, ho, wo, col);
    gw.noalias() += s * (go * col.transpose());
    if (wantInput) {
        RowMatrix dcol = s * (w.transpose() * go);
        dx = Tensor::zeros(in, x.height, x.width);
        col2im(dcol, kernel, stride, ho, wo, dx);
    }
    return dx;
}

Dense Dense::declare(ParameterSet& params, const std::string& name, int in, int out, double gain)
{
    Dense d;
    d.in = in;
    d.out = out;
    d.gain = gain;
    d.weight = params.add(name + ".weight", {out, in});
    d.bias = params.add(name + ".bias", {out});
    return d;
}

void Dense::init(ParameterSet& params, Rng& rng) const
{
    for (double& w : params.values(weight)) {
        w = rng.normal();
    }
    for (double& b : params.values(bias)) {
        b = 0.0;
    }
}

double Dense::scale() const
{
    return gain / std::sqrt(static_cast<double>(in));
}

std::vector<double> Dense::forward(const ParameterSet& params, std::span<const double> x) const
{
    if (static_cast<int>(x.size()) != in) {
        throw Error("dense expects " + std::to_string(in) + " inputs, got " + std::to_string(x.size()));
    }
    const auto w = params.values(weight);
    const auto b = params.values(bias);
    const auto n = static_cast<std::size_t>(in);
    std::vector<double> y(static_cast<std::size_t>(out));
    for (std::size_t o = 0; o < y.size(); ++o) {
        y[o] = scale() * ordered_dot(w.subspan(o * n, n), x) + b[o];
    }
    return y;
}

std::vector<double> Dense::backward(const ParameterSet& params, std::span<const double> x, std::span<const double> gradOut,
                                    std::span<double> grads) const
{
    const auto w = params.values(weight);
    auto gw = grad_slice(grads, params, weight);
    auto gb = grad_slice(grads, params, bias);
    const double s = scale();
    const auto n = static_cast<std::size_t>(in);
    std::vector<double> dx(n, 0.0);
    for (std::size_t o = 0; o < static_cast<std::size_t>(out); ++o) {
        const double g = gradOut[o];
        gb[o] += g;
        for (std::size_t i = 0; i < n; ++i) {
            gw[o * n + i] += s * g * x[i];
            dx[i] += s * g * w[o * n + i];
        }
    }
    return dx;
}

void leaky_relu_inplace(std::span<double> x)
{
    for (double& v : x) {
        if (v < 0.0) {
            v *= kLeakySlope;
        }
    }
}

void leaky_relu_backward(std::span<const double> preActivation, std::span<double> grad)
{
    for (std::size_t i = 0; i < grad.size(); ++i) {
        if (preActivation[i] < 0.0) {
            grad[i] *= kLeakySlope;
        }
    }
}

Tensor upsample2x(const Tensor& x)
{
    Tensor y = Tensor::zeros(x.channels, 2 * x.height, 2 * x.width);
    for (int c = 0; c < x.channels; ++c) {
        for (int yy = 0; yy < y.height; ++yy) {
            for (int xx = 0; xx < y.width; ++xx) {
                y.at(c, yy, xx) = x.at(c, yy / 2, xx / 2);
            }
        }
    }
    return y;
}

Tensor upsample2x_backward(const Tensor& gradOut)
{
    Tensor dx = Tensor::zeros(gradOut.channels, gradOut.height / 2, gradOut.width / 2);
    for (int c = 0; c < gradOut.channels; ++c) {
        for (int yy = 0; yy < gradOut.height; ++yy) {
            for (int xx = 0; xx < gradOut.width; ++xx) {
                dx.at(c, yy / 2, xx / 2) += gradOut.at(c, yy, xx);
            }
        }
    }
    return dx;
}

Tensor style_modulate(const Tensor& x, std::span<const double> styles)
{
    Tensor y = x;
    const auto n = static_cast<std::size_t>(x.channels);
    auto m = y.matrix();
    for (std::size_t c = 0; c < n; ++c) {
        m.row(static_cast<Eigen::Index>(c)).array() = m.row(static_cast<Eigen::Index>(c)).array() * (1.0 + styles[c]) + styles[n + c];
    }
    return y;
}

Tensor style_modulate_backward(const Tensor& x, std::span<const double> styles, const Tensor& gradOut,
                               std::span<double> gradStyles)
{
    const auto n = static_cast<std::size_t>(x.channels);
    Tensor dx = gradOut;
    auto dm = dx.matrix();
    const std::size_t plane = x.plane();
    for (std::size_t c = 0; c < n; ++c) {
        const std::span<const double> gr(gradOut.data.data() + c * plane, plane);
        gradStyles[c] = ordered_dot(gr, {x.data.data() + c * plane, plane});
        gradStyles[n + c] = ordered_sum(gr);
        dm.row(static_cast<Eigen::Index>(c)) *= 1.0 + styles[c];
    }
    return dx;
}

std::vector<double> block_highpass(std::span<const double> plane, int height, int width, int block)
{
    std::vector<double> out(plane.size(), 0.0);
    if (block < 2) {
        return out;
    }
    for (int by = 0; by < height; by += block) {
        for (int bx = 0; bx < width; bx += block) {
            const int ye = std::min(height, by + block);
            const int xe = std::min(width, bx + block);
            double mean = 0.0;
            for (int y = by; y < ye; ++y) {
                for (int x = bx; x < xe; ++x) {
                    mean += plane[static_cast<std::size_t>(y * width + x)];
                }
            }
            mean /= static_cast<double>((ye - by) * (xe - bx));
            for (int y = by; y < ye; ++y) {
                for (int x = bx; x < xe; ++x) {
                    const auto i = static_cast<std::size_t>(y * width + x);
                    out[i] = plane[i] - mean;
                }
            }
        }
    }
    return out;
}

void add_noise_inplace(Tensor& x, std::span<const double> noise, double strength)
{
    const std::size_t p = x.plane();
    for (int c = 0; c < x.channels; ++c) {
        double* row = x.data.data() + static_cast<std::size_t>(c) * p;
        for (std::size_t i = 0; i < p; ++i) {
            row[i] += strength * noise[i];
        }
    }
}

std::vector<double> pixel_norm(std::span<const double> z)
{
    double ms = 0.0;
    for (double v : z) {
        ms += v * v;
    }
    ms /= static_cast<double>(z.size());
    const double r = 1.0 / std::sqrt(ms + 1e-8);
    std::vector<double> y(z.size());
    for (std::size_t i = 0; i < z.size(); ++i) {
        y[i] = z[i] * r;
    }
    return y;
}

std::vector<double> pixel_norm_backward(std::span<const double> z, std::span<const double> gradOut)
{
    const double n = static_cast<double>(z.size());
    double ms = 0.0, zg = 0.0;
    for (std::size_t i = 0; i < z.size(); ++i) {
        ms += z[i] * z[i];
        zg += z[i] * gradOut[i];
    }
    ms /= n;
    const double r = 1.0 / std::sqrt(ms + 1e-8);
    std::vector<double> dz(z.size());
    for (std::size_t i = 0; i < z.size(); ++i) {
        dz[i] = r * gradOut[i] - r * r * r * zg / n * z[i];
    }
    return dz;
}

namespace {

struct Stencil
{
    int plus = -1, minus = -1; // texel offsets used, -1 if unused
    double weight = 0.0;          // 1/(2h) for central, 1/h for one-sided
};

// Derivative stencil along one axis following geometry::normal_map: central
// when both neighbours are masked, one-sided otherwise, zero when isolated.
Stencil axis_stencil(const std::vector<std::uint8_t>& mask, int w, int h, int x, int y, int dx, int dy, double pitch)
{
    auto inside = [&](int xx, int yy) { return xx >= 0 && yy >= 0 && xx < w && yy < h && mask[static_cast<std::size_t>(yy * w + xx)]; };
    const bool fwd = inside(x + dx, y + dy);
    const bool bwd = inside(x - dx, y - dy);
    const int here = y * w + x;
    Stencil s;
    if (fwd && bwd) {
        s.plus = (y + dy) * w + x + dx;
        s.minus = (y - dy) * w + x - dx;
        s.weight = 1.0 / (2.0 * pitch);
    } else if (fwd) {
        s.plus = (y + dy) * w + x + dx;
        s.minus = here;
        s.weight = 1.0 / pitch;
    } else if (bwd) {
        s.plus = here;
        s.minus = (y - dy) * w + x - dx;
        s.weight = 1.0 / pitch;
    }
    return s;
}

Vec3 texel(const Tensor& g, int idx)
{
    const std::size_t p = g.plane();
    const auto i = static_cast<std::size_t>(idx);
    return {g.data[i], g.data[p + i], g.data[2 * p + i]};
}

void add_texel(Tensor& g, int idx, const Vec3& v)
{
    const std::size_t p = g.plane();
    const auto i = static_cast<std::size_t>(idx);
    g.data[i] += v.x();
    g.data[p + i] += v.y();
    g.data[2 * p + i] += v.z();
}

constexpr double kNormalEpsilon = 1e-12;

} // namespace

Tensor NormalMapLayer::forward(const Tensor& geometry, const std::vector<std::uint8_t>& mask, Cache* cache)
{
    if (geometry.channels != 3) {
        throw Error("normal map layer expects 3 geometry channels");
    }
    const int w = geometry.width, h = geometry.height;
    Tensor n = Tensor::zeros(3, h, w);
    if (cache) {
        cache->du.assign(n.plane(), Vec3::Zero());
        cache->dv.assign(n.plane(), Vec3::Zero());
        cache->cross.assign(n.plane(), Vec3::Zero());
    }
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            const int i = y * w + x;
            if (!mask[static_cast<std::size_t>(i)]) {
                continue;
            }
            const Stencil su = axis_stencil(mask, w, h, x, y, 1, 0, 1.0 / w);
            const Stencil sv = axis_stencil(mask, w, h, x, y, 0, 1, 1.0 / h);
            const Vec3 du = su.plus < 0 ? Vec3::Zero() : Vec3((texel(geometry, su.plus) - texel(geometry, su.minus)) * su.weight);
            const Vec3 dv = sv.plus < 0 ? Vec3::Zero() : Vec3((texel(geometry, sv.plus) - texel(geometry, sv.minus)) * sv.weight);
            const Vec3 c = du.cross(dv);
            const double len = c.norm();
            if (len > kNormalEpsilon) {
                add_texel(n, i, c / len);
            }
            if (cache) {
                cache->du[static_cast<std::size_t>(i)] = du;
                cache->dv[static_cast<std::size_t>(i)] = dv;
                cache->cross[static_cast<std::size_t>(i)] = c;
            }
        }
    }
    return n;
}

Tensor NormalMapLayer::backward(const Tensor& geometry, const std::vector<std::uint8_t>& mask, const Cache& cache,
                                const Tensor& gradOut)
{
    const int w = geometry.width, h = geometry.height;
    Tensor dg = Tensor::zeros(3, h, w);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            const int i = y * w + x;
            const auto ui = static_cast<std::size_t>(i);
            if (!mask[ui]) {
                continue;
            }
            const Vec3& c = cache.cross[ui];
            const double len = c.norm();
            if (len <= kNormalEpsilon) {
                continue;
            }
            const Vec3 u = c / len;
            const Vec3 g = texel(gradOut, i);
            const Vec3 dc = (g - u * u.dot(g)) / len;
            const Vec3 ddu = cache.dv[ui].cross(dc);
            const Vec3 ddv = dc.cross(cache.du[ui]);
            const Stencil su = axis_stencil(mask, w, h, x, y, 1, 0, 1.0 / w);
            const Stencil sv = axis_stencil(mask, w, h, x, y, 0, 1, 1.0 / h);
            if (su.plus >= 0) {
                add_texel(dg, su.plus, ddu * su.weight);
                add_texel(dg, su.minus, -ddu * su.weight);
            }
            if (sv.plus >= 0) {
                add_texel(dg, sv.plus, ddv * sv.weight);
                add_texel(dg, sv.minus, -ddv * sv.weight);
            }
        }
    }
    return dg;
}

} // namespace facekit::neuralgen
