/*
 * facekit - 3D face modelling, registration and fitting from synthetic and captured data.
 *
 * File: tests/fd_util.hpp
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
#pragma once

#include "facekit/common/random.hpp"
#include "facekit/geometry/uv.hpp"
#include "facekit/neuralgen/networks.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

// Finite-difference helpers and small fixtures shared by the network tests
// and the acceptance suite.
namespace facekit::test {

using neuralgen::GeneratorKind;
using neuralgen::GeneratorSpec;
using neuralgen::ParameterSet;
using neuralgen::Tensor;


inline Eigen::VectorXd to_eigen(const std::vector<double>& v)
{
    return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

inline Tensor random_tensor(Rng& rng, int c, int h, int w)
{
    Tensor t = Tensor::zeros(c, h, w);
    for (double& v : t.data) v = rng.normal();
    return t;
}

inline double dot(const std::vector<double>& a, const std::vector<double>& b)
{
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

/// Central-difference gradient of f at x over the chosen coordinates.
inline Eigen::VectorXd numeric_gradient(std::vector<double>& x, const std::vector<std::size_t>& coords,
                                 const std::function<double()>& f, double eps = 1e-5)
{
    Eigen::VectorXd g(static_cast<Eigen::Index>(coords.size()));
    for (std::size_t k = 0; k < coords.size(); ++k) {
        const double saved = x[coords[k]];
        x[coords[k]] = saved + eps;
        const double hi = f();
        x[coords[k]] = saved - eps;
        const double lo = f();
        x[coords[k]] = saved;
        g(static_cast<Eigen::Index>(k)) = (hi - lo) / (2 * eps);
    }
    return g;
}

inline std::vector<std::size_t> all_coords(std::size_t n)
{
    std::vector<std::size_t> c(n);
    for (std::size_t i = 0; i < n; ++i) c[i] = i;
    return c;
}

inline std::vector<std::size_t> sample_coords(std::size_t n, std::size_t k, std::uint64_t seed)
{
    if (n <= k) return all_coords(n);
    Rng rng(seed);
    std::vector<std::size_t> c;
    for (std::size_t i = 0; i < k; ++i) c.push_back(rng.index(n));
    return c;
}

inline Eigen::VectorXd pick(const std::vector<double>& g, const std::vector<std::size_t>& coords)
{
    Eigen::VectorXd v(static_cast<Eigen::Index>(coords.size()));
    for (std::size_t k = 0; k < coords.size(); ++k) v(static_cast<Eigen::Index>(k)) = g[coords[k]];
    return v;
}

inline GeneratorSpec tiny_spec(GeneratorKind kind)
{
    GeneratorSpec s = kind == GeneratorKind::Detail ? GeneratorSpec::detail(16) : GeneratorSpec::expression(16);
    s.baseResolution = 8;
    s.channelsPerLevel = {6, 4};
    s.latentDim = 8;
    s.mappingDepth = 2;
    return s;
}

/// Disc-shaped mask with smooth face-like geometry and texture.
inline geometry::UVMap synthetic_cond(int res, std::uint64_t seed, int channels = 6, bool expression = false)
{
    Rng rng(seed);
    std::vector<std::uint8_t> mask(static_cast<std::size_t>(res * res), 0);
    geometry::UVMap m = geometry::UVMap::zeros(res, res, channels, {});
    const double a = rng.uniform(0.5, 1.5), b = rng.uniform(0, 6.28);
    for (int y = 0; y < res; ++y) {
        for (int x = 0; x < res; ++x) {
            const double u = (x + 0.5) / res, v = (y + 0.5) / res;
            const double r2 = (u - 0.5) * (u - 0.5) + (v - 0.5) * (v - 0.5);
            mask[static_cast<std::size_t>(y * res + x)] = r2 < 0.2 ? 1 : 0;
        }
    }
    m.mask = mask;
    for (int y = 0; y < res; ++y) {
        for (int x = 0; x < res; ++x) {
            if (!m.masked(x, y)) continue;
            const double u = (x + 0.5) / res, v = (y + 0.5) / res;
            m.at(x, y, 0) = (u - 0.5) * 150;
            m.at(x, y, 1) = (v - 0.5) * 190;
            m.at(x, y, 2) = 80 * std::sqrt(std::max(0.0, 1 - 2 * ((u - .5) * (u - .5) + (v - .5) * (v - .5)))) + a * std::sin(9 * u + b);
            for (int c = 3; c < channels; ++c) {
                m.at(x, y, c) = expression ? 2.0 * std::sin(5 * u + c + b) * v : 0.5 + 0.3 * std::sin(3 * u + 4 * v + c + b);
            }
        }
    }
    return m;
}

inline void randomise(ParameterSet& p, std::uint64_t seed, double scale = 0.5)
{
    Rng rng(seed);
    for (double& v : p.data()) v += scale * rng.normal();
}

} // namespace facekit::test
