/*
 * facekit - 3D face modelling, registration and fitting from synthetic and captured data.
 *
 * File: core/include/facekit/neuralgen/tensor.hpp
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

#include "facekit/geometry/uv.hpp"

#include <Eigen/Core>

#include <span>
#include <vector>

namespace facekit::neuralgen {

using geometry::Vec3;

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Channel-major activation: data[(c * height + y) * width + x].
struct Tensor
{
    int channels = 0;
    int height = 0;
    int width = 0;
    std::vector<double> data;

    static Tensor zeros(int channels, int height, int width);

    std::size_t plane() const { return static_cast<std::size_t>(height) * static_cast<std::size_t>(width); }
    std::size_t size() const { return data.size(); }
    double& at(int c, int y, int x) { return data[static_cast<std::size_t>(c) * plane() + static_cast<std::size_t>(y * width + x)]; }
    double at(int c, int y, int x) const { return data[static_cast<std::size_t>(c) * plane() + static_cast<std::size_t>(y * width + x)]; }

    /// channels x (height * width) view.
    Eigen::Map<RowMatrix> matrix() { return {data.data(), channels, static_cast<Eigen::Index>(plane())}; }
    Eigen::Map<const RowMatrix> matrix() const { return {data.data(), channels, static_cast<Eigen::Index>(plane())}; }

    bool same_shape(const Tensor& other) const
    {
        return channels == other.channels && height == other.height && width == other.width;
    }
    Tensor& operator+=(const Tensor& other);
};

/// Channels [first, first + count) of a UV map, transformed to (v - shift[c]) * scale[c]
/// on masked texels and zero elsewhere. Empty shift/scale mean 0/1.
Tensor tensor_from_uv(const geometry::UVMap& map, int first, int count, std::span<const double> shift = {},
                      std::span<const double> scale = {});
/// Inverse layout conversion (no value transform); the mask is copied.
geometry::UVMap uv_from_tensor(const Tensor& t, const std::vector<std::uint8_t>& mask);

/// Per-texel mask as a 1 x H x W tensor of 0/1 values.
Tensor mask_tensor(const std::vector<std::uint8_t>& mask, int height, int width);

/// Channel-wise concatenation.
Tensor concat(const Tensor& a, const Tensor& b);

} // namespace facekit::neuralgen
