/*
 * facekit - 3D face modelling, registration and fitting from synthetic and captured data.
 *
 * File: core/src/neuralgen/tensor.cpp
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
#include "facekit/neuralgen/tensor.hpp"

#include "facekit/common/error.hpp"

namespace facekit::neuralgen {

Tensor Tensor::zeros(int channels, int height, int width)
{
    Tensor t;
    t.channels = channels;
    t.height = height;
    t.width = width;
    t.data.assign(static_cast<std::size_t>(channels) * static_cast<std::size_t>(height) * static_cast<std::size_t>(width), 0.0);
    return t;
}

Tensor& Tensor::operator+=(const Tensor& other)
{
    if (!same_shape(other)) {
        throw Error("tensor shape mismatch in +=");
    }
    for (std::size_t i = 0; i < data.size(); ++i) {
        data[i] += other.data[i];
    }
    return *this;
}

Tensor tensor_from_uv(const geometry::UVMap& map, int first, int count, std::span<const double> shift,
                      std::span<const double> scale)
{
    if (first < 0 || count < 0 || first + count > map.channels) {
        throw Error("channel range [" + std::to_string(first) + ", " + std::to_string(first + count) +
                    ") outside a " + std::to_string(map.channels) + "-channel map");
    }
    Tensor t = Tensor::zeros(count, map.height, map.width);
    const auto ch = static_cast<std::size_t>(map.channels);
    for (std::size_t p = 0; p < map.texel_count(); ++p) {
        if (!map.mask[p]) {
            continue;
        }
        for (int c = 0; c < count; ++c) {
            const auto cc = static_cast<std::size_t>(c);
            const double s = shift.empty() ? 0.0 : shift[cc];
            const double k = scale.empty() ? 1.0 : scale[cc];
            t.data[cc * t.plane() + p] = (map.data[p * ch + static_cast<std::size_t>(first + c)] - s) * k;
        }
    }
    return t;
}

geometry::UVMap uv_from_tensor(const Tensor& t, const std::vector<std::uint8_t>& mask)
{
    geometry::UVMap map = geometry::UVMap::zeros(t.width, t.height, t.channels, mask);
    const auto ch = static_cast<std::size_t>(t.channels);
    for (std::size_t p = 0; p < t.plane(); ++p) {
        for (std::size_t c = 0; c < ch; ++c) {
            map.data[p * ch + c] = t.data[c * t.plane() + p];
        }
    }
    return map;
}

Tensor mask_tensor(const std::vector<std::uint8_t>& mask, int height, int width)
{
    Tensor t = Tensor::zeros(1, height, width);
    for (std::size_t p = 0; p < t.plane(); ++p) {
        t.data[p] = mask[p] ? 1.0 : 0.0;
    }
    return t;
}

Tensor concat(const Tensor& a, const Tensor& b)
{
    if (a.height != b.height || a.width != b.width) {
        throw Error("concat: spatial size mismatch");
    }
    Tensor t;
    t.channels = a.channels + b.channels;
    t.height = a.height;
    t.width = a.width;
    t.data.reserve(a.size() + b.size());
    t.data.insert(t.data.end(), a.data.begin(), a.data.end());
    t.data.insert(t.data.end(), b.data.begin(), b.data.end());
    return t;
}

} // namespace facekit::neuralgen
