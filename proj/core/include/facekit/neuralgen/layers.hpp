/*
 * facekit - 3D face modelling, registration and fitting from synthetic and captured data.
 *
 * File: core/include/facekit/neuralgen/layers.hpp
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
#include "facekit/neuralgen/tensor.hpp"

#include <span>
#include <string>
#include <vector>

namespace facekit::neuralgen {

/// Flat parameter vector with named tensors in declaration order.
class ParameterSet
{
public:
    struct Slot
    {
        std::string name;
        std::size_t offset = 0;
        std::size_t size = 0;
        std::vector<int> shape;
    };

    /// Appends a zero-filled tensor and returns its slot index.
    std::size_t add(std::string name, std::vector<int> shape);

    std::span<double> values(std::size_t slot) { return {data_.data() + slots_[slot].offset, slots_[slot].size}; }
    std::span<const double> values(std::size_t slot) const { return {data_.data() + slots_[slot].offset, slots_[slot].size}; }

    const Slot& slot(std::size_t i) const { return slots_[i]; }
    const std::vector<Slot>& slots() const { return slots_; }
    std::vector<double>& data() { return data_; }
    const std::vector<double>& data() const { return data_; }
    std::size_t size() const { return data_.size(); }

private:
    std::vector<Slot> slots_;
    std::vector<double> data_;
};

/// Slice of a gradient buffer laid out like a ParameterSet.
inline std::span<double> grad_slice(std::span<double> grads, const ParameterSet& params, std::size_t slot)
{
    return grads.subspan(params.slot(slot).offset, params.slot(slot).size);
}

constexpr double kLeakySlope = 0.2;

/// Left-to-right reductions. Eigen's vectorised reductions pick their
/// summation order from the buffer alignment, which varies between threads.
double ordered_sum(std::span<const double> a);
double ordered_dot(std::span<const double> a, std::span<const double> b);

/// Square-kernel convolution with zero padding kernel/2. Weights are stored with
/// unit variance and scaled by gain / sqrt(fan_in) at run time.
struct Conv2d
{
    int in = 0;
    int out = 0;
    int kernel = 3;
    int stride = 1;
    double gain = 1.0;
    std::size_t weight = 0;
    std::size_t bias = 0;

    static Conv2d declare(ParameterSet& params, const std::string& name, int in, int out, int kernel, int stride, double gain = 1.0);
    void init(ParameterSet& params, Rng& rng, bool zero = false) const;
    double scale() const;

    int output_size(int inputSize) const { return (inputSize + 2 * (kernel / 2) - kernel) / stride + 1; }
    Tensor forward(const ParameterSet& params, const Tensor& x) const;
    /// Accumulates parameter gradients; returns the input gradient when wantInput is set
    /// (an empty tensor otherwise).
    Tensor backward(const ParameterSet& params, const Tensor& x, const Tensor& gradOut, std::span<double> grads,
                    bool wantInput = true) const;
};

/// y = scale * W x + b with W stored as out x in.
struct Dense
{
    int in = 0;
    int out = 0;
    double gain = 1.0;
    std::size_t weight = 0;
    std::size_t bias = 0;

    static Dense declare(ParameterSet& params, const std::string& name, int in, int out, double gain = 1.0);
    void init(ParameterSet& params, Rng& rng) const;
    double scale() const;

    std::vector<double> forward(const ParameterSet& params, std::span<const double> x) const;
    std::vector<double> backward(const ParameterSet& params, std::span<const double> x, std::span<const double> gradOut,
                                 std::span<double> grads) const;
};

void leaky_relu_inplace(std::span<double> x);
/// grad *= slope where the pre-activation is negative.
void leaky_relu_backward(std::span<const double> preActivation, std::span<double> grad);

Tensor upsample2x(const Tensor& x);
Tensor upsample2x_backward(const Tensor& gradOut);

/// y = x * (1 + s_c) + t_c per channel; styles holds s then t.
Tensor style_modulate(const Tensor& x, std::span<const double> styles);
/// Returns dx and writes d(styles).
Tensor style_modulate_backward(const Tensor& x, std::span<const double> styles, const Tensor& gradOut,
                               std::span<double> gradStyles);

/// Removes the mean of every aligned block x block tile; block < 2 yields zeros.
std::vector<double> block_highpass(std::span<const double> plane, int height, int width, int block);

/// y = x + strength * n, n broadcast over channels.
void add_noise_inplace(Tensor& x, std::span<const double> noise, double strength);

/// z / sqrt(mean(z^2) + 1e-8)
std::vector<double> pixel_norm(std::span<const double> z);
std::vector<double> pixel_norm_backward(std::span<const double> z, std::span<const double> gradOut);

/// Differentiable normal map of a 3-channel geometry tensor (mm) restricted to
/// mask: the same stencils as geometry::normal_map, but degenerate texels give a
/// zero normal instead of copying a neighbour.
struct NormalMapLayer
{
    struct Cache
    {
        std::vector<Vec3> du, dv, cross;
    };
    static Tensor forward(const Tensor& geometry, const std::vector<std::uint8_t>& mask, Cache* cache = nullptr);
    static Tensor backward(const Tensor& geometry, const std::vector<std::uint8_t>& mask, const Cache& cache,
                           const Tensor& gradOut);
};

} // namespace facekit::neuralgen
