/*
 * facekit - 3D face modelling, registration and fitting from synthetic and captured data.
 *
 * File: core/include/facekit/common/adam.hpp
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

#include <cmath>
#include <span>
#include <vector>

namespace facekit {

/// First-order optimizer with bias-corrected first and second moment estimates.
class Adam
{
public:
    struct Options
    {
        double learningRate = 1e-3;
        double beta1 = 0.9;
        double beta2 = 0.999;
        double epsilon = 1e-8;
    };

    Adam() = default;
    Adam(std::size_t size, Options options) : options_(options), m_(size, 0.0), v_(size, 0.0) {}

    /// params -= lr * mhat / (sqrt(vhat) + eps). Optional per-entry learning-rate scale.
    void step(std::span<double> params, std::span<const double> grads, std::span<const double> lrScale = {})
    {
        ++t_;
        const double c1 = 1.0 - std::pow(options_.beta1, static_cast<double>(t_));
        const double c2 = 1.0 - std::pow(options_.beta2, static_cast<double>(t_));
        for (std::size_t i = 0; i < params.size(); ++i) {
            const double g = grads[i];
            m_[i] = options_.beta1 * m_[i] + (1.0 - options_.beta1) * g;
            v_[i] = options_.beta2 * v_[i] + (1.0 - options_.beta2) * g * g;
            const double mhat = m_[i] / c1;
            const double vhat = v_[i] / c2;
            const double lr = options_.learningRate * (lrScale.empty() ? 1.0 : lrScale[i]);
            params[i] -= lr * mhat / (std::sqrt(vhat) + options_.epsilon);
        }
    }

    void set_learning_rate(double lr) { options_.learningRate = lr; }
    double learning_rate() const { return options_.learningRate; }
    long steps() const { return t_; }

private:
    Options options_;
    std::vector<double> m_, v_;
    long t_ = 0;
};

} // namespace facekit
