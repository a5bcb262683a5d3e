/*
 * facekit - 3D face modelling, registration and fitting from synthetic and captured data.
 *
 * File: core/include/facekit/morphable/pca.hpp
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

#include <Eigen/Core>

#include <span>
#include <string>
#include <vector>

namespace facekit::morphable {

enum class PcaChannel { Shape, Texture, ExpressionOffset };

/// Linear model mean + components * (stddev .* coeffs). Components are the
/// columns of `components` (dimension x r) and are orthonormal.
struct PcaModel
{
    Eigen::VectorXd mean;
    Eigen::MatrixXd components;
    Eigen::VectorXd singularValues; ///< descending, of the centred data matrix
    int sampleCount = 0;            ///< N used for the standard deviations

    Eigen::Index dimension() const { return mean.size(); }
    Eigen::Index rank() const { return components.cols(); }

    /// Per-component standard deviation singularValue / sqrt(N).
    Eigen::VectorXd stddev() const;

    /// mean + sum_i coeffs_i * stddev_i * component_i
    Eigen::VectorXd reconstruct(const Eigen::VectorXd& coeffs) const;
    /// Coefficients (in standard-deviation units) of the orthogonal projection of a sample.
    Eigen::VectorXd project(const Eigen::VectorXd& sample) const;
    /// components * diag(stddev): maps coefficients to offsets from the mean.
    Eigen::MatrixXd scaled_basis() const;
};

/// PCA of N samples (each a vector of the same dimension). For
/// ExpressionOffset the samples are expression-minus-neutral offsets and the
/// mean is fixed at zero (no centring). Components are the top-r left singular
/// vectors, sign-fixed so that the entry of largest magnitude is positive.
/// Throws if N < 2, r > N - 1, a sample contains NaN, or a requested
/// component has a vanishing singular value.
PcaModel build_pca(std::span<const Eigen::VectorXd> samples, int r, PcaChannel channel);

struct MergeResult
{
    PcaModel model;
    int mergedCount = 0;             ///< detailed components that survived
    std::vector<int> droppedIndices; ///< detailed components inside the coarse span
};

/// Coarse components followed by the detailed components with their
/// projection onto the running span removed (Gram-Schmidt, two passes) and
/// renormalised. The coarse mean is kept. Detailed components whose residual
/// norm is below 1e-8 are dropped.
MergeResult merge_shape_basis(const PcaModel& coarse, const PcaModel& detailed);

/// Largest principal angle (radians) between the column spans of two orthonormal bases.
double max_principal_angle(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b);

} // namespace facekit::morphable
