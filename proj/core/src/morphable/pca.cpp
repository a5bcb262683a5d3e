/*
 * facekit - 3D face modelling, registration and fitting from synthetic and captured data.
 *
 * File: core/src/morphable/pca.cpp
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
#include "facekit/morphable/pca.hpp"

#include "facekit/common/error.hpp"
#include "facekit/common/parallel.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <iostream>

namespace facekit::morphable {

Eigen::VectorXd PcaModel::stddev() const
{
    return singularValues / std::sqrt(static_cast<double>(std::max(sampleCount, 1)));
}

Eigen::VectorXd PcaModel::reconstruct(const Eigen::VectorXd& coeffs) const
{
    if (coeffs.size() != rank()) {
        throw Error("expected " + std::to_string(rank()) + " coefficients, got " + std::to_string(coeffs.size()));
    }
    return mean + components * stddev().cwiseProduct(coeffs);
}

Eigen::VectorXd PcaModel::project(const Eigen::VectorXd& sample) const
{
    const Eigen::VectorXd raw = components.transpose() * (sample - mean);
    const Eigen::VectorXd sd = stddev();
    Eigen::VectorXd coeffs(raw.size());
    for (Eigen::Index i = 0; i < raw.size(); ++i) {
        coeffs(i) = sd(i) > 0.0 ? raw(i) / sd(i) : 0.0;
    }
    return coeffs;
}

Eigen::MatrixXd PcaModel::scaled_basis() const
{
    return components * stddev().asDiagonal();
}

PcaModel build_pca(std::span<const Eigen::VectorXd> samples, int r, PcaChannel channel)
{
    const auto n = static_cast<int>(samples.size());
    if (n < 2) {
        throw Error("PCA needs at least 2 samples, got " + std::to_string(n));
    }
    if (r < 1 || r > n - 1) {
        throw Error("requested " + std::to_string(r) + " components but at most N - 1 = " + std::to_string(n - 1) +
                    " are available");
    }
    const Eigen::Index dim = samples[0].size();
    for (int s = 0; s < n; ++s) {
        if (samples[static_cast<std::size_t>(s)].size() != dim) {
            throw Error("sample " + std::to_string(s) + " has dimension " + std::to_string(samples[static_cast<std::size_t>(s)].size()) +
                        ", expected " + std::to_string(dim));
        }
        if (!samples[static_cast<std::size_t>(s)].allFinite()) {
            throw Error("sample " + std::to_string(s) + " contains NaN or infinite values");
        }
    }

    PcaModel model;
    model.sampleCount = n;
    model.mean = Eigen::VectorXd::Zero(dim);
    if (channel != PcaChannel::ExpressionOffset) {
        for (const auto& s : samples) {
            model.mean += s;
        }
        model.mean /= n;
    }

    Eigen::MatrixXd centred(dim, n);
    for (int s = 0; s < n; ++s) {
        centred.col(s) = samples[static_cast<std::size_t>(s)] - model.mean;
    }

    // Gram matrix in fixed column-pair order; each entry is an independent dot product.
    Eigen::MatrixXd gram(n, n);
    parallel_for(0, static_cast<std::size_t>(n), [&](std::size_t i) {
        const auto col = static_cast<Eigen::Index>(i);
        for (Eigen::Index j = 0; j <= col; ++j) {
            gram(col, j) = centred.col(col).dot(centred.col(j));
        }
    });
    gram = gram.selfadjointView<Eigen::Lower>();

    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(gram);
    if (eig.info() != Eigen::Success) {
        throw NumericError("eigen-decomposition of the PCA Gram matrix failed");
    }
    const Eigen::VectorXd& evals = eig.eigenvalues(); // ascending
    const double scale = std::max(evals(n - 1), 0.0);
    model.components.resize(dim, r);
    model.singularValues.resize(r);
    for (int k = 0; k < r; ++k) {
        const double lambda = evals(n - 1 - k);
        if (lambda <= 0.0 || lambda <= 1e-20 * scale) {
            throw Error("component " + std::to_string(k) + " has a vanishing singular value; the samples span only " +
                        std::to_string(k) + " directions");
        }
        const double sigma = std::sqrt(lambda);
        Eigen::VectorXd u = centred * eig.eigenvectors().col(n - 1 - k) / sigma;
        // Re-orthogonalise against earlier components to remove Gram round-off.
        for (int j = 0; j < k; ++j) {
            u -= model.components.col(j).dot(u) * model.components.col(j);
        }
        u.normalize();
        Eigen::Index arg;
        u.cwiseAbs().maxCoeff(&arg);
        if (u(arg) < 0.0) {
            u = -u;
        }
        model.components.col(k) = u;
        model.singularValues(k) = sigma;
    }
    return model;
}

MergeResult merge_shape_basis(const PcaModel& coarse, const PcaModel& detailed)
{
    if (coarse.dimension() != detailed.dimension()) {
        throw Error("cannot merge bases of dimension " + std::to_string(coarse.dimension()) + " and " +
                    std::to_string(detailed.dimension()));
    }
    MergeResult result;
    std::vector<Eigen::VectorXd> cols;
    std::vector<double> sd;
    const Eigen::VectorXd coarseSd = coarse.stddev();
    const Eigen::VectorXd detailSd = detailed.stddev();
    for (Eigen::Index i = 0; i < coarse.rank(); ++i) {
        cols.emplace_back(coarse.components.col(i));
        sd.push_back(coarseSd(i));
    }
    for (Eigen::Index i = 0; i < detailed.rank(); ++i) {
        Eigen::VectorXd v = detailed.components.col(i);
        for (int pass = 0; pass < 2; ++pass) {
            for (const auto& c : cols) {
                v -= c.dot(v) * c;
            }
        }
        const double residual = v.norm();
        if (residual < 1e-8) {
            std::cerr << "merge_shape_basis: detailed component " << i << " lies in the coarse span; dropped\n";
            result.droppedIndices.push_back(static_cast<int>(i));
            continue;
        }
        cols.emplace_back(v / residual);
        sd.push_back(detailSd(i));
        ++result.mergedCount;
    }

    PcaModel& m = result.model;
    m.mean = coarse.mean;
    m.sampleCount = coarse.sampleCount;
    m.components.resize(coarse.dimension(), static_cast<Eigen::Index>(cols.size()));
    m.singularValues.resize(static_cast<Eigen::Index>(cols.size()));
    const double rootN = std::sqrt(static_cast<double>(m.sampleCount));
    for (std::size_t i = 0; i < cols.size(); ++i) {
        m.components.col(static_cast<Eigen::Index>(i)) = cols[i];
        // Stored as singular values relative to the coarse sample count so stddev() is preserved.
        m.singularValues(static_cast<Eigen::Index>(i)) = sd[i] * rootN;
    }
    return result;
}

double max_principal_angle(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b)
{
    // acos of the cosines is ill-conditioned for tiny angles; the singular
    // values of (I - A A^T) B are the sines directly.
    const Eigen::MatrixXd residual = b - a * (a.transpose() * b);
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(residual);
    return std::asin(std::min(1.0, svd.singularValues().maxCoeff()));
}

} // namespace facekit::morphable
