/*
 * facekit - 3D face modelling, registration and fitting from synthetic and captured data.
 *
 * File: core/src/registration/scan_fit.cpp
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
#include "facekit/registration/scan_fit.hpp"

#include "facekit/common/error.hpp"
#include "facekit/common/parallel.hpp"
#include "facekit/registration/kdtree.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Geometry>

#include <cmath>
#include <limits>

namespace facekit::registration {

namespace {

Eigen::Matrix3d skew(const Vec3& v)
{
    Eigen::Matrix3d s;
    s << 0.0, -v.z(), v.y(), v.z(), 0.0, -v.x(), -v.y(), v.x(), 0.0;
    return s;
}

struct State
{
    RigidTransform pose;
    Eigen::VectorXd shape;
    Eigen::VectorXd expression;
};

struct Correspondences
{
    std::vector<Vec3> points;
    std::vector<Vec3> normals;
    std::vector<char> valid;
};

class ScanFitProblem
{
public:
    ScanFitProblem(const morphable::BaseModel& model, const ScanTarget& target, const ScanFitConfig& config)
        : model_(model), target_(target), config_(config), tree_(target.points)
    {
        shapeBasis_ = model.shape.scaled_basis();
        if (config.fitExpression) {
            expBasis_ = model.expression.scaled_basis();
        } else {
            expBasis_.resize(model.shape.dimension(), 0);
        }
        const auto& tl = target.landmarks3d;
        const auto& templLm = model.templ.landmarks();
        for (std::size_t i = 0; i < tl.size() && i < tl.points3d.size(); ++i) {
            for (int idx : templLm.vertexIndices) {
                if (idx == tl.vertexIndices[i]) {
                    landmarks_.emplace_back(idx, tl.points3d[i]);
                    break;
                }
            }
        }
    }

    Eigen::Index coefficient_count() const { return shapeBasis_.cols() + expBasis_.cols(); }

    Eigen::VectorXd geometry(const State& s) const
    {
        Eigen::VectorXd g = model_.shape.mean + shapeBasis_ * s.shape;
        if (expBasis_.cols() > 0) {
            g += expBasis_ * s.expression;
        }
        return g;
    }

    std::vector<Vec3> posed(const State& s) const
    {
        const Eigen::VectorXd g = geometry(s);
        std::vector<Vec3> out(static_cast<std::size_t>(g.size() / 3));
        for (std::size_t i = 0; i < out.size(); ++i) {
            out[i] = s.pose.apply(Vec3(g.segment<3>(static_cast<Eigen::Index>(3 * i))));
        }
        return out;
    }

    Correspondences correspond(const State& s) const
    {
        const auto x = posed(s);
        geometry::TriMesh mesh;
        mesh.vertices = x;
        mesh.triangles = model_.templ.mesh().triangles;
        const auto normals = geometry::vertex_normals(mesh);
        const double cosLimit = std::cos(config_.maxNormalAngleDeg * M_PI / 180.0);
        Correspondences c;
        c.points.resize(x.size());
        c.normals.resize(x.size(), Vec3::Zero());
        c.valid.resize(x.size(), 0);
        parallel_for(0, x.size(), [&](std::size_t i) {
            const auto hit = tree_.nearest(x[i]);
            const auto q = static_cast<std::size_t>(hit.index);
            c.points[i] = target_.points[q];
            bool ok = hit.squaredDistance <= config_.maxDistance * config_.maxDistance;
            if (target_.has_normals()) {
                c.normals[i] = target_.normals[q];
                ok = ok && c.normals[i].dot(normals[i]) >= cosLimit;
            }
            c.valid[i] = ok ? 1 : 0;
        });
        return c;
    }

    double loss(const State& s, const Correspondences& c) const
    {
        const auto x = posed(s);
        const bool p2plane = target_.has_normals();
        const double fit = deterministic_sum<double>(0, x.size(), 512, 0.0, [&](std::size_t i) {
            if (!c.valid[i]) return 0.0;
            const Vec3 r = x[i] - c.points[i];
            if (p2plane) {
                const double pl = c.normals[i].dot(r);
                return pl * pl + config_.wPointToPoint * r.squaredNorm();
            }
            return r.squaredNorm();
        });
        double lm = 0.0;
        for (const auto& [idx, p] : landmarks_) {
            lm += (x[static_cast<std::size_t>(idx)] - p).squaredNorm();
        }
        const double prior = s.shape.squaredNorm() + s.expression.squaredNorm();
        return (fit + config_.wLandmark * lm) / static_cast<double>(x.size()) + config_.wPrior * prior;
    }

    /// Gauss-Newton normal equations in (rotation increment, translation, coefficients).
    void normal_equations(const State& s, const Correspondences& c, Eigen::MatrixXd& h, Eigen::VectorXd& g) const
    {
        const Eigen::VectorXd geo = geometry(s);
        const Eigen::Index nc = coefficient_count();
        const Eigen::Index cols = 6 + nc;
        const std::size_t nv = c.points.size();
        const bool p2plane = target_.has_normals();
        const Eigen::Matrix3d& R = s.pose.rotation;

        // Rows are collected per vertex into a dense matrix; vertices that do not contribute get zero rows.
        const Eigen::Index rowsPerVertex = p2plane ? 4 : 3;
        Eigen::MatrixXd J = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(nv + landmarks_.size()) * rowsPerVertex, cols);
        Eigen::VectorXd r = Eigen::VectorXd::Zero(J.rows());

        auto vertex_jacobian = [&](std::size_t i, Eigen::Matrix<double, 3, Eigen::Dynamic>& Ji, Vec3& xi) {
            const Vec3 v = geo.segment<3>(static_cast<Eigen::Index>(3 * i));
            const Vec3 rv = R * v;
            xi = s.pose.scale * rv + s.pose.translation;
            Ji.resize(3, cols);
            Ji.leftCols<3>() = -skew(xi);
            Ji.middleCols<3>(3) = Eigen::Matrix3d::Identity();
            const auto row = static_cast<Eigen::Index>(3 * i);
            Ji.middleCols(6, shapeBasis_.cols()) = s.pose.scale * R * shapeBasis_.middleRows<3>(row);
            if (expBasis_.cols() > 0) {
                Ji.rightCols(expBasis_.cols()) = s.pose.scale * R * expBasis_.middleRows<3>(row);
            }
        };

        parallel_for(0, nv, [&](std::size_t i) {
            if (!c.valid[i]) return;
            Eigen::Matrix<double, 3, Eigen::Dynamic> Ji;
            Vec3 xi;
            vertex_jacobian(i, Ji, xi);
            const Vec3 res = xi - c.points[i];
            const Eigen::Index base = static_cast<Eigen::Index>(i) * rowsPerVertex;
            if (p2plane) {
                J.row(base) = c.normals[i].transpose() * Ji;
                r(base) = c.normals[i].dot(res);
                const double sw = std::sqrt(config_.wPointToPoint);
                J.middleRows<3>(base + 1) = sw * Ji;
                r.segment<3>(base + 1) = sw * res;
            } else {
                J.middleRows<3>(base) = Ji;
                r.segment<3>(base) = res;
            }
        });
        const double swl = std::sqrt(config_.wLandmark);
        for (std::size_t k = 0; k < landmarks_.size(); ++k) {
            Eigen::Matrix<double, 3, Eigen::Dynamic> Ji;
            Vec3 xi;
            vertex_jacobian(static_cast<std::size_t>(landmarks_[k].first), Ji, xi);
            const Eigen::Index base = static_cast<Eigen::Index>(nv + k) * rowsPerVertex;
            J.middleRows<3>(base) = swl * Ji;
            r.segment<3>(base) = swl * (xi - landmarks_[k].second);
        }
        const double inv = 1.0 / static_cast<double>(nv);
        h = inv * (J.transpose() * J);
        g = inv * (J.transpose() * r);
        for (Eigen::Index k = 0; k < nc; ++k) {
            h(6 + k, 6 + k) += config_.wPrior;
        }
        g.segment(6, shapeBasis_.cols()) += config_.wPrior * s.shape;
        if (expBasis_.cols() > 0) {
            g.tail(expBasis_.cols()) += config_.wPrior * s.expression;
        }
    }

    State apply_step(const State& s, const Eigen::VectorXd& step) const
    {
        State out = s;
        const Vec3 w = step.head<3>();
        const double angle = w.norm();
        if (angle > 0.0) {
            const Eigen::Matrix3d dr = Eigen::AngleAxisd(angle, w / angle).toRotationMatrix();
            out.pose.rotation = dr * s.pose.rotation;
            out.pose.translation = dr * s.pose.translation;
        }
        // The rotation increment acts about the origin of scan space on already-posed points.
        out.pose.translation += step.segment<3>(3);
        out.shape += step.segment(6, shapeBasis_.cols());
        if (expBasis_.cols() > 0) {
            out.expression += step.tail(expBasis_.cols());
        }
        return out;
    }

private:
    const morphable::BaseModel& model_;
    const ScanTarget& target_;
    ScanFitConfig config_;
    KdTree tree_;
    Eigen::MatrixXd shapeBasis_;
    Eigen::MatrixXd expBasis_;
    std::vector<std::pair<int, Vec3>> landmarks_;
};

} // namespace

ScanFitResult fit_base_to_scan(const morphable::BaseModel& model, const ScanTarget& target, const ScanFitConfig& config)
{
    if (target.points.empty()) {
        throw Error("fit_base_to_scan: empty scan");
    }
    if (config.correspondenceRefresh < 1) {
        throw Error("fit_base_to_scan: correspondenceRefresh must be >= 1");
    }
    ScanFitResult result;
    result.params = morphable::BaseParams::zeros(model);

    geometry::TriMesh meanMesh = model.templ.mesh();
    meanMesh.vertices = geometry::unflatten(model.shape.mean);
    result.alignment = landmark_align(meanMesh, model.templ.landmarks(), target, false);
    if (config.iterations <= 0) {
        return result;
    }

    ScanFitProblem problem(model, target, config);
    State state{result.alignment, result.params.shape, config.fitExpression ? result.params.expression : Eigen::VectorXd()};
    if (!config.fitExpression) {
        state.expression.resize(0);
    }
    State best = state;
    double bestFresh = std::numeric_limits<double>::infinity();
    double previousFresh = std::numeric_limits<double>::infinity();
    int increases = 0;
    double stepScale = config.stepScale;
    double damping = 1e-6;
    Correspondences corr;
    double current = 0.0;

    for (int iter = 0; iter < config.iterations; ++iter) {
        if (iter % config.correspondenceRefresh == 0) {
            corr = problem.correspond(state);
            current = problem.loss(state, corr);
            result.refreshIterations.push_back(iter);
            if (current < bestFresh) {
                bestFresh = current;
                best = state;
            }
            if (current > previousFresh) {
                if (++increases >= 3) {
                    increases = 0;
                    if (result.halvings == 3) {
                        result.aborted = true;
                        result.diagnostic = "loss increased over 3 consecutive refreshes after 3 step halvings (iteration " +
                                            std::to_string(iter) + ", loss " + std::to_string(current) + ")";
                        break;
                    }
                    ++result.halvings;
                    stepScale *= 0.5;
                }
            } else {
                increases = 0;
            }
            previousFresh = current;
        }
        Eigen::MatrixXd h;
        Eigen::VectorXd g;
        problem.normal_equations(state, corr, h, g);
        bool accepted = false;
        for (int attempt = 0; attempt < 12 && !accepted; ++attempt) {
            Eigen::MatrixXd lhs = h;
            lhs.diagonal() += damping * (h.diagonal().array() + 1e-12).matrix();
            const Eigen::VectorXd step = -stepScale * lhs.ldlt().solve(g);
            if (!step.allFinite()) {
                damping *= 10.0;
                continue;
            }
            State candidate = problem.apply_step(state, step);
            const double l = problem.loss(candidate, corr);
            if (l < current) {
                state = std::move(candidate);
                current = l;
                damping = std::max(damping * 0.3, 1e-9);
                accepted = true;
            } else {
                damping *= 10.0;
            }
        }
        result.lossTrace.push_back(current);
    }
    if (!result.aborted) {
        const auto finalCorr = problem.correspond(state);
        if (problem.loss(state, finalCorr) <= bestFresh) {
            best = state;
        }
    }
    result.alignment = best.pose;
    result.params.shape = best.shape;
    if (config.fitExpression) {
        result.params.expression = best.expression;
    }
    return result;
}

geometry::TriMesh fitted_mesh(const morphable::BaseModel& model, const ScanFitResult& fit)
{
    geometry::TriMesh mesh = morphable::eval_base(model, fit.params);
    mesh.vertices = fit.alignment.apply(mesh.vertices);
    return mesh;
}

} // namespace facekit::registration
