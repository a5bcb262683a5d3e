/*
 * facekit - 3D face modelling, registration and fitting from synthetic and captured data.
 *
 * File: core/src/registration/nonrigid_icp.cpp
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
#include "facekit/registration/nonrigid_icp.hpp"

#include "facekit/common/error.hpp"
#include "facekit/common/parallel.hpp"
#include "facekit/common/random.hpp"
#include "facekit/registration/kdtree.hpp"

#include <Eigen/Sparse>
#include <Eigen/SparseCholesky>

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <unordered_map>

namespace facekit::registration {

std::vector<Vec3> DeformationGraph::deform(std::span<const Vec3> vertices) const
{
    std::vector<Vec3> out(vertices.size());
    parallel_for(0, vertices.size(), [&](std::size_t i) {
        Vec3 acc = Vec3::Zero();
        for (const auto& [j, w] : vertexWeights[i]) {
            const auto ju = static_cast<std::size_t>(j);
            acc += w * (nodeAffine[ju] * (vertices[i] - nodePositions[ju]) + nodePositions[ju] + nodeTranslation[ju]);
        }
        out[i] = acc;
    });
    return out;
}

bool DeformationGraph::connected() const
{
    if (nodePositions.empty()) {
        return true;
    }
    std::vector<std::vector<int>> adj(nodePositions.size());
    for (const auto& [a, b] : nodeEdges) {
        adj[static_cast<std::size_t>(a)].push_back(b);
        adj[static_cast<std::size_t>(b)].push_back(a);
    }
    std::vector<char> seen(nodePositions.size(), 0);
    std::vector<int> stack{0};
    seen[0] = 1;
    std::size_t count = 1;
    while (!stack.empty()) {
        const int n = stack.back();
        stack.pop_back();
        for (int m : adj[static_cast<std::size_t>(n)]) {
            if (!seen[static_cast<std::size_t>(m)]) {
                seen[static_cast<std::size_t>(m)] = 1;
                ++count;
                stack.push_back(m);
            }
        }
    }
    return count == nodePositions.size();
}

namespace {

std::vector<int> poisson_disk(std::span<const Vec3> vertices, const std::vector<std::size_t>& order, double radius)
{
    std::unordered_map<std::int64_t, std::vector<int>> grid;
    auto key = [&](const Vec3& p, int dx, int dy, int dz) {
        const auto cx = static_cast<std::int64_t>(std::floor(p.x() / radius)) + dx;
        const auto cy = static_cast<std::int64_t>(std::floor(p.y() / radius)) + dy;
        const auto cz = static_cast<std::int64_t>(std::floor(p.z() / radius)) + dz;
        return (cx * 73856093) ^ (cy * 19349663) ^ (cz * 83492791);
    };
    std::vector<int> accepted;
    const double r2 = radius * radius;
    for (std::size_t idx : order) {
        const Vec3& p = vertices[idx];
        bool ok = true;
        for (int dx = -1; dx <= 1 && ok; ++dx) {
            for (int dy = -1; dy <= 1 && ok; ++dy) {
                for (int dz = -1; dz <= 1 && ok; ++dz) {
                    auto it = grid.find(key(p, dx, dy, dz));
                    if (it == grid.end()) continue;
                    for (int a : it->second) {
                        if ((vertices[static_cast<std::size_t>(a)] - p).squaredNorm() < r2) {
                            ok = false;
                            break;
                        }
                    }
                }
            }
        }
        if (ok) {
            accepted.push_back(static_cast<int>(idx));
            grid[key(p, 0, 0, 0)].push_back(static_cast<int>(idx));
        }
    }
    return accepted;
}

} // namespace

DeformationGraph build_deformation_graph(std::span<const Vec3> vertices, int targetNodes, int nodeNeighbors, int vertexNodes)
{
    if (vertices.empty() || targetNodes < 1) {
        throw Error("deformation graph needs vertices and a positive node count");
    }
    // Deterministic shuffled visiting order so the sampling is not biased by vertex numbering.
    std::vector<std::size_t> order(vertices.size());
    std::iota(order.begin(), order.end(), 0);
    Rng rng(0x5eed, 17);
    std::shuffle(order.begin(), order.end(), rng.engine());

    const auto box = geometry::bounding_box(std::vector<Vec3>(vertices.begin(), vertices.end()));
    double lo = 1e-6 * std::max(box.diagonal(), 1e-9), hi = box.diagonal() + 1e-9;
    std::vector<int> nodes;
    for (int it = 0; it < 40; ++it) {
        const double mid = 0.5 * (lo + hi);
        auto candidate = poisson_disk(vertices, order, mid);
        if (static_cast<int>(candidate.size()) > targetNodes) {
            lo = mid;
        } else {
            hi = mid;
            nodes = std::move(candidate);
        }
        if (static_cast<int>(nodes.size()) == targetNodes) {
            break;
        }
    }
    if (nodes.empty()) {
        nodes = poisson_disk(vertices, order, hi);
    }
    std::sort(nodes.begin(), nodes.end());

    DeformationGraph graph;
    for (int idx : nodes) {
        graph.nodePositions.push_back(vertices[static_cast<std::size_t>(idx)]);
    }
    const std::size_t nodeCount = graph.nodePositions.size();
    graph.nodeAffine.assign(nodeCount, Eigen::Matrix3d::Identity());
    graph.nodeTranslation.assign(nodeCount, Vec3::Zero());

    KdTree tree(graph.nodePositions);
    std::vector<std::pair<int, int>> edges;
    const int kn = std::min<int>(nodeNeighbors + 1, static_cast<int>(nodeCount));
    for (std::size_t j = 0; j < nodeCount; ++j) {
        for (const auto& hit : tree.k_nearest(graph.nodePositions[j], kn)) {
            if (hit.index != static_cast<int>(j)) {
                edges.emplace_back(std::min<int>(static_cast<int>(j), hit.index), std::max<int>(static_cast<int>(j), hit.index));
            }
        }
    }
    // Join components greedily until the graph is connected.
    std::vector<int> parent(nodeCount);
    std::iota(parent.begin(), parent.end(), 0);
    auto find = [&](int a) {
        while (parent[static_cast<std::size_t>(a)] != a) {
            parent[static_cast<std::size_t>(a)] = parent[static_cast<std::size_t>(parent[static_cast<std::size_t>(a)])];
            a = parent[static_cast<std::size_t>(a)];
        }
        return a;
    };
    for (const auto& [a, b] : edges) {
        parent[static_cast<std::size_t>(find(a))] = find(b);
    }
    for (;;) {
        const int root = find(0);
        double best = std::numeric_limits<double>::infinity();
        std::pair<int, int> link{-1, -1};
        for (std::size_t a = 0; a < nodeCount; ++a) {
            if (find(static_cast<int>(a)) != root) continue;
            for (std::size_t b = 0; b < nodeCount; ++b) {
                if (find(static_cast<int>(b)) == root) continue;
                const double d = (graph.nodePositions[a] - graph.nodePositions[b]).squaredNorm();
                if (d < best) {
                    best = d;
                    link = {static_cast<int>(std::min(a, b)), static_cast<int>(std::max(a, b))};
                }
            }
        }
        if (link.first < 0) break;
        edges.push_back(link);
        parent[static_cast<std::size_t>(find(link.first))] = find(link.second);
    }
    std::sort(edges.begin(), edges.end());
    edges.erase(std::unique(edges.begin(), edges.end()), edges.end());
    graph.nodeEdges = std::move(edges);

    const int kv = std::min<int>(vertexNodes + 1, static_cast<int>(nodeCount));
    graph.vertexWeights.resize(vertices.size());
    parallel_for(0, vertices.size(), [&](std::size_t i) {
        const auto hits = tree.k_nearest(vertices[i], kv);
        auto& weights = graph.vertexWeights[i];
        if (hits.size() == 1) {
            weights.emplace_back(hits[0].index, 1.0);
            return;
        }
        const std::size_t used = std::min<std::size_t>(hits.size() - 1, static_cast<std::size_t>(vertexNodes));
        const double dmax = std::sqrt(hits[used].squaredDistance);
        double total = 0.0;
        for (std::size_t k = 0; k < used; ++k) {
            const double w = dmax > 0.0 ? std::pow(1.0 - std::sqrt(hits[k].squaredDistance) / dmax, 2.0) : 1.0;
            weights.emplace_back(hits[k].index, w);
            total += w;
        }
        if (total <= 0.0) {
            for (auto& [j, w] : weights) w = 1.0 / static_cast<double>(used);
        } else {
            for (auto& [j, w] : weights) w /= total;
        }
    });
    return graph;
}

namespace {

struct Correspondence
{
    Vec3 point = Vec3::Zero();
    Vec3 normal = Vec3::Zero();
    bool valid = false;
};

struct Evaluation
{
    double energy = 0.0;
    std::vector<Vec3> deformed;
    std::vector<Correspondence> corr;
};

class IcpProblem
{
public:
    IcpProblem(const geometry::TriMesh& templ, const geometry::LandmarkSet& templLandmarks, const ScanTarget& target,
               const NonrigidIcpConfig& config)
        : templ_(templ), target_(target), config_(config), tree_(target.points)
    {
        graph_ = build_deformation_graph(templ.vertices, config.targetNodes);
        std::map<int, Vec3> targetByVertex;
        for (std::size_t i = 0; i < target.landmarks3d.size() && i < target.landmarks3d.points3d.size(); ++i) {
            targetByVertex.emplace(target.landmarks3d.vertexIndices[i], target.landmarks3d.points3d[i]);
        }
        for (int idx : templLandmarks.vertexIndices) {
            if (auto it = targetByVertex.find(idx); it != targetByVertex.end()) {
                landmarks_.emplace_back(idx, it->second);
            }
        }
    }

    std::size_t unknowns() const { return 12 * graph_.node_count(); }
    DeformationGraph& graph() { return graph_; }

    void set_state(const Eigen::VectorXd& x)
    {
        for (std::size_t j = 0; j < graph_.node_count(); ++j) {
            const auto base = static_cast<Eigen::Index>(12 * j);
            graph_.nodeAffine[j] = Eigen::Map<const Eigen::Matrix3d>(x.data() + base);
            graph_.nodeTranslation[j] = x.segment<3>(base + 9);
        }
    }

    Eigen::VectorXd identity_state() const
    {
        Eigen::VectorXd x = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(unknowns()));
        for (std::size_t j = 0; j < graph_.node_count(); ++j) {
            const auto base = static_cast<Eigen::Index>(12 * j);
            x(base + 0) = x(base + 4) = x(base + 8) = 1.0;
        }
        return x;
    }

    Evaluation evaluate(const Eigen::VectorXd& x)
    {
        set_state(x);
        Evaluation ev;
        ev.deformed = graph_.deform(templ_.vertices);
        geometry::TriMesh deformedMesh;
        deformedMesh.vertices = ev.deformed;
        deformedMesh.triangles = templ_.triangles;
        const auto normals = geometry::vertex_normals(deformedMesh);
        const double cosLimit = std::cos(config_.maxNormalAngleDeg * M_PI / 180.0);
        const double tau2 = config_.maxDistance * config_.maxDistance;
        ev.corr.resize(ev.deformed.size());
        const bool p2plane = target_.has_normals();

        const double fit = deterministic_sum<double>(0, ev.deformed.size(), 256, 0.0, [&](std::size_t i) {
            const auto hit = tree_.nearest(ev.deformed[i]);
            Correspondence c;
            c.point = target_.points[static_cast<std::size_t>(hit.index)];
            c.valid = hit.squaredDistance <= tau2;
            if (p2plane) {
                c.normal = target_.normals[static_cast<std::size_t>(hit.index)];
                if (c.normal.dot(normals[i]) < cosLimit) {
                    c.valid = false;
                }
            }
            ev.corr[i] = c;
            if (!c.valid) {
                return config_.wFit * tau2;
            }
            const Vec3 diff = ev.deformed[i] - c.point;
            if (p2plane) {
                const double pl = c.normal.dot(diff);
                return config_.wFit * (pl * pl + config_.wPointToPoint * diff.squaredNorm());
            }
            return config_.wFit * diff.squaredNorm();
        });
        ev.energy = fit + regulariser_energy() + landmark_energy(ev.deformed);
        return ev;
    }

    double regulariser_energy() const
    {
        double rigid = 0.0, smooth = 0.0;
        for (std::size_t j = 0; j < graph_.node_count(); ++j) {
            rigid += (graph_.nodeAffine[j].transpose() * graph_.nodeAffine[j] - Eigen::Matrix3d::Identity()).squaredNorm();
        }
        for (const auto& [a, b] : graph_.nodeEdges) {
            for (int dir = 0; dir < 2; ++dir) {
                const auto j = static_cast<std::size_t>(dir == 0 ? a : b);
                const auto k = static_cast<std::size_t>(dir == 0 ? b : a);
                const Vec3 e = graph_.nodeAffine[j] * (graph_.nodePositions[k] - graph_.nodePositions[j]) + graph_.nodePositions[j] +
                               graph_.nodeTranslation[j] - graph_.nodePositions[k] - graph_.nodeTranslation[k];
                smooth += e.squaredNorm();
            }
        }
        return config_.wRigid * rigid + config_.wSmooth * smooth;
    }

    double landmark_energy(const std::vector<Vec3>& deformed) const
    {
        double e = 0.0;
        for (const auto& [idx, p] : landmarks_) {
            e += (deformed[static_cast<std::size_t>(idx)] - p).squaredNorm();
        }
        return config_.wLandmark * e;
    }

    /// Assembles J^T J and J^T r of the linearised problem at the current state.
    void linearise(const Evaluation& ev, Eigen::SparseMatrix<double>& jtj, Eigen::VectorXd& jtr)
    {
        std::vector<Eigen::Triplet<double>> trip;
        std::vector<double> rhs;
        int row = 0;
        const bool p2plane = target_.has_normals();

        auto add_vertex_row = [&](std::size_t i, const Vec3& dir, double weight, double residual) {
            const double sw = std::sqrt(weight);
            for (const auto& [j, w] : graph_.vertexWeights[i]) {
                const auto ju = static_cast<std::size_t>(j);
                const Vec3 d = templ_.vertices[i] - graph_.nodePositions[ju];
                const int base = 12 * j;
                for (int r = 0; r < 3; ++r) {
                    if (dir[r] == 0.0) continue;
                    for (int c = 0; c < 3; ++c) {
                        trip.emplace_back(row, base + 3 * c + r, sw * w * dir[r] * d[c]);
                    }
                    trip.emplace_back(row, base + 9 + r, sw * w * dir[r]);
                }
            }
            rhs.push_back(sw * residual);
            ++row;
        };

        for (std::size_t i = 0; i < ev.deformed.size(); ++i) {
            const auto& c = ev.corr[i];
            if (!c.valid) continue;
            const Vec3 diff = ev.deformed[i] - c.point;
            if (p2plane) {
                add_vertex_row(i, c.normal, config_.wFit, c.normal.dot(diff));
                for (int a = 0; a < 3; ++a) {
                    add_vertex_row(i, Vec3::Unit(a), config_.wFit * config_.wPointToPoint, diff[a]);
                }
            } else {
                for (int a = 0; a < 3; ++a) {
                    add_vertex_row(i, Vec3::Unit(a), config_.wFit, diff[a]);
                }
            }
        }
        for (const auto& [idx, p] : landmarks_) {
            const Vec3 diff = ev.deformed[static_cast<std::size_t>(idx)] - p;
            for (int a = 0; a < 3; ++a) {
                add_vertex_row(static_cast<std::size_t>(idx), Vec3::Unit(a), config_.wLandmark, diff[a]);
            }
        }
        const double swr = std::sqrt(config_.wRigid);
        for (std::size_t j = 0; j < graph_.node_count(); ++j) {
            const Eigen::Matrix3d& A = graph_.nodeAffine[j];
            const int base = static_cast<int>(12 * j);
            for (int a = 0; a < 3; ++a) {
                for (int b = a; b < 3; ++b) {
                    const double s = (a == b) ? 1.0 : std::sqrt(2.0);
                    const double res = A.col(a).dot(A.col(b)) - (a == b ? 1.0 : 0.0);
                    for (int r = 0; r < 3; ++r) {
                        if (a == b) {
                            trip.emplace_back(row, base + 3 * a + r, swr * s * 2.0 * A(r, a));
                        } else {
                            trip.emplace_back(row, base + 3 * a + r, swr * s * A(r, b));
                            trip.emplace_back(row, base + 3 * b + r, swr * s * A(r, a));
                        }
                    }
                    rhs.push_back(swr * s * res);
                    ++row;
                }
            }
        }
        const double sws = std::sqrt(config_.wSmooth);
        for (const auto& [ea, eb] : graph_.nodeEdges) {
            for (int dir = 0; dir < 2; ++dir) {
                const int j = dir == 0 ? ea : eb;
                const int k = dir == 0 ? eb : ea;
                const auto ju = static_cast<std::size_t>(j), ku = static_cast<std::size_t>(k);
                const Vec3 gkj = graph_.nodePositions[ku] - graph_.nodePositions[ju];
                const Vec3 e = graph_.nodeAffine[ju] * gkj + graph_.nodePositions[ju] + graph_.nodeTranslation[ju] -
                               graph_.nodePositions[ku] - graph_.nodeTranslation[ku];
                for (int r = 0; r < 3; ++r) {
                    for (int c = 0; c < 3; ++c) {
                        trip.emplace_back(row, 12 * j + 3 * c + r, sws * gkj[c]);
                    }
                    trip.emplace_back(row, 12 * j + 9 + r, sws);
                    trip.emplace_back(row, 12 * k + 9 + r, -sws);
                    rhs.push_back(sws * e[r]);
                    ++row;
                }
            }
        }
        Eigen::SparseMatrix<double> J(row, static_cast<Eigen::Index>(unknowns()));
        J.setFromTriplets(trip.begin(), trip.end());
        const Eigen::Map<const Eigen::VectorXd> r(rhs.data(), static_cast<Eigen::Index>(rhs.size()));
        jtj = J.transpose() * J;
        jtr = J.transpose() * r;
    }

private:
    const geometry::TriMesh& templ_;
    const ScanTarget& target_;
    NonrigidIcpConfig config_;
    KdTree tree_;
    DeformationGraph graph_;
    std::vector<std::pair<int, Vec3>> landmarks_;
};

} // namespace

NonrigidIcpResult nonrigid_icp(const geometry::TriMesh& templ, const geometry::LandmarkSet& templLandmarks,
                               const ScanTarget& target, const NonrigidIcpConfig& config)
{
    if (target.points.empty()) {
        throw Error("nonrigid_icp: empty target");
    }
    if (target.has_normals() && target.normals.size() != target.points.size()) {
        throw Error("nonrigid_icp: target normals do not match the point count");
    }
    IcpProblem problem(templ, templLandmarks, target, config);
    Eigen::VectorXd x = problem.identity_state();
    Evaluation current = problem.evaluate(x);

    NonrigidIcpResult result;
    result.energyTrace.push_back(current.energy);
    double damping = -1.0;
    for (int iter = 0; iter < config.maxOuterIters; ++iter) {
        Eigen::SparseMatrix<double> jtj;
        Eigen::VectorXd jtr;
        problem.linearise(current, jtj, jtr);
        if (jtr.norm() == 0.0) {
            result.converged = true;
            break;
        }
        if (damping < 0.0) {
            double maxDiag = 0.0;
            for (Eigen::Index k = 0; k < jtj.outerSize(); ++k) maxDiag = std::max(maxDiag, jtj.coeff(k, k));
            damping = 1e-4 * std::max(maxDiag, 1.0);
        }
        bool accepted = false;
        for (int attempt = 0; attempt < 10 && !accepted; ++attempt) {
            Eigen::SparseMatrix<double> lhs = jtj;
            for (Eigen::Index k = 0; k < lhs.outerSize(); ++k) lhs.coeffRef(k, k) += damping;
            Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> solver(lhs);
            if (solver.info() != Eigen::Success) {
                damping *= 10.0;
                continue;
            }
            const Eigen::VectorXd step = solver.solve(-jtr);
            const Eigen::VectorXd candidate = x + step;
            Evaluation next = problem.evaluate(candidate);
            if (next.energy < current.energy) {
                const double decrease = current.energy - next.energy;
                x = candidate;
                current = std::move(next);
                damping = std::max(damping / 3.0, 1e-12);
                accepted = true;
                result.energyTrace.push_back(current.energy);
                ++result.iterations;
                if (decrease <= config.relativeTolerance * std::max(result.energyTrace.front(), 1e-300)) {
                    result.converged = true;
                }
            } else {
                damping *= 5.0;
            }
        }
        if (!accepted) {
            // No descent direction left at this linearisation: a local minimum.
            result.converged = true;
        }
        if (result.converged) {
            break;
        }
    }
    problem.set_state(x);
    result.graph = problem.graph();
    result.mesh = templ;
    result.mesh.vertices = current.deformed;
    return result;
}

} // namespace facekit::registration
