/*
 * facekit - 3D face modelling, registration and fitting from synthetic and captured data.
 *
 * File: core/src/registration/kdtree.cpp
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
#include "facekit/registration/kdtree.hpp"

#include <algorithm>
#include <numeric>

namespace facekit::registration {

namespace {
constexpr int kLeafSize = 8;

bool closer(const KdTree::Hit& a, const KdTree::Hit& b)
{
    return a.squaredDistance < b.squaredDistance || (a.squaredDistance == b.squaredDistance && a.index < b.index);
}
} // namespace

KdTree::KdTree(std::span<const geometry::Vec3> points) : points_(points.begin(), points.end())
{
    order_.resize(points_.size());
    std::iota(order_.begin(), order_.end(), 0);
    if (!points_.empty()) {
        nodes_.reserve(2 * points_.size() / kLeafSize + 2);
        build(0, static_cast<int>(points_.size()), 0);
    }
}

int KdTree::build(int begin, int end, int depth)
{
    const int id = static_cast<int>(nodes_.size());
    nodes_.push_back({begin, end, -1, -1, -1, 0.0});
    if (end - begin <= kLeafSize) {
        return id;
    }
    geometry::Vec3 lo = points_[static_cast<std::size_t>(order_[static_cast<std::size_t>(begin)])], hi = lo;
    for (int i = begin; i < end; ++i) {
        lo = lo.cwiseMin(points_[static_cast<std::size_t>(order_[static_cast<std::size_t>(i)])]);
        hi = hi.cwiseMax(points_[static_cast<std::size_t>(order_[static_cast<std::size_t>(i)])]);
    }
    int axis;
    (hi - lo).maxCoeff(&axis);
    (void)depth;
    const int mid = (begin + end) / 2;
    std::nth_element(order_.begin() + begin, order_.begin() + mid, order_.begin() + end, [&](int a, int b) {
        const double pa = points_[static_cast<std::size_t>(a)][axis], pb = points_[static_cast<std::size_t>(b)][axis];
        return pa < pb || (pa == pb && a < b);
    });
    const double split = points_[static_cast<std::size_t>(order_[static_cast<std::size_t>(mid)])][axis];
    const int left = build(begin, mid, depth + 1);
    const int right = build(mid, end, depth + 1);
    nodes_[static_cast<std::size_t>(id)].left = left;
    nodes_[static_cast<std::size_t>(id)].right = right;
    nodes_[static_cast<std::size_t>(id)].axis = axis;
    nodes_[static_cast<std::size_t>(id)].split = split;
    return id;
}

void KdTree::search(int nodeId, const geometry::Vec3& q, std::vector<Hit>& best, int k) const
{
    const Node& node = nodes_[static_cast<std::size_t>(nodeId)];
    if (node.axis < 0) {
        for (int i = node.begin; i < node.end; ++i) {
            const int idx = order_[static_cast<std::size_t>(i)];
            const Hit h{idx, (points_[static_cast<std::size_t>(idx)] - q).squaredNorm()};
            if (static_cast<int>(best.size()) < k) {
                best.insert(std::upper_bound(best.begin(), best.end(), h, closer), h);
            } else if (closer(h, best.back())) {
                best.pop_back();
                best.insert(std::upper_bound(best.begin(), best.end(), h, closer), h);
            }
        }
        return;
    }
    const double diff = q[node.axis] - node.split;
    const int first = diff < 0.0 ? node.left : node.right;
    const int second = diff < 0.0 ? node.right : node.left;
    search(first, q, best, k);
    if (static_cast<int>(best.size()) < k || diff * diff <= best.back().squaredDistance) {
        search(second, q, best, k);
    }
}

KdTree::Hit KdTree::nearest(const geometry::Vec3& query) const
{
    if (points_.empty()) {
        return {};
    }
    std::vector<Hit> best;
    best.reserve(2);
    search(0, query, best, 1);
    return best.front();
}

std::vector<KdTree::Hit> KdTree::k_nearest(const geometry::Vec3& query, int k) const
{
    std::vector<Hit> best;
    if (points_.empty() || k <= 0) {
        return best;
    }
    best.reserve(static_cast<std::size_t>(k) + 1);
    search(0, query, best, k);
    return best;
}

} // namespace facekit::registration
