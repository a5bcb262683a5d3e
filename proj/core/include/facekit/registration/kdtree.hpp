/*
 * facekit - 3D face modelling, registration and fitting from synthetic and captured data.
 *
 * File: core/include/facekit/registration/kdtree.hpp
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

#include "facekit/geometry/mesh.hpp"

#include <span>
#include <vector>

namespace facekit::registration {

/// Static 3D k-d tree for nearest-neighbour queries. Immutable after
/// construction; concurrent queries are safe.
class KdTree
{
public:
    KdTree() = default;
    explicit KdTree(std::span<const geometry::Vec3> points);

    struct Hit
    {
        int index = -1;
        double squaredDistance = 0.0;
    };

    /// Nearest point; ties are broken by the lower point index.
    Hit nearest(const geometry::Vec3& query) const;
    /// k nearest points sorted by distance (then index).
    std::vector<Hit> k_nearest(const geometry::Vec3& query, int k) const;

    std::size_t size() const { return points_.size(); }
    const geometry::Vec3& point(int i) const { return points_[static_cast<std::size_t>(i)]; }

private:
    struct Node
    {
        int begin = 0, end = 0; ///< leaf range into order_
        int left = -1, right = -1;
        int axis = -1;
        double split = 0.0;
    };

    int build(int begin, int end, int depth);
    void search(int node, const geometry::Vec3& q, std::vector<Hit>& best, int k) const;

    std::vector<geometry::Vec3> points_;
    std::vector<int> order_;
    std::vector<Node> nodes_;
};

} // namespace facekit::registration
