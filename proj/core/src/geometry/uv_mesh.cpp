/*
 * facekit - 3D face modelling, registration and fitting from synthetic and captured data.
 *
 * File: core/src/geometry/uv_mesh.cpp
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
#include "facekit/common/error.hpp"
#include "facekit/geometry/uv.hpp"

namespace facekit::geometry {

UvGridMesh uv_grid_mesh(const UVMap& geometry)
{
    if (geometry.channels != 3) {
        throw Error("uv_grid_mesh: expected a 3-channel geometry map");
    }
    const int w = geometry.width, h = geometry.height;
    std::vector<std::uint8_t> used(geometry.texel_count(), 0);
    auto quad_ok = [&](int x, int y) {
        return geometry.masked(x, y) && geometry.masked(x + 1, y) && geometry.masked(x, y + 1) && geometry.masked(x + 1, y + 1);
    };
    for (int y = 0; y + 1 < h; ++y) {
        for (int x = 0; x + 1 < w; ++x) {
            if (quad_ok(x, y)) {
                used[geometry.index(x, y)] = used[geometry.index(x + 1, y)] = 1;
                used[geometry.index(x, y + 1)] = used[geometry.index(x + 1, y + 1)] = 1;
            }
        }
    }
    UvGridMesh out;
    std::vector<int> vertexOfTexel(geometry.texel_count(), -1);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            const std::size_t t = geometry.index(x, y);
            if (!used[t]) continue;
            vertexOfTexel[t] = static_cast<int>(out.mesh.vertices.size());
            out.mesh.vertices.emplace_back(geometry.at(x, y, 0), geometry.at(x, y, 1), geometry.at(x, y, 2));
            out.mesh.uvs.emplace_back((x + 0.5) / w, (y + 0.5) / h);
            out.texelOfVertex.push_back(t);
        }
    }
    for (int y = 0; y + 1 < h; ++y) {
        for (int x = 0; x + 1 < w; ++x) {
            if (!quad_ok(x, y)) continue;
            const int a = vertexOfTexel[geometry.index(x, y)];
            const int b = vertexOfTexel[geometry.index(x + 1, y)];
            const int c = vertexOfTexel[geometry.index(x + 1, y + 1)];
            const int d = vertexOfTexel[geometry.index(x, y + 1)];
            out.mesh.triangles.push_back({a, b, c});
            out.mesh.triangles.push_back({a, c, d});
        }
    }
    return out;
}

} // namespace facekit::geometry
