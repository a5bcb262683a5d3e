/*
 * facekit - 3D face modelling, registration and fitting from synthetic and captured data.
 *
 * File: core/include/facekit/geometry/mesh_io.hpp
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
#include "facekit/geometry/uv.hpp"

#include <filesystem>

namespace facekit::geometry {

/// Loads an OBJ (positions, optional per-vertex colours, uvs, faces) or PLY
/// (ascii or binary little-endian; positions, optional normals, colours and
/// uvs) mesh. When `conformTo` is given, the loaded topology must match it.
TriMesh load_mesh(const std::filesystem::path& path, const TriMesh* conformTo = nullptr);

/// Writes OBJ or PLY depending on the extension. PLY is written as binary
/// little-endian float32, which round-trips float32 values bitwise.
void save_mesh(const TriMesh& mesh, const std::filesystem::path& path);

/// Point cloud with optional per-point normals; faces in the file are ignored.
struct PointCloud
{
    std::vector<Vec3> points;
    std::vector<Vec3> normals;
    std::vector<Vec3> colors;
};

PointCloud load_point_cloud(const std::filesystem::path& path);
void save_point_cloud(const PointCloud& cloud, const std::filesystem::path& path);

/// JSON array of {vertexIndex, x, y} (2D) or {vertexIndex, x, y, z} (3D).
LandmarkSet load_landmarks(const std::filesystem::path& path);
void save_landmarks(const LandmarkSet& landmarks, const std::filesystem::path& path);

} // namespace facekit::geometry
