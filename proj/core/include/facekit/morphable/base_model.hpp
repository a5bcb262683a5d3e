/*
 * facekit - 3D face modelling, registration and fitting from synthetic and captured data.
 *
 * File: core/include/facekit/morphable/base_model.hpp
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
#include "facekit/morphable/pca.hpp"

#include <filesystem>

namespace facekit::morphable {

/// Shape, texture and expression PCA models sharing the template topology.
/// The expression model has an all-zero mean.
struct BaseModel
{
    PcaModel shape;
    PcaModel texture;
    PcaModel expression;
    geometry::TemplateAtlas templ;

    std::size_t vertex_count() const { return templ.vertex_count(); }
    void validate() const;
};

/// Coefficients in standard-deviation units.
struct BaseParams
{
    Eigen::VectorXd shape;
    Eigen::VectorXd texture;
    Eigen::VectorXd expression;

    static BaseParams zeros(const BaseModel& model);
    bool finite() const { return shape.allFinite() && texture.allFinite() && expression.allFinite(); }
};

/// Flattened vertex positions: mean + shape offsets (+ expression offsets when withExpression).
Eigen::VectorXd eval_geometry(const BaseModel& model, const BaseParams& params, bool withExpression = true);
/// Flattened per-vertex colours before clamping.
Eigen::VectorXd eval_texture(const BaseModel& model, const BaseParams& params);

/// Mesh with template topology and uvs, vertices from the shape and
/// expression models and colours from the texture model clamped to [0, 1].
geometry::TriMesh eval_base(const BaseModel& model, const BaseParams& params);

/// Registered scans of one identity from the detailed dataset; expressions
/// exclude the neutral one.
struct DetailedIdentity
{
    geometry::TriMesh neutral;
    std::vector<geometry::TriMesh> expressions;
};

struct BuildOptions
{
    int shapeComponents = 100;      ///< from the coarse set (or the detailed set when it is absent)
    int detailShapeComponents = 20; ///< detailed components appended to the coarse basis
    int textureComponents = 200;
    int expressionComponents = 64;
};

/// Builds the hybrid model: shape PCA on the coarse neutral meshes merged with
/// the leading detailed-set shape components, texture PCA on the coarse
/// colours and expression PCA on the detailed (expression - neutral) offsets.
/// With no coarse meshes the shape and texture come from the detailed
/// neutrals alone (shapeComponents of them) and nothing is merged.
BaseModel build_base_model(const geometry::TemplateAtlas& templ, std::span<const geometry::TriMesh> coarse,
                           std::span<const DetailedIdentity> detailed, const BuildOptions& options);

/// Container "FVKM" version 1, little-endian; see README for the layout.
void save_model(const BaseModel& model, const std::filesystem::path& path);
BaseModel load_model(const std::filesystem::path& path);

} // namespace facekit::morphable
