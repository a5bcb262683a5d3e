/*
 * facekit - 3D face modelling, registration and fitting from synthetic and captured data.
 *
 * File: core/src/morphable/base_model.cpp
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
#include "facekit/morphable/base_model.hpp"

#include "facekit/common/error.hpp"

namespace facekit::morphable {

void BaseModel::validate() const
{
    const auto dim = static_cast<Eigen::Index>(3 * vertex_count());
    auto check = [&](const PcaModel& m, const char* name) {
        if (m.dimension() != dim || m.components.rows() != dim || m.singularValues.size() != m.rank()) {
            throw Error(std::string(name) + " model does not match the template vertex count " + std::to_string(vertex_count()));
        }
    };
    check(shape, "shape");
    check(texture, "texture");
    check(expression, "expression");
    if (!expression.mean.isZero(0.0)) {
        throw Error("expression model mean must be zero");
    }
}

BaseParams BaseParams::zeros(const BaseModel& model)
{
    return {Eigen::VectorXd::Zero(model.shape.rank()), Eigen::VectorXd::Zero(model.texture.rank()),
            Eigen::VectorXd::Zero(model.expression.rank())};
}

namespace {

void check_lengths(const BaseModel& model, const BaseParams& params)
{
    if (params.shape.size() != model.shape.rank() || params.texture.size() != model.texture.rank() ||
        params.expression.size() != model.expression.rank()) {
        throw Error("parameter lengths (" + std::to_string(params.shape.size()) + ", " + std::to_string(params.texture.size()) +
                    ", " + std::to_string(params.expression.size()) + ") do not match the model (" +
                    std::to_string(model.shape.rank()) + ", " + std::to_string(model.texture.rank()) + ", " +
                    std::to_string(model.expression.rank()) + ")");
    }
}

} // namespace

Eigen::VectorXd eval_geometry(const BaseModel& model, const BaseParams& params, bool withExpression)
{
    check_lengths(model, params);
    Eigen::VectorXd g = model.shape.reconstruct(params.shape);
    if (withExpression) {
        g += model.expression.components * model.expression.stddev().cwiseProduct(params.expression);
    }
    return g;
}

Eigen::VectorXd eval_texture(const BaseModel& model, const BaseParams& params)
{
    check_lengths(model, params);
    return model.texture.reconstruct(params.texture);
}

geometry::TriMesh eval_base(const BaseModel& model, const BaseParams& params)
{
    const Eigen::VectorXd g = eval_geometry(model, params, true);
    const Eigen::VectorXd t = eval_texture(model, params);
    geometry::TriMesh mesh;
    mesh.triangles = model.templ.mesh().triangles;
    mesh.uvs = model.templ.mesh().uvs;
    mesh.vertices = geometry::unflatten(g);
    mesh.colors = geometry::unflatten(t.cwiseMax(0.0).cwiseMin(1.0));
    return mesh;
}

BaseModel build_base_model(const geometry::TemplateAtlas& templ, std::span<const geometry::TriMesh> coarse,
                           std::span<const DetailedIdentity> detailed, const BuildOptions& options)
{
    const auto& topo = templ.mesh();
    auto conform = [&](const geometry::TriMesh& mesh, const std::string& what) {
        if (!geometry::same_topology(mesh, topo)) {
            throw Error(what + " does not share the template topology");
        }
    };
    std::vector<Eigen::VectorXd> detailShapes, detailColors, offsets;
    for (std::size_t i = 0; i < detailed.size(); ++i) {
        conform(detailed[i].neutral, "detailed identity " + std::to_string(i));
        const Eigen::VectorXd neutral = geometry::flatten(detailed[i].neutral.vertices);
        detailShapes.push_back(neutral);
        if (detailed[i].neutral.has_colors()) {
            detailColors.push_back(geometry::flatten(detailed[i].neutral.colors));
        }
        for (std::size_t e = 0; e < detailed[i].expressions.size(); ++e) {
            conform(detailed[i].expressions[e], "expression " + std::to_string(e) + " of detailed identity " + std::to_string(i));
            offsets.push_back(geometry::flatten(detailed[i].expressions[e].vertices) - neutral);
        }
    }
    if (offsets.empty()) {
        throw Error("the detailed set provides no expression scans");
    }

    BaseModel model;
    model.templ = templ;
    if (!coarse.empty()) {
        std::vector<Eigen::VectorXd> shapes, colors;
        for (std::size_t i = 0; i < coarse.size(); ++i) {
            conform(coarse[i], "coarse mesh " + std::to_string(i));
            shapes.push_back(geometry::flatten(coarse[i].vertices));
            if (!coarse[i].has_colors()) {
                throw Error("coarse mesh " + std::to_string(i) + " has no vertex colours");
            }
            colors.push_back(geometry::flatten(coarse[i].colors));
        }
        const PcaModel coarseShape = build_pca(shapes, options.shapeComponents, PcaChannel::Shape);
        if (options.detailShapeComponents > 0) {
            const PcaModel detailShape = build_pca(detailShapes, options.detailShapeComponents, PcaChannel::Shape);
            model.shape = merge_shape_basis(coarseShape, detailShape).model;
        } else {
            model.shape = coarseShape;
        }
        model.texture = build_pca(colors, options.textureComponents, PcaChannel::Texture);
    } else {
        model.shape = build_pca(detailShapes, options.shapeComponents, PcaChannel::Shape);
        if (detailColors.size() != detailShapes.size()) {
            throw Error("detailed neutral meshes need vertex colours to build a texture model");
        }
        model.texture = build_pca(detailColors, options.textureComponents, PcaChannel::Texture);
    }
    model.expression = build_pca(offsets, options.expressionComponents, PcaChannel::ExpressionOffset);
    model.validate();
    return model;
}

} // namespace facekit::morphable
