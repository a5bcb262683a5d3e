/*
 * facekit - 3D face modelling, registration and fitting from synthetic and captured data.
 *
 * File: core/src/morphable/model_io.cpp
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
#include "facekit/common/binary_io.hpp"
#include "facekit/common/error.hpp"
#include "facekit/morphable/base_model.hpp"

#include <fstream>

namespace facekit::morphable {

namespace {

constexpr char kMagic[4] = {'F', 'V', 'K', 'M'};
constexpr std::uint32_t kVersion = 1;

void write_pca(std::ostream& out, const PcaModel& m)
{
    binio::write_u32(out, static_cast<std::uint32_t>(m.sampleCount));
    binio::write_f32(out, std::span<const double>(m.mean.data(), static_cast<std::size_t>(m.mean.size())));
    binio::write_f32(out, std::span<const double>(m.singularValues.data(), static_cast<std::size_t>(m.singularValues.size())));
    // Components column by column (each component contiguous).
    binio::write_f32(out, std::span<const double>(m.components.data(), static_cast<std::size_t>(m.components.size())));
}

PcaModel read_pca(binio::Reader& in, std::size_t dim, std::size_t rank)
{
    PcaModel m;
    m.sampleCount = static_cast<int>(in.u32());
    const auto mean = in.f32(dim);
    const auto sv = in.f32(rank);
    const auto comps = in.f32(dim * rank);
    m.mean = Eigen::Map<const Eigen::VectorXd>(mean.data(), static_cast<Eigen::Index>(dim));
    m.singularValues = Eigen::Map<const Eigen::VectorXd>(sv.data(), static_cast<Eigen::Index>(rank));
    m.components = Eigen::Map<const Eigen::MatrixXd>(comps.data(), static_cast<Eigen::Index>(dim), static_cast<Eigen::Index>(rank));
    return m;
}

} // namespace

void save_model(const BaseModel& model, const std::filesystem::path& path)
{
    model.validate();
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw Error("cannot write " + path.string());
    }
    const auto& mesh = model.templ.mesh();
    out.write(kMagic, 4);
    binio::write_u32(out, kVersion);
    binio::write_u32(out, static_cast<std::uint32_t>(model.vertex_count()));
    binio::write_u32(out, static_cast<std::uint32_t>(model.shape.rank()));
    binio::write_u32(out, static_cast<std::uint32_t>(model.texture.rank()));
    binio::write_u32(out, static_cast<std::uint32_t>(model.expression.rank()));

    // Template block: triangle count, landmark count, positions, uvs, triangles, landmark indices.
    binio::write_u32(out, static_cast<std::uint32_t>(mesh.triangles.size()));
    binio::write_u32(out, static_cast<std::uint32_t>(model.templ.landmarks().size()));
    std::vector<double> buf;
    buf.reserve(mesh.vertices.size() * 3);
    for (const auto& v : mesh.vertices) buf.insert(buf.end(), {v.x(), v.y(), v.z()});
    binio::write_f32(out, buf);
    buf.clear();
    for (const auto& t : mesh.uvs) buf.insert(buf.end(), {t.x(), t.y()});
    binio::write_f32(out, buf);
    for (const auto& t : mesh.triangles) {
        for (int idx : t) binio::write_u32(out, static_cast<std::uint32_t>(idx));
    }
    for (int idx : model.templ.landmarks().vertexIndices) binio::write_u32(out, static_cast<std::uint32_t>(idx));

    write_pca(out, model.shape);
    write_pca(out, model.texture);
    write_pca(out, model.expression);
    if (!out) {
        throw Error("failed writing " + path.string());
    }
}

BaseModel load_model(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw Error("cannot open " + path.string());
    }
    auto reader = binio::Reader::from_stream(in, path.string());
    char magic[4];
    reader.read_raw(magic, 4);
    if (!std::equal(magic, magic + 4, kMagic)) {
        throw ParseError(path.string() + ": not a model container (bad magic)");
    }
    const auto version = reader.u32();
    if (version != kVersion) {
        throw ParseError(path.string() + ": unsupported model container version " + std::to_string(version));
    }
    const std::size_t n = reader.u32();
    const std::size_t m = reader.u32();
    const std::size_t k = reader.u32();
    const std::size_t l = reader.u32();
    const std::size_t triCount = reader.u32();
    const std::size_t lmCount = reader.u32();

    geometry::TriMesh mesh;
    const auto pos = reader.f32(3 * n);
    const auto uvs = reader.f32(2 * n);
    mesh.vertices.resize(n);
    mesh.uvs.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        mesh.vertices[i] = {pos[3 * i], pos[3 * i + 1], pos[3 * i + 2]};
        mesh.uvs[i] = {uvs[2 * i], uvs[2 * i + 1]};
    }
    mesh.triangles.resize(triCount);
    for (auto& t : mesh.triangles) {
        for (int& idx : t) idx = static_cast<int>(reader.u32());
    }
    geometry::LandmarkSet landmarks;
    for (std::size_t i = 0; i < lmCount; ++i) landmarks.vertexIndices.push_back(static_cast<int>(reader.u32()));

    BaseModel model;
    model.shape = read_pca(reader, 3 * n, m);
    model.texture = read_pca(reader, 3 * n, k);
    model.expression = read_pca(reader, 3 * n, l);
    if (reader.position() != reader.size()) {
        throw ParseError(path.string() + ": " + std::to_string(reader.size() - reader.position()) + " trailing bytes");
    }
    model.templ = geometry::TemplateAtlas(std::move(mesh), std::move(landmarks));
    model.validate();
    return model;
}

} // namespace facekit::morphable
