/*
 * facekit - 3D face modelling, registration and fitting from synthetic and captured data.
 *
 * File: core/src/geometry/mesh_io.cpp
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
#include "facekit/geometry/mesh_io.hpp"

#include "facekit/common/error.hpp"

#include <json.hpp>

#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>
#include <string>

namespace facekit::geometry {

namespace {

std::string lower_extension(const std::filesystem::path& path)
{
    std::string ext = path.extension().string();
    for (auto& ch : ext) {
        ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
    }
    return ext;
}

struct PlyData
{
    std::vector<Vec3> positions;
    std::vector<Vec3> normals;
    std::vector<Vec3> colors;
    std::vector<Vec2> uvs;
    std::vector<Triangle> triangles;
};

enum class PlyType { Int8, UInt8, Int16, UInt16, Int32, UInt32, Float32, Float64 };

PlyType parse_ply_type(const std::string& name, int line)
{
    if (name == "char" || name == "int8") return PlyType::Int8;
    if (name == "uchar" || name == "uint8") return PlyType::UInt8;
    if (name == "short" || name == "int16") return PlyType::Int16;
    if (name == "ushort" || name == "uint16") return PlyType::UInt16;
    if (name == "int" || name == "int32") return PlyType::Int32;
    if (name == "uint" || name == "uint32") return PlyType::UInt32;
    if (name == "float" || name == "float32") return PlyType::Float32;
    if (name == "double" || name == "float64") return PlyType::Float64;
    throw ParseError("ply header line " + std::to_string(line) + ": unknown type '" + name + "'");
}

std::size_t ply_size(PlyType t)
{
    switch (t) {
    case PlyType::Int8:
    case PlyType::UInt8: return 1;
    case PlyType::Int16:
    case PlyType::UInt16: return 2;
    case PlyType::Int32:
    case PlyType::UInt32:
    case PlyType::Float32: return 4;
    case PlyType::Float64: return 8;
    }
    return 0;
}

struct PlyProperty
{
    std::string name;
    PlyType type = PlyType::Float32;
    bool isList = false;
    PlyType countType = PlyType::UInt8;
};

struct PlyElement
{
    std::string name;
    std::size_t count = 0;
    std::vector<PlyProperty> properties;
};

double read_binary(const char*& cursor, const char* end, PlyType t, const std::string& what)
{
    const std::size_t n = ply_size(t);
    if (cursor + n > end) {
        throw ParseError("ply: truncated binary data while reading " + what);
    }
    double value = 0.0;
    switch (t) {
    case PlyType::Int8: { std::int8_t v; std::memcpy(&v, cursor, 1); value = v; break; }
    case PlyType::UInt8: { std::uint8_t v; std::memcpy(&v, cursor, 1); value = v; break; }
    case PlyType::Int16: { std::int16_t v; std::memcpy(&v, cursor, 2); value = v; break; }
    case PlyType::UInt16: { std::uint16_t v; std::memcpy(&v, cursor, 2); value = v; break; }
    case PlyType::Int32: { std::int32_t v; std::memcpy(&v, cursor, 4); value = v; break; }
    case PlyType::UInt32: { std::uint32_t v; std::memcpy(&v, cursor, 4); value = v; break; }
    case PlyType::Float32: { float v; std::memcpy(&v, cursor, 4); value = v; break; }
    case PlyType::Float64: { double v; std::memcpy(&v, cursor, 8); value = v; break; }
    }
    cursor += n;
    return value;
}

PlyData read_ply(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw Error("cannot open " + path.string());
    }
    std::string content((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    const std::string where = path.string();

    // Header.
    std::size_t pos = 0;
    int line = 0;
    auto next_line = [&]() -> std::string {
        const std::size_t nl = content.find('\n', pos);
        if (nl == std::string::npos) {
            throw ParseError(where + ": unterminated ply header at line " + std::to_string(line + 1));
        }
        std::string l = content.substr(pos, nl - pos);
        if (!l.empty() && l.back() == '\r') {
            l.pop_back();
        }
        pos = nl + 1;
        ++line;
        return l;
    };
    if (next_line() != "ply") {
        throw ParseError(where + ": line 1: missing 'ply' magic");
    }
    bool binary = false;
    std::vector<PlyElement> elements;
    for (;;) {
        const std::string l = next_line();
        std::istringstream ss(l);
        std::string keyword;
        ss >> keyword;
        if (keyword == "end_header") {
            break;
        }
        if (keyword == "format") {
            std::string fmt;
            ss >> fmt;
            if (fmt == "ascii") {
                binary = false;
            } else if (fmt == "binary_little_endian") {
                binary = true;
            } else {
                throw ParseError(where + ": line " + std::to_string(line) + ": unsupported ply format '" + fmt + "'");
            }
        } else if (keyword == "element") {
            PlyElement e;
            if (!(ss >> e.name >> e.count)) {
                throw ParseError(where + ": line " + std::to_string(line) + ": malformed element declaration");
            }
            elements.push_back(std::move(e));
        } else if (keyword == "property") {
            if (elements.empty()) {
                throw ParseError(where + ": line " + std::to_string(line) + ": property before element");
            }
            PlyProperty p;
            std::string type;
            ss >> type;
            if (type == "list") {
                std::string countType, itemType;
                ss >> countType >> itemType >> p.name;
                p.isList = true;
                p.countType = parse_ply_type(countType, line);
                p.type = parse_ply_type(itemType, line);
            } else {
                p.type = parse_ply_type(type, line);
                ss >> p.name;
            }
            if (p.name.empty()) {
                throw ParseError(where + ": line " + std::to_string(line) + ": property without name");
            }
            elements.back().properties.push_back(std::move(p));
        } else if (keyword == "comment" || keyword == "obj_info" || keyword.empty()) {
            continue;
        } else {
            throw ParseError(where + ": line " + std::to_string(line) + ": unexpected header keyword '" + keyword + "'");
        }
    }

    PlyData data;
    const char* cursor = content.data() + pos;
    const char* end = content.data() + content.size();
    std::istringstream ascii(binary ? std::string() : content.substr(pos));
    int asciiLine = line;

    for (const auto& element : elements) {
        const bool isVertex = element.name == "vertex";
        const bool isFace = element.name == "face";
        for (std::size_t i = 0; i < element.count; ++i) {
            std::vector<double> scalars(element.properties.size(), 0.0);
            std::vector<int> listItems;
            std::istringstream row;
            if (!binary) {
                std::string text;
                do {
                    if (!std::getline(ascii, text)) {
                        throw ParseError(where + ": line " + std::to_string(asciiLine + 1) + ": unexpected end of file in element '" +
                                         element.name + "'");
                    }
                    ++asciiLine;
                } while (text.find_first_not_of(" \t\r") == std::string::npos);
                row.str(text);
            }
            for (std::size_t p = 0; p < element.properties.size(); ++p) {
                const auto& prop = element.properties[p];
                auto fetch = [&](PlyType t) -> double {
                    if (binary) {
                        return read_binary(cursor, end, t, element.name);
                    }
                    double v;
                    if (!(row >> v)) {
                        throw ParseError(where + ": line " + std::to_string(asciiLine) + ": malformed value for property '" +
                                         prop.name + "'");
                    }
                    return v;
                };
                if (prop.isList) {
                    const auto count = static_cast<std::size_t>(fetch(prop.countType));
                    for (std::size_t k = 0; k < count; ++k) {
                        const double v = fetch(prop.type);
                        if (isFace && (prop.name == "vertex_indices" || prop.name == "vertex_index")) {
                            listItems.push_back(static_cast<int>(v));
                        }
                    }
                } else {
                    scalars[p] = fetch(prop.type);
                }
            }
            if (isVertex) {
                Vec3 position = Vec3::Zero(), normal = Vec3::Zero(), color = Vec3::Zero();
                Vec2 uv = Vec2::Zero();
                bool hasNormal = false, hasColor = false, hasUv = false;
                for (std::size_t p = 0; p < element.properties.size(); ++p) {
                    const auto& prop = element.properties[p];
                    const double v = scalars[p];
                    const double colorScale = (prop.type == PlyType::UInt8) ? 1.0 / 255.0 : 1.0;
                    if (prop.name == "x") position.x() = v;
                    else if (prop.name == "y") position.y() = v;
                    else if (prop.name == "z") position.z() = v;
                    else if (prop.name == "nx") { normal.x() = v; hasNormal = true; }
                    else if (prop.name == "ny") { normal.y() = v; hasNormal = true; }
                    else if (prop.name == "nz") { normal.z() = v; hasNormal = true; }
                    else if (prop.name == "red") { color.x() = v * colorScale; hasColor = true; }
                    else if (prop.name == "green") { color.y() = v * colorScale; hasColor = true; }
                    else if (prop.name == "blue") { color.z() = v * colorScale; hasColor = true; }
                    else if (prop.name == "u" || prop.name == "s" || prop.name == "texture_u") { uv.x() = v; hasUv = true; }
                    else if (prop.name == "v" || prop.name == "t" || prop.name == "texture_v") { uv.y() = v; hasUv = true; }
                }
                data.positions.push_back(position);
                if (hasNormal) data.normals.push_back(normal);
                if (hasColor) data.colors.push_back(color);
                if (hasUv) data.uvs.push_back(uv);
            } else if (isFace) {
                if (listItems.size() < 3) {
                    throw ParseError(where + ": face " + std::to_string(i) + " has fewer than 3 vertices");
                }
                for (std::size_t k = 1; k + 1 < listItems.size(); ++k) {
                    data.triangles.push_back({listItems[0], listItems[k], listItems[k + 1]});
                }
            }
        }
    }
    return data;
}

TriMesh read_obj(const std::filesystem::path& path)
{
    std::ifstream in(path);
    if (!in) {
        throw Error("cannot open " + path.string());
    }
    TriMesh mesh;
    std::vector<Vec2> texcoords;
    std::vector<int> uvOfVertex;
    std::string text;
    int line = 0;
    auto fail = [&](const std::string& msg) { throw ParseError(path.string() + ": line " + std::to_string(line) + ": " + msg); };
    while (std::getline(in, text)) {
        ++line;
        std::istringstream ss(text);
        std::string tag;
        if (!(ss >> tag) || tag[0] == '#') {
            continue;
        }
        if (tag == "v") {
            Vec3 p;
            if (!(ss >> p.x() >> p.y() >> p.z())) {
                fail("malformed vertex");
            }
            Vec3 c;
            if (ss >> c.x() >> c.y() >> c.z()) {
                mesh.colors.push_back(c);
            }
            mesh.vertices.push_back(p);
        } else if (tag == "vt") {
            Vec2 t;
            if (!(ss >> t.x() >> t.y())) {
                fail("malformed texture coordinate");
            }
            texcoords.push_back(t);
        } else if (tag == "f") {
            std::vector<int> vidx, tidx;
            std::string token;
            while (ss >> token) {
                int v = 0, t = 0;
                const auto slash = token.find('/');
                try {
                    v = std::stoi(token.substr(0, slash));
                    if (slash != std::string::npos) {
                        const auto rest = token.substr(slash + 1);
                        const auto slash2 = rest.find('/');
                        const auto ts = rest.substr(0, slash2);
                        if (!ts.empty()) {
                            t = std::stoi(ts);
                        }
                    }
                } catch (const std::exception&) {
                    fail("malformed face token '" + token + "'");
                }
                if (v < 0) v = static_cast<int>(mesh.vertices.size()) + v + 1;
                if (t < 0) t = static_cast<int>(texcoords.size()) + t + 1;
                vidx.push_back(v - 1);
                tidx.push_back(t - 1);
            }
            if (vidx.size() < 3) {
                fail("face with fewer than 3 vertices");
            }
            for (std::size_t k = 0; k < vidx.size(); ++k) {
                if (tidx[k] >= 0) {
                    if (uvOfVertex.size() <= static_cast<std::size_t>(std::max(vidx[k], 0))) {
                        uvOfVertex.resize(static_cast<std::size_t>(std::max(vidx[k], 0)) + 1, -1);
                    }
                    if (vidx[k] >= 0) {
                        uvOfVertex[static_cast<std::size_t>(vidx[k])] = tidx[k];
                    }
                }
            }
            for (std::size_t k = 1; k + 1 < vidx.size(); ++k) {
                mesh.triangles.push_back({vidx[0], vidx[k], vidx[k + 1]});
            }
        }
    }
    if (!mesh.colors.empty() && mesh.colors.size() != mesh.vertices.size()) {
        throw ParseError(path.string() + ": only some vertices carry colours");
    }
    if (!texcoords.empty()) {
        mesh.uvs.assign(mesh.vertices.size(), Vec2::Zero());
        for (std::size_t v = 0; v < mesh.vertices.size() && v < uvOfVertex.size(); ++v) {
            const int t = uvOfVertex[v];
            if (t >= static_cast<int>(texcoords.size())) {
                throw ParseError(path.string() + ": texture coordinate index out of range for vertex " + std::to_string(v));
            }
            if (t >= 0) {
                mesh.uvs[v] = texcoords[static_cast<std::size_t>(t)];
            }
        }
    }
    return mesh;
}

void write_obj(const TriMesh& mesh, const std::filesystem::path& path)
{
    std::ofstream out(path);
    if (!out) {
        throw Error("cannot write " + path.string());
    }
    char buf[160];
    for (std::size_t i = 0; i < mesh.vertices.size(); ++i) {
        const auto& p = mesh.vertices[i];
        if (mesh.has_colors()) {
            const auto& c = mesh.colors[i];
            std::snprintf(buf, sizeof buf, "v %.9g %.9g %.9g %.9g %.9g %.9g\n", static_cast<double>(static_cast<float>(p.x())),
                          static_cast<double>(static_cast<float>(p.y())), static_cast<double>(static_cast<float>(p.z())),
                          static_cast<double>(static_cast<float>(c.x())), static_cast<double>(static_cast<float>(c.y())),
                          static_cast<double>(static_cast<float>(c.z())));
        } else {
            std::snprintf(buf, sizeof buf, "v %.9g %.9g %.9g\n", static_cast<double>(static_cast<float>(p.x())),
                          static_cast<double>(static_cast<float>(p.y())), static_cast<double>(static_cast<float>(p.z())));
        }
        out << buf;
    }
    for (const auto& t : mesh.uvs) {
        std::snprintf(buf, sizeof buf, "vt %.9g %.9g\n", static_cast<double>(static_cast<float>(t.x())),
                      static_cast<double>(static_cast<float>(t.y())));
        out << buf;
    }
    for (const auto& tri : mesh.triangles) {
        if (mesh.has_uvs()) {
            out << "f " << tri[0] + 1 << '/' << tri[0] + 1 << ' ' << tri[1] + 1 << '/' << tri[1] + 1 << ' ' << tri[2] + 1 << '/'
                << tri[2] + 1 << '\n';
        } else {
            out << "f " << tri[0] + 1 << ' ' << tri[1] + 1 << ' ' << tri[2] + 1 << '\n';
        }
    }
}

void put_f32(std::string& out, double v)
{
    const float f = static_cast<float>(v);
    out.append(reinterpret_cast<const char*>(&f), sizeof f);
}

void write_ply(const std::vector<Vec3>& positions, const std::vector<Vec3>& normals, const std::vector<Vec3>& colors,
               const std::vector<Vec2>& uvs, const std::vector<Triangle>& triangles, const std::filesystem::path& path)
{
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw Error("cannot write " + path.string());
    }
    std::string header = "ply\nformat binary_little_endian 1.0\ncomment facekit\n";
    header += "element vertex " + std::to_string(positions.size()) + "\n";
    header += "property float x\nproperty float y\nproperty float z\n";
    if (!normals.empty()) header += "property float nx\nproperty float ny\nproperty float nz\n";
    if (!colors.empty()) header += "property float red\nproperty float green\nproperty float blue\n";
    if (!uvs.empty()) header += "property float u\nproperty float v\n";
    if (!triangles.empty()) {
        header += "element face " + std::to_string(triangles.size()) + "\n";
        header += "property list uchar int vertex_indices\n";
    }
    header += "end_header\n";
    std::string body;
    body.reserve(positions.size() * 44 + triangles.size() * 13);
    for (std::size_t i = 0; i < positions.size(); ++i) {
        for (int c = 0; c < 3; ++c) put_f32(body, positions[i][c]);
        if (!normals.empty()) for (int c = 0; c < 3; ++c) put_f32(body, normals[i][c]);
        if (!colors.empty()) for (int c = 0; c < 3; ++c) put_f32(body, colors[i][c]);
        if (!uvs.empty()) for (int c = 0; c < 2; ++c) put_f32(body, uvs[i][c]);
    }
    for (const auto& t : triangles) {
        body.push_back(static_cast<char>(3));
        for (int idx : t) {
            const std::int32_t v = idx;
            body.append(reinterpret_cast<const char*>(&v), sizeof v);
        }
    }
    out << header << body;
}

} // namespace

TriMesh load_mesh(const std::filesystem::path& path, const TriMesh* conformTo)
{
    const std::string ext = lower_extension(path);
    TriMesh mesh;
    if (ext == ".obj") {
        mesh = read_obj(path);
    } else if (ext == ".ply") {
        auto data = read_ply(path);
        mesh.vertices = std::move(data.positions);
        mesh.triangles = std::move(data.triangles);
        if (data.colors.size() == mesh.vertices.size()) mesh.colors = std::move(data.colors);
        if (data.uvs.size() == mesh.vertices.size()) mesh.uvs = std::move(data.uvs);
    } else {
        throw Error("unsupported mesh format '" + ext + "' for " + path.string());
    }
    try {
        validate(mesh);
    } catch (const Error& e) {
        throw ParseError(path.string() + ": " + e.what());
    }
    if (conformTo && !same_topology(mesh, *conformTo)) {
        throw Error(path.string() + ": topology does not match the template (" + std::to_string(mesh.vertices.size()) +
                    " vertices / " + std::to_string(mesh.triangles.size()) + " faces vs " +
                    std::to_string(conformTo->vertices.size()) + " / " + std::to_string(conformTo->triangles.size()) + ")");
    }
    return mesh;
}

void save_mesh(const TriMesh& mesh, const std::filesystem::path& path)
{
    validate(mesh);
    const std::string ext = lower_extension(path);
    if (ext == ".obj") {
        write_obj(mesh, path);
    } else if (ext == ".ply") {
        write_ply(mesh.vertices, {}, mesh.colors, mesh.uvs, mesh.triangles, path);
    } else {
        throw Error("unsupported mesh format '" + ext + "' for " + path.string());
    }
}

PointCloud load_point_cloud(const std::filesystem::path& path)
{
    const std::string ext = lower_extension(path);
    PointCloud cloud;
    if (ext == ".ply") {
        auto data = read_ply(path);
        cloud.points = std::move(data.positions);
        if (data.normals.size() == cloud.points.size()) cloud.normals = std::move(data.normals);
        if (data.colors.size() == cloud.points.size()) cloud.colors = std::move(data.colors);
    } else if (ext == ".obj") {
        cloud.points = read_obj(path).vertices;
    } else {
        throw Error("unsupported point cloud format '" + ext + "'");
    }
    return cloud;
}

void save_point_cloud(const PointCloud& cloud, const std::filesystem::path& path)
{
    write_ply(cloud.points, cloud.normals, cloud.colors, {}, {}, path);
}

LandmarkSet load_landmarks(const std::filesystem::path& path)
{
    std::ifstream in(path);
    if (!in) {
        throw Error("cannot open " + path.string());
    }
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(path.string() + ": " + e.what());
    }
    if (!j.is_array()) {
        throw ParseError(path.string() + ": landmark file must be a JSON array");
    }
    LandmarkSet set;
    bool has3d = false;
    for (std::size_t i = 0; i < j.size(); ++i) {
        const auto& e = j[i];
        if (!e.contains("vertexIndex")) {
            throw ParseError(path.string() + ": landmark " + std::to_string(i) + " lacks vertexIndex");
        }
        set.vertexIndices.push_back(e.at("vertexIndex").get<int>());
        if (e.contains("x") && e.contains("y")) {
            if (e.contains("z")) {
                has3d = true;
                set.points3d.emplace_back(e["x"].get<double>(), e["y"].get<double>(), e["z"].get<double>());
            } else {
                set.points2d.emplace_back(e["x"].get<double>(), e["y"].get<double>());
            }
        }
    }
    if (has3d && !set.points2d.empty()) {
        throw ParseError(path.string() + ": mixes 2D and 3D landmarks");
    }
    if ((!set.points2d.empty() && set.points2d.size() != set.size()) || (!set.points3d.empty() && set.points3d.size() != set.size())) {
        throw ParseError(path.string() + ": only some landmarks carry coordinates");
    }
    return set;
}

void save_landmarks(const LandmarkSet& landmarks, const std::filesystem::path& path)
{
    nlohmann::json j = nlohmann::json::array();
    for (std::size_t i = 0; i < landmarks.size(); ++i) {
        nlohmann::json e;
        e["vertexIndex"] = landmarks.vertexIndices[i];
        if (i < landmarks.points3d.size()) {
            e["x"] = landmarks.points3d[i].x();
            e["y"] = landmarks.points3d[i].y();
            e["z"] = landmarks.points3d[i].z();
        } else if (i < landmarks.points2d.size()) {
            e["x"] = landmarks.points2d[i].x();
            e["y"] = landmarks.points2d[i].y();
        }
        j.push_back(e);
    }
    std::ofstream out(path);
    if (!out) {
        throw Error("cannot write " + path.string());
    }
    out << j.dump(2) << '\n';
}

} // namespace facekit::geometry
