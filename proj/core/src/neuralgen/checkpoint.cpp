/*
 * facekit - 3D face modelling, registration and fitting from synthetic and captured data.
 *
 * File: core/src/neuralgen/checkpoint.cpp
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
#include "facekit/neuralgen/checkpoint.hpp"

#include "facekit/common/binary_io.hpp"
#include "facekit/common/error.hpp"

#include <fstream>

namespace facekit::neuralgen {

namespace {

constexpr char kMagic[4] = {'F', 'V', 'K', 'G'};
constexpr std::uint32_t kVersion = 1;

} // namespace

void save_checkpoint(const std::filesystem::path& path, const Generator& generator, std::uint64_t step)
{
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw Error("cannot write checkpoint " + path.string());
    }
    out.write(kMagic, 4);
    binio::write_u32(out, kVersion);
    binio::write_u64(out, generator.spec().hash());
    binio::write_u64(out, step);
    binio::write_string(out, generator.spec().to_json());
    const auto& params = generator.parameters();
    binio::write_u32(out, static_cast<std::uint32_t>(params.slots().size()));
    for (std::size_t i = 0; i < params.slots().size(); ++i) {
        const auto& slot = params.slot(i);
        binio::write_string(out, slot.name);
        binio::write_u32(out, static_cast<std::uint32_t>(slot.shape.size()));
        for (int d : slot.shape) {
            binio::write_u32(out, static_cast<std::uint32_t>(d));
        }
        binio::write_u64(out, slot.size);
        binio::write_f32(out, params.values(i));
    }
    if (!out) {
        throw Error("failed writing checkpoint " + path.string());
    }
}

Checkpoint load_checkpoint(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw Error("cannot open checkpoint " + path.string());
    }
    auto r = binio::Reader::from_stream(in, "checkpoint " + path.string());
    char magic[4];
    r.read_raw(magic, 4);
    if (!std::equal(magic, magic + 4, kMagic)) {
        throw ParseError(r.what() + ": not an FVKG checkpoint");
    }
    const auto version = r.u32();
    if (version != kVersion) {
        throw ParseError(r.what() + ": unsupported version " + std::to_string(version));
    }
    Checkpoint ck;
    ck.specHash = r.u64();
    ck.step = r.u64();
    const GeneratorSpec spec = GeneratorSpec::from_json(r.string());
    if (spec.hash() != ck.specHash) {
        throw ParseError(r.what() + ": spec hash does not match the stored spec");
    }
    ck.generator = Generator(spec, 0);
    auto& params = ck.generator.parameters();
    const auto count = r.u32();
    if (count != params.slots().size()) {
        throw Error(r.what() + ": " + std::to_string(count) + " tensors stored, architecture declares " +
                    std::to_string(params.slots().size()));
    }
    for (std::size_t i = 0; i < count; ++i) {
        const auto& slot = params.slot(i);
        const auto name = r.string();
        const auto rank = r.u32();
        std::vector<int> shape;
        for (std::uint32_t k = 0; k < rank; ++k) {
            shape.push_back(static_cast<int>(r.u32()));
        }
        const auto size = r.u64();
        if (name != slot.name || shape != slot.shape || size != slot.size) {
            throw Error(r.what() + ": tensor " + std::to_string(i) + " ('" + name + "') does not match '" + slot.name + "'");
        }
        const auto values = r.f32(size);
        std::copy(values.begin(), values.end(), params.values(i).begin());
    }
    if (r.position() != r.size()) {
        throw ParseError(r.what() + ": trailing bytes after the last tensor");
    }
    return ck;
}

} // namespace facekit::neuralgen
