/*
 * facekit - 3D face modelling, registration and fitting from synthetic and captured data.
 *
 * File: core/include/facekit/render/image_io.hpp
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

#include <filesystem>
#include <span>
#include <vector>

namespace facekit::render {

/// Linear RGB image, row-major, interleaved, values nominally in [0, 1].
struct Image
{
    int width = 0;
    int height = 0;
    std::vector<double> data; ///< height * width * 3

    std::size_t pixel_count() const { return static_cast<std::size_t>(width) * static_cast<std::size_t>(height); }
};

constexpr double kDisplayGamma = 2.2;

/// 8-bit PNG, encoded with gamma 1/2.2. Grey and alpha inputs are expanded/dropped on load,
/// which returns linearised values.
void save_png(const std::filesystem::path& path, const Image& image);
Image load_png(const std::filesystem::path& path);

/// Single-channel ("Z") uncompressed float32 OpenEXR scanline file.
void save_exr_depth(const std::filesystem::path& path, std::span<const double> depth, int width, int height);

} // namespace facekit::render
