/*
 * facekit - 3D face modelling, registration and fitting from synthetic and captured data.
 *
 * File: core/src/render/image_io.cpp
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
#include "facekit/render/image_io.hpp"

#include "facekit/common/error.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <memory>

namespace facekit::render {

namespace {

struct FileCloser
{
    void operator()(std::FILE* f) const { std::fclose(f); }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

} // namespace

void save_png(const std::filesystem::path& path, const Image& image)
{
    if (image.data.size() != image.pixel_count() * 3 || image.width <= 0 || image.height <= 0) {
        throw Error("save_png: image buffer does not match its size");
    }
    FilePtr file(std::fopen(path.string().c_str(), "wb"));
    if (!file) {
        throw Error("cannot open " + path.string() + " for writing");
    }
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_write_struct(&png, &info);
        throw Error("libpng initialisation failed");
    }
    std::vector<png_byte> rows(image.pixel_count() * 3);
    for (std::size_t i = 0; i < rows.size(); ++i) {
        const double v = std::pow(std::clamp(image.data[i], 0.0, 1.0), 1.0 / kDisplayGamma);
        rows[i] = static_cast<png_byte>(std::lround(v * 255.0));
    }
    std::vector<png_bytep> rowPtrs(static_cast<std::size_t>(image.height));
    for (int y = 0; y < image.height; ++y) {
        rowPtrs[static_cast<std::size_t>(y)] = rows.data() + static_cast<std::size_t>(y) * static_cast<std::size_t>(image.width) * 3;
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw Error("libpng failed writing " + path.string());
    }
    png_init_io(png, file.get());
    png_set_IHDR(png, info, static_cast<png_uint_32>(image.width), static_cast<png_uint_32>(image.height), 8, PNG_COLOR_TYPE_RGB,
                 PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    png_write_image(png, rowPtrs.data());
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

Image load_png(const std::filesystem::path& path)
{
    FilePtr file(std::fopen(path.string().c_str(), "rb"));
    if (!file) {
        throw Error("cannot open " + path.string());
    }
    png_byte sig[8];
    if (std::fread(sig, 1, 8, file.get()) != 8 || png_sig_cmp(sig, 0, 8) != 0) {
        throw ParseError(path.string() + " is not a PNG file");
    }
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw Error("libpng initialisation failed");
    }
    Image image;
    std::vector<png_byte> rows;
    std::vector<png_bytep> rowPtrs;
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw ParseError("libpng failed reading " + path.string());
    }
    png_init_io(png, file.get());
    png_set_sig_bytes(png, 8);
    png_read_info(png, info);
    const auto colorType = png_get_color_type(png, info);
    const auto bitDepth = png_get_bit_depth(png, info);
    if (bitDepth == 16) png_set_strip_16(png);
    if (colorType == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (colorType == PNG_COLOR_TYPE_GRAY && bitDepth < 8) png_set_expand_gray_1_2_4_to_8(png);
    if (colorType == PNG_COLOR_TYPE_GRAY || colorType == PNG_COLOR_TYPE_GRAY_ALPHA) png_set_gray_to_rgb(png);
    if (colorType & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
    png_read_update_info(png, info);
    image.width = static_cast<int>(png_get_image_width(png, info));
    image.height = static_cast<int>(png_get_image_height(png, info));
    const std::size_t stride = png_get_rowbytes(png, info);
    rows.resize(stride * static_cast<std::size_t>(image.height));
    rowPtrs.resize(static_cast<std::size_t>(image.height));
    for (int y = 0; y < image.height; ++y) {
        rowPtrs[static_cast<std::size_t>(y)] = rows.data() + stride * static_cast<std::size_t>(y);
    }
    png_read_image(png, rowPtrs.data());
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);

    image.data.resize(image.pixel_count() * 3);
    for (int y = 0; y < image.height; ++y) {
        for (int x = 0; x < image.width * 3; ++x) {
            const double v = rows[stride * static_cast<std::size_t>(y) + static_cast<std::size_t>(x)] / 255.0;
            image.data[static_cast<std::size_t>(y) * static_cast<std::size_t>(image.width) * 3 + static_cast<std::size_t>(x)] =
                std::pow(v, kDisplayGamma);
        }
    }
    return image;
}

namespace {

template <typename T>
void put(std::vector<char>& buf, T value)
{
    char bytes[sizeof(T)];
    std::memcpy(bytes, &value, sizeof(T));
    buf.insert(buf.end(), bytes, bytes + sizeof(T));
}

void put_string(std::vector<char>& buf, const char* s)
{
    buf.insert(buf.end(), s, s + std::strlen(s) + 1);
}

void put_attribute(std::vector<char>& buf, const char* name, const char* type, const std::vector<char>& value)
{
    put_string(buf, name);
    put_string(buf, type);
    put<std::int32_t>(buf, static_cast<std::int32_t>(value.size()));
    buf.insert(buf.end(), value.begin(), value.end());
}

} // namespace

void save_exr_depth(const std::filesystem::path& path, std::span<const double> depth, int width, int height)
{
    if (width <= 0 || height <= 0 || depth.size() != static_cast<std::size_t>(width) * static_cast<std::size_t>(height)) {
        throw Error("save_exr_depth: buffer does not match the image size");
    }
    std::vector<char> buf;
    put<std::uint32_t>(buf, 20000630u); // magic
    put<std::uint32_t>(buf, 2u);        // version 2, scanline, no flags

    std::vector<char> v;
    put_string(v, "Z");
    put<std::int32_t>(v, 2); // FLOAT
    v.insert(v.end(), {0, 0, 0, 0}); // pLinear + reserved
    put<std::int32_t>(v, 1);
    put<std::int32_t>(v, 1);
    v.push_back(0);
    put_attribute(buf, "channels", "chlist", v);
    put_attribute(buf, "compression", "compression", {0});
    v.clear();
    for (std::int32_t x : {0, 0, width - 1, height - 1}) put<std::int32_t>(v, x);
    put_attribute(buf, "dataWindow", "box2i", v);
    put_attribute(buf, "displayWindow", "box2i", v);
    put_attribute(buf, "lineOrder", "lineOrder", {0});
    v.clear();
    put<float>(v, 1.0f);
    put_attribute(buf, "pixelAspectRatio", "float", v);
    v.clear();
    put<float>(v, 0.0f);
    put<float>(v, 0.0f);
    put_attribute(buf, "screenWindowCenter", "v2f", v);
    v.clear();
    put<float>(v, 1.0f);
    put_attribute(buf, "screenWindowWidth", "float", v);
    buf.push_back(0); // end of header

    const std::size_t lineBytes = static_cast<std::size_t>(width) * sizeof(float);
    const std::size_t tableStart = buf.size();
    const std::size_t firstBlock = tableStart + static_cast<std::size_t>(height) * sizeof(std::uint64_t);
    for (int y = 0; y < height; ++y) {
        put<std::uint64_t>(buf, firstBlock + static_cast<std::size_t>(y) * (8 + lineBytes));
    }
    for (int y = 0; y < height; ++y) {
        put<std::int32_t>(buf, y);
        put<std::int32_t>(buf, static_cast<std::int32_t>(lineBytes));
        for (int x = 0; x < width; ++x) {
            put<float>(buf, static_cast<float>(depth[static_cast<std::size_t>(y) * static_cast<std::size_t>(width) + static_cast<std::size_t>(x)]));
        }
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw Error("cannot open " + path.string() + " for writing");
    }
    out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
}

} // namespace facekit::render
