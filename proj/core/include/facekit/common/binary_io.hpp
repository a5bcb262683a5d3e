/*
 * facekit - 3D face modelling, registration and fitting from synthetic and captured data.
 *
 * File: core/include/facekit/common/binary_io.hpp
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

#include "facekit/common/error.hpp"

#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <span>
#include <string>
#include <vector>

namespace facekit::binio {

// Little-endian helpers shared by the model and checkpoint containers. The
// library only targets little-endian hosts, so values are copied verbatim.

inline void write_u32(std::ostream& out, std::uint32_t v)
{
    out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

inline void write_u64(std::ostream& out, std::uint64_t v)
{
    out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

inline void write_f32(std::ostream& out, std::span<const double> values)
{
    std::vector<float> buf(values.begin(), values.end());
    out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size() * sizeof(float)));
}

inline void write_string(std::ostream& out, const std::string& s)
{
    write_u32(out, static_cast<std::uint32_t>(s.size()));
    out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

/// Reader over an in-memory buffer; every read is bounds-checked so truncated
/// files report the expected and actual byte counts.
class Reader
{
public:
    Reader(std::vector<char> bytes, std::string what) : bytes_(std::move(bytes)), what_(std::move(what)) {}

    static Reader from_stream(std::istream& in, std::string what)
    {
        std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
        return Reader(std::move(bytes), std::move(what));
    }

    void require(std::size_t n) const
    {
        if (pos_ + n > bytes_.size()) {
            throw ParseError(what_ + ": truncated file, expected at least " + std::to_string(pos_ + n) +
                             " bytes but file has " + std::to_string(bytes_.size()));
        }
    }

    void read_raw(void* dst, std::size_t n)
    {
        require(n);
        std::memcpy(dst, bytes_.data() + pos_, n);
        pos_ += n;
    }

    std::uint32_t u32()
    {
        std::uint32_t v;
        read_raw(&v, sizeof v);
        return v;
    }

    std::uint64_t u64()
    {
        std::uint64_t v;
        read_raw(&v, sizeof v);
        return v;
    }

    std::vector<double> f32(std::size_t count)
    {
        std::vector<float> buf(count);
        read_raw(buf.data(), count * sizeof(float));
        return {buf.begin(), buf.end()};
    }

    std::string string()
    {
        const auto n = u32();
        std::string s(n, '\0');
        read_raw(s.data(), n);
        return s;
    }

    std::size_t position() const { return pos_; }
    std::size_t size() const { return bytes_.size(); }
    const std::string& what() const { return what_; }

private:
    std::vector<char> bytes_;
    std::string what_;
    std::size_t pos_ = 0;
};

} // namespace facekit::binio
