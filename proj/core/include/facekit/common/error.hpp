/*
 * facekit - 3D face modelling, registration and fitting from synthetic and captured data.
 *
 * File: core/include/facekit/common/error.hpp
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

#include <stdexcept>
#include <string>

namespace facekit {

/// Base class of every exception thrown by the library.
class Error : public std::runtime_error
{
public:
    using std::runtime_error::runtime_error;
};

/// Malformed or truncated input file.
class ParseError : public Error
{
public:
    using Error::Error;
};

/// A numeric routine could not produce a meaningful result (NaN, divergence, degenerate input).
class NumericError : public Error
{
public:
    using Error::Error;
};

} // namespace facekit
