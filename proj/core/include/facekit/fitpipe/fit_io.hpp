/*
 * facekit - 3D face modelling, registration and fitting from synthetic and captured data.
 *
 * File: core/include/facekit/fitpipe/fit_io.hpp
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

#include "facekit/fitpipe/fit.hpp"

#include <filesystem>

namespace facekit::fitpipe {

/// JSON form of a FitResult without its meshes (they are recomputed from the
/// parameters, latents and generators). Doubles are written with round-trip
/// precision, so a loaded result reproduces the pipeline bitwise.
std::string fit_to_json(const FitResult& result);
FitResult fit_from_json(const std::string& text);

void save_fit(const FitResult& result, const std::filesystem::path& path);
FitResult load_fit(const std::filesystem::path& path);

/// Recomputes result.meshes from the stored parameters and latents.
void restore_meshes(FitResult& result, const morphable::BaseModel& model, const Generators& generators);

} // namespace facekit::fitpipe
