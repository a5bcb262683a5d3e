/*
 * facekit - 3D face modelling, registration and fitting from synthetic and captured data.
 *
 * File: core/include/facekit/geometry/face_template.hpp
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

#include "facekit/geometry/uv.hpp"

namespace facekit::geometry {

/// Procedural neutral face: a height-field over a disk-shaped single uv chart
/// (gridSize x gridSize lattice clipped to the inscribed disk), roughly
/// 150 mm wide and 190 mm tall, facing +z. Carries a 68-point landmark layout.
/// gridSize = 57 gives about 2.5k vertices.
TemplateAtlas make_face_template(int gridSize = 57);

/// The face surface as a function of uv; the template vertices sample it.
Vec3 face_surface(const Vec2& uv);

/// uv positions of the 68 landmarks in the usual jaw/brow/nose/eye/mouth order.
std::vector<Vec2> landmark_uv_layout();

/// Coarse semantic region weights in [0, 1] used by the synthetic expression
/// generator: lower face (mouth/jaw) and eye region.
double lower_face_weight(const Vec2& uv);
double eye_region_weight(const Vec2& uv);

} // namespace facekit::geometry
