/*
 * Copyright 2026 The hoipose Authors
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
// Shared helpers for the unit tests.
#pragma once

#include "hoipose/geometry.hpp"

#include <random>

namespace hoi::test {

/// Unit cube [-0.5, 0.5]^3.
inline TriangleMesh unit_cube() { return make_box(Vec3::Constant(-0.5), Vec3::Constant(0.5)); }

/// Closed UV sphere with outward faces.
inline TriangleMesh uv_sphere(const Vec3& center, double r, int stacks = 12, int slices = 16) {
    TriangleMesh m;
    m.vertices.push_back(center + Vec3(0, 0, r));
    for (int i = 1; i < stacks; ++i) {
        const double th = kPi * i / stacks;
        for (int j = 0; j < slices; ++j) {
            const double ph = 2 * kPi * j / slices;
            m.vertices.push_back(center + r * Vec3(std::sin(th) * std::cos(ph), std::sin(th) * std::sin(ph), std::cos(th)));
        }
    }
    m.vertices.push_back(center + Vec3(0, 0, -r));
    const int bottom = static_cast<int>(m.vertices.size()) - 1;
    auto ring = [&](int i, int j) { return 1 + (i - 1) * slices + (j % slices); };
    for (int j = 0; j < slices; ++j) {
        m.faces.push_back({0, ring(1, j), ring(1, j + 1)});
        m.faces.push_back({bottom, ring(stacks - 1, j + 1), ring(stacks - 1, j)});
    }
    for (int i = 1; i + 1 < stacks; ++i) {
        for (int j = 0; j < slices; ++j) {
            m.faces.push_back({ring(i, j), ring(i + 1, j), ring(i + 1, j + 1)});
            m.faces.push_back({ring(i, j), ring(i + 1, j + 1), ring(i, j + 1)});
        }
    }
    m.vertex_colors.assign(m.vertices.size(), Rgb(0.8, 0.2, 0.1));
    return m;
}

inline Vec3 random_unit(std::mt19937_64& rng) {
    std::normal_distribution<double> n(0.0, 1.0);
    Vec3 v(n(rng), n(rng), n(rng));
    return v.normalized();
}

inline double rel_error(double a, double b, double floor = 1e-12) {
    return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

} // namespace hoi::test
