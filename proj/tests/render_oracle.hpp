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
// Scalar re-implementation of ray compositing used as a test oracle. It
// builds the sorted point set of a ray (field samples plus the opaque mesh
// sample), shuffles and re-sorts it, then alpha-composites front to back.
#pragma once

#include "hoipose/render.hpp"

#include <algorithm>
#include <random>

namespace hoi::test {

struct OraclePoint {
    double distance;
    Rgb color;
    double density; // ignored for the mesh point
    double spacing; // nominal spacing to the next field sample
    bool mesh;
};

inline Rgb oracle_pixel(const VoxelField& field, const Camera& cam, const RenderOptions& opt, int x, int y,
                        const TriangleMesh* mesh, double* opacity_out = nullptr, std::uint64_t shuffle_seed = 0) {
    const Ray ray = cam.pixel_ray(x, y);
    const auto pixel = static_cast<std::uint64_t>(y) * cam.width + x;
    std::vector<double> d;
    std::vector<double> seg;
    sample_ray(ray, field.support_radius(), opt, pixel, d, seg);
    std::vector<OraclePoint> pts;
    for (std::size_t i = 0; i < d.size(); ++i) {
        const double spacing = i + 1 < d.size() ? d[i + 1] - d[i] : d[i] - d[i - 1];
        const auto s = field.query(ray.at(d[i]));
        pts.push_back({d[i], s.color, s.density, spacing, false});
    }
    if (mesh != nullptr && !mesh->empty()) {
        if (const auto h = first_hit_brute(ray, *mesh); h && h->distance <= opt.far_plane) {
            pts.push_back({h->distance, h->color, 0.0, 0.0, true});
        }
    }
    std::mt19937_64 rng(shuffle_seed);
    std::shuffle(pts.begin(), pts.end(), rng);
    std::stable_sort(pts.begin(), pts.end(), [](const OraclePoint& a, const OraclePoint& b) {
        if (a.distance != b.distance) {
            return a.distance < b.distance;
        }
        return a.mesh && !b.mesh; // the opaque sample comes first on ties
    });
    Rgb rgb = Rgb::Zero();
    double opacity = 0.0;
    double trans = 1.0;
    bool blocked = false;
    for (std::size_t i = 0; i < pts.size(); ++i) {
        const auto& p = pts[i];
        if (p.mesh) {
            rgb += trans * p.color; // alpha = 1
            trans = 0.0;
            blocked = true;
            break;
        }
        // segment ends at the next point of the set, never beyond the nominal spacing
        double len = p.spacing;
        if (i + 1 < pts.size()) {
            len = std::min(len, pts[i + 1].distance - p.distance);
        }
        const double alpha = 1.0 - std::exp(-p.density * len);
        rgb += trans * alpha * p.color;
        opacity += trans * alpha;
        trans *= 1.0 - alpha;
    }
    if (!blocked) {
        rgb += trans * opt.background;
    }
    if (opacity_out) {
        *opacity_out = opacity;
    }
    return rgb;
}

} // namespace hoi::test
