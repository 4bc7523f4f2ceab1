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
#pragma once

#include "hoipose/render.hpp"

#include <random>

namespace hoi {

struct GradcheckConfig {
    int cases = 100;
    int grid = 8;
    int image_size = 4;
    int samples_per_ray = 32;
    double step = 1e-4;
    int extra_params = 32;       // parameters with zero analytic gradient also probed
    double composite_fraction = 0.5; // share of cases rendered with a mesh inserted
    std::uint64_t seed = 0;
};

struct GradcheckReport {
    int cases = 0;
    long long checked = 0;
    double worst_rel = 0.0;
    double mean_rel = 0.0;
};

/**
 * Compares render_backward with central finite differences. Each case is a
 * random field, a random camera, a random pixel and random upstream weights
 * on that pixel's color and opacity; every parameter with a nonzero analytic
 * derivative is probed, plus a few random others.
 */
inline GradcheckReport render_gradcheck(const GradcheckConfig& cfg) {
    if (cfg.cases <= 0 || cfg.grid < 2 || cfg.image_size <= 0 || !(cfg.step > 0.0)) {
        throw InvalidArgument("gradcheck: invalid configuration");
    }
    std::mt19937_64 rng(cfg.seed);
    std::uniform_real_distribution<double> dens(-4.0, 1.5);
    std::uniform_real_distribution<double> col(-3.0, 3.0);
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    std::normal_distribution<double> n01(0.0, 1.0);
    const IndexedMesh box(make_box(Vec3(-0.25, -0.2, -0.3), Vec3(0.2, 0.25, 0.15), Rgb(0.7, 0.3, 0.2)));
    GradcheckReport rep;
    double sum = 0.0;
    for (int c = 0; c < cfg.cases; ++c) {
        VoxelField f(cfg.grid);
        for (std::size_t v = 0; v < f.voxel_count(); ++v) {
            f.raw_density(static_cast<int>(v)) = dens(rng);
            for (int k = 0; k < 3; ++k) {
                f.color_logit(static_cast<int>(v), k) = col(rng);
            }
        }
        Vec3 dir(n01(rng), n01(rng), n01(rng));
        dir.normalize();
        Camera cam;
        cam.position = dir * (2.5 + u01(rng));
        cam.up = std::abs(dir.z()) > 0.99 ? Vec3::UnitY() : Vec3::UnitZ();
        cam.vertical_fov = deg2rad(30.0);
        cam.width = cam.height = cfg.image_size;
        RenderOptions opt;
        opt.samples_per_ray = cfg.samples_per_ray;
        opt.seed = rng();
        const bool composite = u01(rng) < cfg.composite_fraction;
        auto render = [&](const VoxelField& field) {
            return composite ? render_composite(field, box, cam, opt) : render_field(field, cam, opt);
        };
        const int px = static_cast<int>(rng() % static_cast<std::uint64_t>(cfg.image_size));
        const int py = static_cast<int>(rng() % static_cast<std::uint64_t>(cfg.image_size));
        Image g_rgb(cam.width, cam.height, 3);
        Image g_op(cam.width, cam.height, 1);
        for (int k = 0; k < 3; ++k) {
            g_rgb.at(px, py, k) = n01(rng);
        }
        g_op.at(px, py, 0) = n01(rng);
        auto loss = [&](const VoxelField& field) {
            const auto out = render(field);
            double s = 0.0;
            for (int k = 0; k < 3; ++k) {
                s += out.rgb.at(px, py, k) * g_rgb.at(px, py, k);
            }
            return s + out.opacity.at(px, py, 0) * g_op.at(px, py, 0);
        };
        const auto grad = render_backward(f, render(f).tape, g_rgb, &g_op);
        std::vector<std::size_t> probe;
        for (std::size_t i = 0; i < f.param_count(); ++i) {
            if (grad.values[i] != 0.0) {
                probe.push_back(i);
            }
        }
        for (int k = 0; k < cfg.extra_params; ++k) {
            probe.push_back(static_cast<std::size_t>(rng() % f.param_count()));
        }
        for (std::size_t i : probe) {
            const double x0 = f.params()[i];
            f.params()[i] = x0 + cfg.step;
            const double lp = loss(f);
            f.params()[i] = x0 - cfg.step;
            const double lm = loss(f);
            f.params()[i] = x0;
            const double fd = (lp - lm) / (2.0 * cfg.step);
            const double a = grad.values[i];
            const double rel = std::abs(a - fd) / std::max({std::abs(a), std::abs(fd), 1e-7});
            rep.worst_rel = std::max(rep.worst_rel, rel);
            sum += rel;
            ++rep.checked;
        }
        ++rep.cases;
    }
    rep.mean_rel = rep.checked ? sum / static_cast<double>(rep.checked) : 0.0;
    return rep;
}

struct MeshPreflight {
    int samples = 0;
    int unstable = 0;       // parity disagrees between probe directions
    bool inside_support = true;
    double radius = 0.0;    // largest vertex distance from the origin

    double unstable_fraction() const { return samples ? static_cast<double>(unstable) / samples : 0.0; }
};

/// Probes random points of the mesh bounding box with three ray directions;
/// a watertight mesh gives the same parity on all of them.
inline MeshPreflight mesh_preflight(const TriangleMesh& mesh, int samples = 500, std::uint64_t seed = 0,
                                    double support_radius = 1.0) {
    MeshPreflight r;
    if (mesh.vertices.empty()) {
        return r;
    }
    for (const auto& v : mesh.vertices) {
        r.radius = std::max(r.radius, v.norm());
    }
    r.inside_support = r.radius <= support_radius;
    const IndexedMesh indexed(mesh);
    Vec3 lo = mesh.vertices.front();
    Vec3 hi = lo;
    for (const auto& v : mesh.vertices) {
        lo = lo.cwiseMin(v);
        hi = hi.cwiseMax(v);
    }
    const std::array<Vec3, 3> dirs{Vec3(0.5377, 0.2859, 0.7931).normalized(), Vec3(-0.7, 0.6, -0.38).normalized(),
                                   Vec3(0.1, -0.93, 0.35).normalized()};
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int i = 0; i < samples; ++i) {
        const Vec3 p = lo + (hi - lo).cwiseProduct(Vec3(u(rng), u(rng), u(rng)));
        int odd = 0;
        for (const auto& d : dirs) {
            odd += indexed.crossings(Ray(p, d)).first % 2;
        }
        ++r.samples;
        if (odd != 0 && odd != 3) {
            ++r.unstable;
        }
    }
    return r;
}

} // namespace hoi
