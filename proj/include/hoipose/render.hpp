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

#include "hoipose/field.hpp"
#include "hoipose/geometry.hpp"
#include "hoipose/image.hpp"

#include <limits>
#include <optional>

namespace hoi {

struct RenderOptions {
    int samples_per_ray = 128;
    Rgb background = Rgb::Ones();
    std::uint64_t seed = 0;
    /// Per-segment jitter; when false every sample sits at its segment midpoint.
    bool stratified = true;
    /// Mesh hits farther than this are ignored by composite renders.
    double far_plane = std::numeric_limits<double>::infinity();
};

/// Opaque mesh sample recorded for one pixel of a composite render.
struct MeshSample {
    double distance = std::numeric_limits<double>::infinity();
    Rgb color = Rgb::Zero();
    bool hit = false;
};

/// Everything needed to replay a forward pass. Sample distances are
/// regenerated from the counter-based RNG, so the tape stays small.
struct RenderTape {
    Camera camera;
    RenderOptions options;
    std::vector<MeshSample> mesh_samples; // empty for field-only renders
    std::uint64_t field_version = 0;
    std::size_t field_params = 0;

    bool composite() const { return !mesh_samples.empty(); }
};

struct RenderOutput {
    Image rgb;     // H x W x 3
    Image opacity; // H x W x 1, sum of field sample weights
    RenderTape tape;
};

/// Field sample distances along a ray: N uniform segments over the ray's
/// intersection with the support ball, one jittered sample per segment.
/// `segments` receives the spacing to the next sample; the last sample reuses
/// the previous spacing. Empty if the ray misses the ball.
inline void sample_ray(const Ray& ray, double radius, const RenderOptions& opt, std::uint64_t pixel,
                       std::vector<double>& distances, std::vector<double>& segments) {
    distances.clear();
    segments.clear();
    const auto span = ray_sphere(ray, radius);
    if (!span) {
        return;
    }
    const int n = opt.samples_per_ray;
    const double step = (span->second - span->first) / n;
    if (!(step > 0.0)) {
        return;
    }
    distances.resize(n);
    segments.resize(n);
    for (int i = 0; i < n; ++i) {
        const double u = opt.stratified ? counter_uniform(opt.seed, pixel, static_cast<std::uint64_t>(i)) : 0.5;
        distances[i] = span->first + (i + u) * step;
    }
    for (int i = 0; i + 1 < n; ++i) {
        segments[i] = distances[i + 1] - distances[i];
    }
    segments[n - 1] = segments[n - 2];
}

namespace detail {

struct SampleRecord {
    Stencil stencil;
    double raw_density = 0.0;
    Vec3 raw_color = Vec3::Zero();
    Rgb color = Rgb::Zero();
    double alpha = 0.0;
    double transmittance = 1.0;
    double segment = 0.0;
};

struct PixelResult {
    Rgb rgb = Rgb::Zero();
    double opacity = 0.0;
};

// Composites one pixel. Field samples at or behind the mesh distance are
// dropped (the mesh sample wins ties); a sample's segment is clipped at the
// mesh. Fills `records` with the contributing field samples.
inline PixelResult composite_pixel(const VoxelField& field, const Ray& ray, const std::vector<double>& distances,
                                   const std::vector<double>& segments, const MeshSample& mesh, const Rgb& background,
                                   std::vector<SampleRecord>& records) {
    records.clear();
    PixelResult out;
    double trans = 1.0;
    for (std::size_t i = 0; i < distances.size(); ++i) {
        const double d = distances[i];
        if (mesh.hit && d >= mesh.distance) {
            break;
        }
        SampleRecord r;
        r.segment = mesh.hit ? std::min(d + segments[i], mesh.distance) - d : segments[i];
        r.stencil = field.stencil(ray.at(d));
        if (r.stencil.inside) {
            std::tie(r.raw_density, r.raw_color) = field.raw_at(r.stencil);
            const double tau = softplus(r.raw_density);
            r.alpha = -std::expm1(-tau * r.segment);
            r.color = Rgb(sigmoid(r.raw_color.x()), sigmoid(r.raw_color.y()), sigmoid(r.raw_color.z()));
        } else {
            r.color = Rgb::Constant(0.5);
        }
        r.transmittance = trans;
        const double w = trans * r.alpha;
        out.rgb += w * r.color;
        out.opacity += w;
        trans *= 1.0 - r.alpha;
        records.push_back(r);
    }
    if (mesh.hit) {
        out.rgb += trans * mesh.color;
    } else {
        out.rgb += trans * background;
    }
    out.opacity = std::min(out.opacity, 1.0);
    return out;
}

inline RenderOutput render_impl(const VoxelField& field, const IndexedMesh* mesh, const Camera& camera,
                                const RenderOptions& opt) {
    camera.validate();
    if (opt.samples_per_ray < 2) {
        throw InvalidArgument("samples_per_ray must be at least 2");
    }
    RenderOutput out;
    out.rgb = Image(camera.width, camera.height, 3);
    out.opacity = Image(camera.width, camera.height, 1);
    out.tape.camera = camera;
    out.tape.options = opt;
    out.tape.field_version = field.version();
    out.tape.field_params = field.param_count();
    const bool composite = mesh != nullptr && !mesh->empty();
    if (composite) {
        out.tape.mesh_samples.resize(static_cast<std::size_t>(camera.width) * camera.height);
    }
    parallel_chunks(camera.height, [&](int, int y0, int y1) {
        std::vector<double> distances;
        std::vector<double> segments;
        std::vector<SampleRecord> records;
        for (int y = y0; y < y1; ++y) {
            for (int x = 0; x < camera.width; ++x) {
                const auto pixel = static_cast<std::uint64_t>(y) * camera.width + x;
                const Ray ray = camera.pixel_ray(x, y);
                MeshSample ms;
                if (composite) {
                    if (const auto h = mesh->first_hit(ray); h && h->distance <= opt.far_plane) {
                        ms.hit = true;
                        ms.distance = h->distance;
                        ms.color = h->color;
                    }
                    out.tape.mesh_samples[pixel] = ms;
                }
                sample_ray(ray, field.support_radius(), opt, pixel, distances, segments);
                const auto px = composite_pixel(field, ray, distances, segments, ms, opt.background, records);
                for (int c = 0; c < 3; ++c) {
                    out.rgb.at(x, y, c) = px.rgb[c];
                }
                out.opacity.at(x, y, 0) = px.opacity;
            }
        }
    });
    return out;
}

} // namespace detail

/// Volume rendering of the field alone (the human-only view).
inline RenderOutput render_field(const VoxelField& field, const Camera& camera, const RenderOptions& opt) {
    return detail::render_impl(field, nullptr, camera, opt);
}

/// Field composited with an opaque mesh: the first mesh hit along each ray
/// enters as a sample with alpha = 1 carrying the interpolated vertex color.
inline RenderOutput render_composite(const VoxelField& field, const IndexedMesh& mesh, const Camera& camera,
                                     const RenderOptions& opt) {
    return detail::render_impl(field, &mesh, camera, opt);
}

/// Dense parameter gradient tagged with the field version it was computed against.
struct FieldGradient {
    std::vector<double> values;
    std::uint64_t field_version = 0;

    FieldGradient() = default;
    FieldGradient(std::size_t n, std::uint64_t version) : values(n, 0.0), field_version(version) {}

    double norm() const {
        double s = 0.0;
        for (double v : values) {
            s += v * v;
        }
        return std::sqrt(s);
    }
};

/// Reverse-mode pass of a render: accumulates into `grad` the parameter
/// gradient of sum(d_rgb * rgb) + sum(d_opacity * opacity). The mesh sample
/// color is a constant. `d_opacity` may be null.
inline void render_backward_accumulate(const VoxelField& field, const RenderTape& tape, const Image& d_rgb,
                                       const Image* d_opacity, FieldGradient& grad) {
    const Camera& cam = tape.camera;
    if (d_rgb.width != cam.width || d_rgb.height != cam.height || d_rgb.channels != 3) {
        throw InvalidArgument("render_backward: rgb gradient shape does not match the tape");
    }
    if (d_opacity && (d_opacity->width != cam.width || d_opacity->height != cam.height || d_opacity->channels != 1)) {
        throw InvalidArgument("render_backward: opacity gradient shape does not match the tape");
    }
    if (tape.field_params != field.param_count() || tape.field_version != field.version()) {
        throw InvalidArgument("render_backward: tape was recorded against a different field snapshot");
    }
    if (grad.values.size() != field.param_count() || grad.field_version != field.version()) {
        throw InvalidArgument("render_backward: gradient buffer does not belong to this field snapshot");
    }
    const int workers = effective_workers(cam.height);
    std::vector<std::vector<double>> partial(workers > 1 ? workers : 0);
    parallel_chunks(cam.height, [&](int w, int y0, int y1) {
        std::span<double> g = grad.values;
        if (workers > 1) {
            partial[w].assign(field.param_count(), 0.0);
            g = partial[w];
        }
        std::vector<double> distances;
        std::vector<double> segments;
        std::vector<detail::SampleRecord> records;
        const MeshSample no_mesh;
        for (int y = y0; y < y1; ++y) {
            for (int x = 0; x < cam.width; ++x) {
                const Vec3 g_rgb(d_rgb.at(x, y, 0), d_rgb.at(x, y, 1), d_rgb.at(x, y, 2));
                const double g_op = d_opacity ? d_opacity->at(x, y, 0) : 0.0;
                if (g_rgb.isZero(0.0) && g_op == 0.0) {
                    continue;
                }
                const auto pixel = static_cast<std::uint64_t>(y) * cam.width + x;
                const Ray ray = cam.pixel_ray(x, y);
                const MeshSample& ms = tape.composite() ? tape.mesh_samples[pixel] : no_mesh;
                sample_ray(ray, field.support_radius(), tape.options, pixel, distances, segments);
                detail::composite_pixel(field, ray, distances, segments, ms, tape.options.background, records);
                // suffix color / opacity behind the current sample
                Vec3 behind = ms.hit ? Vec3(ms.color) : Vec3(tape.options.background);
                double behind_op = 0.0;
                for (int i = static_cast<int>(records.size()) - 1; i >= 0; --i) {
                    const auto& r = records[i];
                    if (!r.stencil.inside) {
                        continue; // alpha = 0: passes the suffix through unchanged
                    }
                    const double d_alpha = r.transmittance * (g_rgb.dot(r.color - behind) + g_op * (1.0 - behind_op));
                    const double d_tau = d_alpha * r.segment * (1.0 - r.alpha);
                    const Rgb d_color = (r.transmittance * r.alpha) * g_rgb;
                    field.accumulate_backward(r.stencil, r.raw_density, r.raw_color, d_color, d_tau, g);
                    behind = r.alpha * r.color + (1.0 - r.alpha) * behind;
                    behind_op = r.alpha + (1.0 - r.alpha) * behind_op;
                }
            }
        }
    });
    for (int w = 0; w < static_cast<int>(partial.size()); ++w) {
        for (std::size_t i = 0; i < grad.values.size(); ++i) {
            grad.values[i] += partial[w][i];
        }
    }
}

inline FieldGradient render_backward(const VoxelField& field, const RenderTape& tape, const Image& d_rgb,
                                     const Image* d_opacity = nullptr) {
    FieldGradient g(field.param_count(), field.version());
    render_backward_accumulate(field, tape, d_rgb, d_opacity, g);
    return g;
}

/// Visits every field sample position of a recorded render, including those
/// behind a mesh hit: fn(pixel, distance, position).
template <typename Fn>
void for_each_ray_sample(const VoxelField& field, const RenderTape& tape, Fn&& fn) {
    const Camera& cam = tape.camera;
    std::vector<double> distances;
    std::vector<double> segments;
    for (int y = 0; y < cam.height; ++y) {
        for (int x = 0; x < cam.width; ++x) {
            const auto pixel = static_cast<std::uint64_t>(y) * cam.width + x;
            const Ray ray = cam.pixel_ray(x, y);
            sample_ray(ray, field.support_radius(), tape.options, pixel, distances, segments);
            for (double d : distances) {
                fn(pixel, d, ray.at(d));
            }
        }
    }
}

} // namespace hoi
