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

#include <map>

namespace hoi {

struct LossWeights {
    double sds_ho = 0.9;
    double sds_h = 0.05;
    double sds_h_mv = 0.05;
    double sparsity = 10000.0;
    double intersection = 1.0;
    double eta = 0.2;

    void validate() const {
        for (double w : {sds_ho, sds_h, sds_h_mv, sparsity, intersection}) {
            if (!(w >= 0.0)) {
                throw InvalidArgument("loss weights must be nonnegative");
            }
        }
        if (!(eta > 0.0 && eta < 1.0)) {
            throw InvalidArgument("opacity threshold must lie in (0, 1)");
        }
    }
};

struct SparsityResult {
    double loss = 0.0;
    double mean_opacity = 0.0;
    std::vector<Image> grad; // d loss / d opacity, one per input map
};

/// softplus(mean opacity - eta), the mean taken over every pixel of every map.
inline SparsityResult sparsity_above_threshold(const std::vector<const Image*>& opacity, double eta) {
    SparsityResult r;
    std::size_t count = 0;
    double sum = 0.0;
    for (const Image* o : opacity) {
        if (o->channels != 1) {
            throw InvalidArgument("opacity maps have one channel");
        }
        for (double v : o->data) {
            sum += v;
        }
        count += o->data.size();
    }
    if (count == 0) {
        throw InvalidArgument("sparsity term needs at least one pixel");
    }
    r.mean_opacity = sum / static_cast<double>(count);
    r.loss = softplus(r.mean_opacity - eta);
    const double g = sigmoid(r.mean_opacity - eta) / static_cast<double>(count);
    for (const Image* o : opacity) {
        r.grad.emplace_back(o->width, o->height, 1, g);
    }
    return r;
}

inline SparsityResult sparsity_above_threshold(const Image& opacity, double eta) {
    return sparsity_above_threshold(std::vector<const Image*>{&opacity}, eta);
}

struct IntersectionResult {
    double loss = 0.0;
    std::size_t inside_samples = 0;
    std::size_t total_samples = 0;
    FieldGradient grad;
};

/**
 * Mean activated density over the ray samples of the given renders that lie
 * inside the (watertight) object mesh; 0 when no sample is inside. Uses the
 * same sample positions as the renders, including those behind mesh hits.
 */
inline IntersectionResult intersection_penalty(const VoxelField& field, const IndexedMesh& mesh,
                                               const std::vector<const RenderTape*>& tapes) {
    IntersectionResult r;
    r.grad = FieldGradient(field.param_count(), field.version());
    std::vector<Vec3> inside;
    for (const RenderTape* tape : tapes) {
        if (tape->field_version != field.version() || tape->field_params != field.param_count()) {
            throw InvalidArgument("intersection_penalty: tape belongs to a different field snapshot");
        }
        for_each_ray_sample(field, *tape, [&](std::uint64_t, double, const Vec3& p) {
            ++r.total_samples;
            if (!mesh.empty() && mesh.point_inside(p)) {
                inside.push_back(p);
            }
        });
    }
    r.inside_samples = inside.size();
    if (inside.empty()) {
        return r;
    }
    const double scale = 1.0 / static_cast<double>(inside.size());
    double sum = 0.0;
    for (const Vec3& p : inside) {
        sum += field.query(p).density;
        field.accumulate_backward(p, Rgb::Zero(), scale, r.grad.values);
    }
    r.loss = sum * scale;
    return r;
}

/// A weighted image-space gradient routed through one recorded render.
struct RenderGradientTerm {
    const RenderTape* tape = nullptr;
    const Image* d_rgb = nullptr;     // may be null
    const Image* d_opacity = nullptr; // may be null
    double weight = 1.0;
};

/// A weighted gradient already in parameter space.
struct ParamGradientTerm {
    const FieldGradient* grad = nullptr;
    double weight = 1.0;
};

/**
 * Total parameter gradient of one step: sum of weight * render_backward over
 * the image terms plus weight * gradient over the parameter terms. Terms
 * sharing a tape are merged before the backward pass (the map is linear).
 * Every input must belong to the field's current snapshot.
 */
inline FieldGradient assemble_step_gradient(const VoxelField& field, const std::vector<RenderGradientTerm>& image_terms,
                                            const std::vector<ParamGradientTerm>& param_terms) {
    FieldGradient total(field.param_count(), field.version());
    std::vector<const RenderTape*> order;
    std::map<const RenderTape*, std::pair<Image, Image>> merged;
    for (const auto& term : image_terms) {
        if (term.weight == 0.0) {
            continue;
        }
        if (!term.tape) {
            throw InvalidArgument("gradient term without a render tape");
        }
        const Camera& cam = term.tape->camera;
        auto it = merged.find(term.tape);
        if (it == merged.end()) {
            it = merged.emplace(term.tape, std::pair{Image(cam.width, cam.height, 3), Image(cam.width, cam.height, 1)})
                     .first;
            order.push_back(term.tape);
        }
        auto add = [&](Image& dst, const Image* src) {
            if (!src) {
                return;
            }
            require_same_shape(dst, *src, "assemble_step_gradient");
            for (std::size_t i = 0; i < dst.data.size(); ++i) {
                dst.data[i] += term.weight * src->data[i];
            }
        };
        add(it->second.first, term.d_rgb);
        add(it->second.second, term.d_opacity);
    }
    for (const RenderTape* tape : order) {
        const auto& [d_rgb, d_op] = merged.at(tape);
        render_backward_accumulate(field, *tape, d_rgb, &d_op, total);
    }
    for (const auto& term : param_terms) {
        if (!term.grad || term.grad->field_version != field.version() ||
            term.grad->values.size() != field.param_count()) {
            throw InvalidArgument("assemble_step_gradient: gradient belongs to a different field snapshot");
        }
        if (term.weight == 0.0) {
            continue;
        }
        for (std::size_t i = 0; i < total.values.size(); ++i) {
            total.values[i] += term.weight * term.grad->values[i];
        }
    }
    return total;
}

} // namespace hoi
