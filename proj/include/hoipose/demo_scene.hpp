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

#include "hoipose/convert.hpp"
#include "hoipose/demo_humanoid.hpp"

namespace hoi {

/// Ray-cast image of a mesh with its interpolated vertex colors.
inline Image render_mesh(const IndexedMesh& mesh, const Camera& cam, const Rgb& background = Rgb::Ones()) {
    Image out(cam.width, cam.height, 3);
    parallel_chunks(cam.height, [&](int, int y0, int y1) {
        for (int y = y0; y < y1; ++y) {
            for (int x = 0; x < cam.width; ++x) {
                const auto hit = mesh.first_hit(cam.pixel_ray(x, y));
                const Rgb c = hit ? hit->color : background;
                for (int k = 0; k < 3; ++k) {
                    out.at(x, y, k) = c[k];
                }
            }
        }
    });
    return out;
}

/// Binary coverage mask of a mesh (1 where a pixel ray hits it).
inline Image mesh_mask(const IndexedMesh& mesh, const Camera& cam) {
    Image out(cam.width, cam.height, 1);
    for (int y = 0; y < cam.height; ++y) {
        for (int x = 0; x < cam.width; ++x) {
            out.at(x, y, 0) = mesh.first_hit(cam.pixel_ray(x, y)) ? 1.0 : 0.0;
        }
    }
    return out;
}

namespace demo {

/// Ground-truth scene: the demo humanoid in a known pose with the seat box,
/// seen from a ring of cameras.
struct Scene {
    SkinnedMesh rig;
    Pose pose;
    TriangleMesh object;
    std::vector<Camera> cameras;
    std::vector<Image> composite_targets; // human and object
    std::vector<Image> human_targets;     // human alone
};

inline std::vector<Camera> ring_cameras(int n_views, int resolution, double elevation_deg = 15.0, double distance = 3.0,
                                        double fov_deg = 40.0) {
    std::vector<Camera> cams;
    for (int i = 0; i < n_views; ++i) {
        cams.push_back(orbit_camera(2.0 * kPi * i / n_views, deg2rad(elevation_deg), distance, deg2rad(fov_deg),
                                    resolution, resolution));
    }
    return cams;
}

inline Scene make_scene(const Pose& pose, int n_views, int resolution, double spacing = 0.025) {
    Scene s;
    s.rig = humanoid(spacing);
    s.pose = pose;
    s.object = seat_box();
    s.cameras = ring_cameras(n_views, resolution);
    const TriangleMesh human = skin(s.rig, pose);
    const IndexedMesh both(merge_meshes(human, s.object));
    const IndexedMesh alone(human);
    for (const auto& c : s.cameras) {
        s.composite_targets.push_back(render_mesh(both, c));
        s.human_targets.push_back(render_mesh(alone, c));
    }
    return s;
}

} // namespace demo
} // namespace hoi
