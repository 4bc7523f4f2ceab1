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

#include "hoipose/skeleton.hpp"

#include <map>

namespace hoi {

/// Closed triangle mesh of the zero level set of `sdf` (negative inside),
/// by marching tetrahedra over a regular grid. Vertices on shared grid edges
/// are welded, so the result is watertight whenever the level set stays
/// inside the box.
template <typename Sdf>
TriangleMesh extract_isosurface(Sdf&& sdf, const Vec3& lo, const Vec3& hi, double spacing) {
    const int nx = static_cast<int>(std::ceil((hi.x() - lo.x()) / spacing)) + 1;
    const int ny = static_cast<int>(std::ceil((hi.y() - lo.y()) / spacing)) + 1;
    const int nz = static_cast<int>(std::ceil((hi.z() - lo.z()) / spacing)) + 1;
    auto id = [&](int x, int y, int z) { return (static_cast<long long>(z) * ny + y) * nx + x; };
    auto pos = [&](long long i) {
        const long long x = i % nx;
        const long long y = (i / nx) % ny;
        const long long z = i / (static_cast<long long>(nx) * ny);
        return Vec3(lo.x() + x * spacing, lo.y() + y * spacing, lo.z() + z * spacing);
    };
    std::vector<double> value(static_cast<std::size_t>(nx) * ny * nz);
    for (long long i = 0; i < static_cast<long long>(value.size()); ++i) {
        double v = sdf(pos(i));
        if (std::abs(v) < 1e-12) {
            v = 1e-12; // keep crossings off grid vertices
        }
        value[i] = v;
    }
    TriangleMesh mesh;
    std::map<std::pair<long long, long long>, int> edge_vertex;
    auto vertex_on = [&](long long a, long long b) {
        const auto key = std::minmax(a, b);
        auto it = edge_vertex.find(key);
        if (it != edge_vertex.end()) {
            return it->second;
        }
        const double va = value[key.first];
        const double vb = value[key.second];
        const double t = va / (va - vb);
        const int idx = static_cast<int>(mesh.vertices.size());
        mesh.vertices.push_back(pos(key.first) + t * (pos(key.second) - pos(key.first)));
        edge_vertex.emplace(key, idx);
        return idx;
    };
    auto emit = [&](int a, int b, int c, const Vec3& outward) {
        const Vec3 n = (mesh.vertices[b] - mesh.vertices[a]).cross(mesh.vertices[c] - mesh.vertices[a]);
        if (n.dot(outward) < 0) {
            std::swap(b, c);
        }
        mesh.faces.push_back({a, b, c});
    };
    // Kuhn decomposition around the 0-7 diagonal; corner bit 1 = x, 2 = y, 4 = z.
    static constexpr int kTets[6][4] = {{0, 1, 3, 7}, {0, 3, 2, 7}, {0, 2, 6, 7},
                                        {0, 6, 4, 7}, {0, 4, 5, 7}, {0, 5, 1, 7}};
    for (int z = 0; z + 1 < nz; ++z) {
        for (int y = 0; y + 1 < ny; ++y) {
            for (int x = 0; x + 1 < nx; ++x) {
                long long corner[8];
                for (int c = 0; c < 8; ++c) {
                    corner[c] = id(x + (c & 1), y + ((c >> 1) & 1), z + ((c >> 2) & 1));
                }
                for (const auto& tet : kTets) {
                    std::vector<long long> in;
                    std::vector<long long> out;
                    for (int k : tet) {
                        (value[corner[k]] < 0 ? in : out).push_back(corner[k]);
                    }
                    if (in.empty() || out.empty()) {
                        continue;
                    }
                    Vec3 c_in = Vec3::Zero();
                    Vec3 c_out = Vec3::Zero();
                    for (auto v : in) {
                        c_in += pos(v);
                    }
                    for (auto v : out) {
                        c_out += pos(v);
                    }
                    const Vec3 outward = c_out / out.size() - c_in / in.size();
                    if (in.size() == 1) {
                        emit(vertex_on(in[0], out[0]), vertex_on(in[0], out[1]), vertex_on(in[0], out[2]), outward);
                    } else if (in.size() == 3) {
                        emit(vertex_on(out[0], in[0]), vertex_on(out[0], in[1]), vertex_on(out[0], in[2]), outward);
                    } else {
                        const int a = vertex_on(in[0], out[0]);
                        const int b = vertex_on(in[0], out[1]);
                        const int c = vertex_on(in[1], out[1]);
                        const int d = vertex_on(in[1], out[0]);
                        emit(a, b, c, outward);
                        emit(a, c, d, outward);
                    }
                }
            }
        }
    }
    mesh.vertex_colors.assign(mesh.vertices.size(), Rgb::Constant(0.5));
    return mesh;
}

namespace demo {

enum Bone : int {
    kPelvis, kLeftHip, kRightHip, kSpine1, kLeftKnee, kRightKnee, kSpine2, kLeftAnkle,
    kRightAnkle, kSpine3, kLeftFoot, kRightFoot, kNeck, kLeftCollar, kRightCollar, kHead,
    kLeftShoulder, kRightShoulder, kLeftElbow, kRightElbow, kLeftWrist, kRightWrist, kLeftHand, kRightHand,
    kBoneCount
};

struct Capsule {
    int bone;
    Vec3 a;
    Vec3 b;
    double radius;
};

inline double segment_distance(const Vec3& p, const Vec3& a, const Vec3& b) {
    const Vec3 ab = b - a;
    const double len2 = ab.squaredNorm();
    const double t = len2 > 0 ? std::clamp((p - a).dot(ab) / len2, 0.0, 1.0) : 0.0;
    return (p - (a + t * ab)).norm();
}

/// Skeleton of the demo figure: z up, facing -y, A-pose arms, about 1.64 tall.
inline Skeleton skeleton() {
    Skeleton s;
    s.names = {"pelvis", "left_hip", "right_hip", "spine1", "left_knee", "right_knee", "spine2", "left_ankle",
               "right_ankle", "spine3", "left_foot", "right_foot", "neck", "left_collar", "right_collar", "head",
               "left_shoulder", "right_shoulder", "left_elbow", "right_elbow", "left_wrist", "right_wrist",
               "left_hand", "right_hand"};
    s.parents = {-1, 0, 0, 0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 9, 9, 12, 13, 14, 16, 17, 18, 19, 20, 21};
    const double arm = std::sqrt(0.5);
    auto mirror = [](const Vec3& v) { return Vec3(-v.x(), v.y(), v.z()); };
    std::vector<Vec3> j(kBoneCount);
    j[kPelvis] = Vec3(0, 0, 0);
    j[kLeftHip] = Vec3(0.09, 0, -0.06);
    j[kSpine1] = Vec3(0, 0, 0.1);
    j[kLeftKnee] = Vec3(0.1, 0, -0.42);
    j[kSpine2] = Vec3(0, 0, 0.22);
    j[kLeftAnkle] = Vec3(0.1, 0, -0.78);
    j[kSpine3] = Vec3(0, 0, 0.32);
    j[kLeftFoot] = Vec3(0.1, -0.1, -0.83);
    j[kNeck] = Vec3(0, 0, 0.48);
    j[kLeftCollar] = Vec3(0.06, 0, 0.44);
    j[kHead] = Vec3(0, 0, 0.55);
    j[kLeftShoulder] = Vec3(0.17, 0, 0.44);
    j[kLeftElbow] = j[kLeftShoulder] + 0.26 * Vec3(arm, 0, -arm);
    j[kLeftWrist] = j[kLeftElbow] + 0.24 * Vec3(arm, 0, -arm);
    j[kLeftHand] = j[kLeftWrist] + 0.08 * Vec3(arm, 0, -arm);
    for (auto [l, r] : {std::pair{kLeftHip, kRightHip}, {kLeftKnee, kRightKnee}, {kLeftAnkle, kRightAnkle},
                        {kLeftFoot, kRightFoot}, {kLeftCollar, kRightCollar}, {kLeftShoulder, kRightShoulder},
                        {kLeftElbow, kRightElbow}, {kLeftWrist, kRightWrist}, {kLeftHand, kRightHand}}) {
        j[r] = mirror(j[l]);
    }
    s.rest_joints = j;
    s.rest_pose.assign(kBoneCount, Vec3::Zero());
    return s;
}

/// Body volume as capsules, each owned by the bone that moves it.
inline std::vector<Capsule> capsules(const Skeleton& s) {
    const auto& j = s.rest_joints;
    const double arm = std::sqrt(0.5);
    std::vector<Capsule> c = {
        {kPelvis, j[kLeftHip], j[kRightHip], 0.1},
        {kPelvis, j[kPelvis], j[kSpine1], 0.115},
        {kSpine1, j[kSpine1], j[kSpine2], 0.115},
        {kSpine2, j[kSpine2], j[kSpine3], 0.12},
        {kSpine3, j[kSpine3], j[kNeck] - Vec3(0, 0, 0.04), 0.125},
        {kSpine3, j[kLeftCollar], j[kRightCollar], 0.1},
        {kNeck, j[kNeck], j[kHead], 0.055},
        {kHead, j[kHead] + Vec3(0, 0, 0.06), j[kHead] + Vec3(0, -0.01, 0.12), 0.1},
    };
    for (int side = 0; side < 2; ++side) {
        const int o = side; // right-side bones follow their left counterparts
        const double sx = side == 0 ? 1.0 : -1.0;
        c.push_back({kLeftHip + o, j[kLeftHip + o], j[kLeftKnee + o], 0.08});
        c.push_back({kLeftKnee + o, j[kLeftKnee + o], j[kLeftAnkle + o], 0.062});
        c.push_back({kLeftAnkle + o, j[kLeftAnkle + o], j[kLeftFoot + o], 0.05});
        c.push_back({kLeftFoot + o, j[kLeftFoot + o], j[kLeftFoot + o] + Vec3(0, -0.05, 0), 0.045});
        c.push_back({kLeftCollar + o, j[kLeftCollar + o], j[kLeftShoulder + o], 0.075});
        c.push_back({kLeftShoulder + o, j[kLeftShoulder + o], j[kLeftElbow + o], 0.058});
        c.push_back({kLeftElbow + o, j[kLeftElbow + o], j[kLeftWrist + o], 0.05});
        c.push_back({kLeftWrist + o, j[kLeftWrist + o], j[kLeftHand + o], 0.048});
        c.push_back({kLeftHand + o, j[kLeftHand + o], j[kLeftHand + o] + 0.05 * Vec3(sx * arm, 0, -arm), 0.045});
    }
    return c;
}

inline Rgb bone_color(int bone) {
    switch (bone) {
    case kHead:
    case kNeck:
    case kLeftWrist:
    case kRightWrist:
    case kLeftHand:
    case kRightHand:
    case kLeftElbow:
    case kRightElbow:
        return Rgb(0.87, 0.68, 0.55); // skin
    case kLeftHip:
    case kRightHip:
    case kLeftKnee:
    case kRightKnee:
    case kPelvis:
        return Rgb(0.15, 0.25, 0.55); // trousers
    case kLeftAnkle:
    case kRightAnkle:
    case kLeftFoot:
    case kRightFoot:
        return Rgb(0.2, 0.15, 0.1); // shoes
    default:
        return Rgb(0.8, 0.25, 0.2); // shirt
    }
}

/// The bundled 24-bone humanoid. Weights blend between the nearest capsule
/// surfaces within `blend` scene units; vertices farther from any other bone
/// get weight exactly 1 on their own bone.
inline SkinnedMesh humanoid(double spacing = 0.025, double blend = 0.04) {
    SkinnedMesh sm;
    sm.skeleton = skeleton();
    const auto caps = capsules(sm.skeleton);
    auto sdf = [&](const Vec3& p) {
        double d = std::numeric_limits<double>::infinity();
        for (const auto& c : caps) {
            d = std::min(d, segment_distance(p, c.a, c.b) - c.radius);
        }
        return d;
    };
    sm.mesh = extract_isosurface(sdf, Vec3(-0.8, -0.3, -0.95), Vec3(0.8, 0.25, 0.85), spacing);
    sm.skeleton.weights.resize(sm.mesh.vertices.size());
    for (std::size_t v = 0; v < sm.mesh.vertices.size(); ++v) {
        const Vec3& p = sm.mesh.vertices[v];
        std::vector<double> dist(kBoneCount, std::numeric_limits<double>::infinity());
        for (const auto& c : caps) {
            dist[c.bone] = std::min(dist[c.bone], segment_distance(p, c.a, c.b) - c.radius);
        }
        const double best = *std::min_element(dist.begin(), dist.end());
        std::vector<BoneWeight> ws;
        double total = 0.0;
        for (int b = 0; b < kBoneCount; ++b) {
            const double t = 1.0 - (dist[b] - best) / blend;
            if (t > 0.0) {
                ws.push_back({b, t * t});
                total += t * t;
            }
        }
        std::sort(ws.begin(), ws.end(), [](const auto& x, const auto& y) { return x.weight > y.weight; });
        if (ws.size() > 4) {
            ws.resize(4);
            total = 0.0;
            for (const auto& w : ws) {
                total += w.weight;
            }
        }
        Rgb color = Rgb::Zero();
        for (auto& w : ws) {
            w.weight /= total;
            color += w.weight * bone_color(w.bone);
        }
        sm.skeleton.weights[v] = std::move(ws);
        sm.mesh.vertex_colors[v] = color;
    }
    return sm;
}

/// Seated pose: hips flexed forward 90 degrees, knees bent back 90 degrees,
/// forearms raised slightly. Root translation lifts the pelvis to z = 0.15.
inline Pose seated_pose() {
    Pose p;
    p.rotations.assign(kBoneCount, Vec3::Zero());
    p.rotations[kLeftHip] = Vec3(-kPi / 2, 0, 0);
    p.rotations[kRightHip] = Vec3(-kPi / 2, 0, 0);
    p.rotations[kLeftKnee] = Vec3(kPi / 2, 0, 0);
    p.rotations[kRightKnee] = Vec3(kPi / 2, 0, 0);
    p.rotations[kLeftElbow] = Vec3(-0.5, 0, 0);
    p.rotations[kRightElbow] = Vec3(-0.5, 0, 0);
    p.root_translation = Vec3(0, 0.05, 0.15);
    return p;
}

/// Box the seated figure rests on.
inline TriangleMesh seat_box() {
    return make_box(Vec3(-0.3, -0.15, -0.5), Vec3(0.3, 0.35, 0.0), Rgb(0.55, 0.4, 0.25));
}

} // namespace demo
} // namespace hoi
