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

#include "hoipose/geometry.hpp"

#include <string>
#include <utility>

namespace hoi {

inline Mat3 skew(const Vec3& v) {
    Mat3 m;
    m << 0, -v.z(), v.y(), v.z(), 0, -v.x(), -v.y(), v.x(), 0;
    return m;
}

/// Rodrigues' formula for an axis-angle vector (angle = norm, in radians).
inline Mat3 rotation_from_axis_angle(const Vec3& v) {
    const double theta = v.norm();
    const Mat3 k = skew(v);
    if (theta < 1e-8) {
        return Mat3::Identity() + k + 0.5 * k * k;
    }
    const double a = std::sin(theta) / theta;
    const double b = (1.0 - std::cos(theta)) / (theta * theta);
    return Mat3::Identity() + a * k + b * k * k;
}

/// Right Jacobian of SO(3): d(R(v) y)/dv = -R(v) [y]x J_r(v).
inline Mat3 so3_right_jacobian(const Vec3& v) {
    const double theta = v.norm();
    const Mat3 k = skew(v);
    if (theta < 1e-8) {
        return Mat3::Identity() - 0.5 * k + (1.0 / 6.0) * k * k;
    }
    const double t2 = theta * theta;
    const double a = (1.0 - std::cos(theta)) / t2;
    const double b = (theta - std::sin(theta)) / (t2 * theta);
    return Mat3::Identity() - a * k + b * k * k;
}

/// Maps an axis-angle vector to the equivalent one with angle at most pi.
inline Vec3 canonical_axis_angle(const Vec3& v) {
    const double theta = v.norm();
    if (theta <= kPi) {
        return v;
    }
    double wrapped = std::fmod(theta, 2.0 * kPi);
    if (wrapped > kPi) {
        wrapped -= 2.0 * kPi;
    }
    return v * (wrapped / theta);
}

inline Mat4 rigid(const Mat3& r, const Vec3& t) {
    Mat4 m = Mat4::Identity();
    m.block<3, 3>(0, 0) = r;
    m.block<3, 1>(0, 3) = t;
    return m;
}

inline Mat4 rigid_inverse(const Mat4& m) {
    const Mat3 rt = m.block<3, 3>(0, 0).transpose();
    return rigid(rt, -rt * m.block<3, 1>(0, 3));
}

inline Vec3 transform_point(const Mat4& m, const Vec3& p) { return m.block<3, 3>(0, 0) * p + m.block<3, 1>(0, 3); }

struct BoneWeight {
    int bone = 0;
    double weight = 0.0;
};

/// Kinematic tree with rest joint locations and per-vertex skinning weights.
/// Bones are stored so that every parent precedes its children.
struct Skeleton {
    std::vector<std::string> names;
    std::vector<int> parents; // -1 for the root
    std::vector<Vec3> rest_joints;
    std::vector<Vec3> rest_pose; // axis-angle per bone
    std::vector<std::vector<BoneWeight>> weights; // per vertex

    int bone_count() const { return static_cast<int>(parents.size()); }

    void validate() const {
        const int b = bone_count();
        if (b == 0) {
            throw InvalidArgument("skeleton has no bones");
        }
        if (static_cast<int>(rest_joints.size()) != b || static_cast<int>(rest_pose.size()) != b) {
            throw InvalidArgument("skeleton arrays disagree on bone count");
        }
        if (!names.empty() && static_cast<int>(names.size()) != b) {
            throw InvalidArgument("skeleton names disagree on bone count");
        }
        int roots = 0;
        for (int i = 0; i < b; ++i) {
            if (parents[i] == -1) {
                ++roots;
            } else if (parents[i] < 0 || parents[i] >= i) {
                // parent-before-child ordering rules out cycles
                throw InvalidArgument("bone " + std::to_string(i) + " must come after its parent");
            }
        }
        if (roots != 1 || parents[0] != -1) {
            throw InvalidArgument("skeleton must have exactly one root at index 0");
        }
        for (std::size_t v = 0; v < weights.size(); ++v) {
            double sum = 0.0;
            for (const auto& bw : weights[v]) {
                if (bw.bone < 0 || bw.bone >= b || bw.weight < 0.0) {
                    throw InvalidArgument("invalid skinning weight at vertex " + std::to_string(v));
                }
                sum += bw.weight;
            }
            if (std::abs(sum - 1.0) > 1e-6) {
                throw InvalidArgument("skinning weights of vertex " + std::to_string(v) + " do not sum to 1");
            }
        }
    }
};

struct Pose {
    std::vector<Vec3> rotations; // axis-angle per bone
    Vec3 root_translation = Vec3::Zero();

    static Pose rest(const Skeleton& s) { return Pose{s.rest_pose, Vec3::Zero()}; }

    void canonicalize() {
        for (auto& r : rotations) {
            r = canonical_axis_angle(r);
        }
    }

    /// Flattened parameter vector: 3 per bone, then the root translation.
    Eigen::VectorXd to_vector() const {
        Eigen::VectorXd x(3 * rotations.size() + 3);
        for (std::size_t b = 0; b < rotations.size(); ++b) {
            x.segment<3>(3 * b) = rotations[b];
        }
        x.tail<3>() = root_translation;
        return x;
    }

    static Pose from_vector(const Eigen::VectorXd& x) {
        Pose p;
        const int b = static_cast<int>((x.size() - 3) / 3);
        p.rotations.resize(b);
        for (int i = 0; i < b; ++i) {
            p.rotations[i] = x.segment<3>(3 * i);
        }
        p.root_translation = x.tail<3>();
        return p;
    }
};

struct SkinnedMesh {
    TriangleMesh mesh;
    Skeleton skeleton;

    void validate() const {
        mesh.validate();
        skeleton.validate();
        if (skeleton.weights.size() != mesh.vertices.size()) {
            throw InvalidArgument("skinning weight rows must match the vertex count");
        }
    }
};

/// Global bone transforms G_b, composed root to leaf. Local offsets are the
/// rest joint differences to the parent; the root translation is added to the
/// root transform.
inline std::vector<Mat4> forward_kinematics(const Skeleton& s, const Pose& pose) {
    const int b = s.bone_count();
    if (static_cast<int>(pose.rotations.size()) != b) {
        throw InvalidArgument("pose bone count does not match skeleton");
    }
    std::vector<Mat4> g(b);
    for (int i = 0; i < b; ++i) {
        const int p = s.parents[i];
        const Mat3 r = rotation_from_axis_angle(pose.rotations[i]);
        if (p < 0) {
            g[i] = rigid(r, s.rest_joints[i] + pose.root_translation);
        } else {
            g[i] = g[p] * rigid(r, s.rest_joints[i] - s.rest_joints[p]);
        }
    }
    return g;
}

/// G_b(pose) * G_b(rest)^-1 per bone.
inline std::vector<Mat4> relative_transforms(const Skeleton& s, const Pose& pose) {
    const auto g = forward_kinematics(s, pose);
    const auto g0 = forward_kinematics(s, Pose::rest(s));
    std::vector<Mat4> out(g.size());
    for (std::size_t i = 0; i < g.size(); ++i) {
        out[i] = g[i] * rigid_inverse(g0[i]);
    }
    return out;
}

/// Linear blend skinning; faces and colors are carried over unchanged.
inline TriangleMesh skin(const SkinnedMesh& sm, const Pose& pose) {
    const auto a = relative_transforms(sm.skeleton, pose);
    TriangleMesh out = sm.mesh;
    for (std::size_t v = 0; v < out.vertices.size(); ++v) {
        Mat4 blend = Mat4::Zero();
        for (const auto& bw : sm.skeleton.weights[v]) {
            blend += bw.weight * a[bw.bone];
        }
        out.vertices[v] = transform_point(blend, sm.mesh.vertices[v]);
    }
    return out;
}

inline std::vector<Vec3> joint_positions(const Skeleton& s, const Pose& pose) {
    const auto a = relative_transforms(s, pose);
    std::vector<Vec3> out(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        out[i] = transform_point(a[i], s.rest_joints[i]);
    }
    return out;
}

/// Joint positions with their Jacobian: rows 3j..3j+2 hold d(joint j)/d(pose
/// vector) in the layout of Pose::to_vector().
inline std::pair<std::vector<Vec3>, Eigen::MatrixXd> joint_positions_with_jacobian(const Skeleton& s,
                                                                                    const Pose& pose) {
    const int nb = s.bone_count();
    const auto g = forward_kinematics(s, pose);
    const auto joints = joint_positions(s, pose);
    Eigen::MatrixXd jac = Eigen::MatrixXd::Zero(3 * nb, 3 * nb + 3);
    std::vector<Mat3> jr(nb);
    for (int b = 0; b < nb; ++b) {
        jr[b] = so3_right_jacobian(pose.rotations[b]);
    }
    for (int j = 0; j < nb; ++j) {
        jac.block<3, 3>(3 * j, 3 * nb) = Mat3::Identity();
        // With a zero rest pose the own-rotation block vanishes (z = 0).
        for (int b = j; b >= 0; b = s.parents[b]) {
            const Mat3 rw = g[b].block<3, 3>(0, 0);
            const Vec3 z = rw.transpose() * (joints[j] - g[b].block<3, 1>(0, 3));
            jac.block<3, 3>(3 * j, 3 * b) = -rw * skew(z) * jr[b];
        }
    }
    return {joints, jac};
}

/// Vertical extent of the rest mesh bounding box; the error normalizer for pose fits.
inline double body_height(const TriangleMesh& rest_mesh) {
    const auto [lo, hi] = rest_mesh.bounds();
    return hi.z() - lo.z();
}

} // namespace hoi
