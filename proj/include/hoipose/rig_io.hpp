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

#include "hoipose/mesh_io.hpp"
#include "hoipose/skeleton.hpp"

#include <json.hpp>

#include <filesystem>
#include <fstream>

namespace hoi {

using json = nlohmann::json;

inline json vec_to_json(const Vec3& v) { return json::array({v.x(), v.y(), v.z()}); }

inline Vec3 vec_from_json(const json& j) {
    if (!j.is_array() || j.size() != 3) {
        throw ParseError("expected a 3-vector", 0);
    }
    return Vec3(j[0].get<double>(), j[1].get<double>(), j[2].get<double>());
}

inline json read_json_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw Error("cannot open " + path.string());
    }
    try {
        return json::parse(in);
    } catch (const json::parse_error& e) {
        throw ParseError(path.string() + ": " + e.what(), 0);
    }
}

inline void write_json_file(const std::filesystem::path& path, const json& j) {
    std::ofstream out(path);
    if (!out) {
        throw Error("cannot write " + path.string());
    }
    out << j.dump(2) << '\n';
}

/// Rig document:
/// {"mesh": "rest.obj",
///  "joints": [{"name": ..., "parent": int | -1, "rest_position": [x,y,z]}, ...],
///  "rest_pose": [[ax,ay,az], ...],
///  "weights": [[[bone, w], ...] per vertex]}
/// Parents must precede their children.
inline Skeleton skeleton_from_json(const json& j) {
    Skeleton s;
    try {
        for (const auto& jj : j.at("joints")) {
            s.names.push_back(jj.value("name", std::string{}));
            s.parents.push_back(jj.at("parent").get<int>());
            s.rest_joints.push_back(vec_from_json(jj.at("rest_position")));
        }
        if (j.contains("rest_pose")) {
            for (const auto& r : j.at("rest_pose")) {
                s.rest_pose.push_back(canonical_axis_angle(vec_from_json(r)));
            }
        } else {
            s.rest_pose.assign(s.parents.size(), Vec3::Zero());
        }
        for (const auto& row : j.at("weights")) {
            std::vector<BoneWeight> ws;
            for (const auto& e : row) {
                ws.push_back({e.at(0).get<int>(), e.at(1).get<double>()});
            }
            s.weights.push_back(std::move(ws));
        }
    } catch (const json::exception& e) {
        throw ParseError(std::string("malformed rig: ") + e.what(), 0);
    }
    s.validate();
    return s;
}

inline json skeleton_to_json(const Skeleton& s, const std::string& mesh_file) {
    json j;
    j["mesh"] = mesh_file;
    j["joints"] = json::array();
    for (int b = 0; b < s.bone_count(); ++b) {
        j["joints"].push_back({{"name", s.names.empty() ? std::string{} : s.names[b]},
                               {"parent", s.parents[b]},
                               {"rest_position", vec_to_json(s.rest_joints[b])}});
    }
    j["rest_pose"] = json::array();
    for (const auto& r : s.rest_pose) {
        j["rest_pose"].push_back(vec_to_json(r));
    }
    j["weights"] = json::array();
    for (const auto& row : s.weights) {
        json jr = json::array();
        for (const auto& bw : row) {
            jr.push_back(json::array({bw.bone, bw.weight}));
        }
        j["weights"].push_back(std::move(jr));
    }
    return j;
}

/// Loads a rig file and the OBJ it references (resolved relative to the rig).
inline SkinnedMesh load_rig(const std::filesystem::path& path) {
    const json j = read_json_file(path);
    SkinnedMesh sm;
    sm.skeleton = skeleton_from_json(j);
    if (!j.contains("mesh")) {
        throw ParseError(path.string() + ": rig has no \"mesh\" entry", 0);
    }
    sm.mesh = load_obj(path.parent_path() / j.at("mesh").get<std::string>());
    sm.validate();
    return sm;
}

inline void save_rig(const std::filesystem::path& path, const SkinnedMesh& sm) {
    const auto obj_name = path.stem().string() + ".obj";
    save_obj(path.parent_path() / obj_name, sm.mesh);
    write_json_file(path, skeleton_to_json(sm.skeleton, obj_name));
}

/// Pose document: {"root_translation": [x,y,z], "rotations": [[ax,ay,az], ...]}
inline Pose pose_from_json(const json& j) {
    Pose p;
    try {
        p.root_translation = vec_from_json(j.at("root_translation"));
        for (const auto& r : j.at("rotations")) {
            p.rotations.push_back(vec_from_json(r));
        }
    } catch (const json::exception& e) {
        throw ParseError(std::string("malformed pose: ") + e.what(), 0);
    }
    p.canonicalize();
    return p;
}

inline json pose_to_json(const Pose& p) {
    json j;
    j["root_translation"] = vec_to_json(p.root_translation);
    j["rotations"] = json::array();
    for (const auto& r : p.rotations) {
        j["rotations"].push_back(vec_to_json(r));
    }
    return j;
}

inline Pose load_pose(const std::filesystem::path& path) { return pose_from_json(read_json_file(path)); }

inline void save_pose(const std::filesystem::path& path, const Pose& p) { write_json_file(path, pose_to_json(p)); }

} // namespace hoi
