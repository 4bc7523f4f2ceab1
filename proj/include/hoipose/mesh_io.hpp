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

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>

namespace hoi {

/**
 * Parses the OBJ subset used throughout the project:
 *
 *   v x y z [r g b]   vertex, optional color in [0,1]
 *   f i j k           triangle, 1-based indices
 *   # ...             comment
 *
 * Anything else (normals, texture coordinates, polygons, negative indices)
 * is rejected with the offending line number. Vertices without a color get
 * mid-gray.
 */
inline TriangleMesh parse_obj(std::istream& in) {
    TriangleMesh mesh;
    std::vector<std::pair<std::array<long, 3>, int>> raw_faces;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') {
            line.pop_back();
        }
        const auto first = line.find_first_not_of(" \t");
        if (first == std::string::npos || line[first] == '#') {
            continue;
        }
        std::istringstream ls(line.substr(first));
        std::string tag;
        ls >> tag;
        std::vector<std::string> tokens;
        for (std::string tok; ls >> tok;) {
            if (tok[0] == '#') {
                break;
            }
            tokens.push_back(tok);
        }
        auto to_double = [&](const std::string& s) {
            std::size_t used = 0;
            double v = 0;
            try {
                v = std::stod(s, &used);
            } catch (const std::exception&) {
                throw ParseError("invalid number '" + s + "'", line_no);
            }
            if (used != s.size() || !std::isfinite(v)) {
                throw ParseError("invalid number '" + s + "'", line_no);
            }
            return v;
        };
        if (tag == "v") {
            if (tokens.size() != 3 && tokens.size() != 6) {
                throw ParseError("vertex needs 3 or 6 numbers", line_no);
            }
            mesh.vertices.emplace_back(to_double(tokens[0]), to_double(tokens[1]), to_double(tokens[2]));
            if (tokens.size() == 6) {
                mesh.vertex_colors.emplace_back(to_double(tokens[3]), to_double(tokens[4]), to_double(tokens[5]));
            } else {
                mesh.vertex_colors.push_back(Rgb::Constant(0.5));
            }
        } else if (tag == "f") {
            if (tokens.size() != 3) {
                throw ParseError("only triangular faces are supported", line_no);
            }
            std::array<long, 3> idx{};
            for (int k = 0; k < 3; ++k) {
                std::size_t used = 0;
                long v = 0;
                try {
                    v = std::stol(tokens[k], &used);
                } catch (const std::exception&) {
                    throw ParseError("invalid face index '" + tokens[k] + "'", line_no);
                }
                if (used != tokens[k].size()) {
                    throw ParseError("invalid face index '" + tokens[k] + "'", line_no);
                }
                if (v <= 0) {
                    throw ParseError("face indices are 1-based and positive", line_no);
                }
                idx[k] = v;
            }
            raw_faces.emplace_back(idx, line_no);
        } else {
            throw ParseError("unsupported OBJ statement '" + tag + "'", line_no);
        }
    }
    const long n = static_cast<long>(mesh.vertices.size());
    for (const auto& [idx, ln] : raw_faces) {
        for (long i : idx) {
            if (i > n) {
                throw ParseError("face index " + std::to_string(i) + " out of range", ln);
            }
        }
        mesh.faces.push_back({static_cast<int>(idx[0] - 1), static_cast<int>(idx[1] - 1), static_cast<int>(idx[2] - 1)});
    }
    return mesh;
}

inline TriangleMesh load_obj(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw Error("cannot open OBJ file " + path.string());
    }
    return parse_obj(in);
}

inline void write_obj(std::ostream& out, const TriangleMesh& mesh) {
    out << std::setprecision(9);
    for (std::size_t i = 0; i < mesh.vertices.size(); ++i) {
        const auto& v = mesh.vertices[i];
        const auto& c = mesh.vertex_colors[i];
        out << "v " << v.x() << ' ' << v.y() << ' ' << v.z() << ' ' << c.x() << ' ' << c.y() << ' ' << c.z() << '\n';
    }
    for (const auto& f : mesh.faces) {
        out << "f " << f[0] + 1 << ' ' << f[1] + 1 << ' ' << f[2] + 1 << '\n';
    }
}

inline void save_obj(const std::filesystem::path& path, const TriangleMesh& mesh) {
    std::ofstream out(path);
    if (!out) {
        throw Error("cannot write OBJ file " + path.string());
    }
    write_obj(out, mesh);
}

} // namespace hoi
