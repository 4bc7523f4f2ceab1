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

#include "hoipose/common.hpp"

#include <array>
#include <limits>
#include <optional>
#include <utility>

namespace hoi {

/// Minimum accepted ray parameter; hits closer than this are ignored.
inline constexpr double kRayEpsilon = 1e-6;

struct TriangleMesh {
    std::vector<Vec3> vertices;
    std::vector<std::array<int, 3>> faces;
    std::vector<Rgb> vertex_colors;

    bool empty() const { return faces.empty(); }

    /// Throws InvalidArgument if an index is out of range or the color count is off.
    void validate() const {
        if (vertex_colors.size() != vertices.size()) {
            throw InvalidArgument("vertex_colors must have one entry per vertex");
        }
        const int n = static_cast<int>(vertices.size());
        for (const auto& f : faces) {
            for (int i : f) {
                if (i < 0 || i >= n) {
                    throw InvalidArgument("face index out of range");
                }
            }
        }
    }

    std::pair<Vec3, Vec3> bounds() const {
        Vec3 lo = Vec3::Constant(std::numeric_limits<double>::infinity());
        Vec3 hi = -lo;
        for (const auto& v : vertices) {
            lo = lo.cwiseMin(v);
            hi = hi.cwiseMax(v);
        }
        return {lo, hi};
    }
};

/// Concatenates meshes, offsetting face indices.
inline TriangleMesh merge_meshes(const TriangleMesh& a, const TriangleMesh& b) {
    TriangleMesh out = a;
    const int offset = static_cast<int>(a.vertices.size());
    out.vertices.insert(out.vertices.end(), b.vertices.begin(), b.vertices.end());
    out.vertex_colors.insert(out.vertex_colors.end(), b.vertex_colors.begin(), b.vertex_colors.end());
    for (auto f : b.faces) {
        out.faces.push_back({f[0] + offset, f[1] + offset, f[2] + offset});
    }
    return out;
}

/// Axis-aligned box as 12 outward-facing triangles.
inline TriangleMesh make_box(const Vec3& lo, const Vec3& hi, const Rgb& color = Rgb::Constant(0.5)) {
    TriangleMesh m;
    for (int i = 0; i < 8; ++i) {
        m.vertices.emplace_back((i & 1) ? hi.x() : lo.x(), (i & 2) ? hi.y() : lo.y(), (i & 4) ? hi.z() : lo.z());
        m.vertex_colors.push_back(color);
    }
    m.faces = {{0, 2, 1}, {1, 2, 3}, {4, 5, 6}, {5, 7, 6}, {0, 1, 4}, {1, 5, 4},
               {2, 6, 3}, {3, 6, 7}, {0, 4, 2}, {2, 4, 6}, {1, 3, 5}, {3, 7, 5}};
    return m;
}

struct Ray {
    Vec3 origin = Vec3::Zero();
    Vec3 direction = Vec3::UnitZ();

    Ray() = default;
    Ray(Vec3 o, const Vec3& d) : origin(std::move(o)), direction(d.normalized()) {}

    Vec3 at(double t) const { return origin + t * direction; }
};

struct Hit {
    double distance = 0.0;
    Vec3 point = Vec3::Zero();
    int face_index = -1;
    Vec3 barycentric = Vec3::Zero();
    Rgb color = Rgb::Constant(0.5);
};

namespace detail {

struct TriangleHit {
    double t;
    double u;
    double v;
    bool degenerate;
};

// Moeller-Trumbore. Returns nullopt on a miss; the degenerate flag marks
// grazing hits on an edge or a ray lying in the triangle plane.
inline std::optional<TriangleHit> intersect_triangle(const Ray& ray, const Vec3& a, const Vec3& b, const Vec3& c) {
    constexpr double kEdgeTol = 1e-9;
    const Vec3 e1 = b - a;
    const Vec3 e2 = c - a;
    const Vec3 p = ray.direction.cross(e2);
    const double det = e1.dot(p);
    const double scale = e1.norm() * e2.norm();
    if (std::abs(det) <= 1e-14 * scale) {
        const Vec3 n = e1.cross(e2);
        const double nn = n.norm();
        if (nn > 0 && std::abs((ray.origin - a).dot(n)) <= 1e-9 * nn) {
            return TriangleHit{0.0, 0.0, 0.0, true};
        }
        return std::nullopt;
    }
    const double inv = 1.0 / det;
    const Vec3 s = ray.origin - a;
    const double u = s.dot(p) * inv;
    if (u < -kEdgeTol || u > 1.0 + kEdgeTol) {
        return std::nullopt;
    }
    const Vec3 q = s.cross(e1);
    const double v = ray.direction.dot(q) * inv;
    if (v < -kEdgeTol || u + v > 1.0 + kEdgeTol) {
        return std::nullopt;
    }
    const double t = e2.dot(q) * inv;
    const bool on_edge = u <= kEdgeTol || v <= kEdgeTol || u + v >= 1.0 - kEdgeTol;
    return TriangleHit{t, std::clamp(u, 0.0, 1.0), std::clamp(v, 0.0, 1.0), on_edge};
}

inline Hit make_hit(const Ray& ray, const TriangleMesh& mesh, int face, const TriangleHit& th) {
    Hit h;
    h.distance = th.t;
    h.point = ray.at(th.t);
    h.face_index = face;
    double u = th.u;
    double v = th.v;
    if (u + v > 1.0) {
        const double s = u + v;
        u /= s;
        v /= s;
    }
    h.barycentric = Vec3(1.0 - u - v, u, v);
    const auto& f = mesh.faces[face];
    h.color = h.barycentric[0] * mesh.vertex_colors[f[0]] + h.barycentric[1] * mesh.vertex_colors[f[1]] +
              h.barycentric[2] * mesh.vertex_colors[f[2]];
    return h;
}

struct Aabb {
    Vec3 lo = Vec3::Constant(std::numeric_limits<double>::infinity());
    Vec3 hi = Vec3::Constant(-std::numeric_limits<double>::infinity());

    void extend(const Vec3& p) {
        lo = lo.cwiseMin(p);
        hi = hi.cwiseMax(p);
    }
    void extend(const Aabb& b) {
        lo = lo.cwiseMin(b.lo);
        hi = hi.cwiseMax(b.hi);
    }
    bool contains(const Vec3& p) const {
        return (p.array() >= lo.array()).all() && (p.array() <= hi.array()).all();
    }

    // Slab test; returns false if the ray misses or the entry is beyond tmax.
    bool hit(const Vec3& origin, const Vec3& inv_dir, double tmax) const {
        double t0 = 0.0;
        double t1 = tmax;
        for (int k = 0; k < 3; ++k) {
            double ta = (lo[k] - origin[k]) * inv_dir[k];
            double tb = (hi[k] - origin[k]) * inv_dir[k];
            if (ta > tb) {
                std::swap(ta, tb);
            }
            // NaN from 0*inf means the ray lies on the slab boundary; keep it.
            if (!std::isnan(ta)) {
                t0 = std::max(t0, ta);
            }
            if (!std::isnan(tb)) {
                t1 = std::min(t1, tb);
            }
            if (t0 > t1 * (1.0 + 1e-12) + 1e-12) {
                return false;
            }
        }
        return true;
    }
};

} // namespace detail

/// First hit by exhaustive test of every triangle. Kept as the reference
/// path for the accelerated query.
inline std::optional<Hit> first_hit_brute(const Ray& ray, const TriangleMesh& mesh) {
    std::optional<Hit> best;
    for (int f = 0; f < static_cast<int>(mesh.faces.size()); ++f) {
        const auto& idx = mesh.faces[f];
        const auto th = detail::intersect_triangle(ray, mesh.vertices[idx[0]], mesh.vertices[idx[1]],
                                                   mesh.vertices[idx[2]]);
        if (!th || th->t <= kRayEpsilon || (th->degenerate && th->t == 0.0)) {
            continue;
        }
        if (!best || th->t < best->distance) {
            best = detail::make_hit(ray, mesh, f, *th);
        }
    }
    return best;
}

/// Number of triangle crossings along the ray beyond kRayEpsilon, by brute force.
inline int count_crossings_brute(const Ray& ray, const TriangleMesh& mesh) {
    int count = 0;
    for (const auto& idx : mesh.faces) {
        const auto th = detail::intersect_triangle(ray, mesh.vertices[idx[0]], mesh.vertices[idx[1]],
                                                   mesh.vertices[idx[2]]);
        if (th && th->t > kRayEpsilon) {
            ++count;
        }
    }
    return count;
}

/// A triangle mesh with a bounding volume hierarchy for ray queries.
/// Read-only after construction.
class IndexedMesh {
public:
    IndexedMesh() = default;

    explicit IndexedMesh(TriangleMesh mesh) : mesh_(std::move(mesh)) {
        mesh_.validate();
        const int n = static_cast<int>(mesh_.faces.size());
        order_.resize(n);
        boxes_.resize(n);
        centroids_.resize(n);
        for (int f = 0; f < n; ++f) {
            order_[f] = f;
            for (int k = 0; k < 3; ++k) {
                boxes_[f].extend(mesh_.vertices[mesh_.faces[f][k]]);
            }
            centroids_[f] = 0.5 * (boxes_[f].lo + boxes_[f].hi);
            bounds_.extend(boxes_[f]);
        }
        if (n > 0) {
            nodes_.reserve(2 * n);
            build(0, n);
        }
    }

    const TriangleMesh& mesh() const { return mesh_; }
    bool empty() const { return mesh_.faces.empty(); }
    const detail::Aabb& bounds() const { return bounds_; }

    /// Closest hit with distance > kRayEpsilon; ties go to the lowest face index.
    std::optional<Hit> first_hit(const Ray& ray) const {
        if (nodes_.empty()) {
            return std::nullopt;
        }
        const Vec3 inv = ray.direction.cwiseInverse();
        double best_t = std::numeric_limits<double>::infinity();
        int best_face = -1;
        detail::TriangleHit best_th{};
        visit(ray, inv, [&](int f, const detail::TriangleHit& th) {
            if (th.t <= kRayEpsilon || (th.degenerate && th.t == 0.0)) {
                return;
            }
            if (th.t < best_t || (th.t == best_t && f < best_face)) {
                best_t = th.t;
                best_face = f;
                best_th = th;
            }
        }, [&]() { return best_t; });
        if (best_face < 0) {
            return std::nullopt;
        }
        return detail::make_hit(ray, mesh_, best_face, best_th);
    }

    /// Crossing count beyond kRayEpsilon and whether any crossing was degenerate.
    std::pair<int, bool> crossings(const Ray& ray) const {
        int count = 0;
        bool degenerate = false;
        if (nodes_.empty()) {
            return {0, false};
        }
        const Vec3 inv = ray.direction.cwiseInverse();
        visit(ray, inv, [&](int, const detail::TriangleHit& th) {
            if (th.t > kRayEpsilon) {
                ++count;
                degenerate = degenerate || th.degenerate;
            } else if (th.degenerate && std::abs(th.t) <= kRayEpsilon) {
                degenerate = true;
            }
        }, [] { return std::numeric_limits<double>::infinity(); });
        return {count, degenerate};
    }

    /// Ray-crossing parity test. A grazing ray is retried with jittered
    /// directions (up to 8 retries); if all attempts graze, majority vote.
    bool point_inside(const Vec3& p) const {
        if (nodes_.empty() || !bounds_.contains(p)) {
            return false;
        }
        const Vec3 base = Vec3(0.5377, 0.2859, 0.7931).normalized();
        int votes_in = 0;
        int votes = 0;
        for (int attempt = 0; attempt <= 8; ++attempt) {
            Vec3 dir = base;
            if (attempt > 0) {
                const Vec3 jitter(counter_uniform(17, attempt, 0) - 0.5, counter_uniform(17, attempt, 1) - 0.5,
                                  counter_uniform(17, attempt, 2) - 0.5);
                dir = (base + 0.8 * jitter).normalized();
            }
            const auto [count, degenerate] = crossings(Ray(p, dir));
            const bool inside = (count % 2) == 1;
            if (!degenerate) {
                return inside;
            }
            votes_in += inside ? 1 : 0;
            ++votes;
        }
        return 2 * votes_in > votes;
    }

private:
    struct Node {
        detail::Aabb box;
        int left = -1; // child index, or -1 for a leaf
        int right = -1;
        int begin = 0;
        int end = 0;
    };

    int build(int begin, int end) {
        const int id = static_cast<int>(nodes_.size());
        nodes_.emplace_back();
        detail::Aabb box;
        detail::Aabb cbox;
        for (int i = begin; i < end; ++i) {
            box.extend(boxes_[order_[i]]);
            cbox.extend(centroids_[order_[i]]);
        }
        nodes_[id].box = box;
        if (end - begin <= 4) {
            nodes_[id].begin = begin;
            nodes_[id].end = end;
            return id;
        }
        int axis = 0;
        const Vec3 ext = cbox.hi - cbox.lo;
        if (ext[1] > ext[axis]) {
            axis = 1;
        }
        if (ext[2] > ext[axis]) {
            axis = 2;
        }
        const int mid = (begin + end) / 2;
        std::nth_element(order_.begin() + begin, order_.begin() + mid, order_.begin() + end, [&](int a, int b) {
            return centroids_[a][axis] < centroids_[b][axis] || (centroids_[a][axis] == centroids_[b][axis] && a < b);
        });
        const int l = build(begin, mid);
        const int r = build(mid, end);
        nodes_[id].left = l;
        nodes_[id].right = r;
        return id;
    }

    template <typename OnHit, typename MaxT>
    void visit(const Ray& ray, const Vec3& inv, OnHit&& on_hit, MaxT&& max_t) const {
        int stack[128];
        int top = 0;
        stack[top++] = 0;
        while (top > 0) {
            const Node& node = nodes_[stack[--top]];
            if (!node.box.hit(ray.origin, inv, max_t() + 1e-9)) {
                continue;
            }
            if (node.left < 0) {
                for (int i = node.begin; i < node.end; ++i) {
                    const int f = order_[i];
                    const auto& idx = mesh_.faces[f];
                    const auto th = detail::intersect_triangle(ray, mesh_.vertices[idx[0]], mesh_.vertices[idx[1]],
                                                               mesh_.vertices[idx[2]]);
                    if (th) {
                        on_hit(f, *th);
                    }
                }
            } else {
                stack[top++] = node.left;
                stack[top++] = node.right;
            }
        }
    }

    TriangleMesh mesh_;
    std::vector<int> order_;
    std::vector<detail::Aabb> boxes_;
    std::vector<Vec3> centroids_;
    std::vector<Node> nodes_;
    detail::Aabb bounds_;
};

inline std::optional<Hit> first_hit(const Ray& ray, const IndexedMesh& mesh) { return mesh.first_hit(ray); }

inline bool point_inside(const Vec3& p, const IndexedMesh& mesh) { return mesh.point_inside(p); }

/// Pinhole camera. Pixel (0,0) is the top-left corner of the image; pixel
/// centers sit at half-integer coordinates.
struct Camera {
    Vec3 position = Vec3(0, -3, 0);
    Vec3 look_at = Vec3::Zero();
    Vec3 up = Vec3::UnitZ();
    double vertical_fov = deg2rad(40.0);
    int width = 64;
    int height = 64;

    void validate() const {
        if (!(vertical_fov > 0.0 && vertical_fov < kPi)) {
            throw InvalidArgument("vertical_fov must lie in (0, pi)");
        }
        const Vec3 fwd = look_at - position;
        if (fwd.norm() < 1e-12) {
            throw InvalidArgument("camera look_at coincides with position");
        }
        if (fwd.normalized().cross(up.normalized()).norm() < 1e-9) {
            throw InvalidArgument("camera up is parallel to the view direction");
        }
        if (width <= 0 || height <= 0) {
            throw InvalidArgument("camera resolution must be positive");
        }
    }

    Vec3 forward() const { return (look_at - position).normalized(); }
    Vec3 right() const { return forward().cross(up).normalized(); }
    Vec3 true_up() const { return right().cross(forward()); }
    double focal_px() const { return 0.5 * height / std::tan(0.5 * vertical_fov); }

    /// Camera-to-world transform with columns (right, up, -forward, position).
    Mat4 camera_to_world() const {
        Mat4 m = Mat4::Identity();
        m.block<3, 1>(0, 0) = right();
        m.block<3, 1>(0, 1) = true_up();
        m.block<3, 1>(0, 2) = -forward();
        m.block<3, 1>(0, 3) = position;
        return m;
    }

    /// Ray through continuous pixel coordinates (px, py).
    Ray ray_through(double px, double py) const {
        const double f = focal_px();
        const Vec3 d = forward() + ((px - 0.5 * width) / f) * right() - ((py - 0.5 * height) / f) * true_up();
        return Ray(position, d);
    }

    Ray pixel_ray(int x, int y) const { return ray_through(x + 0.5, y + 0.5); }
};

struct Projection {
    Vec2 pixel = Vec2::Zero();
    double depth = 0.0;
    bool behind = false;
};

/// Pinhole projection. `behind` is set when the view-space depth is not positive.
inline Projection project(const Vec3& p, const Camera& cam) {
    const Vec3 d = p - cam.position;
    const double z = d.dot(cam.forward());
    Projection out;
    out.depth = z;
    if (z <= 0.0) {
        out.behind = true;
        return out;
    }
    const double f = cam.focal_px();
    out.pixel = Vec2(0.5 * cam.width + f * d.dot(cam.right()) / z, 0.5 * cam.height - f * d.dot(cam.true_up()) / z);
    return out;
}

/// d(pixel)/d(point) for a point in front of the camera.
inline Eigen::Matrix<double, 2, 3> project_jacobian(const Vec3& p, const Camera& cam) {
    const Vec3 fwd = cam.forward();
    const Vec3 r = cam.right();
    const Vec3 u = cam.true_up();
    const Vec3 d = p - cam.position;
    const double z = d.dot(fwd);
    const double x = d.dot(r);
    const double y = d.dot(u);
    const double f = cam.focal_px();
    Eigen::Matrix<double, 2, 3> j;
    j.row(0) = f * (r.transpose() / z - x * fwd.transpose() / (z * z));
    j.row(1) = -f * (u.transpose() / z - y * fwd.transpose() / (z * z));
    return j;
}

/// Intersection interval of a ray with the sphere of given radius at the origin.
inline std::optional<std::pair<double, double>> ray_sphere(const Ray& ray, double radius) {
    const double b = ray.origin.dot(ray.direction);
    const double c = ray.origin.squaredNorm() - radius * radius;
    const double disc = b * b - c;
    if (disc <= 0.0) {
        return std::nullopt;
    }
    const double s = std::sqrt(disc);
    const double t0 = std::max(0.0, -b - s);
    const double t1 = -b + s;
    if (t1 <= t0) {
        return std::nullopt;
    }
    return std::make_pair(t0, t1);
}

} // namespace hoi
