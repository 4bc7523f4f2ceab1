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

#include "hoipose/optim.hpp"
#include "hoipose/render.hpp"
#include "hoipose/rig_io.hpp"
#include "hoipose/skeleton.hpp"

#include <random>

namespace hoi {

// ---------------------------------------------------------------------------
// mesh -> field

/// Nearest-vertex lookup on a uniform bucket grid.
class NearestVertex {
public:
    explicit NearestVertex(const TriangleMesh& mesh) : mesh_(&mesh) {
        if (mesh.vertices.empty()) {
            throw InvalidArgument("nearest-vertex lookup needs vertices");
        }
        auto [lo, hi] = mesh.bounds();
        lo_ = lo;
        const double extent = (hi - lo).maxCoeff();
        const double target = std::cbrt(static_cast<double>(mesh.vertices.size()) / 2.0);
        cell_ = std::max(extent / std::max(1.0, target), 1e-9);
        for (int k = 0; k < 3; ++k) {
            dims_[k] = std::max(1, static_cast<int>(std::ceil((hi[k] - lo[k]) / cell_)) + 1);
        }
        buckets_.resize(static_cast<std::size_t>(dims_[0]) * dims_[1] * dims_[2]);
        for (int v = 0; v < static_cast<int>(mesh.vertices.size()); ++v) {
            buckets_[bucket(cell_of(mesh.vertices[v]))].push_back(v);
        }
    }

    int nearest(const Vec3& p) const {
        const auto c = cell_of(p);
        int best = -1;
        double best_d2 = std::numeric_limits<double>::infinity();
        const int max_ring = std::max({dims_[0], dims_[1], dims_[2]});
        for (int ring = 0; ring <= max_ring; ++ring) {
            // once a candidate exists, one more ring settles it
            for (int z = c[2] - ring; z <= c[2] + ring; ++z) {
                for (int y = c[1] - ring; y <= c[1] + ring; ++y) {
                    for (int x = c[0] - ring; x <= c[0] + ring; ++x) {
                        if (std::max({std::abs(x - c[0]), std::abs(y - c[1]), std::abs(z - c[2])}) != ring) {
                            continue;
                        }
                        if (x < 0 || y < 0 || z < 0 || x >= dims_[0] || y >= dims_[1] || z >= dims_[2]) {
                            continue;
                        }
                        for (int v : buckets_[bucket({x, y, z})]) {
                            const double d2 = (mesh_->vertices[v] - p).squaredNorm();
                            if (d2 < best_d2 || (d2 == best_d2 && v < best)) {
                                best_d2 = d2;
                                best = v;
                            }
                        }
                    }
                }
            }
            // every unvisited vertex is at least (ring - gap) cells away
            if (best >= 0) {
                const double gap = outside_distance(p);
                if (std::sqrt(best_d2) <= ring * cell_ - gap) {
                    break;
                }
            }
        }
        return best;
    }

private:
    std::array<int, 3> cell_of(const Vec3& p) const {
        std::array<int, 3> c{};
        for (int k = 0; k < 3; ++k) {
            c[k] = std::clamp(static_cast<int>(std::floor((p[k] - lo_[k]) / cell_)), 0, dims_[k] - 1);
        }
        return c;
    }
    std::size_t bucket(const std::array<int, 3>& c) const {
        return (static_cast<std::size_t>(c[2]) * dims_[1] + c[1]) * dims_[0] + c[0];
    }
    // distance from p to the grid box, which clamping hides from the ring bound
    double outside_distance(const Vec3& p) const {
        const Vec3 hi = lo_ + cell_ * Vec3(dims_[0], dims_[1], dims_[2]);
        return (p - p.cwiseMax(lo_).cwiseMin(hi)).norm();
    }

    const TriangleMesh* mesh_;
    Vec3 lo_;
    double cell_ = 1.0;
    std::array<int, 3> dims_{};
    std::vector<std::vector<int>> buckets_;
};

struct MeshToFieldConfig {
    int resolution = 64;
    int n_points = 1000;     // per iteration
    int iterations = 10000;
    double lr = 0.05;        // on raw density / raw target and on color logits
    double tau_max = 1e4;    // activated density standing in for "infinitely dense"
    double sample_sigma = 1.0;
    std::uint64_t seed = 0;

    void validate() const {
        if (resolution < 2) {
            throw InvalidArgument("mesh_to_field: resolution must be at least 2");
        }
        if (n_points <= 0) {
            throw InvalidArgument("mesh_to_field: n_points must be positive");
        }
        if (iterations < 0) {
            throw InvalidArgument("mesh_to_field: iterations must be nonnegative");
        }
        if (!(lr > 0.0) || !(tau_max > 0.0) || !(sample_sigma > 0.0)) {
            throw InvalidArgument("mesh_to_field: lr, tau_max and sample_sigma must be positive");
        }
    }
};

struct MeshToFieldResult {
    VoxelField field;
    bool mesh_inside_support = true;
    std::size_t supervised_points = 0; // samples that fell inside the support ball
    std::size_t inside_points = 0;     // of those, inside the mesh
};

/**
 * Supervised fit of a field to a watertight mesh. Each iteration draws
 * n_points from N(0, sigma^2 I); points inside the mesh target raw density
 * +R = softplus^-1(tau_max) and the nearest vertex's color, points outside
 * target -R with no color term. Samples outside the support ball are dropped
 * since the field is zero there regardless. The density fit runs on raw/R so
 * the step size is scale free; color logits are fitted directly.
 */
inline MeshToFieldResult mesh_to_field(const TriangleMesh& mesh, const MeshToFieldConfig& cfg) {
    cfg.validate();
    mesh.validate();
    if (mesh.faces.empty()) {
        throw InvalidArgument("mesh_to_field: mesh has no faces");
    }
    MeshToFieldResult res;
    res.field = VoxelField(cfg.resolution);
    VoxelField& f = res.field;
    const double radius = f.support_radius();
    for (const Vec3& v : mesh.vertices) {
        if (v.norm() > radius) {
            res.mesh_inside_support = false;
            break;
        }
    }
    const IndexedMesh indexed(mesh);
    const NearestVertex nearest(mesh);
    const double big = softplus_inverse(cfg.tau_max);
    const std::size_t nv = f.voxel_count();

    // density as u = raw / big, colors as logits
    std::vector<double> u(nv, -1.0);
    std::vector<double> logits(3 * nv, 0.0);
    AdamConfig acfg;
    acfg.lr = cfg.lr;
    SparseAdam opt_u(nv, acfg);
    SparseAdam opt_c(3 * nv, acfg);
    std::vector<double> grad_u(nv, 0.0);
    std::vector<double> grad_c(3 * nv, 0.0);
    std::vector<char> touched(nv, 0);
    std::vector<std::size_t> touched_list;

    struct Sample {
        Vec3 p;
        Stencil s;
        bool inside = false;
        Rgb target = Rgb::Zero();
    };
    std::vector<Sample> batch;
    std::mt19937_64 rng(cfg.seed);
    std::normal_distribution<double> normal(0.0, cfg.sample_sigma);
    const double inv_n = 1.0 / cfg.n_points;

    for (int it = 0; it < cfg.iterations; ++it) {
        batch.clear();
        for (int i = 0; i < cfg.n_points; ++i) {
            const Vec3 p(normal(rng), normal(rng), normal(rng));
            if (p.norm() < radius) {
                batch.push_back({p, {}, false, Rgb::Zero()});
            }
        }
        parallel_chunks(static_cast<int>(batch.size()), [&](int, int b, int e) {
            for (int i = b; i < e; ++i) {
                Sample& s = batch[i];
                s.s = f.stencil(s.p);
                s.inside = indexed.point_inside(s.p);
                if (s.inside) {
                    s.target = mesh.vertex_colors[nearest.nearest(s.p)];
                }
            }
        });
        touched_list.clear();
        for (const Sample& s : batch) {
            ++res.supervised_points;
            res.inside_points += s.inside ? 1 : 0;
            double pred = 0.0;
            Rgb pred_c = Rgb::Zero();
            for (int k = 0; k < 8; ++k) {
                const auto v = static_cast<std::size_t>(s.s.voxel[k]);
                pred += s.s.weight[k] * u[v];
                for (int c = 0; c < 3; ++c) {
                    pred_c[c] += s.s.weight[k] * logits[3 * v + c];
                }
            }
            const double r = pred - (s.inside ? 1.0 : -1.0);
            Rgb rc = Rgb::Zero();
            if (s.inside) {
                for (int c = 0; c < 3; ++c) {
                    rc[c] = pred_c[c] - logit(std::clamp(s.target[c], 0.01, 0.99));
                }
            }
            for (int k = 0; k < 8; ++k) {
                const double w = s.s.weight[k];
                if (w == 0.0) {
                    continue;
                }
                const auto v = static_cast<std::size_t>(s.s.voxel[k]);
                if (!touched[v]) {
                    touched[v] = 1;
                    touched_list.push_back(v);
                }
                grad_u[v] += 2.0 * inv_n * w * r;
                for (int c = 0; c < 3; ++c) {
                    grad_c[3 * v + c] += 2.0 * inv_n * w * rc[c];
                }
            }
        }
        // fixed update order keeps runs reproducible
        std::sort(touched_list.begin(), touched_list.end());
        for (std::size_t v : touched_list) {
            opt_u.update(u, v, grad_u[v]);
            grad_u[v] = 0.0;
            for (int c = 0; c < 3; ++c) {
                if (grad_c[3 * v + c] != 0.0) {
                    opt_c.update(logits, 3 * v + c, grad_c[3 * v + c]);
                    grad_c[3 * v + c] = 0.0;
                }
            }
            touched[v] = 0;
        }
    }
    for (std::size_t v = 0; v < nv; ++v) {
        f.raw_density(static_cast<int>(v)) = big * std::clamp(u[v], -1.0, 1.0);
        for (int c = 0; c < 3; ++c) {
            f.color_logit(static_cast<int>(v), c) = logits[3 * v + c];
        }
    }
    f.bump_version();
    return res;
}

// ---------------------------------------------------------------------------
// pose-estimation views

struct PoseViewConfig {
    int n_views = 8;
    int resolution = 128;
    double distance = 3.0;
    double elevation_deg = 40.0;
    double fov_deg = 40.0;
    RenderOptions render; // stratification off by default, see below

    PoseViewConfig() { render.stratified = false; }

    void validate() const {
        if (n_views < 2) {
            throw InvalidArgument("pose views: at least 2 views are needed");
        }
        if (resolution <= 0 || !(distance > 0.0) || !(fov_deg > 0.0 && fov_deg < 180.0)) {
            throw InvalidArgument("pose views: invalid camera rig");
        }
    }
};

/// Camera on the pose rig. Azimuth 0 looks from -y toward the origin; positive
/// azimuth moves toward +x.
inline Camera orbit_camera(double azimuth, double elevation, double distance, double fov, int width, int height) {
    Camera c;
    c.position = distance * Vec3(std::sin(azimuth) * std::cos(elevation), -std::cos(azimuth) * std::cos(elevation),
                                 std::sin(elevation));
    c.look_at = Vec3::Zero();
    c.up = Vec3::UnitZ();
    c.vertical_fov = fov;
    c.width = width;
    c.height = height;
    return c;
}

inline std::vector<Camera> pose_view_cameras(const PoseViewConfig& cfg) {
    cfg.validate();
    std::vector<Camera> cams;
    for (int k = 0; k < cfg.n_views; ++k) {
        cams.push_back(orbit_camera(2.0 * kPi * k / cfg.n_views, deg2rad(cfg.elevation_deg), cfg.distance,
                                    deg2rad(cfg.fov_deg), cfg.resolution, cfg.resolution));
    }
    return cams;
}

struct PoseView {
    Camera camera;
    Image rgb;
    Image opacity;
};

inline std::vector<PoseView> render_pose_views(const VoxelField& field, const PoseViewConfig& cfg = {}) {
    std::vector<PoseView> out;
    for (const Camera& cam : pose_view_cameras(cfg)) {
        auto r = render_field(field, cam, cfg.render);
        out.push_back({cam, std::move(r.rgb), std::move(r.opacity)});
    }
    return out;
}

// ---------------------------------------------------------------------------
// keypoints

struct Keypoint {
    int id = 0; // skeleton joint index
    Vec2 pixel = Vec2::Zero();
    double confidence = 1.0;
};

using ViewDetections = std::vector<Keypoint>;

class KeypointDetector {
public:
    virtual ~KeypointDetector() = default;
    virtual ViewDetections detect(const PoseView& view) = 0;
};

/**
 * Synthetic detector: reports the projections of known 3D joints, optionally
 * perturbed by Gaussian pixel noise. With a foreground threshold it only
 * reports joints whose pixel is covered by the rendered opacity, so an empty
 * or misplaced field yields few or no detections.
 */
class OracleKeypointDetector : public KeypointDetector {
public:
    OracleKeypointDetector(std::vector<Vec3> joints, double jitter_px = 0.0, std::uint64_t seed = 0,
                           double foreground_threshold = 0.0)
        : joints_(std::move(joints)), jitter_(jitter_px), seed_(seed), threshold_(foreground_threshold) {}

    ViewDetections detect(const PoseView& view) override {
        ViewDetections out;
        std::mt19937_64 rng(mix64(seed_ ^ mix64(static_cast<std::uint64_t>(calls_++))));
        std::normal_distribution<double> noise(0.0, jitter_);
        const Camera& cam = view.camera;
        for (int j = 0; j < static_cast<int>(joints_.size()); ++j) {
            const auto pr = project(joints_[j], cam);
            Vec2 px = pr.pixel;
            if (jitter_ > 0.0) {
                const double dx = noise(rng);
                const double dy = noise(rng);
                px += Vec2(dx, dy);
            }
            if (pr.behind || px.x() < 0 || px.y() < 0 || px.x() >= cam.width || px.y() >= cam.height) {
                continue;
            }
            if (threshold_ > 0.0) {
                if (view.opacity.data.empty()) {
                    continue;
                }
                const int x = std::clamp(static_cast<int>(pr.pixel.x()), 0, cam.width - 1);
                const int y = std::clamp(static_cast<int>(pr.pixel.y()), 0, cam.height - 1);
                if (view.opacity.at(x, y, 0) < threshold_) {
                    continue;
                }
            }
            out.push_back({j, px, 1.0});
        }
        return out;
    }

private:
    std::vector<Vec3> joints_;
    double jitter_;
    std::uint64_t seed_;
    double threshold_;
    std::uint64_t calls_ = 0;
};

/// Detections file: one entry per view, {"view": k, "keypoints": [{"id","x","y","conf"}]}.
inline json detections_to_json(const std::vector<ViewDetections>& views) {
    json j = json::array();
    for (std::size_t k = 0; k < views.size(); ++k) {
        json kps = json::array();
        for (const auto& kp : views[k]) {
            kps.push_back({{"id", kp.id}, {"x", kp.pixel.x()}, {"y", kp.pixel.y()}, {"conf", kp.confidence}});
        }
        j.push_back({{"view", k}, {"keypoints", kps}});
    }
    return j;
}

inline std::vector<ViewDetections> detections_from_json(const json& j, std::size_t n_views) {
    try {
        std::vector<ViewDetections> out(n_views);
        for (const auto& v : j) {
            const auto k = v.at("view").get<std::size_t>();
            if (k >= n_views) {
                throw ParseError("detections reference view " + std::to_string(k) + " of " + std::to_string(n_views),
                                 0);
            }
            for (const auto& kp : v.at("keypoints")) {
                Keypoint p;
                p.id = kp.at("id").get<int>();
                p.pixel = Vec2(kp.at("x").get<double>(), kp.at("y").get<double>());
                p.confidence = kp.value("conf", 1.0);
                if (!(p.confidence >= 0.0 && p.confidence <= 1.0)) {
                    throw ParseError("keypoint confidence outside [0, 1]", 0);
                }
                out[k].push_back(p);
            }
        }
        return out;
    } catch (const json::exception& e) {
        throw ParseError(std::string("malformed detections: ") + e.what(), 0);
    }
}

// ---------------------------------------------------------------------------
// pose fitting

enum class RobustKernel { none, geman_mcclure };
enum class PoseFitMethod { adam, levenberg_marquardt };

struct PoseFitConfig {
    int iterations = 3000;      // Adam steps, or an upper bound on damped Gauss-Newton steps
    double step_size = 0.01;    // Adam only
    double prior_weight = 1.0; // weight of ||xi - xi*||^2, rotations only
    RobustKernel kernel = RobustKernel::none;
    double kernel_scale = 10.0; // pixels
    PoseFitMethod method = PoseFitMethod::levenberg_marquardt;
    std::optional<Pose> init; // rest pose when absent
    int divergence_window = 100;

    void validate() const {
        if (iterations <= 0) {
            throw InvalidArgument("pose fit: iterations must be positive");
        }
        if (!(prior_weight >= 0.0) || !(step_size > 0.0) || !(kernel_scale > 0.0)) {
            throw InvalidArgument("pose fit: invalid step size, prior weight or kernel scale");
        }
    }
};

struct PoseFitResult {
    Pose pose;
    double objective = 0.0;
    double initial_objective = 0.0;
    int iterations = 0;
    int best_iteration = 0;
};

/// Raised when the objective rises for divergence_window consecutive steps.
class PoseFitDivergence : public Error {
public:
    PoseFitDivergence(const std::string& what, Pose last) : Error(what), last_pose(std::move(last)) {}
    Pose last_pose;
};

/// Objective and gradient (in Pose::to_vector layout) of the reprojection fit.
struct PoseObjective {
    const Skeleton* skeleton;
    const std::vector<ViewDetections>* detections;
    const std::vector<Camera>* cameras;
    const PoseFitConfig* cfg;

    // rho(s) and rho'(s) for squared residual s
    std::pair<double, double> kernel(double s) const {
        if (cfg->kernel == RobustKernel::none) {
            return {s, 1.0};
        }
        const double c2 = cfg->kernel_scale * cfg->kernel_scale;
        return {s * c2 / (s + c2), c2 * c2 / ((s + c2) * (s + c2))};
    }

    double value(const Eigen::VectorXd& x, Eigen::VectorXd* grad) const {
        const Pose pose = Pose::from_vector(x);
        std::vector<Vec3> joints;
        Eigen::MatrixXd jac;
        if (grad) {
            std::tie(joints, jac) = joint_positions_with_jacobian(*skeleton, pose);
            grad->setZero(x.size());
        } else {
            joints = joint_positions(*skeleton, pose);
        }
        double f = 0.0;
        for (std::size_t v = 0; v < cameras->size(); ++v) {
            const Camera& cam = (*cameras)[v];
            for (const auto& kp : (*detections)[v]) {
                if (kp.confidence <= 0.0) {
                    continue;
                }
                const Vec3& p = joints[kp.id];
                const auto pr = project(p, cam);
                if (pr.behind) {
                    continue;
                }
                const Vec2 r = pr.pixel - kp.pixel;
                const auto [rho, drho] = kernel(r.squaredNorm());
                f += kp.confidence * rho;
                if (grad) {
                    const Eigen::RowVector3d dp = 2.0 * kp.confidence * drho * r.transpose() * project_jacobian(p, cam);
                    *grad += (dp * jac.middleRows<3>(3 * kp.id)).transpose();
                }
            }
        }
        const int nb = skeleton->bone_count();
        for (int b = 0; b < nb; ++b) {
            const Vec3 d = x.segment<3>(3 * b) - skeleton->rest_pose[b];
            f += cfg->prior_weight * d.squaredNorm();
            if (grad) {
                grad->segment<3>(3 * b) += 2.0 * cfg->prior_weight * d;
            }
        }
        return f;
    }

    /// Weighted residual stack and its Jacobian for Gauss-Newton steps
    /// (robust kernels enter as iteratively reweighted least squares).
    void residuals(const Eigen::VectorXd& x, Eigen::VectorXd& r, Eigen::MatrixXd& J) const {
        const Pose pose = Pose::from_vector(x);
        const auto [joints, jac] = joint_positions_with_jacobian(*skeleton, pose);
        std::vector<double> rv;
        std::vector<Eigen::RowVectorXd> rows;
        for (std::size_t v = 0; v < cameras->size(); ++v) {
            const Camera& cam = (*cameras)[v];
            for (const auto& kp : (*detections)[v]) {
                if (kp.confidence <= 0.0) {
                    continue;
                }
                const Vec3& p = joints[kp.id];
                const auto pr = project(p, cam);
                if (pr.behind) {
                    continue;
                }
                const Vec2 res = pr.pixel - kp.pixel;
                const double w = std::sqrt(kp.confidence * kernel(res.squaredNorm()).second);
                const Eigen::MatrixXd jp = project_jacobian(p, cam) * jac.middleRows<3>(3 * kp.id);
                for (int k = 0; k < 2; ++k) {
                    rv.push_back(w * res[k]);
                    rows.push_back(w * jp.row(k));
                }
            }
        }
        const int nb = skeleton->bone_count();
        const double sp = std::sqrt(cfg->prior_weight);
        for (int b = 0; b < nb; ++b) {
            for (int k = 0; k < 3; ++k) {
                rv.push_back(sp * (x[3 * b + k] - skeleton->rest_pose[b][k]));
                Eigen::RowVectorXd row = Eigen::RowVectorXd::Zero(x.size());
                row[3 * b + k] = sp;
                rows.push_back(row);
            }
        }
        r = Eigen::Map<Eigen::VectorXd>(rv.data(), static_cast<Eigen::Index>(rv.size()));
        J.resize(static_cast<Eigen::Index>(rows.size()), x.size());
        for (std::size_t i = 0; i < rows.size(); ++i) {
            J.row(static_cast<Eigen::Index>(i)) = rows[i];
        }
    }
};

inline void check_detections(const Skeleton& s, const std::vector<ViewDetections>& det,
                             const std::vector<Camera>& cameras) {
    if (det.size() != cameras.size()) {
        throw InvalidArgument("pose fit: one detection list per camera expected");
    }
    int good_views = 0;
    bool any_conf = false;
    for (const auto& view : det) {
        int visible = 0;
        for (const auto& kp : view) {
            if (kp.id < 0 || kp.id >= s.bone_count()) {
                throw InvalidArgument("pose fit: keypoint id " + std::to_string(kp.id) + " is not a joint");
            }
            if (kp.confidence > 0.0) {
                ++visible;
                any_conf = true;
            }
        }
        good_views += visible >= 3 ? 1 : 0;
    }
    if (!any_conf) {
        throw InvalidArgument("pose fit: no keypoint has positive confidence");
    }
    if (good_views < 2) {
        throw InvalidArgument("pose fit: need at least 2 views with 3 or more visible keypoints");
    }
}

/**
 * Fits bone rotations and root translation to multi-view 2D keypoints.
 * Returns the iterate with the lowest objective seen, so the result never
 * scores worse than the initialization.
 */
inline PoseFitResult fit_pose(const Skeleton& skeleton, const std::vector<ViewDetections>& detections,
                              const std::vector<Camera>& cameras, const PoseFitConfig& cfg) {
    cfg.validate();
    skeleton.validate();
    check_detections(skeleton, detections, cameras);
    const PoseObjective obj{&skeleton, &detections, &cameras, &cfg};
    Pose init = cfg.init ? *cfg.init : Pose::rest(skeleton);
    if (static_cast<int>(init.rotations.size()) != skeleton.bone_count()) {
        throw InvalidArgument("pose fit: initial pose has the wrong bone count");
    }
    Eigen::VectorXd x = init.to_vector();
    PoseFitResult res;
    res.initial_objective = obj.value(x, nullptr);
    res.objective = res.initial_objective;
    Eigen::VectorXd best = x;
    double prev = res.objective;
    int rising = 0;
    auto track = [&](int it, double f) {
        if (f < res.objective) {
            res.objective = f;
            best = x;
            res.best_iteration = it;
        }
        rising = f > prev ? rising + 1 : 0;
        prev = f;
        if (rising >= cfg.divergence_window) {
            throw PoseFitDivergence("pose fit diverged: objective rose for " + std::to_string(rising) + " steps",
                                    Pose::from_vector(x));
        }
    };

    if (cfg.method == PoseFitMethod::adam) {
        AdamConfig ac;
        ac.lr = cfg.step_size;
        AdamW adam(static_cast<std::size_t>(x.size()), ac);
        Eigen::VectorXd g;
        for (int it = 1; it <= cfg.iterations; ++it) {
            obj.value(x, &g);
            adam.step(std::span<double>(x.data(), static_cast<std::size_t>(x.size())),
                      std::span<const double>(g.data(), static_cast<std::size_t>(g.size())));
            track(it, obj.value(x, nullptr));
            res.iterations = it;
        }
    } else {
        double mu = 1e-3;
        Eigen::VectorXd r;
        Eigen::MatrixXd J;
        for (int it = 1; it <= cfg.iterations; ++it) {
            obj.residuals(x, r, J);
            const Eigen::MatrixXd H = J.transpose() * J;
            const Eigen::VectorXd g = J.transpose() * r;
            const double f0 = obj.value(x, nullptr);
            bool accepted = false;
            for (int tries = 0; tries < 20 && !accepted; ++tries) {
                Eigen::MatrixXd A = H;
                A.diagonal() += mu * (H.diagonal().array() + 1e-9).matrix();
                const Eigen::VectorXd step = A.ldlt().solve(-g);
                const Eigen::VectorXd xn = x + step;
                if (obj.value(xn, nullptr) < f0) {
                    x = xn;
                    mu = std::max(mu / 3.0, 1e-9);
                    accepted = true;
                } else {
                    mu *= 4.0;
                }
            }
            res.iterations = it;
            if (!accepted) {
                break; // no descent direction left: converged
            }
            const double f = obj.value(x, nullptr);
            track(it, f);
            if (f0 - f <= 1e-14 * (1.0 + f0)) {
                break;
            }
        }
    }
    res.pose = Pose::from_vector(best);
    res.pose.canonicalize();
    return res;
}

struct FieldToPoseResult {
    PoseFitResult fit;
    std::vector<PoseView> views;
    std::vector<ViewDetections> detections;
};

/// Renders the pose rig, runs the detector on every view and fits the skeleton.
inline FieldToPoseResult field_to_pose(const VoxelField& field, const Skeleton& skeleton, KeypointDetector& detector,
                                       const PoseFitConfig& fit_cfg, const PoseViewConfig& view_cfg = {}) {
    FieldToPoseResult out;
    out.views = render_pose_views(field, view_cfg);
    std::vector<Camera> cams;
    bool any = false;
    for (const auto& v : out.views) {
        out.detections.push_back(detector.detect(v));
        cams.push_back(v.camera);
        any = any || out.detections.back().size() >= 3;
    }
    if (!any) {
        throw Error("field_to_pose: the detector found fewer than 3 keypoints in every view");
    }
    out.fit = fit_pose(skeleton, out.detections, cams, fit_cfg);
    return out;
}

/// Mean joint distance between two poses, divided by the normalizer.
inline double mean_joint_error(const Skeleton& s, const Pose& a, const Pose& b, double normalizer = 1.0) {
    const auto ja = joint_positions(s, a);
    const auto jb = joint_positions(s, b);
    double sum = 0.0;
    for (std::size_t i = 0; i < ja.size(); ++i) {
        sum += (ja[i] - jb[i]).norm();
    }
    return sum / static_cast<double>(ja.size()) / normalizer;
}

} // namespace hoi
