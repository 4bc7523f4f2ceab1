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
#include "hoipose/guidance.hpp"
#include "hoipose/mesh_io.hpp"
#include "hoipose/rig_io.hpp"
#include "hoipose/regularize.hpp"

#include <chrono>
#include <functional>
#include <iomanip>
#include <sstream>

namespace hoi {

// ---------------------------------------------------------------------------
// cameras and prompts

struct CameraSampler {
    double fov_min_deg = 15.0;
    double fov_max_deg = 60.0;
    double scale_min = 0.8; // D in distance = D / tan(fov / 2)
    double scale_max = 1.0;
    double elevation_min_deg = 0.0;
    double elevation_max_deg = 30.0;

    void validate() const {
        if (!(fov_min_deg > 0.0 && fov_min_deg <= fov_max_deg && fov_max_deg < 180.0)) {
            throw InvalidArgument("camera sampler: field of view range must lie in (0, 180)");
        }
        if (!(scale_min > 0.0 && scale_min <= scale_max)) {
            throw InvalidArgument("camera sampler: distance scale range must be positive");
        }
        if (!(elevation_min_deg <= elevation_max_deg && elevation_min_deg > -90.0 && elevation_max_deg < 90.0)) {
            throw InvalidArgument("camera sampler: elevation range must lie in (-90, 90)");
        }
    }
};

/// Random view of the origin. The distance D / tan(fov / 2) keeps the image
/// fraction covered by a unit-size object independent of the field of view.
inline Camera sample_camera(std::mt19937_64& rng, const CameraSampler& s, int width, int height) {
    s.validate();
    std::uniform_real_distribution<double> u(0.0, 1.0);
    const double fov = deg2rad(s.fov_min_deg + (s.fov_max_deg - s.fov_min_deg) * u(rng));
    const double scale = s.scale_min + (s.scale_max - s.scale_min) * u(rng);
    const double elevation = deg2rad(s.elevation_min_deg + (s.elevation_max_deg - s.elevation_min_deg) * u(rng));
    const double azimuth = 2.0 * kPi * u(rng);
    return orbit_camera(azimuth, elevation, scale / std::tan(0.5 * fov), fov, width, height);
}

/// Where the per-step camera batch comes from: the random sampler, or a fixed
/// set drawn without replacement (with replacement once the batch exceeds it).
struct CameraSource {
    enum class Mode { random, fixed };
    Mode mode = Mode::random;
    CameraSampler sampler;
    std::vector<Camera> fixed;

    std::vector<Camera> sample(std::mt19937_64& rng, int n, int resolution) const {
        std::vector<Camera> out;
        if (mode == Mode::random) {
            for (int i = 0; i < n; ++i) {
                out.push_back(sample_camera(rng, sampler, resolution, resolution));
            }
            return out;
        }
        if (fixed.empty()) {
            throw InvalidArgument("fixed camera mode needs at least one camera");
        }
        std::vector<std::size_t> order(fixed.size());
        std::iota(order.begin(), order.end(), 0);
        for (int i = 0; i < n; ++i) {
            const std::size_t k = static_cast<std::size_t>(i) % order.size();
            if (k == 0) {
                std::shuffle(order.begin(), order.end(), rng);
            }
            Camera c = fixed[order[k]];
            c.width = resolution;
            c.height = resolution;
            out.push_back(c);
        }
        return out;
    }
};

inline const char* kNegativePrompt = "missing limbs, missing legs, missing arms";

struct PromptPair {
    Prompt interaction; // human with object
    Prompt human;       // human alone
};

inline PromptPair build_prompts(const std::string& interaction, const std::string& category) {
    if (interaction.empty() || category.empty()) {
        throw InvalidArgument("prompts need a nonempty interaction and object category");
    }
    return {{"a photo of a person " + interaction + " a " + category + ", high detail, photography", kNegativePrompt},
            {"a photo of a person, high detail, photography", kNegativePrompt}};
}

// ---------------------------------------------------------------------------
// schedule

enum class StageKind { initial, refine };

struct Stage {
    std::string name = "stage";
    StageKind kind = StageKind::initial;
    int steps = 1000;
    int resolution = 64;
    double t_min = 0.02;
    double t_max = 0.98;
    int batch_size = 1;
    double background_prob = 0.5; // chance of a random background color per step
    int samples_per_ray = 128;
    double lr = 0.01;
    double weight_decay = 0.01;
    std::optional<double> sparsity_weight; // overrides LossWeights::sparsity
    bool human_only_channels = true;

    void validate() const {
        if (steps < 0) {
            throw InvalidArgument("stage " + name + ": steps must be nonnegative");
        }
        if (resolution <= 0 || batch_size <= 0 || samples_per_ray < 2) {
            throw InvalidArgument("stage " + name + ": resolution, batch size and samples per ray must be positive");
        }
        if (!(t_min > 0.0 && t_min < t_max && t_max < 1.0)) {
            throw InvalidArgument("stage " + name + ": timestep range must satisfy 0 < min < max < 1");
        }
        if (!(background_prob >= 0.0 && background_prob <= 1.0) || !(lr > 0.0) || !(weight_decay >= 0.0)) {
            throw InvalidArgument("stage " + name + ": invalid background probability, lr or weight decay");
        }
        if (sparsity_weight && !(*sparsity_weight >= 0.0)) {
            throw InvalidArgument("stage " + name + ": sparsity weight must be nonnegative");
        }
    }
};

struct StageSchedule {
    std::vector<Stage> stages;

    std::vector<const Stage*> of_kind(StageKind k) const {
        std::vector<const Stage*> out;
        for (const auto& s : stages) {
            if (s.kind == k) {
                out.push_back(&s);
            }
        }
        return out;
    }

    void validate() const {
        for (const auto& s : stages) {
            s.validate();
        }
    }

    /// Two initial sub-stages at 64 and 256 pixels, then refinement at 512
    /// after each re-initialization with human-only guidance dropped.
    static StageSchedule standard() {
        StageSchedule s;
        Stage a;
        a.name = "coarse";
        a.steps = 5000;
        a.resolution = 64;
        a.batch_size = 8;
        Stage b = a;
        b.name = "fine";
        b.resolution = 256;
        b.batch_size = 4;
        Stage r;
        r.name = "refine";
        r.kind = StageKind::refine;
        r.steps = 10000;
        r.resolution = 512;
        r.batch_size = 1;
        r.t_max = 0.70;
        r.background_prob = 1.0;
        r.samples_per_ray = 512;
        r.lr = 0.001;
        r.sparsity_weight = 1000.0;
        r.human_only_channels = false;
        s.stages = {a, b, r};
        return s;
    }
};

// ---------------------------------------------------------------------------
// one distillation stage

struct DistillOptions {
    SdsWeighting weighting = SdsWeighting::unit;
    double sds_scale = 1.0;               // multiplies every SDS term
    Rgb background = Rgb::Ones();         // used when the background is not randomized
    int provider_retries = 1;             // re-issues of a failed provider call within a step
    double density_anchor = kDensityFloorOffset; // weight decay pulls raw density here, color logits to 0
};

struct StepLog {
    std::string stage;
    int macro = 0;
    int step = 0;
    double t = 0.0;
    double r_sa = 0.0;
    double r_i = 0.0;
    double mean_opacity = 0.0;
    double grad_norm = 0.0;
    std::vector<std::pair<std::string, double>> channel_norms; // image-space SDS gradient norms
};

using StepCallback = std::function<void(const StepLog&)>;

class StageAborted : public Error {
public:
    StageAborted(const std::string& what, int step) : Error(what), failed_step(step) {}
    int failed_step;
};

inline bool channel_active(const GuidanceChannel& ch, const Stage& stage) {
    return ch.weight > 0.0 && (ch.target == RenderTarget::composite || stage.human_only_channels);
}

/**
 * Runs one stage of score distillation on the field. Every step samples a
 * camera batch, renders the composite (object mesh inserted) and, when
 * needed, the human-only view, gathers each active channel's SDS gradient,
 * adds the sparsity and intersection regularizers and takes one AdamW step.
 */
inline void distill_stage(VoxelField& field, const IndexedMesh* object, const std::vector<GuidanceChannel>& channels,
                          const Stage& stage, const LossWeights& weights, const CameraSource& cameras,
                          std::mt19937_64& rng, const DistillOptions& opt = {}, const StepCallback& on_step = {},
                          int macro = 0) {
    stage.validate();
    weights.validate();
    for (const auto& ch : channels) {
        ch.validate();
    }
    if (stage.steps == 0) {
        return;
    }
    const double lambda_sa = stage.sparsity_weight.value_or(weights.sparsity);
    const bool any_human = std::any_of(channels.begin(), channels.end(), [&](const GuidanceChannel& ch) {
        return channel_active(ch, stage) && ch.target == RenderTarget::human_only;
    });
    const bool need_human = any_human || lambda_sa > 0.0;
    const bool has_object = object && !object->empty();

    AdamConfig acfg;
    acfg.lr = stage.lr;
    acfg.weight_decay = stage.weight_decay;
    AdamW adam(field.param_count(), acfg);
    std::vector<double> anchor(field.param_count(), 0.0);
    std::fill(anchor.begin(), anchor.begin() + static_cast<std::ptrdiff_t>(field.voxel_count()), opt.density_anchor);

    std::uniform_real_distribution<double> u01(0.0, 1.0);
    for (int step = 0; step < stage.steps; ++step) {
        const auto cams = cameras.sample(rng, stage.batch_size, stage.resolution);
        RenderOptions ro;
        ro.samples_per_ray = stage.samples_per_ray;
        ro.seed = rng();
        ro.background = opt.background;
        if (u01(rng) < stage.background_prob) {
            ro.background = Rgb(u01(rng), u01(rng), u01(rng));
        }
        std::vector<RenderOutput> comp;
        std::vector<RenderOutput> human;
        std::vector<Mat4> poses;
        for (const auto& c : cams) {
            comp.push_back(has_object ? render_composite(field, *object, c, ro) : render_field(field, c, ro));
            if (need_human) {
                human.push_back(render_field(field, c, ro));
            }
            poses.push_back(c.camera_to_world());
        }
        StepLog log;
        log.stage = stage.name;
        log.macro = macro;
        log.step = step;
        log.t = sample_timestep(stage.t_min, stage.t_max, rng);
        const double w = sds_weight(opt.weighting, log.t);

        std::vector<std::vector<Image>> sds_grads;
        std::vector<RenderGradientTerm> terms;
        sds_grads.reserve(channels.size());
        for (const auto& ch : channels) {
            if (!channel_active(ch, stage)) {
                continue;
            }
            const auto& renders = ch.target == RenderTarget::composite ? comp : human;
            std::vector<Image> xs;
            std::vector<Image> eps;
            for (const auto& r : renders) {
                xs.push_back(r.rgb);
                eps.push_back(gaussian_image(r.rgb.width, r.rgb.height, 3, rng));
            }
            for (int attempt = 0;; ++attempt) {
                try {
                    sds_grads.push_back(sds_pixel_gradient(xs, ch, log.t, eps, w, &poses));
                    break;
                } catch (const Error& e) {
                    if (attempt >= opt.provider_retries) {
                        throw StageAborted("stage " + stage.name + " step " + std::to_string(step) + ": " + e.what(),
                                           step);
                    }
                }
            }
            double norm2 = 0.0;
            for (std::size_t i = 0; i < renders.size(); ++i) {
                norm2 += sds_grads.back()[i].squared_norm();
                terms.push_back({&renders[i].tape, &sds_grads.back()[i], nullptr,
                                 ch.weight * opt.sds_scale / static_cast<double>(renders.size())});
            }
            log.channel_norms.emplace_back(ch.name, std::sqrt(norm2));
        }
        SparsityResult sp;
        if (need_human) {
            std::vector<const Image*> ops;
            for (const auto& r : human) {
                ops.push_back(&r.opacity);
            }
            sp = sparsity_above_threshold(ops, weights.eta);
            log.r_sa = sp.loss;
            log.mean_opacity = sp.mean_opacity;
            if (lambda_sa > 0.0) {
                for (std::size_t i = 0; i < human.size(); ++i) {
                    terms.push_back({&human[i].tape, nullptr, &sp.grad[i], lambda_sa});
                }
            }
        }
        std::vector<ParamGradientTerm> params;
        IntersectionResult ri;
        if (has_object && weights.intersection > 0.0) {
            std::vector<const RenderTape*> tapes;
            for (const auto& r : comp) {
                tapes.push_back(&r.tape);
            }
            ri = intersection_penalty(field, *object, tapes);
            log.r_i = ri.loss;
            params.push_back({&ri.grad, weights.intersection});
        }
        if (terms.empty() && params.empty()) {
            // nothing contributes: no update, not even weight decay
            if (on_step) {
                on_step(log);
            }
            continue;
        }
        const FieldGradient g = assemble_step_gradient(field, terms, params);
        log.grad_norm = g.norm();
        adam.step(field.params(), g.values, anchor);
        field.bump_version();
        if (on_step) {
            on_step(log);
        }
    }
}

// ---------------------------------------------------------------------------
// full pipeline

/// Fixed views with reference images, used to track how well the composite
/// scene matches them across stage boundaries.
struct ProbeSet {
    std::vector<Camera> cameras;
    std::vector<Image> targets;
    RenderOptions options;
};

inline double probe_mse(const VoxelField& field, const IndexedMesh* object, const ProbeSet& probe) {
    if (probe.cameras.empty() || probe.cameras.size() != probe.targets.size()) {
        throw InvalidArgument("probe set needs one target per camera");
    }
    double sum = 0.0;
    for (std::size_t i = 0; i < probe.cameras.size(); ++i) {
        const auto r = object && !object->empty() ? render_composite(field, *object, probe.cameras[i], probe.options)
                                                  : render_field(field, probe.cameras[i], probe.options);
        sum += mean_squared_error(r.rgb, probe.targets[i]);
    }
    return sum / static_cast<double>(probe.cameras.size());
}

struct PipelineConfig {
    int field_resolution = 64;
    double bias_amplitude = 5.0;
    double bias_sigma = 0.5;
    int iterations = 1; // T
    std::uint64_t seed = 0;
    StageSchedule schedule = StageSchedule::standard();
    LossWeights weights;
    CameraSource cameras;
    DistillOptions distill;
    MeshToFieldConfig mesh_to_field;
    PoseFitConfig pose_fit;
    PoseViewConfig pose_views;
    int preview_resolution = 128;
    std::filesystem::path output_dir = "run";
    bool resume = false;
    json echo; // configuration as read, copied into the manifest

    void validate() const {
        if (iterations < 0) {
            throw InvalidArgument("pipeline: iteration count must be nonnegative");
        }
        if (field_resolution < 2) {
            throw InvalidArgument("pipeline: field resolution must be at least 2");
        }
        schedule.validate();
        weights.validate();
        if (schedule.of_kind(StageKind::initial).empty()) {
            throw InvalidArgument("pipeline: the schedule needs at least one initial stage");
        }
    }
};

struct PipelineInputs {
    const SkinnedMesh* rig = nullptr;
    TriangleMesh object; // already placed in the scene
    std::vector<GuidanceChannel> channels;
    KeypointDetector* detector = nullptr;
    const ProbeSet* probe = nullptr; // optional
};

struct StageRecord {
    std::string name;
    std::string kind;
    int macro = 0;
    int steps = 0;
    int resolution = 0;
    double lr = 0.0;
    double weight_decay = 0.0;
    double sparsity_weight = 0.0;
    std::vector<std::string> active_channels;
    std::map<std::string, std::size_t> provider_calls; // during this stage
    std::optional<double> probe_mse_start;
    std::optional<double> probe_mse_end;
    double seconds = 0.0;
};

struct PipelineResult {
    std::vector<Pose> poses; // xi_0 .. xi_T
    Pose final_pose;
    TriangleMesh final_mesh;
    std::vector<StageRecord> stages;
    std::filesystem::path output_dir;
};

class PipelineFailure : public Error {
public:
    using Error::Error;
};

namespace detail {

inline std::string fmt_double(double v) {
    std::ostringstream s;
    s << std::setprecision(17) << v;
    return s.str();
}

inline json stage_record_json(const StageRecord& r) {
    json j{{"name", r.name},
           {"kind", r.kind},
           {"macro", r.macro},
           {"steps", r.steps},
           {"resolution", r.resolution},
           {"lr", r.lr},
           {"weight_decay", r.weight_decay},
           {"sparsity_weight", r.sparsity_weight},
           {"active_channels", r.active_channels},
           {"provider_calls", r.provider_calls},
           {"seconds", r.seconds}};
    j["probe_mse_start"] = r.probe_mse_start ? json(*r.probe_mse_start) : json(nullptr);
    j["probe_mse_end"] = r.probe_mse_end ? json(*r.probe_mse_end) : json(nullptr);
    return j;
}

inline StageRecord stage_record_from_json(const json& j) {
    StageRecord r;
    r.name = j.at("name");
    r.kind = j.at("kind");
    r.macro = j.at("macro");
    r.steps = j.at("steps");
    r.resolution = j.at("resolution");
    r.lr = j.at("lr");
    r.weight_decay = j.at("weight_decay");
    r.sparsity_weight = j.at("sparsity_weight");
    r.active_channels = j.at("active_channels").get<std::vector<std::string>>();
    r.provider_calls = j.at("provider_calls").get<std::map<std::string, std::size_t>>();
    r.seconds = j.at("seconds");
    if (!j.at("probe_mse_start").is_null()) {
        r.probe_mse_start = j.at("probe_mse_start").get<double>();
    }
    if (!j.at("probe_mse_end").is_null()) {
        r.probe_mse_end = j.at("probe_mse_end").get<double>();
    }
    return r;
}

inline void save_params(const std::filesystem::path& path, const VoxelField& f) {
    std::ofstream out(path, std::ios::binary);
    const std::int32_t dims[3] = {f.nx(), f.ny(), f.nz()};
    out.write(reinterpret_cast<const char*>(dims), sizeof dims);
    out.write(reinterpret_cast<const char*>(f.params().data()), static_cast<std::streamsize>(f.param_count() * 8));
    if (!out) {
        throw Error("cannot write " + path.string());
    }
}

inline VoxelField load_params(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    std::int32_t dims[3] = {0, 0, 0};
    in.read(reinterpret_cast<char*>(dims), sizeof dims);
    if (!in || dims[0] < 2 || dims[1] < 2 || dims[2] < 2) {
        throw ParseError("bad checkpoint field " + path.string(), 0);
    }
    VoxelField f(dims[0], dims[1], dims[2]);
    in.read(reinterpret_cast<char*>(f.params().data()), static_cast<std::streamsize>(f.param_count() * 8));
    if (!in) {
        throw ParseError("truncated checkpoint field " + path.string(), 0);
    }
    return f;
}

} // namespace detail

/**
 * The alternating optimization. Plan: initial stages on a density-bias
 * field, then a pose fit (xi_0); for t = 1..T the field is re-fitted to the
 * skinned mesh at xi_{t-1}, refined with the refine stages and converted back
 * to a pose xi_t. A checkpoint is written after every unit of the plan; with
 * `resume` a run picks up after the last completed unit.
 */
inline PipelineResult run_pipeline(const PipelineConfig& cfg, const PipelineInputs& in) {
    namespace fs = std::filesystem;
    cfg.validate();
    if (!in.rig || !in.detector) {
        throw InvalidArgument("pipeline needs a rig and a keypoint detector");
    }
    in.rig->validate();
    const fs::path dir = cfg.output_dir;
    fs::create_directories(dir / "previews");
    fs::create_directories(dir / "checkpoint");
    const IndexedMesh object(in.object);

    // the plan: distill / fit / reinit units
    struct Unit {
        enum Type { distill, fit, reinit } type;
        const Stage* stage;
        int macro;
    };
    std::vector<Unit> plan;
    for (const Stage* s : cfg.schedule.of_kind(StageKind::initial)) {
        plan.push_back({Unit::distill, s, 0});
    }
    plan.push_back({Unit::fit, nullptr, 0});
    for (int t = 1; t <= cfg.iterations; ++t) {
        plan.push_back({Unit::reinit, nullptr, t});
        for (const Stage* s : cfg.schedule.of_kind(StageKind::refine)) {
            plan.push_back({Unit::distill, s, t});
        }
        plan.push_back({Unit::fit, nullptr, t});
    }

    PipelineResult res;
    res.output_dir = dir;
    std::mt19937_64 rng(cfg.seed);
    VoxelField field(cfg.field_resolution);
    init_density_bias(field, cfg.bias_amplitude, cfg.bias_sigma);
    std::size_t next = 0;
    json stage_json = json::array();
    std::optional<double> pending_probe; // probe value right after a re-initialization

    const fs::path state_path = dir / "checkpoint" / "state.json";
    if (cfg.resume && fs::exists(state_path)) {
        const json st = read_json_file(state_path);
        next = st.at("next_unit").get<std::size_t>();
        std::istringstream rs(st.at("rng").get<std::string>());
        rs >> rng;
        field = detail::load_params(dir / "checkpoint" / "field.f64");
        for (const auto& p : st.at("poses")) {
            res.poses.push_back(pose_from_json(p));
        }
        stage_json = st.at("stages");
        if (st.contains("pending_probe") && !st.at("pending_probe").is_null()) {
            pending_probe = st.at("pending_probe").get<double>();
        }
    }

    auto write_checkpoint = [&] {
        json st;
        st["next_unit"] = next;
        std::ostringstream rs;
        rs << rng;
        st["rng"] = rs.str();
        st["poses"] = json::array();
        for (const auto& p : res.poses) {
            st["poses"].push_back(pose_to_json(p));
        }
        st["stages"] = stage_json;
        st["pending_probe"] = pending_probe ? json(*pending_probe) : json(nullptr);
        detail::save_params(dir / "checkpoint" / "field.f64", field);
        save_field(dir / "checkpoint" / "field.vxf", field);
        write_json_file(state_path, st);
    };

    auto write_manifest = [&](const std::string& status) {
        json m;
        m["status"] = status;
        m["seed"] = cfg.seed;
        m["iterations"] = cfg.iterations;
        m["field_resolution"] = cfg.field_resolution;
        m["weights"] = {{"sds_ho", cfg.weights.sds_ho},       {"sds_h", cfg.weights.sds_h},
                        {"sds_h_mv", cfg.weights.sds_h_mv},   {"sparsity", cfg.weights.sparsity},
                        {"intersection", cfg.weights.intersection}, {"eta", cfg.weights.eta}};
        m["optimizer"] = "adamw";
        m["stages"] = stage_json;
        m["poses"] = json::array();
        for (std::size_t t = 0; t < res.poses.size(); ++t) {
            m["poses"].push_back("pose_t" + std::to_string(t) + ".json");
        }
        m["config"] = cfg.echo;
        write_json_file(dir / "manifest.json", m);
    };

    std::ofstream csv(dir / "log.csv", next == 0 ? std::ios::trunc : std::ios::app);
    if (next == 0) {
        csv << "macro,stage,step,t,r_sa,r_i,mean_opacity,grad_norm";
        for (const auto& ch : in.channels) {
            csv << ",sds_norm_" << ch.name;
        }
        csv << '\n';
    }
    auto log_step = [&](const StepLog& s) {
        csv << s.macro << ',' << s.stage << ',' << s.step << ',' << detail::fmt_double(s.t) << ','
            << detail::fmt_double(s.r_sa) << ',' << detail::fmt_double(s.r_i) << ','
            << detail::fmt_double(s.mean_opacity) << ',' << detail::fmt_double(s.grad_norm);
        for (const auto& ch : in.channels) {
            const auto it = std::find_if(s.channel_norms.begin(), s.channel_norms.end(),
                                         [&](const auto& p) { return p.first == ch.name; });
            csv << ',' << (it == s.channel_norms.end() ? std::string() : detail::fmt_double(it->second));
        }
        csv << '\n';
    };

    auto preview = [&](const std::string& tag) {
        const Camera cam = orbit_camera(0.0, deg2rad(15.0), 3.0, deg2rad(40.0), cfg.preview_resolution,
                                        cfg.preview_resolution);
        RenderOptions ro;
        ro.stratified = false;
        save_ppm(dir / "previews" / (tag + ".ppm"), render_composite(field, object, cam, ro).rgb);
    };

    auto probe = [&]() -> std::optional<double> {
        if (!in.probe) {
            return std::nullopt;
        }
        return probe_mse(field, &object, *in.probe);
    };

    if (next == 0) {
        write_checkpoint();
    }
    for (; next < plan.size(); ++next) {
        const Unit& unit = plan[next];
        try {
            if (unit.type == Unit::distill) {
                const Stage& s = *unit.stage;
                StageRecord rec;
                rec.name = s.name;
                rec.kind = s.kind == StageKind::initial ? "initial" : "refine";
                rec.macro = unit.macro;
                rec.steps = s.steps;
                rec.resolution = s.resolution;
                rec.lr = s.lr;
                rec.weight_decay = s.weight_decay;
                rec.sparsity_weight = s.sparsity_weight.value_or(cfg.weights.sparsity);
                std::vector<std::size_t> before;
                for (const auto& ch : in.channels) {
                    before.push_back(ch.provider->call_count());
                    if (channel_active(ch, s)) {
                        rec.active_channels.push_back(ch.name);
                    }
                }
                rec.probe_mse_start = pending_probe ? pending_probe : probe();
                pending_probe.reset();
                const auto t0 = std::chrono::steady_clock::now();
                distill_stage(field, &object, in.channels, s, cfg.weights, cfg.cameras, rng, cfg.distill, log_step,
                              unit.macro);
                rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
                for (std::size_t i = 0; i < in.channels.size(); ++i) {
                    rec.provider_calls[in.channels[i].name] += in.channels[i].provider->call_count() - before[i];
                }
                rec.probe_mse_end = probe();
                csv.flush();
                preview(s.name + "_t" + std::to_string(unit.macro));
                stage_json.push_back(detail::stage_record_json(rec));
            } else if (unit.type == Unit::reinit) {
                const TriangleMesh posed = skin(*in.rig, res.poses.back());
                MeshToFieldConfig mcfg = cfg.mesh_to_field;
                mcfg.resolution = cfg.field_resolution;
                mcfg.seed = rng();
                field = mesh_to_field(posed, mcfg).field;
                pending_probe = probe();
                preview("reinit_t" + std::to_string(unit.macro));
            } else {
                auto fit = field_to_pose(field, in.rig->skeleton, *in.detector, cfg.pose_fit, cfg.pose_views);
                const int t = unit.macro;
                res.poses.push_back(fit.fit.pose);
                save_pose(dir / ("pose_t" + std::to_string(t) + ".json"), fit.fit.pose);
                save_obj(dir / ("human_t" + std::to_string(t) + ".obj"), skin(*in.rig, fit.fit.pose));
                save_field(dir / ("field_t" + std::to_string(t) + ".vxf"), field);
                write_json_file(dir / ("detections_t" + std::to_string(t) + ".json"),
                                detections_to_json(fit.detections));
            }
        } catch (const std::exception& e) {
            csv.flush();
            write_manifest("failed");
            throw PipelineFailure(std::string(e.what()) + " (resume from " + (dir / "checkpoint").string() + ")");
        }
        // checkpoint marks this unit done
        ++next;
        write_checkpoint();
        --next;
    }
    write_manifest("complete");
    res.final_pose = res.poses.back();
    res.final_mesh = skin(*in.rig, res.final_pose);
    // includes stages finished before a resume
    res.stages.clear();
    for (const auto& s : stage_json) {
        res.stages.push_back(detail::stage_record_from_json(s));
    }
    return res;
}

// ---------------------------------------------------------------------------
// diagnostics

struct SdsDump {
    Image residual; // eps_hat - eps (after guidance)
    Image norm;     // per-pixel Euclidean norm of the residual
    Image render;
};

/// Single-sample SDS residual for one view of a scene (field, optionally with
/// the object mesh), unit weighting.
inline SdsDump sds_gradient_dump(const VoxelField& field, const IndexedMesh* object, const GuidanceChannel& channel,
                                 const Camera& camera, double t, const Image& eps, const RenderOptions& ro = {}) {
    SdsDump d;
    const bool composite = channel.target == RenderTarget::composite && object && !object->empty();
    d.render = composite ? render_composite(field, *object, camera, ro).rgb : render_field(field, camera, ro).rgb;
    const Mat4 pose = camera.camera_to_world();
    d.residual = sds_pixel_gradient(d.render, channel, t, eps, 1.0, &pose);
    d.norm = Image(d.residual.width, d.residual.height, 1);
    for (int y = 0; y < d.norm.height; ++y) {
        for (int x = 0; x < d.norm.width; ++x) {
            double s = 0.0;
            for (int c = 0; c < d.residual.channels; ++c) {
                s += d.residual.at(x, y, c) * d.residual.at(x, y, c);
            }
            d.norm.at(x, y, 0) = std::sqrt(s);
        }
    }
    return d;
}

} // namespace hoi
