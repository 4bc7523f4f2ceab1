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
#include "hoipose/hoipose.hpp"

#include <CLI11.hpp>

#include <iostream>

using namespace hoi;
namespace fs = std::filesystem;

namespace {

SkinnedMesh load_rig_or_demo(const fs::path& path) { return path.empty() ? demo::humanoid() : load_rig(path); }

Vec3 parse_vec3(const std::string& text) {
    std::istringstream in(text);
    Vec3 v;
    if (!(in >> v.x() >> v.y() >> v.z())) {
        throw InvalidArgument("expected three numbers, got '" + text + "'");
    }
    return v;
}

/// Orbit camera flags shared by render and sds-dump.
struct ViewFlags {
    std::string camera_json;
    double azimuth = 0.0;
    double elevation = 15.0;
    double distance = 3.0;
    double fov = 40.0;
    int size = 128;

    void add(CLI::App* app) {
        app->add_option("--camera", camera_json, "camera JSON file (overrides the orbit flags)");
        app->add_option("--azimuth", azimuth, "degrees, 0 looks along +y")->capture_default_str();
        app->add_option("--elevation", elevation, "degrees")->capture_default_str();
        app->add_option("--distance", distance)->capture_default_str();
        app->add_option("--fov", fov, "vertical field of view, degrees")->capture_default_str();
        app->add_option("--size", size, "image width and height")->capture_default_str();
    }

    Camera camera() const {
        if (!camera_json.empty()) {
            return camera_from_json(read_json_file(camera_json));
        }
        return orbit_camera(deg2rad(azimuth), deg2rad(elevation), distance, deg2rad(fov), size, size);
    }
};

void warn_preflight(const TriangleMesh& mesh, const std::string& what) {
    const auto pf = mesh_preflight(mesh);
    if (!pf.inside_support) {
        std::cerr << "warning: " << what << " reaches radius " << pf.radius
                  << ", outside the unit support ball; samples beyond it are clipped\n";
    }
    if (pf.unstable > 0) {
        std::cerr << "warning: " << what << ": inside test unstable at " << pf.unstable << " of " << pf.samples
                  << " probe points (mesh may not be watertight)\n";
    }
}

TriangleMesh load_scene_object(const SceneConfig& sc) {
    if (sc.object_mesh.empty()) {
        return {};
    }
    TriangleMesh m = place_mesh(load_obj(sc.object_mesh), sc.placement);
    warn_preflight(m, "object mesh");
    return m;
}

std::vector<GuidanceChannel> scene_channels(const RunConfig& rc) {
    if (rc.channels.empty()) {
        throw InvalidArgument("config defines no [guidance.channel.N] sections");
    }
    return build_channels(rc.channels, build_prompts(rc.scene.interaction, rc.scene.category), rc.pipeline.weights);
}

// ---------------------------------------------------------------------------

int cmd_render(const fs::path& field_path, const fs::path& mesh_path, const ViewFlags& view, int samples,
               const std::string& background, const fs::path& out, const fs::path& opacity_out) {
    const VoxelField field = load_field(field_path);
    RenderOptions ro;
    ro.samples_per_ray = samples;
    ro.stratified = false;
    ro.background = parse_vec3(background);
    const Camera cam = view.camera();
    RenderOutput r;
    if (mesh_path.empty()) {
        r = render_field(field, cam, ro);
    } else {
        r = render_composite(field, IndexedMesh(load_obj(mesh_path)), cam, ro);
    }
    if (out.extension() == ".pfm") {
        save_pfm(out, r.rgb);
    } else {
        save_ppm(out, r.rgb);
    }
    if (!opacity_out.empty()) {
        save_pfm(opacity_out, r.opacity);
    }
    return 0;
}

int cmd_mesh2field(const fs::path& mesh_path, const fs::path& rig_path, const fs::path& pose_path,
                   MeshToFieldConfig cfg, const fs::path& out) {
    TriangleMesh mesh;
    if (!mesh_path.empty()) {
        mesh = load_obj(mesh_path);
    } else {
        const auto rig = load_rig_or_demo(rig_path);
        mesh = skin(rig, pose_path.empty() ? Pose::rest(rig.skeleton) : load_pose(pose_path));
    }
    warn_preflight(mesh, "input mesh");
    const auto res = mesh_to_field(mesh, cfg);
    std::cerr << "supervised points " << res.supervised_points << ", inside " << res.inside_points << "\n";
    save_field(out, res.field);
    return 0;
}

int cmd_fitpose(const fs::path& field_path, const fs::path& rig_path, const fs::path& gt_pose, const fs::path& dets,
                double jitter, std::uint64_t seed, PoseFitConfig fit, const PoseViewConfig& views, const fs::path& out,
                const fs::path& mesh_out, const fs::path& dets_out) {
    const auto rig = load_rig_or_demo(rig_path);
    PoseFitResult result;
    std::vector<ViewDetections> used;
    if (!dets.empty()) {
        used = detections_from_json(read_json_file(dets), views.n_views);
        result = fit_pose(rig.skeleton, used, pose_view_cameras(views), fit);
    } else {
        if (field_path.empty() || gt_pose.empty()) {
            throw InvalidArgument("fitpose needs --detections, or --field with --gt-pose for the synthetic detector");
        }
        OracleKeypointDetector det(joint_positions(rig.skeleton, load_pose(gt_pose)), jitter, seed, 0.5);
        auto r = field_to_pose(load_field(field_path), rig.skeleton, det, fit, views);
        result = r.fit;
        used = r.detections;
    }
    std::cerr << "objective " << result.initial_objective << " -> " << result.objective << " after "
              << result.iterations << " iterations\n";
    save_pose(out, result.pose);
    if (!mesh_out.empty()) {
        save_obj(mesh_out, skin(rig, result.pose));
    }
    if (!dets_out.empty()) {
        write_json_file(dets_out, detections_to_json(used));
    }
    return 0;
}

int cmd_distill(const fs::path& config, std::optional<std::uint64_t> seed, int stage_index, const fs::path& field_in,
                const fs::path& out, const fs::path& log_path) {
    RunConfig rc = load_config(config);
    auto& pc = rc.pipeline;
    if (stage_index < 0 || stage_index >= static_cast<int>(pc.schedule.stages.size())) {
        throw InvalidArgument("stage index out of range");
    }
    const Stage& st = pc.schedule.stages[static_cast<std::size_t>(stage_index)];
    VoxelField field(pc.field_resolution);
    if (field_in.empty()) {
        init_density_bias(field, pc.bias_amplitude, pc.bias_sigma);
    } else {
        field = load_field(field_in);
    }
    const IndexedMesh object(load_scene_object(rc.scene));
    const auto channels = scene_channels(rc);
    std::mt19937_64 rng(seed.value_or(pc.seed));
    std::ofstream log;
    if (!log_path.empty()) {
        log.open(log_path);
        log << "step,t,r_sa,r_i,mean_opacity,grad_norm\n";
    }
    distill_stage(field, &object, channels, st, pc.weights, pc.cameras, rng, pc.distill, [&](const StepLog& s) {
        if (log.is_open()) {
            log << s.step << ',' << s.t << ',' << s.r_sa << ',' << s.r_i << ',' << s.mean_opacity << ','
                << s.grad_norm << '\n';
        }
    });
    save_field(out, field);
    return 0;
}

int cmd_pipeline(const fs::path& config, std::uint64_t seed, bool resume, const fs::path& out_override) {
    RunConfig rc = load_config(config);
    auto& pc = rc.pipeline;
    pc.seed = seed;
    pc.resume = resume;
    if (!out_override.empty()) {
        pc.output_dir = out_override;
    }
    pc.echo["cli"] = {{"seed", seed}, {"resume", resume}};
    if (rc.detector.pose.empty()) {
        throw InvalidArgument("[detector] pose is required: the synthetic detector is the only one available");
    }
    const auto rig = load_rig_or_demo(rc.scene.rig);
    OracleKeypointDetector det(joint_positions(rig.skeleton, load_pose(rc.detector.pose)), rc.detector.jitter_px, seed,
                               rc.detector.foreground_threshold);
    PipelineInputs in;
    in.rig = &rig;
    in.object = load_scene_object(rc.scene);
    in.channels = scene_channels(rc);
    in.detector = &det;
    const auto res = run_pipeline(pc, in);
    save_obj(res.output_dir / "human_final.obj", res.final_mesh);
    std::cout << res.output_dir.string() << "\n";
    return 0;
}

int cmd_gradcheck(GradcheckConfig cfg, double tol) {
    const auto r = render_gradcheck(cfg);
    std::cout << "cases " << r.cases << " parameters " << r.checked << " worst_rel " << r.worst_rel << " mean_rel "
              << r.mean_rel << "\n";
    return r.worst_rel < tol ? 0 : 1;
}

int cmd_sds_dump(const fs::path& config, const std::string& channel_name, const fs::path& field_path,
                 const ViewFlags& view, double t, std::uint64_t seed, const fs::path& prefix) {
    RunConfig rc = load_config(config);
    const auto channels = scene_channels(rc);
    const auto it = std::find_if(channels.begin(), channels.end(),
                                 [&](const GuidanceChannel& c) { return c.name == channel_name; });
    if (it == channels.end()) {
        throw InvalidArgument("no channel named '" + channel_name + "'");
    }
    const VoxelField field = load_field(field_path);
    const IndexedMesh object(load_scene_object(rc.scene));
    const Camera cam = view.camera();
    std::mt19937_64 rng(seed);
    const Image eps = gaussian_image(cam.width, cam.height, 3, rng);
    RenderOptions ro;
    ro.stratified = false;
    const auto d = sds_gradient_dump(field, &object, *it, cam, t, eps, ro);
    save_pfm(prefix.string() + "_grad.pfm", d.residual);
    save_pfm(prefix.string() + "_norm.pfm", d.norm);
    save_ppm(prefix.string() + "_render.ppm", d.render);
    return 0;
}

/// Writes the ground-truth demo scene and a desk-scale config for it.
int cmd_demo(const fs::path& dir, int views, int size) {
    fs::create_directories(dir);
    const auto scene = demo::make_scene(demo::seated_pose(), views, size);
    save_rig(dir / "humanoid.json", scene.rig);
    save_pose(dir / "gt_pose.json", scene.pose);
    save_obj(dir / "box.obj", scene.object);
    save_target_views(dir / "targets_ho.json", scene.cameras, scene.composite_targets);
    save_target_views(dir / "targets_h.json", scene.cameras, scene.human_targets);
    json cams = json::array();
    for (const auto& c : scene.cameras) {
        cams.push_back(camera_to_json(c));
    }
    write_json_file(dir / "cameras.json", cams);
    std::ofstream ini(dir / "config.ini");
    ini << "[scene]\nobject = box.obj\nrig = humanoid.json\ninteraction = sitting on\ncategory = box\niterations = 1\n\n"
        << "[field]\nresolution = 32\n\n"
        << "[schedule.0]\nname = coarse\nsteps = 150\nresolution = " << size
        << "\nbatch_size = 4\nbackground_prob = 0\nsamples_per_ray = 64\nsparsity_weight = 1000\n\n"
        << "[schedule.1]\nname = refine\nkind = refine\nsteps = 60\nresolution = " << size
        << "\nbatch_size = 2\nt_max = 0.7\nbackground_prob = 0\nsamples_per_ray = 64\nlr = 0.001\n"
           "sparsity_weight = 1000\n\n"
        << "[weights]\nweighting = normalizing\n\n"
        << "[guidance.channel.0]\nname = ho\ntargets = targets_ho.json\n\n"
        << "[guidance.channel.1]\nname = h\ntarget = human_only\nprompt = human\ntargets = targets_h.json\n\n"
        << "[guidance.channel.2]\nname = h_mv\ntarget = human_only\nprompt = human\ncapability = multi_view\n"
           "targets = targets_h.json\n\n"
        << "[cameras]\nmode = fixed\nfixed = cameras.json\n\n"
        << "[mesh2field]\niterations = 3000\n\n"
        << "[poseviews]\nresolution = 64\n\n"
        << "[detector]\npose = gt_pose.json\n\n"
        << "[output]\ndir = run\n";
    std::cout << (dir / "config.ini").string() << "\n";
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Human pose generation from text-guided human-object interaction"};
    app.require_subcommand(1);
    int rc = 0;

    // render
    auto* render = app.add_subcommand("render", "render a field, optionally with an object mesh inserted");
    fs::path r_field, r_mesh, r_out = "render.ppm", r_opacity;
    ViewFlags r_view;
    int r_samples = 128;
    std::string r_bg = "1 1 1";
    render->add_option("--field", r_field, "VXF field")->required();
    render->add_option("--mesh", r_mesh, "OBJ mesh composited into the render");
    r_view.add(render);
    render->add_option("--samples", r_samples, "samples per ray")->capture_default_str();
    render->add_option("--background", r_bg, "\"r g b\"")->capture_default_str();
    render->add_option("--out", r_out, ".ppm or .pfm")->capture_default_str();
    render->add_option("--opacity-out", r_opacity, "PFM opacity image");
    render->callback([&] { rc = cmd_render(r_field, r_mesh, r_view, r_samples, r_bg, r_out, r_opacity); });

    // mesh2field
    auto* m2f = app.add_subcommand("mesh2field", "fit a field to a mesh or a posed rig");
    fs::path m_mesh, m_rig, m_pose, m_out = "field.vxf";
    MeshToFieldConfig m_cfg;
    m2f->add_option("--mesh", m_mesh, "OBJ mesh");
    m2f->add_option("--rig", m_rig, "rig JSON (default: built-in humanoid)");
    m2f->add_option("--pose", m_pose, "pose JSON for the rig (default: rest)");
    m2f->add_option("--resolution", m_cfg.resolution)->capture_default_str();
    m2f->add_option("--points", m_cfg.n_points)->capture_default_str();
    m2f->add_option("--iterations", m_cfg.iterations)->capture_default_str();
    m2f->add_option("--lr", m_cfg.lr)->capture_default_str();
    m2f->add_option("--seed", m_cfg.seed)->capture_default_str();
    m2f->add_option("--out", m_out)->capture_default_str();
    m2f->callback([&] { rc = cmd_mesh2field(m_mesh, m_rig, m_pose, m_cfg, m_out); });

    // fitpose
    auto* fp = app.add_subcommand("fitpose", "recover a pose from a field or from keypoint detections");
    fs::path f_field, f_rig, f_gt, f_dets, f_out = "pose.json", f_mesh_out, f_dets_out;
    double f_jitter = 0.0;
    std::uint64_t f_seed = 0;
    PoseFitConfig f_fit;
    PoseViewConfig f_views;
    std::string f_method = "levenberg_marquardt";
    fp->add_option("--field", f_field, "VXF field");
    fp->add_option("--rig", f_rig, "rig JSON (default: built-in humanoid)");
    fp->add_option("--gt-pose", f_gt, "pose driving the synthetic keypoint detector");
    fp->add_option("--detections", f_dets, "detections JSON for the standard pose views");
    fp->add_option("--jitter", f_jitter, "synthetic detector noise, pixels")->capture_default_str();
    fp->add_option("--seed", f_seed)->capture_default_str();
    fp->add_option("--iterations", f_fit.iterations)->capture_default_str();
    fp->add_option("--method", f_method)->check(CLI::IsMember({"adam", "levenberg_marquardt"}))->capture_default_str();
    fp->add_option("--views", f_views.n_views)->capture_default_str();
    fp->add_option("--view-size", f_views.resolution)->capture_default_str();
    fp->add_option("--out", f_out)->capture_default_str();
    fp->add_option("--mesh-out", f_mesh_out, "posed OBJ");
    fp->add_option("--detections-out", f_dets_out);
    fp->callback([&] {
        f_fit.method = f_method == "adam" ? PoseFitMethod::adam : PoseFitMethod::levenberg_marquardt;
        rc = cmd_fitpose(f_field, f_rig, f_gt, f_dets, f_jitter, f_seed, f_fit, f_views, f_out, f_mesh_out,
                         f_dets_out);
    });

    // distill
    auto* ds = app.add_subcommand("distill", "run one schedule stage of score distillation");
    fs::path d_config, d_field, d_out = "field.vxf", d_log;
    std::optional<std::uint64_t> d_seed;
    int d_stage = 0;
    ds->add_option("--config", d_config)->required()->check(CLI::ExistingFile);
    ds->add_option("--seed", d_seed);
    ds->add_option("--stage", d_stage, "index into the schedule")->capture_default_str();
    ds->add_option("--field", d_field, "starting field (default: density bias)");
    ds->add_option("--out", d_out)->capture_default_str();
    ds->add_option("--log", d_log, "per-step CSV");
    ds->callback([&] { rc = cmd_distill(d_config, d_seed, d_stage, d_field, d_out, d_log); });

    // pipeline
    auto* pl = app.add_subcommand("pipeline", "run the full alternating optimization");
    fs::path p_config, p_out;
    std::uint64_t p_seed = 0;
    bool p_resume = false;
    pl->add_option("--config", p_config)->required()->check(CLI::ExistingFile);
    pl->add_option("--seed", p_seed)->required();
    pl->add_flag("--resume", p_resume, "continue from the run directory's checkpoint");
    pl->add_option("--out", p_out, "run directory (overrides [output] dir)");
    pl->callback([&] { rc = cmd_pipeline(p_config, p_seed, p_resume, p_out); });

    // gradcheck
    auto* gc = app.add_subcommand("gradcheck", "compare render gradients with finite differences");
    GradcheckConfig g_cfg;
    double g_tol = 1e-3;
    gc->add_option("--cases", g_cfg.cases)->capture_default_str();
    gc->add_option("--grid", g_cfg.grid)->capture_default_str();
    gc->add_option("--seed", g_cfg.seed)->capture_default_str();
    gc->add_option("--tol", g_tol, "pass threshold on the worst relative error")->capture_default_str();
    gc->callback([&] { rc = cmd_gradcheck(g_cfg, g_tol); });

    // sds-dump
    auto* sd = app.add_subcommand("sds-dump", "write one SDS residual image and its per-pixel norm");
    fs::path s_config, s_field, s_prefix = "sds";
    std::string s_channel;
    ViewFlags s_view;
    double s_t = 0.5;
    std::uint64_t s_seed = 0;
    sd->add_option("--config", s_config)->required()->check(CLI::ExistingFile);
    sd->add_option("--channel", s_channel)->required();
    sd->add_option("--field", s_field)->required();
    s_view.add(sd);
    sd->add_option("--t", s_t, "diffusion timestep in (0, 1)")->capture_default_str();
    sd->add_option("--seed", s_seed, "noise seed")->capture_default_str();
    sd->add_option("--out", s_prefix, "output prefix")->capture_default_str();
    sd->callback([&] { rc = cmd_sds_dump(s_config, s_channel, s_field, s_view, s_t, s_seed, s_prefix); });

    // demo
    auto* dm = app.add_subcommand("demo", "write the ground-truth demo scene and a config for it");
    fs::path dm_out = "demo";
    int dm_views = 8, dm_size = 64;
    dm->add_option("--out", dm_out)->capture_default_str();
    dm->add_option("--views", dm_views)->capture_default_str();
    dm->add_option("--size", dm_size)->capture_default_str();
    dm->callback([&] { rc = cmd_demo(dm_out, dm_views, dm_size); });

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    } catch (const PipelineFailure& e) {
        std::cerr << "pipeline failed: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return rc;
}
