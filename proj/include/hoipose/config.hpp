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

#include "hoipose/pipeline.hpp"
#include "hoipose/protocol.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <set>

namespace hoi {

// ---------------------------------------------------------------------------
// scene

/// Rigid placement plus uniform scale: p -> R (s p) + t, R from XYZ Euler
/// angles in degrees (x applied first).
struct ObjectPlacement {
    Vec3 rotation_deg = Vec3::Zero();
    Vec3 translation = Vec3::Zero();
    double scale = 1.0;

    Mat3 rotation() const {
        const Vec3 r = rotation_deg * (kPi / 180.0);
        return (Eigen::AngleAxisd(r.z(), Vec3::UnitZ()) * Eigen::AngleAxisd(r.y(), Vec3::UnitY()) *
                Eigen::AngleAxisd(r.x(), Vec3::UnitX()))
            .toRotationMatrix();
    }

    void validate() const {
        if (!(scale > 0.0)) {
            throw InvalidArgument("object scale must be positive");
        }
    }
};

inline TriangleMesh place_mesh(TriangleMesh mesh, const ObjectPlacement& p) {
    p.validate();
    const Mat3 r = p.rotation();
    for (auto& v : mesh.vertices) {
        v = r * (p.scale * v) + p.translation;
    }
    return mesh;
}

struct SceneConfig {
    std::filesystem::path object_mesh;
    ObjectPlacement placement;
    std::filesystem::path rig; // empty: built-in demo humanoid
    std::string interaction;
    std::string category;
    int iterations = 1;
    std::optional<std::uint64_t> seed;

    void validate() const {
        placement.validate();
        if (iterations < 0) {
            throw InvalidArgument("scene: iterations must be nonnegative");
        }
    }
};

// ---------------------------------------------------------------------------
// channels

enum class ProviderKind { image_matching, echo, external };

struct ChannelSpec {
    std::string name;
    ProviderKind provider = ProviderKind::image_matching;
    RenderTarget target = RenderTarget::composite;
    Capability capability = Capability::single_view;
    std::string prompt = "interaction"; // "interaction", "human" or literal text
    std::optional<double> weight;       // default from the loss weights
    double cfg_weight = 50.0;
    std::filesystem::path targets;      // image matching: a PFM image or a view list (JSON)
    std::string command;                // external
    double timeout_seconds = 60.0;
    int retries = 1;
};

inline json camera_to_json(const Camera& c) {
    return {{"position", vec_to_json(c.position)},
            {"look_at", vec_to_json(c.look_at)},
            {"up", vec_to_json(c.up)},
            {"vertical_fov_deg", rad2deg(c.vertical_fov)},
            {"width", c.width},
            {"height", c.height}};
}

inline Camera camera_from_json(const json& j) {
    Camera c;
    c.position = vec_from_json(j.at("position"));
    c.look_at = j.contains("look_at") ? vec_from_json(j.at("look_at")) : Vec3::Zero();
    c.up = j.contains("up") ? vec_from_json(j.at("up")) : Vec3::UnitZ();
    c.vertical_fov = deg2rad(j.value("vertical_fov_deg", 40.0));
    c.width = j.value("width", 64);
    c.height = j.value("height", 64);
    c.validate();
    return c;
}

inline std::vector<Camera> load_cameras(const std::filesystem::path& path) {
    std::vector<Camera> out;
    for (const auto& c : read_json_file(path)) {
        out.push_back(camera_from_json(c));
    }
    return out;
}

/// View list: [{"camera": {...}, "image": "view0.pfm"}, ...], images
/// relative to the list file.
inline std::vector<ImageMatchingProvider::View> load_target_views(const std::filesystem::path& path) {
    std::vector<ImageMatchingProvider::View> views;
    for (const auto& v : read_json_file(path)) {
        views.push_back({camera_from_json(v.at("camera")).camera_to_world(),
                         load_pfm(path.parent_path() / v.at("image").get<std::string>())});
    }
    if (views.empty()) {
        throw ParseError("empty view list " + path.string(), 0);
    }
    return views;
}

inline void save_target_views(const std::filesystem::path& path, const std::vector<Camera>& cams,
                              const std::vector<Image>& images) {
    json list = json::array();
    for (std::size_t i = 0; i < cams.size(); ++i) {
        const std::string file = path.stem().string() + "_" + std::to_string(i) + ".pfm";
        save_pfm(path.parent_path() / file, images[i]);
        list.push_back({{"camera", camera_to_json(cams[i])}, {"image", file}});
    }
    write_json_file(path, list);
}

inline std::shared_ptr<GuidanceProvider> make_provider(const ChannelSpec& spec) {
    switch (spec.provider) {
    case ProviderKind::echo:
        return std::make_shared<EchoProvider>(spec.capability);
    case ProviderKind::external: {
        ExternalProviderConfig cfg;
        cfg.command = spec.command;
        cfg.capability = spec.capability;
        cfg.timeout_seconds = spec.timeout_seconds;
        cfg.retries = spec.retries;
        cfg.label = spec.name;
        return std::make_shared<ExternalProvider>(cfg);
    }
    case ProviderKind::image_matching:
        break;
    }
    if (spec.targets.empty()) {
        throw InvalidArgument("channel " + spec.name + ": image matching needs targets");
    }
    if (spec.targets.extension() == ".pfm") {
        return std::make_shared<ImageMatchingProvider>(load_pfm(spec.targets), spec.name);
    }
    return std::make_shared<ImageMatchingProvider>(load_target_views(spec.targets), spec.capability, spec.name);
}

inline double default_channel_weight(const ChannelSpec& s, const LossWeights& w) {
    if (s.target == RenderTarget::composite) {
        return w.sds_ho;
    }
    return s.capability == Capability::multi_view ? w.sds_h_mv : w.sds_h;
}

inline std::vector<GuidanceChannel> build_channels(const std::vector<ChannelSpec>& specs, const PromptPair& prompts,
                                                   const LossWeights& weights) {
    std::vector<GuidanceChannel> out;
    for (const auto& s : specs) {
        GuidanceChannel ch;
        ch.name = s.name;
        ch.provider = make_provider(s);
        if (s.prompt == "interaction") {
            ch.prompt = prompts.interaction;
        } else if (s.prompt == "human") {
            ch.prompt = prompts.human;
        } else {
            ch.prompt = {s.prompt, kNegativePrompt};
        }
        ch.weight = s.weight.value_or(default_channel_weight(s, weights));
        ch.target = s.target;
        ch.cfg_weight = s.cfg_weight;
        ch.validate();
        out.push_back(std::move(ch));
    }
    return out;
}

// ---------------------------------------------------------------------------
// the whole run

struct DetectorConfig {
    std::filesystem::path pose; // ground-truth pose for the synthetic detector
    double jitter_px = 0.0;
    double foreground_threshold = 0.5;
};

struct RunConfig {
    SceneConfig scene;
    PipelineConfig pipeline;
    std::vector<ChannelSpec> channels;
    DetectorConfig detector;
};

namespace detail {

/// Section reader that remembers which keys were read, so leftovers can be
/// reported as typos.
class Section {
public:
    Section(std::string name, const boost::property_tree::ptree& node) : name_(std::move(name)), node_(node) {}

    template <class T>
    std::optional<T> get(const std::string& key) {
        used_.insert(key);
        const auto v = node_.get_optional<std::string>(boost::property_tree::ptree::path_type(key, '/'));
        if (!v) {
            return std::nullopt;
        }
        return convert<T>(key, *v);
    }

    template <class T>
    void read(const std::string& key, T& out) {
        if (auto v = get<T>(key)) {
            out = *v;
        }
    }

    void finish() const {
        for (const auto& [k, v] : node_) {
            if (!used_.count(k)) {
                throw ParseError("config [" + name_ + "]: unknown key '" + k + "'", 0);
            }
        }
    }

private:
    template <class T>
    T convert(const std::string& key, const std::string& text) const {
        std::istringstream in(text);
        if constexpr (std::is_same_v<T, std::string>) {
            return text;
        } else if constexpr (std::is_same_v<T, bool>) {
            if (text == "true" || text == "1" || text == "yes") {
                return true;
            }
            if (text == "false" || text == "0" || text == "no") {
                return false;
            }
        } else if constexpr (std::is_same_v<T, Vec3>) {
            Vec3 v;
            if (in >> v.x() >> v.y() >> v.z() && (in >> std::ws).eof()) {
                return v;
            }
        } else {
            T v{};
            if (in >> v && (in >> std::ws).eof()) {
                return v;
            }
        }
        throw ParseError("config [" + name_ + "] " + key + ": cannot parse '" + text + "'", 0);
    }

    std::string name_;
    const boost::property_tree::ptree& node_;
    std::set<std::string> used_;
};

inline std::filesystem::path resolve(const std::filesystem::path& base, const std::string& p) {
    const std::filesystem::path path(p);
    return path.is_absolute() ? path : base / path;
}

template <class E>
E parse_enum(const std::string& where, const std::string& text, std::initializer_list<std::pair<const char*, E>> opts) {
    for (const auto& [k, v] : opts) {
        if (text == k) {
            return v;
        }
    }
    throw ParseError("config " + where + ": unknown value '" + text + "'", 0);
}

} // namespace detail

/**
 * Reads an INI run description. Sections: [scene], [field], [schedule.N],
 * [weights], [guidance.channel.N], [cameras], [mesh2field], [posefit],
 * [poseviews], [detector], [output]. Unset keys keep their defaults; any
 * [schedule.N] section replaces the standard schedule, ordered by N.
 * Relative paths resolve against `base`.
 */
inline RunConfig parse_config(std::istream& in, const std::filesystem::path& base = ".") {
    namespace pt = boost::property_tree;
    pt::ptree tree;
    try {
        pt::read_ini(in, tree);
    } catch (const pt::ini_parser_error& e) {
        throw ParseError("config: " + e.message(), static_cast<int>(e.line()));
    }
    RunConfig rc;
    PipelineConfig& pc = rc.pipeline;
    std::map<int, Stage> stages;
    std::map<int, ChannelSpec> channels;
    json echo = json::object();

    for (const auto& [name, node] : tree) {
        json& je = echo[name];
        for (const auto& [k, v] : node) {
            je[k] = v.data();
        }
        detail::Section s(name, node);
        auto str = [&](const std::string& k) { return s.get<std::string>(k); };
        if (name == "scene") {
            auto& sc = rc.scene;
            if (auto v = str("object")) {
                sc.object_mesh = detail::resolve(base, *v);
            }
            if (auto v = str("rig")) {
                sc.rig = *v == "demo" ? std::filesystem::path() : detail::resolve(base, *v);
            }
            s.read("rotation", sc.placement.rotation_deg);
            s.read("translation", sc.placement.translation);
            s.read("scale", sc.placement.scale);
            s.read("interaction", sc.interaction);
            s.read("category", sc.category);
            s.read("iterations", sc.iterations);
            if (auto v = s.get<std::uint64_t>("seed")) {
                sc.seed = *v;
            }
        } else if (name == "field") {
            s.read("resolution", pc.field_resolution);
            s.read("bias_amplitude", pc.bias_amplitude);
            s.read("bias_sigma", pc.bias_sigma);
        } else if (name.rfind("schedule.", 0) == 0) {
            int idx = 0;
            try {
                idx = std::stoi(name.substr(9));
            } catch (const std::exception&) {
                throw ParseError("config: bad section name [" + name + "]", 0);
            }
            Stage st;
            st.name = "stage" + std::to_string(idx);
            s.read("name", st.name);
            if (auto v = str("kind")) {
                st.kind = detail::parse_enum<StageKind>(name + " kind", *v,
                                                        {{"initial", StageKind::initial}, {"refine", StageKind::refine}});
                if (st.kind == StageKind::refine) {
                    st.human_only_channels = false;
                }
            }
            s.read("steps", st.steps);
            s.read("resolution", st.resolution);
            s.read("t_min", st.t_min);
            s.read("t_max", st.t_max);
            s.read("batch_size", st.batch_size);
            s.read("background_prob", st.background_prob);
            s.read("samples_per_ray", st.samples_per_ray);
            s.read("lr", st.lr);
            s.read("weight_decay", st.weight_decay);
            if (auto v = s.get<double>("sparsity_weight")) {
                st.sparsity_weight = *v;
            }
            s.read("human_only_channels", st.human_only_channels);
            stages[idx] = st;
        } else if (name == "weights") {
            auto& w = pc.weights;
            s.read("sds_ho", w.sds_ho);
            s.read("sds_h", w.sds_h);
            s.read("sds_h_mv", w.sds_h_mv);
            s.read("sparsity", w.sparsity);
            s.read("intersection", w.intersection);
            s.read("eta", w.eta);
            s.read("sds_scale", pc.distill.sds_scale);
            if (auto v = str("weighting")) {
                pc.distill.weighting = detail::parse_enum<SdsWeighting>(
                    "weights weighting", *v, {{"unit", SdsWeighting::unit}, {"normalizing", SdsWeighting::normalizing}});
            }
            s.read("provider_retries", pc.distill.provider_retries);
        } else if (name.rfind("guidance.channel.", 0) == 0) {
            int idx = 0;
            try {
                idx = std::stoi(name.substr(17));
            } catch (const std::exception&) {
                throw ParseError("config: bad section name [" + name + "]", 0);
            }
            ChannelSpec c;
            c.name = "channel" + std::to_string(idx);
            s.read("name", c.name);
            if (auto v = str("provider")) {
                c.provider = detail::parse_enum<ProviderKind>(name + " provider", *v,
                                                              {{"image_matching", ProviderKind::image_matching},
                                                               {"echo", ProviderKind::echo},
                                                               {"external", ProviderKind::external}});
            }
            if (auto v = str("target")) {
                c.target = detail::parse_enum<RenderTarget>(
                    name + " target", *v, {{"composite", RenderTarget::composite}, {"human_only", RenderTarget::human_only}});
            }
            if (auto v = str("capability")) {
                c.capability = detail::parse_enum<Capability>(
                    name + " capability", *v,
                    {{"single_view", Capability::single_view}, {"multi_view", Capability::multi_view}});
            }
            s.read("prompt", c.prompt);
            if (auto v = s.get<double>("weight")) {
                c.weight = *v;
            }
            s.read("cfg_weight", c.cfg_weight);
            if (auto v = str("targets")) {
                c.targets = detail::resolve(base, *v);
            }
            s.read("command", c.command);
            s.read("timeout", c.timeout_seconds);
            s.read("retries", c.retries);
            channels[idx] = c;
        } else if (name == "cameras") {
            auto& cs = pc.cameras;
            if (auto v = str("mode")) {
                cs.mode = detail::parse_enum<CameraSource::Mode>(
                    "cameras mode", *v, {{"random", CameraSource::Mode::random}, {"fixed", CameraSource::Mode::fixed}});
            }
            s.read("fov_min", cs.sampler.fov_min_deg);
            s.read("fov_max", cs.sampler.fov_max_deg);
            s.read("distance_scale_min", cs.sampler.scale_min);
            s.read("distance_scale_max", cs.sampler.scale_max);
            s.read("elevation_min", cs.sampler.elevation_min_deg);
            s.read("elevation_max", cs.sampler.elevation_max_deg);
            if (auto v = s.get<bool>("below_object"); v && *v) {
                cs.sampler.elevation_min_deg = -cs.sampler.elevation_max_deg;
            }
            if (auto v = str("fixed")) {
                cs.fixed = load_cameras(detail::resolve(base, *v));
            }
            cs.sampler.validate();
        } else if (name == "mesh2field") {
            auto& m = pc.mesh_to_field;
            s.read("n_points", m.n_points);
            s.read("iterations", m.iterations);
            s.read("lr", m.lr);
            s.read("tau_max", m.tau_max);
            s.read("sample_sigma", m.sample_sigma);
        } else if (name == "posefit") {
            auto& f = pc.pose_fit;
            if (auto v = str("method")) {
                f.method = detail::parse_enum<PoseFitMethod>(
                    "posefit method", *v,
                    {{"adam", PoseFitMethod::adam}, {"levenberg_marquardt", PoseFitMethod::levenberg_marquardt}});
            }
            if (auto v = str("kernel")) {
                f.kernel = detail::parse_enum<RobustKernel>(
                    "posefit kernel", *v, {{"none", RobustKernel::none}, {"geman_mcclure", RobustKernel::geman_mcclure}});
            }
            s.read("iterations", f.iterations);
            s.read("step_size", f.step_size);
            s.read("prior_weight", f.prior_weight);
            s.read("kernel_scale", f.kernel_scale);
        } else if (name == "poseviews") {
            auto& v = pc.pose_views;
            s.read("n_views", v.n_views);
            s.read("resolution", v.resolution);
            s.read("distance", v.distance);
            s.read("elevation", v.elevation_deg);
            s.read("fov", v.fov_deg);
        } else if (name == "detector") {
            if (auto v = str("pose")) {
                rc.detector.pose = detail::resolve(base, *v);
            }
            s.read("jitter", rc.detector.jitter_px);
            s.read("foreground_threshold", rc.detector.foreground_threshold);
        } else if (name == "output") {
            if (auto v = str("dir")) {
                pc.output_dir = detail::resolve(base, *v);
            }
            s.read("preview_resolution", pc.preview_resolution);
        } else {
            throw ParseError("config: unknown section [" + name + "]", 0);
        }
        s.finish();
    }
    if (!stages.empty()) {
        pc.schedule.stages.clear();
        for (auto& [i, st] : stages) {
            pc.schedule.stages.push_back(st);
        }
    }
    for (auto& [i, c] : channels) {
        rc.channels.push_back(c);
    }
    pc.iterations = rc.scene.iterations;
    if (rc.scene.seed) {
        pc.seed = *rc.scene.seed;
    }
    pc.echo = echo;
    rc.scene.validate();
    pc.schedule.validate();
    pc.weights.validate();
    return rc;
}

inline RunConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw Error("cannot open config " + path.string());
    }
    return parse_config(in, path.parent_path());
}

} // namespace hoi
