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
#include "hoipose/demo_humanoid.hpp"
#include "hoipose/pipeline.hpp"
#include "test_util.hpp"

#include <gtest/gtest.h>

#include <set>

using namespace hoi;

namespace {

/// Wraps a provider and throws on the listed call numbers (1-based).
class FlakyProvider : public GuidanceProvider {
public:
    FlakyProvider(std::shared_ptr<GuidanceProvider> inner, std::set<std::size_t> fail_on)
        : inner_(std::move(inner)), fail_on_(std::move(fail_on)) {}
    Capability capability() const override { return inner_->capability(); }
    std::string name() const override { return "flaky"; }
    std::set<std::size_t> fail_on_;

protected:
    NoisePrediction do_predict(const std::vector<Image>& noisy, double t, const Prompt& p,
                               const std::vector<Mat4>* cams) override {
        if (fail_on_.count(call_count())) {
            throw Error("simulated timeout");
        }
        return inner_->predict(noisy, t, p, cams);
    }

private:
    std::shared_ptr<GuidanceProvider> inner_;
};

Prompt test_prompt() { return {"a photo of a person sitting on a box", kNegativePrompt}; }

std::vector<Camera> ring_cameras(int n, int res) {
    std::vector<Camera> out;
    for (int i = 0; i < n; ++i) {
        out.push_back(orbit_camera(2 * kPi * i / n, deg2rad(20.0), 3.0, deg2rad(40.0), res, res));
    }
    return out;
}

/// Reference field: a red ball of radius 0.4.
VoxelField reference_field(int n) {
    VoxelField f(n);
    const double h = 2.0 / n;
    for (int z = 0; z < n; ++z) {
        for (int y = 0; y < n; ++y) {
            for (int x = 0; x < n; ++x) {
                const Vec3 p(-1 + (x + 0.5) * h, -1 + (y + 0.5) * h, -1 + (z + 0.5) * h);
                const int v = f.index(x, y, z);
                f.raw_density(v) = p.norm() < 0.4 ? 4.0 : -6.0;
                f.color_logit(v, 0) = 2.0;
                f.color_logit(v, 1) = -2.0;
                f.color_logit(v, 2) = -2.0;
            }
        }
    }
    return f;
}

RenderOptions probe_options() {
    RenderOptions ro;
    ro.stratified = false;
    ro.samples_per_ray = 64;
    return ro;
}

std::vector<ImageMatchingProvider::View> reference_views(const VoxelField& ref, const std::vector<Camera>& cams) {
    std::vector<ImageMatchingProvider::View> views;
    for (const auto& c : cams) {
        views.push_back({c.camera_to_world(), render_field(ref, c, probe_options()).rgb});
    }
    return views;
}

Stage small_stage(int steps, int res) {
    Stage s;
    s.name = "small";
    s.steps = steps;
    s.resolution = res;
    s.batch_size = 2;
    s.samples_per_ray = 32;
    s.background_prob = 0.0;
    s.lr = 0.05;
    s.weight_decay = 0.0;
    s.sparsity_weight = 0.0;
    return s;
}

} // namespace

TEST(CameraSampler, DistanceFollowsFieldOfView) {
    std::mt19937_64 rng(3);
    CameraSampler s;
    for (int i = 0; i < 200; ++i) {
        const Camera c = sample_camera(rng, s, 32, 32);
        const double fov = c.vertical_fov;
        EXPECT_GE(fov, deg2rad(15.0) - 1e-12);
        EXPECT_LE(fov, deg2rad(60.0) + 1e-12);
        const Vec3 pos = c.position;
        const double d = pos.norm() * std::tan(0.5 * fov);
        EXPECT_GE(d, 0.8 - 1e-9);
        EXPECT_LE(d, 1.0 + 1e-9);
        const double elev = std::asin(pos.z() / pos.norm());
        EXPECT_GE(elev, -1e-9);
        EXPECT_LE(elev, deg2rad(30.0) + 1e-9);
        // looks at the origin
        const Projection p = project(Vec3::Zero(), c);
        EXPECT_NEAR(p.pixel.x(), 16.0, 1e-6);
        EXPECT_NEAR(p.pixel.y(), 16.0, 1e-6);
    }
    CameraSampler bad;
    bad.fov_min_deg = 70;
    EXPECT_THROW(sample_camera(rng, bad, 8, 8), InvalidArgument);
}

TEST(CameraSampler, ClosedFormDistance) {
    CameraSampler s;
    s.fov_min_deg = s.fov_max_deg = 30.0;
    s.scale_min = s.scale_max = 1.0;
    std::mt19937_64 rng(0);
    EXPECT_NEAR(sample_camera(rng, s, 16, 16).position.norm(), 3.7321, 1e-4);
}

TEST(CameraSampler, ImageFractionIndependentOfFov) {
    // vertical extent of a unit segment at elevation 0, D = 1
    std::vector<double> fraction;
    for (double f : {15.0, 35.0, 60.0}) {
        CameraSampler s;
        s.fov_min_deg = s.fov_max_deg = f;
        s.scale_min = s.scale_max = 1.0;
        s.elevation_min_deg = s.elevation_max_deg = 0.0;
        std::mt19937_64 rng(5);
        const Camera c = sample_camera(rng, s, 200, 200);
        const double top = project(Vec3(0, 0, 0.5), c).pixel.y();
        const double bottom = project(Vec3(0, 0, -0.5), c).pixel.y();
        fraction.push_back(std::abs(bottom - top) / 200.0);
    }
    EXPECT_NEAR(fraction[1] / fraction[0], 1.0, 0.01);
    EXPECT_NEAR(fraction[2] / fraction[0], 1.0, 0.01);
}

TEST(CameraSampler, FovMeanStatistics) {
    std::mt19937_64 rng(8);
    const int n = 10000;
    double sum = 0.0;
    for (int i = 0; i < n; ++i) {
        sum += rad2deg(sample_camera(rng, CameraSampler{}, 8, 8).vertical_fov);
    }
    const double sigma = 45.0 / std::sqrt(12.0) / std::sqrt(double(n));
    EXPECT_NEAR(sum / n, 37.5, 3 * sigma);
}

TEST(CameraSampler, BelowObjectSwitch) {
    CameraSampler s;
    s.elevation_min_deg = -30.0;
    std::mt19937_64 rng(2);
    bool below = false;
    for (int i = 0; i < 100; ++i) {
        below |= sample_camera(rng, s, 8, 8).position.z() < 0.0;
    }
    EXPECT_TRUE(below);
}

TEST(CameraSource, FixedSetDrawsWithoutReplacement) {
    CameraSource src;
    src.mode = CameraSource::Mode::fixed;
    src.fixed = ring_cameras(5, 16);
    std::mt19937_64 rng(1);
    const auto batch = src.sample(rng, 5, 24);
    std::set<double> xs;
    for (const auto& c : batch) {
        EXPECT_EQ(c.width, 24);
        xs.insert(std::round(c.position.x() * 1e6));
    }
    EXPECT_EQ(xs.size(), 5u);
    EXPECT_EQ(src.sample(rng, 12, 8).size(), 12u);
    src.fixed.clear();
    EXPECT_THROW(src.sample(rng, 1, 8), InvalidArgument);
}

TEST(Prompts, Templates) {
    const auto p = build_prompts("sitting on", "chair");
    EXPECT_EQ(p.interaction.positive, "a photo of a person sitting on a chair, high detail, photography");
    EXPECT_EQ(p.human.positive, "a photo of a person, high detail, photography");
    EXPECT_EQ(p.interaction.negative, "missing limbs, missing legs, missing arms");
    EXPECT_EQ(p.human.negative, p.interaction.negative);
    EXPECT_THROW(build_prompts("", "chair"), InvalidArgument);
}

TEST(Schedule, StandardValues) {
    const auto s = StageSchedule::standard();
    ASSERT_EQ(s.of_kind(StageKind::initial).size(), 2u);
    ASSERT_EQ(s.of_kind(StageKind::refine).size(), 1u);
    const Stage& a = *s.of_kind(StageKind::initial)[0];
    const Stage& b = *s.of_kind(StageKind::initial)[1];
    const Stage& r = *s.of_kind(StageKind::refine)[0];
    EXPECT_EQ(a.resolution, 64);
    EXPECT_EQ(a.batch_size, 8);
    EXPECT_EQ(b.resolution, 256);
    EXPECT_EQ(b.batch_size, 4);
    EXPECT_DOUBLE_EQ(a.t_max, 0.98);
    EXPECT_EQ(r.resolution, 512);
    EXPECT_DOUBLE_EQ(r.t_min, 0.02);
    EXPECT_DOUBLE_EQ(r.t_max, 0.70);
    EXPECT_DOUBLE_EQ(r.lr, 0.001);
    EXPECT_DOUBLE_EQ(*r.sparsity_weight, 1000.0);
    EXPECT_DOUBLE_EQ(r.background_prob, 1.0);
    EXPECT_FALSE(r.human_only_channels);
    EXPECT_NO_THROW(s.validate());
    Stage bad = a;
    bad.t_max = 1.0;
    EXPECT_THROW(bad.validate(), InvalidArgument);
    bad = a;
    bad.batch_size = 0;
    EXPECT_THROW(bad.validate(), InvalidArgument);
}

TEST(DistillStage, ImageMatchingPullsTowardReference) {
    const int n = 16;
    const auto cams = ring_cameras(6, 24);
    const VoxelField ref = reference_field(n);
    auto provider = make_image_matching_provider(reference_views(ref, cams));
    GuidanceChannel ch{"ho", provider, test_prompt(), 1.0, RenderTarget::composite, 50.0};
    ProbeSet probe{cams, {}, probe_options()};
    for (const auto& v : reference_views(ref, cams)) {
        probe.targets.push_back(v.target);
    }
    VoxelField f(n);
    init_density_bias(f, 5.0, 0.5);
    CameraSource src;
    src.mode = CameraSource::Mode::fixed;
    src.fixed = cams;
    DistillOptions opt;
    opt.weighting = SdsWeighting::normalizing;
    const double before = probe_mse(f, nullptr, probe);
    std::mt19937_64 rng(7);
    int logged = 0;
    distill_stage(f, nullptr, {ch}, small_stage(60, 24), LossWeights{}, src, rng, opt,
                  [&](const StepLog& s) {
                      EXPECT_EQ(s.step, logged++);
                      ASSERT_EQ(s.channel_norms.size(), 1u);
                      EXPECT_GT(s.t, 0.02 - 1e-12);
                  });
    EXPECT_EQ(logged, 60);
    EXPECT_EQ(provider->call_count(), 60u);
    const double after = probe_mse(f, nullptr, probe);
    EXPECT_LT(after, 0.5 * before) << before << " -> " << after;
}

TEST(DistillStage, RefineSkipsHumanOnlyChannels) {
    auto ho = std::make_shared<EchoProvider>();
    auto h = std::make_shared<EchoProvider>();
    std::vector<GuidanceChannel> chans{{"ho", ho, test_prompt(), 0.9, RenderTarget::composite, 50.0},
                                       {"h", h, test_prompt(), 0.1, RenderTarget::human_only, 50.0}};
    VoxelField f(8);
    init_density_bias(f, 5.0, 0.5);
    const IndexedMesh box(test::unit_cube());
    Stage s = small_stage(3, 8);
    std::mt19937_64 rng(1);
    distill_stage(f, &box, chans, s, LossWeights{}, CameraSource{}, rng);
    EXPECT_EQ(ho->call_count(), 3u);
    EXPECT_EQ(h->call_count(), 3u);
    s.human_only_channels = false;
    distill_stage(f, &box, chans, s, LossWeights{}, CameraSource{}, rng);
    EXPECT_EQ(ho->call_count(), 6u);
    EXPECT_EQ(h->call_count(), 3u);
    chans[0].weight = 0.0;
    distill_stage(f, &box, chans, s, LossWeights{}, CameraSource{}, rng);
    EXPECT_EQ(ho->call_count(), 6u);
}

TEST(DistillStage, ZeroWeightsOrZeroStepsLeaveFieldUnchanged) {
    VoxelField f(8);
    init_density_bias(f, 5.0, 0.5);
    const std::vector<double> before(f.params().begin(), f.params().end());
    auto echo = std::make_shared<EchoProvider>();
    std::vector<GuidanceChannel> chans{{"ho", echo, test_prompt(), 0.0, RenderTarget::composite, 50.0},
                                       {"h", echo, test_prompt(), 0.0, RenderTarget::human_only, 50.0}};
    const IndexedMesh box(test::unit_cube());
    LossWeights w;
    w.sparsity = 0.0;
    w.intersection = 0.0;
    Stage s = small_stage(3, 8);
    s.sparsity_weight.reset();
    s.weight_decay = 0.01;
    std::mt19937_64 rng(1);
    distill_stage(f, &box, chans, s, w, CameraSource{}, rng);
    EXPECT_TRUE(std::equal(before.begin(), before.end(), f.params().begin()));
    s = small_stage(0, 8);
    distill_stage(f, &box, chans, s, LossWeights{}, CameraSource{}, rng);
    EXPECT_TRUE(std::equal(before.begin(), before.end(), f.params().begin()));
    EXPECT_EQ(echo->call_count(), 0u);
}

TEST(DistillStage, AssembledGradientNormDropsTenfold) {
    const int n = 16;
    const auto cams = ring_cameras(4, 16);
    auto provider = make_image_matching_provider(reference_views(reference_field(n), cams));
    GuidanceChannel ch{"ho", provider, test_prompt(), 1.0, RenderTarget::composite, 50.0};
    VoxelField f(n);
    init_density_bias(f, 5.0, 0.5);
    CameraSource src;
    src.mode = CameraSource::Mode::fixed;
    src.fixed = cams;
    DistillOptions opt;
    opt.weighting = SdsWeighting::normalizing;
    Stage s = small_stage(300, 16);
    s.batch_size = 4;
    s.samples_per_ray = 64;
    std::vector<double> norms;
    std::mt19937_64 rng(12);
    distill_stage(f, nullptr, {ch}, s, LossWeights{}, src, rng, opt,
                  [&](const StepLog& l) { norms.push_back(l.grad_norm); });
    EXPECT_LT(norms.back(), 0.1 * norms.front()) << norms.front() << " -> " << norms.back();
}

TEST(DistillStage, SparsityAloneShrinksOpacity) {
    VoxelField f(12);
    init_density_bias(f, 5.0, 0.5);
    auto echo = std::make_shared<EchoProvider>();
    GuidanceChannel off{"ho", echo, test_prompt(), 0.0, RenderTarget::composite, 50.0};
    Stage s = small_stage(30, 16);
    s.sparsity_weight = 10.0;
    LossWeights w;
    w.eta = 0.05;
    std::vector<double> opacity;
    std::mt19937_64 rng(2);
    CameraSource src;
    src.mode = CameraSource::Mode::fixed;
    src.fixed = ring_cameras(4, 16);
    distill_stage(f, nullptr, {off}, s, w, src, rng, {}, [&](const StepLog& l) { opacity.push_back(l.mean_opacity); });
    ASSERT_EQ(opacity.size(), 30u);
    EXPECT_LT(opacity.back(), 0.7 * opacity.front());
    EXPECT_EQ(echo->call_count(), 0u);
}

TEST(DistillStage, IntersectionTermLogged) {
    VoxelField f(12);
    init_density_bias(f, 5.0, 0.5);
    const IndexedMesh box(test::unit_cube());
    auto echo = std::make_shared<EchoProvider>();
    GuidanceChannel off{"ho", echo, test_prompt(), 0.0, RenderTarget::composite, 50.0};
    Stage s = small_stage(10, 16);
    std::vector<double> ri;
    std::mt19937_64 rng(4);
    distill_stage(f, &box, {off}, s, LossWeights{}, CameraSource{}, rng, {},
                  [&](const StepLog& l) { ri.push_back(l.r_i); });
    EXPECT_GT(ri.front(), 0.0);
    EXPECT_LT(ri.back(), ri.front());
}

TEST(DistillStage, ProviderErrorRetriedOnceThenAborts) {
    auto inner = std::make_shared<EchoProvider>();
    auto flaky = std::make_shared<FlakyProvider>(inner, std::set<std::size_t>{2});
    GuidanceChannel ch{"ho", flaky, test_prompt(), 1.0, RenderTarget::composite, 50.0};
    VoxelField f(8);
    std::mt19937_64 rng(5);
    EXPECT_NO_THROW(distill_stage(f, nullptr, {ch}, small_stage(4, 8), LossWeights{}, CameraSource{}, rng));
    EXPECT_EQ(flaky->call_count(), 5u);

    flaky->fail_on_ = {7, 8};
    try {
        distill_stage(f, nullptr, {ch}, small_stage(4, 8), LossWeights{}, CameraSource{}, rng);
        FAIL() << "expected abort";
    } catch (const StageAborted& e) {
        EXPECT_EQ(e.failed_step, 1);
        EXPECT_NE(std::string(e.what()).find("simulated timeout"), std::string::npos);
    }
}

TEST(DistillStage, SameSeedSameField) {
    auto run = [] {
        VoxelField f(10);
        init_density_bias(f, 5.0, 0.5);
        const auto cams = ring_cameras(3, 12);
        auto provider = make_image_matching_provider(reference_views(reference_field(10), cams));
        GuidanceChannel ch{"ho", provider, test_prompt(), 1.0, RenderTarget::composite, 50.0};
        Stage s = small_stage(8, 12);
        s.background_prob = 0.5;
        std::mt19937_64 rng(99);
        CameraSource src;
        src.mode = CameraSource::Mode::fixed;
        src.fixed = cams;
        distill_stage(f, nullptr, {ch}, s, LossWeights{}, src, rng);
        return std::vector<double>(f.params().begin(), f.params().end());
    };
    EXPECT_EQ(run(), run());
}

TEST(SdsDump, MatchesClosedForm) {
    const VoxelField ref = reference_field(10);
    VoxelField f(10);
    init_density_bias(f, 5.0, 0.5);
    const Camera cam = ring_cameras(1, 12)[0];
    const Image target = render_field(ref, cam, probe_options()).rgb;
    GuidanceChannel ch{"ho", make_image_matching_provider(target), test_prompt(), 1.0, RenderTarget::composite, 50.0};
    std::mt19937_64 rng(3);
    const Image eps = gaussian_image(12, 12, 3, rng);
    const double t = 0.4;
    const auto d = sds_gradient_dump(f, nullptr, ch, cam, t, eps, probe_options());
    const double a = NoiseSchedule::alpha_bar(t);
    const double k = std::sqrt(a) / std::sqrt(1 - a);
    const Image x = render_field(f, cam, probe_options()).rgb;
    for (int y = 0; y < 12; ++y) {
        for (int xx = 0; xx < 12; ++xx) {
            double s = 0;
            for (int c = 0; c < 3; ++c) {
                const double expect = k * (x.at(xx, y, c) - target.at(xx, y, c));
                EXPECT_NEAR(d.residual.at(xx, y, c), expect, 1e-9);
                s += expect * expect;
            }
            EXPECT_NEAR(d.norm.at(xx, y, 0), std::sqrt(s), 1e-9);
        }
    }
}

TEST(SdsDump, EchoOfTheNoiseIsZero) {
    VoxelField f(8);
    init_density_bias(f, 5.0, 0.5);
    auto echo = std::make_shared<EchoProvider>();
    std::mt19937_64 rng(1);
    const Image eps = gaussian_image(12, 12, 3, rng);
    const Camera cam = ring_cameras(1, 12)[0];
    const Image x = render_field(f, cam, {}).rgb;
    echo->set_response({recover_noise(add_noise(x, 0.5, eps), x, 0.5)});
    GuidanceChannel ch{"h", echo, test_prompt(), 1.0, RenderTarget::human_only, 50.0};
    const auto d = sds_gradient_dump(f, nullptr, ch, cam, 0.5, eps);
    EXPECT_EQ(d.residual.squared_norm(), 0.0);
    EXPECT_EQ(d.norm.squared_norm(), 0.0);
}

// ---------------------------------------------------------------------------
// end-to-end on a tiny configuration

namespace {

struct TinyRun {
    SkinnedMesh rig = demo::humanoid(0.05, 0.05);
    Pose gt = demo::seated_pose();
    std::shared_ptr<ImageMatchingProvider> provider;
    std::unique_ptr<OracleKeypointDetector> detector;

    PipelineConfig config(const std::filesystem::path& dir) const {
        PipelineConfig cfg;
        cfg.field_resolution = 16;
        cfg.iterations = 1;
        cfg.seed = 11;
        Stage a = small_stage(4, 16);
        a.name = "coarse";
        Stage r = small_stage(3, 16);
        r.name = "refine";
        r.kind = StageKind::refine;
        r.human_only_channels = false;
        cfg.schedule.stages = {a, r};
        cfg.cameras.mode = CameraSource::Mode::fixed;
        cfg.cameras.fixed = ring_cameras(4, 16);
        cfg.mesh_to_field.n_points = 400;
        cfg.mesh_to_field.iterations = 200;
        cfg.pose_views.n_views = 4;
        cfg.pose_views.resolution = 32;
        cfg.pose_fit.iterations = 30;
        cfg.preview_resolution = 16;
        cfg.output_dir = dir;
        return cfg;
    }

    PipelineInputs inputs(std::shared_ptr<GuidanceProvider> p) {
        PipelineInputs in;
        in.rig = &rig;
        in.object = demo::seat_box();
        in.channels = {{"ho", p, test_prompt(), 0.9, RenderTarget::composite, 50.0},
                       {"h", std::make_shared<EchoProvider>(), test_prompt(), 0.1, RenderTarget::human_only, 50.0}};
        in.detector = detector.get();
        return in;
    }

    TinyRun() {
        const VoxelField ref = reference_field(16);
        provider = make_image_matching_provider(reference_views(ref, ring_cameras(4, 16)));
        detector = std::make_unique<OracleKeypointDetector>(joint_positions(rig.skeleton, gt));
    }
};

std::filesystem::path fresh_dir(const std::string& name) {
    const auto d = std::filesystem::temp_directory_path() / ("hoipose_" + name);
    std::filesystem::remove_all(d);
    return d;
}

} // namespace

TEST(Pipeline, WritesArtifactsAndManifest) {
    TinyRun run;
    const auto dir = fresh_dir("pipeline_artifacts");
    const auto res = run_pipeline(run.config(dir), run.inputs(run.provider));
    ASSERT_EQ(res.poses.size(), 2u);
    for (const char* f : {"pose_t0.json", "pose_t1.json", "human_t0.obj", "human_t1.obj", "field_t0.vxf",
                          "field_t1.vxf", "log.csv", "manifest.json", "checkpoint/state.json"}) {
        EXPECT_TRUE(std::filesystem::exists(dir / f)) << f;
    }
    const json m = read_json_file(dir / "manifest.json");
    EXPECT_EQ(m.at("status"), "complete");
    ASSERT_EQ(m.at("stages").size(), 2u);
    EXPECT_EQ(m.at("stages")[0].at("provider_calls").at("ho"), 4);
    EXPECT_EQ(m.at("stages")[0].at("provider_calls").at("h"), 4);
    EXPECT_EQ(m.at("stages")[1].at("provider_calls").at("h"), 0);
    EXPECT_DOUBLE_EQ(m.at("stages")[1].at("lr").get<double>(), 0.05);
    // header plus 7 steps
    std::ifstream csv(dir / "log.csv");
    int lines = 0;
    for (std::string l; std::getline(csv, l);) {
        ++lines;
    }
    EXPECT_EQ(lines, 8);
    // the oracle detector drives the fit close to the seated pose
    EXPECT_LT(mean_joint_error(run.rig.skeleton, res.final_pose, run.gt, 1.649), 0.05);
}

TEST(Pipeline, ResumeAfterFailureMatchesUninterrupted) {
    TinyRun a;
    const auto dir_a = fresh_dir("pipeline_clean");
    const auto clean = run_pipeline(a.config(dir_a), a.inputs(a.provider));

    TinyRun b;
    const auto dir_b = fresh_dir("pipeline_resume");
    // two consecutive failures in the refine stage (calls 5 and 6) exhaust the retry
    auto flaky = std::make_shared<FlakyProvider>(b.provider, std::set<std::size_t>{5, 6});
    auto cfg = b.config(dir_b);
    EXPECT_THROW(run_pipeline(cfg, b.inputs(flaky)), PipelineFailure);
    EXPECT_EQ(read_json_file(dir_b / "manifest.json").at("status"), "failed");
    flaky->fail_on_.clear();
    cfg.resume = true;
    const auto resumed = run_pipeline(cfg, b.inputs(flaky));
    ASSERT_EQ(resumed.poses.size(), clean.poses.size());
    ASSERT_EQ(resumed.stages.size(), 2u);
    EXPECT_EQ(resumed.stages[0].name, "coarse");
    EXPECT_EQ(resumed.stages[0].provider_calls.at("ho"), 4u);
    for (std::size_t t = 0; t < clean.poses.size(); ++t) {
        for (std::size_t k = 0; k < clean.poses[t].rotations.size(); ++k) {
            EXPECT_TRUE(clean.poses[t].rotations[k].isApprox(resumed.poses[t].rotations[k], 1e-12) ||
                        (clean.poses[t].rotations[k] - resumed.poses[t].rotations[k]).norm() < 1e-12);
        }
    }
    const auto fa = load_field(dir_a / "field_t1.vxf");
    const auto fb = load_field(dir_b / "field_t1.vxf");
    EXPECT_TRUE(std::equal(fa.params().begin(), fa.params().end(), fb.params().begin()));
}

TEST(Pipeline, ZeroIterationsStopsAtFirstPose) {
    TinyRun run;
    const auto dir = fresh_dir("pipeline_t0");
    auto cfg = run.config(dir);
    cfg.iterations = 0;
    const auto res = run_pipeline(cfg, run.inputs(run.provider));
    ASSERT_EQ(res.poses.size(), 1u);
    EXPECT_EQ(res.stages.size(), 1u);
    EXPECT_TRUE(std::filesystem::exists(dir / "pose_t0.json"));
    EXPECT_FALSE(std::filesystem::exists(dir / "pose_t1.json"));
}

TEST(Pipeline, RejectsBadConfig) {
    TinyRun run;
    auto cfg = run.config(fresh_dir("pipeline_bad"));
    cfg.schedule.stages.erase(cfg.schedule.stages.begin());
    EXPECT_THROW(run_pipeline(cfg, run.inputs(run.provider)), InvalidArgument);
    cfg = run.config(fresh_dir("pipeline_bad"));
    auto in = run.inputs(run.provider);
    in.detector = nullptr;
    EXPECT_THROW(run_pipeline(cfg, in), InvalidArgument);
}
