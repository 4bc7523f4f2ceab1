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
#include "hoipose/render.hpp"
#include "render_oracle.hpp"
#include "test_util.hpp"

#include <gtest/gtest.h>

using namespace hoi;

namespace {

VoxelField random_field(std::mt19937_64& rng, int n, double lo = -4.0, double hi = 1.5) {
    VoxelField f(n);
    std::uniform_real_distribution<double> d(lo, hi);
    std::uniform_real_distribution<double> c(-3.0, 3.0);
    for (std::size_t v = 0; v < f.voxel_count(); ++v) {
        f.raw_density(static_cast<int>(v)) = d(rng);
        for (int k = 0; k < 3; ++k) {
            f.color_logit(static_cast<int>(v), k) = c(rng);
        }
    }
    return f;
}

VoxelField empty_field(int n) {
    VoxelField f(n);
    for (std::size_t v = 0; v < f.voxel_count(); ++v) {
        f.raw_density(static_cast<int>(v)) = -1000.0;
    }
    return f;
}

Camera small_camera(const Vec3& pos, int w = 4, int h = 4, double fov_deg = 30.0) {
    Camera c;
    c.position = pos;
    c.look_at = Vec3::Zero();
    c.up = Vec3::UnitZ();
    if (std::abs(pos.normalized().z()) > 0.99) {
        c.up = Vec3::UnitY();
    }
    c.vertical_fov = deg2rad(fov_deg);
    c.width = w;
    c.height = h;
    return c;
}

Vec3 random_camera_position(std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u(2.5, 3.5);
    return test::random_unit(rng) * u(rng);
}

double weighted_sum(const RenderOutput& out, const Image& g_rgb, const Image* g_op) {
    double s = 0.0;
    for (std::size_t i = 0; i < out.rgb.data.size(); ++i) {
        s += out.rgb.data[i] * g_rgb.data[i];
    }
    if (g_op) {
        for (std::size_t i = 0; i < out.opacity.data.size(); ++i) {
            s += out.opacity.data[i] * g_op->data[i];
        }
    }
    return s;
}

} // namespace

TEST(RenderFieldTest, EmptyFieldShowsBackground) {
    const auto f = empty_field(8);
    RenderOptions opt;
    opt.samples_per_ray = 32;
    opt.background = Rgb(0.1, 0.7, 0.3);
    const auto out = render_field(f, small_camera(Vec3(0, -3, 0.5)), opt);
    for (int y = 0; y < 4; ++y) {
        for (int x = 0; x < 4; ++x) {
            EXPECT_EQ(out.opacity.at(x, y, 0), 0.0);
            for (int c = 0; c < 3; ++c) {
                EXPECT_EQ(out.rgb.at(x, y, c), opt.background[c]);
            }
        }
    }
}

TEST(RenderFieldTest, OpaqueSlabShowsItsColor) {
    VoxelField f(16);
    const Rgb slab(0.2, 0.6, 0.9);
    for (int z = 0; z < 16; ++z) {
        for (int y = 0; y < 16; ++y) {
            for (int x = 0; x < 16; ++x) {
                const int v = f.index(x, y, z);
                f.raw_density(v) = std::abs(f.voxel_center(x, y, z).z()) < 0.3 ? 1e6 : -1000.0;
                for (int c = 0; c < 3; ++c) {
                    f.color_logit(v, c) = logit(slab[c]);
                }
            }
        }
    }
    RenderOptions opt;
    opt.samples_per_ray = 64;
    opt.background = Rgb::Zero();
    const auto out = render_field(f, small_camera(Vec3(0, 0, 3), 4, 4, 10.0), opt);
    for (int y = 0; y < 4; ++y) {
        for (int x = 0; x < 4; ++x) {
            EXPECT_GE(out.opacity.at(x, y, 0), 1.0 - 1e-6);
            for (int c = 0; c < 3; ++c) {
                EXPECT_NEAR(out.rgb.at(x, y, c), slab[c], 1e-6);
            }
        }
    }
}

TEST(RenderFieldTest, MatchesScalarOracle) {
    std::mt19937_64 rng(11);
    for (int scene = 0; scene < 10; ++scene) {
        const auto f = random_field(rng, 6);
        RenderOptions opt;
        opt.samples_per_ray = 24;
        opt.seed = scene;
        opt.background = Rgb(0.3, 0.2, 0.9);
        const Camera cam = small_camera(random_camera_position(rng));
        const auto out = render_field(f, cam, opt);
        for (int y = 0; y < 4; ++y) {
            for (int x = 0; x < 4; ++x) {
                double op = 0.0;
                const Rgb expect = test::oracle_pixel(f, cam, opt, x, y, nullptr, &op, scene);
                for (int c = 0; c < 3; ++c) {
                    EXPECT_NEAR(out.rgb.at(x, y, c), expect[c], 1e-9);
                }
                EXPECT_NEAR(out.opacity.at(x, y, 0), op, 1e-9);
                EXPECT_LE(out.opacity.at(x, y, 0), 1.0);
            }
        }
    }
}

TEST(RenderFieldTest, OracleIsOrderIndependent) {
    std::mt19937_64 rng(12);
    const auto f = random_field(rng, 6);
    const auto sphere = test::uv_sphere(Vec3(0.1, 0, 0), 0.4);
    RenderOptions opt;
    opt.samples_per_ray = 16;
    const Camera cam = small_camera(Vec3(0, -3, 0.4));
    for (int y = 0; y < 4; ++y) {
        for (int x = 0; x < 4; ++x) {
            const Rgb a = test::oracle_pixel(f, cam, opt, x, y, &sphere, nullptr, 1);
            const Rgb b = test::oracle_pixel(f, cam, opt, x, y, &sphere, nullptr, 99);
            EXPECT_LT((a - b).norm(), 1e-9);
        }
    }
}

TEST(RenderFieldTest, RejectsBadInputs) {
    const auto f = empty_field(4);
    RenderOptions opt;
    opt.samples_per_ray = 1;
    EXPECT_THROW(render_field(f, small_camera(Vec3(0, -3, 0)), opt), InvalidArgument);
    opt.samples_per_ray = 8;
    EXPECT_THROW(render_field(f, small_camera(Vec3(0, -3, 0), 0, 4), opt), InvalidArgument);
}

TEST(RenderFieldTest, CameraInsideBallIsAllowed) {
    std::mt19937_64 rng(13);
    const auto f = random_field(rng, 6);
    RenderOptions opt;
    opt.samples_per_ray = 16;
    Camera cam = small_camera(Vec3(0.1, -0.3, 0.2));
    const auto out = render_field(f, cam, opt);
    for (int y = 0; y < 4; ++y) {
        for (int x = 0; x < 4; ++x) {
            const Rgb e = test::oracle_pixel(f, cam, opt, x, y, nullptr);
            EXPECT_NEAR(out.rgb.at(x, y, 0), e[0], 1e-9);
        }
    }
}

TEST(RenderFieldTest, Deterministic) {
    std::mt19937_64 rng(14);
    const auto f = random_field(rng, 8);
    RenderOptions opt;
    opt.samples_per_ray = 32;
    opt.seed = 5;
    const Camera cam = small_camera(Vec3(1, -3, 1), 16, 12);
    const auto a = render_field(f, cam, opt);
    const auto b = render_field(f, cam, opt);
    EXPECT_EQ(a.rgb.data, b.rgb.data);
    EXPECT_EQ(a.opacity.data, b.opacity.data);
    opt.seed = 6;
    EXPECT_NE(render_field(f, cam, opt).rgb.data, a.rgb.data);
}

TEST(RenderCompositeTest, MeshBeforeDensityShowsMeshColor) {
    const auto f = empty_field(8);
    TriangleMesh box = make_box(Vec3(-0.5, -0.5, -0.5), Vec3(0.5, 0.5, 0.5), Rgb(0.9, 0.1, 0.4));
    RenderOptions opt;
    opt.samples_per_ray = 16;
    const auto out = render_composite(f, IndexedMesh(box), small_camera(Vec3(0, -3, 0), 4, 4, 10.0), opt);
    for (int y = 0; y < 4; ++y) {
        for (int x = 0; x < 4; ++x) {
            // exact up to the barycentric blend of three equal vertex colors
            EXPECT_DOUBLE_EQ(out.rgb.at(x, y, 0), 0.9);
            EXPECT_DOUBLE_EQ(out.rgb.at(x, y, 1), 0.1);
            EXPECT_DOUBLE_EQ(out.rgb.at(x, y, 2), 0.4);
            EXPECT_EQ(out.opacity.at(x, y, 0), 0.0);
        }
    }
}

TEST(RenderCompositeTest, SlabInFrontHidesMesh) {
    VoxelField f(16);
    for (int z = 0; z < 16; ++z) {
        for (int y = 0; y < 16; ++y) {
            for (int x = 0; x < 16; ++x) {
                const int v = f.index(x, y, z);
                f.raw_density(v) = f.voxel_center(x, y, z).y() < -0.4 ? 50.0 : -1000.0;
                f.color_logit(v, 0) = logit(0.25);
                f.color_logit(v, 1) = logit(0.5);
                f.color_logit(v, 2) = logit(0.75);
            }
        }
    }
    const TriangleMesh box = make_box(Vec3(-0.3, -0.2, -0.3), Vec3(0.3, 0.2, 0.3), Rgb(1, 0, 0));
    RenderOptions opt;
    opt.samples_per_ray = 128;
    opt.background = Rgb::Zero();
    const auto out = render_composite(f, IndexedMesh(box), small_camera(Vec3(0, -3, 0), 4, 4, 5.0), opt);
    for (int y = 0; y < 4; ++y) {
        for (int x = 0; x < 4; ++x) {
            EXPECT_NEAR(out.rgb.at(x, y, 0), 0.25, 1e-6);
            EXPECT_NEAR(out.rgb.at(x, y, 1), 0.5, 1e-6);
            EXPECT_NEAR(out.rgb.at(x, y, 2), 0.75, 1e-6);
        }
    }
}

TEST(RenderCompositeTest, MatchesScalarOracleWithInsertion) {
    std::mt19937_64 rng(15);
    for (int scene = 0; scene < 10; ++scene) {
        const auto f = random_field(rng, 6);
        const Vec3 center = 0.3 * test::random_unit(rng);
        const auto sphere = test::uv_sphere(center, 0.35, 8, 10);
        RenderOptions opt;
        opt.samples_per_ray = 24;
        opt.seed = 100 + scene;
        const Camera cam = small_camera(random_camera_position(rng), 4, 4, 40.0);
        const auto out = render_composite(f, IndexedMesh(sphere), cam, opt);
        for (int y = 0; y < 4; ++y) {
            for (int x = 0; x < 4; ++x) {
                double op = 0.0;
                const Rgb e = test::oracle_pixel(f, cam, opt, x, y, &sphere, &op, scene);
                for (int c = 0; c < 3; ++c) {
                    EXPECT_NEAR(out.rgb.at(x, y, c), e[c], 1e-9);
                }
                EXPECT_NEAR(out.opacity.at(x, y, 0), op, 1e-9);
            }
        }
    }
}

TEST(RenderCompositeTest, MissOrFarMeshEqualsFieldRender) {
    std::mt19937_64 rng(16);
    const auto f = random_field(rng, 6);
    RenderOptions opt;
    opt.samples_per_ray = 24;
    const Camera cam = small_camera(Vec3(0, -3, 0), 8, 8, 40.0);
    const auto plain = render_field(f, cam, opt);
    // a box beside the view frustum: rays miss it
    const auto beside = render_composite(f, IndexedMesh(make_box(Vec3(5, 5, 5), Vec3(6, 6, 6))), cam, opt);
    EXPECT_EQ(beside.rgb.data, plain.rgb.data);
    // a box behind the far plane
    opt.far_plane = 6.0;
    const auto behind = render_composite(f, IndexedMesh(make_box(Vec3(-3, 8, -3), Vec3(3, 9, 3))), cam, opt);
    EXPECT_EQ(behind.rgb.data, render_field(f, cam, opt).rgb.data);
    // an empty mesh
    const auto none = render_composite(f, IndexedMesh(TriangleMesh{}), cam, opt);
    EXPECT_EQ(none.rgb.data, plain.rgb.data);
}

namespace {

void check_backward_against_fd(VoxelField f, const Camera& cam, const RenderOptions& opt, const TriangleMesh* mesh,
                               std::mt19937_64& rng, int px, int py, bool with_opacity) {
    const std::optional<IndexedMesh> indexed = mesh ? std::optional<IndexedMesh>(IndexedMesh(*mesh)) : std::nullopt;
    auto render = [&](const VoxelField& field) {
        return indexed ? render_composite(field, *indexed, cam, opt) : render_field(field, cam, opt);
    };
    std::normal_distribution<double> n(0.0, 1.0);
    Image g_rgb(cam.width, cam.height, 3);
    Image g_op(cam.width, cam.height, 1);
    for (int c = 0; c < 3; ++c) {
        g_rgb.at(px, py, c) = n(rng);
    }
    g_op.at(px, py, 0) = with_opacity ? n(rng) : 0.0;
    const auto out = render(f);
    const auto grad = render_backward(f, out.tape, g_rgb, &g_op);
    double worst = 0.0;
    int checked = 0;
    for (std::size_t i = 0; i < f.param_count(); ++i) {
        const double x0 = f.params()[i];
        f.params()[i] = x0 + 1e-4;
        const double lp = weighted_sum(render(f), g_rgb, &g_op);
        f.params()[i] = x0 - 1e-4;
        const double lm = weighted_sum(render(f), g_rgb, &g_op);
        f.params()[i] = x0;
        const double fd = (lp - lm) / 2e-4;
        if (grad.values[i] != 0.0 || fd != 0.0) {
            ++checked;
            worst = std::max(worst, test::rel_error(grad.values[i], fd, 1e-7));
        }
    }
    EXPECT_GT(checked, 0);
    EXPECT_LT(worst, 1e-3);
}

} // namespace

TEST(RenderBackwardTest, FieldRenderMatchesFiniteDifferences) {
    std::mt19937_64 rng(21);
    for (int trial = 0; trial < 4; ++trial) {
        const auto f = random_field(rng, 8);
        RenderOptions opt;
        opt.samples_per_ray = 32;
        opt.seed = trial;
        const Camera cam = small_camera(random_camera_position(rng), 4, 4, 30.0);
        check_backward_against_fd(f, cam, opt, nullptr, rng, trial % 4, (trial * 3) % 4, trial % 2 == 0);
    }
}

TEST(RenderBackwardTest, CompositeRenderMatchesFiniteDifferences) {
    std::mt19937_64 rng(22);
    const auto sphere = test::uv_sphere(Vec3(0.05, 0.1, 0), 0.3, 8, 10);
    for (int trial = 0; trial < 3; ++trial) {
        const auto f = random_field(rng, 8);
        RenderOptions opt;
        opt.samples_per_ray = 32;
        opt.seed = 7 + trial;
        const Camera cam = small_camera(random_camera_position(rng), 4, 4, 30.0);
        check_backward_against_fd(f, cam, opt, &sphere, rng, 1 + trial % 2, 2, true);
    }
}

TEST(RenderBackwardTest, ZeroUpstreamGivesZero) {
    std::mt19937_64 rng(23);
    const auto f = random_field(rng, 8);
    RenderOptions opt;
    opt.samples_per_ray = 16;
    const Camera cam = small_camera(Vec3(0, -3, 0));
    const auto out = render_field(f, cam, opt);
    const auto g = render_backward(f, out.tape, Image(4, 4, 3));
    EXPECT_EQ(g.norm(), 0.0);
}

TEST(RenderBackwardTest, NothingBehindTheMeshGetsGradient) {
    std::mt19937_64 rng(24);
    const auto f = random_field(rng, 8);
    // wall filling the view at y in [-0.1, 0.9]; camera looks along +y
    const TriangleMesh wall = make_box(Vec3(-3, -0.1, -3), Vec3(3, 0.9, 3));
    RenderOptions opt;
    opt.samples_per_ray = 32;
    const Camera cam = small_camera(Vec3(0, -3, 0), 6, 6, 30.0);
    const auto out = render_composite(f, IndexedMesh(wall), cam, opt);
    Image g_rgb(6, 6, 3);
    Image g_op(6, 6, 1);
    std::fill(g_rgb.data.begin(), g_rgb.data.end(), 1.0);
    std::fill(g_op.data.begin(), g_op.data.end(), 1.0);
    const auto g = render_backward(f, out.tape, g_rgb, &g_op);
    const double voxel = 2.0 / 8;
    int zeroed = 0;
    for (int z = 0; z < 8; ++z) {
        for (int y = 0; y < 8; ++y) {
            for (int x = 0; x < 8; ++x) {
                if (f.voxel_center(x, y, z).y() > -0.1 + voxel) {
                    const int v = f.index(x, y, z);
                    ++zeroed;
                    EXPECT_EQ(g.values[v], 0.0);
                    for (int c = 0; c < 3; ++c) {
                        EXPECT_EQ(g.values[f.voxel_count() + 3 * v + c], 0.0);
                    }
                }
            }
        }
    }
    EXPECT_GT(zeroed, 0);
    EXPECT_GT(g.norm(), 0.0);
}

TEST(RenderBackwardTest, RejectsMismatchedTape) {
    std::mt19937_64 rng(25);
    auto f = random_field(rng, 6);
    RenderOptions opt;
    opt.samples_per_ray = 8;
    const auto out = render_field(f, small_camera(Vec3(0, -3, 0)), opt);
    EXPECT_THROW(render_backward(f, out.tape, Image(3, 4, 3)), InvalidArgument);
    Image bad_op(4, 4, 3);
    EXPECT_THROW(render_backward(f, out.tape, Image(4, 4, 3), &bad_op), InvalidArgument);
    f.bump_version();
    EXPECT_THROW(render_backward(f, out.tape, Image(4, 4, 3)), InvalidArgument);
}

TEST(RenderBackwardTest, ParallelReductionMatchesSerial) {
    std::mt19937_64 rng(26);
    const auto f = random_field(rng, 8);
    RenderOptions opt;
    opt.samples_per_ray = 16;
    const Camera cam = small_camera(Vec3(1, -3, 0.5), 12, 10);
    const auto out = render_field(f, cam, opt);
    Image g(12, 10, 3);
    std::normal_distribution<double> n;
    for (double& v : g.data) {
        v = n(rng);
    }
    const int saved = worker_count();
    worker_count() = 1;
    const auto serial = render_backward(f, out.tape, g);
    worker_count() = 4;
    const auto parallel = render_backward(f, out.tape, g);
    const auto again = render_backward(f, out.tape, g);
    worker_count() = saved;
    EXPECT_EQ(parallel.values, again.values);
    for (std::size_t i = 0; i < serial.values.size(); ++i) {
        EXPECT_NEAR(serial.values[i], parallel.values[i], 1e-12 * (1.0 + std::abs(serial.values[i])));
    }
}
