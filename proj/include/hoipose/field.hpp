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
#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <span>

namespace hoi {

struct FieldSample {
    Rgb color = Rgb::Constant(0.5);
    double density = 0.0;
};

/// Trilinear stencil of a point: 8 voxel indices with their weights.
struct Stencil {
    std::array<int, 8> voxel{};
    std::array<double, 8> weight{};
    bool inside = false; // false outside the support radius
};

/**
 * Dense voxel radiance field over the cube [-1,1]^3 with cell-centered
 * samples. Parameters are pre-activation: raw density (softplus) and color
 * logits (sigmoid), interpolated trilinearly before activation. Density is
 * forced to zero outside the support ball.
 *
 * Parameter layout: params()[0, n) raw density, params()[n, 4n) color logits
 * as RGB triples, where n = nx*ny*nz and voxel (x, y, z) has index
 * (z*ny + y)*nx + x.
 */
class VoxelField {
public:
    VoxelField() = default;

    VoxelField(int nx, int ny, int nz, double support_radius = 1.0)
        : nx_(nx), ny_(ny), nz_(nz), radius_(support_radius) {
        if (nx < 2 || ny < 2 || nz < 2) {
            throw InvalidArgument("field resolution must be at least 2 per axis");
        }
        params_.assign(4 * voxel_count(), 0.0);
    }

    explicit VoxelField(int n, double support_radius = 1.0) : VoxelField(n, n, n, support_radius) {}

    int nx() const { return nx_; }
    int ny() const { return ny_; }
    int nz() const { return nz_; }
    double support_radius() const { return radius_; }
    std::size_t voxel_count() const { return static_cast<std::size_t>(nx_) * ny_ * nz_; }
    std::size_t param_count() const { return params_.size(); }

    std::span<double> params() { return params_; }
    std::span<const double> params() const { return params_; }

    /// Incremented by every optimizer update; gradients record the version they belong to.
    std::uint64_t version() const { return version_; }
    void bump_version() { ++version_; }

    int index(int x, int y, int z) const { return (z * ny_ + y) * nx_ + x; }

    double& raw_density(int v) { return params_[v]; }
    double raw_density(int v) const { return params_[v]; }
    double& color_logit(int v, int c) { return params_[voxel_count() + 3 * static_cast<std::size_t>(v) + c]; }
    double color_logit(int v, int c) const { return params_[voxel_count() + 3 * static_cast<std::size_t>(v) + c]; }

    Vec3 voxel_center(int x, int y, int z) const {
        return Vec3(-1.0 + (x + 0.5) * 2.0 / nx_, -1.0 + (y + 0.5) * 2.0 / ny_, -1.0 + (z + 0.5) * 2.0 / nz_);
    }

    Stencil stencil(const Vec3& p) const {
        Stencil s;
        if (p.squaredNorm() > radius_ * radius_) {
            return s;
        }
        s.inside = true;
        const std::array<int, 3> n{nx_, ny_, nz_};
        std::array<int, 3> i0{};
        std::array<double, 3> f{};
        for (int k = 0; k < 3; ++k) {
            const double u = (p[k] + 1.0) * 0.5 * n[k] - 0.5;
            const int i = std::clamp(static_cast<int>(std::floor(u)), 0, n[k] - 2);
            i0[k] = i;
            f[k] = std::clamp(u - i, 0.0, 1.0);
        }
        for (int c = 0; c < 8; ++c) {
            const int dx = c & 1;
            const int dy = (c >> 1) & 1;
            const int dz = (c >> 2) & 1;
            s.voxel[c] = index(i0[0] + dx, i0[1] + dy, i0[2] + dz);
            s.weight[c] = (dx ? f[0] : 1.0 - f[0]) * (dy ? f[1] : 1.0 - f[1]) * (dz ? f[2] : 1.0 - f[2]);
        }
        return s;
    }

    /// Interpolated pre-activation values (raw density, color logits).
    std::pair<double, Vec3> raw_at(const Stencil& s) const {
        double d = 0.0;
        Vec3 c = Vec3::Zero();
        for (int k = 0; k < 8; ++k) {
            const double w = s.weight[k];
            const int v = s.voxel[k];
            d += w * raw_density(v);
            const double* cl = &params_[voxel_count() + 3 * static_cast<std::size_t>(v)];
            c += w * Vec3(cl[0], cl[1], cl[2]);
        }
        return {d, c};
    }

    FieldSample query(const Vec3& p) const {
        const Stencil s = stencil(p);
        if (!s.inside) {
            return {};
        }
        const auto [d, c] = raw_at(s);
        return {Rgb(sigmoid(c.x()), sigmoid(c.y()), sigmoid(c.z())), softplus(d)};
    }

    /// Accumulates d(loss)/d(params) given upstream gradients on the
    /// activated color and density at p. Touches at most 8 voxels.
    void accumulate_backward(const Vec3& p, const Rgb& d_color, double d_density, std::span<double> grad) const {
        const Stencil s = stencil(p);
        if (!s.inside) {
            return;
        }
        const auto [d, c] = raw_at(s);
        accumulate_backward(s, d, c, d_color, d_density, grad);
    }

    void accumulate_backward(const Stencil& s, double raw_d, const Vec3& raw_c, const Rgb& d_color, double d_density,
                             std::span<double> grad) const {
        const double g_raw_d = d_density * sigmoid(raw_d);
        Vec3 g_raw_c;
        for (int k = 0; k < 3; ++k) {
            const double a = sigmoid(raw_c[k]);
            g_raw_c[k] = d_color[k] * a * (1.0 - a);
        }
        const std::size_t n = voxel_count();
        for (int k = 0; k < 8; ++k) {
            const double w = s.weight[k];
            if (w == 0.0) {
                continue;
            }
            const auto v = static_cast<std::size_t>(s.voxel[k]);
            grad[v] += w * g_raw_d;
            grad[n + 3 * v + 0] += w * g_raw_c[0];
            grad[n + 3 * v + 1] += w * g_raw_c[1];
            grad[n + 3 * v + 2] += w * g_raw_c[2];
        }
    }

private:
    int nx_ = 0;
    int ny_ = 0;
    int nz_ = 0;
    double radius_ = 1.0;
    std::vector<double> params_;
    std::uint64_t version_ = 0;
};

struct ParamGradient {
    std::size_t index = 0;
    double value = 0.0;
};

/// Sparse parameter gradient of one query: at most 8 voxels times 4 parameters.
inline std::vector<ParamGradient> query_backward(const VoxelField& field, const Vec3& p, const Rgb& d_color,
                                                 double d_density) {
    const Stencil s = field.stencil(p);
    std::vector<ParamGradient> out;
    if (!s.inside) {
        return out;
    }
    const auto [d, c] = field.raw_at(s);
    const double g_raw_d = d_density * sigmoid(d);
    const std::size_t n = field.voxel_count();
    for (int k = 0; k < 8; ++k) {
        const double w = s.weight[k];
        if (w == 0.0) {
            continue;
        }
        const auto v = static_cast<std::size_t>(s.voxel[k]);
        out.push_back({v, w * g_raw_d});
        for (int ch = 0; ch < 3; ++ch) {
            const double a = sigmoid(c[ch]);
            out.push_back({n + 3 * v + ch, w * d_color[ch] * a * (1.0 - a)});
        }
    }
    return out;
}

inline constexpr double kDensityFloorOffset = -3.0;

/// Gaussian density bump at the origin over a constant floor; gray colors.
inline VoxelField& init_density_bias(VoxelField& field, double amplitude, double sigma,
                                     double floor_offset = kDensityFloorOffset) {
    if (!(amplitude > 0.0) || !(sigma > 0.0)) {
        throw InvalidArgument("density bias needs positive amplitude and sigma");
    }
    for (int z = 0; z < field.nz(); ++z) {
        for (int y = 0; y < field.ny(); ++y) {
            for (int x = 0; x < field.nx(); ++x) {
                const Vec3 c = field.voxel_center(x, y, z);
                const int v = field.index(x, y, z);
                field.raw_density(v) = amplitude * std::exp(-c.squaredNorm() / (2.0 * sigma * sigma)) + floor_offset;
                for (int ch = 0; ch < 3; ++ch) {
                    field.color_logit(v, ch) = 0.0;
                }
            }
        }
    }
    field.bump_version();
    return field;
}

namespace detail {

inline void put_u32(std::ostream& out, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
    out.write(reinterpret_cast<const char*>(b), 4);
}

inline std::uint32_t get_u32(std::istream& in) {
    unsigned char b[4] = {};
    in.read(reinterpret_cast<char*>(b), 4);
    if (in.gcount() != 4) {
        throw ParseError("truncated field snapshot", 0);
    }
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

inline void put_f32(std::ostream& out, double v) { put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(v))); }
inline double get_f32(std::istream& in) { return std::bit_cast<float>(get_u32(in)); }

} // namespace detail

/// Field snapshot: "VXF1", u32 nx, ny, nz, f32 radius, then f32 raw density
/// (n values) and f32 color logits (3n values), all little-endian.
inline void write_field(std::ostream& out, const VoxelField& f) {
    out.write("VXF1", 4);
    detail::put_u32(out, static_cast<std::uint32_t>(f.nx()));
    detail::put_u32(out, static_cast<std::uint32_t>(f.ny()));
    detail::put_u32(out, static_cast<std::uint32_t>(f.nz()));
    detail::put_f32(out, f.support_radius());
    for (double v : f.params()) {
        detail::put_f32(out, v);
    }
}

inline VoxelField read_field(std::istream& in) {
    char magic[4] = {};
    in.read(magic, 4);
    if (in.gcount() != 4 || std::memcmp(magic, "VXF1", 4) != 0) {
        throw ParseError("not a VXF1 field snapshot", 0);
    }
    const auto nx = static_cast<int>(detail::get_u32(in));
    const auto ny = static_cast<int>(detail::get_u32(in));
    const auto nz = static_cast<int>(detail::get_u32(in));
    const double radius = detail::get_f32(in);
    if (nx < 2 || ny < 2 || nz < 2 || nx > 4096 || ny > 4096 || nz > 4096) {
        throw ParseError("implausible field resolution", 0);
    }
    VoxelField f(nx, ny, nz, radius);
    for (double& v : f.params()) {
        v = detail::get_f32(in);
    }
    return f;
}

inline void save_field(const std::filesystem::path& path, const VoxelField& f) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw Error("cannot write " + path.string());
    }
    write_field(out, f);
}

inline VoxelField load_field(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw Error("cannot open " + path.string());
    }
    return read_field(in);
}

} // namespace hoi
