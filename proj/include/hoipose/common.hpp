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

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numbers>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace hoi {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using Mat4 = Eigen::Matrix4d;
using Rgb = Eigen::Vector3d;

inline constexpr double kPi = std::numbers::pi;

inline double deg2rad(double d) { return d * kPi / 180.0; }
inline double rad2deg(double r) { return r * 180.0 / kPi; }

/// Base exception for all library errors.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ParseError : public Error {
public:
    ParseError(const std::string& what, int line)
        : Error(line > 0 ? what + " (line " + std::to_string(line) + ")" : what), line_(line) {}
    int line() const { return line_; }

private:
    int line_;
};

class InvalidArgument : public Error {
public:
    using Error::Error;
};

inline double softplus(double x) {
    // log1p(exp(x)) without overflow
    return x > 30.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

inline double softplus_inverse(double y) {
    // y > 0
    return y > 30.0 ? y + std::log(-std::expm1(-y)) : std::log(std::expm1(y));
}

inline double sigmoid(double x) {
    if (x >= 0) {
        return 1.0 / (1.0 + std::exp(-x));
    }
    const double e = std::exp(x);
    return e / (1.0 + e);
}

inline double logit(double p) { return std::log(p / (1.0 - p)); }

/// Counter-based hash RNG (splitmix64 finalizer). Stateless, so any
/// (seed, a, b) triple maps to the same value on every run.
inline std::uint64_t mix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

inline double counter_uniform(std::uint64_t seed, std::uint64_t a, std::uint64_t b) {
    const std::uint64_t h = mix64(mix64(mix64(seed) ^ a) ^ (b * 0xd1342543de82ef95ULL));
    return static_cast<double>(h >> 11) * 0x1.0p-53;
}

/// Number of workers used by the parallel loops. Results of reductions are
/// deterministic for a fixed worker count.
inline int& worker_count() {
    static int n = std::max(1, std::min(8, static_cast<int>(std::thread::hardware_concurrency())));
    return n;
}

/// Runs body(worker, begin, end) over a static partition of [0, n).
inline void parallel_chunks(int n, const std::function<void(int, int, int)>& body) {
    const int workers = std::max(1, std::min(worker_count(), n));
    if (workers == 1) {
        body(0, 0, n);
        return;
    }
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (int w = 0; w < workers; ++w) {
        const int b = static_cast<int>(static_cast<long long>(n) * w / workers);
        const int e = static_cast<int>(static_cast<long long>(n) * (w + 1) / workers);
        pool.emplace_back([&body, w, b, e] { body(w, b, e); });
    }
    for (auto& t : pool) {
        t.join();
    }
}

inline int effective_workers(int n) { return std::max(1, std::min(worker_count(), n)); }

} // namespace hoi
