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

#include <span>

namespace hoi {

struct AdamConfig {
    double lr = 0.01;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.0; // decoupled
};

/// Dense Adam with decoupled weight decay. Decay shrinks each parameter
/// toward its anchor (zero when no anchors are given).
class AdamW {
public:
    AdamW() = default;
    AdamW(std::size_t n, AdamConfig cfg) : cfg_(cfg), m_(n, 0.0), v_(n, 0.0) {}

    const AdamConfig& config() const { return cfg_; }
    void set_lr(double lr) { cfg_.lr = lr; }
    long long steps() const { return t_; }

    void step(std::span<double> params, std::span<const double> grad, std::span<const double> anchor = {}) {
        if (params.size() != m_.size() || grad.size() != m_.size() || (!anchor.empty() && anchor.size() != m_.size())) {
            throw InvalidArgument("optimizer size mismatch");
        }
        ++t_;
        const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
        const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
        for (std::size_t i = 0; i < params.size(); ++i) {
            m_[i] = cfg_.beta1 * m_[i] + (1.0 - cfg_.beta1) * grad[i];
            v_[i] = cfg_.beta2 * v_[i] + (1.0 - cfg_.beta2) * grad[i] * grad[i];
            const double mh = m_[i] / c1;
            const double vh = v_[i] / c2;
            const double a = anchor.empty() ? 0.0 : anchor[i];
            params[i] -= cfg_.lr * (mh / (std::sqrt(vh) + cfg_.eps) + cfg_.weight_decay * (params[i] - a));
        }
    }

private:
    AdamConfig cfg_;
    std::vector<double> m_;
    std::vector<double> v_;
    long long t_ = 0;
};

/// Lazy Adam: moments and bias corrections advance only for the entries a
/// step touches. Suited to gradients that hit a few voxels per step.
class SparseAdam {
public:
    SparseAdam(std::size_t n, AdamConfig cfg) : cfg_(cfg), m_(n, 0.0), v_(n, 0.0), t_(n, 0) {}

    void update(std::span<double> params, std::size_t i, double g) {
        const int t = ++t_[i];
        m_[i] = cfg_.beta1 * m_[i] + (1.0 - cfg_.beta1) * g;
        v_[i] = cfg_.beta2 * v_[i] + (1.0 - cfg_.beta2) * g * g;
        const double mh = m_[i] / (1.0 - std::pow(cfg_.beta1, t));
        const double vh = v_[i] / (1.0 - std::pow(cfg_.beta2, t));
        params[i] -= cfg_.lr * (mh / (std::sqrt(vh) + cfg_.eps) + cfg_.weight_decay * params[i]);
    }

private:
    AdamConfig cfg_;
    std::vector<double> m_;
    std::vector<double> v_;
    std::vector<int> t_;
};

} // namespace hoi
