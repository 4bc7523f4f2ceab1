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

#include "hoipose/geometry.hpp"
#include "hoipose/image.hpp"

#include <atomic>
#include <memory>
#include <optional>
#include <random>

namespace hoi {

/// Cosine schedule: alpha_bar(t) = cos^2(pi t / 2), clamped away from 0 and 1.
struct NoiseSchedule {
    static constexpr double kMin = 1e-5;
    static constexpr double kMax = 1.0 - 1e-5;

    static double alpha_bar(double t) {
        const double c = std::cos(0.5 * kPi * t);
        return std::clamp(c * c, kMin, kMax);
    }
};

inline void require_timestep(double t) {
    if (!(t > 0.0 && t < 1.0)) {
        throw InvalidArgument("timestep must lie in (0, 1)");
    }
}

/// x_t = sqrt(a) x + sqrt(1 - a) eps.
inline Image add_noise(const Image& x, double t, const Image& eps) {
    require_timestep(t);
    require_same_shape(x, eps, "add_noise");
    const double a = NoiseSchedule::alpha_bar(t);
    const double sa = std::sqrt(a);
    const double sn = std::sqrt(1.0 - a);
    Image out = x;
    for (std::size_t i = 0; i < out.data.size(); ++i) {
        out.data[i] = sa * x.data[i] + sn * eps.data[i];
    }
    return out;
}

/// Inverse of add_noise for a given clean image: (x_t - sqrt(a) x) / sqrt(1 - a).
inline Image recover_noise(const Image& noisy, const Image& x, double t) {
    require_timestep(t);
    require_same_shape(noisy, x, "recover_noise");
    const double a = NoiseSchedule::alpha_bar(t);
    const double sa = std::sqrt(a);
    const double inv = 1.0 / std::sqrt(1.0 - a);
    Image out = noisy;
    for (std::size_t i = 0; i < out.data.size(); ++i) {
        out.data[i] = (noisy.data[i] - sa * x.data[i]) * inv;
    }
    return out;
}

/// Classifier-free guidance with the negative prompt in place of the unconditional branch.
inline Image cfg_combine(const Image& eps_pos, const Image& eps_neg, double omega) {
    require_same_shape(eps_pos, eps_neg, "cfg_combine");
    Image out = eps_neg;
    for (std::size_t i = 0; i < out.data.size(); ++i) {
        out.data[i] = eps_neg.data[i] + omega * (eps_pos.data[i] - eps_neg.data[i]);
    }
    return out;
}

inline Image gaussian_image(int w, int h, int c, std::mt19937_64& rng) {
    Image out(w, h, c);
    std::normal_distribution<double> n(0.0, 1.0);
    for (double& v : out.data) {
        v = n(rng);
    }
    return out;
}

struct Prompt {
    std::string positive;
    std::string negative;

    void validate() const {
        if (positive.empty()) {
            throw InvalidArgument("prompt must have a positive text");
        }
    }
};

enum class Capability { single_view, multi_view };

inline const char* to_string(Capability c) { return c == Capability::single_view ? "single_view" : "multi_view"; }

/// Noise predictions for one batch: conditioned on the positive and on the
/// negative prompt. Providers that already applied guidance return the same
/// images in both.
struct NoisePrediction {
    std::vector<Image> positive;
    std::vector<Image> negative;
};

/**
 * Source of predicted noise. `cameras` holds one camera-to-world matrix per
 * image when the caller knows the views; multi-view providers require them.
 * predict() counts invocations so callers can assert which providers ran.
 */
class GuidanceProvider {
public:
    virtual ~GuidanceProvider() = default;

    virtual Capability capability() const = 0;
    virtual std::string name() const = 0;

    NoisePrediction predict(const std::vector<Image>& noisy, double t, const Prompt& prompt,
                            const std::vector<Mat4>* cameras) {
        require_timestep(t);
        prompt.validate();
        if (cameras && cameras->size() != noisy.size()) {
            throw InvalidArgument("one camera pose per image expected");
        }
        if (capability() == Capability::multi_view && !cameras) {
            throw InvalidArgument(name() + ": multi-view provider needs camera poses");
        }
        ++calls_;
        NoisePrediction p = do_predict(noisy, t, prompt, cameras);
        if (p.positive.size() != noisy.size() || p.negative.size() != noisy.size()) {
            throw Error(name() + ": provider returned the wrong number of images");
        }
        for (std::size_t i = 0; i < noisy.size(); ++i) {
            if (!p.positive[i].same_shape(noisy[i]) || !p.negative[i].same_shape(noisy[i])) {
                throw Error(name() + ": provider returned an image of the wrong shape");
            }
        }
        return p;
    }

    std::size_t call_count() const { return calls_.load(); }

protected:
    virtual NoisePrediction do_predict(const std::vector<Image>& noisy, double t, const Prompt& prompt,
                                       const std::vector<Mat4>* cameras) = 0;

private:
    std::atomic<std::size_t> calls_{0};
};

/// Returns the noise it is told to: useful where a zero residual is wanted.
class EchoProvider : public GuidanceProvider {
public:
    explicit EchoProvider(Capability cap = Capability::single_view) : cap_(cap) {}

    /// The next predict() returns these images.
    void set_response(std::vector<Image> eps) { eps_ = std::move(eps); }

    Capability capability() const override { return cap_; }
    std::string name() const override { return "echo"; }

protected:
    NoisePrediction do_predict(const std::vector<Image>& noisy, double, const Prompt&,
                               const std::vector<Mat4>*) override {
        std::vector<Image> out = eps_;
        if (out.size() != noisy.size()) {
            out.clear();
            for (const auto& x : noisy) {
                out.emplace_back(x.width, x.height, x.channels);
            }
        }
        return {out, out};
    }

private:
    Capability cap_;
    std::vector<Image> eps_;
};

/// Geodesic angle between the rotation parts of two camera-to-world matrices.
inline double rotation_geodesic(const Mat4& a, const Mat4& b) {
    const Mat3 r = a.block<3, 3>(0, 0).transpose() * b.block<3, 3>(0, 0);
    return std::acos(std::clamp(0.5 * (r.trace() - 1.0), -1.0, 1.0));
}

/**
 * Analytic stand-in for a denoiser: predicts the noise that would turn the
 * target into x_t, eps_hat = (x_t - sqrt(a) x*) / sqrt(1 - a). With per-view
 * targets each image is matched with the target whose camera rotation is
 * nearest; ties go to the earlier target.
 */
class ImageMatchingProvider : public GuidanceProvider {
public:
    struct View {
        Mat4 camera_to_world;
        Image target;
    };

    explicit ImageMatchingProvider(Image target, std::string label = "image-matching")
        : single_(std::move(target)), label_(std::move(label)) {}

    ImageMatchingProvider(std::vector<View> views, Capability cap, std::string label = "image-matching")
        : views_(std::move(views)), cap_(cap), label_(std::move(label)) {
        if (views_.empty()) {
            throw InvalidArgument("per-view image matching needs at least one target");
        }
    }

    Capability capability() const override { return cap_; }
    std::string name() const override { return label_; }

    const Image& target_for(const Mat4* camera) const {
        if (views_.empty()) {
            return *single_;
        }
        if (!camera) {
            throw InvalidArgument(label_ + ": per-view targets need camera poses");
        }
        std::size_t best = 0;
        double best_angle = std::numeric_limits<double>::infinity();
        for (std::size_t i = 0; i < views_.size(); ++i) {
            const double a = rotation_geodesic(views_[i].camera_to_world, *camera);
            if (a < best_angle) {
                best_angle = a;
                best = i;
            }
        }
        return views_[best].target;
    }

protected:
    NoisePrediction do_predict(const std::vector<Image>& noisy, double t, const Prompt&,
                               const std::vector<Mat4>* cameras) override {
        std::vector<Image> out;
        out.reserve(noisy.size());
        for (std::size_t i = 0; i < noisy.size(); ++i) {
            out.push_back(recover_noise(noisy[i], target_for(cameras ? &(*cameras)[i] : nullptr), t));
        }
        return {out, out};
    }

private:
    std::optional<Image> single_;
    std::vector<View> views_;
    Capability cap_ = Capability::single_view;
    std::string label_;
};

inline std::shared_ptr<ImageMatchingProvider> make_image_matching_provider(Image target) {
    return std::make_shared<ImageMatchingProvider>(std::move(target));
}

inline std::shared_ptr<ImageMatchingProvider> make_image_matching_provider(std::vector<ImageMatchingProvider::View> views,
                                                                           Capability cap = Capability::multi_view) {
    return std::make_shared<ImageMatchingProvider>(std::move(views), cap);
}

enum class RenderTarget { composite, human_only };

struct GuidanceChannel {
    std::string name;
    std::shared_ptr<GuidanceProvider> provider;
    Prompt prompt;
    double weight = 1.0;
    RenderTarget target = RenderTarget::composite;
    double cfg_weight = 50.0;

    void validate() const {
        if (!provider) {
            throw InvalidArgument("channel " + name + " has no provider");
        }
        if (!(weight >= 0.0) || !(cfg_weight >= 0.0)) {
            throw InvalidArgument("channel " + name + " needs nonnegative weight and guidance scale");
        }
        prompt.validate();
    }
};

/// SDS weighting w(t): constant 1, or sqrt(1 - a) / sqrt(a), which makes the
/// image-matching gradient independent of t.
enum class SdsWeighting { unit, normalizing };

inline double sds_weight(SdsWeighting mode, double t) {
    if (mode == SdsWeighting::unit) {
        return 1.0;
    }
    const double a = NoiseSchedule::alpha_bar(t);
    return std::sqrt(1.0 - a) / std::sqrt(a);
}

/**
 * One Monte-Carlo sample of the score-distillation image gradient
 * w * (eps_hat - eps) for a batch of renders sharing t. eps_hat comes from
 * the channel's provider on the noised images, combined with guidance scale
 * cfg_weight. The subtracted eps is the noise recovered from x_t rather than
 * the drawn one; the two differ only by rounding, and a provider that inverts
 * the noising about x then yields exactly zero. Provider errors are rethrown
 * with the channel name.
 */
inline std::vector<Image> sds_pixel_gradient(const std::vector<Image>& x, const GuidanceChannel& channel, double t,
                                             const std::vector<Image>& eps, double w,
                                             const std::vector<Mat4>* cameras = nullptr) {
    channel.validate();
    if (x.size() != eps.size()) {
        throw InvalidArgument("sds: one noise image per render expected");
    }
    std::vector<Image> noisy;
    noisy.reserve(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        noisy.push_back(add_noise(x[i], t, eps[i]));
    }
    NoisePrediction pred;
    try {
        pred = channel.provider->predict(noisy, t, channel.prompt, cameras);
    } catch (const std::exception& e) {
        throw Error("guidance channel '" + channel.name + "': " + e.what());
    }
    std::vector<Image> grad;
    grad.reserve(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        Image g = cfg_combine(pred.positive[i], pred.negative[i], channel.cfg_weight);
        const Image e = recover_noise(noisy[i], x[i], t);
        for (std::size_t k = 0; k < g.data.size(); ++k) {
            g.data[k] = w * (g.data[k] - e.data[k]);
        }
        grad.push_back(std::move(g));
    }
    return grad;
}

inline Image sds_pixel_gradient(const Image& x, const GuidanceChannel& channel, double t, const Image& eps, double w,
                                const Mat4* camera = nullptr) {
    std::vector<Mat4> cams;
    if (camera) {
        cams.push_back(*camera);
    }
    return sds_pixel_gradient(std::vector<Image>{x}, channel, t, std::vector<Image>{eps}, w, camera ? &cams : nullptr)
        .front();
}

inline double sample_timestep(double lo, double hi, std::mt19937_64& rng) {
    if (!(lo > 0.0 && lo < hi && hi < 1.0)) {
        throw InvalidArgument("timestep range must satisfy 0 < lo < hi < 1");
    }
    return std::uniform_real_distribution<double>(lo, hi)(rng);
}

} // namespace hoi
