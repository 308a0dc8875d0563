#include "sfseg/augment.hpp"

#include <cmath>
#include <functional>
#include <unordered_map>

namespace sfseg {
namespace {

double draw_uniform(std::mt19937& rng, double lo, double hi) {
    std::uniform_real_distribution<double> dist(lo, hi);
    return dist(rng);
}

double param_or(const AugSpec& spec, const std::string& key, double fallback) {
    auto it = spec.params.find(key);
    return it == spec.params.end() ? fallback : it->second;
}

torch::Tensor scale_brightness(const torch::Tensor& x, double factor) {
    return x * factor;
}

torch::Tensor scale_contrast(const torch::Tensor& x, double factor) {
    auto mean = x.mean();
    return (x - mean) * factor + mean;
}

torch::Tensor to_grayscale(const torch::Tensor& x) {
    if (x.size(0) < 3) return x;  // single-channel input: no-op
    auto gray = 0.299 * x[0] + 0.587 * x[1] + 0.114 * x[2];
    return gray.unsqueeze(0).expand_as(x).contiguous();
}

torch::Tensor scale_saturation(const torch::Tensor& x, double factor) {
    if (x.size(0) < 3) return x;
    auto gray = to_grayscale(x);
    return gray + (x - gray) * factor;
}

torch::Tensor gaussian_kernel1d(double sigma, torch::Dtype dtype) {
    const int radius = std::max(1, static_cast<int>(std::ceil(2.5 * sigma)));
    auto ax = torch::arange(-radius, radius + 1, torch::TensorOptions().dtype(dtype));
    auto k = torch::exp(-(ax * ax) / (2.0 * sigma * sigma));
    return k / k.sum();
}

// Separable Gaussian blur over the spatial axes of a (C, spatial...) sample.
torch::Tensor gaussian_blur(const torch::Tensor& x, double sigma) {
    namespace F = torch::nn::functional;
    auto k = gaussian_kernel1d(sigma, x.scalar_type());
    const auto klen = k.size(0);
    const auto pad = (klen - 1) / 2;
    const auto channels = x.size(0);
    torch::Tensor out = x.unsqueeze(0);
    if (x.dim() == 3) {  // C,H,W
        auto kx = k.reshape({1, 1, 1, klen}).repeat({channels, 1, 1, 1});
        auto ky = k.reshape({1, 1, klen, 1}).repeat({channels, 1, 1, 1});
        out = F::conv2d(out, kx, F::Conv2dFuncOptions().padding({0, pad}).groups(channels));
        out = F::conv2d(out, ky, F::Conv2dFuncOptions().padding({pad, 0}).groups(channels));
    } else if (x.dim() == 4) {  // C,D,H,W
        auto kd = k.reshape({1, 1, klen, 1, 1}).repeat({channels, 1, 1, 1, 1});
        auto kh = k.reshape({1, 1, 1, klen, 1}).repeat({channels, 1, 1, 1, 1});
        auto kw = k.reshape({1, 1, 1, 1, klen}).repeat({channels, 1, 1, 1, 1});
        out = F::conv3d(out, kd, F::Conv3dFuncOptions().padding({pad, 0, 0}).groups(channels));
        out = F::conv3d(out, kh, F::Conv3dFuncOptions().padding({0, pad, 0}).groups(channels));
        out = F::conv3d(out, kw, F::Conv3dFuncOptions().padding({0, 0, pad}).groups(channels));
    } else {
        throw ShapeError("gaussian_blur expects a (C,H,W) or (C,D,H,W) sample");
    }
    return out.squeeze(0);
}

using AugFn = std::function<torch::Tensor(const AugSpec&, const torch::Tensor&, std::mt19937&)>;

struct AugEntry {
    AugFn fn;
    bool geometric = false;
};

const std::unordered_map<std::string, AugEntry>& registry() {
    static const std::unordered_map<std::string, AugEntry> reg = {
        {"identity",
         {[](const AugSpec&, const torch::Tensor& x, std::mt19937&) { return x.clone(); }}},
        {"brightness",
         {[](const AugSpec& s, const torch::Tensor& x, std::mt19937& rng) {
             double r = param_or(s, "range", 0.2);
             return scale_brightness(x, draw_uniform(rng, 1.0 - r, 1.0 + r));
         }}},
        {"contrast",
         {[](const AugSpec& s, const torch::Tensor& x, std::mt19937& rng) {
             double r = param_or(s, "range", 0.35);
             return scale_contrast(x, draw_uniform(rng, 1.0 - r, 1.0 + r));
         }}},
        {"color_jitter",
         {[](const AugSpec& s, const torch::Tensor& x, std::mt19937& rng) {
             double b = param_or(s, "brightness", 0.25);
             double c = param_or(s, "contrast", 0.25);
             double sat = param_or(s, "saturation", 0.25);
             auto out = scale_brightness(x, draw_uniform(rng, 1.0 - b, 1.0 + b));
             out = scale_contrast(out, draw_uniform(rng, 1.0 - c, 1.0 + c));
             if (x.size(0) >= 3)
                 out = scale_saturation(out, draw_uniform(rng, 1.0 - sat, 1.0 + sat));
             return out;
         }}},
        {"grayscale",
         {[](const AugSpec& s, const torch::Tensor& x, std::mt19937& rng) {
             double p = param_or(s, "p", 1.0);
             // Draw unconditionally so the rng stream does not depend on p.
             double u = draw_uniform(rng, 0.0, 1.0);
             return u < p ? to_grayscale(x) : x.clone();
         }}},
        {"gauss_blur",
         {[](const AugSpec& s, const torch::Tensor& x, std::mt19937& rng) {
             double lo = param_or(s, "sigma_lo", 0.5);
             double hi = param_or(s, "sigma_hi", 1.5);
             double p = param_or(s, "p", 1.0);
             double u = draw_uniform(rng, 0.0, 1.0);
             double sigma = draw_uniform(rng, lo, hi);
             return u < p ? gaussian_blur(x, sigma) : x.clone();
         }}},
        {"gauss_noise",
         {[](const AugSpec& s, const torch::Tensor& x, std::mt19937& rng) {
             double sigma = param_or(s, "sigma", 0.02);
             std::normal_distribution<double> dist(0.0, sigma);
             std::vector<double> buf(static_cast<size_t>(x.numel()));
             for (auto& v : buf) v = dist(rng);
             auto noise = torch::from_blob(buf.data(), x.sizes(), torch::kFloat64)
                              .to(x.options())
                              .clone();
             return x + noise;
         }}},
        {"gamma",
         {[](const AugSpec& s, const torch::Tensor& x, std::mt19937& rng) {
             double lo = param_or(s, "lo", 0.7);
             double hi = param_or(s, "hi", 1.4);
             double g = draw_uniform(rng, lo, hi);
             return x.clamp(0.0, 1.0).pow(g);
         }}},
        {"intensity_scale_shift",
         {[](const AugSpec& s, const torch::Tensor& x, std::mt19937& rng) {
             double sc = param_or(s, "scale", 0.25);
             double sh = param_or(s, "shift", 0.1);
             double a = draw_uniform(rng, 1.0 - sc, 1.0 + sc);
             double b = draw_uniform(rng, -sh, sh);
             return x * a + b;
         }}},
        {"hflip",
         {[](const AugSpec&, const torch::Tensor& x, std::mt19937&) {
              return x.flip(-1);
          },
          /*geometric=*/true}},
    };
    return reg;
}

const AugEntry& lookup(const AugSpec& spec) {
    auto it = registry().find(spec.name);
    if (it == registry().end())
        throw ConfigError("unknown augmentation '" + spec.name + "'");
    return it->second;
}

}  // namespace

bool is_geometric(const AugSpec& spec) { return lookup(spec).geometric; }

bool is_registered_aug(const std::string& name) {
    return registry().count(name) > 0;
}

torch::Tensor apply_aug(const AugSpec& spec, const torch::Tensor& x, std::mt19937& rng) {
    auto out = lookup(spec).fn(spec, x, rng);
    return out.clamp(0.0, 1.0);
}

AugTiers AugTiers::defaults() {
    AugTiers t;
    t.ensemble = {
        {"color_jitter", {{"brightness", 0.25}, {"contrast", 0.25}, {"saturation", 0.25}}},
        {"grayscale", {{"p", 1.0}}},
        {"contrast", {{"range", 0.35}}},
    };
    t.weak = {
        {"color_jitter", {{"brightness", 0.1}, {"contrast", 0.1}, {"saturation", 0.0}}},
    };
    t.strong = {
        {"color_jitter", {{"brightness", 0.4}, {"contrast", 0.4}, {"saturation", 0.4}}},
        {"grayscale", {{"p", 0.2}}},
        {"gauss_blur", {{"sigma_lo", 0.5}, {"sigma_hi", 1.5}, {"p", 0.5}}},
    };
    return t;
}

const std::vector<AugSpec>& AugTiers::tier(AugTier t) const {
    switch (t) {
        case AugTier::kWeak: return weak;
        case AugTier::kStrong: return strong;
        case AugTier::kEnsemble: return ensemble;
    }
    throw ConfigError("unknown augmentation tier");
}

std::vector<torch::Tensor> ensemble_augment(const torch::Tensor& x,
                                            const std::vector<AugSpec>& specs,
                                            std::mt19937& rng) {
    if (specs.empty())
        throw ConfigError("augmentation ensemble requires at least one spec (M >= 1)");
    std::vector<torch::Tensor> out;
    out.reserve(specs.size());
    for (const auto& spec : specs) {
        if (is_geometric(spec))
            throw ConfigError("geometric augmentation '" + spec.name +
                              "' is not allowed in the ensemble tier (masks would misalign)");
        out.push_back(apply_aug(spec, x, rng));
    }
    return out;
}

torch::Tensor apply_tier(const std::vector<AugSpec>& specs, const torch::Tensor& x,
                         std::mt19937& rng) {
    torch::Tensor out = x;
    for (const auto& spec : specs) out = apply_aug(spec, out, rng);
    return out;
}

torch::Tensor apply_weak(const torch::Tensor& x, std::uint64_t seed, const AugTiers& tiers) {
    std::mt19937 rng(static_cast<std::mt19937::result_type>(seed));
    return apply_tier(tiers.weak, x, rng);
}

torch::Tensor apply_strong(const torch::Tensor& x, std::uint64_t seed, const AugTiers& tiers) {
    std::mt19937 rng(static_cast<std::mt19937::result_type>(seed ^ 0x9e3779b97f4a7c15ULL));
    return apply_tier(tiers.strong, x, rng);
}

}  // namespace sfseg
