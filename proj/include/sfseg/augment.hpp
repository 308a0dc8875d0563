#pragma once

#include <map>
#include <random>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "sfseg/arch.hpp"

namespace sfseg {

enum class AugTier { kWeak, kStrong, kEnsemble };

/// One augmentation: a registry name plus parameter overrides.
/// All built-ins except "hflip" are intensity-only, so outputs stay aligned
/// element-wise with the unaugmented image.
struct AugSpec {
    std::string name;
    std::map<std::string, double> params;

    bool operator==(const AugSpec&) const = default;
};

/// True for augmentations that move pixels (rejected wherever masks must align).
bool is_geometric(const AugSpec& spec);

/// True if `name` is a registered augmentation.
bool is_registered_aug(const std::string& name);

/// Applies one augmentation to a single sample (C, spatial...). Consumes draws
/// from `rng`; same rng state gives the same output. Values are clamped to [0,1].
torch::Tensor apply_aug(const AugSpec& spec, const torch::Tensor& x, std::mt19937& rng);

/// The three named tiers. Defaults: ensemble = {color_jitter, grayscale,
/// contrast} (M=3); weak = ±10% brightness/contrast jitter; strong = ±40%
/// jitter with saturation, random grayscale (p=0.2) and Gaussian blur.
struct AugTiers {
    std::vector<AugSpec> ensemble;
    std::vector<AugSpec> weak;
    std::vector<AugSpec> strong;

    static AugTiers defaults();
    const std::vector<AugSpec>& tier(AugTier t) const;
};

/// Generates the M-image augmentation ensemble for one sample. Every spec is
/// applied independently to `x`; geometric specs or an empty list are a
/// ConfigError.
std::vector<torch::Tensor> ensemble_augment(const torch::Tensor& x,
                                            const std::vector<AugSpec>& specs,
                                            std::mt19937& rng);

/// Applies the whole tier as one chained transform (weak/strong pipelines).
torch::Tensor apply_tier(const std::vector<AugSpec>& specs, const torch::Tensor& x,
                         std::mt19937& rng);

torch::Tensor apply_weak(const torch::Tensor& x, std::uint64_t seed,
                         const AugTiers& tiers = AugTiers::defaults());
torch::Tensor apply_strong(const torch::Tensor& x, std::uint64_t seed,
                           const AugTiers& tiers = AugTiers::defaults());

}  // namespace sfseg
