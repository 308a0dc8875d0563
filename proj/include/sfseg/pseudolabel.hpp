#pragma once

#include <random>
#include <vector>

#include <torch/torch.h>

#include "sfseg/augment.hpp"
#include "sfseg/model.hpp"

namespace sfseg {

/// Selective-voting hyperparameters. Defaults follow the reference setup:
/// alpha 0.75, lambda band (0.3, 0.5), binarization at 0.5, M = 3 ensemble
/// augmentations. `delta` (minimum mean entropy for an augmented map to join
/// the vote) defaults to 0.2 * ln 2.
struct SelectiveVoteConfig {
    double alpha = 0.75;
    double delta = 0.13862943611198906;  // 0.2 * ln 2
    double lambda1 = 0.3;
    double lambda2 = 0.5;
    double binarize_threshold = 0.5;
    int ensemble_size = 3;  // M

    void validate() const {
        if (alpha < 0.0 || alpha > 1.0)
            throw ConfigError("selective voting alpha must be in [0,1]");
        if (!(lambda1 >= 0.0 && lambda1 < lambda2 && lambda2 <= 1.0))
            throw ConfigError("selective voting requires 0 <= lambda1 < lambda2 <= 1");
        if (delta < 0.0) throw ConfigError("selective voting delta must be >= 0");
        if (ensemble_size < 1) throw ConfigError("selective voting M must be >= 1");
    }
};

/// Everything derived from one sample while enhancing its pseudo-label.
/// Binary head: all mask/entropy tensors have the (1, spatial...) layout of
/// the prediction. Multi-class head: they carry one channel per foreground
/// class (one-vs-rest), and `enhanced_label` is an integer class map.
struct PseudoLabelBundle {
    torch::Tensor base_pred;                // source-model probabilities on x
    std::vector<torch::Tensor> aug_inputs;  // the M augmented input batches
    std::vector<torch::Tensor> aug_preds;   // probabilities on the M augmented inputs
    torch::Tensor fused_entropy;            // H_S, normalized to [0,1]
    torch::Tensor selective_mask;           // Z
    torch::Tensor fn_mask;                  // U
    torch::Tensor enhanced;                 // per-class enhanced binary mask
    torch::Tensor enhanced_label;           // supervision target (float mask / class map)
};

/// Combines the unaugmented entropy map with the augmented ones:
/// augmented maps whose mean entropy reaches `delta` vote by element-wise mean
/// (all of them, when none qualifies), then alpha-blends with `h_orig` and
/// min-max normalizes to [0,1]. A constant blend maps to all zeros. Operates
/// on one sample; every tensor is treated as a single map.
torch::Tensor fuse_entropy(const torch::Tensor& h_orig,
                           const std::vector<torch::Tensor>& h_augs, double alpha,
                           double delta);

/// Z: 1 where the normalized fused entropy is >= 0.5 (boundary inclusive).
torch::Tensor selective_mask(const torch::Tensor& h_fused);

/// U: 1 inside the uncertain probability band lambda1 < p < lambda2 (strict).
torch::Tensor fn_mask(const torch::Tensor& pred, double lambda1, double lambda2);

/// Enhanced pseudo-label: pred_bin OR (z AND u).
torch::Tensor enhance(const torch::Tensor& pred_bin, const torch::Tensor& z,
                      const torch::Tensor& u);

/// Runs the whole selective-voting pipeline for one batch using the frozen
/// source model: predictions on the plain and ensemble-augmented inputs,
/// entropy fusion, Z/U masks, and the enhanced pseudo-label. The source model
/// is only read.
PseudoLabelBundle generate_bundle(Model& source, const torch::Tensor& batch,
                                  const std::vector<AugSpec>& ensemble_specs,
                                  const SelectiveVoteConfig& cfg, std::mt19937& rng);

}  // namespace sfseg
