#pragma once

#include <vector>

#include <torch/torch.h>

#include "sfseg/arch.hpp"

namespace sfseg {

/// Probabilities are clamped to [kProbEps, 1-kProbEps] inside log terms.
inline constexpr double kProbEps = 1e-7;

/// Smoothing constant added to soft-Dice numerator and denominator.
inline constexpr double kDiceSmooth = 1.0;

/// Segmentation loss 0.5*BCE + (1 - soft Dice).
///
/// Binary head (num_classes == 1): `pred` and `target` share one shape; the
/// target is a {0,1} mask. Soft Dice is computed per sample (dim 0 is the
/// batch when pred has the head's (B,1,spatial...) layout) and averaged.
///
/// Multi-class head: `pred` is (B,C,spatial...), `target` an integer class map
/// (B,spatial...). BCE becomes cross-entropy and Dice averages over the
/// foreground classes only.
torch::Tensor seg_loss(const torch::Tensor& pred, const torch::Tensor& target,
                       int num_classes = 1);

/// Per-element Shannon entropy in nats. Binary: -(p log p + (1-p) log(1-p))
/// elementwise, same shape out. Multi-class: -sum_c p_c log p_c over channel
/// dim 1, which is dropped.
torch::Tensor entropy_map(const torch::Tensor& probs, int num_classes = 1);

/// Ensemble entropy minimization loss: mean(h_orig) + (1/M) * sum_j mean(h_aug_j).
/// All maps must share one shape; an empty augmented list is a ConfigError.
torch::Tensor ensemble_entropy_loss(const torch::Tensor& h_orig,
                                    const std::vector<torch::Tensor>& h_augs);

}  // namespace sfseg
