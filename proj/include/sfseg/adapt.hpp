#pragma once

#include <filesystem>
#include <optional>

#include "sfseg/augment.hpp"
#include "sfseg/data.hpp"
#include "sfseg/model.hpp"
#include "sfseg/pseudolabel.hpp"

namespace sfseg {

/// Thrown when a training loop encounters a non-finite loss.
struct TrainingError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct OptimizerSettings {
    double lr = 1e-4;
    double momentum = 0.9;  // Adam beta1
};

struct Stage1Settings {
    SelectiveVoteConfig voting;
    std::vector<AugSpec> ensemble;  // the M ensemble augmentations
    OptimizerSettings optimizer;
    int epochs = 1;
    int batch_size = 8;
    std::uint64_t seed = 0;
    std::optional<std::filesystem::path> dump_dir;  // per-sample debug montages
};

struct Stage2Settings {
    double ema_rate = 0.99;
    std::vector<AugSpec> strong;
    std::vector<AugSpec> weak;
    bool swap_aug_routing = false;  // paper routing: strong -> teacher, weak -> student
    OptimizerSettings optimizer;
    int epochs = 10;
    int batch_size = 8;
    std::uint64_t seed = 0;
};

/// Stage I, target-specific adaptation. The frozen source model provides
/// enhanced pseudo-labels through selective voting; the trainable copy
/// (initialized from the source) minimizes seg_loss against them plus the
/// ensemble entropy of its own predictions. Returns the adapted model.
Model adapt_stage1(const Model& source, const UnlabeledView& target,
                   const Stage1Settings& settings);

/// Stage II, task-specific adaptation. Strong/weak augmented views feed the
/// EMA teacher and the gradient-trained student; the student fits the
/// binarized teacher prediction under a latent consistency penalty. Returns
/// the final teacher.
Model adapt_stage2(const Model& init, const UnlabeledView& target,
                   const Stage2Settings& settings);

}  // namespace sfseg
