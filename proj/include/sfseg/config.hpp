#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "sfseg/adapt.hpp"
#include "sfseg/arch.hpp"
#include "sfseg/augment.hpp"
#include "sfseg/data.hpp"
#include "sfseg/pseudolabel.hpp"

namespace sfseg {

/// Dataset selection. `kind` is "synth", "fundus" or "volumes"; the other
/// fields apply per kind.
struct DataConfig {
    std::string kind = "synth";
    // synth
    SynthShiftSpec synth;
    // fundus
    std::string source_dir;
    std::string target_dir;
    int image_size = 512;
    // volumes
    std::string modality = "t2";
    std::vector<std::int64_t> window;  // sliding-window extent, e.g. [96,96,96]
    // which domain cmd_evaluate reads: "source" or "target"
    std::string eval_domain = "target";
    // which labeled domain cmd_train_source fits ("target" = oracle run)
    std::string train_domain = "source";
};

struct SourceTrainConfig {
    double lr = 1e-3;
    double min_lr = 1e-4;
    std::string scheduler = "cosine";  // "cosine" or "none"
    double momentum = 0.9;
    int epochs = 20;
    std::vector<AugSpec> augment;  // train-time augmentations; empty = none
};

struct Stage1Config {
    SelectiveVoteConfig voting;
    int epochs = 1;
};

struct Stage2Config {
    double ema_rate = 0.99;
    int epochs = 10;
    std::string strong_tier = "strong";
    std::string weak_tier = "weak";
    bool swap_aug_routing = false;
};

/// The full experiment configuration. Defaults mirror the reference recipe:
/// Adam (beta1 0.9), adaptation lr 1e-4, source lr 1e-3 cosine-annealed to
/// 1e-4, one stage-I epoch, ten stage-II epochs, EMA rate 0.99.
struct ExperimentConfig {
    ArchSpec arch;
    OptimizerSettings optimizer;      // adaptation optimizer (both stages)
    SourceTrainConfig source;
    Stage1Config stage1;
    Stage2Config stage2;
    AugTiers tiers = AugTiers::defaults();
    DataConfig data;
    int batch_size = 8;
    std::uint64_t seed = 7;
    std::string output_dir = "runs/exp";
    std::string device = "cpu";

    /// Parses and validates; every invalid or unknown field is collected into
    /// one ConfigError.
    static ExperimentConfig from_json(const nlohmann::json& j);
    static ExperimentConfig load(const std::filesystem::path& path);

    /// Fully resolved dump, defaults included.
    nlohmann::json to_json() const;

    /// FNV-1a hash of the canonical resolved dump.
    std::string hash() const;

    void validate() const;
};

}  // namespace sfseg
