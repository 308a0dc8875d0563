#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>
#include <torch/torch.h>

#include "sfseg/data.hpp"
#include "sfseg/model.hpp"

namespace sfseg {

/// Dice overlap 2|P∩G| / (|P|+|G|) between two {0,1} masks; 1.0 when both are
/// empty. Non-binary inputs are rejected.
double dice(const torch::Tensor& pred, const torch::Tensor& gt);

/// Composed evaluation regions for 4-class tumor labels (background=0):
/// whole = {1,2,3}, core = {1,3}, enhancing = {3}.
struct TumorRegions {
    torch::Tensor whole;
    torch::Tensor core;
    torch::Tensor enhancing;
};
TumorRegions brats_regions(const torch::Tensor& label);

struct EvalOptions {
    int batch_size = 8;
    std::vector<std::int64_t> window;  // 3D sliding-window extent; empty = whole volume
    bool brats_regions = false;        // report WT/TC/ET instead of raw classes
};

/// Per-sample and aggregate Dice. `meta` carries run provenance (model id,
/// dataset id, resolved config + hash, mode label, tags).
struct EvalReport {
    struct Entry {
        std::string id;
        std::map<std::string, double> dice;  // region name -> value
    };
    std::vector<Entry> per_sample;
    std::map<std::string, double> mean;
    std::map<std::string, double> stddev;
    nlohmann::json meta;

    nlohmann::json to_json() const;
    static EvalReport from_json(const nlohmann::json& j);
    std::string to_csv() const;
    void save(const std::filesystem::path& json_path) const;
    static EvalReport load(const std::filesystem::path& json_path);
};

/// Evaluates a model on a labeled dataset: predictions binarized at 0.5
/// (binary head) or argmaxed (multi-class), volumes larger than the window
/// predicted by overlap-averaged sliding window. Deterministic.
EvalReport evaluate(Model& model, const Dataset& dataset, const EvalOptions& opts = {});

/// Mean foreground Dice (binary) or mean over regions (multi-class) — the
/// single number used for comparisons.
double headline_dice(const EvalReport& report);

}  // namespace sfseg
