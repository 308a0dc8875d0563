#include "sfseg/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

namespace sfseg {
namespace {

using nlohmann::json;

/// Collects every schema problem so the error names all invalid fields at once.
struct SchemaCheck {
    std::vector<std::string> errors;

    void unknown_keys(const json& j, const std::string& scope,
                      const std::set<std::string>& known) {
        if (!j.is_object()) {
            errors.push_back(scope + ": expected an object");
            return;
        }
        for (const auto& [key, _] : j.items())
            if (!known.count(key))
                errors.push_back(scope + "." + key + ": unknown field");
    }

    template <typename T>
    void read(const json& j, const char* key, T& out, const std::string& scope) {
        if (!j.is_object() || !j.contains(key)) return;
        try {
            out = j.at(key).get<T>();
        } catch (const json::exception&) {
            errors.push_back(scope + "." + key + ": wrong type");
        }
    }

    void finish() const {
        if (errors.empty()) return;
        std::ostringstream os;
        os << "invalid config (" << errors.size() << " problem(s)):";
        for (const auto& e : errors) os << "\n  - " << e;
        throw ConfigError(os.str());
    }
};

std::vector<AugSpec> parse_aug_list(const json& j, const std::string& scope,
                                    SchemaCheck& check) {
    std::vector<AugSpec> out;
    if (!j.is_array()) {
        check.errors.push_back(scope + ": expected an array of augmentations");
        return out;
    }
    for (std::size_t i = 0; i < j.size(); ++i) {
        const auto& item = j.at(i);
        const std::string where = scope + "[" + std::to_string(i) + "]";
        AugSpec spec;
        check.unknown_keys(item, where, {"name", "params"});
        check.read(item, "name", spec.name, where);
        if (item.is_object() && item.contains("params")) {
            try {
                spec.params = item.at("params").get<std::map<std::string, double>>();
            } catch (const json::exception&) {
                check.errors.push_back(where + ".params: expected {name: number}");
            }
        }
        if (!spec.name.empty() && !is_registered_aug(spec.name))
            check.errors.push_back(where + ".name: unknown augmentation '" + spec.name + "'");
        out.push_back(std::move(spec));
    }
    return out;
}

json aug_list_to_json(const std::vector<AugSpec>& specs) {
    json out = json::array();
    for (const auto& s : specs) out.push_back({{"name", s.name}, {"params", s.params}});
    return out;
}

}  // namespace

ExperimentConfig ExperimentConfig::from_json(const json& j) {
    ExperimentConfig cfg;
    SchemaCheck check;
    check.unknown_keys(j, "config",
                       {"arch", "optimizer", "source", "stage1", "stage2", "augment", "data",
                        "batch_size", "seed", "output_dir", "device"});

    if (j.contains("arch")) {
        const auto& a = j.at("arch");
        check.unknown_keys(a, "arch",
                           {"dims", "levels", "in_channels", "out_classes", "base_width",
                            "convs_per_block", "instance_norm"});
        check.read(a, "dims", cfg.arch.dims, "arch");
        check.read(a, "levels", cfg.arch.levels, "arch");
        check.read(a, "in_channels", cfg.arch.in_channels, "arch");
        check.read(a, "out_classes", cfg.arch.out_classes, "arch");
        check.read(a, "base_width", cfg.arch.base_width, "arch");
        check.read(a, "convs_per_block", cfg.arch.convs_per_block, "arch");
        check.read(a, "instance_norm", cfg.arch.instance_norm, "arch");
    }
    if (j.contains("optimizer")) {
        const auto& o = j.at("optimizer");
        check.unknown_keys(o, "optimizer", {"name", "lr", "momentum"});
        std::string name = "adam";
        check.read(o, "name", name, "optimizer");
        if (name != "adam")
            check.errors.push_back("optimizer.name: only 'adam' is supported");
        check.read(o, "lr", cfg.optimizer.lr, "optimizer");
        check.read(o, "momentum", cfg.optimizer.momentum, "optimizer");
    }
    if (j.contains("source")) {
        const auto& s = j.at("source");
        check.unknown_keys(s, "source",
                           {"lr", "min_lr", "scheduler", "momentum", "epochs", "augment"});
        check.read(s, "lr", cfg.source.lr, "source");
        check.read(s, "min_lr", cfg.source.min_lr, "source");
        check.read(s, "scheduler", cfg.source.scheduler, "source");
        check.read(s, "momentum", cfg.source.momentum, "source");
        check.read(s, "epochs", cfg.source.epochs, "source");
        if (s.is_object() && s.contains("augment"))
            cfg.source.augment = parse_aug_list(s.at("augment"), "source.augment", check);
        if (cfg.source.scheduler != "cosine" && cfg.source.scheduler != "none")
            check.errors.push_back("source.scheduler: must be 'cosine' or 'none'");
    }
    if (j.contains("stage1")) {
        const auto& s = j.at("stage1");
        check.unknown_keys(s, "stage1",
                           {"alpha", "delta", "lambda1", "lambda2", "binarize_threshold",
                            "ensemble_size", "epochs"});
        check.read(s, "alpha", cfg.stage1.voting.alpha, "stage1");
        check.read(s, "delta", cfg.stage1.voting.delta, "stage1");
        check.read(s, "lambda1", cfg.stage1.voting.lambda1, "stage1");
        check.read(s, "lambda2", cfg.stage1.voting.lambda2, "stage1");
        check.read(s, "binarize_threshold", cfg.stage1.voting.binarize_threshold, "stage1");
        check.read(s, "ensemble_size", cfg.stage1.voting.ensemble_size, "stage1");
        check.read(s, "epochs", cfg.stage1.epochs, "stage1");
    }
    if (j.contains("stage2")) {
        const auto& s = j.at("stage2");
        check.unknown_keys(s, "stage2",
                           {"ema_rate", "epochs", "strong_tier", "weak_tier",
                            "swap_aug_routing"});
        check.read(s, "ema_rate", cfg.stage2.ema_rate, "stage2");
        check.read(s, "epochs", cfg.stage2.epochs, "stage2");
        check.read(s, "strong_tier", cfg.stage2.strong_tier, "stage2");
        check.read(s, "weak_tier", cfg.stage2.weak_tier, "stage2");
        check.read(s, "swap_aug_routing", cfg.stage2.swap_aug_routing, "stage2");
    }
    if (j.contains("augment")) {
        const auto& a = j.at("augment");
        check.unknown_keys(a, "augment", {"ensemble", "weak", "strong"});
        if (a.is_object()) {
            if (a.contains("ensemble"))
                cfg.tiers.ensemble = parse_aug_list(a.at("ensemble"), "augment.ensemble", check);
            if (a.contains("weak"))
                cfg.tiers.weak = parse_aug_list(a.at("weak"), "augment.weak", check);
            if (a.contains("strong"))
                cfg.tiers.strong = parse_aug_list(a.at("strong"), "augment.strong", check);
        }
    }
    if (j.contains("data")) {
        const auto& d = j.at("data");
        check.unknown_keys(d, "data",
                           {"kind", "n_samples", "image_size", "shape_family",
                            "intensity_shift", "contrast_scale", "noise_sigma", "data_seed",
                            "source_dir", "target_dir", "modality", "window", "eval_domain",
                            "train_domain"});
        check.read(d, "kind", cfg.data.kind, "data");
        check.read(d, "n_samples", cfg.data.synth.n_samples, "data");
        if (d.is_object() && d.contains("image_size")) {
            check.read(d, "image_size", cfg.data.image_size, "data");
            cfg.data.synth.image_size = cfg.data.image_size;
        }
        check.read(d, "shape_family", cfg.data.synth.shape_family, "data");
        check.read(d, "intensity_shift", cfg.data.synth.intensity_shift, "data");
        check.read(d, "contrast_scale", cfg.data.synth.contrast_scale, "data");
        check.read(d, "noise_sigma", cfg.data.synth.noise_sigma, "data");
        check.read(d, "data_seed", cfg.data.synth.seed, "data");
        check.read(d, "source_dir", cfg.data.source_dir, "data");
        check.read(d, "target_dir", cfg.data.target_dir, "data");
        check.read(d, "modality", cfg.data.modality, "data");
        check.read(d, "window", cfg.data.window, "data");
        check.read(d, "eval_domain", cfg.data.eval_domain, "data");
        check.read(d, "train_domain", cfg.data.train_domain, "data");
    }
    check.read(j, "batch_size", cfg.batch_size, "config");
    check.read(j, "seed", cfg.seed, "config");
    check.read(j, "output_dir", cfg.output_dir, "config");
    check.read(j, "device", cfg.device, "config");

    // Semantic checks, still aggregated.
    auto guard = [&check](auto&& fn) {
        try {
            fn();
        } catch (const std::exception& e) {
            check.errors.push_back(e.what());
        }
    };
    guard([&] { cfg.arch.validate(); });
    guard([&] { cfg.stage1.voting.validate(); });
    if (cfg.data.kind == "synth") guard([&] { cfg.data.synth.validate(); });
    if (cfg.data.kind != "synth" && cfg.data.kind != "fundus" && cfg.data.kind != "volumes")
        check.errors.push_back("data.kind: must be 'synth', 'fundus' or 'volumes'");
    if (cfg.data.kind != "synth") {
        if (cfg.data.source_dir.empty() && cfg.data.target_dir.empty())
            check.errors.push_back("data: source_dir or target_dir required for kind '" +
                                   cfg.data.kind + "'");
    }
    if (cfg.data.eval_domain != "source" && cfg.data.eval_domain != "target")
        check.errors.push_back("data.eval_domain: must be 'source' or 'target'");
    if (cfg.data.train_domain != "source" && cfg.data.train_domain != "target")
        check.errors.push_back("data.train_domain: must be 'source' or 'target'");
    if (cfg.batch_size < 1) check.errors.push_back("batch_size: must be positive");
    if (cfg.stage1.epochs < 0 || cfg.stage2.epochs < 0 || cfg.source.epochs < 0)
        check.errors.push_back("epoch counts must be non-negative");
    if (cfg.stage2.ema_rate < 0.0 || cfg.stage2.ema_rate > 1.0)
        check.errors.push_back("stage2.ema_rate: must be in [0,1]");
    if (cfg.device != "cpu" && cfg.device.rfind("cuda", 0) != 0)
        check.errors.push_back("device: must be 'cpu' or 'cuda[:n]'");

    check.finish();
    return cfg;
}

ExperimentConfig ExperimentConfig::load(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw ConfigError("cannot open config file: " + path.string());
    json j;
    try {
        is >> j;
    } catch (const json::exception& e) {
        throw ConfigError("config is not valid JSON: " + std::string(e.what()));
    }
    return from_json(j);
}

json ExperimentConfig::to_json() const {
    json j;
    j["arch"] = arch;
    j["optimizer"] = {{"name", "adam"}, {"lr", optimizer.lr}, {"momentum", optimizer.momentum}};
    j["source"] = {{"lr", source.lr},
                   {"min_lr", source.min_lr},
                   {"scheduler", source.scheduler},
                   {"momentum", source.momentum},
                   {"epochs", source.epochs},
                   {"augment", aug_list_to_json(source.augment)}};
    j["stage1"] = {{"alpha", stage1.voting.alpha},
                   {"delta", stage1.voting.delta},
                   {"lambda1", stage1.voting.lambda1},
                   {"lambda2", stage1.voting.lambda2},
                   {"binarize_threshold", stage1.voting.binarize_threshold},
                   {"ensemble_size", stage1.voting.ensemble_size},
                   {"epochs", stage1.epochs}};
    j["stage2"] = {{"ema_rate", stage2.ema_rate},
                   {"epochs", stage2.epochs},
                   {"strong_tier", stage2.strong_tier},
                   {"weak_tier", stage2.weak_tier},
                   {"swap_aug_routing", stage2.swap_aug_routing}};
    j["augment"] = {{"ensemble", aug_list_to_json(tiers.ensemble)},
                    {"weak", aug_list_to_json(tiers.weak)},
                    {"strong", aug_list_to_json(tiers.strong)}};
    j["data"] = {{"kind", data.kind},
                 {"n_samples", data.synth.n_samples},
                 {"image_size", data.kind == "synth" ? data.synth.image_size : data.image_size},
                 {"shape_family", data.synth.shape_family},
                 {"intensity_shift", data.synth.intensity_shift},
                 {"contrast_scale", data.synth.contrast_scale},
                 {"noise_sigma", data.synth.noise_sigma},
                 {"data_seed", data.synth.seed},
                 {"source_dir", data.source_dir},
                 {"target_dir", data.target_dir},
                 {"modality", data.modality},
                 {"window", data.window},
                 {"eval_domain", data.eval_domain},
                 {"train_domain", data.train_domain}};
    j["batch_size"] = batch_size;
    j["seed"] = seed;
    j["output_dir"] = output_dir;
    j["device"] = device;
    return j;
}

std::string ExperimentConfig::hash() const {
    const std::string dump = to_json().dump();
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : dump) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    std::ostringstream os;
    os << std::hex << h;
    return os.str();
}

void ExperimentConfig::validate() const {
    // from_json performs the aggregate validation; a default-built config is valid.
    arch.validate();
    stage1.voting.validate();
}

}  // namespace sfseg
