#include "sfseg/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "sfseg/losses.hpp"

namespace sfseg {
namespace {

namespace fs = std::filesystem;

void require_device(const ExperimentConfig& cfg) {
    if (cfg.device.rfind("cuda", 0) == 0 && !torch::cuda::is_available())
        throw ConfigError("device '" + cfg.device + "' requested but CUDA is unavailable");
}

nlohmann::json base_meta(const ExperimentConfig& cfg, const std::string& mode,
                         const std::string& model_id) {
    nlohmann::json meta;
    meta["mode"] = mode;
    meta["model_id"] = model_id;
    meta["config"] = cfg.to_json();
    meta["config_hash"] = cfg.hash();
    meta["seed"] = cfg.seed;
    return meta;
}

// Stacks images and labels for a labeled batch. Binary labels become float
// (B,1,spatial...) masks; multi-class stays an integer (B,spatial...) map.
std::pair<torch::Tensor, torch::Tensor> stack_labeled(const Dataset& ds,
                                                      const std::vector<std::size_t>& order,
                                                      std::size_t first, std::size_t last,
                                                      int num_classes) {
    std::vector<torch::Tensor> imgs, labs;
    for (std::size_t i = first; i < last; ++i) {
        imgs.push_back(ds.image(order[i]));
        labs.push_back(ds.label(order[i]));
    }
    auto images = torch::stack(imgs);
    auto labels = torch::stack(labs);
    if (num_classes == 1) labels = labels.to(torch::kFloat32).unsqueeze(1);
    return {images, labels};
}

EvalOptions eval_options(const ExperimentConfig& cfg) {
    EvalOptions opts;
    opts.batch_size = cfg.batch_size;
    opts.window = cfg.data.window;
    opts.brats_regions = cfg.arch.out_classes == 4;
    return opts;
}

const Dataset& pick_domain(const LoadedData& data, const std::string& domain,
                           const char* why) {
    const auto& slot = domain == "source" ? data.source : data.target;
    if (!slot)
        throw DataError(std::string("config provides no ") + domain + " dataset (needed for " +
                        why + ")");
    return *slot;
}

StageResult evaluate_into(const ExperimentConfig& cfg, Model& model, const Dataset& eval_set,
                          const std::string& mode, const fs::path& ckpt_path,
                          std::int64_t label_reads) {
    StageResult result;
    result.mode = mode;
    result.checkpoint = ckpt_path;
    result.label_reads_during_adapt = label_reads;
    if (eval_set.fully_labeled()) {
        auto report = evaluate(model, eval_set, eval_options(cfg));
        report.meta.update(base_meta(cfg, mode, ckpt_path.filename().string()));
        report.meta["label_reads_during_adapt"] = label_reads;
        if (mode == "stage2-stage1") report.meta["tags"] = {"ablation ordering"};
        result.report = std::move(report);
    }
    return result;
}

void save_stage(const ExperimentConfig& cfg, const StageResult& result) {
    if (!result.report) return;
    fs::create_directories(cfg.output_dir);
    const auto path = fs::path(cfg.output_dir) / ("report_" + result.mode + ".json");
    result.report->save(path);
}

}  // namespace

LoadedData load_data(const ExperimentConfig& cfg) {
    LoadedData out;
    if (cfg.data.kind == "synth") {
        auto [source, target] = synth_shift(cfg.data.synth);
        out.source = std::move(source);
        out.target = std::move(target);
    } else if (cfg.data.kind == "fundus") {
        if (!cfg.data.source_dir.empty())
            out.source = load_fundus(cfg.data.source_dir, cfg.data.image_size, true);
        if (!cfg.data.target_dir.empty())
            out.target = load_fundus(cfg.data.target_dir, cfg.data.image_size, false);
    } else if (cfg.data.kind == "volumes") {
        if (!cfg.data.source_dir.empty())
            out.source = load_volumes(cfg.data.source_dir, cfg.data.modality, true);
        if (!cfg.data.target_dir.empty())
            out.target = load_volumes(cfg.data.target_dir, cfg.data.modality, false);
    } else {
        throw ConfigError("unknown data.kind '" + cfg.data.kind + "'");
    }
    return out;
}

StageResult cmd_train_source(const ExperimentConfig& cfg) {
    require_device(cfg);
    auto data = load_data(cfg);
    const bool oracle = cfg.data.train_domain == "target";
    const auto& train_set = pick_domain(data, cfg.data.train_domain, "source training");
    if (train_set.empty()) throw DataError("training dataset is empty");
    if (!train_set.fully_labeled())
        throw DataError("source training requires a fully labeled dataset");

    torch::manual_seed(cfg.seed);
    Model model = build_model(cfg.arch, cfg.seed);
    model.set_requires_grad(true);
    torch::optim::Adam optimizer(model.net->parameters(),
                                 torch::optim::AdamOptions(cfg.source.lr)
                                     .betas({cfg.source.momentum, 0.999}));
    std::mt19937 aug_rng(static_cast<std::mt19937::result_type>(cfg.seed * 2654435761ULL + 1));

    const int classes = cfg.arch.out_classes;
    for (int epoch = 0; epoch < cfg.source.epochs; ++epoch) {
        if (cfg.source.scheduler == "cosine") {
            const double t = cfg.source.epochs > 1
                                 ? static_cast<double>(epoch) / cfg.source.epochs
                                 : 0.0;
            const double lr =
                cfg.source.min_lr + 0.5 * (cfg.source.lr - cfg.source.min_lr) *
                                        (1.0 + std::cos(M_PI * t));
            for (auto& group : optimizer.param_groups())
                group.options().set_lr(lr);
        }
        auto order = train_set.shuffled_indices(cfg.seed + static_cast<std::uint64_t>(epoch));
        for (std::size_t first = 0; first < order.size();
             first += static_cast<std::size_t>(cfg.batch_size)) {
            const auto last =
                std::min(order.size(), first + static_cast<std::size_t>(cfg.batch_size));
            auto [images, labels] = stack_labeled(train_set, order, first, last, classes);
            if (!cfg.source.augment.empty()) {
                std::vector<torch::Tensor> augmented;
                for (std::int64_t b = 0; b < images.size(0); ++b)
                    augmented.push_back(apply_tier(cfg.source.augment, images[b], aug_rng));
                images = torch::stack(augmented);
            }
            model.train();
            auto pred = forward(model, images).probs;
            auto loss = seg_loss(pred, labels, classes);
            const double loss_value = loss.item<double>();
            if (!std::isfinite(loss_value))
                throw TrainingError("non-finite source loss at epoch " + std::to_string(epoch));
            optimizer.zero_grad();
            loss.backward();
            optimizer.step();
            model.step_count += 1;
        }
    }
    model.eval();

    fs::create_directories(cfg.output_dir);
    const std::string mode = oracle ? "oracle" : "source";
    const auto ckpt = fs::path(cfg.output_dir) / (mode + ".ckpt");
    save_checkpoint(model, ckpt);

    // Validation report on the domain that was trained on.
    auto result = evaluate_into(cfg, model, train_set, mode, ckpt, 0);
    save_stage(cfg, result);
    return result;
}

namespace {

std::vector<std::string> parse_mode(const std::string& mode) {
    std::vector<std::string> stages;
    std::string token;
    for (std::size_t i = 0; i <= mode.size(); ++i) {
        const char c = i < mode.size() ? mode[i] : '-';
        if (c == '-' || c == '>' || c == ',') {
            if (!token.empty()) stages.push_back(token);
            token.clear();
        } else {
            token += c;
        }
    }
    for (const auto& s : stages)
        if (s != "stage1" && s != "stage2")
            throw ConfigError("unknown adaptation stage '" + s + "' in mode '" + mode + "'");
    if (stages.empty() || stages.size() > 2)
        throw ConfigError("mode must name one or two stages, got '" + mode + "'");
    return stages;
}

}  // namespace

std::vector<StageResult> cmd_adapt(const ExperimentConfig& cfg, const std::string& mode,
                                   const fs::path& source_checkpoint, bool dump_stage1) {
    require_device(cfg);
    const auto stages = parse_mode(mode);
    auto data = load_data(cfg);
    const auto& target = pick_domain(data, "target", "adaptation");
    if (target.empty()) throw DataError("target dataset is empty");
    UnlabeledView view(target);

    torch::manual_seed(cfg.seed);
    Model current = load_checkpoint(source_checkpoint, cfg.arch);
    const auto& eval_set = pick_domain(data, cfg.data.eval_domain, "evaluation");

    std::vector<StageResult> results;
    std::string mode_so_far;
    for (std::size_t i = 0; i < stages.size(); ++i) {
        mode_so_far += (i ? "-" : "") + stages[i];
        const std::int64_t reads_before = target.label_read_count();
        Model next = current;
        if (stages[i] == "stage1") {
            Stage1Settings settings;
            settings.voting = cfg.stage1.voting;
            settings.ensemble = cfg.tiers.ensemble;
            settings.optimizer = cfg.optimizer;
            settings.epochs = cfg.stage1.epochs;
            settings.batch_size = cfg.batch_size;
            settings.seed = cfg.seed + 101 * (i + 1);
            if (dump_stage1)
                settings.dump_dir = fs::path(cfg.output_dir) / "stage1_dump";
            next = adapt_stage1(current, view, settings);
        } else {
            Stage2Settings settings;
            settings.ema_rate = cfg.stage2.ema_rate;
            settings.strong = cfg.tiers.tier(cfg.stage2.strong_tier == "weak"
                                                 ? AugTier::kWeak
                                                 : AugTier::kStrong);
            settings.weak = cfg.tiers.tier(cfg.stage2.weak_tier == "strong"
                                               ? AugTier::kStrong
                                               : AugTier::kWeak);
            settings.swap_aug_routing = cfg.stage2.swap_aug_routing;
            settings.optimizer = cfg.optimizer;
            settings.epochs = cfg.stage2.epochs;
            settings.batch_size = cfg.batch_size;
            settings.seed = cfg.seed + 211 * (i + 1);
            next = adapt_stage2(current, view, settings);
        }
        const std::int64_t reads = target.label_read_count() - reads_before;
        fs::create_directories(cfg.output_dir);
        const auto ckpt = fs::path(cfg.output_dir) / (mode_so_far + ".ckpt");
        save_checkpoint(next, ckpt);
        auto result = evaluate_into(cfg, next, eval_set, mode_so_far, ckpt, reads);
        save_stage(cfg, result);
        results.push_back(std::move(result));
        current = std::move(next);
    }
    return results;
}

EvalReport cmd_evaluate(const ExperimentConfig& cfg, const fs::path& checkpoint,
                        const std::string& mode_label) {
    require_device(cfg);
    auto data = load_data(cfg);
    const auto& eval_set = pick_domain(data, cfg.data.eval_domain, "evaluation");
    Model model = load_checkpoint(checkpoint, cfg.arch);
    auto report = evaluate(model, eval_set, eval_options(cfg));
    report.meta.update(base_meta(cfg, mode_label, checkpoint.filename().string()));
    fs::create_directories(cfg.output_dir);
    report.save(fs::path(cfg.output_dir) / ("report_" + mode_label + ".json"));
    return report;
}

int mode_rank(const std::string& mode) {
    static const std::map<std::string, int> order = {
        {"direct", 0},   {"stage1", 1},        {"stage2", 2},
        {"stage2-stage1", 3}, {"stage1-stage2", 4}, {"source", 5},
        {"oracle", 6},
    };
    auto it = order.find(mode);
    return it == order.end() ? 10 : it->second;
}

namespace {

void draw_bar_plot(const std::string& region,
                   const std::vector<std::pair<std::string, double>>& rows,
                   const fs::path& out_png) {
    const int bar_w = 72, gap = 28, h = 360, margin = 60;
    const int w = margin * 2 + static_cast<int>(rows.size()) * (bar_w + gap);
    cv::Mat canvas(h, std::max(w, 320), CV_8UC3, cv::Scalar(255, 255, 255));
    const int base_y = h - 60;
    const int plot_h = h - 120;
    cv::line(canvas, {margin - 10, base_y}, {canvas.cols - 20, base_y}, {0, 0, 0}, 1);
    for (std::size_t i = 0; i < rows.size(); ++i) {
        const int x0 = margin + static_cast<int>(i) * (bar_w + gap);
        const int bar_h = static_cast<int>(std::clamp(rows[i].second, 0.0, 1.0) * plot_h);
        cv::rectangle(canvas, {x0, base_y - bar_h}, {x0 + bar_w, base_y},
                      cv::Scalar(180, 120, 40), cv::FILLED);
        std::ostringstream value;
        value.precision(3);
        value << std::fixed << rows[i].second;
        cv::putText(canvas, value.str(), {x0, base_y - bar_h - 8},
                    cv::FONT_HERSHEY_SIMPLEX, 0.45, {0, 0, 0}, 1);
        cv::putText(canvas, rows[i].first, {x0 - 6, base_y + 18},
                    cv::FONT_HERSHEY_SIMPLEX, 0.4, {0, 0, 0}, 1);
    }
    cv::putText(canvas, "dice: " + region, {margin, 28}, cv::FONT_HERSHEY_SIMPLEX, 0.6,
                {0, 0, 0}, 1);
    cv::imwrite(out_png.string(), canvas);
}

}  // namespace

void cmd_report(const std::vector<fs::path>& report_files, const fs::path& out_dir) {
    if (report_files.empty()) throw ConfigError("report needs at least one report file");
    std::vector<EvalReport> reports;
    for (const auto& f : report_files) reports.push_back(EvalReport::load(f));

    std::set<std::string> datasets;
    for (const auto& r : reports)
        datasets.insert(r.meta.value("dataset_id", std::string("unknown")));
    if (datasets.size() > 1) {
        std::ostringstream os;
        os << "refusing to tabulate reports from mixed datasets:";
        for (const auto& d : datasets) os << ' ' << d;
        throw DataError(os.str());
    }

    std::stable_sort(reports.begin(), reports.end(),
                     [](const EvalReport& a, const EvalReport& b) {
                         return mode_rank(a.meta.value("mode", "")) <
                                mode_rank(b.meta.value("mode", ""));
                     });

    std::set<std::string> regions;
    for (const auto& r : reports)
        for (const auto& [k, _] : r.mean) regions.insert(k);

    const EvalReport* direct = nullptr;
    const EvalReport* oracle = nullptr;
    for (const auto& r : reports) {
        const auto mode = r.meta.value("mode", "");
        if (mode == "direct") direct = &r;
        if (mode == "oracle") oracle = &r;
    }

    fs::create_directories(out_dir);
    std::ostringstream md, csv;
    md << "# Adaptation comparison (" << *datasets.begin() << ")\n\n";
    md << "| mode |";
    csv << "mode";
    for (const auto& region : regions) {
        md << ' ' << region << " | vs direct |";
        csv << ',' << region << ",delta_direct";
        if (oracle) {
            md << " vs oracle |";
            csv << ",delta_oracle";
        }
    }
    md << "\n|---|";
    for (std::size_t i = 0; i < regions.size(); ++i) {
        md << "---|---|";
        if (oracle) md << "---|";
    }
    md << '\n';
    csv << '\n';

    for (const auto& r : reports) {
        const auto mode = r.meta.value("mode", "?");
        md << "| " << mode << " |";
        csv << mode;
        for (const auto& region : regions) {
            const double v = r.mean.count(region) ? r.mean.at(region) : 0.0;
            md << ' ' << std::fixed << std::setprecision(4) << v << " ± "
               << std::setprecision(3) << (r.stddev.count(region) ? r.stddev.at(region) : 0.0)
               << " |";
            csv << ',' << v;
            const double dd = direct && direct->mean.count(region)
                                  ? v - direct->mean.at(region)
                                  : 0.0;
            md << ' ' << std::showpos << std::setprecision(4) << dd << std::noshowpos << " |";
            csv << ',' << dd;
            if (oracle) {
                const double od =
                    oracle->mean.count(region) ? v - oracle->mean.at(region) : 0.0;
                md << ' ' << std::showpos << std::setprecision(4) << od << std::noshowpos
                   << " |";
                csv << ',' << od;
            }
        }
        md << '\n';
        csv << '\n';
    }

    std::ofstream(out_dir / "report.md") << md.str();
    std::ofstream(out_dir / "report.csv") << csv.str();
    for (const auto& region : regions) {
        std::vector<std::pair<std::string, double>> rows;
        for (const auto& r : reports)
            if (r.mean.count(region))
                rows.emplace_back(r.meta.value("mode", "?"), r.mean.at(region));
        draw_bar_plot(region, rows, out_dir / ("plot_" + region + ".png"));
    }
}

}  // namespace sfseg
