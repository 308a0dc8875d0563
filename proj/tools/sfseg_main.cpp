#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "sfseg/pipeline.hpp"

namespace fs = std::filesystem;

namespace {

struct CommonArgs {
    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> device;
    std::optional<std::string> output_dir;
};

sfseg::ExperimentConfig resolve_config(const CommonArgs& args) {
    auto cfg = args.config_path.empty()
                   ? sfseg::ExperimentConfig{}
                   : sfseg::ExperimentConfig::load(args.config_path);
    if (args.seed) cfg.seed = *args.seed;
    if (args.device) cfg.device = *args.device;
    if (args.output_dir) cfg.output_dir = *args.output_dir;
    return cfg;
}

void add_common(CLI::App* cmd, CommonArgs& args, bool config_required = true) {
    auto* opt = cmd->add_option("--config", args.config_path, "experiment config JSON");
    if (config_required) opt->required();
    cmd->add_option("--seed", [&args](const CLI::results_t& res) {
        args.seed = std::stoull(res[0]);
        return true;
    }, "override config seed");
    cmd->add_option("--device", [&args](const CLI::results_t& res) {
        args.device = res[0];
        return true;
    }, "override device (cpu / cuda[:n])");
    cmd->add_option("--output-dir", [&args](const CLI::results_t& res) {
        args.output_dir = res[0];
        return true;
    }, "override output directory");
}

void print_summary(const sfseg::EvalReport& report) {
    std::cout << "mode=" << report.meta.value("mode", "?") << " dataset="
              << report.meta.value("dataset_id", "?");
    for (const auto& [region, value] : report.mean)
        std::cout << ' ' << region << "=" << value;
    std::cout << '\n';
}

int fail_with_json(const std::string& kind, const std::string& message) {
    nlohmann::json err;
    err["error"] = kind;
    err["message"] = message;
    std::cerr << err.dump() << std::endl;
    return 1;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Source-free domain adaptation pipeline for image segmentation"};
    app.require_subcommand(1);

    CommonArgs train_args, adapt_args, eval_args, print_args;
    std::string mode = "stage1-stage2";
    std::string checkpoint;
    bool dump_stage1 = false;
    std::vector<std::string> report_inputs;
    std::string report_out = "report_out";
    std::string eval_label = "direct";

    auto* train = app.add_subcommand("train-source", "train the source (or oracle) model");
    add_common(train, train_args);

    auto* adapt = app.add_subcommand("adapt", "run source-free adaptation stages");
    add_common(adapt, adapt_args);
    adapt->add_option("--mode", mode,
                      "stage sequence: stage1 | stage2 | stage1-stage2 | stage2-stage1");
    adapt->add_option("--checkpoint", checkpoint, "source checkpoint (.ckpt)");
    adapt->add_flag("--dump-stage1", dump_stage1,
                    "write per-sample pseudo-label montages during stage 1");

    auto* evaluate = app.add_subcommand("evaluate", "evaluate a checkpoint");
    add_common(evaluate, eval_args);
    evaluate->add_option("--checkpoint", checkpoint, "checkpoint to evaluate")->required();
    evaluate->add_option("--label", eval_label, "mode label recorded in the report");

    auto* report = app.add_subcommand("report", "tabulate and plot saved reports");
    report->add_option("reports", report_inputs, "report JSON files")->required();
    report->add_option("--out", report_out, "output directory");

    auto* print_config = app.add_subcommand("print-config",
                                            "print the fully resolved config (defaults included)");
    add_common(print_config, print_args, /*config_required=*/false);

    CLI11_PARSE(app, argc, argv);

    try {
        if (*train) {
            auto cfg = resolve_config(train_args);
            auto result = sfseg::cmd_train_source(cfg);
            std::cout << "checkpoint: " << result.checkpoint.string() << '\n';
            if (result.report) print_summary(*result.report);
        } else if (*adapt) {
            auto cfg = resolve_config(adapt_args);
            fs::path ckpt = checkpoint.empty()
                                ? fs::path(cfg.output_dir) / "source.ckpt"
                                : fs::path(checkpoint);
            auto results = sfseg::cmd_adapt(cfg, mode, ckpt, dump_stage1);
            for (const auto& r : results) {
                std::cout << "checkpoint: " << r.checkpoint.string() << '\n';
                if (r.report) print_summary(*r.report);
            }
        } else if (*evaluate) {
            auto cfg = resolve_config(eval_args);
            auto rep = sfseg::cmd_evaluate(cfg, checkpoint, eval_label);
            print_summary(rep);
        } else if (*report) {
            std::vector<fs::path> files(report_inputs.begin(), report_inputs.end());
            sfseg::cmd_report(files, report_out);
            std::cout << "wrote " << report_out << "/report.md\n";
        } else if (*print_config) {
            auto cfg = resolve_config(print_args);
            std::cout << cfg.to_json().dump(2) << '\n';
        }
    } catch (const sfseg::ConfigError& e) {
        return fail_with_json("config", e.what());
    } catch (const sfseg::DataError& e) {
        return fail_with_json("data", e.what());
    } catch (const sfseg::CheckpointError& e) {
        return fail_with_json("checkpoint", e.what());
    } catch (const sfseg::TrainingError& e) {
        return fail_with_json("training", e.what());
    } catch (const std::exception& e) {
        return fail_with_json("internal", e.what());
    }
    return 0;
}
