#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "sfseg/checkpoint.hpp"
#include "sfseg/config.hpp"
#include "sfseg/metrics.hpp"

namespace sfseg {

/// Datasets resolved from a config. Synthetic configs always carry both
/// domains; directory-backed configs carry whichever side was given.
struct LoadedData {
    std::optional<Dataset> source;
    std::optional<Dataset> target;
};

LoadedData load_data(const ExperimentConfig& cfg);

struct StageResult {
    std::string mode;                   // e.g. "stage1", "stage1-stage2"
    std::filesystem::path checkpoint;
    std::optional<EvalReport> report;   // absent when the eval domain is unlabeled
    std::int64_t label_reads_during_adapt = 0;
};

/// Trains the source model on the labeled training domain, writes
/// `source.ckpt` (or `oracle.ckpt` when data.train_domain == "target") and an
/// evaluation report into output_dir.
StageResult cmd_train_source(const ExperimentConfig& cfg);

/// Runs an adaptation stage sequence from a source checkpoint. Valid modes:
/// "stage1", "stage2", "stage1-stage2", "stage2-stage1". Each stage consumes
/// the previous stage's checkpoint and produces its own checkpoint + report.
std::vector<StageResult> cmd_adapt(const ExperimentConfig& cfg, const std::string& mode,
                                   const std::filesystem::path& source_checkpoint,
                                   bool dump_stage1 = false);

/// Evaluates an arbitrary checkpoint on the configured eval domain.
EvalReport cmd_evaluate(const ExperimentConfig& cfg, const std::filesystem::path& checkpoint,
                        const std::string& mode_label = "direct");

/// Renders a comparison table (Markdown + CSV) and one bar plot per region
/// from saved report JSONs. All reports must describe one dataset.
void cmd_report(const std::vector<std::filesystem::path>& report_files,
                const std::filesystem::path& out_dir);

/// Canonical row order for comparison tables.
int mode_rank(const std::string& mode);

}  // namespace sfseg
