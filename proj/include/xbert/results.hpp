#pragma once

// Result collection: parse finetune run logs, pick the best run per task, and
// translate its test predictions into a GLUE submission archive.
//
// A run log (`log/finetune/<dataset_id>/<task>/<run>/stdout.log`) carries
// tab-separated lines, anywhere among other output:
//   task              <name>
//   hparam            <key> <value>          (one per Hyperparams field)
//   final_val_metric  <metric> <float>
//   predictions_dir   <path>
//
// Prediction files hold a header `index\tprediction`, then one row per test
// example: an integer label id, or a number for regression tasks.

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "xbert/hyperparams.hpp"

namespace xbert {

struct RunResult {
    std::string task;
    std::string run_name;
    Hyperparams hyperparams;
    std::string metric_name;
    double val_metric = 0;
    std::filesystem::path predictions_dir;
    std::filesystem::path log_path;
};

struct SkippedLog {
    std::filesystem::path log_path;
    std::string reason;
};

struct ValSummary {
    std::vector<RunResult> rows;  // sorted by (task, run_name)
    std::vector<SkippedLog> skipped;
};

/// Parses every `<log_root>/finetune/<dataset_id>/<task>/<run>/stdout.log`.
/// Malformed logs land in `skipped`. Throws CollectionError when no log exists at all.
ValSummary summarize_val(const std::filesystem::path& log_root, const std::string& dataset_id);

/// Parses one run log. Throws CollectionError describing the defect.
RunResult parse_run_log(const std::filesystem::path& log_path);

struct BestSelection {
    std::map<std::string, RunResult> best;  // task -> winner
    std::vector<std::string> warnings;      // expected tasks without any row
};

/// Highest val_metric per task; ties go to the smallest hyperparameter tuple,
/// then the smallest run name. Independent of row order.
/// Throws CollectionError on an empty table.
BestSelection collect_best_val(const std::vector<RunResult>& results, const std::vector<std::string>& expected_tasks);

/// True when `a` beats `b` under the selection order above.
bool better_run(const RunResult& a, const RunResult& b);

/// Writes one `<Task>.tsv` per submission member into `out_dir`, then
/// `out_dir/glue_submission.zip` holding all of them. Returns the zip path.
/// Throws CollectionError naming the task for a missing file or unknown label id.
std::filesystem::path translate_test_result(const std::map<std::string, RunResult>& best, const std::filesystem::path& out_dir,
                                            bool include_diagnostic = false);

/// Translates one predictions file of `task` into submission TSV text.
std::string translate_predictions(const std::string& task, const std::filesystem::path& predictions_file);

/// Tab-separated summary of a selection: task, metric, value, run, hyperparameters.
std::string format_best_table(const BestSelection& selection);

}  // namespace xbert
