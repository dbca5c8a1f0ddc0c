#pragma once

// GLUE task metadata: primary metric, label vocabulary, and the mapping from
// a run's prediction files to submission archive members.

#include <string>
#include <string_view>
#include <vector>

namespace xbert {

/// One prediction file of a run and the submission member it becomes.
struct GlueOutput {
    std::string prediction_file;  // inside the run's predictions directory
    std::string member;           // "<Task>.tsv" inside the zip
    bool diagnostic = false;      // AX; only emitted on request
};

struct GlueTask {
    std::string name;
    std::string metric;               // "mcc", "acc", "f1", "spearman"
    std::vector<std::string> labels;  // id -> label string; empty for regression
    std::vector<GlueOutput> outputs;

    bool regression() const noexcept { return labels.empty(); }
};

/// The nine tasks, in canonical order: CoLA, SST-2, MRPC, STS-B, QQP, MNLI, QNLI, RTE, WNLI.
const std::vector<GlueTask>& glue_tasks();
std::vector<std::string> glue_task_names();
/// Throws ConfigError for an unknown name. Matching is exact.
const GlueTask& glue_task(std::string_view name);
bool is_glue_task(std::string_view name) noexcept;

}  // namespace xbert
