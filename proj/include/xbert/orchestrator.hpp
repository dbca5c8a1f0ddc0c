#pragma once

// Five-stage pipeline: env_check -> dataset -> pretrain -> finetune -> collect.
//
// Workspace layout (all relative to PipelineOptions::workdir):
//   data/processed/<dataset_id>/{shards,instances}/   data/processed/LATEST
//   saved_models/pretrain/<dataset_id>/
//   log/pretrain/<dataset_id>/                        log/finetune/<dataset_id>/<task>/<run>/
//   output/finetune/<dataset_id>/<task>/<run>/
//   output_test_translated/finetune/<dataset_id>/glue_submission.zip
//   log/pipeline_report.json                          .xbert/stages/<stage>.done

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "xbert/config.hpp"
#include "xbert/hyperparams.hpp"
#include "xbert/instances.hpp"
#include "xbert/lr_schedule.hpp"
#include "xbert/trainer.hpp"

namespace xbert {

enum class Stage { env_check, dataset, pretrain, finetune, collect };
constexpr std::array<Stage, 5> kStageOrder{Stage::env_check, Stage::dataset, Stage::pretrain, Stage::finetune, Stage::collect};
std::string_view stage_name(Stage s) noexcept;

enum class TrainerKind { simulation, external };

/// Model and optimizer flags passed through to the external pretraining command.
struct PretrainArgs {
    std::string model_type = "bert-mlm";
    std::string hidden_act = "gelu";
    int hidden_size = 1024;
    int num_hidden_layers = 24;
    int num_attention_heads = 16;
    int intermediate_size = 4096;
    double hidden_dropout_prob = 0.1;
    double attention_probs_dropout_prob = 0.1;
    std::string encoder_ln_mode = "pre-ln";
    int train_batch_size = 4096;
    int train_micro_batch_size_per_gpu = 32;
    double gradient_clipping = 0.0;
    std::string optimizer_type = "adamw";
    double weight_decay = 0.01;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.98;
    double adam_eps = 1e-6;
    double total_training_time = 24.0;
    double early_exit_time_marker = 24.0;
    int print_steps = 100;
    int num_epochs_between_checkpoints = 10000;
    std::string job_name = "pretraining_experiment";
    std::string project_name = "budget-bert-pretraining";
    int validation_micro_batch = 16;
    std::string data_loader_type = "dist";
    bool fp16 = true;
};

/// Run-time settings that have no key in the YAML schema.
struct PipelineOptions {
    std::filesystem::path workdir = ".";
    TrainerKind trainer = TrainerKind::simulation;
    /// Program prefix of external commands; "{num_gpus}" is substituted.
    std::vector<std::string> pretrain_command{"deepspeed", "run_pretraining.py"};
    std::vector<std::string> finetune_command{"python", "run_glue.py"};
    SimulationOptions simulation;

    std::optional<std::string> remote_base_url;
    std::filesystem::path cache_dir;  // empty: <workdir>/data/raw
    std::filesystem::path vocab_dir;  // empty: <workdir>/vocab
    int fetch_attempts = 3;
    double fetch_backoff_seconds = 1.0;

    std::uint64_t seed = 42;
    std::uint32_t num_train_shards = 256;
    std::uint32_t num_test_shards = 128;
    double frac_test = 0.005;
    unsigned workers = 8;
    MaskingPolicy masking;

    ScheduleSpec schedule;  // total_steps is derived from PRETRAIN.NUM_STEPS
    PretrainArgs pretrain_args;
    EarlyStopPolicy early_stop;
    ValidationCadence validation;

    std::vector<double> learning_rates{1e-5, 3e-5, 5e-5, 8e-5};
    std::vector<std::int64_t> batch_sizes{16, 32};
    std::vector<std::int64_t> epochs{3, 5};
    Hyperparams finetune_base;  // warmup_steps, weight_decay, scheduler
    int finetune_max_seq_length = 128;
    std::vector<std::string> tasks;  // empty: all nine GLUE tasks
    /// target task -> task whose best checkpoint seeds it
    std::map<std::string, std::string> stilt{{"RTE", "MNLI"}, {"MRPC", "MNLI"}, {"STS-B", "MNLI"}};
    unsigned finetune_parallelism = 1;
    bool include_ax = false;

    double min_free_disk_gb = 1.0;
};

/// Sets the peak learning rate from a named preset ("bert-base-benchmark", "bert-large-benchmark").
void apply_schedule_preset(PipelineOptions& options, std::string_view preset);

/// Canonical (key, value) description, recorded in the report and in stage fingerprints.
std::vector<std::pair<std::string, std::string>> describe_options(const PipelineOptions& options);

struct Workspace {
    std::filesystem::path root;

    std::filesystem::path processed_root() const { return root / "data" / "processed"; }
    std::filesystem::path processed(const std::string& id) const { return processed_root() / id; }
    std::filesystem::path latest_pointer() const { return processed_root() / "LATEST"; }
    std::filesystem::path staging() const { return root / "data" / "staging"; }
    std::filesystem::path pretrain_checkpoint(const std::string& id) const { return root / "saved_models" / "pretrain" / id; }
    std::filesystem::path log_root() const { return root / "log"; }
    std::filesystem::path output_root() const { return root / "output"; }
    std::filesystem::path pretrain_logs(const std::string& id) const { return log_root() / "pretrain" / id; }
    std::filesystem::path finetune_logs(const std::string& id) const { return log_root() / "finetune" / id; }
    std::filesystem::path finetune_outputs(const std::string& id) const { return output_root() / "finetune" / id; }
    std::filesystem::path collect_logs(const std::string& id) const { return log_root() / "collect" / id; }
    std::filesystem::path submission_dir(const std::string& id) const { return root / "output_test_translated" / "finetune" / id; }
    std::filesystem::path sentinel(Stage s) const { return root / ".xbert" / "stages" / (std::string(stage_name(s)) + ".done"); }
    std::filesystem::path report_path() const { return log_root() / "pipeline_report.json"; }
};

struct StagePlan {
    std::vector<std::pair<Stage, bool>> stages;  // fixed order; env_check always enabled
    std::optional<std::string> dataset_id;       // known up front when overridden or already produced
    std::filesystem::path log_root;
    std::filesystem::path output_root;

    bool enabled(Stage s) const;
};

/// Validates the config (ConfigError on violations) and checks the outputs required from
/// disabled producer stages (PipelineError naming both stages).
StagePlan plan_stages(const PipelineConfig& config, const PipelineOptions& options);

/// Decimal rendering used in generated command lines: "1e-3", "0.06", "24.0".
std::string format_flag_value(double v);

TrainerJob build_pretrain_job(const PipelineConfig& config, const PipelineOptions& options, const std::string& dataset_id);

TrainerJob build_finetune_job(const PipelineConfig& config, const PipelineOptions& options, const std::string& dataset_id,
                              const std::string& task, const Hyperparams& hp, const std::filesystem::path& init_checkpoint);

struct FinetunePlan {
    std::vector<TrainerJob> jobs;                           // grouped by task in task_order
    std::vector<std::string> task_order;                    // parents before children
    std::map<std::string, std::string> parent;              // effective STILT edges
    std::vector<std::vector<std::string>> waves;            // tasks runnable together
};

/// Cross product of the grid for every task, with STILT jobs depending on their parent task.
/// A STILT edge whose parent is not among `tasks` is dropped. Throws ConfigError for an
/// unknown task, an empty grid, or a cyclic STILT chain.
FinetunePlan finetune_search(const PipelineConfig& config, const PipelineOptions& options, const std::string& dataset_id,
                             const std::filesystem::path& checkpoint, const std::vector<std::string>& tasks);

struct StageReport {
    std::string name;
    bool enabled = false;
    std::string status;  // completed | skipped_disabled | skipped_done | failed | not_reached
    double seconds = 0;
    std::map<std::string, std::string> artifacts;
    std::string message;
};

struct PipelineReport {
    std::string dataset_id;
    std::vector<StageReport> stages;
    std::optional<std::filesystem::path> submission_zip;
    std::filesystem::path report_path;

    const StageReport& stage(Stage s) const;
    /// True when no stage did any work.
    bool all_skipped() const;
};

std::unique_ptr<TrainerAdapter> make_trainer(const PipelineOptions& options);

/// Runs every enabled stage in order. On failure the report is still written and
/// PipelineError names the failing stage.
PipelineReport run_pipeline(const PipelineConfig& config, const PipelineOptions& options, TrainerAdapter* trainer = nullptr);

}  // namespace xbert
