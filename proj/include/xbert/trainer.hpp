#pragma once

// Trainer adapters. Real GPU training is out of scope: the simulation trainer
// stands in for it with a closed-form loss model, and the external trainer
// launches any command that honors the RESULT.tsv contract:
//
//   the command gets the job argv, must exit 0, and must write
//   `<output_dir>/RESULT.tsv` with `eval_loss\t<float>` and `checkpoint\t<path>`
//   (finetune jobs may add `final_val_metric\t<metric>\t<float>`).

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "xbert/hyperparams.hpp"
#include "xbert/lr_schedule.hpp"

namespace xbert {

enum class JobKind { pretrain, finetune };
std::string_view to_string(JobKind kind) noexcept;

struct EarlyStopPolicy {
    bool enabled = true;
    double time_minutes = 180;
    double eval_loss = 6;
};

enum class StopDecision { continue_training, stop };

/// STOP iff the policy is enabled, elapsed_minutes >= time gate and eval_loss > loss gate.
/// Elapsed time is measured from the start of the run.
StopDecision check_early_stop(double elapsed_minutes, double eval_loss, const EarlyStopPolicy& policy) noexcept;

/// When validation runs. One "epoch" of the simulated run is 1% of its steps.
struct ValidationCadence {
    double begin_proportion = 0.05;
    double end_proportion = 0.01;
    std::int64_t epochs = 3;
    std::int64_t epochs_begin = 1;
    std::int64_t epochs_end = 1;

    static std::int64_t epoch_steps(std::int64_t overall_steps) noexcept;
    /// Whether validation follows the step that brings the count to `completed` (1-based).
    bool due(std::int64_t completed, std::int64_t overall_steps) const noexcept;
};

struct TrainerJob {
    JobKind kind = JobKind::pretrain;
    std::string name;
    std::vector<std::string> argv;  // full command line, program first
    std::optional<std::string> task;
    Hyperparams hyperparams;
    /// Task whose best checkpoint seeds this finetune job (STILT).
    std::optional<std::string> stilt_parent;
    std::filesystem::path output_dir;
    std::filesystem::path log_dir;
    /// Finetune: checkpoint to start from.
    std::filesystem::path init_checkpoint;
    /// Pretrain: processed dataset directory (holds instances/META.yaml).
    std::filesystem::path dataset_dir;
    ScheduleSpec schedule;
    std::int64_t overall_steps = 0;
    EarlyStopPolicy early_stop;
    ValidationCadence validation;
    std::uint64_t seed = 42;
};

struct RunOutcome {
    double final_eval_loss = 0;
    double wall_seconds = 0;
    std::filesystem::path checkpoint;
    std::filesystem::path step_log;
    bool early_stopped = false;
    std::int64_t steps_completed = 0;
    double lr_sum = 0;
    std::optional<double> val_metric;
    std::string metric_name;
};

class TrainerAdapter {
public:
    virtual ~TrainerAdapter() = default;
    virtual std::string name() const = 0;
    /// Must be safe to call concurrently for independent jobs.
    virtual RunOutcome run(const TrainerJob& job) = 0;
};

/// Synthetic loss L = l0 * exp(-c * sum(lr)) + l_inf.
struct LossModel {
    double l0 = 10.0;
    double c = 0.5;
    double l_inf = 1.5;
    double operator()(double lr_sum) const noexcept;
};

struct SimulationOptions {
    LossModel loss;
    /// Simulated minutes per step; <= 0 maps the whole run onto 24 hours.
    double minutes_per_step = 0;
    /// Rows per synthetic test-prediction file.
    std::uint32_t test_rows = 64;
};

class SimulationTrainer : public TrainerAdapter {
public:
    explicit SimulationTrainer(SimulationOptions options = {}) : options_(options) {}
    std::string name() const override { return "simulation"; }
    RunOutcome run(const TrainerJob& job) override;

    const SimulationOptions& options() const noexcept { return options_; }

private:
    RunOutcome pretrain(const TrainerJob& job) const;
    RunOutcome finetune(const TrainerJob& job) const;

    SimulationOptions options_;
};

/// Runs job.argv as a child process with stdout/stderr captured in job.log_dir.
class ExternalTrainer : public TrainerAdapter {
public:
    std::string name() const override { return "external"; }
    RunOutcome run(const TrainerJob& job) override;
};

/// Reads `eval_loss`, `checkpoint` and the optional `final_val_metric` line. Throws PipelineError.
RunOutcome read_result_tsv(const std::filesystem::path& path);

/// Searches PATH (or checks the path itself when it contains '/').
std::optional<std::filesystem::path> find_executable(std::string_view program);

}  // namespace xbert
