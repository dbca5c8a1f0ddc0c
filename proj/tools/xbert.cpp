// Command-line front end: full pipeline runs, single stages, schedule traces,
// config inspection and masking statistics.

#include <algorithm>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <fmt/format.h>

#include "xbert/config.hpp"
#include "xbert/error.hpp"
#include "xbert/instances.hpp"
#include "xbert/lr_schedule.hpp"
#include "xbert/orchestrator.hpp"
#include "xbert/tokenizer.hpp"

namespace fs = std::filesystem;
using namespace xbert;

namespace {

std::vector<std::string> split_words(const std::string& s, char sep) {
    std::vector<std::string> out;
    std::string cur;
    std::istringstream in(s);
    while (std::getline(in, cur, sep)) {
        if (!cur.empty()) {
            out.push_back(cur);
        }
    }
    return out;
}

struct PipelineFlags {
    std::string config_path;
    PipelineOptions options;
    std::string trainer = "simulation";
    std::string pretrain_command;
    std::string finetune_command;
    std::string remote_base_url;
    std::string schedule_kind = "esd";
    std::string schedule_preset;
    std::optional<double> eta0;
    std::string tasks;
    bool no_early_stop = false;

    void add_to(CLI::App* app) {
        app->add_option("-c,--config", config_path, "pipeline YAML")->required()->check(CLI::ExistingFile);
        app->add_option("-w,--workdir", options.workdir, "workspace directory")->capture_default_str();
        app->add_option("--trainer", trainer, "simulation | external")->check(CLI::IsMember({"simulation", "external"}))->capture_default_str();
        app->add_option("--pretrain-command", pretrain_command, "external pretraining program prefix (space separated)");
        app->add_option("--finetune-command", finetune_command, "external finetuning program prefix (space separated)");
        app->add_option("--vocab-dir", options.vocab_dir, "directory searched for TOKENIZER.NAME_OR_PATH");
        app->add_option("--cache-dir", options.cache_dir, "download cache for remote datasets");
        app->add_option("--remote-base-url", remote_base_url, "http endpoint serving remote datasets");
        app->add_option("--seed", options.seed)->capture_default_str();
        app->add_option("--train-shards", options.num_train_shards)->capture_default_str();
        app->add_option("--test-shards", options.num_test_shards)->capture_default_str();
        app->add_option("--frac-test", options.frac_test)->capture_default_str();
        app->add_option("--workers", options.workers)->capture_default_str();
        app->add_option("--dup-factor", options.masking.dup_factor)->capture_default_str();
        app->add_option("--max-seq-length", options.masking.max_seq_length)->capture_default_str();
        app->add_option("--masked-lm-prob", options.masking.masked_lm_prob)->capture_default_str();
        app->add_option("--max-predictions-per-seq", options.masking.max_predictions_per_seq)->capture_default_str();
        app->add_option("--schedule-kind", schedule_kind, "esd | linear")->check(CLI::IsMember({"esd", "linear"}))->capture_default_str();
        app->add_option("--schedule-preset", schedule_preset, "bert-base-benchmark | bert-large-benchmark");
        app->add_option("--eta0", eta0, "peak learning rate");
        app->add_option("--tasks", tasks, "comma separated GLUE tasks (default: all nine)");
        app->add_option("--parallelism", options.finetune_parallelism, "concurrent finetune jobs")->capture_default_str();
        app->add_flag("--include-ax", options.include_ax, "add the diagnostic AX predictions to the zip");
        app->add_flag("--no-early-stop", no_early_stop, "disable early stopping of pretraining");
    }

    PipelineOptions resolve() {
        PipelineOptions o = options;
        o.trainer = trainer == "external" ? TrainerKind::external : TrainerKind::simulation;
        if (!pretrain_command.empty()) o.pretrain_command = split_words(pretrain_command, ' ');
        if (!finetune_command.empty()) o.finetune_command = split_words(finetune_command, ' ');
        if (!remote_base_url.empty()) o.remote_base_url = remote_base_url;
        o.schedule.kind = parse_schedule_kind(schedule_kind);
        if (!schedule_preset.empty()) apply_schedule_preset(o, schedule_preset);
        if (eta0) o.schedule.eta0 = *eta0;
        if (!tasks.empty()) o.tasks = split_words(tasks, ',');
        if (no_early_stop) o.early_stop.enabled = false;
        return o;
    }
};

void print_report(const PipelineReport& r) {
    for (const auto& s : r.stages) {
        std::cout << fmt::format("{:<10} {:<17} {:8.2f}s{}\n", s.name, s.status, s.seconds, s.message.empty() ? "" : "  " + s.message);
    }
    if (!r.dataset_id.empty()) {
        std::cout << "dataset_id " << r.dataset_id << '\n';
    }
    if (r.submission_zip) {
        std::cout << "submission " << r.submission_zip->string() << '\n';
    }
    std::cout << "report " << r.report_path.string() << '\n';
}

int run_stages(PipelineFlags& flags, std::optional<Stage> only) {
    PipelineConfig config = load_config(flags.config_path);
    if (only) {
        config.dataset.enabled = *only == Stage::dataset;
        config.pretrain.enabled = *only == Stage::pretrain;
        config.finetune.enabled = *only == Stage::finetune;
        config.result_collection.enabled = *only == Stage::collect;
    }
    print_report(run_pipeline(config, flags.resolve()));
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Pretraining data, schedule and GLUE pipeline toolkit"};
    app.require_subcommand(1);

    PipelineFlags run_flags;
    auto* run = app.add_subcommand("run", "run every enabled stage of a pipeline config");
    run_flags.add_to(run);

    std::vector<std::pair<Stage, PipelineFlags>> stage_flags;
    stage_flags.reserve(4);
    std::vector<std::pair<CLI::App*, std::size_t>> stage_cmds;
    for (Stage s : {Stage::dataset, Stage::pretrain, Stage::finetune, Stage::collect}) {
        stage_flags.emplace_back(s, PipelineFlags{});
        auto* cmd = app.add_subcommand(std::string(stage_name(s)), fmt::format("run only the {} stage (after env_check)", stage_name(s)));
        stage_flags.back().second.add_to(cmd);
        stage_cmds.emplace_back(cmd, stage_flags.size() - 1);
    }

    auto* schedule = app.add_subcommand("schedule", "learning-rate schedule tools");
    schedule->require_subcommand(1);
    auto* trace = schedule->add_subcommand("trace", "write the per-step learning rate as TSV");
    std::string kind = "esd", preset, out = "-";
    double eta0 = ScheduleSpec{}.eta0, warmup = ScheduleSpec{}.warmup_proportion;
    std::optional<double> r;
    std::uint32_t ell = ScheduleSpec{}.ell;
    std::int64_t steps = 0;
    trace->add_option("--kind", kind, "esd | linear")->check(CLI::IsMember({"esd", "linear"}))->capture_default_str();
    trace->add_option("--preset", preset, "bert-base-benchmark | bert-large-benchmark (sets eta0 and steps)");
    trace->add_option("--eta0", eta0)->capture_default_str();
    trace->add_option("--r", r, "decay ratio in (0, 1) (default 2^-1/2)");
    trace->add_option("--ell", ell)->capture_default_str();
    trace->add_option("--warmup-proportion", warmup)->capture_default_str();
    trace->add_option("--steps", steps, "overall step budget");
    trace->add_option("-o,--out", out, "output file, '-' for stdout")->capture_default_str();

    auto* cfg = app.add_subcommand("config", "configuration tools");
    cfg->require_subcommand(1);
    auto* cfg_defaults = cfg->add_subcommand("defaults", "print the default configuration");
    auto* cfg_check = cfg->add_subcommand("check", "parse, validate and print a configuration in canonical form");
    std::string check_path;
    cfg_check->add_option("path", check_path)->required()->check(CLI::ExistingFile);

    auto* mask = app.add_subcommand("mask-report", "masking statistics of generated instance files");
    std::string inst_dir, vocab_path;
    mask->add_option("dir", inst_dir, "instances directory")->required()->check(CLI::ExistingDirectory);
    mask->add_option("--vocab", vocab_path, "vocabulary file")->required()->check(CLI::ExistingFile);

    CLI11_PARSE(app, argc, argv);

    try {
        if (run->parsed()) {
            return run_stages(run_flags, std::nullopt);
        }
        for (auto& [cmd, idx] : stage_cmds) {
            if (cmd->parsed()) {
                return run_stages(stage_flags[idx].second, stage_flags[idx].first);
            }
        }
        if (trace->parsed()) {
            ScheduleSpec spec;
            spec.kind = parse_schedule_kind(kind);
            spec.eta0 = eta0;
            spec.ell = ell;
            spec.warmup_proportion = warmup;
            if (r) spec.r = DecayRatio::from_value(*r);
            if (!preset.empty()) {
                const auto p = schedule_preset(preset);
                if (trace->count("--eta0") == 0) spec.eta0 = p.spec.eta0;
                if (steps == 0) steps = p.overall_steps;
            }
            if (steps <= 0) {
                throw ScheduleError("--steps (or --preset) is required");
            }
            emit_trace(spec, steps, out == "-" ? fs::path("/dev/stdout") : fs::path(out));
            return 0;
        }
        if (cfg_defaults->parsed()) {
            std::cout << serialize_config(get_default_config());
            return 0;
        }
        if (cfg_check->parsed()) {
            const auto config = load_config(check_path);
            const auto violations = validate(config);
            for (const auto& v : violations) {
                std::cerr << v.key_path << ": " << v.message << '\n';
            }
            std::cout << serialize_config(config);
            return violations.empty() ? 0 : 2;
        }
        if (mask->parsed()) {
            std::vector<fs::path> files;
            for (const auto& e : fs::recursive_directory_iterator(inst_dir)) {
                if (e.is_regular_file() && e.path().extension() == ".xbi") {
                    files.push_back(e.path());
                }
            }
            std::sort(files.begin(), files.end());
            const auto vocab = load_vocab(vocab_path);
            const auto rep = mask_rate_report(files, vocab.mask_id());
            std::cout << fmt::format("files\t{}\ninstances\t{}\nnon_special_tokens\t{}\nmasked_positions\t{}\n", files.size(), rep.instance_count,
                                     rep.non_special_tokens, rep.masked_positions)
                      << fmt::format("mean_mask_fraction\t{:.6f}\nmask_fraction\t{:.6f}\nrandom_fraction\t{:.6f}\nkeep_fraction\t{:.6f}\n",
                                     rep.mean_mask_fraction(), rep.mask_fraction(), rep.random_fraction(), rep.keep_fraction())
                      << fmt::format("max_masked_per_instance\t{}\n", rep.max_masked_per_instance);
            return 0;
        }
    } catch (const ConfigError& e) {
        std::cerr << "config error";
        if (!e.key_path().empty()) {
            std::cerr << " [" << e.key_path() << "]";
        }
        std::cerr << ": " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
