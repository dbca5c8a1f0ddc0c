#include "xbert/orchestrator.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <chrono>
#include <fstream>
#include <iostream>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include <fmt/format.h>
#include <json.hpp>

#include "xbert/corpus.hpp"
#include "xbert/digest.hpp"
#include "xbert/error.hpp"
#include "xbert/glue.hpp"
#include "xbert/results.hpp"
#include "xbert/shard.hpp"
#include "xbert/tokenizer.hpp"

namespace xbert {

namespace fs = std::filesystem;
using json = nlohmann::json;

std::string_view stage_name(Stage s) noexcept {
    switch (s) {
        case Stage::env_check: return "env_check";
        case Stage::dataset: return "dataset";
        case Stage::pretrain: return "pretrain";
        case Stage::finetune: return "finetune";
        case Stage::collect: return "collect";
    }
    return "?";
}

void apply_schedule_preset(PipelineOptions& options, std::string_view preset) {
    options.schedule.eta0 = schedule_preset(preset).spec.eta0;
}

std::string format_flag_value(double v) {
    char buf[64];
    if (v != 0 && std::abs(v) < 1e-2) {
        auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v, std::chars_format::scientific);
        std::string s(buf, end);  // e.g. "1e-03"
        const auto e = s.find('e');
        std::size_t digits = e + 2;
        while (digits + 1 < s.size() && s[digits] == '0') {
            ++digits;
        }
        return s.substr(0, e + 2) + s.substr(digits);
    }
    auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v, std::chars_format::fixed);
    std::string s(buf, end);
    if (s.find('.') == std::string::npos) {
        s += ".0";
    }
    return s;
}

namespace {

std::string join(const std::vector<std::string>& v, std::string_view sep) {
    std::string out;
    for (std::size_t i = 0; i < v.size(); ++i) {
        out += (i ? std::string(sep) : "") + v[i];
    }
    return out;
}

std::vector<std::string> effective_tasks(const PipelineOptions& options) {
    return options.tasks.empty() ? glue_task_names() : options.tasks;
}

std::string read_text(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    std::ostringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

void write_text(const fs::path& p, std::string_view text) {
    fs::create_directories(p.parent_path());
    const fs::path tmp = p.string() + ".tmp";
    {
        std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
        f.write(text.data(), static_cast<std::streamsize>(text.size()));
        if (!f) {
            throw PipelineError("I/O error writing " + p.string());
        }
    }
    fs::rename(tmp, p);
}

std::string trim(std::string s) {
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) {
        s.pop_back();
    }
    return s;
}

}  // namespace

std::vector<std::pair<std::string, std::string>> describe_options(const PipelineOptions& o) {
    std::vector<std::string> lrs, bss, eps, stilt;
    for (double v : o.learning_rates) lrs.push_back(fmt::format("{}", v));
    for (auto v : o.batch_sizes) bss.push_back(fmt::format("{}", v));
    for (auto v : o.epochs) eps.push_back(fmt::format("{}", v));
    for (const auto& [child, parent] : o.stilt) stilt.push_back(child + "<-" + parent);
    return {
        {"trainer", o.trainer == TrainerKind::simulation ? "simulation" : "external"},
        {"pretrain_command", join(o.pretrain_command, " ")},
        {"finetune_command", join(o.finetune_command, " ")},
        {"remote_base_url", o.remote_base_url.value_or("")},
        {"seed", fmt::format("{}", o.seed)},
        {"num_train_shards", fmt::format("{}", o.num_train_shards)},
        {"num_test_shards", fmt::format("{}", o.num_test_shards)},
        {"frac_test", fmt::format("{}", o.frac_test)},
        {"masked_lm_prob", fmt::format("{}", o.masking.masked_lm_prob)},
        {"max_predictions_per_seq", fmt::format("{}", o.masking.max_predictions_per_seq)},
        {"max_seq_length", fmt::format("{}", o.masking.max_seq_length)},
        {"dup_factor", fmt::format("{}", o.masking.dup_factor)},
        {"do_lower_case", o.masking.do_lower_case ? "true" : "false"},
        {"schedule_kind", std::string(to_string(o.schedule.kind))},
        {"eta0", fmt::format("{}", o.schedule.eta0)},
        {"esd_r", fmt::format("{:.17g}", o.schedule.r.value())},
        {"esd_ell", fmt::format("{}", o.schedule.ell)},
        {"warmup_proportion", fmt::format("{}", o.schedule.warmup_proportion)},
        {"early_stop", o.early_stop.enabled ? fmt::format("{}min/{}", o.early_stop.time_minutes, o.early_stop.eval_loss) : "off"},
        {"grid_learning_rate", join(lrs, ",")},
        {"grid_batch_size", join(bss, ",")},
        {"grid_epochs", join(eps, ",")},
        {"tasks", join(effective_tasks(o), ",")},
        {"stilt", join(stilt, ",")},
        {"include_ax", o.include_ax ? "true" : "false"},
        {"sim_loss_model", fmt::format("{}*exp(-{}*sum_lr)+{}", o.simulation.loss.l0, o.simulation.loss.c, o.simulation.loss.l_inf)},
    };
}

bool StagePlan::enabled(Stage s) const {
    for (const auto& [stage, on] : stages) {
        if (stage == s) {
            return on;
        }
    }
    return false;
}

namespace {

/// Output a stage needs from its producer, when that producer is disabled.
void check_precondition(Stage s, const StagePlan& plan, const Workspace& ws, const std::optional<std::string>& id) {
    Stage producer;
    std::string what;
    fs::path expected;
    switch (s) {
        case Stage::pretrain:
            producer = Stage::dataset;
            what = "the processed dataset";
            if (id) expected = ws.processed(*id) / "instances" / "META.yaml";
            break;
        case Stage::finetune:
            producer = Stage::pretrain;
            what = "a pretrained checkpoint";
            if (id) expected = ws.pretrain_checkpoint(*id);
            break;
        case Stage::collect:
            producer = Stage::finetune;
            what = "finetune logs";
            if (id) expected = ws.finetune_logs(*id);
            break;
        default:
            return;
    }
    if (!plan.enabled(s) || plan.enabled(producer)) {
        return;
    }
    if (!id || !fs::exists(expected)) {
        throw PipelineError(fmt::format("stage '{}' needs {} produced by stage '{}', which is disabled; {}", stage_name(s), what,
                                        stage_name(producer),
                                        id ? "missing " + expected.string() : std::string("no dataset id is known (set DATASET.ID or run the dataset stage)")));
    }
}

std::optional<std::string> known_dataset_id(const PipelineConfig& config, const Workspace& ws) {
    if (config.dataset.id) {
        return config.dataset.id;
    }
    if (!config.dataset.enabled && fs::is_regular_file(ws.latest_pointer())) {
        auto id = trim(read_text(ws.latest_pointer()));
        if (!id.empty()) {
            return id;
        }
    }
    return std::nullopt;
}

}  // namespace

StagePlan plan_stages(const PipelineConfig& config, const PipelineOptions& options) {
    const auto violations = validate(config);
    if (!violations.empty()) {
        std::string msg = "invalid configuration:";
        for (const auto& v : violations) {
            msg += fmt::format(" {}: {};", v.key_path, v.message);
        }
        throw ConfigError(violations.front().key_path, msg);
    }
    for (const auto& t : effective_tasks(options)) {
        glue_task(t);
    }
    const Workspace ws{options.workdir};
    StagePlan plan;
    plan.stages = {{Stage::env_check, true},
                   {Stage::dataset, config.dataset.enabled},
                   {Stage::pretrain, config.pretrain.enabled},
                   {Stage::finetune, config.finetune.enabled},
                   {Stage::collect, config.result_collection.enabled}};
    plan.log_root = ws.log_root();
    plan.output_root = ws.output_root();
    plan.dataset_id = known_dataset_id(config, ws);
    // With the dataset stage enabled and no override, the id is only known after it runs.
    const bool id_final = !config.dataset.enabled || config.dataset.id.has_value();
    for (Stage s : {Stage::pretrain, Stage::finetune, Stage::collect}) {
        if (id_final) {
            check_precondition(s, plan, ws, plan.dataset_id);
        }
    }
    return plan;
}

namespace {

std::vector<std::string> command_prefix(const std::vector<std::string>& cmd, const PipelineConfig& config) {
    std::vector<std::string> out;
    for (auto a : cmd) {
        const auto pos = a.find("{num_gpus}");
        if (pos != std::string::npos) {
            a.replace(pos, 10, std::to_string(config.system.num_gpus));
        }
        out.push_back(std::move(a));
    }
    return out;
}

}  // namespace

TrainerJob build_pretrain_job(const PipelineConfig& config, const PipelineOptions& options, const std::string& dataset_id) {
    const Workspace ws{options.workdir};
    const auto& a = options.pretrain_args;
    TrainerJob job;
    job.kind = JobKind::pretrain;
    job.name = "pretrain-" + dataset_id;
    job.dataset_dir = ws.processed(dataset_id);
    job.output_dir = ws.pretrain_checkpoint(dataset_id);
    job.log_dir = ws.pretrain_logs(dataset_id);
    job.schedule = options.schedule;
    job.overall_steps = config.pretrain.num_steps;
    job.early_stop = options.early_stop;
    job.validation = options.validation;
    job.seed = options.seed;

    auto& v = job.argv;
    v = command_prefix(options.pretrain_command, config);
    auto flag = [&](std::string name, std::string value) {
        v.push_back("--" + std::move(name));
        v.push_back(std::move(value));
    };
    auto sw = [&](std::string name) { v.push_back("--" + std::move(name)); };
    const auto num = [](double d) { return format_flag_value(d); };

    flag("dataset_path", (job.dataset_dir / "instances").string());
    flag("output_dir", job.output_dir.string());
    flag("model_type", a.model_type);
    flag("tokenizer_name", config.tokenizer.name_or_path);
    flag("hidden_act", a.hidden_act);
    flag("hidden_size", std::to_string(a.hidden_size));
    flag("num_hidden_layers", std::to_string(a.num_hidden_layers));
    flag("num_attention_heads", std::to_string(a.num_attention_heads));
    flag("intermediate_size", std::to_string(a.intermediate_size));
    flag("hidden_dropout_prob", num(a.hidden_dropout_prob));
    flag("attention_probs_dropout_prob", num(a.attention_probs_dropout_prob));
    flag("encoder_ln_mode", a.encoder_ln_mode);
    flag("lr", num(options.schedule.eta0));
    flag("train_batch_size", std::to_string(a.train_batch_size));
    flag("train_micro_batch_size_per_gpu", std::to_string(a.train_micro_batch_size_per_gpu));
    if (options.schedule.kind == ScheduleKind::linear) {
        flag("lr_schedule", "time");
        flag("curve", "linear");
    } else {
        flag("lr_schedule", "step");
        flag("curve", "esd");
        flag("esd_ratio", fmt::format("{:.17g}", options.schedule.r.value()));
        flag("esd_ell", std::to_string(options.schedule.ell));
    }
    flag("warmup_proportion", num(options.schedule.warmup_proportion));
    flag("gradient_clipping", num(a.gradient_clipping));
    flag("optimizer_type", a.optimizer_type);
    flag("weight_decay", num(a.weight_decay));
    flag("adam_beta1", num(a.adam_beta1));
    flag("adam_beta2", num(a.adam_beta2));
    flag("adam_eps", num(a.adam_eps));
    flag("total_training_time", num(a.total_training_time));
    flag("early_exit_time_marker", num(a.early_exit_time_marker));
    flag("print_steps", std::to_string(a.print_steps));
    flag("num_epochs_between_checkpoints", std::to_string(a.num_epochs_between_checkpoints));
    flag("job_name", a.job_name);
    flag("project_name", a.project_name);
    flag("validation_epochs", std::to_string(options.validation.epochs));
    flag("validation_epochs_begin", std::to_string(options.validation.epochs_begin));
    flag("validation_epochs_end", std::to_string(options.validation.epochs_end));
    flag("validation_begin_proportion", num(options.validation.begin_proportion));
    flag("validation_end_proportion", num(options.validation.end_proportion));
    flag("validation_micro_batch", std::to_string(a.validation_micro_batch));
    sw("deepspeed");
    flag("data_loader_type", a.data_loader_type);
    sw("do_validation");
    if (options.early_stop.enabled) {
        sw("use_early_stopping");
        flag("early_stop_time", fmt::format("{}", options.early_stop.time_minutes));
        flag("early_stop_eval_loss", fmt::format("{}", options.early_stop.eval_loss));
    }
    flag("seed", std::to_string(options.seed));
    if (a.fp16) {
        sw("fp16");
    }
    flag("max_steps", std::to_string(config.pretrain.num_steps));
    return job;
}

TrainerJob build_finetune_job(const PipelineConfig& config, const PipelineOptions& options, const std::string& dataset_id,
                              const std::string& task, const Hyperparams& hp, const fs::path& init_checkpoint) {
    const Workspace ws{options.workdir};
    TrainerJob job;
    job.kind = JobKind::finetune;
    job.task = task;
    job.hyperparams = hp;
    job.name = task + "/" + hp.run_name();
    job.init_checkpoint = init_checkpoint;
    job.output_dir = ws.finetune_outputs(dataset_id) / task / hp.run_name();
    job.log_dir = ws.finetune_logs(dataset_id) / task / hp.run_name();
    job.seed = options.seed;

    auto& v = job.argv;
    v = command_prefix(options.finetune_command, config);
    auto flag = [&](std::string name, std::string value) {
        v.push_back("--" + std::move(name));
        v.push_back(std::move(value));
    };
    auto sw = [&](std::string name) { v.push_back("--" + std::move(name)); };
    flag("model_name_or_path", init_checkpoint.string());
    flag("task_name", task);
    flag("max_seq_length", std::to_string(options.finetune_max_seq_length));
    flag("output_dir", job.output_dir.string());
    sw("overwrite_output_dir");
    sw("do_train");
    sw("do_eval");
    sw("do_predict");
    flag("evaluation_strategy", "steps");
    flag("per_device_train_batch_size", std::to_string(hp.batch_size));
    flag("gradient_accumulation_steps", "1");
    flag("per_device_eval_batch_size", std::to_string(hp.batch_size));
    flag("learning_rate", format_flag_value(hp.learning_rate));
    flag("weight_decay", format_flag_value(hp.weight_decay));
    flag("eval_steps", "50");
    flag("max_grad_norm", "1.0");
    flag("num_train_epochs", std::to_string(hp.epochs));
    flag("lr_scheduler_type", hp.scheduler);
    flag("warmup_steps", std::to_string(hp.warmup_steps));
    flag("seed", std::to_string(options.seed));
    return job;
}

FinetunePlan finetune_search(const PipelineConfig& config, const PipelineOptions& options, const std::string& dataset_id,
                             const fs::path& checkpoint, const std::vector<std::string>& tasks) {
    if (options.learning_rates.empty() || options.batch_sizes.empty() || options.epochs.empty()) {
        throw ConfigError("FINETUNE.GRID", "hyperparameter grid is empty");
    }
    if (tasks.empty()) {
        throw ConfigError("FINETUNE.TASKS", "no finetune tasks selected");
    }
    std::set<std::string> selected;
    for (const auto& t : tasks) {
        glue_task(t);
        if (!selected.insert(t).second) {
            throw ConfigError("FINETUNE.TASKS", "task " + t + " listed twice");
        }
    }
    for (const auto& [child, parent] : options.stilt) {
        glue_task(child);
        glue_task(parent);
    }

    FinetunePlan plan;
    for (const auto& [child, parent] : options.stilt) {
        if (selected.contains(child) && selected.contains(parent)) {
            plan.parent[child] = parent;
        }
    }
    // Depth of each task in the STILT forest; a revisit during the walk is a cycle.
    std::map<std::string, int> depth;
    for (const auto& t : tasks) {
        std::vector<std::string> chain{t};
        std::set<std::string> seen{t};
        for (auto it = plan.parent.find(t); it != plan.parent.end(); it = plan.parent.find(it->second)) {
            if (!seen.insert(it->second).second) {
                throw ConfigError("FINETUNE.STILT", "cyclic STILT chain through " + it->second);
            }
            chain.push_back(it->second);
        }
        depth[t] = static_cast<int>(chain.size()) - 1;
    }
    int max_depth = 0;
    for (const auto& [t, d] : depth) {
        max_depth = std::max(max_depth, d);
    }
    plan.waves.resize(static_cast<std::size_t>(max_depth) + 1);
    for (const auto& name : glue_task_names()) {  // canonical order inside a wave
        if (selected.contains(name)) {
            plan.waves[static_cast<std::size_t>(depth[name])].push_back(name);
        }
    }
    for (const auto& wave : plan.waves) {
        for (const auto& t : wave) {
            plan.task_order.push_back(t);
        }
    }

    for (const auto& task : plan.task_order) {
        std::set<std::string> names;
        for (double lr : options.learning_rates) {
            for (auto bs : options.batch_sizes) {
                for (auto ep : options.epochs) {
                    Hyperparams hp = options.finetune_base;
                    hp.learning_rate = lr;
                    hp.batch_size = bs;
                    hp.epochs = ep;
                    if (!names.insert(hp.run_name()).second) {
                        throw ConfigError("FINETUNE.GRID", "duplicate grid point " + hp.run_name());
                    }
                    // STILT children get their real starting checkpoint once the parent grid is done.
                    TrainerJob job = build_finetune_job(config, options, dataset_id, task, hp, checkpoint);
                    if (auto it = plan.parent.find(task); it != plan.parent.end()) {
                        job.stilt_parent = it->second;
                    }
                    plan.jobs.push_back(std::move(job));
                }
            }
        }
    }
    return plan;
}

const StageReport& PipelineReport::stage(Stage s) const {
    for (const auto& r : stages) {
        if (r.name == stage_name(s)) {
            return r;
        }
    }
    throw PipelineError("no report for stage " + std::string(stage_name(s)));
}

bool PipelineReport::all_skipped() const {
    return std::none_of(stages.begin(), stages.end(), [](const StageReport& r) { return r.status == "completed"; });
}

std::unique_ptr<TrainerAdapter> make_trainer(const PipelineOptions& options) {
    if (options.trainer == TrainerKind::external) {
        return std::make_unique<ExternalTrainer>();
    }
    return std::make_unique<SimulationTrainer>(options.simulation);
}

namespace {

using Artifacts = std::map<std::string, std::string>;

struct Runner {
    const PipelineConfig& config;
    const PipelineOptions& options;
    TrainerAdapter& trainer;
    Workspace ws;
    std::string options_text;
    std::optional<std::string> dataset_id;

    // Inputs a stage consumes: enable flags and the tracking key never change a stage's output.
    std::string stage_config_text(Stage s) const {
        PipelineConfig c = config;
        c.dataset.enabled = c.pretrain.enabled = c.finetune.enabled = c.result_collection.enabled = true;
        c.wandb = {};
        if (s == Stage::dataset || s == Stage::env_check) {
            c.pretrain = {};
        }
        return serialize_config(c);
    }

    std::string stage_options_text(Stage s) const {
        static const std::set<std::string> dataset_keys{"seed", "num_train_shards", "num_test_shards", "frac_test", "masked_lm_prob",
                                                        "max_predictions_per_seq", "max_seq_length", "dup_factor", "do_lower_case"};
        static const std::set<std::string> pretrain_keys{"trainer", "pretrain_command", "seed", "schedule_kind", "eta0", "esd_r",
                                                         "esd_ell", "warmup_proportion", "early_stop", "sim_loss_model"};
        static const std::set<std::string> finetune_keys{"trainer", "finetune_command", "seed", "grid_learning_rate", "grid_batch_size",
                                                         "grid_epochs", "tasks", "stilt"};
        static const std::set<std::string> collect_keys{"tasks", "include_ax"};
        const std::set<std::string>* keys = nullptr;
        switch (s) {
            case Stage::env_check: return options_text;
            case Stage::dataset: keys = &dataset_keys; break;
            case Stage::pretrain: keys = &pretrain_keys; break;
            case Stage::finetune: keys = &finetune_keys; break;
            case Stage::collect: keys = &collect_keys; break;
        }
        std::string out;
        for (const auto& [k, v] : describe_options(options)) {
            if (keys->contains(k)) {
                out += k + "=" + v + "\n";
            }
        }
        return out;
    }

    std::string fingerprint(Stage s) const {
        Sha256 h;
        h.update(stage_name(s));
        h.update("\n");
        h.update(stage_config_text(s));
        h.update(stage_options_text(s));
        if (s != Stage::dataset && s != Stage::env_check) {
            h.update("dataset_id=" + dataset_id.value_or(""));
        }
        return to_hex(h.finish());
    }

    std::optional<json> completed_sentinel(Stage s) const {
        const fs::path p = ws.sentinel(s);
        if (!fs::is_regular_file(p)) {
            return std::nullopt;
        }
        try {
            json j = json::parse(read_text(p));
            if (j.value("fingerprint", "") == fingerprint(s)) {
                return j;
            }
        } catch (const json::exception&) {
        }
        return std::nullopt;
    }

    void write_sentinel(Stage s, const Artifacts& artifacts) const {
        json j;
        j["fingerprint"] = fingerprint(s);
        j["dataset_id"] = dataset_id.value_or("");
        j["artifacts"] = artifacts;
        write_text(ws.sentinel(s), j.dump(2) + "\n");
    }

    Artifacts env_check() {
        for (const auto& d : {ws.root / "data", ws.log_root(), ws.output_root(), ws.root / "saved_models", ws.sentinel(Stage::env_check).parent_path()}) {
            fs::create_directories(d);
            const fs::path probe = d / ".write_probe";
            {
                std::ofstream f(probe);
                f << "ok";
                if (!f) {
                    throw PipelineError(d.string() + " is not writable");
                }
            }
            fs::remove(probe);
        }
        const auto space = fs::space(ws.root);
        const double free_gb = static_cast<double>(space.available) / static_cast<double>(kGiB);
        if (free_gb < options.min_free_disk_gb) {
            throw PipelineError(fmt::format("only {:.2f} GiB free under {}, need {}", free_gb, ws.root.string(), options.min_free_disk_gb));
        }
        Artifacts a{{"free_disk_gb", fmt::format("{:.2f}", free_gb)}, {"trainer", trainer.name()}};
        if (options.trainer == TrainerKind::external) {
            auto need = [&](const std::vector<std::string>& cmd, Stage s) {
                if (!cmd.empty() && (s == Stage::pretrain ? config.pretrain.enabled : config.finetune.enabled)) {
                    const auto exe = find_executable(cmd.front());
                    if (!exe) {
                        throw PipelineError(fmt::format("external trainer '{}' for stage '{}' not found", cmd.front(), stage_name(s)));
                    }
                    a[std::string(stage_name(s)) + "_command"] = exe->string();
                }
            };
            need(options.pretrain_command, Stage::pretrain);
            need(options.finetune_command, Stage::finetune);
        }
        if (config.dataset.enabled) {
            a["vocab"] = resolve_vocab(config.tokenizer.name_or_path, vocab_dir()).string();
        }
        return a;
    }

    fs::path vocab_dir() const { return options.vocab_dir.empty() ? ws.root / "vocab" : options.vocab_dir; }
    fs::path cache_dir() const { return options.cache_dir.empty() ? ws.root / "data" / "raw" : options.cache_dir; }

    Artifacts dataset() {
        const Vocabulary vocab = load_vocab(resolve_vocab(config.tokenizer.name_or_path, vocab_dir()));
        const auto sources = corpus_sources(config.dataset);
        std::size_t requests = 0;
        for (const auto& src : sources) {
            if (src.kind != SourceKind::remote_dataset) {
                continue;
            }
            for (int attempt = 1;; ++attempt) {
                try {
                    FetchStats stats;
                    fetch_remote(src.remote, cache_dir(), options.remote_base_url, &stats);
                    requests += stats.http_requests;
                    break;
                } catch (const FetchError& e) {
                    if (!e.retryable() || attempt >= options.fetch_attempts) {
                        throw;
                    }
                    std::this_thread::sleep_for(std::chrono::duration<double>(options.fetch_backoff_seconds * attempt));
                }
            }
        }
        auto files = list_corpus_files(sources, cache_dir());
        if (files.empty()) {
            throw PipelineError("the configured corpus has no files");
        }

        const fs::path staging = ws.staging();
        fs::remove_all(staging);
        fs::create_directories(staging);
        ShardPlan plan;
        plan.num_train_shards = options.num_train_shards;
        plan.num_test_shards = options.num_test_shards;
        plan.frac_test = options.frac_test;
        plan.max_memory_bytes = ShardPlan::budget_from_gb(config.system.max_memory_in_gb);
        plan.seed = options.seed;
        plan.check();

        CorpusReader reader(std::move(files), options.seed);
        const ShardResult sharded =
            shuffle_and_shard([&](DocumentRecord& d) { return reader.next(d); }, plan, staging / "spill", staging / "shards", options.workers);
        if (sharded.stats.documents == 0) {
            throw PipelineError("the configured corpus has no documents");
        }
        fs::remove_all(staging / "spill");
        const std::string id = xbert::dataset_id(sharded.shards, config.dataset.id);

        const fs::path final_dir = ws.processed(id);
        fs::remove_all(final_dir);
        fs::create_directories(final_dir.parent_path());
        fs::rename(staging, final_dir);
        const auto shards = read_manifest(final_dir / "shards");

        MaskingPolicy policy = options.masking;
        policy.seed = options.seed;
        const auto inst = generate_instances(shards, policy, vocab, final_dir / "instances", options.workers, id);
        write_text(ws.latest_pointer(), id + "\n");
        dataset_id = id;
        return {{"dataset_id", id},
                {"processed_dir", final_dir.string()},
                {"documents", std::to_string(sharded.stats.documents)},
                {"text_bytes", std::to_string(sharded.stats.text_bytes)},
                {"peak_accounted_bytes", std::to_string(sharded.stats.peak_accounted_bytes)},
                {"spill_events", std::to_string(sharded.stats.spill_events)},
                {"instances", std::to_string(inst.instance_count)},
                {"http_requests", std::to_string(requests)}};
    }

    Artifacts pretrain() {
        const TrainerJob job = build_pretrain_job(config, options, *dataset_id);
        fs::remove_all(job.log_dir);
        const RunOutcome out = trainer.run(job);
        write_text(job.log_dir / "command.txt", join(job.argv, " ") + "\n");
        return {{"checkpoint", out.checkpoint.string()},
                {"final_eval_loss", fmt::format("{:.17g}", out.final_eval_loss)},
                {"lr_sum", fmt::format("{:.17g}", out.lr_sum)},
                {"steps", std::to_string(out.steps_completed)},
                {"early_stopped", out.early_stopped ? "true" : "false"},
                {"log_dir", job.log_dir.string()}};
    }

    Artifacts finetune(const fs::path& checkpoint) {
        const auto tasks = effective_tasks(options);
        FinetunePlan plan = finetune_search(config, options, *dataset_id, checkpoint, tasks);
        fs::remove_all(ws.finetune_logs(*dataset_id));
        fs::remove_all(ws.finetune_outputs(*dataset_id));

        std::map<std::string, RunResult> best;
        std::size_t runs = 0;
        for (const auto& wave : plan.waves) {
            std::vector<TrainerJob*> jobs;
            for (auto& job : plan.jobs) {
                if (std::find(wave.begin(), wave.end(), *job.task) == wave.end()) {
                    continue;
                }
                if (job.stilt_parent) {
                    const auto& parent = best.at(*job.stilt_parent);
                    job = [&] {
                        TrainerJob j = build_finetune_job(config, options, *dataset_id, *job.task, job.hyperparams, parent.predictions_dir);
                        j.stilt_parent = job.stilt_parent;
                        return j;
                    }();
                }
                jobs.push_back(&job);
            }
            std::vector<std::optional<RunOutcome>> outcomes(jobs.size());
            std::atomic<std::size_t> next{0};
            std::mutex err_mu;
            std::optional<std::string> error;
            auto worker = [&] {
                for (std::size_t i; (i = next.fetch_add(1)) < jobs.size();) {
                    {
                        std::lock_guard lk(err_mu);
                        if (error) {
                            return;
                        }
                    }
                    try {
                        outcomes[i] = trainer.run(*jobs[i]);
                    } catch (const std::exception& e) {
                        std::lock_guard lk(err_mu);
                        if (!error) {
                            error = fmt::format("job {}: {}", jobs[i]->name, e.what());
                        }
                    }
                }
            };
            const unsigned n = std::max(1u, std::min<unsigned>(options.finetune_parallelism, static_cast<unsigned>(jobs.size())));
            std::vector<std::thread> pool;
            for (unsigned t = 1; t < n; ++t) {
                pool.emplace_back(worker);
            }
            worker();
            for (auto& t : pool) {
                t.join();
            }
            if (error) {
                throw PipelineError(*error);
            }
            // Selection uses the same order as result collection, so it cannot depend on completion order.
            for (std::size_t i = 0; i < jobs.size(); ++i) {
                const auto& job = *jobs[i];
                const auto& out = *outcomes[i];
                if (!out.val_metric) {
                    throw PipelineError("job " + job.name + " reported no validation metric");
                }
                RunResult r;
                r.task = *job.task;
                r.run_name = job.hyperparams.run_name();
                r.hyperparams = job.hyperparams;
                r.metric_name = out.metric_name;
                r.val_metric = *out.val_metric;
                r.predictions_dir = out.checkpoint;
                r.log_path = job.log_dir / "stdout.log";
                auto it = best.find(r.task);
                if (it == best.end() || better_run(r, it->second)) {
                    best[r.task] = r;
                }
                ++runs;
            }
        }
        Artifacts a{{"runs", std::to_string(runs)}, {"tasks", join(plan.task_order, ",")}, {"log_dir", ws.finetune_logs(*dataset_id).string()}};
        for (const auto& [child, parent] : plan.parent) {
            a["stilt." + child] = fmt::format("{} <- {}", parent, best.at(parent).run_name);
        }
        return a;
    }

    Artifacts collect() {
        const auto summary = summarize_val(ws.log_root(), *dataset_id);
        const auto selection = collect_best_val(summary.rows, effective_tasks(options));
        const fs::path dir = ws.submission_dir(*dataset_id);
        fs::remove_all(dir);
        const fs::path zip = translate_test_result(selection.best, dir, options.include_ax);
        const fs::path logs = ws.collect_logs(*dataset_id);
        write_text(logs / "best_val.tsv", format_best_table(selection));
        std::string skipped = "log\treason\n";
        for (const auto& s : summary.skipped) {
            skipped += s.log_path.string() + "\t" + s.reason + "\n";
        }
        write_text(logs / "skipped.tsv", skipped);
        std::string warnings;
        for (const auto& w : selection.warnings) {
            warnings += w + "\n";
        }
        write_text(logs / "warnings.log", warnings);
        if (!warnings.empty()) {
            std::cerr << warnings;
        }
        return {{"submission_zip", zip.string()},
                {"rows", std::to_string(summary.rows.size())},
                {"skipped_logs", std::to_string(summary.skipped.size())},
                {"tasks", std::to_string(selection.best.size())},
                {"best_table", (logs / "best_val.tsv").string()}};
    }
};

json report_json(const PipelineReport& report, const PipelineConfig& config, const PipelineOptions& options) {
    json j;
    j["dataset_id"] = report.dataset_id;
    j["stages"] = json::array();
    for (const auto& s : report.stages) {
        j["stages"].push_back({{"name", s.name},
                               {"enabled", s.enabled},
                               {"status", s.status},
                               {"seconds", s.seconds},
                               {"artifacts", s.artifacts},
                               {"message", s.message}});
    }
    j["submission_zip"] = report.submission_zip ? report.submission_zip->string() : "";
    j["config"] = serialize_config(config);
    json opts = json::object();
    for (const auto& [k, v] : describe_options(options)) {
        opts[k] = v;
    }
    j["options"] = opts;
    return j;
}

}  // namespace

PipelineReport run_pipeline(const PipelineConfig& config, const PipelineOptions& options, TrainerAdapter* trainer) {
    const StagePlan plan = plan_stages(config, options);
    std::unique_ptr<TrainerAdapter> owned;
    if (!trainer) {
        owned = make_trainer(options);
        trainer = owned.get();
    }
    std::string options_text;
    for (const auto& [k, v] : describe_options(options)) {
        options_text += k + "=" + v + "\n";
    }
    Runner run{config, options, *trainer, Workspace{options.workdir}, options_text, plan.dataset_id};
    fs::create_directories(run.ws.log_root());
    write_text(run.ws.log_root() / "config.yaml", serialize_config(config));

    PipelineReport report;
    report.report_path = run.ws.report_path();
    for (const auto& [stage, on] : plan.stages) {
        report.stages.push_back({std::string(stage_name(stage)), on, on ? "not_reached" : "skipped_disabled", 0, {}, ""});
    }
    auto save = [&] {
        report.dataset_id = run.dataset_id.value_or("");
        write_text(report.report_path, report_json(report, config, options).dump(2) + "\n");
    };

    bool upstream_ran = false;
    fs::path checkpoint;
    for (std::size_t i = 0; i < plan.stages.size(); ++i) {
        const auto [stage, on] = plan.stages[i];
        StageReport& sr = report.stages[i];
        if (!on) {
            continue;
        }
        const auto start = std::chrono::steady_clock::now();
        try {
            if (stage != Stage::env_check && stage != Stage::dataset) {
                check_precondition(stage, plan, run.ws, run.dataset_id);
                if (!run.dataset_id) {
                    throw PipelineError("no dataset id available");
                }
            }
            std::optional<json> done = upstream_ran ? std::nullopt : run.completed_sentinel(stage);
            if (done) {
                sr.status = "skipped_done";
                sr.artifacts = done->value("artifacts", Artifacts{});
                const std::string id = done->value("dataset_id", "");
                if (stage == Stage::dataset && !id.empty()) {
                    run.dataset_id = id;
                }
            } else {
                switch (stage) {
                    case Stage::env_check: sr.artifacts = run.env_check(); break;
                    case Stage::dataset: sr.artifacts = run.dataset(); break;
                    case Stage::pretrain: sr.artifacts = run.pretrain(); break;
                    case Stage::finetune:
                        sr.artifacts = run.finetune(checkpoint.empty() ? run.ws.pretrain_checkpoint(*run.dataset_id) : checkpoint);
                        break;
                    case Stage::collect: sr.artifacts = run.collect(); break;
                }
                sr.status = "completed";
                // env_check validates the machine; it does not invalidate produced data.
                upstream_ran = upstream_ran || stage != Stage::env_check;
                run.write_sentinel(stage, sr.artifacts);
            }
            if (stage == Stage::pretrain && sr.artifacts.contains("checkpoint")) {
                checkpoint = sr.artifacts.at("checkpoint");
            }
            if (stage == Stage::collect && sr.artifacts.contains("submission_zip")) {
                report.submission_zip = sr.artifacts.at("submission_zip");
            }
        } catch (const std::exception& e) {
            sr.status = "failed";
            sr.message = e.what();
            sr.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
            save();
            throw PipelineError(fmt::format("stage '{}' failed: {}", stage_name(stage), e.what()));
        }
        sr.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        save();
    }
    save();
    return report;
}

}  // namespace xbert
