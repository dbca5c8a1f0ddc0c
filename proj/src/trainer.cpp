#include "xbert/trainer.hpp"

#include <cerrno>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <sstream>

#include <fcntl.h>
#include <spawn.h>
#include <sys/wait.h>
#include <unistd.h>

#include <fmt/format.h>

#include "xbert/digest.hpp"
#include "xbert/error.hpp"
#include "xbert/glue.hpp"
#include "xbert/keyed_rng.hpp"

extern char** environ;

namespace xbert {

namespace fs = std::filesystem;

std::string_view to_string(JobKind kind) noexcept { return kind == JobKind::pretrain ? "pretrain" : "finetune"; }

StopDecision check_early_stop(double elapsed_minutes, double eval_loss, const EarlyStopPolicy& policy) noexcept {
    if (policy.enabled && elapsed_minutes >= policy.time_minutes && eval_loss > policy.eval_loss) {
        return StopDecision::stop;
    }
    return StopDecision::continue_training;
}

std::int64_t ValidationCadence::epoch_steps(std::int64_t overall_steps) noexcept { return std::max<std::int64_t>(1, overall_steps / 100); }

bool ValidationCadence::due(std::int64_t completed, std::int64_t overall_steps) const noexcept {
    if (completed == overall_steps) {
        return true;
    }
    const auto epoch = epoch_steps(overall_steps);
    if (completed <= 0 || completed % epoch != 0) {
        return false;
    }
    const auto e = completed / epoch;
    const auto n = static_cast<double>(overall_steps);
    std::int64_t every = epochs;
    if (static_cast<double>(completed) <= begin_proportion * n) {
        every = epochs_begin;
    } else if (static_cast<double>(completed) > (1.0 - end_proportion) * n) {
        every = epochs_end;
    }
    return e % std::max<std::int64_t>(1, every) == 0;
}

double LossModel::operator()(double lr_sum) const noexcept { return l0 * std::exp(-c * lr_sum) + l_inf; }

namespace {

std::uint64_t key_of(std::string_view text) {
    const auto d = sha256(text);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) {
        v = (v << 8) | d[i];
    }
    return v;
}

void write_file(const fs::path& path, std::string_view data) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    f.write(data.data(), static_cast<std::streamsize>(data.size()));
    f.close();
    if (!f) {
        throw PipelineError("I/O error writing " + path.string());
    }
}

std::string read_file(const fs::path& path) {
    std::ifstream f(path, std::ios::binary);
    std::ostringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

std::string result_tsv(double eval_loss, const fs::path& checkpoint, const std::string& metric = {}, double value = 0) {
    std::string s = fmt::format("eval_loss\t{:.17g}\ncheckpoint\t{}\n", eval_loss, checkpoint.string());
    if (!metric.empty()) {
        s += fmt::format("final_val_metric\t{}\t{:.17g}\n", metric, value);
    }
    return s;
}

std::string finetune_log_header(const TrainerJob& job) {
    std::string s = fmt::format("task\t{}\n", job.task.value_or(""));
    for (const auto& [k, v] : job.hyperparams.fields()) {
        s += fmt::format("hparam\t{}\t{}\n", k, v);
    }
    return s;
}

}  // namespace

RunOutcome SimulationTrainer::run(const TrainerJob& job) {
    return job.kind == JobKind::pretrain ? pretrain(job) : finetune(job);
}

RunOutcome SimulationTrainer::pretrain(const TrainerJob& job) const {
    const auto start = std::chrono::steady_clock::now();
    if (!fs::is_regular_file(job.dataset_dir / "instances" / "META.yaml")) {
        throw PipelineError("pretrain: no instance files under " + (job.dataset_dir / "instances").string());
    }
    if (job.overall_steps <= 0) {
        throw PipelineError("pretrain: step budget must be positive");
    }
    fs::create_directories(job.output_dir);
    fs::create_directories(job.log_dir);

    const Schedule sched(job.schedule, job.overall_steps);
    const double mps = options_.minutes_per_step > 0 ? options_.minutes_per_step : 1440.0 / static_cast<double>(job.overall_steps);

    RunOutcome out;
    out.step_log = job.log_dir / "steps.tsv";
    fmt::memory_buffer steps;
    fmt::memory_buffer log;
    fmt::format_to(std::back_inserter(steps), "step\tlr\tlr_sum\tloss\telapsed_minutes\tvalidated\n");
    fmt::format_to(std::back_inserter(log), "{}\n", sched.summary());

    double lr_sum = 0;
    double loss = options_.loss(0);
    std::int64_t k = 0;
    for (; k < job.overall_steps; ++k) {
        const double lr = sched.at(k);
        lr_sum += lr;
        loss = options_.loss(lr_sum);
        const double elapsed = static_cast<double>(k + 1) * mps;
        const bool validate = job.validation.due(k + 1, job.overall_steps);
        fmt::format_to(std::back_inserter(steps), "{}\t{:.17g}\t{:.17g}\t{:.17g}\t{:.6f}\t{}\n", k, lr, lr_sum, loss, elapsed, validate ? 1 : 0);
        if (validate) {
            fmt::format_to(std::back_inserter(log), "validation\tstep\t{}\telapsed_minutes\t{:.3f}\teval_loss\t{:.17g}\n", k + 1, elapsed, loss);
            if (check_early_stop(elapsed, loss, job.early_stop) == StopDecision::stop) {
                fmt::format_to(std::back_inserter(log), "early_stop\tstep\t{}\n", k + 1);
                out.early_stopped = true;
                ++k;
                break;
            }
        }
    }
    out.steps_completed = k;
    out.lr_sum = lr_sum;
    out.final_eval_loss = loss;
    out.checkpoint = job.output_dir;

    write_file(job.output_dir / "CHECKPOINT", fmt::format("kind\tpretrain\nsteps\t{}\nlr_sum\t{:.17g}\nfinal_eval_loss\t{:.17g}\n", k, lr_sum, loss));
    write_file(job.output_dir / "RESULT.tsv", result_tsv(loss, out.checkpoint));
    fmt::format_to(std::back_inserter(log), "final_eval_loss\t{:.17g}\ncheckpoint\t{}\n", loss, out.checkpoint.string());
    write_file(out.step_log, std::string_view(steps.data(), steps.size()));
    write_file(job.log_dir / "stdout.log", std::string_view(log.data(), log.size()));
    write_file(job.log_dir / "stderr.log", "");
    out.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return out;
}

RunOutcome SimulationTrainer::finetune(const TrainerJob& job) const {
    const auto start = std::chrono::steady_clock::now();
    if (!job.task) {
        throw PipelineError("finetune job " + job.name + " has no task");
    }
    const GlueTask& task = glue_task(*job.task);
    const fs::path init_marker = job.init_checkpoint / "CHECKPOINT";
    if (!fs::is_regular_file(init_marker)) {
        throw PipelineError(fmt::format("finetune {}: checkpoint {} does not exist", job.name, job.init_checkpoint.string()));
    }
    fs::create_directories(job.output_dir);
    fs::create_directories(job.log_dir);

    // Everything below is a pure function of (seed, task, hyperparameters, initial checkpoint contents).
    const std::string init_digest = to_hex(sha256(read_file(init_marker)));
    std::string hp_text;
    for (const auto& [k, v] : job.hyperparams.fields()) {
        hp_text += k + "=" + v + ";";
    }
    const std::uint64_t key = keyed_hash(job.seed, {key_of(task.name), key_of(hp_text), key_of(init_digest)});

    double lo = 0.55, hi = 0.92;
    if (task.metric == "mcc") {
        lo = 0.20, hi = 0.60;
    } else if (task.metric == "spearman") {
        lo = 0.70, hi = 0.90;
    }
    const double metric = std::round((lo + (hi - lo) * to_unit(mix64(key))) * 1e4) / 1e4;
    const double eval_loss = 1.0 - metric;

    for (std::size_t f = 0; f < task.outputs.size(); ++f) {
        KeyedStream rng(keyed_hash(key, {f}));
        std::string rows = "index\tprediction\n";
        for (std::uint32_t i = 0; i < options_.test_rows; ++i) {
            if (task.regression()) {
                rows += fmt::format("{}\t{:.3f}\n", i, 5.0 * rng.uniform());
            } else {
                rows += fmt::format("{}\t{}\n", i, rng.below(task.labels.size()));
            }
        }
        write_file(job.output_dir / task.outputs[f].prediction_file, rows);
    }

    RunOutcome out;
    out.val_metric = metric;
    out.metric_name = task.metric;
    out.final_eval_loss = eval_loss;
    out.checkpoint = job.output_dir;
    out.steps_completed = job.hyperparams.epochs;

    write_file(job.output_dir / "CHECKPOINT",
               fmt::format("kind\tfinetune\ntask\t{}\nparams\t{}\ninit\t{}\nmetric\t{:.17g}\n", task.name, hp_text, init_digest, metric));
    write_file(job.output_dir / "RESULT.tsv", result_tsv(eval_loss, out.checkpoint, task.metric, metric));
    std::string log = finetune_log_header(job);
    log += fmt::format("init_checkpoint\t{}\n", job.init_checkpoint.string());
    if (job.stilt_parent) {
        log += fmt::format("stilt_parent\t{}\n", *job.stilt_parent);
    }
    log += fmt::format("final_eval_loss\t{:.17g}\nfinal_val_metric\t{}\t{:.17g}\npredictions_dir\t{}\n", eval_loss, task.metric, metric,
                       job.output_dir.string());
    write_file(job.log_dir / "stdout.log", log);
    write_file(job.log_dir / "stderr.log", "");
    out.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return out;
}

RunOutcome read_result_tsv(const fs::path& path) {
    if (!fs::is_regular_file(path)) {
        throw PipelineError("trainer did not write " + path.string());
    }
    RunOutcome out;
    bool have_loss = false, have_ckpt = false;
    std::istringstream lines(read_file(path));
    for (std::string line; std::getline(lines, line);) {
        if (!line.empty() && line.back() == '\r') {
            line.pop_back();
        }
        const auto tab = line.find('\t');
        if (tab == std::string::npos) {
            continue;
        }
        const std::string key = line.substr(0, tab);
        const std::string value = line.substr(tab + 1);
        if (key == "eval_loss") {
            char* end = nullptr;
            out.final_eval_loss = std::strtod(value.c_str(), &end);
            have_loss = end != value.c_str() && *end == '\0' && std::isfinite(out.final_eval_loss);
        } else if (key == "checkpoint") {
            out.checkpoint = value;
            have_ckpt = !value.empty();
        } else if (key == "final_val_metric") {
            const auto t2 = value.find('\t');
            if (t2 != std::string::npos) {
                char* end = nullptr;
                const double v = std::strtod(value.c_str() + t2 + 1, &end);
                if (*end == '\0' && std::isfinite(v)) {
                    out.metric_name = value.substr(0, t2);
                    out.val_metric = v;
                }
            }
        }
    }
    if (!have_loss || !have_ckpt) {
        throw PipelineError(path.string() + " must contain 'eval_loss' and 'checkpoint' lines");
    }
    return out;
}

std::optional<fs::path> find_executable(std::string_view program) {
    if (program.empty()) {
        return std::nullopt;
    }
    if (program.find('/') != std::string_view::npos) {
        const fs::path p(program);
        return ::access(p.c_str(), X_OK) == 0 ? std::optional<fs::path>(p) : std::nullopt;
    }
    const char* path_env = std::getenv("PATH");
    std::string_view paths = path_env ? path_env : "/usr/bin:/bin";
    while (true) {
        const auto colon = paths.find(':');
        const std::string_view dir = paths.substr(0, colon);
        const fs::path candidate = fs::path(dir.empty() ? "." : std::string(dir)) / std::string(program);
        if (::access(candidate.c_str(), X_OK) == 0 && fs::is_regular_file(candidate)) {
            return candidate;
        }
        if (colon == std::string_view::npos) {
            return std::nullopt;
        }
        paths.remove_prefix(colon + 1);
    }
}

RunOutcome ExternalTrainer::run(const TrainerJob& job) {
    if (job.argv.empty()) {
        throw PipelineError("job " + job.name + " has an empty command line");
    }
    const auto start = std::chrono::steady_clock::now();
    fs::create_directories(job.output_dir);
    fs::create_directories(job.log_dir);
    const fs::path out_log = job.log_dir / "stdout.log";
    const fs::path err_log = job.log_dir / "stderr.log";
    fs::remove(job.output_dir / "RESULT.tsv");

    posix_spawn_file_actions_t actions;
    posix_spawn_file_actions_init(&actions);
    posix_spawn_file_actions_addopen(&actions, STDOUT_FILENO, out_log.c_str(), O_WRONLY | O_CREAT | O_TRUNC, 0644);
    posix_spawn_file_actions_addopen(&actions, STDERR_FILENO, err_log.c_str(), O_WRONLY | O_CREAT | O_TRUNC, 0644);

    std::vector<char*> argv;
    for (const auto& a : job.argv) {
        argv.push_back(const_cast<char*>(a.c_str()));
    }
    argv.push_back(nullptr);

    pid_t pid = 0;
    const int rc = posix_spawnp(&pid, argv[0], &actions, nullptr, argv.data(), environ);
    posix_spawn_file_actions_destroy(&actions);
    if (rc != 0) {
        throw PipelineError(fmt::format("cannot launch '{}': {}", job.argv[0], std::strerror(rc)));
    }
    int status = 0;
    while (::waitpid(pid, &status, 0) < 0) {
        if (errno != EINTR) {
            throw PipelineError(fmt::format("waitpid failed for '{}': {}", job.argv[0], std::strerror(errno)));
        }
    }
    if (!WIFEXITED(status) || WEXITSTATUS(status) != 0) {
        const std::string how = WIFEXITED(status) ? fmt::format("exit status {}", WEXITSTATUS(status))
                                                  : fmt::format("signal {}", WTERMSIG(status));
        throw PipelineError(fmt::format("{} job {} failed ({}); see {}", to_string(job.kind), job.name, how, err_log.string()));
    }

    RunOutcome out = read_result_tsv(job.output_dir / "RESULT.tsv");
    out.step_log = out_log;
    if (job.kind == JobKind::finetune) {
        // Keep the log parseable by the result collector whatever the command printed.
        std::ofstream f(out_log, std::ios::binary | std::ios::app);
        f << '\n' << finetune_log_header(job);
        if (out.val_metric) {
            f << fmt::format("final_val_metric\t{}\t{:.17g}\n", out.metric_name, *out.val_metric);
        }
        f << "predictions_dir\t" << job.output_dir.string() << '\n';
    }
    out.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return out;
}

}  // namespace xbert
