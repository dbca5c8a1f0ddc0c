#include "xbert/results.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include <fmt/format.h>

#include "xbert/error.hpp"
#include "xbert/glue.hpp"
#include "xbert/zip.hpp"

namespace xbert {

namespace fs = std::filesystem;

namespace {

std::vector<std::string_view> split_tabs(std::string_view line) {
    std::vector<std::string_view> out;
    std::size_t start = 0;
    while (true) {
        const auto tab = line.find('\t', start);
        out.push_back(line.substr(start, tab == std::string_view::npos ? std::string_view::npos : tab - start));
        if (tab == std::string_view::npos) {
            return out;
        }
        start = tab + 1;
    }
}

template <typename T>
bool parse_full(std::string_view text, T& out) {
    auto [p, ec] = std::from_chars(text.data(), text.data() + text.size(), out);
    return ec == std::errc() && p == text.data() + text.size();
}

std::string read_text(const fs::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) {
        throw CollectionError("cannot read " + path.string());
    }
    std::ostringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

}  // namespace

RunResult parse_run_log(const fs::path& log_path) {
    const std::string text = read_text(log_path);
    RunResult r;
    r.log_path = log_path;
    r.run_name = log_path.parent_path().filename().string();
    bool have_task = false, have_metric = false, have_pred = false;
    bool have_lr = false, have_bs = false, have_epochs = false;

    std::istringstream lines(text);
    for (std::string line; std::getline(lines, line);) {
        if (!line.empty() && line.back() == '\r') {
            line.pop_back();
        }
        const auto f = split_tabs(line);
        if (f[0] == "task" && f.size() == 2) {
            r.task = std::string(f[1]);
            have_task = true;
        } else if (f[0] == "hparam" && f.size() == 3) {
            if (!r.hyperparams.set(f[1], f[2])) {
                throw CollectionError(fmt::format("bad hyperparameter line '{}'", line));
            }
            have_lr |= f[1] == "learning_rate";
            have_bs |= f[1] == "batch_size";
            have_epochs |= f[1] == "epochs";
        } else if (f[0] == "final_val_metric" && f.size() == 3) {
            r.metric_name = std::string(f[1]);
            if (!parse_full(f[2], r.val_metric) || !std::isfinite(r.val_metric)) {
                throw CollectionError(fmt::format("unparsable metric value '{}'", f[2]));
            }
            have_metric = true;
        } else if (f[0] == "predictions_dir" && f.size() == 2) {
            r.predictions_dir = fs::path(std::string(f[1]));
            have_pred = true;
        }
    }
    if (!have_task) {
        throw CollectionError("no task line");
    }
    if (!is_glue_task(r.task)) {
        throw CollectionError("unknown task '" + r.task + "'");
    }
    if (!have_metric) {
        throw CollectionError("no final_val_metric line");
    }
    if (r.metric_name != glue_task(r.task).metric) {
        throw CollectionError(fmt::format("metric '{}' is not the primary metric '{}' of {}", r.metric_name, glue_task(r.task).metric, r.task));
    }
    if (!(have_lr && have_bs && have_epochs)) {
        throw CollectionError("missing learning_rate/batch_size/epochs hyperparameter lines");
    }
    if (!have_pred) {
        throw CollectionError("no predictions_dir line");
    }
    return r;
}

ValSummary summarize_val(const fs::path& log_root, const std::string& dataset_id) {
    const fs::path base = log_root / "finetune" / dataset_id;
    std::vector<fs::path> logs;
    if (fs::is_directory(base)) {
        for (const auto& task_dir : fs::directory_iterator(base)) {
            if (!task_dir.is_directory()) {
                continue;
            }
            for (const auto& run_dir : fs::directory_iterator(task_dir.path())) {
                const fs::path log = run_dir.path() / "stdout.log";
                if (run_dir.is_directory() && fs::is_regular_file(log)) {
                    logs.push_back(log);
                }
            }
        }
    }
    if (logs.empty()) {
        throw CollectionError("no finetune logs under " + base.string());
    }
    std::sort(logs.begin(), logs.end());

    ValSummary out;
    for (const auto& log : logs) {
        try {
            RunResult r = parse_run_log(log);
            const std::string dir_task = log.parent_path().parent_path().filename().string();
            if (r.task != dir_task) {
                throw CollectionError(fmt::format("task line '{}' does not match directory '{}'", r.task, dir_task));
            }
            out.rows.push_back(std::move(r));
        } catch (const CollectionError& e) {
            out.skipped.push_back({log, e.what()});
        }
    }
    std::sort(out.rows.begin(), out.rows.end(),
              [](const RunResult& a, const RunResult& b) { return std::tie(a.task, a.run_name) < std::tie(b.task, b.run_name); });
    return out;
}

bool better_run(const RunResult& a, const RunResult& b) {
    if (a.val_metric != b.val_metric) {
        return a.val_metric > b.val_metric;
    }
    const auto c = a.hyperparams <=> b.hyperparams;
    if (c != 0) {
        return c < 0;
    }
    if (a.run_name != b.run_name) {
        return a.run_name < b.run_name;
    }
    return a.log_path < b.log_path;
}

BestSelection collect_best_val(const std::vector<RunResult>& results, const std::vector<std::string>& expected_tasks) {
    if (results.empty()) {
        throw CollectionError("no validation results to select from");
    }
    BestSelection sel;
    for (const auto& r : results) {
        auto it = sel.best.find(r.task);
        if (it == sel.best.end()) {
            sel.best.emplace(r.task, r);
        } else if (better_run(r, it->second)) {
            it->second = r;
        }
    }
    for (const auto& t : expected_tasks) {
        if (!sel.best.contains(t)) {
            sel.warnings.push_back(fmt::format("task {} has no valid runs; omitted from the submission", t));
        }
    }
    return sel;
}

std::string translate_predictions(const std::string& task_name, const fs::path& predictions_file) {
    const GlueTask& task = glue_task(task_name);
    if (!fs::is_regular_file(predictions_file)) {
        throw CollectionError(fmt::format("{}: predictions file {} is missing", task_name, predictions_file.string()));
    }
    const std::string text = read_text(predictions_file);
    std::istringstream lines(text);
    std::string line;
    if (!std::getline(lines, line) || (line != "index\tprediction" && line != "index\tprediction\r")) {
        throw CollectionError(fmt::format("{}: {} lacks the 'index\\tprediction' header", task_name, predictions_file.string()));
    }
    std::string out = "index\tprediction\n";
    std::size_t row = 0;
    while (std::getline(lines, line)) {
        ++row;
        if (!line.empty() && line.back() == '\r') {
            line.pop_back();
        }
        if (line.empty()) {
            continue;
        }
        const auto f = split_tabs(line);
        std::uint64_t index = 0;
        if (f.size() != 2 || !parse_full(f[0], index)) {
            throw CollectionError(fmt::format("{}: malformed prediction row {} in {}", task_name, row, predictions_file.string()));
        }
        if (task.regression()) {
            double v = 0;
            if (!parse_full(f[1], v) || !std::isfinite(v)) {
                throw CollectionError(fmt::format("{}: non-numeric prediction '{}' at row {}", task_name, f[1], row));
            }
            out += fmt::format("{}\t{}\n", f[0], f[1]);
        } else {
            std::size_t id = 0;
            if (!parse_full(f[1], id) || id >= task.labels.size()) {
                throw CollectionError(fmt::format("{}: unknown label id '{}' at row {}", task_name, f[1], row));
            }
            out += fmt::format("{}\t{}\n", f[0], task.labels[id]);
        }
    }
    return out;
}

fs::path translate_test_result(const std::map<std::string, RunResult>& best, const fs::path& out_dir, bool include_diagnostic) {
    fs::create_directories(out_dir);
    std::vector<ZipMember> members;
    for (const auto& [name, run] : best) {
        for (const auto& output : glue_task(name).outputs) {
            if (output.diagnostic && !include_diagnostic) {
                continue;
            }
            ZipMember m{output.member, translate_predictions(name, run.predictions_dir / output.prediction_file)};
            std::ofstream f(out_dir / m.name, std::ios::binary | std::ios::trunc);
            f << m.data;
            if (!f) {
                throw CollectionError("I/O error writing " + (out_dir / m.name).string());
            }
            members.push_back(std::move(m));
        }
    }
    const fs::path zip = out_dir / "glue_submission.zip";
    write_zip(zip, std::move(members));
    return zip;
}

std::string format_best_table(const BestSelection& selection) {
    std::string out = "task\tmetric\tvalue\trun";
    for (const auto& [k, v] : Hyperparams{}.fields()) {
        out += "\t" + k;
    }
    out += "\n";
    for (const auto& [task, r] : selection.best) {
        out += fmt::format("{}\t{}\t{:.6f}\t{}", task, r.metric_name, r.val_metric, r.run_name);
        for (const auto& [k, v] : r.hyperparams.fields()) {
            out += "\t" + v;
        }
        out += "\n";
    }
    return out;
}

}  // namespace xbert
