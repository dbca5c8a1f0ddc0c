#include "xbert/glue.hpp"

#include <algorithm>

#include "xbert/error.hpp"

namespace xbert {

namespace {

std::vector<GlueTask> build_table() {
    const std::vector<std::string> binary{"0", "1"};
    const std::vector<std::string> nli{"entailment", "not_entailment"};
    const std::vector<std::string> mnli{"entailment", "neutral", "contradiction"};
    auto single = [](const std::string& member) { return std::vector<GlueOutput>{{"test_predictions.tsv", member, false}}; };
    return {
        {"CoLA", "mcc", binary, single("CoLA.tsv")},
        {"SST-2", "acc", binary, single("SST-2.tsv")},
        {"MRPC", "f1", binary, single("MRPC.tsv")},
        {"STS-B", "spearman", {}, single("STS-B.tsv")},
        {"QQP", "f1", binary, single("QQP.tsv")},
        {"MNLI",
         "acc",
         mnli,
         {{"test_predictions.tsv", "MNLI-m.tsv", false},
          {"test_predictions_mismatched.tsv", "MNLI-mm.tsv", false},
          {"test_predictions_ax.tsv", "AX.tsv", true}}},
        {"QNLI", "acc", nli, single("QNLI.tsv")},
        {"RTE", "acc", nli, single("RTE.tsv")},
        {"WNLI", "acc", binary, single("WNLI.tsv")},
    };
}

}  // namespace

const std::vector<GlueTask>& glue_tasks() {
    static const std::vector<GlueTask> table = build_table();
    return table;
}

std::vector<std::string> glue_task_names() {
    std::vector<std::string> out;
    for (const auto& t : glue_tasks()) {
        out.push_back(t.name);
    }
    return out;
}

bool is_glue_task(std::string_view name) noexcept {
    const auto& t = glue_tasks();
    return std::any_of(t.begin(), t.end(), [&](const GlueTask& g) { return g.name == name; });
}

const GlueTask& glue_task(std::string_view name) {
    for (const auto& t : glue_tasks()) {
        if (t.name == name) {
            return t;
        }
    }
    throw ConfigError("FINETUNE.TASKS", "unknown GLUE task '" + std::string(name) + "'");
}

}  // namespace xbert
