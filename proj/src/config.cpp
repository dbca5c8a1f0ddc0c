#include "xbert/config.hpp"

#include <yaml-cpp/yaml.h>

#include <algorithm>
#include <cctype>
#include <charconv>
#include <fstream>
#include <set>
#include <sstream>

#include <fmt/format.h>

#include "xbert/error.hpp"

namespace xbert {
namespace {

std::string upper(std::string s) {
    std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return static_cast<char>(std::toupper(c)); });
    return s;
}

int line_of(const YAML::Node& node) { return node.Mark().line + 1; }

[[noreturn]] void type_error(const std::string& path, const YAML::Node& node, std::string_view expected) {
    throw ConfigError(path, fmt::format("{}: expected {} (line {})", path, expected, line_of(node)));
}

std::string scalar_text(const std::string& path, const YAML::Node& node) {
    if (!node.IsScalar()) {
        type_error(path, node, "a scalar");
    }
    return node.Scalar();
}

bool as_flag(const std::string& path, const YAML::Node& node) {
    static const std::set<std::string> kTrue{"true", "True", "TRUE"};
    static const std::set<std::string> kFalse{"false", "False", "FALSE"};
    const auto text = scalar_text(path, node);
    if (kTrue.contains(text)) {
        return true;
    }
    if (kFalse.contains(text)) {
        return false;
    }
    type_error(path, node, "a boolean (true/false)");
}

std::int64_t as_count(const std::string& path, const YAML::Node& node) {
    const auto text = scalar_text(path, node);
    std::int64_t v = 0;
    auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
    if (ec != std::errc{} || ptr != text.data() + text.size()) {
        type_error(path, node, "an integer");
    }
    return v;
}

double as_number(const std::string& path, const YAML::Node& node) {
    const auto text = scalar_text(path, node);
    double v = 0;
    auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
    if (ec != std::errc{} || ptr != text.data() + text.size()) {
        type_error(path, node, "a number");
    }
    return v;
}

std::optional<std::string> as_optional_string(const std::string& path, const YAML::Node& node) {
    if (node.IsNull()) {
        return std::nullopt;
    }
    auto text = scalar_text(path, node);
    if (text.empty()) {
        return std::nullopt;
    }
    return text;
}

std::vector<std::string> as_string_list(const std::string& path, const YAML::Node& node) {
    std::vector<std::string> out;
    if (node.IsNull()) {
        return out;
    }
    if (!node.IsSequence()) {
        type_error(path, node, "a list of paths");
    }
    for (std::size_t i = 0; i < node.size(); ++i) {
        out.push_back(scalar_text(fmt::format("{}[{}]", path, i), node[i]));
    }
    return out;
}

std::vector<RemoteDataset> as_remote_list(const std::string& path, const YAML::Node& node) {
    std::vector<RemoteDataset> out;
    if (node.IsNull()) {
        return out;
    }
    if (!node.IsSequence()) {
        type_error(path, node, "a list of [name, split] pairs");
    }
    for (std::size_t i = 0; i < node.size(); ++i) {
        const auto item_path = fmt::format("{}[{}]", path, i);
        const auto& item = node[i];
        if (!item.IsSequence() || item.size() != 2) {
            type_error(item_path, item, "a [name, split] pair");
        }
        out.push_back({scalar_text(item_path + "[0]", item[0]), scalar_text(item_path + "[1]", item[1])});
    }
    return out;
}

// Visits each key of a section mapping, rejecting keys outside `allowed`.
template <typename Fn>
void for_each_key(const std::string& section, const YAML::Node& node, const std::set<std::string>& allowed, Fn&& fn) {
    if (node.IsNull()) {
        return;
    }
    if (!node.IsMap()) {
        type_error(section, node, "a mapping");
    }
    std::set<std::string> seen;
    for (const auto& kv : node) {
        const auto key = upper(kv.first.as<std::string>());
        const auto path = section.empty() ? key : section + "." + key;
        if (!allowed.contains(key)) {
            throw ConfigError(path, fmt::format("unknown configuration key {} (line {})", path, line_of(kv.first)));
        }
        if (!seen.insert(key).second) {
            throw ConfigError(path, fmt::format("duplicate configuration key {} (line {})", path, line_of(kv.first)));
        }
        fn(key, path, kv.second);
    }
}

}  // namespace

PipelineConfig get_default_config() { return PipelineConfig{}; }

PipelineConfig parse_config(std::string_view yaml_text) {
    YAML::Node root;
    try {
        root = YAML::Load(std::string(yaml_text));
    } catch (const YAML::ParserException& e) {
        throw ConfigError("", fmt::format("malformed YAML at line {}: {}", e.mark.line + 1, e.msg));
    }

    PipelineConfig cfg = get_default_config();
    static const std::set<std::string> kSections{"SYSTEM", "WANDB", "DATASET", "PRETRAIN", "FINETUNE", "RESULT_COLLECTION", "TOKENIZER"};

    for_each_key("", root, kSections, [&](const std::string& section, const std::string&, const YAML::Node& body) {
        if (section == "SYSTEM") {
            for_each_key(section, body, {"NUM_GPUS", "MAX_MEMORY_IN_GB"}, [&](const auto& key, const auto& path, const auto& v) {
                if (key == "NUM_GPUS") {
                    cfg.system.num_gpus = as_count(path, v);
                } else {
                    cfg.system.max_memory_in_gb = as_number(path, v);
                }
            });
        } else if (section == "WANDB") {
            for_each_key(section, body, {"API_KEY"}, [&](const auto&, const auto& path, const auto& v) {
                cfg.wandb.api_key = as_optional_string(path, v);
            });
        } else if (section == "DATASET") {
            for_each_key(section, body, {"ENABLED", "ID", "CUSTOMIZED_DATASETS", "HUGGINGFACE_DATASETS"},
                         [&](const auto& key, const auto& path, const auto& v) {
                             if (key == "ENABLED") {
                                 cfg.dataset.enabled = as_flag(path, v);
                             } else if (key == "ID") {
                                 cfg.dataset.id = as_optional_string(path, v);
                             } else if (key == "CUSTOMIZED_DATASETS") {
                                 cfg.dataset.customized_datasets = as_string_list(path, v);
                             } else {
                                 cfg.dataset.huggingface_datasets = as_remote_list(path, v);
                             }
                         });
        } else if (section == "PRETRAIN") {
            for_each_key(section, body, {"ENABLED", "NUM_STEPS"}, [&](const auto& key, const auto& path, const auto& v) {
                if (key == "ENABLED") {
                    cfg.pretrain.enabled = as_flag(path, v);
                } else {
                    cfg.pretrain.num_steps = as_count(path, v);
                }
            });
        } else if (section == "FINETUNE") {
            for_each_key(section, body, {"ENABLED"}, [&](const auto&, const auto& path, const auto& v) {
                cfg.finetune.enabled = as_flag(path, v);
            });
        } else if (section == "RESULT_COLLECTION") {
            for_each_key(section, body, {"ENABLED"}, [&](const auto&, const auto& path, const auto& v) {
                cfg.result_collection.enabled = as_flag(path, v);
            });
        } else {
            for_each_key(section, body, {"NAME_OR_PATH"}, [&](const auto&, const auto& path, const auto& v) {
                cfg.tokenizer.name_or_path = scalar_text(path, v);
            });
        }
    });
    return cfg;
}

PipelineConfig load_config(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw ConfigError("", "cannot open configuration file " + path);
    }
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_config(buf.str());
}

std::vector<Violation> validate(const PipelineConfig& config) {
    std::vector<Violation> out;
    if (config.system.num_gpus < 1) {
        out.push_back({"SYSTEM.NUM_GPUS", "must be a positive count"});
    }
    if (!(config.system.max_memory_in_gb > 0)) {
        out.push_back({"SYSTEM.MAX_MEMORY_IN_GB", "must be positive"});
    }
    if (config.dataset.enabled && config.dataset.customized_datasets.empty() && config.dataset.huggingface_datasets.empty()) {
        out.push_back({"DATASET", "dataset stage is enabled but neither CUSTOMIZED_DATASETS nor HUGGINGFACE_DATASETS lists a corpus"});
    }
    for (std::size_t i = 0; i < config.dataset.customized_datasets.size(); ++i) {
        if (config.dataset.customized_datasets[i].empty()) {
            out.push_back({fmt::format("DATASET.CUSTOMIZED_DATASETS[{}]", i), "empty path"});
        }
    }
    for (std::size_t i = 0; i < config.dataset.huggingface_datasets.size(); ++i) {
        const auto& d = config.dataset.huggingface_datasets[i];
        if (d.name.empty() || d.split.empty()) {
            out.push_back({fmt::format("DATASET.HUGGINGFACE_DATASETS[{}]", i), "name and split must be non-empty"});
        }
    }
    if (config.pretrain.enabled && config.pretrain.num_steps < 1) {
        out.push_back({"PRETRAIN.NUM_STEPS", "must be at least 1 when pretraining is enabled"});
    }
    if (config.tokenizer.name_or_path.empty()) {
        out.push_back({"TOKENIZER.NAME_OR_PATH", "must name a vocabulary"});
    }
    return out;
}

std::string serialize_config(const PipelineConfig& c) {
    YAML::Emitter e;
    e.SetDoublePrecision(17);
    auto str = [&](const std::string& s) { e << YAML::DoubleQuoted << s; };
    auto opt = [&](const std::optional<std::string>& s) {
        if (s) {
            str(*s);
        } else {
            e << YAML::Null;
        }
    };
    e << YAML::BeginMap;
    e << YAML::Key << "SYSTEM" << YAML::Value << YAML::BeginMap;
    e << YAML::Key << "NUM_GPUS" << YAML::Value << c.system.num_gpus;
    e << YAML::Key << "MAX_MEMORY_IN_GB" << YAML::Value << c.system.max_memory_in_gb;
    e << YAML::EndMap;
    e << YAML::Key << "WANDB" << YAML::Value << YAML::BeginMap;
    e << YAML::Key << "API_KEY" << YAML::Value;
    opt(c.wandb.api_key);
    e << YAML::EndMap;
    e << YAML::Key << "DATASET" << YAML::Value << YAML::BeginMap;
    e << YAML::Key << "ENABLED" << YAML::Value << c.dataset.enabled;
    e << YAML::Key << "ID" << YAML::Value;
    opt(c.dataset.id);
    e << YAML::Key << "CUSTOMIZED_DATASETS" << YAML::Value << YAML::BeginSeq;
    for (const auto& p : c.dataset.customized_datasets) {
        str(p);
    }
    e << YAML::EndSeq;
    e << YAML::Key << "HUGGINGFACE_DATASETS" << YAML::Value << YAML::BeginSeq;
    for (const auto& d : c.dataset.huggingface_datasets) {
        e << YAML::Flow << YAML::BeginSeq;
        str(d.name);
        str(d.split);
        e << YAML::EndSeq;
    }
    e << YAML::EndSeq;
    e << YAML::EndMap;
    e << YAML::Key << "PRETRAIN" << YAML::Value << YAML::BeginMap;
    e << YAML::Key << "ENABLED" << YAML::Value << c.pretrain.enabled;
    e << YAML::Key << "NUM_STEPS" << YAML::Value << c.pretrain.num_steps;
    e << YAML::EndMap;
    e << YAML::Key << "FINETUNE" << YAML::Value << YAML::BeginMap;
    e << YAML::Key << "ENABLED" << YAML::Value << c.finetune.enabled;
    e << YAML::EndMap;
    e << YAML::Key << "RESULT_COLLECTION" << YAML::Value << YAML::BeginMap;
    e << YAML::Key << "ENABLED" << YAML::Value << c.result_collection.enabled;
    e << YAML::EndMap;
    e << YAML::Key << "TOKENIZER" << YAML::Value << YAML::BeginMap;
    e << YAML::Key << "NAME_OR_PATH" << YAML::Value;
    str(c.tokenizer.name_or_path);
    e << YAML::EndMap;
    e << YAML::EndMap;
    return std::string(e.c_str()) + "\n";
}

}  // namespace xbert
