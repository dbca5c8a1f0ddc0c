#pragma once

// Pipeline configuration tree. The YAML schema is closed: every section and
// key below is accepted (section and key names are case-insensitive), and
// anything else is rejected so that typos surface at parse time.
//
//   SYSTEM:            NUM_GPUS, MAX_MEMORY_IN_GB
//   WANDB:             API_KEY
//   DATASET:           ENABLED, ID, CUSTOMIZED_DATASETS, HUGGINGFACE_DATASETS
//   PRETRAIN:          ENABLED, NUM_STEPS
//   FINETUNE:          ENABLED
//   RESULT_COLLECTION: ENABLED
//   TOKENIZER:         NAME_OR_PATH

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace xbert {

struct SystemConfig {
    std::int64_t num_gpus = 1;
    double max_memory_in_gb = 64.0;
    bool operator==(const SystemConfig&) const = default;
};

struct WandbConfig {
    std::optional<std::string> api_key;
    bool operator==(const WandbConfig&) const = default;
};

struct RemoteDataset {
    std::string name;
    std::string split;
    bool operator==(const RemoteDataset&) const = default;
};

struct DatasetConfig {
    bool enabled = true;
    std::optional<std::string> id;
    std::vector<std::string> customized_datasets;
    std::vector<RemoteDataset> huggingface_datasets;
    bool operator==(const DatasetConfig&) const = default;
};

struct PretrainConfig {
    bool enabled = true;
    std::int64_t num_steps = 23000;
    bool operator==(const PretrainConfig&) const = default;
};

struct FinetuneConfig {
    bool enabled = true;
    bool operator==(const FinetuneConfig&) const = default;
};

struct ResultCollectionConfig {
    bool enabled = true;
    bool operator==(const ResultCollectionConfig&) const = default;
};

struct TokenizerConfig {
    std::string name_or_path = "bert-large-uncased";
    bool operator==(const TokenizerConfig&) const = default;
};

struct PipelineConfig {
    SystemConfig system;
    WandbConfig wandb;
    DatasetConfig dataset;
    PretrainConfig pretrain;
    FinetuneConfig finetune;
    ResultCollectionConfig result_collection;
    TokenizerConfig tokenizer;
    bool operator==(const PipelineConfig&) const = default;
};

/// A broken invariant, tagged with the offending key path (e.g. "PRETRAIN.NUM_STEPS").
struct Violation {
    std::string key_path;
    std::string message;
};

PipelineConfig get_default_config();

/// Defaults overridden by every key present in `yaml_text`.
/// Throws ConfigError on malformed YAML (message carries the line number),
/// unknown keys, and type mismatches.
PipelineConfig parse_config(std::string_view yaml_text);
PipelineConfig load_config(const std::string& path);

std::vector<Violation> validate(const PipelineConfig& config);

/// Canonical YAML: every section and key, upper-case, fixed order.
std::string serialize_config(const PipelineConfig& config);

}  // namespace xbert
