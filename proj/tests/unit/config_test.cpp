#include <gtest/gtest.h>

#include "support.hpp"
#include "xbert/config.hpp"
#include "xbert/error.hpp"

using namespace xbert;
namespace fs = std::filesystem;
using xbert::testing::fixture;
using xbert::testing::read_text;

namespace {

PipelineConfig load_fixture(const char* name) { return parse_config(read_text(fixture(name))); }

std::string error_of(std::string_view yaml) {
    try {
        parse_config(yaml);
    } catch (const ConfigError& e) {
        return e.what();
    }
    return {};
}

bool has_violation(const std::vector<Violation>& vs, const std::string& key) {
    for (const auto& v : vs) {
        if (v.key_path == key) return true;
    }
    return false;
}

}  // namespace

TEST(Config, Defaults) {
    const auto c = get_default_config();
    EXPECT_EQ(c.pretrain.num_steps, 23000);
    EXPECT_DOUBLE_EQ(c.system.max_memory_in_gb, 64.0);
    EXPECT_TRUE(c.dataset.enabled);
    EXPECT_TRUE(c.pretrain.enabled);
    EXPECT_TRUE(c.finetune.enabled);
    EXPECT_TRUE(c.result_collection.enabled);
    EXPECT_EQ(c.tokenizer.name_or_path, "bert-large-uncased");
    EXPECT_TRUE(c.dataset.customized_datasets.empty());
    EXPECT_TRUE(c.dataset.huggingface_datasets.empty());
}

TEST(Config, EmptyDocumentIsDefault) {
    EXPECT_EQ(parse_config(""), get_default_config());
    EXPECT_EQ(parse_config("# only a comment\n"), get_default_config());
}

TEST(Config, BertLargeExample) {
    const auto c = load_fixture("pipeline_large.yaml");
    EXPECT_EQ(c.system.num_gpus, 8);
    EXPECT_EQ(c.pretrain.num_steps, 57500);
    EXPECT_EQ(c.tokenizer.name_or_path, "bert-large-uncased");
    ASSERT_EQ(c.dataset.huggingface_datasets.size(), 2u);
    EXPECT_EQ(c.dataset.huggingface_datasets[0], (RemoteDataset{"wikipedia", "20220301.en"}));
    EXPECT_EQ(c.dataset.huggingface_datasets[1], (RemoteDataset{"bookcorpusopen", "plain_text"}));
    EXPECT_DOUBLE_EQ(c.system.max_memory_in_gb, 64.0);
    EXPECT_TRUE(validate(c).empty());
}

TEST(Config, CustomizedExample) {
    const auto c = load_fixture("pipeline_customized.yaml");
    EXPECT_DOUBLE_EQ(c.system.max_memory_in_gb, 16.0);
    ASSERT_EQ(c.dataset.customized_datasets.size(), 2u);
    EXPECT_EQ(c.dataset.customized_datasets[0], "/home/user/data/customized_corpus/");
    EXPECT_EQ(c.dataset.customized_datasets[1], "/home/user/data/pile/");
    EXPECT_EQ(c.wandb.api_key, std::string(40, 'x'));
    EXPECT_TRUE(validate(c).empty());
}

TEST(Config, StageFlags) {
    const auto pre = load_fixture("stages_preprocess.yaml");
    EXPECT_TRUE(pre.dataset.enabled);
    EXPECT_FALSE(pre.pretrain.enabled);
    EXPECT_FALSE(pre.finetune.enabled);
    EXPECT_FALSE(pre.result_collection.enabled);

    const auto train = load_fixture("stages_train.yaml");
    EXPECT_FALSE(train.dataset.enabled);
    EXPECT_TRUE(train.pretrain.enabled);
    EXPECT_TRUE(train.finetune.enabled);
    EXPECT_TRUE(train.result_collection.enabled);
}

TEST(Config, BooleanSpellings) {
    for (const char* t : {"true", "True", "TRUE"}) {
        EXPECT_TRUE(parse_config(std::string("PRETRAIN:\n  ENABLED: ") + t + "\n").pretrain.enabled) << t;
    }
    for (const char* f : {"false", "False", "FALSE"}) {
        EXPECT_FALSE(parse_config(std::string("PRETRAIN:\n  ENABLED: ") + f + "\n").pretrain.enabled) << f;
    }
}

TEST(Config, SectionNamesAreCaseInsensitive) {
    const auto c = parse_config("system:\n  num_gpus: 4\npretrain:\n  Num_Steps: 10\n");
    EXPECT_EQ(c.system.num_gpus, 4);
    EXPECT_EQ(c.pretrain.num_steps, 10);
}

TEST(Config, UnknownKeyNamed) {
    try {
        parse_config("SYSTEM:\n  NUM_GPUS: 1\n  NUM_GPU: 2\n");
        FAIL() << "accepted unknown key";
    } catch (const ConfigError& e) {
        EXPECT_EQ(e.key_path(), "SYSTEM.NUM_GPU");
        EXPECT_NE(std::string(e.what()).find("line 3"), std::string::npos) << e.what();
    }
    EXPECT_NE(error_of("OPTIMIZER:\n  LR: 1\n").find("OPTIMIZER"), std::string::npos);
}

TEST(Config, TypeMismatch) {
    try {
        parse_config("PRETRAIN:\n  NUM_STEPS: many\n");
        FAIL() << "accepted string count";
    } catch (const ConfigError& e) {
        EXPECT_EQ(e.key_path(), "PRETRAIN.NUM_STEPS");
    }
    EXPECT_FALSE(error_of("PRETRAIN:\n  ENABLED: maybe\n").empty());
    EXPECT_FALSE(error_of("SYSTEM:\n  NUM_GPUS: 1.5\n").empty());
    EXPECT_FALSE(error_of("DATASET:\n  HUGGINGFACE_DATASETS:\n    - [wikipedia]\n").empty());
    EXPECT_FALSE(error_of("SYSTEM: 3\n").empty());
}

TEST(Config, MalformedYamlReportsLine) {
    const auto msg = error_of("SYSTEM:\n  NUM_GPUS: 1\nDATASET:\n  - [a, b\n");
    ASSERT_FALSE(msg.empty());
    EXPECT_NE(msg.find("line"), std::string::npos) << msg;
}

TEST(Config, Validate) {
    const auto defaults = validate(get_default_config());
    ASSERT_EQ(defaults.size(), 1u);
    EXPECT_EQ(defaults[0].key_path, "DATASET");

    auto c = load_fixture("pipeline_large.yaml");
    c.pretrain.num_steps = 0;
    EXPECT_TRUE(has_violation(validate(c), "PRETRAIN.NUM_STEPS"));
    c.pretrain.enabled = false;
    EXPECT_FALSE(has_violation(validate(c), "PRETRAIN.NUM_STEPS"));

    c = load_fixture("pipeline_large.yaml");
    c.system.max_memory_in_gb = 0;
    EXPECT_TRUE(has_violation(validate(c), "SYSTEM.MAX_MEMORY_IN_GB"));

    c = get_default_config();
    c.dataset.enabled = false;
    EXPECT_TRUE(validate(c).empty());
}

TEST(Config, SerializeRoundTrip) {
    for (const char* name : {"pipeline_large.yaml", "pipeline_customized.yaml", "stages_preprocess.yaml", "stages_train.yaml"}) {
        const auto c = load_fixture(name);
        const auto text = serialize_config(c);
        EXPECT_EQ(parse_config(text), c) << name;
        EXPECT_EQ(serialize_config(parse_config(text)), text) << name;
    }
    auto odd = get_default_config();
    odd.dataset.id = "my-corpus";
    odd.system.max_memory_in_gb = 0.1;
    odd.dataset.customized_datasets = {"dir with: colon", "#hash"};
    EXPECT_EQ(parse_config(serialize_config(odd)), odd);
}

TEST(Config, AbsentKeysKeepDefaults) {
    const auto c = parse_config("SYSTEM:\n  NUM_GPUS: 2\n");
    auto expected = get_default_config();
    expected.system.num_gpus = 2;
    EXPECT_EQ(c, expected);
}
