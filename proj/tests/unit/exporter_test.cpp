#include <gtest/gtest.h>

#include <algorithm>
#include <random>

#include <nlohmann/json.hpp>

#include "empdistill/errors.hpp"
#include "empdistill/exporter.hpp"
#include "empdistill/prompt_engine.hpp"
#include "empdistill/text.hpp"
#include "test_support.hpp"

namespace empdistill {
namespace {

using nlohmann::json;
using testing::random_text;
using testing::uniform;

const std::string kInstruction = "Respond with empathy.";

DialogueContext random_context(std::mt19937_64& rng, std::size_t index) {
  return {"ctx-" + std::to_string(index), random_text(rng, 1, 30), random_text(rng, 1, 30)};
}

ScoredResponse random_response(std::mt19937_64& rng) {
  const char* names[] = {"GPT-4", "LLaMA-3", "Gemini"};
  auto responder = uniform(rng, 0, 3) == 3 ? ResponderId::human()
                                           : ResponderId::model(names[uniform(rng, 0, 2)]);
  std::optional<int> score;
  if (uniform(rng, 0, 1)) score = static_cast<int>(uniform(rng, 1, 3));
  return {responder, random_text(rng, 1, 40), score};
}

std::vector<SftExample> random_sft(std::mt19937_64& rng, std::size_t n) {
  const Provenance provenances[] = {Provenance::HumanOriginal, Provenance::TeacherDirect,
                                    Provenance::TeacherImproved, Provenance::TeacherInitial};
  std::vector<SftExample> out;
  for (std::size_t i = 0; i < n; ++i) {
    out.push_back({random_context(rng, i), random_response(rng), provenances[uniform(rng, 0, 3)]});
  }
  return out;
}

std::vector<PreferencePair> random_pairs(std::mt19937_64& rng, std::size_t n) {
  std::vector<PreferencePair> out;
  for (std::size_t i = 0; i < n; ++i) {
    PreferencePair pair{random_context(rng, i), random_response(rng), random_response(rng)};
    pair.rejected.text += " (original)";
    out.push_back(pair);
  }
  return out;
}

TEST(Export, TacoPairRecordLayout) {
  auto taco = testing::taco_record();
  PreferencePair pair{taco.context, taco.responses.at(ResponderId::model("GPT-4")),
                      taco.responses.at(ResponderId::human())};
  auto lines = split_lines(serialize_preference({pair}, kInstruction));
  ASSERT_EQ(lines.size(), 2u);
  EXPECT_EQ(lines[0], R"({"count":1,"schema":"empdistill/dpo","schema_version":1})");
  auto record = json::parse(lines[1]);
  EXPECT_TRUE(record["chosen"].get<std::string>().starts_with(
      "I'm really sorry to hear about your tacos."));
  EXPECT_TRUE(record["rejected"].get<std::string>().starts_with("NOT THE TACOS!!!!"));
  EXPECT_EQ(record["instruction"], kInstruction);
  EXPECT_EQ(record["input"], format_dialogue_input(taco.context));
  EXPECT_EQ(record["meta"]["chosen_score"], 3);
  EXPECT_EQ(record["meta"]["rejected_responder"], "Human");

  SftExample example{taco.context, pair.chosen, Provenance::TeacherDirect};
  auto sft = json::parse(split_lines(serialize_sft({example}, kInstruction))[1]);
  EXPECT_TRUE(sft["output"].get<std::string>().starts_with(
      "I'm really sorry to hear about your tacos."));
  EXPECT_EQ(sft["meta"]["provenance"], "teacher_direct");
}

TEST(Export, RandomExamplesRoundTripByteForByte) {
  std::mt19937_64 rng(1000);
  auto sft = random_sft(rng, 1000);
  auto pairs = random_pairs(rng, 1000);
  testing::TempDir dir;
  EXPECT_EQ(export_sft(sft, kInstruction, dir / "sft.jsonl"), 1000u);
  EXPECT_EQ(export_preference(pairs, kInstruction, dir / "dpo.jsonl"), 1000u);
  auto sft_back = load_sft(dir / "sft.jsonl");
  auto pairs_back = load_preference(dir / "dpo.jsonl");
  EXPECT_EQ(sft_back, sft);
  EXPECT_EQ(pairs_back, pairs);
  EXPECT_EQ(serialize_sft(sft_back, kInstruction), read_file(dir / "sft.jsonl"));
  EXPECT_EQ(serialize_preference(pairs_back, kInstruction), read_file(dir / "dpo.jsonl"));

  std::vector<DialogueContext> contexts;
  for (const auto& e : sft) contexts.push_back(e.context);
  export_test(contexts, dir / "test.jsonl");
  EXPECT_EQ(load_test(dir / "test.jsonl"), contexts);
}

TEST(Export, EmptyAndInvalidInputs) {
  testing::TempDir dir;
  try {
    export_sft({}, kInstruction, dir / "x.jsonl");
    FAIL();
  } catch (const ValidationError& e) {
    EXPECT_EQ(std::string(e.what()), "empty dataset");
  }
  EXPECT_FALSE(std::filesystem::exists(dir / "x.jsonl"));
  EXPECT_THROW(export_test({}, dir / "t.jsonl"), ValidationError);
  auto taco = testing::taco_record();
  PreferencePair same{taco.context, taco.responses.at(ResponderId::human()),
                      taco.responses.at(ResponderId::human())};
  EXPECT_THROW(serialize_preference({same}, kInstruction), ValidationError);
  EXPECT_THROW(serialize_test({taco.context, taco.context}), ValidationError);
}

TEST(Export, ParserRejectsDamagedFiles) {
  std::mt19937_64 rng(5);
  auto text = serialize_sft(random_sft(rng, 3), kInstruction);
  auto lines = split_lines(text);

  EXPECT_THROW(parse_sft(lines[1] + "\n"), ParseError);  // no header
  EXPECT_THROW(parse_sft(lines[0] + "\n" + lines[1] + "\n"), ParseError);  // count mismatch
  EXPECT_THROW(parse_preference(text), ParseError);  // wrong schema

  auto record = json::parse(lines[1]);
  record["input"] = "Context: tampered";
  EXPECT_THROW(parse_sft(lines[0] + "\n" + record.dump() + "\n" + lines[2] + "\n" + lines[3]),
               ParseError);
  record = json::parse(lines[1]);
  record["meta"]["score"] = "high";
  EXPECT_THROW(parse_sft(lines[0] + "\n" + record.dump() + "\n" + lines[2] + "\n" + lines[3]),
               ParseError);
  EXPECT_THROW(parse_test(R"({"count":2,"schema":"empdistill/test","schema_version":1})"
                          "\n{\"id\":\"a\",\"situation\":\"s\",\"utterance\":\"u\"}"
                          "\n{\"id\":\"a\",\"situation\":\"s\",\"utterance\":\"u\"}\n"),
               ParseError);
  EXPECT_THROW(parse_test(R"({"count":0,"schema":"empdistill/test","schema_version":2})"),
               ParseError);
}

TEST(TrainingConfigs, DefaultsMatchPublishedHyperparameters) {
  auto sft = TrainingConfig::defaults(TrainingStage::Sft);
  sft.dataset_path = "out/sft.jsonl";
  sft.base_model = "llama-3-8b";
  EXPECT_EQ(serialize_training_config(sft),
            "stage: sft\n"
            "finetuning_method: lora\n"
            "lora_rank: 8\n"
            "learning_rate: 5e-5\n"
            "epochs: 3.0\n"
            "compute_type: bf16\n"
            "batch_size: 2\n"
            "dataset_path: out/sft.jsonl\n"
            "base_model: llama-3-8b\n");
  auto dpo = TrainingConfig::defaults(TrainingStage::Dpo);
  auto text = serialize_training_config(dpo);
  EXPECT_NE(text.find("dpo_beta: 0.1\ndpo_loss: sigmoid\n"), std::string::npos);
}

TEST(TrainingConfigs, OverridesAreMarkedAndRoundTrip) {
  testing::TempDir dir;
  write_file_atomic(dir / "dpo.jsonl", "x");
  auto config = emit_training_config(TrainingStage::Dpo, dir / "dpo.jsonl", "base",
                                     dir / "train_dpo.cfg",
                                     {{"epochs", "1"}, {"dpo_beta", "0.25"}});
  auto text = read_file(dir / "train_dpo.cfg");
  EXPECT_NE(text.find("epochs: 1.0\n# overridden\n"), std::string::npos);
  EXPECT_NE(text.find("dpo_beta: 0.25\n# overridden\n"), std::string::npos);
  EXPECT_NE(text.find("batch_size: 2\ndpo_beta"), std::string::npos);
  auto parsed = parse_training_config(text);
  // The file keeps overrides in field order, not the order they were applied.
  std::sort(parsed.overridden.begin(), parsed.overridden.end());
  std::sort(config.overridden.begin(), config.overridden.end());
  EXPECT_EQ(parsed, config);
  EXPECT_EQ(serialize_training_config(parsed), text);

  EXPECT_THROW(emit_training_config(TrainingStage::Sft, dir / "missing.jsonl", "b", dir / "c"),
               IoError);
  auto sft = TrainingConfig::defaults(TrainingStage::Sft);
  EXPECT_THROW(sft.apply_override("dpo_beta", "0.2"), ValidationError);
  EXPECT_THROW(sft.apply_override("warmup", "3"), ValidationError);
  EXPECT_THROW(sft.apply_override("lora_rank", "eight"), ValidationError);
  EXPECT_THROW(sft.apply_override("learning_rate", "-1"), ValidationError);
  EXPECT_THROW(parse_training_config("stage: ppo\ndataset_path: a\nbase_model: b\n"), ParseError);
  EXPECT_THROW(parse_training_config("stage: sft\n"), ParseError);
}

TEST(TrainingConfigs, NumberFormatting) {
  auto config = TrainingConfig::defaults(TrainingStage::Sft);
  config.apply_override("learning_rate", "0.0001");
  config.apply_override("epochs", "2.5");
  auto text = serialize_training_config(config);
  EXPECT_NE(text.find("learning_rate: 1e-4\n"), std::string::npos);
  EXPECT_NE(text.find("epochs: 2.5\n"), std::string::npos);
}

}  // namespace
}  // namespace empdistill
