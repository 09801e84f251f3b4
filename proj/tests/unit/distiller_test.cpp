#include <gtest/gtest.h>

#include <cstdlib>
#include <random>

#include <nlohmann/json.hpp>

#include "empdistill/distiller.hpp"
#include "empdistill/errors.hpp"
#include "empdistill/text.hpp"
#include "test_support.hpp"

namespace empdistill {
namespace {

using nlohmann::json;
using testing::ScriptedTransport;

std::string user_prompt(const json& request) {
  return request.at("messages").back().at("content").get<std::string>();
}

// Replies with the text under the prompt's "Response:" label, unchanged.
HttpResponse echo_response(const json& request) {
  auto prompt = user_prompt(request);
  auto pos = prompt.rfind("\nResponse: ");
  if (pos == std::string::npos) return testing::ok_completion("fresh reply");
  return testing::ok_completion(prompt.substr(pos + 11));
}

class DistillerTest : public ::testing::Test {
 protected:
  void SetUp() override { ::setenv(testing::kTestKeyEnv, testing::kTestKey, 1); }
  void TearDown() override { ::unsetenv(testing::kTestKeyEnv); }

  // Each call gets a fresh, empty cache.
  Gateway& gateway(ScriptedTransport::Responder responder = testing::synthetic_responder()) {
    transport_ = std::make_shared<ScriptedTransport>(std::move(responder));
    auto cache = dir_ / ("cache" + std::to_string(++gateways_));
    gateway_ = std::make_unique<Gateway>(testing::http_config(cache), transport_,
                                         std::make_shared<testing::FakeClock>());
    return *gateway_;
  }

  Corpus corpus(std::uint64_t seed, std::size_t size, bool with_teacher = false) {
    std::mt19937_64 rng(seed);
    testing::CorpusShape shape;
    shape.size = size;
    if (with_teacher) shape.models = {"teacher"};
    return testing::random_corpus(rng, shape);
  }

  testing::TempDir dir_;
  PromptEngine engine_ = testing::default_engine();
  std::shared_ptr<ScriptedTransport> transport_;
  std::unique_ptr<Gateway> gateway_;
  int gateways_ = 0;
};

TEST(DistillationMethodNames, Parse) {
  EXPECT_EQ(method_from_string("2"), DistillationMethod::ImproveHuman);
  EXPECT_EQ(method_from_string(" Improve_LLM_Initial "), DistillationMethod::ImproveLlmInitial);
  EXPECT_THROW(method_from_string("4"), ValidationError);
}

TEST_F(DistillerTest, Method1UsesScoredTacoResponse) {
  auto result = run_method1(Corpus({testing::taco_record()}), "GPT-4");
  ASSERT_EQ(result.partition.preference.size(), 1u);
  EXPECT_EQ(result.partition.preference[0].chosen.text, testing::kTacoGpt4);
  ASSERT_EQ(result.manifest.size(), 1u);
  EXPECT_EQ(result.manifest[0].note, "pre-existing scored response");
  EXPECT_FALSE(result.halt_reason);
}

TEST_F(DistillerTest, Method1FreshGenerationHaltsForScores) {
  auto data = corpus(1, 6);
  EXPECT_THROW(run_method1(data, "teacher"), ProviderError);
  auto result = run_method1(data, "teacher", &gateway(), &engine_);
  ASSERT_TRUE(result.halt_reason);
  EXPECT_TRUE(result.halt_reason->starts_with("scores required"));
  EXPECT_EQ(result.manifest.size(), 6u);
  EXPECT_TRUE(result.partition.sft.empty());
  EXPECT_EQ(transport_->calls(), 6u);
  for (const auto& entry : result.manifest) {
    ASSERT_EQ(entry.stages.size(), 1u);
    EXPECT_EQ(entry.stages[0].role, "direct");
    EXPECT_FALSE(entry.assignment);
  }
}

TEST_F(DistillerTest, Method1CombinedRecordsDuplicates) {
  std::mt19937_64 rng(12);
  testing::CorpusShape shape;
  shape.size = 30;
  shape.models = {"A", "B"};
  auto data = testing::random_corpus(rng, shape);
  auto result = run_method1_combined(data, {"A", "B"});
  EXPECT_EQ(result.run.teacher, "combined(A+B)");
  ASSERT_EQ(result.notes.size(), 1u);
  EXPECT_TRUE(result.notes[0].starts_with("combined 2 teachers"));
  EXPECT_EQ(result.manifest.size(), 30u);
  EXPECT_THROW(run_method1_combined(data, {}), ValidationError);
}

TEST_F(DistillerTest, Method2FollowsHumanScoresForEveryStrategy) {
  auto data = corpus(2, 24);
  for (auto strategy : improvement_strategies()) {
    auto result = run_method2(data, "teacher", strategy, gateway(), engine_, {3});
    ASSERT_TRUE(result.failures.empty());
    std::size_t sft_dialogues = 0, pref = 0;
    for (const auto& record : data.records()) {
      const auto& human = *record.find(ResponderId::human());
      auto assignment = result.partition.assignment.at(record.context.id);
      if (*human.empathy_score == 3) {
        EXPECT_EQ(assignment, Assignment::Sft);
        ++sft_dialogues;
      } else {
        EXPECT_EQ(assignment, Assignment::Pref);
        ++pref;
      }
    }
    EXPECT_EQ(result.partition.sft.size(), 2 * sft_dialogues);
    EXPECT_EQ(result.partition.preference.size(), pref);
    for (const auto& pair : result.partition.preference) {
      EXPECT_EQ(pair.rejected.responder, ResponderId::human());
      EXPECT_NE(pair.chosen.text, pair.rejected.text);
    }
    for (std::size_t i = 0; i < result.partition.sft.size(); i += 2) {
      EXPECT_EQ(result.partition.sft[i].provenance, Provenance::HumanOriginal);
      EXPECT_EQ(result.partition.sft[i + 1].provenance, Provenance::TeacherImproved);
    }
    std::size_t calls_per_dialogue = strategy == PromptStrategy::Sequential ? 3 : 1;
    EXPECT_EQ(transport_->calls(), data.size() * calls_per_dialogue);
    const auto& stages = result.manifest[0].stages;
    ASSERT_EQ(stages.size(), calls_per_dialogue);
    EXPECT_EQ(stages.back().role, strategy == PromptStrategy::Sequential ? "stage3" : "improve");
    if (strategy == PromptStrategy::Sequential) {
      EXPECT_EQ(result.improved[0].stage_texts.size(), 3u);
      EXPECT_EQ(result.improved[0].improved.text, result.improved[0].stage_texts.back());
    }
  }
}

TEST_F(DistillerTest, Method2Preconditions) {
  auto data = corpus(3, 4);
  try {
    run_method2(data, "teacher", PromptStrategy::Direct, gateway(), engine_);
    FAIL();
  } catch (const ValidationError& e) {
    EXPECT_EQ(std::string(e.what()), "improvement strategy required");
  }
  auto record = testing::taco_record();
  record.responses[ResponderId::human()].empathy_score.reset();
  EXPECT_THROW(run_method2(Corpus({record}), "t", PromptStrategy::Naive, gateway(), engine_),
               ValidationError);
}

TEST_F(DistillerTest, IdenticalImprovementGoesToTestWithNote) {
  auto result = run_method2(Corpus({testing::taco_record()}), "teacher", PromptStrategy::Naive,
                            gateway(echo_response), engine_);
  EXPECT_TRUE(result.partition.preference.empty());
  EXPECT_EQ(result.partition.assignment.at("taco"), Assignment::Test);
  EXPECT_NE(result.manifest[0].note.find("identical"), std::string::npos);
}

TEST_F(DistillerTest, Method3SplitsByRatio) {
  auto data = corpus(4, 40);
  auto ratio = SplitRatio::parse("0.35:0.35:0.3");
  auto result = run_method3(data, "teacher", PromptStrategy::Cognitive, ratio, 7, gateway(),
                            engine_);
  EXPECT_EQ(result.partition.assignment, ratio_partition(data, ratio, 7));
  auto sizes = class_sizes(40, ratio);
  EXPECT_EQ(result.partition.sft.size(), 2 * sizes[0]);
  EXPECT_EQ(result.partition.preference.size(), sizes[1]);
  EXPECT_EQ(result.partition.test.size(), sizes[2]);
  EXPECT_EQ(transport_->calls(), 80u);
  for (const auto& pair : result.partition.preference) {
    EXPECT_EQ(pair.chosen.responder, ResponderId::model("teacher"));
    EXPECT_EQ(pair.rejected.responder, ResponderId::model("teacher"));
  }
  EXPECT_EQ(result.partition.sft[0].provenance, Provenance::TeacherInitial);
  EXPECT_EQ(result.manifest[0].stages[0].role, "initial");
  EXPECT_THROW(run_method3(data, "teacher", PromptStrategy::Direct, ratio, 7, gateway(), engine_),
               ValidationError);
}

TEST_F(DistillerTest, FailedDialoguesAreExcludedAndReported) {
  auto data = corpus(5, 10);
  const auto victim = data.records()[3].context;
  auto responder = [&](const json& request) {
    if (user_prompt(request).find(victim.situation) != std::string::npos) {
      return testing::status_response(400);
    }
    return testing::ok_completion(testing::synthetic_reply(request));
  };
  auto result = run_method3(data, "teacher", PromptStrategy::Naive, SplitRatio(1, 1, 1), 1,
                            gateway(responder), engine_);
  ASSERT_EQ(result.failures.size(), 1u);
  EXPECT_EQ(result.failures[0].id, victim.id);
  EXPECT_EQ(result.partition.assignment.count(victim.id), 0u);
  EXPECT_EQ(result.manifest.size(), 9u);

  auto manifest = split_lines(serialize_run_manifest(result));
  auto header = json::parse(manifest[0]);
  EXPECT_EQ(header["failed"], 1);
  EXPECT_EQ(header["completed"], 9);
  bool seen = false;
  for (std::size_t i = 1; i < manifest.size(); ++i) {
    auto row = json::parse(manifest[i]);
    if (row["id"] == victim.id) {
      seen = true;
      EXPECT_EQ(row["status"], "failed");
      EXPECT_TRUE(row["assignment"].is_null());
    }
  }
  EXPECT_TRUE(seen);
}

TEST_F(DistillerTest, SequentialFailureKeepsCompletedStages) {
  int calls = 0;
  auto responder = [&](const json& request) {
    return ++calls == 2 ? testing::status_response(400)
                        : testing::ok_completion(testing::synthetic_reply(request));
  };
  auto result = run_method2(Corpus({testing::taco_record()}), "teacher",
                            PromptStrategy::Sequential, gateway(responder), engine_, {1});
  ASSERT_EQ(result.failures.size(), 1u);
  ASSERT_EQ(result.failures[0].stages.size(), 1u);
  EXPECT_EQ(result.failures[0].stages[0].role, "stage1");
  EXPECT_NE(result.failures[0].cause.find("stage 2"), std::string::npos);
}

TEST_F(DistillerTest, OutputIndependentOfWorkerCount) {
  auto data = corpus(6, 30);
  auto ratio = SplitRatio::parse("0.5:0.3:0.2");
  auto serial = run_method3(data, "teacher", PromptStrategy::Sequential, ratio, 3, gateway(),
                            engine_, {1});
  testing::TempDir other;
  Gateway fresh(testing::http_config(other.path()),
                std::make_shared<ScriptedTransport>(testing::synthetic_responder()),
                std::make_shared<testing::FakeClock>());
  auto parallel =
      run_method3(data, "teacher", PromptStrategy::Sequential, ratio, 3, fresh, engine_, {8});
  EXPECT_EQ(serialize_run_manifest(serial), serialize_run_manifest(parallel));
  EXPECT_EQ(serialize_run_config(serial, "d"), serialize_run_config(parallel, "d"));
  EXPECT_EQ(serial.partition.preference, parallel.partition.preference);
}

TEST_F(DistillerTest, OrientationCheckCatchesTampering) {
  auto result = run_method2(corpus(7, 12), "teacher", PromptStrategy::Naive, gateway(), engine_);
  ASSERT_FALSE(result.partition.preference.empty());
  auto swapped = result;
  std::swap(swapped.partition.preference[0].chosen, swapped.partition.preference[0].rejected);
  EXPECT_THROW(check_pair_orientation(swapped), ValidationError);
  auto equal = result;
  equal.partition.preference[0].chosen.text = equal.partition.preference[0].rejected.text;
  EXPECT_THROW(check_pair_orientation(equal), ValidationError);

  auto direct = run_method1(Corpus({testing::taco_record()}), "GPT-4");
  direct.partition.preference[0].chosen.empathy_score = 2;
  EXPECT_THROW(check_pair_orientation(direct), ValidationError);
}

TEST_F(DistillerTest, RunConfigRecordsCountsAndRule) {
  auto result = run_method2(corpus(8, 10), "teacher", PromptStrategy::AllThree, gateway(),
                            engine_);
  auto config = json::parse(serialize_run_config(result, "abc"));
  EXPECT_EQ(config["strategy_label"], "2");
  EXPECT_EQ(config["template_digest"], "abc");
  EXPECT_EQ(config["counts"]["preference_pairs"], result.partition.preference.size());
  EXPECT_TRUE(config["ratio"].is_null());
  EXPECT_NE(config["split_rule"].get<std::string>().find("interpretation"), std::string::npos);
}

}  // namespace
}  // namespace empdistill
