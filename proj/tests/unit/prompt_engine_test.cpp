#include <gtest/gtest.h>

#include "empdistill/errors.hpp"
#include "empdistill/hashing.hpp"
#include "empdistill/prompt_engine.hpp"
#include "empdistill/text.hpp"
#include "test_support.hpp"

namespace empdistill {
namespace {

using testing::default_engine;
using testing::fixture_path;

std::string fixture(const std::string& name) {
  return normalize_template(read_file(fixture_path("prompts/" + name)));
}

DialogueContext taco_context() { return testing::taco_record().context; }

std::size_t occurrences(const std::string& haystack, std::string_view needle) {
  std::size_t count = 0;
  for (auto pos = haystack.find(needle); pos != std::string::npos;
       pos = haystack.find(needle, pos + 1)) {
    ++count;
  }
  return count;
}

struct FixtureCase {
  PromptStrategy strategy;
  const char* file;
};

const FixtureCase kSingleStage[] = {
    {PromptStrategy::Naive, "naive.txt"},
    {PromptStrategy::Cognitive, "prompt_1_1.txt"},
    {PromptStrategy::Affective, "prompt_1_2.txt"},
    {PromptStrategy::Compassionate, "prompt_1_3.txt"},
    {PromptStrategy::AllThree, "prompt_2.txt"},
    {PromptStrategy::LackingDimension, "prompt_4.txt"},
};

TEST(PromptRender, TemplateSectionsMatchFixturesByteForByte) {
  auto engine = default_engine();
  for (const auto& c : kSingleStage) {
    auto prompts = engine.render(c.strategy, taco_context(), testing::kTacoHuman);
    ASSERT_EQ(prompts.size(), 1u);
    EXPECT_EQ(std::string(template_section(prompts[0])), fixture(c.file)) << c.file;
  }
}

TEST(PromptRender, SequentialStagesMatchSingleDimensionFixtures) {
  auto engine = default_engine();
  auto prompts = engine.render(PromptStrategy::Sequential, taco_context(), testing::kTacoHuman);
  ASSERT_EQ(prompts.size(), 3u);
  const char* files[] = {"prompt_1_1.txt", "prompt_1_2.txt", "prompt_1_3.txt"};
  for (int i = 0; i < 3; ++i) {
    EXPECT_EQ(prompts[i].stage_index, i);
    EXPECT_EQ(std::string(template_section(prompts[i])), fixture(files[i]));
    EXPECT_EQ(prompts[i].awaiting_response, i > 0);
  }
  EXPECT_EQ(prompts[0].strategy, PromptStrategy::Cognitive);
  EXPECT_EQ(prompts[1].strategy, PromptStrategy::Affective);
  EXPECT_EQ(prompts[2].strategy, PromptStrategy::Compassionate);
}

TEST(PromptRender, FullTextLayout) {
  auto engine = default_engine();
  auto ctx = taco_context();
  auto naive = engine.render(PromptStrategy::Naive, ctx, testing::kTacoHuman)[0];
  EXPECT_EQ(naive.user_message, fixture("naive.txt") + "\n\nContext: " + ctx.situation +
                                    "\nSpeaker Utterance: " + ctx.speaker_utterance +
                                    "\nResponse: " + testing::kTacoHuman);
  EXPECT_NE(naive.user_message.find("higher empathetic quality"), std::string::npos);
  EXPECT_NE(naive.user_message.find("retains the original meaning, intention, and emotion"),
            std::string::npos);
  EXPECT_FALSE(naive.system_preamble.has_value());

  auto direct = engine.render(PromptStrategy::Direct, ctx, std::nullopt)[0];
  EXPECT_EQ(direct.user_message,
            engine.templates().body(PromptStrategy::Direct) + "\n\n" + format_dialogue_input(ctx));
}

TEST(PromptRender, CognitiveMentionsItsDimension) {
  auto prompt = default_engine().render(PromptStrategy::Cognitive, taco_context(), "ok")[0];
  EXPECT_NE(prompt.user_message.find("improved specifically along the cognitive dimension"),
            std::string::npos);
  EXPECT_NE(prompt.user_message.find("see the world through their eyes"), std::string::npos);
}

TEST(PromptRender, StructureRule) {
  auto engine = default_engine();
  const auto naive = fixture("naive.txt");
  const std::string_view definitions[] = {
      dimension_definition(EmpathyDimension::Cognitive),
      dimension_definition(EmpathyDimension::Affective),
      dimension_definition(EmpathyDimension::Compassionate)};
  for (auto strategy : improvement_strategies()) {
    for (const auto& prompt : engine.render(strategy, taco_context(), "fine")) {
      const auto& text = prompt.user_message;
      EXPECT_EQ(text.rfind(naive, 0), 0u) << to_string(strategy);
      std::size_t present = 0;
      for (auto d : definitions) present += occurrences(text, d);
      bool all = strategy == PromptStrategy::AllThree ||
                 strategy == PromptStrategy::LackingDimension;
      std::size_t expected = strategy == PromptStrategy::Naive ? 0 : all ? 3 : 1;
      EXPECT_EQ(present, expected) << to_string(strategy) << " stage " << prompt.stage_index;
    }
  }
}

TEST(PromptRender, InitialResponseRules) {
  auto engine = default_engine();
  auto ctx = taco_context();
  EXPECT_THROW(engine.render(PromptStrategy::Direct, ctx, "x"), ValidationError);
  EXPECT_THROW(engine.render(PromptStrategy::Naive, ctx, std::nullopt), ValidationError);
  EXPECT_THROW(engine.render(PromptStrategy::Naive, ctx, "   "), ValidationError);
  auto trimmed = engine.render(PromptStrategy::Naive, ctx, "  hi  ")[0];
  EXPECT_TRUE(trimmed.user_message.ends_with("\nResponse: hi"));
}

TEST(PromptRender, SplicingFillsOnlyOpenSlots) {
  auto engine = default_engine();
  auto prompts = engine.render(PromptStrategy::Sequential, taco_context(), "first");
  EXPECT_THROW(fill_response_slot(prompts[0], "x"), ValidationError);
  EXPECT_THROW(fill_response_slot(prompts[1], " \n"), ValidationError);
  auto filled = fill_response_slot(prompts[1], " stage one output ");
  EXPECT_FALSE(filled.awaiting_response);
  EXPECT_EQ(filled.user_message, prompts[1].user_message + "stage one output");
  EXPECT_THROW(fill_response_slot(filled, "again"), ValidationError);
}

TEST(PromptRender, JudgePrompt) {
  auto engine = default_engine();
  auto ctx = taco_context();
  auto prompt = engine.render_judge(ctx, "alpha", "beta");
  EXPECT_EQ(prompt.user_message, engine.templates().judge() + "\n\n" +
                                     format_dialogue_input(ctx) +
                                     "\nResponse 1: alpha\nResponse 2: beta");
  EXPECT_THROW(engine.render_judge(ctx, "same", " same "), ValidationError);
  EXPECT_THROW(engine.render_judge(ctx, "", "b"), ValidationError);
}

TEST(Strategies, NamesAndLabels) {
  EXPECT_EQ(strategy_from_string("cog"), PromptStrategy::Cognitive);
  EXPECT_EQ(strategy_from_string("1.2"), PromptStrategy::Affective);
  EXPECT_EQ(strategy_from_string("AllThree"), PromptStrategy::AllThree);
  EXPECT_EQ(strategy_from_string(" SEQ "), PromptStrategy::Sequential);
  EXPECT_THROW(strategy_from_string("5"), ValidationError);
  std::string labels;
  for (auto s : improvement_strategies()) labels += std::string(table_label(s)) + " ";
  EXPECT_EQ(labels, "N 1.1 1.2 1.3 2 3 4 ");
  EXPECT_FALSE(is_improvement(PromptStrategy::Direct));
  EXPECT_EQ(expand_stages(PromptStrategy::Naive), std::vector{PromptStrategy::Naive});
}

TEST(Templates, ShippedTemplatesArePinned) {
  auto dir = TemplateSet::default_directory();
  const std::pair<const char*, const char*> pins[] = {
      {"affective.txt", "a28dcb982aae6b2ee2783f1f40819013d8d4b8bfb9164f6259ae4322f0aaaa9a"},
      {"all_three.txt", "d55f0669b6f4adf429706ca3742d3619c67427f11cda676579f667a7d5a1b98f"},
      {"cognitive.txt", "915e96603e8573dbbbc542dd6211601ff36867395b344d675907c293b59c320c"},
      {"compassionate.txt", "6f5d22ba9cf2559c6d2266d0169a0b820f8697aa31e1c10f347eb93af3db4b83"},
      {"direct.txt", "13ab332d77f0663ba4cf26d4565bfb12c6469c9b39b4439037cac487eefb32e5"},
      {"judge.txt", "d514bec6b72ed52e32e579990a43e8c052193a5c764b0e74ecfa984cad5cfc22"},
      {"lacking.txt", "33cb5d1543841e1717a339712e4cfe20cd4ef6c56e114c28d168b92855e884e5"},
      {"naive.txt", "83b6ea5609755271707c3a097d9ec0b4aa3395ed3af31874a48e629985464f7b"},
  };
  for (const auto& [file, hash] : pins) EXPECT_EQ(sha256_hex(read_file(dir / file)), hash) << file;
}

TEST(Templates, LoadNormalizesAndValidates) {
  testing::TempDir dir;
  auto source = TemplateSet::default_directory();
  for (const auto& entry : std::filesystem::directory_iterator(source)) {
    auto text = read_file(entry.path());
    std::string crlf;
    for (char c : text) crlf += c == '\n' ? std::string("\r\n") : std::string(1, c);
    write_file_atomic(dir / entry.path().filename().string(), crlf + "\r\n\r\n");
  }
  auto reloaded = TemplateSet::load(dir.path());
  EXPECT_EQ(reloaded.digest(), TemplateSet::load(source).digest());

  write_file_atomic(dir / "judge.txt", "\n \n");
  EXPECT_THROW(TemplateSet::load(dir.path()), ValidationError);
  std::filesystem::remove(dir / "judge.txt");
  EXPECT_THROW(TemplateSet::load(dir.path()), IoError);
  EXPECT_THROW(reloaded.body(PromptStrategy::Sequential), ValidationError);
}

}  // namespace
}  // namespace empdistill
