#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "empdistill/corpus.hpp"

namespace empdistill {

enum class PromptStrategy {
  Direct,
  Naive,
  Cognitive,
  Affective,
  Compassionate,
  AllThree,
  Sequential,
  LackingDimension,
};

// CLI spelling: direct, naive, cog, aff, comp, all, seq, lacking.
const char* to_string(PromptStrategy strategy);
// Column label in win-rate tables: D, N, 1.1, 1.2, 1.3, 2, 3, 4.
const char* table_label(PromptStrategy strategy);
// Accepts the CLI spelling, the table label, or the enumerator name.
PromptStrategy strategy_from_string(std::string_view text);

bool is_improvement(PromptStrategy strategy);
// The seven improvement prompts in table order: N, 1.1, 1.2, 1.3, 2, 3, 4.
const std::vector<PromptStrategy>& improvement_strategies();
// Sequential -> {Cognitive, Affective, Compassionate}; anything else -> {itself}.
std::vector<PromptStrategy> expand_stages(PromptStrategy strategy);

enum class EmpathyDimension { Cognitive, Affective, Compassionate };

// Canonical definition sentence(s) of one empathy dimension.
std::string_view dimension_definition(EmpathyDimension dimension);

struct RenderedPrompt {
  std::optional<std::string> system_preamble;
  std::string user_message;
  // Position inside a Sequential chain; 0 otherwise.
  int stage_index = 0;
  // Template the message was rendered from.
  PromptStrategy strategy = PromptStrategy::Direct;
  // The trailing "Response: " slot is empty and waits for the previous
  // stage's output (see fill_response_slot).
  bool awaiting_response = false;

  bool operator==(const RenderedPrompt&) const = default;
};

// Prompt templates loaded from a directory holding
// {direct,naive,cognitive,affective,compassionate,all_three,lacking,judge}.txt.
// Line endings are normalized to "\n" and trailing newlines dropped.
class TemplateSet {
 public:
  static TemplateSet load(const std::filesystem::path& dir);
  // $EMPDISTILL_TEMPLATE_DIR when set, otherwise the source-tree templates/.
  static TemplateSet load_default();
  static std::filesystem::path default_directory();

  // Template body for a single-call strategy. Sequential has no template of
  // its own; ask for its stages instead.
  const std::string& body(PromptStrategy strategy) const;
  const std::string& judge() const { return judge_; }
  // Digest over every template, recorded in run configs.
  std::string digest() const;

 private:
  std::map<PromptStrategy, std::string> bodies_;
  std::string judge_;
};

std::string normalize_template(std::string_view raw);

// "Context: <situation>\nSpeaker Utterance: <utterance>"
std::string format_dialogue_input(const DialogueContext& context);

class PromptEngine {
 public:
  explicit PromptEngine(TemplateSet templates) : templates_(std::move(templates)) {}

  // One prompt per call; Sequential yields three whose later stages await the
  // previous stage's output. Throws ValidationError when `initial_response`
  // is missing for an improvement strategy or supplied for Direct.
  std::vector<RenderedPrompt> render(PromptStrategy strategy, const DialogueContext& context,
                                     std::optional<std::string_view> initial_response) const;

  // Pairwise judging prompt with the texts under "Response 1"/"Response 2".
  RenderedPrompt render_judge(const DialogueContext& context, std::string_view response_1,
                              std::string_view response_2) const;

  const TemplateSet& templates() const noexcept { return templates_; }

 private:
  TemplateSet templates_;
};

// Copy of `prompt` with its open response slot filled. Throws
// ValidationError if the prompt is not awaiting a response.
RenderedPrompt fill_response_slot(const RenderedPrompt& prompt, std::string_view response);

// The instruction block of a rendered prompt, i.e. everything before the
// dialogue sections.
std::string_view template_section(const RenderedPrompt& prompt);

}  // namespace empdistill
