#include "empdistill/prompt_engine.hpp"

#include <cstdlib>

#include "empdistill/errors.hpp"
#include "empdistill/hashing.hpp"
#include "empdistill/text.hpp"

namespace empdistill {

namespace {

constexpr std::string_view kSectionBreak = "\n\n";
constexpr std::string_view kResponseLabel = "\nResponse: ";

struct StrategyNames {
  PromptStrategy strategy;
  const char* cli;
  const char* label;
  const char* name;
  const char* file;
};

constexpr StrategyNames kStrategies[] = {
    {PromptStrategy::Direct, "direct", "D", "Direct", "direct.txt"},
    {PromptStrategy::Naive, "naive", "N", "Naive", "naive.txt"},
    {PromptStrategy::Cognitive, "cog", "1.1", "Cognitive", "cognitive.txt"},
    {PromptStrategy::Affective, "aff", "1.2", "Affective", "affective.txt"},
    {PromptStrategy::Compassionate, "comp", "1.3", "Compassionate", "compassionate.txt"},
    {PromptStrategy::AllThree, "all", "2", "AllThree", "all_three.txt"},
    {PromptStrategy::Sequential, "seq", "3", "Sequential", nullptr},
    {PromptStrategy::LackingDimension, "lacking", "4", "LackingDimension", "lacking.txt"},
};

const StrategyNames& names_of(PromptStrategy strategy) {
  for (const auto& entry : kStrategies) {
    if (entry.strategy == strategy) return entry;
  }
  throw ValidationError("unknown prompt strategy");
}

}  // namespace

const char* to_string(PromptStrategy strategy) { return names_of(strategy).cli; }

const char* table_label(PromptStrategy strategy) { return names_of(strategy).label; }

PromptStrategy strategy_from_string(std::string_view text) {
  auto lowered = to_lower(trim(text));
  for (const auto& entry : kStrategies) {
    if (lowered == entry.cli || lowered == to_lower(entry.label) ||
        lowered == to_lower(entry.name)) {
      return entry.strategy;
    }
  }
  throw ValidationError("unknown strategy \"" + std::string(text) +
                        "\" (expected naive, cog, aff, comp, all, seq, lacking or direct)");
}

bool is_improvement(PromptStrategy strategy) { return strategy != PromptStrategy::Direct; }

const std::vector<PromptStrategy>& improvement_strategies() {
  static const std::vector<PromptStrategy> kAll{
      PromptStrategy::Naive,         PromptStrategy::Cognitive,  PromptStrategy::Affective,
      PromptStrategy::Compassionate, PromptStrategy::AllThree,   PromptStrategy::Sequential,
      PromptStrategy::LackingDimension};
  return kAll;
}

std::vector<PromptStrategy> expand_stages(PromptStrategy strategy) {
  if (strategy == PromptStrategy::Sequential) {
    return {PromptStrategy::Cognitive, PromptStrategy::Affective, PromptStrategy::Compassionate};
  }
  return {strategy};
}

std::string_view dimension_definition(EmpathyDimension dimension) {
  switch (dimension) {
    case EmpathyDimension::Cognitive:
      return "Cognitive empathy is the ability to understand another person's thoughts, "
             "beliefs, and intentions. It is being able to see the world through their eyes "
             "and understand their point of view.";
    case EmpathyDimension::Affective:
      return "Affective empathy is the ability to experience the emotions of another person. "
             "It is feeling what they are feeling, both positive and negative.";
    case EmpathyDimension::Compassionate:
      return "Compassionate empathy is the ability to not only understand and share another "
             "person's feelings, but also to be moved to help if needed. It involves a deeper "
             "level of emotional engagement than cognitive empathy, prompting action to "
             "alleviate another's distress or suffering.";
  }
  return {};
}

std::string normalize_template(std::string_view raw) {
  std::string out;
  out.reserve(raw.size());
  for (std::size_t i = 0; i < raw.size(); ++i) {
    if (raw[i] == '\r' && i + 1 < raw.size() && raw[i + 1] == '\n') continue;
    out.push_back(raw[i]);
  }
  while (!out.empty() && (out.back() == '\n' || out.back() == '\r')) out.pop_back();
  return out;
}

std::filesystem::path TemplateSet::default_directory() {
  if (const char* env = std::getenv("EMPDISTILL_TEMPLATE_DIR"); env && *env) return env;
  return EMPDISTILL_DEFAULT_TEMPLATE_DIR;
}

TemplateSet TemplateSet::load(const std::filesystem::path& dir) {
  TemplateSet set;
  auto read_template = [&](const char* file) {
    auto path = dir / file;
    if (!std::filesystem::exists(path)) throw IoError("missing template " + path.string());
    auto body = normalize_template(read_file(path));
    if (is_blank(body)) throw ValidationError("template " + path.string() + " is empty");
    return body;
  };
  for (const auto& entry : kStrategies) {
    if (entry.file) set.bodies_.emplace(entry.strategy, read_template(entry.file));
  }
  set.judge_ = read_template("judge.txt");
  return set;
}

TemplateSet TemplateSet::load_default() { return load(default_directory()); }

const std::string& TemplateSet::body(PromptStrategy strategy) const {
  auto it = bodies_.find(strategy);
  if (it == bodies_.end()) {
    throw ValidationError(std::string("no single template for strategy ") + to_string(strategy));
  }
  return it->second;
}

std::string TemplateSet::digest() const {
  std::string all;
  for (const auto& [strategy, text] : bodies_) {
    all += to_string(strategy);
    all += '\0';
    all += text;
    all += '\0';
  }
  all += "judge";
  all += '\0';
  all += judge_;
  return sha256_hex(all);
}

std::string format_dialogue_input(const DialogueContext& context) {
  return "Context: " + context.situation + "\nSpeaker Utterance: " + context.speaker_utterance;
}

std::vector<RenderedPrompt> PromptEngine::render(
    PromptStrategy strategy, const DialogueContext& context,
    std::optional<std::string_view> initial_response) const {
  if (strategy == PromptStrategy::Direct) {
    if (initial_response) {
      throw ValidationError("the direct prompt does not take an initial response");
    }
    RenderedPrompt prompt;
    prompt.strategy = strategy;
    prompt.user_message = templates_.body(strategy) + std::string(kSectionBreak) +
                          format_dialogue_input(context);
    return {prompt};
  }
  if (!initial_response || is_blank(*initial_response)) {
    throw ValidationError(std::string("strategy ") + to_string(strategy) +
                          " needs an initial response to improve");
  }

  std::vector<RenderedPrompt> prompts;
  int stage = 0;
  for (auto step : expand_stages(strategy)) {
    RenderedPrompt prompt;
    prompt.strategy = step;
    prompt.stage_index = stage;
    prompt.user_message = templates_.body(step) + std::string(kSectionBreak) +
                          format_dialogue_input(context) + std::string(kResponseLabel);
    if (stage == 0) {
      prompt.user_message += trim(*initial_response);
    } else {
      prompt.awaiting_response = true;
    }
    prompts.push_back(std::move(prompt));
    ++stage;
  }
  return prompts;
}

RenderedPrompt PromptEngine::render_judge(const DialogueContext& context,
                                          std::string_view response_1,
                                          std::string_view response_2) const {
  auto first = trim(response_1);
  auto second = trim(response_2);
  if (first.empty() || second.empty()) throw ValidationError("judge responses must be non-empty");
  if (first == second) throw ValidationError("judge responses are identical");
  RenderedPrompt prompt;
  prompt.strategy = PromptStrategy::Direct;
  prompt.user_message = templates_.judge() + std::string(kSectionBreak) +
                        format_dialogue_input(context) + "\nResponse 1: " + std::string(first) +
                        "\nResponse 2: " + std::string(second);
  return prompt;
}

RenderedPrompt fill_response_slot(const RenderedPrompt& prompt, std::string_view response) {
  if (!prompt.awaiting_response) {
    throw ValidationError("prompt stage " + std::to_string(prompt.stage_index) +
                          " has no open response slot");
  }
  auto text = trim(response);
  if (text.empty()) throw ValidationError("cannot fill a response slot with empty text");
  RenderedPrompt filled = prompt;
  filled.user_message += text;
  filled.awaiting_response = false;
  return filled;
}

std::string_view template_section(const RenderedPrompt& prompt) {
  std::string_view message = prompt.user_message;
  auto pos = message.find(std::string(kSectionBreak) + "Context: ");
  return pos == std::string_view::npos ? message : message.substr(0, pos);
}

}  // namespace empdistill
