#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "empdistill/corpus.hpp"
#include "empdistill/distiller.hpp"
#include "empdistill/llm_gateway.hpp"
#include "empdistill/prompt_engine.hpp"

namespace empdistill {

// A model reachable through a gateway.
struct ModelEndpoint {
  Gateway* gateway = nullptr;
  std::string model;
};

struct HeadToHead {
  // Dialogue id -> (text of model A, text of model B).
  std::map<std::string, std::pair<std::string, std::string>> texts;
  // Dialogues dropped for both models because either one failed.
  std::vector<std::string> excluded;
};

// Both models answer every context under the Direct prompt. Throws
// ProviderError when no context yields a pair, ValidationError on empty input.
HeadToHead generate_head_to_head(const std::vector<DialogueContext>& contexts,
                                 const ModelEndpoint& model_a, const ModelEndpoint& model_b,
                                 const PromptEngine& engine, std::uint64_t seed = 0,
                                 int workers = 0);

enum class Winner { A, B, Tie };

const char* to_string(Winner winner);

// One judge call. `a_first` is true when A was shown as Response 1.
struct OrderTrial {
  bool a_first = true;
  std::string raw;
  std::optional<int> label;
};

struct JudgeVerdict {
  std::string dialogue_id;
  std::string judge_model;
  Winner winner = Winner::Tie;
  std::vector<OrderTrial> trials;
  // Every judge reply, re-asks included.
  std::vector<std::string> raw_texts;
  bool parse_failure = false;
};

// 1 or 2 when the reply's first token is exactly that label (trailing
// punctuation allowed), otherwise nullopt.
std::optional<int> parse_judge_label(std::string_view reply);

inline constexpr std::string_view kJudgeReask =
    "Reply with only the single token 1 or 2.";

// Judges both presentation orders at temperature 0. A reply without a valid
// label is re-asked once; if it still fails the verdict is a Tie with
// parse_failure set. Disagreeing orders also give a Tie.
JudgeVerdict judge_pair(Gateway& gateway, const std::string& judge_model,
                        const PromptEngine& engine, const DialogueContext& context,
                        std::string_view text_a, std::string_view text_b);

// Judges every pair in `head_to_head`, in parallel; verdicts are ordered by
// dialogue id. Pairs with identical texts are skipped and reported in
// `skipped_identical`.
std::vector<JudgeVerdict> judge_all(const HeadToHead& head_to_head,
                                    const std::vector<DialogueContext>& contexts,
                                    const ModelEndpoint& judge, const PromptEngine& engine,
                                    int workers = 0,
                                    std::vector<std::string>* skipped_identical = nullptr);

// Exact non-negative rational.
struct Fraction {
  std::uint64_t numerator = 0;
  std::uint64_t denominator = 1;

  Fraction reduced() const;
  bool operator==(const Fraction& other) const;
};

struct WinRateReport {
  std::string candidate;
  std::string baseline;
  std::string judge;
  std::uint64_t n = 0;
  std::uint64_t wins = 0;
  std::uint64_t losses = 0;
  std::uint64_t ties = 0;

  // 100 * (wins + ties / 2) / n as an exact fraction.
  Fraction win_rate_exact() const;
  double win_rate_percent() const;
  // One decimal, halves rounded up: "90.4".
  std::string rendered() const;
};

// Candidate is side A (or B when `candidate_is_a` is false). Throws
// ValidationError on an empty list.
WinRateReport compute_win_rate(const std::vector<JudgeVerdict>& verdicts, bool candidate_is_a,
                               const std::string& candidate, const std::string& baseline);

std::string serialize_verdicts(const std::vector<JudgeVerdict>& verdicts);
std::string serialize_report(const WinRateReport& report);

// One populated cell of the win-rate table.
struct ReportCell {
  // e.g. "gpt-4o -> llama3-8b"
  std::string row_label;
  // e.g. "sft", "sft+dpo"
  std::string stage;
  DistillationMethod method = DistillationMethod::ImproveHuman;
  PromptStrategy strategy = PromptStrategy::Naive;
  WinRateReport report;
};

// Rows are (row_label, stage) in order of first appearance. Columns are the
// Direct method followed by the seven improvement prompts under
// ImproveHuman and under ImproveLlmInitial. Throws ValidationError on empty
// input, mixed judges, duplicate cells, or cells outside the grid.
std::string render_report_matrix(const std::vector<ReportCell>& cells);
// One JSON record per cell.
std::string serialize_report_matrix(const std::vector<ReportCell>& cells);

}  // namespace empdistill
