#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "empdistill/corpus.hpp"
#include "empdistill/llm_gateway.hpp"
#include "empdistill/partitioner.hpp"
#include "empdistill/prompt_engine.hpp"

namespace empdistill {

enum class DistillationMethod { Direct, ImproveHuman, ImproveLlmInitial };

const char* to_string(DistillationMethod method);
// Accepts "1"/"2"/"3" or the names direct, improve_human, improve_llm_initial.
DistillationMethod method_from_string(std::string_view text);

struct DistillationRun {
  DistillationMethod method = DistillationMethod::Direct;
  std::string teacher;
  PromptStrategy strategy = PromptStrategy::Direct;
  std::uint64_t seed = 0;
  std::optional<SplitRatio> ratio;
};

// One LLM call made for a dialogue.
struct StageRecord {
  // "direct", "initial", "improve", or "stage1".."stage3" for Sequential.
  std::string role;
  std::string prompt_hash;
  std::string text;
  std::uint64_t latency_ms = 0;
  bool cached = false;
};

struct ManifestEntry {
  std::string id;
  std::optional<Assignment> assignment;
  std::vector<StageRecord> stages;
  std::string note;
};

struct DialogueFailure {
  std::string id;
  std::string cause;
  // Calls that completed before the failure.
  std::vector<StageRecord> stages;
};

struct ImprovedResponse {
  std::string dialogue_id;
  ScoredResponse initial;
  ScoredResponse improved;
  PromptStrategy strategy = PromptStrategy::Naive;
  // Per-stage outputs; only Sequential fills this (three entries).
  std::vector<std::string> stage_texts;
};

struct DistillationResult {
  DistillationRun run;
  DatasetPartition partition;
  // Completed dialogues, ordered by id.
  std::vector<ManifestEntry> manifest;
  std::vector<DialogueFailure> failures;
  std::vector<ImprovedResponse> improved;
  // Set when the run stopped before building a partition.
  std::optional<std::string> halt_reason;
  std::vector<std::string> notes;
};

struct DistillOptions {
  // Parallel dialogues; 0 means the gateway's max_in_flight.
  int workers = 0;
  double temperature = kGenerationTemperature;
  int max_tokens = 512;
};

// Method 1. Uses the corpus' scored responses for `teacher` when present.
// Otherwise, with a gateway, generates fresh responses under the direct
// prompt and halts with "scores required" (score rules need human scores).
DistillationResult run_method1(const Corpus& corpus, const std::string& teacher,
                               Gateway* gateway = nullptr, const PromptEngine* engine = nullptr,
                               const DistillOptions& options = {});

// Method 1 over several teachers, combined into one partition.
DistillationResult run_method1_combined(const Corpus& corpus,
                                        const std::vector<std::string>& teachers);

// Method 2: the teacher improves each human response. Human score 3 -> Sft
// with the original and the improvement; human 1/2 -> Pref with the
// improvement chosen over the original.
DistillationResult run_method2(const Corpus& corpus, const std::string& teacher,
                               PromptStrategy strategy, Gateway& gateway,
                               const PromptEngine& engine, const DistillOptions& options = {});

// Method 3: the teacher writes an initial response with the direct prompt and
// then improves it; dialogues are split by `ratio_partition(ratio, seed)`.
DistillationResult run_method3(const Corpus& corpus, const std::string& teacher,
                               PromptStrategy strategy, const SplitRatio& ratio,
                               std::uint64_t seed, Gateway& gateway, const PromptEngine& engine,
                               const DistillOptions& options = {});

// Throws ValidationError if any preference pair has chosen == rejected, a
// score-rule pair is misoriented, or an improvement pair rejects the
// improved text.
void check_pair_orientation(const DistillationResult& result);

// runs/<run-id>/manifest.jsonl and config.json contents.
std::string serialize_run_manifest(const DistillationResult& result);
std::string serialize_run_config(const DistillationResult& result,
                                 const std::string& template_digest);

}  // namespace empdistill
