#include "empdistill/distiller.hpp"

#include <algorithm>
#include <numeric>
#include <unordered_map>

#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include "empdistill/text.hpp"
#include "parallel.hpp"

namespace empdistill {

using nlohmann::json;

const char* to_string(DistillationMethod method) {
  switch (method) {
    case DistillationMethod::Direct: return "direct";
    case DistillationMethod::ImproveHuman: return "improve_human";
    case DistillationMethod::ImproveLlmInitial: return "improve_llm_initial";
  }
  return "unknown";
}

DistillationMethod method_from_string(std::string_view text) {
  auto lowered = to_lower(trim(text));
  if (lowered == "1" || lowered == "direct") return DistillationMethod::Direct;
  if (lowered == "2" || lowered == "improve_human") return DistillationMethod::ImproveHuman;
  if (lowered == "3" || lowered == "improve_llm_initial") {
    return DistillationMethod::ImproveLlmInitial;
  }
  throw ValidationError("unknown method \"" + std::string(text) + "\" (expected 1, 2 or 3)");
}

namespace {

// Generation outcome for one dialogue.
struct Outcome {
  bool ok = false;
  std::string failure;
  std::vector<StageRecord> stages;
  std::string initial_text;
  std::string improved_text;
  std::vector<std::string> stage_texts;
};

StageRecord stage_of(const std::string& role, const CompletionResult& result) {
  return {role, result.request_hash, std::string(trim(result.text)), result.latency_ms,
          result.cached};
}

std::string complete_direct(Gateway& gateway, const PromptEngine& engine,
                            const DialogueContext& context, const std::string& teacher,
                            std::uint64_t seed, const DistillOptions& options,
                            const std::string& role, Outcome& outcome) {
  auto prompt = engine.render(PromptStrategy::Direct, context, std::nullopt).front();
  auto result = gateway.complete(make_request(teacher, prompt, options.temperature,
                                              static_cast<std::int64_t>(seed), options.max_tokens));
  auto record = stage_of(role, result);
  outcome.stages.push_back(record);
  if (record.text.empty()) throw ProviderError(ProviderFailure::MalformedResponse, "empty completion");
  return record.text;
}

void complete_improvement(Gateway& gateway, const PromptEngine& engine,
                          const DialogueContext& context, PromptStrategy strategy,
                          const std::string& initial, const std::string& teacher,
                          std::uint64_t seed, const DistillOptions& options, Outcome& outcome) {
  auto prompts = engine.render(strategy, context, initial);
  if (strategy != PromptStrategy::Sequential) {
    auto result = gateway.complete(make_request(teacher, prompts.front(), options.temperature,
                                                static_cast<std::int64_t>(seed),
                                                options.max_tokens));
    auto record = stage_of("improve", result);
    outcome.stages.push_back(record);
    if (record.text.empty()) {
      throw ProviderError(ProviderFailure::MalformedResponse, "empty completion");
    }
    outcome.improved_text = record.text;
    return;
  }
  ChainSettings settings{teacher, options.temperature, static_cast<std::int64_t>(seed),
                         options.max_tokens};
  try {
    auto chain = gateway.complete_chain(prompts, settings);
    for (std::size_t i = 0; i < chain.results.size(); ++i) {
      outcome.stages.push_back(stage_of("stage" + std::to_string(i + 1), chain.results[i]));
    }
    outcome.stage_texts = chain.texts;
    outcome.improved_text = chain.texts.back();
  } catch (const ChainStageError& e) {
    for (std::size_t i = 0; i < e.completed().size(); ++i) {
      outcome.stages.push_back({"stage" + std::to_string(i + 1), "", e.completed()[i], 0, false});
    }
    throw;
  }
}

template <typename Generate>
std::vector<Outcome> generate_all(const Corpus& corpus, Gateway& gateway,
                                  const DistillOptions& options, Generate&& generate) {
  std::vector<Outcome> outcomes(corpus.size());
  int workers = options.workers > 0 ? options.workers : gateway.config().max_in_flight;
  detail::parallel_for(corpus.size(), workers, [&](std::size_t i) {
    auto& outcome = outcomes[i];
    try {
      generate(corpus.records()[i], outcome);
      outcome.ok = true;
    } catch (const ProviderError& e) {
      outcome.failure = e.what();
    }
  });
  return outcomes;
}

// Record indices ordered by dialogue id.
std::vector<std::size_t> id_order(const Corpus& corpus) {
  std::vector<std::size_t> order(corpus.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return corpus.records()[a].context.id < corpus.records()[b].context.id;
  });
  return order;
}

void require_improvement_strategy(PromptStrategy strategy) {
  if (!is_improvement(strategy)) throw ValidationError("improvement strategy required");
}

void require_scored_human(const Corpus& corpus) {
  const auto human = ResponderId::human();
  for (const auto& record : corpus.records()) {
    const auto* response = record.find(human);
    if (!response) {
      throw ValidationError("dialogue " + record.context.id + " has no human response");
    }
    if (!response->empathy_score) {
      throw ValidationError("dialogue " + record.context.id + ": human response is unscored");
    }
  }
}

void log_failures(const DistillationResult& result) {
  for (const auto& failure : result.failures) {
    spdlog::warn("dialogue {} failed: {}", failure.id, failure.cause);
  }
}

}  // namespace

DistillationResult run_method1(const Corpus& corpus, const std::string& teacher, Gateway* gateway,
                               const PromptEngine* engine, const DistillOptions& options) {
  DistillationResult result;
  result.run.method = DistillationMethod::Direct;
  result.run.teacher = teacher;
  result.run.strategy = PromptStrategy::Direct;
  const auto model = ResponderId::model(teacher);

  if (corpus.has_responder(model)) {
    result.partition = partition_by_scores(corpus, model);
    for (const auto& record : corpus.records()) {
      ManifestEntry entry;
      entry.id = record.context.id;
      entry.assignment = result.partition.assignment.at(entry.id);
      entry.note = "pre-existing scored response";
      result.manifest.push_back(std::move(entry));
    }
    std::sort(result.manifest.begin(), result.manifest.end(),
              [](const auto& a, const auto& b) { return a.id < b.id; });
    check_pair_orientation(result);
    return result;
  }
  if (!gateway || !engine) {
    throw ProviderError(ProviderFailure::Unconfigured,
                        "teacher " + teacher + " is absent from the corpus and no gateway is configured");
  }

  auto outcomes = generate_all(corpus, *gateway, options, [&](const DialogueRecord& record,
                                                               Outcome& outcome) {
    complete_direct(*gateway, *engine, record.context, teacher, result.run.seed, options, "direct",
                    outcome);
  });
  result.partition.teacher = model;
  result.partition.corpus_fingerprint = corpus.fingerprint();
  for (auto i : id_order(corpus)) {
    const auto& id = corpus.records()[i].context.id;
    if (outcomes[i].ok) {
      result.manifest.push_back({id, std::nullopt, std::move(outcomes[i].stages), "unscored"});
    } else {
      result.failures.push_back({id, outcomes[i].failure, std::move(outcomes[i].stages)});
    }
  }
  result.halt_reason =
      "scores required: freshly generated " + teacher +
      " responses carry no empathy scores, so score-based partitioning cannot run";
  log_failures(result);
  return result;
}

DistillationResult run_method1_combined(const Corpus& corpus,
                                        const std::vector<std::string>& teachers) {
  if (teachers.empty()) throw ValidationError("no teachers to combine");
  std::vector<DatasetPartition> members;
  for (const auto& teacher : teachers) {
    members.push_back(partition_by_scores(corpus, ResponderId::model(teacher)));
  }
  CombineStats stats;
  DistillationResult result;
  result.run.method = DistillationMethod::Direct;
  result.run.strategy = PromptStrategy::Direct;
  result.partition = combine_partitions(members, &stats);
  result.run.teacher = result.partition.teacher.name();
  for (const auto& [id, assignment] : result.partition.assignment) {
    result.manifest.push_back({id, assignment, {}, "pre-existing scored responses"});
  }
  result.notes.push_back("combined " + std::to_string(teachers.size()) + " teachers; removed " +
                         std::to_string(stats.duplicate_sft_removed) +
                         " duplicate SFT examples and " +
                         std::to_string(stats.duplicate_pairs_removed) + " duplicate pairs");
  check_pair_orientation(result);
  return result;
}

DistillationResult run_method2(const Corpus& corpus, const std::string& teacher,
                               PromptStrategy strategy, Gateway& gateway,
                               const PromptEngine& engine, const DistillOptions& options) {
  require_improvement_strategy(strategy);
  require_scored_human(corpus);
  DistillationResult result;
  result.run.method = DistillationMethod::ImproveHuman;
  result.run.teacher = teacher;
  result.run.strategy = strategy;
  const auto model = ResponderId::model(teacher);
  const auto human = ResponderId::human();

  auto outcomes = generate_all(corpus, gateway, options, [&](const DialogueRecord& record,
                                                             Outcome& outcome) {
    outcome.initial_text = record.find(human)->text;
    complete_improvement(gateway, engine, record.context, strategy, outcome.initial_text, teacher,
                         result.run.seed, options, outcome);
  });

  auto& partition = result.partition;
  partition.teacher = model;
  partition.corpus_fingerprint = corpus.fingerprint();
  for (auto i : id_order(corpus)) {
    const auto& record = corpus.records()[i];
    const auto& ctx = record.context;
    auto& outcome = outcomes[i];
    if (!outcome.ok) {
      result.failures.push_back({ctx.id, outcome.failure, std::move(outcome.stages)});
      continue;
    }
    const auto& original = *record.find(human);
    ScoredResponse improved{model, outcome.improved_text, std::nullopt};
    ManifestEntry entry{ctx.id, std::nullopt, std::move(outcome.stages), ""};
    if (*original.empathy_score == kMaxEmpathyScore) {
      entry.assignment = Assignment::Sft;
      partition.sft.push_back({ctx, original, Provenance::HumanOriginal});
      partition.sft.push_back({ctx, improved, Provenance::TeacherImproved});
    } else if (improved.text != original.text) {
      entry.assignment = Assignment::Pref;
      partition.preference.push_back({ctx, improved, original});
    } else {
      entry.assignment = Assignment::Test;
      entry.note = "improved text identical to the original; no preference pair";
      partition.test.push_back(ctx);
    }
    partition.assignment[ctx.id] = *entry.assignment;
    result.improved.push_back({ctx.id, original, improved, strategy, outcome.stage_texts});
    result.manifest.push_back(std::move(entry));
  }
  log_failures(result);
  check_pair_orientation(result);
  return result;
}

DistillationResult run_method3(const Corpus& corpus, const std::string& teacher,
                               PromptStrategy strategy, const SplitRatio& ratio,
                               std::uint64_t seed, Gateway& gateway, const PromptEngine& engine,
                               const DistillOptions& options) {
  require_improvement_strategy(strategy);
  if (corpus.empty()) throw ValidationError("cannot distill an empty corpus");
  DistillationResult result;
  result.run.method = DistillationMethod::ImproveLlmInitial;
  result.run.teacher = teacher;
  result.run.strategy = strategy;
  result.run.seed = seed;
  result.run.ratio = ratio;
  const auto model = ResponderId::model(teacher);
  const auto split = ratio_partition(corpus, ratio, seed);

  auto outcomes = generate_all(corpus, gateway, options, [&](const DialogueRecord& record,
                                                             Outcome& outcome) {
    outcome.initial_text = complete_direct(gateway, engine, record.context, teacher, seed, options,
                                           "initial", outcome);
    complete_improvement(gateway, engine, record.context, strategy, outcome.initial_text, teacher,
                         seed, options, outcome);
  });

  auto& partition = result.partition;
  partition.teacher = model;
  partition.corpus_fingerprint = corpus.fingerprint();
  for (auto i : id_order(corpus)) {
    const auto& ctx = corpus.records()[i].context;
    auto& outcome = outcomes[i];
    if (!outcome.ok) {
      result.failures.push_back({ctx.id, outcome.failure, std::move(outcome.stages)});
      continue;
    }
    ScoredResponse initial{model, outcome.initial_text, std::nullopt};
    ScoredResponse improved{model, outcome.improved_text, std::nullopt};
    ManifestEntry entry{ctx.id, split.at(ctx.id), std::move(outcome.stages), ""};
    switch (*entry.assignment) {
      case Assignment::Sft:
        partition.sft.push_back({ctx, initial, Provenance::TeacherInitial});
        partition.sft.push_back({ctx, improved, Provenance::TeacherImproved});
        break;
      case Assignment::Pref:
        if (improved.text != initial.text) {
          partition.preference.push_back({ctx, improved, initial});
        } else {
          entry.assignment = Assignment::Test;
          entry.note = "improved text identical to the initial response; no preference pair";
          partition.test.push_back(ctx);
        }
        break;
      case Assignment::Test:
        partition.test.push_back(ctx);
        break;
    }
    partition.assignment[ctx.id] = *entry.assignment;
    result.improved.push_back({ctx.id, initial, improved, strategy, outcome.stage_texts});
    result.manifest.push_back(std::move(entry));
  }
  log_failures(result);
  check_pair_orientation(result);
  return result;
}

void check_pair_orientation(const DistillationResult& result) {
  std::unordered_map<std::string, const ImprovedResponse*> improved;
  for (const auto& entry : result.improved) improved.emplace(entry.dialogue_id, &entry);
  for (const auto& pair : result.partition.preference) {
    const auto& id = pair.context.id;
    if (pair.chosen.text == pair.rejected.text) {
      throw ValidationError("dialogue " + id + ": chosen and rejected texts are identical");
    }
    if (result.run.method == DistillationMethod::Direct) {
      if (pair.chosen.empathy_score != kMaxEmpathyScore || !pair.rejected.empathy_score ||
          *pair.rejected.empathy_score >= kMaxEmpathyScore) {
        throw ValidationError("dialogue " + id + ": preference pair violates the score rule");
      }
      continue;
    }
    auto it = improved.find(id);
    if (it == improved.end() || pair.chosen.text != it->second->improved.text ||
        pair.rejected.text != it->second->initial.text) {
      throw ValidationError("dialogue " + id + ": preference pair does not prefer the improvement");
    }
  }
}

namespace {

std::string split_rule(const DistillationRun& run) {
  switch (run.method) {
    case DistillationMethod::Direct:
      return "human 3 and teacher 3 -> sft (both responses); human 1/2 and teacher 3 -> pref "
             "(teacher chosen, human rejected); otherwise test";
    case DistillationMethod::ImproveHuman:
      return "human score 3 -> sft (human original and improved response); human score 1/2 -> "
             "pref (improved chosen, human original rejected). This human-score split for "
             "improvement over human responses is an interpretation, not a published rule";
    case DistillationMethod::ImproveLlmInitial:
      return "seeded ratio split " + (run.ratio ? run.ratio->to_string() : std::string("?")) +
             "; sft -> initial and improved responses; pref -> improved chosen over initial; "
             "test -> context only";
  }
  return {};
}

json stage_json(const StageRecord& stage) {
  return {{"role", stage.role},           {"prompt_hash", stage.prompt_hash},
          {"text", stage.text},           {"latency_ms", stage.latency_ms},
          {"cached", stage.cached}};
}

}  // namespace

std::string serialize_run_manifest(const DistillationResult& result) {
  json header = {{"kind", "run_manifest"},
                 {"schema_version", 1},
                 {"method", to_string(result.run.method)},
                 {"teacher", result.run.teacher},
                 {"strategy", to_string(result.run.strategy)},
                 {"split_rule", split_rule(result.run)},
                 {"completed", result.manifest.size()},
                 {"failed", result.failures.size()}};
  header["halt_reason"] = result.halt_reason ? json(*result.halt_reason) : json();

  std::vector<std::pair<std::string, json>> rows;
  for (const auto& entry : result.manifest) {
    json row = {{"id", entry.id}, {"status", "ok"}};
    row["assignment"] = entry.assignment ? json(to_string(*entry.assignment)) : json();
    row["stages"] = json::array();
    for (const auto& stage : entry.stages) row["stages"].push_back(stage_json(stage));
    row["failure"] = json();
    if (!entry.note.empty()) row["note"] = entry.note;
    rows.emplace_back(entry.id, std::move(row));
  }
  for (const auto& failure : result.failures) {
    json row = {{"id", failure.id}, {"status", "failed"}, {"assignment", json()}};
    row["stages"] = json::array();
    for (const auto& stage : failure.stages) row["stages"].push_back(stage_json(stage));
    row["failure"] = failure.cause;
    rows.emplace_back(failure.id, std::move(row));
  }
  std::stable_sort(rows.begin(), rows.end(),
                   [](const auto& a, const auto& b) { return a.first < b.first; });
  std::string out = header.dump() + "\n";
  for (const auto& [id, row] : rows) out += row.dump() + "\n";
  return out;
}

std::string serialize_run_config(const DistillationResult& result,
                                 const std::string& template_digest) {
  const auto& run = result.run;
  json config = {{"method", to_string(run.method)},
                 {"teacher", run.teacher},
                 {"strategy", to_string(run.strategy)},
                 {"strategy_label", table_label(run.strategy)},
                 {"seed", run.seed},
                 {"split_rule", split_rule(run)},
                 {"template_digest", template_digest}};
  config["ratio"] = run.ratio ? json(run.ratio->to_string()) : json();
  config["counts"] = {{"sft_examples", result.partition.sft.size()},
                      {"preference_pairs", result.partition.preference.size()},
                      {"test_contexts", result.partition.test.size()},
                      {"failures", result.failures.size()}};
  config["notes"] = result.notes;
  return config.dump(2) + "\n";
}

}  // namespace empdistill
