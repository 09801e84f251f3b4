#include "empdistill/evaluator.hpp"

#include <algorithm>
#include <numeric>
#include <set>
#include <tuple>

#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include "empdistill/errors.hpp"
#include "empdistill/text.hpp"
#include "parallel.hpp"

namespace empdistill {

using nlohmann::json;
__extension__ typedef unsigned __int128 u128;

namespace {

int default_workers(const Gateway* gateway) {
  return gateway ? gateway->config().max_in_flight : 1;
}

std::string answer(const ModelEndpoint& endpoint, const PromptEngine& engine,
                   const DialogueContext& context, std::uint64_t seed) {
  auto prompt = engine.render(PromptStrategy::Direct, context, std::nullopt).front();
  auto result = endpoint.gateway->complete(make_request(endpoint.model, prompt,
                                                        kGenerationTemperature,
                                                        static_cast<std::int64_t>(seed)));
  auto text = std::string(trim(result.text));
  if (text.empty()) throw ProviderError(ProviderFailure::MalformedResponse, "empty completion");
  return text;
}

}  // namespace

HeadToHead generate_head_to_head(const std::vector<DialogueContext>& contexts,
                                 const ModelEndpoint& model_a, const ModelEndpoint& model_b,
                                 const PromptEngine& engine, std::uint64_t seed, int workers) {
  if (contexts.empty()) throw ValidationError("no test contexts");
  if (!model_a.gateway || !model_b.gateway) {
    throw ProviderError(ProviderFailure::Unconfigured, "head-to-head models need a gateway");
  }
  struct Slot {
    std::optional<std::string> a, b;
    std::string failure;
  };
  std::vector<Slot> slots(contexts.size());
  if (workers <= 0) workers = default_workers(model_a.gateway);
  detail::parallel_for(contexts.size(), workers, [&](std::size_t i) {
    auto& slot = slots[i];
    try {
      slot.a = answer(model_a, engine, contexts[i], seed);
    } catch (const ProviderError& e) {
      slot.failure = model_a.model + ": " + e.what();
    }
    try {
      slot.b = answer(model_b, engine, contexts[i], seed);
    } catch (const ProviderError& e) {
      if (!slot.failure.empty()) slot.failure += "; ";
      slot.failure += model_b.model + ": " + e.what();
    }
  });

  HeadToHead out;
  for (std::size_t i = 0; i < contexts.size(); ++i) {
    const auto& id = contexts[i].id;
    if (slots[i].a && slots[i].b) {
      if (!out.texts.emplace(id, std::make_pair(*slots[i].a, *slots[i].b)).second) {
        throw ValidationError("duplicate test context id " + id);
      }
    } else {
      spdlog::warn("dialogue {} excluded for both {} and {}: {}", id, model_a.model, model_b.model,
                   slots[i].failure);
      out.excluded.push_back(id);
    }
  }
  std::sort(out.excluded.begin(), out.excluded.end());
  if (out.texts.empty()) {
    throw ProviderError(ProviderFailure::Transient,
                        "head-to-head generation failed for every context");
  }
  return out;
}

const char* to_string(Winner winner) {
  switch (winner) {
    case Winner::A: return "A";
    case Winner::B: return "B";
    case Winner::Tie: return "tie";
  }
  return "tie";
}

std::optional<int> parse_judge_label(std::string_view reply) {
  auto text = trim(reply);
  auto end = text.find_first_of(" \t\r\n");
  auto token = text.substr(0, end);
  while (!token.empty() && (token.back() == '.' || token.back() == ',' || token.back() == ')' ||
                            token.back() == ':' || token.back() == '!')) {
    token.remove_suffix(1);
  }
  if (token == "1") return 1;
  if (token == "2") return 2;
  return std::nullopt;
}

namespace {

OrderTrial judge_order(Gateway& gateway, const std::string& judge_model,
                       const PromptEngine& engine, const DialogueContext& context,
                       std::string_view first, std::string_view second, bool a_first,
                       std::vector<std::string>& raw_texts) {
  auto prompt = engine.render_judge(context, first, second);
  auto request = make_request(judge_model, prompt, kJudgeTemperature, std::nullopt, 8);
  OrderTrial trial;
  trial.a_first = a_first;
  trial.raw = gateway.complete(request).text;
  raw_texts.push_back(trial.raw);
  trial.label = parse_judge_label(trial.raw);
  if (!trial.label) {
    request.messages.push_back({"assistant", trial.raw});
    request.messages.push_back({"user", std::string(kJudgeReask)});
    trial.raw = gateway.complete(request).text;
    raw_texts.push_back(trial.raw);
    trial.label = parse_judge_label(trial.raw);
  }
  return trial;
}

Winner winner_of(const OrderTrial& trial) {
  bool first_wins = *trial.label == 1;
  return first_wins == trial.a_first ? Winner::A : Winner::B;
}

}  // namespace

JudgeVerdict judge_pair(Gateway& gateway, const std::string& judge_model,
                        const PromptEngine& engine, const DialogueContext& context,
                        std::string_view text_a, std::string_view text_b) {
  if (is_blank(text_a) || is_blank(text_b)) {
    throw ValidationError("dialogue " + context.id + ": judged texts must be non-empty");
  }
  if (trim(text_a) == trim(text_b)) {
    throw ValidationError("dialogue " + context.id + ": judged texts are identical");
  }
  JudgeVerdict verdict;
  verdict.dialogue_id = context.id;
  verdict.judge_model = judge_model;
  verdict.trials.push_back(
      judge_order(gateway, judge_model, engine, context, text_a, text_b, true, verdict.raw_texts));
  verdict.trials.push_back(
      judge_order(gateway, judge_model, engine, context, text_b, text_a, false, verdict.raw_texts));
  const auto& first = verdict.trials[0];
  const auto& second = verdict.trials[1];
  if (!first.label || !second.label) {
    verdict.parse_failure = true;
    verdict.winner = Winner::Tie;
  } else {
    auto w1 = winner_of(first);
    verdict.winner = w1 == winner_of(second) ? w1 : Winner::Tie;
  }
  return verdict;
}

std::vector<JudgeVerdict> judge_all(const HeadToHead& head_to_head,
                                    const std::vector<DialogueContext>& contexts,
                                    const ModelEndpoint& judge, const PromptEngine& engine,
                                    int workers, std::vector<std::string>* skipped_identical) {
  if (!judge.gateway) throw ProviderError(ProviderFailure::Unconfigured, "judge needs a gateway");
  std::vector<const DialogueContext*> todo;
  for (const auto& context : contexts) {
    auto it = head_to_head.texts.find(context.id);
    if (it == head_to_head.texts.end()) continue;
    if (trim(it->second.first) == trim(it->second.second)) {
      spdlog::warn("dialogue {}: both models gave the same text; not judged", context.id);
      if (skipped_identical) skipped_identical->push_back(context.id);
      continue;
    }
    todo.push_back(&context);
  }
  std::sort(todo.begin(), todo.end(),
            [](const auto* a, const auto* b) { return a->id < b->id; });
  std::vector<JudgeVerdict> verdicts(todo.size());
  if (workers <= 0) workers = default_workers(judge.gateway);
  detail::parallel_for(todo.size(), workers, [&](std::size_t i) {
    const auto& texts = head_to_head.texts.at(todo[i]->id);
    verdicts[i] = judge_pair(*judge.gateway, judge.model, engine, *todo[i], texts.first,
                             texts.second);
  });
  if (skipped_identical) std::sort(skipped_identical->begin(), skipped_identical->end());
  return verdicts;
}

// ---- win rate -----------------------------------------------------------------

Fraction Fraction::reduced() const {
  auto g = std::gcd(numerator, denominator);
  if (g == 0) return *this;
  return {numerator / g, denominator / g};
}

bool Fraction::operator==(const Fraction& other) const {
  return static_cast<u128>(numerator) * other.denominator ==
         static_cast<u128>(other.numerator) * denominator;
}

Fraction WinRateReport::win_rate_exact() const {
  if (n == 0) throw ValidationError("win rate of zero verdicts");
  return Fraction{100 * (2 * wins + ties), 2 * n}.reduced();
}

double WinRateReport::win_rate_percent() const {
  auto exact = win_rate_exact();
  return static_cast<double>(exact.numerator) / static_cast<double>(exact.denominator);
}

std::string WinRateReport::rendered() const {
  auto exact = win_rate_exact();
  // tenths = floor(10 * p / q + 1/2)
  auto tenths = (20 * exact.numerator + exact.denominator) / (2 * exact.denominator);
  return std::to_string(tenths / 10) + "." + std::to_string(tenths % 10);
}

WinRateReport compute_win_rate(const std::vector<JudgeVerdict>& verdicts, bool candidate_is_a,
                               const std::string& candidate, const std::string& baseline) {
  if (verdicts.empty()) throw ValidationError("no verdicts");
  WinRateReport report;
  report.candidate = candidate;
  report.baseline = baseline;
  report.judge = verdicts.front().judge_model;
  const auto candidate_side = candidate_is_a ? Winner::A : Winner::B;
  for (const auto& verdict : verdicts) {
    if (verdict.judge_model != report.judge) throw ValidationError("verdicts from mixed judges");
    if (verdict.winner == Winner::Tie) {
      ++report.ties;
    } else if (verdict.winner == candidate_side) {
      ++report.wins;
    } else {
      ++report.losses;
    }
  }
  report.n = verdicts.size();
  return report;
}

std::string serialize_verdicts(const std::vector<JudgeVerdict>& verdicts) {
  std::string out;
  for (const auto& verdict : verdicts) {
    json trials = json::array();
    for (const auto& trial : verdict.trials) {
      trials.push_back({{"order", trial.a_first ? "AB" : "BA"},
                        {"raw", trial.raw},
                        {"label", trial.label ? json(*trial.label) : json()}});
    }
    json record = {{"id", verdict.dialogue_id},
                   {"judge", verdict.judge_model},
                   {"winner", to_string(verdict.winner)},
                   {"trials", std::move(trials)},
                   {"raw_texts", verdict.raw_texts},
                   {"parse_failure", verdict.parse_failure}};
    out += record.dump() + "\n";
  }
  return out;
}

namespace {

json report_json(const WinRateReport& report) {
  auto exact = report.win_rate_exact();
  return {{"candidate", report.candidate},
          {"baseline", report.baseline},
          {"judge", report.judge},
          {"n", report.n},
          {"wins", report.wins},
          {"losses", report.losses},
          {"ties", report.ties},
          {"win_rate_percent", report.rendered()},
          {"win_rate_exact",
           std::to_string(exact.numerator) + "/" + std::to_string(exact.denominator)}};
}

struct Column {
  DistillationMethod method;
  PromptStrategy strategy;
};

std::vector<Column> grid_columns() {
  std::vector<Column> columns{{DistillationMethod::Direct, PromptStrategy::Direct}};
  for (auto method : {DistillationMethod::ImproveHuman, DistillationMethod::ImproveLlmInitial}) {
    for (auto strategy : improvement_strategies()) columns.push_back({method, strategy});
  }
  return columns;
}

std::string column_label(const Column& column) {
  switch (column.method) {
    case DistillationMethod::Direct: return "M1:D";
    case DistillationMethod::ImproveHuman: return std::string("M2:") + table_label(column.strategy);
    case DistillationMethod::ImproveLlmInitial:
      return std::string("M3:") + table_label(column.strategy);
  }
  return {};
}

void validate_cells(const std::vector<ReportCell>& cells) {
  if (cells.empty()) throw ValidationError("no reports");
  std::set<std::tuple<std::string, std::string, DistillationMethod, PromptStrategy>> seen;
  for (const auto& cell : cells) {
    if (cell.report.judge != cells.front().report.judge) {
      throw ValidationError("reports from mixed judges: " + cells.front().report.judge + " and " +
                            cell.report.judge);
    }
    bool direct_method = cell.method == DistillationMethod::Direct;
    bool direct_strategy = cell.strategy == PromptStrategy::Direct;
    if (direct_method != direct_strategy) {
      throw ValidationError("cell outside the report grid: " + std::string(to_string(cell.method)) +
                            " with strategy " + to_string(cell.strategy));
    }
    if (!seen.emplace(cell.row_label, cell.stage, cell.method, cell.strategy).second) {
      throw ValidationError("duplicate report cell for " + cell.row_label + " / " + cell.stage);
    }
  }
}

}  // namespace

std::string serialize_report(const WinRateReport& report) { return report_json(report).dump() + "\n"; }

std::string render_report_matrix(const std::vector<ReportCell>& cells) {
  validate_cells(cells);
  std::vector<std::pair<std::string, std::string>> rows;
  for (const auto& cell : cells) {
    std::pair row{cell.row_label, cell.stage};
    if (std::find(rows.begin(), rows.end(), row) == rows.end()) rows.push_back(row);
  }
  auto columns = grid_columns();
  std::vector<std::string> header{"model", "stage"};
  for (const auto& column : columns) header.push_back(column_label(column));

  std::vector<std::vector<std::string>> table{header};
  for (const auto& [label, stage] : rows) {
    std::vector<std::string> line{label, stage};
    for (const auto& column : columns) {
      auto it = std::find_if(cells.begin(), cells.end(), [&](const ReportCell& cell) {
        return cell.row_label == label && cell.stage == stage && cell.method == column.method &&
               cell.strategy == column.strategy;
      });
      line.push_back(it == cells.end() ? "" : it->report.rendered());
    }
    table.push_back(std::move(line));
  }

  std::vector<std::size_t> widths(header.size(), 0);
  for (const auto& line : table) {
    for (std::size_t c = 0; c < line.size(); ++c) widths[c] = std::max(widths[c], line[c].size());
  }
  std::string out = "judge: " + cells.front().report.judge + "\n";
  for (const auto& line : table) {
    std::string text;
    for (std::size_t c = 0; c < line.size(); ++c) {
      if (c > 0) text += " | ";
      text += line[c] + std::string(widths[c] - line[c].size(), ' ');
    }
    while (!text.empty() && text.back() == ' ') text.pop_back();
    out += text + "\n";
  }
  return out;
}

std::string serialize_report_matrix(const std::vector<ReportCell>& cells) {
  validate_cells(cells);
  std::string out;
  for (const auto& cell : cells) {
    auto record = report_json(cell.report);
    record["row"] = cell.row_label;
    record["stage"] = cell.stage;
    record["method"] = to_string(cell.method);
    record["strategy"] = table_label(cell.strategy);
    out += record.dump() + "\n";
  }
  return out;
}

}  // namespace empdistill
