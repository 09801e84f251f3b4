#include "empdistill/cli.hpp"

#include <algorithm>
#include <chrono>
#include <ctime>
#include <iomanip>
#include <map>
#include <ostream>
#include <sstream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>
#include <spdlog/sinks/basic_file_sink.h>
#include <spdlog/sinks/ostream_sink.h>
#include <spdlog/spdlog.h>

#include "empdistill/corpus.hpp"
#include "empdistill/distiller.hpp"
#include "empdistill/evaluator.hpp"
#include "empdistill/exporter.hpp"
#include "empdistill/hashing.hpp"
#include "empdistill/partitioner.hpp"
#include "empdistill/prompt_engine.hpp"
#include "empdistill/text.hpp"

namespace empdistill::cli {

namespace fs = std::filesystem;
using nlohmann::json;

int exit_code_for(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::Validation: return kExitValidation;
    case ErrorKind::Provider: return kExitProvider;
    case ErrorKind::Io: return kExitIo;
  }
  return kExitValidation;
}

std::string make_run_id(std::uint64_t seed) {
  auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm utc{};
  gmtime_r(&now, &utc);
  std::ostringstream id;
  id << std::put_time(&utc, "%Y%m%dT%H%M%SZ") << '-'
     << sha256_hex(std::to_string(seed)).substr(0, 8);
  return id.str();
}

namespace {

struct Options {
  std::string corpus;
  std::vector<std::string> teachers;
  bool combine = false;
  std::string judge;
  std::string method;
  std::string strategy = "naive";
  std::string ratio;
  std::string ratio_from;
  std::uint64_t seed = 0;
  bool seed_given = false;
  std::string out = ".";
  std::string provider_config;
  bool offline = false;
  std::string run_id;
  std::string templates;
  std::string base_model = "unspecified";
  std::vector<std::string> overrides;
  std::string test;
  std::string model_a;
  std::string model_b;
  std::string row;
  std::string stage;
  std::vector<std::string> reports;
};

// Routes spdlog to the command's error stream and, once a run directory is
// known, to <dir>/run.log as well. Restores the previous logger on exit.
class LogScope {
 public:
  explicit LogScope(std::ostream& err)
      : previous_(spdlog::default_logger()),
        console_(std::make_shared<spdlog::sinks::ostream_sink_mt>(err)) {
    console_->set_pattern("[%l] %v");
    install();
  }
  ~LogScope() {
    spdlog::default_logger()->flush();
    spdlog::set_default_logger(previous_);
  }
  LogScope(const LogScope&) = delete;
  LogScope& operator=(const LogScope&) = delete;

  void add_file(const fs::path& path) {
    fs::create_directories(path.parent_path());
    file_ = std::make_shared<spdlog::sinks::basic_file_sink_mt>(path.string(), true);
    install();
  }

 private:
  void install() {
    std::vector<spdlog::sink_ptr> sinks{console_};
    if (file_) sinks.push_back(file_);
    auto logger = std::make_shared<spdlog::logger>("empdistill", sinks.begin(), sinks.end());
    logger->set_level(spdlog::level::info);
    logger->flush_on(spdlog::level::info);
    spdlog::set_default_logger(logger);
  }

  std::shared_ptr<spdlog::logger> previous_;
  spdlog::sink_ptr console_;
  spdlog::sink_ptr file_;
};

void require(const std::string& value, const char* flag) {
  if (value.empty()) throw ValidationError(std::string(flag) + " is required");
}

void require_file(const std::string& path, const char* what) {
  if (!fs::exists(path)) throw IoError(std::string(what) + " " + path + " does not exist");
}

std::string run_id_of(const Options& options) {
  return options.run_id.empty() ? make_run_id(options.seed) : options.run_id;
}

PromptEngine load_engine(const Options& options) {
  return PromptEngine(options.templates.empty() ? TemplateSet::load_default()
                                                : TemplateSet::load(options.templates));
}

Corpus load_input_corpus(const Options& options) {
  require(options.corpus, "--corpus");
  require_file(options.corpus, "corpus");
  return load_corpus(options.corpus);
}

std::unique_ptr<GatewayPool> make_pool(const Options& options, const Environment& env) {
  std::vector<ProviderConfig> configs;
  if (!options.provider_config.empty()) {
    require_file(options.provider_config, "provider config");
    configs = load_provider_configs(options.provider_config);
  } else {
    ProviderConfig replay;
    replay.name = "default";
    replay.kind = ProviderKind::Replay;
    replay.cache_dir = fs::path(options.out) / "cache";
    configs.push_back(std::move(replay));
  }
  for (auto& config : configs) {
    if (options.offline) config.offline = true;
    config.validate();
  }
  return std::make_unique<GatewayPool>(std::move(configs), env.transport, env.clock);
}

std::map<std::string, std::string> parse_overrides(const std::vector<std::string>& raw) {
  std::map<std::string, std::string> overrides;
  for (const auto& item : raw) {
    auto eq = item.find('=');
    if (eq == std::string::npos || eq == 0) {
      throw ValidationError("--set expects key=value, got \"" + item + "\"");
    }
    overrides[std::string(trim(item.substr(0, eq)))] = std::string(trim(item.substr(eq + 1)));
  }
  return overrides;
}

// ---- stats --------------------------------------------------------------------

int cmd_stats(const Options& options, std::ostream& out) {
  auto corpus = load_input_corpus(options);
  out << "dialogues: " << corpus.size() << "\n\n";
  out << "score distribution\n";
  out << std::left << std::setw(24) << "responder" << std::right << std::setw(8) << "1"
      << std::setw(8) << "2" << std::setw(8) << "3" << std::setw(8) << "total" << std::setw(6)
      << "mode" << "\n";
  for (const auto& responder : corpus.responders()) {
    out << std::left << std::setw(24) << responder.name() << std::right;
    try {
      auto histogram = score_distribution(corpus, responder);
      for (int score = kMinEmpathyScore; score <= kMaxEmpathyScore; ++score) {
        out << std::setw(8) << histogram.count(score);
      }
      out << std::setw(8) << histogram.total() << std::setw(6) << histogram.mode() << "\n";
    } catch (const ValidationError&) {
      out << "  (not fully scored)\n";
    }
  }
  const auto human = ResponderId::human();
  for (const auto& responder : corpus.responders()) {
    if (responder.is_human()) continue;
    RatingPairMatrix matrix;
    try {
      matrix = rating_pair_matrix(corpus, responder);
    } catch (const ValidationError& e) {
      spdlog::info("no rating-pair matrix for {}: {}", responder.name(), e.what());
      continue;
    }
    out << "\nrating pairs: " << human.name() << " (rows) x " << responder.name()
        << " (columns)\n";
    out << std::setw(8) << "" << std::setw(8) << "1" << std::setw(8) << "2" << std::setw(8)
        << "3" << "\n";
    for (int h = kMinEmpathyScore; h <= kMaxEmpathyScore; ++h) {
      out << std::setw(8) << h;
      for (int m = kMinEmpathyScore; m <= kMaxEmpathyScore; ++m) out << std::setw(8) << matrix.at(h, m);
      out << "\n";
    }
    out << "total " << matrix.total() << "\n";
  }
  return kExitOk;
}

// ---- partition ----------------------------------------------------------------

void print_partition_summary(const DatasetPartition& partition, std::ostream& out) {
  out << "teacher: " << partition.teacher.name() << "\n"
      << "sft dialogues: " << partition.count(Assignment::Sft)
      << " (examples: " << partition.sft.size() << ")\n"
      << "pref dialogues: " << partition.count(Assignment::Pref)
      << " (pairs: " << partition.preference.size() << ")\n"
      << "test dialogues: " << partition.count(Assignment::Test) << "\n";
}

int cmd_partition(const Options& options, std::ostream& out, LogScope& log) {
  auto corpus = load_input_corpus(options);
  if (options.teachers.empty()) throw ValidationError("--teacher is required");
  const auto run_id = run_id_of(options);
  const auto run_dir = fs::path(options.out) / "runs" / run_id;
  log.add_file(run_dir / "run.log");

  PartitionManifest manifest;
  if (!options.ratio.empty()) {
    if (options.teachers.size() != 1) throw ValidationError("--ratio takes a single --teacher");
    manifest.teacher = options.teachers.front();
    manifest.ratio = SplitRatio::parse(options.ratio);
    manifest.seed = options.seed;
    manifest.assignment = ratio_partition(corpus, *manifest.ratio, options.seed);
    std::array<std::size_t, 3> counts{};
    for (const auto& [id, assignment] : manifest.assignment) ++counts[static_cast<int>(assignment)];
    out << "ratio " << manifest.ratio->to_string() << " seed " << options.seed << ": sft "
        << counts[0] << ", pref " << counts[1] << ", test " << counts[2] << "\n";
  } else {
    DistillationResult result;
    if (options.teachers.size() > 1 || options.combine) {
      result = run_method1_combined(corpus, options.teachers);
      for (const auto& note : result.notes) spdlog::info("{}", note);
    } else {
      auto model = ResponderId::model(options.teachers.front());
      if (!corpus.has_responder(model)) {
        throw ValidationError("unknown model " + options.teachers.front() + " (not in corpus)");
      }
      result.partition = partition_by_scores(corpus, model);
    }
    print_partition_summary(result.partition, out);
    manifest = manifest_of(result.partition);
  }
  write_file_atomic(run_dir / "partition.jsonl", serialize_manifest(manifest));
  out << "run: " << run_id << "\nmanifest: " << (run_dir / "partition.jsonl").string() << "\n";
  return kExitOk;
}

// ---- distill ------------------------------------------------------------------

void export_datasets(const DistillationResult& result, const PromptEngine& engine,
                     const Options& options, const fs::path& out_dir, std::ostream& out) {
  const auto& partition = result.partition;
  const auto& instruction = engine.templates().body(PromptStrategy::Direct);
  auto overrides = parse_overrides(options.overrides);
  std::map<std::string, std::string> sft_overrides;
  std::map<std::string, std::string> dpo_overrides = overrides;
  for (const auto& [key, value] : overrides) {
    if (key.rfind("dpo_", 0) != 0) sft_overrides[key] = value;
  }
  if (!partition.sft.empty()) {
    auto path = out_dir / "sft.jsonl";
    out << "sft.jsonl: " << export_sft(partition.sft, instruction, path) << " records\n";
    emit_training_config(TrainingStage::Sft, path, options.base_model, out_dir / "train_sft.cfg",
                         sft_overrides);
  } else {
    spdlog::info("no SFT examples; sft.jsonl not written");
  }
  if (!partition.preference.empty()) {
    auto path = out_dir / "dpo.jsonl";
    out << "dpo.jsonl: " << export_preference(partition.preference, instruction, path)
        << " records\n";
    emit_training_config(TrainingStage::Dpo, path, options.base_model, out_dir / "train_dpo.cfg",
                         dpo_overrides);
  } else {
    spdlog::info("no preference pairs; dpo.jsonl not written");
  }
  if (!partition.test.empty()) {
    out << "test.jsonl: " << export_test(partition.test, out_dir / "test.jsonl") << " records\n";
  } else {
    spdlog::info("no test contexts; test.jsonl not written");
  }
}

int cmd_distill(const Options& options, const Environment& env, std::ostream& out,
                LogScope& log) {
  require(options.method, "--method");
  const auto method = method_from_string(options.method);
  if (options.teachers.empty()) throw ValidationError("--teacher is required");
  const auto strategy = method == DistillationMethod::Direct
                            ? PromptStrategy::Direct
                            : strategy_from_string(options.strategy);
  if (method != DistillationMethod::Direct && !is_improvement(strategy)) {
    throw ValidationError("improvement strategy required");
  }
  std::optional<SplitRatio> ratio;
  std::uint64_t seed = options.seed;
  if (!options.ratio_from.empty()) {
    require_file(options.ratio_from, "partition manifest");
    auto manifest = parse_manifest(read_file(options.ratio_from), options.ratio_from);
    if (!manifest.ratio) throw ValidationError(options.ratio_from + " records no ratio");
    ratio = manifest.ratio;
    if (!options.seed_given && manifest.seed) seed = *manifest.seed;
  } else if (!options.ratio.empty()) {
    ratio = SplitRatio::parse(options.ratio);
  }
  if (method == DistillationMethod::ImproveLlmInitial && !ratio) {
    throw ValidationError("method 3 requires --ratio (or --ratio-from)");
  }

  auto corpus = load_input_corpus(options);
  auto engine = load_engine(options);
  auto pool = make_pool(options, env);
  const auto run_id = options.run_id.empty() ? make_run_id(seed) : options.run_id;
  const auto run_dir = fs::path(options.out) / "runs" / run_id;
  const auto out_dir = fs::path(options.out) / "out" / run_id;
  log.add_file(run_dir / "run.log");
  spdlog::info("run {}: method {} strategy {} seed {}", run_id, to_string(method),
               to_string(strategy), seed);

  DistillationResult result;
  if (method == DistillationMethod::Direct) {
    if (options.teachers.size() > 1 || options.combine) {
      result = run_method1_combined(corpus, options.teachers);
    } else {
      auto [gateway, model] = pool->resolve(options.teachers.front());
      result = run_method1(corpus, model, gateway, &engine);
    }
  } else {
    if (options.teachers.size() != 1) throw ValidationError("methods 2 and 3 take one --teacher");
    auto [gateway, model] = pool->resolve(options.teachers.front());
    if (method == DistillationMethod::ImproveHuman) {
      result = run_method2(corpus, model, strategy, *gateway, engine);
    } else {
      result = run_method3(corpus, model, strategy, *ratio, seed, *gateway, engine);
    }
  }
  result.run.seed = seed;
  for (const auto& note : result.notes) spdlog::info("{}", note);

  write_file_atomic(run_dir / "manifest.jsonl", serialize_run_manifest(result));
  auto config = json::parse(serialize_run_config(result, engine.templates().digest()));
  config["corpus"] = options.corpus;
  config["corpus_fingerprint"] = corpus.fingerprint();
  config["base_model"] = options.base_model;
  config["overrides"] = options.overrides;
  write_file_atomic(run_dir / "config.json", config.dump(2) + "\n");
  if (!result.halt_reason) {
    auto manifest = manifest_of(result.partition);
    if (method == DistillationMethod::ImproveLlmInitial) {
      manifest.ratio = ratio;
      manifest.seed = seed;
    }
    write_file_atomic(run_dir / "partition.jsonl", serialize_manifest(manifest));
  }

  auto stats = pool->stats();
  spdlog::info("network requests {}, cache hits {}", stats.network_requests, stats.cache_hits);
  out << "run: " << run_id << "\n";
  if (!result.failures.empty()) {
    out << "failed dialogues: " << result.failures.size() << "\n";
  }
  if (result.halt_reason) {
    out << "halted: " << *result.halt_reason << "\n";
    return kExitValidation;
  }
  if (result.manifest.empty()) {
    throw ProviderError(ProviderFailure::Transient, "every dialogue failed");
  }
  export_datasets(result, engine, options, out_dir, out);
  return kExitOk;
}

// ---- evaluate -----------------------------------------------------------------

int cmd_evaluate(const Options& options, const Environment& env, std::ostream& out,
                 LogScope& log) {
  require(options.test, "--test");
  require(options.model_a, "--model-a");
  require(options.model_b, "--model-b");
  require(options.judge, "--judge");
  require_file(options.test, "test file");
  auto contexts = load_test(options.test);
  if (contexts.empty()) throw ValidationError("test file " + options.test + " has no contexts");
  auto engine = load_engine(options);
  auto pool = make_pool(options, env);
  const auto run_id = run_id_of(options);
  const auto eval_dir = fs::path(options.out) / "eval" / run_id;
  log.add_file(eval_dir / "run.log");

  auto [gateway_a, model_a] = pool->resolve(options.model_a);
  auto [gateway_b, model_b] = pool->resolve(options.model_b);
  auto [gateway_j, judge] = pool->resolve(options.judge);
  auto heads = generate_head_to_head(contexts, {gateway_a, model_a}, {gateway_b, model_b}, engine,
                                     options.seed);
  std::vector<std::string> identical;
  auto verdicts = judge_all(heads, contexts, {gateway_j, judge}, engine, 0, &identical);
  auto report = compute_win_rate(verdicts, true, model_a, model_b);

  write_file_atomic(eval_dir / "verdicts.jsonl", serialize_verdicts(verdicts));
  auto record = json::parse(serialize_report(report));
  if (!options.row.empty()) record["row"] = options.row;
  if (!options.stage.empty()) record["stage"] = options.stage;
  if (!options.method.empty()) record["method"] = to_string(method_from_string(options.method));
  if (!options.strategy.empty() && !options.method.empty()) {
    record["strategy"] = table_label(strategy_from_string(options.strategy));
  }
  write_file_atomic(eval_dir / "report.json", record.dump() + "\n");
  json config = {{"test", options.test},           {"model_a", options.model_a},
                 {"model_b", options.model_b},     {"judge", options.judge},
                 {"seed", options.seed},           {"template_digest", engine.templates().digest()},
                 {"excluded", heads.excluded},     {"skipped_identical", identical}};
  write_file_atomic(eval_dir / "config.json", config.dump(2) + "\n");

  std::ostringstream line;
  line << report.candidate << " vs " << report.baseline << " (judge " << report.judge
       << "): " << report.rendered() << "% over " << report.n << " (wins " << report.wins
       << ", losses " << report.losses << ", ties " << report.ties << ")\n";
  write_file_atomic(eval_dir / "report.txt", line.str());
  out << "run: " << run_id << "\n" << line.str();
  return kExitOk;
}

// ---- report -------------------------------------------------------------------

ReportCell cell_from_record(const json& record, const std::string& source) {
  auto field = [&](const char* key) {
    auto it = record.find(key);
    if (it == record.end() || !it->is_string()) {
      throw ValidationError(source + ": report lacks \"" + key +
                            "\" (pass --row/--stage/--method/--strategy to evaluate)");
    }
    return it->get<std::string>();
  };
  ReportCell cell;
  cell.row_label = field("row");
  cell.stage = field("stage");
  cell.method = method_from_string(field("method"));
  cell.strategy = strategy_from_string(field("strategy"));
  auto& report = cell.report;
  report.candidate = field("candidate");
  report.baseline = field("baseline");
  report.judge = field("judge");
  try {
    report.n = record.at("n").get<std::uint64_t>();
    report.wins = record.at("wins").get<std::uint64_t>();
    report.losses = record.at("losses").get<std::uint64_t>();
    report.ties = record.at("ties").get<std::uint64_t>();
  } catch (const json::exception& e) {
    throw ValidationError(source + ": " + e.what());
  }
  if (report.wins + report.losses + report.ties != report.n || report.n == 0) {
    throw ValidationError(source + ": inconsistent verdict counts");
  }
  return cell;
}

int cmd_report(const Options& options, std::ostream& out) {
  if (options.reports.empty()) throw ValidationError("--reports is required");
  std::vector<ReportCell> cells;
  for (const auto& path : options.reports) {
    require_file(path, "report");
    for (const auto& line : split_lines(read_file(path))) {
      if (is_blank(line)) continue;
      json record;
      try {
        record = json::parse(line);
      } catch (const json::parse_error& e) {
        throw ParseError(path, 0, 0, e.what());
      }
      cells.push_back(cell_from_record(record, path));
    }
  }
  auto table = render_report_matrix(cells);
  if (!options.run_id.empty()) {
    const auto dir = fs::path(options.out) / "eval" / options.run_id;
    write_file_atomic(dir / "matrix.txt", table);
    write_file_atomic(dir / "matrix.jsonl", serialize_report_matrix(cells));
  }
  out << table;
  return kExitOk;
}

void add_common(CLI::App* cmd, Options& options) {
  cmd->add_option("--out", options.out, "Output root")->capture_default_str();
  cmd->add_option("--run-id", options.run_id, "Run identifier (default: timestamp + seed hash)");
  cmd->add_option("--seed", options.seed, "Random seed")
      ->each([&](const std::string&) { options.seed_given = true; });
}

void add_provider(CLI::App* cmd, Options& options) {
  cmd->add_option("--provider-config", options.provider_config, "INI file with [provider.<name>]");
  cmd->add_flag("--offline", options.offline, "Forbid network access; serve from cache only");
  cmd->add_option("--templates", options.templates, "Prompt template directory");
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err,
        const Environment& env) {
  CLI::App app{"Empathy distillation toolkit", "empdistill"};
  app.require_subcommand(1);
  Options options;

  auto* stats = app.add_subcommand("stats", "Score histograms and rating-pair matrices");
  stats->add_option("--corpus", options.corpus, "Corpus file (.csv/.tsv/.jsonl)")->required();

  auto* partition = app.add_subcommand("partition", "Score-rule or ratio partition manifest");
  partition->add_option("--corpus", options.corpus, "Corpus file")->required();
  partition->add_option("--teacher", options.teachers, "Teacher model (repeatable)")->required();
  partition->add_flag("--combine", options.combine, "Union the teachers' partitions");
  partition->add_option("--ratio", options.ratio, "Split ratio a:b:c instead of score rules");
  add_common(partition, options);

  auto* distill = app.add_subcommand("distill", "Build SFT/preference/test datasets");
  distill->add_option("--corpus", options.corpus, "Corpus file")->required();
  distill->add_option("--teacher", options.teachers, "Teacher model[@provider]")->required();
  distill->add_option("--method", options.method, "1, 2 or 3")->required();
  distill->add_option("--strategy", options.strategy,
                      "naive, cog, aff, comp, all, seq, lacking or direct")
      ->capture_default_str();
  distill->add_option("--ratio", options.ratio, "Method 3 split a:b:c");
  distill->add_option("--ratio-from", options.ratio_from, "Reuse ratio and seed of a manifest");
  distill->add_option("--base-model", options.base_model, "Student model for training configs")
      ->capture_default_str();
  distill->add_option("--set", options.overrides, "Training config override key=value");
  add_common(distill, options);
  add_provider(distill, options);

  auto* evaluate = app.add_subcommand("evaluate", "Judge model A (candidate) against model B");
  evaluate->add_option("--test", options.test, "test.jsonl")->required();
  evaluate->add_option("--model-a", options.model_a, "Candidate model[@provider]")->required();
  evaluate->add_option("--model-b", options.model_b, "Baseline model[@provider]")->required();
  evaluate->add_option("--judge", options.judge, "Judge model[@provider]")->required();
  evaluate->add_option("--row", options.row, "Report row label");
  evaluate->add_option("--stage", options.stage, "Report stage label");
  evaluate->add_option("--method", options.method, "Report method column");
  evaluate->add_option("--strategy", options.strategy, "Report strategy column");
  add_common(evaluate, options);
  add_provider(evaluate, options);

  auto* report = app.add_subcommand("report", "Win-rate table from report.json files");
  report->add_option("--reports", options.reports, "report.json files")->required();
  report->add_option("--out", options.out, "Output root")->capture_default_str();
  report->add_option("--run-id", options.run_id, "Write the table under eval/<run-id>/");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err) == 0 ? kExitOk : kExitUsage;
  }

  LogScope log(err);
  try {
    if (stats->parsed()) return cmd_stats(options, out);
    if (partition->parsed()) return cmd_partition(options, out, log);
    if (distill->parsed()) return cmd_distill(options, env, out, log);
    if (evaluate->parsed()) {
      if (!evaluate->count("--strategy")) options.strategy.clear();
      return cmd_evaluate(options, env, out, log);
    }
    if (report->parsed()) return cmd_report(options, out);
  } catch (const Error& e) {
    spdlog::error("{}", e.what());
    err << "error: " << e.what() << "\n";
    return exit_code_for(e.kind());
  } catch (const fs::filesystem_error& e) {
    err << "error: " << e.what() << "\n";
    return kExitIo;
  }
  return kExitUsage;
}

}  // namespace empdistill::cli
