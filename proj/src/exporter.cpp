#include "empdistill/exporter.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <set>

#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include "empdistill/errors.hpp"
#include "empdistill/prompt_engine.hpp"
#include "empdistill/text.hpp"

namespace empdistill {

using nlohmann::json;

namespace {

constexpr const char* kSftSchema = "empdistill/sft";
constexpr const char* kDpoSchema = "empdistill/dpo";
constexpr const char* kTestSchema = "empdistill/test";

std::string header_line(const char* schema, std::size_t count) {
  json header = {{"schema", schema}, {"schema_version", kDatasetSchemaVersion}, {"count", count}};
  return header.dump() + "\n";
}

json score_json(const std::optional<int>& score) { return score ? json(*score) : json(); }

json context_meta(const DialogueContext& context) {
  return {{"id", context.id},
          {"situation", context.situation},
          {"utterance", context.speaker_utterance}};
}

void require_nonempty(std::size_t count) {
  if (count == 0) throw ValidationError("empty dataset");
}

// Header-checked records of one dataset file.
struct Reader {
  std::string source;
  std::vector<json> records;
  std::vector<std::size_t> rows;

  Reader(std::string_view text, const char* schema, std::string source_name)
      : source(std::move(source_name)) {
    auto lines = split_lines(text);
    std::optional<json> header;
    std::size_t row = 0;
    for (const auto& line : lines) {
      ++row;
      if (is_blank(line)) continue;
      json value;
      try {
        value = json::parse(line);
      } catch (const json::parse_error& e) {
        throw ParseError(source, row, 0, std::string("invalid JSON: ") + e.what());
      }
      if (!value.is_object()) throw ParseError(source, row, 0, "record is not an object");
      if (!header) {
        if (value.value("schema", "") != schema) {
          throw ParseError(source, row, 0, std::string("expected schema ") + schema);
        }
        if (value.value("schema_version", 0) != kDatasetSchemaVersion) {
          throw ParseError(source, row, 0, "unsupported schema_version");
        }
        header = std::move(value);
        continue;
      }
      records.push_back(std::move(value));
      rows.push_back(row);
    }
    if (!header) throw ParseError(source, 0, 0, "missing header record");
    auto count = header->value("count", std::size_t{0});
    if (count != records.size()) {
      throw ParseError(source, 0, 0,
                       "header count " + std::to_string(count) + " does not match " +
                           std::to_string(records.size()) + " records");
    }
  }

  std::string string_field(const json& object, const char* key, std::size_t index) const {
    auto it = object.find(key);
    if (it == object.end() || !it->is_string()) {
      throw ParseError(source, rows[index], 0, std::string("missing string field \"") + key + "\"");
    }
    return it->get<std::string>();
  }

  const json& object_field(const json& object, const char* key, std::size_t index) const {
    auto it = object.find(key);
    if (it == object.end() || !it->is_object()) {
      throw ParseError(source, rows[index], 0, std::string("missing object field \"") + key + "\"");
    }
    return *it;
  }

  std::optional<int> score_field(const json& object, const char* key, std::size_t index) const {
    auto it = object.find(key);
    if (it == object.end() || it->is_null()) return std::nullopt;
    if (!it->is_number_integer()) {
      throw ParseError(source, rows[index], 0, std::string("field \"") + key + "\" must be an integer");
    }
    return it->get<int>();
  }

  DialogueContext context(const json& record, std::size_t index) const {
    const auto& meta = object_field(record, "meta", index);
    DialogueContext ctx{string_field(meta, "id", index), string_field(meta, "situation", index),
                        string_field(meta, "utterance", index)};
    if (string_field(record, "input", index) != format_dialogue_input(ctx)) {
      throw ParseError(source, rows[index], 0, "input does not match the dialogue metadata");
    }
    string_field(record, "instruction", index);
    return ctx;
  }

  ResponderId responder(const json& meta, const char* key, std::size_t index) const {
    try {
      return ResponderId::parse(string_field(meta, key, index));
    } catch (const ValidationError& e) {
      throw ParseError(source, rows[index], 0, e.what());
    }
  }
};

}  // namespace

std::string serialize_sft(const std::vector<SftExample>& examples, const std::string& instruction) {
  std::string out = header_line(kSftSchema, examples.size());
  for (const auto& example : examples) {
    auto meta = context_meta(example.context);
    meta["responder"] = example.response.responder.name();
    meta["provenance"] = to_string(example.provenance);
    meta["score"] = score_json(example.response.empathy_score);
    json record = {{"instruction", instruction},
                   {"input", format_dialogue_input(example.context)},
                   {"output", example.response.text},
                   {"meta", std::move(meta)}};
    out += record.dump() + "\n";
  }
  return out;
}

std::string serialize_preference(const std::vector<PreferencePair>& pairs,
                                 const std::string& instruction) {
  std::string out = header_line(kDpoSchema, pairs.size());
  for (const auto& pair : pairs) {
    if (pair.chosen.text == pair.rejected.text) {
      throw ValidationError("dialogue " + pair.context.id + ": chosen equals rejected");
    }
    auto meta = context_meta(pair.context);
    meta["chosen_responder"] = pair.chosen.responder.name();
    meta["chosen_score"] = score_json(pair.chosen.empathy_score);
    meta["rejected_responder"] = pair.rejected.responder.name();
    meta["rejected_score"] = score_json(pair.rejected.empathy_score);
    json record = {{"instruction", instruction},
                   {"input", format_dialogue_input(pair.context)},
                   {"chosen", pair.chosen.text},
                   {"rejected", pair.rejected.text},
                   {"meta", std::move(meta)}};
    out += record.dump() + "\n";
  }
  return out;
}

std::string serialize_test(const std::vector<DialogueContext>& contexts) {
  std::set<std::string> seen;
  std::string out = header_line(kTestSchema, contexts.size());
  for (const auto& context : contexts) {
    if (!seen.insert(context.id).second) {
      throw ValidationError("duplicate test context id " + context.id);
    }
    out += context_meta(context).dump() + "\n";
  }
  return out;
}

std::size_t export_sft(const std::vector<SftExample>& examples, const std::string& instruction,
                       const std::filesystem::path& path) {
  require_nonempty(examples.size());
  write_file_atomic(path, serialize_sft(examples, instruction));
  return examples.size();
}

std::size_t export_preference(const std::vector<PreferencePair>& pairs,
                              const std::string& instruction, const std::filesystem::path& path) {
  require_nonempty(pairs.size());
  write_file_atomic(path, serialize_preference(pairs, instruction));
  return pairs.size();
}

std::size_t export_test(const std::vector<DialogueContext>& contexts,
                        const std::filesystem::path& path) {
  require_nonempty(contexts.size());
  write_file_atomic(path, serialize_test(contexts));
  return contexts.size();
}

std::vector<SftExample> parse_sft(std::string_view text, const std::string& source) {
  Reader reader(text, kSftSchema, source);
  std::vector<SftExample> examples;
  for (std::size_t i = 0; i < reader.records.size(); ++i) {
    const auto& record = reader.records[i];
    SftExample example;
    example.context = reader.context(record, i);
    const auto& meta = record["meta"];
    example.response.responder = reader.responder(meta, "responder", i);
    example.response.text = reader.string_field(record, "output", i);
    example.response.empathy_score = reader.score_field(meta, "score", i);
    try {
      example.provenance = provenance_from_string(reader.string_field(meta, "provenance", i));
    } catch (const ValidationError& e) {
      throw ParseError(source, reader.rows[i], 0, e.what());
    }
    examples.push_back(std::move(example));
  }
  return examples;
}

std::vector<PreferencePair> parse_preference(std::string_view text, const std::string& source) {
  Reader reader(text, kDpoSchema, source);
  std::vector<PreferencePair> pairs;
  for (std::size_t i = 0; i < reader.records.size(); ++i) {
    const auto& record = reader.records[i];
    PreferencePair pair;
    pair.context = reader.context(record, i);
    const auto& meta = record["meta"];
    pair.chosen = {reader.responder(meta, "chosen_responder", i),
                   reader.string_field(record, "chosen", i),
                   reader.score_field(meta, "chosen_score", i)};
    pair.rejected = {reader.responder(meta, "rejected_responder", i),
                     reader.string_field(record, "rejected", i),
                     reader.score_field(meta, "rejected_score", i)};
    if (pair.chosen.text == pair.rejected.text) {
      throw ParseError(source, reader.rows[i], 0, "chosen equals rejected");
    }
    pairs.push_back(std::move(pair));
  }
  return pairs;
}

std::vector<DialogueContext> parse_test(std::string_view text, const std::string& source) {
  Reader reader(text, kTestSchema, source);
  std::vector<DialogueContext> contexts;
  std::set<std::string> seen;
  for (std::size_t i = 0; i < reader.records.size(); ++i) {
    const auto& record = reader.records[i];
    DialogueContext ctx{reader.string_field(record, "id", i),
                        reader.string_field(record, "situation", i),
                        reader.string_field(record, "utterance", i)};
    if (!seen.insert(ctx.id).second) {
      throw ParseError(source, reader.rows[i], 0, "duplicate id " + ctx.id);
    }
    contexts.push_back(std::move(ctx));
  }
  return contexts;
}

std::vector<SftExample> load_sft(const std::filesystem::path& path) {
  return parse_sft(read_file(path), path.string());
}

std::vector<PreferencePair> load_preference(const std::filesystem::path& path) {
  return parse_preference(read_file(path), path.string());
}

std::vector<DialogueContext> load_test(const std::filesystem::path& path) {
  return parse_test(read_file(path), path.string());
}

// ---- training configs ---------------------------------------------------------

const char* to_string(TrainingStage stage) {
  return stage == TrainingStage::Sft ? "sft" : "dpo";
}

namespace {

// Shortest round-trip form, keeping a decimal point ("3.0") and writing
// exponents without padding ("5e-5").
std::string format_number(double value) {
  char buffer[64];
  auto [end, ec] = std::to_chars(buffer, buffer + sizeof buffer, value);
  std::string text(buffer, end);
  auto e = text.find('e');
  if (e != std::string::npos) {
    std::size_t digits = e + 1;
    if (digits < text.size() && (text[digits] == '-' || text[digits] == '+')) {
      if (text[digits] == '+') text.erase(digits, 1);
      else ++digits;
    }
    while (digits + 1 < text.size() && text[digits] == '0') text.erase(digits, 1);
  } else if (text.find('.') == std::string::npos) {
    text += ".0";
  }
  return text;
}

double parse_double(const std::string& key, const std::string& value) {
  try {
    std::size_t used = 0;
    double result = std::stod(value, &used);
    if (used == value.size() && std::isfinite(result)) return result;
  } catch (const std::exception&) {
  }
  throw ValidationError("invalid number for " + key + ": \"" + value + "\"");
}

int parse_int(const std::string& key, const std::string& value) {
  int result = 0;
  auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), result);
  if (ec != std::errc() || ptr != value.data() + value.size()) {
    throw ValidationError("invalid integer for " + key + ": \"" + value + "\"");
  }
  return result;
}

}  // namespace

TrainingConfig TrainingConfig::defaults(TrainingStage stage) {
  TrainingConfig config;
  config.stage = stage;
  if (stage == TrainingStage::Dpo) {
    config.dpo_beta = 0.1;
    config.dpo_loss = "sigmoid";
  }
  return config;
}

void TrainingConfig::apply_override(const std::string& key, const std::string& raw) {
  auto value = std::string(trim(raw));
  if (value.empty()) throw ValidationError("empty value for " + key);
  bool dpo = stage == TrainingStage::Dpo;
  if (key == "lora_rank") {
    lora_rank = parse_int(key, value);
    if (lora_rank <= 0) throw ValidationError("lora_rank must be positive");
  } else if (key == "learning_rate") {
    learning_rate = parse_double(key, value);
    if (learning_rate <= 0) throw ValidationError("learning_rate must be positive");
  } else if (key == "epochs") {
    epochs = parse_double(key, value);
    if (epochs <= 0) throw ValidationError("epochs must be positive");
  } else if (key == "batch_size") {
    batch_size = parse_int(key, value);
    if (batch_size <= 0) throw ValidationError("batch_size must be positive");
  } else if (key == "compute_type") {
    compute_type = value;
  } else if (key == "finetuning_method") {
    finetuning_method = value;
  } else if (key == "dpo_beta" && dpo) {
    dpo_beta = parse_double(key, value);
  } else if (key == "dpo_loss" && dpo) {
    dpo_loss = value;
  } else {
    throw ValidationError("unknown " + std::string(to_string(stage)) + " config key \"" + key + "\"");
  }
  overridden.push_back(key);
}

std::string serialize_training_config(const TrainingConfig& config) {
  std::string out;
  auto emit = [&](const std::string& key, const std::string& value) {
    out += key + ": " + value + "\n";
    if (std::find(config.overridden.begin(), config.overridden.end(), key) !=
        config.overridden.end()) {
      out += "# overridden\n";
    }
  };
  emit("stage", to_string(config.stage));
  emit("finetuning_method", config.finetuning_method);
  emit("lora_rank", std::to_string(config.lora_rank));
  emit("learning_rate", format_number(config.learning_rate));
  emit("epochs", format_number(config.epochs));
  emit("compute_type", config.compute_type);
  emit("batch_size", std::to_string(config.batch_size));
  if (config.stage == TrainingStage::Dpo) {
    emit("dpo_beta", format_number(config.dpo_beta.value_or(0.1)));
    emit("dpo_loss", config.dpo_loss.value_or("sigmoid"));
  }
  emit("dataset_path", config.dataset_path);
  emit("base_model", config.base_model);
  return out;
}

TrainingConfig parse_training_config(std::string_view text, const std::string& source) {
  std::map<std::string, std::string> values;
  std::vector<std::string> overridden;
  std::string last_key;
  std::size_t row = 0;
  for (const auto& line : split_lines(text)) {
    ++row;
    auto content = trim(line);
    if (content.empty()) continue;
    if (content.front() == '#') {
      if (content == "# overridden" && !last_key.empty()) overridden.push_back(last_key);
      continue;
    }
    auto colon = content.find(':');
    if (colon == std::string_view::npos) throw ParseError(source, row, 0, "expected key: value");
    auto key = std::string(trim(content.substr(0, colon)));
    if (!values.emplace(key, std::string(trim(content.substr(colon + 1)))).second) {
      throw ParseError(source, row, 0, "duplicate key " + key);
    }
    last_key = key;
  }
  auto take = [&](const std::string& key) {
    auto it = values.find(key);
    if (it == values.end()) throw ParseError(source, 0, 0, "missing key " + key);
    auto value = it->second;
    values.erase(it);
    return value;
  };
  auto stage_text = take("stage");
  TrainingStage stage;
  if (stage_text == "sft") {
    stage = TrainingStage::Sft;
  } else if (stage_text == "dpo") {
    stage = TrainingStage::Dpo;
  } else {
    throw ParseError(source, 0, 0, "unknown stage " + stage_text);
  }
  auto config = TrainingConfig::defaults(stage);
  config.dataset_path = take("dataset_path");
  config.base_model = take("base_model");
  try {
    for (const auto& [key, value] : values) config.apply_override(key, value);
  } catch (const ValidationError& e) {
    throw ParseError(source, 0, 0, e.what());
  }
  config.overridden = overridden;
  return config;
}

TrainingConfig emit_training_config(TrainingStage stage, const std::filesystem::path& dataset_path,
                                    const std::string& base_model,
                                    const std::filesystem::path& path,
                                    const std::map<std::string, std::string>& overrides) {
  if (!std::filesystem::exists(dataset_path)) {
    throw IoError("dataset " + dataset_path.string() + " does not exist");
  }
  auto config = TrainingConfig::defaults(stage);
  config.dataset_path = dataset_path.string();
  config.base_model = base_model;
  for (const auto& [key, value] : overrides) {
    config.apply_override(key, value);
    spdlog::info("{} config override: {} = {}", to_string(stage), key, value);
  }
  write_file_atomic(path, serialize_training_config(config));
  return config;
}

}  // namespace empdistill
