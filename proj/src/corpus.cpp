#include "empdistill/corpus.hpp"

#include <algorithm>
#include <charconv>
#include <set>
#include <unordered_set>

#include <nlohmann/json.hpp>

#include "empdistill/errors.hpp"
#include "empdistill/hashing.hpp"
#include "empdistill/text.hpp"

namespace empdistill {

using nlohmann::json;

ResponderId ResponderId::human() { return ResponderId(); }

ResponderId ResponderId::model(std::string name) {
  auto trimmed = std::string(trim(name));
  if (trimmed.empty()) throw ValidationError("responder name is empty");
  if (to_lower(trimmed) == to_lower(kHumanName)) {
    throw ValidationError("\"" + trimmed + "\" is reserved for the human responder");
  }
  return ResponderId(ResponderKind::Model, std::move(trimmed));
}

ResponderId ResponderId::parse(std::string_view name) {
  auto trimmed = trim(name);
  if (to_lower(trimmed) == to_lower(kHumanName)) return human();
  return model(std::string(trimmed));
}

const ScoredResponse* DialogueRecord::find(const ResponderId& responder) const {
  auto it = responses.find(responder);
  return it == responses.end() ? nullptr : &it->second;
}

std::optional<CorpusDialect> dialect_from_extension(
    const std::filesystem::path& path) {
  auto ext = to_lower(path.extension().string());
  if (ext == ".csv" || ext == ".tsv") return CorpusDialect::Delimited;
  if (ext == ".jsonl" || ext == ".ndjson") return CorpusDialect::RecordStream;
  return std::nullopt;
}

namespace {

void validate_record(const DialogueRecord& record, std::size_t index) {
  auto where = [&] {
    return "record " + std::to_string(index + 1) +
           (record.context.id.empty() ? "" : " (id " + record.context.id + ")");
  };
  if (is_blank(record.context.id)) throw ValidationError(where() + ": id is empty");
  if (is_blank(record.context.situation)) {
    throw ValidationError(where() + ": situation is empty");
  }
  if (is_blank(record.context.speaker_utterance)) {
    throw ValidationError(where() + ": speaker utterance is empty");
  }
  for (const auto& [responder, response] : record.responses) {
    if (response.responder != responder) {
      throw ValidationError(where() + ": response keyed under " + responder.name() +
                            " belongs to " + response.responder.name());
    }
    if (is_blank(response.text)) {
      throw ValidationError(where() + ": " + responder.name() +
                            " response text is empty");
    }
    if (response.empathy_score &&
        (*response.empathy_score < kMinEmpathyScore ||
         *response.empathy_score > kMaxEmpathyScore)) {
      throw ValidationError(where() + ": " + responder.name() + " empathy score " +
                            std::to_string(*response.empathy_score) +
                            " outside {1,2,3}");
    }
  }
}

// ---- delimited dialect ----------------------------------------------------

struct CsvRow {
  std::size_t line = 0;
  std::vector<std::string> fields;
};

std::vector<CsvRow> parse_delimited(std::string_view text, char delimiter,
                                    const std::string& source) {
  std::vector<CsvRow> rows;
  if (text.starts_with("\xEF\xBB\xBF")) text.remove_prefix(3);

  std::size_t line = 1;
  std::size_t column = 1;
  std::size_t i = 0;
  while (i < text.size()) {
    CsvRow row;
    row.line = line;
    std::string field;
    bool row_done = false;
    while (!row_done) {
      field.clear();
      if (i < text.size() && text[i] == '"') {
        std::size_t quote_line = line;
        std::size_t quote_column = column;
        ++i;
        ++column;
        bool closed = false;
        while (i < text.size()) {
          char c = text[i];
          if (c == '"') {
            if (i + 1 < text.size() && text[i + 1] == '"') {
              field.push_back('"');
              i += 2;
              column += 2;
              continue;
            }
            ++i;
            ++column;
            closed = true;
            break;
          }
          field.push_back(c);
          ++i;
          if (c == '\n') {
            ++line;
            column = 1;
          } else {
            ++column;
          }
        }
        if (!closed) {
          throw ParseError(source, quote_line, quote_column, "unterminated quoted field");
        }
        if (i < text.size() && text[i] != delimiter && text[i] != '\n' &&
            text[i] != '\r') {
          throw ParseError(source, line, column,
                           "unexpected character after closing quote");
        }
      } else {
        while (i < text.size() && text[i] != delimiter && text[i] != '\n' &&
               text[i] != '\r') {
          if (text[i] == '"') {
            throw ParseError(source, line, column, "stray quote in unquoted field");
          }
          field.push_back(text[i]);
          ++i;
          ++column;
        }
      }
      row.fields.push_back(field);
      if (i >= text.size()) {
        row_done = true;
      } else if (text[i] == delimiter) {
        ++i;
        ++column;
      } else {
        if (text[i] == '\r') ++i;
        if (i < text.size() && text[i] == '\n') ++i;
        ++line;
        column = 1;
        row_done = true;
      }
    }
    bool blank_row = row.fields.size() == 1 && is_blank(row.fields[0]);
    if (!blank_row) rows.push_back(std::move(row));
  }
  return rows;
}

std::optional<int> parse_score(std::string_view raw, const std::string& source,
                               std::size_t row, std::size_t column,
                               const std::string& responder) {
  auto text = trim(raw);
  if (text.empty()) return std::nullopt;
  int value = 0;
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (ec != std::errc() || ptr != text.data() + text.size()) {
    throw ParseError(source, row, column,
                     responder + " empathy score \"" + std::string(text) +
                         "\" is not an integer");
  }
  if (value < kMinEmpathyScore || value > kMaxEmpathyScore) {
    throw ParseError(source, row, column,
                     responder + " empathy score " + std::to_string(value) +
                         " outside {1,2,3}");
  }
  return value;
}

struct ResponderColumns {
  ResponderId responder;
  std::optional<std::size_t> response;
  std::optional<std::size_t> score;
};

Corpus parse_delimited_corpus(std::string_view text, char delimiter,
                              const std::string& source) {
  auto rows = parse_delimited(text, delimiter, source);
  if (rows.size() <= 1) throw ValidationError(source + ": no records");

  const auto& header = rows.front().fields;
  std::optional<std::size_t> id_col, situation_col, utterance_col;
  std::vector<ResponderColumns> responders;
  std::vector<std::pair<std::size_t, std::string>> extras;

  auto responder_slot = [&](const std::string& prefix) -> ResponderColumns& {
    auto id = ResponderId::parse(prefix);
    for (auto& r : responders) {
      if (r.responder == id) return r;
    }
    responders.push_back({id, std::nullopt, std::nullopt});
    return responders.back();
  };

  for (std::size_t c = 0; c < header.size(); ++c) {
    std::string name(trim(header[c]));
    std::string lower = to_lower(name);
    if (lower == "id") {
      id_col = c;
    } else if (lower == "situation") {
      situation_col = c;
    } else if (lower == "utterance" || lower == "speaker_utterance") {
      utterance_col = c;
    } else if (lower.ends_with("_response") && name.size() > 9) {
      auto& slot = responder_slot(name.substr(0, name.size() - 9));
      if (slot.response) {
        throw ParseError(source, rows.front().line, c + 1, "duplicate column " + name);
      }
      slot.response = c;
    } else if (lower.ends_with("_score") && name.size() > 6) {
      auto& slot = responder_slot(name.substr(0, name.size() - 6));
      if (slot.score) {
        throw ParseError(source, rows.front().line, c + 1, "duplicate column " + name);
      }
      slot.score = c;
    } else {
      extras.emplace_back(c, name);
    }
  }
  auto require = [&](const std::optional<std::size_t>& col, const char* name) {
    if (!col) {
      throw ParseError(source, rows.front().line, 0,
                       std::string("missing required column \"") + name + "\"");
    }
  };
  require(id_col, "id");
  require(situation_col, "situation");
  require(utterance_col, "utterance");
  for (const auto& r : responders) {
    if (!r.response) {
      throw ParseError(source, rows.front().line, 0,
                       "score column for " + r.responder.name() +
                           " has no matching _response column");
    }
  }

  std::vector<DialogueRecord> records;
  std::unordered_set<std::string> seen;
  for (std::size_t r = 1; r < rows.size(); ++r) {
    const auto& row = rows[r];
    if (row.fields.size() != header.size()) {
      throw ParseError(source, row.line, std::min(row.fields.size(), header.size()) + 1,
                       "expected " + std::to_string(header.size()) + " fields, found " +
                           std::to_string(row.fields.size()));
    }
    DialogueRecord record;
    record.context.id = std::string(trim(row.fields[*id_col]));
    record.context.situation = std::string(trim(row.fields[*situation_col]));
    record.context.speaker_utterance = std::string(trim(row.fields[*utterance_col]));
    auto field_error = [&](std::size_t col, const std::string& what) {
      return ParseError(source, row.line, col + 1, what);
    };
    if (record.context.id.empty()) throw field_error(*id_col, "missing required field id");
    if (record.context.situation.empty()) {
      throw field_error(*situation_col, "missing required field situation");
    }
    if (record.context.speaker_utterance.empty()) {
      throw field_error(*utterance_col, "missing required field utterance");
    }
    if (!seen.insert(record.context.id).second) {
      throw field_error(*id_col, "duplicate id " + record.context.id);
    }
    for (const auto& cols : responders) {
      std::string response_text(trim(row.fields[*cols.response]));
      std::optional<int> score;
      if (cols.score) {
        score = parse_score(row.fields[*cols.score], source, row.line, *cols.score + 1,
                            cols.responder.name());
      }
      if (response_text.empty()) {
        if (score) {
          throw field_error(*cols.response,
                            cols.responder.name() + " response text is empty");
        }
        continue;
      }
      record.responses.emplace(cols.responder,
                               ScoredResponse{cols.responder, response_text, score});
    }
    for (const auto& [col, name] : extras) {
      record.extra_fields.emplace(name, row.fields[col]);
    }
    records.push_back(std::move(record));
  }
  return Corpus(std::move(records));
}

// ---- record-stream dialect -------------------------------------------------

std::string require_string(const json& object, const char* key,
                           const std::string& source, std::size_t line) {
  auto it = object.find(key);
  if (it == object.end() || it->is_null()) {
    throw ParseError(source, line, 0, std::string("missing required field ") + key);
  }
  if (!it->is_string()) {
    throw ParseError(source, line, 0, std::string("field ") + key + " must be a string");
  }
  std::string value(trim(it->get_ref<const std::string&>()));
  if (value.empty()) {
    throw ParseError(source, line, 0, std::string("missing required field ") + key);
  }
  return value;
}

Corpus parse_record_stream_corpus(std::string_view text, const std::string& source) {
  std::vector<DialogueRecord> records;
  std::unordered_set<std::string> seen;
  auto lines = split_lines(text);
  for (std::size_t n = 0; n < lines.size(); ++n) {
    const std::size_t line = n + 1;
    if (is_blank(lines[n])) continue;
    json object;
    try {
      object = json::parse(lines[n]);
    } catch (const json::parse_error& e) {
      throw ParseError(source, line, e.byte, "malformed record");
    }
    if (!object.is_object()) throw ParseError(source, line, 1, "record is not an object");

    DialogueRecord record;
    record.context.id = require_string(object, "id", source, line);
    record.context.situation = require_string(object, "situation", source, line);
    record.context.speaker_utterance = require_string(object, "utterance", source, line);
    if (!seen.insert(record.context.id).second) {
      throw ParseError(source, line, 0, "duplicate id " + record.context.id);
    }

    auto responses = object.find("responses");
    if (responses == object.end() || !responses->is_array()) {
      throw ParseError(source, line, 0, "missing required field responses");
    }
    for (const auto& entry : *responses) {
      if (!entry.is_object()) throw ParseError(source, line, 0, "response is not an object");
      auto responder = ResponderId::parse(require_string(entry, "responder", source, line));
      auto text_it = entry.find("text");
      if (text_it == entry.end() || !text_it->is_string() ||
          is_blank(text_it->get_ref<const std::string&>())) {
        throw ParseError(source, line, 0, responder.name() + " response text is empty");
      }
      std::optional<int> score;
      auto score_it = entry.find("score");
      if (score_it != entry.end() && !score_it->is_null()) {
        if (!score_it->is_number_integer()) {
          throw ParseError(source, line, 0,
                           responder.name() + " empathy score is not an integer");
        }
        auto value = score_it->get<long long>();
        if (value < kMinEmpathyScore || value > kMaxEmpathyScore) {
          throw ParseError(source, line, 0,
                           responder.name() + " empathy score " + std::to_string(value) +
                               " outside {1,2,3}");
        }
        score = static_cast<int>(value);
      }
      ScoredResponse response{responder,
                              std::string(trim(text_it->get_ref<const std::string&>())),
                              score};
      if (!record.responses.emplace(responder, std::move(response)).second) {
        throw ParseError(source, line, 0,
                         "more than one response from " + responder.name());
      }
    }
    for (const auto& [key, value] : object.items()) {
      if (key == "id" || key == "situation" || key == "utterance" || key == "responses") {
        continue;
      }
      record.extra_fields.emplace(key, value.is_string() ? value.get<std::string>()
                                                         : value.dump());
    }
    records.push_back(std::move(record));
  }
  if (records.empty()) throw ValidationError(source + ": no records");
  return Corpus(std::move(records));
}

std::string quote_field(std::string_view field, char delimiter) {
  bool needs_quotes = field.find_first_of(std::string{delimiter, '"', '\n', '\r'}) !=
                      std::string_view::npos;
  if (!needs_quotes) return std::string(field);
  std::string out = "\"";
  for (char c : field) {
    if (c == '"') out.push_back('"');
    out.push_back(c);
  }
  out.push_back('"');
  return out;
}

}  // namespace

Corpus::Corpus(std::vector<DialogueRecord> records) : records_(std::move(records)) {
  std::set<std::string> ids;
  std::string joined;
  for (std::size_t i = 0; i < records_.size(); ++i) {
    validate_record(records_[i], i);
    if (!ids.insert(records_[i].context.id).second) {
      throw ValidationError("duplicate id " + records_[i].context.id);
    }
  }
  bool has_human = false;
  for (const auto& record : records_) {
    for (const auto& [responder, response] : record.responses) {
      if (responder.is_human()) {
        has_human = true;
      } else if (std::find(responders_.begin(), responders_.end(), responder) ==
                 responders_.end()) {
        responders_.push_back(responder);
      }
    }
  }
  if (has_human) responders_.insert(responders_.begin(), ResponderId::human());
  for (const auto& id : ids) {
    joined += id;
    joined.push_back('\n');
  }
  fingerprint_ = sha256_hex(joined);
}

bool Corpus::has_responder(const ResponderId& responder) const {
  return std::find(responders_.begin(), responders_.end(), responder) != responders_.end();
}

const DialogueRecord* Corpus::find(std::string_view id) const {
  for (const auto& record : records_) {
    if (record.context.id == id) return &record;
  }
  return nullptr;
}

bool Corpus::fully_scored() const {
  for (const auto& record : records_) {
    for (const auto& [responder, response] : record.responses) {
      if (!response.empathy_score) return false;
    }
  }
  return true;
}

Corpus parse_corpus(std::string_view text, CorpusDialect dialect,
                    const std::string& source_name, char delimiter) {
  if (dialect == CorpusDialect::Delimited) {
    return parse_delimited_corpus(text, delimiter, source_name);
  }
  return parse_record_stream_corpus(text, source_name);
}

Corpus load_corpus(const std::filesystem::path& path,
                   std::optional<CorpusDialect> dialect) {
  if (!dialect) dialect = dialect_from_extension(path);
  if (!dialect) {
    throw ValidationError("cannot infer corpus dialect from " + path.string() +
                          "; pass it explicitly");
  }
  char delimiter = to_lower(path.extension().string()) == ".tsv" ? '\t' : ',';
  return parse_corpus(read_file(path), *dialect, path.string(), delimiter);
}

std::string serialize_corpus(const Corpus& corpus, CorpusDialect dialect,
                             char delimiter) {
  std::string out;
  if (dialect == CorpusDialect::RecordStream) {
    for (const auto& record : corpus.records()) {
      json object = json::object();
      object["id"] = record.context.id;
      object["situation"] = record.context.situation;
      object["utterance"] = record.context.speaker_utterance;
      json responses = json::array();
      for (const auto& responder : corpus.responders()) {
        const auto* response = record.find(responder);
        if (!response) continue;
        json entry = {{"responder", responder.name()}, {"text", response->text}};
        entry["score"] = response->empathy_score ? json(*response->empathy_score) : json();
        responses.push_back(std::move(entry));
      }
      object["responses"] = std::move(responses);
      for (const auto& [key, value] : record.extra_fields) object[key] = value;
      out += object.dump();
      out.push_back('\n');
    }
    return out;
  }

  std::set<std::string> extra_names;
  for (const auto& record : corpus.records()) {
    for (const auto& [key, value] : record.extra_fields) extra_names.insert(key);
  }
  std::vector<std::string> header{"id", "situation", "utterance"};
  for (const auto& responder : corpus.responders()) {
    std::string prefix = responder.is_human() ? "human" : responder.name();
    header.push_back(prefix + "_response");
    header.push_back(prefix + "_score");
  }
  header.insert(header.end(), extra_names.begin(), extra_names.end());
  auto emit_row = [&](const std::vector<std::string>& fields) {
    for (std::size_t i = 0; i < fields.size(); ++i) {
      if (i) out.push_back(delimiter);
      out += quote_field(fields[i], delimiter);
    }
    out.push_back('\n');
  };
  emit_row(header);
  for (const auto& record : corpus.records()) {
    std::vector<std::string> fields{record.context.id, record.context.situation,
                                    record.context.speaker_utterance};
    for (const auto& responder : corpus.responders()) {
      const auto* response = record.find(responder);
      fields.push_back(response ? response->text : "");
      fields.push_back(response && response->empathy_score
                           ? std::to_string(*response->empathy_score)
                           : "");
    }
    for (const auto& name : extra_names) {
      auto it = record.extra_fields.find(name);
      fields.push_back(it == record.extra_fields.end() ? "" : it->second);
    }
    emit_row(fields);
  }
  return out;
}

void save_corpus(const Corpus& corpus, const std::filesystem::path& path,
                 std::optional<CorpusDialect> dialect) {
  if (!dialect) dialect = dialect_from_extension(path);
  if (!dialect) throw ValidationError("cannot infer corpus dialect from " + path.string());
  char delimiter = to_lower(path.extension().string()) == ".tsv" ? '\t' : ',';
  write_file_atomic(path, serialize_corpus(corpus, *dialect, delimiter));
}

namespace {

std::size_t score_index(int score) { return static_cast<std::size_t>(score - kMinEmpathyScore); }

void check_score_range(int score) {
  if (score < kMinEmpathyScore || score > kMaxEmpathyScore) {
    throw ValidationError("empathy score " + std::to_string(score) + " outside {1,2,3}");
  }
}

}  // namespace

std::uint64_t ScoreHistogram::count(int score) const {
  check_score_range(score);
  return counts[score_index(score)];
}

std::uint64_t ScoreHistogram::total() const { return counts[0] + counts[1] + counts[2]; }

int ScoreHistogram::mode() const {
  int best = kMinEmpathyScore;
  for (int s = kMinEmpathyScore; s <= kMaxEmpathyScore; ++s) {
    if (counts[score_index(s)] > counts[score_index(best)]) best = s;
  }
  return best;
}

ScoreHistogram score_distribution(const Corpus& corpus, const ResponderId& responder) {
  ScoreHistogram histogram;
  if (corpus.empty()) return histogram;
  if (!corpus.has_responder(responder)) {
    throw ValidationError("unknown responder " + responder.name());
  }
  for (const auto& record : corpus.records()) {
    const auto* response = record.find(responder);
    if (!response) continue;
    if (!response->empathy_score) {
      throw ValidationError("dialogue " + record.context.id + ": " + responder.name() +
                            " response is unscored");
    }
    ++histogram.counts[score_index(*response->empathy_score)];
  }
  return histogram;
}

std::uint64_t RatingPairMatrix::at(int human_score, int model_score) const {
  check_score_range(human_score);
  check_score_range(model_score);
  return cells[score_index(human_score)][score_index(model_score)];
}

std::uint64_t RatingPairMatrix::total() const {
  std::uint64_t sum = 0;
  for (const auto& row : cells) {
    for (auto cell : row) sum += cell;
  }
  return sum;
}

std::uint64_t RatingPairMatrix::row_sum(int human_score) const {
  check_score_range(human_score);
  const auto& row = cells[score_index(human_score)];
  return row[0] + row[1] + row[2];
}

std::uint64_t RatingPairMatrix::column_sum(int model_score) const {
  check_score_range(model_score);
  auto c = score_index(model_score);
  return cells[0][c] + cells[1][c] + cells[2][c];
}

RatingPairMatrix rating_pair_matrix(const Corpus& corpus, const ResponderId& model) {
  RatingPairMatrix matrix;
  if (corpus.empty()) return matrix;
  if (model.is_human()) throw ValidationError("rating pairs need a model responder");
  if (!corpus.has_responder(model)) throw ValidationError("unknown model " + model.name());
  const auto human = ResponderId::human();
  for (const auto& record : corpus.records()) {
    const auto* h = record.find(human);
    const auto* m = record.find(model);
    if (!h || !m) {
      throw ValidationError("dialogue " + record.context.id + ": missing " +
                            (!h ? human.name() : model.name()) + " response");
    }
    if (!h->empathy_score || !m->empathy_score) {
      throw ValidationError("dialogue " + record.context.id + ": " +
                            (!h->empathy_score ? human.name() : model.name()) +
                            " response is unscored");
    }
    ++matrix.cells[score_index(*h->empathy_score)][score_index(*m->empathy_score)];
  }
  return matrix;
}

}  // namespace empdistill
