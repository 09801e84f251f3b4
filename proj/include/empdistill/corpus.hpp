#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace empdistill {

struct DialogueContext {
  std::string id;
  std::string situation;
  std::string speaker_utterance;

  bool operator==(const DialogueContext&) const = default;
};

enum class ResponderKind { Human, Model };

// Who wrote a response. The human responder is a singleton named "Human";
// every other name is a model.
class ResponderId {
 public:
  static constexpr std::string_view kHumanName = "Human";

  // The human responder.
  ResponderId() = default;

  static ResponderId human();
  // Throws ValidationError for a blank name or the reserved human name.
  static ResponderId model(std::string name);
  // "human" in any letter case maps to the human responder.
  static ResponderId parse(std::string_view name);

  ResponderKind kind() const noexcept { return kind_; }
  const std::string& name() const noexcept { return name_; }
  bool is_human() const noexcept { return kind_ == ResponderKind::Human; }

  auto operator<=>(const ResponderId&) const = default;
  bool operator==(const ResponderId&) const = default;

 private:
  ResponderId(ResponderKind kind, std::string name)
      : kind_(kind), name_(std::move(name)) {}

  ResponderKind kind_ = ResponderKind::Human;
  std::string name_ = std::string(kHumanName);
};

inline constexpr int kMinEmpathyScore = 1;
inline constexpr int kMaxEmpathyScore = 3;

struct ScoredResponse {
  ResponderId responder;
  std::string text;
  std::optional<int> empathy_score;

  bool operator==(const ScoredResponse&) const = default;
};

struct DialogueRecord {
  DialogueContext context;
  std::map<ResponderId, ScoredResponse> responses;
  // Columns or fields the loader did not recognize, kept verbatim.
  std::map<std::string, std::string> extra_fields;

  const ScoredResponse* find(const ResponderId& responder) const;

  bool operator==(const DialogueRecord&) const = default;
};

enum class CorpusDialect { Delimited, RecordStream };

// .csv/.tsv -> Delimited, .jsonl/.ndjson -> RecordStream.
std::optional<CorpusDialect> dialect_from_extension(
    const std::filesystem::path& path);

// Immutable, validated collection of dialogue records.
class Corpus {
 public:
  Corpus() = default;
  // Throws ValidationError if any record breaks a DialogueRecord invariant or
  // two records share an id.
  explicit Corpus(std::vector<DialogueRecord> records);

  const std::vector<DialogueRecord>& records() const noexcept { return records_; }
  std::size_t size() const noexcept { return records_.size(); }
  bool empty() const noexcept { return records_.empty(); }

  // Human first (when present), then models in order of first appearance.
  const std::vector<ResponderId>& responders() const noexcept {
    return responders_;
  }
  bool has_responder(const ResponderId& responder) const;
  const DialogueRecord* find(std::string_view id) const;

  // True when every response in every record carries a score.
  bool fully_scored() const;

  // Digest of the sorted dialogue ids; partitions over the same corpus share it.
  const std::string& fingerprint() const noexcept { return fingerprint_; }

  bool operator==(const Corpus& other) const { return records_ == other.records_; }

 private:
  std::vector<DialogueRecord> records_;
  std::vector<ResponderId> responders_;
  std::string fingerprint_;
};

// Throws ParseError (row/column located), ValidationError or IoError.
// An input without records is rejected with "no records".
Corpus load_corpus(const std::filesystem::path& path,
                   std::optional<CorpusDialect> dialect = std::nullopt);
Corpus parse_corpus(std::string_view text, CorpusDialect dialect,
                    const std::string& source_name = "<corpus>",
                    char delimiter = ',');

std::string serialize_corpus(const Corpus& corpus, CorpusDialect dialect,
                             char delimiter = ',');
void save_corpus(const Corpus& corpus, const std::filesystem::path& path,
                 std::optional<CorpusDialect> dialect = std::nullopt);

struct ScoreHistogram {
  std::array<std::uint64_t, 3> counts{};

  std::uint64_t count(int score) const;
  std::uint64_t total() const;
  // Lowest score among those with the highest count.
  int mode() const;

  bool operator==(const ScoreHistogram&) const = default;
};

// Tally of `responder`'s scores. Records without a response from the
// responder are skipped. Throws on an unknown responder (non-empty corpus)
// or an unscored response.
ScoreHistogram score_distribution(const Corpus& corpus,
                                  const ResponderId& responder);

// Cells indexed by (human score, model score).
struct RatingPairMatrix {
  std::array<std::array<std::uint64_t, 3>, 3> cells{};

  std::uint64_t at(int human_score, int model_score) const;
  std::uint64_t total() const;
  std::uint64_t row_sum(int human_score) const;
  std::uint64_t column_sum(int model_score) const;

  bool operator==(const RatingPairMatrix&) const = default;
};

// Requires scored Human and model responses in every record.
RatingPairMatrix rating_pair_matrix(const Corpus& corpus,
                                    const ResponderId& model);

}  // namespace empdistill
