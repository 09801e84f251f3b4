#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "empdistill/corpus.hpp"

namespace empdistill {

enum class Provenance { HumanOriginal, TeacherDirect, TeacherImproved, TeacherInitial };

const char* to_string(Provenance provenance);
Provenance provenance_from_string(std::string_view text);

struct SftExample {
  DialogueContext context;
  ScoredResponse response;
  Provenance provenance = Provenance::HumanOriginal;

  bool operator==(const SftExample&) const = default;
};

struct PreferencePair {
  DialogueContext context;
  ScoredResponse chosen;
  ScoredResponse rejected;

  bool operator==(const PreferencePair&) const = default;
};

enum class Assignment { Sft, Pref, Test };

const char* to_string(Assignment assignment);
Assignment assignment_from_string(std::string_view text);

using AssignmentMap = std::map<std::string, Assignment>;

struct DatasetPartition {
  ResponderId teacher;
  std::vector<SftExample> sft;
  std::vector<PreferencePair> preference;
  std::vector<DialogueContext> test;
  AssignmentMap assignment;
  // Fingerprint of the corpus the partition was built from.
  std::string corpus_fingerprint;

  std::size_t count(Assignment which) const;
};

// Three-way split stored as integer counts over a common denominator, so the
// fractions sum to exactly 1.
class SplitRatio {
 public:
  // Parts are kept as given (not reduced). Throws ValidationError when all
  // parts are zero.
  SplitRatio(std::uint64_t sft, std::uint64_t pref, std::uint64_t test);

  // Accepts "a:b:c" where each part is a decimal ("0.35") or a fraction
  // ("7/20"). Throws ValidationError unless the parts sum to exactly 1.
  static SplitRatio parse(std::string_view text);

  std::uint64_t part(Assignment which) const;
  std::uint64_t denominator() const noexcept { return sft_ + pref_ + test_; }
  // Reduced numerator/denominator of one class.
  std::pair<std::uint64_t, std::uint64_t> fraction(Assignment which) const;
  double value(Assignment which) const;

  // "p/q:p/q:p/q" with reduced fractions.
  std::string to_string() const;

  // Equal as fractions, independent of the stored denominator.
  bool operator==(const SplitRatio& other) const;

 private:
  std::uint64_t sft_;
  std::uint64_t pref_;
  std::uint64_t test_;
};

// Score rules: human 3 & model 3 -> Sft (two examples); human 1/2 & model 3 ->
// Pref (chosen model, rejected human); anything else -> Test.
DatasetPartition partition_by_scores(const Corpus& corpus, const ResponderId& model);

struct CombineStats {
  std::size_t duplicate_sft_removed = 0;
  std::size_t duplicate_pairs_removed = 0;
};

// Union of member partitions. A dialogue that is Sft for any member is Sft,
// otherwise Pref for any member is Pref, otherwise Test.
DatasetPartition combine_partitions(std::span<const DatasetPartition> partitions,
                                    CombineStats* stats = nullptr);

// Class sizes via largest-remainder rounding of N * fraction; members chosen
// by a seeded Fisher-Yates shuffle of the sorted ids.
AssignmentMap ratio_partition(std::span<const std::string> ids, const SplitRatio& ratio,
                              std::uint64_t seed);
AssignmentMap ratio_partition(const Corpus& corpus, const SplitRatio& ratio,
                              std::uint64_t seed);

// Class sizes for `n` items under `ratio`, in {Sft, Pref, Test} order.
std::array<std::size_t, 3> class_sizes(std::size_t n, const SplitRatio& ratio);

SplitRatio ratio_of(const DatasetPartition& partition);
SplitRatio ratio_of(const AssignmentMap& assignment);

// Line-delimited manifest: a header record followed by one {id, assignment,
// teacher} record per dialogue.
struct PartitionManifest {
  std::string teacher;
  std::optional<SplitRatio> ratio;
  std::optional<std::uint64_t> seed;
  AssignmentMap assignment;
};

std::string serialize_manifest(const PartitionManifest& manifest);
PartitionManifest parse_manifest(std::string_view text,
                                 const std::string& source = "<manifest>");
PartitionManifest manifest_of(const DatasetPartition& partition,
                              std::optional<std::uint64_t> seed = std::nullopt);

}  // namespace empdistill
