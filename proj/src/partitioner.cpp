#include "empdistill/partitioner.hpp"

#include <algorithm>
#include <charconv>
#include <limits>
#include <numeric>
#include <random>
#include <set>
#include <tuple>

#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include "empdistill/errors.hpp"
#include "empdistill/text.hpp"

namespace empdistill {

using nlohmann::json;
__extension__ typedef unsigned __int128 u128;

const char* to_string(Provenance provenance) {
  switch (provenance) {
    case Provenance::HumanOriginal: return "human_original";
    case Provenance::TeacherDirect: return "teacher_direct";
    case Provenance::TeacherImproved: return "teacher_improved";
    case Provenance::TeacherInitial: return "teacher_initial";
  }
  return "unknown";
}

Provenance provenance_from_string(std::string_view text) {
  for (auto p : {Provenance::HumanOriginal, Provenance::TeacherDirect,
                 Provenance::TeacherImproved, Provenance::TeacherInitial}) {
    if (text == to_string(p)) return p;
  }
  throw ValidationError("unknown provenance \"" + std::string(text) + "\"");
}

const char* to_string(Assignment assignment) {
  switch (assignment) {
    case Assignment::Sft: return "sft";
    case Assignment::Pref: return "pref";
    case Assignment::Test: return "test";
  }
  return "unknown";
}

Assignment assignment_from_string(std::string_view text) {
  for (auto a : {Assignment::Sft, Assignment::Pref, Assignment::Test}) {
    if (text == to_string(a)) return a;
  }
  throw ValidationError("unknown assignment \"" + std::string(text) + "\"");
}

std::size_t DatasetPartition::count(Assignment which) const {
  return static_cast<std::size_t>(std::count_if(
      assignment.begin(), assignment.end(),
      [which](const auto& entry) { return entry.second == which; }));
}

// ---- SplitRatio --------------------------------------------------------------

SplitRatio::SplitRatio(std::uint64_t sft, std::uint64_t pref, std::uint64_t test)
    : sft_(sft), pref_(pref), test_(test) {
  if (sft_ + pref_ + test_ == 0) throw ValidationError("split ratio has no mass");
}

namespace {

std::pair<std::uint64_t, std::uint64_t> parse_fraction(std::string_view raw) {
  auto text = trim(raw);
  auto fail = [&]() -> ValidationError {
    return ValidationError("invalid ratio component \"" + std::string(raw) + "\"");
  };
  auto parse_uint = [&](std::string_view digits) {
    std::uint64_t value = 0;
    if (digits.empty()) throw fail();
    auto [ptr, ec] = std::from_chars(digits.data(), digits.data() + digits.size(), value);
    if (ec != std::errc() || ptr != digits.data() + digits.size()) throw fail();
    return value;
  };
  if (auto slash = text.find('/'); slash != std::string_view::npos) {
    auto num = parse_uint(trim(text.substr(0, slash)));
    auto den = parse_uint(trim(text.substr(slash + 1)));
    if (den == 0) throw fail();
    return {num, den};
  }
  auto dot = text.find('.');
  std::string_view whole = text.substr(0, dot);
  std::string_view frac = dot == std::string_view::npos ? std::string_view{} : text.substr(dot + 1);
  if (frac.size() > 12) throw ValidationError("ratio component has too many decimals: " + std::string(raw));
  std::uint64_t den = 1;
  for (std::size_t i = 0; i < frac.size(); ++i) den *= 10;
  std::uint64_t num = (whole.empty() ? 0 : parse_uint(whole)) * den;
  if (!frac.empty()) num += parse_uint(frac);
  if (whole.empty() && frac.empty()) throw fail();
  return {num, den};
}

}  // namespace

SplitRatio SplitRatio::parse(std::string_view text) {
  std::vector<std::string_view> parts;
  std::size_t start = 0;
  while (true) {
    auto colon = text.find(':', start);
    parts.push_back(text.substr(start, colon == std::string_view::npos ? colon : colon - start));
    if (colon == std::string_view::npos) break;
    start = colon + 1;
  }
  if (parts.size() != 3) {
    throw ValidationError("ratio must have three parts sft:pref:test, got \"" +
                          std::string(text) + "\"");
  }
  std::array<std::pair<std::uint64_t, std::uint64_t>, 3> fractions;
  for (std::size_t i = 0; i < 3; ++i) fractions[i] = parse_fraction(parts[i]);

  u128 common = 1;
  for (const auto& [num, den] : fractions) {
    auto g = std::gcd(static_cast<std::uint64_t>(common), den);
    common = common / g * den;
    if (common > std::numeric_limits<std::uint64_t>::max()) {
      throw ValidationError("ratio denominators too large");
    }
  }
  std::array<u128, 3> scaled{};
  u128 sum = 0;
  for (std::size_t i = 0; i < 3; ++i) {
    scaled[i] = static_cast<u128>(fractions[i].first) * (common / fractions[i].second);
    sum += scaled[i];
  }
  if (sum != common) {
    throw ValidationError("ratio fractions must sum to 1, got \"" + std::string(text) + "\"");
  }
  return SplitRatio(static_cast<std::uint64_t>(scaled[0]), static_cast<std::uint64_t>(scaled[1]),
                    static_cast<std::uint64_t>(scaled[2]));
}

std::uint64_t SplitRatio::part(Assignment which) const {
  switch (which) {
    case Assignment::Sft: return sft_;
    case Assignment::Pref: return pref_;
    case Assignment::Test: return test_;
  }
  return 0;
}

std::pair<std::uint64_t, std::uint64_t> SplitRatio::fraction(Assignment which) const {
  auto num = part(which);
  auto den = denominator();
  auto g = std::gcd(num, den);
  if (num == 0) return {0, 1};
  return {num / g, den / g};
}

double SplitRatio::value(Assignment which) const {
  return static_cast<double>(part(which)) / static_cast<double>(denominator());
}

std::string SplitRatio::to_string() const {
  std::string out;
  for (auto which : {Assignment::Sft, Assignment::Pref, Assignment::Test}) {
    auto [num, den] = fraction(which);
    if (!out.empty()) out.push_back(':');
    out += std::to_string(num) + "/" + std::to_string(den);
  }
  return out;
}

bool SplitRatio::operator==(const SplitRatio& other) const {
  const u128 lhs_den = denominator();
  const u128 rhs_den = other.denominator();
  for (auto which : {Assignment::Sft, Assignment::Pref, Assignment::Test}) {
    if (static_cast<u128>(part(which)) * rhs_den != static_cast<u128>(other.part(which)) * lhs_den) {
      return false;
    }
  }
  return true;
}

// ---- score-based partitioning -------------------------------------------------

DatasetPartition partition_by_scores(const Corpus& corpus, const ResponderId& model) {
  if (model.is_human()) throw ValidationError("partitioning needs a model responder");
  if (!corpus.empty() && !corpus.has_responder(model)) {
    throw ValidationError("unknown model " + model.name());
  }
  DatasetPartition partition;
  partition.teacher = model;
  partition.corpus_fingerprint = corpus.fingerprint();
  const auto human = ResponderId::human();

  for (const auto& record : corpus.records()) {
    const auto& ctx = record.context;
    const auto* h = record.find(human);
    const auto* m = record.find(model);
    if (!h || !m) {
      throw ValidationError("dialogue " + ctx.id + ": missing " +
                            (!h ? human.name() : model.name()) + " response");
    }
    if (!h->empathy_score || !m->empathy_score) {
      throw ValidationError("dialogue " + ctx.id + ": " +
                            (!h->empathy_score ? human.name() : model.name()) +
                            " response is unscored");
    }
    const int hs = *h->empathy_score;
    const int ms = *m->empathy_score;
    if (hs == 3 && ms == 3) {
      partition.assignment[ctx.id] = Assignment::Sft;
      partition.sft.push_back({ctx, *h, Provenance::HumanOriginal});
      partition.sft.push_back({ctx, *m, Provenance::TeacherDirect});
    } else if (hs < 3 && ms == 3 && h->text != m->text) {
      partition.assignment[ctx.id] = Assignment::Pref;
      partition.preference.push_back({ctx, *m, *h});
    } else {
      partition.assignment[ctx.id] = Assignment::Test;
      partition.test.push_back(ctx);
    }
  }
  return partition;
}

// ---- combining ------------------------------------------------------------------

DatasetPartition combine_partitions(std::span<const DatasetPartition> partitions,
                                    CombineStats* stats) {
  if (partitions.empty()) throw ValidationError("nothing to combine");
  const auto& first = partitions.front();
  for (const auto& member : partitions.subspan(1)) {
    bool same_ids = member.assignment.size() == first.assignment.size() &&
                    std::equal(member.assignment.begin(), member.assignment.end(),
                               first.assignment.begin(),
                               [](const auto& a, const auto& b) { return a.first == b.first; });
    if (member.corpus_fingerprint != first.corpus_fingerprint || !same_ids) {
      throw ValidationError("cannot combine partitions over different corpora (" +
                            first.teacher.name() + " vs " + member.teacher.name() + ")");
    }
  }

  DatasetPartition combined;
  if (partitions.size() == 1) {
    combined.teacher = first.teacher;
  } else {
    std::string name = "combined(";
    for (std::size_t i = 0; i < partitions.size(); ++i) {
      if (i) name += "+";
      name += partitions[i].teacher.name();
    }
    combined.teacher = ResponderId::model(name + ")");
  }
  combined.corpus_fingerprint = first.corpus_fingerprint;

  CombineStats local;
  std::set<std::tuple<std::string, ResponderId, std::string>> sft_seen;
  std::set<std::tuple<std::string, ResponderId, std::string, ResponderId, std::string>> pair_seen;
  for (const auto& member : partitions) {
    for (const auto& example : member.sft) {
      if (sft_seen.emplace(example.context.id, example.response.responder, example.response.text)
              .second) {
        combined.sft.push_back(example);
      } else {
        ++local.duplicate_sft_removed;
      }
    }
    for (const auto& pair : member.preference) {
      if (pair_seen.emplace(pair.context.id, pair.chosen.responder, pair.chosen.text,
                            pair.rejected.responder, pair.rejected.text)
              .second) {
        combined.preference.push_back(pair);
      } else {
        ++local.duplicate_pairs_removed;
      }
    }
  }

  for (const auto& [id, ignored] : first.assignment) {
    Assignment merged = Assignment::Test;
    for (const auto& member : partitions) {
      auto a = member.assignment.at(id);
      if (a == Assignment::Sft) {
        merged = Assignment::Sft;
        break;
      }
      if (a == Assignment::Pref) merged = Assignment::Pref;
    }
    combined.assignment[id] = merged;
  }
  for (const auto& ctx : first.test) {
    if (combined.assignment.at(ctx.id) == Assignment::Test) combined.test.push_back(ctx);
  }

  if (local.duplicate_sft_removed > 0 || local.duplicate_pairs_removed > 0) {
    spdlog::info("combine: removed {} duplicate SFT examples and {} duplicate pairs",
                 local.duplicate_sft_removed, local.duplicate_pairs_removed);
  }
  if (stats) *stats = local;
  return combined;
}

// ---- ratio partitioning ---------------------------------------------------------

std::array<std::size_t, 3> class_sizes(std::size_t n, const SplitRatio& ratio) {
  const std::array<Assignment, 3> order{Assignment::Sft, Assignment::Pref, Assignment::Test};
  const u128 den = ratio.denominator();
  std::array<std::size_t, 3> sizes{};
  std::array<u128, 3> remainders{};
  std::size_t assigned = 0;
  for (std::size_t i = 0; i < 3; ++i) {
    u128 product = static_cast<u128>(n) * ratio.part(order[i]);
    sizes[i] = static_cast<std::size_t>(product / den);
    remainders[i] = product % den;
    assigned += sizes[i];
  }
  std::array<std::size_t, 3> rank{0, 1, 2};
  std::stable_sort(rank.begin(), rank.end(), [&](std::size_t a, std::size_t b) {
    return remainders[a] > remainders[b];
  });
  for (std::size_t k = 0; assigned < n; ++k, ++assigned) ++sizes[rank[k]];
  return sizes;
}

namespace {

// Uniform index in [0, bound). Written out instead of using
// std::uniform_int_distribution, whose output differs between standard
// libraries.
std::uint64_t uniform_index(std::mt19937_64& rng, std::uint64_t bound) {
  const std::uint64_t threshold = (0 - bound) % bound;
  while (true) {
    std::uint64_t r = rng();
    if (r >= threshold) return r % bound;
  }
}

}  // namespace

AssignmentMap ratio_partition(std::span<const std::string> ids, const SplitRatio& ratio,
                              std::uint64_t seed) {
  if (ids.empty()) throw ValidationError("cannot partition an empty corpus");
  std::vector<std::string> order(ids.begin(), ids.end());
  std::sort(order.begin(), order.end());
  if (std::adjacent_find(order.begin(), order.end()) != order.end()) {
    throw ValidationError("duplicate dialogue id in ratio partition");
  }
  std::mt19937_64 rng(seed);
  for (std::size_t i = order.size() - 1; i > 0; --i) {
    auto j = static_cast<std::size_t>(uniform_index(rng, i + 1));
    std::swap(order[i], order[j]);
  }
  auto sizes = class_sizes(order.size(), ratio);
  AssignmentMap assignment;
  for (std::size_t i = 0; i < order.size(); ++i) {
    Assignment a = i < sizes[0]              ? Assignment::Sft
                   : i < sizes[0] + sizes[1] ? Assignment::Pref
                                             : Assignment::Test;
    assignment.emplace(order[i], a);
  }
  return assignment;
}

AssignmentMap ratio_partition(const Corpus& corpus, const SplitRatio& ratio,
                              std::uint64_t seed) {
  std::vector<std::string> ids;
  ids.reserve(corpus.size());
  for (const auto& record : corpus.records()) ids.push_back(record.context.id);
  return ratio_partition(ids, ratio, seed);
}

SplitRatio ratio_of(const AssignmentMap& assignment) {
  if (assignment.empty()) throw ValidationError("cannot take the ratio of an empty partition");
  std::array<std::uint64_t, 3> counts{};
  for (const auto& [id, a] : assignment) ++counts[static_cast<std::size_t>(a)];
  return SplitRatio(counts[0], counts[1], counts[2]);
}

SplitRatio ratio_of(const DatasetPartition& partition) { return ratio_of(partition.assignment); }

// ---- manifest -------------------------------------------------------------------

std::string serialize_manifest(const PartitionManifest& manifest) {
  json header = {{"kind", "partition_manifest"},
                 {"schema_version", 1},
                 {"teacher", manifest.teacher},
                 {"count", manifest.assignment.size()}};
  header["ratio"] = manifest.ratio ? json(manifest.ratio->to_string()) : json();
  header["seed"] = manifest.seed ? json(*manifest.seed) : json();
  std::string out = header.dump() + "\n";
  for (const auto& [id, a] : manifest.assignment) {
    json record = {{"id", id}, {"assignment", to_string(a)}, {"teacher", manifest.teacher}};
    out += record.dump();
    out.push_back('\n');
  }
  return out;
}

PartitionManifest parse_manifest(std::string_view text, const std::string& source) {
  auto lines = split_lines(text);
  PartitionManifest manifest;
  bool have_header = false;
  for (std::size_t n = 0; n < lines.size(); ++n) {
    if (is_blank(lines[n])) continue;
    json object;
    try {
      object = json::parse(lines[n]);
    } catch (const json::parse_error& e) {
      throw ParseError(source, n + 1, e.byte, "malformed manifest line");
    }
    try {
      if (!have_header) {
        if (object.value("kind", "") != "partition_manifest") {
          throw ParseError(source, n + 1, 0, "missing partition manifest header");
        }
        manifest.teacher = object.at("teacher").get<std::string>();
        if (!object["ratio"].is_null()) {
          manifest.ratio = SplitRatio::parse(object["ratio"].get<std::string>());
        }
        if (!object["seed"].is_null()) manifest.seed = object["seed"].get<std::uint64_t>();
        have_header = true;
        continue;
      }
      auto id = object.at("id").get<std::string>();
      auto a = assignment_from_string(object.at("assignment").get<std::string>());
      if (!manifest.assignment.emplace(id, a).second) {
        throw ParseError(source, n + 1, 0, "duplicate id " + id);
      }
    } catch (const json::exception& e) {
      throw ParseError(source, n + 1, 0, e.what());
    }
  }
  if (!have_header) throw ValidationError(source + ": empty manifest");
  return manifest;
}

PartitionManifest manifest_of(const DatasetPartition& partition,
                              std::optional<std::uint64_t> seed) {
  PartitionManifest manifest;
  manifest.teacher = partition.teacher.name();
  if (!partition.assignment.empty()) manifest.ratio = ratio_of(partition);
  manifest.seed = seed;
  manifest.assignment = partition.assignment;
  return manifest;
}

}  // namespace empdistill
