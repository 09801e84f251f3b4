#include "test_support.hpp"

#include <algorithm>
#include <atomic>
#include <numeric>

#include "empdistill/hashing.hpp"

namespace empdistill::testing {

using nlohmann::json;

ScriptedTransport::ScriptedTransport(Responder responder) : responder_(std::move(responder)) {}

HttpResponse ScriptedTransport::post_json(
    const std::string&, const std::string&, const std::string& body,
    const std::vector<std::pair<std::string, std::string>>& headers, std::chrono::seconds) {
  auto request = json::parse(body);
  Responder responder;
  {
    std::lock_guard lock(mutex_);
    requests_.push_back(request);
    headers_.push_back(headers);
    if (!queue_.empty()) {
      auto next = queue_.front();
      queue_.erase(queue_.begin());
      return next;
    }
    responder = responder_;
  }
  if (!responder) return status_response(500);
  return responder(request);
}

void ScriptedTransport::enqueue(HttpResponse response) {
  std::lock_guard lock(mutex_);
  queue_.push_back(std::move(response));
}

std::size_t ScriptedTransport::calls() const {
  std::lock_guard lock(mutex_);
  return requests_.size();
}

std::vector<json> ScriptedTransport::requests() const {
  std::lock_guard lock(mutex_);
  return requests_;
}

std::vector<std::vector<std::pair<std::string, std::string>>> ScriptedTransport::headers() const {
  std::lock_guard lock(mutex_);
  return headers_;
}

HttpResponse ok_completion(const std::string& text) {
  json body = {{"id", "chatcmpl-test"},
               {"choices", json::array({{{"index", 0},
                                         {"message", {{"role", "assistant"}, {"content", text}}},
                                         {"finish_reason", "stop"}}})},
               {"usage", {{"prompt_tokens", 11}, {"completion_tokens", 7}}}};
  return {200, body.dump(), std::nullopt, ""};
}

HttpResponse status_response(int status, std::optional<int> retry_after) {
  return {status, R"({"error":{"message":"scripted failure"}})", retry_after, ""};
}

namespace {

const char* const kPhrases[] = {
    "That sounds really hard, and I'm sorry you're going through it.",
    "I can hear how much this matters to you; it makes sense to feel that way.",
    "Oh no, that must have been so frustrating. Is there anything that would help right now?",
    "I'm glad you shared this. Your feelings are completely understandable.",
    "What a tough moment. I'd be upset too, and I'm here if you want to talk.",
};

std::string first_user_message(const json& request) {
  for (const auto& message : request.at("messages")) {
    if (message.at("role") == "user") return message.at("content").get<std::string>();
  }
  return {};
}

}  // namespace

std::string synthetic_reply(const json& request) {
  const auto prompt = first_user_message(request);
  const std::string r1_tag = "\nResponse 1: ";
  const std::string r2_tag = "\nResponse 2: ";
  auto r1 = prompt.find(r1_tag);
  auto r2 = prompt.find(r2_tag);
  if (r1 != std::string::npos && r2 != std::string::npos && r2 > r1) {
    auto first = prompt.substr(r1 + r1_tag.size(), r2 - r1 - r1_tag.size());
    auto second = prompt.substr(r2 + r2_tag.size());
    return sha256_hex(first) < sha256_hex(second) ? "1" : "2";
  }
  auto digest = sha256_hex(request.at("model").get<std::string>() + "\n" + prompt);
  auto pick = std::stoul(digest.substr(0, 8), nullptr, 16) % std::size(kPhrases);
  return std::string(kPhrases[pick]) + " [" + digest.substr(0, 8) + "]";
}

ScriptedTransport::Responder synthetic_responder() {
  return [](const json& request) { return ok_completion(synthetic_reply(request)); };
}

ScriptedTransport::Responder always_first_responder() {
  return [](const json&) { return ok_completion("1"); };
}

Clock::time_point FakeClock::now() {
  std::lock_guard lock(mutex_);
  return now_;
}

void FakeClock::sleep_for(std::chrono::milliseconds duration) {
  std::lock_guard lock(mutex_);
  sleeps_.push_back(duration);
  now_ += duration;
}

void FakeClock::advance(std::chrono::milliseconds duration) {
  std::lock_guard lock(mutex_);
  now_ += duration;
}

std::vector<std::chrono::milliseconds> FakeClock::sleeps() const {
  std::lock_guard lock(mutex_);
  return sleeps_;
}

TempDir::TempDir() {
  static std::atomic<int> counter{0};
  std::random_device device;
  auto base = std::filesystem::temp_directory_path();
  do {
    path_ = base / ("empdistill-test-" + std::to_string(device()) + "-" +
                    std::to_string(counter++));
  } while (std::filesystem::exists(path_));
  std::filesystem::create_directories(path_);
}

TempDir::~TempDir() {
  std::error_code ec;
  std::filesystem::remove_all(path_, ec);
}

ProviderConfig replay_config(const std::filesystem::path& cache_dir, std::string name) {
  ProviderConfig config;
  config.name = std::move(name);
  config.kind = ProviderKind::Replay;
  config.cache_dir = cache_dir;
  return config;
}

ProviderConfig http_config(const std::filesystem::path& cache_dir, std::string name) {
  ProviderConfig config;
  config.name = std::move(name);
  config.kind = ProviderKind::HttpChat;
  config.base_url = "http://scripted.invalid/v1";
  config.credential_env = kTestKeyEnv;
  config.cache_dir = cache_dir;
  config.rate_limit_per_minute = 100000;
  config.initial_backoff = std::chrono::milliseconds(10);
  return config;
}

DialogueRecord taco_record() {
  DialogueRecord record;
  record.context.id = "taco";
  record.context.situation =
      "I was just walking out of Taco bell. The bottom fell out of my bag and my wonderful taco "
      "bell covered the ground.";
  record.context.speaker_utterance =
      "I can't believe the bottom of the bag ripped and my wonderful taco's covered the ground. "
      "I'm sure my face was bright red with anger.";
  record.responses[ResponderId::human()] = {ResponderId::human(), kTacoHuman, 1};
  auto gpt4 = ResponderId::model("GPT-4");
  record.responses[gpt4] = {gpt4, kTacoGpt4, 3};
  return record;
}

std::uint64_t uniform(std::mt19937_64& rng, std::uint64_t lo, std::uint64_t hi) {
  const std::uint64_t span = hi - lo + 1;
  if (span == 0) return rng();
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                              std::numeric_limits<std::uint64_t>::max() % span;
  std::uint64_t draw;
  do {
    draw = rng();
  } while (draw >= limit);
  return lo + draw % span;
}

namespace {

const char* const kWords[] = {
    "I",      "you",     "feel",   "really", "sorry",  "that",    "sounds", "hard",
    "café",   "naïve",   "\"so\"", "tough,", "ok.",    "it's",    "great!", "🙂",
    "friend", "work",    "exam",   "dog",    "lost",   "happy",   "proud",  "anxious",
    "tacos",  "weekend", "mother", "new",    "job",    "excited", "tired",  "what?",
};

bool chance(std::mt19937_64& rng, double p) {
  return static_cast<double>(uniform(rng, 0, 999999)) < p * 1000000.0;
}

}  // namespace

std::string random_text(std::mt19937_64& rng, std::size_t min_words, std::size_t max_words) {
  auto count = uniform(rng, min_words, max_words);
  std::string text;
  for (std::uint64_t i = 0; i < count; ++i) {
    if (i > 0) text += ' ';
    text += kWords[uniform(rng, 0, std::size(kWords) - 1)];
  }
  return text;
}

Corpus random_corpus(std::mt19937_64& rng, const CorpusShape& shape) {
  std::vector<std::size_t> order(shape.size);
  std::iota(order.begin(), order.end(), std::size_t{0});
  for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[uniform(rng, 0, i - 1)]);

  auto score = [&]() -> std::optional<int> {
    if (!shape.scored) return std::nullopt;
    return static_cast<int>(uniform(rng, 1, 3));
  };
  std::vector<DialogueRecord> records;
  for (auto index : order) {
    DialogueRecord record;
    char id[16];
    std::snprintf(id, sizeof id, "d%04zu", index);
    record.context = {id, random_text(rng), random_text(rng)};
    const auto human = ResponderId::human();
    record.responses[human] = {human, random_text(rng), score()};
    for (const auto& name : shape.models) {
      if (chance(rng, shape.missing_rate)) continue;
      auto model = ResponderId::model(name);
      auto text = chance(rng, shape.duplicate_rate) ? record.responses[human].text
                                                     : random_text(rng);
      record.responses[model] = {model, text, score()};
    }
    records.push_back(std::move(record));
  }
  return Corpus(std::move(records));
}

PromptEngine default_engine() { return PromptEngine(TemplateSet::load_default()); }

std::filesystem::path fixture_path(const std::string& relative) {
  return std::filesystem::path(EMPDISTILL_FIXTURE_DIR) / relative;
}

}  // namespace empdistill::testing
