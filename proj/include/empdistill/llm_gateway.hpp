#pragma once

#include <atomic>
#include <chrono>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <semaphore>
#include <string>
#include <utility>
#include <vector>

#include "empdistill/errors.hpp"
#include "empdistill/prompt_engine.hpp"

namespace empdistill {

inline constexpr double kGenerationTemperature = 0.7;
inline constexpr double kJudgeTemperature = 0.0;

struct ChatMessage {
  std::string role;
  std::string content;

  bool operator==(const ChatMessage&) const = default;
};

struct CompletionRequest {
  std::string model;
  std::vector<ChatMessage> messages;
  double temperature = kGenerationTemperature;
  int max_tokens = 512;
  std::optional<std::int64_t> seed;

  // Throws ValidationError.
  void validate() const;
};

struct TokenUsage {
  std::uint64_t prompt = 0;
  std::uint64_t completion = 0;
};

struct CompletionResult {
  std::string text;
  std::string model;
  TokenUsage usage;
  bool cached = false;
  // Wall time of the original provider call; cache hits report the stored
  // value so replays are reproducible.
  std::uint64_t latency_ms = 0;
  // Provider calls made for this result (0 for cache hits).
  int attempts = 0;
  std::string request_hash;
};

// Content address of a request: hash of (model, messages, temperature, seed).
std::string request_hash(const CompletionRequest& request);

// Builds a request from a rendered prompt: optional system preamble, then the
// user message.
CompletionRequest make_request(const std::string& model, const RenderedPrompt& prompt,
                               double temperature, std::optional<std::int64_t> seed,
                               int max_tokens = 512);

enum class ProviderKind { HttpChat, Replay };

struct ProviderConfig {
  std::string name = "default";
  ProviderKind kind = ProviderKind::Replay;
  std::string base_url;
  // Name of the environment variable that holds the API key.
  std::string credential_env;
  int rate_limit_per_minute = 60;
  int max_retries = 3;
  std::filesystem::path cache_dir = "cache";
  int max_in_flight = 4;
  // Forbid network access; HttpChat then serves from its cache only.
  bool offline = false;
  std::chrono::milliseconds initial_backoff{1000};
  std::chrono::milliseconds max_backoff{30000};
  std::chrono::seconds timeout{120};

  // Throws ValidationError.
  void validate() const;
};

const char* to_string(ProviderKind kind);
ProviderKind provider_kind_from_string(std::string_view text);

// ---- seams ------------------------------------------------------------------

struct HttpResponse {
  // 0 when no HTTP response arrived (connection failure, timeout).
  int status = 0;
  std::string body;
  std::optional<int> retry_after_seconds;
  std::string transport_error;
};

class Transport {
 public:
  virtual ~Transport() = default;
  // POST `body` (JSON) to base_url + path.
  virtual HttpResponse post_json(const std::string& base_url, const std::string& path,
                                 const std::string& body,
                                 const std::vector<std::pair<std::string, std::string>>& headers,
                                 std::chrono::seconds timeout) = 0;
};

std::shared_ptr<Transport> make_http_transport();

class Clock {
 public:
  using time_point = std::chrono::steady_clock::time_point;
  virtual ~Clock() = default;
  virtual time_point now() = 0;
  virtual void sleep_for(std::chrono::milliseconds duration) = 0;
};

std::shared_ptr<Clock> system_clock();

// ---- building blocks ----------------------------------------------------------

// At most `limit` acquisitions in any sliding 60 s window.
class RateLimiter {
 public:
  RateLimiter(int limit_per_minute, std::shared_ptr<Clock> clock);

  void acquire();

 private:
  int limit_;
  std::shared_ptr<Clock> clock_;
  std::mutex mutex_;
  std::deque<Clock::time_point> recent_;
};

struct CacheEntry {
  std::string text;
  TokenUsage usage;
  std::uint64_t latency_ms = 0;
};

// Content-addressed completion cache: <dir>/<model>/<hash>.json plus a
// <hash>.prompt.txt sidecar with the readable prompt.
class ResponseCache {
 public:
  explicit ResponseCache(std::filesystem::path dir) : dir_(std::move(dir)) {}

  std::optional<CacheEntry> lookup(const CompletionRequest& request,
                                   const std::string& hash) const;
  void store(const CompletionRequest& request, const std::string& hash,
             const CacheEntry& entry) const;
  std::filesystem::path entry_path(const std::string& model, const std::string& hash) const;

  const std::filesystem::path& dir() const noexcept { return dir_; }

 private:
  std::filesystem::path dir_;
};

// ---- gateway ------------------------------------------------------------------

struct GatewayStats {
  std::uint64_t network_requests = 0;
  std::uint64_t cache_hits = 0;
};

struct ChainSettings {
  std::string model;
  double temperature = kGenerationTemperature;
  std::optional<std::int64_t> seed;
  int max_tokens = 512;
};

using SpliceRule = std::function<RenderedPrompt(const RenderedPrompt& next,
                                                const std::string& previous_output)>;

struct ChainResult {
  // One completion per stage; the last one is the chain's final text.
  std::vector<std::string> texts;
  std::vector<CompletionResult> results;
  // The prompts actually sent, after splicing.
  std::vector<RenderedPrompt> prompts;
};

// A chain stage failed. `stage` is 1-based; completed stages are kept.
class ChainStageError : public ProviderError {
 public:
  ChainStageError(int stage, ProviderFailure failure, const std::string& message,
                  std::vector<std::string> completed)
      : ProviderError(failure, "chain stage " + std::to_string(stage) + " failed: " + message),
        stage_(stage),
        completed_(std::move(completed)) {}

  int stage() const noexcept { return stage_; }
  const std::vector<std::string>& completed() const noexcept { return completed_; }

 private:
  int stage_;
  std::vector<std::string> completed_;
};

// Uniform client for teacher and judge models. Thread-safe; at most
// max_in_flight requests are outstanding at once.
class Gateway {
 public:
  explicit Gateway(ProviderConfig config, std::shared_ptr<Transport> transport = nullptr,
                   std::shared_ptr<Clock> clock = nullptr);

  CompletionResult complete(const CompletionRequest& request);

  // Runs prompts in stage order, splicing each completion into the next
  // prompt via `splice`.
  ChainResult complete_chain(const std::vector<RenderedPrompt>& prompts,
                             const ChainSettings& settings,
                             const SpliceRule& splice = fill_response_slot);

  // Replay script entry served ahead of the cache.
  void script(const std::string& request_hash, std::string text);

  const ProviderConfig& config() const noexcept { return config_; }
  GatewayStats stats() const;

 private:
  CompletionResult call_provider(const CompletionRequest& request, const std::string& hash);
  std::string scrub(std::string message) const;

  ProviderConfig config_;
  std::shared_ptr<Transport> transport_;
  std::shared_ptr<Clock> clock_;
  ResponseCache cache_;
  RateLimiter limiter_;
  std::counting_semaphore<1024> in_flight_;
  mutable std::mutex script_mutex_;
  std::map<std::string, std::string> script_;
  std::atomic<std::uint64_t> network_requests_{0};
  std::atomic<std::uint64_t> cache_hits_{0};
};

// Several named providers plus model routing ("model@provider").
class GatewayPool {
 public:
  explicit GatewayPool(std::vector<ProviderConfig> configs,
                       std::shared_ptr<Transport> transport = nullptr,
                       std::shared_ptr<Clock> clock = nullptr);

  // Splits "model@provider". Without "@", the provider named "default" is
  // used, or the only provider when there is exactly one.
  std::pair<Gateway*, std::string> resolve(const std::string& model_spec);
  Gateway& get(const std::string& provider);
  bool empty() const noexcept { return gateways_.empty(); }
  GatewayStats stats() const;

 private:
  std::map<std::string, std::unique_ptr<Gateway>> gateways_;
};

// Parses `[provider.<name>]` sections of an INI-style file. Keys: kind
// (http_chat|replay), base_url, credential_env, rate_limit, max_retries,
// cache_dir, max_in_flight, timeout_s, initial_backoff_ms.
std::vector<ProviderConfig> load_provider_configs(const std::filesystem::path& path);
std::vector<ProviderConfig> parse_provider_configs(const std::string& text,
                                                   const std::filesystem::path& base_dir);

}  // namespace empdistill
