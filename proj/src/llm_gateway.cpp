#include "empdistill/llm_gateway.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <thread>

#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include "empdistill/hashing.hpp"
#include "empdistill/text.hpp"

namespace empdistill {

using nlohmann::json;

void CompletionRequest::validate() const {
  if (is_blank(model)) throw ValidationError("completion request has no model");
  bool has_user = std::any_of(messages.begin(), messages.end(), [](const ChatMessage& m) {
    return m.role == "user" && !is_blank(m.content);
  });
  if (!has_user) throw ValidationError("completion request needs a user message");
  if (!std::isfinite(temperature) || temperature < 0) {
    throw ValidationError("temperature must be finite and non-negative");
  }
  if (max_tokens <= 0) throw ValidationError("max_tokens must be positive");
}

namespace {

json messages_json(const std::vector<ChatMessage>& messages) {
  json out = json::array();
  for (const auto& m : messages) out.push_back({{"role", m.role}, {"content", m.content}});
  return out;
}

std::string sanitize_model_dir(const std::string& model) {
  std::string out;
  for (char c : model) {
    bool ok = (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') ||
              c == '.' || c == '-' || c == '_';
    out.push_back(ok ? c : '_');
  }
  if (out.empty() || out == "." || out == "..") out = "_" + out;
  return out;
}

bool is_transient(int status) {
  return status == 0 || status == 408 || status == 425 || status == 429 || status >= 500;
}

class SystemClock final : public Clock {
 public:
  time_point now() override { return std::chrono::steady_clock::now(); }
  void sleep_for(std::chrono::milliseconds duration) override {
    std::this_thread::sleep_for(duration);
  }
};

}  // namespace

std::string request_hash(const CompletionRequest& request) {
  json key = {{"model", request.model},
              {"messages", messages_json(request.messages)},
              {"temperature", request.temperature}};
  key["seed"] = request.seed ? json(*request.seed) : json();
  return sha256_hex(key.dump());
}

CompletionRequest make_request(const std::string& model, const RenderedPrompt& prompt,
                               double temperature, std::optional<std::int64_t> seed,
                               int max_tokens) {
  if (prompt.awaiting_response) {
    throw ValidationError("prompt stage " + std::to_string(prompt.stage_index) +
                          " still awaits its input response");
  }
  CompletionRequest request;
  request.model = model;
  if (prompt.system_preamble) request.messages.push_back({"system", *prompt.system_preamble});
  request.messages.push_back({"user", prompt.user_message});
  request.temperature = temperature;
  request.seed = seed;
  request.max_tokens = max_tokens;
  return request;
}

const char* to_string(ProviderKind kind) {
  return kind == ProviderKind::HttpChat ? "http_chat" : "replay";
}

ProviderKind provider_kind_from_string(std::string_view text) {
  auto lowered = to_lower(trim(text));
  if (lowered == "http_chat" || lowered == "httpchat" || lowered == "http") {
    return ProviderKind::HttpChat;
  }
  if (lowered == "replay") return ProviderKind::Replay;
  throw ValidationError("unknown provider kind \"" + std::string(text) + "\"");
}

void ProviderConfig::validate() const {
  if (is_blank(name)) throw ValidationError("provider has no name");
  if (kind == ProviderKind::HttpChat) {
    if (is_blank(base_url)) throw ValidationError("provider " + name + ": base_url is required");
    if (is_blank(credential_env)) {
      throw ValidationError("provider " + name + ": credential_env is required");
    }
  }
  if (kind == ProviderKind::Replay && cache_dir.empty()) {
    throw ValidationError("provider " + name + ": replay needs cache_dir");
  }
  if (rate_limit_per_minute <= 0) {
    throw ValidationError("provider " + name + ": rate_limit must be positive");
  }
  if (max_retries < 0) throw ValidationError("provider " + name + ": max_retries is negative");
  if (max_in_flight <= 0 || max_in_flight > 1024) {
    throw ValidationError("provider " + name + ": max_in_flight must be in [1, 1024]");
  }
}

std::shared_ptr<Clock> system_clock() {
  static auto clock = std::make_shared<SystemClock>();
  return clock;
}

// ---- rate limiter -------------------------------------------------------------

RateLimiter::RateLimiter(int limit_per_minute, std::shared_ptr<Clock> clock)
    : limit_(limit_per_minute), clock_(std::move(clock)) {}

void RateLimiter::acquire() {
  using namespace std::chrono;
  std::lock_guard lock(mutex_);
  const auto window = minutes(1);
  while (true) {
    auto now = clock_->now();
    while (!recent_.empty() && now - recent_.front() >= window) recent_.pop_front();
    if (static_cast<int>(recent_.size()) < limit_) {
      recent_.push_back(now);
      return;
    }
    auto wait = duration_cast<milliseconds>(recent_.front() + window - now);
    clock_->sleep_for(std::max(wait, milliseconds(1)));
  }
}

// ---- cache --------------------------------------------------------------------

std::filesystem::path ResponseCache::entry_path(const std::string& model,
                                                const std::string& hash) const {
  return dir_ / sanitize_model_dir(model) / (hash + ".json");
}

std::optional<CacheEntry> ResponseCache::lookup(const CompletionRequest& request,
                                                const std::string& hash) const {
  auto path = entry_path(request.model, hash);
  std::error_code ec;
  if (!std::filesystem::exists(path, ec)) return std::nullopt;
  json stored;
  try {
    stored = json::parse(read_file(path));
    CacheEntry entry;
    entry.text = stored.at("text").get<std::string>();
    entry.usage.prompt = stored.at("usage").value("prompt", std::uint64_t{0});
    entry.usage.completion = stored.at("usage").value("completion", std::uint64_t{0});
    entry.latency_ms = stored.value("latency_ms", std::uint64_t{0});
    return entry;
  } catch (const json::exception& e) {
    throw IoError("corrupt cache entry " + path.string() + ": " + e.what());
  }
}

void ResponseCache::store(const CompletionRequest& request, const std::string& hash,
                          const CacheEntry& entry) const {
  json request_json = {{"model", request.model},
                       {"messages", messages_json(request.messages)},
                       {"temperature", request.temperature},
                       {"max_tokens", request.max_tokens}};
  request_json["seed"] = request.seed ? json(*request.seed) : json();
  json stored = {{"hash", hash},
                 {"model", request.model},
                 {"request", request_json},
                 {"text", entry.text},
                 {"usage", {{"prompt", entry.usage.prompt}, {"completion", entry.usage.completion}}},
                 {"latency_ms", entry.latency_ms}};
  auto path = entry_path(request.model, hash);
  std::string sidecar;
  for (const auto& m : request.messages) sidecar += "[" + m.role + "]\n" + m.content + "\n\n";
  auto sidecar_path = path;
  sidecar_path.replace_extension(".prompt.txt");
  write_file_atomic(sidecar_path, sidecar);
  write_file_atomic(path, stored.dump(2) + "\n");
}

// ---- gateway ------------------------------------------------------------------

Gateway::Gateway(ProviderConfig config, std::shared_ptr<Transport> transport,
                 std::shared_ptr<Clock> clock)
    : config_((config.validate(), std::move(config))),
      transport_(std::move(transport)),
      clock_(clock ? std::move(clock) : system_clock()),
      cache_(config_.cache_dir),
      limiter_(config_.rate_limit_per_minute, clock_),
      in_flight_(config_.max_in_flight) {
  if (!transport_ && config_.kind == ProviderKind::HttpChat && !config_.offline) {
    transport_ = make_http_transport();
  }
}

void Gateway::script(const std::string& hash, std::string text) {
  std::lock_guard lock(script_mutex_);
  script_[hash] = std::move(text);
}

GatewayStats Gateway::stats() const {
  return {network_requests_.load(), cache_hits_.load()};
}

std::string Gateway::scrub(std::string message) const {
  if (config_.credential_env.empty()) return message;
  const char* key = std::getenv(config_.credential_env.c_str());
  if (!key || std::string_view(key).size() < 4) return message;
  std::string_view secret(key);
  for (auto pos = message.find(secret); pos != std::string::npos; pos = message.find(secret)) {
    message.replace(pos, secret.size(), "***");
  }
  return message;
}

CompletionResult Gateway::complete(const CompletionRequest& request) {
  request.validate();
  const auto hash = request_hash(request);

  {
    std::lock_guard lock(script_mutex_);
    if (auto it = script_.find(hash); it != script_.end()) {
      ++cache_hits_;
      CompletionResult result;
      result.text = it->second;
      result.model = request.model;
      result.cached = true;
      result.request_hash = hash;
      return result;
    }
  }
  if (auto entry = cache_.lookup(request, hash)) {
    ++cache_hits_;
    CompletionResult result;
    result.text = std::move(entry->text);
    result.model = request.model;
    result.usage = entry->usage;
    result.cached = true;
    result.latency_ms = entry->latency_ms;
    result.request_hash = hash;
    return result;
  }
  if (config_.kind == ProviderKind::Replay) {
    throw ProviderError(ProviderFailure::CacheMiss,
                        "replay cache miss for " + request.model + " request " + hash);
  }
  if (config_.offline) {
    throw ProviderError(ProviderFailure::CacheMiss,
                        "offline: no cached completion for " + request.model + " request " + hash);
  }

  in_flight_.acquire();
  struct Release {
    std::counting_semaphore<1024>& sem;
    ~Release() { sem.release(); }
  } release{in_flight_};
  auto result = call_provider(request, hash);
  cache_.store(request, hash, {result.text, result.usage, result.latency_ms});
  return result;
}

CompletionResult Gateway::call_provider(const CompletionRequest& request,
                                        const std::string& hash) {
  const char* key = std::getenv(config_.credential_env.c_str());
  if (!key || !*key) {
    throw ProviderError(ProviderFailure::Authentication,
                        "provider " + config_.name + ": environment variable " +
                            config_.credential_env + " is not set");
  }
  json body = {{"model", request.model},
               {"messages", messages_json(request.messages)},
               {"temperature", request.temperature},
               {"max_tokens", request.max_tokens}};
  if (request.seed) body["seed"] = *request.seed;
  const std::string payload = body.dump();
  const std::vector<std::pair<std::string, std::string>> headers{
      {"Authorization", std::string("Bearer ") + key}};

  auto backoff = config_.initial_backoff;
  int attempt = 0;
  HttpResponse response;
  while (true) {
    ++attempt;
    limiter_.acquire();
    ++network_requests_;
    auto started = clock_->now();
    response = transport_->post_json(config_.base_url, "/chat/completions", payload, headers,
                                     config_.timeout);
    auto latency = std::chrono::duration_cast<std::chrono::milliseconds>(clock_->now() - started);

    if (response.status >= 200 && response.status < 300) {
      CompletionResult result;
      result.model = request.model;
      result.attempts = attempt;
      result.latency_ms = static_cast<std::uint64_t>(std::max<std::int64_t>(latency.count(), 0));
      result.request_hash = hash;
      try {
        auto parsed = json::parse(response.body);
        const auto& content = parsed.at("choices").at(0).at("message").at("content");
        if (!content.is_string()) throw std::runtime_error("content is not a string");
        result.text = content.get<std::string>();
        if (auto usage = parsed.find("usage"); usage != parsed.end() && usage->is_object()) {
          result.usage.prompt = usage->value("prompt_tokens", std::uint64_t{0});
          result.usage.completion = usage->value("completion_tokens", std::uint64_t{0});
        }
      } catch (const std::exception& e) {
        throw ProviderError(ProviderFailure::MalformedResponse,
                            scrub("provider " + config_.name + ": malformed response: " + e.what()),
                            attempt);
      }
      return result;
    }
    if (response.status == 401 || response.status == 403) {
      throw ProviderError(ProviderFailure::Authentication,
                          "provider " + config_.name + ": authentication failed (HTTP " +
                              std::to_string(response.status) + ")",
                          attempt);
    }
    if (!is_transient(response.status)) {
      throw ProviderError(ProviderFailure::Rejected,
                          scrub("provider " + config_.name + ": request rejected (HTTP " +
                                std::to_string(response.status) + "): " +
                                response.body.substr(0, 200)),
                          attempt);
    }
    if (attempt > config_.max_retries) break;

    auto wait = backoff;
    if (response.retry_after_seconds && *response.retry_after_seconds >= 0) {
      wait = std::chrono::seconds(*response.retry_after_seconds);
    }
    spdlog::warn("provider {}: transient failure (HTTP {}), retry {}/{} in {} ms", config_.name,
                 response.status, attempt, config_.max_retries, wait.count());
    clock_->sleep_for(std::min(wait, config_.max_backoff));
    backoff = std::min(backoff * 2, config_.max_backoff);
  }

  auto failure =
      response.status == 429 ? ProviderFailure::RateLimited : ProviderFailure::Transient;
  std::string detail = response.status == 0 ? "connection failed: " + response.transport_error
                                             : "HTTP " + std::to_string(response.status);
  throw ProviderError(failure,
                      scrub("provider " + config_.name + ": giving up after " +
                            std::to_string(attempt) + " attempts (" + detail + ")"),
                      attempt);
}

ChainResult Gateway::complete_chain(const std::vector<RenderedPrompt>& prompts,
                                    const ChainSettings& settings, const SpliceRule& splice) {
  if (prompts.empty()) throw ValidationError("empty prompt chain");
  for (std::size_t i = 0; i < prompts.size(); ++i) {
    if (prompts[i].stage_index != static_cast<int>(i)) {
      throw ValidationError("prompt chain is not ordered by stage index");
    }
  }
  ChainResult chain;
  for (std::size_t i = 0; i < prompts.size(); ++i) {
    const int stage = static_cast<int>(i) + 1;
    try {
      RenderedPrompt prompt = prompts[i];
      if (i > 0) prompt = splice(prompts[i], chain.texts.back());
      auto request = make_request(settings.model, prompt, settings.temperature, settings.seed,
                                  settings.max_tokens);
      auto result = complete(request);
      auto text = std::string(trim(result.text));
      if (text.empty()) {
        throw ProviderError(ProviderFailure::MalformedResponse, "empty completion");
      }
      chain.texts.push_back(std::move(text));
      chain.results.push_back(std::move(result));
      chain.prompts.push_back(std::move(prompt));
    } catch (const ProviderError& e) {
      throw ChainStageError(stage, e.failure(), e.what(), chain.texts);
    } catch (const ValidationError& e) {
      throw ChainStageError(stage, ProviderFailure::MalformedResponse, e.what(), chain.texts);
    }
  }
  return chain;
}

// ---- pool ---------------------------------------------------------------------

GatewayPool::GatewayPool(std::vector<ProviderConfig> configs, std::shared_ptr<Transport> transport,
                         std::shared_ptr<Clock> clock) {
  for (auto& config : configs) {
    auto name = config.name;
    if (gateways_.count(name)) throw ValidationError("duplicate provider " + name);
    gateways_.emplace(name, std::make_unique<Gateway>(std::move(config), transport, clock));
  }
}

Gateway& GatewayPool::get(const std::string& provider) {
  auto it = gateways_.find(provider);
  if (it == gateways_.end()) {
    throw ProviderError(ProviderFailure::Unconfigured, "no provider named " + provider);
  }
  return *it->second;
}

std::pair<Gateway*, std::string> GatewayPool::resolve(const std::string& model_spec) {
  auto at = model_spec.rfind('@');
  if (at != std::string::npos) {
    auto model = model_spec.substr(0, at);
    if (is_blank(model)) throw ValidationError("model name missing in \"" + model_spec + "\"");
    return {&get(model_spec.substr(at + 1)), model};
  }
  if (auto it = gateways_.find("default"); it != gateways_.end()) {
    return {it->second.get(), model_spec};
  }
  if (gateways_.size() == 1) return {gateways_.begin()->second.get(), model_spec};
  throw ProviderError(ProviderFailure::Unconfigured,
                      "cannot pick a provider for \"" + model_spec + "\"; use model@provider");
}

GatewayStats GatewayPool::stats() const {
  GatewayStats total;
  for (const auto& [name, gateway] : gateways_) {
    auto s = gateway->stats();
    total.network_requests += s.network_requests;
    total.cache_hits += s.cache_hits;
  }
  return total;
}

}  // namespace empdistill
