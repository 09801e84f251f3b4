#include <sstream>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "empdistill/llm_gateway.hpp"
#include "empdistill/text.hpp"

namespace empdistill {

namespace pt = boost::property_tree;

namespace {

// ptree::get with a default swallows conversion failures, so values are read
// as text and converted strictly here.
int int_value(const pt::ptree& values, const std::string& key, int fallback) {
  auto raw = values.get_optional<std::string>(key);
  if (!raw) return fallback;
  auto text = std::string(trim(*raw));
  try {
    std::size_t used = 0;
    int value = std::stoi(text, &used);
    if (used == text.size()) return value;
  } catch (const std::exception&) {
  }
  throw ValidationError(key + " must be an integer, got \"" + *raw + "\"");
}

}  // namespace

std::vector<ProviderConfig> parse_provider_configs(const std::string& text,
                                                   const std::filesystem::path& base_dir) {
  pt::ptree tree;
  std::istringstream in(text);
  try {
    pt::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ParseError("provider config", e.line(), 0, e.message());
  }
  std::vector<ProviderConfig> configs;
  for (const auto& [section, values] : tree) {
    constexpr std::string_view kPrefix = "provider.";
    if (!std::string_view(section).starts_with(kPrefix)) continue;
    ProviderConfig config;
    config.name = section.substr(kPrefix.size());
    try {
      config.kind = provider_kind_from_string(values.get<std::string>("kind", "replay"));
      config.base_url = values.get<std::string>("base_url", "");
      config.credential_env = values.get<std::string>("credential_env", "");
      config.rate_limit_per_minute =
          int_value(values, "rate_limit", config.rate_limit_per_minute);
      config.max_retries = int_value(values, "max_retries", config.max_retries);
      config.max_in_flight = int_value(values, "max_in_flight", config.max_in_flight);
      config.timeout = std::chrono::seconds(int_value(values, "timeout_s", 120));
      config.initial_backoff =
          std::chrono::milliseconds(int_value(values, "initial_backoff_ms", 1000));
      std::filesystem::path cache = values.get<std::string>("cache_dir", "cache");
      config.cache_dir = cache.is_absolute() ? cache : base_dir / cache;
    } catch (const pt::ptree_error& e) {
      throw ValidationError("provider " + config.name + ": " + e.what());
    } catch (const ValidationError& e) {
      throw ValidationError("provider " + config.name + ": " + e.what());
    }
    config.validate();
    configs.push_back(std::move(config));
  }
  if (configs.empty()) throw ValidationError("provider config has no [provider.<name>] sections");
  return configs;
}

std::vector<ProviderConfig> load_provider_configs(const std::filesystem::path& path) {
  auto base = path.has_parent_path() ? path.parent_path() : std::filesystem::path(".");
  return parse_provider_configs(read_file(path), base);
}

}  // namespace empdistill
