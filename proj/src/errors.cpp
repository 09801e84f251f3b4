#include "empdistill/errors.hpp"

namespace empdistill {

namespace {

std::string locate(const std::string& source, std::size_t row,
                   std::size_t column, const std::string& what) {
  std::string out = source;
  if (row > 0) out += ":" + std::to_string(row);
  if (column > 0) out += ":" + std::to_string(column);
  return out + ": " + what;
}

}  // namespace

ParseError::ParseError(const std::string& source, std::size_t row,
                       std::size_t column, const std::string& what)
    : ValidationError(locate(source, row, column, what)),
      row_(row),
      column_(column) {}

const char* to_string(ProviderFailure failure) {
  switch (failure) {
    case ProviderFailure::Authentication: return "authentication";
    case ProviderFailure::RateLimited: return "rate_limited";
    case ProviderFailure::Transient: return "transient";
    case ProviderFailure::MalformedResponse: return "malformed_response";
    case ProviderFailure::CacheMiss: return "cache_miss";
    case ProviderFailure::Rejected: return "rejected";
    case ProviderFailure::Unconfigured: return "unconfigured";
  }
  return "unknown";
}

}  // namespace empdistill
