#include <httplib.h>

#include "empdistill/llm_gateway.hpp"
#include "empdistill/text.hpp"

namespace empdistill {

namespace {

struct SplitUrl {
  std::string scheme_host_port;
  std::string path_prefix;
};

SplitUrl split_base_url(const std::string& base_url) {
  auto scheme_end = base_url.find("://");
  if (scheme_end == std::string::npos) {
    throw ValidationError("base_url must include a scheme: " + base_url);
  }
  auto path_start = base_url.find('/', scheme_end + 3);
  SplitUrl out;
  out.scheme_host_port = base_url.substr(0, path_start);
  if (path_start != std::string::npos) out.path_prefix = base_url.substr(path_start);
  while (!out.path_prefix.empty() && out.path_prefix.back() == '/') out.path_prefix.pop_back();
  return out;
}

class HttplibTransport final : public Transport {
 public:
  HttpResponse post_json(const std::string& base_url, const std::string& path,
                         const std::string& body,
                         const std::vector<std::pair<std::string, std::string>>& headers,
                         std::chrono::seconds timeout) override {
    auto url = split_base_url(base_url);
    httplib::Client client(url.scheme_host_port);
    client.set_connection_timeout(10);
    client.set_read_timeout(static_cast<time_t>(timeout.count()));
    client.set_write_timeout(30);
    httplib::Headers http_headers;
    for (const auto& [name, value] : headers) http_headers.emplace(name, value);

    HttpResponse out;
    auto res = client.Post(url.path_prefix + path, http_headers, body, "application/json");
    if (!res) {
      out.transport_error = httplib::to_string(res.error());
      return out;
    }
    out.status = res->status;
    out.body = res->body;
    if (res->has_header("Retry-After")) {
      try {
        out.retry_after_seconds = std::stoi(res->get_header_value("Retry-After"));
      } catch (const std::exception&) {
        // HTTP-date form; fall back to exponential backoff.
      }
    }
    return out;
  }
};

}  // namespace

std::shared_ptr<Transport> make_http_transport() { return std::make_shared<HttplibTransport>(); }

}  // namespace empdistill
