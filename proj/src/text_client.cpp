#include "patternrl/text_client.hpp"

#include <cstdlib>
#include <json.hpp>

#include <httplib.h>

namespace patternrl {

HttpTextClient::HttpTextClient(HttpClientConfig config)
    : config_(std::move(config)) {
  if (config_.base_url.empty()) throw std::invalid_argument("http client: empty base_url");
  if (config_.max_in_flight < 1) throw std::invalid_argument("http client: max_in_flight < 1");
  if (!config_.token_env.empty()) {
    if (const char* tok = std::getenv(config_.token_env.c_str())) token_ = tok;
  }
  slots_ = std::make_unique<std::counting_semaphore<>>(config_.max_in_flight);
}

std::string HttpTextClient::complete(const TextRequest& request) {
  slots_->acquire();
  struct Release {
    std::counting_semaphore<>* s;
    ~Release() { s->release(); }
  } release{slots_.get()};

  httplib::Client cli(config_.base_url);
  const auto secs = static_cast<time_t>(config_.timeout_seconds);
  const auto usecs = static_cast<time_t>((config_.timeout_seconds - static_cast<double>(secs)) * 1e6);
  cli.set_connection_timeout(secs, usecs);
  cli.set_read_timeout(secs, usecs);
  cli.set_write_timeout(secs, usecs);

  nlohmann::json body = {{"prompt", request.prompt}};
  if (request.image_ref) body["image"] = *request.image_ref;
  httplib::Headers headers;
  if (!token_.empty()) headers.emplace("Authorization", "Bearer " + token_);

  auto res = cli.Post(config_.path, headers, body.dump(), "application/json");
  if (!res) {
    throw ClientError("http judge request failed: " + httplib::to_string(res.error()));
  }
  if (res->status != 200) {
    throw ClientError("http judge returned status " + std::to_string(res->status));
  }
  return res->body;
}

LimitedClient::LimitedClient(std::shared_ptr<TextClient> inner, int max_in_flight)
    : inner_(std::move(inner)), slots_(max_in_flight) {
  if (max_in_flight < 1) throw std::invalid_argument("max_in_flight < 1");
}

std::string LimitedClient::complete(const TextRequest& request) {
  slots_.acquire();
  try {
    auto out = inner_->complete(request);
    slots_.release();
    return out;
  } catch (...) {
    slots_.release();
    throw;
  }
}

std::string RecordingClient::complete(const TextRequest& request) {
  Transcript t{request.prompt, request.image_ref, {}, {}};
  try {
    t.response = inner_->complete(request);
  } catch (const std::exception& e) {
    t.error = e.what();
    std::lock_guard lock(mu_);
    log_.push_back(std::move(t));
    throw;
  }
  std::string out = t.response;
  std::lock_guard lock(mu_);
  log_.push_back(std::move(t));
  return out;
}

std::vector<Transcript> RecordingClient::transcripts() const {
  std::lock_guard lock(mu_);
  return log_;
}

void RecordingClient::clear() {
  std::lock_guard lock(mu_);
  log_.clear();
}

std::string render_template(
    std::string_view tmpl,
    const std::vector<std::pair<std::string, std::string>>& values) {
  std::string out;
  out.reserve(tmpl.size());
  std::size_t i = 0;
  while (i < tmpl.size()) {
    if (tmpl[i] == '{') {
      const std::size_t close = tmpl.find('}', i + 1);
      if (close != std::string_view::npos) {
        const std::string_view key = tmpl.substr(i + 1, close - i - 1);
        bool replaced = false;
        for (const auto& [k, v] : values) {
          if (k == key) {
            out += v;
            replaced = true;
            break;
          }
        }
        if (replaced) {
          i = close + 1;
          continue;
        }
      }
    }
    out += tmpl[i++];
  }
  return out;
}

}  // namespace patternrl
