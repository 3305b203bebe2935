#pragma once

#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <semaphore>
#include <stdexcept>
#include <string>
#include <vector>

namespace patternrl {

// One prompt sent to an external judge or annotator model. The wire contract
// is {prompt text, optional image reference} -> plain text.
struct TextRequest {
  std::string prompt;
  std::optional<std::string> image_ref;
};

class ClientError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class TextClient {
 public:
  virtual ~TextClient() = default;
  // Throws ClientError on transport failure or timeout.
  virtual std::string complete(const TextRequest& request) = 0;
};

// Deterministic in-process client. Never touches the network.
class StubClient final : public TextClient {
 public:
  using Handler = std::function<std::string(const TextRequest&)>;
  explicit StubClient(Handler handler) : handler_(std::move(handler)) {}

  std::string complete(const TextRequest& request) override {
    return handler_(request);
  }

 private:
  Handler handler_;
};

struct HttpClientConfig {
  std::string base_url;            // e.g. http://127.0.0.1:8080
  std::string path = "/v1/complete";
  std::string token_env;           // env var holding a bearer token; empty = none
  double timeout_seconds = 30.0;
  int max_in_flight = 4;
};

// POSTs {"prompt": ..., "image": ...} as JSON and returns the response body.
class HttpTextClient final : public TextClient {
 public:
  explicit HttpTextClient(HttpClientConfig config);
  std::string complete(const TextRequest& request) override;

 private:
  HttpClientConfig config_;
  std::string token_;
  std::unique_ptr<std::counting_semaphore<>> slots_;
};

// Caps concurrent calls into a shared client.
class LimitedClient final : public TextClient {
 public:
  LimitedClient(std::shared_ptr<TextClient> inner, int max_in_flight);
  std::string complete(const TextRequest& request) override;

 private:
  std::shared_ptr<TextClient> inner_;
  std::counting_semaphore<> slots_;
};

struct Transcript {
  std::string prompt;
  std::optional<std::string> image_ref;
  std::string response;
  std::string error;  // non-empty when the call failed
};

// Keeps every exchange verbatim for audit.
class RecordingClient final : public TextClient {
 public:
  explicit RecordingClient(std::shared_ptr<TextClient> inner)
      : inner_(std::move(inner)) {}

  std::string complete(const TextRequest& request) override;
  std::vector<Transcript> transcripts() const;
  void clear();

 private:
  std::shared_ptr<TextClient> inner_;
  mutable std::mutex mu_;
  std::vector<Transcript> log_;
};

// Replaces every {name} in `tmpl` with the mapped value. Unknown names are
// left untouched so figure text with literal braces survives.
std::string render_template(
    std::string_view tmpl,
    const std::vector<std::pair<std::string, std::string>>& values);

}  // namespace patternrl
