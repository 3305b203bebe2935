#include "patternrl/log.hpp"

#include <iostream>
#include <mutex>

namespace patternrl {
namespace {
std::mutex g_mu;
LogSink g_sink;
}  // namespace

LogSink set_warning_sink(LogSink sink) {
  std::lock_guard lock(g_mu);
  std::swap(g_sink, sink);
  return sink;
}

void log_warning(const std::string& message) {
  std::lock_guard lock(g_mu);
  if (g_sink) {
    g_sink(message);
  } else {
    std::cerr << "[warn] " << message << '\n';
  }
}

}  // namespace patternrl
