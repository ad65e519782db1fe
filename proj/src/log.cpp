// SPDX-License-Identifier: Apache-2.0
#include "cardioclip/log.hpp"

#include <atomic>
#include <iostream>
#include <mutex>

namespace cardioclip {

namespace {
std::atomic<std::size_t> g_count{0};
std::mutex g_mutex;
std::function<void(std::string_view)> g_sink;
}  // namespace

void warn(std::string_view msg) {
  ++g_count;
  std::lock_guard lock(g_mutex);
  if (g_sink) {
    g_sink(msg);
  } else {
    std::cerr << "warning: " << msg << '\n';
  }
}

std::size_t warning_count() { return g_count.load(); }

void set_warning_sink(std::function<void(std::string_view)> sink) {
  std::lock_guard lock(g_mutex);
  g_sink = std::move(sink);
}

}  // namespace cardioclip
