#include "viewfuse/log.hpp"

#include <atomic>
#include <iostream>
#include <mutex>

namespace viewfuse {

namespace {
std::atomic<std::size_t> g_warnings{0};
std::atomic<bool> g_quiet{false};
std::mutex g_mutex;
}  // namespace

void log_warning(const std::string& message) {
  ++g_warnings;
  if (g_quiet) return;
  std::lock_guard<std::mutex> lock(g_mutex);
  std::cerr << "warning: " << message << '\n';
}

void log_info(const std::string& message) {
  if (g_quiet) return;
  std::lock_guard<std::mutex> lock(g_mutex);
  std::cerr << message << '\n';
}

std::size_t warning_count() { return g_warnings; }
void set_log_quiet(bool quiet) { g_quiet = quiet; }
bool log_quiet() { return g_quiet; }

}  // namespace viewfuse
