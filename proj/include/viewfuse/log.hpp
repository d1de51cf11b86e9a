#pragma once

#include <cstddef>
#include <string>

namespace viewfuse {

// Warnings go to stderr unless silenced; the counter lets callers and tests
// observe that a warning was raised.
void log_warning(const std::string& message);
void log_info(const std::string& message);
std::size_t warning_count();
void set_log_quiet(bool quiet);
bool log_quiet();

}  // namespace viewfuse
