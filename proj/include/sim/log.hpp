#pragma once

#include <functional>
#include <string>

namespace sim {

/// Process-wide warning sink. Defaults to stderr; the harness redirects it
/// into the run log.
using WarningHandler = std::function<void(const std::string&)>;

void set_warning_handler(WarningHandler handler);
void warn(const std::string& message);

} // namespace sim
