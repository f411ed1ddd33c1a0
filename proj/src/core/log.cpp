#include "sim/log.hpp"

#include <iostream>
#include <mutex>

namespace sim {

namespace {
std::mutex g_mutex;
WarningHandler g_handler;
} // namespace

void set_warning_handler(WarningHandler handler) {
    std::lock_guard lock(g_mutex);
    g_handler = std::move(handler);
}

void warn(const std::string& message) {
    std::lock_guard lock(g_mutex);
    if (g_handler)
        g_handler(message);
    else
        std::cerr << "warning: " << message << '\n';
}

} // namespace sim
