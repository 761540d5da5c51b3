#include "convo/errors.hpp"

#include <iostream>
#include <mutex>
#include <utility>

namespace convo {

namespace {

std::mutex g_warn_mutex;

WarnHandler& handler_slot() {
    static WarnHandler handler = [](const std::string& message) {
        std::cerr << "warning: " << message << "\n";
    };
    return handler;
}

}  // namespace

WarnHandler set_warn_handler(WarnHandler handler) {
    std::lock_guard<std::mutex> lock(g_warn_mutex);
    WarnHandler previous = std::move(handler_slot());
    handler_slot() = std::move(handler);
    return previous;
}

void warn(const std::string& message) {
    std::lock_guard<std::mutex> lock(g_warn_mutex);
    if (handler_slot()) handler_slot()(message);
}

}  // namespace convo
