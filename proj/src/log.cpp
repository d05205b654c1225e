#include "botwars/log.hpp"

#include <iostream>
#include <mutex>

namespace botwars {

namespace {

std::mutex g_mu;

void stderr_sink(LogLevel level, std::string_view msg)
{
    static constexpr const char* names[] = {"debug", "info", "warn", "error"};
    if (level == LogLevel::debug) {
        return;
    }
    std::cerr << "[" << names[static_cast<int>(level)] << "] " << msg << '\n';
}

LogSink& sink()
{
    static LogSink s = stderr_sink;
    return s;
}

} // namespace

LogSink set_log_sink(LogSink s)
{
    std::lock_guard lock(g_mu);
    auto old = std::move(sink());
    sink() = s ? std::move(s) : LogSink(stderr_sink);
    return old;
}

void log(LogLevel level, std::string_view message)
{
    std::lock_guard lock(g_mu);
    sink()(level, message);
}

} // namespace botwars
