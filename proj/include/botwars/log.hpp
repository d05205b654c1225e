#pragma once

#include <functional>
#include <string_view>

namespace botwars {

enum class LogLevel { debug, info, warn, error };

using LogSink = std::function<void(LogLevel, std::string_view)>;

// Replaces the process-wide sink (default: stderr, info and above). Returns the old one.
LogSink set_log_sink(LogSink sink);

void log(LogLevel level, std::string_view message);

} // namespace botwars
