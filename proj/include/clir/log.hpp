#pragma once

#include <functional>
#include <string>

namespace clir {

using LogSink = std::function<void(const std::string&)>;

/// Emits "warning: <msg>" through the current sink (stderr by default).
void warn(const std::string& msg);
/// Emits an informational line through the current sink.
void info(const std::string& msg);

/// Replaces the sink; returns the previous one. An empty sink silences output.
LogSink set_log_sink(LogSink sink);

}  // namespace clir
