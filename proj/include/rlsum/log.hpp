#pragma once

#include <cstdarg>
#include <cstdio>
#include <cstdlib>
#include <cstring>

namespace rlsum {

enum class LogLevel { Error = 0, Warn = 1, Info = 2, Debug = 3 };

// Verbosity comes from the RLSUM_LOG environment variable
// (error | warn | info | debug); default is info.
inline LogLevel log_level() {
    static const LogLevel level = [] {
        const char* env = std::getenv("RLSUM_LOG");
        if (!env) return LogLevel::Info;
        if (std::strcmp(env, "error") == 0) return LogLevel::Error;
        if (std::strcmp(env, "warn") == 0) return LogLevel::Warn;
        if (std::strcmp(env, "debug") == 0) return LogLevel::Debug;
        return LogLevel::Info;
    }();
    return level;
}

inline void log_at(LogLevel level, const char* tag, const char* fmt, std::va_list args) {
    if (level > log_level()) return;
    std::fprintf(stderr, "[%s] ", tag);
    std::vfprintf(stderr, fmt, args);
    std::fputc('\n', stderr);
}

inline void log_error(const char* fmt, ...) {
    std::va_list args;
    va_start(args, fmt);
    log_at(LogLevel::Error, "error", fmt, args);
    va_end(args);
}

inline void log_warn(const char* fmt, ...) {
    std::va_list args;
    va_start(args, fmt);
    log_at(LogLevel::Warn, "warn", fmt, args);
    va_end(args);
}

inline void log_info(const char* fmt, ...) {
    std::va_list args;
    va_start(args, fmt);
    log_at(LogLevel::Info, "info", fmt, args);
    va_end(args);
}

inline void log_debug(const char* fmt, ...) {
    std::va_list args;
    va_start(args, fmt);
    log_at(LogLevel::Debug, "debug", fmt, args);
    va_end(args);
}

}  // namespace rlsum
