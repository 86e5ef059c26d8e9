#pragma once

#include <cstdarg>
#include <cstdio>
#include <string>

namespace rost::detail {

inline std::string fmt(const char* f, ...) {
    char buf[256];
    va_list args;
    va_start(args, f);
    std::vsnprintf(buf, sizeof buf, f, args);
    va_end(args);
    return buf;
}

inline double pow_int(double v, int r) {
    double out = 1.0;
    for (int k = 0; k < r; ++k) out *= v;
    return out;
}

} // namespace rost::detail
