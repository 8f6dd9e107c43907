#pragma once

#include <cstdio>
#include <string>

namespace dsnet {

// 9 significant digits: enough for an f32 round-trip through text
inline std::string fmt_g9(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.9g", v);
    return buf;
}

inline std::string fmt_fixed(double v, int prec) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", prec, v);
    return buf;
}

}  // namespace dsnet
