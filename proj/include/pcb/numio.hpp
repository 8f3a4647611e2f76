#pragma once

#include <cstdio>
#include <string>

namespace pcb {

// Shortest-exact decimal form: parses back to the identical double.
inline std::string fmt_full(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

// Fixed 6-decimal form for human-facing tables and logs.
inline std::string fmt_metric(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.6f", v);
  return buf;
}

inline std::string fmt_sci(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.6g", v);
  return buf;
}

}  // namespace pcb
