#include "pptlab/text.hpp"

#include <cstdio>

namespace pptlab {

std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string fmt_optional(const std::optional<double>& v) { return v ? fmt_double(*v) : std::string(); }

std::string fmt_label(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%g", v);
  return buf;
}

}  // namespace pptlab
