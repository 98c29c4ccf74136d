#pragma once

#include <optional>
#include <string>

namespace pptlab {

// Shortest-roundtrip-safe decimal text for CSV output ("%.17g").
std::string fmt_double(double v);
// Empty field for a missing value.
std::string fmt_optional(const std::optional<double>& v);
// Short human label for a value like 0.3 or 200 ("0.3", "200").
std::string fmt_label(double v);

}  // namespace pptlab
