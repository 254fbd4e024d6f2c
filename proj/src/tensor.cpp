#include "cmr/tensor.hpp"

#include <cmath>

namespace cmr {

std::string to_string(const Shape4& s) {
  return "[" + std::to_string(s.batch) + "," + std::to_string(s.channels) + "," + std::to_string(s.rows) + "," +
         std::to_string(s.cols) + "]";
}

void require_same_shape(const Shape4& a, const Shape4& b, const char* what) {
  if (!(a == b)) throw InputError(std::string(what) + ": shape " + to_string(a) + " != " + to_string(b));
}

bool all_finite(std::span<const float> values) {
  for (float v : values)
    if (!std::isfinite(v)) return false;
  return true;
}

}  // namespace cmr
