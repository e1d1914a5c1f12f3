#pragma once

#include <cmath>
#include <sstream>
#include <string>

#include "cglm/math.hpp"

namespace cglm {

/// Real interval with open/closed endpoints. Unbounded ends use +-inf and
/// are treated as open. A default-constructed interval is the whole line.
struct Interval {
  double lo = kNegInf;
  double hi = kInf;
  bool lo_closed = false;
  bool hi_closed = false;
  bool empty = false;

  static Interval all_reals() { return {}; }
  static Interval empty_set() {
    Interval iv;
    iv.empty = true;
    return iv;
  }
  static Interval less_than(double b) { return {kNegInf, b, false, false, false}; }
  static Interval at_most(double b) { return {kNegInf, b, false, true, false}; }
  static Interval open(double a, double b) { return {a, b, false, false, false}; }

  bool contains(double x) const {
    if (empty || std::isnan(x)) return false;
    if (x < lo || (x == lo && !lo_closed)) return false;
    if (x > hi || (x == hi && !hi_closed)) return false;
    return true;
  }

  /// Whether this interval is a subset of `other`.
  bool subset_of(const Interval& other) const {
    if (empty) return true;
    if (other.empty) return false;
    if (lo < other.lo || (lo == other.lo && lo_closed && !other.lo_closed)) return false;
    if (hi > other.hi || (hi == other.hi && hi_closed && !other.hi_closed)) return false;
    return true;
  }

  std::string str() const {
    if (empty) return "{}";
    std::ostringstream os;
    os << (lo_closed ? '[' : '(');
    if (lo == kNegInf) os << "-inf";
    else os << lo;
    os << ", ";
    if (hi == kInf) os << "inf";
    else os << hi;
    os << (hi_closed ? ']' : ')');
    return os.str();
  }
};

}  // namespace cglm
