// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>

namespace detcount {

struct Point {
  double x = 0.0;
  double y = 0.0;

  friend bool operator==(const Point&, const Point&) = default;
};

inline double distance(const Point& a, const Point& b) {
  return std::hypot(a.x - b.x, a.y - b.y);
}

/// Axis-aligned box in pixel coordinates, (x1, y1) top-left and (x2, y2) bottom-right.
struct Box {
  double x1 = 0.0;
  double y1 = 0.0;
  double x2 = 0.0;
  double y2 = 0.0;

  double width() const { return x2 - x1; }
  double height() const { return y2 - y1; }
  double area() const { return std::max(0.0, width()) * std::max(0.0, height()); }

  /// Min/max per axis so that x1 <= x2 and y1 <= y2.
  Box normalized() const {
    return Box{std::min(x1, x2), std::min(y1, y2), std::max(x1, x2), std::max(y1, y2)};
  }

  Box translated(double dx, double dy) const { return Box{x1 + dx, y1 + dy, x2 + dx, y2 + dy}; }

  friend bool operator==(const Box&, const Box&) = default;
};

struct ImageSize {
  std::size_t width = 0;
  std::size_t height = 0;

  double diagonal() const {
    return std::hypot(static_cast<double>(width), static_cast<double>(height));
  }

  bool contains(const Point& p) const {
    return p.x >= 0.0 && p.y >= 0.0 && p.x <= static_cast<double>(width) &&
           p.y <= static_cast<double>(height);
  }

  friend bool operator==(const ImageSize&, const ImageSize&) = default;
};

}  // namespace detcount
