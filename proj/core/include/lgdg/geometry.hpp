#pragma once

#include <algorithm>
#include <array>
#include <cstddef>
#include <string_view>

namespace lgdg {

// Axis-aligned box in pixel coordinates, x1 < x2 and y1 < y2.
struct Box {
  double x1 = 0, y1 = 0, x2 = 0, y2 = 0;

  double width() const { return x2 - x1; }
  double height() const { return y2 - y1; }
  double area() const { return std::max(0.0, width()) * std::max(0.0, height()); }
  double cx() const { return 0.5 * (x1 + x2); }
  double cy() const { return 0.5 * (y1 + y2); }
  bool valid() const { return x1 < x2 && y1 < y2; }

  Box scaled(double sx, double sy) const { return {x1 * sx, y1 * sy, x2 * sx, y2 * sy}; }
  Box clipped(double w, double h) const {
    return {std::clamp(x1, 0.0, w), std::clamp(y1, 0.0, h), std::clamp(x2, 0.0, w),
            std::clamp(y2, 0.0, h)};
  }
  friend bool operator==(const Box&, const Box&) = default;
};

inline double intersection_area(const Box& a, const Box& b) {
  const double w = std::min(a.x2, b.x2) - std::max(a.x1, b.x1);
  const double h = std::min(a.y2, b.y2) - std::max(a.y1, b.y1);
  return (w > 0 && h > 0) ? w * h : 0.0;
}

inline double iou(const Box& a, const Box& b) {
  const double inter = intersection_area(a, b);
  const double uni = a.area() + b.area() - inter;
  return uni > 0 ? inter / uni : 0.0;
}

// Fraction of `inner`'s area lying inside `region`.
inline double coverage(const Box& inner, const Box& region) {
  const double a = inner.area();
  return a > 0 ? intersection_area(inner, region) / a : 0.0;
}

inline Box union_box(const Box& a, const Box& b) {
  return {std::min(a.x1, b.x1), std::min(a.y1, b.y1), std::max(a.x2, b.x2),
          std::max(a.y2, b.y2)};
}

inline constexpr std::size_t kNumClasses = 6;
inline constexpr std::size_t kNumCriteria = 3;

enum class ObjectClass : int {
  CysticPlate = 0,
  CalotTriangle = 1,
  CysticArtery = 2,
  CysticDuct = 3,
  Gallbladder = 4,
  Tool = 5,
};

inline constexpr std::array<std::string_view, kNumClasses> kClassNames = {
    "cystic-plate", "calot-triangle", "cystic-artery", "cystic-duct", "gallbladder", "tool"};

inline std::string_view class_name(ObjectClass c) {
  return kClassNames[static_cast<std::size_t>(c)];
}

using Labels = std::array<bool, kNumCriteria>;
using ClassProbs = std::array<double, kNumClasses>;

}  // namespace lgdg
