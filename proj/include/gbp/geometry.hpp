#pragma once

#include <array>
#include <cmath>

namespace gbp {

struct Vec2 {
  double x = 0.0;
  double y = 0.0;

  Vec2 operator+(const Vec2& o) const { return {x + o.x, y + o.y}; }
  Vec2 operator-(const Vec2& o) const { return {x - o.x, y - o.y}; }
  Vec2 operator*(double k) const { return {x * k, y * k}; }
  double dot(const Vec2& o) const { return x * o.x + y * o.y; }
  double cross(const Vec2& o) const { return x * o.y - y * o.x; }
  double norm() const { return std::hypot(x, y); }
  double squared_norm() const { return x * x + y * y; }
  Vec2 normalized() const {
    double n = norm();
    return n > 0.0 ? Vec2{x / n, y / n} : Vec2{1.0, 0.0};
  }
  // 90-degree counterclockwise rotation; the left normal of a tangent.
  Vec2 left_normal() const { return {-y, x}; }
  Vec2 rotated(double angle) const {
    double c = std::cos(angle), s = std::sin(angle);
    return {x * c - y * s, x * s + y * c};
  }
};

inline double normalize_angle(double a) {
  while (a > M_PI) a -= 2.0 * M_PI;
  while (a < -M_PI) a += 2.0 * M_PI;
  return a;
}

// Rectangular footprint of a vehicle oriented along `heading`, centered at
// `center`, with bumper-to-bumper `length` and side-to-side `width`.
struct OrientedBox {
  Vec2 center;
  double heading = 0.0;
  double length = 4.5;
  double width = 1.9;

  std::array<Vec2, 4> corners() const {
    Vec2 fwd{std::cos(heading), std::sin(heading)};
    Vec2 left = fwd.left_normal();
    Vec2 dl = fwd * (0.5 * length);
    Vec2 dw = left * (0.5 * width);
    return {center + dl + dw, center + dl - dw, center - dl - dw, center - dl + dw};
  }
};

// Separating-axis overlap test for two oriented rectangles.
bool boxes_overlap(const OrientedBox& a, const OrientedBox& b);

}  // namespace gbp
