#pragma once

namespace detlab {

/// Axis-aligned box in corner form. All boxes handed to one computation
/// must share a coordinate frame.
struct BoundingBox {
  double x_min = 0.0;
  double y_min = 0.0;
  double x_max = 0.0;
  double y_max = 0.0;

  double width() const { return x_max - x_min; }
  double height() const { return y_max - y_min; }
  double area() const { return width() * height(); }
  bool valid() const { return x_min <= x_max && y_min <= y_max; }

  BoundingBox translated(double dx, double dy) const {
    return {x_min + dx, y_min + dy, x_max + dx, y_max + dy};
  }

  friend bool operator==(const BoundingBox&, const BoundingBox&) = default;
};

struct AnchorPoint {
  double x = 0.0;
  double y = 0.0;
  double stride = 1.0;

  friend bool operator==(const AnchorPoint&, const AnchorPoint&) = default;
};

/// Intersection over union. Two zero-area boxes have IoU 0.
double iou(const BoundingBox& a, const BoundingBox& b);

/// Half-open containment test: x_min <= x < x_max and y_min <= y < y_max.
/// An anchor on the shared edge of two abutting boxes belongs to exactly one.
bool spatial_prior(const AnchorPoint& anchor, const BoundingBox& gt);

}  // namespace detlab
