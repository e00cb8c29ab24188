#include "detlab/geometry.hpp"

#include <algorithm>

namespace detlab {

double iou(const BoundingBox& a, const BoundingBox& b) {
  const double iw = std::max(0.0, std::min(a.x_max, b.x_max) - std::max(a.x_min, b.x_min));
  const double ih = std::max(0.0, std::min(a.y_max, b.y_max) - std::max(a.y_min, b.y_min));
  const double inter = iw * ih;
  const double uni = a.area() + b.area() - inter;
  if (uni <= 0.0) return 0.0;
  return std::clamp(inter / uni, 0.0, 1.0);
}

bool spatial_prior(const AnchorPoint& anchor, const BoundingBox& gt) {
  return gt.x_min <= anchor.x && anchor.x < gt.x_max &&
         gt.y_min <= anchor.y && anchor.y < gt.y_max;
}

}  // namespace detlab
