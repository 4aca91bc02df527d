#include "legslam/geometry.hpp"

namespace legslam {

void CameraIntrinsics::validate() const {
  if (!(fx > 0.0) || !(fy > 0.0)) throw Error(ErrorCode::InvalidArgument, "focal length must be positive");
  if (width <= 0 || height <= 0) throw Error(ErrorCode::InvalidArgument, "image size must be positive");
  if (!(cx >= 0.0 && cx < width) || !(cy >= 0.0 && cy < height)) {
    throw Error(ErrorCode::InvalidArgument, "principal point outside image");
  }
  if (!(depth_scale > 0.0)) throw Error(ErrorCode::InvalidArgument, "depth_scale must be positive");
}

}  // namespace legslam
