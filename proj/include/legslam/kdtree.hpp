#pragma once

#include <cstdint>
#include <vector>

#include "legslam/geometry.hpp"

namespace legslam {

struct Neighbor {
  int index = -1;
  double squared_distance = 0.0;
};

/// Static 3D kd-tree over a point set it owns. Immutable after construction,
/// so concurrent queries are safe.
class KdTree3 {
 public:
  KdTree3() = default;
  explicit KdTree3(std::vector<Point3> points, int leaf_size = 8);

  const std::vector<Point3>& points() const { return points_; }
  std::size_t size() const { return points_.size(); }
  bool empty() const { return points_.empty(); }

  /// Up to k nearest neighbors sorted by (distance, index).
  std::vector<Neighbor> knn(const Point3& query, int k) const;
  /// Nearest neighbor within max_distance, or index -1.
  Neighbor nearest(const Point3& query, double max_distance) const;

 private:
  struct Node {
    int begin = 0, end = 0;      // range into order_
    int left = -1, right = -1;   // children; -1 for leaves
    int axis = 0;
    double split = 0.0;
  };

  int build(int begin, int end);
  void knn_recurse(int node, const Point3& q, int k, std::vector<Neighbor>& heap) const;

  std::vector<Point3> points_;
  std::vector<int> order_;
  std::vector<Node> nodes_;
  int leaf_size_ = 8;
};

}  // namespace legslam
