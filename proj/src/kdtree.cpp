#include "legslam/kdtree.hpp"

#include <algorithm>
#include <limits>
#include <numeric>

namespace legslam {

namespace {

bool closer(const Neighbor& a, const Neighbor& b) {
  return a.squared_distance < b.squared_distance ||
         (a.squared_distance == b.squared_distance && a.index < b.index);
}

}  // namespace

KdTree3::KdTree3(std::vector<Point3> points, int leaf_size)
    : points_(std::move(points)), leaf_size_(std::max(1, leaf_size)) {
  order_.resize(points_.size());
  std::iota(order_.begin(), order_.end(), 0);
  if (!points_.empty()) {
    nodes_.reserve(2 * points_.size() / static_cast<std::size_t>(leaf_size_) + 2);
    build(0, static_cast<int>(points_.size()));
  }
}

int KdTree3::build(int begin, int end) {
  const int id = static_cast<int>(nodes_.size());
  nodes_.push_back(Node{begin, end, -1, -1, 0, 0.0});
  if (end - begin <= leaf_size_) return id;

  Eigen::Vector3d lo = Eigen::Vector3d::Constant(std::numeric_limits<double>::max());
  Eigen::Vector3d hi = -lo;
  for (int i = begin; i < end; ++i) {
    lo = lo.cwiseMin(points_[order_[i]]);
    hi = hi.cwiseMax(points_[order_[i]]);
  }
  int axis = 0;
  (hi - lo).maxCoeff(&axis);
  const int mid = begin + (end - begin) / 2;
  std::nth_element(order_.begin() + begin, order_.begin() + mid, order_.begin() + end, [&](int a, int b) {
    const double va = points_[a][axis], vb = points_[b][axis];
    return va < vb || (va == vb && a < b);
  });
  const double split = points_[order_[mid]][axis];
  const int left = build(begin, mid);
  const int right = build(mid, end);
  nodes_[id].axis = axis;
  nodes_[id].split = split;
  nodes_[id].left = left;
  nodes_[id].right = right;
  return id;
}

void KdTree3::knn_recurse(int node_id, const Point3& q, int k, std::vector<Neighbor>& heap) const {
  const Node& node = nodes_[node_id];
  if (node.left < 0) {
    for (int i = node.begin; i < node.end; ++i) {
      const int idx = order_[i];
      const Neighbor cand{idx, (points_[idx] - q).squaredNorm()};
      if (static_cast<int>(heap.size()) < k) {
        heap.push_back(cand);
        std::push_heap(heap.begin(), heap.end(), closer);
      } else if (closer(cand, heap.front())) {
        std::pop_heap(heap.begin(), heap.end(), closer);
        heap.back() = cand;
        std::push_heap(heap.begin(), heap.end(), closer);
      }
    }
    return;
  }
  const double diff = q[node.axis] - node.split;
  const int near = diff < 0.0 ? node.left : node.right;
  const int far = diff < 0.0 ? node.right : node.left;
  knn_recurse(near, q, k, heap);
  if (static_cast<int>(heap.size()) < k || diff * diff <= heap.front().squared_distance) {
    knn_recurse(far, q, k, heap);
  }
}

std::vector<Neighbor> KdTree3::knn(const Point3& query, int k) const {
  std::vector<Neighbor> heap;
  if (points_.empty() || k <= 0) return heap;
  heap.reserve(static_cast<std::size_t>(k));
  knn_recurse(0, query, k, heap);
  std::sort_heap(heap.begin(), heap.end(), closer);
  return heap;
}

Neighbor KdTree3::nearest(const Point3& query, double max_distance) const {
  const auto nn = knn(query, 1);
  if (nn.empty() || nn.front().squared_distance > max_distance * max_distance) return Neighbor{};
  return nn.front();
}

}  // namespace legslam
