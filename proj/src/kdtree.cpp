#include "g2l/kdtree.hpp"

#include <algorithm>
#include <limits>
#include <numeric>

namespace g2l {

KdTree3::KdTree3(std::vector<Vec3> points) : points_(std::move(points)) {
  order_.resize(points_.size());
  std::iota(order_.begin(), order_.end(), std::size_t{0});
  if (!points_.empty()) build(0, points_.size(), 0);
}

int KdTree3::build(std::size_t begin, std::size_t end, int depth) {
  const int id = static_cast<int>(nodes_.size());
  nodes_.push_back({});
  nodes_[id].begin = begin;
  nodes_[id].end = end;
  if (end - begin <= kLeafSize) return id;

  Vec3 lo = points_[order_[begin]];
  Vec3 hi = lo;
  for (std::size_t i = begin; i < end; ++i) {
    lo = lo.cwiseMin(points_[order_[i]]);
    hi = hi.cwiseMax(points_[order_[i]]);
  }
  int axis = 0;
  (hi - lo).maxCoeff(&axis);
  const std::size_t mid = begin + (end - begin) / 2;
  std::nth_element(order_.begin() + begin, order_.begin() + mid,
                   order_.begin() + end, [&](std::size_t a, std::size_t b) {
                     return points_[a][axis] < points_[b][axis];
                   });
  const double split = points_[order_[mid]][axis];
  const int left = build(begin, mid, depth + 1);
  const int right = build(mid, end, depth + 1);
  nodes_[id].axis = axis;
  nodes_[id].split = split;
  nodes_[id].left = left;
  nodes_[id].right = right;
  return id;
}

void KdTree3::search(int node_id, const Vec3& q, double& best,
                     std::size_t& best_idx) const {
  const Node& node = nodes_[node_id];
  if (node.axis < 0) {
    for (std::size_t i = node.begin; i < node.end; ++i) {
      const std::size_t idx = order_[i];
      const double d = (q - points_[idx]).squaredNorm();
      if (d < best || (d == best && idx < best_idx)) {
        best = d;
        best_idx = idx;
      }
    }
    return;
  }
  const double diff = q[node.axis] - node.split;
  const int near = diff < 0.0 ? node.left : node.right;
  const int far = diff < 0.0 ? node.right : node.left;
  search(near, q, best, best_idx);
  if (diff * diff <= best) search(far, q, best, best_idx);
}

double KdTree3::nearest_squared_distance(const Vec3& query) const {
  double best = std::numeric_limits<double>::infinity();
  std::size_t idx = std::numeric_limits<std::size_t>::max();
  search(0, query, best, idx);
  return best;
}

std::size_t KdTree3::nearest_index(const Vec3& query) const {
  double best = std::numeric_limits<double>::infinity();
  std::size_t idx = std::numeric_limits<std::size_t>::max();
  search(0, query, best, idx);
  return idx;
}

}  // namespace g2l
