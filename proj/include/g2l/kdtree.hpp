#pragma once

#include <vector>

#include "g2l/geom.hpp"

namespace g2l {

// Static 3-d tree over a point set for exact nearest-neighbour queries.
class KdTree3 {
 public:
  explicit KdTree3(std::vector<Vec3> points);

  // Squared distance to the nearest stored point. Requires a non-empty tree.
  double nearest_squared_distance(const Vec3& query) const;
  std::size_t nearest_index(const Vec3& query) const;

  std::size_t size() const { return points_.size(); }

 private:
  struct Node {
    int axis = -1;  // -1 marks a leaf
    double split = 0.0;
    int left = -1;
    int right = -1;
    std::size_t begin = 0;
    std::size_t end = 0;
  };

  int build(std::size_t begin, std::size_t end, int depth);
  void search(int node, const Vec3& q, double& best, std::size_t& best_idx) const;

  std::vector<Vec3> points_;
  std::vector<std::size_t> order_;
  std::vector<Node> nodes_;
  static constexpr std::size_t kLeafSize = 8;
};

}  // namespace g2l
