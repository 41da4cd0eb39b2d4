#pragma once

#include <algorithm>
#include <cstddef>
#include <limits>
#include <vector>

#include "dualsplat/core/types.hpp"

namespace dualsplat {

/// Static k-d tree over 3D points for nearest-neighbor and kNN queries.
/// Median-split on the widest axis; nodes store index ranges into a
/// reordered index array, so the structure is a flat vector.
class KdTree {
 public:
  KdTree() = default;
  explicit KdTree(const std::vector<Vec3>& points) { build(points); }

  void build(const std::vector<Vec3>& points) {
    points_ = &points;
    indices_.resize(points.size());
    for (size_t i = 0; i < points.size(); ++i) indices_[i] = static_cast<int>(i);
    nodes_.clear();
    nodes_.reserve(points.size() * 2);
    if (!points.empty()) build_node(0, static_cast<int>(points.size()));
  }

  size_t size() const { return points_ ? points_->size() : 0; }

  /// Index of the closest point and its squared distance.
  int nearest(const Vec3& q, double* dist2_out = nullptr) const {
    int best = -1;
    double best_d2 = std::numeric_limits<double>::infinity();
    if (!nodes_.empty()) search_nearest(0, q, best, best_d2);
    if (dist2_out) *dist2_out = best_d2;
    return best;
  }

  /// Indices of the k nearest points, sorted by ascending distance.
  std::vector<int> knn(const Vec3& q, int k) const {
    Heap heap;
    heap.capacity = k;
    if (!nodes_.empty()) search_knn(0, q, heap);
    std::sort(heap.items.begin(), heap.items.end(),
              [](const auto& a, const auto& b) {
                return a.first < b.first || (a.first == b.first && a.second < b.second);
              });
    std::vector<int> out;
    out.reserve(heap.items.size());
    for (const auto& it : heap.items) out.push_back(it.second);
    return out;
  }

 private:
  struct Node {
    double split = 0;
    int axis = -1;        // -1 marks a leaf
    int left = -1, right = -1;
    int begin = 0, end = 0;  // leaf payload range in indices_
  };

  struct Heap {  // bounded max-heap of (dist2, index)
    int capacity = 0;
    std::vector<std::pair<double, int>> items;

    double worst() const {
      return items.size() < static_cast<size_t>(capacity)
                 ? std::numeric_limits<double>::infinity()
                 : items.front().first;
    }
    void push(double d2, int idx) {
      if (items.size() < static_cast<size_t>(capacity)) {
        items.emplace_back(d2, idx);
        std::push_heap(items.begin(), items.end());
      } else if (d2 < items.front().first) {
        std::pop_heap(items.begin(), items.end());
        items.back() = {d2, idx};
        std::push_heap(items.begin(), items.end());
      }
    }
  };

  static constexpr int kLeafSize = 16;

  int build_node(int begin, int end) {
    const int id = static_cast<int>(nodes_.size());
    nodes_.emplace_back();
    if (end - begin <= kLeafSize) {
      nodes_[id].begin = begin;
      nodes_[id].end = end;
      return id;
    }
    Vec3 lo = Vec3::Constant(std::numeric_limits<double>::infinity());
    Vec3 hi = -lo;
    for (int i = begin; i < end; ++i) {
      const Vec3& p = (*points_)[indices_[i]];
      lo = lo.cwiseMin(p);
      hi = hi.cwiseMax(p);
    }
    int axis = 0;
    (hi - lo).maxCoeff(&axis);
    const int mid = (begin + end) / 2;
    std::nth_element(indices_.begin() + begin, indices_.begin() + mid,
                     indices_.begin() + end, [&](int a, int b) {
                       const double pa = (*points_)[a][axis], pb = (*points_)[b][axis];
                       return pa < pb || (pa == pb && a < b);
                     });
    nodes_[id].axis = axis;
    nodes_[id].split = (*points_)[indices_[mid]][axis];
    const int left = build_node(begin, mid);
    const int right = build_node(mid, end);
    nodes_[id].left = left;
    nodes_[id].right = right;
    return id;
  }

  void search_nearest(int node, const Vec3& q, int& best, double& best_d2) const {
    const Node& n = nodes_[node];
    if (n.axis < 0) {
      for (int i = n.begin; i < n.end; ++i) {
        const int idx = indices_[i];
        const double d2 = (q - (*points_)[idx]).squaredNorm();
        if (d2 < best_d2 || (d2 == best_d2 && idx < best)) {
          best_d2 = d2;
          best = idx;
        }
      }
      return;
    }
    const double delta = q[n.axis] - n.split;
    const int first = delta < 0 ? n.left : n.right;
    const int second = delta < 0 ? n.right : n.left;
    search_nearest(first, q, best, best_d2);
    if (delta * delta < best_d2) search_nearest(second, q, best, best_d2);
  }

  void search_knn(int node, const Vec3& q, Heap& heap) const {
    const Node& n = nodes_[node];
    if (n.axis < 0) {
      for (int i = n.begin; i < n.end; ++i) {
        const int idx = indices_[i];
        heap.push((q - (*points_)[idx]).squaredNorm(), idx);
      }
      return;
    }
    const double delta = q[n.axis] - n.split;
    const int first = delta < 0 ? n.left : n.right;
    const int second = delta < 0 ? n.right : n.left;
    search_knn(first, q, heap);
    if (delta * delta <= heap.worst()) search_knn(second, q, heap);
  }

  const std::vector<Vec3>* points_ = nullptr;
  std::vector<int> indices_;
  std::vector<Node> nodes_;
};

}  // namespace dualsplat
