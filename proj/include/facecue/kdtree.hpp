#pragma once

#include <algorithm>
#include <array>
#include <cstddef>
#include <limits>
#include <numeric>
#include <vector>

namespace facecue {

// Exact k-nearest-neighbor index over points in Dim dimensions.
//
// Results are ordered by (squared distance, coordinates, index), so equal
// distances are broken by position rather than by insertion order: two
// clouds holding the same points in different orders answer every query
// with the same points.
template <std::size_t Dim>
class KdTree {
 public:
  using Point = std::array<double, Dim>;

  struct Neighbor {
    std::size_t index;
    double dist2;
  };

  KdTree() = default;

  explicit KdTree(std::vector<Point> points) : points_(std::move(points)) {
    order_.resize(points_.size());
    std::iota(order_.begin(), order_.end(), std::size_t{0});
    split_dim_.assign(points_.size(), 0);
    build(0, order_.size());
  }

  std::size_t size() const { return points_.size(); }
  const Point& point(std::size_t i) const { return points_[i]; }

  // Up to k nearest points with squared distance <= max_dist2.
  std::vector<Neighbor> knn(const Point& q, std::size_t k,
                            double max_dist2 = std::numeric_limits<double>::infinity()) const {
    std::vector<Neighbor> best;
    if (k == 0 || points_.empty()) return best;
    best.reserve(k + 1);
    search(0, order_.size(), q, k, max_dist2, best);
    return best;
  }

  Neighbor nearest(const Point& q) const {
    Neighbor best{0, std::numeric_limits<double>::infinity()};
    bool found = false;
    if (!points_.empty()) search1(0, order_.size(), q, best, found);
    return best;
  }

  // Calls visit(index) for every point with squared distance <= max_dist2,
  // in a fixed tree order.
  template <class Visit>
  void for_each_within(const Point& q, double max_dist2, Visit&& visit) const {
    if (!points_.empty()) collect(0, order_.size(), q, max_dist2, visit);
  }

  // Indices of all points with squared distance <= max_dist2, ascending.
  std::vector<std::size_t> within(const Point& q, double max_dist2) const {
    std::vector<std::size_t> out;
    for_each_within(q, max_dist2, [&](std::size_t i) { out.push_back(i); });
    std::sort(out.begin(), out.end());
    return out;
  }

 private:
  bool before(const Neighbor& a, const Neighbor& b) const {
    if (a.dist2 != b.dist2) return a.dist2 < b.dist2;
    const auto& pa = points_[a.index];
    const auto& pb = points_[b.index];
    for (std::size_t d = 0; d < Dim; ++d) {
      if (pa[d] != pb[d]) return pa[d] < pb[d];
    }
    return a.index < b.index;
  }

  void build(std::size_t lo, std::size_t hi) {
    if (hi - lo <= 1) return;
    Point mn, mx;
    mn.fill(std::numeric_limits<double>::infinity());
    mx.fill(-std::numeric_limits<double>::infinity());
    for (std::size_t i = lo; i < hi; ++i) {
      for (std::size_t d = 0; d < Dim; ++d) {
        mn[d] = std::min(mn[d], points_[order_[i]][d]);
        mx[d] = std::max(mx[d], points_[order_[i]][d]);
      }
    }
    std::size_t dim = 0;
    for (std::size_t d = 1; d < Dim; ++d) {
      if (mx[d] - mn[d] > mx[dim] - mn[dim]) dim = d;
    }
    const std::size_t mid = lo + (hi - lo) / 2;
    std::nth_element(order_.begin() + static_cast<std::ptrdiff_t>(lo),
                     order_.begin() + static_cast<std::ptrdiff_t>(mid),
                     order_.begin() + static_cast<std::ptrdiff_t>(hi),
                     [&](std::size_t a, std::size_t b) {
                       if (points_[a][dim] != points_[b][dim]) return points_[a][dim] < points_[b][dim];
                       return a < b;
                     });
    split_dim_[mid] = dim;
    build(lo, mid);
    build(mid + 1, hi);
  }

  void offer(const Neighbor& n, std::size_t k, std::vector<Neighbor>& best) const {
    if (best.size() == k && !before(n, best.back())) return;
    auto pos = std::upper_bound(best.begin(), best.end(), n,
                                [&](const Neighbor& a, const Neighbor& b) { return before(a, b); });
    best.insert(pos, n);
    if (best.size() > k) best.pop_back();
  }

  void search(std::size_t lo, std::size_t hi, const Point& q, std::size_t k, double max_dist2,
              std::vector<Neighbor>& best) const {
    if (lo >= hi) return;
    const std::size_t mid = lo + (hi - lo) / 2;
    const std::size_t idx = order_[mid];
    const Point& p = points_[idx];
    double d2 = 0.0;
    for (std::size_t d = 0; d < Dim; ++d) {
      const double diff = q[d] - p[d];
      d2 += diff * diff;
    }
    if (d2 <= max_dist2) offer({idx, d2}, k, best);
    if (hi - lo == 1) return;

    const std::size_t dim = split_dim_[mid];
    const double diff = q[dim] - p[dim];
    const bool left_first = diff <= 0.0;
    if (left_first) {
      search(lo, mid, q, k, max_dist2, best);
    } else {
      search(mid + 1, hi, q, k, max_dist2, best);
    }
    const double bound = std::min(max_dist2, best.size() == k ? best.back().dist2
                                                              : std::numeric_limits<double>::infinity());
    if (diff * diff <= bound) {
      if (left_first) {
        search(mid + 1, hi, q, k, max_dist2, best);
      } else {
        search(lo, mid, q, k, max_dist2, best);
      }
    }
  }

  void search1(std::size_t lo, std::size_t hi, const Point& q, Neighbor& best, bool& found) const {
    if (lo >= hi) return;
    const std::size_t mid = lo + (hi - lo) / 2;
    const std::size_t idx = order_[mid];
    const Point& p = points_[idx];
    double d2 = 0.0;
    for (std::size_t d = 0; d < Dim; ++d) {
      const double diff = q[d] - p[d];
      d2 += diff * diff;
    }
    const Neighbor cand{idx, d2};
    if (!found || before(cand, best)) {
      best = cand;
      found = true;
    }
    if (hi - lo == 1) return;
    const double diff = q[split_dim_[mid]] - p[split_dim_[mid]];
    if (diff <= 0.0) {
      search1(lo, mid, q, best, found);
      if (diff * diff <= best.dist2) search1(mid + 1, hi, q, best, found);
    } else {
      search1(mid + 1, hi, q, best, found);
      if (diff * diff <= best.dist2) search1(lo, mid, q, best, found);
    }
  }

  template <class Visit>
  void collect(std::size_t lo, std::size_t hi, const Point& q, double max_dist2, Visit& visit) const {
    if (lo >= hi) return;
    const std::size_t mid = lo + (hi - lo) / 2;
    const std::size_t idx = order_[mid];
    const Point& p = points_[idx];
    double d2 = 0.0;
    for (std::size_t d = 0; d < Dim; ++d) {
      const double diff = q[d] - p[d];
      d2 += diff * diff;
    }
    if (d2 <= max_dist2) visit(idx);
    if (hi - lo == 1) return;
    const double diff = q[split_dim_[mid]] - p[split_dim_[mid]];
    if (diff <= 0.0 || diff * diff <= max_dist2) collect(lo, mid, q, max_dist2, visit);
    if (diff >= 0.0 || diff * diff <= max_dist2) collect(mid + 1, hi, q, max_dist2, visit);
  }

  std::vector<Point> points_;
  std::vector<std::size_t> order_;
  std::vector<std::size_t> split_dim_;
};

}  // namespace facecue
