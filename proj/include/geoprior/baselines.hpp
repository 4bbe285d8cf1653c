#pragma once

// Reference priors: uniform, k-nearest-neighbour voting, fixed-radius
// neighbour counting and a lon/lat histogram. All ignore time.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numbers>
#include <queue>
#include <span>
#include <utility>
#include <vector>

#include "geoprior/encoder.hpp"
#include "geoprior/error.hpp"
#include "geoprior/geo.hpp"

namespace geoprior {

inline std::vector<double> uniform_prior(std::size_t categories) {
  if (categories < 1) fail(ErrorKind::Validation, "uniform prior needs at least one category");
  return std::vector<double>(categories, 1.0 / static_cast<double>(categories));
}

namespace detail {

// Category frequencies plus alpha; an empty sample counts as uniform.
inline std::vector<double> smoothed_frequencies(const std::vector<std::size_t>& counts, std::size_t total,
                                                double alpha) {
  if (!(alpha >= 0.0)) fail(ErrorKind::Validation, "smoothing alpha must be >= 0");
  std::vector<double> out(counts.size());
  for (std::size_t c = 0; c < counts.size(); ++c) {
    const double freq = total == 0 ? 1.0 / static_cast<double>(counts.size())
                                   : static_cast<double>(counts[c]) / static_cast<double>(total);
    out[c] = freq + alpha;
  }
  return out;
}

}  // namespace detail

// kd-tree over unit vectors. Chord length bounds prune the search; the
// reported distance is the haversine angle, ties broken by insertion index.
class NeighborIndex {
 public:
  NeighborIndex(std::span<const SpatioTemporalPoint> points, std::span<const std::size_t> categories,
                std::size_t num_categories)
      : categories_(categories.begin(), categories.end()), num_categories_(num_categories) {
    if (points.size() != categories.size()) fail(ErrorKind::Shape, "neighbor index: points/categories mismatch");
    if (num_categories == 0) fail(ErrorKind::Validation, "neighbor index needs at least one category");
    for (std::size_t c : categories) {
      if (c >= num_categories) fail(ErrorKind::Lookup, "neighbor index: category out of range");
    }
    points_.assign(points.begin(), points.end());
    for (const auto& p : points_) unit_.push_back(to_unit_vector(p.lon, p.lat));
    order_.resize(points_.size());
    for (std::size_t i = 0; i < order_.size(); ++i) order_[i] = i;
    if (!points_.empty()) root_ = build(0, order_.size());
  }

  std::size_t size() const { return points_.size(); }
  std::size_t num_categories() const { return num_categories_; }
  std::size_t category(std::size_t i) const { return categories_[i]; }
  const SpatioTemporalPoint& point(std::size_t i) const { return points_[i]; }

  // Indices of the min(k, size) nearest points, nearest first.
  std::vector<std::size_t> nearest(const SpatioTemporalPoint& q, std::size_t k) const {
    if (points_.empty()) fail(ErrorKind::Usage, "nearest-neighbour query on an empty index");
    if (k == 0) fail(ErrorKind::Validation, "k must be >= 1");
    k = std::min(k, points_.size());
    const Vec3 u = to_unit_vector(q.lon, q.lat);
    std::priority_queue<Hit> heap;  // worst hit on top
    search_knn(root_, q, u, k, heap);
    std::vector<std::size_t> out(heap.size());
    for (std::size_t i = out.size(); i-- > 0;) {
      out[i] = heap.top().index;
      heap.pop();
    }
    return out;
  }

  // Indices with haversine angle <= radius (radians), ascending index order.
  std::vector<std::size_t> within(const SpatioTemporalPoint& q, double radius) const {
    if (!(radius > 0.0)) fail(ErrorKind::Validation, "radius must be positive");
    std::vector<std::size_t> out;
    if (points_.empty()) return out;
    const Vec3 u = to_unit_vector(q.lon, q.lat);
    search_radius(root_, q, u, radius, out);
    std::sort(out.begin(), out.end());
    return out;
  }

 private:
  struct Node {
    std::size_t begin = 0, end = 0;  // range in order_
    int axis = -1;                   // -1 for leaves
    double split = 0.0;
    std::size_t left = 0, right = 0;
    Vec3 lo{}, hi{};  // bounding box
  };

  struct Hit {
    double angle;
    std::size_t index;
    bool operator<(const Hit& o) const { return angle != o.angle ? angle < o.angle : index < o.index; }
  };

  static constexpr std::size_t kLeafSize = 8;
  static constexpr double kSlack = 1e-12;

  std::size_t build(std::size_t begin, std::size_t end) {
    Node n;
    n.begin = begin;
    n.end = end;
    n.lo = n.hi = unit_[order_[begin]];
    for (std::size_t i = begin; i < end; ++i) {
      for (int a = 0; a < 3; ++a) {
        n.lo[a] = std::min(n.lo[a], unit_[order_[i]][a]);
        n.hi[a] = std::max(n.hi[a], unit_[order_[i]][a]);
      }
    }
    const std::size_t id = nodes_.size();
    nodes_.push_back(n);
    if (end - begin <= kLeafSize) return id;
    int axis = 0;
    for (int a = 1; a < 3; ++a) {
      if (n.hi[a] - n.lo[a] > n.hi[axis] - n.lo[axis]) axis = a;
    }
    const std::size_t mid = begin + (end - begin) / 2;
    std::nth_element(order_.begin() + static_cast<std::ptrdiff_t>(begin),
                     order_.begin() + static_cast<std::ptrdiff_t>(mid),
                     order_.begin() + static_cast<std::ptrdiff_t>(end), [&](std::size_t a, std::size_t b) {
                       return unit_[a][axis] != unit_[b][axis] ? unit_[a][axis] < unit_[b][axis] : a < b;
                     });
    const std::size_t left = build(begin, mid);
    const std::size_t right = build(mid, end);
    nodes_[id].axis = axis;
    nodes_[id].split = unit_[order_[mid]][axis];
    nodes_[id].left = left;
    nodes_[id].right = right;
    return id;
  }

  // Lower bound on the great-circle angle from u to anything in the box.
  double box_angle(const Node& n, const Vec3& u) const {
    double d2 = 0.0;
    for (int a = 0; a < 3; ++a) {
      const double d = u[a] < n.lo[a] ? n.lo[a] - u[a] : (u[a] > n.hi[a] ? u[a] - n.hi[a] : 0.0);
      d2 += d * d;
    }
    const double chord = std::sqrt(d2);
    return 2.0 * std::asin(std::min(1.0, chord / 2.0)) - kSlack;
  }

  void search_knn(std::size_t id, const SpatioTemporalPoint& q, const Vec3& u, std::size_t k,
                  std::priority_queue<Hit>& heap) const {
    const Node& n = nodes_[id];
    if (heap.size() == k && box_angle(n, u) > heap.top().angle) return;
    if (n.axis < 0) {
      for (std::size_t i = n.begin; i < n.end; ++i) {
        const std::size_t idx = order_[i];
        const Hit h{haversine(q, points_[idx]), idx};
        if (heap.size() < k) {
          heap.push(h);
        } else if (h < heap.top()) {
          heap.pop();
          heap.push(h);
        }
      }
      return;
    }
    const bool left_first = u[n.axis] < n.split;
    search_knn(left_first ? n.left : n.right, q, u, k, heap);
    search_knn(left_first ? n.right : n.left, q, u, k, heap);
  }

  void search_radius(std::size_t id, const SpatioTemporalPoint& q, const Vec3& u, double radius,
                     std::vector<std::size_t>& out) const {
    const Node& n = nodes_[id];
    if (box_angle(n, u) > radius) return;
    if (n.axis < 0) {
      for (std::size_t i = n.begin; i < n.end; ++i) {
        if (haversine(q, points_[order_[i]]) <= radius) out.push_back(order_[i]);
      }
      return;
    }
    search_radius(n.left, q, u, radius, out);
    search_radius(n.right, q, u, radius, out);
  }

  std::vector<SpatioTemporalPoint> points_;
  std::vector<Vec3> unit_;
  std::vector<std::size_t> categories_;
  std::size_t num_categories_;
  std::vector<std::size_t> order_;
  std::vector<Node> nodes_;
  std::size_t root_ = 0;
};

// Frequencies among the k nearest training points, plus alpha.
inline std::vector<double> nn_num_prior(const SpatioTemporalPoint& q, const NeighborIndex& index, std::size_t k,
                                        double alpha) {
  const auto hits = index.nearest(q, k);
  std::vector<std::size_t> counts(index.num_categories(), 0);
  for (std::size_t i : hits) ++counts[index.category(i)];
  return detail::smoothed_frequencies(counts, hits.size(), alpha);
}

// Frequencies among training points within `radius` radians, plus alpha.
// An empty neighbourhood yields the uniform prior.
inline std::vector<double> nn_spatial_prior(const SpatioTemporalPoint& q, const NeighborIndex& index, double radius,
                                            double alpha) {
  const auto hits = index.within(q, radius);
  std::vector<std::size_t> counts(index.num_categories(), 0);
  for (std::size_t i : hits) ++counts[index.category(i)];
  return detail::smoothed_frequencies(counts, hits.size(), alpha);
}

// Equal-angle lon/lat histogram. Bins are half-open [lo, hi); lon = 180
// and lat = 90 fall into the last bin.
class GridIndex {
 public:
  GridIndex(std::span<const SpatioTemporalPoint> points, std::span<const std::size_t> categories,
            std::size_t num_categories, std::size_t lat_bins, std::size_t lon_bins)
      : lat_bins_(lat_bins), lon_bins_(lon_bins), num_categories_(num_categories),
        counts_(lat_bins * lon_bins * num_categories, 0), totals_(lat_bins * lon_bins, 0) {
    if (lat_bins == 0 || lon_bins == 0) fail(ErrorKind::Validation, "grid needs at least one bin per axis");
    if (num_categories == 0) fail(ErrorKind::Validation, "grid needs at least one category");
    if (points.size() != categories.size()) fail(ErrorKind::Shape, "grid: points/categories mismatch");
    for (std::size_t i = 0; i < points.size(); ++i) {
      if (categories[i] >= num_categories) fail(ErrorKind::Lookup, "grid: category out of range");
      const std::size_t b = bin(points[i]);
      ++counts_[b * num_categories + categories[i]];
      ++totals_[b];
    }
  }

  std::size_t lat_bins() const { return lat_bins_; }
  std::size_t lon_bins() const { return lon_bins_; }
  std::size_t num_categories() const { return num_categories_; }

  std::size_t bin(const SpatioTemporalPoint& p) const {
    auto index = [](double v, double lo, double span, std::size_t n) {
      const auto i = static_cast<std::ptrdiff_t>(std::floor((v - lo) / span * static_cast<double>(n)));
      return static_cast<std::size_t>(std::clamp<std::ptrdiff_t>(i, 0, static_cast<std::ptrdiff_t>(n) - 1));
    };
    return index(p.lat, -90.0, 180.0, lat_bins_) * lon_bins_ + index(p.lon, -180.0, 360.0, lon_bins_);
  }

  std::size_t count(std::size_t bin, std::size_t category) const { return counts_[bin * num_categories_ + category]; }
  std::size_t total(std::size_t bin) const { return totals_[bin]; }

 private:
  std::size_t lat_bins_;
  std::size_t lon_bins_;
  std::size_t num_categories_;
  std::vector<std::size_t> counts_;
  std::vector<std::size_t> totals_;
};

inline std::vector<double> grid_prior(const SpatioTemporalPoint& q, const GridIndex& grid, double alpha) {
  const std::size_t b = grid.bin(q);
  std::vector<std::size_t> counts(grid.num_categories());
  for (std::size_t c = 0; c < counts.size(); ++c) counts[c] = grid.count(b, c);
  return detail::smoothed_frequencies(counts, grid.total(b), alpha);
}

}  // namespace geoprior
