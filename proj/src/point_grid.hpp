#pragma once

// Uniform bucket grid for exact nearest-neighbour queries over 2D points.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <optional>
#include <vector>

#include <Eigen/Core>

namespace lgsim::detail {

class PointGrid2D {
public:
  explicit PointGrid2D(std::vector<Eigen::Vector2d> points) : points_(std::move(points)) {
    if (points_.empty()) return;
    Eigen::Vector2d lo = points_.front(), hi = points_.front();
    for (const auto& p : points_) {
      lo = lo.cwiseMin(p);
      hi = hi.cwiseMax(p);
    }
    origin_ = lo;
    const Eigen::Vector2d ext = (hi - lo).cwiseMax(Eigen::Vector2d::Constant(1e-9));
    cell_ = std::max(1e-9, std::sqrt(ext.x() * ext.y() * 2.0 / double(points_.size())));
    nx_ = std::min<long>(4096, long(ext.x() / cell_) + 1);
    ny_ = std::min<long>(4096, long(ext.y() / cell_) + 1);
    cell_ = std::max(ext.x() / double(nx_), ext.y() / double(ny_)) * (1.0 + 1e-12);
    if (cell_ <= 0.0) cell_ = 1.0;
    buckets_.resize(std::size_t(nx_ * ny_));
    for (std::size_t i = 0; i < points_.size(); ++i) {
      const auto [cx, cy] = cell_of(points_[i]);
      buckets_[std::size_t(cy * nx_ + cx)].push_back(i);
    }
  }

  // Nearest point other than `self`; ties go to the smaller index. With
  // skip_coincident, points at distance zero from the query are ignored.
  std::optional<std::size_t> nearest(std::size_t self, bool skip_coincident) const {
    const Eigen::Vector2d& q = points_[self];
    const auto [qx, qy] = cell_of(q);
    double best_d2 = std::numeric_limits<double>::infinity();
    std::optional<std::size_t> best;
    const long max_ring = std::max(nx_, ny_);
    for (long r = 0; r <= max_ring; ++r) {
      for (long cy = qy - r; cy <= qy + r; ++cy) {
        if (cy < 0 || cy >= ny_) continue;
        const bool edge_row = cy == qy - r || cy == qy + r;
        for (long cx = qx - r; cx <= qx + r; cx += edge_row ? 1 : 2 * r) {
          if (cx >= 0 && cx < nx_) {
            for (std::size_t j : buckets_[std::size_t(cy * nx_ + cx)]) {
              if (j == self) continue;
              const double d2 = (points_[j] - q).squaredNorm();
              if (skip_coincident && d2 == 0.0) continue;
              if (d2 < best_d2 || (d2 == best_d2 && best && j < *best)) {
                best_d2 = d2;
                best = j;
              }
            }
          }
          if (r == 0) break;
        }
      }
      // Anything in ring r + 1 is at least r * cell away.
      const double reach = double(r) * cell_;
      if (best && best_d2 < reach * reach) break;
    }
    return best;
  }

  const std::vector<Eigen::Vector2d>& points() const { return points_; }

private:
  std::pair<long, long> cell_of(const Eigen::Vector2d& p) const {
    long cx = long((p.x() - origin_.x()) / cell_);
    long cy = long((p.y() - origin_.y()) / cell_);
    return {std::clamp(cx, 0L, nx_ - 1), std::clamp(cy, 0L, ny_ - 1)};
  }

  std::vector<Eigen::Vector2d> points_;
  Eigen::Vector2d origin_ = Eigen::Vector2d::Zero();
  double cell_ = 1.0;
  long nx_ = 1, ny_ = 1;
  std::vector<std::vector<std::size_t>> buckets_;
};

}  // namespace lgsim::detail
