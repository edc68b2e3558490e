#include "lgsim/sampling.hpp"

#include "lgsim/errors.hpp"
#include "lgsim/parallel.hpp"
#include "point_grid.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <random>

namespace lgsim {
namespace {

// Dense occupancy grid with ring-search nearest queries over integer pixels.
class PixelGrid {
public:
  PixelGrid(ImageSize size) : size_(size), cells_(std::size_t(size.width) * size.height, 0) {}

  bool inside(const Pixel& p) const {
    return p.x >= 0 && p.y >= 0 && p.x < size_.width && p.y < size_.height;
  }
  bool test(const Pixel& p) const { return inside(p) && cells_[index(p)] != 0; }
  void set(const Pixel& p, bool on) {
    auto& c = cells_[index(p)];
    count_ += (on ? 1 : 0) - (c ? 1 : 0);
    c = on;
  }
  std::size_t count() const { return count_; }

  // Nearest set pixel to q by (squared distance, row, col), optionally
  // limited to distance <= max_dist.
  std::optional<Pixel> nearest(const Pixel& q, double max_dist) const {
    std::optional<Pixel> best;
    std::int64_t best_d2 = 0;
    const int max_ring = std::max(size_.width, size_.height);
    for (int r = 0; r <= max_ring; ++r) {
      if (double(r) > max_dist) break;
      for (int y = q.y - r; y <= q.y + r; ++y) {
        if (y < 0 || y >= size_.height) continue;
        const bool edge_row = y == q.y - r || y == q.y + r;
        for (int x = q.x - r; x <= q.x + r; x += edge_row ? 1 : 2 * r) {
          const Pixel p{x, y};
          if (x >= 0 && x < size_.width && cells_[index(p)]) {
            const std::int64_t d2 = squared_distance(p, q);
            if (double(d2) <= max_dist * max_dist &&
                (!best || d2 < best_d2 || (d2 == best_d2 && p < *best))) {
              best = p;
              best_d2 = d2;
            }
          }
          if (r == 0) break;
        }
      }
      const std::int64_t next = std::int64_t(r + 1) * (r + 1);
      if (best && best_d2 < next) break;
    }
    return best;
  }

private:
  std::size_t index(const Pixel& p) const { return std::size_t(p.y) * size_.width + p.x; }
  ImageSize size_;
  std::vector<unsigned char> cells_;
  std::size_t count_ = 0;
};

int border_distance(const Pixel& p, ImageSize size) {
  return std::min({p.x, p.y, size.width - 1 - p.x, size.height - 1 - p.y});
}

ImageSize bounding_size(const PixelSet& a, const PixelSet& b) {
  ImageSize s;
  for (const auto* set : {&a, &b}) {
    for (const auto& p : *set) {
      s.width = std::max(s.width, p.x + 1);
      s.height = std::max(s.height, p.y + 1);
    }
  }
  return s;
}

}  // namespace

PixelSet make_pixel_set(std::vector<Pixel> pixels) {
  std::sort(pixels.begin(), pixels.end());
  pixels.erase(std::unique(pixels.begin(), pixels.end()), pixels.end());
  return pixels;
}

bool contains(const PixelSet& set, const Pixel& p) {
  return std::binary_search(set.begin(), set.end(), p);
}

PixelSet GuidePointSet::pixels() const {
  std::vector<Pixel> px;
  px.reserve(entries.size());
  for (const auto& e : entries) px.push_back(e.pixel());
  return make_pixel_set(std::move(px));
}

PseudoPointSet::PseudoPointSet(int width, int height, std::vector<PixelPoint> points)
    : width_(width), height_(height), points_(std::move(points)),
      index_(std::size_t(width) * height, -1) {
  for (std::size_t i = 0; i < points_.size(); ++i) {
    const Pixel& p = points_[i].pixel;
    if (p.x < 0 || p.y < 0 || p.x >= width || p.y >= height) {
      throw InvalidArgument("pseudo point outside the depth map");
    }
    index_[std::size_t(p.y) * width + p.x] = static_cast<int>(i);
  }
}

const PixelPoint* PseudoPointSet::find(const Pixel& p) const {
  if (p.x < 0 || p.y < 0 || p.x >= width_ || p.y >= height_) return nullptr;
  const int i = index_[std::size_t(p.y) * width_ + p.x];
  return i < 0 ? nullptr : &points_[std::size_t(i)];
}

std::size_t SampledCloud::count(Provenance p) const {
  return static_cast<std::size_t>(std::count_if(
      points.begin(), points.end(), [p](const SampledPoint& s) { return s.provenance == p; }));
}

GuidePointSet project_scan_to_guides(const LidarScan& scan, const PinholeCamera& camera,
                                     const RigidTransform& sensor_to_camera) {
  camera.validate();
  GuidePointSet guides{camera.width, camera.height, {}};
  for (const auto& r : scan.returns) {
    const Vec3 pc = sensor_to_camera.apply(r.point);
    if (!(pc.z() > 0.0)) continue;
    const Projection proj = project_point(camera, pc);
    if (!camera.contains(proj.u, proj.v)) continue;
    guides.entries.push_back({proj.u, proj.v, r.point});
  }
  if (guides.entries.empty()) throw EmptyGuide("no LiDAR return projects into the image");
  return guides;
}

namespace {

std::vector<std::size_t> all_scan_neighbors(const GuidePointSet& guides, unsigned threads) {
  if (guides.entries.size() < 2) throw DegenerateGuide("guide set needs at least two entries");
  std::vector<Eigen::Vector2d> pts;
  pts.reserve(guides.entries.size());
  for (const auto& e : guides.entries) pts.emplace_back(e.u, e.v);
  const detail::PointGrid2D grid(std::move(pts));
  std::vector<std::size_t> out(guides.entries.size());
  std::atomic<bool> degenerate = false;
  parallel_for(out.size(), threads, [&](std::size_t i) {
    const auto nn = grid.nearest(i, true);
    if (!nn) {
      degenerate = true;
      return;
    }
    out[i] = *nn;
  });
  if (degenerate) throw DegenerateGuide("all guide entries coincide");
  return out;
}

}  // namespace

std::size_t scan_neighbor(const GuidePointSet& guides, std::size_t i) {
  if (guides.entries.size() < 2) throw DegenerateGuide("guide set needs at least two entries");
  if (i >= guides.entries.size()) throw InvalidArgument("guide index out of range");
  const auto& q = guides.entries[i];
  std::optional<std::size_t> best;
  double best_d2 = 0.0;
  for (std::size_t j = 0; j < guides.entries.size(); ++j) {
    if (j == i) continue;
    const double du = guides.entries[j].u - q.u, dv = guides.entries[j].v - q.v;
    const double d2 = du * du + dv * dv;
    if (d2 == 0.0) continue;
    if (!best || d2 < best_d2) {
      best = j;
      best_d2 = d2;
    }
  }
  if (!best) throw DegenerateGuide("all guide entries coincide");
  return *best;
}

Eigen::Vector2d scan_direction(const GuidePointSet& guides, std::size_t i) {
  const std::size_t j = scan_neighbor(guides, i);
  const Eigen::Vector2d d(guides.entries[j].u - guides.entries[i].u,
                          guides.entries[j].v - guides.entries[i].v);
  return d.normalized();
}

std::vector<Pixel> supercover_line(const Pixel& a, const Pixel& b) {
  std::vector<Pixel> out{a};
  int x = a.x, y = a.y;
  int dx = b.x - a.x, dy = b.y - a.y;
  const int xstep = dx < 0 ? -1 : 1;
  const int ystep = dy < 0 ? -1 : 1;
  dx = std::abs(dx);
  dy = std::abs(dy);
  const int ddx = 2 * dx, ddy = 2 * dy;
  // The error terms track where the segment crosses pixel boundaries; when it
  // passes exactly through a corner both side pixels are touched.
  if (ddx >= ddy) {
    int error = dx, error_prev = dx;
    for (int i = 0; i < dx; ++i) {
      x += xstep;
      error += ddy;
      if (error > ddx) {
        y += ystep;
        error -= ddx;
        if (error + error_prev < ddx) {
          out.push_back({x, y - ystep});
        } else if (error + error_prev > ddx) {
          out.push_back({x - xstep, y});
        } else {
          out.push_back({x, y - ystep});
          out.push_back({x - xstep, y});
        }
      }
      out.push_back({x, y});
      error_prev = error;
    }
  } else {
    int error = dy, error_prev = dy;
    for (int i = 0; i < dy; ++i) {
      y += ystep;
      error += ddx;
      if (error > ddy) {
        x += xstep;
        error -= ddy;
        if (error + error_prev < ddy) {
          out.push_back({x - xstep, y});
        } else if (error + error_prev > ddy) {
          out.push_back({x, y - ystep});
        } else {
          out.push_back({x - xstep, y});
          out.push_back({x, y - ystep});
        }
      }
      out.push_back({x, y});
      error_prev = error;
    }
  }
  return out;
}

PixelSet build_d_aug(const GuidePointSet& guides, const PseudoPointSet& depth_points,
                     unsigned threads) {
  const auto neighbors = all_scan_neighbors(guides, threads);
  std::vector<std::vector<Pixel>> per_guide(guides.entries.size());
  parallel_for(per_guide.size(), threads, [&](std::size_t i) {
    for (const Pixel& p :
         supercover_line(guides.entries[i].pixel(), guides.entries[neighbors[i]].pixel())) {
      if (depth_points.contains(p)) per_guide[i].push_back(p);
    }
  });
  std::vector<Pixel> all;
  for (auto& v : per_guide) all.insert(all.end(), v.begin(), v.end());
  return make_pixel_set(std::move(all));
}

double compute_d_min(const Pixel& p, const PixelSet& sampled) {
  if (sampled.empty()) throw EmptySampledSet("D_s is empty");
  std::int64_t best = std::numeric_limits<std::int64_t>::max();
  for (const auto& s : sampled) best = std::min(best, squared_distance(p, s));
  return std::sqrt(double(best));
}

PixelSet prune_traversal(const PixelSet& sampled, const PixelSet& d_aug, ImageSize size,
                         const SamplerConfig& config, std::vector<WalkStep>* trace) {
  if (sampled.empty()) throw EmptySampledSet("D_s is empty");
  const ImageSize needed = bounding_size(sampled, d_aug);
  size.width = std::max(size.width, needed.width);
  size.height = std::max(size.height, needed.height);
  for (const auto* set : {&sampled, &d_aug}) {
    for (const auto& p : *set) {
      if (p.x < 0 || p.y < 0) throw InvalidArgument("pixel with negative coordinate");
    }
  }

  PixelGrid lidar(size);
  for (const auto& p : sampled) lidar.set(p, true);
  PixelGrid unvisited(size);
  for (const auto& p : sampled) unvisited.set(p, true);
  for (const auto& p : d_aug) unvisited.set(p, true);

  auto threshold = [&](const Pixel& b) {
    if (config.d_min.kind == DMinPolicy::Kind::Constant) return config.d_min.value;
    const auto nn = lidar.nearest(b, std::numeric_limits<double>::infinity());
    return std::sqrt(double(squared_distance(*nn, b)));
  };
  auto record = [&](WalkStep::Action action, Pixel from, Pixel to, double dist, double dmin) {
    if (trace) trace->push_back({action, from, to, dist, dmin});
  };

  std::vector<Pixel> kept;
  auto begin_at = [&](const Pixel& p, WalkStep::Action action) {
    unvisited.set(p, false);
    if (!lidar.test(p)) kept.push_back(p);
    record(action, p, p, 0.0, 0.0);
    return p;
  };

  // Start candidates: points within one pixel of the border, or the
  // edge-most points when none are that close.
  std::vector<Pixel> work(sampled);
  work.insert(work.end(), d_aug.begin(), d_aug.end());
  work = make_pixel_set(std::move(work));
  int min_bd = std::numeric_limits<int>::max();
  for (const auto& p : work) min_bd = std::min(min_bd, border_distance(p, size));
  std::vector<Pixel> candidates;
  for (const auto& p : work) {
    if (border_distance(p, size) <= std::max(1, min_bd)) candidates.push_back(p);
  }
  Pixel start = candidates.front();
  if (config.start == StartPolicy::EdgeRandom) {
    std::mt19937_64 rng(config.seed);
    start = candidates[std::uniform_int_distribution<std::size_t>(0, candidates.size() - 1)(rng)];
  }
  Pixel head = begin_at(start, WalkStep::Action::Start);

  while (unvisited.count() > 0) {
    const auto next = unvisited.nearest(head, config.max_step);
    if (!next) {
      Pixel restart{};
      int best_bd = std::numeric_limits<int>::max();
      for (const auto& p : work) {
        if (!unvisited.test(p)) continue;
        const int bd = border_distance(p, size);
        if (bd < best_bd) {
          best_bd = bd;
          restart = p;
        }
      }
      head = begin_at(restart, WalkStep::Action::Restart);
      continue;
    }
    const Pixel b = *next;
    unvisited.set(b, false);
    const double dist = std::sqrt(double(squared_distance(head, b)));
    if (lidar.test(b)) {
      record(WalkStep::Action::Advance, head, b, dist, 0.0);
      head = b;
      continue;
    }
    const double dmin = threshold(b);
    if (dist < dmin) {
      record(WalkStep::Action::Prune, head, b, dist, dmin);
    } else {
      record(WalkStep::Action::Keep, head, b, dist, dmin);
      kept.push_back(b);
      head = b;
    }
  }
  return make_pixel_set(std::move(kept));
}

SamplingDetail lidar_guided_sample_detailed(const LidarScan& scan, const DepthMap& depth,
                                            const PinholeCamera& camera,
                                            const RigidTransform& sensor_to_camera,
                                            const SamplerConfig& config) {
  if (depth.width != camera.width || depth.height != camera.height) {
    throw InvalidArgument("depth map size differs from the camera");
  }
  SamplingDetail out;
  out.guides = project_scan_to_guides(scan, camera, sensor_to_camera);
  out.depth_points = PseudoPointSet(depth.width, depth.height,
                                    backproject_depth(depth, camera, sensor_to_camera.inverse()));
  out.sampled = out.guides.pixels();
  out.d_aug = build_d_aug(out.guides, out.depth_points, config.threads);
  out.kept = prune_traversal(out.sampled, out.d_aug, {camera.width, camera.height}, config);

  for (const auto& g : out.guides.entries) {
    out.cloud.points.push_back({g.source, g.u, g.v, Provenance::FromLidar});
  }
  for (const auto& p : out.kept) {
    const PixelPoint* d = out.depth_points.find(p);
    out.cloud.points.push_back({d->point, double(p.x), double(p.y), Provenance::FromDepth});
  }
  return out;
}

SampledCloud lidar_guided_sample(const LidarScan& scan, const DepthMap& depth,
                                 const PinholeCamera& camera,
                                 const RigidTransform& sensor_to_camera,
                                 const SamplerConfig& config) {
  return lidar_guided_sample_detailed(scan, depth, camera, sensor_to_camera, config).cloud;
}

DensityStats density_stats(const SampledCloud& cloud) {
  if (cloud.points.size() < 2) throw TooFewPoints("density statistics need two points");
  std::vector<Eigen::Vector2d> pts;
  pts.reserve(cloud.points.size());
  for (const auto& p : cloud.points) pts.emplace_back(p.u, p.v);
  const detail::PointGrid2D grid(pts);
  std::vector<double> spacing(pts.size());
  for (std::size_t i = 0; i < pts.size(); ++i) {
    spacing[i] = (pts[*grid.nearest(i, false)] - pts[i]).norm();
  }
  DensityStats s;
  s.count = spacing.size();
  double sum = 0.0;
  for (double d : spacing) sum += d;
  s.mean = sum / double(spacing.size());
  std::sort(spacing.begin(), spacing.end());
  s.min = spacing.front();
  auto rank = [&](double q) {
    const auto k = static_cast<std::size_t>(std::ceil(q * double(spacing.size())));
    return spacing[std::clamp<std::size_t>(k, 1, spacing.size()) - 1];
  };
  s.p10 = rank(0.10);
  s.p50 = rank(0.50);
  s.p90 = rank(0.90);
  return s;
}

}  // namespace lgsim
