#pragma once

// LiDAR-guided sampling: LiDAR returns projected into the depth camera (the
// guide set L) select which depth back-projected points (D) are kept, so the
// output keeps the scan-line structure of the sensor and the surface detail
// of the depth map.
//
// Pixel sets are sorted, duplicate-free vectors ordered by (row, col).

#include "lgsim/geometry.hpp"
#include "lgsim/scene.hpp"

#include <Eigen/Core>

#include <cstdint>
#include <limits>
#include <vector>

namespace lgsim {

using PixelSet = std::vector<Pixel>;

// Sorts and deduplicates.
PixelSet make_pixel_set(std::vector<Pixel> pixels);
bool contains(const PixelSet& set, const Pixel& p);

struct GuideEntry {
  double u = 0.0, v = 0.0;  // image coordinates
  Vec3 source;              // the LiDAR return, sensor frame
  Pixel pixel() const { return pixel_at(u, v); }
};

struct GuidePointSet {
  int width = 0, height = 0;
  std::vector<GuideEntry> entries;
  PixelSet pixels() const;
};

// D: back-projected depth points addressable by pixel.
class PseudoPointSet {
public:
  PseudoPointSet() = default;
  PseudoPointSet(int width, int height, std::vector<PixelPoint> points);

  int width() const { return width_; }
  int height() const { return height_; }
  std::size_t size() const { return points_.size(); }
  const std::vector<PixelPoint>& points() const { return points_; }
  bool contains(const Pixel& p) const { return find(p) != nullptr; }
  const PixelPoint* find(const Pixel& p) const;

private:
  int width_ = 0, height_ = 0;
  std::vector<PixelPoint> points_;
  std::vector<int> index_;  // row-major, -1 where absent
};

struct DMinPolicy {
  enum class Kind { PerPointNearestInDs, Constant };
  Kind kind = Kind::PerPointNearestInDs;
  double value = 0.0;  // pixels, Constant only

  static DMinPolicy per_point() { return {}; }
  static DMinPolicy constant(double px) { return {Kind::Constant, px}; }
};

enum class StartPolicy { EdgeRandom, EdgeDeterministic };

struct SamplerConfig {
  DMinPolicy d_min;
  std::uint64_t seed = 0;
  StartPolicy start = StartPolicy::EdgeRandom;
  // Points farther than this from the walk head are unreachable and trigger a
  // restart. Unbounded by default.
  double max_step = std::numeric_limits<double>::infinity();
  unsigned threads = 1;
};

enum class Provenance { FromLidar, FromDepth };

struct SampledPoint {
  Vec3 point;       // sensor frame
  double u, v;      // image coordinates
  Provenance provenance;
};

struct SampledCloud {
  std::vector<SampledPoint> points;  // FromLidar entries first, then FromDepth
  std::size_t count(Provenance p) const;
};

GuidePointSet project_scan_to_guides(const LidarScan& scan, const PinholeCamera& camera,
                                     const RigidTransform& sensor_to_camera);

// Index of the Euclidean nearest other entry (coincident entries skipped,
// ties to the smallest index).
std::size_t scan_neighbor(const GuidePointSet& guides, std::size_t i);
Eigen::Vector2d scan_direction(const GuidePointSet& guides, std::size_t i);

// Every pixel whose closed footprint touches the segment a-b.
std::vector<Pixel> supercover_line(const Pixel& a, const Pixel& b);

PixelSet build_d_aug(const GuidePointSet& guides, const PseudoPointSet& depth_points,
                     unsigned threads = 1);

double compute_d_min(const Pixel& p, const PixelSet& sampled);

struct WalkStep {
  enum class Action { Start, Restart, Advance, Keep, Prune };
  Action action;
  Pixel from;  // walk head before the step (equal to `to` for Start/Restart)
  Pixel to;    // the point examined
  double distance = 0.0;
  double d_min = 0.0;  // threshold applied (Keep/Prune only)
};

struct ImageSize {
  int width = 0, height = 0;
};

PixelSet prune_traversal(const PixelSet& sampled, const PixelSet& d_aug, ImageSize size,
                         const SamplerConfig& config, std::vector<WalkStep>* trace = nullptr);

struct SamplingDetail {
  GuidePointSet guides;
  PseudoPointSet depth_points;
  PixelSet sampled;  // D_s pixels
  PixelSet d_aug;
  PixelSet kept;     // P_s
  SampledCloud cloud;
};

// sensor_to_camera maps the scan frame into the depth camera frame.
SamplingDetail lidar_guided_sample_detailed(const LidarScan& scan, const DepthMap& depth,
                                            const PinholeCamera& camera,
                                            const RigidTransform& sensor_to_camera,
                                            const SamplerConfig& config);
SampledCloud lidar_guided_sample(const LidarScan& scan, const DepthMap& depth,
                                 const PinholeCamera& camera,
                                 const RigidTransform& sensor_to_camera,
                                 const SamplerConfig& config);

struct DensityStats {
  std::size_t count = 0;
  double min = 0.0, mean = 0.0;
  double p10 = 0.0, p50 = 0.0, p90 = 0.0;  // nearest-rank percentiles
};

// Nearest-neighbour spacing in image coordinates.
DensityStats density_stats(const SampledCloud& cloud);

}  // namespace lgsim
