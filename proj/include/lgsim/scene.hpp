#pragma once

// Analytic scenes and the two baseline point-cloud generators: a rotating
// ray-cast LiDAR and depth rendering followed by back-projection.

#include "lgsim/geometry.hpp"

#include <cstdint>
#include <limits>
#include <optional>
#include <set>
#include <string>
#include <variant>
#include <vector>

namespace lgsim {

struct SceneObject {
  std::string id;
  std::string label;  // class, e.g. "Car"
  std::variant<OrientedBox, TriangleMesh> geometry;  // in the object frame
  RigidTransform pose;                               // object -> world
  OrientedBox local_bounds;                          // tight box around geometry

  static SceneObject box(std::string id, std::string label, const OrientedBox& box,
                         const RigidTransform& pose = {});
  static SceneObject mesh(std::string id, std::string label, TriangleMesh mesh,
                          const RigidTransform& pose = {});

  // Nearest positive hit distance of a world-frame ray.
  std::optional<double> intersect(const Ray& world_ray) const;
  // Bounding box in the world frame. Exact for poses that rotate about +z.
  OrientedBox world_box() const;
};

struct GroundPlane {
  bool enabled = false;
  double height = 0.0;  // world z of the plane
};

struct Scene {
  std::vector<SceneObject> objects;
  GroundPlane ground;

  // Throws InvalidArgument on duplicate ids or invalid meshes.
  void validate() const;
  std::optional<double> intersect(const Ray& world_ray) const;
};

struct LidarConfig {
  std::vector<double> elevations;  // radians, one per channel
  double azimuth_step = 0.2 * 3.14159265358979323846 / 180.0;
  double max_range = 120.0;
  double range_noise_sigma = 0.0;
  double dropout = 0.0;
  RigidTransform mount;  // sensor -> world
  std::uint64_t seed = 0;

  // 64 channels uniform in [-24.8 deg, +2.0 deg], 0.2 deg azimuth step.
  static LidarConfig hdl64_like();
  void validate() const;
  int azimuth_count() const;
};

struct LidarReturn {
  Vec3 point;  // sensor frame
  int channel = 0;
  int azimuth_index = 0;
  double range = 0.0;
};

struct LidarScan {
  std::vector<LidarReturn> returns;  // ordered by (channel, azimuth_index)
  RigidTransform sensor_to_world;
  int channels = 0;
  double max_range = 0.0;
};

// Unit direction of beam (channel elevation, azimuth index) in the sensor frame.
Vec3 beam_direction(double elevation, double azimuth);

LidarScan raycast_lidar(const Scene& scene, const LidarConfig& config, unsigned threads = 1);

struct DepthMap {
  static constexpr double kNoHit = std::numeric_limits<double>::infinity();

  int width = 0;
  int height = 0;
  std::vector<double> values;  // row-major z-depth, kNoHit where nothing was hit

  DepthMap() = default;
  DepthMap(int w, int h) : width(w), height(h), values(std::size_t(w) * h, kNoHit) {}
  double& at(int x, int y) { return values[std::size_t(y) * width + x]; }
  double at(int x, int y) const { return values[std::size_t(y) * width + x]; }
  bool hit(int x, int y) const { return at(x, y) != kNoHit; }
  std::size_t hit_count() const;
};

// camera_pose maps camera frame -> world frame.
DepthMap render_depth(const Scene& scene, const PinholeCamera& camera,
                      const RigidTransform& camera_pose, unsigned threads = 1,
                      double max_range = std::numeric_limits<double>::infinity());

struct PixelPoint {
  Pixel pixel;
  Vec3 point;
};

// One point per hit pixel in row-major order; to_frame maps camera -> target.
std::vector<PixelPoint> backproject_depth(const DepthMap& depth, const PinholeCamera& camera,
                                          const RigidTransform& to_frame);

constexpr double kCountMargin = 0.05;  // metres

struct LabeledBox {
  std::string id;
  std::string label;
  OrientedBox box;  // sensor frame of the scan
  int points_inside = 0;
};

// One box per object whose label is in `detectable`, counting scan returns
// strictly inside the box grown by `margin` on every side. Returns off a
// box's own faces sit exactly on its boundary, hence the margin.
std::vector<LabeledBox> ground_truth(const Scene& scene, const LidarScan& scan,
                                     const std::set<std::string>& detectable = {"Car"},
                                     double margin = kCountMargin);

}  // namespace lgsim
