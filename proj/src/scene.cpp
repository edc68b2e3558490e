#include "lgsim/scene.hpp"

#include "lgsim/errors.hpp"
#include "lgsim/parallel.hpp"

#include <cmath>
#include <numbers>
#include <random>
#include <unordered_set>

namespace lgsim {
namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Independent stream per beam, keyed by (seed, channel, azimuth) so results do
// not depend on how beams are scheduled.
std::mt19937_64 beam_stream(std::uint64_t seed, int channel, int azimuth) {
  std::uint64_t k = splitmix64(seed);
  k = splitmix64(k ^ static_cast<std::uint64_t>(channel));
  k = splitmix64(k ^ (static_cast<std::uint64_t>(azimuth) << 20));
  return std::mt19937_64(k);
}

OrientedBox bounds_of(const TriangleMesh& mesh) {
  Vec3 lo = Vec3::Constant(std::numeric_limits<double>::infinity());
  Vec3 hi = -lo;
  for (const auto& v : mesh.vertices) {
    lo = lo.cwiseMin(v);
    hi = hi.cwiseMax(v);
  }
  const Vec3 ext = (hi - lo).cwiseMax(Vec3::Constant(1e-9));
  return OrientedBox::make(0.5 * (lo + hi), ext.x(), ext.y(), ext.z(), 0.0);
}

}  // namespace

SceneObject SceneObject::box(std::string id, std::string label, const OrientedBox& box,
                             const RigidTransform& pose) {
  return {std::move(id), std::move(label), box, pose, box};
}

SceneObject SceneObject::mesh(std::string id, std::string label, TriangleMesh mesh,
                              const RigidTransform& pose) {
  mesh.validate();
  if (mesh.faces.empty()) throw InvalidArgument("mesh has no faces");
  OrientedBox bounds = bounds_of(mesh);
  return {std::move(id), std::move(label), std::move(mesh), pose, bounds};
}

std::optional<double> SceneObject::intersect(const Ray& world_ray) const {
  const RigidTransform to_local = pose.inverse();
  const Ray local(to_local.apply(world_ray.origin()), to_local.apply_direction(world_ray.direction()));
  if (const auto* b = std::get_if<OrientedBox>(&geometry)) return ray_box_intersect(local, *b);
  if (!ray_box_intersect(local, local_bounds) && !local_bounds.contains_strictly(local.origin())) {
    return std::nullopt;
  }
  return ray_mesh_intersect(local, std::get<TriangleMesh>(geometry));
}

OrientedBox SceneObject::world_box() const {
  return OrientedBox::make(pose.apply(local_bounds.center), local_bounds.length,
                           local_bounds.width, local_bounds.height,
                           local_bounds.yaw + pose.yaw());
}

void Scene::validate() const {
  std::unordered_set<std::string> ids;
  for (const auto& obj : objects) {
    if (!ids.insert(obj.id).second) throw InvalidArgument("duplicate object id '" + obj.id + "'");
    if (const auto* m = std::get_if<TriangleMesh>(&obj.geometry)) m->validate();
  }
}

std::optional<double> Scene::intersect(const Ray& ray) const {
  std::optional<double> best;
  for (const auto& obj : objects) {
    if (auto t = obj.intersect(ray); t && (!best || *t < *best)) best = t;
  }
  if (ground.enabled && ray.direction().z() != 0.0) {
    const double t = (ground.height - ray.origin().z()) / ray.direction().z();
    if (t > 0.0 && (!best || t < *best)) best = t;
  }
  return best;
}

LidarConfig LidarConfig::hdl64_like() {
  LidarConfig c;
  constexpr int channels = 64;
  const double lo = -24.8 * std::numbers::pi / 180.0;
  const double hi = 2.0 * std::numbers::pi / 180.0;
  for (int i = 0; i < channels; ++i) c.elevations.push_back(lo + (hi - lo) * i / (channels - 1));
  return c;
}

void LidarConfig::validate() const {
  if (elevations.empty()) throw InvalidArgument("lidar needs at least one channel");
  if (!(azimuth_step > 0.0)) throw InvalidArgument("azimuth step must be positive");
  if (!(max_range > 0.0)) throw InvalidArgument("max range must be positive");
  if (!(range_noise_sigma >= 0.0)) throw InvalidArgument("range noise sigma must be >= 0");
  if (!(dropout >= 0.0 && dropout <= 1.0)) throw InvalidArgument("dropout must be in [0, 1]");
}

int LidarConfig::azimuth_count() const {
  return std::max(1, static_cast<int>(std::llround(2.0 * std::numbers::pi / azimuth_step)));
}

Vec3 beam_direction(double elevation, double azimuth) {
  const double ce = std::cos(elevation);
  return {ce * std::cos(azimuth), ce * std::sin(azimuth), std::sin(elevation)};
}

LidarScan raycast_lidar(const Scene& scene, const LidarConfig& config, unsigned threads) {
  config.validate();
  const int channels = static_cast<int>(config.elevations.size());
  const int azimuths = config.azimuth_count();
  std::vector<std::optional<LidarReturn>> slots(std::size_t(channels) * azimuths);

  parallel_for(slots.size(), threads, [&](std::size_t i) {
    const int channel = static_cast<int>(i / azimuths);
    const int az = static_cast<int>(i % azimuths);
    const Vec3 dir = beam_direction(config.elevations[channel], az * config.azimuth_step);
    const Ray ray(config.mount.translation(), config.mount.apply_direction(dir));
    auto rng = beam_stream(config.seed, channel, az);
    const double noise = std::normal_distribution<double>(0.0, 1.0)(rng);
    const bool dropped = std::uniform_real_distribution<double>(0.0, 1.0)(rng) < config.dropout;

    const auto t = scene.intersect(ray);
    if (!t || *t > config.max_range || dropped) return;
    double range = *t;
    if (config.range_noise_sigma > 0.0) range += config.range_noise_sigma * noise;
    if (!(range > 0.0) || range > config.max_range) return;
    slots[i] = LidarReturn{range * dir, channel, az, range};
  });

  LidarScan scan;
  scan.sensor_to_world = config.mount;
  scan.channels = channels;
  scan.max_range = config.max_range;
  for (auto& s : slots) {
    if (s) scan.returns.push_back(*s);
  }
  return scan;
}

std::size_t DepthMap::hit_count() const {
  std::size_t n = 0;
  for (double v : values) n += v != kNoHit;
  return n;
}

DepthMap render_depth(const Scene& scene, const PinholeCamera& camera,
                      const RigidTransform& camera_pose, unsigned threads, double max_range) {
  camera.validate();
  DepthMap depth(camera.width, camera.height);
  parallel_for(depth.values.size(), threads, [&](std::size_t i) {
    const int x = static_cast<int>(i % camera.width);
    const int y = static_cast<int>(i / camera.width);
    const Vec3 dir_cam((x - camera.cx) / camera.fx, (y - camera.cy) / camera.fy, 1.0);
    const Ray ray(camera_pose.translation(), camera_pose.apply_direction(dir_cam));
    const auto t = scene.intersect(ray);
    if (!t || *t > max_range) return;
    depth.values[i] = *t / dir_cam.norm();
  });
  return depth;
}

std::vector<PixelPoint> backproject_depth(const DepthMap& depth, const PinholeCamera& camera,
                                          const RigidTransform& to_frame) {
  std::vector<PixelPoint> out;
  for (int y = 0; y < depth.height; ++y) {
    for (int x = 0; x < depth.width; ++x) {
      if (!depth.hit(x, y)) continue;
      out.push_back({{x, y}, to_frame.apply(backproject_pixel(camera, x, y, depth.at(x, y)))});
    }
  }
  return out;
}

std::vector<LabeledBox> ground_truth(const Scene& scene, const LidarScan& scan,
                                     const std::set<std::string>& detectable, double margin) {
  if (!(margin >= 0.0)) throw InvalidArgument("count margin must be non-negative");
  const RigidTransform world_to_sensor = scan.sensor_to_world.inverse();
  const double sensor_yaw = world_to_sensor.yaw();
  std::vector<LabeledBox> out;
  for (const auto& obj : scene.objects) {
    if (!detectable.contains(obj.label)) continue;
    const OrientedBox w = obj.world_box();
    const OrientedBox box = OrientedBox::make(world_to_sensor.apply(w.center), w.length, w.width,
                                              w.height, w.yaw + sensor_yaw);
    const OrientedBox grown = OrientedBox::make(box.center, box.length + 2 * margin, box.width + 2 * margin,
                                                box.height + 2 * margin, box.yaw);
    int inside = 0;
    for (const auto& r : scan.returns) inside += grown.contains_strictly(r.point);
    out.push_back({obj.id, obj.label, box, inside});
  }
  return out;
}

}  // namespace lgsim
