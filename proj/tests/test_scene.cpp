#include <doctest.h>

#include "lgsim/dataset_io.hpp"
#include "lgsim/errors.hpp"
#include "lgsim/scene.hpp"

#include <cmath>
#include <random>

using namespace lgsim;

namespace {

constexpr double kPi = 3.14159265358979323846;

LidarConfig narrow_lidar(int channels, double lo_deg, double hi_deg) {
  LidarConfig c;
  for (int i = 0; i < channels; ++i) {
    c.elevations.push_back((lo_deg + (hi_deg - lo_deg) * i / std::max(1, channels - 1)) * kPi / 180.0);
  }
  return c;
}

// Distance from p to the surface of a box given in world coordinates.
double box_surface_distance(const OrientedBox& box, const Vec3& p) {
  const Vec3 q = box.local_to_world().inverse().apply(p);
  const Vec3 half(box.length / 2, box.width / 2, box.height / 2);
  const Vec3 d = q.cwiseAbs() - half;
  const Vec3 outside = d.cwiseMax(0.0);
  return outside.norm() + std::abs(std::min(d.maxCoeff(), 0.0));
}

Scene street() {
  Scene s;
  s.ground = {true, 0.0};
  s.objects.push_back(SceneObject::box("a", "Car", OrientedBox::make(Vec3(12, 1, 0.8), 4.2, 1.8, 1.6, 0.3)));
  s.objects.push_back(SceneObject::box("b", "Car", OrientedBox::make(Vec3(0, 0, 0), 4.0, 1.7, 1.5, 0.0),
                                       RigidTransform::from_yaw(-0.7, Vec3(20, -6, 0.75))));
  s.objects.push_back(SceneObject::box("c", "Pedestrian", OrientedBox::make(Vec3(8, -3, 0.9), 0.6, 0.6, 1.8, 0)));
  return s;
}

}  // namespace

TEST_CASE("empty scene gives no returns and an all-sentinel depth map") {
  const Scene empty;
  LidarConfig c = narrow_lidar(8, -10, 2);
  CHECK(raycast_lidar(empty, c).returns.empty());
  const PinholeCamera cam{50, 50, 31.5, 23.5, 64, 48};
  const DepthMap d = render_depth(empty, cam, RigidTransform::identity());
  CHECK(d.hit_count() == 0);
  CHECK(backproject_depth(d, cam, RigidTransform::identity()).empty());
}

TEST_CASE("noise-free returns equal the box intersection distance") {
  Scene s;
  const OrientedBox big = OrientedBox::make(Vec3(20, 0, 0), 4, 60, 40, 0);
  s.objects.push_back(SceneObject::box("wall", "Static", big));
  LidarConfig c = narrow_lidar(16, -15, 15);
  c.azimuth_step = 0.5 * kPi / 180;
  const LidarScan scan = raycast_lidar(s, c);
  REQUIRE(scan.returns.size() > 1000);
  for (const auto& r : scan.returns) {
    const Vec3 dir = beam_direction(c.elevations[r.channel], r.azimuth_index * c.azimuth_step);
    const auto t = ray_box_intersect(Ray(Vec3::Zero(), dir), big);
    REQUIRE(t);
    CHECK(std::abs(r.range - *t) < 1e-12 * *t);
    CHECK(r.range > 0.0);
    CHECK(r.range <= c.max_range);
  }
}

TEST_CASE("dropout rate matches its configured probability") {
  Scene s;
  s.objects.push_back(SceneObject::box("wall", "Static", OrientedBox::make(Vec3(15, 0, 0), 2, 60, 60, 0)));
  LidarConfig c = narrow_lidar(40, -20, 20);
  c.seed = 99;
  const std::size_t all = raycast_lidar(s, c).returns.size();
  REQUIRE(all >= 10000);
  c.dropout = 0.5;
  const double kept = double(raycast_lidar(s, c).returns.size()) / double(all);
  CHECK(kept >= 0.47);
  CHECK(kept <= 0.53);
  c.dropout = 1.0;
  CHECK(raycast_lidar(s, c).returns.empty());
}

TEST_CASE("noise-free returns lie on a surface") {
  const Scene s = street();
  LidarConfig c = LidarConfig::hdl64_like();
  c.mount = RigidTransform::from_yaw(0.2, Vec3(0, 0, 1.73));
  const LidarScan scan = raycast_lidar(s, c, 4);
  REQUIRE(scan.returns.size() > 1000);
  double worst = 0.0;
  for (const auto& r : scan.returns) {
    const Vec3 w = scan.sensor_to_world.apply(r.point);
    double d = std::abs(w.z() - s.ground.height);
    for (const auto& o : s.objects) d = std::min(d, box_surface_distance(o.world_box(), w));
    worst = std::max(worst, d);
  }
  CHECK(worst < 1e-9);
}

TEST_CASE("range noise moves returns along the beam only") {
  Scene s;
  s.objects.push_back(SceneObject::box("wall", "Static", OrientedBox::make(Vec3(15, 0, 0), 2, 60, 60, 0)));
  LidarConfig c = narrow_lidar(8, -5, 5);
  const LidarScan clean = raycast_lidar(s, c);
  c.range_noise_sigma = 0.05;
  c.seed = 4;
  const LidarScan noisy = raycast_lidar(s, c);
  REQUIRE(clean.returns.size() == noisy.returns.size());
  double sum = 0.0, sq = 0.0;
  for (std::size_t i = 0; i < clean.returns.size(); ++i) {
    const double e = noisy.returns[i].range - clean.returns[i].range;
    sum += e;
    sq += e * e;
    CHECK(noisy.returns[i].point.normalized().dot(clean.returns[i].point.normalized()) > 1 - 1e-12);
  }
  const double n = double(clean.returns.size());
  CHECK(std::abs(sum / n) < 0.01);
  CHECK(std::sqrt(sq / n) == doctest::Approx(0.05).epsilon(0.1));
}

TEST_CASE("scans and depth maps do not depend on the thread count") {
  const Scene s = street();
  LidarConfig c = LidarConfig::hdl64_like();
  c.range_noise_sigma = 0.02;
  c.dropout = 0.1;
  c.seed = 21;
  const LidarScan a = raycast_lidar(s, c, 1), b = raycast_lidar(s, c, 8);
  REQUIRE(a.returns.size() == b.returns.size());
  for (std::size_t i = 0; i < a.returns.size(); ++i) {
    CHECK(a.returns[i].point == b.returns[i].point);
    CHECK(a.returns[i].azimuth_index == b.returns[i].azimuth_index);
  }
  const SensorRig rig = SensorRig::default_rig();
  const RigidTransform pose = c.mount * rig.camera_pose;
  CHECK(render_depth(s, rig.camera, pose, 1).values == render_depth(s, rig.camera, pose, 8).values);
}

TEST_CASE("wall facing the camera renders constant depth") {
  Scene s;
  TriangleMesh wall{{Vec3(-100, -100, 10), Vec3(100, -100, 10), Vec3(100, 100, 10), Vec3(-100, 100, 10)},
                    {{0, 1, 2}, {0, 2, 3}}};
  s.objects.push_back(SceneObject::mesh("wall", "Static", wall));
  const PinholeCamera cam{60, 60, 39.5, 29.5, 80, 60};
  const DepthMap d = render_depth(s, cam, RigidTransform::identity());
  CHECK(d.hit_count() == d.values.size());
  for (double v : d.values) CHECK(std::abs(v - 10.0) < 1e-9);
  for (const auto& p : backproject_depth(d, cam, RigidTransform::identity())) CHECK(std::abs(p.point.z() - 10.0) < 1e-9);
}

TEST_CASE("tilted camera over the ground plane matches the ray-plane solution") {
  Scene s;
  s.ground = {true, -0.3};
  const PinholeCamera cam{90, 80, 47.5, 35.5, 96, 72};
  const RigidTransform pose = SensorRig::forward_camera_pose(0.4, 0.25, Vec3(1, 2, 1.6));
  const DepthMap d = render_depth(s, cam, pose);
  int hits = 0;
  for (int y = 0; y < cam.height; ++y) {
    for (int x = 0; x < cam.width; ++x) {
      // Camera-frame ray with unit z, so the plane parameter is the z-depth.
      const Vec3 dir = pose.rotation() * Vec3((x - cam.cx) / cam.fx, (y - cam.cy) / cam.fy, 1.0);
      const double t = (s.ground.height - pose.translation().z()) / dir.z();
      if (t > 0.0) {
        ++hits;
        REQUIRE(d.hit(x, y));
        CHECK(std::abs(d.at(x, y) - t) < 1e-9);
      } else {
        CHECK_FALSE(d.hit(x, y));
      }
    }
  }
  CHECK(hits > 1000);
}

TEST_CASE("render, backproject and re-render agree on a mesh scene") {
  Scene s;
  TriangleMesh ramp{{Vec3(6, -4, 0), Vec3(14, -4, 2.5), Vec3(14, 4, 2.5), Vec3(6, 4, 0), Vec3(10, 0, 4)},
                    {{0, 1, 2}, {0, 2, 3}, {1, 4, 2}}};
  s.objects.push_back(SceneObject::mesh("ramp", "Static", ramp, RigidTransform::from_yaw(0.2, Vec3(0, 0, 0))));
  s.ground = {true, 0.0};
  const PinholeCamera cam{70, 70, 47.5, 31.5, 96, 64};
  const RigidTransform pose = SensorRig::forward_camera_pose(0, 0.05, Vec3(0, 0, 1.5));
  const DepthMap d = render_depth(s, cam, pose);
  const auto world = backproject_depth(d, cam, pose);
  REQUIRE(world.size() == d.hit_count());
  DepthMap again(cam.width, cam.height);
  const RigidTransform inv = pose.inverse();
  for (const auto& p : world) {
    const Projection pr = project_point(cam, inv.apply(p.point));
    const Pixel px = pixel_at(pr.u, pr.v);
    CHECK(px == p.pixel);
    again.at(px.x, px.y) = pr.depth;
  }
  double worst = 0.0;
  for (int y = 0; y < cam.height; ++y)
    for (int x = 0; x < cam.width; ++x)
      if (d.hit(x, y)) worst = std::max(worst, std::abs(d.at(x, y) - again.at(x, y)));
  CHECK(worst < 1e-6);
}

TEST_CASE("projected noise-free scan lands on depth pixels of similar depth") {
  const Scene s = street();
  const SensorRig rig = SensorRig::default_rig();
  const LidarScan scan = raycast_lidar(s, rig.lidar);
  const DepthMap d = render_depth(s, rig.camera, rig.lidar.mount * rig.camera_pose);
  const RigidTransform to_cam = rig.sensor_to_camera();
  int checked = 0, bad = 0;
  for (const auto& r : scan.returns) {
    const Vec3 pc = to_cam.apply(r.point);
    if (pc.z() <= 0) continue;
    const Projection pr = project_point(rig.camera, pc);
    if (!rig.camera.contains(pr.u, pr.v)) continue;
    const Pixel c = pixel_at(pr.u, pr.v);
    if (c.x < 2 || c.y < 2 || c.x >= d.width - 2 || c.y >= d.height - 2) continue;
    ++checked;
    // The return's depth is bracketed by the depths of the surrounding pixels.
    double lo = 1e9, hi = -1e9;
    for (int dy = -2; dy <= 2; ++dy)
      for (int dx = -2; dx <= 2; ++dx) {
        const int x = c.x + dx, y = c.y + dy;
        if (!d.hit(x, y)) continue;
        lo = std::min(lo, double(d.at(x, y)));
        hi = std::max(hi, double(d.at(x, y)));
      }
    bad += !(pr.depth >= lo - 1e-3 && pr.depth <= hi + 1e-3);
  }
  CHECK(checked > 500);
  // Returns grazing a silhouette edge need not be bracketed by pixel centres.
  CHECK(bad * 200 <= checked);
}

TEST_CASE("ground truth counts match brute-force containment") {
  const Scene s = street();
  LidarConfig c = LidarConfig::hdl64_like();
  c.mount = RigidTransform::from_yaw(0.1, Vec3(0.5, -0.2, 1.73));
  const LidarScan scan = raycast_lidar(s, c);
  const auto gt = ground_truth(s, scan);
  REQUIRE(gt.size() == 2);
  for (const auto& g : gt) {
    const SceneObject& obj = g.id == "a" ? s.objects[0] : s.objects[1];
    const OrientedBox w = obj.world_box();
    int count = 0;
    for (const auto& r : scan.returns) {
      const Vec3 q = w.local_to_world().inverse().apply(scan.sensor_to_world.apply(r.point));
      const double m = kCountMargin;
      count += std::abs(q.x()) < w.length / 2 + m && std::abs(q.y()) < w.width / 2 + m &&
               std::abs(q.z()) < w.height / 2 + m;
    }
    CHECK(g.points_inside == count);
    CHECK(g.points_inside > 20);
    CHECK(g.label == "Car");
  }
  CHECK(ground_truth(s, LidarScan{{}, scan.sensor_to_world, 64, 120})[0].points_inside == 0);
  CHECK_THROWS_AS(ground_truth(s, scan, {"Car"}, -1.0), InvalidArgument);
  CHECK(ground_truth(s, scan, {"Car", "Pedestrian"}).size() == 3);
}

TEST_CASE("box hidden behind another receives no points") {
  Scene s;
  s.objects.push_back(SceneObject::box("front", "Static", OrientedBox::make(Vec3(10, 0, 1), 1, 12, 8, 0)));
  s.objects.push_back(SceneObject::box("hidden", "Car", OrientedBox::make(Vec3(16, 0, 1), 4, 1.8, 1.5, 0)));
  LidarConfig c = LidarConfig::hdl64_like();
  c.mount = RigidTransform::from_yaw(0, Vec3(0, 0, 1));
  const auto gt = ground_truth(s, raycast_lidar(s, c));
  REQUIRE(gt.size() == 1);
  CHECK(gt[0].points_inside == 0);
}

TEST_CASE("lidar config validation") {
  LidarConfig c = LidarConfig::hdl64_like();
  CHECK(c.elevations.size() == 64);
  CHECK(c.azimuth_count() == 1800);
  c.dropout = 1.5;
  CHECK_THROWS_AS(c.validate(), InvalidArgument);
  c = LidarConfig::hdl64_like();
  c.azimuth_step = 0;
  CHECK_THROWS_AS(c.validate(), InvalidArgument);
  Scene dup;
  dup.objects.push_back(SceneObject::box("x", "Car", OrientedBox{}));
  dup.objects.push_back(SceneObject::box("x", "Car", OrientedBox{}));
  CHECK_THROWS_AS(dup.validate(), InvalidArgument);
}
