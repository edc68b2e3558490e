#include <doctest.h>

#include "lgsim/errors.hpp"
#include "lgsim/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <random>

using namespace lgsim;

namespace {

constexpr double kPi = 3.14159265358979323846;

// Plane hit followed by an area-based barycentric inside test.
std::optional<double> barycentric_oracle(const Ray& ray, const Triangle& tri) {
  const Vec3 n = (tri[1] - tri[0]).cross(tri[2] - tri[0]);
  const double denom = n.dot(ray.direction());
  if (std::abs(denom) < 1e-12 * n.norm()) return std::nullopt;
  const double t = n.dot(tri[0] - ray.origin()) / denom;
  if (t <= 0.0) return std::nullopt;
  const Vec3 p = ray.at(t);
  const double area = n.norm();
  double sum = 0.0;
  for (int i = 0; i < 3; ++i) {
    const Vec3 sub = (tri[(i + 1) % 3] - p).cross(tri[(i + 2) % 3] - p);
    if (sub.dot(n) < 0.0) return std::nullopt;
    sum += sub.norm();
  }
  if (std::abs(sum - area) > 1e-9 * area) return std::nullopt;
  return t;
}

TriangleMesh tessellate(const OrientedBox& box) {
  const auto c = box_corners(box);
  TriangleMesh m;
  m.vertices.assign(c.begin(), c.end());
  m.faces = {{0, 1, 2}, {0, 2, 3}, {4, 6, 5}, {4, 7, 6}, {0, 4, 5}, {0, 5, 1},
             {1, 5, 6}, {1, 6, 2}, {2, 6, 7}, {2, 7, 3}, {3, 7, 4}, {3, 4, 0}};
  return m;
}

Vec3 random_vec(std::mt19937_64& rng, double lo, double hi) {
  std::uniform_real_distribution<double> u(lo, hi);
  return {u(rng), u(rng), u(rng)};
}

}  // namespace

TEST_CASE("backproject_pixel closed forms") {
  PinholeCamera unit{1, 1, 0, 0, 1, 1};
  CHECK((backproject_pixel(unit, 0, 0, 1) - Vec3(0, 0, 1)).norm() == 0.0);
  PinholeCamera two{2, 2, 0, 0, 4, 4};
  CHECK((backproject_pixel(two, 2, 0, 3) - Vec3(3, 0, 3)).norm() < 1e-15);
  CHECK_THROWS_AS(backproject_pixel(two, 1, 1, 0.0), NonPositiveDepth);
  CHECK_THROWS_AS(project_point(two, Vec3(1, 1, -1)), BehindCamera);
  CHECK_THROWS_AS(project_point(two, Vec3(1, 1, 0)), BehindCamera);
}

TEST_CASE("project and backproject are inverse on z > 0") {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(-20, 20), z(0.1, 80);
  const PinholeCamera cam{721.5, 721.5, 609.6, 172.9, 1242, 375};
  double worst = 0.0;
  for (int i = 0; i < 1000; ++i) {
    const Vec3 p(u(rng), u(rng), z(rng));
    const Projection pr = project_point(cam, p);
    worst = std::max(worst, (backproject_pixel(cam, pr.u, pr.v, pr.depth) - p).norm() / p.norm());
    const double uu = u(rng) * 30, vv = u(rng) * 10, d = z(rng);
    const Projection back = project_point(cam, backproject_pixel(cam, uu, vv, d));
    worst = std::max({worst, std::abs(back.u - uu) / 600, std::abs(back.v - vv) / 200, std::abs(back.depth - d) / d});
  }
  CHECK(worst < 1e-12);
}

TEST_CASE("pixel_at uses centred footprints") {
  CHECK(pixel_at(0.0, 0.0) == Pixel{0, 0});
  CHECK(pixel_at(0.49, -0.5) == Pixel{0, 0});
  CHECK(pixel_at(0.5, 1.2) == Pixel{1, 1});
  CHECK(pixel_at(-0.51, 2.6) == Pixel{-1, 3});
}

TEST_CASE("rigid transforms compose with their inverse to identity") {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> a(-kPi, kPi);
  for (int i = 0; i < 200; ++i) {
    const RigidTransform t = RigidTransform::from_ypr(a(rng), a(rng) / 2, a(rng), random_vec(rng, -50, 50));
    const RigidTransform id = t * t.inverse();
    CHECK((id.rotation() - Mat3::Identity()).cwiseAbs().maxCoeff() < 1e-12);
    CHECK(id.translation().norm() < 1e-12);
    const Vec3 p = random_vec(rng, -5, 5);
    const RigidTransform s = RigidTransform::from_yaw(a(rng), random_vec(rng, -3, 3));
    CHECK(((t * s).apply(p) - t.apply(s.apply(p))).norm() < 1e-12);
  }
  Mat3 bad = Mat3::Identity();
  bad(0, 0) = -1;
  CHECK_THROWS_AS(RigidTransform(bad, Vec3::Zero()), InvalidArgument);
  CHECK(std::abs(RigidTransform::from_yaw(1.2).yaw() - 1.2) < 1e-15);
}

TEST_CASE("normalize_angle wraps to (-pi, pi]") {
  CHECK(normalize_angle(kPi) == doctest::Approx(kPi));
  CHECK(normalize_angle(-kPi) == doctest::Approx(kPi));
  CHECK(normalize_angle(3 * kPi / 2) == doctest::Approx(-kPi / 2));
  CHECK(normalize_angle(0.25) == 0.25);
}

TEST_CASE("ray_triangle_intersect hand cases") {
  const Triangle tri{Vec3(-1, -1, 5), Vec3(1, -1, 5), Vec3(0, 1, 5)};
  auto t = ray_triangle_intersect(Ray(Vec3::Zero(), Vec3(0, 0, 1)), tri);
  REQUIRE(t);
  CHECK(*t == doctest::Approx(5.0).epsilon(1e-15));
  CHECK_FALSE(ray_triangle_intersect(Ray(Vec3::Zero(), Vec3(1, 0, 0)), tri));
  CHECK_FALSE(ray_triangle_intersect(Ray(Vec3::Zero(), Vec3(0, 0, -1)), tri));
  CHECK_FALSE(ray_triangle_intersect(Ray(Vec3(5, 5, 0), Vec3(0, 0, 1)), tri));
  CHECK_THROWS_AS(Ray(Vec3::Zero(), Vec3::Zero()), InvalidArgument);
}

TEST_CASE("ray_triangle_intersect agrees with a barycentric oracle") {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> w(0.0, 1.0);
  int hits = 0, disagreements = 0;
  double worst = 0.0;
  for (int i = 0; i < 10000; ++i) {
    const Triangle tri{random_vec(rng, -3, 3), random_vec(rng, -3, 3), random_vec(rng, -3, 3)};
    const Vec3 o = random_vec(rng, -10, 10);
    // Aim near the triangle so about half of the rays hit.
    double b0 = w(rng) * 1.6 - 0.3, b1 = w(rng) * 1.6 - 0.3;
    const Vec3 target = tri[0] + b0 * (tri[1] - tri[0]) + b1 * (tri[2] - tri[0]);
    if ((target - o).norm() < 1e-6) continue;
    const Ray ray(o, target - o);
    const auto a = ray_triangle_intersect(ray, tri);
    const auto b = barycentric_oracle(ray, tri);
    if (a.has_value() != b.has_value()) {
      ++disagreements;
      continue;
    }
    if (a) {
      ++hits;
      worst = std::max(worst, std::abs(*a - *b));
    }
  }
  CHECK(disagreements == 0);
  CHECK(hits > 2000);
  CHECK(worst < 1e-9);
}

TEST_CASE("ray_box_intersect hand cases") {
  const OrientedBox cube = OrientedBox::make(Vec3(5, 0, 0), 1, 1, 1, 0);
  auto t = ray_box_intersect(Ray(Vec3::Zero(), Vec3(1, 0, 0)), cube);
  REQUIRE(t);
  CHECK(*t == doctest::Approx(4.5).epsilon(1e-15));
  CHECK_FALSE(ray_box_intersect(Ray(Vec3::Zero(), Vec3(0, 1, 0)), cube));
  CHECK_FALSE(ray_box_intersect(Ray(Vec3::Zero(), Vec3(-1, 0, 0)), cube));
  CHECK_THROWS_AS(OrientedBox::make(Vec3::Zero(), 0, 1, 1, 0), InvalidArgument);
}

TEST_CASE("ray_box_intersect agrees with the tessellated box") {
  std::mt19937_64 rng(13);
  std::uniform_real_distribution<double> dim(0.3, 5), yaw(-kPi, kPi), w(-0.7, 0.7);
  int hits = 0, disagreements = 0;
  double worst = 0.0;
  for (int i = 0; i < 3000; ++i) {
    const OrientedBox box = OrientedBox::make(random_vec(rng, -10, 10), dim(rng), dim(rng), dim(rng), yaw(rng));
    const Vec3 o = random_vec(rng, -30, 30);
    const Vec3 aim = box.center + Vec3(w(rng) * box.length, w(rng) * box.width, w(rng) * box.height) * 1.5;
    const Ray ray(o, aim - o);
    if (box.contains_strictly(o)) continue;
    const auto a = ray_box_intersect(ray, box);
    const auto b = ray_mesh_intersect(ray, tessellate(box));
    if (a.has_value() != b.has_value()) {
      ++disagreements;
      continue;
    }
    if (a) {
      ++hits;
      worst = std::max(worst, std::abs(*a - *b));
    }
  }
  CHECK(disagreements == 0);
  CHECK(hits > 500);
  CHECK(worst < 1e-9);
}

TEST_CASE("box_corners layout") {
  const auto c = box_corners(OrientedBox::make(Vec3::Zero(), 1, 1, 1, 0));
  const Vec3 expected[8] = {{0.5, 0.5, -0.5},  {-0.5, 0.5, -0.5},  {-0.5, -0.5, -0.5}, {0.5, -0.5, -0.5},
                            {0.5, 0.5, 0.5},   {-0.5, 0.5, 0.5},   {-0.5, -0.5, 0.5},  {0.5, -0.5, 0.5}};
  for (int i = 0; i < 8; ++i) CHECK((c[i] - expected[i]).norm() < 1e-15);

  const auto r = box_corners(OrientedBox::make(Vec3::Zero(), 4, 2, 1, kPi / 2));
  double xmax = 0, ymax = 0;
  for (const auto& p : r) {
    xmax = std::max(xmax, std::abs(p.x()));
    ymax = std::max(ymax, std::abs(p.y()));
  }
  CHECK(xmax == doctest::Approx(1.0));
  CHECK(ymax == doctest::Approx(2.0));
}

TEST_CASE("box_corners centroid and edge lengths") {
  std::mt19937_64 rng(17);
  std::uniform_real_distribution<double> dim(0.1, 6), yaw(-kPi, kPi);
  for (int i = 0; i < 500; ++i) {
    const OrientedBox b = OrientedBox::make(random_vec(rng, -50, 50), dim(rng), dim(rng), dim(rng), yaw(rng));
    const auto c = box_corners(b);
    Vec3 mean = Vec3::Zero();
    for (const auto& p : c) mean += p / 8.0;
    CHECK((mean - b.center).norm() < 1e-12);
    // Edges of a cuboid: 4 of each dimension among the pairs differing in one local axis.
    std::vector<double> edges;
    const int pairs[12][2] = {{0, 1}, {1, 2}, {2, 3}, {3, 0}, {4, 5}, {5, 6},
                              {6, 7}, {7, 4}, {0, 4}, {1, 5}, {2, 6}, {3, 7}};
    for (const auto& p : pairs) edges.push_back((c[p[0]] - c[p[1]]).norm());
    std::vector<double> want{b.length, b.width, b.length, b.width, b.length, b.width,
                             b.length, b.width, b.height, b.height, b.height, b.height};
    std::sort(edges.begin(), edges.end());
    std::sort(want.begin(), want.end());
    for (int k = 0; k < 12; ++k) CHECK(std::abs(edges[k] - want[k]) < 1e-12);
  }
}

TEST_CASE("mesh validation") {
  TriangleMesh m{{Vec3(0, 0, 0), Vec3(1, 0, 0), Vec3(0, 1, 0)}, {{0, 1, 2}}};
  CHECK_NOTHROW(m.validate());
  m.faces.push_back({0, 1, 3});
  CHECK_THROWS_AS(m.validate(), InvalidArgument);
  m.faces.back() = {0, 1, 1};
  CHECK_THROWS_AS(m.validate(), InvalidArgument);
}

TEST_CASE("camera validation") {
  CHECK_THROWS_AS((PinholeCamera{0, 1, 0, 0, 10, 10}.validate()), InvalidArgument);
  CHECK_THROWS_AS((PinholeCamera{1, 1, 10, 0, 10, 10}.validate()), InvalidArgument);
  CHECK_NOTHROW((PinholeCamera{1, 1, 4.5, 4.5, 10, 10}.validate()));
}
