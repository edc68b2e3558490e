#include <doctest.h>

#include "lgsim/dataset_io.hpp"
#include "lgsim/errors.hpp"
#include "lgsim/sampling.hpp"

#include "support.hpp"

#include <cmath>
#include <fstream>
#include <limits>
#include <random>
#include <sstream>

using namespace lgsim;

namespace {

GuidePointSet guides_at(int w, int h, const std::vector<Pixel>& px) {
  GuidePointSet g{w, h, {}};
  for (const auto& p : px) g.entries.push_back({double(p.x), double(p.y), Vec3(p.x, p.y, 1)});
  return g;
}

PseudoPointSet dense(int w, int h, const std::vector<Pixel>& holes = {}) {
  std::vector<PixelPoint> pts;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const Pixel p{x, y};
      if (std::find(holes.begin(), holes.end(), p) == holes.end()) pts.push_back({p, Vec3(x, y, 10)});
    }
  return PseudoPointSet(w, h, std::move(pts));
}

// Exact closed segment / pixel-square test in doubled integer coordinates.
bool touches(const Pixel& a, const Pixel& b, int x, int y) {
  const std::int64_t ax = 2 * a.x, ay = 2 * a.y, bx = 2 * b.x, by = 2 * b.y;
  const std::int64_t x0 = 2 * x - 1, x1 = 2 * x + 1, y0 = 2 * y - 1, y1 = 2 * y + 1;
  if (std::max(ax, bx) < x0 || std::min(ax, bx) > x1 || std::max(ay, by) < y0 || std::min(ay, by) > y1) return false;
  int pos = 0, neg = 0;
  for (auto [cx, cy] : {std::pair{x0, y0}, {x1, y0}, {x1, y1}, {x0, y1}}) {
    const std::int64_t c = (bx - ax) * (cy - ay) - (by - ay) * (cx - ax);
    pos += c > 0;
    neg += c < 0;
  }
  return !(pos == 4 || neg == 4);
}

std::vector<Pixel> oracle_line(const Pixel& a, const Pixel& b) {
  std::vector<Pixel> out;
  for (int y = std::min(a.y, b.y) - 1; y <= std::max(a.y, b.y) + 1; ++y)
    for (int x = std::min(a.x, b.x) - 1; x <= std::max(a.x, b.x) + 1; ++x)
      if (touches(a, b, x, y)) out.push_back({x, y});
  return make_pixel_set(out);
}

int border(const Pixel& p, int w, int h) { return std::min({p.x, p.y, w - 1 - p.x, h - 1 - p.y}); }

// Slow restatement of the walk: edge-deterministic start, nearest unvisited
// by (distance, row, col), restart at the smallest edge-most unvisited point.
PixelSet naive_walk(const PixelSet& ds, const PixelSet& aug, int w, int h, const DMinPolicy& policy,
                    double max_step) {
  PixelSet work = ds;
  work.insert(work.end(), aug.begin(), aug.end());
  work = make_pixel_set(work);
  std::vector<bool> visited(work.size(), false);
  auto is_lidar = [&](const Pixel& p) { return contains(ds, p); };
  auto dmin = [&](const Pixel& p) {
    if (policy.kind == DMinPolicy::Kind::Constant) return policy.value;
    double best = std::numeric_limits<double>::infinity();
    for (const auto& s : ds) best = std::min(best, std::sqrt(double(squared_distance(p, s))));
    return best;
  };
  auto restart = [&](bool first) {
    if (first) {
      int mind = std::numeric_limits<int>::max();
      for (const auto& p : work) mind = std::min(mind, border(p, w, h));
      for (std::size_t i = 0; i < work.size(); ++i)
        if (border(work[i], w, h) <= std::max(1, mind)) return i;
    }
    int best_bd = std::numeric_limits<int>::max();
    std::size_t pick = 0;
    for (std::size_t i = 0; i < work.size(); ++i) {
      if (!visited[i] && border(work[i], w, h) < best_bd) best_bd = border(work[i], w, h), pick = i;
    }
    return pick;
  };
  PixelSet kept;
  std::size_t head = restart(true);
  visited[head] = true;
  if (!is_lidar(work[head])) kept.push_back(work[head]);
  for (std::size_t left = work.size() - 1; left > 0; --left) {
    std::optional<std::size_t> nb;
    for (std::size_t i = 0; i < work.size(); ++i) {
      if (visited[i]) continue;
      const auto d2 = squared_distance(work[i], work[head]);
      if (double(d2) > max_step * max_step) continue;
      if (!nb || d2 < squared_distance(work[*nb], work[head])) nb = i;  // work is (row, col) sorted
    }
    if (!nb) {
      head = restart(false);
      visited[head] = true;
      if (!is_lidar(work[head])) kept.push_back(work[head]);
      continue;
    }
    visited[*nb] = true;
    const Pixel b = work[*nb];
    if (is_lidar(b)) {
      head = *nb;
      continue;
    }
    if (std::sqrt(double(squared_distance(work[head], b))) >= dmin(b)) {
      kept.push_back(b);
      head = *nb;
    }
  }
  return make_pixel_set(kept);
}

std::vector<Pixel> random_pixels(std::mt19937_64& rng, int w, int h, int n) {
  std::uniform_int_distribution<int> ux(0, w - 1), uy(0, h - 1);
  std::vector<Pixel> out;
  for (int i = 0; i < n; ++i) out.push_back({ux(rng), uy(rng)});
  return make_pixel_set(out);
}

const char* action_name(WalkStep::Action a) {
  switch (a) {
    case WalkStep::Action::Start: return "start";
    case WalkStep::Action::Restart: return "restart";
    case WalkStep::Action::Advance: return "advance";
    case WalkStep::Action::Keep: return "keep";
    case WalkStep::Action::Prune: return "prune";
  }
  return "?";
}

LidarScan street_scan(const Scene& s, const SensorRig& rig) { return raycast_lidar(s, rig.lidar); }

Scene street() {
  Scene s;
  s.ground = {true, 0.0};
  s.objects.push_back(SceneObject::box("a", "Car", OrientedBox::make(Vec3(12, 1, 0.8), 4.2, 1.8, 1.6, 0.3)));
  s.objects.push_back(SceneObject::box("b", "Car", OrientedBox::make(Vec3(22, -4, 0.75), 4.0, 1.7, 1.5, -0.7)));
  TriangleMesh wall{{Vec3(30, -20, 0), Vec3(30, 20, 0), Vec3(30, 20, 6), Vec3(30, -20, 6)}, {{0, 1, 2}, {0, 2, 3}}};
  s.objects.push_back(SceneObject::mesh("wall", "Static", wall));
  return s;
}

}  // namespace

TEST_CASE("project_scan_to_guides") {
  const PinholeCamera cam{100, 100, 31.5, 23.5, 64, 48};
  LidarScan scan;
  scan.returns.push_back({Vec3(0, 0, 5), 0, 0, 5});
  scan.returns.push_back({Vec3(0, 0, -5), 0, 1, 5});
  scan.returns.push_back({Vec3(100, 0, 1), 0, 2, 100});
  const GuidePointSet g = project_scan_to_guides(scan, cam, RigidTransform::identity());
  REQUIRE(g.entries.size() == 1);
  CHECK(g.entries[0].u == cam.cx);
  CHECK(g.entries[0].v == cam.cy);
  scan.returns.erase(scan.returns.begin());
  CHECK_THROWS_AS(project_scan_to_guides(scan, cam, RigidTransform::identity()), EmptyGuide);
}

TEST_CASE("guides re-backproject onto their source returns") {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(-30, 30), z(-5, 60);
  const SensorRig rig = SensorRig::default_rig();
  LidarScan scan;
  for (int i = 0; i < 5000; ++i) {
    const Vec3 p(z(rng), u(rng), u(rng) / 10);
    scan.returns.push_back({p, 0, i, p.norm()});
  }
  const RigidTransform to_cam = rig.sensor_to_camera();
  const GuidePointSet g = project_scan_to_guides(scan, rig.camera, to_cam);
  CHECK(g.entries.size() > 100);
  for (const auto& e : g.entries) {
    CHECK(rig.camera.contains(e.u, e.v));
    const Vec3 pc = to_cam.apply(e.source);
    const Vec3 back = rig.camera_pose.apply(backproject_pixel(rig.camera, e.u, e.v, pc.z()));
    CHECK((back - e.source).norm() < 1e-9);
  }
}

TEST_CASE("scan_direction") {
  auto g = guides_at(8, 8, {{0, 0}, {4, 0}});
  CHECK(scan_direction(g, 0) == Eigen::Vector2d(1, 0));
  g = guides_at(8, 8, {{0, 0}, {0, 3}});
  CHECK(scan_direction(g, 0) == Eigen::Vector2d(0, 1));
  g = guides_at(8, 8, {{2, 2}, {4, 2}, {2, 0}, {0, 2}});
  CHECK(scan_neighbor(g, 0) == 1);
  g = guides_at(8, 8, {{2, 2}, {2, 0}, {4, 2}});
  CHECK(scan_neighbor(g, 0) == 1);
  CHECK_THROWS_AS(scan_direction(guides_at(8, 8, {{1, 1}}), 0), DegenerateGuide);
  CHECK_THROWS_AS(scan_direction(guides_at(8, 8, {{1, 1}, {1, 1}}), 0), DegenerateGuide);
}

TEST_CASE("supercover_line matches the exact touch oracle") {
  for (int ax = 0; ax < 6; ++ax)
    for (int ay = 0; ay < 6; ++ay)
      for (int bx = 0; bx < 6; ++bx)
        for (int by = 0; by < 6; ++by) {
          const Pixel a{ax, ay}, b{bx, by};
          CHECK(make_pixel_set(supercover_line(a, b)) == oracle_line(a, b));
        }
  std::mt19937_64 rng(8);
  std::uniform_int_distribution<int> c(-40, 40);
  for (int i = 0; i < 300; ++i) {
    const Pixel a{c(rng), c(rng)}, b{c(rng), c(rng)};
    CHECK(make_pixel_set(supercover_line(a, b)) == oracle_line(a, b));
  }
}

TEST_CASE("build_d_aug") {
  const auto strip = guides_at(5, 1, {{0, 0}, {4, 0}});
  CHECK(build_d_aug(strip, dense(5, 1)) == PixelSet{{0, 0}, {1, 0}, {2, 0}, {3, 0}, {4, 0}});
  CHECK(build_d_aug(strip, dense(5, 1, {{2, 0}})) == PixelSet{{0, 0}, {1, 0}, {3, 0}, {4, 0}});
  CHECK_THROWS_AS(build_d_aug(guides_at(5, 1, {{0, 0}}), dense(5, 1)), DegenerateGuide);

  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 200; ++trial) {
    const auto px = random_pixels(rng, 5, 5, 2 + trial % 5);
    if (px.size() < 2) continue;
    const auto g = guides_at(5, 5, px);
    std::vector<Pixel> holes = random_pixels(rng, 5, 5, trial % 4);
    const auto d = dense(5, 5, holes);
    std::vector<Pixel> want;
    for (std::size_t i = 0; i < px.size(); ++i) {
      std::size_t nn = i == 0 ? 1 : 0;
      for (std::size_t j = 0; j < px.size(); ++j)
        if (j != i && squared_distance(px[j], px[i]) < squared_distance(px[nn], px[i])) nn = j;
      for (const auto& p : oracle_line(px[i], px[nn]))
        if (d.contains(p)) want.push_back(p);
    }
    CHECK(build_d_aug(g, d, 1 + trial % 3) == make_pixel_set(want));
  }
}

TEST_CASE("compute_d_min") {
  CHECK(compute_d_min({3, 3}, {{3, 3}}) == 0.0);
  CHECK(compute_d_min({2, 0}, {{0, 0}, {5, 0}}) == 2.0);
  CHECK_THROWS_AS(compute_d_min({0, 0}, {}), EmptySampledSet);
  std::mt19937_64 rng(6);
  for (int i = 0; i < 100; ++i) {
    const auto s = random_pixels(rng, 50, 30, 1 + i % 20);
    const auto q = random_pixels(rng, 50, 30, 20);
    for (const auto& p : q) {
      double best = 1e300;
      for (const auto& t : s) best = std::min(best, std::hypot(p.x - t.x, p.y - t.y));
      CHECK(compute_d_min(p, s) == doctest::Approx(best).epsilon(1e-15));
    }
  }
}

TEST_CASE("prune_traversal boundary cases") {
  SamplerConfig cfg;
  cfg.start = StartPolicy::EdgeDeterministic;
  CHECK(prune_traversal({{0, 0}, {4, 0}}, {}, {5, 1}, cfg).empty());
  CHECK_THROWS_AS(prune_traversal({}, {{1, 1}}, {5, 5}, cfg), EmptySampledSet);
  cfg.d_min = DMinPolicy::constant(0.0);
  const PixelSet ds{{0, 0}, {9, 9}}, aug{{0, 0}, {1, 1}, {5, 5}, {9, 9}, {3, 7}};
  CHECK(prune_traversal(ds, aug, {10, 10}, cfg) == PixelSet{{1, 1}, {5, 5}, {3, 7}});
}

TEST_CASE("hand-traced 5x1 strip") {
  std::ifstream in(testsupport::data_dir() / "golden" / "strip_trace.txt");
  REQUIRE(in);
  std::vector<std::string> want_steps;
  PixelSet want_kept;
  for (std::string line; std::getline(in, line);) {
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ss(line);
    std::string tag;
    ss >> tag;
    if (tag == "kept") {
      Pixel p;
      ss >> p.x >> p.y;
      want_kept.push_back(p);
    } else {
      want_steps.push_back(line);
    }
  }
  SamplerConfig cfg;
  cfg.start = StartPolicy::EdgeDeterministic;
  std::vector<WalkStep> trace;
  const PixelSet kept =
      prune_traversal({{0, 0}, {4, 0}}, {{0, 0}, {1, 0}, {2, 0}, {3, 0}, {4, 0}}, {5, 1}, cfg, &trace);
  CHECK(kept == want_kept);
  std::vector<std::string> got;
  for (const auto& s : trace) {
    std::ostringstream ss;
    ss << action_name(s.action) << ' ' << s.from.x << ' ' << s.from.y << ' ' << s.to.x << ' ' << s.to.y << ' '
       << s.distance << ' ' << s.d_min;
    got.push_back(ss.str());
  }
  CHECK(got == want_steps);
}

TEST_CASE("prune_traversal agrees with a slow restatement of the walk") {
  std::mt19937_64 rng(10);
  for (int trial = 0; trial < 300; ++trial) {
    const int w = 4 + trial % 17, h = 3 + trial % 11;
    const auto ds = random_pixels(rng, w, h, 1 + trial % 7);
    const auto aug = random_pixels(rng, w, h, trial % 40);
    SamplerConfig cfg;
    cfg.start = StartPolicy::EdgeDeterministic;
    if (trial % 3 == 1) cfg.d_min = DMinPolicy::constant(0.5 * (trial % 7));
    if (trial % 4 == 3) cfg.max_step = 2.5;
    CHECK(prune_traversal(ds, aug, {w, h}, cfg) == naive_walk(ds, aug, w, h, cfg.d_min, cfg.max_step));
  }
}

TEST_CASE("walk invariants") {
  std::mt19937_64 rng(12);
  for (int trial = 0; trial < 200; ++trial) {
    const int w = 30, h = 20;
    const auto ds = random_pixels(rng, w, h, 3 + trial % 30);
    const auto aug = random_pixels(rng, w, h, 20 + trial % 200);
    SamplerConfig cfg;
    cfg.seed = trial;
    if (trial % 2) cfg.d_min = DMinPolicy::constant(trial % 5);
    std::vector<WalkStep> trace;
    const PixelSet kept = prune_traversal(ds, aug, {w, h}, cfg, &trace);
    for (const auto& p : kept) {
      CHECK(contains(aug, p));
      CHECK_FALSE(contains(ds, p));
    }
    std::size_t visits = 0;
    for (const auto& s : trace) {
      ++visits;
      if (s.action == WalkStep::Action::Keep) CHECK(s.distance >= s.d_min);
      if (s.action == WalkStep::Action::Prune) CHECK(s.distance < s.d_min);
      if (s.action == WalkStep::Action::Keep || s.action == WalkStep::Action::Prune) {
        CHECK(s.d_min == (cfg.d_min.kind == DMinPolicy::Kind::Constant ? cfg.d_min.value : compute_d_min(s.to, ds)));
      }
    }
    PixelSet all = ds;
    all.insert(all.end(), aug.begin(), aug.end());
    CHECK(visits == make_pixel_set(all).size());
    CHECK(prune_traversal(ds, aug, {w, h}, cfg) == kept);
  }
}

TEST_CASE("start point is on the image edge") {
  std::mt19937_64 rng(14);
  for (int trial = 0; trial < 50; ++trial) {
    const auto ds = random_pixels(rng, 40, 30, 10);
    const auto aug = random_pixels(rng, 40, 30, 60);
    SamplerConfig cfg;
    cfg.seed = trial;
    std::vector<WalkStep> trace;
    prune_traversal(ds, aug, {40, 30}, cfg, &trace);
    const Pixel s = trace.front().to;
    int mind = 1000;
    for (const auto* set : {&ds, &aug})
      for (const auto& p : *set) mind = std::min(mind, border(p, 40, 30));
    CHECK(border(s, 40, 30) <= std::max(1, mind));
  }
}

TEST_CASE("lidar_guided_sample on a synthetic street") {
  const Scene s = street();
  const SensorRig rig = SensorRig::default_rig();
  const LidarScan scan = street_scan(s, rig);
  const DepthMap depth = render_depth(s, rig.camera, rig.lidar.mount * rig.camera_pose);
  const RigidTransform to_cam = rig.sensor_to_camera();
  SamplerConfig cfg;
  cfg.seed = 3;
  const SamplingDetail det = lidar_guided_sample_detailed(scan, depth, rig.camera, to_cam, cfg);
  const SampledCloud& P = det.cloud;
  const std::size_t L = det.guides.entries.size();

  CHECK(P.count(Provenance::FromLidar) == L);
  CHECK(P.count(Provenance::FromDepth) == det.kept.size());
  CHECK(L <= P.points.size());
  CHECK(P.points.size() <= det.depth_points.size());

  // Provenance consistency.
  for (std::size_t i = 0; i < L; ++i) CHECK(P.points[i].point == det.guides.entries[i].source);
  for (std::size_t i = L; i < P.points.size(); ++i) {
    const auto& p = P.points[i];
    const int x = int(p.u), y = int(p.v);
    const Vec3 want = rig.camera_pose.apply(backproject_pixel(rig.camera, x, y, depth.at(x, y)));
    CHECK((p.point - want).norm() < 1e-12);
  }

  // Row occupancy of P equals that of L.
  std::set<int> rows_l, rows_p;
  for (const auto& e : det.guides.entries) rows_l.insert(e.pixel().y);
  for (const auto& p : P.points) rows_p.insert(pixel_at(p.u, p.v).y);
  CHECK(rows_l == rows_p);

  // Thread count does not matter.
  cfg.threads = 8;
  const SamplingDetail again = lidar_guided_sample_detailed(scan, depth, rig.camera, to_cam, cfg);
  CHECK(again.kept == det.kept);
  CHECK(again.d_aug == det.d_aug);

  cfg.threads = 1;
  cfg.d_min = DMinPolicy::constant(0.0);
  const SamplingDetail zero = lidar_guided_sample_detailed(scan, depth, rig.camera, to_cam, cfg);
  std::size_t aug_only = 0;
  const PixelSet ds = zero.guides.pixels();
  for (const auto& p : zero.d_aug) aug_only += !contains(ds, p);
  CHECK(zero.cloud.points.size() == L + aug_only);
}

TEST_CASE("all-sentinel depth keeps exactly the guides") {
  const Scene s = street();
  const SensorRig rig = SensorRig::default_rig();
  const LidarScan scan = street_scan(s, rig);
  const DepthMap empty(rig.camera.width, rig.camera.height);
  const SampledCloud P = lidar_guided_sample(scan, empty, rig.camera, rig.sensor_to_camera(), {});
  const GuidePointSet L = project_scan_to_guides(scan, rig.camera, rig.sensor_to_camera());
  REQUIRE(P.points.size() == L.entries.size());
  for (std::size_t i = 0; i < P.points.size(); ++i) {
    CHECK(P.points[i].provenance == Provenance::FromLidar);
    CHECK(P.points[i].point == L.entries[i].source);
  }
}

TEST_CASE("density_stats") {
  SampledCloud two;
  two.points = {{Vec3::Zero(), 0, 0, Provenance::FromLidar}, {Vec3::Zero(), 3, 0, Provenance::FromDepth}};
  DensityStats s = density_stats(two);
  CHECK(s.min == 3.0);
  CHECK(s.mean == 3.0);
  SampledCloud grid;
  for (int y = 0; y < 10; ++y)
    for (int x = 0; x < 10; ++x) grid.points.push_back({Vec3::Zero(), 2.0 * x, 2.0 * y, Provenance::FromDepth});
  CHECK(density_stats(grid).min == 2.0);
  CHECK(density_stats(grid).p90 == 2.0);
  CHECK_THROWS_AS(density_stats(SampledCloud{}), TooFewPoints);

  std::mt19937_64 rng(16);
  std::uniform_real_distribution<double> u(0, 200);
  SampledCloud rnd;
  for (int i = 0; i < 400; ++i) rnd.points.push_back({Vec3::Zero(), u(rng), u(rng), Provenance::FromDepth});
  std::vector<double> nn;
  for (std::size_t i = 0; i < rnd.points.size(); ++i) {
    double best = 1e300;
    for (std::size_t j = 0; j < rnd.points.size(); ++j)
      if (j != i) best = std::min(best, std::hypot(rnd.points[i].u - rnd.points[j].u, rnd.points[i].v - rnd.points[j].v));
    nn.push_back(best);
  }
  std::sort(nn.begin(), nn.end());
  double mean = 0;
  for (double d : nn) mean += d / double(nn.size());
  s = density_stats(rnd);
  CHECK(s.min == doctest::Approx(nn.front()).epsilon(1e-12));
  CHECK(s.mean == doctest::Approx(mean).epsilon(1e-12));
  CHECK(s.p50 == doctest::Approx(nn[199]).epsilon(1e-12));
  CHECK(s.p10 == doctest::Approx(nn[39]).epsilon(1e-12));
  CHECK(s.p90 == doctest::Approx(nn[359]).epsilon(1e-12));
}
