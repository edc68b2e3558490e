#include "lgsim/eval.hpp"

#include "lgsim/errors.hpp"
#include "lgsim/parallel.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <random>
#include <set>
#include <sstream>

namespace lgsim {

std::array<Vec2d, 4> bev_footprint(const OrientedBox& box) {
  const auto c = box_corners(box);
  return {{{c[0].x(), c[0].y()}, {c[1].x(), c[1].y()}, {c[2].x(), c[2].y()}, {c[3].x(), c[3].y()}}};
}

double polygon_area(const std::vector<Vec2d>& poly) {
  double a = 0.0;
  for (std::size_t i = 0; i < poly.size(); ++i) {
    const Vec2d& p = poly[i];
    const Vec2d& q = poly[(i + 1) % poly.size()];
    a += p.x * q.y - q.x * p.y;
  }
  return 0.5 * a;
}

namespace {

double cross(const Vec2d& a, const Vec2d& b, const Vec2d& p) {
  return (b.x - a.x) * (p.y - a.y) - (b.y - a.y) * (p.x - a.x);
}

Vec2d intersect(const Vec2d& p, const Vec2d& q, double dp, double dq) {
  const double t = dp / (dp - dq);
  return {p.x + t * (q.x - p.x), p.y + t * (q.y - p.y)};
}

}  // namespace

std::vector<Vec2d> clip_convex(const std::vector<Vec2d>& subject, const std::vector<Vec2d>& clip) {
  std::vector<Vec2d> out = subject;
  for (std::size_t e = 0; e < clip.size() && !out.empty(); ++e) {
    const Vec2d& a = clip[e];
    const Vec2d& b = clip[(e + 1) % clip.size()];
    std::vector<Vec2d> in;
    in.swap(out);
    for (std::size_t i = 0; i < in.size(); ++i) {
      const Vec2d& p = in[i];
      const Vec2d& q = in[(i + 1) % in.size()];
      const double dp = cross(a, b, p);
      const double dq = cross(a, b, q);
      if (dp >= 0.0) {
        out.push_back(p);
        if (dq < 0.0) out.push_back(intersect(p, q, dp, dq));
      } else if (dq >= 0.0) {
        out.push_back(intersect(p, q, dp, dq));
      }
    }
  }
  return out;
}

double bev_intersection_area(const OrientedBox& a, const OrientedBox& b) {
  const auto fa = bev_footprint(a);
  const auto fb = bev_footprint(b);
  const auto poly = clip_convex({fa.begin(), fa.end()}, {fb.begin(), fb.end()});
  return poly.size() < 3 ? 0.0 : std::max(0.0, polygon_area(poly));
}

double bev_iou(const OrientedBox& a, const OrientedBox& b) {
  const double inter = bev_intersection_area(a, b);
  const double uni = a.length * a.width + b.length * b.width - inter;
  return uni > 0.0 ? std::clamp(inter / uni, 0.0, 1.0) : 0.0;
}

double iou_3d(const OrientedBox& a, const OrientedBox& b) {
  const double z0 = std::max(a.center.z() - a.height / 2, b.center.z() - b.height / 2);
  const double z1 = std::min(a.center.z() + a.height / 2, b.center.z() + b.height / 2);
  if (z1 <= z0) return 0.0;
  const double inter = bev_intersection_area(a, b) * (z1 - z0);
  const double uni = a.volume() + b.volume() - inter;
  return uni > 0.0 ? std::clamp(inter / uni, 0.0, 1.0) : 0.0;
}

std::string to_string(Difficulty d) {
  switch (d) {
    case Difficulty::Easy: return "easy";
    case Difficulty::Moderate: return "moderate";
    case Difficulty::Hard: return "hard";
  }
  return "hard";
}

std::string to_string(IouMetric m) { return m == IouMetric::Bev ? "bev" : "3d"; }

void DifficultyThresholds::validate() const {
  if (!(moderate >= 0 && easy > moderate)) {
    throw BadThresholds("difficulty thresholds need easy > moderate >= 0, got " + std::to_string(easy) + " and " +
                        std::to_string(moderate));
  }
}

Difficulty assign_difficulty(int point_count, const DifficultyThresholds& t) {
  t.validate();
  if (point_count >= t.easy) return Difficulty::Easy;
  if (point_count >= t.moderate) return Difficulty::Moderate;
  return Difficulty::Hard;
}

GroundTruth GroundTruth::make(const OrientedBox& box, int point_count, const DifficultyThresholds& t) {
  if (point_count < 0) throw InvalidArgument("point count must be non-negative");
  return {box, point_count, assign_difficulty(point_count, t)};
}

FrameMatch match_frame(const FrameData& frame, Difficulty difficulty, IouMetric metric, double threshold) {
  std::vector<std::size_t> order(frame.detections.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return frame.detections[a].score > frame.detections[b].score;
  });

  FrameMatch out;
  std::vector<bool> counted(frame.ground_truth.size()), taken(frame.ground_truth.size(), false);
  for (std::size_t g = 0; g < counted.size(); ++g) {
    counted[g] = frame.ground_truth[g].difficulty <= difficulty;
    out.num_gt += counted[g];
  }
  for (std::size_t i : order) {
    const Detection& d = frame.detections[i];
    double best[2] = {-1.0, -1.0};
    std::size_t pick[2] = {0, 0};
    for (std::size_t g = 0; g < counted.size(); ++g) {
      if (taken[g]) continue;
      const auto& box = frame.ground_truth[g].box;
      const double iou = metric == IouMetric::Bev ? bev_iou(d.box, box) : iou_3d(d.box, box);
      const int slot = counted[g] ? 0 : 1;
      if (iou >= threshold && iou > best[slot]) {
        best[slot] = iou;
        pick[slot] = g;
      }
    }
    MatchOutcome m{d.score, MatchOutcome::Kind::FalsePositive};
    if (best[0] >= 0.0) {
      m.kind = MatchOutcome::Kind::TruePositive;
      taken[pick[0]] = true;
    } else if (best[1] >= 0.0) {
      m.kind = MatchOutcome::Kind::Ignored;
      taken[pick[1]] = true;
    }
    out.outcomes.push_back(m);
  }
  return out;
}

std::vector<PrPoint> match_and_pr(const std::vector<FrameData>& frames, Difficulty difficulty, IouMetric metric,
                                  double threshold, unsigned threads) {
  std::vector<FrameMatch> matches(frames.size());
  parallel_for(frames.size(), threads,
               [&](std::size_t i) { matches[i] = match_frame(frames[i], difficulty, metric, threshold); });

  struct Item {
    double score;
    std::size_t frame, index;
    bool tp;
  };
  std::vector<Item> items;
  int num_gt = 0;
  for (std::size_t f = 0; f < matches.size(); ++f) {
    num_gt += matches[f].num_gt;
    for (std::size_t k = 0; k < matches[f].outcomes.size(); ++k) {
      const auto& o = matches[f].outcomes[k];
      if (o.kind == MatchOutcome::Kind::Ignored) continue;
      items.push_back({o.score, f, k, o.kind == MatchOutcome::Kind::TruePositive});
    }
  }
  std::sort(items.begin(), items.end(), [](const Item& a, const Item& b) {
    if (a.score != b.score) return a.score > b.score;
    if (a.frame != b.frame) return a.frame < b.frame;
    return a.index < b.index;
  });

  std::vector<PrPoint> pr;
  if (num_gt == 0) return pr;
  int tp = 0, fp = 0;
  for (const auto& it : items) {
    (it.tp ? tp : fp) += 1;
    pr.push_back({double(tp) / num_gt, double(tp) / (tp + fp), it.score});
  }
  return pr;
}

double average_precision(const std::vector<PrPoint>& pr, int points) {
  if (points != 11 && points != 40) throw InvalidArgument("AP sampling must use 11 or 40 points");
  // Running mean, so a constant precision comes back unchanged.
  double mean = 0.0;
  int k = 0;
  for (int i = points == 11 ? 0 : 1; i <= (points == 11 ? 10 : 40); ++i) {
    const double r = points == 11 ? i / 10.0 : i / 40.0;
    double best = 0.0;
    for (const auto& p : pr)
      if (p.recall >= r) best = std::max(best, p.precision);
    mean += (best - mean) / ++k;
  }
  return 100.0 * mean;
}

const ApResult& EvalTable::at(IouMetric m, Difficulty d) const {
  return cells.at(static_cast<std::size_t>(m) * 3 + static_cast<std::size_t>(d));
}

namespace {

OrientedBox box_of(const LabelRecord& r) { return from_label(r); }

}  // namespace

DetectionSet read_detections(const fs::path& dir, const std::vector<std::string>& frame_ids,
                             const std::string& class_name) {
  DetectionSet out;
  for (const auto& id : frame_ids) {
    const fs::path file = dir / (id + ".txt");
    if (!fs::exists(file)) throw FrameMismatch("no detections for frame " + id + " (" + file.string() + ")");
    auto& dets = out[id];
    for (const auto& r : read_labels(file, true)) {
      if (r.type != class_name) continue;
      if (!r.score) throw MalformedLine(file.string() + ": detection without a score");
      if (!std::isfinite(*r.score)) throw MalformedLine(file.string() + ": non-finite score");
      dets.push_back({box_of(r), *r.score});
    }
  }
  return out;
}

void write_detections(const std::vector<Detection>& detections, const fs::path& file) {
  std::vector<LabelRecord> records;
  for (const auto& d : detections) {
    LabelRecord r = to_label(d.box, "Car");
    r.score = d.score;
    records.push_back(r);
  }
  write_labels(records, file);
}

std::vector<std::string> eval_frame_ids(const DatasetManifest& manifest, const EvalOptions& options) {
  std::vector<std::string> ids;
  for (const auto& f : manifest.frames)
    if (options.split.empty() || f.split == options.split) ids.push_back(f.id);
  return ids;
}

EvalTable evaluate_frames(const std::vector<FrameData>& frames, const EvalOptions& options) {
  options.thresholds.validate();
  if (!(options.iou_threshold > 0.0 && options.iou_threshold <= 1.0)) {
    throw InvalidArgument("IoU threshold must lie in (0, 1]");
  }
  EvalTable table;
  table.ap_points = options.ap_points;
  std::size_t dets = 0;
  for (const auto& f : frames) dets += f.detections.size();
  for (IouMetric m : {IouMetric::Bev, IouMetric::ThreeD}) {
    for (Difficulty d : {Difficulty::Easy, Difficulty::Moderate, Difficulty::Hard}) {
      ApResult r;
      r.metric = m;
      r.difficulty = d;
      r.num_detections = static_cast<int>(dets);
      for (const auto& f : frames)
        for (const auto& g : f.ground_truth) r.num_gt += g.difficulty <= d;
      r.pr = match_and_pr(frames, d, m, options.iou_threshold, options.threads);
      r.ap = average_precision(r.pr, options.ap_points);
      table.cells.push_back(std::move(r));
    }
  }
  return table;
}

std::vector<FrameGroundTruth> load_ground_truth(const DatasetManifest& manifest, const EvalOptions& options) {
  std::vector<FrameGroundTruth> out;
  for (const auto& f : manifest.frames) {
    if (!options.split.empty() && f.split != options.split) continue;
    FrameGroundTruth fg{f.id, {}};
    std::size_t k = 0;
    for (const auto& r : read_labels(manifest.root / f.labels)) {
      if (r.dont_care()) continue;
      if (k >= f.num_lidar_pts.size()) {
        throw MalformedFile("frame " + f.id + ": num_lidar_pts shorter than the label file");
      }
      const int count = f.num_lidar_pts[k++];
      if (r.type == options.class_name) fg.boxes.push_back(GroundTruth::make(box_of(r), count, options.thresholds));
    }
    out.push_back(std::move(fg));
  }
  return out;
}

DetectionSet jittered_ground_truth(const std::vector<FrameGroundTruth>& gt, double sigma, std::uint64_t seed) {
  if (!(sigma >= 0.0)) throw InvalidArgument("jitter sigma must be non-negative");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise(0.0, sigma);
  std::uniform_real_distribution<double> score(0.0, 1.0);
  DetectionSet out;
  for (const auto& f : gt) {
    auto& dets = out[f.id];
    for (const auto& g : f.boxes) {
      const OrientedBox& b = g.box;
      const Vec3 c = b.center + Vec3(noise(rng), noise(rng), noise(rng));
      const double l = std::max(0.05, b.length + noise(rng));
      const double w = std::max(0.05, b.width + noise(rng));
      const double h = std::max(0.05, b.height + noise(rng));
      const double yaw = b.yaw + noise(rng);
      dets.push_back({OrientedBox::make(c, l, w, h, yaw), score(rng)});
    }
  }
  return out;
}

EvalTable evaluate_dataset(const DatasetManifest& manifest, const DetectionSet& detections,
                           const EvalOptions& options) {
  const auto gt = load_ground_truth(manifest, options);
  std::set<std::string> wanted;
  for (const auto& f : gt) wanted.insert(f.id);
  for (const auto& [id, _] : detections) {
    if (!wanted.contains(id)) throw FrameMismatch("detections given for frame " + id + " which is not evaluated");
  }
  std::vector<FrameData> frames;
  for (const auto& f : gt) {
    auto it = detections.find(f.id);
    if (it == detections.end()) throw FrameMismatch("no detections for frame " + f.id);
    frames.push_back({f.boxes, it->second});
  }
  return evaluate_frames(frames, options);
}

std::string eval_to_csv(const EvalTable& t) {
  std::ostringstream out;
  out << "metric,difficulty,ap,num_gt,num_detections,ap_points\n";
  for (const auto& c : t.cells) {
    char ap[32];
    std::snprintf(ap, sizeof ap, "%.4f", c.ap);
    out << to_string(c.metric) << ',' << to_string(c.difficulty) << ',' << ap << ',' << c.num_gt << ','
        << c.num_detections << ',' << t.ap_points << '\n';
  }
  return out.str();
}

std::string eval_to_json(const EvalTable& t) {
  using nlohmann::json;
  json cells = json::array();
  for (const auto& c : t.cells) {
    json pr = json::array();
    for (const auto& p : c.pr) pr.push_back({p.recall, p.precision, p.score});
    cells.push_back({{"metric", to_string(c.metric)},
                     {"difficulty", to_string(c.difficulty)},
                     {"ap", c.ap},
                     {"num_gt", c.num_gt},
                     {"num_detections", c.num_detections},
                     {"pr", pr}});
  }
  json j = {{"schema_version", 1}, {"ap_points", t.ap_points}, {"cells", cells}};
  return j.dump(2) + "\n";
}

}  // namespace lgsim
