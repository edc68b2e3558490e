#pragma once

// KITTI-style evaluation of Car detections: rotated BEV and 3D IoU, greedy
// matching, interpolated AP and point-count difficulty bins.

#include "lgsim/dataset_io.hpp"
#include "lgsim/geometry.hpp"

#include <array>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace lgsim {

struct Vec2d {
  double x = 0.0, y = 0.0;
};

// Footprint corners, counter-clockwise.
std::array<Vec2d, 4> bev_footprint(const OrientedBox& box);

// Signed area, positive for counter-clockwise polygons.
double polygon_area(const std::vector<Vec2d>& poly);

// Clips `subject` against the convex counter-clockwise polygon `clip`.
std::vector<Vec2d> clip_convex(const std::vector<Vec2d>& subject, const std::vector<Vec2d>& clip);

double bev_intersection_area(const OrientedBox& a, const OrientedBox& b);
double bev_iou(const OrientedBox& a, const OrientedBox& b);
double iou_3d(const OrientedBox& a, const OrientedBox& b);

enum class Difficulty { Easy = 0, Moderate = 1, Hard = 2 };
enum class IouMetric { Bev = 0, ThreeD = 1 };

std::string to_string(Difficulty d);
std::string to_string(IouMetric m);

struct DifficultyThresholds {
  int easy = 100;
  int moderate = 20;
  void validate() const;  // throws BadThresholds unless easy > moderate >= 0
};

// easy if count >= t_easy, moderate if count >= t_mod, otherwise hard.
Difficulty assign_difficulty(int point_count, const DifficultyThresholds& t = {});

struct Detection {
  OrientedBox box;
  double score = 0.0;
};

struct GroundTruth {
  OrientedBox box;
  int point_count = 0;
  Difficulty difficulty = Difficulty::Hard;

  static GroundTruth make(const OrientedBox& box, int point_count, const DifficultyThresholds& t = {});
};

struct FrameData {
  std::vector<GroundTruth> ground_truth;
  std::vector<Detection> detections;
};

struct PrPoint {
  double recall = 0.0;
  double precision = 0.0;
  double score = 0.0;
};

struct MatchOutcome {
  enum class Kind { TruePositive, FalsePositive, Ignored };
  double score = 0.0;
  Kind kind = Kind::FalsePositive;
};

// Greedy matching in descending score order (ties keep input order). A
// detection takes the highest-IoU unmatched GT at IoU >= threshold among GTs
// no harder than `difficulty`; failing that, a match against a harder GT makes
// it Ignored; otherwise it is a false positive. Returns one outcome per
// detection in processing order and the number of counted GTs.
struct FrameMatch {
  std::vector<MatchOutcome> outcomes;
  int num_gt = 0;
};
FrameMatch match_frame(const FrameData& frame, Difficulty difficulty, IouMetric metric,
                       double threshold = 0.7);

// PR staircase over frames (detections merged by descending score).
std::vector<PrPoint> match_and_pr(const std::vector<FrameData>& frames, Difficulty difficulty,
                                  IouMetric metric, double threshold = 0.7, unsigned threads = 1);

// Interpolated AP in percent. 11 points samples recall {0, 0.1, ..., 1};
// 40 points samples {1/40, ..., 1}.
double average_precision(const std::vector<PrPoint>& pr, int points = 11);

struct ApResult {
  IouMetric metric = IouMetric::Bev;
  Difficulty difficulty = Difficulty::Easy;
  int num_gt = 0;
  int num_detections = 0;
  double ap = 0.0;
  std::vector<PrPoint> pr;
};

struct EvalOptions {
  DifficultyThresholds thresholds;
  double iou_threshold = 0.7;
  int ap_points = 11;
  std::string split;  // empty: all frames
  std::string class_name = "Car";
  unsigned threads = 1;
};

struct EvalTable {
  std::vector<ApResult> cells;  // metric-major: BEV easy, moderate, hard, then 3D
  int ap_points = 11;
  const ApResult& at(IouMetric m, Difficulty d) const;
};

using DetectionSet = std::map<std::string, std::vector<Detection>>;

// Reads <dir>/<frame id>.txt for every id; lines are KITTI labels with a
// trailing score. Throws FrameMismatch when a file is missing.
DetectionSet read_detections(const fs::path& dir, const std::vector<std::string>& frame_ids,
                             const std::string& class_name = "Car");
void write_detections(const std::vector<Detection>& detections, const fs::path& file);

// Ids of the manifest frames selected by options.split.
std::vector<std::string> eval_frame_ids(const DatasetManifest& manifest, const EvalOptions& options);

struct FrameGroundTruth {
  std::string id;
  std::vector<GroundTruth> boxes;
};

// Ground-truth boxes of options.class_name for the selected frames, with
// difficulty from the manifest's per-label point counts.
std::vector<FrameGroundTruth> load_ground_truth(const DatasetManifest& manifest, const EvalOptions& options);

// Ground truth perturbed by N(0, sigma) on centre, dimensions and yaw
// (radians), scored uniformly in (0, 1). Dimensions are kept at least 0.05.
DetectionSet jittered_ground_truth(const std::vector<FrameGroundTruth>& gt, double sigma, std::uint64_t seed);

// Throws FrameMismatch when detections name frames that are not evaluated or
// miss an evaluated frame.
EvalTable evaluate_dataset(const DatasetManifest& manifest, const DetectionSet& detections,
                           const EvalOptions& options = {});
EvalTable evaluate_frames(const std::vector<FrameData>& frames, const EvalOptions& options = {});

std::string eval_to_csv(const EvalTable& table);
std::string eval_to_json(const EvalTable& table);

}  // namespace lgsim
