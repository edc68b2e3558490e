#pragma once

// KITTI-compatible readers and writers, dataset manifests and the
// percentage split sampler.

#include "lgsim/geometry.hpp"
#include "lgsim/scene.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace lgsim {

namespace fs = std::filesystem;

// ---------------------------------------------------------------- velodyne

struct VelodynePoint {
  float x = 0, y = 0, z = 0, intensity = 0;
  friend bool operator==(const VelodynePoint&, const VelodynePoint&) = default;
};

struct VelodyneFrame {
  std::vector<VelodynePoint> points;
};

// Packed little-endian float32 (x, y, z, intensity), no header.
VelodyneFrame read_velodyne(const fs::path& path);
void write_velodyne(const VelodyneFrame& frame, const fs::path& path);

// ------------------------------------------------------------------ labels

struct LabelRecord {
  std::string type = "Car";
  double truncated = 0.0;
  int occluded = 0;
  double alpha = 0.0;
  std::array<double, 4> bbox{0.0, 0.0, 0.0, 0.0};  // left, top, right, bottom
  double h = 0.0, w = 0.0, l = 0.0;
  double x = 0.0, y = 0.0, z = 0.0;  // bottom-centre, camera frame
  double rotation_y = 0.0;
  std::optional<double> score;  // detections only

  bool dont_care() const { return type == "DontCare"; }
};

struct LabelMeta {
  double truncated = 0.0;
  int occluded = 0;
  std::array<double, 4> bbox{0.0, 0.0, 0.0, 0.0};
};

// Converts a sensor-frame box (x forward, y left, z up, centre-based) to the
// KITTI camera convention: camera x = -sensor y, camera y = -sensor z,
// camera z = sensor x; location is the bottom-face centre and
// rotation_y = -yaw - pi/2.
LabelRecord to_label(const OrientedBox& box, const std::string& type, const LabelMeta& meta = {});
OrientedBox from_label(const LabelRecord& record);

// 15 space-separated fields (16 with a score); reals use 6 fractional digits.
std::string format_label_line(const LabelRecord& record);
// Throws MalformedLine. Accepts 15 fields, or 16 when allow_score.
LabelRecord parse_label_line(const std::string& line, bool allow_score = false);

std::vector<LabelRecord> read_labels(const fs::path& path, bool allow_score = false);
void write_labels(const std::vector<LabelRecord>& records, const fs::path& path);

// --------------------------------------------------------------- depth maps

// "LGDEPTH1", u32 width, u32 height, then row-major little-endian float32
// depths with +inf where nothing was hit.
DepthMap read_depth(const fs::path& path);
void write_depth(const DepthMap& depth, const fs::path& path);
std::uintmax_t depth_file_size(int width, int height);

// ----------------------------------------------------------------- manifest

enum class GenerationMode { CarlaOrigin, DepthBp, LidarGuided };

std::string to_string(GenerationMode mode);
GenerationMode parse_generation_mode(const std::string& text);  // throws InvalidArgument

struct SensorRig {
  LidarConfig lidar = LidarConfig::hdl64_like();
  PinholeCamera camera;
  RigidTransform camera_pose;  // camera frame -> sensor frame

  RigidTransform sensor_to_camera() const { return camera_pose.inverse(); }
  // Camera looking along sensor +x, then rotated by yaw (about z) and pitch
  // (about y, positive looks down) and shifted by offset.
  static RigidTransform forward_camera_pose(double yaw, double pitch, const Vec3& offset);
  static SensorRig default_rig();
};

struct ManifestFrame {
  std::string id;
  std::string split = "train";
  std::string labels;                        // relative to the manifest root
  std::vector<int> num_lidar_pts;            // per non-DontCare label line
  std::string scan;                          // raw LiDAR scan, optional
  std::string depth;                         // depth map, optional
  std::map<std::string, std::string> clouds; // generation mode -> velodyne file
};

struct DatasetManifest {
  static constexpr int kSchemaVersion = 1;

  fs::path root;
  std::optional<SensorRig> sensors;
  std::vector<std::string> modes;
  std::vector<ManifestFrame> frames;

  // Throws InvalidArgument on duplicate ids.
  void validate_ids() const;
};

// Manifests are JSON; see README for the schema. Loading checks that every
// referenced file exists and has a size consistent with its format.
void save_manifest(const DatasetManifest& manifest, const fs::path& file);
DatasetManifest load_manifest(const fs::path& file);

struct SplitSpec {
  double percentage = 100.0;  // (0, 100]
  std::uint64_t seed = 0;
};

// Uniformly samples ceil(percentage / 100 * N) frames without replacement;
// the subset keeps manifest order.
DatasetManifest sample_split(const DatasetManifest& manifest, const SplitSpec& spec);

}  // namespace lgsim
