#pragma once

// YAML scene files: sensor rig plus a list of scenes. Schema (version 1):
//
//   schema_version: 1
//   sensors:                      # optional, defaults to SensorRig::default_rig()
//     lidar:
//       channels: 64              # elevations uniform in [min, max] ...
//       elevation_min_deg: -24.8
//       elevation_max_deg: 2.0
//       elevations_deg: [...]     # ... or listed explicitly
//       azimuth_step_deg: 0.2
//       max_range: 120.0
//       range_noise_sigma: 0.0
//       dropout: 0.0
//       mount: {translation: [0, 0, 1.73], yaw_deg: 0}
//     camera: {fx: 400, fy: 400, cx: 159.5, cy: 119.5, width: 320, height: 240,
//              yaw_deg: 0, pitch_deg: 0, offset: [0, 0, 0]}
//   scenes:
//     - id: "000000"
//       split: train              # optional
//       ground: {height: 0.0}     # optional; absent means no ground plane
//       objects:
//         - id: car-1
//           class: Car
//           box: {length: 4.2, width: 1.8, height: 1.5}   # centred on the pose
//           pose: {translation: [12, 2, 0.75], yaw_deg: 30}
//         - id: ramp
//           class: Static
//           mesh: {vertices: [[0, 0, 0], ...], faces: [[0, 1, 2], ...]}
//
// Poses accept yaw_deg, pitch_deg and roll_deg. Unknown keys are rejected.

#include "lgsim/dataset_io.hpp"
#include "lgsim/scene.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace lgsim {

struct NamedScene {
  std::string id;
  std::string split = "train";
  Scene scene;
};

struct SceneSuite {
  SensorRig sensors = SensorRig::default_rig();
  std::vector<NamedScene> scenes;
};

// Throws ConfigError carrying the offending line.
SceneSuite parse_scene_suite(const std::string& text, const std::string& source_name);
SceneSuite load_scene_suite(const std::filesystem::path& file);

}  // namespace lgsim
