#pragma once

// Dataset generation: simulate raw scans and depth maps, convert them into
// point clouds for each generation mode, and write KITTI-style trees.
//
// Layout under an output directory:
//   manifest.json
//   scan/<id>.bin      raw 360-degree scan (simulate)
//   depth/<id>.depth   depth map (simulate)
//   label/<id>.txt     KITTI labels
//   <mode>/<id>.bin    cloud per generation mode (sample / export)

#include "lgsim/dataset_io.hpp"
#include "lgsim/sampling.hpp"
#include "lgsim/scene_config.hpp"

#include <vector>

namespace lgsim {

// Reads back a scan file as a LidarScan in the sensor frame.
LidarScan scan_from_velodyne(const VelodyneFrame& frame, const SensorRig& rig);

// Cloud of one frame for `mode`. carla-origin keeps the scan returns that
// fall inside the depth camera's image, so all three modes cover the same view.
VelodyneFrame make_cloud(GenerationMode mode, const LidarScan& scan, const DepthMap& depth,
                         const SensorRig& rig, const SamplerConfig& sampler);

DatasetManifest simulate_dataset(const SceneSuite& suite, const fs::path& out_dir,
                                 unsigned threads = 1);

DatasetManifest sample_dataset(const DatasetManifest& raw, GenerationMode mode,
                               const SamplerConfig& sampler, const fs::path& out_dir);

DatasetManifest export_dataset(const SceneSuite& suite, const std::vector<GenerationMode>& modes,
                               const SamplerConfig& sampler, const fs::path& out_dir);

}  // namespace lgsim
