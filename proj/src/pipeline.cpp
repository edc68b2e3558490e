#include "lgsim/pipeline.hpp"

#include "lgsim/errors.hpp"

#include <algorithm>

namespace lgsim {
namespace {

VelodynePoint to_point(const Vec3& p) {
  return {static_cast<float>(p.x()), static_cast<float>(p.y()), static_cast<float>(p.z()), 1.0f};
}

fs::path absolute_clean(const fs::path& p) { return fs::absolute(p).lexically_normal(); }

std::string relative_to(const fs::path& target, const fs::path& base) {
  return absolute_clean(target).lexically_relative(absolute_clean(base)).generic_string();
}

std::uint64_t frame_seed(std::uint64_t seed, std::size_t frame) {
  std::uint64_t x = seed + 0x9e3779b97f4a7c15ULL * (frame + 1);
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Keeps clouds of other modes already written to the output tree.
void merge_existing(DatasetManifest& out, const DatasetManifest& existing) {
  if (existing.frames.size() != out.frames.size()) {
    throw FrameMismatch("output directory holds a manifest for a different dataset");
  }
  for (std::size_t i = 0; i < out.frames.size(); ++i) {
    if (existing.frames[i].id != out.frames[i].id) {
      throw FrameMismatch("output directory holds a manifest for a different dataset");
    }
    for (const auto& [m, path] : existing.frames[i].clouds) out.frames[i].clouds.emplace(m, path);
  }
  for (const auto& m : existing.modes) {
    if (std::find(out.modes.begin(), out.modes.end(), m) == out.modes.end()) out.modes.push_back(m);
  }
}

}  // namespace

LidarScan scan_from_velodyne(const VelodyneFrame& frame, const SensorRig& rig) {
  LidarScan scan;
  scan.sensor_to_world = rig.lidar.mount;
  scan.channels = static_cast<int>(rig.lidar.elevations.size());
  scan.max_range = rig.lidar.max_range;
  scan.returns.reserve(frame.points.size());
  for (const auto& p : frame.points) {
    const Vec3 v(p.x, p.y, p.z);
    scan.returns.push_back({v, 0, 0, v.norm()});
  }
  return scan;
}

VelodyneFrame make_cloud(GenerationMode mode, const LidarScan& scan, const DepthMap& depth,
                         const SensorRig& rig, const SamplerConfig& sampler) {
  VelodyneFrame out;
  const RigidTransform to_camera = rig.sensor_to_camera();
  switch (mode) {
    case GenerationMode::CarlaOrigin:
      for (const auto& r : scan.returns) {
        const Vec3 pc = to_camera.apply(r.point);
        if (pc.z() <= 0.0) continue;
        const Projection proj = project_point(rig.camera, pc);
        if (rig.camera.contains(proj.u, proj.v)) out.points.push_back(to_point(r.point));
      }
      break;
    case GenerationMode::DepthBp:
      for (const auto& p : backproject_depth(depth, rig.camera, rig.camera_pose)) {
        out.points.push_back(to_point(p.point));
      }
      break;
    case GenerationMode::LidarGuided:
      for (const auto& p : lidar_guided_sample(scan, depth, rig.camera, to_camera, sampler).points) {
        out.points.push_back(to_point(p.point));
      }
      break;
  }
  return out;
}

DatasetManifest simulate_dataset(const SceneSuite& suite, const fs::path& out_dir, unsigned threads) {
  DatasetManifest m;
  m.root = out_dir;
  m.sensors = suite.sensors;
  const SensorRig& rig = suite.sensors;
  const RigidTransform camera_to_world = rig.lidar.mount * rig.camera_pose;
  for (const auto& named : suite.scenes) {
    named.scene.validate();
    const LidarScan scan = raycast_lidar(named.scene, rig.lidar, threads);
    const DepthMap depth = render_depth(named.scene, rig.camera, camera_to_world, threads,
                                        rig.lidar.max_range);
    ManifestFrame f;
    f.id = named.id;
    f.split = named.split;
    f.scan = "scan/" + named.id + ".bin";
    f.depth = "depth/" + named.id + ".depth";
    f.labels = "label/" + named.id + ".txt";

    VelodyneFrame raw;
    for (const auto& r : scan.returns) raw.points.push_back(to_point(r.point));
    write_velodyne(raw, out_dir / f.scan);
    write_depth(depth, out_dir / f.depth);

    std::vector<LabelRecord> labels;
    for (const auto& gt : ground_truth(named.scene, scan)) {
      labels.push_back(to_label(gt.box, gt.label));
      f.num_lidar_pts.push_back(gt.points_inside);
    }
    write_labels(labels, out_dir / f.labels);
    m.frames.push_back(std::move(f));
  }
  save_manifest(m, out_dir / "manifest.json");
  return m;
}

DatasetManifest sample_dataset(const DatasetManifest& raw, GenerationMode mode,
                               const SamplerConfig& sampler, const fs::path& out_dir) {
  if (!raw.sensors) throw MissingInput("manifest has no sensor rig");
  const std::string mode_name = to_string(mode);
  const bool in_place = absolute_clean(raw.root) == absolute_clean(out_dir);

  DatasetManifest out = raw;
  out.root = out_dir;
  if (std::find(out.modes.begin(), out.modes.end(), mode_name) == out.modes.end()) {
    out.modes.push_back(mode_name);
  }
  for (std::size_t i = 0; i < out.frames.size(); ++i) {
    ManifestFrame& f = out.frames[i];
    if (f.scan.empty() || f.depth.empty()) {
      throw MissingInput("frame " + f.id + " has no raw scan or depth map");
    }
    const LidarScan scan = scan_from_velodyne(read_velodyne(raw.root / f.scan), *raw.sensors);
    const DepthMap depth = read_depth(raw.root / f.depth);
    SamplerConfig cfg = sampler;
    cfg.seed = frame_seed(sampler.seed, i);
    const std::string cloud = mode_name + "/" + f.id + ".bin";
    write_velodyne(make_cloud(mode, scan, depth, *raw.sensors, cfg), out_dir / cloud);
    f.clouds[mode_name] = cloud;

    if (!in_place) {
      const std::string labels = "label/" + f.id + ".txt";
      write_labels(read_labels(raw.root / f.labels), out_dir / labels);
      f.labels = labels;
      f.scan = relative_to(raw.root / f.scan, out_dir);
      f.depth = relative_to(raw.root / f.depth, out_dir);
    }
  }
  if (!in_place && fs::exists(out_dir / "manifest.json")) merge_existing(out, load_manifest(out_dir / "manifest.json"));
  save_manifest(out, out_dir / "manifest.json");
  return out;
}

DatasetManifest export_dataset(const SceneSuite& suite, const std::vector<GenerationMode>& modes,
                               const SamplerConfig& sampler, const fs::path& out_dir) {
  DatasetManifest m = simulate_dataset(suite, out_dir, sampler.threads);
  for (GenerationMode mode : modes) m = sample_dataset(m, mode, sampler, out_dir);
  return m;
}

}  // namespace lgsim
