#include "lgsim/dataset_io.hpp"

#include "lgsim/errors.hpp"

#include <json.hpp>

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <numbers>
#include <random>
#include <sstream>
#include <unordered_set>

namespace lgsim {
namespace {

using json = nlohmann::json;

std::uint32_t to_little(std::uint32_t v) {
  if constexpr (std::endian::native == std::endian::little) {
    return v;
  } else {
    return ((v & 0xffu) << 24) | ((v & 0xff00u) << 8) | ((v >> 8) & 0xff00u) | (v >> 24);
  }
}

void put_f32(std::string& out, float f) {
  const std::uint32_t v = to_little(std::bit_cast<std::uint32_t>(f));
  char buf[4];
  std::memcpy(buf, &v, 4);
  out.append(buf, 4);
}

void put_u32(std::string& out, std::uint32_t u) {
  const std::uint32_t v = to_little(u);
  char buf[4];
  std::memcpy(buf, &v, 4);
  out.append(buf, 4);
}

std::uint32_t get_u32(const char* p) {
  std::uint32_t v;
  std::memcpy(&v, p, 4);
  return to_little(v);
}

float get_f32(const char* p) { return std::bit_cast<float>(get_u32(p)); }

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoFailure("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  if (in.bad()) throw IoFailure("read failed: " + path.string());
  return std::move(ss).str();
}

void write_file(const fs::path& path, const std::string& bytes) {
  if (path.has_parent_path()) {
    std::error_code ec;
    fs::create_directories(path.parent_path(), ec);
    if (ec) throw IoFailure("cannot create " + path.parent_path().string() + ": " + ec.message());
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoFailure("cannot open " + path.string() + " for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoFailure("write failed: " + path.string());
}

std::string fixed6(double v) {
  if (v == 0.0) v = 0.0;  // no "-0.000000"
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  std::string s(buf);
  if (s == "-0.000000") s = "0.000000";
  return s;
}

double parse_real(const std::string& field, const std::string& line) {
  double v = 0.0;
  const char* begin = field.data();
  const char* end = begin + field.size();
  auto [ptr, ec] = std::from_chars(begin, end, v);
  if (ec != std::errc() || ptr != end || !std::isfinite(v)) {
    throw MalformedLine("unparseable number '" + field + "' in: " + line);
  }
  return v;
}

const char kDepthMagic[8] = {'L', 'G', 'D', 'E', 'P', 'T', 'H', '1'};

}  // namespace

VelodyneFrame read_velodyne(const fs::path& path) {
  const std::string bytes = read_file(path);
  if (bytes.size() % 16 != 0) {
    throw MalformedFile(path.string() + ": length " + std::to_string(bytes.size()) +
                        " is not a multiple of 16");
  }
  VelodyneFrame frame;
  frame.points.resize(bytes.size() / 16);
  for (std::size_t i = 0; i < frame.points.size(); ++i) {
    const char* p = bytes.data() + 16 * i;
    frame.points[i] = {get_f32(p), get_f32(p + 4), get_f32(p + 8), get_f32(p + 12)};
  }
  return frame;
}

void write_velodyne(const VelodyneFrame& frame, const fs::path& path) {
  std::string bytes;
  bytes.reserve(frame.points.size() * 16);
  for (const auto& p : frame.points) {
    put_f32(bytes, p.x);
    put_f32(bytes, p.y);
    put_f32(bytes, p.z);
    put_f32(bytes, p.intensity);
  }
  write_file(path, bytes);
}

LabelRecord to_label(const OrientedBox& box, const std::string& type, const LabelMeta& meta) {
  LabelRecord r;
  r.type = type;
  r.truncated = meta.truncated;
  r.occluded = meta.occluded;
  r.bbox = meta.bbox;
  r.h = box.height;
  r.w = box.width;
  r.l = box.length;
  r.x = -box.center.y();
  r.y = -box.center.z() + 0.5 * box.height;
  r.z = box.center.x();
  r.rotation_y = normalize_angle(-box.yaw - 0.5 * std::numbers::pi);
  r.alpha = normalize_angle(r.rotation_y - std::atan2(r.x, r.z));
  return r;
}

OrientedBox from_label(const LabelRecord& r) {
  return OrientedBox::make(Vec3(r.z, -r.x, -(r.y - 0.5 * r.h)), r.l, r.w, r.h,
                           -r.rotation_y - 0.5 * std::numbers::pi);
}

std::string format_label_line(const LabelRecord& r) {
  std::string s = r.type;
  auto add = [&s](const std::string& f) {
    s += ' ';
    s += f;
  };
  add(fixed6(r.truncated));
  add(std::to_string(r.occluded));
  add(fixed6(r.alpha));
  for (double b : r.bbox) add(fixed6(b));
  for (double v : {r.h, r.w, r.l, r.x, r.y, r.z, r.rotation_y}) add(fixed6(v));
  if (r.score) add(fixed6(*r.score));
  return s;
}

LabelRecord parse_label_line(const std::string& line, bool allow_score) {
  std::istringstream ss(line);
  std::vector<std::string> f;
  for (std::string tok; ss >> tok;) f.push_back(tok);
  if (f.size() != 15 && !(allow_score && f.size() == 16)) {
    throw MalformedLine("expected " + std::string(allow_score ? "15 or 16" : "15") +
                        " fields, got " + std::to_string(f.size()) + ": " + line);
  }
  LabelRecord r;
  r.type = f[0];
  r.truncated = parse_real(f[1], line);
  const double occ = parse_real(f[2], line);
  if (occ != std::floor(occ)) throw MalformedLine("occlusion must be an integer: " + line);
  r.occluded = static_cast<int>(occ);
  r.alpha = parse_real(f[3], line);
  for (int i = 0; i < 4; ++i) r.bbox[i] = parse_real(f[4 + i], line);
  r.h = parse_real(f[8], line);
  r.w = parse_real(f[9], line);
  r.l = parse_real(f[10], line);
  r.x = parse_real(f[11], line);
  r.y = parse_real(f[12], line);
  r.z = parse_real(f[13], line);
  r.rotation_y = parse_real(f[14], line);
  if (f.size() == 16) r.score = parse_real(f[15], line);
  if (!r.dont_care() && !(r.h > 0 && r.w > 0 && r.l > 0)) {
    throw MalformedLine("non-positive dimensions: " + line);
  }
  return r;
}

std::vector<LabelRecord> read_labels(const fs::path& path, bool allow_score) {
  std::istringstream in(read_file(path));
  std::vector<LabelRecord> out;
  for (std::string line; std::getline(in, line);) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    out.push_back(parse_label_line(line, allow_score));
  }
  return out;
}

void write_labels(const std::vector<LabelRecord>& records, const fs::path& path) {
  std::string text;
  for (const auto& r : records) {
    if (!r.dont_care() && !(r.h > 0 && r.w > 0 && r.l > 0)) {
      throw InvalidArgument("label with non-positive dimensions");
    }
    text += format_label_line(r);
    text += '\n';
  }
  write_file(path, text);
}

std::uintmax_t depth_file_size(int width, int height) {
  return 16 + 4 * std::uintmax_t(width) * std::uintmax_t(height);
}

DepthMap read_depth(const fs::path& path) {
  const std::string bytes = read_file(path);
  if (bytes.size() < 16 || std::memcmp(bytes.data(), kDepthMagic, 8) != 0) {
    throw MalformedFile(path.string() + ": not a depth map");
  }
  const auto w = get_u32(bytes.data() + 8), h = get_u32(bytes.data() + 12);
  if (w > 1u << 16 || h > 1u << 16 || bytes.size() != depth_file_size(int(w), int(h))) {
    throw MalformedFile(path.string() + ": size does not match header");
  }
  DepthMap depth(static_cast<int>(w), static_cast<int>(h));
  for (std::size_t i = 0; i < depth.values.size(); ++i) {
    const float v = get_f32(bytes.data() + 16 + 4 * i);
    depth.values[i] = std::isinf(v) ? DepthMap::kNoHit : double(v);
  }
  return depth;
}

void write_depth(const DepthMap& depth, const fs::path& path) {
  std::string bytes(kDepthMagic, 8);
  put_u32(bytes, std::uint32_t(depth.width));
  put_u32(bytes, std::uint32_t(depth.height));
  for (double v : depth.values) put_f32(bytes, static_cast<float>(v));
  write_file(path, bytes);
}

std::string to_string(GenerationMode mode) {
  switch (mode) {
    case GenerationMode::CarlaOrigin: return "carla-origin";
    case GenerationMode::DepthBp: return "depth-bp";
    case GenerationMode::LidarGuided: return "lidar-guided";
  }
  return "?";
}

GenerationMode parse_generation_mode(const std::string& text) {
  for (auto m : {GenerationMode::CarlaOrigin, GenerationMode::DepthBp, GenerationMode::LidarGuided}) {
    if (to_string(m) == text) return m;
  }
  throw InvalidArgument("unknown generation mode '" + text + "'");
}

RigidTransform SensorRig::forward_camera_pose(double yaw, double pitch, const Vec3& offset) {
  Mat3 axes;
  // Columns: camera x (right), y (down), z (forward) in sensor coordinates.
  axes << 0, 0, 1,
         -1, 0, 0,
          0, -1, 0;
  const Mat3 r = (Eigen::AngleAxisd(yaw, Vec3::UnitZ()) * Eigen::AngleAxisd(pitch, Vec3::UnitY()))
                     .toRotationMatrix() * axes;
  return RigidTransform(r, offset);
}

SensorRig SensorRig::default_rig() {
  SensorRig rig;
  rig.lidar.mount = RigidTransform::from_yaw(0.0, Vec3(0, 0, 1.73));
  rig.camera = {400.0, 400.0, 159.5, 119.5, 320, 240};
  rig.camera_pose = forward_camera_pose(0.0, 0.0, Vec3::Zero());
  return rig;
}

void DatasetManifest::validate_ids() const {
  std::unordered_set<std::string> seen;
  for (const auto& f : frames) {
    if (!seen.insert(f.id).second) throw InvalidArgument("duplicate frame id '" + f.id + "'");
  }
}

namespace {

json transform_to_json(const RigidTransform& t) {
  json rot = json::array();
  for (int r = 0; r < 3; ++r) rot.push_back({t.rotation()(r, 0), t.rotation()(r, 1), t.rotation()(r, 2)});
  return {{"rotation", rot},
          {"translation", {t.translation().x(), t.translation().y(), t.translation().z()}}};
}

RigidTransform transform_from_json(const json& j) {
  Mat3 r;
  for (int i = 0; i < 3; ++i) {
    for (int k = 0; k < 3; ++k) r(i, k) = j.at("rotation").at(i).at(k).get<double>();
  }
  const auto& t = j.at("translation");
  return RigidTransform(r, Vec3(t.at(0).get<double>(), t.at(1).get<double>(), t.at(2).get<double>()));
}

json rig_to_json(const SensorRig& rig) {
  const auto& l = rig.lidar;
  const auto& c = rig.camera;
  return {{"lidar",
           {{"elevations", l.elevations},
            {"azimuth_step", l.azimuth_step},
            {"max_range", l.max_range},
            {"range_noise_sigma", l.range_noise_sigma},
            {"dropout", l.dropout},
            {"seed", l.seed},
            {"mount", transform_to_json(l.mount)}}},
          {"camera",
           {{"fx", c.fx}, {"fy", c.fy}, {"cx", c.cx}, {"cy", c.cy}, {"width", c.width}, {"height", c.height}}},
          {"camera_pose", transform_to_json(rig.camera_pose)}};
}

SensorRig rig_from_json(const json& j) {
  SensorRig rig;
  const auto& l = j.at("lidar");
  rig.lidar.elevations = l.at("elevations").get<std::vector<double>>();
  rig.lidar.azimuth_step = l.at("azimuth_step").get<double>();
  rig.lidar.max_range = l.at("max_range").get<double>();
  rig.lidar.range_noise_sigma = l.at("range_noise_sigma").get<double>();
  rig.lidar.dropout = l.at("dropout").get<double>();
  rig.lidar.seed = l.at("seed").get<std::uint64_t>();
  rig.lidar.mount = transform_from_json(l.at("mount"));
  const auto& c = j.at("camera");
  rig.camera = {c.at("fx").get<double>(), c.at("fy").get<double>(), c.at("cx").get<double>(),
                c.at("cy").get<double>(), c.at("width").get<int>(),  c.at("height").get<int>()};
  rig.camera.validate();
  rig.camera_pose = transform_from_json(j.at("camera_pose"));
  return rig;
}

void check_file(const fs::path& root, const std::string& rel, const std::string& what) {
  if (rel.empty()) return;
  const fs::path p = root / rel;
  std::error_code ec;
  const auto size = fs::file_size(p, ec);
  if (ec) throw MissingInput(what + " file missing: " + p.string());
  if (what == "cloud" || what == "scan") {
    if (size % 16 != 0) throw MalformedFile(p.string() + ": length is not a multiple of 16");
  } else if (what == "depth") {
    if (size < 16) throw MalformedFile(p.string() + ": truncated depth map");
    std::ifstream in(p, std::ios::binary);
    char header[16];
    in.read(header, 16);
    if (!in || std::memcmp(header, kDepthMagic, 8) != 0 ||
        size != depth_file_size(int(get_u32(header + 8)), int(get_u32(header + 12)))) {
      throw MalformedFile(p.string() + ": depth map size does not match header");
    }
  }
}

}  // namespace

void save_manifest(const DatasetManifest& m, const fs::path& file) {
  m.validate_ids();
  json frames = json::array();
  for (const auto& f : m.frames) {
    json jf = {{"id", f.id}, {"split", f.split}, {"labels", f.labels},
               {"num_lidar_pts", f.num_lidar_pts}, {"clouds", f.clouds}};
    if (!f.scan.empty()) jf["scan"] = f.scan;
    if (!f.depth.empty()) jf["depth"] = f.depth;
    frames.push_back(std::move(jf));
  }
  json j = {{"schema_version", DatasetManifest::kSchemaVersion}, {"modes", m.modes}, {"frames", frames}};
  if (m.sensors) j["sensors"] = rig_to_json(*m.sensors);
  write_file(file, j.dump(2) + "\n");
}

DatasetManifest load_manifest(const fs::path& file) {
  DatasetManifest m;
  m.root = file.parent_path();
  try {
    const json j = json::parse(read_file(file));
    const int version = j.at("schema_version").get<int>();
    if (version != DatasetManifest::kSchemaVersion) {
      throw MalformedFile(file.string() + ": unsupported schema_version " + std::to_string(version));
    }
    m.modes = j.at("modes").get<std::vector<std::string>>();
    if (j.contains("sensors")) m.sensors = rig_from_json(j.at("sensors"));
    for (const auto& jf : j.at("frames")) {
      ManifestFrame f;
      f.id = jf.at("id").get<std::string>();
      f.split = jf.at("split").get<std::string>();
      f.labels = jf.at("labels").get<std::string>();
      f.num_lidar_pts = jf.at("num_lidar_pts").get<std::vector<int>>();
      f.clouds = jf.at("clouds").get<std::map<std::string, std::string>>();
      f.scan = jf.value("scan", "");
      f.depth = jf.value("depth", "");
      m.frames.push_back(std::move(f));
    }
  } catch (const json::exception& e) {
    throw MalformedFile(file.string() + ": " + e.what());
  }
  m.validate_ids();
  for (const auto& f : m.frames) {
    check_file(m.root, f.labels, "labels");
    check_file(m.root, f.scan, "scan");
    check_file(m.root, f.depth, "depth");
    for (const auto& [mode, path] : f.clouds) check_file(m.root, path, "cloud");
  }
  return m;
}

DatasetManifest sample_split(const DatasetManifest& manifest, const SplitSpec& spec) {
  if (manifest.frames.empty()) throw EmptyManifest("cannot sample from an empty manifest");
  if (!(spec.percentage > 0.0 && spec.percentage <= 100.0)) {
    throw InvalidArgument("percentage must be in (0, 100]");
  }
  const std::size_t n = manifest.frames.size();
  const double exact = spec.percentage * double(n) / 100.0;
  // Tolerance keeps e.g. 1% of 6000 at 60 despite rounding in the product.
  auto k = static_cast<std::size_t>(std::ceil(exact - 1e-9 * std::max(1.0, exact)));
  k = std::clamp<std::size_t>(k, 1, n);

  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  std::mt19937_64 rng(spec.seed);
  // Partial Fisher-Yates.
  for (std::size_t i = 0; i < k; ++i) {
    const std::size_t j = i + std::uniform_int_distribution<std::size_t>(0, n - 1 - i)(rng);
    std::swap(idx[i], idx[j]);
  }
  idx.resize(k);
  std::sort(idx.begin(), idx.end());

  DatasetManifest out = manifest;
  out.frames.clear();
  for (std::size_t i : idx) out.frames.push_back(manifest.frames[i]);
  return out;
}

}  // namespace lgsim
