#include "lgsim/scene_config.hpp"

#include "lgsim/errors.hpp"

#include <yaml-cpp/yaml.h>

#include <fstream>
#include <numbers>
#include <set>
#include <sstream>

namespace lgsim {
namespace {

constexpr double kDeg = std::numbers::pi / 180.0;

class Reader {
public:
  explicit Reader(std::string source) : source_(std::move(source)) {}

  [[noreturn]] void fail(const YAML::Node& node, const std::string& what) const {
    const int line = node.Mark().is_null() ? 0 : node.Mark().line + 1;
    throw ConfigError(source_, line, what);
  }

  void require_map(const YAML::Node& node, const std::string& what,
                   const std::set<std::string>& allowed) const {
    if (!node.IsMap()) fail(node, what + " must be a mapping");
    for (const auto& kv : node) {
      const auto key = kv.first.as<std::string>();
      if (!allowed.contains(key)) fail(kv.first, "unknown key '" + key + "' in " + what);
    }
  }

  template <typename T>
  T get(const YAML::Node& parent, const std::string& key) const {
    const YAML::Node n = parent[key];
    if (!n) fail(parent, "missing key '" + key + "'");
    return as<T>(n, key);
  }

  template <typename T>
  T get_or(const YAML::Node& parent, const std::string& key, T fallback) const {
    const YAML::Node n = parent[key];
    return n ? as<T>(n, key) : fallback;
  }

  template <typename T>
  T as(const YAML::Node& n, const std::string& key) const {
    try {
      return n.as<T>();
    } catch (const YAML::Exception&) {
      fail(n, "bad value for '" + key + "'");
    }
  }

  Vec3 vec3(const YAML::Node& n, const std::string& key) const {
    const auto v = as<std::vector<double>>(n, key);
    if (v.size() != 3) fail(n, "'" + key + "' needs three numbers");
    return {v[0], v[1], v[2]};
  }

  RigidTransform pose(const YAML::Node& n) const {
    require_map(n, "pose", {"translation", "yaw_deg", "pitch_deg", "roll_deg"});
    const Vec3 t = n["translation"] ? vec3(n["translation"], "translation") : Vec3::Zero();
    try {
      return RigidTransform::from_ypr(get_or(n, "yaw_deg", 0.0) * kDeg,
                                      get_or(n, "pitch_deg", 0.0) * kDeg,
                                      get_or(n, "roll_deg", 0.0) * kDeg, t);
    } catch (const Error& e) {
      fail(n, e.what());
    }
  }

  LidarConfig lidar(const YAML::Node& n) const {
    require_map(n, "lidar",
                {"channels", "elevation_min_deg", "elevation_max_deg", "elevations_deg",
                 "azimuth_step_deg", "max_range", "range_noise_sigma", "dropout", "mount"});
    LidarConfig c = SensorRig::default_rig().lidar;
    if (n["elevations_deg"]) {
      c.elevations.clear();
      for (double e : as<std::vector<double>>(n["elevations_deg"], "elevations_deg")) {
        c.elevations.push_back(e * kDeg);
      }
    } else if (n["channels"] || n["elevation_min_deg"] || n["elevation_max_deg"]) {
      const int channels = get_or(n, "channels", 64);
      if (channels < 1) fail(n, "channels must be >= 1");
      const double lo = get_or(n, "elevation_min_deg", -24.8) * kDeg;
      const double hi = get_or(n, "elevation_max_deg", 2.0) * kDeg;
      c.elevations.clear();
      for (int i = 0; i < channels; ++i) {
        c.elevations.push_back(channels == 1 ? lo : lo + (hi - lo) * i / (channels - 1));
      }
    }
    c.azimuth_step = get_or(n, "azimuth_step_deg", 0.2) * kDeg;
    c.max_range = get_or(n, "max_range", c.max_range);
    c.range_noise_sigma = get_or(n, "range_noise_sigma", c.range_noise_sigma);
    c.dropout = get_or(n, "dropout", c.dropout);
    if (n["mount"]) c.mount = pose(n["mount"]);
    try {
      c.validate();
    } catch (const Error& e) {
      fail(n, e.what());
    }
    return c;
  }

  void camera(const YAML::Node& n, SensorRig& rig) const {
    require_map(n, "camera", {"fx", "fy", "cx", "cy", "width", "height", "yaw_deg", "pitch_deg", "offset"});
    PinholeCamera& c = rig.camera;
    c.fx = get_or(n, "fx", c.fx);
    c.fy = get_or(n, "fy", c.fy);
    c.width = get_or(n, "width", c.width);
    c.height = get_or(n, "height", c.height);
    c.cx = get_or(n, "cx", (c.width - 1) / 2.0);
    c.cy = get_or(n, "cy", (c.height - 1) / 2.0);
    try {
      c.validate();
    } catch (const Error& e) {
      fail(n, e.what());
    }
    const Vec3 offset = n["offset"] ? vec3(n["offset"], "offset") : Vec3::Zero();
    rig.camera_pose = SensorRig::forward_camera_pose(get_or(n, "yaw_deg", 0.0) * kDeg,
                                                     get_or(n, "pitch_deg", 0.0) * kDeg, offset);
  }

  SceneObject object(const YAML::Node& n) const {
    require_map(n, "object", {"id", "class", "box", "mesh", "pose"});
    const auto id = get<std::string>(n, "id");
    const auto label = get<std::string>(n, "class");
    const RigidTransform p = n["pose"] ? pose(n["pose"]) : RigidTransform{};
    if (n["box"] && n["mesh"]) fail(n, "object '" + id + "' has both box and mesh");
    try {
      if (const YAML::Node b = n["box"]) {
        require_map(b, "box", {"length", "width", "height"});
        const double l = get<double>(b, "length"), w = get<double>(b, "width"), h = get<double>(b, "height");
        if (!(l > 0.0 && w > 0.0 && h > 0.0)) fail(b, "box dimensions must be positive");
        return SceneObject::box(id, label, OrientedBox::make(Vec3::Zero(), l, w, h, 0.0), p);
      }
      if (const YAML::Node m = n["mesh"]) {
        require_map(m, "mesh", {"vertices", "faces"});
        TriangleMesh mesh;
        const YAML::Node verts = m["vertices"];
        if (!verts || !verts.IsSequence()) fail(m, "mesh needs a 'vertices' list");
        for (const auto& v : verts) mesh.vertices.push_back(vec3(v, "vertex"));
        const YAML::Node faces = m["faces"];
        if (!faces || !faces.IsSequence()) fail(m, "mesh needs a 'faces' list");
        for (const auto& f : faces) {
          const auto idx = as<std::vector<int>>(f, "face");
          if (idx.size() != 3) fail(f, "faces need three vertex indices");
          mesh.faces.push_back({idx[0], idx[1], idx[2]});
        }
        return SceneObject::mesh(id, label, std::move(mesh), p);
      }
    } catch (const ConfigError&) {
      throw;
    } catch (const Error& e) {
      fail(n, e.what());
    }
    fail(n, "object '" + id + "' needs a box or a mesh");
  }

  NamedScene scene(const YAML::Node& n) const {
    require_map(n, "scene", {"id", "split", "ground", "objects"});
    NamedScene s;
    s.id = get<std::string>(n, "id");
    if (s.id.empty() || s.id.find_first_of("/\\ ") != std::string::npos) {
      fail(n, "scene id must be a plain file name");
    }
    s.split = get_or<std::string>(n, "split", "train");
    if (s.split != "train" && s.split != "val") fail(n, "split must be 'train' or 'val'");
    if (const YAML::Node g = n["ground"]) {
      require_map(g, "ground", {"height"});
      s.scene.ground = {true, get_or(g, "height", 0.0)};
    }
    if (const YAML::Node objs = n["objects"]) {
      if (!objs.IsSequence()) fail(objs, "'objects' must be a list");
      std::set<std::string> ids;
      for (const auto& o : objs) {
        SceneObject obj = object(o);
        if (!ids.insert(obj.id).second) fail(o, "duplicate object id '" + obj.id + "'");
        s.scene.objects.push_back(std::move(obj));
      }
    }
    return s;
  }

private:
  std::string source_;
};

}  // namespace

SceneSuite parse_scene_suite(const std::string& text, const std::string& source_name) {
  YAML::Node root;
  try {
    root = YAML::Load(text);
  } catch (const YAML::Exception& e) {
    throw ConfigError(source_name, e.mark.is_null() ? 0 : e.mark.line + 1, e.msg);
  }
  const Reader r(source_name);
  if (!root.IsMap()) throw ConfigError(source_name, 1, "scene file must be a mapping");
  r.require_map(root, "scene file", {"schema_version", "sensors", "scenes"});
  const int version = r.get<int>(root, "schema_version");
  if (version != 1) r.fail(root["schema_version"], "unsupported schema_version " + std::to_string(version));

  SceneSuite suite;
  if (const YAML::Node s = root["sensors"]) {
    r.require_map(s, "sensors", {"lidar", "camera"});
    if (s["lidar"]) suite.sensors.lidar = r.lidar(s["lidar"]);
    if (s["camera"]) r.camera(s["camera"], suite.sensors);
  }
  if (const YAML::Node scenes = root["scenes"]) {
    if (!scenes.IsSequence()) r.fail(scenes, "'scenes' must be a list");
    std::set<std::string> ids;
    for (const auto& n : scenes) {
      NamedScene s = r.scene(n);
      if (!ids.insert(s.id).second) r.fail(n, "duplicate scene id '" + s.id + "'");
      suite.scenes.push_back(std::move(s));
    }
  }
  return suite;
}

SceneSuite load_scene_suite(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw IoFailure("cannot open " + file.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_scene_suite(ss.str(), file.string());
}

}  // namespace lgsim
