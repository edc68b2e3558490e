#include "lgsim/geometry.hpp"

#include "lgsim/errors.hpp"

#include <cmath>
#include <limits>
#include <numbers>

namespace lgsim {

double normalize_angle(double radians) {
  constexpr double two_pi = 2.0 * std::numbers::pi;
  double a = std::fmod(radians, two_pi);
  if (a <= -std::numbers::pi) a += two_pi;
  if (a > std::numbers::pi) a -= two_pi;
  return a;
}

RigidTransform::RigidTransform(const Mat3& rotation, const Vec3& translation)
    : rotation_(rotation), translation_(translation) {
  const double ortho_err = (rotation * rotation.transpose() - Mat3::Identity()).cwiseAbs().maxCoeff();
  if (!(ortho_err <= 1e-9) || std::abs(rotation.determinant() - 1.0) > 1e-9) {
    throw InvalidArgument("rotation is not a proper orthonormal matrix");
  }
  if (!translation.allFinite()) throw InvalidArgument("translation is not finite");
}

RigidTransform RigidTransform::from_yaw(double yaw, const Vec3& translation) {
  return from_ypr(yaw, 0.0, 0.0, translation);
}

RigidTransform RigidTransform::from_ypr(double yaw, double pitch, double roll,
                                        const Vec3& translation) {
  const Mat3 r = (Eigen::AngleAxisd(yaw, Vec3::UnitZ()) *
                  Eigen::AngleAxisd(pitch, Vec3::UnitY()) *
                  Eigen::AngleAxisd(roll, Vec3::UnitX()))
                     .toRotationMatrix();
  return RigidTransform(r, translation);
}

RigidTransform RigidTransform::operator*(const RigidTransform& rhs) const {
  RigidTransform out;
  out.rotation_ = rotation_ * rhs.rotation_;
  out.translation_ = rotation_ * rhs.translation_ + translation_;
  return out;
}

RigidTransform RigidTransform::inverse() const {
  RigidTransform out;
  out.rotation_ = rotation_.transpose();
  out.translation_ = -(out.rotation_ * translation_);
  return out;
}

double RigidTransform::yaw() const { return std::atan2(rotation_(1, 0), rotation_(0, 0)); }

void PinholeCamera::validate() const {
  if (!(fx > 0.0) || !(fy > 0.0)) throw InvalidArgument("focal lengths must be positive");
  if (width <= 0 || height <= 0) throw InvalidArgument("image size must be positive");
  if (!(cx >= 0.0 && cx < width) || !(cy >= 0.0 && cy < height)) {
    throw InvalidArgument("principal point outside the image");
  }
}

Projection project_point(const PinholeCamera& camera, const Vec3& p) {
  if (!(p.z() > 0.0)) throw BehindCamera("point has z <= 0 in the camera frame");
  return {camera.fx * p.x() / p.z() + camera.cx, camera.fy * p.y() / p.z() + camera.cy, p.z()};
}

Vec3 backproject_pixel(const PinholeCamera& camera, double u, double v, double depth) {
  if (!(depth > 0.0)) throw NonPositiveDepth("depth must be positive");
  return {(u - camera.cx) * depth / camera.fx, (v - camera.cy) * depth / camera.fy, depth};
}

Pixel pixel_at(double u, double v) {
  return {static_cast<int>(std::floor(u + 0.5)), static_cast<int>(std::floor(v + 0.5))};
}

OrientedBox OrientedBox::make(const Vec3& center, double length, double width,
                              double height, double yaw) {
  if (!(length > 0.0) || !(width > 0.0) || !(height > 0.0)) {
    throw InvalidArgument("box dimensions must be positive");
  }
  if (!center.allFinite() || !std::isfinite(yaw)) throw InvalidArgument("box pose is not finite");
  return {center, length, width, height, normalize_angle(yaw)};
}

bool OrientedBox::contains_strictly(const Vec3& p) const {
  const Vec3 q = local_to_world().inverse().apply(p);
  return std::abs(q.x()) < 0.5 * length && std::abs(q.y()) < 0.5 * width &&
         std::abs(q.z()) < 0.5 * height;
}

std::array<Vec3, 8> box_corners(const OrientedBox& box) {
  const double hl = 0.5 * box.length, hw = 0.5 * box.width, hh = 0.5 * box.height;
  constexpr int sx[4] = {1, -1, -1, 1};
  constexpr int sy[4] = {1, 1, -1, -1};
  const RigidTransform pose = box.local_to_world();
  std::array<Vec3, 8> out;
  for (int face = 0; face < 2; ++face) {
    const double z = face == 0 ? -hh : hh;
    for (int k = 0; k < 4; ++k) out[face * 4 + k] = pose.apply(Vec3(sx[k] * hl, sy[k] * hw, z));
  }
  return out;
}

Ray::Ray(const Vec3& origin, const Vec3& direction) : origin_(origin) {
  const double n = direction.norm();
  if (!(n > 0.0) || !std::isfinite(n)) throw InvalidArgument("ray direction must be non-zero");
  direction_ = direction / n;
}

// Moller-Trumbore.
std::optional<double> ray_triangle_intersect(const Ray& ray, const Triangle& tri) {
  const Vec3 e1 = tri[1] - tri[0];
  const Vec3 e2 = tri[2] - tri[0];
  const Vec3 p = ray.direction().cross(e2);
  const double det = e1.dot(p);
  if (std::abs(det) <= 1e-14 * e1.norm() * e2.norm()) return std::nullopt;
  const double inv_det = 1.0 / det;
  const Vec3 s = ray.origin() - tri[0];
  const double u = s.dot(p) * inv_det;
  if (u < 0.0 || u > 1.0) return std::nullopt;
  const Vec3 q = s.cross(e1);
  const double v = ray.direction().dot(q) * inv_det;
  if (v < 0.0 || u + v > 1.0) return std::nullopt;
  const double t = e2.dot(q) * inv_det;
  if (!(t > 0.0)) return std::nullopt;
  return t;
}

std::optional<double> ray_box_intersect(const Ray& ray, const OrientedBox& box) {
  const RigidTransform to_local = box.local_to_world().inverse();
  const Vec3 o = to_local.apply(ray.origin());
  const Vec3 d = to_local.apply_direction(ray.direction());
  const Vec3 half(0.5 * box.length, 0.5 * box.width, 0.5 * box.height);

  double t_near = -std::numeric_limits<double>::infinity();
  double t_far = std::numeric_limits<double>::infinity();
  for (int axis = 0; axis < 3; ++axis) {
    if (d[axis] == 0.0) {
      if (o[axis] < -half[axis] || o[axis] > half[axis]) return std::nullopt;
      continue;
    }
    double t0 = (-half[axis] - o[axis]) / d[axis];
    double t1 = (half[axis] - o[axis]) / d[axis];
    if (t0 > t1) std::swap(t0, t1);
    t_near = std::max(t_near, t0);
    t_far = std::min(t_far, t1);
    if (t_near > t_far) return std::nullopt;
  }
  if (t_near > 0.0) return t_near;
  if (t_far > 0.0) return t_far;
  return std::nullopt;
}

void TriangleMesh::validate() const {
  const int n = static_cast<int>(vertices.size());
  for (const auto& v : vertices) {
    if (!v.allFinite()) throw InvalidArgument("mesh vertex is not finite");
  }
  for (std::size_t i = 0; i < faces.size(); ++i) {
    for (int idx : faces[i]) {
      if (idx < 0 || idx >= n) throw InvalidArgument("mesh face index out of range");
    }
    const Triangle t = triangle(i);
    if (!((t[1] - t[0]).cross(t[2] - t[0]).norm() > 0.0)) {
      throw InvalidArgument("mesh face " + std::to_string(i) + " is degenerate");
    }
  }
}

std::optional<double> ray_mesh_intersect(const Ray& ray, const TriangleMesh& mesh) {
  std::optional<double> best;
  for (std::size_t i = 0; i < mesh.faces.size(); ++i) {
    if (auto t = ray_triangle_intersect(ray, mesh.triangle(i)); t && (!best || *t < *best)) {
      best = t;
    }
  }
  return best;
}

}  // namespace lgsim
