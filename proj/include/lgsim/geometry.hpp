#pragma once

// Geometric primitives shared by every other module.
//
// Frames:
//  * sensor / world frames are right-handed with +x forward, +y left, +z up;
//    boxes yaw about +z.
//  * the camera frame is +z forward, +x right, +y down. Pixel (u, v) is
//    (column, row); integer coordinates are pixel centres, so pixel (c, r)
//    covers [c - 0.5, c + 0.5) x [r - 0.5, r + 0.5).

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <array>
#include <compare>
#include <cstdint>
#include <optional>
#include <vector>

namespace lgsim {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

// Wraps an angle to (-pi, pi].
double normalize_angle(double radians);

class RigidTransform {
public:
  RigidTransform() = default;
  // Throws InvalidArgument unless rotation is orthonormal with det +1 (1e-9).
  RigidTransform(const Mat3& rotation, const Vec3& translation);

  static RigidTransform identity() { return {}; }
  static RigidTransform from_yaw(double yaw, const Vec3& translation = Vec3::Zero());
  // Intrinsic z-y-x (yaw, pitch, roll).
  static RigidTransform from_ypr(double yaw, double pitch, double roll,
                                 const Vec3& translation = Vec3::Zero());

  const Mat3& rotation() const { return rotation_; }
  const Vec3& translation() const { return translation_; }

  Vec3 apply(const Vec3& p) const { return rotation_ * p + translation_; }
  Vec3 apply_direction(const Vec3& d) const { return rotation_ * d; }

  // (a * b).apply(p) == a.apply(b.apply(p))
  RigidTransform operator*(const RigidTransform& rhs) const;
  RigidTransform inverse() const;

  // Heading of the rotated +x axis projected on the xy plane.
  double yaw() const;

private:
  Mat3 rotation_ = Mat3::Identity();
  Vec3 translation_ = Vec3::Zero();
};

struct PinholeCamera {
  double fx = 1.0, fy = 1.0;
  double cx = 0.0, cy = 0.0;
  int width = 1, height = 1;

  // Throws InvalidArgument on fx, fy <= 0, non-positive size or a principal
  // point outside [0, width) x [0, height).
  void validate() const;
  bool contains(double u, double v) const {
    return u >= -0.5 && u < width - 0.5 && v >= -0.5 && v < height - 0.5;
  }
};

struct Projection {
  double u, v, depth;
};

Projection project_point(const PinholeCamera& camera, const Vec3& point_in_camera);
Vec3 backproject_pixel(const PinholeCamera& camera, double u, double v, double depth);

struct Pixel {
  int x = 0;  // column
  int y = 0;  // row
  friend bool operator==(const Pixel&, const Pixel&) = default;
  // Lexicographic by (row, col).
  friend std::strong_ordering operator<=>(const Pixel& a, const Pixel& b) {
    if (auto c = a.y <=> b.y; c != 0) return c;
    return a.x <=> b.x;
  }
};

// Pixel whose footprint contains continuous image coordinate (u, v).
Pixel pixel_at(double u, double v);

inline std::int64_t squared_distance(const Pixel& a, const Pixel& b) {
  const std::int64_t dx = a.x - b.x, dy = a.y - b.y;
  return dx * dx + dy * dy;
}

struct OrientedBox {
  Vec3 center = Vec3::Zero();
  double length = 1.0;  // along the heading
  double width = 1.0;
  double height = 1.0;
  double yaw = 0.0;

  // Builds a box with yaw wrapped to (-pi, pi]; throws InvalidArgument on
  // non-positive dimensions.
  static OrientedBox make(const Vec3& center, double length, double width,
                          double height, double yaw);

  // Box-local frame (axes along length/width/height, origin at centre).
  RigidTransform local_to_world() const {
    return RigidTransform::from_yaw(yaw, center);
  }
  bool contains_strictly(const Vec3& p) const;
  double volume() const { return length * width * height; }
};

// Corner order: bottom face (z = -h/2) then top face (z = +h/2); within each
// face counter-clockwise seen from above, starting at local (+l/2, +w/2):
// (+,+) (-,+) (-,-) (+,-).
std::array<Vec3, 8> box_corners(const OrientedBox& box);

class Ray {
public:
  // Normalises `direction`; throws InvalidArgument on a zero direction.
  Ray(const Vec3& origin, const Vec3& direction);
  const Vec3& origin() const { return origin_; }
  const Vec3& direction() const { return direction_; }
  Vec3 at(double t) const { return origin_ + t * direction_; }

private:
  Vec3 origin_;
  Vec3 direction_;
};

using Triangle = std::array<Vec3, 3>;

std::optional<double> ray_triangle_intersect(const Ray& ray, const Triangle& tri);
std::optional<double> ray_box_intersect(const Ray& ray, const OrientedBox& box);

struct TriangleMesh {
  std::vector<Vec3> vertices;
  std::vector<std::array<int, 3>> faces;

  // Throws InvalidArgument on out-of-range indices or zero-area faces.
  void validate() const;
  Triangle triangle(std::size_t face) const {
    const auto& f = faces[face];
    return {vertices[f[0]], vertices[f[1]], vertices[f[2]]};
  }
};

std::optional<double> ray_mesh_intersect(const Ray& ray, const TriangleMesh& mesh);

}  // namespace lgsim
