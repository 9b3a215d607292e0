#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <vector>

namespace flowbridge::geometry {

inline constexpr double kPi = 3.14159265358979323846;
inline constexpr double kTwoPi = 2.0 * kPi;

struct Vec3 {
  double x = 0.0, y = 0.0, z = 0.0;

  Vec3 operator+(const Vec3& o) const { return {x + o.x, y + o.y, z + o.z}; }
  Vec3 operator-(const Vec3& o) const { return {x - o.x, y - o.y, z - o.z}; }
  Vec3 operator*(double s) const { return {x * s, y * s, z * s}; }
  Vec3 operator/(double s) const { return {x / s, y / s, z / s}; }
  Vec3& operator+=(const Vec3& o) {
    x += o.x;
    y += o.y;
    z += o.z;
    return *this;
  }
  Vec3 operator-() const { return {-x, -y, -z}; }
};

inline Vec3 operator*(double s, const Vec3& v) { return v * s; }
inline double dot(const Vec3& a, const Vec3& b) { return a.x * b.x + a.y * b.y + a.z * b.z; }
inline Vec3 cross(const Vec3& a, const Vec3& b) {
  return {a.y * b.z - a.z * b.y, a.z * b.x - a.x * b.z, a.x * b.y - a.y * b.x};
}
inline double norm(const Vec3& v) { return std::sqrt(dot(v, v)); }
inline double distance(const Vec3& a, const Vec3& b) { return norm(a - b); }
inline Vec3 normalized(const Vec3& v) { return v / norm(v); }

using Frame = std::array<Vec3, 3>;

/// Maps any finite angle into [-pi, pi). Throws on non-finite input.
double wrap(double alpha);

/// Signed shortest angular displacement from x to y, in (-pi, pi].
double torus_log(double x, double y);

/// Exponential map on the circle: wrap(x + u).
double torus_exp(double x, double u);

/// Geodesic distance on the circle, |torus_log(x, y)|.
inline double torus_distance(double x, double y) { return std::abs(torus_log(x, y)); }

/// Polynomial decay scheduler (1-t)^k with exact boundary values.
/// Requires t in [0, 1] and k >= 1.
double kappa(double t, int k);

/// Time derivative of kappa: -k (1-t)^(k-1).
double kappa_dot(double t, int k);

/// Per-entry geometry of one chain link.
struct LinkGeometry {
  double bond_length = 1.5;      // > 0
  double bond_angle = 1.91063;   // in (0, pi)
};

/// Masked torsion chain. Masked entries carry no information: they do not
/// enter losses and are placed with a zero torsion during reconstruction.
struct AngleChain {
  std::vector<double> angles;         // wrapped to [-pi, pi)
  std::vector<uint8_t> mask;          // 1 = entry valid
  std::vector<LinkGeometry> links;    // same length as angles
  Frame frame{Vec3{-1.0, 1.0, 0.0}, Vec3{-1.0, 0.0, 0.0}, Vec3{0.0, 0.0, 0.0}};

  size_t size() const { return angles.size(); }
};

struct Scheduler {
  int k = 3;
  double operator()(double t) const { return kappa(t, k); }
};

/// Extends the frame (a, b, c) by one point at distance r from c, with bond
/// angle theta at c and dihedral phi about the b-c axis. Throws
/// DegenerateFrameError when the frame points are (nearly) collinear:
/// the normalized cross product must exceed 1e-10.
Vec3 nerf_place_atom(const Vec3& a, const Vec3& b, const Vec3& c, double r, double theta, double phi);

/// Sequentially places one point per chain entry starting from the seed frame.
std::vector<Vec3> chain_to_coords(const AngleChain& chain, const Frame& frame);

/// Measures (length, angle, dihedral) of every point against its sliding
/// frame; inverse of chain_to_coords for unmasked entries. The returned
/// chain has an all-true mask.
AngleChain coords_to_angles(const std::vector<Vec3>& points, const Frame& frame);

/// Interior angle at vertex b of the triangle (a, b, c), in [0, pi].
double measure_angle(const Vec3& a, const Vec3& b, const Vec3& c);

/// Signed dihedral of the chain a-b-c-d about the b-c axis, in (-pi, pi].
double measure_dihedral(const Vec3& a, const Vec3& b, const Vec3& c, const Vec3& d);

}  // namespace flowbridge::geometry
