#include "flowbridge/geometry.hpp"

#include <cmath>
#include <stdexcept>

#include "flowbridge/errors.hpp"

namespace flowbridge::geometry {

namespace {
constexpr double kCollinearTol = 1e-10;
}

double wrap(double alpha) {
  if (!std::isfinite(alpha)) throw std::domain_error("wrap: non-finite angle");
  double r = std::fmod(alpha + kPi, kTwoPi);
  if (r < 0.0) r += kTwoPi;
  if (r >= kTwoPi) r -= kTwoPi;
  return r - kPi;
}

double torus_log(double x, double y) {
  const double d = y - x;
  return std::atan2(std::sin(d), std::cos(d));
}

double torus_exp(double x, double u) { return wrap(x + u); }

double kappa(double t, int k) {
  if (!std::isfinite(t) || t < 0.0 || t > 1.0) throw std::domain_error("kappa: t outside [0,1]");
  if (k < 1) throw std::domain_error("kappa: k must be >= 1");
  return std::pow(1.0 - t, k);
}

double kappa_dot(double t, int k) {
  if (!std::isfinite(t) || t < 0.0 || t > 1.0) throw std::domain_error("kappa_dot: t outside [0,1]");
  if (k < 1) throw std::domain_error("kappa_dot: k must be >= 1");
  return -static_cast<double>(k) * std::pow(1.0 - t, k - 1);
}

Vec3 nerf_place_atom(const Vec3& a, const Vec3& b, const Vec3& c, double r, double theta, double phi) {
  const Vec3 ab = b - a;
  const Vec3 bc = c - b;
  const double nab = norm(ab), nbc = norm(bc);
  if (nab < 1e-12 || nbc < 1e-12) throw DegenerateFrameError("nerf_place_atom: coincident frame points");
  const Vec3 u_bc = bc / nbc;
  const Vec3 n_raw = cross(ab / nab, u_bc);
  const double nn = norm(n_raw);
  if (nn < kCollinearTol) throw DegenerateFrameError("nerf_place_atom: collinear frame");
  const Vec3 n = n_raw / nn;
  const Vec3 m = cross(n, u_bc);

  const double st = std::sin(theta), ct = std::cos(theta);
  const double sp = std::sin(phi), cp = std::cos(phi);
  return c + u_bc * (-r * ct) + m * (r * st * cp) + n * (r * st * sp);
}

std::vector<Vec3> chain_to_coords(const AngleChain& chain, const Frame& frame) {
  if (chain.mask.size() != chain.angles.size() || chain.links.size() != chain.angles.size())
    throw std::invalid_argument("chain_to_coords: angles/mask/links lengths differ");
  std::vector<Vec3> out;
  out.reserve(chain.size());
  Vec3 w0 = frame[0], w1 = frame[1], w2 = frame[2];
  for (size_t i = 0; i < chain.size(); ++i) {
    const double phi = chain.mask[i] ? chain.angles[i] : 0.0;
    const Vec3 d = nerf_place_atom(w0, w1, w2, chain.links[i].bond_length, chain.links[i].bond_angle, phi);
    out.push_back(d);
    w0 = w1;
    w1 = w2;
    w2 = d;
  }
  return out;
}

AngleChain coords_to_angles(const std::vector<Vec3>& points, const Frame& frame) {
  AngleChain chain;
  chain.frame = frame;
  chain.angles.reserve(points.size());
  chain.mask.assign(points.size(), 1);
  chain.links.reserve(points.size());
  Vec3 w0 = frame[0], w1 = frame[1], w2 = frame[2];
  for (const Vec3& p : points) {
    LinkGeometry link;
    link.bond_length = distance(p, w2);
    link.bond_angle = measure_angle(w1, w2, p);
    chain.links.push_back(link);
    chain.angles.push_back(wrap(measure_dihedral(w0, w1, w2, p)));
    w0 = w1;
    w1 = w2;
    w2 = p;
  }
  return chain;
}

double measure_angle(const Vec3& a, const Vec3& b, const Vec3& c) {
  const Vec3 u = a - b, v = c - b;
  const double nu = norm(u), nv = norm(v);
  if (nu < 1e-12 || nv < 1e-12) throw DegenerateFrameError("measure_angle: coincident points");
  double cosang = dot(u, v) / (nu * nv);
  cosang = std::max(-1.0, std::min(1.0, cosang));
  return std::acos(cosang);
}

double measure_dihedral(const Vec3& a, const Vec3& b, const Vec3& c, const Vec3& d) {
  const Vec3 b1 = b - a, b2 = c - b, b3 = d - c;
  const double n2len = norm(b2);
  if (n2len < 1e-12) throw DegenerateFrameError("measure_dihedral: coincident axis points");
  const Vec3 n1 = cross(b1, b2);
  const Vec3 n2 = cross(b2, b3);
  const double s1 = norm(n1) / (norm(b1) * n2len);
  const double s2 = norm(n2) / (norm(b3) * n2len);
  if (!(s1 > kCollinearTol) || !(s2 > kCollinearTol))
    throw DegenerateFrameError("measure_dihedral: collinear points");
  const double x = dot(n1, n2);
  const double y = dot(cross(n1, n2), b2 / n2len);
  return std::atan2(y, x);
}

}  // namespace flowbridge::geometry
