#ifndef RECOIL_GEOMETRY_HPP
#define RECOIL_GEOMETRY_HPP

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "recoil/constants.hpp"

namespace recoil {

/// Angular distribution of motional-information-carrying scattered photons,
/// in standard spherical coordinates (theta from +z, phi from +x).
struct RadiationPattern {
  enum class Kind { com_y, libration_z, user };
  Kind kind = Kind::com_y;
  std::function<double(double, double)> phi; // (theta, phi) -> value >= 0

  static RadiationPattern com_y();
  static RadiationPattern libration_z();
  static RadiationPattern user(std::function<double(double, double)> fn) {
    return {Kind::user, std::move(fn)};
  }
};

/// Pattern of the y-motion: sin^2(phi) sin^2(theta) (1 - cos^2(phi) sin^2(theta)).
inline double irp_com_y(double theta, double phi) {
  const double st = std::sin(theta);
  const double sp = std::sin(phi), cp = std::cos(phi);
  return sp * sp * st * st * (1.0 - cp * cp * st * st);
}

/// Pattern of the z-libration: sin^2(theta).
inline double irp_libr_z(double theta) {
  const double st = std::sin(theta);
  return st * st;
}

inline RadiationPattern RadiationPattern::com_y() {
  return {Kind::com_y, [](double t, double p) { return irp_com_y(t, p); }};
}

inline RadiationPattern RadiationPattern::libration_z() {
  return {Kind::libration_z, [](double t, double) { return irp_libr_z(t); }};
}

struct SphereQuadratureOptions {
  double tol = 1e-9;   // absolute tolerance on the ratio
  int initial_order = 16;
  int max_order = 512;
};

namespace detail {

// Gauss-Legendre nodes/weights on [-1, 1] by Newton iteration.
inline void gauss_legendre(int n, std::vector<double>& x, std::vector<double>& w) {
  x.assign(static_cast<size_t>(n), 0.0);
  w.assign(static_cast<size_t>(n), 0.0);
  for (int i = 0; i < (n + 1) / 2; ++i) {
    double z = std::cos(pi * (i + 0.75) / (n + 0.5));
    double pp = 0.0;
    for (int it = 0; it < 100; ++it) {
      double p0 = 1.0, p1 = 0.0;
      for (int k = 0; k < n; ++k) {
        const double p2 = p1;
        p1 = p0;
        p0 = ((2.0 * k + 1.0) * z * p1 - k * p2) / (k + 1.0);
      }
      pp = n * (z * p0 - p1) / (z * z - 1.0);
      const double dz = p0 / pp;
      z -= dz;
      if (std::abs(dz) < 1e-15) break;
    }
    x[static_cast<size_t>(i)] = -z;
    x[static_cast<size_t>(n - 1 - i)] = z;
    w[static_cast<size_t>(i)] = 2.0 / ((1.0 - z * z) * pp * pp);
    w[static_cast<size_t>(n - 1 - i)] = w[static_cast<size_t>(i)];
  }
}

// Integral of the pattern over directions with angle-from-y in
// [beta_lo, beta_hi], parameterized by the cavity-axis (y) polar angle.
inline double integrate_band(const RadiationPattern& pat, double cb_lo, double cb_hi, int order) {
  std::vector<double> xs, ws;
  gauss_legendre(order, xs, ws);
  const int n_psi = 2 * order;
  const double dpsi = 2.0 * pi / n_psi;
  double total = 0.0;
  for (int i = 0; i < order; ++i) {
    const double cb = 0.5 * (cb_hi - cb_lo) * xs[static_cast<size_t>(i)] + 0.5 * (cb_hi + cb_lo);
    const double sb = std::sqrt(std::max(1.0 - cb * cb, 0.0));
    double ring = 0.0;
    for (int k = 0; k < n_psi; ++k) {
      const double psi = (k + 0.5) * dpsi;
      // Direction with y-axis polar angle beta, azimuth psi in the (x, z) plane.
      const double nx = sb * std::cos(psi);
      const double ny = cb;
      const double nz = sb * std::sin(psi);
      const double theta = std::acos(std::clamp(nz, -1.0, 1.0));
      const double phi = std::atan2(ny, nx);
      ring += pat.phi(theta, phi);
    }
    total += ws[static_cast<size_t>(i)] * 0.5 * (cb_hi - cb_lo) * ring * dpsi;
  }
  return total;
}

} // namespace detail

/// Fraction of the pattern's radiated weight escaping past two axisymmetric
/// mirror caps of half-angle theta_m about the +-y cavity axis:
/// ratio = int_{open} Phi dOmega / int_{4 pi} Phi dOmega.
inline double gamma_geometric(double theta_m, const RadiationPattern& pat,
                              const SphereQuadratureOptions& opts = {}) {
  if (!(theta_m >= 0.0 && theta_m <= 0.5 * pi + 1e-12))
    throw std::domain_error("gamma_geometric: theta_m must be in [0, pi/2]");
  const double cm = std::cos(std::min(theta_m, 0.5 * pi));
  if (cm <= 1e-14) return 0.0; // full blocking

  double prev_ratio = std::numeric_limits<double>::quiet_NaN();
  for (int order = opts.initial_order; order <= opts.max_order; order *= 2) {
    const double open = detail::integrate_band(pat, -cm, cm, order);
    const double full = detail::integrate_band(pat, -1.0, 1.0, order);
    if (!(full > 0.0)) throw std::runtime_error("gamma_geometric: pattern integrates to zero");
    const double ratio = open / full;
    if (std::isfinite(prev_ratio) && std::abs(ratio - prev_ratio) < opts.tol) return ratio;
    prev_ratio = ratio;
  }
  throw std::runtime_error("gamma_geometric: quadrature did not reach the requested tolerance");
}

/// Closed forms: CoM cos^3(t)[3 cos(2t) + 13]/16; libration [15 cos t + cos 3t]/16.
inline double gamma_geometric_closed(double theta_m, RadiationPattern::Kind kind) {
  if (!(theta_m >= 0.0 && theta_m <= 0.5 * pi + 1e-12))
    throw std::domain_error("gamma_geometric_closed: theta_m must be in [0, pi/2]");
  const double ct = std::cos(theta_m);
  switch (kind) {
    case RadiationPattern::Kind::com_y:
      return ct * ct * ct * (3.0 * std::cos(2.0 * theta_m) + 13.0) / 16.0;
    case RadiationPattern::Kind::libration_z:
      return (15.0 * ct + std::cos(3.0 * theta_m)) / 16.0;
    default:
      throw std::invalid_argument("gamma_geometric_closed: no closed form for user patterns");
  }
}

/// Full-sphere integral of a pattern (quadrature sanity hook).
inline double pattern_sphere_integral(const RadiationPattern& pat, int order = 64) {
  return detail::integrate_band(pat, -1.0, 1.0, order);
}

} // namespace recoil

#endif
