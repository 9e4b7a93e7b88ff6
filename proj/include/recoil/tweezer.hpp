#ifndef RECOIL_TWEEZER_HPP
#define RECOIL_TWEEZER_HPP

#include <cmath>
#include <complex>
#include <functional>
#include <stdexcept>
#include <string>

#include "recoil/constants.hpp"
#include "recoil/green.hpp"

namespace recoil {

using cplx = std::complex<double>;

/// Laser parameters of the trapping tweezer: polarization along x,
/// propagation along z, focus at the origin.
struct TweezerParams {
  double field_amplitude = 0.0; // E0, V/m
  double waist = 0.0;           // W_t, m
  double wavelength = 0.0;      // lambda_0, m

  double omega0() const { return 2.0 * pi * c_light / wavelength; }
  double k0() const { return 2.0 * pi / wavelength; }
  double rayleigh_range() const { return pi * waist * waist / wavelength; }

  void validate() const {
    if (field_amplitude <= 0.0) throw std::invalid_argument("TweezerParams: E0 must be > 0");
    if (waist <= 0.0) throw std::invalid_argument("TweezerParams: waist must be > 0");
    if (wavelength <= 0.0) throw std::invalid_argument("TweezerParams: wavelength must be > 0");
  }
};

struct ParticleParams {
  double polarizability = 0.0; // alpha, C m^2 / V
  double mass = 0.0;           // kg
  double radius = 0.0;         // m

  void validate() const {
    if (polarizability <= 0.0) throw std::invalid_argument("ParticleParams: alpha must be > 0");
    if (mass <= 0.0) throw std::invalid_argument("ParticleParams: mass must be > 0");
    if (radius <= 0.0) throw std::invalid_argument("ParticleParams: radius must be > 0");
  }

  /// Point-dipole validity: k0 R < 1.
  bool point_dipole_valid(const TweezerParams& p) const { return p.k0() * radius < 1.0; }
};

struct LibrationalParams {
  double delta_alpha = 0.0; // alpha_3 - alpha_1, C m^2 / V
  double inertia = 0.0;     // kg m^2

  void validate() const {
    if (delta_alpha <= 0.0) throw std::invalid_argument("LibrationalParams: delta_alpha must be > 0");
    if (inertia <= 0.0) throw std::invalid_argument("LibrationalParams: inertia must be > 0");
  }
};

/// Complex tweezer mode profile of a zeroth-order Gaussian beam.
inline cplx gaussian_field(const Vec3& r, const TweezerParams& p) {
  p.validate();
  const double zr = p.rayleigh_range();
  const double z = r[2];
  const double rho2 = r[0] * r[0] + r[1] * r[1];
  const double wz = p.waist * std::sqrt(1.0 + (z / zr) * (z / zr));
  const double gouy = std::atan(z / zr) - 0.5 * p.k0() * z * rho2 / (z * z + zr * zr);
  const double amp = p.field_amplitude * (p.waist / wz) * std::exp(-rho2 / (wz * wz));
  return amp * std::exp(cplx(0.0, p.k0() * z - gouy));
}

/// Hook for scattering-corrected tweezer profiles; defaults to the free-space
/// Gaussian everywhere in this library.
using FieldProfile = std::function<cplx(const Vec3&)>;

inline FieldProfile make_gaussian_profile(const TweezerParams& p) {
  return [p](const Vec3& r) { return gaussian_field(r, p); };
}

struct MechanicalFrequencies {
  double x, y, z; // rad/s
};

inline MechanicalFrequencies mechanical_frequencies(const ParticleParams& part,
                                                    const TweezerParams& p) {
  part.validate();
  p.validate();
  const double e0 = p.field_amplitude;
  const double oxy = std::sqrt(part.polarizability * e0 * e0 / (part.mass * p.waist * p.waist));
  const double oz = oxy * p.wavelength / (pi * std::sqrt(2.0) * p.waist);
  return {oxy, oxy, oz};
}

inline double librational_frequency(const LibrationalParams& lp, const TweezerParams& p) {
  lp.validate();
  if (p.field_amplitude < 0.0)
    throw std::invalid_argument("librational_frequency: E0 must be >= 0");
  return std::sqrt(lp.delta_alpha / (2.0 * lp.inertia)) * p.field_amplitude;
}

/// Zero-point motion r0 = sqrt(hbar / (2 M Omega)).
inline double zero_point_motion(double mass, double omega) {
  if (omega <= 0.0) throw std::domain_error("zero_point_motion: Omega must be > 0");
  if (mass <= 0.0) throw std::domain_error("zero_point_motion: mass must be > 0");
  return std::sqrt(hbar / (2.0 * mass * omega));
}

/// Zero-point angle xi0 = sqrt(hbar / (2 I Omega)).
inline double zero_point_angle(double inertia, double omega) {
  if (omega <= 0.0) throw std::domain_error("zero_point_angle: Omega must be > 0");
  return std::sqrt(hbar / (2.0 * inertia * omega));
}

struct EquilibriumState {
  Vec3 position = Vec3::Zero();            // R_0, m
  Eigen::Vector3cd field = Eigen::Vector3cd::Zero(); // <E(0)>, V/m
  bool lamb_dicke_ok = true;               // |R_0| << lambda_0
  double pv_resolution = 0.0;              // grid points per band used at convergence
};

struct QuadratureOptions {
  double band_lo_factor = 0.1;  // integrate over [lo*omega0, hi*omega0] ...
  double band_hi_factor = 10.0; // ... intersected with the provider band
  int initial_points = 512;     // per half-band, doubled until converged
  double rel_tol = 1e-8;
  int max_doublings = 8;
};

namespace detail {

// PV integral over [lo, hi] of f(w) / (w - w0), with pole subtraction on a
// symmetric window around w0 and plain Simpson panels elsewhere.
// f must be smooth on the band.
inline double pv_integral(const std::function<double(double)>& f, double w0,
                          double lo, double hi, int n) {
  if (!(lo < w0 && w0 < hi)) throw std::invalid_argument("pv_integral: pole outside band");
  const double half = std::min(w0 - lo, hi - w0);
  const double f0 = f(w0);

  // Symmetric window [w0-half, w0+half]: integrand (f(w)-f0)/(w-w0) is smooth
  // (the f0 log term cancels by symmetry).
  auto sym = [&](double w) {
    const double d = w - w0;
    if (std::abs(d) < 1e-9 * w0) {
      // Central difference estimate of f'(w0).
      const double h = 1e-6 * w0;
      return (f(w0 + h) - f(w0 - h)) / (2.0 * h);
    }
    return (f(w) - f0) / d;
  };
  auto simpson = [&](const std::function<double(double)>& fn, double a, double b, int m) {
    if (m % 2 != 0) ++m;
    const double h = (b - a) / m;
    double s = fn(a) + fn(b);
    for (int k = 1; k < m; ++k) s += fn(a + k * h) * ((k % 2) ? 4.0 : 2.0);
    return s * h / 3.0;
  };

  double out = simpson(sym, w0 - half, w0 + half, n);
  auto tail = [&](double w) { return f(w) / (w - w0); };
  if (lo < w0 - half) out += simpson(tail, lo, w0 - half, n);
  if (w0 + half < hi) out += simpson(tail, w0 + half, hi, n);
  return out;
}

} // namespace detail

/// Equilibrium displacement and coherent field amplitude from the zero-force
/// condition, for structures symmetric in all Cartesian planes.
///
/// The dispersive kernel O(r, r') is evaluated by principal-value quadrature
/// of the structure-scattered part of Im G (the free-space part is already
/// absorbed in the trap parameters), plus the resonant pole term
/// i pi omega0^2 Im G(r, r', omega0) of the full tensor, which carries the
/// radiation-pressure push.
inline EquilibriumState equilibrium_shift(const ParticleParams& part,
                                          const TweezerParams& p,
                                          const GreensProvider& g,
                                          const QuadratureOptions& quad = {}) {
  part.validate();
  p.validate();
  const double w0 = p.omega0();
  const auto [bmin, bmax] = g.band();
  const double lo = std::max(quad.band_lo_factor * w0, bmin);
  const double hi = std::min(quad.band_hi_factor * w0, bmax);
  if (!(lo < w0 && w0 < hi))
    throw std::runtime_error("equilibrium_shift: provider band does not cover omega0");

  const double cpref = part.polarizability / (2.0 * pi * eps0 * c_light * c_light);

  // Complex kernel C * E(r) E*(r') * (PV + i pi pole), xx component.
  auto kernel_xx = [&](const Vec3& r, const Vec3& rp, int n_points) -> cplx {
    auto scat_xx = [&](double w) {
      return g.includes_free_space() ? g.im_g_xx(r, rp, w) - im_g_free(r, rp, w)(0, 0)
                                     : g.im_g_xx(r, rp, w);
    };
    const double pv = detail::pv_integral(
        [&](double w) { return w * w * scat_xx(w); }, w0, lo, hi, n_points);
    const double pole = pi * w0 * w0 * g.im_g_xx(r, rp, w0);
    return cpref * gaussian_field(r, p) * std::conj(gaussian_field(rp, p)) *
           cplx(pv, pole);
  };

  const double h = 1e-3 * p.wavelength;
  const Vec3 ez(0.0, 0.0, 1.0);

  auto evaluate = [&](int n_points, double& numer, double& denom_corr) {
    // d/dz' at r = r' = 0 (central difference on the second argument).
    const cplx dzp =
        (kernel_xx(Vec3::Zero(), h * ez, n_points) - kernel_xx(Vec3::Zero(), -h * ez, n_points)) /
        (2.0 * h);
    // Mixed d2/dz dz' by the 4-point cross stencil.
    const cplx dzdzp = (kernel_xx(h * ez, h * ez, n_points) - kernel_xx(h * ez, -h * ez, n_points) -
                        kernel_xx(-h * ez, h * ez, n_points) + kernel_xx(-h * ez, -h * ez, n_points)) /
                       (4.0 * h * h);
    numer = 2.0 * dzp.real();
    denom_corr = 2.0 * dzdzp.real();
  };

  const double stiffness = std::pow(p.field_amplitude * p.wavelength / (pi * p.waist * p.waist), 2);

  int n = quad.initial_points;
  double numer, corr;
  evaluate(n, numer, corr);
  double z0_prev = numer / (stiffness - corr);
  bool converged = false;
  for (int it = 0; it < quad.max_doublings; ++it) {
    n *= 2;
    evaluate(n, numer, corr);
    const double z0 = numer / (stiffness - corr);
    const double scale = std::max(std::abs(z0), 1e-18 * p.wavelength);
    if (std::abs(z0 - z0_prev) <= quad.rel_tol * scale) {
      converged = true;
      z0_prev = z0;
      break;
    }
    z0_prev = z0;
  }
  if (!converged)
    throw std::runtime_error(
        "equilibrium_shift: PV quadrature did not converge (last resolution " +
        std::to_string(n) + " points, last |R0| " + std::to_string(z0_prev) + " m)");

  EquilibriumState out;
  out.position = z0_prev * ez;
  out.pv_resolution = n;
  out.lamb_dicke_ok = std::abs(z0_prev) < 0.1 * p.wavelength;

  // <E(0)> = O_x(0,0) Re[(1 + 2|R0| d/dz) E*_tw]|_0, with O_x the x column
  // of the kernel at coincidence.
  const cplx o00 = kernel_xx(Vec3::Zero(), Vec3::Zero(), n);
  const cplx e00 = gaussian_field(Vec3::Zero(), p);
  const cplx dze = (std::conj(gaussian_field(h * ez, p)) - std::conj(gaussian_field(-h * ez, p))) /
                   (2.0 * h);
  const double bracket = (std::conj(e00) + 2.0 * std::abs(z0_prev) * dze).real();
  // Normalize the kernel by |E(0)|^2 so the amplitude carries field units.
  const double e2 = std::norm(e00);
  out.field = Eigen::Vector3cd::Zero();
  if (e2 > 0.0) out.field[0] = o00 / e2 * bracket;
  return out;
}

} // namespace recoil

#endif
