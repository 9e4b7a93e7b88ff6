#ifndef RECOIL_REDUCE_HPP
#define RECOIL_REDUCE_HPP

#include <cmath>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "recoil/constants.hpp"
#include "recoil/fewmode.hpp"

namespace recoil {

/// Reduced coherent-scattering model: one mechanical mode, one retained
/// cavity mode, and the recoil heating rate from the eliminated modes.
struct ReducedModel {
  double omega_c = 0.0; // absolute cavity frequency, rad/s
  double g = 0.0;       // optomechanical coupling, rad/s
  double kappa = 0.0;   // renormalized cavity decay, rad/s
  double gamma = 0.0;   // recoil heating rate, rad/s
  double omega_mech = 0.0; // mechanical frequency, rad/s
  std::vector<std::pair<int, double>> contributions; // (eliminated mode, Gamma_beta)
};

struct ReduceOptions {
  double min_separation = 10.0; // required scale-separation ratio
  bool background_only = false; // allow a fit with no narrow mode; the model
                                // then carries only the heating rate
};

/// Adiabatic elimination of broad and detuned modes. The retained narrow mode
/// keeps (omega_c = Lambda_11 + omega0, g = g_1); broad modes renormalize the
/// decay as kappa = kappa_1 + sum 4 w_1b^2 / kappa_b; every eliminated mode
/// contributes Gamma_b = g_b^2 kappa_b / (Lambda_bb^2 + kappa_b^2 / 4), the
/// Lorentzian-tail form that reduces to 4 g^2 / kappa on resonance.
inline ReducedModel adiabatic_reduce(const FewModeModel& m, const std::vector<ModeLabel>& labels,
                                     double omega0, double omega_mech,
                                     const ReduceOptions& opts = {}) {
  m.validate();
  if (labels.size() != static_cast<size_t>(m.n()))
    throw std::invalid_argument("adiabatic_reduce: label count mismatch");

  // background_only eliminates every mode, whatever its label.
  int narrow = -1;
  if (!opts.background_only) {
    for (int b = 0; b < m.n(); ++b) {
      if (labels[static_cast<size_t>(b)] != ModeLabel::narrow) continue;
      if (narrow >= 0)
        throw std::runtime_error("adiabatic_reduce: multiple narrow modes; reduction undefined");
      narrow = b;
    }
    if (narrow < 0)
      throw std::runtime_error("adiabatic_reduce: no narrow mode to retain");
  }

  ReducedModel out;
  out.omega_mech = omega_mech;
  if (narrow >= 0) {
    out.omega_c = m.lambda(narrow, narrow) + omega0;
    out.g = m.g[narrow];
    out.kappa = m.kappa[narrow];
  }

  for (int b = 0; b < m.n(); ++b) {
    if (b == narrow) continue;
    const ModeLabel lbl = labels[static_cast<size_t>(b)];
    // Separation of scales: the eliminated mode must be fast compared to the
    // retained dynamics.
    const double fast = (lbl == ModeLabel::broad)
                            ? m.kappa[b]
                            : std::sqrt(m.lambda(b, b) * m.lambda(b, b) +
                                        0.25 * m.kappa[b] * m.kappa[b]);
    double slow = std::abs(m.g[b]);
    if (narrow >= 0)
      slow = std::max({slow, m.kappa[narrow], std::abs(m.g[narrow]),
                       std::abs(m.lambda(narrow, b))});
    if (fast < opts.min_separation * std::max(slow, 1e-300))
      throw std::runtime_error(
          "adiabatic_reduce: scale separation violated for mode " + std::to_string(b) +
          " (fast scale " + std::to_string(fast) + " vs slow scale " + std::to_string(slow) +
          ", required ratio " + std::to_string(opts.min_separation) + ")");

    const double denom = m.lambda(b, b) * m.lambda(b, b) + 0.25 * m.kappa[b] * m.kappa[b];
    const double gamma_b = m.g[b] * m.g[b] * m.kappa[b] / denom;
    out.contributions.emplace_back(b, gamma_b);
    out.gamma += gamma_b;

    if (narrow >= 0 && lbl == ModeLabel::broad) {
      const double w1b = m.lambda(narrow, b);
      out.kappa += 4.0 * w1b * w1b / m.kappa[b];
    }
  }
  return out;
}

/// Fabry-Perot geometry for the analytic cross-checks. The mirror radius `a`
/// follows from (L/2 - R + sqrt(R^2 - a^2)) tan(theta_m) = a.
struct CavityGeometry {
  double curvature_radius = 0.0; // R, m
  double length = 0.0;           // L_c, m
  double theta_m = 0.0;          // mirror half-angle, rad
  double mode_waist = 0.0;       // W_c at the center, m

  void validate() const {
    if (!(theta_m > 0.0 && theta_m < 0.5 * pi))
      throw std::invalid_argument("CavityGeometry: theta_m must be in (0, pi/2)");
    if (curvature_radius <= 0.0 || length <= 0.0)
      throw std::invalid_argument("CavityGeometry: R and L_c must be > 0");
  }

  bool near_confocal_stable() const { return length < 2.0 * curvature_radius; }

  double mirror_radius() const {
    validate();
    const double t = std::tan(theta_m);
    // Fixed point of a = (L/2 - R + sqrt(R^2 - a^2)) tan(theta); contractive
    // for a < R in the regimes of interest.
    double a = 0.5 * length * t;
    for (int it = 0; it < 200; ++it) {
      const double root = std::sqrt(std::max(curvature_radius * curvature_radius - a * a, 0.0));
      const double next = (0.5 * length - curvature_radius + root) * t;
      if (std::abs(next - a) < 1e-15 * curvature_radius) return next;
      a = next;
    }
    return a;
  }

  double mode_volume() const {
    if (mode_waist <= 0.0) throw std::invalid_argument("CavityGeometry: mode waist not set");
    return pi * mode_waist * mode_waist * length / 4.0;
  }
};

/// Single Laguerre-Gaussian coupling estimate
/// g_LG = (2 hbar eps0 V_c / omega_c)^{-1/2} alpha E0 omega_c r_y0 / (2 c).
inline double lg_coupling_estimate(const CavityGeometry& geom, const TweezerParams& p,
                                   const ParticleParams& part, double omega_y,
                                   double omega_c) {
  p.validate();
  part.validate();
  const double vc = geom.mode_volume();
  const double ry0 = zero_point_motion(part.mass, omega_y);
  return std::sqrt(omega_c / (2.0 * hbar * eps0 * vc)) * part.polarizability *
         p.field_amplitude * omega_c * ry0 / (2.0 * c_light);
}

/// Extract a Gaussian 1/e^2 intensity waist from a transverse field profile by
/// least squares on log |E|^2 (mirrors a Gaussian fit to solver output).
inline double extract_waist(const std::vector<double>& rho, const std::vector<double>& abs_e) {
  if (rho.size() != abs_e.size() || rho.size() < 3)
    throw std::invalid_argument("extract_waist: need >= 3 samples");
  // log|E| = log E(0) - rho^2 / W^2: linear regression in rho^2.
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  const double n = static_cast<double>(rho.size());
  for (size_t k = 0; k < rho.size(); ++k) {
    if (!(abs_e[k] > 0.0)) throw std::invalid_argument("extract_waist: nonpositive field sample");
    const double x = rho[k] * rho[k];
    const double y = std::log(abs_e[k]);
    sx += x; sy += y; sxx += x * x; sxy += x * y;
  }
  const double slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
  if (!(slope < 0.0)) throw std::runtime_error("extract_waist: profile is not Gaussian-decaying");
  return std::sqrt(-1.0 / slope);
}

/// Cavity finesse from the round-trip survival fraction,
/// F = pi P_s^{1/4} / (1 - P_s^{1/2}).
inline double finesse(double p_survival) {
  if (!(p_survival >= 0.0 && p_survival < 1.0))
    throw std::domain_error("finesse: P_s must be in [0, 1)");
  return pi * std::pow(p_survival, 0.25) / (1.0 - std::sqrt(p_survival));
}

/// Diffraction-loss estimate of the cavity decay rate:
/// Loss = exp(-2 a^2 / w_m^2), kappa = c Loss / (L_c sqrt(1 - Loss)),
/// with w_m the Gaussian mode waist at the mirror.
inline double diffraction_kappa_estimate(const CavityGeometry& geom) {
  geom.validate();
  const double a = geom.mirror_radius();
  if (!(a > 0.0)) throw std::domain_error("diffraction_kappa_estimate: degenerate mirror radius");
  if (geom.mode_waist <= 0.0)
    throw std::invalid_argument("diffraction_kappa_estimate: mode waist not set");
  // Waist at the mirror, distance L/2 from the center, Rayleigh range of the
  // cavity mode.
  const double ym = 0.5 * geom.length;
  // The mode wavelength enters through the Rayleigh range; for a standing
  // cavity mode resonant near the free spectral range multiples the waist
  // evolution is W(y) = W_c sqrt(1 + (y lambda / (pi W_c^2))^2). We take the
  // geometric-mean wavelength from the near-confocal condition
  // z_R ~ sqrt(L(2R - L))/2 instead of an explicit lambda.
  const double zr = 0.5 * std::sqrt(geom.length * (2.0 * geom.curvature_radius - geom.length));
  const double wm = geom.mode_waist * std::sqrt(1.0 + (ym / zr) * (ym / zr));
  const double loss = std::exp(-2.0 * a * a / (wm * wm));
  if (loss >= 1.0) throw std::domain_error("diffraction_kappa_estimate: total loss");
  return c_light * loss / (geom.length * std::sqrt(1.0 - loss));
}

/// Same estimate from an explicit loss fraction (used for the finesse
/// round-trip consistency check).
inline double diffraction_kappa_from_loss(double loss, double length) {
  if (!(loss > 0.0 && loss < 1.0))
    throw std::domain_error("diffraction_kappa_from_loss: Loss must be in (0, 1)");
  return c_light * loss / (length * std::sqrt(1.0 - loss));
}

inline nlohmann::json reduced_model_to_json(const ReducedModel& m) {
  nlohmann::json contribs = nlohmann::json::array();
  for (const auto& [mode, gb] : m.contributions)
    contribs.push_back({{"mode", mode}, {"Gamma_beta", gb}});
  return {
      {"omega_c", m.omega_c}, {"g", m.g},         {"kappa", m.kappa},
      {"Gamma", m.gamma},     {"Omega", m.omega_mech}, {"contributions", contribs},
  };
}

inline ReducedModel reduced_model_from_json(const nlohmann::json& in) {
  ReducedModel m;
  m.omega_c = in.at("omega_c").get<double>();
  m.g = in.at("g").get<double>();
  m.kappa = in.at("kappa").get<double>();
  m.gamma = in.at("Gamma").get<double>();
  m.omega_mech = in.at("Omega").get<double>();
  if (in.contains("contributions"))
    for (const auto& c : in["contributions"])
      m.contributions.emplace_back(c.at("mode").get<int>(), c.at("Gamma_beta").get<double>());
  return m;
}

} // namespace recoil

#endif
