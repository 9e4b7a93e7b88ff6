#ifndef RECOIL_SPECTRAL_HPP
#define RECOIL_SPECTRAL_HPP

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "recoil/constants.hpp"
#include "recoil/green.hpp"
#include "recoil/tweezer.hpp"

namespace recoil {

enum class MotionKind { com, libration };

/// Sampled optomechanical spectral density J(omega) with provenance.
struct SpectralDensity {
  std::vector<double> omega; // rad/s, strictly increasing
  std::vector<double> j;     // rad/s
  MotionKind motion = MotionKind::com;
  int axis = 1; // 0=x, 1=y, 2=z
  std::string provider_id;
  double stencil_step = 0.0;
  Vec3 equilibrium = Vec3::Zero();

  void validate() const {
    if (omega.size() != j.size()) throw std::invalid_argument("SpectralDensity: size mismatch");
    for (size_t k = 1; k < omega.size(); ++k)
      if (!(omega[k] > omega[k - 1]))
        throw std::invalid_argument("SpectralDensity: grid not strictly increasing");
  }

  double interp(double w) const {
    if (omega.empty()) throw std::runtime_error("SpectralDensity: empty");
    if (w < omega.front() || w > omega.back())
      throw std::domain_error("SpectralDensity: frequency outside sampled band");
    const auto it = std::upper_bound(omega.begin(), omega.end(), w);
    size_t jdx = static_cast<size_t>(std::distance(omega.begin(), it));
    if (jdx == 0) jdx = 1;
    if (jdx >= omega.size()) jdx = omega.size() - 1;
    const size_t i = jdx - 1;
    const double t = (w - omega[i]) / (omega[jdx] - omega[i]);
    return (1.0 - t) * j[i] + t * j[jdx];
  }
};

struct SpectralOptions {
  double stencil_step = 0.0;   // 0 -> default 2e-4 * lambda_0
  bool richardson = true;      // one h -> h/2 refinement
  bool evaluate_at_focus = false; // ignore the equilibrium shift
};

namespace detail {

// Mixed derivative d2/dr_i dr_i' of E(r) ImG_xx(r, r', w) E*(r') at
// r = r' = R0, 4-point cross stencil. The combination is real up to roundoff.
inline double mixed_stencil(const GreensProvider& g, const TweezerParams& p,
                            const Vec3& r0, int axis, double h, double w) {
  Vec3 e = Vec3::Zero();
  e[axis] = 1.0;
  auto f = [&](double s, double sp) -> cplx {
    const Vec3 ra = r0 + s * h * e;
    const Vec3 rb = r0 + sp * h * e;
    return gaussian_field(ra, p) * g.im_g_xx(ra, rb, w) * std::conj(gaussian_field(rb, p));
  };
  const cplx num = f(1, 1) - f(1, -1) - f(-1, 1) + f(-1, -1);
  return num.real() / (4.0 * h * h);
}

inline double mixed_derivative(const GreensProvider& g, const TweezerParams& p,
                               const Vec3& r0, int axis, double h, double w,
                               bool richardson) {
  const double coarse = mixed_stencil(g, p, r0, axis, h, w);
  if (!richardson) return coarse;
  const double fine = mixed_stencil(g, p, r0, axis, h / 2.0, w);
  return (4.0 * fine - coarse) / 3.0; // second-order stencil
}

} // namespace detail

/// Center-of-mass spectral density along `axis` on the given grid.
inline SpectralDensity spectral_density_com(int axis, const std::vector<double>& grid,
                                            const GreensProvider& g, const TweezerParams& p,
                                            const ParticleParams& part,
                                            const EquilibriumState& eq = {},
                                            const SpectralOptions& opts = {}) {
  p.validate();
  part.validate();
  if (axis < 0 || axis > 2) throw std::invalid_argument("spectral_density_com: bad axis");
  const double h = opts.stencil_step > 0.0 ? opts.stencil_step : 2e-4 * p.wavelength;
  const Vec3 r0 = opts.evaluate_at_focus ? Vec3(Vec3::Zero()) : eq.position;
  const auto [bmin, bmax] = g.band();

  const MechanicalFrequencies om = mechanical_frequencies(part, p);
  const double omega_i = (axis == 0) ? om.x : (axis == 1) ? om.y : om.z;
  const double ri0 = zero_point_motion(part.mass, omega_i);
  const double a2 = part.polarizability * part.polarizability;

  SpectralDensity out;
  out.motion = MotionKind::com;
  out.axis = axis;
  out.provider_id = g.id();
  out.stencil_step = h;
  out.equilibrium = r0;
  out.omega = grid;
  out.j.reserve(grid.size());
  for (double w : grid) {
    if (w < bmin || w > bmax)
      throw std::domain_error("spectral_density_com: grid point outside provider band");
    const double pref = a2 * ri0 * ri0 * w * w / (4.0 * hbar * pi * eps0 * c_light * c_light);
    out.j.push_back(pref * detail::mixed_derivative(g, p, r0, axis, h, w, opts.richardson));
  }
  out.validate();
  return out;
}

/// Librational spectral density along `axis` (y or z); no spatial derivatives.
inline SpectralDensity spectral_density_libr(int axis, const std::vector<double>& grid,
                                             const GreensProvider& g, const TweezerParams& p,
                                             const LibrationalParams& lp,
                                             const EquilibriumState& eq = {},
                                             const SpectralOptions& opts = {}) {
  p.validate();
  lp.validate();
  if (axis != 1 && axis != 2)
    throw std::invalid_argument("spectral_density_libr: axis must be y or z");
  const Vec3 r0 = opts.evaluate_at_focus ? Vec3(Vec3::Zero()) : eq.position;
  const double e0 = p.field_amplitude;
  const double omega_l = librational_frequency(lp, p);
  const double xi0 = zero_point_angle(lp.inertia, omega_l);
  const double pref0 = lp.delta_alpha * lp.delta_alpha * xi0 * xi0 * e0 * e0 /
                       (4.0 * hbar * pi * eps0 * c_light * c_light);
  const auto [bmin, bmax] = g.band();

  SpectralDensity out;
  out.motion = MotionKind::libration;
  out.axis = axis;
  out.provider_id = g.id();
  out.stencil_step = 0.0;
  out.equilibrium = r0;
  out.omega = grid;
  out.j.reserve(grid.size());
  for (double w : grid) {
    if (w < bmin || w > bmax)
      throw std::domain_error("spectral_density_libr: grid point outside provider band");
    out.j.push_back(pref0 * w * w * g.im_g(r0, r0, w)(axis, axis));
  }
  out.validate();
  return out;
}

/// Free-space recoil heating rate Gamma_fs = 2 pi J_fs,i(omega_eval), with
/// omega_eval = omega0 by default (sideband_offset shifts it for sensitivity
/// studies).
inline double free_space_recoil(int axis, const TweezerParams& p, const ParticleParams& part,
                                const EquilibriumState& eq = {},
                                double sideband_offset = 0.0) {
  const FreeSpaceGreens fs;
  const double w = p.omega0() + sideband_offset;
  const SpectralDensity j =
      spectral_density_com(axis, {w}, fs, p, part, eq, SpectralOptions{});
  return 2.0 * pi * j.j.front();
}

/// Librational free-space recoil rate, same convention.
inline double free_space_recoil_libr(int axis, const TweezerParams& p,
                                     const LibrationalParams& lp,
                                     const EquilibriumState& eq = {},
                                     double sideband_offset = 0.0) {
  const FreeSpaceGreens fs;
  const double w = p.omega0() + sideband_offset;
  const SpectralDensity j = spectral_density_libr(axis, {w}, fs, p, lp, eq, SpectralOptions{});
  return 2.0 * pi * j.j.front();
}

// CSV `omega_rad_s, J_rad_s` + JSON metadata sidecar `<path>.meta.json`.
inline void save_spectral_density(const SpectralDensity& s, const std::string& path,
                                  const nlohmann::json& extra_meta = {}) {
  s.validate();
  std::ofstream f(path);
  if (!f) throw std::runtime_error("save_spectral_density: cannot open " + path);
  f << "omega_rad_s, J_rad_s\n";
  char buf[128];
  for (size_t k = 0; k < s.omega.size(); ++k) {
    std::snprintf(buf, sizeof(buf), "%.17g, %.17g\n", s.omega[k], s.j[k]);
    f << buf;
  }
  nlohmann::json meta = {
      {"motion", s.motion == MotionKind::com ? "com" : "libration"},
      {"axis", s.axis},
      {"provider", s.provider_id},
      {"stencil_step_m", s.stencil_step},
      {"equilibrium_m", {s.equilibrium[0], s.equilibrium[1], s.equilibrium[2]}},
  };
  for (auto& [k, v] : extra_meta.items()) meta[k] = v;
  std::ofstream mf(path + ".meta.json");
  mf << meta.dump(2) << "\n";
}

inline SpectralDensity load_spectral_density(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("load_spectral_density: cannot open " + path);
  std::string line;
  if (!std::getline(f, line)) throw std::runtime_error("load_spectral_density: empty file");
  SpectralDensity s;
  int row = 1;
  while (std::getline(f, line)) {
    ++row;
    if (line.empty()) continue;
    std::replace(line.begin(), line.end(), ',', ' ');
    std::istringstream is(line);
    double w, jv;
    if (!(is >> w >> jv))
      throw std::runtime_error("load_spectral_density: parse error at row " + std::to_string(row));
    s.omega.push_back(w);
    s.j.push_back(jv);
  }
  std::ifstream mf(path + ".meta.json");
  if (mf) {
    nlohmann::json meta;
    mf >> meta;
    s.motion = meta.value("motion", "com") == "com" ? MotionKind::com : MotionKind::libration;
    s.axis = meta.value("axis", 1);
    s.provider_id = meta.value("provider", "");
    s.stencil_step = meta.value("stencil_step_m", 0.0);
    if (meta.contains("equilibrium_m")) {
      const auto& e = meta["equilibrium_m"];
      s.equilibrium = Vec3(e.at(0).get<double>(), e.at(1).get<double>(), e.at(2).get<double>());
    }
  }
  s.validate();
  return s;
}

} // namespace recoil

#endif
