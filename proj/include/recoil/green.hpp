#ifndef RECOIL_GREEN_HPP
#define RECOIL_GREEN_HPP

#include <Eigen/Dense>
#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <limits>
#include <memory>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "recoil/constants.hpp"

namespace recoil {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

/// Evaluator of the imaginary part of the dyadic Green's tensor
/// Im G(r, r', omega), in units of 1/m. Providers are immutable after
/// construction and safe for concurrent evaluation.
class GreensProvider {
public:
  virtual ~GreensProvider() = default;

  virtual Mat3 im_g(const Vec3& r, const Vec3& rp, double omega) const = 0;

  /// Frequency band [omega_min, omega_max] over which the provider is valid.
  virtual std::pair<double, double> band() const {
    return {0.0, std::numeric_limits<double>::infinity()};
  }

  virtual std::string id() const = 0;

  /// True when the tensor embeds the free-space contribution (so the
  /// structure-scattered part is im_g minus the free-space tensor).
  virtual bool includes_free_space() const { return true; }

  double im_g_xx(const Vec3& r, const Vec3& rp, double omega) const {
    return im_g(r, rp, omega)(0, 0);
  }
};

namespace detail {

// Scalar coefficients of Im G0 = (omega / 4 pi c) * (g1 * I + g2 * n n^T),
// u = omega |r - r'| / c, with g1 = sinc u + t and g2 = -(sinc u + 3 t) for
// t = (u cos u - sin u)/u^3. The direct form cancels catastrophically at
// small u (g2 is O(u^2) built from O(1) terms), so below u = 0.1 both
// coefficients use their own even series; the u^10 truncation error there
// is ~1e-18, far under the double roundoff of the direct branch.
inline void im_g_free_coeffs(double u, double& g1, double& g2) {
  if (u < 0.1) {
    const double u2 = u * u;
    g1 = 2.0 / 3.0 + u2 * (-2.0 / 15.0 + u2 * (1.0 / 140.0 + u2 * (-1.0 / 5670.0 + u2 / 399168.0)));
    g2 = u2 * (1.0 / 15.0 + u2 * (-1.0 / 210.0 + u2 * (1.0 / 7560.0 - u2 / 498960.0)));
    return;
  }
  const double sinc = std::sin(u) / u;
  const double t = (u * std::cos(u) - std::sin(u)) / (u * u * u);
  g1 = sinc + t;
  g2 = -(sinc + 3.0 * t);
}

} // namespace detail

/// Analytic vacuum Im G. Coincidence limit Im G(r, r, omega) = omega/(6 pi c) I.
inline Mat3 im_g_free(const Vec3& r, const Vec3& rp, double omega) {
  if (omega <= 0.0) throw std::domain_error("im_g_free: omega must be > 0");
  const Vec3 d = r - rp;
  const double dist = d.norm();
  const double pref = omega / (4.0 * pi * c_light);
  if (dist == 0.0) return (2.0 / 3.0) * pref * Mat3::Identity();
  const double u = omega * dist / c_light;
  double g1, g2;
  detail::im_g_free_coeffs(u, g1, g2);
  const Vec3 n = d / dist;
  return pref * (g1 * Mat3::Identity() + g2 * (n * n.transpose()));
}

class FreeSpaceGreens : public GreensProvider {
public:
  Mat3 im_g(const Vec3& r, const Vec3& rp, double omega) const override {
    return im_g_free(r, rp, omega);
  }
  std::string id() const override { return "free_space"; }
};

/// Hypothetical lossless environment, Im G == 0. Used as a null fixture.
class NullGreens : public GreensProvider {
public:
  Mat3 im_g(const Vec3&, const Vec3&, double) const override {
    return Mat3::Zero();
  }
  std::string id() const override { return "null"; }
  bool includes_free_space() const override { return false; }
};

/// Perfect-mirror image geometries: a single half-space wall, or two
/// parallel plates. `axis` is the mirror normal (0=x, 1=y, 2=z).
/// `reflectivity` is the amplitude factor applied per bounce; 1.0 is a
/// lossless mirror, values < 1 regularize the cavity resonances to finite
/// width and make the image series geometrically convergent.
struct MirrorGeometry {
  enum class Kind { half_space, parallel_plates };
  Kind kind = Kind::half_space;
  int axis = 2;
  double wall = 0.0;        // plane position for half_space (vacuum at coord > wall)
  double separation = 0.0;  // plate separation L; plates at +-L/2 for parallel_plates
  int n_img = 1;            // bounce truncation per chain
  double reflectivity = 1.0;

  void validate() const {
    if (axis < 0 || axis > 2) throw std::invalid_argument("MirrorGeometry: bad axis");
    if (n_img < 1) throw std::invalid_argument("MirrorGeometry: n_img must be >= 1");
    if (kind == Kind::parallel_plates && separation <= 0.0)
      throw std::invalid_argument("MirrorGeometry: separation must be > 0");
    if (reflectivity <= 0.0 || reflectivity > 1.0)
      throw std::invalid_argument("MirrorGeometry: reflectivity must be in (0, 1]");
  }
};

namespace detail {

// Per-bounce sign matrix for a perfect conductor with normal along `axis`:
// tangential dipole components flip, the normal one is preserved.
inline Mat3 mirror_sign(int axis) {
  Mat3 s = -Mat3::Identity();
  s(axis, axis) = 1.0;
  return s;
}

} // namespace detail

inline Mat3 im_g_mirror(const Vec3& r, const Vec3& rp, double omega,
                        const MirrorGeometry& geom) {
  geom.validate();
  if (omega <= 0.0) throw std::domain_error("im_g_mirror: omega must be > 0");
  const int a = geom.axis;
  Mat3 out = im_g_free(r, rp, omega);
  const Mat3 sig = detail::mirror_sign(a);

  if (geom.kind == MirrorGeometry::Kind::half_space) {
    if (r[a] <= geom.wall || rp[a] <= geom.wall)
      throw std::domain_error("im_g_mirror: point on or behind the mirror");
    Vec3 img = rp;
    img[a] = 2.0 * geom.wall - rp[a];
    out += geom.reflectivity * (im_g_free(r, img, omega) * sig);
    return out;
  }

  // Parallel plates at coordinates -L/2 and +L/2.
  const double lo = -0.5 * geom.separation;
  const double hi = +0.5 * geom.separation;
  if (r[a] <= lo || r[a] >= hi || rp[a] <= lo || rp[a] >= hi)
    throw std::domain_error("im_g_mirror: point on or outside the plates");

  // Two image chains: one starting with a reflection in the upper plate,
  // one in the lower; subsequent reflections alternate. An image after k
  // bounces carries sign^k and reflectivity^k.
  for (int start = 0; start < 2; ++start) {
    double y = rp[a];
    double rho = 1.0;
    bool odd = false;
    int next = start; // 0 -> reflect in hi first, 1 -> in lo first
    for (int k = 1; k <= geom.n_img; ++k) {
      const double m = (next == 0) ? hi : lo;
      y = 2.0 * m - y;
      next = 1 - next;
      rho *= geom.reflectivity;
      odd = !odd;
      Vec3 img = rp;
      img[a] = y;
      Mat3 term = im_g_free(r, img, omega);
      if (odd) term = term * sig;
      out += rho * term;
    }
  }
  return out;
}

/// Evaluate with the bounce count doubled until the xx component changes by
/// less than `rel_tol`, starting from geom.n_img. Throws if the cap is hit.
inline Mat3 im_g_mirror_converged(const Vec3& r, const Vec3& rp, double omega,
                                  MirrorGeometry geom, double rel_tol = 1e-6,
                                  int n_cap = 1 << 22) {
  Mat3 prev = im_g_mirror(r, rp, omega, geom);
  while (geom.n_img < n_cap) {
    geom.n_img *= 2;
    const Mat3 cur = im_g_mirror(r, rp, omega, geom);
    const double scale = std::max(std::abs(cur(0, 0)), 1e-300);
    if (std::abs(cur(0, 0) - prev(0, 0)) < rel_tol * scale) return cur;
    prev = cur;
  }
  throw std::runtime_error("im_g_mirror_converged: image series did not settle");
}

class MirrorGreens : public GreensProvider {
public:
  explicit MirrorGreens(MirrorGeometry geom) : geom_(geom) { geom_.validate(); }

  Mat3 im_g(const Vec3& r, const Vec3& rp, double omega) const override {
    return im_g_mirror(r, rp, omega, geom_);
  }

  std::string id() const override {
    std::ostringstream os;
    if (geom_.kind == MirrorGeometry::Kind::half_space)
      os << "half_space(axis=" << geom_.axis << ",wall=" << geom_.wall;
    else
      os << "parallel_plates(axis=" << geom_.axis << ",L=" << geom_.separation;
    os << ",n_img=" << geom_.n_img << ",refl=" << geom_.reflectivity << ")";
    return os.str();
  }

  const MirrorGeometry& geometry() const { return geom_; }

private:
  MirrorGeometry geom_;
};

// ---------------------------------------------------------------------------
// Tabulated ingestion of solver exports.
//
// File format: CSV with header `omega_rad_s, ix, iz, re_gxx, im_gxx` where
// (ix, iz) are the stencil offset indices of (r, r') along the stencil axis,
// each in {-1, 0, +1}. A JSON sidecar `<path>.meta.json` declares the stencil:
//   { "version": 1, "axis": 0|1|2, "step_m": h, "origin_m": [x, y, z],
//     "units": { "omega": "rad_s", "gxx": "1_per_m" } }
// Only the xx component is tabulated; queries for other stencil positions or
// out-of-band frequencies are rejected.
// ---------------------------------------------------------------------------

struct TabulatedStencil {
  int axis = 1;
  double step = 0.0;
  Vec3 origin = Vec3::Zero();
};

class TabulatedGreens : public GreensProvider {
public:
  TabulatedGreens(TabulatedStencil stencil, std::vector<double> omega,
                  std::array<std::array<std::vector<double>, 3>, 3> im_xx)
      : stencil_(stencil), omega_(std::move(omega)), im_xx_(std::move(im_xx)) {
    validate();
  }

  Mat3 im_g(const Vec3& r, const Vec3& rp, double omega) const override {
    const int ir = offset_index(r);
    const int irp = offset_index(rp);
    Mat3 out = Mat3::Zero();
    out(0, 0) = interp(im_xx_[static_cast<size_t>(ir + 1)][static_cast<size_t>(irp + 1)], omega);
    return out;
  }

  std::pair<double, double> band() const override {
    return {omega_.front(), omega_.back()};
  }

  std::string id() const override { return "tabulated"; }

  const TabulatedStencil& stencil() const { return stencil_; }
  const std::vector<double>& grid() const { return omega_; }

private:
  void validate() const {
    if (omega_.size() < 2)
      throw std::invalid_argument("TabulatedGreens: need at least 2 frequencies");
    for (size_t k = 1; k < omega_.size(); ++k)
      if (!(omega_[k] > omega_[k - 1]))
        throw std::invalid_argument(
            "TabulatedGreens: frequency grid not strictly increasing at row " +
            std::to_string(k));
    for (const auto& row : im_xx_)
      for (const auto& col : row)
        if (col.size() != omega_.size())
          throw std::invalid_argument("TabulatedGreens: stencil column length mismatch");
    if (stencil_.step <= 0.0)
      throw std::invalid_argument("TabulatedGreens: stencil step must be > 0");
  }

  int offset_index(const Vec3& r) const {
    const Vec3 d = r - stencil_.origin;
    const double tol = 1e-6 * stencil_.step;
    for (int c = 0; c < 3; ++c) {
      if (c == stencil_.axis) continue;
      if (std::abs(d[c]) > tol)
        throw std::domain_error("TabulatedGreens: point off the tabulated stencil");
    }
    const double s = d[stencil_.axis] / stencil_.step;
    for (int k = -1; k <= 1; ++k)
      if (std::abs(s - k) < 1e-6) return k;
    throw std::domain_error("TabulatedGreens: point off the tabulated stencil");
  }

  // Cubic Lagrange interpolation on the 4 nearest samples; linear in the
  // first and last grid interval.
  double interp(const std::vector<double>& y, double w) const {
    if (w < omega_.front() || w > omega_.back())
      throw std::domain_error("TabulatedGreens: frequency outside tabulated band");
    const auto it = std::upper_bound(omega_.begin(), omega_.end(), w);
    size_t j = static_cast<size_t>(std::distance(omega_.begin(), it));
    if (j == 0) j = 1;
    if (j >= omega_.size()) j = omega_.size() - 1;
    const size_t i = j - 1; // w in [omega_[i], omega_[j]]
    if (i == 0 || j == omega_.size() - 1) {
      const double t = (w - omega_[i]) / (omega_[j] - omega_[i]);
      return (1.0 - t) * y[i] + t * y[j];
    }
    const size_t k0 = i - 1;
    double out = 0.0;
    for (size_t m = 0; m < 4; ++m) {
      double lm = 1.0;
      for (size_t n = 0; n < 4; ++n) {
        if (n == m) continue;
        lm *= (w - omega_[k0 + n]) / (omega_[k0 + m] - omega_[k0 + n]);
      }
      out += lm * y[k0 + m];
    }
    return out;
  }

  TabulatedStencil stencil_;
  std::vector<double> omega_;
  // im_xx_[ir+1][irp+1][freq index]
  std::array<std::array<std::vector<double>, 3>, 3> im_xx_;
};

/// Export Im G_xx samples of `g` on a 3x3 offset stencil to `path` (CSV) and
/// `path + ".meta.json"` (sidecar). The Re part column is written as 0 unless
/// a complex provider is wired in; the loader only consumes im_gxx.
inline void save_tabulated(const GreensProvider& g, const TabulatedStencil& st,
                           const std::vector<double>& omega, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("save_tabulated: cannot open " + path);
  f << "omega_rad_s, ix, iz, re_gxx, im_gxx\n";
  char buf[512];
  for (double w : omega) {
    for (int ir = -1; ir <= 1; ++ir) {
      for (int irp = -1; irp <= 1; ++irp) {
        Vec3 r = st.origin, rp = st.origin;
        r[st.axis] += ir * st.step;
        rp[st.axis] += irp * st.step;
        const double v = g.im_g_xx(r, rp, w);
        std::snprintf(buf, sizeof(buf), "%.17g, %d, %d, %.17g, %.17g\n", w, ir, irp, 0.0, v);
        f << buf;
      }
    }
  }
  nlohmann::json meta = {
      {"version", 1},
      {"axis", st.axis},
      {"step_m", st.step},
      {"origin_m", {st.origin[0], st.origin[1], st.origin[2]}},
      {"units", {{"omega", "rad_s"}, {"gxx", "1_per_m"}}},
  };
  std::ofstream mf(path + ".meta.json");
  if (!mf) throw std::runtime_error("save_tabulated: cannot open sidecar for " + path);
  mf << meta.dump(2) << "\n";
}

inline std::shared_ptr<TabulatedGreens> load_tabulated(const std::string& path) {
  std::ifstream mf(path + ".meta.json");
  if (!mf) throw std::runtime_error("load_tabulated: missing sidecar " + path + ".meta.json");
  nlohmann::json meta;
  mf >> meta;
  if (meta.value("version", 0) != 1)
    throw std::runtime_error("load_tabulated: unsupported sidecar version");
  TabulatedStencil st;
  st.axis = meta.at("axis").get<int>();
  st.step = meta.at("step_m").get<double>();
  const auto o = meta.at("origin_m");
  st.origin = Vec3(o.at(0).get<double>(), o.at(1).get<double>(), o.at(2).get<double>());

  std::ifstream f(path);
  if (!f) throw std::runtime_error("load_tabulated: cannot open " + path);
  std::string line;
  if (!std::getline(f, line))
    throw std::runtime_error("load_tabulated: empty file " + path);
  {
    std::string h = line;
    h.erase(std::remove_if(h.begin(), h.end(), [](char ch) { return ch == ' ' || ch == '\r'; }), h.end());
    if (h != "omega_rad_s,ix,iz,re_gxx,im_gxx")
      throw std::runtime_error("load_tabulated: bad header in " + path + ": " + line);
  }

  std::vector<double> omega;
  std::array<std::array<std::vector<double>, 3>, 3> vals;
  int row = 1;
  double cur_w = std::numeric_limits<double>::quiet_NaN();
  int seen = 0; // stencil entries seen for the current frequency
  bool got[3][3] = {};
  while (std::getline(f, line)) {
    ++row;
    if (line.empty()) continue;
    std::replace(line.begin(), line.end(), ',', ' ');
    std::istringstream is(line);
    double w, re, im;
    int ix, iz;
    if (!(is >> w >> ix >> iz >> re >> im))
      throw std::runtime_error("load_tabulated: parse error at row " + std::to_string(row));
    if (ix < -1 || ix > 1 || iz < -1 || iz > 1)
      throw std::runtime_error("load_tabulated: stencil index out of range at row " +
                               std::to_string(row));
    // A completed stencil block followed by the same frequency is a
    // duplicated block, not a continuation.
    if (omega.empty() || w != cur_w || seen == 9) {
      if (!omega.empty() && seen != 9)
        throw std::runtime_error("load_tabulated: incomplete stencil before row " +
                                 std::to_string(row));
      if (!omega.empty() && w == omega.back())
        throw std::runtime_error("load_tabulated: duplicated frequency at row " +
                                 std::to_string(row));
      if (!omega.empty() && w < omega.back())
        throw std::runtime_error("load_tabulated: non-monotone frequency grid at row " +
                                 std::to_string(row));
      omega.push_back(w);
      cur_w = w;
      seen = 0;
      std::memset(got, 0, sizeof(got));
    }
    if (got[ix + 1][iz + 1])
      throw std::runtime_error("load_tabulated: repeated stencil entry at row " +
                               std::to_string(row));
    got[ix + 1][iz + 1] = true;
    vals[static_cast<size_t>(ix + 1)][static_cast<size_t>(iz + 1)].push_back(im);
    ++seen;
  }
  if (omega.empty())
    throw std::runtime_error("load_tabulated: no data rows in " + path);
  if (seen != 9)
    throw std::runtime_error("load_tabulated: incomplete stencil at end of " + path);
  return std::make_shared<TabulatedGreens>(st, std::move(omega), std::move(vals));
}

} // namespace recoil

#endif
