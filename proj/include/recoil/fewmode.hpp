#ifndef RECOIL_FEWMODE_HPP
#define RECOIL_FEWMODE_HPP

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <complex>
#include <limits>
#include <numeric>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "recoil/spectral.hpp"

namespace recoil {

/// N discrete lossy modes: couplings g, decays kappa, and the real symmetric
/// frequency/coupling matrix Lambda (diagonal entries are detunings from the
/// rotating-frame origin).
struct FewModeModel {
  Eigen::VectorXd g;       // rad/s
  Eigen::VectorXd kappa;   // rad/s, all > 0
  Eigen::MatrixXd lambda;  // rad/s, N x N symmetric

  int n() const { return static_cast<int>(g.size()); }

  void validate() const {
    const int N = n();
    if (kappa.size() != N || lambda.rows() != N || lambda.cols() != N)
      throw std::invalid_argument("FewModeModel: inconsistent dimensions");
    for (int b = 0; b < N; ++b)
      if (!(kappa[b] > 0.0)) throw std::invalid_argument("FewModeModel: kappa must be > 0");
    if (!lambda.isApprox(lambda.transpose(), 1e-12))
      throw std::invalid_argument("FewModeModel: Lambda must be symmetric");
  }
};

/// J_mod(omega) = pi^-1 g . Im[(Lambda - i diag(kappa)/2 - omega I)^-1] . g.
/// Nonnegative for kappa > 0 (the Im part of the resolvent is PSD).
inline double eval_jmod(const FewModeModel& m, double omega) {
  const int N = m.n();
  Eigen::MatrixXcd a = m.lambda.cast<std::complex<double>>();
  for (int b = 0; b < N; ++b) a(b, b) -= std::complex<double>(omega, 0.5 * m.kappa[b]);
  // a = Lambda - omega I - i diag(kappa/2)
  const Eigen::VectorXcd x = a.partialPivLu().solve(m.g.cast<std::complex<double>>());
  const std::complex<double> q = m.g.cast<std::complex<double>>().dot(x); // g^T x (g real)
  return q.imag() / pi;
}

enum class ModeLabel { narrow, broad, detuned };

inline std::string to_string(ModeLabel l) {
  switch (l) {
    case ModeLabel::narrow: return "narrow";
    case ModeLabel::broad: return "broad";
    default: return "detuned";
  }
}

struct ClassifyOptions {
  double ratio_thresh = 10.0;  // broad: kappa > ratio * max(kappa_narrow, |Lambda_bb|, g)
  double detune_thresh = 10.0; // detuned: |Lambda_bb| > detune * kappa
};

inline std::vector<ModeLabel> classify_modes(const FewModeModel& m,
                                             const ClassifyOptions& opts = {}) {
  m.validate();
  const int N = m.n();
  const double kappa_narrow = m.kappa.minCoeff();
  std::vector<ModeLabel> labels(static_cast<size_t>(N), ModeLabel::narrow);
  for (int b = 0; b < N; ++b) {
    const double scale = std::max({kappa_narrow, std::abs(m.lambda(b, b)), std::abs(m.g[b])});
    if (m.kappa[b] > opts.ratio_thresh * scale)
      labels[static_cast<size_t>(b)] = ModeLabel::broad;
    else if (std::abs(m.lambda(b, b)) > opts.detune_thresh * m.kappa[b])
      labels[static_cast<size_t>(b)] = ModeLabel::detuned;
  }
  return labels;
}

/// Gauge-fix a model for comparisons: modes sorted by Lambda diagonal, then
/// g >= 0 (a sign flip of mode b together with its Lambda row/column leaves
/// J_mod invariant).
inline FewModeModel canonical_form(const FewModeModel& m) {
  const int N = m.n();
  std::vector<int> idx(static_cast<size_t>(N));
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(),
            [&](int a, int b) { return m.lambda(a, a) < m.lambda(b, b); });
  FewModeModel out;
  out.g.resize(N);
  out.kappa.resize(N);
  out.lambda.resize(N, N);
  for (int a = 0; a < N; ++a) {
    out.g[a] = m.g[idx[static_cast<size_t>(a)]];
    out.kappa[a] = m.kappa[idx[static_cast<size_t>(a)]];
    for (int b = 0; b < N; ++b)
      out.lambda(a, b) = m.lambda(idx[static_cast<size_t>(a)], idx[static_cast<size_t>(b)]);
  }
  for (int a = 0; a < N; ++a) {
    if (out.g[a] < 0.0) {
      out.g[a] = -out.g[a];
      for (int b = 0; b < N; ++b) {
        if (b == a) continue;
        out.lambda(a, b) = -out.lambda(a, b);
        out.lambda(b, a) = -out.lambda(b, a);
      }
    }
  }
  return out;
}

/// Move the model to a frame rotating at `delta`: the Lambda diagonal shifts
/// down by delta, rates and couplings are frame-independent. A model fitted
/// against absolute frequencies becomes a detuned-frame model (and back with
/// -delta).
inline FewModeModel shift_frame(const FewModeModel& m, double delta) {
  FewModeModel out = m;
  for (int b = 0; b < m.n(); ++b) out.lambda(b, b) -= delta;
  return out;
}

struct FitOptions {
  std::uint64_t seed = 1234;
  int restarts = 8;
  int max_iterations = 600;
  double gradient_tol = 1e-14;
  double step_tol = 1e-13;
};

struct FitReport {
  FewModeModel model;
  double residual = 0.0; // relative RMS of J_mod/J - 1 on the fit grid
  std::vector<ModeLabel> labels;
  int iterations = 0;
  int restarts_used = 0;
  bool converged = false;
  std::uint64_t seed = 0;
};

namespace detail {

struct LmResult {
  Eigen::VectorXd x;
  double cost = 0.0;
  int iterations = 0;
  bool converged = false;
};

/// Plain Levenberg-Marquardt with forward-difference Jacobian.
template <typename ResidualFn>
LmResult levenberg_marquardt(const ResidualFn& fn, Eigen::VectorXd x, int max_iter,
                             double gtol, double xtol) {
  const int np = static_cast<int>(x.size());
  Eigen::VectorXd r = fn(x);
  double cost = 0.5 * r.squaredNorm();
  double lm_lambda = 1e-3;
  LmResult out;
  out.converged = false;

  for (int it = 0; it < max_iter; ++it) {
    out.iterations = it + 1;
    Eigen::MatrixXd jac(r.size(), np);
    for (int p = 0; p < np; ++p) {
      const double step = 1e-7 * std::max(1.0, std::abs(x[p]));
      Eigen::VectorXd xp = x;
      xp[p] += step;
      jac.col(p) = (fn(xp) - r) / step;
    }
    const Eigen::VectorXd grad = jac.transpose() * r;
    if (grad.lpNorm<Eigen::Infinity>() < gtol) {
      out.converged = true;
      break;
    }
    const Eigen::MatrixXd jtj = jac.transpose() * jac;
    bool stepped = false;
    for (int tries = 0; tries < 25; ++tries) {
      Eigen::MatrixXd h = jtj;
      for (int p = 0; p < np; ++p) h(p, p) += lm_lambda * std::max(jtj(p, p), 1e-12);
      const Eigen::VectorXd delta = h.ldlt().solve(-grad);
      const Eigen::VectorXd xn = x + delta;
      const Eigen::VectorXd rn = fn(xn);
      const double cn = 0.5 * rn.squaredNorm();
      if (std::isfinite(cn) && cn < cost) {
        const double rel_step = delta.norm() / std::max(1.0, x.norm());
        x = xn;
        r = rn;
        const double improvement = (cost - cn) / std::max(cost, 1e-300);
        cost = cn;
        lm_lambda = std::max(lm_lambda * 0.3, 1e-14);
        stepped = true;
        if (rel_step < xtol || improvement < 1e-15) {
          out.converged = true;
          it = max_iter; // done
        }
        break;
      }
      lm_lambda *= 4.0;
      if (lm_lambda > 1e16) break;
    }
    if (!stepped) {
      out.converged = true; // stuck in a flat/locally optimal spot
      break;
    }
  }
  out.x = x;
  out.cost = cost;
  return out;
}

// Parameter packing: [g_0.., zeta_0.. (kappa = exp zeta), Ldiag_0.., Loff...].
inline Eigen::VectorXd pack(const FewModeModel& m) {
  const int N = m.n();
  Eigen::VectorXd x(3 * N + N * (N - 1) / 2);
  for (int b = 0; b < N; ++b) {
    x[b] = m.g[b];
    x[N + b] = std::log(m.kappa[b]);
    x[2 * N + b] = m.lambda(b, b);
  }
  int k = 3 * N;
  for (int a = 0; a < N; ++a)
    for (int b = a + 1; b < N; ++b) x[k++] = m.lambda(a, b);
  return x;
}

inline FewModeModel unpack(const Eigen::VectorXd& x, int N) {
  FewModeModel m;
  m.g.resize(N);
  m.kappa.resize(N);
  m.lambda = Eigen::MatrixXd::Zero(N, N);
  for (int b = 0; b < N; ++b) {
    m.g[b] = x[b];
    m.kappa[b] = std::exp(std::min(x[N + b], 700.0));
    m.lambda(b, b) = x[2 * N + b];
  }
  int k = 3 * N;
  for (int a = 0; a < N; ++a)
    for (int b = a + 1; b < N; ++b) {
      m.lambda(a, b) = x[k];
      m.lambda(b, a) = x[k];
      ++k;
    }
  return m;
}

struct Peak {
  size_t index;
  double height;
  double fwhm;
};

// Prominence-style peak picking on the samples: local maxima that rise above
// a multiple of the median background, widths from half-maximum crossings.
inline std::vector<Peak> find_peaks(const std::vector<double>& w, const std::vector<double>& j) {
  std::vector<double> sorted = j;
  std::sort(sorted.begin(), sorted.end());
  const double background = sorted[sorted.size() / 2];
  std::vector<Peak> peaks;
  for (size_t k = 1; k + 1 < j.size(); ++k) {
    if (j[k] <= j[k - 1] || j[k] < j[k + 1]) continue;
    if (j[k] < 3.0 * background) continue;
    const double half = 0.5 * (j[k] + background);
    size_t l = k, r = k;
    while (l > 0 && j[l] > half) --l;
    while (r + 1 < j.size() && j[r] > half) ++r;
    Peak pk;
    pk.index = k;
    pk.height = j[k];
    pk.fwhm = std::max(w[r] - w[l], w[1] - w[0]);
    peaks.push_back(pk);
  }
  std::sort(peaks.begin(), peaks.end(),
            [](const Peak& a, const Peak& b) { return a.height > b.height; });
  // Drop shoulders of already-accepted peaks.
  std::vector<Peak> kept;
  for (const auto& pk : peaks) {
    bool shadowed = false;
    for (const auto& q : kept)
      if (std::abs(w[pk.index] - w[q.index]) < q.fwhm) shadowed = true;
    if (!shadowed) kept.push_back(pk);
  }
  return kept;
}

} // namespace detail

/// Relative RMS residual of the model against samples.
inline double fit_residual(const FewModeModel& m, const std::vector<double>& omega,
                           const std::vector<double>& j) {
  double acc = 0.0;
  for (size_t k = 0; k < omega.size(); ++k) {
    const double rel = eval_jmod(m, omega[k]) / j[k] - 1.0;
    acc += rel * rel;
  }
  return std::sqrt(acc / static_cast<double>(omega.size()));
}

/// Weighted nonlinear least squares of J_mod against the samples, minimizing
/// log-space residuals (the density spans orders of magnitude between peak
/// and background). Deterministic given opts.seed; best of opts.restarts
/// jittered initializations.
inline FitReport fit_fewmode(const SpectralDensity& samples, int n_modes,
                             const FitOptions& opts = {}) {
  samples.validate();
  if (n_modes < 1) throw std::invalid_argument("fit_fewmode: N must be >= 1");
  if (samples.omega.size() < static_cast<size_t>(3 * n_modes + n_modes * (n_modes - 1) / 2))
    throw std::invalid_argument("fit_fewmode: not enough samples for the parameter count");
  for (double v : samples.j)
    if (!(v > 0.0))
      throw std::invalid_argument(
          "fit_fewmode: nonpositive J sample; mask the input before fitting");

  // Work in shifted/scaled units: detuning from the window center in units of
  // the window width. All rates scale linearly, J scales by 1/width.
  const double wc = 0.5 * (samples.omega.front() + samples.omega.back());
  const double width = samples.omega.back() - samples.omega.front();
  if (!(width > 0.0)) throw std::invalid_argument("fit_fewmode: degenerate window");
  std::vector<double> ws(samples.omega.size()), js(samples.j.size());
  for (size_t k = 0; k < ws.size(); ++k) {
    ws[k] = (samples.omega[k] - wc) / width;
    js[k] = samples.j[k] / width;
  }

  std::vector<double> logj(js.size());
  for (size_t k = 0; k < js.size(); ++k) logj[k] = std::log(js[k]);

  auto residuals = [&](const Eigen::VectorXd& x) {
    const FewModeModel m = detail::unpack(x, n_modes);
    Eigen::VectorXd r(static_cast<Eigen::Index>(ws.size()));
    for (size_t k = 0; k < ws.size(); ++k) {
      const double v = eval_jmod(m, ws[k]);
      r[static_cast<Eigen::Index>(k)] =
          (v > 0.0) ? std::log(v) - logj[k] : 40.0; // off-manifold penalty
    }
    return r;
  };

  // Base initialization: narrow modes at detected peaks, one broad mode
  // covering the window background.
  const auto peaks = detail::find_peaks(ws, js);
  std::vector<double> sorted = js;
  std::sort(sorted.begin(), sorted.end());
  const double bg = std::max(sorted[sorted.size() / 2], 1e-300);

  FewModeModel base;
  base.g.resize(n_modes);
  base.kappa.resize(n_modes);
  base.lambda = Eigen::MatrixXd::Zero(n_modes, n_modes);
  int assigned = 0;
  for (const auto& pk : peaks) {
    if (assigned >= n_modes - 1) break;
    base.lambda(assigned, assigned) = ws[pk.index];
    base.kappa[assigned] = pk.fwhm;
    base.g[assigned] = std::sqrt(pi * pk.fwhm * pk.height / 2.0);
    ++assigned;
  }
  // Remaining narrow slots spread across the window.
  for (int b = assigned; b < n_modes - 1; ++b) {
    base.lambda(b, b) = -0.25 + 0.5 * (b - assigned + 1) / std::max(1, n_modes - 1 - assigned);
    base.kappa[b] = 0.1;
    base.g[b] = std::sqrt(pi * base.kappa[b] * bg / 2.0);
  }
  // Broad background mode.
  base.lambda(n_modes - 1, n_modes - 1) = 0.0;
  base.kappa[n_modes - 1] = 1.0;
  base.g[n_modes - 1] = std::sqrt(pi * 1.0 * bg / 2.0);

  std::mt19937_64 rng(opts.seed);
  std::normal_distribution<double> gauss(0.0, 1.0);

  FitReport best;
  best.residual = std::numeric_limits<double>::infinity();
  best.seed = opts.seed;
  for (int restart = 0; restart < std::max(1, opts.restarts); ++restart) {
    FewModeModel init = base;
    if (restart > 0) {
      for (int b = 0; b < n_modes; ++b) {
        init.g[b] *= std::exp(0.3 * gauss(rng));
        init.kappa[b] *= std::exp(0.4 * gauss(rng));
        init.lambda(b, b) += 0.05 * gauss(rng);
      }
    }
    const auto lm = detail::levenberg_marquardt(residuals, detail::pack(init),
                                                opts.max_iterations, opts.gradient_tol,
                                                opts.step_tol);
    const FewModeModel m = detail::unpack(lm.x, n_modes);
    const double res = fit_residual(m, ws, js);
    if (res < best.residual) {
      best.model = m;
      best.residual = res;
      best.iterations = lm.iterations;
      best.converged = lm.converged;
      best.restarts_used = restart + 1;
    }
  }

  if (!std::isfinite(best.residual))
    throw std::runtime_error("fit_fewmode: no restart produced a finite fit");

  // Back to physical units. Classification happens in the window-centered
  // frame (raw Lambda diagonals would swamp the detuning thresholds), and the
  // canonical ordering is shift-invariant, so the wc shift comes last.
  best.model.g *= width;
  best.model.kappa *= width;
  best.model.lambda *= width;
  best.model = canonical_form(best.model);
  best.labels = classify_modes(best.model);
  best.model = shift_frame(best.model, -wc);
  return best;
}

/// Smallest N in [1, n_max] whose fit meets `tol` (relative RMS residual).
inline FitReport select_model_order(const SpectralDensity& samples, double tol, int n_max,
                                    const FitOptions& opts = {}) {
  if (!(tol > 0.0)) throw std::invalid_argument("select_model_order: tol must be > 0");
  std::string trace;
  for (int n = 1; n <= n_max; ++n) {
    FitReport rep = fit_fewmode(samples, n, opts);
    trace += (n > 1 ? ", " : "") + std::string("N=") + std::to_string(n) + ": " +
             std::to_string(rep.residual);
    if (rep.residual < tol) return rep;
  }
  throw std::runtime_error("select_model_order: no N <= " + std::to_string(n_max) +
                           " met tol (residuals " + trace + ")");
}

// FitReport JSON: {N, g[], kappa[], Lambda[][], residual, labels[], seed}.
inline nlohmann::json fit_report_to_json(const FitReport& rep) {
  const int N = rep.model.n();
  nlohmann::json out;
  out["N"] = N;
  out["g"] = std::vector<double>(rep.model.g.data(), rep.model.g.data() + N);
  out["kappa"] = std::vector<double>(rep.model.kappa.data(), rep.model.kappa.data() + N);
  std::vector<std::vector<double>> lam(static_cast<size_t>(N));
  for (int a = 0; a < N; ++a) {
    lam[static_cast<size_t>(a)].resize(static_cast<size_t>(N));
    for (int b = 0; b < N; ++b) lam[static_cast<size_t>(a)][static_cast<size_t>(b)] = rep.model.lambda(a, b);
  }
  out["Lambda"] = lam;
  out["residual"] = rep.residual;
  std::vector<std::string> labels;
  for (auto l : rep.labels) labels.push_back(to_string(l));
  out["labels"] = labels;
  out["seed"] = rep.seed;
  out["converged"] = rep.converged;
  out["iterations"] = rep.iterations;
  return out;
}

inline FitReport fit_report_from_json(const nlohmann::json& in) {
  FitReport rep;
  const int N = in.at("N").get<int>();
  const auto g = in.at("g").get<std::vector<double>>();
  const auto kap = in.at("kappa").get<std::vector<double>>();
  const auto lam = in.at("Lambda").get<std::vector<std::vector<double>>>();
  rep.model.g = Eigen::Map<const Eigen::VectorXd>(g.data(), N);
  rep.model.kappa = Eigen::Map<const Eigen::VectorXd>(kap.data(), N);
  rep.model.lambda.resize(N, N);
  for (int a = 0; a < N; ++a)
    for (int b = 0; b < N; ++b) rep.model.lambda(a, b) = lam[static_cast<size_t>(a)][static_cast<size_t>(b)];
  rep.residual = in.value("residual", 0.0);
  rep.seed = in.value("seed", std::uint64_t{0});
  rep.converged = in.value("converged", true);
  rep.iterations = in.value("iterations", 0);
  if (in.contains("labels")) {
    for (const auto& s : in.at("labels")) {
      const std::string v = s.get<std::string>();
      rep.labels.push_back(v == "narrow" ? ModeLabel::narrow
                                         : v == "broad" ? ModeLabel::broad : ModeLabel::detuned);
    }
  } else {
    rep.labels = classify_modes(rep.model);
  }
  return rep;
}

} // namespace recoil

#endif
