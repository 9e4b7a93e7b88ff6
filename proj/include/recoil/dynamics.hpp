#ifndef RECOIL_DYNAMICS_HPP
#define RECOIL_DYNAMICS_HPP

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>
#include <Eigen/Sparse>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "recoil/constants.hpp"
#include "recoil/fewmode.hpp"
#include "recoil/reduce.hpp"
#include "recoil/spectral.hpp"

namespace recoil {

// Quadrature convention: q = b + b^dag, p = i(b^dag - b), [q, p] = 2i,
// vacuum covariance = identity. The recoil double commutator
// -(Gamma/2)[q,[q,rho]] maps to pure momentum diffusion D_pp += 4 Gamma,
// fixed so that d<n>/dt = Gamma exactly at g = 0 (see README for the
// two-line derivation).

/// One mechanical mode (index 0) bilinearly coupled to M optical modes.
/// Frequencies are rotating-frame detunings; detuning[0] is the mechanical
/// frequency itself.
struct LinearModel {
  Eigen::VectorXd detuning;       // rad/s, per mode
  Eigen::VectorXd kappa;          // rad/s, per mode (decay; mechanical usually 0)
  Eigen::VectorXd coupling;       // rad/s, g_beta to the mechanical q; [0] unused
  Eigen::MatrixXd mode_coupling;  // rad/s, optical-optical omega_bb'; symmetric
  double recoil_gamma = 0.0;      // rad/s, q-dephasing on the mechanics
  double recurrence_horizon = std::numeric_limits<double>::infinity();

  int n_modes() const { return static_cast<int>(detuning.size()); }
  int dim() const { return 2 * n_modes(); }

  void validate() const {
    const int n = n_modes();
    if (n < 1) throw std::invalid_argument("LinearModel: need at least the mechanical mode");
    if (kappa.size() != n || coupling.size() != n)
      throw std::invalid_argument("LinearModel: inconsistent vector sizes");
    if (mode_coupling.rows() != n || mode_coupling.cols() != n)
      throw std::invalid_argument("LinearModel: inconsistent mode_coupling size");
    for (int k = 0; k < n; ++k)
      if (kappa[k] < 0.0) throw std::invalid_argument("LinearModel: negative decay rate");
    if (recoil_gamma < 0.0) throw std::invalid_argument("LinearModel: negative recoil rate");
  }

  /// Drift matrix over quadratures (q_0, p_0, q_1, p_1, ...).
  Eigen::SparseMatrix<double> drift() const {
    validate();
    const int n = n_modes();
    std::vector<Eigen::Triplet<double>> trip;
    trip.reserve(static_cast<size_t>(8 * n));
    for (int k = 0; k < n; ++k) {
      const int q = 2 * k, p = 2 * k + 1;
      if (detuning[k] != 0.0) {
        trip.emplace_back(q, p, detuning[k]);
        trip.emplace_back(p, q, -detuning[k]);
      }
      if (kappa[k] != 0.0) {
        trip.emplace_back(q, q, -0.5 * kappa[k]);
        trip.emplace_back(p, p, -0.5 * kappa[k]);
      }
      if (k > 0 && coupling[k] != 0.0) {
        // H/hbar = g q_0 q_k
        trip.emplace_back(1, 2 * k, -2.0 * coupling[k]);      // dp_0/dt
        trip.emplace_back(2 * k + 1, 0, -2.0 * coupling[k]);  // dp_k/dt
      }
    }
    for (int a = 1; a < n; ++a)
      for (int b = a + 1; b < n; ++b) {
        const double w = mode_coupling(a, b);
        if (w == 0.0) continue;
        // H/hbar = w (q_a q_b + p_a p_b) / 2 per beam-splitter pair
        trip.emplace_back(2 * a, 2 * b + 1, w);
        trip.emplace_back(2 * a + 1, 2 * b, -w);
        trip.emplace_back(2 * b, 2 * a + 1, w);
        trip.emplace_back(2 * b + 1, 2 * a, -w);
      }
    Eigen::SparseMatrix<double> a(dim(), dim());
    a.setFromTriplets(trip.begin(), trip.end());
    return a;
  }

  /// Diffusion matrix is diagonal in this convention.
  Eigen::VectorXd diffusion_diag() const {
    const int n = n_modes();
    Eigen::VectorXd d = Eigen::VectorXd::Zero(dim());
    for (int k = 0; k < n; ++k) {
      d[2 * k] += kappa[k];
      d[2 * k + 1] += kappa[k];
    }
    d[1] += 4.0 * recoil_gamma;
    return d;
  }
};

struct GaussianState {
  Eigen::VectorXd mean;
  Eigen::MatrixXd cov;

  static GaussianState vacuum(int n_modes) {
    GaussianState s;
    s.mean = Eigen::VectorXd::Zero(2 * n_modes);
    s.cov = Eigen::MatrixXd::Identity(2 * n_modes, 2 * n_modes);
    return s;
  }

  int n_modes() const { return static_cast<int>(mean.size()) / 2; }
};

/// Minimum eigenvalue of sigma + i Omega_sympl (>= -tol for a physical state).
inline double physicality_margin(const GaussianState& s) {
  const int d = static_cast<int>(s.mean.size());
  Eigen::MatrixXcd m = s.cov.cast<std::complex<double>>();
  for (int k = 0; k < d / 2; ++k) {
    m(2 * k, 2 * k + 1) += std::complex<double>(0.0, 1.0);
    m(2 * k + 1, 2 * k) += std::complex<double>(0.0, -1.0);
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXcd> es(m, Eigen::EigenvaluesOnly);
  return es.eigenvalues().minCoeff();
}

inline bool is_physical(const GaussianState& s, double tol = 1e-9) {
  return physicality_margin(s) >= -tol * std::max(1.0, s.cov.norm());
}

/// n = (sigma_qq + sigma_pp + qbar^2 + pbar^2 - 2) / 4.
inline double phonon_occupation(const GaussianState& s, int mode_index = 0) {
  const int q = 2 * mode_index, p = 2 * mode_index + 1;
  if (p >= s.mean.size()) throw std::invalid_argument("phonon_occupation: bad mode index");
  return 0.25 * (s.cov(q, q) + s.cov(p, p) + s.mean[q] * s.mean[q] + s.mean[p] * s.mean[p] - 2.0);
}

/// Two-mode model of the reduced master equation. `omega0` is the rotating
/// frame origin (the tweezer frequency).
inline LinearModel build_linear_model(const ReducedModel& m, double omega0,
                                      bool include_recoil = true) {
  LinearModel out;
  out.detuning = Eigen::Vector2d(m.omega_mech, m.omega_c - omega0);
  out.kappa = Eigen::Vector2d(0.0, m.kappa);
  out.coupling = Eigen::Vector2d(0.0, m.g);
  out.mode_coupling = Eigen::Matrix2d::Zero();
  out.recoil_gamma = include_recoil ? m.gamma : 0.0;
  out.validate();
  return out;
}

/// Full N-mode model of the fitted few-mode master equation.
inline LinearModel build_linear_model(const FewModeModel& m, double omega_mech) {
  m.validate();
  const int n = m.n() + 1;
  LinearModel out;
  out.detuning.resize(n);
  out.kappa.resize(n);
  out.coupling.resize(n);
  out.mode_coupling = Eigen::MatrixXd::Zero(n, n);
  out.detuning[0] = omega_mech;
  out.kappa[0] = 0.0;
  out.coupling[0] = 0.0;
  for (int b = 0; b < m.n(); ++b) {
    out.detuning[b + 1] = m.lambda(b, b);
    out.kappa[b + 1] = m.kappa[b];
    out.coupling[b + 1] = m.g[b];
    for (int c = 0; c < m.n(); ++c)
      if (b != c) out.mode_coupling(b + 1, c + 1) = m.lambda(b, c);
  }
  out.validate();
  return out;
}

/// Brute-force discretization of a sampled continuum: M modes on a uniform
/// grid across the sampled band, couplings g_k = sqrt(J(omega_k) domega),
/// zero intrinsic decay. Valid up to the recurrence time 2 pi / domega.
inline LinearModel discretize_continuum(const SpectralDensity& j, int n_modes,
                                        double omega_mech, double omega0) {
  j.validate();
  if (n_modes < 2) throw std::invalid_argument("discretize_continuum: need at least 2 modes");
  const double lo = j.omega.front(), hi = j.omega.back();
  if (!(hi > lo)) throw std::invalid_argument("discretize_continuum: degenerate band");
  const double dw = (hi - lo) / n_modes;
  if (omega0 - omega_mech < lo || omega0 + omega_mech > hi)
    throw std::invalid_argument(
        "discretize_continuum: band does not enclose the mechanical sidebands");

  LinearModel out;
  const int n = n_modes + 1;
  out.detuning.resize(n);
  out.kappa = Eigen::VectorXd::Zero(n);
  out.coupling.resize(n);
  out.mode_coupling = Eigen::MatrixXd::Zero(n, n);
  out.detuning[0] = omega_mech;
  out.coupling[0] = 0.0;
  for (int k = 0; k < n_modes; ++k) {
    const double w = lo + (k + 0.5) * dw;
    out.detuning[k + 1] = w - omega0;
    out.coupling[k + 1] = std::sqrt(std::max(j.interp(w), 0.0) * dw);
  }
  out.recurrence_horizon = 2.0 * pi / dw;
  return out;
}

struct EvolveOptions {
  double rel_tol = 1e-10;
  double abs_tol = 1e-12;
  double initial_dt = 0.0; // 0 -> auto
  double min_dt_factor = 1e-12; // of the horizon; below this, stiffness error
};

namespace detail {

// One RK4 step of (mean, cov).
inline void rk4_step(const Eigen::SparseMatrix<double>& a, const Eigen::VectorXd& d,
                     Eigen::VectorXd& mean, Eigen::MatrixXd& cov, double dt) {
  auto deriv_cov = [&](const Eigen::MatrixXd& s) -> Eigen::MatrixXd {
    Eigen::MatrixXd as = a * s;
    as += as.transpose().eval();
    as += d.asDiagonal().toDenseMatrix();
    return as;
  };
  const Eigen::MatrixXd k1 = deriv_cov(cov);
  const Eigen::MatrixXd k2 = deriv_cov(cov + 0.5 * dt * k1);
  const Eigen::MatrixXd k3 = deriv_cov(cov + 0.5 * dt * k2);
  const Eigen::MatrixXd k4 = deriv_cov(cov + dt * k3);
  cov += (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);

  const Eigen::VectorXd m1 = a * mean;
  const Eigen::VectorXd m2 = a * (mean + 0.5 * dt * m1).eval();
  const Eigen::VectorXd m3 = a * (mean + 0.5 * dt * m2).eval();
  const Eigen::VectorXd m4 = a * (mean + dt * m3).eval();
  mean += (dt / 6.0) * (m1 + 2.0 * m2 + 2.0 * m3 + m4);
}

} // namespace detail

/// Integrate d sigma/dt = A sigma + sigma A^T + D (and the mean) for time t.
/// RK4 with step doubling; step size adapts to the requested tolerance.
inline GaussianState evolve_covariance(const LinearModel& m, const GaussianState& s0, double t,
                                       const EvolveOptions& opts = {}) {
  m.validate();
  if (s0.mean.size() != m.dim())
    throw std::invalid_argument("evolve_covariance: state dimension mismatch");
  if (t < 0.0) throw std::invalid_argument("evolve_covariance: negative time");
  const Eigen::SparseMatrix<double> a = m.drift();
  const Eigen::VectorXd d = m.diffusion_diag();

  // Fastest timescale estimate from row sums of |A|.
  double amax = 1e-300;
  for (int k = 0; k < a.outerSize(); ++k)
    for (Eigen::SparseMatrix<double>::InnerIterator it(a, k); it; ++it)
      amax = std::max(amax, std::abs(it.value()));
  double dt = opts.initial_dt > 0.0 ? opts.initial_dt : 0.1 / amax;
  const double dt_min = std::max(t, 1.0 / amax) * opts.min_dt_factor;

  Eigen::VectorXd mean = s0.mean;
  Eigen::MatrixXd cov = s0.cov;
  double elapsed = 0.0;
  while (elapsed < t) {
    const double step = std::min(dt, t - elapsed);
    // Full step vs two half steps.
    Eigen::VectorXd mean_full = mean;
    Eigen::MatrixXd cov_full = cov;
    detail::rk4_step(a, d, mean_full, cov_full, step);
    Eigen::VectorXd mean_half = mean;
    Eigen::MatrixXd cov_half = cov;
    detail::rk4_step(a, d, mean_half, cov_half, 0.5 * step);
    detail::rk4_step(a, d, mean_half, cov_half, 0.5 * step);

    const double scale = std::max({cov_half.cwiseAbs().maxCoeff(),
                                   mean_half.cwiseAbs().maxCoeff(), 1.0});
    const double err = std::max((cov_full - cov_half).cwiseAbs().maxCoeff(),
                                (mean_full - mean_half).cwiseAbs().maxCoeff());
    const double tol = opts.rel_tol * scale + opts.abs_tol;
    if (err <= tol) {
      mean = mean_half;
      cov = cov_half;
      elapsed += step;
      if (err < 0.1 * tol) dt *= 1.6;
    } else {
      dt *= 0.5;
      if (dt < dt_min)
        throw std::runtime_error(
            "evolve_covariance: step size underflow (stiff model); use steady_state");
    }
  }
  GaussianState out;
  out.mean = mean;
  out.cov = 0.5 * (cov + cov.transpose().eval());
  return out;
}

/// Continuous Lyapunov solve A sigma + sigma A^T + D = 0 via complex Schur
/// reduction. Throws if A is not Hurwitz.
inline GaussianState steady_state(const LinearModel& m) {
  m.validate();
  const Eigen::MatrixXd a = Eigen::MatrixXd(m.drift());
  const int d = m.dim();
  const Eigen::MatrixXd dm = m.diffusion_diag().asDiagonal();

  Eigen::ComplexSchur<Eigen::MatrixXcd> schur(a.cast<std::complex<double>>());
  const Eigen::MatrixXcd t = schur.matrixT();
  const Eigen::MatrixXcd u = schur.matrixU();
  for (int k = 0; k < d; ++k)
    if (t(k, k).real() >= 0.0)
      throw std::runtime_error(
          "steady_state: drift matrix is not Hurwitz (eigenvalue with Re >= 0); "
          "the model has no stationary state");

  // Solve T Y + Y T^H = C columnwise from the last column.
  const Eigen::MatrixXcd cmat = -u.adjoint() * dm * u;
  Eigen::MatrixXcd y = Eigen::MatrixXcd::Zero(d, d);
  for (int j = d - 1; j >= 0; --j) {
    Eigen::VectorXcd rhs = cmat.col(j);
    for (int k = j + 1; k < d; ++k) rhs -= std::conj(t(j, k)) * y.col(k);
    Eigen::MatrixXcd lhs = t;
    for (int k = 0; k < d; ++k) lhs(k, k) += std::conj(t(j, j));
    y.col(j) = lhs.triangularView<Eigen::Upper>().solve(rhs);
  }
  const Eigen::MatrixXcd sigma_c = u * y * u.adjoint();

  GaussianState out;
  out.mean = Eigen::VectorXd::Zero(d);
  out.cov = 0.5 * (sigma_c.real() + sigma_c.real().transpose().eval());
  return out;
}

/// Mechanical occupation sampled at `times`, starting from vacuum. For purely
/// Hamiltonian models (no decay, no recoil) this propagates two rows of the
/// propagator instead of the full covariance, which makes the discretized
/// continuum oracle tractable at thousands of modes.
inline std::vector<double> mech_occupation_trajectory(const LinearModel& m,
                                                      const std::vector<double>& times,
                                                      double dt_factor = 0.05) {
  m.validate();
  for (size_t k = 1; k < times.size(); ++k)
    if (times[k] < times[k - 1])
      throw std::invalid_argument("mech_occupation_trajectory: times must be nondecreasing");
  if (times.empty()) return {};

  const bool conservative = (m.kappa.maxCoeff() == 0.0) && (m.recoil_gamma == 0.0);
  std::vector<double> out;
  out.reserve(times.size());

  if (!conservative) {
    GaussianState s = GaussianState::vacuum(m.n_modes());
    double now = 0.0;
    for (double tk : times) {
      s = evolve_covariance(m, s, tk - now);
      now = tk;
      out.push_back(phonon_occupation(s, 0));
    }
    return out;
  }

  // sigma(t) = E(t) E(t)^T with E the propagator; only the two mechanical
  // rows are needed: v^T(t) = e_i^T exp(A t) obeys dv/dt = A^T v.
  const Eigen::SparseMatrix<double> a = m.drift();
  const Eigen::SparseMatrix<double> at = a.transpose();
  double amax = 1e-300;
  for (int k = 0; k < a.outerSize(); ++k)
    for (Eigen::SparseMatrix<double>::InnerIterator it(a, k); it; ++it)
      amax = std::max(amax, std::abs(it.value()));
  const double dt0 = dt_factor / amax;

  Eigen::VectorXd vq = Eigen::VectorXd::Zero(m.dim());
  Eigen::VectorXd vp = Eigen::VectorXd::Zero(m.dim());
  vq[0] = 1.0;
  vp[1] = 1.0;
  auto rk4 = [&](Eigen::VectorXd& v, double dt) {
    const Eigen::VectorXd k1 = at * v;
    const Eigen::VectorXd k2 = at * (v + 0.5 * dt * k1).eval();
    const Eigen::VectorXd k3 = at * (v + 0.5 * dt * k2).eval();
    const Eigen::VectorXd k4 = at * (v + dt * k3).eval();
    v += (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
  };

  double now = 0.0;
  for (double tk : times) {
    double remaining = tk - now;
    while (remaining > 0.0) {
      const double dt = std::min(dt0, remaining);
      rk4(vq, dt);
      rk4(vp, dt);
      remaining -= dt;
    }
    now = tk;
    const double sqq = vq.squaredNorm();
    const double spp = vp.squaredNorm();
    out.push_back(0.25 * (sqq + spp - 2.0));
  }
  return out;
}

} // namespace recoil

#endif
