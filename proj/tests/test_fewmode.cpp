#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "recoil/fewmode.hpp"

using namespace recoil;

namespace {

FewModeModel scalar_model(double g, double kappa, double lambda) {
  FewModeModel m;
  m.g = Eigen::VectorXd::Constant(1, g);
  m.kappa = Eigen::VectorXd::Constant(1, kappa);
  m.lambda = Eigen::MatrixXd::Constant(1, 1, lambda);
  return m;
}

SpectralDensity sample_model(const FewModeModel& m, double lo, double hi, int n) {
  SpectralDensity s;
  s.omega.resize(static_cast<size_t>(n));
  s.j.resize(static_cast<size_t>(n));
  for (int k = 0; k < n; ++k) {
    s.omega[static_cast<size_t>(k)] = lo + (hi - lo) * k / (n - 1);
    s.j[static_cast<size_t>(k)] = eval_jmod(m, s.omega[static_cast<size_t>(k)]);
  }
  return s;
}

// Relative parameter distance between canonical-form models.
double model_distance(const FewModeModel& a, const FewModeModel& b) {
  double worst = 0.0;
  auto rel = [](double x, double y) { return std::abs(x - y) / std::max(std::abs(y), 1e-300); };
  for (int i = 0; i < a.n(); ++i) {
    worst = std::max(worst, rel(a.g[i], b.g[i]));
    worst = std::max(worst, rel(a.kappa[i], b.kappa[i]));
    for (int j = 0; j < a.n(); ++j) worst = std::max(worst, rel(a.lambda(i, j), b.lambda(i, j)));
  }
  return worst;
}

} // namespace

TEST_CASE("scalar model peak value is 1/pi") {
  CHECK(eval_jmod(scalar_model(1.0, 2.0, 0.0), 0.0) == doctest::Approx(1.0 / pi).epsilon(1e-14));
}

TEST_CASE("single mode is an exact Lorentzian") {
  const double g = 0.7, kappa = 0.3, lambda = 1.2;
  const auto m = scalar_model(g, kappa, lambda);
  for (double w : {-2.0, 0.0, 1.2, 1.35, 3.0}) {
    const double lor = g * g / pi * (kappa / 2.0) / ((w - lambda) * (w - lambda) + kappa * kappa / 4.0);
    CHECK(eval_jmod(m, w) == doctest::Approx(lor).epsilon(1e-13));
  }
  // Half maximum at lambda +- kappa/2.
  const double peak = eval_jmod(m, lambda);
  CHECK(eval_jmod(m, lambda + kappa / 2.0) == doctest::Approx(0.5 * peak).epsilon(1e-12));
  CHECK(eval_jmod(m, lambda - kappa / 2.0) == doctest::Approx(0.5 * peak).epsilon(1e-12));
}

TEST_CASE("block-diagonal model is the sum of independent Lorentzians") {
  FewModeModel m;
  m.g = Eigen::Vector2d(0.5, 1.1);
  m.kappa = Eigen::Vector2d(0.2, 2.5);
  m.lambda = Eigen::Vector2d(-0.4, 0.9).asDiagonal();
  for (double w = -3.0; w <= 3.0; w += 0.17) {
    double sum = 0.0;
    for (int b = 0; b < 2; ++b)
      sum += m.g[b] * m.g[b] / pi * (m.kappa[b] / 2.0) /
             ((w - m.lambda(b, b)) * (w - m.lambda(b, b)) + m.kappa[b] * m.kappa[b] / 4.0);
    CHECK(eval_jmod(m, w) == doctest::Approx(sum).epsilon(1e-12));
  }
}

TEST_CASE("J_mod is nonnegative even with off-diagonal coupling") {
  FewModeModel m;
  m.g = Eigen::Vector2d(1.0, 0.8);
  m.kappa = Eigen::Vector2d(0.1, 3.0);
  m.lambda.resize(2, 2);
  m.lambda << 0.2, 0.35, 0.35, -0.5;
  for (double w = -10.0; w <= 10.0; w += 0.05) CHECK(eval_jmod(m, w) >= 0.0);
}

TEST_CASE("gauge invariance: permutation and sign flips leave J_mod unchanged") {
  FewModeModel m;
  m.g = Eigen::Vector2d(1.0, -0.8);
  m.kappa = Eigen::Vector2d(0.1, 3.0);
  m.lambda.resize(2, 2);
  m.lambda << 0.2, 0.35, 0.35, -0.5;

  FewModeModel flipped = m; // flip sign of mode 1 and its Lambda row/column
  flipped.g[1] = -m.g[1];
  flipped.lambda(0, 1) = -m.lambda(0, 1);
  flipped.lambda(1, 0) = -m.lambda(1, 0);

  FewModeModel permuted; // swap the two modes
  permuted.g = Eigen::Vector2d(m.g[1], m.g[0]);
  permuted.kappa = Eigen::Vector2d(m.kappa[1], m.kappa[0]);
  permuted.lambda.resize(2, 2);
  permuted.lambda << m.lambda(1, 1), m.lambda(1, 0), m.lambda(0, 1), m.lambda(0, 0);

  for (double w = -4.0; w <= 4.0; w += 0.31) {
    CHECK(eval_jmod(flipped, w) == doctest::Approx(eval_jmod(m, w)).epsilon(1e-12));
    CHECK(eval_jmod(permuted, w) == doctest::Approx(eval_jmod(m, w)).epsilon(1e-12));
  }
  CHECK(model_distance(canonical_form(flipped), canonical_form(m)) < 1e-14);
  CHECK(model_distance(canonical_form(permuted), canonical_form(m)) < 1e-14);
  const auto canon = canonical_form(m);
  CHECK(canon.lambda(0, 0) <= canon.lambda(1, 1));
  CHECK(canon.g[0] >= 0.0);
  CHECK(canon.g[1] >= 0.0);
}

TEST_CASE("mode classification thresholds") {
  FewModeModel m;
  m.g = Eigen::Vector2d(1e4, 1e4);
  m.kappa = Eigen::Vector2d(1e3, 1e7);
  m.lambda = Eigen::Vector2d(0.0, 1e4).asDiagonal();
  auto labels = classify_modes(m);
  CHECK(labels[0] == ModeLabel::narrow);
  CHECK(labels[1] == ModeLabel::broad);

  FewModeModel det = scalar_model(1e4, 1e6, 1e9);
  CHECK(classify_modes(det)[0] == ModeLabel::detuned);

  FewModeModel all_narrow;
  all_narrow.g = Eigen::Vector2d(1.0, 1.0);
  all_narrow.kappa = Eigen::Vector2d(1.0, 2.0);
  all_narrow.lambda = Eigen::Matrix2d::Zero();
  for (auto l : classify_modes(all_narrow)) CHECK(l == ModeLabel::narrow);
}

TEST_CASE("model validation") {
  FewModeModel m;
  m.g = Eigen::Vector2d(1.0, 1.0);
  m.kappa = Eigen::Vector2d(1.0, 0.0);
  m.lambda = Eigen::Matrix2d::Zero();
  CHECK_THROWS_AS(m.validate(), std::invalid_argument);
  m.kappa[1] = 1.0;
  m.lambda(0, 1) = 0.5; // asymmetric
  CHECK_THROWS_AS(m.validate(), std::invalid_argument);
}

TEST_CASE("two-mode round-trip recovery") {
  std::mt19937_64 rng(2024);
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  for (int trial = 0; trial < 5; ++trial) {
    FewModeModel gen;
    gen.g = Eigen::Vector2d(0.05 + 0.10 * uni(rng), 0.2 + 0.3 * uni(rng));
    gen.kappa = Eigen::Vector2d(0.02 + 0.06 * uni(rng), 0.5 + 1.0 * uni(rng));
    gen.lambda.resize(2, 2);
    const double l11 = -0.25 + 0.5 * uni(rng);
    const double l22 = -0.1 + 0.2 * uni(rng);
    const double l12 = 0.02 + 0.03 * uni(rng);
    gen.lambda << l11, l12, l12, l22;

    const auto samples = sample_model(gen, -0.5, 0.5, 161);
    const auto rep = fit_fewmode(samples, 2);
    CHECK(rep.residual < 1e-5);
    CHECK(model_distance(rep.model, canonical_form(gen)) < 1e-3);
  }
}

TEST_CASE("fit idempotence") {
  FewModeModel gen;
  gen.g = Eigen::Vector2d(0.1, 0.35);
  gen.kappa = Eigen::Vector2d(0.05, 0.9);
  gen.lambda.resize(2, 2);
  gen.lambda << 0.1, 0.03, 0.03, -0.05;
  const auto samples = sample_model(gen, -0.5, 0.5, 161);
  const auto first = fit_fewmode(samples, 2);
  const auto refit = fit_fewmode(sample_model(first.model, samples.omega.front(),
                                              samples.omega.back(), 161),
                                 2);
  CHECK(model_distance(refit.model, first.model) < 1e-6);
}

TEST_CASE("fitted model stays nonnegative well outside the window") {
  FewModeModel gen;
  gen.g = Eigen::Vector2d(0.1, 0.3);
  gen.kappa = Eigen::Vector2d(0.04, 1.2);
  gen.lambda = Eigen::Vector2d(0.05, 0.0).asDiagonal();
  const auto samples = sample_model(gen, -0.5, 0.5, 161);
  const auto rep = fit_fewmode(samples, 2);
  for (double w = -1.5; w <= 1.5; w += 0.01) CHECK(eval_jmod(rep.model, w) >= 0.0);
}

TEST_CASE("narrow peak over flat offset classifies narrow plus broad") {
  // Lorentzian + flat background synthesized directly (not a model curve).
  SpectralDensity s;
  const double center = 0.1, kappa = 0.05, peak = 2.0, bg = 0.01;
  for (int k = 0; k < 201; ++k) {
    const double w = -0.5 + 1.0 * k / 200.0;
    s.omega.push_back(w);
    s.j.push_back(bg + peak * (kappa * kappa / 4.0) /
                           ((w - center) * (w - center) + kappa * kappa / 4.0));
  }
  const auto rep = fit_fewmode(s, 2);
  CHECK(rep.residual < 1e-2);
  REQUIRE(rep.labels.size() == 2);
  int narrow_idx = rep.labels[0] == ModeLabel::narrow ? 0 : 1;
  int broad_idx = 1 - narrow_idx;
  CHECK(rep.labels[static_cast<size_t>(narrow_idx)] == ModeLabel::narrow);
  CHECK(rep.labels[static_cast<size_t>(broad_idx)] == ModeLabel::broad);
  CHECK(rep.model.lambda(narrow_idx, narrow_idx) == doctest::Approx(center).epsilon(0.05));
  CHECK(rep.model.kappa[broad_idx] > 1.0); // exceeds the fit window width
}

TEST_CASE("model order selection") {
  FewModeModel gen;
  gen.g = Eigen::Vector2d(0.1, 0.35);
  gen.kappa = Eigen::Vector2d(0.05, 0.9);
  gen.lambda.resize(2, 2);
  gen.lambda << 0.1, 0.02, 0.02, -0.05;
  const auto two = sample_model(gen, -0.5, 0.5, 161);
  CHECK(select_model_order(two, 1e-3, 4).model.n() == 2);

  // Pure flat background: one broad mode suffices.
  SpectralDensity flat;
  for (int k = 0; k < 101; ++k) {
    flat.omega.push_back(-0.5 + 1.0 * k / 100.0);
    flat.j.push_back(0.3);
  }
  CHECK(select_model_order(flat, 1e-3, 4).model.n() == 1);
}

TEST_CASE("detuned wide resonance forces a third mode and is flagged") {
  FewModeModel gen;
  gen.g = Eigen::Vector3d(0.1, 0.35, 0.6);
  gen.kappa = Eigen::Vector3d(0.05, 0.9, 0.12);
  gen.lambda = Eigen::Vector3d(0.1, -0.05, 3.0).asDiagonal(); // third far detuned
  SpectralDensity s;
  for (int k = 0; k < 241; ++k) {
    const double w = -0.5 + 4.2 * k / 240.0; // window reaches the detuned peak
    s.omega.push_back(w);
    s.j.push_back(eval_jmod(gen, w));
  }
  const auto rep = select_model_order(s, 1e-3, 4);
  CHECK(rep.model.n() >= 3);
  bool has_detuned = false;
  for (auto l : rep.labels) has_detuned |= (l == ModeLabel::detuned);
  CHECK(has_detuned);
}

TEST_CASE("fit input validation") {
  SpectralDensity s;
  s.omega = {0.0, 0.5, 1.0};
  s.j = {1.0, -0.1, 1.0};
  CHECK_THROWS_AS(fit_fewmode(s, 1), std::invalid_argument);
  s.j = {1.0, 1.0, 1.0};
  CHECK_THROWS_AS(fit_fewmode(s, 0), std::invalid_argument);
  CHECK_THROWS_AS(fit_fewmode(s, 2), std::invalid_argument); // too few samples
}

TEST_CASE("fit report JSON round-trip") {
  FewModeModel gen;
  gen.g = Eigen::Vector2d(0.1, 0.35);
  gen.kappa = Eigen::Vector2d(0.05, 0.9);
  gen.lambda.resize(2, 2);
  gen.lambda << 0.1, 0.02, 0.02, -0.05;
  const auto rep = fit_fewmode(sample_model(gen, -0.5, 0.5, 161), 2);
  const auto back = fit_report_from_json(fit_report_to_json(rep));
  CHECK(model_distance(back.model, rep.model) == 0.0);
  CHECK(back.residual == rep.residual);
  CHECK(back.seed == rep.seed);
  REQUIRE(back.labels.size() == rep.labels.size());
  for (size_t k = 0; k < back.labels.size(); ++k) CHECK(back.labels[k] == rep.labels[k]);
}

TEST_CASE("fit is deterministic given the seed") {
  FewModeModel gen;
  gen.g = Eigen::Vector2d(0.1, 0.35);
  gen.kappa = Eigen::Vector2d(0.05, 0.9);
  gen.lambda = Eigen::Vector2d(0.1, -0.05).asDiagonal();
  const auto samples = sample_model(gen, -0.5, 0.5, 161);
  const auto a = fit_fewmode(samples, 2);
  const auto b = fit_fewmode(samples, 2);
  CHECK(model_distance(a.model, b.model) == 0.0);
  FitOptions other;
  other.seed = 999;
  const auto c = fit_fewmode(samples, 2, other);
  CHECK(c.residual < 1e-4); // different seed still converges
}
