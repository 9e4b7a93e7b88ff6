// Pipeline driver: spectral density -> few-mode fit -> reduction -> dynamics,
// plus the geometric suppression curves. One JSON config per run; every output
// embeds the config hash and tool version so reruns are byte-identical.

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "recoil/dynamics.hpp"
#include "recoil/fewmode.hpp"
#include "recoil/geometry.hpp"
#include "recoil/green.hpp"
#include "recoil/reduce.hpp"
#include "recoil/spectral.hpp"
#include "recoil/tweezer.hpp"

namespace {

constexpr const char* kToolVersion = "recoil_cli 1.0.0";

// Exit codes: 0 success, 1 I/O, 2 validation, 3 reduction refusal,
// 4 dynamics instability.
enum ExitCode { kOk = 0, kIoError = 1, kValidationError = 2, kReduceRefusal = 3, kUnstable = 4 };

struct CliError : std::runtime_error {
  int code;
  CliError(int c, const std::string& msg) : std::runtime_error(msg), code(c) {}
};

std::string fnv1a_hash(const std::string& data) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char ch : data) {
    h ^= ch;
    h *= 1099511628211ull;
  }
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

nlohmann::json load_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw CliError(kIoError, "cannot open config " + path);
  nlohmann::json cfg;
  try {
    f >> cfg;
  } catch (const nlohmann::json::exception& e) {
    throw CliError(kValidationError, std::string("config parse error: ") + e.what());
  }
  return cfg;
}

nlohmann::json provenance(const nlohmann::json& cfg) {
  return {{"tool", kToolVersion}, {"config_hash", fnv1a_hash(cfg.dump())}};
}

double require_number(const nlohmann::json& j, const std::string& key) {
  if (!j.contains(key) || !j[key].is_number())
    throw CliError(kValidationError, "config: missing or non-numeric field '" + key + "'");
  return j[key].get<double>();
}

recoil::TweezerParams parse_tweezer(const nlohmann::json& cfg) {
  if (!cfg.contains("tweezer")) throw CliError(kValidationError, "config: missing 'tweezer' block");
  const auto& t = cfg["tweezer"];
  recoil::TweezerParams p;
  p.field_amplitude = require_number(t, "field_amplitude_V_m");
  p.waist = require_number(t, "waist_m");
  p.wavelength = require_number(t, "wavelength_m");
  try {
    p.validate();
  } catch (const std::exception& e) {
    throw CliError(kValidationError, std::string("config: ") + e.what());
  }
  return p;
}

recoil::ParticleParams parse_particle(const nlohmann::json& cfg) {
  if (!cfg.contains("particle")) throw CliError(kValidationError, "config: missing 'particle' block");
  const auto& t = cfg["particle"];
  recoil::ParticleParams p;
  p.polarizability = require_number(t, "polarizability_C_m2_V");
  p.mass = require_number(t, "mass_kg");
  p.radius = require_number(t, "radius_m");
  try {
    p.validate();
  } catch (const std::exception& e) {
    throw CliError(kValidationError, std::string("config: ") + e.what());
  }
  return p;
}

recoil::LibrationalParams parse_librational(const nlohmann::json& cfg) {
  if (!cfg.contains("librational"))
    throw CliError(kValidationError, "config: missing 'librational' block");
  const auto& t = cfg["librational"];
  recoil::LibrationalParams lp;
  lp.delta_alpha = require_number(t, "delta_alpha_C_m2_V");
  lp.inertia = require_number(t, "inertia_kg_m2");
  try {
    lp.validate();
  } catch (const std::exception& e) {
    throw CliError(kValidationError, std::string("config: ") + e.what());
  }
  return lp;
}

std::shared_ptr<recoil::GreensProvider> parse_provider(const nlohmann::json& cfg) {
  if (!cfg.contains("provider")) throw CliError(kValidationError, "config: missing 'provider' block");
  const auto& pv = cfg["provider"];
  const std::string kind = pv.value("kind", "");
  try {
    if (kind == "free_space") return std::make_shared<recoil::FreeSpaceGreens>();
    if (kind == "null") return std::make_shared<recoil::NullGreens>();
    if (kind == "half_space" || kind == "parallel_plates") {
      recoil::MirrorGeometry geom;
      geom.kind = (kind == "half_space") ? recoil::MirrorGeometry::Kind::half_space
                                         : recoil::MirrorGeometry::Kind::parallel_plates;
      geom.axis = pv.value("axis", 2);
      geom.wall = pv.value("wall_m", 0.0);
      geom.separation = pv.value("separation_m", 0.0);
      geom.n_img = pv.value("n_img", 64);
      geom.reflectivity = pv.value("reflectivity", 1.0);
      return std::make_shared<recoil::MirrorGreens>(geom);
    }
    if (kind == "tabulated") {
      if (!pv.contains("path"))
        throw CliError(kValidationError, "config: tabulated provider needs 'path'");
      const std::string path = pv["path"].get<std::string>();
      if (!std::filesystem::exists(path))
        throw CliError(kIoError, "tabulated provider file not found: " + path);
      return recoil::load_tabulated(path);
    }
  } catch (const CliError&) {
    throw;
  } catch (const std::exception& e) {
    throw CliError(kValidationError, std::string("provider: ") + e.what());
  }
  throw CliError(kValidationError, "config: unknown provider kind '" + kind + "'");
}

int parse_axis(const nlohmann::json& j, const std::string& key, int fallback) {
  if (!j.contains(key)) return fallback;
  const auto& v = j[key];
  if (v.is_number_integer()) return v.get<int>();
  const std::string s = v.get<std::string>();
  if (s == "x") return 0;
  if (s == "y") return 1;
  if (s == "z") return 2;
  throw CliError(kValidationError, "config: bad axis '" + s + "'");
}

// Config grids are detunings from omega0 in Hz; stored as absolute rad/s.
std::vector<double> parse_grid(const nlohmann::json& cfg, double omega0) {
  if (!cfg.contains("grid")) throw CliError(kValidationError, "config: missing 'grid' block");
  const auto& g = cfg["grid"];
  const double center = omega0 + 2.0 * recoil::pi * g.value("center_detuning_Hz", 0.0);
  const double span = 2.0 * recoil::pi * require_number(g, "span_Hz");
  const int points = g.contains("points") ? g["points"].get<int>() : 0;
  if (points < 2) throw CliError(kValidationError, "config: grid.points must be >= 2");
  if (!(span > 0.0)) throw CliError(kValidationError, "config: grid.span_Hz must be > 0");
  std::vector<double> out(static_cast<size_t>(points));
  for (int k = 0; k < points; ++k)
    out[static_cast<size_t>(k)] = center - 0.5 * span + span * k / (points - 1);
  return out;
}

void ensure_outdir(const std::string& out) {
  std::error_code ec;
  std::filesystem::create_directories(out, ec);
  if (ec) throw CliError(kIoError, "cannot create output directory " + out);
}

void write_text(const std::string& path, const std::string& body) {
  std::ofstream f(path);
  if (!f) throw CliError(kIoError, "cannot open output file " + path);
  f << body;
}

int cmd_jspec(const nlohmann::json& cfg, const std::string& out, bool verbose) {
  const auto p = parse_tweezer(cfg);
  const auto part = parse_particle(cfg);
  const auto provider = parse_provider(cfg);
  const auto grid = parse_grid(cfg, p.omega0());

  const auto& motion = cfg.value("motion", nlohmann::json::object());
  const std::string kind = motion.value("kind", "com");
  const int axis = parse_axis(motion, "axis", 1);

  recoil::EquilibriumState eq;
  if (cfg.value("use_equilibrium_shift", false)) {
    try {
      eq = recoil::equilibrium_shift(part, p, *provider);
    } catch (const std::exception& e) {
      throw CliError(kValidationError, std::string("equilibrium_shift: ") + e.what());
    }
  }

  ensure_outdir(out);
  recoil::SpectralDensity jd, jfree;
  double gamma_fs = 0.0;
  try {
    const recoil::FreeSpaceGreens fs;
    if (kind == "com") {
      jd = recoil::spectral_density_com(axis, grid, *provider, p, part, eq);
      jfree = recoil::spectral_density_com(axis, grid, fs, p, part, eq);
      gamma_fs = recoil::free_space_recoil(axis, p, part, eq);
    } else if (kind == "libration") {
      const auto lp = parse_librational(cfg);
      jd = recoil::spectral_density_libr(axis, grid, *provider, p, lp, eq);
      jfree = recoil::spectral_density_libr(axis, grid, fs, p, lp, eq);
      gamma_fs = recoil::free_space_recoil_libr(axis, p, lp, eq);
    } else {
      throw CliError(kValidationError, "config: motion.kind must be 'com' or 'libration'");
    }
  } catch (const CliError&) {
    throw;
  } catch (const std::exception& e) {
    throw CliError(kValidationError, std::string("jspec: ") + e.what());
  }

  nlohmann::json meta = provenance(cfg);
  meta["Gamma_fs_rad_s"] = gamma_fs;
  meta["equilibrium_shift_m"] = {eq.position[0], eq.position[1], eq.position[2]};
  recoil::save_spectral_density(jd, out + "/jspec.csv", meta);
  recoil::save_spectral_density(jfree, out + "/jspec_free.csv", meta);
  if (verbose)
    std::cerr << "jspec: " << jd.omega.size() << " points, Gamma_fs = " << gamma_fs
              << " rad/s\n";
  return kOk;
}

int cmd_fit(const nlohmann::json& cfg, const std::string& input, const std::string& out,
            std::uint64_t seed_override, bool has_seed, bool verbose) {
  if (!std::filesystem::exists(input)) throw CliError(kIoError, "input not found: " + input);
  recoil::SpectralDensity samples;
  try {
    samples = recoil::load_spectral_density(input);
  } catch (const std::exception& e) {
    throw CliError(kValidationError, std::string("fit input: ") + e.what());
  }

  const auto& fc = cfg.value("fit", nlohmann::json::object());
  recoil::FitOptions opts;
  opts.seed = has_seed ? seed_override : fc.value("seed", std::uint64_t{1234});
  opts.restarts = fc.value("restarts", 8);
  const int n_modes = fc.value("n_modes", 0); // 0 -> auto order selection
  const double tol = fc.value("tol", 1e-3);
  const int n_max = fc.value("n_max", 4);

  recoil::FitReport rep;
  try {
    rep = (n_modes > 0) ? recoil::fit_fewmode(samples, n_modes, opts)
                        : recoil::select_model_order(samples, tol, n_max, opts);
  } catch (const std::exception& e) {
    throw CliError(kValidationError, std::string("fit: ") + e.what());
  }

  ensure_outdir(out);
  nlohmann::json j = recoil::fit_report_to_json(rep);
  j["provenance"] = provenance(cfg);
  write_text(out + "/fit.json", j.dump(2) + "\n");
  if (verbose)
    std::cerr << "fit: N=" << rep.model.n() << " residual=" << rep.residual << "\n";
  return kOk;
}

int cmd_reduce(const nlohmann::json& cfg, const std::string& input, const std::string& out,
               bool verbose) {
  if (!std::filesystem::exists(input)) throw CliError(kIoError, "input not found: " + input);
  recoil::FitReport rep;
  try {
    std::ifstream f(input);
    nlohmann::json j;
    f >> j;
    rep = recoil::fit_report_from_json(j);
  } catch (const std::exception& e) {
    throw CliError(kValidationError, std::string("reduce input: ") + e.what());
  }

  const auto p = parse_tweezer(cfg);
  const auto part = parse_particle(cfg);
  const auto& motion = cfg.value("motion", nlohmann::json::object());
  const int axis = parse_axis(motion, "axis", 1);
  const auto om = recoil::mechanical_frequencies(part, p);
  const double omega_mech = (axis == 0) ? om.x : (axis == 1) ? om.y : om.z;

  const auto& rc = cfg.value("reduce", nlohmann::json::object());
  recoil::ReduceOptions opts;
  opts.min_separation = rc.value("min_separation", 10.0);
  opts.background_only = rc.value("background_only", false);

  recoil::ReducedModel m;
  try {
    // Fit reports carry absolute frequencies; the reduction works in the
    // frame rotating at the tweezer frequency.
    const recoil::FewModeModel detuned = recoil::shift_frame(rep.model, p.omega0());
    m = recoil::adiabatic_reduce(detuned, rep.labels, p.omega0(), omega_mech, opts);
  } catch (const std::exception& e) {
    throw CliError(kReduceRefusal, std::string("reduce: ") + e.what());
  }

  double gamma_check = 0.0;
  for (const auto& [mode, gb] : m.contributions) gamma_check += gb;

  ensure_outdir(out);
  nlohmann::json j = recoil::reduced_model_to_json(m);
  j["provenance"] = provenance(cfg);
  j["Gamma_contribution_sum"] = gamma_check;
  write_text(out + "/reduced.json", j.dump(2) + "\n");
  if (verbose)
    std::cerr << "reduce: kappa=" << m.kappa << " Gamma=" << m.gamma
              << " (contribution sum " << gamma_check << ")\n";
  return kOk;
}

void write_trajectory(const std::string& path, const std::vector<double>& t,
                      const std::vector<recoil::GaussianState>& states,
                      const nlohmann::json& meta) {
  std::string body = "t_s, n_mech, n_cav, sigma_qq, sigma_pp\n";
  char buf[256];
  for (size_t k = 0; k < t.size(); ++k) {
    const auto& s = states[k];
    const double ncav = (s.n_modes() > 1) ? recoil::phonon_occupation(s, 1) : 0.0;
    std::snprintf(buf, sizeof(buf), "%.17g, %.17g, %.17g, %.17g, %.17g\n", t[k],
                  recoil::phonon_occupation(s, 0), ncav, s.cov(0, 0), s.cov(1, 1));
    body += buf;
  }
  write_text(path, body);
  write_text(path + ".meta.json", meta.dump(2) + "\n");
}

int cmd_simulate(const nlohmann::json& cfg, const std::string& input, const std::string& out,
                 bool verbose) {
  const auto& sc = cfg.value("simulate", nlohmann::json::object());
  const std::string source = sc.value("source", "reduced");
  const double t_final = sc.value("t_final_s", 0.0);
  const int n_samples = sc.value("samples", 100);
  const bool want_steady = sc.value("steady_state", false);
  if (!(t_final > 0.0) && !want_steady)
    throw CliError(kValidationError, "config: simulate.t_final_s must be > 0");
  if (n_samples < 1) throw CliError(kValidationError, "config: simulate.samples must be >= 1");

  const auto p = parse_tweezer(cfg);
  const auto part = parse_particle(cfg);
  const auto& motion = cfg.value("motion", nlohmann::json::object());
  const int axis = parse_axis(motion, "axis", 1);
  const auto om = recoil::mechanical_frequencies(part, p);
  const double omega_mech = (axis == 0) ? om.x : (axis == 1) ? om.y : om.z;

  if (!std::filesystem::exists(input)) throw CliError(kIoError, "input not found: " + input);
  recoil::LinearModel model;
  try {
    if (source == "reduced") {
      std::ifstream f(input);
      nlohmann::json j;
      f >> j;
      recoil::ReducedModel rm = recoil::reduced_model_from_json(j);
      model = recoil::build_linear_model(rm, p.omega0(), sc.value("include_recoil", true));
    } else if (source == "fewmode") {
      std::ifstream f(input);
      nlohmann::json j;
      f >> j;
      model = recoil::build_linear_model(
          recoil::shift_frame(recoil::fit_report_from_json(j).model, p.omega0()), omega_mech);
    } else if (source == "continuum") {
      const recoil::SpectralDensity jd = recoil::load_spectral_density(input);
      model = recoil::discretize_continuum(jd, sc.value("continuum_modes", 2000), omega_mech,
                                           p.omega0());
    } else {
      throw CliError(kValidationError, "config: simulate.source must be reduced|fewmode|continuum");
    }
  } catch (const CliError&) {
    throw;
  } catch (const std::exception& e) {
    throw CliError(kValidationError, std::string("simulate input: ") + e.what());
  }

  ensure_outdir(out);
  nlohmann::json meta = provenance(cfg);
  meta["quadrature_convention"] = "q=b+b^dag, p=i(b^dag-b), vacuum sigma=I";
  meta["source"] = source;
  meta["recurrence_horizon_s"] = std::isfinite(model.recurrence_horizon)
                                     ? nlohmann::json(model.recurrence_horizon)
                                     : nlohmann::json(nullptr);

  if (want_steady) {
    recoil::GaussianState ss;
    try {
      ss = recoil::steady_state(model);
    } catch (const std::exception& e) {
      throw CliError(kUnstable, std::string("simulate: ") + e.what());
    }
    meta["steady_state_n_mech"] = recoil::phonon_occupation(ss, 0);
    write_trajectory(out + "/steady.csv", {0.0}, {ss}, meta);
    if (verbose) std::cerr << "simulate: steady n=" << recoil::phonon_occupation(ss, 0) << "\n";
    return kOk;
  }

  std::vector<double> times(static_cast<size_t>(n_samples));
  for (int k = 0; k < n_samples; ++k)
    times[static_cast<size_t>(k)] = t_final * (k + 1) / n_samples;

  std::vector<recoil::GaussianState> states;
  try {
    if (source == "continuum") {
      // Large conservative models: track only the mechanical occupation.
      const auto n_traj = recoil::mech_occupation_trajectory(model, times);
      std::string body = "t_s, n_mech, n_cav, sigma_qq, sigma_pp\n";
      char buf[256];
      for (size_t k = 0; k < times.size(); ++k) {
        std::snprintf(buf, sizeof(buf), "%.17g, %.17g, %.17g, %.17g, %.17g\n", times[k],
                      n_traj[k], 0.0, 0.0, 0.0);
        body += buf;
      }
      meta["heating_slope_rad_s"] =
          (n_traj.size() > 1) ? (n_traj.back() - n_traj.front()) / (times.back() - times.front())
                              : 0.0;
      write_text(out + "/trajectory.csv", body);
      write_text(out + "/trajectory.csv.meta.json", meta.dump(2) + "\n");
      return kOk;
    }
    recoil::GaussianState s = recoil::GaussianState::vacuum(model.n_modes());
    double now = 0.0;
    for (double tk : times) {
      s = recoil::evolve_covariance(model, s, tk - now);
      now = tk;
      states.push_back(s);
    }
  } catch (const std::exception& e) {
    throw CliError(kUnstable, std::string("simulate: ") + e.what());
  }
  if (states.size() > 1)
    meta["heating_slope_rad_s"] =
        (recoil::phonon_occupation(states.back(), 0) - recoil::phonon_occupation(states.front(), 0)) /
        (times.back() - times.front());
  write_trajectory(out + "/trajectory.csv", times, states, meta);
  if (verbose) std::cerr << "simulate: " << times.size() << " samples written\n";
  return kOk;
}

int cmd_geo(const nlohmann::json& cfg, const std::string& out, bool verbose) {
  const auto& gc = cfg.value("geometry", nlohmann::json::object());
  const int points = gc.value("theta_points", 50);
  if (points < 2) throw CliError(kValidationError, "config: geometry.theta_points must be >= 2");

  ensure_outdir(out);
  std::string body = "theta_m_deg, ratio_com, ratio_libr\n";
  char buf[256];
  for (int k = 0; k < points; ++k) {
    const double theta = 0.5 * recoil::pi * k / (points - 1);
    const double rc =
        recoil::gamma_geometric_closed(theta, recoil::RadiationPattern::Kind::com_y);
    const double rl =
        recoil::gamma_geometric_closed(theta, recoil::RadiationPattern::Kind::libration_z);
    std::snprintf(buf, sizeof(buf), "%.17g, %.17g, %.17g\n", theta * 180.0 / recoil::pi, rc, rl);
    body += buf;
  }
  write_text(out + "/geometry.csv", body);
  write_text(out + "/geometry.csv.meta.json", provenance(cfg).dump(2) + "\n");
  if (verbose) std::cerr << "geo: " << points << " rows written\n";
  return kOk;
}

} // namespace

int main(int argc, char** argv) {
  CLI::App app{"Recoil-heating pipeline (spectral density, few-mode fit, reduction, dynamics)"};
  app.require_subcommand(1);

  std::string config_path, out_dir = ".", input_path;
  std::uint64_t seed = 0;
  bool verbose = false;

  auto add_common = [&](CLI::App* sub, bool needs_input) {
    sub->add_option("--config", config_path, "JSON config file")->required();
    sub->add_option("--out", out_dir, "output directory");
    sub->add_option("--seed", seed, "override fit seed");
    sub->add_flag("--verbose", verbose, "diagnostics on stderr");
    if (needs_input) sub->add_option("--input", input_path, "input file")->required();
  };

  auto* jspec = app.add_subcommand("jspec", "compute spectral density files");
  auto* fit = app.add_subcommand("fit", "fit a few-mode model to a sampled J");
  auto* reduce = app.add_subcommand("reduce", "adiabatic reduction of a fit report");
  auto* simulate = app.add_subcommand("simulate", "Gaussian dynamics of a model");
  auto* geo = app.add_subcommand("geo", "geometric suppression curves");
  add_common(jspec, false);
  add_common(fit, true);
  add_common(reduce, true);
  add_common(simulate, true);
  add_common(geo, false);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kValidationError;
  }

  try {
    const nlohmann::json cfg = load_config(config_path);
    if (jspec->parsed()) return cmd_jspec(cfg, out_dir, verbose);
    if (fit->parsed())
      return cmd_fit(cfg, input_path, out_dir, seed, fit->count("--seed") > 0, verbose);
    if (reduce->parsed()) return cmd_reduce(cfg, input_path, out_dir, verbose);
    if (simulate->parsed()) return cmd_simulate(cfg, input_path, out_dir, verbose);
    if (geo->parsed()) return cmd_geo(cfg, out_dir, verbose);
  } catch (const CliError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return e.code;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kValidationError;
  }
  return kOk;
}
