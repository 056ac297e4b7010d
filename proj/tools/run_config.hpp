#pragma once

// Run manifest for rmot_cli. A JSON file merged over built-in defaults;
// unknown keys are rejected. Relative paths resolve against the config
// file's directory.

#include "rmot/calibration.hpp"
#include "rmot/frtb_report.hpp"
#include "rmot/market_data.hpp"
#include "rmot/rmot_multi.hpp"
#include "rmot/rmot_single.hpp"

#include <filesystem>
#include <algorithm>
#include <fstream>
#include <set>
#include <string>

#include <nlohmann/json.hpp>

namespace rmot::cli {

namespace fs = std::filesystem;
using nlohmann::json;

inline constexpr int kSchemaVersion = 1;

class ConfigError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

inline json default_config() {
  return json::parse(R"({
    "schema_version": 1,
    "seed": 0,
    "output_dir": "rmot_out",
    "assets": [],
    "filter": {
      "min_volume": 100, "min_open_interest": 500, "max_relative_spread": 0.05,
      "min_log_moneyness": -0.7, "max_log_moneyness": 0.7, "min_days": 30, "max_days": 180,
      "parity_tolerance": 0.01, "convexity_tolerance": 1e-4, "rate": 0.0, "day_count": 365.0
    },
    "calibration": {
      "max_iter": 100, "tolerance": 1e-8, "weights": "inverse_spread", "joint": true,
      "kappa": 1.0, "v_inf": null, "hist_leverage": -0.65, "min_strikes": 50,
      "start_hurst": [0.05, 0.1, 0.3], "fim_threshold": 1e-6
    },
    "rmot": {
      "slice": 0, "n_paths": 30000, "n_steps": 100, "kl_radius": 0.05,
      "moneyness": [0.8, 0.9, 1.0, 1.1, 1.2, 1.3], "classical": true,
      "lambda_reg": 1.0, "misspecification": null, "remainder": 0.0, "k0": 0.25
    },
    "multi": {
      "gamma": 0.1, "epsilon": 1e-3, "identifiability_gap": 1e-3, "maturity": null,
      "rho_hist": null, "realized_covariance": null, "returns": null, "periods_per_year": 252
    },
    "basket": {
      "weights": null, "strike": null, "samples": 30000, "kl_radius": 0.05, "copula_samples": 20000
    },
    "backtest": { "input": null, "window": 250, "days_per_year": 250, "green_per_year": 2.5, "amber_per_year": 5.0 },
    "capital": { "book": null }
  })");
}

namespace detail {

inline void check_keys(const json& user, const json& defaults, const std::string& where) {
  if (!user.is_object() || !defaults.is_object()) return;
  for (const auto& [k, v] : user.items()) {
    if (!defaults.contains(k)) throw ConfigError("unknown config key '" + where + k + "'");
    check_keys(v, defaults.at(k), where + k + ".");
  }
}

// Like merge_patch, but null is a value rather than a deletion.
inline void merge(json& into, const json& from) {
  for (const auto& [k, v] : from.items()) {
    if (v.is_object() && into.contains(k) && into.at(k).is_object()) merge(into[k], v);
    else into[k] = v;
  }
}

inline json parse_scalar(const std::string& text) {
  try {
    return json::parse(text);
  } catch (const json::parse_error&) {
    return text;
  }
}

}  // namespace detail

struct RunConfig {
  json doc;            // resolved, embedded in every artifact
  fs::path base_dir;   // for relative input paths

  std::uint64_t seed() const { return doc.at("seed").get<std::uint64_t>(); }
  fs::path output_dir() const { return resolve(doc.at("output_dir").get<std::string>()); }
  const json& section(const char* name) const { return doc.at(name); }

  fs::path resolve(const std::string& p) const {
    const fs::path path(p);
    return path.is_absolute() ? path : base_dir / path;
  }

  std::vector<std::string> symbols() const {
    std::vector<std::string> out;
    for (const auto& a : doc.at("assets")) out.push_back(a.at("symbol").get<std::string>());
    return out;
  }
};

/// `overrides` are dotted keys with JSON (or bare string) values, applied
/// after the file.
inline RunConfig load_config(const fs::path& path, const std::vector<std::pair<std::string, std::string>>& overrides) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read config '" + path.string() + "'");
  json user;
  try {
    user = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("config '" + path.string() + "': " + e.what());
  }
  if (!user.is_object()) throw ConfigError("config must be a JSON object");
  const json defaults = default_config();
  detail::check_keys(user, defaults, "");
  json doc = defaults;
  detail::merge(doc, user);
  for (const auto& [key, value] : overrides) {
    std::string pointer = "/" + key;
    std::replace(pointer.begin(), pointer.end(), '.', '/');
    const json::json_pointer ptr(pointer);
    if (!defaults.contains(ptr)) throw ConfigError("unknown override key '" + key + "'");
    doc[ptr] = detail::parse_scalar(value);
  }
  RunConfig cfg{doc, fs::absolute(path).parent_path()};
  if (doc.at("schema_version") != kSchemaVersion)
    throw ConfigError("unsupported schema_version " + doc.at("schema_version").dump());
  std::set<std::string> seen;
  for (const auto& a : doc.at("assets")) {
    if (!a.is_object() || !a.contains("symbol") || !a.contains("chain"))
      throw ConfigError("every asset needs 'symbol' and 'chain'");
    for (const auto& [k, v] : a.items())
      if (k != "symbol" && k != "chain" && k != "spot") throw ConfigError("unknown asset key '" + k + "'");
    const auto sym = a.at("symbol").get<std::string>();
    if (sym.empty() || sym.find_first_of("/\\ ") != std::string::npos)
      throw ConfigError("asset symbol '" + sym + "' is not usable in a file name");
    if (!seen.insert(sym).second) throw ConfigError("duplicate asset '" + sym + "'");
  }
  return cfg;
}

// ---------------------------------------------------------------------------
// Typed views
// ---------------------------------------------------------------------------

inline FilterPolicy filter_policy(const RunConfig& rc) {
  const auto& f = rc.section("filter");
  FilterPolicy p;
  p.min_volume = f.at("min_volume");
  p.min_open_interest = f.at("min_open_interest");
  p.max_relative_spread = f.at("max_relative_spread");
  p.min_log_moneyness = f.at("min_log_moneyness");
  p.max_log_moneyness = f.at("max_log_moneyness");
  p.min_days = f.at("min_days");
  p.max_days = f.at("max_days");
  p.no_arb.parity = f.at("parity_tolerance");
  p.no_arb.convexity = f.at("convexity_tolerance");
  p.rate = f.at("rate");
  p.day_count = f.at("day_count");
  p.validate();
  return p;
}

inline CalibrationConfig calibration_config(const RunConfig& rc) {
  const auto& c = rc.section("calibration");
  CalibrationConfig cfg;
  cfg.max_iter = c.at("max_iter");
  cfg.tolerance = c.at("tolerance");
  const auto w = c.at("weights").get<std::string>();
  if (w == "inverse_spread") cfg.weights = WeightsMode::InverseSpread;
  else if (w == "homoscedastic") cfg.weights = WeightsMode::Homoscedastic;
  else throw ConfigError("calibration.weights must be 'inverse_spread' or 'homoscedastic'");
  cfg.joint = c.at("joint");
  cfg.kappa = c.at("kappa");
  if (!c.at("v_inf").is_null()) cfg.v_inf = c.at("v_inf").get<double>();
  cfg.hist_leverage = c.at("hist_leverage");
  cfg.min_strikes = c.at("min_strikes");
  cfg.start_hurst = c.at("start_hurst").get<std::vector<double>>();
  cfg.fim_threshold = c.at("fim_threshold");
  cfg.validate();
  return cfg;
}

inline CorrelationConfig correlation_config(const RunConfig& rc) {
  const auto& m = rc.section("multi");
  CorrelationConfig cfg;
  cfg.gamma = m.at("gamma");
  cfg.epsilon = m.at("epsilon");
  cfg.identifiability_gap = m.at("identifiability_gap");
  return cfg;
}

inline BacktestPolicy backtest_policy(const RunConfig& rc) {
  const auto& b = rc.section("backtest");
  BacktestPolicy p;
  p.window = b.at("window");
  p.days_per_year = b.at("days_per_year");
  p.green_per_year = b.at("green_per_year");
  p.amber_per_year = b.at("amber_per_year");
  p.validate();
  return p;
}

// ---------------------------------------------------------------------------
// Serialisation
// ---------------------------------------------------------------------------

inline json matrix_to_json(const Matrix& m) {
  json out = json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    json row = json::array();
    for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    out.push_back(row);
  }
  return out;
}

inline Matrix matrix_from_json(const json& j, Eigen::Index n, const std::string& what) {
  if (!j.is_array() || static_cast<Eigen::Index>(j.size()) != n) throw ConfigError(what + " must be " +
                                                                                    std::to_string(n) + "x" +
                                                                                    std::to_string(n));
  Matrix m(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& row = j.at(static_cast<std::size_t>(i));
    if (!row.is_array() || static_cast<Eigen::Index>(row.size()) != n) throw ConfigError(what + " has a ragged row");
    for (Eigen::Index k = 0; k < n; ++k) m(i, k) = row.at(static_cast<std::size_t>(k)).get<double>();
  }
  return m;
}

inline json vector_to_json(const Vector& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

inline json to_json(const RoughHestonParams& p) {
  json j;
  for (std::size_t i = 0; i < RoughHestonParams::kSize; ++i) j[std::string(RoughHestonParams::kNames[i])] = p[i];
  return j;
}

inline RoughHestonParams params_from_json(const json& j) {
  RoughHestonParams p;
  for (std::size_t i = 0; i < RoughHestonParams::kSize; ++i) p[i] = j.at(std::string(RoughHestonParams::kNames[i]));
  p.validate();
  return p;
}

inline json to_json(const FisherReport& f) {
  return {{"fim", matrix_to_json(f.fim)},
          {"eigenvalues", vector_to_json(f.eigenvalues)},
          {"d_eff", f.d_eff},
          {"cramer_rao_std", vector_to_json(f.cr_std)},
          {"threshold", f.threshold},
          {"full_rank", f.full_rank}};
}

inline json to_json(const CalibrationResult& r) {
  return {{"params", to_json(r.params)},
          {"fisher", to_json(r.fisher)},
          {"objective", r.objective},
          {"initial_objective", r.initial_objective},
          {"converged", r.converged},
          {"iterations", r.iterations},
          {"kkt_residual", r.kkt_residual},
          {"warnings", r.warnings}};
}

inline json to_json(const MarketSlice& s) {
  return {{"spot", s.spot}, {"maturity", s.maturity}, {"rate", s.rate},
          {"strikes", s.strikes}, {"prices", s.prices}, {"noise", s.noise}};
}

inline MarketSlice slice_from_json(const json& j) {
  MarketSlice s{j.at("spot"), j.at("maturity"), j.at("rate"), j.at("strikes"), j.at("prices"), j.at("noise")};
  s.validate();
  return s;
}

inline json to_json(const BoundResult& b) {
  return {{"strike", b.strike},
          {"lower", b.lower},
          {"upper", b.upper},
          {"mid", b.mid},
          {"certificate", std::isfinite(b.certificate) ? json(b.certificate) : json(nullptr)},
          {"kl_lower", b.kl_lower},
          {"kl_upper", b.kl_upper},
          {"max_constraint_residual", b.max_constraint_residual},
          {"dual_gradient_norm", b.dual_gradient_norm}};
}

inline json to_json(const CorrelationEstimate& e) {
  return {{"rho", matrix_to_json(e.rho)},
          {"ci_halfwidth", matrix_to_json(e.ci_halfwidth)},
          {"condition", e.condition},
          {"gamma", e.gamma},
          {"converged", e.converged},
          {"iterations", e.iterations},
          {"psd_repaired", e.psd_repaired}};
}

}  // namespace rmot::cli
