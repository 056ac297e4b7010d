// rmot_cli: batch front end for the calibration, bounds, correlation,
// basket, backtest and capital stages.
//
// Exit codes: 0 success, 1 hard error (nothing written), 2 success with
// warnings. RMOT_WORKERS (or --workers) sets the thread count.

#include "run_config.hpp"

#include <CLI11.hpp>

#include <cstdlib>
#include <iostream>
#include <map>

namespace rmot::cli {
namespace {

struct Outcome {
  std::vector<std::pair<std::string, std::string>> files;  // name, contents
  std::vector<std::string> warnings;
  std::string summary;

  void add_json(const std::string& name, const json& doc) { files.emplace_back(name, doc.dump(2) + "\n"); }
};

json envelope(const RunConfig& rc, const std::string& command, json result, const std::vector<std::string>& warnings) {
  return {{"schema_version", kSchemaVersion},
          {"command", command},
          {"seed", rc.seed()},
          {"config", rc.doc},
          {"warnings", warnings},
          {"result", std::move(result)}};
}

// Everything is computed before the first write; each file goes through a
// temporary name so a reader never sees half a report.
void commit(const fs::path& dir, const Outcome& out) {
  fs::create_directories(dir);
  for (const auto& [name, text] : out.files) {
    const fs::path target = dir / name;
    const fs::path tmp = dir / (name + ".tmp");
    {
      std::ofstream f(tmp, std::ios::binary);
      if (!f) throw DataError("cannot write '" + tmp.string() + "'");
      f << text;
      if (!f) throw DataError("write to '" + tmp.string() + "' failed");
    }
    fs::rename(tmp, target);
  }
}

void require_file(const fs::path& p, const std::string& what) {
  if (!fs::is_regular_file(p)) throw DataError(what + " '" + p.string() + "' does not exist");
}

json read_json(const fs::path& p, const std::string& what) {
  require_file(p, what);
  std::ifstream in(p, std::ios::binary);
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw DataError(what + " '" + p.string() + "': " + e.what());
  }
}

void require_assets(const RunConfig& rc, std::size_t n) {
  if (rc.section("assets").size() < n)
    throw ConfigError("this command needs at least " + std::to_string(n) + " asset(s) in 'assets'");
}

// ---------------------------------------------------------------------------
// Upstream artifacts
// ---------------------------------------------------------------------------

struct Calibrated {
  std::string symbol;
  double spot = 0.0;
  std::vector<MarketSlice> slices;
  std::vector<RoughHestonParams> fits;  // one joint fit, or one per slice
  std::size_t strikes = 0;

  const MarketSlice& slice(std::size_t i) const {
    if (i >= slices.size())
      throw ConfigError(symbol + ": rmot.slice = " + std::to_string(i) + " but only " +
                        std::to_string(slices.size()) + " maturities survived filtering");
    return slices[i];
  }
  const RoughHestonParams& params(std::size_t i) const { return fits.size() == 1 ? fits[0] : fits.at(i); }
};

std::string calibration_name(const std::string& sym) { return "calibration_" + sym + ".json"; }

std::vector<Calibrated> load_calibrations(const RunConfig& rc) {
  std::vector<Calibrated> out;
  for (const auto& sym : rc.symbols()) {
    const auto path = rc.output_dir() / calibration_name(sym);
    if (!fs::is_regular_file(path))
      throw DataError("missing calibration artifact '" + path.string() + "'; run 'calibrate' first");
    const auto doc = read_json(path, "calibration artifact");
    try {
      const auto& r = doc.at("result");
      Calibrated c;
      c.symbol = sym;
      c.spot = r.at("spot");
      for (const auto& s : r.at("slices")) {
        c.slices.push_back(slice_from_json(s));
        c.strikes += c.slices.back().size();
      }
      for (const auto& f : r.at("fits")) c.fits.push_back(params_from_json(f.at("params")));
      if (c.fits.empty() || (c.fits.size() != 1 && c.fits.size() != c.slices.size()))
        throw DataError("fit count does not match the slices");
      out.push_back(std::move(c));
    } catch (const json::exception& e) {
      throw DataError("calibration artifact '" + path.string() + "': " + e.what());
    }
  }
  return out;
}

SimulationConfig prior_simulation(const RunConfig& rc, std::size_t asset) {
  const auto& r = rc.section("rmot");
  return {r.at("n_paths").get<std::size_t>(), r.at("n_steps").get<std::size_t>(), rc.seed() + asset};
}

// ---------------------------------------------------------------------------
// calibrate
// ---------------------------------------------------------------------------

Outcome cmd_calibrate(const RunConfig& rc) {
  require_assets(rc, 1);
  const auto& assets = rc.section("assets");
  std::vector<fs::path> paths;
  for (const auto& a : assets) {
    paths.push_back(rc.resolve(a.at("chain").get<std::string>()));
    require_file(paths.back(), "chain file");
  }
  const FilterPolicy policy = filter_policy(rc);
  const CalibrationConfig ccfg = calibration_config(rc);

  struct AssetRun {
    LoadResult load;
    FilterResult filtered;
    double spot = 0.0;
    std::vector<CalibrationResult> fits;
  };
  std::vector<AssetRun> runs(assets.size());
  parallel_for(assets.size(), [&](std::size_t i) {
    const auto& a = assets[i];
    const auto sym = a.at("symbol").get<std::string>();
    auto& run = runs[i];
    run.load = load_chain(paths[i].string());
    if (run.load.quotes.empty()) throw DataError(sym + ": chain has no valid quotes");
    run.spot = a.contains("spot") ? a.at("spot").get<double>() : run.load.quotes.front().spot;
    run.filtered = filter_chain(run.load.quotes, policy, run.spot);
    if (run.filtered.slices.empty()) throw DataError(sym + ": no quotes survive filtering");
    run.fits = calibrate_chain(run.filtered.slices, ccfg);
  });

  Outcome out;
  for (std::size_t i = 0; i < runs.size(); ++i) {
    const auto sym = assets[i].at("symbol").get<std::string>();
    const auto& run = runs[i];
    std::vector<std::string> warnings;
    if (!run.load.rejects.empty())
      warnings.push_back(sym + ": " + std::to_string(run.load.rejects.size()) + " malformed rows rejected");
    json fits = json::array();
    for (const auto& f : run.fits) {
      for (const auto& w : f.warnings) warnings.push_back(sym + ": " + w);
      if (!f.converged) warnings.push_back(sym + ": calibration did not converge");
      fits.push_back(to_json(f));
    }
    json slices = json::array();
    std::size_t m = 0;
    for (const auto& s : run.filtered.slices) {
      slices.push_back(to_json(s));
      m += s.size();
    }
    const json result{{"symbol", sym},     {"spot", run.spot},   {"strikes", m},
                      {"joint", ccfg.joint}, {"audit", to_json(run.filtered.audit)},
                      {"slices", slices},  {"fits", fits}};
    out.add_json(calibration_name(sym), envelope(rc, "calibrate", result, warnings));
    std::ostringstream audit;
    write_audit_jsonl(audit, run.load, run.filtered);
    out.files.emplace_back("audit_" + sym + ".jsonl", audit.str());
    const auto& p = run.fits.front().params;
    std::ostringstream line;
    line << sym << ": m=" << m << " H=" << p.hurst << " nu=" << p.vol_of_vol << " rho=" << p.leverage
         << " v0=" << p.v0 << " d_eff=" << run.fits.front().fisher.d_eff << "\n";
    out.summary += line.str();
    out.warnings.insert(out.warnings.end(), warnings.begin(), warnings.end());
  }
  return out;
}

// ---------------------------------------------------------------------------
// bounds
// ---------------------------------------------------------------------------

Outcome cmd_bounds(const RunConfig& rc) {
  require_assets(rc, 1);
  const auto cal = load_calibrations(rc);
  const auto& r = rc.section("rmot");
  const auto slice_index = r.at("slice").get<std::size_t>();
  const auto moneyness = r.at("moneyness").get<std::vector<double>>();
  if (moneyness.empty()) throw ConfigError("rmot.moneyness is empty");
  for (double m : moneyness)
    if (!(m > 0.0)) throw ConfigError("rmot.moneyness entries must be positive");
  const bool classical = r.at("classical");

  struct AssetBounds {
    std::vector<BoundResult> rmot, classical;
    std::optional<TailFit> tail;
    std::string tail_note;
  };
  std::vector<AssetBounds> res(cal.size());
  parallel_for(cal.size(), [&](std::size_t i) {
    const auto& c = cal[i];
    const auto& slice = c.slice(slice_index);
    const auto& params = c.params(slice_index);
    const auto prior = simulate_terminal(params, slice.spot, slice.maturity, prior_simulation(rc, i), slice.rate);
    BoundsConfig bc;
    bc.kl_radius = r.at("kl_radius");
    bc.lambda_reg = r.at("lambda_reg");
    bc.remainder = r.at("remainder");
    bc.k0 = r.at("k0");
    if (!r.at("misspecification").is_null()) {
      bc.misspecification = r.at("misspecification");
      try {
        const auto fit = fit_tail_constant(prior.atoms, prior.weights, slice.spot, slice.maturity, params.hurst);
        res[i].tail = fit;
        bc.rate = RateFunction{params.hurst, fit.c_h, {}, {}};
      } catch (const DomainError& e) {
        res[i].tail_note = e.what();
      }
    }
    for (double m : moneyness) {
      const double k = m * slice.spot;
      res[i].rmot.push_back(call_bounds(prior, slice, k, bc));
      if (classical) {
        BoundsConfig cc = bc;
        cc.classical = true;
        res[i].classical.push_back(call_bounds(prior, slice, k, cc));
      }
    }
  });

  Outcome out;
  for (std::size_t i = 0; i < cal.size(); ++i) {
    const auto& c = cal[i];
    const auto& slice = c.slice(slice_index);
    std::vector<std::string> warnings;
    json rows = json::array();
    std::ostringstream csv;
    csv << "strike,lower,mid,upper,classical_lower,classical_upper,classical_infinite,certificate\n";
    csv << std::setprecision(10);
    for (std::size_t k = 0; k < res[i].rmot.size(); ++k) {
      const auto& b = res[i].rmot[k];
      json row = to_json(b);
      if (b.max_constraint_residual > 1e-6 * slice.spot)
        warnings.push_back(c.symbol + ": constraint residual " + std::to_string(b.max_constraint_residual) +
                           " at K=" + std::to_string(b.strike));
      csv << b.strike << ',' << b.lower << ',' << b.mid << ',' << b.upper << ',';
      if (classical) {
        // The regularised optimiser is feasible for the classical problem, so
        // the classical interval contains it even when the capped dual stops short.
        const auto& cb = res[i].classical[k];
        const double lo = std::min(cb.lower, b.lower), hi = std::max(cb.upper, b.upper);
        row["classical"] = {{"lower", lo}, {"upper", hi}, {"infinite", cb.classical_infinite}};
        csv << lo << ',' << hi << ',' << (cb.classical_infinite ? 1 : 0) << ',';
      } else {
        csv << ",,,";
      }
      if (std::isfinite(b.certificate)) csv << b.certificate;
      csv << '\n';
      rows.push_back(row);
    }
    json tail = nullptr;
    if (res[i].tail) tail = {{"c_h", res[i].tail->c_h}, {"r_squared", res[i].tail->r_squared}};
    const json result{{"symbol", c.symbol},
                      {"maturity", slice.maturity},
                      {"spot", slice.spot},
                      {"prior_paths", prior_simulation(rc, i).n_paths},
                      {"prior_seed", prior_simulation(rc, i).seed},
                      {"tail_fit", tail},
                      {"tail_note", res[i].tail_note},
                      {"bounds", rows}};
    out.add_json("bounds_" + c.symbol + ".json", envelope(rc, "bounds", result, warnings));
    out.files.emplace_back("bounds_" + c.symbol + ".csv", csv.str());
    out.summary += c.symbol + ": " + std::to_string(rows.size()) + " strikes bounded at T=" +
                   std::to_string(slice.maturity) + "\n";
    out.warnings.insert(out.warnings.end(), warnings.begin(), warnings.end());
  }
  return out;
}

// ---------------------------------------------------------------------------
// correlate
// ---------------------------------------------------------------------------

// Columns: date, then one column of periodic log returns per symbol.
std::pair<Matrix, Matrix> returns_moments(const fs::path& path, const std::vector<std::string>& symbols) {
  require_file(path, "returns file");
  std::ifstream in(path, std::ios::binary);
  std::string line;
  if (!std::getline(in, line)) throw DataError("returns file '" + path.string() + "' is empty");
  const auto header = rmot::detail::split_csv(line);
  std::vector<std::size_t> col;
  for (const auto& s : symbols) {
    const auto it = std::find(header.begin(), header.end(), s);
    if (it == header.end()) throw DataError("returns file has no column '" + s + "'");
    col.push_back(static_cast<std::size_t>(it - header.begin()));
  }
  std::vector<std::vector<double>> rows;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    const auto f = rmot::detail::split_csv(line);
    std::vector<double> r;
    for (auto c : col) {
      double v = 0.0;
      if (c >= f.size() || !rmot::detail::parse_number(f[c], v)) throw DataError("returns file: bad value at line " + std::to_string(line_no), line_no);
      r.push_back(v);
    }
    rows.push_back(std::move(r));
  }
  if (rows.size() < 3) throw DataError("returns file needs at least three rows");
  const auto n = static_cast<Eigen::Index>(symbols.size());
  Matrix x(static_cast<Eigen::Index>(rows.size()), n);
  for (std::size_t t = 0; t < rows.size(); ++t)
    for (Eigen::Index j = 0; j < n; ++j) x(static_cast<Eigen::Index>(t), j) = rows[t][static_cast<std::size_t>(j)];
  const Matrix centred = x.rowwise() - x.colwise().mean();
  const Matrix cov = centred.transpose() * centred / static_cast<double>(x.rows() - 1);
  const Vector sd = cov.diagonal().cwiseSqrt();
  const Matrix corr = cov.cwiseQuotient(sd * sd.transpose());
  return {cov, corr};
}

struct CorrelationRun {
  std::vector<std::string> symbols;
  double maturity = 0.0;
  std::vector<double> hurst;
  RoughCovarianceFunctional cov;
  Matrix realized, rho_hist;
  CorrelationEstimate estimate;
};

CorrelationRun run_correlation(const RunConfig& rc, const std::vector<Calibrated>& cal) {
  const auto& m = rc.section("multi");
  const auto slice_index = rc.section("rmot").at("slice").get<std::size_t>();
  CorrelationRun run;
  std::vector<RoughHestonParams> params;
  std::size_t min_strikes = std::numeric_limits<std::size_t>::max();
  for (const auto& c : cal) {
    run.symbols.push_back(c.symbol);
    params.push_back(c.params(slice_index));
    run.hurst.push_back(params.back().hurst);
    min_strikes = std::min(min_strikes, c.strikes);
  }
  run.maturity = m.at("maturity").is_null() ? cal.front().slice(slice_index).maturity : m.at("maturity").get<double>();
  run.cov = covariance_functional(params, run.maturity);
  const auto n = static_cast<Eigen::Index>(cal.size());
  std::optional<std::pair<Matrix, Matrix>> moments;
  if (!m.at("returns").is_null()) moments = returns_moments(rc.resolve(m.at("returns")), run.symbols);
  if (!m.at("realized_covariance").is_null()) {
    run.realized = matrix_from_json(m.at("realized_covariance"), n, "multi.realized_covariance");
  } else if (moments) {
    run.realized = moments->first * (m.at("periods_per_year").get<double>() * run.maturity);
  } else {
    throw ConfigError("correlate needs multi.realized_covariance or multi.returns");
  }
  if (!m.at("rho_hist").is_null()) run.rho_hist = matrix_from_json(m.at("rho_hist"), n, "multi.rho_hist");
  else if (moments) run.rho_hist = moments->second;
  else run.rho_hist = Matrix::Identity(n, n);
  CorrelationConfig cfg = correlation_config(rc);
  cfg.strikes = min_strikes;
  run.estimate = estimate_correlation(run.hurst, run.cov, run.realized, run.rho_hist, cfg);
  return run;
}

Outcome cmd_correlate(const RunConfig& rc) {
  require_assets(rc, 2);
  const auto cal = load_calibrations(rc);
  const auto run = run_correlation(rc, cal);
  std::vector<std::string> warnings;
  if (!run.estimate.converged) warnings.push_back("correlation: Newton did not converge");
  if (run.estimate.psd_repaired) warnings.push_back("correlation: estimate repaired to the nearest correlation matrix");
  const json result{{"symbols", run.symbols},
                    {"maturity", run.maturity},
                    {"hurst", run.hurst},
                    {"psi", matrix_to_json(run.cov.psi)},
                    {"second_order_budget", run.cov.second_order_budget},
                    {"realized_covariance", matrix_to_json(run.realized)},
                    {"rho_hist", matrix_to_json(run.rho_hist)},
                    {"estimate", to_json(run.estimate)}};
  Outcome out;
  out.add_json("correlation.json", envelope(rc, "correlate", result, warnings));
  std::ostringstream s;
  for (Eigen::Index i = 0; i < run.estimate.rho.rows(); ++i)
    for (Eigen::Index j = i + 1; j < run.estimate.rho.cols(); ++j)
      s << run.symbols[static_cast<std::size_t>(i)] << '/' << run.symbols[static_cast<std::size_t>(j)]
        << ": rho=" << run.estimate.rho(i, j) << " +- " << run.estimate.ci_halfwidth(i, j) << "\n";
  out.summary = s.str();
  out.warnings = warnings;
  return out;
}

// ---------------------------------------------------------------------------
// basket
// ---------------------------------------------------------------------------

Outcome cmd_basket(const RunConfig& rc) {
  require_assets(rc, 2);
  const auto cal = load_calibrations(rc);
  const auto corr_doc = read_json(rc.output_dir() / "correlation.json", "correlation artifact (run 'correlate' first)");
  const auto n = static_cast<Eigen::Index>(cal.size());
  Matrix rho;
  try {
    const auto& r = corr_doc.at("result");
    if (r.at("symbols").get<std::vector<std::string>>() != rc.symbols())
      throw DataError("correlation artifact was built for different assets; rerun 'correlate'");
    rho = matrix_from_json(r.at("estimate").at("rho"), n, "correlation estimate");
  } catch (const json::exception& e) {
    throw DataError(std::string("correlation artifact: ") + e.what());
  }
  const auto& b = rc.section("basket");
  const auto slice_index = rc.section("rmot").at("slice").get<std::size_t>();
  std::vector<double> weights = b.at("weights").is_null()
                                    ? std::vector<double>(cal.size(), 1.0 / static_cast<double>(cal.size()))
                                    : b.at("weights").get<std::vector<double>>();
  std::vector<MarketSlice> chains;
  for (const auto& c : cal) chains.push_back(c.slice(slice_index));
  for (const auto& s : chains)
    if (std::abs(s.maturity - chains.front().maturity) > 1e-9)
      throw ConfigError("basket: the selected slices have different maturities");

  std::vector<TiltedMeasure> marginals(cal.size());
  parallel_for(cal.size(), [&](std::size_t i) {
    const auto& s = chains[i];
    const auto prior = simulate_terminal(cal[i].params(slice_index), s.spot, s.maturity, prior_simulation(rc, i), s.rate);
    marginals[i] = tilt(prior, slice_constraints(prior.atoms, s));
  });
  const RoughCopula copula(marginals, rho, CopulaConfig{b.at("copula_samples").get<std::size_t>(), rc.seed()});
  double forward = 0.0;
  for (std::size_t i = 0; i < chains.size(); ++i)
    forward += weights[i] * chains[i].spot * std::exp(chains[i].rate * chains[i].maturity);
  const BasketSpec spec{weights, b.at("strike").is_null() ? forward : b.at("strike").get<double>()};
  BasketConfig bc;
  bc.samples = b.at("samples");
  bc.seed = rc.seed() + 1;
  bc.kl_radius = b.at("kl_radius");
  const auto res = basket_bounds(copula, spec, chains, bc);

  std::vector<std::string> warnings;
  if (copula.psd_repaired()) warnings.push_back("basket: copula correlation repaired to PSD");
  const json result{{"symbols", rc.symbols()},
                    {"weights", weights},
                    {"strike", spec.strike},
                    {"maturity", chains.front().maturity},
                    {"forward", res.forward},
                    {"bound", to_json(res.bound)},
                    {"relative_spread", res.relative_spread},
                    {"copula_correlation", matrix_to_json(copula.gaussian_correlation())}};
  Outcome out;
  out.add_json("basket.json", envelope(rc, "basket", result, warnings));
  std::ostringstream s;
  s << "basket K=" << spec.strike << ": [" << res.bound.lower << ", " << res.bound.upper << "] mid " << res.bound.mid
    << "\n";
  out.summary = s.str();
  out.warnings = warnings;
  return out;
}

// ---------------------------------------------------------------------------
// backtest, capital
// ---------------------------------------------------------------------------

Outcome cmd_backtest(const RunConfig& rc) {
  const auto& b = rc.section("backtest");
  if (b.at("input").is_null()) throw ConfigError("backtest.input is not set");
  const auto path = rc.resolve(b.at("input"));
  require_file(path, "backtest input");
  std::ifstream in(path, std::ios::binary);
  const auto [bounds, realized] = read_backtest_csv(in);
  const auto ledger = traffic_light_backtest(bounds, realized, backtest_policy(rc));
  std::vector<std::string> warnings;
  if (ledger.zone != Zone::Green)
    warnings.push_back(std::string("backtest: ") + zone_label(ledger.zone) + " zone with " +
                       std::to_string(ledger.exceptions) + " exceptions");
  Outcome out;
  out.add_json("backtest.json", envelope(rc, "backtest", to_json(ledger), warnings));
  std::ostringstream csv;
  write_backtest_csv(csv, ledger);
  out.files.emplace_back("backtest_ledger.csv", csv.str());
  out.summary = std::string("zone ") + zone_label(ledger.zone) + ", " + std::to_string(ledger.exceptions) +
                " exceptions in " + std::to_string(ledger.window) + " days\n";
  out.warnings = warnings;
  return out;
}

Outcome cmd_capital(const RunConfig& rc) {
  const auto& c = rc.section("capital");
  if (c.at("book").is_null()) throw ConfigError("capital.book is not set");
  const auto input = capital_input_from_json(read_json(rc.resolve(c.at("book")), "capital book"));
  const auto cmp = compare_capital(input.base, input.scenarios);
  const auto text = render_capital_report(cmp);
  json result = to_json(cmp);
  result["book"] = to_json(input.base);
  Outcome out;
  out.add_json("capital.json", envelope(rc, "capital", result, {}));
  out.files.emplace_back("capital_report.txt", text);
  out.summary = text;
  return out;
}

// ---------------------------------------------------------------------------
// report
// ---------------------------------------------------------------------------

Outcome cmd_report(const RunConfig& rc) {
  std::vector<std::string> names;
  for (const auto& sym : rc.symbols()) {
    names.push_back(calibration_name(sym));
    names.push_back("bounds_" + sym + ".json");
  }
  for (const char* n : {"correlation.json", "basket.json", "backtest.json", "capital.json"}) names.emplace_back(n);
  json stages = json::object();
  json missing = json::array();
  std::vector<std::string> warnings;
  for (const auto& name : names) {
    const auto path = rc.output_dir() / name;
    if (!fs::is_regular_file(path)) {
      missing.push_back(name);
      continue;
    }
    const auto doc = read_json(path, "artifact");
    if (doc.value("config", json()) != rc.doc) warnings.push_back(name + ": produced under a different config");
    for (const auto& w : doc.value("warnings", json::array())) warnings.push_back(w.get<std::string>());
    stages[name] = doc.at("result");
  }
  if (stages.empty()) throw DataError("no artifacts in '" + rc.output_dir().string() + "'; run the stages first");
  Outcome out;
  out.add_json("report.json", envelope(rc, "report", {{"stages", stages}, {"missing", missing}}, warnings));
  out.summary = std::to_string(stages.size()) + " artifacts collected, " + std::to_string(missing.size()) + " missing\n";
  out.warnings = warnings;
  return out;
}

}  // namespace
}  // namespace rmot::cli

int main(int argc, char** argv) {
  using namespace rmot::cli;
  CLI::App app{"Rough martingale optimal transport pipeline"};
  app.require_subcommand(1);
  app.fallthrough();
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> output_dir;
  unsigned workers = 0;
  std::vector<std::string> sets;
  app.add_option("-c,--config", config_path, "Run manifest (JSON)")->required();
  app.add_option("--seed", seed, "Override the manifest seed");
  app.add_option("-o,--output-dir", output_dir, "Override the manifest output directory");
  app.add_option("--workers", workers, "Worker threads (default: RMOT_WORKERS or all cores)");
  app.add_option("--set", sets, "Override a manifest entry, e.g. --set rmot.n_paths=50000");

  using Command = Outcome (*)(const RunConfig&);
  const std::vector<std::tuple<const char*, const char*, Command>> commands{
      {"calibrate", "Filter chains and fit rough Heston marginals", cmd_calibrate},
      {"bounds", "Single-asset RMOT call bounds", cmd_bounds},
      {"correlate", "Recover the correlation matrix from the marginals", cmd_correlate},
      {"basket", "Basket call bounds under the rough copula", cmd_basket},
      {"backtest", "Traffic-light backtest of a bound series", cmd_backtest},
      {"capital", "Capital charge comparison report", cmd_capital},
      {"report", "Collect stage artifacts into one report", cmd_report}};
  std::map<CLI::App*, Command> dispatch;
  for (const auto& [name, help, fn] : commands) dispatch[app.add_subcommand(name, help)] = fn;

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 1;
  }

  try {
    if (workers > 0) setenv("RMOT_WORKERS", std::to_string(workers).c_str(), 1);
    std::vector<std::pair<std::string, std::string>> overrides;
    for (const auto& s : sets) {
      const auto eq = s.find('=');
      if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + s + "'");
      overrides.emplace_back(s.substr(0, eq), s.substr(eq + 1));
    }
    if (seed) overrides.emplace_back("seed", std::to_string(*seed));
    if (output_dir) overrides.emplace_back("output_dir", nlohmann::json(*output_dir).dump());
    const RunConfig rc = load_config(config_path, overrides);
    const auto sub = app.get_subcommands().front();
    const Outcome out = dispatch.at(sub)(rc);
    commit(rc.output_dir(), out);
    std::cout << out.summary;
    for (const auto& w : out.warnings) std::cerr << "warning: " << w << "\n";
    return out.warnings.empty() ? 0 : 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
