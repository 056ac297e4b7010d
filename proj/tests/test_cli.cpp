#include "rmot/calibration.hpp"
#include "rmot/market_data.hpp"
#include "rmot/rmot_multi.hpp"

#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>

using namespace rmot;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

const Date kQuoteDate{std::chrono::year{2024}, std::chrono::month{3}, std::chrono::day{1}};
const double kMaturity = 91.0 / 365.0;
const RoughHestonParams kTruthA{0.10, 0.3, -0.7, 0.02, 1.0, 0.08};
const RoughHestonParams kTruthB{0.30, 0.3, -0.5, 0.03, 1.0, 0.08};
const double kRho = 0.5;

fs::path work_dir() { return fs::path(RMOT_CLI_WORK); }

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  out << text;
}

json read_json(const fs::path& p) { return json::parse(read_file(p)); }

int run(const std::string& args) {
  const std::string cmd = std::string(RMOT_CLI) + " " + args + " > /dev/null 2> " + (work_dir() / "stderr.txt").string();
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string last_stderr() { return read_file(work_dir() / "stderr.txt"); }

void write_chain_for(const RoughHestonParams& p, const std::string& sym, std::vector<double> maturities,
                     std::size_t strikes, std::uint64_t seed) {
  SyntheticChainSpec spec;
  spec.maturities = std::move(maturities);
  spec.strikes = strikes;
  spec.relative_vol_noise = 0.001;
  spec.seed = seed;
  std::vector<RawQuote> quotes;
  for (const auto& slice : synthetic_chain(p, spec)) {
    const auto q = quotes_from_slice(slice, sym, kQuoteDate);
    quotes.insert(quotes.end(), q.begin(), q.end());
  }
  write_chain(work_dir() / (sym + ".csv"), quotes, ChainFormat::Csv);
}

json base_config(const std::string& out) {
  // Realised covariance consistent with the truth at correlation kRho.
  const auto cov = covariance_functional({kTruthA, kTruthB}, kMaturity);
  const double off = kRho * cov.psi(0, 1);
  return {{"seed", 17},
          {"output_dir", out},
          {"assets", {{{"symbol", "AAA"}, {"chain", "AAA.csv"}}, {{"symbol", "BBB"}, {"chain", "BBB.csv"}}}},
          {"calibration", {{"v_inf", 0.08}}},
          {"rmot", {{"n_paths", 5000}, {"n_steps", 50}, {"moneyness", {0.9, 1.0, 1.1}}}},
          {"multi", {{"gamma", 1e-3}, {"realized_covariance", {{cov.psi(0, 0), off}, {off, cov.psi(1, 1)}}}}},
          {"basket", {{"samples", 5000}, {"copula_samples", 2000}}},
          {"backtest", {{"input", "backtest.csv"}}},
          {"capital", {{"book", std::string(RMOT_TEST_DATA) + "/capital_book.json"}}}};
}

void write_config(const std::string& name, const json& cfg) { write_file(work_dir() / name, cfg.dump(2)); }

void write_backtest(const std::string& name, int exceptions) {
  std::ostringstream csv;
  csv << "date,low,high,realized\n";
  for (int d = 0; d < 125; ++d)
    csv << format_date(add_days(kQuoteDate, d)) << ",95,105," << (d < exceptions ? 106 : 100) << "\n";
  write_file(work_dir() / name, csv.str());
}

class Cli : public ::testing::Test {
protected:
  static void SetUpTestSuite() {
    fs::remove_all(work_dir());
    fs::create_directories(work_dir());
    const std::vector<double> expiries{kMaturity, 126.0 / 365.0, 175.0 / 365.0};
    write_chain_for(kTruthA, "AAA", expiries, 54, 1);
    write_chain_for(kTruthB, "BBB", expiries, 54, 2);
    write_chain_for(kTruthA, "SMALL", {kMaturity}, 10, 3);
    write_backtest("backtest.csv", 1);
    write_config("run.json", base_config("out"));
    pipeline_codes = {run("calibrate -c " + cfg("run.json")), run("bounds -c " + cfg("run.json")),
                      run("correlate -c " + cfg("run.json")), run("basket -c " + cfg("run.json"))};
  }

  static std::string cfg(const std::string& name) { return (work_dir() / name).string(); }
  static fs::path out(const std::string& name) { return work_dir() / "out" / name; }

  static inline std::vector<int> pipeline_codes;
};

}  // namespace

TEST_F(Cli, CalibrateWritesParametersAndFisherReport) {
  ASSERT_EQ(pipeline_codes[0], 0) << last_stderr();
  const auto doc = read_json(out("calibration_AAA.json"));
  EXPECT_EQ(doc["schema_version"], 1);
  EXPECT_EQ(doc["seed"], 17);
  EXPECT_EQ(doc["config"]["rmot"]["n_paths"], 5000);
  EXPECT_EQ(doc["config"]["filter"]["min_volume"], 100);
  const auto& fit = doc["result"]["fits"][0];
  for (const char* k : {"H", "nu", "rho", "v0"}) EXPECT_TRUE(fit["params"].contains(k)) << k;
  EXPECT_NEAR(fit["params"]["H"].get<double>(), kTruthA.hurst, 0.05);
  EXPECT_TRUE(fit["fisher"].contains("d_eff"));
  EXPECT_EQ(fit["fisher"]["eigenvalues"].size(), 5u);
  EXPECT_EQ(doc["result"]["strikes"], 54);
  EXPECT_EQ(doc["result"]["slices"].size(), 3u);
  EXPECT_TRUE(fs::exists(out("audit_AAA.jsonl")));
}

TEST_F(Cli, SparseChainExitsWithIdentifiabilityWarning) {
  auto c = base_config("small_out");
  c["assets"] = {{{"symbol", "SMALL"}, {"chain", "SMALL.csv"}}};
  write_config("small.json", c);
  EXPECT_EQ(run("calibrate -c " + cfg("small.json")), 2);
  EXPECT_NE(last_stderr().find("identifiability"), std::string::npos) << last_stderr();
  const auto doc = read_json(work_dir() / "small_out" / "calibration_SMALL.json");
  EXPECT_FALSE(doc["warnings"].empty());
}

TEST_F(Cli, MissingInputIsHardErrorWithoutOutputs) {
  auto c = base_config("missing_out");
  c["assets"][1]["chain"] = "nope.csv";
  write_config("missing.json", c);
  EXPECT_EQ(run("calibrate -c " + cfg("missing.json")), 1);
  EXPECT_NE(last_stderr().find("nope.csv"), std::string::npos);
  EXPECT_FALSE(fs::exists(work_dir() / "missing_out"));
  EXPECT_EQ(run("calibrate -c " + cfg("does_not_exist.json")), 1);
  EXPECT_EQ(run("bounds -c " + cfg("missing.json")), 1);
  EXPECT_NE(last_stderr().find("run 'calibrate' first"), std::string::npos);
}

TEST_F(Cli, ConfigValidation) {
  auto c = base_config("bad_out");
  c["rmot"]["n_pahts"] = 10;
  write_config("typo.json", c);
  EXPECT_EQ(run("capital -c " + cfg("typo.json")), 1);
  EXPECT_NE(last_stderr().find("rmot.n_pahts"), std::string::npos);
  EXPECT_EQ(run("capital -c " + cfg("run.json") + " --set rmot.nope=1"), 1);
  EXPECT_EQ(run("frobnicate -c " + cfg("run.json")), 1);
  EXPECT_FALSE(fs::exists(work_dir() / "bad_out"));
}

TEST_F(Cli, BoundsBracketTheMid) {
  ASSERT_EQ(pipeline_codes[1], 0) << last_stderr();
  const auto doc = read_json(out("bounds_BBB.json"));
  const auto& rows = doc["result"]["bounds"];
  ASSERT_EQ(rows.size(), 3u);
  for (const auto& r : rows) {
    EXPECT_LE(r["lower"].get<double>(), r["mid"].get<double>() + 1e-9);
    EXPECT_GE(r["upper"].get<double>(), r["mid"].get<double>() - 1e-9);
    EXPECT_LE(r["classical"]["lower"].get<double>(), r["lower"].get<double>() + 1e-9);
    EXPECT_GE(r["classical"]["upper"].get<double>(), r["upper"].get<double>() - 1e-9);
  }
  EXPECT_EQ(doc["result"]["prior_seed"], 18);
  EXPECT_TRUE(fs::exists(out("bounds_BBB.csv")));
}

TEST_F(Cli, CorrelateReportsRhoWithInterval) {
  ASSERT_EQ(pipeline_codes[2], 0) << last_stderr();
  const auto doc = read_json(out("correlation.json"));
  const auto& e = doc["result"]["estimate"];
  EXPECT_NEAR(e["rho"][0][1].get<double>(), kRho, 0.1);
  EXPECT_GT(e["ci_halfwidth"][0][1].get<double>(), 0.0);
  EXPECT_EQ(e["rho"][0][1], e["rho"][1][0]);
  EXPECT_TRUE(e["converged"].get<bool>());
}

TEST_F(Cli, BasketAndReport) {
  ASSERT_EQ(pipeline_codes[3], 0) << last_stderr();
  const auto doc = read_json(out("basket.json"));
  const auto& b = doc["result"]["bound"];
  EXPECT_LT(b["lower"].get<double>(), b["upper"].get<double>());
  EXPECT_NEAR(doc["result"]["strike"].get<double>(), 100.0, 1e-9);
  EXPECT_EQ(run("report -c " + cfg("run.json")), 0) << last_stderr();
  const auto rep = read_json(out("report.json"));
  EXPECT_TRUE(rep["result"]["stages"].contains("correlation.json"));
  EXPECT_TRUE(rep["result"]["stages"].contains("bounds_AAA.json"));
}

TEST_F(Cli, RerunIsByteIdentical) {
  ASSERT_EQ(pipeline_codes[1], 0);
  ASSERT_EQ(pipeline_codes[2], 0);
  const auto bounds = read_file(out("bounds_AAA.json"));
  const auto corr = read_file(out("correlation.json"));
  const auto cal = read_file(out("calibration_BBB.json"));
  ASSERT_EQ(run("calibrate -c " + cfg("run.json") + " --workers 2"), 0);
  ASSERT_EQ(run("bounds -c " + cfg("run.json") + " --workers 3"), 0);
  ASSERT_EQ(run("correlate -c " + cfg("run.json")), 0);
  EXPECT_EQ(read_file(out("calibration_BBB.json")), cal);
  EXPECT_EQ(read_file(out("bounds_AAA.json")), bounds);
  EXPECT_EQ(read_file(out("correlation.json")), corr);
  // A different seed changes the Monte Carlo prior and is recorded.
  ASSERT_EQ(run("bounds -c " + cfg("run.json") + " --seed 99 -o seed99"), 1);  // no calibration there
  EXPECT_FALSE(fs::exists(work_dir() / "seed99"));
}

TEST_F(Cli, CapitalTable) {
  EXPECT_EQ(run("capital -c " + cfg("run.json") + " -o capital_out"), 0) << last_stderr();
  const auto text = read_file(work_dir() / "capital_out" / "capital_report.txt");
  EXPECT_EQ(text, read_file(std::string(RMOT_TEST_DATA) + "/capital_report.golden.txt"));
  const auto doc = read_json(work_dir() / "capital_out" / "capital.json");
  EXPECT_EQ(doc["result"]["base"]["charges"]["classical_mot"]["charge"].get<double>(), 1000e6);
  EXPECT_EQ(doc["result"]["base"]["relief"].get<double>(), 880e6);
}

TEST_F(Cli, BacktestZoneDrivesExitCode) {
  EXPECT_EQ(run("backtest -c " + cfg("run.json") + " -o bt_green"), 0) << last_stderr();
  EXPECT_EQ(read_json(work_dir() / "bt_green" / "backtest.json")["result"]["zone"], "green");
  write_backtest("backtest3.csv", 2);
  EXPECT_EQ(run("backtest -c " + cfg("run.json") + " -o bt_amber --set backtest.input=backtest3.csv"), 2);
  EXPECT_NE(last_stderr().find("amber"), std::string::npos);
}
