#pragma once

// Stress-scenario capital comparison and traffic-light backtesting.

#include "rmot/market_data.hpp"

#include <array>
#include <iomanip>

namespace rmot {

inline constexpr const char* kCapitalDisclaimer =
    "Disclaimer. The capital relief figures presented below are illustrative simulations based on specific "
    "portfolio compositions, calibration dates, and model assumptions. Actual capital impact depends on supervisory "
    "interpretation, internal model validation, and ongoing market conditions. This report does not constitute "
    "regulatory advice.";

enum class CapitalMethod { ClassicalMot, HistoricalStress, Rmot, BlackScholes };

inline constexpr std::array<CapitalMethod, 4> kCapitalMethods{CapitalMethod::ClassicalMot, CapitalMethod::HistoricalStress,
                                                              CapitalMethod::Rmot, CapitalMethod::BlackScholes};

inline const char* method_label(CapitalMethod m) {
  switch (m) {
    case CapitalMethod::ClassicalMot: return "Class. MOT";
    case CapitalMethod::HistoricalStress: return "Hist. Stress";
    case CapitalMethod::Rmot: return "RMOT";
    case CapitalMethod::BlackScholes: return "Black-Scholes";
  }
  return "";
}

inline const char* method_key(CapitalMethod m) {
  switch (m) {
    case CapitalMethod::ClassicalMot: return "classical_mot";
    case CapitalMethod::HistoricalStress: return "historical_stress";
    case CapitalMethod::Rmot: return "rmot";
    case CapitalMethod::BlackScholes: return "black_scholes";
  }
  return "";
}

struct PositionBounds {
  double lower = 0.0;
  double mid = 0.0;
  double upper = 0.0;
  bool infinite = false;
};

struct Position {
  std::string name;
  double notional = 0.0;
  double quantity = 0.0;  // signed contract count
  PositionBounds classical, rmot, black_scholes;
  double historical_shock = 0.0;  // adverse price move per contract under the stress scenario

  const PositionBounds& bounds(CapitalMethod m) const {
    return m == CapitalMethod::ClassicalMot ? classical : m == CapitalMethod::Rmot ? rmot : black_scholes;
  }
};

struct Book {
  std::string label;
  std::vector<Position> positions;

  double notional() const {
    double n = 0.0;
    for (const auto& p : positions) n += p.notional;
    return n;
  }
};

struct MethodCharge {
  CapitalMethod method{};
  double gamma_sum = 0.0;
  double charge = 0.0;
  bool notional_capped = false;  // an infinite bound charged the full notional
};

/// Stress loss of one position: long positions lose (upper - mid) per
/// contract, short positions (mid - lower).
inline double position_gamma(const Position& p, CapitalMethod m) {
  if (m == CapitalMethod::HistoricalStress) return std::abs(p.quantity) * p.historical_shock;
  const auto& b = p.bounds(m);
  return p.quantity >= 0.0 ? p.quantity * (b.upper - b.mid) : -p.quantity * (b.mid - b.lower);
}

/// SES = max(sum gamma_i, 0.01 notional); an infinite bound charges the notional.
inline MethodCharge capital_charge(const Book& book, CapitalMethod m) {
  MethodCharge out;
  out.method = m;
  const double notional = book.notional();
  for (const auto& p : book.positions) {
    require(std::isfinite(p.notional) && p.notional >= 0.0 && std::isfinite(p.quantity),
            "capital_charge: position '" + p.name + "' has an invalid notional or quantity");
    if (m != CapitalMethod::HistoricalStress && p.bounds(m).infinite) {
      out.notional_capped = true;
      continue;
    }
    if (m != CapitalMethod::HistoricalStress) {
      const auto& b = p.bounds(m);
      require(std::isfinite(b.lower) && std::isfinite(b.mid) && std::isfinite(b.upper) && b.lower <= b.mid &&
                  b.mid <= b.upper,
              "capital_charge: position '" + p.name + "' has invalid " + method_key(m) + " bounds");
    }
    out.gamma_sum += position_gamma(p, m);
  }
  out.charge = out.notional_capped ? notional : std::max(out.gamma_sum, 0.01 * notional);
  return out;
}

struct CapitalColumn {
  std::string label;
  double notional = 0.0;
  std::array<MethodCharge, 4> charges{};
  double relief = 0.0;          // classical - rmot
  double relief_percent = 0.0;  // relief / classical

  const MethodCharge& at(CapitalMethod m) const { return charges[static_cast<std::size_t>(m)]; }
};

struct CapitalComparison {
  CapitalColumn base;
  std::vector<CapitalColumn> sensitivity;
};

inline CapitalColumn capital_column(const Book& book) {
  CapitalColumn c;
  c.label = book.label;
  c.notional = book.notional();
  for (auto m : kCapitalMethods) c.charges[static_cast<std::size_t>(m)] = capital_charge(book, m);
  const double cl = c.at(CapitalMethod::ClassicalMot).charge;
  c.relief = cl - c.at(CapitalMethod::Rmot).charge;
  c.relief_percent = cl > 0.0 ? c.relief / cl : 0.0;
  return c;
}

inline CapitalComparison compare_capital(const Book& base, const std::vector<Book>& scenarios = {}) {
  CapitalComparison out;
  out.base = capital_column(base);
  for (const auto& s : scenarios) out.sensitivity.push_back(capital_column(s));
  return out;
}

// ---------------------------------------------------------------------------
// Book I/O
// ---------------------------------------------------------------------------

namespace detail {

inline PositionBounds bounds_from_json(const nlohmann::json& j) {
  PositionBounds b;
  b.infinite = j.value("infinite", false);
  if (!b.infinite) {
    b.lower = j.at("lower").get<double>();
    b.mid = j.at("mid").get<double>();
    b.upper = j.at("upper").get<double>();
  }
  return b;
}

inline nlohmann::json bounds_to_json(const PositionBounds& b) {
  if (b.infinite) return {{"infinite", true}};
  return {{"lower", b.lower}, {"mid", b.mid}, {"upper", b.upper}};
}

inline Book book_from_json(const nlohmann::json& j) {
  Book b;
  b.label = j.value("label", std::string("base"));
  for (const auto& p : j.at("positions")) {
    Position q;
    q.name = p.at("name").get<std::string>();
    q.notional = p.at("notional").get<double>();
    q.quantity = p.at("quantity").get<double>();
    q.historical_shock = p.value("historical_shock", 0.0);
    const auto& bj = p.at("bounds");
    q.classical = bounds_from_json(bj.at("classical_mot"));
    q.rmot = bounds_from_json(bj.at("rmot"));
    q.black_scholes = bounds_from_json(bj.at("black_scholes"));
    b.positions.push_back(std::move(q));
  }
  return b;
}

}  // namespace detail

struct CapitalInput {
  Book base;
  std::vector<Book> scenarios;
};

/// {"label", "positions": [...], "scenarios": [{"label", "positions"}, ...]}
inline CapitalInput capital_input_from_json(const nlohmann::json& j) {
  CapitalInput in;
  try {
    in.base = detail::book_from_json(j);
    if (j.contains("scenarios"))
      for (const auto& s : j.at("scenarios")) in.scenarios.push_back(detail::book_from_json(s));
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("capital book: ") + e.what());
  }
  return in;
}

inline nlohmann::json to_json(const Book& b) {
  nlohmann::json ps = nlohmann::json::array();
  for (const auto& p : b.positions)
    ps.push_back({{"name", p.name},
                  {"notional", p.notional},
                  {"quantity", p.quantity},
                  {"historical_shock", p.historical_shock},
                  {"bounds",
                   {{"classical_mot", detail::bounds_to_json(p.classical)},
                    {"rmot", detail::bounds_to_json(p.rmot)},
                    {"black_scholes", detail::bounds_to_json(p.black_scholes)}}}});
  return {{"label", b.label}, {"positions", ps}};
}

// ---------------------------------------------------------------------------
// Report
// ---------------------------------------------------------------------------

/// $1,000M style; one decimal when the amount is not a whole million.
inline std::string format_millions(double amount) {
  const double m = amount / 1e6;
  const double r = std::round(m * 10.0) / 10.0;
  const bool whole = std::abs(r - std::round(r)) < 1e-9;
  const auto units = static_cast<long long>(std::floor(std::abs(r) + 1e-9));
  std::string digits = std::to_string(units);
  for (int i = static_cast<int>(digits.size()) - 3; i > 0; i -= 3) digits.insert(static_cast<std::size_t>(i), ",");
  std::string s = (r < 0 ? "-$" : "$") + digits;
  if (!whole) s += "." + std::to_string(static_cast<int>(std::lround((std::abs(r) - static_cast<double>(units)) * 10.0)));
  return s + "M";
}

inline std::string format_percent(double fraction) {
  char buf[32];
  const double p = std::round(fraction * 1000.0) / 10.0;
  if (std::abs(p - std::round(p)) < 1e-9) std::snprintf(buf, sizeof buf, "%.0f%%", p);
  else std::snprintf(buf, sizeof buf, "%.1f%%", p);
  return buf;
}

inline std::string render_capital_report(const CapitalComparison& c) {
  std::ostringstream os;
  auto pad = [](const std::string& s, std::size_t w) { return s.size() >= w ? s + " " : s + std::string(w - s.size(), ' '); };
  os << kCapitalDisclaimer << "\n\n";
  os << "Capital Charge Comparison (" << format_millions(c.base.notional) << " Notional)\n";
  os << pad("Method", 16) << pad("Charge", 12) << "Relief vs Class. MOT\n";
  for (auto m : kCapitalMethods) {
    const auto& ch = c.base.at(m);
    os << pad(method_label(m), 16) << pad(format_millions(ch.charge), 12);
    if (m == CapitalMethod::Rmot) os << format_millions(c.base.relief) << " (" << format_percent(c.base.relief_percent) << ")";
    else if (m != CapitalMethod::ClassicalMot)
      os << format_millions(c.base.at(CapitalMethod::ClassicalMot).charge - ch.charge);
    else os << "-";
    os << "\n";
  }
  if (!c.sensitivity.empty()) {
    os << "\nCapital Relief Sensitivity Analysis\n";
    os << pad("Method", 16) << pad("Base Case", 12);
    for (const auto& s : c.sensitivity) os << pad(s.label, 16);
    os << "\n";
    for (auto m : {CapitalMethod::ClassicalMot, CapitalMethod::HistoricalStress, CapitalMethod::Rmot}) {
      os << pad(method_label(m), 16) << pad(format_millions(c.base.at(m).charge), 12);
      for (const auto& s : c.sensitivity) os << pad(format_millions(s.at(m).charge), 16);
      os << "\n";
    }
    os << pad("Relief vs MOT", 16) << pad(format_percent(c.base.relief_percent), 12);
    for (const auto& s : c.sensitivity) os << pad(format_percent(s.relief_percent), 16);
    os << "\n";
  }
  std::string out = os.str();
  // Trailing pad spaces make golden files fragile.
  std::string cleaned;
  std::istringstream in(out);
  std::string line;
  while (std::getline(in, line)) {
    while (!line.empty() && line.back() == ' ') line.pop_back();
    cleaned += line + "\n";
  }
  return cleaned;
}

inline nlohmann::json to_json(const CapitalColumn& c) {
  nlohmann::json charges = nlohmann::json::object();
  for (auto m : kCapitalMethods) {
    const auto& ch = c.at(m);
    charges[method_key(m)] = {{"charge", ch.charge}, {"gamma_sum", ch.gamma_sum}, {"notional_capped", ch.notional_capped}};
  }
  return {{"label", c.label},
          {"notional", c.notional},
          {"charges", charges},
          {"relief", c.relief},
          {"relief_percent", c.relief_percent}};
}

inline nlohmann::json to_json(const CapitalComparison& c) {
  nlohmann::json s = nlohmann::json::array();
  for (const auto& col : c.sensitivity) s.push_back(to_json(col));
  return {{"disclaimer", kCapitalDisclaimer}, {"base", to_json(c.base)}, {"sensitivity", s}};
}

// ---------------------------------------------------------------------------
// Traffic-light backtest
// ---------------------------------------------------------------------------

enum class Zone { Green, Amber, Red };

inline const char* zone_label(Zone z) { return z == Zone::Green ? "green" : z == Zone::Amber ? "amber" : "red"; }

struct BacktestPolicy {
  std::size_t window = 250;
  double days_per_year = 250.0;
  double green_per_year = 2.5;  // exceptions/year at or below which the zone is green
  double amber_per_year = 5.0;  // above this the zone is red

  void validate() const {
    require(window > 0 && days_per_year > 0, "BacktestPolicy: window and year length must be positive");
    require(green_per_year >= 0 && amber_per_year >= green_per_year, "BacktestPolicy: thresholds must be ordered");
  }
};

struct BoundObservation {
  Date date{};
  double low = 0.0;
  double high = 0.0;
};

struct Realization {
  Date date{};
  double price = 0.0;
};

struct BacktestRow {
  Date date{};
  double low = 0.0;
  double high = 0.0;
  double realized = 0.0;
  bool exception = false;
};

struct BacktestLedger {
  std::vector<BacktestRow> rows;
  std::size_t exceptions = 0;
  double exceptions_per_year = 0.0;
  Zone zone = Zone::Green;
  std::size_t window = 0;
};

inline Zone classify_zone(std::size_t exceptions, std::size_t days, const BacktestPolicy& policy) {
  const double scale = static_cast<double>(days) / policy.days_per_year;
  const auto e = static_cast<double>(exceptions);
  if (e <= policy.green_per_year * scale + 1e-12) return Zone::Green;
  if (e <= policy.amber_per_year * scale + 1e-12) return Zone::Amber;
  return Zone::Red;
}

/// Bounds dated t are scored against the realization carrying the same date
/// (the caller aligns P_{t+1} to t). Exceptions are realizations outside the
/// closed interval.
inline BacktestLedger traffic_light_backtest(const std::vector<BoundObservation>& bounds,
                                             const std::vector<Realization>& realized, const BacktestPolicy& policy = {}) {
  policy.validate();
  std::map<int, double> by_date;
  auto key = [](const Date& d) { return static_cast<int>(std::chrono::sys_days{d}.time_since_epoch().count()); };
  for (const auto& r : realized) {
    require(std::isfinite(r.price), "traffic_light_backtest: realized prices must be finite");
    require(by_date.emplace(key(r.date), r.price).second,
            "traffic_light_backtest: duplicate realization on " + format_date(r.date));
  }
  std::set<int> bound_dates;
  std::string missing;
  for (const auto& b : bounds) {
    require(bound_dates.insert(key(b.date)).second, "traffic_light_backtest: duplicate bounds on " + format_date(b.date));
    require(std::isfinite(b.low) && std::isfinite(b.high) && b.low <= b.high,
            "traffic_light_backtest: invalid interval on " + format_date(b.date));
    if (!by_date.count(key(b.date))) missing += (missing.empty() ? "" : ", ") + format_date(b.date);
  }
  for (const auto& r : realized)
    if (!bound_dates.count(key(r.date))) missing += (missing.empty() ? "" : ", ") + format_date(r.date);
  if (!missing.empty()) throw DomainError("traffic_light_backtest: date series misaligned; missing: " + missing);

  std::vector<BoundObservation> sorted = bounds;
  std::sort(sorted.begin(), sorted.end(), [&](const auto& a, const auto& b) { return key(a.date) < key(b.date); });
  if (sorted.size() > policy.window) sorted.erase(sorted.begin(), sorted.end() - static_cast<std::ptrdiff_t>(policy.window));
  BacktestLedger out;
  out.window = sorted.size();
  for (const auto& b : sorted) {
    const double p = by_date.at(key(b.date));
    const bool ex = p < b.low || p > b.high;
    out.rows.push_back({b.date, b.low, b.high, p, ex});
    out.exceptions += ex ? 1 : 0;
  }
  out.exceptions_per_year =
      out.window ? static_cast<double>(out.exceptions) * policy.days_per_year / static_cast<double>(out.window) : 0.0;
  out.zone = classify_zone(out.exceptions, out.window, policy);
  return out;
}

inline void write_backtest_csv(std::ostream& os, const BacktestLedger& l) {
  os << "date,low,high,realized,exception\n";
  for (const auto& r : l.rows)
    os << format_date(r.date) << ',' << detail::format_price(r.low) << ',' << detail::format_price(r.high) << ','
       << detail::format_price(r.realized) << ',' << (r.exception ? 1 : 0) << '\n';
}

/// CSV with header date,low,high,realized; returns bounds and realizations.
inline std::pair<std::vector<BoundObservation>, std::vector<Realization>> read_backtest_csv(std::istream& in) {
  std::pair<std::vector<BoundObservation>, std::vector<Realization>> out;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto f = detail::split_csv(line);
    if (n == 1) {
      if (f.size() < 4 || f[0] != "date" || f[1] != "low" || f[2] != "high" || f[3] != "realized")
        throw DataError("schema mismatch at line 1: expected header 'date,low,high,realized'", 1);
      continue;
    }
    double lo, hi, re;
    const auto d = parse_date(f[0]);
    if (f.size() < 4 || !d || !detail::parse_number(f[1], lo) || !detail::parse_number(f[2], hi) ||
        !detail::parse_number(f[3], re))
      throw DataError("malformed backtest row at line " + std::to_string(n), n);
    out.first.push_back({*d, lo, hi});
    out.second.push_back({*d, re});
  }
  return out;
}

inline nlohmann::json to_json(const BacktestLedger& l) {
  return {{"window", l.window},
          {"exceptions", l.exceptions},
          {"exceptions_per_year", l.exceptions_per_year},
          {"zone", zone_label(l.zone)}};
}

}  // namespace rmot
