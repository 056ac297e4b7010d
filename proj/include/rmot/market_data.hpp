#pragma once

// Option-chain ingestion, liquidity and moneyness filtering, no-arbitrage
// validation.
//
// CSV header: symbol,quote_date,expiry,strike,bid,ask,volume,open_interest,spot
// with an optional trailing `type` column (C or P, default C). Dates are
// ISO-8601. The JSON form is an array of objects with the same keys.

#include "rmot/rough_heston.hpp"

#include <charconv>
#include <chrono>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

namespace rmot {

class DataError : public std::runtime_error {
public:
  DataError(const std::string& what, std::size_t line = 0) : std::runtime_error(what), line_(line) {}
  std::size_t line() const noexcept { return line_; }

private:
  std::size_t line_;
};

using Date = std::chrono::year_month_day;

inline std::optional<Date> parse_date(std::string_view s) {
  if (s.size() != 10 || s[4] != '-' || s[7] != '-') return std::nullopt;
  int y = 0;
  unsigned m = 0, d = 0;
  auto num = [&](std::size_t pos, std::size_t len, auto& out) {
    const auto r = std::from_chars(s.data() + pos, s.data() + pos + len, out);
    return r.ec == std::errc{} && r.ptr == s.data() + pos + len;
  };
  if (!num(0, 4, y) || !num(5, 2, m) || !num(8, 2, d)) return std::nullopt;
  const Date out{std::chrono::year{y}, std::chrono::month{m}, std::chrono::day{d}};
  if (!out.ok()) return std::nullopt;
  return out;
}

inline std::string format_date(const Date& d) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%04d-%02u-%02u", static_cast<int>(d.year()), static_cast<unsigned>(d.month()),
                static_cast<unsigned>(d.day()));
  return buf;
}

inline Date add_days(const Date& d, int n) {
  return Date{std::chrono::sys_days{d} + std::chrono::days{n}};
}

enum class OptionType { Call, Put };

struct RawQuote {
  std::string symbol;
  Date quote_date{};
  Date expiry{};
  double strike = 0.0;
  double bid = 0.0;
  double ask = 0.0;
  double volume = 0.0;
  double open_interest = 0.0;
  double spot = 0.0;
  OptionType type = OptionType::Call;

  double mid() const { return 0.5 * (bid + ask); }
  double relative_spread() const {
    const double m = mid();
    return m > 0.0 ? (ask - bid) / m : std::numeric_limits<double>::infinity();
  }
  int days_to_expiry() const {
    return static_cast<int>((std::chrono::sys_days{expiry} - std::chrono::sys_days{quote_date}).count());
  }
  bool operator==(const RawQuote&) const = default;
};

struct RejectEntry {
  std::size_t line = 0;  // 1-based; for JSON the array index + 1
  std::string reason;
  std::string raw;
};

struct LoadResult {
  std::vector<RawQuote> quotes;
  std::vector<RejectEntry> rejects;
};

enum class ChainFormat { Csv, Json };

inline ChainFormat format_from_path(const std::string& path) {
  const auto dot = path.find_last_of('.');
  const std::string ext = dot == std::string::npos ? "" : path.substr(dot + 1);
  if (ext == "json") return ChainFormat::Json;
  if (ext == "csv") return ChainFormat::Csv;
  throw DataError("cannot infer chain format from '" + path + "'; use .csv or .json");
}

namespace detail {

inline const std::vector<std::string>& chain_columns() {
  static const std::vector<std::string> cols{"symbol", "quote_date", "expiry", "strike", "bid",
                                             "ask",    "volume",     "open_interest", "spot"};
  return cols;
}

inline std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur.push_back(c);
    }
  }
  out.push_back(cur);
  return out;
}

inline bool parse_number(const std::string& s, double& out) {
  if (s.empty()) return false;
  const char* b = s.data();
  if (*b == '+') ++b;
  const auto r = std::from_chars(b, s.data() + s.size(), out);
  return r.ec == std::errc{} && r.ptr == s.data() + s.size() && std::isfinite(out);
}

/// Shortest round-trip fixed notation, padded to at least four decimals.
inline std::string format_price(double x) {
  char buf[512];
  const auto r = std::to_chars(buf, buf + sizeof buf, x, std::chars_format::fixed);
  std::string s(buf, r.ptr);
  const auto dot = s.find('.');
  if (dot == std::string::npos) s += ".0000";
  else if (s.size() - dot - 1 < 4) s.append(4 - (s.size() - dot - 1), '0');
  return s;
}

inline std::string check_quote(const RawQuote& q) {
  if (q.symbol.empty()) return "empty symbol";
  if (!(q.strike > 0.0)) return "strike must be positive";
  if (q.bid < 0.0 || q.ask < 0.0) return "negative bid or ask";
  if (q.bid > q.ask) return "bid > ask";
  if (q.volume < 0.0 || q.open_interest < 0.0) return "negative volume or open interest";
  if (!(q.spot > 0.0)) return "spot must be positive";
  if (q.days_to_expiry() < 0) return "expiry before quote date";
  return {};
}

}  // namespace detail

inline LoadResult parse_chain_csv(std::istream& in) {
  LoadResult out;
  std::string line;
  std::size_t line_no = 0;
  bool have_type = false;
  bool header_seen = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto f = detail::split_csv(line);
    if (!header_seen) {
      header_seen = true;
      const auto& cols = detail::chain_columns();
      const bool base = f.size() >= cols.size() && std::equal(cols.begin(), cols.end(), f.begin());
      have_type = f.size() == cols.size() + 1 && f.back() == "type";
      if (!base || (f.size() != cols.size() && !have_type))
        throw DataError("schema mismatch at line " + std::to_string(line_no) + ": expected header '" +
                            "symbol,quote_date,expiry,strike,bid,ask,volume,open_interest,spot[,type]'",
                        line_no);
      continue;
    }
    const std::size_t want = detail::chain_columns().size() + (have_type ? 1 : 0);
    auto reject = [&](const std::string& why) { out.rejects.push_back({line_no, why, line}); };
    if (f.size() != want) {
      reject("expected " + std::to_string(want) + " fields, found " + std::to_string(f.size()));
      continue;
    }
    RawQuote q;
    q.symbol = f[0];
    const auto qd = parse_date(f[1]), ex = parse_date(f[2]);
    if (!qd || !ex) {
      reject("malformed date");
      continue;
    }
    q.quote_date = *qd;
    q.expiry = *ex;
    double* nums[] = {&q.strike, &q.bid, &q.ask, &q.volume, &q.open_interest, &q.spot};
    bool ok = true;
    for (std::size_t k = 0; k < 6 && ok; ++k) ok = detail::parse_number(f[3 + k], *nums[k]);
    if (!ok) {
      reject("malformed number");
      continue;
    }
    if (have_type) {
      if (f[9] == "C" || f[9] == "c") q.type = OptionType::Call;
      else if (f[9] == "P" || f[9] == "p") q.type = OptionType::Put;
      else {
        reject("type must be C or P");
        continue;
      }
    }
    if (const auto why = detail::check_quote(q); !why.empty()) {
      reject(why);
      continue;
    }
    out.quotes.push_back(std::move(q));
  }
  return out;
}

inline LoadResult parse_chain_json(const std::string& text) {
  LoadResult out;
  if (text.find_first_not_of(" \t\r\n") == std::string::npos) return out;
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw DataError(std::string("schema mismatch: ") + e.what());
  }
  if (!doc.is_array()) throw DataError("schema mismatch: top level must be an array of quotes", 1);
  for (std::size_t i = 0; i < doc.size(); ++i) {
    const auto& o = doc[i];
    auto reject = [&](const std::string& why) { out.rejects.push_back({i + 1, why, o.dump()}); };
    if (!o.is_object()) {
      reject("entry is not an object");
      continue;
    }
    bool ok = true;
    for (const auto& c : detail::chain_columns()) ok = ok && o.contains(c);
    if (!ok) {
      reject("missing field");
      continue;
    }
    RawQuote q;
    try {
      q.symbol = o.at("symbol").get<std::string>();
      const auto qd = parse_date(o.at("quote_date").get<std::string>());
      const auto ex = parse_date(o.at("expiry").get<std::string>());
      if (!qd || !ex) {
        reject("malformed date");
        continue;
      }
      q.quote_date = *qd;
      q.expiry = *ex;
      q.strike = o.at("strike").get<double>();
      q.bid = o.at("bid").get<double>();
      q.ask = o.at("ask").get<double>();
      q.volume = o.at("volume").get<double>();
      q.open_interest = o.at("open_interest").get<double>();
      q.spot = o.at("spot").get<double>();
      if (o.contains("type")) {
        const auto t = o.at("type").get<std::string>();
        if (t == "C") q.type = OptionType::Call;
        else if (t == "P") q.type = OptionType::Put;
        else {
          reject("type must be C or P");
          continue;
        }
      }
    } catch (const nlohmann::json::exception&) {
      reject("malformed field type");
      continue;
    }
    if (const auto why = detail::check_quote(q); !why.empty()) {
      reject(why);
      continue;
    }
    out.quotes.push_back(std::move(q));
  }
  return out;
}

inline LoadResult load_chain(const std::string& path, ChainFormat format) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read '" + path + "'");
  if (format == ChainFormat::Csv) return parse_chain_csv(in);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_chain_json(ss.str());
}

inline LoadResult load_chain(const std::string& path) { return load_chain(path, format_from_path(path)); }

inline void write_chain_csv(std::ostream& out, const std::vector<RawQuote>& quotes) {
  out << "symbol,quote_date,expiry,strike,bid,ask,volume,open_interest,spot,type\n";
  for (const auto& q : quotes)
    out << q.symbol << ',' << format_date(q.quote_date) << ',' << format_date(q.expiry) << ','
        << detail::format_price(q.strike) << ',' << detail::format_price(q.bid) << ',' << detail::format_price(q.ask)
        << ',' << detail::format_price(q.volume) << ',' << detail::format_price(q.open_interest) << ','
        << detail::format_price(q.spot) << ',' << (q.type == OptionType::Call ? 'C' : 'P') << '\n';
}

inline nlohmann::json to_json(const RawQuote& q) {
  return {{"symbol", q.symbol},
          {"quote_date", format_date(q.quote_date)},
          {"expiry", format_date(q.expiry)},
          {"strike", q.strike},
          {"bid", q.bid},
          {"ask", q.ask},
          {"volume", q.volume},
          {"open_interest", q.open_interest},
          {"spot", q.spot},
          {"type", q.type == OptionType::Call ? "C" : "P"}};
}

/// Call quotes for a slice with bid/ask at price -+ noise. The expiry is the
/// maturity rounded to whole days.
inline std::vector<RawQuote> quotes_from_slice(const MarketSlice& slice, const std::string& symbol, const Date& quote_date,
                                               double volume = 1000.0, double open_interest = 5000.0,
                                               double day_count = 365.0) {
  slice.validate();
  const Date expiry = add_days(quote_date, static_cast<int>(std::lround(slice.maturity * day_count)));
  std::vector<RawQuote> out;
  for (std::size_t k = 0; k < slice.size(); ++k)
    out.push_back({symbol, quote_date, expiry, slice.strikes[k], slice.prices[k] - slice.noise[k],
                   slice.prices[k] + slice.noise[k], volume, open_interest, slice.spot, OptionType::Call});
  return out;
}

inline void write_chain(const std::string& path, const std::vector<RawQuote>& quotes, ChainFormat format) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write '" + path + "'");
  if (format == ChainFormat::Csv) {
    write_chain_csv(out, quotes);
  } else {
    nlohmann::json doc = nlohmann::json::array();
    for (const auto& q : quotes) doc.push_back(to_json(q));
    out << doc.dump(1) << '\n';
  }
  if (!out) throw DataError("write to '" + path + "' failed");
}

// ---------------------------------------------------------------------------
// No-arbitrage checks
// ---------------------------------------------------------------------------

enum class ViolationKind { Parity, Butterfly };

struct Violation {
  ViolationKind kind;
  std::size_t index;  // strike index in the slice (centre strike for butterflies)
  double strike;
  double magnitude;   // parity breach |C - P - (S - K DF)|, or butterfly value (negative)
};

struct NoArbTolerance {
  double parity = 0.01;     // fraction of spot
  double convexity = 1e-4;  // fraction of spot
};

/// Put-call parity on strikes with a matching put (NaN marks a missing put)
/// and butterfly convexity of the call mids on consecutive strike triples.
inline std::vector<Violation> no_arb_check(const MarketSlice& slice, const std::vector<double>& puts = {},
                                           const NoArbTolerance& tol = {}) {
  std::vector<Violation> out;
  const std::size_t n = slice.size();
  require(puts.empty() || puts.size() == n, "no_arb_check: puts must align with the slice strikes");
  for (std::size_t i = 1; i < n; ++i)
    require(slice.strikes[i] > slice.strikes[i - 1], "no_arb_check: slice must be sorted by strike");
  const double df = std::exp(-slice.rate * slice.maturity);
  for (std::size_t i = 0; i < puts.size(); ++i) {
    if (std::isnan(puts[i])) continue;
    const double gap = std::abs(slice.prices[i] - puts[i] - (slice.spot - slice.strikes[i] * df));
    if (gap > tol.parity * slice.spot) out.push_back({ViolationKind::Parity, i, slice.strikes[i], gap});
  }
  for (std::size_t i = 1; i + 1 < n; ++i) {
    const double k0 = slice.strikes[i - 1], k1 = slice.strikes[i], k2 = slice.strikes[i + 1];
    const double w = (k2 - k1) / (k2 - k0);
    const double fly = w * slice.prices[i - 1] + (1.0 - w) * slice.prices[i + 1] - slice.prices[i];
    if (fly < -tol.convexity * slice.spot) out.push_back({ViolationKind::Butterfly, i, k1, fly});
  }
  return out;
}

// ---------------------------------------------------------------------------
// Filtering
// ---------------------------------------------------------------------------

struct FilterPolicy {
  double min_volume = 100;
  double min_open_interest = 500;
  double max_relative_spread = 0.05;
  double min_log_moneyness = -0.7;
  double max_log_moneyness = 0.7;
  int min_days = 30;
  int max_days = 180;
  NoArbTolerance no_arb{};
  double rate = 0.0;
  double day_count = 365.0;

  void validate() const {
    require(min_volume > 0 && min_open_interest > 0 && max_relative_spread > 0, "FilterPolicy: thresholds must be positive");
    require(min_log_moneyness < max_log_moneyness, "FilterPolicy: moneyness range must be ordered");
    require(min_days > 0 && min_days <= max_days, "FilterPolicy: maturity window must be positive and ordered");
    require(no_arb.parity > 0 && no_arb.convexity > 0, "FilterPolicy: no-arbitrage tolerances must be positive");
    require(day_count > 0, "FilterPolicy: day count must be positive");
  }
};

struct FilterAudit {
  std::size_t input = 0;
  std::size_t output = 0;
  std::size_t liquidity = 0;
  std::size_t moneyness = 0;
  std::size_t spread = 0;
  std::size_t maturity = 0;
  std::size_t parity = 0;     // quotes removed for a parity breach (both legs)
  std::size_t butterfly = 0;  // centre calls removed for convexity
  std::size_t parity_skipped = 0;  // survivors with no counterpart on the other side
  bool empty = false;

  std::size_t removed() const { return liquidity + moneyness + spread + maturity + parity + butterfly; }
  bool operator==(const FilterAudit&) const = default;
};

struct FilterResult {
  std::vector<RawQuote> kept;
  std::vector<MarketSlice> slices;  // one per expiry, call mids with half-spread noise
  FilterAudit audit;
  std::vector<std::pair<RawQuote, std::string>> removed;  // quote and rule
};

/// Rules run in order liquidity, moneyness, spread, maturity, no-arbitrage; a
/// quote is attributed to the first rule it fails.
inline FilterResult filter_chain(const std::vector<RawQuote>& quotes, const FilterPolicy& policy, double spot) {
  policy.validate();
  require(spot > 0.0, "filter_chain: spot must be positive");
  FilterResult res;
  res.audit.input = quotes.size();
  std::vector<RawQuote> pass;
  for (const auto& q : quotes) {
    const double t = q.days_to_expiry() / policy.day_count;
    const double k = std::log(q.strike / (spot * std::exp(policy.rate * t)));
    const char* rule = nullptr;
    if (q.volume < policy.min_volume || q.open_interest < policy.min_open_interest) {
      rule = "liquidity";
      ++res.audit.liquidity;
    } else if (k < policy.min_log_moneyness || k > policy.max_log_moneyness) {
      rule = "moneyness";
      ++res.audit.moneyness;
    } else if (!(q.relative_spread() <= policy.max_relative_spread)) {
      rule = "spread";
      ++res.audit.spread;
    } else if (q.days_to_expiry() < policy.min_days || q.days_to_expiry() > policy.max_days) {
      rule = "maturity";
      ++res.audit.maturity;
    }
    if (rule) res.removed.emplace_back(q, rule);
    else pass.push_back(q);
  }

  // No-arbitrage per (symbol, quote date, expiry).
  using Key = std::tuple<std::string, int, int>;
  std::map<Key, std::vector<RawQuote>> groups;
  for (auto& q : pass)
    groups[{q.symbol, static_cast<int>(std::chrono::sys_days{q.quote_date}.time_since_epoch().count()),
            static_cast<int>(std::chrono::sys_days{q.expiry}.time_since_epoch().count())}]
        .push_back(q);
  for (auto& [key, g] : groups) {
    const double t = g.front().days_to_expiry() / policy.day_count;
    std::map<double, const RawQuote*> calls, puts;
    for (const auto& q : g) (q.type == OptionType::Call ? calls : puts)[q.strike] = &q;
    require(calls.size() + puts.size() == g.size(), "filter_chain: duplicate (expiry, strike, type) quotes");
    std::vector<const RawQuote*> keep;
    // Parity: drop both legs of a breach.
    MarketSlice ps{spot, t, policy.rate, {}, {}, {}};
    std::vector<double> pp;
    std::vector<const RawQuote*> pairs_c, pairs_p;
    for (const auto& [k, c] : calls)
      if (auto it = puts.find(k); it != puts.end()) {
        ps.strikes.push_back(k);
        ps.prices.push_back(c->mid());
        ps.noise.push_back(0.0);
        pp.push_back(it->second->mid());
        pairs_c.push_back(c);
        pairs_p.push_back(it->second);
      }
    std::vector<bool> parity_bad(ps.size(), false);
    for (const auto& v : no_arb_check(ps, pp, policy.no_arb))
      if (v.kind == ViolationKind::Parity) parity_bad[v.index] = true;
    std::set<const RawQuote*> dropped;
    for (std::size_t i = 0; i < ps.size(); ++i)
      if (parity_bad[i]) {
        dropped.insert(pairs_c[i]);
        dropped.insert(pairs_p[i]);
        res.removed.emplace_back(*pairs_c[i], "parity");
        res.removed.emplace_back(*pairs_p[i], "parity");
        res.audit.parity += 2;
      }
    // Butterfly on the remaining calls: repeatedly drop the centre of the worst breach.
    std::vector<const RawQuote*> live;
    for (const auto& [k, c] : calls)
      if (!dropped.count(c)) live.push_back(c);
    while (true) {
      MarketSlice s{spot, t, policy.rate, {}, {}, {}};
      for (const auto* c : live) {
        s.strikes.push_back(c->strike);
        s.prices.push_back(c->mid());
        s.noise.push_back(0.0);
      }
      const auto v = no_arb_check(s, {}, policy.no_arb);
      if (v.empty()) break;
      const auto worst = std::min_element(v.begin(), v.end(), [](const Violation& a, const Violation& b) {
        return a.magnitude < b.magnitude;
      });
      res.removed.emplace_back(*live[worst->index], "butterfly");
      dropped.insert(live[worst->index]);
      ++res.audit.butterfly;
      live.erase(live.begin() + static_cast<std::ptrdiff_t>(worst->index));
    }
    std::set<double> live_calls, live_puts;
    for (const auto& q : g)
      if (!dropped.count(&q)) (q.type == OptionType::Call ? live_calls : live_puts).insert(q.strike);
    for (const auto& q : g) {
      if (dropped.count(&q)) continue;
      const auto& other = q.type == OptionType::Call ? live_puts : live_calls;
      if (!other.count(q.strike)) ++res.audit.parity_skipped;
      res.kept.push_back(q);
    }
    // Slice: call mids, with puts converted through parity where no call survives.
    const double df = std::exp(-policy.rate * t);
    std::map<double, std::pair<double, double>> strikes;
    for (const auto& q : g) {
      if (dropped.count(&q)) continue;
      const double half = 0.5 * (q.ask - q.bid);
      if (q.type == OptionType::Call) strikes[q.strike] = {q.mid(), half};
      else if (!live_calls.count(q.strike)) strikes[q.strike] = {q.mid() + spot - q.strike * df, half};
    }
    if (!strikes.empty()) {
      MarketSlice s{spot, t, policy.rate, {}, {}, {}};
      for (const auto& [k, v] : strikes) {
        s.strikes.push_back(k);
        s.prices.push_back(v.first);
        s.noise.push_back(v.second);
      }
      res.slices.push_back(std::move(s));
    }
  }
  res.audit.output = res.kept.size();
  res.audit.empty = res.kept.empty();
  return res;
}

inline nlohmann::json to_json(const FilterAudit& a) {
  return {{"input", a.input},         {"output", a.output},       {"liquidity", a.liquidity},
          {"moneyness", a.moneyness}, {"spread", a.spread},       {"maturity", a.maturity},
          {"parity", a.parity},       {"butterfly", a.butterfly}, {"parity_skipped", a.parity_skipped},
          {"empty", a.empty}};
}

/// Rejects and removals as JSON lines.
inline void write_audit_jsonl(std::ostream& out, const LoadResult& load, const FilterResult& filt) {
  for (const auto& r : load.rejects)
    out << nlohmann::json{{"event", "reject"}, {"line", r.line}, {"reason", r.reason}, {"raw", r.raw}}.dump() << '\n';
  for (const auto& [q, rule] : filt.removed)
    out << nlohmann::json{{"event", "removed"}, {"rule", rule}, {"quote", to_json(q)}}.dump() << '\n';
  out << nlohmann::json{{"event", "summary"}, {"audit", to_json(filt.audit)}}.dump() << '\n';
}

// ---------------------------------------------------------------------------
// Fixture generator
// ---------------------------------------------------------------------------

struct FixtureSpec {
  std::size_t rows = 1000;
  std::string symbol = "SYN";
  double spot = 100.0;
  double vol = 0.2;
  std::vector<int> expiries_days{35, 60, 90, 120, 150, 175};
  std::size_t liquidity = 30;
  std::size_t moneyness = 20;
  std::size_t spread = 20;
  std::size_t maturity = 18;
  std::size_t parity = 8;     // put legs shifted by 2% of spot
  std::size_t butterfly = 8;  // call mids bumped by 10%
  std::uint64_t seed = 1;
};

struct Fixture {
  std::vector<RawQuote> quotes;
  FilterAudit expected;
};

/// Black-Scholes chain on strikes 50..150 (calls every strike, puts on even
/// strikes) with injected rule violations in disjoint rows. The clean chain is
/// padded or trimmed from the last expiry to hit the requested row count.
inline Fixture generate_fixture(const FixtureSpec& spec) {
  const Date today{std::chrono::year{2024}, std::chrono::month{1}, std::chrono::day{2}};
  RandomStream rng(spec.seed, 0);
  auto make = [&](int days, double k, OptionType type) {
    const double t = days / 365.0;
    const double mid = (type == OptionType::Call ? bs_call(spec.spot, k, t, 0.0, spec.vol)
                                                 : bs_put(spec.spot, k, t, 0.0, spec.vol));
    RawQuote q{spec.symbol, today, add_days(today, days), k, mid * 0.99, mid * 1.01, 500.0 + std::floor(1000 * rng.uniform()),
               1000.0 + std::floor(1000 * rng.uniform()), spec.spot, type};
    return q;
  };
  Fixture fx;
  const std::size_t injected = spec.liquidity + spec.moneyness + spec.spread + spec.maturity;
  require(spec.rows > injected, "generate_fixture: too few rows for the injections");
  const std::size_t clean_rows = spec.rows - injected;
  std::vector<RawQuote> clean;
  for (int d : spec.expiries_days)
    for (int k = 50; k <= 150; ++k) {
      clean.push_back(make(d, k, OptionType::Call));
      if (k % 2 == 0) clean.push_back(make(d, k, OptionType::Put));
    }
  require(clean.size() >= clean_rows, "generate_fixture: clean chain too small for the row count");
  clean.resize(clean_rows);
  // Parity injections on even ATM-region puts, butterflies on odd ATM-region calls.
  std::vector<std::size_t> even_puts, odd_calls;
  for (std::size_t i = 0; i < clean.size(); ++i) {
    const auto& q = clean[i];
    const bool near = q.strike >= 85 && q.strike <= 115;
    const int ks = static_cast<int>(q.strike);
    if (near && q.type == OptionType::Put) even_puts.push_back(i);
    // Odd strike with both neighbours present in the clean chain.
    if (near && q.type == OptionType::Call && ks % 2 == 1 && i + 2 < clean.size() && clean[i + 2].expiry == q.expiry)
      odd_calls.push_back(i);
  }
  require(even_puts.size() >= 4 * spec.parity && odd_calls.size() >= 4 * spec.butterfly,
          "generate_fixture: not enough room for no-arbitrage injections");
  for (std::size_t j = 0; j < spec.butterfly; ++j) {
    auto& q = clean[odd_calls[4 * j]];
    q.bid *= 1.1;
    q.ask *= 1.1;
  }
  for (std::size_t j = 0; j < spec.parity; ++j) {
    auto& q = clean[even_puts[4 * j + 2]];
    q.bid += 0.02 * spec.spot;
    q.ask += 0.02 * spec.spot;
  }
  fx.quotes = clean;

  // Rule injections on half-integer strikes of the first expiry so they never
  // touch the clean chain.
  const int d0 = spec.expiries_days.front();
  for (std::size_t j = 0; j < spec.liquidity; ++j) {
    auto q = make(d0, 80.5 + static_cast<double>(j), OptionType::Call);
    if (j % 2 == 0) q.volume = 99.0;
    else q.open_interest = 499.0;
    fx.quotes.push_back(q);
  }
  for (std::size_t j = 0; j < spec.moneyness; ++j) {
    const double k = j % 2 == 0 ? spec.spot * std::exp(0.71 + 0.01 * static_cast<double>(j))
                                : spec.spot * std::exp(-0.71 - 0.01 * static_cast<double>(j));
    fx.quotes.push_back(make(d0, k, OptionType::Call));
  }
  for (std::size_t j = 0; j < spec.spread; ++j) {
    auto q = make(d0, 60.5 + static_cast<double>(j), OptionType::Call);
    const double m = q.mid();
    q.bid = m * 0.97;
    q.ask = m * 1.03;  // 6% relative spread
    fx.quotes.push_back(q);
  }
  for (std::size_t j = 0; j < spec.maturity; ++j)
    fx.quotes.push_back(make(j % 2 == 0 ? 20 : 200, 90.0 + static_cast<double>(j), OptionType::Call));

  // Expected audit from the construction.
  auto& e = fx.expected;
  e.input = fx.quotes.size();
  e.liquidity = spec.liquidity;
  e.moneyness = spec.moneyness;
  e.spread = spec.spread;
  e.maturity = spec.maturity;
  e.parity = 2 * spec.parity;
  e.butterfly = spec.butterfly;
  std::map<std::pair<int, double>, int> sides;
  for (const auto& q : clean) sides[{q.days_to_expiry(), q.strike}] |= q.type == OptionType::Call ? 1 : 2;
  for (const auto& q : clean) {
    if (sides[{q.days_to_expiry(), q.strike}] != 3) ++e.parity_skipped;
  }
  // Removed butterfly centres are unpaired calls, so they leave the skipped count.
  e.parity_skipped -= spec.butterfly;
  e.output = e.input - e.removed();
  e.empty = e.output == 0;
  // Shuffle rows so that file order carries no information.
  for (std::size_t i = fx.quotes.size(); i > 1; --i)
    std::swap(fx.quotes[i - 1], fx.quotes[static_cast<std::size_t>(rng.next_u64() % i)]);
  return fx;
}

}  // namespace rmot
