#pragma once

// Empirical campaign panels: cell-level records of
// (arm x bid x age band x gender x day x time slot) with impressions,
// clicks, reach and spend. CSV is the canonical format (UTF-8, header row,
// ISO dates): arm,bid_level,age_band,gender,day,time_slot,impressions,
// clicks,reach,spend.

#include <array>
#include <cstdint>
#include <fstream>
#include <functional>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include "divlab/errors.hpp"

namespace divlab {

enum class BidLevel : std::uint8_t { High = 0, Low = 1 };
enum class PanelGender : std::uint8_t { F = 0, M = 1, U = 2 };

inline constexpr std::array<const char*, 6> kAgeBands = {"18-24", "25-34", "35-44",
                                                         "45-54", "55-64", "65+"};

struct PanelRow {
  int arm = 0;
  BidLevel bid = BidLevel::High;
  int age_band = 0;  // index into kAgeBands
  PanelGender gender = PanelGender::F;
  std::string day;  // ISO yyyy-mm-dd
  int time_slot = 0;
  std::int64_t impressions = 0;
  std::int64_t clicks = 0;
  std::int64_t reach = 0;
  double spend = 0.0;
};

struct Panel {
  std::vector<PanelRow> rows;
  std::vector<std::string> warnings;
};

inline const char* to_string(BidLevel b) { return b == BidLevel::High ? "high" : "low"; }
inline const char* to_string(PanelGender g) {
  switch (g) {
    case PanelGender::F: return "F";
    case PanelGender::M: return "M";
    case PanelGender::U: return "U";
  }
  return "?";
}

inline BidLevel parse_bid_level(const std::string& s) {
  if (s == "high") return BidLevel::High;
  if (s == "low") return BidLevel::Low;
  throw DataError("unknown bid_level '" + s + "' (expected high|low)");
}

inline PanelGender parse_gender(const std::string& s) {
  if (s == "F") return PanelGender::F;
  if (s == "M") return PanelGender::M;
  if (s == "U") return PanelGender::U;
  throw DataError("unknown gender '" + s + "' (expected F|M|U)");
}

inline int parse_age_band(const std::string& s) {
  for (std::size_t i = 0; i < kAgeBands.size(); ++i)
    if (s == kAgeBands[i]) return static_cast<int>(i);
  throw DataError("unknown age_band '" + s + "'");
}

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : line) {
    if (ch == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (ch != '\r') {
      cur.push_back(ch);
    }
  }
  out.push_back(cur);
  return out;
}

inline bool valid_iso_date(const std::string& s) {
  if (s.size() != 10 || s[4] != '-' || s[7] != '-') return false;
  for (std::size_t i : {0u, 1u, 2u, 3u, 5u, 6u, 8u, 9u})
    if (s[i] < '0' || s[i] > '9') return false;
  const int month = (s[5] - '0') * 10 + (s[6] - '0');
  const int day = (s[8] - '0') * 10 + (s[9] - '0');
  return month >= 1 && month <= 12 && day >= 1 && day <= 31;
}

inline std::int64_t parse_count(const std::string& s, const char* column) {
  try {
    std::size_t pos = 0;
    const long long v = std::stoll(s, &pos);
    if (pos != s.size()) throw std::invalid_argument(s);
    if (v < 0) throw DataError(std::string(column) + " is negative (" + s + ")");
    return v;
  } catch (const DataError&) {
    throw;
  } catch (const std::exception&) {
    throw DataError(std::string("cannot parse ") + column + " '" + s + "'");
  }
}

using PanelKey = std::tuple<int, BidLevel, int, PanelGender, std::string, int>;

inline PanelKey key_of(const PanelRow& r) {
  return {r.arm, r.bid, r.age_band, r.gender, r.day, r.time_slot};
}

}  // namespace detail

// Parse a panel CSV. Rows failing validation raise a DataError naming the
// 1-based data row; duplicate (arm, bid, cell, day, slot) keys are summed
// with a warning.
inline Panel parse_panel_csv(std::istream& in) {
  static constexpr std::array<const char*, 10> kColumns = {
      "arm",  "bid_level", "age_band",    "gender", "day",
      "time_slot", "impressions", "clicks", "reach",  "spend"};

  std::string line;
  if (!std::getline(in, line)) throw DataError("empty input: missing header row");
  const auto header = detail::split_csv_line(line);
  std::array<int, kColumns.size()> col_index;
  col_index.fill(-1);
  for (std::size_t c = 0; c < kColumns.size(); ++c) {
    for (std::size_t h = 0; h < header.size(); ++h)
      if (header[h] == kColumns[c]) col_index[c] = static_cast<int>(h);
    if (col_index[c] < 0) throw DataError(std::string("missing column '") + kColumns[c] + "'");
  }

  Panel panel;
  std::map<detail::PanelKey, std::size_t> seen;
  std::size_t row_no = 0;
  while (std::getline(in, line)) {
    ++row_no;
    if (line.empty() || line == "\r") continue;
    const auto fields = detail::split_csv_line(line);
    if (fields.size() < header.size())
      throw DataError("row " + std::to_string(row_no) + ": expected " +
                      std::to_string(header.size()) + " fields, got " +
                      std::to_string(fields.size()));
    const auto field = [&](int c) -> const std::string& {
      return fields[static_cast<std::size_t>(col_index[static_cast<std::size_t>(c)])];
    };

    PanelRow r;
    try {
      r.arm = static_cast<int>(detail::parse_count(field(0), "arm"));
      r.bid = parse_bid_level(field(1));
      r.age_band = parse_age_band(field(2));
      r.gender = parse_gender(field(3));
      r.day = field(4);
      r.time_slot = static_cast<int>(detail::parse_count(field(5), "time_slot"));
      r.impressions = detail::parse_count(field(6), "impressions");
      r.clicks = detail::parse_count(field(7), "clicks");
      r.reach = detail::parse_count(field(8), "reach");
      r.spend = std::stod(field(9));
    } catch (const DataError& e) {
      throw DataError("row " + std::to_string(row_no) + ": " + e.what());
    } catch (const std::exception&) {
      throw DataError("row " + std::to_string(row_no) + ": malformed record");
    }
    if (r.arm < 1 || r.arm > 3)
      throw DataError("row " + std::to_string(row_no) + ": arm must be 1, 2 or 3");
    if (!detail::valid_iso_date(r.day))
      throw DataError("row " + std::to_string(row_no) + ": day '" + r.day +
                      "' is not an ISO date");
    if (r.clicks > r.impressions)
      throw DataError("row " + std::to_string(row_no) + ": clicks (" +
                      std::to_string(r.clicks) + ") > impressions (" +
                      std::to_string(r.impressions) + ")");
    if (r.reach > r.impressions)
      throw DataError("row " + std::to_string(row_no) + ": reach (" + std::to_string(r.reach) +
                      ") > impressions (" + std::to_string(r.impressions) + ")");
    if (r.spend < 0.0)
      throw DataError("row " + std::to_string(row_no) + ": spend is negative");

    const auto key = detail::key_of(r);
    const auto it = seen.find(key);
    if (it != seen.end()) {
      PanelRow& prev = panel.rows[it->second];
      prev.impressions += r.impressions;
      prev.clicks += r.clicks;
      prev.reach += r.reach;
      prev.spend += r.spend;
      panel.warnings.push_back("row " + std::to_string(row_no) +
                               ": duplicate key aggregated into earlier row");
    } else {
      seen.emplace(key, panel.rows.size());
      panel.rows.push_back(std::move(r));
    }
  }
  return panel;
}

inline Panel load_panel(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open panel file '" + path + "'");
  return parse_panel_csv(in);
}

inline void save_panel(const Panel& panel, std::ostream& out) {
  out << "arm,bid_level,age_band,gender,day,time_slot,impressions,clicks,reach,spend\n";
  out.precision(17);
  for (const auto& r : panel.rows) {
    out << r.arm << ',' << to_string(r.bid) << ',' << kAgeBands[static_cast<std::size_t>(r.age_band)]
        << ',' << to_string(r.gender) << ',' << r.day << ',' << r.time_slot << ','
        << r.impressions << ',' << r.clicks << ',' << r.reach << ',' << r.spend << '\n';
  }
}

inline void save_panel(const Panel& panel, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write panel file '" + path + "'");
  save_panel(panel, out);
}

using RowPredicate = std::function<bool(const PanelRow&)>;

inline RowPredicate female_predicate() {
  return [](const PanelRow& r) { return r.gender == PanelGender::F; };
}

inline RowPredicate cell_predicate(int age_band, PanelGender g) {
  return [age_band, g](const PanelRow& r) { return r.age_band == age_band && r.gender == g; };
}

struct ArmShare {
  std::int64_t numerator = 0;
  std::int64_t denominator = 0;
  double share = 0.0;
};

// Impression share of rows matching the predicate within one arm. The
// denominator spans all rows of the arm (including unknown gender), matching
// the aggregate-table arithmetic.
inline ArmShare arm_share(const Panel& panel, int arm, const RowPredicate& predicate,
                          std::optional<BidLevel> bid = std::nullopt) {
  ArmShare s;
  for (const auto& r : panel.rows) {
    if (r.arm != arm) continue;
    if (bid && r.bid != *bid) continue;
    s.denominator += r.impressions;
    if (predicate(r)) s.numerator += r.impressions;
  }
  if (s.denominator == 0) throw DataError("arm_share: arm " + std::to_string(arm) + " is empty");
  s.share = static_cast<double>(s.numerator) / static_cast<double>(s.denominator);
  return s;
}

enum class OutcomeKind { Share, Ctr };

struct OutcomeSpec {
  OutcomeKind kind = OutcomeKind::Share;
  RowPredicate predicate;  // numerator filter for Share outcomes
};

inline OutcomeSpec female_share_outcome() { return {OutcomeKind::Share, female_predicate()}; }
inline OutcomeSpec ctr_outcome() { return {OutcomeKind::Ctr, nullptr}; }

struct AnalysisRow {
  std::string day;
  int time_slot = 0;
  int arm = 0;
  double y = 0.0;
  double weight = 0.0;  // total impressions in the (day, slot, arm) group
};

// Collapse the panel to one row per (day, time_slot, arm): y is the outcome
// rate within the group and the regression weight is its total impressions.
inline std::vector<AnalysisRow> to_analysis_panel(const Panel& panel, const OutcomeSpec& outcome,
                                                  std::optional<BidLevel> bid = std::nullopt) {
  if (panel.rows.empty()) throw DataError("to_analysis_panel: empty panel");
  struct Acc {
    std::int64_t num = 0;
    std::int64_t imp = 0;
  };
  std::map<std::tuple<std::string, int, int>, Acc> groups;
  for (const auto& r : panel.rows) {
    if (bid && r.bid != *bid) continue;
    Acc& a = groups[{r.day, r.time_slot, r.arm}];
    a.imp += r.impressions;
    if (outcome.kind == OutcomeKind::Share) {
      if (outcome.predicate && outcome.predicate(r)) a.num += r.impressions;
    } else {
      a.num += r.clicks;
    }
  }
  std::vector<AnalysisRow> rows;
  rows.reserve(groups.size());
  for (const auto& [key, acc] : groups) {
    if (acc.imp == 0) continue;
    AnalysisRow row;
    row.day = std::get<0>(key);
    row.time_slot = std::get<1>(key);
    row.arm = std::get<2>(key);
    row.weight = static_cast<double>(acc.imp);
    row.y = static_cast<double>(acc.num) / static_cast<double>(acc.imp);
    rows.push_back(std::move(row));
  }
  return rows;
}

struct Cell {
  int age_band = 0;
  PanelGender gender = PanelGender::F;
  auto operator<=>(const Cell&) const = default;
};

struct CellStats {
  std::int64_t impressions = 0;
  std::int64_t clicks = 0;
  double weight_share = 0.0;  // w_{g,z}
  double ctr = 0.0;           // c_{g,z}
};

// Cell table over (age x gender) per arm: impression shares w_{g,z} and CTRs
// c_{g,z}. Unknown gender is excluded from cells by default (per-cell tables
// drop it); shares then renormalize over the included cells.
struct CellTable {
  std::vector<Cell> cells;                       // sorted, shared across arms
  std::array<std::vector<CellStats>, 3> stats;   // aligned to `cells`, arms 1..3
  std::array<std::int64_t, 3> arm_impressions{}; // denominators

  const CellStats& at(int arm, std::size_t cell_idx) const {
    return stats[static_cast<std::size_t>(arm - 1)][cell_idx];
  }
};

inline CellTable build_cell_table(const Panel& panel, std::optional<BidLevel> bid = std::nullopt,
                                  bool include_unknown = false, bool gender_only = false) {
  std::map<Cell, std::array<CellStats, 3>> acc;
  std::array<std::int64_t, 3> denom{};
  for (const auto& r : panel.rows) {
    if (bid && r.bid != *bid) continue;
    if (!include_unknown && r.gender == PanelGender::U) continue;
    const Cell cell{gender_only ? 0 : r.age_band, r.gender};
    auto& arr = acc[cell];
    CellStats& s = arr[static_cast<std::size_t>(r.arm - 1)];
    s.impressions += r.impressions;
    s.clicks += r.clicks;
    denom[static_cast<std::size_t>(r.arm - 1)] += r.impressions;
  }
  CellTable t;
  t.arm_impressions = denom;
  for (auto& [cell, arr] : acc) {
    t.cells.push_back(cell);
    for (int a = 0; a < 3; ++a) {
      CellStats s = arr[static_cast<std::size_t>(a)];
      if (denom[static_cast<std::size_t>(a)] > 0)
        s.weight_share = static_cast<double>(s.impressions) /
                         static_cast<double>(denom[static_cast<std::size_t>(a)]);
      s.ctr = s.impressions > 0
                  ? static_cast<double>(s.clicks) / static_cast<double>(s.impressions)
                  : 0.0;
      t.stats[static_cast<std::size_t>(a)].push_back(s);
    }
  }
  return t;
}

}  // namespace divlab
