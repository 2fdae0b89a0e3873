#pragma once

// Cell-level decompositions. composition_decompose splits a CTR contrast
// into the mix-shift across cells and the within-cell rate change:
//   total = sum_g (w_{g,b} - w_{g,a}) c_{g,a}  +  sum_g w_{g,b} (c_{g,b} - c_{g,a})
// per_cell_decomposition estimates (NIE, NDE, TE) for every (age x gender)
// cell, either with HC3 + joint wild-bootstrap Romano-Wolf inference on the
// (day x time-slot x arm) panel or with impression-level Bernoulli t-stats.

#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "divlab/bootstrap.hpp"
#include "divlab/diagnostics.hpp"
#include "divlab/panel.hpp"
#include "divlab/wls.hpp"

namespace divlab {

struct CompositionSplit {
  double total = 0.0;
  double composition = 0.0;
  double within = 0.0;
};

// Missing cells carry zero weight and a zero rate; the identity
// composition + within == total holds exactly either way.
inline CompositionSplit composition_decompose(const CellTable& cells, int arm_a, int arm_b) {
  if (arm_a < 1 || arm_a > 3 || arm_b < 1 || arm_b > 3)
    throw ConfigError("composition_decompose: arms must be 1..3");
  CompositionSplit s;
  for (std::size_t c = 0; c < cells.cells.size(); ++c) {
    const auto& a = cells.at(arm_a, c);
    const auto& b = cells.at(arm_b, c);
    s.composition += (b.weight_share - a.weight_share) * a.ctr;
    s.within += b.weight_share * (b.ctr - a.ctr);
    s.total += b.weight_share * b.ctr - a.weight_share * a.ctr;
  }
  return s;
}

enum class CellInference { Hc3Rw, Bernoulli };

struct CellDecompRow {
  Cell cell;
  std::string estimand;  // NIE | TE | NDE
  double estimate = 0.0;
  double se = 0.0;
  double t = 0.0;
  double p_raw = 1.0;
  double p_adj = 1.0;     // only for Hc3Rw
  bool degenerate = false;  // zero-vs-zero rates: no t-statistic
};

struct PerCellResult {
  std::vector<CellDecompRow> rows;
  std::size_t family_size = 0;
  double bonferroni_t = 0.0;  // per-test |t| threshold at alpha = 0.05
  std::vector<std::string> warnings;
};

namespace detail {

// Analysis rows for one cell under the given outcome, indexed into the
// shared (day, slot, arm) row universe so bootstrap sign vectors are joint.
struct CellPanelBuilder {
  std::map<std::tuple<std::string, int, int>, std::int32_t> universe;
  std::vector<std::tuple<std::string, int, int>> keys;

  explicit CellPanelBuilder(const Panel& panel, std::optional<BidLevel> bid) {
    for (const auto& r : panel.rows) {
      if (bid && r.bid != *bid) continue;
      const auto key = std::make_tuple(r.day, r.time_slot, r.arm);
      if (universe.emplace(key, static_cast<std::int32_t>(universe.size())).second)
        keys.push_back(key);
    }
  }
};

}  // namespace detail

inline PerCellResult per_cell_decomposition(const Panel& panel, OutcomeKind outcome,
                                            CellInference inference,
                                            std::optional<BidLevel> bid = std::nullopt,
                                            const BootstrapOptions& boot = {}) {
  const CellTable table = build_cell_table(panel, bid, /*include_unknown=*/false);
  PerCellResult res;
  if (table.cells.empty()) throw DataError("per_cell_decomposition: no cells");

  static constexpr const char* kEstimands[3] = {"NIE", "TE", "NDE"};

  if (inference == CellInference::Bernoulli) {
    // Impression-level convention: share contrasts use arm impressions as
    // denominators; CTR contrasts use cell impressions.
    for (std::size_t c = 0; c < table.cells.size(); ++c) {
      std::array<std::int64_t, 3> k{}, n{};
      for (int a = 1; a <= 3; ++a) {
        const auto& s = table.at(a, c);
        if (outcome == OutcomeKind::Share) {
          k[static_cast<std::size_t>(a - 1)] = s.impressions;
          n[static_cast<std::size_t>(a - 1)] =
              table.arm_impressions[static_cast<std::size_t>(a - 1)];
        } else {
          k[static_cast<std::size_t>(a - 1)] = s.clicks;
          n[static_cast<std::size_t>(a - 1)] = s.impressions;
        }
      }
      const std::array<std::pair<int, int>, 3> pairs = {{{1, 2}, {1, 3}, {2, 3}}};
      for (std::size_t e = 0; e < 3; ++e) {
        const auto [a, b] = pairs[e];
        CellDecompRow row;
        row.cell = table.cells[c];
        row.estimand = kEstimands[e];
        if (n[static_cast<std::size_t>(a - 1)] == 0 || n[static_cast<std::size_t>(b - 1)] == 0) {
          row.degenerate = true;
          res.warnings.push_back("cell dropped from " + row.estimand +
                                 ": no impressions in an arm");
          res.rows.push_back(row);
          continue;
        }
        const auto bs = bernoulli_se(k[static_cast<std::size_t>(a - 1)],
                                     n[static_cast<std::size_t>(a - 1)],
                                     k[static_cast<std::size_t>(b - 1)],
                                     n[static_cast<std::size_t>(b - 1)]);
        row.estimate = bs.diff;
        row.se = bs.se;
        row.degenerate = bs.se == 0.0;
        row.t = bs.t;
        row.p_raw = row.degenerate ? 1.0 : two_sided_p(bs.t);
        row.p_adj = row.p_raw;
        res.rows.push_back(row);
      }
    }
    res.family_size = res.rows.size();
    res.bonferroni_t = bonferroni_threshold(res.family_size, 0.05);
    return res;
  }

  // HC3 + joint Romano-Wolf across all cells x estimands.
  detail::CellPanelBuilder builder(panel, bid);
  std::vector<FitResult> fits;
  std::vector<std::size_t> fit_cells;
  std::vector<std::string> skipped;
  for (std::size_t c = 0; c < table.cells.size(); ++c) {
    const Cell cell = table.cells[c];
    OutcomeSpec spec;
    if (outcome == OutcomeKind::Share) {
      spec = {OutcomeKind::Share, cell_predicate(cell.age_band, cell.gender)};
    } else {
      spec = {OutcomeKind::Ctr, nullptr};
    }
    // Per-cell rows over the shared universe. Share outcomes use the full
    // (day, slot, arm) impressions as weights; CTR outcomes restrict both the
    // rate and the weight to the cell's own rows.
    std::map<std::tuple<std::string, int, int>, std::pair<std::int64_t, std::int64_t>> acc;
    for (const auto& r : panel.rows) {
      if (bid && r.bid != *bid) continue;
      const bool in_cell = r.age_band == cell.age_band && r.gender == cell.gender;
      const auto key = std::make_tuple(r.day, r.time_slot, r.arm);
      auto& [num, imp] = acc[key];
      if (outcome == OutcomeKind::Share) {
        imp += r.impressions;
        if (in_cell) num += r.impressions;
      } else if (in_cell) {
        imp += r.impressions;
        num += r.clicks;
      }
    }
    std::vector<WlsRow> rows;
    for (const auto& [key, counts] : acc) {
      const auto& [num, imp] = counts;
      if (imp == 0) continue;
      WlsRow w;
      w.y = static_cast<double>(num) / static_cast<double>(imp);
      w.weight = static_cast<double>(imp);
      w.arm = std::get<2>(key);
      w.row_id = builder.universe.at(key);
      rows.push_back(w);
    }
    try {
      fits.push_back(wls_fit(rows));
      fit_cells.push_back(c);
    } catch (const std::exception& e) {
      skipped.push_back(std::string("cell ") + kAgeBands[static_cast<std::size_t>(cell.age_band)] +
                        "/" + to_string(cell.gender) + " skipped: " + e.what());
    }
  }
  if (fits.empty()) throw DataError("per_cell_decomposition: no estimable cells");

  const BootstrapDraws draws =
      wild_bootstrap_family(fits, builder.universe.size(), boot);
  std::vector<double> t_obs(fits.size() * 3);
  std::vector<std::array<ContrastResult, 3>> cell_contrasts(fits.size());
  for (std::size_t f = 0; f < fits.size(); ++f) {
    cell_contrasts[f] = contrasts(fits[f]);
    for (std::size_t k = 0; k < 3; ++k) t_obs[f * 3 + k] = cell_contrasts[f][k].t;
  }
  const std::vector<double> p_adj = romano_wolf(t_obs, draws);

  for (std::size_t f = 0; f < fits.size(); ++f) {
    for (std::size_t k = 0; k < 3; ++k) {
      CellDecompRow row;
      row.cell = table.cells[fit_cells[f]];
      row.estimand = kEstimands[k];
      row.estimate = cell_contrasts[f][k].estimate;
      row.se = cell_contrasts[f][k].se;
      row.t = cell_contrasts[f][k].t;
      row.p_raw = cell_contrasts[f][k].p_raw;
      row.p_adj = p_adj[f * 3 + k];
      res.rows.push_back(row);
    }
  }
  res.family_size = res.rows.size();
  res.bonferroni_t = bonferroni_threshold(res.family_size, 0.05);
  res.warnings = std::move(skipped);
  return res;
}

}  // namespace divlab
