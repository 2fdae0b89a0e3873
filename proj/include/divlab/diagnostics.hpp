#pragma once

// Count-based diagnostics: unpooled Bernoulli SEs for share differences, the
// overdispersion ratio phi (observed cell-rate variance over the
// Bernoulli-implied variance), and the pairwise per-cell delivery audit.

#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "divlab/errors.hpp"
#include "divlab/panel.hpp"
#include "divlab/stats.hpp"

namespace divlab {

struct BernoulliSe {
  double diff = 0.0;
  double se = 0.0;
  double t = 0.0;
};

// Difference of two binomial shares with unpooled variance
// p1(1-p1)/n1 + p2(1-p2)/n2 (the population-level Neyman variance).
inline BernoulliSe bernoulli_se(std::int64_t k1, std::int64_t n1, std::int64_t k2,
                                std::int64_t n2) {
  if (n1 <= 0 || n2 <= 0) throw NumericError("bernoulli_se: sample sizes must be positive");
  if (k1 < 0 || k1 > n1 || k2 < 0 || k2 > n2)
    throw NumericError("bernoulli_se: counts must satisfy 0 <= k <= n");
  const double p1 = static_cast<double>(k1) / static_cast<double>(n1);
  const double p2 = static_cast<double>(k2) / static_cast<double>(n2);
  BernoulliSe out;
  out.diff = p2 - p1;
  out.se = std::sqrt(p1 * (1.0 - p1) / static_cast<double>(n1) +
                     p2 * (1.0 - p2) / static_cast<double>(n2));
  out.t = out.se > 0.0 ? out.diff / out.se : 0.0;
  return out;
}

struct CellRate {
  double rate = 0.0;
  double n = 0.0;  // impressions behind the rate
};

// Dispersion ratio phi = Var_obs(cell rates) / [p(1-p)/n_bar]. The pooled
// rate defaults to the impression-weighted mean of the cell rates.
inline double dispersion_ratio(std::span<const CellRate> cells,
                               std::optional<double> pooled = std::nullopt) {
  if (cells.size() < 2) throw NumericError("dispersion_ratio: need at least 2 cells");
  std::vector<double> rates;
  rates.reserve(cells.size());
  double num = 0.0, den = 0.0;
  for (const auto& c : cells) {
    rates.push_back(c.rate);
    num += c.rate * c.n;
    den += c.n;
  }
  if (!(den > 0.0)) throw NumericError("dispersion_ratio: zero total size");
  const double p = pooled.value_or(num / den);
  if (!(p > 0.0 && p < 1.0))
    throw NumericError("dispersion_ratio: pooled rate in {0,1} gives a degenerate denominator");
  const double n_bar = den / static_cast<double>(cells.size());
  const double bernoulli = p * (1.0 - p) / n_bar;
  return sample_variance(rates) / bernoulli;
}

enum class Collapse { Day, DaySlot };

struct DispersionEntry {
  std::string outcome;
  BidLevel bid = BidLevel::High;
  int arm = 0;
  double phi = 0.0;
  double pooled_rate = 0.0;
  double mean_cell_size = 0.0;
  std::int64_t cells = 0;
};

// Per (outcome, bid, arm) dispersion ratios with cells collapsed to the day
// or (day, time-slot) level.
inline std::vector<DispersionEntry> dispersion_report(const Panel& panel, OutcomeKind outcome,
                                                      Collapse collapse) {
  const char* label = outcome == OutcomeKind::Share ? "female-share" : "ctr";
  std::vector<DispersionEntry> out;
  for (BidLevel bid : {BidLevel::High, BidLevel::Low}) {
    for (int arm = 1; arm <= 3; ++arm) {
      std::map<std::pair<std::string, int>, std::pair<std::int64_t, std::int64_t>> groups;
      for (const auto& r : panel.rows) {
        if (r.bid != bid || r.arm != arm) continue;
        const int slot = collapse == Collapse::Day ? 0 : r.time_slot;
        auto& [num, imp] = groups[{r.day, slot}];
        imp += r.impressions;
        num += outcome == OutcomeKind::Share ? (r.gender == PanelGender::F ? r.impressions : 0)
                                             : r.clicks;
      }
      std::vector<CellRate> cells;
      for (const auto& [key, counts] : groups) {
        const auto& [num, imp] = counts;
        if (imp == 0) continue;
        cells.push_back({static_cast<double>(num) / static_cast<double>(imp),
                         static_cast<double>(imp)});
      }
      if (cells.size() < 2) continue;
      DispersionEntry e;
      e.outcome = label;
      e.bid = bid;
      e.arm = arm;
      e.cells = static_cast<std::int64_t>(cells.size());
      double num = 0.0, den = 0.0;
      for (const auto& c : cells) {
        num += c.rate * c.n;
        den += c.n;
      }
      e.pooled_rate = num / den;
      e.mean_cell_size = den / static_cast<double>(cells.size());
      if (!(e.pooled_rate > 0.0 && e.pooled_rate < 1.0)) continue;  // degenerate arm
      e.phi = dispersion_ratio(cells);
      out.push_back(std::move(e));
    }
  }
  return out;
}

struct CellAudit {
  Cell cell;
  std::int64_t impressions_a = 0;
  std::int64_t impressions_b = 0;
  double share_a = 0.0;
  double share_b = 0.0;
  double diff = 0.0;
  double t = 0.0;
  double p = 1.0;
  double smd = 0.0;
};

// Pairwise delivery audit: per (age x gender) cell, the difference in
// impression share between two arms with an unpooled binomial t-test and the
// standardized mean difference.
inline std::vector<CellAudit> pairwise_audit(const Panel& panel, int arm_a, int arm_b,
                                             std::optional<BidLevel> bid = std::nullopt,
                                             bool include_unknown = false) {
  const CellTable table = build_cell_table(panel, bid, include_unknown);
  const std::int64_t na = table.arm_impressions[static_cast<std::size_t>(arm_a - 1)];
  const std::int64_t nb = table.arm_impressions[static_cast<std::size_t>(arm_b - 1)];
  if (na == 0 || nb == 0) throw DataError("pairwise_audit: an arm has no impressions");
  std::vector<CellAudit> out;
  for (std::size_t c = 0; c < table.cells.size(); ++c) {
    const auto& sa = table.at(arm_a, c);
    const auto& sb = table.at(arm_b, c);
    CellAudit a;
    a.cell = table.cells[c];
    a.impressions_a = sa.impressions;
    a.impressions_b = sb.impressions;
    a.share_a = sa.weight_share;
    a.share_b = sb.weight_share;
    a.diff = a.share_b - a.share_a;
    const double va = a.share_a * (1.0 - a.share_a) / static_cast<double>(na);
    const double vb = a.share_b * (1.0 - a.share_b) / static_cast<double>(nb);
    const double se = std::sqrt(va + vb);
    a.t = se > 0.0 ? a.diff / se : 0.0;
    a.p = se > 0.0 ? two_sided_p(a.t) : 1.0;
    const double pooled_sd =
        std::sqrt((a.share_a * (1.0 - a.share_a) + a.share_b * (1.0 - a.share_b)) / 2.0);
    a.smd = pooled_sd > 0.0 ? a.diff / pooled_sd : 0.0;
    out.push_back(a);
  }
  return out;
}

// Two-sided per-test |t| threshold for a Bonferroni correction of m tests.
inline double bonferroni_threshold(std::size_t m, double alpha) {
  if (m == 0 || !(alpha > 0.0 && alpha < 1.0))
    throw ConfigError("bonferroni_threshold: need m >= 1 and alpha in (0,1)");
  return normal_quantile(1.0 - alpha / (2.0 * static_cast<double>(m)));
}

}  // namespace divlab
