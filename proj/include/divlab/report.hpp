#pragma once

// JSON report assembly and stdout table formatting. Reports carry a
// provenance block (command, seed, full config, artifact version) and no
// timestamps, so identical invocations serialize byte-identically. Shares
// are fractions internally and percentage points in every report.

#include <array>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <string>

#include <json.hpp>

#include "divlab/composition.hpp"
#include "divlab/diagnostics.hpp"
#include "divlab/experiment.hpp"
#include "divlab/panel.hpp"
#include "divlab/version.hpp"

namespace divlab {

using Json = nlohmann::ordered_json;

inline double pp(double fraction) { return 100.0 * fraction; }

inline Json decomposition_json(const Decomposition& d) {
  Json j;
  j["method"] = to_string(d.method);
  j["ci_level"] = d.ci_level;
  j["nie_pp"] = pp(d.nie);
  j["se_nie_pp"] = pp(d.se_nie);
  j["ci_nie_pp"] = {pp(d.ci_nie()[0]), pp(d.ci_nie()[1])};
  j["nde_pp"] = pp(d.nde);
  j["se_nde_pp"] = pp(d.se_nde);
  j["ci_nde_pp"] = {pp(d.ci_nde()[0]), pp(d.ci_nde()[1])};
  j["te_pp"] = pp(d.te);
  j["se_te_pp"] = pp(d.se_te);
  j["ci_te_pp"] = {pp(d.ci_te()[0]), pp(d.ci_te()[1])};
  return j;
}

inline Json arm_summary_json(const ArmSummary& a) {
  Json j;
  j["arm"] = a.arm_id;
  j["rounds"] = a.n;
  j["female_share_pp"] = pp(a.mean_outcome);
  j["female_share_var_pp2"] = 1e4 * a.variance;
  j["match_female_share_pp"] = pp(a.mean_match_female_share);
  j["wins"] = a.mean_wins;
  j["matches"] = a.mean_matches;
  j["ctr_pp"] = pp(a.mean_ctr);
  j["true_rate_won_pp"] = pp(a.mean_true_rate_won);
  j["signal_won_pp"] = pp(a.mean_signal_won);
  j["spend"] = a.mean_spend;
  return j;
}

inline Json ks_json(const KsResult& k) {
  Json j;
  j["d"] = k.d;
  j["p"] = k.p;
  j["n1"] = k.n1;
  j["n2"] = k.n2;
  return j;
}

inline Json provenance_json(const std::string& command, std::uint64_t seed, Json config) {
  Json j;
  j["artifact_version"] = kVersion;
  j["command"] = command;
  j["seed"] = seed;
  j["config"] = std::move(config);
  return j;
}

inline Json report_shell(const std::string& command) {
  Json j;
  j["schema_version"] = kReportSchemaVersion;
  j["command"] = command;
  return j;
}

inline void write_report(const Json& report, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write report file '" + path + "'");
  out << report.dump(2) << "\n";
}

// ---- stdout tables ---------------------------------------------------------

inline void print_decomposition_table(std::ostream& os, const std::string& title,
                                      const Decomposition& d) {
  char buf[160];
  os << title << " (pp, " << to_string(d.method) << "):\n";
  std::snprintf(buf, sizeof(buf), "  %-4s %10s %8s   [%s CI]\n", "", "estimate", "se", "95%");
  os << buf;
  const auto row = [&](const char* name, double est, double se, std::array<double, 2> ci) {
    std::snprintf(buf, sizeof(buf), "  %-4s %+10.2f %8.2f   [%+.2f, %+.2f]\n", name, pp(est),
                  pp(se), pp(ci[0]), pp(ci[1]));
    os << buf;
  };
  row("NIE", d.nie, d.se_nie, d.ci_nie());
  row("NDE", d.nde, d.se_nde, d.ci_nde());
  row("TE", d.te, d.se_te, d.ci_te());
}

inline void print_arm_table(std::ostream& os, const std::array<ArmSummary, 3>& arms) {
  char buf[200];
  std::snprintf(buf, sizeof(buf), "  %-4s %10s %10s %12s %12s %8s\n", "arm", "wins", "matches",
                "fem.share%", "match.share%", "ctr%");
  os << buf;
  for (const auto& a : arms) {
    std::snprintf(buf, sizeof(buf), "  %-4d %10.1f %10.1f %12.2f %12.2f %8.3f\n", a.arm_id,
                  a.mean_wins, a.mean_matches, pp(a.mean_outcome),
                  pp(a.mean_match_female_share), pp(a.mean_ctr));
    os << buf;
  }
}

inline void print_contrast_table(std::ostream& os,
                                 const std::array<ContrastResult, 3>& cs,
                                 const std::vector<double>& p_adj) {
  char buf[200];
  std::snprintf(buf, sizeof(buf), "  %-4s %10s %8s %8s %8s %8s\n", "", "est(pp)", "se(pp)", "t",
                "p_raw", "p_adj");
  os << buf;
  for (std::size_t k = 0; k < cs.size(); ++k) {
    std::snprintf(buf, sizeof(buf), "  %-4s %+10.2f %8.2f %+8.2f %8.3f %8.3f\n",
                  cs[k].label.c_str(), 100.0 * cs[k].estimate, 100.0 * cs[k].se, cs[k].t,
                  cs[k].p_raw, k < p_adj.size() ? p_adj[k] : 1.0);
    os << buf;
  }
}

}  // namespace divlab
