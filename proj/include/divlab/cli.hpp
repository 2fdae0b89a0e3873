#pragma once

// Command-line entry point. Subcommands: sim, sweep, invert-sigma, decompose,
// infer, dispersion, audit, allocate. Every stochastic subcommand requires an
// explicit --seed (there is no wall-clock default), and identical invocations
// produce byte-identical JSON reports regardless of --threads.
//
// Exit codes: 0 success, 2 config error, 3 data validation error,
// 4 numerical failure.

#include <algorithm>
#include <array>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "divlab/bootstrap.hpp"
#include "divlab/composition.hpp"
#include "divlab/diagnostics.hpp"
#include "divlab/experiment.hpp"
#include "divlab/panel.hpp"
#include "divlab/parallel.hpp"
#include "divlab/report.hpp"
#include "divlab/version.hpp"

namespace divlab {

namespace cli_detail {

// Bid distribution calibrated from the published 95th / 99.5th percentile
// bids; these are the CLI defaults for --log-mu and --log-sigma.
inline const std::pair<double, double>& default_bid_params() {
  static const std::pair<double, double> p = calibrate_lognormal({2.28, 0.95}, {3.63, 0.995});
  return p;
}

struct SimArgs {
  std::int64_t rounds = 1000;
  std::optional<std::uint64_t> seed;
  double sigma = 0.030;
  double noisy_competitor_share = 0.0;
  std::int64_t users = 10000;
  std::int64_t advertisers = 500;
  double male_share = 0.462;
  double match_q = 0.1;
  double click_mean = 0.02;
  double kappa = 50.0;
  std::optional<double> female_click_mean;
  double log_mu = default_bid_params().first;
  double log_sigma = default_bid_params().second;
  std::optional<double> bid_percentile;
  std::optional<double> focal_bid;
  std::string pairing = "shared";
  int threads = 0;
  std::string config_path;
  std::string out;
  std::string rounds_csv;

  std::uint64_t require_seed() const {
    if (!seed) throw ConfigError("--seed is required (no wall-clock default)");
    return *seed;
  }

  PopulationConfig population() const {
    PopulationConfig c;
    c.n_users = users;
    c.n_advertisers = advertisers;
    c.male_share = male_share;
    c.match_quantile = match_q;
    c.click_mean = click_mean;
    c.click_concentration = kappa;
    c.female_click_mean = female_click_mean;
    return c;
  }

  BidConfig bids() const {
    BidConfig b;
    b.log_mu = log_mu;
    b.log_sigma = log_sigma;
    b.focal_bid = focal_bid;
    b.focal_percentile = focal_bid ? std::nullopt : std::optional<double>(bid_percentile.value_or(0.995));
    return b;
  }

  Pairing pairing_mode() const {
    return pairing == "independent" ? Pairing::Independent : Pairing::Shared;
  }
};

inline void add_sim_options(CLI::App* cmd, SimArgs& a, bool with_sigma = true) {
  cmd->add_option("--config", a.config_path,
                  "Key-value config file (key=value per line); command-line flags win");
  cmd->add_option("--rounds,-R", a.rounds, "Monte Carlo rounds")->capture_default_str();
  cmd->add_option("--seed", a.seed, "RNG seed (required; no wall-clock default)");
  if (with_sigma)
    cmd->add_option("--sigma", a.sigma, "Matching-signal noise sd on focal x female")
        ->capture_default_str();
  cmd->add_option("--noisy-competitor-share", a.noisy_competitor_share,
                  "Fraction of non-focal advertisers that also carry the noise")
      ->capture_default_str();
  cmd->add_option("--users", a.users, "Users per round")->capture_default_str();
  cmd->add_option("--advertisers", a.advertisers, "Advertisers per round")->capture_default_str();
  cmd->add_option("--male-share", a.male_share, "Population male share pi_M")
      ->capture_default_str();
  cmd->add_option("--match-q", a.match_q, "Matched-set quantile q (set size = ceil(q*N))")
      ->capture_default_str();
  cmd->add_option("--click-mean", a.click_mean, "Beta click-rate mean mu_r")
      ->capture_default_str();
  cmd->add_option("--kappa", a.kappa, "Beta concentration kappa")->capture_default_str();
  cmd->add_option("--female-click-mean", a.female_click_mean,
                  "Female click-rate mean (calibration knob; defaults to --click-mean)");
  cmd->add_option("--log-mu", a.log_mu, "Bid LogNormal location")->capture_default_str();
  cmd->add_option("--log-sigma", a.log_sigma, "Bid LogNormal scale")->capture_default_str();
  auto* pct = cmd->add_option("--bid-percentile", a.bid_percentile,
                              "Focal bid as a percentile of the bid distribution [default 0.995]");
  cmd->add_option("--bid", a.focal_bid, "Focal bid in currency (alternative to --bid-percentile)")
      ->excludes(pct);
  cmd->add_option("--pairing", a.pairing, "Arm randomness: common or independent draws")
      ->check(CLI::IsMember({"shared", "independent"}))
      ->capture_default_str();
  cmd->add_option("--threads", a.threads, "Worker threads (0 = DIVLAB_THREADS or hardware)")
      ->capture_default_str();
  cmd->add_option("--out", a.out, "Write the JSON report to this path");
}

// Config file: one `key=value` per line, keys named like the long flags
// without the leading dashes; '#' starts a comment. A value applies only
// when the matching flag is absent from the command line.
inline void apply_config_file(const CLI::App* cmd, SimArgs& a) {
  if (a.config_path.empty()) return;
  std::ifstream in(a.config_path);
  if (!in) throw ConfigError("cannot open config file '" + a.config_path + "'");
  const auto flag_given = [&](const std::string& flag) { return cmd->count(flag) > 0; };
  const auto to_double = [](const std::string& key, const std::string& v) {
    try {
      return std::stod(v);
    } catch (const std::exception&) {
      throw ConfigError("config key '" + key + "': cannot parse '" + v + "' as a number");
    }
  };
  const auto to_int = [&](const std::string& key, const std::string& v) {
    return static_cast<std::int64_t>(to_double(key, v));
  };
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    const auto strip = [](std::string s) {
      const auto b = s.find_first_not_of(" \t\r");
      const auto e = s.find_last_not_of(" \t\r");
      return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
    };
    line = strip(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config line " + std::to_string(line_no) + ": expected key=value");
    const std::string key = strip(line.substr(0, eq));
    const std::string value = strip(line.substr(eq + 1));
    if (key == "rounds") {
      if (!flag_given("--rounds")) a.rounds = to_int(key, value);
    } else if (key == "seed") {
      if (!flag_given("--seed")) a.seed = static_cast<std::uint64_t>(to_int(key, value));
    } else if (key == "sigma") {
      if (!flag_given("--sigma")) a.sigma = to_double(key, value);
    } else if (key == "noisy-competitor-share") {
      if (!flag_given("--noisy-competitor-share")) a.noisy_competitor_share = to_double(key, value);
    } else if (key == "users") {
      if (!flag_given("--users")) a.users = to_int(key, value);
    } else if (key == "advertisers") {
      if (!flag_given("--advertisers")) a.advertisers = to_int(key, value);
    } else if (key == "male-share") {
      if (!flag_given("--male-share")) a.male_share = to_double(key, value);
    } else if (key == "match-q") {
      if (!flag_given("--match-q")) a.match_q = to_double(key, value);
    } else if (key == "click-mean") {
      if (!flag_given("--click-mean")) a.click_mean = to_double(key, value);
    } else if (key == "kappa") {
      if (!flag_given("--kappa")) a.kappa = to_double(key, value);
    } else if (key == "female-click-mean") {
      if (!flag_given("--female-click-mean")) a.female_click_mean = to_double(key, value);
    } else if (key == "log-mu") {
      if (!flag_given("--log-mu")) a.log_mu = to_double(key, value);
    } else if (key == "log-sigma") {
      if (!flag_given("--log-sigma")) a.log_sigma = to_double(key, value);
    } else if (key == "bid-percentile") {
      if (!flag_given("--bid-percentile") && !flag_given("--bid"))
        a.bid_percentile = to_double(key, value);
    } else if (key == "bid") {
      if (!flag_given("--bid") && !flag_given("--bid-percentile"))
        a.focal_bid = to_double(key, value);
    } else if (key == "pairing") {
      if (value != "shared" && value != "independent")
        throw ConfigError("config key 'pairing': expected shared|independent");
      if (!flag_given("--pairing")) a.pairing = value;
    } else if (key == "threads") {
      if (!flag_given("--threads")) a.threads = static_cast<int>(to_int(key, value));
    } else {
      throw ConfigError("config line " + std::to_string(line_no) + ": unknown key '" + key + "'");
    }
  }
}

inline Json sim_config_json(const SimArgs& a) {
  const BidConfig bids = a.bids();
  Json c;
  c["n_users"] = a.users;
  c["n_advertisers"] = a.advertisers;
  c["male_share"] = a.male_share;
  c["match_quantile"] = a.match_q;
  c["click_mean"] = a.click_mean;
  c["female_click_mean"] = a.female_click_mean ? Json(*a.female_click_mean) : Json(nullptr);
  c["click_concentration"] = a.kappa;
  c["log_mu"] = a.log_mu;
  c["log_sigma"] = a.log_sigma;
  c["focal_percentile"] = bids.resolve_focal_percentile();
  c["focal_bid"] = bids.resolve_focal_bid();
  c["sigma"] = a.sigma;
  c["noisy_competitor_share"] = a.noisy_competitor_share;
  c["rounds"] = a.rounds;
  c["pairing"] = a.pairing;
  return c;
}

inline void write_rounds_csv(const MonteCarloResult& res, const std::string& path) {
  std::ofstream csv(path);
  if (!csv) throw DataError("cannot write rounds CSV '" + path + "'");
  csv << "round,arm,wins,female_wins,matches,female_matches,clicks,spend,"
         "female_share,match_female_share,ctr,mu_r,mu_s\n";
  csv.precision(17);
  for (std::size_t r = 0; r < res.rounds.size(); ++r) {
    for (int a = 0; a < 3; ++a) {
      const DeliveryOutcome& o = res.rounds[r].arms[static_cast<std::size_t>(a)];
      csv << r << ',' << (a + 1) << ',' << o.wins << ',' << o.female_wins << ',' << o.matches
          << ',' << o.female_matches << ',' << o.clicks << ',' << o.spend << ','
          << o.female_share() << ',' << o.match_female_share() << ',' << o.ctr() << ','
          << o.mean_true_rate_won << ',' << o.mean_signal_won << '\n';
    }
  }
}

inline int run_sim(const SimArgs& a, std::ostream& out) {
  const std::uint64_t seed = a.require_seed();
  McOptions opt;
  opt.rounds = a.rounds;
  opt.seed = seed;
  opt.pairing = a.pairing_mode();
  opt.threads = resolve_threads(a.threads);
  opt.keep_rounds = true;
  const auto arms = three_arm_design(a.sigma, a.noisy_competitor_share);
  const MonteCarloResult res = monte_carlo(a.population(), a.bids(), arms, opt);

  out << "three-arm simulation: " << a.rounds << " rounds, sigma=" << a.sigma
      << ", focal bid=" << a.bids().resolve_focal_bid() << "\n";
  print_arm_table(out, res.arms);
  print_decomposition_table(out, "impression female share", res.impression);
  print_decomposition_table(out, "match female share", res.match);
  print_decomposition_table(out, "engagement mu_r (won impressions)", res.engagement_true);
  print_decomposition_table(out, "engagement mu_s (won impressions)", res.engagement_signal);
  print_decomposition_table(out, "ctr", res.ctr);
  if (res.a3) {
    char buf[120];
    std::snprintf(buf, sizeof(buf), "A3 check (arm2 vs arm3 mediator draws): D=%.4f p=%.4f\n",
                  res.a3->d, res.a3->p);
    out << buf;
  }

  Json report = report_shell("sim");
  report["provenance"] = provenance_json("sim", seed, sim_config_json(a));
  report["arms"] = Json::array();
  for (const auto& s : res.arms) report["arms"].push_back(arm_summary_json(s));
  report["decompositions"]["impression_female_share"] = decomposition_json(res.impression);
  report["decompositions"]["match_female_share"] = decomposition_json(res.match);
  report["decompositions"]["engagement_true_rate"] = decomposition_json(res.engagement_true);
  report["decompositions"]["engagement_signal"] = decomposition_json(res.engagement_signal);
  report["decompositions"]["ctr"] = decomposition_json(res.ctr);
  report["a3_check"] = res.a3 ? ks_json(*res.a3) : Json(nullptr);
  if (!a.out.empty()) write_report(report, a.out);
  if (!a.rounds_csv.empty()) write_rounds_csv(res, a.rounds_csv);
  return 0;
}

inline int run_sweep(const SimArgs& a, const std::vector<double>& percentiles,
                     std::ostream& out) {
  const std::uint64_t seed = a.require_seed();
  McOptions opt;
  opt.rounds = a.rounds;
  opt.seed = seed;
  opt.pairing = a.pairing_mode();
  opt.threads = resolve_threads(a.threads);
  const auto arms = three_arm_design(a.sigma, a.noisy_competitor_share);
  const auto entries = bid_sweep(percentiles, a.population(), a.bids(), arms, opt);

  char buf[200];
  std::snprintf(buf, sizeof(buf), "  %-10s %-8s %12s %12s %12s %12s\n", "percentile", "bid",
                "NIE(pp)", "NDE(pp)", "TE(pp)", "matchNIE(pp)");
  out << buf;
  for (const auto& e : entries) {
    std::snprintf(buf, sizeof(buf), "  %-10.4g %-8.3f %+12.2f %+12.2f %+12.2f %+12.2f\n",
                  e.percentile, e.focal_bid, pp(e.impression.nie), pp(e.impression.nde),
                  pp(e.impression.te), pp(e.match.nie));
    out << buf;
  }

  Json report = report_shell("sweep");
  Json config = sim_config_json(a);
  config["percentiles"] = percentiles;
  report["provenance"] = provenance_json("sweep", seed, config);
  report["entries"] = Json::array();
  for (const auto& e : entries) {
    Json je;
    je["percentile"] = e.percentile;
    je["focal_bid"] = e.focal_bid;
    je["impression"] = decomposition_json(e.impression);
    je["match"] = decomposition_json(e.match);
    report["entries"].push_back(std::move(je));
  }
  if (!a.out.empty()) write_report(report, a.out);
  return 0;
}

inline int run_invert(const SimArgs& a, double target_pp, double tolerance_pp, double sigma_max,
                      int max_iterations, std::ostream& out) {
  const std::uint64_t seed = a.require_seed();
  InvertOptions opt;
  opt.rounds = a.rounds;
  opt.seed = seed;
  opt.tolerance = tolerance_pp / 100.0;
  opt.sigma_max = sigma_max;
  opt.max_iterations = max_iterations;
  opt.threads = resolve_threads(a.threads);
  opt.competitor_share = a.noisy_competitor_share;
  const SigmaInversion inv = invert_sigma(target_pp / 100.0, a.population(), a.bids(), opt);

  char buf[160];
  std::snprintf(buf, sizeof(buf),
                "sigma inversion: target NIE %+0.3f pp -> sigma=%.6f (achieved %+0.3f pp, %d "
                "objective evaluations)\n",
                target_pp, inv.sigma, pp(inv.achieved_nie), inv.iterations);
  out << buf;

  Json report = report_shell("invert-sigma");
  Json config = sim_config_json(a);
  config["target_nie_pp"] = target_pp;
  config["tolerance_pp"] = tolerance_pp;
  config["sigma_max"] = sigma_max;
  config["max_iterations"] = max_iterations;
  report["provenance"] = provenance_json("invert-sigma", seed, config);
  report["sigma"] = inv.sigma;
  report["achieved_nie_pp"] = pp(inv.achieved_nie);
  report["target_nie_pp"] = target_pp;
  report["objective_evaluations"] = inv.iterations;
  report["rounds_per_step"] = inv.rounds_per_step;
  if (!a.out.empty()) write_report(report, a.out);
  return 0;
}

// ---- panel-side subcommands -------------------------------------------------

inline std::optional<BidLevel> parse_bid_filter(const std::string& s) {
  if (s == "all") return std::nullopt;
  return parse_bid_level(s);
}

struct ArmCounts {
  std::array<std::int64_t, 3> numerator{};
  std::array<std::int64_t, 3> denominator{};
};

inline ArmCounts arm_counts(const Panel& panel, OutcomeKind outcome,
                            std::optional<BidLevel> bid) {
  ArmCounts c;
  for (const auto& r : panel.rows) {
    if (bid && r.bid != *bid) continue;
    const auto a = static_cast<std::size_t>(r.arm - 1);
    c.denominator[a] += r.impressions;
    c.numerator[a] += outcome == OutcomeKind::Share
                          ? (r.gender == PanelGender::F ? r.impressions : 0)
                          : r.clicks;
  }
  for (int a = 0; a < 3; ++a)
    if (c.denominator[static_cast<std::size_t>(a)] == 0)
      throw DataError("arm " + std::to_string(a + 1) + " has no impressions under this filter");
  return c;
}

inline Json arm_counts_json(const ArmCounts& c, OutcomeKind outcome) {
  Json arr = Json::array();
  for (int a = 0; a < 3; ++a) {
    const auto i = static_cast<std::size_t>(a);
    Json j;
    j["arm"] = a + 1;
    j[outcome == OutcomeKind::Share ? "female_impressions" : "clicks"] = c.numerator[i];
    j["impressions"] = c.denominator[i];
    j["rate_pp"] = pp(static_cast<double>(c.numerator[i]) / static_cast<double>(c.denominator[i]));
    arr.push_back(std::move(j));
  }
  return arr;
}

// Count-based Bernoulli block for the three contrasts.
inline Json bernoulli_json(const ArmCounts& c) {
  const std::array<std::pair<int, int>, 3> pairs = {{{1, 2}, {1, 3}, {2, 3}}};
  static constexpr const char* kLabels[3] = {"NIE", "TE", "NDE"};
  Json arr = Json::array();
  for (std::size_t k = 0; k < 3; ++k) {
    const auto [a, b] = pairs[k];
    const auto bs =
        bernoulli_se(c.numerator[static_cast<std::size_t>(a - 1)],
                     c.denominator[static_cast<std::size_t>(a - 1)],
                     c.numerator[static_cast<std::size_t>(b - 1)],
                     c.denominator[static_cast<std::size_t>(b - 1)]);
    Json j;
    j["label"] = kLabels[k];
    j["estimate_pp"] = pp(bs.diff);
    j["se_pp"] = pp(bs.se);
    j["t"] = bs.t;
    arr.push_back(std::move(j));
  }
  return arr;
}

inline int run_decompose(const std::string& input, const std::string& outcome_name,
                         const std::string& bid_name, const std::string& out_path,
                         std::ostream& out) {
  const Panel panel = load_panel(input);
  for (const auto& w : panel.warnings) out << "warning: " << w << "\n";
  const OutcomeKind outcome = outcome_name == "ctr" ? OutcomeKind::Ctr : OutcomeKind::Share;
  const auto bid = parse_bid_filter(bid_name);
  const ArmCounts counts = arm_counts(panel, outcome, bid);
  std::array<double, 3> rates{};
  for (int a = 0; a < 3; ++a)
    rates[static_cast<std::size_t>(a)] =
        static_cast<double>(counts.numerator[static_cast<std::size_t>(a)]) /
        static_cast<double>(counts.denominator[static_cast<std::size_t>(a)]);
  Decomposition d = decompose(rates[0], rates[1], rates[2]);
  d.method = DecompMethod::Neyman;

  char buf[160];
  for (int a = 0; a < 3; ++a) {
    std::snprintf(buf, sizeof(buf), "  arm %d: %lld / %lld = %.4f%%\n", a + 1,
                  static_cast<long long>(counts.numerator[static_cast<std::size_t>(a)]),
                  static_cast<long long>(counts.denominator[static_cast<std::size_t>(a)]),
                  pp(rates[static_cast<std::size_t>(a)]));
    out << buf;
  }
  std::snprintf(buf, sizeof(buf), "  NIE %+0.2f pp, NDE %+0.2f pp, TE %+0.2f pp\n", pp(d.nie),
                pp(d.nde), pp(d.te));
  out << buf;

  Json report = report_shell("decompose");
  Json config;
  config["input"] = input;
  config["outcome"] = outcome_name;
  config["bid"] = bid_name;
  report["provenance"] = provenance_json("decompose", 0, config);
  report["arms"] = arm_counts_json(counts, outcome);
  report["decomposition"]["nie_pp"] = pp(d.nie);
  report["decomposition"]["nde_pp"] = pp(d.nde);
  report["decomposition"]["te_pp"] = pp(d.te);
  report["bernoulli"] = bernoulli_json(counts);
  report["notes"] = Json::array({"point estimates are count-derived; see README for the "
                                 "rounding gap against the published NDE/TE"});
  if (!out_path.empty()) write_report(report, out_path);
  return 0;
}

struct InferArgs {
  std::string input;
  std::string outcome = "female-share";
  std::string bid = "high";
  std::string family = "aggregate";
  std::string se = "hc3";
  std::int64_t b = 5000;
  std::uint64_t seed = 0;
  int threads = 0;
  std::string out;
  std::string csv;
};

inline int run_infer(const InferArgs& ia, std::ostream& out) {
  const Panel panel = load_panel(ia.input);
  for (const auto& w : panel.warnings) out << "warning: " << w << "\n";
  const OutcomeKind outcome = ia.outcome == "ctr" ? OutcomeKind::Ctr : OutcomeKind::Share;
  const auto bid = parse_bid_filter(ia.bid);
  BootstrapOptions boot;
  boot.b = ia.b;
  boot.seed = ia.seed;
  boot.threads = resolve_threads(ia.threads);

  Json report = report_shell("infer");
  Json config;
  config["input"] = ia.input;
  config["outcome"] = ia.outcome;
  config["bid"] = ia.bid;
  config["family"] = ia.family;
  config["se"] = ia.se;
  config["B"] = ia.b;
  report["provenance"] = provenance_json("infer", ia.seed, config);

  std::ofstream csv;
  if (!ia.csv.empty()) {
    csv.open(ia.csv);
    if (!csv) throw DataError("cannot write CSV '" + ia.csv + "'");
    csv << "family,age_band,gender,estimand,estimate_pp,se_pp,t,p_raw,p_adj\n";
    csv.precision(17);
  }

  if (ia.family == "aggregate") {
    const auto spec = outcome == OutcomeKind::Share ? female_share_outcome() : ctr_outcome();
    const auto analysis = to_analysis_panel(panel, spec, bid);
    std::vector<WlsRow> rows;
    rows.reserve(analysis.size());
    for (const auto& r : analysis) rows.push_back({r.y, r.weight, r.arm});
    const ArmCounts counts = arm_counts(panel, outcome, bid);
    report["arms"] = arm_counts_json(counts, outcome);
    report["bernoulli"] = bernoulli_json(counts);

    if (ia.se == "hc3") {
      const FitResult fit = wls_fit(rows);
      const auto cs = contrasts(fit);
      const BootstrapDraws draws = wild_bootstrap(fit, boot);
      const std::vector<double> t_obs = {cs[0].t, cs[1].t, cs[2].t};
      const auto p_adj = romano_wolf(t_obs, draws);
      out << "aggregate " << ia.outcome << " (" << ia.bid << " bid), HC3 + wild-bootstrap "
          << "Romano-Wolf, B=" << ia.b << ":\n";
      print_contrast_table(out, cs, p_adj);
      report["contrasts"] = Json::array();
      for (std::size_t k = 0; k < 3; ++k) {
        Json j;
        j["label"] = cs[k].label;
        j["estimate_pp"] = 100.0 * cs[k].estimate;
        j["se_pp"] = 100.0 * cs[k].se;
        j["t"] = cs[k].t;
        j["p_raw"] = cs[k].p_raw;
        j["p_adj"] = p_adj[k];
        report["contrasts"].push_back(std::move(j));
        if (csv.is_open())
          csv << "aggregate,,," << cs[k].label << ',' << 100.0 * cs[k].estimate << ','
              << 100.0 * cs[k].se << ',' << cs[k].t << ',' << cs[k].p_raw << ',' << p_adj[k]
              << '\n';
      }
    } else {
      out << "aggregate " << ia.outcome << " (" << ia.bid << " bid), Bernoulli SEs:\n";
      for (const auto& j : report["bernoulli"]) {
        char buf[160];
        std::snprintf(buf, sizeof(buf), "  %-4s %+10.2f pp (se %.3f, t %+0.2f)\n",
                      j["label"].get<std::string>().c_str(), j["estimate_pp"].get<double>(),
                      j["se_pp"].get<double>(), j["t"].get<double>());
        out << buf;
      }
    }
  } else {  // per-cell
    const CellInference mode =
        ia.se == "bernoulli" ? CellInference::Bernoulli : CellInference::Hc3Rw;
    const PerCellResult res = per_cell_decomposition(panel, outcome, mode, bid, boot);
    for (const auto& w : res.warnings) out << "warning: " << w << "\n";
    char buf[200];
    std::snprintf(buf, sizeof(buf), "per-cell %s (%s bid), %zu contrasts, Bonferroni |t|>%.2f:\n",
                  ia.outcome.c_str(), ia.bid.c_str(), res.family_size, res.bonferroni_t);
    out << buf;
    std::snprintf(buf, sizeof(buf), "  %-6s %-2s %-4s %10s %8s %8s %8s\n", "age", "g", "est.",
                  "est(pp)", "t", "p_raw", "p_adj");
    out << buf;
    report["family_size"] = res.family_size;
    report["bonferroni_t"] = res.bonferroni_t;
    report["cells"] = Json::array();
    for (const auto& row : res.rows) {
      std::snprintf(buf, sizeof(buf), "  %-6s %-2s %-4s %+10.2f %8.2f %8.3f %8.3f\n",
                    kAgeBands[static_cast<std::size_t>(row.cell.age_band)],
                    to_string(row.cell.gender), row.estimand.c_str(), 100.0 * row.estimate,
                    row.t, row.p_raw, row.p_adj);
      out << buf;
      Json j;
      j["age_band"] = kAgeBands[static_cast<std::size_t>(row.cell.age_band)];
      j["gender"] = to_string(row.cell.gender);
      j["estimand"] = row.estimand;
      j["estimate_pp"] = 100.0 * row.estimate;
      j["se_pp"] = 100.0 * row.se;
      j["t"] = row.t;
      j["p_raw"] = row.p_raw;
      j["p_adj"] = row.p_adj;
      j["degenerate"] = row.degenerate;
      report["cells"].push_back(std::move(j));
      if (csv.is_open())
        csv << "per-cell," << kAgeBands[static_cast<std::size_t>(row.cell.age_band)] << ','
            << to_string(row.cell.gender) << ',' << row.estimand << ',' << 100.0 * row.estimate
            << ',' << 100.0 * row.se << ',' << row.t << ',' << row.p_raw << ',' << row.p_adj
            << '\n';
    }
  }
  if (!ia.out.empty()) write_report(report, ia.out);
  return 0;
}

inline int run_dispersion(const std::string& input, const std::string& outcome_name,
                          const std::string& collapse_name, const std::string& out_path,
                          std::ostream& out) {
  const Panel panel = load_panel(input);
  const Collapse collapse = collapse_name == "day" ? Collapse::Day : Collapse::DaySlot;
  std::vector<DispersionEntry> entries;
  if (outcome_name == "female-share" || outcome_name == "both") {
    const auto e = dispersion_report(panel, OutcomeKind::Share, collapse);
    entries.insert(entries.end(), e.begin(), e.end());
  }
  if (outcome_name == "ctr" || outcome_name == "both") {
    const auto e = dispersion_report(panel, OutcomeKind::Ctr, collapse);
    entries.insert(entries.end(), e.begin(), e.end());
  }
  char buf[200];
  std::snprintf(buf, sizeof(buf), "  %-14s %-5s %-4s %10s %12s %12s %6s\n", "outcome", "bid",
                "arm", "phi", "pooled_rate", "mean_cell_n", "cells");
  out << buf;
  for (const auto& e : entries) {
    std::snprintf(buf, sizeof(buf), "  %-14s %-5s %-4d %10.2f %12.5f %12.1f %6lld\n",
                  e.outcome.c_str(), to_string(e.bid), e.arm, e.phi, e.pooled_rate,
                  e.mean_cell_size, static_cast<long long>(e.cells));
    out << buf;
  }
  Json report = report_shell("dispersion");
  Json config;
  config["input"] = input;
  config["outcome"] = outcome_name;
  config["collapse"] = collapse_name;
  report["provenance"] = provenance_json("dispersion", 0, config);
  report["entries"] = Json::array();
  for (const auto& e : entries) {
    Json j;
    j["outcome"] = e.outcome;
    j["bid"] = to_string(e.bid);
    j["arm"] = e.arm;
    j["phi"] = e.phi;
    j["pooled_rate"] = e.pooled_rate;
    j["mean_cell_size"] = e.mean_cell_size;
    j["cells"] = e.cells;
    report["entries"].push_back(std::move(j));
  }
  if (!out_path.empty()) write_report(report, out_path);
  return 0;
}

inline int run_audit(const std::string& input, const std::vector<int>& arms,
                     const std::string& bid_name, const std::string& out_path,
                     const std::string& csv_path, std::ostream& out) {
  if (arms.size() != 2) throw ConfigError("audit: --arms needs exactly two arm ids");
  const Panel panel = load_panel(input);
  const auto bid = parse_bid_filter(bid_name);
  const auto cells = pairwise_audit(panel, arms[0], arms[1], bid);

  char buf[200];
  std::snprintf(buf, sizeof(buf), "pairwise audit: arm %d vs arm %d (%s bid)\n", arms[0], arms[1],
                bid_name.c_str());
  out << buf;
  std::snprintf(buf, sizeof(buf), "  %-6s %-2s %12s %12s %10s %8s %8s %8s\n", "age", "g",
                "share_a(pp)", "share_b(pp)", "diff(pp)", "t", "p", "smd");
  out << buf;
  for (const auto& c : cells) {
    std::snprintf(buf, sizeof(buf), "  %-6s %-2s %12.2f %12.2f %+10.2f %+8.2f %8.3f %+8.3f\n",
                  kAgeBands[static_cast<std::size_t>(c.cell.age_band)], to_string(c.cell.gender),
                  pp(c.share_a), pp(c.share_b), pp(c.diff), c.t, c.p, c.smd);
    out << buf;
  }

  Json report = report_shell("audit");
  Json config;
  config["input"] = input;
  config["arms"] = arms;
  config["bid"] = bid_name;
  report["provenance"] = provenance_json("audit", 0, config);
  report["cells"] = Json::array();
  std::vector<double> pvals;
  for (const auto& c : cells) {
    Json j;
    j["age_band"] = kAgeBands[static_cast<std::size_t>(c.cell.age_band)];
    j["gender"] = to_string(c.cell.gender);
    j["share_a_pp"] = pp(c.share_a);
    j["share_b_pp"] = pp(c.share_b);
    j["diff_pp"] = pp(c.diff);
    j["t"] = c.t;
    j["p"] = c.p;
    j["smd"] = c.smd;
    report["cells"].push_back(std::move(j));
    pvals.push_back(c.p);
  }
  std::sort(pvals.begin(), pvals.end());
  report["pvalue_ecdf"] = pvals;
  if (!out_path.empty()) write_report(report, out_path);
  if (!csv_path.empty()) {
    std::ofstream csv(csv_path);
    if (!csv) throw DataError("cannot write CSV '" + csv_path + "'");
    csv << "age_band,gender,share_a_pp,share_b_pp,diff_pp,t,p,smd\n";
    csv.precision(17);
    for (const auto& c : cells)
      csv << kAgeBands[static_cast<std::size_t>(c.cell.age_band)] << ','
          << to_string(c.cell.gender) << ',' << pp(c.share_a) << ',' << pp(c.share_b) << ','
          << pp(c.diff) << ',' << c.t << ',' << c.p << ',' << c.smd << '\n';
  }
  return 0;
}

inline int run_allocate(const std::vector<double>& sds, std::int64_t n_total,
                        const std::string& out_path, std::ostream& out) {
  if (sds.size() != 3) throw ConfigError("allocate: --sd needs exactly three values");
  const auto n = optimal_allocation(sds[0], sds[1], sds[2], n_total);
  char buf[120];
  std::snprintf(buf, sizeof(buf), "allocation for sd=(%g, %g, %g), n=%lld: %lld/%lld/%lld\n",
                sds[0], sds[1], sds[2], static_cast<long long>(n_total),
                static_cast<long long>(n[0]), static_cast<long long>(n[1]),
                static_cast<long long>(n[2]));
  out << buf;
  Json report = report_shell("allocate");
  Json config;
  config["sd"] = sds;
  config["n_total"] = n_total;
  report["provenance"] = provenance_json("allocate", 0, config);
  report["allocation"] = {n[0], n[1], n[2]};
  if (!out_path.empty()) write_report(report, out_path);
  return 0;
}

}  // namespace cli_detail

inline int run_cli(const std::vector<std::string>& args, std::ostream& out = std::cout,
                   std::ostream& err = std::cerr) {
  using namespace cli_detail;
  CLI::App app{"divergent-delivery laboratory: auction simulation and three-arm decomposition",
               "divlab"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(kVersion));

  SimArgs sim_args;
  auto* sim = app.add_subcommand("sim", "Run the paired three-arm Monte Carlo simulation");
  add_sim_options(sim, sim_args);
  sim->add_option("--rounds-csv", sim_args.rounds_csv, "Write per-round outcomes to this CSV");

  SimArgs sweep_args;
  std::vector<double> percentiles = {0.95, 0.98, 0.995};
  auto* sweep = app.add_subcommand("sweep", "Sweep the focal bid percentile under common seeds");
  add_sim_options(sweep, sweep_args);
  sweep->add_option("--percentiles", percentiles, "Focal bid percentiles to sweep")
      ->delimiter(',')
      ->capture_default_str();

  SimArgs invert_args;
  invert_args.rounds = 200;
  double target_pp = 2.07;
  double tolerance_pp = 0.1;
  double sigma_max = 0.1;
  int max_iterations = 40;
  auto* invert =
      app.add_subcommand("invert-sigma", "Bisect sigma to reproduce a target impression NIE");
  add_sim_options(invert, invert_args, /*with_sigma=*/false);
  invert->add_option("--target", target_pp, "Target NIE in percentage points")
      ->capture_default_str();
  invert->add_option("--tolerance", tolerance_pp, "Absolute NIE tolerance in pp")
      ->capture_default_str();
  invert->add_option("--sigma-max", sigma_max, "Upper bracket for sigma")->capture_default_str();
  invert->add_option("--max-iterations", max_iterations, "Objective evaluation cap")
      ->capture_default_str();

  std::string dec_input, dec_outcome = "female-share", dec_bid = "high", dec_out;
  auto* dec = app.add_subcommand("decompose", "Count-based decomposition of a campaign panel");
  dec->add_option("--input", dec_input, "Panel CSV path")->required();
  dec->add_option("--outcome", dec_outcome, "Outcome")
      ->check(CLI::IsMember({"female-share", "ctr"}))
      ->capture_default_str();
  dec->add_option("--bid", dec_bid, "Bid level filter")
      ->check(CLI::IsMember({"high", "low", "all"}))
      ->capture_default_str();
  dec->add_option("--out", dec_out, "Write the JSON report to this path");

  InferArgs infer_args;
  auto* infer = app.add_subcommand("infer", "WLS/HC3 + wild-bootstrap Romano-Wolf inference");
  infer->add_option("--input", infer_args.input, "Panel CSV path")->required();
  infer->add_option("--outcome", infer_args.outcome, "Outcome")
      ->check(CLI::IsMember({"female-share", "ctr"}))
      ->capture_default_str();
  infer->add_option("--bid", infer_args.bid, "Bid level filter")
      ->check(CLI::IsMember({"high", "low", "all"}))
      ->capture_default_str();
  infer->add_option("--family", infer_args.family, "Hypothesis family")
      ->check(CLI::IsMember({"aggregate", "per-cell"}))
      ->capture_default_str();
  infer->add_option("--B", infer_args.b, "Wild bootstrap draws")->capture_default_str();
  infer->add_option("--seed", infer_args.seed, "RNG seed (required; no wall-clock default)")
      ->required();
  infer->add_option("--se", infer_args.se, "Standard errors")
      ->check(CLI::IsMember({"hc3", "bernoulli"}))
      ->capture_default_str();
  infer->add_option("--threads", infer_args.threads,
                    "Worker threads (0 = DIVLAB_THREADS or hardware)")
      ->capture_default_str();
  infer->add_option("--out", infer_args.out, "Write the JSON report to this path");
  infer->add_option("--csv", infer_args.csv, "Write per-hypothesis rows to this CSV");

  std::string disp_input, disp_outcome = "both", disp_collapse = "day-slot", disp_out;
  auto* disp = app.add_subcommand("dispersion", "Overdispersion ratios by outcome, bid and arm");
  disp->add_option("--input", disp_input, "Panel CSV path")->required();
  disp->add_option("--outcome", disp_outcome, "Outcome")
      ->check(CLI::IsMember({"female-share", "ctr", "both"}))
      ->capture_default_str();
  disp->add_option("--collapse", disp_collapse, "Cell granularity")
      ->check(CLI::IsMember({"day", "day-slot"}))
      ->capture_default_str();
  disp->add_option("--out", disp_out, "Write the JSON report to this path");

  std::string audit_input, audit_bid = "high", audit_out, audit_csv;
  std::vector<int> audit_arms = {1, 2};
  auto* audit = app.add_subcommand("audit", "Pairwise per-cell delivery audit (t, p, SMD)");
  audit->add_option("--input", audit_input, "Panel CSV path")->required();
  audit->add_option("--arms", audit_arms, "The two arms to compare")
      ->delimiter(',')->capture_default_str();
  audit->add_option("--bid", audit_bid, "Bid level filter")
      ->check(CLI::IsMember({"high", "low", "all"}))
      ->capture_default_str();
  audit->add_option("--out", audit_out, "Write the JSON report to this path");
  audit->add_option("--csv", audit_csv, "Write per-cell rows to this CSV");

  std::vector<double> alloc_sds = {1.0, 1.0, 1.0};
  std::int64_t alloc_n = 400;
  std::string alloc_out;
  auto* alloc = app.add_subcommand("allocate", "Variance-minimizing three-arm allocation");
  alloc->add_option("--sd", alloc_sds, "Outcome sds (s1, s2, s3)")
      ->delimiter(',')->capture_default_str();
  alloc->add_option("--n", alloc_n, "Total sample size")->capture_default_str();
  alloc->add_option("--out", alloc_out, "Write the JSON report to this path");

  std::vector<const char*> argv;
  argv.reserve(args.size() + 1);
  argv.push_back("divlab");
  for (const auto& a : args) argv.push_back(a.c_str());

  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    err << "error: config: " << e.what() << "\n";
    return 2;
  }

  try {
    if (sim->parsed()) {
      apply_config_file(sim, sim_args);
      return run_sim(sim_args, out);
    }
    if (sweep->parsed()) {
      apply_config_file(sweep, sweep_args);
      return run_sweep(sweep_args, percentiles, out);
    }
    if (invert->parsed()) {
      apply_config_file(invert, invert_args);
      return run_invert(invert_args, target_pp, tolerance_pp, sigma_max, max_iterations, out);
    }
    if (dec->parsed()) return run_decompose(dec_input, dec_outcome, dec_bid, dec_out, out);
    if (infer->parsed()) return run_infer(infer_args, out);
    if (disp->parsed()) return run_dispersion(disp_input, disp_outcome, disp_collapse, disp_out, out);
    if (audit->parsed()) return run_audit(audit_input, audit_arms, audit_bid, audit_out, audit_csv, out);
    if (alloc->parsed()) return run_allocate(alloc_sds, alloc_n, alloc_out, out);
    err << "error: config: no subcommand given\n";
    return 2;
  } catch (const ConfigError& e) {
    err << "error: config: " << e.what() << "\n";
    return 2;
  } catch (const DataError& e) {
    err << "error: data: " << e.what() << "\n";
    return 3;
  } catch (const NumericError& e) {
    err << "error: numeric: " << e.what() << "\n";
    return 4;
  } catch (const std::exception& e) {
    err << "error: internal: " << e.what() << "\n";
    return 4;
  }
}

}  // namespace divlab
