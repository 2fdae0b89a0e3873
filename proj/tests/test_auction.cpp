#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "divlab/auction.hpp"
#include "divlab/stats.hpp"

using namespace divlab;

namespace {

PopulationConfig small_config() {
  PopulationConfig c;
  c.n_users = 2000;
  c.n_advertisers = 100;
  c.match_quantile = 0.1;
  return c;
}

BidConfig paper_bids(double percentile = 0.995) {
  BidConfig b;
  const auto [mu, sigma] = calibrate_lognormal({2.28, 0.95}, {3.63, 0.995});
  b.log_mu = mu;
  b.log_sigma = sigma;
  b.focal_percentile = percentile;
  return b;
}

}  // namespace

TEST_CASE("calibrate_lognormal recovers parameters from two quantiles") {
  const auto [mu, sigma] = calibrate_lognormal({2.28, 0.95}, {3.63, 0.995});
  // Closed-form two-point solve, assembled independently.
  const double z95 = 1.6448536269514722, z995 = 2.5758293035489004;
  const double sigma_oracle = std::log(3.63 / 2.28) / (z995 - z95);
  const double mu_oracle = std::log(2.28) - z95 * sigma_oracle;
  REQUIRE(sigma == Catch::Approx(sigma_oracle).epsilon(1e-12));
  REQUIRE(mu == Catch::Approx(mu_oracle).margin(1e-12));
  REQUIRE(mu == Catch::Approx(0.002).margin(1e-3));
  REQUIRE(sigma == Catch::Approx(0.500).margin(1e-3));
  // Both quantiles reproduced exactly.
  REQUIRE(lognormal_quantile(mu, sigma, 0.95) == Catch::Approx(2.28).epsilon(1e-12));
  REQUIRE(lognormal_quantile(mu, sigma, 0.995) == Catch::Approx(3.63).epsilon(1e-12));
  // Forward check against the published 98th-percentile bid.
  REQUIRE(lognormal_quantile(mu, sigma, 0.98) == Catch::Approx(2.79).margin(0.01));
}

TEST_CASE("calibrate_lognormal recognizes the standard lognormal") {
  const double p_plus_1sd = 0.8413447460685429;
  const auto [mu, sigma] = calibrate_lognormal({1.0, 0.5}, {std::exp(1.0), p_plus_1sd});
  REQUIRE(mu == Catch::Approx(0.0).margin(1e-12));
  REQUIRE(sigma == Catch::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("calibrate_lognormal rejects degenerate systems") {
  REQUIRE_THROWS_AS(calibrate_lognormal({2.0, 0.9}, {3.0, 0.9}), NumericError);
  REQUIRE_THROWS_AS(calibrate_lognormal({-1.0, 0.5}, {3.0, 0.9}), NumericError);
}

TEST_CASE("build_population is deterministic for a fixed seed") {
  const auto cfg = small_config();
  const auto bids = paper_bids();
  const SeedCtx ctx{42};
  const Population a = build_population(cfg, bids, ctx);
  const Population b = build_population(cfg, bids, ctx);
  REQUIRE(a.genders == b.genders);
  REQUIRE(a.click_rates.data == b.click_rates.data);
  REQUIRE(a.bids == b.bids);
}

TEST_CASE("build_population matches its config moments") {
  auto cfg = small_config();
  const auto bids = paper_bids();
  const Population pop = build_population(cfg, bids, SeedCtx{7});

  // Gender counts within 3 binomial SEs of the male share.
  std::int64_t males = 0;
  for (auto g : pop.genders)
    if (g == Gender::Male) ++males;
  const double n = static_cast<double>(cfg.n_users);
  const double se = std::sqrt(cfg.male_share * (1 - cfg.male_share) / n);
  REQUIRE(std::fabs(males / n - cfg.male_share) < 3 * se);

  // Click-rate sample mean within 3 SEs of mu_r.
  const double m = mean(pop.click_rates.data);
  const double beta_sd = std::sqrt(cfg.click_mean * (1 - cfg.click_mean) /
                                   (cfg.click_concentration + 1));
  const double pairs = n * static_cast<double>(cfg.n_advertisers);
  REQUIRE(std::fabs(m - cfg.click_mean) < 3 * beta_sd / std::sqrt(pairs));

  // The focal bid is the requested percentile of the fitted lognormal.
  REQUIRE(pop.bids[0] == Catch::Approx(3.63).epsilon(1e-12));
}

TEST_CASE("kappa -> infinity collapses click rates to the mean") {
  auto cfg = small_config();
  cfg.n_users = 200;
  cfg.click_concentration = 1e9;
  const Population pop = build_population(cfg, paper_bids(), SeedCtx{3});
  for (double r : pop.click_rates.data) REQUIRE(std::fabs(r - 0.02) < 1e-3);
}

TEST_CASE("config validation lists every violated constraint") {
  PopulationConfig cfg;
  cfg.male_share = 1.5;
  cfg.click_mean = 0.0;
  cfg.click_concentration = -1.0;
  try {
    cfg.validate();
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    const std::string msg = e.what();
    REQUIRE(msg.find("male_share") != std::string::npos);
    REQUIRE(msg.find("click_mean") != std::string::npos);
    REQUIRE(msg.find("click_concentration") != std::string::npos);
  }

  BidConfig bids;  // neither focal_bid nor focal_percentile set
  REQUIRE_THROWS_AS(bids.validate(), ConfigError);
}

TEST_CASE("all-zero regime leaves signals equal to click rates") {
  const Population pop = build_population(small_config(), paper_bids(), SeedCtx{5});
  const Matrix s = perceived_signals(pop, MediatorRegime::all_zero(), SeedCtx{5});
  REQUIRE(s.data == pop.click_rates.data);
}

TEST_CASE("female-only focal noise has the configured sd and spares males") {
  // click_mean well inside (0,1) keeps the [0,1] clamp inactive, so the
  // realized (s - r) sample sd estimates the configured sigma directly.
  auto cfg = small_config();
  cfg.click_mean = 0.5;
  const Population pop = build_population(cfg, paper_bids(), SeedCtx{6});
  const auto regime = MediatorRegime::female_noise(0.03);
  const Matrix s = perceived_signals(pop, regime, SeedCtx{6});

  std::vector<double> noise;
  for (std::size_t u = 0; u < s.rows; ++u) {
    if (pop.genders[u] == Gender::Female) {
      noise.push_back(s.at(u, 0) - pop.click_rates.at(u, 0));
    } else {
      // Male rows untouched, every advertiser.
      for (std::size_t i = 0; i < s.cols; ++i)
        REQUIRE(s.at(u, i) == pop.click_rates.at(u, i));
    }
    // Non-focal columns untouched for everyone.
    for (std::size_t i = 1; i < s.cols; ++i) REQUIRE(s.at(u, i) == pop.click_rates.at(u, i));
  }
  // Clamping at 0 truncates a few draws; the raw-sd check tolerates 10%.
  REQUIRE(sample_sd(noise) == Catch::Approx(0.03).epsilon(0.10));
  for (double v : s.data) {
    REQUIRE(v >= 0.0);
    REQUIRE(v <= 1.0);
  }
}

TEST_CASE("match_top_q picks the largest signals") {
  Matrix signals(1, 3);
  signals.data = {0.3, 0.2, 0.1};
  const auto m = match_top_q(signals, 0.34);  // ceil(1.02) = 2
  REQUIRE(m.k == 2);
  REQUIRE(std::vector<std::int32_t>(m.user(0).begin(), m.user(0).end()) ==
          std::vector<std::int32_t>{0, 1});
}

TEST_CASE("match_top_q breaks ties toward the lowest advertiser index") {
  Matrix signals(1, 3);
  signals.data = {0.2, 0.2, 0.1};
  const auto m = match_top_q(signals, 1.0 / 3.0);
  REQUIRE(m.k == 1);
  REQUIRE(m.user(0)[0] == 0);
}

TEST_CASE("match_top_q with q=1 matches everyone") {
  Matrix signals(2, 4);
  signals.data = {0.1, 0.4, 0.2, 0.3, 0.9, 0.8, 0.7, 0.6};
  const auto m = match_top_q(signals, 1.0);
  REQUIRE(m.k == 4);
  for (std::size_t u = 0; u < 2; ++u)
    REQUIRE(std::vector<std::int32_t>(m.user(u).begin(), m.user(u).end()) ==
            std::vector<std::int32_t>{0, 1, 2, 3});
}

namespace {

// One-user fixture with explicit bids; signals arranged so the matched set
// is exactly the advertisers listed in `matched`.
DeliveryOutcome tiny_auction(const std::vector<double>& bids,
                             const std::vector<std::int32_t>& matched) {
  Population pop;
  pop.genders = {Gender::Female};
  pop.bids = bids;
  pop.focal = 0;
  pop.click_rates.reshape(1, bids.size());
  for (auto& r : pop.click_rates.data) r = 0.5;
  Matrix signals = pop.click_rates;
  MatchResult m;
  m.k = static_cast<std::int64_t>(matched.size());
  m.sets = matched;
  return run_auction(pop, m, signals, SeedCtx{1});
}

}  // namespace

TEST_CASE("second price: winner pays the runner-up bid") {
  const auto out = tiny_auction({3.0, 2.0}, {0, 1});
  REQUIRE(out.wins == 1);
  REQUIRE(out.spend == Catch::Approx(2.0));
  REQUIRE(out.matches == 1);
  REQUIRE(out.female_wins == 1);
}

TEST_CASE("focal outside the matched set cannot win") {
  const auto out = tiny_auction({3.0, 2.0, 1.0}, {1, 2});
  REQUIRE(out.wins == 0);
  REQUIRE(out.matches == 0);
  REQUIRE(out.spend == 0.0);
}

TEST_CASE("focal below every matched competitor wins nothing") {
  const auto out = tiny_auction({1.5, 2.0, 3.0}, {0, 1, 2});
  REQUIRE(out.wins == 0);
  REQUIRE(out.matches == 1);  // matched, just outbid
  REQUIRE(out.spend == 0.0);
}

TEST_CASE("singleton matched set pays zero") {
  const auto out = tiny_auction({3.0, 2.0}, {0});
  REQUIRE(out.wins == 1);
  REQUIRE(out.spend == 0.0);
}

TEST_CASE("delivery outcome invariants on a full round") {
  const auto cfg = small_config();
  const Population pop = build_population(cfg, paper_bids(), SeedCtx{8});
  const auto regime = MediatorRegime::female_noise(0.03);
  const Matrix s = perceived_signals(pop, regime, SeedCtx{8});
  const auto m = match_top_q(s, cfg.match_quantile);
  const auto out = run_auction(pop, m, s, SeedCtx{8});
  REQUIRE(out.female_wins <= out.wins);
  REQUIRE(out.wins <= out.matches);
  REQUIRE(out.matches <= cfg.n_users);
  REQUIRE(out.clicks <= out.wins);
  REQUIRE(out.female_matches <= out.matches);
  REQUIRE(out.wins > 0);
  REQUIRE(out.mean_true_rate_won > 0.0);
  REQUIRE(out.mean_signal_won > 0.0);
}

TEST_CASE("matches are invariant to every bid") {
  const auto cfg = small_config();
  const SeedCtx ctx{21};
  BidConfig high = paper_bids(0.995);
  BidConfig low = paper_bids(0.5);
  const Population pop_h = build_population(cfg, high, ctx);
  const Population pop_l = build_population(cfg, low, ctx);
  const auto regime = MediatorRegime::female_noise(0.03);
  const Matrix sh = perceived_signals(pop_h, regime, ctx);
  const Matrix sl = perceived_signals(pop_l, regime, ctx);
  // Same seed: identical rates and signals (the focal bid never enters them).
  REQUIRE(sh.data == sl.data);
  const auto mh = match_top_q(sh, cfg.match_quantile);
  const auto ml = match_top_q(sl, cfg.match_quantile);
  REQUIRE(mh.sets == ml.sets);
}

TEST_CASE("noisy competitor share applies the other-class sigma") {
  auto cfg = small_config();
  cfg.n_users = 50;
  const Population pop = build_population(cfg, paper_bids(), SeedCtx{31});
  auto regime = MediatorRegime::female_noise(0.05, 0.25);
  REQUIRE(noisy_competitor_count(regime, cfg.n_advertisers) == 25);
  const Matrix s = perceived_signals(pop, regime, SeedCtx{31});
  std::size_t changed_cols = 0;
  for (std::size_t i = 1; i < s.cols; ++i) {
    bool any = false;
    for (std::size_t u = 0; u < s.rows; ++u)
      if (s.at(u, i) != pop.click_rates.at(u, i)) any = true;
    if (any) ++changed_cols;
  }
  REQUIRE(changed_cols == 25);
}
