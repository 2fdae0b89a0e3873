#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <set>
#include <vector>

#include "divlab/rng.hpp"
#include "divlab/stats.hpp"

using namespace divlab;

TEST_CASE("substream keys are stable and distinct across coordinates") {
  const SeedCtx a{7, 0, 0};
  const SeedCtx b{7, 1, 0};
  const SeedCtx c{7, 0, 2};
  REQUIRE(a.stream(Stage::Gender, 0) == SeedCtx{7, 0, 0}.stream(Stage::Gender, 0));
  std::set<std::uint64_t> keys;
  for (const auto& ctx : {a, b, c})
    for (auto stage : {Stage::Gender, Stage::ClickRate, Stage::Bids})
      for (std::uint64_t unit : {0ull, 1ull, 999ull}) keys.insert(ctx.stream(stage, unit));
  REQUIRE(keys.size() == 27);
}

TEST_CASE("uniform draws live in [0,1) and have the right mean") {
  Rng rng(SeedCtx{11}.stream(Stage::Synthetic, 0));
  const int n = 200000;
  double sum = 0.0;
  for (int i = 0; i < n; ++i) {
    const double u = rng.uniform();
    REQUIRE(u >= 0.0);
    REQUIRE(u < 1.0);
    sum += u;
  }
  // 3 sigma band for the mean of U(0,1): sd = 1/sqrt(12n)
  REQUIRE(std::fabs(sum / n - 0.5) < 3.0 / std::sqrt(12.0 * n));
}

TEST_CASE("normal sampler moments") {
  Rng rng(SeedCtx{13}.stream(Stage::Synthetic, 1));
  const int n = 400000;
  std::vector<double> z(n);
  int inside = 0;
  for (auto& v : z) {
    v = rng.normal();
    if (std::fabs(v) < 1.959963984540054) ++inside;
  }
  REQUIRE(std::fabs(mean(z)) < 3.0 / std::sqrt(static_cast<double>(n)));
  REQUIRE(sample_sd(z) == Catch::Approx(1.0).margin(0.01));
  REQUIRE(static_cast<double>(inside) / n == Catch::Approx(0.95).margin(0.004));
}

TEST_CASE("gamma and beta match their first two moments") {
  Rng rng(SeedCtx{17}.stream(Stage::Synthetic, 2));
  const int n = 200000;

  std::vector<double> g(n);
  for (auto& v : g) v = rng.gamma(2.5);
  REQUIRE(mean(g) == Catch::Approx(2.5).margin(0.03));
  REQUIRE(sample_variance(g) == Catch::Approx(2.5).margin(0.1));

  // Beta(1, 49): the click-rate prior at the default calibration.
  std::vector<double> b(n);
  for (auto& v : b) v = rng.beta(1.0, 49.0);
  const double m = 1.0 / 50.0;
  const double var = m * (1.0 - m) / 51.0;
  REQUIRE(mean(b) == Catch::Approx(m).margin(3.0 * std::sqrt(var / n)));
  REQUIRE(sample_variance(b) == Catch::Approx(var).epsilon(0.05));
  for (double v : b) {
    REQUIRE(v > 0.0);
    REQUIRE(v < 1.0);
  }

  // Boosted branch (shape < 1).
  std::vector<double> s(n);
  for (auto& v : s) v = rng.gamma(0.75);
  REQUIRE(mean(s) == Catch::Approx(0.75).margin(0.02));
}

TEST_CASE("identical stream keys replay identical sequences") {
  Rng a(derive(123, 45));
  Rng b(derive(123, 45));
  for (int i = 0; i < 100; ++i) REQUIRE(a.next_u64() == b.next_u64());
}
