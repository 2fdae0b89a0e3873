#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "divlab/cli.hpp"

using namespace divlab;
namespace fs = std::filesystem;

namespace {

const std::string kFixture = std::string(DIVLAB_TEST_DIR) + "/fixtures/highbid_panel.csv";
const std::string kSnapshots = std::string(DIVLAB_TEST_DIR) + "/snapshots";

std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

fs::path temp_file(const std::string& name) {
  return fs::temp_directory_path() / ("divlab_test_" + name);
}

int run(const std::vector<std::string>& args, std::string* out_text = nullptr,
        std::string* err_text = nullptr) {
  std::ostringstream out, err;
  const int rc = run_cli(args, out, err);
  if (out_text) *out_text = out.str();
  if (err_text) *err_text = err.str();
  return rc;
}

}  // namespace

TEST_CASE("help output is snapshot-stable for every subcommand") {
  const std::vector<std::pair<std::vector<std::string>, std::string>> cases = {
      {{"--help"}, "help_root.txt"},
      {{"sim", "--help"}, "help_sim.txt"},
      {{"sweep", "--help"}, "help_sweep.txt"},
      {{"invert-sigma", "--help"}, "help_invert-sigma.txt"},
      {{"decompose", "--help"}, "help_decompose.txt"},
      {{"infer", "--help"}, "help_infer.txt"},
      {{"dispersion", "--help"}, "help_dispersion.txt"},
      {{"audit", "--help"}, "help_audit.txt"},
      {{"allocate", "--help"}, "help_allocate.txt"},
  };
  for (const auto& [args, snapshot] : cases) {
    INFO("snapshot " << snapshot);
    std::string out;
    REQUIRE(run(args, &out) == 0);
    REQUIRE(out == slurp(fs::path(kSnapshots) / snapshot));
  }
}

TEST_CASE("exit codes follow the contract") {
  std::string err;
  // 2: config errors (missing required seed, unknown flag, bad enum).
  REQUIRE(run({"sim", "--rounds", "4"}, nullptr, &err) == 2);
  REQUIRE(err.rfind("error: config:", 0) == 0);
  REQUIRE(run({"infer", "--input", kFixture, "--seed", "1", "--se", "banana"}, nullptr, &err) == 2);
  // 3: data validation.
  REQUIRE(run({"decompose", "--input", "/nonexistent/panel.csv"}, nullptr, &err) == 3);
  REQUIRE(err.rfind("error: data:", 0) == 0);
  // 4: numerical failure (unreachable inversion target).
  REQUIRE(run({"invert-sigma", "--target", "80", "--rounds", "4", "--seed", "1", "--users",
               "400", "--advertisers", "50", "--sigma-max", "0.001"},
              nullptr, &err) == 4);
  REQUIRE(err.rfind("error: numeric:", 0) == 0);
  // 0: success.
  REQUIRE(run({"allocate", "--sd", "1,1,1", "--n", "400"}) == 0);
}

TEST_CASE("allocate reproduces the 1:sqrt(2):1 split") {
  std::string out;
  REQUIRE(run({"allocate", "--sd", "1,1,1", "--n", "400"}, &out) == 0);
  REQUIRE(out.find("117/166/117") != std::string::npos);
}

TEST_CASE("decompose emits the count-derived report") {
  const auto report_path = temp_file("decompose.json");
  REQUIRE(run({"decompose", "--input", kFixture, "--outcome", "female-share", "--bid", "high",
               "--out", report_path.string()}) == 0);
  const auto j = nlohmann::json::parse(slurp(report_path));
  REQUIRE(j["schema_version"] == 1);
  REQUIRE(j["decomposition"]["nie_pp"].get<double>() == Catch::Approx(2.07).margin(0.01));
  REQUIRE(j["decomposition"]["nde_pp"].get<double>() == Catch::Approx(-0.70).margin(0.01));
  REQUIRE(j["decomposition"]["te_pp"].get<double>() == Catch::Approx(1.37).margin(0.01));
  REQUIRE(j["bernoulli"][0]["label"] == "NIE");
  REQUIRE(j["bernoulli"][0]["se_pp"].get<double>() == Catch::Approx(0.37).margin(0.01));
  REQUIRE(j["provenance"]["artifact_version"] == kVersion);
  fs::remove(report_path);
}

TEST_CASE("infer on the high-bid fixture recovers the published NIE") {
  const auto report_path = temp_file("infer.json");
  REQUIRE(run({"infer", "--input", kFixture, "--outcome", "female-share", "--bid", "high",
               "--B", "400", "--seed", "5", "--out", report_path.string()}) == 0);
  const auto j = nlohmann::json::parse(slurp(report_path));
  REQUIRE(j["contrasts"][0]["label"] == "NIE");
  REQUIRE(j["contrasts"][0]["estimate_pp"].get<double>() == Catch::Approx(2.07).margin(0.01));
  REQUIRE(j["contrasts"][2]["label"] == "NDE");
  REQUIRE(j["contrasts"][2]["estimate_pp"].get<double>() == Catch::Approx(-0.70).margin(0.01));
  // Identity TE = NIE + NDE on the reported values.
  const double nie = j["contrasts"][0]["estimate_pp"].get<double>();
  const double te = j["contrasts"][1]["estimate_pp"].get<double>();
  const double nde = j["contrasts"][2]["estimate_pp"].get<double>();
  REQUIRE(te == Catch::Approx(nie + nde).margin(1e-9));
  for (const auto& c : j["contrasts"]) {
    REQUIRE(c["p_adj"].get<double>() >= c["p_raw"].get<double>() - 1e-12);
  }
  fs::remove(report_path);
}

TEST_CASE("sim and infer reports are byte-identical across runs and thread counts") {
  const auto a = temp_file("sim_a.json");
  const auto b = temp_file("sim_b.json");
  const std::vector<std::string> base = {"sim",     "--rounds", "6",    "--seed",
                                         "42",      "--users",  "800",  "--advertisers",
                                         "60",      "--sigma",  "0.03"};
  auto with = [&](const fs::path& path, const std::string& threads) {
    auto args = base;
    args.insert(args.end(), {"--threads", threads, "--out", path.string()});
    return args;
  };
  REQUIRE(run(with(a, "1")) == 0);
  REQUIRE(run(with(b, "8")) == 0);
  REQUIRE(slurp(a) == slurp(b));
  REQUIRE(run(with(b, "1")) == 0);  // repeat run, same bytes
  REQUIRE(slurp(a) == slurp(b));
  fs::remove(a);
  fs::remove(b);

  const auto ia = temp_file("infer_a.json");
  const auto ib = temp_file("infer_b.json");
  const std::vector<std::string> ibase = {"infer", "--input", kFixture, "--B", "300",
                                          "--seed", "9"};
  auto iwith = [&](const fs::path& path, const std::string& threads) {
    auto args = ibase;
    args.insert(args.end(), {"--threads", threads, "--out", path.string()});
    return args;
  };
  REQUIRE(run(iwith(ia, "1")) == 0);
  REQUIRE(run(iwith(ib, "8")) == 0);
  REQUIRE(slurp(ia) == slurp(ib));
  fs::remove(ia);
  fs::remove(ib);
}

TEST_CASE("config files feed defaults and command-line flags win") {
  const auto cfg = temp_file("sim.cfg");
  {
    std::ofstream f(cfg);
    f << "rounds=5\nusers=600\nadvertisers=50\nsigma=0.05\nseed=13\n";
  }
  const auto ra = temp_file("cfg_a.json");
  const auto rb = temp_file("cfg_b.json");
  REQUIRE(run({"sim", "--config", cfg.string(), "--out", ra.string()}) == 0);
  auto ja = nlohmann::json::parse(slurp(ra));
  REQUIRE(ja["provenance"]["config"]["rounds"] == 5);
  REQUIRE(ja["provenance"]["config"]["sigma"].get<double>() == Catch::Approx(0.05));
  REQUIRE(ja["provenance"]["seed"] == 13);

  // A flag on the command line overrides the config file value.
  REQUIRE(run({"sim", "--config", cfg.string(), "--sigma", "0.01", "--out", rb.string()}) == 0);
  auto jb = nlohmann::json::parse(slurp(rb));
  REQUIRE(jb["provenance"]["config"]["sigma"].get<double>() == Catch::Approx(0.01));
  fs::remove(cfg);
  fs::remove(ra);
  fs::remove(rb);
}

TEST_CASE("audit and dispersion subcommands run on the fixture") {
  std::string out;
  REQUIRE(run({"audit", "--input", kFixture, "--arms", "1,2", "--bid", "high"}, &out) == 0);
  REQUIRE(out.find("25-34") != std::string::npos);

  // Dispersion needs >= 2 cells per arm; the fixture has 2 days.
  REQUIRE(run({"dispersion", "--input", kFixture, "--collapse", "day"}, &out) == 0);
  REQUIRE(out.find("female-share") != std::string::npos);
}

TEST_CASE("sweep emits one entry per percentile with bid-invariant match NIE") {
  const auto path = temp_file("sweep.json");
  REQUIRE(run({"sweep", "--rounds", "5", "--seed", "21", "--users", "800", "--advertisers",
               "60", "--percentiles", "0.95,0.995", "--out", path.string()}) == 0);
  const auto j = nlohmann::json::parse(slurp(path));
  REQUIRE(j["entries"].size() == 2);
  REQUIRE(j["entries"][0]["match"]["nie_pp"].get<double>() ==
          j["entries"][1]["match"]["nie_pp"].get<double>());
  fs::remove(path);
}

TEST_CASE("invert-sigma round-trips a small target") {
  const auto path = temp_file("invert.json");
  // Forward NIE at sigma = 0.03 on the small config, then invert it.
  const auto fwd = temp_file("fwd.json");
  REQUIRE(run({"sim", "--rounds", "40", "--seed", "37", "--users", "1000", "--advertisers",
               "80", "--sigma", "0.03", "--out", fwd.string()}) == 0);
  const auto jf = nlohmann::json::parse(slurp(fwd));
  const double target = jf["decompositions"]["impression_female_share"]["nie_pp"].get<double>();
  REQUIRE(run({"invert-sigma", "--target", std::to_string(target), "--rounds", "40", "--seed",
               "37", "--users", "1000", "--advertisers", "80", "--tolerance", "0.05", "--out",
               path.string()}) == 0);
  const auto j = nlohmann::json::parse(slurp(path));
  REQUIRE(j["sigma"].get<double>() == Catch::Approx(0.03).margin(0.006));
  fs::remove(path);
  fs::remove(fwd);
}
