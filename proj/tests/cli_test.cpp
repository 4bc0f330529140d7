#include "cli_support.hpp"
#include "config.hpp"

#include <gtest/gtest.h>

using namespace condex;
namespace ct = condex::testing;
namespace fs = std::filesystem;

namespace {

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() / (std::string("condex_cli_") + ::testing::UnitTest::GetInstance()->current_test_info()->name());
    fs::remove_all(dir_);
    cfg_ = ct::make_pipeline_fixture(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  int run(const std::string& args) { return ct::run_cli(args, dir_ / "log.txt"); }
  std::string log() const { return ct::slurp(dir_ / "log.txt"); }

  fs::path dir_;
  fs::path cfg_;
};

}  // namespace

TEST(Config, ParsesKeyValueText) {
  const auto c = cli::Config::parse_text("# comment\nseed = 4\n\nnsims=10\nv_quantiles = 0.9, 0.99\n", "x.cfg");
  EXPECT_EQ(c.seed(), 4u);
  EXPECT_EQ(c.integer("nsims", 0), 10);
  EXPECT_EQ(c.numbers("v_quantiles", {}), (std::vector<double>{0.9, 0.99}));
  EXPECT_EQ(c.num("bootstrap_block", 10.0), 10.0);
}

TEST(Config, ParsesJsonObjects) {
  const auto c = cli::Config::parse_json(R"({"seed": 9, "anchors": ["a", "b", "c"], "nsims": 50})", "x.json");
  EXPECT_EQ(c.seed(), 9u);
  EXPECT_EQ(c.list("anchors"), (std::vector<std::string>{"a", "b", "c"}));
  EXPECT_THROW(cli::Config::parse_json("[1]", "x.json"), io::ParseError);
}

TEST(Config, ErrorsPointAtTheOffendingEntry) {
  try {
    cli::Config::parse_text("seed = 1\n  colour = red\n", "x.cfg");
    FAIL();
  } catch (const io::ParseError& e) {
    EXPECT_EQ(e.line(), 2);
    EXPECT_EQ(e.column(), 3);
  }
  EXPECT_THROW(cli::Config::parse_text("seed = 1\nseed = 2\n", "x.cfg"), io::ParseError);
  EXPECT_THROW(cli::Config::parse_text("seed\n", "x.cfg"), io::ParseError);
  const auto c = cli::Config::parse_text("nsims = ten\n", "x.cfg");
  EXPECT_THROW(c.integer("nsims", 1), io::ParseError);
  EXPECT_THROW(c.seed(), io::ParseError);
}

TEST(Config, OverridesReplaceValues) {
  auto c = cli::Config::parse_text("seed = 1\nnsims = 5\n", "x.cfg");
  c.override_with("nsims=7");
  EXPECT_EQ(c.integer("nsims", 0), 7);
  EXPECT_THROW(c.override_with("nsims"), io::ParseError);
  EXPECT_THROW(c.override_with("bogus=1"), io::ParseError);
}

TEST_F(CliTest, MissingSeedIsAConfigurationError) {
  auto text = ct::slurp(cfg_);
  text.erase(text.find("seed = 20240611\n"), 16);
  ct::write_file(dir_ / "noseed.cfg", text);
  EXPECT_EQ(run("transform -c \"" + (dir_ / "noseed.cfg").string() + "\""), 2);
  EXPECT_NE(log().find("seed"), std::string::npos);
}

TEST_F(CliTest, UnknownKeyIsAConfigurationError) {
  ct::write_file(dir_ / "bad.cfg", ct::slurp(cfg_) + "smoothing = 3\n");
  EXPECT_EQ(run("transform -c \"" + (dir_ / "bad.cfg").string() + "\""), 2);
  EXPECT_NE(log().find("smoothing"), std::string::npos);
  EXPECT_EQ(run("transform -c \"" + cfg_.string() + "\" --set bogus=1"), 2);
  EXPECT_EQ(run("frobnicate -c \"" + cfg_.string() + "\""), 2);
}

TEST_F(CliTest, LaterStagesNeedEarlierOutputs) {
  EXPECT_EQ(run("fit -c \"" + cfg_.string() + "\""), 2);
  EXPECT_NE(log().find("transform"), std::string::npos);
}

TEST_F(CliTest, TransformWritesLaplaceData) {
  ASSERT_EQ(run("transform -c \"" + cfg_.string() + "\""), 0) << log();
  const auto out = dir_ / "out";
  for (const char* f : {"locations.csv", "laplace.csv", "transform.json", "manifest_transform.json"})
    EXPECT_TRUE(fs::exists(out / f)) << f;
  const auto lap = io::read_dataset((out / "locations.csv").string(), (out / "laplace.csv").string(), MarginTag::laplace);
  const auto raw = io::read_dataset((dir_ / "locations.csv").string(), (dir_ / "observations.csv").string());
  EXPECT_EQ(lap.observations, to_laplace(raw).first.observations);
  const auto manifest = io::read_json((out / "manifest_transform.json").string());
  EXPECT_EQ(manifest["seed"], 20240611);
  EXPECT_EQ(manifest["outputs"].size(), 3u);
}

TEST_F(CliTest, TransformSubsetSelectsRows) {
  ASSERT_EQ(run("transform -c \"" + cfg_.string() + "\" --subset rows:1-100,200"), 0) << log();
  const auto lap = io::read_dataset((dir_ / "out/locations.csv").string(), (dir_ / "out/laplace.csv").string(),
                                    MarginTag::laplace);
  EXPECT_EQ(lap.num_replicates(), 101);
  ct::write_file(dir_ / "times.txt", "day3\nday7\nday11\n");
  ASSERT_EQ(run("transform -c \"" + cfg_.string() + "\" --subset times:\"" + (dir_ / "times.txt").string() + "\""), 0) << log();
  const auto lap2 = io::read_dataset((dir_ / "out/locations.csv").string(), (dir_ / "out/laplace.csv").string(),
                                     MarginTag::laplace);
  EXPECT_EQ(lap2.num_replicates(), 3);
}

TEST_F(CliTest, FullPipelineRunsAndIsReproducible) {
  const std::string failed = ct::run_pipeline(cfg_, dir_);
  ASSERT_TRUE(failed.empty()) << failed << ": " << ct::slurp(dir_ / (failed + ".log"));
  const auto first = ct::directory_contents(dir_ / "out");
  for (const char* f : {"fit.json", "fit_refit.json", "expected_exceedances.csv", "unconditional.csv", "kendall.csv",
                        "bootstrap.csv", "deform.json", "chi.csv", "overlay_simulated.csv"})
    EXPECT_TRUE(first.count(f)) << f;
  fs::rename(dir_ / "out", dir_ / "first");
  ASSERT_TRUE(ct::run_pipeline(cfg_, dir_).empty());
  EXPECT_EQ(ct::directory_contents(dir_ / "out"), first);

  const auto fitted = io::fitted_from_json(io::read_json((dir_ / "out/fit.json").string()));
  EXPECT_EQ(fitted.threshold_quantile, 0.95);
  EXPECT_EQ(fitted.locations.rows(), 6);
}
