#include <gtest/gtest.h>

#include <sys/wait.h>
#include <unistd.h>

#include <cstdlib>
#include <sstream>

#include "keynode/pipeline.hpp"

using namespace keynode;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& tag) {
  const auto d = fs::temp_directory_path() / ("keynode_pipeline_" + std::to_string(getpid())) / tag;
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

io::json small_config(const fs::path& root) {
  return {{"master_seed", 7},
          {"output_dir", (root / "out").string()},
          {"cache_dir", (root / "cache").string()},
          {"runs", 10},
          {"k", {2}},
          {"k_max", 2},
          {"models", {{{"kind", "gbm"}, {"hyperparams", {{"rounds", 10}}}}}},
          {"trials", 2},
          {"networks",
           {{{"name", "tiny"},
             {"family", "citation"},
             {"synthetic", {{"model", "barabasi_albert"}, {"n", 150}, {"param", 2}, {"seed", 1}}}}}}};
}

fs::path write_config(const fs::path& root, const io::json& j) {
  const auto p = root / "config.json";
  io::write_json(p, j);
  return p;
}

std::size_t count_status(const std::string& log, const std::string& status) {
  std::size_t n = 0;
  std::istringstream in(log);
  for (std::string line; std::getline(in, line);)
    if (line.find("status=" + status) != std::string::npos) ++n;
  return n;
}

int run_cli(const std::string& args, const std::string& env = "") {
  const std::string cmd = env + " " + std::string(KEYNODE_CLI_PATH) + " " + args + " >/dev/null 2>&1";
  const int rc = std::system(cmd.c_str());
  return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

}  // namespace

TEST(Config, ParsesExampleConfigs) {
  const fs::path dir = fs::path(KEYNODE_SOURCE_DIR) / "examples" / "configs";
  const auto cfg = load_config(dir / "synthetic_small.json");
  EXPECT_EQ(cfg.networks.size(), 2u);
  EXPECT_EQ(cfg.runs, 50u);
  EXPECT_EQ(cfg.network("ba_social").family, NetworkFamily::social);
  EXPECT_THROW(cfg.network("nope"), ConfigError);
  // The real edge lists are not shipped; the error names the missing file.
  try {
    load_config(dir / "paper_networks.json");
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("does not exist"), std::string::npos);
  }
}

TEST(Config, RejectsBadInput) {
  const auto root = fresh_dir("bad");
  auto j = small_config(root);
  j["unknown_key"] = 1;
  EXPECT_THROW(parse_config(j), ConfigError);
  j = small_config(root);
  j["runs"] = 0;
  EXPECT_THROW(parse_config(j), ConfigError);
  j["runs"] = -5;
  EXPECT_THROW(parse_config(j), ConfigError);
  j = small_config(root);
  j["networks"] = io::json::array();
  EXPECT_THROW(parse_config(j), ConfigError);
  io::write_file(root / "broken.json", "{ not json");
  EXPECT_THROW(load_config(root / "broken.json"), ConfigError);
  EXPECT_THROW(load_config(root / "missing.json"), ConfigError);
}

TEST(Config, OverridesWin) {
  const auto root = fresh_dir("override");
  const auto p = write_config(root, small_config(root));
  const auto cfg = load_config(p, {{"runs", 33}});
  EXPECT_EQ(cfg.runs, 33u);
}

TEST(Pipeline, CacheHitsOnRerunAndManifestStable) {
  const auto root = fresh_dir("cache");
  const auto cfg = parse_config(small_config(root));
  std::ostringstream log1, log2;
  const auto m1 = Pipeline(cfg, Logger(false, &log1)).run_all();
  EXPECT_EQ(count_status(log1.str(), "cache-hit"), 0u);
  EXPECT_GT(count_status(log1.str(), "done"), 5u);
  EXPECT_TRUE(fs::exists(root / "out" / "manifest.json"));

  const auto m2 = Pipeline(cfg, Logger(false, &log2)).run_all();
  EXPECT_EQ(count_status(log2.str(), "done"), 0u);
  EXPECT_EQ(m1.dump(), m2.dump());
}

TEST(Pipeline, ChangingRunsInvalidatesDownstreamOnly) {
  const auto root = fresh_dir("invalidate");
  auto j = small_config(root);
  Pipeline(parse_config(j), Logger(false, nullptr)).run_all();
  j["runs"] = 12;
  std::ostringstream log;
  Pipeline p(parse_config(j), Logger(false, &log));
  p.run_all();
  const auto& recs = p.records();
  EXPECT_TRUE(recs.at("ingest/tiny").cache_hit);
  EXPECT_TRUE(recs.at("featurize/tiny").cache_hit);
  EXPECT_FALSE(recs.at("simulate/tiny").cache_hit);
  EXPECT_FALSE(recs.at("label/tiny").cache_hit);
  EXPECT_FALSE(recs.at("evaluate/tiny").cache_hit);
}

TEST(Pipeline, SingleStageNeedsUpstream) {
  const auto root = fresh_dir("dep");
  Pipeline p(parse_config(small_config(root)), Logger(false, nullptr), false);
  EXPECT_THROW(p.simulate(p.config().networks[0], false), DependencyError);
}

TEST(Cli, ExitCodes) {
  const auto root = fresh_dir("cli");
  const auto cfg = write_config(root, small_config(root));
  EXPECT_EQ(run_cli("--help"), 0);
  EXPECT_EQ(run_cli("simulate -c " + cfg.string()), 3);
  EXPECT_EQ(run_cli("ingest -c " + cfg.string()), 0);
  EXPECT_EQ(run_cli("simulate -c " + cfg.string()), 0);
  EXPECT_EQ(run_cli("simulate -c " + (root / "missing.json").string()), 1);
  EXPECT_EQ(run_cli("no-such-command"), 1);

  // A malformed edge list fails inside the ingest stage.
  io::write_file(root / "bad.txt", "0 1\nlonely\n");
  auto j = small_config(root);
  j["networks"] = {{{"name", "bad"}, {"family", "citation"}, {"path", (root / "bad.txt").string()}}};
  const auto bad = root / "bad.json";
  io::write_json(bad, j);
  EXPECT_EQ(run_cli("ingest -c " + bad.string()), 2);
}

TEST(Cli, CacheDirFromEnvironment) {
  const auto root = fresh_dir("env");
  const auto cfg = write_config(root, small_config(root));
  const auto alt = root / "alt_cache";
  EXPECT_EQ(run_cli("ingest -c " + cfg.string(), "KEYNODE_CACHE_DIR=" + alt.string()), 0);
  EXPECT_TRUE(fs::exists(alt / "ingest" / "tiny"));
  EXPECT_FALSE(fs::exists(root / "cache" / "ingest"));
  // --cache-dir beats the environment.
  const auto flag = root / "flag_cache";
  EXPECT_EQ(run_cli("ingest -c " + cfg.string() + " --cache-dir " + flag.string(),
                    "KEYNODE_CACHE_DIR=" + alt.string()),
            0);
  EXPECT_TRUE(fs::exists(flag / "ingest" / "tiny"));
}
