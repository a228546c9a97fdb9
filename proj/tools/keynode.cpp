// keynode: command-line driver for the key-node identification pipeline.

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "keynode/keynode.hpp"

namespace fs = std::filesystem;
using namespace keynode;

namespace {

struct CommonFlags {
  std::string config;
  std::string cache_dir;
  std::string output_dir;
  std::optional<std::size_t> runs;
  std::optional<std::size_t> trials;
  std::optional<std::uint64_t> seed;
  std::string network;
};

void add_common(CLI::App* cmd, CommonFlags& f, bool config_required = true) {
  auto* opt = cmd->add_option("-c,--config", f.config, "run configuration (JSON)");
  if (config_required) opt->required();
  cmd->add_option("--cache-dir", f.cache_dir, "cache directory (overrides config and KEYNODE_CACHE_DIR)");
  cmd->add_option("--output-dir", f.output_dir, "output directory (overrides config)");
  cmd->add_option("--runs", f.runs, "Monte Carlo runs per (node, threshold)");
  cmd->add_option("--trials", f.trials, "evaluation trials");
  cmd->add_option("--seed", f.seed, "master seed");
}

RunConfig load(const CommonFlags& f) {
  io::json overrides = io::json::object();
  if (const char* env = std::getenv("KEYNODE_CACHE_DIR"); env && *env)
    overrides["cache_dir"] = fs::absolute(env).string();
  if (!f.cache_dir.empty()) overrides["cache_dir"] = fs::absolute(f.cache_dir).string();
  if (!f.output_dir.empty()) overrides["output_dir"] = fs::absolute(f.output_dir).string();
  if (f.runs) overrides["runs"] = *f.runs;
  if (f.trials) overrides["trials"] = *f.trials;
  if (f.seed) overrides["master_seed"] = *f.seed;
  return load_config(f.config, overrides);
}

void print_artifacts(const StageRecord& rec) {
  for (const auto& a : rec.artifacts) std::cout << (rec.dir / a.name).string() << '\n';
}

/// Runs `body` for the named network or for every network in the config.
template <typename Body>
void for_networks(const RunConfig& cfg, const std::string& only, Body&& body) {
  if (!only.empty()) {
    body(cfg.network(only));
    return;
  }
  for (const auto& n : cfg.networks) body(n);
}

void print_stats(const GraphStats& st, const std::string& name) {
  io::json j = {{"network", name},
                {"nodes", st.nodes},
                {"edges", st.edges},
                {"avg_degree", st.avg_degree},
                {"clustering_coefficient", st.clustering_coefficient},
                {"transitivity", st.transitivity},
                {"components", st.components},
                {"diameter_largest_component", st.diameter ? io::json(*st.diameter) : io::json(nullptr)}};
  std::cout << j.dump(2) << '\n';
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Identify influential nodes: IC simulation, Smart Bins labels, centrality features, classifiers"};
  app.require_subcommand(1);
  unsigned threads = 0;
  bool log_json = false;
  app.add_option("--threads", threads, "worker threads (default: available cores)");
  app.add_flag("--log-json", log_json, "progress as JSON lines on stderr");

  CommonFlags f;
  std::map<std::string, CLI::App*> cmds;
  auto add = [&](const std::string& name, const std::string& help, bool network_flag = true) {
    auto* cmd = app.add_subcommand(name, help);
    add_common(cmd, f, name != "stats");
    if (network_flag) cmd->add_option("--network", f.network, "restrict to one network");
    cmds[name] = cmd;
    return cmd;
  };
  add("ingest", "load edge lists or generate synthetic networks; cache graph + stats");
  auto* stats = add("stats", "print topology statistics");
  std::string stats_input;
  bool stats_directed = false, stats_header = false;
  stats->add_option("--input", stats_input, "edge list to summarize directly");
  stats->add_flag("--directed", stats_directed, "treat --input as directed");
  stats->add_flag("--header", stats_header, "skip the first line of --input");
  add("simulate", "Monte Carlo Independent Cascade per (node, threshold)");
  add("label", "discretize influence into classes per (task, threshold, k, method)");
  add("featurize", "centralities + threshold feature matrix");
  add("train", "train every configured model on each network");
  auto* evaluate = add("evaluate", "within-network evaluation, or cross-network with --train/--test");
  std::string train_net, test_net;
  evaluate->add_option("--train", train_net, "train network (cross-network mode)");
  evaluate->add_option("--test", test_net, "test network (cross-network mode)");
  add("generalize", "cross-network evaluation for the configured pairs (all ordered pairs if none)", false);
  add("compare-bins", "Smart Bins vs fixed top-percent bins on identical splits");
  add("importance", "Shapley feature importance for the configured model", false);
  add("pipeline", "run every stage with caching and write the manifest", false);
  add("emit-plots", "per-figure CSVs from cached results", false);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (threads) set_thread_count(threads);
    const Logger logger(log_json);

    if (cmds["stats"]->parsed() && f.config.empty()) {
      if (stats_input.empty()) throw ConfigError("stats needs --input or --config");
      EdgeListOptions o;
      o.directed = stats_directed;
      o.header = stats_header;
      print_stats(compute_stats(load_edge_list(stats_input, o), true), fs::path(stats_input).stem().string());
      return kExitOk;
    }

    const RunConfig cfg = load(f);
    const bool pipeline_mode = cmds["pipeline"]->parsed();
    Pipeline p(cfg, logger, pipeline_mode);

    if (pipeline_mode) {
      const auto manifest = p.run_all();
      std::cout << (cfg.output_dir / "manifest.json").string() << '\n';
      return kExitOk;
    }
    if (cmds["ingest"]->parsed()) for_networks(cfg, f.network, [&](const NetworkConfig& n) { print_artifacts(p.ingest(n)); });
    if (cmds["stats"]->parsed())
      for_networks(cfg, f.network, [&](const NetworkConfig& n) {
        std::cout << io::read_file(p.ingest(n).path("stats.json"));
      });
    if (cmds["simulate"]->parsed()) for_networks(cfg, f.network, [&](const NetworkConfig& n) { print_artifacts(p.simulate(n)); });
    if (cmds["label"]->parsed()) for_networks(cfg, f.network, [&](const NetworkConfig& n) { print_artifacts(p.label(n)); });
    if (cmds["featurize"]->parsed()) for_networks(cfg, f.network, [&](const NetworkConfig& n) { print_artifacts(p.featurize(n)); });
    if (cmds["train"]->parsed()) for_networks(cfg, f.network, [&](const NetworkConfig& n) { print_artifacts(p.train_models(n)); });
    if (cmds["evaluate"]->parsed()) {
      if (train_net.empty() != test_net.empty()) throw ConfigError("--train and --test must be given together");
      if (!train_net.empty())
        print_artifacts(p.generalize(cfg.network(train_net), cfg.network(test_net)));
      else
        for_networks(cfg, f.network, [&](const NetworkConfig& n) { print_artifacts(p.evaluate(n)); });
    }
    if (cmds["generalize"]->parsed()) {
      auto pairs = cfg.cross;
      if (pairs.empty())
        for (const auto& a : cfg.networks)
          for (const auto& b : cfg.networks)
            if (a.name != b.name) pairs.emplace_back(a.name, b.name);
      for (const auto& [a, b] : pairs) print_artifacts(p.generalize(cfg.network(a), cfg.network(b)));
    }
    if (cmds["compare-bins"]->parsed())
      for_networks(cfg, f.network, [&](const NetworkConfig& n) { print_artifacts(p.compare_bins(n)); });
    if (cmds["importance"]->parsed()) print_artifacts(p.importance());
    if (cmds["emit-plots"]->parsed()) {
      const auto rec = p.emit_plots();
      for (const auto& a : rec.artifacts) {
        const auto dest = cfg.output_dir / "plots" / a.name;
        io::write_file(dest, io::read_file(rec.path(a.name)));
        std::cout << dest.string() << '\n';
      }
    }
    return kExitOk;
  } catch (const ConfigError& e) {
    std::cerr << "configuration error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const DependencyError& e) {
    std::cerr << "dependency error: " << e.what() << '\n';
    return kExitDependency;
  } catch (const StageError& e) {
    std::cerr << e.what() << '\n';
    return kExitStage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitStage;
  }
}
