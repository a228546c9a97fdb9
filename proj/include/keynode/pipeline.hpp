#pragma once

#include <chrono>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "keynode/centrality.hpp"
#include "keynode/common.hpp"
#include "keynode/diffusion.hpp"
#include "keynode/evaluation.hpp"
#include "keynode/features.hpp"
#include "keynode/graph.hpp"
#include "keynode/importance.hpp"
#include "keynode/io.hpp"
#include "keynode/labeling.hpp"
#include "keynode/models.hpp"

namespace keynode {

class ConfigError : public Error { using Error::Error; };
class DependencyError : public Error { using Error::Error; };

/// A stage failed; `stage()` names it.
class StageError : public Error {
 public:
  StageError(std::string stage, const std::string& what)
      : Error("stage '" + stage + "' failed: " + what), stage_(std::move(stage)) {}
  const std::string& stage() const noexcept { return stage_; }

 private:
  std::string stage_;
};

enum ExitCode : int { kExitOk = 0, kExitConfig = 1, kExitStage = 2, kExitDependency = 3 };

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

struct SyntheticSource {
  SyntheticModel model = SyntheticModel::barabasi_albert;
  std::size_t n = 0;
  double param = 0.0;
  std::uint64_t seed = 0;
  bool directed = false;
  double reciprocity = 0.0;
  bool transpose = false;  // reverse every arc after generation
};

struct NetworkConfig {
  std::string name;
  std::optional<std::filesystem::path> path;
  std::optional<SyntheticSource> synthetic;
  bool directed = false;
  bool header = false;
  NetworkFamily family = NetworkFamily::custom;
  ThresholdSet thresholds;
};

struct NamedModel {
  std::string name;
  ModelSpec spec;
};

struct ImportanceConfig {
  bool enabled = true;
  std::string network;  // empty: first social network, else the first network
  TaskId task = TaskId::influence_range;
  std::size_t k = 2;
  std::size_t model = 0;
  ImportanceOptions options;
};

struct CompareBinsConfig {
  bool enabled = true;
  std::size_t smart_k = 2;
};

struct RunConfig {
  std::vector<NetworkConfig> networks;
  std::size_t runs = kDefaultRuns;
  std::vector<std::size_t> k_list{2, 3, 4, 5};
  std::size_t k_max = kDefaultMaxK;
  std::size_t min_bin_size = kDefaultMinBinSize;
  double top_fraction = kDefaultTopFraction;
  std::vector<BinMethod> binning{BinMethod::smart_kmeans};
  std::vector<TaskId> tasks{kAllTasks.begin(), kAllTasks.end()};
  std::vector<NamedModel> models;
  std::size_t trials = 5;
  double test_fraction = 0.2;
  ScalerMode scaler = ScalerMode::train_split;
  bool pooled_labels = false;
  std::uint64_t master_seed = 0;
  std::filesystem::path output_dir;
  std::filesystem::path cache_dir;
  std::vector<std::pair<std::string, std::string>> cross;
  CompareBinsConfig compare_bins;
  ImportanceConfig importance;

  const NetworkConfig& network(std::string_view name) const {
    for (const auto& n : networks)
      if (n.name == name) return n;
    throw ConfigError("no network named '" + std::string(name) + "' in the configuration");
  }
  const NamedModel& model(std::string_view name) const {
    for (const auto& m : models)
      if (m.name == name) return m;
    throw ConfigError("no model named '" + std::string(name) + "' in the configuration");
  }
};

namespace config_detail {

inline void check_keys(const io::json& j, std::initializer_list<std::string_view> allowed,
                       const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + " must be a JSON object");
  for (const auto& [key, value] : j.items()) {
    bool ok = false;
    for (auto a : allowed) ok = ok || a == key;
    if (!ok) throw ConfigError("unknown key '" + key + "' in " + where);
  }
}

template <typename T>
T get(const io::json& j, const char* key, T fallback, const std::string& where) {
  if (!j.contains(key)) return fallback;
  if constexpr (std::is_unsigned_v<T> && !std::is_same_v<T, bool>)
    if (j.at(key).is_number_integer() && j.at(key).get<std::int64_t>() < 0)
      throw ConfigError("field '" + std::string(key) + "' in " + where + " must be non-negative");
  try {
    return j.at(key).get<T>();
  } catch (const io::json::exception&) {
    throw ConfigError("field '" + std::string(key) + "' in " + where + " has the wrong type");
  }
}

template <typename F>
auto wrap(F&& f, const std::string& where) {
  try {
    return f();
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    throw ConfigError(where + ": " + e.what());
  }
}

}  // namespace config_detail

/// Parses a run configuration. Relative paths resolve against `base_dir`.
inline RunConfig parse_config(const io::json& j, const std::filesystem::path& base_dir = {}) {
  using namespace config_detail;
  check_keys(j, {"networks", "runs", "k", "k_max", "min_bin_size", "top_fraction", "binning", "tasks", "models",
                 "trials", "test_fraction", "scaler", "pooled_labels", "master_seed", "output_dir", "cache_dir",
                 "cross", "compare_bins", "importance"},
             "config");
  RunConfig c;
  if (!j.contains("master_seed") || !j.at("master_seed").is_number_integer() || j.at("master_seed").get<std::int64_t>() < 0)
    throw ConfigError("master_seed is mandatory and must be a non-negative integer");
  c.master_seed = j.at("master_seed").get<std::uint64_t>();
  c.runs = get<std::size_t>(j, "runs", c.runs, "config");
  if (c.runs == 0) throw ConfigError("runs must be >= 1");
  c.k_list = get<std::vector<std::size_t>>(j, "k", c.k_list, "config");
  c.k_max = get<std::size_t>(j, "k_max", c.k_max, "config");
  if (c.k_list.empty()) throw ConfigError("k list is empty");
  for (auto k : c.k_list)
    if (k < 2 || k > c.k_max) throw ConfigError("every k must lie in [2, k_max]");
  c.min_bin_size = get<std::size_t>(j, "min_bin_size", c.min_bin_size, "config");
  c.top_fraction = get<double>(j, "top_fraction", c.top_fraction, "config");
  if (!(c.top_fraction > 0.0 && c.top_fraction < 1.0)) throw ConfigError("top_fraction must lie in (0, 1)");
  if (j.contains("binning")) {
    c.binning.clear();
    for (const auto& b : get<std::vector<std::string>>(j, "binning", {}, "config"))
      c.binning.push_back(wrap([&] { return parse_bin_method(b); }, "binning"));
  }
  if (j.contains("tasks")) {
    c.tasks.clear();
    for (const auto& t : get<std::vector<std::string>>(j, "tasks", {}, "config"))
      c.tasks.push_back(wrap([&] { return parse_task(t); }, "tasks"));
  }
  if (c.tasks.empty() || c.binning.empty()) throw ConfigError("tasks and binning must be non-empty");
  if (j.contains("models")) {
    for (const auto& m : j.at("models")) {
      check_keys(m, {"name", "kind", "hyperparams", "seed"}, "models[]");
      NamedModel nm;
      nm.spec = wrap([&] { return ModelSpec::from_json(m); }, "models[]");
      nm.name = get<std::string>(m, "name", std::string(to_string(nm.spec.kind)), "models[]");
      c.models.push_back(std::move(nm));
    }
  } else {
    c.models.push_back({"gbm", ModelSpec{ModelKind::gbm, {}, 0}});
  }
  if (c.models.empty()) throw ConfigError("at least one model is required");
  std::set<std::string> model_names;
  for (const auto& m : c.models)
    if (!model_names.insert(m.name).second) throw ConfigError("duplicate model name '" + m.name + "'");
  c.trials = get<std::size_t>(j, "trials", c.trials, "config");
  if (c.trials == 0) throw ConfigError("trials must be >= 1");
  c.test_fraction = get<double>(j, "test_fraction", c.test_fraction, "config");
  if (!(c.test_fraction > 0.0 && c.test_fraction < 1.0)) throw ConfigError("test_fraction must lie in (0, 1)");
  c.scaler = wrap([&] { return parse_scaler_mode(get<std::string>(j, "scaler", "train_split", "config")); },
                  "scaler");
  c.pooled_labels = get<bool>(j, "pooled_labels", false, "config");

  auto resolve = [&](const std::filesystem::path& p) { return p.is_absolute() ? p : base_dir / p; };
  c.output_dir = resolve(get<std::string>(j, "output_dir", "keynode-out", "config"));
  c.cache_dir = resolve(get<std::string>(j, "cache_dir", "keynode-cache", "config"));

  if (!j.contains("networks") || !j.at("networks").is_array() || j.at("networks").empty())
    throw ConfigError("config needs a non-empty 'networks' array");
  std::set<std::string> names;
  for (const auto& nj : j.at("networks")) {
    check_keys(nj, {"name", "path", "synthetic", "directed", "header", "family", "thresholds"}, "networks[]");
    NetworkConfig n;
    n.name = get<std::string>(nj, "name", "", "networks[]");
    if (n.name.empty() || n.name.find_first_of("/\\ ") != std::string::npos)
      throw ConfigError("network names must be non-empty and contain no slashes or spaces");
    if (!names.insert(n.name).second) throw ConfigError("duplicate network name '" + n.name + "'");
    n.directed = get<bool>(nj, "directed", false, "network '" + n.name + "'");
    n.header = get<bool>(nj, "header", false, "network '" + n.name + "'");
    n.family = wrap([&] { return parse_network_family(get<std::string>(nj, "family", "custom", "networks[]")); },
                    "network '" + n.name + "'");
    if (nj.contains("path") == nj.contains("synthetic"))
      throw ConfigError("network '" + n.name + "' needs exactly one of 'path' or 'synthetic'");
    if (nj.contains("path")) {
      n.path = resolve(get<std::string>(nj, "path", "", "networks[]"));
      if (!std::filesystem::exists(*n.path))
        throw ConfigError("network '" + n.name + "': file " + n.path->string() + " does not exist");
    } else {
      const auto& s = nj.at("synthetic");
      check_keys(s, {"model", "n", "param", "seed", "directed", "reciprocity", "transpose"}, "synthetic");
      SyntheticSource src;
      src.model = wrap([&] { return parse_synthetic_model(get<std::string>(s, "model", "", "synthetic")); },
                       "synthetic");
      src.n = get<std::size_t>(s, "n", 0, "synthetic");
      src.param = get<double>(s, "param", 0.0, "synthetic");
      src.seed = get<std::uint64_t>(s, "seed", 0, "synthetic");
      src.directed = get<bool>(s, "directed", false, "synthetic");
      src.reciprocity = get<double>(s, "reciprocity", 0.0, "synthetic");
      src.transpose = get<bool>(s, "transpose", false, "synthetic");
      if (src.n < 2) throw ConfigError("synthetic network '" + n.name + "' needs n >= 2");
      n.directed = src.directed;
      n.synthetic = src;
    }
    if (nj.contains("thresholds")) {
      n.thresholds.values = get<std::vector<double>>(nj, "thresholds", {}, "networks[]");
      n.thresholds.family = n.family;
      if (n.thresholds.values.empty()) throw ConfigError("network '" + n.name + "': empty threshold list");
      for (double p : n.thresholds.values)
        if (!(p >= 0.0 && p <= 1.0)) throw ConfigError("network '" + n.name + "': threshold outside [0, 1]");
    } else if (n.family == NetworkFamily::custom) {
      throw ConfigError("network '" + n.name + "' has family 'custom' and therefore needs explicit thresholds");
    } else {
      n.thresholds = ThresholdSet::defaults_for(n.family);
    }
    c.networks.push_back(std::move(n));
  }

  if (j.contains("cross")) {
    for (const auto& p : j.at("cross")) {
      check_keys(p, {"train", "test"}, "cross[]");
      c.cross.emplace_back(get<std::string>(p, "train", "", "cross[]"), get<std::string>(p, "test", "", "cross[]"));
      (void)c.network(c.cross.back().first);
      (void)c.network(c.cross.back().second);
    }
  }
  if (j.contains("compare_bins")) {
    const auto& cb = j.at("compare_bins");
    check_keys(cb, {"enabled", "smart_k"}, "compare_bins");
    c.compare_bins.enabled = get<bool>(cb, "enabled", true, "compare_bins");
    c.compare_bins.smart_k = get<std::size_t>(cb, "smart_k", 2, "compare_bins");
  }
  if (j.contains("importance")) {
    const auto& im = j.at("importance");
    check_keys(im, {"enabled", "network", "task", "k", "model", "sample_size", "permutations", "background_size"},
               "importance");
    auto& ic = c.importance;
    ic.enabled = get<bool>(im, "enabled", true, "importance");
    ic.network = get<std::string>(im, "network", "", "importance");
    ic.task = wrap([&] { return parse_task(get<std::string>(im, "task", "influence_range", "importance")); },
                   "importance");
    ic.k = get<std::size_t>(im, "k", 2, "importance");
    ic.model = get<std::size_t>(im, "model", 0, "importance");
    ic.options.sample_size = get<std::size_t>(im, "sample_size", ic.options.sample_size, "importance");
    ic.options.permutations = get<std::size_t>(im, "permutations", ic.options.permutations, "importance");
    ic.options.background_size = get<std::size_t>(im, "background_size", ic.options.background_size, "importance");
  }
  if (c.importance.enabled) {
    auto& ic = c.importance;
    if (ic.network.empty()) {
      ic.network = c.networks.front().name;
      for (const auto& n : c.networks)
        if (n.family == NetworkFamily::social) {
          ic.network = n.name;
          break;
        }
    }
    (void)c.network(ic.network);
    if (std::find(c.k_list.begin(), c.k_list.end(), ic.k) == c.k_list.end())
      throw ConfigError("importance k must appear in the k list");
    if (ic.model >= c.models.size()) throw ConfigError("importance model index out of range");
    if (std::find(c.tasks.begin(), c.tasks.end(), ic.task) == c.tasks.end())
      throw ConfigError("importance task must appear in the task list");
    if (std::find(c.binning.begin(), c.binning.end(), BinMethod::smart_kmeans) == c.binning.end())
      throw ConfigError("importance needs smart_kmeans in the binning list");
    if (ic.options.permutations == 0 || ic.options.sample_size == 0 || ic.options.background_size == 0)
      throw ConfigError("importance sizes must be >= 1");
    ic.options.seed = stable_hash({c.master_seed, 0x696d70ULL});
  }
  return c;
}

inline RunConfig load_config(const std::filesystem::path& path, const io::json& overrides = io::json::object()) {
  io::json j;
  try {
    j = io::json::parse(io::read_file(path));
  } catch (const io::json::parse_error& e) {
    throw ConfigError("invalid JSON in " + path.string() + ": " + e.what());
  } catch (const IoError& e) {
    throw ConfigError(e.what());
  }
  if (!j.is_object()) throw ConfigError("config root must be a JSON object");
  for (const auto& [k, v] : overrides.items()) j[k] = v;
  return parse_config(j, path.parent_path());
}

// ---------------------------------------------------------------------------
// Logging
// ---------------------------------------------------------------------------

/// Progress to stderr, either as text or as JSON lines.
class Logger {
 public:
  explicit Logger(bool json_lines = false, std::ostream* out = &std::cerr) : json_(json_lines), out_(out) {}

  void event(const std::string& kind, io::json fields) const {
    if (!out_) return;
    if (json_) {
      fields["event"] = kind;
      *out_ << fields.dump() << '\n';
      return;
    }
    std::string line = "[" + kind + "]";
    for (const auto& [k, v] : fields.items()) line += " " + k + "=" + (v.is_string() ? v.get<std::string>() : v.dump());
    *out_ << line << '\n';
  }

 private:
  bool json_;
  std::ostream* out_;
};

// ---------------------------------------------------------------------------
// Stage cache
// ---------------------------------------------------------------------------

inline const std::vector<std::string>& stage_names() {
  static const std::vector<std::string> names{"ingest",   "simulate", "label",        "featurize",  "train",
                                              "evaluate", "generalize", "compare-bins", "importance", "emit-plots"};
  return names;
}

/// Bump when a stage's output format or semantics change.
inline int stage_code_version(std::string_view stage) {
  if (stage == "ingest") return 1;
  if (stage == "simulate") return 1;
  if (stage == "label") return 1;
  if (stage == "featurize") return 1;
  if (stage == "train") return 1;
  if (stage == "evaluate") return 1;
  if (stage == "generalize") return 1;
  if (stage == "compare-bins") return 1;
  if (stage == "importance") return 1;
  if (stage == "emit-plots") return 1;
  throw ConfigError("unknown stage '" + std::string(stage) + "'");
}

struct ArtifactRef {
  std::string name;      // path relative to the stage directory
  std::string checksum;  // fnv1a of the file bytes
};

struct StageRecord {
  std::string stage;
  std::string scope;
  std::string key;
  std::vector<ArtifactRef> artifacts;
  std::string checksum;  // over artifact checksums
  std::filesystem::path dir;
  bool cache_hit = false;

  std::filesystem::path path(std::string_view artifact) const { return dir / artifact; }

  io::json to_json() const {
    io::json arts = io::json::array();
    for (const auto& a : artifacts) arts.push_back({{"name", a.name}, {"checksum", a.checksum}});
    return {{"stage", stage}, {"scope", scope}, {"key", key}, {"artifacts", arts}, {"checksum", checksum}};
  }
};

// ---------------------------------------------------------------------------
// Pipeline
// ---------------------------------------------------------------------------

class Pipeline {
 public:
  /// `cascade` = true runs missing upstream stages; false requires them to
  /// be cached already (single-stage mode).
  Pipeline(RunConfig config, Logger logger = Logger{}, bool cascade = true)
      : cfg_(std::move(config)), log_(logger), cascade_(cascade) {}

  const RunConfig& config() const noexcept { return cfg_; }

  StageRecord ingest(const NetworkConfig& n, bool execute = true) {
    io::json key = {{"directed", n.directed}, {"header", n.header}};
    if (n.path) {
      key["source_checksum"] = io::file_checksum(*n.path);
    } else {
      const auto& s = *n.synthetic;
      key["synthetic"] = {{"model", static_cast<int>(s.model)}, {"n", s.n},
                          {"param", s.param},                   {"seed", s.seed},
                          {"directed", s.directed},            {"reciprocity", s.reciprocity},
                          {"transpose", s.transpose}};
    }
    return stage("ingest", n.name, key, execute, [&](const std::filesystem::path& dir) {
      const Graph g = build_graph(n);
      save_graph_binary(g, dir / "graph.bin");
      const auto st = compute_stats(g, true);
      io::json stats = {{"network", n.name},
                        {"nodes", st.nodes},
                        {"edges", st.edges},
                        {"directed", g.directed()},
                        {"avg_degree", st.avg_degree},
                        {"clustering_coefficient", st.clustering_coefficient},
                        {"transitivity", st.transitivity},
                        {"components", st.components},
                        {"diameter_largest_component", st.diameter ? io::json(*st.diameter) : io::json(nullptr)}};
      io::write_json(dir / "stats.json", stats);
      return std::vector<std::string>{"graph.bin", "stats.json"};
    });
  }

  StageRecord simulate(const NetworkConfig& n, bool execute = true) {
    const auto up = ingest(n, cascade_);
    const io::json key = {{"graph", up.checksum},
                          {"thresholds", n.thresholds.values},
                          {"runs", cfg_.runs},
                          {"master_seed", cfg_.master_seed}};
    return stage("simulate", n.name, key, execute, [&](const std::filesystem::path& dir) {
      const Graph g = load_graph_binary(up.path("graph.bin"));
      std::size_t last_decile = 0;
      const auto records = simulate_all(g, n.thresholds, cfg_.runs, cfg_.master_seed,
                                        [&](std::size_t done, std::size_t total) {
                                          const std::size_t decile = done * 10 / std::max<std::size_t>(1, total);
                                          if (decile > last_decile) {
                                            last_decile = decile;
                                            log_.event("progress", {{"stage", "simulate"}, {"network", n.name},
                                                                    {"done", done}, {"total", total}});
                                          }
                                        });
      save_simulation(records, dir / "simulation.csv",
                      simulation_sidecar(g, n.thresholds, cfg_.runs, cfg_.master_seed));
      return std::vector<std::string>{"simulation.csv", "simulation.json"};
    });
  }

  StageRecord label(const NetworkConfig& n, bool execute = true) {
    const auto up = simulate(n, cascade_);
    io::json methods = io::json::array();
    for (auto m : cfg_.binning) methods.push_back(to_string(m));
    io::json tasks = io::json::array();
    for (auto t : cfg_.tasks) tasks.push_back(to_string(t));
    const io::json key = {{"simulation", up.checksum}, {"k", cfg_.k_list},
                          {"methods", methods},         {"tasks", tasks},
                          {"top_fraction", cfg_.top_fraction}, {"pooled", cfg_.pooled_labels},
                          {"min_bin_size", cfg_.min_bin_size}, {"master_seed", cfg_.master_seed}};
    return stage("label", n.name, key, execute, [&](const std::filesystem::path& dir) {
      const auto records = load_simulation(up.path("simulation.csv"));
      std::vector<NodeId> all_nodes;
      std::vector<std::string> files;
      io::json rows = io::json::object();
      io::json warnings = io::json::array();
      for (auto task : cfg_.tasks) {
        for (auto method : cfg_.binning) {
          for (std::size_t k : ks_for(method)) {
            const BinSpec spec = bin_spec(method, k);
            const auto tl = label_task(records, task, spec, cfg_.master_seed, cfg_.pooled_labels);
            rows[label_key(task, method, k)] = tl.row_labels;
            for (std::size_t gi = 0; gi < tl.groups.size(); ++gi) {
              const auto& ls = tl.groups[gi];
              std::vector<NodeId> nodes;
              for (const auto& r : records)
                if (tl.pooled || r.threshold == tl.group_thresholds[gi]) nodes.push_back(r.node);
              const std::string rel = "labels/" + std::string(to_string(task)) + "/" +
                                      std::string(to_string(method)) + "_k" + std::to_string(k) + "_t" +
                                      io::format_double(tl.group_thresholds[gi]) + ".csv";
              save_labels(ls, nodes, dir / rel);
              files.push_back(rel);
              files.push_back(std::filesystem::path(rel).replace_extension(".json").string());
              for (const auto& w : ls.warnings) warnings.push_back(rel + ": " + w);
            }
            if (method == BinMethod::smart_kmeans || method == BinMethod::smart_dp_exact) {
              for (std::size_t gi = 0; gi < tl.groups.size(); ++gi) {
                std::vector<double> values;
                for (const auto& r : records)
                  if (tl.pooled || r.threshold == tl.group_thresholds[gi]) values.push_back(task_value(r, task));
                if (values.size() >= 2 * cfg_.min_bin_size && select_k(values, k, cfg_.min_bin_size) < k)
                  warnings.push_back(std::string(to_string(task)) + " k=" + std::to_string(k) + " threshold " +
                                     io::format_double(tl.group_thresholds[gi]) +
                                     ": below the select_k floor (some bin has fewer than min_bin_size members)");
              }
            }
          }
        }
      }
      io::write_json(dir / "row_labels.json", rows);
      io::write_json(dir / "warnings.json", warnings);
      files.push_back("row_labels.json");
      files.push_back("warnings.json");
      for (const auto& w : warnings) log_.event("warning", {{"stage", "label"}, {"network", n.name}, {"message", w}});
      return files;
    });
  }

  StageRecord featurize(const NetworkConfig& n, bool execute = true) {
    const auto up = ingest(n, cascade_);
    const io::json key = {{"graph", up.checksum}, {"thresholds", n.thresholds.values}};
    return stage("featurize", n.name, key, execute, [&](const std::filesystem::path& dir) {
      const Graph g = load_graph_binary(up.path("graph.bin"));
      const auto maps = compute_all_centralities(g);
      save_centralities(maps, g, dir / "centralities.csv");
      const auto fm = assemble_features(maps, n.thresholds);
      save_features(fm, dir / "features.csv");
      io::write_json(dir / "scaler_full.json", fit_standardizer(fm).to_json());
      io::json warnings = io::json::array();
      for (const auto& m : maps)
        for (const auto& w : m.warnings) warnings.push_back(std::string(to_string(m.measure)) + ": " + w);
      io::write_json(dir / "warnings.json", warnings);
      return std::vector<std::string>{"centralities.csv", "centralities.json", "features.csv", "scaler_full.json",
                                      "warnings.json"};
    });
  }

  /// One model per (task, smart method, k, model) on every sample of the
  /// network, standardized with full-network statistics.
  StageRecord train_models(const NetworkConfig& n, bool execute = true) {
    const auto lab = label(n, cascade_);
    const auto feat = featurize(n, cascade_);
    io::json models = io::json::array();
    for (const auto& m : cfg_.models) models.push_back({{"name", m.name}, {"spec", m.spec.to_json()}});
    const io::json key = {{"labels", lab.checksum}, {"features", feat.checksum}, {"models", models}};
    return stage("train", n.name, key, execute, [&](const std::filesystem::path& dir) {
      const auto rows = io::read_json(lab.path("row_labels.json"));
      const auto raw = load_features(feat.path("features.csv"));
      const auto X = fit_standardizer(raw).apply(raw);
      std::vector<std::string> files;
      io::json skipped = io::json::array();
      for (auto task : cfg_.tasks)
        for (auto method : smart_methods())
          for (std::size_t k : cfg_.k_list)
            for (const auto& m : cfg_.models) {
              const auto y = rows.at(label_key(task, method, k)).get<std::vector<int>>();
              const std::string rel = "models/" + model_file(task, method, k, m.name);
              ModelSpec spec = m.spec;
              spec.seed = stable_hash({m.spec.seed, cfg_.master_seed});
              try {
                io::write_json(dir / rel, model_to_json(train(spec, X, y)));
                files.push_back(rel);
              } catch (const TrainingError& e) {
                skipped.push_back({{"model", rel}, {"reason", e.what()}});
              }
            }
      io::write_json(dir / "skipped.json", skipped);
      files.push_back("skipped.json");
      return files;
    });
  }

  StageRecord evaluate(const NetworkConfig& n, bool execute = true) {
    const auto sim = simulate(n, cascade_);
    const auto lab = label(n, cascade_);
    const auto feat = featurize(n, cascade_);
    const io::json key = {{"simulation", sim.checksum}, {"labels", lab.checksum},    {"features", feat.checksum},
                          {"models", models_json()},    {"trials", cfg_.trials},     {"test_fraction", cfg_.test_fraction},
                          {"scaler", to_string(cfg_.scaler)}, {"master_seed", cfg_.master_seed}};
    return stage("evaluate", n.name, key, execute, [&](const std::filesystem::path& dir) {
      const auto data = load_network_data(n, sim, feat);
      const auto rows = io::read_json(lab.path("row_labels.json"));
      std::vector<EvalReport> reports;
      io::json skipped = io::json::array();
      for (auto task : cfg_.tasks)
        for (auto method : cfg_.binning)
          for (std::size_t k : ks_for(method))
            for (const auto& m : cfg_.models) {
              const auto y = rows.at(label_key(task, method, k)).get<std::vector<int>>();
              try {
                reports.push_back(within_network_eval(data, y, task, bin_spec(method, k), m.spec, eval_options()));
              } catch (const SplitError& e) {
                skipped.push_back(skip_entry(task, method, k, m.name, e.what()));
              } catch (const TrainingError& e) {
                skipped.push_back(skip_entry(task, method, k, m.name, e.what()));
              }
            }
      write_reports(dir, reports, skipped);
      return std::vector<std::string>{"reports.json", "reports.csv"};
    });
  }

  StageRecord generalize(const NetworkConfig& train_net, const NetworkConfig& test_net, bool execute = true) {
    const auto sim_a = simulate(train_net, cascade_), sim_b = simulate(test_net, cascade_);
    const auto lab_a = label(train_net, cascade_), lab_b = label(test_net, cascade_);
    const auto feat_a = featurize(train_net, cascade_), feat_b = featurize(test_net, cascade_);
    const io::json key = {{"train", {sim_a.checksum, lab_a.checksum, feat_a.checksum}},
                          {"test", {sim_b.checksum, lab_b.checksum, feat_b.checksum}},
                          {"models", models_json()},
                          {"master_seed", cfg_.master_seed}};
    return stage("generalize", train_net.name + "__" + test_net.name, key, execute,
                 [&](const std::filesystem::path& dir) {
                   const auto a = load_network_data(train_net, sim_a, feat_a);
                   const auto b = load_network_data(test_net, sim_b, feat_b);
                   const auto rows_a = io::read_json(lab_a.path("row_labels.json"));
                   const auto rows_b = io::read_json(lab_b.path("row_labels.json"));
                   std::vector<EvalReport> reports;
                   io::json skipped = io::json::array();
                   for (auto task : cfg_.tasks)
                     for (auto method : smart_methods())
                       for (std::size_t k : cfg_.k_list)
                         for (const auto& m : cfg_.models) {
                           const auto bins = bin_spec(method, k);
                           try {
                             check_k_feasible(a, task, bins, cfg_.min_bin_size);
                             check_k_feasible(b, task, bins, cfg_.min_bin_size);
                             reports.push_back(cross_network_eval(
                                 a, rows_a.at(label_key(task, method, k)).get<std::vector<int>>(), b,
                                 rows_b.at(label_key(task, method, k)).get<std::vector<int>>(), task, bins, m.spec,
                                 cfg_.master_seed));
                           } catch (const DegenerateInputError& e) {
                             skipped.push_back(skip_entry(task, method, k, m.name, e.what()));
                           } catch (const TrainingError& e) {
                             skipped.push_back(skip_entry(task, method, k, m.name, e.what()));
                           }
                         }
                   write_reports(dir, reports, skipped);
                   return std::vector<std::string>{"reports.json", "reports.csv"};
                 });
  }

  StageRecord compare_bins(const NetworkConfig& n, bool execute = true) {
    const auto sim = simulate(n, cascade_);
    const auto feat = featurize(n, cascade_);
    const io::json key = {{"simulation", sim.checksum},       {"features", feat.checksum},
                          {"model", cfg_.models.front().spec.to_json()}, {"trials", cfg_.trials},
                          {"smart_k", cfg_.compare_bins.smart_k}, {"top_fraction", cfg_.top_fraction},
                          {"test_fraction", cfg_.test_fraction},  {"scaler", to_string(cfg_.scaler)},
                          {"pooled", cfg_.pooled_labels},         {"master_seed", cfg_.master_seed}};
    return stage("compare-bins", n.name, key, execute, [&](const std::filesystem::path& dir) {
      const auto data = load_network_data(n, sim, feat);
      io::json out = io::json::array();
      std::string csv = "network,task,method,trial,f1\n";
      for (auto task : cfg_.tasks) {
        const auto cmp = binning_comparison(data, task, cfg_.models.front().spec, eval_options(),
                                            cfg_.compare_bins.smart_k, cfg_.top_fraction);
        out.push_back(cmp.to_json());
        for (const auto* arm : {&cmp.smart, &cmp.fixed})
          for (std::size_t t = 0; t < arm->trial_f1.size(); ++t)
            csv += n.name + "," + std::string(to_string(task)) + "," + std::string(to_string(arm->bins.method)) +
                   "," + std::to_string(t) + "," + io::format_double(arm->trial_f1[t]) + "\n";
      }
      io::write_json(dir / "comparison.json", out);
      io::write_file(dir / "comparison.csv", csv);
      return std::vector<std::string>{"comparison.json", "comparison.csv"};
    });
  }

  StageRecord importance(bool execute = true) {
    const auto& ic = cfg_.importance;
    if (!ic.enabled) throw ConfigError("importance is disabled in the configuration");
    const auto& n = cfg_.network(ic.network);
    const auto trained = train_models(n, cascade_);
    const auto feat = featurize(n, cascade_);
    const auto& m = cfg_.models[ic.model];
    const std::string model_rel = "models/" + model_file(ic.task, BinMethod::smart_kmeans, ic.k, m.name);
    const io::json key = {{"models", trained.checksum},
                          {"features", feat.checksum},
                          {"model", model_rel},
                          {"sample_size", ic.options.sample_size},
                          {"permutations", ic.options.permutations},
                          {"background_size", ic.options.background_size},
                          {"seed", ic.options.seed}};
    return stage("importance", n.name, key, execute, [&](const std::filesystem::path& dir) {
      if (!std::filesystem::exists(trained.path(model_rel)))
        throw DependencyError("model " + model_rel + " was not trained (see train/skipped.json)");
      const auto model = model_from_json(io::read_json(trained.path(model_rel)));
      const auto raw = load_features(feat.path("features.csv"));
      const auto X = fit_standardizer(raw).apply(raw);
      auto options = ic.options;
      options.sample_size = std::min(options.sample_size, X.rows);
      auto rep = importance_report(model, X, options);
      io::json j = rep.to_json();
      j["network"] = n.name;
      j["task"] = to_string(ic.task);
      j["k"] = ic.k;
      j["model"] = m.name;
      j["target"] = "probability of the predicted class";
      io::write_json(dir / "importance.json", j);
      io::write_file(dir / "importance.csv", rep.ranked_csv());
      return std::vector<std::string>{"importance.json", "importance.csv"};
    });
  }

  /// Per-figure CSVs built from every evaluation artifact enabled in the
  /// configuration.
  StageRecord emit_plots(bool execute = true) {
    std::vector<std::pair<std::string, StageRecord>> evals, gens, cmps;
    for (const auto& n : cfg_.networks) evals.emplace_back(n.name, evaluate(n, cascade_));
    for (const auto& [a, b] : cfg_.cross) gens.emplace_back(a + "__" + b, generalize(cfg_.network(a), cfg_.network(b), cascade_));
    if (cfg_.compare_bins.enabled)
      for (const auto& n : cfg_.networks) cmps.emplace_back(n.name, compare_bins(n, cascade_));
    std::optional<StageRecord> imp;
    if (cfg_.importance.enabled) imp = importance(cascade_);
    io::json key = io::json::array();
    for (const auto* group : {&evals, &gens, &cmps})
      for (const auto& [scope, rec] : *group) key.push_back({rec.stage, scope, rec.checksum});
    if (imp) key.push_back({"importance", imp->checksum});
    return stage("emit-plots", "all", io::json{{"inputs", key}}, execute, [&](const std::filesystem::path& dir) {
      std::string perf = "network,task,method,k,model,f1_mean,f1_std\n";
      for (const auto& [scope, rec] : evals) {
        const auto doc = io::read_json(rec.path("reports.json"));
        for (const auto& r : doc.at("reports"))
          perf += scope + "," + r.at("task").get<std::string>() + "," + r.at("bin_method").get<std::string>() + "," +
                  std::to_string(r.at("k").get<std::size_t>()) + "," + r.at("model").at("kind").get<std::string>() +
                  "," + io::format_double(r.at("f1_macro_mean").get<double>()) + "," +
                  io::format_double(r.at("f1_macro_std").get<double>()) + "\n";
      }
      std::string gen = "train,test,task,method,k,model,f1\n";
      for (const auto& [scope, rec] : gens) {
        const auto doc = io::read_json(rec.path("reports.json"));
        for (const auto& r : doc.at("reports"))
          gen += r.at("train_network").get<std::string>() + "," + r.at("test_network").get<std::string>() + "," +
                 r.at("task").get<std::string>() + "," + r.at("bin_method").get<std::string>() + "," +
                 std::to_string(r.at("k").get<std::size_t>()) + "," + r.at("model").at("kind").get<std::string>() +
                 "," + io::format_double(r.at("f1_macro_mean").get<double>()) + "\n";
      }
      std::string bins = "network,task,method,trial,f1\n";
      for (const auto& [scope, rec] : cmps) {
        const auto text = io::read_file(rec.path("comparison.csv"));
        bins += text.substr(text.find('\n') + 1);
      }
      std::string featimp = "network,feature,mean_abs_shapley,rank\n";
      if (imp) {
        const auto j = io::read_json(imp->path("importance.json"));
        const auto names = j.at("feature_names").get<std::vector<std::string>>();
        const auto vals = j.at("mean_abs_shapley").get<std::vector<double>>();
        ImportanceReport rep;
        rep.feature_names = names;
        rep.mean_abs_shapley = vals;
        const auto order = rep.ranking();
        for (std::size_t r = 0; r < order.size(); ++r)
          featimp += j.at("network").get<std::string>() + "," + names[order[r]] + "," +
                     io::format_double(vals[order[r]]) + "," + std::to_string(r + 1) + "\n";
      }
      io::write_file(dir / "task_performance.csv", perf);
      io::write_file(dir / "generalization.csv", gen);
      io::write_file(dir / "binning_comparison.csv", bins);
      io::write_file(dir / "feature_importance.csv", featimp);
      return std::vector<std::string>{"task_performance.csv", "generalization.csv", "binning_comparison.csv",
                                      "feature_importance.csv"};
    });
  }

  /// Runs every stage in dependency order, then writes the manifest and
  /// copies the plot data into the output directory.
  io::json run_all() {
    for (const auto& n : cfg_.networks) {
      ingest(n);
      simulate(n);
      label(n);
      featurize(n);
      train_models(n);
      evaluate(n);
    }
    for (const auto& [a, b] : cfg_.cross) generalize(cfg_.network(a), cfg_.network(b));
    if (cfg_.compare_bins.enabled)
      for (const auto& n : cfg_.networks) compare_bins(n);
    if (cfg_.importance.enabled) importance();
    const auto plots = emit_plots();
    for (const auto& a : plots.artifacts)
      io::write_file(cfg_.output_dir / "plots" / a.name, io::read_file(plots.path(a.name)));
    const auto manifest = this->manifest();
    io::write_json(cfg_.output_dir / "manifest.json", manifest);
    return manifest;
  }

  /// Every stage record touched so far, in stage order then scope order.
  io::json manifest() const {
    io::json stages = io::json::array();
    for (const auto& name : stage_names())
      for (const auto& [id, rec] : records_)
        if (rec.stage == name) {
          io::json s = rec.to_json();
          s["dir"] = std::filesystem::relative(rec.dir, cfg_.cache_dir).generic_string();
          stages.push_back(s);
        }
    return {{"format_version", 1}, {"master_seed", cfg_.master_seed}, {"stages", stages}};
  }

  const std::map<std::string, StageRecord>& records() const noexcept { return records_; }

  /// Loads simulation + raw features for a network (both stages must exist).
  NetworkData network_data(const NetworkConfig& n) {
    return load_network_data(n, simulate(n, cascade_), featurize(n, cascade_));
  }

 private:
  RunConfig cfg_;
  Logger log_;
  bool cascade_;
  std::map<std::string, StageRecord> records_;

  static std::string label_key(TaskId t, BinMethod m, std::size_t k) {
    return std::string(to_string(t)) + "|" + std::string(to_string(m)) + "|" + std::to_string(k);
  }

  static std::string model_file(TaskId t, BinMethod m, std::size_t k, const std::string& model) {
    return std::string(to_string(t)) + "_" + std::string(to_string(m)) + "_k" + std::to_string(k) + "_" + model +
           ".json";
  }

  std::vector<std::size_t> ks_for(BinMethod m) const {
    if (m == BinMethod::fixed_top_percent) return {2};
    return cfg_.k_list;
  }

  std::vector<BinMethod> smart_methods() const {
    std::vector<BinMethod> out;
    for (auto m : cfg_.binning)
      if (m == BinMethod::smart_kmeans || m == BinMethod::smart_dp_exact) out.push_back(m);
    return out;
  }

  BinSpec bin_spec(BinMethod m, std::size_t k) const {
    if (m == BinMethod::fixed_top_percent) return {m, 2, cfg_.top_fraction};
    return {m, k, std::nullopt};
  }

  EvalOptions eval_options() const {
    EvalOptions o;
    o.trials = cfg_.trials;
    o.test_fraction = cfg_.test_fraction;
    o.seed = cfg_.master_seed;
    o.scaler = cfg_.scaler;
    o.pooled_labels = cfg_.pooled_labels;
    return o;
  }

  io::json models_json() const {
    io::json models = io::json::array();
    for (const auto& m : cfg_.models) models.push_back({{"name", m.name}, {"spec", m.spec.to_json()}});
    return models;
  }

  static io::json skip_entry(TaskId t, BinMethod m, std::size_t k, const std::string& model, const char* why) {
    return {{"task", to_string(t)}, {"method", to_string(m)}, {"k", k}, {"model", model}, {"reason", why}};
  }

  static void write_reports(const std::filesystem::path& dir, const std::vector<EvalReport>& reports,
                            const io::json& skipped) {
    io::json arr = io::json::array();
    for (const auto& r : reports) arr.push_back(r.to_json());
    io::write_json(dir / "reports.json", {{"reports", arr}, {"skipped", skipped}});
    io::write_file(dir / "reports.csv", format_report_csv(reports));
  }

  static Graph build_graph(const NetworkConfig& n) {
    if (n.path) {
      EdgeListOptions o;
      o.directed = n.directed;
      o.header = n.header;
      return load_edge_list(*n.path, o);
    }
    const auto& s = *n.synthetic;
    Graph g = generate_synthetic(s.model, s.n, s.param, s.seed, {s.directed, s.reciprocity});
    return s.transpose ? g.transposed() : g;
  }

  NetworkData load_network_data(const NetworkConfig& n, const StageRecord& sim, const StageRecord& feat) const {
    NetworkData d;
    d.name = n.name;
    d.family = n.family;
    d.records = load_simulation(sim.path("simulation.csv"));
    d.features = load_features(feat.path("features.csv"));
    d.check();
    return d;
  }

  using Compute = std::function<std::vector<std::string>(const std::filesystem::path&)>;

  StageRecord stage(const std::string& name, const std::string& scope, io::json key_material, bool execute,
                    const Compute& compute) {
    const std::string id = name + "/" + scope;
    if (auto it = records_.find(id); it != records_.end()) return it->second;
    key_material["stage"] = name;
    key_material["code_version"] = stage_code_version(name);
    StageRecord rec;
    rec.stage = name;
    rec.scope = scope;
    rec.key = io::hex64(io::fnv1a(key_material.dump()));
    rec.dir = cfg_.cache_dir / name / scope / rec.key;
    if (load_record(rec)) {
      rec.cache_hit = true;
      log_.event("stage", {{"stage", name}, {"scope", scope}, {"status", "cache-hit"}, {"key", rec.key}});
      return records_[id] = rec;
    }
    if (!execute)
      throw DependencyError("stage '" + name + "' for '" + scope +
                            "' has no cached result for the current configuration; run it first");
    const auto start = std::chrono::steady_clock::now();
    log_.event("stage", {{"stage", name}, {"scope", scope}, {"status", "running"}, {"key", rec.key}});
    auto tmp = rec.dir;
    tmp += ".partial";
    std::filesystem::remove_all(tmp);
    std::filesystem::create_directories(tmp);
    std::vector<std::string> files;
    try {
      files = compute(tmp);
    } catch (const DependencyError&) {
      std::filesystem::remove_all(tmp);
      throw;
    } catch (const ConfigError&) {
      std::filesystem::remove_all(tmp);
      throw;
    } catch (const StageError&) {
      std::filesystem::remove_all(tmp);
      throw;
    } catch (const std::exception& e) {
      std::filesystem::remove_all(tmp);
      throw StageError(name, scope + ": " + e.what());
    }
    std::uint64_t h = io::fnv1a(rec.key);
    for (const auto& f : files) {
      ArtifactRef a{f, io::file_checksum(tmp / f)};
      h = io::fnv1a(a.name + ":" + a.checksum, h);
      rec.artifacts.push_back(std::move(a));
    }
    rec.checksum = io::hex64(h);
    io::write_json(tmp / "record.json", rec.to_json());
    std::filesystem::remove_all(rec.dir);
    std::filesystem::create_directories(rec.dir.parent_path());
    std::filesystem::rename(tmp, rec.dir);
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    log_.event("stage", {{"stage", name}, {"scope", scope}, {"status", "done"}, {"seconds", seconds},
                         {"dir", rec.dir.string()}});
    return records_[id] = rec;
  }

  /// True when a complete, checksum-verified record exists for rec.key.
  static bool load_record(StageRecord& rec) {
    const auto path = rec.dir / "record.json";
    if (!std::filesystem::exists(path)) return false;
    try {
      const auto j = io::read_json(path);
      if (j.at("key").get<std::string>() != rec.key) return false;
      rec.artifacts.clear();
      for (const auto& a : j.at("artifacts")) {
        ArtifactRef ref{a.at("name").get<std::string>(), a.at("checksum").get<std::string>()};
        if (!std::filesystem::exists(rec.dir / ref.name) || io::file_checksum(rec.dir / ref.name) != ref.checksum)
          return false;
        rec.artifacts.push_back(std::move(ref));
      }
      rec.checksum = j.at("checksum").get<std::string>();
      return true;
    } catch (const std::exception&) {
      return false;
    }
  }
};

}  // namespace keynode
