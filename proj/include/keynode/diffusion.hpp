#pragma once

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <string_view>
#include <vector>

#include "keynode/common.hpp"
#include "keynode/graph.hpp"
#include "keynode/io.hpp"

namespace keynode {

/// Result of one cascade. The seed's own activation is iteration 0 and
/// contributes 1 to the peak accounting.
struct CascadeOutcome {
  std::size_t range = 1;       // activated nodes, seed included
  std::size_t peak = 1;        // most activations in one iteration
  std::size_t peak_time = 0;   // first iteration reaching the peak
  std::size_t iterations = 1;  // iterations with at least one activation

  friend bool operator==(const CascadeOutcome&, const CascadeOutcome&) = default;
};

struct SimulationRecord {
  NodeId node = 0;
  double threshold = 0.0;
  std::size_t runs = 0;
  double mean_range = 0.0;
  double mean_peak = 0.0;
  double mean_peak_time = 0.0;

  friend bool operator==(const SimulationRecord&, const SimulationRecord&) = default;
};

enum class NetworkFamily { citation, social, custom };

inline std::string_view to_string(NetworkFamily f) {
  switch (f) {
    case NetworkFamily::citation: return "citation";
    case NetworkFamily::social: return "social";
    case NetworkFamily::custom: return "custom";
  }
  return "custom";
}

inline NetworkFamily parse_network_family(std::string_view s) {
  if (s == "citation") return NetworkFamily::citation;
  if (s == "social") return NetworkFamily::social;
  if (s == "custom") return NetworkFamily::custom;
  throw InvalidArgument("unknown network family '" + std::string(s) + "'");
}

struct ThresholdSet {
  std::vector<double> values;
  NetworkFamily family = NetworkFamily::custom;

  static ThresholdSet citation() { return {{0.2, 0.3, 0.4}, NetworkFamily::citation}; }
  static ThresholdSet social() { return {{0.1, 0.15, 0.2}, NetworkFamily::social}; }
  static ThresholdSet defaults_for(NetworkFamily f) {
    return f == NetworkFamily::social ? social() : citation();
  }
};

inline constexpr std::size_t kDefaultRuns = 100;

/// Reusable per-worker buffers for cascade simulation. Activation marks use
/// an epoch stamp so resetting between runs is O(1).
class CascadeWorkspace {
 public:
  explicit CascadeWorkspace(std::size_t n = 0) : stamp_(n, 0) {}

  /// Synchronous Independent Cascade from `seed`: every node activated in
  /// iteration t gets one attempt, succeeding with probability p, on each
  /// out-neighbour still inactive; newly activated nodes act in t + 1.
  /// Concurrent attempts on one target are independent trials and the first
  /// success activates it.
  CascadeOutcome run_ic(const Graph& g, NodeId seed, double p, Xoshiro256& rng) {
    prepare(g.node_count());
    frontier_.assign(1, seed);
    stamp_[seed] = epoch_;
    CascadeOutcome out;
    std::size_t iteration = 0;
    while (!frontier_.empty()) {
      next_.clear();
      for (NodeId u : frontier_)
        for (NodeId v : g.out_neighbors(u)) {
          if (stamp_[v] == epoch_) continue;
          if (rng.bernoulli(p)) {
            stamp_[v] = epoch_;
            next_.push_back(v);
          }
        }
      if (next_.empty()) break;
      ++iteration;
      record(out, iteration, next_.size());
      frontier_.swap(next_);
    }
    return out;
  }

  /// Discrete-time SIR with recovery after exactly one step. States are
  /// updated synchronously at the end of each step.
  CascadeOutcome run_sir_gamma1(const Graph& g, NodeId seed, double beta, Xoshiro256& rng) {
    enum : std::uint8_t { kSusceptible = 0, kInfected = 1, kRecovered = 2, kExposed = 3 };
    state_.assign(g.node_count(), kSusceptible);
    std::vector<NodeId> infected{seed};
    state_[seed] = kInfected;
    CascadeOutcome out;
    std::size_t step = 0;
    while (!infected.empty()) {
      std::vector<NodeId> exposed;
      for (NodeId u : infected) {
        for (NodeId v : g.out_neighbors(u)) {
          if (state_[v] != kSusceptible) continue;
          if (rng.uniform() < beta || beta >= 1.0) {
            state_[v] = kExposed;
            exposed.push_back(v);
          }
        }
      }
      for (NodeId u : infected) state_[u] = kRecovered;
      for (NodeId v : exposed) state_[v] = kInfected;
      if (exposed.empty()) break;
      ++step;
      record(out, step, exposed.size());
      infected.swap(exposed);
    }
    return out;
  }

 private:
  void prepare(std::size_t n) {
    if (stamp_.size() != n) {
      stamp_.assign(n, 0);
      epoch_ = 0;
    }
    if (++epoch_ == 0) {
      std::fill(stamp_.begin(), stamp_.end(), 0);
      epoch_ = 1;
    }
  }

  static void record(CascadeOutcome& out, std::size_t iteration, std::size_t activated) {
    out.range += activated;
    out.iterations = iteration + 1;
    if (activated > out.peak) {
      out.peak = activated;
      out.peak_time = iteration;
    }
  }

  std::vector<std::uint32_t> stamp_;
  std::uint32_t epoch_ = 0;
  std::vector<NodeId> frontier_, next_;
  std::vector<std::uint8_t> state_;
};

namespace detail {
inline void check_cascade_args(const Graph& g, NodeId seed, double p) {
  if (seed >= g.node_count()) throw InvalidArgument("seed node out of range");
  if (!(p >= 0.0 && p <= 1.0)) throw InvalidArgument("activation probability must lie in [0, 1]");
}
}  // namespace detail

inline CascadeOutcome run_cascade(const Graph& g, NodeId seed_node, double p,
                                  std::uint64_t rng_seed) {
  detail::check_cascade_args(g, seed_node, p);
  CascadeWorkspace ws(g.node_count());
  Xoshiro256 rng(rng_seed);
  return ws.run_ic(g, seed_node, p, rng);
}

inline CascadeOutcome run_sir_gamma1(const Graph& g, NodeId seed_node, double beta,
                                     std::uint64_t rng_seed) {
  detail::check_cascade_args(g, seed_node, beta);
  CascadeWorkspace ws(g.node_count());
  Xoshiro256 rng(rng_seed);
  return ws.run_sir_gamma1(g, seed_node, beta, rng);
}

/// Seed of one Monte Carlo run; independent of scheduling.
constexpr std::uint64_t run_seed(std::uint64_t master_seed, NodeId node,
                                 std::size_t threshold_index, std::size_t run_index) {
  return stable_hash({master_seed, node, threshold_index, run_index});
}

/// Means of `runs` independent cascades. Sums are accumulated in run order,
/// so the result is bitwise reproducible.
inline SimulationRecord simulate_node(const Graph& g, NodeId node, double p, std::size_t runs,
                                      std::uint64_t master_seed, std::size_t threshold_index,
                                      CascadeWorkspace& ws) {
  detail::check_cascade_args(g, node, p);
  if (runs == 0) throw InvalidArgument("runs must be >= 1");
  double sum_range = 0.0, sum_peak = 0.0, sum_time = 0.0;
  Xoshiro256 rng;
  for (std::size_t r = 0; r < runs; ++r) {
    rng.reseed(run_seed(master_seed, node, threshold_index, r));
    const auto out = ws.run_ic(g, node, p, rng);
    sum_range += static_cast<double>(out.range);
    sum_peak += static_cast<double>(out.peak);
    sum_time += static_cast<double>(out.peak_time);
  }
  const double denom = static_cast<double>(runs);
  return {node, p, runs, sum_range / denom, sum_peak / denom, sum_time / denom};
}

inline SimulationRecord simulate_node(const Graph& g, NodeId node, double p, std::size_t runs,
                                      std::uint64_t master_seed, std::size_t threshold_index = 0) {
  CascadeWorkspace ws(g.node_count());
  return simulate_node(g, node, p, runs, master_seed, threshold_index, ws);
}

/// Progress callback: (completed, total) simulation tasks.
using ProgressFn = std::function<void(std::size_t, std::size_t)>;

/// One record per (node, threshold), ordered node-major then by threshold
/// index. Output is identical for every worker count.
inline std::vector<SimulationRecord> simulate_all(const Graph& g, const ThresholdSet& thresholds,
                                                  std::size_t runs, std::uint64_t master_seed,
                                                  const ProgressFn& progress = {},
                                                  unsigned threads = 0) {
  if (thresholds.values.empty()) throw InvalidArgument("threshold set is empty");
  for (double p : thresholds.values)
    if (!(p >= 0.0 && p <= 1.0)) throw InvalidArgument("threshold outside [0, 1]");
  if (runs == 0) throw InvalidArgument("runs must be >= 1");
  const std::size_t t = thresholds.values.size();
  const std::size_t total = g.node_count() * t;
  std::vector<SimulationRecord> records(total);
  std::atomic<std::size_t> done{0};
  // Block of nodes per task so each task reuses one workspace.
  constexpr std::size_t kBlock = 32;
  const std::size_t blocks = (g.node_count() + kBlock - 1) / kBlock;
  parallel_for(
      blocks,
      [&](std::size_t b) {
        CascadeWorkspace ws(g.node_count());
        const std::size_t end = std::min(g.node_count(), (b + 1) * kBlock);
        for (std::size_t v = b * kBlock; v < end; ++v) {
          for (std::size_t ti = 0; ti < t; ++ti)
            records[v * t + ti] = simulate_node(g, static_cast<NodeId>(v), thresholds.values[ti],
                                                runs, master_seed, ti, ws);
        }
        const std::size_t finished = done.fetch_add(end - b * kBlock) + (end - b * kBlock);
        if (progress) progress(finished * t, total);
      },
      threads);
  return records;
}

// ---------------------------------------------------------------------------
// Persistence: CSV + JSON sidecar
// ---------------------------------------------------------------------------

inline std::string format_simulation_csv(const std::vector<SimulationRecord>& records) {
  std::string out = "node,threshold,runs,mean_range,mean_peak,mean_peak_time\n";
  for (const auto& r : records) {
    out += std::to_string(r.node) + ',' + io::format_double(r.threshold) + ',' +
           std::to_string(r.runs) + ',' + io::format_double(r.mean_range) + ',' +
           io::format_double(r.mean_peak) + ',' + io::format_double(r.mean_peak_time) + '\n';
  }
  return out;
}

inline void save_simulation(const std::vector<SimulationRecord>& records,
                            const std::filesystem::path& csv_path, const io::json& sidecar) {
  io::write_file(csv_path, format_simulation_csv(records));
  auto json_path = csv_path;
  json_path.replace_extension(".json");
  io::write_json(json_path, sidecar);
}

inline io::json simulation_sidecar(const Graph& g, const ThresholdSet& thresholds,
                                   std::size_t runs, std::uint64_t master_seed) {
  return {
      {"master_seed", master_seed},
      {"rng", Xoshiro256::kName},
      {"seed_derivation", "stable_hash(master_seed, node, threshold_index, run_index)"},
      {"thresholds", thresholds.values},
      {"network_family", to_string(thresholds.family)},
      {"runs", runs},
      {"graph_checksum", io::hex64(g.checksum())},
      {"range_includes_seed", true},
      {"graph_directed", g.directed()},
  };
}

inline std::vector<SimulationRecord> load_simulation(const std::filesystem::path& csv_path) {
  const auto table = io::read_csv(csv_path);
  const auto c_node = table.column("node"), c_thr = table.column("threshold"),
             c_runs = table.column("runs"), c_range = table.column("mean_range"),
             c_peak = table.column("mean_peak"), c_time = table.column("mean_peak_time");
  std::vector<SimulationRecord> out;
  out.reserve(table.rows.size());
  std::size_t line = 1;
  for (const auto& row : table.rows) {
    ++line;
    SimulationRecord r;
    r.node = static_cast<NodeId>(io::parse_double(row[c_node], line));
    r.threshold = io::parse_double(row[c_thr], line);
    r.runs = static_cast<std::size_t>(io::parse_double(row[c_runs], line));
    r.mean_range = io::parse_double(row[c_range], line);
    r.mean_peak = io::parse_double(row[c_peak], line);
    r.mean_peak_time = io::parse_double(row[c_time], line);
    out.push_back(r);
  }
  return out;
}

}  // namespace keynode
