#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "keynode/centrality.hpp"
#include "keynode/common.hpp"
#include "keynode/diffusion.hpp"
#include "keynode/features.hpp"
#include "keynode/io.hpp"
#include "keynode/labeling.hpp"
#include "keynode/models.hpp"

namespace keynode {

// ---------------------------------------------------------------------------
// Scoring
// ---------------------------------------------------------------------------

/// counts[t][p] = rows with true class t predicted as p.
struct ConfusionMatrix {
  std::size_t classes = 0;
  std::vector<std::vector<std::size_t>> counts;

  explicit ConfusionMatrix(std::size_t k = 0) : classes(k), counts(k, std::vector<std::size_t>(k, 0)) {}

  std::size_t support(std::size_t c) const {
    return std::accumulate(counts[c].begin(), counts[c].end(), std::size_t{0});
  }
  std::size_t predicted(std::size_t c) const {
    std::size_t s = 0;
    for (const auto& row : counts) s += row[c];
    return s;
  }

  ConfusionMatrix& operator+=(const ConfusionMatrix& o) {
    if (o.classes > classes) {
      counts.resize(o.classes);
      for (auto& row : counts) row.resize(o.classes, 0);
      classes = o.classes;
    }
    for (std::size_t t = 0; t < o.classes; ++t)
      for (std::size_t p = 0; p < o.classes; ++p) counts[t][p] += o.counts[t][p];
    return *this;
  }
};

/// Labels must be non-negative class indices. `classes` = 0 sizes the matrix
/// to the largest label seen.
inline ConfusionMatrix confusion_matrix(std::span<const int> y_true, std::span<const int> y_pred,
                                        std::size_t classes = 0) {
  if (y_true.size() != y_pred.size()) throw InvalidArgument("label vectors differ in length");
  if (y_true.empty()) throw InvalidArgument("empty label vectors");
  std::size_t k = classes;
  for (std::size_t i = 0; i < y_true.size(); ++i) {
    if (y_true[i] < 0 || y_pred[i] < 0) throw InvalidArgument("negative class label");
    k = std::max({k, static_cast<std::size_t>(y_true[i]) + 1, static_cast<std::size_t>(y_pred[i]) + 1});
  }
  ConfusionMatrix cm(k);
  for (std::size_t i = 0; i < y_true.size(); ++i)
    ++cm.counts[static_cast<std::size_t>(y_true[i])][static_cast<std::size_t>(y_pred[i])];
  return cm;
}

/// Per-class F1; NaN for classes with no true rows.
inline std::vector<double> per_class_f1(const ConfusionMatrix& cm) {
  std::vector<double> out(cm.classes, std::numeric_limits<double>::quiet_NaN());
  for (std::size_t c = 0; c < cm.classes; ++c) {
    const std::size_t support = cm.support(c);
    if (support == 0) continue;
    const double tp = static_cast<double>(cm.counts[c][c]);
    const double denom = static_cast<double>(support + cm.predicted(c));
    out[c] = 2.0 * tp / denom;
  }
  return out;
}

/// Mean F1 over classes present in the truth.
inline double f1_macro(const ConfusionMatrix& cm) {
  double sum = 0.0;
  std::size_t present = 0;
  for (double f : per_class_f1(cm))
    if (!std::isnan(f)) {
      sum += f;
      ++present;
    }
  return present ? sum / static_cast<double>(present) : 0.0;
}

inline double f1_macro(std::span<const int> y_true, std::span<const int> y_pred) {
  return f1_macro(confusion_matrix(y_true, y_pred));
}

inline double f1_macro(const std::vector<int>& y_true, const std::vector<int>& y_pred) {
  return f1_macro(std::span<const int>(y_true), std::span<const int>(y_pred));
}

// ---------------------------------------------------------------------------
// Per-network artifacts
// ---------------------------------------------------------------------------

/// Everything evaluation needs from one network: simulation records and the
/// raw (unstandardized) feature matrix, row-aligned.
struct NetworkData {
  std::string name;
  NetworkFamily family = NetworkFamily::custom;
  std::vector<SimulationRecord> records;
  FeatureMatrix features;

  void check() const {
    if (records.size() != features.rows)
      throw ValidationError("network '" + name + "': records and feature rows differ in count");
    for (std::size_t i = 0; i < records.size(); ++i)
      if (records[i].node != features.nodes[i] || records[i].threshold != features.thresholds[i])
        throw ValidationError("network '" + name + "': records and features are not row-aligned");
  }
};

inline NetworkData prepare_network(std::string name, const Graph& g, const ThresholdSet& thresholds,
                                   std::size_t runs, std::uint64_t master_seed,
                                   const CentralityParams& cparams = {}) {
  NetworkData d;
  d.name = std::move(name);
  d.family = thresholds.family;
  d.records = simulate_all(g, thresholds, runs, master_seed);
  d.features = assemble_features(compute_all_centralities(g, cparams), thresholds);
  d.check();
  return d;
}

// ---------------------------------------------------------------------------
// Splits
// ---------------------------------------------------------------------------

struct NodeSplit {
  std::vector<std::size_t> train_rows;
  std::vector<std::size_t> test_rows;
  std::vector<NodeId> test_nodes;
  std::size_t attempts = 0;
};

inline constexpr std::size_t kMaxSplitAttempts = 20;

/// Node-level split: every row of a node lands on the same side. Nodes are
/// stratified by their highest label (first label vector) and each stratum
/// contributes round(test_fraction * size) nodes to the test side. Retries
/// with a fresh seed until every class of every label vector appears on both
/// sides; SplitError after kMaxSplitAttempts.
inline NodeSplit stratified_node_split(std::span<const NodeId> row_nodes,
                                       const std::vector<std::vector<int>>& label_sets,
                                       double test_fraction, std::uint64_t seed) {
  if (label_sets.empty()) throw InvalidArgument("split needs at least one label vector");
  if (!(test_fraction > 0.0 && test_fraction < 1.0)) throw InvalidArgument("test fraction outside (0, 1)");
  for (const auto& ls : label_sets)
    if (ls.size() != row_nodes.size()) throw InvalidArgument("label vector length differs from row count");

  std::map<NodeId, int> node_stratum;
  for (std::size_t i = 0; i < row_nodes.size(); ++i) {
    auto [it, fresh] = node_stratum.try_emplace(row_nodes[i], label_sets[0][i]);
    if (!fresh) it->second = std::max(it->second, label_sets[0][i]);
  }
  std::map<int, std::vector<NodeId>> strata;
  for (const auto& [node, s] : node_stratum) strata[s].push_back(node);

  for (std::size_t attempt = 0; attempt < kMaxSplitAttempts; ++attempt) {
    Xoshiro256 rng(stable_hash({seed, attempt, 0x73706c6974ULL}));
    std::map<NodeId, bool> in_test;
    NodeSplit split;
    split.attempts = attempt + 1;
    for (auto [label, nodes] : strata) {
      shuffle(nodes, rng);
      auto n_test = static_cast<std::size_t>(std::llround(test_fraction * static_cast<double>(nodes.size())));
      if (nodes.size() >= 2) n_test = std::clamp<std::size_t>(n_test, 1, nodes.size() - 1);
      for (std::size_t j = 0; j < nodes.size(); ++j) in_test[nodes[j]] = j < n_test;
    }
    for (std::size_t i = 0; i < row_nodes.size(); ++i)
      (in_test[row_nodes[i]] ? split.test_rows : split.train_rows).push_back(i);
    for (const auto& [node, t] : in_test)
      if (t) split.test_nodes.push_back(node);

    bool ok = !split.train_rows.empty() && !split.test_rows.empty();
    for (const auto& ls : label_sets) {
      if (!ok) break;
      const int k = *std::max_element(ls.begin(), ls.end()) + 1;
      std::vector<char> tr(static_cast<std::size_t>(k), 0), te(static_cast<std::size_t>(k), 0);
      for (auto r : split.train_rows) tr[static_cast<std::size_t>(ls[r])] = 1;
      for (auto r : split.test_rows) te[static_cast<std::size_t>(ls[r])] = 1;
      for (std::size_t c = 0; c < tr.size(); ++c) {
        const bool exists = std::find(ls.begin(), ls.end(), static_cast<int>(c)) != ls.end();
        if (exists && (!tr[c] || !te[c])) ok = false;
      }
    }
    if (ok) return split;
  }
  throw SplitError("could not place every class on both sides of the split after " +
                   std::to_string(kMaxSplitAttempts) + " attempts");
}

// ---------------------------------------------------------------------------
// Reports
// ---------------------------------------------------------------------------

enum class ScalerMode { train_split, full_network };

inline std::string_view to_string(ScalerMode m) {
  return m == ScalerMode::train_split ? "train_split" : "full_network";
}

inline ScalerMode parse_scaler_mode(std::string_view s) {
  if (s == "train_split") return ScalerMode::train_split;
  if (s == "full_network") return ScalerMode::full_network;
  throw InvalidArgument("unknown scaler mode '" + std::string(s) + "'");
}

struct EvalOptions {
  std::size_t trials = 5;
  double test_fraction = 0.2;
  std::uint64_t seed = 0;
  ScalerMode scaler = ScalerMode::train_split;
  bool pooled_labels = false;
};

struct EvalReport {
  TaskId task = TaskId::influence_range;
  BinSpec bins;
  ModelSpec model;
  std::string train_network;
  std::string test_network;
  std::size_t trials = 0;
  std::vector<double> trial_f1;
  double f1_macro_mean = 0.0;
  double f1_macro_std = 0.0;  // sample std over trials (0 for one trial)
  std::vector<double> per_class_f1;  // from the confusion matrix pooled over trials
  ConfusionMatrix confusion;
  std::vector<std::size_t> split_attempts;
  std::string split_protocol;
  std::string scaler;
  std::vector<std::string> warnings;

  void summarize() {
    trials = trial_f1.size();
    f1_macro_mean = trials ? std::accumulate(trial_f1.begin(), trial_f1.end(), 0.0) / static_cast<double>(trials) : 0.0;
    double ss = 0.0;
    for (double f : trial_f1) ss += (f - f1_macro_mean) * (f - f1_macro_mean);
    f1_macro_std = trials > 1 ? std::sqrt(ss / static_cast<double>(trials - 1)) : 0.0;
    per_class_f1 = keynode::per_class_f1(confusion);
  }

  io::json to_json() const {
    io::json pcf = io::json::array();
    for (double f : per_class_f1) pcf.push_back(std::isnan(f) ? io::json(nullptr) : io::json(f));
    io::json j = {{"task", to_string(task)},
                  {"k", bins.k},
                  {"bin_method", to_string(bins.method)},
                  {"model", model.to_json()},
                  {"train_network", train_network},
                  {"test_network", test_network},
                  {"trials", trials},
                  {"trial_f1", trial_f1},
                  {"f1_macro_mean", f1_macro_mean},
                  {"f1_macro_std", f1_macro_std},
                  {"per_class_f1", pcf},
                  {"confusion", confusion.counts},
                  {"split_attempts", split_attempts},
                  {"split_protocol", split_protocol},
                  {"scaler", scaler},
                  {"warnings", warnings}};
    if (bins.param) j["bin_param"] = *bins.param;
    return j;
  }

  /// Flat grid rows: task,k,model,train,test,trial,f1.
  std::string csv_rows() const {
    std::string out;
    for (std::size_t t = 0; t < trial_f1.size(); ++t)
      out += std::string(to_string(task)) + "," + std::to_string(bins.k) + "," +
             std::string(to_string(model.kind)) + "," + train_network + "," + test_network + "," +
             std::to_string(t) + "," + io::format_double(trial_f1[t]) + "\n";
    return out;
  }
};

inline constexpr std::string_view kReportCsvHeader = "task,k,model,train,test,trial,f1\n";

inline std::string format_report_csv(const std::vector<EvalReport>& reports) {
  std::string out(kReportCsvHeader);
  for (const auto& r : reports) out += r.csv_rows();
  return out;
}

// ---------------------------------------------------------------------------
// Harnesses
// ---------------------------------------------------------------------------

namespace eval_detail {

inline std::vector<int> select(const std::vector<int>& v, const std::vector<std::size_t>& idx) {
  std::vector<int> out(idx.size());
  for (std::size_t i = 0; i < idx.size(); ++i) out[i] = v[idx[i]];
  return out;
}

struct Scaled {
  FeatureMatrix train, test;
};

inline Scaled scale(const FeatureMatrix& raw, const NodeSplit& split, ScalerMode mode) {
  const FeatureMatrix train = raw.select_rows(split.train_rows);
  const FeatureMatrix test = raw.select_rows(split.test_rows);
  const Standardizer s = mode == ScalerMode::train_split ? fit_standardizer(train) : fit_standardizer(raw);
  return {s.apply(train), s.apply(test)};
}

/// One trial on a fixed split: returns the test confusion matrix.
inline ConfusionMatrix run_trial(const Scaled& data, const std::vector<int>& labels,
                                 const NodeSplit& split, const ModelSpec& spec, std::size_t k) {
  const auto y_train = select(labels, split.train_rows);
  const auto y_test = select(labels, split.test_rows);
  const TrainedModel model = train(spec, data.train, y_train);
  const auto y_pred = predict(model, data.test);
  return confusion_matrix(y_test, y_pred, k);
}

inline std::string protocol(const EvalOptions& o) {
  return "node-level stratified split, test fraction " + io::format_double(o.test_fraction) +
         ", strata = highest label per node";
}

inline std::uint64_t trial_seed(std::uint64_t seed, std::size_t trial) {
  return stable_hash({seed, trial, 0x747269616cULL});
}

}  // namespace eval_detail

/// Within-network evaluation on precomputed row labels.
inline EvalReport within_network_eval(const NetworkData& data, const std::vector<int>& labels,
                                      TaskId task, const BinSpec& bins, const ModelSpec& spec,
                                      const EvalOptions& options) {
  data.check();
  if (labels.size() != data.features.rows) throw ValidationError("labels and feature rows differ in count");
  if (options.trials == 0) throw InvalidArgument("trials must be >= 1");
  EvalReport rep;
  rep.task = task;
  rep.bins = bins;
  rep.model = spec;
  rep.train_network = rep.test_network = data.name;
  rep.split_protocol = eval_detail::protocol(options);
  rep.scaler = std::string(to_string(options.scaler));
  const std::size_t k = static_cast<std::size_t>(*std::max_element(labels.begin(), labels.end()) + 1);
  rep.confusion = ConfusionMatrix(k);
  for (std::size_t t = 0; t < options.trials; ++t) {
    const auto ts = eval_detail::trial_seed(options.seed, t);
    const auto split = stratified_node_split(data.features.nodes, {labels}, options.test_fraction, ts);
    rep.split_attempts.push_back(split.attempts);
    ModelSpec trial_spec = spec;
    trial_spec.seed = stable_hash({spec.seed, ts});
    const auto cm = eval_detail::run_trial(eval_detail::scale(data.features, split, options.scaler), labels,
                                           split, trial_spec, k);
    rep.trial_f1.push_back(f1_macro(cm));
    rep.confusion += cm;
  }
  rep.summarize();
  return rep;
}

/// Within-network evaluation: labels `task` with `bins`, then evaluates.
inline EvalReport within_network_eval(const NetworkData& data, TaskId task, const BinSpec& bins,
                                      const ModelSpec& spec, const EvalOptions& options) {
  const auto tl = label_task(data.records, task, bins, options.seed, options.pooled_labels);
  auto rep = within_network_eval(data, tl.row_labels, task, tl.spec, spec, options);
  for (const auto& g : tl.groups)
    for (const auto& w : g.warnings) rep.warnings.push_back(w);
  return rep;
}

/// Throws when a smart binning with k classes is not supported by the
/// select_k floor on some threshold group of `data`.
inline void check_k_feasible(const NetworkData& data, TaskId task, const BinSpec& bins,
                             std::size_t min_bin_size = kDefaultMinBinSize) {
  if (bins.method != BinMethod::smart_kmeans && bins.method != BinMethod::smart_dp_exact) return;
  if (bins.k <= 2) return;
  for (double t : thresholds_of(data.records)) {
    std::vector<double> values;
    for (const auto& r : data.records)
      if (r.threshold == t) values.push_back(task_value(r, task));
    if (select_k(values, bins.k, min_bin_size) < bins.k)
      throw DegenerateInputError("k=" + std::to_string(bins.k) + " is infeasible on network '" +
                                 data.name + "' (threshold " + io::format_double(t) + ")");
  }
}

/// Trains on every sample of `train_data` and scores every sample of
/// `test_data`, using labels computed on each network separately. Each
/// network is standardized with its own statistics.
inline EvalReport cross_network_eval(const NetworkData& train_data, const std::vector<int>& train_labels,
                                     const NetworkData& test_data, const std::vector<int>& test_labels,
                                     TaskId task, const BinSpec& bins, const ModelSpec& spec,
                                     std::uint64_t seed) {
  train_data.check();
  test_data.check();
  if (train_labels.size() != train_data.features.rows || test_labels.size() != test_data.features.rows)
    throw ValidationError("labels and feature rows differ in count");
  const auto X_train = fit_standardizer(train_data.features).apply(train_data.features);
  const auto X_test = fit_standardizer(test_data.features).apply(test_data.features);
  ModelSpec s = spec;
  s.seed = stable_hash({spec.seed, seed});
  const auto model = train(s, X_train, train_labels);
  const auto pred = predict(model, X_test);
  EvalReport rep;
  rep.task = task;
  rep.bins = bins;
  rep.model = spec;
  rep.train_network = train_data.name;
  rep.test_network = test_data.name;
  rep.split_protocol = "train on all samples of the train network, test on all samples of the test network";
  rep.scaler = "per_network";
  rep.confusion = confusion_matrix(test_labels, pred, bins.k);
  rep.trial_f1.push_back(f1_macro(rep.confusion));
  rep.split_attempts.push_back(0);
  rep.summarize();
  return rep;
}

/// Labels `task` on each network with `bins` (seeded by `seed`), checks the
/// select_k floor on both, then evaluates.
inline EvalReport cross_network_eval(const NetworkData& train_data, const NetworkData& test_data,
                                     TaskId task, const BinSpec& bins, const ModelSpec& spec,
                                     std::uint64_t seed, bool check_feasible = true) {
  if (check_feasible) {
    check_k_feasible(train_data, task, bins);
    check_k_feasible(test_data, task, bins);
  }
  const auto train_labels = label_task(train_data.records, task, bins, seed);
  const auto test_labels = label_task(test_data.records, task, bins, seed);
  return cross_network_eval(train_data, train_labels.row_labels, test_data, test_labels.row_labels, task,
                            train_labels.spec, spec, seed);
}

struct BinningComparison {
  EvalReport smart;
  EvalReport fixed;

  io::json to_json() const {
    return {{"network", smart.train_network}, {"smart", smart.to_json()}, {"fixed", fixed.to_json()}};
  }
};

/// Evaluates two label arms on identical splits and model seeds. Splits are
/// stratified on `labels_a` and must keep every class of both arms on both
/// sides.
inline BinningComparison binning_comparison(const NetworkData& data, TaskId task,
                                            const std::vector<int>& labels_a, const BinSpec& bins_a,
                                            const std::vector<int>& labels_b, const BinSpec& bins_b,
                                            const ModelSpec& spec, const EvalOptions& options) {
  data.check();
  if (labels_a.size() != data.features.rows || labels_b.size() != data.features.rows)
    throw ValidationError("labels and feature rows differ in count");
  BinningComparison out;
  auto init = [&](EvalReport& r, const BinSpec& b, const std::vector<int>& labels) {
    r.task = task;
    r.bins = b;
    r.model = spec;
    r.train_network = r.test_network = data.name;
    r.split_protocol = eval_detail::protocol(options) + " (shared by both arms)";
    r.scaler = std::string(to_string(options.scaler));
    r.confusion = ConfusionMatrix(static_cast<std::size_t>(*std::max_element(labels.begin(), labels.end()) + 1));
  };
  init(out.smart, bins_a, labels_a);
  init(out.fixed, bins_b, labels_b);
  for (std::size_t t = 0; t < options.trials; ++t) {
    const auto ts = eval_detail::trial_seed(options.seed, t);
    const auto split = stratified_node_split(data.features.nodes, {labels_a, labels_b},
                                             options.test_fraction, ts);
    const auto scaled = eval_detail::scale(data.features, split, options.scaler);
    ModelSpec trial_spec = spec;
    trial_spec.seed = stable_hash({spec.seed, ts});
    for (auto* arm : {&out.smart, &out.fixed}) {
      const auto& labels = arm == &out.smart ? labels_a : labels_b;
      const auto cm = eval_detail::run_trial(scaled, labels, split, trial_spec, arm->confusion.classes);
      arm->trial_f1.push_back(f1_macro(cm));
      arm->confusion += cm;
      arm->split_attempts.push_back(split.attempts);
    }
  }
  out.smart.summarize();
  out.fixed.summarize();
  return out;
}

/// Smart bins (k-means, k=2) against fixed top-percent bins on identical splits.
inline BinningComparison binning_comparison(const NetworkData& data, TaskId task, const ModelSpec& spec,
                                            const EvalOptions& options, std::size_t smart_k = 2,
                                            double top_fraction = kDefaultTopFraction) {
  const BinSpec smart{BinMethod::smart_kmeans, smart_k, std::nullopt};
  const BinSpec fixed{BinMethod::fixed_top_percent, 2, top_fraction};
  const auto a = label_task(data.records, task, smart, options.seed, options.pooled_labels);
  const auto b = label_task(data.records, task, fixed, options.seed, options.pooled_labels);
  auto out = binning_comparison(data, task, a.row_labels, a.spec, b.row_labels, b.spec, spec, options);
  for (const auto& g : b.groups)
    for (const auto& w : g.warnings) out.fixed.warnings.push_back(w);
  return out;
}

}  // namespace keynode
