#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <system_error>
#include <vector>

#include "polytrans/error.hpp"
#include "polytrans/rng.hpp"
#include "polytrans/text.hpp"

namespace polytrans {

struct GbdtParams {
  int n_estimators = 50;
  int max_depth = 3;
  double learning_rate = 0.1;
  double colsample_bytree = 1.0;
  double colsample_bylevel = 1.0;
  int min_samples_leaf = 1;

  void validate() const {
    if (n_estimators < 0) throw Error("gbdt: n_estimators must be >= 0");
    if (max_depth < 1) throw Error("gbdt: max_depth must be >= 1");
    if (!(learning_rate > 0.0)) throw Error("gbdt: learning_rate must be positive");
    if (!(colsample_bytree > 0.0) || colsample_bytree > 1.0)
      throw Error("gbdt: colsample_bytree must be in (0,1]");
    if (!(colsample_bylevel > 0.0) || colsample_bylevel > 1.0)
      throw Error("gbdt: colsample_bylevel must be in (0,1]");
    if (min_samples_leaf < 1) throw Error("gbdt: min_samples_leaf must be >= 1");
  }
};

// feature == -1 marks a leaf; children index into the owning tree's node pool.
struct GbdtNode {
  int feature = -1;
  double threshold = 0.0;
  double value = 0.0;
  int left = -1;
  int right = -1;
};

struct GbdtTree {
  std::vector<GbdtNode> nodes;

  double predict(const std::vector<double>& x) const {
    int at = 0;
    while (nodes[static_cast<std::size_t>(at)].feature >= 0) {
      const GbdtNode& n = nodes[static_cast<std::size_t>(at)];
      at = x[static_cast<std::size_t>(n.feature)] < n.threshold ? n.left : n.right;
    }
    return nodes[static_cast<std::size_t>(at)].value;
  }
};

struct GbdtModel {
  int n_features = 0;
  double base_score = 0.0;     // prior log-odds, clamped away from +-inf
  double learning_rate = 0.1;  // scales every tree's contribution
  bool single_class = false;   // training labels had one class; trees are empty
  std::vector<GbdtTree> trees;
};

namespace detail {

inline double gbdt_sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

inline constexpr double kGbdtEps = 1e-12;

struct SplitChoice {
  int feature = -1;
  double threshold = 0.0;
  double gain = 0.0;
};

}  // namespace detail

// Margin (log-odds) using the first `first_trees` trees; -1 means all of them.
// Exposed so callers can inspect the staged ensemble.
inline double predict_margin(const GbdtModel& model, const std::vector<double>& x,
                             int first_trees = -1) {
  if (static_cast<int>(x.size()) != model.n_features)
    throw Error("gbdt: feature length mismatch");
  std::size_t n = model.trees.size();
  if (first_trees >= 0 && static_cast<std::size_t>(first_trees) < n)
    n = static_cast<std::size_t>(first_trees);
  double m = model.base_score;
  for (std::size_t t = 0; t < n; ++t) m += model.learning_rate * model.trees[t].predict(x);
  return m;
}

inline double predict_proba(const GbdtModel& model, const std::vector<double>& x) {
  return detail::gbdt_sigmoid(predict_margin(model, x));
}

// Boosted trees on the logistic loss: each round fits one regression tree to
// the current gradients (p - y) and hessians p(1 - p), with Newton leaf values
// -G/(H + eps) and greedy exact splits at midpoint thresholds. Columns are
// subsampled once per tree and again per depth level.
inline GbdtModel fit_gbdt(const std::vector<std::vector<double>>& X, const std::vector<int>& y,
                          const GbdtParams& params, std::uint64_t seed) {
  params.validate();
  if (X.size() != y.size()) throw Error("gbdt: X and y sizes differ");
  if (X.size() < 2) throw Error("gbdt: need at least 2 samples");
  const int n = static_cast<int>(X.size());
  const int F = static_cast<int>(X[0].size());
  if (F < 1) throw Error("gbdt: empty feature vectors");
  for (const auto& row : X)
    if (static_cast<int>(row.size()) != F) throw Error("gbdt: ragged feature matrix");
  int positives = 0;
  for (int label : y) {
    if (label != 0 && label != 1) throw Error("gbdt: labels must be 0 or 1");
    positives += label;
  }

  GbdtModel model;
  model.n_features = F;
  model.learning_rate = params.learning_rate;
  double prior = static_cast<double>(positives) / n;
  prior = std::min(1.0 - 1e-6, std::max(1e-6, prior));
  model.base_score = std::log(prior / (1.0 - prior));
  if (positives == 0 || positives == n) {
    model.single_class = true;  // nothing to separate; prior-only model
    return model;
  }

  std::vector<double> margin(static_cast<std::size_t>(n), model.base_score);
  std::vector<double> g(static_cast<std::size_t>(n)), h(static_cast<std::size_t>(n));

  const int tree_cols = std::max(1, static_cast<int>(std::ceil(params.colsample_bytree * F)));
  for (int round = 0; round < params.n_estimators; ++round) {
    for (int i = 0; i < n; ++i) {
      const double p = detail::gbdt_sigmoid(margin[static_cast<std::size_t>(i)]);
      g[static_cast<std::size_t>(i)] = p - y[static_cast<std::size_t>(i)];
      h[static_cast<std::size_t>(i)] = std::max(p * (1.0 - p), detail::kGbdtEps);
    }
    Rng rng(mix_seed(seed, 0x6BD70000ULL + static_cast<std::uint64_t>(round)));
    const std::vector<int> cols = rng.sample_indices(F, tree_cols);
    const int level_cols =
        std::max(1, static_cast<int>(std::ceil(params.colsample_bylevel * tree_cols)));

    GbdtTree tree;
    struct Item {
      int node;
      std::vector<int> samples;
    };
    std::vector<int> all(static_cast<std::size_t>(n));
    std::iota(all.begin(), all.end(), 0);
    tree.nodes.push_back(GbdtNode{});
    std::vector<Item> level = {{0, std::move(all)}};

    for (int depth = 0; depth <= params.max_depth && !level.empty(); ++depth) {
      std::vector<int> active;  // per-level column subset, drawn from the tree subset
      for (int k : rng.sample_indices(tree_cols, level_cols))
        active.push_back(cols[static_cast<std::size_t>(k)]);

      std::vector<Item> next;
      for (Item& item : level) {
        double G = 0.0, H = 0.0;
        for (int i : item.samples) {
          G += g[static_cast<std::size_t>(i)];
          H += h[static_cast<std::size_t>(i)];
        }
        GbdtNode& node = tree.nodes[static_cast<std::size_t>(item.node)];
        node.value = -G / (H + detail::kGbdtEps);
        if (depth == params.max_depth ||
            static_cast<int>(item.samples.size()) < 2 * params.min_samples_leaf)
          continue;

        detail::SplitChoice best;
        std::vector<int> order = item.samples;
        for (int f : active) {
          std::sort(order.begin(), order.end(), [&](int a, int b) {
            const double xa = X[static_cast<std::size_t>(a)][static_cast<std::size_t>(f)];
            const double xb = X[static_cast<std::size_t>(b)][static_cast<std::size_t>(f)];
            if (xa != xb) return xa < xb;
            return a < b;
          });
          double GL = 0.0, HL = 0.0;
          for (std::size_t pos = 1; pos < order.size(); ++pos) {
            const int prev = order[pos - 1];
            GL += g[static_cast<std::size_t>(prev)];
            HL += h[static_cast<std::size_t>(prev)];
            const double lo = X[static_cast<std::size_t>(prev)][static_cast<std::size_t>(f)];
            const double hi = X[static_cast<std::size_t>(order[pos])][static_cast<std::size_t>(f)];
            if (lo == hi) continue;
            if (static_cast<int>(pos) < params.min_samples_leaf ||
                static_cast<int>(order.size() - pos) < params.min_samples_leaf)
              continue;
            const double GR = G - GL, HR = H - HL;
            const double gain = GL * GL / (HL + detail::kGbdtEps) +
                                GR * GR / (HR + detail::kGbdtEps) - G * G / (H + detail::kGbdtEps);
            if (gain > best.gain + detail::kGbdtEps) {
              double thr = lo + (hi - lo) / 2.0;
              if (!(thr > lo)) thr = hi;  // adjacent representables: keep the split non-empty
              best = {f, thr, gain};
            }
          }
        }
        if (best.feature < 0) continue;

        std::vector<int> left_samples, right_samples;
        for (int i : item.samples) {
          const double xv = X[static_cast<std::size_t>(i)][static_cast<std::size_t>(best.feature)];
          (xv < best.threshold ? left_samples : right_samples).push_back(i);
        }
        const int left_id = static_cast<int>(tree.nodes.size());
        tree.nodes.push_back(GbdtNode{});
        const int right_id = static_cast<int>(tree.nodes.size());
        tree.nodes.push_back(GbdtNode{});
        GbdtNode& parent = tree.nodes[static_cast<std::size_t>(item.node)];
        parent.feature = best.feature;
        parent.threshold = best.threshold;
        parent.left = left_id;
        parent.right = right_id;
        next.push_back({left_id, std::move(left_samples)});
        next.push_back({right_id, std::move(right_samples)});
      }
      level = std::move(next);
    }

    for (int i = 0; i < n; ++i)
      margin[static_cast<std::size_t>(i)] +=
          params.learning_rate * tree.predict(X[static_cast<std::size_t>(i)]);
    model.trees.push_back(std::move(tree));
  }
  return model;
}

// Mean logistic loss of the staged model on (X, y); used to monitor boosting.
inline double logistic_loss(const GbdtModel& model, const std::vector<std::vector<double>>& X,
                            const std::vector<int>& y, int first_trees = -1) {
  if (X.empty() || X.size() != y.size()) throw Error("gbdt: bad loss inputs");
  double total = 0.0;
  for (std::size_t i = 0; i < X.size(); ++i) {
    const double m = predict_margin(model, X[i], first_trees);
    // log(1 + exp(-z)) with the standard overflow-safe split
    const double z = y[i] == 1 ? m : -m;
    total += z >= 0.0 ? std::log1p(std::exp(-z)) : -z + std::log1p(std::exp(z));
  }
  return total / static_cast<double>(X.size());
}

// --- cross-validation --------------------------------------------------------

struct CvResult {
  std::vector<double> fold_accuracy;
  std::vector<double> fold_f1_accept;  // positive class
  std::vector<double> fold_f1_reject;  // negative class
  double mean_accuracy = 0.0;
  double std_accuracy = 0.0;
  double mean_f1_accept = 0.0;
  double mean_f1_reject = 0.0;
};

// Stratified assignment: each class is shuffled separately and dealt
// round-robin, so per-fold class counts differ by at most one.
inline std::vector<std::vector<int>> stratified_folds(const std::vector<int>& y, int k,
                                                      std::uint64_t seed) {
  if (k < 2) throw Error("gbdt: need at least 2 folds");
  if (static_cast<int>(y.size()) < k) throw Error("gbdt: fewer samples than folds");
  std::vector<std::vector<int>> folds(static_cast<std::size_t>(k));
  for (int cls = 0; cls <= 1; ++cls) {
    std::vector<int> members;
    for (std::size_t i = 0; i < y.size(); ++i)
      if (y[i] == cls) members.push_back(static_cast<int>(i));
    Rng rng(mix_seed(seed, 0x57A70000ULL + static_cast<std::uint64_t>(cls)));
    rng.shuffle(members);
    for (std::size_t j = 0; j < members.size(); ++j)
      folds[j % static_cast<std::size_t>(k)].push_back(members[j]);
  }
  for (auto& f : folds) std::sort(f.begin(), f.end());
  return folds;
}

namespace detail {

inline double binary_f1(int tp, int fp, int fn) {
  const double denom = 2.0 * tp + fp + fn;
  return denom > 0.0 ? 2.0 * tp / denom : 0.0;
}

}  // namespace detail

inline CvResult kfold_cv(const std::vector<std::vector<double>>& X, const std::vector<int>& y,
                         const GbdtParams& params, int k, std::uint64_t seed) {
  const auto folds = stratified_folds(y, k, mix_seed(seed, 0xF01D));
  CvResult res;
  for (std::size_t fold = 0; fold < folds.size(); ++fold) {
    std::vector<char> in_test(y.size(), 0);
    for (int i : folds[fold]) in_test[static_cast<std::size_t>(i)] = 1;
    std::vector<std::vector<double>> Xtr;
    std::vector<int> ytr;
    for (std::size_t i = 0; i < y.size(); ++i) {
      if (!in_test[i]) {
        Xtr.push_back(X[i]);
        ytr.push_back(y[i]);
      }
    }
    GbdtModel model = fit_gbdt(Xtr, ytr, params, mix_seed(seed, 0xF170000ULL + fold));
    int correct = 0, tp = 0, fp = 0, fn = 0, tn = 0;
    for (int i : folds[fold]) {
      const int pred = predict_proba(model, X[static_cast<std::size_t>(i)]) >= 0.5 ? 1 : 0;
      const int truth = y[static_cast<std::size_t>(i)];
      correct += pred == truth;
      if (pred == 1 && truth == 1) tp++;
      if (pred == 1 && truth == 0) fp++;
      if (pred == 0 && truth == 1) fn++;
      if (pred == 0 && truth == 0) tn++;
    }
    res.fold_accuracy.push_back(static_cast<double>(correct) / folds[fold].size());
    res.fold_f1_accept.push_back(detail::binary_f1(tp, fp, fn));
    res.fold_f1_reject.push_back(detail::binary_f1(tn, fn, fp));
  }
  const auto mean = [](const std::vector<double>& v) {
    return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  };
  res.mean_accuracy = mean(res.fold_accuracy);
  res.mean_f1_accept = mean(res.fold_f1_accept);
  res.mean_f1_reject = mean(res.fold_f1_reject);
  double var = 0.0;
  for (double a : res.fold_accuracy) var += (a - res.mean_accuracy) * (a - res.mean_accuracy);
  res.std_accuracy = std::sqrt(var / static_cast<double>(res.fold_accuracy.size()));
  return res;
}

// --- randomized hyperparameter search ----------------------------------------

// Candidate values for the four searched knobs; the remaining params are fixed
// for every draw. Defaults are the documented desk-scale search space.
struct GbdtSearchSpace {
  std::vector<int> max_depth = {2, 3, 4, 6};
  std::vector<double> colsample_bytree = {0.6, 0.8, 1.0};
  std::vector<double> colsample_bylevel = {0.6, 0.8, 1.0};
  std::vector<int> n_estimators = {25, 50, 100, 200};
  double learning_rate = 0.1;
  int min_samples_leaf = 1;
};

// n_iter independent draws scored by shared-fold CV mean accuracy; the first
// drawn maximum wins ties. Candidates whose fit fails are skipped.
inline std::pair<GbdtParams, CvResult> randomized_search(const std::vector<std::vector<double>>& X,
                                                         const std::vector<int>& y,
                                                         const GbdtSearchSpace& space, int n_iter,
                                                         int k, std::uint64_t seed) {
  if (n_iter < 1) throw Error("gbdt: n_iter must be >= 1");
  if (space.max_depth.empty() || space.colsample_bytree.empty() ||
      space.colsample_bylevel.empty() || space.n_estimators.empty())
    throw Error("gbdt: empty search dimension");
  Rng rng(mix_seed(seed, 0x5EA2C4));
  std::optional<std::pair<GbdtParams, CvResult>> best;
  for (int iter = 0; iter < n_iter; ++iter) {
    GbdtParams p;
    p.max_depth = space.max_depth[rng.next_below(space.max_depth.size())];
    p.colsample_bytree = space.colsample_bytree[rng.next_below(space.colsample_bytree.size())];
    p.colsample_bylevel = space.colsample_bylevel[rng.next_below(space.colsample_bylevel.size())];
    p.n_estimators = space.n_estimators[rng.next_below(space.n_estimators.size())];
    p.learning_rate = space.learning_rate;
    p.min_samples_leaf = space.min_samples_leaf;
    try {
      CvResult cv = kfold_cv(X, y, p, k, seed);
      if (!best || cv.mean_accuracy > best->second.mean_accuracy) best = {p, cv};
    } catch (const Error&) {
      continue;  // degenerate candidate; keep searching
    }
  }
  if (!best) throw Error("gbdt: every search candidate failed");
  return *best;
}

// --- persistence --------------------------------------------------------------

namespace detail {

inline void write_gbdt_node(std::string& out, const GbdtTree& tree, int at) {
  const GbdtNode& n = tree.nodes[static_cast<std::size_t>(at)];
  if (n.feature < 0) {
    out += "leaf " + format_real(n.value) + "\n";
    return;
  }
  out += "split " + std::to_string(n.feature) + " " + format_real(n.threshold) + "\n";
  write_gbdt_node(out, tree, n.left);
  write_gbdt_node(out, tree, n.right);
}

}  // namespace detail

inline std::string save_gbdt(const GbdtModel& model) {
  std::string out = "gbdt-model v1\n";
  out += "features " + std::to_string(model.n_features) + "\n";
  out += "base_score " + detail::format_real(model.base_score) + "\n";
  out += "learning_rate " + detail::format_real(model.learning_rate) + "\n";
  out += "single_class " + std::string(model.single_class ? "1" : "0") + "\n";
  out += "trees " + std::to_string(model.trees.size()) + "\n";
  for (const auto& tree : model.trees) {
    out += "tree " + std::to_string(tree.nodes.size()) + "\n";
    detail::write_gbdt_node(out, tree, 0);
  }
  return out;
}

namespace detail {

struct GbdtReader {
  std::istringstream in;
  explicit GbdtReader(const std::string& text) : in(text) {}

  std::string word() {
    std::string w;
    if (!(in >> w)) throw Error("gbdt model: truncated file");
    return w;
  }
  void expect(const std::string& want) {
    const std::string got = word();
    if (got != want) throw Error("gbdt model: expected '" + want + "', found '" + got + "'");
  }
  long integer() {
    const std::string w = word();
    long v = 0;
    auto res = std::from_chars(w.data(), w.data() + w.size(), v);
    if (res.ec != std::errc() || res.ptr != w.data() + w.size())
      throw Error("gbdt model: bad integer '" + w + "'");
    return v;
  }
  double real() {
    const std::string w = word();
    double v = 0;
    auto res = std::from_chars(w.data(), w.data() + w.size(), v);
    if (res.ec != std::errc() || res.ptr != w.data() + w.size())
      throw Error("gbdt model: bad number '" + w + "'");
    return v;
  }

  int read_node(GbdtTree& tree) {
    const int id = static_cast<int>(tree.nodes.size());
    tree.nodes.push_back(GbdtNode{});
    const std::string kind = word();
    if (kind == "leaf") {
      tree.nodes[static_cast<std::size_t>(id)].value = real();
    } else if (kind == "split") {
      const long f = integer();
      const double thr = real();
      const int left = read_node(tree);
      const int right = read_node(tree);
      GbdtNode& n = tree.nodes[static_cast<std::size_t>(id)];
      n.feature = static_cast<int>(f);
      n.threshold = thr;
      n.left = left;
      n.right = right;
    } else {
      throw Error("gbdt model: unknown node kind '" + kind + "'");
    }
    return id;
  }
};

}  // namespace detail

inline GbdtModel load_gbdt(const std::string& text) {
  detail::GbdtReader r(text);
  r.expect("gbdt-model");
  r.expect("v1");
  GbdtModel model;
  r.expect("features");
  model.n_features = static_cast<int>(r.integer());
  r.expect("base_score");
  model.base_score = r.real();
  r.expect("learning_rate");
  model.learning_rate = r.real();
  r.expect("single_class");
  model.single_class = r.integer() != 0;
  r.expect("trees");
  const long n_trees = r.integer();
  if (model.n_features < 1 || n_trees < 0) throw Error("gbdt model: bad header");
  for (long t = 0; t < n_trees; ++t) {
    r.expect("tree");
    const long n_nodes = r.integer();
    GbdtTree tree;
    r.read_node(tree);
    if (static_cast<long>(tree.nodes.size()) != n_nodes)
      throw Error("gbdt model: node count mismatch");
    for (const GbdtNode& n : tree.nodes)
      if (n.feature >= model.n_features) throw Error("gbdt model: feature index out of range");
    model.trees.push_back(std::move(tree));
  }
  std::string extra;
  if (r.in >> extra) throw Error("gbdt model: trailing content");
  return model;
}

}  // namespace polytrans
