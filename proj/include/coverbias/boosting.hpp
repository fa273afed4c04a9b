#pragma once

// Gradient-boosted regression trees (squared error, exact greedy splits,
// L1/L2-regularised leaf weights), k-fold grid search and evaluation.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "coverbias/bias.hpp"
#include "coverbias/error.hpp"
#include "coverbias/ingest.hpp"
#include "coverbias/util/parallel.hpp"
#include "coverbias/util/random.hpp"

namespace coverbias::boosting {

using json = nlohmann::json;

// ---------------------------------------------------------------------------
// Data

struct Dataset {
  std::vector<std::string> ids;
  std::vector<std::string> feature_names;
  std::vector<double> x;  // row-major, size() * n_features()
  std::vector<double> y;

  std::size_t size() const noexcept { return y.size(); }
  std::size_t n_features() const noexcept { return feature_names.size(); }
  std::span<const double> row(std::size_t i) const { return {x.data() + i * n_features(), n_features()}; }
  double at(std::size_t i, std::size_t f) const { return x[i * n_features() + f]; }

  void add(std::string id, std::span<const double> features, double target) {
    if (features.size() != n_features()) throw SchemaError("row '" + id + "': feature count mismatch");
    ids.push_back(std::move(id));
    x.insert(x.end(), features.begin(), features.end());
    y.push_back(target);
  }

  Dataset subset(std::span<const std::size_t> rows) const {
    Dataset out{{}, feature_names, {}, {}};
    out.ids.reserve(rows.size());
    out.x.reserve(rows.size() * n_features());
    for (auto r : rows) out.add(ids[r], row(r), y[r]);
    return out;
  }
};

// Target = bias e_i, features = covariates; rows follow the bias table order.
inline Dataset join(const bias::BiasTable& target, const CovariateTable& covariates) {
  Dataset d{{}, covariates.feature_names(), {}, {}};
  for (const auto& r : target.rows) {
    auto idx = covariates.find(r.area_id);
    if (!idx) throw SchemaError("no covariates for area '" + r.area_id + "'");
    d.add(r.area_id, covariates.row(*idx), r.bias);
  }
  return d;
}

inline double rmse(std::span<const double> predicted, std::span<const double> observed) {
  if (predicted.size() != observed.size()) throw SchemaError("rmse: length mismatch");
  if (predicted.empty()) throw EmptySelection("rmse of an empty set");
  double s = 0.0;
  for (std::size_t i = 0; i < predicted.size(); ++i) {
    double d = predicted[i] - observed[i];
    s += d * d;
  }
  return std::sqrt(s / static_cast<double>(predicted.size()));
}

// Seeded shuffle; the first ceil(fraction * n) rows train.
inline std::pair<Dataset, Dataset> split_train_test(const Dataset& data, double fraction = 0.8,
                                                    std::uint64_t seed = 0) {
  if (data.size() < 10) throw DomainError("train/test split needs at least 10 rows");
  if (!(fraction > 0.0 && fraction < 1.0)) throw DomainError("train fraction must be in (0, 1)");
  std::vector<std::size_t> idx(data.size());
  std::iota(idx.begin(), idx.end(), 0);
  Rng rng(seed);
  rng.shuffle(std::span<std::size_t>(idx));
  auto n_train = static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(data.size()) - 1e-9));
  n_train = std::clamp<std::size_t>(n_train, 1, data.size() - 1);
  std::span<const std::size_t> all(idx);
  return {data.subset(all.subspan(0, n_train)), data.subset(all.subspan(n_train))};
}

// ---------------------------------------------------------------------------
// Model

struct BoostParams {
  double learning_rate = 0.1;
  int max_depth = 3;
  int n_rounds = 100;
  double subsample = 1.0;
  double lambda_l2 = 1.0;
  double alpha_l1 = 0.0;
  double gamma_min_gain = 0.0;
  double min_child_hessian = 1.0;
  std::uint64_t seed = 0;

  void validate() const {
    if (!(learning_rate > 0.0 && learning_rate <= 1.0)) throw DomainError("learning_rate must be in (0, 1]");
    if (max_depth < 1) throw DomainError("max_depth must be >= 1");
    if (n_rounds < 0) throw DomainError("n_rounds must be >= 0");
    if (!(subsample > 0.0 && subsample <= 1.0)) throw DomainError("subsample must be in (0, 1]");
    if (!(lambda_l2 >= 0.0)) throw DomainError("lambda_l2 must be >= 0");
    if (!(alpha_l1 >= 0.0)) throw DomainError("alpha_l1 must be >= 0");
    if (!(gamma_min_gain >= 0.0)) throw DomainError("gamma_min_gain must be >= 0");
    if (!(min_child_hessian >= 0.0)) throw DomainError("min_child_hessian must be >= 0");
  }

  friend bool operator==(const BoostParams&, const BoostParams&) = default;
};

struct TreeNode {
  int feature = -1;  // -1 for leaves
  double threshold = 0.0;
  bool default_left = true;  // reserved for missing values
  int left = -1;
  int right = -1;
  double value = 0.0;  // leaf weight (before learning-rate scaling)
  double cover = std::numeric_limits<double>::quiet_NaN();  // training hessian mass reaching the node

  bool is_leaf() const noexcept { return feature < 0; }
};

struct Tree {
  std::vector<TreeNode> nodes;  // nodes[0] is the root

  int leaf_index(std::span<const double> x) const {
    int i = 0;
    while (!nodes[static_cast<std::size_t>(i)].is_leaf()) {
      const auto& n = nodes[static_cast<std::size_t>(i)];
      double v = x[static_cast<std::size_t>(n.feature)];
      bool go_left = std::isnan(v) ? n.default_left : v < n.threshold;
      i = go_left ? n.left : n.right;
    }
    return i;
  }
  double eval(std::span<const double> x) const { return nodes[static_cast<std::size_t>(leaf_index(x))].value; }

  int depth(int node = 0) const {
    const auto& n = nodes[static_cast<std::size_t>(node)];
    if (n.is_leaf()) return 0;
    return 1 + std::max(depth(n.left), depth(n.right));
  }

  bool has_cover() const {
    return std::all_of(nodes.begin(), nodes.end(), [](const auto& n) { return std::isfinite(n.cover); });
  }

  // Cover-weighted mean leaf value.
  double expected_value() const {
    double s = 0.0;
    for (const auto& n : nodes)
      if (n.is_leaf()) s += n.cover * n.value;
    return s / nodes[0].cover;
  }
};

struct TreeEnsemble {
  std::vector<Tree> trees;
  double base_prediction = 0.0;
  BoostParams params;
  std::vector<std::string> feature_names;

  std::size_t n_features() const noexcept { return feature_names.size(); }

  double predict(std::span<const double> x) const {
    if (x.size() != n_features())
      throw SchemaError("expected " + std::to_string(n_features()) + " features, got " + std::to_string(x.size()));
    double s = 0.0;
    for (const auto& t : trees) s += t.eval(x);
    return base_prediction + params.learning_rate * s;
  }

  std::vector<double> predict(const Dataset& data) const {
    if (data.n_features() != n_features())
      throw SchemaError("expected " + std::to_string(n_features()) + " features, got " +
                        std::to_string(data.n_features()));
    std::vector<double> out(data.size());
    for (std::size_t i = 0; i < data.size(); ++i) out[i] = predict(data.row(i));
    return out;
  }
};

struct FitTrace {
  std::vector<double> train_rmse;    // after each round, over all training rows
  std::vector<double> monitor_rmse;  // after each round, when a monitor set is given
};

namespace detail {

inline double soft_threshold(double g, double alpha) {
  double m = std::abs(g) - alpha;
  if (m <= 0.0) return 0.0;
  return g > 0 ? m : -m;
}

inline double leaf_weight(double G, double H, const BoostParams& p) {
  return -soft_threshold(G, p.alpha_l1) / (H + p.lambda_l2);
}

// Structure score T(G)^2 / (H + lambda); equals G^2 / (H + lambda) when alpha = 0.
inline double score(double G, double H, const BoostParams& p) {
  double t = soft_threshold(G, p.alpha_l1);
  double denom = H + p.lambda_l2;
  return denom > 0 ? t * t / denom : 0.0;
}

// Grows one tree level by level. `position[i]` holds the node of row i, or -1
// when row i is outside this round's sample. `distinct[f]` lists the sorted
// distinct training values of feature f; a threshold sits halfway between a
// value and its successor there, so every training row routes by rank alone.
inline Tree grow_tree(const Dataset& data, const std::vector<std::vector<std::size_t>>& sorted,
                      const std::vector<std::vector<double>>& distinct, std::span<const double> grad,
                      std::vector<int>& position, const BoostParams& p) {
  struct Stats {
    double G = 0.0, H = 0.0;
  };
  struct Candidate {
    double gain = 0.0;
    int feature = -1;
    double threshold = 0.0;
    Stats left;
  };
  struct Scan {
    double G = 0.0, H = 0.0, last = 0.0;
    bool started = false;
  };

  Tree tree;
  tree.nodes.emplace_back();
  std::vector<Stats> stats(1);
  for (std::size_t i = 0; i < position.size(); ++i)
    if (position[i] == 0) {
      stats[0].G += grad[i];
      stats[0].H += 1.0;
    }

  std::vector<int> frontier{0};
  for (int depth = 0; depth < p.max_depth && !frontier.empty(); ++depth) {
    std::vector<Candidate> best(tree.nodes.size());
    std::vector<char> open(tree.nodes.size(), 0);
    for (int n : frontier) open[static_cast<std::size_t>(n)] = 1;

    for (std::size_t f = 0; f < data.n_features(); ++f) {
      std::vector<Scan> scan(tree.nodes.size());
      for (std::size_t r : sorted[f]) {
        int node = position[r];
        if (node < 0 || !open[static_cast<std::size_t>(node)]) continue;
        auto& s = scan[static_cast<std::size_t>(node)];
        double v = data.at(r, f);
        if (s.started && v != s.last) {
          const auto& tot = stats[static_cast<std::size_t>(node)];
          double GR = tot.G - s.G, HR = tot.H - s.H;
          if (s.H >= p.min_child_hessian && HR >= p.min_child_hessian) {
            double gain =
                0.5 * (score(s.G, s.H, p) + score(GR, HR, p) - score(tot.G, tot.H, p)) - p.gamma_min_gain;
            auto& b = best[static_cast<std::size_t>(node)];
            if (gain > b.gain) {
              double next = *std::upper_bound(distinct[f].begin(), distinct[f].end(), s.last);
              double mid = s.last + (next - s.last) / 2.0;
              if (!(mid > s.last)) mid = next;
              b = {gain, static_cast<int>(f), mid, {s.G, s.H}};
            }
          }
        }
        s.G += grad[r];
        s.H += 1.0;
        s.last = v;
        s.started = true;
      }
    }

    std::vector<int> next;
    for (int n : frontier) {
      const auto& b = best[static_cast<std::size_t>(n)];
      if (b.feature < 0) continue;
      int l = static_cast<int>(tree.nodes.size());
      tree.nodes.emplace_back();
      tree.nodes.emplace_back();
      auto& node = tree.nodes[static_cast<std::size_t>(n)];
      node.feature = b.feature;
      node.threshold = b.threshold;
      node.left = l;
      node.right = l + 1;
      const Stats tot = stats[static_cast<std::size_t>(n)];
      stats.push_back(b.left);
      stats.push_back({tot.G - b.left.G, tot.H - b.left.H});
      next.push_back(l);
      next.push_back(l + 1);
    }
    if (next.empty()) break;
    for (std::size_t i = 0; i < position.size(); ++i) {
      int n = position[i];
      if (n < 0) continue;
      const auto& node = tree.nodes[static_cast<std::size_t>(n)];
      if (node.is_leaf() || !open[static_cast<std::size_t>(n)]) continue;
      position[i] = data.at(i, static_cast<std::size_t>(node.feature)) < node.threshold ? node.left : node.right;
    }
    frontier = std::move(next);
  }

  for (std::size_t n = 0; n < tree.nodes.size(); ++n) {
    tree.nodes[n].cover = stats[n].H;
    if (tree.nodes[n].is_leaf()) tree.nodes[n].value = leaf_weight(stats[n].G, stats[n].H, p);
  }
  return tree;
}

inline void check_finite(const Dataset& data) {
  for (double v : data.x)
    if (!std::isfinite(v)) throw DomainError("non-finite feature value");
  for (double v : data.y)
    if (!std::isfinite(v)) throw DomainError("non-finite target value");
}

}  // namespace detail

// Squared-error boosting: gradients g = prediction - y, hessians 1; base
// prediction is mean(y).
inline TreeEnsemble fit(const Dataset& train, const BoostParams& params, FitTrace* trace = nullptr,
                        const Dataset* monitor = nullptr) {
  params.validate();
  if (train.size() < 2) throw DomainError("fit needs at least 2 rows");
  if (train.n_features() < 1) throw DomainError("fit needs at least 1 feature");
  detail::check_finite(train);

  const std::size_t n = train.size();
  TreeEnsemble model;
  model.params = params;
  model.feature_names = train.feature_names;
  model.base_prediction = std::accumulate(train.y.begin(), train.y.end(), 0.0) / static_cast<double>(n);

  std::vector<std::vector<std::size_t>> sorted(train.n_features());
  for (std::size_t f = 0; f < train.n_features(); ++f) {
    auto& order = sorted[f];
    order.resize(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return train.at(a, f) < train.at(b, f); });
  }
  std::vector<std::vector<double>> distinct(train.n_features());
  for (std::size_t f = 0; f < train.n_features(); ++f) {
    for (std::size_t r : sorted[f])
      if (distinct[f].empty() || train.at(r, f) != distinct[f].back()) distinct[f].push_back(train.at(r, f));
  }

  std::vector<double> pred(n, model.base_prediction), grad(n);
  std::vector<double> monitor_pred;
  if (monitor) monitor_pred.assign(monitor->size(), model.base_prediction);
  std::vector<int> position(n);
  std::vector<std::size_t> perm(n);
  const auto sample_size = std::max<std::size_t>(
      1, static_cast<std::size_t>(std::llround(params.subsample * static_cast<double>(n))));

  for (int m = 0; m < params.n_rounds; ++m) {
    for (std::size_t i = 0; i < n; ++i) grad[i] = pred[i] - train.y[i];
    if (sample_size >= n) {
      std::fill(position.begin(), position.end(), 0);
    } else {
      std::iota(perm.begin(), perm.end(), 0);
      Rng rng(derive_seed(params.seed, static_cast<std::uint64_t>(m)));
      rng.shuffle(std::span<std::size_t>(perm));
      std::fill(position.begin(), position.end(), -1);
      for (std::size_t k = 0; k < sample_size; ++k) position[perm[k]] = 0;
    }
    Tree tree = detail::grow_tree(train, sorted, distinct, grad, position, params);
    for (std::size_t i = 0; i < n; ++i) pred[i] += params.learning_rate * tree.eval(train.row(i));
    if (monitor)
      for (std::size_t i = 0; i < monitor->size(); ++i)
        monitor_pred[i] += params.learning_rate * tree.eval(monitor->row(i));
    model.trees.push_back(std::move(tree));
    if (trace) {
      trace->train_rmse.push_back(rmse(pred, train.y));
      if (monitor && monitor->size() > 0) trace->monitor_rmse.push_back(rmse(monitor_pred, monitor->y));
    }
  }
  return model;
}

// ---------------------------------------------------------------------------
// Evaluation and model selection

struct Evaluation {
  double rmse = 0.0;
  double r_squared = 0.0;
  std::vector<double> observed;
  std::vector<double> predicted;
};

inline Evaluation evaluate(const TreeEnsemble& model, const Dataset& test) {
  if (test.size() == 0) throw EmptySelection("evaluation set is empty");
  Evaluation e;
  e.observed = test.y;
  e.predicted = model.predict(test);
  e.rmse = rmse(e.predicted, e.observed);
  double mean = std::accumulate(e.observed.begin(), e.observed.end(), 0.0) / static_cast<double>(test.size());
  double ss_tot = 0.0, ss_res = 0.0;
  for (std::size_t i = 0; i < test.size(); ++i) {
    ss_tot += (e.observed[i] - mean) * (e.observed[i] - mean);
    ss_res += (e.observed[i] - e.predicted[i]) * (e.observed[i] - e.predicted[i]);
  }
  e.r_squared = ss_tot > 0 ? 1.0 - ss_res / ss_tot : 0.0;
  return e;
}

struct GridPointScore {
  BoostParams params;
  std::vector<double> fold_rmse;
  double mean_rmse = 0.0;
};

struct CvResult {
  std::size_t best_index = 0;
  BoostParams best_params;
  std::vector<GridPointScore> scores;
};

// Fold id per row: seeded shuffle, then round-robin over the shuffled order.
inline std::vector<std::size_t> assign_folds(std::size_t n, std::size_t folds, std::uint64_t seed) {
  std::vector<std::size_t> order(n), fold(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(derive_seed(seed, 0xf01dULL));
  rng.shuffle(std::span<std::size_t>(order));
  for (std::size_t k = 0; k < n; ++k) fold[order[k]] = k % folds;
  return fold;
}

// k-fold CV over every grid point with one shared fold assignment; lowest mean
// validation RMSE wins, ties go to the earlier grid entry.
inline CvResult grid_search_cv(const Dataset& train, std::span<const BoostParams> grid, std::size_t folds = 10,
                               std::uint64_t seed = 0) {
  if (grid.empty()) throw DomainError("empty hyperparameter grid");
  if (folds < 2) throw DomainError("cross validation needs at least 2 folds");
  if (train.size() < folds) throw DomainError("fewer rows than folds");
  for (const auto& p : grid) p.validate();

  auto fold_of = assign_folds(train.size(), folds, seed);
  std::vector<Dataset> fit_sets(folds), val_sets(folds);
  for (std::size_t k = 0; k < folds; ++k) {
    std::vector<std::size_t> in, out;
    for (std::size_t i = 0; i < train.size(); ++i) (fold_of[i] == k ? out : in).push_back(i);
    fit_sets[k] = train.subset(in);
    val_sets[k] = train.subset(out);
  }

  std::vector<double> scores(grid.size() * folds);
  parallel_for(scores.size(), [&](std::size_t task) {
    std::size_t g = task / folds, k = task % folds;
    auto model = fit(fit_sets[k], grid[g]);
    scores[task] = rmse(model.predict(val_sets[k]), val_sets[k].y);
  });

  CvResult result;
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t g = 0; g < grid.size(); ++g) {
    GridPointScore s{grid[g], {scores.begin() + static_cast<std::ptrdiff_t>(g * folds),
                               scores.begin() + static_cast<std::ptrdiff_t>((g + 1) * folds)},
                     0.0};
    for (double v : s.fold_rmse) s.mean_rmse += v;
    s.mean_rmse /= static_cast<double>(folds);
    if (s.mean_rmse < best) {
      best = s.mean_rmse;
      result.best_index = g;
    }
    result.scores.push_back(std::move(s));
  }
  result.best_params = grid[result.best_index];
  return result;
}

// eta {0.05, 0.1, 0.3} x depth {2, 3, 4} x subsample {0.8, 1.0} x lambda {1, 10}
// x alpha {0, 1}; other fields come from `base`.
inline std::vector<BoostParams> default_grid(const BoostParams& base = {}) {
  std::vector<BoostParams> grid;
  for (double eta : {0.05, 0.1, 0.3})
    for (int depth : {2, 3, 4})
      for (double sub : {0.8, 1.0})
        for (double lambda : {1.0, 10.0})
          for (double alpha : {0.0, 1.0}) {
            BoostParams p = base;
            p.learning_rate = eta;
            p.max_depth = depth;
            p.subsample = sub;
            p.lambda_l2 = lambda;
            p.alpha_l1 = alpha;
            grid.push_back(p);
          }
  return grid;
}

// ---------------------------------------------------------------------------
// Serialization

inline json to_json(const BoostParams& p) {
  return {{"learning_rate", p.learning_rate}, {"max_depth", p.max_depth},
          {"n_rounds", p.n_rounds},           {"subsample", p.subsample},
          {"lambda_l2", p.lambda_l2},         {"alpha_l1", p.alpha_l1},
          {"gamma_min_gain", p.gamma_min_gain}, {"min_child_hessian", p.min_child_hessian},
          {"seed", p.seed}};
}

inline BoostParams params_from_json(const json& j, BoostParams p = {}) {
  if (!j.is_object()) throw SchemaError("boost params must be a JSON object");
  try {
    p.learning_rate = j.value("learning_rate", p.learning_rate);
    p.max_depth = j.value("max_depth", p.max_depth);
    p.n_rounds = j.value("n_rounds", p.n_rounds);
    p.subsample = j.value("subsample", p.subsample);
    p.lambda_l2 = j.value("lambda_l2", p.lambda_l2);
    p.alpha_l1 = j.value("alpha_l1", p.alpha_l1);
    p.gamma_min_gain = j.value("gamma_min_gain", p.gamma_min_gain);
    p.min_child_hessian = j.value("min_child_hessian", p.min_child_hessian);
    p.seed = j.value("seed", p.seed);
  } catch (const json::exception& e) {
    throw SchemaError(std::string("boost params: ") + e.what());
  }
  return p;
}

namespace detail {

inline json node_to_json(const Tree& t, int i) {
  const auto& n = t.nodes[static_cast<std::size_t>(i)];
  json j;
  if (std::isfinite(n.cover)) j["cover"] = n.cover;
  if (n.is_leaf()) {
    j["leaf"] = n.value;
    return j;
  }
  j["split_feature"] = n.feature;
  j["threshold"] = n.threshold;
  j["default_left"] = n.default_left;
  j["left"] = node_to_json(t, n.left);
  j["right"] = node_to_json(t, n.right);
  return j;
}

inline int node_from_json(const json& j, Tree& t, std::size_t n_features, int depth) {
  if (depth > 64) throw SchemaError("tree too deep");
  int idx = static_cast<int>(t.nodes.size());
  t.nodes.emplace_back();
  TreeNode node;
  if (j.contains("cover")) node.cover = j["cover"].get<double>();
  if (j.contains("leaf")) {
    node.value = j["leaf"].get<double>();
    if (!std::isfinite(node.value)) throw SchemaError("non-finite leaf weight");
  } else {
    node.feature = j.at("split_feature").get<int>();
    if (node.feature < 0 || static_cast<std::size_t>(node.feature) >= n_features)
      throw SchemaError("split feature out of range");
    node.threshold = j.at("threshold").get<double>();
    node.default_left = j.value("default_left", true);
    node.left = node_from_json(j.at("left"), t, n_features, depth + 1);
    node.right = node_from_json(j.at("right"), t, n_features, depth + 1);
  }
  t.nodes[static_cast<std::size_t>(idx)] = node;
  return idx;
}

}  // namespace detail

inline json to_json(const TreeEnsemble& m) {
  json trees = json::array();
  for (const auto& t : m.trees) trees.push_back(detail::node_to_json(t, 0));
  return {{"format", "coverbias-ensemble"},
          {"version", 1},
          {"base_prediction", m.base_prediction},
          {"params", to_json(m.params)},
          {"feature_names", m.feature_names},
          {"trees", trees}};
}

inline TreeEnsemble ensemble_from_json(const json& j) {
  try {
    if (j.value("format", "") != "coverbias-ensemble") throw SchemaError("not a coverbias ensemble document");
    if (j.value("version", 0) != 1) throw SchemaError("unsupported ensemble version");
    TreeEnsemble m;
    m.base_prediction = j.at("base_prediction").get<double>();
    m.params = params_from_json(j.at("params"));
    m.feature_names = j.at("feature_names").get<std::vector<std::string>>();
    for (const auto& tj : j.at("trees")) {
      Tree t;
      detail::node_from_json(tj, t, m.feature_names.size(), 0);
      m.trees.push_back(std::move(t));
    }
    return m;
  } catch (const json::exception& e) {
    throw SchemaError(std::string("ensemble: ") + e.what());
  }
}

}  // namespace coverbias::boosting
