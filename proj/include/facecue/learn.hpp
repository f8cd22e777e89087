#pragma once

// Linear SVM and random forest gender classifiers. Both expose the scalar
// they threshold ("critical value"):
//
//   SVM     signed distance (w.x + b) / |w|; negative => Male, otherwise Female.
//   Forest  fraction of trees voting Female; below 0.5 => Male, otherwise Female.
//
// Exact ties (distance 0, ratio 0.5) resolve to Female.

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "facecue/error.hpp"
#include "facecue/types.hpp"
#include "facecue/util.hpp"

namespace facecue {

using FeatureMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct Decision {
  Gender label = Gender::Female;
  double critical_value = 0.0;
};

inline Gender label_from_distance(double distance) { return distance < 0.0 ? Gender::Male : Gender::Female; }
inline Gender label_from_vote_ratio(double ratio) { return ratio < 0.5 ? Gender::Male : Gender::Female; }

namespace detail {

inline void check_training_set(Eigen::Index rows, Eigen::Index cols, std::span<const Gender> y) {
  if (static_cast<std::size_t>(rows) != y.size()) throw DimensionMismatch("label count differs from sample count");
  if (rows < 2) throw SingleClassError("need at least two samples");
  if (cols < 1) throw DimensionMismatch("feature dimension is zero");
  const bool has_f = std::find(y.begin(), y.end(), Gender::Female) != y.end();
  const bool has_m = std::find(y.begin(), y.end(), Gender::Male) != y.end();
  if (!has_f || !has_m) throw SingleClassError("training set contains a single gender");
}

inline double sign_of(Gender g) { return g == Gender::Female ? 1.0 : -1.0; }

}  // namespace detail

// ---------------------------------------------------------------------------
// Linear SVM

struct SvmParams {
  double C = 1.0;
  double tol = 1e-6;
  std::uint64_t seed = 0;
  long max_iterations = 10'000'000;
};

struct SvmModel {
  std::vector<double> weights;
  double bias = 0.0;
  double C = 1.0;
  struct Meta {
    std::size_t n_samples = 0;
    std::uint64_t seed = 0;
    long iterations = 0;
    double final_objective = 0.0;  // primal
    double dual_objective = 0.0;
    double kkt_gap = 0.0;
  } training_meta;
};

struct SvmDual {
  std::vector<double> alpha;
  double bias = 0.0;
  long iterations = 0;
  double kkt_gap = 0.0;
};

// Solves   min_a  1/2 a'Qa - sum(a)   s.t.  y'a = 0,  0 <= a <= C
// with Q_ij = y_i y_j K_ij, by sequential minimal optimization using
// second-order working-set selection. Stops when the maximal KKT violation
// m(a) - M(a) drops to `tol`. `rows` selects the training subset of the
// kernel matrix (all rows when empty).
inline SvmDual solve_svm_dual(const Eigen::MatrixXd& kernel, std::span<const Gender> labels,
                              std::span<const std::size_t> rows, const SvmParams& params) {
  const std::size_t n = rows.empty() ? labels.size() : rows.size();
  auto row = [&](std::size_t i) { return rows.empty() ? i : rows[i]; };
  std::vector<double> y(n), alpha(n, 0.0), grad(n, -1.0), diag(n);
  for (std::size_t i = 0; i < n; ++i) {
    y[i] = detail::sign_of(labels[i]);
    diag[i] = kernel(static_cast<Eigen::Index>(row(i)), static_cast<Eigen::Index>(row(i)));
  }
  auto k = [&](std::size_t i, std::size_t j) {
    return kernel(static_cast<Eigen::Index>(row(i)), static_cast<Eigen::Index>(row(j)));
  };
  const double C = params.C;
  constexpr double kTau = 1e-12;
  auto in_up = [&](std::size_t t) { return (y[t] > 0 && alpha[t] < C) || (y[t] < 0 && alpha[t] > 0); };
  auto in_low = [&](std::size_t t) { return (y[t] > 0 && alpha[t] > 0) || (y[t] < 0 && alpha[t] < C); };

  SvmDual out;
  long iter = 0;
  double gap = 0.0;
  for (; iter < params.max_iterations; ++iter) {
    // i: maximal violator in I_up.
    double gmax = -std::numeric_limits<double>::infinity();
    std::ptrdiff_t i = -1;
    for (std::size_t t = 0; t < n; ++t) {
      if (in_up(t) && -y[t] * grad[t] > gmax) {
        gmax = -y[t] * grad[t];
        i = static_cast<std::ptrdiff_t>(t);
      }
    }
    double gmin = std::numeric_limits<double>::infinity();
    std::ptrdiff_t j = -1;
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t t = 0; t < n; ++t) {
      if (!in_low(t)) continue;
      const double v = -y[t] * grad[t];
      gmin = std::min(gmin, v);
      if (i < 0) continue;
      const double b = gmax - v;
      if (b > 0) {
        const auto ii = static_cast<std::size_t>(i);
        double a = diag[ii] + diag[t] - 2.0 * k(ii, t);
        if (a <= 0) a = kTau;
        const double score = -(b * b) / a;
        if (score < best) {
          best = score;
          j = static_cast<std::ptrdiff_t>(t);
        }
      }
    }
    gap = gmax - gmin;
    if (i < 0 || j < 0 || gap <= params.tol) break;

    const auto ii = static_cast<std::size_t>(i), jj = static_cast<std::size_t>(j);
    double a = diag[ii] + diag[jj] - 2.0 * k(ii, jj);
    if (a <= 0) a = kTau;
    const double b = -y[ii] * grad[ii] + y[jj] * grad[jj];
    const double old_ai = alpha[ii], old_aj = alpha[jj];
    // Step along the feasible direction (y_i, -y_j).
    double ai = old_ai + y[ii] * b / a;
    double aj = old_aj - y[jj] * b / a;
    const double sum = y[ii] * old_ai + y[jj] * old_aj;
    ai = std::clamp(ai, 0.0, C);
    aj = y[jj] * (sum - y[ii] * ai);
    aj = std::clamp(aj, 0.0, C);
    ai = y[ii] * (sum - y[jj] * aj);
    ai = std::clamp(ai, 0.0, C);
    const double dai = ai - old_ai, daj = aj - old_aj;
    alpha[ii] = ai;
    alpha[jj] = aj;
    for (std::size_t t = 0; t < n; ++t) {
      grad[t] += y[t] * (y[ii] * k(t, ii) * dai + y[jj] * k(t, jj) * daj);
    }
  }

  // b = -rho, rho averaged over free vectors (midpoint of the feasible
  // interval when none are free).
  double sum_free = 0.0;
  std::size_t n_free = 0;
  double ub = std::numeric_limits<double>::infinity(), lb = -std::numeric_limits<double>::infinity();
  for (std::size_t t = 0; t < n; ++t) {
    const double yg = y[t] * grad[t];
    if (alpha[t] > 0 && alpha[t] < C) {
      sum_free += yg;
      ++n_free;
    } else if ((alpha[t] >= C && y[t] < 0) || (alpha[t] <= 0 && y[t] > 0)) {
      ub = std::min(ub, yg);
    } else {
      lb = std::max(lb, yg);
    }
  }
  const double rho = n_free > 0 ? sum_free / static_cast<double>(n_free) : (ub + lb) / 2.0;
  out.alpha = std::move(alpha);
  out.bias = -rho;
  out.iterations = iter;
  out.kkt_gap = gap;
  return out;
}

namespace detail {

inline SvmModel finish_svm(const FeatureMatrix& X, const Eigen::MatrixXd& kernel, std::span<const Gender> labels,
                           std::span<const std::size_t> rows, const SvmParams& params) {
  SvmDual dual = solve_svm_dual(kernel, labels, rows, params);
  const std::size_t n = labels.size();
  auto row = [&](std::size_t i) { return static_cast<Eigen::Index>(rows.empty() ? i : rows[i]); };
  Eigen::VectorXd w = Eigen::VectorXd::Zero(X.cols());
  std::vector<double> coef(n);
  double alpha_sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    coef[i] = dual.alpha[i] * sign_of(labels[i]);
    alpha_sum += dual.alpha[i];
    if (coef[i] != 0.0) w += coef[i] * X.row(row(i)).transpose();
  }
  // Objectives through the kernel: w.w = c'Kc, margins = (Kc)_i.
  double wnorm2 = 0.0, hinge = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double f = 0.0;
    for (std::size_t j = 0; j < n; ++j) f += kernel(row(i), row(j)) * coef[j];
    wnorm2 += coef[i] * f;
    hinge += std::max(0.0, 1.0 - sign_of(labels[i]) * (f + dual.bias));
  }
  SvmModel m;
  m.weights.assign(w.data(), w.data() + w.size());
  m.bias = dual.bias;
  m.C = params.C;
  m.training_meta = {n, params.seed, dual.iterations, 0.5 * wnorm2 + params.C * hinge, alpha_sum - 0.5 * wnorm2,
                     dual.kkt_gap};
  return m;
}

}  // namespace detail

inline Eigen::MatrixXd gram_matrix(const FeatureMatrix& X) {
  Eigen::MatrixXd k = X * X.transpose();
  return k;
}

// Minimizes 1/2|w|^2 + C sum hinge(y_i (w.x_i + b)), Female = +1.
inline SvmModel train_linear_svm(const FeatureMatrix& X, std::span<const Gender> y, const SvmParams& params = {}) {
  detail::check_training_set(X.rows(), X.cols(), y);
  if (!(params.C > 0.0)) throw InvariantError("C must be positive");
  if (!X.allFinite()) throw InvariantError("training features contain non-finite values");
  return detail::finish_svm(X, gram_matrix(X), y, {}, params);
}

// Trains on rows `rows` of X, reusing a precomputed Gram matrix of all of X.
// `y[i]` labels row `rows[i]`.
inline SvmModel train_linear_svm(const FeatureMatrix& X, const Eigen::MatrixXd& gram, std::span<const std::size_t> rows,
                                 std::span<const Gender> y, const SvmParams& params = {}) {
  if (rows.size() != y.size()) throw DimensionMismatch("label count differs from selected rows");
  detail::check_training_set(static_cast<Eigen::Index>(rows.size()), X.cols(), y);
  if (!(params.C > 0.0)) throw InvariantError("C must be positive");
  return detail::finish_svm(X, gram, y, rows, params);
}

inline double svm_score(const SvmModel& model, std::span<const double> x) {
  if (x.size() != model.weights.size()) {
    throw DimensionMismatch("input has " + std::to_string(x.size()) + " features, model expects " +
                            std::to_string(model.weights.size()));
  }
  double s = model.bias;
  for (std::size_t i = 0; i < x.size(); ++i) s += model.weights[i] * x[i];
  return s;
}

inline Decision svm_decide(const SvmModel& model, std::span<const double> x) {
  const double score = svm_score(model, x);
  double norm = 0.0;
  for (double w : model.weights) norm += w * w;
  norm = std::sqrt(norm);
  // A zero weight vector leaves only the bias to decide.
  const double cv = norm > 0.0 ? score / norm : score;
  return {label_from_distance(cv), cv};
}

// ---------------------------------------------------------------------------
// Random forest

struct ForestParams {
  int n_trees = 100;
  std::uint64_t seed = 0;
  int max_features = 0;  // 0 => floor(sqrt(d))
  int min_leaf = 1;
};

struct DecisionTree {
  // Node arrays; leaves have feature == -1.
  std::vector<int> feature;
  std::vector<double> threshold;
  std::vector<int> left;
  std::vector<int> right;
  std::vector<Gender> label;

  Gender predict(std::span<const double> x) const {
    std::size_t node = 0;
    while (feature[node] >= 0) {
      node = static_cast<std::size_t>(x[static_cast<std::size_t>(feature[node])] <= threshold[node] ? left[node]
                                                                                                      : right[node]);
    }
    return label[node];
  }

  bool operator==(const DecisionTree&) const = default;
};

struct ForestModel {
  std::vector<DecisionTree> trees;
  int n_trees = 0;
  std::uint64_t seed = 0;
  std::size_t n_features = 0;
  double oob_accuracy = std::numeric_limits<double>::quiet_NaN();
};

namespace detail {

class TreeBuilder {
 public:
  TreeBuilder(const FeatureMatrix& X, std::span<const Gender> y, std::span<const std::size_t> rows, int max_features,
              int min_leaf, std::mt19937_64& rng)
      : X_(X), y_(y), rows_(rows), max_features_(max_features), min_leaf_(min_leaf), rng_(rng) {}

  DecisionTree build(std::vector<std::size_t> sample) {
    grow(std::move(sample));
    return std::move(tree_);
  }

 private:
  Gender y_of(std::size_t s) const { return y_[s]; }
  double x_of(std::size_t s, int f) const {
    return X_(static_cast<Eigen::Index>(rows_.empty() ? s : rows_[s]), f);
  }

  int add_leaf(Gender g) {
    tree_.feature.push_back(-1);
    tree_.threshold.push_back(0.0);
    tree_.left.push_back(-1);
    tree_.right.push_back(-1);
    tree_.label.push_back(g);
    return static_cast<int>(tree_.feature.size()) - 1;
  }

  struct Split {
    int feature = -1;
    double threshold = 0.0;
    double impurity = std::numeric_limits<double>::infinity();
  };

  Split best_split_on(const std::vector<std::size_t>& sample, int f) const {
    std::vector<std::pair<double, Gender>> v;
    v.reserve(sample.size());
    for (auto s : sample) v.push_back({x_of(s, f), y_of(s)});
    std::sort(v.begin(), v.end(), [](const auto& a, const auto& b) {
      return a.first < b.first || (a.first == b.first && a.second < b.second);
    });
    const double n = static_cast<double>(v.size());
    double total_f = 0;
    for (const auto& e : v) total_f += e.second == Gender::Female;
    double left_f = 0;
    Split best;
    const auto min_leaf = static_cast<std::size_t>(min_leaf_);
    for (std::size_t i = 0; i + 1 < v.size(); ++i) {
      left_f += v[i].second == Gender::Female;
      if (v[i].first == v[i + 1].first) continue;
      const std::size_t nl = i + 1, nr = v.size() - nl;
      if (nl < min_leaf || nr < min_leaf) continue;
      const double pl = left_f / static_cast<double>(nl);
      const double pr = (total_f - left_f) / static_cast<double>(nr);
      const double gini = (static_cast<double>(nl) * 2.0 * pl * (1.0 - pl) +
                           static_cast<double>(nr) * 2.0 * pr * (1.0 - pr)) / n;
      if (gini < best.impurity) {
        best.feature = f;
        best.impurity = gini;
        best.threshold = v[i].first + (v[i + 1].first - v[i].first) / 2.0;
        // Midpoint can round up to the right value for adjacent doubles.
        if (!(best.threshold < v[i + 1].first)) best.threshold = v[i].first;
      }
    }
    return best;
  }

  int grow(std::vector<std::size_t> sample) {
    std::size_t n_f = 0;
    for (auto s : sample) n_f += y_of(s) == Gender::Female;
    const Gender majority = 2 * n_f >= sample.size() ? Gender::Female : Gender::Male;
    if (n_f == 0 || n_f == sample.size() || sample.size() < 2 * static_cast<std::size_t>(min_leaf_)) {
      return add_leaf(majority);
    }
    // Random feature order; the first max_features are the candidates. If
    // none of them can split the node, keep drawing from the rest.
    const int d = static_cast<int>(X_.cols());
    std::vector<int> order(static_cast<std::size_t>(d));
    std::iota(order.begin(), order.end(), 0);
    Split best;
    int examined = 0;
    for (int t = 0; t < d; ++t) {
      std::uniform_int_distribution<int> pick(t, d - 1);
      std::swap(order[static_cast<std::size_t>(t)], order[static_cast<std::size_t>(pick(rng_))]);
      const Split s = best_split_on(sample, order[static_cast<std::size_t>(t)]);
      if (s.impurity < best.impurity) best = s;
      ++examined;
      if (examined >= max_features_ && best.feature >= 0) break;
    }
    if (best.feature < 0) return add_leaf(majority);

    std::vector<std::size_t> ls, rs;
    for (auto s : sample) (x_of(s, best.feature) <= best.threshold ? ls : rs).push_back(s);
    sample.clear();
    sample.shrink_to_fit();
    const int node = add_leaf(majority);
    tree_.feature[static_cast<std::size_t>(node)] = best.feature;
    tree_.threshold[static_cast<std::size_t>(node)] = best.threshold;
    const int l = grow(std::move(ls));
    tree_.left[static_cast<std::size_t>(node)] = l;
    const int r = grow(std::move(rs));
    tree_.right[static_cast<std::size_t>(node)] = r;
    return node;
  }

  const FeatureMatrix& X_;
  std::span<const Gender> y_;
  std::span<const std::size_t> rows_;
  int max_features_;
  int min_leaf_;
  std::mt19937_64& rng_;
  DecisionTree tree_;
};

inline ForestModel train_forest_impl(const FeatureMatrix& X, std::span<const Gender> y,
                                     std::span<const std::size_t> rows, const ForestParams& params,
                                     std::size_t jobs) {
  if (params.n_trees < 1) throw InvariantError("n_trees must be positive");
  if (params.min_leaf < 1) throw InvariantError("min_leaf must be positive");
  const std::size_t n = y.size();
  const int d = static_cast<int>(X.cols());
  const int mf = params.max_features > 0 ? std::min(params.max_features, d)
                                         : std::max(1, static_cast<int>(std::floor(std::sqrt(static_cast<double>(d)))));
  ForestModel model;
  model.n_trees = params.n_trees;
  model.seed = params.seed;
  model.n_features = static_cast<std::size_t>(d);
  model.trees.resize(static_cast<std::size_t>(params.n_trees));
  std::vector<std::vector<char>> in_bag(static_cast<std::size_t>(params.n_trees), std::vector<char>(n, 0));

  parallel_for(static_cast<std::size_t>(params.n_trees), jobs, [&](std::size_t t) {
    std::mt19937_64 rng(derive_seed(params.seed, static_cast<std::uint64_t>(t)));
    std::uniform_int_distribution<std::size_t> draw(0, n - 1);
    std::vector<std::size_t> sample(n);
    for (auto& s : sample) {
      s = draw(rng);
      in_bag[t][s] = 1;
    }
    TreeBuilder builder(X, y, rows, mf, params.min_leaf, rng);
    model.trees[t] = builder.build(std::move(sample));
  });

  std::size_t scored = 0, correct = 0;
  std::vector<double> xrow(static_cast<std::size_t>(d));
  for (std::size_t i = 0; i < n; ++i) {
    const auto r = static_cast<Eigen::Index>(rows.empty() ? i : rows[i]);
    for (int f = 0; f < d; ++f) xrow[static_cast<std::size_t>(f)] = X(r, f);
    std::size_t votes = 0, female = 0;
    for (std::size_t t = 0; t < model.trees.size(); ++t) {
      if (in_bag[t][i]) continue;
      ++votes;
      female += model.trees[t].predict(xrow) == Gender::Female;
    }
    if (votes == 0) continue;
    ++scored;
    correct += label_from_vote_ratio(static_cast<double>(female) / static_cast<double>(votes)) == y[i];
  }
  if (scored > 0) model.oob_accuracy = static_cast<double>(correct) / static_cast<double>(scored);
  return model;
}

}  // namespace detail

// Bootstrap-aggregated Gini trees. Tree t draws its bootstrap sample and
// candidate features from an RNG seeded with derive_seed(seed, t), so the
// forest does not depend on `jobs`.
inline ForestModel train_random_forest(const FeatureMatrix& X, std::span<const Gender> y,
                                       const ForestParams& params = {}, std::size_t jobs = 1) {
  detail::check_training_set(X.rows(), X.cols(), y);
  if (!X.allFinite()) throw InvariantError("training features contain non-finite values");
  return detail::train_forest_impl(X, y, {}, params, jobs);
}

inline ForestModel train_random_forest(const FeatureMatrix& X, std::span<const std::size_t> rows,
                                       std::span<const Gender> y, const ForestParams& params = {},
                                       std::size_t jobs = 1) {
  if (rows.size() != y.size()) throw DimensionMismatch("label count differs from selected rows");
  detail::check_training_set(static_cast<Eigen::Index>(rows.size()), X.cols(), y);
  return detail::train_forest_impl(X, y, rows, params, jobs);
}

inline Decision forest_decide(const ForestModel& model, std::span<const double> x) {
  if (x.size() != model.n_features) {
    throw DimensionMismatch("input has " + std::to_string(x.size()) + " features, model expects " +
                            std::to_string(model.n_features));
  }
  std::size_t female = 0;
  for (const auto& t : model.trees) female += t.predict(x) == Gender::Female;
  const double ratio = static_cast<double>(female) / static_cast<double>(model.trees.size());
  return {label_from_vote_ratio(ratio), ratio};
}

// ---------------------------------------------------------------------------
// JSON model files
//
// SVM:    {"type":"linear_svm","weights":[...],"bias":b,"C":c,
//          "training_meta":{"n_samples","seed","iterations","final_objective",
//                           "dual_objective","kkt_gap"}}
// Forest: {"type":"random_forest","n_trees":T,"seed":s,"n_features":d,
//          "oob_accuracy":a|null,
//          "trees":[{"feature":[...],"threshold":[...],"left":[...],
//                    "right":[...],"label":["Female"|"Male",...]}]}

inline nlohmann::json to_json(const SvmModel& m) {
  return {{"type", "linear_svm"},
          {"weights", m.weights},
          {"bias", m.bias},
          {"C", m.C},
          {"training_meta",
           {{"n_samples", m.training_meta.n_samples},
            {"seed", m.training_meta.seed},
            {"iterations", m.training_meta.iterations},
            {"final_objective", m.training_meta.final_objective},
            {"dual_objective", m.training_meta.dual_objective},
            {"kkt_gap", m.training_meta.kkt_gap}}}};
}

inline SvmModel svm_from_json(const nlohmann::json& j) {
  try {
    if (j.at("type") != "linear_svm") throw ParseError("model type is not linear_svm");
    SvmModel m;
    m.weights = j.at("weights").get<std::vector<double>>();
    m.bias = j.at("bias").get<double>();
    m.C = j.at("C").get<double>();
    const auto& meta = j.at("training_meta");
    m.training_meta = {meta.at("n_samples").get<std::size_t>(), meta.at("seed").get<std::uint64_t>(),
                       meta.at("iterations").get<long>(), meta.at("final_objective").get<double>(),
                       meta.at("dual_objective").get<double>(), meta.at("kkt_gap").get<double>()};
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("SVM model JSON: ") + e.what());
  }
}

inline nlohmann::json to_json(const ForestModel& m) {
  nlohmann::json trees = nlohmann::json::array();
  for (const auto& t : m.trees) {
    std::vector<std::string> labels;
    for (auto g : t.label) labels.emplace_back(to_string(g));
    trees.push_back({{"feature", t.feature},
                     {"threshold", t.threshold},
                     {"left", t.left},
                     {"right", t.right},
                     {"label", labels}});
  }
  nlohmann::json oob = std::isnan(m.oob_accuracy) ? nlohmann::json(nullptr) : nlohmann::json(m.oob_accuracy);
  return {{"type", "random_forest"}, {"n_trees", m.n_trees},   {"seed", m.seed},
          {"n_features", m.n_features}, {"oob_accuracy", oob}, {"trees", trees}};
}

inline ForestModel forest_from_json(const nlohmann::json& j) {
  try {
    if (j.at("type") != "random_forest") throw ParseError("model type is not random_forest");
    ForestModel m;
    m.n_trees = j.at("n_trees").get<int>();
    m.seed = j.at("seed").get<std::uint64_t>();
    m.n_features = j.at("n_features").get<std::size_t>();
    if (!j.at("oob_accuracy").is_null()) m.oob_accuracy = j.at("oob_accuracy").get<double>();
    for (const auto& jt : j.at("trees")) {
      DecisionTree t;
      t.feature = jt.at("feature").get<std::vector<int>>();
      t.threshold = jt.at("threshold").get<std::vector<double>>();
      t.left = jt.at("left").get<std::vector<int>>();
      t.right = jt.at("right").get<std::vector<int>>();
      for (const auto& s : jt.at("label")) t.label.push_back(parse_gender(s.get<std::string>()));
      const auto nodes = t.feature.size();
      if (t.threshold.size() != nodes || t.left.size() != nodes || t.right.size() != nodes || t.label.size() != nodes ||
          nodes == 0) {
        throw ParseError("tree arrays differ in length");
      }
      for (std::size_t k = 0; k < nodes; ++k) {
        if (t.feature[k] >= static_cast<int>(m.n_features)) throw ParseError("split feature out of range");
        if (t.feature[k] >= 0 && (t.left[k] <= static_cast<int>(k) || t.right[k] <= static_cast<int>(k) ||
                                  t.left[k] >= static_cast<int>(nodes) || t.right[k] >= static_cast<int>(nodes))) {
          throw ParseError("tree child index out of range");
        }
      }
      m.trees.push_back(std::move(t));
    }
    if (static_cast<int>(m.trees.size()) != m.n_trees) throw ParseError("tree count differs from n_trees");
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("forest model JSON: ") + e.what());
  }
}

}  // namespace facecue
