#pragma once

// Subject-independent evaluation protocols:
//
//  - leave-one-subject-out over a pooled feature set,
//  - the 5 x 5 train-expression / test-expression matrix,
//  - per-expression runs on expression-difference features,
//  - histograms of critical values for expressive vs neutral scans.
//
// Every fold is an independent job seeded from (master seed, subject id), so
// results do not depend on the number of worker threads.

#include <nlohmann/json.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <memory>
#include <set>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "facecue/error.hpp"
#include "facecue/learn.hpp"
#include "facecue/mesh_io.hpp"
#include "facecue/types.hpp"
#include "facecue/util.hpp"

namespace facecue {

struct SampleInfo {
  std::string scan_id;
  std::string subject_id;
  Gender gender = Gender::Female;
  Expression expression = Expression::Neutral;
};

struct LabeledFeatureSet {
  std::vector<SampleInfo> samples;
  FeatureMatrix X;

  std::size_t size() const { return samples.size(); }

  void validate() const {
    if (static_cast<std::size_t>(X.rows()) != samples.size()) {
      throw DimensionMismatch("feature rows differ from sample records");
    }
  }

  LabeledFeatureSet subset(const std::vector<std::size_t>& rows) const {
    LabeledFeatureSet out;
    out.X.resize(static_cast<Eigen::Index>(rows.size()), X.cols());
    for (std::size_t i = 0; i < rows.size(); ++i) {
      out.samples.push_back(samples[rows[i]]);
      out.X.row(static_cast<Eigen::Index>(i)) = X.row(static_cast<Eigen::Index>(rows[i]));
    }
    return out;
  }

  LabeledFeatureSet with_expression(Expression e) const {
    std::vector<std::size_t> rows;
    for (std::size_t i = 0; i < samples.size(); ++i) {
      if (samples[i].expression == e) rows.push_back(i);
    }
    return subset(rows);
  }
};

enum class ClassifierKind { SVM, Forest };

inline std::string_view to_string(ClassifierKind k) { return k == ClassifierKind::SVM ? "svm" : "forest"; }

inline ClassifierKind parse_classifier(std::string_view s) {
  if (s == "svm" || s == "SVM") return ClassifierKind::SVM;
  if (s == "forest" || s == "rf" || s == "Forest") return ClassifierKind::Forest;
  throw ConfigError("unknown classifier '" + std::string(s) + "'");
}

struct ClassifierParams {
  ClassifierKind kind = ClassifierKind::SVM;
  SvmParams svm;
  ForestParams forest;
};

inline nlohmann::json to_json(const ClassifierParams& p) {
  return {{"classifier", to_string(p.kind)},
          {"svm", {{"C", p.svm.C}, {"tol", p.svm.tol}, {"max_iterations", p.svm.max_iterations}}},
          {"forest",
           {{"n_trees", p.forest.n_trees}, {"max_features", p.forest.max_features}, {"min_leaf", p.forest.min_leaf}}}};
}

struct ScanDecision {
  std::string scan_id;
  std::string subject_id;
  Expression expression = Expression::Neutral;
  Gender true_gender = Gender::Female;
  Decision decision;

  bool correct() const { return decision.label == true_gender; }
};

struct Rates {
  double female = 0.0;
  double male = 0.0;
  double overall = 0.0;
  std::size_t n_female = 0;
  std::size_t n_male = 0;

  std::size_t n() const { return n_female + n_male; }
  bool operator==(const Rates&) const = default;
};

struct FoldAudit {
  std::string test_subject;
  std::vector<std::string> train_subjects;  // sorted
  std::string train_expression;             // empty for pooled folds
};

struct EvalReport {
  std::vector<ScanDecision> per_scan;
  Rates rates;
  nlohmann::json config;
  std::vector<FoldAudit> audit;
};

inline Rates compute_rates(const std::vector<ScanDecision>& per_scan) {
  Rates r;
  std::size_t cf = 0, cm = 0;
  for (const auto& d : per_scan) {
    if (d.true_gender == Gender::Female) {
      ++r.n_female;
      cf += d.correct();
    } else {
      ++r.n_male;
      cm += d.correct();
    }
  }
  r.female = r.n_female ? static_cast<double>(cf) / static_cast<double>(r.n_female) : 0.0;
  r.male = r.n_male ? static_cast<double>(cm) / static_cast<double>(r.n_male) : 0.0;
  r.overall = r.n() ? static_cast<double>(cf + cm) / static_cast<double>(r.n()) : 0.0;
  return r;
}

// True when no fold trained on its held-out subject.
inline bool audit_is_subject_independent(const std::vector<FoldAudit>& audit) {
  return std::all_of(audit.begin(), audit.end(), [](const FoldAudit& f) {
    return !std::binary_search(f.train_subjects.begin(), f.train_subjects.end(), f.test_subject);
  });
}

// Checks the report's protocol invariants: subject independence of every
// fold and stored rates equal to rates recomputed from per-scan decisions.
inline bool verify_report(const EvalReport& r) {
  return audit_is_subject_independent(r.audit) && compute_rates(r.per_scan) == r.rates;
}

namespace detail {

// Trains on `train` rows and returns a decision function. The Gram matrix,
// when given, covers all rows of X.
class FoldModel {
 public:
  FoldModel(const LabeledFeatureSet& set, const Eigen::MatrixXd* gram, const std::vector<std::size_t>& train,
            const ClassifierParams& params, std::uint64_t seed)
      : kind_(params.kind) {
    std::vector<Gender> y;
    y.reserve(train.size());
    bool f = false, m = false;
    for (auto i : train) {
      y.push_back(set.samples[i].gender);
      (set.samples[i].gender == Gender::Female ? f : m) = true;
    }
    if (!f || !m) throw SingleClassFold("training fold contains a single gender");
    if (kind_ == ClassifierKind::SVM) {
      SvmParams p = params.svm;
      p.seed = seed;
      svm_ = gram ? train_linear_svm(set.X, *gram, train, y, p)
                  : train_linear_svm(set.subset(train).X, y, p);
    } else {
      ForestParams p = params.forest;
      p.seed = seed;
      forest_ = train_random_forest(set.X, train, y, p, 1);
    }
  }

  Decision decide(const LabeledFeatureSet& set, std::size_t row) const {
    const auto r = set.X.row(static_cast<Eigen::Index>(row));
    std::span<const double> x(r.data(), static_cast<std::size_t>(r.size()));
    return kind_ == ClassifierKind::SVM ? svm_decide(svm_, x) : forest_decide(forest_, x);
  }

 private:
  ClassifierKind kind_;
  SvmModel svm_;
  ForestModel forest_;
};

inline std::vector<std::string> sorted_subjects(const LabeledFeatureSet& set) {
  std::set<std::string> s;
  for (const auto& x : set.samples) s.insert(x.subject_id);
  return {s.begin(), s.end()};
}

inline std::vector<std::string> subjects_of(const LabeledFeatureSet& set, const std::vector<std::size_t>& rows) {
  std::set<std::string> s;
  for (auto i : rows) s.insert(set.samples[i].subject_id);
  return {s.begin(), s.end()};
}

inline std::unique_ptr<Eigen::MatrixXd> maybe_gram(const LabeledFeatureSet& set, const ClassifierParams& params) {
  if (params.kind != ClassifierKind::SVM) return nullptr;
  if (!set.X.allFinite()) throw InvariantError("features contain non-finite values");
  return std::make_unique<Eigen::MatrixXd>(gram_matrix(set.X));
}

}  // namespace detail

// One fold per subject: all of the subject's scans are tested by a model
// trained on every other subject's scans.
inline EvalReport loo_subject_cv(const LabeledFeatureSet& set, const ClassifierParams& params,
                                 std::uint64_t master_seed, std::size_t jobs = 1) {
  set.validate();
  const auto subjects = detail::sorted_subjects(set);
  if (subjects.size() < 2) throw TooFewSamples("leave-one-subject-out needs at least two subjects");
  const auto gram = detail::maybe_gram(set, params);

  std::unordered_map<std::string, std::vector<std::size_t>> rows_of;
  for (std::size_t i = 0; i < set.size(); ++i) rows_of[set.samples[i].subject_id].push_back(i);

  std::vector<Decision> decisions(set.size());
  std::vector<FoldAudit> audit(subjects.size());
  parallel_for(subjects.size(), jobs, [&](std::size_t f) {
    const auto& subject = subjects[f];
    std::vector<std::size_t> train;
    for (std::size_t i = 0; i < set.size(); ++i) {
      if (set.samples[i].subject_id != subject) train.push_back(i);
    }
    detail::FoldModel model(set, gram.get(), train, params, derive_seed(master_seed, subject));
    for (auto i : rows_of[subject]) decisions[i] = model.decide(set, i);
    audit[f] = {subject, detail::subjects_of(set, train), {}};
  });

  EvalReport report;
  for (std::size_t i = 0; i < set.size(); ++i) {
    const auto& s = set.samples[i];
    report.per_scan.push_back({s.scan_id, s.subject_id, s.expression, s.gender, decisions[i]});
  }
  report.rates = compute_rates(report.per_scan);
  report.audit = std::move(audit);
  report.config = to_json(params);
  report.config["protocol"] = "leave_one_subject_out";
  report.config["master_seed"] = master_seed;
  report.config["n_scans"] = set.size();
  report.config["n_subjects"] = subjects.size();
  return report;
}

// ---------------------------------------------------------------------------

struct MatrixCell {
  double accuracy = 0.0;
  std::size_t n_test = 0;
  std::size_t n_correct = 0;
};

struct ExpressionMatrix {
  std::array<std::array<MatrixCell, 5>, 5> cells{};  // [train][test]
  nlohmann::json config;
  std::vector<FoldAudit> audit;

  const MatrixCell& at(Expression train, Expression test) const { return cells[index_of(train)][index_of(test)]; }

  double diagonal_mean() const {
    double s = 0;
    for (std::size_t i = 0; i < 5; ++i) s += cells[i][i].accuracy;
    return s / 5.0;
  }
  double off_diagonal_mean() const {
    double s = 0;
    for (std::size_t i = 0; i < 5; ++i)
      for (std::size_t j = 0; j < 5; ++j)
        if (i != j) s += cells[i][j].accuracy;
    return s / 20.0;
  }
  // Pooled accuracy of the diagonal cells (weighted by test scans).
  double diagonal_weighted() const {
    std::size_t c = 0, n = 0;
    for (std::size_t i = 0; i < 5; ++i) {
      c += cells[i][i].n_correct;
      n += cells[i][i].n_test;
    }
    return n ? static_cast<double>(c) / static_cast<double>(n) : 0.0;
  }
  double row_mean(Expression train) const {
    double s = 0;
    for (const auto& c : cells[index_of(train)]) s += c.accuracy;
    return s / 5.0;
  }
  double row_weighted(Expression train) const {
    std::size_t c = 0, n = 0;
    for (const auto& cell : cells[index_of(train)]) {
      c += cell.n_correct;
      n += cell.n_test;
    }
    return n ? static_cast<double>(c) / static_cast<double>(n) : 0.0;
  }
};

// Cell (E, F): models trained on expression-E scans, tested on expression-F
// scans. Every test scan is classified by a model whose training set
// excludes the scan's subject, so the diagonal is leave-one-subject-out
// within E and off-diagonal cells stay subject independent too.
inline ExpressionMatrix expression_specific_matrix(const LabeledFeatureSet& set, const ClassifierParams& params,
                                                   std::uint64_t master_seed, std::size_t jobs = 1) {
  set.validate();
  const auto subjects = detail::sorted_subjects(set);
  std::array<std::vector<std::size_t>, 5> by_expr;
  for (std::size_t i = 0; i < set.size(); ++i) by_expr[index_of(set.samples[i].expression)].push_back(i);
  for (Expression e : kAllExpressions) {
    const auto& rows = by_expr[index_of(e)];
    bool f = false, m = false;
    for (auto i : rows) (set.samples[i].gender == Gender::Female ? f : m) = true;
    if (!f || !m) {
      throw SingleClassFold(std::string(to_string(e)) + " subset is empty or contains a single gender");
    }
  }
  const auto gram = detail::maybe_gram(set, params);
  std::unordered_map<std::string, std::vector<std::size_t>> rows_of;
  for (std::size_t i = 0; i < set.size(); ++i) rows_of[set.samples[i].subject_id].push_back(i);

  const std::size_t n_jobs = 5 * subjects.size();
  // decisions[job] holds (row, correct) for the subject's scans.
  std::vector<std::vector<std::pair<std::size_t, bool>>> results(n_jobs);
  std::vector<FoldAudit> audit(n_jobs);
  parallel_for(n_jobs, jobs, [&](std::size_t job) {
    const std::size_t e = job / subjects.size();
    const auto& subject = subjects[job % subjects.size()];
    std::vector<std::size_t> train;
    for (auto i : by_expr[e]) {
      if (set.samples[i].subject_id != subject) train.push_back(i);
    }
    const auto train_expr = kAllExpressions[e];
    detail::FoldModel model(set, gram.get(), train, params,
                            derive_seed(master_seed, std::string(to_string(train_expr)) + "|" + subject));
    for (auto i : rows_of[subject]) {
      results[job].push_back({i, model.decide(set, i).label == set.samples[i].gender});
    }
    audit[job] = {subject, detail::subjects_of(set, train), std::string(to_string(train_expr))};
  });

  ExpressionMatrix m;
  for (std::size_t job = 0; job < n_jobs; ++job) {
    const std::size_t e = job / subjects.size();
    for (const auto& [row, ok] : results[job]) {
      auto& cell = m.cells[e][index_of(set.samples[row].expression)];
      ++cell.n_test;
      cell.n_correct += ok;
    }
  }
  for (auto& row : m.cells) {
    for (auto& c : row) c.accuracy = c.n_test ? static_cast<double>(c.n_correct) / static_cast<double>(c.n_test) : 0.0;
  }
  m.audit = std::move(audit);
  m.config = to_json(params);
  m.config["protocol"] = "expression_specific_matrix";
  m.config["master_seed"] = master_seed;
  return m;
}

// Independent leave-one-subject-out runs on each non-neutral expression's
// difference features.
inline std::map<Expression, EvalReport> expression_based_eval(const LabeledFeatureSet& deltas,
                                                              const ClassifierParams& params,
                                                              std::uint64_t master_seed, std::size_t jobs = 1) {
  deltas.validate();
  std::map<Expression, EvalReport> out;
  for (Expression e : kNonNeutralExpressions) {
    auto subset = deltas.with_expression(e);
    if (subset.size() == 0) continue;
    auto report = loo_subject_cv(subset, params, master_seed, jobs);
    report.config["protocol"] = "expression_based";
    report.config["expression"] = to_string(e);
    out.emplace(e, std::move(report));
  }
  return out;
}

// ---------------------------------------------------------------------------

struct DecisionHistogram {
  Expression expression = Expression::Happy;
  std::vector<double> edges;  // bins + 1, shared by both groups
  std::vector<std::size_t> count_neutral;
  std::vector<std::size_t> count_expressive;
  double mean_neutral = 0.0;
  double mean_expressive = 0.0;
};

using HistogramSet = std::map<Expression, DecisionHistogram>;

inline constexpr int kDefaultHistogramBins = 20;

// For each non-neutral expression: critical values of the subjects'
// expressive scans and of the same subjects' neutral scans, binned on
// `bins` equal-width bins over the pooled range.
inline HistogramSet decision_histograms(const EvalReport& report, const std::vector<ScanRecord>& manifest,
                                        int bins = kDefaultHistogramBins) {
  if (bins < 1) throw InvariantError("histogram needs at least one bin");
  std::unordered_map<std::string, const ScanRecord*> record_of;
  for (const auto& r : manifest) record_of[r.scan_id] = &r;
  // subject -> expression -> critical value
  std::map<std::string, std::map<Expression, double>> cv;
  for (const auto& d : report.per_scan) {
    auto it = record_of.find(d.scan_id);
    if (it == record_of.end()) throw InvariantError("scan " + d.scan_id + " is not in the manifest");
    cv[it->second->subject_id][it->second->expression] = d.decision.critical_value;
  }
  HistogramSet out;
  for (Expression e : kNonNeutralExpressions) {
    std::vector<double> neutral, expressive;
    for (const auto& [subject, values] : cv) {
      auto ie = values.find(e);
      auto in = values.find(Expression::Neutral);
      if (ie == values.end() || in == values.end()) continue;
      expressive.push_back(ie->second);
      neutral.push_back(in->second);
    }
    if (expressive.empty()) continue;
    double lo = std::min(*std::min_element(neutral.begin(), neutral.end()),
                         *std::min_element(expressive.begin(), expressive.end()));
    double hi = std::max(*std::max_element(neutral.begin(), neutral.end()),
                         *std::max_element(expressive.begin(), expressive.end()));
    if (hi == lo) {
      lo -= 0.5;
      hi += 0.5;
    }
    DecisionHistogram h;
    h.expression = e;
    for (int b = 0; b <= bins; ++b) h.edges.push_back(lo + (hi - lo) * b / bins);
    h.edges.back() = hi;
    h.count_neutral.assign(static_cast<std::size_t>(bins), 0);
    h.count_expressive.assign(static_cast<std::size_t>(bins), 0);
    auto bin_of = [&](double v) {
      auto b = static_cast<int>(std::floor((v - lo) / (hi - lo) * bins));
      return static_cast<std::size_t>(std::clamp(b, 0, bins - 1));
    };
    for (double v : neutral) {
      ++h.count_neutral[bin_of(v)];
      h.mean_neutral += v;
    }
    for (double v : expressive) {
      ++h.count_expressive[bin_of(v)];
      h.mean_expressive += v;
    }
    h.mean_neutral /= static_cast<double>(neutral.size());
    h.mean_expressive /= static_cast<double>(expressive.size());
    out.emplace(e, std::move(h));
  }
  if (out.empty()) throw EmptyGroup("no subject has both a neutral and an expressive scan in the report");
  return out;
}

// ---------------------------------------------------------------------------
// JSON
//
// EvalReport: {"config":{...},
//              "rates":{"female","male","overall","n_female","n_male"},
//              "per_scan":[{"scan_id","subject_id","expression","true_gender",
//                           "predicted","critical_value"}],
//              "audit":[{"test_subject","train_expression","train_subjects":[...]}]}
// ExpressionMatrix: {"config":{...}, "axes":["NT","HP","DI","SP","SD"],
//              "accuracy":[[...5]x5], "n_test":[[...]], "n_correct":[[...]],
//              "summary":{...}, "audit":[...]}

inline nlohmann::json to_json(const Rates& r) {
  return {{"female", r.female}, {"male", r.male}, {"overall", r.overall}, {"n_female", r.n_female},
          {"n_male", r.n_male}};
}

inline nlohmann::json to_json(const std::vector<FoldAudit>& audit) {
  nlohmann::json a = nlohmann::json::array();
  for (const auto& f : audit) {
    a.push_back({{"test_subject", f.test_subject},
                 {"train_expression", f.train_expression},
                 {"train_subjects", f.train_subjects}});
  }
  return a;
}

inline nlohmann::json to_json(const EvalReport& r) {
  nlohmann::json scans = nlohmann::json::array();
  for (const auto& d : r.per_scan) {
    scans.push_back({{"scan_id", d.scan_id},
                     {"subject_id", d.subject_id},
                     {"expression", to_string(d.expression)},
                     {"true_gender", to_string(d.true_gender)},
                     {"predicted", to_string(d.decision.label)},
                     {"critical_value", d.decision.critical_value}});
  }
  return {{"config", r.config}, {"rates", to_json(r.rates)}, {"per_scan", scans}, {"audit", to_json(r.audit)}};
}

inline EvalReport report_from_json(const nlohmann::json& j) {
  try {
    EvalReport r;
    r.config = j.at("config");
    for (const auto& s : j.at("per_scan")) {
      ScanDecision d;
      d.scan_id = s.at("scan_id").get<std::string>();
      d.subject_id = s.at("subject_id").get<std::string>();
      d.expression = parse_expression(s.at("expression").get<std::string>());
      d.true_gender = parse_gender(s.at("true_gender").get<std::string>());
      d.decision.label = parse_gender(s.at("predicted").get<std::string>());
      d.decision.critical_value = s.at("critical_value").get<double>();
      r.per_scan.push_back(std::move(d));
    }
    const auto& rt = j.at("rates");
    r.rates = {rt.at("female").get<double>(), rt.at("male").get<double>(), rt.at("overall").get<double>(),
               rt.at("n_female").get<std::size_t>(), rt.at("n_male").get<std::size_t>()};
    for (const auto& a : j.at("audit")) {
      r.audit.push_back({a.at("test_subject").get<std::string>(),
                         a.at("train_subjects").get<std::vector<std::string>>(),
                         a.at("train_expression").get<std::string>()});
    }
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("report JSON: ") + e.what());
  }
}

inline nlohmann::json to_json(const ExpressionMatrix& m) {
  nlohmann::json axes = nlohmann::json::array(), acc = nlohmann::json::array(), nt = nlohmann::json::array(),
                 nc = nlohmann::json::array();
  for (Expression e : kAllExpressions) axes.push_back(short_label(e));
  for (const auto& row : m.cells) {
    nlohmann::json a = nlohmann::json::array(), n = nlohmann::json::array(), c = nlohmann::json::array();
    for (const auto& cell : row) {
      a.push_back(cell.accuracy);
      n.push_back(cell.n_test);
      c.push_back(cell.n_correct);
    }
    acc.push_back(a);
    nt.push_back(n);
    nc.push_back(c);
  }
  nlohmann::json rows = nlohmann::json::object();
  for (Expression e : kAllExpressions) {
    rows[std::string(short_label(e))] = {{"mean", m.row_mean(e)}, {"weighted", m.row_weighted(e)}};
  }
  return {{"config", m.config},
          {"axes", axes},
          {"accuracy", acc},
          {"n_test", nt},
          {"n_correct", nc},
          {"summary",
           {{"diagonal_mean", m.diagonal_mean()},
            {"diagonal_weighted", m.diagonal_weighted()},
            {"off_diagonal_mean", m.off_diagonal_mean()},
            {"rows", rows}}},
          {"audit", to_json(m.audit)}};
}

}  // namespace facecue
