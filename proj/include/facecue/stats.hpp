#pragma once

// Two-sample Welch t-tests, per-cell saliency maps, PCA explained-variance
// spectra and demographic balance checks.

#include <Eigen/Dense>
#include <boost/math/special_functions/beta.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <map>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "facecue/curves.hpp"
#include "facecue/error.hpp"
#include "facecue/learn.hpp"
#include "facecue/log.hpp"
#include "facecue/mesh_io.hpp"
#include "facecue/types.hpp"
#include "facecue/util.hpp"

namespace facecue {

struct TTestResult {
  double t = 0.0;
  double p = 1.0;  // two-tailed
  double df = 0.0;
};

namespace detail {

inline void mean_var(std::span<const double> a, double& mean, double& var) {
  double s = 0.0;
  for (double v : a) s += v;
  mean = s / static_cast<double>(a.size());
  double ss = 0.0;
  for (double v : a) ss += (v - mean) * (v - mean);
  var = ss / static_cast<double>(a.size() - 1);
}

}  // namespace detail

// Two-tailed tail probability of Student's t with `df` degrees of freedom:
// P(|T| >= |t|) = I_{df/(df+t^2)}(df/2, 1/2).
inline double student_t_two_tailed(double t, double df) {
  if (t == 0.0) return 1.0;
  const double x = df / (df + t * t);
  return std::clamp(boost::math::ibeta(df / 2.0, 0.5, x), 0.0, 1.0);
}

// Unequal-variance t-test with Welch-Satterthwaite degrees of freedom.
inline TTestResult welch_t_test(std::span<const double> a, std::span<const double> b) {
  if (a.size() < 2 || b.size() < 2) throw TooFewSamples("each group needs at least two samples");
  double ma, va, mb, vb;
  detail::mean_var(a, ma, va);
  detail::mean_var(b, mb, vb);
  if (!(va > 0.0) || !(vb > 0.0)) throw DegenerateVariance("a group has zero variance");
  const double sa = va / static_cast<double>(a.size());
  const double sb = vb / static_cast<double>(b.size());
  const double se2 = sa + sb;
  TTestResult r;
  r.t = (ma - mb) / std::sqrt(se2);
  r.df = se2 * se2 / (sa * sa / static_cast<double>(a.size() - 1) + sb * sb / static_cast<double>(b.size() - 1));
  r.p = student_t_two_tailed(r.t, r.df);
  return r;
}

// ---------------------------------------------------------------------------

inline constexpr std::array<double, 3> kSaliencyAlphas = {0.01, 0.05, 0.10};

struct SignificanceMap {
  int rows = 0;  // curves
  int cols = 0;  // points per curve
  std::vector<double> t_values;
  std::vector<double> p_values;
  std::map<double, std::vector<char>> masks;  // alpha -> p < alpha

  std::size_t mask_count(double alpha) const {
    auto it = masks.find(alpha);
    if (it == masks.end()) throw UnknownAlpha("no mask at alpha " + format_double(alpha));
    return static_cast<std::size_t>(std::count(it->second.begin(), it->second.end(), 1));
  }
  double mask_density(double alpha) const {
    return static_cast<double>(mask_count(alpha)) / static_cast<double>(p_values.size());
  }
};

// Welch test between male and female values at every feature index. Cells
// where a group has zero variance get t = 0, p = 1 and are reported in one
// warning.
inline SignificanceMap saliency_map(const FeatureMatrix& X, std::span<const Gender> genders,
                                    const CurveParams& shape = {},
                                    std::span<const double> alphas = kSaliencyAlphas) {
  if (static_cast<std::size_t>(X.rows()) != genders.size()) throw DimensionMismatch("label count differs from rows");
  if (static_cast<std::size_t>(X.cols()) != shape.size()) {
    throw DimensionMismatch("feature length " + std::to_string(X.cols()) + " does not match the " +
                            std::to_string(shape.n_curves) + "x" + std::to_string(shape.n_points) + " grid");
  }
  std::vector<Eigen::Index> male, female;
  for (std::size_t i = 0; i < genders.size(); ++i) {
    (genders[i] == Gender::Male ? male : female).push_back(static_cast<Eigen::Index>(i));
  }
  if (male.size() < 2 || female.size() < 2) throw TooFewSamples("saliency needs at least two scans per gender");

  SignificanceMap m;
  m.rows = shape.n_curves;
  m.cols = shape.n_points;
  const auto d = static_cast<std::size_t>(X.cols());
  m.t_values.assign(d, 0.0);
  m.p_values.assign(d, 1.0);
  std::vector<double> a(male.size()), b(female.size());
  std::size_t degenerate = 0;
  for (std::size_t c = 0; c < d; ++c) {
    for (std::size_t i = 0; i < male.size(); ++i) a[i] = X(male[i], static_cast<Eigen::Index>(c));
    for (std::size_t i = 0; i < female.size(); ++i) b[i] = X(female[i], static_cast<Eigen::Index>(c));
    try {
      const auto r = welch_t_test(a, b);
      m.t_values[c] = r.t;
      m.p_values[c] = r.p;
    } catch (const DegenerateVariance&) {
      ++degenerate;
    }
  }
  if (degenerate > 0) {
    warn(std::to_string(degenerate) + " saliency cells have zero variance in a gender group; set to p = 1");
  }
  for (double alpha : alphas) {
    std::vector<char> mask(d);
    for (std::size_t c = 0; c < d; ++c) mask[c] = m.p_values[c] < alpha ? 1 : 0;
    m.masks[alpha] = std::move(mask);
  }
  return m;
}

// ---------------------------------------------------------------------------
// PCA

enum class PcaMethod { Auto, Gram, Covariance };

struct PcaResult {
  std::vector<double> eigenvalues;  // descending, covariance scale
  std::vector<double> ratios;       // eigenvalue / total variance
  Eigen::MatrixXd components;       // d x k, unit columns, largest |entry| positive
  double total_variance = 0.0;
};

// Covariance spectrum of the row-centered data. With fewer samples than
// dimensions the eigenproblem is solved on the n x n Gram matrix. Keeps at
// most min(n-1, d) components and drops numerically zero ones.
inline PcaResult pca(const FeatureMatrix& X, PcaMethod method = PcaMethod::Auto) {
  const auto n = X.rows(), d = X.cols();
  if (n < 2) throw TooFewSamples("PCA needs at least two samples");
  if (d < 1) throw DimensionMismatch("PCA needs at least one feature");
  const Eigen::RowVectorXd mean = X.colwise().mean();
  const Eigen::MatrixXd centered = X.rowwise() - mean;
  const double denom = static_cast<double>(n - 1);
  PcaResult r;
  r.total_variance = centered.squaredNorm() / denom;
  if (!(r.total_variance > 0.0)) throw DegenerateData("data has zero total variance");

  const bool use_gram = method == PcaMethod::Gram || (method == PcaMethod::Auto && n < d);
  Eigen::VectorXd evals;
  Eigen::MatrixXd vecs;
  if (use_gram) {
    Eigen::MatrixXd gram = centered * centered.transpose() / denom;
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(gram);
    evals = es.eigenvalues();
    vecs = es.eigenvectors();
  } else {
    Eigen::MatrixXd cov = centered.transpose() * centered / denom;
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(cov);
    evals = es.eigenvalues();
    vecs = es.eigenvectors();
  }
  const Eigen::Index rank = std::min<Eigen::Index>(n - 1, d);
  const double top = evals.maxCoeff();
  std::vector<Eigen::Index> kept;
  for (Eigen::Index i = evals.size() - 1; i >= 0 && static_cast<Eigen::Index>(kept.size()) < rank; --i) {
    if (evals(i) <= 1e-12 * top) break;
    kept.push_back(i);
  }
  r.components.resize(d, static_cast<Eigen::Index>(kept.size()));
  for (std::size_t k = 0; k < kept.size(); ++k) {
    const double lambda = evals(kept[k]);
    r.eigenvalues.push_back(lambda);
    r.ratios.push_back(lambda / r.total_variance);
    Eigen::VectorXd v;
    if (use_gram) {
      v = centered.transpose() * vecs.col(kept[k]);
      v.normalize();
    } else {
      v = vecs.col(kept[k]);
    }
    Eigen::Index arg;
    v.cwiseAbs().maxCoeff(&arg);
    if (v(arg) < 0) v = -v;
    r.components.col(static_cast<Eigen::Index>(k)) = v;
  }
  return r;
}

struct VarianceSpectrum {
  std::vector<double> ratios;
  Gender gender = Gender::Female;
  Expression expression = Expression::Neutral;
};

inline VarianceSpectrum pca_explained_variance(const FeatureMatrix& X, Gender g = Gender::Female,
                                               Expression e = Expression::Neutral,
                                               PcaMethod method = PcaMethod::Auto) {
  return {pca(X, method).ratios, g, e};
}

// ---------------------------------------------------------------------------
// Demographic balance

struct BalanceReport {
  TTestResult age;
  TTestResult ethnicity;  // 0/1 encoding (Asian = 1)
  std::size_t n_female = 0;
  std::size_t n_male = 0;
};

namespace detail {

// Welch test that tolerates zero-variance groups: identical constant groups
// give p = 1; distinct constant groups give p = 0.
inline TTestResult welch_tolerant(std::span<const double> a, std::span<const double> b) {
  try {
    return welch_t_test(a, b);
  } catch (const DegenerateVariance&) {
    double ma, va, mb, vb;
    mean_var(a, ma, va);
    mean_var(b, mb, vb);
    const double se2 = va / static_cast<double>(a.size()) + vb / static_cast<double>(b.size());
    if (ma == mb) return {0.0, 1.0, 0.0};
    if (se2 > 0.0) {
      // One group constant: df from the varying group alone.
      const double t = (ma - mb) / std::sqrt(se2);
      const double df = static_cast<double>((va > 0 ? a.size() : b.size()) - 1);
      return {t, student_t_two_tailed(t, df), df};
    }
    return {ma > mb ? std::numeric_limits<double>::infinity() : -std::numeric_limits<double>::infinity(), 0.0, 0.0};
  }
}

}  // namespace detail

// Age and ethnicity compared between genders, one entry per subject.
inline BalanceReport demographic_balance(const std::vector<ScanRecord>& manifest) {
  std::set<std::string> seen;
  std::vector<double> age[2], eth[2];
  for (const auto& r : manifest) {
    if (!seen.insert(r.subject_id).second) continue;
    const auto g = index_of(r.gender);
    age[g].push_back(static_cast<double>(r.age));
    eth[g].push_back(r.ethnicity == Ethnicity::Asian ? 1.0 : 0.0);
  }
  const auto f = index_of(Gender::Female), m = index_of(Gender::Male);
  if (age[f].size() < 2 || age[m].size() < 2) throw TooFewSamples("balance needs at least two subjects per gender");
  BalanceReport r;
  r.n_female = age[f].size();
  r.n_male = age[m].size();
  r.age = detail::welch_tolerant(age[m], age[f]);
  r.ethnicity = detail::welch_tolerant(eth[m], eth[f]);
  return r;
}

}  // namespace facecue
