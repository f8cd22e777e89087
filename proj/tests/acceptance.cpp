// Acceptance suite: one PASS/FAIL line per criterion.
//
//   facecue_acceptance <path to facecue_cli> [--only 1,5,...]
//
// Exit status is 0 only when every selected criterion passes.

#include <boost/math/quadrature/exp_sinh.hpp>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <numeric>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "facecue/curves.hpp"
#include "facecue/eval.hpp"
#include "facecue/learn.hpp"
#include "facecue/preprocess.hpp"
#include "facecue/stats.hpp"
#include "facecue/synth.hpp"
#include "support.hpp"

using namespace facecue;
using facecue::testing::genders_of;
using facecue::testing::synthetic_features;
using facecue::testing::with_gender;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(double v, int prec = 4) {
  std::ostringstream os;
  os.precision(prec);
  os << v;
  return os.str();
}

struct Outcome {
  bool pass = false;
  std::string detail;
};

constexpr int kSeeds = 10;

// Shared corpora, built on first use.
std::map<int, testing::SyntheticFeatures> g_default;  // seed -> default profile features

const testing::SyntheticFeatures& default_corpus(int seed) {
  auto it = g_default.find(seed);
  if (it == g_default.end()) {
    auto c = default_profile();
    c.seed = static_cast<std::uint64_t>(seed);
    it = g_default.emplace(seed, synthetic_features(c)).first;
  }
  return it->second;
}

ClassifierParams svm_params() { return {}; }

// ---------------------------------------------------------------------------

Outcome icp_recovery() {
  const auto t0 = Clock::now();
  SynthConfig c = default_profile();
  c.template_pitch_mm = 2.0;
  const Mesh tmpl = prepare_template(canonical_template(c)).mesh;
  const SurfaceIndex index(tmpl);
  PreprocessConfig pc;
  std::mt19937_64 rng(20240611);
  double worst_deg = 0, worst_mm = 0;
  bool monotone = true;
  for (int i = 0; i < 10; ++i) {
    const auto planted = detail::random_pose(rng, 25.0, 20.0);
    const auto r = frontalize_icp(transformed(tmpl, planted), index, pc);
    const auto [deg, mm] = testing::pose_error(r.transform * planted);
    worst_deg = std::max(worst_deg, deg);
    worst_mm = std::max(worst_mm, mm);
    for (std::size_t k = 1; k < r.residual_history.size(); ++k) {
      if (r.residual_history[k] > r.residual_history[k - 1]) monotone = false;
    }
  }
  const double secs = seconds_since(t0);
  return {worst_deg <= 0.5 && worst_mm <= 0.1 && monotone && secs < 5.0,
          "max rotation error " + fmt(worst_deg) + " deg, max translation error " + fmt(worst_mm) +
              " mm, residuals monotone " + (monotone ? "yes" : "no") + ", " + fmt(secs, 3) + " s"};
}

Outcome curve_sampling() {
  const auto t0 = Clock::now();
  constexpr double R = 100.0;
  const CurveParams cp;
  Mesh hemi;
  for (int iy = -90; iy <= 90; ++iy) {
    for (int ix = -90; ix <= 90; ++ix) {
      const double x = ix, y = iy;
      hemi.vertices.emplace_back(x, y, std::sqrt(R * R - x * x - y * y));
    }
  }
  const auto g = extract_radial_curves(hemi, Vec3(0, 0, R), cp);
  double worst = 0;
  for (int j = 0; j < cp.n_curves; ++j) {
    for (int k = 0; k < cp.n_points; ++k) {
      const double r = cp.radius(k);
      worst = std::max(worst, std::abs(g.at(j, k) - (std::sqrt(R * R - r * r) - R)));
    }
  }
  // Surface of revolution sampled on rings and spokes sharing the curves'
  // 100-fold symmetry.
  Mesh rev;
  rev.vertices.emplace_back(0, 0, 0);
  auto profile = [](double r) { return -0.004 * r * r + 3.0 * std::exp(-r * r / 200.0); };
  constexpr int kSpokes = 300;
  for (int i = 0; i < 171; ++i) {
    const double r = 0.2 + 0.5 * i;  // offset so no two rings tie around a sample radius
    for (int s = 0; s < kSpokes; ++s) {
      const double a = 2.0 * M_PI * s / kSpokes;
      rev.vertices.emplace_back(r * std::cos(a), r * std::sin(a), profile(r));
    }
  }
  const auto gr = extract_radial_curves(rev, Vec3::Zero(), cp);
  double spread = 0;
  for (int j = 1; j < cp.n_curves; ++j) {
    for (int k = 0; k < cp.n_points; ++k) spread = std::max(spread, std::abs(gr.at(j, k) - gr.at(0, k)));
  }
  const double secs = seconds_since(t0);
  return {worst <= 0.5 && spread <= 1e-6 && secs < 10.0,
          "max hemisphere depth error " + fmt(worst) + " mm, max curve spread " + fmt(spread) + ", " + fmt(secs, 3) + " s"};
}

Outcome classifier_oracles() {
  const auto t0 = Clock::now();
  // Generic convex-QP oracle (cvxopt qp on the dual, C = 1000): w = (1, 0), b = 0.
  FeatureMatrix X(4, 2);
  X << -1, 0, -2, 0, 1, 0, 2, 0;
  const std::vector<Gender> y = {Gender::Male, Gender::Male, Gender::Female, Gender::Female};
  SvmParams sp;
  sp.C = 1000.0;
  const auto m = train_linear_svm(X, y, sp);
  const double boundary = -m.bias / m.weights[0];
  const double inner_m = std::abs(svm_score(m, std::vector<double>{-1, 0}));
  const double inner_f = std::abs(svm_score(m, std::vector<double>{1, 0}));
  const bool qp_ok = std::abs(m.weights[0] - 1.0) <= 1e-3 && std::abs(m.weights[1]) <= 1e-3 &&
                     std::abs(boundary) <= 1e-3 && std::abs(inner_m - inner_f) <= 1e-3;

  double min_oob = 1.0;
  bool deterministic = true;
  for (int seed = 1; seed <= kSeeds; ++seed) {
    std::mt19937_64 rng(static_cast<std::uint64_t>(seed));
    std::normal_distribution<double> n01(0.0, 1.0);
    const int n = 100, d = 5;
    FeatureMatrix B(n, d);
    std::vector<Gender> labels(n);
    for (int i = 0; i < n; ++i) {
      labels[static_cast<std::size_t>(i)] = i % 2 ? Gender::Male : Gender::Female;
      const double mu = i % 2 ? -2.0 : 2.0;
      for (int k = 0; k < d; ++k) B(i, k) = mu + n01(rng);
    }
    ForestParams fp;
    fp.seed = static_cast<std::uint64_t>(seed);
    const auto f1 = train_random_forest(B, labels, fp);
    const auto f2 = train_random_forest(B, labels, fp, 4);
    min_oob = std::min(min_oob, f1.oob_accuracy);
    SvmParams s;
    s.seed = static_cast<std::uint64_t>(seed);
    const auto s1 = train_linear_svm(B, labels, s), s2 = train_linear_svm(B, labels, s);
    deterministic = deterministic && to_json(f1).dump() == to_json(f2).dump() && to_json(s1).dump() == to_json(s2).dump();
  }
  const double secs = seconds_since(t0);
  return {qp_ok && min_oob >= 0.9 && deterministic && secs < 30.0,
          "SVM w = (" + fmt(m.weights[0], 8) + ", " + fmt(m.weights[1], 8) + "), boundary x = " + fmt(boundary, 3) +
              ", min forest OOB " + fmt(min_oob) + ", deterministic " + (deterministic ? "yes" : "no") + ", " +
              fmt(secs, 3) + " s"};
}

// Two-tailed Student-t tail by quadrature of the density.
double t_tail_oracle(double t, double df) {
  const double logc = std::lgamma((df + 1) / 2) - std::lgamma(df / 2) - 0.5 * std::log(df * M_PI);
  auto density = [&](double x) { return std::exp(logc - (df + 1) / 2 * std::log1p(x * x / df)); };
  boost::math::quadrature::exp_sinh<double> integrator;
  const double a = std::abs(t);
  const double tail = integrator.integrate([&](double u) { return density(a + u); }, 0.0,
                                           std::numeric_limits<double>::infinity());
  return std::min(1.0, 2.0 * tail);
}

Outcome stats_oracles() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(99);
  std::uniform_int_distribution<int> size(3, 40);
  std::uniform_real_distribution<double> mu(-1.0, 1.0), sd(0.2, 3.0);
  std::normal_distribution<double> n01(0.0, 1.0);
  double worst_p = 0;
  for (int i = 0; i < 100; ++i) {
    std::vector<double> a(static_cast<std::size_t>(size(rng))), b(static_cast<std::size_t>(size(rng)));
    const double ma = mu(rng), mb = mu(rng), sa = sd(rng), sb = sd(rng);
    for (auto& v : a) v = ma + sa * n01(rng);
    for (auto& v : b) v = mb + sb * n01(rng);
    auto moments = [](const std::vector<double>& v) {
      const double m = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
      double ss = 0;
      for (double x : v) ss += (x - m) * (x - m);
      return std::pair(m, ss / static_cast<double>(v.size() - 1));
    };
    const auto [m1, v1] = moments(a);
    const auto [m2, v2] = moments(b);
    const double q1 = v1 / static_cast<double>(a.size()), q2 = v2 / static_cast<double>(b.size());
    const double t = (m1 - m2) / std::sqrt(q1 + q2);
    const double df = (q1 + q2) * (q1 + q2) /
                      (q1 * q1 / static_cast<double>(a.size() - 1) + q2 * q2 / static_cast<double>(b.size() - 1));
    const auto r = welch_t_test(a, b);
    worst_p = std::max({worst_p, std::abs(r.p - t_tail_oracle(t, df)), std::abs(r.t - t) / std::max(1.0, std::abs(t))});
  }

  double worst_sum = 0, worst_gram = 0;
  std::uniform_int_distribution<int> dim(3, 60);
  for (int i = 0; i < 20; ++i) {
    const int n = dim(rng), d = dim(rng);
    FeatureMatrix X(n, d);
    for (int r = 0; r < n; ++r)
      for (int c = 0; c < d; ++c) X(r, c) = n01(rng) * (1.0 + c % 4);
    const auto g = pca(X, PcaMethod::Gram), cv = pca(X, PcaMethod::Covariance);
    worst_sum = std::max(worst_sum, std::abs(std::accumulate(g.ratios.begin(), g.ratios.end(), 0.0) - 1.0));
    worst_sum = std::max(worst_sum, std::abs(std::accumulate(cv.ratios.begin(), cv.ratios.end(), 0.0) - 1.0));
    if (g.ratios.size() != cv.ratios.size()) {
      worst_gram = INFINITY;
      continue;
    }
    for (std::size_t k = 0; k < g.ratios.size(); ++k) {
      worst_gram = std::max(worst_gram, std::abs(g.ratios[k] - cv.ratios[k]));
      worst_gram = std::max(worst_gram, std::abs(g.eigenvalues[k] - cv.eigenvalues[k]) / std::max(1.0, cv.eigenvalues[k]));
    }
  }
  const double secs = seconds_since(t0);
  return {worst_p <= 1e-9 && worst_sum <= 1e-9 && worst_gram <= 1e-8 && secs < 30.0,
          "max Welch deviation " + fmt(worst_p, 3) + ", max PCA ratio-sum error " + fmt(worst_sum, 3) +
              ", max Gram/covariance gap " + fmt(worst_gram, 3) + ", " + fmt(secs, 3) + " s"};
}

Outcome null_calibration() {
  const auto t0 = Clock::now();
  std::map<Expression, std::vector<double>> acc, dens;
  for (int seed = 1; seed <= kSeeds; ++seed) {
    auto c = null_profile();
    c.seed = static_cast<std::uint64_t>(seed);
    const auto f = synthetic_features(c);
    const auto reports = expression_based_eval(f.deltas, svm_params(), c.seed, testing::hardware_jobs());
    for (const auto& [e, r] : reports) {
      acc[e].push_back(r.rates.overall);
      const auto sub = f.deltas.with_expression(e);
      dens[e].push_back(saliency_map(sub.X, genders_of(sub)).mask_density(0.05));
    }
  }
  bool ok = true;
  std::string detail;
  for (Expression e : kNonNeutralExpressions) {
    const double a = std::accumulate(acc[e].begin(), acc[e].end(), 0.0) / static_cast<double>(acc[e].size());
    const double d = std::accumulate(dens[e].begin(), dens[e].end(), 0.0) / static_cast<double>(dens[e].size());
    ok = ok && std::abs(a - 0.5) <= 0.12 && std::abs(d - 0.05) <= 0.02;
    const auto [amin, amax] = std::minmax_element(acc[e].begin(), acc[e].end());
    const auto [dmin, dmax] = std::minmax_element(dens[e].begin(), dens[e].end());
    detail += std::string(short_label(e)) + " acc mean " + fmt(a, 3) + " [" + fmt(*amin, 3) + "," + fmt(*amax, 3) +
              "] density mean " + fmt(d, 3) + " [" + fmt(*dmin, 3) + "," + fmt(*dmax, 3) + "]; ";
  }
  const double secs = seconds_since(t0);
  return {ok && secs < 600.0, detail + fmt(secs, 4) + " s"};
}

Outcome planted_ordering() {
  const auto t0 = Clock::now();
  int ordered = 0;
  bool happy_ok = true, chance_ok = true;
  std::string per_seed;
  for (int seed = 1; seed <= kSeeds; ++seed) {
    const auto& f = default_corpus(seed);
    const auto reports = expression_based_eval(f.deltas, svm_params(), static_cast<std::uint64_t>(seed),
                                               testing::hardware_jobs());
    const double hp = reports.at(Expression::Happy).rates.overall;
    const double di = reports.at(Expression::Disgust).rates.overall;
    const double sp = reports.at(Expression::Surprise).rates.overall;
    const double sd = reports.at(Expression::Sad).rates.overall;
    happy_ok = happy_ok && hp >= 0.75;
    chance_ok = chance_ok && std::abs(sp - 0.5) <= 0.15 && std::abs(sd - 0.5) <= 0.15;
    if (hp > di && di > std::max(sp, sd)) ++ordered;
    per_seed += fmt(hp, 3) + "/" + fmt(di, 3) + "/" + fmt(sp, 3) + "/" + fmt(sd, 3) + " ";
  }
  const double secs = seconds_since(t0);
  return {happy_ok && chance_ok && ordered >= 8 && secs < 900.0,
          "ordered in " + std::to_string(ordered) + "/10 seeds, HP/DI/SP/SD per seed: " + per_seed + fmt(secs, 4) + " s"};
}

Outcome expression_specific_gain() {
  const auto t0 = Clock::now();
  int wins = 0;
  std::string per_seed;
  for (int seed = 1; seed <= kSeeds; ++seed) {
    auto c = expression_specific_profile();
    c.seed = static_cast<std::uint64_t>(seed);
    const auto f = synthetic_features(c);
    const auto m = expression_specific_matrix(f.depth, svm_params(), c.seed, testing::hardware_jobs());
    if (m.diagonal_mean() > m.off_diagonal_mean()) ++wins;
    per_seed += fmt(m.diagonal_mean(), 3) + ">" + fmt(m.off_diagonal_mean(), 3) + " ";
  }
  const double secs = seconds_since(t0);
  return {wins >= 8 && secs < 900.0,
          "diagonal > off-diagonal in " + std::to_string(wins) + "/10 seeds (" + per_seed + ") " + fmt(secs, 4) + " s"};
}

Outcome pca_structure() {
  const auto t0 = Clock::now();
  const auto& f = default_corpus(1);
  const auto happy = f.deltas.with_expression(Expression::Happy);
  const double male = pca(with_gender(happy, Gender::Male).X).ratios.at(0);
  const double female = pca(with_gender(happy, Gender::Female).X).ratios.at(0);
  const double secs = seconds_since(t0);
  return {male >= 0.95 && female <= 0.8 && secs < 120.0,
          "male Happy PC1 " + fmt(male) + ", female Happy PC1 " + fmt(female) + ", " + fmt(secs, 3) + " s"};
}

bool audit_ok(const std::vector<FoldAudit>& audit, const std::set<std::string>& subjects) {
  std::set<std::string> tested;
  for (const auto& fold : audit) {
    for (const auto& s : fold.train_subjects) {
      if (s == fold.test_subject) return false;
    }
    tested.insert(fold.test_subject);
  }
  return std::includes(tested.begin(), tested.end(), subjects.begin(), subjects.end());
}

bool rates_recomputed(const EvalReport& r) {
  std::size_t nf = 0, nm = 0, cf = 0, cm = 0;
  for (const auto& d : r.per_scan) {
    const bool hit = d.decision.label == d.true_gender;
    if (d.true_gender == Gender::Female) {
      ++nf;
      cf += hit;
    } else {
      ++nm;
      cm += hit;
    }
  }
  const double f = nf ? static_cast<double>(cf) / static_cast<double>(nf) : 0.0;
  const double m = nm ? static_cast<double>(cm) / static_cast<double>(nm) : 0.0;
  const double all = static_cast<double>(cf + cm) / static_cast<double>(nf + nm);
  return f == r.rates.female && m == r.rates.male && all == r.rates.overall && nf == r.rates.n_female &&
         nm == r.rates.n_male;
}

Outcome protocol_audit() {
  const auto t0 = Clock::now();
  const auto& f = default_corpus(1);
  auto subjects_in = [](const LabeledFeatureSet& s) {
    std::set<std::string> out;
    for (const auto& x : s.samples) out.insert(x.subject_id);
    return out;
  };
  std::size_t folds = 0, reports = 0;
  bool ok = true;
  auto check = [&](const EvalReport& r, const LabeledFeatureSet& s) {
    ok = ok && audit_ok(r.audit, subjects_in(s)) && rates_recomputed(r);
    folds += r.audit.size();
    ++reports;
  };
  ClassifierParams forest;
  forest.kind = ClassifierKind::Forest;
  forest.forest.n_trees = 25;
  for (const auto& params : {svm_params(), forest}) {
    check(loo_subject_cv(f.depth, params, 1, testing::hardware_jobs()), f.depth);
    for (const auto& [e, r] : expression_based_eval(f.deltas, params, 1, testing::hardware_jobs())) {
      check(r, f.deltas.with_expression(e));
    }
  }
  const auto m = expression_specific_matrix(f.depth, svm_params(), 1, testing::hardware_jobs());
  ok = ok && audit_ok(m.audit, subjects_in(f.depth));
  folds += m.audit.size();
  const double secs = seconds_since(t0);
  return {ok, std::to_string(reports) + " reports and one matrix, " + std::to_string(folds) +
                  " folds checked; rates recomputed exactly, " + fmt(secs, 3) + " s"};
}

// ---------------------------------------------------------------------------

std::string read_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// Relative path -> bytes, for every regular file under `dir`.
std::map<std::string, std::string> snapshot(const fs::path& dir) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (e.is_regular_file()) out[fs::relative(e.path(), dir).generic_string()] = read_bytes(e.path());
  }
  return out;
}

Outcome cli_determinism(const std::string& exe) {
  const auto t0 = Clock::now();
  const fs::path root = fs::temp_directory_path() / ("facecue_acceptance_" + std::to_string(::getpid()));
  fs::remove_all(root);
  fs::create_directories(root);
  const fs::path cfg = root / "run.cfg";
  {
    std::ofstream out(cfg);
    out << "seed = 11\n"
           "synth.n_subjects = 6\n"
           "data.manifest = " << (root / "corpus_a" / "manifest.csv").string() << "\n"
        << "data.features_dir = " << (root / "features_a").string() << "\n"
        << "forest.n_trees = 15\n"
           "render.input = " << (root / "features_a" / "depth.csv").string() << "\n"
        << "render.ids = S000_NT,S001_HP\n";
  }
  const std::vector<std::pair<std::string, std::string>> commands = {
      {"synth", "corpus"},           {"features", "features"},         {"eval general", "general"},
      {"eval matrix", "matrix"},     {"eval expression_based", "expr"}, {"eval histograms", "hist"},
      {"analyze ttest", "ttest"},    {"analyze pca", "pca"},           {"analyze balance", "balance"},
      {"render", "render"}};
  auto run = [&](const std::string& cmd, const fs::path& out, int jobs) {
    const std::string line = "\"" + exe + "\" " + cmd + " --config \"" + cfg.string() + "\" --out \"" + out.string() +
                             "\" --jobs " + std::to_string(jobs) + " 2>>\"" + (root / "stderr.log").string() + "\"";
    return std::system(line.c_str()) == 0;
  };
  bool ok = true;
  std::size_t files = 0;
  std::string first_diff;
  for (const auto& [cmd, name] : commands) {
    // "_a" feeds the later commands; "_b" reruns at --jobs 8, "_c" reruns at --jobs 1.
    ok = ok && run(cmd, root / (name + "_a"), 1) && run(cmd, root / (name + "_b"), 8) && run(cmd, root / (name + "_c"), 1);
    if (!ok) {
      first_diff = "command failed: " + cmd;
      break;
    }
    const auto a = snapshot(root / (name + "_a"));
    for (const auto& other : {"_b", "_c"}) {
      const auto b = snapshot(root / (name + other));
      if (a != b && first_diff.empty()) first_diff = cmd + " differs in " + name + other;
      ok = ok && a == b;
    }
    files += a.size();
  }
  fs::remove_all(root);
  const double secs = seconds_since(t0);
  return {ok, std::to_string(commands.size()) + " commands, " + std::to_string(files) +
                  " output files identical across --jobs 1, --jobs 8 and a rerun" +
                  (first_diff.empty() ? "" : " (" + first_diff + ")") + ", " + fmt(secs, 3) + " s"};
}

}  // namespace

int main(int argc, char** argv) {
  if (argc < 2) {
    std::cerr << "usage: facecue_acceptance <facecue_cli> [--only 1,2,...]\n";
    return 2;
  }
  const std::string exe = argv[1];
  std::set<int> only;
  if (argc >= 4 && std::string(argv[2]) == "--only") {
    for (auto part : split(argv[3], ',')) only.insert(static_cast<int>(parse_int(part, "--only")));
  }
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"icp transform recovery", icp_recovery},
      {"curve sampling oracle", curve_sampling},
      {"classifier oracles", classifier_oracles},
      {"statistics oracles", stats_oracles},
      {"null calibration", null_calibration},
      {"planted ordering", planted_ordering},
      {"expression-specific gain", expression_specific_gain},
      {"pca structure", pca_structure},
      {"protocol audit", protocol_audit},
      {"determinism", [&] { return cli_determinism(exe); }},
  };
  ScopedWarningHandler quiet([](const std::string&) {});
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i + 1);
    if (!only.empty() && !only.contains(id)) continue;
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    failed += !o.pass;
    std::cout << (o.pass ? "PASS" : "FAIL") << "  [" << id << "] " << criteria[i].first << ": " << o.detail << std::endl;
  }
  std::cout << (failed ? std::to_string(failed) + " criteria failed" : std::string("all criteria passed")) << std::endl;
  return failed ? 1 : 0;
}
