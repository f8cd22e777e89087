#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "facecue/curves.hpp"
#include "facecue/features.hpp"
#include "facecue/log.hpp"
#include "facecue/synth.hpp"

using namespace facecue;

namespace {

Mesh height_grid(double half, double pitch, const std::function<double(double, double)>& z) {
  Mesh m;
  const int n = static_cast<int>(std::lround(half / pitch));
  for (int i = -n; i <= n; ++i)
    for (int j = -n; j <= n; ++j) m.vertices.emplace_back(j * pitch, i * pitch, z(j * pitch, i * pitch));
  return m;
}

Landmarks68 random_landmarks(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-60, 60);
  Landmarks68 lm;
  for (auto& p : lm.points) p = {u(rng), u(rng)};
  return lm;
}

ScanRecord record(std::string scan, std::string subject, Expression e) {
  ScanRecord r;
  r.scan_id = std::move(scan);
  r.subject_id = std::move(subject);
  r.expression = e;
  return r;
}

}  // namespace

TEST(Curves, FlatPlaneGivesZeroDepth) {
  auto m = height_grid(90, 2, [](double, double) { return 7.0; });
  auto g = extract_radial_curves(m, Vec3(0, 0, 7.0));
  for (double d : g.depths) EXPECT_NEAR(d, 0.0, 1e-12);
}

TEST(Curves, HemisphereMatchesClosedForm) {
  const double R = 100.0;
  auto m = height_grid(90, 1, [&](double x, double y) { return std::sqrt(R * R - x * x - y * y); });
  auto g = extract_radial_curves(m, Vec3(0, 0, R));
  double worst = 0.0;
  for (int j = 0; j < g.n_curves; ++j) {
    for (int k = 0; k < g.n_points; ++k) {
      const double r = g.radii[static_cast<std::size_t>(k)];
      worst = std::max(worst, std::abs(g.at(j, k) - (std::sqrt(R * R - r * r) - R)));
    }
  }
  EXPECT_LE(worst, 0.5);
}

TEST(Curves, GapsInterpolatedAlongCurve) {
  // Points only on the x axis; radii 8..14 are more than 5 mm from all of them.
  Mesh m;
  for (double x : {0.0, 2.0, 20.0}) m.vertices.emplace_back(x, 0, x);
  CurveParams p{1, 10, 20.0};  // radii 2, 4, ..., 20
  auto g = extract_radial_curves(m, Vec3::Zero(), p);
  EXPECT_DOUBLE_EQ(g.at(0, 0), 2.0);
  EXPECT_DOUBLE_EQ(g.at(0, 9), 20.0);
  for (int k = 3; k <= 6; ++k) EXPECT_FALSE(g.valid(0, k)) << k;
  EXPECT_TRUE(g.valid(0, 2));
  EXPECT_TRUE(g.valid(0, 7));
  const double a = g.at(0, 2), b = g.at(0, 7);
  for (int k = 3; k <= 6; ++k) EXPECT_NEAR(g.at(0, k), a + (b - a) * (k - 2) / 5.0, 1e-12);
}

TEST(Curves, Errors) {
  EXPECT_THROW(extract_radial_curves(Mesh{}, Vec3::Zero()), EmptyMesh);
  Mesh far;
  far.vertices = {{500, 500, 0}};
  EXPECT_THROW(extract_radial_curves(far, Vec3::Zero()), AllInvalidCurve);
}

TEST(Curves, VectorLayout) {
  auto m = height_grid(90, 2, [](double x, double y) { return 0.01 * x * x - 0.3 * y; });
  auto g = extract_radial_curves(m, Vec3::Zero());
  auto v = grid_to_vector(g);
  ASSERT_EQ(v.size(), 4000u);
  std::mt19937 rng(3);
  for (int t = 0; t < 50; ++t) {
    const int j = static_cast<int>(rng() % 100), k = static_cast<int>(rng() % 40);
    EXPECT_EQ(v.values[static_cast<std::size_t>(j * 40 + k)], g.at(j, k));
  }
  auto back = vector_to_grid(v);
  EXPECT_EQ(back.depths, g.depths);
  EXPECT_THROW(vector_to_grid({std::vector<double>(10, 0.0), FeatureKind::Depth4000}), DimensionMismatch);

  DepthFeatureGrid zeros = vector_to_grid({std::vector<double>(4000, 0.0), FeatureKind::Depth4000});
  for (double d : grid_to_vector(zeros).values) EXPECT_EQ(d, 0.0);
}

TEST(FeatureCsv, RoundTrip) {
  std::vector<FeatureRow> rows = {{"a", {1.0 / 3.0, -2e-9, 5}}, {"b", {0, 1, 2}}};
  auto back = parse_feature_csv(format_feature_csv(rows));
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back[0].id, "a");
  EXPECT_EQ(back[0].values, rows[0].values);
  EXPECT_THROW(parse_feature_csv("a,1,2\nb,1\n"), ParseError);
  EXPECT_THROW(parse_feature_csv("a\n"), ParseError);
}

TEST(Delta, SelfDifferenceAndArithmetic) {
  FeatureVector n{{1, 2, 3, 4}, FeatureKind::Depth4000};
  FeatureVector e{{2, 4, 6, 8}, FeatureKind::Depth4000};
  SubjectPair p{record("s_nt", "s", Expression::Neutral), n, record("s_hp", "s", Expression::Happy), n};
  auto zero = expression_delta(p);
  for (double v : zero.values) EXPECT_EQ(v, 0.0);
  EXPECT_EQ(zero.kind, FeatureKind::Delta4000);
  p.expressive = e;
  EXPECT_EQ(expression_delta(p).values, n.values);
}

TEST(Delta, Mismatches) {
  FeatureVector n{{1, 2}, FeatureKind::Depth4000};
  SubjectPair p{record("a_nt", "a", Expression::Neutral), n, record("b_hp", "b", Expression::Happy), n};
  EXPECT_THROW(expression_delta(p), SubjectMismatch);
  p.expressive_scan.subject_id = "a";
  p.expressive = {{1, 2}, FeatureKind::Coord136};
  EXPECT_THROW(expression_delta(p), KindMismatch);
  p.expressive = n;
  p.expressive_scan.expression = Expression::Neutral;
  EXPECT_THROW(expression_delta(p), SubjectMismatch);
}

TEST(Delta, RecoversPlantedField) {
  SynthConfig c = default_profile();
  c.n_subjects = 4;
  c.sensor_noise_mm = 0.0;
  c.pose_jitter_deg = 0.0;
  c.pose_jitter_mm = 0.0;
  const auto truth = plan_corpus(c);
  const auto& subject = truth.subjects[0];
  const auto& neutral = subject.scans[0];
  const Mesh nm = synthesize_scan(truth, subject, neutral);
  const Vec3 tip = detect_nosetip(nm);
  const CurveParams params;
  const auto n = grid_to_vector(extract_radial_curves(nm, tip, params));
  for (std::size_t s = 1; s < subject.scans.size(); ++s) {
    const auto& scan = subject.scans[s];
    const auto e = grid_to_vector(extract_radial_curves(synthesize_scan(truth, subject, scan), tip, params));
    const auto d = expression_delta({record(neutral.scan_id, "x", Expression::Neutral), n,
                                     record(scan.scan_id, "x", scan.expression), e});
    double worst = 0.0;
    for (int j = 0; j < params.n_curves; ++j) {
      for (int k = 0; k < params.n_points; ++k) {
        const double r = params.radius(k), a = params.angle(j);
        const double planted = planted_deformation(scan, tip.x() + r * std::cos(a), tip.y() + r * std::sin(a));
        worst = std::max(worst, std::abs(d.values[static_cast<std::size_t>(j * params.n_points + k)] - planted));
      }
    }
    EXPECT_LE(worst, 0.5) << scan.scan_id;
  }
}

TEST(Landmarks, CoordFeatures) {
  auto lm = random_landmarks(5);
  auto f = landmark_coord_features(lm);
  ASSERT_EQ(f.size(), 136u);
  EXPECT_EQ(f.values[60], 0.0);  // nosetip landmark 30
  EXPECT_EQ(f.values[61], 0.0);
  auto shifted = lm;
  for (auto& p : shifted.points) p += Vec2(7, -3);
  auto g = landmark_coord_features(shifted);
  for (std::size_t i = 0; i < f.size(); ++i) EXPECT_NEAR(g.values[i], f.values[i], 1e-12);
}

TEST(Landmarks, DistanceFeatures) {
  auto lm = random_landmarks(9);
  auto f = landmark_distance_features(lm);
  ASSERT_EQ(f.size(), 2278u);
  EXPECT_NEAR(f.values[0], (lm.points[0] - lm.points[1]).norm(), 1e-12);
  EXPECT_NEAR(f.values.back(), (lm.points[66] - lm.points[67]).norm(), 1e-12);
  const Eigen::Rotation2Dd rot(30.0 * M_PI / 180.0);
  auto turned = lm;
  for (auto& p : turned.points) p = rot * p;
  auto g = landmark_distance_features(turned);
  for (std::size_t i = 0; i < f.size(); ++i) EXPECT_NEAR(g.values[i], f.values[i], 1e-9);
  Landmarks68 same;
  for (auto& p : same.points) p = {4, 4};
  for (double v : landmark_distance_features(same).values) EXPECT_EQ(v, 0.0);
}

TEST(Pairs, SkipsSubjectsWithoutNeutral) {
  std::vector<ScanRecord> recs = {record("a_nt", "a", Expression::Neutral), record("a_hp", "a", Expression::Happy),
                                  record("a_sd", "a", Expression::Sad), record("b_hp", "b", Expression::Happy)};
  std::vector<FeatureVector> feats = {{{1, 1}, FeatureKind::Depth4000},
                                      {{3, 2}, FeatureKind::Depth4000},
                                      {{0, 5}, FeatureKind::Depth4000},
                                      {{9, 9}, FeatureKind::Depth4000}};
  int warnings = 0;
  ScopedWarningHandler h([&](const std::string&) { ++warnings; });
  auto [drecs, deltas] = delta_features(recs, feats);
  EXPECT_EQ(warnings, 1);
  ASSERT_EQ(drecs.size(), 2u);
  EXPECT_EQ(drecs[0].scan_id, "a_hp");
  EXPECT_EQ(deltas[0].values, (std::vector<double>{2, 1}));
  EXPECT_EQ(deltas[1].values, (std::vector<double>{-1, 4}));
  auto set = labeled_set(drecs, deltas);
  EXPECT_EQ(set.X.rows(), 2);
  EXPECT_EQ(set.samples[1].expression, Expression::Sad);
}
