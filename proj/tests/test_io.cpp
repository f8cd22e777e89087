#include <gtest/gtest.h>

#include <filesystem>
#include <random>
#include <string>

#include "facecue/kdtree.hpp"
#include "facecue/log.hpp"
#include "facecue/mesh_io.hpp"
#include "facecue/util.hpp"

using namespace facecue;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& name) {
  auto p = fs::temp_directory_path() / ("facecue_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string landmark_text(int n) {
  std::string s;
  for (int i = 0; i < n; ++i) s += std::to_string(i) + " 0\n";
  return s;
}

}  // namespace

TEST(Util, DoubleRoundTripIsExact) {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> u(-1e6, 1e6);
  for (int i = 0; i < 1000; ++i) {
    const double x = u(rng) * std::pow(10.0, i % 13 - 6);
    EXPECT_EQ(parse_double(format_double(x), "x"), x);
  }
}

TEST(Util, ParseRejectsNonFinite) {
  EXPECT_THROW(parse_double("nan", "x"), ParseError);
  EXPECT_THROW(parse_double("inf", "x"), ParseError);
  EXPECT_THROW(parse_double("1.5abc", "x"), ParseError);
  EXPECT_THROW(parse_int("3.5", "x"), ParseError);
  EXPECT_EQ(parse_double(" +2.5 ", "x"), 2.5);
  EXPECT_EQ(parse_int("-12", "x"), -12);
}

TEST(Util, DerivedSeedsDependOnKey) {
  EXPECT_EQ(derive_seed(1, "S001"), derive_seed(1, "S001"));
  EXPECT_NE(derive_seed(1, "S001"), derive_seed(1, "S002"));
  EXPECT_NE(derive_seed(1, "S001"), derive_seed(2, "S001"));
}

TEST(Util, ParallelForFillsEverySlotAndRethrows) {
  std::vector<int> out(257, 0);
  parallel_for(out.size(), 4, [&](std::size_t i) { out[i] = static_cast<int>(i) * 2; });
  for (std::size_t i = 0; i < out.size(); ++i) EXPECT_EQ(out[i], static_cast<int>(i) * 2);
  EXPECT_THROW(parallel_for(10, 3,
                            [](std::size_t i) {
                              if (i == 5) throw EmptyGroup("boom");
                            }),
               EmptyGroup);
}

TEST(KdTree, KnnMatchesBruteForce) {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(-10, 10);
  std::vector<KdTree<3>::Point> pts(500);
  for (auto& p : pts) p = {u(rng), u(rng), u(rng)};
  KdTree<3> tree(pts);
  for (int q = 0; q < 50; ++q) {
    KdTree<3>::Point x{u(rng), u(rng), u(rng)};
    std::vector<std::pair<double, std::size_t>> brute;
    for (std::size_t i = 0; i < pts.size(); ++i) {
      double d2 = 0;
      for (int k = 0; k < 3; ++k) d2 += (pts[i][k] - x[k]) * (pts[i][k] - x[k]);
      brute.push_back({d2, i});
    }
    std::sort(brute.begin(), brute.end());
    auto nn = tree.knn(x, 5);
    ASSERT_EQ(nn.size(), 5u);
    for (std::size_t k = 0; k < 5; ++k) EXPECT_DOUBLE_EQ(nn[k].dist2, brute[k].first);
    EXPECT_EQ(tree.nearest(x).index, brute[0].second);
    const double r2 = 9.0;
    const auto within = tree.within(x, r2);
    const auto expected = std::count_if(brute.begin(), brute.end(), [&](const auto& b) { return b.first <= r2; });
    EXPECT_EQ(static_cast<long>(within.size()), expected);
  }
}

TEST(KdTree, TiesDoNotDependOnInsertionOrder) {
  std::vector<KdTree<2>::Point> a = {{1, 0}, {-1, 0}, {0, 1}, {0, -1}};
  std::vector<KdTree<2>::Point> b = {{0, -1}, {0, 1}, {-1, 0}, {1, 0}};
  KdTree<2> ta(a), tb(b);
  auto na = ta.knn({0, 0}, 2), nb = tb.knn({0, 0}, 2);
  for (std::size_t k = 0; k < 2; ++k) EXPECT_EQ(a[na[k].index], b[nb[k].index]);
}

TEST(MeshIo, XyzThreeLines) {
  auto m = parse_mesh("0 0 0\n1 0 0\n0 1 0\n", MeshFormat::XYZ);
  EXPECT_EQ(m.size(), 3u);
  EXPECT_TRUE(m.faces.empty());
  EXPECT_EQ(m.vertices[1], Vec3(1, 0, 0));
}

TEST(MeshIo, RangeGridWithOneInvalidCell) {
  const std::string text =
      "rows=2\ncols=2\n"
      "1 1 0 1\n"
      "0 1 0 1\n"
      "0 0 1 1\n"
      "5 6 7 8\n";
  auto m = parse_mesh(text, MeshFormat::RANGE_GRID);
  ASSERT_TRUE(m.grid.has_value());
  EXPECT_EQ(m.size(), 3u);
  EXPECT_EQ(m.grid->valid_count(), 3u);
  EXPECT_FALSE(m.grid->valid(1, 0));
  EXPECT_EQ(m.vertices[static_cast<std::size_t>(m.grid->vertex_at(1, 1))], Vec3(1, 1, 8));
}

TEST(MeshIo, RangeGridRejectsBadFlagAndCount) {
  EXPECT_THROW(parse_mesh("rows=1\ncols=1\n2 0 0 0\n", MeshFormat::RANGE_GRID), ParseError);
  EXPECT_THROW(parse_mesh("rows=1\ncols=2\n1 1 0 0\n", MeshFormat::RANGE_GRID), ParseError);
}

TEST(MeshIo, PlyVertexCountMismatch) {
  const std::string text =
      "ply\nformat ascii 1.0\nelement vertex 4\nproperty float x\nproperty float y\nproperty float z\n"
      "element face 0\nproperty list uchar int vertex_indices\nend_header\n0 0 0\n1 0 0\n0 1 0\n";
  EXPECT_THROW(parse_mesh(text, MeshFormat::PLY_ASCII), ParseError);
}

TEST(MeshIo, PlyBadFaceIndexAndNan) {
  const std::string head =
      "ply\nformat ascii 1.0\nelement vertex 3\nproperty float x\nproperty float y\nproperty float z\n"
      "element face 1\nproperty list uchar int vertex_indices\nend_header\n";
  EXPECT_THROW(parse_mesh(head + "0 0 0\n1 0 0\n0 1 0\n3 0 1 5\n", MeshFormat::PLY_ASCII), InvariantError);
  EXPECT_THROW(parse_mesh(head + "0 0 0\nnan 0 0\n0 1 0\n3 0 1 2\n", MeshFormat::PLY_ASCII), Error);
  EXPECT_EQ(parse_mesh(head + "0 0 0\n1 0 0\n0 1 0\n3 0 1 2\n", MeshFormat::PLY_ASCII).faces.size(), 1u);
}

TEST(MeshIo, SaveLoadRoundTrip) {
  const auto dir = temp_dir("roundtrip");
  Mesh m;
  m.vertices = {{0.1, -2.5, 3.0}, {1.0 / 3.0, 0, 0}, {0, 1e-7, 42}};
  m.faces = {{0, 1, 2}};
  save_mesh(m, dir / "a.ply", MeshFormat::PLY_ASCII);
  auto back = load_mesh(dir / "a.ply");
  EXPECT_EQ(back.vertices, m.vertices);
  EXPECT_EQ(back.faces, m.faces);

  std::vector<std::string> warnings;
  {
    ScopedWarningHandler h([&](const std::string& w) { warnings.push_back(w); });
    save_mesh(m, dir / "a.xyz", MeshFormat::XYZ);
  }
  EXPECT_EQ(warnings.size(), 1u);
  auto xyz = load_mesh(dir / "a.xyz");
  EXPECT_EQ(xyz.vertices, m.vertices);
  EXPECT_TRUE(xyz.faces.empty());
  fs::remove_all(dir);
}

TEST(MeshIo, UnwritablePath) {
  Mesh m;
  m.vertices = {{0, 0, 0}};
  EXPECT_THROW(save_mesh(m, "/nonexistent_dir_facecue/x.ply", MeshFormat::PLY_ASCII), IoError);
  EXPECT_THROW(save_mesh(m, fs::temp_directory_path() / "x.grid", MeshFormat::RANGE_GRID), IoError);
}

TEST(Manifest, TwoRows) {
  const std::string text = std::string(kManifestHeader) +
                           "\nA_NT,A,Female,Neutral,Asian,22,a.ply,\nB_NT,B,Male,NT,NonAsian,30,/abs/b.ply,b.lm\n";
  auto recs = parse_manifest(text, "/data");
  ASSERT_EQ(recs.size(), 2u);
  EXPECT_EQ(recs[0].mesh_path, fs::path("/data/a.ply"));
  EXPECT_FALSE(recs[0].landmarks_path.has_value());
  EXPECT_EQ(recs[1].gender, Gender::Male);
  EXPECT_EQ(recs[1].mesh_path, fs::path("/abs/b.ply"));
  EXPECT_EQ(*recs[1].landmarks_path, fs::path("/data/b.lm"));
}

TEST(Manifest, DuplicateSubjectExpression) {
  const std::string text = std::string(kManifestHeader) +
                           "\nA1,A,Female,Happy,Asian,22,a1.ply,\nA2,A,Female,Happy,Asian,22,a2.ply,\n";
  EXPECT_THROW(parse_manifest(text, "."), DuplicateScanError);
}

TEST(Manifest, UnknownLabels) {
  const std::string h = std::string(kManifestHeader) + "\n";
  EXPECT_THROW(parse_manifest(h + "A,A,Other,Happy,Asian,22,a.ply,\n", "."), UnknownLabelError);
  EXPECT_THROW(parse_manifest(h + "A,A,Male,Angry,Asian,22,a.ply,\n", "."), UnknownLabelError);
  EXPECT_THROW(parse_manifest("scan,subject\n", "."), ParseError);
}

TEST(Manifest, FormatRoundTripAndFilter) {
  const std::string text = std::string(kManifestHeader) +
                           "\nA_NT,A,Female,Neutral,Asian,22,m/a0.ply,\n"
                           "A_HP,A,Female,Happy,Asian,22,m/a1.ply,\n"
                           "B_NT,B,Male,Neutral,NonAsian,30,m/b0.ply,\n"
                           "C_NT,C,Male,Neutral,NonAsian,45,m/c0.ply,\n"
                           "C_SD,C,Male,Sad,NonAsian,45,m/c1.ply,\n";
  std::vector<std::string> warnings;
  ScopedWarningHandler h([&](const std::string& w) { warnings.push_back(w); });
  auto recs = parse_manifest(text, "/root");
  EXPECT_EQ(warnings.size(), 2u);  // both rows of the 45-year-old
  EXPECT_EQ(parse_manifest(format_manifest(recs, "/root"), "/root"), recs);
  auto kept = filter_manifest(recs);
  ASSERT_EQ(kept.size(), 2u);
  EXPECT_EQ(kept[0].scan_id, "A_NT");
  EXPECT_EQ(kept[1].scan_id, "A_HP");
}

TEST(Landmarks, SixtyEightEchoed) {
  auto lm = parse_landmarks(landmark_text(68));
  for (std::size_t k = 0; k < 68; ++k) EXPECT_EQ(lm.points[k], Vec2(static_cast<double>(k), 0));
}

TEST(Landmarks, WrongCountAndNan) {
  EXPECT_THROW(parse_landmarks(landmark_text(67)), CountError);
  EXPECT_THROW(parse_landmarks("nan 3\n" + landmark_text(67)), ParseError);
}
