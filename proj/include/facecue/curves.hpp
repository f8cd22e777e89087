#pragma once

// Radial-curve depth representation. A frontalized face is sampled on
// n_curves rays leaving the nosetip at uniform angles, n_points samples per
// ray at uniform radii (the nosetip itself excluded). Each sample stores the
// surface height relative to the nosetip.

#include <cmath>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "facecue/error.hpp"
#include "facecue/kdtree.hpp"
#include "facecue/mesh_io.hpp"
#include "facecue/util.hpp"

namespace facecue {

struct CurveParams {
  int n_curves = 100;
  int n_points = 40;
  double r_max_mm = 80.0;

  std::size_t size() const { return static_cast<std::size_t>(n_curves) * static_cast<std::size_t>(n_points); }

  void validate() const {
    if (n_curves < 1 || n_points < 1) throw InvariantError("curve grid needs at least one curve and point");
    if (!(r_max_mm > 0.0)) throw InvariantError("r_max must be positive");
  }

  double angle(int j) const { return 2.0 * M_PI * j / n_curves; }
  double radius(int k) const { return (k + 1) * r_max_mm / n_points; }
};

struct DepthFeatureGrid {
  int n_curves = 0;
  int n_points = 0;
  std::vector<double> depths;  // curve-major: depths[j * n_points + k]
  std::vector<double> curve_angles;
  std::vector<double> radii;
  std::vector<char> validity;  // support flag before gap filling

  double& at(int j, int k) { return depths[static_cast<std::size_t>(j * n_points + k)]; }
  double at(int j, int k) const { return depths[static_cast<std::size_t>(j * n_points + k)]; }
  bool valid(int j, int k) const { return validity[static_cast<std::size_t>(j * n_points + k)] != 0; }
};

enum class FeatureKind { Depth4000, Coord136, Dist2278, Delta4000, DeltaCoord136, DeltaDist2278 };

inline std::string_view to_string(FeatureKind k) {
  switch (k) {
    case FeatureKind::Depth4000: return "Depth4000";
    case FeatureKind::Coord136: return "Coord136";
    case FeatureKind::Dist2278: return "Dist2278";
    case FeatureKind::Delta4000: return "Delta4000";
    case FeatureKind::DeltaCoord136: return "DeltaCoord136";
    case FeatureKind::DeltaDist2278: return "DeltaDist2278";
  }
  return "?";
}

inline bool is_delta(FeatureKind k) {
  return k == FeatureKind::Delta4000 || k == FeatureKind::DeltaCoord136 || k == FeatureKind::DeltaDist2278;
}

inline FeatureKind delta_of(FeatureKind k) {
  switch (k) {
    case FeatureKind::Depth4000: return FeatureKind::Delta4000;
    case FeatureKind::Coord136: return FeatureKind::DeltaCoord136;
    case FeatureKind::Dist2278: return FeatureKind::DeltaDist2278;
    default: throw KindMismatch(std::string(to_string(k)) + " is already a difference feature");
  }
}

// Required length for fixed-size kinds, 0 for the depth kinds whose length
// follows the curve grid (4000 with the default 100 x 40 grid).
inline std::size_t fixed_length(FeatureKind k) {
  switch (k) {
    case FeatureKind::Coord136:
    case FeatureKind::DeltaCoord136: return 136;
    case FeatureKind::Dist2278:
    case FeatureKind::DeltaDist2278: return 2278;
    default: return 0;
  }
}

struct FeatureVector {
  std::vector<double> values;
  FeatureKind kind = FeatureKind::Depth4000;

  std::size_t size() const { return values.size(); }

  void validate() const {
    const auto want = fixed_length(kind);
    if (want != 0 && values.size() != want) {
      throw InvariantError(std::string(to_string(kind)) + " needs length " + std::to_string(want) + ", got " +
                           std::to_string(values.size()));
    }
    if (values.empty()) throw InvariantError("empty feature vector");
    for (double v : values) {
      if (!std::isfinite(v)) throw InvariantError("feature vector holds a non-finite value");
    }
  }
};

inline constexpr double kCurveSupportRadiusMm = 5.0;
inline constexpr std::size_t kCurveNeighbors = 3;

// Samples the surface along radial curves around `nosetip`. Each sample is
// the inverse-distance weighted z of the (up to) 3 nearest vertices in the
// xy-projection lying within 5 mm, minus the nosetip z. Samples without
// support are interpolated linearly along their curve, or copied from the
// nearest supported sample at the ends.
inline DepthFeatureGrid extract_radial_curves(const Mesh& mesh, const Vec3& nosetip, const CurveParams& params = {}) {
  params.validate();
  if (mesh.empty()) throw EmptyMesh("cannot sample curves on an empty mesh");

  std::vector<KdTree<2>::Point> xy(mesh.size());
  for (std::size_t i = 0; i < mesh.size(); ++i) xy[i] = {mesh.vertices[i].x(), mesh.vertices[i].y()};
  const KdTree<2> index(std::move(xy));

  DepthFeatureGrid g;
  g.n_curves = params.n_curves;
  g.n_points = params.n_points;
  g.depths.assign(params.size(), 0.0);
  g.validity.assign(params.size(), 0);
  for (int j = 0; j < params.n_curves; ++j) g.curve_angles.push_back(params.angle(j));
  for (int k = 0; k < params.n_points; ++k) g.radii.push_back(params.radius(k));

  const double support2 = kCurveSupportRadiusMm * kCurveSupportRadiusMm;
  for (int j = 0; j < params.n_curves; ++j) {
    const double c = std::cos(g.curve_angles[static_cast<std::size_t>(j)]);
    const double s = std::sin(g.curve_angles[static_cast<std::size_t>(j)]);
    for (int k = 0; k < params.n_points; ++k) {
      const double r = g.radii[static_cast<std::size_t>(k)];
      const KdTree<2>::Point p{nosetip.x() + r * c, nosetip.y() + r * s};
      const auto nn = index.knn(p, kCurveNeighbors, support2);
      if (nn.empty()) continue;
      double z;
      if (nn.front().dist2 == 0.0) {
        z = mesh.vertices[nn.front().index].z();
      } else {
        double wsum = 0.0, zsum = 0.0;
        for (const auto& n : nn) {
          const double w = 1.0 / std::sqrt(n.dist2);
          wsum += w;
          zsum += w * mesh.vertices[n.index].z();
        }
        z = zsum / wsum;
      }
      g.at(j, k) = z - nosetip.z();
      g.validity[static_cast<std::size_t>(j * params.n_points + k)] = 1;
    }
  }

  for (int j = 0; j < params.n_curves; ++j) {
    std::vector<int> valid_k;
    for (int k = 0; k < params.n_points; ++k) {
      if (g.valid(j, k)) valid_k.push_back(k);
    }
    if (valid_k.empty()) {
      throw AllInvalidCurve("curve " + std::to_string(j) + " has no surface support within " +
                            format_double(kCurveSupportRadiusMm) + " mm");
    }
    for (int k = 0; k < valid_k.front(); ++k) g.at(j, k) = g.at(j, valid_k.front());
    for (int k = valid_k.back() + 1; k < params.n_points; ++k) g.at(j, k) = g.at(j, valid_k.back());
    for (std::size_t i = 0; i + 1 < valid_k.size(); ++i) {
      const int a = valid_k[i], b = valid_k[i + 1];
      for (int k = a + 1; k < b; ++k) {
        const double t = static_cast<double>(k - a) / (b - a);
        g.at(j, k) = (1.0 - t) * g.at(j, a) + t * g.at(j, b);
      }
    }
  }
  return g;
}

// Curve-major flattening: values[j * n_points + k] = depths[j][k].
inline FeatureVector grid_to_vector(const DepthFeatureGrid& grid) {
  return {grid.depths, FeatureKind::Depth4000};
}

inline DepthFeatureGrid vector_to_grid(const FeatureVector& v, const CurveParams& params = {}) {
  params.validate();
  if (v.size() != params.size()) {
    throw DimensionMismatch("vector length " + std::to_string(v.size()) + " does not fit a " +
                            std::to_string(params.n_curves) + "x" + std::to_string(params.n_points) + " grid");
  }
  DepthFeatureGrid g;
  g.n_curves = params.n_curves;
  g.n_points = params.n_points;
  g.depths = v.values;
  g.validity.assign(params.size(), 1);
  for (int j = 0; j < params.n_curves; ++j) g.curve_angles.push_back(params.angle(j));
  for (int k = 0; k < params.n_points; ++k) g.radii.push_back(params.radius(k));
  return g;
}

// ---------------------------------------------------------------------------
// Feature CSV: one row per scan, the scan id followed by the values in index
// order, shortest round-trip decimal. No header.

struct FeatureRow {
  std::string id;
  std::vector<double> values;
};

inline std::string format_feature_csv(const std::vector<FeatureRow>& rows) {
  std::string out;
  for (const auto& r : rows) {
    out += r.id;
    for (double v : r.values) {
      out += ',';
      append_double(out, v);
    }
    out += '\n';
  }
  return out;
}

inline void save_feature_csv(const std::vector<FeatureRow>& rows, const std::filesystem::path& path) {
  detail::write_file(path, format_feature_csv(rows));
}

inline std::vector<FeatureRow> parse_feature_csv(std::string_view text, const std::string& ctx = "features") {
  std::vector<FeatureRow> rows;
  auto lines = detail::lines_of(text);
  std::size_t width = 0;
  for (std::size_t i = 0; i < lines.size(); ++i) {
    if (trim(lines[i]).empty()) continue;
    auto f = split(lines[i], ',');
    const std::string where = ctx + ": line " + std::to_string(i + 1);
    if (f.size() < 2) throw ParseError(where + " has no values");
    FeatureRow r;
    r.id = std::string(trim(f[0]));
    r.values.reserve(f.size() - 1);
    for (std::size_t k = 1; k < f.size(); ++k) r.values.push_back(parse_double(f[k], where));
    if (width == 0) width = r.values.size();
    if (r.values.size() != width) throw ParseError(where + " has a different number of values");
    rows.push_back(std::move(r));
  }
  return rows;
}

inline std::vector<FeatureRow> load_feature_csv(const std::filesystem::path& path) {
  return parse_feature_csv(detail::read_file(path), path.string());
}

}  // namespace facecue
