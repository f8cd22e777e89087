#pragma once

// Geometric preprocessing of raw facial scans: hole filling, central
// cropping, umbrella smoothing, nosetip localization and ICP frontalization
// against a reference template. The full pipeline runs in that order.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <map>
#include <memory>
#include <numeric>
#include <queue>
#include <utility>
#include <vector>

#include "facecue/error.hpp"
#include "facecue/kdtree.hpp"
#include "facecue/log.hpp"
#include "facecue/mesh_io.hpp"

namespace facecue {

struct RigidTransform {
  Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
  Vec3 translation = Vec3::Zero();

  static RigidTransform identity() { return {}; }

  Vec3 apply(const Vec3& p) const { return rotation * p + translation; }

  // (a * b).apply(p) == a.apply(b.apply(p))
  RigidTransform operator*(const RigidTransform& b) const {
    return {rotation * b.rotation, rotation * b.translation + translation};
  }

  RigidTransform inverse() const {
    Eigen::Matrix3d rt = rotation.transpose();
    return {rt, -(rt * translation)};
  }

  bool is_valid(double tol = 1e-9) const {
    return (rotation.transpose() * rotation - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff() <= tol &&
           std::abs(rotation.determinant() - 1.0) <= tol && translation.allFinite();
  }

  // Rotation angle in degrees.
  double angle_deg() const {
    const double c = std::clamp((rotation.trace() - 1.0) / 2.0, -1.0, 1.0);
    return std::acos(c) * 180.0 / M_PI;
  }
};

inline Mesh transformed(const Mesh& mesh, const RigidTransform& t) {
  Mesh out = mesh;
  for (auto& v : out.vertices) v = t.apply(v);
  return out;
}

struct PreprocessConfig {
  double crop_radius_mm = 80.0;
  int smooth_iterations = 10;
  double smooth_lambda = 0.5;
  int icp_max_iters = 60;
  double icp_tol_mm = 1e-4;
  // Start ICP by matching centroids; otherwise start from identity.
  bool icp_init_centroid = true;
  // Fraction of closest correspondences used per fit (1 = plain ICP).
  double icp_trim_fraction = 1.0;
  // ICP registers an even index-stride subsample of at most this many scan
  // vertices (0 = all); the transform is applied to the full mesh.
  int icp_max_points = 2000;

  void validate() const {
    if (!(crop_radius_mm > 0.0)) throw InvariantError("crop_radius_mm must be positive");
    if (smooth_iterations < 0) throw InvariantError("smooth_iterations must be non-negative");
    if (!(smooth_lambda > 0.0 && smooth_lambda < 1.0)) throw InvariantError("smooth_lambda must lie in (0,1)");
    if (icp_max_iters < 1) throw InvariantError("icp_max_iters must be positive");
    if (!(icp_tol_mm > 0.0)) throw InvariantError("icp_tol_mm must be positive");
    if (icp_max_points < 0) throw InvariantError("icp_max_points must be non-negative");
    if (!(icp_trim_fraction > 0.0 && icp_trim_fraction <= 1.0)) {
      throw InvariantError("icp_trim_fraction must lie in (0,1]");
    }
  }
};

// ---------------------------------------------------------------------------
// Hole filling

namespace detail {

inline Mesh fill_grid_holes(const Mesh& mesh) {
  Mesh out = mesh;
  RangeGrid& g = *out.grid;
  const int rows = g.rows, cols = g.cols;
  auto cell = [cols](int r, int c) { return static_cast<std::size_t>(r * cols + c); };
  const int dr[4] = {-1, 1, 0, 0};
  const int dc[4] = {0, 0, -1, 1};

  // Invalid components touching the grid border are background, not holes.
  std::vector<char> interior(g.cell_vertex.size(), 0);
  std::vector<char> seen(g.cell_vertex.size(), 0);
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) {
      if (g.valid(r, c) || seen[cell(r, c)]) continue;
      std::vector<std::size_t> comp;
      bool touches_border = false;
      std::queue<std::pair<int, int>> q;
      q.push({r, c});
      seen[cell(r, c)] = 1;
      while (!q.empty()) {
        auto [cr, cc] = q.front();
        q.pop();
        comp.push_back(cell(cr, cc));
        if (cr == 0 || cc == 0 || cr == rows - 1 || cc == cols - 1) touches_border = true;
        for (int k = 0; k < 4; ++k) {
          int nr = cr + dr[k], nc = cc + dc[k];
          if (nr < 0 || nc < 0 || nr >= rows || nc >= cols) continue;
          if (g.valid(nr, nc) || seen[cell(nr, nc)]) continue;
          seen[cell(nr, nc)] = 1;
          q.push({nr, nc});
        }
      }
      if (!touches_border) {
        for (auto i : comp) interior[i] = 1;
      }
    }
  }

  std::size_t min_neighbors = 2;
  while (true) {
    std::vector<std::pair<std::size_t, Vec3>> fills;
    for (int r = 0; r < rows; ++r) {
      for (int c = 0; c < cols; ++c) {
        if (!interior[cell(r, c)] || g.valid(r, c)) continue;
        Vec3 sum = Vec3::Zero();
        std::size_t n = 0;
        for (int k = 0; k < 4; ++k) {
          int nr = r + dr[k], nc = c + dc[k];
          if (nr < 0 || nc < 0 || nr >= rows || nc >= cols || !g.valid(nr, nc)) continue;
          sum += out.vertices[static_cast<std::size_t>(g.vertex_at(nr, nc))];
          ++n;
        }
        if (n >= min_neighbors) fills.push_back({cell(r, c), sum / static_cast<double>(n)});
      }
    }
    if (fills.empty()) {
      bool remaining = false;
      for (std::size_t i = 0; i < interior.size(); ++i) remaining |= interior[i] && g.cell_vertex[i] < 0;
      if (!remaining || min_neighbors == 1) break;
      // A pocket reachable through single-neighbor cells only.
      min_neighbors = 1;
      continue;
    }
    for (auto& [ci, p] : fills) {
      g.cell_vertex[ci] = static_cast<int>(out.vertices.size());
      out.vertices.push_back(p);
    }
    min_neighbors = 2;
  }
  return out;
}

inline Mesh fill_face_holes(const Mesh& mesh) {
  // Boundary half-edges: directed edges whose reverse does not occur.
  std::map<std::pair<int, int>, int> half_edges;
  for (const auto& f : mesh.faces) {
    for (int k = 0; k < 3; ++k) half_edges[{f[static_cast<std::size_t>(k)], f[static_cast<std::size_t>((k + 1) % 3)]}]++;
  }
  std::multimap<int, int> boundary;  // from -> to
  for (const auto& [e, count] : half_edges) {
    if (!half_edges.count({e.second, e.first})) boundary.insert({e.first, e.second});
  }
  std::vector<std::vector<int>> loops;
  while (!boundary.empty()) {
    auto it = boundary.begin();
    const int start = it->first;
    std::vector<int> loop{start};
    int cur = it->second;
    boundary.erase(it);
    bool closed = false;
    while (true) {
      if (cur == start) {
        closed = true;
        break;
      }
      loop.push_back(cur);
      auto nx = boundary.find(cur);
      if (nx == boundary.end()) break;
      cur = nx->second;
      boundary.erase(nx);
    }
    if (closed && loop.size() >= 3) loops.push_back(std::move(loop));
  }
  if (loops.size() <= 1) return mesh;

  auto perimeter = [&](const std::vector<int>& loop) {
    double p = 0.0;
    for (std::size_t i = 0; i < loop.size(); ++i) {
      p += (mesh.vertices[static_cast<std::size_t>(loop[i])] -
            mesh.vertices[static_cast<std::size_t>(loop[(i + 1) % loop.size()])]).norm();
    }
    return p;
  };
  std::size_t outer = 0;
  for (std::size_t i = 1; i < loops.size(); ++i) {
    if (perimeter(loops[i]) > perimeter(loops[outer])) outer = i;
  }
  Mesh out = mesh;
  for (std::size_t i = 0; i < loops.size(); ++i) {
    if (i == outer) continue;
    const auto& loop = loops[i];
    Vec3 centroid = Vec3::Zero();
    for (int v : loop) centroid += mesh.vertices[static_cast<std::size_t>(v)];
    centroid /= static_cast<double>(loop.size());
    const int ci = static_cast<int>(out.vertices.size());
    out.vertices.push_back(centroid);
    for (std::size_t k = 0; k < loop.size(); ++k) {
      out.faces.push_back({loop[(k + 1) % loop.size()], loop[k], ci});
    }
  }
  return out;
}

}  // namespace detail

// Fills interior holes. On range grids a hole is an invalid cell component
// not touching the grid border; its cells take the mean of their valid
// 4-neighbors, repeated until nothing changes. On triangle meshes every
// boundary loop except the longest is closed with a centroid fan. Original
// vertices keep their indices and positions.
inline Mesh fill_holes(const Mesh& mesh) {
  if (mesh.grid) return detail::fill_grid_holes(mesh);
  if (!mesh.faces.empty()) return detail::fill_face_holes(mesh);
  throw UnsupportedTopology("hole filling needs a range grid or faces");
}

// ---------------------------------------------------------------------------

inline constexpr double kNosetipSearchRadiusMm = 40.0;

// Vertex with the largest z inside the central cylinder (radius 40 mm around
// the xy-centroid). Ties go to the smallest vertex index.
inline Vec3 detect_nosetip(const Mesh& mesh) {
  if (mesh.empty()) throw EmptyMesh("cannot locate nosetip on an empty mesh");
  Vec2 centroid = Vec2::Zero();
  for (const auto& v : mesh.vertices) centroid += v.head<2>();
  centroid /= static_cast<double>(mesh.size());
  const double r2 = kNosetipSearchRadiusMm * kNosetipSearchRadiusMm;
  std::ptrdiff_t best = -1;
  for (std::size_t i = 0; i < mesh.size(); ++i) {
    const auto& v = mesh.vertices[i];
    if ((v.head<2>() - centroid).squaredNorm() > r2) continue;
    if (best < 0 || v.z() > mesh.vertices[static_cast<std::size_t>(best)].z()) best = static_cast<std::ptrdiff_t>(i);
  }
  if (best < 0) {
    warn("no vertex inside the central nosetip cylinder; using the global maximum");
    best = 0;
    for (std::size_t i = 1; i < mesh.size(); ++i) {
      if (mesh.vertices[i].z() > mesh.vertices[static_cast<std::size_t>(best)].z()) best = static_cast<std::ptrdiff_t>(i);
    }
  }
  return mesh.vertices[static_cast<std::size_t>(best)];
}

// Keeps vertices within `radius_mm` (inclusive) of `center`, preserving their
// order. Faces touching a removed vertex are dropped.
inline Mesh crop_face(const Mesh& mesh, const Vec3& center, double radius_mm) {
  if (!(radius_mm > 0.0)) throw InvariantError("crop radius must be positive");
  const double r2 = radius_mm * radius_mm;
  std::vector<int> remap(mesh.size(), -1);
  Mesh out;
  for (std::size_t i = 0; i < mesh.size(); ++i) {
    if ((mesh.vertices[i] - center).squaredNorm() <= r2) {
      remap[i] = static_cast<int>(out.vertices.size());
      out.vertices.push_back(mesh.vertices[i]);
    }
  }
  if (out.empty()) throw EmptyResult("no vertex within " + format_double(radius_mm) + " mm of the crop center");
  for (const auto& f : mesh.faces) {
    Face nf{remap[static_cast<std::size_t>(f[0])], remap[static_cast<std::size_t>(f[1])],
            remap[static_cast<std::size_t>(f[2])]};
    if (nf[0] >= 0 && nf[1] >= 0 && nf[2] >= 0) out.faces.push_back(nf);
  }
  if (mesh.grid) {
    RangeGrid g = *mesh.grid;
    for (int& v : g.cell_vertex) {
      if (v >= 0) v = remap[static_cast<std::size_t>(v)];
    }
    out.grid = std::move(g);
  }
  return out;
}

// Sorted neighbor lists: grid 4-neighborhoods when a grid is present,
// otherwise edge adjacency of the faces.
inline std::vector<std::vector<int>> vertex_neighbors(const Mesh& mesh) {
  std::vector<std::vector<int>> nb(mesh.size());
  if (mesh.grid) {
    const auto& g = *mesh.grid;
    for (int r = 0; r < g.rows; ++r) {
      for (int c = 0; c < g.cols; ++c) {
        const int v = g.vertex_at(r, c);
        if (v < 0) continue;
        if (c + 1 < g.cols && g.valid(r, c + 1)) {
          nb[static_cast<std::size_t>(v)].push_back(g.vertex_at(r, c + 1));
          nb[static_cast<std::size_t>(g.vertex_at(r, c + 1))].push_back(v);
        }
        if (r + 1 < g.rows && g.valid(r + 1, c)) {
          nb[static_cast<std::size_t>(v)].push_back(g.vertex_at(r + 1, c));
          nb[static_cast<std::size_t>(g.vertex_at(r + 1, c))].push_back(v);
        }
      }
    }
  } else if (!mesh.faces.empty()) {
    for (const auto& f : mesh.faces) {
      for (std::size_t k = 0; k < 3; ++k) {
        const int a = f[k], b = f[(k + 1) % 3];
        if (a == b) continue;
        nb[static_cast<std::size_t>(a)].push_back(b);
        nb[static_cast<std::size_t>(b)].push_back(a);
      }
    }
  } else {
    throw UnsupportedTopology("smoothing needs a range grid or faces");
  }
  for (auto& l : nb) {
    std::sort(l.begin(), l.end());
    l.erase(std::unique(l.begin(), l.end()), l.end());
  }
  return nb;
}

// Uniform umbrella Laplacian smoothing, synchronous updates:
//   v <- v + lambda * (mean(neighbors) - v)
inline Mesh smooth(const Mesh& mesh, int iterations, double lambda) {
  if (iterations < 0) throw InvariantError("smoothing iterations must be non-negative");
  if (!(lambda > 0.0 && lambda < 1.0)) throw InvariantError("smoothing lambda must lie in (0,1)");
  const auto nb = vertex_neighbors(mesh);
  Mesh out = mesh;
  std::vector<Vec3> next(out.size());
  for (int it = 0; it < iterations; ++it) {
    for (std::size_t i = 0; i < out.size(); ++i) {
      const auto& v = out.vertices[i];
      if (nb[i].empty()) {
        next[i] = v;
        continue;
      }
      Vec3 mean = Vec3::Zero();
      for (int j : nb[i]) mean += out.vertices[static_cast<std::size_t>(j)];
      mean /= static_cast<double>(nb[i].size());
      next[i] = v + lambda * (mean - v);
    }
    out.vertices.swap(next);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Rigid registration

// Least-squares rigid fit mapping `src[i]` onto `dst[i]` (SVD, reflection
// corrected).
inline RigidTransform fit_rigid(const std::vector<Vec3>& src, const std::vector<Vec3>& dst) {
  if (src.size() != dst.size()) throw DimensionMismatch("rigid fit needs paired point sets");
  if (src.size() < 3) throw DegenerateConfiguration("rigid fit needs at least 3 correspondences");
  const double n = static_cast<double>(src.size());
  Vec3 cs = Vec3::Zero(), cd = Vec3::Zero();
  for (std::size_t i = 0; i < src.size(); ++i) {
    cs += src[i];
    cd += dst[i];
  }
  cs /= n;
  cd /= n;
  Eigen::Matrix3d h = Eigen::Matrix3d::Zero();
  Eigen::Matrix3d spread = Eigen::Matrix3d::Zero();
  for (std::size_t i = 0; i < src.size(); ++i) {
    const Vec3 a = src[i] - cs;
    h += a * (dst[i] - cd).transpose();
    spread += a * a.transpose();
  }
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> es(spread);
  const auto ev = es.eigenvalues();  // ascending
  if (!(ev(2) > 0.0) || ev(1) <= 1e-12 * ev(2)) {
    throw DegenerateConfiguration("correspondence set is collinear or coincident");
  }
  Eigen::JacobiSVD<Eigen::Matrix3d> svd(h, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const Eigen::Matrix3d u = svd.matrixU();
  const Eigen::Matrix3d v = svd.matrixV();
  Eigen::Matrix3d d = Eigen::Matrix3d::Identity();
  d(2, 2) = (v * u.transpose()).determinant() < 0.0 ? -1.0 : 1.0;
  RigidTransform t;
  t.rotation = v * d * u.transpose();
  t.translation = cd - t.rotation * cs;
  return t;
}

struct IcpResult {
  Mesh mesh;
  RigidTransform transform;
  // RMS nearest-neighbor distance (mm) before each fit; the last entry is the
  // residual of the returned transform.
  std::vector<double> residual_history;
};

namespace detail {

// Closest point to p on triangle abc.
inline Vec3 closest_on_triangle(const Vec3& p, const Vec3& a, const Vec3& b, const Vec3& c) {
  const Vec3 ab = b - a, ac = c - a, ap = p - a;
  const double d1 = ab.dot(ap), d2 = ac.dot(ap);
  if (d1 <= 0.0 && d2 <= 0.0) return a;
  const Vec3 bp = p - b;
  const double d3 = ab.dot(bp), d4 = ac.dot(bp);
  if (d3 >= 0.0 && d4 <= d3) return b;
  const double vc = d1 * d4 - d3 * d2;
  if (vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0) return a + ab * (d1 / (d1 - d3));
  const Vec3 cp = p - c;
  const double d5 = ab.dot(cp), d6 = ac.dot(cp);
  if (d6 >= 0.0 && d5 <= d6) return c;
  const double vb = d5 * d2 - d1 * d6;
  if (vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0) return a + ac * (d2 / (d2 - d6));
  const double va = d3 * d6 - d5 * d4;
  if (va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0) return b + (c - b) * ((d4 - d3) / ((d4 - d3) + (d5 - d6)));
  const double denom = 1.0 / (va + vb + vc);
  return a + ab * (vb * denom) + ac * (vc * denom);
}

}  // namespace detail

// Exact closest-point queries on a triangulated surface; vertices only when
// the mesh has no faces.
class SurfaceIndex {
 public:
  explicit SurfaceIndex(Mesh mesh) : mesh_(std::move(mesh)) {
    const Mesh& m = mesh_;
    std::vector<KdTree<3>::Point> pts(m.size());
    for (std::size_t i = 0; i < m.size(); ++i) pts[i] = {m.vertices[i].x(), m.vertices[i].y(), m.vertices[i].z()};
    vertices_ = KdTree<3>(std::move(pts));
    incident_.resize(m.size());
    for (std::size_t f = 0; f < m.faces.size(); ++f) {
      const auto& face = m.faces[f];
      for (int k = 0; k < 3; ++k) incident_[static_cast<std::size_t>(face[k])].push_back(f);
      const Vec3& a = m.vertices[static_cast<std::size_t>(face[0])];
      const Vec3& b = m.vertices[static_cast<std::size_t>(face[1])];
      const Vec3& c = m.vertices[static_cast<std::size_t>(face[2])];
      const double la = (b - c).norm(), lb = (c - a).norm(), lc = (a - b).norm();
      const double longest = std::max({la, lb, lc});
      const double area2 = (b - a).cross(c - a).norm();  // twice the area
      const double circumradius = area2 > 0.0 ? la * lb * lc / (2.0 * area2) : longest;
      reach_ = std::max(reach_, std::min(longest, circumradius));
    }
  }

  struct Hit {
    Vec3 point;
    double dist2;
  };

  Hit closest(const Vec3& q) const {
    const auto nn = vertices_.nearest({q.x(), q.y(), q.z()});
    Hit best{mesh_.vertices[nn.index], nn.dist2};
    if (mesh_.faces.empty()) return best;
    auto visit = [&](std::size_t v) {
      for (std::size_t f : incident_[v]) {
        const auto& face = mesh_.faces[f];
        const Vec3 c = detail::closest_on_triangle(q, mesh_.vertices[static_cast<std::size_t>(face[0])],
                                                   mesh_.vertices[static_cast<std::size_t>(face[1])],
                                                   mesh_.vertices[static_cast<std::size_t>(face[2])]);
        const double d2 = (c - q).squaredNorm();
        if (d2 < best.dist2) best = {c, d2};
      }
    };
    // Faces around the nearest vertex tighten the bound; the closest surface
    // point then lies within that bound of q, and some corner of its
    // triangle within reach_ of it.
    visit(nn.index);
    const double r = std::sqrt(best.dist2) + reach_;
    vertices_.for_each_within({q.x(), q.y(), q.z()}, r * r, visit);
    return best;
  }

  const Mesh& mesh() const { return mesh_; }

 private:
  Mesh mesh_;
  KdTree<3> vertices_;
  std::vector<std::vector<std::size_t>> incident_;
  double reach_ = 0.0;  // max over faces of the farthest any point lies from its nearest corner
};

// ICP of `mesh` onto `tmpl`. Alternates closest points on the template
// surface with a closed-form rigid fit; stops when the RMS residual improves
// by less than icp_tol_mm or after icp_max_iters fits. With
// icp_trim_fraction < 1 each fit uses only the closest fraction of pairs,
// which keeps expression deformations from dragging the alignment.
inline IcpResult frontalize_icp(const Mesh& mesh, const SurfaceIndex& index, const PreprocessConfig& config) {
  const Mesh& tmpl = index.mesh();
  if (mesh.empty() || tmpl.empty()) throw EmptyMesh("ICP needs non-empty source and template");

  RigidTransform current;
  if (config.icp_init_centroid) {
    Vec3 cm = Vec3::Zero(), ct = Vec3::Zero();
    for (const auto& v : mesh.vertices) cm += v;
    for (const auto& v : tmpl.vertices) ct += v;
    current.translation = ct / static_cast<double>(tmpl.size()) - cm / static_cast<double>(mesh.size());
  }

  std::vector<Vec3> points;
  const std::size_t stride =
      config.icp_max_points == 0
          ? 1
          : (mesh.size() + static_cast<std::size_t>(config.icp_max_points) - 1) / static_cast<std::size_t>(config.icp_max_points);
  for (std::size_t i = 0; i < mesh.size(); i += stride) points.push_back(mesh.vertices[i]);
  const std::size_t n = points.size();
  const auto keep = std::max<std::size_t>(
      3, std::min(n, static_cast<std::size_t>(std::ceil(config.icp_trim_fraction * static_cast<double>(n)))));
  struct State {
    RigidTransform transform;
    double residual = 0.0;
    std::vector<Vec3> src, dst;  // the `keep` closest pairs, ties by vertex index
  };
  std::vector<Vec3> moved(n), matched(n);
  std::vector<double> dist2(n);
  std::vector<std::size_t> order(n);
  auto evaluate = [&](const RigidTransform& t) {
    for (std::size_t i = 0; i < n; ++i) {
      moved[i] = t.apply(points[i]);
      const auto hit = index.closest(moved[i]);
      matched[i] = hit.point;
      dist2[i] = hit.dist2;
    }
    std::iota(order.begin(), order.end(), std::size_t{0});
    if (keep < n) {
      std::nth_element(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(keep), order.end(),
                       [&](std::size_t a, std::size_t b) { return std::pair(dist2[a], a) < std::pair(dist2[b], b); });
      std::sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(keep));
    }
    State st;
    st.transform = t;
    double sum = 0.0;
    for (std::size_t k = 0; k < keep; ++k) {
      st.src.push_back(moved[order[k]]);
      st.dst.push_back(matched[order[k]]);
      sum += dist2[order[k]];
    }
    st.residual = std::sqrt(sum / static_cast<double>(keep));
    return st;
  };
  // Increment as a 6-vector (rotation vector scaled to mm at 100 mm, translation).
  auto twist = [](const RigidTransform& d) {
    const Eigen::AngleAxisd aa(d.rotation);
    Eigen::Matrix<double, 6, 1> v;
    v << aa.axis() * aa.angle() * 100.0, d.translation;
    return v;
  };

  IcpResult result;
  State state = evaluate(current);
  result.residual_history.push_back(state.residual);
  Eigen::Matrix<double, 6, 1> last_step = Eigen::Matrix<double, 6, 1>::Zero();
  const double aligned = std::cos(10.0 * M_PI / 180.0);
  for (int it = 0; it < config.icp_max_iters; ++it) {
    const RigidTransform step = fit_rigid(state.src, state.dst);
    State next = evaluate(step * state.transform);
    if (next.residual > state.residual) break;  // round-off at convergence; keep the previous transform
    // Consecutive steps pointing the same way: keep going along the step
    // (doubling its power) while the residual drops.
    const auto v = twist(step);
    if (v.norm() > 0.0 && last_step.norm() > 0.0 && v.dot(last_step) >= aligned * v.norm() * last_step.norm()) {
      RigidTransform power = step;
      for (int k = 0; k < 5; ++k) {
        State trial = evaluate(power * next.transform);
        if (!(trial.residual < next.residual)) break;
        next = std::move(trial);
        power = power * power;
      }
    }
    last_step = twist(next.transform * state.transform.inverse());
    const double prev = state.residual;
    state = std::move(next);
    result.residual_history.push_back(state.residual);
    if (prev - state.residual < config.icp_tol_mm) break;
  }
  current = state.transform;
  result.transform = current;
  result.mesh = transformed(mesh, current);
  return result;
}

inline IcpResult frontalize_icp(const Mesh& mesh, const Mesh& tmpl, const PreprocessConfig& config) {
  return frontalize_icp(mesh, SurfaceIndex(tmpl), config);
}

// ---------------------------------------------------------------------------
// Pipeline

struct Template {
  Mesh mesh;    // nosetip-centered
  Vec3 nosetip = Vec3::Zero();
  std::shared_ptr<const SurfaceIndex> index;  // over `mesh`; built on demand when null
};

// Centers a reference mesh at its detected nosetip and crops it like the
// scans, so centroid initialization compares like with like.
inline Template prepare_template(const Mesh& reference, const PreprocessConfig& config = {}) {
  config.validate();
  const Vec3 tip = detect_nosetip(reference);
  Template t;
  t.mesh = transformed(crop_face(reference, tip, config.crop_radius_mm), RigidTransform{Eigen::Matrix3d::Identity(), -tip});
  t.nosetip = Vec3::Zero();
  t.index = std::make_shared<const SurfaceIndex>(t.mesh);
  return t;
}

struct PreprocessResult {
  Mesh mesh;                 // in the template frame
  Vec3 nosetip;              // curve origin in the template frame
  Vec3 detected_nosetip;     // in the raw scan frame
  RigidTransform transform;  // raw scan frame -> template frame
  std::vector<double> residual_history;
};

// fill -> crop -> smooth -> frontalize. Point clouds without connectivity
// skip filling and smoothing with a warning.
inline PreprocessResult preprocess_scan(const Mesh& raw, const Template& tmpl, const PreprocessConfig& config) {
  config.validate();
  if (raw.empty()) throw EmptyMesh("scan has no vertices");
  Mesh m = raw;
  if (m.has_connectivity()) {
    m = fill_holes(m);
  } else {
    warn("scan has no connectivity; skipping hole filling and smoothing");
  }
  const Vec3 tip = detect_nosetip(m);
  m = crop_face(m, tip, config.crop_radius_mm);
  if (m.has_connectivity() && config.smooth_iterations > 0) {
    m = smooth(m, config.smooth_iterations, config.smooth_lambda);
  }
  const RigidTransform center{Eigen::Matrix3d::Identity(), -tip};
  m = transformed(m, center);
  IcpResult icp = tmpl.index ? frontalize_icp(m, *tmpl.index, config) : frontalize_icp(m, tmpl.mesh, config);
  PreprocessResult r;
  r.mesh = std::move(icp.mesh);
  r.nosetip = tmpl.nosetip;
  r.detected_nosetip = tip;
  r.transform = icp.transform * center;
  r.residual_history = std::move(icp.residual_history);
  return r;
}

}  // namespace facecue
