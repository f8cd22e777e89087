#pragma once

// Mesh, manifest and landmark file formats.
//
// PLY_ASCII   standard ASCII PLY. The vertex element must carry x, y, z
//             properties (any other properties are ignored); an optional
//             face element carries `property list <count> <index> ...`.
//             Polygons with more than three corners are fan-triangulated.
// XYZ         one "x y z" triple per line; blank lines and '#' comments
//             are skipped. No connectivity.
// RANGE_GRID  "rows=R" and "cols=C" header lines, then R*C validity flags
//             (0/1, row-major), then the X, Y and Z blocks of R*C values
//             each, row-major. Values of invalid cells are not parsed.
//             One vertex per valid cell, in row-major order.
//
// All numeric text is '.'-decimal and locale independent. Coordinates are
// millimeters.

#include <Eigen/Core>

#include <algorithm>
#include <array>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "facecue/error.hpp"
#include "facecue/log.hpp"
#include "facecue/types.hpp"
#include "facecue/util.hpp"

namespace facecue {

using Vec3 = Eigen::Vector3d;
using Vec2 = Eigen::Vector2d;
using Face = std::array<int, 3>;

// Row-major cell table of a range-scanner grid. cell_vertex[r * cols + c] is
// the index of the vertex sampled at that cell, or -1 for an invalid cell.
struct RangeGrid {
  int rows = 0;
  int cols = 0;
  std::vector<int> cell_vertex;

  bool valid(int r, int c) const { return cell_vertex[static_cast<std::size_t>(r * cols + c)] >= 0; }
  int vertex_at(int r, int c) const { return cell_vertex[static_cast<std::size_t>(r * cols + c)]; }
  std::size_t valid_count() const {
    return static_cast<std::size_t>(
        std::count_if(cell_vertex.begin(), cell_vertex.end(), [](int v) { return v >= 0; }));
  }
  bool operator==(const RangeGrid&) const = default;
};

struct Mesh {
  std::vector<Vec3> vertices;
  std::vector<Face> faces;
  std::optional<RangeGrid> grid;

  std::size_t size() const { return vertices.size(); }
  bool empty() const { return vertices.empty(); }
  bool has_connectivity() const { return grid.has_value() || !faces.empty(); }
};

inline void validate(const Mesh& m) {
  const auto n = static_cast<long long>(m.vertices.size());
  for (std::size_t i = 0; i < m.vertices.size(); ++i) {
    if (!m.vertices[i].allFinite()) {
      throw InvariantError("vertex " + std::to_string(i) + " is not finite");
    }
  }
  for (std::size_t f = 0; f < m.faces.size(); ++f) {
    for (int idx : m.faces[f]) {
      if (idx < 0 || idx >= n) {
        throw InvariantError("face " + std::to_string(f) + " references vertex " +
                             std::to_string(idx) + " of " + std::to_string(n));
      }
    }
  }
  if (m.grid) {
    const auto& g = *m.grid;
    if (g.rows < 0 || g.cols < 0 ||
        g.cell_vertex.size() != static_cast<std::size_t>(g.rows) * static_cast<std::size_t>(g.cols)) {
      throw InvariantError("grid cell table does not match rows x cols");
    }
    if (g.valid_count() != m.vertices.size()) {
      throw InvariantError("grid valid-cell count " + std::to_string(g.valid_count()) +
                           " differs from vertex count " + std::to_string(n));
    }
    std::vector<char> seen(m.vertices.size(), 0);
    for (int v : g.cell_vertex) {
      if (v < 0) continue;
      if (v >= n || seen[static_cast<std::size_t>(v)]) {
        throw InvariantError("grid cell table is not a bijection onto vertices");
      }
      seen[static_cast<std::size_t>(v)] = 1;
    }
  }
}

enum class MeshFormat { PLY_ASCII, XYZ, RANGE_GRID };

inline MeshFormat mesh_format_from_path(const std::filesystem::path& p) {
  auto ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  if (ext == ".ply") return MeshFormat::PLY_ASCII;
  if (ext == ".xyz") return MeshFormat::XYZ;
  if (ext == ".grid" || ext == ".rng" || ext == ".abs") return MeshFormat::RANGE_GRID;
  throw ParseError("cannot infer mesh format from extension of " + p.string());
}

namespace detail {

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_file(const std::filesystem::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(content.data(), static_cast<std::streamsize>(content.size()));
  if (!out) throw IoError("write failed for " + path.string());
}

// Splits text into lines, dropping a trailing '\r' from each.
inline std::vector<std::string_view> lines_of(std::string_view text) {
  std::vector<std::string_view> lines;
  std::size_t start = 0;
  while (start < text.size()) {
    auto end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    auto line = text.substr(start, end - start);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    lines.push_back(line);
    start = end + 1;
  }
  return lines;
}

inline Mesh parse_ply(std::string_view text, const std::string& ctx) {
  auto lines = lines_of(text);
  std::size_t li = 0;
  auto next_line = [&]() -> std::string_view {
    if (li >= lines.size()) throw ParseError(ctx + ": unexpected end of file");
    return lines[li++];
  };
  if (trim(next_line()) != "ply") throw ParseError(ctx + ": missing 'ply' magic");

  struct Element {
    std::string name;
    std::size_t count = 0;
    std::vector<std::string> props;
    bool list_face = false;
  };
  std::vector<Element> elements;
  bool ascii = false;
  while (true) {
    auto tok = split_ws(next_line());
    if (tok.empty()) continue;
    if (tok[0] == "end_header") break;
    if (tok[0] == "comment" || tok[0] == "obj_info") continue;
    if (tok[0] == "format") {
      if (tok.size() < 2 || tok[1] != "ascii") throw ParseError(ctx + ": only ascii PLY is supported");
      ascii = true;
    } else if (tok[0] == "element") {
      if (tok.size() != 3) throw ParseError(ctx + ": malformed element line");
      auto count = parse_int(tok[2], ctx + ": element count");
      if (count < 0) throw ParseError(ctx + ": negative element count");
      elements.push_back({std::string(tok[1]), static_cast<std::size_t>(count), {}, false});
    } else if (tok[0] == "property") {
      if (elements.empty()) throw ParseError(ctx + ": property before element");
      if (tok.size() >= 5 && tok[1] == "list") {
        elements.back().list_face = true;
        elements.back().props.emplace_back(tok[4]);
      } else if (tok.size() == 3) {
        elements.back().props.emplace_back(tok[2]);
      } else {
        throw ParseError(ctx + ": malformed property line");
      }
    } else {
      throw ParseError(ctx + ": unknown header keyword '" + std::string(tok[0]) + "'");
    }
  }
  if (!ascii) throw ParseError(ctx + ": missing format line");

  Mesh mesh;
  for (const auto& el : elements) {
    if (el.name == "vertex") {
      auto find = [&](const char* name) -> std::size_t {
        auto it = std::find(el.props.begin(), el.props.end(), name);
        if (it == el.props.end()) throw ParseError(ctx + ": vertex element lacks property " + name);
        return static_cast<std::size_t>(it - el.props.begin());
      };
      const std::size_t ix = find("x"), iy = find("y"), iz = find("z");
      mesh.vertices.reserve(el.count);
      for (std::size_t i = 0; i < el.count; ++i) {
        if (li >= lines.size()) {
          throw ParseError(ctx + ": header declares " + std::to_string(el.count) +
                           " vertices but body has " + std::to_string(i));
        }
        auto tok = split_ws(lines[li++]);
        if (tok.size() != el.props.size()) {
          throw ParseError(ctx + ": vertex line " + std::to_string(i) + " has " +
                           std::to_string(tok.size()) + " fields");
        }
        const std::string where = ctx + ": vertex " + std::to_string(i);
        mesh.vertices.emplace_back(parse_double(tok[ix], where), parse_double(tok[iy], where),
                                   parse_double(tok[iz], where));
      }
    } else if (el.name == "face") {
      if (!el.list_face) throw ParseError(ctx + ": face element without list property");
      for (std::size_t i = 0; i < el.count; ++i) {
        if (li >= lines.size()) {
          throw ParseError(ctx + ": header declares " + std::to_string(el.count) +
                           " faces but body has " + std::to_string(i));
        }
        auto tok = split_ws(lines[li++]);
        const std::string where = ctx + ": face " + std::to_string(i);
        if (tok.empty()) throw ParseError(where + " is empty");
        auto k = parse_int(tok[0], where);
        if (k < 3 || tok.size() < static_cast<std::size_t>(k) + 1) throw ParseError(where + " is malformed");
        std::vector<int> poly;
        for (long long j = 0; j < k; ++j) {
          poly.push_back(static_cast<int>(parse_int(tok[static_cast<std::size_t>(j) + 1], where)));
        }
        for (std::size_t j = 1; j + 1 < poly.size(); ++j) {
          mesh.faces.push_back({poly[0], poly[j], poly[j + 1]});
        }
      }
    } else {
      // Unknown elements are skipped line by line.
      for (std::size_t i = 0; i < el.count; ++i) {
        if (li >= lines.size()) throw ParseError(ctx + ": truncated element " + el.name);
        ++li;
      }
    }
  }
  for (; li < lines.size(); ++li) {
    if (!trim(lines[li]).empty()) throw ParseError(ctx + ": trailing data after declared elements");
  }
  return mesh;
}

inline Mesh parse_xyz(std::string_view text, const std::string& ctx) {
  Mesh mesh;
  auto lines = lines_of(text);
  for (std::size_t i = 0; i < lines.size(); ++i) {
    auto line = trim(lines[i]);
    if (line.empty() || line.front() == '#') continue;
    auto tok = split_ws(line);
    const std::string where = ctx + ": line " + std::to_string(i + 1);
    if (tok.size() != 3) throw ParseError(where + " does not have 3 fields");
    mesh.vertices.emplace_back(parse_double(tok[0], where), parse_double(tok[1], where),
                               parse_double(tok[2], where));
  }
  return mesh;
}

inline Mesh parse_range_grid(std::string_view text, const std::string& ctx) {
  auto lines = lines_of(text);
  std::size_t li = 0;
  auto header_value = [&](std::string_view key) -> int {
    while (li < lines.size() && trim(lines[li]).empty()) ++li;
    if (li >= lines.size()) throw ParseError(ctx + ": missing header " + std::string(key));
    auto line = trim(lines[li++]);
    auto eq = line.find('=');
    if (eq == std::string_view::npos || trim(line.substr(0, eq)) != key) {
      throw ParseError(ctx + ": expected '" + std::string(key) + "=' header");
    }
    auto v = parse_int(line.substr(eq + 1), ctx + ": " + std::string(key));
    if (v < 0) throw ParseError(ctx + ": negative " + std::string(key));
    return static_cast<int>(v);
  };
  const int rows = header_value("rows");
  const int cols = header_value("cols");
  const std::size_t cells = static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols);

  std::vector<std::string_view> tokens;
  for (; li < lines.size(); ++li) {
    for (auto t : split_ws(lines[li])) tokens.push_back(t);
  }
  if (tokens.size() != 4 * cells) {
    throw ParseError(ctx + ": expected " + std::to_string(4 * cells) + " grid values, found " +
                     std::to_string(tokens.size()));
  }
  RangeGrid grid{rows, cols, std::vector<int>(cells, -1)};
  int next = 0;
  for (std::size_t c = 0; c < cells; ++c) {
    if (tokens[c] == "1") {
      grid.cell_vertex[c] = next++;
    } else if (tokens[c] != "0") {
      throw ParseError(ctx + ": validity flag must be 0 or 1, got '" + std::string(tokens[c]) + "'");
    }
  }
  Mesh mesh;
  mesh.vertices.resize(static_cast<std::size_t>(next));
  for (int axis = 0; axis < 3; ++axis) {
    for (std::size_t c = 0; c < cells; ++c) {
      int v = grid.cell_vertex[c];
      if (v < 0) continue;
      mesh.vertices[static_cast<std::size_t>(v)][axis] =
          parse_double(tokens[cells * static_cast<std::size_t>(axis + 1) + c],
                       ctx + ": cell " + std::to_string(c));
    }
  }
  mesh.grid = std::move(grid);
  return mesh;
}

}  // namespace detail

inline Mesh parse_mesh(std::string_view text, MeshFormat format, const std::string& context = "mesh") {
  Mesh m;
  switch (format) {
    case MeshFormat::PLY_ASCII: m = detail::parse_ply(text, context); break;
    case MeshFormat::XYZ: m = detail::parse_xyz(text, context); break;
    case MeshFormat::RANGE_GRID: m = detail::parse_range_grid(text, context); break;
  }
  validate(m);
  return m;
}

inline Mesh load_mesh(const std::filesystem::path& path, MeshFormat format) {
  return parse_mesh(detail::read_file(path), format, path.string());
}

inline Mesh load_mesh(const std::filesystem::path& path) {
  return load_mesh(path, mesh_format_from_path(path));
}

using RGB = std::array<unsigned char, 3>;

// PLY text for a mesh; `colors`, when given, adds uchar red/green/blue
// vertex properties and must match the vertex count.
inline std::string format_ply(const Mesh& mesh, const std::vector<RGB>* colors = nullptr) {
  std::string out;
  out += "ply\nformat ascii 1.0\nelement vertex " + std::to_string(mesh.vertices.size()) +
         "\nproperty double x\nproperty double y\nproperty double z\n";
  if (colors) out += "property uchar red\nproperty uchar green\nproperty uchar blue\n";
  out += "element face " + std::to_string(mesh.faces.size()) +
         "\nproperty list uchar int vertex_indices\nend_header\n";
  for (std::size_t i = 0; i < mesh.vertices.size(); ++i) {
    const auto& v = mesh.vertices[i];
    append_double(out, v.x());
    out += ' ';
    append_double(out, v.y());
    out += ' ';
    append_double(out, v.z());
    if (colors) {
      const auto& c = (*colors)[i];
      out += ' ' + std::to_string(c[0]) + ' ' + std::to_string(c[1]) + ' ' + std::to_string(c[2]);
    }
    out += '\n';
  }
  for (const auto& f : mesh.faces) {
    out += "3 " + std::to_string(f[0]) + ' ' + std::to_string(f[1]) + ' ' + std::to_string(f[2]) + '\n';
  }
  return out;
}

inline void save_mesh(const Mesh& mesh, const std::filesystem::path& path, MeshFormat format) {
  validate(mesh);
  std::string out;
  switch (format) {
    case MeshFormat::PLY_ASCII:
      out = format_ply(mesh);
      break;
    case MeshFormat::XYZ:
      if (!mesh.faces.empty()) {
        warn("XYZ has no face records; dropping " + std::to_string(mesh.faces.size()) +
             " faces when writing " + path.string());
      }
      for (const auto& v : mesh.vertices) {
        append_double(out, v.x());
        out += ' ';
        append_double(out, v.y());
        out += ' ';
        append_double(out, v.z());
        out += '\n';
      }
      break;
    case MeshFormat::RANGE_GRID:
      throw IoError("RANGE_GRID is an input-only format");
  }
  detail::write_file(path, out);
}

inline void save_colored_ply(const Mesh& mesh, const std::vector<RGB>& colors,
                             const std::filesystem::path& path) {
  validate(mesh);
  if (colors.size() != mesh.vertices.size()) {
    throw InvariantError("color count differs from vertex count");
  }
  detail::write_file(path, format_ply(mesh, &colors));
}

// ---------------------------------------------------------------------------
// Dataset manifest.

struct ScanRecord {
  std::string scan_id;
  std::string subject_id;
  Gender gender = Gender::Female;
  Expression expression = Expression::Neutral;
  Ethnicity ethnicity = Ethnicity::NonAsian;
  int age = 0;
  std::filesystem::path mesh_path;
  std::optional<std::filesystem::path> landmarks_path;

  bool operator==(const ScanRecord&) const = default;
};

inline constexpr std::string_view kManifestHeader =
    "scan_id,subject_id,gender,expression,ethnicity,age,mesh_path,landmarks_path";

inline constexpr int kManifestAgeLimit = 40;

// Relative paths are resolved against `base_dir`.
inline std::vector<ScanRecord> parse_manifest(std::string_view text, const std::filesystem::path& base_dir,
                                              const std::string& ctx = "manifest") {
  auto lines = detail::lines_of(text);
  std::size_t li = 0;
  while (li < lines.size() && trim(lines[li]).empty()) ++li;
  if (li >= lines.size() || trim(lines[li]) != kManifestHeader) {
    throw ParseError(ctx + ": header must be '" + std::string(kManifestHeader) + "'");
  }
  ++li;
  std::vector<ScanRecord> records;
  std::set<std::pair<std::string, Expression>> subject_expr;
  std::set<std::string> scan_ids;
  for (; li < lines.size(); ++li) {
    auto line = trim(lines[li]);
    if (line.empty()) continue;
    const std::string where = ctx + ": line " + std::to_string(li + 1);
    auto f = split(line, ',');
    if (f.size() != 8) throw ParseError(where + " has " + std::to_string(f.size()) + " fields, expected 8");
    ScanRecord r;
    r.scan_id = std::string(trim(f[0]));
    r.subject_id = std::string(trim(f[1]));
    if (r.scan_id.empty() || r.subject_id.empty()) throw ParseError(where + ": empty scan or subject id");
    r.gender = parse_gender(trim(f[2]));
    r.expression = parse_expression(trim(f[3]));
    r.ethnicity = parse_ethnicity(trim(f[4]));
    auto age = parse_int(f[5], where + ": age");
    if (age < 0) throw InvariantError(where + ": negative age");
    r.age = static_cast<int>(age);
    if (r.age > kManifestAgeLimit) {
      warn(where + ": subject " + r.subject_id + " has age " + std::to_string(r.age) + " > " +
           std::to_string(kManifestAgeLimit));
    }
    auto resolve = [&](std::string_view p) {
      std::filesystem::path path{std::string(trim(p))};
      return path.is_relative() ? base_dir / path : path;
    };
    if (trim(f[6]).empty()) throw ParseError(where + ": empty mesh_path");
    r.mesh_path = resolve(f[6]);
    if (!trim(f[7]).empty()) r.landmarks_path = resolve(f[7]);
    if (!scan_ids.insert(r.scan_id).second) throw DuplicateScanError(where + ": scan_id " + r.scan_id);
    if (!subject_expr.insert({r.subject_id, r.expression}).second) {
      throw DuplicateScanError(where + ": subject " + r.subject_id + " already has a " +
                               std::string(to_string(r.expression)) + " scan");
    }
    records.push_back(std::move(r));
  }
  return records;
}

inline std::vector<ScanRecord> load_manifest(const std::filesystem::path& path) {
  return parse_manifest(detail::read_file(path), path.parent_path(), path.string());
}

// Writes paths relative to `base_dir` when they live beneath it.
inline std::string format_manifest(const std::vector<ScanRecord>& records,
                                   const std::filesystem::path& base_dir) {
  auto rel = [&](const std::filesystem::path& p) {
    auto r = p.lexically_relative(base_dir);
    if (r.empty() || r.native().starts_with("..")) return p.generic_string();
    return r.generic_string();
  };
  std::string out(kManifestHeader);
  out += '\n';
  for (const auto& r : records) {
    out += r.scan_id + ',' + r.subject_id + ',' + std::string(to_string(r.gender)) + ',' +
           std::string(to_string(r.expression)) + ',' + std::string(to_string(r.ethnicity)) + ',' +
           std::to_string(r.age) + ',' + rel(r.mesh_path) + ',' +
           (r.landmarks_path ? rel(*r.landmarks_path) : std::string()) + '\n';
  }
  return out;
}

inline void save_manifest(const std::vector<ScanRecord>& records, const std::filesystem::path& path) {
  detail::write_file(path, format_manifest(records, path.parent_path()));
}

// Dataset selection: drops scans of subjects older than `max_age`, then keeps
// only subjects with a neutral scan and at least one expressive scan.
inline std::vector<ScanRecord> filter_manifest(const std::vector<ScanRecord>& records,
                                               int max_age = kManifestAgeLimit) {
  std::map<std::string, std::pair<bool, bool>> has;  // neutral, expressive
  for (const auto& r : records) {
    if (r.age > max_age) continue;
    auto& h = has[r.subject_id];
    (r.expression == Expression::Neutral ? h.first : h.second) = true;
  }
  std::vector<ScanRecord> out;
  for (const auto& r : records) {
    if (r.age > max_age) continue;
    const auto& h = has[r.subject_id];
    if (h.first && h.second) out.push_back(r);
  }
  return out;
}

// ---------------------------------------------------------------------------
// 68-point 2D landmarks.

inline constexpr std::size_t kLandmarkCount = 68;
inline constexpr int kDefaultNosetipLandmark = 30;

struct Landmarks68 {
  std::array<Vec2, kLandmarkCount> points;
  int nosetip_index = kDefaultNosetipLandmark;
};

inline Landmarks68 parse_landmarks(std::string_view text, const std::string& ctx = "landmarks",
                                   int nosetip_index = kDefaultNosetipLandmark) {
  std::vector<Vec2> pts;
  auto lines = detail::lines_of(text);
  for (std::size_t i = 0; i < lines.size(); ++i) {
    auto line = trim(lines[i]);
    if (line.empty()) continue;
    auto tok = split_ws(line);
    const std::string where = ctx + ": line " + std::to_string(i + 1);
    if (tok.size() != 2) throw ParseError(where + " does not have 2 fields");
    pts.emplace_back(parse_double(tok[0], where), parse_double(tok[1], where));
  }
  if (pts.size() != kLandmarkCount) {
    throw CountError(ctx + ": expected 68 landmarks, found " + std::to_string(pts.size()));
  }
  if (nosetip_index < 0 || nosetip_index >= static_cast<int>(kLandmarkCount)) {
    throw InvariantError(ctx + ": nosetip index out of range");
  }
  Landmarks68 lm;
  std::copy(pts.begin(), pts.end(), lm.points.begin());
  lm.nosetip_index = nosetip_index;
  return lm;
}

inline Landmarks68 load_landmarks(const std::filesystem::path& path,
                                  int nosetip_index = kDefaultNosetipLandmark) {
  return parse_landmarks(detail::read_file(path), path.string(), nosetip_index);
}

}  // namespace facecue
