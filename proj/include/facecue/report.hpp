#pragma once

// Images and tables. Depth grids unwrap to rectangles: one row per curve
// (by angle), one column per sample point (by radius).
//
// PPM files are binary P6 with the header "P6\n<width> <height>\n255\n"
// followed by width*height RGB triples in row-major order.
//
// Palettes map t in [0,1] so that every channel is non-decreasing in t:
//   Grayscale: (g, g, g), g = round(255 t)
//   Heat:      black -> red -> yellow -> white; R rises over [0,1/3],
//              G over [1/3,2/3], B over [2/3,1].

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "facecue/curves.hpp"
#include "facecue/error.hpp"
#include "facecue/eval.hpp"
#include "facecue/mesh_io.hpp"
#include "facecue/stats.hpp"
#include "facecue/types.hpp"
#include "facecue/util.hpp"

namespace facecue {

struct ColorImage {
  int width = 0;
  int height = 0;
  std::vector<RGB> pixels;  // row-major

  RGB& at(int row, int col) { return pixels[static_cast<std::size_t>(row * width + col)]; }
  const RGB& at(int row, int col) const { return pixels[static_cast<std::size_t>(row * width + col)]; }
  bool operator==(const ColorImage&) const = default;
};

enum class Palette { Grayscale, Heat };

struct ColorScale {
  bool fixed = false;
  double min = 0.0;
  double max = 1.0;

  static ColorScale automatic() { return {}; }
  static ColorScale fixed_range(double lo, double hi) {
    if (!std::isfinite(lo) || !std::isfinite(hi) || !(lo < hi)) throw InvariantError("fixed scale needs min < max");
    return {true, lo, hi};
  }
};

inline constexpr RGB kSignificantColor = {255, 0, 0};
inline constexpr RGB kBackgroundColor = {200, 200, 200};

inline RGB palette_color(Palette p, double t) {
  t = std::clamp(t, 0.0, 1.0);
  auto byte = [](double v) { return static_cast<unsigned char>(std::lround(255.0 * std::clamp(v, 0.0, 1.0))); };
  if (p == Palette::Grayscale) {
    const auto g = byte(t);
    return {g, g, g};
  }
  return {byte(3.0 * t), byte(3.0 * t - 1.0), byte(3.0 * t - 2.0)};
}

namespace detail {

inline ColorImage blank_image(int rows, int cols, int upscale) {
  if (upscale < 1) throw InvariantError("upscale must be at least 1");
  ColorImage img;
  img.width = cols * upscale;
  img.height = rows * upscale;
  img.pixels.assign(static_cast<std::size_t>(img.width) * static_cast<std::size_t>(img.height), RGB{0, 0, 0});
  return img;
}

inline void paint_cell(ColorImage& img, int row, int col, int upscale, RGB c) {
  for (int dr = 0; dr < upscale; ++dr)
    for (int dc = 0; dc < upscale; ++dc) img.at(row * upscale + dr, col * upscale + dc) = c;
}

inline std::pair<double, double> scale_range(std::span<const double> values, const ColorScale& scale) {
  for (double v : values) {
    if (!std::isfinite(v)) throw NonFiniteInput("grid contains a non-finite value");
  }
  if (scale.fixed) return {scale.min, scale.max};
  if (values.empty()) return {0.0, 1.0};
  const auto [lo, hi] = std::minmax_element(values.begin(), values.end());
  return {*lo, *hi};
}

inline double unit(double v, double lo, double hi) { return hi > lo ? (v - lo) / (hi - lo) : 0.0; }

}  // namespace detail

// `values` is curve-major (values[row * cols + col]). A constant grid under
// Auto scale maps to the palette start.
inline ColorImage render_grid(std::span<const double> values, int rows, int cols, Palette palette,
                              const ColorScale& scale = {}, int upscale = 1) {
  if (rows < 1 || cols < 1 || values.size() != static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols)) {
    throw DimensionMismatch("grid values do not fill a " + std::to_string(rows) + "x" + std::to_string(cols) + " image");
  }
  const auto [lo, hi] = detail::scale_range(values, scale);
  ColorImage img = detail::blank_image(rows, cols, upscale);
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) {
      const double v = values[static_cast<std::size_t>(r * cols + c)];
      detail::paint_cell(img, r, c, upscale, palette_color(palette, detail::unit(v, lo, hi)));
    }
  }
  return img;
}

inline ColorImage render_grid(const DepthFeatureGrid& grid, Palette palette, const ColorScale& scale = {},
                              int upscale = 1) {
  return render_grid(grid.depths, grid.n_curves, grid.n_points, palette, scale, upscale);
}

inline ColorImage render_significance(const SignificanceMap& map, double alpha, int upscale = 1) {
  auto it = map.masks.find(alpha);
  if (it == map.masks.end()) throw UnknownAlpha("no mask at alpha " + format_double(alpha));
  ColorImage img = detail::blank_image(map.rows, map.cols, upscale);
  for (int r = 0; r < map.rows; ++r) {
    for (int c = 0; c < map.cols; ++c) {
      const bool sig = it->second[static_cast<std::size_t>(r * map.cols + c)] != 0;
      detail::paint_cell(img, r, c, upscale, sig ? kSignificantColor : kBackgroundColor);
    }
  }
  return img;
}

inline std::string format_ppm(const ColorImage& img) {
  if (img.pixels.size() != static_cast<std::size_t>(img.width) * static_cast<std::size_t>(img.height)) {
    throw InvariantError("pixel count differs from width x height");
  }
  std::string out = "P6\n" + std::to_string(img.width) + " " + std::to_string(img.height) + "\n255\n";
  out.reserve(out.size() + 3 * img.pixels.size());
  for (const auto& p : img.pixels) out.append(reinterpret_cast<const char*>(p.data()), 3);
  return out;
}

inline void save_ppm(const ColorImage& img, const std::filesystem::path& path) {
  detail::write_file(path, format_ppm(img));
}

inline ColorImage parse_ppm(std::string_view data, const std::string& ctx = "ppm") {
  std::size_t pos = 0;
  auto token = [&]() {
    while (pos < data.size() && std::isspace(static_cast<unsigned char>(data[pos]))) ++pos;
    const auto start = pos;
    while (pos < data.size() && !std::isspace(static_cast<unsigned char>(data[pos]))) ++pos;
    return data.substr(start, pos - start);
  };
  if (token() != "P6") throw ParseError(ctx + ": not a P6 image");
  ColorImage img;
  img.width = static_cast<int>(parse_int(token(), ctx + ": width"));
  img.height = static_cast<int>(parse_int(token(), ctx + ": height"));
  if (parse_int(token(), ctx + ": maxval") != 255) throw ParseError(ctx + ": maxval must be 255");
  ++pos;
  const auto n = static_cast<std::size_t>(img.width) * static_cast<std::size_t>(img.height);
  if (img.width < 0 || img.height < 0 || data.size() - pos != 3 * n) throw ParseError(ctx + ": truncated pixel data");
  img.pixels.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (int c = 0; c < 3; ++c) img.pixels[i][static_cast<std::size_t>(c)] = static_cast<unsigned char>(data[pos + 3 * i + c]);
  }
  return img;
}

// ---------------------------------------------------------------------------
// Mesh painting: each vertex takes the color of the grid cell nearest to its
// polar position around `nosetip` in the xy plane. Vertices beyond the
// outermost ring are background gray.

namespace detail {

inline std::optional<std::size_t> cell_of(const Vec3& v, const Vec3& nosetip, const CurveParams& params) {
  const double dx = v.x() - nosetip.x(), dy = v.y() - nosetip.y();
  const double r = std::hypot(dx, dy);
  const double step = params.r_max_mm / params.n_points;
  if (r > params.r_max_mm + 0.5 * step) return std::nullopt;
  double theta = std::atan2(dy, dx);
  if (theta < 0) theta += 2.0 * M_PI;
  const auto j = static_cast<int>(std::lround(theta / (2.0 * M_PI / params.n_curves))) % params.n_curves;
  const int k = std::clamp(static_cast<int>(std::lround(r / step)) - 1, 0, params.n_points - 1);
  return static_cast<std::size_t>(j * params.n_points + k);
}

}  // namespace detail

inline std::vector<RGB> grid_vertex_colors(const Mesh& mesh, const Vec3& nosetip, std::span<const double> values,
                                           const CurveParams& params, Palette palette, const ColorScale& scale = {}) {
  params.validate();
  if (values.size() != params.size()) throw DimensionMismatch("grid values do not match the curve parameters");
  const auto [lo, hi] = detail::scale_range(values, scale);
  std::vector<RGB> colors(mesh.size(), kBackgroundColor);
  for (std::size_t i = 0; i < mesh.size(); ++i) {
    if (auto c = detail::cell_of(mesh.vertices[i], nosetip, params)) {
      colors[i] = palette_color(palette, detail::unit(values[*c], lo, hi));
    }
  }
  return colors;
}

inline std::vector<RGB> significance_vertex_colors(const Mesh& mesh, const Vec3& nosetip, const SignificanceMap& map,
                                                   double alpha, const CurveParams& params) {
  auto it = map.masks.find(alpha);
  if (it == map.masks.end()) throw UnknownAlpha("no mask at alpha " + format_double(alpha));
  if (it->second.size() != params.size()) throw DimensionMismatch("mask does not match the curve parameters");
  std::vector<RGB> colors(mesh.size(), kBackgroundColor);
  for (std::size_t i = 0; i < mesh.size(); ++i) {
    auto c = detail::cell_of(mesh.vertices[i], nosetip, params);
    if (c && it->second[*c]) colors[i] = kSignificantColor;
  }
  return colors;
}

// ---------------------------------------------------------------------------
// Tables. Rates are fractions in [0,1], written in shortest round-trip form.
//
//   rates.csv:   label,Female,Male,All,#Scans
//   matrix.csv:  train\test,NT,HP,DI,SP,SD   then one row per training expression
//   spectra.csv: component,<Gender>_<Expression>,...   (blank past a spectrum's end)
//   tables.json: {"rates":[{"label","female","male","all","n_scans"}],
//                 "matrix":{"axes","accuracy","n_test","n_correct","summary"}|null,
//                 "spectra":[{"gender","expression","ratios"}]}

struct RateRow {
  std::string label;
  Rates rates;
};

struct TableSet {
  std::vector<RateRow> rates;
  std::optional<ExpressionMatrix> matrix;
  std::vector<VarianceSpectrum> spectra;
};

inline std::string format_rates_csv(const std::vector<RateRow>& rows) {
  std::string out = "label,Female,Male,All,#Scans\n";
  for (const auto& r : rows) {
    out += r.label + ',';
    append_double(out, r.rates.female);
    out += ',';
    append_double(out, r.rates.male);
    out += ',';
    append_double(out, r.rates.overall);
    out += ',' + std::to_string(r.rates.n()) + '\n';
  }
  return out;
}

inline std::string format_matrix_csv(const ExpressionMatrix& m) {
  std::string out = "train\\test";
  for (Expression e : kAllExpressions) out += ',' + std::string(short_label(e));
  out += '\n';
  for (Expression train : kAllExpressions) {
    out += short_label(train);
    for (Expression test : kAllExpressions) {
      out += ',';
      append_double(out, m.at(train, test).accuracy);
    }
    out += '\n';
  }
  return out;
}

inline std::string spectrum_label(const VarianceSpectrum& s) {
  return std::string(to_string(s.gender)) + "_" + std::string(to_string(s.expression));
}

inline std::string format_spectra_csv(const std::vector<VarianceSpectrum>& spectra) {
  std::string out = "component";
  std::size_t len = 0;
  for (const auto& s : spectra) {
    out += ',' + spectrum_label(s);
    len = std::max(len, s.ratios.size());
  }
  out += '\n';
  for (std::size_t k = 0; k < len; ++k) {
    out += std::to_string(k + 1);
    for (const auto& s : spectra) {
      out += ',';
      if (k < s.ratios.size()) append_double(out, s.ratios[k]);
    }
    out += '\n';
  }
  return out;
}

inline std::string format_histogram_csv(const DecisionHistogram& h) {
  std::string out = "bin_left,bin_right,count_neutral,count_expressive\n";
  for (std::size_t b = 0; b < h.count_neutral.size(); ++b) {
    append_double(out, h.edges[b]);
    out += ',';
    append_double(out, h.edges[b + 1]);
    out += ',' + std::to_string(h.count_neutral[b]) + ',' + std::to_string(h.count_expressive[b]) + '\n';
  }
  return out;
}

// One row per cell: curve, point, t, p, then one 0/1 column per alpha.
inline std::string format_saliency_csv(const SignificanceMap& m) {
  std::string out = "curve,point,t,p";
  for (const auto& [alpha, mask] : m.masks) out += ",mask_" + format_double(alpha);
  out += '\n';
  for (int j = 0; j < m.rows; ++j) {
    for (int k = 0; k < m.cols; ++k) {
      const auto c = static_cast<std::size_t>(j * m.cols + k);
      out += std::to_string(j) + ',' + std::to_string(k) + ',';
      append_double(out, m.t_values[c]);
      out += ',';
      append_double(out, m.p_values[c]);
      for (const auto& [alpha, mask] : m.masks) out += mask[c] ? ",1" : ",0";
      out += '\n';
    }
  }
  return out;
}

inline nlohmann::json tables_json(const TableSet& t) {
  nlohmann::json rates = nlohmann::json::array();
  for (const auto& r : t.rates) {
    rates.push_back({{"label", r.label},
                     {"female", r.rates.female},
                     {"male", r.rates.male},
                     {"all", r.rates.overall},
                     {"n_scans", r.rates.n()}});
  }
  nlohmann::json matrix = nullptr;
  if (t.matrix) {
    matrix = to_json(*t.matrix);
    matrix.erase("audit");
    matrix.erase("config");
  }
  nlohmann::json spectra = nlohmann::json::array();
  for (const auto& s : t.spectra) {
    spectra.push_back({{"gender", to_string(s.gender)}, {"expression", to_string(s.expression)}, {"ratios", s.ratios}});
  }
  return {{"rates", rates}, {"matrix", matrix}, {"spectra", spectra}};
}

// Writes rates.csv, matrix.csv and spectra.csv for the parts present, and
// tables.json always.
inline void write_tables(const TableSet& tables, const std::filesystem::path& out_dir) {
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw IoError("cannot create " + out_dir.string() + ": " + ec.message());
  if (!tables.rates.empty()) detail::write_file(out_dir / "rates.csv", format_rates_csv(tables.rates));
  if (tables.matrix) detail::write_file(out_dir / "matrix.csv", format_matrix_csv(*tables.matrix));
  if (!tables.spectra.empty()) detail::write_file(out_dir / "spectra.csv", format_spectra_csv(tables.spectra));
  detail::write_file(out_dir / "tables.json", tables_json(tables).dump(1) + "\n");
}

}  // namespace facecue
