#pragma once

// Synthetic expressive-face corpora with planted, per-expression gender
// effects. Faces are analytic height fields z = h(x, y) over a regular xy
// grid (nosetip at the origin before pose jitter):
//
//   h = base + morph_sign * gap/2 * morph + sum_k c_k * subject_basis_k
//       + expression deformation + sensor noise
//
// The expression deformation of a scan is a weighted sum of deformation
// fields (smooth Gaussian bumps around the mouth, cheeks, eyes, brows). For
// each expression the primary field is scaled by the subject's gendered
// amplitude times a per-subject intensity; female deformations may mix in
// additional fields with random weights.

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "facecue/error.hpp"
#include "facecue/mesh_io.hpp"
#include "facecue/preprocess.hpp"
#include "facecue/types.hpp"
#include "facecue/util.hpp"

namespace facecue {

struct Bump {
  double cx, cy, sx, sy, amplitude;

  double operator()(double x, double y) const {
    const double dx = (x - cx) / sx, dy = (y - cy) / sy;
    return amplitude * std::exp(-0.5 * (dx * dx + dy * dy));
  }
};

struct DeformationField {
  std::string name;
  std::vector<Bump> bumps;

  double operator()(double x, double y) const {
    double s = 0.0;
    for (const auto& b : bumps) s += b(x, y);
    return s;
  }
};

namespace detail {

inline std::vector<Bump> mirrored(double cx, double cy, double sx, double sy, double a) {
  return {{-cx, cy, sx, sy, a}, {cx, cy, sx, sy, a}};
}

inline std::vector<Bump> concat(std::initializer_list<std::vector<Bump>> parts, double scale = 1.0) {
  std::vector<Bump> out;
  for (const auto& p : parts) {
    for (auto b : p) {
      b.amplitude *= scale;
      out.push_back(b);
    }
  }
  return out;
}

inline std::vector<Bump> scaled(std::vector<Bump> v, double s) {
  for (auto& b : v) b.amplitude *= s;
  return v;
}

}  // namespace detail

// Field library, indexed by field id.
inline const std::vector<DeformationField>& deformation_fields() {
  using detail::concat;
  using detail::mirrored;
  using detail::scaled;
  static const std::vector<DeformationField> fields = [] {
    const auto cheeks_up = mirrored(34, -16, 12, 10, 1.0);
    const auto corners_in = mirrored(24, -42, 6, 6, -0.6);
    const auto lower_lids = mirrored(30, 26, 9, 6, 1.0);
    const auto jaw = std::vector<Bump>{{0, -46, 14, 9, -1.0}, {0, -68, 14, 10, -0.8}};
    const auto brows = mirrored(28, 44, 12, 6, 1.0);
    const auto nose_sides = concat({mirrored(11, 14, 6, 7, 1.0), {{0, -28, 10, 5, 0.6}}});
    const auto corners_down = mirrored(22, -46, 7, 7, -1.0);
    const auto inner_brows = mirrored(12, 40, 6, 5, 0.6);
    std::vector<DeformationField> f;
    f.push_back({"smile", concat({cheeks_up, corners_in})});                       // 0
    f.push_back({"eye_squint", lower_lids});                                       // 1
    f.push_back({"mouth_open", jaw});                                              // 2
    f.push_back({"brow_raise", brows});                                            // 3
    f.push_back({"nose_wrinkle", nose_sides});                                     // 4
    f.push_back({"lip_depress", concat({corners_down, inner_brows})});             // 5
    f.push_back({"disgust", concat({nose_sides, scaled(lower_lids, 0.7), scaled(corners_down, 0.8)})});  // 6
    f.push_back({"surprise", concat({jaw, brows})});                               // 7
    f.push_back({"sad", concat({corners_down, scaled(inner_brows, 1.5)})});        // 8
    return f;
  }();
  return fields;
}

// Static male/female morphology difference (unit scale).
inline const DeformationField& gender_morph_field() {
  static const DeformationField f{
      "gender_morph",
      detail::concat({{{0, 0, 9, 14, 0.6}}, detail::mirrored(30, 42, 10, 6, 0.5), {{0, -65, 12, 12, 0.5}},
                      detail::mirrored(32, 28, 10, 10, -0.4)})};
  return f;
}

// Smooth basis of between-subject shape variation.
inline const std::vector<Bump>& subject_basis() {
  static const std::vector<Bump> basis = [] {
    std::vector<Bump> b;
    b.push_back({0, 0, 10, 14, 1.0});
    for (int k = 0; k < 8; ++k) {
      const double a = 2.0 * M_PI * k / 8.0;
      b.push_back({32 * std::cos(a), 32 * std::sin(a), 14, 14, 1.0});
    }
    for (int k = 0; k < 6; ++k) {
      const double a = 2.0 * M_PI * (k + 0.5) / 6.0;
      b.push_back({60 * std::cos(a), 60 * std::sin(a), 18, 18, 1.0});
    }
    return b;
  }();
  return basis;
}

struct BaseShape {
  double cap_depth_mm = 30.0;
  double cap_half_width_mm = 110.0;
  double cap_half_height_mm = 130.0;
  double nose_height_mm = 18.0;
  double nose_sigma_x_mm = 9.0;
  double nose_sigma_y_mm = 14.0;
  double bridge_height_mm = 0.0;  // ridge from the nose up to the brows
  double eye_depth_mm = 6.0;
  double eye_sigma_mm = 10.0;

  // Ellipsoidal cap, nose ridge, eye sockets, cheeks, lips and chin.
  double operator()(double x, double y) const {
    const double u = 1.0 - x * x / (cap_half_width_mm * cap_half_width_mm) -
                     y * y / (cap_half_height_mm * cap_half_height_mm);
    double h = cap_depth_mm * (std::sqrt(std::max(u, 0.0)) - 1.0);
    h += Bump{0, 0, nose_sigma_x_mm, nose_sigma_y_mm, nose_height_mm}(x, y);
    h += Bump{0, 24, 5, 14, bridge_height_mm}(x, y);
    for (const auto& b : detail::concat({detail::mirrored(32, 28, eye_sigma_mm, 0.9 * eye_sigma_mm, -eye_depth_mm),
                                         detail::mirrored(40, -15, 14, 14, 3.0),
                                         {{0, -40, 9, 4, 3.0}, {0, -68, 12, 9, 4.0}}})) {
      h += b(x, y);
    }
    return h;
  }
};

struct ExpressionEffect {
  int field_id = 0;
  double male_amplitude_mm = 0.0;
  double female_amplitude_mm = 0.0;
  // Extra fields mixed into female deformations with random weights.
  std::vector<int> female_mix_fields;
};

struct SynthConfig {
  int n_subjects = 120;
  double female_fraction = 0.44;
  BaseShape base_shape;
  double gender_morph_gap_mm = 1.0;
  std::map<Expression, ExpressionEffect> expression_effects;
  double intensity_sd = 0.3;  // per-subject expression intensity spread around 1
  double subject_noise_mm = 1.5;
  double sensor_noise_mm = 0.2;
  double pose_jitter_deg = 2.0;
  double pose_jitter_mm = 2.0;
  double grid_pitch_mm = 2.0;
  double grid_half_extent_mm = 84.0;
  double template_pitch_mm = 1.0;
  int age_min = 18;
  int age_max = 40;
  double asian_fraction = 0.3;
  std::uint64_t seed = 1;

  void validate() const {
    if (n_subjects < 4) throw InvariantError("synthetic corpus needs at least 4 subjects");
    if (!(female_fraction > 0.0 && female_fraction < 1.0)) throw InvariantError("female_fraction must lie in (0,1)");
    const double nf = std::round(n_subjects * female_fraction);
    if (nf < 2 || n_subjects - nf < 2) throw InvariantError("each gender needs at least 2 subjects");
    if (gender_morph_gap_mm < 0 || intensity_sd < 0 || subject_noise_mm < 0 || sensor_noise_mm < 0 ||
        pose_jitter_deg < 0 || pose_jitter_mm < 0) {
      throw InvariantError("gaps, spreads and noise levels must be non-negative");
    }
    if (!(grid_pitch_mm > 0) || !(template_pitch_mm > 0) || !(grid_half_extent_mm > grid_pitch_mm)) {
      throw InvariantError("bad sampling grid");
    }
    if (age_min < 0 || age_max < age_min) throw InvariantError("bad age range");
    if (!(asian_fraction >= 0 && asian_fraction <= 1)) throw InvariantError("asian_fraction must lie in [0,1]");
    const auto nfields = static_cast<int>(deformation_fields().size());
    for (const auto& [e, eff] : expression_effects) {
      if (e == Expression::Neutral) throw InvariantError("neutral scans carry no expression effect");
      if (eff.male_amplitude_mm < 0 || eff.female_amplitude_mm < 0) throw InvariantError("amplitudes must be >= 0");
      if (eff.field_id < 0 || eff.field_id >= nfields) throw InvariantError("unknown deformation field id");
      for (int f : eff.female_mix_fields) {
        if (f < 0 || f >= nfields) throw InvariantError("unknown deformation field id");
      }
    }
  }

  int n_female() const { return static_cast<int>(std::round(n_subjects * female_fraction)); }
};

// Strong gendered Happy and Disgust deformations (males larger, female
// Happy spread over three fields), weak and gender-neutral Surprise and Sad.
inline SynthConfig default_profile() {
  SynthConfig c;
  c.expression_effects[Expression::Happy] = {0, 6.0, 3.0, {1, 2}};
  c.expression_effects[Expression::Disgust] = {6, 4.0, 2.5, {}};
  c.expression_effects[Expression::Surprise] = {7, 2.0, 2.0, {}};
  c.expression_effects[Expression::Sad] = {8, 1.5, 1.5, {}};
  return c;
}

// No gender signal anywhere: zero morphology gap, equal amplitudes, no mixing.
inline SynthConfig null_profile() {
  SynthConfig c = default_profile();
  c.gender_morph_gap_mm = 0.0;
  for (auto& [e, eff] : c.expression_effects) {
    eff.female_amplitude_mm = eff.male_amplitude_mm;
    eff.female_mix_fields.clear();
  }
  return c;
}

// Each expression carries its gender signal along its own field.
inline SynthConfig expression_specific_profile() {
  SynthConfig c;
  c.gender_morph_gap_mm = 1.0;
  c.expression_effects[Expression::Happy] = {0, 5.0, 2.0, {}};
  c.expression_effects[Expression::Disgust] = {4, 5.0, 2.0, {}};
  c.expression_effects[Expression::Surprise] = {3, 5.0, 2.0, {}};
  c.expression_effects[Expression::Sad] = {5, 5.0, 2.0, {}};
  return c;
}

// ---------------------------------------------------------------------------
// Corpus plan: every random quantity, drawn up front.

struct ScanTruth {
  std::string scan_id;
  Expression expression = Expression::Neutral;
  std::vector<double> field_coefficients;  // one per deformation field, mm
  RigidTransform pose;                     // canonical frame -> scan frame
  Vec3 nosetip = Vec3::Zero();             // scan frame
  std::uint64_t noise_seed = 0;
};

struct SubjectTruth {
  std::string subject_id;
  Gender gender = Gender::Female;
  Ethnicity ethnicity = Ethnicity::NonAsian;
  int age = 0;
  std::vector<double> basis_coefficients;
  std::vector<ScanTruth> scans;  // Neutral first, then configured expressions in enum order
};

struct CorpusTruth {
  SynthConfig config;
  std::vector<SubjectTruth> subjects;
};

inline double morph_sign(Gender g) { return g == Gender::Male ? 0.5 : -0.5; }

// Subject's neutral height field in the canonical frame.
inline double neutral_height(const SynthConfig& c, const SubjectTruth& s, double x, double y) {
  double h = c.base_shape(x, y) + morph_sign(s.gender) * c.gender_morph_gap_mm * gender_morph_field()(x, y);
  const auto& basis = subject_basis();
  for (std::size_t k = 0; k < basis.size(); ++k) h += s.basis_coefficients[k] * basis[k](x, y);
  return h;
}

// Planted expression deformation of a scan in the canonical frame.
inline double planted_deformation(const ScanTruth& scan, double x, double y) {
  const auto& fields = deformation_fields();
  double d = 0.0;
  for (std::size_t f = 0; f < fields.size(); ++f) {
    if (scan.field_coefficients[f] != 0.0) d += scan.field_coefficients[f] * fields[f](x, y);
  }
  return d;
}

namespace detail {

inline RigidTransform random_pose(std::mt19937_64& rng, double max_deg, double max_mm) {
  std::normal_distribution<double> n01(0.0, 1.0);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  Vec3 axis(n01(rng), n01(rng), n01(rng));
  if (axis.norm() == 0.0) axis = Vec3::UnitZ();
  axis.normalize();
  const double angle = max_deg * u01(rng) * M_PI / 180.0;
  Vec3 t(n01(rng), n01(rng), n01(rng));
  if (t.norm() > 0) t = t.normalized() * max_mm * u01(rng);
  RigidTransform p;
  p.rotation = Eigen::AngleAxisd(angle, axis).toRotationMatrix();
  p.translation = t;
  return p;
}

}  // namespace detail

inline CorpusTruth plan_corpus(const SynthConfig& config) {
  config.validate();
  CorpusTruth truth;
  truth.config = config;
  const auto n = static_cast<std::size_t>(config.n_subjects);
  std::vector<Gender> genders(n, Gender::Male);
  for (int i = 0; i < config.n_female(); ++i) genders[static_cast<std::size_t>(i)] = Gender::Female;
  std::mt19937_64 grng(derive_seed(config.seed, "genders"));
  std::shuffle(genders.begin(), genders.end(), grng);

  const auto nfields = deformation_fields().size();
  for (std::size_t i = 0; i < n; ++i) {
    std::mt19937_64 rng(derive_seed(config.seed, static_cast<std::uint64_t>(i)));
    std::normal_distribution<double> n01(0.0, 1.0);
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    char id[16];
    std::snprintf(id, sizeof(id), "S%03d", static_cast<int>(i));
    SubjectTruth s;
    s.subject_id = id;
    s.gender = genders[i];
    s.ethnicity = u01(rng) < config.asian_fraction ? Ethnicity::Asian : Ethnicity::NonAsian;
    s.age = std::uniform_int_distribution<int>(config.age_min, config.age_max)(rng);
    for (std::size_t k = 0; k < subject_basis().size(); ++k) {
      s.basis_coefficients.push_back(config.subject_noise_mm * n01(rng));
    }
    auto add_scan = [&](Expression e) {
      ScanTruth scan;
      scan.expression = e;
      scan.scan_id = s.subject_id + "_" + std::string(short_label(e));
      scan.field_coefficients.assign(nfields, 0.0);
      if (e != Expression::Neutral) {
        const auto& eff = config.expression_effects.at(e);
        const double intensity = std::max(0.05, 1.0 + config.intensity_sd * n01(rng));
        const double amp = s.gender == Gender::Male ? eff.male_amplitude_mm : eff.female_amplitude_mm;
        if (s.gender == Gender::Female && !eff.female_mix_fields.empty()) {
          // Independent weights on the primary and mixed fields.
          std::vector<int> ids{eff.field_id};
          ids.insert(ids.end(), eff.female_mix_fields.begin(), eff.female_mix_fields.end());
          for (int f : ids) {
            const double w = 0.2 + 1.6 * u01(rng);
            scan.field_coefficients[static_cast<std::size_t>(f)] += amp * intensity * w / std::sqrt(ids.size());
          }
        } else {
          scan.field_coefficients[static_cast<std::size_t>(eff.field_id)] += amp * intensity;
        }
      }
      scan.pose = detail::random_pose(rng, config.pose_jitter_deg, config.pose_jitter_mm);
      scan.noise_seed = rng();
      s.scans.push_back(std::move(scan));
    };
    add_scan(Expression::Neutral);
    for (Expression e : kNonNeutralExpressions) {
      if (config.expression_effects.count(e)) add_scan(e);
    }
    for (auto& scan : s.scans) {
      scan.nosetip = scan.pose.apply(Vec3(0, 0, neutral_height(config, s, 0, 0) + planted_deformation(scan, 0, 0)));
    }
    truth.subjects.push_back(std::move(s));
  }
  return truth;
}

namespace detail {

// Triangulated height field over the centered sampling grid.
template <class Height>
Mesh height_field_mesh(const SynthConfig& c, double pitch, Height&& height) {
  const int side = 2 * static_cast<int>(std::floor(c.grid_half_extent_mm / pitch + 1e-9)) + 1;
  const int half = side / 2;
  Mesh m;
  m.vertices.reserve(static_cast<std::size_t>(side * side));
  for (int r = 0; r < side; ++r) {
    const double y = (half - r) * pitch;
    for (int col = 0; col < side; ++col) {
      const double x = (col - half) * pitch;
      m.vertices.emplace_back(x, y, height(x, y));
    }
  }
  for (int r = 0; r + 1 < side; ++r) {
    for (int col = 0; col + 1 < side; ++col) {
      const int a = r * side + col, b = a + 1, d = a + side, e = d + 1;
      m.faces.push_back({a, d, b});
      m.faces.push_back({b, d, e});
    }
  }
  return m;
}

}  // namespace detail

// Base shape only: no morphology, subject variation, noise or pose. Sampled
// at template_pitch_mm, usually finer than the scans.
inline Mesh canonical_template(const SynthConfig& config) {
  return detail::height_field_mesh(config, config.template_pitch_mm,
                                   [&](double x, double y) { return config.base_shape(x, y); });
}

inline Mesh synthesize_scan(const CorpusTruth& truth, const SubjectTruth& subject, const ScanTruth& scan) {
  const auto& c = truth.config;
  Mesh m = detail::height_field_mesh(c, c.grid_pitch_mm, [&](double x, double y) {
    return neutral_height(c, subject, x, y) + planted_deformation(scan, x, y);
  });
  if (c.sensor_noise_mm > 0.0) {
    std::mt19937_64 rng(scan.noise_seed);
    std::normal_distribution<double> noise(0.0, c.sensor_noise_mm);
    for (auto& v : m.vertices) v.z() += noise(rng);
  }
  for (auto& v : m.vertices) v = scan.pose.apply(v);
  return m;
}

// ---------------------------------------------------------------------------
// JSON

inline nlohmann::json to_json(const SynthConfig& c) {
  nlohmann::json effects = nlohmann::json::object();
  for (const auto& [e, eff] : c.expression_effects) {
    effects[std::string(to_string(e))] = {{"field_id", eff.field_id},
                                          {"field", deformation_fields()[static_cast<std::size_t>(eff.field_id)].name},
                                          {"male_amplitude_mm", eff.male_amplitude_mm},
                                          {"female_amplitude_mm", eff.female_amplitude_mm},
                                          {"female_mix_fields", eff.female_mix_fields}};
  }
  const auto& b = c.base_shape;
  return {{"n_subjects", c.n_subjects},
          {"female_fraction", c.female_fraction},
          {"base_shape",
           {{"cap_depth_mm", b.cap_depth_mm},
            {"cap_half_width_mm", b.cap_half_width_mm},
            {"cap_half_height_mm", b.cap_half_height_mm},
            {"nose_height_mm", b.nose_height_mm},
            {"nose_sigma_x_mm", b.nose_sigma_x_mm},
            {"nose_sigma_y_mm", b.nose_sigma_y_mm},
            {"bridge_height_mm", b.bridge_height_mm},
            {"eye_depth_mm", b.eye_depth_mm},
            {"eye_sigma_mm", b.eye_sigma_mm}}},
          {"gender_morph_gap_mm", c.gender_morph_gap_mm},
          {"expression_effects", effects},
          {"intensity_sd", c.intensity_sd},
          {"subject_noise_mm", c.subject_noise_mm},
          {"sensor_noise_mm", c.sensor_noise_mm},
          {"pose_jitter_deg", c.pose_jitter_deg},
          {"pose_jitter_mm", c.pose_jitter_mm},
          {"grid_pitch_mm", c.grid_pitch_mm},
          {"grid_half_extent_mm", c.grid_half_extent_mm},
          {"template_pitch_mm", c.template_pitch_mm},
          {"age_min", c.age_min},
          {"age_max", c.age_max},
          {"asian_fraction", c.asian_fraction},
          {"seed", c.seed}};
}

// ground_truth.json:
// {"config":{...}, "template":"template.ply",
//  "fields":[{"id","name","bumps":[[cx,cy,sx,sy,amplitude],...]}],
//  "subjects":[{"subject_id","gender","ethnicity","age","basis_coefficients":[...],
//               "scans":[{"scan_id","expression","mesh","field_coefficients":[...],
//                         "nosetip":[x,y,z],"pose":{"rotation":[9 row-major],
//                         "translation":[3]}}]}]}
inline nlohmann::json ground_truth_json(const CorpusTruth& truth) {
  nlohmann::json fields = nlohmann::json::array();
  const auto& lib = deformation_fields();
  for (std::size_t f = 0; f < lib.size(); ++f) {
    nlohmann::json bumps = nlohmann::json::array();
    for (const auto& b : lib[f].bumps) bumps.push_back({b.cx, b.cy, b.sx, b.sy, b.amplitude});
    fields.push_back({{"id", f}, {"name", lib[f].name}, {"bumps", bumps}});
  }
  nlohmann::json subjects = nlohmann::json::array();
  for (const auto& s : truth.subjects) {
    nlohmann::json scans = nlohmann::json::array();
    for (const auto& sc : s.scans) {
      std::vector<double> rot;
      for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 3; ++c) rot.push_back(sc.pose.rotation(r, c));
      scans.push_back({{"scan_id", sc.scan_id},
                       {"expression", to_string(sc.expression)},
                       {"mesh", "meshes/" + sc.scan_id + ".ply"},
                       {"field_coefficients", sc.field_coefficients},
                       {"nosetip", {sc.nosetip.x(), sc.nosetip.y(), sc.nosetip.z()}},
                       {"pose",
                        {{"rotation", rot},
                         {"translation", {sc.pose.translation.x(), sc.pose.translation.y(), sc.pose.translation.z()}}}}});
    }
    subjects.push_back({{"subject_id", s.subject_id},
                        {"gender", to_string(s.gender)},
                        {"ethnicity", to_string(s.ethnicity)},
                        {"age", s.age},
                        {"basis_coefficients", s.basis_coefficients},
                        {"scans", scans}});
  }
  return {{"config", to_json(truth.config)}, {"template", "template.ply"}, {"fields", fields}, {"subjects", subjects}};
}

inline std::vector<ScanRecord> manifest_of(const CorpusTruth& truth, const std::filesystem::path& out_dir) {
  std::vector<ScanRecord> records;
  for (const auto& s : truth.subjects) {
    for (const auto& sc : s.scans) {
      records.push_back({sc.scan_id, s.subject_id, s.gender, sc.expression, s.ethnicity, s.age,
                         out_dir / "meshes" / (sc.scan_id + ".ply"), std::nullopt});
    }
  }
  return records;
}

// Writes meshes/<scan_id>.ply, template.ply, manifest.csv and
// ground_truth.json under `out_dir`; returns the manifest path.
inline std::filesystem::path generate_corpus(const SynthConfig& config, const std::filesystem::path& out_dir,
                                             std::size_t jobs = 1) {
  const CorpusTruth truth = plan_corpus(config);
  std::error_code ec;
  std::filesystem::create_directories(out_dir / "meshes", ec);
  if (ec) throw IoError("cannot create " + (out_dir / "meshes").string() + ": " + ec.message());
  save_mesh(canonical_template(config), out_dir / "template.ply", MeshFormat::PLY_ASCII);
  parallel_for(truth.subjects.size(), jobs, [&](std::size_t i) {
    const auto& s = truth.subjects[i];
    for (const auto& sc : s.scans) {
      save_mesh(synthesize_scan(truth, s, sc), out_dir / "meshes" / (sc.scan_id + ".ply"), MeshFormat::PLY_ASCII);
    }
  });
  const auto manifest = out_dir / "manifest.csv";
  save_manifest(manifest_of(truth, out_dir), manifest);
  detail::write_file(out_dir / "ground_truth.json", ground_truth_json(truth).dump(1) + "\n");
  return manifest;
}

}  // namespace facecue
