#pragma once

// Command layer behind the facecue executable.
//
// Config grammar: one `key = value` per line; `#` starts a comment line;
// blank lines are ignored; keys are dotted lowercase identifiers
// ([a-z0-9_]+ separated by '.'); values run to end of line and are trimmed.
// Unknown and duplicate keys are config errors.
//
// Every command writes run.json holding the command, seed, toolkit version
// and the full effective config (defaults included). The output directory
// and worker count are not recorded; neither affects results.

#include <nlohmann/json.hpp>

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iostream>
#include <map>
#include <optional>
#include <regex>
#include <set>
#include <string>
#include <vector>

#include "facecue/curves.hpp"
#include "facecue/error.hpp"
#include "facecue/eval.hpp"
#include "facecue/features.hpp"
#include "facecue/learn.hpp"
#include "facecue/log.hpp"
#include "facecue/mesh_io.hpp"
#include "facecue/preprocess.hpp"
#include "facecue/report.hpp"
#include "facecue/stats.hpp"
#include "facecue/synth.hpp"
#include "facecue/util.hpp"

#ifndef FACECUE_VERSION
#define FACECUE_VERSION "0.0.0"
#endif

namespace facecue::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitData = 3;
inline constexpr int kExitInternal = 4;

// ---------------------------------------------------------------------------
// Config

using ConfigMap = std::map<std::string, std::string>;

// Every recognized key with its default. Empty synth.* values keep the
// selected profile's setting.
inline const ConfigMap& default_config() {
  static const ConfigMap d = [] {
    const PreprocessConfig p;
    const CurveParams c;
    const ClassifierParams k;
    ConfigMap m{
        {"seed", "1"},
        {"data.manifest", ""},
        {"data.template", ""},
        {"data.features_dir", ""},
        {"data.max_age", std::to_string(kManifestAgeLimit)},
        {"synth.profile", "default"},
        {"synth.n_subjects", ""},
        {"synth.female_fraction", ""},
        {"synth.gender_morph_gap_mm", ""},
        {"synth.intensity_sd", ""},
        {"synth.subject_noise_mm", ""},
        {"synth.sensor_noise_mm", ""},
        {"synth.pose_jitter_deg", ""},
        {"synth.pose_jitter_mm", ""},
        {"synth.grid_pitch_mm", ""},
        {"synth.grid_half_extent_mm", ""},
        {"synth.template_pitch_mm", ""},
        {"synth.age_min", ""},
        {"synth.age_max", ""},
        {"synth.asian_fraction", ""},
        {"preprocess.crop_radius_mm", format_double(p.crop_radius_mm)},
        {"preprocess.smooth_iterations", std::to_string(p.smooth_iterations)},
        {"preprocess.smooth_lambda", format_double(p.smooth_lambda)},
        {"preprocess.icp_max_iters", std::to_string(p.icp_max_iters)},
        {"preprocess.icp_tol_mm", format_double(p.icp_tol_mm)},
        {"preprocess.icp_init_centroid", p.icp_init_centroid ? "true" : "false"},
        {"preprocess.icp_trim_fraction", format_double(p.icp_trim_fraction)},
        {"preprocess.icp_max_points", std::to_string(p.icp_max_points)},
        {"curves.n_curves", std::to_string(c.n_curves)},
        {"curves.n_points", std::to_string(c.n_points)},
        {"curves.r_max_mm", format_double(c.r_max_mm)},
        {"classifier.kind", std::string(to_string(k.kind))},
        {"svm.c", format_double(k.svm.C)},
        {"svm.tol", format_double(k.svm.tol)},
        {"forest.n_trees", std::to_string(k.forest.n_trees)},
        {"forest.max_features", std::to_string(k.forest.max_features)},
        {"forest.min_leaf", std::to_string(k.forest.min_leaf)},
        {"eval.bins", std::to_string(kDefaultHistogramBins)},
        {"analyze.upscale", "4"},
        {"render.input", ""},
        {"render.ids", ""},
        {"render.palette", "heat"},
        {"render.scale", "auto"},
        {"render.upscale", "4"},
    };
    return m;
  }();
  return d;
}

inline ConfigMap parse_config(std::string_view text, const std::string& ctx = "config") {
  static const std::regex key_re("[a-z0-9_]+(\\.[a-z0-9_]+)*");
  ConfigMap out;
  const auto lines = detail::lines_of(text);
  for (std::size_t i = 0; i < lines.size(); ++i) {
    const auto line = trim(lines[i]);
    if (line.empty() || line.front() == '#') continue;
    const std::string where = ctx + ": line " + std::to_string(i + 1);
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) throw ConfigError(where + ": expected key = value");
    const std::string key(trim(line.substr(0, eq)));
    if (!std::regex_match(key, key_re)) throw ConfigError(where + ": bad key '" + key + "'");
    if (!default_config().contains(key)) throw ConfigError(where + ": unknown key '" + key + "'");
    if (!out.emplace(key, std::string(trim(line.substr(eq + 1)))).second) {
      throw ConfigError(where + ": duplicate key '" + key + "'");
    }
  }
  return out;
}

// Effective config: defaults overlaid with the file's entries.
class Config {
 public:
  Config() : values_(default_config()) {}
  explicit Config(const ConfigMap& overrides) : Config() {
    for (const auto& [k, v] : overrides) set(k, v);
  }

  static Config load(const std::filesystem::path& path) {
    std::string text;
    try {
      text = detail::read_file(path);
    } catch (const IoError& e) {
      throw ConfigError(e.what());
    }
    return Config(parse_config(text, path.string()));
  }

  void set(const std::string& key, const std::string& value) {
    if (!default_config().contains(key)) throw ConfigError("unknown key '" + key + "'");
    values_[key] = value;
  }

  const std::string& str(const std::string& key) const { return values_.at(key); }

  double real(const std::string& key) const {
    try {
      return parse_double(str(key), key);
    } catch (const ParseError& e) {
      throw ConfigError(e.what());
    }
  }

  long long integer(const std::string& key) const {
    try {
      return parse_int(str(key), key);
    } catch (const ParseError& e) {
      throw ConfigError(e.what());
    }
  }

  bool boolean(const std::string& key) const {
    const auto& v = str(key);
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw ConfigError(key + ": expected true or false, got '" + v + "'");
  }

  std::uint64_t seed() const {
    const auto s = integer("seed");
    if (s < 0) throw ConfigError("seed must be non-negative");
    return static_cast<std::uint64_t>(s);
  }

  std::filesystem::path path(const std::string& key) const {
    if (str(key).empty()) throw ConfigError(key + " is required for this command");
    return str(key);
  }

  nlohmann::json to_json() const {
    nlohmann::json j = nlohmann::json::object();
    for (const auto& [k, v] : values_) j[k] = v;
    return j;
  }

  SynthConfig synth() const {
    const auto& profile = str("synth.profile");
    SynthConfig c;
    if (profile == "default") {
      c = default_profile();
    } else if (profile == "null") {
      c = null_profile();
    } else if (profile == "expression_specific") {
      c = expression_specific_profile();
    } else {
      throw ConfigError("synth.profile must be default, null or expression_specific");
    }
    auto set_real = [&](const char* key, double& field) {
      if (!str(key).empty()) field = real(key);
    };
    auto set_int = [&](const char* key, int& field) {
      if (!str(key).empty()) field = static_cast<int>(integer(key));
    };
    set_int("synth.n_subjects", c.n_subjects);
    set_real("synth.female_fraction", c.female_fraction);
    set_real("synth.gender_morph_gap_mm", c.gender_morph_gap_mm);
    set_real("synth.intensity_sd", c.intensity_sd);
    set_real("synth.subject_noise_mm", c.subject_noise_mm);
    set_real("synth.sensor_noise_mm", c.sensor_noise_mm);
    set_real("synth.pose_jitter_deg", c.pose_jitter_deg);
    set_real("synth.pose_jitter_mm", c.pose_jitter_mm);
    set_real("synth.grid_pitch_mm", c.grid_pitch_mm);
    set_real("synth.grid_half_extent_mm", c.grid_half_extent_mm);
    set_real("synth.template_pitch_mm", c.template_pitch_mm);
    set_int("synth.age_min", c.age_min);
    set_int("synth.age_max", c.age_max);
    set_real("synth.asian_fraction", c.asian_fraction);
    c.seed = seed();
    try {
      c.validate();
    } catch (const InvariantError& e) {
      throw ConfigError(e.what());
    }
    return c;
  }

  PreprocessConfig preprocess() const {
    PreprocessConfig p;
    p.crop_radius_mm = real("preprocess.crop_radius_mm");
    p.smooth_iterations = static_cast<int>(integer("preprocess.smooth_iterations"));
    p.smooth_lambda = real("preprocess.smooth_lambda");
    p.icp_max_iters = static_cast<int>(integer("preprocess.icp_max_iters"));
    p.icp_tol_mm = real("preprocess.icp_tol_mm");
    p.icp_init_centroid = boolean("preprocess.icp_init_centroid");
    p.icp_trim_fraction = real("preprocess.icp_trim_fraction");
    p.icp_max_points = static_cast<int>(integer("preprocess.icp_max_points"));
    try {
      p.validate();
    } catch (const InvariantError& e) {
      throw ConfigError(e.what());
    }
    return p;
  }

  CurveParams curves() const {
    CurveParams c;
    c.n_curves = static_cast<int>(integer("curves.n_curves"));
    c.n_points = static_cast<int>(integer("curves.n_points"));
    c.r_max_mm = real("curves.r_max_mm");
    try {
      c.validate();
    } catch (const InvariantError& e) {
      throw ConfigError(e.what());
    }
    return c;
  }

  ClassifierParams classifier() const {
    ClassifierParams k;
    k.kind = parse_classifier(str("classifier.kind"));
    k.svm.C = real("svm.c");
    k.svm.tol = real("svm.tol");
    k.forest.n_trees = static_cast<int>(integer("forest.n_trees"));
    k.forest.max_features = static_cast<int>(integer("forest.max_features"));
    k.forest.min_leaf = static_cast<int>(integer("forest.min_leaf"));
    if (!(k.svm.C > 0) || !(k.svm.tol > 0)) throw ConfigError("svm.c and svm.tol must be positive");
    if (k.forest.n_trees < 1 || k.forest.min_leaf < 1 || k.forest.max_features < 0) {
      throw ConfigError("bad forest parameters");
    }
    return k;
  }

 private:
  ConfigMap values_;
};

// ---------------------------------------------------------------------------
// Commands

struct Invocation {
  std::string command;     // synth | features | eval | analyze | render
  std::string experiment;  // eval / analyze variant
  Config config;
  std::filesystem::path out_dir;
  std::size_t jobs = 1;
};

namespace detail {

inline void ensure_dir(const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec || !std::filesystem::is_directory(dir)) {
    throw IoError("cannot create output directory " + dir.string() + (ec ? ": " + ec.message() : ""));
  }
}

inline void write_json(const std::filesystem::path& path, const nlohmann::json& j) {
  facecue::detail::write_file(path, j.dump(1) + "\n");
}

inline void write_run_json(const Invocation& inv) {
  const std::string cmd = inv.experiment.empty() ? inv.command : inv.command + " " + inv.experiment;
  write_json(inv.out_dir / "run.json", {{"toolkit", "facecue"},
                                        {"version", FACECUE_VERSION},
                                        {"command", cmd},
                                        {"seed", inv.config.seed()},
                                        {"config", inv.config.to_json()}});
}

inline std::filesystem::path features_dir(const Config& c) { return c.path("data.features_dir"); }

inline std::vector<ScanRecord> feature_manifest(const Config& c) {
  return load_manifest(features_dir(c) / "manifest.csv");
}

// Rows of `file` in features_dir joined with the manifest by scan id.
inline LabeledFeatureSet load_labeled(const Config& c, const std::string& file) {
  const auto records = feature_manifest(c);
  std::map<std::string, const ScanRecord*> by_id;
  for (const auto& r : records) by_id[r.scan_id] = &r;
  const auto rows = load_feature_csv(features_dir(c) / file);
  std::vector<ScanRecord> recs;
  std::vector<FeatureVector> feats;
  for (const auto& row : rows) {
    auto it = by_id.find(row.id);
    if (it == by_id.end()) throw InvariantError(file + ": scan " + row.id + " is not in the manifest");
    recs.push_back(*it->second);
    feats.push_back({row.values, FeatureKind::Depth4000});
  }
  if (recs.empty()) throw EmptyGroup(file + " has no rows");
  return labeled_set(recs, feats);
}

inline std::vector<FeatureRow> rows_of(const std::vector<ScanRecord>& records, const std::vector<FeatureVector>& f) {
  std::vector<FeatureRow> rows;
  for (std::size_t i = 0; i < records.size(); ++i) rows.push_back({records[i].scan_id, f[i].values});
  return rows;
}

inline Template load_template(const Config& c, const std::vector<ScanRecord>& records,
                              const std::filesystem::path& manifest, const PreprocessConfig& p) {
  std::filesystem::path path;
  if (!c.str("data.template").empty()) {
    path = c.str("data.template");
  } else if (std::filesystem::exists(manifest.parent_path() / "template.ply")) {
    path = manifest.parent_path() / "template.ply";
  } else {
    for (const auto& r : records) {
      if (r.expression == Expression::Neutral) {
        path = r.mesh_path;
        break;
      }
    }
    if (path.empty()) throw EmptyGroup("no template given and no neutral scan to use as one");
    warn("using neutral scan " + path.string() + " as the registration template");
  }
  return prepare_template(load_mesh(path), p);
}

inline void cmd_synth(const Invocation& inv) {
  generate_corpus(inv.config.synth(), inv.out_dir, inv.jobs);
}

// depth.csv and delta.csv always; landmark features when every scan has
// landmarks. manifest.csv lists the scans kept after filtering.
inline void cmd_features(const Invocation& inv) {
  const auto& c = inv.config;
  const auto manifest_path = c.path("data.manifest");
  const auto pconf = c.preprocess();
  const auto curves = c.curves();
  const auto all = load_manifest(manifest_path);
  const auto records = filter_manifest(all, static_cast<int>(c.integer("data.max_age")));
  {
    std::set<std::string> kept, dropped;
    for (const auto& r : records) kept.insert(r.subject_id);
    for (const auto& r : all) {
      if (!kept.contains(r.subject_id)) dropped.insert(r.subject_id);
    }
    for (const auto& s : dropped) warn("subject " + s + " excluded by the dataset filter");
  }
  if (records.empty()) throw EmptyGroup("no scans left after filtering");
  const auto tmpl = load_template(c, records, manifest_path, pconf);
  const auto depth = depth_features(records, [](const ScanRecord& r) { return load_mesh(r.mesh_path); }, tmpl, pconf,
                                    curves, inv.jobs);
  {
    // absolute paths, so the copy stays valid from the output directory
    auto copy = records;
    for (auto& r : copy) {
      r.mesh_path = std::filesystem::absolute(r.mesh_path).lexically_normal();
      if (r.landmarks_path) r.landmarks_path = std::filesystem::absolute(*r.landmarks_path).lexically_normal();
    }
    save_manifest(copy, inv.out_dir / "manifest.csv");
  }
  save_feature_csv(rows_of(records, depth), inv.out_dir / "depth.csv");
  const auto [drecs, deltas] = delta_features(records, depth);
  save_feature_csv(rows_of(drecs, deltas), inv.out_dir / "delta.csv");

  const bool all_lm = std::all_of(records.begin(), records.end(), [](const auto& r) { return r.landmarks_path; });
  const bool any_lm = std::any_of(records.begin(), records.end(), [](const auto& r) { return r.landmarks_path; });
  if (any_lm && !all_lm) warn("some scans lack landmarks; landmark features skipped");
  if (all_lm) {
    std::vector<FeatureVector> coord(records.size()), dist(records.size());
    for (std::size_t i = 0; i < records.size(); ++i) {
      const auto lm = load_landmarks(*records[i].landmarks_path);
      coord[i] = landmark_coord_features(lm);
      dist[i] = landmark_distance_features(lm);
    }
    save_feature_csv(rows_of(records, coord), inv.out_dir / "coord.csv");
    save_feature_csv(rows_of(records, dist), inv.out_dir / "dist.csv");
    const auto dc = delta_features(records, coord);
    const auto dd = delta_features(records, dist);
    save_feature_csv(rows_of(dc.first, dc.second), inv.out_dir / "delta_coord.csv");
    save_feature_csv(rows_of(dd.first, dd.second), inv.out_dir / "delta_dist.csv");
  }
}

inline const std::vector<std::pair<std::string, std::string>>& general_inputs() {
  static const std::vector<std::pair<std::string, std::string>> v = {
      {"3D", "depth.csv"}, {"2D_coord", "coord.csv"}, {"2D_dist", "dist.csv"}};
  return v;
}

inline void cmd_eval(const Invocation& inv) {
  const auto& c = inv.config;
  const auto params = c.classifier();
  const auto seed = c.seed();
  if (inv.experiment == "general") {
    TableSet tables;
    nlohmann::json reports = nlohmann::json::object();
    for (const auto& [label, file] : general_inputs()) {
      if (file != "depth.csv" && !std::filesystem::exists(features_dir(c) / file)) continue;
      const auto report = loo_subject_cv(load_labeled(c, file), params, seed, inv.jobs);
      tables.rates.push_back({label, report.rates});
      reports[label] = to_json(report);
    }
    write_json(inv.out_dir / "general.json", reports);
    write_tables(tables, inv.out_dir);
  } else if (inv.experiment == "matrix") {
    const auto m = expression_specific_matrix(load_labeled(c, "depth.csv"), params, seed, inv.jobs);
    write_json(inv.out_dir / "matrix.json", to_json(m));
    write_tables({{}, m, {}}, inv.out_dir);
  } else if (inv.experiment == "expression_based") {
    const auto reports = expression_based_eval(load_labeled(c, "delta.csv"), params, seed, inv.jobs);
    TableSet tables;
    nlohmann::json j = nlohmann::json::object();
    for (const auto& [e, r] : reports) {
      tables.rates.push_back({std::string(to_string(e)), r.rates});
      j[std::string(to_string(e))] = to_json(r);
    }
    write_json(inv.out_dir / "expression_based.json", j);
    write_tables(tables, inv.out_dir);
  } else if (inv.experiment == "histograms") {
    const auto report = loo_subject_cv(load_labeled(c, "depth.csv"), params, seed, inv.jobs);
    const auto hist = decision_histograms(report, feature_manifest(c), static_cast<int>(c.integer("eval.bins")));
    nlohmann::json j = nlohmann::json::object();
    for (const auto& [e, h] : hist) {
      facecue::detail::write_file(inv.out_dir / ("histogram_" + std::string(to_string(e)) + ".csv"),
                                  format_histogram_csv(h));
      j[std::string(to_string(e))] = {{"mean_neutral", h.mean_neutral}, {"mean_expressive", h.mean_expressive}};
    }
    write_json(inv.out_dir / "histograms.json", j);
  } else {
    throw ConfigError("unknown eval experiment '" + inv.experiment + "'");
  }
}

inline std::vector<Gender> genders_of(const LabeledFeatureSet& s) {
  std::vector<Gender> g;
  for (const auto& x : s.samples) g.push_back(x.gender);
  return g;
}

inline void cmd_analyze(const Invocation& inv) {
  const auto& c = inv.config;
  if (inv.experiment == "ttest") {
    const auto curves = c.curves();
    const auto deltas = load_labeled(c, "delta.csv");
    const int upscale = static_cast<int>(c.integer("analyze.upscale"));
    nlohmann::json summary = nlohmann::json::object();
    for (Expression e : kNonNeutralExpressions) {
      const auto sub = deltas.with_expression(e);
      if (sub.size() == 0) continue;
      const auto g = genders_of(sub);
      const auto map = saliency_map(sub.X, g, curves);
      const std::string name(to_string(e));
      facecue::detail::write_file(inv.out_dir / ("saliency_" + name + ".csv"), format_saliency_csv(map));
      nlohmann::json dens = nlohmann::json::object();
      for (double a : kSaliencyAlphas) {
        save_ppm(render_significance(map, a, upscale), inv.out_dir / ("saliency_" + name + "_" + format_double(a) + ".ppm"));
        dens[format_double(a)] = {{"count", map.mask_count(a)}, {"density", map.mask_density(a)}};
      }
      summary[name] = dens;
    }
    write_json(inv.out_dir / "saliency.json", summary);
  } else if (inv.experiment == "pca") {
    const auto deltas = load_labeled(c, "delta.csv");
    TableSet tables;
    for (Expression e : kNonNeutralExpressions) {
      const auto sub = deltas.with_expression(e);
      for (Gender g : kGenders) {
        std::vector<std::size_t> rows;
        for (std::size_t i = 0; i < sub.size(); ++i) {
          if (sub.samples[i].gender == g) rows.push_back(i);
        }
        if (rows.size() < 2) continue;
        tables.spectra.push_back(pca_explained_variance(sub.subset(rows).X, g, e));
      }
    }
    write_tables(tables, inv.out_dir);
  } else if (inv.experiment == "balance") {
    const auto manifest = c.str("data.manifest").empty() ? feature_manifest(c) : load_manifest(c.path("data.manifest"));
    const auto b = demographic_balance(manifest);
    auto tt = [](const TTestResult& r) { return nlohmann::json{{"t", r.t}, {"p", r.p}, {"df", r.df}}; };
    write_json(inv.out_dir / "balance.json",
               {{"n_female", b.n_female}, {"n_male", b.n_male}, {"age", tt(b.age)}, {"ethnicity", tt(b.ethnicity)}});
  } else {
    throw ConfigError("unknown analysis '" + inv.experiment + "'");
  }
}

inline ColorScale parse_scale(const std::string& s) {
  if (s == "auto") return ColorScale::automatic();
  const auto parts = split(s, ',');
  if (parts.size() != 2) throw ConfigError("render.scale must be 'auto' or 'min,max'");
  try {
    return ColorScale::fixed_range(parse_double(parts[0], "render.scale"), parse_double(parts[1], "render.scale"));
  } catch (const Error& e) {
    throw ConfigError(e.what());
  }
}

// One <id>.ppm per requested row of a feature CSV (all rows when render.ids
// is empty).
inline void cmd_render(const Invocation& inv) {
  const auto& c = inv.config;
  const auto curves = c.curves();
  const auto& pal = c.str("render.palette");
  if (pal != "heat" && pal != "grayscale") throw ConfigError("render.palette must be heat or grayscale");
  const Palette palette = pal == "heat" ? Palette::Heat : Palette::Grayscale;
  const auto scale = parse_scale(c.str("render.scale"));
  const int upscale = static_cast<int>(c.integer("render.upscale"));
  if (upscale < 1) throw ConfigError("render.upscale must be at least 1");
  const auto rows = load_feature_csv(c.path("render.input"));
  std::set<std::string> wanted;
  for (auto id : split(c.str("render.ids"), ',')) {
    if (!trim(id).empty()) wanted.insert(std::string(trim(id)));
  }
  std::size_t written = 0;
  for (const auto& r : rows) {
    if (!wanted.empty() && !wanted.contains(r.id)) continue;
    if (r.values.size() != curves.size()) throw DimensionMismatch("row " + r.id + " does not match the curve grid");
    save_ppm(render_grid(r.values, curves.n_curves, curves.n_points, palette, scale, upscale),
             inv.out_dir / (r.id + ".ppm"));
    ++written;
  }
  if (written != (wanted.empty() ? rows.size() : wanted.size())) throw EmptyGroup("some requested ids are not in the input");
}

}  // namespace detail

// Runs one command; returns the exit code and reports errors on `err`.
inline int run(const Invocation& inv, std::ostream& err = std::cerr) {
  try {
    detail::ensure_dir(inv.out_dir);
    if (inv.command == "synth") {
      detail::cmd_synth(inv);
    } else if (inv.command == "features") {
      detail::cmd_features(inv);
    } else if (inv.command == "eval") {
      detail::cmd_eval(inv);
    } else if (inv.command == "analyze") {
      detail::cmd_analyze(inv);
    } else if (inv.command == "render") {
      detail::cmd_render(inv);
    } else {
      throw ConfigError("unknown command '" + inv.command + "'");
    }
    detail::write_run_json(inv);
    return kExitOk;
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return e.kind() == "ConfigError" ? kExitConfig : kExitData;
  } catch (const std::exception& e) {
    err << "internal error: " << e.what() << "\n";
    return kExitInternal;
  }
}

}  // namespace facecue::cli
