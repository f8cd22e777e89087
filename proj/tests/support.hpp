#pragma once

// In-memory synthetic pipeline shared by the unit and acceptance tests.

#include <algorithm>
#include <cmath>
#include <map>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "facecue/eval.hpp"
#include "facecue/features.hpp"
#include "facecue/preprocess.hpp"
#include "facecue/synth.hpp"

namespace facecue::testing {

inline std::size_t hardware_jobs() { return std::max(1u, std::thread::hardware_concurrency()); }

struct SyntheticFeatures {
  CorpusTruth truth;
  std::vector<ScanRecord> records;
  LabeledFeatureSet depth;
  LabeledFeatureSet deltas;
};

// synth -> preprocess -> curves -> differences, without touching disk.
inline SyntheticFeatures synthetic_features(const SynthConfig& config, std::size_t jobs = hardware_jobs(),
                                            const PreprocessConfig& pconfig = {}, const CurveParams& curves = {}) {
  SyntheticFeatures out;
  out.truth = plan_corpus(config);
  out.records = manifest_of(out.truth, "mem");
  std::map<std::string, std::pair<const SubjectTruth*, const ScanTruth*>> by_id;
  for (const auto& s : out.truth.subjects) {
    for (const auto& sc : s.scans) by_id[sc.scan_id] = {&s, &sc};
  }
  const auto tmpl = prepare_template(canonical_template(config), pconfig);
  const auto depth = depth_features(
      out.records,
      [&](const ScanRecord& r) {
        const auto& [s, sc] = by_id.at(r.scan_id);
        return synthesize_scan(out.truth, *s, *sc);
      },
      tmpl, pconfig, curves, jobs);
  out.depth = labeled_set(out.records, depth);
  const auto [drecs, deltas] = delta_features(out.records, depth);
  out.deltas = labeled_set(drecs, deltas);
  return out;
}

inline std::vector<Gender> genders_of(const LabeledFeatureSet& s) {
  std::vector<Gender> g;
  for (const auto& x : s.samples) g.push_back(x.gender);
  return g;
}

inline LabeledFeatureSet with_gender(const LabeledFeatureSet& s, Gender g) {
  std::vector<std::size_t> rows;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s.samples[i].gender == g) rows.push_back(i);
  }
  return s.subset(rows);
}

// Rotation angle (deg) and translation norm (mm) of a transform.
inline std::pair<double, double> pose_error(const RigidTransform& t) { return {t.angle_deg(), t.translation.norm()}; }

}  // namespace facecue::testing
