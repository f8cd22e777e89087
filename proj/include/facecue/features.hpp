#pragma once

// Expression-difference features and 2D landmark baseline features.

#include <cmath>
#include <map>
#include <unordered_map>
#include <string>
#include <utility>
#include <vector>

#include "facecue/curves.hpp"
#include "facecue/error.hpp"
#include "facecue/eval.hpp"
#include "facecue/log.hpp"
#include "facecue/mesh_io.hpp"
#include "facecue/preprocess.hpp"
#include "facecue/util.hpp"

namespace facecue {

struct SubjectPair {
  ScanRecord neutral_scan;
  FeatureVector neutral;
  ScanRecord expressive_scan;
  FeatureVector expressive;
};

// expressive - neutral, element-wise.
inline FeatureVector expression_delta(const SubjectPair& pair) {
  if (pair.neutral_scan.subject_id != pair.expressive_scan.subject_id) {
    throw SubjectMismatch("pair mixes subjects " + pair.neutral_scan.subject_id + " and " +
                          pair.expressive_scan.subject_id);
  }
  if (pair.neutral_scan.expression != Expression::Neutral) {
    throw SubjectMismatch("reference scan " + pair.neutral_scan.scan_id + " is not neutral");
  }
  if (pair.expressive_scan.expression == Expression::Neutral) {
    throw SubjectMismatch("expressive scan " + pair.expressive_scan.scan_id + " is neutral");
  }
  if (pair.neutral.kind != pair.expressive.kind || pair.neutral.size() != pair.expressive.size()) {
    throw KindMismatch("pair features differ in kind or length");
  }
  FeatureVector out{std::vector<double>(pair.neutral.size()), delta_of(pair.neutral.kind)};
  for (std::size_t i = 0; i < out.values.size(); ++i) {
    out.values[i] = pair.expressive.values[i] - pair.neutral.values[i];
  }
  return out;
}

// Landmarks translated so the nosetip landmark sits at the origin, flattened
// as (x0, y0, ..., x67, y67).
inline FeatureVector landmark_coord_features(const Landmarks68& lm) {
  const Vec2 tip = lm.points[static_cast<std::size_t>(lm.nosetip_index)];
  FeatureVector out{{}, FeatureKind::Coord136};
  out.values.reserve(2 * kLandmarkCount);
  for (const auto& p : lm.points) {
    out.values.push_back(p.x() - tip.x());
    out.values.push_back(p.y() - tip.y());
  }
  return out;
}

// Distances between all landmark pairs (i < j) in lexicographic order.
inline std::vector<double> pairwise_distances(const std::vector<Vec2>& pts) {
  std::vector<double> d;
  d.reserve(pts.size() * (pts.size() - 1) / 2);
  for (std::size_t i = 0; i < pts.size(); ++i) {
    for (std::size_t j = i + 1; j < pts.size(); ++j) d.push_back((pts[i] - pts[j]).norm());
  }
  return d;
}

inline FeatureVector landmark_distance_features(const Landmarks68& lm) {
  return {pairwise_distances(std::vector<Vec2>(lm.points.begin(), lm.points.end())), FeatureKind::Dist2278};
}

// One pair per (subject, non-neutral expression) with that subject's neutral
// scan. Subjects without a neutral scan are skipped with a warning. Pairs are
// ordered like the expressive scans in `records`.
template <class FeatureLookup>
std::vector<SubjectPair> make_subject_pairs(const std::vector<ScanRecord>& records, FeatureLookup&& feature_of) {
  std::map<std::string, const ScanRecord*> neutral;
  for (const auto& r : records) {
    if (r.expression == Expression::Neutral) neutral[r.subject_id] = &r;
  }
  std::vector<SubjectPair> pairs;
  std::map<std::string, bool> warned;
  for (const auto& r : records) {
    if (r.expression == Expression::Neutral) continue;
    auto it = neutral.find(r.subject_id);
    if (it == neutral.end()) {
      if (!warned[r.subject_id]) {
        warn("subject " + r.subject_id + " has no neutral scan; excluded from difference features");
        warned[r.subject_id] = true;
      }
      continue;
    }
    pairs.push_back({*it->second, feature_of(*it->second), r, feature_of(r)});
  }
  return pairs;
}

// ---------------------------------------------------------------------------
// Corpus pipeline

// Preprocesses every scan and samples its depth grid. `load(record)` returns
// the raw mesh. Errors are rethrown with the scan id prepended.
template <class LoadMesh>
std::vector<FeatureVector> depth_features(const std::vector<ScanRecord>& records, LoadMesh&& load,
                                          const Template& tmpl, const PreprocessConfig& pconfig,
                                          const CurveParams& curves, std::size_t jobs = 1) {
  pconfig.validate();
  curves.validate();
  std::vector<FeatureVector> out(records.size());
  parallel_for(records.size(), jobs, [&](std::size_t i) {
    try {
      const auto pre = preprocess_scan(load(records[i]), tmpl, pconfig);
      out[i] = grid_to_vector(extract_radial_curves(pre.mesh, pre.nosetip, curves));
    } catch (const Error& e) {
      throw Error(e.kind(), "scan " + records[i].scan_id + ": " + e.what());
    }
  });
  return out;
}

inline LabeledFeatureSet labeled_set(const std::vector<ScanRecord>& records,
                                     const std::vector<FeatureVector>& features) {
  if (records.size() != features.size()) throw DimensionMismatch("one feature vector per record expected");
  LabeledFeatureSet set;
  if (records.empty()) return set;
  const auto d = features.front().size();
  set.X.resize(static_cast<Eigen::Index>(records.size()), static_cast<Eigen::Index>(d));
  for (std::size_t i = 0; i < records.size(); ++i) {
    if (features[i].size() != d) throw KindMismatch("feature vectors differ in length");
    set.samples.push_back({records[i].scan_id, records[i].subject_id, records[i].gender, records[i].expression});
    for (std::size_t k = 0; k < d; ++k) set.X(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) = features[i].values[k];
  }
  return set;
}

// Difference features keyed by the expressive scan.
inline std::pair<std::vector<ScanRecord>, std::vector<FeatureVector>> delta_features(
    const std::vector<ScanRecord>& records, const std::vector<FeatureVector>& features) {
  if (records.size() != features.size()) throw DimensionMismatch("one feature vector per record expected");
  std::unordered_map<std::string, std::size_t> row;
  for (std::size_t i = 0; i < records.size(); ++i) row[records[i].scan_id] = i;
  const auto pairs = make_subject_pairs(records, [&](const ScanRecord& r) { return features[row.at(r.scan_id)]; });
  std::pair<std::vector<ScanRecord>, std::vector<FeatureVector>> out;
  for (const auto& p : pairs) {
    out.first.push_back(p.expressive_scan);
    out.second.push_back(expression_delta(p));
  }
  return out;
}

}  // namespace facecue
