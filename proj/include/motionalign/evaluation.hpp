#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "motionalign/core.hpp"
#include "motionalign/homography.hpp"
#include "motionalign/ttps.hpp"

namespace motionalign {

// Maps a point of relative frame t of one sequence into the other sequence.
using FrameMapping = std::function<Point2(int, Point2)>;

inline FrameMapping as_frame_mapping(const Homography& h) {
  return [m = h.h](int, Point2 p) { return Homography::project(m, p); };
}

inline FrameMapping as_frame_mapping(const TtpsMapping& m) {
  return [m](int t, Point2 p) { return m.apply(t, p); };
}

struct AlignmentError {
  double mean_error = 0.0;      // scale-normalized
  std::vector<double> per_frame;  // NaN for frames without an error
  double landmark_iou = 0.0;
  int n_landmarks_used = 0;
  int n_frames_used = 0;
};

struct EvalConfig {
  double error_threshold = 0.18;
  double iou_threshold = 0.5;
};

// Landmark error of an alignment. Each co-visible landmark is mapped both
// ways; each direction's distance is divided by the target frame's object
// scale and the two are averaged. Frames average over landmarks, the total
// averages over frames. Frames with fewer than two co-visible landmarks, or
// a zero target scale, only contribute to the IoU.
inline AlignmentError alignment_error(const FrameMapping& fwd, const FrameMapping& rev,
                                      std::span<const LandmarkSet> lm_a, std::span<const LandmarkSet> lm_b) {
  if (lm_a.size() != lm_b.size()) throw Error(ErrorCode::kInvalidArgument, "landmark frame counts differ");
  AlignmentError out;
  out.per_frame.assign(lm_a.size(), std::numeric_limits<double>::quiet_NaN());
  double iou_sum = 0.0, err_sum = 0.0;
  int iou_frames = 0;
  for (size_t t = 0; t < lm_a.size(); ++t) {
    const auto& a = lm_a[t].points;
    const auto& b = lm_b[t].points;
    std::vector<int> common;
    size_t uni = b.size();
    for (const auto& [id, p] : a) {
      if (b.count(id))
        common.push_back(id);
      else
        ++uni;
    }
    if (uni > 0) {
      iou_sum += double(common.size()) / double(uni);
      ++iou_frames;
    }
    if (common.size() < 2) continue;
    const double scale_a = lm_a[t].scale(), scale_b = lm_b[t].scale();
    if (!(scale_a > 0.0) || !(scale_b > 0.0)) continue;
    const int ti = static_cast<int>(t);
    double e = 0.0;
    for (int id : common) {
      const Point2 pa = a.at(id), pb = b.at(id);
      const double d_fwd = distance(fwd(ti, pa), pb) / scale_b;
      const double d_rev = distance(rev(ti, pb), pa) / scale_a;
      const double d = 0.5 * (d_fwd + d_rev);
      e += std::isnan(d) ? std::numeric_limits<double>::infinity() : d;
    }
    out.per_frame[t] = e / double(common.size());
    err_sum += out.per_frame[t];
    out.n_landmarks_used += static_cast<int>(common.size());
    ++out.n_frames_used;
  }
  if (out.n_frames_used == 0)
    throw Error(ErrorCode::kNotEvaluable, "no frame has two co-visible landmarks");
  out.mean_error = err_sum / out.n_frames_used;
  out.landmark_iou = iou_frames > 0 ? iou_sum / iou_frames : 0.0;
  return out;
}

inline AlignmentError alignment_error(const Homography& fwd, std::span<const LandmarkSet> lm_a,
                                      std::span<const LandmarkSet> lm_b) {
  return alignment_error(as_frame_mapping(fwd), as_frame_mapping(fwd.inverse()), lm_a, lm_b);
}

inline AlignmentError alignment_error(const TtpsMapping& fwd, const TtpsMapping& rev,
                                      std::span<const LandmarkSet> lm_a, std::span<const LandmarkSet> lm_b) {
  return alignment_error(as_frame_mapping(fwd), as_frame_mapping(rev), lm_a, lm_b);
}

inline bool is_correct(const AlignmentError& err, const EvalConfig& cfg = {}) {
  return err.mean_error < cfg.error_threshold && err.landmark_iou > cfg.iou_threshold;
}

struct AlignableResult {
  bool alignable = false;
  bool evaluable = false;  // false when no homography could be fit or scored
  std::optional<Homography> fit;
  std::optional<AlignmentError> error;
};

// A pair is alignable when a homography fit to all co-visible ground-truth
// landmarks over all frames passes the correctness rule.
inline AlignableResult alignable_oracle(std::span<const LandmarkSet> lm_a, std::span<const LandmarkSet> lm_b,
                                        const EvalConfig& cfg = {}) {
  if (lm_a.size() != lm_b.size()) throw Error(ErrorCode::kInvalidArgument, "landmark frame counts differ");
  std::vector<PointCorrespondence> corrs;
  for (size_t t = 0; t < lm_a.size(); ++t)
    for (const auto& [id, pa] : lm_a[t].points) {
      const auto it = lm_b[t].points.find(id);
      if (it != lm_b[t].points.end()) corrs.push_back({it->second, pa, static_cast<int>(t), 1.0});
    }
  AlignableResult out;
  try {
    out.fit = fit_homography_dlt(corrs);
    out.error = alignment_error(*out.fit, lm_a, lm_b);
  } catch (const Error& e) {
    if (e.code() != ErrorCode::kInsufficientCorrespondences && e.code() != ErrorCode::kDegenerateSample &&
        e.code() != ErrorCode::kNotEvaluable)
      throw;
    return out;
  }
  out.evaluable = true;
  out.alignable = is_correct(*out.error, cfg);
  return out;
}

inline AlignableResult alignable_oracle(const FrameSequence& a, const FrameSequence& b, const EvalConfig& cfg = {}) {
  if (a.length() != b.length()) throw Error(ErrorCode::kInvalidArgument, "sequence lengths differ");
  if (!a.has_landmarks() || !b.has_landmarks()) throw Error(ErrorCode::kInvalidArgument, "sequences lack landmarks");
  const auto la = a.landmark_window(), lb = b.landmark_window();
  return alignable_oracle(la, lb, cfg);
}

// One aligned CMP as seen by the precision-recall sweep. An alignment that
// failed outright is never returned; one without an error is returned and
// counted as incorrect.
struct AlignmentOutcome {
  bool aligned = true;
  double outlier_fraction = 0.0;
  std::optional<AlignmentError> error;
};

struct PrPoint {
  double operating_point = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  int n_returned = 0;
  int n_correct = 0;
  int n_alignable = 0;
  bool recall_defined = true;

  friend bool operator==(const PrPoint&, const PrPoint&) = default;
};

// Returned set at operating point o: alignments with outlier_fraction <= o.
// Precision c/n, recall c/a, with c counting every correct returned alignment.
inline std::vector<PrPoint> precision_recall(std::span<const AlignmentOutcome> results,
                                             std::span<const char> alignable, std::span<const double> operating_points,
                                             const EvalConfig& cfg = {}) {
  if (results.size() != alignable.size()) throw Error(ErrorCode::kInvalidArgument, "results and flags differ in size");
  const int n_alignable = static_cast<int>(std::count_if(alignable.begin(), alignable.end(), [](char c) { return c != 0; }));
  std::vector<char> correct(results.size());
  for (size_t k = 0; k < results.size(); ++k)
    correct[k] = results[k].aligned && results[k].error && is_correct(*results[k].error, cfg);
  std::vector<PrPoint> out;
  out.reserve(operating_points.size());
  for (double o : operating_points) {
    PrPoint p;
    p.operating_point = o;
    p.n_alignable = n_alignable;
    for (size_t k = 0; k < results.size(); ++k) {
      if (!results[k].aligned || !(results[k].outlier_fraction <= o)) continue;
      ++p.n_returned;
      p.n_correct += correct[k];
    }
    p.precision = p.n_returned > 0 ? double(p.n_correct) / p.n_returned : 0.0;
    p.recall_defined = n_alignable > 0;
    p.recall = p.recall_defined ? double(p.n_correct) / n_alignable : 0.0;
    out.push_back(p);
  }
  return out;
}

// Trapezoidal area under precision over recall. Points are sorted by recall
// (then operating point) and the curve is extended flat to recall 0.
inline double average_precision(std::span<const PrPoint> curve) {
  if (curve.empty()) return 0.0;
  std::vector<PrPoint> pts(curve.begin(), curve.end());
  std::stable_sort(pts.begin(), pts.end(), [](const PrPoint& a, const PrPoint& b) {
    return a.recall < b.recall || (a.recall == b.recall && a.operating_point < b.operating_point);
  });
  double area = pts.front().recall * pts.front().precision;
  for (size_t k = 1; k < pts.size(); ++k)
    area += (pts[k].recall - pts[k - 1].recall) * 0.5 * (pts[k].precision + pts[k - 1].precision);
  return area;
}

}  // namespace motionalign
