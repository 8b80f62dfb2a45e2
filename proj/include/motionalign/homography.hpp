#pragma once

// Rigid sequence alignment: DLT homography fitting, RANSAC over point
// correspondences (IM) or whole trajectory matches (TM), foreground box
// regularization and the box-only baseline.
//
// Direction convention: correspondences map a source point v (sequence A)
// to a target point u (sequence B); fitted matrices satisfy u ~ H v.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <random>
#include <span>
#include <vector>

#include "motionalign/core.hpp"
#include "motionalign/descriptors.hpp"

namespace motionalign {

struct Homography {
  Eigen::Matrix3d h = Eigen::Matrix3d::Identity();
  double inlier_fraction = 1.0;
  double outlier_fraction = 0.0;
  // Set when a trajectory-based fit fell back to the foreground boxes alone.
  bool fg_fallback = false;

  Point2 apply(Point2 p) const { return project(h, p); }

  Homography inverse() const {
    Homography inv = *this;
    inv.h = normalized(h.inverse());
    return inv;
  }

  static Point2 project(const Eigen::Matrix3d& m, Point2 p) {
    const Eigen::Vector3d q = m * Eigen::Vector3d(p.x, p.y, 1.0);
    if (std::abs(q.z()) < 1e-300)
      return {std::numeric_limits<double>::infinity(), std::numeric_limits<double>::infinity()};
    return {q.x() / q.z(), q.y() / q.z()};
  }

  // Scales so that h(2,2) = 1, or to unit Frobenius norm when h(2,2) ~ 0.
  static Eigen::Matrix3d normalized(const Eigen::Matrix3d& m) {
    const double fro = m.norm();
    if (std::abs(m(2, 2)) > 1e-12 * fro) return m / m(2, 2);
    return m / fro;
  }
};

struct PointCorrespondence {
  Point2 u;  // target (sequence B)
  Point2 v;  // source (sequence A)
  int frame_offset = 0;
  double weight = 1.0;
};

struct TrajectoryMatch {
  Trajectory traj_a;
  Trajectory traj_b;
  int relative_start = 0;  // sequence-relative start frame shared by both
  double descriptor_distance = 0.0;

  std::vector<PointCorrespondence> correspondences() const {
    std::vector<PointCorrespondence> out;
    out.reserve(static_cast<size_t>(kTrajectoryLength));
    for (int k = 0; k < kTrajectoryLength; ++k)
      out.push_back({traj_b.points[static_cast<size_t>(k)], traj_a.points[static_cast<size_t>(k)],
                     relative_start + k, 1.0});
    return out;
  }
};

// Box-corner correspondences, 4 per frame in the fixed corner order.
struct FgMatches {
  std::vector<PointCorrespondence> corners;
  int frames = 0;
};

inline FgMatches build_fg_matches(std::span<const ForegroundMask> masks_a, std::span<const ForegroundMask> masks_b) {
  if (masks_a.size() != masks_b.size() || masks_a.empty())
    throw Error(ErrorCode::kInvalidArgument, "foreground matches need the same nonzero number of frames");
  FgMatches fg;
  fg.frames = static_cast<int>(masks_a.size());
  for (size_t t = 0; t < masks_a.size(); ++t) {
    const auto ca = masks_a[t].bbox().corners();
    const auto cb = masks_b[t].bbox().corners();
    for (size_t k = 0; k < 4; ++k) fg.corners.push_back({cb[k], ca[k], static_cast<int>(t), 1.0});
  }
  return fg;
}

inline std::vector<ForegroundMask> window_masks(const FrameSequence& seq) {
  std::vector<ForegroundMask> out;
  for (int t = 0; t < seq.length(); ++t) out.push_back(seq.mask(t));
  return out;
}

// Nearest neighbour (Euclidean, modified TS descriptor) in seq_b for every
// trajectory of seq_a, restricted to trajectories starting in the same
// sequence-relative frame. Static trajectories are skipped.
inline std::vector<TrajectoryMatch> match_trajectories(const FrameSequence& seq_a, const FrameSequence& seq_b) {
  const auto starts_a = seq_a.trajectories_by_relative_start();
  const auto starts_b = seq_b.trajectories_by_relative_start();
  std::vector<TrajectoryMatch> matches;
  const int frames = std::min(seq_a.length(), seq_b.length());
  const auto describe = [](const FrameSequence& seq, int t, const std::vector<const Trajectory*>& trs) {
    std::vector<std::pair<const Trajectory*, DescriptorVector>> out;
    for (const Trajectory* tr : trs) {
      try {
        out.emplace_back(tr, compute_modified_ts(*tr, seq.mask(t)).vector());
      } catch (const Error& e) {
        if (e.code() != ErrorCode::kStaticTrajectory) throw;
      }
    }
    return out;
  };
  for (int t = 0; t < frames; ++t) {
    const auto da = describe(seq_a, t, starts_a[static_cast<size_t>(t)]);
    const auto db = describe(seq_b, t, starts_b[static_cast<size_t>(t)]);
    if (db.empty()) continue;
    for (const auto& [ta, va] : da) {
      size_t best = 0;
      double best_d = std::numeric_limits<double>::infinity();
      for (size_t k = 0; k < db.size(); ++k) {
        const double d = (db[k].second - va).squaredNorm();
        if (d < best_d) {
          best_d = d;
          best = k;
        }
      }
      matches.push_back({*ta, *db[best].first, t, std::sqrt(best_d)});
    }
  }
  return matches;
}

namespace detail {

struct Similarity2 {
  double scale = 1.0;
  Point2 center;

  Point2 apply(Point2 p) const { return scale * (p - center); }
  Eigen::Matrix3d matrix() const {
    Eigen::Matrix3d m;
    m << scale, 0, -scale * center.x, 0, scale, -scale * center.y, 0, 0, 1;
    return m;
  }
};

// Isotropic normalization to centroid 0 and mean distance sqrt(2).
inline Similarity2 hartley_normalization(std::span<const Point2> pts) {
  Point2 c;
  for (const auto& p : pts) c += p;
  c = c / static_cast<double>(pts.size());
  double mean_dist = 0.0;
  for (const auto& p : pts) mean_dist += distance(p, c);
  mean_dist /= static_cast<double>(pts.size());
  if (!(mean_dist > 0.0)) throw Error(ErrorCode::kDegenerateSample, "all points coincide");
  return {std::sqrt(2.0) / mean_dist, c};
}

inline bool has_collinear_triple(std::span<const Point2> pts, double tol) {
  std::vector<Point2> norm_pts(pts.begin(), pts.end());
  try {
    const auto s = hartley_normalization(pts);
    for (auto& p : norm_pts) p = s.apply(p);
  } catch (const Error&) {
    return true;
  }
  for (size_t a = 0; a < norm_pts.size(); ++a)
    for (size_t b = a + 1; b < norm_pts.size(); ++b)
      for (size_t c = b + 1; c < norm_pts.size(); ++c)
        if (std::abs(cross(norm_pts[b] - norm_pts[a], norm_pts[c] - norm_pts[a])) < tol) return true;
  return false;
}

}  // namespace detail

// Weighted least-squares DLT with Hartley normalization of both point sets.
// Uses each correspondence's weight, or `weights` when given.
inline Homography fit_homography_dlt(std::span<const PointCorrespondence> corrs,
                                     std::optional<std::span<const double>> weights = std::nullopt) {
  const size_t n = corrs.size();
  if (n < 4) throw Error(ErrorCode::kInsufficientCorrespondences, "DLT needs at least 4 correspondences");
  if (weights && weights->size() != n) throw Error(ErrorCode::kInvalidArgument, "weight count mismatch");

  std::vector<Point2> us, vs;
  us.reserve(n);
  vs.reserve(n);
  for (const auto& c : corrs) {
    us.push_back(c.u);
    vs.push_back(c.v);
  }
  if (n == 4 && (detail::has_collinear_triple(us, 1e-9) || detail::has_collinear_triple(vs, 1e-9)))
    throw Error(ErrorCode::kDegenerateSample, "collinear triple in minimal sample");
  const auto nu = detail::hartley_normalization(us);
  const auto nv = detail::hartley_normalization(vs);

  Eigen::MatrixXd a(2 * n, 9);
  for (size_t i = 0; i < n; ++i) {
    const double w = weights ? (*weights)[i] : corrs[i].weight;
    if (!(w > 0.0)) throw Error(ErrorCode::kInvalidArgument, "correspondence weight must be positive");
    const double sw = std::sqrt(w);
    const Point2 u = nu.apply(us[i]);
    const Point2 v = nv.apply(vs[i]);
    a.row(static_cast<long>(2 * i)) << 0, 0, 0, -v.x, -v.y, -1, u.y * v.x, u.y * v.y, u.y;
    a.row(static_cast<long>(2 * i + 1)) << v.x, v.y, 1, 0, 0, 0, -u.x * v.x, -u.x * v.y, -u.x;
    a.row(static_cast<long>(2 * i)) *= sw;
    a.row(static_cast<long>(2 * i + 1)) *= sw;
  }
  Eigen::JacobiSVD<Eigen::MatrixXd, Eigen::ColPivHouseholderQRPreconditioner> svd(a, Eigen::ComputeFullV);
  const auto& sv = svd.singularValues();
  if (sv.size() < 8 || sv(7) < 1e-10 * sv(0))
    throw Error(ErrorCode::kDegenerateSample, "correspondences do not determine a unique homography");
  const Eigen::Matrix<double, 9, 1> hv = svd.matrixV().col(8);
  Eigen::Matrix3d hn;
  hn << hv(0), hv(1), hv(2), hv(3), hv(4), hv(5), hv(6), hv(7), hv(8);
  const Eigen::Matrix3d h = nu.matrix().inverse() * hn * nv.matrix();
  const double det = h.determinant();
  if (!std::isfinite(det) || std::abs(det) < 1e-12 * std::pow(h.norm(), 3))
    throw Error(ErrorCode::kDegenerateSample, "fitted homography is singular");
  Homography out;
  out.h = Homography::normalized(h);
  return out;
}

// Mean of the forward and backward transfer distances.
inline double symmetric_transfer_error(const Eigen::Matrix3d& h, const Eigen::Matrix3d& h_inv,
                                       const PointCorrespondence& c) {
  const double fwd = distance(Homography::project(h, c.v), c.u);
  const double bwd = distance(Homography::project(h_inv, c.u), c.v);
  const double e = 0.5 * (fwd + bwd);
  return std::isfinite(e) ? e : std::numeric_limits<double>::infinity();
}

struct RansacParams {
  std::uint64_t seed = 0;
  double confidence = 0.99;
  int max_iterations = 2000;
  double tau_scale = 0.05;
  int min_inlier_matches = 8;
};

// Per-frame inlier thresholds: tau_scale times the mean of the two box
// diagonals. Frames past either shot's end reuse the last available frame.
inline std::vector<double> frame_thresholds(const FrameSequence& seq_a, const FrameSequence& seq_b, double tau_scale,
                                            int offsets) {
  std::vector<double> tau(static_cast<size_t>(offsets));
  for (int t = 0; t < offsets; ++t) {
    const int ta = std::min(t, seq_a.shot().frame_count - seq_a.start_frame() - 1);
    const int tb = std::min(t, seq_b.shot().frame_count - seq_b.start_frame() - 1);
    tau[static_cast<size_t>(t)] =
        tau_scale * 0.5 * (seq_a.mask(ta).bbox().diagonal() + seq_b.mask(tb).bbox().diagonal());
  }
  return tau;
}

namespace detail {

inline double threshold_for(std::span<const double> tau, int offset) {
  if (tau.empty()) throw Error(ErrorCode::kInvalidArgument, "no inlier thresholds");
  return tau[static_cast<size_t>(std::clamp(offset, 0, static_cast<int>(tau.size()) - 1))];
}

inline int adaptive_iterations(double inlier_ratio, int sample_size, double confidence, int cap) {
  const double w = std::pow(std::clamp(inlier_ratio, 0.0, 1.0), sample_size);
  if (w >= 1.0) return 1;
  if (w <= 0.0) return cap;
  const double n = std::log(1.0 - confidence) / std::log(1.0 - w);
  if (!std::isfinite(n)) return cap;
  return static_cast<int>(std::min<double>(cap, std::ceil(n)));
}

template <typename Rng>
std::array<size_t, 4> sample_four(size_t n, Rng& rng) {
  std::array<size_t, 4> idx{};
  std::uniform_int_distribution<size_t> pick(0, n - 1);
  for (size_t k = 0; k < 4; ++k) {
    bool fresh = false;
    while (!fresh) {
      idx[k] = pick(rng);
      fresh = std::find(idx.begin(), idx.begin() + static_cast<long>(k), idx[k]) == idx.begin() + static_cast<long>(k);
    }
  }
  return idx;
}

struct Consensus {
  int inliers = -1;
  double cost = std::numeric_limits<double>::infinity();
  bool better_than(const Consensus& o) const { return inliers > o.inliers || (inliers == o.inliers && cost < o.cost); }
};

inline Consensus point_consensus(const Eigen::Matrix3d& h, std::span<const PointCorrespondence> corrs,
                                 std::span<const double> tau, std::vector<char>* mask = nullptr) {
  const Eigen::Matrix3d h_inv = h.inverse();
  Consensus c{0, 0.0};
  if (mask) mask->assign(corrs.size(), 0);
  for (size_t i = 0; i < corrs.size(); ++i) {
    const double thr = threshold_for(tau, corrs[i].frame_offset);
    const double e = symmetric_transfer_error(h, h_inv, corrs[i]);
    if (e < thr) {
      ++c.inliers;
      c.cost += e;
      if (mask) (*mask)[i] = 1;
    } else {
      c.cost += thr;
    }
  }
  return c;
}

}  // namespace detail

// Independent matching: 4-point RANSAC over individual correspondences.
inline Homography ransac_im(std::span<const PointCorrespondence> corrs, std::span<const double> tau,
                            const RansacParams& params = {}) {
  const size_t n = corrs.size();
  if (n < 4) throw Error(ErrorCode::kInsufficientCorrespondences, "RANSAC needs at least 4 correspondences");
  std::mt19937_64 rng(params.seed);
  detail::Consensus best;
  Eigen::Matrix3d best_h = Eigen::Matrix3d::Identity();
  int needed = params.max_iterations;
  int iterations = 0;
  long draws = 0;
  const long max_draws = 20L * params.max_iterations;
  while (iterations < std::min(needed, params.max_iterations) && draws < max_draws) {
    ++draws;
    const auto idx = detail::sample_four(n, rng);
    std::array<PointCorrespondence, 4> sample{corrs[idx[0]], corrs[idx[1]], corrs[idx[2]], corrs[idx[3]]};
    Homography hyp;
    try {
      hyp = fit_homography_dlt(sample);
    } catch (const Error& e) {
      if (e.code() == ErrorCode::kDegenerateSample) continue;
      throw;
    }
    ++iterations;
    const auto score = detail::point_consensus(hyp.h, corrs, tau);
    if (score.better_than(best)) {
      best = score;
      best_h = hyp.h;
      needed = detail::adaptive_iterations(double(best.inliers) / double(n), 4, params.confidence,
                                           params.max_iterations);
    }
  }
  if (best.inliers < std::max(params.min_inlier_matches, 4))
    throw Error(ErrorCode::kNoConsensus, "no hypothesis reached the minimum inlier count");

  std::vector<char> mask;
  detail::point_consensus(best_h, corrs, tau, &mask);
  for (int round = 0; round < 5; ++round) {
    std::vector<PointCorrespondence> inl;
    for (size_t i = 0; i < n; ++i)
      if (mask[i]) inl.push_back(corrs[i]);
    Homography refit;
    try {
      refit = fit_homography_dlt(inl);
    } catch (const Error&) {
      break;
    }
    std::vector<char> refit_mask;
    const auto score = detail::point_consensus(refit.h, corrs, tau, &refit_mask);
    if (score.inliers < best.inliers) break;
    const bool same = refit_mask == mask;
    best = score;
    best_h = refit.h;
    mask = std::move(refit_mask);
    if (same) break;
  }
  Homography out;
  out.h = best_h;
  out.inlier_fraction = double(best.inliers) / double(n);
  out.outlier_fraction = 1.0 - out.inlier_fraction;
  return out;
}

// Box-only baseline: DLT over the 4T corner correspondences. The recorded
// outlier fraction is the share of corners failing the inlier test.
inline Homography fit_fg_only(std::span<const ForegroundMask> masks_a, std::span<const ForegroundMask> masks_b,
                              std::optional<std::span<const double>> tau = std::nullopt) {
  const FgMatches fg = build_fg_matches(masks_a, masks_b);
  Homography out = fit_homography_dlt(fg.corners);
  if (tau) {
    const auto score = detail::point_consensus(out.h, fg.corners, *tau);
    out.inlier_fraction = double(score.inliers) / double(fg.corners.size());
  } else {
    out.inlier_fraction = 1.0;
  }
  out.outlier_fraction = 1.0 - out.inlier_fraction;
  return out;
}

namespace detail {

struct MatchConsensus {
  Consensus score;
  std::vector<char> inlier_match;
  std::vector<PointCorrespondence> inlier_points;  // inlier points of inlier matches
};

inline MatchConsensus match_consensus(const Eigen::Matrix3d& h,
                                      const std::vector<std::vector<PointCorrespondence>>& expanded,
                                      std::span<const double> tau) {
  const Eigen::Matrix3d h_inv = h.inverse();
  MatchConsensus mc;
  mc.score = {0, 0.0};
  mc.inlier_match.assign(expanded.size(), 0);
  for (size_t m = 0; m < expanded.size(); ++m) {
    int good = 0;
    double cost = 0.0;
    for (const auto& c : expanded[m]) {
      const double thr = threshold_for(tau, c.frame_offset);
      const double e = symmetric_transfer_error(h, h_inv, c);
      if (e < thr) {
        ++good;
        cost += e;
      } else {
        cost += thr;
      }
    }
    mc.score.cost += cost;
    if (2 * good >= static_cast<int>(expanded[m].size())) {
      ++mc.score.inliers;
      mc.inlier_match[m] = 1;
      for (const auto& c : expanded[m])
        if (symmetric_transfer_error(h, h_inv, c) < threshold_for(tau, c.frame_offset)) mc.inlier_points.push_back(c);
    }
  }
  return mc;
}

inline Homography fit_with_fg(std::vector<PointCorrespondence> traj_points, const FgMatches* fg) {
  if (fg && !fg->corners.empty()) {
    const double w_fg = double(traj_points.size()) / double(fg->corners.size());
    for (auto c : fg->corners) {
      c.weight = w_fg;
      traj_points.push_back(c);
    }
  }
  return fit_homography_dlt(traj_points);
}

}  // namespace detail

// Temporal matching: RANSAC whose samples are four trajectory matches,
// each hypothesis a least-squares DLT over their 4L point correspondences.
// A match is an inlier when at least half of its points are. With `fg`, the
// final refit appends the box corners weighted so both terms carry equal
// total weight.
inline Homography ransac_tm(std::span<const TrajectoryMatch> matches, const FgMatches* fg,
                            std::span<const double> tau, const RansacParams& params = {}) {
  const size_t n = matches.size();
  const auto fallback = [&]() {
    Homography h = fit_homography_dlt(fg->corners);
    h.inlier_fraction = 0.0;
    h.outlier_fraction = 1.0;
    h.fg_fallback = true;
    return h;
  };
  if (n < 4) {
    if (fg) return fallback();
    throw Error(ErrorCode::kInsufficientCorrespondences, "TM needs at least 4 trajectory matches");
  }
  std::vector<std::vector<PointCorrespondence>> expanded;
  expanded.reserve(n);
  for (const auto& m : matches) expanded.push_back(m.correspondences());

  std::mt19937_64 rng(params.seed);
  detail::Consensus best;
  Eigen::Matrix3d best_h = Eigen::Matrix3d::Identity();
  int needed = params.max_iterations;
  int iterations = 0;
  long draws = 0;
  const long max_draws = 20L * params.max_iterations;
  while (iterations < std::min(needed, params.max_iterations) && draws < max_draws) {
    ++draws;
    const auto idx = detail::sample_four(n, rng);
    std::vector<PointCorrespondence> sample;
    for (size_t k : idx) sample.insert(sample.end(), expanded[k].begin(), expanded[k].end());
    Homography hyp;
    try {
      hyp = fit_homography_dlt(sample);
    } catch (const Error& e) {
      if (e.code() == ErrorCode::kDegenerateSample) continue;
      throw;
    }
    ++iterations;
    const auto mc = detail::match_consensus(hyp.h, expanded, tau);
    if (mc.score.better_than(best)) {
      best = mc.score;
      best_h = hyp.h;
      needed = detail::adaptive_iterations(double(best.inliers) / double(n), 4, params.confidence,
                                           params.max_iterations);
    }
  }
  if (best.inliers < std::max(params.min_inlier_matches, 4)) {
    if (fg) return fallback();
    throw Error(ErrorCode::kNoConsensus, "no trajectory hypothesis reached the minimum inlier count");
  }

  auto mc = detail::match_consensus(best_h, expanded, tau);
  for (int round = 0; round < 5; ++round) {
    Homography refit;
    try {
      refit = fit_homography_dlt(mc.inlier_points);
    } catch (const Error&) {
      break;
    }
    auto next = detail::match_consensus(refit.h, expanded, tau);
    if (next.score.inliers < mc.score.inliers) break;
    const bool same = next.inlier_match == mc.inlier_match;
    best_h = refit.h;
    mc = std::move(next);
    if (same) break;
  }

  Homography out;
  if (fg) {
    out = detail::fit_with_fg(mc.inlier_points, fg);
    mc = detail::match_consensus(out.h, expanded, tau);
  } else {
    out.h = best_h;
  }
  out.inlier_fraction = double(mc.score.inliers) / double(n);
  out.outlier_fraction = 1.0 - out.inlier_fraction;
  return out;
}

}  // namespace motionalign
