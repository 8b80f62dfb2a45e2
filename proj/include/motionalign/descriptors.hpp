#pragma once

// Modified trajectory-shape descriptors, frame bag-of-words and
// consistent-motion-pair (CMP) mining.

#include <Eigen/Core>

#include <algorithm>
#include <cstdint>
#include <limits>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "motionalign/core.hpp"

namespace motionalign {

inline constexpr int kDisplacementDim = 2 * (kTrajectoryLength - 1);
inline constexpr int kTsDim = kDisplacementDim + 2;

using DescriptorVector = Eigen::Matrix<double, kTsDim, 1>;

struct TsDescriptor {
  Eigen::Matrix<double, kDisplacementDim, 1> displacement_part;
  Eigen::Vector2d anchor_part;

  DescriptorVector vector() const {
    DescriptorVector v;
    v << displacement_part, anchor_part;
    return v;
  }
};

// Displacements normalized by their total length, plus the start point's
// offset from the mask centroid normalized by the mask box diagonal.
inline TsDescriptor compute_modified_ts(const Trajectory& traj, const ForegroundMask& mask_at_start) {
  if (static_cast<int>(traj.points.size()) != kTrajectoryLength)
    throw Error(ErrorCode::kInvalidArgument, "trajectory length");
  if (mask_at_start.frame_index() != traj.start_frame)
    throw Error(ErrorCode::kInvalidArgument, "mask frame differs from trajectory start frame");
  const double diag = mask_at_start.bbox().diagonal();
  if (!(diag > 0.0)) throw Error(ErrorCode::kDegenerateBox, "mask box has zero diagonal");

  TsDescriptor d;
  double total = 0.0;
  for (int t = 0; t + 1 < kTrajectoryLength; ++t) {
    const Point2 delta = traj.points[t + 1] - traj.points[t];
    d.displacement_part[2 * t] = delta.x;
    d.displacement_part[2 * t + 1] = delta.y;
    total += norm(delta);
  }
  if (!(total > 0.0)) throw Error(ErrorCode::kStaticTrajectory, "trajectory " + std::to_string(traj.id) + " does not move");
  d.displacement_part /= total;
  const Point2 offset = (traj.points.front() - mask_at_start.centroid()) / diag;
  d.anchor_part = {offset.x, offset.y};
  return d;
}

struct Codebook {
  std::vector<DescriptorVector> centers;
  int k = 0;
  std::uint64_t seed = 0;

  int nearest(const DescriptorVector& v) const {
    int best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (int c = 0; c < static_cast<int>(centers.size()); ++c) {
      const double d = (centers[static_cast<size_t>(c)] - v).squaredNorm();
      if (d < best_d) {
        best_d = d;
        best = c;
      }
    }
    return best;
  }
};

// Lloyd k-means with k-means++ seeding drawn from a seeded mt19937_64.
// Throws kInsufficientData when fewer than k distinct descriptors exist.
inline Codebook build_codebook(std::span<const TsDescriptor> descriptors, int k, std::uint64_t seed,
                               int max_iterations = 100) {
  if (k < 1) throw Error(ErrorCode::kInvalidArgument, "codebook size must be >= 1");
  std::vector<DescriptorVector> data;
  data.reserve(descriptors.size());
  for (const auto& d : descriptors) data.push_back(d.vector());
  if (static_cast<int>(data.size()) < k)
    throw Error(ErrorCode::kInsufficientData, "fewer descriptors than codebook size");

  {
    std::vector<DescriptorVector> distinct = data;
    std::sort(distinct.begin(), distinct.end(), [](const DescriptorVector& a, const DescriptorVector& b) {
      return std::lexicographical_compare(a.data(), a.data() + kTsDim, b.data(), b.data() + kTsDim);
    });
    distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());
    if (static_cast<int>(distinct.size()) < k)
      throw Error(ErrorCode::kInsufficientData, "fewer distinct descriptors than codebook size");
  }

  std::mt19937_64 rng(seed);
  const size_t n = data.size();
  std::vector<DescriptorVector> centers;
  centers.reserve(static_cast<size_t>(k));
  centers.push_back(data[std::uniform_int_distribution<size_t>(0, n - 1)(rng)]);
  std::vector<double> nearest_sq(n, std::numeric_limits<double>::infinity());
  while (static_cast<int>(centers.size()) < k) {
    double total = 0.0;
    for (size_t i = 0; i < n; ++i) {
      nearest_sq[i] = std::min(nearest_sq[i], (data[i] - centers.back()).squaredNorm());
      total += nearest_sq[i];
    }
    double pick = std::uniform_real_distribution<double>(0.0, total)(rng);
    size_t chosen = n;
    for (size_t i = 0; i < n; ++i) {
      if (nearest_sq[i] <= 0.0) continue;
      chosen = i;
      pick -= nearest_sq[i];
      if (pick <= 0.0) break;
    }
    centers.push_back(data[chosen]);
  }

  std::vector<int> assignment(n, -1);
  for (int iter = 0; iter < max_iterations; ++iter) {
    bool changed = false;
    Codebook current{centers, k, seed};
    for (size_t i = 0; i < n; ++i) {
      const int c = current.nearest(data[i]);
      if (c != assignment[i]) {
        assignment[i] = c;
        changed = true;
      }
    }
    if (!changed && iter > 0) break;
    std::vector<DescriptorVector> sums(static_cast<size_t>(k), DescriptorVector::Zero());
    std::vector<int> counts(static_cast<size_t>(k), 0);
    for (size_t i = 0; i < n; ++i) {
      sums[static_cast<size_t>(assignment[i])] += data[i];
      ++counts[static_cast<size_t>(assignment[i])];
    }
    for (int c = 0; c < k; ++c) {
      if (counts[static_cast<size_t>(c)] > 0) {
        centers[static_cast<size_t>(c)] = sums[static_cast<size_t>(c)] / counts[static_cast<size_t>(c)];
        continue;
      }
      // Empty cluster: move it onto the point farthest from its center.
      size_t far = 0;
      double far_d = -1.0;
      for (size_t i = 0; i < n; ++i) {
        const double d = (data[i] - centers[static_cast<size_t>(assignment[i])]).squaredNorm();
        if (d > far_d) {
          far_d = d;
          far = i;
        }
      }
      centers[static_cast<size_t>(c)] = data[far];
      assignment[far] = c;
    }
  }
  return Codebook{std::move(centers), k, seed};
}

struct FrameBow {
  std::vector<double> histogram;
  int frame_index = 0;
};

inline FrameBow frame_bow(std::span<const TsDescriptor> descriptors, const Codebook& codebook, int frame_index = 0) {
  FrameBow bow{std::vector<double>(codebook.centers.size(), 0.0), frame_index};
  if (descriptors.empty()) return bow;
  for (const auto& d : descriptors) bow.histogram[static_cast<size_t>(codebook.nearest(d.vector()))] += 1.0;
  for (auto& h : bow.histogram) h /= static_cast<double>(descriptors.size());
  return bow;
}

inline double histogram_intersection(const FrameBow& a, const FrameBow& b) {
  if (a.histogram.size() != b.histogram.size())
    throw Error(ErrorCode::kInvalidArgument, "histogram dimensions differ");
  double s = 0.0;
  for (size_t k = 0; k < a.histogram.size(); ++k) s += std::min(a.histogram[k], b.histogram[k]);
  return s;
}

// Row-major n x m matrix of frame-to-frame BoW intersections.
struct SimilarityMatrix {
  int rows = 0;
  int cols = 0;
  std::vector<double> values;

  double at(int i, int j) const { return values[static_cast<size_t>(i) * cols + j]; }
};

inline SimilarityMatrix intersection_matrix(std::span<const FrameBow> p, std::span<const FrameBow> q) {
  SimilarityMatrix d{static_cast<int>(p.size()), static_cast<int>(q.size()), {}};
  d.values.reserve(p.size() * q.size());
  for (const auto& a : p)
    for (const auto& b : q) d.values.push_back(histogram_intersection(a, b));
  return d;
}

// Sum of d along the diagonal starting at (i, j) over t_len frames.
inline double score_sequence_pair(int i, int j, const SimilarityMatrix& d, int t_len) {
  if (t_len < 1 || i < 0 || j < 0 || i + t_len > d.rows || j + t_len > d.cols)
    throw Error(ErrorCode::kInvalidArgument, "sequence pair outside similarity matrix");
  double s = 0.0;
  for (int t = 0; t < t_len; ++t) s += d.at(i + t, j + t);
  return s;
}

struct SequenceRef {
  std::string shot_id;
  int start_frame = 0;  // absolute frame in the shot
  friend bool operator==(const SequenceRef&, const SequenceRef&) = default;
};

struct Cmp {
  SequenceRef seq_a;
  SequenceRef seq_b;
  int t_len = 10;
  double score = 0.0;
  int rank = 0;
};

// Per-frame BoWs of one interval.
struct IntervalBows {
  Interval interval;
  std::vector<FrameBow> frames;  // one per interval frame
};

// Scores every inclusive start pair (n - t_len + 1) x (m - t_len + 1) and
// keeps the top_k by score, ties broken by (i, j) lexicographically.
inline std::vector<Cmp> extract_cmps(const IntervalBows& p, const IntervalBows& q, int t_len = 10, int top_k = 10) {
  const int n = static_cast<int>(p.frames.size());
  const int m = static_cast<int>(q.frames.size());
  if (t_len < 1 || n < t_len || m < t_len)
    throw Error(ErrorCode::kInvalidArgument, "interval shorter than the sequence length");
  if (p.interval.shot_id == q.interval.shot_id)
    throw Error(ErrorCode::kInvalidArgument, "CMPs are mined across distinct shots only");
  const SimilarityMatrix d = intersection_matrix(p.frames, q.frames);

  struct Candidate {
    double score;
    int i;
    int j;
  };
  std::vector<Candidate> all;
  all.reserve(static_cast<size_t>(n - t_len + 1) * (m - t_len + 1));
  for (int i = 0; i + t_len <= n; ++i)
    for (int j = 0; j + t_len <= m; ++j) all.push_back({score_sequence_pair(i, j, d, t_len), i, j});

  const auto better = [](const Candidate& a, const Candidate& b) {
    if (a.score != b.score) return a.score > b.score;
    if (a.i != b.i) return a.i < b.i;
    return a.j < b.j;
  };
  const size_t keep = std::min(all.size(), static_cast<size_t>(std::max(top_k, 0)));
  std::partial_sort(all.begin(), all.begin() + static_cast<long>(keep), all.end(), better);

  std::vector<Cmp> out;
  out.reserve(keep);
  for (size_t r = 0; r < keep; ++r) {
    const auto& c = all[r];
    out.push_back(Cmp{{p.interval.shot_id, p.interval.start_frame + c.i},
                      {q.interval.shot_id, q.interval.start_frame + c.j},
                      t_len,
                      c.score,
                      static_cast<int>(r)});
  }
  return out;
}

}  // namespace motionalign
