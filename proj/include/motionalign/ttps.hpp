#pragma once

// Foreground edge points, optical-flow propagation and the time-varying
// TPS: one TPS per frame, all sharing a single flow-consistent
// correspondence set, inferred from T anchor-frame candidates.

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "motionalign/core.hpp"
#include "motionalign/homography.hpp"
#include "motionalign/tps.hpp"

namespace motionalign {

namespace detail {

// Lower envelope of parabolas: d[q] = min_p (q - p)^2 + f[p].
inline void squared_edt_1d(const std::vector<double>& f, std::vector<double>& d, std::vector<int>& v,
                           std::vector<double>& z) {
  const int n = static_cast<int>(f.size());
  constexpr double inf = std::numeric_limits<double>::infinity();
  int k = -1;
  for (int q = 0; q < n; ++q) {
    if (f[static_cast<size_t>(q)] == inf) continue;
    if (k < 0) {
      k = 0;
      v[0] = q;
      z[0] = -inf;
      z[1] = inf;
      continue;
    }
    double s;
    while (true) {
      const int p = v[static_cast<size_t>(k)];
      s = ((f[static_cast<size_t>(q)] + double(q) * q) - (f[static_cast<size_t>(p)] + double(p) * p)) / (2.0 * (q - p));
      if (s > z[static_cast<size_t>(k)] || k == 0) break;
      --k;
    }
    if (s <= z[static_cast<size_t>(k)]) {
      v[static_cast<size_t>(k)] = q;
      z[static_cast<size_t>(k + 1)] = inf;
      continue;
    }
    ++k;
    v[static_cast<size_t>(k)] = q;
    z[static_cast<size_t>(k)] = s;
    z[static_cast<size_t>(k + 1)] = inf;
  }
  if (k < 0) {
    std::fill(d.begin(), d.end(), inf);
    return;
  }
  int j = 0;
  for (int q = 0; q < n; ++q) {
    while (z[static_cast<size_t>(j + 1)] < q) ++j;
    const int p = v[static_cast<size_t>(j)];
    d[static_cast<size_t>(q)] = double(q - p) * (q - p) + f[static_cast<size_t>(p)];
  }
}

}  // namespace detail

// Exact Euclidean distance (in cells) from every cell center to the nearest
// mask cell center; separable two-pass lower-envelope algorithm.
inline Raster<double> distance_transform(const ForegroundMask& mask) {
  if (mask.cell_count() == 0) throw Error(ErrorCode::kEmptyMask, "distance transform of an empty mask");
  const int w = mask.width(), h = mask.height();
  constexpr double inf = std::numeric_limits<double>::infinity();
  Raster<double> out(w, h, inf);
  const int n = std::max(w, h);
  std::vector<double> f, d;
  std::vector<int> v(static_cast<size_t>(n));
  std::vector<double> z(static_cast<size_t>(n) + 1);

  f.resize(static_cast<size_t>(h));
  d.resize(static_cast<size_t>(h));
  for (int c = 0; c < w; ++c) {
    for (int r = 0; r < h; ++r) f[static_cast<size_t>(r)] = mask.grid().at(r, c) ? 0.0 : inf;
    detail::squared_edt_1d(f, d, v, z);
    for (int r = 0; r < h; ++r) out.at(r, c) = d[static_cast<size_t>(r)];
  }
  f.resize(static_cast<size_t>(w));
  d.resize(static_cast<size_t>(w));
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) f[static_cast<size_t>(c)] = out.at(r, c);
    detail::squared_edt_1d(f, d, v, z);
    for (int c = 0; c < w; ++c) out.at(r, c) = std::sqrt(d[static_cast<size_t>(c)]);
  }
  return out;
}

inline constexpr int kMaxEdgePoints = 1000;

struct EdgePointSet {
  int frame_index = 0;
  std::vector<Point2> points;
  std::vector<double> strengths;
  std::vector<int> origin_frame;
  std::vector<char> in_bounds;  // cleared once a propagated point leaves the frame

  size_t size() const { return points.size(); }
};

struct EdgeParams {
  double sigma_factor = 0.05;
  double prune_threshold = 0.2;
  int max_points = kMaxEdgePoints;
  std::uint64_t seed = 0;
};

// Score = strength * exp(-dt / sigma), sigma = sigma_factor * box diagonal.
// Keeps scores above the threshold, then subsamples uniformly to max_points.
inline EdgePointSet extract_fg_edges(const EdgeMap& edges, const ForegroundMask& mask, const EdgeParams& params = {}) {
  if (edges.grid.width() != mask.width() || edges.grid.height() != mask.height())
    throw Error(ErrorCode::kInvalidArgument, "edge map and mask sizes differ");
  if (params.max_points < 1) throw Error(ErrorCode::kInvalidArgument, "max_points must be >= 1");
  const double sigma = params.sigma_factor * mask.bbox().diagonal();
  if (!(sigma > 0.0)) throw Error(ErrorCode::kInvalidArgument, "sigma must be positive");
  const Raster<double> dt = distance_transform(mask);

  EdgePointSet set;
  set.frame_index = mask.frame_index();
  for (int r = 0; r < mask.height(); ++r)
    for (int c = 0; c < mask.width(); ++c) {
      const double strength = edges.grid.at(r, c);
      if (!(strength > 0.0)) continue;
      const double score = strength * std::exp(-dt.at(r, c) / sigma);
      if (score > params.prune_threshold) {
        set.points.push_back(to_cell_center(r, c));
        set.strengths.push_back(score);
      }
    }
  if (set.points.empty())
    throw Error(ErrorCode::kEmptyEdgeSet, "no edge point survives pruning in frame " + std::to_string(set.frame_index));
  if (static_cast<int>(set.points.size()) > params.max_points) {
    std::vector<size_t> idx(set.points.size());
    for (size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    std::vector<size_t> keep;
    std::mt19937_64 rng(params.seed);
    std::sample(idx.begin(), idx.end(), std::back_inserter(keep), params.max_points, rng);
    EdgePointSet sub;
    sub.frame_index = set.frame_index;
    for (size_t i : keep) {
      sub.points.push_back(set.points[i]);
      sub.strengths.push_back(set.strengths[i]);
    }
    set = std::move(sub);
  }
  set.origin_frame.assign(set.points.size(), set.frame_index);
  set.in_bounds.assign(set.points.size(), 1);
  return set;
}

// Bilinear flow sample at a continuous position (cell centers at +0.5).
inline Point2 sample_flow(const FlowField& flow, Point2 p) {
  const auto& g = flow.grid;
  if (g.empty()) throw Error(ErrorCode::kInvalidArgument, "empty flow field");
  const double x = std::clamp(p.x - 0.5, 0.0, double(g.width() - 1));
  const double y = std::clamp(p.y - 0.5, 0.0, double(g.height() - 1));
  const int x0 = static_cast<int>(std::floor(x)), y0 = static_cast<int>(std::floor(y));
  const int x1 = std::min(x0 + 1, g.width() - 1), y1 = std::min(y0 + 1, g.height() - 1);
  const double ax = x - x0, ay = y - y0;
  const auto at = [&](int r, int c) { return Point2{g.at(r, c).dx, g.at(r, c).dy}; };
  return (1 - ay) * ((1 - ax) * at(y0, x0) + ax * at(y0, x1)) + ay * ((1 - ax) * at(y1, x0) + ax * at(y1, x1));
}

namespace detail {

// forward(t): flow t -> t+1; backward(t): flow t+1 -> t, or null to use the
// negated forward flow sampled at the current position.
template <class Fwd, class Bwd>
EdgePointSet propagate_with(const EdgePointSet& pts, int from_t, int to_t, Fwd forward, Bwd backward) {
  EdgePointSet out = pts;
  out.frame_index = pts.frame_index + (to_t - from_t);
  if (out.in_bounds.size() != out.points.size()) out.in_bounds.assign(out.points.size(), 1);
  if (out.origin_frame.size() != out.points.size()) out.origin_frame.assign(out.points.size(), pts.frame_index);
  const int dir = to_t > from_t ? 1 : -1;
  for (int t = from_t; t != to_t; t += dir) {
    const FlowField* field = dir > 0 ? forward(t) : backward(t - 1);
    double sign = 1.0;
    if (!field) {
      field = forward(t - 1);
      sign = -1.0;
    }
    const double w = field->grid.width(), h = field->grid.height();
    for (size_t i = 0; i < out.points.size(); ++i) {
      Point2& p = out.points[i];
      p += sign * sample_flow(*field, p);
      if (p.x < 0.0 || p.y < 0.0 || p.x > w || p.y > h) {
        out.in_bounds[i] = 0;
        p = {std::clamp(p.x, 0.0, w), std::clamp(p.y, 0.0, h)};
      }
    }
  }
  return out;
}

}  // namespace detail

// forward[t]: flow t -> t+1. backward[t]: flow t+1 -> t; when empty, the
// negated forward flow stands in for it. Out-of-frame points are clamped
// and flagged.
inline EdgePointSet propagate_points(const EdgePointSet& pts, std::span<const FlowField> forward,
                                     std::span<const FlowField> backward, int from_t, int to_t) {
  const int lo = std::min(from_t, to_t);
  const int steps = std::abs(to_t - from_t);
  if (steps > 0 && (lo < 0 || lo + steps > static_cast<int>(forward.size())))
    throw Error(ErrorCode::kInvalidArgument, "not enough flow fields for the requested propagation");
  if (!backward.empty() && backward.size() < forward.size())
    throw Error(ErrorCode::kInvalidArgument, "backward flow list shorter than forward list");
  return detail::propagate_with(
      pts, from_t, to_t, [&](int t) { return &forward[static_cast<size_t>(t)]; },
      [&](int t) { return backward.empty() ? nullptr : &backward[static_cast<size_t>(t)]; });
}

// Propagation inside a sequence window (relative frame indices).
inline EdgePointSet propagate_points(const EdgePointSet& pts, const FrameSequence& seq, int from_t, int to_t) {
  if (std::min(from_t, to_t) < 0 || std::max(from_t, to_t) >= seq.length())
    throw Error(ErrorCode::kInvalidArgument, "propagation outside the window");
  return detail::propagate_with(
      pts, from_t, to_t, [&](int t) { return &seq.flow(t); },
      [&](int t) { return seq.has_backward_flow() ? &seq.backward_flow(t + 1) : nullptr; });
}

// One pairing (i in the target set U, j in the source set V) shared by all frames.
struct TtpsPair {
  int i = 0;
  int j = 0;
  double weight = 1.0;
  friend bool operator==(const TtpsPair&, const TtpsPair&) = default;
};

// f^t maps sequence A to sequence B at frame t: p -> per_frame[t](init(p)).
struct TtpsMapping {
  std::vector<TpsMapping> per_frame;
  std::optional<Homography> prewarp;
  std::vector<TtpsPair> correspondence;
  int anchor_frame = 0;
  double energy = 0.0;
  double lambda = 0.0;

  Point2 apply(int t, Point2 p) const {
    return per_frame.at(static_cast<size_t>(t)).apply(prewarp ? prewarp->apply(p) : p);
  }
};

// sum_t ( sum_(i,j) m_ij |u_i^t - f^t(v_j^t)|^2 + lambda * bending(f^t) ),
// u from sequence B, v from sequence A.
inline std::vector<double> ttps_frame_energies(const TtpsMapping& mapping, std::span<const EdgePointSet> u_sets,
                                               std::span<const EdgePointSet> v_sets, double lambda) {
  const size_t frames = mapping.per_frame.size();
  if (u_sets.size() != frames || v_sets.size() != frames)
    throw Error(ErrorCode::kInvalidArgument, "edge set count differs from the number of frames");
  std::vector<double> out;
  out.reserve(frames);
  for (size_t t = 0; t < frames; ++t) {
    const auto& f = mapping.per_frame[t];
    double e = 0.0;
    for (const auto& pr : mapping.correspondence) {
      if (pr.i < 0 || pr.j < 0 || pr.i >= static_cast<int>(u_sets[t].size()) ||
          pr.j >= static_cast<int>(v_sets[t].size()))
        throw Error(ErrorCode::kInvalidArgument, "correspondence index outside the edge set");
      Point2 v = v_sets[t].points[static_cast<size_t>(pr.j)];
      if (mapping.prewarp) v = mapping.prewarp->apply(v);
      e += pr.weight * squared_norm(u_sets[t].points[static_cast<size_t>(pr.i)] - f.apply(v));
    }
    out.push_back(e + lambda * bending_energy(f));
  }
  return out;
}

inline double ttps_energy(const TtpsMapping& mapping, std::span<const EdgePointSet> u_sets,
                          std::span<const EdgePointSet> v_sets, double lambda) {
  double e = 0.0;
  for (double x : ttps_frame_energies(mapping, u_sets, v_sets, lambda)) e += x;
  return e;
}

// TPS-RPM settings for edge points under a homography warm start: a cold
// start and strong early regularization so annealing refines rather than
// replaces the initialization, and a final temperature near the sampling
// density because the two edge samples do not correspond point to point.
inline TpsRpmParams ttps_rpm_defaults() {
  TpsRpmParams p;
  p.t_init_factor = 0.002;
  p.anneal_rate = 0.85;
  p.t_final_factor = 0.3;
  p.lambda_init = 3000.0;
  p.sinkhorn_tolerance = 1e-3;
  p.newton_polish = false;
  p.record_trace = false;
  return p;
}

struct TtpsParams {
  TpsRpmParams rpm = ttps_rpm_defaults();
  EdgeParams edges;
  int min_pairs = 8;  // candidates with fewer hardened pairs are skipped
};

// Row-max pairs that beat twice the row's outlier mass, each source used
// once, greedily by descending weight.
inline std::vector<TtpsPair> harden_correspondences(const CorrespondenceMatrix& cm) {
  const long nu = cm.inner_rows(), nv = cm.inner_cols();
  std::vector<TtpsPair> cand;
  for (long i = 0; i < nu; ++i) {
    long best = 0;
    for (long j = 1; j < nv; ++j)
      if (cm.m(i, j) > cm.m(i, best)) best = j;
    if (nv > 0 && cm.m(i, best) > 2.0 * cm.m(i, nv))
      cand.push_back({static_cast<int>(i), static_cast<int>(best), cm.m(i, best)});
  }
  std::stable_sort(cand.begin(), cand.end(), [](const TtpsPair& a, const TtpsPair& b) { return a.weight > b.weight; });
  std::vector<char> used(static_cast<size_t>(nv), 0);
  std::vector<TtpsPair> out;
  for (const auto& c : cand) {
    if (used[static_cast<size_t>(c.j)]) continue;
    used[static_cast<size_t>(c.j)] = 1;
    out.push_back(c);
  }
  std::sort(out.begin(), out.end(), [](const TtpsPair& a, const TtpsPair& b) { return a.i < b.i; });
  return out;
}

struct TtpsCandidate {
  int anchor = 0;
  std::optional<TtpsMapping> mapping;  // empty when skipped
  std::vector<EdgePointSet> u_sets;    // sequence B, propagated from the anchor
  std::vector<EdgePointSet> v_sets;    // sequence A, propagated from the anchor
  std::string skip_reason;
};

namespace detail {

inline std::uint64_t edge_seed(std::uint64_t seed, int anchor, int side) {
  return seed * 0x9E3779B97F4A7C15ULL + static_cast<std::uint64_t>(anchor) * 2 + static_cast<std::uint64_t>(side);
}

inline TtpsCandidate ttps_candidate(const FrameSequence& seq_a, const FrameSequence& seq_b, const Homography& init,
                                    const TtpsParams& params, int anchor) {
  TtpsCandidate cand;
  cand.anchor = anchor;
  const int frames = seq_a.length();
  EdgePointSet u0, v0;
  EdgeParams ep = params.edges;
  try {
    ep.seed = edge_seed(params.edges.seed, anchor, 0);
    u0 = extract_fg_edges(seq_b.edges(anchor), seq_b.mask(anchor), ep);
    ep.seed = edge_seed(params.edges.seed, anchor, 1);
    v0 = extract_fg_edges(seq_a.edges(anchor), seq_a.mask(anchor), ep);
  } catch (const Error& e) {
    if (e.code() != ErrorCode::kEmptyEdgeSet) throw;
    cand.skip_reason = e.what();
    return cand;
  }

  TpsRpmResult rpm;
  try {
    rpm = tps_rpm(u0.points, v0.points, params.rpm, init);
  } catch (const Error& e) {
    cand.skip_reason = e.what();
    return cand;
  }
  auto pairs = harden_correspondences(rpm.correspondence);

  for (int t = 0; t < frames; ++t) {
    cand.u_sets.push_back(propagate_points(u0, seq_b, anchor, t));
    cand.v_sets.push_back(propagate_points(v0, seq_a, anchor, t));
  }
  std::vector<char> u_ok(u0.size(), 1), v_ok(v0.size(), 1);
  for (int t = 0; t < frames; ++t) {
    for (size_t i = 0; i < u0.size(); ++i) u_ok[i] &= cand.u_sets[static_cast<size_t>(t)].in_bounds[i];
    for (size_t j = 0; j < v0.size(); ++j) v_ok[j] &= cand.v_sets[static_cast<size_t>(t)].in_bounds[j];
  }
  std::erase_if(pairs, [&](const TtpsPair& p) {
    return !u_ok[static_cast<size_t>(p.i)] || !v_ok[static_cast<size_t>(p.j)];
  });
  if (static_cast<int>(pairs.size()) < std::max(params.min_pairs, 3)) {
    cand.skip_reason = "too few hardened correspondences";
    return cand;
  }

  TtpsMapping m;
  m.prewarp = init;
  m.anchor_frame = anchor;
  m.lambda = rpm.mapping.lambda_used;
  m.correspondence = pairs;
  std::vector<Point2> uu(pairs.size()), vv(pairs.size());
  std::vector<double> w(pairs.size());
  for (int t = 0; t < frames; ++t) {
    if (t == anchor) {
      m.per_frame.push_back(rpm.mapping);
      continue;
    }
    const auto& us = cand.u_sets[static_cast<size_t>(t)];
    const auto& vs = cand.v_sets[static_cast<size_t>(t)];
    for (size_t k = 0; k < pairs.size(); ++k) {
      uu[k] = us.points[static_cast<size_t>(pairs[k].i)];
      vv[k] = init.apply(vs.points[static_cast<size_t>(pairs[k].j)]);
      w[k] = pairs[k].weight;
    }
    try {
      m.per_frame.push_back(fit_tps(uu, vv, m.lambda, std::span<const double>(w)));
    } catch (const Error& e) {
      cand.skip_reason = e.what();
      return cand;
    }
  }
  m.energy = ttps_energy(m, cand.u_sets, cand.v_sets, m.lambda);
  cand.mapping = std::move(m);
  return cand;
}

}  // namespace detail

// One candidate per anchor frame: TPS-RPM at the anchor warm-started by
// `init` (A -> B), hardened correspondences propagated by flow in both
// sequences, per-frame weighted TPS refits with the final lambda.
inline std::vector<TtpsCandidate> ttps_candidates(const FrameSequence& seq_a, const FrameSequence& seq_b,
                                                  const Homography& init, const TtpsParams& params = {}) {
  if (seq_a.length() != seq_b.length()) throw Error(ErrorCode::kInvalidArgument, "sequences differ in length");
  params.rpm.validate();
  std::vector<TtpsCandidate> out;
  for (int anchor = 0; anchor < seq_a.length(); ++anchor)
    out.push_back(detail::ttps_candidate(seq_a, seq_b, init, params, anchor));
  return out;
}

// Lowest-energy candidate, ties to the lower anchor.
inline TtpsMapping fit_ttps(const FrameSequence& seq_a, const FrameSequence& seq_b, const Homography& init,
                            const TtpsParams& params = {}) {
  auto cands = ttps_candidates(seq_a, seq_b, init, params);
  TtpsCandidate* best = nullptr;
  for (auto& c : cands)
    if (c.mapping && (!best || c.mapping->energy < best->mapping->energy)) best = &c;
  if (!best) throw Error(ErrorCode::kAlignmentFailed, "every TTPS anchor candidate was skipped");
  return std::move(*best->mapping);
}

}  // namespace motionalign
