#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "motionalign/synthetic.hpp"
#include "motionalign/ttps.hpp"

namespace ma = motionalign;

namespace {

ma::ForegroundMask mask_of(const ma::Raster<std::uint8_t>& g, int frame = 0) { return ma::ForegroundMask(frame, g); }

ma::FlowField flow_field(int w, int h, const std::function<ma::Point2(ma::Point2)>& f) {
  ma::FlowField field{ma::Raster<ma::Vec2f>(w, h)};
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c) {
      const ma::Point2 d = f(ma::to_cell_center(r, c));
      field.grid.at(r, c) = {static_cast<float>(d.x), static_cast<float>(d.y)};
    }
  return field;
}

// Flow fields hold floats; the oracle uses the same rounding.
ma::FlowField flow_field_exact(int w, int h, const std::function<ma::Point2(ma::Point2)>& f) { return flow_field(w, h, f); }

ma::EdgePointSet points_set(std::vector<ma::Point2> pts) {
  ma::EdgePointSet s;
  s.points = std::move(pts);
  s.strengths.assign(s.points.size(), 1.0);
  s.origin_frame.assign(s.points.size(), 0);
  s.in_bounds.assign(s.points.size(), 1);
  return s;
}

// Similarity between the placements of two synthetic shots, ignoring shape warps.
ma::Homography planted_similarity(const ma::ShotTruth& a, const ma::ShotTruth& b, int frame) {
  const auto matrix = [frame](const ma::ShotTruth& s) {
    const ma::Point2 o = s.place({0, 0}, frame), ex = s.place({1, 0}, frame), ey = s.place({0, 1}, frame);
    Eigen::Matrix3d m;
    m << ex.x - o.x, ey.x - o.x, o.x, ex.y - o.y, ey.y - o.y, o.y, 0, 0, 1;
    return m;
  };
  ma::Homography h;
  h.h = matrix(b) * matrix(a).inverse();
  return h;
}

double mean_landmark_error(const ma::FrameSequence& a, const ma::FrameSequence& b,
                           const std::function<ma::Point2(int, ma::Point2)>& map) {
  double e = 0.0;
  int n = 0;
  for (int t = 0; t < a.length(); ++t)
    for (const auto& [id, p] : a.landmarks(t).points) {
      if (!b.landmarks(t).visible(id)) continue;
      e += ma::distance(map(t, p), b.landmarks(t).points.at(id));
      ++n;
    }
  return e / n;
}

}  // namespace

TEST(DistanceTransform, NeighbourAndMaskCells) {
  ma::Raster<std::uint8_t> g(9, 7, 0);
  g.at(3, 4) = 1;
  g.at(3, 5) = 1;
  const auto dt = ma::distance_transform(mask_of(g));
  EXPECT_EQ(dt.at(3, 4), 0.0);
  EXPECT_EQ(dt.at(2, 4), 1.0);
  EXPECT_EQ(dt.at(3, 3), 1.0);
  EXPECT_DOUBLE_EQ(dt.at(1, 2), std::sqrt(8.0));
  EXPECT_DOUBLE_EQ(dt.at(6, 8), std::sqrt(9.0 + 9.0));
}

TEST(DistanceTransform, MatchesBruteForceOnSparseMasks) {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    const int w = 20 + trial, h = 31 - trial / 2;
    std::bernoulli_distribution on(0.02 + 0.01 * (trial % 5));
    ma::Raster<std::uint8_t> g(w, h, 0);
    std::vector<std::pair<int, int>> cells;
    for (int r = 0; r < h; ++r)
      for (int c = 0; c < w; ++c)
        if (on(rng)) {
          g.at(r, c) = 1;
          cells.emplace_back(r, c);
        }
    if (cells.size() < 2) {
      g.at(0, 0) = g.at(h - 1, w - 1) = 1;
      cells = {{0, 0}, {h - 1, w - 1}};
    }
    const auto dt = ma::distance_transform(mask_of(g));
    for (int r = 0; r < h; ++r)
      for (int c = 0; c < w; ++c) {
        double best = 1e300;
        for (auto [mr, mc] : cells) best = std::min(best, double((r - mr) * (r - mr) + (c - mc) * (c - mc)));
        ASSERT_NEAR(dt.at(r, c), std::sqrt(best), 1e-9);
      }
  }
}

TEST(DistanceTransform, EmptyMaskThrows) {
  try {
    ma::distance_transform(ma::ForegroundMask{});
    FAIL();
  } catch (const ma::Error& e) {
    EXPECT_EQ(e.code(), ma::ErrorCode::kEmptyMask);
  }
}

namespace {

// 40x40 block mask at (20..59, 20..59) in a 100x100 raster: diagonal 40 sqrt 2.
ma::ForegroundMask block_mask() {
  ma::Raster<std::uint8_t> g(100, 100, 0);
  for (int r = 20; r < 60; ++r)
    for (int c = 20; c < 60; ++c) g.at(r, c) = 1;
  return mask_of(g);
}

}  // namespace

TEST(ExtractFgEdges, ScoresDecayWithDistance) {
  const auto mask = block_mask();
  const double sigma = 0.05 * mask.bbox().diagonal();
  ma::EdgeMap edges{ma::Raster<float>(100, 100, 0.0f)};
  edges.grid.at(30, 30) = 1.0f;                                          // on the mask
  const int far_col = 59 + static_cast<int>(std::lround(5.0 * sigma));  // dt = 5 sigma (rounded to a cell)
  edges.grid.at(40, far_col) = 1.0f;
  edges.grid.at(40, 60) = 0.5f;  // dt = 1
  const auto set = ma::extract_fg_edges(edges, mask);
  ASSERT_EQ(set.size(), 2u);
  EXPECT_EQ(set.points[0], ma::to_cell_center(30, 30));
  EXPECT_DOUBLE_EQ(set.strengths[0], 1.0);
  EXPECT_EQ(set.points[1], ma::to_cell_center(40, 60));
  EXPECT_NEAR(set.strengths[1], 0.5 * std::exp(-1.0 / sigma), 1e-15);
  EXPECT_LT(std::exp(-(far_col - 59) / sigma), 0.2);
}

TEST(ExtractFgEdges, CapIsExactAndSeeded) {
  const auto mask = block_mask();
  ma::EdgeMap edges{ma::Raster<float>(100, 100, 0.0f)};
  int surviving = 0;
  for (int r = 0; r < 100 && surviving < 3000; ++r)
    for (int c = 0; c < 100 && surviving < 3000; ++c)
      if (r >= 18 && r < 62 && c >= 18 && c < 62) {
        edges.grid.at(r, c) = 1.0f;
        ++surviving;
      }
  ma::EdgeParams p;
  p.max_points = 3000;
  ASSERT_GE(ma::extract_fg_edges(edges, mask, p).size(), 1000u);
  p.max_points = 1000;
  p.seed = 5;
  const auto a = ma::extract_fg_edges(edges, mask, p);
  const auto b = ma::extract_fg_edges(edges, mask, p);
  EXPECT_EQ(a.size(), 1000u);
  EXPECT_EQ(a.points, b.points);
  p.seed = 6;
  EXPECT_NE(ma::extract_fg_edges(edges, mask, p).points, a.points);
}

TEST(ExtractFgEdges, MonotoneInThreshold) {
  ma::SyntheticSpec spec;
  spec.n_shots = 1;
  spec.frames_per_shot = 10;
  spec.clutter_segments = 30;
  spec.mask_error_rate = 1.0;
  const auto corpus = ma::generate_synthetic(spec);
  const auto& shot = *corpus.shots[0];
  ma::EdgeParams p;
  std::vector<ma::Point2> previous;
  for (double thr : {0.05, 0.1, 0.2, 0.4, 0.8}) {
    p.prune_threshold = thr;
    const auto set = ma::extract_fg_edges(shot.edge_maps[3], shot.masks[3], p);
    if (!previous.empty()) {
      EXPECT_LE(set.size(), previous.size());
      for (const auto& q : set.points) EXPECT_NE(std::find(previous.begin(), previous.end(), q), previous.end());
    }
    previous = set.points;
  }
}

TEST(ExtractFgEdges, Errors) {
  const auto mask = block_mask();
  ma::EdgeMap far{ma::Raster<float>(100, 100, 0.0f)};
  far.grid.at(95, 95) = 1.0f;
  try {
    ma::extract_fg_edges(far, mask);
    FAIL();
  } catch (const ma::Error& e) {
    EXPECT_EQ(e.code(), ma::ErrorCode::kEmptyEdgeSet);
  }
  EXPECT_THROW(ma::extract_fg_edges(ma::EdgeMap{ma::Raster<float>(50, 100, 0.0f)}, mask), ma::Error);
}

TEST(PropagatePoints, ZeroAndConstantFlow) {
  const auto pts = points_set({{10.2, 20.7}, {55.0, 3.5}, {1.0, 1.0}});
  std::vector<ma::FlowField> zero(3, flow_field(64, 48, [](ma::Point2) { return ma::Point2{}; }));
  EXPECT_EQ(ma::propagate_points(pts, zero, {}, 0, 3).points, pts.points);
  std::vector<ma::FlowField> constant(3, flow_field(64, 48, [](ma::Point2) { return ma::Point2{2, -1}; }));
  auto moved = ma::propagate_points(points_set({{10.2, 20.7}, {30.0, 40.5}}), constant, {}, 0, 3);
  EXPECT_EQ(moved.frame_index, 3);
  EXPECT_NEAR(moved.points[0].x, 16.2, 1e-12);
  EXPECT_NEAR(moved.points[0].y, 17.7, 1e-12);
  EXPECT_NEAR(moved.points[1].x, 36.0, 1e-12);
  EXPECT_NEAR(moved.points[1].y, 37.5, 1e-12);
  EXPECT_EQ(moved.in_bounds, (std::vector<char>{1, 1}));
  // Backward with no backward fields uses the negated forward flow.
  const auto back = ma::propagate_points(moved, constant, {}, 3, 0);
  EXPECT_NEAR(back.points[0].x, 10.2, 1e-12);
  EXPECT_NEAR(back.points[1].y, 40.5, 1e-12);
  EXPECT_THROW(ma::propagate_points(pts, constant, {}, 0, 4), ma::Error);
}

TEST(PropagatePoints, RotationalFlowMatchesAnalyticRotation) {
  const ma::Point2 c{40, 30};
  const double theta = 0.04;
  const auto rot = [&](ma::Point2 p, double a) {
    const ma::Point2 d = p - c;
    return c + ma::Point2{std::cos(a) * d.x - std::sin(a) * d.y, std::sin(a) * d.x + std::cos(a) * d.y};
  };
  std::vector<ma::FlowField> flows(5, flow_field_exact(80, 60, [&](ma::Point2 p) { return rot(p, theta) - p; }));
  std::vector<ma::Point2> start;
  for (int k = 0; k < 24; ++k)
    start.push_back(c + (8.0 + k % 4 * 4.0) * ma::Point2{std::cos(0.26 * k), std::sin(0.26 * k)});
  const auto out = ma::propagate_points(points_set(start), flows, {}, 0, 5);
  for (size_t i = 0; i < start.size(); ++i) EXPECT_LT(ma::distance(out.points[i], rot(start[i], 5 * theta)), 0.2);
}

TEST(PropagatePoints, ReverseWithNegatedFlowReturnsToStart) {
  const auto smooth = [](ma::Point2 p) {
    return ma::Point2{1.2 + 0.3 * std::sin(p.y / 30.0), -0.8 + 0.3 * std::cos(p.x / 30.0)};
  };
  std::vector<ma::FlowField> fwd(4, flow_field(120, 90, smooth));
  std::vector<ma::FlowField> neg(4, flow_field(120, 90, [&](ma::Point2 p) { return -1.0 * smooth(p); }));
  std::vector<ma::Point2> start;
  for (int k = 0; k < 30; ++k) start.push_back({20.0 + 2.7 * k, 30.0 + 1.3 * (k % 9)});
  const auto there = ma::propagate_points(points_set(start), fwd, {}, 0, 4);
  // backward[t] carries t+1 -> t
  const auto back = ma::propagate_points(there, fwd, neg, 4, 0);
  for (size_t i = 0; i < start.size(); ++i) EXPECT_LT(ma::distance(back.points[i], start[i]), 0.1);
}

TEST(PropagatePoints, LeavingTheFrameIsFlagged) {
  std::vector<ma::FlowField> flows(2, flow_field(20, 20, [](ma::Point2) { return ma::Point2{3, 0}; }));
  const auto out = ma::propagate_points(points_set({{17, 5}, {5, 5}}), flows, {}, 0, 2);
  EXPECT_EQ(out.in_bounds, (std::vector<char>{0, 1}));
  EXPECT_EQ(out.points[0].x, 20.0);
}

TEST(HardenCorrespondences, RowMaxOutlierRuleAndUniqueSources) {
  ma::CorrespondenceMatrix cm;
  cm.m = Eigen::MatrixXd::Zero(5, 4);
  // rows: targets 0..3, cols: sources 0..2, last row/col outliers
  cm.m.row(0) << 0.7, 0.1, 0.0, 0.2;    // kept (0,0)
  cm.m.row(1) << 0.6, 0.1, 0.0, 0.3;    // row max (1,0), beats 2x0.3? no (0.6 == 0.6)
  cm.m.row(2) << 0.05, 0.8, 0.1, 0.05;  // kept (2,1)
  cm.m.row(3) << 0.0, 0.75, 0.2, 0.05;  // row max source 1 again, weaker than row 2
  const auto pairs = ma::harden_correspondences(cm);
  ASSERT_EQ(pairs.size(), 2u);
  EXPECT_EQ(pairs[0], (ma::TtpsPair{0, 0, 0.7}));
  EXPECT_EQ(pairs[1], (ma::TtpsPair{2, 1, 0.8}));
}

namespace {

struct SmallInstance {
  ma::TtpsMapping mapping;
  std::vector<ma::EdgePointSet> u, v;
};

SmallInstance random_instance(std::uint64_t seed, int frames) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> coord(0, 50), small(-2, 2);
  SmallInstance s;
  const int nu = 9, nv = 7;
  for (int t = 0; t < frames; ++t) {
    std::vector<ma::Point2> up, vp;
    for (int i = 0; i < nu; ++i) up.push_back({coord(rng), coord(rng)});
    for (int j = 0; j < nv; ++j) vp.push_back({coord(rng), coord(rng)});
    s.u.push_back(points_set(up));
    s.v.push_back(points_set(vp));
    std::vector<ma::Point2> targets;
    for (const auto& p : vp) targets.push_back(p + ma::Point2{small(rng), small(rng)});
    s.mapping.per_frame.push_back(ma::fit_tps(targets, vp, 0.5));
  }
  for (int k = 0; k < 6; ++k) s.mapping.correspondence.push_back({(k * 4) % nu, (k * 3) % nv, 0.1 + 0.15 * k});
  return s;
}

}  // namespace

TEST(TtpsEnergy, ZeroForIdenticalSequencesUnderIdentity) {
  std::vector<ma::EdgePointSet> sets;
  ma::TtpsMapping m;
  for (int t = 0; t < 4; ++t) {
    sets.push_back(points_set({{1, 2}, {5, 9}, {7, 3}, {2.0 + t, 8}}));
    m.per_frame.push_back(ma::TpsMapping::identity(sets.back().points));
  }
  for (int k = 0; k < 4; ++k) m.correspondence.push_back({k, k, 1.0});
  EXPECT_EQ(ma::ttps_energy(m, sets, sets, 2.0), 0.0);
}

TEST(TtpsEnergy, SingleFrameEqualsRpmEnergy) {
  const auto s = random_instance(3, 1);
  const auto& f = s.mapping.per_frame[0];
  // Same weights placed in a soft-assign matrix and scored by the TPS-RPM energy.
  ma::CorrespondenceMatrix cm;
  cm.m = Eigen::MatrixXd::Zero(10, 8);
  for (const auto& p : s.mapping.correspondence) cm.m(p.i, p.j) = p.weight;
  const Eigen::MatrixXd cost = ma::detail::squared_distances(s.u[0].points, ma::apply_tps(f, s.v[0].points));
  const double lambda = 0.7;
  EXPECT_NEAR(ma::ttps_energy(s.mapping, s.u, s.v, lambda),
              ma::detail::rpm_energy(cm, cost, lambda, ma::bending_energy(f)), 1e-9);
}

TEST(TtpsEnergy, MatchesResummationAndDecomposes) {
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    auto s = random_instance(seed, 4);
    if (seed % 2) {
      s.mapping.prewarp = ma::Homography{};
      s.mapping.prewarp->h << 1.05, 0.02, 1.0, -0.01, 0.97, -2.0, 1e-4, 0, 1;
    }
    const double lambda = 0.3 * double(seed);
    double oracle = 0.0;
    const auto per_frame = ma::ttps_frame_energies(s.mapping, s.u, s.v, lambda);
    for (size_t t = 0; t < 4; ++t) {
      const auto& f = s.mapping.per_frame[t];
      double e = 0.0;
      for (const auto& p : s.mapping.correspondence) {
        ma::Point2 v = s.v[t].points[static_cast<size_t>(p.j)];
        if (s.mapping.prewarp) v = ma::Homography::project(s.mapping.prewarp->h, v);
        const ma::Point2 d = s.u[t].points[static_cast<size_t>(p.i)] - f.apply(v);
        e += p.weight * (d.x * d.x + d.y * d.y);
      }
      const Eigen::MatrixXd k = ma::tps_kernel_matrix(f.control_points);
      double bend = 0.0;
      for (long a = 0; a < k.rows(); ++a)
        for (long b = 0; b < k.cols(); ++b) bend += k(a, b) * (f.warp(a, 0) * f.warp(b, 0) + f.warp(a, 1) * f.warp(b, 1));
      e += lambda * bend;
      EXPECT_NEAR(per_frame[t], e, 1e-9 * std::max(1.0, e));
      EXPECT_GE(per_frame[t], 0.0);
      oracle += e;
    }
    EXPECT_NEAR(ma::ttps_energy(s.mapping, s.u, s.v, lambda), oracle, 1e-9 * oracle);
  }
}

TEST(TtpsEnergy, IndexMismatchThrows) {
  auto s = random_instance(4, 2);
  s.mapping.correspondence.push_back({9, 0, 1.0});
  EXPECT_THROW(ma::ttps_energy(s.mapping, s.u, s.v, 1.0), ma::Error);
  auto t = random_instance(4, 2);
  t.u.pop_back();
  EXPECT_THROW(ma::ttps_energy(t.mapping, t.u, t.v, 1.0), ma::Error);
}

namespace {

ma::SyntheticCorpus small_corpus(std::uint64_t seed, double warp, int frames = 10) {
  ma::SyntheticSpec spec;
  spec.n_shots = 2;
  spec.frames_per_shot = frames;
  spec.width = 96;
  spec.height = 72;
  spec.warp_magnitude = warp;
  spec.random_phase = false;
  spec.seed = seed;
  return ma::generate_synthetic(spec);
}

}  // namespace

TEST(FitTtps, SelfAlignmentIsNearIdentity) {
  const auto corpus = small_corpus(21, 0.0);
  const ma::FrameSequence seq(corpus.shots[0], 0, 10);
  ma::TtpsParams params;
  params.edges.max_points = 1000;  // no subsampling: both sides see the same points
  const auto m = ma::fit_ttps(seq, seq, ma::Homography{}, params);
  ASSERT_EQ(m.per_frame.size(), 10u);
  for (int t = 0; t < 10; ++t) {
    const auto box = seq.mask(t).bbox();
    double total = 0.0;
    int n = 0;
    for (double x = box.min.x; x <= box.max.x; x += 4.0)
      for (double y = box.min.y; y <= box.max.y; y += 4.0) {
        total += ma::distance(m.apply(t, {x, y}), {x, y});
        ++n;
      }
    EXPECT_LT(total / n, 0.5) << "frame " << t;
  }
}

TEST(FitTtps, SingleFrameReducesToTpsRpm) {
  const auto corpus = small_corpus(22, 0.06);
  const ma::FrameSequence a(corpus.shots[0], 4, 1), b(corpus.shots[1], 4, 1);
  const auto init = planted_similarity(corpus.truth[0], corpus.truth[1], 4);
  const ma::TtpsParams params;
  const auto m = ma::fit_ttps(a, b, init, params);
  ma::EdgeParams ep = params.edges;
  ep.seed = ma::detail::edge_seed(params.edges.seed, 0, 0);
  const auto u = ma::extract_fg_edges(b.edges(0), b.mask(0), ep);
  ep.seed = ma::detail::edge_seed(params.edges.seed, 0, 1);
  const auto v = ma::extract_fg_edges(a.edges(0), a.mask(0), ep);
  const auto rpm = ma::tps_rpm(u.points, v.points, params.rpm, init);
  ASSERT_EQ(m.per_frame.size(), 1u);
  EXPECT_EQ(m.per_frame[0].affine, rpm.mapping.affine);
  EXPECT_EQ(m.per_frame[0].warp, rpm.mapping.warp);
  EXPECT_EQ(m.correspondence, ma::harden_correspondences(rpm.correspondence));
}

TEST(FitTtps, ReturnsMinimumEnergyCandidateWithSharedCorrespondence) {
  const auto corpus = small_corpus(23, 0.08);
  const ma::FrameSequence a(corpus.shots[0], 0, 10), b(corpus.shots[1], 0, 10);
  const auto init = planted_similarity(corpus.truth[0], corpus.truth[1], 0);
  ma::TtpsParams params;
  params.edges.max_points = 120;
  const auto cands = ma::ttps_candidates(a, b, init, params);
  ASSERT_EQ(cands.size(), 10u);
  double best = std::numeric_limits<double>::infinity();
  int best_anchor = -1;
  for (const auto& c : cands) {
    ASSERT_TRUE(c.mapping.has_value()) << c.skip_reason;
    EXPECT_EQ(c.mapping->per_frame.size(), 10u);
    const double e = ma::ttps_energy(*c.mapping, c.u_sets, c.v_sets, c.mapping->lambda);
    EXPECT_NEAR(e, c.mapping->energy, 1e-9 * e);
    // One pairing for all frames: every index is valid and in bounds in every frame.
    for (const auto& p : c.mapping->correspondence)
      for (size_t t = 0; t < 10; ++t) {
        EXPECT_TRUE(c.u_sets[t].in_bounds[static_cast<size_t>(p.i)]);
        EXPECT_TRUE(c.v_sets[t].in_bounds[static_cast<size_t>(p.j)]);
      }
    if (e < best) {
      best = e;
      best_anchor = c.anchor;
    }
  }
  const auto m = ma::fit_ttps(a, b, init, params);
  EXPECT_EQ(m.anchor_frame, best_anchor);
  EXPECT_EQ(m.correspondence, cands[static_cast<size_t>(best_anchor)].mapping->correspondence);
}

TEST(FitTtps, ImprovesOnPlantedSimilarityUnderSmoothWarps) {
  int wins = 0;
  const int trials = 10;
  for (int seed = 1; seed <= trials; ++seed) {
    const auto corpus = small_corpus(100 + seed, 0.08);
    const ma::FrameSequence a(corpus.shots[0], 0, 10), b(corpus.shots[1], 0, 10);
    const auto init = planted_similarity(corpus.truth[0], corpus.truth[1], 0);
    const auto m = ma::fit_ttps(a, b, init);
    const double e_init = mean_landmark_error(a, b, [&](int, ma::Point2 p) { return init.apply(p); });
    const double e_ttps = mean_landmark_error(a, b, [&](int t, ma::Point2 p) { return m.apply(t, p); });
    wins += e_ttps < e_init;
  }
  EXPECT_GE(wins, 8);
}

TEST(FitTtps, AllCandidatesSkippedFails) {
  auto corpus = small_corpus(24, 0.0);
  auto blank = std::make_shared<ma::ShotData>(*corpus.shots[1]);
  for (auto& e : blank->edge_maps) e.grid = ma::Raster<float>(e.grid.width(), e.grid.height(), 0.0f);
  const ma::FrameSequence a(corpus.shots[0], 0, 10), b(blank, 0, 10);
  try {
    ma::fit_ttps(a, b, ma::Homography{});
    FAIL();
  } catch (const ma::Error& e) {
    EXPECT_EQ(e.code(), ma::ErrorCode::kAlignmentFailed);
  }
}
