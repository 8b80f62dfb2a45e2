#include <gtest/gtest.h>

#include <random>

#include "motionalign/evaluation.hpp"
#include "support/eval_oracle.hpp"

namespace ma = motionalign;

namespace {

std::vector<ma::LandmarkSet> random_landmarks(std::mt19937_64& rng, int frames, double extent = 100.0) {
  std::uniform_real_distribution<double> pos(0.0, extent);
  std::vector<ma::LandmarkSet> out(static_cast<size_t>(frames));
  for (int t = 0; t < frames; ++t) {
    out[static_cast<size_t>(t)].frame_index = t;
    for (int id = 1; id <= ma::kLandmarkCount; ++id) out[static_cast<size_t>(t)].points[id] = {pos(rng), pos(rng)};
  }
  return out;
}

ma::FrameMapping identity() {
  return [](int, ma::Point2 p) { return p; };
}

}  // namespace

TEST(AlignmentError, IdentityIsPerfect) {
  std::mt19937_64 rng(1);
  const auto lm = random_landmarks(rng, 5);
  const auto e = ma::alignment_error(identity(), identity(), lm, lm);
  EXPECT_EQ(e.mean_error, 0.0);
  EXPECT_EQ(e.landmark_iou, 1.0);
  EXPECT_EQ(e.n_landmarks_used, 5 * 19);
  EXPECT_EQ(e.n_frames_used, 5);
}

TEST(AlignmentError, OneSidedDisplacementHalves) {
  std::mt19937_64 rng(2);
  const auto lm = random_landmarks(rng, 4);
  const ma::FrameMapping shifted = [&](int t, ma::Point2 p) {
    return p + ma::Point2{0.1 * lm[static_cast<size_t>(t)].scale(), 0.0};
  };
  EXPECT_NEAR(ma::alignment_error(shifted, identity(), lm, lm).mean_error, 0.05, 1e-15);
}

TEST(AlignmentError, MatchesScalarOracle) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 200; ++trial) {
    const auto in = eval_oracle::random_instance(rng, 1 + trial % 6);
    const auto oracle = eval_oracle::alignment_error(in);
    ma::Homography f, r;
    f.h = in.fwd;
    r.h = in.rev;
    const auto la = in.a.to_sets(), lb = in.b.to_sets();
    if (!oracle.evaluable) {
      EXPECT_THROW(ma::alignment_error(ma::as_frame_mapping(f), ma::as_frame_mapping(r), la, lb), ma::Error);
      continue;
    }
    const auto e = ma::alignment_error(ma::as_frame_mapping(f), ma::as_frame_mapping(r), la, lb);
    EXPECT_NEAR(e.mean_error, oracle.mean_error, 1e-9);
    EXPECT_NEAR(e.landmark_iou, oracle.iou, 1e-12);
  }
}

TEST(AlignmentError, SymmetricInSequenceOrder) {
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 50; ++trial) {
    const auto in = eval_oracle::random_instance(rng, 4);
    ma::Homography f, r;
    f.h = in.fwd;
    r.h = in.rev;
    const auto la = in.a.to_sets(), lb = in.b.to_sets();
    if (!eval_oracle::alignment_error(in).evaluable) continue;
    const auto ab = ma::alignment_error(ma::as_frame_mapping(f), ma::as_frame_mapping(r), la, lb);
    const auto ba = ma::alignment_error(ma::as_frame_mapping(r), ma::as_frame_mapping(f), lb, la);
    EXPECT_NEAR(ab.mean_error, ba.mean_error, 1e-12);
    EXPECT_NEAR(ab.landmark_iou, ba.landmark_iou, 1e-12);
  }
}

TEST(AlignmentError, InvariantToScalingOneSequence) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    const auto in = eval_oracle::random_instance(rng, 3);
    if (!eval_oracle::alignment_error(in).evaluable) continue;
    ma::Homography f, r;
    f.h = in.fwd;
    r.h = in.rev;
    const auto la = in.a.to_sets(), lb = in.b.to_sets();
    const double s = 0.3 + trial * 0.1;
    auto lb_scaled = lb;
    for (auto& set : lb_scaled)
      for (auto& [id, p] : set.points) p = s * p;
    const ma::FrameMapping f_scaled = [&](int t, ma::Point2 p) { return s * f.apply(p); };
    const ma::FrameMapping r_scaled = [&](int t, ma::Point2 p) { return r.apply((1.0 / s) * p); };
    EXPECT_NEAR(ma::alignment_error(f_scaled, r_scaled, la, lb_scaled).mean_error,
                ma::alignment_error(ma::as_frame_mapping(f), ma::as_frame_mapping(r), la, lb).mean_error, 1e-9);
  }
}

TEST(AlignmentError, SkipsSparseFramesButCountsTheirIou) {
  std::vector<ma::LandmarkSet> a(2), b(2);
  a[0].points = {{1, {0, 0}}, {2, {10, 0}}, {3, {0, 10}}};
  b[0].points = {{1, {0, 0}}, {2, {10, 0}}, {4, {5, 5}}};
  a[1].points = {{1, {0, 0}}, {2, {3, 3}}};
  b[1].points = {{1, {1, 0}}, {5, {3, 3}}};
  const auto e = ma::alignment_error(identity(), identity(), a, b);
  EXPECT_EQ(e.n_frames_used, 1);
  EXPECT_EQ(e.n_landmarks_used, 2);
  EXPECT_TRUE(std::isnan(e.per_frame[1]));
  EXPECT_DOUBLE_EQ(e.landmark_iou, 0.5 * (2.0 / 4.0 + 1.0 / 3.0));
  EXPECT_EQ(e.mean_error, 0.0);
}

TEST(AlignmentError, Errors) {
  std::vector<ma::LandmarkSet> a(2), b(2);
  a[0].points = {{1, {0, 0}}};
  b[0].points = {{1, {0, 0}}, {2, {1, 1}}};
  try {
    ma::alignment_error(identity(), identity(), a, b);
    FAIL();
  } catch (const ma::Error& e) {
    EXPECT_EQ(e.code(), ma::ErrorCode::kNotEvaluable);
  }
  b.pop_back();
  EXPECT_THROW(ma::alignment_error(identity(), identity(), a, b), ma::Error);
}

TEST(AlignmentError, TtpsMappingsApplyPerFrame) {
  std::mt19937_64 rng(6);
  const auto lm = random_landmarks(rng, 3);
  ma::TtpsMapping m;
  for (int t = 0; t < 3; ++t) {
    std::vector<ma::Point2> ctrl;
    for (const auto& [id, p] : lm[static_cast<size_t>(t)].points) ctrl.push_back(p);
    m.per_frame.push_back(ma::TpsMapping::identity(ctrl));
  }
  EXPECT_NEAR(ma::alignment_error(m, m, lm, lm).mean_error, 0.0, 1e-12);
}

TEST(IsCorrect, StrictThresholds) {
  ma::AlignmentError e;
  e.mean_error = 0.10;
  e.landmark_iou = 0.9;
  EXPECT_TRUE(ma::is_correct(e));
  e.landmark_iou = 0.4;
  EXPECT_FALSE(ma::is_correct(e));
  e.landmark_iou = 0.5;
  EXPECT_FALSE(ma::is_correct(e));
  e.landmark_iou = 0.9;
  e.mean_error = 0.18;
  EXPECT_FALSE(ma::is_correct(e));
}

TEST(IsCorrect, Monotone) {
  for (double err = 0.0; err < 0.4; err += 0.01)
    for (double iou = 0.0; iou <= 1.0; iou += 0.05) {
      ma::AlignmentError e;
      e.mean_error = err;
      e.landmark_iou = iou;
      if (!ma::is_correct(e)) continue;
      ma::AlignmentError better = e;
      better.mean_error = err * 0.5;
      better.landmark_iou = std::min(1.0, iou + 0.1);
      EXPECT_TRUE(ma::is_correct(better));
    }
}

TEST(AlignableOracle, PlantedIdenticalAndUnrelated) {
  std::mt19937_64 rng(7);
  const auto lm = random_landmarks(rng, 6);
  EXPECT_TRUE(ma::alignable_oracle(lm, lm).alignable);

  Eigen::Matrix3d h;
  h << 0.9, -0.2, 15, 0.25, 1.05, -8, 2e-4, -1e-4, 1;
  auto planted = lm;
  for (auto& set : planted)
    for (auto& [id, p] : set.points) p = ma::Homography::project(h, p);
  const auto res = ma::alignable_oracle(lm, planted);
  EXPECT_TRUE(res.alignable);
  EXPECT_TRUE(res.fit->h.isApprox(h, 1e-8));

  int not_alignable = 0;
  for (int seed = 0; seed < 100; ++seed) {
    std::mt19937_64 r(1000 + seed);
    const auto a = random_landmarks(r, 10), b = random_landmarks(r, 10);
    not_alignable += !ma::alignable_oracle(a, b).alignable;
  }
  EXPECT_GE(not_alignable, 99);
}

TEST(AlignableOracle, TooFewLandmarksIsFlagged) {
  std::vector<ma::LandmarkSet> a(1), b(1);
  a[0].points = {{1, {0, 0}}, {2, {5, 0}}, {3, {0, 5}}};
  b[0] = a[0];
  const auto res = ma::alignable_oracle(a, b);
  EXPECT_FALSE(res.alignable);
  EXPECT_FALSE(res.evaluable);
}

TEST(PrecisionRecall, AllCorrectAllReturned) {
  std::vector<ma::AlignmentOutcome> results(4);
  for (auto& r : results) {
    r.outlier_fraction = 0.2;
    r.error = ma::AlignmentError{0.05, {}, 0.9, 10, 1};
  }
  const std::vector<char> flags(4, 1);
  const std::vector<double> ops{1.0};
  const auto pr = ma::precision_recall(results, flags, ops);
  ASSERT_EQ(pr.size(), 1u);
  EXPECT_EQ(pr[0].precision, 1.0);
  EXPECT_EQ(pr[0].recall, 1.0);
  EXPECT_EQ(ma::average_precision(pr), 1.0);
}

TEST(PrecisionRecall, MatchesExhaustiveRecount) {
  std::mt19937_64 rng(8);
  for (int trial = 0; trial < 200; ++trial) {
    const auto in = eval_oracle::random_pr_instance(rng, 1 + trial % 40);
    const auto got = ma::precision_recall(in.results, in.alignable, in.operating_points);
    const auto want = eval_oracle::precision_recall(in);
    ASSERT_EQ(got.size(), want.size());
    for (size_t k = 0; k < got.size(); ++k) {
      EXPECT_EQ(got[k].n_returned, want[k].returned);
      EXPECT_EQ(got[k].n_correct, want[k].correct);
      EXPECT_EQ(got[k].n_alignable, want[k].alignable);
      EXPECT_NEAR(got[k].precision, want[k].precision, 1e-12);
      EXPECT_NEAR(got[k].recall, want[k].recall, 1e-12);
      EXPECT_EQ(got[k].recall_defined, want[k].alignable > 0);
    }
  }
}

TEST(PrecisionRecall, MonotoneInOperatingPoint) {
  std::mt19937_64 rng(9);
  const auto in = eval_oracle::random_pr_instance(rng, 200);
  std::vector<double> ops;
  for (int k = 0; k <= 20; ++k) ops.push_back(k / 20.0);
  const auto pr = ma::precision_recall(in.results, in.alignable, ops);
  for (size_t k = 1; k < pr.size(); ++k) {
    EXPECT_GE(pr[k].n_returned, pr[k - 1].n_returned);
    EXPECT_GE(pr[k].n_correct, pr[k - 1].n_correct);
  }
}

TEST(PrecisionRecall, EmptyAlignableSetIsFlagged) {
  std::vector<ma::AlignmentOutcome> results(2);
  results[0].error = ma::AlignmentError{0.05, {}, 0.9, 10, 1};
  const std::vector<char> flags(2, 0);
  const std::vector<double> ops{0.5};
  const auto pr = ma::precision_recall(results, flags, ops);
  EXPECT_FALSE(pr[0].recall_defined);
  EXPECT_EQ(pr[0].recall, 0.0);
  EXPECT_EQ(pr[0].precision, 0.5);
  EXPECT_THROW(ma::precision_recall(results, std::vector<char>(3, 0), ops), ma::Error);
}

TEST(AveragePrecision, Trapezoid) {
  std::vector<ma::PrPoint> curve(3);
  curve[0].operating_point = 0.5, curve[0].recall = 0.6, curve[0].precision = 0.5;
  curve[1].operating_point = 0.1, curve[1].recall = 0.2, curve[1].precision = 1.0;
  curve[2].operating_point = 0.3, curve[2].recall = 0.4, curve[2].precision = 0.75;
  // 0.2*1 + 0.2*(1+0.75)/2 + 0.2*(0.75+0.5)/2
  EXPECT_NEAR(ma::average_precision(curve), 0.2 + 0.175 + 0.125, 1e-15);
  EXPECT_EQ(ma::average_precision({}), 0.0);
}
