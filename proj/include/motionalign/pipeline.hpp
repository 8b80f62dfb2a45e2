#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "motionalign/core.hpp"
#include "motionalign/descriptors.hpp"
#include "motionalign/evaluation.hpp"
#include "motionalign/homography.hpp"
#include "motionalign/ttps.hpp"

namespace motionalign {

enum class Method { kFg, kIm, kTm, kTmFg, kTtpsFg };

inline const char* method_name(Method m) {
  switch (m) {
    case Method::kFg: return "FG";
    case Method::kIm: return "IM";
    case Method::kTm: return "TM";
    case Method::kTmFg: return "TM+FG";
    case Method::kTtpsFg: return "TTPS+FG";
  }
  return "?";
}

inline Method parse_method(const std::string& name) {
  for (Method m : {Method::kFg, Method::kIm, Method::kTm, Method::kTmFg, Method::kTtpsFg})
    if (name == method_name(m)) return m;
  throw Error(ErrorCode::kInvalidArgument, "unknown method '" + name + "' (FG, IM, TM, TM+FG, TTPS+FG)");
}

struct PipelineConfig {
  int t_len = 10;
  int top_k_cmps = 10;
  Method method = Method::kTmFg;
  int codebook_size = 256;
  RansacParams ransac;
  TtpsParams ttps;
  EvalConfig eval;
  std::vector<double> operating_points{0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0};
  std::uint64_t seed = 0;
  int workers = 1;
  int fallback_interval_length = 100;
  int fallback_interval_stride = 50;

  void validate() const {
    if (t_len < 1 || top_k_cmps < 0 || codebook_size < 1 || workers < 1)
      throw Error(ErrorCode::kInvalidArgument, "t_len, codebook_size and workers must be positive");
    if (!(eval.error_threshold > 0.0) || !(eval.iou_threshold > 0.0))
      throw Error(ErrorCode::kInvalidArgument, "evaluation thresholds must be positive");
    if (fallback_interval_length < 10 || fallback_interval_length > 200 || fallback_interval_stride < 1)
      throw Error(ErrorCode::kInvalidArgument, "fallback intervals must be 10-200 frames with a positive stride");
    ttps.rpm.validate();
  }
};

// splitmix64 finalizer, used to derive per-item seeds.
inline std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
  std::uint64_t z = a + 0x9E3779B97F4A7C15ull * (b + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

// Runs fn(0..n-1) on up to `workers` threads. fn must only write to its own slot.
template <class Fn>
void parallel_for(size_t n, int workers, Fn&& fn) {
  const size_t threads = std::min(n, static_cast<size_t>(std::max(workers, 1)));
  if (threads <= 1) {
    for (size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<size_t> next{0};
  std::vector<std::thread> pool;
  for (size_t w = 0; w < threads; ++w)
    pool.emplace_back([&] {
      for (size_t i = next++; i < n; i = next++) fn(i);
    });
  for (auto& th : pool) th.join();
}

// Fixed-stride intervals for shots without ingested ones, all in cluster 0.
// Shots shorter than the interval length become one interval.
inline std::vector<Interval> fallback_intervals(const Corpus& corpus, const PipelineConfig& cfg) {
  std::vector<Interval> out;
  for (const auto& s : corpus.shots) {
    const int n = s->frame_count;
    if (n < cfg.fallback_interval_length) {
      if (n >= 10) out.push_back({s->shot_id, 0, n, 0});
      continue;
    }
    for (int start = 0; start + cfg.fallback_interval_length <= n; start += cfg.fallback_interval_stride)
      out.push_back({s->shot_id, start, cfg.fallback_interval_length, 0});
  }
  return out;
}

// Modified TS descriptors of one shot's trajectories by start frame; static
// trajectories are dropped.
inline std::vector<std::vector<TsDescriptor>> shot_descriptors(const ShotData& shot) {
  std::vector<std::vector<TsDescriptor>> out(static_cast<size_t>(shot.frame_count));
  for (const auto& tr : shot.trajectories) {
    if (tr.start_frame < 0 || tr.start_frame >= shot.frame_count) continue;
    try {
      out[static_cast<size_t>(tr.start_frame)].push_back(
          compute_modified_ts(tr, shot.masks.at(static_cast<size_t>(tr.start_frame))));
    } catch (const Error& e) {
      if (e.code() != ErrorCode::kStaticTrajectory) throw;
    }
  }
  return out;
}

struct MiningResult {
  Codebook codebook;
  std::vector<IntervalBows> bows;  // index-aligned with the intervals mined
  std::vector<Cmp> cmps;
};

// Codebook over every descriptor of the corpus, per-frame BoWs per interval,
// and the top-K CMPs of every interval pair from distinct shots in the same
// cluster, in interval-pair order.
inline MiningResult mine_cmps(const Corpus& corpus, const PipelineConfig& cfg) {
  cfg.validate();
  const std::vector<Interval> intervals = corpus.intervals.empty() ? fallback_intervals(corpus, cfg) : corpus.intervals;
  std::map<std::string, std::vector<std::vector<TsDescriptor>>> by_shot;
  std::vector<TsDescriptor> all;
  for (const auto& s : corpus.shots) {
    auto d = shot_descriptors(*s);
    for (const auto& frame : d) all.insert(all.end(), frame.begin(), frame.end());
    by_shot.emplace(s->shot_id, std::move(d));
  }
  std::vector<DescriptorVector> distinct;
  for (const auto& d : all) distinct.push_back(d.vector());
  std::sort(distinct.begin(), distinct.end(), [](const DescriptorVector& a, const DescriptorVector& b) {
    return std::lexicographical_compare(a.begin(), a.end(), b.begin(), b.end());
  });
  distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());
  if (distinct.empty()) throw Error(ErrorCode::kInsufficientData, "corpus has no moving trajectories");

  MiningResult out;
  out.codebook = build_codebook(all, std::min(cfg.codebook_size, static_cast<int>(distinct.size())), cfg.seed);
  for (const auto& iv : intervals) {
    const auto& shot = *corpus.shot(iv.shot_id);
    if (!iv.valid() || iv.start_frame + iv.length > shot.frame_count)
      throw Error(ErrorCode::kSchemaViolation, "interval outside shot " + iv.shot_id);
    IntervalBows ib{iv, {}};
    const auto& desc = by_shot.at(iv.shot_id);
    for (int f = 0; f < iv.length; ++f)
      ib.frames.push_back(frame_bow(desc[static_cast<size_t>(iv.start_frame + f)], out.codebook, iv.start_frame + f));
    out.bows.push_back(std::move(ib));
  }
  for (size_t p = 0; p < out.bows.size(); ++p)
    for (size_t q = p + 1; q < out.bows.size(); ++q) {
      const auto& a = out.bows[p].interval;
      const auto& b = out.bows[q].interval;
      if (a.cluster_id != b.cluster_id || a.shot_id == b.shot_id) continue;
      if (a.length < cfg.t_len || b.length < cfg.t_len) continue;
      auto cmps = extract_cmps(out.bows[p], out.bows[q], cfg.t_len, cfg.top_k_cmps);
      out.cmps.insert(out.cmps.end(), cmps.begin(), cmps.end());
    }
  return out;
}

struct CmpSequences {
  FrameSequence a, b;
};

inline CmpSequences cmp_sequences(const Corpus& corpus, const Cmp& cmp) {
  return {FrameSequence(corpus.shot(cmp.seq_a.shot_id), cmp.seq_a.start_frame, cmp.t_len),
          FrameSequence(corpus.shot(cmp.seq_b.shot_id), cmp.seq_b.start_frame, cmp.t_len)};
}

// Mapping from sequence A to sequence B. TTPS alignments carry both
// directions and keep their homography initialization.
struct Alignment {
  Method method = Method::kTmFg;
  Homography homography;
  std::optional<TtpsMapping> forward, reverse;
};

inline Homography align_homography(const FrameSequence& a, const FrameSequence& b, Method method,
                                   const RansacParams& params) {
  const auto masks_a = window_masks(a), masks_b = window_masks(b);
  const auto tau = frame_thresholds(a, b, params.tau_scale, a.length() + kTrajectoryLength - 1);
  if (method == Method::kFg) return fit_fg_only(masks_a, masks_b, std::span<const double>(tau).first(masks_a.size()));
  const auto matches = match_trajectories(a, b);
  if (method == Method::kIm) {
    std::vector<PointCorrespondence> corrs;
    for (const auto& m : matches) {
      const auto c = m.correspondences();
      corrs.insert(corrs.end(), c.begin(), c.end());
    }
    return ransac_im(corrs, tau, params);
  }
  if (method == Method::kTm) return ransac_tm(matches, nullptr, tau, params);
  const FgMatches fg = build_fg_matches(masks_a, masks_b);
  return ransac_tm(matches, &fg, tau, params);
}

inline Alignment align_cmp(const Corpus& corpus, const Cmp& cmp, const PipelineConfig& cfg, std::uint64_t item_seed) {
  const auto seqs = cmp_sequences(corpus, cmp);
  RansacParams rp = cfg.ransac;
  rp.seed = mix_seed(cfg.ransac.seed, item_seed);
  Alignment out;
  out.method = cfg.method;
  const Method init_method = cfg.method == Method::kTtpsFg ? Method::kTmFg : cfg.method;
  out.homography = align_homography(seqs.a, seqs.b, init_method, rp);
  if (cfg.method == Method::kTtpsFg) {
    TtpsParams tp = cfg.ttps;
    tp.edges.seed = mix_seed(cfg.ttps.edges.seed, item_seed);
    out.forward = fit_ttps(seqs.a, seqs.b, out.homography, tp);
    out.reverse = fit_ttps(seqs.b, seqs.a, out.homography.inverse(), tp);
  }
  return out;
}

struct Evaluation {
  bool evaluated = false;
  std::string status = "no_landmarks";
  std::optional<AlignmentError> error;
  bool correct = false;
  bool alignable = false;
  bool alignable_evaluable = false;
};

inline Evaluation evaluate_alignment(const Corpus& corpus, const Cmp& cmp, const Alignment* alignment,
                                     const EvalConfig& cfg) {
  Evaluation out;
  const auto seqs = cmp_sequences(corpus, cmp);
  if (!seqs.a.has_landmarks() || !seqs.b.has_landmarks()) return out;
  const auto la = seqs.a.landmark_window(), lb = seqs.b.landmark_window();
  const auto oracle = alignable_oracle(la, lb, cfg);
  out.alignable = oracle.alignable;
  out.alignable_evaluable = oracle.evaluable;
  if (!alignment) {
    out.status = "not_aligned";
    return out;
  }
  try {
    out.error = alignment->forward ? alignment_error(*alignment->forward, *alignment->reverse, la, lb)
                                   : alignment_error(alignment->homography, la, lb);
  } catch (const Error& e) {
    if (e.code() != ErrorCode::kNotEvaluable) throw;
    out.status = error_code_name(e.code());
    return out;
  }
  out.evaluated = true;
  out.status = "ok";
  out.correct = is_correct(*out.error, cfg);
  return out;
}

// One line of the record file.
struct AlignmentRecord {
  int cmp_id = 0;
  Cmp cmp;
  std::string method;
  std::string status = "ok";  // "ok" or the error code that stopped the alignment
  std::string message;
  double outlier_fraction = 1.0;
  bool fg_fallback = false;
  std::optional<double> energy;  // TTPS: forward Eq. 6 energy of the chosen candidate
  std::optional<int> anchor_frame;
  Evaluation eval;

  bool aligned() const { return status == "ok"; }
};

struct CmpResult {
  AlignmentRecord record;
  std::optional<Alignment> alignment;
};

inline AlignmentRecord make_record(int cmp_id, const Cmp& cmp, const PipelineConfig& cfg) {
  AlignmentRecord r;
  r.cmp_id = cmp_id;
  r.cmp = cmp;
  r.method = method_name(cfg.method);
  return r;
}

inline void fill_alignment_fields(AlignmentRecord& r, const Alignment& a) {
  r.outlier_fraction = a.homography.outlier_fraction;
  r.fg_fallback = a.homography.fg_fallback;
  if (a.forward) {
    r.energy = a.forward->energy;
    r.anchor_frame = a.forward->anchor_frame;
  }
}

// Aligns one CMP. Failures are recorded, never thrown.
inline CmpResult align_one(const Corpus& corpus, int cmp_id, const Cmp& cmp, const PipelineConfig& cfg) {
  CmpResult out;
  out.record = make_record(cmp_id, cmp, cfg);
  out.record.eval.status = "not_evaluated";
  auto& r = out.record;
  try {
    out.alignment = align_cmp(corpus, cmp, cfg, static_cast<std::uint64_t>(cmp_id));
    fill_alignment_fields(r, *out.alignment);
  } catch (const Error& e) {
    r.status = error_code_name(e.code());
    r.message = e.what();
  } catch (const std::exception& e) {
    r.status = "internal_error";
    r.message = e.what();
  }
  return out;
}

inline void evaluate_one(const Corpus& corpus, CmpResult& res, const EvalConfig& cfg) {
  auto& r = res.record;
  try {
    r.eval = evaluate_alignment(corpus, r.cmp, res.alignment ? &*res.alignment : nullptr, cfg);
  } catch (const std::exception& e) {
    r.eval = {};
    r.eval.status = "evaluation_error";
    if (r.message.empty()) r.message = e.what();
  }
}

inline CmpResult process_cmp(const Corpus& corpus, int cmp_id, const Cmp& cmp, const PipelineConfig& cfg) {
  CmpResult out = align_one(corpus, cmp_id, cmp, cfg);
  evaluate_one(corpus, out, cfg.eval);
  return out;
}

struct PipelineResult {
  std::vector<Cmp> cmps;
  std::vector<AlignmentRecord> records;
  std::vector<std::optional<Alignment>> alignments;
};

// Aligns every CMP on the worker pool; evaluation is optional so the
// stages can run separately.
inline PipelineResult align_all(const Corpus& corpus, const std::vector<Cmp>& cmps, const PipelineConfig& cfg,
                                bool keep_alignments = false, bool evaluate = true) {
  PipelineResult out;
  out.cmps = cmps;
  out.records.resize(cmps.size());
  if (keep_alignments) out.alignments.resize(cmps.size());
  parallel_for(cmps.size(), cfg.workers, [&](size_t i) {
    auto res = align_one(corpus, static_cast<int>(i), cmps[i], cfg);
    if (evaluate) evaluate_one(corpus, res, cfg.eval);
    out.records[i] = std::move(res.record);
    if (keep_alignments) out.alignments[i] = std::move(res.alignment);
  });
  return out;
}

inline PipelineResult run_pipeline(const Corpus& corpus, const PipelineConfig& cfg, bool keep_alignments = false) {
  return align_all(corpus, mine_cmps(corpus, cfg).cmps, cfg, keep_alignments);
}

}  // namespace motionalign
