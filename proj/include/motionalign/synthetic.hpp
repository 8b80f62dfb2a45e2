#pragma once

// Synthetic articulated-quadruped corpus with planted ground truth. A
// skeleton of capsule bones is posed by forward kinematics under a periodic
// motion program, deformed by a per-shot smooth shape warp and placed in
// the image by a per-shot similarity. Masks, edge maps, flows, tracked
// trajectories and the 19 landmarks all derive from the same material-point
// map, so flows and landmarks are exact.

#include <Eigen/Dense>

#include <array>
#include <cmath>
#include <cstdint>
#include <memory>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include "motionalign/core.hpp"

namespace motionalign {

inline const std::array<const char*, kLandmarkCount>& landmark_names() {
  static const std::array<const char*, kLandmarkCount> names{
      "nose",          "left_eye",        "right_eye",       "forehead",       "throat",
      "withers",       "mid_back",        "tail_base",       "tail_tip",       "chest",
      "belly",         "front_left_knee", "front_left_paw",  "front_right_knee", "front_right_paw",
      "back_left_knee", "back_left_paw",  "back_right_knee", "back_right_paw"};
  return names;
}

struct MotionProgram {
  double period = 16.0;         // frames per gait cycle
  double leg_swing = 0.35;      // upper-leg amplitude, radians
  double knee_bend = 0.30;      // lower-leg amplitude, radians
  double head_swing = 0.12;
  double tail_swing = 0.35;
  double bob = 0.03;            // vertical body bob, template units
  std::array<double, 4> leg_phase{0.0, 0.5, 0.75, 0.25};  // FL, FR, BL, BR, in cycles
  Point2 drift{0.008, 0.0};     // image drift, template units per frame
};

// Standard programs: a walk, a trot-like fast gait and a slow head-swinging
// stroll. Further indices cycle with perturbed parameters.
inline MotionProgram motion_program(int index) {
  MotionProgram p;
  switch (index % 3) {
    case 0: break;
    case 1:
      p.period = 9.0;
      p.leg_swing = 0.45;
      p.knee_bend = 0.45;
      p.leg_phase = {0.0, 0.5, 0.5, 0.0};
      p.drift = {0.016, 0.0};
      p.bob = 0.06;
      break;
    case 2:
      p.period = 28.0;
      p.leg_swing = 0.18;
      p.knee_bend = 0.12;
      p.head_swing = 0.35;
      p.tail_swing = 0.1;
      p.drift = {-0.005, 0.003};
      break;
  }
  const int round = index / 3;
  p.period *= 1.0 + 0.17 * round;
  p.drift.x *= 1.0 - 0.3 * round;
  return p;
}

// x -> x + m * (sin(k1.x + c1), sin(k2.x + c2)) in template units.
struct ShapeWarp {
  double magnitude = 0.0;
  Eigen::Vector2d k1{0, 0}, k2{0, 0};
  double c1 = 0.0, c2 = 0.0;

  Point2 apply(Point2 x) const {
    if (magnitude == 0.0) return x;
    return {x.x + magnitude * std::sin(k1.x() * x.x + k1.y() * x.y + c1),
            x.y + magnitude * std::sin(k2.x() * x.x + k2.y() * x.y + c2)};
  }

  // Newton on apply(x) = y; the warp is a contraction perturbation.
  Point2 invert(Point2 y) const {
    if (magnitude == 0.0) return y;
    Point2 x = y;
    for (int it = 0; it < 30; ++it) {
      const Point2 r = apply(x) - y;
      if (squared_norm(r) < 1e-30) break;
      const double a1 = magnitude * std::cos(k1.x() * x.x + k1.y() * x.y + c1);
      const double a2 = magnitude * std::cos(k2.x() * x.x + k2.y() * x.y + c2);
      Eigen::Matrix2d j;
      j << 1.0 + a1 * k1.x(), a1 * k1.y(), a2 * k2.x(), 1.0 + a2 * k2.y();
      const Eigen::Vector2d dx = j.partialPivLu().solve(Eigen::Vector2d(r.x, r.y));
      x -= Point2{dx.x(), dx.y()};
    }
    return x;
  }
};

// Template skeleton. Bones are listed front to back in depth.
struct Bone {
  Point2 a, b;
  double radius = 0.0;
  int group = 0;  // kinematic group
};

struct QuadrupedTemplate {
  // Kinematic groups: 0 body, 1 head+neck, 2 tail, then upper/lower leg
  // groups 3 + 2*leg and 4 + 2*leg for legs FL, FR, BL, BR.
  static constexpr int kGroups = 11;
  std::vector<Bone> bones;
  std::array<Point2, 4> shoulder, knee;
  Point2 neck_pivot{0.5, -0.2};
  Point2 tail_pivot{-0.8, -0.25};
  std::array<std::pair<int, Point2>, kLandmarkCount> landmarks;  // (group, template point)

  static const QuadrupedTemplate& instance() {
    static const QuadrupedTemplate t = [] {
      QuadrupedTemplate q;
      const std::array<double, 4> x0{0.42, 0.52, -0.5, -0.4};
      for (int l = 0; l < 4; ++l) {
        q.shoulder[static_cast<size_t>(l)] = {x0[static_cast<size_t>(l)], 0.0};
        q.knee[static_cast<size_t>(l)] = {x0[static_cast<size_t>(l)] + 0.03, 0.38};
      }
      const auto leg = [&](int l) {
        const Point2 s = q.shoulder[static_cast<size_t>(l)], k = q.knee[static_cast<size_t>(l)];
        q.bones.push_back({s, k, 0.085, 3 + 2 * l});
        q.bones.push_back({k, {s.x, 0.78}, 0.065, 4 + 2 * l});
      };
      leg(0);
      leg(2);
      q.bones.push_back({{0.95, -0.45}, {1.3, -0.35}, 0.15, 1});
      q.bones.push_back({{0.5, -0.2}, {0.95, -0.45}, 0.13, 1});
      q.bones.push_back({{-0.55, -0.15}, {0.5, -0.15}, 0.28, 0});
      q.bones.push_back({{-0.8, -0.25}, {-1.35, 0.05}, 0.045, 2});
      leg(1);
      leg(3);
      q.landmarks = {{{1, {1.3, -0.35}},   {1, {1.12, -0.52}},  {1, {1.16, -0.5}},   {1, {1.0, -0.57}},
                      {1, {0.7, -0.18}},   {0, {0.45, -0.4}},   {0, {0.0, -0.42}},   {0, {-0.8, -0.3}},
                      {2, {-1.35, 0.05}},  {0, {0.72, 0.02}},   {0, {0.0, 0.12}},    {3, {0.45, 0.38}},
                      {4, {0.42, 0.78}},   {5, {0.55, 0.38}},   {6, {0.52, 0.78}},   {7, {-0.47, 0.38}},
                      {8, {-0.5, 0.78}},   {9, {-0.37, 0.38}},  {10, {-0.4, 0.78}}}};
      return q;
    }();
    return t;
  }
};

struct Rigid2 {
  double angle = 0.0;
  Point2 t;
  double c = 1.0, s = 0.0;

  Rigid2() = default;
  Rigid2(double angle_, Point2 t_) : angle(angle_), t(t_), c(std::cos(angle_)), s(std::sin(angle_)) {}

  Point2 apply(Point2 p) const { return {c * p.x - s * p.y + t.x, s * p.x + c * p.y + t.y}; }
  Point2 invert(Point2 q) const {
    const Point2 d = q - t;
    return {c * d.x + s * d.y, -s * d.x + c * d.y};
  }
  // this after other
  Rigid2 compose(const Rigid2& other) const { return {angle + other.angle, apply(other.t)}; }
  static Rigid2 rotation_about(Point2 pivot, double angle) {
    Rigid2 r{angle, {}};
    return {angle, pivot - r.apply(pivot)};
  }
};

// Everything needed to recompute a shot's geometry.
struct ShotTruth {
  std::string shot_id;
  int program = 0;
  double phase_offset = 0.0;  // frames
  double scale = 40.0;        // pixels per template unit
  double rotation = 0.0;
  Point2 origin;              // image position of the template origin at frame 0
  ShapeWarp warp;
  std::vector<int> dropped_leg;  // per frame, -1 or the leg missing from the mask

  std::array<Rigid2, QuadrupedTemplate::kGroups> pose(int frame) const {
    const auto& q = QuadrupedTemplate::instance();
    const MotionProgram mp = motion_program(program);
    const double w = 2.0 * std::numbers::pi / mp.period;
    const double ph = w * (frame + phase_offset);
    std::array<Rigid2, QuadrupedTemplate::kGroups> g;
    g[0] = {0.0, {0.0, mp.bob * std::sin(2.0 * ph)}};
    g[1] = g[0].compose(Rigid2::rotation_about(q.neck_pivot, mp.head_swing * std::sin(ph + 1.0)));
    g[2] = g[0].compose(Rigid2::rotation_about(q.tail_pivot, mp.tail_swing * std::sin(ph + 2.0)));
    for (int l = 0; l < 4; ++l) {
      const double lp = ph + 2.0 * std::numbers::pi * mp.leg_phase[static_cast<size_t>(l)];
      const Rigid2 upper = g[0].compose(Rigid2::rotation_about(q.shoulder[static_cast<size_t>(l)], mp.leg_swing * std::sin(lp)));
      const double bend = mp.knee_bend * (0.5 - 0.5 * std::cos(lp));
      g[static_cast<size_t>(3 + 2 * l)] = upper;
      g[static_cast<size_t>(4 + 2 * l)] = upper.compose(Rigid2::rotation_about(q.knee[static_cast<size_t>(l)], -bend));
    }
    return g;
  }

  // Template space after posing and shape warp -> image.
  Point2 place(Point2 warped, int frame) const {
    const MotionProgram mp = motion_program(program);
    const double c = std::cos(rotation), s = std::sin(rotation);
    const Point2 o = origin + scale * double(frame) * mp.drift;
    return {o.x + scale * (c * warped.x - s * warped.y), o.y + scale * (s * warped.x + c * warped.y)};
  }
  Point2 unplace(Point2 p, int frame) const {
    const MotionProgram mp = motion_program(program);
    const double c = std::cos(rotation), s = std::sin(rotation);
    const Point2 d = (p - (origin + scale * double(frame) * mp.drift)) / scale;
    return {c * d.x + s * d.y, -s * d.x + c * d.y};
  }

  Point2 image_of(int group, Point2 template_point, int frame) const {
    return place(warp.apply(pose(frame)[static_cast<size_t>(group)].apply(template_point)), frame);
  }

  // Material point under an image position: the frontmost bone whose
  // capsule contains it, else the body group. Returns (group, template point, inside).
  struct Material {
    int group = 0;
    Point2 point;
    bool inside = false;
    int bone = -1;
  };
  Material material_at(Point2 p, int frame, const std::array<Rigid2, QuadrupedTemplate::kGroups>& g) const {
    const auto& q = QuadrupedTemplate::instance();
    const Point2 posed = warp.invert(unplace(p, frame));
    for (size_t b = 0; b < q.bones.size(); ++b) {
      const Bone& bone = q.bones[b];
      const Point2 x = g[static_cast<size_t>(bone.group)].invert(posed);
      const Point2 ab = bone.b - bone.a;
      const double s = std::clamp(dot(x - bone.a, ab) / squared_norm(ab), 0.0, 1.0);
      if (squared_norm(x - (bone.a + s * ab)) <= bone.radius * bone.radius)
        return {bone.group, x, true, static_cast<int>(b)};
    }
    return {0, g[0].invert(posed), false, -1};
  }
};

struct SyntheticSpec {
  int n_shots = 6;
  int frames_per_shot = 40;
  int width = 160;
  int height = 120;
  int n_programs = 1;               // shots cycle through programs 0..n_programs-1
  double object_size = 0.26;        // pixels per template unit, as a share of width
  double scale_jitter = 0.12;       // relative
  double rotation_jitter = 0.08;    // radians
  double warp_magnitude = 0.0;      // per-shot shape warp, template units
  int trajectories_per_frame = 12;  // started at each frame with a full 10-frame future
  double trajectory_noise = 0.0;    // pixels
  double trajectory_outlier_rate = 0.0;
  double mask_error_rate = 0.0;     // share of frames with one leg missing from the mask
  int mask_dilation = 1;            // cells
  int clutter_segments = 0;         // static background edge segments per shot
  bool random_phase = true;
  std::uint64_t seed = 1;
};

struct SyntheticCorpus {
  SyntheticSpec spec;
  std::vector<std::shared_ptr<ShotData>> shots;
  std::vector<ShotTruth> truth;
  std::vector<Interval> intervals;  // one per shot, all in cluster 0

  Corpus corpus() const { return {{shots.begin(), shots.end()}, intervals}; }
};

// Ground-truth map of image point p in (shot a, frame ta) to (shot b, frame tb),
// following the material point under p.
inline Point2 truth_map(const ShotTruth& a, int ta, const ShotTruth& b, int tb, Point2 p) {
  const auto m = a.material_at(p, ta, a.pose(ta));
  return b.image_of(m.group, m.point, tb);
}

namespace detail {

inline Raster<std::uint8_t> dilate(const Raster<std::uint8_t>& g, int radius) {
  Raster<std::uint8_t> out = g;
  for (int step = 0; step < radius; ++step) {
    const Raster<std::uint8_t> src = out;
    for (int r = 0; r < g.height(); ++r)
      for (int c = 0; c < g.width(); ++c) {
        if (src.at(r, c)) continue;
        if ((r > 0 && src.at(r - 1, c)) || (c > 0 && src.at(r, c - 1)) || (r + 1 < g.height() && src.at(r + 1, c)) ||
            (c + 1 < g.width() && src.at(r, c + 1)))
          out.at(r, c) = 1;
      }
  }
  return out;
}

struct RenderedFrame {
  Raster<std::uint8_t> silhouette;
  Raster<std::int8_t> owner_bone;  // -1 background
  std::vector<ShotTruth::Material> material;  // per cell, row-major
};

inline RenderedFrame render_frame(const ShotTruth& truth, int frame, int width, int height) {
  RenderedFrame out{Raster<std::uint8_t>(width, height, 0), Raster<std::int8_t>(width, height, -1), {}};
  out.material.resize(static_cast<size_t>(width) * height);
  const auto g = truth.pose(frame);
  for (int r = 0; r < height; ++r)
    for (int c = 0; c < width; ++c) {
      const auto m = truth.material_at(to_cell_center(r, c), frame, g);
      out.material[static_cast<size_t>(r) * width + c] = m;
      if (m.inside) {
        out.silhouette.at(r, c) = 1;
        out.owner_bone.at(r, c) = static_cast<std::int8_t>(m.bone);
      }
    }
  return out;
}

inline FlowField material_flow(const ShotTruth& truth, const RenderedFrame& from, int to_frame, int width, int height) {
  FlowField f{Raster<Vec2f>(width, height)};
  const auto g = truth.pose(to_frame);
  for (int r = 0; r < height; ++r)
    for (int c = 0; c < width; ++c) {
      const auto& m = from.material[static_cast<size_t>(r) * width + c];
      const Point2 q = truth.place(truth.warp.apply(g[static_cast<size_t>(m.group)].apply(m.point)), to_frame);
      const Point2 d = q - to_cell_center(r, c);
      f.grid.at(r, c) = {static_cast<float>(d.x), static_cast<float>(d.y)};
    }
  return f;
}

}  // namespace detail

// Landmarks visible at a frame: inside the image and not covered by a bone
// in front of their own group.
inline LandmarkSet render_landmarks(const ShotTruth& truth, int frame, int width, int height) {
  const auto& q = QuadrupedTemplate::instance();
  const auto g = truth.pose(frame);
  LandmarkSet set;
  set.frame_index = frame;
  for (int id = 1; id <= kLandmarkCount; ++id) {
    const auto [group, pt] = q.landmarks[static_cast<size_t>(id - 1)];
    const Point2 p = truth.image_of(group, pt, frame);
    if (p.x < 0 || p.y < 0 || p.x > width || p.y > height) continue;
    const auto m = truth.material_at(p, frame, g);
    if (m.inside && m.group != group) {
      // Covered when the frontmost bone here belongs to another group and
      // the landmark's own capsule lies behind it.
      int own_first = -1;
      for (size_t b = 0; b < q.bones.size(); ++b)
        if (q.bones[b].group == group) {
          own_first = static_cast<int>(b);
          break;
        }
      if (m.bone < own_first) continue;
    }
    set.points[id] = p;
  }
  return set;
}

inline SyntheticCorpus generate_synthetic(const SyntheticSpec& spec) {
  if (spec.n_shots < 1 || spec.frames_per_shot < kTrajectoryLength || spec.width < 16 || spec.height < 16 ||
      spec.n_programs < 1)
    throw Error(ErrorCode::kInvalidArgument, "invalid synthetic spec");
  if (spec.warp_magnitude < 0.0 || spec.warp_magnitude > 0.2)
    throw Error(ErrorCode::kInvalidArgument, "warp magnitude must be in [0, 0.2]");
  SyntheticCorpus corpus;
  corpus.spec = spec;
  std::mt19937_64 rng(spec.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const auto uniform = [&](double lo, double hi) { return lo + (hi - lo) * unit(rng); };
  std::normal_distribution<double> noise(0.0, 1.0);

  for (int s = 0; s < spec.n_shots; ++s) {
    ShotTruth tr;
    tr.shot_id = "shot" + std::to_string(s);
    tr.program = s % spec.n_programs;
    const MotionProgram mp = motion_program(tr.program);
    tr.phase_offset = spec.random_phase ? uniform(0.0, mp.period) : 0.0;
    tr.scale = spec.object_size * spec.width * (1.0 + uniform(-spec.scale_jitter, spec.scale_jitter));
    tr.rotation = uniform(-spec.rotation_jitter, spec.rotation_jitter);
    // Center the drifting object over the shot.
    const Point2 travel = tr.scale * double(spec.frames_per_shot - 1) * mp.drift;
    tr.origin = Point2{spec.width / 2.0, spec.height / 2.0} - 0.5 * travel +
                Point2{uniform(-0.03, 0.03) * spec.width, uniform(-0.03, 0.03) * spec.height};
    if (spec.warp_magnitude > 0.0) {
      const double a1 = uniform(0, 2 * std::numbers::pi), a2 = uniform(0, 2 * std::numbers::pi);
      const double f1 = uniform(1.5, 2.5), f2 = uniform(1.5, 2.5);
      tr.warp = {spec.warp_magnitude, {f1 * std::cos(a1), f1 * std::sin(a1)}, {f2 * std::cos(a2), f2 * std::sin(a2)},
                 uniform(0, 2 * std::numbers::pi), uniform(0, 2 * std::numbers::pi)};
    }
    tr.dropped_leg.assign(static_cast<size_t>(spec.frames_per_shot), -1);
    for (auto& d : tr.dropped_leg)
      if (unit(rng) < spec.mask_error_rate) d = static_cast<int>(uniform(0, 4)) % 4;

    auto shot = std::make_shared<ShotData>();
    shot->shot_id = tr.shot_id;
    shot->frame_count = spec.frames_per_shot;
    shot->width = spec.width;
    shot->height = spec.height;

    std::vector<std::pair<Point2, Point2>> clutter;
    for (int k = 0; k < spec.clutter_segments; ++k) {
      const Point2 a{uniform(0, spec.width), uniform(0, spec.height)};
      const double ang = uniform(0, std::numbers::pi), len = uniform(5, 25);
      clutter.push_back({a, a + len * Point2{std::cos(ang), std::sin(ang)}});
    }

    std::vector<detail::RenderedFrame> frames;
    frames.reserve(static_cast<size_t>(spec.frames_per_shot));
    for (int t = 0; t < spec.frames_per_shot; ++t) frames.push_back(detail::render_frame(tr, t, spec.width, spec.height));

    const auto& q = QuadrupedTemplate::instance();
    for (int t = 0; t < spec.frames_per_shot; ++t) {
      const auto& fr = frames[static_cast<size_t>(t)];
      Raster<std::uint8_t> m = fr.silhouette;
      const int drop = tr.dropped_leg[static_cast<size_t>(t)];
      if (drop >= 0)
        for (int r = 0; r < spec.height; ++r)
          for (int c = 0; c < spec.width; ++c) {
            const int b = fr.owner_bone.at(r, c);
            if (b >= 0) {
              const int grp = q.bones[static_cast<size_t>(b)].group;
              if (grp == 3 + 2 * drop || grp == 4 + 2 * drop) m.at(r, c) = 0;
            }
          }
      shot->masks.emplace_back(t, detail::dilate(m, spec.mask_dilation));

      EdgeMap e{Raster<float>(spec.width, spec.height, 0.0f)};
      const auto& sil = fr.silhouette;
      for (int r = 0; r < spec.height; ++r)
        for (int c = 0; c < spec.width; ++c) {
          if (!sil.at(r, c)) continue;
          const bool boundary = r == 0 || c == 0 || r + 1 == spec.height || c + 1 == spec.width || !sil.at(r - 1, c) ||
                                !sil.at(r + 1, c) || !sil.at(r, c - 1) || !sil.at(r, c + 1);
          if (boundary) e.grid.at(r, c) = 1.0f;
        }
      for (const auto& [a, b] : clutter) {
        const int steps = static_cast<int>(std::ceil(distance(a, b) * 2.0));
        for (int k = 0; k <= steps; ++k) {
          const Point2 p = a + (double(k) / steps) * (b - a);
          const int r = static_cast<int>(p.y), c = static_cast<int>(p.x);
          if (e.grid.contains(r, c)) e.grid.at(r, c) = std::max(e.grid.at(r, c), 0.7f);
        }
      }
      shot->edge_maps.push_back(std::move(e));
      shot->landmarks.push_back(render_landmarks(tr, t, spec.width, spec.height));
    }
    for (int t = 0; t + 1 < spec.frames_per_shot; ++t) {
      shot->flows.push_back(detail::material_flow(tr, frames[static_cast<size_t>(t)], t + 1, spec.width, spec.height));
      shot->backward_flows.push_back(
          detail::material_flow(tr, frames[static_cast<size_t>(t + 1)], t, spec.width, spec.height));
    }

    // Trajectories: material points tracked exactly, plus noise and outliers.
    int next_id = 0;
    for (int t0 = 0; t0 + kTrajectoryLength <= spec.frames_per_shot; ++t0) {
      const auto& fr = frames[static_cast<size_t>(t0)];
      std::vector<int> cells;
      for (int i = 0; i < spec.width * spec.height; ++i)
        if (fr.silhouette.data()[static_cast<size_t>(i)]) cells.push_back(i);
      if (cells.empty()) continue;
      for (int k = 0; k < spec.trajectories_per_frame; ++k) {
        std::vector<Point2> pts;
        if (unit(rng) < spec.trajectory_outlier_rate) {
          Point2 p{uniform(0, spec.width), uniform(0, spec.height)};
          const Point2 v{uniform(-2, 2), uniform(-2, 2)};
          for (int j = 0; j < kTrajectoryLength; ++j) {
            pts.push_back(p);
            p += v + Point2{0.5 * noise(rng), 0.5 * noise(rng)};
          }
        } else {
          const int cell = cells[static_cast<size_t>(uniform(0, double(cells.size()))) % cells.size()];
          const Point2 p0 = to_cell_center(cell / spec.width, cell % spec.width) +
                            Point2{uniform(-0.5, 0.5), uniform(-0.5, 0.5)};
          const auto m = tr.material_at(p0, t0, tr.pose(t0));
          for (int j = 0; j < kTrajectoryLength; ++j) {
            Point2 p = tr.image_of(m.group, m.point, t0 + j);
            if (spec.trajectory_noise > 0.0)
              p += spec.trajectory_noise * Point2{noise(rng), noise(rng)};
            pts.push_back(p);
          }
        }
        shot->trajectories.emplace_back(next_id++, t0, std::move(pts));
      }
    }

    corpus.intervals.push_back({tr.shot_id, 0, std::min(spec.frames_per_shot, 200), 0});
    corpus.shots.push_back(std::move(shot));
    corpus.truth.push_back(std::move(tr));
  }
  return corpus;
}

}  // namespace motionalign
