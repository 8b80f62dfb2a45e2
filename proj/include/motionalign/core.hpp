#pragma once

// Shared geometric and corpus types.
//
// Raster convention: cell (r, c) covers [c, c+1) x [r, r+1) and has its
// center at (c + 0.5, r + 0.5). Every point/raster conversion in the
// library goes through to_cell_center / to_index_space below.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace motionalign {

enum class ErrorCode {
  kEmptyMask,
  kDegenerateBox,
  kInvalidArgument,
  kStaticTrajectory,
  kInsufficientData,
  kInsufficientCorrespondences,
  kDegenerateSample,
  kNoConsensus,
  kInsufficientPoints,
  kDegenerateControlPoints,
  kEmptyEdgeSet,
  kAlignmentFailed,
  kNotEvaluable,
  kMissingFile,
  kSchemaViolation,
  kInconsistentFrameCount,
  kIoError,
};

inline const char* error_code_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::kEmptyMask: return "empty_mask";
    case ErrorCode::kDegenerateBox: return "degenerate_box";
    case ErrorCode::kInvalidArgument: return "invalid_argument";
    case ErrorCode::kStaticTrajectory: return "static_trajectory";
    case ErrorCode::kInsufficientData: return "insufficient_data";
    case ErrorCode::kInsufficientCorrespondences: return "insufficient_correspondences";
    case ErrorCode::kDegenerateSample: return "degenerate_sample";
    case ErrorCode::kNoConsensus: return "no_consensus";
    case ErrorCode::kInsufficientPoints: return "insufficient_points";
    case ErrorCode::kDegenerateControlPoints: return "degenerate_control_points";
    case ErrorCode::kEmptyEdgeSet: return "empty_edge_set";
    case ErrorCode::kAlignmentFailed: return "alignment_failed";
    case ErrorCode::kNotEvaluable: return "not_evaluable";
    case ErrorCode::kMissingFile: return "missing_file";
    case ErrorCode::kSchemaViolation: return "schema_violation";
    case ErrorCode::kInconsistentFrameCount: return "inconsistent_frame_count";
    case ErrorCode::kIoError: return "io_error";
  }
  return "unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(error_code_name(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

// Number of frames in a trajectory.
inline constexpr int kTrajectoryLength = 10;

struct Point2 {
  double x = 0.0;
  double y = 0.0;

  bool finite() const { return std::isfinite(x) && std::isfinite(y); }

  friend Point2 operator+(Point2 a, Point2 b) { return {a.x + b.x, a.y + b.y}; }
  friend Point2 operator-(Point2 a, Point2 b) { return {a.x - b.x, a.y - b.y}; }
  friend Point2 operator*(double s, Point2 a) { return {s * a.x, s * a.y}; }
  friend Point2 operator*(Point2 a, double s) { return {s * a.x, s * a.y}; }
  friend Point2 operator/(Point2 a, double s) { return {a.x / s, a.y / s}; }
  Point2& operator+=(Point2 o) { x += o.x; y += o.y; return *this; }
  Point2& operator-=(Point2 o) { x -= o.x; y -= o.y; return *this; }
  friend bool operator==(const Point2&, const Point2&) = default;
};

inline double norm(Point2 p) { return std::hypot(p.x, p.y); }
inline double squared_norm(Point2 p) { return p.x * p.x + p.y * p.y; }
inline double distance(Point2 a, Point2 b) { return norm(a - b); }
inline double dot(Point2 a, Point2 b) { return a.x * b.x + a.y * b.y; }
inline double cross(Point2 a, Point2 b) { return a.x * b.y - a.y * b.x; }

inline Point2 to_cell_center(int row, int col) { return {col + 0.5, row + 0.5}; }

// Continuous index coordinates (col, row) whose integer values hit cell centers.
inline Point2 to_index_space(Point2 p) { return {p.x - 0.5, p.y - 0.5}; }

struct BBox {
  Point2 min;
  Point2 max;

  double width() const { return max.x - min.x; }
  double height() const { return max.y - min.y; }
  double diagonal() const { return distance(min, max); }
  bool degenerate() const { return !(diagonal() > 0.0); }
  bool valid() const { return min.x <= max.x && min.y <= max.y; }

  // Corners in the fixed order min-min, min-max, max-min, max-max (x then y).
  std::array<Point2, 4> corners() const {
    return {Point2{min.x, min.y}, Point2{min.x, max.y}, Point2{max.x, min.y}, Point2{max.x, max.y}};
  }

  friend bool operator==(const BBox&, const BBox&) = default;
};

inline double bbox_diagonal(const BBox& b) { return b.diagonal(); }

template <typename T>
class Raster {
 public:
  Raster() = default;
  Raster(int width, int height, T fill = T{})
      : width_(width), height_(height), data_(static_cast<size_t>(width) * height, fill) {
    if (width < 0 || height < 0) throw Error(ErrorCode::kInvalidArgument, "negative raster size");
  }
  Raster(int width, int height, std::vector<T> data)
      : width_(width), height_(height), data_(std::move(data)) {
    if (data_.size() != static_cast<size_t>(width) * height)
      throw Error(ErrorCode::kInvalidArgument, "raster data size does not match dimensions");
  }

  int width() const { return width_; }
  int height() const { return height_; }
  size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }
  bool contains(int row, int col) const { return row >= 0 && col >= 0 && row < height_ && col < width_; }

  T& at(int row, int col) { return data_[static_cast<size_t>(row) * width_ + col]; }
  const T& at(int row, int col) const { return data_[static_cast<size_t>(row) * width_ + col]; }

  std::span<T> data() { return data_; }
  std::span<const T> data() const { return data_; }

  friend bool operator==(const Raster&, const Raster&) = default;

 private:
  int width_ = 0;
  int height_ = 0;
  std::vector<T> data_;
};

struct Vec2f {
  float dx = 0.0f;
  float dy = 0.0f;
  friend bool operator==(const Vec2f&, const Vec2f&) = default;
};

// Binary foreground raster with its tight box and center of mass.
class ForegroundMask {
 public:
  ForegroundMask() = default;

  // Throws kEmptyMask when no cell is set and kDegenerateBox when the
  // resulting box has zero diagonal.
  ForegroundMask(int frame_index, Raster<std::uint8_t> grid)
      : frame_index_(frame_index), grid_(std::move(grid)) {
    long count = 0;
    double sx = 0.0;
    double sy = 0.0;
    int rmin = grid_.height(), rmax = -1, cmin = grid_.width(), cmax = -1;
    for (int r = 0; r < grid_.height(); ++r) {
      for (int c = 0; c < grid_.width(); ++c) {
        if (!grid_.at(r, c)) continue;
        ++count;
        sx += c + 0.5;
        sy += r + 0.5;
        rmin = std::min(rmin, r);
        rmax = std::max(rmax, r);
        cmin = std::min(cmin, c);
        cmax = std::max(cmax, c);
      }
    }
    if (count == 0) throw Error(ErrorCode::kEmptyMask, "foreground mask has no set cell");
    centroid_ = {sx / count, sy / count};
    bbox_ = {{double(cmin), double(rmin)}, {double(cmax + 1), double(rmax + 1)}};
    cell_count_ = count;
    if (bbox_.degenerate()) throw Error(ErrorCode::kDegenerateBox, "foreground box has zero diagonal");
  }

  int frame_index() const { return frame_index_; }
  const Raster<std::uint8_t>& grid() const { return grid_; }
  const BBox& bbox() const { return bbox_; }
  const Point2& centroid() const { return centroid_; }
  long cell_count() const { return cell_count_; }
  int width() const { return grid_.width(); }
  int height() const { return grid_.height(); }

 private:
  int frame_index_ = 0;
  Raster<std::uint8_t> grid_;
  BBox bbox_;
  Point2 centroid_;
  long cell_count_ = 0;
};

inline Point2 mask_centroid(const ForegroundMask& mask) {
  if (mask.cell_count() == 0) throw Error(ErrorCode::kEmptyMask, "mask_centroid on empty mask");
  return mask.centroid();
}

struct EdgeMap {
  Raster<float> grid;  // strengths in [0, 1]
};

struct FlowField {
  Raster<Vec2f> grid;  // displacement in pixels, frame t -> t+1 (or t -> t-1 for backward flow)
};

struct Trajectory {
  int id = 0;
  int start_frame = 0;
  std::vector<Point2> points;

  Trajectory() = default;
  Trajectory(int id_, int start_frame_, std::vector<Point2> points_)
      : id(id_), start_frame(start_frame_), points(std::move(points_)) {
    if (static_cast<int>(points.size()) != kTrajectoryLength)
      throw Error(ErrorCode::kInvalidArgument, "trajectory must have exactly 10 points");
    for (const auto& p : points)
      if (!p.finite()) throw Error(ErrorCode::kInvalidArgument, "trajectory point is not finite");
  }
};

struct Interval {
  std::string shot_id;
  int start_frame = 0;
  int length = 0;
  int cluster_id = 0;

  bool valid() const { return length >= 10 && length <= 200 && start_frame >= 0; }
};

inline constexpr int kLandmarkCount = 19;

struct LandmarkSet {
  int frame_index = 0;
  std::map<int, Point2> points;  // visible landmarks only, ids 1..19

  bool visible(int id) const { return points.count(id) != 0; }
  std::set<int> visibility() const {
    std::set<int> ids;
    for (const auto& [id, p] : points) ids.insert(id);
    return ids;
  }

  // Maximum pairwise distance among visible landmarks; 0 with fewer than 2.
  double scale() const {
    double best = 0.0;
    for (auto a = points.begin(); a != points.end(); ++a)
      for (auto b = std::next(a); b != points.end(); ++b) best = std::max(best, distance(a->second, b->second));
    return best;
  }
};

// All per-frame data of one shot. Immutable once built and shared between
// sequences and worker threads.
struct ShotData {
  std::string shot_id;
  int frame_count = 0;
  int width = 0;
  int height = 0;
  std::vector<Trajectory> trajectories;
  std::vector<ForegroundMask> masks;
  std::vector<EdgeMap> edge_maps;
  std::vector<FlowField> flows;           // frame_count - 1 entries, t -> t+1
  std::vector<FlowField> backward_flows;  // empty, or frame_count - 1 entries, t+1 -> t
  std::vector<LandmarkSet> landmarks;     // empty, or frame_count entries

  // Trajectory indices grouped by start frame.
  std::vector<std::vector<int>> trajectories_by_start() const {
    std::vector<std::vector<int>> by_start(static_cast<size_t>(std::max(frame_count, 0)));
    for (size_t i = 0; i < trajectories.size(); ++i) {
      const int s = trajectories[i].start_frame;
      if (s >= 0 && s < frame_count) by_start[static_cast<size_t>(s)].push_back(static_cast<int>(i));
    }
    return by_start;
  }
};

// A T-frame window [start_frame, start_frame + length) of a shot.
class FrameSequence {
 public:
  FrameSequence() = default;
  FrameSequence(std::shared_ptr<const ShotData> shot, int start_frame, int length)
      : shot_(std::move(shot)), start_(start_frame), length_(length) {
    if (!shot_) throw Error(ErrorCode::kInvalidArgument, "null shot");
    if (length_ <= 0 || start_ < 0 || start_ + length_ > shot_->frame_count)
      throw Error(ErrorCode::kInvalidArgument, "sequence window outside shot " + shot_->shot_id);
  }

  const ShotData& shot() const { return *shot_; }
  const std::shared_ptr<const ShotData>& shot_ptr() const { return shot_; }
  const std::string& shot_id() const { return shot_->shot_id; }
  int start_frame() const { return start_; }
  int length() const { return length_; }

  const ForegroundMask& mask(int t) const { return shot_->masks.at(static_cast<size_t>(start_ + t)); }
  const EdgeMap& edges(int t) const { return shot_->edge_maps.at(static_cast<size_t>(start_ + t)); }

  // Forward flow from relative frame t to t+1; valid for t in [0, length-2]
  // and also for the frame right after the window when the shot has it.
  const FlowField& flow(int t) const { return shot_->flows.at(static_cast<size_t>(start_ + t)); }
  bool has_backward_flow() const { return !shot_->backward_flows.empty(); }
  // Backward flow from relative frame t to t-1.
  const FlowField& backward_flow(int t) const {
    return shot_->backward_flows.at(static_cast<size_t>(start_ + t - 1));
  }

  bool has_landmarks() const { return !shot_->landmarks.empty(); }
  const LandmarkSet& landmarks(int t) const { return shot_->landmarks.at(static_cast<size_t>(start_ + t)); }
  std::vector<LandmarkSet> landmark_window() const {
    std::vector<LandmarkSet> out;
    if (!has_landmarks()) return out;
    for (int t = 0; t < length_; ++t) out.push_back(landmarks(t));
    return out;
  }

  // Trajectories starting inside the window, grouped by relative start frame.
  std::vector<std::vector<const Trajectory*>> trajectories_by_relative_start() const {
    std::vector<std::vector<const Trajectory*>> out(static_cast<size_t>(length_));
    for (const auto& tr : shot_->trajectories) {
      const int rel = tr.start_frame - start_;
      if (rel >= 0 && rel < length_) out[static_cast<size_t>(rel)].push_back(&tr);
    }
    return out;
  }

 private:
  std::shared_ptr<const ShotData> shot_;
  int start_ = 0;
  int length_ = 0;
};

// Shots plus the intervals mined within clusters. Interval cluster ids form
// the cluster map.
struct Corpus {
  std::vector<std::shared_ptr<const ShotData>> shots;
  std::vector<Interval> intervals;

  const std::shared_ptr<const ShotData>& shot(const std::string& id) const {
    for (const auto& s : shots)
      if (s->shot_id == id) return s;
    throw Error(ErrorCode::kInvalidArgument, "unknown shot '" + id + "'");
  }
};

}  // namespace motionalign
