#pragma once

#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "motionalign/core.hpp"
#include "motionalign/pipeline.hpp"

namespace motionalign {

namespace fs = std::filesystem;
using json = nlohmann::json;

static_assert(std::endian::native == std::endian::little, "raster files are written in host order");

// ---- Dense rasters --------------------------------------------------------
// Header: 8-byte magic, then u32 kind, width, height, frames; row-major
// frames follow. Kinds: 0 = u8 mask, 1 = f32 edge strength, 2 = f32 (dx, dy).

inline constexpr char kRasterMagic[8] = {'M', 'A', 'R', 'A', 'S', 'T', 'E', 'R'};
enum class RasterKind : std::uint32_t { kMask = 0, kEdge = 1, kFlow = 2 };

inline size_t raster_cell_bytes(RasterKind k) { return k == RasterKind::kMask ? 1 : k == RasterKind::kEdge ? 4 : 8; }

struct RasterStack {
  RasterKind kind = RasterKind::kMask;
  std::uint32_t width = 0, height = 0, frames = 0;
  std::vector<char> bytes;
};

inline void write_raster_stack(const fs::path& path, const RasterStack& s) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::kIoError, "cannot write " + path.string());
  out.write(kRasterMagic, sizeof kRasterMagic);
  const std::uint32_t head[4] = {static_cast<std::uint32_t>(s.kind), s.width, s.height, s.frames};
  out.write(reinterpret_cast<const char*>(head), sizeof head);
  out.write(s.bytes.data(), static_cast<std::streamsize>(s.bytes.size()));
  if (!out) throw Error(ErrorCode::kIoError, "write failed for " + path.string());
}

inline RasterStack read_raster_stack(const fs::path& path, RasterKind expected) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kMissingFile, "cannot open " + path.string());
  char magic[8];
  std::uint32_t head[4];
  in.read(magic, sizeof magic);
  in.read(reinterpret_cast<char*>(head), sizeof head);
  if (!in || std::memcmp(magic, kRasterMagic, sizeof magic) != 0)
    throw Error(ErrorCode::kSchemaViolation, path.string() + ": not a raster file");
  RasterStack s{static_cast<RasterKind>(head[0]), head[1], head[2], head[3], {}};
  if (s.kind != expected)
    throw Error(ErrorCode::kSchemaViolation, path.string() + ": raster kind " + std::to_string(head[0]) +
                                                 ", expected " + std::to_string(static_cast<std::uint32_t>(expected)));
  const size_t n = size_t{s.width} * s.height * s.frames * raster_cell_bytes(s.kind);
  s.bytes.resize(n);
  in.read(s.bytes.data(), static_cast<std::streamsize>(n));
  if (static_cast<size_t>(in.gcount()) != n) throw Error(ErrorCode::kSchemaViolation, path.string() + ": truncated");
  in.peek();
  if (!in.eof()) throw Error(ErrorCode::kSchemaViolation, path.string() + ": trailing bytes");
  return s;
}

template <class T>
RasterStack pack_rasters(RasterKind kind, const std::vector<const Raster<T>*>& frames) {
  static_assert(std::is_trivially_copyable_v<T>);
  RasterStack s{kind, 0, 0, static_cast<std::uint32_t>(frames.size()), {}};
  if (!frames.empty()) {
    s.width = static_cast<std::uint32_t>(frames[0]->width());
    s.height = static_cast<std::uint32_t>(frames[0]->height());
  }
  for (const auto* f : frames) {
    if (f->width() != static_cast<int>(s.width) || f->height() != static_cast<int>(s.height))
      throw Error(ErrorCode::kInvalidArgument, "raster frames differ in size");
    const auto d = f->data();
    const char* p = reinterpret_cast<const char*>(d.data());
    s.bytes.insert(s.bytes.end(), p, p + d.size() * sizeof(T));
  }
  return s;
}

template <class T>
std::vector<Raster<T>> unpack_rasters(const RasterStack& s) {
  std::vector<Raster<T>> out;
  const size_t cells = size_t{s.width} * s.height;
  for (size_t f = 0; f < s.frames; ++f) {
    std::vector<T> data(cells);
    std::memcpy(data.data(), s.bytes.data() + f * cells * sizeof(T), cells * sizeof(T));
    out.emplace_back(static_cast<int>(s.width), static_cast<int>(s.height), std::move(data));
  }
  return out;
}

// ---- Line-delimited records ----------------------------------------------

inline void for_each_json_line(const fs::path& path, const std::function<void(const json&, int line)>& fn) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kMissingFile, "cannot open " + path.string());
  std::string text;
  int line = 0;
  while (std::getline(in, text)) {
    ++line;
    if (text.find_first_not_of(" \t\r") == std::string::npos) continue;
    json j;
    try {
      j = json::parse(text);
    } catch (const json::exception& e) {
      throw Error(ErrorCode::kSchemaViolation, path.string() + ":" + std::to_string(line) + ": " + e.what());
    }
    try {
      fn(j, line);
    } catch (const json::exception& e) {
      throw Error(ErrorCode::kSchemaViolation, path.string() + ":" + std::to_string(line) + ": " + e.what());
    }
  }
}

inline void write_lines(const fs::path& path, const std::vector<json>& rows) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::kIoError, "cannot write " + path.string());
  for (const auto& r : rows) out << r.dump() << '\n';
  if (!out) throw Error(ErrorCode::kIoError, "write failed for " + path.string());
}

inline json point_json(Point2 p) { return json::array({p.x, p.y}); }
inline Point2 point_from(const json& j) {
  if (!j.is_array() || j.size() != 2) throw Error(ErrorCode::kSchemaViolation, "point must be [x, y]");
  return {j.at(0).get<double>(), j.at(1).get<double>()};
}

inline json matrix_json(const Eigen::Matrix3d& m) {
  json a = json::array();
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) a.push_back(m(r, c));
  return a;
}
inline Eigen::Matrix3d matrix_from(const json& j) {
  if (!j.is_array() || j.size() != 9) throw Error(ErrorCode::kSchemaViolation, "matrix must have 9 entries");
  Eigen::Matrix3d m;
  for (int k = 0; k < 9; ++k) m(k / 3, k % 3) = j.at(static_cast<size_t>(k)).get<double>();
  return m;
}

inline json trajectory_json(const std::string& shot, const Trajectory& t) {
  json pts = json::array();
  for (const auto& p : t.points) pts.push_back(point_json(p));
  return {{"shot", shot}, {"id", t.id}, {"start_frame", t.start_frame}, {"points", pts}};
}

inline json landmarks_json(const std::string& shot, const LandmarkSet& l) {
  json pts = json::object(), vis = json::array();
  for (const auto& [id, p] : l.points) {
    pts[std::to_string(id)] = point_json(p);
    vis.push_back(id);
  }
  return {{"shot", shot}, {"frame", l.frame_index}, {"points", pts}, {"visible", vis}};
}

// ---- Corpus manifest ------------------------------------------------------

struct ShotFiles {
  std::string trajectories, masks, edges, flows, backward_flows, landmarks;
};

inline ShotFiles default_shot_files(const std::string& id) {
  return {id + ".trajectories.jsonl", id + ".masks.bin", id + ".edges.bin",
          id + ".flows.bin",          id + ".backward_flows.bin", id + ".landmarks.jsonl"};
}

inline fs::path save_corpus(const Corpus& corpus, const fs::path& dir) {
  fs::create_directories(dir);
  json shots = json::array();
  for (const auto& sp : corpus.shots) {
    const ShotData& s = *sp;
    const ShotFiles f = default_shot_files(s.shot_id);
    std::vector<json> rows;
    for (const auto& t : s.trajectories) rows.push_back(trajectory_json(s.shot_id, t));
    write_lines(dir / f.trajectories, rows);
    std::vector<const Raster<std::uint8_t>*> masks;
    for (const auto& m : s.masks) masks.push_back(&m.grid());
    write_raster_stack(dir / f.masks, pack_rasters(RasterKind::kMask, masks));
    std::vector<const Raster<float>*> edges;
    for (const auto& e : s.edge_maps) edges.push_back(&e.grid);
    write_raster_stack(dir / f.edges, pack_rasters(RasterKind::kEdge, edges));
    const auto flow_stack = [](const std::vector<FlowField>& v) {
      std::vector<const Raster<Vec2f>*> ptrs;
      for (const auto& fl : v) ptrs.push_back(&fl.grid);
      return pack_rasters(RasterKind::kFlow, ptrs);
    };
    write_raster_stack(dir / f.flows, flow_stack(s.flows));
    json entry = {{"id", s.shot_id},       {"frame_count", s.frame_count}, {"width", s.width},
                  {"height", s.height},    {"trajectories", f.trajectories}, {"masks", f.masks},
                  {"edges", f.edges},      {"flows", f.flows}};
    if (!s.backward_flows.empty()) {
      write_raster_stack(dir / f.backward_flows, flow_stack(s.backward_flows));
      entry["backward_flows"] = f.backward_flows;
    }
    if (!s.landmarks.empty()) {
      rows.clear();
      for (const auto& l : s.landmarks) rows.push_back(landmarks_json(s.shot_id, l));
      write_lines(dir / f.landmarks, rows);
      entry["landmarks"] = f.landmarks;
    }
    shots.push_back(entry);
  }
  json intervals = json::array();
  std::map<int, std::vector<int>> clusters;
  for (size_t k = 0; k < corpus.intervals.size(); ++k) {
    const auto& iv = corpus.intervals[k];
    intervals.push_back({{"id", k}, {"shot", iv.shot_id}, {"start_frame", iv.start_frame}, {"length", iv.length}});
    clusters[iv.cluster_id].push_back(static_cast<int>(k));
  }
  json cl = json::object();
  for (const auto& [id, members] : clusters) cl[std::to_string(id)] = members;
  const json manifest = {{"format", "motionalign-corpus"}, {"version", 1}, {"shots", shots},
                         {"intervals", intervals},         {"clusters", cl}};
  const fs::path path = dir / "manifest.json";
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::kIoError, "cannot write " + path.string());
  out << manifest.dump(2) << '\n';
  return path;
}

namespace detail {

inline Error schema(const std::string& where, const std::string& what) {
  return Error(ErrorCode::kSchemaViolation, where + ": " + what);
}

inline std::shared_ptr<ShotData> load_shot(const json& entry, const fs::path& base, const std::string& where) {
  auto shot = std::make_shared<ShotData>();
  shot->shot_id = entry.at("id").get<std::string>();
  shot->frame_count = entry.at("frame_count").get<int>();
  shot->width = entry.at("width").get<int>();
  shot->height = entry.at("height").get<int>();
  if (shot->frame_count < 1 || shot->width < 1 || shot->height < 1)
    throw schema(where, "frame_count, width and height must be positive");
  const auto file = [&](const char* key) -> std::optional<fs::path> {
    if (!entry.contains(key)) return std::nullopt;
    fs::path p = entry.at(key).get<std::string>();
    if (p.is_relative()) p = base / p;
    if (!fs::exists(p)) throw Error(ErrorCode::kMissingFile, where + ": " + key + " file " + p.string() + " not found");
    return p;
  };
  const auto required = [&](const char* key) {
    auto p = file(key);
    if (!p) throw schema(where, std::string("missing '") + key + "'");
    return *p;
  };
  const auto check_stack = [&](const RasterStack& s, int frames, const std::string& what) {
    if (static_cast<int>(s.frames) != frames)
      throw Error(ErrorCode::kInconsistentFrameCount, where + ": " + what + " has " + std::to_string(s.frames) +
                                                          " frames, expected " + std::to_string(frames));
    if (static_cast<int>(s.width) != shot->width || static_cast<int>(s.height) != shot->height)
      throw schema(where, what + " size differs from the shot");
  };

  const auto mask_stack = read_raster_stack(required("masks"), RasterKind::kMask);
  check_stack(mask_stack, shot->frame_count, "masks");
  int f = 0;
  for (auto& g : unpack_rasters<std::uint8_t>(mask_stack)) {
    try {
      shot->masks.emplace_back(f, std::move(g));
    } catch (const Error& e) {
      throw Error(e.code(), where + ": mask frame " + std::to_string(f) + ": " + e.what());
    }
    ++f;
  }
  const auto edge_stack = read_raster_stack(required("edges"), RasterKind::kEdge);
  check_stack(edge_stack, shot->frame_count, "edges");
  for (auto& g : unpack_rasters<float>(edge_stack)) shot->edge_maps.push_back({std::move(g)});
  const auto flow_stack = read_raster_stack(required("flows"), RasterKind::kFlow);
  check_stack(flow_stack, shot->frame_count - 1, "flows");
  for (auto& g : unpack_rasters<Vec2f>(flow_stack)) shot->flows.push_back({std::move(g)});
  if (auto p = file("backward_flows")) {
    const auto s = read_raster_stack(*p, RasterKind::kFlow);
    check_stack(s, shot->frame_count - 1, "backward_flows");
    for (auto& g : unpack_rasters<Vec2f>(s)) shot->backward_flows.push_back({std::move(g)});
  }

  const fs::path traj = required("trajectories");
  for_each_json_line(traj, [&](const json& j, int line) {
    const std::string rec = traj.string() + ":" + std::to_string(line);
    if (j.at("shot").get<std::string>() != shot->shot_id) throw schema(rec, "trajectory of another shot");
    const int start = j.at("start_frame").get<int>();
    std::vector<Point2> pts;
    for (const auto& p : j.at("points")) pts.push_back(point_from(p));
    if (start < 0 || start + static_cast<int>(pts.size()) > shot->frame_count)
      throw schema(rec, "trajectory " + std::to_string(j.at("id").get<int>()) + " references frames beyond the shot");
    try {
      shot->trajectories.emplace_back(j.at("id").get<int>(), start, std::move(pts));
    } catch (const Error& e) {
      throw schema(rec, e.what());
    }
  });

  if (auto p = file("landmarks")) {
    shot->landmarks.resize(static_cast<size_t>(shot->frame_count));
    for (int t = 0; t < shot->frame_count; ++t) shot->landmarks[static_cast<size_t>(t)].frame_index = t;
    for_each_json_line(*p, [&](const json& j, int line) {
      const std::string rec = p->string() + ":" + std::to_string(line);
      if (j.at("shot").get<std::string>() != shot->shot_id) throw schema(rec, "landmarks of another shot");
      const int frame = j.at("frame").get<int>();
      if (frame < 0 || frame >= shot->frame_count) throw schema(rec, "landmark frame beyond the shot");
      LandmarkSet& set = shot->landmarks[static_cast<size_t>(frame)];
      std::set<int> visible;
      if (j.contains("visible"))
        for (const auto& v : j.at("visible")) visible.insert(v.get<int>());
      for (const auto& [key, value] : j.at("points").items()) {
        const int id = std::stoi(key);
        if (id < 1 || id > kLandmarkCount) throw schema(rec, "landmark id " + key + " outside 1..19");
        if (j.contains("visible") && !visible.count(id)) continue;
        set.points[id] = point_from(value);
      }
    });
  }
  return shot;
}

}  // namespace detail

inline Corpus load_corpus(const fs::path& manifest_path) {
  std::ifstream in(manifest_path);
  if (!in) throw Error(ErrorCode::kMissingFile, "cannot open manifest " + manifest_path.string());
  json m;
  try {
    m = json::parse(in);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kSchemaViolation, manifest_path.string() + ": " + e.what());
  }
  const fs::path base = manifest_path.parent_path();
  Corpus corpus;
  try {
    const auto& shots = m.at("shots");
    for (size_t k = 0; k < shots.size(); ++k)
      corpus.shots.push_back(
          detail::load_shot(shots.at(k), base, manifest_path.string() + ": shots[" + std::to_string(k) + "]"));
    std::map<int, int> cluster_of;
    if (m.contains("clusters"))
      for (const auto& [key, members] : m.at("clusters").items())
        for (const auto& idx : members) cluster_of[idx.get<int>()] = std::stoi(key);
    if (m.contains("intervals")) {
      const auto& ivs = m.at("intervals");
      for (size_t k = 0; k < ivs.size(); ++k) {
        const auto& j = ivs.at(k);
        const std::string where = manifest_path.string() + ": intervals[" + std::to_string(k) + "]";
        const int id = j.contains("id") ? j.at("id").get<int>() : static_cast<int>(k);
        Interval iv{j.at("shot").get<std::string>(), j.at("start_frame").get<int>(), j.at("length").get<int>(),
                    cluster_of.count(id) ? cluster_of.at(id) : 0};
        std::shared_ptr<const ShotData> shot;
        try {
          shot = corpus.shot(iv.shot_id);
        } catch (const Error&) {
          throw detail::schema(where, "unknown shot '" + iv.shot_id + "'");
        }
        if (!iv.valid() || iv.start_frame + iv.length > shot->frame_count)
          throw detail::schema(where, "interval must span 10-200 frames inside its shot");
        corpus.intervals.push_back(iv);
      }
    }
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kSchemaViolation, manifest_path.string() + ": " + e.what());
  }
  return corpus;
}

// ---- CMPs, records and alignments -----------------------------------------

inline json cmp_json(const Cmp& c, int id) {
  return {{"cmp_id", id},       {"shot_a", c.seq_a.shot_id},       {"start_a", c.seq_a.start_frame},
          {"shot_b", c.seq_b.shot_id}, {"start_b", c.seq_b.start_frame}, {"t_len", c.t_len},
          {"score", c.score},   {"rank", c.rank}};
}

inline Cmp cmp_from(const json& j) {
  Cmp c;
  c.seq_a = {j.at("shot_a").get<std::string>(), j.at("start_a").get<int>()};
  c.seq_b = {j.at("shot_b").get<std::string>(), j.at("start_b").get<int>()};
  c.t_len = j.at("t_len").get<int>();
  c.score = j.at("score").get<double>();
  c.rank = j.at("rank").get<int>();
  return c;
}

inline void save_cmps(const fs::path& path, const std::vector<Cmp>& cmps) {
  std::vector<json> rows;
  for (size_t k = 0; k < cmps.size(); ++k) rows.push_back(cmp_json(cmps[k], static_cast<int>(k)));
  write_lines(path, rows);
}

inline std::vector<Cmp> load_cmps(const fs::path& path) {
  std::vector<Cmp> out;
  for_each_json_line(path, [&](const json& j, int) { out.push_back(cmp_from(j)); });
  return out;
}

inline json optional_json(const std::optional<double>& v) { return v && std::isfinite(*v) ? json(*v) : json(nullptr); }

inline json record_json(const AlignmentRecord& r) {
  json j = cmp_json(r.cmp, r.cmp_id);
  j["method"] = r.method;
  j["status"] = r.status;
  if (!r.message.empty()) j["message"] = r.message;
  j["outlier_fraction"] = r.outlier_fraction;
  j["fg_fallback"] = r.fg_fallback;
  j["energy"] = optional_json(r.energy);
  j["anchor_frame"] = r.anchor_frame ? json(*r.anchor_frame) : json(nullptr);
  const auto& e = r.eval;
  j["eval_status"] = e.status;
  j["error"] = e.error ? optional_json(e.error->mean_error) : json(nullptr);
  j["landmark_iou"] = e.error ? json(e.error->landmark_iou) : json(nullptr);
  j["correct"] = e.correct;
  j["alignable"] = e.alignable;
  j["alignable_evaluable"] = e.alignable_evaluable;
  return j;
}

inline AlignmentRecord record_from(const json& j) {
  AlignmentRecord r;
  r.cmp_id = j.at("cmp_id").get<int>();
  r.cmp = cmp_from(j);
  r.method = j.at("method").get<std::string>();
  r.status = j.at("status").get<std::string>();
  r.message = j.value("message", "");
  r.outlier_fraction = j.at("outlier_fraction").get<double>();
  r.fg_fallback = j.at("fg_fallback").get<bool>();
  if (!j.at("energy").is_null()) r.energy = j.at("energy").get<double>();
  if (!j.at("anchor_frame").is_null()) r.anchor_frame = j.at("anchor_frame").get<int>();
  r.eval.status = j.at("eval_status").get<std::string>();
  if (!j.at("landmark_iou").is_null()) {
    AlignmentError e;
    e.mean_error = j.at("error").is_null() ? std::numeric_limits<double>::infinity() : j.at("error").get<double>();
    e.landmark_iou = j.at("landmark_iou").get<double>();
    r.eval.error = e;
    r.eval.evaluated = true;
  }
  r.eval.correct = j.at("correct").get<bool>();
  r.eval.alignable = j.at("alignable").get<bool>();
  r.eval.alignable_evaluable = j.at("alignable_evaluable").get<bool>();
  return r;
}

inline void save_records(const fs::path& path, const std::vector<AlignmentRecord>& records) {
  std::vector<json> rows;
  for (const auto& r : records) rows.push_back(record_json(r));
  write_lines(path, rows);
}

inline std::vector<AlignmentRecord> load_records(const fs::path& path) {
  std::vector<AlignmentRecord> out;
  for_each_json_line(path, [&](const json& j, int) { out.push_back(record_from(j)); });
  return out;
}

inline json ttps_json(const TtpsMapping& m) {
  json frames = json::array();
  for (const auto& f : m.per_frame) {
    json ctrl = json::array(), warp = json::array();
    for (const auto& p : f.control_points) ctrl.push_back(point_json(p));
    for (long k = 0; k < f.warp.rows(); ++k) warp.push_back(json::array({f.warp(k, 0), f.warp(k, 1)}));
    frames.push_back({{"control_points", ctrl}, {"affine", matrix_json(f.affine)}, {"warp", warp},
                      {"lambda", f.lambda_used}});
  }
  json corr = json::array();
  for (const auto& p : m.correspondence) corr.push_back(json::array({p.i, p.j, p.weight}));
  return {{"anchor_frame", m.anchor_frame},
          {"energy", m.energy},
          {"lambda", m.lambda},
          {"prewarp", m.prewarp ? matrix_json(m.prewarp->h) : json(nullptr)},
          {"correspondence", corr},
          {"frames", frames}};
}

inline TtpsMapping ttps_from(const json& j) {
  TtpsMapping m;
  m.anchor_frame = j.at("anchor_frame").get<int>();
  m.energy = j.at("energy").get<double>();
  m.lambda = j.at("lambda").get<double>();
  if (!j.at("prewarp").is_null()) {
    m.prewarp = Homography{};
    m.prewarp->h = matrix_from(j.at("prewarp"));
  }
  for (const auto& c : j.at("correspondence")) m.correspondence.push_back({c.at(0).get<int>(), c.at(1).get<int>(), c.at(2).get<double>()});
  for (const auto& f : j.at("frames")) {
    TpsMapping t;
    for (const auto& p : f.at("control_points")) t.control_points.push_back(point_from(p));
    t.affine = matrix_from(f.at("affine"));
    const auto& w = f.at("warp");
    if (w.size() != t.control_points.size()) throw Error(ErrorCode::kSchemaViolation, "warp rows differ from control points");
    t.warp.resize(static_cast<long>(w.size()), 2);
    for (size_t k = 0; k < w.size(); ++k) {
      t.warp(static_cast<long>(k), 0) = w.at(k).at(0).get<double>();
      t.warp(static_cast<long>(k), 1) = w.at(k).at(1).get<double>();
    }
    t.lambda_used = f.at("lambda").get<double>();
    m.per_frame.push_back(std::move(t));
  }
  return m;
}

inline json alignment_json(int cmp_id, const Alignment& a) {
  json j = {{"cmp_id", cmp_id},
            {"method", method_name(a.method)},
            {"homography", matrix_json(a.homography.h)},
            {"outlier_fraction", a.homography.outlier_fraction},
            {"fg_fallback", a.homography.fg_fallback}};
  if (a.forward) j["forward"] = ttps_json(*a.forward);
  if (a.reverse) j["reverse"] = ttps_json(*a.reverse);
  return j;
}

inline Alignment alignment_from(const json& j) {
  Alignment a;
  a.method = parse_method(j.at("method").get<std::string>());
  a.homography.h = matrix_from(j.at("homography"));
  a.homography.outlier_fraction = j.at("outlier_fraction").get<double>();
  a.homography.inlier_fraction = 1.0 - a.homography.outlier_fraction;
  a.homography.fg_fallback = j.at("fg_fallback").get<bool>();
  if (j.contains("forward")) a.forward = ttps_from(j.at("forward"));
  if (j.contains("reverse")) a.reverse = ttps_from(j.at("reverse"));
  if (a.forward.has_value() != a.reverse.has_value())
    throw Error(ErrorCode::kSchemaViolation, "TTPS alignments need both directions");
  return a;
}

// One line of the alignment file: the CMP, its status and, when aligned, the mapping.
inline json alignment_row_json(const AlignmentRecord& r, const std::optional<Alignment>& a) {
  json j = cmp_json(r.cmp, r.cmp_id);
  j["method"] = r.method;
  j["status"] = r.status;
  if (!r.message.empty()) j["message"] = r.message;
  if (a) j["alignment"] = alignment_json(r.cmp_id, *a);
  return j;
}

inline CmpResult alignment_row_from(const json& j) {
  CmpResult res;
  auto& r = res.record;
  r.cmp_id = j.at("cmp_id").get<int>();
  r.cmp = cmp_from(j);
  r.method = j.at("method").get<std::string>();
  r.status = j.at("status").get<std::string>();
  r.message = j.value("message", "");
  r.eval.status = "not_evaluated";
  if (j.contains("alignment")) {
    res.alignment = alignment_from(j.at("alignment"));
    fill_alignment_fields(r, *res.alignment);
  }
  if (r.aligned() != res.alignment.has_value())
    throw Error(ErrorCode::kSchemaViolation, "alignment present exactly when status is ok");
  return res;
}

inline void save_alignments(const fs::path& path, const PipelineResult& res) {
  std::vector<json> rows;
  for (size_t k = 0; k < res.records.size(); ++k)
    rows.push_back(alignment_row_json(res.records[k], k < res.alignments.size() ? res.alignments[k] : std::nullopt));
  write_lines(path, rows);
}

inline std::vector<CmpResult> load_alignments(const fs::path& path) {
  std::vector<CmpResult> out;
  for_each_json_line(path, [&](const json& j, int) { out.push_back(alignment_row_from(j)); });
  return out;
}

}  // namespace motionalign
