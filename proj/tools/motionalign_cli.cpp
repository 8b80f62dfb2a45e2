#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "motionalign/motionalign.hpp"

namespace ma = motionalign;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Options {
  std::string config, manifest, method, out_dir = ".", cmps, alignments, records, operating_points;
  std::uint64_t seed = 0;
  int workers = 1;
  bool save_alignments = false;
  // synth
  int n_shots = 0, frames = 0, n_programs = 0;
  double warp = -1.0;
};

struct Flags {
  CLI::Option *seed = nullptr, *workers = nullptr, *method = nullptr, *ops = nullptr;
};

std::vector<double> parse_operating_points(const std::string& text) {
  std::vector<double> out;
  std::stringstream ss(text);
  for (std::string cell; std::getline(ss, cell, ',');) {
    try {
      size_t used = 0;
      out.push_back(std::stod(cell, &used));
      if (used != cell.size()) throw std::invalid_argument(cell);
    } catch (const std::logic_error&) {
      throw ma::Error(ma::ErrorCode::kInvalidArgument, "bad operating point '" + cell + "'");
    }
  }
  if (out.empty()) throw ma::Error(ma::ErrorCode::kInvalidArgument, "no operating points given");
  return out;
}

// Config file first, then flags that were given on the command line.
ma::PipelineConfig resolve_config(const Options& o, const Flags& f, ma::SyntheticSpec* spec = nullptr) {
  ma::PipelineConfig cfg;
  if (!o.config.empty()) ma::load_config_file(o.config, cfg, spec);
  if (f.seed && f.seed->count()) cfg.seed = o.seed;
  if (f.workers && f.workers->count()) cfg.workers = o.workers;
  if (f.method && f.method->count()) cfg.method = ma::parse_method(o.method);
  if (f.ops && f.ops->count()) cfg.operating_points = parse_operating_points(o.operating_points);
  cfg.validate();
  return cfg;
}

fs::path out_path(const Options& o, const std::string& given, const char* name) {
  return given.empty() ? fs::path(o.out_dir) / name : fs::path(given);
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw ma::Error(ma::ErrorCode::kIoError, "cannot write " + path.string());
  out << text;
}

json truth_json(const ma::ShotTruth& t) {
  return {{"shot", t.shot_id},
          {"program", t.program},
          {"phase_offset", t.phase_offset},
          {"scale", t.scale},
          {"rotation", t.rotation},
          {"origin", ma::point_json(t.origin)},
          {"warp",
           {{"magnitude", t.warp.magnitude},
            {"k1", json::array({t.warp.k1.x(), t.warp.k1.y()})},
            {"k2", json::array({t.warp.k2.x(), t.warp.k2.y()})},
            {"c1", t.warp.c1},
            {"c2", t.warp.c2}}},
          {"dropped_leg", t.dropped_leg}};
}

void write_report(const Options& o, const ma::PipelineConfig& cfg, const std::vector<ma::AlignmentRecord>& records,
                  const std::string& method) {
  const auto rep = ma::emit_report(records, cfg.operating_points, cfg.eval);
  write_text(fs::path(o.out_dir) / "pr.csv", ma::pr_csv(rep.curve));
  const json summary = ma::report_summary(rep, method);
  write_text(fs::path(o.out_dir) / "summary.json", summary.dump(2) + "\n");
  std::cout << summary.dump() << '\n';
}

int cmd_synth(const Options& o, const Flags& f) {
  ma::SyntheticSpec spec;
  ma::PipelineConfig ignored;
  if (!o.config.empty()) ma::load_config_file(o.config, ignored, &spec);
  if (f.seed->count()) spec.seed = o.seed;
  if (o.n_shots > 0) spec.n_shots = o.n_shots;
  if (o.frames > 0) spec.frames_per_shot = o.frames;
  if (o.n_programs > 0) spec.n_programs = o.n_programs;
  if (o.warp >= 0.0) spec.warp_magnitude = o.warp;
  const auto sc = ma::generate_synthetic(spec);
  const fs::path manifest = ma::save_corpus(sc.corpus(), o.out_dir);
  json truth = {{"spec", ma::synthetic_json(spec)}, {"shots", json::array()}};
  for (const auto& t : sc.truth) truth["shots"].push_back(truth_json(t));
  write_text(fs::path(o.out_dir) / "truth.json", truth.dump(2) + "\n");
  std::cout << json{{"manifest", manifest.string()}, {"shots", sc.shots.size()}}.dump() << '\n';
  return 0;
}

int cmd_mine(const Options& o, const Flags& f) {
  const auto cfg = resolve_config(o, f);
  const auto corpus = ma::load_corpus(o.manifest);
  const auto mined = ma::mine_cmps(corpus, cfg);
  fs::create_directories(o.out_dir);
  const fs::path path = out_path(o, o.cmps, "cmps.jsonl");
  ma::save_cmps(path, mined.cmps);
  std::cout << json{{"cmps", mined.cmps.size()}, {"file", path.string()}}.dump() << '\n';
  return 0;
}

int cmd_align(const Options& o, const Flags& f) {
  const auto cfg = resolve_config(o, f);
  const auto corpus = ma::load_corpus(o.manifest);
  const auto cmps = ma::load_cmps(out_path(o, o.cmps, "cmps.jsonl"));
  const auto res = ma::align_all(corpus, cmps, cfg, true, false);
  fs::create_directories(o.out_dir);
  const fs::path path = out_path(o, o.alignments, "alignments.jsonl");
  ma::save_alignments(path, res);
  int aligned = 0;
  for (const auto& r : res.records) aligned += r.aligned();
  std::cout << json{{"cmps", cmps.size()}, {"aligned", aligned}, {"file", path.string()}}.dump() << '\n';
  return 0;
}

int cmd_evaluate(const Options& o, const Flags& f) {
  const auto cfg = resolve_config(o, f);
  const auto corpus = ma::load_corpus(o.manifest);
  auto rows = ma::load_alignments(out_path(o, o.alignments, "alignments.jsonl"));
  std::vector<ma::AlignmentRecord> records(rows.size());
  ma::parallel_for(rows.size(), cfg.workers, [&](size_t i) {
    ma::evaluate_one(corpus, rows[i], cfg.eval);
    records[i] = rows[i].record;
  });
  fs::create_directories(o.out_dir);
  const fs::path path = out_path(o, o.records, "records.jsonl");
  ma::save_records(path, records);
  int correct = 0;
  for (const auto& r : records) correct += r.eval.correct;
  std::cout << json{{"records", records.size()}, {"correct", correct}, {"file", path.string()}}.dump() << '\n';
  return 0;
}

int cmd_report(const Options& o, const Flags& f) {
  const auto cfg = resolve_config(o, f);
  const auto records = ma::load_records(out_path(o, o.records, "records.jsonl"));
  fs::create_directories(o.out_dir);
  write_report(o, cfg, records, records.empty() ? ma::method_name(cfg.method) : records.front().method);
  return 0;
}

int cmd_run(const Options& o, const Flags& f) {
  const auto cfg = resolve_config(o, f);
  const auto corpus = ma::load_corpus(o.manifest);
  const auto mined = ma::mine_cmps(corpus, cfg);
  const auto res = ma::align_all(corpus, mined.cmps, cfg, o.save_alignments);
  fs::create_directories(o.out_dir);
  ma::save_cmps(fs::path(o.out_dir) / "cmps.jsonl", mined.cmps);
  ma::save_records(out_path(o, o.records, "records.jsonl"), res.records);
  if (o.save_alignments) ma::save_alignments(fs::path(o.out_dir) / "alignments.jsonl", res);
  write_report(o, cfg, res.records, ma::method_name(cfg.method));
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Mine consistent motion pairs from precomputed video features and align them"};
  app.require_subcommand(1);
  Options o;

  const auto common = [&](CLI::App* sub, bool needs_manifest) {
    sub->add_option("--config", o.config, "JSON config file; flags override it")->check(CLI::ExistingFile);
    if (needs_manifest) sub->add_option("--manifest", o.manifest, "corpus manifest")->required();
    sub->add_option("--out-dir", o.out_dir, "output directory");
  };
  std::map<CLI::App*, Flags> flags;
  const auto pipeline_flags = [&](CLI::App* sub) {
    Flags f;
    f.seed = sub->add_option("--seed", o.seed, "random seed");
    f.workers = sub->add_option("--workers", o.workers, "worker threads")->check(CLI::PositiveNumber);
    f.method = sub->add_option("--method", o.method, "FG, IM, TM, TM+FG or TTPS+FG");
    f.ops = sub->add_option("--operating-points", o.operating_points, "comma-separated max outlier fractions");
    flags[sub] = f;
  };

  auto* synth = app.add_subcommand("synth", "generate a synthetic corpus with planted ground truth");
  common(synth, false);
  flags[synth].seed = synth->add_option("--seed", o.seed, "generator seed");
  synth->add_option("--shots", o.n_shots, "number of shots");
  synth->add_option("--frames", o.frames, "frames per shot");
  synth->add_option("--programs", o.n_programs, "number of distinct motion programs");
  synth->add_option("--warp", o.warp, "per-shot shape warp magnitude");

  auto* mine = app.add_subcommand("mine", "mine CMPs from a corpus");
  common(mine, true);
  pipeline_flags(mine);
  mine->add_option("--cmps", o.cmps, "output CMP file (default <out-dir>/cmps.jsonl)");

  auto* align = app.add_subcommand("align", "align mined CMPs");
  common(align, true);
  pipeline_flags(align);
  align->add_option("--cmps", o.cmps, "CMP file (default <out-dir>/cmps.jsonl)");
  align->add_option("--alignments", o.alignments, "output file (default <out-dir>/alignments.jsonl)");

  auto* evaluate = app.add_subcommand("evaluate", "score alignments against ground-truth landmarks");
  common(evaluate, true);
  pipeline_flags(evaluate);
  evaluate->add_option("--alignments", o.alignments, "alignment file (default <out-dir>/alignments.jsonl)");
  evaluate->add_option("--records", o.records, "output file (default <out-dir>/records.jsonl)");

  auto* report = app.add_subcommand("report", "precision-recall CSV and summary from records");
  common(report, false);
  pipeline_flags(report);
  report->add_option("--records", o.records, "record file (default <out-dir>/records.jsonl)");

  auto* run = app.add_subcommand("run", "mine, align, evaluate and report in one go");
  common(run, true);
  pipeline_flags(run);
  run->add_option("--records", o.records, "output record file (default <out-dir>/records.jsonl)");
  run->add_flag("--save-alignments", o.save_alignments, "also write <out-dir>/alignments.jsonl");

  CLI11_PARSE(app, argc, argv);

  try {
    CLI::App* sub = app.get_subcommands().front();
    const Flags& f = flags[sub];
    if (sub == synth) return cmd_synth(o, f);
    if (sub == mine) return cmd_mine(o, f);
    if (sub == align) return cmd_align(o, f);
    if (sub == evaluate) return cmd_evaluate(o, f);
    if (sub == report) return cmd_report(o, f);
    return cmd_run(o, f);
  } catch (const ma::Error& e) {
    std::cerr << json{{"error", ma::error_code_name(e.code())}, {"message", e.what()}}.dump() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << json{{"error", "internal_error"}, {"message", e.what()}}.dump() << '\n';
    return 3;
  }
}
