#pragma once

#include <cstdio>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "motionalign/evaluation.hpp"
#include "motionalign/pipeline.hpp"

namespace motionalign {

struct Report {
  std::vector<PrPoint> curve;
  double average_precision = 0.0;
  int n_cmps = 0;
  int n_aligned = 0;
  int n_evaluated = 0;
  int n_alignable = 0;
};

inline Report emit_report(const std::vector<AlignmentRecord>& records, const std::vector<double>& operating_points,
                          const EvalConfig& cfg = {}) {
  std::vector<AlignmentOutcome> outcomes;
  std::vector<char> alignable;
  Report rep;
  rep.n_cmps = static_cast<int>(records.size());
  for (const auto& r : records) {
    outcomes.push_back({r.aligned(), r.outlier_fraction, r.eval.error});
    alignable.push_back(r.eval.alignable);
    rep.n_aligned += r.aligned();
    rep.n_evaluated += r.eval.error.has_value();
    rep.n_alignable += r.eval.alignable;
  }
  rep.curve = precision_recall(outcomes, alignable, operating_points, cfg);
  rep.average_precision = average_precision(rep.curve);
  return rep;
}

inline std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline constexpr const char* kPrCsvHeader = "operating_point,precision,recall,n_returned,n_correct,n_alignable,recall_defined";

inline std::string pr_csv(const std::vector<PrPoint>& curve) {
  std::ostringstream out;
  out << kPrCsvHeader << '\n';
  for (const auto& p : curve)
    out << format_double(p.operating_point) << ',' << format_double(p.precision) << ',' << format_double(p.recall)
        << ',' << p.n_returned << ',' << p.n_correct << ',' << p.n_alignable << ',' << (p.recall_defined ? 1 : 0)
        << '\n';
  return out.str();
}

inline std::vector<PrPoint> parse_pr_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line != kPrCsvHeader)
    throw Error(ErrorCode::kSchemaViolation, "precision-recall CSV: unexpected header");
  std::vector<PrPoint> out;
  int row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    for (std::string cell; std::getline(ss, cell, ',');) f.push_back(cell);
    if (f.size() != 7)
      throw Error(ErrorCode::kSchemaViolation, "precision-recall CSV line " + std::to_string(row) + ": expected 7 fields");
    try {
      out.push_back({std::stod(f[0]), std::stod(f[1]), std::stod(f[2]), std::stoi(f[3]), std::stoi(f[4]),
                     std::stoi(f[5]), f[6] == "1"});
    } catch (const std::logic_error&) {
      throw Error(ErrorCode::kSchemaViolation, "precision-recall CSV line " + std::to_string(row) + ": bad number");
    }
  }
  return out;
}

inline nlohmann::json report_summary(const Report& rep, const std::string& method) {
  return {{"method", method},
          {"n_cmps", rep.n_cmps},
          {"n_aligned", rep.n_aligned},
          {"n_evaluated", rep.n_evaluated},
          {"n_alignable", rep.n_alignable},
          {"average_precision", rep.average_precision},
          {"operating_points", rep.curve.size()}};
}

}  // namespace motionalign
