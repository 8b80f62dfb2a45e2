#pragma once

// Thin plate splines and TPS-RPM (robust point matching by deterministic
// annealing with soft-assign correspondences).

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <span>
#include <vector>

#include "motionalign/core.hpp"
#include "motionalign/homography.hpp"

namespace motionalign {

// U(r) = r^2 log(r^2), with U(0) = 0.
inline double tps_kernel(double r) {
  if (r <= 0.0) return 0.0;
  const double r2 = r * r;
  return r2 * std::log(r2);
}

inline double tps_kernel_sq(double r2) { return r2 > 0.0 ? r2 * std::log(r2) : 0.0; }

// f(p) = affine * [p; 1] + sum_i warp_i * U(|p - control_i|).
struct TpsMapping {
  std::vector<Point2> control_points;
  Eigen::Matrix3d affine = Eigen::Matrix3d::Identity();
  Eigen::MatrixX2d warp;
  double lambda_used = 0.0;

  static TpsMapping identity(std::vector<Point2> control_points) {
    TpsMapping f;
    f.warp = Eigen::MatrixX2d::Zero(static_cast<long>(control_points.size()), 2);
    f.control_points = std::move(control_points);
    return f;
  }

  Point2 apply(Point2 p) const {
    double x = affine(0, 0) * p.x + affine(0, 1) * p.y + affine(0, 2);
    double y = affine(1, 0) * p.x + affine(1, 1) * p.y + affine(1, 2);
    for (size_t i = 0; i < control_points.size(); ++i) {
      const double u = tps_kernel_sq(squared_norm(p - control_points[i]));
      x += warp(static_cast<long>(i), 0) * u;
      y += warp(static_cast<long>(i), 1) * u;
    }
    return {x, y};
  }
};

inline std::vector<Point2> apply_tps(const TpsMapping& f, std::span<const Point2> pts) {
  std::vector<Point2> out;
  out.reserve(pts.size());
  for (const auto& p : pts) out.push_back(f.apply(p));
  return out;
}

inline Eigen::MatrixXd tps_kernel_matrix(std::span<const Point2> pts) {
  const long n = static_cast<long>(pts.size());
  Eigen::MatrixXd k(n, n);
  for (long i = 0; i < n; ++i) {
    k(i, i) = 0.0;
    for (long j = i + 1; j < n; ++j)
      k(i, j) = k(j, i) = tps_kernel_sq(squared_norm(pts[static_cast<size_t>(i)] - pts[static_cast<size_t>(j)]));
  }
  return k;
}

// trace(w^T K w) over the control points.
inline double bending_energy(const TpsMapping& f) {
  if (f.control_points.empty()) return 0.0;
  const Eigen::MatrixXd k = tps_kernel_matrix(f.control_points);
  const double e = (f.warp.transpose() * k * f.warp).trace();
  return std::max(e, 0.0);
}

namespace detail {

struct CloudFrame {
  Point2 center;
  double scale = 1.0;  // normalized = scale * (p - center)

  Point2 to(Point2 p) const { return scale * (p - center); }
  Point2 from(Point2 q) const { return center + q / scale; }
};

// Zero mean, unit RMS radius.
inline CloudFrame rms_frame(std::span<const Point2> pts) {
  Point2 c;
  for (const auto& p : pts) c += p;
  c = c / static_cast<double>(pts.size());
  double ms = 0.0;
  for (const auto& p : pts) ms += squared_norm(p - c);
  ms /= static_cast<double>(pts.size());
  return {c, ms > 0.0 ? 1.0 / std::sqrt(ms) : 1.0};
}

// Expresses a mapping fitted between normalized clouds (source frame `src`,
// target frame `dst`) in caller coordinates. The kernel's log-scale term
// cancels under the side conditions except for a constant translation.
inline TpsMapping denormalize(const Eigen::MatrixX2d& w_n, const Eigen::Matrix<double, 3, 2>& a_n,
                              std::span<const Point2> control, const CloudFrame& src, const CloudFrame& dst,
                              double lambda) {
  const double sv = src.scale;
  const double su = dst.scale;
  const double log_s2 = std::log(sv * sv);
  Eigen::RowVector2d kappa = Eigen::RowVector2d::Zero();
  for (long i = 0; i < w_n.rows(); ++i)
    kappa += w_n.row(i) * squared_norm(control[static_cast<size_t>(i)]) * sv * sv * log_s2;
  Eigen::Matrix2d m_n;  // normalized linear part, q -> m_n * q
  m_n << a_n(1, 0), a_n(2, 0), a_n(1, 1), a_n(2, 1);
  const Eigen::Vector2d b_n(a_n(0, 0), a_n(0, 1));
  const Eigen::Matrix2d lin = (sv / su) * m_n;
  const Eigen::Vector2d cv(src.center.x, src.center.y);
  const Eigen::Vector2d cu(dst.center.x, dst.center.y);
  const Eigen::Vector2d trans = cu + (b_n + kappa.transpose() - sv * m_n * cv) / su;

  TpsMapping f;
  f.control_points.assign(control.begin(), control.end());
  f.affine.setIdentity();
  f.affine.topLeftCorner<2, 2>() = lin;
  f.affine.topRightCorner<2, 1>() = trans;
  f.warp = w_n * (sv * sv / su);
  f.lambda_used = lambda;
  return f;
}

inline bool nearly_collinear(std::span<const Point2> pts) {
  const auto frame = rms_frame(pts);
  Eigen::Matrix2d cov = Eigen::Matrix2d::Zero();
  for (const auto& p : pts) {
    const Point2 q = frame.to(p);
    cov(0, 0) += q.x * q.x;
    cov(0, 1) += q.x * q.y;
    cov(1, 1) += q.y * q.y;
  }
  cov(1, 0) = cov(0, 1);
  const Eigen::Vector2d ev = Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d>(cov).eigenvalues();
  return !(ev(0) > 1e-12 * std::max(ev(1), 1e-300));
}

}  // namespace detail

// Minimizes sum_i c_i |u_i - f(v_i)|^2 + lambda * bending_energy(f) in the
// caller's coordinates. Both clouds are normalized internally for
// conditioning and the solution is mapped back exactly.
inline TpsMapping fit_tps(std::span<const Point2> u, std::span<const Point2> v, double lambda,
                          std::optional<std::span<const double>> weights = std::nullopt) {
  const size_t n = v.size();
  if (u.size() != n) throw Error(ErrorCode::kInvalidArgument, "fit_tps needs paired point lists");
  if (n < 3) throw Error(ErrorCode::kInsufficientPoints, "fit_tps needs at least 3 points");
  if (weights && weights->size() != n) throw Error(ErrorCode::kInvalidArgument, "weight count mismatch");
  if (lambda < 0.0) throw Error(ErrorCode::kInvalidArgument, "negative regularization");
  if (detail::nearly_collinear(v)) throw Error(ErrorCode::kDegenerateControlPoints, "control points are collinear");

  const auto src = detail::rms_frame(v);
  const auto dst = detail::rms_frame(u);
  std::vector<Point2> vn(n), un(n);
  for (size_t i = 0; i < n; ++i) {
    vn[i] = src.to(v[i]);
    un[i] = dst.to(u[i]);
  }
  const double lambda_n = lambda * src.scale * src.scale;

  const long nn = static_cast<long>(n);
  Eigen::MatrixXd sys = Eigen::MatrixXd::Zero(nn + 3, nn + 3);
  sys.topLeftCorner(nn, nn) = tps_kernel_matrix(vn);
  for (long i = 0; i < nn; ++i) {
    const double c = weights ? std::max((*weights)[static_cast<size_t>(i)], 1e-10) : 1.0;
    sys(i, i) += lambda_n / c;
    const Point2 p = vn[static_cast<size_t>(i)];
    sys(i, nn) = sys(nn, i) = 1.0;
    sys(i, nn + 1) = sys(nn + 1, i) = p.x;
    sys(i, nn + 2) = sys(nn + 2, i) = p.y;
  }
  Eigen::MatrixXd rhs = Eigen::MatrixXd::Zero(nn + 3, 2);
  for (long i = 0; i < nn; ++i) {
    rhs(i, 0) = un[static_cast<size_t>(i)].x;
    rhs(i, 1) = un[static_cast<size_t>(i)].y;
  }
  const Eigen::MatrixXd sol = sys.partialPivLu().solve(rhs);
  if (!sol.allFinite()) throw Error(ErrorCode::kDegenerateControlPoints, "TPS system is singular");
  const Eigen::MatrixX2d w_n = sol.topRows(nn);
  const Eigen::Matrix<double, 3, 2> a_n = sol.bottomRows(3);
  return detail::denormalize(w_n, a_n, v, src, dst, lambda);
}

// Soft-assign matrix with one outlier row (last) and column (last).
struct CorrespondenceMatrix {
  Eigen::MatrixXd m;
  double temperature = 0.0;

  long inner_rows() const { return m.rows() - 1; }
  long inner_cols() const { return m.cols() - 1; }

  // Largest deviation of inner row/column sums from 1.
  double marginal_error() const {
    double err = 0.0;
    for (long i = 0; i < inner_rows(); ++i) err = std::max(err, std::abs(m.row(i).sum() - 1.0));
    for (long j = 0; j < inner_cols(); ++j) err = std::max(err, std::abs(m.col(j).sum() - 1.0));
    return err;
  }
};

namespace detail {

inline double log_sum_exp(std::span<const double> xs) {
  double mx = -std::numeric_limits<double>::infinity();
  for (double x : xs) mx = std::max(mx, x);
  if (!std::isfinite(mx)) return mx;
  double s = 0.0;
  for (double x : xs) s += std::exp(x - mx);
  return mx + std::log(s);
}

// Dual of the balancing problem in log scale:
//   L(alpha, beta) = sum_ij exp(k_ij + alpha_i + beta_j) + sum_i exp(lo_i + alpha_i)
//                  + sum_j exp(lc_j + beta_j) - sum alpha - sum beta,
// whose stationary point makes inner rows and columns sum to one.
struct BalanceProblem {
  const Eigen::MatrixXd& log_kernel;
  const Eigen::VectorXd& log_out_row;
  const Eigen::VectorXd& log_out_col;

  Eigen::MatrixXd inner(const Eigen::VectorXd& alpha, const Eigen::VectorXd& beta) const {
    Eigen::MatrixXd m(log_kernel.rows(), log_kernel.cols());
    for (long j = 0; j < m.cols(); ++j)
      for (long i = 0; i < m.rows(); ++i) m(i, j) = std::exp(log_kernel(i, j) + alpha(i) + beta(j));
    return m;
  }
};

// Inner block, total row/column masses (outlier entries included) and the
// dual value at one (alpha, beta).
struct BalancePoint {
  Eigen::VectorXd alpha, beta;
  Eigen::MatrixXd m;
  Eigen::VectorXd row_mass, col_mass;
  double dual = 0.0;

  BalancePoint(const BalanceProblem& prob, Eigen::VectorXd a, Eigen::VectorXd b)
      : alpha(std::move(a)), beta(std::move(b)), m(prob.inner(alpha, beta)) {
    row_mass = m.rowwise().sum();
    col_mass = m.colwise().sum().transpose();
    dual = m.sum() - alpha.sum() - beta.sum();
    for (long i = 0; i < alpha.size(); ++i) {
      const double o = std::exp(prob.log_out_row(i) + alpha(i));
      row_mass(i) += o;
      dual += o;
    }
    for (long j = 0; j < beta.size(); ++j) {
      const double o = std::exp(prob.log_out_col(j) + beta(j));
      col_mass(j) += o;
      dual += o;
    }
  }
};

// Damped Newton on the dual. Plain alternation stalls at low temperature,
// where it only trickles mass between near-tied candidates; the Hessian
// is strictly diagonally dominant thanks to the outlier entries.
inline double newton_balance(const BalanceProblem& prob, Eigen::VectorXd& alpha, Eigen::VectorXd& beta,
                             double tolerance, int max_steps = 50) {
  const long nu = alpha.size(), nv = beta.size();
  BalancePoint cur(prob, alpha, beta);
  double err = std::numeric_limits<double>::infinity();
  for (int step = 0; step <= max_steps; ++step) {
    Eigen::VectorXd grad(nu + nv);
    grad << cur.row_mass.array() - 1.0, cur.col_mass.array() - 1.0;
    const double previous = err;
    err = grad.cwiseAbs().maxCoeff();
    if (err < tolerance || step == max_steps) break;
    if (err < 1e-8 && err > 0.5 * previous) break;  // at the rounding floor

    // Newton direction from the Schur complement of the larger diagonal
    // block. The Hessian is nearly singular along moves that only trade
    // outlier mass; a gradient-sized ridge keeps those steps bounded.
    const Eigen::MatrixXd& m = cur.m;
    const Eigen::VectorXd ro = cur.row_mass.array() + err;
    const Eigen::VectorXd co = cur.col_mass.array() + err;
    Eigen::VectorXd delta(nu + nv);
    if (nu <= nv) {
      const Eigen::MatrixXd mb = m * co.cwiseInverse().asDiagonal();
      Eigen::MatrixXd schur = -mb * m.transpose();
      schur.diagonal() += ro;
      const Eigen::VectorXd x = schur.llt().solve(-grad.head(nu) + mb * grad.tail(nv));
      delta << x, (-grad.tail(nv) - m.transpose() * x).cwiseQuotient(co);
    } else {
      const Eigen::MatrixXd ma = m.transpose() * ro.cwiseInverse().asDiagonal();
      Eigen::MatrixXd schur = -ma * m;
      schur.diagonal() += co;
      const Eigen::VectorXd y = schur.llt().solve(-grad.tail(nv) + ma * grad.head(nu));
      delta << (-grad.head(nu) - m * y).cwiseQuotient(ro), y;
    }
    if (!delta.allFinite()) break;

    const double slope = grad.dot(delta);
    if (!(slope < 0.0)) break;
    double t = 1.0;
    bool moved = false;
    for (int k = 0; k < 40; ++k, t *= 0.5) {
      BalancePoint next(prob, cur.alpha + t * delta.head(nu), cur.beta + t * delta.tail(nv));
      if (next.dual <= cur.dual + 1e-4 * t * slope) {
        cur = std::move(next);
        moved = true;
        break;
      }
    }
    if (!moved) break;
  }
  alpha = cur.alpha;
  beta = cur.beta;
  return err;
}

struct SinkhornState {
  Eigen::VectorXd alpha;  // row duals (log scale)
  Eigen::VectorXd beta;   // column duals (log scale)
};

// Balances exp(-cost/(2T) - log T + alpha_i + beta_j) with outlier entries
// exp(log_out_row_i + alpha_i) (column Nv) and exp(log_out_col_j + beta_j)
// (row Nu) so that inner rows and columns sum to one. Runs up to
// max_iterations alternating normalizations, then finishes with Newton steps
// if the marginals are still off by more than `tolerance`. Starts from the
// duals in `state` (if sized) and leaves the final duals there.
inline CorrespondenceMatrix sinkhorn(const Eigen::MatrixXd& cost, double temperature,
                                     const Eigen::VectorXd& log_out_row, const Eigen::VectorXd& log_out_col,
                                     int max_iterations, double tolerance, SinkhornState& state,
                                     bool polish = true) {
  const long nu = cost.rows();
  const long nv = cost.cols();
  const Eigen::MatrixXd log_kernel = (-cost / (2.0 * temperature)).array() - std::log(temperature);
  if (state.beta.size() != nv) state.beta = Eigen::VectorXd::Zero(nv);
  state.alpha.resize(nu);

  std::vector<double> buf(static_cast<size_t>(nv + 1));
  for (long i = 0; i < nu; ++i) {
    for (long j = 0; j < nv; ++j) buf[static_cast<size_t>(j)] = log_kernel(i, j) + state.beta(j);
    buf[static_cast<size_t>(nv)] = log_out_row(i);
    state.alpha(i) = -log_sum_exp(buf);
  }

  const BalanceProblem prob{log_kernel, log_out_row, log_out_col};
  Eigen::MatrixXd g;
  Eigen::VectorXd o(nu), r(nv), a(nu), b(nv);
  const auto rebuild = [&]() {
    g = prob.inner(state.alpha, state.beta);
    for (long i = 0; i < nu; ++i) o(i) = std::exp(log_out_row(i) + state.alpha(i));
    for (long j = 0; j < nv; ++j) r(j) = std::exp(log_out_col(j) + state.beta(j));
    a.setOnes();
    b.setOnes();
  };
  const auto absorb = [&]() {
    state.alpha += a.array().log().matrix();
    state.beta += b.array().log().matrix();
    rebuild();
  };
  rebuild();

  double err = std::numeric_limits<double>::infinity();
  for (int it = 0; it < std::max(max_iterations, 1); ++it) {
    // Column update makes columns exact; then measure the row error.
    const Eigen::VectorXd col = g.transpose() * a;
    for (long j = 0; j < nv; ++j) b(j) = 1.0 / (col(j) + r(j));
    const Eigen::VectorXd row = g * b;
    err = 0.0;
    for (long i = 0; i < nu; ++i) err = std::max(err, std::abs(a(i) * (row(i) + o(i)) - 1.0));
    if (err < tolerance) break;
    for (long i = 0; i < nu; ++i) a(i) = 1.0 / (row(i) + o(i));
    if (a.maxCoeff() > 1e100 || b.maxCoeff() > 1e100 || a.minCoeff() < 1e-100 || b.minCoeff() < 1e-100) absorb();
  }
  state.alpha += a.array().log().matrix();
  state.beta += b.array().log().matrix();

  CorrespondenceMatrix cm;
  cm.temperature = temperature;
  cm.m = Eigen::MatrixXd::Zero(nu + 1, nv + 1);
  if (polish && !(err < tolerance)) {
    newton_balance(prob, state.alpha, state.beta, tolerance);
    cm.m.topLeftCorner(nu, nv) = prob.inner(state.alpha, state.beta);
    for (long i = 0; i < nu; ++i) cm.m(i, nv) = std::exp(log_out_row(i) + state.alpha(i));
    for (long j = 0; j < nv; ++j) cm.m(nu, j) = std::exp(log_out_col(j) + state.beta(j));
  } else {
    cm.m.topLeftCorner(nu, nv) = a.asDiagonal() * g * b.asDiagonal();
    cm.m.col(nv).head(nu) = a.cwiseProduct(o);
    cm.m.row(nu).head(nv) = b.cwiseProduct(r).transpose();
  }
  return cm;
}

inline Eigen::MatrixXd squared_distances(std::span<const Point2> u, std::span<const Point2> fv) {
  Eigen::MatrixXd c(static_cast<long>(u.size()), static_cast<long>(fv.size()));
  for (long j = 0; j < c.cols(); ++j)
    for (long i = 0; i < c.rows(); ++i) c(i, j) = squared_norm(u[static_cast<size_t>(i)] - fv[static_cast<size_t>(j)]);
  return c;
}

inline Point2 mean_point(std::span<const Point2> pts) {
  Point2 c;
  for (const auto& p : pts) c += p;
  return c / static_cast<double>(std::max<size_t>(pts.size(), 1));
}

inline Eigen::VectorXd centroid_log_kernel(std::span<const Point2> pts, double outlier_temperature) {
  const Point2 c = mean_point(pts);
  Eigen::VectorXd out(static_cast<long>(pts.size()));
  for (long i = 0; i < out.size(); ++i)
    out(i) = -squared_norm(pts[static_cast<size_t>(i)] - c) / (2.0 * outlier_temperature) - std::log(outlier_temperature);
  return out;
}

}  // namespace detail

// m_ij proportional to exp(-|u_i - f(v_j)|^2 / (2T)) / T; outlier entries use
// the distance to the respective cloud centroid at outlier_temperature, with
// the same 1/T density factor. Followed by alternating row/column
// normalization.
inline CorrespondenceMatrix update_correspondences(std::span<const Point2> u, std::span<const Point2> f_of_v,
                                                   double temperature, double outlier_temperature,
                                                   int sinkhorn_iters, double tolerance = 1e-10) {
  if (!(temperature > 0.0) || !(outlier_temperature > 0.0))
    throw Error(ErrorCode::kInvalidArgument, "temperatures must be positive");
  if (u.empty() || f_of_v.empty()) throw Error(ErrorCode::kInvalidArgument, "empty point set");
  detail::SinkhornState state;
  return detail::sinkhorn(detail::squared_distances(u, f_of_v), temperature,
                          detail::centroid_log_kernel(u, outlier_temperature),
                          detail::centroid_log_kernel(f_of_v, outlier_temperature), sinkhorn_iters, tolerance, state);
}

struct TpsRpmParams {
  double t_init_factor = 0.01;
  double anneal_rate = 0.93;
  double t_final_factor = 1e-4;
  double lambda_init = 30.0;
  int sinkhorn_iters = 20;
  double sinkhorn_tolerance = 1e-10;
  // <= 0 selects the automatic value (max squared pairwise distance).
  double outlier_temperature = 0.0;
  int iterations_per_temperature = 1;
  bool record_trace = true;  // per half-step energies in TpsRpmResult::trace
  bool newton_polish = true;  // finish unbalanced Sinkhorn runs with Newton steps

  void validate() const {
    if (!(anneal_rate > 0.0 && anneal_rate < 1.0)) throw Error(ErrorCode::kInvalidArgument, "anneal_rate must be in (0,1)");
    if (!(t_init_factor > 0.0) || !(t_final_factor > 0.0)) throw Error(ErrorCode::kInvalidArgument, "temperature factors must be positive");
    if (lambda_init < 0.0) throw Error(ErrorCode::kInvalidArgument, "lambda_init must be >= 0");
    if (sinkhorn_iters < 1 || iterations_per_temperature < 1) throw Error(ErrorCode::kInvalidArgument, "iteration counts must be >= 1");
  }
};

// One alternating half-step of the annealing loop, in normalized coordinates.
struct RpmTraceEntry {
  double temperature = 0.0;
  int iteration = 0;
  bool after_mapping_update = false;
  double energy = 0.0;       // sum m_ij |u_i - f(v_j)|^2 + lambda * bending
  double free_energy = 0.0;  // energy + density and outlier costs + 2T * sum m (log m - 1)
};

struct TpsRpmResult {
  CorrespondenceMatrix correspondence;
  TpsMapping mapping;  // caller coordinates, acting on the pre-warped source points
  std::optional<Homography> prewarp;
  std::vector<Point2> source;  // pre-warped source points
  double energy = 0.0;         // final annealing objective, normalized coordinates
  double t_init = 0.0;
  double t_final = 0.0;
  double lambda_final = 0.0;    // normalized coordinates
  double normalization_scale = 1.0;
  std::vector<RpmTraceEntry> trace;

  Point2 map(Point2 p) const { return mapping.apply(prewarp ? prewarp->apply(p) : p); }
};

namespace detail {

inline double rpm_energy(const CorrespondenceMatrix& cm, const Eigen::MatrixXd& cost, double lambda, double bending) {
  const long nu = cost.rows(), nv = cost.cols();
  return (cm.m.topLeftCorner(nu, nv).array() * cost.array()).sum() + lambda * bending;
}

inline double rpm_free_energy(const CorrespondenceMatrix& cm, const Eigen::MatrixXd& cost, double temperature,
                              const Eigen::VectorXd& log_out_row, const Eigen::VectorXd& log_out_col,
                              double lambda, double bending) {
  const long nu = cost.rows(), nv = cost.cols();
  const double two_t = 2.0 * temperature;
  double e = rpm_energy(cm, cost, lambda, bending);
  e += two_t * std::log(temperature) * cm.m.topLeftCorner(nu, nv).sum();
  for (long i = 0; i < nu; ++i) e += cm.m(i, nv) * (-two_t * log_out_row(i));
  for (long j = 0; j < nv; ++j) e += cm.m(nu, j) * (-two_t * log_out_col(j));
  double ent = 0.0;
  for (long i = 0; i <= nu; ++i)
    for (long j = 0; j <= nv; ++j) {
      if (i == nu && j == nv) continue;
      const double m = cm.m(i, j);
      if (m > 0.0) ent += m * (std::log(m) - 1.0);
    }
  return e + two_t * ent;
}

inline double max_squared_pairwise(std::span<const Point2> pts) {
  double best = 0.0;
  for (size_t i = 0; i < pts.size(); ++i)
    for (size_t j = i + 1; j < pts.size(); ++j) best = std::max(best, squared_norm(pts[i] - pts[j]));
  return best;
}

inline double mean_squared_nn(std::span<const Point2> pts) {
  if (pts.size() < 2) return 0.0;
  double total = 0.0;
  for (size_t i = 0; i < pts.size(); ++i) {
    double best = std::numeric_limits<double>::infinity();
    for (size_t j = 0; j < pts.size(); ++j)
      if (j != i) best = std::min(best, squared_norm(pts[i] - pts[j]));
    total += best;
  }
  return total / static_cast<double>(pts.size());
}

}  // namespace detail

// Deterministic annealing TPS-RPM. Both clouds share one normalization
// (zero mean, unit RMS radius over their union) so a warm start by `init`
// is preserved. Per temperature T: update M, form the weighted estimates
// y_j = sum_i m_ij u_i / sum_i m_ij, refit the TPS with lambda_init * T.
inline TpsRpmResult tps_rpm(std::span<const Point2> u, std::span<const Point2> v, const TpsRpmParams& params = {},
                            std::optional<Homography> init = std::nullopt) {
  params.validate();
  if (u.empty() || v.empty()) throw Error(ErrorCode::kInvalidArgument, "tps_rpm needs nonempty point sets");
  TpsRpmResult res;
  res.prewarp = init;
  res.source.reserve(v.size());
  for (const auto& p : v) res.source.push_back(init ? init->apply(p) : p);

  std::vector<Point2> both(u.begin(), u.end());
  both.insert(both.end(), res.source.begin(), res.source.end());
  const auto frame = detail::rms_frame(both);
  res.normalization_scale = frame.scale;
  std::vector<Point2> un, vn;
  for (const auto& p : u) un.push_back(frame.to(p));
  for (const auto& p : res.source) vn.push_back(frame.to(p));
  if (vn.size() < 3 || detail::nearly_collinear(vn))
    throw Error(ErrorCode::kDegenerateControlPoints, "source points cannot support a TPS");

  std::vector<Point2> both_n(un);
  both_n.insert(both_n.end(), vn.begin(), vn.end());
  const double spread_all = detail::max_squared_pairwise(both_n);
  const double t_out = params.outlier_temperature > 0.0 ? params.outlier_temperature : spread_all;
  res.t_init = params.t_init_factor * spread_all;
  res.t_final = params.t_final_factor * 0.5 * (detail::mean_squared_nn(un) + detail::mean_squared_nn(vn));
  if (!(res.t_final > 0.0)) res.t_final = 1e-6 * spread_all;
  res.t_final = std::min(res.t_final, res.t_init);

  const Eigen::VectorXd log_out_row = detail::centroid_log_kernel(un, t_out);
  const Eigen::VectorXd log_out_col = detail::centroid_log_kernel(vn, t_out);

  TpsMapping f = TpsMapping::identity(vn);
  double bending = 0.0;
  detail::SinkhornState duals;
  CorrespondenceMatrix cm;
  Eigen::MatrixXd cost;
  double lambda = params.lambda_init * res.t_init;
  std::vector<double> weights(vn.size());
  std::vector<Point2> targets(vn.size());

  cost = detail::squared_distances(un, vn);
  const auto step_count = [&]() {
    return static_cast<int>(std::floor(std::log(res.t_final / res.t_init) / std::log(params.anneal_rate) + 1e-9)) + 1;
  }();
  for (int step = 0; step < step_count; ++step) {
    const double temp = res.t_init * std::pow(params.anneal_rate, step);
    lambda = params.lambda_init * temp;
    for (int it = 0; it < params.iterations_per_temperature; ++it) {
      cm = detail::sinkhorn(cost, temp, log_out_row, log_out_col, params.sinkhorn_iters, params.sinkhorn_tolerance,
                            duals, params.newton_polish);
      if (params.record_trace)
        res.trace.push_back({temp, it, false, detail::rpm_energy(cm, cost, lambda, bending),
                             detail::rpm_free_energy(cm, cost, temp, log_out_row, log_out_col, lambda, bending)});

      const long nu = static_cast<long>(un.size());
      for (size_t j = 0; j < vn.size(); ++j) {
        const long jj = static_cast<long>(j);
        double c = 0.0;
        Point2 y;
        for (long i = 0; i < nu; ++i) {
          c += cm.m(i, jj);
          y += cm.m(i, jj) * un[static_cast<size_t>(i)];
        }
        weights[j] = std::max(c, 1e-10);
        targets[j] = c > 0.0 ? y / c : vn[j];
      }
      f = fit_tps(targets, vn, lambda, std::span<const double>(weights));
      cost = detail::squared_distances(un, apply_tps(f, vn));
      if (params.record_trace) {
        bending = bending_energy(f);
        res.trace.push_back({temp, it, true, detail::rpm_energy(cm, cost, lambda, bending),
                             detail::rpm_free_energy(cm, cost, temp, log_out_row, log_out_col, lambda, bending)});
      }
    }
  }
  res.correspondence = cm;
  bending = bending_energy(f);
  res.energy = detail::rpm_energy(cm, cost, lambda, bending);
  res.lambda_final = lambda;

  // Same normalization on both sides: conjugate back to caller coordinates.
  Eigen::Matrix<double, 3, 2> a_n;
  a_n.row(0) = f.affine.block<2, 1>(0, 2).transpose();
  a_n.row(1) = f.affine.block<2, 1>(0, 0).transpose();
  a_n.row(2) = f.affine.block<2, 1>(0, 1).transpose();
  res.mapping = detail::denormalize(f.warp, a_n, res.source, frame, frame, lambda / (frame.scale * frame.scale));
  return res;
}

}  // namespace motionalign
