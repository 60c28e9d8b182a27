#pragma once

// Quadratic programs over the capped simplex D = {w : sum(w) = 1, 0 <= w_j <= 1/k}.
//
// ipfp_solve alternates a linear oracle over D (the vertex holding 1/k on the
// k best gradient coordinates) with a closed-form line search. Two oracles
// that share no code path with it are provided for verification:
// brute_force_vertex_max enumerates every vertex, frank_wolfe_oracle runs a
// pairwise conditional-gradient method to a certified duality gap.

#include <Eigen/Dense>

#include <algorithm>
#include <cassert>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "ses/error.hpp"
#include "ses/feature_store.hpp"

namespace ses {

/// ConvexMin minimizes w'Mw - 2q'w; ConcaveMax maximizes w'Mw (q must be 0),
/// i.e. minimizes the concave -w'Mw.
enum class Sense { ConvexMin, ConcaveMax };

enum class OracleDirection { Max, Min };

inline constexpr double kSumTolerance = 1e-9;
inline constexpr double kBoxTolerance = 1e-12;

class WeightVector {
 public:
  WeightVector() = default;
  explicit WeightVector(Eigen::VectorXd w) : w_(std::move(w)) {}

  static WeightVector uniform(std::size_t n) {
    return WeightVector(Eigen::VectorXd::Constant(static_cast<Eigen::Index>(n), 1.0 / static_cast<double>(n)));
  }

  /// 1/k on each listed coordinate, 0 elsewhere.
  static WeightVector vertex(std::size_t n, std::span<const std::size_t> support) {
    Eigen::VectorXd w = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n));
    const double v = 1.0 / static_cast<double>(support.size());
    for (auto j : support) w(static_cast<Eigen::Index>(j)) = v;
    return WeightVector(std::move(w));
  }

  std::size_t size() const noexcept { return static_cast<std::size_t>(w_.size()); }
  double operator[](std::size_t j) const { return w_(static_cast<Eigen::Index>(j)); }
  const Eigen::VectorXd& values() const noexcept { return w_; }

  bool feasible(std::size_t k) const {
    if (k == 0 || w_.size() == 0 || !w_.allFinite()) return false;
    const double cap = 1.0 / static_cast<double>(k);
    if (std::abs(w_.sum() - 1.0) > kSumTolerance) return false;
    return w_.minCoeff() >= -kBoxTolerance && w_.maxCoeff() <= cap + kBoxTolerance;
  }

 private:
  Eigen::VectorXd w_;
};

/// Non-owning problem description; the terms must outlive it.
struct SolverProblem {
  std::reference_wrapper<const QuadraticTerms> terms;
  std::size_t k;
  Sense sense;

  SolverProblem(const QuadraticTerms& t, std::size_t budget, Sense s) : terms(t), k(budget), sense(s) {
    const auto n = t.features();
    if (n == 0 || t.M.cols() != t.M.rows()) throw DimensionError("quadratic term must be a non-empty square matrix");
    if (t.q.size() != t.M.rows()) throw DimensionError("linear term length does not match quadratic term");
    if (k < 1 || k > n)
      throw InvalidArgument("budget k=" + std::to_string(k) + " must lie in [1, " + std::to_string(n) + "]");
    if (!t.M.allFinite() || !t.q.allFinite()) throw InvalidArgument("quadratic terms contain NaN or infinity");
    if (s == Sense::ConcaveMax && t.q.size() > 0 && t.q.cwiseAbs().maxCoeff() != 0.0)
      throw InvalidArgument("the concave maximization sense requires a zero linear term");
  }

  const Eigen::MatrixXd& M() const { return terms.get().M; }
  const Eigen::VectorXd& q() const { return terms.get().q; }
  std::size_t n() const { return terms.get().features(); }

  /// w'Mw - 2q'w for ConvexMin, w'Mw for ConcaveMax.
  double objective(const Eigen::VectorXd& w) const {
    const double quad = w.dot(M() * w);
    return sense == Sense::ConvexMin ? quad - 2.0 * q().dot(w) : quad;
  }

  Eigen::VectorXd gradient(const Eigen::VectorXd& w) const {
    return sense == Sense::ConvexMin ? Eigen::VectorXd(2.0 * (M() * w - q())) : Eigen::VectorXd(2.0 * (M() * w));
  }

  OracleDirection oracle_direction() const {
    return sense == Sense::ConvexMin ? OracleDirection::Min : OracleDirection::Max;
  }
};

/// Indices of the k largest (Max) or smallest (Min) entries of c, ties to the
/// smaller index, returned in increasing index order.
inline std::vector<std::size_t> top_k_indices(const Eigen::VectorXd& c, std::size_t k, OracleDirection direction) {
  const auto n = static_cast<std::size_t>(c.size());
  if (k < 1 || k > n)
    throw InvalidArgument("budget k=" + std::to_string(k) + " must lie in [1, " + std::to_string(n) + "]");
  if (!c.allFinite()) throw InvalidArgument("linear oracle received a non-finite cost");
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  auto better = [&](std::size_t a, std::size_t b) {
    const double ca = c(static_cast<Eigen::Index>(a));
    const double cb = c(static_cast<Eigen::Index>(b));
    if (ca != cb) return direction == OracleDirection::Max ? ca > cb : ca < cb;
    return a < b;
  };
  std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k), idx.end(), better);
  idx.resize(k);
  std::sort(idx.begin(), idx.end());
  return idx;
}

inline WeightVector linear_oracle(const Eigen::VectorXd& c, std::size_t k, OracleDirection direction) {
  return WeightVector::vertex(static_cast<std::size_t>(c.size()), top_k_indices(c, k, direction));
}

struct LineSearchResult {
  double alpha = 0.0;
  bool stationary = false;  // b == w, no direction to move along
  double slope = 0.0;       // C = d'grad(w)
  double curvature = 0.0;   // D = d'Md
};

/// Step from the directional coefficients of f(w + a d) = f(w) + aC + a^2 D.
/// ConvexMin: exact minimizer on [0,1]. ConcaveMax: w'Mw is convex along any
/// segment, so a non-negative initial slope means the far endpoint is best.
inline double closed_form_step(Sense sense, double slope, double curvature) {
  if (sense == Sense::ConvexMin) {
    if (curvature <= 1e-15) return 1.0;
    return std::clamp(-slope / (2.0 * curvature), 0.0, 1.0);
  }
  return slope >= 0.0 ? 1.0 : 0.0;
}

inline LineSearchResult line_search(const SolverProblem& problem, const WeightVector& w, const WeightVector& b) {
  if (!w.feasible(problem.k) || !b.feasible(problem.k))
    throw InvalidArgument("line search requires feasible endpoints");
  if (w.size() != problem.n() || b.size() != problem.n()) throw DimensionError("line search endpoint length mismatch");
  LineSearchResult out;
  const Eigen::VectorXd d = b.values() - w.values();
  if (d.cwiseAbs().maxCoeff() == 0.0) {
    out.stationary = true;
    return out;
  }
  out.slope = d.dot(problem.gradient(w.values()));
  out.curvature = d.dot(problem.M() * d);
  out.alpha = closed_form_step(problem.sense, out.slope, out.curvature);
  return out;
}

struct SolveTrace {
  std::vector<double> objective_per_iteration;  // entry 0 is the starting point
  std::size_t iterations_used = 0;
  bool converged = false;
  double stationarity_gap = 0.0;  // |grad(w)'(b - w)| at exit

  double final_objective() const { return objective_per_iteration.back(); }

  /// Objective after `iteration` steps (the final value if the solve stopped
  /// earlier).
  double objective_at(std::size_t iteration) const {
    return objective_per_iteration[std::min(iteration, objective_per_iteration.size() - 1)];
  }
};

struct SolveResult {
  WeightVector w;
  SolveTrace trace;
};

struct IpfpOptions {
  std::size_t max_iters = 100;
  double tol = 1e-9;
};

/// Starting point used by the learners: the uniform vector is feasible for
/// every k.
inline WeightVector default_start(std::size_t n) { return WeightVector::uniform(n); }

template <class Rng>
WeightVector random_vertex(std::size_t n, std::size_t k, Rng& rng) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::shuffle(idx.begin(), idx.end(), rng);
  idx.resize(k);
  std::sort(idx.begin(), idx.end());
  return WeightVector::vertex(n, idx);
}

namespace detail {

inline double gap_at(const SolverProblem& problem, const Eigen::VectorXd& w, const Eigen::VectorXd& grad) {
  const auto b = linear_oracle(grad, problem.k, problem.oracle_direction());
  return std::abs(grad.dot(b.values() - w));
}

}  // namespace detail

/// Integer projected fixed point iteration. Every iterate stays in D and the
/// recorded objective is monotone (non-increasing for ConvexMin,
/// non-decreasing for ConcaveMax): a step whose rounded objective would break
/// monotonicity is refused and the solve stops there.
inline SolveResult ipfp_solve(const SolverProblem& problem, const WeightVector& w0, const IpfpOptions& options = {}) {
  const std::size_t n = problem.n();
  const std::size_t k = problem.k;
  if (w0.size() != n) throw DimensionError("starting point length does not match problem size");
  if (!w0.feasible(k)) throw InvalidArgument("starting point is outside the feasible polytope");

  const auto& M = problem.M();
  const auto& q = problem.q();
  const bool convex = problem.sense == Sense::ConvexMin;
  const double inv_k = 1.0 / static_cast<double>(k);

  SolveResult result;
  auto& trace = result.trace;

  if (k == n) {
    // D is the single point 1/n.
    Eigen::VectorXd w = WeightVector::uniform(n).values();
    trace.objective_per_iteration.push_back(problem.objective(w));
    trace.converged = true;
    result.w = WeightVector(std::move(w));
    return result;
  }

  Eigen::VectorXd w = w0.values();
  Eigen::VectorXd mw = M * w;
  auto objective = [&](const Eigen::VectorXd& x, const Eigen::VectorXd& mx) {
    const double quad = x.dot(mx);
    return convex ? quad - 2.0 * q.dot(x) : quad;
  };
  double obj = objective(w, mw);
  trace.objective_per_iteration.push_back(obj);

  Eigen::VectorXd grad(static_cast<Eigen::Index>(n));
  Eigen::VectorXd b(static_cast<Eigen::Index>(n));
  Eigen::VectorXd mb(static_cast<Eigen::Index>(n));

  for (std::size_t it = 1; it <= options.max_iters; ++it) {
    grad = convex ? Eigen::VectorXd(2.0 * (mw - q)) : Eigen::VectorXd(2.0 * mw);
    const auto support = top_k_indices(grad, k, problem.oracle_direction());
    b.setZero();
    mb.setZero();
    for (auto j : support) {
      b(static_cast<Eigen::Index>(j)) = inv_k;
      mb += M.col(static_cast<Eigen::Index>(j));
    }
    mb *= inv_k;

    const Eigen::VectorXd d = b - w;
    if (d.cwiseAbs().maxCoeff() == 0.0) {
      trace.converged = true;  // vertex fixed point
      break;
    }
    const Eigen::VectorXd md = mb - mw;
    const double slope = d.dot(grad);
    const double curvature = d.dot(md);
    const double alpha = closed_form_step(problem.sense, slope, curvature);
    if (alpha == 0.0) {
      trace.converged = true;
      break;
    }

    Eigen::VectorXd w_next;
    Eigen::VectorXd mw_next;
    if (alpha == 1.0) {
      w_next = b;
      mw_next = mb;
    } else {
      w_next = w + alpha * d;
      mw_next = mw + alpha * md;
    }
    const double obj_next = objective(w_next, mw_next);
    if (convex ? obj_next > obj : obj_next < obj) {
      trace.converged = true;  // improvement below rounding
      break;
    }
    const double change = std::abs(obj_next - obj);
    w = std::move(w_next);
    mw = std::move(mw_next);
    obj = obj_next;
    trace.objective_per_iteration.push_back(obj);
    trace.iterations_used = it;
#ifndef NDEBUG
    assert(WeightVector(w).feasible(k));
#endif
    if (change < options.tol) {
      trace.converged = true;
      break;
    }
  }

  grad = convex ? Eigen::VectorXd(2.0 * (mw - q)) : Eigen::VectorXd(2.0 * mw);
  trace.stationarity_gap = detail::gap_at(problem, w, grad);
  result.w = WeightVector(std::move(w));
  return result;
}

inline SolveResult ipfp_solve(const SolverProblem& problem, const IpfpOptions& options = {}) {
  return ipfp_solve(problem, default_start(problem.n()), options);
}

/// Binomial coefficient, saturating at `cap + 1`.
inline std::uint64_t binomial_capped(std::size_t n, std::size_t k, std::uint64_t cap) {
  if (k > n) return 0;
  k = std::min(k, n - k);
  long double acc = 1.0L;
  for (std::size_t i = 1; i <= k; ++i) {
    acc = acc * static_cast<long double>(n - k + i) / static_cast<long double>(i);
    if (acc > static_cast<long double>(cap)) return cap + 1;
  }
  return static_cast<std::uint64_t>(std::llround(static_cast<double>(acc)));
}

struct VertexOptimum {
  WeightVector w;
  double objective = 0.0;
  std::vector<std::size_t> support;
};

inline constexpr std::uint64_t kMaxEnumeratedVertices = 1'000'000;

/// Exact maximizer of w'Mw over D by enumerating every k-subset; a convex
/// function over a polytope peaks at a vertex. Ties go to the
/// lexicographically smallest subset.
inline VertexOptimum brute_force_vertex_max(const Eigen::MatrixXd& M, std::size_t k) {
  const auto n = static_cast<std::size_t>(M.rows());
  if (M.cols() != M.rows() || n == 0) throw DimensionError("matrix must be square and non-empty");
  if (k < 1 || k > n) throw InvalidArgument("budget k must lie in [1, n]");
  if (binomial_capped(n, k, kMaxEnumeratedVertices) > kMaxEnumeratedVertices)
    throw InvalidArgument("C(" + std::to_string(n) + "," + std::to_string(k) + ") exceeds the enumeration guard of " +
                          std::to_string(kMaxEnumeratedVertices) + " vertices");

  std::vector<std::size_t> subset(k);
  std::iota(subset.begin(), subset.end(), std::size_t{0});
  VertexOptimum best;
  double best_sum = -std::numeric_limits<double>::infinity();
  while (true) {
    double sum = 0.0;
    for (auto i : subset)
      for (auto j : subset) sum += M(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
    if (sum > best_sum) {
      best_sum = sum;
      best.support = subset;
    }
    // next combination in lexicographic order
    std::size_t pos = k;
    while (pos > 0 && subset[pos - 1] == n - k + pos - 1) --pos;
    if (pos == 0) break;
    ++subset[pos - 1];
    for (std::size_t p = pos; p < k; ++p) subset[p] = subset[p - 1] + 1;
  }
  best.objective = best_sum / static_cast<double>(k * k);
  best.w = WeightVector::vertex(n, best.support);
  return best;
}

struct FrankWolfeOptions {
  double gap_target = 1e-6;
  std::size_t iter_cap = 100'000;
};

struct FrankWolfeResult {
  WeightVector w;
  double gap = 0.0;
  std::size_t iterations = 0;
};

/// Pairwise conditional gradient for ConvexMin with exact line search. Each
/// step moves mass from the away vertex (the worst vertex of the smallest face
/// containing w) to the Frank-Wolfe vertex, which keeps the iterate on low
/// dimensional faces and converges linearly for strongly convex objectives.
/// Stops once the duality gap grad'(w - b) reaches `gap_target`.
inline FrankWolfeResult frank_wolfe_oracle(const SolverProblem& problem, const FrankWolfeOptions& options = {}) {
  if (problem.sense != Sense::ConvexMin) throw InvalidArgument("frank_wolfe_oracle handles the convex sense only");
  const std::size_t n = problem.n();
  const std::size_t k = problem.k;
  const auto& M = problem.M();
  const auto& q = problem.q();
  const double cap = 1.0 / static_cast<double>(k);
  constexpr double kFace = 1e-13;

  Eigen::VectorXd w = WeightVector::uniform(n).values();
  if (k == n) return {WeightVector(std::move(w)), 0.0, 0};
  Eigen::VectorXd mw = M * w;
  Eigen::VectorXd grad(static_cast<Eigen::Index>(n));
  double best_gap = std::numeric_limits<double>::infinity();

  std::vector<std::size_t> free_idx;
  for (std::size_t it = 0; it < options.iter_cap; ++it) {
    if (it % 256 == 255) mw = M * w;  // bound drift of the running product
    grad = 2.0 * (mw - q);
    const auto fw = top_k_indices(grad, k, OracleDirection::Min);
    double grad_b = 0.0;
    for (auto j : fw) grad_b += grad(static_cast<Eigen::Index>(j)) * cap;
    const double gap = grad.dot(w) - grad_b;
    best_gap = std::min(best_gap, gap);
    if (gap <= options.gap_target) return {WeightVector(std::move(w)), gap, it};

    // away vertex: coordinates at the cap are forced in, zeros are excluded,
    // the rest filled by largest gradient
    std::vector<std::size_t> away;
    free_idx.clear();
    for (std::size_t j = 0; j < n; ++j) {
      const double wj = w(static_cast<Eigen::Index>(j));
      if (wj >= cap - kFace)
        away.push_back(j);
      else if (wj > kFace)
        free_idx.push_back(j);
    }
    if (away.size() > k || away.size() + free_idx.size() < k)
      throw SolverError("iterate left the polytope inside frank_wolfe_oracle", best_gap);
    const std::size_t need = k - away.size();
    std::partial_sort(free_idx.begin(), free_idx.begin() + static_cast<std::ptrdiff_t>(need), free_idx.end(),
                      [&](std::size_t a, std::size_t b) {
                        const double ga = grad(static_cast<Eigen::Index>(a));
                        const double gb = grad(static_cast<Eigen::Index>(b));
                        return ga != gb ? ga > gb : a < b;
                      });
    away.insert(away.end(), free_idx.begin(), free_idx.begin() + static_cast<std::ptrdiff_t>(need));

    Eigen::VectorXd d = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n));
    for (auto j : fw) d(static_cast<Eigen::Index>(j)) += cap;
    for (auto j : away) d(static_cast<Eigen::Index>(j)) -= cap;

    double alpha_max = std::numeric_limits<double>::infinity();
    Eigen::Index blocking = -1;
    for (Eigen::Index j = 0; j < d.size(); ++j) {
      double limit = std::numeric_limits<double>::infinity();
      if (d(j) > 0.0)
        limit = (cap - w(j)) / d(j);
      else if (d(j) < 0.0)
        limit = w(j) / -d(j);
      if (limit < alpha_max) {
        alpha_max = limit;
        blocking = j;
      }
    }
    if (blocking < 0) {
      // away and Frank-Wolfe vertices coincide: the gradient is constant on
      // the face of w, so w is optimal up to rounding
      return {WeightVector(std::move(w)), std::max(gap, 0.0), it};
    }

    Eigen::VectorXd md = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n));
    for (auto j : fw) md += cap * M.col(static_cast<Eigen::Index>(j));
    for (auto j : away) md -= cap * M.col(static_cast<Eigen::Index>(j));
    const double slope = grad.dot(d);
    const double curvature = d.dot(md);
    double alpha = curvature > 0.0 ? std::clamp(-slope / (2.0 * curvature), 0.0, alpha_max) : alpha_max;
    if (!(alpha > 0.0)) {
      if (gap <= options.gap_target * 10.0) return {WeightVector(std::move(w)), gap, it};
      throw SolverError("frank_wolfe_oracle stalled before reaching the gap target", best_gap);
    }
    w += alpha * d;
    mw += alpha * md;
    if (alpha == alpha_max) w(blocking) = d(blocking) > 0.0 ? cap : 0.0;
    for (Eigen::Index j = 0; j < w.size(); ++j) w(j) = std::clamp(w(j), 0.0, cap);
  }
  throw SolverError("frank_wolfe_oracle did not reach gap " + std::to_string(options.gap_target) + " within " +
                        std::to_string(options.iter_cap) + " iterations (best gap " + std::to_string(best_gap) + ")",
                    best_gap);
}

}  // namespace ses
