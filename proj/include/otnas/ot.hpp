#pragma once

#include <Eigen/Cholesky>
#include <Eigen/Core>
#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

#include "otnas/dataio.hpp"
#include "otnas/errors.hpp"
#include "otnas/types.hpp"

namespace otnas {

// Empirical measure sum_i w_i delta_{x_i}; one point per row.
template <typename Scalar>
struct BasicDiscreteDistribution {
  MatrixX<Scalar> points;
  VectorX<Scalar> weights;

  static BasicDiscreteDistribution uniform(MatrixX<Scalar> pts) {
    const Index n = pts.rows();
    return {std::move(pts), VectorX<Scalar>::Constant(n, Scalar(1) / Scalar(n))};
  }
};

template <typename Scalar>
struct BasicTransportResult {
  MatrixX<Scalar> plan;
  Scalar transport_cost = 0;
  int iterations = 0;
  Scalar marginal_error = 0;
  bool converged = false;
  Scalar epsilon = 0;
};

template <typename Scalar>
struct BasicClassGaussian {
  int class_id = 0;
  VectorX<Scalar> mean;
  MatrixX<Scalar> covariance;
};

using DiscreteDistribution = BasicDiscreteDistribution<double>;
using TransportResult = BasicTransportResult<double>;
using ClassGaussian = BasicClassGaussian<double>;

/// Squared Euclidean ground cost, C(i, j) = |x_i - y_j|^2 over rows.
template <typename DerivedX, typename DerivedY>
MatrixX<typename DerivedX::Scalar> cost_matrix(const Eigen::MatrixBase<DerivedX>& x,
                                               const Eigen::MatrixBase<DerivedY>& y) {
  if (x.cols() != y.cols()) {
    throw ShapeError("cost_matrix: dimension mismatch (" + std::to_string(x.cols()) + " vs " +
                     std::to_string(y.cols()) + ")");
  }
  MatrixX<typename DerivedX::Scalar> c(x.rows(), y.rows());
  for (Index j = 0; j < y.rows(); ++j) {
    for (Index i = 0; i < x.rows(); ++i) c(i, j) = (x.row(i) - y.row(j)).squaredNorm();
  }
  return c;
}

namespace detail {

template <typename Derived>
void check_simplex(const Eigen::MatrixBase<Derived>& w, const char* which) {
  using Scalar = typename Derived::Scalar;
  if (w.size() == 0) throw PreconditionError(std::string(which) + " is empty");
  if ((w.array() < Scalar(0)).any() || !w.allFinite()) {
    throw PreconditionError(std::string(which) + " has negative or non-finite entries");
  }
  if (std::abs(w.sum() - Scalar(1)) > Scalar(1e-12)) {
    throw PreconditionError(std::string(which) + " does not sum to 1");
  }
}

template <typename Scalar>
Scalar log_or_neg_inf(Scalar v) {
  return v > Scalar(0) ? std::log(v) : -std::numeric_limits<Scalar>::infinity();
}

}  // namespace detail

/// Entropic OT by log-domain Sinkhorn iterations, accelerated near the
/// fixed point by Newton steps on the dual. The reported transport_cost is
/// <C, P> without the entropy term. Iteration stops once the larger of the
/// row/column L1 marginal violations is <= tol.
template <typename DerivedC, typename DerivedA, typename DerivedB>
BasicTransportResult<typename DerivedC::Scalar> sinkhorn(const Eigen::MatrixBase<DerivedC>& cost,
                                                         const Eigen::MatrixBase<DerivedA>& a,
                                                         const Eigen::MatrixBase<DerivedB>& b,
                                                         typename DerivedC::Scalar epsilon, int max_iter,
                                                         typename DerivedC::Scalar tol) {
  using Scalar = typename DerivedC::Scalar;
  const Index n = cost.rows(), m = cost.cols();
  if (a.size() != n || b.size() != m) throw ShapeError("sinkhorn: marginal sizes do not match the cost matrix");
  if (!(epsilon > Scalar(0))) throw PreconditionError("sinkhorn: epsilon must be > 0");
  if (!cost.allFinite() || (cost.array() < Scalar(0)).any()) {
    throw PreconditionError("sinkhorn: cost matrix must be finite and nonnegative");
  }
  detail::check_simplex(a, "sinkhorn: a");
  detail::check_simplex(b, "sinkhorn: b");

  const VectorX<Scalar> mass_a = a.template cast<Scalar>();
  const VectorX<Scalar> mass_b = b.template cast<Scalar>();
  const auto safe_log = [](Scalar v) { return detail::log_or_neg_inf(v); };
  const ArrayX<Scalar> log_a = mass_a.array().unaryExpr(safe_log);
  const ArrayX<Scalar> log_b = mass_b.array().unaryExpr(safe_log);
  const MatrixX<Scalar> scaled = cost / epsilon;  // C / eps

  // Dual potentials divided by epsilon.
  ArrayX<Scalar> f = ArrayX<Scalar>::Zero(n);
  ArrayX<Scalar> g = ArrayX<Scalar>::Zero(m);
  MatrixX<Scalar> kernel(n, m);

  auto log_sum_exp_rows = [&](const MatrixX<Scalar>& z) {
    ArrayX<Scalar> out(z.rows());
    for (Index i = 0; i < z.rows(); ++i) {
      const Scalar peak = z.row(i).maxCoeff();
      out(i) = std::isinf(peak) ? peak : peak + std::log((z.row(i).array() - peak).exp().sum());
    }
    return out;
  };
  auto log_sum_exp_cols = [&](const MatrixX<Scalar>& z) {
    ArrayX<Scalar> out(z.cols());
    for (Index j = 0; j < z.cols(); ++j) {
      const Scalar peak = z.col(j).maxCoeff();
      out(j) = std::isinf(peak) ? peak : peak + std::log((z.col(j).array() - peak).exp().sum());
    }
    return out;
  };
  auto guard = [](const ArrayX<Scalar>& v, int iter) {
    if (v.isNaN().any()) throw NumericalError("sinkhorn: NaN in dual potentials at iteration " + std::to_string(iter));
  };

  // Plan and its L1 marginal violation for the current potentials.
  auto refresh = [&](int iter) {
    kernel = ((-scaled).colwise() + f.matrix()).rowwise() + g.matrix().transpose();
    kernel = kernel.array().exp().matrix();
    const Scalar row_err = (kernel.rowwise().sum() - mass_a).cwiseAbs().sum();
    const Scalar col_err = (kernel.colwise().sum().transpose() - mass_b).cwiseAbs().sum();
    const Scalar err = std::max(row_err, col_err);
    if (std::isnan(err)) throw NumericalError("sinkhorn: NaN in plan at iteration " + std::to_string(iter));
    return err;
  };
  // Concave dual objective in the scaled potentials.
  auto dual = [&](const ArrayX<Scalar>& u, const ArrayX<Scalar>& v) {
    const MatrixX<Scalar> z = ((-scaled).colwise() + u.matrix()).rowwise() + v.matrix().transpose();
    return (mass_a.array() * u).sum() + (mass_b.array() * v).sum() - z.array().exp().sum();
  };
  // Sinkhorn's linear rate degrades badly when eps is small relative to the
  // cost spread. Once a few plain iterations have run, each iteration is
  // followed by one damped Newton step on the same dual (with the column
  // marginals exact, the Schur complement in f is an n x n system). Steps
  // that fail the line search are dropped and plain iteration continues.
  const bool positive_mass = (mass_a.array() > Scalar(0)).all() && (mass_b.array() > Scalar(0)).all();
  const bool use_newton = positive_mass && n > 1 && n <= 2000;
  constexpr int kNewtonStart = 10;

  Scalar error = std::numeric_limits<Scalar>::infinity();
  auto newton_step = [&]() -> bool {
    const VectorX<Scalar> r = kernel.rowwise().sum();
    const VectorX<Scalar> c = kernel.colwise().sum().transpose();
    if ((c.array() <= Scalar(0)).any()) return false;
    // With columns balanced, diag(r) - P diag(1/c) P^T is the Laplacian of
    // W = P diag(1/c) P^T; building it from W avoids cancellation on the
    // diagonal when the plan is nearly a permutation.
    MatrixX<Scalar> schur = -(kernel * c.cwiseInverse().asDiagonal() * kernel.transpose());
    schur.diagonal().setZero();
    schur.diagonal() = -schur.rowwise().sum();
    // Rows tied to the rest only through underflowing entries would get
    // roundoff-driven giant moves; a little damping keeps them still.
    schur.diagonal() += Scalar(1e-10) * r;
    const VectorX<Scalar> grad_f = mass_a - r;
    const Index k = n - 1;  // (1, -1) is a null direction; pin the last f
    const VectorX<Scalar> du_head = schur.topLeftCorner(k, k).ldlt().solve(grad_f.head(k));
    if (!du_head.allFinite()) return false;
    VectorX<Scalar> du = VectorX<Scalar>::Zero(n);
    du.head(k) = du_head;
    VectorX<Scalar> dv = -(c.cwiseInverse().asDiagonal() * (kernel.transpose() * du));
    // Nearly disconnected plans give a nearly singular Laplacian and an
    // enormous direction; cap the move in the scaled potentials.
    const Scalar span = std::max(du.cwiseAbs().maxCoeff(), dv.cwiseAbs().maxCoeff());
    constexpr Scalar kMaxMove = 8;
    if (span > kMaxMove) {
      du *= kMaxMove / span;
      dv *= kMaxMove / span;
    }
    // Armijo on the dual, or any drop in the marginal violation: close to
    // the optimum the dual gain falls below the rounding error of the
    // potentials and only the latter still registers progress.
    const Scalar slope = grad_f.dot(du) + (mass_b - c).dot(dv);
    const Scalar base_dual = dual(f, g);
    const Scalar base_error = error;
    const ArrayX<Scalar> f0 = f, g0 = g;
    for (Scalar t = 1; t > Scalar(1e-3); t *= Scalar(0.5)) {
      f = f0 + t * du.array();
      g = g0 + t * dv.array();
      const Scalar value = refresh(0);
      if (!std::isfinite(value)) continue;
      const bool ascent = slope > Scalar(0) && dual(f, g) >= base_dual + Scalar(1e-4) * t * slope;
      if (ascent || value < base_error) {
        error = value;
        return true;
      }
    }
    f = f0;
    g = g0;
    refresh(0);
    return false;
  };

  BasicTransportResult<Scalar> result;
  result.epsilon = epsilon;
  int iter = 0;
  while (iter < max_iter) {
    ++iter;
    kernel = (-scaled).rowwise() + g.matrix().transpose();
    f = log_a - log_sum_exp_rows(kernel);
    guard(f, iter);
    kernel = (-scaled).colwise() + f.matrix();
    g = log_b - log_sum_exp_cols(kernel);
    guard(g, iter);

    // Row marginals carry all of the violation right after the g update;
    // column sums are measured too so the reported error is honest.
    error = refresh(iter);
    if (error <= tol) break;
    if (use_newton && iter >= kNewtonStart && newton_step() && error <= tol) break;
  }
  result.plan = std::move(kernel);
  result.iterations = iter;
  result.marginal_error = error;
  result.converged = error <= tol;
  result.transport_cost = (result.plan.array() * cost.array()).sum();
  return result;
}

/// (1/n) min over permutations of sum_i C(i, sigma(i)) by exhaustive enumeration.
template <typename Derived>
typename Derived::Scalar exact_ot_enumerate(const Eigen::MatrixBase<Derived>& cost) {
  using Scalar = typename Derived::Scalar;
  const Index n = cost.rows();
  if (n != cost.cols() || n == 0) throw PreconditionError("exact_ot_enumerate: need a non-empty square cost");
  if (n > 8) throw PreconditionError("exact_ot_enumerate: n > 8 is not supported");
  std::vector<Index> perm(static_cast<std::size_t>(n));
  std::iota(perm.begin(), perm.end(), Index{0});
  Scalar best = std::numeric_limits<Scalar>::infinity();
  do {
    Scalar total = 0;
    for (Index i = 0; i < n; ++i) total += cost(i, perm[static_cast<std::size_t>(i)]);
    best = std::min(best, total);
  } while (std::next_permutation(perm.begin(), perm.end()));
  return best / Scalar(n);
}

/// Same quantity via the O(n^3) Hungarian method with row/column potentials.
template <typename Derived>
typename Derived::Scalar exact_ot_assignment(const Eigen::MatrixBase<Derived>& cost) {
  using Scalar = typename Derived::Scalar;
  const Index n = cost.rows();
  if (n != cost.cols() || n == 0) throw PreconditionError("exact_ot_assignment: need a non-empty square cost");
  const Scalar inf = std::numeric_limits<Scalar>::infinity();
  // 1-based arrays; column 0 is the virtual start column.
  std::vector<Scalar> u(static_cast<std::size_t>(n + 1), 0), v(static_cast<std::size_t>(n + 1), 0);
  std::vector<Index> match(static_cast<std::size_t>(n + 1), 0), way(static_cast<std::size_t>(n + 1), 0);
  for (Index row = 1; row <= n; ++row) {
    match[0] = row;
    Index col0 = 0;
    std::vector<Scalar> minv(static_cast<std::size_t>(n + 1), inf);
    std::vector<char> used(static_cast<std::size_t>(n + 1), 0);
    do {
      used[static_cast<std::size_t>(col0)] = 1;
      const Index row0 = match[static_cast<std::size_t>(col0)];
      Scalar delta = inf;
      Index col1 = 0;
      for (Index j = 1; j <= n; ++j) {
        const auto sj = static_cast<std::size_t>(j);
        if (used[sj]) continue;
        const Scalar reduced = cost(row0 - 1, j - 1) - u[static_cast<std::size_t>(row0)] - v[sj];
        if (reduced < minv[sj]) {
          minv[sj] = reduced;
          way[sj] = col0;
        }
        if (minv[sj] < delta) {
          delta = minv[sj];
          col1 = j;
        }
      }
      for (Index j = 0; j <= n; ++j) {
        const auto sj = static_cast<std::size_t>(j);
        if (used[sj]) {
          u[static_cast<std::size_t>(match[sj])] += delta;
          v[sj] -= delta;
        } else {
          minv[sj] -= delta;
        }
      }
      col0 = col1;
    } while (match[static_cast<std::size_t>(col0)] != 0);
    do {
      const Index col1 = way[static_cast<std::size_t>(col0)];
      match[static_cast<std::size_t>(col0)] = match[static_cast<std::size_t>(col1)];
      col0 = col1;
    } while (col0 != 0);
  }
  Scalar total = 0;
  for (Index j = 1; j <= n; ++j) total += cost(match[static_cast<std::size_t>(j)] - 1, j - 1);
  return total / Scalar(n);
}

/// Exact OT value for uniform square instances (n <= 10), where the optimum
/// sits on a permutation matrix.
template <typename DerivedC, typename DerivedA, typename DerivedB>
typename DerivedC::Scalar exact_ot_small(const Eigen::MatrixBase<DerivedC>& cost, const Eigen::MatrixBase<DerivedA>& a,
                                         const Eigen::MatrixBase<DerivedB>& b) {
  using Scalar = typename DerivedC::Scalar;
  const Index n = cost.rows();
  if (n != cost.cols() || a.size() != n || b.size() != n) {
    throw PreconditionError("exact_ot_small: unsupported instance (need n == m)");
  }
  if (n > 10) throw PreconditionError("exact_ot_small: unsupported instance (n > 10)");
  const Scalar uniform = Scalar(1) / Scalar(n);
  const auto off_uniform = [&](const auto& w) { return ((w.array() - uniform).abs() > Scalar(1e-12)).any(); };
  if (off_uniform(a) || off_uniform(b)) throw PreconditionError("exact_ot_small: unsupported instance (non-uniform)");
  return n <= 8 ? exact_ot_enumerate(cost) : exact_ot_assignment(cost);
}

/// Principal square root of a symmetric PSD matrix; negative eigenvalues clamp to 0.
template <typename Scalar>
MatrixX<Scalar> psd_sqrt(const MatrixX<Scalar>& m) {
  Eigen::SelfAdjointEigenSolver<MatrixX<Scalar>> eig(m);
  const VectorX<Scalar> roots = eig.eigenvalues().cwiseMax(Scalar(0)).cwiseSqrt();
  return eig.eigenvectors() * roots.asDiagonal() * eig.eigenvectors().transpose();
}

/// Closed-form squared 2-Wasserstein (Bures) distance between two Gaussians.
template <typename Scalar>
Scalar gaussian_w2_squared(const BasicClassGaussian<Scalar>& g1, const BasicClassGaussian<Scalar>& g2) {
  const Index d = g1.mean.size();
  if (g2.mean.size() != d || g1.covariance.rows() != d || g1.covariance.cols() != d || g2.covariance.rows() != d ||
      g2.covariance.cols() != d) {
    throw ShapeError("gaussian_w2_squared: dimension mismatch");
  }
  for (const auto* g : {&g1, &g2}) {
    if ((g->covariance - g->covariance.transpose()).cwiseAbs().maxCoeff() > Scalar(1e-10)) {
      throw PreconditionError("gaussian_w2_squared: covariance of class " + std::to_string(g->class_id) +
                              " is not symmetric");
    }
  }
  const MatrixX<Scalar> root1 = psd_sqrt<Scalar>(g1.covariance);
  MatrixX<Scalar> cross = root1 * g2.covariance * root1;
  cross = (cross + cross.transpose()) / Scalar(2);
  Eigen::SelfAdjointEigenSolver<MatrixX<Scalar>> eig(cross, Eigen::EigenvaluesOnly);
  const Scalar cross_trace = eig.eigenvalues().cwiseMax(Scalar(0)).cwiseSqrt().sum();
  const Scalar value =
      (g1.mean - g2.mean).squaredNorm() + g1.covariance.trace() + g2.covariance.trace() - Scalar(2) * cross_trace;
  return std::max(value, Scalar(0));
}

// ---------------------------------------------------------------------------
// Label-aware dataset distance.

struct OtddOptions {
  double epsilon = 0.1;
  double label_weight = 1.0;
  double ridge = 1e-4;
  int max_iter = 5000;
  double tol = 1e-9;
};

/// Per-class mean and unbiased covariance + ridge * I, ordered by class id.
std::vector<ClassGaussian> class_stats(const EmbeddedDataset& e, double ridge);

/// Pairwise gaussian_w2_squared between the classes of two datasets.
MatrixXd label_cost_matrix(const std::vector<ClassGaussian>& s1, const std::vector<ClassGaussian>& s2);

struct OtddResult {
  TransportResult transport;
  MatrixXd label_cost;  // K1 x K2 by class id order
};

OtddResult otdd(const EmbeddedDataset& e1, const EmbeddedDataset& e2, const OtddOptions& options = {});

/// d_ot: <Z, P> for the composite feature + label ground cost Z.
double otdd_distance(const EmbeddedDataset& e1, const EmbeddedDataset& e2, double epsilon = 0.1,
                     double label_weight = 1.0);

}  // namespace otnas
