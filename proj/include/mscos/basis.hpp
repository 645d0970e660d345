#pragma once

#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <Eigen/SparseCholesky>
#include <algorithm>
#include <cmath>
#include <utility>
#include <vector>

#include "mscos/areal.hpp"
#include "mscos/common.hpp"
#include "mscos/rng.hpp"

namespace mscos {

// M(W) = (I - 11'/n) W (I - 11'/n): the double-centered adjacency whose
// leading eigenvectors give spatially smooth, intercept-orthogonal basis
// functions.
inline Eigen::MatrixXd morans_operator(const Eigen::MatrixXd& w) {
  const Eigen::Index n = w.rows();
  if (w.cols() != n || n < 2)
    throw std::invalid_argument("morans_operator: W must be square with n >= 2");
  if (!w.isApprox(w.transpose(), 0.0))
    throw std::invalid_argument("morans_operator: W must be symmetric");
  // C W C expanded as W - row-means - col-means + grand mean; avoids the
  // two dense products.
  const Eigen::VectorXd row_mean = w.rowwise().mean();
  const double grand_mean = row_mean.mean();
  Eigen::MatrixXd m = w;
  m.colwise() -= row_mean;
  m.rowwise() -= row_mean.transpose();
  m.array() += grand_mean;
  return 0.5 * (m + m.transpose());  // symmetrize round-off
}

// First r eigenvectors of M(W) by descending eigenvalue. Columns are
// orthonormal and sign-fixed so the first non-negligible component of each
// column is positive (eigenvectors are sign-ambiguous; this pins runs
// across platforms).
inline Eigen::MatrixXd moran_basis(const Eigen::MatrixXd& w, int r) {
  const Eigen::Index n = w.rows();
  if (r < 1 || r > n - 1)
    throw std::invalid_argument("moran_basis: require 1 <= r <= n - 1");
  const Eigen::MatrixXd m = morans_operator(w);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(m);
  if (eig.info() != Eigen::Success)
    throw NumericalError("moran_basis: eigendecomposition failed");

  Eigen::MatrixXd g(n, r);
  for (int k = 0; k < r; ++k) g.col(k) = eig.eigenvectors().col(n - 1 - k);
  for (int k = 0; k < r; ++k) {
    const double scale = g.col(k).cwiseAbs().maxCoeff();
    for (Eigen::Index i = 0; i < n; ++i) {
      if (std::abs(g(i, k)) > 1e-10 * scale) {
        if (g(i, k) < 0.0) g.col(k) = -g.col(k);
        break;
      }
    }
  }
  return g;
}

namespace detail {
// Indices within `values` whose value is within relative 1e-12 of the best
// (min or max); the caller picks one with the tie-break RNG.
inline std::vector<Eigen::Index> near_ties(const Eigen::VectorXd& values,
                                           double best) {
  std::vector<Eigen::Index> out;
  const double eps = 1e-12 * std::max(1.0, std::abs(best));
  for (Eigen::Index i = 0; i < values.size(); ++i)
    if (std::abs(values[i] - best) <= eps) out.push_back(i);
  return out;
}
}  // namespace detail

// Greedy farthest-point (space-filling) subset of the centroids, started at
// the centroid nearest the centroid cloud's mean. The seed only breaks
// exact-distance ties, so the selection is deterministic. Returned indices
// are sorted ascending.
inline std::vector<Eigen::Index> select_knot_indices(
    const Eigen::MatrixX2d& centroids, int r, std::uint64_t seed) {
  const Eigen::Index n = centroids.rows();
  if (r < 1 || r > n)
    throw std::invalid_argument("select_knots: require 1 <= r <= #centroids");
  Rng rng(derive_seed(seed, 0x6b6e6f74ULL));  // independent tie-break stream

  const Eigen::RowVector2d center = centroids.colwise().mean();
  Eigen::VectorXd dist_center =
      (centroids.rowwise() - center).rowwise().norm();
  auto start_ties = detail::near_ties(dist_center, dist_center.minCoeff());
  std::vector<Eigen::Index> selected;
  selected.push_back(start_ties[rng.uniform_index(start_ties.size())]);

  Eigen::VectorXd min_dist =
      (centroids.rowwise() - centroids.row(selected[0])).rowwise().norm();
  std::vector<bool> in(static_cast<std::size_t>(n), false);
  in[static_cast<std::size_t>(selected[0])] = true;

  while (static_cast<int>(selected.size()) < r) {
    double best = -1.0;
    for (Eigen::Index i = 0; i < n; ++i)
      if (!in[static_cast<std::size_t>(i)]) best = std::max(best, min_dist[i]);
    auto ties = detail::near_ties(min_dist, best);
    std::erase_if(ties, [&](Eigen::Index i) { return in[static_cast<std::size_t>(i)]; });
    const Eigen::Index pick = ties[rng.uniform_index(ties.size())];
    selected.push_back(pick);
    in[static_cast<std::size_t>(pick)] = true;
    min_dist = min_dist.cwiseMin(
        (centroids.rowwise() - centroids.row(pick)).rowwise().norm());
  }
  std::sort(selected.begin(), selected.end());
  return selected;
}

inline Eigen::MatrixX2d select_knots(const Eigen::MatrixX2d& centroids, int r,
                                     std::uint64_t seed) {
  const auto idx = select_knot_indices(centroids, r, seed);
  Eigen::MatrixX2d knots(static_cast<Eigen::Index>(idx.size()), 2);
  for (std::size_t k = 0; k < idx.size(); ++k) knots.row(static_cast<Eigen::Index>(k)) = centroids.row(idx[k]);
  return knots;
}

struct CovarianceParams {
  double sigma2_eta = 1.0;
  double phi = 0.1;
};

namespace detail {

// Sparse SPD factorization with an explicit positive-definiteness check and
// a log-determinant; LDLT so the diagonal is directly inspectable.
class SparseSpdFactor {
 public:
  explicit SparseSpdFactor(const Eigen::SparseMatrix<double>& a) {
    ldlt_.compute(a);
    // Relative pivot threshold: an exactly singular matrix (rho at the CAR
    // boundary) factors with a ~1e-16 pivot and must be flagged.
    const double max_pivot =
        ldlt_.info() == Eigen::Success ? ldlt_.vectorD().maxCoeff() : 0.0;
    ok_ = ldlt_.info() == Eigen::Success && max_pivot > 0.0 &&
          ldlt_.vectorD().minCoeff() > 1e-12 * max_pivot;
    if (ok_) log_det_ = ldlt_.vectorD().array().log().sum();
  }

  bool ok() const { return ok_; }
  double log_det() const { return log_det_; }

  Eigen::VectorXd solve(const Eigen::VectorXd& b) const { return ldlt_.solve(b); }

  // Draw y ~ N(0, A^{-1}): with P A P' = L D L', y = P' L^{-T} D^{-1/2} z.
  Eigen::VectorXd sample_precision(Rng& rng) const {
    Eigen::VectorXd z = rng.standard_normal(ldlt_.vectorD().size());
    z.array() /= ldlt_.vectorD().array().sqrt();
    Eigen::VectorXd y = ldlt_.matrixU().solve(z);
    return ldlt_.permutationPinv() * y;
  }

 private:
  Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> ldlt_;
  bool ok_ = false;
  double log_det_ = 0.0;
};

inline void check_distinct_knots(const Eigen::MatrixX2d& knots) {
  for (Eigen::Index i = 0; i < knots.rows(); ++i)
    for (Eigen::Index j = i + 1; j < knots.rows(); ++j)
      if ((knots.row(i) - knots.row(j)).norm() < 1e-14)
        throw std::invalid_argument("exp_covariance: duplicate knots");
}
}  // namespace detail

// Unit-variance exponential correlation R_ij = exp(-phi * ||c_i - c_j||),
// no jitter.
inline Eigen::MatrixXd exp_correlation(const Eigen::MatrixX2d& knots, double phi) {
  if (!(phi >= 0.0))
    throw std::invalid_argument("exp_correlation: phi must be >= 0");
  const Eigen::Index r = knots.rows();
  Eigen::MatrixXd k(r, r);
  for (Eigen::Index i = 0; i < r; ++i) {
    k(i, i) = 1.0;
    for (Eigen::Index j = i + 1; j < r; ++j) {
      const double d = (knots.row(i) - knots.row(j)).norm();
      k(i, j) = k(j, i) = std::exp(-phi * d);
    }
  }
  return k;
}

// Cholesky factor of the jittered correlation R + jitter*I. Jitter starts
// at 1e-8 and escalates tenfold up to 1e-4; phi = 0 (rank-one R) must stay
// factorizable because the uniform prior allows proposals at the boundary.
class CorrelationFactor {
 public:
  CorrelationFactor(const Eigen::MatrixX2d& knots, double phi) {
    detail::check_distinct_knots(knots);
    Eigen::MatrixXd r = exp_correlation(knots, phi);
    for (double jitter = tol::kJitterStart;; jitter *= 10.0) {
      Eigen::MatrixXd attempt = r;
      attempt.diagonal().array() += jitter;
      llt_.compute(attempt);
      if (llt_.info() == Eigen::Success) {
        jitter_ = jitter;
        break;
      }
      if (jitter >= tol::kJitterMax)
        throw NumericalError("exp_covariance: Cholesky failed up to max jitter");
    }
    log_det_ = 0.0;
    for (Eigen::Index i = 0; i < llt_.matrixLLT().rows(); ++i)
      log_det_ += 2.0 * std::log(llt_.matrixLLT()(i, i));
  }

  Eigen::Index size() const { return llt_.matrixLLT().rows(); }
  double jitter() const { return jitter_; }
  double log_det() const { return log_det_; }  // log|R + jitter*I|

  // x' (R + jitter I)^{-1} x
  double quad_form(const Eigen::VectorXd& x) const {
    return llt_.matrixL().solve(x).squaredNorm();
  }

  Eigen::MatrixXd inverse() const {
    return llt_.solve(Eigen::MatrixXd::Identity(size(), size()));
  }

  // Sample L z ~ N(0, R + jitter I).
  Eigen::VectorXd sample(Rng& rng) const {
    return llt_.matrixL() * rng.standard_normal(size());
  }

 private:
  Eigen::LLT<Eigen::MatrixXd> llt_;
  double jitter_ = 0.0;
  double log_det_ = 0.0;
};

// K = sigma2_eta * exp(-phi ||c_i - c_j||) + jitter * I with the escalating
// jitter policy (jitter relative to sigma2_eta).
inline Eigen::MatrixXd exp_covariance(const Eigen::MatrixX2d& knots,
                                      const CovarianceParams& params) {
  if (!(params.sigma2_eta > 0.0))
    throw std::invalid_argument("exp_covariance: sigma2_eta must be > 0");
  CorrelationFactor factor(knots, params.phi);
  Eigen::MatrixXd k = params.sigma2_eta * exp_correlation(knots, params.phi);
  k.diagonal().array() += params.sigma2_eta * factor.jitter();
  return k;
}

// Moran's I basis with its knots; G1 and G2 of the bivariate models are both
// realized as this single G unless a second basis is supplied explicitly.
struct BasisSet {
  Eigen::MatrixXd g;       // n_fine x r, orthonormal columns
  Eigen::MatrixX2d knots;  // r x 2
  int r = 0;
};

inline BasisSet build_basis(const ArealSupport& support, int r,
                            std::uint64_t knot_seed) {
  BasisSet basis;
  basis.g = moran_basis(support.adjacency(), r);
  basis.knots = select_knots(support.centroids(), r, knot_seed);
  basis.r = r;
  return basis;
}

// Adjacency W plus the row-sum diagonal D of the CAR prior precision
// D - rho * W.
class CarStructure {
 public:
  CarStructure() = default;

  explicit CarStructure(const Eigen::MatrixXd& adjacency) {
    const Eigen::Index n = adjacency.rows();
    if (adjacency.cols() != n || n < 1)
      throw std::invalid_argument("CarStructure: adjacency must be square");
    if (!adjacency.isApprox(adjacency.transpose(), 0.0))
      throw std::invalid_argument("CarStructure: adjacency must be symmetric");
    if ((adjacency.diagonal().array() != 0.0).any())
      throw std::invalid_argument("CarStructure: adjacency diagonal must be zero");
    std::vector<Eigen::Triplet<double>> trips;
    for (Eigen::Index j = 0; j < n; ++j)
      for (Eigen::Index i = 0; i < n; ++i)
        if (adjacency(i, j) != 0.0)
          trips.emplace_back(static_cast<int>(i), static_cast<int>(j), adjacency(i, j));
    w_ = Eigen::SparseMatrix<double>(n, n);
    w_.setFromTriplets(trips.begin(), trips.end());
    w_.makeCompressed();
    row_sums_ = adjacency.rowwise().sum();
  }

  explicit CarStructure(const ArealSupport& support)
      : CarStructure(support.adjacency()) {}

  Eigen::Index n() const { return w_.rows(); }
  const Eigen::SparseMatrix<double>& w() const { return w_; }
  const Eigen::VectorXd& row_sums() const { return row_sums_; }

  // Q(rho) = D - rho W as a sparse matrix (diagonal entries always present).
  Eigen::SparseMatrix<double> precision_factor(double rho) const {
    Eigen::SparseMatrix<double> q = -rho * w_;
    Eigen::SparseMatrix<double> d(n(), n());
    std::vector<Eigen::Triplet<double>> trips;
    trips.reserve(static_cast<std::size_t>(n()));
    for (Eigen::Index i = 0; i < n(); ++i)
      trips.emplace_back(static_cast<int>(i), static_cast<int>(i), row_sums_[i]);
    d.setFromTriplets(trips.begin(), trips.end());
    q += d;
    q.makeCompressed();
    return q;
  }

  // The prior support must keep D - rho W positive definite; checked just
  // inside the configured upper bound.
  void check_positive_definite(double rho_upper) const {
    const double rho = rho_upper - 1e-6;
    detail::SparseSpdFactor factor(precision_factor(rho));
    if (!factor.ok())
      throw std::invalid_argument(
          "CarStructure: D - rho W is not positive definite at rho = " +
          std::to_string(rho));
  }

 private:
  Eigen::SparseMatrix<double> w_;
  Eigen::VectorXd row_sums_;
};

// The MCAR prior precision Sigma^{-1} (x) (D - rho W) with
// Sigma = nu^2 T(tau), held in factored form: the dense 2n x 2n (or n x n
// univariate) matrix is never formed. Variable-major ordering:
// psi = (psi_11..psi_1n, psi_21..psi_2n).
class McarPrecision {
 public:
  McarPrecision(const CarStructure& car, double rho, double tau, double nu2,
                bool bivariate = true)
      : car_(&car), rho_(rho), tau_(tau), nu2_(nu2), bivariate_(bivariate) {
    if (!(nu2 > 0.0))
      throw std::invalid_argument("mcar_precision: nu2 must be > 0");
    if (bivariate && !(std::abs(tau) < 1.0))
      throw std::invalid_argument("mcar_precision: |tau| must be < 1");
    q_ = car.precision_factor(rho);
    detail::SparseSpdFactor factor(q_);
    if (!factor.ok())
      throw std::invalid_argument(
          "mcar_precision: D - rho W is not positive definite");
    log_det_q_ = factor.log_det();
    if (bivariate) {
      const double s = 1.0 / (nu2 * (1.0 - tau * tau));
      sigma_inv_ << s, -s * tau, -s * tau, s;
    } else {
      sigma_inv_ << 1.0 / nu2, 0.0, 0.0, 0.0;
    }
  }

  Eigen::Index dim() const { return bivariate_ ? 2 * car_->n() : car_->n(); }
  const Eigen::SparseMatrix<double>& q() const { return q_; }
  const Eigen::Matrix2d& sigma_inv() const { return sigma_inv_; }
  double log_det_q() const { return log_det_q_; }

  // log det of the full precision matrix.
  double log_det() const {
    const double n = static_cast<double>(car_->n());
    if (!bivariate_) return -n * std::log(nu2_) + log_det_q_;
    const double log_det_sigma_inv =
        -2.0 * std::log(nu2_) - std::log1p(-tau_ * tau_);
    return n * log_det_sigma_inv + 2.0 * log_det_q_;
  }

  // psi' [Sigma^{-1} (x) Q] psi
  double quad_form(const Eigen::VectorXd& psi) const {
    if (psi.size() != dim())
      throw std::invalid_argument("mcar_precision: psi dimension mismatch");
    const Eigen::Index n = car_->n();
    if (!bivariate_) return psi.dot(q_ * psi) / nu2_;
    const auto psi1 = psi.head(n);
    const auto psi2 = psi.tail(n);
    const Eigen::VectorXd q1 = q_ * psi1;
    const Eigen::VectorXd q2 = q_ * psi2;
    return sigma_inv_(0, 0) * psi1.dot(q1) + sigma_inv_(1, 1) * psi2.dot(q2) +
           2.0 * sigma_inv_(0, 1) * psi1.dot(q2);
  }

  double log_pdf(const Eigen::VectorXd& psi) const {
    const double d = static_cast<double>(dim());
    return -0.5 * d * std::log(2.0 * M_PI) + 0.5 * log_det() -
           0.5 * quad_form(psi);
  }

  // Draw psi ~ MVN(0, Sigma (x) Q^{-1}) (the prior this precision encodes).
  Eigen::VectorXd sample(Rng& rng) const {
    const Eigen::Index n = car_->n();
    detail::SparseSpdFactor factor(q_);
    auto draw_car = [&]() { return factor.sample_precision(rng); };
    if (!bivariate_) return std::sqrt(nu2_) * draw_car();
    const Eigen::VectorXd v1 = draw_car();
    const Eigen::VectorXd v2 = draw_car();
    const double nu = std::sqrt(nu2_);
    Eigen::VectorXd psi(2 * n);
    psi.head(n) = nu * v1;
    psi.tail(n) = nu * (tau_ * v1 + std::sqrt(1.0 - tau_ * tau_) * v2);
    return psi;
  }

 private:
  const CarStructure* car_ = nullptr;
  double rho_ = 0.0, tau_ = 0.0, nu2_ = 1.0;
  bool bivariate_ = true;
  Eigen::SparseMatrix<double> q_;
  Eigen::Matrix2d sigma_inv_ = Eigen::Matrix2d::Zero();
  double log_det_q_ = 0.0;
};

inline McarPrecision mcar_precision(const CarStructure& car, double rho,
                                    double tau, double nu2,
                                    bool bivariate = true) {
  return McarPrecision(car, rho, tau, nu2, bivariate);
}

}  // namespace mscos
