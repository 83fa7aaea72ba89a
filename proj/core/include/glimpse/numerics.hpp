#ifndef GLIMPSE_NUMERICS_HPP
#define GLIMPSE_NUMERICS_HPP

#include <Eigen/Dense>
#include <cstdint>
#include <functional>

#include "glimpse/errors.hpp"

// Stable Gaussian primitives shared by every other module. All entropies
// and information quantities are kept in nats; conversion to bits happens
// only at reporting boundaries.

namespace glimpse {

/// Lower-triangular Cholesky factor of a symmetric positive-definite matrix.
class SpdFactor {
public:
  /// Factorizes S. If the factorization hits a non-positive pivot once, a
  /// jitter of 1e-10 * trace/dim is added to the diagonal and the attempt is
  /// repeated (the event is counted, see jitter_event_count). A second
  /// failure throws NotPositiveDefiniteError with the failing pivot index.
  explicit SpdFactor(const Eigen::MatrixXd& S);

  Eigen::Index dim() const { return L_.rows(); }
  const Eigen::MatrixXd& lower() const { return L_; }

  double logdet() const;

  /// Solves S x = b.
  Eigen::VectorXd solve(const Eigen::VectorXd& b) const;
  Eigen::MatrixXd solve(const Eigen::MatrixXd& B) const;

  /// S reconstructed as L L^T.
  Eigen::MatrixXd reconstruct() const { return L_ * L_.transpose(); }

  /// Number of factorizations (process-wide) that needed the jitter retry.
  static std::uint64_t jitter_event_count();

private:
  Eigen::MatrixXd L_;
};

/// log|S| via Cholesky; throws NotPositiveDefiniteError if S is not SPD.
double chol_logdet(const Eigen::MatrixXd& S);

/// log|W W^T + diag(psi)| evaluated through the K-dimensional identity
/// log|psi| + log|I_K + W^T diag(psi)^-1 W|; cost scales with K, not D.
double lowrank_logdet(const Eigen::MatrixXd& W, const Eigen::VectorXd& psi);

/// Differential entropy in nats of a Gaussian with the given log-determinant.
double gaussian_entropy(int dim, double logdet_cov);

/// Full Gaussian log density. `cov_solve` must apply C^-1 to a vector.
double gaussian_logpdf(
    const Eigen::VectorXd& y, const Eigen::VectorXd& mean, double cov_logdet,
    const std::function<Eigen::VectorXd(const Eigen::VectorXd&)>& cov_solve);

/// Overflow-safe log sum exp; returns -inf when every entry is -inf.
double logsumexp(const Eigen::VectorXd& values);

inline double nats_to_bits(double nats) { return nats / std::log(2.0); }

}  // namespace glimpse

#endif
