#include "glimpse/numerics.hpp"

#include <atomic>
#include <cmath>
#include <iostream>
#include <limits>

namespace glimpse {

namespace {

std::atomic<std::uint64_t> g_jitter_events{0};

// Plain lower Cholesky. Returns the failing pivot index, or -1 on success.
int cholesky_in_place(Eigen::MatrixXd& A) {
  const Eigen::Index n = A.rows();
  for (Eigen::Index j = 0; j < n; ++j) {
    double d = A(j, j);
    for (Eigen::Index k = 0; k < j; ++k) d -= A(j, k) * A(j, k);
    if (!(d > 0.0) || !std::isfinite(d)) return static_cast<int>(j);
    const double ljj = std::sqrt(d);
    A(j, j) = ljj;
    for (Eigen::Index i = j + 1; i < n; ++i) {
      double s = A(i, j);
      for (Eigen::Index k = 0; k < j; ++k) s -= A(i, k) * A(j, k);
      A(i, j) = s / ljj;
    }
  }
  // zero the strict upper triangle so lower() is exactly triangular
  A.triangularView<Eigen::StrictlyUpper>().setZero();
  return -1;
}

}  // namespace

SpdFactor::SpdFactor(const Eigen::MatrixXd& S) {
  if (S.rows() != S.cols())
    throw ContractError("SpdFactor: matrix is not square");
  L_ = S;
  int pivot = cholesky_in_place(L_);
  if (pivot >= 0) {
    const double jitter = 1e-10 * S.trace() / static_cast<double>(S.rows());
    L_ = S + jitter * Eigen::MatrixXd::Identity(S.rows(), S.cols());
    const int retry_pivot = cholesky_in_place(L_);
    if (retry_pivot >= 0)
      throw NotPositiveDefiniteError(
          "matrix not positive definite (pivot " +
              std::to_string(retry_pivot) + " non-positive after jitter)",
          retry_pivot);
    ++g_jitter_events;
    std::cerr << "glimpse: jittered a near-singular factorization (pivot "
              << pivot << ")\n";
  }
}

double SpdFactor::logdet() const {
  return 2.0 * L_.diagonal().array().log().sum();
}

Eigen::VectorXd SpdFactor::solve(const Eigen::VectorXd& b) const {
  if (b.size() != dim()) throw ContractError("SpdFactor::solve: size mismatch");
  Eigen::VectorXd x = L_.triangularView<Eigen::Lower>().solve(b);
  L_.triangularView<Eigen::Lower>().transpose().solveInPlace(x);
  return x;
}

Eigen::MatrixXd SpdFactor::solve(const Eigen::MatrixXd& B) const {
  if (B.rows() != dim()) throw ContractError("SpdFactor::solve: size mismatch");
  Eigen::MatrixXd X = L_.triangularView<Eigen::Lower>().solve(B);
  L_.triangularView<Eigen::Lower>().transpose().solveInPlace(X);
  return X;
}

std::uint64_t SpdFactor::jitter_event_count() { return g_jitter_events.load(); }

double chol_logdet(const Eigen::MatrixXd& S) { return SpdFactor(S).logdet(); }

double lowrank_logdet(const Eigen::MatrixXd& W, const Eigen::VectorXd& psi) {
  if (W.rows() != psi.size())
    throw ContractError("lowrank_logdet: W rows must match psi length");
  if ((psi.array() <= 0.0).any())
    throw DegenerateNoiseError("lowrank_logdet: non-positive noise entry");
  const Eigen::Index k = W.cols();
  Eigen::MatrixXd inner = Eigen::MatrixXd::Identity(k, k);
  if (k > 0)
    inner.noalias() += W.transpose() * psi.cwiseInverse().asDiagonal() * W;
  return psi.array().log().sum() + chol_logdet(inner);
}

double gaussian_entropy(int dim, double logdet_cov) {
  if (dim < 1) throw ContractError("gaussian_entropy: dim must be >= 1");
  constexpr double log_2pi_e = 2.8378770664093453;  // log(2*pi*e)
  return 0.5 * dim * log_2pi_e + 0.5 * logdet_cov;
}

double gaussian_logpdf(
    const Eigen::VectorXd& y, const Eigen::VectorXd& mean, double cov_logdet,
    const std::function<Eigen::VectorXd(const Eigen::VectorXd&)>& cov_solve) {
  if (y.size() != mean.size())
    throw ContractError("gaussian_logpdf: y and mean length differ");
  constexpr double log_2pi = 1.8378770664093453;
  const Eigen::VectorXd r = y - mean;
  const double quad = r.dot(cov_solve(r));
  return -0.5 * quad - 0.5 * cov_logdet - 0.5 * y.size() * log_2pi;
}

double logsumexp(const Eigen::VectorXd& values) {
  if (values.size() == 0) throw ContractError("logsumexp: empty input");
  const double m = values.maxCoeff();
  if (!std::isfinite(m)) {
    // all -inf (or a stray +inf/nan, which propagates)
    return m;
  }
  double s = 0.0;
  for (Eigen::Index i = 0; i < values.size(); ++i)
    s += std::exp(values(i) - m);
  return m + std::log(s);
}

}  // namespace glimpse
