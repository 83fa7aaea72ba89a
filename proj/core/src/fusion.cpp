#include "glimpse/fusion.hpp"

namespace glimpse {

namespace {

void check_sequence(const GlimpseSequence& seq) {
  if (seq.empty()) throw ContractError("fusion: empty glimpse sequence");
  const ProjectedFA* first = seq.front().pfa;
  if (!first) throw ContractError("fusion: null model reference");
  for (const GlimpseObs& g : seq) {
    if (!g.pfa) throw ContractError("fusion: null model reference");
    if (g.pfa->layout_sig != first->layout_sig)
      throw ContractError("fusion: glimpses come from different layouts");
    if (g.pfa->factors() != first->factors())
      throw ContractError("fusion: glimpses come from different models");
    if (g.y.size() != g.pfa->obs_dim())
      throw ContractError("fusion: glimpse length mismatch at offset " +
                          std::to_string(g.offset_id));
  }
}

}  // namespace

StackedModel stack(const GlimpseSequence& seq) {
  check_sequence(seq);
  Eigen::Index total = 0;
  for (const GlimpseObs& g : seq) total += g.y.size();
  const int K = seq.front().pfa->factors();

  StackedModel s;
  s.model.offset_id = -1;
  s.model.layout_sig = seq.front().pfa->layout_sig;
  s.model.mu_y.resize(total);
  s.model.W_a.resize(total, K);
  s.model.psi_y.resize(total);
  s.y_tilde.resize(total);
  Eigen::Index at = 0;
  for (const GlimpseObs& g : seq) {
    const Eigen::Index n = g.y.size();
    s.model.mu_y.segment(at, n) = g.pfa->mu_y;
    s.model.W_a.middleRows(at, n) = g.pfa->W_a;
    s.model.psi_y.segment(at, n) = g.pfa->psi_y;
    s.y_tilde.segment(at, n) = g.y;
    at += n;
  }
  return s;
}

Posterior fused_posterior(const GlimpseSequence& seq) {
  check_sequence(seq);
  const int K = seq.front().pfa->factors();
  Eigen::MatrixXd precision = Eigen::MatrixXd::Identity(K, K);
  Eigen::VectorXd h = Eigen::VectorXd::Zero(K);
  for (const GlimpseObs& g : seq) {
    const Eigen::VectorXd inv_psi = g.pfa->psi_y.cwiseInverse();
    precision.noalias() +=
        g.pfa->W_a.transpose() * inv_psi.asDiagonal() * g.pfa->W_a;
    h.noalias() +=
        g.pfa->W_a.transpose() * (inv_psi.asDiagonal() * (g.y - g.pfa->mu_y));
  }
  SpdFactor chol(precision);
  Posterior post;
  post.cov = chol.solve(Eigen::MatrixXd::Identity(K, K));
  post.mean = chol.solve(h);
  return post;
}

std::vector<Posterior> lds_filter(const GlimpseSequence& seq, double alpha) {
  if (!(alpha >= 0.0 && alpha <= 1.0))
    throw ContractError("lds_filter: alpha must lie in [0, 1]");
  check_sequence(seq);
  const int K = seq.front().pfa->factors();

  std::vector<Posterior> out;
  out.reserve(seq.size());
  Eigen::VectorXd mean = Eigen::VectorXd::Zero(K);
  Eigen::MatrixXd cov = Eigen::MatrixXd::Identity(K, K);
  const Eigen::MatrixXd I = Eigen::MatrixXd::Identity(K, K);
  for (const GlimpseObs& g : seq) {
    // predict: variance-preserving dynamics
    mean = alpha * mean;
    cov = alpha * alpha * cov + (1.0 - alpha * alpha) * I;
    // update in information form
    const Eigen::VectorXd inv_psi = g.pfa->psi_y.cwiseInverse();
    SpdFactor prior_chol(cov);
    Eigen::MatrixXd precision = prior_chol.solve(I);
    Eigen::VectorXd h = precision * mean;
    precision.noalias() +=
        g.pfa->W_a.transpose() * inv_psi.asDiagonal() * g.pfa->W_a;
    h.noalias() +=
        g.pfa->W_a.transpose() * (inv_psi.asDiagonal() * (g.y - g.pfa->mu_y));
    SpdFactor post_chol(precision);
    cov = post_chol.solve(I);
    mean = post_chol.solve(h);
    out.push_back(Posterior{mean, cov});
  }
  return out;
}

}  // namespace glimpse
