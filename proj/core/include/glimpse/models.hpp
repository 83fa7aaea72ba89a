#ifndef GLIMPSE_MODELS_HPP
#define GLIMPSE_MODELS_HPP

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <vector>

#include "glimpse/data_io.hpp"
#include "glimpse/numerics.hpp"
#include "glimpse/retina.hpp"

// Factor-analysis models of the full image, their projections through a
// retinal transform, and exact Gaussian inference for the latents.

namespace glimpse {

/// x = mu + W z + e with z ~ N(0, I_K) and e ~ N(0, diag(psi_x)).
struct FAModel {
  Eigen::VectorXd mu;     // D
  Eigen::MatrixXd W;      // D x K
  Eigen::VectorXd psi_x;  // D, strictly positive

  int dim() const { return static_cast<int>(mu.size()); }
  int factors() const { return static_cast<int>(W.cols()); }
};

/// The FA model seen through one placement: y = mu_y + W_a z + e_y. The
/// observation noise is a free per-placement parameter, not a projection
/// of psi_x.
struct ProjectedFA {
  int offset_id = -1;
  Eigen::VectorXd mu_y;   // active dims
  Eigen::MatrixXd W_a;    // active dims x K
  Eigen::VectorXd psi_y;  // active dims, strictly positive
  std::uint64_t layout_sig = 0;

  int obs_dim() const { return static_cast<int>(mu_y.size()); }
  int factors() const { return static_cast<int>(W_a.cols()); }
};

struct MoFAModel {
  std::vector<FAModel> components;
  Eigen::VectorXd pi;  // mixing proportions, sums to 1

  int component_count() const { return static_cast<int>(components.size()); }
};

/// Gaussian posterior over the K latents.
struct Posterior {
  Eigen::VectorXd mean;
  Eigen::MatrixXd cov;
};

struct MixturePosterior {
  Eigen::VectorXd responsibilities;   // sums to 1
  std::vector<Posterior> posteriors;  // one per component
};

/// mu_y = V mu and W_a = V W through the sparse operator; psi_y attached
/// verbatim (its length must equal the active cell count).
ProjectedFA project(const FAModel& fa, const RetinalTransform& rt,
                    const Eigen::VectorXd& psi_y, int offset_id = -1);

/// Exact posterior: precision I_K + W^T diag(psi)^-1 W.
Posterior posterior(const ProjectedFA& pfa, const Eigen::VectorXd& y);

/// Posterior over z when the whole image is observed (identity placement).
Posterior posterior_full_image(const FAModel& fa, const Eigen::VectorXd& x);

/// x_hat = mu + W mean; pred_var = diag(W cov W^T) + psi_x.
struct Reconstruction {
  Eigen::VectorXd x_hat;
  Eigen::VectorXd pred_var;
};
Reconstruction reconstruct(const FAModel& fa, const Posterior& post);

/// Marginal Gaussian log density of one glimpse under the projected model,
/// evaluated through the low-rank-plus-diagonal structure.
double marginal_loglik(const ProjectedFA& pfa, const Eigen::VectorXd& y);

/// Mixture responsibilities and per-component posteriors for one glimpse.
/// All entries of `pfas` must describe the same observation.
MixturePosterior responsibilities(const std::vector<ProjectedFA>& pfas,
                                  const Eigen::VectorXd& pi,
                                  const Eigen::VectorXd& y);

/// Responsibility-weighted mean prediction, plus the responsibility-weighted
/// per-pixel predictive variance.
Reconstruction mixture_reconstruct(const MoFAModel& mofa,
                                   const MixturePosterior& mp);

/// Entropy of a responsibility vector in bits, with 0 log 0 = 0.
double component_entropy(const Eigen::VectorXd& r);

/// Closed-form probabilistic PCA fit: top-K eigenpairs of the sample
/// covariance, isotropic noise from the discarded eigenvalues.
FAModel fit_ppca(const ImageSet& X, int K);

struct FaEmResult {
  FAModel model;
  std::vector<double> loglik_trace;  // per-example LL after each step
  bool converged = false;
};

/// EM fit of the full FA model; the trace is non-decreasing.
FaEmResult fit_fa_em(const ImageSet& X, int K, int max_iters = 200,
                     double tol = 1e-7);

struct KMeansResult {
  Eigen::MatrixXd centroids;    // D x M
  std::vector<int> assignment;  // per column of the data
  double inertia = 0.0;
  int reseed_events = 0;
};

/// Lloyd's algorithm, squared-Euclidean, several seeded restarts, best
/// inertia kept. An emptied cluster is re-seeded from the farthest point.
KMeansResult kmeans(const Eigen::MatrixXd& X, int M, std::uint64_t seed,
                    int restarts = 10, int max_iters = 100);

/// k-means partition, then one PPCA fit per cluster; pi = cluster fractions.
MoFAModel fit_mofa_x(const ImageSet& X, int K, int M, std::uint64_t seed);

/// diag(V diag(psi_x) V^T): for an s x s cell, the mean of its pixels'
/// psi_x divided by s^2.
Eigen::VectorXd psi_y_init(const RetinalTransform& rt,
                           const Eigen::VectorXd& psi_x);

// ---------------------------------------------------------------------------
// Model container: everything a reproduction run needs to score designs and
// reconstruct, including the retina geometry it was trained against.

struct ModelBundle {
  enum class Kind : std::uint8_t { fa = 0, mofa = 1 };
  Kind kind = Kind::fa;
  std::vector<FAModel> components;  // one entry when kind == fa
  Eigen::VectorXd pi;
  std::string retina_spec_json;
  int image_rows = 0;
  int image_cols = 0;
  std::vector<Offset> offsets;
  // psi_y[m][a]: learned per-offset noise for component m; empty until a
  // learning pass fills it in.
  std::vector<std::vector<Eigen::VectorXd>> psi_y;
  std::string metadata_json;

  MoFAModel mixture() const;
  /// psi_y for (component, offset), falling back to psi_y_init when the
  /// learned table is absent.
  Eigen::VectorXd noise_for(int component, int offset_id,
                            const RetinalTransform& rt) const;
};

void write_glim(const std::string& path, const ModelBundle& model);
ModelBundle read_glim_model(const std::string& path);

}  // namespace glimpse

#endif
