#ifndef GLIMPSE_LEARNING_HPP
#define GLIMPSE_LEARNING_HPP

#include <Eigen/Dense>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "glimpse/data_io.hpp"
#include "glimpse/models.hpp"
#include "glimpse/retina.hpp"

// Maximum-likelihood learning of the loading matrix and the per-offset
// observation noises directly from glimpse data, by analytic gradients and
// nonlinear conjugate-gradient ascent. Noises are optimized in log space so
// any finite step keeps them positive.

namespace glimpse {

struct GlimpseRecord {
  int offset_id = -1;
  Eigen::VectorXd y;
  int group = -1;  // >= 0 ties records of one source image together
};

/// Glimpse corpus tied to one retina layout and offset table.
struct GlimpseDataset {
  std::string retina_spec_json;
  int image_rows = 0;
  int image_cols = 0;
  std::vector<Offset> offsets;
  std::vector<GlimpseRecord> records;

  int count() const { return static_cast<int>(records.size()); }
  bool has_groups() const;
};

void write_glim(const std::string& path, const GlimpseDataset& data);
GlimpseDataset read_glim_dataset(const std::string& path);

/// Builds the placement set a dataset was sampled against.
PlacementSet placements_for(const GlimpseDataset& data);

/// Learnable parameters. The mean is carried along but held fixed; only W
/// and the per-offset log-noises t (psi = exp(t)) move under the gradient.
struct LearnState {
  Eigen::VectorXd mu;              // D, fixed
  Eigen::MatrixXd W;               // D x K
  std::vector<Eigen::VectorXd> t;  // per offset, log psi_y

  int dim() const { return static_cast<int>(mu.size()); }
  int factors() const { return static_cast<int>(W.cols()); }
  Eigen::VectorXd psi(int offset_id) const {
    return t.at(offset_id).array().exp();
  }
};

/// One state per mixture component plus unconstrained mixing logits.
struct MixtureLearnState {
  std::vector<LearnState> components;
  Eigen::VectorXd pi_logits;

  Eigen::VectorXd pi() const;
  int component_count() const { return static_cast<int>(components.size()); }
};

/// Total log likelihood of the glimpse data. Records sharing a group are
/// treated as one stacked observation of a common latent.
double loglik(const LearnState& state, const GlimpseDataset& data,
              const PlacementSet& placements);

/// d loglik / d W.
Eigen::MatrixXd grad_W(const LearnState& state, const GlimpseDataset& data,
                       const PlacementSet& placements);

/// d loglik / d t, one vector per offset; offsets with no records get zeros.
std::vector<Eigen::VectorXd> grad_psi(const LearnState& state,
                                      const GlimpseDataset& data,
                                      const PlacementSet& placements);

double mixture_loglik(const MixtureLearnState& state,
                      const GlimpseDataset& data,
                      const PlacementSet& placements);

struct MixtureGrad {
  std::vector<Eigen::MatrixXd> W;               // per component
  std::vector<std::vector<Eigen::VectorXd>> t;  // per component, per offset
  Eigen::VectorXd pi_logits;
};

/// Responsibility-weighted per-component gradients and the mixing gradient.
MixtureGrad grad_mixture(const MixtureLearnState& state,
                         const GlimpseDataset& data,
                         const PlacementSet& placements);

struct OptimizerConfig {
  int max_iters = 500;
  double grad_tol_per_record = 1e-5;  // scaled by the record count
  double rel_ll_tol = 1e-9;
  double wolfe_c1 = 1e-4;
  double wolfe_c2 = 0.4;
  int max_line_iters = 30;
  std::uint64_t seed = 0;
};

enum class OptStatus {
  converged_grad,
  converged_value,
  max_iters,
  line_search_failed,
};

struct TraceRow {
  int iter = 0;
  double value = 0.0;
  double grad_norm = 0.0;
  double step = 0.0;
};

struct CgResult {
  Eigen::VectorXd x;
  double value = 0.0;
  std::vector<TraceRow> trace;
  OptStatus status = OptStatus::max_iters;
};

/// Polak-Ribiere conjugate-gradient ascent with a strong-Wolfe line search.
/// `value_and_grad` fills the gradient and returns the objective; every
/// accepted step is non-decreasing. `grad_tol` here is absolute.
CgResult cg_maximize(
    const std::function<double(const Eigen::VectorXd&, Eigen::VectorXd&)>&
        value_and_grad,
    Eigen::VectorXd x0, const OptimizerConfig& cfg, double grad_tol);

/// Which parameter blocks the optimizer may move.
struct LearnFlags {
  bool learn_W = true;
  bool learn_psi = true;
  bool learn_pi = true;  // mixtures only
};

struct OptimizeResult {
  LearnState state;
  std::vector<TraceRow> trace;
  OptStatus status = OptStatus::max_iters;
};

OptimizeResult optimize(const LearnState& init, const GlimpseDataset& data,
                        const PlacementSet& placements,
                        const OptimizerConfig& cfg, LearnFlags flags = {});

struct MixtureOptimizeResult {
  MixtureLearnState state;
  std::vector<TraceRow> trace;
  OptStatus status = OptStatus::max_iters;
};

MixtureOptimizeResult optimize_mixture(const MixtureLearnState& init,
                                       const GlimpseDataset& data,
                                       const PlacementSet& placements,
                                       const OptimizerConfig& cfg,
                                       LearnFlags flags = {});

/// n records, each an independently drawn (image, offset) pair.
GlimpseDataset sample_glimpses_uniform(const ImageSet& images,
                                       const PlacementSet& placements, int n,
                                       std::uint64_t seed);

/// `per_offset` records for every offset, images drawn without replacement
/// per offset (with replacement when the set is too small).
GlimpseDataset sample_glimpses_stratified(const ImageSet& images,
                                          const PlacementSet& placements,
                                          int per_offset, std::uint64_t seed);

struct InitResult {
  LearnState state;
  double sigma2 = 0.0;               // isotropic noise from the PPCA fit
  std::vector<int> never_observed;   // pixels no record covered
};

/// Upsamples every glimpse, fits PPCA treating uncovered pixels as missing,
/// and seeds the per-offset noises from the recovered isotropic variance.
InitResult init_from_glimpses(const GlimpseDataset& data,
                              const PlacementSet& placements, int K,
                              int max_iters = 50, double tol = 1e-5);

/// Per-offset independent Gaussian per dimension, fitted to the data;
/// the reference baseline for judging learned models.
double independent_baseline_loglik(const GlimpseDataset& data);

}  // namespace glimpse

#endif
