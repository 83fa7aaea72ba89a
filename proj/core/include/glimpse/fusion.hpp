#ifndef GLIMPSE_FUSION_HPP
#define GLIMPSE_FUSION_HPP

#include <Eigen/Dense>
#include <vector>

#include "glimpse/models.hpp"

// Combining several glimpses of one scene: either stacked into one larger
// factor-analysis observation (static latent), or filtered through a
// variance-preserving linear dynamical system (evolving latent).

namespace glimpse {

struct GlimpseObs {
  int offset_id = -1;
  Eigen::VectorXd y;
  const ProjectedFA* pfa = nullptr;  // not owned; must outlive the sequence
};

/// Ordered glimpses that share one retina layout and one model. Overlapping
/// placements over-count evidence by construction; the LDS path is the
/// mitigation for that.
using GlimpseSequence = std::vector<GlimpseObs>;

/// Concatenated observation model: means and loadings stacked in sequence
/// order, noise block-diagonal.
struct StackedModel {
  ProjectedFA model;       // the stacked quantities, usable anywhere a
                           // ProjectedFA is
  Eigen::VectorXd y_tilde;
};

StackedModel stack(const GlimpseSequence& seq);

/// Posterior over z given every glimpse at once; computed by precision
/// accumulation, equal to posterior(stack(seq)).
Posterior fused_posterior(const GlimpseSequence& seq);

/// Filtered posteriors after each glimpse under z_j = alpha z_{j-1} +
/// sqrt(1 - alpha^2) e_j. alpha = 1 recovers the static fusion; alpha = 0
/// forgets everything between glimpses.
std::vector<Posterior> lds_filter(const GlimpseSequence& seq, double alpha);

}  // namespace glimpse

#endif
