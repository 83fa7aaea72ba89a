#ifndef GLIMPSE_DESIGN_HPP
#define GLIMPSE_DESIGN_HPP

#include <Eigen/Dense>
#include <string>
#include <vector>

#include "glimpse/models.hpp"

// Choosing where to look: expected information gain of a set of placements,
// exact for a single factor-analysis model and an upper bound for mixtures,
// plus exhaustive/greedy/random search over offset designs.

namespace glimpse {

/// An ordered choice of offsets (ids into the run's offset table).
struct Design {
  std::vector<int> offset_ids;
};

struct DesignScore {
  Design design;
  double eig_nats = 0.0;
  bool upper_bound = false;  // exact for FA, a bound for mixtures
};

/// Expected information gain, in nats, of observing the given placements of
/// one FA model. Depends only on the design, never on observed values.
double eig_fa(const std::vector<const ProjectedFA*>& pfas);

/// The same quantity through the observation-space form
/// (log|W W^T + Psi| - log|Psi|) / 2 on the stacked design.
double eig_fa_direct(const std::vector<const ProjectedFA*>& pfas);

/// Mixture bound: H(pi) + sum_m pi_m EIG_m. `per_component[m]` holds
/// component m's placements for the design.
double eig_mofa_upper(
    const std::vector<std::vector<const ProjectedFA*>>& per_component,
    const Eigen::VectorXd& pi);

/// Scores designs over a fixed offset table. Construction precomputes the
/// per-offset precision contributions, so scoring one design costs one
/// K x K factorization per component.
class DesignScorer {
public:
  /// `table[a]` is offset a's projected model.
  static DesignScorer exact_fa(const std::vector<ProjectedFA>& table);
  /// `tables[m][a]` is offset a's projection of component m.
  static DesignScorer mofa_bound(
      const std::vector<std::vector<ProjectedFA>>& tables,
      const Eigen::VectorXd& pi);

  double score(const std::vector<int>& offset_ids) const;
  bool upper_bound() const { return upper_bound_; }
  int offset_count() const { return static_cast<int>(precisions_[0].size()); }

private:
  std::vector<std::vector<Eigen::MatrixXd>> precisions_;  // [component][offset]
  Eigen::VectorXd pi_;
  double pi_entropy_nats_ = 0.0;
  bool upper_bound_ = false;
};

/// Scores every unordered design of size J and returns the full ranking,
/// best first; ties break lexicographically on offset ids. Throws
/// ContractError when more than `max_designs` candidates would be scored.
std::vector<DesignScore> search_exhaustive(const DesignScorer& scorer, int J,
                                           bool allow_duplicates = false,
                                           std::size_t max_designs = 1000000);

/// Adds one offset at a time, each maximizing the incremental gain.
DesignScore search_greedy(const DesignScorer& scorer, int J,
                          bool allow_duplicates = false);

/// Uniform design without replacement; reproducible for a fixed seed.
Design random_design(int offset_count, int J, std::uint64_t seed);

/// JSON list of scored designs with offsets spelled out as [dr, dc] pairs.
std::string designs_to_json(const std::vector<DesignScore>& scores,
                            const std::vector<Offset>& offsets);
std::vector<DesignScore> designs_from_json(const std::string& json,
                                           const std::vector<Offset>& offsets);

}  // namespace glimpse

#endif
