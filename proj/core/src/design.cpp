#include "glimpse/design.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include <nlohmann/json.hpp>

namespace glimpse {

namespace {

Eigen::MatrixXd precision_contribution(const ProjectedFA& pfa) {
  if ((pfa.psi_y.array() <= 0.0).any())
    throw DegenerateNoiseError("eig: degenerate noise for offset " +
                               std::to_string(pfa.offset_id));
  return pfa.W_a.transpose() * pfa.psi_y.cwiseInverse().asDiagonal() *
         pfa.W_a;
}

double half_logdet_posterior_gain(const Eigen::MatrixXd& sum_precision) {
  const Eigen::Index K = sum_precision.rows();
  return 0.5 * chol_logdet(Eigen::MatrixXd::Identity(K, K) + sum_precision);
}

}  // namespace

double eig_fa(const std::vector<const ProjectedFA*>& pfas) {
  if (pfas.empty()) throw ContractError("eig_fa: empty design");
  const int K = pfas.front()->factors();
  Eigen::MatrixXd sum = Eigen::MatrixXd::Zero(K, K);
  for (const ProjectedFA* p : pfas) sum += precision_contribution(*p);
  return half_logdet_posterior_gain(sum);
}

double eig_fa_direct(const std::vector<const ProjectedFA*>& pfas) {
  if (pfas.empty()) throw ContractError("eig_fa_direct: empty design");
  Eigen::Index total = 0;
  for (const ProjectedFA* p : pfas) total += p->obs_dim();
  const int K = pfas.front()->factors();
  Eigen::MatrixXd W(total, K);
  Eigen::VectorXd psi(total);
  Eigen::Index at = 0;
  for (const ProjectedFA* p : pfas) {
    W.middleRows(at, p->obs_dim()) = p->W_a;
    psi.segment(at, p->obs_dim()) = p->psi_y;
    at += p->obs_dim();
  }
  return 0.5 * (lowrank_logdet(W, psi) - psi.array().log().sum());
}

double eig_mofa_upper(
    const std::vector<std::vector<const ProjectedFA*>>& per_component,
    const Eigen::VectorXd& pi) {
  const int M = static_cast<int>(per_component.size());
  if (M < 1 || pi.size() != M)
    throw ContractError("eig_mofa_upper: component/pi mismatch");
  double h_pi = 0.0;
  double weighted = 0.0;
  for (int m = 0; m < M; ++m) {
    if (pi(m) <= 0.0) continue;
    h_pi -= pi(m) * std::log(pi(m));
    weighted += pi(m) * eig_fa(per_component[m]);
  }
  return h_pi + weighted;
}

DesignScorer DesignScorer::exact_fa(const std::vector<ProjectedFA>& table) {
  DesignScorer s;
  s.upper_bound_ = false;
  s.pi_ = Eigen::VectorXd::Ones(1);
  s.precisions_.resize(1);
  for (const ProjectedFA& pfa : table)
    s.precisions_[0].push_back(precision_contribution(pfa));
  return s;
}

DesignScorer DesignScorer::mofa_bound(
    const std::vector<std::vector<ProjectedFA>>& tables,
    const Eigen::VectorXd& pi) {
  if (tables.empty() || pi.size() != static_cast<Eigen::Index>(tables.size()))
    throw ContractError("DesignScorer: component/pi mismatch");
  DesignScorer s;
  s.upper_bound_ = tables.size() > 1;
  s.pi_ = pi;
  s.precisions_.resize(tables.size());
  for (std::size_t m = 0; m < tables.size(); ++m) {
    if (tables[m].size() != tables[0].size())
      throw ContractError("DesignScorer: ragged offset tables");
    for (const ProjectedFA& pfa : tables[m])
      s.precisions_[m].push_back(precision_contribution(pfa));
  }
  for (Eigen::Index m = 0; m < pi.size(); ++m)
    if (pi(m) > 0.0) s.pi_entropy_nats_ -= pi(m) * std::log(pi(m));
  if (tables.size() == 1) s.pi_entropy_nats_ = 0.0;
  return s;
}

double DesignScorer::score(const std::vector<int>& offset_ids) const {
  if (offset_ids.empty()) throw ContractError("DesignScorer: empty design");
  double total = pi_entropy_nats_;
  for (std::size_t m = 0; m < precisions_.size(); ++m) {
    if (pi_(m) <= 0.0) continue;
    const Eigen::Index K = precisions_[m].front().rows();
    Eigen::MatrixXd sum = Eigen::MatrixXd::Zero(K, K);
    for (int a : offset_ids) sum += precisions_[m].at(a);
    total += pi_(m) * half_logdet_posterior_gain(sum);
  }
  return total;
}

namespace {

void enumerate_combinations(int n, int J, bool allow_duplicates,
                            std::vector<int>& current,
                            const std::function<void(const std::vector<int>&)>& emit) {
  if (static_cast<int>(current.size()) == J) {
    emit(current);
    return;
  }
  const int start = current.empty() ? 0
                                    : current.back() + (allow_duplicates ? 0 : 1);
  for (int a = start; a < n; ++a) {
    current.push_back(a);
    enumerate_combinations(n, J, allow_duplicates, current, emit);
    current.pop_back();
  }
}

std::size_t design_count(int n, int J, bool allow_duplicates) {
  // C(n, J) or C(n + J - 1, J); saturating
  double c = 1.0;
  const int top = allow_duplicates ? n + J - 1 : n;
  for (int i = 0; i < J; ++i) c *= double(top - i) / double(i + 1);
  return c > 1e15 ? std::size_t(1) << 62 : static_cast<std::size_t>(c + 0.5);
}

}  // namespace

std::vector<DesignScore> search_exhaustive(const DesignScorer& scorer, int J,
                                           bool allow_duplicates,
                                           std::size_t max_designs) {
  if (J < 1) throw ContractError("search_exhaustive: J must be >= 1");
  const int n = scorer.offset_count();
  if (design_count(n, J, allow_duplicates) > max_designs)
    throw ContractError(
        "search_exhaustive: candidate count exceeds the guard; use search_greedy");

  std::vector<DesignScore> scores;
  std::vector<int> current;
  enumerate_combinations(n, J, allow_duplicates, current,
                         [&](const std::vector<int>& ids) {
                           DesignScore ds;
                           ds.design.offset_ids = ids;
                           ds.eig_nats = scorer.score(ids);
                           ds.upper_bound = scorer.upper_bound();
                           scores.push_back(std::move(ds));
                         });
  std::stable_sort(scores.begin(), scores.end(),
                   [](const DesignScore& a, const DesignScore& b) {
                     if (a.eig_nats != b.eig_nats) return a.eig_nats > b.eig_nats;
                     return a.design.offset_ids < b.design.offset_ids;
                   });
  return scores;
}

DesignScore search_greedy(const DesignScorer& scorer, int J,
                          bool allow_duplicates) {
  if (J < 1) throw ContractError("search_greedy: J must be >= 1");
  const int n = scorer.offset_count();
  if (!allow_duplicates && J > n)
    throw ContractError("search_greedy: J exceeds the number of offsets");

  DesignScore result;
  result.upper_bound = scorer.upper_bound();
  std::vector<bool> used(n, false);
  for (int step = 0; step < J; ++step) {
    int best_offset = -1;
    double best_score = -std::numeric_limits<double>::infinity();
    for (int a = 0; a < n; ++a) {
      if (!allow_duplicates && used[a]) continue;
      std::vector<int> candidate = result.design.offset_ids;
      candidate.push_back(a);
      std::sort(candidate.begin(), candidate.end());
      const double s = scorer.score(candidate);
      if (s > best_score) {  // ties keep the lowest offset id
        best_score = s;
        best_offset = a;
      }
    }
    result.design.offset_ids.push_back(best_offset);
    used[best_offset] = true;
    result.eig_nats = best_score;
  }
  return result;
}

Design random_design(int offset_count, int J, std::uint64_t seed) {
  if (J > offset_count)
    throw ContractError("random_design: J exceeds the number of offsets");
  std::vector<int> ids(offset_count);
  std::iota(ids.begin(), ids.end(), 0);
  std::mt19937_64 rng(seed);
  // partial Fisher-Yates: the first J entries are the draw
  for (int i = 0; i < J; ++i) {
    std::uniform_int_distribution<int> pick(i, offset_count - 1);
    std::swap(ids[i], ids[pick(rng)]);
  }
  Design d;
  d.offset_ids.assign(ids.begin(), ids.begin() + J);
  return d;
}

std::string designs_to_json(const std::vector<DesignScore>& scores,
                            const std::vector<Offset>& offsets) {
  nlohmann::json arr = nlohmann::json::array();
  for (const DesignScore& s : scores) {
    nlohmann::json d;
    auto pairs = nlohmann::json::array();
    for (int a : s.design.offset_ids) {
      const Offset& o = offsets.at(a);
      pairs.push_back({o.dr, o.dc});
    }
    d["design"] = pairs;
    d["eig_nats"] = s.eig_nats;
    d["eig_bits"] = nats_to_bits(s.eig_nats);
    d["kind"] = s.upper_bound ? "upper_bound" : "exact";
    arr.push_back(std::move(d));
  }
  return arr.dump(2);
}

std::vector<DesignScore> designs_from_json(const std::string& json,
                                           const std::vector<Offset>& offsets) {
  nlohmann::json arr;
  try {
    arr = nlohmann::json::parse(json);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(std::string("design json: ") + e.what(), e.byte);
  }
  auto find_offset = [&](int dr, int dc) {
    for (std::size_t i = 0; i < offsets.size(); ++i)
      if (offsets[i].dr == dr && offsets[i].dc == dc) return static_cast<int>(i);
    throw ContractError("design json: offset [" + std::to_string(dr) + "," +
                        std::to_string(dc) + "] is not in the model's table");
  };
  std::vector<DesignScore> out;
  for (const auto& d : arr) {
    DesignScore s;
    for (const auto& p : d.at("design"))
      s.design.offset_ids.push_back(find_offset(p.at(0), p.at(1)));
    s.eig_nats = d.value("eig_nats", 0.0);
    s.upper_bound = d.value("kind", "exact") == std::string("upper_bound");
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace glimpse
