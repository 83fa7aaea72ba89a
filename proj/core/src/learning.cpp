#include "glimpse/learning.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <random>

namespace glimpse {

namespace {
constexpr double kLog2Pi = 1.8378770664093453;
}

bool GlimpseDataset::has_groups() const {
  return std::any_of(records.begin(), records.end(),
                     [](const GlimpseRecord& r) { return r.group >= 0; });
}

void write_glim(const std::string& path, const GlimpseDataset& data) {
  GlimWriter w;
  w.str(data.retina_spec_json);
  w.u32(static_cast<std::uint32_t>(data.image_rows));
  w.u32(static_cast<std::uint32_t>(data.image_cols));
  w.u32(static_cast<std::uint32_t>(data.offsets.size()));
  for (const Offset& o : data.offsets) {
    w.i32(o.dr);
    w.i32(o.dc);
  }
  w.u32(static_cast<std::uint32_t>(data.records.size()));
  for (const GlimpseRecord& r : data.records) {
    w.u32(static_cast<std::uint32_t>(r.offset_id));
    w.i32(r.group);
    w.vec(r.y);
  }
  w.write_file(path, GlimKind::glimpse_dataset);
}

GlimpseDataset read_glim_dataset(const std::string& path) {
  GlimReader r(path);
  if (r.kind() != GlimKind::glimpse_dataset)
    throw ParseError("GLIM payload is not a glimpse dataset", 6);
  GlimpseDataset data;
  data.retina_spec_json = r.str();
  data.image_rows = static_cast<int>(r.u32());
  data.image_cols = static_cast<int>(r.u32());
  const std::uint32_t n_off = r.u32();
  for (std::uint32_t i = 0; i < n_off; ++i) {
    Offset o;
    o.dr = r.i32();
    o.dc = r.i32();
    data.offsets.push_back(o);
  }
  const std::uint32_t n = r.u32();
  for (std::uint32_t i = 0; i < n; ++i) {
    GlimpseRecord rec;
    rec.offset_id = static_cast<int>(r.u32());
    rec.group = r.i32();
    rec.y = r.vec();
    data.records.push_back(std::move(rec));
  }
  return data;
}

PlacementSet placements_for(const GlimpseDataset& data) {
  return PlacementSet(RetinaSpec::from_json(data.retina_spec_json),
                      data.image_rows, data.image_cols, data.offsets);
}

Eigen::VectorXd MixtureLearnState::pi() const {
  Eigen::VectorXd p = (pi_logits.array() - logsumexp(pi_logits)).exp();
  return p;
}

// ---------------------------------------------------------------------------
// Likelihood and gradients. Records sharing a group are one stacked
// observation; ungrouped records are singleton groups. For each distinct
// multiset of offsets the K x K inner system is factorized once.

namespace {

struct LogicalRecord {
  std::vector<int> part_offsets;
  std::vector<const Eigen::VectorXd*> part_ys;
  std::vector<int> key;  // sorted part_offsets
};

std::vector<LogicalRecord> group_records(const GlimpseDataset& data) {
  std::vector<LogicalRecord> out;
  std::map<int, std::size_t> by_group;
  for (const GlimpseRecord& r : data.records) {
    if (r.offset_id < 0 ||
        r.offset_id >= static_cast<int>(data.offsets.size()))
      throw ContractError("glimpse record references an unknown offset");
    if (r.group < 0) {
      out.push_back({{r.offset_id}, {&r.y}, {}});
      continue;
    }
    auto it = by_group.find(r.group);
    if (it == by_group.end()) {
      by_group.emplace(r.group, out.size());
      out.push_back({{r.offset_id}, {&r.y}, {}});
    } else {
      out[it->second].part_offsets.push_back(r.offset_id);
      out[it->second].part_ys.push_back(&r.y);
    }
  }
  for (LogicalRecord& lr : out) {
    lr.key = lr.part_offsets;
    std::sort(lr.key.begin(), lr.key.end());
  }
  return out;
}

// Per-offset projections of one component's parameters.
struct OffsetCtx {
  Eigen::VectorXd mu_y;
  Eigen::MatrixXd W_a;
  Eigen::VectorXd psi, inv_psi;
  Eigen::MatrixXd B;  // diag(inv_psi) * W_a
  Eigen::MatrixXd P;  // W_a^T B
  double sum_log_psi = 0.0;
};

std::vector<OffsetCtx> project_offsets(const LearnState& state,
                                       const PlacementSet& placements) {
  const int A = placements.offset_count();
  const int K = state.factors();
  std::vector<OffsetCtx> ctx(A);
  for (int a = 0; a < A; ++a) {
    const RetinalTransform& rt = placements.rt(a);
    OffsetCtx& c = ctx[a];
    c.mu_y = rt.apply(state.mu);
    c.W_a.resize(rt.active_count(), K);
    for (int k = 0; k < K; ++k) c.W_a.col(k) = rt.apply(state.W.col(k));
    c.psi = state.t[a].array().exp();
    if (c.psi.size() != rt.active_count())
      throw ContractError("learn state noise length mismatch at offset " +
                          std::to_string(a));
    c.inv_psi = c.psi.cwiseInverse();
    c.B = c.inv_psi.asDiagonal() * c.W_a;
    c.P = c.W_a.transpose() * c.B;
    c.sum_log_psi = c.psi.array().log().sum();
  }
  return ctx;
}

struct GroupCtx {
  SpdFactor chol;
  double logdet = 0.0;
  double weight = 0.0;  // responsibility-weighted logical-record count
  explicit GroupCtx(const Eigen::MatrixXd& G) : chol(G), logdet(chol.logdet()) {}
};

using GroupCache = std::map<std::vector<int>, GroupCtx>;

GroupCtx& group_ctx(GroupCache& cache, const std::vector<int>& key,
                    const std::vector<OffsetCtx>& ctx, int K) {
  auto it = cache.find(key);
  if (it == cache.end()) {
    Eigen::MatrixXd G = Eigen::MatrixXd::Identity(K, K);
    for (int a : key) G += ctx[a].P;
    it = cache.emplace(key, GroupCtx(G)).first;
  }
  return it->second;
}

// u += V^T s (spread each cell value over its pixels).
void scatter_add(const RetinalTransform& rt, const Eigen::VectorXd& s,
                 double scale, Eigen::VectorXd& u) {
  for (int a = 0; a < rt.active_count(); ++a) {
    const double v = scale * rt.cell_weight(a) * s(a);
    for (int p : rt.cell_pixels(a)) u(p) += v;
  }
}

void scatter_add_cols(const RetinalTransform& rt, const Eigen::MatrixXd& S,
                      double scale, Eigen::MatrixXd& U) {
  for (int a = 0; a < rt.active_count(); ++a) {
    const double w = scale * rt.cell_weight(a);
    for (int p : rt.cell_pixels(a)) U.row(p) += w * S.row(a);
  }
}

struct ComponentAccum {
  Eigen::MatrixXd gW1, gW2;             // D x K
  std::vector<Eigen::VectorXd> gpsi1, gpsi2;  // per offset, psi-space halves
  GroupCache groups;

  ComponentAccum(int D, int K, const std::vector<OffsetCtx>& ctx) {
    gW1 = Eigen::MatrixXd::Zero(D, K);
    gW2 = Eigen::MatrixXd::Zero(D, K);
    for (const OffsetCtx& c : ctx) {
      gpsi1.push_back(Eigen::VectorXd::Zero(c.psi.size()));
      gpsi2.push_back(Eigen::VectorXd::Zero(c.psi.size()));
    }
  }
};

// Log density of one logical record under one component; optionally
// accumulates the per-record gradient pieces with the given weight.
double record_loglik(const LogicalRecord& lr, const LearnState& state,
                     const std::vector<OffsetCtx>& ctx,
                     const PlacementSet& placements, GroupCache& cache,
                     ComponentAccum* accum, double weight) {
  const int K = state.factors();
  GroupCtx& g = group_ctx(cache, lr.key, ctx, K);

  Eigen::VectorXd b = Eigen::VectorXd::Zero(K);
  double quad_diag = 0.0;
  double logdet = g.logdet;
  Eigen::Index total_dim = 0;
  for (std::size_t j = 0; j < lr.part_offsets.size(); ++j) {
    const OffsetCtx& c = ctx[lr.part_offsets[j]];
    const Eigen::VectorXd r = *lr.part_ys[j] - c.mu_y;
    if (r.size() != c.mu_y.size())
      throw ContractError("glimpse length mismatch at offset " +
                          std::to_string(lr.part_offsets[j]));
    b.noalias() += c.B.transpose() * r;
    quad_diag += r.dot(c.inv_psi.asDiagonal() * r);
    logdet += c.sum_log_psi;
    total_dim += r.size();
  }
  const Eigen::VectorXd cvec = g.chol.solve(b);
  const double quad = quad_diag - b.dot(cvec);
  const double ll = -0.5 * quad - 0.5 * logdet - 0.5 * total_dim * kLog2Pi;

  if (accum) {
    Eigen::VectorXd u = Eigen::VectorXd::Zero(state.dim());
    for (std::size_t j = 0; j < lr.part_offsets.size(); ++j) {
      const int a = lr.part_offsets[j];
      const OffsetCtx& c = ctx[a];
      const Eigen::VectorXd r = *lr.part_ys[j] - c.mu_y;
      const Eigen::VectorXd s =
          c.inv_psi.asDiagonal() * r - c.B * cvec;
      scatter_add(placements.rt(a), s, 1.0, u);
      accum->gpsi1[a] += (0.5 * weight) * s.cwiseAbs2();
    }
    const Eigen::VectorXd Wtu = state.W.transpose() * u;
    accum->gW1.noalias() += weight * (u * Wtu.transpose());
    g.weight += weight;
  }
  return ll;
}

// Folds the per-group J2 pieces (weighted counts times the shared solve)
// into the accumulator.
void finish_group_terms(const LearnState& state,
                        const std::vector<OffsetCtx>& ctx,
                        const PlacementSet& placements,
                        ComponentAccum& accum) {
  for (auto& [key, g] : accum.groups) {
    if (g.weight == 0.0) continue;
    for (int a : key) {
      const OffsetCtx& c = ctx[a];
      const Eigen::MatrixXd BG =
          g.chol.solve(Eigen::MatrixXd(c.B.transpose())).transpose();
      scatter_add_cols(placements.rt(a), BG, g.weight, accum.gW2);
      const Eigen::VectorXd diagM =
          c.inv_psi - c.B.cwiseProduct(BG).rowwise().sum();
      accum.gpsi2[a] += (0.5 * g.weight) * diagM;
    }
  }
  (void)state;
}

}  // namespace

double loglik(const LearnState& state, const GlimpseDataset& data,
              const PlacementSet& placements) {
  const auto ctx = project_offsets(state, placements);
  const auto logical = group_records(data);
  GroupCache cache;
  double total = 0.0;
  for (const LogicalRecord& lr : logical)
    total += record_loglik(lr, state, ctx, placements, cache, nullptr, 0.0);
  return total;
}

namespace {

struct FaEval {
  double ll = 0.0;
  Eigen::MatrixXd grad_W;
  std::vector<Eigen::VectorXd> grad_t;
};

FaEval eval_fa(const LearnState& state, const GlimpseDataset& data,
               const PlacementSet& placements) {
  const auto ctx = project_offsets(state, placements);
  const auto logical = group_records(data);
  ComponentAccum accum(state.dim(), state.factors(), ctx);
  FaEval out;
  for (const LogicalRecord& lr : logical)
    out.ll +=
        record_loglik(lr, state, ctx, placements, accum.groups, &accum, 1.0);
  finish_group_terms(state, ctx, placements, accum);
  out.grad_W = accum.gW1 - accum.gW2;
  out.grad_t.reserve(ctx.size());
  for (std::size_t a = 0; a < ctx.size(); ++a)
    out.grad_t.push_back(
        (accum.gpsi1[a] - accum.gpsi2[a]).cwiseProduct(ctx[a].psi));
  return out;
}

}  // namespace

Eigen::MatrixXd grad_W(const LearnState& state, const GlimpseDataset& data,
                       const PlacementSet& placements) {
  return eval_fa(state, data, placements).grad_W;
}

std::vector<Eigen::VectorXd> grad_psi(const LearnState& state,
                                      const GlimpseDataset& data,
                                      const PlacementSet& placements) {
  return eval_fa(state, data, placements).grad_t;
}

namespace {

struct MixEval {
  double ll = 0.0;
  MixtureGrad grad;
};

MixEval eval_mixture(const MixtureLearnState& state,
                     const GlimpseDataset& data,
                     const PlacementSet& placements, bool want_grad) {
  const int M = state.component_count();
  if (M < 1) throw ContractError("mixture: no components");
  const Eigen::VectorXd pi = state.pi();
  const Eigen::VectorXd log_pi = pi.array().log();

  std::vector<std::vector<OffsetCtx>> ctx;
  std::vector<GroupCache> caches(M);
  std::vector<ComponentAccum> accums;
  for (int m = 0; m < M; ++m) {
    ctx.push_back(project_offsets(state.components[m], placements));
    if (want_grad)
      accums.emplace_back(state.components[m].dim(),
                          state.components[m].factors(), ctx[m]);
  }
  const auto logical = group_records(data);

  MixEval out;
  Eigen::VectorXd resp_sum = Eigen::VectorXd::Zero(M);
  Eigen::VectorXd log_post(M);
  for (const LogicalRecord& lr : logical) {
    for (int m = 0; m < M; ++m)
      log_post(m) = log_pi(m) + record_loglik(lr, state.components[m], ctx[m],
                                              placements, caches[m], nullptr,
                                              0.0);
    const double lse = logsumexp(log_post);
    out.ll += lse;
    if (!want_grad) continue;
    const Eigen::VectorXd r = (log_post.array() - lse).exp();
    resp_sum += r;
    for (int m = 0; m < M; ++m) {
      if (r(m) == 0.0) continue;
      // second pass accumulates the weighted gradient pieces
      record_loglik(lr, state.components[m], ctx[m], placements,
                    accums[m].groups, &accums[m], r(m));
    }
  }

  if (want_grad) {
    out.grad.W.resize(M);
    out.grad.t.resize(M);
    for (int m = 0; m < M; ++m) {
      finish_group_terms(state.components[m], ctx[m], placements, accums[m]);
      out.grad.W[m] = accums[m].gW1 - accums[m].gW2;
      for (std::size_t a = 0; a < ctx[m].size(); ++a)
        out.grad.t[m].push_back((accums[m].gpsi1[a] - accums[m].gpsi2[a])
                                    .cwiseProduct(ctx[m][a].psi));
    }
    out.grad.pi_logits =
        resp_sum - static_cast<double>(logical.size()) * pi;
  }
  return out;
}

}  // namespace

double mixture_loglik(const MixtureLearnState& state,
                      const GlimpseDataset& data,
                      const PlacementSet& placements) {
  return eval_mixture(state, data, placements, false).ll;
}

MixtureGrad grad_mixture(const MixtureLearnState& state,
                         const GlimpseDataset& data,
                         const PlacementSet& placements) {
  return eval_mixture(state, data, placements, true).grad;
}

// ---------------------------------------------------------------------------
// Conjugate-gradient ascent with a strong-Wolfe line search.

namespace {

struct LineResult {
  bool ok = false;
  double alpha = 0.0;
  double value = 0.0;       // objective at x + alpha d
  Eigen::VectorXd grad;     // gradient there
};

// phi(a) = f(x + a d); seeks strong Wolfe conditions for ascent
// (f increases; |slope| shrinks).
class LineSearch {
public:
  LineSearch(const std::function<double(const Eigen::VectorXd&,
                                        Eigen::VectorXd&)>& fn,
             const Eigen::VectorXd& x, const Eigen::VectorXd& d, double f0,
             double slope0, const OptimizerConfig& cfg)
      : fn_(fn), x_(x), d_(d), f0_(f0), slope0_(slope0), cfg_(cfg),
        g_(x.size()) {}

  LineResult run(double alpha_init) {
    double alpha_prev = 0.0, f_prev = f0_, slope_prev = slope0_;
    double alpha = alpha_init;
    for (int i = 0; i < cfg_.max_line_iters; ++i) {
      const double f = eval(alpha);
      const double slope = g_.dot(d_);
      if (f < f0_ + cfg_.wolfe_c1 * alpha * slope0_ ||
          (i > 0 && f <= f_prev)) {
        return zoom(alpha_prev, f_prev, slope_prev, alpha, f);
      }
      if (std::abs(slope) <= cfg_.wolfe_c2 * std::abs(slope0_))
        return {true, alpha, f, g_};
      if (slope <= 0.0) return zoom(alpha, f, slope, alpha_prev, f_prev);
      alpha_prev = alpha;
      f_prev = f;
      slope_prev = slope;
      alpha *= 2.0;
    }
    return {};
  }

private:
  double eval(double alpha) { return fn_(x_ + alpha * d_, g_); }

  // lo carries the best (highest) value seen; the Wolfe point lies between.
  LineResult zoom(double a_lo, double f_lo, double slope_lo, double a_hi,
                  double f_hi) {
    for (int i = 0; i < cfg_.max_line_iters; ++i) {
      double a = quadratic_step(a_lo, f_lo, slope_lo, a_hi, f_hi);
      const double width = std::abs(a_hi - a_lo);
      const double lo = std::min(a_lo, a_hi), hi = std::max(a_lo, a_hi);
      if (!(a > lo + 0.01 * width && a < hi - 0.01 * width))
        a = 0.5 * (a_lo + a_hi);
      const double f = eval(a);
      const double slope = g_.dot(d_);
      if (f < f0_ + cfg_.wolfe_c1 * a * slope0_ || f <= f_lo) {
        a_hi = a;
        f_hi = f;
      } else {
        if (std::abs(slope) <= cfg_.wolfe_c2 * std::abs(slope0_))
          return {true, a, f, g_};
        if (slope * (a_hi - a_lo) <= 0.0) {
          a_hi = a_lo;
          f_hi = f_lo;
        }
        a_lo = a;
        f_lo = f;
        slope_lo = slope;
      }
      if (std::abs(a_hi - a_lo) < 1e-14 * (1.0 + std::abs(a_lo)))
        return f_lo > f0_ ? LineResult{true, a_lo, f_lo, g_} : LineResult{};
    }
    return {};
  }

  // Maximizer of the quadratic through (a_lo, f_lo, slope_lo) and f_hi.
  static double quadratic_step(double a_lo, double f_lo, double slope_lo,
                               double a_hi, double f_hi) {
    const double h = a_hi - a_lo;
    const double c = (f_hi - f_lo - slope_lo * h) / (h * h);
    if (c >= 0.0) return 0.5 * (a_lo + a_hi);
    return a_lo - slope_lo / (2.0 * c);
  }

  const std::function<double(const Eigen::VectorXd&, Eigen::VectorXd&)>& fn_;
  const Eigen::VectorXd& x_;
  const Eigen::VectorXd& d_;
  double f0_, slope0_;
  const OptimizerConfig& cfg_;
  Eigen::VectorXd g_;
};

}  // namespace

CgResult cg_maximize(
    const std::function<double(const Eigen::VectorXd&, Eigen::VectorXd&)>&
        value_and_grad,
    Eigen::VectorXd x0, const OptimizerConfig& cfg, double grad_tol) {
  CgResult result;
  Eigen::VectorXd x = std::move(x0);
  Eigen::VectorXd g(x.size());
  double f = value_and_grad(x, g);
  if (!std::isfinite(f))
    throw Error("cg_maximize: objective is not finite at the start");

  Eigen::VectorXd d = g;
  double alpha_prev = 0.0, slope_prev = 0.0;
  result.trace.push_back({0, f, g.norm(), 0.0});
  result.status = OptStatus::max_iters;

  for (int iter = 1; iter <= cfg.max_iters; ++iter) {
    const double gnorm = g.norm();
    if (gnorm <= grad_tol) {
      result.status = OptStatus::converged_grad;
      break;
    }
    double slope = g.dot(d);
    if (slope <= 0.0) {  // not an ascent direction: restart
      d = g;
      slope = g.dot(g);
    }
    double alpha_init =
        iter == 1 || alpha_prev == 0.0
            ? 1.0 / (1.0 + gnorm)
            : std::clamp(alpha_prev * slope_prev / slope, 1e-12, 1e8);

    LineSearch search(value_and_grad, x, d, f, slope, cfg);
    LineResult lr = search.run(alpha_init);
    if (!lr.ok && d != g) {  // retry once along the raw gradient
      d = g;
      slope = g.dot(g);
      LineSearch retry(value_and_grad, x, d, f, slope, cfg);
      lr = retry.run(1.0 / (1.0 + gnorm));
    }
    if (!lr.ok) {
      result.status = OptStatus::line_search_failed;
      break;
    }

    const Eigen::VectorXd g_old = g;
    const double f_old = f;
    x += lr.alpha * d;
    f = lr.value;
    g = lr.grad;
    result.trace.push_back({iter, f, g.norm(), lr.alpha});
    alpha_prev = lr.alpha;
    slope_prev = slope;

    if (std::abs(f - f_old) <= cfg.rel_ll_tol * (std::abs(f_old) + 1.0)) {
      result.status = OptStatus::converged_value;
      break;
    }
    // Polak-Ribiere with automatic reset
    const double denom = g_old.dot(g_old);
    double beta = denom > 0.0 ? g.dot(g - g_old) / denom : 0.0;
    beta = std::max(0.0, beta);
    if (iter % static_cast<int>(std::max<Eigen::Index>(x.size(), 2)) == 0)
      beta = 0.0;
    d = g + beta * d;
  }

  result.x = std::move(x);
  result.value = f;
  return result;
}

// ---------------------------------------------------------------------------
// Packing learnable blocks into one flat vector for the optimizer.

namespace {

struct Packing {
  bool learn_W, learn_psi, learn_pi;
  int M, D, K;
  std::vector<Eigen::Index> t_sizes;  // per offset
  Eigen::Index size() const {
    Eigen::Index per_comp = learn_W ? Eigen::Index(D) * K : 0;
    if (learn_psi)
      for (Eigen::Index s : t_sizes) per_comp += s;
    return per_comp * M + (learn_pi && M > 1 ? M : 0);
  }
};

void pack_state(const Packing& p, const LearnState& s, Eigen::Index& at,
                Eigen::VectorXd& v) {
  if (p.learn_W) {
    v.segment(at, Eigen::Index(p.D) * p.K) =
        Eigen::Map<const Eigen::VectorXd>(s.W.data(), s.W.size());
    at += s.W.size();
  }
  if (p.learn_psi)
    for (const Eigen::VectorXd& t : s.t) {
      v.segment(at, t.size()) = t;
      at += t.size();
    }
}

void unpack_state(const Packing& p, const Eigen::VectorXd& v,
                  Eigen::Index& at, LearnState& s) {
  if (p.learn_W) {
    s.W = Eigen::Map<const Eigen::MatrixXd>(v.data() + at, p.D, p.K);
    at += Eigen::Index(p.D) * p.K;
  }
  if (p.learn_psi)
    for (Eigen::VectorXd& t : s.t) {
      t = v.segment(at, t.size());
      at += t.size();
    }
}

void pack_grad(const Packing& p, const Eigen::MatrixXd& gW,
               const std::vector<Eigen::VectorXd>& gt, Eigen::Index& at,
               Eigen::VectorXd& v) {
  if (p.learn_W) {
    v.segment(at, gW.size()) =
        Eigen::Map<const Eigen::VectorXd>(gW.data(), gW.size());
    at += gW.size();
  }
  if (p.learn_psi)
    for (const Eigen::VectorXd& g : gt) {
      v.segment(at, g.size()) = g;
      at += g.size();
    }
}

}  // namespace

OptimizeResult optimize(const LearnState& init, const GlimpseDataset& data,
                        const PlacementSet& placements,
                        const OptimizerConfig& cfg, LearnFlags flags) {
  if (!flags.learn_W && !flags.learn_psi)
    throw ContractError("optimize: nothing to learn");
  Packing p{flags.learn_W, flags.learn_psi, false, 1, init.dim(),
            init.factors(), {}};
  for (const Eigen::VectorXd& t : init.t) p.t_sizes.push_back(t.size());

  LearnState work = init;
  Eigen::VectorXd x0(p.size());
  Eigen::Index at = 0;
  pack_state(p, init, at, x0);

  auto fn = [&](const Eigen::VectorXd& v, Eigen::VectorXd& g) {
    Eigen::Index i = 0;
    unpack_state(p, v, i, work);
    const FaEval e = eval_fa(work, data, placements);
    g.resize(v.size());
    i = 0;
    pack_grad(p, e.grad_W, e.grad_t, i, g);
    return e.ll;
  };
  const double grad_tol =
      cfg.grad_tol_per_record * std::max(1, data.count());
  CgResult cg = cg_maximize(fn, std::move(x0), cfg, grad_tol);

  OptimizeResult out;
  Eigen::Index i = 0;
  unpack_state(p, cg.x, i, work);
  out.state = work;
  out.trace = std::move(cg.trace);
  out.status = cg.status;
  return out;
}

MixtureOptimizeResult optimize_mixture(const MixtureLearnState& init,
                                       const GlimpseDataset& data,
                                       const PlacementSet& placements,
                                       const OptimizerConfig& cfg,
                                       LearnFlags flags) {
  const int M = init.component_count();
  if (M < 1) throw ContractError("optimize_mixture: no components");
  Packing p{flags.learn_W, flags.learn_psi, flags.learn_pi, M,
            init.components[0].dim(), init.components[0].factors(), {}};
  for (const Eigen::VectorXd& t : init.components[0].t)
    p.t_sizes.push_back(t.size());

  MixtureLearnState work = init;
  Eigen::VectorXd x0(p.size());
  Eigen::Index at = 0;
  for (const LearnState& s : init.components) pack_state(p, s, at, x0);
  if (p.learn_pi && M > 1) {
    x0.segment(at, M) = init.pi_logits;
    at += M;
  }

  auto fn = [&](const Eigen::VectorXd& v, Eigen::VectorXd& g) {
    Eigen::Index i = 0;
    for (LearnState& s : work.components) unpack_state(p, v, i, s);
    if (p.learn_pi && M > 1) {
      work.pi_logits = v.segment(i, M);
      i += M;
    }
    const MixEval e = eval_mixture(work, data, placements, true);
    g.resize(v.size());
    i = 0;
    for (int m = 0; m < M; ++m) pack_grad(p, e.grad.W[m], e.grad.t[m], i, g);
    if (p.learn_pi && M > 1) {
      g.segment(i, M) = e.grad.pi_logits;
      i += M;
    }
    return e.ll;
  };
  const double grad_tol =
      cfg.grad_tol_per_record * std::max(1, data.count());
  CgResult cg = cg_maximize(fn, std::move(x0), cfg, grad_tol);

  MixtureOptimizeResult out;
  Eigen::Index i = 0;
  for (LearnState& s : work.components) unpack_state(p, cg.x, i, s);
  if (p.learn_pi && M > 1) work.pi_logits = cg.x.segment(i, M);
  out.state = work;
  out.trace = std::move(cg.trace);
  out.status = cg.status;
  return out;
}

// ---------------------------------------------------------------------------
// Sampling glimpse corpora and initializing from them.

namespace {

GlimpseDataset dataset_shell(const PlacementSet& placements) {
  GlimpseDataset data;
  data.retina_spec_json = placements.spec().to_json();
  data.image_rows = placements.image_rows();
  data.image_cols = placements.image_cols();
  data.offsets = placements.offsets();
  return data;
}

}  // namespace

GlimpseDataset sample_glimpses_uniform(const ImageSet& images,
                                       const PlacementSet& placements, int n,
                                       std::uint64_t seed) {
  if (n < 1) throw ContractError("sample_glimpses_uniform: n must be >= 1");
  if (images.pixel_count() !=
      placements.image_rows() * placements.image_cols())
    throw ContractError("sample_glimpses_uniform: image dims mismatch");
  GlimpseDataset data = dataset_shell(placements);
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> pick_img(0, images.count() - 1);
  std::uniform_int_distribution<int> pick_off(0,
                                              placements.offset_count() - 1);
  for (int i = 0; i < n; ++i) {
    const int img = pick_img(rng);
    const int a = pick_off(rng);
    data.records.push_back(
        {a, placements.rt(a).apply(images.image(img)), -1});
  }
  return data;
}

GlimpseDataset sample_glimpses_stratified(const ImageSet& images,
                                          const PlacementSet& placements,
                                          int per_offset, std::uint64_t seed) {
  if (per_offset < 1)
    throw ContractError("sample_glimpses_stratified: per_offset must be >= 1");
  if (images.pixel_count() !=
      placements.image_rows() * placements.image_cols())
    throw ContractError("sample_glimpses_stratified: image dims mismatch");
  GlimpseDataset data = dataset_shell(placements);
  std::mt19937_64 rng(seed);
  const int N = images.count();
  for (int a = 0; a < placements.offset_count(); ++a) {
    if (N >= per_offset) {
      std::vector<int> idx(N);
      std::iota(idx.begin(), idx.end(), 0);
      for (int i = 0; i < per_offset; ++i) {
        std::uniform_int_distribution<int> pick(i, N - 1);
        std::swap(idx[i], idx[pick(rng)]);
        data.records.push_back(
            {a, placements.rt(a).apply(images.image(idx[i])), -1});
      }
    } else {
      std::uniform_int_distribution<int> pick(0, N - 1);
      for (int i = 0; i < per_offset; ++i)
        data.records.push_back(
            {a, placements.rt(a).apply(images.image(pick(rng))), -1});
    }
  }
  return data;
}

InitResult init_from_glimpses(const GlimpseDataset& data,
                              const PlacementSet& placements, int K,
                              int max_iters, double tol) {
  const int D = placements.image_rows() * placements.image_cols();
  const int n = data.count();
  if (n < 2) throw ContractError("init_from_glimpses: need at least 2 records");

  // Upsample every record; remember each offset's covered pixels.
  std::vector<std::vector<int>> observed(placements.offset_count());
  for (int a = 0; a < placements.offset_count(); ++a) {
    const RetinalTransform& rt = placements.rt(a);
    for (int c = 0; c < rt.active_count(); ++c)
      for (int p : rt.cell_pixels(c)) observed[a].push_back(p);
    std::sort(observed[a].begin(), observed[a].end());
  }

  Eigen::MatrixXd X = Eigen::MatrixXd::Zero(D, n);
  std::vector<int> coverage(D, 0);
  for (int i = 0; i < n; ++i) {
    const GlimpseRecord& rec = data.records[i];
    const RetinalTransform& rt = placements.rt(rec.offset_id);
    const auto up = rt.upsample(rec.y);
    X.col(i) = up.image;
    for (int p : observed[rec.offset_id]) ++coverage[p];
  }

  InitResult result;
  for (int p = 0; p < D; ++p)
    if (coverage[p] == 0) result.never_observed.push_back(p);
  if (!result.never_observed.empty())
    std::cerr << "glimpse: init_from_glimpses: " << result.never_observed.size()
              << " pixels never observed; falling back to the global mean\n";

  // Column means over observed entries only.
  Eigen::VectorXd mu = Eigen::VectorXd::Zero(D);
  for (int i = 0; i < n; ++i)
    for (int p : observed[data.records[i].offset_id]) mu(p) += X(p, i);
  double global_sum = 0.0;
  long global_cnt = 0;
  for (int p = 0; p < D; ++p) {
    if (coverage[p] > 0) {
      global_sum += mu(p);
      global_cnt += coverage[p];
    }
  }
  const double global_mean = global_cnt > 0 ? global_sum / double(global_cnt) : 0.0;
  for (int p = 0; p < D; ++p)
    mu(p) = coverage[p] > 0 ? mu(p) / coverage[p] : global_mean;

  // EM: impute missing entries from the current model, refit PPCA in
  // closed form, repeat.
  Eigen::MatrixXd completed(D, n);
  for (int i = 0; i < n; ++i) {
    completed.col(i) = mu;
    for (int p : observed[data.records[i].offset_id])
      completed(p, i) = X(p, i);
  }

  ImageSet wrap;
  wrap.rows = placements.image_rows();
  wrap.cols = placements.image_cols();
  FAModel fa;
  double sigma2 = 0.0;
  for (int it = 0; it < max_iters; ++it) {
    wrap.data = completed;
    fa = fit_ppca(wrap, K);
    sigma2 = fa.psi_x(0);

    double change = 0.0, norm = 0.0;
    for (int a = 0; a < placements.offset_count(); ++a) {
      // posterior over z from this offset's observed pixels
      Eigen::MatrixXd Wo(observed[a].size(), K);
      Eigen::VectorXd muo(observed[a].size());
      for (std::size_t j = 0; j < observed[a].size(); ++j) {
        Wo.row(j) = fa.W.row(observed[a][j]);
        muo(j) = fa.mu(observed[a][j]);
      }
      Eigen::MatrixXd G = Eigen::MatrixXd::Identity(K, K);
      G.noalias() += Wo.transpose() * Wo / sigma2;
      SpdFactor chol(G);
      std::vector<bool> obs_mask(D, false);
      for (int p : observed[a]) obs_mask[p] = true;

      for (int i = 0; i < n; ++i) {
        if (data.records[i].offset_id != a) continue;
        Eigen::VectorXd xo(observed[a].size());
        for (std::size_t j = 0; j < observed[a].size(); ++j)
          xo(j) = X(observed[a][j], i);
        const Eigen::VectorXd z =
            chol.solve(Eigen::VectorXd(Wo.transpose() * (xo - muo))) / sigma2;
        const Eigen::VectorXd xhat = fa.mu + fa.W * z;
        for (int p = 0; p < D; ++p) {
          if (obs_mask[p]) continue;
          const double nv = xhat(p);
          change += (nv - completed(p, i)) * (nv - completed(p, i));
          norm += nv * nv;
          completed(p, i) = nv;
        }
      }
    }
    if (change <= tol * tol * (norm + 1e-30)) break;
  }

  result.state.mu = fa.mu;
  result.state.W = fa.W;
  result.sigma2 = sigma2;
  const Eigen::VectorXd psi_x = Eigen::VectorXd::Constant(D, sigma2);
  for (int a = 0; a < placements.offset_count(); ++a)
    result.state.t.push_back(
        psi_y_init(placements.rt(a), psi_x).array().log());
  return result;
}

double independent_baseline_loglik(const GlimpseDataset& data) {
  if (data.records.empty())
    throw ContractError("independent_baseline_loglik: empty dataset");
  double ll = 0.0;
  for (std::size_t a = 0; a < data.offsets.size(); ++a) {
    std::vector<const Eigen::VectorXd*> ys;
    for (const GlimpseRecord& r : data.records)
      if (r.offset_id == static_cast<int>(a)) ys.push_back(&r.y);
    if (ys.empty()) continue;
    const Eigen::Index dim = ys.front()->size();
    Eigen::VectorXd mean = Eigen::VectorXd::Zero(dim);
    for (const auto* y : ys) mean += *y;
    mean /= double(ys.size());
    Eigen::VectorXd var = Eigen::VectorXd::Zero(dim);
    for (const auto* y : ys) var += (*y - mean).cwiseAbs2();
    var = (var / double(ys.size())).cwiseMax(1e-12);
    const double logdet = var.array().log().sum();
    for (const auto* y : ys) {
      const double quad = (*y - mean).cwiseQuotient(var).dot(*y - mean);
      ll += -0.5 * quad - 0.5 * logdet - 0.5 * dim * kLog2Pi;
    }
  }
  return ll;
}

}  // namespace glimpse
