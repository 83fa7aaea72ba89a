#include "glimpse/models.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <limits>
#include <numeric>
#include <random>

namespace glimpse {

namespace {

constexpr double kLog2Pi = 1.8378770664093453;
constexpr double kPsiFloor = 1e-12;

void check_psi(const Eigen::VectorXd& psi, int offset_id) {
  if ((psi.array() <= 0.0).any())
    throw DegenerateNoiseError("degenerate noise for offset " +
                               std::to_string(offset_id));
}

}  // namespace

ProjectedFA project(const FAModel& fa, const RetinalTransform& rt,
                    const Eigen::VectorXd& psi_y, int offset_id) {
  if (fa.mu.size() != rt.pixel_count())
    throw ContractError("project: model dimension does not match the image");
  if (psi_y.size() != rt.active_count())
    throw ContractError("project: psi_y length must equal the active count");
  ProjectedFA pfa;
  pfa.offset_id = offset_id;
  pfa.layout_sig = rt.layout_signature();
  pfa.mu_y = rt.apply(fa.mu);
  pfa.W_a.resize(rt.active_count(), fa.factors());
  for (int k = 0; k < fa.factors(); ++k)
    pfa.W_a.col(k) = rt.apply(fa.W.col(k));
  pfa.psi_y = psi_y;
  return pfa;
}

Posterior posterior(const ProjectedFA& pfa, const Eigen::VectorXd& y) {
  if (y.size() != pfa.mu_y.size())
    throw ContractError("posterior: glimpse length mismatch");
  check_psi(pfa.psi_y, pfa.offset_id);
  const int K = pfa.factors();
  const Eigen::VectorXd inv_psi = pfa.psi_y.cwiseInverse();
  Eigen::MatrixXd precision = Eigen::MatrixXd::Identity(K, K);
  precision.noalias() +=
      pfa.W_a.transpose() * inv_psi.asDiagonal() * pfa.W_a;
  SpdFactor chol(precision);
  Posterior post;
  post.cov = chol.solve(Eigen::MatrixXd::Identity(K, K));
  post.mean = chol.solve(Eigen::VectorXd(
      pfa.W_a.transpose() * (inv_psi.asDiagonal() * (y - pfa.mu_y))));
  return post;
}

Posterior posterior_full_image(const FAModel& fa, const Eigen::VectorXd& x) {
  ProjectedFA whole;
  whole.offset_id = -1;
  whole.mu_y = fa.mu;
  whole.W_a = fa.W;
  whole.psi_y = fa.psi_x;
  return posterior(whole, x);
}

Reconstruction reconstruct(const FAModel& fa, const Posterior& post) {
  if (post.mean.size() != fa.factors())
    throw ContractError("reconstruct: posterior dimension mismatch");
  Reconstruction rec;
  rec.x_hat = fa.mu + fa.W * post.mean;
  const Eigen::MatrixXd WS = fa.W * post.cov;
  rec.pred_var = WS.cwiseProduct(fa.W).rowwise().sum() + fa.psi_x;
  return rec;
}

double marginal_loglik(const ProjectedFA& pfa, const Eigen::VectorXd& y) {
  if (y.size() != pfa.mu_y.size())
    throw ContractError("marginal_loglik: glimpse length mismatch");
  check_psi(pfa.psi_y, pfa.offset_id);
  const int K = pfa.factors();
  const Eigen::VectorXd r = y - pfa.mu_y;
  const Eigen::VectorXd inv_psi = pfa.psi_y.cwiseInverse();
  const Eigen::MatrixXd B = inv_psi.asDiagonal() * pfa.W_a;  // Psi^-1 W
  Eigen::MatrixXd G = Eigen::MatrixXd::Identity(K, K);
  G.noalias() += pfa.W_a.transpose() * B;
  SpdFactor chol(G);
  const Eigen::VectorXd Btr = B.transpose() * r;
  const double quad = r.dot(inv_psi.asDiagonal() * r) - Btr.dot(chol.solve(Btr));
  const double logdet = pfa.psi_y.array().log().sum() + chol.logdet();
  return -0.5 * quad - 0.5 * logdet - 0.5 * y.size() * kLog2Pi;
}

MixturePosterior responsibilities(const std::vector<ProjectedFA>& pfas,
                                  const Eigen::VectorXd& pi,
                                  const Eigen::VectorXd& y) {
  const int M = static_cast<int>(pfas.size());
  if (M < 1) throw ContractError("responsibilities: empty mixture");
  if (pi.size() != M)
    throw ContractError("responsibilities: pi length must match components");
  Eigen::VectorXd log_post(M);
  MixturePosterior mp;
  mp.posteriors.resize(M);
  for (int m = 0; m < M; ++m) {
    if (pi(m) > 0.0) {
      log_post(m) = std::log(pi(m)) + marginal_loglik(pfas[m], y);
      mp.posteriors[m] = posterior(pfas[m], y);
    } else {
      log_post(m) = -std::numeric_limits<double>::infinity();
      mp.posteriors[m] = Posterior{
          Eigen::VectorXd::Zero(pfas[m].factors()),
          Eigen::MatrixXd::Identity(pfas[m].factors(), pfas[m].factors())};
    }
  }
  const double lse = logsumexp(log_post);
  if (!std::isfinite(lse))
    throw Error("responsibilities: every component has zero density");
  mp.responsibilities = (log_post.array() - lse).exp();
  return mp;
}

Reconstruction mixture_reconstruct(const MoFAModel& mofa,
                                   const MixturePosterior& mp) {
  const int M = mofa.component_count();
  if (static_cast<int>(mp.posteriors.size()) != M ||
      mp.responsibilities.size() != M)
    throw ContractError("mixture_reconstruct: component count mismatch");
  const int D = mofa.components.front().dim();
  Reconstruction out;
  out.x_hat = Eigen::VectorXd::Zero(D);
  out.pred_var = Eigen::VectorXd::Zero(D);
  for (int m = 0; m < M; ++m) {
    const double r = mp.responsibilities(m);
    if (r == 0.0) continue;
    const Reconstruction rec = reconstruct(mofa.components[m], mp.posteriors[m]);
    out.x_hat += r * rec.x_hat;
    out.pred_var += r * rec.pred_var;
  }
  return out;
}

double component_entropy(const Eigen::VectorXd& r) {
  double h = 0.0;
  for (Eigen::Index i = 0; i < r.size(); ++i)
    if (r(i) > 0.0) h -= r(i) * std::log2(r(i));
  return h;
}

FAModel fit_ppca(const ImageSet& X, int K) {
  const int D = X.pixel_count();
  const int N = X.count();
  const int rank_bound = std::min(D, N - 1);
  if (K < 1 || K >= rank_bound)
    throw ContractError("fit_ppca: K must lie in [1, " +
                        std::to_string(rank_bound - 1) + "] for this data");
  const Eigen::VectorXd mu = X.data.rowwise().mean();
  Eigen::MatrixXd centered = X.data.colwise() - mu;
  Eigen::MatrixXd S = (centered * centered.transpose()) / double(N);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(S);
  if (eig.info() != Eigen::Success)
    throw Error("fit_ppca: eigendecomposition failed");
  const Eigen::VectorXd evals = eig.eigenvalues();  // ascending
  const Eigen::MatrixXd evecs = eig.eigenvectors();

  double sigma2 = 0.0;
  for (int i = 0; i < D - K; ++i) sigma2 += std::max(evals(i), 0.0);
  sigma2 = std::max(sigma2 / double(D - K), kPsiFloor);

  FAModel fa;
  fa.mu = mu;
  fa.W.resize(D, K);
  for (int k = 0; k < K; ++k) {
    const int j = D - 1 - k;  // largest first
    const double scale = std::sqrt(std::max(evals(j) - sigma2, 0.0));
    fa.W.col(k) = evecs.col(j) * scale;
  }
  fa.psi_x = Eigen::VectorXd::Constant(D, sigma2);
  return fa;
}

namespace {

// Per-example Gaussian log likelihood of data with sample covariance S
// under C = W W^T + diag(psi), evaluated through the K-dim inner system.
double fa_loglik_from_cov(const Eigen::MatrixXd& S, const Eigen::MatrixXd& W,
                          const Eigen::VectorXd& psi) {
  const int D = static_cast<int>(S.rows());
  const int K = static_cast<int>(W.cols());
  const Eigen::VectorXd inv_psi = psi.cwiseInverse();
  const Eigen::MatrixXd B = inv_psi.asDiagonal() * W;
  Eigen::MatrixXd G = Eigen::MatrixXd::Identity(K, K);
  G.noalias() += W.transpose() * B;
  SpdFactor chol(G);
  const double logdet = psi.array().log().sum() + chol.logdet();
  // tr(C^-1 S) = tr(Psi^-1 S) - tr(G^-1 B^T S B)
  const Eigen::MatrixXd BtS = B.transpose() * S;  // K x D
  const double tr = S.diagonal().dot(inv_psi) -
                    chol.solve(Eigen::MatrixXd(BtS * B)).trace();
  return -0.5 * (D * kLog2Pi + logdet + tr);
}

}  // namespace

FaEmResult fit_fa_em(const ImageSet& X, int K, int max_iters, double tol) {
  const int D = X.pixel_count();
  const int N = X.count();
  if (N <= K) throw ContractError("fit_fa_em: need more examples than factors");

  const Eigen::VectorXd mu = X.data.rowwise().mean();
  Eigen::MatrixXd centered = X.data.colwise() - mu;
  const Eigen::MatrixXd S = (centered * centered.transpose()) / double(N);

  FAModel fa = fit_ppca(X, K);
  Eigen::VectorXd psi =
      (S.diagonal() - fa.W.cwiseProduct(fa.W).rowwise().sum())
          .cwiseMax(kPsiFloor);
  Eigen::MatrixXd W = fa.W;

  FaEmResult result;
  result.loglik_trace.push_back(fa_loglik_from_cov(S, W, psi));
  for (int it = 0; it < max_iters; ++it) {
    const Eigen::VectorXd inv_psi = psi.cwiseInverse();
    const Eigen::MatrixXd B = inv_psi.asDiagonal() * W;
    Eigen::MatrixXd G = Eigen::MatrixXd::Identity(K, K);
    G.noalias() += W.transpose() * B;
    SpdFactor chol(G);
    const Eigen::MatrixXd beta = chol.solve(Eigen::MatrixXd(B.transpose()));
    const Eigen::MatrixXd SBt = S * beta.transpose();          // D x K
    Eigen::MatrixXd Ezz = chol.solve(Eigen::MatrixXd::Identity(K, K));
    Ezz.noalias() += beta * SBt;
    const Eigen::MatrixXd W_new = SBt * SpdFactor(Ezz).solve(
        Eigen::MatrixXd::Identity(K, K));
    const Eigen::VectorXd psi_new =
        (S.diagonal() - (W_new.cwiseProduct(SBt)).rowwise().sum())
            .cwiseMax(kPsiFloor);
    W = W_new;
    psi = psi_new;
    const double ll = fa_loglik_from_cov(S, W, psi);
    const double prev = result.loglik_trace.back();
    result.loglik_trace.push_back(ll);
    if (std::abs(ll - prev) < tol * (std::abs(prev) + 1.0)) {
      result.converged = true;
      break;
    }
  }
  result.model = FAModel{mu, W, psi};
  return result;
}

KMeansResult kmeans(const Eigen::MatrixXd& X, int M, std::uint64_t seed,
                    int restarts, int max_iters) {
  const int N = static_cast<int>(X.cols());
  if (M < 1 || M > N) throw ContractError("kmeans: M must be in [1, N]");

  KMeansResult best;
  best.inertia = std::numeric_limits<double>::infinity();

  const Eigen::VectorXd sqnorm = X.colwise().squaredNorm();
  for (int restart = 0; restart < restarts; ++restart) {
    std::seed_seq seq{seed, static_cast<std::uint64_t>(restart)};
    std::mt19937_64 rng(seq);
    std::vector<int> order(N);
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    Eigen::MatrixXd C(X.rows(), M);
    for (int m = 0; m < M; ++m) C.col(m) = X.col(order[m]);

    std::vector<int> assign(N, -1);
    int reseeds = 0;
    for (int it = 0; it < max_iters; ++it) {
      // squared distances via the expansion |x|^2 - 2 x.c + |c|^2
      Eigen::MatrixXd dots = C.transpose() * X;  // M x N
      Eigen::VectorXd cn = C.colwise().squaredNorm();
      bool changed = false;
      std::vector<double> min_d(N);
      for (int i = 0; i < N; ++i) {
        int arg = 0;
        double bestd = std::numeric_limits<double>::infinity();
        for (int m = 0; m < M; ++m) {
          const double d = sqnorm(i) - 2.0 * dots(m, i) + cn(m);
          if (d < bestd) {
            bestd = d;
            arg = m;
          }
        }
        min_d[i] = bestd;
        if (assign[i] != arg) {
          assign[i] = arg;
          changed = true;
        }
      }
      // refill any emptied cluster from the farthest point
      std::vector<int> count(M, 0);
      for (int i = 0; i < N; ++i) ++count[assign[i]];
      for (int m = 0; m < M; ++m) {
        if (count[m] > 0) continue;
        int far = static_cast<int>(std::max_element(min_d.begin(), min_d.end()) -
                                   min_d.begin());
        --count[assign[far]];
        assign[far] = m;
        count[m] = 1;
        min_d[far] = 0.0;
        changed = true;
        ++reseeds;
        std::cerr << "glimpse: kmeans re-seeded empty cluster " << m << "\n";
      }
      C.setZero();
      for (int i = 0; i < N; ++i) C.col(assign[i]) += X.col(i);
      for (int m = 0; m < M; ++m) C.col(m) /= double(count[m]);
      if (!changed) break;
    }

    double inertia = 0.0;
    for (int i = 0; i < N; ++i)
      inertia += (X.col(i) - C.col(assign[i])).squaredNorm();
    if (inertia < best.inertia) {
      best.centroids = C;
      best.assignment = assign;
      best.inertia = inertia;
      best.reseed_events = reseeds;
    }
  }
  return best;
}

MoFAModel fit_mofa_x(const ImageSet& X, int K, int M, std::uint64_t seed) {
  const int N = X.count();
  if (N <= M * K)
    throw ContractError("fit_mofa_x: need more examples than M*K");
  MoFAModel mofa;
  if (M == 1) {
    mofa.components.push_back(fit_ppca(X, K));
    mofa.pi = Eigen::VectorXd::Ones(1);
    return mofa;
  }
  const KMeansResult km = kmeans(X.data, M, seed);
  mofa.pi.resize(M);
  for (int m = 0; m < M; ++m) {
    std::vector<int> members;
    for (int i = 0; i < N; ++i)
      if (km.assignment[i] == m) members.push_back(i);
    ImageSet sub;
    sub.rows = X.rows;
    sub.cols = X.cols;
    sub.norm = X.norm;
    sub.data.resize(X.data.rows(), members.size());
    for (std::size_t i = 0; i < members.size(); ++i)
      sub.data.col(i) = X.data.col(members[i]);
    mofa.components.push_back(fit_ppca(sub, K));
    mofa.pi(m) = double(members.size()) / double(N);
  }
  return mofa;
}

Eigen::VectorXd psi_y_init(const RetinalTransform& rt,
                           const Eigen::VectorXd& psi_x) {
  if (psi_x.size() != rt.pixel_count())
    throw ContractError("psi_y_init: psi_x length mismatch");
  if ((psi_x.array() <= 0.0).any())
    throw ContractError("psi_y_init: psi_x must be positive");
  Eigen::VectorXd out(rt.active_count());
  for (int a = 0; a < rt.active_count(); ++a) {
    const double w = rt.cell_weight(a);
    double s = 0.0;
    for (int p : rt.cell_pixels(a)) s += psi_x(p);
    out(a) = w * w * s;
  }
  return out;
}

MoFAModel ModelBundle::mixture() const { return MoFAModel{components, pi}; }

Eigen::VectorXd ModelBundle::noise_for(int component, int offset_id,
                                       const RetinalTransform& rt) const {
  if (!psi_y.empty()) {
    const auto& table = psi_y.at(component);
    const Eigen::VectorXd& v = table.at(offset_id);
    if (v.size() != rt.active_count())
      throw ContractError("ModelBundle: stored psi_y length mismatch at offset " +
                          std::to_string(offset_id));
    return v;
  }
  return psi_y_init(rt, components.at(component).psi_x);
}

void write_glim(const std::string& path, const ModelBundle& model) {
  GlimWriter w;
  w.u8(static_cast<std::uint8_t>(model.kind));
  const int M = static_cast<int>(model.components.size());
  w.u32(static_cast<std::uint32_t>(M));
  w.vec(model.pi);
  for (const FAModel& fa : model.components) {
    w.vec(fa.mu);
    w.mat(fa.W);
    w.vec(fa.psi_x);
  }
  w.str(model.retina_spec_json);
  w.u32(static_cast<std::uint32_t>(model.image_rows));
  w.u32(static_cast<std::uint32_t>(model.image_cols));
  w.u32(static_cast<std::uint32_t>(model.offsets.size()));
  for (const Offset& o : model.offsets) {
    w.i32(o.dr);
    w.i32(o.dc);
  }
  w.u8(model.psi_y.empty() ? 0 : 1);
  if (!model.psi_y.empty()) {
    for (const auto& per_comp : model.psi_y) {
      w.u32(static_cast<std::uint32_t>(per_comp.size()));
      for (const auto& v : per_comp) w.vec(v);
    }
  }
  w.str(model.metadata_json);
  w.write_file(path, GlimKind::model);
}

ModelBundle read_glim_model(const std::string& path) {
  GlimReader r(path);
  if (r.kind() != GlimKind::model)
    throw ParseError("GLIM payload is not a model", 6);
  ModelBundle m;
  m.kind = static_cast<ModelBundle::Kind>(r.u8());
  const std::uint32_t M = r.u32();
  m.pi = r.vec();
  for (std::uint32_t i = 0; i < M; ++i) {
    FAModel fa;
    fa.mu = r.vec();
    fa.W = r.mat();
    fa.psi_x = r.vec();
    m.components.push_back(std::move(fa));
  }
  m.retina_spec_json = r.str();
  m.image_rows = static_cast<int>(r.u32());
  m.image_cols = static_cast<int>(r.u32());
  const std::uint32_t n_off = r.u32();
  for (std::uint32_t i = 0; i < n_off; ++i) {
    Offset o;
    o.dr = r.i32();
    o.dc = r.i32();
    m.offsets.push_back(o);
  }
  if (r.u8()) {
    m.psi_y.resize(M);
    for (std::uint32_t c = 0; c < M; ++c) {
      const std::uint32_t n = r.u32();
      for (std::uint32_t a = 0; a < n; ++a) m.psi_y[c].push_back(r.vec());
    }
  }
  m.metadata_json = r.str();
  return m;
}

}  // namespace glimpse
