#include "coalmtl/mtl_model.hpp"

#include <atomic>
#include <cmath>
#include <iostream>
#include <limits>

#include "coalmtl/da_model.hpp"
#include "coalmtl/errors.hpp"
#include "coalmtl/util.hpp"

namespace coalmtl {

void validate_correlation(const MatrixXd& r) {
  if (r.rows() != r.cols()) throw NumericalError("correlation matrix must be square");
  if (!r.isApprox(r.transpose(), 1e-10)) throw NumericalError("correlation matrix must be symmetric");
  for (int i = 0; i < r.rows(); ++i) {
    if (std::abs(r(i, i) - 1.0) > 1e-12)
      throw NumericalError("correlation matrix must have unit diagonal");
    for (int j = 0; j < r.cols(); ++j)
      if (r(i, j) < -1.0 - 1e-12 || r(i, j) > 1.0 + 1e-12)
        throw NumericalError("correlation entries must lie in [-1, 1]");
  }
  Eigen::SelfAdjointEigenSolver<MatrixXd> eig(r);
  if (eig.eigenvalues().minCoeff() < -1e-10)
    throw NumericalError("correlation matrix must be PSD");
}

MatrixXd normalize_to_correlation(const MatrixXd& m) {
  if ((m.diagonal().array() <= 0.0).any())
    throw NumericalError("cannot normalize a matrix with non-positive diagonal");
  VectorXd s = m.diagonal().cwiseSqrt().cwiseInverse();
  MatrixXd r = s.asDiagonal() * m * s.asDiagonal();
  r = 0.5 * (r + r.transpose().eval());
  r.diagonal().setOnes();
  return r;
}

double correlation_log_prior(const MatrixXd& r) {
  int d = static_cast<int>(r.rows());
  Eigen::LDLT<MatrixXd> ldlt(r);
  if (ldlt.info() != Eigen::Success || (ldlt.vectorD().array() <= 0.0).any())
    return -std::numeric_limits<double>::infinity();
  double logdet = ldlt.vectorD().array().log().sum();
  double out = (0.5 * (d + 1.0) * (d - 1.0) - 1.0) * logdet;
  for (int i = 0; i < d; ++i) {
    // i-th principal submatrix: R with row and column i removed.
    MatrixXd sub(d - 1, d - 1);
    for (int a = 0, ai = 0; a < d; ++a) {
      if (a == i) continue;
      for (int b = 0, bi = 0; b < d; ++b) {
        if (b == i) continue;
        sub(ai, bi++) = r(a, b);
      }
      ++ai;
    }
    double subdet = d == 1 ? 1.0 : sub.determinant();
    if (subdet <= 0.0) return -std::numeric_limits<double>::infinity();
    out -= 0.5 * (d + 1.0) * std::log(subdet);
  }
  return out;
}

namespace {

VectorXd inverse_diagonal(const MatrixXd& m, const char* what) {
  Eigen::LDLT<MatrixXd> ldlt(m);
  if (ldlt.info() != Eigen::Success || (ldlt.vectorD().array() <= 0.0).any())
    throw NumericalError(std::string("singular ") + what);
  return ldlt.solve(MatrixXd::Identity(m.rows(), m.cols())).diagonal();
}

struct SPosterior {
  VectorXd p, w, lam_inv_diag, r_inv_diag;

  SPosterior(const VectorXd& p_, const MatrixXd& lambda, const MatrixXd& r, const VectorXd& w_)
      : p(p_), w(w_) {
    lam_inv_diag = inverse_diagonal(lambda, "Lambda in S posterior");
    r_inv_diag = inverse_diagonal(r, "R in S posterior");
  }

  double value(const VectorXd& s) const {
    VectorXd a = s - p;
    double out = -s.sum();
    out -= 0.5 * a.cwiseProduct(a).dot(lam_inv_diag);
    out -= 0.5 * w.cwiseProduct(w)
                     .cwiseProduct((-2.0 * s).array().exp().matrix())
                     .dot(r_inv_diag);
    return out;
  }

  VectorXd grad(const VectorXd& s) const {
    VectorXd out = VectorXd::Constant(s.size(), -1.0);
    out -= (s - p).cwiseProduct(lam_inv_diag);
    out += w.cwiseProduct(w)
               .cwiseProduct((-2.0 * s).array().exp().matrix())
               .cwiseProduct(r_inv_diag);
    return out;
  }
};

}  // namespace

double s_log_posterior(const VectorXd& s, const VectorXd& p, const MatrixXd& lambda,
                       const MatrixXd& r, const VectorXd& w) {
  return SPosterior(p, lambda, r, w).value(s);
}

VectorXd s_grad(const VectorXd& s, const VectorXd& p, const MatrixXd& lambda, const MatrixXd& r,
                const VectorXd& w) {
  return SPosterior(p, lambda, r, w).grad(s);
}

VectorXd optimize_s(const VectorXd& s0, const VectorXd& p, const MatrixXd& lambda,
                    const MatrixXd& r, const VectorXd& w, bool* hit_cap) {
  SPosterior post(p, lambda, r, w);
  const int cap = 10000;
  const double tol = 1e-6;
  if (hit_cap) *hit_cap = false;

  VectorXd s = s0;
  double fs = post.value(s);
  const double max_step = 0.5;  // clip huge early steps; the schedule cannot
                                // retreat from a deep overshoot later
  for (int iter = 1; iter <= cap; ++iter) {
    VectorXd g = post.grad(s);
    VectorXd step = (0.1 / iter) * g;
    double step_norm = step.lpNorm<Eigen::Infinity>();
    if (step_norm < tol) return s;
    if (step_norm > max_step) step *= max_step / step_norm;
    VectorXd cand = s + step;
    double fc = post.value(cand);
    if (fc >= fs) {  // accept only improving steps
      s = std::move(cand);
      fs = fc;
    }
  }
  if (hit_cap) *hit_cap = true;
  static std::atomic<int> cap_warnings{0};
  int seen = ++cap_warnings;
  if (seen <= 3)
    std::cerr << "warning: optimize_s hit the iteration cap"
              << (seen == 3 ? " (further warnings suppressed)" : "") << "\n";
  return s;
}

MatrixXd r_update(const std::vector<VectorXd>& log_std, const std::vector<VectorXd>& weights) {
  if (log_std.size() != weights.size() || weights.empty())
    throw NumericalError("r_update needs matching per-leaf S and w");
  int d = static_cast<int>(weights[0].size());
  int k = static_cast<int>(weights.size());
  MatrixXd scatter = MatrixXd::Identity(d, d);
  for (int i = 0; i < k; ++i) {
    VectorXd u = (-log_std[i]).array().exp().matrix().cwiseProduct(weights[i]);
    scatter += u * u.transpose();
  }
  MatrixXd mode = scatter / (2.0 * d + k + 2.0);
  // Degenerate scatter cannot happen with the identity prior, but guard the
  // normalization anyway.
  if ((mode.diagonal().array() <= 0.0).any())
    mode += 1e-8 * MatrixXd::Identity(d, d);
  return normalize_to_correlation(mode);
}

void MtlConfig::validate() const {
  if (sigma2 <= 0.0 || rho2 <= 0.0) throw ConfigError("sigma2 and rho2 must be positive");
  if (max_iterations < 0) throw ConfigError("max_iterations must be >= 0");
  if (heldout_fraction <= 0.0 || heldout_fraction >= 1.0)
    throw ConfigError("heldout_fraction must lie in (0, 1)");
  if (threads < 1) throw ConfigError("threads must be >= 1");
}

namespace {

GaussianMessage weight_prior(const VectorXd& log_std, const MatrixXd& r) {
  VectorXd e = log_std.array().exp().matrix();
  MatrixXd cov = e.asDiagonal() * r * e.asDiagonal();
  return GaussianMessage::full_cov(VectorXd::Zero(log_std.size()), cov);
}

// Prior for each leaf's S: the downward (cavity) Gaussian at the leaf given
// the other leaves' hard values diffusing over the tree; its mean plays the
// parent value P and its covariance the branch-inflated Lambda.
std::vector<GaussianMessage> s_cavity_priors(const MtlModelState& state, double sigma2) {
  int k = state.task_count();
  std::vector<GaussianMessage> points;
  for (int i = 0; i < k; ++i)
    points.push_back(GaussianMessage::point(state.log_std[i], CovKind::Full));
  GaussianMessage prior =
      GaussianMessage::isotropic(VectorXd::Zero(state.dim()), sigma2, CovKind::Full);
  BpResult bp = bp_full(state.tree, points, state.lambda, prior);
  std::vector<GaussianMessage> out(k);
  for (int id = 0; id < k; ++id) out[state.tree.node(id).task] = bp.down[id];
  return out;
}

}  // namespace

MtlModelState mtl_fit(const std::vector<TaskDataset>& tasks, const MtlConfig& config) {
  config.validate();
  if (tasks.size() < 2) throw DataError("mtl_fit requires at least 2 tasks");

  std::vector<TaskDataset> train, held;
  for (std::size_t k = 0; k < tasks.size(); ++k) {
    auto [tr, ho] = split_heldout(tasks[k], config.heldout_fraction,
                                  config.seed * 1000003ULL + k);
    train.push_back(std::move(tr));
    held.push_back(std::move(ho));
  }

  int k = static_cast<int>(train.size());
  int d = train[0].dim();
  for (const auto& t : train)
    if (t.dim() != d) throw DataError("tasks must share one feature space");

  MtlModelState state;
  state.task_kind = train[0].kind;
  state.correlation = MatrixXd::Identity(d, d);
  state.lambda = DiffusionKernel::isotropic(d, config.sigma2,
                                            config.diag_lambda ? CovKind::Diag : CovKind::Full);
  state.log_std.assign(k, VectorXd::Zero(d));
  state.weights.resize(k);

  // Initialization: independent MAP weights with prior Nor(0, I) =
  // exp(0) I exp(0). The initial tree is agglomerated from each task's
  // log-scale statistic 0.5 log(w_d^2 + C_dd) -- the quantity the S
  // diffusion actually shares -- rather than from the raw weights, whose
  // signs carry no group information under this model.
  GaussianMessage prior0 = GaussianMessage::isotropic(VectorXd::Zero(d), 1.0, CovKind::Full);
  std::vector<WeightPosterior> init_posts(k);
  parallel_for(k, config.threads, [&](std::size_t i) {
    init_posts[i] = fit_weight_posterior(train[i], prior0, config.rho2, false);
  });
  for (int i = 0; i < k; ++i) state.weights[i] = init_posts[i].post.mean;
  {
    std::vector<GaussianMessage> msgs;
    for (const auto& p : init_posts) {
      VectorXd second_moment =
          p.post.mean.cwiseProduct(p.post.mean) + p.post.dense_cov().diagonal();
      VectorXd log_scale = (0.5 * second_moment.cwiseMax(1e-12).array().log()).matrix();
      msgs.push_back(GaussianMessage::diagonal(log_scale, VectorXd::Constant(d, 0.25)));
    }
    DiffusionKernel unit = DiffusionKernel::isotropic(d, 1.0, CovKind::Diag);
    state.tree = greedy_rate1(msgs, unit, config.threads);
  }

  std::vector<double> trace;
  trace.push_back(heldout_log_likelihood(state.weights, held, config.rho2));
  MtlModelState best = state;
  int best_iter = 0;

  for (int iter = 1; iter <= config.max_iterations; ++iter) {
    // Hard E: w given S, then S given w, against the current tree cavities.
    std::vector<GaussianMessage> cavities = s_cavity_priors(state, config.sigma2);
    std::vector<VectorXd> new_w(k), new_s(k);
    parallel_for(k, config.threads, [&](std::size_t i) {
      GaussianMessage wp = weight_prior(state.log_std[i], state.correlation);
      new_w[i] = map_weights(train[i], wp, config.rho2);
      new_s[i] = optimize_s(state.log_std[i], cavities[i].mean, cavities[i].dense_cov(),
                            state.correlation, new_w[i]);
    });
    state.weights = std::move(new_w);
    state.log_std = std::move(new_s);

    trace.push_back(heldout_log_likelihood(state.weights, held, config.rho2));

    // M: tree over the S point masses, then Lambda and R.
    std::vector<GaussianMessage> points;
    CovKind kind = state.lambda.is_diag() ? CovKind::Diag : CovKind::Full;
    for (int i = 0; i < k; ++i)
      points.push_back(GaussianMessage::point(state.log_std[i], kind));
    state.tree = greedy_rate1(points, state.lambda, config.threads);
    GaussianMessage s_root =
        GaussianMessage::isotropic(VectorXd::Zero(d), config.sigma2, kind);
    std::vector<GaussianMessage> marg =
        posterior_marginals(state.tree, points, state.lambda, s_root);
    // Halved step toward the scatter mode, as in the weight-sharing model.
    DiffusionKernel target =
        update_diffusion(state.tree, points, marg, state.lambda, state.lambda.is_diag());
    if (state.lambda.is_diag())
      state.lambda = DiffusionKernel::diagonal(0.5 * (state.lambda.diag() + target.diag()));
    else
      state.lambda = DiffusionKernel::full(0.5 * (state.lambda.dense() + target.dense()));
    state.correlation = r_update(state.log_std, state.weights);

    // Snapshot after the M-step so the stored tree reflects this iteration's
    // S estimates; the heldout score depends on the weights only. Ties go to
    // the later (more adapted) iteration.
    if (trace.back() >= trace[best_iter]) {
      best = state;
      best_iter = iter;
    }
  }

  best.heldout_trace = trace;
  best.selected_iteration = best_iter;
  return best;
}

double mtl_score(const MtlModelState& state, int task, const VectorXd& x) {
  if (task < 0 || task >= state.task_count()) throw DataError("task index out of range");
  if (x.size() != state.dim()) throw DataError("input dimension mismatch");
  return state.weights[task].dot(x);
}

double mtl_predict(const MtlModelState& state, int task, const VectorXd& x) {
  double s = mtl_score(state, task, x);
  return state.task_kind == TaskKind::Regression ? s : logistic(s);
}

double mtl_predict_label(const MtlModelState& state, int task, const VectorXd& x) {
  return mtl_predict(state, task, x) >= 0.5 ? 1.0 : -1.0;
}

}  // namespace coalmtl
