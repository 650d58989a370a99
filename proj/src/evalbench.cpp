#include "coalmtl/evalbench.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <memory>
#include <numeric>
#include <sstream>

#include "coalmtl/errors.hpp"
#include "coalmtl/util.hpp"

namespace coalmtl {

// ---------------------------------------------------------------------------
// PCA

std::pair<MultiTaskCorpus, PcaProjection> pca_project(const MultiTaskCorpus& corpus,
                                                      int target_dim) {
  corpus.validate();
  int d = corpus.dim;
  if (target_dim < 1 || target_dim > d)
    throw ConfigError("pca target dimension must lie in [1, D]");
  long n = 0;
  for (const auto& t : corpus.tasks) n += t.rows();
  if (n < target_dim) throw DataError("not enough pooled rows for the requested dimension");

  VectorXd mean = VectorXd::Zero(d);
  for (const auto& t : corpus.tasks)
    for (int r = 0; r < t.rows(); ++r)
      for (SparseMatrix::InnerIterator it(t.x, r); it; ++it) mean[it.col()] += it.value();
  mean /= static_cast<double>(n);

  MatrixXd cov = MatrixXd::Zero(d, d);
  VectorXd row(d);
  for (const auto& t : corpus.tasks)
    for (int r = 0; r < t.rows(); ++r) {
      row = -mean;
      for (SparseMatrix::InnerIterator it(t.x, r); it; ++it) row[it.col()] += it.value();
      cov.noalias() += row * row.transpose();
    }
  cov /= static_cast<double>(std::max<long>(1, n - 1));

  Eigen::SelfAdjointEigenSolver<MatrixXd> eig(cov);
  VectorXd evals = eig.eigenvalues().reverse();
  MatrixXd evecs = eig.eigenvectors().rowwise().reverse();

  int rank = 0;
  double cutoff = std::max(evals[0], 0.0) * 1e-12;
  for (int i = 0; i < d; ++i)
    if (evals[i] > cutoff) ++rank;
  int keep = target_dim;
  if (keep > rank) {
    std::cerr << "warning: requested " << target_dim << " components but rank is " << rank
              << "; keeping " << rank << "\n";
    keep = std::max(1, rank);
  }

  PcaProjection proj;
  proj.mean = mean;
  proj.components = evecs.leftCols(keep);
  proj.variances = evals.head(keep);
  return {apply_projection(corpus, proj), proj};
}

MultiTaskCorpus apply_projection(const MultiTaskCorpus& corpus, const PcaProjection& proj) {
  MultiTaskCorpus out;
  out.kind = corpus.kind;
  out.dim = proj.out_dim();
  for (const auto& t : corpus.tasks) {
    TaskDataset nt;
    nt.name = t.name;
    nt.index = t.index;
    nt.kind = t.kind;
    nt.y = t.y;
    std::vector<Eigen::Triplet<double>> trips;
    VectorXd x(corpus.dim);
    for (int r = 0; r < t.rows(); ++r) {
      x.setZero();
      for (SparseMatrix::InnerIterator it(t.x, r); it; ++it) x[it.col()] = it.value();
      VectorXd z = proj.apply(x);
      for (int c = 0; c < z.size(); ++c) trips.emplace_back(r, c, z[c]);
    }
    nt.x.resize(t.rows(), out.dim);
    nt.x.setFromTriplets(trips.begin(), trips.end());
    out.tasks.push_back(std::move(nt));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Baselines

namespace {

TaskDataset pool_tasks(const MultiTaskCorpus& corpus) {
  TaskDataset out;
  out.name = "pooled";
  out.kind = corpus.tasks[0].kind;
  long n = 0;
  for (const auto& t : corpus.tasks) n += t.rows();
  out.y.resize(n);
  std::vector<Eigen::Triplet<double>> trips;
  long at = 0;
  for (const auto& t : corpus.tasks) {
    for (int r = 0; r < t.rows(); ++r) {
      out.y[at] = t.y[r];
      for (SparseMatrix::InnerIterator it(t.x, r); it; ++it)
        trips.emplace_back(static_cast<int>(at), static_cast<int>(it.col()), it.value());
      ++at;
    }
  }
  out.x.resize(n, corpus.dim);
  out.x.setFromTriplets(trips.begin(), trips.end());
  return out;
}

}  // namespace

Predictor baseline_pool(const MultiTaskCorpus& corpus, const FitOptions& opt) {
  corpus.validate();
  TaskDataset pooled = pool_tasks(corpus);
  GaussianMessage prior =
      GaussianMessage::isotropic(VectorXd::Zero(corpus.dim), opt.sigma2, CovKind::Full);
  VectorXd w = map_weights(pooled, prior, opt.rho2);
  Predictor p;
  p.method = "pool";
  p.score = [w](int, const VectorXd& x) { return w.dot(x); };
  return p;
}

Predictor baseline_indp(const MultiTaskCorpus& corpus, const FitOptions& opt) {
  corpus.validate();
  auto weights = std::make_shared<std::vector<VectorXd>>(corpus.task_count());
  GaussianMessage prior =
      GaussianMessage::isotropic(VectorXd::Zero(corpus.dim), opt.sigma2, CovKind::Full);
  parallel_for(corpus.task_count(), opt.threads, [&](std::size_t k) {
    (*weights)[k] = map_weights(corpus.tasks[k], prior, opt.rho2);
  });
  Predictor p;
  p.method = "indp";
  p.score = [weights](int task, const VectorXd& x) { return (*weights)[task].dot(x); };
  return p;
}

Predictor baseline_feda(const MultiTaskCorpus& corpus, const FitOptions& opt) {
  corpus.validate();
  int d = corpus.dim;
  int k = corpus.task_count();
  int aug = (k + 1) * d;

  TaskDataset big;
  big.name = "feda";
  big.kind = corpus.tasks[0].kind;
  long n = 0;
  for (const auto& t : corpus.tasks) n += t.rows();
  big.y.resize(n);
  std::vector<Eigen::Triplet<double>> trips;
  long at = 0;
  for (int task = 0; task < k; ++task) {
    const TaskDataset& t = corpus.tasks[task];
    for (int r = 0; r < t.rows(); ++r) {
      big.y[at] = t.y[r];
      for (SparseMatrix::InnerIterator it(t.x, r); it; ++it) {
        int c = static_cast<int>(it.col());
        trips.emplace_back(static_cast<int>(at), c, it.value());                  // shared block
        trips.emplace_back(static_cast<int>(at), (task + 1) * d + c, it.value()); // task block
      }
      ++at;
    }
  }
  big.x.resize(n, aug);
  big.x.setFromTriplets(trips.begin(), trips.end());

  GaussianMessage prior = GaussianMessage::isotropic(VectorXd::Zero(aug), opt.sigma2, CovKind::Full);
  VectorXd w = map_weights(big, prior, opt.rho2);
  Predictor p;
  p.method = "feda";
  p.score = [w, d](int task, const VectorXd& x) {
    double s = 0.0;
    for (int i = 0; i < d; ++i) s += (w[i] + w[(task + 1) * d + i]) * x[i];
    return s;
  };
  return p;
}

std::vector<std::string> known_methods() {
  return {"pool", "indp",      "feda",      "coal-diag", "coal-full",
          "coal-diag+x", "coal-full+x", "coal-data", "mtl"};
}

Predictor fit_method(const std::string& method, const MultiTaskCorpus& corpus,
                     const FitOptions& opt) {
  if (method == "pool") return baseline_pool(corpus, opt);
  if (method == "indp") return baseline_indp(corpus, opt);
  if (method == "feda") return baseline_feda(corpus, opt);
  if (method == "mtl") {
    MtlConfig config;
    config.sigma2 = opt.sigma2;
    config.rho2 = opt.rho2;
    config.max_iterations = opt.em_iterations;
    config.heldout_fraction = opt.heldout_fraction;
    config.seed = opt.seed;
    config.threads = opt.threads;
    auto state = std::make_shared<MtlModelState>(mtl_fit(corpus.tasks, config));
    Predictor p;
    p.method = method;
    p.heldout_trace = state->heldout_trace;
    p.score = [state](int task, const VectorXd& x) { return mtl_score(*state, task, x); };
    return p;
  }
  if (method.rfind("coal-", 0) == 0) {
    DaConfig config;
    config.variant = da_variant_from_string(method.substr(5));
    config.sigma2 = opt.sigma2;
    config.rho2 = opt.rho2;
    config.max_iterations = opt.em_iterations;
    config.heldout_fraction = opt.heldout_fraction;
    config.seed = opt.seed;
    config.threads = opt.threads;
    auto state = std::make_shared<DaModelState>(da_fit(corpus.tasks, config));
    Predictor p;
    p.method = method;
    p.heldout_trace = state->heldout_trace;
    p.score = [state](int task, const VectorXd& x) { return da_score(*state, task, x); };
    return p;
  }
  throw ConfigError("unknown method '" + method + "'");
}

// ---------------------------------------------------------------------------
// Metrics

double metric_accuracy(const std::vector<double>& labels_pred,
                       const std::vector<double>& labels_true) {
  if (labels_pred.size() != labels_true.size() || labels_true.empty())
    throw DataError("accuracy requires matching non-empty label lists");
  double correct = 0.0;
  for (std::size_t i = 0; i < labels_true.size(); ++i)
    if (labels_pred[i] == labels_true[i]) correct += 1.0;
  return correct / static_cast<double>(labels_true.size());
}

double metric_auc(const std::vector<double>& scores, const std::vector<double>& labels) {
  if (scores.size() != labels.size() || scores.empty())
    throw DataError("auc requires matching non-empty score/label lists");
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

  double n_pos = 0.0, n_neg = 0.0, rank_sum = 0.0;
  std::size_t i = 0;
  double rank = 1.0;
  while (i < order.size()) {
    std::size_t j = i;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) ++j;
    double avg_rank = 0.5 * (rank + rank + static_cast<double>(j - i) - 1.0);
    for (std::size_t t = i; t < j; ++t) {
      if (labels[order[t]] > 0) {
        n_pos += 1.0;
        rank_sum += avg_rank;
      } else {
        n_neg += 1.0;
      }
    }
    rank += static_cast<double>(j - i);
    i = j;
  }
  if (n_pos == 0.0 || n_neg == 0.0)
    throw DataError("auc undefined: both classes must be present");
  return (rank_sum - n_pos * (n_pos + 1.0) / 2.0) / (n_pos * n_neg);
}

// ---------------------------------------------------------------------------
// Drivers

MultiTaskCorpus scramble_task(const MultiTaskCorpus& corpus, int task, double fraction,
                              RandomStream& rng) {
  corpus.validate();
  if (task < 0 || task >= corpus.task_count()) throw DataError("task index out of range");
  if (fraction < 0.0 || fraction > 1.0) throw ConfigError("scramble fraction must lie in [0, 1]");
  int d = corpus.dim;
  int m = static_cast<int>(std::ceil(fraction * d));

  std::vector<int> cols(d);
  std::iota(cols.begin(), cols.end(), 0);
  for (int i = d - 1; i > 0; --i) {  // choose the m columns to permute
    int j = static_cast<int>(rng.uniform_index(i + 1));
    std::swap(cols[i], cols[j]);
  }
  cols.resize(m);
  std::sort(cols.begin(), cols.end());
  std::vector<int> image = cols;
  for (int i = m - 1; i > 0; --i) {
    int j = static_cast<int>(rng.uniform_index(i + 1));
    std::swap(image[i], image[j]);
  }
  std::vector<int> mapped(d);
  std::iota(mapped.begin(), mapped.end(), 0);
  for (int i = 0; i < m; ++i) mapped[cols[i]] = image[i];

  const TaskDataset& src = corpus.tasks[task];
  TaskDataset extra;
  extra.name = src.name + "+scrambled";
  extra.index = corpus.task_count();
  extra.kind = src.kind;
  extra.y = src.y;
  std::vector<Eigen::Triplet<double>> trips;
  for (int r = 0; r < src.rows(); ++r)
    for (SparseMatrix::InnerIterator it(src.x, r); it; ++it)
      trips.emplace_back(r, mapped[it.col()], it.value());
  extra.x.resize(src.rows(), d);
  extra.x.setFromTriplets(trips.begin(), trips.end());

  MultiTaskCorpus out = corpus;
  out.tasks.push_back(std::move(extra));
  return out;
}

std::string EvalReport::to_csv() const {
  std::ostringstream os;
  os << "method,task,size,seed,metric,value\n";
  for (const auto& r : rows)
    os << r.method << "," << r.task << "," << r.size << "," << r.seed << "," << r.metric << ","
       << fmt_double(r.value) << "\n";
  return os.str();
}

std::vector<EvalRow> evaluate_predictor(const Predictor& pred,
                                        const std::vector<TaskDataset>& test,
                                        const std::string& metric, int size,
                                        std::uint64_t seed) {
  std::vector<EvalRow> rows;
  double macro = 0.0;
  int counted = 0;
  VectorXd x;
  for (std::size_t k = 0; k < test.size(); ++k) {
    const TaskDataset& t = test[k];
    if (t.rows() == 0) continue;
    std::vector<double> scores(t.rows()), labels(t.rows()), preds(t.rows());
    x.resize(t.dim());
    for (int r = 0; r < t.rows(); ++r) {
      x.setZero();
      for (SparseMatrix::InnerIterator it(t.x, r); it; ++it) x[it.col()] = it.value();
      scores[r] = pred.score(static_cast<int>(k), x);
      preds[r] = scores[r] >= 0.0 ? 1.0 : -1.0;
      labels[r] = t.y[r];
    }
    double value;
    if (metric == "auc") {
      try {
        value = metric_auc(scores, labels);
      } catch (const DataError&) {
        std::cerr << "warning: skipping single-class task '" << t.name << "' for AUC\n";
        continue;
      }
    } else {
      value = metric_accuracy(preds, labels);
    }
    rows.push_back({pred.method, t.name, size, seed, metric, value});
    macro += value;
    ++counted;
  }
  if (counted > 0)
    rows.push_back({pred.method, "macro", size, seed, metric, macro / counted});
  return rows;
}

namespace {

TaskDataset subsample(const TaskDataset& task, int n, const std::vector<int>& shuffled) {
  if (n >= task.rows()) return task;
  std::vector<int> ids(shuffled.begin(), shuffled.begin() + n);
  std::sort(ids.begin(), ids.end());
  return task.select(ids);
}

std::vector<int> shuffled_ids(int n, RandomStream& rng) {
  std::vector<int> ids(n);
  std::iota(ids.begin(), ids.end(), 0);
  for (int i = n - 1; i > 0; --i) {
    int j = static_cast<int>(rng.uniform_index(i + 1));
    std::swap(ids[i], ids[j]);
  }
  return ids;
}

struct SplitCorpus {
  MultiTaskCorpus train;
  std::vector<TaskDataset> test;
};

SplitCorpus split_corpus(const MultiTaskCorpus& corpus, double test_fraction,
                         std::uint64_t seed) {
  SplitCorpus out;
  out.train.kind = corpus.kind;
  out.train.dim = corpus.dim;
  for (int k = 0; k < corpus.task_count(); ++k) {
    auto [tr, te] = split_heldout(corpus.tasks[k], test_fraction,
                                  seed * 7919ULL + static_cast<std::uint64_t>(k));
    out.train.tasks.push_back(std::move(tr));
    out.test.push_back(std::move(te));
  }
  return out;
}

void maybe_project(MultiTaskCorpus& train, std::vector<TaskDataset>& test, int pca_dim) {
  if (pca_dim <= 0) return;
  auto [projected, proj] = pca_project(train, pca_dim);
  train = std::move(projected);
  MultiTaskCorpus tmp;
  tmp.kind = train.kind;
  tmp.dim = static_cast<int>(proj.mean.size());
  tmp.tasks = test;
  test = apply_projection(tmp, proj).tasks;
}

}  // namespace

EvalReport learning_curve(const MultiTaskCorpus& corpus, const std::vector<std::string>& methods,
                          const std::vector<int>& sizes, const std::vector<std::uint64_t>& seeds,
                          const ExperimentOptions& opt) {
  corpus.validate();
  EvalReport report;
  for (std::uint64_t seed : seeds) {
    SplitCorpus split = split_corpus(corpus, opt.test_fraction, seed);
    maybe_project(split.train, split.test, opt.pca_dim);
    std::vector<std::vector<int>> order;
    for (int k = 0; k < split.train.task_count(); ++k) {
      RandomStream rng(seed * 104729ULL + static_cast<std::uint64_t>(k) + 17ULL);
      order.push_back(shuffled_ids(split.train.tasks[k].rows(), rng));
    }
    for (int size : sizes) {
      MultiTaskCorpus sub;
      sub.kind = split.train.kind;
      sub.dim = split.train.dim;
      for (int k = 0; k < split.train.task_count(); ++k)
        sub.tasks.push_back(subsample(split.train.tasks[k], size, order[k]));
      for (const auto& method : methods) {
        FitOptions fit = opt.fit;
        fit.seed = seed;
        Predictor pred = fit_method(method, sub, fit);
        auto rows = evaluate_predictor(pred, split.test, opt.metric, size, seed);
        report.rows.insert(report.rows.end(), rows.begin(), rows.end());
        if (!pred.heldout_trace.empty())
          report.traces[method + "/" + std::to_string(size) + "/" + std::to_string(seed)] =
              pred.heldout_trace;
      }
    }
  }
  return report;
}

EvalReport target_transfer(const MultiTaskCorpus& corpus, int target_task, int source_size,
                           const std::vector<int>& target_sizes,
                           const std::vector<std::string>& methods,
                           const std::vector<std::uint64_t>& seeds,
                           const ExperimentOptions& opt) {
  corpus.validate();
  if (target_task < 0 || target_task >= corpus.task_count())
    throw ConfigError("target task index out of range");
  EvalReport report;
  for (std::uint64_t seed : seeds) {
    SplitCorpus split = split_corpus(corpus, opt.test_fraction, seed);
    maybe_project(split.train, split.test, opt.pca_dim);
    std::vector<std::vector<int>> order;
    for (int k = 0; k < split.train.task_count(); ++k) {
      RandomStream rng(seed * 104729ULL + static_cast<std::uint64_t>(k) + 17ULL);
      order.push_back(shuffled_ids(split.train.tasks[k].rows(), rng));
    }
    std::vector<TaskDataset> target_test(split.test.size());
    target_test[target_task] = split.test[target_task];
    for (int tsize : target_sizes) {
      MultiTaskCorpus sub;
      sub.kind = split.train.kind;
      sub.dim = split.train.dim;
      for (int k = 0; k < split.train.task_count(); ++k) {
        int n = (k == target_task) ? tsize : source_size;
        sub.tasks.push_back(subsample(split.train.tasks[k], n, order[k]));
      }
      for (const auto& method : methods) {
        FitOptions fit = opt.fit;
        fit.seed = seed;
        Predictor pred = fit_method(method, sub, fit);
        auto rows = evaluate_predictor(pred, target_test, opt.metric, tsize, seed);
        report.rows.insert(report.rows.end(), rows.begin(), rows.end());
        if (!pred.heldout_trace.empty())
          report.traces[method + "/" + std::to_string(tsize) + "/" + std::to_string(seed)] =
              pred.heldout_trace;
      }
    }
  }
  return report;
}

EvalReport scramble_experiment(const MultiTaskCorpus& corpus, int task,
                               const std::vector<double>& fractions,
                               const std::vector<std::string>& methods,
                               const std::vector<std::uint64_t>& seeds,
                               const ExperimentOptions& opt) {
  corpus.validate();
  EvalReport report;
  for (std::uint64_t seed : seeds) {
    for (double p : fractions) {
      RandomStream scramble_rng(seed * 48271ULL + static_cast<std::uint64_t>(p * 1000.0));
      MultiTaskCorpus noisy = scramble_task(corpus, task, p, scramble_rng);
      SplitCorpus split = split_corpus(noisy, opt.test_fraction, seed);
      maybe_project(split.train, split.test, opt.pca_dim);
      // Evaluate the original tasks only.
      std::vector<TaskDataset> test = split.test;
      test.back() = TaskDataset{};
      test.back().kind = test[0].kind;
      for (const auto& method : methods) {
        FitOptions fit = opt.fit;
        fit.seed = seed;
        Predictor pred = fit_method(method, split.train, fit);
        int size_key = static_cast<int>(std::lround(p * 100.0));
        auto rows = evaluate_predictor(pred, test, opt.metric, size_key, seed);
        report.rows.insert(report.rows.end(), rows.begin(), rows.end());
        if (!pred.heldout_trace.empty())
          report.traces[method + "/" + std::to_string(size_key) + "/" + std::to_string(seed)] =
              pred.heldout_trace;
      }
    }
  }
  return report;
}

}  // namespace coalmtl
