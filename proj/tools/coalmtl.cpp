// Command-line front end: train, predict, eval, synth, experiment.

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "coalmtl/errors.hpp"
#include "coalmtl/evalbench.hpp"
#include "coalmtl/serialize.hpp"
#include "coalmtl/synth.hpp"
#include "coalmtl/util.hpp"

using namespace coalmtl;

namespace {

int resolve_threads(int flag_value) {
  if (flag_value > 0) return flag_value;
  if (const char* env = std::getenv("COALMTL_THREADS")) {
    int v = std::atoi(env);
    if (v > 0) return v;
  }
  return 1;
}

std::vector<std::string> split_list(const std::string& csv) {
  std::vector<std::string> out;
  std::stringstream ss(csv);
  std::string item;
  while (std::getline(ss, item, ','))
    if (!item.empty()) out.push_back(item);
  return out;
}

template <typename T>
std::vector<T> parse_numbers(const std::string& csv, const char* what) {
  std::vector<T> out;
  for (const auto& tok : split_list(csv)) {
    try {
      if constexpr (std::is_integral_v<T>)
        out.push_back(static_cast<T>(std::stoll(tok)));
      else
        out.push_back(static_cast<T>(std::stod(tok)));
    } catch (const std::exception&) {
      throw ConfigError(std::string("bad ") + what + " value '" + tok + "'");
    }
  }
  if (out.empty()) throw ConfigError(std::string("empty ") + what + " list");
  return out;
}

struct TrainArgs {
  std::string data_path, out_prefix = "model";
  std::string model = "da", variant = "full";
  double sigma2 = 1.0, rho2 = 1.0, heldout = 0.10;
  int iters = 20, threads = 0;
  std::uint64_t seed = 1;
  std::string discrete;
};

std::string trace_csv(const std::vector<double>& trace, int selected) {
  std::ostringstream os;
  os << "iteration,heldout_ll,selected\n";
  for (std::size_t i = 0; i < trace.size(); ++i)
    os << i << "," << fmt_double(trace[i]) << ","
       << (static_cast<int>(i) == selected ? 1 : 0) << "\n";
  return os.str();
}

int run_train(const TrainArgs& args) {
  MultiTaskCorpus corpus = load_corpus(args.data_path);
  std::vector<std::string> names = corpus.task_names();

  std::string model_json;
  std::vector<double> trace;
  int selected = 0;
  CoalescentTree tree;

  if (args.model == "da") {
    DaConfig config;
    config.variant = da_variant_from_string(args.variant);
    config.sigma2 = args.sigma2;
    config.rho2 = args.rho2;
    config.max_iterations = args.iters;
    config.heldout_fraction = args.heldout;
    config.seed = args.seed;
    config.threads = resolve_threads(args.threads);
    if (!args.discrete.empty())
      for (int f : parse_numbers<int>(args.discrete, "discrete feature"))
        config.discrete_features.push_back(f - 1);  // 1-based on the CLI
    DaModelState state = da_fit(corpus.tasks, config);
    model_json = serialize_da_model(state, config, names);
    trace = state.heldout_trace;
    selected = state.selected_iteration;
    tree = state.tree;
  } else if (args.model == "mtl") {
    MtlConfig config;
    config.sigma2 = args.sigma2;
    config.rho2 = args.rho2;
    config.max_iterations = args.iters;
    config.heldout_fraction = args.heldout;
    config.seed = args.seed;
    config.threads = resolve_threads(args.threads);
    MtlModelState state = mtl_fit(corpus.tasks, config);
    model_json = serialize_mtl_model(state, config, names);
    trace = state.heldout_trace;
    selected = state.selected_iteration;
    tree = state.tree;
  } else {
    throw ConfigError("unknown model '" + args.model + "' (da or mtl)");
  }

  write_file(args.out_prefix + ".model.json", model_json);
  write_file(args.out_prefix + ".trace.csv", trace_csv(trace, selected));
  write_file(args.out_prefix + ".tree.nwk", tree.to_newick(names) + "\n");
  write_file(args.out_prefix + ".tree.dot", tree.to_dot(names));
  std::cout << "trained " << args.model << " model on " << corpus.task_count() << " tasks; "
            << "selected iteration " << selected << "\n";
  return 0;
}

// Maps corpus tasks onto the model's task order by name.
std::vector<int> match_tasks(const std::vector<std::string>& model_names,
                             const MultiTaskCorpus& corpus) {
  std::vector<int> out;
  for (const auto& t : corpus.tasks) {
    auto it = std::find(model_names.begin(), model_names.end(), t.name);
    if (it == model_names.end())
      throw DataError("task '" + t.name + "' is not part of the model");
    out.push_back(static_cast<int>(it - model_names.begin()));
  }
  return out;
}

int run_eval(const std::string& model_path, const std::string& data_path,
             const std::string& metric, const std::string& csv_out) {
  LoadedModel model = load_model(model_path);
  MultiTaskCorpus corpus = load_corpus(data_path);
  std::vector<int> task_of = match_tasks(model.task_names, corpus);

  Predictor pred;
  pred.method = model.kind == "da" ? "coal-" + to_string(model.da_config.variant) : "mtl";
  if (model.kind == "da") {
    auto state = std::make_shared<DaModelState>(model.da);
    pred.score = [state](int task, const VectorXd& x) { return da_score(*state, task, x); };
  } else {
    auto state = std::make_shared<MtlModelState>(model.mtl);
    pred.score = [state](int task, const VectorXd& x) { return mtl_score(*state, task, x); };
  }

  TaskKind kind = model.kind == "da" ? model.da.task_kind : model.mtl.task_kind;
  double rho2 = model.kind == "da" ? model.da_config.rho2 : model.mtl_config.rho2;

  std::ostringstream csv;
  csv << "method,task,size,seed,metric,value\n";
  double macro = 0.0;
  int counted = 0;
  VectorXd x;
  for (std::size_t k = 0; k < corpus.tasks.size(); ++k) {
    const TaskDataset& t = corpus.tasks[k];
    if (t.rows() == 0) continue;
    std::vector<double> scores(t.rows()), labels(t.rows()), plabels(t.rows());
    x.resize(t.dim());
    double se = 0.0;
    for (int r = 0; r < t.rows(); ++r) {
      x.setZero();
      for (SparseMatrix::InnerIterator it(t.x, r); it; ++it) x[it.col()] = it.value();
      scores[r] = pred.score(task_of[k], x);
      plabels[r] = scores[r] >= 0.0 ? 1.0 : -1.0;
      labels[r] = t.y[r];
      se += (scores[r] - t.y[r]) * (scores[r] - t.y[r]);
    }
    double value;
    std::string used = metric;
    if (kind == TaskKind::Regression) {
      used = "rmse";
      value = std::sqrt(se / t.rows());
    } else if (metric == "auc") {
      value = metric_auc(scores, labels);
    } else {
      value = metric_accuracy(plabels, labels);
    }
    std::cout << t.name << " " << used << " " << fmt_double(value) << "\n";
    csv << pred.method << "," << t.name << ",0,0," << used << "," << fmt_double(value) << "\n";
    macro += value;
    ++counted;
  }
  if (counted == 0) throw DataError("no evaluable tasks");
  double m = macro / counted;
  std::string used = kind == TaskKind::Regression ? "rmse" : metric;
  std::cout << "macro " << used << " " << fmt_double(m) << "\n";
  csv << pred.method << ",macro,0,0," << used << "," << fmt_double(m) << "\n";
  if (!csv_out.empty()) write_file(csv_out, csv.str());
  return 0;
}

int run_predict(const std::string& model_path, const std::string& data_path,
                const std::string& out_path) {
  LoadedModel model = load_model(model_path);
  MultiTaskCorpus corpus = load_corpus(data_path);
  std::vector<int> task_of = match_tasks(model.task_names, corpus);

  std::ostringstream os;
  VectorXd x;
  for (std::size_t k = 0; k < corpus.tasks.size(); ++k) {
    const TaskDataset& t = corpus.tasks[k];
    x.resize(t.dim());
    for (int r = 0; r < t.rows(); ++r) {
      x.setZero();
      for (SparseMatrix::InnerIterator it(t.x, r); it; ++it) x[it.col()] = it.value();
      double value = model.kind == "da" ? da_predict(model.da, task_of[k], x)
                                        : mtl_predict(model.mtl, task_of[k], x);
      os << t.name << " " << r << " " << fmt_double(value) << "\n";
    }
  }
  if (out_path.empty())
    std::cout << os.str();
  else
    write_file(out_path, os.str());
  return 0;
}

struct SynthArgs {
  std::string kind = "da", task_kind = "classification", out_prefix = "synth";
  int tasks = 4, dim = 10, per_task = 100;
  double sigma2 = 1.0, rho2 = 1.0, min_delta = 0.0, input_shift = 0.0;
  std::uint64_t seed = 1;
};

int run_synth(const SynthArgs& args) {
  TaskKind kind;
  if (args.task_kind == "classification")
    kind = TaskKind::Classification;
  else if (args.task_kind == "regression")
    kind = TaskKind::Regression;
  else
    throw ConfigError("task kind must be regression or classification");

  RandomStream rng(args.seed);
  SynthInstance inst;
  if (args.kind == "da") {
    DaSynthOptions opt;
    opt.tasks = args.tasks;
    opt.dim = args.dim;
    opt.examples_per_task = args.per_task;
    opt.sigma2 = args.sigma2;
    opt.rho2 = args.rho2;
    opt.kind = kind;
    opt.input_shift = args.input_shift;
    opt.min_duration = args.min_delta;
    inst = sample_da_instance(opt, rng);
  } else if (args.kind == "mtl") {
    MtlSynthOptions opt;
    opt.tasks = args.tasks;
    opt.dim = args.dim;
    opt.examples_per_task = args.per_task;
    opt.sigma2 = args.sigma2;
    opt.rho2 = args.rho2;
    opt.kind = kind;
    opt.min_duration = args.min_delta;
    inst = sample_mtl_instance(opt, rng);
  } else {
    throw ConfigError("synth kind must be da or mtl");
  }

  save_corpus(inst.corpus, args.out_prefix + ".data.txt");
  write_file(args.out_prefix + ".truth.txt", format_truth_sidecar(inst));
  std::cout << "wrote " << args.out_prefix << ".data.txt (" << inst.corpus.task_count()
            << " tasks, D=" << inst.corpus.dim << ")\n";
  return 0;
}

struct ExperimentArgs {
  std::string name;
  std::string data_path, out_csv;
  std::string methods = "indp,pool,coal-full";
  std::string sizes = "25,50,100";
  std::string seeds = "1";
  std::string fractions = "0,0.25,0.5,0.75,1";
  std::string metric = "accuracy";
  int target = 0, source_size = 100, pca = 0, threads = 0, iters = 20;
  double sigma2 = 1.0, rho2 = 1.0, test_fraction = 0.3;
};

int run_experiment(const ExperimentArgs& args) {
  MultiTaskCorpus corpus = load_corpus(args.data_path);
  ExperimentOptions opt;
  opt.fit.sigma2 = args.sigma2;
  opt.fit.rho2 = args.rho2;
  opt.fit.em_iterations = args.iters;
  opt.fit.threads = resolve_threads(args.threads);
  opt.metric = args.metric;
  opt.test_fraction = args.test_fraction;
  opt.pca_dim = args.pca;

  std::vector<std::string> methods = split_list(args.methods);
  std::vector<std::uint64_t> seeds = parse_numbers<std::uint64_t>(args.seeds, "seed");

  EvalReport report;
  if (args.name == "curve") {
    report = learning_curve(corpus, methods, parse_numbers<int>(args.sizes, "size"), seeds, opt);
  } else if (args.name == "target") {
    report = target_transfer(corpus, args.target, args.source_size,
                             parse_numbers<int>(args.sizes, "size"), methods, seeds, opt);
  } else if (args.name == "scramble") {
    report = scramble_experiment(corpus, args.target,
                                 parse_numbers<double>(args.fractions, "fraction"), methods,
                                 seeds, opt);
  } else {
    throw ConfigError("unknown experiment '" + args.name + "' (curve, target, scramble)");
  }

  if (args.out_csv.empty())
    std::cout << report.to_csv();
  else
    write_file(args.out_csv, report.to_csv());
  return 0;
}

// Plain-text key=value config support: `--config FILE` anywhere on the
// command line loads defaults for flags not given explicitly, so explicit
// flags always win.
std::vector<std::string> apply_config_file(std::vector<std::string> args) {
  std::string path;
  for (std::size_t i = 0; i < args.size();) {
    if (args[i] == "--config") {
      if (i + 1 >= args.size()) throw ConfigError("--config requires a file path");
      path = args[i + 1];
      args.erase(args.begin() + i, args.begin() + i + 2);
    } else if (args[i].rfind("--config=", 0) == 0) {
      path = args[i].substr(9);
      args.erase(args.begin() + i);
    } else {
      ++i;
    }
  }
  if (path.empty()) return args;

  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file: " + path);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::size_t start = line.find_first_not_of(" \t\r");
    if (start == std::string::npos || line[start] == '#' || line[start] == '[') continue;
    std::size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError(path + ":" + std::to_string(line_no) + ": expected key=value");
    std::string key = line.substr(start, eq - start);
    std::string value = line.substr(eq + 1);
    auto strip = [](std::string& s) {
      s.erase(0, s.find_first_not_of(" \t"));
      auto end = s.find_last_not_of(" \t\r");
      s.erase(end == std::string::npos ? 0 : end + 1);
    };
    strip(key);
    strip(value);
    std::string flag = "--" + key;
    bool given = false;
    for (const auto& a : args)
      if (a == flag || a.rfind(flag + "=", 0) == 0) given = true;
    if (!given) args.push_back(flag + "=" + value);
  }
  return args;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Coalescent-hierarchy multitask / domain-adaptation models"};
  app.require_subcommand(1);

  TrainArgs train;
  CLI::App* cmd_train = app.add_subcommand("train", "Fit a model and export it with its tree");
  cmd_train->add_option("--data", train.data_path, "corpus file")->required();
  cmd_train->add_option("--out", train.out_prefix, "output prefix");
  cmd_train->add_option("--model", train.model, "da or mtl");
  cmd_train->add_option("--variant", train.variant, "diag, full, diag+x, full+x, data");
  cmd_train->add_option("--sigma2", train.sigma2, "prior scale");
  cmd_train->add_option("--rho2", train.rho2, "observation noise");
  cmd_train->add_option("--iters", train.iters, "EM iterations");
  cmd_train->add_option("--heldout", train.heldout, "heldout fraction for model selection");
  cmd_train->add_option("--seed", train.seed, "random seed");
  cmd_train->add_option("--threads", train.threads, "worker threads");
  cmd_train->add_option("--discrete", train.discrete, "1-based discrete feature indices (+X)");

  std::string eval_model, eval_data, eval_metric = "accuracy", eval_csv;
  CLI::App* cmd_eval = app.add_subcommand("eval", "Evaluate a saved model on a corpus");
  cmd_eval->add_option("--model", eval_model, "model file")->required();
  cmd_eval->add_option("--data", eval_data, "corpus file")->required();
  cmd_eval->add_option("--metric", eval_metric, "accuracy or auc");
  cmd_eval->add_option("--csv", eval_csv, "also write a CSV report here");

  std::string pred_model, pred_data, pred_out;
  CLI::App* cmd_predict = app.add_subcommand("predict", "Print per-row predictions");
  cmd_predict->add_option("--model", pred_model, "model file")->required();
  cmd_predict->add_option("--data", pred_data, "corpus file")->required();
  cmd_predict->add_option("--out", pred_out, "output file (default stdout)");

  SynthArgs synth;
  CLI::App* cmd_synth = app.add_subcommand("synth", "Sample a synthetic corpus + ground truth");
  cmd_synth->add_option("--kind", synth.kind, "da or mtl");
  cmd_synth->add_option("--tasks", synth.tasks, "number of tasks");
  cmd_synth->add_option("--dim", synth.dim, "feature dimension");
  cmd_synth->add_option("--per-task", synth.per_task, "examples per task");
  cmd_synth->add_option("--sigma2", synth.sigma2, "prior scale");
  cmd_synth->add_option("--rho2", synth.rho2, "regression noise");
  cmd_synth->add_option("--task-kind", synth.task_kind, "regression or classification");
  cmd_synth->add_option("--seed", synth.seed, "random seed");
  cmd_synth->add_option("--min-delta", synth.min_delta, "resample trees until all deltas exceed this");
  cmd_synth->add_option("--input-shift", synth.input_shift, "per-task input mean shift (DA)");
  cmd_synth->add_option("--out", synth.out_prefix, "output prefix");

  ExperimentArgs exp;
  CLI::App* cmd_exp = app.add_subcommand("experiment", "Run a benchmark driver, emit CSV");
  cmd_exp->add_option("name", exp.name, "curve, target or scramble")->required();
  cmd_exp->add_option("--data", exp.data_path, "corpus file")->required();
  cmd_exp->add_option("--out", exp.out_csv, "CSV output (default stdout)");
  cmd_exp->add_option("--methods", exp.methods, "comma-separated method list");
  cmd_exp->add_option("--sizes", exp.sizes, "per-task training sizes");
  cmd_exp->add_option("--seeds", exp.seeds, "comma-separated seeds");
  cmd_exp->add_option("--fractions", exp.fractions, "scramble fractions");
  cmd_exp->add_option("--metric", exp.metric, "accuracy or auc");
  cmd_exp->add_option("--target", exp.target, "target/scrambled task index");
  cmd_exp->add_option("--source-size", exp.source_size, "source-task training size");
  cmd_exp->add_option("--pca", exp.pca, "PCA dimension (0 = off)");
  cmd_exp->add_option("--iters", exp.iters, "EM iterations");
  cmd_exp->add_option("--sigma2", exp.sigma2, "prior scale");
  cmd_exp->add_option("--rho2", exp.rho2, "observation noise");
  cmd_exp->add_option("--test-fraction", exp.test_fraction, "per-task test split");
  cmd_exp->add_option("--threads", exp.threads, "worker threads");

  try {
    std::vector<std::string> args(argv + 1, argv + argc);
    args = apply_config_file(std::move(args));
    std::reverse(args.begin(), args.end());  // CLI11 consumes back to front
    app.parse(std::move(args));
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 1;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 1;
  }

  try {
    if (app.got_subcommand(cmd_train)) return run_train(train);
    if (app.got_subcommand(cmd_eval)) return run_eval(eval_model, eval_data, eval_metric, eval_csv);
    if (app.got_subcommand(cmd_predict)) return run_predict(pred_model, pred_data, pred_out);
    if (app.got_subcommand(cmd_synth)) return run_synth(synth);
    if (app.got_subcommand(cmd_exp)) return run_experiment(exp);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 1;
  } catch (const NumericalError& e) {
    std::cerr << "numerical error: " << e.what() << "\n";
    return 3;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
  return 0;
}
