#include "coalmtl/serialize.hpp"

#include <fstream>
#include <sstream>

#include <json.hpp>

#include "coalmtl/errors.hpp"

namespace coalmtl {

using nlohmann::json;

namespace {

constexpr int kFormatVersion = 1;

json matrix_to_json(const MatrixXd& m) {
  json rows = json::array();
  for (int i = 0; i < m.rows(); ++i) {
    json row = json::array();
    for (int j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    rows.push_back(row);
  }
  return rows;
}

json vector_to_json(const VectorXd& v) {
  json out = json::array();
  for (int i = 0; i < v.size(); ++i) out.push_back(v[i]);
  return out;
}

MatrixXd matrix_from_json(const json& j) {
  int rows = static_cast<int>(j.size());
  int cols = rows == 0 ? 0 : static_cast<int>(j[0].size());
  MatrixXd m(rows, cols);
  for (int i = 0; i < rows; ++i)
    for (int c = 0; c < cols; ++c) m(i, c) = j[i][c].get<double>();
  return m;
}

VectorXd vector_from_json(const json& j) {
  VectorXd v(j.size());
  for (std::size_t i = 0; i < j.size(); ++i) v[i] = j[i].get<double>();
  return v;
}

json kernel_to_json(const DiffusionKernel& k) {
  json out;
  out["kind"] = k.is_diag() ? "diag" : "full";
  if (k.is_diag())
    out["diag"] = vector_to_json(k.diag());
  else
    out["matrix"] = matrix_to_json(k.matrix());
  return out;
}

DiffusionKernel kernel_from_json(const json& j) {
  if (j.at("kind") == "diag") return DiffusionKernel::diagonal(vector_from_json(j.at("diag")));
  return DiffusionKernel::full(matrix_from_json(j.at("matrix")));
}

json message_to_json(const GaussianMessage& m) {
  json out;
  out["mean"] = vector_to_json(m.mean);
  if (m.is_diag())
    out["var_diag"] = vector_to_json(m.var_diag);
  else
    out["var_full"] = matrix_to_json(m.var_full);
  return out;
}

GaussianMessage message_from_json(const json& j) {
  VectorXd mean = vector_from_json(j.at("mean"));
  if (j.contains("var_diag"))
    return GaussianMessage::diagonal(std::move(mean), vector_from_json(j.at("var_diag")));
  return GaussianMessage::full_cov(std::move(mean), matrix_from_json(j.at("var_full")));
}

json info_to_json(const InfoMessage& m) {
  json out;
  out["shift"] = vector_to_json(m.shift);
  if (m.is_diag())
    out["prec_diag"] = vector_to_json(m.prec_diag);
  else
    out["prec_full"] = matrix_to_json(m.prec_full);
  return out;
}

InfoMessage info_from_json(const json& j) {
  VectorXd shift = vector_from_json(j.at("shift"));
  if (j.contains("prec_diag"))
    return InfoMessage::diagonal(vector_from_json(j.at("prec_diag")), std::move(shift));
  return InfoMessage::full_prec(matrix_from_json(j.at("prec_full")), std::move(shift));
}

}  // namespace

std::string serialize_da_model(const DaModelState& state, const DaConfig& config,
                               const std::vector<std::string>& task_names) {
  json j;
  j["format_version"] = kFormatVersion;
  j["model"] = "da";
  j["task_kind"] = state.task_kind == TaskKind::Regression ? "regression" : "classification";
  j["tasks"] = task_names;
  j["config"] = {{"variant", to_string(config.variant)},
                 {"sigma2", config.sigma2},
                 {"rho2", config.rho2},
                 {"max_iterations", config.max_iterations},
                 {"heldout_fraction", config.heldout_fraction},
                 {"seed", config.seed}};
  j["tree_newick"] = state.tree.to_newick(task_names);
  j["lambda"] = kernel_to_json(state.lambda);
  json posts = json::array();
  for (const auto& p : state.posteriors) {
    json e;
    e["post"] = message_to_json(p.post);
    e["like"] = info_to_json(p.like);
    posts.push_back(e);
  }
  j["posteriors"] = posts;
  j["heldout_trace"] = state.heldout_trace;
  j["selected_iteration"] = state.selected_iteration;
  return j.dump(2) + "\n";
}

std::string serialize_mtl_model(const MtlModelState& state, const MtlConfig& config,
                                const std::vector<std::string>& task_names) {
  json j;
  j["format_version"] = kFormatVersion;
  j["model"] = "mtl";
  j["task_kind"] = state.task_kind == TaskKind::Regression ? "regression" : "classification";
  j["tasks"] = task_names;
  j["config"] = {{"sigma2", config.sigma2},
                 {"rho2", config.rho2},
                 {"max_iterations", config.max_iterations},
                 {"heldout_fraction", config.heldout_fraction},
                 {"seed", config.seed}};
  j["tree_newick"] = state.tree.to_newick(task_names);
  j["lambda"] = kernel_to_json(state.lambda);
  j["correlation"] = matrix_to_json(state.correlation);
  json s = json::array(), w = json::array();
  for (const auto& v : state.log_std) s.push_back(vector_to_json(v));
  for (const auto& v : state.weights) w.push_back(vector_to_json(v));
  j["log_std"] = s;
  j["weights"] = w;
  j["heldout_trace"] = state.heldout_trace;
  j["selected_iteration"] = state.selected_iteration;
  return j.dump(2) + "\n";
}

LoadedModel load_model(const std::string& path) {
  json j;
  try {
    j = json::parse(read_file(path));
  } catch (const json::exception& e) {
    throw DataError("cannot parse model file " + path + ": " + e.what());
  }
  try {
    LoadedModel out;
    if (j.at("format_version").get<int>() != kFormatVersion)
      throw DataError("unsupported model format version");
    out.kind = j.at("model").get<std::string>();
    out.task_names = j.at("tasks").get<std::vector<std::string>>();
    TaskKind kind = j.at("task_kind") == "regression" ? TaskKind::Regression
                                                      : TaskKind::Classification;
    if (out.kind == "da") {
      out.da.task_kind = kind;
      out.da.tree = CoalescentTree::from_newick(j.at("tree_newick"), out.task_names);
      out.da.lambda = kernel_from_json(j.at("lambda"));
      for (const auto& e : j.at("posteriors")) {
        WeightPosterior p;
        p.post = message_from_json(e.at("post"));
        p.like = info_from_json(e.at("like"));
        out.da.posteriors.push_back(std::move(p));
      }
      out.da.heldout_trace = j.at("heldout_trace").get<std::vector<double>>();
      out.da.selected_iteration = j.at("selected_iteration").get<int>();
      const auto& c = j.at("config");
      out.da_config.variant = da_variant_from_string(c.at("variant"));
      out.da_config.sigma2 = c.at("sigma2");
      out.da_config.rho2 = c.at("rho2");
      out.da_config.max_iterations = c.at("max_iterations");
      out.da_config.heldout_fraction = c.at("heldout_fraction");
      out.da_config.seed = c.at("seed");
    } else if (out.kind == "mtl") {
      out.mtl.task_kind = kind;
      out.mtl.tree = CoalescentTree::from_newick(j.at("tree_newick"), out.task_names);
      out.mtl.lambda = kernel_from_json(j.at("lambda"));
      out.mtl.correlation = matrix_from_json(j.at("correlation"));
      for (const auto& e : j.at("log_std")) out.mtl.log_std.push_back(vector_from_json(e));
      for (const auto& e : j.at("weights")) out.mtl.weights.push_back(vector_from_json(e));
      out.mtl.heldout_trace = j.at("heldout_trace").get<std::vector<double>>();
      out.mtl.selected_iteration = j.at("selected_iteration").get<int>();
      const auto& c = j.at("config");
      out.mtl_config.sigma2 = c.at("sigma2");
      out.mtl_config.rho2 = c.at("rho2");
      out.mtl_config.max_iterations = c.at("max_iterations");
      out.mtl_config.heldout_fraction = c.at("heldout_fraction");
      out.mtl_config.seed = c.at("seed");
    } else {
      throw DataError("unknown model kind '" + out.kind + "'");
    }
    return out;
  } catch (const json::exception& e) {
    throw DataError("malformed model file " + path + ": " + e.what());
  }
}

void write_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write file: " + path);
  out << content;
  if (!out) throw DataError("write failed: " + path);
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read file: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace coalmtl
