#include "coalmtl/dataset.hpp"

#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include "coalmtl/errors.hpp"
#include "coalmtl/util.hpp"

namespace coalmtl {

void TaskDataset::validate() const {
  if (x.rows() != y.size()) throw DataError("task '" + name + "': row/label count mismatch");
  if (!y.allFinite()) throw DataError("task '" + name + "': non-finite label");
  if (kind == TaskKind::Classification) {
    for (int i = 0; i < y.size(); ++i)
      if (y[i] != 1.0 && y[i] != -1.0)
        throw DataError("task '" + name + "': classification labels must be +1/-1");
  }
}

TaskDataset TaskDataset::select(const std::vector<int>& row_ids) const {
  TaskDataset out;
  out.name = name;
  out.index = index;
  out.kind = kind;
  out.y.resize(row_ids.size());
  std::vector<Eigen::Triplet<double>> trips;
  for (std::size_t r = 0; r < row_ids.size(); ++r) {
    int src = row_ids[r];
    out.y[r] = y[src];
    for (SparseMatrix::InnerIterator it(x, src); it; ++it)
      trips.emplace_back(static_cast<int>(r), static_cast<int>(it.col()), it.value());
  }
  out.x.resize(static_cast<int>(row_ids.size()), x.cols());
  out.x.setFromTriplets(trips.begin(), trips.end());
  return out;
}

std::vector<std::string> MultiTaskCorpus::task_names() const {
  std::vector<std::string> out;
  for (const auto& t : tasks) out.push_back(t.name);
  return out;
}

void MultiTaskCorpus::validate() const {
  if (tasks.empty()) throw DataError("corpus has no tasks");
  for (const auto& t : tasks) {
    if (t.dim() != dim) throw DataError("task '" + t.name + "' feature dimension mismatch");
    t.validate();
  }
}

MultiTaskCorpus parse_corpus(std::istream& in, const std::string& origin) {
  struct RawTask {
    std::vector<double> labels;
    std::vector<std::vector<std::pair<int, double>>> rows;
  };
  std::vector<std::string> order;
  std::map<std::string, RawTask> raw;
  int max_feature = 0;
  bool all_binary_labels = true;

  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::size_t start = line.find_first_not_of(" \t\r");
    if (start == std::string::npos || line[start] == '#') continue;
    std::istringstream ls(line);
    std::string task, label_tok;
    if (!(ls >> task >> label_tok))
      throw DataError(origin + ":" + std::to_string(line_no) + ": expected `task label ...`");
    double label;
    try {
      std::size_t used = 0;
      label = std::stod(label_tok, &used);
      if (used != label_tok.size()) throw std::invalid_argument(label_tok);
    } catch (const std::exception&) {
      throw DataError(origin + ":" + std::to_string(line_no) + ": bad label '" + label_tok + "'");
    }
    if (label != 1.0 && label != -1.0) all_binary_labels = false;

    std::vector<std::pair<int, double>> row;
    std::string feat;
    while (ls >> feat) {
      std::size_t colon = feat.find(':');
      if (colon == std::string::npos || colon == 0 || colon + 1 == feat.size())
        throw DataError(origin + ":" + std::to_string(line_no) + ": bad feature '" + feat + "'");
      int idx;
      double val;
      try {
        idx = std::stoi(feat.substr(0, colon));
        val = std::stod(feat.substr(colon + 1));
      } catch (const std::exception&) {
        throw DataError(origin + ":" + std::to_string(line_no) + ": bad feature '" + feat + "'");
      }
      if (idx < 1)
        throw DataError(origin + ":" + std::to_string(line_no) + ": feature indices are 1-based");
      max_feature = std::max(max_feature, idx);
      row.emplace_back(idx - 1, val);
    }
    if (!raw.count(task)) order.push_back(task);
    raw[task].labels.push_back(label);
    raw[task].rows.push_back(std::move(row));
  }
  if (order.empty()) throw DataError(origin + ": no tasks");

  MultiTaskCorpus corpus;
  corpus.dim = max_feature;
  for (std::size_t k = 0; k < order.size(); ++k) {
    const RawTask& rt = raw[order[k]];
    TaskDataset task;
    task.name = order[k];
    task.index = static_cast<int>(k);
    task.kind = all_binary_labels ? TaskKind::Classification : TaskKind::Regression;
    task.y = Eigen::Map<const Eigen::VectorXd>(rt.labels.data(), rt.labels.size());
    std::vector<Eigen::Triplet<double>> trips;
    for (std::size_t r = 0; r < rt.rows.size(); ++r)
      for (auto [c, v] : rt.rows[r]) trips.emplace_back(static_cast<int>(r), c, v);
    task.x.resize(static_cast<int>(rt.rows.size()), max_feature);
    task.x.setFromTriplets(trips.begin(), trips.end());
    corpus.tasks.push_back(std::move(task));
  }
  corpus.validate();
  return corpus;
}

MultiTaskCorpus load_corpus(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open corpus file: " + path);
  return parse_corpus(in, path);
}

std::string format_corpus(const MultiTaskCorpus& corpus) {
  std::ostringstream os;
  for (const auto& task : corpus.tasks) {
    for (int r = 0; r < task.rows(); ++r) {
      os << task.name << " ";
      if (task.kind == TaskKind::Classification)
        os << (task.y[r] > 0 ? "+1" : "-1");
      else
        os << fmt_double(task.y[r]);
      for (SparseMatrix::InnerIterator it(task.x, r); it; ++it) {
        if (it.value() == 0.0) continue;
        os << " " << (it.col() + 1) << ":" << fmt_double(it.value());
      }
      os << "\n";
    }
  }
  return os.str();
}

void save_corpus(const MultiTaskCorpus& corpus, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write corpus file: " + path);
  out << format_corpus(corpus);
}

}  // namespace coalmtl
