#ifndef COALMTL_SERIALIZE_HPP
#define COALMTL_SERIALIZE_HPP

#include <string>
#include <vector>

#include "coalmtl/da_model.hpp"
#include "coalmtl/mtl_model.hpp"

namespace coalmtl {

// Versioned model container: JSON holding the tree (Newick), Lambda, the
// per-task parameters and a config echo. Output is byte-deterministic.

std::string serialize_da_model(const DaModelState& state, const DaConfig& config,
                               const std::vector<std::string>& task_names);
std::string serialize_mtl_model(const MtlModelState& state, const MtlConfig& config,
                                const std::vector<std::string>& task_names);

struct LoadedModel {
  std::string kind;  // "da" or "mtl"
  std::vector<std::string> task_names;
  DaModelState da;
  DaConfig da_config;
  MtlModelState mtl;
  MtlConfig mtl_config;
};

LoadedModel load_model(const std::string& path);

void write_file(const std::string& path, const std::string& content);
std::string read_file(const std::string& path);

}  // namespace coalmtl

#endif
