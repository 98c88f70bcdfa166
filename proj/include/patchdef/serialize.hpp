#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "patchdef/optim.hpp"

namespace patchdef::nn {

/// Versioned checkpoint container. Parameter groups are serialized separately
/// (the training schedule freezes by group); metadata carries the stage tag,
/// seed, config hash and RNG/optimizer state needed for exact resumption.
struct Checkpoint {
  int version = 1;
  int stage = 0;
  uint64_t seed = 0;
  std::string config_hash;
  std::string rng_state;
  std::map<std::string, ParamMap> groups;       // group name -> parameters
  std::map<std::string, Adam::State> optims;    // optimizer name -> state
  std::map<std::string, double> scalars;        // free-form numeric metadata

  void save(const std::filesystem::path& path) const;
  static Checkpoint load(const std::filesystem::path& path);
};

}  // namespace patchdef::nn
