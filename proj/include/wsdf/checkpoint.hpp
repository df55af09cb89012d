#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "wsdf/mesh.hpp"
#include "wsdf/neutral_bank.hpp"

namespace wsdf {

using NamedTensors = std::vector<std::pair<std::string, Matrix>>;

// Everything needed to rebuild a model and resume training bit-exactly.
struct Checkpoint {
  std::string config_json;
  int vertex_count = 0;
  std::vector<Face> faces;
  Vertices reference;
  NormalizationStats stats;
  NamedTensors parameters;
  double bank_beta = 0.9;
  std::map<std::string, BankEntry> bank;
  NamedTensors optimizer;
  // Free-form text state (step counters, RNG streams, sampler queues).
  std::map<std::string, std::string> state;
};

// Little-endian binary container: "WSDFCKP\0", u32 version, then sections.
// Written to a temporary file and renamed into place.
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace wsdf
