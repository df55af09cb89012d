#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "wsdf/mesh.hpp"

namespace wsdf {

// Least-squares split of a subject's scans into a shared neutral s and
// per-scan offsets: s = mean(X_i), delta_i = X_i - s.
struct PseudoNeutralSolution {
  Vertices neutral;
  std::vector<Vertices> deltas;
};

PseudoNeutralSolution solve_pseudo_neutral(const std::vector<FaceMesh>& scans);

// Confidence of a bank entry learnt from `scan_count` scans: 1 - exp(1 - |K|).
double confidence(int scan_count);

struct BankEntry {
  Vector mesh;  // flattened (vertex_count * 3), normalised coordinates
  std::uint64_t update_count = 0;
};

// Per-subject pseudo-neutral meshes tracked by an exponential moving average
// of detached reconstructions. The first update of a subject stores the
// batch mean as is.
class NeutralBank {
 public:
  explicit NeutralBank(double beta = 0.9);

  double beta() const { return beta_; }
  bool initialized(const std::string& subject) const { return entries_.count(subject) != 0; }
  const BankEntry* find(const std::string& subject) const;
  const std::map<std::string, BankEntry>& entries() const { return entries_; }

  // recon: one reconstructed mesh of `subject` per row.
  void update(const std::string& subject, const Matrix& recon);
  void restore(const std::string& subject, BankEntry entry);

 private:
  double beta_;
  std::map<std::string, BankEntry> entries_;
};

}  // namespace wsdf
