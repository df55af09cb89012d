#include "wsdf/neutral_bank.hpp"

#include <cmath>

namespace wsdf {

PseudoNeutralSolution solve_pseudo_neutral(const std::vector<FaceMesh>& scans) {
  if (scans.empty()) throw ValidationError("solve_pseudo_neutral: no scans");
  const int n_vert = scans.front().vertex_count();
  PseudoNeutralSolution sol;
  sol.neutral = Vertices::Zero(n_vert, 3);
  for (const FaceMesh& s : scans) {
    if (s.vertex_count() != n_vert) throw ShapeError("solve_pseudo_neutral: mixed topologies");
    sol.neutral += s.vertices();
  }
  sol.neutral /= static_cast<double>(scans.size());
  sol.deltas.reserve(scans.size());
  for (const FaceMesh& s : scans) sol.deltas.push_back(s.vertices() - sol.neutral);
  return sol;
}

double confidence(int scan_count) {
  if (scan_count < 1) throw ValidationError("confidence: subject needs at least one scan");
  return 1.0 - std::exp(1.0 - static_cast<double>(scan_count));
}

NeutralBank::NeutralBank(double beta) : beta_(beta) {
  if (!(beta > 0.0 && beta < 1.0)) throw ConfigError("NeutralBank: beta must lie in (0, 1)");
}

const BankEntry* NeutralBank::find(const std::string& subject) const {
  auto it = entries_.find(subject);
  return it == entries_.end() ? nullptr : &it->second;
}

void NeutralBank::update(const std::string& subject, const Matrix& recon) {
  if (recon.rows() == 0) throw ValidationError("NeutralBank::update: empty batch");
  if (!recon.allFinite()) throw ValidationError("NeutralBank::update: non-finite reconstruction");
  const Vector batch_mean = recon.colwise().mean().transpose();
  auto it = entries_.find(subject);
  if (it == entries_.end()) {
    entries_.emplace(subject, BankEntry{batch_mean, 1});
    return;
  }
  if (it->second.mesh.size() != batch_mean.size()) throw ShapeError("NeutralBank::update: mesh size");
  it->second.mesh = beta_ * it->second.mesh + (1.0 - beta_) * batch_mean;
  ++it->second.update_count;
}

void NeutralBank::restore(const std::string& subject, BankEntry entry) {
  if (!entry.mesh.allFinite()) throw ValidationError("NeutralBank::restore: non-finite mesh");
  entries_[subject] = std::move(entry);
}

}  // namespace wsdf
