#pragma once

#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <functional>
#include <random>
#include <string>
#include <unistd.h>

#include "wsdf/autodiff.hpp"

namespace wsdf::test {

inline Matrix random_matrix(Eigen::Index r, Eigen::Index c, std::mt19937_64& rng, double s = 1.0) {
  std::normal_distribution<double> d(0.0, s);
  Matrix m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = d(rng);
  return m;
}

// Largest |analytic - numeric| relative to max(1, |numeric|) over every
// input entry, by central differences.
inline double max_grad_error(const std::function<double(const Matrix&)>& f, const Matrix& x,
                             const Matrix& analytic, double h = 1e-5) {
  double worst = 0.0;
  Matrix xp = x;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double orig = xp.data()[i];
    xp.data()[i] = orig + h;
    const double fp = f(xp);
    xp.data()[i] = orig - h;
    const double fm = f(xp);
    xp.data()[i] = orig;
    const double num = (fp - fm) / (2 * h);
    worst = std::max(worst, std::abs(num - analytic.data()[i]) / std::max(1.0, std::abs(num)));
  }
  return worst;
}

inline double rel_err(double a, double b) { return std::abs(a - b) / std::max(1e-12, std::max(std::abs(a), std::abs(b))); }

struct TempDir {
  std::filesystem::path path;
  explicit TempDir(const std::string& tag) {
    static int counter = 0;
    path = std::filesystem::temp_directory_path() /
           ("wsdf_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path);
    std::filesystem::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path, ec);
  }
};

}  // namespace wsdf::test
