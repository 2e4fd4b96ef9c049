#include "madl/data.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <string>

#include "madl/error.hpp"

namespace madl {

Matrix Matrix::select_rows(std::span<const std::size_t> idx) const {
  Matrix out(idx.size(), cols);
  for (std::size_t i = 0; i < idx.size(); ++i) std::copy_n(row(idx[i]).data(), cols, out.row(i).data());
  return out;
}

std::size_t Dataset::annotation_count() const {
  return static_cast<std::size_t>(std::count_if(z.begin(), z.end(), [](int v) { return v != kMissing; }));
}

void Dataset::validate() const {
  const std::size_t n = x.rows;
  if (x.data.size() != x.rows * x.cols) throw ShapeError("instance matrix storage mismatch");
  if (!y.empty() && y.size() != n) {
    throw ShapeError("label count " + std::to_string(y.size()) + " != instance count " + std::to_string(n));
  }
  if (z.size() != n * num_annotators) throw ShapeError("annotation matrix is not N x M");
  if (!z_full.empty() && z_full.size() != z.size()) throw ShapeError("full annotation matrix is not N x M");
  const int c = static_cast<int>(num_classes);
  for (int v : y)
    if (v < 0 || v >= c) throw ShapeError("label outside 1.." + std::to_string(c));
  for (int v : z)
    if (v != kMissing && (v < 0 || v >= c)) throw ShapeError("annotation outside 1.." + std::to_string(c));
}

Split make_split(std::size_t n, double train, double valid, double test, std::uint64_t seed) {
  if (train < 0 || valid < 0 || test < 0 || std::abs(train + valid + test - 1.0) > 1e-9) {
    throw ConfigError("split fractions must be non-negative and sum to 1");
  }
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  std::mt19937_64 rng(seed);
  std::shuffle(perm.begin(), perm.end(), rng);
  const auto n_train = static_cast<std::size_t>(std::llround(train * static_cast<double>(n)));
  const auto n_valid = std::min(n - n_train, static_cast<std::size_t>(std::llround(valid * static_cast<double>(n))));
  Split s;
  s.train.assign(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(n_train));
  s.valid.assign(perm.begin() + static_cast<std::ptrdiff_t>(n_train),
                 perm.begin() + static_cast<std::ptrdiff_t>(n_train + n_valid));
  s.test.assign(perm.begin() + static_cast<std::ptrdiff_t>(n_train + n_valid), perm.end());
  return s;
}

}  // namespace madl
