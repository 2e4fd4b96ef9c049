#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace madl {

// Row-major dense matrix of doubles.
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), data(r * c, fill) {}

  double& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
  std::span<const double> row(std::size_t r) const { return {data.data() + r * cols, cols}; }
  std::span<double> row(std::size_t r) { return {data.data() + r * cols, cols}; }

  Matrix select_rows(std::span<const std::size_t> idx) const;
  bool operator==(const Matrix&) const = default;
};

// Marker for an unobserved annotation.
inline constexpr int kMissing = -1;

// Instances, optional ground truth and an N x M annotation matrix. Classes are
// 0-based in memory; file formats shift them to 1-based.
struct Dataset {
  Matrix x;
  std::vector<int> y;  // empty when unknown
  std::vector<int> z;  // N x M row-major, kMissing when unobserved
  // Annotation outcomes before ratio masking (potential annotations), used to
  // score AP predictions on held-out instances. Empty when unknown.
  std::vector<int> z_full;
  std::size_t num_annotators = 0;
  std::size_t num_classes = 0;

  std::size_t size() const { return x.rows; }
  bool has_labels() const { return !y.empty(); }
  int annotation(std::size_t n, std::size_t m) const { return z[n * num_annotators + m]; }
  // Number of observed annotations.
  std::size_t annotation_count() const;
  // Throws ShapeError when the parts disagree in size or hold out-of-range classes.
  void validate() const;
};

struct Split {
  std::vector<std::size_t> train;
  std::vector<std::size_t> valid;
  std::vector<std::size_t> test;
};

// Random split by fractions (train, valid, test), which must sum to 1.
Split make_split(std::size_t n, double train, double valid, double test, std::uint64_t seed);

}  // namespace madl
