#pragma once

#include <span>
#include <vector>

#include "madl/diffnet.hpp"

namespace madl {

using diffnet::Tensor;

// Learnable kernel scale, stored as ln(gamma) so gamma stays positive.
struct KernelScale {
  double alpha = 1.25;
  double beta = 0.25;

  // Mode of the gamma prior, (alpha - 1) / beta.
  double initial_gamma() const;
  void validate() const;
};

// exp(-gamma * ||a - b||^2)
double gaussian_kernel(std::span<const double> a, std::span<const double> b, double gamma);

// Density of annotator m: sum over all annotators l (self included) of the
// kernel between embedding rows l and m. embeddings is row-major [M x R].
double density(std::size_t m, std::span<const double> embeddings, std::size_t dim, double gamma);

// w_m = density_m^-1 / Z with Z = M^-1 sum_l density_l^-1, so sum_m w_m = M.
std::vector<double> weights_from_densities(std::span<const double> densities);
std::vector<double> annotator_weights(std::span<const double> embeddings, std::size_t dim,
                                      double gamma);

// ln Gam(gamma | alpha, beta); throws ContractError when gamma <= 0.
double gamma_log_prior(double gamma, double alpha, double beta);

// Differentiable versions. The embeddings pass through stop_gradient, so the
// result carries gradient only towards gamma.
Tensor kernel_matrix(const Tensor& embeddings, const Tensor& gamma);
Tensor annotator_weights(const Tensor& embeddings, const Tensor& gamma);
Tensor gamma_log_prior(const Tensor& log_gamma, double alpha, double beta);

}  // namespace madl
