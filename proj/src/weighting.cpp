#include "madl/weighting.hpp"

#include <cmath>
#include <numeric>

#include "madl/error.hpp"

namespace madl {

namespace dn = diffnet;

double KernelScale::initial_gamma() const { return (alpha - 1.0) / beta; }

void KernelScale::validate() const {
  if (!(alpha > 1.0) || !(beta > 0.0)) {
    throw ConfigError("gamma prior needs alpha > 1 and beta > 0");
  }
}

double gaussian_kernel(std::span<const double> a, std::span<const double> b, double gamma) {
  if (a.size() != b.size()) throw ShapeError("gaussian_kernel: embedding sizes differ");
  double d = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) d += (a[i] - b[i]) * (a[i] - b[i]);
  return std::exp(-gamma * d);
}

double density(std::size_t m, std::span<const double> embeddings, std::size_t dim, double gamma) {
  const std::size_t count = embeddings.size() / dim;
  if (m >= count) throw ContractError("density: annotator index out of range");
  const auto am = embeddings.subspan(m * dim, dim);
  double s = 0.0;
  for (std::size_t l = 0; l < count; ++l) s += gaussian_kernel(embeddings.subspan(l * dim, dim), am, gamma);
  return s;
}

std::vector<double> weights_from_densities(std::span<const double> densities) {
  const double m = static_cast<double>(densities.size());
  std::vector<double> inv(densities.size());
  for (std::size_t i = 0; i < inv.size(); ++i) {
    if (!(densities[i] > 0.0)) throw ContractError("annotator densities must be positive");
    inv[i] = 1.0 / densities[i];
  }
  const double z = std::accumulate(inv.begin(), inv.end(), 0.0) / m;
  for (double& w : inv) w /= z;
  return inv;
}

std::vector<double> annotator_weights(std::span<const double> embeddings, std::size_t dim,
                                      double gamma) {
  const std::size_t count = embeddings.size() / dim;
  std::vector<double> dens(count);
  for (std::size_t m = 0; m < count; ++m) dens[m] = density(m, embeddings, dim, gamma);
  return weights_from_densities(dens);
}

double gamma_log_prior(double gamma, double alpha, double beta) {
  if (!(gamma > 0.0)) throw ContractError("gamma_log_prior: gamma must be positive");
  return alpha * std::log(beta) - std::lgamma(alpha) + (alpha - 1.0) * std::log(gamma) -
         beta * gamma;
}

Tensor kernel_matrix(const Tensor& embeddings, const Tensor& gamma) {
  Tensor emb = dn::stop_gradient(embeddings);
  const std::size_t m = emb.rows();
  const std::size_t r = emb.cols();
  auto v = emb.values();
  std::vector<double> sq(m * m, 0.0);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = i + 1; j < m; ++j) {
      double d = 0.0;
      for (std::size_t k = 0; k < r; ++k) {
        const double diff = v[i * r + k] - v[j * r + k];
        d += diff * diff;
      }
      sq[i * m + j] = d;
      sq[j * m + i] = d;
    }
  Tensor dist = Tensor::constant({m, m}, std::move(sq));
  return dn::exp(dn::scale(dn::mul(gamma, dist), -1.0));
}

Tensor annotator_weights(const Tensor& embeddings, const Tensor& gamma) {
  Tensor dens = dn::sum_rows(kernel_matrix(embeddings, gamma));
  Tensor inv = dn::reciprocal(dens);
  const double m = static_cast<double>(dens.size());
  // w = M * inv / sum(inv)
  return dn::scale(dn::mul(inv, dn::reciprocal(dn::sum(inv))), m);
}

Tensor gamma_log_prior(const Tensor& log_gamma, double alpha, double beta) {
  const double constant = alpha * std::log(beta) - std::lgamma(alpha);
  Tensor t = dn::sub(dn::scale(log_gamma, alpha - 1.0), dn::scale(dn::exp(log_gamma), beta));
  return dn::add_scalar(t, constant);
}

}  // namespace madl
