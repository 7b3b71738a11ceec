#pragma once

// Reference implementations written as plain loops over row-major arrays.
// They share no code with the production kernels and exist to check them.

#include <cstddef>
#include <vector>

namespace magnet::oracles {

struct Dense {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> v;

  Dense() = default;
  Dense(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), v(r * c, fill) {}
  Dense(std::size_t r, std::size_t c, std::vector<double> data) : rows(r), cols(c), v(std::move(data)) {}

  double& operator()(std::size_t i, std::size_t j) { return v[i * cols + j]; }
  double operator()(std::size_t i, std::size_t j) const { return v[i * cols + j]; }
};

double elu(double x);
double gelu(double x);
double sigmoid(double x);
double retanh(double x);

/// ELU(H H^T Z P), every entry as an explicit quadruple sum.
Dense tch_conv(const Dense& h, const Dense& z, const Dense& p);

/// ELU(H diag(w) H^T G P), every entry as an explicit quadruple sum.
Dense gph_conv(const Dense& h, const std::vector<double>& w, const Dense& g, const Dense& p);

/// 0.5 KL(p || m) + 0.5 KL(q || m) written with explicit ratios.
double jsd(const std::vector<double>& p, const std::vector<double>& q);

/// mu_j = (1/M) sum_i JSD(column i, column j).
std::vector<double> mean_divergence(const Dense& h);

/// softmax of the z-scored (population std) values; uniform if the std is below 1e-12.
std::vector<double> zscore_softmax(const std::vector<double>& mu);

/// Column-wise softmax.
Dense column_softmax(const Dense& x);

}  // namespace magnet::oracles
