#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

namespace structssl::estimators {

struct GaussianSamples {
  std::vector<double> x, y;  // standard normal marginals, corr(x, y) = rho
};

GaussianSamples sample_gaussian_pair(double rho, std::size_t n, std::uint64_t seed);

// Equal-width bins over [lo, hi]; values outside land in the edge bins.
std::vector<std::size_t> bin_values(const std::vector<double>& values, std::size_t bins, double lo, double hi);

struct TabularNwjConfig {
  std::size_t iterations = 1500;
  double learning_rate = 0.05;
};

struct TabularNwjResult {
  double estimate = 0.0;          // NWJ bound of the final critic on the fitting samples
  std::vector<double> critic;     // [nx * ny], row-major
  std::vector<double> trace;      // bound value per iteration
};

// Bound of a tabular critic on paired samples: mean T(x_i, y_i) minus (1/e)
// times the mean of exp(T) under the product of empirical marginals.
double nwj_tabular_bound(const std::vector<double>& critic, const std::vector<std::size_t>& cx, std::size_t nx,
                         const std::vector<std::size_t>& cy, std::size_t ny);

// Fits the critic by Adam gradient ascent on the bound.
TabularNwjResult fit_tabular_nwj(const std::vector<std::size_t>& cx, std::size_t nx, const std::vector<std::size_t>& cy,
                                 std::size_t ny, const TabularNwjConfig& config = {});

struct GaussianBenchConfig {
  std::size_t bins = 20;
  double range = 4.0;  // bins cover [-range, range]
  TabularNwjConfig fit;
};

double gaussian_nwj_estimate(double rho, std::size_t n, std::uint64_t seed, const GaussianBenchConfig& config = {});

}  // namespace structssl::estimators
