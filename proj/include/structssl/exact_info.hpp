#pragma once

#include <cstddef>
#include <vector>

#include "structssl/errors.hpp"

// Exact information quantities on small discrete joints over (X, Z, A), in nats.
namespace structssl::exact {

inline constexpr std::size_t kMaxCardinality = 16;

enum class Pair { XZ, XA, ZA };

class DiscreteJoint {
 public:
  // `p` is row-major over (x, z, a). Validates nonnegativity and unit mass.
  DiscreteJoint(std::size_t nx, std::size_t nz, std::size_t na, std::vector<double> p);

  std::size_t nx() const { return nx_; }
  std::size_t nz() const { return nz_; }
  std::size_t na() const { return na_; }
  double operator()(std::size_t x, std::size_t z, std::size_t a) const { return p_[(x * nz_ + z) * na_ + a]; }
  const std::vector<double>& table() const { return p_; }

  std::vector<double> marginal_x() const;
  std::vector<double> marginal_z() const;
  std::vector<double> marginal_a() const;
  // Row-major table of a pair marginal, e.g. p(x, z) with shape |X| x |Z|.
  std::vector<double> pair_marginal(Pair pair) const;
  std::pair<std::size_t, std::size_t> pair_dims(Pair pair) const;

 private:
  std::size_t nx_, nz_, na_;
  std::vector<double> p_;
};

// KL(p_XZA || p_X p_Z p_A).
double total_correlation(const DiscreteJoint& j);
double pairwise_mi(const DiscreteJoint& j, Pair pair);
// |TC - I(X,Z) - I(X,A)|; zero when Z and A are conditionally independent given X.
double decomposition_residual(const DiscreteJoint& j);

// p(x, z, a) = pX(x) pZgX(z|x) pAgX(a|x). Conditionals are row-major with one row per x.
DiscreteJoint make_cond_independent(const std::vector<double>& px, const std::vector<double>& pz_given_x,
                                    std::size_t nz, const std::vector<double>& pa_given_x, std::size_t na);

// E_{p_pair}[T] - (1/e) E_{p_u p_v}[exp T] for a critic table T over the pair (row-major).
double nwj_exact(const DiscreteJoint& j, Pair pair, const std::vector<double>& critic);
// T* = 1 + log(p_pair / (p_u p_v)), which makes nwj_exact tight. Cells where the
// joint is zero get -inf-free stand-in value `floor`.
std::vector<double> nwj_optimal_critic(const DiscreteJoint& j, Pair pair, double floor = -50.0);

struct GaussianPairSpec {
  std::size_t dim = 1;
  double rho = 0.0;
};

// -(d/2) ln(1 - rho^2)
double gaussian_mi(const GaussianPairSpec& spec);

// Entropy (nats) of a probability vector.
double entropy(const std::vector<double>& p);

}  // namespace structssl::exact
