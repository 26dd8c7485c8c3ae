#include "structssl/exact_info.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

#include "structssl/tensor.hpp"

namespace structssl::exact {

namespace {

void check_card(std::size_t n, const char* what) {
  if (n == 0 || n > kMaxCardinality) {
    throw std::invalid_argument(std::string("cardinality of ") + what + " must be in [1, 16], got " + std::to_string(n));
  }
}

// Sum of p log(p / q) with 0 log(0/q) = 0.
double kl_term(double p, double q) {
  if (p == 0.0) return 0.0;
  if (!(q > 0.0)) throw DomainError("joint mass where the product of marginals is zero");
  return p * std::log(p / q);
}

}  // namespace

DiscreteJoint::DiscreteJoint(std::size_t nx, std::size_t nz, std::size_t na, std::vector<double> p)
    : nx_(nx), nz_(nz), na_(na), p_(std::move(p)) {
  check_card(nx, "X");
  check_card(nz, "Z");
  check_card(na, "A");
  if (p_.size() != nx * nz * na) {
    throw std::invalid_argument("joint table needs " + std::to_string(nx * nz * na) + " cells, got " +
                                std::to_string(p_.size()));
  }
  double total = 0.0;
  for (double v : p_) {
    if (!(v >= 0.0) || !std::isfinite(v)) throw std::invalid_argument("joint table has a negative or non-finite cell");
    total += v;
  }
  if (std::abs(total - 1.0) > 1e-12) {
    throw std::invalid_argument("joint table sums to " + std::to_string(total) + ", not 1");
  }
}

std::vector<double> DiscreteJoint::marginal_x() const {
  std::vector<double> m(nx_, 0.0);
  for (std::size_t x = 0; x < nx_; ++x)
    for (std::size_t z = 0; z < nz_; ++z)
      for (std::size_t a = 0; a < na_; ++a) m[x] += (*this)(x, z, a);
  return m;
}

std::vector<double> DiscreteJoint::marginal_z() const {
  std::vector<double> m(nz_, 0.0);
  for (std::size_t x = 0; x < nx_; ++x)
    for (std::size_t z = 0; z < nz_; ++z)
      for (std::size_t a = 0; a < na_; ++a) m[z] += (*this)(x, z, a);
  return m;
}

std::vector<double> DiscreteJoint::marginal_a() const {
  std::vector<double> m(na_, 0.0);
  for (std::size_t x = 0; x < nx_; ++x)
    for (std::size_t z = 0; z < nz_; ++z)
      for (std::size_t a = 0; a < na_; ++a) m[a] += (*this)(x, z, a);
  return m;
}

std::pair<std::size_t, std::size_t> DiscreteJoint::pair_dims(Pair pair) const {
  switch (pair) {
    case Pair::XZ: return {nx_, nz_};
    case Pair::XA: return {nx_, na_};
    case Pair::ZA: return {nz_, na_};
  }
  throw std::logic_error("unknown pair");
}

std::vector<double> DiscreteJoint::pair_marginal(Pair pair) const {
  auto [nu, nv] = pair_dims(pair);
  std::vector<double> m(nu * nv, 0.0);
  for (std::size_t x = 0; x < nx_; ++x) {
    for (std::size_t z = 0; z < nz_; ++z) {
      for (std::size_t a = 0; a < na_; ++a) {
        const double p = (*this)(x, z, a);
        switch (pair) {
          case Pair::XZ: m[x * nv + z] += p; break;
          case Pair::XA: m[x * nv + a] += p; break;
          case Pair::ZA: m[z * nv + a] += p; break;
        }
      }
    }
  }
  return m;
}

double total_correlation(const DiscreteJoint& j) {
  const auto px = j.marginal_x(), pz = j.marginal_z(), pa = j.marginal_a();
  double tc = 0.0;
  for (std::size_t x = 0; x < j.nx(); ++x)
    for (std::size_t z = 0; z < j.nz(); ++z)
      for (std::size_t a = 0; a < j.na(); ++a) tc += kl_term(j(x, z, a), px[x] * pz[z] * pa[a]);
  return tc;
}

double pairwise_mi(const DiscreteJoint& j, Pair pair) {
  const auto [nu, nv] = j.pair_dims(pair);
  const auto pj = j.pair_marginal(pair);
  std::vector<double> pu(nu, 0.0), pv(nv, 0.0);
  for (std::size_t u = 0; u < nu; ++u)
    for (std::size_t v = 0; v < nv; ++v) {
      pu[u] += pj[u * nv + v];
      pv[v] += pj[u * nv + v];
    }
  double mi = 0.0;
  for (std::size_t u = 0; u < nu; ++u)
    for (std::size_t v = 0; v < nv; ++v) mi += kl_term(pj[u * nv + v], pu[u] * pv[v]);
  return mi;
}

double decomposition_residual(const DiscreteJoint& j) {
  return std::abs(total_correlation(j) - pairwise_mi(j, Pair::XZ) - pairwise_mi(j, Pair::XA));
}

DiscreteJoint make_cond_independent(const std::vector<double>& px, const std::vector<double>& pz_given_x,
                                    std::size_t nz, const std::vector<double>& pa_given_x, std::size_t na) {
  const std::size_t nx = px.size();
  if (pz_given_x.size() != nx * nz || pa_given_x.size() != nx * na) {
    throw std::invalid_argument("conditional tables must have one row per value of X");
  }
  auto check_dist = [](const double* p, std::size_t n, const std::string& what) {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      if (!(p[i] >= 0.0)) throw std::invalid_argument(what + " has a negative entry");
      s += p[i];
    }
    if (std::abs(s - 1.0) > 1e-10) throw std::invalid_argument(what + " sums to " + std::to_string(s));
  };
  check_dist(px.data(), nx, "p(x)");
  for (std::size_t x = 0; x < nx; ++x) {
    check_dist(pz_given_x.data() + x * nz, nz, "p(z|x=" + std::to_string(x) + ")");
    check_dist(pa_given_x.data() + x * na, na, "p(a|x=" + std::to_string(x) + ")");
  }
  std::vector<double> p(nx * nz * na);
  for (std::size_t x = 0; x < nx; ++x)
    for (std::size_t z = 0; z < nz; ++z)
      for (std::size_t a = 0; a < na; ++a) p[(x * nz + z) * na + a] = px[x] * pz_given_x[x * nz + z] * pa_given_x[x * na + a];
  // Renormalize away round-off accumulated from the 1e-10 tolerance.
  double total = 0.0;
  for (double v : p) total += v;
  for (double& v : p) v /= total;
  return DiscreteJoint(nx, nz, na, std::move(p));
}

double nwj_exact(const DiscreteJoint& j, Pair pair, const std::vector<double>& critic) {
  const auto [nu, nv] = j.pair_dims(pair);
  if (critic.size() != nu * nv) {
    throw std::invalid_argument("critic table needs " + std::to_string(nu * nv) + " cells, got " +
                                std::to_string(critic.size()));
  }
  const auto pj = j.pair_marginal(pair);
  std::vector<double> pu(nu, 0.0), pv(nv, 0.0);
  for (std::size_t u = 0; u < nu; ++u)
    for (std::size_t v = 0; v < nv; ++v) {
      pu[u] += pj[u * nv + v];
      pv[v] += pj[u * nv + v];
    }
  double pos = 0.0, neg = 0.0;
  for (std::size_t c = 0; c < critic.size(); ++c) {
    const double t = critic[c];
    if (!std::isfinite(t)) throw std::invalid_argument("critic table has a non-finite cell");
    const double et = std::exp(t);
    if (!std::isfinite(et)) throw std::overflow_error("exp(T) overflows at T = " + std::to_string(t));
    if (pj[c] > 0.0) pos += pj[c] * t;
    neg += pu[c / nv] * pv[c % nv] * et;
  }
  return pos - neg / std::numbers::e;
}

std::vector<double> nwj_optimal_critic(const DiscreteJoint& j, Pair pair, double floor) {
  const auto [nu, nv] = j.pair_dims(pair);
  const auto pj = j.pair_marginal(pair);
  std::vector<double> pu(nu, 0.0), pv(nv, 0.0);
  for (std::size_t u = 0; u < nu; ++u)
    for (std::size_t v = 0; v < nv; ++v) {
      pu[u] += pj[u * nv + v];
      pv[v] += pj[u * nv + v];
    }
  std::vector<double> t(nu * nv, floor);
  for (std::size_t c = 0; c < t.size(); ++c) {
    const double q = pu[c / nv] * pv[c % nv];
    if (pj[c] > 0.0 && q > 0.0) t[c] = 1.0 + std::log(pj[c] / q);
  }
  return t;
}

double gaussian_mi(const GaussianPairSpec& spec) {
  if (spec.dim == 0) throw std::invalid_argument("gaussian_mi: dimension must be >= 1");
  if (!(std::abs(spec.rho) < 1.0)) throw DomainError("gaussian_mi: |rho| must be < 1");
  return -0.5 * static_cast<double>(spec.dim) * std::log1p(-spec.rho * spec.rho);
}

double entropy(const std::vector<double>& p) {
  double h = 0.0;
  for (double v : p)
    if (v > 0.0) h -= v * std::log(v);
  return h;
}

}  // namespace structssl::exact
