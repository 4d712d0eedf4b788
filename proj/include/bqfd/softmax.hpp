#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <vector>

namespace bqfd {

// Index of the largest entry; ties go to the lowest index.
inline std::size_t argmax(std::span<const double> v) {
  if (v.empty()) throw std::invalid_argument("argmax: empty row");
  std::size_t best = 0;
  for (std::size_t i = 1; i < v.size(); ++i) {
    if (v[i] > v[best]) best = i;
  }
  return best;
}

inline double max_value(std::span<const double> v) { return v[argmax(v)]; }

// log sum_b exp(eta * v[b]), max-subtracted.
inline double log_sum_exp(std::span<const double> v, double eta) {
  const double m = eta * max_value(v);
  double acc = 0.0;
  for (double x : v) acc += std::exp(eta * x - m);
  return m + std::log(acc);
}

/// Boltzmann distribution exp(eta*v[a]) / sum_b exp(eta*v[b]).
///
/// Computed with max-subtraction, so it does not overflow for |eta*v| up to
/// roughly 700 and stays exact-sum-to-one within rounding.
inline std::vector<double> softmax(std::span<const double> v, double eta) {
  std::vector<double> p(v.size());
  const double m = eta * max_value(v);
  double total = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    p[i] = std::exp(eta * v[i] - m);
    total += p[i];
  }
  for (double& x : p) x /= total;
  return p;
}

inline double softmax_at(std::span<const double> v, double eta, std::size_t a) {
  return softmax(v, eta).at(a);
}

}  // namespace bqfd
