#pragma once
// Brute-force references for the alignment metrics.
#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

namespace ctxattn::testing {

inline double dot_ref(const std::vector<double>& h, const std::vector<double>& m) {
  double s = 0.0;
  for (std::size_t i = 0; i < h.size(); ++i)
    if (h[i] != 0.0) s += m[i];
  return s;
}

inline double kl_ref(const std::vector<double>& t, const std::vector<double>& p) {
  double s = 0.0;
  for (std::size_t i = 0; i < t.size(); ++i)
    if (t[i] > 0.0) s += t[i] * std::log(t[i] / p[i]);
  return s;
}

// 1 + non-highlighted tokens ranked ahead of the best highlighted one.
inline std::size_t probes_ref(const std::vector<double>& h, const std::vector<double>& m) {
  std::size_t best = h.size();
  for (std::size_t i = 0; i < h.size(); ++i)
    if (h[i] != 0.0 && (best == h.size() || m[i] > m[best])) best = i;
  std::size_t ahead = 0;
  for (std::size_t i = 0; i < h.size(); ++i)
    if (h[i] == 0.0 && (m[i] > m[best] || (m[i] == m[best] && i < best))) ++ahead;
  return 1 + ahead;
}

// With coarse=true values come from four levels, so ties are common.
inline std::vector<double> random_distribution(std::mt19937_64& rng, std::size_t n, bool coarse) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::uniform_int_distribution<int> q(1, 4);
  std::vector<double> v(n);
  double s = 0.0;
  for (auto& x : v) s += (x = coarse ? q(rng) : u(rng) + 1e-3);
  for (auto& x : v) x /= s;
  return v;
}

inline std::vector<double> random_binary(std::mt19937_64& rng, std::size_t n, double p, bool at_least_one) {
  std::bernoulli_distribution b(p);
  std::vector<double> v(n);
  for (auto& x : v) x = b(rng) ? 1.0 : 0.0;
  if (at_least_one && std::count(v.begin(), v.end(), 1.0) == 0)
    v[std::uniform_int_distribution<std::size_t>(0, n - 1)(rng)] = 1.0;
  return v;
}

}  // namespace ctxattn::testing
