#include "dialprobe/rng.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace dialprobe {

double Rng::normal() {
  // u1 in (0, 1] so the log is finite.
  double u1 = 1.0 - uniform();
  double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

std::vector<std::size_t> Rng::sample_without_replacement(std::size_t n, std::size_t k) {
  if (k > n) throw std::invalid_argument("sample_without_replacement: k > n");
  // Partial Fisher-Yates over an index array.
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  std::vector<std::size_t> out(k);
  for (std::size_t i = 0; i < k; ++i) {
    std::size_t j =
        i + static_cast<std::size_t>(uniform_int(0, static_cast<std::int64_t>(n - i) - 1));
    std::swap(idx[i], idx[j]);
    out[i] = idx[i];
  }
  return out;
}

}  // namespace dialprobe
