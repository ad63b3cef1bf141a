#include "naslab/core/rng.hpp"

#include <numeric>
#include <unordered_set>

#include "naslab/core/error.hpp"

namespace naslab {

std::vector<int> Rng::permutation(int n) {
  std::vector<int> p(static_cast<std::size_t>(n));
  std::iota(p.begin(), p.end(), 0);
  // Fisher-Yates with our own index draws keeps the sequence independent of
  // the standard library's shuffle implementation.
  for (int i = n - 1; i > 0; --i) std::swap(p[static_cast<std::size_t>(i)], p[static_cast<std::size_t>(index(i + 1))]);
  return p;
}

std::vector<int> Rng::sample_without_replacement(int n, int k) {
  if (k < 0 || k > n) throw InputError("cannot draw " + std::to_string(k) + " of " + std::to_string(n));
  if (2 * k > n) {
    auto p = permutation(n);
    p.resize(static_cast<std::size_t>(k));
    return p;
  }
  std::unordered_set<int> seen;
  std::vector<int> out;
  out.reserve(static_cast<std::size_t>(k));
  while (static_cast<int>(out.size()) < k) {
    int i = index(n);
    if (seen.insert(i).second) out.push_back(i);
  }
  return out;
}

}  // namespace naslab
