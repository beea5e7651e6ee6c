#pragma once

// Independent brute-force reimplementations of the evaluation arithmetic,
// written against std::set so they share no code with the library versions.

#include <cmath>
#include <cstdlib>
#include <set>
#include <vector>

#include "tonguerx/metrics.hpp"

namespace oracles {

struct SimilarityTriple {
  double p, r, iou;
  std::size_t nc, np, ng;
};

inline SimilarityTriple similarity(const std::vector<std::size_t>& generated,
                                   const std::vector<std::size_t>& real) {
  std::set<std::size_t> g(generated.begin(), generated.end());
  std::set<std::size_t> t(real.begin(), real.end());
  std::set<std::size_t> both;
  for (std::size_t id : g)
    if (t.count(id)) both.insert(id);
  std::set<std::size_t> either = g;
  either.insert(t.begin(), t.end());
  SimilarityTriple out{};
  out.nc = both.size();
  out.np = g.size();
  out.ng = t.size();
  out.p = g.empty() ? 0.0
                    : static_cast<double>(both.size()) /
                          static_cast<double>(g.size());
  out.r = static_cast<double>(both.size()) / static_cast<double>(t.size());
  out.iou = static_cast<double>(both.size()) /
            static_cast<double>(either.size());
  return out;
}

struct Counts {
  double nb_p, nb_c, nb_d, nb_d_mean_abs;
};

inline Counts count_metrics(const std::vector<tonguerx::metrics::SetPair>& pairs) {
  double np = 0, ng = 0, nc = 0, abs_diff = 0;
  for (const auto& [g_vec, t_vec] : pairs) {
    SimilarityTriple s = similarity(g_vec, t_vec);
    np += static_cast<double>(s.np);
    ng += static_cast<double>(s.ng);
    nc += static_cast<double>(s.nc);
    abs_diff += std::fabs(static_cast<double>(s.np) - static_cast<double>(s.ng));
  }
  const double n = static_cast<double>(pairs.size());
  return {np / n, nc / n, std::fabs(np / n - ng / n), abs_diff / n};
}

struct PairScore {
  long s_pos, s_neg;
};

/// Scans every rule pair against membership sets, endpoint by endpoint.
inline PairScore logic_score(
    const std::vector<std::size_t>& prescription,
    const tonguerx::metrics::PairRuleTable& rules,
    bool avoided_means_not_contained = false) {
  std::set<std::size_t> have(prescription.begin(), prescription.end());
  PairScore score{0, 0};
  for (const auto& [a, b] : rules.common)
    if (have.count(a) && have.count(b)) ++score.s_pos;
  for (const auto& [a, b] : rules.taboo) {
    const int endpoints =
        static_cast<int>(have.count(a)) + static_cast<int>(have.count(b));
    if (endpoints == 2) --score.s_neg;
    if (avoided_means_not_contained ? endpoints < 2 : endpoints == 1)
      ++score.s_neg;
  }
  return score;
}

inline std::vector<std::size_t> random_herb_set(tonguerx::Rng& rng,
                                                std::size_t vocab,
                                                std::size_t max_len,
                                                bool allow_empty = false) {
  const std::size_t len =
      allow_empty ? rng.uniform_index(max_len + 1) : 1 + rng.uniform_index(max_len);
  std::set<std::size_t> ids;
  while (ids.size() < len) ids.insert(rng.uniform_index(vocab));
  return {ids.begin(), ids.end()};
}

}  // namespace oracles
