#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "maskdiff/rng.hpp"
#include "maskdiff/types.hpp"

namespace maskdiff {

// ============================================================================
// Levenshtein alignment with insertion/deletion/substitution decomposition
// ============================================================================

struct EditCounts {
  int insertion = 0;
  int deletion = 0;
  int substitution = 0;
  int total() const { return insertion + deletion + substitution; }
};

// Edit operations normalized by the reference length (WER convention), so
// the total can exceed 1 under heavy insertion.
struct EditRates {
  double insertion = 0.0;
  double deletion = 0.0;
  double substitution = 0.0;
  double total() const { return insertion + deletion + substitution; }
};

// Unit-cost Levenshtein DP with backtrace. At equal cost the backtrace
// prefers match > substitution > deletion > insertion.
inline EditCounts align_counts(const TokenSeq& ref, const TokenSeq& hyp) {
  if (ref.empty()) throw std::domain_error("align_counts: empty reference");
  const int m = static_cast<int>(ref.size());
  const int n = static_cast<int>(hyp.size());
  std::vector<int> dp((m + 1) * (n + 1));
  auto d = [&](int i, int j) -> int& { return dp[i * (n + 1) + j]; };
  for (int i = 0; i <= m; ++i) d(i, 0) = i;
  for (int j = 0; j <= n; ++j) d(0, j) = j;
  for (int i = 1; i <= m; ++i) {
    for (int j = 1; j <= n; ++j) {
      int diag = d(i - 1, j - 1) + (ref[i - 1] == hyp[j - 1] ? 0 : 1);
      d(i, j) = std::min({diag, d(i - 1, j) + 1, d(i, j - 1) + 1});
    }
  }

  EditCounts counts;
  int i = m, j = n;
  while (i > 0 || j > 0) {
    if (i > 0 && j > 0 && ref[i - 1] == hyp[j - 1] && d(i, j) == d(i - 1, j - 1)) {
      --i, --j;  // match
    } else if (i > 0 && j > 0 && d(i, j) == d(i - 1, j - 1) + 1) {
      ++counts.substitution;
      --i, --j;
    } else if (i > 0 && d(i, j) == d(i - 1, j) + 1) {
      ++counts.deletion;
      --i;
    } else {
      ++counts.insertion;
      --j;
    }
  }
  return counts;
}

inline EditRates align_rates(const TokenSeq& ref, const TokenSeq& hyp) {
  EditCounts c = align_counts(ref, hyp);
  double len = static_cast<double>(ref.size());
  return {c.insertion / len, c.deletion / len, c.substitution / len};
}

// Strips trailing silence tokens from a hypothesis before alignment; used
// when decoding lengths overestimate the truth.
inline TokenSeq strip_trailing(const TokenSeq& seq, TokenId token) {
  TokenSeq out = seq;
  while (!out.empty() && out.back() == token) out.pop_back();
  return out;
}

// ============================================================================
// Paired bootstrap
// ============================================================================

struct BootstrapSummary {
  double mean_diff = 0.0;  // mean(a) - mean(b)
  double lo95 = 0.0;       // 2.5th percentile of the resampled mean difference
  double hi95 = 0.0;       // 97.5th percentile
  double p95_upper = 0.0;  // one-sided 95th percentile
  double p05_lower = 0.0;  // one-sided 5th percentile
};

// Paired bootstrap over per-example differences a[i] - b[i].
inline BootstrapSummary paired_bootstrap(const std::vector<double>& a,
                                         const std::vector<double>& b, RandomStream& rng,
                                         int resamples = 10000) {
  if (a.size() != b.size() || a.empty())
    throw std::invalid_argument("paired_bootstrap: requires matched nonempty samples");
  const int n = static_cast<int>(a.size());
  std::vector<double> diff(n);
  double mean = 0.0;
  for (int i = 0; i < n; ++i) {
    diff[i] = a[i] - b[i];
    mean += diff[i];
  }
  mean /= n;

  std::vector<double> means(resamples);
  for (int r = 0; r < resamples; ++r) {
    double s = 0.0;
    for (int i = 0; i < n; ++i) s += diff[rng.uniform_int(n)];
    means[r] = s / n;
  }
  std::sort(means.begin(), means.end());
  auto pct = [&](double p) {
    double idx = p * (resamples - 1);
    int lo = static_cast<int>(idx);
    int hi = std::min(lo + 1, resamples - 1);
    double f = idx - lo;
    return means[lo] * (1.0 - f) + means[hi] * f;
  };
  return {mean, pct(0.025), pct(0.975), pct(0.95), pct(0.05)};
}

}  // namespace maskdiff
