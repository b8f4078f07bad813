#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "maskdiff/errors.hpp"

namespace maskdiff {

using TokenId = std::int32_t;

// A sequence of category indices. Indices lie in [0, |V|]; index |V| is the
// reserved mask category. A "clean" sequence contains no mask token.
using TokenSeq = std::vector<TokenId>;

// Probability vector over |V|+1 categories (the extra slot is the mask).
using ProbRow = std::vector<double>;

// Token vocabulary of size |V| with the mask category appended at index |V|.
struct Vocab {
  int size = 0;

  int mask_id() const { return size; }
  int prob_width() const { return size + 1; }

  void validate() const {
    if (size < 1) throw ConfigError("Vocab: size must be >= 1");
  }
};

inline bool contains_mask(const TokenSeq& seq, const Vocab& vocab) {
  for (TokenId t : seq)
    if (t == vocab.mask_id()) return true;
  return false;
}

inline bool is_clean(const TokenSeq& seq, const Vocab& vocab) {
  for (TokenId t : seq)
    if (t < 0 || t >= vocab.size) return false;
  return true;
}

inline void check_tokens_in_range(const TokenSeq& seq, const Vocab& vocab) {
  for (TokenId t : seq)
    if (t < 0 || t > vocab.mask_id())
      throw std::invalid_argument("token id " + std::to_string(t) + " out of range for |V|=" +
                                  std::to_string(vocab.size));
}

inline int count_masked(const TokenSeq& seq, const Vocab& vocab) {
  int n = 0;
  for (TokenId t : seq) n += (t == vocab.mask_id()) ? 1 : 0;
  return n;
}

inline std::vector<int> masked_positions(const TokenSeq& seq, const Vocab& vocab) {
  std::vector<int> pos;
  for (int i = 0; i < static_cast<int>(seq.size()); ++i)
    if (seq[i] == vocab.mask_id()) pos.push_back(i);
  return pos;
}

inline ProbRow point_mass(int width, int index) {
  ProbRow row(width, 0.0);
  row.at(index) = 1.0;
  return row;
}

inline double prob_row_sum(const ProbRow& row) {
  double s = 0.0;
  for (double p : row) s += p;
  return s;
}

inline void check_prob_row(const ProbRow& row, const Vocab& vocab, double tol = 1e-9) {
  if (static_cast<int>(row.size()) != vocab.prob_width())
    throw ShapeError("ProbRow width " + std::to_string(row.size()) + " != |V|+1 = " +
                     std::to_string(vocab.prob_width()));
  for (double p : row)
    if (!(p >= 0.0) || !std::isfinite(p))
      throw std::invalid_argument("ProbRow entries must be finite and nonnegative");
  if (std::fabs(prob_row_sum(row) - 1.0) > tol)
    throw std::invalid_argument("ProbRow does not sum to 1");
}

}  // namespace maskdiff
