#pragma once

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "maskdiff/rng.hpp"
#include "maskdiff/schedule.hpp"
#include "maskdiff/types.hpp"

namespace maskdiff {

// Masking ("absorbing state") diffusion kernels over token sequences.
//
// Forward marginal:   q(z_t | x)        = Cat(alpha_t x + (1 - alpha_t) m)
// Reverse posterior:  q(z_s | z_t, x)   for s < t, which the carry-over
// property collapses to a point mass whenever z_t is not the mask.

inline double alpha(const Schedule& schedule, double t) { return schedule.alpha(t); }

// Independently masks each position with probability 1 - alpha_t.
inline TokenSeq forward_mask(const TokenSeq& x, const Vocab& vocab, const Schedule& schedule,
                             double t, RandomStream& rng) {
  if (contains_mask(x, vocab) || !is_clean(x, vocab))
    throw std::invalid_argument("forward_mask: input must be a clean sequence");
  const double keep = schedule.alpha(t);
  TokenSeq z = x;
  for (TokenId& tok : z)
    if (!rng.bernoulli(keep)) tok = vocab.mask_id();
  return z;
}

inline void check_schedule_order(double alpha_s, double alpha_t) {
  if (!(alpha_t >= 0.0 && alpha_s <= 1.0))
    throw std::invalid_argument("reverse kernel: alpha values outside [0,1]");
  if (alpha_s <= alpha_t)
    throw std::invalid_argument("reverse kernel: requires alpha_s > alpha_t (s < t)");
}

// Single-token reverse posterior q(z_s | z_t, x). If z_tok is already
// unmasked the result is a point mass on z_tok; otherwise mass
// (alpha_s - alpha_t)/(1 - alpha_t) goes to x_tok and the rest stays on mask.
inline ProbRow reverse_posterior(TokenId x_tok, TokenId z_tok, const Vocab& vocab, double alpha_s,
                                 double alpha_t) {
  check_schedule_order(alpha_s, alpha_t);
  if (x_tok < 0 || x_tok >= vocab.size)
    throw std::invalid_argument("reverse_posterior: x_tok must be a clean token");
  if (z_tok < 0 || z_tok > vocab.mask_id())
    throw std::invalid_argument("reverse_posterior: z_tok out of range");

  if (z_tok != vocab.mask_id()) return point_mass(vocab.prob_width(), z_tok);

  ProbRow row(vocab.prob_width(), 0.0);
  const double denom = 1.0 - alpha_t;
  row[x_tok] = (alpha_s - alpha_t) / denom;
  row[vocab.mask_id()] = (1.0 - alpha_s) / denom;
  return row;
}

// One ancestral reverse step over a whole sequence. Unmasked positions are
// copied verbatim; each masked position samples from the mixture
//   ((1 - alpha_s) m + (alpha_s - alpha_t) x_theta) / (1 - alpha_t),
// where probs[l] is the denoiser distribution with zero mass on the mask.
inline TokenSeq reverse_step(const TokenSeq& z_t, const std::vector<ProbRow>& probs,
                             const Vocab& vocab, double alpha_s, double alpha_t,
                             RandomStream& rng) {
  check_schedule_order(alpha_s, alpha_t);
  if (probs.size() != z_t.size())
    throw ShapeError("reverse_step: probs length " + std::to_string(probs.size()) +
                     " != sequence length " + std::to_string(z_t.size()));

  const double stay_masked = (1.0 - alpha_s) / (1.0 - alpha_t);
  TokenSeq z_s = z_t;
  for (std::size_t l = 0; l < z_t.size(); ++l) {
    if (z_t[l] != vocab.mask_id()) continue;  // carry-over
    const ProbRow& row = probs[l];
    if (static_cast<int>(row.size()) != vocab.prob_width())
      throw ShapeError("reverse_step: ProbRow width mismatch at position " + std::to_string(l));
    if (row[vocab.mask_id()] > 1e-9)
      throw std::invalid_argument("reverse_step: denoiser row has nonzero mask probability");
    if (rng.bernoulli(stay_masked)) continue;
    z_s[l] = static_cast<TokenId>(
        rng.categorical(std::span<const double>(row.data(), vocab.size)));
  }
  return z_s;
}

struct DiffusionLoss {
  double value = 0.0;
  int masked_count = 0;  // 0 means the example contributes nothing to a batch mean
};

// Cross-entropy objective over masked positions. Softmax runs over the |V|
// non-mask categories only (the mask logit is pinned to -inf). With
// weighted=true the per-example weight -alpha'_t / (1 - alpha_t) is applied,
// with the denominator clamped below at 1e-6 against the t -> 0 singularity.
inline DiffusionLoss diffusion_loss(const std::vector<std::vector<double>>& logits,
                                    const TokenSeq& x, const TokenSeq& z_t, double t,
                                    const Schedule& schedule, bool weighted, const Vocab& vocab) {
  if (logits.size() != x.size() || z_t.size() != x.size())
    throw ShapeError("diffusion_loss: logits/x/z_t length mismatch");
  if (!is_clean(x, vocab))
    throw std::invalid_argument("diffusion_loss: x must be a clean sequence");

  double nll_sum = 0.0;
  int masked = 0;
  for (std::size_t l = 0; l < x.size(); ++l) {
    if (z_t[l] != vocab.mask_id()) continue;
    const std::vector<double>& row = logits[l];
    if (static_cast<int>(row.size()) < vocab.size)
      throw ShapeError("diffusion_loss: logit row narrower than |V|");
    double max_logit = *std::max_element(row.begin(), row.begin() + vocab.size);
    double lse = 0.0;
    for (int v = 0; v < vocab.size; ++v) lse += std::exp(row[v] - max_logit);
    lse = std::log(lse) + max_logit;
    nll_sum += lse - row[x[l]];
    ++masked;
  }
  if (masked == 0) return {0.0, 0};

  double loss = nll_sum / masked;
  if (weighted) {
    double denom = std::max(1.0 - schedule.alpha(t), 1e-6);
    loss *= -schedule.alpha_prime(t) / denom;
  }
  return {loss, masked};
}

}  // namespace maskdiff
