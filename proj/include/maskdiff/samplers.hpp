#pragma once

#include <algorithm>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "maskdiff/diffusion.hpp"
#include "maskdiff/errors.hpp"
#include "maskdiff/types.hpp"

namespace maskdiff {

// ============================================================================
// Sampler configuration
// ============================================================================

enum class SamplerKind { ancestral, conf_topk, conf_topp, remdm_cap, remdm_loop };

inline const char* to_string(SamplerKind k) {
  switch (k) {
    case SamplerKind::ancestral: return "ancestral";
    case SamplerKind::conf_topk: return "conf_topk";
    case SamplerKind::conf_topp: return "conf_topp";
    case SamplerKind::remdm_cap: return "remdm_cap";
    case SamplerKind::remdm_loop: return "remdm_loop";
  }
  return "?";
}

inline SamplerKind sampler_kind_from_string(const std::string& s) {
  if (s == "ancestral") return SamplerKind::ancestral;
  if (s == "conf_topk") return SamplerKind::conf_topk;
  if (s == "conf_topp") return SamplerKind::conf_topp;
  if (s == "remdm_cap") return SamplerKind::remdm_cap;
  if (s == "remdm_loop") return SamplerKind::remdm_loop;
  throw ConfigError("unknown sampler kind: " + s);
}

inline bool is_remasking(SamplerKind k) {
  return k == SamplerKind::remdm_cap || k == SamplerKind::remdm_loop;
}

struct SamplerConfig {
  SamplerKind kind = SamplerKind::conf_topk;
  int steps = 50;
  double top_p_threshold = 0.9;  // conf_topp only
  double remask_eta = 0.05;      // remdm_* only
  double loop_fraction = 0.2;    // remdm_loop only

  void validate() const {
    if (steps < 1) throw ConfigError("sampler: steps must be >= 1");
    if (kind == SamplerKind::conf_topp &&
        !(top_p_threshold > 0.0 && top_p_threshold <= 1.0))
      throw ConfigError("sampler: top_p_threshold must lie in (0,1]");
    if (is_remasking(kind) && !(remask_eta >= 0.0 && remask_eta < 1.0))
      throw ConfigError("sampler: remask_eta must lie in [0,1)");
    if (kind == SamplerKind::remdm_loop && !(loop_fraction > 0.0 && loop_fraction < 1.0))
      throw ConfigError("sampler: loop_fraction must lie in (0,1)");
  }
};

// ============================================================================
// Per-run trace
// ============================================================================

struct DenoiseStepRecord {
  double t_from = 0.0;
  double t_to = 0.0;
  int masked_before = 0;
  std::vector<int> unmasked_positions;
  std::vector<int> remasked_positions;
  std::vector<double> confidences;  // confidence of each newly unmasked position
};

struct DenoiseTrace {
  std::vector<DenoiseStepRecord> steps;
  long denoiser_calls = 0;
};

// Denoiser interface: conditioning is bound by the caller; rows must carry
// zero probability on the mask category.
using Denoiser = std::function<std::vector<ProbRow>(const TokenSeq& z, double t)>;

// ============================================================================
// Planning and confidence
// ============================================================================

// Spreads num_masked unmask operations over at most `steps` steps with the
// ceil rule: step i unmasks ceil(remaining / steps_remaining) tokens.
// The returned list sums exactly to num_masked.
inline std::vector<int> plan_unmask_counts(int num_masked, int steps) {
  if (num_masked < 0) throw std::invalid_argument("plan_unmask_counts: num_masked < 0");
  if (steps < 1) throw std::invalid_argument("plan_unmask_counts: steps < 1");
  std::vector<int> plan;
  int remaining = num_masked;
  for (int i = 0; i < steps && remaining > 0; ++i) {
    int steps_remaining = steps - i;
    int k = (remaining + steps_remaining - 1) / steps_remaining;
    plan.push_back(k);
    remaining -= k;
  }
  return plan;
}

// Confidence of a masked position = probability of its argmax non-mask token.
inline std::map<int, double> confidence_scores(const std::vector<ProbRow>& probs,
                                               const std::vector<int>& positions,
                                               const Vocab& vocab) {
  std::map<int, double> conf;
  for (int pos : positions) {
    if (pos < 0 || pos >= static_cast<int>(probs.size()))
      throw ShapeError("confidence_scores: position " + std::to_string(pos) + " has no ProbRow");
    const ProbRow& row = probs[pos];
    double best = 0.0;
    for (int v = 0; v < vocab.size; ++v) best = std::max(best, row[v]);
    conf[pos] = best;
  }
  return conf;
}

// Argmax over non-mask categories; ties break toward the lowest token id.
inline TokenId argmax_token(const ProbRow& row, const Vocab& vocab) {
  int best = 0;
  for (int v = 1; v < vocab.size; ++v)
    if (row[v] > row[best]) best = v;
  return best;
}

namespace detail {

// Masked positions ordered by descending confidence, ties toward the lower
// position index.
inline std::vector<std::pair<int, double>> ranked_confidences(const std::vector<ProbRow>& probs,
                                                              const TokenSeq& z,
                                                              const Vocab& vocab) {
  std::vector<std::pair<int, double>> ranked;
  for (int pos : masked_positions(z, vocab)) {
    double best = 0.0;
    for (int v = 0; v < vocab.size; ++v) best = std::max(best, probs[pos][v]);
    ranked.emplace_back(pos, best);
  }
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  return ranked;
}

}  // namespace detail

// ============================================================================
// Single-step updates
// ============================================================================

// Unmasks the k most confident masked positions to their argmax tokens.
// k larger than the masked count is clamped.
inline TokenSeq conf_topk_step(const TokenSeq& z, const std::vector<ProbRow>& probs,
                               const Vocab& vocab, int k) {
  if (probs.size() != z.size()) throw ShapeError("conf_topk_step: probs/sequence length mismatch");
  if (k < 0) throw std::invalid_argument("conf_topk_step: k < 0");
  auto ranked = detail::ranked_confidences(probs, z, vocab);
  k = std::min<int>(k, static_cast<int>(ranked.size()));
  TokenSeq out = z;
  for (int i = 0; i < k; ++i) out[ranked[i].first] = argmax_token(probs[ranked[i].first], vocab);
  return out;
}

// Unmasks every masked position whose confidence reaches the threshold; if
// none qualifies, the single most confident position is unmasked so the
// sampler always makes progress.
inline TokenSeq conf_topp_step(const TokenSeq& z, const std::vector<ProbRow>& probs,
                               const Vocab& vocab, double threshold) {
  if (probs.size() != z.size()) throw ShapeError("conf_topp_step: probs/sequence length mismatch");
  if (!(threshold > 0.0 && threshold <= 1.0))
    throw std::invalid_argument("conf_topp_step: threshold outside (0,1]");
  auto ranked = detail::ranked_confidences(probs, z, vocab);
  TokenSeq out = z;
  bool any = false;
  for (const auto& [pos, conf] : ranked) {
    if (conf >= threshold) {
      out[pos] = argmax_token(probs[pos], vocab);
      any = true;
    }
  }
  if (!any && !ranked.empty()) {
    int pos = ranked.front().first;
    out[pos] = argmax_token(probs[pos], vocab);
  }
  return out;
}

// Ancestral update: delegates to the reverse-process kernel.
inline TokenSeq ancestral_step(const TokenSeq& z, const std::vector<ProbRow>& probs,
                               const Vocab& vocab, double alpha_s, double alpha_t,
                               RandomStream& rng) {
  return reverse_step(z, probs, vocab, alpha_s, alpha_t, rng);
}

// Remasking probability sigma_t for the two ReMDM strategies. The loop
// variant remasks only during the final loop_fraction of the step budget.
inline double remdm_sigma(const SamplerConfig& config, double alpha_s, double alpha_t,
                          int step_index, int total_steps) {
  switch (config.kind) {
    case SamplerKind::remdm_cap:
      return std::min(config.remask_eta, (1.0 - alpha_s) / std::max(alpha_t, 1e-6));
    case SamplerKind::remdm_loop: {
      bool active = step_index >= (1.0 - config.loop_fraction) * total_steps;
      return active ? config.remask_eta : 0.0;
    }
    default:
      throw ConfigError("remdm_sigma: config.kind is not a remasking sampler");
  }
}

// ReMDM update: masked positions follow the ancestral kernel, then every
// unmasked position is independently returned to the mask with probability
// sigma_t.
inline TokenSeq remdm_step(const TokenSeq& z, const std::vector<ProbRow>& probs,
                           const Vocab& vocab, double alpha_s, double alpha_t,
                           const SamplerConfig& config, int step_index, int total_steps,
                           RandomStream& rng) {
  if (!is_remasking(config.kind)) throw ConfigError("remdm_step: invalid sampler kind");
  const double sigma = remdm_sigma(config, alpha_s, alpha_t, step_index, total_steps);
  TokenSeq out = ancestral_step(z, probs, vocab, alpha_s, alpha_t, rng);
  for (std::size_t l = 0; l < z.size(); ++l) {
    if (z[l] == vocab.mask_id()) continue;  // only previously unmasked tokens may remask
    if (rng.bernoulli(sigma)) out[l] = vocab.mask_id();
  }
  return out;
}

// ============================================================================
// Full generation loop
// ============================================================================

// Runs config.steps denoising iterations on the uniform time grid
// t_i = 1 - i/steps, starting from the all-mask sequence. Non-remasking
// samplers return a fully unmasked sequence; remasking samplers disable
// remasking on the final step so the output carries no mask either.
// conf_topk / conf_topp consume no randomness.
inline std::pair<TokenSeq, DenoiseTrace> generate(const Denoiser& denoiser, const Vocab& vocab,
                                                  int length, const SamplerConfig& config,
                                                  const Schedule& schedule, RandomStream& rng) {
  config.validate();
  if (length < 1) throw std::invalid_argument("generate: length must be >= 1");

  TokenSeq z(length, vocab.mask_id());
  DenoiseTrace trace;
  const int steps = config.steps;
  std::vector<int> plan;
  if (config.kind == SamplerKind::conf_topk) plan = plan_unmask_counts(length, steps);

  for (int i = 0; i < steps; ++i) {
    const double t = 1.0 - static_cast<double>(i) / steps;
    const double s = 1.0 - static_cast<double>(i + 1) / steps;
    const bool last = (i == steps - 1);

    const int masked_before = count_masked(z, vocab);
    if (masked_before == 0 && !is_remasking(config.kind)) break;

    std::vector<ProbRow> probs = denoiser(z, t);
    ++trace.denoiser_calls;
    if (probs.size() != z.size()) throw ShapeError("generate: denoiser returned wrong length");

    const TokenSeq before = z;
    switch (config.kind) {
      case SamplerKind::ancestral:
        z = ancestral_step(z, probs, vocab, schedule.alpha(s), schedule.alpha(t), rng);
        break;
      case SamplerKind::conf_topk: {
        int k = i < static_cast<int>(plan.size()) ? plan[i] : 0;
        z = conf_topk_step(z, probs, vocab, k);
        break;
      }
      case SamplerKind::conf_topp:
        if (last) {
          z = conf_topk_step(z, probs, vocab, masked_before);
        } else {
          z = conf_topp_step(z, probs, vocab, config.top_p_threshold);
        }
        break;
      case SamplerKind::remdm_cap:
      case SamplerKind::remdm_loop:
        if (last) {
          // forced final full-unmask pass
          z = ancestral_step(z, probs, vocab, 1.0, schedule.alpha(t), rng);
        } else {
          z = remdm_step(z, probs, vocab, schedule.alpha(s), schedule.alpha(t), config, i, steps,
                         rng);
        }
        break;
    }

    DenoiseStepRecord rec;
    rec.t_from = t;
    rec.t_to = s;
    rec.masked_before = masked_before;
    for (int l = 0; l < length; ++l) {
      const bool was_mask = before[l] == vocab.mask_id();
      const bool is_mask = z[l] == vocab.mask_id();
      if (was_mask && !is_mask) {
        rec.unmasked_positions.push_back(l);
        double best = 0.0;
        for (int v = 0; v < vocab.size; ++v) best = std::max(best, probs[l][v]);
        rec.confidences.push_back(best);
      } else if (!was_mask && is_mask) {
        rec.remasked_positions.push_back(l);
      }
    }
    trace.steps.push_back(std::move(rec));
  }

  if (contains_mask(z, vocab))
    throw NumericError("generate: sampler finished with masked positions remaining");
  return {std::move(z), std::move(trace)};
}

}  // namespace maskdiff
