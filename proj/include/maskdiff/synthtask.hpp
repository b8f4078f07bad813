#pragma once

#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "maskdiff/errors.hpp"
#include "maskdiff/rng.hpp"
#include "maskdiff/samplers.hpp"
#include "maskdiff/types.hpp"

namespace maskdiff {

// Synthetic text-aligned reconstruction task. Each text token draws a latent
// style and a run length; the run expands into target tokens that depend on
// (text token, style, intra-run offset). Without the per-token styles the
// text-to-target mapping is ambiguous by construction, so a decoder can only
// reconstruct the target if the aligned embeddings carry the style/length
// information.

struct TaskParams {
  int text_vocab = 32;
  int target_vocab = 64;  // includes the reserved silence token at target_vocab-1
  int styles_per_token = 8;
  int run_len_min = 2;
  int run_len_max = 6;
  int text_len_min = 4;
  int text_len_max = 8;
  std::uint64_t seed = 0;

  int silence_token() const { return target_vocab - 1; }
  int content_vocab() const { return target_vocab - 1; }

  void validate() const {
    if (text_vocab < 1) throw ConfigError("task: text_vocab must be >= 1");
    if (target_vocab < text_vocab) throw ConfigError("task: target_vocab must be >= text_vocab");
    if (styles_per_token < 1) throw ConfigError("task: styles_per_token must be >= 1");
    if (styles_per_token > content_vocab())
      throw ConfigError("task: styles_per_token exceeds the content alphabet");
    if (run_len_min < 1 || run_len_max < run_len_min)
      throw ConfigError("task: invalid run-length range");
    if (text_len_min < 1 || text_len_max < text_len_min)
      throw ConfigError("task: invalid text-length range");
  }

  int max_target_len() const { return text_len_max * run_len_max; }
};

struct Span {
  int begin = 0;
  int end = 0;  // exclusive
};

struct AlignedExample {
  TokenSeq text;            // over [0, text_vocab)
  std::vector<int> styles;  // one latent style per text token
  TokenSeq target;          // over [0, target_vocab), silence never appears
  std::vector<Span> spans;  // per-text-token target spans, partitioning target
};

namespace detail {

inline std::uint64_t task_hash(int text_tok, int extra, std::uint64_t salt) {
  // fixed public hash; independent of any corpus seed
  std::uint64_t h = 0x7459f1a2c3d4e5f6ULL ^ salt;
  h = splitmix64(h ^ (std::uint64_t(std::uint32_t(text_tok)) << 20));
  h = splitmix64(h ^ std::uint64_t(std::uint32_t(extra)));
  return h;
}

inline int coprime_step(std::uint64_t h, int modulus) {
  // deterministic unit of Z_modulus derived from h
  int start = 1 + static_cast<int>(h % std::uint64_t(modulus - 1));
  for (int k = 0; k < modulus; ++k) {
    int cand = 1 + (start - 1 + k) % (modulus - 1);
    if (std::gcd(cand, modulus) == 1) return cand;
  }
  return 1;
}

}  // namespace detail

// Deterministic target token for (text token, style, intra-run offset).
// Styles map injectively onto content tokens at every (text, offset) pair:
// token = (base + style * step) mod C with step coprime to C, so distinct
// styles never collide and the Bayes error without style information is
// exactly (s-1)/s at style-determined positions.
inline TokenId target_token(const TaskParams& params, int text_tok, int style, int offset) {
  const int C = params.content_vocab();
  if (C < 2) return 0;
  std::uint64_t h_base = detail::task_hash(text_tok, offset, 0x11ULL);
  std::uint64_t h_step = detail::task_hash(text_tok, offset, 0x22ULL);
  int base = static_cast<int>(h_base % std::uint64_t(C));
  int step = detail::coprime_step(h_step, C);
  return static_cast<TokenId>((base + std::int64_t(style) * step) % C);
}

inline AlignedExample gen_example(const TaskParams& params, RandomStream& rng) {
  params.validate();
  AlignedExample ex;
  const int text_len = rng.uniform_int(params.text_len_min, params.text_len_max);
  ex.text.reserve(text_len);
  ex.styles.reserve(text_len);
  ex.spans.reserve(text_len);
  for (int i = 0; i < text_len; ++i) {
    int tok = rng.uniform_int(params.text_vocab);
    int style = rng.uniform_int(params.styles_per_token);
    int run_len = rng.uniform_int(params.run_len_min, params.run_len_max);
    Span span{static_cast<int>(ex.target.size()), static_cast<int>(ex.target.size()) + run_len};
    for (int off = 0; off < run_len; ++off)
      ex.target.push_back(target_token(params, tok, style, off));
    ex.text.push_back(tok);
    ex.styles.push_back(style);
    ex.spans.push_back(span);
  }
  return ex;
}

// Per-example streams derive from (seed, index), so corpora are reproducible
// and generation parallelizes over indices.
inline std::vector<AlignedExample> gen_corpus(const TaskParams& params, int count,
                                              std::uint64_t seed) {
  if (count < 0) throw std::invalid_argument("gen_corpus: count must be >= 0");
  std::vector<AlignedExample> corpus;
  corpus.reserve(count);
  RandomStream base(seed);
  for (int i = 0; i < count; ++i) {
    RandomStream ex_rng = base.split(0x6578ULL, std::uint64_t(i));
    corpus.push_back(gen_example(params, ex_rng));
  }
  return corpus;
}

// Test oracle: emits point mass on the true target at every position, and on
// the silence token beyond the true length, so length-mismatch harnesses stay
// deterministic.
inline Denoiser oracle_denoiser(const AlignedExample& example, const TaskParams& params,
                                const Vocab& vocab) {
  TokenSeq truth = example.target;
  int silence = params.silence_token();
  return [truth, silence, vocab](const TokenSeq& z, double /*t*/) {
    std::vector<ProbRow> rows;
    rows.reserve(z.size());
    for (std::size_t l = 0; l < z.size(); ++l) {
      TokenId tok = l < truth.size() ? truth[l] : TokenId(silence);
      rows.push_back(point_mass(vocab.prob_width(), tok));
    }
    return rows;
  };
}

}  // namespace maskdiff
