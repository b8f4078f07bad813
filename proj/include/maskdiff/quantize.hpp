#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "maskdiff/errors.hpp"
#include "maskdiff/rng.hpp"

namespace maskdiff {

// ============================================================================
// Shared result type
// ============================================================================

struct QuantResult {
  std::vector<double> quantized;  // same dimension as the input
  std::vector<int> codes;         // one index per layer / group
  double commit_loss = 0.0;       // always 0 for FSQ
};

// ============================================================================
// Residual vector quantization
// ============================================================================

// A cascade of codebooks, each quantizing the residual left by the previous
// layers. Codebooks are learned by EMA updates with dead-code reseeding; the
// straight-through contract (gradient of quantized w.r.t. input = identity)
// is enforced by the training tape, not here.
//
// Code 0 of every layer is pinned to the zero vector and excluded from EMA
// updates and reseeding. Nearest-neighbor search can then always fall back to
// a no-op, which makes the residual norm non-increasing across layers for any
// input.
struct RvqState {
  int num_layers = 4;
  int codebook_size = 512;
  int dim = 256;
  double commitment_weight = 0.25;
  int dead_code_window = 32;  // updates without assignment before reseed

  // codebooks[layer] is codebook_size x dim, row-major.
  std::vector<std::vector<double>> codebooks;
  std::vector<std::vector<double>> ema_counts;          // per layer, per code
  std::vector<std::vector<double>> ema_sums;            // per layer, code x dim
  std::vector<std::vector<int>> updates_since_assigned; // per layer, per code

  static RvqState init(int num_layers, int codebook_size, int dim, RandomStream& rng,
                       double commitment_weight = 0.25, double init_scale = 0.5) {
    RvqState s;
    s.num_layers = num_layers;
    s.codebook_size = codebook_size;
    s.dim = dim;
    s.commitment_weight = commitment_weight;
    s.codebooks.assign(num_layers, std::vector<double>(std::size_t(codebook_size) * dim));
    s.ema_counts.assign(num_layers, std::vector<double>(codebook_size, 1.0));
    s.ema_sums.assign(num_layers, std::vector<double>(std::size_t(codebook_size) * dim));
    s.updates_since_assigned.assign(num_layers, std::vector<int>(codebook_size, 0));
    for (int l = 0; l < num_layers; ++l) {
      // later layers quantize smaller residuals; shrink their spread
      double scale = init_scale / (1 << l);
      for (auto& c : s.codebooks[l]) c = rng.normal(0.0, scale);
      for (int j = 0; j < dim; ++j) s.codebooks[l][j] = 0.0;  // pinned zero code
      for (std::size_t i = 0; i < s.ema_sums[l].size(); ++i)
        s.ema_sums[l][i] = s.codebooks[l][i];  // consistent with counts = 1
    }
    return s;
  }

  std::span<const double> code(int layer, int index) const {
    return {codebooks[layer].data() + std::size_t(index) * dim, std::size_t(dim)};
  }
};

namespace detail {

inline int nearest_code(std::span<const double> v, const std::vector<double>& codebook, int dim,
                        int codebook_size) {
  int best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (int c = 0; c < codebook_size; ++c) {
    const double* row = codebook.data() + std::size_t(c) * dim;
    double d = 0.0;
    for (int j = 0; j < dim; ++j) {
      double diff = v[j] - row[j];
      d += diff * diff;
    }
    if (d < best_d) {  // ties stay on the lowest index
      best_d = d;
      best = c;
    }
  }
  return best;
}

}  // namespace detail

// Greedy residual encode: layer l quantizes the residual left by layers < l
// by nearest neighbor; quantized = sum of the selected code vectors.
inline QuantResult rvq_encode(std::span<const double> v, const RvqState& state) {
  if (static_cast<int>(v.size()) != state.dim)
    throw ShapeError("rvq_encode: input dim " + std::to_string(v.size()) + " != codebook dim " +
                     std::to_string(state.dim));
  QuantResult r;
  r.quantized.assign(state.dim, 0.0);
  std::vector<double> residual(v.begin(), v.end());
  for (int l = 0; l < state.num_layers; ++l) {
    int c = detail::nearest_code(residual, state.codebooks[l], state.dim, state.codebook_size);
    r.codes.push_back(c);
    auto code = state.code(l, c);
    for (int j = 0; j < state.dim; ++j) {
      r.quantized[j] += code[j];
      residual[j] -= code[j];
    }
  }
  double err = 0.0;
  for (int j = 0; j < state.dim; ++j) {
    double diff = v[j] - r.quantized[j];
    err += diff * diff;
  }
  r.commit_loss = state.commitment_weight * err;
  return r;
}

// Sum of the indexed code vectors; exact inverse of the codes produced by
// rvq_encode.
inline std::vector<double> rvq_decode(const std::vector<int>& codes, const RvqState& state) {
  if (static_cast<int>(codes.size()) != state.num_layers)
    throw std::invalid_argument("rvq_decode: expected one code per layer");
  std::vector<double> out(state.dim, 0.0);
  for (int l = 0; l < state.num_layers; ++l) {
    if (codes[l] < 0 || codes[l] >= state.codebook_size)
      throw std::out_of_range("rvq_decode: code index out of range");
    auto code = state.code(l, codes[l]);
    for (int j = 0; j < state.dim; ++j) out[j] += code[j];
  }
  return out;
}

struct RvqAssignment {
  int layer = 0;
  int code = 0;
  std::vector<double> residual;  // the vector the code was chosen for
};

// EMA codebook update. Code vectors track ema_sums / max(ema_counts, eps);
// codes that received no assignment for dead_code_window consecutive updates
// are reseeded from random batch residuals.
inline void rvq_ema_update(RvqState& state, const std::vector<RvqAssignment>& batch, double decay,
                           RandomStream& rng) {
  if (!(decay > 0.0 && decay < 1.0))
    throw std::invalid_argument("rvq_ema_update: decay must lie in (0,1)");
  if (batch.empty()) return;

  for (int l = 0; l < state.num_layers; ++l) {
    std::vector<double> counts(state.codebook_size, 0.0);
    std::vector<double> sums(std::size_t(state.codebook_size) * state.dim, 0.0);
    std::vector<const RvqAssignment*> layer_batch;
    for (const auto& a : batch) {
      if (a.layer != l) continue;
      if (static_cast<int>(a.residual.size()) != state.dim)
        throw ShapeError("rvq_ema_update: residual dim mismatch");
      layer_batch.push_back(&a);
      counts[a.code] += 1.0;
      double* dst = sums.data() + std::size_t(a.code) * state.dim;
      for (int j = 0; j < state.dim; ++j) dst[j] += a.residual[j];
    }
    if (layer_batch.empty()) continue;

    for (int c = 1; c < state.codebook_size; ++c) {  // code 0 stays pinned at zero
      state.ema_counts[l][c] = decay * state.ema_counts[l][c] + (1.0 - decay) * counts[c];
      double* sum_row = state.ema_sums[l].data() + std::size_t(c) * state.dim;
      const double* batch_row = sums.data() + std::size_t(c) * state.dim;
      for (int j = 0; j < state.dim; ++j)
        sum_row[j] = decay * sum_row[j] + (1.0 - decay) * batch_row[j];

      if (counts[c] > 0.0) {
        state.updates_since_assigned[l][c] = 0;
      } else if (++state.updates_since_assigned[l][c] >= state.dead_code_window) {
        // reseed from a random residual of this batch
        const auto& a = *layer_batch[rng.uniform_int(static_cast<int>(layer_batch.size()))];
        double* code_row = state.codebooks[l].data() + std::size_t(c) * state.dim;
        for (int j = 0; j < state.dim; ++j) {
          code_row[j] = a.residual[j];
          sum_row[j] = a.residual[j];
        }
        state.ema_counts[l][c] = 1.0;
        state.updates_since_assigned[l][c] = 0;
        continue;
      }

      double denom = std::max(state.ema_counts[l][c], 1e-8);
      double* code_row = state.codebooks[l].data() + std::size_t(c) * state.dim;
      for (int j = 0; j < state.dim; ++j) code_row[j] = sum_row[j] / denom;
    }
  }
}

// ============================================================================
// Finite scalar quantization
// ============================================================================

// Lattice math for one scalar with L levels. The bound squashes to half-range
// (L-1)/2; even level counts shift the lattice onto half-integers so it stays
// symmetric around zero.
inline double fsq_bound(double x, int levels) {
  return 0.5 * (levels - 1) * std::tanh(x);
}

inline double fsq_bound_grad(double x, int levels) {
  double th = std::tanh(x);
  return 0.5 * (levels - 1) * (1.0 - th * th);
}

inline double fsq_round_lattice(double bounded, int levels) {
  if (levels % 2 == 1) return std::round(bounded);
  return std::round(bounded - 0.5) + 0.5;
}

inline int fsq_digit(double lattice_point, int levels) {
  return static_cast<int>(std::lround(lattice_point + 0.5 * (levels - 1)));
}

inline double fsq_lattice_from_digit(int digit, int levels) {
  return digit - 0.5 * (levels - 1);
}

// Mixed-radix little-endian code packing; bijective with fsq_code_digits.
inline int fsq_code_index(const std::vector<int>& digits, const std::vector<int>& levels) {
  if (digits.size() != levels.size())
    throw std::invalid_argument("fsq_code_index: digits/levels length mismatch");
  int idx = 0;
  int radix = 1;
  for (std::size_t i = 0; i < digits.size(); ++i) {
    if (digits[i] < 0 || digits[i] >= levels[i])
      throw std::out_of_range("fsq_code_index: digit out of range");
    idx += digits[i] * radix;
    radix *= levels[i];
  }
  return idx;
}

inline std::vector<int> fsq_code_digits(int index, const std::vector<int>& levels) {
  int total = 1;
  for (int l : levels) total *= l;
  if (index < 0 || index >= total) throw std::out_of_range("fsq_code_digits: index out of range");
  std::vector<int> digits(levels.size());
  for (std::size_t i = 0; i < levels.size(); ++i) {
    digits[i] = index % levels[i];
    index /= levels[i];
  }
  return digits;
}

// FSQ over grouped scalar dimensions. Each group packs its digits into one
// code, so a group with levels (8,8,8) carries 9 bits, matching one RVQ layer
// of 512 codes. The input/output projections that map between the embedding
// dimension and the scalar dimensions live with the model parameters; this
// state only fixes the lattice geometry.
struct FsqState {
  std::vector<std::vector<int>> groups;  // levels per scalar, per group

  static FsqState with_groups(int num_groups, std::vector<int> levels_per_group = {8, 8, 8}) {
    FsqState s;
    for (int g = 0; g < num_groups; ++g) s.groups.push_back(levels_per_group);
    s.validate();
    return s;
  }

  void validate() const {
    if (groups.empty()) throw ConfigError("fsq: needs at least one group");
    for (const auto& g : groups) {
      if (g.empty()) throw ConfigError("fsq: empty level vector");
      for (int l : g)
        if (l < 2) throw ConfigError("fsq: every level count must be >= 2");
    }
  }

  int total_scalar_dims() const {
    int n = 0;
    for (const auto& g : groups) n += static_cast<int>(g.size());
    return n;
  }

  int codes_per_group(int g) const {
    int n = 1;
    for (int l : groups[g]) n *= l;
    return n;
  }

  // Flat list of level counts across all groups, in scalar order.
  std::vector<int> flat_levels() const {
    std::vector<int> flat;
    for (const auto& g : groups) flat.insert(flat.end(), g.begin(), g.end());
    return flat;
  }
};

// Quantizes a vector already living in the scalar dimensions (one entry per
// scalar). Returns the lattice points plus one packed code per group.
// commit_loss is identically 0 for FSQ.
inline QuantResult fsq_quantize(std::span<const double> scalars, const FsqState& state) {
  if (static_cast<int>(scalars.size()) != state.total_scalar_dims())
    throw ShapeError("fsq_quantize: expected " + std::to_string(state.total_scalar_dims()) +
                     " scalar dims, got " + std::to_string(scalars.size()));
  QuantResult r;
  r.quantized.reserve(scalars.size());
  std::size_t s = 0;
  for (const auto& levels : state.groups) {
    std::vector<int> digits;
    digits.reserve(levels.size());
    for (int L : levels) {
      double b = fsq_bound(scalars[s++], L);
      double q = fsq_round_lattice(b, L);
      r.quantized.push_back(q);
      digits.push_back(fsq_digit(q, L));
    }
    r.codes.push_back(fsq_code_index(digits, levels));
  }
  r.commit_loss = 0.0;
  return r;
}

// Lattice points for a list of group codes; exact inverse of fsq_quantize's
// codes.
inline std::vector<double> fsq_decode(const std::vector<int>& codes, const FsqState& state) {
  if (codes.size() != state.groups.size())
    throw std::invalid_argument("fsq_decode: expected one code per group");
  std::vector<double> out;
  for (std::size_t g = 0; g < codes.size(); ++g) {
    auto digits = fsq_code_digits(codes[g], state.groups[g]);
    for (std::size_t i = 0; i < digits.size(); ++i)
      out.push_back(fsq_lattice_from_digit(digits[i], state.groups[g][i]));
  }
  return out;
}

// ============================================================================
// Bitrate bookkeeping
// ============================================================================

inline double bitrate(int layers, int codes_per_layer, double tokens_per_second) {
  if (!(tokens_per_second > 0.0)) throw std::invalid_argument("bitrate: rate must be positive");
  if (layers < 0) throw std::invalid_argument("bitrate: layers must be >= 0");
  if (layers == 0) return 0.0;
  return layers * std::log2(static_cast<double>(codes_per_layer)) * tokens_per_second;
}

}  // namespace maskdiff
