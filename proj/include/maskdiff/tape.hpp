#pragma once

#include <cmath>
#include <cstdint>
#include <deque>
#include <functional>
#include <memory>
#include <numbers>
#include <vector>

#include "maskdiff/errors.hpp"
#include "maskdiff/mat.hpp"
#include "maskdiff/rng.hpp"

namespace maskdiff {

// Reverse-mode autodiff over matrix-granular operations. One tape holds the
// computation for a single example; backward() walks the nodes in reverse
// creation order. Parameter leaves accumulate their gradients directly into
// caller-provided buffers, so several tapes can run sequentially against the
// same accumulation buffer.
//
// A tape created with track_grad=false skips gradient storage and backward
// closures entirely; forward values are unchanged.
template <class T>
class Tape {
 public:
  using Id = int;

  explicit Tape(bool track_grad = true) : track_(track_grad) {}

  // ---- leaves ----

  Id input(Mat<T> m) { return make_owned(std::move(m), track_); }

  // Value-only leaf: no gradient flows into it.
  Id constant(Mat<T> m) { return make_owned(std::move(m), false); }

  // External value + external gradient accumulation buffer.
  Id param(const T* v, T* g, int rows, int cols) {
    Node n;
    n.rows = rows;
    n.cols = cols;
    n.v = v;
    n.g = track_ ? g : nullptr;
    nodes_.push_back(std::move(n));
    return static_cast<Id>(nodes_.size() - 1);
  }

  // ---- accessors ----

  int rows(Id id) const { return nodes_[id].rows; }
  int cols(Id id) const { return nodes_[id].cols; }
  const T* val(Id id) const { return nodes_[id].v; }
  T* grad(Id id) { return nodes_[id].g; }

  MatCMap<T> vmap(Id id) const {
    const Node& n = nodes_[id];
    return cmap_of(n.v, n.rows, n.cols);
  }

  Mat<T> value_copy(Id id) const {
    const Node& n = nodes_[id];
    Mat<T> out(n.rows, n.cols);
    std::copy(n.v, n.v + out.size(), out.data());
    return out;
  }

  T scalar(Id id) const {
    check(nodes_[id].rows == 1 && nodes_[id].cols == 1, "scalar: node is not 1x1");
    return nodes_[id].v[0];
  }

  // ---- ops ----

  Id matmul(Id a, Id b) {
    check(cols(a) == rows(b), "matmul: inner dimensions differ");
    Mat<T> out(rows(a), cols(b));
    out.map().noalias() = vmap(a) * vmap(b);
    Id y = make_owned(std::move(out), track_);
    if (track_) {
      nodes_[y].back = [this, a, b, y] {
        auto dy = gmap(y);
        if (T* ga = nodes_[a].g) map_of(ga, rows(a), cols(a)).noalias() += dy * vmap(b).transpose();
        if (T* gb = nodes_[b].g) map_of(gb, rows(b), cols(b)).noalias() += vmap(a).transpose() * dy;
      };
    }
    return y;
  }

  // y = x * w + broadcast bias (bias is 1 x cols(w))
  Id linear(Id x, Id w, Id bias) {
    check(cols(x) == rows(w), "linear: inner dimensions differ");
    check(rows(bias) == 1 && cols(bias) == cols(w), "linear: bias shape");
    Mat<T> out(rows(x), cols(w));
    out.map().noalias() = vmap(x) * vmap(w);
    out.map().rowwise() += vmap(bias).row(0);
    Id y = make_owned(std::move(out), track_);
    if (track_) {
      nodes_[y].back = [this, x, w, bias, y] {
        auto dy = gmap(y);
        if (T* gx = nodes_[x].g) map_of(gx, rows(x), cols(x)).noalias() += dy * vmap(w).transpose();
        if (T* gw = nodes_[w].g) map_of(gw, rows(w), cols(w)).noalias() += vmap(x).transpose() * dy;
        if (T* gb = nodes_[bias].g) map_of(gb, 1, cols(bias)) += dy.colwise().sum();
      };
    }
    return y;
  }

  Id add(Id a, Id b) {
    check(rows(a) == rows(b) && cols(a) == cols(b), "add: shape mismatch");
    Mat<T> out(rows(a), cols(a));
    out.map() = vmap(a) + vmap(b);
    Id y = make_owned(std::move(out), track_);
    if (track_) {
      nodes_[y].back = [this, a, b, y] {
        auto dy = gmap(y);
        if (T* ga = nodes_[a].g) map_of(ga, rows(a), cols(a)) += dy;
        if (T* gb = nodes_[b].g) map_of(gb, rows(b), cols(b)) += dy;
      };
    }
    return y;
  }

  Id concat_cols(Id a, Id b) {
    check(rows(a) == rows(b), "concat_cols: row mismatch");
    Mat<T> out(rows(a), cols(a) + cols(b));
    out.map().leftCols(cols(a)) = vmap(a);
    out.map().rightCols(cols(b)) = vmap(b);
    Id y = make_owned(std::move(out), track_);
    if (track_) {
      nodes_[y].back = [this, a, b, y] {
        auto dy = gmap(y);
        if (T* ga = nodes_[a].g) map_of(ga, rows(a), cols(a)) += dy.leftCols(cols(a));
        if (T* gb = nodes_[b].g) map_of(gb, rows(b), cols(b)) += dy.rightCols(cols(b));
      };
    }
    return y;
  }

  // Gathers rows of a table. Out-of-range indices are a logic error upstream.
  Id embed(Id table, std::vector<int> indices) {
    const int d = cols(table);
    Mat<T> out(static_cast<int>(indices.size()), d);
    for (std::size_t l = 0; l < indices.size(); ++l) {
      check(indices[l] >= 0 && indices[l] < rows(table), "embed: index out of range");
      const T* src = val(table) + std::size_t(indices[l]) * d;
      std::copy(src, src + d, out.data() + l * d);
    }
    Id y = make_owned(std::move(out), track_);
    if (track_) {
      auto idx = std::make_shared<std::vector<int>>(std::move(indices));
      nodes_[y].back = [this, table, y, idx] {
        T* gt = nodes_[table].g;
        if (!gt) return;
        const int d = cols(table);
        const T* gy = nodes_[y].g;
        for (std::size_t l = 0; l < idx->size(); ++l) {
          T* dst = gt + std::size_t((*idx)[l]) * d;
          const T* src = gy + l * d;
          for (int c = 0; c < d; ++c) dst[c] += src[c];
        }
      };
    }
    return y;
  }

  // Replicates a 1 x D row L times.
  Id broadcast_row(Id row, int count) {
    check(rows(row) == 1, "broadcast_row: expected a single row");
    Mat<T> out(count, cols(row));
    out.map().rowwise() = vmap(row).row(0);
    Id y = make_owned(std::move(out), track_);
    if (track_) {
      nodes_[y].back = [this, row, y] {
        if (T* gr = nodes_[row].g) map_of(gr, 1, cols(row)) += gmap(y).colwise().sum();
      };
    }
    return y;
  }

  Id layernorm(Id x, Id gamma, Id beta, T eps = T(1e-5)) {
    const int R = rows(x), C = cols(x);
    check(rows(gamma) == 1 && cols(gamma) == C, "layernorm: gamma shape");
    check(rows(beta) == 1 && cols(beta) == C, "layernorm: beta shape");
    Mat<T> out(R, C);
    auto cache = std::make_shared<Mat<T>>(R, C);  // normalized values
    auto inv_std = std::make_shared<std::vector<T>>(R);
    for (int r = 0; r < R; ++r) {
      const T* xr = val(x) + std::size_t(r) * C;
      T mean = 0;
      for (int c = 0; c < C; ++c) mean += xr[c];
      mean /= C;
      T var = 0;
      for (int c = 0; c < C; ++c) var += (xr[c] - mean) * (xr[c] - mean);
      var /= C;
      T inv = T(1) / std::sqrt(var + eps);
      (*inv_std)[r] = inv;
      for (int c = 0; c < C; ++c) {
        T xh = (xr[c] - mean) * inv;
        (*cache)(r, c) = xh;
        out(r, c) = xh * val(gamma)[c] + val(beta)[c];
      }
    }
    Id y = make_owned(std::move(out), track_);
    if (track_) {
      nodes_[y].back = [this, x, gamma, beta, y, cache, inv_std] {
        const int R = rows(x), C = cols(x);
        const T* gy = nodes_[y].g;
        T* gx = nodes_[x].g;
        T* gg = nodes_[gamma].g;
        T* gb = nodes_[beta].g;
        for (int r = 0; r < R; ++r) {
          const T* dyr = gy + std::size_t(r) * C;
          T sum_dxh = 0, sum_dxh_xh = 0;
          for (int c = 0; c < C; ++c) {
            T dxh = dyr[c] * val(gamma)[c];
            sum_dxh += dxh;
            sum_dxh_xh += dxh * (*cache)(r, c);
          }
          if (gx) {
            T* gxr = gx + std::size_t(r) * C;
            T inv = (*inv_std)[r];
            for (int c = 0; c < C; ++c) {
              T dxh = dyr[c] * val(gamma)[c];
              gxr[c] += inv * (dxh - sum_dxh / C - (*cache)(r, c) * sum_dxh_xh / C);
            }
          }
          if (gg)
            for (int c = 0; c < C; ++c) gg[c] += dyr[c] * (*cache)(r, c);
          if (gb)
            for (int c = 0; c < C; ++c) gb[c] += dyr[c];
        }
      };
    }
    return y;
  }

  Id gelu(Id x) {
    const T k = T(std::sqrt(2.0 / std::numbers::pi));
    const T a = T(0.044715);
    Mat<T> out(rows(x), cols(x));
    for (std::size_t i = 0; i < out.size(); ++i) {
      T xv = val(x)[i];
      out.data()[i] = T(0.5) * xv * (T(1) + std::tanh(k * (xv + a * xv * xv * xv)));
    }
    Id y = make_owned(std::move(out), track_);
    if (track_) {
      nodes_[y].back = [this, x, y, k, a] {
        T* gx = nodes_[x].g;
        if (!gx) return;
        const T* gy = nodes_[y].g;
        for (std::size_t i = 0; i < nodes_[x].rows * std::size_t(nodes_[x].cols); ++i) {
          T xv = val(x)[i];
          T u = k * (xv + a * xv * xv * xv);
          T th = std::tanh(u);
          T d = T(0.5) * (T(1) + th) +
                T(0.5) * xv * (T(1) - th * th) * k * (T(1) + T(3) * a * xv * xv);
          gx[i] += gy[i] * d;
        }
      };
    }
    return y;
  }

  // Multi-head scaled dot-product attention. q: Lq x D, k/v: Lk x D.
  // causal=true masks key positions j > i (requires Lq == Lk).
  Id attention(Id q, Id k, Id v, int heads, bool causal) {
    const int Lq = rows(q), Lk = rows(k), D = cols(q);
    check(cols(k) == D && cols(v) == D, "attention: dim mismatch");
    check(D % heads == 0, "attention: heads must divide width");
    check(!causal || Lq == Lk, "attention: causal mask needs square scores");
    const int dh = D / heads;
    const T inv_sqrt = T(1) / std::sqrt(T(dh));

    Mat<T> out(Lq, D);
    auto attn = std::make_shared<std::vector<Mat<T>>>();
    attn->reserve(heads);
    for (int h = 0; h < heads; ++h) {
      auto Qh = vmap(q).middleCols(h * dh, dh);
      auto Kh = vmap(k).middleCols(h * dh, dh);
      auto Vh = vmap(v).middleCols(h * dh, dh);
      Mat<T> scores(Lq, Lk);
      scores.map().noalias() = Qh * Kh.transpose() * inv_sqrt;
      for (int i = 0; i < Lq; ++i) {
        T* row = scores.data() + std::size_t(i) * Lk;
        if (causal)
          for (int j = i + 1; j < Lk; ++j) row[j] = -std::numeric_limits<T>::infinity();
        T mx = row[0];
        for (int j = 1; j < Lk; ++j) mx = std::max(mx, row[j]);
        T sum = 0;
        for (int j = 0; j < Lk; ++j) {
          row[j] = std::exp(row[j] - mx);
          sum += row[j];
        }
        for (int j = 0; j < Lk; ++j) row[j] /= sum;
      }
      out.map().middleCols(h * dh, dh).noalias() = scores.map() * Vh;
      attn->push_back(std::move(scores));
    }
    Id y = make_owned(std::move(out), track_);
    if (track_) {
      nodes_[y].back = [this, q, k, v, y, heads, dh, inv_sqrt, attn] {
        const int Lq = rows(q), Lk = rows(k);
        auto dy = gmap(y);
        for (int h = 0; h < heads; ++h) {
          auto A = (*attn)[h].map();
          auto dOh = dy.middleCols(h * dh, dh);
          auto Vh = vmap(v).middleCols(h * dh, dh);
          typename Mat<T>::EMatrix dA = dOh * Vh.transpose();
          // dS = A .* (dA - rowsum(dA .* A))
          typename Mat<T>::EMatrix dS(Lq, Lk);
          for (int i = 0; i < Lq; ++i) {
            T dot = A.row(i).cwiseProduct(dA.row(i)).sum();
            dS.row(i) = A.row(i).array() * (dA.row(i).array() - dot);
          }
          if (T* gv = nodes_[v].g)
            map_of(gv, Lk, cols(v)).middleCols(h * dh, dh).noalias() += A.transpose() * dOh;
          if (T* gq = nodes_[q].g)
            map_of(gq, Lq, cols(q)).middleCols(h * dh, dh).noalias() +=
                dS * vmap(k).middleCols(h * dh, dh) * inv_sqrt;
          if (T* gk = nodes_[k].g)
            map_of(gk, Lk, cols(k)).middleCols(h * dh, dh).noalias() +=
                dS.transpose() * vmap(q).middleCols(h * dh, dh) * inv_sqrt;
        }
      };
    }
    return y;
  }

  // Inverted dropout; pass p = 0 (or a null rng) to disable.
  Id dropout(Id x, double p, RandomStream* rng) {
    if (p <= 0.0 || rng == nullptr) return x;
    const T scale = T(1.0 / (1.0 - p));
    auto mask = std::make_shared<std::vector<char>>(rows(x) * std::size_t(cols(x)));
    Mat<T> out(rows(x), cols(x));
    for (std::size_t i = 0; i < out.size(); ++i) {
      bool keep = !rng->bernoulli(p);
      (*mask)[i] = keep;
      out.data()[i] = keep ? val(x)[i] * scale : T(0);
    }
    Id y = make_owned(std::move(out), track_);
    if (track_) {
      nodes_[y].back = [this, x, y, mask, scale] {
        T* gx = nodes_[x].g;
        if (!gx) return;
        const T* gy = nodes_[y].g;
        for (std::size_t i = 0; i < mask->size(); ++i)
          if ((*mask)[i]) gx[i] += gy[i] * scale;
      };
    }
    return y;
  }

  // Straight-through helper: value = x + offset with offset treated as a
  // constant, gradient passes to x unchanged.
  Id st_offset(Id x, const Mat<T>& offset) {
    check(rows(x) == offset.rows && cols(x) == offset.cols, "st_offset: shape mismatch");
    Mat<T> out(rows(x), cols(x));
    out.map() = vmap(x) + offset.map();
    Id y = make_owned(std::move(out), track_);
    if (track_) {
      nodes_[y].back = [this, x, y] {
        if (T* gx = nodes_[x].g) map_of(gx, rows(x), cols(x)) += gmap(y);
      };
    }
    return y;
  }

  // Per-column smooth bound for FSQ scalars: y = (L-1)/2 * tanh(x), with the
  // level count taken per column.
  Id fsq_bound_cols(Id x, std::vector<int> levels) {
    check(static_cast<int>(levels.size()) == cols(x), "fsq_bound_cols: level count mismatch");
    const int R = rows(x), C = cols(x);
    auto tanh_cache = std::make_shared<Mat<T>>(R, C);
    Mat<T> out(R, C);
    for (int r = 0; r < R; ++r)
      for (int c = 0; c < C; ++c) {
        T th = std::tanh(val(x)[std::size_t(r) * C + c]);
        (*tanh_cache)(r, c) = th;
        out(r, c) = T(0.5) * (levels[c] - 1) * th;
      }
    Id y = make_owned(std::move(out), track_);
    if (track_) {
      auto lv = std::make_shared<std::vector<int>>(std::move(levels));
      nodes_[y].back = [this, x, y, tanh_cache, lv] {
        T* gx = nodes_[x].g;
        if (!gx) return;
        const int R = rows(x), C = cols(x);
        const T* gy = nodes_[y].g;
        for (int r = 0; r < R; ++r)
          for (int c = 0; c < C; ++c) {
            T th = (*tanh_cache)(r, c);
            gx[std::size_t(r) * C + c] +=
                gy[std::size_t(r) * C + c] * T(0.5) * ((*lv)[c] - 1) * (T(1) - th * th);
          }
      };
    }
    return y;
  }

  // Mean cross-entropy over the selected rows, softmax restricted to the
  // first active_cols columns. Returns a 1x1 node; scale multiplies the mean.
  // With no selected rows the value is 0 and nothing flows back.
  Id masked_ce(Id logits, std::vector<int> targets, std::vector<char> selected, int active_cols,
               T scale) {
    const int R = rows(logits), C = cols(logits);
    check(static_cast<int>(targets.size()) == R, "masked_ce: targets length");
    check(static_cast<int>(selected.size()) == R, "masked_ce: selected length");
    check(active_cols >= 1 && active_cols <= C, "masked_ce: active_cols out of range");

    auto probs = std::make_shared<Mat<T>>(R, active_cols);
    int nsel = 0;
    T total = 0;
    for (int r = 0; r < R; ++r) {
      if (!selected[r]) continue;
      ++nsel;
      const T* row = val(logits) + std::size_t(r) * C;
      check(targets[r] >= 0 && targets[r] < active_cols, "masked_ce: target outside active cols");
      T mx = row[0];
      for (int c = 1; c < active_cols; ++c) mx = std::max(mx, row[c]);
      T sum = 0;
      for (int c = 0; c < active_cols; ++c) {
        T e = std::exp(row[c] - mx);
        (*probs)(r, c) = e;
        sum += e;
      }
      for (int c = 0; c < active_cols; ++c) (*probs)(r, c) /= sum;
      total += std::log(sum) + mx - row[targets[r]];
    }
    Mat<T> out(1, 1);
    out(0, 0) = nsel > 0 ? scale * total / nsel : T(0);
    Id y = make_owned(std::move(out), track_);
    if (track_ && nsel > 0) {
      auto tgt = std::make_shared<std::vector<int>>(std::move(targets));
      auto sel = std::make_shared<std::vector<char>>(std::move(selected));
      nodes_[y].back = [this, logits, y, probs, tgt, sel, active_cols, scale, nsel] {
        T* gl = nodes_[logits].g;
        if (!gl) return;
        const int R = rows(logits), C = cols(logits);
        const T w = nodes_[y].g[0] * scale / T(nsel);
        for (int r = 0; r < R; ++r) {
          if (!(*sel)[r]) continue;
          T* grow = gl + std::size_t(r) * C;
          for (int c = 0; c < active_cols; ++c)
            grow[c] += w * ((*probs)(r, c) - (c == (*tgt)[r] ? T(1) : T(0)));
        }
      };
    }
    return y;
  }

  // scale * sum((x - target)^2) as a 1x1 node; target is a constant.
  Id mse_const(Id x, Mat<T> target, T scale) {
    check(rows(x) == target.rows && cols(x) == target.cols, "mse_const: shape mismatch");
    T total = 0;
    for (std::size_t i = 0; i < target.size(); ++i) {
      T d = val(x)[i] - target.data()[i];
      total += d * d;
    }
    Mat<T> out(1, 1);
    out(0, 0) = scale * total;
    Id y = make_owned(std::move(out), track_);
    if (track_) {
      auto tgt = std::make_shared<Mat<T>>(std::move(target));
      nodes_[y].back = [this, x, y, tgt, scale] {
        T* gx = nodes_[x].g;
        if (!gx) return;
        const T w = nodes_[y].g[0] * scale;
        for (std::size_t i = 0; i < tgt->size(); ++i)
          gx[i] += w * T(2) * (val(x)[i] - tgt->data()[i]);
      };
    }
    return y;
  }

  // Seeds d(root)/d(root) = seed and propagates to all reachable leaves.
  void backward(Id root, T seed = T(1)) {
    check(track_, "backward: tape built without gradients");
    check(nodes_[root].rows == 1 && nodes_[root].cols == 1, "backward: root must be scalar");
    nodes_[root].g[0] += seed;
    for (Id i = root; i >= 0; --i)
      if (nodes_[i].back) nodes_[i].back();
  }

  std::size_t node_count() const { return nodes_.size(); }

 private:
  struct Node {
    int rows = 0, cols = 0;
    const T* v = nullptr;
    T* g = nullptr;
    Mat<T> vstore, gstore;
    std::function<void()> back;
  };

  static void check(bool ok, const char* msg) {
    if (!ok) throw ShapeError(msg);
  }

  MatMap<T> gmap(Id id) { return map_of(nodes_[id].g, nodes_[id].rows, nodes_[id].cols); }

  Id make_owned(Mat<T> m, bool with_grad) {
    Node n;
    n.rows = m.rows;
    n.cols = m.cols;
    n.vstore = std::move(m);
    n.v = n.vstore.data();
    if (with_grad) {
      n.gstore = Mat<T>(n.rows, n.cols);
      n.g = n.gstore.data();
    }
    nodes_.push_back(std::move(n));
    return static_cast<Id>(nodes_.size() - 1);
  }

  std::deque<Node> nodes_;
  bool track_;
};

}  // namespace maskdiff
