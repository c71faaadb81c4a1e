#pragma once

// Small parameterized building blocks on top of the tape: linear layers,
// layer norm, multi-head attention, feed-forward, and a pre-LN transformer
// block. Each block registers its parameters in a ParamStore at construction
// and replays its forward pass on a caller-provided Tape.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "langseg/tape.hpp"

namespace langseg::nn {

// y = x W (+ b). W is (in, out); bias optional and zero-initialized.
class Linear {
 public:
  Linear() = default;
  Linear(ParamStore& ps, const std::string& name, int in, int out,
         bool bias, std::mt19937_64& rng, bool backbone = false);

  Tape::Ref forward(Tape& t, Tape::Ref x) const;
  int in_dim() const { return in_; }
  int out_dim() const { return out_; }
  Param* weight() const { return w_; }
  Param* bias() const { return b_; }

 private:
  Param* w_ = nullptr;
  Param* b_ = nullptr;
  int in_ = 0, out_ = 0;
};

class LayerNorm {
 public:
  LayerNorm() = default;
  LayerNorm(ParamStore& ps, const std::string& name, int dim,
            bool backbone = false);

  Tape::Ref forward(Tape& t, Tape::Ref x) const;
  Param* gamma() const { return gamma_; }
  Param* beta() const { return beta_; }

 private:
  Param* gamma_ = nullptr;
  Param* beta_ = nullptr;
};

// Multi-head scaled dot-product attention. Projections carry no biases so
// degenerate configurations (zeroed value or output projection) collapse the
// block exactly. The output projection is optional: cross-attention blocks
// that read values straight out (concat of per-head readouts) skip it.
class MultiHeadAttention {
 public:
  MultiHeadAttention() = default;
  MultiHeadAttention(ParamStore& ps, const std::string& name, int dim_q,
                     int dim_kv, int dim_model, int heads, bool out_proj,
                     std::mt19937_64& rng, bool backbone = false);

  // q: (nq, dim_q); kv: (nkv, dim_kv); key_mask (optional): nkv flags,
  // nonzero = attend. Returns (nq, dim_model).
  Tape::Ref forward(Tape& t, Tape::Ref q, Tape::Ref kv,
                    const std::vector<std::uint8_t>* key_mask = nullptr) const;

  int heads() const { return heads_; }
  Param* wq() const { return wq_.weight(); }
  Param* wk() const { return wk_.weight(); }
  Param* wv() const { return wv_.weight(); }
  Param* wo() const { return wo_.in_dim() ? wo_.weight() : nullptr; }

 private:
  Linear wq_, wk_, wv_, wo_;
  int heads_ = 0;
  int dim_model_ = 0;
  bool has_out_ = false;
};

// Two-layer MLP with GELU, hidden = mlp_ratio * dim.
class FeedForward {
 public:
  FeedForward() = default;
  FeedForward(ParamStore& ps, const std::string& name, int dim, int mlp_ratio,
              std::mt19937_64& rng, bool backbone = false);

  Tape::Ref forward(Tape& t, Tape::Ref x) const;

 private:
  Linear fc1_, fc2_;
};

// Pre-LN transformer encoder block:
//   x = x + MHSA(LN1(x));  x = x + FFN(LN2(x))
class TransformerBlock {
 public:
  TransformerBlock() = default;
  TransformerBlock(ParamStore& ps, const std::string& name, int dim, int heads,
                   int mlp_ratio, std::mt19937_64& rng, bool backbone = false);

  Tape::Ref forward(Tape& t, Tape::Ref x,
                    const std::vector<std::uint8_t>* key_mask = nullptr) const;

 private:
  LayerNorm ln1_, ln2_;
  MultiHeadAttention attn_;
  FeedForward ffn_;
};

}  // namespace langseg::nn
