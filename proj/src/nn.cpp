#include "langseg/nn.hpp"

#include <cmath>

namespace langseg::nn {

Linear::Linear(ParamStore& ps, const std::string& name, int in, int out,
               bool bias, std::mt19937_64& rng, bool backbone)
    : in_(in), out_(out) {
  const double stddev = std::sqrt(2.0 / (in + out));
  w_ = &ps.add(name + ".w", Tensor::randn({in, out}, rng, stddev), backbone);
  if (bias) b_ = &ps.add(name + ".b", Tensor::zeros({1, out}), backbone);
}

Tape::Ref Linear::forward(Tape& t, Tape::Ref x) const {
  Tape::Ref y = t.matmul(x, t.leaf(*w_));
  if (b_) y = t.add_row(y, t.leaf(*b_));
  return y;
}

LayerNorm::LayerNorm(ParamStore& ps, const std::string& name, int dim,
                     bool backbone) {
  gamma_ = &ps.add(name + ".gamma", Tensor::full({1, dim}, 1.0), backbone);
  beta_ = &ps.add(name + ".beta", Tensor::zeros({1, dim}), backbone);
}

Tape::Ref LayerNorm::forward(Tape& t, Tape::Ref x) const {
  return t.layernorm(x, t.leaf(*gamma_), t.leaf(*beta_));
}

MultiHeadAttention::MultiHeadAttention(ParamStore& ps, const std::string& name,
                                       int dim_q, int dim_kv, int dim_model,
                                       int heads, bool out_proj,
                                       std::mt19937_64& rng, bool backbone)
    : heads_(heads), dim_model_(dim_model), has_out_(out_proj) {
  if (dim_model % heads != 0)
    throw std::invalid_argument("attention: model dim not divisible by heads");
  wq_ = Linear(ps, name + ".q", dim_q, dim_model, false, rng, backbone);
  wk_ = Linear(ps, name + ".k", dim_kv, dim_model, false, rng, backbone);
  wv_ = Linear(ps, name + ".v", dim_kv, dim_model, false, rng, backbone);
  if (out_proj)
    wo_ = Linear(ps, name + ".o", dim_model, dim_model, false, rng, backbone);
}

Tape::Ref MultiHeadAttention::forward(
    Tape& t, Tape::Ref q, Tape::Ref kv,
    const std::vector<std::uint8_t>* key_mask) const {
  const Tape::Ref Q = wq_.forward(t, q);
  const Tape::Ref K = wk_.forward(t, kv);
  const Tape::Ref V = wv_.forward(t, kv);
  const int d = dim_model_ / heads_;
  const double scale = 1.0 / std::sqrt(static_cast<double>(d));
  std::vector<Tape::Ref> outs;
  outs.reserve(heads_);
  for (int h = 0; h < heads_; ++h) {
    const Tape::Ref qh = t.slice_cols(Q, h * d, (h + 1) * d);
    const Tape::Ref kh = t.slice_cols(K, h * d, (h + 1) * d);
    const Tape::Ref vh = t.slice_cols(V, h * d, (h + 1) * d);
    const Tape::Ref scores = t.scale(t.matmul_nt(qh, kh), scale);
    const Tape::Ref attn = t.softmax_rows(scores, key_mask);
    outs.push_back(t.matmul(attn, vh));
  }
  Tape::Ref out = heads_ == 1 ? outs[0] : t.concat_cols(outs);
  if (has_out_) out = wo_.forward(t, out);
  return out;
}

FeedForward::FeedForward(ParamStore& ps, const std::string& name, int dim,
                         int mlp_ratio, std::mt19937_64& rng, bool backbone) {
  fc1_ = Linear(ps, name + ".fc1", dim, dim * mlp_ratio, true, rng, backbone);
  fc2_ = Linear(ps, name + ".fc2", dim * mlp_ratio, dim, true, rng, backbone);
}

Tape::Ref FeedForward::forward(Tape& t, Tape::Ref x) const {
  return fc2_.forward(t, t.gelu(fc1_.forward(t, x)));
}

TransformerBlock::TransformerBlock(ParamStore& ps, const std::string& name,
                                   int dim, int heads, int mlp_ratio,
                                   std::mt19937_64& rng, bool backbone) {
  ln1_ = LayerNorm(ps, name + ".ln1", dim, backbone);
  attn_ = MultiHeadAttention(ps, name + ".attn", dim, dim, dim, heads, true,
                             rng, backbone);
  ln2_ = LayerNorm(ps, name + ".ln2", dim, backbone);
  ffn_ = FeedForward(ps, name + ".ffn", dim, mlp_ratio, rng, backbone);
}

Tape::Ref TransformerBlock::forward(
    Tape& t, Tape::Ref x, const std::vector<std::uint8_t>* key_mask) const {
  const Tape::Ref n1 = ln1_.forward(t, x);
  x = t.add(x, attn_.forward(t, n1, n1, key_mask));
  return t.add(x, ffn_.forward(t, ln2_.forward(t, x)));
}

}  // namespace langseg::nn
