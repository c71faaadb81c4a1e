#pragma once

// Reverse-mode autodiff on a per-sample tape. Parameters live outside the
// tape (Param / ParamStore); a tape run accumulates their gradients into
// Param::grad via accumulate_param_grads(). Ops are enough for the
// transformer blocks, FPN, bilinear upsampling and the segmentation loss.

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "langseg/tensor.hpp"

namespace langseg::nn {

struct Param {
  std::string name;
  Tensor value;
  Tensor grad;           // same shape, accumulated across samples
  bool backbone = false; // true -> trained at lr * backbone_lr_factor

  void zero_grad() { grad = Tensor::zeros(value.shape()); }
};

// Owns parameters in insertion order (the order defines optimizer and
// checkpoint layout).
class ParamStore {
 public:
  Param& add(std::string name, Tensor init, bool backbone = false);
  Param* find(const std::string& name);
  const std::vector<std::unique_ptr<Param>>& all() const { return params_; }
  std::int64_t total_size() const;
  void zero_grads();

 private:
  std::vector<std::unique_ptr<Param>> params_;
  std::unordered_map<std::string, Param*> by_name_;
};

class Tape {
 public:
  using Ref = int;

  // Leaves.
  Ref constant(Tensor value);
  Ref leaf(Param& p);  // memoized: one node per Param per tape

  // Linear algebra. Shapes are 2-D unless noted.
  Ref matmul(Ref a, Ref b);     // (m,k)x(k,n)
  Ref matmul_nt(Ref a, Ref b);  // (m,k)x(n,k)^T -> (m,n)
  Ref add(Ref a, Ref b);        // same shape
  Ref sub(Ref a, Ref b);
  Ref add_row(Ref a, Ref row);  // (m,n) + (1,n) broadcast
  Ref scale(Ref a, double s);
  Ref add_scalar(Ref a, double c);
  Ref mul(Ref a, Ref b);        // elementwise
  Ref div(Ref a, Ref b);        // elementwise

  // Nonlinearities / normalization.
  Ref softmax_rows(Ref scores, const std::vector<std::uint8_t>* col_mask);
  Ref layernorm(Ref a, Ref gamma, Ref beta, double eps = 1e-5);
  Ref gelu(Ref a);
  Ref sigmoid(Ref a);
  Ref log(Ref a);
  Ref clamp(Ref a, double lo, double hi);

  // Reductions to (1,1).
  Ref sum_all(Ref a);
  Ref mean_all(Ref a);

  // Structure.
  Ref reshape(Ref a, std::vector<int> shape);
  Ref concat_rows(const std::vector<Ref>& parts);
  Ref slice_rows(Ref a, int r0, int r1);
  Ref concat_cols(const std::vector<Ref>& parts);
  Ref slice_cols(Ref a, int c0, int c1);
  Ref embed_rows(Ref table, std::vector<int> ids);

  // Spatial ops on (H*W, C) grids.
  Ref im2col3x3(Ref a, int h, int w);             // -> (H*W, 9C), zero padded
  Ref space_to_depth(Ref a, int h, int w, int p); // -> (H/p*W/p, p*p*C)
  Ref upsample_nearest2x(Ref a, int h, int w);    // -> (2H*2W, C)
  Ref upsample_bilinear(Ref a, int h, int w, int oh, int ow);  // half-pixel centers

  const Tensor& val(Ref r) const { return nodes_[r].value; }
  const Tensor& grad(Ref r) const { return nodes_[r].grad; }

  // Runs reverse pass from `loss` (must be (1,1)); seeds dloss = seed.
  void backward(Ref loss, double seed = 1.0);

  // Adds each leaf gradient, scaled, into its Param::grad.
  void accumulate_param_grads(double scale = 1.0);

  std::size_t node_count() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    std::function<void(Tape&, Node&)> back;  // may be empty
    bool needs_grad = false;
    Param* param = nullptr;
  };

  Ref push(Tensor value, bool needs_grad,
           std::function<void(Tape&, Node&)> back = nullptr);
  Tensor& grad_buf(Ref r);

  std::vector<Node> nodes_;
  std::unordered_map<const Param*, Ref> leaf_memo_;

  friend struct TapeOps;
};

// Fixed 2-D sinusoidal positional embeddings, (H*W, C) with the row half of
// the channels encoding the row coordinate and the column half the column.
Tensor sinusoidal_pos_2d(int h, int w, int channels);

// Central finite-difference gradient check helper. Recomputes `loss_fn`
// (a full forward pass returning the scalar loss) while perturbing up to
// `max_coords` coordinates of `p`; returns the max relative error against
// `analytic` (the already-accumulated Param::grad).
double fd_check_param(Param& p, const Tensor& analytic,
                      const std::function<double()>& loss_fn,
                      int max_coords, std::mt19937_64& rng, double h = 1e-5);

}  // namespace langseg::nn
