#pragma once

// The segmentation network: hierarchical vision encoder, language-guided
// pre-fusion at the three coarsest scales, a two-stream decoder (vision path
// with word cross-attention + FPN fusion to stride 4; language path building
// a content-aware prompt), and the similarity response map that becomes the
// output mask.

#include <array>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "langseg/image.hpp"
#include "langseg/nn.hpp"
#include "langseg/tape.hpp"
#include "langseg/text.hpp"
#include "langseg/util.hpp"

namespace langseg {

// Image pixels as a (H*W, 3) tensor scaled to [0,1].
nn::Tensor image_to_tensor(const Image& img);

struct ModelConfig {
  int image_size = 64;  // square input, divisible by 32
  int patch = 4;        // stage-1 patch embedding
  std::array<int, 4> vision_dims = {32, 64, 128, 256};
  int stage_depth = 1;  // transformer blocks per vision stage
  int text_dim = 64;
  int text_layers = 2;
  int max_len = 20;
  int joint_dim = 64;  // shared fusion/decoder channel dim C
  int heads = 4;
  int decoder_depth = 1;  // vision-path blocks per scale
  bool mean_pool_sentence = false;
  bool learned_scale = false;  // learnable similarity temperature
  std::string vocab_path;     // empty = built-in grammar vocabulary

  static ModelConfig from_config(const Config& c);
  Config to_config() const;
  std::string hash() const { return to_config().hash(); }
};

// Four feature levels at strides 4/8/16/32.
struct PyramidFeatures {
  std::array<nn::Tape::Ref, 4> level;
  std::array<int, 4> h, w, c;
};

// Patch embedding + per-stage full-attention blocks with patch-merging
// downsampling between stages. Every parameter is flagged `backbone`
// (trained at a reduced learning rate). Stage 1 adds fixed 2-D sinusoidal
// positions; deeper stages inherit position information through merging.
class VisionEncoder {
 public:
  VisionEncoder(nn::ParamStore& ps, const ModelConfig& cfg,
                std::mt19937_64& rng);

  PyramidFeatures encode(nn::Tape& t, const Image& img) const;
  // Batch = independent per-sample passes on the same tape; outputs are
  // independent of batch composition by construction.
  std::vector<PyramidFeatures> encode_batch(nn::Tape& t,
                                            const std::vector<Image>& imgs) const;

 private:
  ModelConfig cfg_;
  nn::Linear patch_embed_;
  std::vector<std::vector<nn::TransformerBlock>> stages_;
  std::vector<nn::LayerNorm> merge_ln_;
  std::vector<nn::Linear> merge_proj_;
};

// Language-guided activation of one vision scale: residual visual
// projection plus multi-head cross-attention (visual queries, word
// keys/values, no output projection so a singleton token's readout is
// exactly its value projection).
class Prefusion {
 public:
  Prefusion() = default;
  Prefusion(nn::ParamStore& ps, const std::string& name, int c_in, int c_t,
            int c, int heads, std::mt19937_64& rng);

  nn::Tape::Ref apply(nn::Tape& t, nn::Tape::Ref f_v, nn::Tape::Ref f_w,
                      const std::vector<std::uint8_t>* word_mask) const;

  const nn::Linear& visual_proj() const { return p_v_; }
  const nn::MultiHeadAttention& attention() const { return attn_; }

 private:
  nn::Linear p_v_;
  nn::MultiHeadAttention attn_;
};

// One decoder block of the vision path at one scale:
//   flatten + fixed sinusoidal positions; append projected word tokens;
//   joint self-attention; keep the vision tokens; LN + residual to the
//   block input; then cross-attention to the raw word embeddings with a
//   post-LN residual. No feed-forward sublayer.
class VisionPathBlock {
 public:
  VisionPathBlock() = default;
  VisionPathBlock(nn::ParamStore& ps, const std::string& name, int c, int c_t,
                  int heads, std::mt19937_64& rng);

  nn::Tape::Ref apply(nn::Tape& t, nn::Tape::Ref f_c, int h, int w,
                      const nn::Linear& word_proj, nn::Tape::Ref f_w,
                      const std::vector<std::uint8_t>* word_mask) const;

  const nn::MultiHeadAttention& self_attention() const { return self_attn_; }
  const nn::LayerNorm& self_ln() const { return ln_self_; }
  const nn::MultiHeadAttention& cross_attention() const { return cross_attn_; }
  const nn::LayerNorm& cross_ln() const { return ln_cross_; }

 private:
  nn::MultiHeadAttention self_attn_;
  nn::LayerNorm ln_self_;
  nn::MultiHeadAttention cross_attn_;
  nn::LayerNorm ln_cross_;
};

// Top-down fusion of the decoded levels (strides 8/16/32) plus the raw
// stride-4 encoder level into a single stride-4 grid. Entirely linear:
// lateral projections, nearest x2 upsampling, additive merges, and a 3x3
// smoothing convolution (im2col + linear, no bias) after each merge.
class FpnFuse {
 public:
  FpnFuse() = default;
  FpnFuse(nn::ParamStore& ps, int c, int c_v1, std::mt19937_64& rng);

  nn::Tape::Ref apply(nn::Tape& t, nn::Tape::Ref fb2, int h2, int w2,
                      nn::Tape::Ref fb3, int h3, int w3, nn::Tape::Ref fb4,
                      int h4, int w4, nn::Tape::Ref fv1, int h1, int w1) const;

 private:
  nn::Linear lat4_, lat3_, lat1_;
  nn::Linear smooth3_, smooth2_, smooth1_;
};

// Language path: projected sentence embedding cross-attends the activated
// coarsest visual tokens (no output projection), then a 2-token post-LN
// self-attention integrates the initial and content-aware prompts; the
// updated content-aware token is the output.
class LanguagePath {
 public:
  LanguagePath() = default;
  LanguagePath(nn::ParamStore& ps, int c, int c_t, int heads,
               std::mt19937_64& rng);

  nn::Tape::Ref apply(nn::Tape& t, nn::Tape::Ref f_s, nn::Tape::Ref f_c4) const;

  const nn::Linear& sentence_proj() const { return proj_; }
  const nn::MultiHeadAttention& cross_attention() const { return cross_; }

 private:
  nn::Linear proj_;
  nn::MultiHeadAttention cross_;
  nn::MultiHeadAttention self_attn_;
  nn::LayerNorm ln_;
};

// Similarity response: logits = <fused, prompt> * scale at stride 4 (scale
// is a (1,1) node, normally the constant 1/sqrt(C)), bilinearly upsampled to
// the image size, squashed by sigmoid.
struct ResponseOut {
  nn::Tape::Ref logits;  // (h4*w4, 1)
  nn::Tape::Ref prob;    // (img_h*img_w, 1)
};
ResponseOut response_map(nn::Tape& t, nn::Tape::Ref fused, int h4, int w4,
                         nn::Tape::Ref prompt, int img_h, int img_w,
                         nn::Tape::Ref scale);

// Binarization rule: strict prob > 0.5; exact ties are background.
Mask mask_from_prob(const nn::Tensor& prob, int h, int w);

class UniModel {
 public:
  UniModel(const ModelConfig& cfg, std::uint64_t seed);

  struct Forward {
    nn::Tape::Ref logits;
    nn::Tape::Ref prob;
  };
  Forward forward(nn::Tape& t, const Image& img, const TokenSeq& seq) const;
  Forward forward(nn::Tape& t, const Image& img, const std::string& caption) const;

  Mask predict(const Image& img, const std::string& caption) const;

  nn::ParamStore& params() { return params_; }
  const nn::ParamStore& params() const { return params_; }
  const ModelConfig& config() const { return cfg_; }
  const Vocabulary& vocab() const { return vocab_; }
  const VisionEncoder& vision() const { return *vision_; }
  const TextEncoder& text() const { return *text_; }
  const Prefusion& prefusion(int scale) const { return prefuse_.at(scale - 2); }
  const VisionPathBlock& decoder_block(int scale, int depth_idx) const {
    return dec_.at(scale - 2).at(depth_idx);
  }
  const LanguagePath& language_path() const { return lang_; }

 private:
  ModelConfig cfg_;
  Vocabulary vocab_;
  nn::ParamStore params_;
  std::unique_ptr<VisionEncoder> vision_;
  std::unique_ptr<TextEncoder> text_;
  std::array<Prefusion, 3> prefuse_;          // scales 2..4
  nn::Linear word_proj_;                      // shared across decoder scales
  std::vector<std::vector<VisionPathBlock>> dec_;  // [scale][depth]
  FpnFuse fpn_;
  LanguagePath lang_;
  nn::Param* sim_scale_ = nullptr;  // present iff learned_scale
};

}  // namespace langseg
