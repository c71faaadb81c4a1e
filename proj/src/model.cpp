#include "langseg/model.hpp"

#include <cmath>
#include <stdexcept>

namespace langseg {

using nn::Tape;
using nn::Tensor;

nn::Tensor image_to_tensor(const Image& img) {
  Tensor t({img.h * img.w, 3});
  for (int r = 0; r < img.h; ++r)
    for (int c = 0; c < img.w; ++c)
      for (int ch = 0; ch < 3; ++ch)
        t.at(r * img.w + c, ch) = img.at(r, c, ch) / 255.0;
  return t;
}

ModelConfig ModelConfig::from_config(const Config& c) {
  ModelConfig m;
  m.image_size = static_cast<int>(c.get_int("image_size", m.image_size));
  m.patch = static_cast<int>(c.get_int("patch", m.patch));
  for (int i = 0; i < 4; ++i)
    m.vision_dims[i] = static_cast<int>(c.get_int(
        "vision_c" + std::to_string(i + 1), m.vision_dims[i]));
  m.stage_depth = static_cast<int>(c.get_int("stage_depth", m.stage_depth));
  m.text_dim = static_cast<int>(c.get_int("text_dim", m.text_dim));
  m.text_layers = static_cast<int>(c.get_int("text_layers", m.text_layers));
  m.max_len = static_cast<int>(c.get_int("max_len", m.max_len));
  m.joint_dim = static_cast<int>(c.get_int("joint_dim", m.joint_dim));
  m.heads = static_cast<int>(c.get_int("heads", m.heads));
  m.decoder_depth = static_cast<int>(c.get_int("decoder_depth", m.decoder_depth));
  m.mean_pool_sentence = c.get_bool("mean_pool_sentence", m.mean_pool_sentence);
  m.learned_scale = c.get_bool("learned_scale", m.learned_scale);
  m.vocab_path = c.get_str("vocab_path", m.vocab_path);
  return m;
}

Config ModelConfig::to_config() const {
  Config c;
  c.set("image_size", std::to_string(image_size));
  c.set("patch", std::to_string(patch));
  for (int i = 0; i < 4; ++i)
    c.set("vision_c" + std::to_string(i + 1), std::to_string(vision_dims[i]));
  c.set("stage_depth", std::to_string(stage_depth));
  c.set("text_dim", std::to_string(text_dim));
  c.set("text_layers", std::to_string(text_layers));
  c.set("max_len", std::to_string(max_len));
  c.set("joint_dim", std::to_string(joint_dim));
  c.set("heads", std::to_string(heads));
  c.set("decoder_depth", std::to_string(decoder_depth));
  c.set("mean_pool_sentence", mean_pool_sentence ? "1" : "0");
  c.set("learned_scale", learned_scale ? "1" : "0");
  c.set("vocab_path", vocab_path);
  return c;
}

VisionEncoder::VisionEncoder(nn::ParamStore& ps, const ModelConfig& cfg,
                             std::mt19937_64& rng)
    : cfg_(cfg) {
  const int in = cfg.patch * cfg.patch * 3;
  patch_embed_ = nn::Linear(ps, "vision.patch_embed", in, cfg.vision_dims[0],
                            /*bias=*/true, rng, /*backbone=*/true);
  stages_.resize(4);
  for (int s = 0; s < 4; ++s)
    for (int d = 0; d < cfg.stage_depth; ++d)
      stages_[s].emplace_back(ps,
                              "vision.s" + std::to_string(s + 1) + ".b" +
                                  std::to_string(d),
                              cfg.vision_dims[s], cfg.heads, 4, rng,
                              /*backbone=*/true);
  for (int s = 0; s < 3; ++s) {
    const int cin = 4 * cfg.vision_dims[s];
    merge_ln_.emplace_back(ps, "vision.merge" + std::to_string(s + 1) + ".ln",
                           cin, /*backbone=*/true);
    merge_proj_.emplace_back(ps,
                             "vision.merge" + std::to_string(s + 1) + ".proj",
                             cin, cfg.vision_dims[s + 1], /*bias=*/false, rng,
                             /*backbone=*/true);
  }
}

PyramidFeatures VisionEncoder::encode(Tape& t, const Image& img) const {
  if (img.h % 32 != 0 || img.w % 32 != 0)
    throw std::invalid_argument("image dims must be divisible by 32");
  PyramidFeatures out;
  int h = img.h / cfg_.patch, w = img.w / cfg_.patch;
  auto x = t.space_to_depth(t.constant(image_to_tensor(img)), img.h, img.w,
                            cfg_.patch);
  x = patch_embed_.forward(t, x);
  x = t.add(x, t.constant(nn::sinusoidal_pos_2d(h, w, cfg_.vision_dims[0])));
  for (int s = 0; s < 4; ++s) {
    if (s > 0) {
      x = t.space_to_depth(x, h, w, 2);
      h /= 2;
      w /= 2;
      x = merge_proj_[s - 1].forward(t, merge_ln_[s - 1].forward(t, x));
    }
    for (const auto& b : stages_[s]) x = b.forward(t, x);
    out.level[s] = x;
    out.h[s] = h;
    out.w[s] = w;
    out.c[s] = cfg_.vision_dims[s];
  }
  return out;
}

std::vector<PyramidFeatures> VisionEncoder::encode_batch(
    Tape& t, const std::vector<Image>& imgs) const {
  std::vector<PyramidFeatures> out;
  out.reserve(imgs.size());
  for (const Image& img : imgs) out.push_back(encode(t, img));
  return out;
}

Prefusion::Prefusion(nn::ParamStore& ps, const std::string& name, int c_in,
                     int c_t, int c, int heads, std::mt19937_64& rng) {
  p_v_ = nn::Linear(ps, name + ".p_v", c_in, c, /*bias=*/false, rng);
  attn_ = nn::MultiHeadAttention(ps, name + ".attn", c_in, c_t, c, heads,
                                 /*out_proj=*/false, rng);
}

Tape::Ref Prefusion::apply(Tape& t, Tape::Ref f_v, Tape::Ref f_w,
                           const std::vector<std::uint8_t>* word_mask) const {
  return t.add(p_v_.forward(t, f_v), attn_.forward(t, f_v, f_w, word_mask));
}

VisionPathBlock::VisionPathBlock(nn::ParamStore& ps, const std::string& name,
                                 int c, int c_t, int heads,
                                 std::mt19937_64& rng) {
  self_attn_ = nn::MultiHeadAttention(ps, name + ".self", c, c, c, heads,
                                      /*out_proj=*/true, rng);
  ln_self_ = nn::LayerNorm(ps, name + ".ln_self", c);
  cross_attn_ = nn::MultiHeadAttention(ps, name + ".cross", c, c_t, c, heads,
                                       /*out_proj=*/true, rng);
  ln_cross_ = nn::LayerNorm(ps, name + ".ln_cross", c);
}

Tape::Ref VisionPathBlock::apply(Tape& t, Tape::Ref f_c, int h, int w,
                                 const nn::Linear& word_proj, Tape::Ref f_w,
                                 const std::vector<std::uint8_t>* word_mask) const {
  const int n = h * w;
  const int c = t.val(f_c).cols();
  auto x = t.add(f_c, t.constant(nn::sinusoidal_pos_2d(h, w, c)));
  auto words = word_proj.forward(t, f_w);
  auto seq = t.concat_rows({x, words});

  std::vector<std::uint8_t> joint_mask(t.val(seq).rows(), 1);
  if (word_mask)
    for (std::size_t i = 0; i < word_mask->size(); ++i)
      joint_mask[n + i] = (*word_mask)[i];

  auto attended = self_attn_.forward(t, seq, seq, &joint_mask);
  auto f_b = t.add(ln_self_.forward(t, t.slice_rows(attended, 0, n)), f_c);
  auto cross = cross_attn_.forward(t, f_b, f_w, word_mask);
  return ln_cross_.forward(t, t.add(f_b, cross));
}

FpnFuse::FpnFuse(nn::ParamStore& ps, int c, int c_v1, std::mt19937_64& rng) {
  lat4_ = nn::Linear(ps, "fpn.lat4", c, c, /*bias=*/false, rng);
  lat3_ = nn::Linear(ps, "fpn.lat3", c, c, /*bias=*/false, rng);
  lat1_ = nn::Linear(ps, "fpn.lat1", c_v1, c, /*bias=*/false, rng);
  smooth3_ = nn::Linear(ps, "fpn.smooth3", 9 * c, c, /*bias=*/false, rng);
  smooth2_ = nn::Linear(ps, "fpn.smooth2", 9 * c, c, /*bias=*/false, rng);
  smooth1_ = nn::Linear(ps, "fpn.smooth1", 9 * c, c, /*bias=*/false, rng);
}

Tape::Ref FpnFuse::apply(Tape& t, Tape::Ref fb2, int h2, int w2, Tape::Ref fb3,
                         int h3, int w3, Tape::Ref fb4, int h4, int w4,
                         Tape::Ref fv1, int h1, int w1) const {
  auto top = t.upsample_nearest2x(lat4_.forward(t, fb4), h4, w4);
  auto m3 = t.add(top, lat3_.forward(t, fb3));
  auto s3 = smooth3_.forward(t, t.im2col3x3(m3, h3, w3));
  auto m2 = t.add(t.upsample_nearest2x(s3, h3, w3), fb2);
  auto s2 = smooth2_.forward(t, t.im2col3x3(m2, h2, w2));
  auto m1 = t.add(t.upsample_nearest2x(s2, h2, w2), lat1_.forward(t, fv1));
  return smooth1_.forward(t, t.im2col3x3(m1, h1, w1));
}

LanguagePath::LanguagePath(nn::ParamStore& ps, int c, int c_t, int heads,
                           std::mt19937_64& rng) {
  proj_ = nn::Linear(ps, "lang.proj", c_t, c, /*bias=*/false, rng);
  cross_ = nn::MultiHeadAttention(ps, "lang.cross", c, c, c, heads,
                                  /*out_proj=*/false, rng);
  self_attn_ = nn::MultiHeadAttention(ps, "lang.self", c, c, c, heads,
                                      /*out_proj=*/true, rng);
  ln_ = nn::LayerNorm(ps, "lang.ln", c);
}

Tape::Ref LanguagePath::apply(Tape& t, Tape::Ref f_s, Tape::Ref f_c4) const {
  auto q = proj_.forward(t, f_s);
  auto readout = cross_.forward(t, q, f_c4);
  auto seq = t.concat_rows({q, readout});
  auto out = ln_.forward(t, t.add(seq, self_attn_.forward(t, seq, seq)));
  return t.slice_rows(out, 1, 2);
}

UniModel::UniModel(const ModelConfig& cfg, std::uint64_t seed)
    : cfg_(cfg),
      vocab_(cfg.vocab_path.empty() ? Vocabulary()
                                    : Vocabulary::from_file(cfg.vocab_path)) {
  std::mt19937_64 rng(seed);
  vision_ = std::make_unique<VisionEncoder>(params_, cfg, rng);

  TextEncoderConfig tc;
  tc.c_t = cfg.text_dim;
  tc.heads = cfg.heads;
  tc.layers = cfg.text_layers;
  tc.max_len = cfg.max_len;
  tc.mean_pool = cfg.mean_pool_sentence;
  text_ = std::make_unique<TextEncoder>(params_, vocab_, tc, rng);

  for (int i = 0; i < 3; ++i)
    prefuse_[i] =
        Prefusion(params_, "prefuse" + std::to_string(i + 2),
                  cfg.vision_dims[i + 1], cfg.text_dim, cfg.joint_dim,
                  cfg.heads, rng);
  word_proj_ = nn::Linear(params_, "dec.word_proj", cfg.text_dim,
                          cfg.joint_dim, /*bias=*/false, rng);
  dec_.resize(3);
  for (int i = 0; i < 3; ++i)
    for (int d = 0; d < cfg.decoder_depth; ++d)
      dec_[i].emplace_back(params_,
                           "dec" + std::to_string(i + 2) + ".d" +
                               std::to_string(d),
                           cfg.joint_dim, cfg.text_dim, cfg.heads, rng);
  fpn_ = FpnFuse(params_, cfg.joint_dim, cfg.vision_dims[0], rng);
  lang_ = LanguagePath(params_, cfg.joint_dim, cfg.text_dim, cfg.heads, rng);
  if (cfg.learned_scale)
    sim_scale_ = &params_.add(
        "sim_scale",
        Tensor::scalar(1.0 / std::sqrt(static_cast<double>(cfg.joint_dim))));
}

ResponseOut response_map(Tape& t, Tape::Ref fused, int h4, int w4,
                         Tape::Ref prompt, int img_h, int img_w,
                         Tape::Ref scale) {
  auto logits = t.matmul(t.matmul_nt(fused, prompt), scale);
  auto up = t.upsample_bilinear(logits, h4, w4, img_h, img_w);
  return ResponseOut{logits, t.sigmoid(up)};
}

Mask mask_from_prob(const nn::Tensor& prob, int h, int w) {
  if (prob.size() != static_cast<std::int64_t>(h) * w)
    throw std::invalid_argument("prob size does not match mask dims");
  Mask m(h, w);
  for (std::int64_t i = 0; i < prob.size(); ++i)
    m.v[static_cast<std::size_t>(i)] = prob[i] > 0.5 ? 1 : 0;
  return m;
}

UniModel::Forward UniModel::forward(Tape& t, const Image& img,
                                    const TokenSeq& seq) const {
  const auto enc = vision_->encode(t, img);
  const auto tx = text_->encode(t, seq);

  std::array<Tape::Ref, 3> f_c{};  // activated scales 2..4
  for (int i = 0; i < 3; ++i)
    f_c[i] = prefuse_[i].apply(t, enc.level[i + 1], tx.words, &seq.mask);

  std::array<Tape::Ref, 3> f_b{};
  for (int i = 0; i < 3; ++i) {
    auto x = f_c[i];
    for (const auto& block : dec_[i])
      x = block.apply(t, x, enc.h[i + 1], enc.w[i + 1], word_proj_, tx.words,
                      &seq.mask);
    f_b[i] = x;
  }

  auto fused = fpn_.apply(t, f_b[0], enc.h[1], enc.w[1], f_b[1], enc.h[2],
                          enc.w[2], f_b[2], enc.h[3], enc.w[3], enc.level[0],
                          enc.h[0], enc.w[0]);
  auto prompt = lang_.apply(t, tx.sentence, f_c[2]);

  auto scale =
      sim_scale_
          ? t.leaf(*sim_scale_)
          : t.constant(Tensor::scalar(
                1.0 / std::sqrt(static_cast<double>(cfg_.joint_dim))));
  const ResponseOut resp =
      response_map(t, fused, enc.h[0], enc.w[0], prompt, img.h, img.w, scale);
  return Forward{resp.logits, resp.prob};
}

UniModel::Forward UniModel::forward(Tape& t, const Image& img,
                                    const std::string& caption) const {
  return forward(t, img, tokenize(vocab_, caption, cfg_.max_len));
}

Mask UniModel::predict(const Image& img, const std::string& caption) const {
  Tape t;
  const Forward f = forward(t, img, caption);
  return mask_from_prob(t.val(f.prob), img.h, img.w);
}

}  // namespace langseg
