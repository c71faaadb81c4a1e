#pragma once

// Text side of the model: a fixed word-level vocabulary, the tokenizer, and
// a small masked transformer text encoder producing per-token embeddings
// f_w plus a pooled sentence embedding f_s.

#include <random>
#include <string>
#include <unordered_map>
#include <vector>

#include "langseg/nn.hpp"
#include "langseg/tape.hpp"

namespace langseg {

// Word-level vocabulary with four specials. The default constructor loads
// the caption grammar of the synthetic world; from_file reads one token per
// line for custom corpora.
class Vocabulary {
 public:
  static constexpr int kPad = 0;
  static constexpr int kUnk = 1;
  static constexpr int kBos = 2;
  static constexpr int kEos = 3;

  Vocabulary();
  static Vocabulary from_file(const std::string& path);

  int id(const std::string& token) const;  // kUnk for unknown tokens
  const std::string& token(int id) const;
  int size() const { return static_cast<int>(tokens_.size()); }

 private:
  void add(const std::string& token);
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> ids_;
};

// Fixed-length token sequence: ids padded to max_len, mask flags the real
// (BOS..EOS) positions, length counts them.
struct TokenSeq {
  std::vector<int> ids;
  std::vector<std::uint8_t> mask;
  int length = 0;
};

// Lowercases, splits on non-alphanumeric characters, maps unknown words to
// UNK, wraps in BOS/EOS, and pads (or truncates, keeping EOS) to max_len.
// Throws on captions with no tokens.
TokenSeq tokenize(const Vocabulary& vocab, const std::string& caption,
                  int max_len);

struct TextEncoderConfig {
  int c_t = 64;
  int heads = 4;
  int layers = 2;
  int max_len = 20;
  int mlp_ratio = 4;
  bool mean_pool = false;  // default: sentence = projected EOS state
};

// Token + learned positional embeddings, pre-LN transformer layers with
// padding masked out of attention, final layer norm. The sentence embedding
// is the EOS-position state (or the mean over real tokens) through a linear
// projection.
class TextEncoder {
 public:
  TextEncoder(nn::ParamStore& ps, const Vocabulary& vocab,
              const TextEncoderConfig& cfg, std::mt19937_64& rng);

  struct Out {
    nn::Tape::Ref words;     // (max_len, c_t)
    nn::Tape::Ref sentence;  // (1, c_t)
  };
  Out encode(nn::Tape& t, const TokenSeq& seq) const;

  const TextEncoderConfig& config() const { return cfg_; }

 private:
  TextEncoderConfig cfg_;
  nn::Param* embed_ = nullptr;
  nn::Param* pos_ = nullptr;
  std::vector<nn::TransformerBlock> blocks_;
  nn::LayerNorm final_ln_;
  nn::Linear sentence_proj_;
};

}  // namespace langseg
