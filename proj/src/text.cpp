#include "langseg/text.hpp"

#include <cctype>
#include <fstream>
#include <stdexcept>

namespace langseg {

Vocabulary::Vocabulary() {
  add("<pad>");
  add("<unk>");
  add("<bos>");
  add("<eos>");
  for (const char* w :
       {"all", "the", "most", "salient", "object", "circle", "square",
        "triangle", "red", "green", "blue", "yellow", "border", "interior",
        "largest", "smallest", "left", "right", "of", "above", "below"})
    add(w);
}

Vocabulary Vocabulary::from_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open vocab file: " + path);
  Vocabulary v;
  v.tokens_.clear();
  v.ids_.clear();
  v.add("<pad>");
  v.add("<unk>");
  v.add("<bos>");
  v.add("<eos>");
  std::string line;
  while (std::getline(f, line))
    if (!line.empty() && !v.ids_.count(line)) v.add(line);
  return v;
}

void Vocabulary::add(const std::string& token) {
  ids_[token] = static_cast<int>(tokens_.size());
  tokens_.push_back(token);
}

int Vocabulary::id(const std::string& token) const {
  const auto it = ids_.find(token);
  return it == ids_.end() ? kUnk : it->second;
}

const std::string& Vocabulary::token(int id) const { return tokens_.at(id); }

TokenSeq tokenize(const Vocabulary& vocab, const std::string& caption,
                  int max_len) {
  if (max_len < 3) throw std::invalid_argument("max_len must be at least 3");
  std::vector<std::string> words;
  std::string cur;
  for (char ch : caption) {
    if (std::isalnum(static_cast<unsigned char>(ch))) {
      cur.push_back(static_cast<char>(
          std::tolower(static_cast<unsigned char>(ch))));
    } else if (!cur.empty()) {
      words.push_back(cur);
      cur.clear();
    }
  }
  if (!cur.empty()) words.push_back(cur);
  if (words.empty()) throw std::invalid_argument("caption has no tokens");

  if (static_cast<int>(words.size()) > max_len - 2)
    words.resize(max_len - 2);  // keep room for BOS and EOS

  TokenSeq seq;
  seq.ids.assign(max_len, Vocabulary::kPad);
  seq.mask.assign(max_len, 0);
  int i = 0;
  seq.ids[i++] = Vocabulary::kBos;
  for (const std::string& w : words) seq.ids[i++] = vocab.id(w);
  seq.ids[i++] = Vocabulary::kEos;
  seq.length = i;
  for (int j = 0; j < i; ++j) seq.mask[j] = 1;
  return seq;
}

TextEncoder::TextEncoder(nn::ParamStore& ps, const Vocabulary& vocab,
                         const TextEncoderConfig& cfg, std::mt19937_64& rng)
    : cfg_(cfg) {
  embed_ = &ps.add("text.embed",
                   nn::Tensor::randn({vocab.size(), cfg.c_t}, rng, 0.02));
  pos_ = &ps.add("text.pos",
                 nn::Tensor::randn({cfg.max_len, cfg.c_t}, rng, 0.02));
  for (int l = 0; l < cfg.layers; ++l)
    blocks_.emplace_back(ps, "text.block" + std::to_string(l), cfg.c_t,
                         cfg.heads, cfg.mlp_ratio, rng);
  final_ln_ = nn::LayerNorm(ps, "text.final_ln", cfg.c_t);
  sentence_proj_ = nn::Linear(ps, "text.sentence_proj", cfg.c_t, cfg.c_t,
                              /*bias=*/false, rng);
}

TextEncoder::Out TextEncoder::encode(nn::Tape& t, const TokenSeq& seq) const {
  if (static_cast<int>(seq.ids.size()) != cfg_.max_len)
    throw std::invalid_argument("token sequence length != max_len");
  if (seq.length < 2) throw std::invalid_argument("sequence missing BOS/EOS");

  auto x = t.add(t.embed_rows(t.leaf(*embed_), seq.ids), t.leaf(*pos_));
  for (const auto& b : blocks_) x = b.forward(t, x, &seq.mask);
  x = final_ln_.forward(t, x);

  nn::Tape::Ref pooled;
  if (cfg_.mean_pool) {
    nn::Tensor w({1, cfg_.max_len});
    for (int j = 0; j < seq.length; ++j)
      w.at(0, j) = 1.0 / static_cast<double>(seq.length);
    pooled = t.matmul(t.constant(std::move(w)), x);
  } else {
    pooled = t.slice_rows(x, seq.length - 1, seq.length);  // EOS state
  }
  return Out{x, sentence_proj_.forward(t, pooled)};
}

}  // namespace langseg
