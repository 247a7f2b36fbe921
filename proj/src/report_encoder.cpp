#include "mmgc/report_encoder.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>

namespace mmgc {

Vocabulary::Vocabulary() : Vocabulary(std::vector<std::string>{kPadToken, kUnkToken}) {}

Vocabulary::Vocabulary(std::vector<std::string> tokens) : tokens_(std::move(tokens)) {
  if (tokens_.size() < 2 || tokens_[0] != kPadToken || tokens_[1] != kUnkToken)
    throw FormatError("vocabulary must start with <pad>, <unk>");
  for (std::size_t i = 0; i < tokens_.size(); ++i) {
    if (tokens_[i].empty()) throw FormatError("empty token at id " + std::to_string(i));
    if (!index_.emplace(tokens_[i], static_cast<int>(i)).second)
      throw FormatError("duplicate token '" + tokens_[i] + "'");
  }
}

int Vocabulary::id_of(const std::string& token) const {
  const auto it = index_.find(token);
  return it == index_.end() ? kUnk : it->second;
}

void Vocabulary::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  for (const auto& t : tokens_) out << t << '\n';
  if (!out) throw IoError("write failed: " + path.string());
}

Vocabulary Vocabulary::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path.string());
  std::vector<std::string> tokens;
  std::string line;
  while (std::getline(in, line)) tokens.push_back(line);
  return Vocabulary(std::move(tokens));
}

std::vector<std::string> split_words(const std::string& text) {
  std::vector<std::string> words;
  std::istringstream is(text);
  std::string w;
  while (is >> w) {
    std::transform(w.begin(), w.end(), w.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    words.push_back(std::move(w));
  }
  return words;
}

Vocabulary build_vocab(const std::vector<std::string>& corpus) {
  std::map<std::string, std::size_t> counts;
  for (const auto& report : corpus)
    for (auto& w : split_words(report))
      if (w != Vocabulary::kPadToken && w != Vocabulary::kUnkToken) ++counts[w];
  if (counts.empty()) throw EmptyCorpus("corpus has no tokens");

  std::vector<std::pair<std::string, std::size_t>> ranked(counts.begin(), counts.end());
  std::stable_sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  std::vector<std::string> tokens{Vocabulary::kPadToken, Vocabulary::kUnkToken};
  for (auto& [w, n] : ranked) tokens.push_back(w);
  return Vocabulary(std::move(tokens));
}

TokenSequence tokenize(const Vocabulary& vocab, const std::string& report, std::size_t max_len) {
  if (max_len == 0) throw InvalidParams("max_len must be at least 1");
  TokenSequence seq;
  seq.ids.assign(max_len, Vocabulary::kPad);
  const auto words = split_words(report);
  if (words.empty()) {
    seq.ids[0] = Vocabulary::kUnk;
    seq.length = 1;
    return seq;
  }
  seq.length = std::min(words.size(), max_len);
  for (std::size_t i = 0; i < seq.length; ++i) seq.ids[i] = vocab.id_of(words[i]);
  return seq;
}

template <typename T>
ReportEncoder<T> ReportEncoder<T>::init(const ModelConfig& cfg, Rng& rng) {
  ReportEncoder enc;
  const std::size_t d = cfg.text_dim;
  enc.token_embedding = Embedding<T>::init(cfg.vocab_size, d, rng);
  enc.pos_embedding = uniform_param<T>({cfg.max_len, d}, std::sqrt(1.0 / static_cast<double>(d)), rng);
  for (std::size_t i = 0; i < cfg.text_layers; ++i) enc.blocks.push_back(TransformerBlock<T>::init(d, cfg.text_heads, rng));
  enc.ln_final = LayerNorm<T>::init(d);
  return enc;
}

template <typename T>
Tensor<T> ReportEncoder<T>::hidden_states(const TokenSequence& seq) const {
  const std::size_t n = seq.length;
  if (n == 0 || n > max_len() || seq.ids.size() < n)
    throw ShapeMismatch("token sequence length " + std::to_string(n) + " outside [1, " + std::to_string(max_len()) + "]");
  std::vector<int> positions(n);
  std::iota(positions.begin(), positions.end(), 0);
  auto x = token_embedding.forward(seq.active()) + gather_rows(pos_embedding, std::span<const int>(positions));
  // PAD positions are never fed in, so the causal mask alone keeps every
  // position blind to later tokens.
  const auto mask = AttentionMask::causal(n);
  for (const auto& block : blocks) x = block.forward(x, &mask);
  return ln_final.forward(x);
}

template <typename T>
Tensor<T> ReportEncoder<T>::encode(const TokenSequence& seq) const {
  return mean_rows(hidden_states(seq));
}

template <typename T>
void ReportEncoder<T>::collect(const std::string& prefix, NamedParams<T>& out) const {
  token_embedding.collect(prefix + ".token_embedding", out);
  out.emplace_back(prefix + ".pos_embedding", pos_embedding);
  for (std::size_t i = 0; i < blocks.size(); ++i) blocks[i].collect(prefix + ".blocks." + std::to_string(i), out);
  ln_final.collect(prefix + ".ln_final", out);
}

template struct ReportEncoder<float>;
template struct ReportEncoder<double>;

}  // namespace mmgc
