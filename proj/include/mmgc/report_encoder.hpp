#pragma once

#include <filesystem>
#include <string>
#include <unordered_map>
#include <vector>

#include "mmgc/model_config.hpp"
#include "mmgc/nn.hpp"

namespace mmgc {

class Vocabulary {
 public:
  static constexpr int kPad = 0;
  static constexpr int kUnk = 1;
  static constexpr const char* kPadToken = "<pad>";
  static constexpr const char* kUnkToken = "<unk>";

  Vocabulary();
  // First two entries must be the PAD and UNK tokens; no duplicates.
  explicit Vocabulary(std::vector<std::string> tokens);

  std::size_t size() const { return tokens_.size(); }
  const std::vector<std::string>& tokens() const { return tokens_; }
  int id_of(const std::string& token) const;  // kUnk when absent

  // One token per line; line number = id.
  void save(const std::filesystem::path& path) const;
  static Vocabulary load(const std::filesystem::path& path);

  bool operator==(const Vocabulary& other) const { return tokens_ == other.tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> index_;
};

// Whitespace split + lowercase.
std::vector<std::string> split_words(const std::string& text);

// PAD, UNK, then tokens by (frequency desc, lexicographic asc). Throws
// EmptyCorpus when the corpus contains no tokens.
Vocabulary build_vocab(const std::vector<std::string>& corpus);

struct TokenSequence {
  std::vector<int> ids;  // length max_len, PAD beyond `length`
  std::size_t length = 1;

  std::span<const int> active() const { return {ids.data(), length}; }
  bool operator==(const TokenSequence&) const = default;
};

// Total: unknown words map to UNK, long reports truncate, empty reports
// become a single UNK.
TokenSequence tokenize(const Vocabulary& vocab, const std::string& report, std::size_t max_len);

// Compact causal transformer over report tokens, mean-pooled over the
// non-PAD positions.
template <typename T>
struct ReportEncoder {
  Embedding<T> token_embedding;
  Tensor<T> pos_embedding;  // [max_len x d]
  std::vector<TransformerBlock<T>> blocks;
  LayerNorm<T> ln_final;

  static ReportEncoder init(const ModelConfig& cfg, Rng& rng);
  std::size_t max_len() const { return pos_embedding.shape()[0]; }
  std::size_t dim() const { return pos_embedding.shape()[1]; }

  // Final-layer hidden states for the first `seq.length` positions, [n x d].
  Tensor<T> hidden_states(const TokenSequence& seq) const;
  // t = mean of hidden_states rows; shape [d].
  Tensor<T> encode(const TokenSequence& seq) const;
  void collect(const std::string& prefix, NamedParams<T>& out) const;
};

}  // namespace mmgc
