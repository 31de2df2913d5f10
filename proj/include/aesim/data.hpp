#pragma once

// Corpus ingestion: SNLI/MultiNLI JSON lines, Quora TSV, tokenization,
// vocabulary, GloVe-format embeddings and padded batching.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "aesim/sequence.hpp"
#include "aesim/tensor.hpp"

namespace aesim {

inline constexpr std::size_t kDefaultMaxLen = 64;

// Label ids. NLI: entailment, neutral, contradiction. Quora: not_duplicate,
// duplicate.
enum NliLabel : int { kEntailment = 0, kNeutral = 1, kContradiction = 2 };
enum QuoraLabel : int { kNotDuplicate = 0, kDuplicate = 1 };

std::string_view label_name(std::size_t num_classes, int label);
// Inverse of label_name; std::nullopt for an unknown name.
std::optional<int> parse_label(std::size_t num_classes, std::string_view name);

struct LabeledPair {
  std::vector<std::string> premise;
  std::vector<std::string> hypothesis;
  int label = 0;
};

struct LoadResult {
  std::vector<LabeledPair> pairs;
  std::size_t kept = 0;
  std::size_t dropped = 0;  // pairs labelled '-'
  std::size_t num_classes = 3;
};

// Lowercases ASCII, splits on whitespace and emits every ASCII punctuation
// character as its own token.
std::vector<std::string> tokenize(std::string_view text);

// Tokenizes both sentences, truncates to max_len tokens and rejects empty
// sentences with DataError.
LabeledPair make_pair(std::string_view premise, std::string_view hypothesis,
                      int label, std::size_t max_len = kDefaultMaxLen);

// One JSON object per line with gold_label, sentence1, sentence2. Pairs
// labelled "-" are dropped and counted.
LoadResult load_snli_jsonl(const std::filesystem::path& path,
                           std::size_t max_len = kDefaultMaxLen);

// id, qid1, qid2, question1, question2, is_duplicate. A leading header row
// is skipped.
LoadResult load_quora_tsv(const std::filesystem::path& path,
                          std::size_t max_len = kDefaultMaxLen);

// Dispatches on extension: .jsonl -> NLI, .tsv -> Quora.
LoadResult load_corpus(const std::filesystem::path& path,
                       std::size_t max_len = kDefaultMaxLen);

class Vocab {
 public:
  static constexpr std::int32_t kPad = 0;
  static constexpr std::int32_t kOov = 1;

  Vocab();

  // Keeps a training token if it occurs at least min_freq times or appears
  // in `embedded`. Ordered by descending frequency, then lexicographically.
  static Vocab build(const std::vector<LabeledPair>& train,
                     std::size_t min_freq = 1,
                     const std::unordered_set<std::string>* embedded = nullptr);
  static Vocab from_tokens(const std::vector<std::string>& tokens);

  std::int32_t add(const std::string& token);
  std::int32_t index(const std::string& token) const;
  bool contains(const std::string& token) const;
  const std::string& token(std::int32_t index) const;
  std::size_t size() const { return tokens_.size(); }
  const std::vector<std::string>& tokens() const { return tokens_; }
  std::vector<std::int32_t> encode(const std::vector<std::string>& tokens) const;

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, std::int32_t> index_;
};

// Set of tokens present in an embeddings file (first field of each line).
std::unordered_set<std::string> scan_embedding_tokens(
    const std::filesystem::path& path);

template <typename T>
struct EmbeddingLoad {
  Tensor<T> matrix;  // [V, dim]
  std::size_t found = 0;
};

// Text embeddings: token followed by `dim` space-separated decimals. Rows
// for tokens in the file are copied verbatim; every other row except padding
// is drawn from N(0, oov_std) in index order, so the result depends only on
// the vocabulary and the generator state. Padding stays zero.
template <typename T>
EmbeddingLoad<T> load_glove_text(const std::filesystem::path& path,
                                 const Vocab& vocab, std::size_t dim,
                                 std::mt19937_64& rng, double oov_std = 0.1);

struct IndexedPair {
  std::vector<std::int32_t> premise;
  std::vector<std::int32_t> hypothesis;
  int label = 0;
};

std::vector<IndexedPair> index_pairs(const std::vector<LabeledPair>& pairs,
                                     const Vocab& vocab);

struct Batch {
  SequenceBatch premise;
  SequenceBatch hypothesis;
  std::vector<int> labels;
};

// Shuffles deterministically when a seed is given, then cuts consecutive
// batches; the last batch may be short.
std::vector<Batch> make_batches(const std::vector<IndexedPair>& pairs,
                                std::size_t batch_size,
                                std::optional<std::uint64_t> shuffle_seed);

std::vector<Batch> make_batches(const std::vector<LabeledPair>& pairs,
                                const Vocab& vocab, std::size_t batch_size,
                                std::optional<std::uint64_t> shuffle_seed);

// Rule-labelled three-class toy corpus over `words` word types w0..w{n-1}.
// w0 acts as a negation marker:
//   entailment    - hypothesis is two words taken from the premise
//   contradiction - w0 followed by one premise word
//   neutral       - two words absent from the premise
// Classes are balanced and the generator is deterministic in `seed`.
std::vector<LabeledPair> make_synthetic_corpus(std::size_t pairs,
                                               std::size_t words,
                                               std::uint64_t seed);

}  // namespace aesim
