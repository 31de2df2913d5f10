#pragma once

// ESIM / aESIM sentence-pair classifier: input encoding, soft alignment,
// enhancement, composition, pooled MLP classification.

#include <cstdint>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "aesim/layers.hpp"
#include "aesim/sequence.hpp"

namespace aesim {

enum class Variant { kEsim, kAesim };

std::string_view variant_name(Variant v);
Variant parse_variant(std::string_view name);

struct EsimConfig {
  Variant variant = Variant::kAesim;
  std::size_t vocab_size = 2;
  std::size_t embed_dim = 300;
  std::size_t hidden_dim = 300;
  std::size_t attention_dim = 300;
  std::size_t classifier_hidden = 300;
  std::size_t num_classes = 3;
  double dropout = 0.2;

  // Throws ConfigError on the first violated invariant.
  void validate() const;

  std::string to_json() const;
  static EsimConfig from_json(std::string_view text);

  bool operator==(const EsimConfig&) const = default;
};

// Per-call behaviour. Eval mode is deterministic and never touches `rng`.
struct ForwardMode {
  bool training = false;
  std::mt19937_64* rng = nullptr;

  static ForwardMode eval() { return {}; }
  static ForwardMode train(std::mt19937_64& rng) { return {true, &rng}; }
};

template <typename T>
struct EsimModel {
  EsimConfig config;
  Tensor<T> embedding;  // [V, E]; row 0 is padding and stays zero
  EncoderParams<T> encoder1;
  Tensor<T> projection_w;  // [8 d_h, d_h]
  Tensor<T> projection_b;  // [d_h]
  EncoderParams<T> encoder2;
  Tensor<T> hidden_w;  // [8 d_h, classifier_hidden]
  Tensor<T> hidden_b;
  Tensor<T> output_w;  // [classifier_hidden, num_classes]
  Tensor<T> output_b;

  // Random initialization. Embedding rows other than padding are drawn from
  // N(0, 0.1); pre-trained vectors are copied in afterwards by the caller.
  static EsimModel init(const EsimConfig& config, std::mt19937_64& rng);

  // Every trainable tensor under a stable dotted name, in a fixed order.
  ParameterList<T> parameters() const;
  std::size_t parameter_count() const;
  // Deep copy; the result shares no storage with *this.
  EsimModel clone() const;
};

template <typename T>
struct EncodedPair {
  Tensor<T> premise;     // [B, l_p, 2 d_h]
  Tensor<T> hypothesis;  // [B, l_q, 2 d_h]
};

template <typename T>
EncodedPair<T> encode_inputs(const SequenceBatch& premise,
                             const SequenceBatch& hypothesis,
                             const EsimModel<T>& model, ForwardMode mode);

// M[i][j] = <p_i, q_j>. Accepts [l_p, w] x [l_q, w] or the batched
// [B, l_p, w] x [B, l_q, w] form.
template <typename T>
Tensor<T> similarity_matrix(const Tensor<T>& premise,
                            const Tensor<T>& hypothesis);

template <typename T>
struct Alignment {
  Tensor<T> premise_aligned;     // [B, l_p, w], rows are hull points of q
  Tensor<T> hypothesis_aligned;  // [B, l_q, w]
  Tensor<T> premise_weights;     // [B, l_p, l_q], softmax over j
  Tensor<T> hypothesis_weights;  // [B, l_q, l_p], softmax over i
};

template <typename T>
Alignment<T> soft_align(const Tensor<T>& similarity, const Tensor<T>& premise,
                        const Tensor<T>& hypothesis, MaskView premise_mask,
                        MaskView hypothesis_mask);

// [x; x~; x - x~; x * x~] on the last axis.
template <typename T>
Tensor<T> enhance(const Tensor<T>& encoded, const Tensor<T>& aligned);

template <typename T>
struct Composed {
  Tensor<T> premise;
  Tensor<T> hypothesis;
};

template <typename T>
Composed<T> compose(const Tensor<T>& enhanced_premise,
                    const Tensor<T>& enhanced_hypothesis,
                    MaskView premise_mask, MaskView hypothesis_mask,
                    const EsimModel<T>& model, ForwardMode mode);

// [avg(v_p); max(v_p); avg(v_q); max(v_q)] -> MLP -> raw logits [B, C].
template <typename T>
Tensor<T> pool_and_classify(const Tensor<T>& composed_premise,
                            const Tensor<T>& composed_hypothesis,
                            MaskView premise_mask, MaskView hypothesis_mask,
                            const EsimModel<T>& model, ForwardMode mode);

template <typename T>
Tensor<T> forward(const SequenceBatch& premise,
                  const SequenceBatch& hypothesis, const EsimModel<T>& model,
                  ForwardMode mode);

enum class AlignDirection { kPremiseRows, kHypothesisCols };

std::string_view direction_name(AlignDirection d);
AlignDirection parse_direction(std::string_view name);

struct AlignmentExport {
  std::vector<std::string> premise;
  std::vector<std::string> hypothesis;
  // l_p x l_q. Rows sum to 1 for kPremiseRows, columns for kHypothesisCols.
  std::vector<std::vector<double>> weights;
  AlignDirection direction = AlignDirection::kPremiseRows;

  std::string to_json() const;
};

// Eval-mode alignment weights of the first (input-encoding) attention for a
// single pair. Token ids and strings must have matching lengths.
template <typename T>
AlignmentExport export_alignment(const std::vector<std::string>& premise,
                                 const std::vector<std::int32_t>& premise_ids,
                                 const std::vector<std::string>& hypothesis,
                                 const std::vector<std::int32_t>& hypothesis_ids,
                                 const EsimModel<T>& model,
                                 AlignDirection direction);

// Closed-form count for a configuration, without allocating a model.
std::size_t parameter_count(const EsimConfig& config);

}  // namespace aesim
