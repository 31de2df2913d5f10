#pragma once

// Sequence encoders: LSTM cell, Bi-LSTM, word attention, adaptive direction
// fusion and their composition Bi-aLSTM.
//
// Sequence inputs are [batch, steps, features] tensors paired with a
// [batch, steps] mask. Padding is trailing; outputs at padded positions are
// zero and never influence unmasked positions.

#include <random>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "aesim/ops.hpp"
#include "aesim/tensor.hpp"

namespace aesim {

template <typename T>
struct NamedParameter {
  std::string name;
  Tensor<T> value;
};

template <typename T>
using ParameterList = std::vector<NamedParameter<T>>;

// Glorot-uniform matrix: entries in +-sqrt(6 / (fan_in + fan_out)).
template <typename T>
Tensor<T> glorot_uniform(std::size_t rows, std::size_t cols,
                         std::size_t fan_in, std::size_t fan_out,
                         std::mt19937_64& rng);

// Gate blocks are stored fused along the output axis in the order
// input, forget, output, candidate.
template <typename T>
struct LstmParams {
  Tensor<T> w;  // [d_in, 4 d_h]
  Tensor<T> u;  // [d_h, 4 d_h]
  Tensor<T> b;  // [4 d_h]

  std::size_t input_dim() const { return w.dim(0); }
  std::size_t hidden_dim() const { return u.dim(0); }

  // W blocks in +-sqrt(6/(d_in+d_h)), U blocks in +-sqrt(6/(2 d_h)),
  // forget bias 1, other biases 0.
  static LstmParams init(std::size_t input_dim, std::size_t hidden_dim,
                         std::mt19937_64& rng);
  void collect(const std::string& prefix, ParameterList<T>& out) const;
};

template <typename T>
struct WordAttentionParams {
  Tensor<T> w;        // [d_h, d_a]
  Tensor<T> b;        // [d_a]
  Tensor<T> context;  // [d_a], the learned context vector u_w

  static WordAttentionParams init(std::size_t hidden_dim,
                                  std::size_t attention_dim,
                                  std::mt19937_64& rng);
  void collect(const std::string& prefix, ParameterList<T>& out) const;
};

template <typename T>
struct DirectionFusionParams {
  Tensor<T> w_fwd;  // [d_h, d_h]
  Tensor<T> b_fwd;  // [d_h]
  Tensor<T> w_bwd;  // [d_h, d_h]
  Tensor<T> b_bwd;  // [d_h]

  static DirectionFusionParams init(std::size_t hidden_dim,
                                    std::mt19937_64& rng);
  void collect(const std::string& prefix, ParameterList<T>& out) const;
};

template <typename T>
struct BiLstmParams {
  LstmParams<T> fwd;
  LstmParams<T> bwd;

  static BiLstmParams init(std::size_t input_dim, std::size_t hidden_dim,
                           std::mt19937_64& rng);
  void collect(const std::string& prefix, ParameterList<T>& out) const;
};

template <typename T>
struct BiaLstmParams {
  LstmParams<T> fwd;
  LstmParams<T> bwd;
  WordAttentionParams<T> attn_fwd;
  WordAttentionParams<T> attn_bwd;
  DirectionFusionParams<T> fusion;

  static BiaLstmParams init(std::size_t input_dim, std::size_t hidden_dim,
                            std::size_t attention_dim, std::mt19937_64& rng);
  void collect(const std::string& prefix, ParameterList<T>& out) const;
};

template <typename T>
using EncoderParams = std::variant<BiLstmParams<T>, BiaLstmParams<T>>;

template <typename T>
struct LstmState {
  Tensor<T> h;
  Tensor<T> c;
};

// One step for a batch of rows: x [B, d_in], state [B, d_h].
template <typename T>
LstmState<T> lstm_step(const Tensor<T>& x, const LstmState<T>& prev,
                       const LstmParams<T>& p);

template <typename T>
struct BiLstmOutput {
  Tensor<T> fwd;  // [B, T, d_h]
  Tensor<T> bwd;  // [B, T, d_h]
};

// Left-to-right and right-to-left scans over unmasked steps.
template <typename T>
BiLstmOutput<T> bilstm(const Tensor<T>& x, MaskView mask,
                       const LstmParams<T>& fwd, const LstmParams<T>& bwd);

template <typename T>
struct WordAttentionOutput {
  Tensor<T> scaled;   // [B, T, d_h], alpha_t * F[t]
  Tensor<T> weights;  // [B, T], zero at padding
};

// u_t = tanh(F[t] W + b), alpha = masked softmax of u_t . context,
// scaled[t] = alpha_t * F[t]. Every token keeps its own vector.
template <typename T>
WordAttentionOutput<T> word_attention(const Tensor<T>& states, MaskView mask,
                                      const WordAttentionParams<T>& p);

// tanh([s_fwd W_F + b_F ; s_bwd W_B + b_B]) on the last axis. Inputs are
// [..., d_h]; output is [..., 2 d_h].
template <typename T>
Tensor<T> direction_fuse(const Tensor<T>& s_fwd, const Tensor<T>& s_bwd,
                         const DirectionFusionParams<T>& p);

template <typename T>
struct BiaLstmOutput {
  Tensor<T> output;       // [B, T, 2 d_h], zero at padding
  Tensor<T> weights_fwd;  // [B, T]
  Tensor<T> weights_bwd;  // [B, T]
};

template <typename T>
BiaLstmOutput<T> bialstm(const Tensor<T>& x, MaskView mask,
                         const BiaLstmParams<T>& p);

// [B, T, 2 d_h] encoding by either encoder kind. Bi-LSTM concatenates the
// two directions; Bi-aLSTM returns its fused output.
template <typename T>
Tensor<T> encode_sequence(const EncoderParams<T>& encoder, const Tensor<T>& x,
                          MaskView mask);

template <typename T>
std::size_t encoder_output_dim(const EncoderParams<T>& encoder);

template <typename T>
void collect_encoder(const EncoderParams<T>& encoder,
                     const std::string& prefix, ParameterList<T>& out);

}  // namespace aesim
