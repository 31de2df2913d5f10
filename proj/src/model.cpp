#include "aesim/model.hpp"

#include <json.hpp>

namespace aesim {
namespace {

template <typename T, typename F>
void for_each_tensor(LstmParams<T>& p, F&& f) {
  f(p.w);
  f(p.u);
  f(p.b);
}

template <typename T, typename F>
void for_each_tensor(BiLstmParams<T>& p, F&& f) {
  for_each_tensor(p.fwd, f);
  for_each_tensor(p.bwd, f);
}

template <typename T, typename F>
void for_each_tensor(BiaLstmParams<T>& p, F&& f) {
  for_each_tensor(p.fwd, f);
  for_each_tensor(p.bwd, f);
  for (auto* attn : {&p.attn_fwd, &p.attn_bwd}) {
    f(attn->w);
    f(attn->b);
    f(attn->context);
  }
  f(p.fusion.w_fwd);
  f(p.fusion.b_fwd);
  f(p.fusion.w_bwd);
  f(p.fusion.b_bwd);
}

template <typename T, typename F>
void for_each_tensor(EsimModel<T>& m, F&& f) {
  f(m.embedding);
  std::visit([&](auto& p) { for_each_tensor(p, f); }, m.encoder1);
  f(m.projection_w);
  f(m.projection_b);
  std::visit([&](auto& p) { for_each_tensor(p, f); }, m.encoder2);
  f(m.hidden_w);
  f(m.hidden_b);
  f(m.output_w);
  f(m.output_b);
}

template <typename T>
EncoderParams<T> make_encoder(Variant variant, std::size_t input_dim,
                              const EsimConfig& config,
                              std::mt19937_64& rng) {
  if (variant == Variant::kEsim) {
    return BiLstmParams<T>::init(input_dim, config.hidden_dim, rng);
  }
  return BiaLstmParams<T>::init(input_dim, config.hidden_dim,
                                config.attention_dim, rng);
}

std::size_t encoder_count(const EsimConfig& c, std::size_t input_dim) {
  const std::size_t h = c.hidden_dim, a = c.attention_dim;
  std::size_t n = 2 * (input_dim * 4 * h + h * 4 * h + 4 * h);
  if (c.variant == Variant::kAesim) {
    n += 2 * (h * a + a + a) + 2 * (h * h + h);
  }
  return n;
}

std::mt19937_64& dropout_rng(ForwardMode mode) {
  if (mode.rng == nullptr) {
    throw ContractError("training-mode forward needs a random generator");
  }
  return *mode.rng;
}

template <typename T>
Tensor<T> maybe_dropout(const Tensor<T>& x, double rate, ForwardMode mode) {
  if (!mode.training || rate == 0.0) return x;
  return dropout(x, rate, true, dropout_rng(mode));
}

// Expands a [B, l] sequence mask to a [B, rows, l] softmax mask where every
// row shares its sentence's key mask.
std::vector<std::uint8_t> broadcast_key_mask(MaskView keys, std::size_t batch,
                                             std::size_t rows) {
  const std::size_t len = keys.size() / batch;
  std::vector<std::uint8_t> out(batch * rows * len);
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t r = 0; r < rows; ++r) {
      std::copy_n(keys.begin() + b * len, len,
                  out.begin() + (b * rows + r) * len);
    }
  }
  return out;
}

}  // namespace

std::string_view variant_name(Variant v) {
  return v == Variant::kEsim ? "esim" : "aesim";
}

Variant parse_variant(std::string_view name) {
  if (name == "esim") return Variant::kEsim;
  if (name == "aesim") return Variant::kAesim;
  throw ConfigError("unknown variant '" + std::string(name) +
                    "' (expected esim or aesim)");
}

std::string_view direction_name(AlignDirection d) {
  return d == AlignDirection::kPremiseRows ? "premise_rows" : "hypothesis_cols";
}

AlignDirection parse_direction(std::string_view name) {
  if (name == "premise_rows") return AlignDirection::kPremiseRows;
  if (name == "hypothesis_cols") return AlignDirection::kHypothesisCols;
  throw ConfigError("unknown direction '" + std::string(name) +
                    "' (expected premise_rows or hypothesis_cols)");
}

void EsimConfig::validate() const {
  if (num_classes != 2 && num_classes != 3) {
    throw ConfigError("num_classes must be 2 or 3, got " +
                      std::to_string(num_classes));
  }
  if (vocab_size < 2) {
    throw ConfigError("vocab_size must cover padding and OOV (>= 2)");
  }
  if (embed_dim == 0 || hidden_dim == 0 || attention_dim == 0 ||
      classifier_hidden == 0) {
    throw ConfigError("model dimensions must be positive");
  }
  if (!(dropout >= 0.0 && dropout < 1.0)) {
    throw ConfigError("dropout must be in [0, 1), got " +
                      std::to_string(dropout));
  }
}

std::string EsimConfig::to_json() const {
  nlohmann::json j = {
      {"variant", std::string(variant_name(variant))},
      {"vocab_size", vocab_size},
      {"embed_dim", embed_dim},
      {"hidden_dim", hidden_dim},
      {"attention_dim", attention_dim},
      {"classifier_hidden", classifier_hidden},
      {"num_classes", num_classes},
      {"dropout", dropout},
  };
  return j.dump();
}

EsimConfig EsimConfig::from_json(std::string_view text) {
  try {
    const nlohmann::json j = nlohmann::json::parse(text);
    EsimConfig c;
    c.variant = parse_variant(j.at("variant").get<std::string>());
    c.vocab_size = j.at("vocab_size").get<std::size_t>();
    c.embed_dim = j.at("embed_dim").get<std::size_t>();
    c.hidden_dim = j.at("hidden_dim").get<std::size_t>();
    c.attention_dim = j.at("attention_dim").get<std::size_t>();
    c.classifier_hidden = j.at("classifier_hidden").get<std::size_t>();
    c.num_classes = j.at("num_classes").get<std::size_t>();
    c.dropout = j.at("dropout").get<double>();
    c.validate();
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("bad model config: ") + e.what());
  }
}

std::size_t parameter_count(const EsimConfig& c) {
  const std::size_t h = c.hidden_dim;
  return c.vocab_size * c.embed_dim + encoder_count(c, c.embed_dim) +
         8 * h * h + h + encoder_count(c, h) + 8 * h * c.classifier_hidden +
         c.classifier_hidden + c.classifier_hidden * c.num_classes +
         c.num_classes;
}

template <typename T>
EsimModel<T> EsimModel<T>::init(const EsimConfig& config,
                                std::mt19937_64& rng) {
  config.validate();
  EsimModel m;
  m.config = config;
  const std::size_t h = config.hidden_dim;
  m.embedding = Tensor<T>::zeros({config.vocab_size, config.embed_dim}, true);
  std::normal_distribution<double> gauss(0.0, 0.1);
  auto rows = m.embedding.data();
  for (std::size_t i = config.embed_dim; i < rows.size(); ++i) {
    rows[i] = static_cast<T>(gauss(rng));
  }
  m.encoder1 = make_encoder<T>(config.variant, config.embed_dim, config, rng);
  m.projection_w = glorot_uniform<T>(8 * h, h, 8 * h, h, rng);
  m.projection_b = Tensor<T>::zeros({h}, true);
  m.encoder2 = make_encoder<T>(config.variant, h, config, rng);
  m.hidden_w = glorot_uniform<T>(8 * h, config.classifier_hidden, 8 * h,
                                 config.classifier_hidden, rng);
  m.hidden_b = Tensor<T>::zeros({config.classifier_hidden}, true);
  m.output_w = glorot_uniform<T>(config.classifier_hidden, config.num_classes,
                                 config.classifier_hidden, config.num_classes,
                                 rng);
  m.output_b = Tensor<T>::zeros({config.num_classes}, true);
  return m;
}

template <typename T>
ParameterList<T> EsimModel<T>::parameters() const {
  ParameterList<T> out;
  out.push_back({"embedding", embedding});
  collect_encoder(encoder1, "encoder1", out);
  out.push_back({"projection.W", projection_w});
  out.push_back({"projection.b", projection_b});
  collect_encoder(encoder2, "encoder2", out);
  out.push_back({"classifier.hidden.W", hidden_w});
  out.push_back({"classifier.hidden.b", hidden_b});
  out.push_back({"classifier.output.W", output_w});
  out.push_back({"classifier.output.b", output_b});
  return out;
}

template <typename T>
std::size_t EsimModel<T>::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : parameters()) n += p.value.numel();
  return n;
}

template <typename T>
EsimModel<T> EsimModel<T>::clone() const {
  EsimModel copy = *this;
  for_each_tensor(copy, [](Tensor<T>& t) { t = t.clone(); });
  return copy;
}

template <typename T>
EncodedPair<T> encode_inputs(const SequenceBatch& premise,
                             const SequenceBatch& hypothesis,
                             const EsimModel<T>& model, ForwardMode mode) {
  if (premise.batch != hypothesis.batch) {
    throw DimensionError("premise batch of " + std::to_string(premise.batch) +
                         " vs hypothesis batch of " +
                         std::to_string(hypothesis.batch));
  }
  const double rate = model.config.dropout;
  auto encode = [&](const SequenceBatch& s) {
    Tensor<T> embedded =
        embedding(model.embedding, std::span<const std::int32_t>(s.ids),
                  {s.batch, s.steps});
    embedded = maybe_dropout(embedded, rate, mode);
    return encode_sequence(model.encoder1, embedded, s.mask_view());
  };
  Tensor<T> p = encode(premise);
  Tensor<T> q = encode(hypothesis);
  return {p, q};
}

template <typename T>
Tensor<T> similarity_matrix(const Tensor<T>& premise,
                            const Tensor<T>& hypothesis) {
  const bool batched = premise.rank() == 3;
  if (premise.rank() != hypothesis.rank() ||
      (premise.rank() != 2 && !batched) ||
      premise.shape().back() != hypothesis.shape().back() ||
      (batched && premise.dim(0) != hypothesis.dim(0))) {
    throw DimensionError("similarity_matrix: " + shape_str(premise.shape()) +
                         " vs " + shape_str(hypothesis.shape()));
  }
  return batched ? bmm(premise, transpose(hypothesis))
                 : matmul(premise, transpose(hypothesis));
}

template <typename T>
Alignment<T> soft_align(const Tensor<T>& similarity, const Tensor<T>& premise,
                        const Tensor<T>& hypothesis, MaskView premise_mask,
                        MaskView hypothesis_mask) {
  if (similarity.rank() != 3 || premise.rank() != 3 ||
      hypothesis.rank() != 3 || similarity.dim(0) != premise.dim(0) ||
      similarity.dim(1) != premise.dim(1) ||
      similarity.dim(2) != hypothesis.dim(1) ||
      premise.dim(0) != hypothesis.dim(0)) {
    throw DimensionError("soft_align: similarity " +
                         shape_str(similarity.shape()) + " with premise " +
                         shape_str(premise.shape()) + " and hypothesis " +
                         shape_str(hypothesis.shape()));
  }
  const std::size_t batch = premise.dim(0), lp = premise.dim(1),
                    lq = hypothesis.dim(1);
  if (premise_mask.size() != batch * lp ||
      hypothesis_mask.size() != batch * lq) {
    throw DimensionError("soft_align: masks do not match similarity " +
                         shape_str(similarity.shape()));
  }
  Alignment<T> out;
  const auto row_mask = broadcast_key_mask(hypothesis_mask, batch, lp);
  out.premise_weights = masked_softmax<T>(similarity, row_mask);
  out.premise_aligned = bmm(out.premise_weights, hypothesis);
  const auto col_mask = broadcast_key_mask(premise_mask, batch, lq);
  out.hypothesis_weights = masked_softmax<T>(transpose(similarity), col_mask);
  out.hypothesis_aligned = bmm(out.hypothesis_weights, premise);
  return out;
}

template <typename T>
Tensor<T> enhance(const Tensor<T>& encoded, const Tensor<T>& aligned) {
  if (encoded.shape() != aligned.shape()) {
    throw DimensionError("enhance: " + shape_str(encoded.shape()) + " vs " +
                         shape_str(aligned.shape()));
  }
  return concat<T>({encoded, aligned, sub(encoded, aligned),
                    mul(encoded, aligned)},
                   encoded.rank() - 1);
}

template <typename T>
Composed<T> compose(const Tensor<T>& enhanced_premise,
                    const Tensor<T>& enhanced_hypothesis,
                    MaskView premise_mask, MaskView hypothesis_mask,
                    const EsimModel<T>& model, ForwardMode mode) {
  const std::size_t width = model.projection_w.dim(0);
  auto run = [&](const Tensor<T>& m, MaskView mask) {
    if (m.rank() != 3 || m.dim(2) != width) {
      throw DimensionError("compose: enhanced input " + shape_str(m.shape()) +
                           " but projection expects width " +
                           std::to_string(width));
    }
    const std::size_t batch = m.dim(0), steps = m.dim(1);
    Tensor<T> projected = selu(add_bias(
        matmul(reshape(m, {batch * steps, width}), model.projection_w),
        model.projection_b));
    projected = reshape(projected, {batch, steps, model.projection_w.dim(1)});
    projected = maybe_dropout(projected, model.config.dropout, mode);
    return encode_sequence(model.encoder2, projected, mask);
  };
  Tensor<T> vp = run(enhanced_premise, premise_mask);
  Tensor<T> vq = run(enhanced_hypothesis, hypothesis_mask);
  return {vp, vq};
}

template <typename T>
Tensor<T> pool_and_classify(const Tensor<T>& composed_premise,
                            const Tensor<T>& composed_hypothesis,
                            MaskView premise_mask, MaskView hypothesis_mask,
                            const EsimModel<T>& model, ForwardMode mode) {
  Tensor<T> pooled = concat<T>(
      {reduce(ReduceOp::kMean, composed_premise, 1, premise_mask),
       reduce(ReduceOp::kMax, composed_premise, 1, premise_mask),
       reduce(ReduceOp::kMean, composed_hypothesis, 1, hypothesis_mask),
       reduce(ReduceOp::kMax, composed_hypothesis, 1, hypothesis_mask)},
      1);
  const double rate = model.config.dropout;
  pooled = maybe_dropout(pooled, rate, mode);
  Tensor<T> hidden =
      selu(add_bias(matmul(pooled, model.hidden_w), model.hidden_b));
  hidden = maybe_dropout(hidden, rate, mode);
  return add_bias(matmul(hidden, model.output_w), model.output_b);
}

template <typename T>
Tensor<T> forward(const SequenceBatch& premise,
                  const SequenceBatch& hypothesis, const EsimModel<T>& model,
                  ForwardMode mode) {
  EncodedPair<T> encoded = encode_inputs(premise, hypothesis, model, mode);
  Tensor<T> m = similarity_matrix(encoded.premise, encoded.hypothesis);
  Alignment<T> aligned =
      soft_align(m, encoded.premise, encoded.hypothesis, premise.mask_view(),
                 hypothesis.mask_view());
  Composed<T> composed =
      compose(enhance(encoded.premise, aligned.premise_aligned),
              enhance(encoded.hypothesis, aligned.hypothesis_aligned),
              premise.mask_view(), hypothesis.mask_view(), model, mode);
  return pool_and_classify(composed.premise, composed.hypothesis,
                           premise.mask_view(), hypothesis.mask_view(), model,
                           mode);
}

std::string AlignmentExport::to_json() const {
  nlohmann::json j = {
      {"premise", premise},
      {"hypothesis", hypothesis},
      {"weights", weights},
      {"direction", std::string(direction_name(direction))},
  };
  return j.dump(2);
}

template <typename T>
AlignmentExport export_alignment(const std::vector<std::string>& premise,
                                 const std::vector<std::int32_t>& premise_ids,
                                 const std::vector<std::string>& hypothesis,
                                 const std::vector<std::int32_t>& hypothesis_ids,
                                 const EsimModel<T>& model,
                                 AlignDirection direction) {
  if (premise.size() != premise_ids.size() ||
      hypothesis.size() != hypothesis_ids.size()) {
    throw ContractError("export_alignment: token strings and ids differ");
  }
  if (premise.empty() || hypothesis.empty()) {
    throw DataError("export_alignment: empty sentence");
  }
  NoGradScope<T> no_grad;
  const SequenceBatch p = SequenceBatch::from_sequences({premise_ids});
  const SequenceBatch q = SequenceBatch::from_sequences({hypothesis_ids});
  EncodedPair<T> encoded = encode_inputs(p, q, model, ForwardMode::eval());
  Alignment<T> aligned =
      soft_align(similarity_matrix(encoded.premise, encoded.hypothesis),
                 encoded.premise, encoded.hypothesis, p.mask_view(),
                 q.mask_view());
  const std::size_t lp = premise.size(), lq = hypothesis.size();
  AlignmentExport out;
  out.premise = premise;
  out.hypothesis = hypothesis;
  out.direction = direction;
  out.weights.assign(lp, std::vector<double>(lq));
  for (std::size_t i = 0; i < lp; ++i) {
    for (std::size_t j = 0; j < lq; ++j) {
      out.weights[i][j] =
          direction == AlignDirection::kPremiseRows
              ? static_cast<double>(aligned.premise_weights[i * lq + j])
              : static_cast<double>(aligned.hypothesis_weights[j * lp + i]);
    }
  }
  return out;
}

#define AESIM_INSTANTIATE_MODEL(T)                                            \
  template struct EsimModel<T>;                                               \
  template EncodedPair<T> encode_inputs(const SequenceBatch&,                 \
                                        const SequenceBatch&,                 \
                                        const EsimModel<T>&, ForwardMode);    \
  template Tensor<T> similarity_matrix(const Tensor<T>&, const Tensor<T>&);   \
  template Alignment<T> soft_align(const Tensor<T>&, const Tensor<T>&,        \
                                   const Tensor<T>&, MaskView, MaskView);     \
  template Tensor<T> enhance(const Tensor<T>&, const Tensor<T>&);             \
  template Composed<T> compose(const Tensor<T>&, const Tensor<T>&, MaskView,  \
                               MaskView, const EsimModel<T>&, ForwardMode);   \
  template Tensor<T> pool_and_classify(const Tensor<T>&, const Tensor<T>&,    \
                                       MaskView, MaskView,                    \
                                       const EsimModel<T>&, ForwardMode);     \
  template Tensor<T> forward(const SequenceBatch&, const SequenceBatch&,      \
                             const EsimModel<T>&, ForwardMode);               \
  template AlignmentExport export_alignment(                                  \
      const std::vector<std::string>&, const std::vector<std::int32_t>&,      \
      const std::vector<std::string>&, const std::vector<std::int32_t>&,      \
      const EsimModel<T>&, AlignDirection);

AESIM_INSTANTIATE_MODEL(float)
AESIM_INSTANTIATE_MODEL(double)

#undef AESIM_INSTANTIATE_MODEL

}  // namespace aesim
