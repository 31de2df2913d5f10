#include "aesim/self_check.hpp"

#include <optional>
#include <random>

#include "aesim/layers.hpp"
#include "aesim/model.hpp"
#include "aesim/ops.hpp"

namespace aesim {
namespace {

using Tn = Tensor<double>;

Tn random_tensor(const Shape& shape, std::mt19937_64& rng, double lo = -1.0,
                 double hi = 1.0) {
  std::uniform_real_distribution<double> dist(lo, hi);
  std::vector<double> values(shape_numel(shape));
  for (double& v : values) v = dist(rng);
  return Tn(shape, std::move(values));
}

// Scalar probe <out, weights> with fixed random weights, so every output
// element contributes a distinct gradient.
class Probe {
 public:
  explicit Probe(std::mt19937_64& rng) : rng_(rng) {}

  Tn operator()(const Tn& out) {
    if (next_ == weights_.size()) {
      weights_.push_back(random_tensor(out.shape(), rng_));
    }
    return sum(mul(out, weights_[next_++]));
  }
  void rewind() { next_ = 0; }

 private:
  std::mt19937_64& rng_;
  std::vector<Tn> weights_;
  std::size_t next_ = 0;
};

class Suite {
 public:
  Suite(const SelfCheckOptions& options, std::vector<LayerCheck>& out)
      : options_(options), out_(out), rng_(options.seed) {}

  std::mt19937_64& rng() { return rng_; }

  // `body` maps a probe to the scalar loss; probes are rewound per call so
  // the projection weights stay fixed across perturbations.
  template <typename Body>
  void check(const std::string& name, const std::vector<Tn>& inputs,
             Body body, std::optional<double> floor = std::nullopt) {
    Probe probe(rng_);
    auto loss = [&] {
      probe.rewind();
      return body(probe);
    };
    GradCheckOptions grad = options_.grad;
    if (floor) grad.denominator_floor = *floor;
    out_.push_back({name, grad_check(loss, inputs, grad)});
  }

 private:
  const SelfCheckOptions& options_;
  std::vector<LayerCheck>& out_;
  std::mt19937_64 rng_;
};

std::vector<Tn> lstm_tensors(const LstmParams<double>& p) {
  return {p.w, p.u, p.b};
}

void check_ops(Suite& s) {
  auto& rng = s.rng();
  const std::vector<std::uint8_t> mask_2x3 = {1, 1, 0, 1, 1, 1};

  Tn a = random_tensor({2, 3}, rng), b = random_tensor({3, 4}, rng);
  s.check("op.matmul", {a, b}, [&](Probe& p) { return p(matmul(a, b)); });

  Tn ba = random_tensor({2, 2, 3}, rng), bb = random_tensor({2, 3, 2}, rng);
  s.check("op.bmm", {ba, bb}, [&](Probe& p) { return p(bmm(ba, bb)); });
  s.check("op.transpose", {ba}, [&](Probe& p) { return p(transpose(ba)); });
  s.check("op.reshape", {ba},
          [&](Probe& p) { return p(reshape(ba, Shape{3, 4})); });

  Tn x = random_tensor({2, 3}, rng), y = random_tensor({2, 3}, rng);
  s.check("op.add", {x, y}, [&](Probe& p) { return p(add(x, y)); });
  s.check("op.sub", {x, y}, [&](Probe& p) { return p(sub(x, y)); });
  s.check("op.mul", {x, y}, [&](Probe& p) { return p(mul(x, y)); });
  s.check("op.tanh", {x}, [&](Probe& p) { return p(tanh(x)); });
  s.check("op.sigmoid", {x}, [&](Probe& p) { return p(sigmoid(x)); });
  s.check("op.exp", {x}, [&](Probe& p) { return p(exp(x)); });
  s.check("op.selu", {x}, [&](Probe& p) { return p(selu(x)); });

  Tn bias = random_tensor({3}, rng);
  s.check("op.add_bias", {x, bias},
          [&](Probe& p) { return p(add_bias(x, bias)); });

  Tn x3 = random_tensor({2, 3, 4}, rng), w6 = random_tensor({2, 3}, rng);
  s.check("op.row_scale", {x3, w6},
          [&](Probe& p) { return p(row_scale(x3, w6)); });
  s.check("op.scale", {x}, [&](Probe& p) { return p(scale(x, 0.7)); });
  s.check("op.masked_softmax", {x},
          [&](Probe& p) { return p(masked_softmax(x, MaskView(mask_2x3))); });

  Tn z = random_tensor({2, 2}, rng);
  s.check("op.concat", {x, z},
          [&](Probe& p) { return p(concat<double>({x, z}, 1)); });
  s.check("op.slice", {x3},
          [&](Probe& p) { return p(slice(x3, 1, 1, 3)); });
  s.check("op.select", {x3}, [&](Probe& p) { return p(select(x3, 1, 1)); });
  s.check("op.stack", {x, y},
          [&](Probe& p) { return p(stack<double>({x, y}, 1)); });
  s.check("op.reduce_max", {x3}, [&](Probe& p) {
    return p(reduce(ReduceOp::kMax, x3, 1, MaskView(mask_2x3)));
  });
  s.check("op.reduce_mean", {x3}, [&](Probe& p) {
    return p(reduce(ReduceOp::kMean, x3, 1, MaskView(mask_2x3)));
  });

  Tn x3b = random_tensor({2, 3, 4}, rng);
  s.check("op.where_rows", {x3, x3b}, [&](Probe& p) {
    return p(where_rows(MaskView(mask_2x3), x3, x3b));
  });

  s.check("op.dropout", {x3}, [&](Probe& p) {
    std::mt19937_64 local(99);
    return p(dropout(x3, 0.3, true, local));
  });

  Tn table = random_tensor({5, 3}, rng);
  const std::vector<std::int32_t> ids = {1, 2, 4, 3};
  s.check("op.embedding", {table}, [&](Probe& p) {
    return p(embedding(table, std::span<const std::int32_t>(ids), Shape{2, 2}));
  });
  s.check("op.sum", {x}, [&](Probe& p) { return p(sum(x)); });

  Tn logits = random_tensor({3, 3}, rng);
  const std::vector<int> labels = {0, 2, 1};
  s.check("op.softmax_cross_entropy", {logits}, [&](Probe&) {
    return softmax_cross_entropy(logits, std::span<const int>(labels));
  });
}

void check_layers(Suite& s, const SelfCheckOptions& o) {
  auto& rng = s.rng();
  const std::size_t h = o.hidden_dim;
  const std::size_t steps = o.max_steps;
  const std::size_t d_in = 3;
  // Second row one step shorter, so padding paths are exercised.
  std::vector<std::uint8_t> mask(2 * steps, 1);
  if (steps > 1) mask[2 * steps - 1] = 0;
  const MaskView mv(mask);

  auto cell = LstmParams<double>::init(d_in, h, rng);
  Tn x = random_tensor({2, d_in}, rng);
  Tn h0 = random_tensor({2, h}, rng), c0 = random_tensor({2, h}, rng);
  std::vector<Tn> cell_inputs = {x, h0, c0, cell.w, cell.u, cell.b};
  s.check("layer.lstm_step", cell_inputs, [&](Probe& p) {
    LstmState<double> next = lstm_step(x, LstmState<double>{h0, c0}, cell);
    return add(p(next.h), p(next.c));
  });

  auto bi = BiLstmParams<double>::init(d_in, h, rng);
  Tn seq = random_tensor({2, steps, d_in}, rng);
  std::vector<Tn> bi_inputs = {seq};
  for (const auto& t : lstm_tensors(bi.fwd)) bi_inputs.push_back(t);
  for (const auto& t : lstm_tensors(bi.bwd)) bi_inputs.push_back(t);
  s.check("layer.bilstm", bi_inputs, [&](Probe& p) {
    BiLstmOutput<double> r = bilstm(seq, mv, bi.fwd, bi.bwd);
    return add(p(r.fwd), p(r.bwd));
  });

  auto attn = WordAttentionParams<double>::init(h, h, rng);
  Tn states = random_tensor({2, steps, h}, rng);
  s.check("layer.word_attention", {states, attn.w, attn.b, attn.context},
          [&](Probe& p) {
            WordAttentionOutput<double> r = word_attention(states, mv, attn);
            return add(p(r.scaled), p(r.weights));
          });

  auto fusion = DirectionFusionParams<double>::init(h, rng);
  Tn sf = random_tensor({2, steps, h}, rng), sb = random_tensor({2, steps, h}, rng);
  s.check("layer.direction_fusion",
          {sf, sb, fusion.w_fwd, fusion.b_fwd, fusion.w_bwd, fusion.b_bwd},
          [&](Probe& p) { return p(direction_fuse(sf, sb, fusion)); });

  auto bia = BiaLstmParams<double>::init(d_in, h, h, rng);
  ParameterList<double> bia_params;
  bia.collect("bialstm", bia_params);
  std::vector<Tn> bia_inputs = {seq};
  for (const auto& np : bia_params) bia_inputs.push_back(np.value);
  s.check("layer.bialstm", bia_inputs, [&](Probe& p) {
    return p(bialstm(seq, mv, bia).output);
  });
}

void check_model(Suite& s, const SelfCheckOptions& o, Variant variant) {
  auto& rng = s.rng();
  EsimConfig config;
  config.variant = variant;
  config.vocab_size = o.vocab_size;
  config.embed_dim = o.hidden_dim;
  config.hidden_dim = o.hidden_dim;
  config.attention_dim = o.hidden_dim;
  config.classifier_hidden = o.hidden_dim;
  config.num_classes = 3;
  config.dropout = 0.0;
  const EsimModel<double> model = EsimModel<double>::init(config, rng);

  std::uniform_int_distribution<std::int32_t> word(
      1, static_cast<std::int32_t>(o.vocab_size) - 1);
  auto sentence = [&](std::size_t len) {
    std::vector<std::int32_t> ids(len);
    for (auto& id : ids) id = word(rng);
    return ids;
  };
  const std::size_t steps = o.max_steps;
  const std::size_t shorter = steps > 1 ? steps - 1 : steps;
  const SequenceBatch premise =
      SequenceBatch::from_sequences({sentence(steps), sentence(shorter)});
  const SequenceBatch hypothesis =
      SequenceBatch::from_sequences({sentence(shorter), sentence(steps)});

  std::vector<Tn> inputs;
  for (const auto& np : model.parameters()) inputs.push_back(np.value);
  s.check(std::string("model.") + std::string(variant_name(variant)), inputs,
          [&](Probe& p) {
            return p(forward(premise, hypothesis, model, ForwardMode::eval()));
          },
          o.model_denominator_floor);
}

}  // namespace

std::vector<LayerCheck> run_self_check(const SelfCheckOptions& options) {
  if (options.hidden_dim == 0 || options.max_steps == 0 ||
      options.vocab_size < 2) {
    throw ConfigError("self-check dimensions must be positive");
  }
  std::vector<LayerCheck> out;
  Suite suite(options, out);
  if (options.include_ops) check_ops(suite);
  check_layers(suite, options);
  check_model(suite, options, Variant::kEsim);
  check_model(suite, options, Variant::kAesim);
  return out;
}

}  // namespace aesim
