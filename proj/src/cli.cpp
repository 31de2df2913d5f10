#include "aesim/cli.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <random>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "aesim/checkpoint.hpp"
#include "aesim/data.hpp"
#include "aesim/errors.hpp"
#include "aesim/model.hpp"
#include "aesim/self_check.hpp"
#include "aesim/train.hpp"

namespace aesim {
namespace {

namespace fs = std::filesystem;

struct TrainArgs {
  std::string variant = "aesim";
  std::vector<std::string> data;
  std::string embeddings;
  std::string out;
  std::uint64_t seed = 1;
  std::string precision = "f64";
  std::size_t batch_size = 128;
  std::size_t hidden_dim = 300;
  double lr = 0.0005;
  double dropout = 0.2;
  double max_grad_norm = 0.0;
  std::size_t epochs = 10;
  std::size_t patience = 5;
  std::size_t max_len = kDefaultMaxLen;
};

struct EvalArgs {
  std::string checkpoint;
  std::vector<std::string> data;
  std::size_t batch_size = 128;
  std::size_t max_len = kDefaultMaxLen;
};

struct PairArgs {
  std::string checkpoint;
  std::string premise;
  std::string hypothesis;
  std::size_t max_len = kDefaultMaxLen;
  std::string direction = "premise_rows";
  std::string out;
};

struct GradCheckArgs {
  std::uint64_t seed = 7;
  std::size_t hidden_dim = 4;
  std::size_t steps = 3;
  bool corrupt = false;
};

struct DataSplits {
  fs::path train;
  std::optional<fs::path> dev;
};

bool is_corpus_file(const fs::path& p) {
  const std::string ext = p.extension().string();
  return fs::is_regular_file(p) && (ext == ".jsonl" || ext == ".tsv");
}

// A directory is searched for files whose names contain "train" and "dev";
// otherwise the first path is training data and the second, if any, dev.
DataSplits resolve_splits(const std::vector<std::string>& data) {
  if (data.empty()) throw ConfigError("--data is required");
  if (data.size() == 1 && fs::is_directory(data[0])) {
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(data[0])) {
      if (is_corpus_file(entry.path())) files.push_back(entry.path());
    }
    std::sort(files.begin(), files.end());
    DataSplits splits;
    for (const auto& f : files) {
      const std::string name = f.filename().string();
      if (splits.train.empty() && name.find("train") != std::string::npos) {
        splits.train = f;
      } else if (!splits.dev && name.find("dev") != std::string::npos) {
        splits.dev = f;
      }
    }
    if (splits.train.empty()) {
      throw DataError("--data: no *train*.jsonl or *train*.tsv file in " +
                      data[0]);
    }
    return splits;
  }
  for (const auto& p : data) {
    if (!fs::exists(p)) throw DataError("--data: no such file " + p);
  }
  DataSplits splits{data[0], std::nullopt};
  if (data.size() > 1) splits.dev = data[1];
  return splits;
}

std::size_t embedding_width(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("--embeddings: cannot open " + path.string());
  std::string line;
  while (std::getline(in, line)) {
    std::istringstream fields(line);
    std::string field;
    std::size_t count = 0;
    while (fields >> field) ++count;
    if (count == 0) continue;
    if (count < 2) {
      throw ParseError("embedding row has no vector components", 1);
    }
    return count - 1;
  }
  throw DataError("--embeddings: " + path.string() + " is empty");
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out << text << '\n';
  if (!out) throw DataError("write failed for " + path.string());
}

std::string format_fixed(double value, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, value);
  return buf;
}

template <typename T>
int train_impl(const TrainArgs& a, std::ostream& out, std::ostream& err) {
  const DataSplits splits = resolve_splits(a.data);
  const LoadResult train_data = load_corpus(splits.train, a.max_len);
  LoadResult dev_data;
  if (splits.dev) {
    dev_data = load_corpus(*splits.dev, a.max_len);
    if (dev_data.num_classes != train_data.num_classes) {
      throw ConfigError("train and dev corpora have different label sets");
    }
  } else {
    err << "no dev split given; selecting on the training split\n";
    dev_data = train_data;
  }
  if (train_data.pairs.empty()) throw DataError("training corpus is empty");
  if (dev_data.pairs.empty()) throw DataError("dev corpus is empty");
  err << "train " << splits.train.string() << ": " << train_data.kept
      << " pairs (" << train_data.dropped << " unlabeled dropped)\n";

  const fs::path emb_path = a.embeddings;
  const std::size_t embed_dim = embedding_width(emb_path);
  const auto embedded = scan_embedding_tokens(emb_path);
  const Vocab vocab = Vocab::build(train_data.pairs, 1, &embedded);

  EsimConfig config;
  config.variant = parse_variant(a.variant);
  config.vocab_size = vocab.size();
  config.embed_dim = embed_dim;
  config.hidden_dim = a.hidden_dim;
  config.attention_dim = a.hidden_dim;
  config.classifier_hidden = a.hidden_dim;
  config.num_classes = train_data.num_classes;
  config.dropout = a.dropout;
  config.validate();

  TrainConfig tc;
  tc.epochs = a.epochs;
  tc.batch_size = a.batch_size;
  tc.patience = a.patience;
  tc.seed = a.seed;
  tc.adam.lr = a.lr;
  tc.adam.max_grad_norm = a.max_grad_norm;
  tc.eval_threads = threads_from_env();
  if (tc.batch_size == 0) throw ConfigError("--batch-size must be positive");
  // Validates the optimizer settings before any data work is spent.
  (void)AdamState<T>::init({}, tc.adam);

  std::mt19937_64 init_rng(a.seed);
  EsimModel<T> model = EsimModel<T>::init(config, init_rng);
  EmbeddingLoad<T> emb = load_glove_text<T>(emb_path, vocab, embed_dim, init_rng);
  std::copy(emb.matrix.data().begin(), emb.matrix.data().end(),
            model.embedding.data().begin());
  err << "vocab " << vocab.size() << " tokens, " << emb.found
      << " with pre-trained vectors; " << model.parameter_count()
      << " parameters\n";

  const std::vector<IndexedPair> train_pairs = index_pairs(train_data.pairs, vocab);
  const std::vector<IndexedPair> dev_pairs = index_pairs(dev_data.pairs, vocab);
  tc.on_epoch = [&](std::size_t epoch, const EpochStats& s) {
    err << "epoch " << epoch + 1 << "/" << tc.epochs
        << " loss=" << format_fixed(s.train_loss, 6)
        << " dev_acc=" << format_fixed(s.dev_accuracy, 4) << "\n";
  };
  TrainOutcome<T> outcome = train(model, train_pairs, dev_pairs, tc);

  const fs::path out_dir = a.out;
  fs::create_directories(out_dir);
  save_checkpoint(out_dir / "best.ckpt", outcome.best, vocab,
                  &outcome.optimizer, &outcome.rng);
  write_text(out_dir / "report.json", outcome.report.to_json(false));
  nlohmann::json timing = nlohmann::json::array();
  for (const auto& e : outcome.report.epochs) timing.push_back(e.seconds);
  write_text(out_dir / "timing.json",
             nlohmann::json{{"epoch_seconds", timing}}.dump(2));
  out << "best_epoch=" << outcome.report.best_epoch
      << " dev_acc=" << format_fixed(outcome.report.best_dev_accuracy, 4)
      << " checkpoint=" << (out_dir / "best.ckpt").string() << "\n";
  return static_cast<int>(ExitCode::kOk);
}

template <typename T>
int eval_impl(const EvalArgs& a, std::ostream& out) {
  const Checkpoint<T> ckpt = load_checkpoint<T>(a.checkpoint);
  if (a.data.empty()) throw ConfigError("--data is required");
  if (a.batch_size == 0) throw ConfigError("--batch-size must be positive");
  for (const auto& path : a.data) {
    const LoadResult data = load_corpus(path, a.max_len);
    if (data.num_classes != ckpt.model.config.num_classes) {
      throw ConfigError("checkpoint has " +
                        std::to_string(ckpt.model.config.num_classes) +
                        " classes but " + path + " has " +
                        std::to_string(data.num_classes));
    }
    if (data.pairs.empty()) throw DataError(path + " holds no labeled pairs");
    const double acc = evaluate(ckpt.model, index_pairs(data.pairs, ckpt.vocab),
                                a.batch_size, threads_from_env());
    out << "acc=" << format_fixed(acc, 4);
    if (a.data.size() > 1) out << " data=" << path;
    out << "\n";
  }
  return static_cast<int>(ExitCode::kOk);
}

template <typename T>
int predict_impl(const PairArgs& a, std::ostream& out) {
  const Checkpoint<T> ckpt = load_checkpoint<T>(a.checkpoint);
  const LabeledPair pair = make_pair(a.premise, a.hypothesis, 0, a.max_len);
  const SequenceBatch p =
      SequenceBatch::from_sequences({ckpt.vocab.encode(pair.premise)});
  const SequenceBatch q =
      SequenceBatch::from_sequences({ckpt.vocab.encode(pair.hypothesis)});
  NoGradScope<T> no_grad;
  const Tensor<T> logits = forward(p, q, ckpt.model, ForwardMode::eval());
  const std::size_t classes = logits.dim(1);
  double top = -INFINITY;
  for (std::size_t c = 0; c < classes; ++c) {
    top = std::max(top, static_cast<double>(logits.at(0, c)));
  }
  std::vector<double> probs(classes);
  double total = 0.0;
  for (std::size_t c = 0; c < classes; ++c) {
    probs[c] = std::exp(static_cast<double>(logits.at(0, c)) - top);
    total += probs[c];
  }
  std::size_t best = 0;
  nlohmann::json names = nlohmann::json::array();
  for (std::size_t c = 0; c < classes; ++c) {
    probs[c] /= total;
    if (probs[c] > probs[best]) best = c;
    names.push_back(label_name(classes, static_cast<int>(c)));
  }
  const nlohmann::json j = {
      {"label", label_name(classes, static_cast<int>(best))},
      {"labels", names},
      {"probs", probs}};
  out << j.dump() << "\n";
  return static_cast<int>(ExitCode::kOk);
}

template <typename T>
int export_impl(const PairArgs& a, std::ostream& out) {
  const AlignDirection direction = parse_direction(a.direction);
  const Checkpoint<T> ckpt = load_checkpoint<T>(a.checkpoint);
  const LabeledPair pair = make_pair(a.premise, a.hypothesis, 0, a.max_len);
  const AlignmentExport e = export_alignment(
      pair.premise, ckpt.vocab.encode(pair.premise), pair.hypothesis,
      ckpt.vocab.encode(pair.hypothesis), ckpt.model, direction);
  if (a.out.empty()) {
    out << e.to_json() << "\n";
  } else {
    write_text(a.out, e.to_json());
    out << "wrote " << a.out << "\n";
  }
  return static_cast<int>(ExitCode::kOk);
}

int grad_check_impl(const GradCheckArgs& a, std::ostream& out) {
  SelfCheckOptions options;
  options.seed = a.seed;
  options.hidden_dim = a.hidden_dim;
  options.max_steps = a.steps;
  if (a.corrupt) options.grad.analytic_scale = 1.1;
  const std::vector<LayerCheck> checks = run_self_check(options);
  std::size_t failed = 0;
  for (const auto& c : checks) {
    const bool ok = c.result.max_rel_error < options.grad.tolerance;
    failed += ok ? 0 : 1;
    char line[160];
    std::snprintf(line, sizeof line,
                  "%-28s max_rel_err=%.3e elements=%zu kinks=%zu %s\n",
                  c.name.c_str(), c.result.max_rel_error, c.result.elements,
                  c.result.kinks, ok ? "PASS" : "FAIL");
    out << line;
  }
  out << "grad-check: " << checks.size() - failed << "/" << checks.size()
      << " passed (tolerance " << options.grad.tolerance << ")\n";
  return static_cast<int>(failed == 0 ? ExitCode::kOk : ExitCode::kNumeric);
}

bool checkpoint_is_f32(const std::string& path) {
  return inspect_checkpoint(path).dtype == DType::kF32;
}

void add_checkpoint(CLI::App* sub, std::string& target) {
  sub->add_option("--checkpoint", target, "Checkpoint written by train")
      ->required();
}

int dispatch(const std::vector<std::string>& args, std::ostream& out,
             std::ostream& err) {
  CLI::App app{"aESIM / ESIM natural language inference toolkit", "aesim"};
  app.require_subcommand(1);

  TrainArgs ta;
  CLI::App* train_cmd = app.add_subcommand("train", "Train a model");
  train_cmd->add_option("--variant", ta.variant, "esim or aesim")
      ->check(CLI::IsMember({"esim", "aesim"}))
      ->capture_default_str();
  train_cmd->add_option("--data", ta.data,
                        "Corpus directory, or train file then dev file")
      ->required();
  train_cmd->add_option("--embeddings", ta.embeddings,
                        "Word vectors in GloVe text format")
      ->required()
      ->check(CLI::ExistingFile);
  train_cmd->add_option("--out", ta.out, "Output directory")->required();
  train_cmd->add_option("--seed", ta.seed)->capture_default_str();
  train_cmd->add_option("--precision", ta.precision)
      ->check(CLI::IsMember({"f32", "f64"}))
      ->capture_default_str();
  train_cmd->add_option("--batch-size", ta.batch_size)->capture_default_str();
  train_cmd->add_option("--hidden-dim", ta.hidden_dim,
                        "Hidden, attention and classifier width")
      ->capture_default_str();
  train_cmd->add_option("--lr", ta.lr)->capture_default_str();
  train_cmd->add_option("--dropout", ta.dropout)->capture_default_str();
  train_cmd->add_option("--max-grad-norm", ta.max_grad_norm,
                        "Global gradient norm cap, 0 disables")
      ->capture_default_str();
  train_cmd->add_option("--epochs", ta.epochs)->capture_default_str();
  train_cmd->add_option("--patience", ta.patience,
                        "Epochs without dev improvement before stopping")
      ->capture_default_str();
  train_cmd->add_option("--max-len", ta.max_len)->capture_default_str();

  EvalArgs ea;
  CLI::App* eval_cmd = app.add_subcommand("eval", "Report accuracy");
  add_checkpoint(eval_cmd, ea.checkpoint);
  eval_cmd->add_option("--data", ea.data, "One or more corpus files")
      ->required()
      ->check(CLI::ExistingFile);
  eval_cmd->add_option("--batch-size", ea.batch_size)->capture_default_str();
  eval_cmd->add_option("--max-len", ea.max_len)->capture_default_str();

  PairArgs pa;
  CLI::App* predict_cmd =
      app.add_subcommand("predict", "Classify one sentence pair");
  CLI::App* export_cmd = app.add_subcommand(
      "export-attention", "Write soft-alignment weights as JSON");
  for (CLI::App* sub : {predict_cmd, export_cmd}) {
    add_checkpoint(sub, pa.checkpoint);
    sub->add_option("--premise", pa.premise)->required();
    sub->add_option("--hypothesis", pa.hypothesis)->required();
    sub->add_option("--max-len", pa.max_len)->capture_default_str();
  }
  export_cmd->add_option("--direction", pa.direction)
      ->check(CLI::IsMember({"premise_rows", "hypothesis_cols"}))
      ->capture_default_str();
  export_cmd->add_option("--out", pa.out, "Output file (stdout if omitted)");

  GradCheckArgs ga;
  CLI::App* grad_cmd = app.add_subcommand(
      "grad-check", "Finite-difference check of every op and layer");
  grad_cmd->add_option("--seed", ga.seed)->capture_default_str();
  grad_cmd->add_option("--hidden-dim", ga.hidden_dim)->capture_default_str();
  grad_cmd->add_option("--steps", ga.steps, "Longest sequence length")
      ->capture_default_str();
  grad_cmd->add_flag("--corrupt-gradient", ga.corrupt)->group("");

  try {
    app.parse(std::vector<std::string>(args.rbegin(), args.rend()));
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : static_cast<int>(ExitCode::kUsage);
  }

  if (train_cmd->parsed()) {
    return ta.precision == "f32" ? train_impl<float>(ta, out, err)
                                 : train_impl<double>(ta, out, err);
  }
  if (eval_cmd->parsed()) {
    return checkpoint_is_f32(ea.checkpoint) ? eval_impl<float>(ea, out)
                                            : eval_impl<double>(ea, out);
  }
  if (predict_cmd->parsed()) {
    return checkpoint_is_f32(pa.checkpoint) ? predict_impl<float>(pa, out)
                                            : predict_impl<double>(pa, out);
  }
  if (export_cmd->parsed()) {
    return checkpoint_is_f32(pa.checkpoint) ? export_impl<float>(pa, out)
                                            : export_impl<double>(pa, out);
  }
  return grad_check_impl(ga, out);
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out,
            std::ostream& err) {
  auto fail = [&](ExitCode code, const char* kind, const std::exception& e) {
    err << "error (" << kind << "): " << e.what() << "\n";
    return static_cast<int>(code);
  };
  try {
    return dispatch(args, out, err);
  } catch (const ConfigError& e) {
    return fail(ExitCode::kUsage, "config", e);
  } catch (const ContractError& e) {
    return fail(ExitCode::kUsage, "contract", e);
  } catch (const DimensionError& e) {
    return fail(ExitCode::kUsage, "dimension", e);
  } catch (const InvalidMaskError& e) {
    return fail(ExitCode::kUsage, "mask", e);
  } catch (const DataError& e) {
    return fail(ExitCode::kData, "data", e);
  } catch (const CheckpointError& e) {
    return fail(ExitCode::kData, "checkpoint", e);
  } catch (const NumericError& e) {
    return fail(ExitCode::kNumeric, "numeric", e);
  } catch (const fs::filesystem_error& e) {
    return fail(ExitCode::kData, "filesystem", e);
  } catch (const std::exception& e) {
    return fail(ExitCode::kUsage, "unexpected", e);
  }
}

}  // namespace aesim
