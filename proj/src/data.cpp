#include "aesim/data.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <fstream>
#include <map>
#include <numeric>

#include <json.hpp>

namespace aesim {
namespace {

constexpr std::string_view kNliNames[] = {"entailment", "neutral",
                                          "contradiction"};
constexpr std::string_view kQuoraNames[] = {"not_duplicate", "duplicate"};

std::ifstream open_input(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  return in;
}

void strip_line_end(std::string& line) {
  while (!line.empty() && (line.back() == '\r' || line.back() == '\n')) {
    line.pop_back();
  }
}

std::vector<std::string_view> split(std::string_view text, char sep) {
  std::vector<std::string_view> fields;
  std::size_t start = 0;
  while (true) {
    const std::size_t pos = text.find(sep, start);
    if (pos == std::string_view::npos) {
      fields.push_back(text.substr(start));
      return fields;
    }
    fields.push_back(text.substr(start, pos - start));
    start = pos + 1;
  }
}

template <typename T>
bool parse_number(std::string_view field, T& out) {
  const char* end = field.data() + field.size();
  auto [ptr, ec] = std::from_chars(field.data(), end, out);
  return ec == std::errc() && ptr == end;
}

}  // namespace

std::string_view label_name(std::size_t num_classes, int label) {
  if (num_classes == 3 && label >= 0 && label < 3) return kNliNames[label];
  if (num_classes == 2 && label >= 0 && label < 2) return kQuoraNames[label];
  throw DataError("label " + std::to_string(label) + " invalid for " +
                  std::to_string(num_classes) + " classes");
}

std::optional<int> parse_label(std::size_t num_classes, std::string_view name) {
  if (num_classes == 3) {
    for (int i = 0; i < 3; ++i) {
      if (kNliNames[i] == name) return i;
    }
  } else if (num_classes == 2) {
    for (int i = 0; i < 2; ++i) {
      if (kQuoraNames[i] == name) return i;
    }
  }
  return std::nullopt;
}

std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> tokens;
  std::string current;
  auto flush = [&] {
    if (!current.empty()) tokens.push_back(std::move(current));
    current.clear();
  };
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (c < 0x80 && std::isspace(c)) {
      flush();
    } else if (c < 0x80 && std::ispunct(c)) {
      flush();
      tokens.emplace_back(1, ch);
    } else {
      current.push_back(c < 0x80 ? static_cast<char>(std::tolower(c)) : ch);
    }
  }
  flush();
  return tokens;
}

LabeledPair make_pair(std::string_view premise, std::string_view hypothesis,
                      int label, std::size_t max_len) {
  LabeledPair pair;
  pair.premise = tokenize(premise);
  pair.hypothesis = tokenize(hypothesis);
  pair.label = label;
  if (pair.premise.empty()) throw DataError("empty premise");
  if (pair.hypothesis.empty()) throw DataError("empty hypothesis");
  if (max_len > 0) {
    if (pair.premise.size() > max_len) pair.premise.resize(max_len);
    if (pair.hypothesis.size() > max_len) pair.hypothesis.resize(max_len);
  }
  return pair;
}

LoadResult load_snli_jsonl(const std::filesystem::path& path,
                           std::size_t max_len) {
  std::ifstream in = open_input(path);
  LoadResult result;
  result.num_classes = 3;
  std::string line;
  long line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    strip_line_end(line);
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    std::string gold, premise, hypothesis;
    try {
      const nlohmann::json j = nlohmann::json::parse(line);
      gold = j.at("gold_label").get<std::string>();
      premise = j.at("sentence1").get<std::string>();
      hypothesis = j.at("sentence2").get<std::string>();
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(path.filename().string() + ": " + e.what(), line_no);
    }
    if (gold == "-") {
      ++result.dropped;
      continue;
    }
    const std::optional<int> label = parse_label(3, gold);
    if (!label) {
      throw DataError(path.filename().string() + " line " +
                      std::to_string(line_no) + ": unknown label '" + gold +
                      "'");
    }
    try {
      result.pairs.push_back(make_pair(premise, hypothesis, *label, max_len));
    } catch (const DataError& e) {
      throw DataError(path.filename().string() + " line " +
                      std::to_string(line_no) + ": " + e.what());
    }
    ++result.kept;
  }
  return result;
}

LoadResult load_quora_tsv(const std::filesystem::path& path,
                          std::size_t max_len) {
  std::ifstream in = open_input(path);
  LoadResult result;
  result.num_classes = 2;
  std::string line;
  long line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    strip_line_end(line);
    if (line.empty()) continue;
    const auto fields = split(line, '\t');
    if (fields.size() != 6) {
      throw ParseError(path.filename().string() + ": expected 6 columns, got " +
                           std::to_string(fields.size()),
                       line_no);
    }
    if (line_no == 1 && fields[5] == "is_duplicate") continue;
    int flag = -1;
    if (!parse_number(fields[5], flag) || (flag != 0 && flag != 1)) {
      throw DataError(path.filename().string() + " line " +
                      std::to_string(line_no) + ": is_duplicate must be 0 or 1");
    }
    try {
      result.pairs.push_back(make_pair(fields[3], fields[4],
                                       flag == 1 ? kDuplicate : kNotDuplicate,
                                       max_len));
    } catch (const DataError& e) {
      throw DataError(path.filename().string() + " line " +
                      std::to_string(line_no) + ": " + e.what());
    }
    ++result.kept;
  }
  return result;
}

LoadResult load_corpus(const std::filesystem::path& path,
                       std::size_t max_len) {
  const std::string ext = path.extension().string();
  if (ext == ".jsonl") return load_snli_jsonl(path, max_len);
  if (ext == ".tsv") return load_quora_tsv(path, max_len);
  throw DataError("unrecognised corpus format: " + path.string() +
                  " (expected .jsonl or .tsv)");
}

Vocab::Vocab() {
  add("<pad>");
  add("<oov>");
}

Vocab Vocab::build(const std::vector<LabeledPair>& train, std::size_t min_freq,
                   const std::unordered_set<std::string>* embedded) {
  std::map<std::string, std::size_t> counts;
  for (const LabeledPair& pair : train) {
    for (const auto& tok : pair.premise) ++counts[tok];
    for (const auto& tok : pair.hypothesis) ++counts[tok];
  }
  std::vector<std::pair<std::string, std::size_t>> kept;
  for (const auto& [tok, n] : counts) {
    if (n >= min_freq || (embedded != nullptr && embedded->count(tok))) {
      kept.emplace_back(tok, n);
    }
  }
  std::stable_sort(kept.begin(), kept.end(), [](const auto& a, const auto& b) {
    return a.second > b.second;
  });
  Vocab vocab;
  for (const auto& entry : kept) vocab.add(entry.first);
  return vocab;
}

Vocab Vocab::from_tokens(const std::vector<std::string>& tokens) {
  if (tokens.size() < 2 || tokens[0] != "<pad>" || tokens[1] != "<oov>") {
    throw DataError("vocabulary must start with <pad>, <oov>");
  }
  Vocab vocab;
  for (std::size_t i = 2; i < tokens.size(); ++i) {
    if (vocab.contains(tokens[i])) {
      throw DataError("duplicate vocabulary token '" + tokens[i] + "'");
    }
    vocab.add(tokens[i]);
  }
  return vocab;
}

std::int32_t Vocab::add(const std::string& token) {
  auto it = index_.find(token);
  if (it != index_.end()) return it->second;
  const auto id = static_cast<std::int32_t>(tokens_.size());
  tokens_.push_back(token);
  index_.emplace(token, id);
  return id;
}

std::int32_t Vocab::index(const std::string& token) const {
  auto it = index_.find(token);
  return it == index_.end() ? kOov : it->second;
}

bool Vocab::contains(const std::string& token) const {
  return index_.count(token) != 0;
}

const std::string& Vocab::token(std::int32_t index) const {
  return tokens_.at(static_cast<std::size_t>(index));
}

std::vector<std::int32_t> Vocab::encode(
    const std::vector<std::string>& tokens) const {
  std::vector<std::int32_t> ids;
  ids.reserve(tokens.size());
  for (const auto& tok : tokens) ids.push_back(index(tok));
  return ids;
}

std::unordered_set<std::string> scan_embedding_tokens(
    const std::filesystem::path& path) {
  std::ifstream in = open_input(path);
  std::unordered_set<std::string> tokens;
  std::string line;
  while (std::getline(in, line)) {
    const std::size_t space = line.find(' ');
    if (space != std::string::npos && space > 0) {
      tokens.insert(line.substr(0, space));
    }
  }
  return tokens;
}

template <typename T>
EmbeddingLoad<T> load_glove_text(const std::filesystem::path& path,
                                 const Vocab& vocab, std::size_t dim,
                                 std::mt19937_64& rng, double oov_std) {
  if (dim == 0) throw ConfigError("embedding width must be positive");
  EmbeddingLoad<T> out;
  out.matrix = Tensor<T>::zeros({vocab.size(), dim}, true);
  auto rows = out.matrix.data();
  std::normal_distribution<double> gauss(0.0, oov_std);
  for (std::size_t i = dim; i < rows.size(); ++i) {
    rows[i] = static_cast<T>(gauss(rng));
  }

  std::ifstream in = open_input(path);
  std::vector<bool> seen(vocab.size(), false);
  std::string line;
  long line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    strip_line_end(line);
    while (!line.empty() && line.back() == ' ') line.pop_back();
    if (line.empty()) continue;
    const std::string_view view(line);
    const std::size_t space = view.find(' ');
    const std::string token(view.substr(0, space));
    const std::size_t width =
        space == std::string_view::npos
            ? 0
            : static_cast<std::size_t>(
                  std::count(view.begin() + space, view.end(), ' '));
    if (width != dim) {
      throw ParseError("embedding for token '" + token + "' has " +
                           std::to_string(width) + " values, expected " +
                           std::to_string(dim),
                       line_no);
    }
    if (!vocab.contains(token)) continue;
    const std::int32_t id = vocab.index(token);
    if (id == Vocab::kPad || seen[id]) continue;
    seen[id] = true;
    std::size_t start = space + 1;
    T* row = rows.data() + static_cast<std::size_t>(id) * dim;
    for (std::size_t k = 0; k < dim; ++k) {
      const std::size_t stop = std::min(view.find(' ', start), view.size());
      if (!parse_number(view.substr(start, stop - start), row[k])) {
        throw ParseError("embedding for token '" + token +
                             "' has a malformed value at position " +
                             std::to_string(k),
                         line_no);
      }
      start = stop + 1;
    }
    ++out.found;
  }
  return out;
}

std::vector<IndexedPair> index_pairs(const std::vector<LabeledPair>& pairs,
                                     const Vocab& vocab) {
  std::vector<IndexedPair> out;
  out.reserve(pairs.size());
  for (const LabeledPair& p : pairs) {
    if (p.premise.empty() || p.hypothesis.empty()) {
      throw DataError("pair with an empty sentence");
    }
    out.push_back({vocab.encode(p.premise), vocab.encode(p.hypothesis),
                   p.label});
  }
  return out;
}

std::vector<Batch> make_batches(const std::vector<IndexedPair>& pairs,
                                std::size_t batch_size,
                                std::optional<std::uint64_t> shuffle_seed) {
  if (pairs.empty()) throw ContractError("make_batches on an empty corpus");
  if (batch_size == 0) throw ConfigError("batch size must be positive");
  std::vector<std::size_t> order(pairs.size());
  std::iota(order.begin(), order.end(), 0);
  if (shuffle_seed) {
    std::mt19937_64 rng(*shuffle_seed);
    std::shuffle(order.begin(), order.end(), rng);
  }
  std::vector<Batch> batches;
  for (std::size_t start = 0; start < order.size(); start += batch_size) {
    const std::size_t stop = std::min(order.size(), start + batch_size);
    std::vector<std::vector<std::int32_t>> premises, hypotheses;
    Batch batch;
    for (std::size_t i = start; i < stop; ++i) {
      const IndexedPair& p = pairs[order[i]];
      premises.push_back(p.premise);
      hypotheses.push_back(p.hypothesis);
      batch.labels.push_back(p.label);
    }
    batch.premise = SequenceBatch::from_sequences(premises);
    batch.hypothesis = SequenceBatch::from_sequences(hypotheses);
    batches.push_back(std::move(batch));
  }
  return batches;
}

std::vector<Batch> make_batches(const std::vector<LabeledPair>& pairs,
                                const Vocab& vocab, std::size_t batch_size,
                                std::optional<std::uint64_t> shuffle_seed) {
  return make_batches(index_pairs(pairs, vocab), batch_size, shuffle_seed);
}

std::vector<LabeledPair> make_synthetic_corpus(std::size_t pairs,
                                               std::size_t words,
                                               std::uint64_t seed) {
  constexpr std::size_t kPremiseLen = 5;
  if (words < kPremiseLen + 3) {
    throw ConfigError("synthetic corpus needs at least 8 word types");
  }
  std::mt19937_64 rng(seed);
  auto word = [](std::size_t i) { return "w" + std::to_string(i); };
  std::vector<std::size_t> content(words - 1);
  std::iota(content.begin(), content.end(), 1);

  std::vector<LabeledPair> out;
  for (std::size_t n = 0; n < pairs; ++n) {
    std::shuffle(content.begin(), content.end(), rng);
    LabeledPair pair;
    pair.label = static_cast<int>(n % 3);
    for (std::size_t i = 0; i < kPremiseLen; ++i) {
      pair.premise.push_back(word(content[i]));
    }
    // content[0..5) is the premise, content[5..) is disjoint from it.
    std::uniform_int_distribution<std::size_t> inside(0, kPremiseLen - 1);
    std::uniform_int_distribution<std::size_t> outside(kPremiseLen,
                                                       content.size() - 1);
    switch (pair.label) {
      case kEntailment: {
        const std::size_t a = inside(rng);
        std::size_t b = inside(rng);
        while (b == a) b = inside(rng);
        pair.hypothesis = {word(content[a]), word(content[b])};
        break;
      }
      case kContradiction:
        pair.hypothesis = {word(0), word(content[inside(rng)])};
        break;
      default: {
        const std::size_t a = outside(rng);
        std::size_t b = outside(rng);
        while (b == a) b = outside(rng);
        pair.hypothesis = {word(content[a]), word(content[b])};
        break;
      }
    }
    out.push_back(std::move(pair));
  }
  return out;
}

template EmbeddingLoad<float> load_glove_text(const std::filesystem::path&,
                                              const Vocab&, std::size_t,
                                              std::mt19937_64&, double);
template EmbeddingLoad<double> load_glove_text(const std::filesystem::path&,
                                               const Vocab&, std::size_t,
                                               std::mt19937_64&, double);

}  // namespace aesim
