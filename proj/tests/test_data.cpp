#include <gtest/gtest.h>

#include <cstring>
#include <filesystem>
#include <fstream>
#include <random>
#include <set>

#include <unistd.h>

#include "aesim/data.hpp"
#include "aesim/errors.hpp"

namespace aesim {
namespace {

namespace fs = std::filesystem;

class TempDir {
 public:
  TempDir() {
    static int counter = 0;
    path_ = fs::temp_directory_path() /
            ("aesim_data_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    fs::create_directories(path_);
  }
  ~TempDir() { fs::remove_all(path_); }

  fs::path write(const std::string& name, const std::string& text) const {
    const fs::path p = path_ / name;
    std::ofstream(p, std::ios::binary) << text;
    return p;
  }

 private:
  fs::path path_;
};

std::string snli_line(const std::string& label, const std::string& s1,
                      const std::string& s2) {
  return R"({"gold_label": ")" + label + R"(", "sentence1": ")" + s1 +
         R"(", "sentence2": ")" + s2 + "\"}\n";
}

TEST(Tokenize, SplitsPunctuationAndLowercases) {
  EXPECT_EQ(tokenize("A dog is in the water."),
            (std::vector<std::string>{"a", "dog", "is", "in", "the", "water", "."}));
}

TEST(Tokenize, IdempotentOnJoinedOutput) {
  for (const char* text : {"A dog is in the water.", "Isn't it, really?!  Yes",
                           "  tabs\tand\nnewlines  "}) {
    const auto once = tokenize(text);
    std::string joined;
    for (const auto& t : once) joined += t + " ";
    EXPECT_EQ(tokenize(joined), once) << text;
  }
}

TEST(MakePair, EmptySentenceIsDataError) {
  EXPECT_THROW(make_pair("", "something", kNeutral), DataError);
  EXPECT_THROW(make_pair("something", "   ", kNeutral), DataError);
}

TEST(MakePair, TruncatesToMaxLen) {
  const auto p = make_pair("one two three four five", "six", kEntailment, 3);
  EXPECT_EQ(p.premise, (std::vector<std::string>{"one", "two", "three"}));
}

TEST(Labels, RoundTrip) {
  for (int l = 0; l < 3; ++l) EXPECT_EQ(parse_label(3, label_name(3, l)), l);
  for (int l = 0; l < 2; ++l) EXPECT_EQ(parse_label(2, label_name(2, l)), l);
  EXPECT_FALSE(parse_label(3, "maybe").has_value());
}

TEST(Snli, DropsDashLabelsAndCounts) {
  TempDir dir;
  const auto path = dir.write(
      "train.jsonl", snli_line("entailment", "A man sleeps.", "A person rests.") +
                         snli_line("-", "Two dogs run.", "Animals move.") +
                         snli_line("neutral", "A child plays.", "The child is happy."));
  const auto r = load_snli_jsonl(path);
  ASSERT_EQ(r.pairs.size(), 2u);
  EXPECT_EQ(r.kept, 2u);
  EXPECT_EQ(r.dropped, 1u);
  EXPECT_EQ(r.num_classes, 3u);
  EXPECT_EQ(r.pairs[0].label, kEntailment);
  EXPECT_EQ(r.pairs[1].label, kNeutral);
  EXPECT_EQ(r.pairs[0].premise,
            (std::vector<std::string>{"a", "man", "sleeps", "."}));
}

TEST(Snli, EmptyFileGivesEmptyCorpus) {
  TempDir dir;
  const auto r = load_snli_jsonl(dir.write("empty.jsonl", ""));
  EXPECT_TRUE(r.pairs.empty());
  EXPECT_EQ(r.dropped, 0u);
}

TEST(Snli, MalformedJsonCarriesLineNumber) {
  TempDir dir;
  const auto path = dir.write(
      "bad.jsonl", snli_line("entailment", "a b", "c d") + "{not json\n");
  try {
    load_snli_jsonl(path);
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 2);
  }
}

TEST(Snli, UnknownLabelIsDataError) {
  TempDir dir;
  const auto path = dir.write("odd.jsonl", snli_line("maybe", "a b", "c d"));
  EXPECT_THROW(load_snli_jsonl(path), DataError);
}

TEST(Snli, MissingFileIsDataError) {
  EXPECT_THROW(load_snli_jsonl("/nonexistent/aesim/train.jsonl"), DataError);
}

TEST(Quora, CountsPerClassAndSkipsHeader) {
  TempDir dir;
  const auto path = dir.write(
      "train.tsv",
      "id\tqid1\tqid2\tquestion1\tquestion2\tis_duplicate\n"
      "0\t1\t2\tHow do I learn C++?\tWhat is the best way to learn C++?\t1\n"
      "1\t3\t4\tWhat is rain?\tWho won the match?\t0\n"
      "2\t5\t6\tIs tea healthy?\tIs coffee healthy?\t0\n"
      "3\t7\t8\tHow tall is Everest?\tWhat is the height of Everest?\t1\n");
  const auto r = load_quora_tsv(path);
  EXPECT_EQ(r.num_classes, 2u);
  ASSERT_EQ(r.pairs.size(), 4u);
  std::size_t dup = 0, non = 0;
  for (const auto& p : r.pairs) (p.label == kDuplicate ? dup : non)++;
  EXPECT_EQ(dup, 2u);
  EXPECT_EQ(non, 2u);
  EXPECT_EQ(r.pairs[0].label, kDuplicate);
  EXPECT_EQ(label_name(2, r.pairs[0].label), "duplicate");
}

TEST(Quora, WrongColumnCountIsParseError) {
  TempDir dir;
  const auto path = dir.write("bad.tsv", "0\t1\t2\tq one\tq two\n");
  EXPECT_THROW(load_quora_tsv(path), ParseError);
}

TEST(Corpus, DispatchOnExtension) {
  TempDir dir;
  EXPECT_EQ(load_corpus(dir.write("a.jsonl", snli_line("contradiction", "x y", "z")))
                .num_classes,
            3u);
  EXPECT_EQ(load_corpus(dir.write("a.tsv", "0\t1\t2\tx y\tz\t0\n")).num_classes, 2u);
  EXPECT_THROW(load_corpus(dir.write("a.csv", "x")), DataError);
}

TEST(VocabTest, BuildOrderingAndSpecials) {
  const std::vector<LabeledPair> train = {
      make_pair("b a a", "c a", kEntailment), make_pair("b d", "e", kNeutral)};
  const Vocab v = Vocab::build(train, 1);
  EXPECT_EQ(v.token(Vocab::kPad), "<pad>");
  EXPECT_EQ(v.token(Vocab::kOov), "<oov>");
  EXPECT_EQ(v.tokens(),
            (std::vector<std::string>{"<pad>", "<oov>", "a", "b", "c", "d", "e"}));
  EXPECT_EQ(v.index("zzz"), Vocab::kOov);
}

TEST(VocabTest, MinFreqKeepsEmbeddedTokens) {
  const std::vector<LabeledPair> train = {make_pair("a a rare", "b b", kNeutral)};
  const std::unordered_set<std::string> embedded = {"rare"};
  const Vocab plain = Vocab::build(train, 2);
  EXPECT_FALSE(plain.contains("rare"));
  const Vocab with = Vocab::build(train, 2, &embedded);
  EXPECT_TRUE(with.contains("rare"));
}

TEST(VocabTest, TokenListRoundTrip) {
  const std::vector<LabeledPair> train = {make_pair("x y z", "y w", kEntailment)};
  const Vocab v = Vocab::build(train);
  const Vocab again = Vocab::from_tokens(v.tokens());
  EXPECT_EQ(again.tokens(), v.tokens());
  for (const auto& t : v.tokens()) EXPECT_EQ(again.index(t), v.index(t));
  EXPECT_THROW(Vocab::from_tokens({"x", "y"}), DataError);
}

struct GloveFixture {
  TempDir dir;
  Vocab vocab = Vocab::from_tokens({"<pad>", "<oov>", "cat", "dog", "emu", "fox"});
  fs::path file = dir.write("emb.txt",
                            "dog 0.125 -1.5 3.0625\n"
                            "unused 9 9 9\n"
                            "cat 1e-3 2.5 -0.75\n");
};

TEST(Glove, FoundRowsCopiedExactly) {
  GloveFixture fx;
  std::mt19937_64 rng(1);
  const auto load = load_glove_text<double>(fx.file, fx.vocab, 3, rng);
  EXPECT_EQ(load.found, 2u);
  const auto& m = load.matrix;
  EXPECT_EQ(m.shape(), (Shape{6, 3}));
  EXPECT_EQ(m.at(3, 0), 0.125);
  EXPECT_EQ(m.at(3, 1), -1.5);
  EXPECT_EQ(m.at(3, 2), 3.0625);
  EXPECT_EQ(m.at(2, 0), 1e-3);
  for (std::size_t k = 0; k < 3; ++k) EXPECT_EQ(m.at(0, k), 0.0);

  std::mt19937_64 rng_f(1);
  const auto single = load_glove_text<float>(fx.file, fx.vocab, 3, rng_f);
  EXPECT_EQ(single.matrix.at(2, 0), 1e-3f);
}

TEST(Glove, OovRowsReproducibleAndOrderIndependent) {
  GloveFixture fx;
  std::mt19937_64 r1(42), r2(42);
  const auto a = load_glove_text<double>(fx.file, fx.vocab, 3, r1);
  const fs::path shuffled = fx.dir.write("emb2.txt",
                                         "cat 1e-3 2.5 -0.75\n"
                                         "dog 0.125 -1.5 3.0625\n"
                                         "unused 9 9 9\n");
  const auto b = load_glove_text<double>(shuffled, fx.vocab, 3, r2);
  EXPECT_EQ(a.matrix.values(), b.matrix.values());
  bool nonzero = false;
  for (std::size_t k = 0; k < 3; ++k) nonzero |= a.matrix.at(4, k) != 0.0;
  EXPECT_TRUE(nonzero);
}

TEST(Glove, ShortRowNamesToken) {
  TempDir dir;
  std::string line = "kangaroo";
  for (int i = 0; i < 299; ++i) line += " 0.5";
  const auto path = dir.write("short.txt", line + "\n");
  const Vocab v = Vocab::from_tokens({"<pad>", "<oov>", "kangaroo"});
  std::mt19937_64 rng(3);
  try {
    load_glove_text<double>(path, v, 300, rng);
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    EXPECT_NE(std::string(e.what()).find("kangaroo"), std::string::npos) << e.what();
  }
}

TEST(Glove, ScanCollectsFirstFields) {
  GloveFixture fx;
  const auto tokens = scan_embedding_tokens(fx.file);
  EXPECT_EQ(tokens, (std::unordered_set<std::string>{"dog", "unused", "cat"}));
}

std::vector<IndexedPair> counted_pairs(std::size_t n) {
  std::vector<IndexedPair> pairs(n);
  for (std::size_t i = 0; i < n; ++i) {
    pairs[i].premise = {static_cast<std::int32_t>(2 + i % 7)};
    pairs[i].hypothesis = {3, static_cast<std::int32_t>(i)};
    pairs[i].label = static_cast<int>(i % 3);
  }
  return pairs;
}

TEST(Batches, SizesCoverCorpus) {
  const auto batches = make_batches(counted_pairs(300), 128, std::nullopt);
  ASSERT_EQ(batches.size(), 3u);
  EXPECT_EQ(batches[0].labels.size(), 128u);
  EXPECT_EQ(batches[1].labels.size(), 128u);
  EXPECT_EQ(batches[2].labels.size(), 44u);
}

TEST(Batches, PaddingToLongestWithMask) {
  std::vector<IndexedPair> pairs(2);
  pairs[0].premise = {2, 3, 4};
  pairs[1].premise = {5, 6, 7, 8, 9};
  pairs[0].hypothesis = pairs[1].hypothesis = {2};
  const auto batches = make_batches(pairs, 2, std::nullopt);
  ASSERT_EQ(batches.size(), 1u);
  const SequenceBatch& p = batches[0].premise;
  EXPECT_EQ(p.steps, 5u);
  std::size_t row0 = 0, row1 = 0;
  for (std::size_t t = 0; t < 5; ++t) {
    row0 += p.mask[t];
    row1 += p.mask[5 + t];
  }
  EXPECT_EQ(row0, 3u);
  EXPECT_EQ(row1, 5u);
  EXPECT_EQ(p.ids[3], Vocab::kPad);
  EXPECT_EQ(p.ids[4], Vocab::kPad);
}

TEST(Batches, SeededShuffleIsDeterministicPermutation) {
  const auto pairs = counted_pairs(50);
  const auto a = make_batches(pairs, 8, 17u);
  const auto b = make_batches(pairs, 8, 17u);
  const auto c = make_batches(pairs, 8, 18u);
  std::vector<std::int32_t> ka, kb, kc;
  for (const auto& bt : a)
    for (std::size_t i = 0; i < bt.labels.size(); ++i) ka.push_back(bt.hypothesis.ids[i * bt.hypothesis.steps + 1]);
  for (const auto& bt : b)
    for (std::size_t i = 0; i < bt.labels.size(); ++i) kb.push_back(bt.hypothesis.ids[i * bt.hypothesis.steps + 1]);
  for (const auto& bt : c)
    for (std::size_t i = 0; i < bt.labels.size(); ++i) kc.push_back(bt.hypothesis.ids[i * bt.hypothesis.steps + 1]);
  EXPECT_EQ(ka, kb);
  EXPECT_NE(ka, kc);
  EXPECT_EQ(std::set<std::int32_t>(ka.begin(), ka.end()).size(), 50u);
}

TEST(Batches, EmptyCorpusIsContractError) {
  EXPECT_THROW(make_batches(std::vector<IndexedPair>{}, 4, std::nullopt), ContractError);
}

TEST(Synthetic, BalancedDeterministicAndRuleConsistent) {
  const auto a = make_synthetic_corpus(60, 12, 5);
  const auto b = make_synthetic_corpus(60, 12, 5);
  ASSERT_EQ(a.size(), 60u);
  std::size_t counts[3] = {0, 0, 0};
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].premise, b[i].premise);
    EXPECT_EQ(a[i].hypothesis, b[i].hypothesis);
    ++counts[a[i].label];
    const std::set<std::string> prem(a[i].premise.begin(), a[i].premise.end());
    const auto& h = a[i].hypothesis;
    if (a[i].label == kEntailment) {
      for (const auto& w : h) EXPECT_TRUE(prem.count(w));
    } else if (a[i].label == kContradiction) {
      EXPECT_EQ(h.front(), "w0");
    } else {
      for (const auto& w : h) EXPECT_FALSE(prem.count(w));
    }
  }
  EXPECT_EQ(counts[0], 20u);
  EXPECT_EQ(counts[1], 20u);
  EXPECT_EQ(counts[2], 20u);
}

}  // namespace
}  // namespace aesim
