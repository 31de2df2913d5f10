#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <iterator>
#include <set>
#include <sstream>

#include <json.hpp>
#include <unistd.h>

#include "aesim/cli.hpp"
#include "aesim/data.hpp"

namespace aesim {
namespace {

namespace fs = std::filesystem;

struct CliResult {
  int code = 0;
  std::string out;
  std::string err;
};

CliResult run(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  CliResult r;
  r.code = run_cli(args, out, err);
  r.out = out.str();
  r.err = err.str();
  return r;
}

std::string join(const std::vector<std::string>& tokens) {
  std::string s;
  for (const auto& t : tokens) s += (s.empty() ? "" : " ") + t;
  return s;
}

void write_corpus(const fs::path& path, const std::vector<LabeledPair>& pairs) {
  std::ofstream out(path);
  for (const auto& p : pairs) {
    const nlohmann::json j = {{"gold_label", label_name(3, p.label)},
                              {"sentence1", join(p.premise)},
                              {"sentence2", join(p.hypothesis)}};
    out << j.dump() << "\n";
  }
}

std::string file_text(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// One small corpus, embeddings file and trained checkpoint shared by the
// whole suite.
class CliTest : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    root_ = fs::temp_directory_path() / ("aesim_cli_" + std::to_string(::getpid()));
    fs::create_directories(root_ / "data");
    const auto corpus = make_synthetic_corpus(48, 12, 4);
    write_corpus(root_ / "data" / "train.jsonl",
                 std::vector<LabeledPair>(corpus.begin(), corpus.begin() + 36));
    write_corpus(root_ / "data" / "dev.jsonl",
                 std::vector<LabeledPair>(corpus.begin() + 36, corpus.end()));
    std::ofstream emb(root_ / "emb.txt");
    for (int i = 0; i < 12; i += 2) emb << "w" << i << " 0.1 -0.2 0.3 " << 0.05 * i << "\n";
    emb.close();
    first_ = run(train_args("run1"));
  }
  static void TearDownTestSuite() { fs::remove_all(root_); }

  static std::vector<std::string> train_args(const std::string& out) {
    return {"train",        "--variant",    "aesim",
            "--data",       (root_ / "data").string(),
            "--embeddings", (root_ / "emb.txt").string(),
            "--out",        (root_ / out).string(),
            "--hidden-dim", "4",
            "--epochs",     "2",
            "--batch-size", "8",
            "--seed",       "3"};
  }
  static std::string ckpt() { return (root_ / "run1" / "best.ckpt").string(); }

  static fs::path root_;
  static CliResult first_;
};

fs::path CliTest::root_;
CliResult CliTest::first_;

TEST_F(CliTest, TrainWritesArtifacts) {
  ASSERT_EQ(first_.code, 0) << first_.err;
  EXPECT_TRUE(fs::exists(root_ / "run1" / "best.ckpt"));
  EXPECT_TRUE(fs::exists(root_ / "run1" / "timing.json"));
  const auto report = nlohmann::json::parse(file_text(root_ / "run1" / "report.json"));
  EXPECT_EQ(report.at("epochs").size(), 2u);
  EXPECT_NE(first_.out.find("best_epoch="), std::string::npos);
}

TEST_F(CliTest, SameSeedGivesIdenticalArtifacts) {
  ASSERT_EQ(first_.code, 0);
  const CliResult again = run(train_args("run2"));
  ASSERT_EQ(again.code, 0) << again.err;
  EXPECT_EQ(file_text(root_ / "run1" / "report.json"),
            file_text(root_ / "run2" / "report.json"));
  EXPECT_EQ(file_text(root_ / "run1" / "best.ckpt"),
            file_text(root_ / "run2" / "best.ckpt"));
}

TEST_F(CliTest, MissingEmbeddingsIsNamed) {
  auto args = train_args("run3");
  args.erase(args.begin() + 5, args.begin() + 7);
  const CliResult r = run(args);
  EXPECT_NE(r.code, 0);
  EXPECT_NE((r.out + r.err).find("--embeddings"), std::string::npos) << r.out << r.err;
}

TEST_F(CliTest, ZeroHiddenDimIsUsageError) {
  auto args = train_args("run4");
  args[10] = "0";
  EXPECT_EQ(run(args).code, 1);
}

TEST_F(CliTest, TrainDefaults) {
  const CliResult r = run({"train", "--help"});
  EXPECT_EQ(r.code, 0);
  for (const char* expected : {"0.0005", "128", "300", "0.2", "f64"})
    EXPECT_NE(r.out.find(expected), std::string::npos) << expected << "\n" << r.out;
}

TEST_F(CliTest, UnknownSubcommandIsUsageError) {
  EXPECT_EQ(run({"fly"}).code, 1);
  EXPECT_EQ(run({}).code, 1);
}

TEST_F(CliTest, EvalPrintsAccuracyPerFile) {
  const std::string dev = (root_ / "data" / "dev.jsonl").string();
  const CliResult one = run({"eval", "--checkpoint", ckpt(), "--data", dev});
  ASSERT_EQ(one.code, 0) << one.err;
  EXPECT_EQ(one.out.rfind("acc=", 0), 0u) << one.out;
  const std::string train = (root_ / "data" / "train.jsonl").string();
  const CliResult two = run({"eval", "--checkpoint", ckpt(), "--data", dev, train});
  ASSERT_EQ(two.code, 0) << two.err;
  std::istringstream lines(two.out);
  std::string line;
  std::size_t count = 0;
  while (std::getline(lines, line)) {
    EXPECT_NE(line.find("data="), std::string::npos);
    ++count;
  }
  EXPECT_EQ(count, 2u);
}

TEST_F(CliTest, EvalClassCountMismatchIsUsageError) {
  const fs::path tsv = root_ / "quora.tsv";
  std::ofstream(tsv) << "0\t1\t2\tw1 w2\tw3 w4\t1\n";
  EXPECT_EQ(run({"eval", "--checkpoint", ckpt(), "--data", tsv.string()}).code, 1);
}

TEST_F(CliTest, CorruptCheckpointIsDataError) {
  const fs::path bad = root_ / "bad.ckpt";
  std::ofstream(bad) << "not a checkpoint";
  const std::string dev = (root_ / "data" / "dev.jsonl").string();
  EXPECT_EQ(run({"eval", "--checkpoint", bad.string(), "--data", dev}).code, 2);
}

TEST_F(CliTest, PredictProbabilitiesSumToOneDeterministically) {
  const std::vector<std::string> args = {"predict", "--checkpoint", ckpt(), "--premise",
                                         "w1 w2 w3", "--hypothesis", "w0 w2"};
  const CliResult a = run(args), b = run(args);
  ASSERT_EQ(a.code, 0) << a.err;
  EXPECT_EQ(a.out, b.out);
  const auto j = nlohmann::json::parse(a.out);
  double total = 0.0;
  for (double p : j.at("probs")) total += p;
  EXPECT_NEAR(total, 1.0, 1e-9);
  EXPECT_EQ(j.at("labels").size(), 3u);
}

TEST_F(CliTest, PredictEmptyPremiseIsDataError) {
  EXPECT_EQ(run({"predict", "--checkpoint", ckpt(), "--premise", "", "--hypothesis",
                 "w1"})
                .code,
            2);
}

TEST_F(CliTest, ExportAttentionBothDirections) {
  const std::string premise = "A woman with a green headscarf, blue shirt and a very big grin";
  const std::string hypothesis = "the woman is very happy";
  const CliResult rows = run({"export-attention", "--checkpoint", ckpt(), "--premise", premise,
                        "--hypothesis", hypothesis, "--direction", "premise_rows"});
  ASSERT_EQ(rows.code, 0) << rows.err;
  const auto jr = nlohmann::json::parse(rows.out);
  const auto& wr = jr.at("weights");
  EXPECT_EQ(wr.size(), jr.at("premise").size());
  for (const auto& row : wr) {
    double total = 0.0;
    for (double w : row) total += w;
    EXPECT_NEAR(total, 1.0, 1e-6);
  }

  const fs::path file = root_ / "cols.json";
  const CliResult cols = run({"export-attention", "--checkpoint", ckpt(), "--premise", premise,
                        "--hypothesis", hypothesis, "--direction", "hypothesis_cols",
                        "--out", file.string()});
  ASSERT_EQ(cols.code, 0) << cols.err;
  const auto jc = nlohmann::json::parse(file_text(file));
  const std::size_t h = jc.at("hypothesis").size();
  EXPECT_EQ(h, 5u);
  for (std::size_t j = 0; j < h; ++j) {
    double total = 0.0;
    for (const auto& row : jc.at("weights")) total += row.at(j).get<double>();
    EXPECT_NEAR(total, 1.0, 1e-6);
  }
}

TEST_F(CliTest, GradCheckListsEveryEntryOnce) {
  const CliResult r = run({"grad-check"});
  ASSERT_EQ(r.code, 0) << r.out;
  std::istringstream lines(r.out);
  std::string line;
  std::set<std::string> names;
  std::size_t entries = 0;
  while (std::getline(lines, line)) {
    if (line.find("max_rel_err=") == std::string::npos) continue;
    ++entries;
    names.insert(line.substr(0, line.find(' ')));
    EXPECT_NE(line.find("PASS"), std::string::npos) << line;
  }
  EXPECT_EQ(names.size(), entries);
  for (const char* n : {"layer.lstm_step", "layer.bilstm", "layer.word_attention",
                        "layer.direction_fusion", "layer.bialstm", "model.esim",
                        "model.aesim"})
    EXPECT_TRUE(names.count(n)) << n;
}

TEST_F(CliTest, GradCheckCatchesCorruptedGradient) {
  const CliResult r = run({"grad-check", "--corrupt-gradient"});
  EXPECT_EQ(r.code, 3);
  EXPECT_NE(r.out.find("FAIL"), std::string::npos);
}

}  // namespace
}  // namespace aesim
