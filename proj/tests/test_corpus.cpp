#include <gtest/gtest.h>

#include <numeric>
#include <sstream>

#include "test_util.hpp"
#include "vismetric/corpus.hpp"

using namespace vismetric;
using testutil::TempDir;

namespace {

std::string record(const std::string& id, int refs, std::vector<int> judges = {3, 3, 4, 2, 3}) {
  nlohmann::json j{{"id", id}, {"source", nullptr}, {"hypothesis", "hyp " + id}, {"judge_scores", judges}};
  j["references"] = nlohmann::json::array();
  for (int r = 0; r < refs; ++r) j["references"].push_back("reference " + std::to_string(r) + " of " + id);
  return j.dump() + "\n";
}

}  // namespace

TEST(Tokenize, DefaultPolicy) {
  EXPECT_EQ(normalize_tokens("The cat sat."), (std::vector<std::string>{"the", "cat", "sat", "."}));
  EXPECT_TRUE(normalize_tokens("").empty());
  EXPECT_EQ(normalize_tokens("A  b"), (std::vector<std::string>{"a", "b"}));
  EXPECT_EQ(normalize_tokens(TextSnippet("Hello, World!")), (std::vector<std::string>{"hello", ",", "world", "!"}));
}

TEST(Tokenize, UnicodeWhitespaceAndCase) {
  EXPECT_EQ(normalize_tokens("ÄPFEL und Birnen"), (std::vector<std::string>{"äpfel", "und", "birnen"}));
  EXPECT_EQ(normalize_tokens("«Hi»"), (std::vector<std::string>{"«", "hi", "»"}));
}

TEST(Tokenize, WhitespacePolicyKeepsCase) {
  EXPECT_EQ(normalize_tokens("The cat.", TokenizationPolicy::kWhitespace), (std::vector<std::string>{"The", "cat."}));
  EXPECT_THROW(parse_tokenization_policy("bpe"), ValidationError);
}

TEST(Tokenize, IdempotentOnJoinedTokens) {
  for (const char* s : {"The cat sat.", "Hello, World! (again)", "x-y z'w"}) {
    const auto once = normalize_tokens(s);
    std::string joined;
    for (const auto& t : once) joined += (joined.empty() ? "" : " ") + t;
    EXPECT_EQ(normalize_tokens(joined), once) << s;
  }
}

TEST(HumanScore, Mean) {
  EvalExample ex;
  ex.judge_scores = {1, 2, 3, 4, 4};
  EXPECT_DOUBLE_EQ(mean_human_score(ex), 2.8);
  ex.judge_scores = {3, 3, 3, 3, 3};
  EXPECT_DOUBLE_EQ(mean_human_score(ex), 3.0);
  ex.judge_scores = {1, 4};
  EXPECT_DOUBLE_EQ(mean_human_score(ex), 2.5);
  ex.judge_scores = {};
  EXPECT_THROW(mean_human_score(ex), ValidationError);
}

TEST(HumanScore, PermutationInvariantAndBounded) {
  std::mt19937 rng(7);
  for (int trial = 0; trial < 200; ++trial) {
    EvalExample ex;
    ex.judge_scores.resize(1 + rng() % 7);
    for (auto& s : ex.judge_scores) s = 1 + static_cast<int>(rng() % 4);
    const double m = mean_human_score(ex);
    std::shuffle(ex.judge_scores.begin(), ex.judge_scores.end(), rng);
    EXPECT_EQ(mean_human_score(ex), m);
    EXPECT_GE(m, *std::min_element(ex.judge_scores.begin(), ex.judge_scores.end()));
    EXPECT_LE(m, *std::max_element(ex.judge_scores.begin(), ex.judge_scores.end()));
  }
}

TEST(LoadDataset, TwoThousandSingleReference) {
  TempDir dir("corpus");
  std::string body;
  for (int i = 0; i < 2000; ++i) body += record("wmt-" + std::to_string(i), 1);
  testutil::write_text(dir / "wmt19.jsonl", body);
  testutil::write_text(dir / "wmt19.manifest.json", R"({"name":"wmt19","task":"machine-translation","schema_version":1})");
  const auto ds = load_dataset(dir / "wmt19.jsonl");
  EXPECT_EQ(ds.size(), 2000u);
  EXPECT_DOUBLE_EQ(ds.mean_references(), 1.0);
  EXPECT_EQ(ds.name, "wmt19");
  EXPECT_EQ(ds.task, Task::kMachineTranslation);
}

TEST(LoadDataset, FractionalMeanReferences) {
  TempDir dir("corpus");
  // 5 examples with 3,5,8,10,11 references: mean 7.4
  std::string body;
  int id = 0;
  for (int n : {3, 5, 8, 10, 11}) body += record("e2e-" + std::to_string(id++), n);
  testutil::write_text(dir / "e2e.jsonl", body);
  testutil::write_text(dir / "e2e.manifest.json", R"({"name":"e2e","task":"data-to-text","schema_version":1})");
  const auto ds = load_dataset(dir / "e2e.jsonl");
  EXPECT_DOUBLE_EQ(ds.mean_references(), 7.4);
  EXPECT_EQ(ds.total_references(), 37u);
  EXPECT_EQ(ds.task, Task::kDataToText);
  EXPECT_EQ(ds.examples[3].references.size(), 10u);
}

TEST(LoadDataset, Errors) {
  TempDir dir("corpus");
  testutil::write_text(dir / "empty.jsonl", "");
  try {
    load_dataset(dir / "empty.jsonl");
    FAIL();
  } catch (const ValidationError& e) {
    EXPECT_NE(std::string(e.what()).find("empty dataset"), std::string::npos);
  }

  testutil::write_text(dir / "bad.jsonl", record("a", 1) + "{not json\n");
  try {
    load_dataset(dir / "bad.jsonl");
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 2u);
  }

  testutil::write_text(dir / "dup.jsonl", record("a", 1) + record("a", 2));
  EXPECT_THROW(load_dataset(dir / "dup.jsonl"), ValidationError);

  testutil::write_text(dir / "noref.jsonl", record("a", 0));
  EXPECT_THROW(load_dataset(dir / "noref.jsonl"), ValidationError);

  testutil::write_text(dir / "judge.jsonl", record("a", 1, {1, 5}));
  EXPECT_THROW(load_dataset(dir / "judge.jsonl"), ValidationError);

  testutil::write_text(dir / "blank.jsonl", R"({"id":"a","hypothesis":"   ","references":["x"],"judge_scores":[1]})" "\n");
  EXPECT_THROW(load_dataset(dir / "blank.jsonl"), ValidationError);

  EXPECT_THROW(load_dataset(dir / "missing.jsonl"), ValidationError);
}

TEST(LoadDataset, SaveRoundTrip) {
  TempDir dir("corpus");
  Dataset ds{"rt", Task::kSummarization, {}};
  ds.examples.push_back({"x1", std::string("Quelle phrase"), TextSnippet("a sentence"),
                         {TextSnippet("one ref"), TextSnippet("two ref ünïcode")}, {1, 2, 4}});
  ds.examples.push_back({"x2", std::nullopt, TextSnippet("another"), {TextSnippet("r")}, {}});
  save_dataset(ds, dir / "rt.jsonl");
  EXPECT_EQ(load_dataset(dir / "rt.jsonl"), ds);
}

TEST(TokenEstimate, Heuristic) {
  EXPECT_EQ(TextSnippet("a b c").token_estimate, 3);
  EXPECT_EQ(TextSnippet("internationalization").token_estimate, 4);  // 20 code points
  EXPECT_GE(TextSnippet("x").token_estimate, 1);
}
