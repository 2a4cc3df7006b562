#include <gtest/gtest.h>

#include <random>

#include "srcbias/corpus_store.hpp"
#include "test_util.hpp"

using namespace srcbias;
using testutil::TempDir;

namespace {

std::string random_word(std::mt19937_64& rng) {
  static const std::vector<std::string> alphabet{"a", "b", "c", "d", "e", "f", "g", "h", "i", "j",
                                                 " ", "\"", "\\", "\t", "/", "é", "日"};
  std::uniform_int_distribution<std::size_t> len(1, 8), ch(0, alphabet.size() - 1);
  std::string s;
  const auto n = len(rng);
  for (std::size_t i = 0; i < n; ++i) s += alphabet[ch(rng)];
  return s;
}

Corpus random_corpus(std::mt19937_64& rng, std::size_t n) {
  std::vector<SourcedDocument> docs;
  std::bernoulli_distribution gen(0.4);
  for (std::size_t i = 0; i < n; ++i) {
    SourcedDocument d;
    d.id = "d" + std::to_string(i);
    d.title = random_word(rng);
    d.text = random_word(rng) + " " + random_word(rng);
    docs.push_back(d);
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (!gen(rng)) continue;
    SourcedDocument g;
    g.id = docs[i].id + "@m";
    g.text = random_word(rng);
    g.source = Source::Generated;
    g.model_tag = "m";
    g.origin_id = docs[i].id;
    docs.push_back(g);
  }
  return Corpus(std::move(docs));
}

}  // namespace

TEST(Corpus, LoadsTwoLines) {
  TempDir dir;
  const auto p = dir.write("c.jsonl",
                           "{\"_id\":\"a\",\"title\":\"T\",\"text\":\"x\"}\n"
                           "{\"_id\":\"a@m\",\"text\":\"y\",\"source\":\"generated\",\"model\":\"m\",\"origin_id\":\"a\"}\n");
  const auto c = load_corpus(p);
  ASSERT_EQ(c.size(), 2u);
  EXPECT_EQ(c.documents()[0].id, "a");
  EXPECT_EQ(c.documents()[1].id, "a@m");
  EXPECT_EQ(c.at("a@m").source, Source::Generated);
  EXPECT_EQ(*c.at("a@m").origin_id, "a");
}

TEST(Corpus, GeneratedWithoutOriginNamesLine) {
  TempDir dir;
  const auto p = dir.write("c.jsonl",
                           "{\"_id\":\"a\",\"text\":\"x\"}\n\n"
                           "{\"_id\":\"b\",\"text\":\"y\",\"source\":\"generated\",\"model\":\"m\"}\n");
  try {
    load_corpus(p);
    FAIL();
  } catch (const InputError& e) {
    EXPECT_NE(std::string(e.what()).find(p + ":3"), std::string::npos) << e.what();
  }
}

TEST(Corpus, InvariantViolations) {
  TempDir dir;
  auto bad = [&](const std::string& content) {
    const auto p = dir.write("bad.jsonl", content);
    EXPECT_THROW(load_corpus(p), InputError) << content;
  };
  bad("{\"_id\":\"a\",\"text\":\"x\"}\n{\"_id\":\"a\",\"text\":\"y\"}\n");
  bad("{\"_id\":\"\",\"text\":\"x\"}\n");
  bad("{\"_id\":\"a\",\"text\":\"x\",\"origin_id\":\"b\"}\n");
  bad("{\"_id\":\"g\",\"text\":\"y\",\"source\":\"generated\",\"model\":\"m\",\"origin_id\":\"zz\"}\n");
  bad("{\"_id\":\"a\",\"text\":\"x\"}\n{\"_id\":\"g\",\"text\":\"y\",\"source\":\"generated\",\"model\":\"m\","
      "\"origin_id\":\"a\"}\n{\"_id\":\"g2\",\"text\":\"z\",\"source\":\"generated\",\"model\":\"m\",\"origin_id\":\"g\"}\n");
  bad("{\"_id\":\"a\",\"text\":\"x\",\"source\":\"robot\"}\n");
  bad("not json\n");
  bad("{\"_id\":\"a\"}\n");
}

TEST(Corpus, RoundTripRandom) {
  std::mt19937_64 rng(11);
  TempDir dir;
  for (int trial = 0; trial < 50; ++trial) {
    const auto c = random_corpus(rng, 1 + trial % 9);
    const auto p = dir.file("c.jsonl");
    write_corpus(c, p);
    const auto back = load_corpus(p);
    EXPECT_EQ(back.documents(), c.documents());
    EXPECT_EQ(format_corpus(back), read_file(p));
  }
}

TEST(Qrels, ParsesThreeAndFourColumns) {
  const auto q = parse_qrels("q1 d1 1\n", "x");
  EXPECT_EQ(q.grade("q1", "d1"), 1);
  EXPECT_EQ(q.size(), 1u);
  const auto q4 = parse_qrels("query-id\tcorpus-id\tscore\nq1\t0\td2\t2\nq2 0 d3 0\n", "x");
  EXPECT_EQ(q4.grade("q1", "d2"), 2);
  EXPECT_EQ(q4.grade("q2", "d3"), 0);
  EXPECT_FALSE(q4.grade("q1", "d3"));
}

TEST(Qrels, Errors) {
  EXPECT_THROW(parse_qrels("q1 d1 -1\n", "x"), InputError);
  EXPECT_THROW(parse_qrels("q1 d1 1\nq1 d1 2\n", "x"), InputError);
  EXPECT_THROW(parse_qrels("q1 d1\n", "x"), InputError);
  EXPECT_THROW(parse_qrels("q1 d1 1\nq2 d2 x\n", "x"), InputError);
  EXPECT_NO_THROW(parse_qrels("q1 d1 1\nq1 d1 1\n", "x"));
}

TEST(Qrels, UnionIsCommutativeAndAssociative) {
  std::mt19937_64 rng(3);
  std::uniform_int_distribution<int> qd(0, 4), g(0, 2);
  auto random_set = [&] {
    QrelSet s;
    for (int i = 0; i < 6; ++i) {
      const auto q = "q" + std::to_string(qd(rng)), d = "d" + std::to_string(qd(rng));
      // grades are a function of the key so that unions never conflict
      s.add(q, d, static_cast<int>((q[1] + d[1]) % 3));
    }
    return s;
  };
  for (int t = 0; t < 100; ++t) {
    const auto a = random_set(), b = random_set(), c = random_set();
    EXPECT_EQ(a.merged(b), b.merged(a));
    EXPECT_EQ(a.merged(b).merged(c), a.merged(b.merged(c)));
  }
  QrelSet x, y;
  x.add("q", "d", 1);
  y.add("q", "d", 2);
  EXPECT_THROW(x.merged(y), InputError);
}

TEST(Qrels, RoundTripAndValidation) {
  TempDir dir;
  QrelSet q;
  q.add("q1", "a", 1);
  q.add("q1", "b", 0);
  q.add("q2", "a", 3);
  write_qrels(q, dir.file("q.tsv"));
  EXPECT_EQ(load_qrels(dir.file("q.tsv")), q);
  const Corpus c({SourcedDocument{"a", "", "x", Source::Human, {}, {}}});
  EXPECT_THROW(validate_qrels(q, c), InputError);
}

TEST(Run, FormatsTrecLines) {
  const std::vector<RunList> runs{{"q1", {{"a", 0.9, 1}, {"b", 0.5, 2}}}};
  EXPECT_EQ(format_run(runs, "tag"), "q1 Q0 a 1 0.9 tag\nq1 Q0 b 2 0.5 tag\n");
  EXPECT_THROW(format_run(runs, "two words"), InputError);
}

TEST(Run, RoundTripThousandEntries) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(-5, 5);
  std::vector<double> scores(1000);
  for (auto& s : scores) s = u(rng);
  std::sort(scores.begin(), scores.end(), std::greater<>());
  RunList run{"q", {}};
  for (int i = 0; i < 1000; ++i) run.entries.push_back({"d" + std::to_string(i), scores[i], i + 1});
  TempDir dir;
  write_run({run}, dir.file("r.txt"), "t");
  const auto back = load_run(dir.file("r.txt"));
  ASSERT_EQ(back.size(), 1u);
  EXPECT_EQ(back[0], run);
}

TEST(Run, RejectsGapsDuplicatesAndRisingScores) {
  EXPECT_THROW(parse_run("q1 Q0 a 1 1 t\nq1 Q0 b 3 0 t\n", "r"), InputError);
  EXPECT_THROW(parse_run("q1 Q0 a 1 1 t\nq1 Q0 a 2 0 t\n", "r"), InputError);
  EXPECT_THROW(parse_run("q1 Q0 a 1 1 t\nq1 Q0 b 2 2 t\n", "r"), InputError);
  EXPECT_THROW(parse_run("q1 Q0 a 1 1\n", "r"), InputError);
  EXPECT_NO_THROW(parse_run("q1 Q0 a 1 1 t\nq1 Q0 b 2 1 t\nq2 Q0 a 1 5 t\n", "r"));
}

TEST(Embeddings, DimensionMismatch) {
  TempDir dir;
  const auto p = dir.write("e.jsonl",
                           "{\"_id\":\"a\",\"vector\":[1,2,3,4,5,6,7,8]}\n"
                           "{\"_id\":\"b\",\"vector\":[1,2,3,4,5,6,7]}\n");
  try {
    load_embeddings(p);
    FAIL();
  } catch (const InputError& e) {
    EXPECT_NE(std::string(e.what()).find("dimension mismatch"), std::string::npos);
  }
}

TEST(Embeddings, RoundTripBitExact) {
  std::mt19937_64 rng(9);
  std::normal_distribution<double> n;
  EmbeddingSet set;
  for (int i = 0; i < 20; ++i) {
    std::vector<double> v(7);
    for (auto& x : v) x = n(rng) * std::pow(10.0, i % 7 - 3);
    set.add("e" + std::to_string(i), v);
  }
  TempDir dir;
  write_embeddings(set, dir.file("e.jsonl"));
  const auto back = load_embeddings(dir.file("e.jsonl"));
  ASSERT_EQ(back.ids(), set.ids());
  for (std::size_t i = 0; i < set.size(); ++i)
    for (std::size_t k = 0; k < 7; ++k) EXPECT_EQ(back.row(i)[k], set.row(i)[k]);
}

TEST(LogProbs, RejectsPositiveValues) {
  TempDir dir;
  EXPECT_THROW(load_logprobs(dir.write("l.jsonl", "{\"_id\":\"a\",\"logprobs\":[-1,0.5]}\n")), InputError);
  EXPECT_THROW(load_logprobs(dir.write("l.jsonl", "{\"_id\":\"a\",\"logprobs\":[]}\n")), InputError);
  const auto ok = load_logprobs(dir.write("l.jsonl", "{\"_id\":\"a\",\"logprobs\":[-1,0]}\n"));
  ASSERT_EQ(ok.size(), 1u);
  EXPECT_EQ(ok[0].token_count(), 2u);
  write_logprobs(ok, dir.file("l2.jsonl"));
  EXPECT_EQ(load_logprobs(dir.file("l2.jsonl")), ok);
}

TEST(Queries, RoundTripAndDuplicates) {
  TempDir dir;
  const std::vector<Query> qs{{"q1", "what is \"x\""}, {"q2", "y"}};
  write_queries(qs, dir.file("q.jsonl"));
  EXPECT_EQ(load_queries(dir.file("q.jsonl")), qs);
  EXPECT_THROW(load_queries(dir.write("d.jsonl", "{\"_id\":\"q\",\"text\":\"a\"}\n{\"_id\":\"q\",\"text\":\"b\"}\n")),
               InputError);
}

TEST(Loading, OrderStable) {
  const auto p = testutil::fixture("mini/corpus.jsonl");
  EXPECT_EQ(load_corpus(p).documents(), load_corpus(p).documents());
}
