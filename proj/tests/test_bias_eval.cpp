#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <random>

#include "oracles.hpp"
#include "srcbias/bias_eval.hpp"
#include "test_util.hpp"

using namespace srcbias;
using namespace srcbias::eval;

namespace {

// Ranking [d1@g, d1, x] with positives {d1, d1@g}.
struct Toy {
  Corpus corpus{{SourcedDocument{"d1", "", "a", Source::Human, {}, {}},
                 SourcedDocument{"x", "", "b", Source::Human, {}, {}},
                 SourcedDocument{"d1@g", "", "c", Source::Generated, "g", "d1"}}};
  QrelSet qrels;
  RunList run{"q1", {{"d1@g", 3.0, 1}, {"d1", 2.0, 2}, {"x", 1.0, 3}}};
  Toy() {
    qrels.add("q1", "d1", 1);
    qrels.add("q1", "d1@g", 1);
  }
};

}  // namespace

TEST(MaskedMetric, TopDocumentMasking) {
  const Toy t;
  const auto src = source_lookup(t.corpus);
  EXPECT_EQ(masked_metric(t.run, t.qrels, src, Source::Human, Metric::Ndcg, 1), 0.0);
  EXPECT_EQ(masked_metric(t.run, t.qrels, src, Source::Human, Metric::Map, 1), 0.0);
  EXPECT_EQ(masked_metric(t.run, t.qrels, src, Source::Generated, Metric::Ndcg, 1), 1.0);
  EXPECT_EQ(masked_metric(t.run, t.qrels, src, Source::Generated, Metric::Map, 1), 1.0);
}

TEST(MaskedMetric, HandEvaluatedCutoffThree) {
  const Toy t;
  const auto src = source_lookup(t.corpus);
  EXPECT_NEAR(masked_metric(t.run, t.qrels, src, Source::Human, Metric::Ndcg, 3), 1.0 / std::log2(3.0), 1e-15);
  EXPECT_NEAR(masked_metric(t.run, t.qrels, src, Source::Human, Metric::Ndcg, 3), 0.6309, 5e-5);
  EXPECT_EQ(masked_metric(t.run, t.qrels, src, Source::Human, Metric::Map, 3), 0.5);
  EXPECT_THROW(masked_metric(t.run, t.qrels, src, Source::Human, Metric::Map, 0), InputError);
}

TEST(MaskedMetric, UnknownDocumentIsAnError) {
  const Toy t;
  RunList run{"q1", {{"zzz", 1.0, 1}}};
  EXPECT_THROW(masked_metric(run, t.qrels, source_lookup(t.corpus), Source::Human, Metric::Ndcg, 1), InputError);
}

TEST(MaskedMetric, BruteForceOracle) {
  std::mt19937_64 rng(101);
  for (int i = 0; i < 2000; ++i) {
    const auto in = oracle::random_metric_instance(rng);
    const auto f = oracle::to_fixture(in);
    const auto src = source_lookup(f.corpus);
    for (std::size_t k : {1, 2, 3, 5, 10}) {
      for (bool gen : {false, true}) {
        const auto target = gen ? Source::Generated : Source::Human;
        EXPECT_NEAR(masked_metric(f.run, f.qrels, src, target, Metric::Ndcg, k), oracle::ndcg(in, gen, k), 1e-12);
        EXPECT_NEAR(masked_metric(f.run, f.qrels, src, target, Metric::Map, k), oracle::map(in, gen, k), 1e-12);
      }
    }
  }
}

TEST(MaskedMetric, IdentityWhenAllPositivesAreTarget) {
  std::mt19937_64 rng(7);
  for (int i = 0; i < 300; ++i) {
    auto in = oracle::random_metric_instance(rng);
    for (auto& d : in.docs)
      if (d.grade > 0) d.generated = false;
    auto unmasked = in;
    for (auto& d : unmasked.docs) d.generated = false;
    const auto f = oracle::to_fixture(in);
    const auto src = source_lookup(f.corpus);
    for (std::size_t k : {1, 3, 5}) {
      EXPECT_NEAR(masked_metric(f.run, f.qrels, src, Source::Human, Metric::Ndcg, k), oracle::ndcg(unmasked, false, k),
                  1e-12);
      EXPECT_NEAR(masked_metric(f.run, f.qrels, src, Source::Human, Metric::Map, k), oracle::map(unmasked, false, k),
                  1e-12);
    }
  }
}

TEST(MaskedMetric, InsensitiveBelowCutoff) {
  std::mt19937_64 rng(8);
  for (int i = 0; i < 300; ++i) {
    const auto in = oracle::random_metric_instance(rng);
    for (std::size_t k : {1, 3, 5}) {
      if (in.ranking.size() <= k + 1) continue;
      auto shuffled = in;
      std::shuffle(shuffled.ranking.begin() + static_cast<std::ptrdiff_t>(k), shuffled.ranking.end(), rng);
      const auto a = oracle::to_fixture(in), b = oracle::to_fixture(shuffled);
      const auto sa = source_lookup(a.corpus), sb = source_lookup(b.corpus);
      for (auto m : {Metric::Ndcg, Metric::Map})
        for (auto s : {Source::Human, Source::Generated})
          EXPECT_EQ(masked_metric(a.run, a.qrels, sa, s, m, k), masked_metric(b.run, b.qrels, sb, s, m, k));
    }
  }
}

TEST(MaskedMetric, DcgSumOverSources) {
  std::mt19937_64 rng(9);
  for (int i = 0; i < 500; ++i) {
    const auto in = oracle::random_metric_instance(rng, false);
    const auto f = oracle::to_fixture(in);
    const auto src = source_lookup(f.corpus);
    const auto* j = f.qrels.judgments("q");
    const MaskedQrels h(j, src, Source::Human), g(j, src, Source::Generated);
    // unmasked: every document counts as the target source
    const SourceLookup all_human = [](const std::string&) { return Source::Human; };
    const MaskedQrels u(j, all_human, Source::Human);
    for (std::size_t k : {1, 3, 5})
      EXPECT_NEAR(masked_dcg(f.run, h, k) + masked_dcg(f.run, g, k), masked_dcg(f.run, u, k), 1e-12);
  }
}

TEST(RelativeDelta, PublishedPairs) {
  EXPECT_NEAR(relative_delta(22.0, 17.0), 25.6, 0.05);
  EXPECT_NEAR(relative_delta(15.3, 24.7), -47.0, 0.05);
  EXPECT_NEAR(relative_delta(19.7, 39.7), -67.3, 0.05);
}

TEST(RelativeDelta, Properties) {
  std::mt19937_64 rng(10);
  std::uniform_real_distribution<double> u(0.0, 1.0), c(1e-3, 1e3);
  for (int i = 0; i < 5000; ++i) {
    const double a = u(rng), b = u(rng), s = c(rng);
    const double d = relative_delta(a, b);
    EXPECT_EQ(d, -relative_delta(b, a));
    EXPECT_NEAR(relative_delta(s * a, s * b), d, 1e-9);
    EXPECT_GE(d, -200.0);
    EXPECT_LE(d, 200.0);
  }
  EXPECT_EQ(relative_delta(0.4, 0.4), 0.0);
  EXPECT_EQ(relative_delta(0.3, 0.0), 200.0);
  EXPECT_EQ(relative_delta(0.0, 0.3), -200.0);
  EXPECT_EQ(relative_delta(0.0, 0.0), 0.0);
  EXPECT_THROW(relative_delta(-0.1, 0.2), InputError);
  EXPECT_THROW(relative_delta(NAN, 0.2), InputError);
}

TEST(EvaluateRuns, ToyReport) {
  const Toy t;
  const auto r = evaluate_runs({t.run}, t.qrels, t.corpus);
  EXPECT_EQ(r.cutoffs, (std::vector<std::size_t>{1, 3, 5}));
  EXPECT_EQ(r.at(Metric::Ndcg, 1).human, 0.0);
  EXPECT_EQ(r.at(Metric::Ndcg, 1).generated, 1.0);
  EXPECT_EQ(r.at(Metric::Ndcg, 1).relative_delta, -200.0);
  EXPECT_NEAR(r.at(Metric::Ndcg, 3).human, 1.0 / std::log2(3.0), 1e-15);
  EXPECT_EQ(r.at(Metric::Map, 3).human, 0.5);
  EXPECT_EQ(r.at(Metric::Map, 1).generated, 1.0);
}

TEST(EvaluateRuns, PerfectHumanRun) {
  const Toy t;
  RunList run{"q1", {{"d1", 2.0, 1}, {"x", 1.0, 2}}};
  const auto r = evaluate_runs({run}, t.qrels, t.corpus);
  for (auto m : {Metric::Ndcg, Metric::Map})
    for (auto k : {1, 3, 5}) {
      EXPECT_EQ(r.at(m, k).human, 1.0);
      EXPECT_EQ(r.at(m, k).generated, 0.0);
      EXPECT_EQ(r.at(m, k).relative_delta, 200.0);
    }
}

TEST(EvaluateRuns, MissingQueriesCountAsZero) {
  Toy t;
  t.qrels.add("q2", "d1", 1);
  const auto r = evaluate_runs({t.run, RunList{"q9", {{"x", 1.0, 1}}}}, t.qrels, t.corpus);
  EXPECT_EQ(r.query_count, 2u);
  EXPECT_EQ(r.queries_without_run, std::vector<std::string>{"q2"});
  EXPECT_EQ(r.unjudged_run_queries, std::vector<std::string>{"q9"});
  EXPECT_EQ(r.at(Metric::Ndcg, 1).generated, 0.5);
}

TEST(EvaluateRuns, DeterministicAndThreadIndependent) {
  std::mt19937_64 rng(55);
  std::vector<SourcedDocument> docs;
  for (int i = 0; i < 30; ++i) docs.push_back({"h" + std::to_string(i), "", "x", Source::Human, {}, {}});
  for (int i = 0; i < 30; ++i) docs.push_back({"g" + std::to_string(i), "", "x", Source::Generated, "m", "h" + std::to_string(i)});
  const Corpus corpus(docs);
  QrelSet qrels;
  std::vector<RunList> runs;
  for (int q = 0; q < 40; ++q) {
    const auto qid = "q" + std::to_string(q);
    const int rel = static_cast<int>(rng() % 30);
    qrels.add(qid, "h" + std::to_string(rel), 1);
    qrels.add(qid, "g" + std::to_string(rel), 1);
    std::vector<std::size_t> order(60);
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    RunList r{qid, {}};
    for (int k = 0; k < 10; ++k) r.entries.push_back({docs[order[k]].id, 10.0 - k, k + 1});
    runs.push_back(r);
  }
  const auto a = report_json(evaluate_runs(runs, qrels, corpus, {1, 3, 5}, 1)).dump();
  const auto b = report_json(evaluate_runs(runs, qrels, corpus, {5, 3, 1, 3}, 6)).dump();
  EXPECT_EQ(a, b);
}

TEST(EvaluateRuns, Errors) {
  const Toy t;
  EXPECT_THROW(evaluate_runs({}, t.qrels, t.corpus), InputError);
  EXPECT_THROW(evaluate_runs({t.run}, t.qrels, t.corpus, {}), InputError);
  EXPECT_THROW(evaluate_runs({t.run, t.run}, t.qrels, t.corpus), InputError);
  EXPECT_THROW(evaluate_runs({t.run}, QrelSet{}, t.corpus), InputError);
}

TEST(RenderTable, PercentWithOneDecimal) {
  const Toy t;
  const auto table = render_table(evaluate_runs({t.run}, t.qrels, t.corpus));
  EXPECT_NE(table.find("NDCG@1"), std::string::npos);
  EXPECT_NE(table.find("100.0"), std::string::npos);
  EXPECT_NE(table.find("-200.0"), std::string::npos);
  EXPECT_NE(table.find("63.1"), std::string::npos);
}
