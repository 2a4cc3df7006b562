// Acceptance check: one PASS/FAIL line per criterion, exit status 1 if any
// criterion fails. Tolerances and sizes are fixed here.

#include <Eigen/Dense>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <random>
#include <sstream>

#include "cli_pipeline.hpp"
#include "oracles.hpp"
#include "srcbias/srcbias.hpp"

using namespace srcbias;

namespace {

constexpr double kDeltaTol = 0.05;
constexpr double kMetricTol = 1e-12;
constexpr double kLexicalTol = 1e-9;
constexpr double kSvdTol = 1e-8;
constexpr double kGradTol = 1e-4;
constexpr double kTheoremTol = 1e-10;
constexpr double kPplTol = 1e-12;

struct Outcome {
  bool pass = true;
  std::string detail;
};

// Collects the first few failure messages of a check.
class Failures {
 public:
  void add(const std::string& msg) {
    if (count_++ < 3) out_ << (out_.tellp() > 0 ? "; " : "") << msg;
  }
  bool any() const { return count_ > 0; }
  Outcome outcome(const std::string& ok_detail) const {
    if (!any()) return {true, ok_detail};
    return {false, std::to_string(count_) + " failure(s): " + out_.str()};
  }

 private:
  std::size_t count_ = 0;
  std::ostringstream out_;
};

std::string fmt(double x) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.4g", x);
  return buf;
}

// ---------------------------------------------------------------------------

Outcome relative_delta_pairs() {
  struct Pair {
    const char* label;
    double h, g, published;
  };
  const Pair pairs[] = {
      {"SciFact TF-IDF NDCG@1", 22.0, 17.0, 25.6},    {"SciFact TF-IDF MAP@1", 21.2, 16.2, 26.7},
      {"SciFact BM25 NDCG@1", 26.7, 21.0, 23.9},      {"SciFact BM25 MAP@1", 25.7, 19.6, 26.9},
      {"SciFact ANCE NDCG@1", 15.3, 24.7, -47.0},     {"SciFact ANCE MAP@1", 14.2, 23.3, -48.5},
      {"SciFact BERM NDCG@1", 16.3, 23.7, -37.0},     {"SciFact BERM MAP@1", 15.7, 21.7, -32.1},
      {"SciFact TAS-B NDCG@1", 20.0, 31.7, -45.3},    {"SciFact TAS-B MAP@1", 19.5, 29.7, -41.5},
      {"SciFact Contriever NDCG@1", 24.0, 31.0, -25.5}, {"SciFact Contriever MAP@1", 23.3, 29.6, -23.8},
      {"NQ TF-IDF NDCG@1", 7.1, 3.4, 70.5},           {"NQ TF-IDF MAP@1", 7.1, 3.4, 70.5},
      {"NQ BM25 NDCG@1", 7.2, 6.1, 16.5},             {"NQ BM25 MAP@1", 7.2, 6.1, 16.5},
      {"NQ ANCE NDCG@1", 22.2, 29.1, -26.9},          {"NQ ANCE MAP@1", 22.2, 29.1, -26.9},
      {"NQ BERM NDCG@1", 18.6, 31.6, -51.8},          {"NQ BERM MAP@1", 18.6, 31.6, -51.8},
      {"NQ TAS-B NDCG@1", 25.7, 27.6, -7.1},          {"NQ TAS-B MAP@1", 25.7, 27.6, -7.1},
      {"NQ Contriever NDCG@1", 25.9, 32.5, -22.6},    {"NQ Contriever MAP@1", 25.9, 32.5, -22.6},
      {"rerank Llama2 BM25", 26.7, 21.0, 23.9},       {"rerank Llama2 MiniLM", 21.3, 32.7, -42.2},
      {"rerank Llama2 monoT5", 19.7, 39.7, -67.3},    {"rerank ChatGPT BM25", 24.3, 24.3, 0.0},
      {"rerank ChatGPT MiniLM", 18.3, 35.7, -64.4},   {"rerank ChatGPT monoT5", 21.3, 39.3, -59.4},
  };
  Failures f;
  double worst = 0;
  for (const auto& p : pairs) {
    const double d = eval::relative_delta(p.h, p.g);
    worst = std::max(worst, std::abs(d - p.published));
    if (std::abs(d - p.published) > kDeltaTol) f.add(std::string(p.label) + " -> " + fmt(d));
  }
  return f.outcome(std::to_string(std::size(pairs)) + " pairs, max |error| " + fmt(worst));
}

Outcome masked_metric_oracle() {
  Failures f;
  // toy: ranking [d1@g, d1, x], positives {d1, d1@g}
  {
    const Corpus corpus({SourcedDocument{"d1", "", "a", Source::Human, {}, {}},
                         SourcedDocument{"x", "", "b", Source::Human, {}, {}},
                         SourcedDocument{"d1@g", "", "c", Source::Generated, "g", "d1"}});
    QrelSet qrels;
    qrels.add("q1", "d1", 1);
    qrels.add("q1", "d1@g", 1);
    const RunList run{"q1", {{"d1@g", 3.0, 1}, {"d1", 2.0, 2}, {"x", 1.0, 3}}};
    const auto src = eval::source_lookup(corpus);
    using eval::Metric;
    auto m = [&](Source s, Metric mt, std::size_t k) { return eval::masked_metric(run, qrels, src, s, mt, k); };
    if (m(Source::Human, Metric::Ndcg, 1) != 0.0 || m(Source::Human, Metric::Map, 1) != 0.0) f.add("toy human@1");
    if (m(Source::Generated, Metric::Ndcg, 1) != 1.0 || m(Source::Generated, Metric::Map, 1) != 1.0)
      f.add("toy generated@1");
    if (std::abs(m(Source::Human, Metric::Ndcg, 3) - 1.0 / std::log2(3.0)) > kMetricTol) f.add("toy human NDCG@3");
    if (m(Source::Human, Metric::Map, 3) != 0.5) f.add("toy human MAP@3");
  }
  std::mt19937_64 rng(1234);
  double worst = 0;
  for (int i = 0; i < 1000; ++i) {
    const auto in = oracle::random_metric_instance(rng);
    const auto fx = oracle::to_fixture(in);
    const auto src = eval::source_lookup(fx.corpus);
    for (std::size_t k : {1, 3, 5})
      for (bool gen : {false, true}) {
        const auto s = gen ? Source::Generated : Source::Human;
        const double dn = std::abs(eval::masked_metric(fx.run, fx.qrels, src, s, eval::Metric::Ndcg, k) -
                                   oracle::ndcg(in, gen, k));
        const double dm = std::abs(eval::masked_metric(fx.run, fx.qrels, src, s, eval::Metric::Map, k) -
                                   oracle::map(in, gen, k));
        worst = std::max({worst, dn, dm});
        if (dn > kMetricTol || dm > kMetricTol) f.add("instance " + std::to_string(i) + " k=" + std::to_string(k));
      }
  }
  return f.outcome("toy exact, 1000 instances, max |error| " + fmt(worst));
}

Outcome lexical_oracle() {
  Failures f;
  std::mt19937_64 rng(2024);
  std::uniform_real_distribution<double> k1d(0.5, 2.0), bd(0.0, 1.0);
  double worst = 0;
  int corpora = 0;
  while (corpora < 20) {
    const auto texts = oracle::random_texts(rng, 1 + rng() % 10);
    bool any = false;
    for (const auto& t : texts) any = any || !text::tokenize(t).empty();
    if (!any) continue;
    ++corpora;
    const auto idx = retrieval::LexicalIndex::build(oracle::corpus_of(texts));
    const oracle::Lexical o(texts);
    for (int q = 0; q < 5; ++q) {
      const retrieval::Bm25Params p = q == 0 ? retrieval::Bm25Params{} : retrieval::Bm25Params{k1d(rng), bd(rng)};
      const auto qtext = oracle::random_texts(rng, 1)[0] + " t" + std::to_string(rng() % 8);
      const auto qt = retrieval::query_terms(qtext);
      const auto bm = retrieval::score_all(idx, qt, retrieval::LexicalModel::Bm25, p);
      const auto tf = retrieval::score_all(idx, qt, retrieval::LexicalModel::TfIdf);
      for (std::size_t d = 0; d < texts.size(); ++d) {
        const double eb = std::abs(bm[d] - o.bm25(text::tokenize(qtext), d, p.k1, p.b));
        const double et = std::abs(tf[d] - o.tfidf(text::tokenize(qtext), d));
        worst = std::max({worst, eb, et});
        if (eb > kLexicalTol || et > kLexicalTol) f.add("corpus " + std::to_string(corpora) + " doc " + std::to_string(d));
      }
    }
  }
  // equal scores rank by ascending doc id, whatever the corpus order
  const Corpus tie({SourcedDocument{"d3", "", "same", Source::Human, {}, {}},
                    SourcedDocument{"d1", "", "same", Source::Human, {}, {}},
                    SourcedDocument{"d2", "", "same", Source::Human, {}, {}}});
  const auto tidx = retrieval::LexicalIndex::build(tie);
  for (auto m : {retrieval::LexicalModel::Bm25, retrieval::LexicalModel::TfIdf}) {
    const auto runs = retrieval::search_lexical(tidx, {Query{"q", "same"}}, m, 3);
    const auto& e = runs.at(0).entries;
    if (e.size() != 3 || e[0].doc_id != "d1" || e[1].doc_id != "d2" || e[2].doc_id != "d3") f.add("tie-break order");
  }
  return f.outcome("20 corpora x 5 queries, max |error| " + fmt(worst) + ", ties by doc id");
}

Outcome svd_oracle() {
  Failures f;
  std::mt19937_64 rng(77);
  std::normal_distribution<double> nd;
  double worst = 0, worst_fro = 0;
  for (int t = 0; t < 50; ++t) {
    const std::size_t n = 1 + rng() % 200, d = 1 + rng() % 64;
    std::vector<double> m(n * d);
    for (auto& x : m) x = nd(rng);
    const auto got = compression::singular_values(m, n, d).singular_values;

    // reference: eigenvalues of the same Gram matrix from Eigen's solver
    Eigen::MatrixXd e(n, d);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < d; ++j) e(i, j) = m[i * d + j];
    const Eigen::MatrixXd gram = n >= d ? Eigen::MatrixXd(e.transpose() * e) : Eigen::MatrixXd(e * e.transpose());
    Eigen::VectorXd ev = Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(gram, Eigen::EigenvaluesOnly).eigenvalues();
    std::vector<double> want(ev.data(), ev.data() + ev.size());
    std::sort(want.rbegin(), want.rend());
    for (auto& x : want) x = std::sqrt(std::max(x, 0.0));
    if (got.size() != want.size()) {
      f.add("matrix " + std::to_string(t) + " length");
      continue;
    }
    for (std::size_t i = 0; i < got.size(); ++i) {
      const double rel = std::abs(got[i] - want[i]) / want[0];
      worst = std::max(worst, rel);
      if (rel > kSvdTol) f.add("matrix " + std::to_string(t) + " sigma " + std::to_string(i));
    }
    double fro = 0, s2 = 0;
    for (double x : m) fro += x * x;
    for (double x : got) s2 += x * x;
    worst_fro = std::max(worst_fro, std::abs(s2 - fro) / fro);
    if (std::abs(s2 - fro) > kSvdTol * fro) f.add("matrix " + std::to_string(t) + " Frobenius");
  }
  return f.outcome("50 matrices, max rel error " + fmt(worst) + ", Frobenius " + fmt(worst_fro));
}

Outcome gradient_check() {
  Failures f;
  const auto data = debias::make_synthetic();
  const auto& set = data.train;
  double worst = 0;
  for (std::uint64_t probe = 1; probe <= 20; ++probe) {
    std::mt19937_64 rng(probe);
    std::vector<std::size_t> all(set.size());
    std::iota(all.begin(), all.end(), 0);
    std::shuffle(all.begin(), all.end(), rng);
    const std::vector<std::size_t> batch(all.begin(), all.begin() + 8);
    const auto head = debias::init_head(set.dim(), set.dim(), probe, 0.1);
    for (double alpha : {0.0, 1e-3, 1.0}) {
      const double err = debias::gradient_check(head, set, batch, alpha, 1e-5);
      worst = std::max(worst, err);
      if (!(err < kGradTol)) f.add("probe " + std::to_string(probe) + " alpha " + fmt(alpha) + ": " + fmt(err));
    }
  }
  return f.outcome("20 probes x 3 alphas, max rel error " + fmt(worst));
}

struct SweepOutcome {
  Outcome sweep, non_degradation;
};

SweepOutcome debias_sweep() {
  const auto data = debias::make_synthetic();  // seed 42, dim 32, 200/100
  const debias::TrainConfig base;
  const auto zero = debias::evaluate_head(debias::train(data.train, base).head, data.test);
  const double d0 = zero.mixed.at(eval::Metric::Ndcg, 1).relative_delta;
  const auto& grid = debias::default_alpha_grid();
  const auto rows = debias::alpha_sweep(data.train, data.test, base, grid, 1);

  std::vector<double> deltas;
  std::string trend;
  for (const auto& r : rows) {
    deltas.push_back(r.result.mixed.at(eval::Metric::Ndcg, 1).relative_delta);
    trend += (trend.empty() ? "" : ", ") + fmt(deltas.back());
  }
  const double rho = debias::spearman(grid, deltas);
  const bool sign_change = *std::min_element(deltas.begin(), deltas.end()) < 0.0 &&
                           *std::max_element(deltas.begin(), deltas.end()) > 0.0;
  const double decades = std::log10(grid.back() / grid.front());

  SweepOutcome out;
  Failures f;
  if (!(d0 <= -10.0)) f.add("alpha=0 delta " + fmt(d0) + " > -10");
  if (!(rho >= 0.9)) f.add("spearman " + fmt(rho) + " < 0.9");
  if (!sign_change) f.add("no sign change");
  if (decades < 3.0) f.add("grid spans " + fmt(decades) + " decades");
  out.sweep = f.outcome("alpha=0 delta " + fmt(d0) + "; deltas [" + trend + "]; spearman " + fmt(rho));

  // best alpha: the one closest to parity
  std::size_t best = 0;
  for (std::size_t i = 1; i < deltas.size(); ++i)
    if (std::abs(deltas[i]) < std::abs(deltas[best])) best = i;
  const double h0 = 100.0 * zero.human_only_ndcg1, hb = 100.0 * rows[best].result.human_only_ndcg1;
  out.non_degradation = {hb >= h0 - 2.0, "best alpha " + fmt(grid[best]) + ": human-only NDCG@1 " + fmt(hb) +
                                             " vs alpha=0 " + fmt(h0)};
  return out;
}

Outcome theorem_check() {
  Failures f;
  std::mt19937_64 rng(42);
  double worst_gap = -1e300, worst_identity = 0;
  for (int i = 0; i < 100; ++i) {
    const auto inst = theorem::sample_instance(rng, 4, 5);
    const auto r = theorem::verify_theorem(inst);
    worst_gap = std::max(worst_gap, r.expectation);
    if (!(r.expectation <= kTheoremTol)) f.add("instance " + std::to_string(i) + " E = " + fmt(r.expectation));
    for (const auto& step : theorem::verify_proof_chain(inst)) {
      if (!step.holds) f.add("instance " + std::to_string(i) + ": " + step.label);
      if (step.equality) {
        worst_identity = std::max(worst_identity, std::abs(step.lhs - step.rhs));
        if (std::abs(step.lhs - step.rhs) > kTheoremTol) f.add("instance " + std::to_string(i) + " KL identity");
      }
    }
  }
  return f.outcome("100 instances (V=4, S=5), max E " + fmt(worst_gap) + ", max identity gap " + fmt(worst_identity));
}

Outcome ppl_arithmetic() {
  Failures f;
  double worst = 0;
  for (std::size_t v = 1; v <= 64; ++v) {
    const double lnv = std::log(static_cast<double>(v));
    for (std::size_t len : {1, 7, 100}) {
      const std::vector<double> lp(len, -lnv);
      const double e = std::abs(compression::perplexity(lp) - lnv);
      worst = std::max(worst, e);
      if (e > kPplTol) f.add("V=" + std::to_string(v) + " len " + std::to_string(len));
    }
    if (v <= 4) {
      const auto t = theorem::detail::uniform_table(v, 3);
      if (std::abs(theorem::ppl_under(t, std::vector<int>{0, 0, 0}) - lnv) > kPplTol) f.add("uniform table V=" + std::to_string(v));
    }
  }
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(-10.0, 0.0);
  for (int t = 0; t < 1000; ++t) {
    std::vector<double> lp(2 + rng() % 50);
    for (auto& x : lp) x = u(rng);
    const std::size_t cut = 1 + rng() % (lp.size() - 1);
    const std::span<const double> all(lp), a = all.first(cut), b = all.subspan(cut);
    const double na = static_cast<double>(a.size()), nb = static_cast<double>(b.size());
    const double mix = (na * compression::perplexity(a) + nb * compression::perplexity(b)) / (na + nb);
    if (std::abs(compression::perplexity(all) - mix) > kPplTol) f.add("split " + std::to_string(t));
  }
  return f.outcome("uniform models max error " + fmt(worst) + ", 1000 random splits");
}

Outcome cli_determinism() {
  testutil::TempDir dir;
  if (auto e = pipeline::run_all(dir); !e.empty()) return {false, "first run failed: " + e};
  const auto first = pipeline::hashes(dir);
  if (auto e = pipeline::run_all(dir); !e.empty()) return {false, "second run failed: " + e};
  const auto second = pipeline::hashes(dir);
  Failures f;
  for (const auto& [name, h] : first)
    if (second.at(name) != h) f.add(name + " differs");
  return f.outcome(std::to_string(first.size()) + " files byte-identical across reruns");
}

}  // namespace

int main() {
  using clock = std::chrono::steady_clock;
  int failed = 0;
  auto report = [&](const char* name, const Outcome& o, double seconds, double limit) {
    const bool ok = o.pass && (limit <= 0 || seconds < limit);
    if (!ok) ++failed;
    std::string time = fmt(seconds) + " s";
    if (limit > 0) time += " (limit " + fmt(limit) + " s)";
    std::printf("%s  %-30s %s [%s]\n", ok ? "PASS" : "FAIL", name, o.detail.c_str(), time.c_str());
    std::fflush(stdout);
  };
  auto timed = [&](const char* name, const std::function<Outcome()>& fn, double limit = 0) {
    const auto t0 = clock::now();
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    report(name, o, std::chrono::duration<double>(clock::now() - t0).count(), limit);
  };

  timed("relative-delta reproduction", relative_delta_pairs, 1.0);
  timed("masked-metric oracle", masked_metric_oracle);
  timed("lexical oracle", lexical_oracle);
  timed("svd correctness", svd_oracle);
  timed("gradient check", gradient_check);
  {
    const auto t0 = clock::now();
    SweepOutcome s;
    try {
      s = debias_sweep();
    } catch (const std::exception& e) {
      s.sweep = s.non_degradation = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(clock::now() - t0).count();
    report("debias sweep", s.sweep, secs, 120.0);
    report("debias non-degradation", s.non_degradation, secs, 0);
  }
  timed("theorem verification", theorem_check, 60.0);
  timed("ppl arithmetic", ppl_arithmetic);
  timed("cli determinism", cli_determinism);

  std::printf("%s: %d criterion(s) failed\n", failed ? "FAILED" : "OK", failed);
  return failed ? 1 : 0;
}
