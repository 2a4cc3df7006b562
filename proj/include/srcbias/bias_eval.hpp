#pragma once

// Per-source ranking metrics over mixed-source rankings.
//
// A ranking is scored against one target source at a time: judgments of
// documents from the other source are forced to grade 0, while the mixed
// ranking order is left untouched. NDCG uses linear gain and log2(rank+1)
// discount; MAP@K divides by the number of target-source positives
// (trec_eval map_cut convention). Queries without a target positive score 0
// and stay in the mean so both sources are averaged over the same queries.

#include <algorithm>
#include <array>
#include <cstdio>
#include <cmath>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"
#include "srcbias/common.hpp"
#include "srcbias/corpus_store.hpp"

namespace srcbias::eval {

enum class Metric { Ndcg, Map };

inline constexpr std::string_view to_string(Metric m) { return m == Metric::Ndcg ? "ndcg" : "map"; }

/// Resolves a document id to its source; throws for unknown documents.
using SourceLookup = std::function<Source(const std::string&)>;

inline SourceLookup source_lookup(const Corpus& corpus) {
  return [&corpus](const std::string& id) {
    auto s = corpus.source_of(id);
    if (!s) throw InputError("document '" + id + "' is not in the corpus");
    return *s;
  };
}

/// Grades of one query with non-target documents forced to 0.
class MaskedQrels {
 public:
  MaskedQrels(const QrelSet::Judgments* judgments, const SourceLookup& source, Source target) : target_(target) {
    if (judgments == nullptr) return;
    for (const auto& [doc, g] : *judgments) {
      const int eff = source(doc) == target ? g : 0;
      grades_.emplace(doc, eff);
      if (eff > 0) ideal_.push_back(eff);
    }
    std::sort(ideal_.begin(), ideal_.end(), std::greater<>());
  }

  Source target() const { return target_; }

  int grade(const std::string& doc) const {
    auto it = grades_.find(doc);
    return it == grades_.end() ? 0 : it->second;
  }

  /// Target-source positives, grades descending.
  const std::vector<int>& ideal() const { return ideal_; }
  std::size_t positives() const { return ideal_.size(); }

 private:
  Source target_;
  std::map<std::string, int> grades_;
  std::vector<int> ideal_;
};

inline double discount(std::size_t rank) { return 1.0 / std::log2(static_cast<double>(rank) + 1.0); }

/// Unnormalized DCG@K of the masked grades along the run.
inline double masked_dcg(const RunList& run, const MaskedQrels& mq, std::size_t k) {
  double dcg = 0.0;
  const auto n = std::min(k, run.entries.size());
  for (std::size_t i = 0; i < n; ++i) {
    const int g = mq.grade(run.entries[i].doc_id);
    if (g > 0) dcg += g * discount(i + 1);
  }
  return dcg;
}

inline double masked_ndcg(const RunList& run, const MaskedQrels& mq, std::size_t k) {
  if (mq.positives() == 0) return 0.0;
  double idcg = 0.0;
  const auto n = std::min(k, mq.ideal().size());
  for (std::size_t i = 0; i < n; ++i) idcg += mq.ideal()[i] * discount(i + 1);
  return masked_dcg(run, mq, k) / idcg;
}

inline double masked_map(const RunList& run, const MaskedQrels& mq, std::size_t k) {
  if (mq.positives() == 0) return 0.0;
  double sum = 0.0;
  std::size_t hits = 0;
  const auto n = std::min(k, run.entries.size());
  for (std::size_t i = 0; i < n; ++i) {
    if (mq.grade(run.entries[i].doc_id) > 0) {
      ++hits;
      sum += static_cast<double>(hits) / static_cast<double>(i + 1);
    }
  }
  return sum / static_cast<double>(mq.positives());
}

inline double masked_metric(const RunList& run, const QrelSet& qrels, const SourceLookup& source, Source target,
                            Metric metric, std::size_t k) {
  if (k == 0) throw InputError("cutoff K must be >= 1");
  for (const auto& e : run.entries) (void)source(e.doc_id);
  const MaskedQrels mq(qrels.judgments(run.query_id), source, target);
  return metric == Metric::Ndcg ? masked_ndcg(run, mq, k) : masked_map(run, mq, k);
}

/// (h - g) / ((h + g) / 2) * 100. Defined as 0 when both are 0.
inline double relative_delta(double metric_human, double metric_generated) {
  if (metric_human < 0.0 || metric_generated < 0.0 || !std::isfinite(metric_human) || !std::isfinite(metric_generated))
    throw InputError("relative delta requires finite non-negative metrics");
  const double mean = 0.5 * (metric_human + metric_generated);
  if (mean == 0.0) return 0.0;
  return (metric_human - metric_generated) / mean * 100.0;
}

// ---------------------------------------------------------------------------
// Report

struct CutoffResult {
  std::size_t k = 0;
  double human = 0.0;
  double generated = 0.0;
  double relative_delta = 0.0;
  bool delta_undefined = false;  // both means zero
};

struct BiasReport {
  std::vector<std::size_t> cutoffs;
  std::map<Metric, std::vector<CutoffResult>> metrics;
  std::size_t query_count = 0;
  std::vector<std::string> queries_without_run;   // judged but not ranked; scored 0
  std::vector<std::string> unjudged_run_queries;  // ranked but not judged; ignored

  const CutoffResult& at(Metric m, std::size_t k) const {
    for (const auto& r : metrics.at(m))
      if (r.k == k) return r;
    throw std::out_of_range("cutoff not in report");
  }
};

/// Means over every judged query (those absent from the runs contribute 0).
inline BiasReport evaluate_runs(const std::vector<RunList>& runs, const QrelSet& qrels, const Corpus& corpus,
                                std::vector<std::size_t> cutoffs = {1, 3, 5}, unsigned threads = 1) {
  if (runs.empty()) throw InputError("no runs to evaluate");
  if (cutoffs.empty()) throw InputError("no cutoffs given");
  for (auto k : cutoffs)
    if (k == 0) throw InputError("cutoff K must be >= 1");
  std::sort(cutoffs.begin(), cutoffs.end());
  cutoffs.erase(std::unique(cutoffs.begin(), cutoffs.end()), cutoffs.end());

  const auto source = source_lookup(corpus);
  std::map<std::string, const RunList*> by_query;
  for (const auto& r : runs) {
    if (!by_query.emplace(r.query_id, &r).second) throw InputError("duplicate query " + r.query_id + " in runs");
    for (const auto& e : r.entries) (void)source(e.doc_id);
  }

  BiasReport report;
  report.cutoffs = cutoffs;
  std::vector<const std::string*> judged;
  for (const auto& [q, row] : qrels.by_query()) {
    for (const auto& [d, g] : row) (void)source(d);
    judged.push_back(&q);
    if (!by_query.count(q)) report.queries_without_run.push_back(q);
  }
  for (const auto& [q, r] : by_query)
    if (qrels.judgments(q) == nullptr) report.unjudged_run_queries.push_back(q);
  report.query_count = judged.size();
  if (judged.empty()) throw InputError("qrels contain no queries");

  const std::array metrics{Metric::Ndcg, Metric::Map};
  // values[q][metric][cutoff][source]
  std::vector<std::array<std::vector<std::array<double, 2>>, 2>> values(judged.size());
  parallel_for(judged.size(), threads, [&](std::size_t qi) {
    const auto& q = *judged[qi];
    auto& out = values[qi];
    for (auto& m : out) m.assign(cutoffs.size(), {0.0, 0.0});
    auto it = by_query.find(q);
    if (it == by_query.end()) return;
    const auto* judgments = qrels.judgments(q);
    const MaskedQrels mh(judgments, source, Source::Human);
    const MaskedQrels mg(judgments, source, Source::Generated);
    for (std::size_t ci = 0; ci < cutoffs.size(); ++ci) {
      out[0][ci] = {masked_ndcg(*it->second, mh, cutoffs[ci]), masked_ndcg(*it->second, mg, cutoffs[ci])};
      out[1][ci] = {masked_map(*it->second, mh, cutoffs[ci]), masked_map(*it->second, mg, cutoffs[ci])};
    }
  });

  const double n = static_cast<double>(judged.size());
  for (std::size_t mi = 0; mi < metrics.size(); ++mi) {
    auto& rows = report.metrics[metrics[mi]];
    for (std::size_t ci = 0; ci < cutoffs.size(); ++ci) {
      double sh = 0.0, sg = 0.0;
      for (const auto& v : values) {
        sh += v[mi][ci][0];
        sg += v[mi][ci][1];
      }
      CutoffResult r;
      r.k = cutoffs[ci];
      r.human = sh / n;
      r.generated = sg / n;
      r.relative_delta = relative_delta(r.human, r.generated);
      r.delta_undefined = r.human == 0.0 && r.generated == 0.0;
      rows.push_back(r);
    }
  }
  return report;
}

inline nlohmann::ordered_json report_json(const BiasReport& r) {
  nlohmann::ordered_json j;
  j["schema"] = "srcbias.bias_report/1";
  j["scale"] = "fraction";
  j["query_count"] = r.query_count;
  j["cutoffs"] = r.cutoffs;
  auto metrics = nlohmann::ordered_json::object();
  for (const auto& [m, rows] : r.metrics) {
    auto arr = nlohmann::ordered_json::array();
    for (const auto& c : rows) {
      nlohmann::ordered_json e;
      e["k"] = c.k;
      e["human"] = c.human;
      e["generated"] = c.generated;
      e["relative_delta"] = c.relative_delta;
      if (c.delta_undefined) e["relative_delta_undefined"] = true;
      arr.push_back(std::move(e));
    }
    metrics[std::string(to_string(m))] = std::move(arr);
  }
  j["metrics"] = std::move(metrics);
  j["queries_without_run"] = r.queries_without_run;
  j["unjudged_run_queries"] = r.unjudged_run_queries;
  return j;
}

/// Table with metrics in percent and one decimal, the layout used in the
/// bias tables: one row per source and one for Relative Δ.
inline std::string render_table(const BiasReport& r) {
  auto fmt = [](double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%7.1f", v);
    return std::string(buf);
  };
  std::string out = "target      ";
  for (const auto& [m, rows] : r.metrics)
    for (const auto& c : rows) {
      std::string h = (m == Metric::Ndcg ? "NDCG@" : "MAP@") + std::to_string(c.k);
      out += std::string(h.size() < 8 ? 8 - h.size() : 0, ' ') + h;
    }
  out += '\n';
  for (int row = 0; row < 3; ++row) {
    out += row == 0 ? "human       " : row == 1 ? "generated   " : "rel. delta  ";
    for (const auto& [m, rows] : r.metrics)
      for (const auto& c : rows)
        out += ' ' + fmt(row == 0 ? c.human * 100 : row == 1 ? c.generated * 100 : c.relative_delta);
    out += '\n';
  }
  return out;
}

}  // namespace srcbias::eval
