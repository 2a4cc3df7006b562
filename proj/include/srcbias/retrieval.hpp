#pragma once

// Lexical (TF-IDF, BM25) and exhaustive dense retrieval over a mixed corpus.
// Every model scores every document; the top-k list is ordered by score
// descending with ties broken by ascending doc id.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "srcbias/common.hpp"
#include "srcbias/corpus_store.hpp"
#include "srcbias/text.hpp"

namespace srcbias::retrieval {

struct Posting {
  std::uint32_t doc = 0;
  std::uint32_t tf = 0;

  bool operator==(const Posting&) const = default;
};

struct Bm25Params {
  double k1 = 1.2;
  double b = 0.75;

  void validate() const {
    if (!(k1 >= 0.0) || !std::isfinite(k1)) throw InputError("BM25 k1 must be >= 0");
    if (!(b >= 0.0 && b <= 1.0)) throw InputError("BM25 b must lie in [0, 1]");
  }
};

/// Query terms with their multiplicities, in lexicographic order.
using QueryTerms = std::map<std::string, int>;

inline QueryTerms query_terms(std::string_view text) {
  QueryTerms out;
  for (auto& t : text::tokenize(text)) ++out[t];
  return out;
}

class LexicalIndex {
 public:
  /// Indexes "title text" of every document. Term ids follow lexicographic
  /// term order, so two builds over the same corpus are identical.
  static LexicalIndex build(const Corpus& corpus) {
    if (corpus.empty()) throw InputError("cannot index an empty corpus");
    LexicalIndex idx;
    std::map<std::string, std::vector<Posting>> inverted;
    idx.doc_ids_.reserve(corpus.size());
    for (std::size_t i = 0; i < corpus.size(); ++i) {
      const auto& d = corpus.documents()[i];
      idx.doc_ids_.push_back(d.id);
      std::string body = d.title.empty() ? d.text : d.title + " " + d.text;
      std::map<std::string, std::uint32_t> tf;
      std::uint32_t len = 0;
      for (auto& t : text::tokenize(body)) {
        ++tf[t];
        ++len;
      }
      idx.doc_lengths_.push_back(len);
      for (auto& [t, n] : tf) inverted[t].push_back(Posting{static_cast<std::uint32_t>(i), n});
    }
    idx.terms_.reserve(inverted.size());
    idx.postings_.reserve(inverted.size());
    for (auto& [t, plist] : inverted) {
      idx.terms_.push_back(t);
      idx.postings_.push_back(std::move(plist));
    }
    idx.finish();
    return idx;
  }

  std::size_t doc_count() const { return doc_ids_.size(); }
  double avgdl() const { return avgdl_; }
  std::uint32_t doc_length(std::size_t doc) const { return doc_lengths_[doc]; }
  const std::string& doc_id(std::size_t doc) const { return doc_ids_[doc]; }
  const std::vector<std::string>& doc_ids() const { return doc_ids_; }
  const std::vector<std::string>& vocabulary() const { return terms_; }

  std::optional<std::size_t> term_id(std::string_view term) const {
    auto it = std::lower_bound(terms_.begin(), terms_.end(), term);
    if (it == terms_.end() || *it != term) return std::nullopt;
    return static_cast<std::size_t>(it - terms_.begin());
  }

  std::size_t df(std::size_t term) const { return postings_[term].size(); }
  std::span<const Posting> postings(std::size_t term) const { return postings_[term]; }

  std::uint32_t tf(std::size_t term, std::size_t doc) const {
    const auto& pl = postings_[term];
    auto it = std::lower_bound(pl.begin(), pl.end(), doc, [](const Posting& p, std::size_t d) { return p.doc < d; });
    return it != pl.end() && it->doc == doc ? it->tf : 0;
  }

  std::optional<std::size_t> doc_index(std::string_view id) const {
    for (std::size_t i = 0; i < doc_ids_.size(); ++i)
      if (doc_ids_[i] == id) return i;
    return std::nullopt;
  }

  /// ln((N - df + 0.5) / (df + 0.5) + 1), never negative.
  double bm25_idf(std::size_t term) const {
    const double n = static_cast<double>(doc_count());
    const double d = static_cast<double>(df(term));
    return std::log((n - d + 0.5) / (d + 0.5) + 1.0);
  }

  /// ln((N + 1) / (df + 1)) + 1.
  double tfidf_idf(std::size_t term) const {
    const double n = static_cast<double>(doc_count());
    const double d = static_cast<double>(df(term));
    return std::log((n + 1.0) / (d + 1.0)) + 1.0;
  }

  /// L2 norm of the tf*idf document vector (0 for an empty document).
  double tfidf_norm(std::size_t doc) const { return tfidf_norms_[doc]; }

  nlohmann::ordered_json to_json() const {
    nlohmann::ordered_json j;
    j["schema"] = "srcbias.lexical_index/1";
    j["doc_count"] = doc_count();
    j["avgdl"] = avgdl_;
    j["doc_ids"] = doc_ids_;
    j["doc_lengths"] = doc_lengths_;
    auto terms = nlohmann::ordered_json::array();
    for (std::size_t t = 0; t < terms_.size(); ++t) {
      auto pl = nlohmann::ordered_json::array();
      for (const auto& p : postings_[t]) pl.push_back({p.doc, p.tf});
      terms.push_back({{"term", terms_[t]}, {"df", df(t)}, {"postings", std::move(pl)}});
    }
    j["terms"] = std::move(terms);
    return j;
  }

  static LexicalIndex from_json(const nlohmann::json& j) {
    LexicalIndex idx;
    try {
      if (j.at("schema").get<std::string>() != "srcbias.lexical_index/1") throw InputError("unsupported index schema");
      idx.doc_ids_ = j.at("doc_ids").get<std::vector<std::string>>();
      idx.doc_lengths_ = j.at("doc_lengths").get<std::vector<std::uint32_t>>();
      for (const auto& t : j.at("terms")) {
        idx.terms_.push_back(t.at("term").get<std::string>());
        std::vector<Posting> pl;
        for (const auto& p : t.at("postings")) pl.push_back(Posting{p.at(0).get<std::uint32_t>(), p.at(1).get<std::uint32_t>()});
        idx.postings_.push_back(std::move(pl));
      }
    } catch (const nlohmann::json::exception& e) {
      throw InputError(std::string("malformed index: ") + e.what());
    }
    if (idx.doc_ids_.empty() || idx.doc_ids_.size() != idx.doc_lengths_.size())
      throw InputError("malformed index: document table inconsistent");
    if (!std::is_sorted(idx.terms_.begin(), idx.terms_.end()) ||
        std::adjacent_find(idx.terms_.begin(), idx.terms_.end()) != idx.terms_.end())
      throw InputError("malformed index: vocabulary not strictly sorted");
    for (const auto& pl : idx.postings_) {
      for (std::size_t i = 0; i < pl.size(); ++i) {
        if (pl[i].doc >= idx.doc_ids_.size() || pl[i].tf == 0 || (i > 0 && pl[i].doc <= pl[i - 1].doc))
          throw InputError("malformed index: invalid postings list");
      }
    }
    idx.finish();
    return idx;
  }

 private:
  void finish() {
    double total = 0.0;
    for (auto l : doc_lengths_) total += l;
    avgdl_ = total / static_cast<double>(doc_lengths_.size());
    if (!(avgdl_ > 0.0)) throw InputError("cannot index a corpus whose documents are all empty");
    std::vector<double> sq(doc_ids_.size(), 0.0);
    for (std::size_t t = 0; t < postings_.size(); ++t) {
      const double idf = tfidf_idf(t);
      for (const auto& p : postings_[t]) {
        const double w = static_cast<double>(p.tf) * idf;
        sq[p.doc] += w * w;
      }
    }
    tfidf_norms_.resize(sq.size());
    for (std::size_t i = 0; i < sq.size(); ++i) tfidf_norms_[i] = std::sqrt(sq[i]);
  }

  std::vector<std::string> doc_ids_;
  std::vector<std::uint32_t> doc_lengths_;
  std::vector<std::string> terms_;
  std::vector<std::vector<Posting>> postings_;
  std::vector<double> tfidf_norms_;
  double avgdl_ = 0.0;
};

namespace detail {

inline double bm25_term(double idf, double tf, double len, double avgdl, const Bm25Params& p) {
  return idf * (tf * (p.k1 + 1.0)) / (tf + p.k1 * (1.0 - p.b + p.b * len / avgdl));
}

}  // namespace detail

/// Okapi BM25: sum over query terms (with multiplicity) of
/// idf(t) * tf*(k1+1) / (tf + k1*(1 - b + b*len/avgdl)).
inline double bm25_score(const LexicalIndex& idx, const QueryTerms& q, std::size_t doc, const Bm25Params& p = {}) {
  double score = 0.0;
  const double len = idx.doc_length(doc);
  for (const auto& [term, count] : q) {
    auto t = idx.term_id(term);
    if (!t) continue;
    const auto tf = idx.tf(*t, doc);
    if (tf == 0) continue;
    score += count * detail::bm25_term(idx.bm25_idf(*t), tf, len, idx.avgdl(), p);
  }
  return score;
}

/// Dot product of the L2-normalized tf*idf document vector with the query
/// vector (query term count * idf).
inline double tfidf_score(const LexicalIndex& idx, const QueryTerms& q, std::size_t doc) {
  const double norm = idx.tfidf_norm(doc);
  if (norm == 0.0) return 0.0;
  double score = 0.0;
  for (const auto& [term, count] : q) {
    auto t = idx.term_id(term);
    if (!t) continue;
    const auto tf = idx.tf(*t, doc);
    if (tf == 0) continue;
    const double idf = idx.tfidf_idf(*t);
    score += (count * idf) * (tf * idf / norm);
  }
  return score;
}

enum class LexicalModel { TfIdf, Bm25 };

/// Scores of every document, accumulated term-at-a-time over the postings.
/// Produces bit-identical values to the per-document scoring functions.
inline std::vector<double> score_all(const LexicalIndex& idx, const QueryTerms& q, LexicalModel model,
                                     const Bm25Params& p = {}) {
  std::vector<double> scores(idx.doc_count(), 0.0);
  for (const auto& [term, count] : q) {
    auto t = idx.term_id(term);
    if (!t) continue;
    if (model == LexicalModel::Bm25) {
      const double idf = idx.bm25_idf(*t);
      for (const auto& post : idx.postings(*t))
        scores[post.doc] += count * detail::bm25_term(idf, post.tf, idx.doc_length(post.doc), idx.avgdl(), p);
    } else {
      const double idf = idx.tfidf_idf(*t);
      for (const auto& post : idx.postings(*t)) {
        const double norm = idx.tfidf_norm(post.doc);
        if (norm == 0.0) continue;
        scores[post.doc] += (count * idf) * (post.tf * idf / norm);
      }
    }
  }
  return scores;
}

/// Top-k by score descending, ties by ascending doc id; fewer entries when
/// the corpus is smaller than k.
inline RunList top_k_run(const std::string& query_id, std::span<const double> scores,
                         const std::vector<std::string>& doc_ids, std::size_t top_k) {
  if (top_k == 0) throw InputError("top_k must be >= 1");
  std::vector<std::uint32_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0u);
  const auto k = std::min(top_k, order.size());
  auto better = [&](std::uint32_t a, std::uint32_t b) {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    return doc_ids[a] < doc_ids[b];
  };
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(), better);
  RunList run{query_id, {}};
  run.entries.reserve(k);
  for (std::size_t r = 0; r < k; ++r)
    run.entries.push_back(RunEntry{doc_ids[order[r]], scores[order[r]], static_cast<int>(r) + 1});
  return run;
}

inline std::vector<RunList> search_lexical(const LexicalIndex& idx, const std::vector<Query>& queries,
                                           LexicalModel model, std::size_t top_k, const Bm25Params& p = {},
                                           unsigned threads = 1) {
  if (top_k == 0) throw InputError("top_k must be >= 1");
  if (model == LexicalModel::Bm25) p.validate();
  std::vector<RunList> runs(queries.size());
  parallel_for(queries.size(), threads, [&](std::size_t i) {
    const auto scores = score_all(idx, query_terms(queries[i].text), model, p);
    runs[i] = top_k_run(queries[i].id, scores, idx.doc_ids(), top_k);
  });
  return runs;
}

// ---------------------------------------------------------------------------
// Dense

enum class Similarity { Dot, Cosine };

inline double dense_similarity(std::span<const double> q, std::span<const double> d, Similarity sim) {
  double dot = 0.0;
  for (std::size_t i = 0; i < q.size(); ++i) dot += q[i] * d[i];
  if (sim == Similarity::Dot) return dot;
  double nq = 0.0, nd = 0.0;
  for (std::size_t i = 0; i < q.size(); ++i) {
    nq += q[i] * q[i];
    nd += d[i] * d[i];
  }
  if (nq == 0.0 || nd == 0.0) return 0.0;
  return std::clamp(dot / (std::sqrt(nq) * std::sqrt(nd)), -1.0, 1.0);
}

/// Exhaustive scoring of every corpus document against precomputed embeddings.
class DenseScorer {
 public:
  DenseScorer(const Corpus& corpus, const EmbeddingSet& doc_embeddings, Similarity sim) : sim_(sim) {
    if (corpus.empty()) throw InputError("cannot search an empty corpus");
    dim_ = doc_embeddings.dim();
    for (const auto& d : corpus.documents()) {
      if (!doc_embeddings.contains(d.id)) throw InputError("no embedding for document '" + d.id + "'");
      ids_.push_back(d.id);
      const auto r = doc_embeddings.row(d.id);
      rows_.insert(rows_.end(), r.begin(), r.end());
    }
  }

  std::size_t dim() const { return dim_; }
  const std::vector<std::string>& doc_ids() const { return ids_; }

  std::vector<double> score_all(std::span<const double> query) const {
    if (query.size() != dim_)
      throw InputError("query embedding has dimension " + std::to_string(query.size()) + ", expected " +
                       std::to_string(dim_));
    std::vector<double> out(ids_.size());
    for (std::size_t i = 0; i < ids_.size(); ++i)
      out[i] = dense_similarity(query, std::span<const double>(rows_.data() + i * dim_, dim_), sim_);
    return out;
  }

 private:
  Similarity sim_;
  std::size_t dim_ = 0;
  std::vector<std::string> ids_;
  std::vector<double> rows_;
};

inline std::vector<RunList> search_dense(const DenseScorer& scorer, const EmbeddingSet& query_embeddings,
                                         const std::vector<Query>& queries, std::size_t top_k,
                                         unsigned threads = 1) {
  if (top_k == 0) throw InputError("top_k must be >= 1");
  for (const auto& q : queries)
    if (!query_embeddings.contains(q.id)) throw InputError("no embedding for query '" + q.id + "'");
  std::vector<RunList> runs(queries.size());
  parallel_for(queries.size(), threads, [&](std::size_t i) {
    const auto scores = scorer.score_all(query_embeddings.row(queries[i].id));
    runs[i] = top_k_run(queries[i].id, scores, scorer.doc_ids(), top_k);
  });
  return runs;
}

}  // namespace srcbias::retrieval
