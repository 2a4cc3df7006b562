#pragma once

// Linear two-tower scoring head over frozen embeddings, trained with an
// in-batch InfoNCE ranking loss plus a hinge penalty on pairs where the
// generated document outscores its human-written counterpart.

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <span>
#include <stdexcept>
#include <string>
#include <tuple>
#include <vector>

#include "json.hpp"
#include "srcbias/bias_eval.hpp"
#include "srcbias/common.hpp"
#include "srcbias/corpus_store.hpp"
#include "srcbias/retrieval.hpp"

namespace srcbias::debias {

struct Triplet {
  std::string query_id;
  std::string human_id;
  std::string generated_id;

  friend auto operator<=>(const Triplet&, const Triplet&) = default;
};

/// Triplets together with the embeddings of every id they mention.
class TripletSet {
 public:
  TripletSet() = default;
  TripletSet(std::vector<Triplet> items, EmbeddingSet embeddings)
      : items_(std::move(items)), emb_(std::move(embeddings)) {
    if (items_.empty()) throw InputError("triplet set is empty");
    std::set<Triplet> seen;
    for (const auto& t : items_) {
      for (const auto* id : {&t.query_id, &t.human_id, &t.generated_id})
        if (!emb_.contains(*id)) throw InputError("no embedding for id '" + *id + "'");
      if (t.human_id == t.generated_id) throw InputError("triplet uses '" + t.human_id + "' as both documents");
      if (!seen.insert(t).second)
        throw InputError("duplicate triplet (" + t.query_id + ", " + t.human_id + ", " + t.generated_id + ")");
    }
  }

  const std::vector<Triplet>& items() const { return items_; }
  const EmbeddingSet& embeddings() const { return emb_; }
  std::size_t size() const { return items_.size(); }
  std::size_t dim() const { return emb_.dim(); }

 private:
  std::vector<Triplet> items_;
  EmbeddingSet emb_;
};

/// Tab-separated "query_id human_doc_id generated_doc_id"; a first line whose
/// first field is "query_id" is treated as a header.
inline std::vector<Triplet> load_triplets(const std::string& path) {
  const auto lines = read_lines(path);
  std::vector<Triplet> out;
  bool first = true;
  for (std::size_t i = 0; i < lines.size(); ++i) {
    if (trim(lines[i]).empty()) continue;
    const auto f = split_ws(lines[i]);
    if (first && !f.empty() && f[0] == "query_id") {
      first = false;
      continue;
    }
    first = false;
    if (f.size() != 3) throw InputError(location(path, i + 1) + ": expected 3 fields, got " + std::to_string(f.size()));
    out.push_back({std::string(f[0]), std::string(f[1]), std::string(f[2])});
  }
  return out;
}

inline std::string format_triplets(const std::vector<Triplet>& ts) {
  std::string out = "query_id\thuman_doc_id\tgenerated_doc_id\n";
  for (const auto& t : ts) out += t.query_id + '\t' + t.human_id + '\t' + t.generated_id + '\n';
  return out;
}

// ---------------------------------------------------------------------------
// Scoring head

inline constexpr double kDefaultTau = 0.05;

/// s(q, d) = (A q) . (A d) / tau with A of shape rank x dim, row-major.
struct ScoringHead {
  std::size_t rank = 0;
  std::size_t dim = 0;
  double tau = kDefaultTau;
  std::vector<double> a;

  void validate() const {
    if (rank == 0 || dim == 0 || rank > dim) throw InputError("projection rank must be in [1, dim]");
    if (a.size() != rank * dim) throw InputError("projection matrix has the wrong size");
    if (!(tau > 0.0) || !std::isfinite(tau)) throw InputError("temperature must be positive");
    for (double x : a)
      if (!std::isfinite(x)) throw InputError("projection matrix has a non-finite entry");
  }

  std::vector<double> project(std::span<const double> x) const {
    std::vector<double> u(rank, 0.0);
    for (std::size_t i = 0; i < rank; ++i) {
      const double* row = a.data() + i * dim;
      double s = 0.0;
      for (std::size_t j = 0; j < dim; ++j) s += row[j] * x[j];
      u[i] = s;
    }
    return u;
  }

  double score(std::span<const double> q, std::span<const double> d) const {
    const auto uq = project(q);
    const auto ud = project(d);
    double s = 0.0;
    for (std::size_t i = 0; i < rank; ++i) s += uq[i] * ud[i];
    return s / tau;
  }
};

/// A = [I_r | 0] plus N(0, noise^2) entries.
inline ScoringHead init_head(std::size_t rank, std::size_t dim, std::uint64_t seed, double noise = 1e-3,
                             double tau = kDefaultTau) {
  ScoringHead h{rank, dim, tau, std::vector<double>(rank * dim, 0.0)};
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, noise);
  for (std::size_t i = 0; i < rank; ++i)
    for (std::size_t j = 0; j < dim; ++j) h.a[i * dim + j] = (i == j ? 1.0 : 0.0) + n(rng);
  h.validate();
  return h;
}

inline nlohmann::ordered_json head_json(const ScoringHead& h) {
  nlohmann::ordered_json j;
  j["schema"] = "srcbias.scoring_head/1";
  j["rank"] = h.rank;
  j["dim"] = h.dim;
  j["tau"] = h.tau;
  j["a"] = h.a;
  return j;
}

inline ScoringHead head_from_json(const nlohmann::json& j) {
  try {
    if (j.at("schema") != "srcbias.scoring_head/1") throw InputError("not a scoring head file");
    ScoringHead h{j.at("rank").get<std::size_t>(), j.at("dim").get<std::size_t>(), j.at("tau").get<double>(),
                  j.at("a").get<std::vector<double>>()};
    h.validate();
    return h;
  } catch (const nlohmann::json::exception& e) {
    throw InputError(std::string("malformed scoring head: ") + e.what());
  }
}

// ---------------------------------------------------------------------------
// Losses

/// Sum over pairs of max(0, s_g - s_h).
inline double debias_loss(std::span<const double> scores_g, std::span<const double> scores_h) {
  if (scores_g.size() != scores_h.size()) throw InputError("debias loss needs paired scores of equal length");
  double l = 0.0;
  for (std::size_t m = 0; m < scores_g.size(); ++m) l += std::max(0.0, scores_g[m] - scores_h[m]);
  return l;
}

/// -log softmax of candidate 0 among `scores` (positive first).
inline double info_nce(std::span<const double> scores) {
  const double mx = *std::max_element(scores.begin(), scores.end());
  double z = 0.0;
  for (double s : scores) z += std::exp(s - mx);
  return -(scores[0] - mx) + std::log(z);
}

struct TrainConfig {
  double alpha = 0.0;
  double lr = 0.01;
  std::size_t epochs = 20;
  std::size_t batch_size = 32;  // in-batch negatives: documents of the other queries in the batch
  std::uint64_t seed = 42;
  std::size_t rank = 0;  // 0 selects rank = dim
  double tau = kDefaultTau;

  void validate() const {
    if (!(alpha >= 0.0) || !std::isfinite(alpha)) throw InputError("alpha must be finite and >= 0");
    if (!(lr > 0.0) || !std::isfinite(lr)) throw InputError("learning rate must be positive");
    if (epochs < 1) throw InputError("epochs must be >= 1");
    if (batch_size < 2) throw InputError("batch size must be >= 2");
    if (!(tau > 0.0)) throw InputError("temperature must be positive");
  }
};

struct BatchLoss {
  double rank = 0.0;    // mean InfoNCE over the 2 * batch positives
  double debias = 0.0;  // hinge sum over the batch
  double total = 0.0;   // rank + alpha * debias
};

namespace detail {

/// Loss and gradient over one batch of triplet indices. Each triplet adds two
/// InfoNCE terms (human and generated document as positive); the candidate
/// lists are the positive plus every document of batch triplets with another
/// query id. With WithDebias = false the hinge term is neither evaluated nor
/// differentiated.
template <bool WithDebias>
BatchLoss batch_loss(const ScoringHead& head, const TripletSet& set, std::span<const std::size_t> batch, double alpha,
                     std::vector<double>* grad) {
  const auto& emb = set.embeddings();
  const auto& items = set.items();
  const std::size_t B = batch.size();
  if (B < 2) throw InputError("rank loss needs a batch of at least 2 triplets");
  const std::size_t r = head.rank, dim = head.dim;

  // Batch-local vectors: per triplet [query, human, generated].
  std::vector<std::span<const double>> x(3 * B);
  std::vector<std::vector<double>> u(3 * B);
  for (std::size_t m = 0; m < B; ++m) {
    const auto& t = items[batch[m]];
    x[3 * m] = emb.row(t.query_id);
    x[3 * m + 1] = emb.row(t.human_id);
    x[3 * m + 2] = emb.row(t.generated_id);
    for (std::size_t k = 0; k < 3; ++k) u[3 * m + k] = head.project(x[3 * m + k]);
  }
  auto s = [&](std::size_t qi, std::size_t di) {
    double v = 0.0;
    for (std::size_t i = 0; i < r; ++i) v += u[qi][i] * u[di][i];
    return v / head.tau;
  };

  // dL/ds for each (query slot, doc slot) pair, accumulated sparsely.
  std::vector<std::tuple<std::size_t, std::size_t, double>> ds;
  BatchLoss out;
  const double inv_pos = 1.0 / static_cast<double>(2 * B);
  std::vector<double> scores;
  std::vector<std::size_t> cand;
  for (std::size_t m = 0; m < B; ++m) {
    const auto& qid = items[batch[m]].query_id;
    for (std::size_t pos = 1; pos <= 2; ++pos) {
      cand.assign(1, 3 * m + pos);
      for (std::size_t o = 0; o < B; ++o) {
        if (items[batch[o]].query_id == qid) continue;
        cand.push_back(3 * o + 1);
        cand.push_back(3 * o + 2);
      }
      if (cand.size() < 2) throw InputError("batch has no in-batch negatives for query '" + qid + "'");
      scores.resize(cand.size());
      for (std::size_t c = 0; c < cand.size(); ++c) scores[c] = s(3 * m, cand[c]);
      out.rank += info_nce(scores) * inv_pos;
      if (grad) {
        const double mx = *std::max_element(scores.begin(), scores.end());
        double z = 0.0;
        for (double v : scores) z += std::exp(v - mx);
        for (std::size_t c = 0; c < cand.size(); ++c) {
          const double p = std::exp(scores[c] - mx) / z;
          ds.emplace_back(3 * m, cand[c], (p - (c == 0 ? 1.0 : 0.0)) * inv_pos);
        }
      }
    }
  }
  if constexpr (WithDebias) {
    for (std::size_t m = 0; m < B; ++m) {
      const double gap = s(3 * m, 3 * m + 2) - s(3 * m, 3 * m + 1);
      if (gap > 0.0) {
        out.debias += gap;
        if (grad && alpha != 0.0) {
          ds.emplace_back(3 * m, 3 * m + 2, alpha);
          ds.emplace_back(3 * m, 3 * m + 1, -alpha);
        }
      }
    }
  }
  out.total = out.rank + alpha * out.debias;

  if (grad) {
    // ds/dA = (u_q x_d^T + u_d x_q^T) / tau
    grad->assign(r * dim, 0.0);
    for (const auto& [qi, di, w] : ds) {
      const double c = w / head.tau;
      for (std::size_t i = 0; i < r; ++i) {
        double* row = grad->data() + i * dim;
        const double a1 = c * u[qi][i], a2 = c * u[di][i];
        const double* xd = x[di].data();
        const double* xq = x[qi].data();
        for (std::size_t j = 0; j < dim; ++j) row[j] += a1 * xd[j] + a2 * xq[j];
      }
    }
  }
  return out;
}

}  // namespace detail

/// Total loss L_rank + alpha * L_debias on a batch; fills `grad` (dL/dA,
/// row-major) when given. The hinge subgradient at a tie is 0.
inline BatchLoss batch_loss(const ScoringHead& head, const TripletSet& set, std::span<const std::size_t> batch,
                            double alpha, std::vector<double>* grad = nullptr) {
  return detail::batch_loss<true>(head, set, batch, alpha, grad);
}

/// InfoNCE part only, for callers that build their own candidate lists:
/// mean over rows of -log softmax(row)[0].
inline double rank_loss(const std::vector<std::vector<double>>& rows) {
  if (rows.empty()) throw InputError("rank loss of an empty batch");
  double l = 0.0;
  for (const auto& r : rows) {
    if (r.size() < 2) throw InputError("rank loss needs at least one negative per positive");
    l += info_nce(r);
  }
  return l / static_cast<double>(rows.size());
}

// ---------------------------------------------------------------------------
// Training

struct EpochLog {
  std::size_t epoch = 0;
  double rank = 0.0;
  double debias = 0.0;
  double total = 0.0;
};

struct TrainResult {
  ScoringHead head;
  std::vector<EpochLog> log;
};

/// Batches of a shuffled order; a trailing single triplet joins the previous
/// batch so that every batch has negatives.
inline std::vector<std::span<const std::size_t>> make_batches(const std::vector<std::size_t>& order, std::size_t size) {
  std::vector<std::span<const std::size_t>> out;
  const std::span<const std::size_t> all(order);
  for (std::size_t i = 0; i < order.size(); i += size) {
    const std::size_t len = std::min(size, order.size() - i);
    if (len < 2 && !out.empty()) {
      auto& last = out.back();
      last = all.subspan(last.data() - order.data(), last.size() + len);
    } else {
      out.push_back(all.subspan(i, len));
    }
  }
  return out;
}

namespace detail {

template <bool WithDebias>
TrainResult train(const TripletSet& set, const TrainConfig& cfg) {
  cfg.validate();
  if (set.size() < 2) throw InputError("training needs at least 2 triplets");
  const std::size_t rank = cfg.rank == 0 ? set.dim() : cfg.rank;
  TrainResult res{init_head(rank, set.dim(), cfg.seed, 1e-3, cfg.tau), {}};
  std::mt19937_64 rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);
  std::vector<std::size_t> order(set.size());
  std::iota(order.begin(), order.end(), 0);
  std::vector<double> grad;
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    EpochLog log{epoch, 0.0, 0.0, 0.0};
    const auto batches = make_batches(order, cfg.batch_size);
    for (const auto& b : batches) {
      const auto l = detail::batch_loss<WithDebias>(res.head, set, b, cfg.alpha, &grad);
      if (!std::isfinite(l.total)) throw InputError("training diverged at epoch " + std::to_string(epoch));
      log.rank += l.rank;
      log.debias += l.debias;
      log.total += l.total;
      for (std::size_t i = 0; i < grad.size(); ++i) res.head.a[i] -= cfg.lr * grad[i];
    }
    const double nb = static_cast<double>(batches.size());
    log.rank /= nb;
    log.debias /= nb;
    log.total /= nb;
    for (double v : res.head.a)
      if (!std::isfinite(v)) throw InputError("training diverged at epoch " + std::to_string(epoch));
    res.log.push_back(log);
  }
  return res;
}

}  // namespace detail

/// Mini-batch gradient descent with a fixed step. The log holds batch-mean
/// losses per epoch (measured before each step). Deterministic in cfg.seed.
/// With alpha = 0 the hinge value is still logged but not differentiated.
inline TrainResult train(const TripletSet& set, const TrainConfig& cfg) { return detail::train<true>(set, cfg); }

/// Same loop with the hinge term compiled out.
inline TrainResult train_rank_only(const TripletSet& set, const TrainConfig& cfg) {
  return detail::train<false>(set, cfg);
}

inline nlohmann::ordered_json log_json(const std::vector<EpochLog>& log) {
  auto arr = nlohmann::ordered_json::array();
  for (const auto& e : log)
    arr.push_back({{"epoch", e.epoch}, {"rank_loss", e.rank}, {"debias_loss", e.debias}, {"total", e.total}});
  return arr;
}

// ---------------------------------------------------------------------------
// Gradient check

/// Largest entrywise |analytic - numeric| / max(|analytic|, |numeric|, floor)
/// with central differences of step h.
inline double gradient_check(const ScoringHead& head, const TripletSet& set, std::span<const std::size_t> batch,
                             double alpha, double h = 1e-5, double floor = 1e-6) {
  std::vector<double> analytic;
  batch_loss(head, set, batch, alpha, &analytic);
  ScoringHead probe = head;
  double worst = 0.0;
  for (std::size_t i = 0; i < probe.a.size(); ++i) {
    const double orig = probe.a[i];
    probe.a[i] = orig + h;
    const double lp = batch_loss(probe, set, batch, alpha).total;
    probe.a[i] = orig - h;
    const double lm = batch_loss(probe, set, batch, alpha).total;
    probe.a[i] = orig;
    const double numeric = (lp - lm) / (2.0 * h);
    const double denom = std::max({std::abs(analytic[i]), std::abs(numeric), floor});
    worst = std::max(worst, std::abs(analytic[i] - numeric) / denom);
  }
  return worst;
}

// ---------------------------------------------------------------------------
// Synthetic shortcut data

/// Queries are normalize(z + query_shift * w) with z a random unit vector and
/// w a direction shared by every query (a common topic). Human documents are
/// normalize(q + human_noise * n1); generated documents are
/// normalize(q + generated_noise * n2 + shortcut * u): semantically tighter
/// around the query, and marked by a fixed direction u orthogonal to w. The
/// raw embedding geometry favours generated documents; a scorer can only undo
/// that preference by coupling u against the shared query direction.
struct SyntheticConfig {
  std::uint64_t seed = 42;
  std::size_t dim = 32;
  std::size_t train = 200;
  std::size_t test = 100;
  double human_noise = 0.3;
  double generated_noise = 0.15;
  double shortcut = 0.2;
  double query_shift = 1.0;
};

struct SyntheticData {
  TripletSet train;
  TripletSet test;
  std::vector<double> shortcut_direction;
  std::vector<double> query_direction;
};

namespace detail {

inline std::vector<double> random_unit(std::mt19937_64& rng, std::size_t dim) {
  std::normal_distribution<double> n(0.0, 1.0);
  std::vector<double> v(dim);
  double norm = 0.0;
  do {
    norm = 0.0;
    for (auto& x : v) {
      x = n(rng);
      norm += x * x;
    }
  } while (norm == 0.0);
  norm = std::sqrt(norm);
  for (auto& x : v) x /= norm;
  return v;
}

inline void normalize(std::vector<double>& v) {
  double n = 0.0;
  for (double x : v) n += x * x;
  n = std::sqrt(n);
  if (n > 0.0)
    for (auto& x : v) x /= n;
}

}  // namespace detail

inline SyntheticData make_synthetic(const SyntheticConfig& cfg = {}) {
  if (cfg.dim < 2 || cfg.train < 2 || cfg.test < 2) throw InputError("synthetic data needs dim, train and test >= 2");
  std::mt19937_64 rng(cfg.seed);
  const auto u = detail::random_unit(rng, cfg.dim);
  auto w = detail::random_unit(rng, cfg.dim);
  double uw = 0.0;
  for (std::size_t j = 0; j < cfg.dim; ++j) uw += u[j] * w[j];
  for (std::size_t j = 0; j < cfg.dim; ++j) w[j] -= uw * u[j];
  detail::normalize(w);

  auto build = [&](std::size_t count, const std::string& prefix) {
    EmbeddingSet emb;
    std::vector<Triplet> items;
    for (std::size_t i = 0; i < count; ++i) {
      auto q = detail::random_unit(rng, cfg.dim);
      for (std::size_t j = 0; j < cfg.dim; ++j) q[j] += cfg.query_shift * w[j];
      detail::normalize(q);
      const auto n1 = detail::random_unit(rng, cfg.dim);
      const auto n2 = detail::random_unit(rng, cfg.dim);
      std::vector<double> dh(cfg.dim), dg(cfg.dim);
      for (std::size_t j = 0; j < cfg.dim; ++j) {
        dh[j] = q[j] + cfg.human_noise * n1[j];
        dg[j] = q[j] + cfg.generated_noise * n2[j] + cfg.shortcut * u[j];
      }
      detail::normalize(dh);
      detail::normalize(dg);
      const auto id = std::to_string(i);
      Triplet t{prefix + "q" + id, prefix + "h" + id, prefix + "g" + id};
      emb.add(t.query_id, q);
      emb.add(t.human_id, dh);
      emb.add(t.generated_id, dg);
      items.push_back(std::move(t));
    }
    return TripletSet(std::move(items), std::move(emb));
  };
  auto tr = build(cfg.train, "train-");
  auto te = build(cfg.test, "test-");
  return {std::move(tr), std::move(te), u, w};
}

inline const std::vector<double>& default_alpha_grid() {
  static const std::vector<double> grid{1e-4, 1e-3, 1e-2, 1e-1, 1.0};
  return grid;
}

// ---------------------------------------------------------------------------
// Held-out evaluation

/// Documents of a triplet set as a corpus (each generated document's origin
/// is its paired human document) plus qrels giving grade 1 to both documents
/// of every triplet.
inline std::pair<Corpus, QrelSet> triplet_benchmark(const TripletSet& set, bool human_only = false) {
  std::vector<SourcedDocument> docs;
  std::set<std::string> have;
  QrelSet qrels;
  for (const auto& t : set.items()) {
    if (have.insert(t.human_id).second) docs.push_back({t.human_id, "", "", Source::Human, std::nullopt, std::nullopt});
    qrels.add(t.query_id, t.human_id, 1);
    if (human_only) continue;
    if (have.insert(t.generated_id).second)
      docs.push_back({t.generated_id, "", "", Source::Generated, std::string("synthetic"), t.human_id});
    qrels.add(t.query_id, t.generated_id, 1);
  }
  return {Corpus(std::move(docs)), std::move(qrels)};
}

/// Ranks every document of `corpus` for each query of the set with the head.
inline std::vector<RunList> rank_with_head(const ScoringHead& head, const TripletSet& set, const Corpus& corpus) {
  const auto& emb = set.embeddings();
  std::vector<std::string> doc_ids;
  std::vector<std::vector<double>> doc_proj;
  for (const auto& d : corpus.documents()) {
    doc_ids.push_back(d.id);
    doc_proj.push_back(head.project(emb.row(d.id)));
  }
  std::vector<std::string> queries;
  std::set<std::string> seen;
  for (const auto& t : set.items())
    if (seen.insert(t.query_id).second) queries.push_back(t.query_id);
  std::vector<RunList> runs;
  std::vector<double> scores(doc_ids.size());
  for (const auto& q : queries) {
    const auto uq = head.project(emb.row(q));
    for (std::size_t i = 0; i < doc_ids.size(); ++i) {
      double s = 0.0;
      for (std::size_t k = 0; k < head.rank; ++k) s += uq[k] * doc_proj[i][k];
      scores[i] = s / head.tau;
    }
    runs.push_back(retrieval::top_k_run(q, scores, doc_ids, doc_ids.size()));
  }
  return runs;
}

struct HeldOutResult {
  eval::BiasReport mixed;
  double human_only_ndcg1 = 0.0;  // NDCG@1 ranking only the human documents
};

inline HeldOutResult evaluate_head(const ScoringHead& head, const TripletSet& test) {
  HeldOutResult r;
  {
    const auto [corpus, qrels] = triplet_benchmark(test);
    r.mixed = eval::evaluate_runs(rank_with_head(head, test, corpus), qrels, corpus, {1, 3, 5});
  }
  const auto [corpus, qrels] = triplet_benchmark(test, true);
  const auto lookup = eval::source_lookup(corpus);
  const auto runs = rank_with_head(head, test, corpus);
  double sum = 0.0;
  for (const auto& run : runs) sum += eval::masked_metric(run, qrels, lookup, Source::Human, eval::Metric::Ndcg, 1);
  r.human_only_ndcg1 = runs.empty() ? 0.0 : sum / static_cast<double>(runs.size());
  return r;
}

// ---------------------------------------------------------------------------
// Alpha sweep

struct SweepRow {
  double alpha = 0.0;
  HeldOutResult result;
  EpochLog final_epoch;
};

/// One training and held-out evaluation per alpha; rows sorted by alpha.
inline std::vector<SweepRow> alpha_sweep(const TripletSet& train_set, const TripletSet& test_set,
                                         const TrainConfig& base, std::vector<double> alphas, unsigned threads = 1) {
  if (alphas.empty()) throw InputError("alpha sweep needs at least one alpha");
  std::sort(alphas.begin(), alphas.end());
  if (std::adjacent_find(alphas.begin(), alphas.end()) != alphas.end()) throw InputError("duplicate alpha in sweep");
  std::vector<SweepRow> rows(alphas.size());
  parallel_for(alphas.size(), threads, [&](std::size_t i) {
    auto cfg = base;
    cfg.alpha = alphas[i];
    auto res = train(train_set, cfg);
    rows[i] = {alphas[i], evaluate_head(res.head, test_set), res.log.back()};
  });
  return rows;
}

/// Spearman rank correlation with average ranks for ties; 0 if either side is
/// constant.
inline double spearman(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size() || x.size() < 2) throw InputError("spearman needs two equal-length series of size >= 2");
  auto ranks = [](std::span<const double> v) {
    std::vector<std::size_t> idx(v.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::sort(idx.begin(), idx.end(), [&](auto a, auto b) { return v[a] < v[b]; });
    std::vector<double> r(v.size());
    for (std::size_t i = 0; i < idx.size();) {
      std::size_t j = i;
      while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
      const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
      for (std::size_t k = i; k <= j; ++k) r[idx[k]] = avg;
      i = j + 1;
    }
    return r;
  };
  const auto rx = ranks(x), ry = ranks(y);
  const double n = static_cast<double>(x.size());
  const double mean = (n + 1.0) / 2.0;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < rx.size(); ++i) {
    sxy += (rx[i] - mean) * (ry[i] - mean);
    sxx += (rx[i] - mean) * (rx[i] - mean);
    syy += (ry[i] - mean) * (ry[i] - mean);
  }
  if (sxx == 0.0 || syy == 0.0) return 0.0;
  return sxy / std::sqrt(sxx * syy);
}

inline nlohmann::ordered_json sweep_json(const std::vector<SweepRow>& rows) {
  nlohmann::ordered_json j;
  j["schema"] = "srcbias.alpha_sweep/1";
  auto arr = nlohmann::ordered_json::array();
  for (const auto& r : rows) {
    nlohmann::ordered_json e;
    e["alpha"] = r.alpha;
    e["report"] = eval::report_json(r.result.mixed);
    e["human_only_ndcg@1"] = r.result.human_only_ndcg1;
    e["final_epoch"] = {{"rank_loss", r.final_epoch.rank},
                        {"debias_loss", r.final_epoch.debias},
                        {"total", r.final_epoch.total}};
    arr.push_back(std::move(e));
  }
  j["rows"] = std::move(arr);
  return j;
}

inline std::string sweep_csv(const std::vector<SweepRow>& rows) {
  std::string out = "alpha,ndcg@1_human,ndcg@1_generated,relative_delta_ndcg@1,map@1_human,map@1_generated,"
                    "relative_delta_map@1,human_only_ndcg@1\n";
  for (const auto& r : rows) {
    const auto& n = r.result.mixed.at(eval::Metric::Ndcg, 1);
    const auto& m = r.result.mixed.at(eval::Metric::Map, 1);
    out += format_double(r.alpha) + ',' + format_double(n.human) + ',' + format_double(n.generated) + ',' +
           format_double(n.relative_delta) + ',' + format_double(m.human) + ',' + format_double(m.generated) + ',' +
           format_double(m.relative_delta) + ',' + format_double(r.result.human_only_ndcg1) + '\n';
  }
  return out;
}

}  // namespace srcbias::debias
