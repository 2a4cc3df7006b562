#pragma once

// Singular-value spectra of corpus embedding matrices and perplexity
// aggregation from per-token log-probabilities.

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <span>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <vector>

#include "json.hpp"
#include "srcbias/common.hpp"
#include "srcbias/corpus_store.hpp"

namespace srcbias::compression {

/// Dense row-major symmetric matrix, used for Gram matrices.
struct SymmetricMatrix {
  std::size_t n = 0;
  std::vector<double> a;

  explicit SymmetricMatrix(std::size_t size) : n(size), a(size * size, 0.0) {}
  double& operator()(std::size_t i, std::size_t j) { return a[i * n + j]; }
  double operator()(std::size_t i, std::size_t j) const { return a[i * n + j]; }
};

/// Eigenvalues of a symmetric matrix by cyclic Jacobi rotations, sorted
/// descending. A pair (p, q) is rotated while |a_pq| exceeds
/// 1e-15 * sqrt(|a_pp a_qq|); the sweep loop stops once a full sweep performs
/// no rotation, which leaves the off-diagonal mass far below 1e-10 of the
/// diagonal. For positive semi-definite input this criterion also gives
/// small eigenvalues to high relative accuracy.
inline std::vector<double> jacobi_eigenvalues(SymmetricMatrix m, int max_sweeps = 100) {
  const std::size_t n = m.n;
  constexpr double kRel = 1e-15;
  double scale = 0.0;
  for (double x : m.a) scale = std::max(scale, std::abs(x));
  const double tiny = scale * 1e-300;
  bool converged = n < 2;
  for (int sweep = 0; sweep < max_sweeps && !converged; ++sweep) {
    bool rotated = false;
    for (std::size_t p = 0; p + 1 < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        const double apq = m(p, q);
        if (std::abs(apq) <= tiny) continue;
        if (std::abs(apq) <= kRel * std::sqrt(std::abs(m(p, p) * m(q, q)))) continue;
        rotated = true;
        const double theta = (m(q, q) - m(p, p)) / (2.0 * apq);
        const double t = (theta >= 0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        m(p, p) -= t * apq;
        m(q, q) += t * apq;
        m(p, q) = m(q, p) = 0.0;
        for (std::size_t r = 0; r < n; ++r) {
          if (r == p || r == q) continue;
          const double arp = m(r, p);
          const double arq = m(r, q);
          m(r, p) = m(p, r) = c * arp - s * arq;
          m(r, q) = m(q, r) = s * arp + c * arq;
        }
      }
    }
    converged = !rotated;
  }
  if (!converged) throw std::runtime_error("Jacobi eigensolver did not converge");
  std::vector<double> ev(n);
  for (std::size_t i = 0; i < n; ++i) ev[i] = m(i, i);
  std::sort(ev.begin(), ev.end(), std::greater<>());
  return ev;
}

struct Spectrum {
  std::vector<double> singular_values;  // descending, length min(rows, cols)
  std::size_t rows = 0;
  std::size_t cols = 0;
};

/// Singular values of a row-major rows x cols matrix from the eigenvalues of
/// its smaller Gram matrix (EᵀE when rows >= cols, EEᵀ otherwise). Rows are
/// used as given unless `center` subtracts the column means first.
inline Spectrum singular_values(std::span<const double> data, std::size_t rows, std::size_t cols, bool center = false) {
  if (rows == 0 || cols == 0) throw InputError("spectrum needs at least one row and one column");
  if (data.size() != rows * cols) throw InputError("matrix data size does not match its shape");
  for (double x : data)
    if (!std::isfinite(x)) throw InputError("non-finite entry in embedding matrix");

  std::vector<double> e(data.begin(), data.end());
  if (center) {
    for (std::size_t j = 0; j < cols; ++j) {
      double mean = 0.0;
      for (std::size_t i = 0; i < rows; ++i) mean += e[i * cols + j];
      mean /= static_cast<double>(rows);
      for (std::size_t i = 0; i < rows; ++i) e[i * cols + j] -= mean;
    }
  }

  const bool by_cols = rows >= cols;
  const std::size_t m = by_cols ? cols : rows;
  SymmetricMatrix gram(m);
  if (by_cols) {
    for (std::size_t i = 0; i < rows; ++i) {
      const double* r = e.data() + i * cols;
      for (std::size_t a = 0; a < cols; ++a)
        for (std::size_t b = a; b < cols; ++b) gram(a, b) += r[a] * r[b];
    }
  } else {
    for (std::size_t a = 0; a < rows; ++a)
      for (std::size_t b = a; b < rows; ++b) {
        double s = 0.0;
        for (std::size_t j = 0; j < cols; ++j) s += e[a * cols + j] * e[b * cols + j];
        gram(a, b) = s;
      }
  }
  double trace = 0.0;
  for (std::size_t a = 0; a < m; ++a) {
    trace += gram(a, a);
    for (std::size_t b = a + 1; b < m; ++b) gram(b, a) = gram(a, b);
  }

  const auto ev = jacobi_eigenvalues(gram);
  Spectrum s{{}, rows, cols};
  s.singular_values.reserve(m);
  double ev_sum = 0.0;
  for (double v : ev) {
    ev_sum += v;
    s.singular_values.push_back(std::sqrt(std::max(v, 0.0)));
  }
  // Rotations preserve the trace, so the eigenvalue sum must reproduce the
  // squared Frobenius norm.
  if (std::abs(ev_sum - trace) > 1e-8 * std::max(trace, 1e-300))
    throw std::runtime_error("spectrum check failed: eigenvalue sum deviates from trace");
  return s;
}

/// Spectrum of the embeddings of `ids`, stacked in the given order.
inline Spectrum singular_values(const EmbeddingSet& emb, const std::vector<std::string>& ids, bool center = false) {
  if (ids.empty()) throw InputError("spectrum needs at least one document");
  std::vector<double> data;
  data.reserve(ids.size() * emb.dim());
  for (const auto& id : ids) {
    const auto r = emb.row(id);
    data.insert(data.end(), r.begin(), r.end());
  }
  return singular_values(data, ids.size(), emb.dim(), center);
}

struct SpectrumComparison {
  std::vector<double> ratio;  // sigma_G / sigma_H per index; NaN where only sigma_H is 0
  std::vector<double> normalized_human;
  std::vector<double> normalized_generated;
  std::size_t band = 0;  // indices in the head and in the tail band (10%, at least 1)
  double head_ratio = 1.0;
  double tail_ratio = 1.0;
  double head_ratio_normalized = 1.0;
  double tail_ratio_normalized = 1.0;
  bool generated_head_larger = false;
  bool generated_tail_smaller = false;
  std::string summary;
};

namespace detail {

inline double band_ratio(const std::vector<double>& g, const std::vector<double>& h, std::size_t from, std::size_t to) {
  double sg = 0.0, sh = 0.0;
  for (std::size_t i = from; i < to; ++i) {
    sg += g[i];
    sh += h[i];
  }
  if (sh == 0.0) return sg == 0.0 ? 1.0 : std::numeric_limits<double>::quiet_NaN();
  return sg / sh;
}

inline std::vector<double> normalized(const std::vector<double>& s) {
  double total = 0.0;
  for (double x : s) total += x;
  std::vector<double> out(s.size(), 0.0);
  if (total > 0.0)
    for (std::size_t i = 0; i < s.size(); ++i) out[i] = s[i] / total;
  return out;
}

}  // namespace detail

/// Head/tail summary: the generated spectrum is "head-heavy" when, after
/// normalizing each spectrum to unit sum, its top band carries more mass and
/// its bottom band less than the human spectrum.
inline SpectrumComparison compare_spectra(const Spectrum& human, const Spectrum& generated) {
  const auto& h = human.singular_values;
  const auto& g = generated.singular_values;
  if (h.size() != g.size() || h.empty())
    throw InputError("spectra have different lengths (" + std::to_string(h.size()) + " vs " + std::to_string(g.size()) +
                     ")");
  SpectrumComparison c;
  const std::size_t n = h.size();
  c.ratio.resize(n);
  for (std::size_t i = 0; i < n; ++i)
    c.ratio[i] = h[i] == 0.0 ? (g[i] == 0.0 ? 1.0 : std::numeric_limits<double>::quiet_NaN()) : g[i] / h[i];
  c.normalized_human = detail::normalized(h);
  c.normalized_generated = detail::normalized(g);
  c.band = std::max<std::size_t>(1, n / 10);
  c.head_ratio = detail::band_ratio(g, h, 0, c.band);
  c.tail_ratio = detail::band_ratio(g, h, n - c.band, n);
  c.head_ratio_normalized = detail::band_ratio(c.normalized_generated, c.normalized_human, 0, c.band);
  c.tail_ratio_normalized = detail::band_ratio(c.normalized_generated, c.normalized_human, n - c.band, n);

  constexpr double kSame = 1e-12;
  const bool same = std::abs(c.head_ratio_normalized - 1.0) <= kSame && std::abs(c.tail_ratio_normalized - 1.0) <= kSame;
  c.generated_head_larger = !same && c.head_ratio_normalized > 1.0;
  c.generated_tail_smaller = !same && c.tail_ratio_normalized < 1.0;
  if (same)
    c.summary = "no difference";
  else if (c.generated_head_larger && c.generated_tail_smaller)
    c.summary = "generated head-heavy";
  else if (!c.generated_head_larger && !c.generated_tail_smaller)
    c.summary = "generated tail-heavy";
  else
    c.summary = "mixed";
  return c;
}

// ---------------------------------------------------------------------------
// Perplexity (log convention: nats, not exponentiated)

inline double perplexity(std::span<const double> logprobs) {
  if (logprobs.empty()) throw InputError("perplexity of an empty token list");
  double sum = 0.0;
  for (double x : logprobs) sum += x;
  return -sum / static_cast<double>(logprobs.size());
}

inline double perplexity(const TokenLogProbs& t) {
  if (t.logprobs.empty()) throw InputError("document '" + t.doc_id + "' has no tokens");
  return perplexity(std::span<const double>(t.logprobs));
}

struct SourcePpl {
  std::size_t count = 0;
  double mean = 0.0;
  double median = 0.0;
  Histogram histogram;
};

struct PplSummary {
  std::map<std::string, double> per_doc;
  SourcePpl human;
  SourcePpl generated;
  double mean_difference = 0.0;  // generated mean minus human mean
};

namespace detail {

inline double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const auto n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace detail

/// Per-document PPL, per-source mean/median, and 20-bin histograms sharing the
/// observed range of both sources.
inline PplSummary ppl_summary(const std::vector<TokenLogProbs>& human, const std::vector<TokenLogProbs>& generated,
                              unsigned threads = 1) {
  if (human.empty() || generated.empty()) throw InputError("both sources need at least one document");
  std::unordered_set<std::string> ids;
  for (const auto* side : {&human, &generated})
    for (const auto& t : *side)
      if (!ids.insert(t.doc_id).second) throw InputError("document id '" + t.doc_id + "' appears more than once");

  auto compute = [&](const std::vector<TokenLogProbs>& side) {
    std::vector<double> out(side.size());
    parallel_for(side.size(), threads, [&](std::size_t i) { out[i] = perplexity(side[i]); });
    return out;
  };
  const auto ph = compute(human);
  const auto pg = compute(generated);

  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (const auto* v : {&ph, &pg})
    for (double x : *v) {
      lo = std::min(lo, x);
      hi = std::max(hi, x);
    }
  if (hi <= lo) hi = lo + 1.0;

  auto summarize = [&](const std::vector<double>& v) {
    SourcePpl s;
    s.count = v.size();
    double sum = 0.0;
    for (double x : v) sum += x;
    s.mean = sum / static_cast<double>(v.size());
    s.median = detail::median(v);
    s.histogram = Histogram{lo, hi, {}};
    for (double x : v) s.histogram.add(x);
    return s;
  };

  PplSummary out;
  for (std::size_t i = 0; i < human.size(); ++i) out.per_doc[human[i].doc_id] = ph[i];
  for (std::size_t i = 0; i < generated.size(); ++i) out.per_doc[generated[i].doc_id] = pg[i];
  out.human = summarize(ph);
  out.generated = summarize(pg);
  out.mean_difference = out.generated.mean - out.human.mean;
  return out;
}

/// Splits token log-probs by the source recorded in the corpus.
inline PplSummary ppl_summary(const Corpus& corpus, const std::vector<TokenLogProbs>& all, unsigned threads = 1) {
  std::vector<TokenLogProbs> human, generated;
  for (const auto& t : all) {
    const auto s = corpus.source_of(t.doc_id);
    if (!s) throw InputError("log-probs for unknown document '" + t.doc_id + "'");
    (*s == Source::Human ? human : generated).push_back(t);
  }
  return ppl_summary(human, generated, threads);
}

// ---------------------------------------------------------------------------
// JSON

inline nlohmann::ordered_json spectrum_json(const Spectrum& s) {
  nlohmann::ordered_json j;
  j["rows"] = s.rows;
  j["cols"] = s.cols;
  j["singular_values"] = s.singular_values;
  return j;
}

inline nlohmann::ordered_json comparison_json(const SpectrumComparison& c) {
  nlohmann::ordered_json j;
  j["ratio"] = c.ratio;  // NaN serializes as null
  j["normalized_human"] = c.normalized_human;
  j["normalized_generated"] = c.normalized_generated;
  j["band"] = c.band;
  j["head_ratio"] = c.head_ratio;
  j["tail_ratio"] = c.tail_ratio;
  j["head_ratio_normalized"] = c.head_ratio_normalized;
  j["tail_ratio_normalized"] = c.tail_ratio_normalized;
  j["generated_head_larger"] = c.generated_head_larger;
  j["generated_tail_smaller"] = c.generated_tail_smaller;
  j["summary"] = c.summary;
  return j;
}

inline nlohmann::ordered_json ppl_json(const PplSummary& p) {
  auto side = [](const SourcePpl& s) {
    nlohmann::ordered_json j;
    j["count"] = s.count;
    j["mean"] = s.mean;
    j["median"] = s.median;
    j["histogram"] = {{"lo", s.histogram.lo},
                      {"hi", s.histogram.hi},
                      {"counts", std::vector<std::size_t>(s.histogram.counts.begin(), s.histogram.counts.end())}};
    return j;
  };
  nlohmann::ordered_json j;
  j["schema"] = "srcbias.ppl/1";
  j["units"] = "nats (log perplexity)";
  j["human"] = side(p.human);
  j["generated"] = side(p.generated);
  j["mean_difference"] = p.mean_difference;
  nlohmann::ordered_json docs = nlohmann::ordered_json::object();
  for (const auto& [id, v] : p.per_doc) docs[id] = v;
  j["per_doc"] = std::move(docs);
  return j;
}

}  // namespace srcbias::compression
