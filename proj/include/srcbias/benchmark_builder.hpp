#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "srcbias/common.hpp"
#include "srcbias/corpus_store.hpp"
#include "srcbias/text.hpp"

namespace srcbias::builder {

inline const std::vector<std::string>& default_cleanup_patterns() {
  static const std::vector<std::string> patterns{"Sure, here", "Here is", "Here's"};
  return patterns;
}

struct BuildConfig {
  std::string model_tag;
  std::vector<std::string> cleanup_patterns = default_cleanup_patterns();
  std::optional<std::string> prompt_id;
};

/// Drops leading chatter such as "Sure, here's a possible rewrite of the
/// text:" from an LLM response. While the first non-empty line starts with one
/// of the literal prefixes it is removed; the remainder is trimmed. Repeating
/// the removal keeps the operation idempotent.
inline std::string clean_generated(std::string_view raw, const std::vector<std::string>& patterns) {
  std::string_view rest = raw;
  for (;;) {
    std::size_t pos = 0;
    std::string_view first;
    std::size_t line_end = 0;
    while (pos < rest.size()) {
      line_end = rest.find('\n', pos);
      if (line_end == std::string_view::npos) line_end = rest.size();
      first = trim(rest.substr(pos, line_end - pos));
      if (!first.empty()) break;
      pos = line_end + 1;
    }
    if (first.empty()) break;
    const bool chatter = std::any_of(patterns.begin(), patterns.end(), [&](const std::string& p) {
      return !p.empty() && first.substr(0, p.size()) == p;
    });
    if (!chatter) break;
    rest = line_end >= rest.size() ? std::string_view{} : rest.substr(line_end + 1);
  }
  auto cleaned = trim(rest);
  if (cleaned.empty()) throw InputError("generated text is empty after cleanup");
  return std::string(cleaned);
}

struct MixedBenchmark {
  Corpus corpus;
  QrelSet qrels;
};

/// Adds one generated document per entry of `generated_texts` (keyed by the
/// id of its human origin) as "<origin>@<model_tag>", and copies every human
/// qrel onto the generated counterpart. The input corpus may already hold
/// generated documents from another model; only human documents are valid
/// origins. Output order: input documents, then new documents in the order of
/// their origins in the input corpus.
inline MixedBenchmark build_benchmark(const Corpus& input, const std::map<std::string, std::string>& generated_texts,
                                      const QrelSet& human_qrels, const BuildConfig& cfg) {
  if (cfg.model_tag.empty()) throw InputError("model tag must not be empty");
  for (char c : cfg.model_tag)
    if (c == ' ' || c == '\t' || c == '\n') throw InputError("model tag must not contain whitespace");
  for (const auto& [origin, raw] : generated_texts) {
    const auto* d = input.find(origin);
    if (d == nullptr) throw InputError("generated text references unknown origin_id '" + origin + "'");
    if (d->source != Source::Human)
      throw InputError("generated text origin '" + origin + "' is not a human-written document");
  }

  std::vector<SourcedDocument> docs = input.documents();
  std::map<std::string, std::string> counterpart;  // human id -> generated id
  for (const auto& h : input.documents()) {
    auto it = generated_texts.find(h.id);
    if (it == generated_texts.end()) continue;
    SourcedDocument g;
    g.id = h.id + "@" + cfg.model_tag;
    if (input.find(g.id) != nullptr) throw InputError("generated id '" + g.id + "' collides with an existing document");
    g.title = h.title;
    try {
      g.text = clean_generated(it->second, cfg.cleanup_patterns);
    } catch (const InputError& e) {
      throw InputError("origin '" + h.id + "': " + e.what());
    }
    g.source = Source::Generated;
    g.model_tag = cfg.model_tag;
    g.origin_id = h.id;
    counterpart.emplace(h.id, g.id);
    docs.push_back(std::move(g));
  }

  QrelSet qrels = human_qrels;
  for (const auto& [q, row] : human_qrels.by_query()) {
    for (const auto& [d, grade] : row) {
      auto it = counterpart.find(d);
      if (it != counterpart.end()) qrels.add(q, it->second, grade);
    }
  }
  return MixedBenchmark{Corpus(std::move(docs)), std::move(qrels)};
}

/// Generated-texts JSONL written by the rewrite adapter: {"origin_id", "text"}
/// ("_id" accepted in place of "origin_id").
inline std::map<std::string, std::string> load_generated_texts(const std::string& path) {
  const auto lines = read_lines(path);
  std::map<std::string, std::string> out;
  for (std::size_t i = 0; i < lines.size(); ++i) {
    if (trim(lines[i]).empty()) continue;
    const auto where = location(path, i + 1);
    auto j = srcbias::detail::parse_json_line(lines[i], where);
    std::string origin = srcbias::detail::string_field(j, "origin_id", where, false);
    if (origin.empty()) origin = srcbias::detail::string_field(j, "_id", where);
    auto text = srcbias::detail::string_field(j, "text", where);
    if (!out.emplace(origin, std::move(text)).second)
      throw InputError(where + ": duplicate generated text for origin '" + origin + "'");
  }
  return out;
}

// ---------------------------------------------------------------------------
// Validation statistics

struct TermOverlap {
  double jaccard = 0.0;
  double overlap = 0.0;
};

inline std::set<std::string> term_set(std::string_view text) {
  auto toks = text::tokenize(text);
  return {std::make_move_iterator(toks.begin()), std::make_move_iterator(toks.end())};
}

/// jaccard = |G∩H| / |G∪H|, overlap = |G∩H| / |H|. Overlap is not symmetric.
inline TermOverlap jaccard_overlap(std::string_view generated_text, std::string_view human_text) {
  const auto g = term_set(generated_text);
  const auto h = term_set(human_text);
  if (h.empty()) throw InputError("human document has no terms");
  std::size_t inter = 0;
  for (const auto& t : g) inter += h.count(t);
  const std::size_t uni = g.size() + h.size() - inter;
  return {static_cast<double>(inter) / static_cast<double>(uni),
          static_cast<double>(inter) / static_cast<double>(h.size())};
}

inline TermOverlap jaccard_overlap(const SourcedDocument& generated, const SourcedDocument& human) {
  try {
    return jaccard_overlap(generated.text, human.text);
  } catch (const InputError& e) {
    throw InputError("document '" + human.id + "': " + e.what());
  }
}

inline double cosine(std::span<const double> a, std::span<const double> b) {
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0.0 || nb == 0.0) return 0.0;
  return std::clamp(dot / (std::sqrt(na) * std::sqrt(nb)), -1.0, 1.0);
}

struct PairStats {
  std::string generated_id;
  std::string human_id;
  double jaccard = 0.0;
  double overlap = 0.0;
  std::optional<double> cosine;
};

struct CorpusStats {
  std::vector<PairStats> pairs;  // ordered by generated doc id
  Histogram jaccard_hist{0.0, 1.0, {}};
  Histogram overlap_hist{0.0, 1.0, {}};
  std::optional<Histogram> cosine_hist;
  double mean_jaccard = 0.0;
  double mean_overlap = 0.0;
  std::optional<double> mean_cosine;
  std::size_t human_docs = 0;
  std::size_t generated_docs = 0;
  double avg_human_length = 0.0;
  double avg_generated_length = 0.0;
};

/// Term and embedding similarity between every generated document and its
/// human origin, plus per-source average lengths (whitespace tokens).
inline CorpusStats corpus_stats(const Corpus& mixed, const EmbeddingSet* embeddings = nullptr, unsigned threads = 1) {
  CorpusStats st;
  std::vector<const SourcedDocument*> generated;
  double len_h = 0.0, len_g = 0.0;
  for (const auto& d : mixed.documents()) {
    const auto len = static_cast<double>(text::whitespace_length(d.text));
    if (d.source == Source::Human) {
      ++st.human_docs;
      len_h += len;
    } else {
      ++st.generated_docs;
      len_g += len;
      generated.push_back(&d);
    }
  }
  if (st.human_docs) st.avg_human_length = len_h / static_cast<double>(st.human_docs);
  if (st.generated_docs) st.avg_generated_length = len_g / static_cast<double>(st.generated_docs);
  std::sort(generated.begin(), generated.end(), [](auto* a, auto* b) { return a->id < b->id; });

  if (embeddings != nullptr) {
    for (const auto* g : generated) {
      if (!embeddings->contains(g->id)) throw InputError("no embedding for document '" + g->id + "'");
      if (!embeddings->contains(*g->origin_id)) throw InputError("no embedding for document '" + *g->origin_id + "'");
    }
  }

  st.pairs.resize(generated.size());
  parallel_for(generated.size(), threads, [&](std::size_t i) {
    const auto& g = *generated[i];
    const auto& h = mixed.at(*g.origin_id);
    const auto to = jaccard_overlap(g, h);
    PairStats p{g.id, h.id, to.jaccard, to.overlap, std::nullopt};
    if (embeddings != nullptr) p.cosine = cosine(embeddings->row(g.id), embeddings->row(h.id));
    st.pairs[i] = std::move(p);
  });

  if (embeddings != nullptr) st.cosine_hist = Histogram{-1.0, 1.0, {}};
  double sj = 0.0, so = 0.0, sc = 0.0;
  for (const auto& p : st.pairs) {
    st.jaccard_hist.add(p.jaccard);
    st.overlap_hist.add(p.overlap);
    sj += p.jaccard;
    so += p.overlap;
    if (p.cosine) {
      st.cosine_hist->add(*p.cosine);
      sc += *p.cosine;
    }
  }
  if (!st.pairs.empty()) {
    const auto n = static_cast<double>(st.pairs.size());
    st.mean_jaccard = sj / n;
    st.mean_overlap = so / n;
    if (embeddings != nullptr) st.mean_cosine = sc / n;
  }
  return st;
}

inline nlohmann::ordered_json histogram_json(const Histogram& h) {
  nlohmann::ordered_json j;
  j["lo"] = h.lo;
  j["hi"] = h.hi;
  j["bins"] = kHistogramBins;
  j["counts"] = std::vector<std::size_t>(h.counts.begin(), h.counts.end());
  return j;
}

inline nlohmann::ordered_json stats_json(const CorpusStats& st) {
  nlohmann::ordered_json j;
  j["schema"] = "srcbias.corpus_stats/1";
  j["human_docs"] = st.human_docs;
  j["generated_docs"] = st.generated_docs;
  j["pairs"] = st.pairs.size();
  j["avg_doc_length"] = {{"human", st.avg_human_length}, {"generated", st.avg_generated_length}};
  j["jaccard"] = {{"mean", st.mean_jaccard}, {"histogram", histogram_json(st.jaccard_hist)}};
  j["overlap"] = {{"mean", st.mean_overlap}, {"histogram", histogram_json(st.overlap_hist)}};
  if (st.cosine_hist)
    j["cosine"] = {{"mean", *st.mean_cosine}, {"histogram", histogram_json(*st.cosine_hist)}};
  return j;
}

inline std::string pairs_csv(const CorpusStats& st) {
  std::string out = "generated_id,human_id,jaccard,overlap,cosine\n";
  for (const auto& p : st.pairs) {
    out += p.generated_id + ',' + p.human_id + ',' + format_double(p.jaccard) + ',' + format_double(p.overlap) + ',';
    if (p.cosine) out += format_double(*p.cosine);
    out += '\n';
  }
  return out;
}

}  // namespace srcbias::builder
