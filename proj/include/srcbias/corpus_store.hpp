#pragma once

// Data model and file IO for mixed-source benchmarks.
//
//   corpus     JSONL  {"_id", "title", "text", "source": "human"|"generated", "model"?, "origin_id"?}
//   queries    JSONL  {"_id", "text"}
//   qrels      TSV    query-id <TAB> doc-id <TAB> grade   (or TREC: qid 0 docid grade)
//   embeddings JSONL  {"_id", "vector": [...]}
//   logprobs   JSONL  {"_id", "logprobs": [... <= 0]}
//   runs       TREC   qid Q0 docid rank score tag
//
// Loaded structures are immutable after construction; loaders report the
// offending file and line on any violation.

#include <cmath>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include "json.hpp"
#include "srcbias/common.hpp"

namespace srcbias {

enum class Source { Human, Generated };

inline constexpr std::string_view to_string(Source s) {
  return s == Source::Human ? "human" : "generated";
}

inline std::optional<Source> parse_source(std::string_view s) {
  std::string lower;
  for (char c : s) lower += static_cast<char>(c >= 'A' && c <= 'Z' ? c + 32 : c);
  if (lower == "human") return Source::Human;
  if (lower == "generated") return Source::Generated;
  return std::nullopt;
}

struct SourcedDocument {
  std::string id;
  std::string title;
  std::string text;
  Source source = Source::Human;
  std::optional<std::string> model_tag;  // present iff Generated
  std::optional<std::string> origin_id;  // present iff Generated

  bool operator==(const SourcedDocument&) const = default;
};

class Corpus {
 public:
  Corpus() = default;

  explicit Corpus(std::vector<SourcedDocument> docs) : docs_(std::move(docs)) {
    index_.reserve(docs_.size());
    for (std::size_t i = 0; i < docs_.size(); ++i) {
      const auto& d = docs_[i];
      if (d.id.empty()) throw InputError("document #" + std::to_string(i + 1) + " has an empty id");
      if (!index_.emplace(d.id, i).second) throw InputError("duplicate document id '" + d.id + "'");
      check_provenance_fields(d);
    }
    for (const auto& d : docs_) {
      if (!d.origin_id) continue;
      const auto* origin = find(*d.origin_id);
      if (origin == nullptr)
        throw InputError("document '" + d.id + "' references unknown origin_id '" + *d.origin_id + "'");
      if (origin->source != Source::Human)
        throw InputError("document '" + d.id + "' has origin '" + *d.origin_id + "' which is not human-written");
    }
  }

  const std::vector<SourcedDocument>& documents() const { return docs_; }
  std::size_t size() const { return docs_.size(); }
  bool empty() const { return docs_.empty(); }

  const SourcedDocument* find(std::string_view id) const {
    auto it = index_.find(std::string(id));
    return it == index_.end() ? nullptr : &docs_[it->second];
  }

  const SourcedDocument& at(std::string_view id) const {
    const auto* d = find(id);
    if (d == nullptr) throw InputError("unknown document id '" + std::string(id) + "'");
    return *d;
  }

  std::optional<std::size_t> index_of(std::string_view id) const {
    auto it = index_.find(std::string(id));
    if (it == index_.end()) return std::nullopt;
    return it->second;
  }

  std::optional<Source> source_of(std::string_view id) const {
    const auto* d = find(id);
    if (d == nullptr) return std::nullopt;
    return d->source;
  }

  std::size_t count(Source s) const {
    std::size_t n = 0;
    for (const auto& d : docs_) n += d.source == s ? 1 : 0;
    return n;
  }

  static void check_provenance_fields(const SourcedDocument& d) {
    if (d.source == Source::Generated) {
      if (!d.origin_id || d.origin_id->empty())
        throw InputError("generated document '" + d.id + "' has no origin_id");
      if (!d.model_tag || d.model_tag->empty())
        throw InputError("generated document '" + d.id + "' has no model tag");
    } else {
      if (d.origin_id) throw InputError("human document '" + d.id + "' must not carry an origin_id");
      if (d.model_tag) throw InputError("human document '" + d.id + "' must not carry a model tag");
    }
  }

 private:
  std::vector<SourcedDocument> docs_;
  std::unordered_map<std::string, std::size_t> index_;
};

struct Query {
  std::string id;
  std::string text;

  bool operator==(const Query&) const = default;
};

/// Graded judgments keyed by (query, doc). Iteration order is lexicographic,
/// which keeps every derived output deterministic.
class QrelSet {
 public:
  using Judgments = std::map<std::string, int>;

  /// Re-adding an identical entry is a no-op; a different grade for an existing key is an error.
  void add(const std::string& query_id, const std::string& doc_id, int grade) {
    if (grade < 0)
      throw InputError("negative grade " + std::to_string(grade) + " for (" + query_id + ", " + doc_id + ")");
    auto& row = entries_[query_id];
    auto [it, inserted] = row.emplace(doc_id, grade);
    if (inserted) {
      ++size_;
    } else if (it->second != grade) {
      throw InputError("conflicting grades " + std::to_string(it->second) + " and " + std::to_string(grade) +
                       " for (" + query_id + ", " + doc_id + ")");
    }
  }

  std::optional<int> grade(const std::string& query_id, const std::string& doc_id) const {
    auto q = entries_.find(query_id);
    if (q == entries_.end()) return std::nullopt;
    auto d = q->second.find(doc_id);
    if (d == q->second.end()) return std::nullopt;
    return d->second;
  }

  const Judgments* judgments(const std::string& query_id) const {
    auto it = entries_.find(query_id);
    return it == entries_.end() ? nullptr : &it->second;
  }

  const std::map<std::string, Judgments>& by_query() const { return entries_; }
  std::size_t size() const { return size_; }
  bool empty() const { return size_ == 0; }

  /// Set union on keyed entries; conflicting grades throw.
  QrelSet merged(const QrelSet& other) const {
    QrelSet out = *this;
    for (const auto& [q, row] : other.entries_)
      for (const auto& [d, g] : row) out.add(q, d, g);
    return out;
  }

  bool operator==(const QrelSet&) const = default;

 private:
  std::map<std::string, Judgments> entries_;
  std::size_t size_ = 0;
};

struct RunEntry {
  std::string doc_id;
  double score = 0.0;
  int rank = 0;

  bool operator==(const RunEntry&) const = default;
};

struct RunList {
  std::string query_id;
  std::vector<RunEntry> entries;

  bool operator==(const RunList&) const = default;

  void validate() const {
    std::unordered_set<std::string_view> seen;
    for (std::size_t i = 0; i < entries.size(); ++i) {
      const auto& e = entries[i];
      if (e.rank != static_cast<int>(i) + 1)
        throw InputError("query " + query_id + ": ranks are not contiguous from 1 (found rank " +
                         std::to_string(e.rank) + " at position " + std::to_string(i + 1) + ")");
      if (!std::isfinite(e.score)) throw InputError("query " + query_id + ": non-finite score for " + e.doc_id);
      if (i > 0 && e.score > entries[i - 1].score)
        throw InputError("query " + query_id + ": score increases at rank " + std::to_string(e.rank));
      if (!seen.insert(e.doc_id).second)
        throw InputError("query " + query_id + ": duplicate document " + e.doc_id);
    }
  }
};

class EmbeddingSet {
 public:
  EmbeddingSet() = default;
  explicit EmbeddingSet(std::size_t dim) : dim_(dim) {
    if (dim == 0) throw InputError("embedding dimension must be positive");
  }

  void add(const std::string& id, std::span<const double> v) {
    if (dim_ == 0) {
      if (v.empty()) throw InputError("embedding for '" + id + "' is empty");
      dim_ = v.size();
    }
    if (v.size() != dim_)
      throw InputError("dimension mismatch for '" + id + "': expected " + std::to_string(dim_) + ", got " +
                       std::to_string(v.size()));
    for (double x : v)
      if (!std::isfinite(x)) throw InputError("non-finite component in embedding '" + id + "'");
    if (!index_.emplace(id, ids_.size()).second) throw InputError("duplicate embedding id '" + id + "'");
    ids_.push_back(id);
    data_.insert(data_.end(), v.begin(), v.end());
  }

  std::size_t dim() const { return dim_; }
  std::size_t size() const { return ids_.size(); }
  const std::vector<std::string>& ids() const { return ids_; }
  bool contains(std::string_view id) const { return index_.count(std::string(id)) != 0; }

  std::span<const double> row(std::size_t i) const { return {data_.data() + i * dim_, dim_}; }

  std::span<const double> row(std::string_view id) const {
    auto it = index_.find(std::string(id));
    if (it == index_.end()) throw InputError("no embedding for '" + std::string(id) + "'");
    return row(it->second);
  }

 private:
  std::size_t dim_ = 0;
  std::vector<std::string> ids_;
  std::unordered_map<std::string, std::size_t> index_;
  std::vector<double> data_;
};

struct TokenLogProbs {
  std::string doc_id;
  std::vector<double> logprobs;

  std::size_t token_count() const { return logprobs.size(); }
  bool operator==(const TokenLogProbs&) const = default;
};

// ---------------------------------------------------------------------------
// JSONL helpers

namespace detail {

using nlohmann::json;

inline json parse_json_line(const std::string& line, const std::string& where) {
  try {
    json j = json::parse(line);
    if (!j.is_object()) throw InputError(where + ": expected a JSON object");
    return j;
  } catch (const json::exception& e) {
    throw InputError(where + ": malformed JSON (" + e.what() + ")");
  }
}

inline std::string string_field(const json& j, const char* key, const std::string& where, bool required = true) {
  auto it = j.find(key);
  if (it == j.end() || it->is_null()) {
    if (required) throw InputError(where + ": missing field \"" + key + "\"");
    return {};
  }
  if (it->is_string()) return it->get<std::string>();
  if (it->is_number_integer()) return it->dump();
  throw InputError(where + ": field \"" + key + "\" must be a string");
}

inline std::vector<double> number_array(const json& j, const char* key, const std::string& where) {
  auto it = j.find(key);
  if (it == j.end() || !it->is_array()) throw InputError(where + ": missing array field \"" + key + "\"");
  std::vector<double> out;
  out.reserve(it->size());
  for (const auto& x : *it) {
    if (!x.is_number()) throw InputError(where + ": non-numeric entry in \"" + key + "\"");
    out.push_back(x.get<double>());
  }
  return out;
}

inline bool blank(const std::string& line) { return trim(line).empty(); }

}  // namespace detail

// ---------------------------------------------------------------------------
// Corpus

inline SourcedDocument parse_document(const std::string& line, const std::string& where) {
  auto j = detail::parse_json_line(line, where);
  SourcedDocument d;
  d.id = detail::string_field(j, "_id", where);
  if (d.id.empty()) throw InputError(where + ": empty _id");
  d.title = detail::string_field(j, "title", where, false);
  d.text = detail::string_field(j, "text", where);
  const auto src = detail::string_field(j, "source", where, false);
  if (src.empty()) {
    d.source = Source::Human;
  } else if (auto s = parse_source(src)) {
    d.source = *s;
  } else {
    throw InputError(where + ": unknown source \"" + src + "\"");
  }
  if (j.contains("model") && !j["model"].is_null()) d.model_tag = detail::string_field(j, "model", where);
  if (j.contains("origin_id") && !j["origin_id"].is_null()) d.origin_id = detail::string_field(j, "origin_id", where);
  try {
    Corpus::check_provenance_fields(d);
  } catch (const InputError& e) {
    throw InputError(where + ": " + e.what());
  }
  return d;
}

inline Corpus load_corpus(const std::string& path) {
  const auto lines = read_lines(path);
  std::vector<SourcedDocument> docs;
  std::unordered_map<std::string, std::size_t> line_of;
  for (std::size_t i = 0; i < lines.size(); ++i) {
    if (detail::blank(lines[i])) continue;
    const auto where = location(path, i + 1);
    auto d = parse_document(lines[i], where);
    if (!line_of.emplace(d.id, i + 1).second)
      throw InputError(where + ": duplicate document id '" + d.id + "' (first seen at line " +
                       std::to_string(line_of[d.id]) + ")");
    docs.push_back(std::move(d));
  }
  for (const auto& d : docs) {
    if (!d.origin_id) continue;
    auto it = line_of.find(*d.origin_id);
    const auto where = location(path, line_of[d.id]);
    if (it == line_of.end()) throw InputError(where + ": origin_id '" + *d.origin_id + "' not found in corpus");
  }
  try {
    return Corpus(std::move(docs));
  } catch (const InputError& e) {
    throw InputError(path + ": " + e.what());
  }
}

inline std::string format_corpus(const Corpus& corpus) {
  std::string out;
  for (const auto& d : corpus.documents()) {
    nlohmann::ordered_json j;
    j["_id"] = d.id;
    j["title"] = d.title;
    j["text"] = d.text;
    j["source"] = std::string(to_string(d.source));
    if (d.model_tag) j["model"] = *d.model_tag;
    if (d.origin_id) j["origin_id"] = *d.origin_id;
    out += j.dump();
    out += '\n';
  }
  return out;
}

inline void write_corpus(const Corpus& corpus, const std::string& path) { write_file(path, format_corpus(corpus)); }

// ---------------------------------------------------------------------------
// Queries

inline std::vector<Query> load_queries(const std::string& path) {
  const auto lines = read_lines(path);
  std::vector<Query> out;
  std::unordered_set<std::string> seen;
  for (std::size_t i = 0; i < lines.size(); ++i) {
    if (detail::blank(lines[i])) continue;
    const auto where = location(path, i + 1);
    auto j = detail::parse_json_line(lines[i], where);
    Query q{detail::string_field(j, "_id", where), detail::string_field(j, "text", where)};
    if (q.id.empty()) throw InputError(where + ": empty _id");
    if (trim(q.text).empty()) throw InputError(where + ": query '" + q.id + "' has empty text");
    if (!seen.insert(q.id).second) throw InputError(where + ": duplicate query id '" + q.id + "'");
    out.push_back(std::move(q));
  }
  return out;
}

inline void write_queries(const std::vector<Query>& queries, const std::string& path) {
  std::string out;
  for (const auto& q : queries) {
    nlohmann::ordered_json j;
    j["_id"] = q.id;
    j["text"] = q.text;
    out += j.dump();
    out += '\n';
  }
  write_file(path, out);
}

// ---------------------------------------------------------------------------
// Qrels

/// Accepts `qid doc grade` (tab or space separated) and 4-column TREC qrels
/// `qid iter doc grade`. A non-numeric grade on the first non-blank line is
/// taken as a header (BEIR ships "query-id corpus-id score").
inline QrelSet parse_qrels(std::string_view content, const std::string& name) {
  QrelSet qrels;
  std::size_t line_no = 0;
  bool first = true;
  std::size_t pos = 0;
  while (pos <= content.size()) {
    auto nl = content.find('\n', pos);
    if (nl == std::string_view::npos) nl = content.size();
    auto line = content.substr(pos, nl - pos);
    pos = nl + 1;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (trim(line).empty()) {
      if (nl == content.size()) break;
      continue;
    }
    const auto where = location(name, line_no);
    const auto cols = split_ws(line);
    if (cols.size() != 3 && cols.size() != 4)
      throw InputError(where + ": expected 3 or 4 columns, got " + std::to_string(cols.size()));
    const auto grade_tok = cols.back();
    long long grade = 0;
    if (!parse_int(grade_tok, grade)) {
      if (first) {
        first = false;
        continue;
      }
      throw InputError(where + ": grade '" + std::string(grade_tok) + "' is not an integer");
    }
    first = false;
    const std::string q(cols[0]);
    const std::string d(cols.size() == 3 ? cols[1] : cols[2]);
    try {
      qrels.add(q, d, static_cast<int>(grade));
    } catch (const InputError& e) {
      throw InputError(where + ": " + e.what());
    }
    if (nl == content.size()) break;
  }
  return qrels;
}

inline QrelSet load_qrels(const std::string& path) { return parse_qrels(read_file(path), path); }

inline std::string format_qrels(const QrelSet& qrels) {
  std::string out;
  for (const auto& [q, row] : qrels.by_query())
    for (const auto& [d, g] : row) out += q + '\t' + d + '\t' + std::to_string(g) + '\n';
  return out;
}

inline void write_qrels(const QrelSet& qrels, const std::string& path) { write_file(path, format_qrels(qrels)); }

/// Every referenced document must exist in the corpus; queries are checked
/// only when a query list is supplied.
inline void validate_qrels(const QrelSet& qrels, const Corpus& corpus, const std::vector<Query>* queries = nullptr) {
  std::unordered_set<std::string> qids;
  if (queries != nullptr)
    for (const auto& q : *queries) qids.insert(q.id);
  for (const auto& [q, row] : qrels.by_query()) {
    if (queries != nullptr && !qids.count(q)) throw InputError("qrels reference unknown query '" + q + "'");
    for (const auto& [d, g] : row)
      if (corpus.find(d) == nullptr) throw InputError("qrels reference unknown document '" + d + "' (query " + q + ")");
  }
}

// ---------------------------------------------------------------------------
// Runs

inline void check_tag(std::string_view tag) {
  if (tag.empty()) throw InputError("run tag must not be empty");
  for (char c : tag)
    if (c == ' ' || c == '\t' || c == '\n' || c == '\r') throw InputError("run tag must not contain whitespace");
}

inline std::string format_run(const std::vector<RunList>& runs, std::string_view tag) {
  check_tag(tag);
  std::string out;
  std::unordered_set<std::string_view> qids;
  for (const auto& run : runs) {
    run.validate();
    if (!qids.insert(run.query_id).second) throw InputError("duplicate query " + run.query_id + " in run collection");
    for (const auto& e : run.entries) {
      out += run.query_id;
      out += " Q0 ";
      out += e.doc_id;
      out += ' ';
      out += std::to_string(e.rank);
      out += ' ';
      out += format_double(e.score);
      out += ' ';
      out += tag;
      out += '\n';
    }
  }
  return out;
}

inline void write_run(const std::vector<RunList>& runs, const std::string& path, std::string_view tag) {
  write_file(path, format_run(runs, tag));
}

/// Queries are returned in order of first appearance. Within a query, lines
/// must be in ascending rank order starting at 1.
inline std::vector<RunList> parse_run(std::string_view content, const std::string& name) {
  std::vector<RunList> runs;
  std::unordered_map<std::string, std::size_t> slot;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos < content.size()) {
    auto nl = content.find('\n', pos);
    if (nl == std::string_view::npos) nl = content.size();
    auto line = content.substr(pos, nl - pos);
    pos = nl + 1;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (trim(line).empty()) continue;
    const auto where = location(name, line_no);
    const auto cols = split_ws(line);
    if (cols.size() != 6) throw InputError(where + ": expected 6 columns, got " + std::to_string(cols.size()));
    long long rank = 0;
    double score = 0.0;
    if (!parse_int(cols[3], rank) || rank < 1) throw InputError(where + ": invalid rank '" + std::string(cols[3]) + "'");
    if (!parse_double(cols[4], score) || !std::isfinite(score))
      throw InputError(where + ": invalid score '" + std::string(cols[4]) + "'");
    const std::string qid(cols[0]);
    auto [it, inserted] = slot.emplace(qid, runs.size());
    if (inserted) runs.push_back(RunList{qid, {}});
    auto& run = runs[it->second];
    const auto expected = static_cast<long long>(run.entries.size()) + 1;
    if (rank != expected)
      throw InputError(where + ": non-contiguous rank " + std::to_string(rank) + " for query " + qid + " (expected " +
                       std::to_string(expected) + ")");
    for (const auto& e : run.entries)
      if (e.doc_id == cols[2]) throw InputError(where + ": duplicate (" + qid + ", " + std::string(cols[2]) + ")");
    if (!run.entries.empty() && score > run.entries.back().score)
      throw InputError(where + ": score increases with rank for query " + qid);
    run.entries.push_back(RunEntry{std::string(cols[2]), score, static_cast<int>(rank)});
  }
  return runs;
}

inline std::vector<RunList> load_run(const std::string& path) { return parse_run(read_file(path), path); }

// ---------------------------------------------------------------------------
// Embeddings and token log-probabilities

inline EmbeddingSet load_embeddings(const std::string& path) {
  const auto lines = read_lines(path);
  EmbeddingSet set;
  for (std::size_t i = 0; i < lines.size(); ++i) {
    if (detail::blank(lines[i])) continue;
    const auto where = location(path, i + 1);
    auto j = detail::parse_json_line(lines[i], where);
    const auto id = detail::string_field(j, "_id", where);
    const auto v = detail::number_array(j, "vector", where);
    try {
      set.add(id, v);
    } catch (const InputError& e) {
      throw InputError(where + ": " + e.what());
    }
  }
  if (set.size() == 0) throw InputError(path + ": no embeddings");
  return set;
}

inline std::string format_embeddings(const EmbeddingSet& set) {
  std::string out;
  for (std::size_t i = 0; i < set.size(); ++i) {
    nlohmann::ordered_json j;
    j["_id"] = set.ids()[i];
    const auto r = set.row(i);
    j["vector"] = std::vector<double>(r.begin(), r.end());
    out += j.dump();
    out += '\n';
  }
  return out;
}

inline void write_embeddings(const EmbeddingSet& set, const std::string& path) {
  write_file(path, format_embeddings(set));
}

inline void validate_logprobs(const TokenLogProbs& t) {
  if (t.logprobs.empty()) throw InputError("document '" + t.doc_id + "' has no tokens");
  for (double x : t.logprobs)
    if (!std::isfinite(x) || x > 0.0)
      throw InputError("document '" + t.doc_id + "' has log-probability " + format_double(x) + " (must be finite and <= 0)");
}

inline std::vector<TokenLogProbs> load_logprobs(const std::string& path) {
  const auto lines = read_lines(path);
  std::vector<TokenLogProbs> out;
  std::unordered_set<std::string> seen;
  for (std::size_t i = 0; i < lines.size(); ++i) {
    if (detail::blank(lines[i])) continue;
    const auto where = location(path, i + 1);
    auto j = detail::parse_json_line(lines[i], where);
    TokenLogProbs t{detail::string_field(j, "_id", where), detail::number_array(j, "logprobs", where)};
    try {
      validate_logprobs(t);
    } catch (const InputError& e) {
      throw InputError(where + ": " + e.what());
    }
    if (!seen.insert(t.doc_id).second) throw InputError(where + ": duplicate id '" + t.doc_id + "'");
    out.push_back(std::move(t));
  }
  return out;
}

inline void write_logprobs(const std::vector<TokenLogProbs>& all, const std::string& path) {
  std::string out;
  for (const auto& t : all) {
    nlohmann::ordered_json j;
    j["_id"] = t.doc_id;
    j["logprobs"] = t.logprobs;
    out += j.dump();
    out += '\n';
  }
  write_file(path, out);
}

}  // namespace srcbias
