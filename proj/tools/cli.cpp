#include "cli.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <functional>
#include <memory>
#include <sstream>
#include <thread>

#include "CLI11.hpp"
#include "srcbias/srcbias.hpp"

namespace srcbias::cli {

std::string sha256_file(const std::string& path) {
  const std::string data = read_file(path);
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(data.data(), data.size(), md, &len, EVP_sha256(), nullptr) != 1)
    throw std::runtime_error("SHA-256 failed for " + path);
  static const char* hex = "0123456789abcdef";
  std::string out;
  out.reserve(2 * len);
  for (unsigned int i = 0; i < len; ++i) {
    out += hex[md[i] >> 4];
    out += hex[md[i] & 15];
  }
  return out;
}

namespace {

using json = nlohmann::ordered_json;

struct Globals {
  std::uint64_t seed = 42;
  unsigned threads = 1;
  bool quiet = false;
};

class Log {
 public:
  Log(std::ostream& err, bool quiet) : err_(err), quiet_(quiet) {}
  void operator()(const std::string& msg) const {
    if (!quiet_) err_ << msg << '\n';
  }

 private:
  std::ostream& err_;
  bool quiet_;
};

/// Provenance record written next to the primary output as
/// "<output>.manifest.json". Holds no timestamps so reruns are identical.
class Manifest {
 public:
  explicit Manifest(std::string command) : command_(std::move(command)) {}

  json& params() { return params_; }
  void input(const std::string& path) { inputs_.push_back(path); }
  void output(const std::string& path) { outputs_.push_back(path); }

  void write(const std::string& primary) const {
    json j;
    j["schema"] = "srcbias.manifest/1";
    j["tool"] = "srcbias";
    j["version"] = std::string(kVersion);
    j["command"] = command_;
    j["digest"] = "sha256";
    j["parameters"] = params_.is_null() ? json::object() : params_;
    auto files = [](const std::vector<std::string>& paths) {
      auto arr = json::array();
      for (const auto& p : paths) arr.push_back({{"path", p}, {"sha256", sha256_file(p)}});
      return arr;
    };
    j["inputs"] = files(inputs_);
    j["outputs"] = files(outputs_);
    write_file(primary + ".manifest.json", j.dump(2) + "\n");
  }

 private:
  std::string command_;
  json params_;
  std::vector<std::string> inputs_;
  std::vector<std::string> outputs_;
};

void write_json(const std::string& path, const json& j) { write_file(path, j.dump(2) + "\n"); }

std::vector<double> parse_number_list(const std::string& s, const char* what) {
  std::vector<double> out;
  std::size_t i = 0;
  while (i <= s.size()) {
    auto j = s.find(',', i);
    if (j == std::string::npos) j = s.size();
    const auto tok = trim(std::string_view(s).substr(i, j - i));
    double v = 0.0;
    if (!parse_double(tok, v)) throw InputError(std::string("invalid ") + what + " list '" + s + "'");
    out.push_back(v);
    i = j + 1;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Subcommands

struct BuildOpts {
  std::string corpus, generated, qrels, model_tag, out_corpus, out_qrels;
  std::optional<std::string> prompt_id;
  std::vector<std::string> patterns;
  bool no_cleanup = false;
};

void run_build(const BuildOpts& o, const Globals&, const Log& log) {
  const auto corpus = load_corpus(o.corpus);
  const auto generated = builder::load_generated_texts(o.generated);
  const auto qrels = load_qrels(o.qrels);
  validate_qrels(qrels, corpus);
  builder::BuildConfig cfg;
  cfg.model_tag = o.model_tag;
  cfg.prompt_id = o.prompt_id;
  if (o.no_cleanup)
    cfg.cleanup_patterns.clear();
  else if (!o.patterns.empty())
    cfg.cleanup_patterns = o.patterns;
  const auto mixed = builder::build_benchmark(corpus, generated, qrels, cfg);
  write_corpus(mixed.corpus, o.out_corpus);
  write_qrels(mixed.qrels, o.out_qrels);
  log("built " + std::to_string(mixed.corpus.size()) + " documents (" +
      std::to_string(mixed.corpus.count(Source::Generated)) + " generated), " + std::to_string(mixed.qrels.size()) +
      " judgments");

  Manifest m("build");
  m.params() = {{"model_tag", cfg.model_tag},
                {"prompt_id", cfg.prompt_id ? json(*cfg.prompt_id) : json(nullptr)},
                {"cleanup_patterns", cfg.cleanup_patterns}};
  for (const auto* p : {&o.corpus, &o.generated, &o.qrels}) m.input(*p);
  m.output(o.out_corpus);
  m.output(o.out_qrels);
  m.write(o.out_corpus);
}

struct StatsOpts {
  std::string corpus, embeddings, output = "stats.json", pairs;
};

void run_stats(const StatsOpts& o, const Globals& g, const Log& log) {
  const auto corpus = load_corpus(o.corpus);
  std::optional<EmbeddingSet> emb;
  if (!o.embeddings.empty()) emb = load_embeddings(o.embeddings);
  const auto st = builder::corpus_stats(corpus, emb ? &*emb : nullptr, g.threads);
  write_json(o.output, builder::stats_json(st));
  if (!o.pairs.empty()) write_file(o.pairs, builder::pairs_csv(st));
  log("pairs: " + std::to_string(st.pairs.size()) + ", mean jaccard " + format_double(st.mean_jaccard) +
      ", mean overlap " + format_double(st.mean_overlap));

  Manifest m("stats");
  m.input(o.corpus);
  if (emb) m.input(o.embeddings);
  m.output(o.output);
  if (!o.pairs.empty()) m.output(o.pairs);
  m.write(o.output);
}

struct IndexOpts {
  std::string corpus, output = "index.json";
};

void run_index(const IndexOpts& o, const Globals&, const Log& log) {
  const auto corpus = load_corpus(o.corpus);
  const auto idx = retrieval::LexicalIndex::build(corpus);
  write_file(o.output, idx.to_json().dump() + "\n");
  log("indexed " + std::to_string(idx.doc_count()) + " documents, " + std::to_string(idx.vocabulary().size()) +
      " terms");
  Manifest m("index");
  m.input(o.corpus);
  m.output(o.output);
  m.write(o.output);
}

struct SearchOpts {
  std::string corpus, index, queries, model = "bm25", similarity = "dot", doc_embeddings, query_embeddings, tag,
      output = "run.txt";
  double k1 = 1.2, b = 0.75;
  std::size_t top_k = 100;
};

void run_search(const SearchOpts& o, const Globals& g, const Log& log) {
  const auto queries = load_queries(o.queries);
  Manifest m("search");
  m.input(o.queries);
  std::vector<RunList> runs;
  if (o.model == "dense") {
    if (o.corpus.empty() || o.doc_embeddings.empty() || o.query_embeddings.empty())
      throw InputError("dense search needs --corpus, --doc-embeddings and --query-embeddings");
    const auto corpus = load_corpus(o.corpus);
    const auto docs = load_embeddings(o.doc_embeddings);
    const auto qemb = load_embeddings(o.query_embeddings);
    const auto sim = o.similarity == "cosine" ? retrieval::Similarity::Cosine : retrieval::Similarity::Dot;
    const retrieval::DenseScorer scorer(corpus, docs, sim);
    runs = retrieval::search_dense(scorer, qemb, queries, o.top_k, g.threads);
    for (const auto* p : {&o.corpus, &o.doc_embeddings, &o.query_embeddings}) m.input(*p);
    m.params()["similarity"] = o.similarity;
  } else {
    retrieval::LexicalIndex idx;
    if (!o.index.empty()) {
      idx = retrieval::LexicalIndex::from_json(nlohmann::json::parse(read_file(o.index), nullptr, false));
      m.input(o.index);
    } else if (!o.corpus.empty()) {
      idx = retrieval::LexicalIndex::build(load_corpus(o.corpus));
      m.input(o.corpus);
    } else {
      throw InputError("lexical search needs --corpus or --index");
    }
    const auto model = o.model == "tfidf" ? retrieval::LexicalModel::TfIdf : retrieval::LexicalModel::Bm25;
    const retrieval::Bm25Params p{o.k1, o.b};
    runs = retrieval::search_lexical(idx, queries, model, o.top_k, p, g.threads);
    if (model == retrieval::LexicalModel::Bm25) m.params().update({{"k1", o.k1}, {"b", o.b}});
  }
  const std::string tag = o.tag.empty() ? o.model : o.tag;
  write_run(runs, o.output, tag);
  log("searched " + std::to_string(queries.size()) + " queries with " + o.model);
  m.params().update({{"model", o.model}, {"top_k", o.top_k}, {"tag", tag}});
  m.output(o.output);
  m.write(o.output);
}

struct EvaluateOpts {
  std::string run, qrels, corpus, cutoffs = "1,3,5", output = "report.json";
};

void run_evaluate(const EvaluateOpts& o, const Globals& g, std::ostream& out, const Log& log) {
  const auto runs = load_run(o.run);
  const auto qrels = load_qrels(o.qrels);
  const auto corpus = load_corpus(o.corpus);
  std::vector<std::size_t> cutoffs;
  for (double k : parse_number_list(o.cutoffs, "cutoff")) {
    if (k < 1 || k != std::floor(k)) throw InputError("cutoffs must be positive integers");
    cutoffs.push_back(static_cast<std::size_t>(k));
  }
  const auto report = eval::evaluate_runs(runs, qrels, corpus, cutoffs, g.threads);
  write_json(o.output, eval::report_json(report));
  if (!report.queries_without_run.empty())
    log("warning: " + std::to_string(report.queries_without_run.size()) + " judged queries have no run (scored 0)");
  if (!report.unjudged_run_queries.empty())
    log("warning: " + std::to_string(report.unjudged_run_queries.size()) + " run queries have no judgments (ignored)");
  if (!g.quiet) out << eval::render_table(report);

  Manifest m("evaluate");
  m.params() = {{"cutoffs", report.cutoffs}};
  for (const auto* p : {&o.run, &o.qrels, &o.corpus}) m.input(*p);
  m.output(o.output);
  m.write(o.output);
}

struct SpectrumOpts {
  std::string embeddings, corpus, output = "spectrum.json";
  bool center = false;
};

void run_spectrum(const SpectrumOpts& o, const Globals&, const Log& log) {
  const auto corpus = load_corpus(o.corpus);
  const auto emb = load_embeddings(o.embeddings);
  // Paired rows: every generated document and its human origin.
  std::vector<const SourcedDocument*> generated;
  for (const auto& d : corpus.documents())
    if (d.source == Source::Generated) generated.push_back(&d);
  if (generated.empty()) throw InputError("corpus has no generated documents");
  std::sort(generated.begin(), generated.end(), [](auto* a, auto* b) { return a->id < b->id; });
  std::vector<std::string> ids_h, ids_g;
  for (const auto* d : generated) {
    ids_g.push_back(d->id);
    ids_h.push_back(*d->origin_id);
  }
  for (const auto* ids : {&ids_h, &ids_g})
    for (const auto& id : *ids)
      if (!emb.contains(id)) throw InputError("no embedding for document '" + id + "'");
  const auto sh = compression::singular_values(emb, ids_h, o.center);
  const auto sg = compression::singular_values(emb, ids_g, o.center);
  const auto cmp = compression::compare_spectra(sh, sg);
  json j;
  j["schema"] = "srcbias.spectrum/1";
  j["center"] = o.center;
  j["pairs"] = generated.size();
  j["human"] = compression::spectrum_json(sh);
  j["generated"] = compression::spectrum_json(sg);
  j["comparison"] = compression::comparison_json(cmp);
  write_json(o.output, j);
  log("spectrum over " + std::to_string(generated.size()) + " pairs: " + cmp.summary);

  Manifest m("spectrum");
  m.params() = {{"center", o.center}};
  m.input(o.embeddings);
  m.input(o.corpus);
  m.output(o.output);
  m.write(o.output);
}

struct PplOpts {
  std::string logprobs, corpus, output = "ppl.json";
};

void run_ppl(const PplOpts& o, const Globals& g, const Log& log) {
  const auto corpus = load_corpus(o.corpus);
  const auto lp = load_logprobs(o.logprobs);
  const auto summary = compression::ppl_summary(corpus, lp, g.threads);
  write_json(o.output, compression::ppl_json(summary));
  log("mean PPL human " + format_double(summary.human.mean) + ", generated " + format_double(summary.generated.mean));
  Manifest m("ppl");
  m.input(o.logprobs);
  m.input(o.corpus);
  m.output(o.output);
  m.write(o.output);
}

struct TrainOpts {
  std::string triplets, heldout, embeddings, output, csv, alpha_grid;
  double alpha = 0.0;
  bool synthetic = false;
  debias::TrainConfig cfg;
};

struct TrainData {
  debias::TripletSet train;
  std::optional<debias::TripletSet> test;
};

TrainData load_train_data(const TrainOpts& o, const Globals& g, Manifest& m, bool need_test) {
  if (o.synthetic) {
    debias::SyntheticConfig sc;
    sc.seed = g.seed;
    auto data = debias::make_synthetic(sc);
    m.params()["data"] = {{"synthetic", true},
                          {"seed", sc.seed},
                          {"dim", sc.dim},
                          {"train", sc.train},
                          {"test", sc.test},
                          {"human_noise", sc.human_noise},
                          {"generated_noise", sc.generated_noise},
                          {"shortcut", sc.shortcut},
                          {"query_shift", sc.query_shift}};
    return {std::move(data.train), std::move(data.test)};
  }
  if (o.triplets.empty() || o.embeddings.empty()) throw InputError("need --triplets and --embeddings, or --synthetic");
  if (need_test && o.heldout.empty()) throw InputError("need --heldout triplets for evaluation");
  const auto emb = load_embeddings(o.embeddings);
  m.input(o.triplets);
  m.input(o.embeddings);
  TrainData d{debias::TripletSet(debias::load_triplets(o.triplets), emb), std::nullopt};
  if (!o.heldout.empty()) {
    d.test = debias::TripletSet(debias::load_triplets(o.heldout), emb);
    m.input(o.heldout);
  }
  return d;
}

json train_params(const debias::TrainConfig& c) {
  return {{"lr", c.lr},         {"epochs", c.epochs}, {"batch_size", c.batch_size},
          {"seed", c.seed},     {"rank", c.rank},     {"tau", c.tau}};
}

void run_train(TrainOpts o, const Globals& g, const Log& log) {
  Manifest m("train-debias");
  o.cfg.seed = g.seed;
  const auto data = load_train_data(o, g, m, false);
  auto params = train_params(o.cfg);
  std::vector<double> alphas;
  if (!o.alpha_grid.empty())
    alphas = parse_number_list(o.alpha_grid, "alpha");
  else
    alphas.push_back(o.alpha);
  std::vector<debias::TrainResult> results(alphas.size());
  parallel_for(alphas.size(), g.threads, [&](std::size_t i) {
    auto cfg = o.cfg;
    cfg.alpha = alphas[i];
    results[i] = debias::train(data.train, cfg);
  });
  auto entry = [&](std::size_t i) {
    auto j = debias::head_json(results[i].head);
    j["alpha"] = alphas[i];
    j["log"] = debias::log_json(results[i].log);
    return j;
  };
  if (o.alpha_grid.empty()) {
    write_json(o.output, entry(0));
    params["alpha"] = alphas[0];
  } else {
    json j;
    j["schema"] = "srcbias.scoring_heads/1";
    j["heads"] = json::array();
    for (std::size_t i = 0; i < alphas.size(); ++i) j["heads"].push_back(entry(i));
    write_json(o.output, j);
    params["alpha_grid"] = alphas;
  }
  for (std::size_t i = 0; i < alphas.size(); ++i) {
    const auto& last = results[i].log.back();
    log("alpha " + format_double(alphas[i]) + ": final rank loss " + format_double(last.rank) + ", debias loss " +
        format_double(last.debias));
  }
  m.params().update({{"training", params}});
  m.output(o.output);
  m.write(o.output);
}

void run_sweep(TrainOpts o, const Globals& g, std::ostream& out, const Log& log) {
  Manifest m("sweep");
  o.cfg.seed = g.seed;
  const auto data = load_train_data(o, g, m, true);
  std::vector<double> alphas = parse_number_list(o.alpha_grid, "alpha");
  if (alphas.size() < 2) throw InputError("a sweep needs at least 2 alpha values");
  const auto rows = debias::alpha_sweep(data.train, *data.test, o.cfg, alphas, g.threads);
  auto j = debias::sweep_json(rows);
  std::vector<double> a, d;
  for (const auto& r : rows) {
    a.push_back(r.alpha);
    d.push_back(r.result.mixed.at(eval::Metric::Ndcg, 1).relative_delta);
  }
  j["spearman_alpha_vs_delta_ndcg@1"] = debias::spearman(a, d);
  write_json(o.output, j);
  if (!o.csv.empty()) write_file(o.csv, debias::sweep_csv(rows));
  if (!g.quiet) {
    out << "alpha        human@1  gen@1   delta\n";
    for (const auto& r : rows) {
      const auto& n = r.result.mixed.at(eval::Metric::Ndcg, 1);
      char buf[96];
      std::snprintf(buf, sizeof(buf), "%-12g %6.1f %6.1f %7.1f\n", r.alpha, n.human * 100, n.generated * 100,
                    n.relative_delta);
      out << buf;
    }
  }
  log("sweep over " + std::to_string(rows.size()) + " alpha values done");
  auto params = train_params(o.cfg);
  params["alpha_grid"] = alphas;
  m.params().update({{"training", params}});
  m.output(o.output);
  if (!o.csv.empty()) m.output(o.csv);
  m.write(o.output);
}

struct TheoremOpts {
  std::size_t instances = 100, alphabet = 4, length = 5, max_attempts = 100'000;
  std::string sampler = "structured", kl_mode = "per-prefix", instance, output = "theorem.json", save_instances;
};

/// Returns false when an instance satisfying the conditions fails the
/// conclusion or a proof step.
bool run_theorem(const TheoremOpts& o, const Globals& g, const Log& log) {
  const auto mode = o.kl_mode == "averaged" ? theorem::KlMode::PrefixAveraged : theorem::KlMode::PerPrefix;
  Manifest m("verify-theorem");
  std::vector<theorem::TheoremInstance> insts;
  std::vector<std::size_t> attempts;
  if (!o.instance.empty()) {
    // a single JSON document, or JSONL as written by --save-instances
    const auto whole = json::parse(read_file(o.instance), nullptr, false);
    if (!whole.is_discarded()) {
      insts.push_back(theorem::instance_from_json(whole));
    } else {
      const auto lines = read_lines(o.instance);
      for (std::size_t i = 0; i < lines.size(); ++i) {
        if (trim(lines[i]).empty()) continue;
        const auto j = json::parse(lines[i], nullptr, false);
        if (j.is_discarded()) throw InputError(location(o.instance, i + 1) + ": malformed JSON");
        insts.push_back(theorem::instance_from_json(j));
      }
      if (insts.empty()) throw InputError(o.instance + ": no instances");
    }
    attempts.assign(insts.size(), 0);
    m.input(o.instance);
  } else {
    std::mt19937_64 rng(g.seed);
    const auto sampler = o.sampler == "dirichlet" ? theorem::Sampler::Dirichlet : theorem::Sampler::Structured;
    for (std::size_t i = 0; i < o.instances; ++i) {
      theorem::SampleStats st;
      insts.push_back(theorem::sample_instance(rng, o.alphabet, o.length, sampler, mode, o.max_attempts, &st));
      attempts.push_back(st.attempts);
    }
    m.params() = {{"seed", g.seed},     {"instances", o.instances}, {"alphabet", o.alphabet},
                  {"length", o.length}, {"sampler", o.sampler},     {"max_attempts", o.max_attempts}};
  }
  m.params()["kl_mode"] = o.kl_mode;

  bool ok = true;
  std::size_t passed = 0;
  auto results = json::array();
  for (std::size_t i = 0; i < insts.size(); ++i) {
    const auto& inst = insts[i];
    const auto cond = theorem::check_conditions(inst, mode, g.threads);
    const auto thm = theorem::verify_theorem(inst, g.threads);
    const auto chain = theorem::verify_proof_chain(inst, g.threads);
    const bool chain_ok = std::all_of(chain.begin(), chain.end(), [](const auto& s) { return s.holds; });
    if (thm.pass) ++passed;
    if (cond.all() && (!thm.pass || !chain_ok)) ok = false;
    json r;
    r["index"] = i;
    if (attempts[i]) r["attempts"] = attempts[i];
    r["epsilon"] = inst.epsilon;
    r["conditions"] = theorem::conditions_json(cond);
    r["expectation"] = thm.expectation;
    r["pass"] = thm.pass;
    r["proof_chain_holds"] = chain_ok;
    r["proof_chain"] = theorem::proof_json(chain);
    results.push_back(std::move(r));
  }
  json j;
  j["schema"] = "srcbias.theorem_report/1";
  j["kl_mode"] = o.kl_mode;
  j["instances"] = insts.size();
  j["passed"] = passed;
  j["results"] = std::move(results);
  write_json(o.output, j);
  m.output(o.output);
  if (!o.save_instances.empty()) {
    std::string lines;
    for (const auto& inst : insts) lines += theorem::instance_json(inst).dump() + "\n";
    write_file(o.save_instances, lines);
    m.output(o.save_instances);
  }
  m.write(o.output);
  log(std::to_string(passed) + "/" + std::to_string(insts.size()) + " instances satisfy the conclusion");
  return ok;
}

}  // namespace

int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Source-bias measurement for mixed human/LLM retrieval corpora", "srcbias"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(kVersion));
  Globals g;
  app.add_option("--seed", g.seed, "Random seed")->capture_default_str();
  app.add_option("--threads", g.threads, "Worker threads (0 = all cores)")->capture_default_str();
  app.add_flag("--quiet", g.quiet, "Suppress progress messages");
  app.fallthrough();

  BuildOpts bo;
  auto* build = app.add_subcommand("build", "Build a mixed corpus from human documents and LLM rewrites");
  build->add_option("--corpus", bo.corpus, "Human corpus (JSONL)")->required();
  build->add_option("--generated", bo.generated, "Raw rewrites (JSONL: origin_id, text)")->required();
  build->add_option("--qrels", bo.qrels, "Human qrels (TSV)")->required();
  build->add_option("--model-tag", bo.model_tag, "Tag of the generating model")->required();
  build->add_option("--prompt-id", bo.prompt_id, "Identifier of the rewrite prompt");
  build->add_option("--cleanup-pattern", bo.patterns, "Prefix of leading chatter lines to drop (repeatable)");
  build->add_flag("--no-cleanup", bo.no_cleanup, "Keep responses verbatim apart from trimming");
  build->add_option("--out-corpus", bo.out_corpus, "Mixed corpus output")->required();
  build->add_option("--out-qrels", bo.out_qrels, "Mixed qrels output")->required();

  StatsOpts so;
  auto* stats = app.add_subcommand("stats", "Term overlap and embedding similarity of rewrite pairs");
  stats->add_option("--corpus", so.corpus, "Mixed corpus")->required();
  stats->add_option("--embeddings", so.embeddings, "Document embeddings (JSONL)");
  stats->add_option("--output", so.output, "Statistics JSON")->capture_default_str();
  stats->add_option("--pairs", so.pairs, "Per-pair CSV");

  IndexOpts io;
  auto* index = app.add_subcommand("index", "Build a lexical index");
  index->add_option("--corpus", io.corpus, "Corpus")->required();
  index->add_option("--output", io.output, "Index JSON")->capture_default_str();

  SearchOpts sro;
  auto* search = app.add_subcommand("search", "Rank a corpus for a query set");
  search->add_option("--corpus", sro.corpus, "Corpus");
  search->add_option("--index", sro.index, "Prebuilt lexical index");
  search->add_option("--queries", sro.queries, "Queries (JSONL)")->required();
  search->add_option("--model", sro.model, "Ranking model")
      ->check(CLI::IsMember({"tfidf", "bm25", "dense"}))
      ->capture_default_str();
  search->add_option("--k1", sro.k1, "BM25 k1")->capture_default_str();
  search->add_option("--b", sro.b, "BM25 b")->capture_default_str();
  search->add_option("--similarity", sro.similarity, "Dense similarity")
      ->check(CLI::IsMember({"dot", "cosine"}))
      ->capture_default_str();
  search->add_option("--doc-embeddings", sro.doc_embeddings, "Document embeddings");
  search->add_option("--query-embeddings", sro.query_embeddings, "Query embeddings");
  search->add_option("--top-k", sro.top_k, "Results per query")->capture_default_str();
  search->add_option("--tag", sro.tag, "Run tag (defaults to the model name)");
  search->add_option("--output", sro.output, "Run file")->capture_default_str();

  EvaluateOpts eo;
  auto* evaluate = app.add_subcommand("evaluate", "Per-source NDCG/MAP and relative delta of a run");
  evaluate->add_option("--run", eo.run, "Run file")->required();
  evaluate->add_option("--qrels", eo.qrels, "Mixed qrels")->required();
  evaluate->add_option("--corpus", eo.corpus, "Mixed corpus")->required();
  evaluate->add_option("--cutoffs", eo.cutoffs, "Comma-separated cutoffs")->capture_default_str();
  evaluate->add_option("--output", eo.output, "Report JSON")->capture_default_str();

  SpectrumOpts spo;
  auto* spectrum = app.add_subcommand("spectrum", "Singular-value spectra of paired human/generated embeddings");
  spectrum->add_option("--embeddings", spo.embeddings, "Document embeddings")->required();
  spectrum->add_option("--corpus", spo.corpus, "Mixed corpus")->required();
  spectrum->add_flag("--center", spo.center, "Subtract column means first");
  spectrum->add_option("--output", spo.output, "Spectrum JSON")->capture_default_str();

  PplOpts po;
  auto* ppl = app.add_subcommand("ppl", "Per-source perplexity from token log-probabilities");
  ppl->add_option("--logprobs", po.logprobs, "Token log-probs (JSONL)")->required();
  ppl->add_option("--corpus", po.corpus, "Mixed corpus")->required();
  ppl->add_option("--output", po.output, "PPL JSON")->capture_default_str();

  TrainOpts to;
  to.output = "head.json";
  auto add_train = [](CLI::App* sub, TrainOpts& t) {
    sub->add_option("--triplets", t.triplets, "Training triplets (TSV)");
    sub->add_option("--embeddings", t.embeddings, "Embeddings of all triplet ids");
    sub->add_flag("--synthetic", t.synthetic, "Use the built-in synthetic shortcut data (seeded by --seed)");
    sub->add_option("--rank", t.cfg.rank, "Projection rank (0 = embedding dim)")->capture_default_str();
    sub->add_option("--lr", t.cfg.lr, "Step size")->capture_default_str();
    sub->add_option("--epochs", t.cfg.epochs, "Epochs")->capture_default_str();
    sub->add_option("--batch-size", t.cfg.batch_size, "Triplets per batch")->capture_default_str();
  };
  auto* train = app.add_subcommand("train-debias", "Train a scoring head with the debiasing hinge");
  add_train(train, to);
  auto* alpha_opt = train->add_option("--alpha", to.alpha, "Hinge weight")->capture_default_str();
  train->add_option("--alpha-grid", to.alpha_grid, "Comma-separated hinge weights (one head each)")->excludes(alpha_opt);
  train->add_option("--out,--output", to.output, "Head JSON")->capture_default_str();

  TrainOpts swo;
  swo.output = "sweep.json";
  swo.alpha_grid = "0,1e-4,1e-3,1e-2,1e-1,1";
  auto* sweep = app.add_subcommand("sweep", "Train and evaluate over a grid of hinge weights");
  add_train(sweep, swo);
  sweep->add_option("--heldout", swo.heldout, "Held-out triplets (TSV)");
  sweep->add_option("--alpha-grid", swo.alpha_grid, "Comma-separated hinge weights")->capture_default_str();
  sweep->add_option("--output", swo.output, "Sweep JSON")->capture_default_str();
  sweep->add_option("--csv", swo.csv, "Sweep table as CSV");

  TheoremOpts tho;
  auto* thm = app.add_subcommand("verify-theorem", "Check the perplexity theorem by exhaustive enumeration");
  thm->add_option("--instances", tho.instances, "Random instances")->capture_default_str();
  thm->add_option("--alphabet", tho.alphabet, "Alphabet size V")->capture_default_str();
  thm->add_option("--length", tho.length, "Sequence length S")->capture_default_str();
  thm->add_option("--sampler", tho.sampler, "Instance sampler")
      ->check(CLI::IsMember({"structured", "dirichlet"}))
      ->capture_default_str();
  thm->add_option("--kl-mode", tho.kl_mode, "KL condition per prefix or averaged over prefixes")
      ->check(CLI::IsMember({"per-prefix", "averaged"}))
      ->capture_default_str();
  thm->add_option("--max-attempts", tho.max_attempts, "Rejection-sampling cap per instance")->capture_default_str();
  thm->add_option("--instance", tho.instance, "Verify this instance file instead of sampling");
  thm->add_option("--report,--output", tho.output, "Report JSON")->capture_default_str();
  thm->add_option("--save-instances", tho.save_instances, "Write the instances as JSONL");

  std::vector<std::string> argv_store{"srcbias"};
  argv_store.insert(argv_store.end(), args.begin(), args.end());
  std::vector<char*> argv;
  for (auto& a : argv_store) argv.push_back(a.data());

  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) {
      app.exit(e, out, err);
      return 0;
    }
    err << "error: " << e.what() << "\n\n" << app.help();
    return 1;
  }

  if (g.threads == 0) g.threads = std::max(1u, std::thread::hardware_concurrency());
  const Log log(err, g.quiet);
  try {
    if (build->parsed()) run_build(bo, g, log);
    if (stats->parsed()) run_stats(so, g, log);
    if (index->parsed()) run_index(io, g, log);
    if (search->parsed()) run_search(sro, g, log);
    if (evaluate->parsed()) run_evaluate(eo, g, out, log);
    if (spectrum->parsed()) run_spectrum(spo, g, log);
    if (ppl->parsed()) run_ppl(po, g, log);
    if (train->parsed()) run_train(to, g, log);
    if (sweep->parsed()) run_sweep(swo, g, out, log);
    if (thm->parsed() && !run_theorem(tho, g, log)) {
      err << "internal error: an instance satisfying the conditions failed the theorem check\n";
      return 2;
    }
  } catch (const InputError& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    err << "internal error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}

}  // namespace srcbias::cli
