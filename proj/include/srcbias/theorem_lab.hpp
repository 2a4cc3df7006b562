#pragma once

// Exhaustive numerical check of the perplexity theorem for small alphabets:
// if humans read human text better than BERT, rewriting adds no perplexity,
// BERT's unconditioned perplexity is within eps of its conditioned one, and
// the LLM is closer (in KL) to BERT than to humans by eps, then LLM rewrites
// have expected BERT perplexity no larger than the human original.
//
// Tables are indexed by prefix; every conditional table is implicitly
// conditioned on the fixed human document d^H.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "srcbias/common.hpp"

namespace srcbias::theorem {

inline constexpr double kProbTolerance = 1e-12;
inline constexpr double kConditionTolerance = 1e-12;
inline constexpr double kPassTolerance = 1e-10;
inline constexpr std::uint64_t kEnumerationBudget = 1'000'000;

/// Distribution over the alphabet for every prefix of length 0 .. S-1.
/// Prefixes are ordered by length, then lexicographically (first token most
/// significant).
struct Table {
  std::size_t v = 0;
  std::size_t s = 0;
  std::vector<std::vector<double>> rows;
};

inline std::size_t prefix_count(std::size_t v, std::size_t s) {
  std::size_t n = 0, p = 1;
  for (std::size_t i = 0; i < s; ++i) {
    n += p;
    p *= v;
  }
  return n;
}

/// Row index of seq[0..len).
inline std::size_t prefix_index(std::size_t v, std::span<const int> seq, std::size_t len) {
  std::size_t offset = 0, p = 1;
  for (std::size_t i = 0; i < len; ++i) {
    offset += p;
    p *= v;
  }
  std::size_t code = 0;
  for (std::size_t i = 0; i < len; ++i) code = code * v + static_cast<std::size_t>(seq[i]);
  return offset + code;
}

inline std::uint64_t sequence_count(std::size_t v, std::size_t s) {
  std::uint64_t n = 1;
  for (std::size_t i = 0; i < s; ++i) {
    if (n > kEnumerationBudget) return kEnumerationBudget + 1;
    n *= v;
  }
  return n;
}

inline void validate_table(const Table& t, const std::string& name) {
  if (t.v < 1 || t.s < 1) throw InputError(name + ": alphabet size and length must be >= 1");
  if (t.rows.size() != prefix_count(t.v, t.s)) throw InputError(name + ": missing table entries");
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    const auto& row = t.rows[r];
    if (row.size() != t.v) throw InputError(name + ": row " + std::to_string(r) + " has the wrong size");
    double sum = 0.0;
    for (double p : row) {
      if (!(p > 0.0) || !std::isfinite(p))
        throw InputError(name + ": row " + std::to_string(r) + " has a non-positive probability");
      sum += p;
    }
    if (std::abs(sum - 1.0) > kProbTolerance)
      throw InputError(name + ": row " + std::to_string(r) + " sums to " + format_double(sum));
  }
}

/// -(1/S) sum_s log P(seq_s | seq_<s), in nats.
inline double ppl_under(const Table& t, std::span<const int> seq) {
  if (seq.size() != t.s) throw InputError("sequence length does not match the table");
  double sum = 0.0;
  for (std::size_t i = 0; i < seq.size(); ++i) {
    if (seq[i] < 0 || static_cast<std::size_t>(seq[i]) >= t.v) throw InputError("token outside the alphabet");
    sum += std::log(t.rows.at(prefix_index(t.v, seq, i))[static_cast<std::size_t>(seq[i])]);
  }
  return -sum / static_cast<double>(seq.size());
}

inline double kl_divergence(std::span<const double> p, std::span<const double> q) {
  double d = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) d += p[i] * std::log(p[i] / q[i]);
  return d;
}

struct TheoremInstance {
  std::size_t v = 0;
  std::size_t s = 0;
  std::vector<int> d_human;
  Table human_uncond;  // P_Human(d_s | d_<s)
  Table human_cond;    // P_Human(d_s | d_<s, d^H)
  Table bert_uncond;   // P_BERT(d_s | d_<s)
  Table bert_cond;     // P_BERT(d_s | d_<s, d^H)
  Table llm_cond;      // P_LLM(d_s | d_<s, d^H)
  double epsilon = 0.0;

  void validate() const {
    if (v < 1 || s < 1) throw InputError("alphabet size and length must be >= 1");
    if (d_human.size() != s) throw InputError("human document has the wrong length");
    for (int t : d_human)
      if (t < 0 || static_cast<std::size_t>(t) >= v) throw InputError("human document token outside the alphabet");
    if (!(epsilon >= 0.0) || !std::isfinite(epsilon)) throw InputError("epsilon must be finite and >= 0");
    const std::pair<const Table*, const char*> all[] = {{&human_uncond, "human_uncond"},
                                                        {&human_cond, "human_cond"},
                                                        {&bert_uncond, "bert_uncond"},
                                                        {&bert_cond, "bert_cond"},
                                                        {&llm_cond, "llm_cond"}};
    for (const auto& [t, name] : all) {
      if (t->v != v || t->s != s) throw InputError(std::string(name) + ": shape does not match the instance");
      validate_table(*t, name);
    }
  }
};

// ---------------------------------------------------------------------------
// Enumeration

/// Per-sequence quantities summed over all V^S candidate rewrites g, weighted
/// by P_LLM(g | d^H) where noted.
struct Enumeration {
  double total_prob = 0.0;
  double e_gap = 0.0;             // E[PPL(g,B) - PPL(d^H,B)]
  double e_ppl_b = 0.0;           // E[PPL(g,B)]
  double e_ppl_b_cond = 0.0;      // E[PPL(g|d^H,B)]
  double e_ppl_llm = 0.0;         // E[PPL(g|d^H,G)]
  double e_ppl_h_cond = 0.0;      // E[PPL(g|d^H,H)]
  double max_bp_gap = 0.0;        // max_g PPL(g,B) - PPL(g|d^H,B)
  double max_ppl_h_cond = 0.0;    // max_g PPL(g|d^H,H)
};

namespace detail {

inline Enumeration& accumulate(Enumeration& a, const Enumeration& b) {
  a.total_prob += b.total_prob;
  a.e_gap += b.e_gap;
  a.e_ppl_b += b.e_ppl_b;
  a.e_ppl_b_cond += b.e_ppl_b_cond;
  a.e_ppl_llm += b.e_ppl_llm;
  a.e_ppl_h_cond += b.e_ppl_h_cond;
  a.max_bp_gap = std::max(a.max_bp_gap, b.max_bp_gap);
  a.max_ppl_h_cond = std::max(a.max_ppl_h_cond, b.max_ppl_h_cond);
  return a;
}

inline constexpr std::uint64_t kBlock = 4096;

}  // namespace detail

/// Full enumeration over Σ^S in fixed blocks; block partial sums are combined
/// by a pairwise tree so the result does not depend on the thread count.
inline Enumeration enumerate(const TheoremInstance& inst, unsigned threads = 1) {
  const std::uint64_t n = sequence_count(inst.v, inst.s);
  if (n > kEnumerationBudget)
    throw InputError("enumeration budget exceeded: V^S > " + std::to_string(kEnumerationBudget));
  const double ppl_dh_b = ppl_under(inst.bert_uncond, inst.d_human);
  const std::uint64_t blocks = (n + detail::kBlock - 1) / detail::kBlock;
  std::vector<Enumeration> partial(blocks);
  parallel_for(blocks, threads, [&](std::size_t b) {
    Enumeration e;
    e.max_bp_gap = -std::numeric_limits<double>::infinity();
    e.max_ppl_h_cond = -std::numeric_limits<double>::infinity();
    std::vector<int> g(inst.s);
    const std::uint64_t end = std::min<std::uint64_t>(n, (b + 1) * detail::kBlock);
    for (std::uint64_t code = b * detail::kBlock; code < end; ++code) {
      std::uint64_t c = code;
      for (std::size_t i = inst.s; i-- > 0;) {
        g[i] = static_cast<int>(c % inst.v);
        c /= inst.v;
      }
      double logp = 0.0;
      for (std::size_t i = 0; i < inst.s; ++i)
        logp += std::log(inst.llm_cond.rows[prefix_index(inst.v, g, i)][static_cast<std::size_t>(g[i])]);
      const double p = std::exp(logp);
      const double b_u = ppl_under(inst.bert_uncond, g);
      const double b_c = ppl_under(inst.bert_cond, g);
      const double h_c = ppl_under(inst.human_cond, g);
      const double l_c = -logp / static_cast<double>(inst.s);
      e.total_prob += p;
      e.e_gap += p * (b_u - ppl_dh_b);
      e.e_ppl_b += p * b_u;
      e.e_ppl_b_cond += p * b_c;
      e.e_ppl_llm += p * l_c;
      e.e_ppl_h_cond += p * h_c;
      e.max_bp_gap = std::max(e.max_bp_gap, b_u - b_c);
      e.max_ppl_h_cond = std::max(e.max_ppl_h_cond, h_c);
    }
    partial[b] = e;
  });
  for (std::size_t width = 1; width < partial.size(); width *= 2)
    for (std::size_t i = 0; i + width < partial.size(); i += 2 * width) detail::accumulate(partial[i], partial[i + width]);
  return partial[0];
}

/// sum_s E_{P_LLM(d_<s)} KL(P_LLM(.|d_<s) || Q(.|d_<s)), computed over prefixes.
/// Also returns per-position expectations.
inline std::vector<double> expected_kl_by_position(const TheoremInstance& inst, const Table& q) {
  std::vector<double> out(inst.s, 0.0);
  std::vector<double> weight{1.0};  // P_LLM of each prefix of the current length
  std::size_t row = 0;
  for (std::size_t len = 0; len < inst.s; ++len) {
    std::vector<double> next;
    next.reserve(weight.size() * inst.v);
    for (std::size_t k = 0; k < weight.size(); ++k, ++row) {
      const auto& p = inst.llm_cond.rows[row];
      out[len] += weight[k] * kl_divergence(p, q.rows[row]);
      for (std::size_t t = 0; t < inst.v; ++t) next.push_back(weight[k] * p[t]);
    }
    weight = std::move(next);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Conditions

enum class KlMode { PerPrefix, PrefixAveraged };

struct ConditionReport {
  // Each slack is >= 0 exactly when the condition holds.
  double semantic_superiority = 0.0;    // PPL(d^H,B) - PPL(d^H,H)
  double conditional_redundancy = 0.0;  // min_g PPL(d^H,H) - PPL(g|d^H,H)
  double bounded_perplexity = 0.0;      // eps - max_g [PPL(g,B) - PPL(g|d^H,B)]
  double kl_condition = 0.0;            // min [KL(L||H) - KL(L||B) - eps]
  double min_kl = 0.0;                  // smallest KL value met (Gibbs: >= 0)
  bool ss = false, cr = false, bp = false, kl = false;
  bool all() const { return ss && cr && bp && kl; }
};

inline ConditionReport check_conditions(const TheoremInstance& inst, KlMode mode = KlMode::PerPrefix,
                                        unsigned threads = 1) {
  inst.validate();
  const auto en = enumerate(inst, threads);
  ConditionReport r;
  const double ppl_dh_h = ppl_under(inst.human_uncond, inst.d_human);
  r.semantic_superiority = ppl_under(inst.bert_uncond, inst.d_human) - ppl_dh_h;
  r.conditional_redundancy = ppl_dh_h - en.max_ppl_h_cond;
  r.bounded_perplexity = inst.epsilon - en.max_bp_gap;

  r.min_kl = std::numeric_limits<double>::infinity();
  if (mode == KlMode::PerPrefix) {
    r.kl_condition = std::numeric_limits<double>::infinity();
    for (std::size_t row = 0; row < inst.llm_cond.rows.size(); ++row) {
      const double kb = kl_divergence(inst.llm_cond.rows[row], inst.bert_cond.rows[row]);
      const double kh = kl_divergence(inst.llm_cond.rows[row], inst.human_cond.rows[row]);
      r.min_kl = std::min({r.min_kl, kb, kh});
      r.kl_condition = std::min(r.kl_condition, kh - kb - inst.epsilon);
    }
  } else {
    const auto kb = expected_kl_by_position(inst, inst.bert_cond);
    const auto kh = expected_kl_by_position(inst, inst.human_cond);
    r.kl_condition = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < inst.s; ++i) {
      r.min_kl = std::min({r.min_kl, kb[i], kh[i]});
      r.kl_condition = std::min(r.kl_condition, kh[i] - kb[i] - inst.epsilon);
    }
  }
  r.ss = r.semantic_superiority >= -kConditionTolerance;
  r.cr = r.conditional_redundancy >= -kConditionTolerance;
  r.bp = r.bounded_perplexity >= -kConditionTolerance;
  r.kl = r.kl_condition >= -kConditionTolerance;
  return r;
}

struct TheoremResult {
  double expectation = 0.0;  // E[PPL(g,B) - PPL(d^H,B)]
  bool pass = false;
};

/// Evaluated for any valid instance; the conclusion is only guaranteed when the
/// conditions hold, so a failing result on other instances is not an error.
inline TheoremResult verify_theorem(const TheoremInstance& inst, unsigned threads = 1) {
  inst.validate();
  const auto en = enumerate(inst, threads);
  return {en.e_gap, en.e_gap <= kPassTolerance};
}

struct ProofStep {
  std::string label;
  double lhs = 0.0;
  double rhs = 0.0;
  bool equality = false;  // identity checked as |lhs - rhs| <= tol, otherwise lhs <= rhs + tol
  bool holds = false;
};

/// Every intermediate relation of the proof, evaluated in expectation over
/// P_LLM(g | d^H). The two KL identities compare sequence enumeration with a
/// separate walk over prefixes.
inline std::vector<ProofStep> verify_proof_chain(const TheoremInstance& inst, unsigned threads = 1) {
  inst.validate();
  const auto en = enumerate(inst, threads);
  const double S = static_cast<double>(inst.s);
  const double ppl_dh_b = ppl_under(inst.bert_uncond, inst.d_human);
  const double ppl_dh_h = ppl_under(inst.human_uncond, inst.d_human);
  double kl_h = 0.0, kl_b = 0.0;
  for (double x : expected_kl_by_position(inst, inst.human_cond)) kl_h += x;
  for (double x : expected_kl_by_position(inst, inst.bert_cond)) kl_b += x;

  std::vector<ProofStep> steps;
  auto add = [&](std::string label, double lhs, double rhs, bool eq) {
    const bool ok = eq ? std::abs(lhs - rhs) <= kPassTolerance : lhs <= rhs + kPassTolerance;
    steps.push_back({std::move(label), lhs, rhs, eq, ok});
  };
  add("semantic superiority substitution: E[PPL(g,B)] - PPL(dH,B) <= E[PPL(g,B)] - PPL(dH,H)", en.e_ppl_b - ppl_dh_b,
      en.e_ppl_b - ppl_dh_h, false);
  add("conditional redundancy bound: E[PPL(g|dH,G)] - PPL(dH,H) <= E[PPL(g|dH,G) - PPL(g|dH,H)]",
      en.e_ppl_llm - ppl_dh_h, en.e_ppl_llm - en.e_ppl_h_cond, false);
  add("KL identity: -S E[PPL(g|dH,G) - PPL(g|dH,H)] = sum_s E KL(LLM||Human)", -S * (en.e_ppl_llm - en.e_ppl_h_cond),
      kl_h, true);
  add("KL identity: S E[PPL(g|dH,B) - PPL(g|dH,G)] = sum_s E KL(LLM||BERT)", S * (en.e_ppl_b_cond - en.e_ppl_llm), kl_b,
      true);
  const double bp_term = en.e_ppl_b - en.e_ppl_b_cond;
  const double kl_term = (kl_b - kl_h) / S;
  add("combined bound: E[PPL(g,B) - PPL(dH,B)] <= E[PPL(g,B) - PPL(g|dH,B)] + (1/S) sum_s E[KL_B - KL_H]", en.e_gap,
      bp_term + kl_term, false);
  add("bounded perplexity in expectation: E[PPL(g,B) - PPL(g|dH,B)] <= eps", bp_term, inst.epsilon, false);
  add("KL term: (1/S) sum_s E[KL_B - KL_H] <= -eps", kl_term, -inst.epsilon, false);
  add("conclusion: E[PPL(g,B) - PPL(dH,B)] <= eps - eps = 0", en.e_gap, 0.0, false);
  return steps;
}

// ---------------------------------------------------------------------------
// Random instances

enum class Sampler { Structured, Dirichlet };

namespace detail {

inline std::vector<double> dirichlet(std::mt19937_64& rng, std::size_t v, double concentration) {
  std::gamma_distribution<double> g(concentration, 1.0);
  std::vector<double> x(v);
  for (;;) {
    double sum = 0.0;
    for (auto& xi : x) {
      xi = g(rng);
      sum += xi;
    }
    if (!(sum > 0.0)) continue;
    bool positive = true;
    for (auto& xi : x) {
      xi /= sum;
      positive = positive && xi > 0.0;
    }
    if (positive) return x;
  }
}

inline Table dirichlet_table(std::mt19937_64& rng, std::size_t v, std::size_t s, double concentration) {
  Table t{v, s, {}};
  const auto n = prefix_count(v, s);
  t.rows.reserve(n);
  for (std::size_t i = 0; i < n; ++i) t.rows.push_back(dirichlet(rng, v, concentration));
  return t;
}

/// (1 - w) * a + w * b, renormalized to absorb rounding.
inline Table mix(const Table& a, const Table& b, double w) {
  Table t = a;
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    double sum = 0.0;
    for (std::size_t k = 0; k < t.v; ++k) sum += t.rows[r][k] = (1.0 - w) * a.rows[r][k] + w * b.rows[r][k];
    for (auto& p : t.rows[r]) p /= sum;
  }
  return t;
}

inline Table uniform_table(std::size_t v, std::size_t s) {
  return Table{v, s, std::vector<std::vector<double>>(prefix_count(v, s), std::vector<double>(v, 1.0 / static_cast<double>(v)))};
}

/// Epsilon = the largest bounded-perplexity gap over all rewrites (at least 0).
inline void set_epsilon(TheoremInstance& inst) {
  inst.epsilon = 0.0;
  inst.epsilon = std::max(0.0, enumerate(inst).max_bp_gap);
}

inline TheoremInstance sample_plain(std::mt19937_64& rng, std::size_t v, std::size_t s) {
  TheoremInstance inst;
  inst.v = v;
  inst.s = s;
  inst.human_uncond = dirichlet_table(rng, v, s, 1.0);
  inst.human_cond = dirichlet_table(rng, v, s, 1.0);
  inst.bert_uncond = dirichlet_table(rng, v, s, 1.0);
  inst.bert_cond = dirichlet_table(rng, v, s, 1.0);
  inst.llm_cond = dirichlet_table(rng, v, s, 1.0);
  std::uniform_int_distribution<int> tok(0, static_cast<int>(v) - 1);
  for (std::size_t i = 0; i < s; ++i) inst.d_human.push_back(tok(rng));
  set_epsilon(inst);
  return inst;
}

/// Tables drawn from Dirichlet distributions but coupled the way the theorem's
/// premises describe: BERT close to the LLM, humans further away.
inline TheoremInstance sample_structured(std::mt19937_64& rng, std::size_t v, std::size_t s) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  TheoremInstance inst;
  inst.v = v;
  inst.s = s;
  const auto uniform = uniform_table(v, s);
  inst.llm_cond = dirichlet_table(rng, v, s, 0.3);
  inst.bert_cond = mix(inst.llm_cond, dirichlet_table(rng, v, s, 1.0), 0.2 * unit(rng));
  inst.bert_uncond = mix(inst.bert_cond, dirichlet_table(rng, v, s, 1.0), 0.1 * unit(rng));
  inst.human_cond = mix(uniform, dirichlet_table(rng, v, s, 1.0), 0.3 * unit(rng));
  inst.human_uncond = mix(inst.bert_uncond, uniform, 0.5 * unit(rng));
  // d^H follows BERT's least likely continuation, a text BERT finds hard.
  inst.d_human.clear();
  for (std::size_t i = 0; i < s; ++i) {
    const auto& row = inst.bert_uncond.rows[prefix_index(v, inst.d_human, i)];
    inst.d_human.push_back(static_cast<int>(std::min_element(row.begin(), row.end()) - row.begin()));
  }
  set_epsilon(inst);
  return inst;
}

}  // namespace detail

struct SampleStats {
  std::size_t attempts = 0;
};

/// Rejection sampling: draw tables, set eps to the largest bounded-perplexity gap,
/// accept when the other three conditions hold. At most max_attempts draws.
inline TheoremInstance sample_instance(std::mt19937_64& rng, std::size_t v, std::size_t s,
                                       Sampler sampler = Sampler::Structured, KlMode mode = KlMode::PerPrefix,
                                       std::size_t max_attempts = 100'000, SampleStats* stats = nullptr) {
  if (v < 1 || s < 1) throw InputError("alphabet size and length must be >= 1");
  if (sequence_count(v, s) > kEnumerationBudget)
    throw InputError("enumeration budget exceeded: V^S > " + std::to_string(kEnumerationBudget));
  for (std::size_t a = 1; a <= max_attempts; ++a) {
    auto inst = sampler == Sampler::Structured ? detail::sample_structured(rng, v, s) : detail::sample_plain(rng, v, s);
    if (check_conditions(inst, mode).all()) {
      if (stats) stats->attempts = a;
      return inst;
    }
  }
  throw InputError("no instance satisfied the conditions within " + std::to_string(max_attempts) + " attempts");
}

// ---------------------------------------------------------------------------
// JSON

inline nlohmann::ordered_json instance_json(const TheoremInstance& inst) {
  nlohmann::ordered_json j;
  j["schema"] = "srcbias.theorem_instance/1";
  j["alphabet"] = inst.v;
  j["length"] = inst.s;
  j["d_human"] = inst.d_human;
  j["epsilon"] = inst.epsilon;
  j["human_uncond"] = inst.human_uncond.rows;
  j["human_cond"] = inst.human_cond.rows;
  j["bert_uncond"] = inst.bert_uncond.rows;
  j["bert_cond"] = inst.bert_cond.rows;
  j["llm_cond"] = inst.llm_cond.rows;
  return j;
}

inline TheoremInstance instance_from_json(const nlohmann::json& j) {
  try {
    if (j.at("schema") != "srcbias.theorem_instance/1") throw InputError("not a theorem instance");
    TheoremInstance inst;
    inst.v = j.at("alphabet").get<std::size_t>();
    inst.s = j.at("length").get<std::size_t>();
    inst.d_human = j.at("d_human").get<std::vector<int>>();
    inst.epsilon = j.at("epsilon").get<double>();
    auto table = [&](const char* key) {
      return Table{inst.v, inst.s, j.at(key).get<std::vector<std::vector<double>>>()};
    };
    inst.human_uncond = table("human_uncond");
    inst.human_cond = table("human_cond");
    inst.bert_uncond = table("bert_uncond");
    inst.bert_cond = table("bert_cond");
    inst.llm_cond = table("llm_cond");
    inst.validate();
    return inst;
  } catch (const nlohmann::json::exception& e) {
    throw InputError(std::string("malformed theorem instance: ") + e.what());
  }
}

inline nlohmann::ordered_json conditions_json(const ConditionReport& r) {
  return {{"semantic_superiority", {{"holds", r.ss}, {"slack", r.semantic_superiority}}},
          {"conditional_redundancy", {{"holds", r.cr}, {"slack", r.conditional_redundancy}}},
          {"bounded_perplexity", {{"holds", r.bp}, {"slack", r.bounded_perplexity}}},
          {"kl_condition", {{"holds", r.kl}, {"slack", r.kl_condition}}},
          {"min_kl", r.min_kl}};
}

inline nlohmann::ordered_json proof_json(const std::vector<ProofStep>& steps) {
  auto arr = nlohmann::ordered_json::array();
  for (const auto& s : steps)
    arr.push_back({{"step", s.label}, {"lhs", s.lhs}, {"rhs", s.rhs}, {"equality", s.equality}, {"holds", s.holds}});
  return arr;
}

}  // namespace srcbias::theorem
