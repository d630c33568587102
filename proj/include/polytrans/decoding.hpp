#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "polytrans/bpe.hpp"
#include "polytrans/corpus.hpp"
#include "polytrans/error.hpp"
#include "polytrans/model.hpp"
#include "polytrans/rng.hpp"
#include "polytrans/text.hpp"

namespace polytrans {

struct DecodeConfig {
  int beam_size = 10;
  int top_k = 10;            // hypotheses returned
  int max_len = 64;          // emitted-token budget, eos included
  double length_alpha = 0.0; // 0 ranks by total log-prob
  double top_p = 0.95;       // nucleus mass
  int n_samples = 10;        // nucleus draws per prompt
  std::uint64_t seed = 1;

  void validate() const {
    if (beam_size < 1 || top_k < 1 || max_len < 1) throw Error("decode: bad beam/top_k/max_len");
    if (top_k > beam_size) throw Error("decode: top_k must not exceed beam_size");
    if (length_alpha < 0.0) throw Error("decode: length_alpha must be >= 0");
    if (top_p < 0.0 || top_p > 1.0) throw Error("decode: top_p must be in [0,1]");
    if (n_samples < 1) throw Error("decode: n_samples must be >= 1");
  }
};

struct Hypothesis {
  std::vector<int> tokens;             // emitted tokens; ends with eos iff finished
  std::vector<double> token_logprobs;  // aligned with tokens
  double score = 0.0;                  // total log-probability
  bool finished = false;
};

namespace detail {

inline bool tokens_less(const std::vector<int>& a, const std::vector<int>& b) {
  return std::lexicographical_compare(a.begin(), a.end(), b.begin(), b.end());
}

// Higher score first; exact ties resolved by lexicographically smaller
// token sequence so results are stable across runs and platforms.
inline bool hyp_before(double score_a, const std::vector<int>& a, double score_b,
                       const std::vector<int>& b) {
  if (score_a != score_b) return score_a > score_b;
  return tokens_less(a, b);
}

}  // namespace detail

// Length-normalized ranking: score / len^alpha, ties by raw score then lex.
inline double length_normalized_score(const Hypothesis& h, double alpha) {
  if (h.tokens.empty()) return h.score;
  return h.score / std::pow(static_cast<double>(h.tokens.size()), alpha);
}

inline void rank_hypotheses(std::vector<Hypothesis>& hyps, double alpha) {
  std::stable_sort(hyps.begin(), hyps.end(), [alpha](const Hypothesis& a, const Hypothesis& b) {
    const double na = length_normalized_score(a, alpha);
    const double nb = length_normalized_score(b, alpha);
    if (na != nb) return na > nb;
    return detail::hyp_before(a.score, a.tokens, b.score, b.tokens);
  });
}

// Breadth-first beam search over the incremental decoder. Every
// eos-continuation of a live hypothesis is retired to the finished pool (not
// just the top one), and the best beam_size non-eos continuations stay live;
// with a beam wide enough to hold all prefixes this enumerates the full
// finished set exhaustively. pad and bos are never emitted.
template <typename S>
std::vector<Hypothesis> beam_search(const Transformer<S>& model, const std::vector<int>& src_ids,
                                    const DecodeConfig& cfg) {
  cfg.validate();
  if (cfg.max_len + 1 > model.config().max_len)
    throw Error("decode: max_len exceeds the model position table");

  struct Item {
    DecodeState<S> state;  // has consumed bos + tokens
    std::vector<int> tokens;
    std::vector<double> token_logprobs;
    double score = 0.0;
    Vec<S> next_logp;
  };

  const int V = model.config().vocab_size;
  std::vector<Item> live(1);
  live[0].state = model.begin_decode(src_ids);
  live[0].next_logp = live[0].state.step(Specials::bos);

  std::map<std::vector<int>, Hypothesis> finished;
  auto retire = [&](const Item& it, double eos_lp) {
    Hypothesis h;
    h.tokens = it.tokens;
    h.tokens.push_back(Specials::eos);
    h.token_logprobs = it.token_logprobs;
    h.token_logprobs.push_back(eos_lp);
    h.score = it.score + eos_lp;
    h.finished = true;
    auto [pos, inserted] = finished.emplace(h.tokens, h);
    if (!inserted && h.score > pos->second.score) pos->second = std::move(h);
  };

  struct Cand {
    std::size_t parent;
    int token;
    double logp;
    double score;
  };

  for (int step = 0; step < cfg.max_len && !live.empty(); ++step) {
    std::vector<Cand> cands;
    cands.reserve(live.size() * static_cast<std::size_t>(V));
    for (std::size_t i = 0; i < live.size(); ++i) {
      for (int v = 0; v < V; ++v) {
        if (v == Specials::pad || v == Specials::bos) continue;
        const double lp = static_cast<double>(live[i].next_logp(v));
        if (v == Specials::eos) {
          retire(live[i], lp);
        } else {
          cands.push_back({i, v, lp, live[i].score + lp});
        }
      }
    }

    std::sort(cands.begin(), cands.end(), [&](const Cand& a, const Cand& b) {
      if (a.score != b.score) return a.score > b.score;
      const auto& ta = live[a.parent].tokens;
      const auto& tb = live[b.parent].tokens;
      if (ta != tb) return detail::tokens_less(ta, tb);
      return a.token < b.token;
    });
    if (static_cast<int>(cands.size()) > cfg.beam_size)
      cands.resize(static_cast<std::size_t>(cfg.beam_size));

    std::vector<Item> next;
    next.reserve(cands.size());
    for (const Cand& c : cands) {
      Item it;
      it.state = live[c.parent].state;  // fork the cache
      it.tokens = live[c.parent].tokens;
      it.token_logprobs = live[c.parent].token_logprobs;
      it.next_logp = it.state.step(c.token);
      it.tokens.push_back(c.token);
      it.token_logprobs.push_back(c.logp);
      it.score = c.score;
      next.push_back(std::move(it));
    }
    live = std::move(next);
  }

  std::vector<Hypothesis> out;
  if (!finished.empty()) {
    out.reserve(finished.size());
    for (auto& [tokens, h] : finished) out.push_back(std::move(h));
  } else {
    // nothing reached eos inside the budget; surface the best partials, flagged
    for (Item& it : live) {
      Hypothesis h;
      h.tokens = std::move(it.tokens);
      h.token_logprobs = std::move(it.token_logprobs);
      h.score = it.score;
      h.finished = false;
      out.push_back(std::move(h));
    }
  }
  rank_hypotheses(out, cfg.length_alpha);
  if (static_cast<int>(out.size()) > cfg.top_k) out.resize(static_cast<std::size_t>(cfg.top_k));
  return out;
}

// Picks an index from the smallest probability prefix whose mass reaches p
// (sorted by probability, ties by lower index), renormalized. p <= smallest
// single mass degenerates to argmax; if the whole distribution sums below p
// the full support is used.
inline std::size_t nucleus_pick(const std::vector<double>& probs, double p, Rng& rng) {
  if (probs.empty()) throw Error("nucleus: empty distribution");
  std::vector<std::size_t> idx(probs.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  std::stable_sort(idx.begin(), idx.end(),
                   [&](std::size_t a, std::size_t b) { return probs[a] > probs[b]; });

  double mass = 0.0;
  std::size_t cut = idx.size();
  for (std::size_t k = 0; k < idx.size(); ++k) {
    mass += probs[idx[k]];
    if (mass >= p) {
      cut = k + 1;
      break;
    }
  }
  if (mass <= 0.0) throw Error("nucleus: distribution has no mass");

  const double u = rng.next_double() * mass;
  double acc = 0.0;
  for (std::size_t k = 0; k < cut; ++k) {
    acc += probs[idx[k]];
    if (u < acc) return idx[k];
  }
  return idx[cut - 1];  // u landed on the upper boundary
}

// Draws one sequence by nucleus sampling; stops at eos or the length budget.
template <typename S>
Hypothesis nucleus_sample_one(const Transformer<S>& model, const std::vector<int>& src_ids,
                              const DecodeConfig& cfg, Rng& rng) {
  cfg.validate();
  if (cfg.max_len + 1 > model.config().max_len)
    throw Error("decode: max_len exceeds the model position table");
  const int V = model.config().vocab_size;

  DecodeState<S> state = model.begin_decode(src_ids);
  Vec<S> logp = state.step(Specials::bos);

  Hypothesis h;
  for (int step = 0; step < cfg.max_len; ++step) {
    std::vector<double> probs(static_cast<std::size_t>(V), 0.0);
    for (int v = 0; v < V; ++v) {
      if (v == Specials::pad || v == Specials::bos) continue;  // structural tokens
      probs[static_cast<std::size_t>(v)] = std::exp(static_cast<double>(logp(v)));
    }
    const int pick = static_cast<int>(nucleus_pick(probs, cfg.top_p, rng));
    h.tokens.push_back(pick);
    h.token_logprobs.push_back(static_cast<double>(logp(pick)));
    h.score += static_cast<double>(logp(pick));
    if (pick == Specials::eos) {
      h.finished = true;
      break;
    }
    logp = state.step(pick);
  }
  return h;
}

// n_samples independent draws, deduplicated on token ids keeping the first
// occurrence; deterministic under seed.
template <typename S>
std::vector<Hypothesis> nucleus_sample(const Transformer<S>& model, const std::vector<int>& src_ids,
                                       const DecodeConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Rng rng(seed);
  std::vector<Hypothesis> out;
  for (int i = 0; i < cfg.n_samples; ++i) {
    Hypothesis h = nucleus_sample_one(model, src_ids, cfg, rng);
    const bool seen = std::any_of(out.begin(), out.end(),
                                  [&](const Hypothesis& o) { return o.tokens == h.tokens; });
    if (!seen) out.push_back(std::move(h));
  }
  return out;
}

// --- multi-output text helpers ----------------------------------------------

// Joins the top_n references by descending weight (ties keep input order) into
// one target string with the separator token surface between them,
// e.g. "a b <sep> c d".
inline std::string make_multi_output_target(const std::vector<WeightedTranslation>& translations,
                                            int top_n = 5) {
  if (translations.empty()) throw Error("multi-output: no translations to join");
  if (top_n < 1) throw Error("multi-output: top_n must be >= 1");
  std::vector<std::size_t> order(translations.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return translations[a].weight > translations[b].weight;
  });
  if (static_cast<int>(order.size()) > top_n) order.resize(static_cast<std::size_t>(top_n));

  std::vector<std::string> parts;
  for (std::size_t i : order) {
    std::string t = normalize_whitespace(translations[i].target_text);
    if (!t.empty()) parts.push_back(std::move(t));
  }
  return join(parts, std::string(" ") + Specials::surfaces()[Specials::sep] + " ");
}

// Splits decoded text on the separator surface; empty segments are dropped and
// repeated segments keep only their first occurrence.
inline std::vector<std::string> split_multi_output(const std::string& text) {
  const std::string& sep = Specials::surfaces()[Specials::sep];
  std::vector<std::string> out;
  std::vector<std::string> cur;
  auto flush = [&] {
    if (cur.empty()) return;
    std::string seg = join(cur, " ");
    cur.clear();
    if (std::find(out.begin(), out.end(), seg) == out.end()) out.push_back(std::move(seg));
  };
  for (const auto& w : split_words(text)) {
    if (w == sep) {
      flush();
    } else {
      cur.push_back(w);
    }
  }
  flush();
  return out;
}

}  // namespace polytrans
