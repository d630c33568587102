#pragma once

#include <cstdint>
#include <cstdio>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "polytrans/corpus.hpp"
#include "polytrans/error.hpp"
#include "polytrans/text.hpp"

namespace polytrans {

// Per-prompt confusion counts and the scores derived from them. Weighted
// counterparts weight each reference hit/miss by its learner weight; false
// positives have no reference so they always count 1.
struct PromptScore {
  std::string prompt_id;
  std::size_t tp = 0;
  std::size_t fp = 0;
  std::size_t fn = 0;
  double wtp = 0.0;
  double wfn = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  double weighted_recall = 0.0;
  double f1 = 0.0;
  double weighted_f1 = 0.0;
};

struct CorpusScore {
  double precision = 0.0;         // mean per-prompt precision
  double recall = 0.0;            // mean per-prompt recall
  double weighted_recall = 0.0;   // mean per-prompt weighted recall
  double micro_f1 = 0.0;          // harmonic(pooled precision, pooled recall)
  double macro_f1 = 0.0;          // mean per-prompt f1
  double weighted_micro_f1 = 0.0; // harmonic(pooled precision, mean weighted recall)
  double weighted_macro_f1 = 0.0; // mean per-prompt weighted f1
  std::vector<PromptScore> prompts;
};

namespace detail {

inline double harmonic_f1(double p, double r) {
  double denom = p + r;
  if (denom <= 0.0) return 0.0;
  return 2.0 * p * r / denom;
}

}  // namespace detail

// Scores one prompt's predictions against its weighted references. Both sides
// are compared after whitespace/case normalization; duplicate predictions
// (after normalization) collapse to one.
inline PromptScore score_prompt(const PromptRecord& record,
                                const std::vector<std::string>& predictions,
                                const NormalizeConfig& norm = {}) {
  PromptScore s;
  s.prompt_id = record.prompt_id;

  std::unordered_map<std::string, double> ref_weight;
  for (const auto& t : record.translations) {
    std::string key = normalize_text(t.target_text, norm);
    if (!ref_weight.emplace(key, t.weight).second)
      throw Error("score_prompt: references collide after normalization in prompt '" +
                  record.prompt_id + "'");
  }

  std::vector<std::string> uniq;
  std::unordered_set<std::string> seen;
  for (const auto& p : predictions) {
    std::string key = normalize_text(p, norm);
    if (key.empty()) continue;
    if (seen.insert(key).second) uniq.push_back(std::move(key));
  }

  std::unordered_set<std::string> matched;
  for (const auto& p : uniq) {
    auto it = ref_weight.find(p);
    if (it != ref_weight.end()) {
      ++s.tp;
      s.wtp += it->second;
      matched.insert(p);
    } else {
      ++s.fp;
    }
  }
  for (const auto& [ref, w] : ref_weight) {
    if (!matched.count(ref)) {
      ++s.fn;
      s.wfn += w;
    }
  }

  const std::size_t n_pred = s.tp + s.fp;
  const std::size_t n_ref = s.tp + s.fn;
  s.precision = n_pred ? static_cast<double>(s.tp) / static_cast<double>(n_pred) : 0.0;
  s.recall = n_ref ? static_cast<double>(s.tp) / static_cast<double>(n_ref) : 0.0;
  const double wtotal = s.wtp + s.wfn;
  s.weighted_recall = wtotal > 0.0 ? s.wtp / wtotal : 0.0;
  s.f1 = detail::harmonic_f1(s.precision, s.recall);
  s.weighted_f1 = detail::harmonic_f1(s.precision, s.weighted_recall);
  return s;
}

// Scores a whole prediction set. Every reference prompt must be present in
// the predictions (an empty candidate list is a valid prediction); prediction
// prompts unknown to the reference corpus are an error.
inline CorpusScore score_corpus(const ParallelCorpus& references,
                                const PredictionSet& predictions,
                                const NormalizeConfig& norm = {}) {
  if (references.records.empty()) throw Error("score_corpus: empty reference corpus");

  std::unordered_map<std::string, const PredictionRecord*> by_id;
  for (const auto& rec : predictions) {
    if (!by_id.emplace(rec.prompt_id, &rec).second)
      throw Error("score_corpus: duplicate prediction prompt '" + rec.prompt_id + "'");
  }
  std::unordered_set<std::string> ref_ids;
  for (const auto& rec : references.records) ref_ids.insert(rec.prompt_id);
  for (const auto& rec : predictions)
    if (!ref_ids.count(rec.prompt_id))
      throw Error("score_corpus: prediction for unknown prompt '" + rec.prompt_id + "'");

  CorpusScore cs;
  double sum_p = 0.0, sum_r = 0.0, sum_wr = 0.0, sum_f1 = 0.0, sum_wf1 = 0.0;
  std::size_t pool_tp = 0, pool_fp = 0, pool_fn = 0;

  for (const auto& rec : references.records) {
    std::vector<std::string> cand_texts;
    auto it = by_id.find(rec.prompt_id);
    if (it == by_id.end())
      throw Error("score_corpus: missing prediction for prompt '" + rec.prompt_id + "'");
    for (const auto& c : it->second->candidates) cand_texts.push_back(c.text);

    PromptScore s = score_prompt(rec, cand_texts, norm);
    sum_p += s.precision;
    sum_r += s.recall;
    sum_wr += s.weighted_recall;
    sum_f1 += s.f1;
    sum_wf1 += s.weighted_f1;
    pool_tp += s.tp;
    pool_fp += s.fp;
    pool_fn += s.fn;
    cs.prompts.push_back(std::move(s));
  }

  const auto n = static_cast<double>(references.records.size());
  cs.precision = sum_p / n;
  cs.recall = sum_r / n;
  cs.weighted_recall = sum_wr / n;
  cs.macro_f1 = sum_f1 / n;
  cs.weighted_macro_f1 = sum_wf1 / n;

  const double pooled_p =
      (pool_tp + pool_fp) ? static_cast<double>(pool_tp) / static_cast<double>(pool_tp + pool_fp)
                          : 0.0;
  const double pooled_r =
      (pool_tp + pool_fn) ? static_cast<double>(pool_tp) / static_cast<double>(pool_tp + pool_fn)
                          : 0.0;
  cs.micro_f1 = detail::harmonic_f1(pooled_p, pooled_r);
  // Weighted micro pools precision over all predictions but keeps recall at
  // the per-prompt weighted mean, so per-prompt weight rescaling cancels.
  cs.weighted_micro_f1 = detail::harmonic_f1(pooled_p, cs.weighted_recall);
  return cs;
}

// Plain-text report: overall block plus one line per prompt, percentages
// with two decimals.
inline std::string format_score_report(const CorpusScore& cs, bool per_prompt = false) {
  char buf[256];
  std::string out;
  auto pct = [&](const char* name, double v) {
    std::snprintf(buf, sizeof(buf), "%-20s %6.2f%%\n", name, 100.0 * v);
    out += buf;
  };
  pct("precision", cs.precision);
  pct("recall", cs.recall);
  pct("weighted_recall", cs.weighted_recall);
  pct("micro_f1", cs.micro_f1);
  pct("macro_f1", cs.macro_f1);
  pct("weighted_micro_f1", cs.weighted_micro_f1);
  pct("weighted_macro_f1", cs.weighted_macro_f1);
  if (per_prompt) {
    out += "\n";
    for (const auto& s : cs.prompts) {
      std::snprintf(buf, sizeof(buf),
                    "%s\ttp=%zu fp=%zu fn=%zu\tP=%.2f%% R=%.2f%% WR=%.2f%% F1=%.2f%% WF1=%.2f%%\n",
                    s.prompt_id.c_str(), s.tp, s.fp, s.fn, 100.0 * s.precision, 100.0 * s.recall,
                    100.0 * s.weighted_recall, 100.0 * s.f1, 100.0 * s.weighted_f1);
      out += buf;
    }
  }
  return out;
}

}  // namespace polytrans
