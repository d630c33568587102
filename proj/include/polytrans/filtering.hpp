#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "polytrans/corpus.hpp"
#include "polytrans/decoding.hpp"
#include "polytrans/error.hpp"
#include "polytrans/gbdt.hpp"
#include "polytrans/text.hpp"

namespace polytrans {

struct ThresholdConfig {
  double min_max_token_logprob = -3.5;

  void validate() const {
    if (std::isnan(min_max_token_logprob) || min_max_token_logprob == std::numeric_limits<double>::infinity())
      throw Error("filter: threshold must be finite or -inf");
  }
};

using FeatureVector = std::vector<double>;

struct FeatureConfig {
  int length = 11;
  double pad_value = 0.0;

  void validate() const {
    if (length < 1) throw Error("filter: feature length must be >= 1");
  }
};

namespace detail {

// Vacuous max over an empty score list is -inf, so unscored hypotheses are
// always rejected by any finite threshold.
inline double max_token_logprob(const std::vector<double>& scores) {
  double best = -std::numeric_limits<double>::infinity();
  for (double s : scores) best = std::max(best, s);
  return best;
}

}  // namespace detail

// Keeps hypotheses whose best per-token score reaches the cutoff. Order is
// preserved, so the result is a subsequence of the input.
inline std::vector<Hypothesis> threshold_filter(const std::vector<Hypothesis>& hyps,
                                                const ThresholdConfig& cfg) {
  cfg.validate();
  std::vector<Hypothesis> kept;
  for (const auto& h : hyps)
    if (detail::max_token_logprob(h.token_logprobs) >= cfg.min_max_token_logprob)
      kept.push_back(h);
  return kept;
}

// Same filter over a parsed prediction file; every candidate must carry scores.
inline PredictionSet threshold_filter(const PredictionSet& preds, const ThresholdConfig& cfg) {
  cfg.validate();
  PredictionSet out;
  for (const auto& rec : preds) {
    PredictionRecord kept;
    kept.prompt_id = rec.prompt_id;
    kept.source_text = rec.source_text;
    for (const auto& cand : rec.candidates) {
      if (!cand.has_scores)
        throw Error("filter: candidate for prompt '" + rec.prompt_id + "' has no scores");
      if (detail::max_token_logprob(cand.token_logprobs) >= cfg.min_max_token_logprob)
        kept.candidates.push_back(cand);
    }
    out.push_back(std::move(kept));
  }
  return out;
}

// First `length` token scores, right-padded with pad_value.
inline FeatureVector featurize(const std::vector<double>& token_logprobs,
                               const FeatureConfig& cfg = {}) {
  cfg.validate();
  FeatureVector v(static_cast<std::size_t>(cfg.length), cfg.pad_value);
  const std::size_t n = std::min(token_logprobs.size(), v.size());
  for (std::size_t i = 0; i < n; ++i) v[i] = token_logprobs[i];
  return v;
}

inline FeatureVector featurize(const Hypothesis& h, const FeatureConfig& cfg = {}) {
  return featurize(h.token_logprobs, cfg);
}

// Accept/reject training rows for the learned filter: one labeled feature
// vector per scored candidate, label 1 iff the normalized candidate text
// matches any normalized gold target.
inline std::vector<std::pair<FeatureVector, int>> label_predictions(
    const PredictionRecord& preds, const PromptRecord& gold, const FeatureConfig& fcfg = {},
    const NormalizeConfig& norm = {}) {
  if (gold.translations.empty()) throw Error("filter: gold prompt has no translations");
  std::vector<std::string> gold_texts;
  for (const auto& t : gold.translations) gold_texts.push_back(normalize_text(t.target_text, norm));

  std::vector<std::pair<FeatureVector, int>> rows;
  for (const auto& cand : preds.candidates) {
    if (!cand.has_scores)
      throw Error("filter: candidate for prompt '" + preds.prompt_id + "' has no scores");
    const std::string text = normalize_text(cand.text, norm);
    const bool hit = std::find(gold_texts.begin(), gold_texts.end(), text) != gold_texts.end();
    rows.emplace_back(featurize(cand.token_logprobs, fcfg), hit ? 1 : 0);
  }
  return rows;
}

// Keeps hypotheses the classifier accepts with probability >= the decision
// threshold. The model must have been trained on featurize(cfg) vectors.
inline std::vector<Hypothesis> model_filter(const std::vector<Hypothesis>& hyps,
                                            const GbdtModel& model,
                                            const FeatureConfig& cfg = {},
                                            double decision_threshold = 0.5) {
  cfg.validate();
  if (model.n_features != cfg.length)
    throw Error("filter: classifier expects " + std::to_string(model.n_features) +
                " features, featurizer makes " + std::to_string(cfg.length));
  std::vector<Hypothesis> kept;
  for (const auto& h : hyps)
    if (predict_proba(model, featurize(h, cfg)) >= decision_threshold) kept.push_back(h);
  return kept;
}

inline PredictionSet model_filter(const PredictionSet& preds, const GbdtModel& model,
                                  const FeatureConfig& cfg = {}, double decision_threshold = 0.5) {
  cfg.validate();
  if (model.n_features != cfg.length)
    throw Error("filter: classifier expects " + std::to_string(model.n_features) +
                " features, featurizer makes " + std::to_string(cfg.length));
  PredictionSet out;
  for (const auto& rec : preds) {
    PredictionRecord kept;
    kept.prompt_id = rec.prompt_id;
    kept.source_text = rec.source_text;
    for (const auto& cand : rec.candidates) {
      if (!cand.has_scores)
        throw Error("filter: candidate for prompt '" + rec.prompt_id + "' has no scores");
      if (predict_proba(model, featurize(cand.token_logprobs, cfg)) >= decision_threshold)
        kept.candidates.push_back(cand);
    }
    out.push_back(std::move(kept));
  }
  return out;
}

}  // namespace polytrans
