#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "polytrans/corpus.hpp"
#include "polytrans/filtering.hpp"
#include "polytrans/rng.hpp"

using namespace polytrans;

namespace {

Hypothesis hyp(std::vector<double> scores) {
  Hypothesis h;
  h.token_logprobs = std::move(scores);
  h.score = 0.0;
  for (double s : h.token_logprobs) h.score += s;
  h.finished = true;
  for (std::size_t i = 0; i < h.token_logprobs.size(); ++i) h.tokens.push_back(5);
  return h;
}

}  // namespace

TEST_CASE("max-score thresholding keeps confident hypotheses in order") {
  const std::vector<Hypothesis> hyps = {
      hyp({-0.1, -0.2}),   // max -0.1: kept
      hyp({-4.0, -4.2}),   // max -4.0: removed
      hyp({-3.5, -9.0}),   // max exactly at the cutoff: kept
      hyp({-3.6}),         // below: removed
      hyp({}),             // vacuous max is -inf: removed
      hyp({-5.0, -0.01}),  // max -0.01: kept
  };
  ThresholdConfig cfg;  // -3.5
  const auto kept = threshold_filter(hyps, cfg);
  REQUIRE(kept.size() == 3);
  CHECK(kept[0].token_logprobs == std::vector<double>{-0.1, -0.2});
  CHECK(kept[1].token_logprobs == std::vector<double>{-3.5, -9.0});
  CHECK(kept[2].token_logprobs == std::vector<double>{-5.0, -0.01});

  CHECK(threshold_filter(std::vector<Hypothesis>{}, cfg).empty());

  SECTION("raising the cutoff never keeps more") {
    std::size_t prev = hyps.size() + 1;
    for (double t : {-1e18, -4.5, -3.5, -1.0, -0.05, 0.0}) {
      ThresholdConfig c;
      c.min_max_token_logprob = t;
      const std::size_t n = threshold_filter(hyps, c).size();
      CHECK(n <= prev);
      prev = n;
    }
  }

  SECTION("minus infinity is the identity filter") {
    ThresholdConfig c;
    c.min_max_token_logprob = -std::numeric_limits<double>::infinity();
    CHECK(threshold_filter(hyps, c).size() == hyps.size());
  }

  SECTION("the cutoff must not be NaN or +inf") {
    ThresholdConfig c;
    c.min_max_token_logprob = std::numeric_limits<double>::quiet_NaN();
    CHECK_THROWS_AS(threshold_filter(hyps, c), Error);
    c.min_max_token_logprob = std::numeric_limits<double>::infinity();
    CHECK_THROWS_AS(threshold_filter(hyps, c), Error);
  }
}

TEST_CASE("thresholding a prediction file drops candidate lines only") {
  PredictionSet set(2);
  set[0].prompt_id = "p1";
  set[0].source_text = "a b";
  PredictionCandidate good;
  good.text = "x";
  good.has_scores = true;
  good.total_logprob = -0.3;
  good.token_logprobs = {-0.1, -0.2};
  PredictionCandidate bad = good;
  bad.text = "y";
  bad.token_logprobs = {-4.0, -4.2};
  bad.total_logprob = -8.2;
  set[0].candidates = {good, bad};
  set[1].prompt_id = "p2";
  set[1].source_text = "c";
  set[1].candidates = {bad};

  const auto kept = threshold_filter(set, ThresholdConfig{});
  REQUIRE(kept.size() == 2);  // prompts survive even when emptied
  CHECK(kept[0].candidates.size() == 1);
  CHECK(kept[0].candidates[0].text == "x");
  CHECK(kept[1].candidates.empty());

  PredictionSet unscored(1);
  unscored[0].prompt_id = "p3";
  unscored[0].source_text = "s";
  PredictionCandidate plain;
  plain.text = "z";
  unscored[0].candidates = {plain};
  CHECK_THROWS_AS(threshold_filter(unscored, ThresholdConfig{}), Error);
}

TEST_CASE("featurize truncates or pads to the fixed length") {
  FeatureConfig cfg;  // length 11, pad 0.0
  const FeatureVector three = featurize({-0.5, -1.0, -1.5}, cfg);
  REQUIRE(three.size() == 11);
  CHECK(three[0] == -0.5);
  CHECK(three[1] == -1.0);
  CHECK(three[2] == -1.5);
  for (std::size_t i = 3; i < 11; ++i) CHECK(three[i] == 0.0);

  std::vector<double> fifteen;
  for (int i = 0; i < 15; ++i) fifteen.push_back(-0.1 * (i + 1));
  const FeatureVector trunc = featurize(fifteen, cfg);
  REQUIRE(trunc.size() == 11);
  for (std::size_t i = 0; i < 11; ++i) CHECK(trunc[i] == fifteen[i]);

  CHECK(featurize(fifteen, cfg) == trunc);  // same input, same vector

  FeatureConfig custom;
  custom.length = 4;
  custom.pad_value = -99.0;
  CHECK(featurize({-1.0}, custom) == FeatureVector{-1.0, -99.0, -99.0, -99.0});

  FeatureConfig bad;
  bad.length = 0;
  CHECK_THROWS_AS(featurize({-1.0}, bad), Error);

  CHECK(featurize(hyp({-2.0, -3.0}), custom)[0] == -2.0);
}

TEST_CASE("labeling marks exact normalized matches as accept") {
  PromptRecord gold;
  gold.prompt_id = "g1";
  gold.source_text = "the sun";
  gold.translations = {{"nap a", 0.7}, {"a nap", 0.3}};

  PredictionRecord preds;
  preds.prompt_id = "g1";
  preds.source_text = "the sun";
  auto cand = [](const std::string& text, std::vector<double> scores) {
    PredictionCandidate c;
    c.text = text;
    c.has_scores = true;
    c.token_logprobs = std::move(scores);
    for (double s : c.token_logprobs) c.total_logprob += s;
    return c;
  };
  preds.candidates = {
      cand("nap a", {-0.1, -0.2}),        // exact gold
      cand("  a   nap ", {-0.3}),         // gold after whitespace normalization
      cand("nap a most", {-0.4, -0.5}),   // extra token: reject
      cand("NAP A", {-0.6}),              // case differs: reject by default
  };

  const auto rows = label_predictions(preds, gold);
  REQUIRE(rows.size() == 4);
  CHECK(rows[0].second == 1);
  CHECK(rows[1].second == 1);
  CHECK(rows[2].second == 0);
  CHECK(rows[3].second == 0);
  CHECK(rows[0].first == featurize(preds.candidates[0].token_logprobs));

  NormalizeConfig lower;
  lower.lowercase = true;
  const auto folded = label_predictions(preds, gold, FeatureConfig{}, lower);
  CHECK(folded[3].second == 1);  // case-folding turns the last one into a hit

  PredictionRecord unscored = preds;
  unscored.candidates[0].has_scores = false;
  CHECK_THROWS_AS(label_predictions(unscored, gold), Error);
}

TEST_CASE("labels agree with a brute-force membership recount on fixture data") {
  const ParallelCorpus fx = synth_fixture(23, 12, 4);
  Rng rng(5);
  for (const auto& rec : fx.records) {
    PredictionRecord preds;
    preds.prompt_id = rec.prompt_id;
    preds.source_text = rec.source_text;
    for (const auto& t : rec.translations) {
      if (rng.next_double() < 0.6) {
        PredictionCandidate c;
        c.text = t.target_text;
        c.has_scores = true;
        c.token_logprobs = {-rng.next_double(), -rng.next_double()};
        preds.candidates.push_back(c);
      }
    }
    PredictionCandidate junk;
    junk.text = "zzz unseen words";
    junk.has_scores = true;
    junk.token_logprobs = {-3.0};
    preds.candidates.push_back(junk);

    const auto rows = label_predictions(preds, rec);
    REQUIRE(rows.size() == preds.candidates.size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
      int expect = 0;  // independent linear scan over normalized gold texts
      for (const auto& t : rec.translations)
        if (normalize_text(preds.candidates[i].text) == normalize_text(t.target_text)) expect = 1;
      CHECK(rows[i].second == expect);
    }
  }
}

TEST_CASE("the learned filter keeps what the classifier accepts") {
  SECTION("an always-accept model is the identity") {
    GbdtModel always;
    always.n_features = 11;
    always.base_score = 10.0;  // sigmoid ~ 1
    const std::vector<Hypothesis> hyps = {hyp({-0.1}), hyp({-8.0})};
    CHECK(model_filter(hyps, always).size() == 2);
  }

  SECTION("an always-reject model clears the list") {
    GbdtModel never;
    never.n_features = 11;
    never.base_score = -10.0;
    const std::vector<Hypothesis> hyps = {hyp({-0.1}), hyp({-8.0})};
    CHECK(model_filter(hyps, never).empty());
  }

  SECTION("feature length mismatches are rejected") {
    GbdtModel small;
    small.n_features = 5;
    CHECK_THROWS_AS(model_filter({hyp({-1.0})}, small), Error);
    FeatureConfig five;
    five.length = 5;
    CHECK(model_filter({hyp({-1.0})}, small, five).size() == 1);  // base 0 -> 0.5 >= 0.5
  }

  SECTION("a trained filter recovers a separable accept distribution") {
    // Accepts score around -0.2 per token; rejects have an early -5 token.
    Rng rng(71);
    std::vector<std::vector<double>> X;
    std::vector<int> y;
    auto accept_scores = [&] {
      std::vector<double> s;
      const int n = 2 + static_cast<int>(rng.next_below(4));
      for (int i = 0; i < n; ++i) s.push_back(-0.05 - 0.3 * rng.next_double());
      return s;
    };
    auto reject_scores = [&] {
      std::vector<double> s = accept_scores();
      s[rng.next_below(s.size())] = -5.0 - rng.next_double();
      return s;
    };
    for (int i = 0; i < 150; ++i) {
      X.push_back(featurize(accept_scores()));
      y.push_back(1);
      X.push_back(featurize(reject_scores()));
      y.push_back(0);
    }
    GbdtParams params;
    params.n_estimators = 30;
    params.max_depth = 3;
    const GbdtModel model = fit_gbdt(X, y, params, 17);

    std::vector<Hypothesis> fresh;
    int true_accepts = 0;
    for (int i = 0; i < 100; ++i) {
      if (i % 2 == 0) {
        fresh.push_back(hyp(accept_scores()));
        true_accepts++;
      } else {
        fresh.push_back(hyp(reject_scores()));
      }
    }
    const auto kept = model_filter(fresh, model);
    int kept_accepts = 0;
    for (const auto& h : kept)
      if (detail::max_token_logprob(h.token_logprobs) > -1.0) kept_accepts++;
    CHECK(kept_accepts >= (true_accepts * 95) / 100);
  }

  SECTION("prediction files filter per candidate") {
    GbdtModel never;
    never.n_features = 11;
    never.base_score = -10.0;
    PredictionSet set(1);
    set[0].prompt_id = "p";
    set[0].source_text = "s";
    PredictionCandidate c;
    c.text = "t";
    c.has_scores = true;
    c.token_logprobs = {-0.5};
    set[0].candidates = {c};
    const auto out = model_filter(set, never);
    REQUIRE(out.size() == 1);
    CHECK(out[0].candidates.empty());
  }
}
