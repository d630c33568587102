#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <optional>
#include <ostream>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include "polytrans/bpe.hpp"
#include "polytrans/config.hpp"
#include "polytrans/corpus.hpp"
#include "polytrans/decoding.hpp"
#include "polytrans/error.hpp"
#include "polytrans/filtering.hpp"
#include "polytrans/gbdt.hpp"
#include "polytrans/io.hpp"
#include "polytrans/metrics.hpp"
#include "polytrans/model.hpp"
#include "polytrans/training.hpp"

namespace polytrans {

// How reference pairs become training instances.
enum class PairMode {
  oversampled,   // each pair floor(weight * factor) times
  once,          // each pair exactly once
  concatenated,  // one example per prompt: top targets joined with <sep>
};

// Counts before materializing so a huge factor fails fast instead of
// exhausting memory.
inline std::vector<SampledPair> make_training_pairs(const ParallelCorpus& corpus, PairMode mode,
                                                    double factor, std::int64_t max_pairs) {
  if (max_pairs < 1) throw Error("pairs: max_pairs must be >= 1");
  switch (mode) {
    case PairMode::oversampled: {
      double expected = 0.0;
      for (const auto& rec : corpus.records)
        for (const auto& t : rec.translations) expected += std::floor(t.weight * factor);
      if (expected > static_cast<double>(max_pairs))
        throw Error("pairs: oversampling would emit " + std::to_string(expected) +
                    " pairs, above the max_pairs cap of " + std::to_string(max_pairs));
      return oversample(corpus, factor);
    }
    case PairMode::once: {
      std::vector<SampledPair> out;
      for (const auto& rec : corpus.records)
        for (const auto& t : rec.translations)
          out.push_back({rec.prompt_id, rec.source_text, t.target_text});
      if (static_cast<std::int64_t>(out.size()) > max_pairs)
        throw Error("pairs: corpus has more pairs than the max_pairs cap");
      return out;
    }
    case PairMode::concatenated: {
      std::vector<SampledPair> out;
      for (const auto& rec : corpus.records)
        out.push_back(
            {rec.prompt_id, rec.source_text, make_multi_output_target(rec.translations)});
      if (static_cast<std::int64_t>(out.size()) > max_pairs)
        throw Error("pairs: corpus has more prompts than the max_pairs cap");
      return out;
    }
  }
  throw Error("pairs: unknown mode");
}

// All surface text of a corpus (sources and targets), the input for learning
// a shared subword vocabulary.
inline std::vector<std::string> corpus_texts(const ParallelCorpus& corpus) {
  std::vector<std::string> texts;
  for (const auto& rec : corpus.records) {
    texts.push_back(rec.source_text);
    for (const auto& t : rec.translations) texts.push_back(t.target_text);
  }
  return texts;
}

namespace detail {

// Keeps encoder input (ids + eos) and decoder input (bos + ids) inside the
// model's position table.
inline std::vector<int> clip_ids(std::vector<int> ids, int model_max_len) {
  const std::size_t cap = static_cast<std::size_t>(std::max(1, model_max_len - 1));
  if (ids.size() > cap) ids.resize(cap);
  return ids;
}

}  // namespace detail

inline std::vector<TrainExample> encode_examples(const std::vector<SampledPair>& pairs,
                                                 const BpeVocab& bpe, int model_max_len) {
  std::vector<TrainExample> out;
  out.reserve(pairs.size());
  for (const auto& p : pairs)
    out.push_back(make_train_example(detail::clip_ids(bpe.encode(p.source_text), model_max_len),
                                     detail::clip_ids(bpe.encode(p.target_text), model_max_len)));
  return out;
}

// Decoder hypotheses for one source sentence. Mode `both` appends sampled
// hypotheses after the beam's, so deterministic outputs rank first.
template <typename S>
std::vector<Hypothesis> decode_source(const Transformer<S>& model, const BpeVocab& bpe,
                                      const std::string& source_text, const DecodeConfig& cfg,
                                      DecodeMode mode) {
  std::vector<int> src = detail::clip_ids(bpe.encode(source_text), model.config().max_len);
  src.push_back(Specials::eos);
  std::vector<Hypothesis> hyps;
  if (mode == DecodeMode::beam || mode == DecodeMode::both) {
    auto beam = beam_search(model, src, cfg);
    hyps.insert(hyps.end(), beam.begin(), beam.end());
  }
  if (mode == DecodeMode::nucleus || mode == DecodeMode::both) {
    auto sampled = nucleus_sample(model, src, cfg, cfg.seed);
    hyps.insert(hyps.end(), sampled.begin(), sampled.end());
  }
  return hyps;
}

// Renders hypotheses as prediction candidates, deduplicated by surface text
// (first occurrence wins, so the better-ranked hypothesis keeps its scores).
// With split_multi, a hypothesis may yield several candidates, one per
// separator-delimited segment; each inherits the whole hypothesis's scores.
inline std::vector<PredictionCandidate> hypotheses_to_candidates(
    const std::vector<Hypothesis>& hyps, const BpeVocab& bpe, bool split_multi) {
  std::vector<PredictionCandidate> out;
  std::unordered_set<std::string> seen;
  auto add = [&](const std::string& text, const Hypothesis& h) {
    if (text.empty() || !seen.insert(text).second) return;
    PredictionCandidate c;
    c.text = text;
    c.has_scores = true;
    c.total_logprob = h.score;
    c.token_logprobs = h.token_logprobs;
    out.push_back(std::move(c));
  };
  for (const auto& h : hyps) {
    const std::string text = bpe.decode(h.tokens, /*keep_sep=*/split_multi);
    if (split_multi) {
      for (const auto& part : split_multi_output(text)) add(part, h);
    } else {
      add(text, h);
    }
  }
  return out;
}

template <typename S>
PredictionSet decode_corpus(const Transformer<S>& model, const BpeVocab& bpe,
                            const ParallelCorpus& corpus, const DecodeConfig& cfg,
                            DecodeMode mode, bool split_multi) {
  PredictionSet preds;
  for (const auto& rec : corpus.records) {
    PredictionRecord out;
    out.prompt_id = rec.prompt_id;
    out.source_text = rec.source_text;
    out.candidates =
        hypotheses_to_candidates(decode_source(model, bpe, rec.source_text, cfg, mode), bpe,
                                 split_multi);
    preds.push_back(std::move(out));
  }
  return preds;
}

// The reference target used as back-translation input: the highest-weight
// translation (first one on ties).
inline const WeightedTranslation* reference_translation(const PromptRecord& rec) {
  if (rec.translations.empty()) return nullptr;
  const WeightedTranslation* best = &rec.translations.front();
  for (const auto& t : rec.translations)
    if (t.weight > best->weight) best = &t;
  return best;
}

// Source-language paraphrases for one prompt: the reverse model's decodes of
// the reference target, deduplicated, blank decodes dropped. Empty when the
// reference itself is missing or blank (used_reference reports which).
template <typename S>
std::vector<std::string> back_translate_prompt(const Transformer<S>& reverse_model,
                                               const BpeVocab& bpe, const PromptRecord& rec,
                                               int beam_size, int top_k,
                                               bool* used_reference = nullptr) {
  std::vector<std::string> paraphrases;
  const WeightedTranslation* ref = reference_translation(rec);
  const std::string ref_text = ref ? normalize_whitespace(ref->target_text) : std::string();
  if (used_reference) *used_reference = !ref_text.empty();
  if (ref_text.empty()) return paraphrases;

  DecodeConfig cfg;
  cfg.beam_size = beam_size;
  cfg.top_k = top_k;
  cfg.max_len = std::min(64, reverse_model.config().max_len - 1);
  for (const auto& h : decode_source(reverse_model, bpe, ref_text, cfg, DecodeMode::beam)) {
    std::string text = bpe.decode(h.tokens);
    if (text.empty()) continue;
    if (std::find(paraphrases.begin(), paraphrases.end(), text) == paraphrases.end())
      paraphrases.push_back(std::move(text));
  }
  return paraphrases;
}

// Labeled feature rows for the filter classifier, one per scored candidate
// across all prompts. Gold prompts are matched by id.
inline std::vector<std::pair<FeatureVector, int>> label_prediction_set(
    const PredictionSet& preds, const ParallelCorpus& gold, const FeatureConfig& fcfg,
    const NormalizeConfig& norm) {
  std::unordered_map<std::string, const PromptRecord*> by_id;
  for (const auto& rec : gold.records) by_id.emplace(rec.prompt_id, &rec);
  std::vector<std::pair<FeatureVector, int>> rows;
  for (const auto& rec : preds) {
    auto it = by_id.find(rec.prompt_id);
    if (it == by_id.end())
      throw Error("filter: prediction for unknown prompt '" + rec.prompt_id + "'");
    auto prompt_rows = label_predictions(rec, *it->second, fcfg, norm);
    rows.insert(rows.end(), std::make_move_iterator(prompt_rows.begin()),
                std::make_move_iterator(prompt_rows.end()));
  }
  return rows;
}

struct FilterFitReport {
  GbdtModel model;
  GbdtParams params;          // parameters actually used for the final fit
  std::size_t rows = 0;
  std::size_t positives = 0;
  bool searched = false;
  double cv_accuracy = 0.0;   // only meaningful when searched
};

// Fits the accept/reject classifier on labeled rows; with search_iters > 0 a
// randomized search picks the parameters by k-fold accuracy first.
inline FilterFitReport fit_filter_model(const std::vector<std::pair<FeatureVector, int>>& rows,
                                        const GbdtParams& params, std::uint64_t seed,
                                        int search_iters, int folds) {
  if (rows.empty()) throw Error("filter: no labeled rows to fit on");
  std::vector<FeatureVector> x;
  std::vector<int> y;
  for (const auto& [f, label] : rows) {
    x.push_back(f);
    y.push_back(label);
  }
  FilterFitReport report;
  report.rows = rows.size();
  for (int label : y) report.positives += static_cast<std::size_t>(label);
  report.params = params;
  if (search_iters > 0) {
    GbdtSearchSpace space;
    space.learning_rate = params.learning_rate;
    space.min_samples_leaf = params.min_samples_leaf;
    auto [best, cv] = randomized_search(x, y, space, search_iters, folds, seed);
    report.params = best;
    report.searched = true;
    report.cv_accuracy = cv.mean_accuracy;
  }
  report.model = fit_gbdt(x, y, report.params, seed);
  return report;
}

// --- threshold sweep ---------------------------------------------------------

struct SweepRow {
  double threshold = 0.0;
  double precision = 0.0;
  double weighted_recall = 0.0;
  double weighted_macro_f1 = 0.0;
};

inline std::vector<double> parse_threshold_grid(const std::string& grid) {
  std::vector<double> out;
  std::string cur;
  auto flush = [&] {
    const std::string v = detail::trim(cur);
    cur.clear();
    if (v.empty()) return;
    out.push_back(detail::to_double(v, "sweep.grid"));
  };
  for (char c : grid) {
    if (c == ',')
      flush();
    else
      cur.push_back(c);
  }
  flush();
  if (out.empty()) throw Error("sweep: empty threshold grid");
  return out;
}

// Re-filters and re-scores the same predictions at every grid point. The
// predictions must carry token scores (threshold_filter enforces it).
inline std::vector<SweepRow> sweep_thresholds(const ParallelCorpus& gold,
                                              const PredictionSet& preds,
                                              const std::vector<double>& grid,
                                              const NormalizeConfig& norm = {}) {
  std::vector<SweepRow> rows;
  for (double t : grid) {
    ThresholdConfig cfg;
    cfg.min_max_token_logprob = t;
    const CorpusScore cs = score_corpus(gold, threshold_filter(preds, cfg), norm);
    rows.push_back({t, cs.precision, cs.weighted_recall, cs.weighted_macro_f1});
  }
  return rows;
}

inline std::string format_sweep_csv(const std::vector<SweepRow>& rows) {
  std::string out = "threshold,precision,weighted_recall,weighted_macro_f1\n";
  for (const auto& r : rows) {
    out += detail::format_double(r.threshold) + "," + detail::format_double(r.precision) + "," +
           detail::format_double(r.weighted_recall) + "," +
           detail::format_double(r.weighted_macro_f1) + "\n";
  }
  return out;
}

// --- end-to-end run ----------------------------------------------------------

struct PipelineResult {
  CorpusScore score;
  std::string predictions_path;
  std::string report_path;
  std::vector<std::string> stage_trace;
  TrainResult train_result;  // default-initialized when training is skipped
  std::size_t n_train_pairs = 0;
  std::size_t n_eval_prompts = 0;
  std::vector<std::string> warnings;
};

namespace detail {

// Runs one stage, records its trace line, and tags any failure with the
// stage name so diagnostics point at the failing step.
template <typename F>
void run_stage(std::vector<std::string>& trace, const std::string& line, std::ostream* log,
               F&& body) {
  trace.push_back(line);
  if (log) (*log) << "[stage] " << line << '\n';
  try {
    body();
  } catch (const Error& e) {
    const std::string name = line.substr(0, line.find(' '));
    throw Error("stage " + name + ": " + e.what());
  }
}

}  // namespace detail

// The full run: prepare data, train, decode, filter, score. Every variant
// goes through this one function; variants only change the configuration
// (and thereby which stages appear in the trace).
inline PipelineResult run_pipeline(PipelineConfig cfg, std::ostream* log = nullptr) {
  apply_variant_presets(cfg);
  if (cfg.corpus.empty()) throw Error("pipeline: corpus path is required");
  ensure_dir(cfg.workdir);
  write_file(path_join(cfg.workdir, "config_resolved.txt"), serialize_config(cfg));

  PipelineResult result;
  auto& trace = result.stage_trace;
  auto warn = [&](const std::string& msg) {
    result.warnings.push_back(msg);
    if (log) (*log) << "[warn] " << msg << '\n';
  };

  // -- data ------------------------------------------------------------------
  ParallelCorpus corpus;
  detail::run_stage(trace, "load", log, [&] { corpus = parse_corpus(read_file(cfg.corpus)); });

  ParallelCorpus train_c, val_c;
  detail::run_stage(trace,
                    "split fraction=" + detail::format_double(cfg.fraction) +
                        " seed=" + std::to_string(cfg.split_seed),
                    log, [&] {
                      auto [tr, va] = split_by_prompt(corpus, cfg.fraction, cfg.split_seed);
                      train_c = std::move(tr);
                      val_c = std::move(va);
                      write_file(path_join(cfg.workdir, "train_corpus.txt"),
                                 serialize_corpus(train_c));
                      write_file(path_join(cfg.workdir, "val_corpus.txt"),
                                 serialize_corpus(val_c));
                    });

  const PairMode pair_mode = cfg.variant == Variant::no_oversample  ? PairMode::once
                             : cfg.variant == Variant::multi_output ? PairMode::concatenated
                                                                    : PairMode::oversampled;
  const char* pair_mode_name = pair_mode == PairMode::once          ? "once"
                               : pair_mode == PairMode::concatenated ? "concatenated"
                                                                     : "oversampled";
  std::vector<SampledPair> pairs;
  detail::run_stage(trace,
                    std::string("pairs mode=") + pair_mode_name +
                        " factor=" + detail::format_double(cfg.factor),
                    log, [&] {
                      pairs = make_training_pairs(train_c, pair_mode, cfg.factor, cfg.max_pairs);
                      write_file(path_join(cfg.workdir, "pairs.txt"), serialize_pairs(pairs));
                    });
  result.n_train_pairs = pairs.size();

  BpeVocab bpe;
  detail::run_stage(trace, "bpe vocab_size=" + std::to_string(cfg.vocab_size), log, [&] {
    bpe = BpeVocab::train(corpus_texts(train_c), cfg.vocab_size);
    write_file(path_join(cfg.workdir, "bpe.vocab"), bpe.save());
  });

  // -- model -----------------------------------------------------------------
  ModelConfig mc = cfg.model;
  mc.vocab_size = bpe.vocab_size();
  const bool from_checkpoint = cfg.variant == Variant::no_finetune && !cfg.checkpoint.empty();
  std::optional<Transformer<double>> model_slot;
  detail::run_stage(trace,
                    std::string("init mode=") + (from_checkpoint ? "checkpoint" : "fresh") +
                        " seed=" + std::to_string(cfg.init_seed),
                    log, [&] {
                      if (from_checkpoint) {
                        auto ck = load_checkpoint<double>(cfg.checkpoint);
                        if (ck.config.vocab_size != mc.vocab_size)
                          throw Error("checkpoint vocabulary (" +
                                      std::to_string(ck.config.vocab_size) +
                                      ") does not match the trained subword vocabulary (" +
                                      std::to_string(mc.vocab_size) + ")");
                        model_slot.emplace(model_from_checkpoint(ck));
                      } else {
                        model_slot.emplace(mc);
                        model_slot->init_params(cfg.init_seed);
                      }
                    });
  Transformer<double>& model = *model_slot;

  if (cfg.variant != Variant::no_finetune) {
    detail::run_stage(trace,
                      "train epochs=" + std::to_string(cfg.train.epochs) +
                          " batch_size=" + std::to_string(cfg.train.batch_size) +
                          " seed=" + std::to_string(cfg.train.seed) +
                          " patience=" + std::to_string(cfg.train.patience) +
                          " early_stop=" + (cfg.early_stop ? "true" : "false"),
                      log, [&] {
                        auto train_ex = encode_examples(pairs, bpe, mc.max_len);
                        std::vector<TrainExample> val_ex;
                        if (cfg.early_stop) {
                          auto val_pairs = make_training_pairs(
                              val_c,
                              pair_mode == PairMode::concatenated ? PairMode::concatenated
                                                                  : PairMode::once,
                              cfg.factor, cfg.max_pairs);
                          val_ex = encode_examples(val_pairs, bpe, mc.max_len);
                        }
                        std::ofstream train_log(path_join(cfg.workdir, "train.log"));
                        result.train_result =
                            train_loop(model, train_ex, val_ex, cfg.train, &train_log);
                      });
  }
  detail::run_stage(trace, "checkpoint", log, [&] {
    save_checkpoint(path_join(cfg.workdir, "model.ckpt"), model,
                    result.train_result.steps);
  });

  // -- evaluation set ----------------------------------------------------------
  const ParallelCorpus& eval_c = cfg.eval_on == EvalOn::val     ? val_c
                                 : cfg.eval_on == EvalOn::train ? train_c
                                                                : corpus;
  result.n_eval_prompts = eval_c.records.size();

  // -- decode ------------------------------------------------------------------
  const std::string decode_line =
      std::string("decode mode=") + detail::enum_name(cfg.mode, detail::decode_mode_table()) +
      " beam_size=" + std::to_string(cfg.decode.beam_size) +
      " top_k=" + std::to_string(cfg.decode.top_k) + " seed=" + std::to_string(cfg.decode.seed) +
      " split_multi=" + (cfg.split_multi ? "true" : "false");

  PredictionSet raw;
  if (cfg.variant == Variant::back_translate) {
    std::optional<Transformer<double>> reverse_slot;
    detail::run_stage(trace,
                      "train_reverse epochs=" + std::to_string(cfg.train.epochs) +
                          " batch_size=" + std::to_string(cfg.train.batch_size),
                      log, [&] {
                        auto rev_pairs = make_training_pairs(reverse_pairs(train_c),
                                                             PairMode::oversampled, cfg.factor,
                                                             cfg.max_pairs);
                        auto rev_ex = encode_examples(rev_pairs, bpe, mc.max_len);
                        reverse_slot.emplace(mc);
                        reverse_slot->init_params(mix_seed(cfg.init_seed, 0xB77));
                        TrainConfig rev_cfg = cfg.train;
                        rev_cfg.seed = mix_seed(cfg.train.seed, 0xB77);
                        std::ofstream rev_log(path_join(cfg.workdir, "train_reverse.log"));
                        train_loop(*reverse_slot, rev_ex, {}, rev_cfg, &rev_log);
                        save_checkpoint(path_join(cfg.workdir, "reverse.ckpt"), *reverse_slot, 0);
                      });
    Transformer<double>& reverse_model = *reverse_slot;

    PredictionSet paraphrases;
    detail::run_stage(trace,
                      "paraphrase beam_size=" + std::to_string(cfg.bt_beam) +
                          " top_k=" + std::to_string(cfg.bt_top),
                      log, [&] {
                        for (const auto& rec : eval_c.records) {
                          bool used_ref = false;
                          PredictionRecord pr;
                          pr.prompt_id = rec.prompt_id;
                          pr.source_text = rec.source_text;
                          const std::string original = normalize_whitespace(rec.source_text);
                          PredictionCandidate first;
                          first.text = original;
                          pr.candidates.push_back(std::move(first));
                          for (auto& p :
                               back_translate_prompt(reverse_model, bpe, rec, cfg.bt_beam,
                                                     cfg.bt_top, &used_ref)) {
                            if (p == original) continue;
                            PredictionCandidate c;
                            c.text = std::move(p);
                            pr.candidates.push_back(std::move(c));
                          }
                          if (!used_ref)
                            warn("paraphrase: prompt '" + rec.prompt_id +
                                 "' has no usable reference; kept the original source only");
                          paraphrases.push_back(std::move(pr));
                        }
                        write_file(path_join(cfg.workdir, "paraphrases.txt"),
                                   serialize_predictions(paraphrases, /*emit_scores=*/false));
                      });

    detail::run_stage(trace, decode_line, log, [&] {
      for (const auto& pr : paraphrases) {
        PredictionRecord out;
        out.prompt_id = pr.prompt_id;
        out.source_text = pr.source_text;
        std::vector<Hypothesis> pooled;
        for (const auto& cand : pr.candidates) {
          auto hyps = decode_source(model, bpe, cand.text, cfg.decode, cfg.mode);
          pooled.insert(pooled.end(), std::make_move_iterator(hyps.begin()),
                        std::make_move_iterator(hyps.end()));
        }
        out.candidates = hypotheses_to_candidates(pooled, bpe, cfg.split_multi);
        raw.push_back(std::move(out));
      }
    });
  } else {
    detail::run_stage(trace, decode_line, log, [&] {
      raw = decode_corpus(model, bpe, eval_c, cfg.decode, cfg.mode, cfg.split_multi);
    });
  }
  write_file(path_join(cfg.workdir, "predictions_raw.txt"),
             serialize_predictions(raw, /*emit_scores=*/true));

  // -- filter ------------------------------------------------------------------
  PredictionSet final_preds;
  if (cfg.variant == Variant::no_postprocess) {
    final_preds = raw;
  } else if (cfg.variant == Variant::model_filter) {
    GbdtModel filter_model;
    detail::run_stage(trace,
                      "fit_filter search_iters=" + std::to_string(cfg.search_iters) +
                          " folds=" + std::to_string(cfg.folds) +
                          " seed=" + std::to_string(cfg.gbdt_seed),
                      log, [&] {
                        auto val_preds = decode_corpus(model, bpe, val_c, cfg.decode, cfg.mode,
                                                       cfg.split_multi);
                        auto rows =
                            label_prediction_set(val_preds, val_c, cfg.features, cfg.normalize);
                        auto report = fit_filter_model(rows, cfg.gbdt, cfg.gbdt_seed,
                                                       cfg.search_iters, cfg.folds);
                        filter_model = std::move(report.model);
                        write_file(path_join(cfg.workdir, "gbdt.txt"),
                                   save_gbdt(filter_model));
                      });
    detail::run_stage(trace, "filter mode=model", log,
                      [&] { final_preds = model_filter(raw, filter_model, cfg.features); });
  } else {
    detail::run_stage(trace,
                      "filter mode=threshold threshold=" +
                          detail::format_double(cfg.filter.min_max_token_logprob),
                      log, [&] { final_preds = threshold_filter(raw, cfg.filter); });
  }
  result.predictions_path = path_join(cfg.workdir, "predictions.txt");
  write_file(result.predictions_path, serialize_predictions(final_preds, cfg.emit_scores));

  // -- score -------------------------------------------------------------------
  detail::run_stage(trace,
                    std::string("score lowercase=") +
                        (cfg.normalize.lowercase ? "true" : "false"),
                    log, [&] {
                      result.score = score_corpus(eval_c, final_preds, cfg.normalize);
                      result.report_path = path_join(cfg.workdir, "report.txt");
                      write_file(result.report_path,
                                 format_score_report(result.score, cfg.per_prompt));
                    });

  std::string trace_text;
  for (const auto& line : trace) trace_text += line + "\n";
  write_file(path_join(cfg.workdir, "stages.txt"), trace_text);
  return result;
}

}  // namespace polytrans
