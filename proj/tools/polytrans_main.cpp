// polytrans command-line driver.
//
// Every configuration key accepted in a config file is also available as a
// long option (`--train.lr 0.003`), applied on top of `--config <file>`,
// which itself is applied on top of the built-in defaults.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "polytrans/pipeline.hpp"

namespace pt = polytrans;

namespace {

struct RawOptions {
  std::string config_path;
  std::vector<std::pair<std::string, std::string>> overrides;
};

void add_config_options(CLI::App* cmd, RawOptions& raw) {
  cmd->add_option("--config", raw.config_path,
                  "configuration file with `key = value` lines")
      ->option_text("FILE");
  for (const std::string& key : pt::config_keys()) {
    cmd->add_option_function<std::string>(
           "--" + key,
           [&raw, key](const std::string& value) { raw.overrides.emplace_back(key, value); },
           "override config key " + key)
        ->multi_option_policy(CLI::MultiOptionPolicy::TakeLast)
        ->option_text("VALUE")
        ->group("Config overrides");
  }
}

// defaults -> config file -> command-line overrides, in that order.
pt::PipelineConfig resolve_config(const RawOptions& raw) {
  pt::PipelineConfig cfg;
  if (!raw.config_path.empty()) pt::apply_config_text(cfg, pt::read_file(raw.config_path));
  for (const auto& [key, value] : raw.overrides) cfg.set(key, value);
  return cfg;
}

const std::string& require(const std::string& value, const char* flag) {
  if (value.empty()) throw pt::Error(std::string("missing required --") + flag);
  return value;
}

// Explicit path wins (its parent directory is created); otherwise the file
// lands in the working directory under a conventional name.
std::string resolve_path(const pt::PipelineConfig& cfg, const std::string& explicit_path,
                         const char* default_name) {
  if (explicit_path.empty()) {
    pt::ensure_dir(cfg.workdir);
    return pt::path_join(cfg.workdir, default_name);
  }
  std::filesystem::path p(explicit_path);
  if (p.has_parent_path()) pt::ensure_dir(p.parent_path().string());
  return explicit_path;
}

std::string resolve_out(const pt::PipelineConfig& cfg, const char* default_name) {
  return resolve_path(cfg, cfg.out, default_name);
}

std::string join_ids(const std::vector<std::string>& ids) {
  std::string s;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (i) s += ", ";
    s += "'" + ids[i] + "'";
  }
  return s;
}

std::size_t candidate_count(const pt::PredictionSet& preds) {
  std::size_t n = 0;
  for (const auto& rec : preds) n += rec.candidates.size();
  return n;
}

// ---------------------------------------------------------------------------
// subcommands
// ---------------------------------------------------------------------------

void cmd_fixture(pt::PipelineConfig& cfg) {
  pt::ParallelCorpus corpus =
      pt::synth_fixture(cfg.fixture_seed, cfg.fixture_prompts, cfg.fixture_max_refs);
  const std::string out = resolve_out(cfg, "corpus.txt");
  pt::write_file(out, pt::serialize_corpus(corpus));
  std::cout << "fixture: " << corpus.records.size() << " prompts, " << corpus.pair_count()
            << " weighted references -> " << out << "\n";
}

void cmd_prepare(pt::PipelineConfig& cfg) {
  const auto corpus = pt::parse_corpus(pt::read_file(require(cfg.corpus, "corpus")));
  auto [train_c, val_c] = pt::split_by_prompt(corpus, cfg.fraction, cfg.split_seed);
  const auto pairs =
      pt::make_training_pairs(train_c, pt::PairMode::oversampled, cfg.factor, cfg.max_pairs);
  pt::ensure_dir(cfg.workdir);
  const std::string pairs_path = pt::path_join(cfg.workdir, "pairs.txt");
  pt::write_file(pairs_path, pt::serialize_pairs(pairs));
  pt::write_file(pt::path_join(cfg.workdir, "train_corpus.txt"), pt::serialize_corpus(train_c));
  const std::string val_path = pt::path_join(cfg.workdir, "val_corpus.txt");
  pt::write_file(val_path, pt::serialize_corpus(val_c));
  std::cout << "prepare: " << corpus.records.size() << " prompts -> "
            << train_c.records.size() << " train / " << val_c.records.size() << " validation\n"
            << "prepare: " << pairs.size() << " sampled pairs (factor " << cfg.factor << ") -> "
            << pairs_path << "\n"
            << "prepare: validation corpus -> " << val_path << "\n";
}

void cmd_train_bpe(pt::PipelineConfig& cfg) {
  const auto corpus = pt::parse_corpus(pt::read_file(require(cfg.corpus, "corpus")));
  const auto bpe = pt::BpeVocab::train(pt::corpus_texts(corpus), cfg.vocab_size);
  const std::string out = resolve_out(cfg, "bpe.vocab");
  pt::write_file(out, bpe.save());
  std::cout << "train-bpe: vocabulary of " << bpe.vocab_size() << " ids -> " << out << "\n";
}

void cmd_train(pt::PipelineConfig& cfg) {
  const std::string& pairs_path = require(cfg.pairs, "pairs");
  const std::string& bpe_path = require(cfg.bpe_path, "bpe");
  const auto bpe = pt::BpeVocab::load(pt::read_file(bpe_path));
  const auto pairs = pt::parse_pairs(pt::read_file(pairs_path));

  pt::ModelConfig mc = cfg.model;
  mc.vocab_size = bpe.vocab_size();
  mc.validate();
  pt::Transformer<double> model(mc);
  model.init_params(cfg.init_seed);

  const auto train_ex = pt::encode_examples(pairs, bpe, mc.max_len);
  std::vector<pt::TrainExample> val_ex;
  if (cfg.early_stop && !cfg.val.empty()) {
    const auto val_c = pt::parse_corpus(pt::read_file(cfg.val));
    val_ex = pt::encode_examples(
        pt::make_training_pairs(val_c, pt::PairMode::once, cfg.factor, cfg.max_pairs), bpe,
        mc.max_len);
  }

  pt::ensure_dir(cfg.workdir);
  std::ofstream log(pt::path_join(cfg.workdir, "train.log"));
  const pt::TrainResult result = pt::train_loop(model, train_ex, val_ex, cfg.train, &log);

  const std::string ck = resolve_path(cfg, cfg.checkpoint, "model.ckpt");
  pt::save_checkpoint(ck, model, result.steps);
  std::cout << "train: " << train_ex.size() << " examples, " << result.steps
            << " steps, final training loss " << result.final_train_loss << "\n";
  if (!val_ex.empty())
    std::cout << "train: best validation loss " << result.best_val_loss << " (epoch "
              << result.best_epoch << (result.early_stopped ? ", early stop)" : ")") << "\n";
  std::cout << "train: checkpoint -> " << ck << "\n";
}

template <typename S = double>
pt::Transformer<S> load_model_for(const std::string& path, const pt::BpeVocab& bpe,
                                  const char* tag) {
  const auto ck = pt::load_checkpoint<S>(path);
  if (ck.config.vocab_size != bpe.vocab_size())
    throw pt::Error(std::string(tag) + ": checkpoint vocabulary (" +
                    std::to_string(ck.config.vocab_size) +
                    ") does not match the subword vocabulary (" +
                    std::to_string(bpe.vocab_size()) + ")");
  return pt::model_from_checkpoint(ck);
}

void cmd_decode(pt::PipelineConfig& cfg) {
  const auto bpe = pt::BpeVocab::load(pt::read_file(require(cfg.bpe_path, "bpe")));
  const auto model = load_model_for(require(cfg.checkpoint, "checkpoint"), bpe, "decode");
  const auto corpus = pt::parse_corpus(pt::read_file(require(cfg.corpus, "corpus")));
  const pt::PredictionSet preds =
      pt::decode_corpus(model, bpe, corpus, cfg.decode, cfg.mode, cfg.split_multi);
  const std::string out = resolve_out(cfg, "predictions.txt");
  pt::write_file(out, pt::serialize_predictions(preds, cfg.emit_scores));
  std::cout << "decode: " << preds.size() << " prompts, " << candidate_count(preds)
            << " candidates -> " << out << "\n";
}

void cmd_filter(pt::PipelineConfig& cfg) {
  const auto preds = pt::parse_predictions(pt::read_file(require(cfg.predictions, "predictions")));
  const pt::PredictionSet kept = pt::threshold_filter(preds, cfg.filter);
  const std::string out = resolve_out(cfg, "filtered.txt");
  pt::write_file(out, pt::serialize_predictions(kept, cfg.emit_scores));
  std::cout << "filter: kept " << candidate_count(kept) << " of " << candidate_count(preds)
            << " candidates (threshold " << cfg.filter.min_max_token_logprob << ") -> " << out
            << "\n";
}

void cmd_filter_model(pt::PipelineConfig& cfg) {
  const bool fitting = !cfg.gold.empty();
  const bool applying = !cfg.gbdt_model.empty();
  if (fitting == applying)
    throw pt::Error("pass exactly one of --gold (fit a filter) or --gbdt_model (apply one)");

  const auto preds = pt::parse_predictions(pt::read_file(require(cfg.predictions, "predictions")));
  if (fitting) {
    const auto gold = pt::parse_corpus(pt::read_file(cfg.gold));
    const auto rows = pt::label_prediction_set(preds, gold, cfg.features, cfg.normalize);
    const pt::FilterFitReport report =
        pt::fit_filter_model(rows, cfg.gbdt, cfg.gbdt_seed, cfg.search_iters, cfg.folds);
    const std::string out = resolve_out(cfg, "gbdt.txt");
    pt::write_file(out, pt::save_gbdt(report.model));
    std::cout << "filter-model: fitted on " << report.rows << " rows (" << report.positives
              << " positive)\n";
    if (report.searched)
      std::cout << "filter-model: search picked n_estimators=" << report.params.n_estimators
                << " max_depth=" << report.params.max_depth
                << " (cv accuracy " << report.cv_accuracy << ")\n";
    std::cout << "filter-model: classifier -> " << out << "\n";
  } else {
    const pt::GbdtModel model = pt::load_gbdt(pt::read_file(cfg.gbdt_model));
    const pt::PredictionSet kept = pt::model_filter(preds, model, cfg.features);
    const std::string out = resolve_out(cfg, "filtered.txt");
    pt::write_file(out, pt::serialize_predictions(kept, cfg.emit_scores));
    std::cout << "filter-model: kept " << candidate_count(kept) << " of "
              << candidate_count(preds) << " candidates -> " << out << "\n";
  }
}

void cmd_score(pt::PipelineConfig& cfg) {
  const auto refs = pt::parse_corpus(pt::read_file(require(cfg.gold, "gold")));
  const auto preds = pt::parse_predictions(pt::read_file(require(cfg.predictions, "predictions")));

  std::unordered_set<std::string> ref_ids, pred_ids;
  for (const auto& r : refs.records) ref_ids.insert(r.prompt_id);
  for (const auto& p : preds) pred_ids.insert(p.prompt_id);
  std::vector<std::string> missing, unknown;
  for (const auto& r : refs.records)
    if (!pred_ids.count(r.prompt_id)) missing.push_back(r.prompt_id);
  for (const auto& p : preds)
    if (!ref_ids.count(p.prompt_id)) unknown.push_back(p.prompt_id);
  if (!missing.empty() || !unknown.empty()) {
    std::string msg = "prediction file does not align with the gold corpus";
    if (!missing.empty()) msg += "; missing predictions for " + join_ids(missing);
    if (!unknown.empty()) msg += "; predictions for unknown prompts " + join_ids(unknown);
    throw pt::Error(msg);
  }

  const pt::CorpusScore cs = pt::score_corpus(refs, preds, cfg.normalize);
  std::cout << pt::format_score_report(cs, cfg.per_prompt);
}

void cmd_sweep(pt::PipelineConfig& cfg) {
  const auto refs = pt::parse_corpus(pt::read_file(require(cfg.gold, "gold")));
  const auto preds = pt::parse_predictions(pt::read_file(require(cfg.predictions, "predictions")));
  const auto grid = pt::parse_threshold_grid(cfg.sweep_grid);
  const auto rows = pt::sweep_thresholds(refs, preds, grid, cfg.normalize);
  const std::string csv = pt::format_sweep_csv(rows);
  if (cfg.out.empty()) {
    std::cout << csv;
  } else {
    const std::string out = resolve_out(cfg, "sweep.csv");
    pt::write_file(out, csv);
    std::cout << "sweep-threshold: " << rows.size() << " thresholds -> " << out << "\n";
  }
}

void cmd_back_translate(pt::PipelineConfig& cfg) {
  const auto bpe = pt::BpeVocab::load(pt::read_file(require(cfg.bpe_path, "bpe")));
  const auto model =
      load_model_for(require(cfg.reverse_checkpoint, "reverse_checkpoint"), bpe, "back-translate");
  const auto corpus = pt::parse_corpus(pt::read_file(require(cfg.corpus, "corpus")));

  pt::PredictionSet paraphrases;
  std::size_t skipped = 0;
  for (const auto& rec : corpus.records) {
    bool used_ref = false;
    auto texts = pt::back_translate_prompt(model, bpe, rec, cfg.bt_beam, cfg.bt_top, &used_ref);
    if (!used_ref) {
      std::cerr << "polytrans back-translate: skipping prompt '" << rec.prompt_id
                << "': no usable reference\n";
      ++skipped;
      continue;
    }
    if (texts.empty()) {
      std::cerr << "polytrans back-translate: skipping prompt '" << rec.prompt_id
                << "': decoder produced no paraphrases\n";
      ++skipped;
      continue;
    }
    pt::PredictionRecord pr;
    pr.prompt_id = rec.prompt_id;
    pr.source_text = rec.source_text;
    for (auto& t : texts) {
      pt::PredictionCandidate c;
      c.text = std::move(t);
      pr.candidates.push_back(std::move(c));
    }
    paraphrases.push_back(std::move(pr));
  }
  const std::string out = resolve_out(cfg, "paraphrases.txt");
  pt::write_file(out, pt::serialize_predictions(paraphrases, /*emit_scores=*/false));
  std::cout << "back-translate: " << paraphrases.size() << " prompts paraphrased, " << skipped
            << " skipped -> " << out << "\n";
}

void cmd_pipeline(pt::PipelineConfig& cfg) {
  const pt::PipelineResult result = pt::run_pipeline(cfg, &std::cout);
  for (const auto& w : result.warnings)
    std::cerr << "polytrans pipeline: warning: " << w << "\n";
  std::cout << "pipeline: variant " << pt::variant_name(cfg.variant) << ", "
            << result.n_train_pairs << " training pairs, " << result.n_eval_prompts
            << " prompts scored\n"
            << pt::format_score_report(result.score, cfg.per_prompt)
            << "pipeline: predictions -> " << result.predictions_path << "\n"
            << "pipeline: report -> " << result.report_path << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"weighted multi-reference translation: data prep, training, decoding, scoring"};
  app.require_subcommand(1);

  RawOptions raw;
  std::string active;
  std::function<void(pt::PipelineConfig&)> run;

  struct CmdDef {
    const char* name;
    const char* desc;
    void (*fn)(pt::PipelineConfig&);
  };
  static const CmdDef defs[] = {
      {"fixture", "generate a synthetic weighted parallel corpus", cmd_fixture},
      {"prepare", "split a corpus by prompt and materialize weight-oversampled pairs",
       cmd_prepare},
      {"train-bpe", "learn a byte-pair subword vocabulary from a corpus", cmd_train_bpe},
      {"train", "train a translation model on sampled pairs", cmd_train},
      {"decode", "decode a corpus with a trained model (beam and/or nucleus)", cmd_decode},
      {"filter", "drop candidates whose best token logprob falls below a threshold",
       cmd_filter},
      {"filter-model", "fit (--gold) or apply (--gbdt_model) a boosted prediction filter",
       cmd_filter_model},
      {"score", "score predictions against a weighted multi-reference corpus", cmd_score},
      {"sweep-threshold", "tabulate precision/recall/F1 across filter thresholds", cmd_sweep},
      {"back-translate", "paraphrase sources by decoding reference targets backwards",
       cmd_back_translate},
      {"pipeline", "run the whole corpus-to-score pipeline in one step", cmd_pipeline},
  };
  for (const auto& d : defs) {
    CLI::App* sub = app.add_subcommand(d.name, d.desc);
    add_config_options(sub, raw);
    sub->callback([&active, &run, &d] {
      active = d.name;
      run = d.fn;
    });
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    pt::PipelineConfig cfg = resolve_config(raw);
    run(cfg);
  } catch (const std::exception& e) {
    std::cerr << "polytrans " << active << ": " << e.what() << "\n";
    return 1;
  }
  return 0;
}
