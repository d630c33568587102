// Integration tests for the command-line driver: every subcommand is invoked
// as a real child process against files on disk, and outputs are re-read with
// the library to check they round-trip.

#include <sys/wait.h>
#include <unistd.h>

#include <catch2/catch_amalgamated.hpp>
#include <cstdlib>
#include <filesystem>
#include <string>
#include <vector>

#include "polytrans/pipeline.hpp"

namespace fs = std::filesystem;
using namespace polytrans;

namespace {

struct RunResult {
  int exit_code = -1;
  std::string out;
  std::string err;
};

fs::path fresh_dir(const std::string& tag) {
  fs::path dir = fs::temp_directory_path() /
                 ("polytrans_cli_" + tag + "_" + std::to_string(::getpid()));
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

RunResult run_cli(const fs::path& dir, const std::string& args) {
  const fs::path out_path = dir / "_stdout.txt";
  const fs::path err_path = dir / "_stderr.txt";
  const std::string cmd = std::string(POLYTRANS_BIN) + " " + args + " >" + out_path.string() +
                          " 2>" + err_path.string();
  const int rc = std::system(cmd.c_str());
  RunResult r;
  if (rc != -1 && WIFEXITED(rc)) r.exit_code = WEXITSTATUS(rc);
  r.out = read_file(out_path.string());
  r.err = read_file(err_path.string());
  return r;
}

bool contains(const std::string& haystack, const std::string& needle) {
  return haystack.find(needle) != std::string::npos;
}

}  // namespace

TEST_CASE("cli: corpus preparation chain produces aligned artifacts", "[cli]") {
  const fs::path dir = fresh_dir("prep");
  const std::string w = (dir / "w").string();

  auto fx = run_cli(dir, "fixture --workdir " + w + " --fixture.seed 3 --fixture.prompts 8");
  REQUIRE(fx.exit_code == 0);
  REQUIRE(contains(fx.out, "8 prompts"));
  const auto corpus = parse_corpus(read_file(w + "/corpus.txt"));
  REQUIRE(corpus.records.size() == 8);

  auto prep = run_cli(dir, "prepare --corpus " + w + "/corpus.txt --workdir " + w);
  REQUIRE(prep.exit_code == 0);
  const auto train_c = parse_corpus(read_file(w + "/train_corpus.txt"));
  const auto val_c = parse_corpus(read_file(w + "/val_corpus.txt"));
  REQUIRE(train_c.records.size() + val_c.records.size() == corpus.records.size());

  // pairs.txt holds exactly floor(50 * weight) copies of each training pair
  const auto pairs = parse_pairs(read_file(w + "/pairs.txt"));
  std::size_t expected = 0;
  for (const auto& rec : train_c.records)
    for (const auto& t : rec.translations)
      expected += static_cast<std::size_t>(std::floor(t.weight * 50.0));
  REQUIRE(pairs.size() == expected);

  auto bpe_run =
      run_cli(dir, "train-bpe --corpus " + w + "/train_corpus.txt --workdir " + w +
                       " --bpe.vocab_size 80");
  REQUIRE(bpe_run.exit_code == 0);
  const auto bpe = BpeVocab::load(read_file(w + "/bpe.vocab"));
  REQUIRE(bpe.vocab_size() == 80);
}

TEST_CASE("cli: train, decode, filter and score round-trip", "[cli]") {
  const fs::path dir = fresh_dir("roundtrip");
  const std::string w = (dir / "w").string();
  const std::string tiny_model =
      " --model.d_model 16 --model.n_heads 2 --model.d_ff 32 --model.enc_layers 1"
      " --model.dec_layers 1 --model.max_len 32 --model.dropout 0";

  REQUIRE(run_cli(dir, "fixture --workdir " + w + " --fixture.seed 3 --fixture.prompts 8")
              .exit_code == 0);
  REQUIRE(run_cli(dir, "prepare --corpus " + w + "/corpus.txt --workdir " + w).exit_code == 0);
  REQUIRE(run_cli(dir, "train-bpe --corpus " + w + "/train_corpus.txt --workdir " + w +
                           " --bpe.vocab_size 80")
              .exit_code == 0);

  auto tr = run_cli(dir, "train --pairs " + w + "/pairs.txt --bpe " + w + "/bpe.vocab --val " +
                             w + "/val_corpus.txt --workdir " + w + tiny_model +
                             " --train.epochs 2 --train.batch_size 32 --train.lr 0.003");
  REQUIRE(tr.exit_code == 0);
  REQUIRE(contains(tr.out, "checkpoint -> " + w + "/model.ckpt"));
  REQUIRE(contains(tr.out, "best validation loss"));
  const auto ck = load_checkpoint<double>(w + "/model.ckpt");
  REQUIRE(ck.config.d_model == 16);

  auto dec = run_cli(dir, "decode --checkpoint " + w + "/model.ckpt --bpe " + w +
                              "/bpe.vocab --corpus " + w + "/val_corpus.txt --workdir " + w +
                              " --decode.beam_size 4 --decode.top_k 4 --decode.max_len 12");
  REQUIRE(dec.exit_code == 0);
  const auto preds = parse_predictions(read_file(w + "/predictions.txt"));
  const auto val_c = parse_corpus(read_file(w + "/val_corpus.txt"));
  REQUIRE(preds.size() == val_c.records.size());
  for (const auto& rec : preds)
    for (const auto& c : rec.candidates) REQUIRE(c.has_scores);

  // -inf threshold keeps everything; a strict one keeps a subset
  auto keep_all = run_cli(dir, "filter --predictions " + w + "/predictions.txt --workdir " + w +
                                   " --out " + w + "/all.txt --filter.threshold=-inf");
  REQUIRE(keep_all.exit_code == 0);
  const auto all_kept = parse_predictions(read_file(w + "/all.txt"));
  std::size_t n_before = 0, n_all = 0;
  for (const auto& r : preds) n_before += r.candidates.size();
  for (const auto& r : all_kept) n_all += r.candidates.size();
  REQUIRE(n_all == n_before);

  REQUIRE(run_cli(dir, "filter --predictions " + w + "/predictions.txt --workdir " + w +
                           " --filter.threshold=-1.0")
              .exit_code == 0);
  const auto strict = parse_predictions(read_file(w + "/filtered.txt"));
  std::size_t n_strict = 0;
  for (const auto& r : strict) n_strict += r.candidates.size();
  REQUIRE(n_strict <= n_before);

  auto sc = run_cli(dir, "score --gold " + w + "/val_corpus.txt --predictions " + w +
                             "/predictions.txt");
  REQUIRE(sc.exit_code == 0);
  for (const char* field :
       {"precision", "recall", "weighted_recall", "micro_f1", "macro_f1", "weighted_micro_f1",
        "weighted_macro_f1"})
    REQUIRE(contains(sc.out, field));
  REQUIRE(std::count(sc.out.begin(), sc.out.end(), '%') == 7);

  // a prediction file without scores cannot be threshold-filtered
  REQUIRE(run_cli(dir, "decode --checkpoint " + w + "/model.ckpt --bpe " + w +
                           "/bpe.vocab --corpus " + w + "/val_corpus.txt --workdir " + w +
                           " --out " + w + "/bare.txt --decode.emit_scores false"
                           " --decode.beam_size 4 --decode.top_k 4 --decode.max_len 12")
              .exit_code == 0);
  auto unscored = run_cli(dir, "filter --predictions " + w + "/bare.txt --workdir " + w);
  REQUIRE(unscored.exit_code == 1);
  REQUIRE(contains(unscored.err, "polytrans filter:"));
  REQUIRE(contains(unscored.err, "no scores"));
}

TEST_CASE("cli: score reports prompt alignment problems", "[cli]") {
  const fs::path dir = fresh_dir("align");
  const auto corpus = synth_fixture(5, 4, 3);
  write_file((dir / "gold.txt").string(), serialize_corpus(corpus));

  PredictionSet partial;
  for (std::size_t i = 0; i + 1 < corpus.records.size(); ++i) {
    PredictionRecord pr;
    pr.prompt_id = corpus.records[i].prompt_id;
    pr.source_text = corpus.records[i].source_text;
    partial.push_back(std::move(pr));
  }
  PredictionRecord stray;
  stray.prompt_id = "zzz9";
  stray.source_text = "nowhere";
  partial.push_back(std::move(stray));
  write_file((dir / "preds.txt").string(), serialize_predictions(partial, false));

  auto r = run_cli(dir, "score --gold " + (dir / "gold.txt").string() + " --predictions " +
                            (dir / "preds.txt").string());
  REQUIRE(r.exit_code == 1);
  REQUIRE(contains(r.err, "missing predictions for '" + corpus.records.back().prompt_id + "'"));
  REQUIRE(contains(r.err, "unknown prompts 'zzz9'"));
}

TEST_CASE("cli: sweep-threshold prints csv to stdout and honors --out", "[cli]") {
  const fs::path dir = fresh_dir("sweep");
  ParallelCorpus gold;
  PromptRecord g;
  g.prompt_id = "p1";
  g.source_text = "src one";
  g.translations = {{"good answer", 1.0}};
  gold.records.push_back(g);
  write_file((dir / "gold.txt").string(), serialize_corpus(gold));

  PredictionSet preds;
  PredictionRecord pr;
  pr.prompt_id = "p1";
  pr.source_text = "src one";
  PredictionCandidate hit;
  hit.text = "good answer";
  hit.has_scores = true;
  hit.total_logprob = -1.0;
  hit.token_logprobs = {-0.5, -0.5};
  PredictionCandidate miss;
  miss.text = "bad";
  miss.has_scores = true;
  miss.total_logprob = -4.0;
  miss.token_logprobs = {-4.0};
  pr.candidates = {hit, miss};
  preds.push_back(std::move(pr));
  write_file((dir / "preds.txt").string(), serialize_predictions(preds, true));

  const std::string common = "sweep-threshold --gold " + (dir / "gold.txt").string() +
                             " --predictions " + (dir / "preds.txt").string() +
                             " --sweep.grid \"-inf,-2,0\"";
  auto to_stdout = run_cli(dir, common);
  REQUIRE(to_stdout.exit_code == 0);
  REQUIRE(to_stdout.out.rfind("threshold,precision,weighted_recall,weighted_macro_f1\n", 0) == 0);
  REQUIRE(contains(to_stdout.out, "\n-inf,0.5,1,"));

  auto to_file = run_cli(dir, common + " --out " + (dir / "sweep.csv").string());
  REQUIRE(to_file.exit_code == 0);
  REQUIRE(read_file((dir / "sweep.csv").string()) == to_stdout.out);
}

TEST_CASE("cli: filter-model fits and applies a classifier", "[cli]") {
  const fs::path dir = fresh_dir("fmodel");

  // Separable by construction: candidates matching a reference carry high
  // token logprobs, garbage candidates carry low ones.
  ParallelCorpus gold;
  PredictionSet preds;
  for (int i = 0; i < 20; ++i) {
    PromptRecord g;
    g.prompt_id = "p" + std::to_string(i);
    g.source_text = "source " + std::to_string(i);
    g.translations = {{"target " + std::to_string(i), 1.0}};
    gold.records.push_back(g);

    PredictionRecord pr;
    pr.prompt_id = g.prompt_id;
    pr.source_text = g.source_text;
    PredictionCandidate good;
    good.text = "target " + std::to_string(i);
    good.has_scores = true;
    good.token_logprobs = {-0.2, -0.3, -0.1};
    good.total_logprob = -0.6;
    PredictionCandidate bad;
    bad.text = "junk " + std::to_string(i);
    bad.has_scores = true;
    bad.token_logprobs = {-5.0, -6.0, -4.0};
    bad.total_logprob = -15.0;
    pr.candidates = {good, bad};
    preds.push_back(std::move(pr));
  }
  write_file((dir / "gold.txt").string(), serialize_corpus(gold));
  write_file((dir / "preds.txt").string(), serialize_predictions(preds, true));

  auto fit = run_cli(dir, "filter-model --gold " + (dir / "gold.txt").string() +
                              " --predictions " + (dir / "preds.txt").string() + " --workdir " +
                              dir.string() + " --gbdt.n_estimators 40 --gbdt.max_depth 2");
  REQUIRE(fit.exit_code == 0);
  REQUIRE(contains(fit.out, "fitted on 40 rows (20 positive)"));
  const auto model = load_gbdt(read_file((dir / "gbdt.txt").string()));
  REQUIRE(model.n_features == 11);

  auto apply = run_cli(dir, "filter-model --gbdt_model " + (dir / "gbdt.txt").string() +
                                " --predictions " + (dir / "preds.txt").string() +
                                " --workdir " + dir.string());
  REQUIRE(apply.exit_code == 0);
  const auto kept = parse_predictions(read_file((dir / "filtered.txt").string()));
  std::size_t n_kept = 0;
  for (const auto& rec : kept) {
    for (const auto& c : rec.candidates) {
      ++n_kept;
      REQUIRE(c.text.rfind("target ", 0) == 0);
    }
  }
  REQUIRE(n_kept == 20);

  auto both = run_cli(dir, "filter-model --gold " + (dir / "gold.txt").string() +
                               " --gbdt_model " + (dir / "gbdt.txt").string() +
                               " --predictions " + (dir / "preds.txt").string());
  REQUIRE(both.exit_code == 1);
  REQUIRE(contains(both.err, "exactly one"));
}

TEST_CASE("cli: back-translate paraphrases an identity-mapped corpus", "[cli]") {
  const fs::path dir = fresh_dir("bt");

  // Toy identity task: target text equals source text, so a trained reverse
  // model should decode references back to the original sources.
  const std::vector<std::string> sentences = {
      "sun wind",      "tree snow sun", "fish cloud",      "wind wind tree",
      "cloud sun fish", "snow tree",     "sun fish cloud",  "tree wind",
  };
  ParallelCorpus corpus;
  for (std::size_t i = 0; i < sentences.size(); ++i) {
    PromptRecord rec;
    rec.prompt_id = "p" + std::to_string(i);
    rec.source_text = sentences[i];
    rec.translations = {{sentences[i], 1.0}};
    corpus.records.push_back(std::move(rec));
  }
  write_file((dir / "corpus.txt").string(), serialize_corpus(corpus));

  const auto bpe = BpeVocab::train(corpus_texts(corpus), 48);
  write_file((dir / "bpe.vocab").string(), bpe.save());

  ModelConfig mc;
  mc.vocab_size = bpe.vocab_size();
  mc.d_model = 16;
  mc.n_heads = 2;
  mc.d_ff = 32;
  mc.n_enc_layers = 1;
  mc.n_dec_layers = 1;
  mc.max_len = 32;
  mc.dropout = 0.0;
  Transformer<double> reverse(mc);
  reverse.init_params(11);
  std::vector<SampledPair> pairs;
  for (const auto& rec : corpus.records)
    for (int copy = 0; copy < 8; ++copy)
      pairs.push_back({rec.prompt_id, rec.source_text, rec.translations[0].target_text});
  TrainConfig tc;
  tc.epochs = 100;
  tc.batch_size = 16;
  tc.optim.lr = 3e-3;
  tc.optim.schedule = OptimConfig::Schedule::constant;
  train_loop(reverse, encode_examples(pairs, bpe, mc.max_len), {}, tc);
  save_checkpoint((dir / "reverse.ckpt").string(), reverse, 0);

  auto one = run_cli(dir, "back-translate --reverse_checkpoint " +
                              (dir / "reverse.ckpt").string() + " --bpe " +
                              (dir / "bpe.vocab").string() + " --corpus " +
                              (dir / "corpus.txt").string() + " --workdir " + dir.string() +
                              " --backtranslate.top_k 1");
  REQUIRE(one.exit_code == 0);
  REQUIRE(contains(one.out, "8 prompts paraphrased, 0 skipped"));
  const auto paraphrased = parse_predictions(read_file((dir / "paraphrases.txt").string()));
  REQUIRE(paraphrased.size() == 8);
  std::size_t identical = 0;
  for (std::size_t i = 0; i < paraphrased.size(); ++i) {
    REQUIRE(paraphrased[i].candidates.size() == 1);  // top 1 -> exactly one paraphrase
    REQUIRE_FALSE(paraphrased[i].candidates[0].text.empty());
    REQUIRE_FALSE(paraphrased[i].candidates[0].has_scores);
    if (paraphrased[i].candidates[0].text == sentences[i]) ++identical;
  }
  REQUIRE(identical >= 6);  // the trained reverse mapping is (nearly) exact

  auto five = run_cli(dir, "back-translate --reverse_checkpoint " +
                               (dir / "reverse.ckpt").string() + " --bpe " +
                               (dir / "bpe.vocab").string() + " --corpus " +
                               (dir / "corpus.txt").string() + " --workdir " + dir.string() +
                               " --out " + (dir / "para5.txt").string());
  REQUIRE(five.exit_code == 0);
  const auto wide = parse_predictions(read_file((dir / "para5.txt").string()));
  std::size_t with_source = 0;
  for (std::size_t i = 0; i < wide.size(); ++i) {
    REQUIRE(wide[i].candidates.size() <= 5);  // beam 15, top 5 by default
    REQUIRE(wide[i].candidates.size() >= 1);
    for (const auto& c : wide[i].candidates) REQUIRE_FALSE(c.text.empty());
    for (const auto& c : wide[i].candidates)
      if (c.text == sentences[i]) {
        ++with_source;
        break;
      }
  }
  REQUIRE(with_source >= 6);
}

TEST_CASE("cli: config file applies beneath command-line overrides", "[cli]") {
  const fs::path dir = fresh_dir("cfgfile");
  write_file((dir / "run.cfg").string(), "fixture.prompts = 5\nfixture.seed = 9\n");
  const std::string w1 = (dir / "w1").string();
  const std::string w2 = (dir / "w2").string();

  REQUIRE(run_cli(dir, "fixture --config " + (dir / "run.cfg").string() + " --workdir " + w1)
              .exit_code == 0);
  REQUIRE(parse_corpus(read_file(w1 + "/corpus.txt")).records.size() == 5);

  REQUIRE(run_cli(dir, "fixture --config " + (dir / "run.cfg").string() + " --workdir " + w2 +
                           " --fixture.prompts 7")
              .exit_code == 0);
  REQUIRE(parse_corpus(read_file(w2 + "/corpus.txt")).records.size() == 7);

  auto missing = run_cli(dir, "fixture --config " + (dir / "nope.cfg").string());
  REQUIRE(missing.exit_code == 1);
  REQUIRE(contains(missing.err, "polytrans fixture:"));
}

TEST_CASE("cli: bad input fails with exit code 1 and a tagged message", "[cli]") {
  const fs::path dir = fresh_dir("errors");

  auto bad_value = run_cli(dir, "fixture --fixture.seed banana");
  REQUIRE(bad_value.exit_code == 1);
  REQUIRE(contains(bad_value.err, "fixture.seed"));

  auto missing_flag = run_cli(dir, "train --bpe nowhere.vocab");
  REQUIRE(missing_flag.exit_code == 1);
  REQUIRE(contains(missing_flag.err, "missing required --pairs"));

  auto missing_file = run_cli(dir, "prepare --corpus " + (dir / "absent.txt").string());
  REQUIRE(missing_file.exit_code == 1);
  REQUIRE(contains(missing_file.err, "polytrans prepare:"));

  auto unknown_flag = run_cli(dir, "fixture --bogus 3");
  REQUIRE(unknown_flag.exit_code != 0);

  auto no_subcommand = run_cli(dir, "");
  REQUIRE(no_subcommand.exit_code != 0);

  auto help = run_cli(dir, "--help");
  REQUIRE(help.exit_code == 0);
  for (const char* name : {"fixture", "prepare", "train-bpe", "train", "decode", "filter",
                           "filter-model", "score", "sweep-threshold", "back-translate",
                           "pipeline"})
    REQUIRE(contains(help.out, name));
}

TEST_CASE("cli: pipeline subcommand runs end to end", "[cli]") {
  const fs::path dir = fresh_dir("pipe");
  const std::string w = (dir / "w").string();
  const std::string corpus_path = (dir / "corpus.txt").string();
  write_file(corpus_path, serialize_corpus(synth_fixture(11, 10, 3)));

  const std::string common =
      " --corpus " + corpus_path +
      " --bpe.vocab_size 96 --model.d_model 16 --model.n_heads 2 --model.d_ff 32"
      " --model.enc_layers 1 --model.dec_layers 1 --model.max_len 32 --model.dropout 0"
      " --train.epochs 2 --train.batch_size 16 --decode.beam_size 4 --decode.top_k 4"
      " --decode.max_len 12 --decode.n_samples 4";

  auto base = run_cli(dir, "pipeline --workdir " + w + common);
  REQUIRE(base.exit_code == 0);
  REQUIRE(contains(base.out, "pipeline: variant baseline"));
  REQUIRE(contains(base.out, "weighted_macro_f1"));
  REQUIRE(contains(base.out, "[stage] score"));
  REQUIRE(fs::exists(w + "/report.txt"));
  REQUIRE(fs::exists(w + "/stages.txt"));

  auto nf = run_cli(dir, "pipeline --workdir " + w + "_nf" + common +
                             " --pipeline.variant no_finetune");
  REQUIRE(nf.exit_code == 0);
  REQUIRE(contains(nf.out, "pipeline: variant no_finetune"));
  const std::string stages = read_file(w + "_nf/stages.txt");
  REQUIRE(contains(stages, "init mode=fresh"));
  REQUIRE_FALSE(contains(stages, "\ntrain "));
}
