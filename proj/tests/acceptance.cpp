// Acceptance gate: eleven end-to-end criteria, one printed line each.
// Exit status 0 only when every criterion passes. Tolerances are pinned as
// named constants next to the criterion that uses them.

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <limits>
#include <map>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

#include <unistd.h>

#include "polytrans/pipeline.hpp"

namespace fs = std::filesystem;
using namespace polytrans;

namespace {

int g_failures = 0;

void report(int idx, bool ok, const char* label, const std::string& detail) {
  std::printf("[%2d] %s %s%s%s\n", idx, ok ? "PASS" : "FAIL", label,
              detail.empty() ? "" : " | ", detail.c_str());
  std::fflush(stdout);
  if (!ok) ++g_failures;
}

template <typename Fn>
void run_criterion(int idx, const char* label, Fn body) {
  try {
    std::string detail;
    const bool ok = body(detail);
    report(idx, ok, label, detail);
  } catch (const std::exception& e) {
    report(idx, false, label, std::string("exception: ") + e.what());
  }
}

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.6g", v);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// ---------------------------------------------------------------------------
// 1. metric oracle equivalence
// ---------------------------------------------------------------------------
// A deliberately naive scorer, sharing no code with the library: linear scans
// over plain vectors, its own whitespace normalizer, its own aggregation.

std::string brute_normalize(const std::string& s) {
  std::string out;
  bool pending_space = false;
  for (char ch : s) {
    const bool ws = ch == ' ' || ch == '\t' || ch == '\n' || ch == '\r' || ch == '\f' ||
                    ch == '\v';
    if (ws) {
      pending_space = !out.empty();
      continue;
    }
    if (pending_space) out += ' ';
    pending_space = false;
    out += ch;
  }
  return out;
}

struct BrutePrompt {
  std::vector<std::string> refs;
  std::vector<double> weights;
  std::vector<std::string> preds;
};

struct BruteTotals {
  double p = 0, r = 0, wr = 0, mif = 0, maf = 0, wmif = 0, wmaf = 0;
};

double brute_harmonic(double a, double b) { return a + b > 0.0 ? 2.0 * a * b / (a + b) : 0.0; }

BruteTotals brute_score(const std::vector<BrutePrompt>& prompts) {
  double sum_p = 0, sum_r = 0, sum_wr = 0, sum_f1 = 0, sum_wf1 = 0;
  long pool_tp = 0, pool_fp = 0, pool_fn = 0;
  for (const auto& pr : prompts) {
    std::vector<std::string> uniq;
    for (const auto& raw : pr.preds) {
      const std::string t = brute_normalize(raw);
      if (t.empty()) continue;
      if (std::find(uniq.begin(), uniq.end(), t) == uniq.end()) uniq.push_back(t);
    }
    std::vector<std::string> refs_norm;
    for (const auto& r : pr.refs) refs_norm.push_back(brute_normalize(r));

    long tp = 0;
    double wtp = 0, wfn = 0;
    std::vector<bool> matched(refs_norm.size(), false);
    for (const auto& t : uniq)
      for (std::size_t j = 0; j < refs_norm.size(); ++j)
        if (!matched[j] && refs_norm[j] == t) {
          matched[j] = true;
          ++tp;
          wtp += pr.weights[j];
        }
    long fp = static_cast<long>(uniq.size()) - tp;
    long fn = 0;
    for (std::size_t j = 0; j < refs_norm.size(); ++j)
      if (!matched[j]) {
        ++fn;
        wfn += pr.weights[j];
      }

    const double p = uniq.empty() ? 0.0 : static_cast<double>(tp) / uniq.size();
    const double r = refs_norm.empty() ? 0.0 : static_cast<double>(tp) / refs_norm.size();
    const double wr = wtp + wfn > 0.0 ? wtp / (wtp + wfn) : 0.0;
    sum_p += p;
    sum_r += r;
    sum_wr += wr;
    sum_f1 += brute_harmonic(p, r);
    sum_wf1 += brute_harmonic(p, wr);
    pool_tp += tp;
    pool_fp += fp;
    pool_fn += fn;
  }
  const double n = static_cast<double>(prompts.size());
  BruteTotals t;
  t.p = sum_p / n;
  t.r = sum_r / n;
  t.wr = sum_wr / n;
  t.maf = sum_f1 / n;
  t.wmaf = sum_wf1 / n;
  const double pooled_p =
      pool_tp + pool_fp > 0 ? static_cast<double>(pool_tp) / (pool_tp + pool_fp) : 0.0;
  const double pooled_r =
      pool_tp + pool_fn > 0 ? static_cast<double>(pool_tp) / (pool_tp + pool_fn) : 0.0;
  t.mif = brute_harmonic(pooled_p, pooled_r);
  t.wmif = brute_harmonic(pooled_p, t.wr);
  return t;
}

bool criterion_metric_oracle(std::string& detail) {
  constexpr double kTol = 1e-12;   // per-field agreement with the oracle
  constexpr double kBudget = 5.0;  // seconds
  const auto t0 = std::chrono::steady_clock::now();

  static const char* kPool[] = {"alma",  "birs",  "citrom", "dio",    "eper",  "fuge",
                                "gomba", "hagyma", "ibolya", "jegenye", "kapor", "lencse"};
  Rng rng(0xACCE501);
  ParallelCorpus gold;
  PredictionSet preds;
  std::vector<BrutePrompt> brute;
  for (int p = 0; p < 500; ++p) {
    PromptRecord rec;
    rec.prompt_id = "q" + std::to_string(p);
    rec.source_text = std::string(kPool[rng.next_below(12)]) + " " + kPool[rng.next_below(12)];
    BrutePrompt bp;
    const int k = 1 + static_cast<int>(rng.next_below(6));
    for (int j = 0; j < k; ++j) {
      const std::string text = std::string(kPool[rng.next_below(12)]) + " " +
                               kPool[rng.next_below(12)] + " g" + std::to_string(j);
      const double w = (1.0 + static_cast<double>(rng.next_below(9999))) / 10000.0;
      rec.translations.push_back({text, w});
      bp.refs.push_back(text);
      bp.weights.push_back(w);
    }
    PredictionRecord pr;
    pr.prompt_id = rec.prompt_id;
    pr.source_text = rec.source_text;
    const int m = static_cast<int>(rng.next_below(7));
    for (int j = 0; j < m; ++j) {
      std::string text;
      if (rng.next_below(100) < 55) {
        text = rec.translations[rng.next_below(rec.translations.size())].target_text;
        switch (rng.next_below(3)) {
          case 1: text = "  " + text + " "; break;
          case 2: {
            const auto sp = text.find(' ');
            if (sp != std::string::npos) text.insert(sp, "  ");
            break;
          }
          default: break;
        }
      } else {
        text = std::string(kPool[rng.next_below(12)]) + " x" + std::to_string(rng.next_below(40));
      }
      PredictionCandidate c;
      c.text = text;
      pr.candidates.push_back(std::move(c));
      bp.preds.push_back(text);
    }
    gold.records.push_back(std::move(rec));
    preds.push_back(std::move(pr));
    brute.push_back(std::move(bp));
  }

  const CorpusScore cs = score_corpus(gold, preds);
  const BruteTotals bt = brute_score(brute);
  const double elapsed = seconds_since(t0);

  struct Pair {
    const char* name;
    double lib, oracle;
  } pairs[] = {{"P", cs.precision, bt.p},
               {"R", cs.recall, bt.r},
               {"WR", cs.weighted_recall, bt.wr},
               {"MiF", cs.micro_f1, bt.mif},
               {"MaF", cs.macro_f1, bt.maf},
               {"WMiF", cs.weighted_micro_f1, bt.wmif},
               {"WMaF", cs.weighted_macro_f1, bt.wmaf}};
  double worst = 0.0;
  const char* worst_name = "";
  for (const auto& q : pairs) {
    const double d = std::abs(q.lib - q.oracle);
    if (d > worst) {
      worst = d;
      worst_name = q.name;
    }
  }
  detail = "500 prompts, max field gap " + fmt(worst) + " (" + worst_name + "), " +
           fmt(elapsed) + " s";
  return worst <= kTol && elapsed < kBudget;
}

// ---------------------------------------------------------------------------
// 2. worked metric example
// ---------------------------------------------------------------------------

bool criterion_worked_example(std::string& detail) {
  constexpr double kTol = 1e-9;
  PromptRecord rec;
  rec.prompt_id = "w";
  rec.source_text = "src";
  rec.translations = {{"a", 0.6}, {"b", 0.3}, {"c", 0.1}};
  const PromptScore s = score_prompt(rec, {"a", "d"});
  const double expected = 6.0 / 11.0;  // 2*(0.5*0.6)/(0.5+0.6)
  detail = "WF_p = " + fmt(s.weighted_f1) + " vs 6/11 = " + fmt(expected);
  return std::abs(s.weighted_f1 - expected) <= kTol && std::abs(s.precision - 0.5) <= kTol &&
         std::abs(s.weighted_recall - 0.6) <= kTol;
}

// ---------------------------------------------------------------------------
// 3. scale invariance (exact)
// ---------------------------------------------------------------------------
// Weights are powers of two and prompts carry at most two references of equal
// weight, so every weight sum and ratio the scorer forms is reproduced
// bit-for-bit after scaling by any c (the products c*2^-k are exact).

bool criterion_scale_invariance(std::string& detail) {
  ParallelCorpus gold;
  PredictionSet preds;
  const double w_single[] = {1.0, 0.5, 0.25, 0.125};
  for (int p = 0; p < 12; ++p) {
    PromptRecord rec;
    rec.prompt_id = "s" + std::to_string(p);
    rec.source_text = "src " + std::to_string(p);
    PredictionRecord pr;
    pr.prompt_id = rec.prompt_id;
    pr.source_text = rec.source_text;
    auto add_pred = [&pr](const std::string& t) {
      PredictionCandidate c;
      c.text = t;
      pr.candidates.push_back(std::move(c));
    };
    const std::string a = "ref " + std::to_string(p) + " a";
    const std::string b = "ref " + std::to_string(p) + " b";
    if (p % 2 == 0) {
      rec.translations = {{a, w_single[(p / 2) % 4]}};
      if (p % 4 == 0) add_pred(a);       // hit
      else add_pred("junk " + std::to_string(p));  // miss
    } else {
      const double w = w_single[(p / 2) % 4] / 2.0;
      rec.translations = {{a, w}, {b, w}};
      switch (p % 3) {
        case 0: add_pred(a); add_pred(b); break;              // both
        case 1: add_pred(a); add_pred("junk " + std::to_string(p)); break;  // one + fp
        default: break;                                        // none
      }
    }
    gold.records.push_back(std::move(rec));
    preds.push_back(std::move(pr));
  }

  const CorpusScore base = score_corpus(gold, preds);
  if (!(base.weighted_macro_f1 > 0.0 && base.weighted_macro_f1 < 1.0)) {
    detail = "degenerate fixture (WMaF " + fmt(base.weighted_macro_f1) + ")";
    return false;
  }

  auto fields = [](const CorpusScore& c) {
    return std::array<double, 7>{c.precision,       c.recall,   c.weighted_recall, c.micro_f1,
                                 c.macro_f1, c.weighted_micro_f1, c.weighted_macro_f1};
  };
  const auto want = fields(base);

  int checked = 0;
  for (double c : {0.1, 3.0, 1000.0}) {
    for (std::size_t p = 0; p < gold.records.size(); ++p) {
      ParallelCorpus scaled = gold;
      for (auto& t : scaled.records[p].translations) t.weight *= c;
      const auto got = fields(score_corpus(scaled, preds));
      for (int f = 0; f < 7; ++f) {
        if (got[static_cast<std::size_t>(f)] != want[static_cast<std::size_t>(f)]) {
          detail = "field " + std::to_string(f) + " moved for c=" + fmt(c) + " prompt " +
                   std::to_string(p);
          return false;
        }
      }
      ++checked;
    }
  }
  detail = std::to_string(checked) + " rescored corpora bit-identical, base WMaF " +
           fmt(base.weighted_macro_f1);
  return true;
}

// ---------------------------------------------------------------------------
// 4. oversampling multiplicities
// ---------------------------------------------------------------------------

bool criterion_oversampling(std::string& detail) {
  constexpr double kBudget = 1.0;  // seconds
  const auto t0 = std::chrono::steady_clock::now();

  Rng gen(0x05E417);
  ParallelCorpus corpus;
  std::vector<std::pair<std::string, double>> flat;  // key -> weight
  for (int p = 0; p < 2000; ++p) {
    PromptRecord rec;
    rec.prompt_id = "o" + std::to_string(p);
    rec.source_text = "src " + std::to_string(p);
    for (int j = 0; j < 5; ++j) {
      const double w = gen.next_double();  // [0,1): ~2% falls below 0.02
      const std::string text = "tgt " + std::to_string(p) + " " + std::to_string(j);
      rec.translations.push_back({text, w});
      flat.emplace_back(rec.prompt_id + "|" + text, w);
    }
    corpus.records.push_back(std::move(rec));
  }

  const auto pairs = make_training_pairs(corpus, PairMode::oversampled, 50.0, 2'000'000);
  std::unordered_map<std::string, long> counts;
  for (const auto& pr : pairs) ++counts[pr.prompt_id + "|" + pr.target_text];

  long mismatches = 0, low_weight_survivors = 0, below = 0;
  for (const auto& [key, w] : flat) {
    const long want = static_cast<long>(std::floor(w * 50.0));
    const auto it = counts.find(key);
    const long got = it == counts.end() ? 0 : it->second;
    if (got != want) ++mismatches;
    if (w < 0.02) {
      ++below;
      if (got != 0) ++low_weight_survivors;
    }
  }
  const double elapsed = seconds_since(t0);
  detail = std::to_string(flat.size()) + " weights, " + std::to_string(pairs.size()) +
           " pairs, " + std::to_string(below) + " weights below 0.02, " + fmt(elapsed) + " s";
  return mismatches == 0 && low_weight_survivors == 0 && below > 50 && elapsed < kBudget;
}

// ---------------------------------------------------------------------------
// 5. gradient check
// ---------------------------------------------------------------------------
// Central differences for the double model at h = 1e-5*max(1,|t|). The float
// model's analytic gradients are compared against double-precision finite
// differences evaluated at the same (exactly cast) parameter values, because
// float-noise in the loss would otherwise swamp the quantity being measured.
// Coordinates where both sides sit below the floor are skipped: down there the
// relative error is a ratio of rounding residues, not of gradients.

ModelConfig grad_check_config() {
  ModelConfig cfg;
  cfg.vocab_size = 37;
  cfg.d_model = 16;
  cfg.n_heads = 2;
  cfg.d_ff = 32;
  cfg.n_enc_layers = 2;
  cfg.n_dec_layers = 2;
  cfg.max_len = 16;
  cfg.dropout = 0.0;
  cfg.label_smoothing = 0.1;
  return cfg;
}

std::vector<TrainExample> grad_check_batch() {
  return {make_train_example({6, 7, 8}, {9, 10, 11, 12}),
          make_train_example({13, 34, 9, 6}, {15, 36}),
          make_train_example({20, 30, 35}, {22, 5, 28})};
}

// max relative error between an analytic gradient vector and double central
// differences at the same parameter point, sampling coords per tensor.
inline double max_rel_error(Transformer<double>& fd_model, const std::vector<double>& analytic,
                     double floor, std::uint64_t pick_seed, int per_segment, int* checked) {
  const auto batch = grad_check_batch();
  auto& flat = fd_model.params().flat();
  Rng pick(pick_seed);
  double worst = 0.0;
  for (const auto& seg : fd_model.layout()->segments()) {
    const std::size_t count =
        static_cast<std::size_t>(seg.rows) * static_cast<std::size_t>(seg.cols);
    for (int s = 0; s < per_segment; ++s) {
      const std::size_t i = seg.offset + pick.next_below(count);
      const double theta = flat[i];
      const double h = 1e-5 * std::max(1.0, std::abs(theta));
      flat[i] = theta + h;
      const double lp = batch_loss(fd_model, batch);
      flat[i] = theta - h;
      const double lm = batch_loss(fd_model, batch);
      flat[i] = theta;
      const double fd = (lp - lm) / (2.0 * h);
      const double an = analytic[i];
      const double denom = std::max(std::abs(fd), std::abs(an));
      if (denom < floor) continue;
      worst = std::max(worst, std::abs(fd - an) / denom);
      ++*checked;
    }
  }
  return worst;
}

bool criterion_gradient_check(std::string& detail) {
  constexpr double kTolDouble = 1e-5;
  constexpr double kTolFloat = 1e-3;
  constexpr double kFloorDouble = 1e-4;  // skip negligible-gradient coords
  constexpr double kFloorFloat = 1e-2;
  const ModelConfig cfg = grad_check_config();
  const auto batch = grad_check_batch();

  double worst_double = 0.0, worst_float = 0.0;
  int checked_double = 0, checked_float = 0;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    // double: analytic vs central differences on the same model
    Transformer<double> md(cfg);
    md.init_params(seed);
    ParamStore<double> gd = md.zero_like();
    batch_loss_and_grad(md, batch, gd, nullptr);
    worst_double = std::max(
        worst_double,
        max_rel_error(md, gd.flat(), kFloorDouble, 90 + seed, 4, &checked_double));

    // float: analytic grads; finite differences run on an exact double copy
    Transformer<float> mf(cfg);
    mf.init_params(seed);
    ParamStore<float> gf = mf.zero_like();
    batch_loss_and_grad(mf, batch, gf, nullptr);
    Transformer<double> mcopy(cfg);
    auto& cflat = mcopy.params().flat();
    const auto& fflat = mf.params().flat();
    std::vector<double> fan(fflat.size());
    for (std::size_t i = 0; i < fflat.size(); ++i) {
      cflat[i] = static_cast<double>(fflat[i]);
      fan[i] = static_cast<double>(gf.flat()[i]);
    }
    worst_float = std::max(
        worst_float, max_rel_error(mcopy, fan, kFloorFloat, 90 + seed, 4, &checked_float));
  }
  detail = "max rel err double " + fmt(worst_double) + " (" + std::to_string(checked_double) +
           " coords), float " + fmt(worst_float) + " (" + std::to_string(checked_float) +
           " coords), 5 seeds";
  return worst_double < kTolDouble && worst_float < kTolFloat && checked_double >= 300 &&
         checked_float >= 300;
}

// ---------------------------------------------------------------------------
// 6. overfit / memorization  (shared fixture also feeds criterion 11)
// ---------------------------------------------------------------------------

struct MemoFixtureResult {
  ParallelCorpus corpus;
  std::string corpus_path;
  double wmaf_trained = -1.0;  // criterion-6 pipeline result, reused by 11
  PipelineConfig base_cfg;     // criterion-6 pipeline config, reused by 11
  bool pipeline_ok = false;
};

ParallelCorpus memorization_corpus() {
  static const char* kWords[] = {"sun",  "moon", "tree", "fish", "wind", "snow",
                                 "rain", "star", "cloud", "leaf", "rock", "bird"};
  auto reverse_word = [](std::string w) {
    std::reverse(w.begin(), w.end());
    return w;
  };
  Rng rng(0x32A1);
  ParallelCorpus corpus;
  std::set<std::string> seen;
  int id = 0;
  while (static_cast<int>(corpus.records.size()) < 32) {
    const int n = 2 + static_cast<int>(rng.next_below(3));
    std::string src, tgt;
    for (int i = 0; i < n; ++i) {
      const std::string w = kWords[rng.next_below(12)];
      if (i) {
        src += ' ';
        tgt += ' ';
      }
      src += w;
      tgt += reverse_word(w);
    }
    if (!seen.insert(src).second) continue;
    PromptRecord rec;
    rec.prompt_id = "m" + std::to_string(id++);
    rec.source_text = src;
    rec.translations = {{tgt, 1.0}};
    corpus.records.push_back(std::move(rec));
  }
  return corpus;
}

bool criterion_memorization(std::string& detail, const fs::path& scratch,
                            MemoFixtureResult& shared) {
  constexpr double kLossSlack = 0.1;   // distance to the label-smoothing floor
  constexpr double kWmafMin = 0.90;    // held-in pipeline score
  constexpr int kGreedyMin = 31;       // ceil(0.95 * 32)
  constexpr double kBudget = 600.0;    // seconds
  const auto t0 = std::chrono::steady_clock::now();

  shared.corpus = memorization_corpus();
  fs::create_directories(scratch);
  shared.corpus_path = (scratch / "memo_corpus.txt").string();
  write_file(shared.corpus_path, serialize_corpus(shared.corpus));

  // (a) direct training to the label-smoothing floor on the 32 unique pairs
  const auto bpe = BpeVocab::train(corpus_texts(shared.corpus), 96);
  ModelConfig mc = desk_model_config();
  mc.vocab_size = bpe.vocab_size();
  mc.dropout = 0.0;
  Transformer<double> model(mc);
  model.init_params(7);

  std::vector<SampledPair> once;
  for (const auto& rec : shared.corpus.records)
    once.push_back({rec.prompt_id, rec.source_text, rec.translations[0].target_text});
  const auto examples = encode_examples(once, bpe, mc.max_len);

  TrainConfig tc;
  tc.epochs = 500;
  tc.batch_size = 32;
  tc.seed = 5;
  tc.optim.lr = 3e-3;
  const TrainResult tr = train_loop(model, examples, {}, tc);
  const double floor_loss = label_smoothing_floor(mc.label_smoothing, mc.vocab_size);
  const bool loss_ok = tr.final_train_loss <= floor_loss + kLossSlack;

  // (b) greedy decode reproduces the training targets
  DecodeConfig greedy;
  greedy.beam_size = 1;
  greedy.top_k = 1;
  greedy.max_len = 32;
  int reproduced = 0;
  for (const auto& rec : shared.corpus.records) {
    const auto hyps = decode_source(model, bpe, rec.source_text, greedy, DecodeMode::beam);
    if (!hyps.empty() && bpe.decode(hyps[0].tokens) == rec.translations[0].target_text)
      ++reproduced;
  }

  // (c) end-to-end pipeline on the same corpus, scored on the prompts it
  // trained on (the split still runs; evaluation pins to the training side)
  PipelineConfig pc;
  pc.corpus = shared.corpus_path;
  pc.workdir = (scratch / "memo_pipeline").string();
  pc.vocab_size = 96;
  pc.model = desk_model_config();
  pc.model.dropout = 0.0;
  pc.train.epochs = 12;
  pc.train.batch_size = 50;
  pc.train.optim.lr = 3e-3;
  pc.early_stop = false;
  pc.eval_on = EvalOn::train;
  pc.decode.beam_size = 10;
  pc.decode.top_k = 1;
  pc.decode.max_len = 32;
  shared.base_cfg = pc;
  const PipelineResult pipe = run_pipeline(pc);
  shared.wmaf_trained = pipe.score.weighted_macro_f1;
  shared.pipeline_ok = true;

  const double elapsed = seconds_since(t0);
  detail = "loss " + fmt(tr.final_train_loss) + " vs floor " + fmt(floor_loss) + ", greedy " +
           std::to_string(reproduced) + "/32, pipeline WMaF " + fmt(shared.wmaf_trained) +
           " on " + std::to_string(pipe.n_eval_prompts) + " prompts, " + fmt(elapsed) + " s";
  return loss_ok && reproduced >= kGreedyMin && shared.wmaf_trained >= kWmafMin &&
         elapsed < kBudget;
}

// ---------------------------------------------------------------------------
// 7. beam-search exactness + monotonicity
// ---------------------------------------------------------------------------

bool criterion_beam_exactness(std::string& detail) {
  constexpr double kScoreTol = 1e-12;
  ModelConfig cfg;
  cfg.vocab_size = 9;  // 5 specials + 4 word pieces
  cfg.d_model = 16;
  cfg.n_heads = 2;
  cfg.d_ff = 32;
  cfg.n_enc_layers = 1;
  cfg.n_dec_layers = 1;
  cfg.max_len = 8;
  cfg.dropout = 0.0;
  Transformer<double> model(cfg);
  model.init_params(21);  // pinned; random weights give a nondegenerate ranking

  const std::vector<int> src = {5, 7, 8, Specials::eos};

  // exhaustive enumeration of every finished sequence of <= 3 emitted tokens
  // (eos included), i.e. content length 0..2 over the 6 emittable ids
  std::vector<int> emit;
  for (int v = 0; v < cfg.vocab_size; ++v)
    if (v != Specials::pad && v != Specials::bos && v != Specials::eos) emit.push_back(v);

  std::vector<Hypothesis> all;
  auto push = [&all](std::vector<int> toks, double score) {
    Hypothesis h;
    h.tokens = std::move(toks);
    h.score = score;
    h.finished = true;
    all.push_back(std::move(h));
  };
  auto st0 = model.begin_decode(src);
  const Vec<double> lp0 = st0.step(Specials::bos);
  push({Specials::eos}, lp0(Specials::eos));
  for (int a : emit) {
    auto st1 = st0;
    const Vec<double> lp1 = st1.step(a);
    const double s1 = lp0(a);
    push({a, Specials::eos}, s1 + lp1(Specials::eos));
    for (int b : emit) {
      auto st2 = st1;
      const Vec<double> lp2 = st2.step(b);
      const double s2 = s1 + lp1(b);
      push({a, b, Specials::eos}, s2 + lp2(Specials::eos));
    }
  }
  rank_hypotheses(all, 0.0);

  DecodeConfig dc;
  dc.beam_size = 64;
  dc.top_k = 5;
  dc.max_len = 3;
  const auto beam = beam_search(model, src, dc);

  bool exact = beam.size() == 5 && all.size() == 43;
  double worst_gap = 0.0;
  for (std::size_t i = 0; exact && i < beam.size(); ++i) {
    if (beam[i].tokens != all[i].tokens) exact = false;
    worst_gap = std::max(worst_gap, std::abs(beam[i].score - all[i].score));
  }
  exact = exact && worst_gap <= kScoreTol;

  // monotonicity: the best returned score never drops as the beam widens
  bool monotone = true;
  std::string best_scores;
  double prev = -std::numeric_limits<double>::infinity();
  for (int b : {1, 2, 4, 8}) {
    DecodeConfig one;
    one.beam_size = b;
    one.top_k = 1;
    one.max_len = 3;
    const auto h = beam_search(model, src, one);
    if (h.empty() || h[0].score < prev - 1e-15) monotone = false;
    prev = h.empty() ? prev : h[0].score;
    best_scores += (best_scores.empty() ? "" : ",") + fmt(prev);
  }

  detail = std::string("top-5 of 43 enumerated") + (exact ? " match" : " MISMATCH") +
           " (score gap " + fmt(worst_gap) + "), best over beams {1,2,4,8}: " + best_scores;
  return exact && monotone;
}

// ---------------------------------------------------------------------------
// 8. threshold filter
// ---------------------------------------------------------------------------

bool criterion_threshold_filter(std::string& detail) {
  auto make_candidate = [](std::vector<double> lps) {
    PredictionCandidate c;
    c.text = "cand";
    c.has_scores = true;
    c.token_logprobs = std::move(lps);
    c.total_logprob = 0.0;
    for (double v : c.token_logprobs) c.total_logprob += v;
    return c;
  };
  auto kept_count = [](const PredictionSet& s) {
    std::size_t n = 0;
    for (const auto& r : s) n += r.candidates.size();
    return n;
  };

  // hand cases at the default -3.5 cutoff
  PredictionSet hand(1);
  hand[0].prompt_id = "h";
  hand[0].source_text = "s";
  auto a = make_candidate({-0.1, -0.2});  // max -0.1 -> kept
  auto b = make_candidate({-4.0, -4.2});  // max -4.0 -> removed
  b.text = "other";
  hand[0].candidates = {a, b};
  ThresholdConfig def;  // -3.5
  const PredictionSet hand_out = threshold_filter(hand, def);
  const bool hand_ok =
      hand_out.size() == 1 && hand_out[0].candidates.size() == 1 &&
      hand_out[0].candidates[0].text == "cand";

  // random pool: identity at -infinity, monotone counts on an ascending grid
  Rng rng(0xF117E6);
  PredictionSet pool(1);
  pool[0].prompt_id = "p";
  pool[0].source_text = "s";
  for (int i = 0; i < 60; ++i) {
    auto c = make_candidate({rng.uniform(-8.0, 0.0), rng.uniform(-8.0, 0.0),
                             rng.uniform(-8.0, 0.0)});
    c.text = "cand " + std::to_string(i);
    pool[0].candidates.push_back(std::move(c));
  }
  ThresholdConfig neg_inf;
  neg_inf.min_max_token_logprob = -std::numeric_limits<double>::infinity();
  const PredictionSet same = threshold_filter(pool, neg_inf);
  bool identity_ok = same.size() == 1 && same[0].candidates.size() == pool[0].candidates.size();
  for (std::size_t i = 0; identity_ok && i < pool[0].candidates.size(); ++i)
    identity_ok = same[0].candidates[i].text == pool[0].candidates[i].text;

  bool monotone = true;
  std::size_t prev = pool[0].candidates.size() + 1;
  std::string counts;
  for (double t : {-std::numeric_limits<double>::infinity(), -6.0, -4.0, -3.5, -2.0, -1.0, 0.0}) {
    ThresholdConfig tc;
    tc.min_max_token_logprob = t;
    const std::size_t n = kept_count(threshold_filter(pool, tc));
    if (n > prev) monotone = false;
    prev = n;
    counts += (counts.empty() ? "" : ",") + std::to_string(n);
  }

  detail = "hand cases " + std::string(hand_ok ? "ok" : "BAD") + ", kept counts " + counts;
  return hand_ok && identity_ok && monotone;
}

// ---------------------------------------------------------------------------
// 9. nucleus sampling
// ---------------------------------------------------------------------------

bool criterion_nucleus(std::string& detail) {
  const std::vector<double> probs = {0.6, 0.3, 0.1};
  constexpr double kP = 0.8;
  constexpr int kDraws = 10000;
  // truncation keeps {0.6, 0.3}, renormalized to (2/3, 1/3)
  const double expect0 = kDraws * (2.0 / 3.0);
  const double sigma = std::sqrt(kDraws * (2.0 / 3.0) * (1.0 / 3.0));

  Rng draw(0x9C1E05);
  long counts[3] = {0, 0, 0};
  for (int i = 0; i < kDraws; ++i) ++counts[nucleus_pick(probs, kP, draw)];

  const double dev0 = std::abs(counts[0] - expect0);
  detail = "counts " + std::to_string(counts[0]) + "/" + std::to_string(counts[1]) + "/" +
           std::to_string(counts[2]) + ", |c0 - " + fmt(expect0) + "| = " + fmt(dev0) +
           " vs 3 sigma = " + fmt(3.0 * sigma);
  return counts[2] == 0 && dev0 <= 3.0 * sigma;
}

// ---------------------------------------------------------------------------
// 10. gradient-boosted classifier
// ---------------------------------------------------------------------------

bool criterion_gbdt(std::string& detail) {
  constexpr double kCvMin = 0.95;
  Rng rng(0x6BD7);
  std::vector<std::vector<double>> X;
  std::vector<int> y;
  for (int i = 0; i < 1000; ++i) {
    const int label = i % 2;
    std::vector<double> row(5);
    row[0] = label ? rng.uniform(0.5, 1.5) : rng.uniform(-1.5, -0.5);  // separating margin
    for (int f = 1; f < 5; ++f) row[static_cast<std::size_t>(f)] = rng.uniform(-1.0, 1.0);
    X.push_back(std::move(row));
    y.push_back(label);
  }

  GbdtParams params;  // 50 trees, depth 3
  const CvResult cv = kfold_cv(X, y, params, 5, 41);
  const CvResult cv2 = kfold_cv(X, y, params, 5, 41);
  const GbdtModel m1 = fit_gbdt(X, y, params, 77);
  const GbdtModel m2 = fit_gbdt(X, y, params, 77);
  const bool reproducible =
      cv.mean_accuracy == cv2.mean_accuracy && save_gbdt(m1) == save_gbdt(m2);

  bool non_increasing = true;
  double prev = std::numeric_limits<double>::infinity();
  for (int r = 0; r <= params.n_estimators; ++r) {
    const double loss = logistic_loss(m1, X, y, r);
    if (loss > prev + 1e-9) non_increasing = false;
    prev = loss;
  }

  detail = "5-fold cv accuracy " + fmt(cv.mean_accuracy) + ", final train loss " + fmt(prev) +
           (reproducible ? ", reproducible" : ", NOT reproducible");
  return cv.mean_accuracy >= kCvMin && reproducible && non_increasing;
}

// ---------------------------------------------------------------------------
// 11. ablation direction
// ---------------------------------------------------------------------------

bool criterion_ablation_direction(std::string& detail, const fs::path& scratch,
                                  const MemoFixtureResult& shared) {
  constexpr double kMinGap = 0.30;
  if (!shared.pipeline_ok) {
    detail = "criterion 6 fixture unavailable";
    return false;
  }

  // untrained ("no fine-tuning") pipeline on the same corpus
  PipelineConfig nf = shared.base_cfg;
  nf.workdir = (scratch / "ablate_no_finetune").string();
  nf.variant = Variant::no_finetune;
  const PipelineResult r_nf = run_pipeline(nf);
  const double gap = shared.wmaf_trained - r_nf.score.weighted_macro_f1;

  // threshold ablation at a wide top-k: identical training seeds in both runs
  // produce the same checkpoint, so the only difference is the prediction
  // filter
  PipelineConfig wide = shared.base_cfg;
  wide.decode.top_k = 10;
  wide.workdir = (scratch / "ablate_baseline10").string();
  const PipelineResult r_base = run_pipeline(wide);

  PipelineConfig nopost = wide;
  nopost.workdir = (scratch / "ablate_no_postprocess").string();
  nopost.variant = Variant::no_postprocess;
  const PipelineResult r_nopost = run_pipeline(nopost);

  detail = "WMaF trained " + fmt(shared.wmaf_trained) + " vs untrained " +
           fmt(r_nf.score.weighted_macro_f1) + " (gap " + fmt(gap) + "), precision filtered " +
           fmt(r_base.score.precision) + " vs unfiltered " + fmt(r_nopost.score.precision);
  return gap >= kMinGap && r_nopost.score.precision <= r_base.score.precision;
}

}  // namespace

int main() {
  const fs::path scratch =
      fs::temp_directory_path() / ("polytrans_acceptance_" + std::to_string(::getpid()));
  fs::remove_all(scratch);
  fs::create_directories(scratch);

  MemoFixtureResult shared;

  run_criterion(1, "metric oracle equivalence (500 prompts, 7 fields, 1e-12)",
                criterion_metric_oracle);
  run_criterion(2, "worked metric example (WF_p = 6/11)", criterion_worked_example);
  run_criterion(3, "scale invariance (c in {0.1,3,1000}, exact)", criterion_scale_invariance);
  run_criterion(4, "oversampling multiplicity floor(50w), none below 0.02",
                criterion_oversampling);
  run_criterion(5, "gradient check (2+2 layers, d16, h2, vocab 37)", criterion_gradient_check);
  run_criterion(6, "memorization: loss floor, greedy >= 95%, pipeline WMaF >= 0.90",
                [&](std::string& d) { return criterion_memorization(d, scratch, shared); });
  run_criterion(7, "beam-search exactness vs enumeration + monotonicity",
                criterion_beam_exactness);
  run_criterion(8, "threshold filter: hand cases, -inf identity, monotone counts",
                criterion_threshold_filter);
  run_criterion(9, "nucleus sampling (0.6,0.3,0.1) at p=0.8", criterion_nucleus);
  run_criterion(10, "gbdt: 5-fold cv >= 0.95, reproducible, loss non-increasing",
                criterion_gbdt);
  run_criterion(11, "ablation direction: fine-tuning gap >= 0.30, filter precision",
                [&](std::string& d) { return criterion_ablation_direction(d, scratch, shared); });

  if (g_failures == 0) {
    std::printf("acceptance: 11/11 criteria passed\n");
    return 0;
  }
  std::printf("acceptance: %d criteria FAILED\n", g_failures);
  return 1;
}
