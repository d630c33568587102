#pragma once

#include <cstdint>
#include <functional>
#include <limits>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "polytrans/decoding.hpp"
#include "polytrans/error.hpp"
#include "polytrans/filtering.hpp"
#include "polytrans/gbdt.hpp"
#include "polytrans/model.hpp"
#include "polytrans/text.hpp"
#include "polytrans/training.hpp"

namespace polytrans {

// End-to-end run flavors. Each one reuses the baseline stages and differs
// only in configuration (which stages run and with which settings).
enum class Variant {
  baseline,
  no_finetune,
  no_oversample,
  no_postprocess,
  multi_output,
  nucleus,
  back_translate,
  model_filter,
};

enum class EvalOn { val, train, all };
enum class DecodeMode { beam, nucleus, both };

namespace detail {

inline const std::vector<std::pair<Variant, std::string>>& variant_table() {
  static const std::vector<std::pair<Variant, std::string>> table = {
      {Variant::baseline, "baseline"},
      {Variant::no_finetune, "no_finetune"},
      {Variant::no_oversample, "no_oversample"},
      {Variant::no_postprocess, "no_postprocess"},
      {Variant::multi_output, "multi_output"},
      {Variant::nucleus, "nucleus"},
      {Variant::back_translate, "back_translate"},
      {Variant::model_filter, "model_filter"},
  };
  return table;
}

template <typename E>
std::string enum_name(E v, const std::vector<std::pair<E, std::string>>& table) {
  for (const auto& [e, name] : table)
    if (e == v) return name;
  throw Error("config: unnamed enum value");
}

template <typename E>
E enum_from(const std::string& s, const std::vector<std::pair<E, std::string>>& table,
            const char* what) {
  for (const auto& [e, name] : table)
    if (name == s) return e;
  std::string valid;
  for (const auto& [e, name] : table) {
    if (!valid.empty()) valid += ", ";
    valid += name;
  }
  throw Error(std::string("config: unknown ") + what + " '" + s + "' (expected one of: " + valid +
              ")");
}

}  // namespace detail

inline std::string variant_name(Variant v) { return detail::enum_name(v, detail::variant_table()); }
inline Variant variant_from_string(const std::string& s) {
  return detail::enum_from(s, detail::variant_table(), "variant");
}

namespace detail {

inline const std::vector<std::pair<EvalOn, std::string>>& eval_on_table() {
  static const std::vector<std::pair<EvalOn, std::string>> table = {
      {EvalOn::val, "val"}, {EvalOn::train, "train"}, {EvalOn::all, "all"}};
  return table;
}

inline const std::vector<std::pair<DecodeMode, std::string>>& decode_mode_table() {
  static const std::vector<std::pair<DecodeMode, std::string>> table = {
      {DecodeMode::beam, "beam"}, {DecodeMode::nucleus, "nucleus"}, {DecodeMode::both, "both"}};
  return table;
}

inline const std::vector<std::pair<OptimConfig::Schedule, std::string>>& schedule_table() {
  static const std::vector<std::pair<OptimConfig::Schedule, std::string>> table = {
      {OptimConfig::Schedule::constant, "constant"},
      {OptimConfig::Schedule::plateau_isqrt, "plateau_isqrt"},
      {OptimConfig::Schedule::warmup_isqrt, "warmup_isqrt"}};
  return table;
}

inline int to_int(const std::string& v, const std::string& key) {
  int out = 0;
  auto res = std::from_chars(v.data(), v.data() + v.size(), out);
  if (res.ec != std::errc() || res.ptr != v.data() + v.size())
    throw Error("config: key '" + key + "': bad integer '" + v + "'");
  return out;
}

inline std::int64_t to_i64(const std::string& v, const std::string& key) {
  std::int64_t out = 0;
  auto res = std::from_chars(v.data(), v.data() + v.size(), out);
  if (res.ec != std::errc() || res.ptr != v.data() + v.size())
    throw Error("config: key '" + key + "': bad integer '" + v + "'");
  return out;
}

inline std::uint64_t to_u64(const std::string& v, const std::string& key) {
  std::uint64_t out = 0;
  auto res = std::from_chars(v.data(), v.data() + v.size(), out);
  if (res.ec != std::errc() || res.ptr != v.data() + v.size())
    throw Error("config: key '" + key + "': bad unsigned integer '" + v + "'");
  return out;
}

inline double to_double(const std::string& v, const std::string& key) {
  if (v == "-inf") return -std::numeric_limits<double>::infinity();
  if (v == "inf" || v == "+inf") return std::numeric_limits<double>::infinity();
  double out = 0.0;
  auto res = std::from_chars(v.data(), v.data() + v.size(), out);
  if (res.ec != std::errc() || res.ptr != v.data() + v.size())
    throw Error("config: key '" + key + "': bad number '" + v + "'");
  return out;
}

inline bool to_bool(const std::string& v, const std::string& key) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw Error("config: key '" + key + "': bad boolean '" + v + "' (use true/false)");
}

inline std::string format_double(double v) {
  if (v == -std::numeric_limits<double>::infinity()) return "-inf";
  if (v == std::numeric_limits<double>::infinity()) return "inf";
  return format_real(v);
}

}  // namespace detail

// The desk-scale model: small enough to overfit a toy corpus in seconds.
// Larger dimensions stay expressible through the model.* keys.
inline ModelConfig desk_model_config() {
  ModelConfig m;
  m.vocab_size = 0;  // resolved from the tokenizer at run time
  m.d_model = 64;
  m.n_heads = 4;
  m.d_ff = 256;
  m.n_enc_layers = 2;
  m.n_dec_layers = 2;
  m.max_len = 160;
  m.dropout = 0.1;
  m.label_smoothing = 0.1;
  return m;
}

// One flat configuration shared by every subcommand; each command reads the
// fields it needs. File format and command-line flags use the same keys.
struct PipelineConfig {
  // paths
  std::string corpus;              // reference corpus (prompts + weighted targets)
  std::string workdir = "out";     // directory for generated artifacts
  std::string checkpoint;          // model checkpoint to read or write
  std::string reverse_checkpoint;  // target->source model for back-translation
  std::string bpe_path;            // subword vocabulary file          (key: bpe)
  std::string pairs;               // sampled training pairs file
  std::string val;                 // validation corpus file
  std::string predictions;         // predictions file to read
  std::string gold;                // reference corpus for scoring
  std::string gbdt_model;          // fitted filter classifier file
  std::string out;                 // output path override

  // fixture
  std::uint64_t fixture_seed = 7;
  int fixture_prompts = 40;
  int fixture_max_refs = 4;

  // prepare
  double factor = 50.0;                   // oversampling multiplier
  double fraction = 0.15;                 // validation prompt fraction
  std::uint64_t split_seed = 13;          // prompt split shuffle seed
  std::int64_t max_pairs = 2'000'000;     // sampled-pair safety cap

  // subword
  int vocab_size = 512;

  // model
  ModelConfig model = desk_model_config();
  std::uint64_t init_seed = 7;

  // training
  TrainConfig train;
  bool early_stop = true;  // stop on validation loss and restore the best epoch

  // decoding
  DecodeConfig decode;
  bool emit_scores = true;
  DecodeMode mode = DecodeMode::beam;
  bool split_multi = false;  // split decoder output on <sep> into candidates

  // back-translation
  int bt_beam = 15;
  int bt_top = 5;

  // filtering
  ThresholdConfig filter;
  FeatureConfig features;

  // filter classifier fitting
  GbdtParams gbdt;
  std::uint64_t gbdt_seed = 29;
  int search_iters = 0;  // 0 fits with gbdt.* as given; >0 runs randomized search
  int folds = 5;

  // scoring
  NormalizeConfig normalize;
  bool per_prompt = false;

  // threshold sweep
  std::string sweep_grid = "-inf,-6,-5,-4.5,-4,-3.5,-3,-2.5,-2,-1.5,-1";

  // end-to-end run
  Variant variant = Variant::baseline;
  EvalOn eval_on = EvalOn::val;

  // Keys assigned from a file or the command line, as opposed to defaults.
  // Variant presets only touch keys that are not recorded here.
  std::set<std::string> explicit_keys;

  void set(const std::string& key, const std::string& value);
  std::string get(const std::string& key) const;
  bool is_explicit(const std::string& key) const { return explicit_keys.count(key) > 0; }
};

namespace detail {

struct KeyBinding {
  const char* name;
  std::function<void(PipelineConfig&, const std::string&)> set;
  std::function<std::string(const PipelineConfig&)> get;
};

inline const std::vector<KeyBinding>& key_bindings() {
  using C = PipelineConfig;
  static const std::vector<KeyBinding> table = {
      // paths
      {"corpus", [](C& c, const std::string& v) { c.corpus = v; },
       [](const C& c) { return c.corpus; }},
      {"workdir", [](C& c, const std::string& v) { c.workdir = v; },
       [](const C& c) { return c.workdir; }},
      {"checkpoint", [](C& c, const std::string& v) { c.checkpoint = v; },
       [](const C& c) { return c.checkpoint; }},
      {"reverse_checkpoint", [](C& c, const std::string& v) { c.reverse_checkpoint = v; },
       [](const C& c) { return c.reverse_checkpoint; }},
      {"bpe", [](C& c, const std::string& v) { c.bpe_path = v; },
       [](const C& c) { return c.bpe_path; }},
      {"pairs", [](C& c, const std::string& v) { c.pairs = v; },
       [](const C& c) { return c.pairs; }},
      {"val", [](C& c, const std::string& v) { c.val = v; }, [](const C& c) { return c.val; }},
      {"predictions", [](C& c, const std::string& v) { c.predictions = v; },
       [](const C& c) { return c.predictions; }},
      {"gold", [](C& c, const std::string& v) { c.gold = v; }, [](const C& c) { return c.gold; }},
      {"gbdt_model", [](C& c, const std::string& v) { c.gbdt_model = v; },
       [](const C& c) { return c.gbdt_model; }},
      {"out", [](C& c, const std::string& v) { c.out = v; }, [](const C& c) { return c.out; }},

      // fixture
      {"fixture.seed", [](C& c, const std::string& v) { c.fixture_seed = to_u64(v, "fixture.seed"); },
       [](const C& c) { return std::to_string(c.fixture_seed); }},
      {"fixture.prompts",
       [](C& c, const std::string& v) { c.fixture_prompts = to_int(v, "fixture.prompts"); },
       [](const C& c) { return std::to_string(c.fixture_prompts); }},
      {"fixture.max_refs",
       [](C& c, const std::string& v) { c.fixture_max_refs = to_int(v, "fixture.max_refs"); },
       [](const C& c) { return std::to_string(c.fixture_max_refs); }},

      // prepare
      {"prepare.factor", [](C& c, const std::string& v) { c.factor = to_double(v, "prepare.factor"); },
       [](const C& c) { return format_double(c.factor); }},
      {"prepare.fraction",
       [](C& c, const std::string& v) { c.fraction = to_double(v, "prepare.fraction"); },
       [](const C& c) { return format_double(c.fraction); }},
      {"prepare.seed", [](C& c, const std::string& v) { c.split_seed = to_u64(v, "prepare.seed"); },
       [](const C& c) { return std::to_string(c.split_seed); }},
      {"prepare.max_pairs",
       [](C& c, const std::string& v) { c.max_pairs = to_i64(v, "prepare.max_pairs"); },
       [](const C& c) { return std::to_string(c.max_pairs); }},

      // subword
      {"bpe.vocab_size",
       [](C& c, const std::string& v) { c.vocab_size = to_int(v, "bpe.vocab_size"); },
       [](const C& c) { return std::to_string(c.vocab_size); }},

      // model
      {"model.d_model", [](C& c, const std::string& v) { c.model.d_model = to_int(v, "model.d_model"); },
       [](const C& c) { return std::to_string(c.model.d_model); }},
      {"model.n_heads", [](C& c, const std::string& v) { c.model.n_heads = to_int(v, "model.n_heads"); },
       [](const C& c) { return std::to_string(c.model.n_heads); }},
      {"model.d_ff", [](C& c, const std::string& v) { c.model.d_ff = to_int(v, "model.d_ff"); },
       [](const C& c) { return std::to_string(c.model.d_ff); }},
      {"model.enc_layers",
       [](C& c, const std::string& v) { c.model.n_enc_layers = to_int(v, "model.enc_layers"); },
       [](const C& c) { return std::to_string(c.model.n_enc_layers); }},
      {"model.dec_layers",
       [](C& c, const std::string& v) { c.model.n_dec_layers = to_int(v, "model.dec_layers"); },
       [](const C& c) { return std::to_string(c.model.n_dec_layers); }},
      {"model.max_len", [](C& c, const std::string& v) { c.model.max_len = to_int(v, "model.max_len"); },
       [](const C& c) { return std::to_string(c.model.max_len); }},
      {"model.dropout",
       [](C& c, const std::string& v) { c.model.dropout = to_double(v, "model.dropout"); },
       [](const C& c) { return format_double(c.model.dropout); }},
      {"model.label_smoothing",
       [](C& c, const std::string& v) {
         c.model.label_smoothing = to_double(v, "model.label_smoothing");
       },
       [](const C& c) { return format_double(c.model.label_smoothing); }},
      {"model.init_seed", [](C& c, const std::string& v) { c.init_seed = to_u64(v, "model.init_seed"); },
       [](const C& c) { return std::to_string(c.init_seed); }},

      // training
      {"train.epochs", [](C& c, const std::string& v) { c.train.epochs = to_int(v, "train.epochs"); },
       [](const C& c) { return std::to_string(c.train.epochs); }},
      {"train.batch_size",
       [](C& c, const std::string& v) { c.train.batch_size = to_int(v, "train.batch_size"); },
       [](const C& c) { return std::to_string(c.train.batch_size); }},
      {"train.seed", [](C& c, const std::string& v) { c.train.seed = to_u64(v, "train.seed"); },
       [](const C& c) { return std::to_string(c.train.seed); }},
      {"train.patience", [](C& c, const std::string& v) { c.train.patience = to_int(v, "train.patience"); },
       [](const C& c) { return std::to_string(c.train.patience); }},
      {"train.lr", [](C& c, const std::string& v) { c.train.optim.lr = to_double(v, "train.lr"); },
       [](const C& c) { return format_double(c.train.optim.lr); }},
      {"train.beta1", [](C& c, const std::string& v) { c.train.optim.beta1 = to_double(v, "train.beta1"); },
       [](const C& c) { return format_double(c.train.optim.beta1); }},
      {"train.beta2", [](C& c, const std::string& v) { c.train.optim.beta2 = to_double(v, "train.beta2"); },
       [](const C& c) { return format_double(c.train.optim.beta2); }},
      {"train.clip_norm",
       [](C& c, const std::string& v) { c.train.optim.clip_norm = to_double(v, "train.clip_norm"); },
       [](const C& c) { return format_double(c.train.optim.clip_norm); }},
      {"train.schedule",
       [](C& c, const std::string& v) {
         c.train.optim.schedule = enum_from(v, schedule_table(), "train.schedule");
       },
       [](const C& c) { return enum_name(c.train.optim.schedule, schedule_table()); }},
      {"train.decay_start",
       [](C& c, const std::string& v) { c.train.optim.decay_start = to_int(v, "train.decay_start"); },
       [](const C& c) { return std::to_string(c.train.optim.decay_start); }},
      {"train.warmup_steps",
       [](C& c, const std::string& v) { c.train.optim.warmup_steps = to_int(v, "train.warmup_steps"); },
       [](const C& c) { return std::to_string(c.train.optim.warmup_steps); }},
      {"train.early_stop",
       [](C& c, const std::string& v) { c.early_stop = to_bool(v, "train.early_stop"); },
       [](const C& c) { return c.early_stop ? "true" : "false"; }},

      // decoding
      {"decode.beam_size",
       [](C& c, const std::string& v) { c.decode.beam_size = to_int(v, "decode.beam_size"); },
       [](const C& c) { return std::to_string(c.decode.beam_size); }},
      {"decode.top_k", [](C& c, const std::string& v) { c.decode.top_k = to_int(v, "decode.top_k"); },
       [](const C& c) { return std::to_string(c.decode.top_k); }},
      {"decode.max_len", [](C& c, const std::string& v) { c.decode.max_len = to_int(v, "decode.max_len"); },
       [](const C& c) { return std::to_string(c.decode.max_len); }},
      {"decode.length_alpha",
       [](C& c, const std::string& v) { c.decode.length_alpha = to_double(v, "decode.length_alpha"); },
       [](const C& c) { return format_double(c.decode.length_alpha); }},
      {"decode.top_p", [](C& c, const std::string& v) { c.decode.top_p = to_double(v, "decode.top_p"); },
       [](const C& c) { return format_double(c.decode.top_p); }},
      {"decode.n_samples",
       [](C& c, const std::string& v) { c.decode.n_samples = to_int(v, "decode.n_samples"); },
       [](const C& c) { return std::to_string(c.decode.n_samples); }},
      {"decode.seed", [](C& c, const std::string& v) { c.decode.seed = to_u64(v, "decode.seed"); },
       [](const C& c) { return std::to_string(c.decode.seed); }},
      {"decode.emit_scores",
       [](C& c, const std::string& v) { c.emit_scores = to_bool(v, "decode.emit_scores"); },
       [](const C& c) { return c.emit_scores ? "true" : "false"; }},
      {"decode.mode",
       [](C& c, const std::string& v) { c.mode = enum_from(v, decode_mode_table(), "decode.mode"); },
       [](const C& c) { return enum_name(c.mode, decode_mode_table()); }},
      {"decode.split_multi",
       [](C& c, const std::string& v) { c.split_multi = to_bool(v, "decode.split_multi"); },
       [](const C& c) { return c.split_multi ? "true" : "false"; }},

      // back-translation
      {"backtranslate.beam_size",
       [](C& c, const std::string& v) { c.bt_beam = to_int(v, "backtranslate.beam_size"); },
       [](const C& c) { return std::to_string(c.bt_beam); }},
      {"backtranslate.top_k",
       [](C& c, const std::string& v) { c.bt_top = to_int(v, "backtranslate.top_k"); },
       [](const C& c) { return std::to_string(c.bt_top); }},

      // filtering
      {"filter.threshold",
       [](C& c, const std::string& v) {
         c.filter.min_max_token_logprob = to_double(v, "filter.threshold");
       },
       [](const C& c) { return format_double(c.filter.min_max_token_logprob); }},
      {"features.length",
       [](C& c, const std::string& v) { c.features.length = to_int(v, "features.length"); },
       [](const C& c) { return std::to_string(c.features.length); }},
      {"features.pad_value",
       [](C& c, const std::string& v) { c.features.pad_value = to_double(v, "features.pad_value"); },
       [](const C& c) { return format_double(c.features.pad_value); }},

      // filter classifier
      {"gbdt.n_estimators",
       [](C& c, const std::string& v) { c.gbdt.n_estimators = to_int(v, "gbdt.n_estimators"); },
       [](const C& c) { return std::to_string(c.gbdt.n_estimators); }},
      {"gbdt.max_depth", [](C& c, const std::string& v) { c.gbdt.max_depth = to_int(v, "gbdt.max_depth"); },
       [](const C& c) { return std::to_string(c.gbdt.max_depth); }},
      {"gbdt.learning_rate",
       [](C& c, const std::string& v) { c.gbdt.learning_rate = to_double(v, "gbdt.learning_rate"); },
       [](const C& c) { return format_double(c.gbdt.learning_rate); }},
      {"gbdt.colsample_bytree",
       [](C& c, const std::string& v) {
         c.gbdt.colsample_bytree = to_double(v, "gbdt.colsample_bytree");
       },
       [](const C& c) { return format_double(c.gbdt.colsample_bytree); }},
      {"gbdt.colsample_bylevel",
       [](C& c, const std::string& v) {
         c.gbdt.colsample_bylevel = to_double(v, "gbdt.colsample_bylevel");
       },
       [](const C& c) { return format_double(c.gbdt.colsample_bylevel); }},
      {"gbdt.min_samples_leaf",
       [](C& c, const std::string& v) { c.gbdt.min_samples_leaf = to_int(v, "gbdt.min_samples_leaf"); },
       [](const C& c) { return std::to_string(c.gbdt.min_samples_leaf); }},
      {"gbdt.seed", [](C& c, const std::string& v) { c.gbdt_seed = to_u64(v, "gbdt.seed"); },
       [](const C& c) { return std::to_string(c.gbdt_seed); }},
      {"gbdt.search_iters",
       [](C& c, const std::string& v) { c.search_iters = to_int(v, "gbdt.search_iters"); },
       [](const C& c) { return std::to_string(c.search_iters); }},
      {"gbdt.folds", [](C& c, const std::string& v) { c.folds = to_int(v, "gbdt.folds"); },
       [](const C& c) { return std::to_string(c.folds); }},

      // scoring
      {"normalize.lowercase",
       [](C& c, const std::string& v) { c.normalize.lowercase = to_bool(v, "normalize.lowercase"); },
       [](const C& c) { return c.normalize.lowercase ? "true" : "false"; }},
      {"score.per_prompt",
       [](C& c, const std::string& v) { c.per_prompt = to_bool(v, "score.per_prompt"); },
       [](const C& c) { return c.per_prompt ? "true" : "false"; }},

      // threshold sweep
      {"sweep.grid", [](C& c, const std::string& v) { c.sweep_grid = v; },
       [](const C& c) { return c.sweep_grid; }},

      // end-to-end run
      {"pipeline.variant",
       [](C& c, const std::string& v) { c.variant = variant_from_string(v); },
       [](const C& c) { return variant_name(c.variant); }},
      {"pipeline.eval_on",
       [](C& c, const std::string& v) { c.eval_on = enum_from(v, eval_on_table(), "pipeline.eval_on"); },
       [](const C& c) { return enum_name(c.eval_on, eval_on_table()); }},
  };
  return table;
}

inline const KeyBinding* find_key(const std::string& key) {
  for (const auto& b : key_bindings())
    if (key == b.name) return &b;
  return nullptr;
}

}  // namespace detail

inline const std::vector<std::string>& config_keys() {
  static const std::vector<std::string> keys = [] {
    std::vector<std::string> out;
    for (const auto& b : detail::key_bindings()) out.emplace_back(b.name);
    return out;
  }();
  return keys;
}

inline void PipelineConfig::set(const std::string& key, const std::string& value) {
  const detail::KeyBinding* b = detail::find_key(key);
  if (!b) throw Error("config: unknown key '" + key + "'");
  b->set(*this, value);
  explicit_keys.insert(key);
}

inline std::string PipelineConfig::get(const std::string& key) const {
  const detail::KeyBinding* b = detail::find_key(key);
  if (!b) throw Error("config: unknown key '" + key + "'");
  return b->get(*this);
}

namespace detail {

inline std::string trim(std::string_view s) {
  std::size_t a = 0, b = s.size();
  while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
  while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
  return std::string(s.substr(a, b - a));
}

}  // namespace detail

// Parses `key = value` lines. Blank lines and lines starting with '#' are
// skipped; everything after the first '=' is the value, verbatim after
// trimming, so values may themselves contain '='.
inline std::vector<std::pair<std::string, std::string>> parse_config_text(const std::string& text) {
  std::vector<std::pair<std::string, std::string>> entries;
  const std::vector<std::string> lines = split_lines(text);
  for (std::size_t i = 0; i < lines.size(); ++i) {
    const std::string line = detail::trim(lines[i]);
    if (line.empty() || line[0] == '#') continue;
    const std::size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw Error("config: line " + std::to_string(i + 1) + ": expected 'key = value', got '" +
                  line + "'");
    std::string key = detail::trim(std::string_view(line).substr(0, eq));
    std::string value = detail::trim(std::string_view(line).substr(eq + 1));
    if (key.empty()) throw Error("config: line " + std::to_string(i + 1) + ": empty key");
    entries.emplace_back(std::move(key), std::move(value));
  }
  return entries;
}

inline void apply_config_text(PipelineConfig& cfg, const std::string& text) {
  for (const auto& [key, value] : parse_config_text(text)) cfg.set(key, value);
}

// Every key in registry order, so two configs with equal settings serialize
// to byte-identical text.
inline std::string serialize_config(const PipelineConfig& cfg) {
  std::string out;
  for (const std::string& key : config_keys()) out += key + " = " + cfg.get(key) + "\n";
  return out;
}

// Variant-specific defaults. Only keys never assigned explicitly move, so a
// config file or flag always wins over a preset.
inline void apply_variant_presets(PipelineConfig& cfg) {
  auto preset = [&cfg](const char* key, const std::string& value) {
    if (cfg.is_explicit(key)) return;
    const detail::KeyBinding* b = detail::find_key(key);
    b->set(cfg, value);  // not recorded as explicit
  };
  switch (cfg.variant) {
    case Variant::no_finetune:
      preset("decode.beam_size", "12");
      preset("decode.top_k", "12");
      break;
    case Variant::no_oversample:
      preset("decode.beam_size", "15");
      preset("decode.top_k", "15");
      break;
    case Variant::nucleus:
      preset("decode.mode", "both");
      break;
    case Variant::multi_output:
      preset("decode.split_multi", "true");
      break;
    default:
      break;
  }
}

}  // namespace polytrans
