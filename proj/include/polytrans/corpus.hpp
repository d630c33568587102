#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <functional>
#include <set>
#include <string>
#include <string_view>
#include <unordered_set>
#include <vector>

#include "polytrans/error.hpp"
#include "polytrans/rng.hpp"
#include "polytrans/text.hpp"

namespace polytrans {

// One reference translation together with the fraction of learners that
// produced it. The weight is the recall weight used by the scorer.
struct WeightedTranslation {
  std::string target_text;
  double weight = 0.0;
};

struct PromptRecord {
  std::string prompt_id;
  std::string source_text;
  std::vector<WeightedTranslation> translations;
};

struct Direction {
  std::string src_lang = "en";
  std::string tgt_lang = "hu";
};

struct ParallelCorpus {
  std::vector<PromptRecord> records;
  Direction direction;

  std::size_t pair_count() const {
    std::size_t n = 0;
    for (const auto& r : records) n += r.translations.size();
    return n;
  }
};

// One duplicated training instance produced by oversampling.
struct SampledPair {
  std::string prompt_id;
  std::string source_text;
  std::string target_text;
};

struct CorpusStats {
  std::size_t prompt_count = 0;
  std::size_t pair_count = 0;
  int max_source_len = 0;
  int max_target_len = 0;
  int p99_source_len = 0;
  int p99_target_len = 0;
};

namespace detail {

inline double parse_weight(std::string_view field, std::size_t line_no) {
  double w = 0.0;
  const char* b = field.data();
  const char* e = field.data() + field.size();
  auto res = std::from_chars(b, e, w);
  if (res.ec != std::errc() || res.ptr != e)
    throw Error("line " + std::to_string(line_no) + ": bad weight literal '" +
                std::string(field) + "'");
  if (!(w >= 0.0 && w <= 1.0))
    throw Error("line " + std::to_string(line_no) + ": weight " + std::string(field) +
                " outside [0,1]");
  return w;
}

// Splits a line on '|'. Texts may not contain '|' (reserved, no escaping),
// so the field count tells the line kind apart.
inline std::vector<std::string_view> split_fields(std::string_view line) {
  std::vector<std::string_view> fields;
  std::size_t start = 0;
  for (std::size_t i = 0; i <= line.size(); ++i) {
    if (i == line.size() || line[i] == '|') {
      fields.push_back(line.substr(start, i - start));
      start = i + 1;
    }
  }
  return fields;
}

}  // namespace detail

// Corpus file: blocks of `prompt_id|source_text` followed by one or more
// `target_text|weight` lines, blocks separated by exactly one blank line.
inline ParallelCorpus parse_corpus(const std::string& text, Direction direction = {}) {
  ParallelCorpus corpus;
  corpus.direction = direction;
  std::vector<std::string> lines = split_lines(text);
  std::unordered_set<std::string> seen_ids;

  std::size_t i = 0;
  while (i < lines.size()) {
    if (lines[i].empty()) {
      if (corpus.records.empty() || i + 1 == lines.size())
        throw Error("line " + std::to_string(i + 1) + ": unexpected blank line");
      // exactly one separating blank line
      ++i;
      if (i < lines.size() && lines[i].empty())
        throw Error("line " + std::to_string(i + 1) + ": consecutive blank lines");
      continue;
    }
    auto header = detail::split_fields(lines[i]);
    if (header.size() != 2)
      throw Error("line " + std::to_string(i + 1) +
                  ": expected 'prompt_id|source_text' header");
    PromptRecord rec;
    rec.prompt_id = std::string(header[0]);
    rec.source_text = std::string(header[1]);
    if (rec.prompt_id.empty())
      throw Error("line " + std::to_string(i + 1) + ": empty prompt_id");
    if (normalize_whitespace(rec.source_text).empty())
      throw Error("line " + std::to_string(i + 1) + ": empty source text");
    if (!seen_ids.insert(rec.prompt_id).second)
      throw Error("line " + std::to_string(i + 1) + ": duplicate prompt_id '" +
                  rec.prompt_id + "'");
    ++i;

    std::unordered_set<std::string> seen_targets;
    while (i < lines.size() && !lines[i].empty()) {
      auto fields = detail::split_fields(lines[i]);
      if (fields.size() != 2)
        throw Error("line " + std::to_string(i + 1) +
                    ": expected 'target_text|weight' (no '|' allowed in texts)");
      WeightedTranslation t;
      t.target_text = std::string(fields[0]);
      t.weight = detail::parse_weight(fields[1], i + 1);
      if (normalize_whitespace(t.target_text).empty())
        throw Error("line " + std::to_string(i + 1) + ": empty target text");
      if (!seen_targets.insert(normalize_whitespace(t.target_text)).second)
        throw Error("line " + std::to_string(i + 1) + ": duplicate translation in prompt '" +
                    rec.prompt_id + "'");
      rec.translations.push_back(std::move(t));
      ++i;
    }
    if (rec.translations.empty())
      throw Error("prompt '" + rec.prompt_id + "' has no translations");
    corpus.records.push_back(std::move(rec));
  }
  return corpus;
}

inline std::string serialize_corpus(const ParallelCorpus& corpus) {
  std::string out;
  for (std::size_t r = 0; r < corpus.records.size(); ++r) {
    if (r) out.push_back('\n');
    const auto& rec = corpus.records[r];
    out += rec.prompt_id;
    out.push_back('|');
    out += rec.source_text;
    out.push_back('\n');
    for (const auto& t : rec.translations) {
      out += t.target_text;
      out.push_back('|');
      out += detail::format_real(t.weight);
      out.push_back('\n');
    }
  }
  return out;
}

// --- prediction files (scorer input / decoder output) ---------------------

struct PredictionCandidate {
  std::string text;
  bool has_scores = false;
  double total_logprob = 0.0;
  std::vector<double> token_logprobs;
};

struct PredictionRecord {
  std::string prompt_id;
  std::string source_text;
  std::vector<PredictionCandidate> candidates;
};

using PredictionSet = std::vector<PredictionRecord>;

namespace detail {

inline double parse_real(std::string_view field, std::size_t line_no, const char* what) {
  double v = 0.0;
  auto res = std::from_chars(field.data(), field.data() + field.size(), v);
  if (res.ec != std::errc() || res.ptr != field.data() + field.size())
    throw Error("line " + std::to_string(line_no) + ": bad " + std::string(what) + " '" +
                std::string(field) + "'");
  return v;
}

}  // namespace detail

// Prediction file: `prompt_id|source_text` header, then one candidate per
// line. Bare lines carry just the text; decoder output with --emit-scores
// appends `|total_logprob|comma-joined token_logprobs`. A header with no
// candidate lines is a valid (empty) prediction.
inline PredictionSet parse_predictions(const std::string& text) {
  PredictionSet set;
  std::vector<std::string> lines = split_lines(text);
  std::unordered_set<std::string> seen_ids;

  std::size_t i = 0;
  while (i < lines.size()) {
    if (lines[i].empty()) {
      if (set.empty() || i + 1 == lines.size())
        throw Error("line " + std::to_string(i + 1) + ": unexpected blank line");
      ++i;
      if (i < lines.size() && lines[i].empty())
        throw Error("line " + std::to_string(i + 1) + ": consecutive blank lines");
      continue;
    }
    auto header = detail::split_fields(lines[i]);
    if (header.size() != 2)
      throw Error("line " + std::to_string(i + 1) +
                  ": expected 'prompt_id|source_text' header");
    PredictionRecord rec;
    rec.prompt_id = std::string(header[0]);
    rec.source_text = std::string(header[1]);
    if (rec.prompt_id.empty())
      throw Error("line " + std::to_string(i + 1) + ": empty prompt_id");
    if (!seen_ids.insert(rec.prompt_id).second)
      throw Error("line " + std::to_string(i + 1) + ": duplicate prompt_id '" +
                  rec.prompt_id + "'");
    ++i;

    while (i < lines.size() && !lines[i].empty()) {
      auto fields = detail::split_fields(lines[i]);
      PredictionCandidate cand;
      if (fields.size() == 1) {
        cand.text = std::string(fields[0]);
      } else if (fields.size() == 3) {
        cand.text = std::string(fields[0]);
        cand.has_scores = true;
        cand.total_logprob = detail::parse_real(fields[1], i + 1, "total_logprob");
        std::string_view scores = fields[2];
        std::size_t start = 0;
        for (std::size_t k = 0; k <= scores.size(); ++k) {
          if (k == scores.size() || scores[k] == ',') {
            std::string_view item = scores.substr(start, k - start);
            if (!item.empty())
              cand.token_logprobs.push_back(detail::parse_real(item, i + 1, "token score"));
            start = k + 1;
          }
        }
      } else {
        throw Error("line " + std::to_string(i + 1) + ": malformed candidate line");
      }
      rec.candidates.push_back(std::move(cand));
      ++i;
    }
    set.push_back(std::move(rec));
  }
  return set;
}

inline std::string serialize_predictions(const PredictionSet& set, bool emit_scores) {
  std::string out;
  for (std::size_t r = 0; r < set.size(); ++r) {
    if (r) out.push_back('\n');
    const auto& rec = set[r];
    out += rec.prompt_id;
    out.push_back('|');
    out += rec.source_text;
    out.push_back('\n');
    for (const auto& c : rec.candidates) {
      out += c.text;
      if (emit_scores && c.has_scores) {
        out.push_back('|');
        out += detail::format_real(c.total_logprob);
        out.push_back('|');
        for (std::size_t k = 0; k < c.token_logprobs.size(); ++k) {
          if (k) out.push_back(',');
          out += detail::format_real(c.token_logprobs[k]);
        }
      }
      out.push_back('\n');
    }
  }
  return out;
}

// --- sampled-pair files (training input) -----------------------------------

inline std::string serialize_pairs(const std::vector<SampledPair>& pairs) {
  std::string out;
  for (const auto& p : pairs) {
    out += p.prompt_id;
    out.push_back('|');
    out += p.source_text;
    out.push_back('|');
    out += p.target_text;
    out.push_back('\n');
  }
  return out;
}

inline std::vector<SampledPair> parse_pairs(const std::string& text) {
  std::vector<SampledPair> pairs;
  std::vector<std::string> lines = split_lines(text);
  for (std::size_t i = 0; i < lines.size(); ++i) {
    if (lines[i].empty()) continue;
    auto fields = detail::split_fields(lines[i]);
    if (fields.size() != 3)
      throw Error("line " + std::to_string(i + 1) +
                  ": expected 'prompt_id|source_text|target_text'");
    pairs.push_back({std::string(fields[0]), std::string(fields[1]), std::string(fields[2])});
  }
  return pairs;
}

// --- operations -------------------------------------------------------------

// Emits each (prompt, translation) exactly floor(weight * factor) times, in
// corpus order with duplicates adjacent. Pairs with weight < 1/factor drop out.
inline std::vector<SampledPair> oversample(const ParallelCorpus& corpus, double factor = 50.0) {
  if (!(factor > 0.0)) throw Error("oversample: factor must be > 0");
  std::vector<SampledPair> out;
  for (const auto& rec : corpus.records) {
    for (const auto& t : rec.translations) {
      auto copies = static_cast<std::size_t>(std::floor(t.weight * factor));
      for (std::size_t c = 0; c < copies; ++c)
        out.push_back({rec.prompt_id, rec.source_text, t.target_text});
    }
  }
  return out;
}

// Splits at prompt granularity; round(fraction * total) prompts go to the
// validation side. Record order is preserved on both sides.
inline std::pair<ParallelCorpus, ParallelCorpus> split_by_prompt(const ParallelCorpus& corpus,
                                                                 double validation_fraction,
                                                                 std::uint64_t seed) {
  if (!(validation_fraction > 0.0 && validation_fraction < 1.0))
    throw Error("split_by_prompt: fraction must be in (0,1)");
  const std::size_t n = corpus.records.size();
  if (n < 2) throw Error("split_by_prompt: corpus has fewer than 2 prompts");

  auto n_val = static_cast<std::size_t>(std::llround(validation_fraction * static_cast<double>(n)));
  if (n_val < 1) n_val = 1;
  if (n_val > n - 1) n_val = n - 1;

  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  Rng rng(mix_seed(seed, 0x5117));
  rng.shuffle(idx);

  std::vector<bool> is_val(n, false);
  for (std::size_t i = 0; i < n_val; ++i) is_val[idx[i]] = true;

  ParallelCorpus train, val;
  train.direction = val.direction = corpus.direction;
  for (std::size_t i = 0; i < n; ++i)
    (is_val[i] ? val : train).records.push_back(corpus.records[i]);
  return {std::move(train), std::move(val)};
}

// Swaps source and target on every pair. Each reversed pair becomes its own
// prompt record with id "<orig_id>#rev<k>" (k = translation index), so ids
// stay unique even when targets repeat across the original corpus.
inline ParallelCorpus reverse_pairs(const ParallelCorpus& corpus) {
  ParallelCorpus out;
  out.direction = {corpus.direction.tgt_lang, corpus.direction.src_lang};
  for (const auto& rec : corpus.records) {
    for (std::size_t k = 0; k < rec.translations.size(); ++k) {
      PromptRecord r;
      r.prompt_id = rec.prompt_id + "#rev" + std::to_string(k);
      r.source_text = rec.translations[k].target_text;
      r.translations.push_back({rec.source_text, rec.translations[k].weight});
      out.records.push_back(std::move(r));
    }
  }
  return out;
}

namespace detail {

// Smallest length L such that at least 99% of lengths are <= L.
inline int p99(std::vector<int>& lengths) {
  std::sort(lengths.begin(), lengths.end());
  const std::size_t n = lengths.size();
  std::size_t k = (99 * n + 99) / 100;  // ceil(0.99 n) in exact integer arithmetic
  if (k < 1) k = 1;
  return lengths[k - 1];
}

}  // namespace detail

// Token-length statistics. Source lengths are counted once per prompt,
// target lengths once per translation.
inline CorpusStats corpus_stats(const ParallelCorpus& corpus,
                                const std::function<std::vector<int>(const std::string&)>& encode) {
  if (corpus.records.empty()) throw Error("corpus_stats: empty corpus");
  CorpusStats st;
  st.prompt_count = corpus.records.size();
  st.pair_count = corpus.pair_count();
  std::vector<int> src_lens, tgt_lens;
  for (const auto& rec : corpus.records) {
    int len = static_cast<int>(encode(rec.source_text).size());
    src_lens.push_back(len);
    st.max_source_len = std::max(st.max_source_len, len);
    for (const auto& t : rec.translations) {
      int tl = static_cast<int>(encode(t.target_text).size());
      tgt_lens.push_back(tl);
      st.max_target_len = std::max(st.max_target_len, tl);
    }
  }
  st.p99_source_len = detail::p99(src_lens);
  st.p99_target_len = detail::p99(tgt_lens);
  return st;
}

namespace detail {

inline const std::vector<std::string>& fixture_source_words() {
  static const std::vector<std::string> words = {
      "sun", "moon", "star", "tree", "river", "stone",
      "bird", "fish", "cloud", "rain", "wind", "snow"};
  return words;
}

// Primary toy translation: the word reversed. Alternate form: reversed + "ka".
inline std::string fixture_map_word(const std::string& w, bool alternate) {
  std::string out(w.rbegin(), w.rend());
  if (alternate) out += "ka";
  return out;
}

}  // namespace detail

// Deterministic toy corpus with a learnable word-substitution mapping.
// Paraphrase variant j uses the alternate target form at word position i
// whenever bit i of j is set, so variants of one prompt are distinct. The
// variant weights are Dirichlet(1) draws sorted descending, summing to 1.
inline ParallelCorpus synth_fixture(std::uint64_t seed, int n_prompts, int max_refs) {
  if (n_prompts < 1) throw Error("synth_fixture: n_prompts must be >= 1");
  if (max_refs < 1) throw Error("synth_fixture: max_refs must be >= 1");
  const auto& vocab = detail::fixture_source_words();
  ParallelCorpus corpus;
  std::unordered_set<std::string> seen_sources;

  for (int p = 0; p < n_prompts; ++p) {
    Rng rng(mix_seed(seed, 0x1000 + static_cast<std::uint64_t>(p)));
    PromptRecord rec;
    char idbuf[32];
    std::snprintf(idbuf, sizeof(idbuf), "p%04d", p);
    rec.prompt_id = idbuf;

    std::vector<std::string> words;
    int len = 0;
    // resample until the source sentence is unique
    for (int attempt = 0;; ++attempt) {
      len = rng.uniform_int(2, 5);
      words.clear();
      for (int i = 0; i < len; ++i)
        words.push_back(vocab[rng.next_below(vocab.size())]);
      std::string src = join(words, " ");
      if (seen_sources.insert(src).second || attempt > 64) {
        rec.source_text = src;
        break;
      }
    }

    int max_variants = len >= 30 ? max_refs : std::min<int>(max_refs, 1 << len);
    int n_refs = 1 + static_cast<int>(rng.next_below(static_cast<std::uint64_t>(max_variants)));
    for (int j = 0; j < n_refs; ++j) {
      std::vector<std::string> tgt_words;
      for (int i = 0; i < len; ++i)
        tgt_words.push_back(detail::fixture_map_word(words[static_cast<std::size_t>(i)],
                                                     (j >> i) & 1));
      rec.translations.push_back({join(tgt_words, " "), 0.0});
    }

    // Dirichlet(1,...,1) via normalized exponentials, sorted descending so the
    // base variant carries the most weight.
    std::vector<double> w(static_cast<std::size_t>(n_refs));
    double sum = 0.0;
    for (auto& x : w) {
      x = -std::log(1.0 - rng.next_double());
      sum += x;
    }
    for (auto& x : w) x /= sum;
    std::sort(w.begin(), w.end(), std::greater<>());
    for (int j = 0; j < n_refs; ++j)
      rec.translations[static_cast<std::size_t>(j)].weight = w[static_cast<std::size_t>(j)];

    corpus.records.push_back(std::move(rec));
  }
  return corpus;
}

}  // namespace polytrans
