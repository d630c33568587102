#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "polytrans/error.hpp"
#include "polytrans/text.hpp"

namespace polytrans {

// Reserved token ids. Every vocabulary starts with these five surfaces.
struct Specials {
  static constexpr int pad = 0;
  static constexpr int bos = 1;
  static constexpr int eos = 2;
  static constexpr int unk = 3;
  static constexpr int sep = 4;
  static constexpr int count = 5;

  static const std::vector<std::string>& surfaces() {
    static const std::vector<std::string> s = {"<pad>", "<s>", "</s>", "<unk>", "<sep>"};
    return s;
  }
};

// Byte-pair vocabulary over whitespace-separated words. Words are split into
// UTF-8 codepoint symbols with "</w>" appended to the final symbol, then the
// learned merges are replayed greedily (lowest merge rank first).
class BpeVocab {
 public:
  static constexpr const char* kEndOfWord = "</w>";

  // Learns merges from raw text until the vocabulary reaches target_size
  // (specials + alphabet + merges) or no pair occurs twice. Pair selection is
  // highest frequency, ties broken by lexicographically smallest (left, right).
  static BpeVocab train(const std::vector<std::string>& texts, int target_size) {
    if (target_size < Specials::count) throw Error("bpe train: target size too small");
    BpeVocab v;

    std::map<std::vector<std::string>, std::int64_t> word_freq;
    std::map<std::string, std::int64_t> alphabet;
    for (const auto& text : texts) {
      for (const auto& w : split_words(text)) {
        auto syms = word_symbols(w);
        for (const auto& s : syms) alphabet[s] += 1;
        word_freq[std::move(syms)] += 1;
      }
    }
    if (word_freq.empty()) throw Error("bpe train: no words in input");

    for (const auto& [sym, cnt] : alphabet) v.alphabet_.push_back(sym);
    // std::map iterates in lex order already; keep explicit for clarity
    std::sort(v.alphabet_.begin(), v.alphabet_.end());

    auto room = target_size - Specials::count - static_cast<int>(v.alphabet_.size());
    for (int m = 0; m < room; ++m) {
      std::map<std::pair<std::string, std::string>, std::int64_t> pair_freq;
      for (const auto& [syms, cnt] : word_freq)
        for (std::size_t i = 0; i + 1 < syms.size(); ++i)
          pair_freq[{syms[i], syms[i + 1]}] += cnt;

      std::pair<std::string, std::string> best;
      std::int64_t best_cnt = 0;
      for (const auto& [pr, cnt] : pair_freq) {
        if (cnt > best_cnt) {  // map order makes the first max the lex-smallest
          best_cnt = cnt;
          best = pr;
        }
      }
      if (best_cnt < 2) break;

      v.merges_.push_back(best);
      std::map<std::vector<std::string>, std::int64_t> next;
      for (const auto& [syms, cnt] : word_freq)
        next[apply_merge(syms, best)] += cnt;
      word_freq = std::move(next);
    }

    v.build_index();
    return v;
  }

  // Token id space: specials, then alphabet symbols in lex order, then one
  // merged symbol per merge in learned order.
  int vocab_size() const { return Specials::count + static_cast<int>(id_to_surface_.size()); }

  const std::string& surface(int id) const {
    if (id < 0 || id >= vocab_size()) throw Error("bpe: token id out of range");
    if (id < Specials::count) return Specials::surfaces()[static_cast<std::size_t>(id)];
    return id_to_surface_[static_cast<std::size_t>(id - Specials::count)];
  }

  // Encodes text to token ids, no bos/eos framing. Words that spell a special
  // surface map to that special's id; unknown symbols become <unk>.
  std::vector<int> encode(const std::string& text) const {
    std::vector<int> ids;
    for (const auto& w : split_words(text)) {
      if (auto sp = special_id(w)) {
        ids.push_back(*sp);
        continue;
      }
      auto syms = word_symbols(w);
      // Replay merges: repeatedly contract the pair with the lowest rank.
      while (syms.size() > 1) {
        int best_rank = -1;
        std::size_t best_i = 0;
        for (std::size_t i = 0; i + 1 < syms.size(); ++i) {
          auto it = merge_rank_.find(syms[i] + "\x01" + syms[i + 1]);
          if (it != merge_rank_.end() && (best_rank < 0 || it->second < best_rank)) {
            best_rank = it->second;
            best_i = i;
          }
        }
        if (best_rank < 0) break;
        syms[best_i] += syms[best_i + 1];
        syms.erase(syms.begin() + static_cast<std::ptrdiff_t>(best_i) + 1);
      }
      for (const auto& s : syms) {
        auto it = surface_to_id_.find(s);
        ids.push_back(it == surface_to_id_.end() ? Specials::unk : it->second);
      }
    }
    return ids;
  }

  // Decodes ids back to text. Specials are dropped, except that keep_sep
  // renders <sep> as a standalone word so multi-output text can be split.
  std::string decode(const std::vector<int>& ids, bool keep_sep = false) const {
    std::string out;
    std::string word;
    auto flush = [&](const std::string& w) {
      if (w.empty()) return;
      if (!out.empty()) out.push_back(' ');
      out += w;
    };
    for (int id : ids) {
      if (id < Specials::count) {
        if (id == Specials::sep && keep_sep) {
          flush(word);
          word.clear();
          flush(Specials::surfaces()[Specials::sep]);
        }
        continue;
      }
      const std::string& s = surface(id);
      if (s.size() >= 4 && s.compare(s.size() - 4, 4, kEndOfWord) == 0) {
        word += s.substr(0, s.size() - 4);
        flush(word);
        word.clear();
      } else {
        word += s;
      }
    }
    flush(word);  // trailing piece without an end-of-word marker
    return out;
  }

  // --- persistence (plain text) ---------------------------------------------

  std::string save() const {
    std::string out = "bpe-vocab v1\n";
    out += "alphabet " + std::to_string(alphabet_.size()) + "\n";
    for (const auto& s : alphabet_) out += s + "\n";
    out += "merges " + std::to_string(merges_.size()) + "\n";
    for (const auto& [a, b] : merges_) out += a + " " + b + "\n";
    return out;
  }

  static BpeVocab load(const std::string& text) {
    auto lines = split_lines(text);
    std::size_t i = 0;
    auto next_line = [&]() -> const std::string& {
      if (i >= lines.size()) throw Error("bpe load: truncated file");
      return lines[i++];
    };
    if (next_line() != "bpe-vocab v1") throw Error("bpe load: bad magic line");

    BpeVocab v;
    auto parse_count = [](const std::string& line, const char* tag) -> std::size_t {
      std::string prefix = std::string(tag) + " ";
      if (line.rfind(prefix, 0) != 0) throw Error(std::string("bpe load: expected '") + tag + "' header");
      return static_cast<std::size_t>(std::stoull(line.substr(prefix.size())));
    };
    std::size_t n_alpha = parse_count(next_line(), "alphabet");
    for (std::size_t k = 0; k < n_alpha; ++k) v.alphabet_.push_back(next_line());
    std::size_t n_merges = parse_count(next_line(), "merges");
    for (std::size_t k = 0; k < n_merges; ++k) {
      const std::string& line = next_line();
      auto sp = line.find(' ');
      if (sp == std::string::npos) throw Error("bpe load: malformed merge line");
      v.merges_.emplace_back(line.substr(0, sp), line.substr(sp + 1));
    }
    v.build_index();
    return v;
  }

  const std::vector<std::string>& alphabet() const { return alphabet_; }
  const std::vector<std::pair<std::string, std::string>>& merges() const { return merges_; }

 private:
  static std::vector<std::string> word_symbols(const std::string& word) {
    std::vector<std::string> syms = utf8_codepoints(word);
    syms.back() += kEndOfWord;
    return syms;
  }

  static std::vector<std::string> apply_merge(const std::vector<std::string>& syms,
                                              const std::pair<std::string, std::string>& m) {
    std::vector<std::string> out;
    std::size_t i = 0;
    while (i < syms.size()) {
      if (i + 1 < syms.size() && syms[i] == m.first && syms[i + 1] == m.second) {
        out.push_back(syms[i] + syms[i + 1]);
        i += 2;
      } else {
        out.push_back(syms[i]);
        ++i;
      }
    }
    return out;
  }

  static std::optional<int> special_id(const std::string& word) {
    const auto& surf = Specials::surfaces();
    for (int k = 0; k < Specials::count; ++k)
      if (word == surf[static_cast<std::size_t>(k)]) return k;
    return std::nullopt;
  }

  void build_index() {
    id_to_surface_.clear();
    surface_to_id_.clear();
    merge_rank_.clear();
    for (const auto& s : alphabet_) id_to_surface_.push_back(s);
    for (const auto& [a, b] : merges_) id_to_surface_.push_back(a + b);
    for (std::size_t k = 0; k < id_to_surface_.size(); ++k) {
      // first definition wins if a merge result collides with an alphabet symbol
      surface_to_id_.emplace(id_to_surface_[k], Specials::count + static_cast<int>(k));
    }
    for (std::size_t k = 0; k < merges_.size(); ++k)
      merge_rank_[merges_[k].first + "\x01" + merges_[k].second] = static_cast<int>(k);
  }

  std::vector<std::string> alphabet_;
  std::vector<std::pair<std::string, std::string>> merges_;
  std::vector<std::string> id_to_surface_;
  std::unordered_map<std::string, int> surface_to_id_;
  std::unordered_map<std::string, int> merge_rank_;
};

// Frames token ids for the decoder side: bos + ids + eos.
inline std::vector<int> with_frame(const std::vector<int>& ids) {
  std::vector<int> out;
  out.reserve(ids.size() + 2);
  out.push_back(Specials::bos);
  out.insert(out.end(), ids.begin(), ids.end());
  out.push_back(Specials::eos);
  return out;
}

}  // namespace polytrans
