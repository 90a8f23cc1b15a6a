#pragma once

// Dataset ingestion and generation: token-per-line corpus files,
// label normalization, train/validation splitting, and a synthetic
// two-language corpus for desk-scale tests.

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace mixlid {

class CorpusError : public std::runtime_error {
 public:
  explicit CorpusError(const std::string& msg) : std::runtime_error(msg) {}
};

enum class LanguageLabel { kEn, kHi, kDummy, kPad };

inline std::string label_str(LanguageLabel l) {
  switch (l) {
    case LanguageLabel::kEn: return "en";
    case LanguageLabel::kHi: return "hi";
    case LanguageLabel::kDummy: return "dummy";
    case LanguageLabel::kPad: return "pad";
  }
  return "?";
}

// What to do with a label outside {eng, en, hin, hi}.
enum class UnknownLabelPolicy { kError, kDropToken, kMapToEn, kMapToHi };

struct LabeledSentence {
  std::vector<std::string> tokens;
  std::vector<LanguageLabel> labels;  // En/Hi only
};

// Case-insensitive {eng,en} -> En, {hin,hi} -> Hi. Returns false when the
// label is unknown (the caller applies its policy).
inline bool try_normalize_label(const std::string& raw, LanguageLabel& out) {
  std::string s;
  s.reserve(raw.size());
  for (char c : raw) s.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
  if (s == "eng" || s == "en") {
    out = LanguageLabel::kEn;
    return true;
  }
  if (s == "hin" || s == "hi") {
    out = LanguageLabel::kHi;
    return true;
  }
  return false;
}

inline LanguageLabel normalize_label(const std::string& raw) {
  LanguageLabel l;
  if (!try_normalize_label(raw, l))
    throw CorpusError("unknown language label \"" + raw + "\"");
  return l;
}

/// Token-per-line format: `token<TAB>label`, blank line between sentences.
inline std::vector<LabeledSentence> parse_corpus_stream(
    std::istream& in, const std::string& name,
    UnknownLabelPolicy policy = UnknownLabelPolicy::kError) {
  std::vector<LabeledSentence> sentences;
  LabeledSentence current;
  std::string line;
  std::size_t lineno = 0;
  auto flush = [&]() {
    if (!current.tokens.empty()) sentences.push_back(std::move(current));
    current = {};
  };
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) {
      flush();
      continue;
    }
    const auto tab = line.find('\t');
    if (tab == std::string::npos || line.find('\t', tab + 1) != std::string::npos)
      throw CorpusError(name + ":" + std::to_string(lineno) +
                        ": expected `token<TAB>label`, got \"" + line + "\"");
    std::string token = line.substr(0, tab);
    std::string raw = line.substr(tab + 1);
    if (token.empty())
      throw CorpusError(name + ":" + std::to_string(lineno) + ": empty token");
    LanguageLabel label;
    if (!try_normalize_label(raw, label)) {
      switch (policy) {
        case UnknownLabelPolicy::kError:
          throw CorpusError(name + ":" + std::to_string(lineno) +
                            ": unknown language label \"" + raw + "\"");
        case UnknownLabelPolicy::kDropToken: continue;
        case UnknownLabelPolicy::kMapToEn: label = LanguageLabel::kEn; break;
        case UnknownLabelPolicy::kMapToHi: label = LanguageLabel::kHi; break;
      }
    }
    current.tokens.push_back(std::move(token));
    current.labels.push_back(label);
  }
  flush();
  if (sentences.empty()) throw CorpusError(name + ": no sentences");
  return sentences;
}

inline std::vector<LabeledSentence> parse_corpus_file(
    const std::string& path, UnknownLabelPolicy policy = UnknownLabelPolicy::kError) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CorpusError("cannot open corpus file " + path);
  return parse_corpus_stream(in, path, policy);
}

inline void write_corpus_stream(const std::vector<LabeledSentence>& sentences, std::ostream& out) {
  for (std::size_t s = 0; s < sentences.size(); ++s) {
    if (s) out << "\n";
    const auto& sent = sentences[s];
    for (std::size_t i = 0; i < sent.tokens.size(); ++i)
      out << sent.tokens[i] << "\t" << label_str(sent.labels[i]) << "\n";
  }
}

// Deterministic shuffle-split; val gets round(fraction * n) sentences.
inline std::pair<std::vector<LabeledSentence>, std::vector<LabeledSentence>> split_train_val(
    const std::vector<LabeledSentence>& sentences, double fraction, std::uint32_t seed) {
  if (sentences.size() < 2) throw CorpusError("split_train_val: need at least 2 sentences");
  if (!(fraction > 0.0 && fraction < 1.0))
    throw CorpusError("split_train_val: fraction must be in (0,1)");
  const std::size_t n = sentences.size();
  const std::size_t n_val = static_cast<std::size_t>(std::llround(fraction * n));
  if (n_val == 0 || n_val >= n)
    throw CorpusError("split_train_val: degenerate split (" + std::to_string(n_val) + " of " +
                      std::to_string(n) + ")");
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  std::mt19937 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<LabeledSentence> val, train;
  val.reserve(n_val);
  train.reserve(n - n_val);
  for (std::size_t i = 0; i < n; ++i)
    (i < n_val ? val : train).push_back(sentences[order[i]]);
  return {std::move(train), std::move(val)};
}

// ---------------------------------------------------------------------------
// Synthetic corpus

// Two artificial languages with overlapping alphabets: "En" draws from
// a..m (exclusive zone a..g), "Hi" from h..z (exclusive zone n..z); the
// shared zone h..m is rare in both, so tokens are near-separable by
// character statistics. 5% of tokens get an elongated letter, mimicking
// social-media noise like "gooood".
inline std::vector<LabeledSentence> generate_synthetic_corpus(std::size_t n_sentences,
                                                              std::uint32_t seed) {
  if (n_sentences == 0) throw CorpusError("generate_synthetic_corpus: need n >= 1");
  std::mt19937 rng(seed);
  std::uniform_int_distribution<int> sent_len(3, 15);
  std::uniform_int_distribution<int> word_len(2, 10);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  auto draw_char = [&](LanguageLabel lang, char prev) -> char {
    // Bigram bias: sometimes repeat the previous in-alphabet character.
    if (prev != 0 && unit(rng) < 0.25) return prev;
    if (lang == LanguageLabel::kEn) {
      // weights: a..g -> 8, h..m -> 1
      std::uniform_int_distribution<int> d(0, 7 * 8 + 6 - 1);
      const int r = d(rng);
      return r < 56 ? static_cast<char>('a' + r / 8) : static_cast<char>('h' + (r - 56));
    }
    // weights: n..z -> 8, h..m -> 1
    std::uniform_int_distribution<int> d(0, 13 * 8 + 6 - 1);
    const int r = d(rng);
    return r < 104 ? static_cast<char>('n' + r / 8) : static_cast<char>('h' + (r - 104));
  };

  std::vector<LabeledSentence> corpus;
  corpus.reserve(n_sentences);
  for (std::size_t s = 0; s < n_sentences; ++s) {
    const int len = sent_len(rng);
    LabeledSentence sent;
    // Language states flip at random code-switch points.
    LanguageLabel lang = unit(rng) < 0.5 ? LanguageLabel::kEn : LanguageLabel::kHi;
    for (int i = 0; i < len; ++i) {
      if (i > 0 && unit(rng) < 0.3)
        lang = lang == LanguageLabel::kEn ? LanguageLabel::kHi : LanguageLabel::kEn;
      sent.labels.push_back(lang);
    }
    if (len >= 6) {
      // Guarantee at least one token of each class.
      bool has_en = false, has_hi = false;
      for (auto l : sent.labels) (l == LanguageLabel::kEn ? has_en : has_hi) = true;
      if (!has_en || !has_hi) {
        std::uniform_int_distribution<int> pick(0, len - 1);
        sent.labels[static_cast<std::size_t>(pick(rng))] =
            has_en ? LanguageLabel::kHi : LanguageLabel::kEn;
      }
    }
    for (int i = 0; i < len; ++i) {
      const int wl = word_len(rng);
      std::string word;
      char prev = 0;
      for (int j = 0; j < wl; ++j) {
        prev = draw_char(sent.labels[static_cast<std::size_t>(i)], prev);
        word.push_back(prev);
      }
      if (unit(rng) < 0.05) {
        // Elongation: repeat one letter a few extra times.
        std::uniform_int_distribution<int> pos(0, wl - 1);
        std::uniform_int_distribution<int> reps(2, 4);
        const int at = pos(rng);
        word.insert(static_cast<std::size_t>(at),
                    std::string(static_cast<std::size_t>(reps(rng)), word[static_cast<std::size_t>(at)]));
      }
      sent.tokens.push_back(std::move(word));
    }
    corpus.push_back(std::move(sent));
  }
  return corpus;
}

}  // namespace mixlid
