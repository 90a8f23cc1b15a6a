#pragma once

// Word and character vocabularies with reserved padding/unknown ids, plus
// the line-oriented `entry<TAB>count` file format.

#include "mixlid/corpus.hpp"

#include <fstream>
#include <map>
#include <string>
#include <unordered_map>
#include <vector>

namespace mixlid {

constexpr std::size_t kPadId = 0;
constexpr std::size_t kUnkId = 1;

// Splits a UTF-8 string into codepoint-sized chunks. Invalid bytes are
// kept as single-byte chunks rather than rejected.
inline std::vector<std::string> utf8_chars(const std::string& s) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < s.size()) {
    const unsigned char c = static_cast<unsigned char>(s[i]);
    std::size_t len = 1;
    if ((c & 0xE0) == 0xC0) len = 2;
    else if ((c & 0xF0) == 0xE0) len = 3;
    else if ((c & 0xF8) == 0xF0) len = 4;
    if (i + len > s.size()) len = 1;
    out.push_back(s.substr(i, len));
    i += len;
  }
  return out;
}

namespace detail {

// Shared storage for both vocab kinds: dense ids, 0 = padding, 1 = unknown.
struct StringVocab {
  std::unordered_map<std::string, std::size_t> to_id;
  std::vector<std::string> entries;  // entries[id-2] for id >= 2
  std::vector<std::uint64_t> counts;

  std::size_t size() const { return entries.size() + 2; }

  std::size_t encode(const std::string& s) const {
    auto it = to_id.find(s);
    return it == to_id.end() ? kUnkId : it->second;
  }

  void add(const std::string& s, std::uint64_t count) {
    to_id.emplace(s, entries.size() + 2);
    entries.push_back(s);
    counts.push_back(count);
  }
};

inline void save_vocab(const StringVocab& v, std::ostream& out, const std::string& magic) {
  out << magic << " " << v.size() << "\n";
  for (std::size_t i = 0; i < v.entries.size(); ++i)
    out << v.entries[i] << "\t" << v.counts[i] << "\n";
}

inline StringVocab load_vocab(std::istream& in, const std::string& magic, const std::string& name) {
  std::string line;
  if (!std::getline(in, line) || line.rfind(magic + " ", 0) != 0)
    throw CorpusError(name + ": bad header, expected `" + magic + " <size>`");
  const std::size_t declared = std::stoul(line.substr(magic.size() + 1));
  StringVocab v;
  while (v.size() < declared && std::getline(in, line)) {
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos) throw CorpusError(name + ": malformed vocab line \"" + line + "\"");
    v.add(line.substr(0, tab), std::stoull(line.substr(tab + 1)));
  }
  if (v.size() != declared)
    throw CorpusError(name + ": truncated vocab, expected " + std::to_string(declared) +
                      " entries, got " + std::to_string(v.size()));
  return v;
}

}  // namespace detail

struct WordVocab {
  detail::StringVocab v;
  std::uint64_t min_frequency = 1;

  std::size_t size() const { return v.size(); }
  std::size_t encode(const std::string& word) const { return v.encode(word); }
};

struct CharVocab {
  detail::StringVocab v;

  std::size_t size() const { return v.size(); }
  std::size_t encode(const std::string& ch) const { return v.encode(ch); }

  std::vector<std::size_t> encode_word(const std::string& word) const {
    std::vector<std::size_t> out;
    for (const auto& ch : utf8_chars(word)) out.push_back(encode(ch));
    return out;
  }
};

// Words occurring fewer than min_frequency times map to unknown at
// encode time. Insertion order: first occurrence in the corpus, so the
// mapping is deterministic.
inline WordVocab build_word_vocab(const std::vector<LabeledSentence>& corpus,
                                  std::uint64_t min_frequency) {
  if (corpus.empty()) throw CorpusError("build_word_vocab: empty corpus");
  std::unordered_map<std::string, std::uint64_t> counts;
  std::vector<std::string> order;
  for (const auto& s : corpus)
    for (const auto& w : s.tokens) {
      auto [it, fresh] = counts.emplace(w, 0);
      if (fresh) order.push_back(w);
      ++it->second;
    }
  WordVocab vocab;
  vocab.min_frequency = min_frequency;
  for (const auto& w : order)
    if (counts[w] >= min_frequency) vocab.v.add(w, counts[w]);
  return vocab;
}

inline CharVocab build_char_vocab(const std::vector<LabeledSentence>& corpus) {
  if (corpus.empty()) throw CorpusError("build_char_vocab: empty corpus");
  std::unordered_map<std::string, std::uint64_t> counts;
  std::vector<std::string> order;
  for (const auto& s : corpus)
    for (const auto& w : s.tokens)
      for (const auto& ch : utf8_chars(w)) {
        auto [it, fresh] = counts.emplace(ch, 0);
        if (fresh) order.push_back(ch);
        ++it->second;
      }
  CharVocab vocab;
  for (const auto& ch : order) vocab.v.add(ch, counts[ch]);
  return vocab;
}

inline void save_word_vocab(const WordVocab& v, std::ostream& out) {
  detail::save_vocab(v.v, out, "wordvocab-v1");
}
inline WordVocab load_word_vocab(std::istream& in, const std::string& name = "wordvocab") {
  WordVocab v;
  v.v = detail::load_vocab(in, "wordvocab-v1", name);
  return v;
}
inline void save_char_vocab(const CharVocab& v, std::ostream& out) {
  detail::save_vocab(v.v, out, "charvocab-v1");
}
inline CharVocab load_char_vocab(std::istream& in, const std::string& name = "charvocab") {
  CharVocab v;
  v.v = detail::load_vocab(in, "charvocab-v1", name);
  return v;
}

}  // namespace mixlid
