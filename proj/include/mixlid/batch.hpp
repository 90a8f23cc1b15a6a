#pragma once

// Epoch shuffling, per-batch dynamic padding, and label/mask assembly
// for the three input representations.

#include "mixlid/corpus.hpp"
#include "mixlid/unigram.hpp"
#include "mixlid/vocab.hpp"

#include <algorithm>
#include <random>
#include <unordered_map>

namespace mixlid {

enum class ReprKind { kWord, kCharWord, kSubword };

inline std::string repr_str(ReprKind k) {
  switch (k) {
    case ReprKind::kWord: return "word";
    case ReprKind::kCharWord: return "char+word";
    case ReprKind::kSubword: return "subword";
  }
  return "?";
}

inline ReprKind parse_repr(const std::string& s) {
  if (s == "word") return ReprKind::kWord;
  if (s == "char+word" || s == "charword") return ReprKind::kCharWord;
  if (s == "subword") return ReprKind::kSubword;
  throw CorpusError("unknown representation \"" + s + "\"");
}

// Memoizes Viterbi segmentations across epochs.
struct SegmentCache {
  const SubwordModel* model = nullptr;
  std::unordered_map<std::string, Segmentation> cache;

  const Segmentation& segment(const std::string& word) {
    auto it = cache.find(word);
    if (it != cache.end()) return it->second;
    return cache.emplace(word, segment_viterbi(word, *model)).first->second;
  }
};

// Class indices used by model heads: En=0, Hi=1, Dummy=2.
inline std::size_t label_class_index(LanguageLabel l) {
  switch (l) {
    case LanguageLabel::kEn: return 0;
    case LanguageLabel::kHi: return 1;
    case LanguageLabel::kDummy: return 2;
    case LanguageLabel::kPad: return 0;  // masked anyway
  }
  return 0;
}

struct Encoders {
  const WordVocab* words = nullptr;
  const CharVocab* chars = nullptr;
  SegmentCache* subword = nullptr;
};

// All matrices are row-major (sentence, time); time is tokens for
// word/char+word and pieces for subword. loss_mask is false exactly at
// Pad positions.
struct Batch {
  ReprKind kind = ReprKind::kWord;
  std::size_t size = 0;      // B
  std::size_t time = 0;      // T
  std::size_t word_len = 0;  // L, char+word only
  std::vector<std::size_t> lengths;        // live prefix per sentence
  std::vector<std::size_t> token_ids;      // B*T word or piece ids
  std::vector<std::size_t> char_ids;       // B*T*L, char+word only
  std::vector<LanguageLabel> labels;       // B*T
  std::vector<std::size_t> label_class;    // B*T
  std::vector<int> label_binary;           // B*T, 1 = En
  std::vector<bool> loss_mask;             // B*T
  std::vector<bool> first_subword;         // B*T, subword only
};

namespace detail {

inline Batch make_one_batch(const std::vector<const LabeledSentence*>& group, Encoders enc,
                            ReprKind kind) {
  Batch batch;
  batch.kind = kind;
  batch.size = group.size();

  // Per-sentence position sequences: (id, label, first-subword flag).
  struct Pos {
    std::size_t id;
    LanguageLabel label;
    bool first;
    const std::string* word;  // char+word: surface for char encoding
  };
  std::vector<std::vector<Pos>> seqs(group.size());
  for (std::size_t s = 0; s < group.size(); ++s) {
    const LabeledSentence& sent = *group[s];
    if (kind == ReprKind::kSubword) {
      if (!enc.subword) throw CorpusError("make_batches: subword encoder missing");
      std::vector<Segmentation> segs;
      for (const auto& w : sent.tokens) segs.push_back(enc.subword->segment(w));
      AlignedPieces aligned = align_subword_labels(sent.tokens, sent.labels, segs);
      for (std::size_t i = 0; i < aligned.piece_ids.size(); ++i)
        seqs[s].push_back({aligned.piece_ids[i], aligned.labels[i], aligned.first_subword[i],
                           nullptr});
    } else {
      if (!enc.words) throw CorpusError("make_batches: word encoder missing");
      for (std::size_t i = 0; i < sent.tokens.size(); ++i)
        seqs[s].push_back({enc.words->encode(sent.tokens[i]), sent.labels[i], true,
                           &sent.tokens[i]});
    }
    batch.lengths.push_back(seqs[s].size());
    batch.time = std::max(batch.time, seqs[s].size());
  }

  const std::size_t B = batch.size, T = batch.time;
  batch.token_ids.assign(B * T, kPadId);
  batch.labels.assign(B * T, LanguageLabel::kPad);
  batch.label_class.assign(B * T, 0);
  batch.label_binary.assign(B * T, 0);
  batch.loss_mask.assign(B * T, false);
  batch.first_subword.assign(B * T, false);
  for (std::size_t s = 0; s < B; ++s)
    for (std::size_t t = 0; t < seqs[s].size(); ++t) {
      const Pos& p = seqs[s][t];
      batch.token_ids[s * T + t] = p.id;
      batch.labels[s * T + t] = p.label;
      batch.label_class[s * T + t] = label_class_index(p.label);
      batch.label_binary[s * T + t] = p.label == LanguageLabel::kEn ? 1 : 0;
      batch.loss_mask[s * T + t] = true;
      batch.first_subword[s * T + t] = p.first;
    }

  if (kind == ReprKind::kCharWord) {
    if (!enc.chars) throw CorpusError("make_batches: char encoder missing");
    std::vector<std::vector<std::size_t>> word_chars(B * T);
    for (std::size_t s = 0; s < B; ++s)
      for (std::size_t t = 0; t < seqs[s].size(); ++t) {
        word_chars[s * T + t] = enc.chars->encode_word(*seqs[s][t].word);
        batch.word_len = std::max(batch.word_len, word_chars[s * T + t].size());
      }
    batch.char_ids.assign(B * T * batch.word_len, kPadId);
    for (std::size_t i = 0; i < B * T; ++i)
      for (std::size_t j = 0; j < word_chars[i].size(); ++j)
        batch.char_ids[i * batch.word_len + j] = word_chars[i][j];
  }
  return batch;
}

}  // namespace detail

// Shuffles sentences under the seed, then groups into padded batches.
inline std::vector<Batch> make_batches(const std::vector<LabeledSentence>& sentences,
                                       Encoders enc, ReprKind kind, std::size_t batch_size,
                                       std::uint32_t seed) {
  if (sentences.empty()) throw CorpusError("make_batches: empty input");
  if (batch_size == 0) throw CorpusError("make_batches: batch_size must be >= 1");
  std::vector<const LabeledSentence*> order;
  order.reserve(sentences.size());
  for (const auto& s : sentences) order.push_back(&s);
  std::mt19937 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);

  std::vector<Batch> batches;
  for (std::size_t i = 0; i < order.size(); i += batch_size) {
    std::vector<const LabeledSentence*> group(
        order.begin() + static_cast<std::ptrdiff_t>(i),
        order.begin() + static_cast<std::ptrdiff_t>(std::min(i + batch_size, order.size())));
    batches.push_back(detail::make_one_batch(group, enc, kind));
  }
  return batches;
}

// Unshuffled single-sentence batch, used by predict().
inline Batch encode_sentence(const LabeledSentence& sentence, Encoders enc, ReprKind kind) {
  return detail::make_one_batch({&sentence}, enc, kind);
}

}  // namespace mixlid
