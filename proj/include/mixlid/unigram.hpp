#pragma once

// Unigram subword model: Viterbi segmentation, EM training with utility
// pruning, first-subword label alignment, and the text file format.
//
// Training follows the unigram-LM tokenizer recipe: seed with frequent
// substrings, alternate E-steps (piece counts under Viterbi segmentation)
// with M-steps (renormalization), and prune the lowest-utility quarter of
// pieces per round until the target vocabulary size is reached. Counts
// are hard (Viterbi) rather than full forward-backward expectations.

#include "mixlid/corpus.hpp"
#include "mixlid/vocab.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <iomanip>
#include <limits>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

namespace mixlid {

class TokenizerError : public std::runtime_error {
 public:
  explicit TokenizerError(const std::string& msg) : std::runtime_error(msg) {}
};

struct SubwordModel {
  std::vector<std::string> pieces;  // piece id = index + 2 (0 pad, 1 unk)
  std::vector<double> log_probs;    // natural log, normalized over pieces
  std::unordered_map<std::string, std::size_t> piece_to_id;
  std::size_t target_vocab = 0;
  std::size_t max_piece_chars = 1;  // in codepoints

  std::size_t size() const { return pieces.size() + 2; }

  std::size_t find(const std::string& piece) const {
    auto it = piece_to_id.find(piece);
    return it == piece_to_id.end() ? kUnkId : it->second;
  }

  const std::string& surface(std::size_t id) const { return pieces.at(id - 2); }
  double log_prob(std::size_t id) const { return log_probs.at(id - 2); }

  double min_log_prob() const {
    double m = 0.0;
    for (double lp : log_probs) m = std::min(m, lp);
    return m;
  }

  void rebuild_index() {
    piece_to_id.clear();
    max_piece_chars = 1;
    for (std::size_t i = 0; i < pieces.size(); ++i) {
      piece_to_id.emplace(pieces[i], i + 2);
      max_piece_chars = std::max(max_piece_chars, utf8_chars(pieces[i]).size());
    }
  }
};

// Lossless split of one word: concatenated surfaces reproduce the word.
struct Segmentation {
  std::vector<std::size_t> ids;
  std::vector<std::string> surfaces;
  double score = 0.0;
};

namespace unigram_detail {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

// Lexicographic preference for longer earlier pieces, used only after
// score and piece count tie.
inline bool lengths_prefer(const std::vector<std::size_t>& a, const std::vector<std::size_t>& b) {
  for (std::size_t i = 0; i < std::min(a.size(), b.size()); ++i) {
    if (a[i] != b[i]) return a[i] > b[i];
  }
  return a.size() > b.size();
}

struct DpState {
  double score = kNegInf;
  std::vector<std::size_t> piece_lens;  // in codepoints, full path
};

inline bool better(const DpState& cand, const DpState& cur) {
  if (cand.score != cur.score) return cand.score > cur.score;
  if (cand.piece_lens.size() != cur.piece_lens.size())
    return cand.piece_lens.size() < cur.piece_lens.size();
  return lengths_prefer(cand.piece_lens, cur.piece_lens);
}

}  // namespace unigram_detail

// Maximum-score lossless segmentation. Characters absent from the model
// become unknown-piece singletons scored at (min log-prob - 10). Ties
// break to fewer pieces, then leftmost-longest.
inline Segmentation segment_viterbi(const std::string& word, const SubwordModel& model,
                                    std::size_t banned_piece_id = 0) {
  if (word.empty()) throw TokenizerError("segment_viterbi: empty word");
  const std::vector<std::string> chars = utf8_chars(word);
  const std::size_t n = chars.size();
  const double unk_lp = model.min_log_prob() - 10.0;

  std::vector<unigram_detail::DpState> best(n + 1);
  best[0].score = 0.0;
  // Prefix byte offsets for substring extraction.
  std::vector<std::size_t> offs(n + 1, 0);
  for (std::size_t i = 0; i < n; ++i) offs[i + 1] = offs[i] + chars[i].size();

  for (std::size_t i = 0; i < n; ++i) {
    if (best[i].score == unigram_detail::kNegInf) continue;
    const std::size_t max_len = std::min(n - i, model.max_piece_chars);
    for (std::size_t len = 1; len <= max_len; ++len) {
      const std::string sub = word.substr(offs[i], offs[i + len] - offs[i]);
      double lp;
      auto it = model.piece_to_id.find(sub);
      if (it != model.piece_to_id.end() && it->second != banned_piece_id) {
        lp = model.log_prob(it->second);
      } else if (len == 1) {
        // Single characters may still be segmentable as unknowns only if
        // they are genuinely absent from the model.
        if (it != model.piece_to_id.end()) continue;  // banned single char
        lp = unk_lp;
      } else {
        continue;
      }
      unigram_detail::DpState cand;
      cand.score = best[i].score + lp;
      cand.piece_lens = best[i].piece_lens;
      cand.piece_lens.push_back(len);
      if (unigram_detail::better(cand, best[i + len])) best[i + len] = std::move(cand);
    }
  }
  if (best[n].score == unigram_detail::kNegInf)
    throw TokenizerError("segment_viterbi: word \"" + word + "\" is not segmentable");

  Segmentation seg;
  seg.score = best[n].score;
  std::size_t pos = 0;
  for (std::size_t len : best[n].piece_lens) {
    const std::string sub = word.substr(offs[pos], offs[pos + len] - offs[pos]);
    auto it = model.piece_to_id.find(sub);
    seg.ids.push_back(it != model.piece_to_id.end() && it->second != banned_piece_id ? it->second
                                                                                     : kUnkId);
    seg.surfaces.push_back(sub);
    pos += len;
  }
  return seg;
}

// ---------------------------------------------------------------------------
// Training

struct WordCount {
  std::string word;
  std::uint64_t count = 0;
};

inline std::vector<WordCount> count_words(const std::vector<LabeledSentence>& corpus) {
  std::unordered_map<std::string, std::uint64_t> counts;
  std::vector<std::string> order;
  for (const auto& s : corpus)
    for (const auto& w : s.tokens) {
      auto [it, fresh] = counts.emplace(w, 0);
      if (fresh) order.push_back(w);
      ++it->second;
    }
  std::vector<WordCount> out;
  out.reserve(order.size());
  for (const auto& w : order) out.push_back({w, counts[w]});
  return out;
}

struct UnigramTrainOptions {
  std::size_t seed_multiplier = 4;  // seed vocabulary = multiplier * target
  std::size_t max_seed_piece_chars = 8;
  std::uint64_t seed_frequency_floor = 2;
  std::size_t em_rounds_per_stage = 2;
  double prune_fraction = 0.25;
};

struct UnigramTrainResult {
  SubwordModel model;
  // Corpus log-likelihood after each EM round, one vector per pruning
  // stage. Non-decreasing within a stage.
  std::vector<std::vector<double>> log_likelihood_stages;
};

namespace unigram_detail {

inline void normalize_from_counts(SubwordModel& model, const std::vector<double>& counts,
                                  const std::vector<bool>& is_single) {
  // Unused single-character pieces keep a tiny floor count so every word
  // stays segmentable; unused multi-character pieces are handled by the
  // caller (pruned).
  constexpr double kFloor = 1e-9;
  double total = 0.0;
  std::vector<double> c(counts);
  for (std::size_t i = 0; i < c.size(); ++i) {
    if (c[i] <= 0.0 && is_single[i]) c[i] = kFloor;
    total += c[i];
  }
  for (std::size_t i = 0; i < c.size(); ++i)
    model.log_probs[i] = c[i] > 0.0 ? std::log(c[i] / total) : kNegInf;
}

inline void drop_pieces(SubwordModel& model, const std::vector<bool>& drop) {
  std::vector<std::string> pieces;
  std::vector<double> lps;
  for (std::size_t i = 0; i < model.pieces.size(); ++i) {
    if (drop[i]) continue;
    pieces.push_back(std::move(model.pieces[i]));
    lps.push_back(model.log_probs[i]);
  }
  model.pieces = std::move(pieces);
  model.log_probs = std::move(lps);
  // Renormalize the survivors.
  double z = 0.0;
  for (double lp : model.log_probs) z += std::exp(lp);
  for (double& lp : model.log_probs) lp -= std::log(z);
  model.rebuild_index();
}

}  // namespace unigram_detail

inline UnigramTrainResult train_unigram(const std::vector<WordCount>& words,
                                        std::size_t target_vocab,
                                        UnigramTrainOptions opts = {}) {
  if (words.empty()) throw TokenizerError("train_unigram: empty corpus");
  if (target_vocab <= 2) throw TokenizerError("train_unigram: target vocab too small");
  const std::size_t max_pieces = target_vocab - 2;  // reserved pad/unk ids

  // Candidate seeding: all substrings up to the length cap whose corpus
  // frequency clears the floor; single characters are always kept.
  std::unordered_map<std::string, std::uint64_t> sub_counts;
  std::vector<std::string> order;
  std::unordered_map<std::string, bool> single;
  for (const auto& wc : words) {
    const auto chars = utf8_chars(wc.word);
    std::vector<std::size_t> offs(chars.size() + 1, 0);
    for (std::size_t i = 0; i < chars.size(); ++i) offs[i + 1] = offs[i] + chars[i].size();
    for (std::size_t i = 0; i < chars.size(); ++i)
      for (std::size_t len = 1; len <= std::min(chars.size() - i, opts.max_seed_piece_chars);
           ++len) {
        std::string sub = wc.word.substr(offs[i], offs[i + len] - offs[i]);
        auto [it, fresh] = sub_counts.emplace(std::move(sub), 0);
        if (fresh) {
          order.push_back(it->first);
          single.emplace(it->first, len == 1);
        }
        it->second += wc.count;
      }
  }

  std::size_t n_chars = 0;
  for (const auto& s : order)
    if (single[s]) ++n_chars;
  if (max_pieces < n_chars)
    throw TokenizerError("train_unigram: target vocab " + std::to_string(target_vocab) +
                         " is smaller than the character alphabet of " + std::to_string(n_chars) +
                         " (+2 reserved ids)");

  std::vector<std::pair<std::string, std::uint64_t>> candidates;
  for (const auto& s : order) {
    if (!single[s] && sub_counts[s] < opts.seed_frequency_floor) continue;
    candidates.emplace_back(s, sub_counts[s]);
  }
  std::stable_sort(candidates.begin(), candidates.end(), [&](const auto& a, const auto& b) {
    if (single.at(a.first) != single.at(b.first)) return single.at(a.first);  // chars first
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  const std::size_t cap = std::max(n_chars, opts.seed_multiplier * target_vocab);
  if (candidates.size() > cap) candidates.resize(cap);

  SubwordModel model;
  model.target_vocab = target_vocab;
  double total = 0.0;
  for (const auto& [s, c] : candidates) total += static_cast<double>(c);
  for (const auto& [s, c] : candidates) {
    model.pieces.push_back(s);
    model.log_probs.push_back(std::log(static_cast<double>(c) / total));
  }
  model.rebuild_index();

  UnigramTrainResult result;
  std::vector<bool> piece_single;

  auto em_stage = [&]() {
    result.log_likelihood_stages.emplace_back();
    for (std::size_t round = 0; round < opts.em_rounds_per_stage; ++round) {
      std::vector<double> counts(model.pieces.size(), 0.0);
      double ll = 0.0;
      for (const auto& wc : words) {
        Segmentation seg = segment_viterbi(wc.word, model);
        ll += static_cast<double>(wc.count) * seg.score;
        for (std::size_t id : seg.ids)
          if (id >= 2) counts[id - 2] += static_cast<double>(wc.count);
      }
      result.log_likelihood_stages.back().push_back(ll);
      piece_single.assign(model.pieces.size(), false);
      for (std::size_t i = 0; i < model.pieces.size(); ++i)
        piece_single[i] = utf8_chars(model.pieces[i]).size() == 1;
      unigram_detail::normalize_from_counts(model, counts, piece_single);
      // Multi-char pieces that got zero probability can never be chosen
      // again; drop them now so pruning accounting stays exact.
      std::vector<bool> dead(model.pieces.size(), false);
      bool any = false;
      for (std::size_t i = 0; i < model.pieces.size(); ++i)
        if (model.log_probs[i] == unigram_detail::kNegInf) dead[i] = any = true;
      if (any) unigram_detail::drop_pieces(model, dead);
    }
  };

  em_stage();

  while (model.pieces.size() > max_pieces) {
    // Utility of a piece: corpus log-likelihood lost if it is removed,
    // measured on the current Viterbi segmentations.
    std::vector<double> utility(model.pieces.size(), 0.0);
    for (const auto& wc : words) {
      Segmentation seg = segment_viterbi(wc.word, model);
      std::vector<std::size_t> used(seg.ids);
      std::sort(used.begin(), used.end());
      used.erase(std::unique(used.begin(), used.end()), used.end());
      for (std::size_t id : used) {
        if (id < 2) continue;
        if (utf8_chars(model.surface(id)).size() == 1) continue;  // exempt
        Segmentation without = segment_viterbi(wc.word, model, id);
        utility[id - 2] += static_cast<double>(wc.count) * (seg.score - without.score);
      }
    }
    std::vector<std::size_t> prunable;
    for (std::size_t i = 0; i < model.pieces.size(); ++i)
      if (utf8_chars(model.pieces[i]).size() > 1) prunable.push_back(i);
    std::stable_sort(prunable.begin(), prunable.end(), [&](std::size_t a, std::size_t b) {
      return utility[a] < utility[b];
    });
    const std::size_t over = model.pieces.size() - max_pieces;
    std::size_t k = static_cast<std::size_t>(
        std::ceil(opts.prune_fraction * static_cast<double>(model.pieces.size())));
    k = std::min(std::min(k, over), prunable.size());
    if (k == 0)
      throw TokenizerError("train_unigram: cannot prune below the character alphabet");
    std::vector<bool> drop(model.pieces.size(), false);
    for (std::size_t i = 0; i < k; ++i) drop[prunable[i]] = true;
    unigram_detail::drop_pieces(model, drop);
    em_stage();
  }

  result.model = std::move(model);
  return result;
}

// ---------------------------------------------------------------------------
// Label alignment (first subword carries the word label, rest are dummy)

struct AlignedPieces {
  std::vector<std::size_t> piece_ids;
  std::vector<LanguageLabel> labels;
  std::vector<bool> first_subword;  // evaluation reads predictions here
};

inline AlignedPieces align_subword_labels(const std::vector<std::string>& words,
                                          const std::vector<LanguageLabel>& labels,
                                          const std::vector<Segmentation>& segmentations) {
  if (words.size() != labels.size() || words.size() != segmentations.size())
    throw TokenizerError("align_subword_labels: length mismatch (" + std::to_string(words.size()) +
                         " words, " + std::to_string(labels.size()) + " labels, " +
                         std::to_string(segmentations.size()) + " segmentations)");
  AlignedPieces out;
  for (std::size_t w = 0; w < words.size(); ++w) {
    const auto& seg = segmentations[w];
    if (seg.ids.empty()) throw TokenizerError("align_subword_labels: empty segmentation");
    for (std::size_t p = 0; p < seg.ids.size(); ++p) {
      out.piece_ids.push_back(seg.ids[p]);
      out.labels.push_back(p == 0 ? labels[w] : LanguageLabel::kDummy);
      out.first_subword.push_back(p == 0);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// File format: header `unigram-v1 <vocab_size>`, then `piece<TAB>log_prob`.

inline void save_subword_model(const SubwordModel& model, std::ostream& out) {
  out << "unigram-v1 " << model.target_vocab << "\n";
  out << std::setprecision(17);
  for (std::size_t i = 0; i < model.pieces.size(); ++i)
    out << model.pieces[i] << "\t" << model.log_probs[i] << "\n";
}

inline SubwordModel load_subword_model(std::istream& in, const std::string& name = "subword model") {
  std::string line;
  if (!std::getline(in, line) || line.rfind("unigram-v1 ", 0) != 0)
    throw TokenizerError(name + ": bad header, expected `unigram-v1 <vocab_size>`");
  SubwordModel model;
  model.target_vocab = std::stoul(line.substr(11));
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos)
      throw TokenizerError(name + ": malformed line \"" + line + "\"");
    model.pieces.push_back(line.substr(0, tab));
    model.log_probs.push_back(std::stod(line.substr(tab + 1)));
  }
  if (model.pieces.empty()) throw TokenizerError(name + ": no pieces");
  model.rebuild_index();
  return model;
}

}  // namespace mixlid
