#pragma once

// Per-class precision/recall/F1 and overall accuracy, derived exactly
// from integer confusion counts. Figures are percentages.

#include "mixlid/corpus.hpp"

#include <array>
#include <cstdint>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

namespace mixlid {

struct Metrics {
  // confusion[gold][pred]: gold in {En, Hi}, pred in {En, Hi, Dummy}.
  // A Dummy prediction (diagnostics mode only) counts in no class's
  // precision denominator but still hurts recall and accuracy.
  std::array<std::array<std::uint64_t, 3>, 2> confusion{};
  double precision[2] = {0, 0};
  double recall[2] = {0, 0};
  double f1[2] = {0, 0};
  double accuracy = 0;

  std::uint64_t total() const {
    std::uint64_t n = 0;
    for (const auto& row : confusion)
      for (std::uint64_t c : row) n += c;
    return n;
  }
};

// Recomputes every derived figure from the confusion counts.
inline void finalize_metrics(Metrics& m) {
  const std::uint64_t total = m.total();
  std::uint64_t correct = 0;
  for (int c = 0; c < 2; ++c) {
    const std::uint64_t tp = m.confusion[static_cast<std::size_t>(c)][static_cast<std::size_t>(c)];
    const std::uint64_t gold = m.confusion[static_cast<std::size_t>(c)][0] +
                               m.confusion[static_cast<std::size_t>(c)][1] +
                               m.confusion[static_cast<std::size_t>(c)][2];
    const std::uint64_t predicted =
        m.confusion[0][static_cast<std::size_t>(c)] + m.confusion[1][static_cast<std::size_t>(c)];
    m.precision[c] = predicted ? 100.0 * static_cast<double>(tp) / static_cast<double>(predicted) : 0.0;
    m.recall[c] = gold ? 100.0 * static_cast<double>(tp) / static_cast<double>(gold) : 0.0;
    m.f1[c] = (m.precision[c] + m.recall[c]) > 0.0
                  ? 2.0 * m.precision[c] * m.recall[c] / (m.precision[c] + m.recall[c])
                  : 0.0;
    correct += tp;
  }
  m.accuracy = total ? 100.0 * static_cast<double>(correct) / static_cast<double>(total) : 0.0;
}

inline Metrics compute_metrics(const std::vector<LanguageLabel>& pred,
                               const std::vector<LanguageLabel>& gold) {
  if (pred.size() != gold.size())
    throw CorpusError("compute_metrics: " + std::to_string(pred.size()) + " predictions vs " +
                      std::to_string(gold.size()) + " gold labels");
  Metrics m;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (gold[i] != LanguageLabel::kEn && gold[i] != LanguageLabel::kHi)
      throw CorpusError("compute_metrics: gold label must be en or hi, got " +
                        label_str(gold[i]));
    if (pred[i] == LanguageLabel::kPad)
      throw CorpusError("compute_metrics: pad prediction");
    const std::size_t g = gold[i] == LanguageLabel::kEn ? 0 : 1;
    const std::size_t p = pred[i] == LanguageLabel::kEn  ? 0
                          : pred[i] == LanguageLabel::kHi ? 1
                                                          : 2;
    ++m.confusion[g][p];
  }
  finalize_metrics(m);
  return m;
}

inline std::string format_pct(double v) {
  std::ostringstream out;
  out << std::fixed << std::setprecision(2) << v;
  return out.str();
}

// Human-readable block: one row per class, one accuracy line.
inline std::string metrics_table(const Metrics& m) {
  std::ostringstream out;
  out << "lang  precision  recall  f1-score\n";
  const char* names[2] = {"en", "hi"};
  for (int c = 0; c < 2; ++c)
    out << names[c] << "    " << std::setw(9) << format_pct(m.precision[c]) << "  " << std::setw(6)
        << format_pct(m.recall[c]) << "  " << std::setw(8) << format_pct(m.f1[c]) << "\n";
  out << "acc   " << format_pct(m.accuracy) << "\n";
  return out.str();
}

// Machine-readable: one record per class plus accuracy.
inline std::string metrics_records(const Metrics& m) {
  std::ostringstream out;
  const char* names[2] = {"en", "hi"};
  for (int c = 0; c < 2; ++c)
    out << "class " << names[c] << " precision " << format_pct(m.precision[c]) << " recall "
        << format_pct(m.recall[c]) << " f1 " << format_pct(m.f1[c]) << "\n";
  out << "accuracy " << format_pct(m.accuracy) << "\n";
  out << "confusion";
  for (const auto& row : m.confusion)
    for (std::uint64_t c : row) out << " " << c;
  out << "\n";
  return out.str();
}

}  // namespace mixlid
