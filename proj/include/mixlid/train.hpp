#pragma once

// Training loop with validation-based model selection and word-level
// evaluation.

#include "mixlid/batch.hpp"
#include "mixlid/metrics.hpp"
#include "mixlid/model.hpp"

#include <chrono>
#include <cmath>
#include <iostream>
#include <limits>
#include <vector>

namespace mixlid {

class NumericError : public std::runtime_error {
 public:
  explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

struct TrainConfig {
  std::size_t epochs_max = 30;
  std::size_t batch_size = 32;
  std::size_t patience = 3;  // epochs without val-accuracy improvement
  std::uint32_t seed = 42;
  double lr = 0.001;

  void validate() const {
    if (batch_size == 0) throw ModelError("train: batch_size must be >= 1");
    if (patience >= epochs_max) throw ModelError("train: patience must be < epochs_max");
  }
};

struct EpochReport {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double first_batch_loss = 0.0;
  double val_accuracy = 0.0;
  double seconds = 0.0;
};

struct TrainResult {
  std::vector<EpochReport> epochs;
  std::size_t best_epoch = 0;
  double best_val_accuracy = 0.0;
};

// Word-level predicted labels for every scored position of a batch.
// Word/char+word models score every token; subword models score only
// first-subword positions. Returns parallel (pred, gold) vectors.
inline void collect_predictions(ModelInstance& m, const Batch& batch,
                                std::vector<LanguageLabel>& pred,
                                std::vector<LanguageLabel>& gold, bool dummy_fallback = true) {
  Tensor probs = forward(m, batch, /*training=*/false);
  for (std::size_t i = 0; i < batch.loss_mask.size(); ++i) {
    if (!batch.loss_mask[i] || !batch.first_subword[i]) continue;
    LanguageLabel p;
    if (m.config.output_classes == 2) {
      p = probs.at(i) >= m.config.sigmoid_threshold ? LanguageLabel::kEn : LanguageLabel::kHi;
    } else {
      const double pe = probs.at(i * 3 + 0), ph = probs.at(i * 3 + 1), pd = probs.at(i * 3 + 2);
      if (pd >= pe && pd >= ph && !dummy_fallback)
        p = LanguageLabel::kDummy;
      else
        p = pe >= ph ? LanguageLabel::kEn : LanguageLabel::kHi;
    }
    pred.push_back(p);
    gold.push_back(batch.labels[i]);
  }
}

inline Metrics evaluate(ModelInstance& m, const std::vector<LabeledSentence>& test_set,
                        std::size_t batch_size = 32, bool dummy_fallback = true) {
  if (test_set.empty()) throw ModelError("evaluate: empty test set");
  // Fixed seed: evaluation order does not matter, determinism does.
  auto batches = make_batches(test_set, m.encoders(), m.config.representation, batch_size, 0);
  std::vector<LanguageLabel> pred, gold;
  for (const auto& batch : batches) collect_predictions(m, batch, pred, gold, dummy_fallback);
  return compute_metrics(pred, gold);
}

inline TrainResult train(ModelInstance& model, const std::vector<LabeledSentence>& train_set,
                         const std::vector<LabeledSentence>& val_set, const TrainConfig& cfg,
                         std::ostream* log = nullptr) {
  cfg.validate();
  if (train_set.empty() || val_set.empty()) throw ModelError("train: empty dataset");

  auto params = model.params();
  AdamState adam = AdamState::for_params(params, cfg.lr);
  for (auto& p : params) p.grad();  // allocate

  TrainResult result;
  std::vector<std::vector<double>> best_params;
  std::size_t epochs_since_best = 0;

  for (std::size_t epoch = 1; epoch <= cfg.epochs_max; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    auto batches = make_batches(train_set, model.encoders(), model.config.representation,
                                cfg.batch_size, cfg.seed + static_cast<std::uint32_t>(epoch));
    double loss_sum = 0.0;
    double first_loss = 0.0;
    for (std::size_t b = 0; b < batches.size(); ++b) {
      Tape tape;
      double loss_value;
      {
        TapeScope scope(tape);
        Tensor loss = batch_loss(model, batches[b], /*training=*/true);
        loss_value = loss.item();
        if (!std::isfinite(loss_value))
          throw NumericError("train: non-finite loss at epoch " + std::to_string(epoch) +
                             " batch " + std::to_string(b) + " (lr " + std::to_string(adam.lr) +
                             ")");
        backward(loss, tape);
      }
      adam_step(params, adam);
      for (auto& p : params) p.zero_grad();
      loss_sum += loss_value;
      if (b == 0) first_loss = loss_value;
    }

    Metrics val = evaluate(model, val_set, cfg.batch_size);
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    EpochReport report{epoch, loss_sum / static_cast<double>(batches.size()), first_loss,
                       val.accuracy, secs};
    result.epochs.push_back(report);
    if (log)
      *log << "epoch " << epoch << " loss " << report.train_loss << " val_acc "
           << format_pct(val.accuracy) << " time " << secs << "s seed " << cfg.seed << "\n";

    if (result.epochs.size() == 1 || val.accuracy > result.best_val_accuracy) {
      result.best_val_accuracy = val.accuracy;
      result.best_epoch = epoch;
      best_params.clear();
      for (auto& p : params) best_params.push_back(p.values());
      epochs_since_best = 0;
    } else if (++epochs_since_best > cfg.patience) {
      break;
    }
  }

  // Restore the best-by-validation snapshot.
  for (std::size_t i = 0; i < params.size(); ++i) params[i].values() = best_params[i];
  return result;
}

}  // namespace mixlid
