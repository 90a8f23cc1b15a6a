#include "mixlid/train.hpp"

#include <catch2/catch_amalgamated.hpp>

#include <random>

using namespace mixlid;

namespace {

constexpr LanguageLabel kEn = LanguageLabel::kEn;
constexpr LanguageLabel kHi = LanguageLabel::kHi;
constexpr LanguageLabel kDu = LanguageLabel::kDummy;

ModelConfig tiny_config() {
  ModelConfig c;
  c.architecture = Architecture::kLstm;
  c.representation = ReprKind::kWord;
  c.embedding_dim = 8;
  c.lstm_hidden = 6;
  c.lstm_dropout = 0.0;
  c.dense_hidden = 5;
  c.seed = 3;
  return c;
}

}  // namespace

TEST_CASE("metrics: hand-computed confusion example") {
  Metrics m = compute_metrics({kEn, kHi, kHi, kHi}, {kEn, kEn, kHi, kHi});
  REQUIRE(format_pct(m.precision[0]) == "100.00");
  REQUIRE(format_pct(m.recall[0]) == "50.00");
  REQUIRE(format_pct(m.f1[0]) == "66.67");
  REQUIRE(format_pct(m.precision[1]) == "66.67");
  REQUIRE(format_pct(m.recall[1]) == "100.00");
  REQUIRE(format_pct(m.f1[1]) == "80.00");
  REQUIRE(format_pct(m.accuracy) == "75.00");
  REQUIRE(m.confusion[0][0] == 1);
  REQUIRE(m.confusion[0][1] == 1);
  REQUIRE(m.confusion[1][1] == 2);
}

TEST_CASE("metrics: perfect predictions score 100 everywhere") {
  Metrics m = compute_metrics({kEn, kHi, kEn}, {kEn, kHi, kEn});
  for (int c = 0; c < 2; ++c) {
    REQUIRE(m.precision[c] == 100.0);
    REQUIRE(m.recall[c] == 100.0);
    REQUIRE(m.f1[c] == 100.0);
  }
  REQUIRE(m.accuracy == 100.0);
}

TEST_CASE("metrics: swapping the classes swaps the class rows") {
  std::vector<LanguageLabel> pred{kEn, kHi, kHi, kEn, kEn};
  std::vector<LanguageLabel> gold{kEn, kEn, kHi, kHi, kEn};
  auto swap_all = [](std::vector<LanguageLabel> v) {
    for (auto& l : v) l = l == kEn ? kHi : kEn;
    return v;
  };
  Metrics a = compute_metrics(pred, gold);
  Metrics b = compute_metrics(swap_all(pred), swap_all(gold));
  REQUIRE(a.precision[0] == b.precision[1]);
  REQUIRE(a.precision[1] == b.precision[0]);
  REQUIRE(a.recall[0] == b.recall[1]);
  REQUIRE(a.f1[1] == b.f1[0]);
  REQUIRE(a.accuracy == b.accuracy);
}

TEST_CASE("metrics: degenerate all-En predictor") {
  Metrics m = compute_metrics({kEn, kEn, kEn, kEn, kEn}, {kEn, kEn, kHi, kHi, kHi});
  REQUIRE(m.recall[0] == 100.0);
  REQUIRE(m.recall[1] == 0.0);
  REQUIRE(m.precision[1] == 0.0);
  REQUIRE(m.f1[1] == 0.0);
  REQUIRE(m.accuracy == Catch::Approx(40.0));  // En share of gold
}

TEST_CASE("metrics: dummy predictions hurt recall but no precision denominator") {
  Metrics m = compute_metrics({kDu, kHi}, {kEn, kHi});
  REQUIRE(m.precision[0] == 0.0);  // nothing predicted En
  REQUIRE(m.recall[0] == 0.0);
  REQUIRE(m.precision[1] == 100.0);
  REQUIRE(m.recall[1] == 100.0);
  REQUIRE(m.accuracy == 50.0);
  REQUIRE(m.confusion[0][2] == 1);
}

TEST_CASE("metrics: contract violations are errors") {
  REQUIRE_THROWS_AS(compute_metrics({kEn}, {kEn, kHi}), CorpusError);
  REQUIRE_THROWS_AS(compute_metrics({kEn}, {kDu}), CorpusError);
  REQUIRE_THROWS_AS(compute_metrics({kEn}, {LanguageLabel::kPad}), CorpusError);
  REQUIRE_THROWS_AS(compute_metrics({LanguageLabel::kPad}, {kEn}), CorpusError);
}

TEST_CASE("metrics: 100 random instances match brute-force counting") {
  std::mt19937 rng(55);
  std::uniform_int_distribution<int> len(1, 60);
  std::uniform_int_distribution<int> lab(0, 9);
  for (int trial = 0; trial < 100; ++trial) {
    INFO("trial " << trial);
    const int n = len(rng);
    std::vector<LanguageLabel> pred, gold;
    for (int i = 0; i < n; ++i) {
      gold.push_back(lab(rng) < 5 ? kEn : kHi);
      const int p = lab(rng);
      pred.push_back(p < 4 ? kEn : p < 8 ? kHi : kDu);
    }
    Metrics m = compute_metrics(pred, gold);

    // Independent tally.
    std::uint64_t cm[2][3] = {{0, 0, 0}, {0, 0, 0}};
    for (int i = 0; i < n; ++i) {
      const int g = gold[static_cast<std::size_t>(i)] == kEn ? 0 : 1;
      const int p = pred[static_cast<std::size_t>(i)] == kEn ? 0
                    : pred[static_cast<std::size_t>(i)] == kHi ? 1
                                                               : 2;
      ++cm[g][p];
    }
    std::uint64_t correct = 0;
    for (int c = 0; c < 2; ++c) {
      const double tp = static_cast<double>(cm[c][c]);
      const double gc = static_cast<double>(cm[c][0] + cm[c][1] + cm[c][2]);
      const double pc = static_cast<double>(cm[0][c] + cm[1][c]);
      const double prec = pc > 0 ? 100.0 * tp / pc : 0.0;
      const double rec = gc > 0 ? 100.0 * tp / gc : 0.0;
      REQUIRE(m.precision[c] == prec);
      REQUIRE(m.recall[c] == rec);
      const double f1 = prec + rec > 0 ? 2 * prec * rec / (prec + rec) : 0.0;
      REQUIRE(m.f1[c] == f1);
      correct += cm[c][c];
      for (int p = 0; p < 3; ++p) REQUIRE(m.confusion[c][p] == cm[c][p]);
    }
    REQUIRE(m.accuracy == 100.0 * static_cast<double>(correct) / n);

    // Derived figures are recomputable from the confusion counts alone.
    Metrics re;
    re.confusion = m.confusion;
    finalize_metrics(re);
    REQUIRE(re.precision[0] == m.precision[0]);
    REQUIRE(re.f1[1] == m.f1[1]);
    REQUIRE(re.accuracy == m.accuracy);
  }
}

TEST_CASE("metrics: report formats carry the Table-1 figures") {
  Metrics m = compute_metrics({kEn, kHi, kHi, kHi}, {kEn, kEn, kHi, kHi});
  const std::string table = metrics_table(m);
  REQUIRE_THAT(table, Catch::Matchers::ContainsSubstring("66.67"));
  REQUIRE_THAT(table, Catch::Matchers::ContainsSubstring("80.00"));
  REQUIRE_THAT(table, Catch::Matchers::ContainsSubstring("acc   75.00"));
  const std::string records = metrics_records(m);
  REQUIRE_THAT(records, Catch::Matchers::ContainsSubstring("class en precision 100.00"));
  REQUIRE_THAT(records, Catch::Matchers::ContainsSubstring("accuracy 75.00"));
  REQUIRE_THAT(records, Catch::Matchers::ContainsSubstring("confusion 1 1 0 0 2 0"));
}

TEST_CASE("train: two runs with the same seeds are bit-identical") {
  auto corpus = generate_synthetic_corpus(40, 5);
  auto [train_set, val_set] = split_train_val(corpus, 0.2, 1);
  WordVocab wv = build_word_vocab(train_set, 1);

  TrainConfig cfg;
  cfg.epochs_max = 3;
  cfg.patience = 2;
  cfg.batch_size = 8;

  auto run = [&]() {
    ModelInstance m = build_model(tiny_config(), wv);
    return train(m, train_set, val_set, cfg);
  };
  TrainResult a = run();
  TrainResult b = run();
  REQUIRE(a.epochs.size() == b.epochs.size());
  for (std::size_t i = 0; i < a.epochs.size(); ++i) {
    REQUIRE(a.epochs[i].train_loss == b.epochs[i].train_loss);
    REQUIRE(a.epochs[i].first_batch_loss == b.epochs[i].first_batch_loss);
    REQUIRE(a.epochs[i].val_accuracy == b.epochs[i].val_accuracy);
  }
  REQUIRE(a.best_epoch == b.best_epoch);
}

TEST_CASE("train: returned model is the best-validation snapshot") {
  auto corpus = generate_synthetic_corpus(40, 6);
  auto [train_set, val_set] = split_train_val(corpus, 0.2, 1);
  WordVocab wv = build_word_vocab(train_set, 1);
  ModelInstance m = build_model(tiny_config(), wv);

  TrainConfig cfg;
  cfg.epochs_max = 4;
  cfg.patience = 3;
  cfg.batch_size = 8;
  TrainResult r = train(m, train_set, val_set, cfg);
  Metrics val = evaluate(m, val_set, cfg.batch_size);
  REQUIRE(val.accuracy == r.best_val_accuracy);
  REQUIRE(r.best_val_accuracy >= r.epochs.front().val_accuracy);
}

TEST_CASE("train: patience 0 stops one epoch after the first plateau") {
  auto corpus = generate_synthetic_corpus(20, 8);
  auto [train_set, val_set] = split_train_val(corpus, 0.2, 1);
  WordVocab wv = build_word_vocab(train_set, 1);
  ModelInstance m = build_model(tiny_config(), wv);

  TrainConfig cfg;
  cfg.epochs_max = 30;
  cfg.patience = 0;
  cfg.batch_size = 8;
  cfg.lr = 0.0;  // parameters frozen: epoch 2 cannot improve on epoch 1
  TrainResult r = train(m, train_set, val_set, cfg);
  REQUIRE(r.epochs.size() == 2);
  REQUIRE(r.best_epoch == 1);
  REQUIRE(r.epochs[0].val_accuracy == r.epochs[1].val_accuracy);
}

TEST_CASE("train: configuration and dataset contract violations") {
  auto corpus = generate_synthetic_corpus(10, 9);
  auto [train_set, val_set] = split_train_val(corpus, 0.2, 1);
  WordVocab wv = build_word_vocab(train_set, 1);
  ModelInstance m = build_model(tiny_config(), wv);

  TrainConfig bad;
  bad.patience = 30;  // >= epochs_max
  REQUIRE_THROWS_AS(train(m, train_set, val_set, bad), ModelError);
  TrainConfig zero;
  zero.batch_size = 0;
  REQUIRE_THROWS_AS(train(m, train_set, val_set, zero), ModelError);
  TrainConfig ok;
  REQUIRE_THROWS_AS(train(m, {}, val_set, ok), ModelError);
  REQUIRE_THROWS_AS(train(m, train_set, {}, ok), ModelError);
  REQUIRE_THROWS_AS(evaluate(m, {}), ModelError);
}

TEST_CASE("train: non-finite loss aborts with a diagnostic") {
  auto corpus = generate_synthetic_corpus(10, 12);
  auto [train_set, val_set] = split_train_val(corpus, 0.2, 1);
  WordVocab wv = build_word_vocab(train_set, 1);
  ModelInstance m = build_model(tiny_config(), wv);
  m.dense_out.bias.values()[0] = std::numeric_limits<double>::quiet_NaN();

  TrainConfig cfg;
  cfg.epochs_max = 2;
  cfg.patience = 1;
  REQUIRE_THROWS_WITH(train(m, train_set, val_set, cfg),
                      Catch::Matchers::ContainsSubstring("epoch 1"));
}

TEST_CASE("evaluate: subword models score exactly one position per word") {
  auto corpus = generate_synthetic_corpus(30, 14);
  SubwordModel sm = train_unigram(count_words(corpus), 60).model;
  ModelConfig c = tiny_config();
  c.representation = ReprKind::kSubword;
  c.output_classes = 3;
  ModelInstance m = build_model(c, {}, {}, sm);

  std::vector<LanguageLabel> pred, gold;
  for (const auto& b : make_batches(corpus, m.encoders(), ReprKind::kSubword, 8, 0))
    collect_predictions(m, b, pred, gold);
  std::size_t words = 0;
  for (const auto& s : corpus) words += s.tokens.size();
  REQUIRE(pred.size() == words);
  for (auto l : gold) REQUIRE((l == kEn || l == kHi));

  // Diagnostics mode may emit Dummy; default fallback never does.
  for (auto l : pred) REQUIRE((l == kEn || l == kHi));
  Metrics metrics = evaluate(m, corpus, 8);
  REQUIRE(metrics.total() == words);
}
