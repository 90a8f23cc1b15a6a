// Command-line front end: synthetic corpus generation, subword tokenizer
// training, model training, evaluation, and prediction.
//
// Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.

#include "mixlid/mixlid.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <chrono>
#include <ctime>
#include <iostream>
#include <sstream>

using json = nlohmann::json;

namespace {

std::string iso_timestamp() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&t));
  return buf;
}

std::string file_digest(const std::string& path) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%08x", mixlid::crc32(mixlid::read_file(path)));
  return buf;
}

// Written atomically next to every produced artifact; holds everything
// needed to reproduce the run.
struct Manifest {
  json j;

  Manifest(const std::string& command) {
    j["command"] = command;
    j["start"] = iso_timestamp();
  }
  void input(const std::string& name, const std::string& path) {
    j["inputs"][name] = {{"path", path}, {"crc32", file_digest(path)}};
  }
  void write(const std::string& artifact_path) {
    j["end"] = iso_timestamp();
    mixlid::atomic_write_file(artifact_path + ".manifest.json", j.dump(2) + "\n");
  }
};

int cmd_gen_synthetic(std::size_t n, std::uint32_t seed, const std::string& out) {
  Manifest manifest("gen-synthetic");
  manifest.j["config"] = {{"n", n}, {"seed", seed}, {"out", out}};
  auto corpus = mixlid::generate_synthetic_corpus(n, seed);
  std::ostringstream text;
  mixlid::write_corpus_stream(corpus, text);
  mixlid::atomic_write_file(out, text.str());
  manifest.j["outputs"] = {out};
  manifest.write(out);
  std::cout << "wrote " << corpus.size() << " sentences to " << out << "\n";
  return 0;
}

int cmd_train_tokenizer(const std::string& input, std::size_t vocab_size,
                        std::size_t seed_multiplier, const std::string& out) {
  Manifest manifest("train-tokenizer");
  manifest.j["config"] = {
      {"input", input}, {"vocab_size", vocab_size}, {"seed_multiplier", seed_multiplier}};
  manifest.input("corpus", input);

  auto corpus = mixlid::parse_corpus_file(input);
  auto words = mixlid::count_words(corpus);
  mixlid::UnigramTrainOptions opts;
  opts.seed_multiplier = seed_multiplier;
  auto result = mixlid::train_unigram(words, vocab_size, opts);

  std::ostringstream text;
  mixlid::save_subword_model(result.model, text);
  mixlid::atomic_write_file(out, text.str());
  manifest.j["outputs"] = {out};
  manifest.j["pieces"] = result.model.pieces.size();
  manifest.write(out);
  std::cout << "trained subword model with " << result.model.pieces.size() << " pieces ("
            << result.log_likelihood_stages.size() << " pruning stages) -> " << out << "\n";
  return 0;
}

struct TrainFlags {
  std::string train_file;
  std::string arch = "lstm";
  std::string repr = "word";
  std::string subword_model;
  std::string out;
  double val_fraction = 0.10;
  std::uint64_t min_word_freq = 1;
  mixlid::ModelConfig model;
  mixlid::TrainConfig trainer;
};

int cmd_train(const TrainFlags& flags) {
  Manifest manifest("train");
  manifest.input("train", flags.train_file);

  mixlid::ModelConfig config = flags.model;
  config.architecture = mixlid::parse_arch(flags.arch);
  config.representation = mixlid::parse_repr(flags.repr);
  config.output_classes = config.representation == mixlid::ReprKind::kSubword ? 3 : 2;

  if ((config.representation == mixlid::ReprKind::kSubword) != !flags.subword_model.empty()) {
    std::cerr << "error: --subword-model must be given exactly when --repr subword\n";
    return 1;
  }

  auto corpus = mixlid::parse_corpus_file(flags.train_file);
  auto [train_set, val_set] =
      mixlid::split_train_val(corpus, flags.val_fraction, flags.trainer.seed);

  mixlid::WordVocab wv;
  mixlid::CharVocab cv;
  mixlid::SubwordModel sm;
  if (config.representation == mixlid::ReprKind::kSubword) {
    manifest.input("subword_model", flags.subword_model);
    std::istringstream in(mixlid::read_file(flags.subword_model));
    sm = mixlid::load_subword_model(in, flags.subword_model);
  } else {
    wv = mixlid::build_word_vocab(train_set, flags.min_word_freq);
    if (config.representation == mixlid::ReprKind::kCharWord)
      cv = mixlid::build_char_vocab(train_set);
  }

  auto model = mixlid::build_model(config, std::move(wv), std::move(cv), std::move(sm));

  std::ostringstream epoch_log;
  struct Tee : std::ostream, std::streambuf {
    std::ostream& a;
    std::ostream& b;
    Tee(std::ostream& a, std::ostream& b) : std::ostream(this), a(a), b(b) {}
    int overflow(int c) override {
      a.put(static_cast<char>(c));
      b.put(static_cast<char>(c));
      return c;
    }
  } tee(std::cout, epoch_log);

  auto result = mixlid::train(model, train_set, val_set, flags.trainer, &tee);

  mixlid::save_model_file(model, flags.out);
  mixlid::atomic_write_file(flags.out + ".trainlog", epoch_log.str());

  manifest.j["config"] = {{"architecture", flags.arch},
                          {"representation", flags.repr},
                          {"val_fraction", flags.val_fraction},
                          {"min_word_freq", flags.min_word_freq},
                          {"embedding_dim", config.embedding_dim},
                          {"cnn_kernel", config.cnn_kernel},
                          {"cnn_filters", config.cnn_filters},
                          {"lstm_hidden", config.lstm_hidden},
                          {"lstm_dropout", config.lstm_dropout},
                          {"dense_hidden", config.dense_hidden},
                          {"char_embedding_dim", config.char_embedding_dim},
                          {"mask_dummy_loss", config.mask_dummy_loss},
                          {"model_seed", config.seed},
                          {"train_seed", flags.trainer.seed},
                          {"epochs_max", flags.trainer.epochs_max},
                          {"batch_size", flags.trainer.batch_size},
                          {"patience", flags.trainer.patience},
                          {"lr", flags.trainer.lr}};
  manifest.j["outputs"] = {flags.out, flags.out + ".trainlog"};
  manifest.j["best_epoch"] = result.best_epoch;
  manifest.j["best_val_accuracy"] = result.best_val_accuracy;
  manifest.write(flags.out);

  std::cout << "best epoch " << result.best_epoch << " val_acc "
            << mixlid::format_pct(result.best_val_accuracy) << " -> " << flags.out << "\n";
  return 0;
}

int cmd_evaluate(const std::string& model_path, const std::string& test_path,
                 const std::string& metrics_out) {
  Manifest manifest("evaluate");
  manifest.input("model", model_path);
  manifest.input("test", test_path);

  auto model = mixlid::load_model_file(model_path);
  auto test_set = mixlid::parse_corpus_file(test_path);
  mixlid::Metrics metrics = mixlid::evaluate(model, test_set);

  std::cout << mixlid::metrics_table(metrics);
  mixlid::atomic_write_file(metrics_out, mixlid::metrics_records(metrics));
  manifest.j["outputs"] = {metrics_out};
  manifest.j["accuracy"] = metrics.accuracy;
  manifest.write(metrics_out);
  return 0;
}

int cmd_predict(const std::string& model_path) {
  auto model = mixlid::load_model_file(model_path);
  std::string line;
  while (std::getline(std::cin, line)) {
    std::istringstream ss(line);
    std::vector<std::string> tokens;
    std::string tok;
    while (ss >> tok) tokens.push_back(tok);
    if (tokens.empty()) {
      std::cerr << "warning: skipping empty line\n";
      continue;
    }
    auto labeled = mixlid::predict(model, tokens);
    for (std::size_t i = 0; i < labeled.size(); ++i)
      std::cout << (i ? " " : "") << labeled[i].first << "/"
                << mixlid::label_str(labeled[i].second);
    std::cout << "\n";
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Language identification for Hindi-English code-mixed text"};
  app.require_subcommand(1);

  // gen-synthetic
  std::size_t gen_n = 1000;
  std::uint32_t gen_seed = 1;
  std::string gen_out;
  auto* gen = app.add_subcommand("gen-synthetic", "Generate a synthetic labeled corpus");
  gen->add_option("--n", gen_n, "Number of sentences");
  gen->add_option("--seed", gen_seed, "RNG seed");
  gen->add_option("--out", gen_out, "Output corpus file")->required();

  // train-tokenizer
  std::string tok_input, tok_out;
  std::size_t tok_vocab = 12000;
  std::size_t tok_mult = 4;
  auto* tok = app.add_subcommand("train-tokenizer", "Train the unigram subword model");
  tok->add_option("--input", tok_input, "Training corpus (token<TAB>label)")->required();
  tok->add_option("--vocab-size", tok_vocab, "Target subword vocabulary size");
  tok->add_option("--seed-multiplier", tok_mult, "Seed vocabulary = multiplier * vocab size");
  tok->add_option("--out", tok_out, "Output model file")->required();

  // train
  TrainFlags tf;
  auto* tr = app.add_subcommand("train", "Train a language-identification model");
  tr->add_option("--train", tf.train_file, "Training corpus")->required();
  tr->add_option("--arch", tf.arch, "cnn | multi-cnn | lstm | cnn-lstm | charcnn-lstm");
  tr->add_option("--repr", tf.repr, "word | char+word | subword");
  tr->add_option("--subword-model", tf.subword_model, "Subword model (required for subword repr)");
  tr->add_option("--out", tf.out, "Output model file")->required();
  tr->add_option("--val-fraction", tf.val_fraction, "Validation fraction of train sentences");
  tr->add_option("--min-word-freq", tf.min_word_freq, "Word vocabulary frequency threshold");
  tr->add_option("--embedding-dim", tf.model.embedding_dim, "Token embedding dimension");
  tr->add_option("--cnn-kernel", tf.model.cnn_kernel, "CNN kernel size");
  tr->add_option("--cnn-filters", tf.model.cnn_filters, "CNN filter count");
  tr->add_option("--lstm-hidden", tf.model.lstm_hidden, "BiLSTM hidden units per direction");
  tr->add_option("--lstm-dropout", tf.model.lstm_dropout, "Recurrent-layer dropout rate");
  tr->add_option("--dense-hidden", tf.model.dense_hidden, "Hidden dense layer size");
  tr->add_option("--char-embedding-dim", tf.model.char_embedding_dim,
                 "Character embedding dimension");
  tr->add_flag("--mask-dummy-loss", tf.model.mask_dummy_loss,
               "Exclude dummy-labeled subword positions from the loss");
  tr->add_option("--model-seed", tf.model.seed, "Parameter init / dropout seed");
  tr->add_option("--epochs", tf.trainer.epochs_max, "Maximum epochs");
  tr->add_option("--batch-size", tf.trainer.batch_size, "Batch size");
  tr->add_option("--patience", tf.trainer.patience, "Early-stop patience");
  tr->add_option("--seed", tf.trainer.seed, "Shuffle/split seed");
  tr->add_option("--lr", tf.trainer.lr, "Adam learning rate");

  // evaluate
  std::string ev_model, ev_test, ev_metrics = "metrics.txt";
  auto* ev = app.add_subcommand("evaluate", "Evaluate a model on a labeled test set");
  ev->add_option("--model", ev_model, "Model file")->required();
  ev->add_option("--test", ev_test, "Test corpus")->required();
  ev->add_option("--metrics-out", ev_metrics, "Structured metrics output file");

  // predict
  std::string pr_model;
  auto* pr = app.add_subcommand("predict", "Label sentences from standard input");
  pr->add_option("--model", pr_model, "Model file")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (gen->parsed()) return cmd_gen_synthetic(gen_n, gen_seed, gen_out);
    if (tok->parsed()) return cmd_train_tokenizer(tok_input, tok_vocab, tok_mult, tok_out);
    if (tr->parsed()) return cmd_train(tf);
    if (ev->parsed()) return cmd_evaluate(ev_model, ev_test, ev_metrics);
    if (pr->parsed()) return cmd_predict(pr_model);
  } catch (const mixlid::NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return 3;
  } catch (const mixlid::TensorError& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}
