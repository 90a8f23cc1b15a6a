#pragma once

// The five architectures assembled from layers, batch loss, word-level
// prediction, and checksummed model serialization.

#include "mixlid/batch.hpp"
#include "mixlid/io_util.hpp"
#include "mixlid/layers.hpp"
#include "mixlid/unigram.hpp"
#include "mixlid/vocab.hpp"

#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

namespace mixlid {

class ModelError : public std::runtime_error {
 public:
  explicit ModelError(const std::string& msg) : std::runtime_error(msg) {}
};

enum class Architecture { kCnn, kMultiCnn, kLstm, kCnnLstm, kCharCnnLstm };

inline std::string arch_str(Architecture a) {
  switch (a) {
    case Architecture::kCnn: return "cnn";
    case Architecture::kMultiCnn: return "multi-cnn";
    case Architecture::kLstm: return "lstm";
    case Architecture::kCnnLstm: return "cnn-lstm";
    case Architecture::kCharCnnLstm: return "charcnn-lstm";
  }
  return "?";
}

inline Architecture parse_arch(const std::string& s) {
  if (s == "cnn") return Architecture::kCnn;
  if (s == "multi-cnn" || s == "multi_cnn") return Architecture::kMultiCnn;
  if (s == "lstm") return Architecture::kLstm;
  if (s == "cnn-lstm" || s == "cnn_lstm") return Architecture::kCnnLstm;
  if (s == "charcnn-lstm" || s == "charcnn_lstm") return Architecture::kCharCnnLstm;
  throw ModelError("unknown architecture \"" + s + "\"");
}

// Defaults are the published full-size configuration; tests shrink the
// dimensions.
struct ModelConfig {
  Architecture architecture = Architecture::kLstm;
  ReprKind representation = ReprKind::kWord;
  std::size_t embedding_dim = 300;
  std::size_t cnn_kernel = 4;
  std::size_t cnn_filters = 64;
  std::vector<std::size_t> multi_kernels = {2, 3, 4};
  std::size_t lstm_hidden = 300;
  double lstm_dropout = 0.4;
  std::size_t dense_hidden = 100;
  std::size_t char_embedding_dim = 50;
  std::size_t output_classes = 2;  // 2 -> sigmoid scalar, 3 -> softmax (subword)
  bool mask_dummy_loss = false;
  double sigmoid_threshold = 0.5;
  std::uint32_t seed = 1;

  void validate() const {
    const bool char_arch = architecture == Architecture::kCharCnnLstm;
    const bool char_repr = representation == ReprKind::kCharWord;
    if (char_arch != char_repr)
      throw ModelError("architecture " + arch_str(architecture) +
                       " is incompatible with representation " + repr_str(representation));
    if (representation == ReprKind::kSubword && output_classes != 3)
      throw ModelError("subword representation requires 3 output classes (en/hi/dummy)");
    if (representation != ReprKind::kSubword && output_classes != 2)
      throw ModelError(repr_str(representation) + " representation requires 2 output classes");
    if (embedding_dim == 0 || lstm_hidden == 0 || dense_hidden == 0)
      throw ModelError("dimensions must be positive");
  }
};

struct ModelInstance {
  ModelConfig config;

  WordVocab word_vocab;    // word, char+word
  CharVocab char_vocab;    // char+word
  SubwordModel subword;    // subword
  SegmentCache seg_cache;

  EmbeddingTable embedding;       // token/piece embedding
  EmbeddingTable char_embedding;  // char+word
  std::vector<Conv1dParams> convs;  // cnn/cnn-lstm: 1; multi-cnn/charcnn-lstm: 3
  BiLstmParams lstm;
  DenseParams dense_hidden;
  DenseParams dense_out;

  std::mt19937 dropout_rng;

  bool uses_lstm() const {
    return config.architecture == Architecture::kLstm ||
           config.architecture == Architecture::kCnnLstm ||
           config.architecture == Architecture::kCharCnnLstm;
  }

  Encoders encoders() {
    Encoders e;
    if (config.representation == ReprKind::kSubword) {
      seg_cache.model = &subword;
      e.subword = &seg_cache;
    } else {
      e.words = &word_vocab;
      if (config.representation == ReprKind::kCharWord) e.chars = &char_vocab;
    }
    return e;
  }

  // Declared serialization order: deterministic, architecture-complete.
  std::vector<std::pair<std::string, Tensor>> named_params() {
    std::vector<std::pair<std::string, Tensor>> out;
    out.emplace_back("embedding", embedding.weights);
    if (config.representation == ReprKind::kCharWord)
      out.emplace_back("char_embedding", char_embedding.weights);
    for (std::size_t i = 0; i < convs.size(); ++i) {
      out.emplace_back("conv" + std::to_string(i) + ".weights", convs[i].weights);
      out.emplace_back("conv" + std::to_string(i) + ".bias", convs[i].bias);
    }
    if (uses_lstm()) {
      out.emplace_back("lstm.fwd.wx", lstm.fwd.wx);
      out.emplace_back("lstm.fwd.wh", lstm.fwd.wh);
      out.emplace_back("lstm.fwd.b", lstm.fwd.b);
      out.emplace_back("lstm.bwd.wx", lstm.bwd.wx);
      out.emplace_back("lstm.bwd.wh", lstm.bwd.wh);
      out.emplace_back("lstm.bwd.b", lstm.bwd.b);
    }
    out.emplace_back("dense_hidden.weights", dense_hidden.weights);
    out.emplace_back("dense_hidden.bias", dense_hidden.bias);
    out.emplace_back("dense_out.weights", dense_out.weights);
    out.emplace_back("dense_out.bias", dense_out.bias);
    return out;
  }

  std::vector<Tensor> params() {
    std::vector<Tensor> out;
    for (auto& [name, t] : named_params()) out.push_back(t);
    return out;
  }

  std::size_t parameter_count() {
    std::size_t n = 0;
    for (auto& [name, t] : named_params()) n += t.size();
    return n;
  }
};

// ---------------------------------------------------------------------------
// Construction

inline ModelInstance build_model(const ModelConfig& config, WordVocab word_vocab = {},
                                 CharVocab char_vocab = {}, SubwordModel subword = {}) {
  config.validate();
  ModelInstance m;
  m.config = config;
  m.word_vocab = std::move(word_vocab);
  m.char_vocab = std::move(char_vocab);
  m.subword = std::move(subword);

  std::mt19937 rng(config.seed);
  const std::size_t token_rows = config.representation == ReprKind::kSubword
                                     ? m.subword.size()
                                     : m.word_vocab.size();
  if (token_rows < 2) throw ModelError("build_model: missing vocabulary for representation");
  m.embedding = EmbeddingTable::init(token_rows, config.embedding_dim, rng);

  std::size_t seq_dim = config.embedding_dim;  // dimension entering the top of the stack
  switch (config.architecture) {
    case Architecture::kCnn:
    case Architecture::kCnnLstm:
      m.convs.push_back(
          Conv1dParams::init(config.cnn_kernel, config.embedding_dim, config.cnn_filters, rng));
      seq_dim = config.cnn_filters;
      break;
    case Architecture::kMultiCnn:
      for (std::size_t k : config.multi_kernels)
        m.convs.push_back(Conv1dParams::init(k, config.embedding_dim, config.cnn_filters, rng));
      seq_dim = config.multi_kernels.size() * config.cnn_filters;
      break;
    case Architecture::kCharCnnLstm: {
      if (m.char_vocab.size() < 2) throw ModelError("build_model: missing character vocabulary");
      m.char_embedding = EmbeddingTable::init(m.char_vocab.size(), config.char_embedding_dim, rng);
      for (std::size_t k : config.multi_kernels)
        m.convs.push_back(
            Conv1dParams::init(k, config.char_embedding_dim, config.cnn_filters, rng));
      // 300-dim word embedding concatenated with the pooled char features.
      seq_dim = config.embedding_dim + config.multi_kernels.size() * config.cnn_filters;
      break;
    }
    case Architecture::kLstm:
      break;
  }

  std::size_t head_in = seq_dim;
  if (m.uses_lstm()) {
    m.lstm = BiLstmParams::init(seq_dim, config.lstm_hidden, config.lstm_dropout, rng);
    head_in = 2 * config.lstm_hidden;
  }
  m.dense_hidden = DenseParams::init(head_in, config.dense_hidden, Activation::kRelu, rng);
  const std::size_t out_dim = config.output_classes == 2 ? 1 : config.output_classes;
  m.dense_out = DenseParams::init(
      config.dense_hidden, out_dim,
      config.output_classes == 2 ? Activation::kSigmoid : Activation::kSoftmax, rng);

  m.dropout_rng.seed(config.seed ^ 0x9E3779B9u);
  return m;
}

// ---------------------------------------------------------------------------
// Forward

namespace detail {

// Sentence-major flat (B*T, d) -> per-timestep (B, d) slices.
inline std::vector<Tensor> to_time_major(const Tensor& flat, std::size_t B, std::size_t T) {
  std::vector<Tensor> xs(T);
  for (std::size_t t = 0; t < T; ++t) {
    std::vector<std::size_t> idx(B);
    for (std::size_t b = 0; b < B; ++b) idx[b] = b * T + t;
    xs[t] = gather_rows(flat, std::move(idx));
  }
  return xs;
}

inline Tensor from_time_major(std::vector<Tensor> hs, std::size_t B, std::size_t T) {
  Tensor stacked = concat_rows(std::move(hs));  // row index t*B + b
  std::vector<std::size_t> perm(B * T);
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t t = 0; t < T; ++t) perm[b * T + t] = t * B + b;
  return gather_rows(stacked, std::move(perm));
}

inline Tensor char_cnn_features(ModelInstance& m, const Batch& batch) {
  const std::size_t BT = batch.size * batch.time;
  const std::size_t L = batch.word_len;
  Tensor emb = embedding_forward(batch.char_ids, m.char_embedding);
  std::vector<double> mask(BT * L);
  for (std::size_t i = 0; i < BT * L; ++i) mask[i] = batch.char_ids[i] == kPadId ? 0.0 : 1.0;
  Tensor mask_t({BT * L, 1}, std::move(mask));
  std::vector<Tensor> pooled;
  for (const auto& conv : m.convs) {
    Tensor y = relu(conv1d_forward_blocks(emb, BT, conv));
    // Post-relu activations are nonnegative, so zeroing padded char rows
    // keeps the per-word max correct.
    pooled.push_back(block_max_rows(mul(y, mask_t), BT));
  }
  return concat_cols(std::move(pooled));
}

}  // namespace detail

// Per-position class probabilities, shape (B*T, 1) for the binary head
// (value = P(En)) or (B*T, 3) softmax rows. Pad rows produce values that
// downstream masks ignore.
inline Tensor forward(ModelInstance& m, const Batch& batch, bool training) {
  if (batch.kind != m.config.representation)
    throw ModelError("forward: batch representation " + repr_str(batch.kind) +
                     " does not match model representation " + repr_str(m.config.representation));
  const std::size_t B = batch.size, T = batch.time;

  Tensor seq;  // (B*T, seq_dim)
  switch (m.config.architecture) {
    case Architecture::kCnn:
    case Architecture::kCnnLstm: {
      Tensor emb = embedding_forward(batch.token_ids, m.embedding);
      seq = relu(conv1d_forward_blocks(emb, B, m.convs[0]));
      break;
    }
    case Architecture::kMultiCnn: {
      Tensor emb = embedding_forward(batch.token_ids, m.embedding);
      std::vector<Tensor> outs;
      for (const auto& conv : m.convs)
        outs.push_back(relu(conv1d_forward_blocks(emb, B, conv)));
      seq = concat_cols(std::move(outs));
      break;
    }
    case Architecture::kLstm:
      seq = embedding_forward(batch.token_ids, m.embedding);
      break;
    case Architecture::kCharCnnLstm: {
      Tensor word_emb = embedding_forward(batch.token_ids, m.embedding);
      seq = concat_cols({word_emb, detail::char_cnn_features(m, batch)});
      break;
    }
  }

  if (m.uses_lstm()) {
    auto xs = detail::to_time_major(seq, B, T);
    auto hs = bilstm_forward_steps(xs, batch.lengths, m.lstm, training, m.dropout_rng);
    seq = detail::from_time_major(std::move(hs), B, T);
  }

  return dense_forward(dense_forward(seq, m.dense_hidden), m.dense_out);
}

// Masked loss for one batch: BCE for the binary head, CCE for the
// 3-class subword head. Pad positions never contribute; dummy positions
// contribute unless mask_dummy_loss is set.
inline Tensor batch_loss(ModelInstance& m, const Batch& batch, bool training) {
  Tensor probs = forward(m, batch, training);
  std::vector<bool> mask = batch.loss_mask;
  if (m.config.mask_dummy_loss)
    for (std::size_t i = 0; i < mask.size(); ++i)
      if (batch.labels[i] == LanguageLabel::kDummy) mask[i] = false;
  if (m.config.output_classes == 2) return bce_loss(probs, batch.label_binary, mask);
  return cce_loss(probs, batch.label_class, mask);
}

// ---------------------------------------------------------------------------
// Prediction

// Word-level labels for one raw sentence. Subword models predict on the
// piece sequence and read first-subword positions; a Dummy argmax there
// falls back to the larger of P(En), P(Hi).
inline std::vector<std::pair<std::string, LanguageLabel>> predict(
    ModelInstance& m, const std::vector<std::string>& tokens) {
  if (tokens.empty()) throw ModelError("predict: empty sentence");
  LabeledSentence sent;
  sent.tokens = tokens;
  sent.labels.assign(tokens.size(), LanguageLabel::kEn);  // placeholder, unused
  Batch batch = encode_sentence(sent, m.encoders(), m.config.representation);
  Tensor probs = forward(m, batch, /*training=*/false);

  std::vector<std::pair<std::string, LanguageLabel>> out;
  std::size_t word = 0;
  for (std::size_t t = 0; t < batch.time && word < tokens.size(); ++t) {
    if (!batch.loss_mask[t] || !batch.first_subword[t]) continue;
    LanguageLabel label;
    if (m.config.output_classes == 2) {
      label = probs.at(t) >= m.config.sigmoid_threshold ? LanguageLabel::kEn : LanguageLabel::kHi;
    } else {
      // A Dummy argmax at a first-subword position falls back to the
      // larger of P(En), P(Hi), which is also the argmax rule when
      // Dummy does not win.
      const double pe = probs.at(t * 3 + 0), ph = probs.at(t * 3 + 1);
      label = pe >= ph ? LanguageLabel::kEn : LanguageLabel::kHi;
    }
    out.emplace_back(tokens[word], label);
    ++word;
  }
  if (out.size() != tokens.size())
    throw ModelError("predict: produced " + std::to_string(out.size()) + " labels for " +
                     std::to_string(tokens.size()) + " tokens");
  return out;
}

// ---------------------------------------------------------------------------
// Serialization

namespace detail {

inline std::string config_to_text(const ModelConfig& c) {
  std::ostringstream out;
  out << "architecture " << arch_str(c.architecture) << "\n";
  out << "representation " << repr_str(c.representation) << "\n";
  out << "embedding_dim " << c.embedding_dim << "\n";
  out << "cnn_kernel " << c.cnn_kernel << "\n";
  out << "cnn_filters " << c.cnn_filters << "\n";
  out << "multi_kernels ";
  for (std::size_t i = 0; i < c.multi_kernels.size(); ++i)
    out << (i ? "," : "") << c.multi_kernels[i];
  out << "\n";
  out << "lstm_hidden " << c.lstm_hidden << "\n";
  out << "lstm_dropout " << c.lstm_dropout << "\n";
  out << "dense_hidden " << c.dense_hidden << "\n";
  out << "char_embedding_dim " << c.char_embedding_dim << "\n";
  out << "output_classes " << c.output_classes << "\n";
  out << "mask_dummy_loss " << (c.mask_dummy_loss ? 1 : 0) << "\n";
  out << "sigmoid_threshold " << std::setprecision(17) << c.sigmoid_threshold << "\n";
  out << "seed " << c.seed << "\n";
  return out.str();
}

inline ModelConfig config_from_text(std::istream& in, std::size_t n_lines) {
  ModelConfig c;
  c.multi_kernels.clear();
  std::string line;
  for (std::size_t i = 0; i < n_lines; ++i) {
    if (!std::getline(in, line)) throw ModelError("model file: truncated config");
    const auto sp = line.find(' ');
    if (sp == std::string::npos) throw ModelError("model file: bad config line \"" + line + "\"");
    const std::string key = line.substr(0, sp), val = line.substr(sp + 1);
    if (key == "architecture") c.architecture = parse_arch(val);
    else if (key == "representation") c.representation = parse_repr(val);
    else if (key == "embedding_dim") c.embedding_dim = std::stoul(val);
    else if (key == "cnn_kernel") c.cnn_kernel = std::stoul(val);
    else if (key == "cnn_filters") c.cnn_filters = std::stoul(val);
    else if (key == "multi_kernels") {
      std::stringstream ss(val);
      std::string item;
      while (std::getline(ss, item, ',')) c.multi_kernels.push_back(std::stoul(item));
    } else if (key == "lstm_hidden") c.lstm_hidden = std::stoul(val);
    else if (key == "lstm_dropout") c.lstm_dropout = std::stod(val);
    else if (key == "dense_hidden") c.dense_hidden = std::stoul(val);
    else if (key == "char_embedding_dim") c.char_embedding_dim = std::stoul(val);
    else if (key == "output_classes") c.output_classes = std::stoul(val);
    else if (key == "mask_dummy_loss") c.mask_dummy_loss = val == "1";
    else if (key == "sigmoid_threshold") c.sigmoid_threshold = std::stod(val);
    else if (key == "seed") c.seed = static_cast<std::uint32_t>(std::stoul(val));
    else throw ModelError("model file: unknown config key \"" + key + "\"");
  }
  return c;
}

constexpr std::size_t kConfigLines = 14;

}  // namespace detail

// Format: text header (magic, config, embedded vocabularies), then
// parameter blobs as 64-bit little-endian doubles in declared order,
// then a CRC32 footer over everything before it.
inline void save_model(ModelInstance& m, std::ostream& out) {
  std::ostringstream payload(std::ios::binary);
  payload << "mixlid-model-v1\n";
  payload << detail::config_to_text(m.config);
  if (m.config.representation == ReprKind::kSubword) {
    save_subword_model(m.subword, payload);
  } else {
    save_word_vocab(m.word_vocab, payload);
    if (m.config.representation == ReprKind::kCharWord) save_char_vocab(m.char_vocab, payload);
  }
  auto params = m.named_params();
  payload << "params " << params.size() << "\n";
  for (auto& [name, t] : params) {
    payload << "param " << name << " " << t.size() << "\n";
    for (std::size_t i = 0; i < t.size(); ++i) put_double_le(payload, t.at(i));
    payload << "\n";
  }
  const std::string body = payload.str();
  char footer[16];
  std::snprintf(footer, sizeof(footer), "crc32 %08x\n", crc32(body));
  out.write(body.data(), static_cast<std::streamsize>(body.size()));
  out << footer;
}

inline void save_model_file(ModelInstance& m, const std::string& path) {
  std::ostringstream out(std::ios::binary);
  save_model(m, out);
  atomic_write_file(path, out.str());
}

inline ModelInstance load_model(const std::string& contents, const std::string& name = "model") {
  constexpr std::size_t kFooterLen = 15;  // "crc32 xxxxxxxx\n"
  if (contents.size() < kFooterLen || contents.compare(contents.size() - 1, 1, "\n") != 0)
    throw ModelError(name + ": truncated file");
  const std::string footer = contents.substr(contents.size() - kFooterLen);
  if (footer.rfind("crc32 ", 0) != 0) throw ModelError(name + ": missing checksum footer");
  const std::string body = contents.substr(0, contents.size() - kFooterLen);
  const std::uint32_t want = static_cast<std::uint32_t>(std::stoul(footer.substr(6), nullptr, 16));
  if (crc32(body) != want) throw ModelError(name + ": checksum mismatch (corrupted file)");

  std::istringstream in(body, std::ios::binary);
  std::string line;
  if (!std::getline(in, line) || line != "mixlid-model-v1")
    throw ModelError(name + ": unsupported format version \"" + line + "\"");
  ModelConfig config = detail::config_from_text(in, detail::kConfigLines);

  WordVocab wv;
  CharVocab cv;
  SubwordModel sm;
  if (config.representation == ReprKind::kSubword) {
    // Subword pieces run to the params marker; split them out.
    std::string sub_text;
    std::streampos pos = in.tellg();
    while (std::getline(in, line)) {
      if (line.rfind("params ", 0) == 0) break;
      sub_text += line;
      sub_text += "\n";
      pos = in.tellg();
    }
    std::istringstream sub_in(sub_text);
    sm = load_subword_model(sub_in, name);
    in.seekg(pos);
    std::getline(in, line);  // re-consume the params marker
  } else {
    wv = load_word_vocab(in, name);
    if (config.representation == ReprKind::kCharWord) cv = load_char_vocab(in, name);
    if (!std::getline(in, line) || line.rfind("params ", 0) != 0)
      throw ModelError(name + ": missing params section");
  }
  const std::size_t n_params = std::stoul(line.substr(7));

  ModelInstance m = build_model(config, std::move(wv), std::move(cv), std::move(sm));
  auto params = m.named_params();
  if (params.size() != n_params)
    throw ModelError(name + ": config mismatch, expected " + std::to_string(params.size()) +
                     " parameter tensors, file has " + std::to_string(n_params));
  for (auto& [pname, t] : params) {
    if (!std::getline(in, line) || line.rfind("param ", 0) != 0)
      throw ModelError(name + ": missing parameter header for " + pname);
    std::istringstream hs(line.substr(6));
    std::string got_name;
    std::size_t numel = 0;
    hs >> got_name >> numel;
    if (got_name != pname || numel != t.size())
      throw ModelError(name + ": parameter mismatch, expected " + pname + "[" +
                       std::to_string(t.size()) + "], file has " + got_name + "[" +
                       std::to_string(numel) + "]");
    for (std::size_t i = 0; i < t.size(); ++i) t.values()[i] = get_double_le(in);
    std::getline(in, line);  // trailing newline after the blob
  }
  return m;
}

inline ModelInstance load_model_file(const std::string& path) {
  return load_model(read_file(path), path);
}

}  // namespace mixlid
