#pragma once

#include <cstdint>
#include <fstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "ptp/digest.hpp"
#include "ptp/rng.hpp"
#include "ptp/tensor.hpp"

namespace ptp {

struct BackboneConfig {
  std::size_t layers = 2;
  std::size_t dim = 32;
  std::size_t heads = 2;
  std::size_t ffn_mult = 4;
  std::size_t max_len = 64;
  bool use_positions = true;
  double init_std = 0.02;
  std::uint64_t seed = 42;

  bool operator==(const BackboneConfig&) const = default;

  void validate() const {
    if (layers < 1 || dim < 1 || heads < 1 || ffn_mult < 1 || max_len < 1)
      throw std::invalid_argument("BackboneConfig: all counts must be >= 1");
    if (dim % heads != 0) throw std::invalid_argument("BackboneConfig: dim must be divisible by heads");
    if (init_std <= 0.0) throw std::invalid_argument("BackboneConfig: init_std must be positive");
  }
};

enum class PromptMode { kInputPrepend, kPerLayerPrefix };
enum class ReparamKind { kIdentity, kMlp };

struct PromptConfig {
  PromptMode mode = PromptMode::kInputPrepend;
  std::size_t length = 8;
  ReparamKind reparam = ReparamKind::kIdentity;
  std::size_t reparam_hidden = 32;

  bool operator==(const PromptConfig&) const = default;

  void validate() const {
    if (length < 1) throw std::invalid_argument("PromptConfig: length must be >= 1");
    if (reparam == ReparamKind::kMlp && reparam_hidden < 1)
      throw std::invalid_argument("PromptConfig: reparam_hidden must be >= 1");
  }
};

/// Trainable prompt parameters: raw embedding blocks (one for input-prepend,
/// one per layer for per-layer prefix) plus the optional reparameterization
/// MLP. This is the complete trainable set when the backbone is frozen.
class PromptState {
 public:
  PromptState() = default;

  static PromptState init(const PromptConfig& cfg, const BackboneConfig& bcfg, std::uint64_t seed) {
    cfg.validate();
    PromptState p;
    p.cfg_ = cfg;
    Rng rng = make_rng(seed, RngStream::kInit);
    const std::size_t n_blocks = cfg.mode == PromptMode::kPerLayerPrefix ? bcfg.layers : 1;
    for (std::size_t i = 0; i < n_blocks; ++i)
      p.blocks_.push_back(Tensor::randn({cfg.length, bcfg.dim}, rng, bcfg.init_std, true));
    if (cfg.reparam == ReparamKind::kMlp) {
      p.mlp_w1_ = Tensor::randn({bcfg.dim, cfg.reparam_hidden}, rng, bcfg.init_std, true);
      p.mlp_b1_ = Tensor::zeros({cfg.reparam_hidden}, true);
      p.mlp_w2_ = Tensor::randn({cfg.reparam_hidden, bcfg.dim}, rng, bcfg.init_std, true);
      p.mlp_b2_ = Tensor::zeros({bcfg.dim}, true);
    }
    return p;
  }

  const PromptConfig& config() const { return cfg_; }
  const std::vector<Tensor>& blocks() const { return blocks_; }
  std::vector<Tensor>& blocks() { return blocks_; }

  /// Raw block -> prompt rows actually consumed by the model.
  Tensor reparam_rows(Tape& tape, const Tensor& raw) const {
    if (cfg_.reparam == ReparamKind::kIdentity) return raw;
    Tensor h = add_bias(tape, matmul(tape, raw, mlp_w1_), mlp_b1_);
    h = gelu(tape, h);
    return add_bias(tape, matmul(tape, h, mlp_w2_), mlp_b2_);
  }

  std::vector<std::pair<std::string, Tensor>> named_params() const {
    std::vector<std::pair<std::string, Tensor>> out;
    for (std::size_t i = 0; i < blocks_.size(); ++i)
      out.emplace_back("prompt.block" + std::to_string(i), blocks_[i]);
    if (cfg_.reparam == ReparamKind::kMlp) {
      out.emplace_back("prompt.mlp_w1", mlp_w1_);
      out.emplace_back("prompt.mlp_b1", mlp_b1_);
      out.emplace_back("prompt.mlp_w2", mlp_w2_);
      out.emplace_back("prompt.mlp_b2", mlp_b2_);
    }
    return out;
  }

  std::vector<Tensor> params() const {
    std::vector<Tensor> out;
    for (auto& [name, t] : named_params()) out.push_back(t);
    return out;
  }

  std::size_t param_count() const {
    std::size_t n = 0;
    for (const auto& t : params()) n += t.size();
    return n;
  }

  std::uint64_t digest() const {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (const auto& t : params()) h = digest_doubles(t.values(), h);
    return h;
  }

  PromptState clone() const {
    PromptState p;
    p.cfg_ = cfg_;
    for (const auto& b : blocks_) p.blocks_.push_back(b.clone());
    if (cfg_.reparam == ReparamKind::kMlp) {
      p.mlp_w1_ = mlp_w1_.clone();
      p.mlp_b1_ = mlp_b1_.clone();
      p.mlp_w2_ = mlp_w2_.clone();
      p.mlp_b2_ = mlp_b2_.clone();
    }
    return p;
  }

 private:
  PromptConfig cfg_;
  std::vector<Tensor> blocks_;
  Tensor mlp_w1_, mlp_b1_, mlp_w2_, mlp_b2_;

  friend struct CheckpointCodec;
};

namespace detail {

struct LayerParams {
  Tensor ln1_g, ln1_b;
  Tensor wq, bq, wk, bk, wv, bv, wo, bo;
  Tensor ln2_g, ln2_b;
  Tensor w_ff1, b_ff1, w_ff2, b_ff2;
};

}  // namespace detail

/// Frozen-by-default transformer encoder with a linear classification head on
/// the [CLS] row. All parameters live here except the prompt block(s).
class ModelState {
 public:
  ModelState() = default;

  static ModelState init(const BackboneConfig& bcfg, const PromptConfig& pcfg, std::size_t vocab_size,
                         int num_classes) {
    bcfg.validate();
    pcfg.validate();
    if (vocab_size < 5) throw std::invalid_argument("ModelState: vocabulary too small");
    if (num_classes < 2) throw std::invalid_argument("ModelState: need at least 2 classes");
    ModelState m;
    m.bcfg_ = bcfg;
    m.pcfg_ = pcfg;
    m.vocab_size_ = vocab_size;
    m.num_classes_ = num_classes;
    Rng rng = make_rng(bcfg.seed, RngStream::kInit);
    const std::size_t d = bcfg.dim;
    m.tok_embed_ = Tensor::randn({vocab_size, d}, rng, bcfg.init_std, true);
    m.pos_embed_ = Tensor::randn({bcfg.max_len, d}, rng, bcfg.init_std, true);
    for (std::size_t l = 0; l < bcfg.layers; ++l) {
      detail::LayerParams lp;
      lp.ln1_g = Tensor::filled({d}, 1.0, true);
      lp.ln1_b = Tensor::zeros({d}, true);
      lp.wq = Tensor::randn({d, d}, rng, bcfg.init_std, true);
      lp.bq = Tensor::zeros({d}, true);
      lp.wk = Tensor::randn({d, d}, rng, bcfg.init_std, true);
      lp.bk = Tensor::zeros({d}, true);
      lp.wv = Tensor::randn({d, d}, rng, bcfg.init_std, true);
      lp.bv = Tensor::zeros({d}, true);
      lp.wo = Tensor::randn({d, d}, rng, bcfg.init_std, true);
      lp.bo = Tensor::zeros({d}, true);
      lp.ln2_g = Tensor::filled({d}, 1.0, true);
      lp.ln2_b = Tensor::zeros({d}, true);
      lp.w_ff1 = Tensor::randn({d, d * bcfg.ffn_mult}, rng, bcfg.init_std, true);
      lp.b_ff1 = Tensor::zeros({d * bcfg.ffn_mult}, true);
      lp.w_ff2 = Tensor::randn({d * bcfg.ffn_mult, d}, rng, bcfg.init_std, true);
      lp.b_ff2 = Tensor::zeros({d}, true);
      m.layers_.push_back(std::move(lp));
    }
    m.lnf_g = Tensor::filled({d}, 1.0, true);
    m.lnf_b = Tensor::zeros({d}, true);
    m.head_w = Tensor::randn({d, static_cast<std::size_t>(num_classes)}, rng, bcfg.init_std, true);
    m.head_b = Tensor::zeros({static_cast<std::size_t>(num_classes)}, true);
    return m;
  }

  const BackboneConfig& backbone_config() const { return bcfg_; }
  const PromptConfig& prompt_config() const { return pcfg_; }
  std::size_t vocab_size() const { return vocab_size_; }
  int num_classes() const { return num_classes_; }

  bool frozen() const { return frozen_; }
  void set_frozen(bool b) { frozen_ = b; }

  const Tensor& token_embedding() const { return tok_embed_; }
  Tensor& token_embedding() { return tok_embed_; }
  const Tensor& position_embedding() const { return pos_embed_; }

  Tensor& head_weight() { return head_w; }
  Tensor& head_bias() { return head_b; }

  std::vector<std::pair<std::string, Tensor>> named_backbone_params() const {
    std::vector<std::pair<std::string, Tensor>> out;
    out.emplace_back("tok_embed", tok_embed_);
    out.emplace_back("pos_embed", pos_embed_);
    for (std::size_t l = 0; l < layers_.size(); ++l) {
      const auto& lp = layers_[l];
      const std::string p = "layer" + std::to_string(l) + ".";
      out.emplace_back(p + "ln1_g", lp.ln1_g);
      out.emplace_back(p + "ln1_b", lp.ln1_b);
      out.emplace_back(p + "wq", lp.wq);
      out.emplace_back(p + "bq", lp.bq);
      out.emplace_back(p + "wk", lp.wk);
      out.emplace_back(p + "bk", lp.bk);
      out.emplace_back(p + "wv", lp.wv);
      out.emplace_back(p + "bv", lp.bv);
      out.emplace_back(p + "wo", lp.wo);
      out.emplace_back(p + "bo", lp.bo);
      out.emplace_back(p + "ln2_g", lp.ln2_g);
      out.emplace_back(p + "ln2_b", lp.ln2_b);
      out.emplace_back(p + "w_ff1", lp.w_ff1);
      out.emplace_back(p + "b_ff1", lp.b_ff1);
      out.emplace_back(p + "w_ff2", lp.w_ff2);
      out.emplace_back(p + "b_ff2", lp.b_ff2);
    }
    out.emplace_back("lnf_g", lnf_g);
    out.emplace_back("lnf_b", lnf_b);
    out.emplace_back("head_w", head_w);
    out.emplace_back("head_b", head_b);
    return out;
  }

  std::vector<Tensor> backbone_params() const {
    std::vector<Tensor> out;
    for (auto& [name, t] : named_backbone_params()) out.push_back(t);
    return out;
  }

  std::size_t backbone_param_count() const {
    std::size_t n = 0;
    for (const auto& t : backbone_params()) n += t.size();
    return n;
  }

  std::uint64_t backbone_digest() const {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (const auto& t : backbone_params()) h = digest_doubles(t.values(), h);
    return h;
  }

  void zero_all_grads() const {
    for (auto& t : backbone_params()) {
      Tensor tt = t;
      tt.zero_grad();
    }
  }

  ModelState clone() const {
    ModelState m;
    m.bcfg_ = bcfg_;
    m.pcfg_ = pcfg_;
    m.vocab_size_ = vocab_size_;
    m.num_classes_ = num_classes_;
    m.frozen_ = frozen_;
    m.tok_embed_ = tok_embed_.clone();
    m.pos_embed_ = pos_embed_.clone();
    for (const auto& lp : layers_) {
      detail::LayerParams c;
      c.ln1_g = lp.ln1_g.clone();
      c.ln1_b = lp.ln1_b.clone();
      c.wq = lp.wq.clone();
      c.bq = lp.bq.clone();
      c.wk = lp.wk.clone();
      c.bk = lp.bk.clone();
      c.wv = lp.wv.clone();
      c.bv = lp.bv.clone();
      c.wo = lp.wo.clone();
      c.bo = lp.bo.clone();
      c.ln2_g = lp.ln2_g.clone();
      c.ln2_b = lp.ln2_b.clone();
      c.w_ff1 = lp.w_ff1.clone();
      c.b_ff1 = lp.b_ff1.clone();
      c.w_ff2 = lp.w_ff2.clone();
      c.b_ff2 = lp.b_ff2.clone();
      m.layers_.push_back(std::move(c));
    }
    m.lnf_g = lnf_g.clone();
    m.lnf_b = lnf_b.clone();
    m.head_w = head_w.clone();
    m.head_b = head_b.clone();
    return m;
  }

  const std::vector<detail::LayerParams>& layers() const { return layers_; }

  Tensor lnf_g, lnf_b, head_w, head_b;

 private:
  BackboneConfig bcfg_;
  PromptConfig pcfg_;
  std::size_t vocab_size_ = 0;
  int num_classes_ = 0;
  bool frozen_ = true;
  Tensor tok_embed_, pos_embed_;
  std::vector<detail::LayerParams> layers_;

  friend struct CheckpointCodec;
};

/// Prompt rows (post-reparameterization) composed with the input embeddings.
struct ComposedInput {
  Tensor rows;                          // input-prepend: (m+n) x d; per-layer prefix: n x d
  std::vector<Tensor> layer_prefixes;   // per-layer prefix rows, empty in prepend mode
  std::size_t prompt_len = 0;
  std::size_t cls_row = 0;              // [CLS] row index within `rows`
};

/// Input embeddings for a token sequence. With `track_input_grad` the result
/// exposes d(loss)/d(E_s) after a backward pass even when the embedding table
/// itself is frozen.
inline Tensor embed(Tape& tape, const ModelState& state, const std::vector<int>& ids,
                    bool track_input_grad = false) {
  if (ids.size() + state.prompt_config().length > state.backbone_config().max_len)
    throw std::invalid_argument("embed: sequence of " + std::to_string(ids.size()) +
                                " tokens plus prompt exceeds max_len " +
                                std::to_string(state.backbone_config().max_len));
  Tensor es = embedding_lookup(tape, state.token_embedding(), ids);
  if (track_input_grad && !es.requires_grad()) es.set_requires_grad(true);
  return es;
}

inline ComposedInput compose(Tape& tape, const ModelState& state, const PromptState& prompt,
                             const Tensor& es) {
  if (es.rank() != 2 || es.shape()[1] != state.backbone_config().dim)
    throw std::invalid_argument("compose: input embeddings must be n x dim");
  ComposedInput out;
  out.prompt_len = prompt.config().length;
  if (prompt.config().mode == PromptMode::kInputPrepend) {
    Tensor pr = prompt.reparam_rows(tape, prompt.blocks().at(0));
    out.rows = concat_rows(tape, pr, es);
    out.cls_row = out.prompt_len;
  } else {
    if (prompt.blocks().size() != state.backbone_config().layers)
      throw std::invalid_argument("compose: per-layer prefix needs one block per layer");
    out.rows = es;
    out.cls_row = 0;
    for (const auto& raw : prompt.blocks()) out.layer_prefixes.push_back(prompt.reparam_rows(tape, raw));
  }
  return out;
}

namespace detail {

inline std::vector<int> iota_ids(std::size_t from, std::size_t count) {
  std::vector<int> ids(count);
  for (std::size_t i = 0; i < count; ++i) ids[i] = static_cast<int>(from + i);
  return ids;
}

inline Tensor multi_head_attention(Tape& tape, const ModelState& state, const detail::LayerParams& lp,
                                   const Tensor& q_in, const Tensor& kv_in) {
  const std::size_t d = state.backbone_config().dim;
  const std::size_t h = state.backbone_config().heads;
  const std::size_t dh = d / h;
  Tensor q = add_bias(tape, matmul(tape, q_in, lp.wq), lp.bq);
  Tensor k = add_bias(tape, matmul(tape, kv_in, lp.wk), lp.bk);
  Tensor v = add_bias(tape, matmul(tape, kv_in, lp.wv), lp.bv);
  Tensor heads;
  for (std::size_t i = 0; i < h; ++i) {
    Tensor qh = slice_cols(tape, q, i * dh, (i + 1) * dh);
    Tensor kh = slice_cols(tape, k, i * dh, (i + 1) * dh);
    Tensor vh = slice_cols(tape, v, i * dh, (i + 1) * dh);
    Tensor scores = scale(tape, matmul(tape, qh, transpose(tape, kh)), 1.0 / std::sqrt(static_cast<double>(dh)));
    Tensor probs = softmax_rows(tape, scores);
    Tensor oh = matmul(tape, probs, vh);
    heads = i == 0 ? oh : concat_cols(tape, heads, oh);
  }
  return add_bias(tape, matmul(tape, heads, lp.wo), lp.bo);
}

}  // namespace detail

/// Encoder stack over the composed input; returns K-class logits read at the
/// [CLS] row. In per-layer prefix mode each layer's attention keys/values are
/// extended with that layer's prompt rows (placed at positions 0..m-1).
inline Tensor forward(Tape& tape, const ModelState& state, const ComposedInput& input) {
  const auto& bcfg = state.backbone_config();
  const bool prefix_mode = !input.layer_prefixes.empty();
  const std::size_t m = input.prompt_len;
  const std::size_t t_rows = input.rows.shape()[0];
  const std::size_t pos_base = prefix_mode ? m : 0;
  if (pos_base + t_rows > bcfg.max_len)
    throw std::invalid_argument("forward: sequence exceeds max_len");

  Tensor x = input.rows;
  if (bcfg.use_positions) {
    Tensor pos = embedding_lookup(tape, state.position_embedding(), detail::iota_ids(pos_base, t_rows));
    x = add(tape, x, pos);
  }
  for (std::size_t l = 0; l < bcfg.layers; ++l) {
    const auto& lp = state.layers()[l];
    Tensor a_in = layer_norm(tape, x, lp.ln1_g, lp.ln1_b);
    Tensor kv_in = a_in;
    if (prefix_mode) {
      Tensor pref = input.layer_prefixes[l];
      if (bcfg.use_positions) {
        Tensor ppos = embedding_lookup(tape, state.position_embedding(), detail::iota_ids(0, m));
        pref = add(tape, pref, ppos);
      }
      Tensor pref_ln = layer_norm(tape, pref, lp.ln1_g, lp.ln1_b);
      kv_in = concat_rows(tape, pref_ln, a_in);
    }
    Tensor attn = detail::multi_head_attention(tape, state, lp, a_in, kv_in);
    x = add(tape, x, attn);
    Tensor f_in = layer_norm(tape, x, lp.ln2_g, lp.ln2_b);
    Tensor f = add_bias(tape, matmul(tape, f_in, lp.w_ff1), lp.b_ff1);
    f = gelu(tape, f);
    f = add_bias(tape, matmul(tape, f, lp.w_ff2), lp.b_ff2);
    x = add(tape, x, f);
  }
  x = layer_norm(tape, x, state.lnf_g, state.lnf_b);
  Tensor cls = slice_rows(tape, x, input.cls_row, input.cls_row + 1);
  Tensor logits = add_bias(tape, matmul(tape, cls, state.head_w), state.head_b);
  return reshape(tape, logits, {static_cast<std::size_t>(state.num_classes())});
}

/// Forward pass from token ids; no gradients recorded.
inline Tensor forward_tokens(const ModelState& state, const PromptState& prompt,
                             const std::vector<int>& ids) {
  Tape tape(/*recording=*/false);
  Tensor es = embed(tape, state, ids);
  return forward(tape, state, compose(tape, state, prompt, es));
}

/// Argmax class of the forward logits; ties break toward the lowest index.
inline int argmax_class(const Tensor& logits) {
  int best = 0;
  for (std::size_t j = 1; j < logits.size(); ++j)
    if (logits.values()[j] > logits.values()[static_cast<std::size_t>(best)]) best = static_cast<int>(j);
  return best;
}

inline int predict(const ModelState& state, const PromptState& prompt, const std::vector<int>& ids) {
  return argmax_class(forward_tokens(state, prompt, ids));
}

// ---------------------------------------------------------------------------
// Checkpoint format: versioned binary dump of every parameter array. Doubles
// are written raw so save/load round-trips bitwise.
// ---------------------------------------------------------------------------

struct CheckpointCodec {
  static constexpr char kMagic[8] = {'P', 'T', 'P', 'C', 'K', 'P', 'T', '1'};

  template <typename T>
  static void put(std::ostream& os, const T& v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
  }
  template <typename T>
  static T get(std::istream& is) {
    T v{};
    is.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!is) throw std::runtime_error("checkpoint: truncated file");
    return v;
  }

  static void put_tensor(std::ostream& os, const std::string& name, const Tensor& t) {
    put<std::uint32_t>(os, static_cast<std::uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    put<std::uint32_t>(os, static_cast<std::uint32_t>(t.rank()));
    for (std::size_t d : t.shape()) put<std::uint64_t>(os, d);
    os.write(reinterpret_cast<const char*>(t.values().data()),
             static_cast<std::streamsize>(t.size() * sizeof(double)));
  }

  static std::pair<std::string, Tensor> get_tensor(std::istream& is) {
    const auto name_len = get<std::uint32_t>(is);
    std::string name(name_len, '\0');
    is.read(name.data(), name_len);
    const auto rank = get<std::uint32_t>(is);
    Shape shape(rank);
    for (auto& d : shape) d = static_cast<std::size_t>(get<std::uint64_t>(is));
    Tensor t = Tensor::zeros(shape);
    is.read(reinterpret_cast<char*>(t.values().data()),
            static_cast<std::streamsize>(t.size() * sizeof(double)));
    if (!is) throw std::runtime_error("checkpoint: truncated tensor data for '" + name + "'");
    return {name, t};
  }

  static void save(std::ostream& os, const ModelState& model, const PromptState& prompt) {
    os.write(kMagic, sizeof(kMagic));
    put<std::uint32_t>(os, 1);  // version
    const auto& b = model.bcfg_;
    put<std::uint64_t>(os, b.layers);
    put<std::uint64_t>(os, b.dim);
    put<std::uint64_t>(os, b.heads);
    put<std::uint64_t>(os, b.ffn_mult);
    put<std::uint64_t>(os, b.max_len);
    put<std::uint8_t>(os, b.use_positions ? 1 : 0);
    put<double>(os, b.init_std);
    put<std::uint64_t>(os, b.seed);
    const auto& p = model.pcfg_;
    put<std::uint8_t>(os, p.mode == PromptMode::kPerLayerPrefix ? 1 : 0);
    put<std::uint64_t>(os, p.length);
    put<std::uint8_t>(os, p.reparam == ReparamKind::kMlp ? 1 : 0);
    put<std::uint64_t>(os, p.reparam_hidden);
    put<std::uint64_t>(os, model.vocab_size_);
    put<std::int32_t>(os, model.num_classes_);
    put<std::uint8_t>(os, model.frozen_ ? 1 : 0);

    auto arrays = model.named_backbone_params();
    for (auto& [name, t] : prompt.named_params()) arrays.emplace_back(name, t);
    put<std::uint32_t>(os, static_cast<std::uint32_t>(arrays.size()));
    for (const auto& [name, t] : arrays) put_tensor(os, name, t);
  }

  static std::pair<ModelState, PromptState> load(std::istream& is) {
    char magic[8];
    is.read(magic, sizeof(magic));
    if (!is || !std::equal(magic, magic + 8, kMagic))
      throw std::runtime_error("checkpoint: bad magic");
    const auto version = get<std::uint32_t>(is);
    if (version != 1) throw std::runtime_error("checkpoint: unsupported version " + std::to_string(version));
    BackboneConfig b;
    b.layers = static_cast<std::size_t>(get<std::uint64_t>(is));
    b.dim = static_cast<std::size_t>(get<std::uint64_t>(is));
    b.heads = static_cast<std::size_t>(get<std::uint64_t>(is));
    b.ffn_mult = static_cast<std::size_t>(get<std::uint64_t>(is));
    b.max_len = static_cast<std::size_t>(get<std::uint64_t>(is));
    b.use_positions = get<std::uint8_t>(is) != 0;
    b.init_std = get<double>(is);
    b.seed = get<std::uint64_t>(is);
    PromptConfig p;
    p.mode = get<std::uint8_t>(is) != 0 ? PromptMode::kPerLayerPrefix : PromptMode::kInputPrepend;
    p.length = static_cast<std::size_t>(get<std::uint64_t>(is));
    p.reparam = get<std::uint8_t>(is) != 0 ? ReparamKind::kMlp : ReparamKind::kIdentity;
    p.reparam_hidden = static_cast<std::size_t>(get<std::uint64_t>(is));
    const auto vocab_size = static_cast<std::size_t>(get<std::uint64_t>(is));
    const auto num_classes = get<std::int32_t>(is);
    const bool frozen = get<std::uint8_t>(is) != 0;

    ModelState model = ModelState::init(b, p, vocab_size, num_classes);
    model.set_frozen(frozen);
    PromptState prompt = PromptState::init(p, b, /*seed=*/0);

    std::vector<std::pair<std::string, Tensor>> dests = model.named_backbone_params();
    for (auto& [name, t] : prompt.named_params()) dests.emplace_back(name, t);

    const auto count = get<std::uint32_t>(is);
    if (count != dests.size()) throw std::runtime_error("checkpoint: array count mismatch");
    for (std::uint32_t i = 0; i < count; ++i) {
      auto [name, loaded] = get_tensor(is);
      bool found = false;
      for (auto& [dname, dt] : dests) {
        if (dname != name) continue;
        if (dt.shape() != loaded.shape())
          throw std::runtime_error("checkpoint: shape mismatch for '" + name + "'");
        Tensor dst = dt;
        dst.values() = loaded.values();
        found = true;
        break;
      }
      if (!found) throw std::runtime_error("checkpoint: unknown array '" + name + "'");
    }
    return {std::move(model), std::move(prompt)};
  }
};

inline void save_checkpoint(const std::string& path, const ModelState& model, const PromptState& prompt) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("save_checkpoint: cannot open '" + path + "'");
  CheckpointCodec::save(os, model, prompt);
  if (!os) throw std::runtime_error("save_checkpoint: write failed for '" + path + "'");
}

inline std::pair<ModelState, PromptState> load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("load_checkpoint: cannot open '" + path + "'");
  return CheckpointCodec::load(is);
}

}  // namespace ptp
