#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include "ptp/model.hpp"
#include "ptp/rng.hpp"
#include "ptp/tensor.hpp"
#include "ptp/vocab.hpp"

namespace ptp {

// ---------------------------------------------------------------------------
// Perturbation specs
// ---------------------------------------------------------------------------

/// Gaussian noise on `count` randomly chosen embedding rows.
struct RgSpec {
  double sigma = 1e-3;
  std::size_t count = 5;
  bool operator==(const RgSpec&) const = default;
  void validate() const {
    if (sigma < 0.0) throw std::invalid_argument("RgSpec: sigma must be >= 0");
  }
};

/// Random [MASK] replacement of `count` token positions.
struct RmSpec {
  std::size_t count = 3;
  bool operator==(const RmSpec&) const = default;
  void validate() const {}
};

/// Multi-step PGD in embedding space, l-inf ball of radius eps.
struct PgdSpec {
  double alpha = 1e-3;
  double eps = 1e-2;
  std::size_t iters = 4;
  bool use_sign = true;
  bool operator==(const PgdSpec&) const = default;
  void validate() const {
    if (alpha <= 0.0) throw std::invalid_argument("PgdSpec: alpha must be > 0");
    if (eps < 0.0) throw std::invalid_argument("PgdSpec: eps must be >= 0");
    if (iters < 1) throw std::invalid_argument("PgdSpec: iters must be >= 1");
  }
};

/// Greedy gradient-guided word substitution under a sentence-similarity bound.
struct A2tSpec {
  double min_cos = 0.8;
  double max_swap_frac = 0.2;
  std::size_t knn = 8;
  bool operator==(const A2tSpec&) const = default;
  void validate() const {
    if (min_cos < 0.0 || min_cos > 1.0) throw std::invalid_argument("A2tSpec: min_cos must be in [0, 1]");
    if (max_swap_frac < 0.0 || max_swap_frac > 1.0)
      throw std::invalid_argument("A2tSpec: max_swap_frac must be in [0, 1]");
  }
};

using PerturbationSpec = std::variant<RgSpec, RmSpec, PgdSpec, A2tSpec>;

inline void validate_spec(const PerturbationSpec& spec) {
  std::visit([](const auto& s) { s.validate(); }, spec);
}

inline std::string spec_kind(const PerturbationSpec& spec) {
  struct V {
    std::string operator()(const RgSpec&) const { return "rg"; }
    std::string operator()(const RmSpec&) const { return "rm"; }
    std::string operator()(const PgdSpec&) const { return "pgd"; }
    std::string operator()(const A2tSpec&) const { return "a2t"; }
  };
  return std::visit(V{}, spec);
}

inline std::string spec_describe(const PerturbationSpec& spec) {
  std::ostringstream os;
  struct V {
    std::ostringstream& os;
    void operator()(const RgSpec& s) const { os << "rg(sigma=" << s.sigma << ",count=" << s.count << ")"; }
    void operator()(const RmSpec& s) const { os << "rm(count=" << s.count << ")"; }
    void operator()(const PgdSpec& s) const {
      os << "pgd(alpha=" << s.alpha << ",eps=" << s.eps << ",iters=" << s.iters
         << ",use_sign=" << (s.use_sign ? "true" : "false") << ")";
    }
    void operator()(const A2tSpec& s) const {
      os << "a2t(min_cos=" << s.min_cos << ",max_swap_frac=" << s.max_swap_frac << ",knn=" << s.knn << ")";
    }
  };
  std::visit(V{os}, spec);
  return os.str();
}

/// Result of one operator application: an embedding-space delta or an edited
/// token sequence, tagged with the operator that produced it.
struct Perturbation {
  enum class Space { kEmbedding, kText };
  Space space = Space::kEmbedding;
  std::string provenance;
  Tensor delta;                  // embedding space: same shape as E_s
  std::vector<int> tokens;       // text space: edited sequence, same length as input
};

// ---------------------------------------------------------------------------
// Operators
// ---------------------------------------------------------------------------

/// Adds N(0, sigma^2 I_d) noise to `count` distinct rows chosen uniformly
/// without replacement. All other rows are returned bitwise unchanged.
inline Tensor rg_perturb(const Tensor& es, const RgSpec& spec, Rng& rng) {
  spec.validate();
  if (es.rank() != 2) throw std::invalid_argument("rg_perturb: E_s must be rank-2");
  const std::size_t n = es.shape()[0], d = es.shape()[1];
  if (spec.count > n)
    throw std::invalid_argument("rg_perturb: count " + std::to_string(spec.count) + " exceeds " +
                                std::to_string(n) + " rows");
  Tensor out = Tensor::from_data(es.shape(), es.values());
  const auto rows = sample_without_replacement(rng, n, spec.count);
  for (std::size_t r : rows)
    for (std::size_t j = 0; j < d; ++j) out.values()[r * d + j] += rand_normal(rng, spec.sigma);
  return out;
}

/// Replaces `count` distinct maskable positions (never [CLS]) with [MASK].
/// No objective is ever attached to the masked positions.
inline std::vector<int> rm_perturb(const std::vector<int>& tokens, const RmSpec& spec, Rng& rng) {
  spec.validate();
  std::vector<std::size_t> maskable;
  for (std::size_t i = 0; i < tokens.size(); ++i)
    if (tokens[i] != Vocabulary::kCls) maskable.push_back(i);
  if (spec.count > maskable.size())
    throw std::invalid_argument("rm_perturb: count " + std::to_string(spec.count) + " exceeds " +
                                std::to_string(maskable.size()) + " maskable positions");
  std::vector<int> out = tokens;
  for (std::size_t k : sample_without_replacement(rng, maskable.size(), spec.count))
    out[maskable[k]] = Vocabulary::kMask;
  return out;
}

/// Per-coordinate clamp of delta into [-eps, +eps].
inline Tensor linf_project(const Tensor& delta, double eps) {
  Tensor out = Tensor::from_data(delta.shape(), delta.values());
  for (double& v : out.values()) v = std::clamp(v, -eps, eps);
  return out;
}

namespace detail {

inline double sign(double x) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); }

inline bool all_finite(const std::vector<double>& v) {
  for (double x : v)
    if (!std::isfinite(x)) return false;
  return true;
}

}  // namespace detail

/// Iterative loss ascent on an embedding matrix: delta starts at zero, each
/// step adds alpha * grad (or its sign) and re-projects into the l-inf ball.
/// `loss_fn` must build a scalar loss from the perturbed embeddings on the
/// given tape. The optional observer sees delta after every projection.
inline Tensor pgd_ascend(const std::function<Tensor(Tape&, const Tensor&)>& loss_fn, const Tensor& e0,
                         const PgdSpec& spec,
                         const std::function<void(std::size_t, const Tensor&)>& observer = {}) {
  spec.validate();
  std::vector<double> delta(e0.size(), 0.0);
  for (std::size_t it = 1; it <= spec.iters; ++it) {
    Tape tape;
    std::vector<double> perturbed = e0.values();
    for (std::size_t i = 0; i < perturbed.size(); ++i) perturbed[i] += delta[i];
    Tensor e = Tensor::from_data(e0.shape(), std::move(perturbed), /*requires_grad=*/true);
    Tensor loss = loss_fn(tape, e);
    tape.backward(loss);
    const std::vector<double>& g = e.grad();
    if (!detail::all_finite(g))
      throw std::runtime_error("pgd_ascend: non-finite gradient at iteration " + std::to_string(it));
    for (std::size_t i = 0; i < delta.size(); ++i) {
      delta[i] += spec.alpha * (spec.use_sign ? detail::sign(g[i]) : g[i]);
      delta[i] = std::clamp(delta[i], -spec.eps, spec.eps);
    }
    if (observer) observer(it, Tensor::from_data(e0.shape(), delta));
  }
  std::vector<double> result = e0.values();
  for (std::size_t i = 0; i < result.size(); ++i) result[i] += delta[i];
  return Tensor::from_data(e0.shape(), std::move(result));
}

/// PGD on the model's cross-entropy loss with prompts composed in. Model and
/// prompt parameters receive no update; their accumulated gradients are
/// zeroed before returning.
inline Tensor pgd_perturb(const ModelState& state, const PromptState& prompt, const Tensor& es, int label,
                          const PgdSpec& spec,
                          const std::function<void(std::size_t, const Tensor&)>& observer = {}) {
  auto loss_fn = [&](Tape& tape, const Tensor& e) {
    ComposedInput input = compose(tape, state, prompt, e);
    Tensor logits = forward(tape, state, input);
    return softmax_cross_entropy(tape, logits, label);
  };
  Tensor out = pgd_ascend(loss_fn, es, spec, observer);
  for (auto& t : state.backbone_params()) {
    Tensor tt = t;
    tt.zero_grad();
  }
  for (auto& t : prompt.params()) {
    Tensor tt = t;
    tt.zero_grad();
  }
  return out;
}

/// Cross-entropy of a single example on a non-recording tape.
inline double example_loss(const ModelState& state, const PromptState& prompt,
                           const std::vector<int>& tokens, int label) {
  Tape tape(/*recording=*/false);
  Tensor es = embed(tape, state, tokens);
  Tensor logits = forward(tape, state, compose(tape, state, prompt, es));
  return softmax_cross_entropy(tape, logits, label).item();
}

/// Positions ranked by descending l2 norm of the loss gradient w.r.t. that
/// position's input embedding row. [CLS] and [MASK] positions are excluded.
inline std::vector<std::size_t> word_importance(const ModelState& state, const PromptState& prompt,
                                                const std::vector<int>& tokens, int label) {
  Tape tape;
  Tensor es = embed(tape, state, tokens, /*track_input_grad=*/true);
  Tensor logits = forward(tape, state, compose(tape, state, prompt, es));
  Tensor loss = softmax_cross_entropy(tape, logits, label);
  tape.backward(loss);
  const std::size_t d = es.shape()[1];
  const std::vector<double>& g = es.grad();
  std::vector<std::pair<double, std::size_t>> ranked;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (tokens[i] == Vocabulary::kCls || tokens[i] == Vocabulary::kMask) continue;
    double norm2 = 0.0;
    for (std::size_t j = 0; j < d; ++j) norm2 += g[i * d + j] * g[i * d + j];
    ranked.emplace_back(std::sqrt(norm2), i);
  }
  std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first > b.first;
    return a.second < b.second;
  });
  // Zero all accumulated gradients (generation must not leak into updates).
  for (auto& t : state.backbone_params()) {
    Tensor tt = t;
    tt.zero_grad();
  }
  for (auto& t : prompt.params()) {
    Tensor tt = t;
    tt.zero_grad();
  }
  std::vector<std::size_t> order;
  for (const auto& [norm, pos] : ranked) order.push_back(pos);
  return order;
}

/// The `knn` nearest vocabulary tokens by cosine similarity in the frozen
/// embedding table, excluding reserved ids and the query token. Ties break
/// toward the lower id.
inline std::vector<int> candidate_substitutes(const ModelState& state, int token, std::size_t knn) {
  if (Vocabulary::is_reserved(token))
    throw std::invalid_argument("candidate_substitutes: token " + std::to_string(token) + " is reserved");
  const Tensor& table = state.token_embedding();
  const std::size_t v = table.shape()[0], d = table.shape()[1];
  if (token < 0 || static_cast<std::size_t>(token) >= v)
    throw std::out_of_range("candidate_substitutes: token out of vocabulary");
  if (knn == 0) return {};
  const double* base = table.values().data() + static_cast<std::size_t>(token) * d;
  double qnorm = 0.0;
  for (std::size_t j = 0; j < d; ++j) qnorm += base[j] * base[j];
  qnorm = std::sqrt(qnorm);
  std::vector<std::pair<double, int>> scored;
  for (std::size_t c = Vocabulary::kNumReserved; c < v; ++c) {
    if (static_cast<int>(c) == token) continue;
    const double* row = table.values().data() + c * d;
    double dot = 0.0, norm = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      dot += base[j] * row[j];
      norm += row[j] * row[j];
    }
    const double denom = qnorm * std::sqrt(norm);
    scored.emplace_back(denom > 0.0 ? dot / denom : 0.0, static_cast<int>(c));
  }
  std::sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first > b.first;
    return a.second < b.second;
  });
  if (scored.size() > knn) scored.resize(knn);
  std::vector<int> out;
  for (const auto& [sim, id] : scored) out.push_back(id);
  return out;
}

/// Cosine similarity of the mean-pooled embeddings of two token sequences
/// ([CLS] excluded from the pool). Stands in for a sentence encoder.
inline double sentence_cosine(const ModelState& state, const std::vector<int>& a, const std::vector<int>& b) {
  const Tensor& table = state.token_embedding();
  const std::size_t d = table.shape()[1];
  auto pool = [&](const std::vector<int>& ids) {
    std::vector<double> m(d, 0.0);
    std::size_t n = 0;
    for (int id : ids) {
      if (id == Vocabulary::kCls) continue;
      const double* row = table.values().data() + static_cast<std::size_t>(id) * d;
      for (std::size_t j = 0; j < d; ++j) m[j] += row[j];
      ++n;
    }
    if (n > 0)
      for (double& x : m) x /= static_cast<double>(n);
    return m;
  };
  const auto ma = pool(a), mb = pool(b);
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t j = 0; j < d; ++j) {
    dot += ma[j] * mb[j];
    na += ma[j] * ma[j];
    nb += mb[j] * mb[j];
  }
  const double denom = std::sqrt(na) * std::sqrt(nb);
  return denom > 0.0 ? dot / denom : 0.0;
}

/// Greedy word substitution in word-importance order: each accepted swap must
/// raise the loss and keep the sentence cosine similarity to the original at
/// or above min_cos. Swap budget is max_swap_frac of the non-[CLS] length;
/// the search stops early when the prediction flips.
inline std::vector<int> a2t_perturb(const ModelState& state, const PromptState& prompt,
                                    const std::vector<int>& tokens, int label, const A2tSpec& spec) {
  spec.validate();
  std::size_t n_content = 0;
  for (int t : tokens)
    if (t != Vocabulary::kCls) ++n_content;
  const std::size_t budget = static_cast<std::size_t>(spec.max_swap_frac * static_cast<double>(n_content));
  if (budget == 0 || spec.knn == 0) return tokens;

  std::vector<int> current = tokens;
  double current_loss = example_loss(state, prompt, current, label);
  std::size_t swaps = 0;
  for (std::size_t pos : word_importance(state, prompt, tokens, label)) {
    if (swaps >= budget) break;
    if (Vocabulary::is_reserved(current[pos])) continue;
    double best_loss = current_loss;
    int best_token = -1;
    for (int cand : candidate_substitutes(state, current[pos], spec.knn)) {
      std::vector<int> trial = current;
      trial[pos] = cand;
      if (sentence_cosine(state, tokens, trial) < spec.min_cos) continue;
      const double trial_loss = example_loss(state, prompt, trial, label);
      if (trial_loss > best_loss) {
        best_loss = trial_loss;
        best_token = cand;
      }
    }
    if (best_token >= 0) {
      current[pos] = best_token;
      current_loss = best_loss;
      ++swaps;
      if (predict(state, prompt, current) != label) break;
    }
  }
  return current;
}

/// Applies the selected operator to one example. Embedding-space operators
/// report a delta over E_s; text-space operators report the edited sequence.
inline Perturbation apply_perturbation(const ModelState& state, const PromptState& prompt,
                                       const std::vector<int>& tokens, int label,
                                       const PerturbationSpec& spec, Rng& rng) {
  Perturbation p;
  p.provenance = spec_describe(spec);
  if (const auto* rg = std::get_if<RgSpec>(&spec)) {
    Tape tape(/*recording=*/false);
    Tensor es = embed(tape, state, tokens);
    Tensor perturbed = rg_perturb(es, *rg, rng);
    p.space = Perturbation::Space::kEmbedding;
    std::vector<double> dv = perturbed.values();
    for (std::size_t i = 0; i < dv.size(); ++i) dv[i] -= es.values()[i];
    p.delta = Tensor::from_data(es.shape(), std::move(dv));
  } else if (const auto* rm = std::get_if<RmSpec>(&spec)) {
    p.space = Perturbation::Space::kText;
    p.tokens = rm_perturb(tokens, *rm, rng);
  } else if (const auto* pgd = std::get_if<PgdSpec>(&spec)) {
    Tape tape(/*recording=*/false);
    Tensor es = embed(tape, state, tokens);
    Tensor perturbed = pgd_perturb(state, prompt, es, label, *pgd);
    p.space = Perturbation::Space::kEmbedding;
    std::vector<double> dv = perturbed.values();
    for (std::size_t i = 0; i < dv.size(); ++i) dv[i] -= es.values()[i];
    p.delta = Tensor::from_data(es.shape(), std::move(dv));
  } else if (const auto* a2t = std::get_if<A2tSpec>(&spec)) {
    p.space = Perturbation::Space::kText;
    p.tokens = a2t_perturb(state, prompt, tokens, label, *a2t);
  }
  return p;
}

}  // namespace ptp
