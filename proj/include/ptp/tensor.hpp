#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "ptp/rng.hpp"

namespace ptp {

using Shape = std::vector<std::size_t>;

constexpr double kLayerNormEps = 1e-5;

namespace detail {

inline std::size_t shape_numel(const Shape& s) {
  std::size_t n = 1;
  for (std::size_t d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

struct TensorNode {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // empty until the node participates in a backward pass
  bool requires_grad = false;

  void ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
  }
};

}  // namespace detail

/// Dense tensor of 64-bit reals. A Tensor is a shared handle to its storage;
/// primitives below build new tensors and register gradient rules on a Tape.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    return filled(std::move(shape), 0.0, requires_grad);
  }

  static Tensor filled(Shape shape, double v, bool requires_grad = false) {
    auto node = std::make_shared<detail::TensorNode>();
    node->value.assign(detail::shape_numel(shape), v);
    node->shape = std::move(shape);
    Tensor t(std::move(node));
    if (requires_grad) t.set_requires_grad(true);
    return t;
  }

  static Tensor from_data(Shape shape, std::vector<double> data, bool requires_grad = false) {
    if (detail::shape_numel(shape) != data.size())
      throw std::invalid_argument("Tensor::from_data: data length " + std::to_string(data.size()) +
                                  " does not match shape " + detail::shape_str(shape));
    auto node = std::make_shared<detail::TensorNode>();
    node->shape = std::move(shape);
    node->value = std::move(data);
    Tensor t(std::move(node));
    if (requires_grad) t.set_requires_grad(true);
    return t;
  }

  static Tensor scalar(double v, bool requires_grad = false) {
    return from_data({1}, {v}, requires_grad);
  }

  static Tensor randn(Shape shape, Rng& rng, double stddev = 1.0, bool requires_grad = false) {
    Tensor t = zeros(std::move(shape), requires_grad);
    for (double& x : t.values()) x = rand_normal(rng, stddev);
    return t;
  }

  bool defined() const { return node_ != nullptr; }

  const Shape& shape() const { return node()->shape; }
  std::size_t rank() const { return node()->shape.size(); }
  std::size_t size() const { return node()->value.size(); }

  std::size_t rows() const {
    const Shape& s = shape();
    return s.empty() ? 1 : s[0];
  }
  std::size_t cols() const {
    const Shape& s = shape();
    return s.size() < 2 ? (s.empty() ? 1 : s[0]) : s[1];
  }

  std::vector<double>& values() { return node()->value; }
  const std::vector<double>& values() const { return node()->value; }

  double& at(std::size_t i) { return node()->value.at(i); }
  double at(std::size_t i) const { return node()->value.at(i); }
  double& at(std::size_t r, std::size_t c) {
    if (rank() != 2) throw std::invalid_argument("Tensor::at(r,c) requires rank 2");
    return node()->value.at(r * shape()[1] + c);
  }
  double at(std::size_t r, std::size_t c) const {
    if (rank() != 2) throw std::invalid_argument("Tensor::at(r,c) requires rank 2");
    return node()->value.at(r * shape()[1] + c);
  }

  /// Value of a single-element tensor.
  double item() const {
    if (size() != 1) throw std::invalid_argument("Tensor::item: tensor is not a scalar");
    return node()->value[0];
  }

  bool requires_grad() const { return node()->requires_grad; }
  void set_requires_grad(bool b) {
    node()->requires_grad = b;
    if (b) node()->ensure_grad();
  }

  const std::vector<double>& grad() const {
    if (node()->grad.size() != node()->value.size())
      throw std::invalid_argument("Tensor::grad: no gradient buffer (tensor never required grad)");
    return node()->grad;
  }
  std::vector<double>& grad() {
    node()->ensure_grad();
    return node()->grad;
  }

  void zero_grad() {
    if (!node()->grad.empty()) std::fill(node()->grad.begin(), node()->grad.end(), 0.0);
  }

  /// Deep copy: fresh storage, same values, zeroed gradient.
  Tensor clone() const {
    Tensor t = from_data(shape(), values());
    t.set_requires_grad(requires_grad());
    return t;
  }

  bool same_storage(const Tensor& other) const { return node_ == other.node_; }

  std::shared_ptr<detail::TensorNode> node_ptr() const { return node_; }

 private:
  explicit Tensor(std::shared_ptr<detail::TensorNode> node) : node_(std::move(node)) {}

  detail::TensorNode* node() const {
    if (!node_) throw std::invalid_argument("Tensor: undefined handle");
    return node_.get();
  }

  std::shared_ptr<detail::TensorNode> node_;
};

/// Ordered record of one forward pass. Primitives push a pull-back closure per
/// op; backward() replays them in reverse. Rebuilt (or cleared) per pass.
class Tape {
 public:
  explicit Tape(bool recording = true) : recording_(recording) {}

  bool recording() const { return recording_; }
  void set_recording(bool b) { recording_ = b; }

  void record(const Tensor& out, std::function<void()> pull) {
    steps_.push_back(Step{out.node_ptr(), std::move(pull)});
  }

  std::size_t op_count() const { return steps_.size(); }

  /// Reverse sweep from a scalar loss recorded on this tape. Gradients of op
  /// outputs are recomputed from scratch; gradients of leaf tensors
  /// (parameters, inputs) accumulate additively until zeroed by the caller.
  void backward(const Tensor& loss) {
    if (!loss.defined() || loss.size() != 1)
      throw std::invalid_argument("Tape::backward: loss must be a scalar tensor");
    detail::TensorNode* loss_node = loss.node_ptr().get();
    bool on_tape = false;
    for (const Step& s : steps_) {
      if (s.out.get() == loss_node) {
        on_tape = true;
        break;
      }
    }
    if (!on_tape) throw std::invalid_argument("Tape::backward: loss was not produced on this tape");

    for (Step& s : steps_) {
      s.out->ensure_grad();
      std::fill(s.out->grad.begin(), s.out->grad.end(), 0.0);
    }
    loss_node->grad[0] = 1.0;
    for (auto it = steps_.rbegin(); it != steps_.rend(); ++it) it->pull();
  }

  /// Drops recorded steps. Never touches tensor values.
  void clear() { steps_.clear(); }

 private:
  struct Step {
    std::shared_ptr<detail::TensorNode> out;
    std::function<void()> pull;
  };
  std::vector<Step> steps_;
  bool recording_;
};

namespace detail {

inline bool grad_wanted(const Tape& tape, std::initializer_list<const Tensor*> inputs) {
  if (!tape.recording()) return false;
  for (const Tensor* t : inputs)
    if (t->requires_grad()) return true;
  return false;
}

inline void check_rank2(const Tensor& t, const char* op) {
  if (t.rank() != 2) throw std::invalid_argument(std::string(op) + ": expected rank-2 tensor, got " + shape_str(t.shape()));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Primitives. Each computes its value eagerly and, when any input requires
// grad and the tape is recording, registers the matching pull-back.
// ---------------------------------------------------------------------------

inline Tensor matmul(Tape& tape, const Tensor& a, const Tensor& b) {
  detail::check_rank2(a, "matmul");
  detail::check_rank2(b, "matmul");
  const std::size_t m = a.shape()[0], k = a.shape()[1], k2 = b.shape()[0], n = b.shape()[1];
  if (k != k2)
    throw std::invalid_argument("matmul: inner dimensions disagree: " + detail::shape_str(a.shape()) +
                                " x " + detail::shape_str(b.shape()));
  Tensor out = Tensor::zeros({m, n});
  {
    const double* pa = a.values().data();
    const double* pb = b.values().data();
    double* po = out.values().data();
    for (std::size_t i = 0; i < m; ++i) {
      const double* arow = pa + i * k;
      double* orow = po + i * n;
      for (std::size_t p = 0; p < k; ++p) {
        const double av = arow[p];
        const double* brow = pb + p * n;
        for (std::size_t j = 0; j < n; ++j) orow[j] += av * brow[j];
      }
    }
  }
  if (detail::grad_wanted(tape, {&a, &b})) {
    out.set_requires_grad(true);
    auto an = a.node_ptr(), bn = b.node_ptr(), on = out.node_ptr();
    const bool ga = a.requires_grad(), gb = b.requires_grad();
    tape.record(out, [an, bn, on, m, k, n, ga, gb] {
      const double* g = on->grad.data();
      if (ga) {
        an->ensure_grad();
        double* da = an->grad.data();
        const double* pb = bn->value.data();
        // dA += dOut * B^T
        for (std::size_t i = 0; i < m; ++i) {
          const double* grow = g + i * n;
          double* darow = da + i * k;
          for (std::size_t p = 0; p < k; ++p) {
            const double* brow = pb + p * n;
            double acc = 0.0;
            for (std::size_t j = 0; j < n; ++j) acc += grow[j] * brow[j];
            darow[p] += acc;
          }
        }
      }
      if (gb) {
        bn->ensure_grad();
        const double* pa = an->value.data();
        // dB += A^T * dOut, staged locally so each pass adds one addend per
        // coordinate (keeps repeated backward passes exactly additive).
        std::vector<double> local(k * n, 0.0);
        for (std::size_t i = 0; i < m; ++i) {
          const double* grow = g + i * n;
          for (std::size_t p = 0; p < k; ++p) {
            const double av = pa[i * k + p];
            double* lrow = local.data() + p * n;
            for (std::size_t j = 0; j < n; ++j) lrow[j] += av * grow[j];
          }
        }
        double* db = bn->grad.data();
        for (std::size_t i = 0; i < k * n; ++i) db[i] += local[i];
      }
    });
  }
  return out;
}

inline Tensor add(Tape& tape, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape())
    throw std::invalid_argument("add: shape mismatch " + detail::shape_str(a.shape()) + " vs " +
                                detail::shape_str(b.shape()));
  Tensor out = Tensor::from_data(a.shape(), a.values());
  {
    double* po = out.values().data();
    const double* pb = b.values().data();
    for (std::size_t i = 0, n = out.size(); i < n; ++i) po[i] += pb[i];
  }
  if (detail::grad_wanted(tape, {&a, &b})) {
    out.set_requires_grad(true);
    auto an = a.node_ptr(), bn = b.node_ptr(), on = out.node_ptr();
    const bool ga = a.requires_grad(), gb = b.requires_grad();
    tape.record(out, [an, bn, on, ga, gb] {
      const std::size_t n = on->grad.size();
      if (ga) {
        an->ensure_grad();
        for (std::size_t i = 0; i < n; ++i) an->grad[i] += on->grad[i];
      }
      if (gb) {
        bn->ensure_grad();
        for (std::size_t i = 0; i < n; ++i) bn->grad[i] += on->grad[i];
      }
    });
  }
  return out;
}

/// Adds a rank-1 bias to every row of a rank-2 tensor.
inline Tensor add_bias(Tape& tape, const Tensor& x, const Tensor& bias) {
  detail::check_rank2(x, "add_bias");
  if (bias.rank() != 1 || bias.size() != x.shape()[1])
    throw std::invalid_argument("add_bias: bias shape " + detail::shape_str(bias.shape()) +
                                " does not match row width " + std::to_string(x.shape()[1]));
  const std::size_t r = x.shape()[0], c = x.shape()[1];
  Tensor out = Tensor::from_data(x.shape(), x.values());
  {
    double* po = out.values().data();
    const double* pb = bias.values().data();
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) po[i * c + j] += pb[j];
  }
  if (detail::grad_wanted(tape, {&x, &bias})) {
    out.set_requires_grad(true);
    auto xn = x.node_ptr(), bn = bias.node_ptr(), on = out.node_ptr();
    const bool gx = x.requires_grad(), gb = bias.requires_grad();
    tape.record(out, [xn, bn, on, r, c, gx, gb] {
      if (gx) {
        xn->ensure_grad();
        for (std::size_t i = 0; i < r * c; ++i) xn->grad[i] += on->grad[i];
      }
      if (gb) {
        bn->ensure_grad();
        std::vector<double> local(c, 0.0);
        for (std::size_t i = 0; i < r; ++i)
          for (std::size_t j = 0; j < c; ++j) local[j] += on->grad[i * c + j];
        for (std::size_t j = 0; j < c; ++j) bn->grad[j] += local[j];
      }
    });
  }
  return out;
}

inline Tensor mul(Tape& tape, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape())
    throw std::invalid_argument("mul: shape mismatch " + detail::shape_str(a.shape()) + " vs " +
                                detail::shape_str(b.shape()));
  Tensor out = Tensor::from_data(a.shape(), a.values());
  {
    double* po = out.values().data();
    const double* pb = b.values().data();
    for (std::size_t i = 0, n = out.size(); i < n; ++i) po[i] *= pb[i];
  }
  if (detail::grad_wanted(tape, {&a, &b})) {
    out.set_requires_grad(true);
    auto an = a.node_ptr(), bn = b.node_ptr(), on = out.node_ptr();
    const bool ga = a.requires_grad(), gb = b.requires_grad();
    tape.record(out, [an, bn, on, ga, gb] {
      const std::size_t n = on->grad.size();
      if (ga) {
        an->ensure_grad();
        for (std::size_t i = 0; i < n; ++i) an->grad[i] += on->grad[i] * bn->value[i];
      }
      if (gb) {
        bn->ensure_grad();
        for (std::size_t i = 0; i < n; ++i) bn->grad[i] += on->grad[i] * an->value[i];
      }
    });
  }
  return out;
}

inline Tensor scale(Tape& tape, const Tensor& x, double s) {
  Tensor out = Tensor::from_data(x.shape(), x.values());
  for (double& v : out.values()) v *= s;
  if (detail::grad_wanted(tape, {&x})) {
    out.set_requires_grad(true);
    auto xn = x.node_ptr(), on = out.node_ptr();
    tape.record(out, [xn, on, s] {
      xn->ensure_grad();
      for (std::size_t i = 0, n = on->grad.size(); i < n; ++i) xn->grad[i] += s * on->grad[i];
    });
  }
  return out;
}

inline Tensor transpose(Tape& tape, const Tensor& x) {
  detail::check_rank2(x, "transpose");
  const std::size_t r = x.shape()[0], c = x.shape()[1];
  Tensor out = Tensor::zeros({c, r});
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out.values()[j * r + i] = x.values()[i * c + j];
  if (detail::grad_wanted(tape, {&x})) {
    out.set_requires_grad(true);
    auto xn = x.node_ptr(), on = out.node_ptr();
    tape.record(out, [xn, on, r, c] {
      xn->ensure_grad();
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) xn->grad[i * c + j] += on->grad[j * r + i];
    });
  }
  return out;
}

inline Tensor reshape(Tape& tape, const Tensor& x, Shape shape) {
  if (detail::shape_numel(shape) != x.size())
    throw std::invalid_argument("reshape: element count changes from " + detail::shape_str(x.shape()) +
                                " to " + detail::shape_str(shape));
  Tensor out = Tensor::from_data(std::move(shape), x.values());
  if (detail::grad_wanted(tape, {&x})) {
    out.set_requires_grad(true);
    auto xn = x.node_ptr(), on = out.node_ptr();
    tape.record(out, [xn, on] {
      xn->ensure_grad();
      for (std::size_t i = 0, n = on->grad.size(); i < n; ++i) xn->grad[i] += on->grad[i];
    });
  }
  return out;
}

inline Tensor concat_rows(Tape& tape, const Tensor& a, const Tensor& b) {
  detail::check_rank2(a, "concat_rows");
  detail::check_rank2(b, "concat_rows");
  if (a.shape()[1] != b.shape()[1])
    throw std::invalid_argument("concat_rows: column widths differ: " + detail::shape_str(a.shape()) +
                                " vs " + detail::shape_str(b.shape()));
  const std::size_t ra = a.shape()[0], rb = b.shape()[0], c = a.shape()[1];
  Tensor out = Tensor::zeros({ra + rb, c});
  std::copy(a.values().begin(), a.values().end(), out.values().begin());
  std::copy(b.values().begin(), b.values().end(), out.values().begin() + static_cast<std::ptrdiff_t>(ra * c));
  if (detail::grad_wanted(tape, {&a, &b})) {
    out.set_requires_grad(true);
    auto an = a.node_ptr(), bn = b.node_ptr(), on = out.node_ptr();
    const bool ga = a.requires_grad(), gb = b.requires_grad();
    tape.record(out, [an, bn, on, ra, rb, c, ga, gb] {
      if (ga) {
        an->ensure_grad();
        for (std::size_t i = 0; i < ra * c; ++i) an->grad[i] += on->grad[i];
      }
      if (gb) {
        bn->ensure_grad();
        for (std::size_t i = 0; i < rb * c; ++i) bn->grad[i] += on->grad[ra * c + i];
      }
    });
  }
  return out;
}

inline Tensor concat_cols(Tape& tape, const Tensor& a, const Tensor& b) {
  detail::check_rank2(a, "concat_cols");
  detail::check_rank2(b, "concat_cols");
  if (a.shape()[0] != b.shape()[0])
    throw std::invalid_argument("concat_cols: row counts differ: " + detail::shape_str(a.shape()) +
                                " vs " + detail::shape_str(b.shape()));
  const std::size_t r = a.shape()[0], ca = a.shape()[1], cb = b.shape()[1];
  Tensor out = Tensor::zeros({r, ca + cb});
  for (std::size_t i = 0; i < r; ++i) {
    std::copy(a.values().begin() + static_cast<std::ptrdiff_t>(i * ca),
              a.values().begin() + static_cast<std::ptrdiff_t>((i + 1) * ca),
              out.values().begin() + static_cast<std::ptrdiff_t>(i * (ca + cb)));
    std::copy(b.values().begin() + static_cast<std::ptrdiff_t>(i * cb),
              b.values().begin() + static_cast<std::ptrdiff_t>((i + 1) * cb),
              out.values().begin() + static_cast<std::ptrdiff_t>(i * (ca + cb) + ca));
  }
  if (detail::grad_wanted(tape, {&a, &b})) {
    out.set_requires_grad(true);
    auto an = a.node_ptr(), bn = b.node_ptr(), on = out.node_ptr();
    const bool ga = a.requires_grad(), gb = b.requires_grad();
    tape.record(out, [an, bn, on, r, ca, cb, ga, gb] {
      for (std::size_t i = 0; i < r; ++i) {
        if (ga) {
          an->ensure_grad();
          for (std::size_t j = 0; j < ca; ++j) an->grad[i * ca + j] += on->grad[i * (ca + cb) + j];
        }
        if (gb) {
          bn->ensure_grad();
          for (std::size_t j = 0; j < cb; ++j) bn->grad[i * cb + j] += on->grad[i * (ca + cb) + ca + j];
        }
      }
    });
  }
  return out;
}

inline Tensor slice_rows(Tape& tape, const Tensor& x, std::size_t r0, std::size_t r1) {
  detail::check_rank2(x, "slice_rows");
  const std::size_t r = x.shape()[0], c = x.shape()[1];
  if (r0 >= r1 || r1 > r) throw std::out_of_range("slice_rows: invalid row range");
  Tensor out = Tensor::zeros({r1 - r0, c});
  std::copy(x.values().begin() + static_cast<std::ptrdiff_t>(r0 * c),
            x.values().begin() + static_cast<std::ptrdiff_t>(r1 * c), out.values().begin());
  if (detail::grad_wanted(tape, {&x})) {
    out.set_requires_grad(true);
    auto xn = x.node_ptr(), on = out.node_ptr();
    tape.record(out, [xn, on, r0, c] {
      xn->ensure_grad();
      for (std::size_t i = 0, n = on->grad.size(); i < n; ++i) xn->grad[r0 * c + i] += on->grad[i];
    });
  }
  return out;
}

inline Tensor slice_cols(Tape& tape, const Tensor& x, std::size_t c0, std::size_t c1) {
  detail::check_rank2(x, "slice_cols");
  const std::size_t r = x.shape()[0], c = x.shape()[1];
  if (c0 >= c1 || c1 > c) throw std::out_of_range("slice_cols: invalid column range");
  const std::size_t w = c1 - c0;
  Tensor out = Tensor::zeros({r, w});
  for (std::size_t i = 0; i < r; ++i)
    std::copy(x.values().begin() + static_cast<std::ptrdiff_t>(i * c + c0),
              x.values().begin() + static_cast<std::ptrdiff_t>(i * c + c1),
              out.values().begin() + static_cast<std::ptrdiff_t>(i * w));
  if (detail::grad_wanted(tape, {&x})) {
    out.set_requires_grad(true);
    auto xn = x.node_ptr(), on = out.node_ptr();
    tape.record(out, [xn, on, r, c, c0, w] {
      xn->ensure_grad();
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < w; ++j) xn->grad[i * c + c0 + j] += on->grad[i * w + j];
    });
  }
  return out;
}

/// Gathers rows of `table` by id. Gradients flow to the gathered rows only.
inline Tensor embedding_lookup(Tape& tape, const Tensor& table, const std::vector<int>& ids) {
  detail::check_rank2(table, "embedding_lookup");
  const std::size_t v = table.shape()[0], d = table.shape()[1];
  for (int id : ids)
    if (id < 0 || static_cast<std::size_t>(id) >= v)
      throw std::out_of_range("embedding_lookup: id " + std::to_string(id) + " outside table of " +
                              std::to_string(v) + " rows");
  Tensor out = Tensor::zeros({ids.size(), d});
  for (std::size_t i = 0; i < ids.size(); ++i)
    std::copy(table.values().begin() + static_cast<std::ptrdiff_t>(static_cast<std::size_t>(ids[i]) * d),
              table.values().begin() + static_cast<std::ptrdiff_t>((static_cast<std::size_t>(ids[i]) + 1) * d),
              out.values().begin() + static_cast<std::ptrdiff_t>(i * d));
  if (detail::grad_wanted(tape, {&table})) {
    out.set_requires_grad(true);
    auto tn = table.node_ptr(), on = out.node_ptr();
    tape.record(out, [tn, on, ids, d] {
      tn->ensure_grad();
      std::vector<double> local(tn->value.size(), 0.0);
      for (std::size_t i = 0; i < ids.size(); ++i)
        for (std::size_t j = 0; j < d; ++j)
          local[static_cast<std::size_t>(ids[i]) * d + j] += on->grad[i * d + j];
      std::vector<int> touched = ids;
      std::sort(touched.begin(), touched.end());
      touched.erase(std::unique(touched.begin(), touched.end()), touched.end());
      for (int id : touched)
        for (std::size_t j = 0; j < d; ++j)
          tn->grad[static_cast<std::size_t>(id) * d + j] += local[static_cast<std::size_t>(id) * d + j];
    });
  }
  return out;
}

/// Row-wise layer normalization with affine parameters (eps = 1e-5).
/// Rank-1 input is treated as a single row.
inline Tensor layer_norm(Tape& tape, const Tensor& x, const Tensor& gamma, const Tensor& beta) {
  const std::size_t r = x.rank() == 2 ? x.shape()[0] : 1;
  const std::size_t c = x.rank() == 2 ? x.shape()[1] : x.size();
  if (gamma.size() != c || beta.size() != c)
    throw std::invalid_argument("layer_norm: affine parameters must have width " + std::to_string(c));
  Tensor out = Tensor::zeros(x.shape());
  std::vector<double> inv_std(r), means(r);
  {
    const double* px = x.values().data();
    const double* pg = gamma.values().data();
    const double* pb = beta.values().data();
    double* po = out.values().data();
    for (std::size_t i = 0; i < r; ++i) {
      const double* row = px + i * c;
      double mu = 0.0;
      for (std::size_t j = 0; j < c; ++j) mu += row[j];
      mu /= static_cast<double>(c);
      double var = 0.0;
      for (std::size_t j = 0; j < c; ++j) var += (row[j] - mu) * (row[j] - mu);
      var /= static_cast<double>(c);
      const double is = 1.0 / std::sqrt(var + kLayerNormEps);
      means[i] = mu;
      inv_std[i] = is;
      for (std::size_t j = 0; j < c; ++j) po[i * c + j] = pg[j] * (row[j] - mu) * is + pb[j];
    }
  }
  if (detail::grad_wanted(tape, {&x, &gamma, &beta})) {
    out.set_requires_grad(true);
    auto xn = x.node_ptr(), gn = gamma.node_ptr(), bn = beta.node_ptr(), on = out.node_ptr();
    const bool gx = x.requires_grad(), gg = gamma.requires_grad(), gb = beta.requires_grad();
    tape.record(out, [xn, gn, bn, on, r, c, gx, gg, gb, means, inv_std] {
      const double* g = on->grad.data();
      const double* px = xn->value.data();
      const double* pg = gn->value.data();
      if (gx) xn->ensure_grad();
      if (gg) gn->ensure_grad();
      if (gb) bn->ensure_grad();
      std::vector<double> dgamma(gg ? c : 0, 0.0), dbeta(gb ? c : 0, 0.0);
      for (std::size_t i = 0; i < r; ++i) {
        const double mu = means[i], is = inv_std[i];
        const double* grow = g + i * c;
        const double* xrow = px + i * c;
        if (gg || gb) {
          for (std::size_t j = 0; j < c; ++j) {
            if (gg) dgamma[j] += grow[j] * (xrow[j] - mu) * is;
            if (gb) dbeta[j] += grow[j];
          }
        }
        if (gx) {
          double dvar = 0.0, dmu = 0.0;
          for (std::size_t j = 0; j < c; ++j) {
            const double dxhat = grow[j] * pg[j];
            dvar += dxhat * (xrow[j] - mu) * (-0.5) * is * is * is;
            dmu += -dxhat * is;
          }
          const double n = static_cast<double>(c);
          for (std::size_t j = 0; j < c; ++j) {
            const double dxhat = grow[j] * pg[j];
            xn->grad[i * c + j] += dxhat * is + dvar * 2.0 * (xrow[j] - mu) / n + dmu / n;
          }
        }
      }
      if (gg)
        for (std::size_t j = 0; j < c; ++j) gn->grad[j] += dgamma[j];
      if (gb)
        for (std::size_t j = 0; j < c; ++j) bn->grad[j] += dbeta[j];
    });
  }
  return out;
}

/// Exact (erf-based) GELU.
inline Tensor gelu(Tape& tape, const Tensor& x) {
  constexpr double kInvSqrt2 = 0.7071067811865475244;
  constexpr double kInvSqrt2Pi = 0.3989422804014326779;
  Tensor out = Tensor::from_data(x.shape(), x.values());
  for (double& v : out.values()) v = v * 0.5 * (1.0 + std::erf(v * kInvSqrt2));
  if (detail::grad_wanted(tape, {&x})) {
    out.set_requires_grad(true);
    auto xn = x.node_ptr(), on = out.node_ptr();
    tape.record(out, [xn, on] {
      xn->ensure_grad();
      for (std::size_t i = 0, n = on->grad.size(); i < n; ++i) {
        const double v = xn->value[i];
        const double cdf = 0.5 * (1.0 + std::erf(v * kInvSqrt2));
        const double pdf = kInvSqrt2Pi * std::exp(-0.5 * v * v);
        xn->grad[i] += on->grad[i] * (cdf + v * pdf);
      }
    });
  }
  return out;
}

inline Tensor sum(Tape& tape, const Tensor& x) {
  double acc = 0.0;
  for (double v : x.values()) acc += v;
  Tensor out = Tensor::scalar(acc);
  if (detail::grad_wanted(tape, {&x})) {
    out.set_requires_grad(true);
    auto xn = x.node_ptr(), on = out.node_ptr();
    tape.record(out, [xn, on] {
      xn->ensure_grad();
      const double g = on->grad[0];
      for (double& d : xn->grad) d += g;
    });
  }
  return out;
}

inline Tensor mean(Tape& tape, const Tensor& x) {
  if (x.size() == 0) throw std::invalid_argument("mean: empty tensor");
  double acc = 0.0;
  for (double v : x.values()) acc += v;
  const double inv = 1.0 / static_cast<double>(x.size());
  Tensor out = Tensor::scalar(acc * inv);
  if (detail::grad_wanted(tape, {&x})) {
    out.set_requires_grad(true);
    auto xn = x.node_ptr(), on = out.node_ptr();
    tape.record(out, [xn, on, inv] {
      xn->ensure_grad();
      const double g = on->grad[0] * inv;
      for (double& d : xn->grad) d += g;
    });
  }
  return out;
}

/// Numerically stable softmax over each row of a rank-2 tensor.
inline Tensor softmax_rows(Tape& tape, const Tensor& x) {
  detail::check_rank2(x, "softmax_rows");
  const std::size_t r = x.shape()[0], c = x.shape()[1];
  Tensor out = Tensor::zeros({r, c});
  {
    const double* px = x.values().data();
    double* po = out.values().data();
    for (std::size_t i = 0; i < r; ++i) {
      const double* row = px + i * c;
      double mx = row[0];
      for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, row[j]);
      double z = 0.0;
      for (std::size_t j = 0; j < c; ++j) {
        po[i * c + j] = std::exp(row[j] - mx);
        z += po[i * c + j];
      }
      for (std::size_t j = 0; j < c; ++j) po[i * c + j] /= z;
    }
  }
  if (detail::grad_wanted(tape, {&x})) {
    out.set_requires_grad(true);
    auto xn = x.node_ptr(), on = out.node_ptr();
    tape.record(out, [xn, on, r, c] {
      xn->ensure_grad();
      for (std::size_t i = 0; i < r; ++i) {
        const double* g = on->grad.data() + i * c;
        const double* p = on->value.data() + i * c;
        double dot = 0.0;
        for (std::size_t j = 0; j < c; ++j) dot += g[j] * p[j];
        for (std::size_t j = 0; j < c; ++j) xn->grad[i * c + j] += (g[j] - dot) * p[j];
      }
    });
  }
  return out;
}

namespace detail {

inline double log_sum_exp(const double* z, std::size_t k) {
  double mx = z[0];
  for (std::size_t j = 1; j < k; ++j) mx = std::max(mx, z[j]);
  double acc = 0.0;
  for (std::size_t j = 0; j < k; ++j) acc += std::exp(z[j] - mx);
  return mx + std::log(acc);
}

}  // namespace detail

/// Cross-entropy of rank-1 logits against a class index:
/// -log softmax(logits)[label].
inline Tensor softmax_cross_entropy(Tape& tape, const Tensor& logits, int label) {
  if (logits.rank() != 1 || logits.size() < 2)
    throw std::invalid_argument("softmax_cross_entropy: logits must be rank-1 with K >= 2 classes");
  if (label < 0 || static_cast<std::size_t>(label) >= logits.size())
    throw std::out_of_range("softmax_cross_entropy: label " + std::to_string(label) + " out of range");
  const std::size_t k = logits.size();
  const double lse = detail::log_sum_exp(logits.values().data(), k);
  Tensor out = Tensor::scalar(lse - logits.values()[static_cast<std::size_t>(label)]);
  if (detail::grad_wanted(tape, {&logits})) {
    out.set_requires_grad(true);
    auto ln = logits.node_ptr(), on = out.node_ptr();
    tape.record(out, [ln, on, k, label, lse] {
      ln->ensure_grad();
      const double g = on->grad[0];
      for (std::size_t j = 0; j < k; ++j) {
        const double p = std::exp(ln->value[j] - lse);
        ln->grad[j] += g * (p - (j == static_cast<std::size_t>(label) ? 1.0 : 0.0));
      }
    });
  }
  return out;
}

/// Batched variant: rank-2 logits (B x K), one label per row, loss averaged
/// over the batch.
inline Tensor softmax_cross_entropy(Tape& tape, const Tensor& logits, const std::vector<int>& labels) {
  detail::check_rank2(logits, "softmax_cross_entropy");
  const std::size_t b = logits.shape()[0], k = logits.shape()[1];
  if (k < 2) throw std::invalid_argument("softmax_cross_entropy: need K >= 2 classes");
  if (labels.size() != b)
    throw std::invalid_argument("softmax_cross_entropy: batch size mismatch");
  for (int y : labels)
    if (y < 0 || static_cast<std::size_t>(y) >= k)
      throw std::out_of_range("softmax_cross_entropy: label " + std::to_string(y) + " out of range");
  std::vector<double> lses(b);
  double total = 0.0;
  for (std::size_t i = 0; i < b; ++i) {
    lses[i] = detail::log_sum_exp(logits.values().data() + i * k, k);
    total += lses[i] - logits.values()[i * k + static_cast<std::size_t>(labels[i])];
  }
  Tensor out = Tensor::scalar(total / static_cast<double>(b));
  if (detail::grad_wanted(tape, {&logits})) {
    out.set_requires_grad(true);
    auto ln = logits.node_ptr(), on = out.node_ptr();
    tape.record(out, [ln, on, b, k, labels, lses] {
      ln->ensure_grad();
      const double g = on->grad[0] / static_cast<double>(b);
      for (std::size_t i = 0; i < b; ++i) {
        for (std::size_t j = 0; j < k; ++j) {
          const double p = std::exp(ln->value[i * k + j] - lses[i]);
          ln->grad[i * k + j] += g * (p - (j == static_cast<std::size_t>(labels[i]) ? 1.0 : 0.0));
        }
      }
    });
  }
  return out;
}

}  // namespace ptp
