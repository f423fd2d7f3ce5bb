#pragma once

// Define-by-run reverse-mode differentiation.
//
// Every primitive appends one node to the tape. Node ids are assigned in
// execution order, so walking ids downwards visits each node only after all
// of its consumers have deposited their gradient contributions.

#include <cstddef>
#include <deque>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <type_traits>
#include <utility>
#include <vector>

#include "noisynet/errors.hpp"
#include "noisynet/ops.hpp"
#include "noisynet/rng.hpp"
#include "noisynet/tensor.hpp"

namespace noisynet {

template <class T>
class Tape;

/// Handle to a tape node.
template <class T>
struct Var {
  Tape<T>* tape = nullptr;
  std::size_t id = 0;

  const Tensor<T>& value() const { return tape->value(id); }
  const Shape& shape() const { return tape->value(id).shape(); }
};

template <class T>
class Tape {
 public:
  using Backward = std::function<void(Tape&, const Tensor<T>& grad_out)>;

  /// With recording off, no backward closures are stored (inference only).
  explicit Tape(bool recording = true) : recording_(recording) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var<T> constant(Tensor<T> value) { return push(std::move(value), false, nullptr); }
  Var<T> parameter(Tensor<T> value) { return push(std::move(value), recording_, nullptr); }

  Var<T> record(Tensor<T> value, std::initializer_list<Var<T>> inputs, Backward backward) {
    return record(std::move(value), std::span<const Var<T>>(inputs.begin(), inputs.size()), std::move(backward));
  }

  Var<T> record(Tensor<T> value, std::span<const Var<T>> inputs, Backward backward) {
    bool needs = false;
    for (const Var<T>& v : inputs) needs = needs || nodes_.at(v.id).requires_grad;
    needs = needs && recording_;
    return push(std::move(value), needs, needs ? std::move(backward) : nullptr);
  }

  const Tensor<T>& value(std::size_t id) const { return nodes_.at(id).value; }
  bool requires_grad(std::size_t id) const { return nodes_.at(id).requires_grad; }
  bool recording() const noexcept { return recording_; }
  std::size_t size() const noexcept { return nodes_.size(); }

  void accumulate(std::size_t id, const Tensor<T>& g) {
    Node& node = nodes_.at(id);
    if (!node.requires_grad) return;
    require_same_shape(node.value.shape(), g.shape(), "gradient accumulation");
    if (!node.has_grad) {
      node.grad = g;
      node.has_grad = true;
    } else {
      for (std::size_t i = 0; i < g.size(); ++i) node.grad[i] += g[i];
    }
  }

  /// dLoss/dParam for each entry of `wrt`; nodes the loss does not depend on get zeros.
  std::vector<Tensor<T>> grad(Var<T> loss, std::span<const Var<T>> wrt) {
    const Node& root = nodes_.at(loss.id);
    if (root.value.size() != 1)
      throw ShapeError("grad: loss must be scalar, got shape " + shape_string(root.value.shape()));
    for (Node& n : nodes_) {
      n.has_grad = false;
      n.grad = Tensor<T>();
    }
    accumulate(loss.id, Tensor<T>(root.value.shape(), T{1}));
    for (std::size_t id = loss.id + 1; id-- > 0;) {
      Node& n = nodes_[id];
      if (n.has_grad && n.backward) n.backward(*this, n.grad);
    }
    std::vector<Tensor<T>> out;
    out.reserve(wrt.size());
    for (const Var<T>& v : wrt) {
      const Node& n = nodes_.at(v.id);
      out.push_back(n.has_grad ? n.grad : Tensor<T>(n.value.shape()));
    }
    return out;
  }

  std::vector<Tensor<T>> grad(Var<T> loss, std::initializer_list<Var<T>> wrt) {
    return grad(loss, std::span<const Var<T>>(wrt.begin(), wrt.size()));
  }

 private:
  struct Node {
    Tensor<T> value;
    Tensor<T> grad;
    bool requires_grad = false;
    bool has_grad = false;
    Backward backward;
  };

  Var<T> push(Tensor<T> value, bool requires_grad, Backward backward) {
    nodes_.push_back(Node{std::move(value), Tensor<T>(), requires_grad, false, std::move(backward)});
    return Var<T>{this, nodes_.size() - 1};
  }

  bool recording_;
  std::deque<Node> nodes_;  // deque keeps value references stable while recording
};

/// User-supplied forward/backward pair. The backward result is used verbatim:
/// the forward function is never differentiated through.
template <class T>
struct CustomRule {
  using Inputs = std::vector<std::reference_wrapper<const Tensor<T>>>;
  std::function<Tensor<T>(const Inputs&)> forward;
  std::function<std::vector<Tensor<T>>(const Tensor<T>& grad_out, const Inputs& inputs, const Tensor<T>& output)>
      backward;
};

template <class T>
CustomRule<T> unary_rule(std::function<Tensor<T>(const Tensor<T>&)> forward,
                         std::function<Tensor<T>(const Tensor<T>& grad_out, const Tensor<T>& input,
                                                 const Tensor<T>& output)>
                             backward) {
  CustomRule<T> rule;
  rule.forward = [f = std::move(forward)](const typename CustomRule<T>::Inputs& in) { return f(in.at(0).get()); };
  rule.backward = [b = std::move(backward)](const Tensor<T>& g, const typename CustomRule<T>::Inputs& in,
                                            const Tensor<T>& out) {
    return std::vector<Tensor<T>>{b(g, in.at(0).get(), out)};
  };
  return rule;
}

namespace ad {

template <class T>
Var<T> apply_custom(const CustomRule<T>& rule, std::span<const Var<T>> inputs) {
  if (inputs.empty()) throw ShapeError("apply_custom: no inputs");
  Tape<T>& tape = *inputs[0].tape;
  typename CustomRule<T>::Inputs in_values;
  std::vector<std::size_t> ids;
  for (const Var<T>& v : inputs) {
    in_values.emplace_back(v.value());
    ids.push_back(v.id);
  }
  Tensor<T> out = rule.forward(in_values);
  auto self = std::make_shared<std::size_t>(0);
  auto backward = [rule, ids, self](Tape<T>& t, const Tensor<T>& g) {
    typename CustomRule<T>::Inputs vals;
    for (std::size_t id : ids) vals.emplace_back(t.value(id));
    std::vector<Tensor<T>> grads = rule.backward(g, vals, t.value(*self));
    if (grads.size() != ids.size())
      throw ShapeError("custom rule returned " + std::to_string(grads.size()) + " gradients for " +
                       std::to_string(ids.size()) + " inputs");
    for (std::size_t i = 0; i < ids.size(); ++i) {
      if (grads[i].shape() != vals[i].get().shape())
        throw ShapeError("custom rule gradient shape " + shape_string(grads[i].shape()) +
                         " differs from input shape " + shape_string(vals[i].get().shape()));
      t.accumulate(ids[i], grads[i]);
    }
  };
  Var<T> result = tape.record(std::move(out), inputs, std::move(backward));
  *self = result.id;
  return result;
}

template <class T>
Var<T> apply_custom(const CustomRule<T>& rule, Var<T> input) {
  return apply_custom(rule, std::span<const Var<T>>(&input, 1));
}

template <class T>
Var<T> add(Var<T> a, Var<T> b) {
  return a.tape->record(ops::add(a.value(), b.value()), {a, b}, [a, b](Tape<T>& t, const Tensor<T>& g) {
    t.accumulate(a.id, g);
    t.accumulate(b.id, g);
  });
}

template <class T>
Var<T> sub(Var<T> a, Var<T> b) {
  return a.tape->record(ops::sub(a.value(), b.value()), {a, b}, [a, b](Tape<T>& t, const Tensor<T>& g) {
    t.accumulate(a.id, g);
    if (t.requires_grad(b.id)) t.accumulate(b.id, ops::scale(g, T{-1}));
  });
}

template <class T>
Var<T> mul(Var<T> a, Var<T> b) {
  return a.tape->record(ops::mul(a.value(), b.value()), {a, b}, [a, b](Tape<T>& t, const Tensor<T>& g) {
    if (t.requires_grad(a.id)) t.accumulate(a.id, ops::mul(g, t.value(b.id)));
    if (t.requires_grad(b.id)) t.accumulate(b.id, ops::mul(g, t.value(a.id)));
  });
}

template <class T>
Var<T> scale(Var<T> a, T s) {
  return a.tape->record(ops::scale(a.value(), s), {a},
                        [a, s](Tape<T>& t, const Tensor<T>& g) { t.accumulate(a.id, ops::scale(g, s)); });
}

template <class T>
Var<T> relu(Var<T> a) {
  return a.tape->record(ops::relu(a.value()), {a}, [a](Tape<T>& t, const Tensor<T>& g) {
    t.accumulate(a.id, ops::relu_backward(t.value(a.id), g));
  });
}

template <class T>
Var<T> reshape(Var<T> a, Shape shape) {
  const Shape original = a.shape();
  return a.tape->record(a.value().reshaped(std::move(shape)), {a}, [a, original](Tape<T>& t, const Tensor<T>& g) {
    t.accumulate(a.id, g.reshaped(original));
  });
}

template <class T>
Var<T> flatten(Var<T> a) {
  return reshape(a, {a.shape()[0], a.value().size() / a.shape()[0]});
}

template <class T>
Var<T> sum(Var<T> a) {
  return a.tape->record(Tensor<T>::scalar(ops::sum(a.value())), {a}, [a](Tape<T>& t, const Tensor<T>& g) {
    t.accumulate(a.id, Tensor<T>(t.value(a.id).shape(), g[0]));
  });
}

template <class T>
Var<T> mean(Var<T> a) {
  return a.tape->record(Tensor<T>::scalar(ops::mean(a.value())), {a}, [a](Tape<T>& t, const Tensor<T>& g) {
    const Tensor<T>& x = t.value(a.id);
    t.accumulate(a.id, Tensor<T>(x.shape(), g[0] / static_cast<T>(x.size())));
  });
}

template <class T>
Var<T> matmul(Var<T> a, Var<T> b) {
  return a.tape->record(ops::matmul(a.value(), b.value()), {a, b}, [a, b](Tape<T>& t, const Tensor<T>& g) {
    const Tensor<T>& av = t.value(a.id);
    const Tensor<T>& bv = t.value(b.id);
    const std::size_t m = av.dim(0), k = av.dim(1), n = bv.dim(1);
    if (t.requires_grad(a.id)) {
      // dA = G * B^T
      std::vector<T> bt(k * n);
      ops::detail::transpose(k, n, bv.raw(), bt.data());
      Tensor<T> ga({m, k});
      ops::detail::gemm_nn(m, k, n, g.raw(), bt.data(), ga.raw(), false);
      t.accumulate(a.id, ga);
    }
    if (t.requires_grad(b.id)) {
      // dB = A^T * G
      Tensor<T> gb({k, n});
      ops::detail::gemm_tn(k, n, m, av.raw(), g.raw(), gb.raw(), false);
      t.accumulate(b.id, gb);
    }
  });
}

template <class T>
Var<T> linear(Var<T> x, Var<T> weight, std::optional<std::type_identity_t<Var<T>>> bias) {
  const Tensor<T>* b = bias ? &bias->value() : nullptr;
  Tensor<T> y = ops::linear(x.value(), weight.value(), b);
  std::vector<Var<T>> inputs{x, weight};
  if (bias) inputs.push_back(*bias);
  return x.tape->record(std::move(y), inputs, [x, weight, bias](Tape<T>& t, const Tensor<T>& g) {
    auto grads = ops::linear_backward(t.value(x.id), t.value(weight.id), g, t.requires_grad(x.id));
    if (t.requires_grad(x.id)) t.accumulate(x.id, grads.input);
    t.accumulate(weight.id, grads.weight);
    if (bias) t.accumulate(bias->id, grads.bias);
  });
}

template <class T>
Var<T> conv2d(Var<T> x, Var<T> kernel, std::optional<std::type_identity_t<Var<T>>> bias, std::size_t stride, std::size_t padding,
              bool floor_mode = false) {
  const Tensor<T>* b = bias ? &bias->value() : nullptr;
  Tensor<T> y = ops::conv2d(x.value(), kernel.value(), b, stride, padding, floor_mode);
  std::vector<Var<T>> inputs{x, kernel};
  if (bias) inputs.push_back(*bias);
  return x.tape->record(std::move(y), inputs, [=](Tape<T>& t, const Tensor<T>& g) {
    auto grads = ops::conv2d_backward(t.value(x.id), t.value(kernel.id), g, stride, padding, t.requires_grad(x.id),
                                      floor_mode);
    if (t.requires_grad(x.id)) t.accumulate(x.id, grads.input);
    t.accumulate(kernel.id, grads.kernel);
    if (bias) t.accumulate(bias->id, grads.bias);
  });
}

template <class T>
Var<T> max_pool2d(Var<T> x, std::size_t kernel, std::size_t stride, std::size_t padding = 0,
                  bool floor_mode = false) {
  auto r = ops::max_pool2d(x.value(), kernel, stride, padding, floor_mode);
  auto argmax = std::make_shared<std::vector<std::size_t>>(std::move(r.argmax));
  return x.tape->record(std::move(r.output), {x}, [x, argmax](Tape<T>& t, const Tensor<T>& g) {
    t.accumulate(x.id, ops::max_pool2d_backward(t.value(x.id).shape(), *argmax, g));
  });
}

template <class T>
Var<T> adaptive_avg_pool2d(Var<T> x, std::size_t out_h, std::size_t out_w) {
  return x.tape->record(ops::adaptive_avg_pool2d(x.value(), out_h, out_w), {x},
                        [x](Tape<T>& t, const Tensor<T>& g) {
                          t.accumulate(x.id, ops::adaptive_avg_pool2d_backward(t.value(x.id).shape(), g));
                        });
}

/// Inverted dropout: kept elements are scaled by 1/(1-p).
template <class T>
Var<T> dropout(Var<T> x, double p, RngStream& rng) {
  if (p < 0.0 || p >= 1.0) throw ConfigError("dropout probability must lie in [0, 1)");
  auto mask = std::make_shared<Tensor<T>>(x.shape());
  const T keep_scale = static_cast<T>(1.0 / (1.0 - p));
  for (std::size_t i = 0; i < mask->size(); i += 4) {
    const PhiloxBlock b = rng.next_block();
    for (std::size_t j = 0; j < 4 && i + j < mask->size(); ++j)
      (*mask)[i + j] = (static_cast<double>(b[j]) * 0x1.0p-32 >= p) ? keep_scale : T{0};
  }
  return x.tape->record(ops::mul(x.value(), *mask), {x},
                        [x, mask](Tape<T>& t, const Tensor<T>& g) { t.accumulate(x.id, ops::mul(g, *mask)); });
}

template <class T>
Var<T> softmax(Var<T> x) {
  return x.tape->record(ops::softmax_rows(x.value()), {x}, [x](Tape<T>& t, const Tensor<T>& g) {
    // dx = y * (g - sum(g * y)) per row
    const Tensor<T> y = ops::softmax_rows(t.value(x.id));
    const std::size_t n = y.dim(0), k = y.dim(1);
    Tensor<T> dx(y.shape());
    for (std::size_t i = 0; i < n; ++i) {
      T dot{0};
      for (std::size_t j = 0; j < k; ++j) dot += g[i * k + j] * y[i * k + j];
      for (std::size_t j = 0; j < k; ++j) dx[i * k + j] = y[i * k + j] * (g[i * k + j] - dot);
    }
    t.accumulate(x.id, dx);
  });
}

template <class T>
Var<T> cross_entropy(Var<T> logits, std::vector<std::size_t> labels) {
  const T loss = ops::cross_entropy(logits.value(), labels);
  return logits.tape->record(Tensor<T>::scalar(loss), {logits},
                             [logits, labels = std::move(labels)](Tape<T>& t, const Tensor<T>& g) {
                               t.accumulate(logits.id, ops::cross_entropy_backward(t.value(logits.id), labels, g[0]));
                             });
}

}  // namespace ad
}  // namespace noisynet
