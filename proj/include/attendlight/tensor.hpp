#pragma once

// Dense tensors with a reverse-mode tape, sized for the networks in this
// project: affine maps, elementwise nonlinearities, softmax, the additive
// attention block, an LSTM cell and Adam. Training runs in float; gradient
// checking instantiates the same templates with double.

#include <cassert>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "attendlight/rng.hpp"

namespace attendlight {

class TensorError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

template <typename T>
struct Tensor {
  std::vector<int> shape;
  std::vector<T> values;

  Tensor() = default;
  explicit Tensor(std::vector<int> s) : shape(std::move(s)) {
    values.assign(count(shape), T(0));
  }

  static std::size_t count(const std::vector<int>& shape) {
    std::size_t n = 1;
    for (int d : shape) n *= static_cast<std::size_t>(d);
    return n;
  }

  static Tensor vector_of(std::vector<T> vals) {
    Tensor t;
    t.shape = {static_cast<int>(vals.size())};
    t.values = std::move(vals);
    return t;
  }

  static Tensor matrix(int rows, int cols) { return Tensor({rows, cols}); }

  std::size_t size() const { return values.size(); }
  int dim(int i) const { return shape[static_cast<std::size_t>(i)]; }
  bool is_scalar() const { return values.size() == 1; }

  T& operator[](std::size_t i) { return values[i]; }
  const T& operator[](std::size_t i) const { return values[i]; }

  T& at(int r, int c) { return values[static_cast<std::size_t>(r) * dim(1) + c]; }
  const T& at(int r, int c) const {
    return values[static_cast<std::size_t>(r) * dim(1) + c];
  }

  void fill(T v) { std::fill(values.begin(), values.end(), v); }
};

template <typename T>
inline Tensor<T> uniform_init(std::vector<int> shape, int fan_in, Rng& rng) {
  Tensor<T> t(std::move(shape));
  double bound = 1.0 / std::sqrt(static_cast<double>(fan_in > 0 ? fan_in : 1));
  for (auto& v : t.values) v = static_cast<T>(rng.uniform(-bound, bound));
  return t;
}

template <typename T>
struct Param {
  Tensor<T> value;
  Tensor<T> grad;
  Tensor<T> m;
  Tensor<T> v;
  std::int64_t step = 0;
};

template <typename T>
class ParamStore {
 public:
  Param<T>& add(const std::string& name, Tensor<T> init) {
    auto [it, fresh] = params_.try_emplace(name);
    if (!fresh) throw TensorError("parameter '" + name + "' already exists");
    Param<T>& p = it->second;
    p.grad = Tensor<T>(init.shape);
    p.m = Tensor<T>(init.shape);
    p.v = Tensor<T>(init.shape);
    p.value = std::move(init);
    return p;
  }

  Param<T>& at(const std::string& name) {
    auto it = params_.find(name);
    if (it == params_.end()) throw TensorError("unknown parameter '" + name + "'");
    return it->second;
  }
  const Param<T>& at(const std::string& name) const {
    auto it = params_.find(name);
    if (it == params_.end()) throw TensorError("unknown parameter '" + name + "'");
    return it->second;
  }
  bool contains(const std::string& name) const { return params_.count(name) > 0; }

  void zero_grads() {
    for (auto& [k, p] : params_) p.grad.fill(T(0));
  }

  void scale_grads(T factor) {
    for (auto& [k, p] : params_)
      for (auto& g : p.grad.values) g *= factor;
  }

  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }
  std::size_t size() const { return params_.size(); }

  // Merges another store's gradients into this one (same parameter set).
  void accumulate_grads_from(const ParamStore<T>& other) {
    for (const auto& [k, p] : other.params_) {
      Param<T>& mine = at(k);
      for (std::size_t i = 0; i < p.grad.size(); ++i) mine.grad[i] += p.grad[i];
    }
  }

 private:
  std::map<std::string, Param<T>> params_;
};

// Bias-corrected Adam over every parameter; gradients are consumed (zeroed).
template <typename T>
inline void adam_step(ParamStore<T>& store, double lr, double beta1 = 0.9,
                      double beta2 = 0.999, double eps = 1e-8) {
  for (auto& [name, p] : store) {
    p.step += 1;
    double bc1 = 1.0 - std::pow(beta1, static_cast<double>(p.step));
    double bc2 = 1.0 - std::pow(beta2, static_cast<double>(p.step));
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      double g = static_cast<double>(p.grad[i]);
      double m = beta1 * static_cast<double>(p.m[i]) + (1 - beta1) * g;
      double v = beta2 * static_cast<double>(p.v[i]) + (1 - beta2) * g * g;
      p.m[i] = static_cast<T>(m);
      p.v[i] = static_cast<T>(v);
      p.value[i] -= static_cast<T>(lr * (m / bc1) / (std::sqrt(v / bc2) + eps));
    }
    p.grad.fill(T(0));
  }
}

// Reverse-mode tape. Nodes are appended in forward order; backward replays
// them once in reverse and adds leaf gradients into their parameter stores.
template <typename T>
class Tape {
 public:
  using Ref = int;

  void set_grad_enabled(bool enabled) { grad_enabled_ = enabled; }
  bool grad_enabled() const { return grad_enabled_; }

  Ref constant(Tensor<T> value) { return push(std::move(value), nullptr); }

  Ref scalar(T value) {
    Tensor<T> t({1});
    t[0] = value;
    return push(std::move(t), nullptr);
  }

  Ref param(ParamStore<T>& store, const std::string& name) {
    auto key = std::make_pair(&store, name);
    auto it = param_refs_.find(key);
    if (it != param_refs_.end()) return it->second;
    Ref ref = push(store.at(name).value, nullptr);
    nodes_[static_cast<std::size_t>(ref)].store = &store;
    nodes_[static_cast<std::size_t>(ref)].param_name = name;
    param_refs_[key] = ref;
    return ref;
  }

  const Tensor<T>& value(Ref r) const { return node(r).value; }
  const Tensor<T>& grad(Ref r) const {
    if (!grad_enabled_) throw TensorError("gradients disabled on this tape");
    return node(r).grad;
  }

  std::size_t node_count() const { return nodes_.size(); }

  // y = W x
  Ref linear(Ref w, Ref x) {
    const auto& W = value(w);
    const auto& X = value(x);
    if (W.shape.size() != 2 || X.shape.size() != 1 || W.dim(1) != X.dim(0))
      throw TensorError("linear: shape mismatch");
    Tensor<T> y({W.dim(0)});
    matvec(W, X, y);
    Ref out = push(std::move(y), nullptr);
    record(out, [w, x, out](Tape& self) {
      const auto& g = self.node(out).grad;
      const auto& W = self.node(w).value;
      const auto& X = self.node(x).value;
      auto& dW = self.node(w).grad;
      auto& dX = self.node(x).grad;
      int rows = W.dim(0), cols = W.dim(1);
      for (int r = 0; r < rows; ++r) {
        T gr = g[static_cast<std::size_t>(r)];
        if (gr == T(0)) continue;
        for (int c = 0; c < cols; ++c) {
          dW.at(r, c) += gr * X[static_cast<std::size_t>(c)];
          dX[static_cast<std::size_t>(c)] += gr * W.at(r, c);
        }
      }
    });
    return out;
  }

  // y = W x + b
  Ref affine(Ref w, Ref x, Ref b) {
    Ref wx = linear(w, x);
    if (value(b).shape != value(wx).shape) throw TensorError("affine: bias shape mismatch");
    return add(wx, b);
  }

  Ref add(Ref a, Ref b) {
    const auto& A = value(a);
    const auto& B = value(b);
    if (A.shape != B.shape) throw TensorError("add: shape mismatch");
    Tensor<T> y(A.shape);
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = A[i] + B[i];
    Ref out = push(std::move(y), nullptr);
    record(out, [a, b, out](Tape& self) {
      const auto& g = self.node(out).grad;
      for (std::size_t i = 0; i < g.size(); ++i) {
        self.node(a).grad[i] += g[i];
        self.node(b).grad[i] += g[i];
      }
    });
    return out;
  }

  Ref hadamard(Ref a, Ref b) {
    const auto& A = value(a);
    const auto& B = value(b);
    if (A.shape != B.shape) throw TensorError("hadamard: shape mismatch");
    Tensor<T> y(A.shape);
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = A[i] * B[i];
    Ref out = push(std::move(y), nullptr);
    record(out, [a, b, out](Tape& self) {
      const auto& g = self.node(out).grad;
      const auto& A = self.node(a).value;
      const auto& B = self.node(b).value;
      for (std::size_t i = 0; i < g.size(); ++i) {
        self.node(a).grad[i] += g[i] * B[i];
        self.node(b).grad[i] += g[i] * A[i];
      }
    });
    return out;
  }

  Ref scale(Ref a, T factor) {
    const auto& A = value(a);
    Tensor<T> y(A.shape);
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = A[i] * factor;
    Ref out = push(std::move(y), nullptr);
    record(out, [a, out, factor](Tape& self) {
      const auto& g = self.node(out).grad;
      for (std::size_t i = 0; i < g.size(); ++i) self.node(a).grad[i] += g[i] * factor;
    });
    return out;
  }

  Ref tanh_op(Ref a) {
    return unary(a, [](T v) { return std::tanh(v); },
                 [](T v, T y) { (void)v; return T(1) - y * y; });
  }

  Ref sigmoid_op(Ref a) {
    return unary(a, [](T v) { return T(1) / (T(1) + std::exp(-v)); },
                 [](T v, T y) { (void)v; return y * (T(1) - y); });
  }

  Ref relu_op(Ref a) {
    return unary(a, [](T v) { return v > T(0) ? v : T(0); },
                 [](T v, T y) { (void)y; return v > T(0) ? T(1) : T(0); });
  }

  // Softmax over a vector, computed with max subtraction.
  Ref softmax(Ref a) {
    const auto& A = value(a);
    if (A.shape.size() != 1 || A.size() == 0) throw TensorError("softmax: empty input");
    Tensor<T> y(A.shape);
    softmax_into(A, y);
    Ref out = push(std::move(y), nullptr);
    record(out, [a, out](Tape& self) {
      const auto& g = self.node(out).grad;
      const auto& y = self.node(out).value;
      T gy = T(0);
      for (std::size_t i = 0; i < g.size(); ++i) gy += g[i] * y[i];
      for (std::size_t i = 0; i < g.size(); ++i)
        self.node(a).grad[i] += y[i] * (g[i] - gy);
    });
    return out;
  }

  Ref dot(Ref a, Ref b) {
    const auto& A = value(a);
    const auto& B = value(b);
    if (A.shape != B.shape || A.shape.size() != 1) throw TensorError("dot: shape mismatch");
    Tensor<T> y({1});
    T acc = T(0);
    for (std::size_t i = 0; i < A.size(); ++i) acc += A[i] * B[i];
    y[0] = acc;
    Ref out = push(std::move(y), nullptr);
    record(out, [a, b, out](Tape& self) {
      T g = self.node(out).grad[0];
      const auto& A = self.node(a).value;
      const auto& B = self.node(b).value;
      for (std::size_t i = 0; i < A.size(); ++i) {
        self.node(a).grad[i] += g * B[i];
        self.node(b).grad[i] += g * A[i];
      }
    });
    return out;
  }

  Ref sum(Ref a) {
    const auto& A = value(a);
    Tensor<T> y({1});
    T acc = T(0);
    for (const T& v : A.values) acc += v;
    y[0] = acc;
    Ref out = push(std::move(y), nullptr);
    record(out, [a, out](Tape& self) {
      T g = self.node(out).grad[0];
      for (std::size_t i = 0; i < self.node(a).grad.size(); ++i) self.node(a).grad[i] += g;
    });
    return out;
  }

  // Mean of k same-shape vectors.
  Ref mean_of(const std::vector<Ref>& refs) {
    if (refs.empty()) throw TensorError("mean_of: empty reference set");
    Tensor<T> y(value(refs.front()).shape);
    for (Ref r : refs) {
      const auto& R = value(r);
      if (R.shape != y.shape) throw TensorError("mean_of: shape mismatch");
      for (std::size_t i = 0; i < y.size(); ++i) y[i] += R[i];
    }
    T inv = T(1) / static_cast<T>(refs.size());
    for (auto& v : y.values) v *= inv;
    Ref out = push(std::move(y), nullptr);
    record(out, [refs, out, inv](Tape& self) {
      const auto& g = self.node(out).grad;
      for (Ref r : refs)
        for (std::size_t i = 0; i < g.size(); ++i) self.node(r).grad[i] += g[i] * inv;
    });
    return out;
  }

  // y = sum_i w[i] * refs[i]
  Ref weighted_sum(Ref weights, const std::vector<Ref>& refs) {
    const auto& W = value(weights);
    if (W.shape.size() != 1 || W.size() != refs.size())
      throw TensorError("weighted_sum: weight count mismatch");
    if (refs.empty()) throw TensorError("weighted_sum: empty reference set");
    Tensor<T> y(value(refs.front()).shape);
    for (std::size_t k = 0; k < refs.size(); ++k) {
      const auto& R = value(refs[k]);
      for (std::size_t i = 0; i < y.size(); ++i) y[i] += W[k] * R[i];
    }
    Ref out = push(std::move(y), nullptr);
    record(out, [weights, refs, out](Tape& self) {
      const auto& g = self.node(out).grad;
      const auto& W = self.node(weights).value;
      for (std::size_t k = 0; k < refs.size(); ++k) {
        const auto& R = self.node(refs[k]).value;
        T acc = T(0);
        for (std::size_t i = 0; i < g.size(); ++i) {
          acc += g[i] * R[i];
          self.node(refs[k]).grad[i] += W[k] * g[i];
        }
        self.node(weights).grad[k] += acc;
      }
    });
    return out;
  }

  // Collects k scalars into one k-vector.
  Ref gather_scalars(const std::vector<Ref>& scalars) {
    Tensor<T> y({static_cast<int>(scalars.size())});
    for (std::size_t i = 0; i < scalars.size(); ++i) {
      if (!value(scalars[i]).is_scalar()) throw TensorError("gather_scalars: non-scalar input");
      y[i] = value(scalars[i])[0];
    }
    Ref out = push(std::move(y), nullptr);
    record(out, [scalars, out](Tape& self) {
      const auto& g = self.node(out).grad;
      for (std::size_t i = 0; i < scalars.size(); ++i) self.node(scalars[i]).grad[0] += g[i];
    });
    return out;
  }

  Ref pick(Ref a, int index) {
    const auto& A = value(a);
    if (index < 0 || index >= static_cast<int>(A.size()))
      throw TensorError("pick: index out of range");
    Tensor<T> y({1});
    y[0] = A[static_cast<std::size_t>(index)];
    Ref out = push(std::move(y), nullptr);
    record(out, [a, index, out](Tape& self) {
      self.node(a).grad[static_cast<std::size_t>(index)] += self.node(out).grad[0];
    });
    return out;
  }

  // log softmax(a)[index], computed stably from the alignment vector.
  Ref log_softmax_pick(Ref a, int index) {
    const auto& A = value(a);
    if (index < 0 || index >= static_cast<int>(A.size()))
      throw TensorError("log_softmax_pick: index out of range");
    T maxv = A[0];
    for (const T& v : A.values) maxv = std::max(maxv, v);
    T lse = T(0);
    for (const T& v : A.values) lse += std::exp(v - maxv);
    lse = maxv + std::log(lse);
    Tensor<T> y({1});
    y[0] = A[static_cast<std::size_t>(index)] - lse;
    Ref out = push(std::move(y), nullptr);
    record(out, [a, index, out](Tape& self) {
      T g = self.node(out).grad[0];
      const auto& A = self.node(a).value;
      Tensor<T> soft(A.shape);
      softmax_into(A, soft);
      for (std::size_t i = 0; i < A.size(); ++i) {
        T indicator = (static_cast<int>(i) == index) ? T(1) : T(0);
        self.node(a).grad[i] += g * (indicator - soft[i]);
      }
    });
    return out;
  }

  // c * sum_i coeffs[i] * scalars[i]
  Ref affine_combination(const std::vector<Ref>& scalars, const std::vector<T>& coeffs) {
    if (scalars.size() != coeffs.size())
      throw TensorError("affine_combination: size mismatch");
    Tensor<T> y({1});
    T acc = T(0);
    for (std::size_t i = 0; i < scalars.size(); ++i)
      acc += coeffs[i] * value(scalars[i])[0];
    y[0] = acc;
    Ref out = push(std::move(y), nullptr);
    record(out, [scalars, coeffs, out](Tape& self) {
      T g = self.node(out).grad[0];
      for (std::size_t i = 0; i < scalars.size(); ++i)
        self.node(scalars[i]).grad[0] += g * coeffs[i];
    });
    return out;
  }

  // c * sum_i (scalars[i] - targets[i])^2
  Ref squared_error_sum(const std::vector<Ref>& scalars, const std::vector<T>& targets,
                        T coeff) {
    if (scalars.size() != targets.size())
      throw TensorError("squared_error_sum: size mismatch");
    Tensor<T> y({1});
    T acc = T(0);
    for (std::size_t i = 0; i < scalars.size(); ++i) {
      T diff = value(scalars[i])[0] - targets[i];
      acc += diff * diff;
    }
    y[0] = coeff * acc;
    Ref out = push(std::move(y), nullptr);
    record(out, [scalars, targets, coeff, out](Tape& self) {
      T g = self.node(out).grad[0];
      for (std::size_t i = 0; i < scalars.size(); ++i) {
        T diff = self.node(scalars[i]).value[0] - targets[i];
        self.node(scalars[i]).grad[0] += g * coeff * T(2) * diff;
      }
    });
    return out;
  }

  // Accumulates dLoss/dParam into the bound stores for every leaf on the
  // tape. With commit=false the reverse sweep only touches tape-local
  // buffers (thread-safe); call commit_leaf_grads() afterwards in a fixed
  // order to merge into the stores.
  void backward(Ref loss, bool commit = true) {
    if (!grad_enabled_) throw TensorError("backward on a no-grad tape");
    if (loss < 0 || loss >= static_cast<int>(nodes_.size()))
      throw TensorError("loss not on tape");
    if (!node(loss).value.is_scalar()) throw TensorError("loss must be scalar");
    node(loss).grad[0] = T(1);
    for (int i = static_cast<int>(nodes_.size()) - 1; i >= 0; --i) {
      auto& n = nodes_[static_cast<std::size_t>(i)];
      if (n.back) n.back(*this);
    }
    if (commit) commit_leaf_grads();
  }

  void commit_leaf_grads() {
    for (auto& n : nodes_) {
      if (!n.store) continue;
      auto& p = n.store->at(n.param_name);
      for (std::size_t i = 0; i < p.grad.size(); ++i) p.grad[i] += n.grad[i];
    }
  }

 private:
  struct Node {
    Tensor<T> value;
    Tensor<T> grad;
    std::function<void(Tape&)> back;
    ParamStore<T>* store = nullptr;
    std::string param_name;
  };

  Node& node(Ref r) { return nodes_[static_cast<std::size_t>(r)]; }
  const Node& node(Ref r) const { return nodes_[static_cast<std::size_t>(r)]; }

  Ref push(Tensor<T> value, std::nullptr_t) {
    Node n;
    if (grad_enabled_) n.grad = Tensor<T>(value.shape);
    n.value = std::move(value);
    nodes_.push_back(std::move(n));
    return static_cast<int>(nodes_.size()) - 1;
  }

  template <typename F>
  void record(Ref out, F&& fn) {
    if (grad_enabled_) nodes_[static_cast<std::size_t>(out)].back = std::forward<F>(fn);
  }

  template <typename Fwd, typename Bwd>
  Ref unary(Ref a, Fwd&& fwd, Bwd&& bwd) {
    const auto& A = value(a);
    Tensor<T> y(A.shape);
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = fwd(A[i]);
    Ref out = push(std::move(y), nullptr);
    record(out, [a, out, bwd](Tape& self) {
      const auto& g = self.node(out).grad;
      const auto& X = self.node(a).value;
      const auto& Y = self.node(out).value;
      for (std::size_t i = 0; i < g.size(); ++i)
        self.node(a).grad[i] += g[i] * bwd(X[i], Y[i]);
    });
    return out;
  }

  static void matvec(const Tensor<T>& W, const Tensor<T>& x, Tensor<T>& y) {
    int rows = W.dim(0), cols = W.dim(1);
    for (int r = 0; r < rows; ++r) {
      T acc = T(0);
      const T* row = &W.values[static_cast<std::size_t>(r) * cols];
      for (int c = 0; c < cols; ++c) acc += row[c] * x[static_cast<std::size_t>(c)];
      y[static_cast<std::size_t>(r)] = acc;
    }
  }

  static void softmax_into(const Tensor<T>& a, Tensor<T>& y) {
    T maxv = a[0];
    for (const T& v : a.values) maxv = std::max(maxv, v);
    T total = T(0);
    for (std::size_t i = 0; i < a.size(); ++i) {
      y[i] = std::exp(a[i] - maxv);
      total += y[i];
    }
    for (std::size_t i = 0; i < a.size(); ++i) y[i] /= total;
  }

  std::vector<Node> nodes_;
  std::map<std::pair<const void*, std::string>, Ref> param_refs_;
  bool grad_enabled_ = true;
};

// Eq.-style additive attention: alignments a_i = u_a . tanh(U_r r_i' + U_q q')
// over trainable linear mappings r_i' = W_r r_i, q' = W_q q; returns
// softmax(a) as a probability vector over the references.
template <typename T>
struct AttentionParamRefs {
  typename Tape<T>::Ref W_r, W_q, U_r, U_q, u_a;
};

template <typename T>
typename Tape<T>::Ref attention(Tape<T>& tape, const std::vector<typename Tape<T>::Ref>& refs,
                                typename Tape<T>::Ref query,
                                const AttentionParamRefs<T>& p) {
  if (refs.empty()) throw TensorError("attention: empty reference set");
  auto q_mapped = tape.linear(p.U_q, tape.linear(p.W_q, query));
  std::vector<typename Tape<T>::Ref> alignments;
  alignments.reserve(refs.size());
  for (auto r : refs) {
    auto r_mapped = tape.linear(p.U_r, tape.linear(p.W_r, r));
    alignments.push_back(tape.dot(p.u_a, tape.tanh_op(tape.add(r_mapped, q_mapped))));
  }
  return tape.softmax(tape.gather_scalars(alignments));
}

// Standard gated LSTM cell; the cell output equals the new hidden state.
template <typename T>
struct LstmParamRefs {
  typename Tape<T>::Ref W_i, U_i, b_i;
  typename Tape<T>::Ref W_f, U_f, b_f;
  typename Tape<T>::Ref W_o, U_o, b_o;
  typename Tape<T>::Ref W_g, U_g, b_g;
};

template <typename T>
struct LstmOut {
  typename Tape<T>::Ref h;
  typename Tape<T>::Ref c;
};

template <typename T>
LstmOut<T> lstm_cell(Tape<T>& tape, typename Tape<T>::Ref x, typename Tape<T>::Ref h,
                     typename Tape<T>::Ref c, const LstmParamRefs<T>& p) {
  auto gate = [&](auto W, auto U, auto b) {
    return tape.add(tape.add(tape.linear(W, x), tape.linear(U, h)), b);
  };
  auto i = tape.sigmoid_op(gate(p.W_i, p.U_i, p.b_i));
  auto f = tape.sigmoid_op(gate(p.W_f, p.U_f, p.b_f));
  auto o = tape.sigmoid_op(gate(p.W_o, p.U_o, p.b_o));
  auto g = tape.tanh_op(gate(p.W_g, p.U_g, p.b_g));
  auto c_next = tape.add(tape.hadamard(f, c), tape.hadamard(i, g));
  auto h_next = tape.hadamard(o, tape.tanh_op(c_next));
  return {h_next, c_next};
}

// Central-difference check of the gradients currently stored for every
// parameter (or a seeded coordinate sample); returns the max relative error.
// Coordinates whose gradient magnitude sits below `denom_floor` are compared
// at that scale: central differences cannot resolve gradients under the
// roundoff floor |f|*ulp/epsilon, so a tiny true gradient would otherwise
// register as a spurious relative error.
template <typename T>
double finite_diff_check(const std::function<double(ParamStore<T>&)>& fn,
                         ParamStore<T>& store, double epsilon, double tol,
                         std::size_t max_coords_per_param = 0, std::uint64_t seed = 0,
                         double denom_floor = 1e-5) {
  (void)tol;  // callers compare the returned error against their tolerance
  Rng rng(seed ^ 0x5eedull);
  double max_rel = 0;
  for (auto& [name, p] : store) {
    std::vector<std::size_t> coords;
    if (max_coords_per_param == 0 || p.value.size() <= max_coords_per_param) {
      coords.resize(p.value.size());
      for (std::size_t i = 0; i < coords.size(); ++i) coords[i] = i;
    } else {
      coords = rng.sample_without_replacement(p.value.size(), max_coords_per_param);
    }
    for (std::size_t i : coords) {
      T saved = p.value[i];
      p.value[i] = saved + static_cast<T>(epsilon);
      double up = fn(store);
      p.value[i] = saved - static_cast<T>(epsilon);
      double down = fn(store);
      p.value[i] = saved;
      double numeric = (up - down) / (2 * epsilon);
      double analytic = static_cast<double>(p.grad[i]);
      double denom = std::max({std::abs(numeric), std::abs(analytic), denom_floor});
      max_rel = std::max(max_rel, std::abs(numeric - analytic) / denom);
    }
  }
  return max_rel;
}

}  // namespace attendlight
