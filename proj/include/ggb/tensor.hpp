#pragma once

// Dense tensors with reverse-mode automatic differentiation.
//
// Tensors are immutable value handles over shared storage. Operations on
// them (ops.hpp) record pullback closures onto the thread-local active
// GradTape; Tape::backward replays the records in reverse order and returns
// a GradMap holding the gradient of every tensor that took part in the
// graph. Tensors created while no tape is active form no graph, which is
// the evaluation fast path.

#include <atomic>
#include <cmath>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "ggb/rng.hpp"

namespace ggb {

using Shape = std::vector<int>;

struct ShapeError : std::runtime_error {
  explicit ShapeError(const std::string& msg) : std::runtime_error(msg) {}
};

inline long numel_of(const Shape& s) {
  long n = 1;
  for (int d : s) {
    if (d <= 0) throw ShapeError("non-positive dimension " + std::to_string(d));
    n *= d;
  }
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "(";
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
  os << ")";
  return os.str();
}

inline std::uint64_t next_tensor_id() {
  static std::atomic<std::uint64_t> counter{1};
  return counter.fetch_add(1, std::memory_order_relaxed);
}

template <class T>
class Tensor {
 public:
  struct Storage {
    Shape shape;
    std::shared_ptr<const std::vector<T>> values;
    bool requires_grad = false;  // leaf marker
    bool on_graph = false;       // gradients are materialized for this tensor
    std::uint64_t id = 0;
  };

  Tensor() = default;

  static Tensor from_data(Shape shape, std::vector<T> data, bool requires_grad = false) {
    long n = numel_of(shape);
    if (static_cast<long>(data.size()) != n)
      throw ShapeError("data length " + std::to_string(data.size()) + " does not match shape " + shape_str(shape));
    return make(std::move(shape), std::move(data), requires_grad);
  }

  static Tensor full(Shape shape, T value, bool requires_grad = false) {
    long n = numel_of(shape);
    return make(std::move(shape), std::vector<T>(static_cast<std::size_t>(n), value), requires_grad);
  }

  static Tensor zeros(Shape shape, bool requires_grad = false) { return full(std::move(shape), T(0), requires_grad); }
  static Tensor ones(Shape shape, bool requires_grad = false) { return full(std::move(shape), T(1), requires_grad); }
  static Tensor scalar(T value, bool requires_grad = false) { return full({1}, value, requires_grad); }

  static Tensor randn(Shape shape, SplitMix64& rng, T stddev = T(1), bool requires_grad = false) {
    long n = numel_of(shape);
    std::vector<T> data(static_cast<std::size_t>(n));
    for (auto& v : data) v = static_cast<T>(rng.normal()) * stddev;
    return make(std::move(shape), std::move(data), requires_grad);
  }

  bool valid() const { return static_cast<bool>(s_); }
  const Shape& shape() const { return s_->shape; }
  int ndim() const { return static_cast<int>(s_->shape.size()); }
  int dim(int i) const { return s_->shape.at(static_cast<std::size_t>(i)); }
  long numel() const { return static_cast<long>(s_->values->size()); }
  bool requires_grad() const { return s_ && s_->requires_grad; }
  bool on_graph() const { return s_ && s_->on_graph; }
  std::uint64_t id() const { return s_ ? s_->id : 0; }

  const T* data() const { return s_->values->data(); }
  const std::vector<T>& vec() const { return *s_->values; }

  T value() const {
    if (numel() != 1) throw ShapeError("value() on non-scalar tensor " + shape_str(shape()));
    return (*s_->values)[0];
  }

  T at(std::initializer_list<int> idx) const {
    if (static_cast<int>(idx.size()) != ndim()) throw ShapeError("index rank mismatch");
    long flat = 0;
    int k = 0;
    for (int i : idx) {
      if (i < 0 || i >= s_->shape[static_cast<std::size_t>(k)]) throw ShapeError("index out of range");
      flat = flat * s_->shape[static_cast<std::size_t>(k)] + i;
      ++k;
    }
    return (*s_->values)[static_cast<std::size_t>(flat)];
  }

  // Same values, fresh identity, disconnected from any tape.
  Tensor detach() const {
    Tensor t;
    auto st = std::make_shared<Storage>();
    st->shape = s_->shape;
    st->values = s_->values;  // buffers are immutable, sharing is safe
    st->requires_grad = false;
    st->on_graph = false;
    st->id = next_tensor_id();
    t.s_ = std::move(st);
    return t;
  }

  bool all_finite() const {
    for (T v : *s_->values)
      if (!std::isfinite(static_cast<double>(v))) return false;
    return true;
  }

  const std::shared_ptr<const Storage>& storage() const { return s_; }

  // Used by ops.hpp to construct results; on_graph is decided by the tape.
  static Tensor make(Shape shape, std::vector<T> data, bool requires_grad, bool on_graph = false) {
    Tensor t;
    auto st = std::make_shared<Storage>();
    st->shape = std::move(shape);
    st->values = std::make_shared<const std::vector<T>>(std::move(data));
    st->requires_grad = requires_grad;
    st->on_graph = on_graph || requires_grad;
    st->id = next_tensor_id();
    t.s_ = std::move(st);
    return t;
  }

 private:
  std::shared_ptr<const Storage> s_;
};

// Gradient buffers keyed by tensor id, produced by Tape::backward.
template <class T>
class GradMap {
 public:
  using Buffers = std::unordered_map<std::uint64_t, std::vector<T>>;

  GradMap() = default;
  explicit GradMap(Buffers buffers) : buffers_(std::move(buffers)) {}

  bool has(const Tensor<T>& t) const { return buffers_.count(t.id()) != 0; }

  Tensor<T> grad(const Tensor<T>& t) const {
    auto it = buffers_.find(t.id());
    if (it == buffers_.end())
      throw std::runtime_error("no gradient recorded for tensor id " + std::to_string(t.id()));
    return Tensor<T>::from_data(t.shape(), it->second);
  }

  Tensor<T> grad_or_zero(const Tensor<T>& t) const {
    return has(t) ? grad(t) : Tensor<T>::zeros(t.shape());
  }

  std::size_t size() const { return buffers_.size(); }

 private:
  Buffers buffers_;
};

// During backward, pullbacks see the output gradient and request
// accumulation buffers for their inputs. Buffers exist only for tensors
// that are on the graph; everything else gets a nullptr and is skipped.
template <class T>
class GradSink {
 public:
  explicit GradSink(typename GradMap<T>::Buffers& buffers) : buffers_(buffers) {}

  T* buffer(const Tensor<T>& t) {
    if (!t.on_graph()) return nullptr;
    auto& buf = buffers_[t.id()];
    if (buf.empty()) buf.assign(static_cast<std::size_t>(t.numel()), T(0));
    return buf.data();
  }

  const std::vector<T>* find(std::uint64_t id) const {
    auto it = buffers_.find(id);
    return it == buffers_.end() ? nullptr : &it->second;
  }

 private:
  typename GradMap<T>::Buffers& buffers_;
};

template <class T>
class GradTape {
 public:
  using Pullback = std::function<void(const std::vector<T>& out_grad, GradSink<T>& sink)>;

  struct Record {
    std::uint64_t out_id;
    Pullback pullback;
  };

  void record(std::uint64_t out_id, Pullback pb) {
    records_.push_back(Record{out_id, std::move(pb)});
  }

  std::size_t size() const { return records_.size(); }
  void clear() { records_.clear(); }

  GradMap<T> backward(const Tensor<T>& loss) const {
    if (loss.numel() != 1)
      throw ShapeError("backward requires a scalar loss, got " + shape_str(loss.shape()));
    typename GradMap<T>::Buffers buffers;
    buffers[loss.id()] = {T(1)};
    GradSink<T> sink(buffers);
    for (auto it = records_.rbegin(); it != records_.rend(); ++it) {
      const std::vector<T>* g = sink.find(it->out_id);
      if (!g) continue;
      // Copy: a pullback may create buffers and rehash the map under us.
      std::vector<T> out_grad = *g;
      it->pullback(out_grad, sink);
    }
    return GradMap<T>(std::move(buffers));
  }

  static GradTape*& active() {
    thread_local GradTape* current = nullptr;
    return current;
  }

  // RAII activation; tapes are confined to the thread that opened the scope.
  class Scope {
   public:
    explicit Scope(GradTape& tape) : prev_(active()) { active() = &tape; }
    ~Scope() { active() = prev_; }
    Scope(const Scope&) = delete;
    Scope& operator=(const Scope&) = delete;

   private:
    GradTape* prev_;
  };

 private:
  std::vector<Record> records_;
};

template <class T>
GradMap<T> backward(const Tensor<T>& loss) {
  GradTape<T>* tape = GradTape<T>::active();
  if (!tape) throw std::runtime_error("backward called with no active tape");
  return tape->backward(loss);
}

}  // namespace ggb
