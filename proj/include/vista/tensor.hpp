#pragma once

#include <Eigen/Core>

#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <vector>

namespace vista {

using Index = std::int64_t;
using Shape = std::vector<Index>;

inline Index numel(const Shape& shape) {
  Index n = 1;
  for (Index d : shape) n *= d;
  return n;
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

/// Dense row-major tensor of `Scalar` with optional reverse-mode gradient
/// tracking. A TensorT is a cheap handle: copies share the underlying node,
/// which carries the value, the (lazily allocated) gradient, and the backward
/// edge recorded by the op that produced it. Each forward pass records a fresh
/// tape; `backward()` consumes it.
template <class Scalar>
class TensorT {
 public:
  using Array = Eigen::Array<Scalar, Eigen::Dynamic, 1>;

  struct Node {
    Shape shape;
    Array data;
    Array grad;  // size 0 until backward touches this node
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward;

    void ensure_grad() {
      if (grad.size() != data.size()) grad = Array::Zero(data.size());
    }
  };

  TensorT() = default;

  static TensorT zeros(Shape shape, bool requires_grad = false) {
    return fill(std::move(shape), Scalar(0), requires_grad);
  }

  static TensorT fill(Shape shape, Scalar value, bool requires_grad = false) {
    check_shape(shape);
    auto n = std::make_shared<Node>();
    n->data = Array::Constant(numel(shape), value);
    n->shape = std::move(shape);
    n->requires_grad = requires_grad;
    return TensorT(std::move(n));
  }

  /// Construction from external values: rejects non-finite entries.
  static TensorT from_values(Shape shape, const std::vector<Scalar>& values,
                             bool requires_grad = false) {
    check_shape(shape);
    if (static_cast<Index>(values.size()) != numel(shape)) {
      throw std::invalid_argument("tensor: " + shape_str(shape) + " needs " +
                                  std::to_string(numel(shape)) + " values, got " +
                                  std::to_string(values.size()));
    }
    for (Scalar v : values) {
      if (!std::isfinite(v)) throw std::invalid_argument("tensor: non-finite value");
    }
    auto n = std::make_shared<Node>();
    n->shape = std::move(shape);
    n->data = Eigen::Map<const Array>(values.data(), static_cast<Index>(values.size()));
    n->requires_grad = requires_grad;
    return TensorT(std::move(n));
  }

  static TensorT scalar(Scalar value, bool requires_grad = false) {
    return from_values({1}, {value}, requires_grad);
  }

  template <class Rng>
  static TensorT randn(Shape shape, Rng& rng, Scalar stddev = Scalar(1),
                       bool requires_grad = false) {
    check_shape(shape);
    auto n = std::make_shared<Node>();
    n->data.resize(numel(shape));
    std::normal_distribution<Scalar> dist(Scalar(0), stddev);
    for (Index i = 0; i < n->data.size(); ++i) n->data[i] = dist(rng);
    n->shape = std::move(shape);
    n->requires_grad = requires_grad;
    return TensorT(std::move(n));
  }

  template <class Rng>
  static TensorT rand_uniform(Shape shape, Rng& rng, Scalar lo, Scalar hi,
                              bool requires_grad = false) {
    check_shape(shape);
    auto n = std::make_shared<Node>();
    n->data.resize(numel(shape));
    std::uniform_real_distribution<Scalar> dist(lo, hi);
    for (Index i = 0; i < n->data.size(); ++i) n->data[i] = dist(rng);
    n->shape = std::move(shape);
    n->requires_grad = requires_grad;
    return TensorT(std::move(n));
  }

  bool defined() const { return static_cast<bool>(n_); }
  const Shape& shape() const { return node().shape; }
  Index dim(std::size_t i) const { return node().shape.at(i); }
  Index rank() const { return static_cast<Index>(node().shape.size()); }
  Index size() const { return node().data.size(); }
  bool requires_grad() const { return node().requires_grad; }
  void set_requires_grad(bool v) { node().requires_grad = v; }

  const Array& data() const { return node().data; }
  Array& data() { return node().data; }
  const Array& grad() const { return node().grad; }

  Scalar value() const {
    if (size() != 1) throw std::invalid_argument("tensor: value() needs a scalar");
    return node().data[0];
  }

  Scalar operator[](Index flat) const { return node().data[flat]; }

  Scalar at(std::initializer_list<Index> idx) const {
    return node().data[flat_index(idx)];
  }

  Index flat_index(std::initializer_list<Index> idx) const {
    const Shape& s = node().shape;
    if (idx.size() != s.size()) throw std::invalid_argument("tensor: index rank mismatch");
    Index flat = 0;
    std::size_t k = 0;
    for (Index i : idx) {
      if (i < 0 || i >= s[k]) throw std::invalid_argument("tensor: index out of range");
      flat = flat * s[k] + i;
      ++k;
    }
    return flat;
  }

  void zero_grad() { node().grad.resize(0); }

  /// Reverse pass from a scalar output. Consumes the tape built by the
  /// forward pass; run the forward again before calling backward again.
  void backward() {
    Node& out = node();
    if (out.data.size() != 1) {
      throw std::invalid_argument("backward: output must be scalar");
    }
    if (!out.requires_grad) {
      throw std::invalid_argument("backward: output does not require grad");
    }
    std::vector<Node*> order;
    std::unordered_set<Node*> seen;
    topo(&out, seen, order);
    out.ensure_grad();
    out.grad[0] += Scalar(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
      Node* node = *it;
      if (node->backward) {
        node->backward(*node);
        node->backward = nullptr;  // single-use tape
      }
    }
  }

  const std::shared_ptr<Node>& node_ptr() const { return n_; }

  explicit TensorT(std::shared_ptr<Node> n) : n_(std::move(n)) {}

 private:
  static void check_shape(const Shape& shape) {
    if (shape.empty()) throw std::invalid_argument("tensor: empty shape");
    for (Index d : shape) {
      if (d <= 0) throw std::invalid_argument("tensor: non-positive extent in " + shape_str(shape));
    }
  }

  static void topo(Node* node, std::unordered_set<Node*>& seen, std::vector<Node*>& order) {
    // Iterative DFS; graphs from long training traces can be deep.
    struct Frame {
      Node* node;
      std::size_t next_parent;
    };
    std::vector<Frame> stack{{node, 0}};
    seen.insert(node);
    while (!stack.empty()) {
      Frame& f = stack.back();
      if (f.next_parent < f.node->parents.size()) {
        Node* p = f.node->parents[f.next_parent++].get();
        if (p->requires_grad && seen.insert(p).second) stack.push_back({p, 0});
      } else {
        order.push_back(f.node);
        stack.pop_back();
      }
    }
  }

  Node& node() {
    if (!n_) throw std::invalid_argument("tensor: undefined");
    return *n_;
  }
  const Node& node() const {
    if (!n_) throw std::invalid_argument("tensor: undefined");
    return *n_;
  }

  std::shared_ptr<Node> n_;
};

using Tensor = TensorT<double>;

namespace detail {

/// Internal constructor for op results; skips the finiteness check applied to
/// external input.
template <class Scalar>
TensorT<Scalar> make_tensor(Shape shape, typename TensorT<Scalar>::Array data,
                            bool requires_grad) {
  auto n = std::make_shared<typename TensorT<Scalar>::Node>();
  n->shape = std::move(shape);
  n->data = std::move(data);
  n->requires_grad = requires_grad;
  return TensorT<Scalar>(std::move(n));
}

}  // namespace detail

}  // namespace vista
