#pragma once

#include <atomic>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

namespace dfrf::diffmath {

using Shape = std::vector<std::int64_t>;
using NodeId = std::uint64_t;

std::int64_t numel(const Shape& shape);
std::string to_string(const Shape& shape);

/// Raised when operand shapes do not conform; the message names both shapes.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

[[noreturn]] void throw_shape_error(const char* op, const Shape& a, const Shape& b);

/// Numeric profile. 64-bit for tests and oracles, 32-bit for training.
enum class Profile { F32, F64 };

Profile active_profile();
void set_active_profile(Profile profile);
const char* profile_name(Profile profile);

NodeId next_node_id();

template <typename Real>
struct Node {
  Shape shape;
  std::vector<Real> value;
  std::vector<Real> grad;  // empty until a gradient reaches this node
  bool requires_grad = false;
  bool is_leaf = true;
  NodeId id = next_node_id();

  Node(Shape s, std::vector<Real> v, bool rg) : shape(std::move(s)), value(std::move(v)), requires_grad(rg) {}

  Real* grad_buffer() {
    if (grad.empty()) grad.assign(value.size(), Real(0));
    return grad.data();
  }
};

/// Dense row-major array. Copies are shallow: they alias the same node.
template <typename Real>
class Tensor {
 public:
  using NodePtr = std::shared_ptr<Node<Real>>;

  Tensor() = default;

  Tensor(Shape shape, std::vector<Real> values, bool requires_grad = false) {
    if (diffmath::numel(shape) != static_cast<std::int64_t>(values.size()))
      throw ShapeError("tensor: shape " + to_string(shape) + " does not hold " + std::to_string(values.size()) +
                       " values");
    for (auto extent : shape)
      if (extent <= 0) throw ShapeError("tensor: non-positive extent in " + to_string(shape));
    node_ = std::make_shared<Node<Real>>(std::move(shape), std::move(values), requires_grad);
  }

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    const auto n = diffmath::numel(shape);
    return Tensor(std::move(shape), std::vector<Real>(static_cast<std::size_t>(n), Real(0)), requires_grad);
  }
  static Tensor full(Shape shape, Real value) {
    const auto n = diffmath::numel(shape);
    return Tensor(std::move(shape), std::vector<Real>(static_cast<std::size_t>(n), value));
  }
  static Tensor scalar(Real value) { return Tensor(Shape{}, {value}); }

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::int64_t dim(std::size_t axis) const { return node_->shape.at(axis); }
  std::int64_t numel() const { return static_cast<std::int64_t>(node_->value.size()); }

  std::span<const Real> data() const { return node_->value; }
  /// Mutable access for initialisers and optimisers; never call on a tensor
  /// whose value is saved on a live tape.
  std::span<Real> data_mut() { return node_->value; }
  Real item() const {
    if (node_->value.size() != 1) throw ShapeError("item: tensor " + to_string(shape()) + " is not a scalar");
    return node_->value[0];
  }

  bool requires_grad() const { return node_->requires_grad; }
  NodeId id() const { return node_->id; }

  /// Fresh leaf holding a copy of the values, outside any gradient graph.
  Tensor detach() const { return Tensor(shape(), node_->value, false); }

  const NodePtr& node() const { return node_; }

 private:
  NodePtr node_;
};

template <typename Real>
class Tape;

namespace detail {
template <typename Real>
Tape<Real>*& active_tape_slot() {
  thread_local Tape<Real>* slot = nullptr;
  return slot;
}
}  // namespace detail

template <typename Real>
Tape<Real>* active_tape() {
  return detail::active_tape_slot<Real>();
}

/// Define-by-run record of primitive operations. Single owner; install it on
/// the current thread with activate() while building the forward graph.
template <typename Real>
class Tape {
 public:
  using NodePtr = std::shared_ptr<Node<Real>>;
  // Receives the op's output node: `out.grad` is dL/d(out), `out.value` the forward result.
  using BackwardFn = std::function<void(const Node<Real>& out)>;
  using GradMap = std::unordered_map<NodeId, Tensor<Real>>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  class Recording {
   public:
    explicit Recording(Tape* tape) : previous_(detail::active_tape_slot<Real>()) {
      detail::active_tape_slot<Real>() = tape;
    }
    ~Recording() { detail::active_tape_slot<Real>() = previous_; }
    Recording(const Recording&) = delete;
    Recording& operator=(const Recording&) = delete;

   private:
    Tape* previous_;
  };

  [[nodiscard]] Recording activate() { return Recording(this); }

  void record(std::vector<NodePtr> inputs, NodePtr output, BackwardFn backward) {
    entries_.push_back({std::move(inputs), std::move(output), std::move(backward)});
  }

  std::size_t size() const { return entries_.size(); }
  void clear() { entries_.clear(); }

  /// Reverse sweep from a scalar loss. Returns the gradient of every
  /// requires_grad leaf the loss depends on, keyed by node id, and clears
  /// the tape.
  GradMap backward(const Tensor<Real>& loss) {
    if (loss.numel() != 1) throw ShapeError("backward: loss must be scalar, got " + to_string(loss.shape()));
    GradMap grads;
    if (!loss.requires_grad()) {
      entries_.clear();
      return grads;
    }
    loss.node()->grad_buffer()[0] = Real(1);
    for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) {
      if (it->output->grad.empty()) continue;
      it->backward(*it->output);
    }
    auto harvest = [&grads](const NodePtr& node) {
      if (node->is_leaf && node->requires_grad && !node->grad.empty() && !grads.contains(node->id)) {
        grads.emplace(node->id, Tensor<Real>(node->shape, std::move(node->grad)));
        node->grad.clear();
      }
    };
    harvest(loss.node());
    for (auto& entry : entries_)
      for (auto& input : entry.inputs) harvest(input);
    for (auto& entry : entries_) entry.output->grad.clear();
    entries_.clear();
    return grads;
  }

 private:
  struct Entry {
    std::vector<NodePtr> inputs;
    NodePtr output;
    BackwardFn backward;
  };
  std::vector<Entry> entries_;
};

/// Gradient accumulator for an op input, or nullptr when the input does not
/// take part in differentiation.
template <typename Real>
Real* grad_sink(const Tensor<Real>& t) {
  return t.requires_grad() ? t.node()->grad_buffer() : nullptr;
}

/// Wraps a freshly computed value as an op result. When a tape is active and
/// some input requires a gradient the op is recorded with `backward`.
template <typename Real>
Tensor<Real> record_op(Shape shape, std::vector<Real> values, const std::vector<Tensor<Real>>& inputs,
                       typename Tape<Real>::BackwardFn backward) {
  Tensor<Real> out(std::move(shape), std::move(values));
  Tape<Real>* tape = active_tape<Real>();
  if (!tape) return out;
  std::vector<typename Tensor<Real>::NodePtr> nodes;
  bool needs_grad = false;
  for (const auto& in : inputs) {
    needs_grad = needs_grad || in.requires_grad();
    nodes.push_back(in.node());
  }
  if (!needs_grad) return out;
  out.node()->requires_grad = true;
  out.node()->is_leaf = false;
  tape->record(std::move(nodes), out.node(), std::move(backward));
  return out;
}

template <typename Real>
Tensor<Real> record_op(Shape shape, std::vector<Real> values, std::initializer_list<Tensor<Real>> inputs,
                       typename Tape<Real>::BackwardFn backward) {
  return record_op(std::move(shape), std::move(values), std::vector<Tensor<Real>>(inputs), std::move(backward));
}

}  // namespace dfrf::diffmath
