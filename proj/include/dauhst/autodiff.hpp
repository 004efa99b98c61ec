#pragma once

// Reverse-mode differentiation over dense tensors.
//
// A Tape is built fresh for every forward pass. Each primitive application
// appends one entry holding its input node ids, its output node id and a
// backward closure; entries are therefore in topological order and a single
// reverse sweep visits every node once.

#include <deque>
#include <cstddef>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "dauhst/tensor.hpp"

namespace dauhst::ad {

enum class Primitive {
  kLeaf,
  kAdd,
  kSub,
  kMultiply,
  kScalarScale,
  kMatmul,
  kConv2d,
  kConvTranspose2d,
  kFullyConnected,
  kLayerNorm,
  kSoftmax,
  kGelu,
  kGlobalAveragePool,
  kReshape,
  kPermute,
  kConcat,
  kSplit,
  kSum,
  kSqrt,
  kSoftplus,
  kTile,
  kPadReflect,
  kCrop,
  // CASSI-specific primitives recorded by the unfolding code.
  kDataProjection,
  kBandUnshift,
};

std::string_view primitive_name(Primitive kind);

class Tape;
class ParamStore;

/// Handle to a node on a tape. Cheap to copy; valid while the tape lives.
class Var {
 public:
  Var() = default;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  bool requires_grad() const;
  Tape* tape() const { return tape_; }
  std::size_t id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// What a backward closure sees. `grad_inputs[i]` is null when input i needs no gradient;
/// otherwise the closure accumulates into it.
struct BackwardArgs {
  std::span<const Tensor* const> inputs;
  const Tensor& output;
  const Tensor& grad_output;
  std::span<Tensor* const> grad_inputs;
};

using BackwardFn = std::function<void(const BackwardArgs&)>;

class Tape {
 public:
  /// With gradients disabled, nothing is recorded and parameters enter as constants.
  explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value);
  Var leaf(Tensor value, bool requires_grad = true);
  /// Reads `name` from the store; its gradient is reported under that name by `gradients`.
  Var param(const ParamStore& store, const std::string& name);

  /// Adds a node computed by `kind`; an entry is recorded only when some input requires grad.
  Var record(Primitive kind, Tensor value, std::vector<Var> inputs, BackwardFn backward);

  const Tensor& value(std::size_t id) const { return nodes_.at(id).value; }
  bool requires_grad(std::size_t id) const { return nodes_.at(id).requires_grad; }
  bool grad_enabled() const { return grad_enabled_; }

  /// Seeds d(loss)/d(loss) = 1 and sweeps the entries in reverse.
  /// Throws when the loss is not a scalar or does not depend on anything trainable.
  void backward(Var loss);

  /// Gradient of the last backward sweep w.r.t. `v` (zeros when `v` was not reached).
  Tensor grad(Var v) const;
  /// One gradient per store parameter; parameters not on the loss path get zeros.
  std::map<std::string, Tensor> gradients(const ParamStore& store) const;

  std::size_t node_count() const { return nodes_.size(); }
  std::size_t entry_count() const { return entries_.size(); }
  /// Primitive of every recorded entry, in recording order.
  std::vector<Primitive> entry_kinds() const;

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
  };
  struct Entry {
    Primitive kind;
    std::vector<std::size_t> inputs;
    std::size_t output;
    BackwardFn backward;
  };

  Var add_node(Tensor value, bool requires_grad);

  bool grad_enabled_;
  std::deque<Node> nodes_;  // deque: values stay addressable while later nodes are recorded
  std::vector<Entry> entries_;
  std::vector<std::pair<std::string, std::size_t>> params_;
};

/// Learnable tensors keyed by hierarchical names ("stage0/level1/enc/msa/wq").
/// Iteration is lexicographic. Concurrent readers are safe; writers need exclusive access.
class ParamStore {
 public:
  void set(const std::string& name, Tensor value);
  const Tensor& get(const std::string& name) const;
  Tensor& get_mutable(const std::string& name);
  bool contains(const std::string& name) const { return tensors_.contains(name); }
  std::size_t size() const { return tensors_.size(); }
  std::size_t scalar_count() const;

  const std::map<std::string, Tensor>& tensors() const { return tensors_; }
  auto begin() const { return tensors_.begin(); }
  auto end() const { return tensors_.end(); }
  auto begin() { return tensors_.begin(); }
  auto end() { return tensors_.end(); }

  friend bool operator==(const ParamStore&, const ParamStore&) = default;

 private:
  std::map<std::string, Tensor> tensors_;
};

/// Runs the reverse sweep and returns one gradient per parameter of `store`.
std::map<std::string, Tensor> backward(Tape& tape, Var loss, const ParamStore& store);

}  // namespace dauhst::ad
