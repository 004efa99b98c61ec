#include "dauhst/autodiff.hpp"

#include <array>

#include "dauhst/error.hpp"

namespace dauhst::ad {

std::string_view primitive_name(Primitive kind) {
  switch (kind) {
    case Primitive::kLeaf: return "leaf";
    case Primitive::kAdd: return "add";
    case Primitive::kSub: return "sub";
    case Primitive::kMultiply: return "multiply";
    case Primitive::kScalarScale: return "scalar-scale";
    case Primitive::kMatmul: return "matmul";
    case Primitive::kConv2d: return "conv2d";
    case Primitive::kConvTranspose2d: return "transposed-conv2d";
    case Primitive::kFullyConnected: return "fully-connected";
    case Primitive::kLayerNorm: return "layer-norm";
    case Primitive::kSoftmax: return "softmax";
    case Primitive::kGelu: return "gelu";
    case Primitive::kGlobalAveragePool: return "global-average-pool";
    case Primitive::kReshape: return "reshape";
    case Primitive::kPermute: return "axis-permute";
    case Primitive::kConcat: return "concat";
    case Primitive::kSplit: return "split";
    case Primitive::kSum: return "sum";
    case Primitive::kSqrt: return "sqrt";
    case Primitive::kSoftplus: return "softplus";
    case Primitive::kTile: return "tile";
    case Primitive::kPadReflect: return "pad-reflect";
    case Primitive::kCrop: return "crop";
    case Primitive::kDataProjection: return "data-projection";
    case Primitive::kBandUnshift: return "band-unshift";
  }
  return "unknown";
}

const Tensor& Var::value() const {
  if (!tape_) throw Error("use of an unbound Var");
  return tape_->value(id_);
}

bool Var::requires_grad() const { return tape_ && tape_->requires_grad(id_); }

Var Tape::add_node(Tensor value, bool requires_grad) {
  nodes_.push_back(Node{std::move(value), Tensor{}, requires_grad});
  return Var(this, nodes_.size() - 1);
}

Var Tape::constant(Tensor value) { return add_node(std::move(value), false); }

Var Tape::leaf(Tensor value, bool requires_grad) {
  return add_node(std::move(value), requires_grad && grad_enabled_);
}

Var Tape::param(const ParamStore& store, const std::string& name) {
  Var v = add_node(store.get(name), grad_enabled_);
  if (grad_enabled_) params_.emplace_back(name, v.id());
  return v;
}

Var Tape::record(Primitive kind, Tensor value, std::vector<Var> inputs, BackwardFn backward) {
  bool needs_grad = false;
  for (const Var& in : inputs) {
    if (in.tape_ != this) throw Error(std::string(primitive_name(kind)) + ": input from another tape");
    needs_grad = needs_grad || nodes_[in.id_].requires_grad;
  }
  Var out = add_node(std::move(value), needs_grad);
  if (needs_grad) {
    Entry e{kind, {}, out.id_, std::move(backward)};
    e.inputs.reserve(inputs.size());
    for (const Var& in : inputs) e.inputs.push_back(in.id_);
    entries_.push_back(std::move(e));
  }
  return out;
}

void Tape::backward(Var loss) {
  if (loss.tape_ != this) throw Error("backward: loss belongs to another tape");
  const Node& ln = nodes_.at(loss.id_);
  if (ln.value.size() != 1) {
    throw ShapeError("backward: loss must be a scalar, got shape " + to_string(ln.value.shape()));
  }
  if (!ln.requires_grad || entries_.empty()) {
    throw Error("backward: loss is detached from every trainable input");
  }
  for (auto& n : nodes_) n.grad = Tensor{};
  nodes_[loss.id_].grad = Tensor(ln.value.shape(), 1.0);

  std::vector<const Tensor*> in_values;
  std::vector<Tensor*> in_grads;
  for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) {
    Node& out = nodes_[it->output];
    if (out.grad.empty()) continue;  // not on the loss path
    in_values.clear();
    in_grads.clear();
    for (std::size_t id : it->inputs) {
      Node& in = nodes_[id];
      in_values.push_back(&in.value);
      if (in.requires_grad) {
        if (in.grad.empty()) in.grad = Tensor::zeros_like(in.value);
        in_grads.push_back(&in.grad);
      } else {
        in_grads.push_back(nullptr);
      }
    }
    it->backward(BackwardArgs{in_values, out.value, out.grad, in_grads});
    if (it->output != loss.id_) out.grad = Tensor{};  // intermediate no longer needed
  }
}

Tensor Tape::grad(Var v) const {
  const Node& n = nodes_.at(v.id_);
  return n.grad.empty() ? Tensor::zeros_like(n.value) : n.grad;
}

std::map<std::string, Tensor> Tape::gradients(const ParamStore& store) const {
  std::map<std::string, Tensor> out;
  for (const auto& [name, value] : store) out.emplace(name, Tensor::zeros_like(value));
  for (const auto& [name, id] : params_) {
    const Node& n = nodes_[id];
    if (!n.grad.empty()) out.at(name) += n.grad;
  }
  return out;
}

std::vector<Primitive> Tape::entry_kinds() const {
  std::vector<Primitive> kinds;
  kinds.reserve(entries_.size());
  for (const auto& e : entries_) kinds.push_back(e.kind);
  return kinds;
}

void ParamStore::set(const std::string& name, Tensor value) { tensors_[name] = std::move(value); }

const Tensor& ParamStore::get(const std::string& name) const {
  auto it = tensors_.find(name);
  if (it == tensors_.end()) throw Error("unknown parameter '" + name + "'");
  return it->second;
}

Tensor& ParamStore::get_mutable(const std::string& name) {
  auto it = tensors_.find(name);
  if (it == tensors_.end()) throw Error("unknown parameter '" + name + "'");
  return it->second;
}

std::size_t ParamStore::scalar_count() const {
  std::size_t n = 0;
  for (const auto& [name, t] : tensors_) n += t.size();
  return n;
}

std::map<std::string, Tensor> backward(Tape& tape, Var loss, const ParamStore& store) {
  tape.backward(loss);
  return tape.gradients(store);
}

}  // namespace dauhst::ad
