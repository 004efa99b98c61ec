#pragma once

// Differentiable primitives. Each function computes its forward value eagerly
// and records a backward closure on the inputs' tape.

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "dauhst/autodiff.hpp"

namespace dauhst::ad {

Var add(Var a, Var b);
Var sub(Var a, Var b);
Var multiply(Var a, Var b);
Var scale(Var a, double factor);
/// a * s where s holds a single value; differentiable in both.
Var scale(Var a, Var s);

/// Batched matrix product on the last two axes. `a` is (..., m, k), `b` is (..., k, n)
/// with identical leading axes, or `b` is rank 2 and shared across every leading index.
Var matmul(Var a, Var b, bool trans_a = false, bool trans_b = false);

/// x (H, W, Cin), weight (kh, kw, Cin, Cout), bias (Cout) or unbound Var for none.
Var conv2d(Var x, Var weight, Var bias, std::size_t stride = 1, std::size_t pad = 0);
Var conv_transpose2d(Var x, Var weight, Var bias, std::size_t stride, std::size_t pad = 0);
/// x (..., in) times weight (in, out) plus bias (out).
Var fully_connected(Var x, Var weight, Var bias);

/// Normalises each vector along the last axis, then applies scale and shift.
Var layer_norm(Var x, Var gamma, Var beta, double eps = 1e-6);
Var softmax(Var x, int axis = -1);
/// Exact Gaussian-CDF form: 0.5 x (1 + erf(x / sqrt 2)).
Var gelu(Var x);
Var softplus(Var x);
Var sqrt(Var x);
/// (H, W, C) -> (C)
Var global_average_pool(Var x);
Var sum(Var x);

Var reshape(Var x, Shape shape);
Var permute(Var x, std::vector<std::size_t> perm);
Var concat(std::span<const Var> parts, std::size_t axis);
std::vector<Var> split(Var x, std::size_t axis, std::span<const std::size_t> sizes);
/// Repeats the whole extent of `axis` `reps` times.
Var tile(Var x, std::size_t axis, std::size_t reps);
/// Reflect-pads (H, W, C) at the bottom and right (mirror excluding the edge sample).
Var pad_reflect(Var x, std::size_t pad_bottom, std::size_t pad_right);
/// Keeps the top-left (height, width) block of (H, W, C).
Var crop(Var x, std::size_t height, std::size_t width);

/// Attributes for the generic dispatcher; each primitive reads only the fields it needs.
struct PrimitiveAttrs {
  std::size_t stride = 1;
  std::size_t pad = 0;
  std::size_t pad_right = 0;
  int axis = -1;
  double factor = 1.0;
  double eps = 1e-6;
  bool trans_a = false;
  bool trans_b = false;
  Shape shape;
  std::vector<std::size_t> perm;
  std::vector<std::size_t> sizes;
  std::size_t reps = 1;
};

/// Generic entry point over the closed primitive catalog. Split returns all pieces;
/// every other primitive returns one output. Throws ValueError for primitives that
/// cannot be dispatched generically (leaf, CASSI-specific ones).
std::vector<Var> apply_primitive(Primitive kind, std::span<const Var> inputs,
                                 const PrimitiveAttrs& attrs = {});

}  // namespace dauhst::ad
