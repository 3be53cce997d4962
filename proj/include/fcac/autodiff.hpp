#pragma once

#include <span>
#include <string>
#include <vector>

#include "fcac/error.hpp"
#include "fcac/tensor.hpp"

namespace fcac::diff {

// Handle into a Tape.
struct Var {
  int id = -1;
  bool valid() const { return id >= 0; }
};

enum class OpKind {
  kInput,
  kAdd,
  kSub,
  kMul,
  kDiv,
  kMatmul,
  kExp,
  kLog,
  kRelu,
  kSum,
  kMean,
  kMax,
  kL2Norm,
  kDot,
  kConcat,
  kBroadcast,
  kScale,
  kConv2dSame,
  kMeanPool2,
  kGlobalMeanPool,
  kMeanOverHeight,
  kFlatten,
  kChannelAffine,
};

const char* op_name(OpKind kind);

// Reverse-mode tape. Operations evaluate eagerly; backward() runs one reverse
// sweep from a scalar root. Nodes refer to parents by index, so creation
// order is already a topological order. A tape is confined to one thread.
class Tape {
 public:
  Var input(Tensor value);
  Var constant(double value) { return input(Tensor::scalar(value)); }

  // Elementwise; one operand may be a scalar (implicit broadcast).
  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var mul(Var a, Var b);
  Var div(Var a, Var b);

  // A: p x q. B: q x r, or a length-q vector (treated as q x 1).
  Var matmul(Var a, Var b);

  Var exp(Var a);
  Var log(Var a);
  Var relu(Var a);  // subgradient at 0 is 0

  Var sum(Var a);
  Var mean(Var a);
  Var max(Var a);  // max with index; subgradient routed to first argmax
  Var l2norm(Var a);
  Var dot(Var a, Var b);
  Var concat(std::span<const Var> parts);  // 1-D concatenation
  Var broadcast(Var scalar, const std::vector<int>& shape);
  Var scale(Var a, double c);

  // x: C x H x W. w: F x C x kh x kw with odd kh, kw. Zero "same" padding.
  Var conv2d_same(Var x, Var w);
  Var mean_pool2(Var x);         // 2x2 / stride 2, odd edges dropped
  Var global_mean_pool(Var x);   // C x H x W -> C
  Var mean_over_height(Var x);   // C x H x W -> C x W
  Var flatten(Var x);            // any shape -> 1-D view
  // y[c,h,w] = gamma[c] * x[c,h,w] + beta[c]
  Var channel_affine(Var x, Var gamma, Var beta);

  // Reverse sweep from a scalar root. Throws kNonScalarRoot otherwise.
  void backward(Var root);

  const Tensor& value(Var v) const { return node(v.id).value; }
  const Tensor& grad(Var v) const;
  int argmax_of(Var max_node) const;
  int size() const { return static_cast<int>(nodes_.size()); }

 private:
  struct Node {
    OpKind kind;
    int a = -1;
    int b = -1;
    int c = -1;
    std::vector<int> rest;  // extra parents for concat
    Tensor value;
    Tensor grad;  // allocated lazily during backward
    int iarg = 0;
    double darg = 0.0;
  };

  Node& node(int id) { return nodes_[static_cast<size_t>(id)]; }
  const Node& node(int id) const { return nodes_[static_cast<size_t>(id)]; }
  Var push(Node n);
  void check(Var v) const;
  [[noreturn]] void shape_error(OpKind kind, const std::string& detail) const;
  Var elementwise(OpKind kind, Var a, Var b);
  Tensor& grad_buffer(int id);
  void accumulate(int id, const Tensor& delta);
  void backward_node(int id);

  std::vector<Node> nodes_;
  bool ran_backward_ = false;
};

}  // namespace fcac::diff
