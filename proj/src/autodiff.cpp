#include "fcac/autodiff.hpp"

#include <algorithm>
#include <cmath>

namespace fcac::diff {

const char* op_name(OpKind kind) {
  switch (kind) {
    case OpKind::kInput: return "input";
    case OpKind::kAdd: return "add";
    case OpKind::kSub: return "sub";
    case OpKind::kMul: return "mul";
    case OpKind::kDiv: return "div";
    case OpKind::kMatmul: return "matmul";
    case OpKind::kExp: return "exp";
    case OpKind::kLog: return "log";
    case OpKind::kRelu: return "relu";
    case OpKind::kSum: return "sum";
    case OpKind::kMean: return "mean";
    case OpKind::kMax: return "max";
    case OpKind::kL2Norm: return "l2norm";
    case OpKind::kDot: return "dot";
    case OpKind::kConcat: return "concat";
    case OpKind::kBroadcast: return "broadcast";
    case OpKind::kScale: return "scale";
    case OpKind::kConv2dSame: return "conv2d_same";
    case OpKind::kMeanPool2: return "mean_pool2";
    case OpKind::kGlobalMeanPool: return "global_mean_pool";
    case OpKind::kMeanOverHeight: return "mean_over_height";
    case OpKind::kFlatten: return "flatten";
    case OpKind::kChannelAffine: return "channel_affine";
  }
  return "?";
}

void Tape::check(Var v) const {
  if (v.id < 0 || v.id >= static_cast<int>(nodes_.size())) {
    fail(ErrorCode::kShapeMismatch, "invalid tape handle");
  }
}

void Tape::shape_error(OpKind kind, const std::string& detail) const {
  fail(ErrorCode::kShapeMismatch,
       std::string(op_name(kind)) + " at node " + std::to_string(nodes_.size()) + ": " + detail);
}

Var Tape::push(Node n) {
  if (!n.value.all_finite()) {
    fail(ErrorCode::kDiverged, std::string("non-finite value from ") + op_name(n.kind) +
                                   " at node " + std::to_string(nodes_.size()));
  }
  nodes_.push_back(std::move(n));
  return Var{static_cast<int>(nodes_.size()) - 1};
}

Var Tape::input(Tensor value) {
  Node n;
  n.kind = OpKind::kInput;
  n.value = std::move(value);
  return push(std::move(n));
}

Var Tape::elementwise(OpKind kind, Var a, Var b) {
  check(a);
  check(b);
  const Tensor& va = node(a.id).value;
  const Tensor& vb = node(b.id).value;
  if (!va.same_shape(vb) && !va.is_scalar() && !vb.is_scalar()) {
    shape_error(kind, va.shape_string() + " vs " + vb.shape_string());
  }
  Node n;
  n.kind = kind;
  n.a = a.id;
  n.b = b.id;
  const Tensor& big = va.is_scalar() ? vb : va;
  n.value = Tensor(big.shape());
  const long long sz = big.size();
  for (long long i = 0; i < sz; ++i) {
    const double x = va.is_scalar() ? va[0] : va[i];
    const double y = vb.is_scalar() ? vb[0] : vb[i];
    double r = 0.0;
    switch (kind) {
      case OpKind::kAdd: r = x + y; break;
      case OpKind::kSub: r = x - y; break;
      case OpKind::kMul: r = x * y; break;
      case OpKind::kDiv: r = x / y; break;
      default: break;
    }
    n.value[i] = r;
  }
  return push(std::move(n));
}

Var Tape::add(Var a, Var b) { return elementwise(OpKind::kAdd, a, b); }
Var Tape::sub(Var a, Var b) { return elementwise(OpKind::kSub, a, b); }
Var Tape::mul(Var a, Var b) { return elementwise(OpKind::kMul, a, b); }
Var Tape::div(Var a, Var b) { return elementwise(OpKind::kDiv, a, b); }

Var Tape::matmul(Var a, Var b) {
  check(a);
  check(b);
  const Tensor& va = node(a.id).value;
  const Tensor& vb = node(b.id).value;
  if (va.ndim() != 2) shape_error(OpKind::kMatmul, "lhs must be 2-D, got " + va.shape_string());
  const int p = va.shape()[0];
  const int q = va.shape()[1];
  int r;
  if (vb.ndim() == 2) {
    if (vb.shape()[0] != q) {
      shape_error(OpKind::kMatmul, va.shape_string() + " x " + vb.shape_string());
    }
    r = vb.shape()[1];
  } else if (vb.ndim() == 1) {
    if (vb.shape()[0] != q) {
      shape_error(OpKind::kMatmul, va.shape_string() + " x " + vb.shape_string());
    }
    r = 0;  // vector result
  } else {
    shape_error(OpKind::kMatmul, "rhs must be 1-D or 2-D, got " + vb.shape_string());
  }

  Node n;
  n.kind = OpKind::kMatmul;
  n.a = a.id;
  n.b = b.id;
  const int rr = r == 0 ? 1 : r;
  n.value = r == 0 ? Tensor({p}) : Tensor({p, r});
  for (int i = 0; i < p; ++i) {
    for (int j = 0; j < rr; ++j) {
      double s = 0.0;
      for (int k = 0; k < q; ++k) {
        s += va[static_cast<long long>(i) * q + k] * vb[static_cast<long long>(k) * rr + j];
      }
      n.value[static_cast<long long>(i) * rr + j] = s;
    }
  }
  return push(std::move(n));
}

Var Tape::exp(Var a) {
  check(a);
  Node n;
  n.kind = OpKind::kExp;
  n.a = a.id;
  const Tensor& va = node(a.id).value;
  n.value = Tensor(va.shape());
  for (long long i = 0; i < va.size(); ++i) n.value[i] = std::exp(va[i]);
  return push(std::move(n));
}

Var Tape::log(Var a) {
  check(a);
  Node n;
  n.kind = OpKind::kLog;
  n.a = a.id;
  const Tensor& va = node(a.id).value;
  n.value = Tensor(va.shape());
  for (long long i = 0; i < va.size(); ++i) n.value[i] = std::log(va[i]);
  return push(std::move(n));
}

Var Tape::relu(Var a) {
  check(a);
  Node n;
  n.kind = OpKind::kRelu;
  n.a = a.id;
  const Tensor& va = node(a.id).value;
  n.value = Tensor(va.shape());
  for (long long i = 0; i < va.size(); ++i) n.value[i] = va[i] > 0.0 ? va[i] : 0.0;
  return push(std::move(n));
}

Var Tape::sum(Var a) {
  check(a);
  Node n;
  n.kind = OpKind::kSum;
  n.a = a.id;
  const Tensor& va = node(a.id).value;
  double s = 0.0;
  for (long long i = 0; i < va.size(); ++i) s += va[i];
  n.value = Tensor::scalar(s);
  return push(std::move(n));
}

Var Tape::mean(Var a) {
  check(a);
  Node n;
  n.kind = OpKind::kMean;
  n.a = a.id;
  const Tensor& va = node(a.id).value;
  double s = 0.0;
  for (long long i = 0; i < va.size(); ++i) s += va[i];
  n.value = Tensor::scalar(s / static_cast<double>(va.size()));
  return push(std::move(n));
}

Var Tape::max(Var a) {
  check(a);
  Node n;
  n.kind = OpKind::kMax;
  n.a = a.id;
  const Tensor& va = node(a.id).value;
  long long best = 0;
  for (long long i = 1; i < va.size(); ++i) {
    if (va[i] > va[best]) best = i;
  }
  n.iarg = static_cast<int>(best);
  n.value = Tensor::scalar(va[best]);
  return push(std::move(n));
}

Var Tape::l2norm(Var a) {
  check(a);
  Node n;
  n.kind = OpKind::kL2Norm;
  n.a = a.id;
  n.value = Tensor::scalar(l2_norm(node(a.id).value));
  return push(std::move(n));
}

Var Tape::dot(Var a, Var b) {
  check(a);
  check(b);
  const Tensor& va = node(a.id).value;
  const Tensor& vb = node(b.id).value;
  if (va.size() != vb.size()) {
    shape_error(OpKind::kDot, va.shape_string() + " vs " + vb.shape_string());
  }
  Node n;
  n.kind = OpKind::kDot;
  n.a = a.id;
  n.b = b.id;
  n.value = Tensor::scalar(fcac::dot(va, vb));
  return push(std::move(n));
}

Var Tape::concat(std::span<const Var> parts) {
  if (parts.empty()) fail(ErrorCode::kShapeMismatch, "concat of nothing");
  long long total = 0;
  for (Var p : parts) {
    check(p);
    total += node(p.id).value.size();
  }
  Node n;
  n.kind = OpKind::kConcat;
  n.value = Tensor({static_cast<int>(total)});
  long long off = 0;
  for (Var p : parts) {
    n.rest.push_back(p.id);
    const Tensor& vp = node(p.id).value;
    for (long long i = 0; i < vp.size(); ++i) n.value[off + i] = vp[i];
    off += vp.size();
  }
  return push(std::move(n));
}

Var Tape::broadcast(Var scalar, const std::vector<int>& shape) {
  check(scalar);
  const Tensor& vs = node(scalar.id).value;
  if (!vs.is_scalar()) shape_error(OpKind::kBroadcast, "source must be scalar");
  Node n;
  n.kind = OpKind::kBroadcast;
  n.a = scalar.id;
  n.value = Tensor::full(shape, vs[0]);
  return push(std::move(n));
}

Var Tape::scale(Var a, double c) {
  check(a);
  Node n;
  n.kind = OpKind::kScale;
  n.a = a.id;
  n.darg = c;
  const Tensor& va = node(a.id).value;
  n.value = Tensor(va.shape());
  for (long long i = 0; i < va.size(); ++i) n.value[i] = c * va[i];
  return push(std::move(n));
}

Var Tape::conv2d_same(Var x, Var w) {
  check(x);
  check(w);
  const Tensor& vx = node(x.id).value;
  const Tensor& vw = node(w.id).value;
  if (vx.ndim() != 3) shape_error(OpKind::kConv2dSame, "input must be C x H x W");
  if (vw.ndim() != 4) shape_error(OpKind::kConv2dSame, "kernel must be F x C x kh x kw");
  const int c_in = vx.shape()[0], h = vx.shape()[1], wdt = vx.shape()[2];
  const int f = vw.shape()[0], kc = vw.shape()[1], kh = vw.shape()[2], kw = vw.shape()[3];
  if (kc != c_in) shape_error(OpKind::kConv2dSame, "kernel channels != input channels");
  if (kh % 2 == 0 || kw % 2 == 0) shape_error(OpKind::kConv2dSame, "kernel dims must be odd");
  const int ph = kh / 2, pw = kw / 2;

  Node n;
  n.kind = OpKind::kConv2dSame;
  n.a = x.id;
  n.b = w.id;
  n.value = Tensor({f, h, wdt});
  for (int fo = 0; fo < f; ++fo) {
    for (int ci = 0; ci < c_in; ++ci) {
      for (int dy = 0; dy < kh; ++dy) {
        for (int dx = 0; dx < kw; ++dx) {
          const double kv = vw[((static_cast<long long>(fo) * kc + ci) * kh + dy) * kw + dx];
          if (kv == 0.0) continue;
          const int y0 = std::max(0, ph - dy);
          const int y1 = std::min(h, h + ph - dy);
          const int x0 = std::max(0, pw - dx);
          const int x1 = std::min(wdt, wdt + pw - dx);
          for (int oy = y0; oy < y1; ++oy) {
            const int iy = oy + dy - ph;
            const double* src = vx.data() + (static_cast<long long>(ci) * h + iy) * wdt;
            double* dst = n.value.data() + (static_cast<long long>(fo) * h + oy) * wdt;
            for (int ox = x0; ox < x1; ++ox) {
              dst[ox] += kv * src[ox + dx - pw];
            }
          }
        }
      }
    }
  }
  return push(std::move(n));
}

Var Tape::mean_pool2(Var x) {
  check(x);
  const Tensor& vx = node(x.id).value;
  if (vx.ndim() != 3) shape_error(OpKind::kMeanPool2, "input must be C x H x W");
  const int c = vx.shape()[0], h = vx.shape()[1], w = vx.shape()[2];
  const int oh = h / 2, ow = w / 2;
  if (oh == 0 || ow == 0) shape_error(OpKind::kMeanPool2, "input too small to pool");
  Node n;
  n.kind = OpKind::kMeanPool2;
  n.a = x.id;
  n.value = Tensor({c, oh, ow});
  for (int ci = 0; ci < c; ++ci) {
    for (int oy = 0; oy < oh; ++oy) {
      for (int ox = 0; ox < ow; ++ox) {
        double s = vx.at(ci, 2 * oy, 2 * ox) + vx.at(ci, 2 * oy, 2 * ox + 1) +
                   vx.at(ci, 2 * oy + 1, 2 * ox) + vx.at(ci, 2 * oy + 1, 2 * ox + 1);
        n.value.at(ci, oy, ox) = 0.25 * s;
      }
    }
  }
  return push(std::move(n));
}

Var Tape::global_mean_pool(Var x) {
  check(x);
  const Tensor& vx = node(x.id).value;
  if (vx.ndim() != 3) shape_error(OpKind::kGlobalMeanPool, "input must be C x H x W");
  const int c = vx.shape()[0], h = vx.shape()[1], w = vx.shape()[2];
  Node n;
  n.kind = OpKind::kGlobalMeanPool;
  n.a = x.id;
  n.value = Tensor({c});
  const double inv = 1.0 / (static_cast<double>(h) * w);
  for (int ci = 0; ci < c; ++ci) {
    double s = 0.0;
    for (int y = 0; y < h; ++y) {
      for (int xw = 0; xw < w; ++xw) s += vx.at(ci, y, xw);
    }
    n.value[ci] = s * inv;
  }
  return push(std::move(n));
}

Var Tape::mean_over_height(Var x) {
  check(x);
  const Tensor& vx = node(x.id).value;
  if (vx.ndim() != 3) shape_error(OpKind::kMeanOverHeight, "input must be C x H x W");
  const int c = vx.shape()[0], h = vx.shape()[1], w = vx.shape()[2];
  Node n;
  n.kind = OpKind::kMeanOverHeight;
  n.a = x.id;
  n.value = Tensor({c, w});
  const double inv = 1.0 / static_cast<double>(h);
  for (int ci = 0; ci < c; ++ci) {
    for (int xw = 0; xw < w; ++xw) {
      double s = 0.0;
      for (int y = 0; y < h; ++y) s += vx.at(ci, y, xw);
      n.value.at(ci, xw) = s * inv;
    }
  }
  return push(std::move(n));
}

Var Tape::flatten(Var x) {
  check(x);
  const Tensor& vx = node(x.id).value;
  Node n;
  n.kind = OpKind::kFlatten;
  n.a = x.id;
  n.value = Tensor({static_cast<int>(vx.size())}, vx.vec());
  return push(std::move(n));
}

Var Tape::channel_affine(Var x, Var gamma, Var beta) {
  check(x);
  check(gamma);
  check(beta);
  const Tensor& vx = node(x.id).value;
  const Tensor& vg = node(gamma.id).value;
  const Tensor& vb = node(beta.id).value;
  if (vx.ndim() != 3) shape_error(OpKind::kChannelAffine, "input must be C x H x W");
  const int c = vx.shape()[0];
  if (vg.size() != c || vb.size() != c) {
    shape_error(OpKind::kChannelAffine, "gamma/beta must have one entry per channel");
  }
  Node n;
  n.kind = OpKind::kChannelAffine;
  n.a = x.id;
  n.b = gamma.id;
  n.c = beta.id;
  n.value = Tensor(vx.shape());
  const int hw = vx.shape()[1] * vx.shape()[2];
  for (int ci = 0; ci < c; ++ci) {
    const double g = vg[ci], be = vb[ci];
    const double* src = vx.data() + static_cast<long long>(ci) * hw;
    double* dst = n.value.data() + static_cast<long long>(ci) * hw;
    for (int i = 0; i < hw; ++i) dst[i] = g * src[i] + be;
  }
  return push(std::move(n));
}

const Tensor& Tape::grad(Var v) const {
  check(v);
  const Node& n = node(v.id);
  if (n.grad.size() == 0) {
    static thread_local Tensor zero;
    zero = Tensor(n.value.shape());
    return zero;
  }
  return n.grad;
}

int Tape::argmax_of(Var max_node) const {
  check(max_node);
  const Node& n = node(max_node.id);
  if (n.kind != OpKind::kMax) fail(ErrorCode::kShapeMismatch, "argmax_of on a non-max node");
  return n.iarg;
}

Tensor& Tape::grad_buffer(int id) {
  Node& n = node(id);
  if (n.grad.size() == 0) n.grad = Tensor(n.value.shape());
  return n.grad;
}

void Tape::accumulate(int id, const Tensor& delta) {
  Tensor& g = grad_buffer(id);
  for (long long i = 0; i < g.size(); ++i) g[i] += delta[i];
}

void Tape::backward(Var root) {
  check(root);
  if (!node(root.id).value.is_scalar()) {
    fail(ErrorCode::kNonScalarRoot, "backward root has shape " + node(root.id).value.shape_string());
  }
  grad_buffer(root.id)[0] = 1.0;
  for (int id = root.id; id >= 0; --id) {
    if (node(id).grad.size() == 0) continue;  // not on a path to the root
    backward_node(id);
  }
  ran_backward_ = true;
}

void Tape::backward_node(int id) {
  Node& n = node(id);
  const Tensor& gy = n.grad;
  switch (n.kind) {
    case OpKind::kInput:
      break;
    case OpKind::kAdd:
    case OpKind::kSub:
    case OpKind::kMul:
    case OpKind::kDiv: {
      const Tensor& va = node(n.a).value;
      const Tensor& vb = node(n.b).value;
      Tensor& ga = grad_buffer(n.a);
      Tensor& gb = grad_buffer(n.b);
      for (long long i = 0; i < gy.size(); ++i) {
        const double g = gy[i];
        const long long ia = va.is_scalar() ? 0 : i;
        const long long ib = vb.is_scalar() ? 0 : i;
        switch (n.kind) {
          case OpKind::kAdd:
            ga[ia] += g;
            gb[ib] += g;
            break;
          case OpKind::kSub:
            ga[ia] += g;
            gb[ib] -= g;
            break;
          case OpKind::kMul:
            ga[ia] += g * vb[ib];
            gb[ib] += g * va[ia];
            break;
          case OpKind::kDiv: {
            const double y = vb[ib];
            ga[ia] += g / y;
            gb[ib] -= g * va[ia] / (y * y);
            break;
          }
          default: break;
        }
      }
      break;
    }
    case OpKind::kMatmul: {
      const Tensor& va = node(n.a).value;
      const Tensor& vb = node(n.b).value;
      Tensor& ga = grad_buffer(n.a);
      Tensor& gb = grad_buffer(n.b);
      const int p = va.shape()[0];
      const int q = va.shape()[1];
      const int r = vb.ndim() == 2 ? vb.shape()[1] : 1;
      // dA = gy . B^T, dB = A^T . gy
      for (int i = 0; i < p; ++i) {
        for (int k = 0; k < q; ++k) {
          double s = 0.0;
          for (int j = 0; j < r; ++j) {
            s += gy[static_cast<long long>(i) * r + j] * vb[static_cast<long long>(k) * r + j];
          }
          ga[static_cast<long long>(i) * q + k] += s;
        }
      }
      for (int k = 0; k < q; ++k) {
        for (int j = 0; j < r; ++j) {
          double s = 0.0;
          for (int i = 0; i < p; ++i) {
            s += va[static_cast<long long>(i) * q + k] * gy[static_cast<long long>(i) * r + j];
          }
          gb[static_cast<long long>(k) * r + j] += s;
        }
      }
      break;
    }
    case OpKind::kExp: {
      Tensor& ga = grad_buffer(n.a);
      for (long long i = 0; i < gy.size(); ++i) ga[i] += gy[i] * n.value[i];
      break;
    }
    case OpKind::kLog: {
      const Tensor& va = node(n.a).value;
      Tensor& ga = grad_buffer(n.a);
      for (long long i = 0; i < gy.size(); ++i) ga[i] += gy[i] / va[i];
      break;
    }
    case OpKind::kRelu: {
      const Tensor& va = node(n.a).value;
      Tensor& ga = grad_buffer(n.a);
      for (long long i = 0; i < gy.size(); ++i) ga[i] += va[i] > 0.0 ? gy[i] : 0.0;
      break;
    }
    case OpKind::kSum: {
      Tensor& ga = grad_buffer(n.a);
      const double g = gy[0];
      for (long long i = 0; i < ga.size(); ++i) ga[i] += g;
      break;
    }
    case OpKind::kMean: {
      Tensor& ga = grad_buffer(n.a);
      const double g = gy[0] / static_cast<double>(ga.size());
      for (long long i = 0; i < ga.size(); ++i) ga[i] += g;
      break;
    }
    case OpKind::kMax: {
      Tensor& ga = grad_buffer(n.a);
      ga[n.iarg] += gy[0];
      break;
    }
    case OpKind::kL2Norm: {
      const Tensor& va = node(n.a).value;
      Tensor& ga = grad_buffer(n.a);
      const double norm = n.value[0];
      if (norm > 0.0) {
        const double g = gy[0] / norm;
        for (long long i = 0; i < ga.size(); ++i) ga[i] += g * va[i];
      }
      break;
    }
    case OpKind::kDot: {
      const Tensor& va = node(n.a).value;
      const Tensor& vb = node(n.b).value;
      Tensor& ga = grad_buffer(n.a);
      Tensor& gb = grad_buffer(n.b);
      const double g = gy[0];
      for (long long i = 0; i < va.size(); ++i) {
        ga[i] += g * vb[i];
        gb[i] += g * va[i];
      }
      break;
    }
    case OpKind::kConcat: {
      long long off = 0;
      for (int pid : n.rest) {
        Tensor& gp = grad_buffer(pid);
        for (long long i = 0; i < gp.size(); ++i) gp[i] += gy[off + i];
        off += gp.size();
      }
      break;
    }
    case OpKind::kBroadcast: {
      Tensor& ga = grad_buffer(n.a);
      double s = 0.0;
      for (long long i = 0; i < gy.size(); ++i) s += gy[i];
      ga[0] += s;
      break;
    }
    case OpKind::kScale: {
      Tensor& ga = grad_buffer(n.a);
      for (long long i = 0; i < gy.size(); ++i) ga[i] += n.darg * gy[i];
      break;
    }
    case OpKind::kConv2dSame: {
      const Tensor& vx = node(n.a).value;
      const Tensor& vw = node(n.b).value;
      Tensor& gx = grad_buffer(n.a);
      Tensor& gw = grad_buffer(n.b);
      const int c_in = vx.shape()[0], h = vx.shape()[1], wdt = vx.shape()[2];
      const int f = vw.shape()[0], kh = vw.shape()[2], kw = vw.shape()[3];
      const int ph = kh / 2, pw = kw / 2;
      for (int fo = 0; fo < f; ++fo) {
        for (int ci = 0; ci < c_in; ++ci) {
          for (int dy = 0; dy < kh; ++dy) {
            for (int dx = 0; dx < kw; ++dx) {
              const long long widx = ((static_cast<long long>(fo) * c_in + ci) * kh + dy) * kw + dx;
              const double kv = vw[widx];
              double wsum = 0.0;
              const int y0 = std::max(0, ph - dy);
              const int y1 = std::min(h, h + ph - dy);
              const int x0 = std::max(0, pw - dx);
              const int x1 = std::min(wdt, wdt + pw - dx);
              for (int oy = y0; oy < y1; ++oy) {
                const int iy = oy + dy - ph;
                const double* gsrc = gy.data() + (static_cast<long long>(fo) * h + oy) * wdt;
                const double* xsrc = vx.data() + (static_cast<long long>(ci) * h + iy) * wdt;
                double* xdst = gx.data() + (static_cast<long long>(ci) * h + iy) * wdt;
                for (int ox = x0; ox < x1; ++ox) {
                  const double g = gsrc[ox];
                  wsum += g * xsrc[ox + dx - pw];
                  xdst[ox + dx - pw] += g * kv;
                }
              }
              gw[widx] += wsum;
            }
          }
        }
      }
      break;
    }
    case OpKind::kMeanPool2: {
      Tensor& gx = grad_buffer(n.a);
      const int c = n.value.shape()[0], oh = n.value.shape()[1], ow = n.value.shape()[2];
      for (int ci = 0; ci < c; ++ci) {
        for (int oy = 0; oy < oh; ++oy) {
          for (int ox = 0; ox < ow; ++ox) {
            const double g = 0.25 * gy.at(ci, oy, ox);
            gx.at(ci, 2 * oy, 2 * ox) += g;
            gx.at(ci, 2 * oy, 2 * ox + 1) += g;
            gx.at(ci, 2 * oy + 1, 2 * ox) += g;
            gx.at(ci, 2 * oy + 1, 2 * ox + 1) += g;
          }
        }
      }
      break;
    }
    case OpKind::kGlobalMeanPool: {
      Tensor& gx = grad_buffer(n.a);
      const int c = gx.shape()[0], h = gx.shape()[1], w = gx.shape()[2];
      const double inv = 1.0 / (static_cast<double>(h) * w);
      for (int ci = 0; ci < c; ++ci) {
        const double g = gy[ci] * inv;
        for (int y = 0; y < h; ++y) {
          for (int xw = 0; xw < w; ++xw) gx.at(ci, y, xw) += g;
        }
      }
      break;
    }
    case OpKind::kMeanOverHeight: {
      Tensor& gx = grad_buffer(n.a);
      const int c = gx.shape()[0], h = gx.shape()[1], w = gx.shape()[2];
      const double inv = 1.0 / static_cast<double>(h);
      for (int ci = 0; ci < c; ++ci) {
        for (int xw = 0; xw < w; ++xw) {
          const double g = gy.at(ci, xw) * inv;
          for (int y = 0; y < h; ++y) gx.at(ci, y, xw) += g;
        }
      }
      break;
    }
    case OpKind::kFlatten: {
      Tensor& gx = grad_buffer(n.a);
      for (long long i = 0; i < gy.size(); ++i) gx[i] += gy[i];
      break;
    }
    case OpKind::kChannelAffine: {
      const Tensor& vx = node(n.a).value;
      const Tensor& vg = node(n.b).value;
      Tensor& gx = grad_buffer(n.a);
      Tensor& gg = grad_buffer(n.b);
      Tensor& gb = grad_buffer(n.c);
      const int c = vx.shape()[0];
      const int hw = vx.shape()[1] * vx.shape()[2];
      for (int ci = 0; ci < c; ++ci) {
        const double g = vg[ci];
        const double* gysrc = gy.data() + static_cast<long long>(ci) * hw;
        const double* xsrc = vx.data() + static_cast<long long>(ci) * hw;
        double* gxdst = gx.data() + static_cast<long long>(ci) * hw;
        double sg = 0.0, sb = 0.0;
        for (int i = 0; i < hw; ++i) {
          gxdst[i] += g * gysrc[i];
          sg += gysrc[i] * xsrc[i];
          sb += gysrc[i];
        }
        gg[ci] += sg;
        gb[ci] += sb;
      }
      break;
    }
  }
}

}  // namespace fcac::diff
