#include "maldet/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "maldet/error.hpp"

namespace maldet::nd {

// ---------------------------------------------------------------------------
// Tape

Var Tape::push(Node node) {
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

Var Tape::constant(NumArray value) {
  value.check_finite("constant");
  return push(Node{std::move(value), {}, {}, false});
}

Var Tape::parameter(NumArray value) {
  value.check_finite("parameter");
  return push(Node{std::move(value), {}, {}, grad_enabled_});
}

Var Tape::record(NumArray value, std::initializer_list<Var> inputs, BackwardFn backward, const char* op) {
  return record(std::move(value), std::vector<Var>(inputs), std::move(backward), op);
}

Var Tape::record(NumArray value, const std::vector<Var>& inputs, BackwardFn backward, const char* op) {
  value.check_finite(op);
  Node node;
  node.value = std::move(value);
  for (const Var& in : inputs) {
    if (&in.tape() != this) throw Error(ErrorKind::ShapeMismatch, std::string(op) + ": input from another tape");
    node.inputs.push_back(in.id());
    node.requires_grad = node.requires_grad || nodes_[in.id()].requires_grad;
  }
  if (node.requires_grad) node.backward = std::move(backward);
  return push(std::move(node));
}

std::vector<NumArray> Tape::backward(Var loss, std::span<const Var> params) const {
  if (value(loss).size() != 1) throw Error(ErrorKind::ShapeMismatch, "backward needs a scalar loss");
  std::vector<NumArray> grads(loss.id() + 1);
  grads[loss.id()] = NumArray(value(loss).shape(), 1.0);

  std::vector<NumArray*> grad_in;
  for (std::size_t i = loss.id() + 1; i-- > 0;) {
    const Node& node = nodes_[i];
    if (grads[i].size() == 0 || !node.backward) continue;
    grad_in.assign(node.inputs.size(), nullptr);
    for (std::size_t k = 0; k < node.inputs.size(); ++k) {
      const std::size_t in = node.inputs[k];
      if (!nodes_[in].requires_grad) continue;
      if (grads[in].size() == 0) grads[in] = NumArray::zeros(nodes_[in].value.shape());
      grad_in[k] = &grads[in];
    }
    node.backward(node.value, grads[i], grad_in);
  }

  std::vector<NumArray> out;
  out.reserve(params.size());
  for (const Var& p : params) {
    if (p.id() > loss.id() || grads[p.id()].size() == 0) {
      throw Error(ErrorKind::DisconnectedGraph, "parameter node " + std::to_string(p.id()) + " does not reach the loss");
    }
    out.push_back(std::move(grads[p.id()]));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Operations

namespace {

[[noreturn]] void shape_error(const char* op, const Shape& a, const Shape& b) {
  throw Error(ErrorKind::ShapeMismatch, std::string(op) + ": " + shape_string(a) + " vs " + shape_string(b));
}

// Sizes of the axes before, at and after `axis`.
struct AxisSplit {
  std::size_t outer = 1;
  std::size_t extent = 1;
  std::size_t inner = 1;
};

AxisSplit split_at(const Shape& shape, std::size_t axis) {
  AxisSplit s;
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i < axis) s.outer *= shape[i];
    else if (i == axis) s.extent = shape[i];
    else s.inner *= shape[i];
  }
  return s;
}

template <typename F, typename D>
Var unary(Var a, const char* op, F f, D dfdx_from_out) {
  const NumArray& x = a.value();
  NumArray out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = f(x[i]);
  return a.tape().record(
      std::move(out), {a},
      [&x, dfdx_from_out](const NumArray& y, const NumArray& g, std::span<NumArray* const> gin) {
        NumArray& gx = *gin[0];
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * dfdx_from_out(x[i], y[i]);
      },
      op);
}

}  // namespace

Var matmul(Var a, Var b) {
  const NumArray& x = a.value();
  const NumArray& y = b.value();
  if (x.rank() != 2 || y.rank() != 2 || x.dim(1) != y.dim(0)) shape_error("matmul", x.shape(), y.shape());
  const std::size_t m = x.dim(0), k = x.dim(1), n = y.dim(1);
  NumArray out(Shape{m, n});
  matmul_into(x.data(), y.data(), out.data(), m, k, n, false);
  return a.tape().record(
      std::move(out), {a, b},
      [&x, &y, m, k, n](const NumArray&, const NumArray& g, std::span<NumArray* const> gin) {
        if (gin[0]) matmul_a_bt_acc(g.data(), y.data(), gin[0]->data(), m, n, k);
        if (gin[1]) matmul_at_b_acc(x.data(), g.data(), gin[1]->data(), m, k, n);
      },
      "matmul");
}

Var add(Var a, Var b) {
  const NumArray& x = a.value();
  const NumArray& y = b.value();
  const Shape& xs = x.shape();
  const Shape& ys = y.shape();
  if (ys.size() > xs.size() || !std::equal(ys.begin(), ys.end(), xs.end() - static_cast<std::ptrdiff_t>(ys.size()))) {
    shape_error("add", xs, ys);
  }
  const std::size_t period = y.size();
  NumArray out = x;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += y[i % period];
  return a.tape().record(
      std::move(out), {a, b},
      [period](const NumArray&, const NumArray& g, std::span<NumArray* const> gin) {
        if (gin[0]) {
          for (std::size_t i = 0; i < g.size(); ++i) (*gin[0])[i] += g[i];
        }
        if (gin[1]) {
          for (std::size_t i = 0; i < g.size(); ++i) (*gin[1])[i % period] += g[i];
        }
      },
      "add");
}

Var sub(Var a, Var b) {
  const NumArray& x = a.value();
  const NumArray& y = b.value();
  if (x.shape() != y.shape()) shape_error("sub", x.shape(), y.shape());
  NumArray out = x;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= y[i];
  return a.tape().record(
      std::move(out), {a, b},
      [](const NumArray&, const NumArray& g, std::span<NumArray* const> gin) {
        for (std::size_t i = 0; i < g.size(); ++i) {
          if (gin[0]) (*gin[0])[i] += g[i];
          if (gin[1]) (*gin[1])[i] -= g[i];
        }
      },
      "sub");
}

Var mul(Var a, Var b) {
  const NumArray& x = a.value();
  const NumArray& y = b.value();
  if (x.shape() != y.shape()) shape_error("mul", x.shape(), y.shape());
  NumArray out = x;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= y[i];
  return a.tape().record(
      std::move(out), {a, b},
      [&x, &y](const NumArray&, const NumArray& g, std::span<NumArray* const> gin) {
        for (std::size_t i = 0; i < g.size(); ++i) {
          if (gin[0]) (*gin[0])[i] += g[i] * y[i];
          if (gin[1]) (*gin[1])[i] += g[i] * x[i];
        }
      },
      "mul");
}

Var scale(Var a, double factor) {
  return unary(
      a, "scale", [factor](double v) { return v * factor; }, [factor](double, double) { return factor; });
}

Var sigmoid(Var a) {
  return unary(
      a, "sigmoid",
      [](double v) {
        if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
        const double e = std::exp(v);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

Var tanh(Var a) {
  return unary(
      a, "tanh", [](double v) { return std::tanh(v); }, [](double, double y) { return 1.0 - y * y; });
}

Var relu(Var a) {
  return unary(
      a, "relu", [](double v) { return v > 0.0 ? v : 0.0; }, [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Var gather_rows(Var table, std::span<const std::int32_t> ids) {
  const NumArray& e = table.value();
  if (e.rank() != 2) throw Error(ErrorKind::ShapeMismatch, "gather_rows needs a 2-D table");
  if (ids.empty()) throw Error(ErrorKind::ShapeMismatch, "gather_rows with no ids");
  const std::size_t rows = e.dim(0), d = e.dim(1);
  std::vector<std::int32_t> idx(ids.begin(), ids.end());
  NumArray out(Shape{idx.size(), d});
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] < 0 || static_cast<std::size_t>(idx[i]) >= rows) {
      throw Error(ErrorKind::UnknownId, "id " + std::to_string(idx[i]) + " outside table of " + std::to_string(rows));
    }
    std::copy_n(e.data().begin() + static_cast<std::ptrdiff_t>(idx[i] * d), d,
                out.data().begin() + static_cast<std::ptrdiff_t>(i * d));
  }
  return table.tape().record(
      std::move(out), {table},
      [idx = std::move(idx), d](const NumArray&, const NumArray& g, std::span<NumArray* const> gin) {
        NumArray& ge = *gin[0];
        for (std::size_t i = 0; i < idx.size(); ++i) {
          const std::size_t row = static_cast<std::size_t>(idx[i]) * d;
          for (std::size_t c = 0; c < d; ++c) ge[row + c] += g[i * d + c];
        }
      },
      "gather_rows");
}

Var max_pool_1d(Var a, std::size_t window, std::size_t stride) {
  const NumArray& x = a.value();
  if (x.rank() < 2) throw Error(ErrorKind::ShapeMismatch, "max_pool_1d needs rank >= 2");
  if (window == 0 || stride == 0) throw Error(ErrorKind::ShapeMismatch, "max_pool_1d window/stride must be positive");
  const std::size_t axis = x.rank() - 2;
  const AxisSplit s = split_at(x.shape(), axis);
  const std::size_t len = s.extent, channels = s.inner;
  if (len < window) {
    throw Error(ErrorKind::ShapeMismatch, "max_pool_1d window " + std::to_string(window) + " exceeds length " +
                                              std::to_string(len));
  }
  const std::size_t out_len = (len - window) / stride + 1;
  Shape out_shape = x.shape();
  out_shape[axis] = out_len;
  NumArray out(out_shape);
  std::vector<std::size_t> argmax(out.size());
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t t = 0; t < out_len; ++t) {
      for (std::size_t c = 0; c < channels; ++c) {
        std::size_t best = (o * len + t * stride) * channels + c;
        for (std::size_t w = 1; w < window; ++w) {
          const std::size_t cand = (o * len + t * stride + w) * channels + c;
          if (x[cand] > x[best]) best = cand;
        }
        const std::size_t dst = (o * out_len + t) * channels + c;
        out[dst] = x[best];
        argmax[dst] = best;
      }
    }
  }
  return a.tape().record(
      std::move(out), {a},
      [argmax = std::move(argmax)](const NumArray&, const NumArray& g, std::span<NumArray* const> gin) {
        for (std::size_t i = 0; i < g.size(); ++i) (*gin[0])[argmax[i]] += g[i];
      },
      "max_pool_1d");
}

Var conv1d(Var x_var, Var w_var, Var b_var) {
  const NumArray& x = x_var.value();
  const NumArray& w = w_var.value();
  const NumArray& b = b_var.value();
  if (x.rank() != 2 && x.rank() != 3) throw Error(ErrorKind::ShapeMismatch, "conv1d input must be rank 2 or 3");
  const bool batched = x.rank() == 3;
  const std::size_t batch = batched ? x.dim(0) : 1;
  const std::size_t len = x.dim(x.rank() - 2), in_ch = x.dim(x.rank() - 1);
  if (w.rank() != 3 || w.dim(2) != in_ch) shape_error("conv1d weight", x.shape(), w.shape());
  const std::size_t filters = w.dim(0), kernel = w.dim(1);
  if (b.rank() != 1 || b.dim(0) != filters) shape_error("conv1d bias", w.shape(), b.shape());
  if (len < kernel) {
    throw Error(ErrorKind::ShapeMismatch, "conv1d kernel " + std::to_string(kernel) + " exceeds length " +
                                              std::to_string(len));
  }
  const std::size_t out_len = len - kernel + 1;
  const std::size_t patch = kernel * in_ch;  // a window of K rows is contiguous in row-major X
  Shape out_shape = batched ? Shape{batch, out_len, filters} : Shape{out_len, filters};
  NumArray out(out_shape);
  for (std::size_t n = 0; n < batch; ++n) {
    for (std::size_t t = 0; t < out_len; ++t) {
      const double* window = x.data().data() + (n * len + t) * in_ch;
      double* dst = out.data().data() + (n * out_len + t) * filters;
      for (std::size_t f = 0; f < filters; ++f) {
        const double* filt = w.data().data() + f * patch;
        double s = b[f];
        for (std::size_t p = 0; p < patch; ++p) s += filt[p] * window[p];
        dst[f] = s;
      }
    }
  }
  return x_var.tape().record(
      std::move(out), {x_var, w_var, b_var},
      [&x, &w, batch, len, in_ch, filters, out_len, patch](const NumArray&, const NumArray& g,
                                                           std::span<NumArray* const> gin) {
        for (std::size_t n = 0; n < batch; ++n) {
          for (std::size_t t = 0; t < out_len; ++t) {
            const std::size_t xoff = (n * len + t) * in_ch;
            const double* gout = g.data().data() + (n * out_len + t) * filters;
            for (std::size_t f = 0; f < filters; ++f) {
              const double gv = gout[f];
              if (gv == 0.0) continue;
              if (gin[2]) (*gin[2])[f] += gv;
              if (gin[1]) {
                double* gw = gin[1]->data().data() + f * patch;
                for (std::size_t p = 0; p < patch; ++p) gw[p] += gv * x[xoff + p];
              }
              if (gin[0]) {
                double* gx = gin[0]->data().data() + xoff;
                const double* filt = w.data().data() + f * patch;
                for (std::size_t p = 0; p < patch; ++p) gx[p] += gv * filt[p];
              }
            }
          }
        }
      },
      "conv1d");
}

Var concat(Var a, Var b, std::size_t axis) {
  const NumArray& x = a.value();
  const NumArray& y = b.value();
  if (x.rank() != y.rank() || axis >= x.rank()) shape_error("concat", x.shape(), y.shape());
  for (std::size_t i = 0; i < x.rank(); ++i) {
    if (i != axis && x.dim(i) != y.dim(i)) shape_error("concat", x.shape(), y.shape());
  }
  const AxisSplit sx = split_at(x.shape(), axis);
  const AxisSplit sy = split_at(y.shape(), axis);
  const std::size_t xa = sx.extent * sx.inner, ya = sy.extent * sy.inner;
  Shape out_shape = x.shape();
  out_shape[axis] += y.dim(axis);
  NumArray out(out_shape);
  for (std::size_t o = 0; o < sx.outer; ++o) {
    std::copy_n(x.data().begin() + static_cast<std::ptrdiff_t>(o * xa), xa,
                out.data().begin() + static_cast<std::ptrdiff_t>(o * (xa + ya)));
    std::copy_n(y.data().begin() + static_cast<std::ptrdiff_t>(o * ya), ya,
                out.data().begin() + static_cast<std::ptrdiff_t>(o * (xa + ya) + xa));
  }
  return a.tape().record(
      std::move(out), {a, b},
      [outer = sx.outer, xa, ya](const NumArray&, const NumArray& g, std::span<NumArray* const> gin) {
        for (std::size_t o = 0; o < outer; ++o) {
          const std::size_t base = o * (xa + ya);
          if (gin[0]) {
            for (std::size_t i = 0; i < xa; ++i) (*gin[0])[o * xa + i] += g[base + i];
          }
          if (gin[1]) {
            for (std::size_t i = 0; i < ya; ++i) (*gin[1])[o * ya + i] += g[base + xa + i];
          }
        }
      },
      "concat");
}

Var slice(Var a, std::size_t axis, std::size_t start, std::size_t length) {
  const NumArray& x = a.value();
  if (axis >= x.rank() || length == 0 || start + length > x.dim(axis)) {
    throw Error(ErrorKind::ShapeMismatch, "slice [" + std::to_string(start) + ", +" + std::to_string(length) +
                                              ") out of range for " + shape_string(x.shape()));
  }
  const AxisSplit s = split_at(x.shape(), axis);
  Shape out_shape = x.shape();
  out_shape[axis] = length;
  NumArray out(out_shape);
  const std::size_t chunk = length * s.inner;
  for (std::size_t o = 0; o < s.outer; ++o) {
    std::copy_n(x.data().begin() + static_cast<std::ptrdiff_t>((o * s.extent + start) * s.inner), chunk,
                out.data().begin() + static_cast<std::ptrdiff_t>(o * chunk));
  }
  return a.tape().record(
      std::move(out), {a},
      [s, start, chunk](const NumArray&, const NumArray& g, std::span<NumArray* const> gin) {
        for (std::size_t o = 0; o < s.outer; ++o) {
          const std::size_t base = (o * s.extent + start) * s.inner;
          for (std::size_t i = 0; i < chunk; ++i) (*gin[0])[base + i] += g[o * chunk + i];
        }
      },
      "slice");
}

Var select(Var a, std::size_t axis, std::size_t index) {
  Var part = slice(a, axis, index, 1);
  Shape shape = a.shape();
  shape.erase(shape.begin() + static_cast<std::ptrdiff_t>(axis));
  if (shape.empty()) shape = {1};
  return reshape(part, std::move(shape));
}

Var stack(const std::vector<Var>& parts, std::size_t axis) {
  if (parts.empty()) throw Error(ErrorKind::ShapeMismatch, "stack of nothing");
  const Shape& base = parts.front().shape();
  if (axis > base.size()) throw Error(ErrorKind::ShapeMismatch, "stack axis out of range");
  for (const Var& p : parts) {
    if (p.shape() != base) shape_error("stack", base, p.shape());
  }
  const AxisSplit s = split_at(base, axis);  // outer = dims before axis, inner = the rest
  const std::size_t inner = axis < base.size() ? s.extent * s.inner : 1;
  const std::size_t count = parts.size();
  Shape out_shape = base;
  out_shape.insert(out_shape.begin() + static_cast<std::ptrdiff_t>(axis), count);
  NumArray out(out_shape);
  for (std::size_t k = 0; k < count; ++k) {
    const NumArray& v = parts[k].value();
    for (std::size_t o = 0; o < s.outer; ++o) {
      std::copy_n(v.data().begin() + static_cast<std::ptrdiff_t>(o * inner), inner,
                  out.data().begin() + static_cast<std::ptrdiff_t>((o * count + k) * inner));
    }
  }
  return parts.front().tape().record(
      std::move(out), parts,
      [outer = s.outer, inner, count](const NumArray&, const NumArray& g, std::span<NumArray* const> gin) {
        for (std::size_t k = 0; k < count; ++k) {
          if (!gin[k]) continue;
          for (std::size_t o = 0; o < outer; ++o) {
            for (std::size_t i = 0; i < inner; ++i) (*gin[k])[o * inner + i] += g[(o * count + k) * inner + i];
          }
        }
      },
      "stack");
}

Var reshape(Var a, Shape shape) {
  NumArray out = a.value().reshaped(std::move(shape));
  return a.tape().record(
      std::move(out), {a},
      [](const NumArray&, const NumArray& g, std::span<NumArray* const> gin) {
        for (std::size_t i = 0; i < g.size(); ++i) (*gin[0])[i] += g[i];
      },
      "reshape");
}

Var sum(Var a) {
  double s = 0.0;
  for (double v : a.value().data()) s += v;
  return a.tape().record(
      NumArray::scalar(s), {a},
      [](const NumArray&, const NumArray& g, std::span<NumArray* const> gin) {
        for (auto& v : gin[0]->data()) v += g[0];
      },
      "sum");
}

Var mean(Var a) {
  return scale(sum(a), 1.0 / static_cast<double>(a.value().size()));
}

}  // namespace maldet::nd
