#include "beltcrack/ops.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace beltcrack {

std::string shape_string(const Shape& shape) {
  std::ostringstream out;
  out << "[";
  for (std::size_t i = 0; i < shape.size(); ++i) out << (i ? "x" : "") << shape[i];
  out << "]";
  return out.str();
}

namespace {
thread_local bool grad_mode_enabled = true;
}

bool GradMode::enabled() { return grad_mode_enabled; }

namespace {
thread_local long long mac_count = 0;
}

void MacCounter::reset() { mac_count = 0; }
long long MacCounter::value() { return mac_count; }
void MacCounter::add(long long macs) { mac_count += macs; }
void GradMode::set_enabled(bool on) { grad_mode_enabled = on; }

namespace {

template <typename Scalar>
using NodeT = detail::Node<Scalar>;

template <typename Scalar>
void accumulate(NodeT<Scalar>& self, std::size_t parent, const typename Tensor<Scalar>::Array& delta) {
  auto& p = *self.parents[parent];
  if (!p.requires_grad) return;
  p.grad_buffer().values() += delta;
}

template <typename Scalar>
bool wants(NodeT<Scalar>& self, std::size_t parent) {
  return self.parents[parent]->requires_grad;
}

// ---------------------------------------------------------------------------
// Broadcasting

struct Broadcast {
  Shape out;
  std::vector<Index> a_index;
  std::vector<Index> b_index;
};

Broadcast make_broadcast(const Shape& a, const Shape& b) {
  const std::size_t rank = std::max(a.size(), b.size());
  Shape pa(rank, 1), pb(rank, 1), out(rank, 1);
  std::copy(a.begin(), a.end(), pa.begin() + (rank - a.size()));
  std::copy(b.begin(), b.end(), pb.begin() + (rank - b.size()));
  for (std::size_t i = 0; i < rank; ++i) {
    if (pa[i] != pb[i] && pa[i] != 1 && pb[i] != 1) {
      throw std::invalid_argument("cannot broadcast " + shape_string(a) + " with " + shape_string(b));
    }
    out[i] = std::max(pa[i], pb[i]);
  }
  Broadcast bc;
  bc.out = out;
  const Index total = shape_size(out);
  bc.a_index.resize(total);
  bc.b_index.resize(total);
  std::vector<Index> sa(rank, 0), sb(rank, 0);
  Index stride_a = 1, stride_b = 1;
  for (std::size_t i = rank; i-- > 0;) {
    sa[i] = pa[i] == 1 ? 0 : stride_a;
    sb[i] = pb[i] == 1 ? 0 : stride_b;
    stride_a *= pa[i];
    stride_b *= pb[i];
  }
  std::vector<Index> counter(rank, 0);
  Index ia = 0, ib = 0;
  for (Index flat = 0; flat < total; ++flat) {
    bc.a_index[flat] = ia;
    bc.b_index[flat] = ib;
    for (std::size_t d = rank; d-- > 0;) {
      ++counter[d];
      ia += sa[d];
      ib += sb[d];
      if (counter[d] < out[d]) break;
      ia -= sa[d] * out[d];
      ib -= sb[d] * out[d];
      counter[d] = 0;
    }
  }
  return bc;
}

// f(a, b) with partials da = df/da, db = df/db evaluated elementwise.
template <typename Scalar, typename Fwd, typename Da, typename Db>
Var<Scalar> binary(const Var<Scalar>& a, const Var<Scalar>& b, Fwd f, Da da, Db db) {
  using Array = typename Tensor<Scalar>::Array;
  if (a.shape() == b.shape()) {
    const Array& av = a.value().values();
    const Array& bv = b.value().values();
    Array out(av.size());
    for (Index i = 0; i < av.size(); ++i) out[i] = f(av[i], bv[i]);
    return Var<Scalar>::make(Tensor<Scalar>(a.shape(), std::move(out)), {a, b}, [da, db](NodeT<Scalar>& self) {
      const Array& g = self.grad.values();
      const Array& av = self.parents[0]->value.values();
      const Array& bv = self.parents[1]->value.values();
      if (wants(self, 0)) {
        Array d(g.size());
        for (Index i = 0; i < g.size(); ++i) d[i] = g[i] * da(av[i], bv[i]);
        accumulate(self, 0, d);
      }
      if (wants(self, 1)) {
        Array d(g.size());
        for (Index i = 0; i < g.size(); ++i) d[i] = g[i] * db(av[i], bv[i]);
        accumulate(self, 1, d);
      }
    });
  }
  auto bc = std::make_shared<Broadcast>(make_broadcast(a.shape(), b.shape()));
  const Array& av = a.value().values();
  const Array& bv = b.value().values();
  Array out(shape_size(bc->out));
  for (Index i = 0; i < out.size(); ++i) out[i] = f(av[bc->a_index[i]], bv[bc->b_index[i]]);
  return Var<Scalar>::make(Tensor<Scalar>(bc->out, std::move(out)), {a, b}, [bc, da, db](NodeT<Scalar>& self) {
    const Array& g = self.grad.values();
    const Array& av = self.parents[0]->value.values();
    const Array& bv = self.parents[1]->value.values();
    if (wants(self, 0)) {
      Array d = Array::Zero(av.size());
      for (Index i = 0; i < g.size(); ++i) {
        d[bc->a_index[i]] += g[i] * da(av[bc->a_index[i]], bv[bc->b_index[i]]);
      }
      accumulate(self, 0, d);
    }
    if (wants(self, 1)) {
      Array d = Array::Zero(bv.size());
      for (Index i = 0; i < g.size(); ++i) {
        d[bc->b_index[i]] += g[i] * db(av[bc->a_index[i]], bv[bc->b_index[i]]);
      }
      accumulate(self, 1, d);
    }
  });
}

// y = f(x), dy/dx = df(x, y).
template <typename Scalar, typename Fwd, typename Df>
Var<Scalar> unary(const Var<Scalar>& x, Fwd f, Df df) {
  using Array = typename Tensor<Scalar>::Array;
  const Array& xv = x.value().values();
  Array out(xv.size());
  for (Index i = 0; i < xv.size(); ++i) out[i] = f(xv[i]);
  return Var<Scalar>::make(Tensor<Scalar>(x.shape(), std::move(out)), {x}, [df](NodeT<Scalar>& self) {
    const Array& g = self.grad.values();
    const Array& xv = self.parents[0]->value.values();
    const Array& yv = self.value.values();
    Array d(g.size());
    for (Index i = 0; i < g.size(); ++i) d[i] = g[i] * df(xv[i], yv[i]);
    accumulate(self, 0, d);
  });
}

// out[i] = x[map[i]], map[i] < 0 yields zero. Backward scatters.
template <typename Scalar>
Var<Scalar> gather(const Var<Scalar>& x, Shape out_shape, std::shared_ptr<std::vector<Index>> map) {
  using Array = typename Tensor<Scalar>::Array;
  const Array& xv = x.value().values();
  Array out(static_cast<Index>(map->size()));
  for (std::size_t i = 0; i < map->size(); ++i) {
    const Index src = (*map)[i];
    out[i] = src >= 0 ? xv[src] : Scalar(0);
  }
  return Var<Scalar>::make(Tensor<Scalar>(std::move(out_shape), std::move(out)), {x}, [map](NodeT<Scalar>& self) {
    const Array& g = self.grad.values();
    Array d = Array::Zero(self.parents[0]->value.size());
    for (std::size_t i = 0; i < map->size(); ++i) {
      const Index src = (*map)[i];
      if (src >= 0) d[src] += g[i];
    }
    accumulate(self, 0, d);
  });
}

void require_rank(const Shape& shape, std::size_t rank, const char* op) {
  if (shape.size() != rank) {
    throw std::invalid_argument(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                                shape_string(shape));
  }
}

std::size_t normalize_axis(int axis, std::size_t rank) {
  const int r = static_cast<int>(rank);
  if (axis < -r || axis >= r) throw std::invalid_argument("axis out of range");
  return static_cast<std::size_t>(axis < 0 ? axis + r : axis);
}

// outer x dim x inner decomposition of a shape around one axis.
struct AxisSplit {
  Index outer = 1, dim = 1, inner = 1;
};

AxisSplit split_axis(const Shape& shape, std::size_t axis) {
  AxisSplit s;
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  s.dim = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

}  // namespace

// ---------------------------------------------------------------------------
// Elementwise

template <typename Scalar>
Var<Scalar> add(const Var<Scalar>& a, const Var<Scalar>& b) {
  if (a.shape() == b.shape()) {
    using Array = typename Tensor<Scalar>::Array;
    Array out = a.value().values() + b.value().values();
    return Var<Scalar>::make(Tensor<Scalar>(a.shape(), std::move(out)), {a, b}, [](NodeT<Scalar>& self) {
      accumulate(self, 0, self.grad.values());
      accumulate(self, 1, self.grad.values());
    });
  }
  return binary(
      a, b, [](Scalar x, Scalar y) { return x + y; }, [](Scalar, Scalar) { return Scalar(1); },
      [](Scalar, Scalar) { return Scalar(1); });
}

template <typename Scalar>
Var<Scalar> sub(const Var<Scalar>& a, const Var<Scalar>& b) {
  return binary(
      a, b, [](Scalar x, Scalar y) { return x - y; }, [](Scalar, Scalar) { return Scalar(1); },
      [](Scalar, Scalar) { return Scalar(-1); });
}

template <typename Scalar>
Var<Scalar> mul(const Var<Scalar>& a, const Var<Scalar>& b) {
  return binary(
      a, b, [](Scalar x, Scalar y) { return x * y; }, [](Scalar, Scalar y) { return y; },
      [](Scalar x, Scalar) { return x; });
}

template <typename Scalar>
Var<Scalar> div(const Var<Scalar>& a, const Var<Scalar>& b) {
  return binary(
      a, b, [](Scalar x, Scalar y) { return x / y; }, [](Scalar, Scalar y) { return Scalar(1) / y; },
      [](Scalar x, Scalar y) { return -x / (y * y); });
}

// Ties route the gradient to the first operand.
template <typename Scalar>
Var<Scalar> minimum(const Var<Scalar>& a, const Var<Scalar>& b) {
  return binary(
      a, b, [](Scalar x, Scalar y) { return x <= y ? x : y; },
      [](Scalar x, Scalar y) { return x <= y ? Scalar(1) : Scalar(0); },
      [](Scalar x, Scalar y) { return x <= y ? Scalar(0) : Scalar(1); });
}

template <typename Scalar>
Var<Scalar> maximum(const Var<Scalar>& a, const Var<Scalar>& b) {
  return binary(
      a, b, [](Scalar x, Scalar y) { return x >= y ? x : y; },
      [](Scalar x, Scalar y) { return x >= y ? Scalar(1) : Scalar(0); },
      [](Scalar x, Scalar y) { return x >= y ? Scalar(0) : Scalar(1); });
}

template <typename Scalar>
Var<Scalar> scale(const Var<Scalar>& x, Scalar factor) {
  return unary(
      x, [factor](Scalar v) { return v * factor; }, [factor](Scalar, Scalar) { return factor; });
}

template <typename Scalar>
Var<Scalar> add_scalar(const Var<Scalar>& x, Scalar offset) {
  return unary(
      x, [offset](Scalar v) { return v + offset; }, [](Scalar, Scalar) { return Scalar(1); });
}

template <typename Scalar>
Var<Scalar> neg(const Var<Scalar>& x) {
  return scale(x, Scalar(-1));
}

template <typename Scalar>
Var<Scalar> exp(const Var<Scalar>& x) {
  return unary(
      x, [](Scalar v) { return std::exp(v); }, [](Scalar, Scalar y) { return y; });
}

template <typename Scalar>
Var<Scalar> log(const Var<Scalar>& x) {
  return unary(
      x, [](Scalar v) { return std::log(v); }, [](Scalar v, Scalar) { return Scalar(1) / v; });
}

template <typename Scalar>
Var<Scalar> sqrt(const Var<Scalar>& x) {
  return unary(
      x, [](Scalar v) { return std::sqrt(v); }, [](Scalar, Scalar y) { return y > 0 ? Scalar(0.5) / y : Scalar(0); });
}

template <typename Scalar>
Var<Scalar> square(const Var<Scalar>& x) {
  return unary(
      x, [](Scalar v) { return v * v; }, [](Scalar v, Scalar) { return Scalar(2) * v; });
}

template <typename Scalar>
Var<Scalar> sigmoid(const Var<Scalar>& x) {
  return unary(
      x,
      [](Scalar v) {
        if (v >= 0) return Scalar(1) / (Scalar(1) + std::exp(-v));
        const Scalar e = std::exp(v);
        return e / (Scalar(1) + e);
      },
      [](Scalar, Scalar y) { return y * (Scalar(1) - y); });
}

template <typename Scalar>
Var<Scalar> silu(const Var<Scalar>& x) {
  return unary(
      x,
      [](Scalar v) { return v / (Scalar(1) + std::exp(-v)); },
      [](Scalar v, Scalar) {
        const Scalar s = Scalar(1) / (Scalar(1) + std::exp(-v));
        return s * (Scalar(1) + v * (Scalar(1) - s));
      });
}

template <typename Scalar>
Var<Scalar> relu(const Var<Scalar>& x) {
  return unary(
      x, [](Scalar v) { return v > 0 ? v : Scalar(0); }, [](Scalar v, Scalar) { return v > 0 ? Scalar(1) : Scalar(0); });
}

template <typename Scalar>
Var<Scalar> log_sigmoid(const Var<Scalar>& x) {
  return unary(
      x,
      [](Scalar v) { return std::min(v, Scalar(0)) - std::log1p(std::exp(-std::abs(v))); },
      [](Scalar v, Scalar) {
        // d/dv log sigmoid(v) = 1 - sigmoid(v)
        if (v >= 0) {
          const Scalar e = std::exp(-v);
          return e / (Scalar(1) + e);
        }
        return Scalar(1) / (Scalar(1) + std::exp(v));
      });
}

// ---------------------------------------------------------------------------
// Reductions

template <typename Scalar>
Var<Scalar> sum(const Var<Scalar>& x) {
  Tensor<Scalar> out({1}, x.value().values().sum());
  return Var<Scalar>::make(std::move(out), {x}, [](NodeT<Scalar>& self) {
    using Array = typename Tensor<Scalar>::Array;
    accumulate(self, 0, Array::Constant(self.parents[0]->value.size(), self.grad[0]));
  });
}

template <typename Scalar>
Var<Scalar> mean(const Var<Scalar>& x) {
  if (x.size() == 0) throw std::invalid_argument("mean of empty tensor");
  return scale(sum(x), Scalar(1) / static_cast<Scalar>(x.size()));
}

template <typename Scalar>
Var<Scalar> sum_axis(const Var<Scalar>& x, int axis) {
  using Array = typename Tensor<Scalar>::Array;
  const std::size_t ax = normalize_axis(axis, x.shape().size());
  const AxisSplit s = split_axis(x.shape(), ax);
  Shape out_shape = x.shape();
  out_shape[ax] = 1;
  Array out = Array::Zero(s.outer * s.inner);
  const Array& xv = x.value().values();
  for (Index o = 0; o < s.outer; ++o)
    for (Index d = 0; d < s.dim; ++d)
      out.segment(o * s.inner, s.inner) += xv.segment((o * s.dim + d) * s.inner, s.inner);
  return Var<Scalar>::make(Tensor<Scalar>(out_shape, std::move(out)), {x}, [s](NodeT<Scalar>& self) {
    const Array& g = self.grad.values();
    Array d(s.outer * s.dim * s.inner);
    for (Index o = 0; o < s.outer; ++o)
      for (Index k = 0; k < s.dim; ++k) d.segment((o * s.dim + k) * s.inner, s.inner) = g.segment(o * s.inner, s.inner);
    accumulate(self, 0, d);
  });
}

template <typename Scalar>
Var<Scalar> mean_axis(const Var<Scalar>& x, int axis) {
  const std::size_t ax = normalize_axis(axis, x.shape().size());
  return scale(sum_axis(x, axis), Scalar(1) / static_cast<Scalar>(x.shape()[ax]));
}

template <typename Scalar>
Var<Scalar> max_axis(const Var<Scalar>& x, int axis) {
  using Array = typename Tensor<Scalar>::Array;
  const std::size_t ax = normalize_axis(axis, x.shape().size());
  const AxisSplit s = split_axis(x.shape(), ax);
  Shape out_shape = x.shape();
  out_shape[ax] = 1;
  auto map = std::make_shared<std::vector<Index>>(s.outer * s.inner);
  const Array& xv = x.value().values();
  for (Index o = 0; o < s.outer; ++o) {
    for (Index i = 0; i < s.inner; ++i) {
      Index best = o * s.dim * s.inner + i;
      for (Index d = 1; d < s.dim; ++d) {
        const Index idx = (o * s.dim + d) * s.inner + i;
        if (xv[idx] > xv[best]) best = idx;
      }
      (*map)[o * s.inner + i] = best;
    }
  }
  return gather(x, out_shape, map);
}

// ---------------------------------------------------------------------------
// Structural

template <typename Scalar>
Var<Scalar> reshape(const Var<Scalar>& x, Shape shape) {
  Tensor<Scalar> out = x.value().reshaped(std::move(shape));
  return Var<Scalar>::make(std::move(out), {x}, [](NodeT<Scalar>& self) { accumulate(self, 0, self.grad.values()); });
}

template <typename Scalar>
Var<Scalar> transpose(const Var<Scalar>& x) {
  require_rank(x.shape(), 2, "transpose");
  const Index rows = x.dim(0), cols = x.dim(1);
  Tensor<Scalar> out({cols, rows});
  out.matrix(cols, rows) = x.value().matrix(rows, cols).transpose();
  return Var<Scalar>::make(std::move(out), {x}, [rows, cols](NodeT<Scalar>& self) {
    Tensor<Scalar> d({rows, cols});
    d.matrix(rows, cols) = self.grad.matrix(cols, rows).transpose();
    accumulate(self, 0, d.values());
  });
}

template <typename Scalar>
Var<Scalar> concat(const std::vector<Var<Scalar>>& parts, int axis) {
  using Array = typename Tensor<Scalar>::Array;
  if (parts.empty()) throw std::invalid_argument("concat of zero tensors");
  const std::size_t rank = parts[0].shape().size();
  const std::size_t ax = normalize_axis(axis, rank);
  Shape out_shape = parts[0].shape();
  out_shape[ax] = 0;
  for (const auto& p : parts) {
    Shape a = p.shape(), b = parts[0].shape();
    if (a.size() != rank) throw std::invalid_argument("concat rank mismatch");
    a[ax] = b[ax] = 0;
    if (a != b) throw std::invalid_argument("concat shape mismatch " + shape_string(p.shape()) + " vs " +
                                            shape_string(parts[0].shape()));
    out_shape[ax] += p.shape()[ax];
  }
  const AxisSplit s = split_axis(out_shape, ax);
  Array out(shape_size(out_shape));
  std::vector<Index> widths;
  Index offset = 0;
  for (const auto& p : parts) {
    const Index w = p.shape()[ax] * s.inner;
    const Array& pv = p.value().values();
    for (Index o = 0; o < s.outer; ++o) out.segment(o * s.dim * s.inner + offset, w) = pv.segment(o * w, w);
    widths.push_back(w);
    offset += w;
  }
  return Var<Scalar>::make(Tensor<Scalar>(out_shape, std::move(out)), parts, [s, widths](NodeT<Scalar>& self) {
    const Array& g = self.grad.values();
    Index offset = 0;
    for (std::size_t k = 0; k < widths.size(); ++k) {
      const Index w = widths[k];
      if (wants(self, k)) {
        Array d(s.outer * w);
        for (Index o = 0; o < s.outer; ++o) d.segment(o * w, w) = g.segment(o * s.dim * s.inner + offset, w);
        accumulate(self, k, d);
      }
      offset += w;
    }
  });
}

template <typename Scalar>
Var<Scalar> slice(const Var<Scalar>& x, int axis, Index begin, Index end) {
  using Array = typename Tensor<Scalar>::Array;
  const std::size_t ax = normalize_axis(axis, x.shape().size());
  const AxisSplit s = split_axis(x.shape(), ax);
  if (begin < 0 || end > s.dim || begin >= end) {
    throw std::invalid_argument("slice [" + std::to_string(begin) + "," + std::to_string(end) + ") of " +
                                shape_string(x.shape()));
  }
  Shape out_shape = x.shape();
  out_shape[ax] = end - begin;
  const Index w = (end - begin) * s.inner;
  const Array& xv = x.value().values();
  Array out(s.outer * w);
  for (Index o = 0; o < s.outer; ++o) out.segment(o * w, w) = xv.segment((o * s.dim + begin) * s.inner, w);
  return Var<Scalar>::make(Tensor<Scalar>(out_shape, std::move(out)), {x}, [s, begin, w](NodeT<Scalar>& self) {
    const Array& g = self.grad.values();
    Array d = Array::Zero(s.outer * s.dim * s.inner);
    for (Index o = 0; o < s.outer; ++o) d.segment((o * s.dim + begin) * s.inner, w) = g.segment(o * w, w);
    accumulate(self, 0, d);
  });
}

template <typename Scalar>
Var<Scalar> index_select(const Var<Scalar>& x, const std::vector<Index>& rows) {
  const AxisSplit s = split_axis(x.shape(), 0);
  Shape out_shape = x.shape();
  out_shape[0] = static_cast<Index>(rows.size());
  auto map = std::make_shared<std::vector<Index>>();
  map->reserve(rows.size() * s.inner);
  for (Index r : rows) {
    if (r < 0 || r >= s.dim) throw std::invalid_argument("index_select: row out of range");
    for (Index i = 0; i < s.inner; ++i) map->push_back(r * s.inner + i);
  }
  return gather(x, out_shape, map);
}

namespace {

Index pad_source(Index i, Index n, PadMode mode) {
  if (i >= 0 && i < n) return i;
  switch (mode) {
    case PadMode::kZero:
      return -1;
    case PadMode::kReplicate:
      return i < 0 ? 0 : n - 1;
    case PadMode::kReflect: {
      if (n == 1) return 0;
      const Index period = 2 * (n - 1);
      Index m = i % period;
      if (m < 0) m += period;
      return m < n ? m : period - m;
    }
  }
  return -1;
}

}  // namespace

template <typename Scalar>
Var<Scalar> pad2d(const Var<Scalar>& x, Padding2d pad, PadMode mode) {
  const Shape& in = x.shape();
  if (in.size() < 2) throw std::invalid_argument("pad2d needs rank >= 2");
  if (pad.top == 0 && pad.bottom == 0 && pad.left == 0 && pad.right == 0) return x;
  const Index h = in[in.size() - 2], w = in[in.size() - 1];
  const Index planes = shape_size(in) / (h * w);
  const Index oh = h + pad.top + pad.bottom, ow = w + pad.left + pad.right;
  Shape out_shape = in;
  out_shape[in.size() - 2] = oh;
  out_shape[in.size() - 1] = ow;
  auto map = std::make_shared<std::vector<Index>>(planes * oh * ow);
  for (Index p = 0; p < planes; ++p)
    for (Index y = 0; y < oh; ++y) {
      const Index sy = pad_source(y - pad.top, h, mode);
      for (Index xx = 0; xx < ow; ++xx) {
        const Index sx = pad_source(xx - pad.left, w, mode);
        (*map)[(p * oh + y) * ow + xx] = (sy < 0 || sx < 0) ? -1 : (p * h + sy) * w + sx;
      }
    }
  return gather(x, out_shape, map);
}

template <typename Scalar>
Var<Scalar> crop2d(const Var<Scalar>& x, Index top, Index left, Index height, Index width) {
  const Shape& in = x.shape();
  const Index h = in[in.size() - 2], w = in[in.size() - 1];
  if (top < 0 || left < 0 || top + height > h || left + width > w) {
    throw std::invalid_argument("crop2d out of bounds for " + shape_string(in));
  }
  if (top == 0 && left == 0 && height == h && width == w) return x;
  const Index planes = shape_size(in) / (h * w);
  Shape out_shape = in;
  out_shape[in.size() - 2] = height;
  out_shape[in.size() - 1] = width;
  auto map = std::make_shared<std::vector<Index>>(planes * height * width);
  for (Index p = 0; p < planes; ++p)
    for (Index y = 0; y < height; ++y)
      for (Index xx = 0; xx < width; ++xx) (*map)[(p * height + y) * width + xx] = (p * h + y + top) * w + xx + left;
  return gather(x, out_shape, map);
}

template <typename Scalar>
Var<Scalar> upsample_nearest(const Var<Scalar>& x, Index factor) {
  const Shape& in = x.shape();
  const Index h = in[in.size() - 2], w = in[in.size() - 1];
  const Index planes = shape_size(in) / (h * w);
  const Index oh = h * factor, ow = w * factor;
  Shape out_shape = in;
  out_shape[in.size() - 2] = oh;
  out_shape[in.size() - 1] = ow;
  auto map = std::make_shared<std::vector<Index>>(planes * oh * ow);
  for (Index p = 0; p < planes; ++p)
    for (Index y = 0; y < oh; ++y)
      for (Index xx = 0; xx < ow; ++xx) (*map)[(p * oh + y) * ow + xx] = (p * h + y / factor) * w + xx / factor;
  return gather(x, out_shape, map);
}

// ---------------------------------------------------------------------------
// Linear algebra

template <typename Scalar>
Var<Scalar> matmul(const Var<Scalar>& a, const Var<Scalar>& b) {
  require_rank(a.shape(), 2, "matmul");
  require_rank(b.shape(), 2, "matmul");
  const Index m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) {
    throw std::invalid_argument("matmul " + shape_string(a.shape()) + " x " + shape_string(b.shape()));
  }
  Tensor<Scalar> out({m, n});
  out.matrix(m, n).noalias() = a.value().matrix(m, k) * b.value().matrix(k, n);
  MacCounter::add(static_cast<long long>(m) * k * n);
  return Var<Scalar>::make(std::move(out), {a, b}, [m, k, n](NodeT<Scalar>& self) {
    const auto g = self.grad.matrix(m, n);
    if (wants(self, 0)) {
      Tensor<Scalar> d({m, k});
      d.matrix(m, k).noalias() = g * self.parents[1]->value.matrix(k, n).transpose();
      accumulate(self, 0, d.values());
    }
    if (wants(self, 1)) {
      Tensor<Scalar> d({k, n});
      d.matrix(k, n).noalias() = self.parents[0]->value.matrix(m, k).transpose() * g;
      accumulate(self, 1, d.values());
    }
  });
}

template <typename Scalar>
Var<Scalar> softmax_rows(const Var<Scalar>& x) {
  require_rank(x.shape(), 2, "softmax_rows");
  const Index rows = x.dim(0), cols = x.dim(1);
  Tensor<Scalar> out({rows, cols});
  auto y = out.matrix(rows, cols);
  const auto in = x.value().matrix(rows, cols);
  for (Index r = 0; r < rows; ++r) {
    const Scalar peak = in.row(r).maxCoeff();
    y.row(r) = (in.row(r).array() - peak).exp().matrix();
    y.row(r) /= y.row(r).sum();
  }
  return Var<Scalar>::make(std::move(out), {x}, [rows, cols](NodeT<Scalar>& self) {
    const auto y = self.value.matrix(rows, cols);
    const auto g = self.grad.matrix(rows, cols);
    Tensor<Scalar> d({rows, cols});
    auto dm = d.matrix(rows, cols);
    for (Index r = 0; r < rows; ++r) {
      const Scalar dot = g.row(r).dot(y.row(r));
      dm.row(r) = (y.row(r).array() * (g.row(r).array() - dot)).matrix();
    }
    accumulate(self, 0, d.values());
  });
}

// ---------------------------------------------------------------------------
// Convolution

namespace {

template <typename Scalar>
struct ConvGeometry {
  Index channels, height, width, out_channels, kernel, stride, padding, groups, out_h, out_w;
  Index group_in() const { return channels / groups; }
  Index group_out() const { return out_channels / groups; }
  Index patch() const { return group_in() * kernel * kernel; }
  Index positions() const { return out_h * out_w; }
};

template <typename Scalar>
void im2col(const Scalar* x, const ConvGeometry<Scalar>& g, Index group, typename Tensor<Scalar>::Matrix& cols) {
  cols.resize(g.patch(), g.positions());
  const Index k = g.kernel;
  for (Index c = 0; c < g.group_in(); ++c) {
    const Scalar* plane = x + (group * g.group_in() + c) * g.height * g.width;
    for (Index ky = 0; ky < k; ++ky)
      for (Index kx = 0; kx < k; ++kx) {
        Scalar* row = cols.data() + ((c * k + ky) * k + kx) * g.positions();
        for (Index oy = 0; oy < g.out_h; ++oy) {
          const Index iy = oy * g.stride - g.padding + ky;
          if (iy < 0 || iy >= g.height) {
            std::fill(row + oy * g.out_w, row + (oy + 1) * g.out_w, Scalar(0));
            continue;
          }
          for (Index ox = 0; ox < g.out_w; ++ox) {
            const Index ix = ox * g.stride - g.padding + kx;
            row[oy * g.out_w + ox] = (ix < 0 || ix >= g.width) ? Scalar(0) : plane[iy * g.width + ix];
          }
        }
      }
  }
}

template <typename Scalar>
void col2im(const typename Tensor<Scalar>::Matrix& cols, const ConvGeometry<Scalar>& g, Index group, Scalar* dx) {
  const Index k = g.kernel;
  for (Index c = 0; c < g.group_in(); ++c) {
    Scalar* plane = dx + (group * g.group_in() + c) * g.height * g.width;
    for (Index ky = 0; ky < k; ++ky)
      for (Index kx = 0; kx < k; ++kx) {
        const Scalar* row = cols.data() + ((c * k + ky) * k + kx) * g.positions();
        for (Index oy = 0; oy < g.out_h; ++oy) {
          const Index iy = oy * g.stride - g.padding + ky;
          if (iy < 0 || iy >= g.height) continue;
          for (Index ox = 0; ox < g.out_w; ++ox) {
            const Index ix = ox * g.stride - g.padding + kx;
            if (ix >= 0 && ix < g.width) plane[iy * g.width + ix] += row[oy * g.out_w + ox];
          }
        }
      }
  }
}

}  // namespace

template <typename Scalar>
Var<Scalar> conv2d(const Var<Scalar>& x, const Var<Scalar>& weight, const Var<Scalar>& bias, Conv2dOptions options) {
  using Matrix = typename Tensor<Scalar>::Matrix;
  require_rank(x.shape(), 3, "conv2d input");
  require_rank(weight.shape(), 4, "conv2d weight");
  ConvGeometry<Scalar> g{};
  g.channels = x.dim(0);
  g.height = x.dim(1);
  g.width = x.dim(2);
  g.out_channels = weight.dim(0);
  g.kernel = weight.dim(2);
  g.stride = options.stride;
  g.padding = options.padding;
  g.groups = options.groups;
  if (g.groups < 1 || g.channels % g.groups || g.out_channels % g.groups || weight.dim(1) != g.group_in() ||
      weight.dim(3) != g.kernel) {
    throw std::invalid_argument("conv2d: weight " + shape_string(weight.shape()) + " incompatible with input " +
                                shape_string(x.shape()) + " groups " + std::to_string(g.groups));
  }
  if (bias.defined() && (bias.shape().size() != 1 || bias.dim(0) != g.out_channels)) {
    throw std::invalid_argument("conv2d: bias shape " + shape_string(bias.shape()));
  }
  g.out_h = (g.height + 2 * g.padding - g.kernel) / g.stride + 1;
  g.out_w = (g.width + 2 * g.padding - g.kernel) / g.stride + 1;
  if (g.out_h < 1 || g.out_w < 1) throw std::invalid_argument("conv2d: empty output");
  MacCounter::add(static_cast<long long>(g.out_channels) * g.patch() * g.positions());

  auto cols = std::make_shared<std::vector<Matrix>>(g.groups);
  Tensor<Scalar> out({g.out_channels, g.out_h, g.out_w});
  const auto w = weight.value().matrix(g.out_channels, g.patch());
  auto y = out.matrix(g.out_channels, g.positions());
  for (Index grp = 0; grp < g.groups; ++grp) {
    im2col(x.value().data(), g, grp, (*cols)[grp]);
    y.middleRows(grp * g.group_out(), g.group_out()).noalias() =
        w.middleRows(grp * g.group_out(), g.group_out()) * (*cols)[grp];
  }
  if (bias.defined()) y.colwise() += bias.value().values().matrix();

  std::vector<Var<Scalar>> parents{x, weight};
  if (bias.defined()) parents.push_back(bias);
  const bool keep_cols = GradMode::enabled() && weight.requires_grad();
  if (!keep_cols) cols->clear();
  return Var<Scalar>::make(std::move(out), parents, [g, cols](NodeT<Scalar>& self) {
    const auto gy = self.grad.matrix(g.out_channels, g.positions());
    const auto w = self.parents[1]->value.matrix(g.out_channels, g.patch());
    if (wants(self, 1)) {
      Tensor<Scalar> dw({g.out_channels, g.patch()});
      auto dwm = dw.matrix(g.out_channels, g.patch());
      for (Index grp = 0; grp < g.groups; ++grp) {
        dwm.middleRows(grp * g.group_out(), g.group_out()).noalias() =
            gy.middleRows(grp * g.group_out(), g.group_out()) * (*cols)[grp].transpose();
      }
      accumulate(self, 1, dw.values());
    }
    if (self.parents.size() > 2 && wants(self, 2)) {
      accumulate(self, 2, gy.rowwise().sum().array().eval());
    }
    if (wants(self, 0)) {
      Tensor<Scalar> dx({g.channels, g.height, g.width});
      Matrix dcols;
      for (Index grp = 0; grp < g.groups; ++grp) {
        dcols.noalias() = w.middleRows(grp * g.group_out(), g.group_out()).transpose() *
                          gy.middleRows(grp * g.group_out(), g.group_out());
        col2im(dcols, g, grp, dx.data());
      }
      accumulate(self, 0, dx.values());
    }
  });
}

// ---------------------------------------------------------------------------
// Normalization

namespace {

// Normalizes each of `count` contiguous segments of length `len`, applying a
// per-channel affine transform where channel = element / channel_span.
template <typename Scalar>
Var<Scalar> segment_norm(const Var<Scalar>& x, Index count, Index len, const Var<Scalar>& gamma,
                         const Var<Scalar>& beta, Scalar eps, std::function<Index(Index)> channel_of) {
  using Array = typename Tensor<Scalar>::Array;
  const Array& xv = x.value().values();
  auto xhat = std::make_shared<Array>(xv.size());
  auto inv_std = std::make_shared<Array>(count);
  for (Index s = 0; s < count; ++s) {
    const auto seg = xv.segment(s * len, len);
    const Scalar mu = seg.mean();
    const Scalar var = (seg - mu).square().mean();
    (*inv_std)[s] = Scalar(1) / std::sqrt(var + eps);
    xhat->segment(s * len, len) = (seg - mu) * (*inv_std)[s];
  }
  const Array& gv = gamma.value().values();
  const Array& bv = beta.value().values();
  Array out(xv.size());
  for (Index i = 0; i < xv.size(); ++i) {
    const Index c = channel_of(i);
    out[i] = gv[c] * (*xhat)[i] + bv[c];
  }
  return Var<Scalar>::make(
      Tensor<Scalar>(x.shape(), std::move(out)), {x, gamma, beta},
      [xhat, inv_std, count, len, channel_of](NodeT<Scalar>& self) {
        const Array& g = self.grad.values();
        const Array& gv = self.parents[1]->value.values();
        if (wants(self, 1) || wants(self, 2)) {
          Array dg = Array::Zero(gv.size()), db = Array::Zero(gv.size());
          for (Index i = 0; i < g.size(); ++i) {
            const Index c = channel_of(i);
            dg[c] += g[i] * (*xhat)[i];
            db[c] += g[i];
          }
          accumulate(self, 1, dg);
          accumulate(self, 2, db);
        }
        if (wants(self, 0)) {
          Array dxhat(g.size());
          for (Index i = 0; i < g.size(); ++i) dxhat[i] = g[i] * gv[channel_of(i)];
          Array dx(g.size());
          const Scalar n = static_cast<Scalar>(len);
          for (Index s = 0; s < count; ++s) {
            const auto dh = dxhat.segment(s * len, len);
            const auto xh = xhat->segment(s * len, len);
            const Scalar sum_dh = dh.sum();
            const Scalar sum_dh_xh = (dh * xh).sum();
            dx.segment(s * len, len) = (*inv_std)[s] / n * (n * dh - sum_dh - xh * sum_dh_xh);
          }
          accumulate(self, 0, dx);
        }
      });
}

}  // namespace

template <typename Scalar>
Var<Scalar> group_norm(const Var<Scalar>& x, Index groups, const Var<Scalar>& gamma, const Var<Scalar>& beta,
                       Scalar eps) {
  require_rank(x.shape(), 3, "group_norm");
  const Index c = x.dim(0), plane = x.dim(1) * x.dim(2);
  if (groups < 1 || c % groups) throw std::invalid_argument("group_norm: channels not divisible by groups");
  if (gamma.size() != c || beta.size() != c) throw std::invalid_argument("group_norm: affine size mismatch");
  return segment_norm<Scalar>(x, groups, c / groups * plane, gamma, beta, eps,
                              [plane](Index i) { return i / plane; });
}

template <typename Scalar>
Var<Scalar> layer_norm_rows(const Var<Scalar>& x, const Var<Scalar>& gamma, const Var<Scalar>& beta, Scalar eps) {
  require_rank(x.shape(), 2, "layer_norm_rows");
  const Index rows = x.dim(0), d = x.dim(1);
  if (gamma.size() != d || beta.size() != d) throw std::invalid_argument("layer_norm_rows: affine size mismatch");
  return segment_norm<Scalar>(x, rows, d, gamma, beta, eps, [d](Index i) { return i % d; });
}

template <typename Scalar>
Var<Scalar> to_tokens(const Var<Scalar>& x) {
  require_rank(x.shape(), 3, "to_tokens");
  return transpose(reshape(x, {x.dim(0), x.dim(1) * x.dim(2)}));
}

template <typename Scalar>
Var<Scalar> from_tokens(const Var<Scalar>& tokens, Index height, Index width) {
  require_rank(tokens.shape(), 2, "from_tokens");
  if (tokens.dim(0) != height * width) throw std::invalid_argument("from_tokens: token count mismatch");
  return reshape(transpose(tokens), {tokens.dim(1), height, width});
}

#define BELTCRACK_INSTANTIATE_OPS(S)                                                                   \
  template Var<S> add(const Var<S>&, const Var<S>&);                                                 \
  template Var<S> sub(const Var<S>&, const Var<S>&);                                                 \
  template Var<S> mul(const Var<S>&, const Var<S>&);                                                 \
  template Var<S> div(const Var<S>&, const Var<S>&);                                                 \
  template Var<S> minimum(const Var<S>&, const Var<S>&);                                             \
  template Var<S> maximum(const Var<S>&, const Var<S>&);                                             \
  template Var<S> scale(const Var<S>&, S);                                                           \
  template Var<S> add_scalar(const Var<S>&, S);                                                      \
  template Var<S> neg(const Var<S>&);                                                                \
  template Var<S> exp(const Var<S>&);                                                                \
  template Var<S> log(const Var<S>&);                                                                \
  template Var<S> sqrt(const Var<S>&);                                                               \
  template Var<S> square(const Var<S>&);                                                             \
  template Var<S> sigmoid(const Var<S>&);                                                            \
  template Var<S> silu(const Var<S>&);                                                               \
  template Var<S> relu(const Var<S>&);                                                               \
  template Var<S> log_sigmoid(const Var<S>&);                                                        \
  template Var<S> sum(const Var<S>&);                                                                \
  template Var<S> mean(const Var<S>&);                                                               \
  template Var<S> sum_axis(const Var<S>&, int);                                                      \
  template Var<S> mean_axis(const Var<S>&, int);                                                     \
  template Var<S> max_axis(const Var<S>&, int);                                                      \
  template Var<S> reshape(const Var<S>&, Shape);                                                     \
  template Var<S> transpose(const Var<S>&);                                                          \
  template Var<S> concat(const std::vector<Var<S>>&, int);                                           \
  template Var<S> slice(const Var<S>&, int, Index, Index);                                           \
  template Var<S> index_select(const Var<S>&, const std::vector<Index>&);                            \
  template Var<S> pad2d(const Var<S>&, Padding2d, PadMode);                                          \
  template Var<S> crop2d(const Var<S>&, Index, Index, Index, Index);                                 \
  template Var<S> upsample_nearest(const Var<S>&, Index);                                            \
  template Var<S> matmul(const Var<S>&, const Var<S>&);                                              \
  template Var<S> softmax_rows(const Var<S>&);                                                       \
  template Var<S> conv2d(const Var<S>&, const Var<S>&, const Var<S>&, Conv2dOptions);                \
  template Var<S> group_norm(const Var<S>&, Index, const Var<S>&, const Var<S>&, S);                 \
  template Var<S> layer_norm_rows(const Var<S>&, const Var<S>&, const Var<S>&, S);                   \
  template Var<S> to_tokens(const Var<S>&);                                                          \
  template Var<S> from_tokens(const Var<S>&, Index, Index);

BELTCRACK_INSTANTIATE_OPS(float)
BELTCRACK_INSTANTIATE_OPS(double)

}  // namespace beltcrack
