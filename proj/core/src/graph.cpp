#include "robustaug/graph.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <string>

#include "robustaug/errors.hpp"
#include "robustaug/kernels.hpp"

namespace robustaug {

namespace {

double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

void require_finite(const Tensor& t, OpKind kind) {
  if (!t.all_finite()) {
    throw NumericalError("non-finite value produced by " + std::string(op_name(kind)));
  }
}

struct RowView {
  std::size_t rows;
  std::size_t cols;
};

RowView as_matrix(const Shape& shape, std::string_view what) {
  if (shape.size() != 2) throw DimensionError(std::string(what) + " expects [B,K], got " + to_string(shape));
  return {shape[0], shape[1]};
}

// Row-wise log-sum-exp.
std::vector<double> row_lse(const Tensor& z, RowView v) {
  std::vector<double> out(v.rows);
  for (std::size_t b = 0; b < v.rows; ++b) {
    const double* row = z.data.data() + b * v.cols;
    const double mx = *std::max_element(row, row + v.cols);
    double s = 0.0;
    for (std::size_t k = 0; k < v.cols; ++k) s += std::exp(row[k] - mx);
    out[b] = mx + std::log(s);
  }
  return out;
}

}  // namespace

std::string_view op_name(OpKind kind) {
  switch (kind) {
    case OpKind::Leaf: return "leaf";
    case OpKind::Constant: return "constant";
    case OpKind::Add: return "add";
    case OpKind::Sub: return "sub";
    case OpKind::Mul: return "mul";
    case OpKind::Scale: return "scale";
    case OpKind::AddScalar: return "add_scalar";
    case OpKind::Clamp: return "clamp";
    case OpKind::Sign: return "sign";
    case OpKind::Exp: return "exp";
    case OpKind::Log: return "log";
    case OpKind::Silu: return "silu";
    case OpKind::Sum: return "sum";
    case OpKind::Mean: return "mean";
    case OpKind::SumRows: return "sum_rows";
    case OpKind::Reshape: return "reshape";
    case OpKind::Affine: return "affine";
    case OpKind::Conv2d: return "conv2d";
    case OpKind::LogSoftmax: return "log_softmax";
    case OpKind::SoftmaxCrossEntropy: return "softmax_cross_entropy";
    case OpKind::KlDivergence: return "kl_divergence";
    case OpKind::MarginLoss: return "margin_loss";
    case OpKind::Pick: return "pick";
  }
  return "unknown";
}

const Graph::Node& Graph::node(Var v) const {
  if (v.id >= nodes_.size()) throw ValidationError("variable does not belong to this graph");
  return nodes_[v.id];
}

const Tensor& Graph::value(Var v) const {
  const Node& n = node(v);
  return n.external ? *n.external : n.owned;
}

bool Graph::requires_grad(Var v) const { return node(v).needs_grad; }
OpKind Graph::kind(Var v) const { return node(v).kind; }
std::span<const std::size_t> Graph::parents(Var v) const { return node(v).parents; }

Var Graph::push(Node n) {
  nodes_.push_back(std::move(n));
  return Var{nodes_.size() - 1};
}

Graph::Node Graph::make(OpKind kind, std::vector<std::size_t> parents, Tensor value) {
  require_finite(value, kind);
  Node n;
  n.kind = kind;
  n.needs_grad = std::any_of(parents.begin(), parents.end(), [&](std::size_t p) { return nodes_[p].needs_grad; });
  n.parents = std::move(parents);
  n.owned = std::move(value);
  return n;
}

std::vector<double>& Graph::adj(std::size_t id) {
  auto& a = nodes_[id].adjoint;
  if (a.empty()) a.assign(value(Var{id}).size(), 0.0);
  return a;
}

Var Graph::leaf(Tensor& tensor) {
  require_finite(tensor, OpKind::Leaf);
  Node n;
  n.kind = OpKind::Leaf;
  n.external = &tensor;
  n.external_mut = &tensor;
  n.needs_grad = tensor.requires_grad;
  return push(std::move(n));
}

Var Graph::input(Tensor tensor, bool requires_grad) {
  require_finite(tensor, OpKind::Leaf);
  Node n;
  n.kind = OpKind::Leaf;
  n.owned = std::move(tensor);
  n.needs_grad = requires_grad;
  return push(std::move(n));
}

Var Graph::constant(Tensor tensor) {
  require_finite(tensor, OpKind::Constant);
  Node n;
  n.kind = OpKind::Constant;
  n.owned = std::move(tensor);
  return push(std::move(n));
}

Var Graph::constant_ref(const Tensor& tensor) {
  require_finite(tensor, OpKind::Constant);
  Node n;
  n.kind = OpKind::Constant;
  n.external = &tensor;
  return push(std::move(n));
}

// ---------------------------------------------------------------- elementwise

Var Graph::binary(OpKind kind, Var a, Var b) {
  const Tensor& ta = value(a);
  const Tensor& tb = value(b);
  const bool scalar_b = tb.size() == 1 && ta.shape != tb.shape;
  if (!scalar_b && ta.shape != tb.shape) {
    throw DimensionError(std::string(op_name(kind)) + ": shape mismatch " + to_string(ta.shape) + " vs " +
                         to_string(tb.shape));
  }
  Tensor out(ta.shape, 0.0);
  const std::size_t n = ta.size();
  for (std::size_t i = 0; i < n; ++i) {
    const double x = ta.data[i];
    const double y = scalar_b ? tb.data[0] : tb.data[i];
    switch (kind) {
      case OpKind::Add: out.data[i] = x + y; break;
      case OpKind::Sub: out.data[i] = x - y; break;
      case OpKind::Mul: out.data[i] = x * y; break;
      default: throw ValidationError("not a binary op");
    }
  }
  Node nd = make(kind, {a.id, b.id}, std::move(out));
  nd.backward = [kind, scalar_b](Graph& g, std::size_t self) {
    const auto pa = g.nodes_[self].parents[0];
    const auto pb = g.nodes_[self].parents[1];
    const auto& go = g.nodes_[self].adjoint;
    const std::size_t n = go.size();
    if (g.nodes_[pa].needs_grad) {
      auto& da = g.adj(pa);
      if (kind == OpKind::Mul) {
        const Tensor& tb = g.value(Var{pb});
        for (std::size_t i = 0; i < n; ++i) da[i] += go[i] * (scalar_b ? tb.data[0] : tb.data[i]);
      } else {
        for (std::size_t i = 0; i < n; ++i) da[i] += go[i];
      }
    }
    if (g.nodes_[pb].needs_grad) {
      auto& db = g.adj(pb);
      const Tensor& ta = g.value(Var{pa});
      for (std::size_t i = 0; i < n; ++i) {
        double contrib = go[i];
        if (kind == OpKind::Sub) contrib = -contrib;
        if (kind == OpKind::Mul) contrib *= ta.data[i];
        db[scalar_b ? 0 : i] += contrib;
      }
    }
  };
  return push(std::move(nd));
}

Var Graph::add(Var a, Var b) { return binary(OpKind::Add, a, b); }
Var Graph::sub(Var a, Var b) { return binary(OpKind::Sub, a, b); }
Var Graph::mul(Var a, Var b) { return binary(OpKind::Mul, a, b); }

Var Graph::unary(OpKind kind, Var a, double p0, double p1) {
  const Tensor& ta = value(a);
  Tensor out(ta.shape, 0.0);
  for (std::size_t i = 0; i < ta.size(); ++i) {
    const double x = ta.data[i];
    double y = 0.0;
    switch (kind) {
      case OpKind::Scale: y = x * p0; break;
      case OpKind::AddScalar: y = x + p0; break;
      case OpKind::Clamp: y = std::clamp(x, p0, p1); break;
      case OpKind::Sign: y = (x > 0) - (x < 0); break;
      case OpKind::Exp: y = std::exp(x); break;
      case OpKind::Log:
        if (!(x > 0)) throw DomainError("log of non-positive value " + std::to_string(x));
        y = std::log(x);
        break;
      case OpKind::Silu: y = x * sigmoid(x); break;
      default: throw ValidationError("not a unary op");
    }
    out.data[i] = y;
  }
  Node nd = make(kind, {a.id}, std::move(out));
  nd.backward = [kind, p0, p1](Graph& g, std::size_t self) {
    const auto pa = g.nodes_[self].parents[0];
    if (!g.nodes_[pa].needs_grad || kind == OpKind::Sign) return;
    const auto& go = g.nodes_[self].adjoint;
    const Tensor& x = g.value(Var{pa});
    const Tensor& y = g.nodes_[self].owned;
    auto& da = g.adj(pa);
    for (std::size_t i = 0; i < go.size(); ++i) {
      double d = 0.0;
      switch (kind) {
        case OpKind::Scale: d = p0; break;
        case OpKind::AddScalar: d = 1.0; break;
        case OpKind::Clamp: d = (x.data[i] >= p0 && x.data[i] <= p1) ? 1.0 : 0.0; break;
        case OpKind::Exp: d = y.data[i]; break;
        case OpKind::Log: d = 1.0 / x.data[i]; break;
        case OpKind::Silu: {
          const double s = sigmoid(x.data[i]);
          d = s * (1.0 + x.data[i] * (1.0 - s));
          break;
        }
        default: break;
      }
      da[i] += go[i] * d;
    }
  };
  return push(std::move(nd));
}

Var Graph::scale(Var a, double factor) { return unary(OpKind::Scale, a, factor); }
Var Graph::add_scalar(Var a, double offset) { return unary(OpKind::AddScalar, a, offset); }
Var Graph::clamp(Var a, double lo, double hi) {
  if (lo > hi) throw ValidationError("clamp: lo > hi");
  return unary(OpKind::Clamp, a, lo, hi);
}
Var Graph::sign(Var a) { return unary(OpKind::Sign, a); }
Var Graph::exp(Var a) { return unary(OpKind::Exp, a); }
Var Graph::log(Var a) { return unary(OpKind::Log, a); }
Var Graph::silu(Var a) {
  const Tensor& ta = value(a);
  Tensor out(ta.shape, 0.0);
  // Derivative kept from the forward pass so backward needs no second exp.
  auto slope = std::make_shared<std::vector<double>>();
  const bool keep = nodes_[a.id].needs_grad;
  if (keep) slope->resize(ta.size());
  for (std::size_t i = 0; i < ta.size(); ++i) {
    const double x = ta.data[i];
    const double s = sigmoid(x);
    out.data[i] = x * s;
    if (keep) (*slope)[i] = s * (1.0 + x * (1.0 - s));
  }
  Node nd = make(OpKind::Silu, {a.id}, std::move(out));
  nd.backward = [slope](Graph& g, std::size_t self) {
    const auto pa = g.nodes_[self].parents[0];
    if (!g.nodes_[pa].needs_grad) return;
    const auto& go = g.nodes_[self].adjoint;
    auto& da = g.adj(pa);
    for (std::size_t i = 0; i < go.size(); ++i) da[i] += go[i] * (*slope)[i];
  };
  return push(std::move(nd));
}

// ---------------------------------------------------------------- reductions

Var Graph::sum(Var a) {
  const Tensor& ta = value(a);
  double s = 0.0;
  for (double v : ta.data) s += v;
  Node nd = make(OpKind::Sum, {a.id}, Tensor::scalar(s));
  nd.backward = [](Graph& g, std::size_t self) {
    const auto pa = g.nodes_[self].parents[0];
    if (!g.nodes_[pa].needs_grad) return;
    const double go = g.nodes_[self].adjoint[0];
    for (auto& d : g.adj(pa)) d += go;
  };
  return push(std::move(nd));
}

Var Graph::mean(Var a) {
  const Tensor& ta = value(a);
  double s = 0.0;
  for (double v : ta.data) s += v;
  const double n = static_cast<double>(ta.size());
  Node nd = make(OpKind::Mean, {a.id}, Tensor::scalar(s / n));
  nd.backward = [n](Graph& g, std::size_t self) {
    const auto pa = g.nodes_[self].parents[0];
    if (!g.nodes_[pa].needs_grad) return;
    const double go = g.nodes_[self].adjoint[0] / n;
    for (auto& d : g.adj(pa)) d += go;
  };
  return push(std::move(nd));
}

Var Graph::sum_rows(Var a) {
  const Tensor& ta = value(a);
  if (ta.rank() < 1) throw DimensionError("sum_rows expects a leading batch axis");
  const std::size_t rows = ta.shape[0];
  const std::size_t cols = ta.size() / rows;
  Tensor out(Shape{rows}, 0.0);
  for (std::size_t b = 0; b < rows; ++b) {
    double s = 0.0;
    for (std::size_t j = 0; j < cols; ++j) s += ta.data[b * cols + j];
    out.data[b] = s;
  }
  Node nd = make(OpKind::SumRows, {a.id}, std::move(out));
  nd.backward = [rows, cols](Graph& g, std::size_t self) {
    const auto pa = g.nodes_[self].parents[0];
    if (!g.nodes_[pa].needs_grad) return;
    const auto& go = g.nodes_[self].adjoint;
    auto& da = g.adj(pa);
    for (std::size_t b = 0; b < rows; ++b) {
      for (std::size_t j = 0; j < cols; ++j) da[b * cols + j] += go[b];
    }
  };
  return push(std::move(nd));
}

Var Graph::reshape(Var a, Shape shape) {
  const Tensor& ta = value(a);
  if (numel(shape) != ta.size()) {
    throw DimensionError("reshape " + to_string(ta.shape) + " -> " + to_string(shape));
  }
  Node nd = make(OpKind::Reshape, {a.id}, Tensor(std::move(shape), ta.data));
  nd.backward = [](Graph& g, std::size_t self) {
    const auto pa = g.nodes_[self].parents[0];
    if (!g.nodes_[pa].needs_grad) return;
    const auto& go = g.nodes_[self].adjoint;
    auto& da = g.adj(pa);
    for (std::size_t i = 0; i < go.size(); ++i) da[i] += go[i];
  };
  return push(std::move(nd));
}

// ---------------------------------------------------------------- dense layers

Var Graph::affine(Var x, Var w, Var b) {
  const Tensor& tx = value(x);
  const Tensor& tw = value(w);
  const Tensor& tb = value(b);
  if (tx.rank() != 2 || tw.rank() != 2 || tb.rank() != 1 || tx.shape[1] != tw.shape[0] ||
      tb.shape[0] != tw.shape[1]) {
    throw DimensionError("affine: incompatible shapes x" + to_string(tx.shape) + " w" + to_string(tw.shape) +
                         " b" + to_string(tb.shape));
  }
  const std::size_t batch = tx.shape[0], in = tx.shape[1], out_dim = tw.shape[1];
  Tensor out(Shape{batch, out_dim}, 0.0);
  for (std::size_t r = 0; r < batch; ++r) {
    std::copy(tb.data.begin(), tb.data.end(), out.data.begin() + static_cast<std::ptrdiff_t>(r * out_dim));
  }
  kernels::gemm_nn(batch, out_dim, in, tx.data.data(), tw.data.data(), out.data.data(), true);
  Node nd = make(OpKind::Affine, {x.id, w.id, b.id}, std::move(out));
  nd.backward = [batch, in, out_dim](Graph& g, std::size_t self) {
    const auto px = g.nodes_[self].parents[0];
    const auto pw = g.nodes_[self].parents[1];
    const auto pb = g.nodes_[self].parents[2];
    const auto& go = g.nodes_[self].adjoint;
    if (g.nodes_[px].needs_grad) {
      const Tensor& tw = g.value(Var{pw});
      std::vector<double> wt(in * out_dim);
      kernels::transpose(in, out_dim, tw.data.data(), wt.data());
      kernels::gemm_nn(batch, in, out_dim, go.data(), wt.data(), g.adj(px).data(), true);
    }
    if (g.nodes_[pw].needs_grad) {
      const Tensor& tx = g.value(Var{px});
      kernels::gemm_tn(in, out_dim, batch, tx.data.data(), go.data(), g.adj(pw).data(), true);
    }
    if (g.nodes_[pb].needs_grad) {
      auto& db = g.adj(pb);
      for (std::size_t r = 0; r < batch; ++r) {
        for (std::size_t o = 0; o < out_dim; ++o) db[o] += go[r * out_dim + o];
      }
    }
  };
  return push(std::move(nd));
}

Var Graph::conv2d(Var x, Var kernel, std::optional<Var> bias, std::size_t stride, std::size_t padding) {
  const Tensor& tx = value(x);
  const Tensor& tk = value(kernel);
  if (tx.rank() != 4 || tk.rank() != 4 || tx.shape[1] != tk.shape[1]) {
    throw DimensionError("conv2d: incompatible shapes x" + to_string(tx.shape) + " k" + to_string(tk.shape));
  }
  if (stride == 0) throw DimensionError("conv2d: stride must be positive");
  const std::size_t batch = tx.shape[0], chans = tx.shape[1], height = tx.shape[2], width = tx.shape[3];
  const std::size_t filters = tk.shape[0], kh = tk.shape[2], kw = tk.shape[3];
  const std::size_t ph = height + 2 * padding, pw = width + 2 * padding;
  if (kh > ph || kw > pw) throw DimensionError("conv2d: kernel larger than padded input");
  if ((ph - kh) % stride != 0 || (pw - kw) % stride != 0) {
    throw DimensionError("conv2d: output extent is not an exact division for input " + to_string(tx.shape) +
                         ", kernel " + to_string(tk.shape) + ", stride " + std::to_string(stride) +
                         ", padding " + std::to_string(padding));
  }
  const std::size_t oh = (ph - kh) / stride + 1, ow = (pw - kw) / stride + 1;
  if (bias) {
    const Tensor& tb = value(*bias);
    if (tb.rank() != 1 || tb.shape[0] != filters) throw DimensionError("conv2d: bias must be [F]");
  }
  const std::size_t ckk = chans * kh * kw;
  const std::size_t hw = oh * ow;

  // cols[(c,ky,kx), r] for every output position r of one example; the
  // outer loops run over kernel taps so the inner loop is a contiguous row.
  auto for_each_tap = [=](auto&& visit) {
    std::size_t q = 0;
    for (std::size_t c = 0; c < chans; ++c) {
      for (std::size_t ky = 0; ky < kh; ++ky) {
        for (std::size_t kx = 0; kx < kw; ++kx, ++q) visit(q, c, ky, kx);
      }
    }
  };
  auto source = [=](std::size_t o, std::size_t k, std::size_t extent) -> std::ptrdiff_t {
    const auto i = static_cast<std::ptrdiff_t>(o * stride + k) - static_cast<std::ptrdiff_t>(padding);
    return i >= 0 && i < static_cast<std::ptrdiff_t>(extent) ? i : -1;
  };
  // Output columns [lo, hi) whose source column for tap kx lies inside.
  auto valid_cols = [=](std::size_t kx) {
    std::size_t lo = 0;
    while (lo < ow && source(lo, kx, width) < 0) ++lo;
    std::size_t hi = lo;
    while (hi < ow && source(hi, kx, width) >= 0) ++hi;
    return std::pair{lo, hi};
  };
  auto im2col = [=](const double* img, double* cols) {
    for_each_tap([&](std::size_t q, std::size_t c, std::size_t ky, std::size_t kx) {
      double* row = cols + q * hw;
      const auto [lo, hi] = valid_cols(kx);
      for (std::size_t oy = 0; oy < oh; ++oy) {
        double* out_row = row + oy * ow;
        const auto iy = source(oy, ky, height);
        if (iy < 0 || lo >= hi) {
          std::fill(out_row, out_row + ow, 0.0);
          continue;
        }
        std::fill(out_row, out_row + lo, 0.0);
        std::fill(out_row + hi, out_row + ow, 0.0);
        const double* src = img + (c * height + static_cast<std::size_t>(iy)) * width;
        const auto x0 = static_cast<std::size_t>(source(lo, kx, width));
        for (std::size_t ox = lo; ox < hi; ++ox) out_row[ox] = src[x0 + (ox - lo) * stride];
      }
    });
  };
  auto col2im = [=](const double* cols, double* img) {
    for_each_tap([&](std::size_t q, std::size_t c, std::size_t ky, std::size_t kx) {
      const double* row = cols + q * hw;
      const auto [lo, hi] = valid_cols(kx);
      if (lo >= hi) return;
      const auto x0 = static_cast<std::size_t>(source(lo, kx, width));
      for (std::size_t oy = 0; oy < oh; ++oy) {
        const auto iy = source(oy, ky, height);
        if (iy < 0) continue;
        double* dst = img + (c * height + static_cast<std::size_t>(iy)) * width;
        const double* in_row = row + oy * ow;
        for (std::size_t ox = lo; ox < hi; ++ox) dst[x0 + (ox - lo) * stride] += in_row[ox];
      }
    });
  };

  const bool keep_cols = nodes_[kernel.id].needs_grad;
  auto saved = std::make_shared<std::vector<double>>();
  if (keep_cols) saved->resize(batch * hw * ckk);

  Tensor out(Shape{batch, filters, oh, ow}, 0.0);
  std::vector<double> cols(hw * ckk);
  for (std::size_t b = 0; b < batch; ++b) {
    double* colp = keep_cols ? saved->data() + b * hw * ckk : cols.data();
    im2col(tx.data.data() + b * chans * height * width, colp);
    double* ob = out.data.data() + b * filters * hw;
    // out[f, r] = sum_q kernel[f, q] * cols[q, r]
    kernels::gemm_nn(filters, hw, ckk, tk.data.data(), colp, ob, false);
    if (bias) {
      const Tensor& tb = value(*bias);
      for (std::size_t f = 0; f < filters; ++f) {
        for (std::size_t r = 0; r < hw; ++r) ob[f * hw + r] += tb.data[f];
      }
    }
  }

  std::vector<std::size_t> parents{x.id, kernel.id};
  if (bias) parents.push_back(bias->id);
  Node nd = make(OpKind::Conv2d, std::move(parents), std::move(out));
  nd.backward = [=](Graph& g, std::size_t self) {
    const auto& ps = g.nodes_[self].parents;
    const auto& go = g.nodes_[self].adjoint;
    const bool dx_on = g.nodes_[ps[0]].needs_grad;
    const bool dk_on = g.nodes_[ps[1]].needs_grad;
    const bool db_on = ps.size() > 2 && g.nodes_[ps[2]].needs_grad;
    const Tensor& tk = g.value(Var{ps[1]});
    std::vector<double> cols_t(dk_on ? hw * ckk : 0);
    std::vector<double> dcols(dx_on ? hw * ckk : 0);
    for (std::size_t b = 0; b < batch; ++b) {
      const double* gb = go.data() + b * filters * hw;
      if (db_on) {
        auto& db = g.adj(ps[2]);
        for (std::size_t f = 0; f < filters; ++f) {
          double s = 0.0;
          for (std::size_t r = 0; r < hw; ++r) s += gb[f * hw + r];
          db[f] += s;
        }
      }
      if (dk_on) {
        // dk[f, q] += sum_r g[f, r] * cols[q, r]
        kernels::transpose(ckk, hw, saved->data() + b * hw * ckk, cols_t.data());
        kernels::gemm_nn(filters, ckk, hw, gb, cols_t.data(), g.adj(ps[1]).data(), true);
      }
      if (dx_on) {
        // dcols[q, r] = sum_f kernel[f, q] * g[f, r]
        kernels::gemm_tn(ckk, hw, filters, tk.data.data(), gb, dcols.data(), false);
        col2im(dcols.data(), g.adj(ps[0]).data() + b * chans * height * width);
      }
    }
  };
  return push(std::move(nd));
}

// ---------------------------------------------------------------- losses

Var Graph::log_softmax(Var logits) {
  const Tensor& z = value(logits);
  const RowView v = as_matrix(z.shape, "log_softmax");
  const auto lse = row_lse(z, v);
  Tensor out(z.shape, 0.0);
  for (std::size_t b = 0; b < v.rows; ++b) {
    for (std::size_t k = 0; k < v.cols; ++k) out.data[b * v.cols + k] = z.data[b * v.cols + k] - lse[b];
  }
  Node nd = make(OpKind::LogSoftmax, {logits.id}, std::move(out));
  nd.backward = [v](Graph& g, std::size_t self) {
    const auto pz = g.nodes_[self].parents[0];
    if (!g.nodes_[pz].needs_grad) return;
    const auto& go = g.nodes_[self].adjoint;
    const Tensor& y = g.nodes_[self].owned;
    auto& dz = g.adj(pz);
    for (std::size_t b = 0; b < v.rows; ++b) {
      double gs = 0.0;
      for (std::size_t k = 0; k < v.cols; ++k) gs += go[b * v.cols + k];
      for (std::size_t k = 0; k < v.cols; ++k) {
        const std::size_t i = b * v.cols + k;
        dz[i] += go[i] - std::exp(y.data[i]) * gs;
      }
    }
  };
  return push(std::move(nd));
}

Var Graph::softmax_cross_entropy_rows(Var logits, const Tensor& soft_labels) {
  const Tensor& z = value(logits);
  const RowView v = as_matrix(z.shape, "softmax_cross_entropy");
  if (soft_labels.shape != z.shape) {
    throw DimensionError("softmax_cross_entropy: labels " + to_string(soft_labels.shape) + " vs logits " +
                         to_string(z.shape));
  }
  for (std::size_t b = 0; b < v.rows; ++b) {
    double s = 0.0;
    for (std::size_t k = 0; k < v.cols; ++k) {
      const double y = soft_labels.data[b * v.cols + k];
      if (!(y >= 0.0)) throw ValidationError("label row " + std::to_string(b) + " has a negative entry");
      s += y;
    }
    if (std::abs(s - 1.0) > 1e-6) {
      throw ValidationError("label row " + std::to_string(b) + " sums to " + std::to_string(s) + ", not 1");
    }
  }
  const auto lse = row_lse(z, v);
  auto probs = std::make_shared<std::vector<double>>(z.size());
  auto labels = std::make_shared<std::vector<double>>(soft_labels.data);
  Tensor out(Shape{v.rows}, 0.0);
  for (std::size_t b = 0; b < v.rows; ++b) {
    double loss = 0.0;
    for (std::size_t k = 0; k < v.cols; ++k) {
      const std::size_t i = b * v.cols + k;
      const double logp = z.data[i] - lse[b];
      (*probs)[i] = std::exp(logp);
      if ((*labels)[i] != 0.0) loss -= (*labels)[i] * logp;
    }
    out.data[b] = loss;
  }
  Node nd = make(OpKind::SoftmaxCrossEntropy, {logits.id}, std::move(out));
  nd.backward = [v, probs, labels](Graph& g, std::size_t self) {
    const auto pz = g.nodes_[self].parents[0];
    if (!g.nodes_[pz].needs_grad) return;
    const auto& go = g.nodes_[self].adjoint;
    auto& dz = g.adj(pz);
    for (std::size_t b = 0; b < v.rows; ++b) {
      double ysum = 0.0;
      for (std::size_t k = 0; k < v.cols; ++k) ysum += (*labels)[b * v.cols + k];
      for (std::size_t k = 0; k < v.cols; ++k) {
        const std::size_t i = b * v.cols + k;
        dz[i] += go[b] * ((*probs)[i] * ysum - (*labels)[i]);
      }
    }
  };
  return push(std::move(nd));
}

Var Graph::softmax_cross_entropy(Var logits, const Tensor& soft_labels) {
  return mean(softmax_cross_entropy_rows(logits, soft_labels));
}

Var Graph::kl_divergence_rows(Var logits_p, Var logits_q) {
  const Tensor& p = value(logits_p);
  const Tensor& q = value(logits_q);
  if (p.shape != q.shape) {
    throw DimensionError("kl_divergence: shape mismatch " + to_string(p.shape) + " vs " + to_string(q.shape));
  }
  const RowView v = as_matrix(p.shape, "kl_divergence");
  const auto lse_p = row_lse(p, v);
  const auto lse_q = row_lse(q, v);
  auto logp = std::make_shared<std::vector<double>>(p.size());
  auto logq = std::make_shared<std::vector<double>>(p.size());
  Tensor out(Shape{v.rows}, 0.0);
  for (std::size_t b = 0; b < v.rows; ++b) {
    double kl = 0.0;
    for (std::size_t k = 0; k < v.cols; ++k) {
      const std::size_t i = b * v.cols + k;
      (*logp)[i] = p.data[i] - lse_p[b];
      (*logq)[i] = q.data[i] - lse_q[b];
      kl += std::exp((*logp)[i]) * ((*logp)[i] - (*logq)[i]);
    }
    out.data[b] = kl;
  }
  auto kl_rows = std::make_shared<std::vector<double>>(out.data);
  Node nd = make(OpKind::KlDivergence, {logits_p.id, logits_q.id}, std::move(out));
  nd.backward = [v, logp, logq, kl_rows](Graph& g, std::size_t self) {
    const auto pp = g.nodes_[self].parents[0];
    const auto pq = g.nodes_[self].parents[1];
    const auto& go = g.nodes_[self].adjoint;
    const bool dp_on = g.nodes_[pp].needs_grad;
    const bool dq_on = g.nodes_[pq].needs_grad;
    for (std::size_t b = 0; b < v.rows; ++b) {
      for (std::size_t k = 0; k < v.cols; ++k) {
        const std::size_t i = b * v.cols + k;
        const double pk = std::exp((*logp)[i]);
        if (dp_on) g.adj(pp)[i] += go[b] * pk * (((*logp)[i] - (*logq)[i]) - (*kl_rows)[b]);
        if (dq_on) g.adj(pq)[i] += go[b] * (std::exp((*logq)[i]) - pk);
      }
    }
  };
  return push(std::move(nd));
}

Var Graph::kl_divergence(Var logits_p, Var logits_q) { return mean(kl_divergence_rows(logits_p, logits_q)); }

Var Graph::margin_loss(Var logits, std::span<const int> labels) {
  const Tensor& z = value(logits);
  const RowView v = as_matrix(z.shape, "margin_loss");
  if (v.cols < 2) throw ValidationError("margin_loss needs at least two classes");
  if (labels.size() != v.rows) throw DimensionError("margin_loss: label count does not match batch");
  auto competitor = std::make_shared<std::vector<std::size_t>>(v.rows);
  auto label_copy = std::make_shared<std::vector<int>>(labels.begin(), labels.end());
  Tensor out(Shape{v.rows}, 0.0);
  for (std::size_t b = 0; b < v.rows; ++b) {
    const int y = labels[b];
    if (y < 0 || static_cast<std::size_t>(y) >= v.cols) {
      throw ValidationError("margin_loss: label " + std::to_string(y) + " out of range");
    }
    const double* row = z.data.data() + b * v.cols;
    std::size_t best = y == 0 ? 1 : 0;
    for (std::size_t k = 0; k < v.cols; ++k) {
      if (static_cast<int>(k) != y && row[k] > row[best]) best = k;
    }
    (*competitor)[b] = best;
    out.data[b] = row[y] - row[best];
  }
  Node nd = make(OpKind::MarginLoss, {logits.id}, std::move(out));
  nd.backward = [v, competitor, label_copy](Graph& g, std::size_t self) {
    const auto pz = g.nodes_[self].parents[0];
    if (!g.nodes_[pz].needs_grad) return;
    const auto& go = g.nodes_[self].adjoint;
    auto& dz = g.adj(pz);
    for (std::size_t b = 0; b < v.rows; ++b) {
      dz[b * v.cols + static_cast<std::size_t>((*label_copy)[b])] += go[b];
      dz[b * v.cols + (*competitor)[b]] -= go[b];
    }
  };
  return push(std::move(nd));
}

Var Graph::pick(Var logits, std::span<const int> index) {
  const Tensor& z = value(logits);
  const RowView v = as_matrix(z.shape, "pick");
  if (index.size() != v.rows) throw DimensionError("pick: index count does not match batch");
  auto idx = std::make_shared<std::vector<int>>(index.begin(), index.end());
  Tensor out(Shape{v.rows}, 0.0);
  for (std::size_t b = 0; b < v.rows; ++b) {
    if (index[b] < 0 || static_cast<std::size_t>(index[b]) >= v.cols) {
      throw ValidationError("pick: index out of range");
    }
    out.data[b] = z.data[b * v.cols + static_cast<std::size_t>(index[b])];
  }
  Node nd = make(OpKind::Pick, {logits.id}, std::move(out));
  nd.backward = [v, idx](Graph& g, std::size_t self) {
    const auto pz = g.nodes_[self].parents[0];
    if (!g.nodes_[pz].needs_grad) return;
    const auto& go = g.nodes_[self].adjoint;
    auto& dz = g.adj(pz);
    for (std::size_t b = 0; b < v.rows; ++b) dz[b * v.cols + static_cast<std::size_t>((*idx)[b])] += go[b];
  };
  return push(std::move(nd));
}

// ---------------------------------------------------------------- backward

void Graph::backward(Var root) {
  if (root.id >= nodes_.size()) throw ValidationError("backward: root does not belong to this graph");
  if (value(root).size() != 1) {
    throw ValidationError("backward: root must be a scalar, got shape " + to_string(value(root).shape));
  }
  for (auto& n : nodes_) n.adjoint.clear();
  if (nodes_[root.id].needs_grad) adj(root.id)[0] = 1.0;
  for (std::size_t i = root.id + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.needs_grad || n.adjoint.empty()) continue;
    if (n.backward) {
      n.backward(*this, i);
    } else if (n.external_mut != nullptr) {
      Tensor& t = *n.external_mut;
      if (t.grad.size() != t.data.size()) t.grad.assign(t.data.size(), 0.0);
      for (std::size_t k = 0; k < t.grad.size(); ++k) {
        if (!std::isfinite(n.adjoint[k])) throw NumericalError("non-finite gradient reached a parameter");
        t.grad[k] += n.adjoint[k];
      }
    }
  }
  for (std::size_t i = 0; i <= root.id; ++i) {
    if (nodes_[i].kind == OpKind::Leaf && nodes_[i].needs_grad) adj(i);
  }
}

std::span<const double> Graph::grad(Var v) const {
  const Node& n = node(v);
  if (!n.needs_grad) throw ValidationError("grad requested for a node that does not require grad");
  if (n.adjoint.empty()) throw ValidationError("grad requested before backward()");
  return n.adjoint;
}

}  // namespace robustaug
