#include "rgbdsod/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

namespace rgbdsod {

std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

Tensor::Tensor(Shape shape, float fill) : shape_(std::move(shape)), data_(shape_numel(shape_), fill) {}

Tensor::Tensor(Shape shape, std::vector<float> data) : shape_(std::move(shape)), data_(std::move(data)) {
  if (data_.size() != shape_numel(shape_)) {
    throw DimensionError("tensor data length " + std::to_string(data_.size()) +
                         " does not match shape " + shape_string(shape_));
  }
}

std::span<float> Tensor::grad() {
  if (!has_grad_) {
    grad_.assign(data_.size(), 0.0f);
    has_grad_ = true;
  }
  return grad_;
}

void Tensor::zero_grad() {
  if (has_grad_) std::fill(grad_.begin(), grad_.end(), 0.0f);
}

bool Tensor::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](float v) { return std::isfinite(v); });
}

// ---------------------------------------------------------------------------
// ParameterStore

ParameterStore::ParameterStore(const ParameterStore& other) { *this = other; }

ParameterStore& ParameterStore::operator=(const ParameterStore& other) {
  if (this == &other) return *this;
  params_.clear();
  index_.clear();
  states_.clear();
  state_order_.clear();
  for (const auto& p : other.params_) {
    index_[p->name] = params_.size();
    params_.push_back(std::make_unique<Parameter>(*p));
  }
  for (const auto& name : other.state_order_) {
    states_[name] = std::make_unique<BatchNormState>(*other.states_.at(name));
    state_order_.push_back(name);
  }
  return *this;
}

Parameter& ParameterStore::add(const std::string& name, Tensor init) {
  if (index_.count(name)) throw ConfigError("parameter registered twice: " + name);
  index_[name] = params_.size();
  auto p = std::make_unique<Parameter>();
  p->name = name;
  p->velocity.assign(init.numel(), 0.0f);
  p->value = std::move(init);
  params_.push_back(std::move(p));
  return *params_.back();
}

BatchNormState& ParameterStore::add_batchnorm_state(const std::string& name, std::size_t channels) {
  if (states_.count(name)) throw ConfigError("buffer registered twice: " + name);
  auto st = std::make_unique<BatchNormState>();
  st->running_mean = Tensor({channels}, 0.0f);
  st->running_var = Tensor({channels}, 1.0f);
  auto& ref = *st;
  states_[name] = std::move(st);
  state_order_.push_back(name);
  return ref;
}

Parameter& ParameterStore::get(const std::string& name) {
  auto* p = find(name);
  if (!p) throw ConfigError("unknown parameter: " + name);
  return *p;
}

const Parameter& ParameterStore::get(const std::string& name) const {
  const auto* p = find(name);
  if (!p) throw ConfigError("unknown parameter: " + name);
  return *p;
}

Parameter* ParameterStore::find(const std::string& name) {
  auto it = index_.find(name);
  return it == index_.end() ? nullptr : params_[it->second].get();
}

const Parameter* ParameterStore::find(const std::string& name) const {
  auto it = index_.find(name);
  return it == index_.end() ? nullptr : params_[it->second].get();
}

BatchNormState& ParameterStore::state(const std::string& name) {
  auto it = states_.find(name);
  if (it == states_.end()) throw ConfigError("unknown buffer: " + name);
  return *it->second;
}

const BatchNormState* ParameterStore::find_state(const std::string& name) const {
  auto it = states_.find(name);
  return it == states_.end() ? nullptr : it->second.get();
}

std::vector<Parameter*> ParameterStore::parameters() {
  std::vector<Parameter*> out;
  out.reserve(params_.size());
  for (auto& p : params_) out.push_back(p.get());
  return out;
}

std::vector<const Parameter*> ParameterStore::parameters() const {
  std::vector<const Parameter*> out;
  out.reserve(params_.size());
  for (const auto& p : params_) out.push_back(p.get());
  return out;
}

void ParameterStore::zero_grad() {
  for (auto& p : params_) p->value.zero_grad();
}

// ---------------------------------------------------------------------------
// Graph

const Tensor& Var::value() const { return graph->value(id); }

Var Graph::constant(Tensor value) {
  Node n;
  n.value = std::move(value);
  nodes_.push_back(std::move(n));
  return {this, nodes_.size() - 1};
}

Var Graph::parameter(Parameter& param) {
  auto it = param_nodes_.find(&param);
  if (it != param_nodes_.end()) return {this, it->second};
  Node n;
  n.param = &param;
  n.requires_grad = grad_enabled_;
  nodes_.push_back(std::move(n));
  param_nodes_[&param] = nodes_.size() - 1;
  return {this, nodes_.size() - 1};
}

Var Graph::add_node(Tensor value, std::vector<std::size_t> inputs, BackwardFn backward) {
  if (!value.all_finite()) {
    throw NumericalError("non-finite value produced by graph node " + std::to_string(nodes_.size()));
  }
  Node n;
  n.value = std::move(value);
  n.requires_grad = std::any_of(inputs.begin(), inputs.end(),
                                [this](std::size_t i) { return nodes_[i].requires_grad; });
  n.inputs = std::move(inputs);
  if (n.requires_grad) n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return {this, nodes_.size() - 1};
}

const Tensor& Graph::value(std::size_t id) const {
  const Node& n = nodes_.at(id);
  return n.param ? n.param->value : n.value;
}

Tensor& Graph::node_tensor(std::size_t id) {
  Node& n = nodes_.at(id);
  return n.param ? n.param->value : n.value;
}

std::span<float> Graph::grad(std::size_t id) { return node_tensor(id).grad(); }

void Graph::backward(Var loss) {
  if (loss.graph != this) throw ConfigError("backward called with a foreign node");
  if (value(loss.id).numel() != 1) throw DimensionError("backward requires a scalar loss");
  if (!nodes_[loss.id].requires_grad) return;
  grad(loss.id)[0] += 1.0f;
  for (std::size_t i = loss.id + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.requires_grad || n.param || !n.backward) continue;
    if (!n.value.has_grad()) continue;  // unreachable from the loss
    n.backward(*this, i);
  }
}

// ---------------------------------------------------------------------------
// Dense kernels. Float storage, double accumulation.

namespace {

void require_rank4(const Tensor& t, const char* what) {
  if (t.rank() != 4) throw DimensionError(std::string(what) + " expects a 4-D NCHW tensor, got " + shape_string(t.shape()));
}

// C[m x n] = A[m x k] * B[k x n]
void gemm_nn(const float* a, const float* b, float* c, std::size_t m, std::size_t k, std::size_t n,
             const float* row_bias = nullptr) {
  std::vector<double> acc(n);
  for (std::size_t i = 0; i < m; ++i) {
    std::fill(acc.begin(), acc.end(), row_bias ? static_cast<double>(row_bias[i]) : 0.0);
    const float* arow = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = arow[p];
      if (av == 0.0) continue;
      const float* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) acc[j] += av * brow[j];
    }
    float* crow = c + i * n;
    for (std::size_t j = 0; j < n; ++j) crow[j] = static_cast<float>(acc[j]);
  }
}

// C[m x n] += A^T * B where A is [k x m], B is [k x n]
void gemm_tn_acc(const float* a, const float* b, float* c, std::size_t m, std::size_t k, std::size_t n) {
  std::vector<double> acc(n);
  for (std::size_t i = 0; i < m; ++i) {
    std::fill(acc.begin(), acc.end(), 0.0);
    for (std::size_t p = 0; p < k; ++p) {
      const double av = a[p * m + i];
      if (av == 0.0) continue;
      const float* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) acc[j] += av * brow[j];
    }
    float* crow = c + i * n;
    for (std::size_t j = 0; j < n; ++j) crow[j] = static_cast<float>(crow[j] + acc[j]);
  }
}

struct ConvGeometry {
  std::size_t cin, h, w, kh, kw, ho, wo;
  int stride, pad;
};

void im2col(const float* x, const ConvGeometry& g, float* cols) {
  const std::size_t p = g.ho * g.wo;
  for (std::size_t c = 0; c < g.cin; ++c) {
    for (std::size_t ky = 0; ky < g.kh; ++ky) {
      for (std::size_t kx = 0; kx < g.kw; ++kx) {
        float* dst = cols + ((c * g.kh + ky) * g.kw + kx) * p;
        for (std::size_t oy = 0; oy < g.ho; ++oy) {
          const long iy = static_cast<long>(oy) * g.stride - g.pad + static_cast<long>(ky);
          for (std::size_t ox = 0; ox < g.wo; ++ox) {
            const long ix = static_cast<long>(ox) * g.stride - g.pad + static_cast<long>(kx);
            const bool inside = iy >= 0 && ix >= 0 && iy < static_cast<long>(g.h) && ix < static_cast<long>(g.w);
            dst[oy * g.wo + ox] = inside ? x[(c * g.h + iy) * g.w + ix] : 0.0f;
          }
        }
      }
    }
  }
}

void col2im_acc(const float* cols, const ConvGeometry& g, float* dx) {
  const std::size_t p = g.ho * g.wo;
  for (std::size_t c = 0; c < g.cin; ++c) {
    for (std::size_t ky = 0; ky < g.kh; ++ky) {
      for (std::size_t kx = 0; kx < g.kw; ++kx) {
        const float* src = cols + ((c * g.kh + ky) * g.kw + kx) * p;
        for (std::size_t oy = 0; oy < g.ho; ++oy) {
          const long iy = static_cast<long>(oy) * g.stride - g.pad + static_cast<long>(ky);
          if (iy < 0 || iy >= static_cast<long>(g.h)) continue;
          for (std::size_t ox = 0; ox < g.wo; ++ox) {
            const long ix = static_cast<long>(ox) * g.stride - g.pad + static_cast<long>(kx);
            if (ix < 0 || ix >= static_cast<long>(g.w)) continue;
            dx[(c * g.h + iy) * g.w + ix] += src[oy * g.wo + ox];
          }
        }
      }
    }
  }
}

}  // namespace

Var conv2d(Var input, Var weight, Var bias, int stride, int pad) {
  const Tensor& x = input.value();
  const Tensor& wt = weight.value();
  const Tensor& b = bias.value();
  require_rank4(x, "conv2d input");
  require_rank4(wt, "conv2d weight");
  if (stride < 1 || pad < 0) throw DimensionError("conv2d requires stride >= 1 and pad >= 0");
  if (x.dim(1) != wt.dim(1)) {
    throw DimensionError("conv2d channel mismatch: input " + shape_string(x.shape()) + " vs weight " +
                         shape_string(wt.shape()));
  }
  if (b.numel() != wt.dim(0)) throw DimensionError("conv2d bias length must equal output channels");
  ConvGeometry g{x.dim(1), x.dim(2), x.dim(3), wt.dim(2), wt.dim(3), 0, 0, stride, pad};
  if (g.kh % 2 == 0 || g.kw % 2 == 0) throw DimensionError("conv2d kernel extents must be odd");
  if (g.h + 2 * pad < g.kh || g.w + 2 * pad < g.kw) throw DimensionError("conv2d kernel larger than padded input");
  g.ho = (g.h + 2 * pad - g.kh) / stride + 1;
  g.wo = (g.w + 2 * pad - g.kw) / stride + 1;
  const std::size_t batch = x.dim(0), cout = wt.dim(0);
  const std::size_t k = g.cin * g.kh * g.kw, p = g.ho * g.wo;

  Tensor out({batch, cout, g.ho, g.wo});
  auto cols = std::make_shared<std::vector<float>>(batch * k * p);
  for (std::size_t n = 0; n < batch; ++n) {
    float* c = cols->data() + n * k * p;
    im2col(x.data().data() + n * g.cin * g.h * g.w, g, c);
    gemm_nn(wt.data().data(), c, out.data().data() + n * cout * p, cout, k, p, b.data().data());
  }

  const std::size_t xi = input.id, wi = weight.id, bi = bias.id;
  return input.graph->add_node(std::move(out), {xi, wi, bi}, [=](Graph& gr, std::size_t self) {
    std::span<const float> dy = gr.value(self).grad();
    if (gr.requires_grad(bi)) {
      auto db = gr.grad(bi);
      for (std::size_t co = 0; co < cout; ++co) {
        double s = 0.0;
        for (std::size_t n = 0; n < batch; ++n) {
          const float* d = dy.data() + (n * cout + co) * p;
          for (std::size_t j = 0; j < p; ++j) s += d[j];
        }
        db[co] = static_cast<float>(db[co] + s);
      }
    }
    if (gr.requires_grad(wi)) {
      auto dw = gr.grad(wi);
      // dW[cout x k] += dY[cout x p] * cols^T[p x k]
      std::vector<float> cols_t(p * k);
      for (std::size_t n = 0; n < batch; ++n) {
        const float* c = cols->data() + n * k * p;
        for (std::size_t r = 0; r < k; ++r)
          for (std::size_t j = 0; j < p; ++j) cols_t[j * k + r] = c[r * p + j];
        std::vector<float> dy_t(p * cout);
        const float* d = dy.data() + n * cout * p;
        for (std::size_t co = 0; co < cout; ++co)
          for (std::size_t j = 0; j < p; ++j) dy_t[j * cout + co] = d[co * p + j];
        gemm_tn_acc(dy_t.data(), cols_t.data(), dw.data(), cout, p, k);
      }
    }
    if (gr.requires_grad(xi)) {
      auto dx = gr.grad(xi);
      const float* wdata = gr.value(wi).data().data();
      std::vector<float> dcols(k * p);
      for (std::size_t n = 0; n < batch; ++n) {
        std::fill(dcols.begin(), dcols.end(), 0.0f);
        // dcols[k x p] = W^T[k x cout] * dY[cout x p]
        gemm_tn_acc(wdata, dy.data() + n * cout * p, dcols.data(), k, cout, p);
        col2im_acc(dcols.data(), g, dx.data() + n * g.cin * g.h * g.w);
      }
    }
  });
}

Var relu(Var input) {
  const Tensor& x = input.value();
  Tensor out(x.shape());
  for (std::size_t i = 0; i < x.numel(); ++i) out[i] = x[i] > 0.0f ? x[i] : 0.0f;
  const std::size_t xi = input.id;
  return input.graph->add_node(std::move(out), {xi}, [xi](Graph& gr, std::size_t self) {
    const Tensor& y = gr.value(self);
    auto dy = y.grad();
    auto dx = gr.grad(xi);
    for (std::size_t i = 0; i < y.numel(); ++i)
      if (y[i] > 0.0f) dx[i] += dy[i];
  });
}

Var maxpool2d(Var input, int kernel, int stride, int pad) {
  const Tensor& x = input.value();
  require_rank4(x, "maxpool2d input");
  if (kernel < 1 || stride < 1 || pad < 0) throw DimensionError("maxpool2d requires kernel, stride >= 1");
  const std::size_t nb = x.dim(0), ch = x.dim(1), h = x.dim(2), w = x.dim(3);
  if (h + 2 * pad < static_cast<std::size_t>(kernel) || w + 2 * pad < static_cast<std::size_t>(kernel))
    throw DimensionError("maxpool2d window larger than padded input");
  const std::size_t ho = (h + 2 * pad - kernel) / stride + 1;
  const std::size_t wo = (w + 2 * pad - kernel) / stride + 1;
  Tensor out({nb, ch, ho, wo});
  auto argmax = std::make_shared<std::vector<std::size_t>>(out.numel());
  constexpr std::size_t kNone = std::numeric_limits<std::size_t>::max();
  std::size_t o = 0;
  for (std::size_t n = 0; n < nb; ++n) {
    for (std::size_t c = 0; c < ch; ++c) {
      const std::size_t plane = (n * ch + c) * h * w;
      for (std::size_t oy = 0; oy < ho; ++oy) {
        for (std::size_t ox = 0; ox < wo; ++ox, ++o) {
          float best = -std::numeric_limits<float>::infinity();
          std::size_t best_i = kNone;
          for (int ky = 0; ky < kernel; ++ky) {
            const long iy = static_cast<long>(oy * stride) - pad + ky;
            if (iy < 0 || iy >= static_cast<long>(h)) continue;
            for (int kx = 0; kx < kernel; ++kx) {
              const long ix = static_cast<long>(ox * stride) - pad + kx;
              if (ix < 0 || ix >= static_cast<long>(w)) continue;
              const std::size_t idx = plane + iy * w + ix;
              // Strict comparison keeps the first maximum in scan order.
              if (best_i == kNone || x[idx] > best) {
                best = x[idx];
                best_i = idx;
              }
            }
          }
          if (best_i == kNone) throw DimensionError("maxpool2d window lies entirely in padding");
          out[o] = best;
          (*argmax)[o] = best_i;
        }
      }
    }
  }
  const std::size_t xi = input.id;
  return input.graph->add_node(std::move(out), {xi}, [xi, argmax](Graph& gr, std::size_t self) {
    auto dy = gr.value(self).grad();
    auto dx = gr.grad(xi);
    for (std::size_t i = 0; i < dy.size(); ++i) dx[(*argmax)[i]] += dy[i];
  });
}

namespace {

// Source taps for one output coordinate of 2x bilinear upsampling with
// half-pixel centers: src = (i + 0.5) / 2 - 0.5, clamped at the borders.
struct Tap {
  std::size_t i0, i1;
  float w0, w1;
};

std::vector<Tap> upsample_taps(std::size_t n) {
  std::vector<Tap> taps(2 * n);
  for (std::size_t o = 0; o < 2 * n; ++o) {
    double src = (static_cast<double>(o) + 0.5) / 2.0 - 0.5;
    if (src < 0.0) src = 0.0;
    std::size_t i0 = static_cast<std::size_t>(std::floor(src));
    if (i0 > n - 1) i0 = n - 1;
    const std::size_t i1 = std::min(i0 + 1, n - 1);
    const double frac = src - static_cast<double>(i0);
    taps[o] = {i0, i1, static_cast<float>(1.0 - frac), static_cast<float>(frac)};
  }
  return taps;
}

}  // namespace

Var upsample2x(Var input) {
  const Tensor& x = input.value();
  require_rank4(x, "upsample2x input");
  const std::size_t nb = x.dim(0), ch = x.dim(1), h = x.dim(2), w = x.dim(3);
  if (h == 0 || w == 0) throw DimensionError("upsample2x requires nonempty spatial extents");
  const auto ty = upsample_taps(h);
  const auto tx = upsample_taps(w);
  const std::size_t ho = 2 * h, wo = 2 * w;
  Tensor out({nb, ch, ho, wo});
  for (std::size_t pl = 0; pl < nb * ch; ++pl) {
    const float* src = x.data().data() + pl * h * w;
    float* dst = out.data().data() + pl * ho * wo;
    for (std::size_t oy = 0; oy < ho; ++oy) {
      const Tap& a = ty[oy];
      for (std::size_t ox = 0; ox < wo; ++ox) {
        const Tap& b = tx[ox];
        const double v = static_cast<double>(a.w0) * (b.w0 * src[a.i0 * w + b.i0] + b.w1 * src[a.i0 * w + b.i1]) +
                         static_cast<double>(a.w1) * (b.w0 * src[a.i1 * w + b.i0] + b.w1 * src[a.i1 * w + b.i1]);
        dst[oy * wo + ox] = static_cast<float>(v);
      }
    }
  }
  const std::size_t xi = input.id;
  return input.graph->add_node(std::move(out), {xi}, [=](Graph& gr, std::size_t self) {
    auto dy = gr.value(self).grad();
    auto dx = gr.grad(xi);
    for (std::size_t pl = 0; pl < nb * ch; ++pl) {
      const float* g = dy.data() + pl * ho * wo;
      float* d = dx.data() + pl * h * w;
      for (std::size_t oy = 0; oy < ho; ++oy) {
        const Tap& a = ty[oy];
        for (std::size_t ox = 0; ox < wo; ++ox) {
          const Tap& b = tx[ox];
          const float v = g[oy * wo + ox];
          d[a.i0 * w + b.i0] += a.w0 * b.w0 * v;
          d[a.i0 * w + b.i1] += a.w0 * b.w1 * v;
          d[a.i1 * w + b.i0] += a.w1 * b.w0 * v;
          d[a.i1 * w + b.i1] += a.w1 * b.w1 * v;
        }
      }
    }
  });
}

Var batchnorm(Var input, Var gamma, Var beta, BatchNormState& state, Mode mode, double eps, double momentum) {
  const Tensor& x = input.value();
  require_rank4(x, "batchnorm input");
  const std::size_t nb = x.dim(0), ch = x.dim(1), hw = x.dim(2) * x.dim(3);
  if (gamma.value().numel() != ch || beta.value().numel() != ch || state.running_mean.numel() != ch)
    throw DimensionError("batchnorm parameter length must equal channel extent " + std::to_string(ch));
  const std::size_t count = nb * hw;
  if (count == 0) throw DimensionError("batchnorm over an empty tensor");

  auto mean = std::make_shared<std::vector<double>>(ch);
  auto inv_std = std::make_shared<std::vector<double>>(ch);
  if (mode != Mode::Eval) {
    for (std::size_t c = 0; c < ch; ++c) {
      double s = 0.0;
      for (std::size_t n = 0; n < nb; ++n) {
        const float* p = x.data().data() + (n * ch + c) * hw;
        for (std::size_t j = 0; j < hw; ++j) s += p[j];
      }
      const double m = s / static_cast<double>(count);
      double v = 0.0;
      for (std::size_t n = 0; n < nb; ++n) {
        const float* p = x.data().data() + (n * ch + c) * hw;
        for (std::size_t j = 0; j < hw; ++j) v += (p[j] - m) * (p[j] - m);
      }
      v /= static_cast<double>(count);
      (*mean)[c] = m;
      (*inv_std)[c] = 1.0 / std::sqrt(v + eps);
      if (mode != Mode::Train) continue;
      const double unbiased = count > 1 ? v * static_cast<double>(count) / static_cast<double>(count - 1) : v;
      state.running_mean[c] = static_cast<float>((1.0 - momentum) * state.running_mean[c] + momentum * m);
      state.running_var[c] = static_cast<float>((1.0 - momentum) * state.running_var[c] + momentum * unbiased);
    }
  } else {
    for (std::size_t c = 0; c < ch; ++c) {
      (*mean)[c] = state.running_mean[c];
      (*inv_std)[c] = 1.0 / std::sqrt(static_cast<double>(state.running_var[c]) + eps);
    }
  }

  const Tensor& gm = gamma.value();
  const Tensor& bt = beta.value();
  Tensor out(x.shape());
  auto xhat = std::make_shared<std::vector<float>>(x.numel());
  for (std::size_t n = 0; n < nb; ++n) {
    for (std::size_t c = 0; c < ch; ++c) {
      const std::size_t off = (n * ch + c) * hw;
      for (std::size_t j = 0; j < hw; ++j) {
        const double xh = (x[off + j] - (*mean)[c]) * (*inv_std)[c];
        (*xhat)[off + j] = static_cast<float>(xh);
        out[off + j] = static_cast<float>(gm[c] * xh + bt[c]);
      }
    }
  }

  const std::size_t xi = input.id, gi = gamma.id, bi = beta.id;
  const bool train = mode != Mode::Eval;
  return input.graph->add_node(std::move(out), {xi, gi, bi}, [=](Graph& gr, std::size_t self) {
    auto dy = gr.value(self).grad();
    std::vector<double> sum_dy(ch, 0.0), sum_dy_xhat(ch, 0.0);
    for (std::size_t n = 0; n < nb; ++n) {
      for (std::size_t c = 0; c < ch; ++c) {
        const std::size_t off = (n * ch + c) * hw;
        for (std::size_t j = 0; j < hw; ++j) {
          sum_dy[c] += dy[off + j];
          sum_dy_xhat[c] += static_cast<double>(dy[off + j]) * (*xhat)[off + j];
        }
      }
    }
    if (gr.requires_grad(gi)) {
      auto dg = gr.grad(gi);
      for (std::size_t c = 0; c < ch; ++c) dg[c] = static_cast<float>(dg[c] + sum_dy_xhat[c]);
    }
    if (gr.requires_grad(bi)) {
      auto db = gr.grad(bi);
      for (std::size_t c = 0; c < ch; ++c) db[c] = static_cast<float>(db[c] + sum_dy[c]);
    }
    if (gr.requires_grad(xi)) {
      const Tensor& gm_now = gr.value(gi);
      auto dx = gr.grad(xi);
      const double inv_count = 1.0 / static_cast<double>(count);
      for (std::size_t n = 0; n < nb; ++n) {
        for (std::size_t c = 0; c < ch; ++c) {
          const std::size_t off = (n * ch + c) * hw;
          const double scale = gm_now[c] * (*inv_std)[c];
          for (std::size_t j = 0; j < hw; ++j) {
            double g = dy[off + j];
            if (train) g -= (sum_dy[c] + (*xhat)[off + j] * sum_dy_xhat[c]) * inv_count;
            dx[off + j] = static_cast<float>(dx[off + j] + scale * g);
          }
        }
      }
    }
  });
}

Var concat(const std::vector<Var>& parts) {
  if (parts.empty()) throw DimensionError("concat of zero tensors");
  Graph* graph = parts.front().graph;
  const Shape& first = parts.front().shape();
  if (first.size() != 4) throw DimensionError("concat expects 4-D NCHW tensors");
  std::size_t total_c = 0;
  std::vector<std::size_t> chans;
  std::vector<std::size_t> ids;
  for (const Var& v : parts) {
    const Shape& s = v.shape();
    if (s.size() != 4 || s[0] != first[0] || s[2] != first[2] || s[3] != first[3])
      throw DimensionError("concat extent mismatch: " + shape_string(first) + " vs " + shape_string(s));
    chans.push_back(s[1]);
    ids.push_back(v.id);
    total_c += s[1];
  }
  const std::size_t nb = first[0], hw = first[2] * first[3];
  Tensor out({nb, total_c, first[2], first[3]});
  for (std::size_t n = 0; n < nb; ++n) {
    std::size_t c0 = 0;
    for (std::size_t k = 0; k < parts.size(); ++k) {
      const Tensor& src = parts[k].value();
      const float* s = src.data().data() + n * chans[k] * hw;
      std::copy(s, s + chans[k] * hw, out.data().data() + (n * total_c + c0) * hw);
      c0 += chans[k];
    }
  }
  return graph->add_node(std::move(out), ids, [=](Graph& gr, std::size_t self) {
    auto dy = gr.value(self).grad();
    for (std::size_t n = 0; n < nb; ++n) {
      std::size_t c0 = 0;
      for (std::size_t k = 0; k < ids.size(); ++k) {
        if (gr.requires_grad(ids[k])) {
          auto dx = gr.grad(ids[k]);
          const float* g = dy.data() + (n * total_c + c0) * hw;
          float* d = dx.data() + n * chans[k] * hw;
          for (std::size_t j = 0; j < chans[k] * hw; ++j) d[j] += g[j];
        }
        c0 += chans[k];
      }
    }
  });
}

Var sigmoid_bce(Var logits, const Tensor& target) {
  const Tensor& x = logits.value();
  if (x.shape() != target.shape())
    throw DimensionError("sigmoid_bce shape mismatch: " + shape_string(x.shape()) + " vs " +
                         shape_string(target.shape()));
  if (x.numel() == 0) throw DimensionError("sigmoid_bce over an empty tensor");
  // -[t log s(x) + (1-t) log(1-s(x))] = max(x,0) - t x + log(1 + exp(-|x|))
  double s = 0.0;
  for (std::size_t i = 0; i < x.numel(); ++i) {
    const double v = x[i];
    s += std::max(v, 0.0) - target[i] * v + std::log1p(std::exp(-std::abs(v)));
  }
  const double n = static_cast<double>(x.numel());
  Tensor out({1}, static_cast<float>(s / n));
  const std::size_t xi = logits.id;
  auto t = std::make_shared<Tensor>(target);
  return logits.graph->add_node(std::move(out), {xi}, [=](Graph& gr, std::size_t self) {
    const double g = gr.value(self).grad()[0];
    const Tensor& xv = gr.value(xi);
    auto dx = gr.grad(xi);
    for (std::size_t i = 0; i < xv.numel(); ++i) {
      const double v = xv[i];
      const double sig = v >= 0.0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
      dx[i] = static_cast<float>(dx[i] + g * (sig - (*t)[i]) / n);
    }
  });
}

Var weighted_sum(const std::vector<Var>& terms, const std::vector<double>& weights) {
  if (terms.empty() || terms.size() != weights.size())
    throw ConfigError("weighted_sum needs one weight per term");
  double s = 0.0;
  std::vector<std::size_t> ids;
  for (std::size_t i = 0; i < terms.size(); ++i) {
    if (terms[i].value().numel() != 1) throw DimensionError("weighted_sum terms must be scalars");
    s += weights[i] * terms[i].value()[0];
    ids.push_back(terms[i].id);
  }
  return terms.front().graph->add_node(Tensor({1}, static_cast<float>(s)), ids,
                                       [ids, weights](Graph& gr, std::size_t self) {
                                         const double g = gr.value(self).grad()[0];
                                         for (std::size_t i = 0; i < ids.size(); ++i) {
                                           if (!gr.requires_grad(ids[i])) continue;
                                           auto d = gr.grad(ids[i]);
                                           d[0] = static_cast<float>(d[0] + g * weights[i]);
                                         }
                                       });
}

Var upsample_to(Var input, std::size_t h, std::size_t w) {
  Var v = input;
  while (v.shape()[2] < h || v.shape()[3] < w) v = upsample2x(v);
  if (v.shape()[2] != h || v.shape()[3] != w)
    throw DimensionError("upsample_to: " + shape_string(input.shape()) + " cannot reach " + std::to_string(h) +
                         "x" + std::to_string(w) + " by doubling");
  return v;
}

Var downsample_to(Var input, std::size_t h, std::size_t w) {
  Var v = input;
  while (v.shape()[2] > h || v.shape()[3] > w) v = maxpool2d(v, 2, 2, 0);
  if (v.shape()[2] != h || v.shape()[3] != w)
    throw DimensionError("downsample_to: " + shape_string(input.shape()) + " cannot reach " + std::to_string(h) +
                         "x" + std::to_string(w) + " by halving");
  return v;
}

Var resample_to(Var input, std::size_t h, std::size_t w) {
  if (input.shape()[2] < h) return upsample_to(input, h, w);
  if (input.shape()[2] > h) return downsample_to(input, h, w);
  return input;
}

Tensor sigmoid(const Tensor& logits) {
  Tensor out(logits.shape());
  for (std::size_t i = 0; i < logits.numel(); ++i) {
    const double v = logits[i];
    out[i] = static_cast<float>(v >= 0.0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v)));
  }
  return out;
}

void sgd_step(ParameterStore& params, double lr, double momentum, double weight_decay, int iter_size) {
  sgd_step(params.parameters(), lr, momentum, weight_decay, iter_size);
}

void sgd_step(const std::vector<Parameter*>& params, double lr, double momentum, double weight_decay,
              int iter_size) {
  if (iter_size < 1) throw ConfigError("iter_size must be >= 1");
  const double inv = 1.0 / static_cast<double>(iter_size);
  for (Parameter* p : params) {
    auto data = p->value.data();
    if (!p->value.has_grad()) p->value.grad();
    auto g = p->value.grad();
    for (std::size_t i = 0; i < data.size(); ++i) {
      const double v = momentum * p->velocity[i] + g[i] * inv + weight_decay * data[i];
      p->velocity[i] = static_cast<float>(v);
      data[i] = static_cast<float>(data[i] - lr * v);
    }
    p->value.zero_grad();
  }
}

}  // namespace rgbdsod
