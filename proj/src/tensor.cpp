#include "lkf/tensor.hpp"

#include <cmath>
#include <numbers>
#include <sstream>
#include <stdexcept>

#include "lkf/autograd.hpp"

namespace lkf {

namespace {

std::size_t checked_numel(const std::vector<int>& shape) {
  if (shape.empty()) {
    throw std::invalid_argument("tensor shape must have at least one dimension");
  }
  std::size_t n = 1;
  for (int d : shape) {
    if (d < 1) {
      throw std::invalid_argument("tensor dimensions must be >= 1, got " + shape_str(shape));
    }
    n *= static_cast<std::size_t>(d);
  }
  return n;
}

Tensor make_tensor(std::vector<int> shape, std::vector<double> data) {
  auto impl = std::make_shared<detail::TensorImpl>();
  impl->shape = std::move(shape);
  impl->data = std::make_shared<std::vector<double>>(std::move(data));
  return Tensor(std::move(impl));
}

void check_defined(const Tensor& t) {
  if (!t.defined()) throw std::invalid_argument("operation on undefined tensor");
}

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (!a.same_shape(b)) {
    throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                                " vs " + shape_str(b.shape()));
  }
}

}  // namespace

std::string shape_str(const std::vector<int>& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ')';
  return os.str();
}

Tensor Tensor::from_data(std::vector<int> shape, std::vector<double> data) {
  if (checked_numel(shape) != data.size()) {
    throw std::invalid_argument("from_data: shape " + shape_str(shape) + " needs " +
                                std::to_string(checked_numel(shape)) + " values, got " +
                                std::to_string(data.size()));
  }
  return make_tensor(std::move(shape), std::move(data));
}

const std::vector<int>& Tensor::shape() const {
  if (!impl_) throw std::invalid_argument("shape() on undefined tensor");
  return impl_->shape;
}

std::size_t Tensor::numel() const {
  if (!impl_) return 0;
  return impl_->data->size();
}

const double* Tensor::data() const {
  check_defined(*this);
  return impl_->data->data();
}

double* Tensor::data() {
  check_defined(*this);
  return impl_->data->data();
}

double Tensor::value() const {
  if (numel() != 1) {
    throw std::invalid_argument("value() requires a one-element tensor, got shape " +
                                shape_str(shape()));
  }
  return (*impl_->data)[0];
}

double Tensor::at4(int b, int c, int y, int x) const {
  const auto& s = shape();
  return data()[((static_cast<std::size_t>(b) * s[1] + c) * s[2] + y) * s[3] + x];
}

double& Tensor::at4(int b, int c, int y, int x) {
  const auto& s = shape();
  return data()[((static_cast<std::size_t>(b) * s[1] + c) * s[2] + y) * s[3] + x];
}

Tensor Tensor::clone() const {
  check_defined(*this);
  return make_tensor(impl_->shape, *impl_->data);
}

Tensor Tensor::detached() const {
  check_defined(*this);
  auto impl = std::make_shared<detail::TensorImpl>();
  impl->shape = impl_->shape;
  impl->data = impl_->data;
  return Tensor(std::move(impl));
}

Tensor Tensor::reshape(const std::vector<int>& new_shape) const {
  check_defined(*this);
  if (checked_numel(new_shape) != numel()) {
    throw std::invalid_argument("reshape: " + shape_str(shape()) + " -> " + shape_str(new_shape) +
                                " changes element count");
  }
  auto impl = std::make_shared<detail::TensorImpl>();
  impl->shape = new_shape;
  impl->data = impl_->data;  // reshape shares the flat buffer bit-exactly
  Tensor out(std::move(impl));
  auto state = detail::tape_of({this});
  if (state) {
    std::vector<int> in_shape = shape();
    detail::record(state, "reshape", {this}, out, [in_shape](BackwardCtx& ctx) {
      ctx.add_grad(0, ctx.grad_output().reshape(in_shape));
    });
  }
  return out;
}

bool Tensor::same_shape(const Tensor& other) const {
  return defined() && other.defined() && impl_->shape == other.impl_->shape;
}

bool Tensor::all_finite() const {
  check_defined(*this);
  for (double v : *impl_->data) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

const std::shared_ptr<detail::Node>& Tensor::node() const {
  static const std::shared_ptr<detail::Node> kNull;
  return impl_ ? impl_->node : kNull;
}

// ---------------------------------------------------------------------------
// Rng: splitmix64 over an incrementing counter.

std::uint64_t Rng::next_u64() {
  std::uint64_t z = seed_ + (++counter_) * 0x9E3779B97F4A7C15ull;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

double Rng::uniform() {
  return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double Rng::normal() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  // Box-Muller; 1-u keeps the log argument in (0, 1].
  double u1 = 1.0 - uniform();
  double u2 = uniform();
  double r = std::sqrt(-2.0 * std::log(u1));
  double theta = 2.0 * std::numbers::pi * u2;
  spare_ = r * std::sin(theta);
  has_spare_ = true;
  return r * std::cos(theta);
}

int Rng::uniform_int(int n) {
  if (n <= 0) throw std::invalid_argument("uniform_int: n must be positive");
  return static_cast<int>(next_u64() % static_cast<std::uint64_t>(n));
}

Rng Rng::fork(std::uint64_t stream) const {
  std::uint64_t z = seed_ ^ (0xD1B54A32D192ED03ull * (stream + 1));
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return Rng(z ^ (z >> 31));
}

// ---------------------------------------------------------------------------
// Construction

Tensor zeros(const std::vector<int>& shape) {
  return make_tensor(shape, std::vector<double>(checked_numel(shape), 0.0));
}

Tensor ones(const std::vector<int>& shape) { return full(shape, 1.0); }

Tensor full(const std::vector<int>& shape, double v) {
  return make_tensor(shape, std::vector<double>(checked_numel(shape), v));
}

Tensor zeros_like(const Tensor& t) { return zeros(t.shape()); }
Tensor ones_like(const Tensor& t) { return ones(t.shape()); }

Tensor randn(const std::vector<int>& shape, Rng& rng, double std_dev) {
  if (!(std_dev > 0.0)) throw std::invalid_argument("randn: std must be > 0");
  std::vector<double> v(checked_numel(shape));
  for (double& x : v) x = rng.normal() * std_dev;
  return make_tensor(shape, std::move(v));
}

// ---------------------------------------------------------------------------
// Elementwise ops

Tensor add(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "add");
  Tensor out = zeros_like(a);
  const double* pa = a.data();
  const double* pb = b.data();
  double* po = out.data();
  const std::size_t n = a.numel();
  for (std::size_t i = 0; i < n; ++i) po[i] = pa[i] + pb[i];
  auto state = detail::tape_of({&a, &b});
  if (state) {
    detail::record(state, "add", {&a, &b}, out, [](BackwardCtx& ctx) {
      ctx.add_grad(0, ctx.grad_output());
      ctx.add_grad(1, ctx.grad_output());
    });
  }
  return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "sub");
  Tensor out = zeros_like(a);
  const double* pa = a.data();
  const double* pb = b.data();
  double* po = out.data();
  const std::size_t n = a.numel();
  for (std::size_t i = 0; i < n; ++i) po[i] = pa[i] - pb[i];
  auto state = detail::tape_of({&a, &b});
  if (state) {
    detail::record(state, "sub", {&a, &b}, out, [](BackwardCtx& ctx) {
      ctx.add_grad(0, ctx.grad_output());
      ctx.add_grad(1, scale(ctx.grad_output(), -1.0));
    });
  }
  return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "mul");
  Tensor out = zeros_like(a);
  const double* pa = a.data();
  const double* pb = b.data();
  double* po = out.data();
  const std::size_t n = a.numel();
  for (std::size_t i = 0; i < n; ++i) po[i] = pa[i] * pb[i];
  auto state = detail::tape_of({&a, &b});
  if (state) {
    Tensor as = a.detached();
    Tensor bs = b.detached();
    detail::record(state, "mul", {&a, &b}, out, [as, bs](BackwardCtx& ctx) {
      if (ctx.needs_grad(0)) ctx.add_grad(0, mul(ctx.grad_output(), bs));
      if (ctx.needs_grad(1)) ctx.add_grad(1, mul(ctx.grad_output(), as));
    });
  }
  return out;
}

Tensor scale(const Tensor& a, double s) {
  check_defined(a);
  Tensor out = zeros_like(a);
  const double* pa = a.data();
  double* po = out.data();
  const std::size_t n = a.numel();
  for (std::size_t i = 0; i < n; ++i) po[i] = pa[i] * s;
  auto state = detail::tape_of({&a});
  if (state) {
    detail::record(state, "scale", {&a}, out, [s](BackwardCtx& ctx) {
      ctx.add_grad(0, scale(ctx.grad_output(), s));
    });
  }
  return out;
}

Tensor abs(const Tensor& a) {
  check_defined(a);
  Tensor out = zeros_like(a);
  const double* pa = a.data();
  double* po = out.data();
  const std::size_t n = a.numel();
  for (std::size_t i = 0; i < n; ++i) po[i] = std::fabs(pa[i]);
  auto state = detail::tape_of({&a});
  if (state) {
    Tensor as = a.detached();
    detail::record(state, "abs", {&a}, out, [as](BackwardCtx& ctx) {
      // Subgradient 0 at exact ties.
      Tensor g = ctx.grad_output();
      Tensor gi = zeros_like(g);
      const double* px = as.data();
      const double* pg = g.data();
      double* pgi = gi.data();
      const std::size_t m = g.numel();
      for (std::size_t i = 0; i < m; ++i) {
        pgi[i] = px[i] > 0.0 ? pg[i] : (px[i] < 0.0 ? -pg[i] : 0.0);
      }
      ctx.add_grad(0, gi);
    });
  }
  return out;
}

Tensor sum(const Tensor& a) {
  check_defined(a);
  const double* pa = a.data();
  double acc = 0.0;
  const std::size_t n = a.numel();
  for (std::size_t i = 0; i < n; ++i) acc += pa[i];
  Tensor out = Tensor::from_data({1}, {acc});
  auto state = detail::tape_of({&a});
  if (state) {
    std::vector<int> in_shape = a.shape();
    detail::record(state, "sum", {&a}, out, [in_shape](BackwardCtx& ctx) {
      ctx.add_grad(0, full(in_shape, ctx.grad_output().value()));
    });
  }
  return out;
}

Tensor mean(const Tensor& a) {
  check_defined(a);
  const double inv_n = 1.0 / static_cast<double>(a.numel());
  const double* pa = a.data();
  double acc = 0.0;
  const std::size_t n = a.numel();
  for (std::size_t i = 0; i < n; ++i) acc += pa[i];
  Tensor out = Tensor::from_data({1}, {acc * inv_n});
  auto state = detail::tape_of({&a});
  if (state) {
    std::vector<int> in_shape = a.shape();
    detail::record(state, "mean", {&a}, out, [in_shape, inv_n](BackwardCtx& ctx) {
      ctx.add_grad(0, full(in_shape, ctx.grad_output().value() * inv_n));
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Structure ops

Tensor concat_channels(const std::vector<Tensor>& ts) {
  if (ts.empty()) throw std::invalid_argument("concat_channels: empty tensor list");
  for (const Tensor& t : ts) {
    check_defined(t);
    if (t.ndim() != 4) {
      throw std::invalid_argument("concat_channels: expected 4-D tensors, got " +
                                  shape_str(t.shape()));
    }
  }
  const auto& s0 = ts[0].shape();
  int c_total = 0;
  for (const Tensor& t : ts) {
    const auto& s = t.shape();
    if (s[0] != s0[0] || s[2] != s0[2] || s[3] != s0[3]) {
      throw std::invalid_argument("concat_channels: batch/spatial mismatch " + shape_str(s0) +
                                  " vs " + shape_str(s));
    }
    c_total += s[1];
  }
  const int B = s0[0], H = s0[2], W = s0[3];
  const std::size_t hw = static_cast<std::size_t>(H) * W;
  Tensor out = zeros({B, c_total, H, W});
  double* po = out.data();
  for (int b = 0; b < B; ++b) {
    std::size_t c_off = 0;
    for (const Tensor& t : ts) {
      const int c = t.shape()[1];
      const double* pt = t.data() + static_cast<std::size_t>(b) * c * hw;
      double* dst = po + (static_cast<std::size_t>(b) * c_total + c_off) * hw;
      std::copy(pt, pt + static_cast<std::size_t>(c) * hw, dst);
      c_off += static_cast<std::size_t>(c);
    }
  }

  std::vector<const Tensor*> ptrs;
  ptrs.reserve(ts.size());
  for (const Tensor& t : ts) ptrs.push_back(&t);
  auto state = detail::tape_of({});
  for (const Tensor& t : ts) {
    auto s = detail::tape_of({&t});
    if (s) {
      if (state && state != s) {
        throw std::invalid_argument("concat_channels: tensors belong to different tapes");
      }
      state = s;
    }
  }
  if (state) {
    std::vector<int> channels;
    for (const Tensor& t : ts) channels.push_back(t.shape()[1]);
    // record() wants an initializer_list; route through a generic overload.
    detail::record_many(state, "concat_channels", ptrs, out, [channels](BackwardCtx& ctx) {
      Tensor g = ctx.grad_output();
      int c0 = 0;
      for (std::size_t i = 0; i < channels.size(); ++i) {
        if (ctx.needs_grad(i)) ctx.add_grad(i, slice_channels(g, c0, c0 + channels[i]));
        c0 += channels[i];
      }
    });
  }
  return out;
}

Tensor slice_channels(const Tensor& t, int c0, int c1) {
  check_defined(t);
  if (t.ndim() != 4) {
    throw std::invalid_argument("slice_channels: expected 4-D tensor, got " + shape_str(t.shape()));
  }
  const auto& s = t.shape();
  if (c0 < 0 || c1 <= c0 || c1 > s[1]) {
    throw std::invalid_argument("slice_channels: bad range [" + std::to_string(c0) + "," +
                                std::to_string(c1) + ") for C=" + std::to_string(s[1]));
  }
  const int B = s[0], C = s[1], H = s[2], W = s[3];
  const int c_out = c1 - c0;
  const std::size_t hw = static_cast<std::size_t>(H) * W;
  Tensor out = zeros({B, c_out, H, W});
  double* po = out.data();
  const double* pt = t.data();
  for (int b = 0; b < B; ++b) {
    const double* src = pt + (static_cast<std::size_t>(b) * C + c0) * hw;
    std::copy(src, src + static_cast<std::size_t>(c_out) * hw,
              po + static_cast<std::size_t>(b) * c_out * hw);
  }
  auto state = detail::tape_of({&t});
  if (state) {
    std::vector<int> in_shape = s;
    detail::record(state, "slice_channels", {&t}, out, [in_shape, c0, c_out](BackwardCtx& ctx) {
      Tensor g = ctx.grad_output();
      Tensor gi = zeros(in_shape);
      const int B = in_shape[0], C = in_shape[1];
      const std::size_t hw = static_cast<std::size_t>(in_shape[2]) * in_shape[3];
      for (int b = 0; b < B; ++b) {
        const double* src = g.data() + static_cast<std::size_t>(b) * c_out * hw;
        double* dst = gi.data() + (static_cast<std::size_t>(b) * C + c0) * hw;
        std::copy(src, src + static_cast<std::size_t>(c_out) * hw, dst);
      }
      ctx.add_grad(0, gi);
    });
  }
  return out;
}

}  // namespace lkf
