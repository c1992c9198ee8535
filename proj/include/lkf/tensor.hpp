#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

// Dense N-dimensional tensor of 64-bit floats, row-major, with value
// semantics: handles share the underlying buffer, operations return fresh
// tensors. There is no broadcasting; every shape mismatch is an error.
// Differentiable ops record onto a Tape (see autograd.hpp) whenever one of
// their inputs is watched, and are plain computations otherwise.

namespace lkf {

namespace detail {
struct Node;  // autograd bookkeeping, defined in autograd.hpp

struct TensorImpl {
  std::vector<int> shape;
  std::shared_ptr<std::vector<double>> data;
  std::shared_ptr<Node> node;  // null unless recorded on a live tape
};
}  // namespace detail

class Tensor {
 public:
  Tensor() = default;  // undefined tensor
  explicit Tensor(std::shared_ptr<detail::TensorImpl> impl) : impl_(std::move(impl)) {}

  static Tensor from_data(std::vector<int> shape, std::vector<double> data);

  bool defined() const { return impl_ != nullptr; }
  const std::vector<int>& shape() const;
  int ndim() const { return static_cast<int>(shape().size()); }
  int dim(int i) const { return shape().at(static_cast<std::size_t>(i)); }
  std::size_t numel() const;

  const double* data() const;
  // Mutable access is reserved for construction, test setup and optimizer
  // updates; tensors are otherwise treated as immutable values.
  double* data();

  double value() const;  // requires numel() == 1

  double at4(int b, int c, int y, int x) const;
  double& at4(int b, int c, int y, int x);

  Tensor clone() const;     // deep copy, no grad node
  Tensor detached() const;  // shares the buffer, no grad node
  Tensor reshape(const std::vector<int>& new_shape) const;

  bool same_shape(const Tensor& other) const;
  bool all_finite() const;

  const std::shared_ptr<detail::Node>& node() const;
  detail::TensorImpl* impl() { return impl_.get(); }
  const std::shared_ptr<detail::TensorImpl>& impl_ptr() const { return impl_; }

 private:
  std::shared_ptr<detail::TensorImpl> impl_;
};

// Deterministic counter-based generator: the stream is a pure function of
// (seed, draw index), so any run with the same seed is bit-identical.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : seed_(seed) {}

  std::uint64_t next_u64();
  double uniform();  // [0, 1)
  double normal();   // N(0, 1)
  int uniform_int(int n);  // [0, n)

  // Independent stream derived from the same seed; insensitive to how much
  // of this generator has already been consumed.
  Rng fork(std::uint64_t stream) const;

  std::uint64_t seed() const { return seed_; }

 private:
  std::uint64_t seed_ = 0;
  std::uint64_t counter_ = 0;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

Tensor zeros(const std::vector<int>& shape);
Tensor ones(const std::vector<int>& shape);
Tensor full(const std::vector<int>& shape, double v);
Tensor zeros_like(const Tensor& t);
Tensor ones_like(const Tensor& t);
Tensor randn(const std::vector<int>& shape, Rng& rng, double std_dev);

// Elementwise; shapes must match exactly.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
Tensor abs(const Tensor& a);

// Full reductions to a one-element tensor.
Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);

// Channel concatenation of (B, C, H, W) tensors; batch and spatial dims must
// agree, input order is preserved.
Tensor concat_channels(const std::vector<Tensor>& ts);
// Channels [c0, c1) of a (B, C, H, W) tensor.
Tensor slice_channels(const Tensor& t, int c0, int c1);

std::string shape_str(const std::vector<int>& shape);

}  // namespace lkf
