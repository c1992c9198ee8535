#pragma once

#include <functional>
#include <initializer_list>
#include <memory>
#include <string>
#include <vector>

#include "lkf/tensor.hpp"

// Reverse-mode automatic differentiation. A Tape watches leaf tensors; any
// op touching a watched tensor appends one entry (inputs, output, backward
// rule). Entries are appended in execution order, which is a topological
// order by construction, so backward() is a single reverse sweep. A tape can
// run backward exactly once; recording onto or re-running a consumed tape
// throws instead of silently producing stale gradients.

namespace lkf {

namespace detail {
struct TapeState;

struct Node {
  std::shared_ptr<TapeState> state;
  std::size_t id = 0;
};
}  // namespace detail

// Handed to backward rules: the gradient flowing into the op's output plus
// accumulation into the op's inputs. Rules must capture saved tensors
// detached(), so that replaying them never records new entries.
class BackwardCtx {
 public:
  Tensor grad_output() const;
  bool needs_grad(std::size_t input_index) const;
  void add_grad(std::size_t input_index, const Tensor& g);

 private:
  friend class Tape;
  BackwardCtx(detail::TapeState* state, std::size_t entry_index)
      : state_(state), entry_(entry_index) {}
  detail::TapeState* state_;
  std::size_t entry_;
};

class Tape {
 public:
  Tape();
  ~Tape();  // detaches every tensor that was recorded on this tape
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;
  Tape(Tape&&) = default;
  Tape& operator=(Tape&&) = default;

  // Re-points t at a watched alias of the same buffer. Ops that consume t
  // afterwards record onto this tape.
  void watch(Tensor& t);

  // loss must be a one-element tensor recorded on this tape. Single use.
  void backward(const Tensor& loss);

  // Gradient of the last backward() w.r.t. t (zeros if the loss does not
  // depend on it). t must carry a node of this tape.
  Tensor grad(const Tensor& t) const;

  std::size_t entry_count() const;

 private:
  std::shared_ptr<detail::TapeState> state_;
};

namespace detail {
// Common tape of the inputs (throws if they belong to different live tapes);
// null when no input is being recorded.
std::shared_ptr<TapeState> tape_of(std::initializer_list<const Tensor*> inputs);

// Attaches a fresh node to `out` and appends an entry. Inputs without a node
// take no gradient (add_grad to them is a no-op).
void record(const std::shared_ptr<TapeState>& state, const char* op,
            std::initializer_list<const Tensor*> inputs, Tensor& out,
            std::function<void(BackwardCtx&)> backward);
void record_many(const std::shared_ptr<TapeState>& state, const char* op,
                 const std::vector<const Tensor*>& inputs, Tensor& out,
                 std::function<void(BackwardCtx&)> backward);
}  // namespace detail

// Central-difference gradient checker, the universal correctness oracle for
// every differentiable layer in this repo.
struct GradReport {
  struct Item {
    std::string name;
    double max_rel_err = 0.0;
    std::size_t elements = 0;
  };
  std::vector<Item> items;
  double max_rel_err = 0.0;
  double tolerance = 1e-4;
  bool pass = false;

  std::string format() const;  // printable table
};

// f must be a pure scalar-valued function of the given tensors. Relative
// error per element is |a - n| / max(|a|, |n|, 1e-8) with analytic a from
// one backward pass and numeric n from central differences with step h.
GradReport gradcheck(const std::function<Tensor(const std::vector<Tensor>&)>& f,
                     const std::vector<std::pair<std::string, Tensor>>& inputs,
                     double h = 1e-5, double tolerance = 1e-4);

}  // namespace lkf
