#include "lkf/autograd.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <sstream>
#include <stdexcept>

namespace lkf {

namespace detail {

struct TapeState {
  struct Entry {
    const char* op;
    std::vector<std::size_t> inputs;  // kNoGrad for untracked inputs
    std::size_t output;
    std::function<void(BackwardCtx&)> backward;
  };
  static constexpr std::size_t kNoGrad = static_cast<std::size_t>(-1);

  std::vector<Entry> entries;
  std::vector<std::vector<int>> shapes;                   // per node id
  std::vector<std::shared_ptr<std::vector<double>>> grads;  // per node id, null until touched
  std::vector<std::weak_ptr<TensorImpl>> hooked;
  bool consumed = false;

  std::size_t new_node_id(const std::vector<int>& shape) {
    shapes.push_back(shape);
    grads.emplace_back();
    return shapes.size() - 1;
  }

  void accumulate(std::size_t id, const Tensor& g) {
    if (g.shape() != shapes[id]) {
      throw std::invalid_argument("backward: gradient shape " + shape_str(g.shape()) +
                                  " does not match node shape " + shape_str(shapes[id]));
    }
    auto& slot = grads[id];
    if (!slot) slot = std::make_shared<std::vector<double>>(g.numel(), 0.0);
    const double* pg = g.data();
    double* ps = slot->data();
    const std::size_t n = g.numel();
    for (std::size_t i = 0; i < n; ++i) ps[i] += pg[i];
  }

  Tensor grad_tensor(std::size_t id) const {
    auto impl = std::make_shared<TensorImpl>();
    impl->shape = shapes[id];
    impl->data = grads[id];
    return Tensor(std::move(impl));
  }
};

namespace {

std::shared_ptr<TapeState> common_state(const Tensor* const* inputs, std::size_t n) {
  std::shared_ptr<TapeState> state;
  for (std::size_t i = 0; i < n; ++i) {
    const auto& node = inputs[i]->node();
    if (!node) continue;
    if (state && state != node->state) {
      throw std::invalid_argument("tensors belong to different tapes");
    }
    state = node->state;
  }
  if (state && state->consumed) {
    throw std::runtime_error("tape already consumed by backward; re-record the computation");
  }
  return state;
}

void do_record(const std::shared_ptr<TapeState>& state, const char* op,
               const Tensor* const* inputs, std::size_t n_inputs, Tensor& out,
               std::function<void(BackwardCtx&)> backward) {
  TapeState::Entry e;
  e.op = op;
  e.inputs.reserve(n_inputs);
  for (std::size_t i = 0; i < n_inputs; ++i) {
    const auto& node = inputs[i]->node();
    e.inputs.push_back(node && node->state == state ? node->id : TapeState::kNoGrad);
  }
  e.output = state->new_node_id(out.shape());
  e.backward = std::move(backward);
  state->entries.push_back(std::move(e));

  auto node = std::make_shared<Node>();
  node->state = state;
  node->id = state->entries.back().output;
  out.impl()->node = std::move(node);
  state->hooked.push_back(out.impl_ptr());
}

}  // namespace

std::shared_ptr<TapeState> tape_of(std::initializer_list<const Tensor*> inputs) {
  return common_state(inputs.begin(), inputs.size());
}

void record(const std::shared_ptr<TapeState>& state, const char* op,
            std::initializer_list<const Tensor*> inputs, Tensor& out,
            std::function<void(BackwardCtx&)> backward) {
  do_record(state, op, inputs.begin(), inputs.size(), out, std::move(backward));
}

void record_many(const std::shared_ptr<TapeState>& state, const char* op,
                 const std::vector<const Tensor*>& inputs, Tensor& out,
                 std::function<void(BackwardCtx&)> backward) {
  do_record(state, op, inputs.data(), inputs.size(), out, std::move(backward));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// BackwardCtx

Tensor BackwardCtx::grad_output() const {
  const auto& e = state_->entries[entry_];
  return state_->grad_tensor(e.output);
}

bool BackwardCtx::needs_grad(std::size_t input_index) const {
  const auto& e = state_->entries[entry_];
  return e.inputs.at(input_index) != detail::TapeState::kNoGrad;
}

void BackwardCtx::add_grad(std::size_t input_index, const Tensor& g) {
  const auto& e = state_->entries[entry_];
  const std::size_t id = e.inputs.at(input_index);
  if (id == detail::TapeState::kNoGrad) return;
  state_->accumulate(id, g);
}

// ---------------------------------------------------------------------------
// Tape

Tape::Tape() : state_(std::make_shared<detail::TapeState>()) {}

Tape::~Tape() {
  if (!state_) return;
  for (auto& w : state_->hooked) {
    if (auto impl = w.lock()) {
      if (impl->node && impl->node->state == state_) impl->node.reset();
    }
  }
}

void Tape::watch(Tensor& t) {
  if (!t.defined()) throw std::invalid_argument("watch: undefined tensor");
  if (state_->consumed) {
    throw std::runtime_error("tape already consumed by backward; re-record the computation");
  }
  auto impl = std::make_shared<detail::TensorImpl>();
  impl->shape = t.shape();
  impl->data = t.impl_ptr()->data;  // watched alias shares the buffer
  auto node = std::make_shared<detail::Node>();
  node->state = state_;
  node->id = state_->new_node_id(impl->shape);
  impl->node = std::move(node);
  state_->hooked.push_back(impl);
  t = Tensor(std::move(impl));
}

void Tape::backward(const Tensor& loss) {
  if (!loss.defined() || !loss.node() || loss.node()->state != state_) {
    throw std::invalid_argument("backward: loss is not recorded on this tape");
  }
  if (loss.numel() != 1) {
    throw std::invalid_argument("backward: loss must be scalar, got shape " +
                                shape_str(loss.shape()));
  }
  if (state_->consumed) {
    throw std::runtime_error("tape already consumed by backward; re-record the computation");
  }
  state_->consumed = true;
  state_->accumulate(loss.node()->id, ones({1}));
  for (std::size_t i = state_->entries.size(); i-- > 0;) {
    const auto& e = state_->entries[i];
    if (!state_->grads[e.output]) continue;  // loss does not depend on this entry
    BackwardCtx ctx(state_.get(), i);
    e.backward(ctx);
  }
}

Tensor Tape::grad(const Tensor& t) const {
  if (!t.defined() || !t.node() || t.node()->state != state_) {
    throw std::invalid_argument("grad: tensor is not recorded on this tape");
  }
  if (!state_->consumed) {
    throw std::runtime_error("grad: backward has not run on this tape");
  }
  const std::size_t id = t.node()->id;
  if (!state_->grads[id]) return zeros(state_->shapes[id]);
  return state_->grad_tensor(id);
}

std::size_t Tape::entry_count() const { return state_->entries.size(); }

// ---------------------------------------------------------------------------
// Gradient checker

std::string GradReport::format() const {
  std::ostringstream os;
  os << std::left << std::setw(28) << "input" << std::right << std::setw(10) << "elements"
     << std::setw(16) << "max rel err" << '\n';
  for (const auto& item : items) {
    os << std::left << std::setw(28) << item.name << std::right << std::setw(10) << item.elements
       << std::setw(16) << std::scientific << std::setprecision(3) << item.max_rel_err << '\n';
  }
  os << "overall max rel err " << std::scientific << std::setprecision(3) << max_rel_err
     << " tolerance " << tolerance << " -> " << (pass ? "PASS" : "FAIL") << '\n';
  return os.str();
}

GradReport gradcheck(const std::function<Tensor(const std::vector<Tensor>&)>& f,
                     const std::vector<std::pair<std::string, Tensor>>& inputs,
                     double h, double tolerance) {
  if (inputs.empty()) throw std::invalid_argument("gradcheck: no inputs");
  if (!(h > 0.0)) throw std::invalid_argument("gradcheck: step must be > 0");

  // Analytic gradients from one recorded forward + backward.
  Tape tape;
  std::vector<Tensor> vars;
  vars.reserve(inputs.size());
  for (const auto& [name, t] : inputs) {
    Tensor v = t.detached();
    tape.watch(v);
    vars.push_back(v);
  }
  Tensor loss = f(vars);
  if (loss.numel() != 1) {
    throw std::invalid_argument("gradcheck: f must be scalar-valued");
  }
  if (!std::isfinite(loss.value())) {
    throw std::runtime_error("gradcheck: f produced a non-finite value");
  }
  tape.backward(loss);
  std::vector<Tensor> analytic;
  analytic.reserve(vars.size());
  for (const Tensor& v : vars) analytic.push_back(tape.grad(v));

  // Central differences, evaluated without recording.
  std::vector<Tensor> probe;
  probe.reserve(inputs.size());
  for (const auto& [name, t] : inputs) probe.push_back(t.clone());

  GradReport report;
  report.tolerance = tolerance;
  constexpr double kDenomFloor = 1e-8;
  for (std::size_t i = 0; i < probe.size(); ++i) {
    GradReport::Item item;
    item.name = inputs[i].first;
    item.elements = probe[i].numel();
    double* px = probe[i].data();
    const double* pa = analytic[i].data();
    for (std::size_t j = 0; j < item.elements; ++j) {
      const double x0 = px[j];
      px[j] = x0 + h;
      const double fp = f(probe).value();
      px[j] = x0 - h;
      const double fm = f(probe).value();
      px[j] = x0;
      if (!std::isfinite(fp) || !std::isfinite(fm)) {
        throw std::runtime_error("gradcheck: f produced a non-finite value under perturbation");
      }
      const double numeric = (fp - fm) / (2.0 * h);
      const double denom = std::max({std::fabs(pa[j]), std::fabs(numeric), kDenomFloor});
      item.max_rel_err = std::max(item.max_rel_err, std::fabs(pa[j] - numeric) / denom);
    }
    report.max_rel_err = std::max(report.max_rel_err, item.max_rel_err);
    report.items.push_back(std::move(item));
  }
  report.pass = report.max_rel_err < tolerance;
  return report;
}

}  // namespace lkf
