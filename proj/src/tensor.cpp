#include "mmtfd/tensor.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <sstream>
#include <unordered_map>
#include <utility>

#include "mmtfd/errors.hpp"

namespace mmtfd {

namespace detail {

struct Access {
  static const std::shared_ptr<Node>& node(const Tensor& t) { return t.node_; }
  static Tensor wrap(std::shared_ptr<Node> n) { return Tensor(std::move(n)); }
};

}  // namespace detail

namespace {

using detail::Access;
using detail::Node;

thread_local bool g_grad_enabled = true;
thread_local KinkRecorder* g_kink_recorder = nullptr;

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

void require_defined(const Tensor& t, const char* op) {
  if (!t.defined()) throw ContractError(std::string(op) + ": undefined tensor");
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  require_defined(a, op);
  require_defined(b, op);
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                         " vs " + shape_str(b.shape()));
  }
}

void require_rank2(const Tensor& a, const char* op) {
  require_defined(a, op);
  if (a.rank() != 2) {
    throw DimensionError(std::string(op) + ": expected rank-2 tensor, got " +
                         shape_str(a.shape()));
  }
}

template <typename F>
std::vector<double> map_values(const Tensor& a, F f) {
  auto src = a.data();
  std::vector<double> out(src.size());
  std::transform(src.begin(), src.end(), out.begin(), f);
  return out;
}

template <typename F>
std::vector<double> zip_values(const Tensor& a, const Tensor& b, F f) {
  auto x = a.data();
  auto y = b.data();
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = f(x[i], y[i]);
  return out;
}

// Gradient flowing into an input of a broadcast-style op must come back in
// that input's own shape (a [n] bias gets a [n] gradient, not 1 x n).
Tensor match_shape(const Tensor& g, const Shape& shape) {
  if (g.shape() == shape) return g;
  return reshape(g, shape);
}

}  // namespace

// ---- shapes ------------------------------------------------------------------

std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << ']';
  return os.str();
}

// ---- Tensor ------------------------------------------------------------------

Tensor Tensor::from(Shape shape, std::vector<double> values, bool requires_grad) {
  if (shape.empty()) throw DimensionError("tensor shape must have rank >= 1");
  for (auto d : shape) {
    if (d == 0) throw DimensionError("tensor dimensions must be positive: " + shape_str(shape));
  }
  if (shape_numel(shape) != values.size()) {
    throw DimensionError("shape " + shape_str(shape) + " does not match " +
                         std::to_string(values.size()) + " values");
  }
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->value = std::move(values);
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  auto n = shape_numel(shape);
  return from(std::move(shape), std::vector<double>(n, 0.0), requires_grad);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  auto n = shape_numel(shape);
  return from(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return from({1}, {value}, requires_grad);
}

Tensor Tensor::matrix(std::initializer_list<std::initializer_list<double>> rows,
                      bool requires_grad) {
  std::vector<double> values;
  std::size_t cols = rows.size() ? rows.begin()->size() : 0;
  for (const auto& r : rows) {
    if (r.size() != cols) throw DimensionError("ragged matrix literal");
    values.insert(values.end(), r.begin(), r.end());
  }
  return from({rows.size(), cols}, std::move(values), requires_grad);
}

const Shape& Tensor::shape() const {
  require_defined(*this, "shape");
  return node_->shape;
}

std::size_t Tensor::numel() const { return node_->value.size(); }

std::size_t Tensor::rows() const { return rank() == 1 ? 1 : shape()[0]; }

std::size_t Tensor::cols() const { return rank() == 1 ? shape()[0] : shape()[1]; }

std::span<const double> Tensor::data() const {
  require_defined(*this, "data");
  return node_->value;
}

std::span<double> Tensor::mutable_data() {
  require_defined(*this, "mutable_data");
  return node_->value;
}

std::vector<double> Tensor::to_vector() const { return node_->value; }

double Tensor::item() const {
  if (numel() != 1) throw ContractError("item() on tensor of shape " + shape_str(shape()));
  return node_->value[0];
}

double Tensor::at(std::size_t i) const { return node_->value.at(i); }

double Tensor::at(std::size_t r, std::size_t c) const {
  return node_->value.at(r * cols() + c);
}

bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }

void Tensor::set_requires_grad(bool flag) {
  if (!is_leaf()) throw ContractError("set_requires_grad on a non-leaf tensor");
  node_->requires_grad = flag;
}

bool Tensor::is_leaf() const { return node_ && !node_->backward; }

Tensor Tensor::grad() const {
  if (!node_ || !node_->grad) return {};
  return Tensor(node_->grad);
}

bool Tensor::has_grad() const { return node_ && node_->grad; }

void Tensor::zero_grad() {
  if (node_) node_->grad.reset();
}

void Tensor::set_grad(const Tensor& g) {
  require_same_shape(*this, g, "set_grad");
  node_->grad = g.node_;
}

Tensor Tensor::detach() const { return from(shape(), node_->value, false); }

Tensor Tensor::clone(bool requires_grad) const {
  return from(shape(), node_->value, requires_grad);
}

Tensor Tensor::make_result(Shape shape, std::vector<double> values, std::vector<Tensor> inputs,
                           detail::BackwardFn backward) {
  Tensor out = from(std::move(shape), std::move(values), false);
  if (!g_grad_enabled) return out;
  bool any = std::any_of(inputs.begin(), inputs.end(),
                         [](const Tensor& t) { return t.requires_grad(); });
  if (!any) return out;
  out.node_->requires_grad = true;
  out.node_->inputs = std::move(inputs);
  out.node_->backward = std::move(backward);
  return out;
}

// ---- grad mode -----------------------------------------------------------------

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

KinkRecorder::KinkRecorder() : previous_(g_kink_recorder) { g_kink_recorder = this; }
KinkRecorder::~KinkRecorder() { g_kink_recorder = previous_; }

bool grad_enabled() { return g_grad_enabled; }

// ---- tape & backward -----------------------------------------------------------

Tape Tape::record_from(const Tensor& root) {
  require_defined(root, "Tape::record_from");
  Tape tape;
  std::unordered_map<const Node*, bool> visited;
  // Iterative post-order DFS; a node is emitted after all of its inputs.
  std::vector<std::pair<Tensor, std::size_t>> stack;
  if (!root.requires_grad()) return tape;
  stack.emplace_back(root, 0);
  visited[root.id()] = true;
  while (!stack.empty()) {
    auto& [t, next] = stack.back();
    const auto& inputs = Access::node(t)->inputs;
    if (next < inputs.size()) {
      const Tensor& in = inputs[next++];
      if (in.requires_grad() && !visited[in.id()]) {
        visited[in.id()] = true;
        stack.emplace_back(in, 0);
      }
      continue;
    }
    tape.nodes_.push_back(t);
    stack.pop_back();
  }
  return tape;
}

namespace {

// Runs the reverse sweep and returns the gradient for every node on the tape.
std::unordered_map<const Node*, Tensor> reverse_sweep(const Tensor& loss, const Tape& tape,
                                                      bool create_graph) {
  if (loss.numel() != 1) {
    throw ContractError("backward: loss must be a scalar, got " + shape_str(loss.shape()));
  }
  if (!loss.requires_grad()) {
    throw ContractError("backward: loss is not on the tape (no input requires grad)");
  }
  std::unordered_map<const Node*, Tensor> grads;
  grads.reserve(tape.size() * 2);
  grads[loss.id()] = Tensor::full(loss.shape(), 1.0);

  std::optional<NoGradGuard> guard;
  if (!create_graph) guard.emplace();

  const auto& nodes = tape.nodes();
  for (auto it = nodes.rbegin(); it != nodes.rend(); ++it) {
    const Tensor& t = *it;
    auto found = grads.find(t.id());
    if (found == grads.end()) continue;
    const auto& node = Access::node(t);
    if (!node->backward) continue;
    Tensor g = found->second;
    std::vector<Tensor> input_grads = node->backward(t, g);
    for (std::size_t i = 0; i < node->inputs.size(); ++i) {
      const Tensor& in = node->inputs[i];
      if (!in.requires_grad() || !input_grads[i].defined()) continue;
      auto [slot, inserted] = grads.try_emplace(in.id(), input_grads[i]);
      if (!inserted) slot->second = add(slot->second, input_grads[i]);
    }
  }
  return grads;
}

}  // namespace

std::vector<Tensor> gradients(const Tensor& loss, std::span<const Tensor> wrt, bool create_graph) {
  require_defined(loss, "gradients");
  Tape tape = Tape::record_from(loss);
  auto grads = reverse_sweep(loss, tape, create_graph);
  std::vector<Tensor> out;
  out.reserve(wrt.size());
  for (const auto& w : wrt) {
    auto it = grads.find(w.id());
    out.push_back(it == grads.end() ? Tensor::zeros(w.shape()) : it->second);
  }
  return out;
}

void backward(const Tensor& loss, bool create_graph) {
  require_defined(loss, "backward");
  Tape tape = Tape::record_from(loss);
  auto grads = reverse_sweep(loss, tape, create_graph);
  std::optional<NoGradGuard> guard;
  if (!create_graph) guard.emplace();
  for (const auto& t : tape.nodes()) {
    if (!t.is_leaf()) continue;
    auto it = grads.find(t.id());
    if (it == grads.end()) continue;
    auto& node = Access::node(t);
    if (node->grad) {
      node->grad = Access::node(add(Access::wrap(node->grad), it->second));
    } else {
      node->grad = Access::node(it->second);
    }
  }
}

// ---- elementwise ---------------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  return Tensor::make_result(a.shape(), zip_values(a, b, std::plus<>()), {a, b},
                             [](const Tensor&, const Tensor& g) -> std::vector<Tensor> {
                               return {g, g};
                             });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  return Tensor::make_result(a.shape(), zip_values(a, b, std::minus<>()), {a, b},
                             [](const Tensor&, const Tensor& g) -> std::vector<Tensor> {
                               return {g, neg(g)};
                             });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  return Tensor::make_result(a.shape(), zip_values(a, b, std::multiplies<>()), {a, b},
                             [a, b](const Tensor&, const Tensor& g) -> std::vector<Tensor> {
                               return {a.requires_grad() ? mul(g, b) : Tensor(),
                                       b.requires_grad() ? mul(g, a) : Tensor()};
                             });
}

Tensor div(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "div");
  return Tensor::make_result(
      a.shape(), zip_values(a, b, std::divides<>()), {a, b},
      [a, b](const Tensor& out, const Tensor& g) -> std::vector<Tensor> {
        Tensor ga = a.requires_grad() ? div(g, b) : Tensor();
        Tensor gb = b.requires_grad() ? neg(div(mul(g, out), b)) : Tensor();
        return {ga, gb};
      });
}

Tensor scale(const Tensor& a, double c) {
  require_defined(a, "scale");
  return Tensor::make_result(a.shape(), map_values(a, [c](double v) { return v * c; }), {a},
                             [c](const Tensor&, const Tensor& g) -> std::vector<Tensor> {
                               return {scale(g, c)};
                             });
}

Tensor add_scalar(const Tensor& a, double c) {
  require_defined(a, "add_scalar");
  return Tensor::make_result(a.shape(), map_values(a, [c](double v) { return v + c; }), {a},
                             [](const Tensor&, const Tensor& g) -> std::vector<Tensor> {
                               return {g};
                             });
}

Tensor neg(const Tensor& a) { return scale(a, -1.0); }

Tensor exp(const Tensor& a) {
  require_defined(a, "exp");
  return Tensor::make_result(a.shape(), map_values(a, [](double v) { return std::exp(v); }),
                             {a}, [](const Tensor& out, const Tensor& g) -> std::vector<Tensor> {
                               return {mul(g, out)};
                             });
}

Tensor log(const Tensor& a) {
  require_defined(a, "log");
  return Tensor::make_result(a.shape(), map_values(a, [](double v) { return std::log(v); }),
                             {a}, [a](const Tensor&, const Tensor& g) -> std::vector<Tensor> {
                               return {div(g, a)};
                             });
}

Tensor sqrt(const Tensor& a) {
  require_defined(a, "sqrt");
  return Tensor::make_result(a.shape(), map_values(a, [](double v) { return std::sqrt(v); }),
                             {a}, [](const Tensor& out, const Tensor& g) -> std::vector<Tensor> {
                               return {div(g, scale(out, 2.0))};
                             });
}

Tensor relu(const Tensor& a) {
  require_defined(a, "relu");
  if (g_kink_recorder) {
    for (double v : a.data()) g_kink_recorder->pattern.push_back(v > 0.0);
  }
  return Tensor::make_result(
      a.shape(), map_values(a, [](double v) { return v > 0.0 ? v : 0.0; }), {a},
      [a](const Tensor&, const Tensor& g) -> std::vector<Tensor> {
        // The gate is piecewise constant, so it enters the gradient graph as a constant.
        Tensor gate = Tensor::from(a.shape(), map_values(a, [](double v) {
                                     return v > 0.0 ? 1.0 : 0.0;
                                   }));
        return {mul(g, gate)};
      });
}

// ---- linear algebra ------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank2(a, "matmul");
  require_rank2(b, "matmul");
  const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
  if (b.shape()[0] != k) {
    throw DimensionError("matmul: inner dimensions disagree " + shape_str(a.shape()) + " x " +
                         shape_str(b.shape()));
  }
  std::vector<double> out(m * n);
  Eigen::Map<const RowMat> ma(a.data().data(), m, k);
  Eigen::Map<const RowMat> mb(b.data().data(), k, n);
  Eigen::Map<RowMat> mo(out.data(), m, n);
  mo.noalias() = ma * mb;
  return Tensor::make_result({m, n}, std::move(out), {a, b},
                             [a, b](const Tensor&, const Tensor& g) -> std::vector<Tensor> {
                               Tensor ga = a.requires_grad() ? matmul(g, transpose(b)) : Tensor();
                               Tensor gb = b.requires_grad() ? matmul(transpose(a), g) : Tensor();
                               return {ga, gb};
                             });
}

Tensor transpose(const Tensor& a) {
  require_rank2(a, "transpose");
  const std::size_t m = a.shape()[0], n = a.shape()[1];
  auto src = a.data();
  std::vector<double> out(m * n);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = src[i * n + j];
  return Tensor::make_result({n, m}, std::move(out), {a},
                             [](const Tensor&, const Tensor& g) -> std::vector<Tensor> {
                               return {transpose(g)};
                             });
}

Tensor reshape(const Tensor& a, Shape shape) {
  require_defined(a, "reshape");
  if (shape_numel(shape) != a.numel()) {
    throw DimensionError("reshape: " + shape_str(a.shape()) + " -> " + shape_str(shape));
  }
  Shape original = a.shape();
  return Tensor::make_result(std::move(shape), a.to_vector(), {a},
                             [original](const Tensor&, const Tensor& g) -> std::vector<Tensor> {
                               return {reshape(g, original)};
                             });
}

// ---- reductions and broadcasts ---------------------------------------------------

Tensor sum(const Tensor& a) {
  require_defined(a, "sum");
  auto d = a.data();
  double s = std::accumulate(d.begin(), d.end(), 0.0);
  Shape original = a.shape();
  return Tensor::make_result({1}, {s}, {a},
                             [original](const Tensor&, const Tensor& g) -> std::vector<Tensor> {
                               return {expand(g, original)};
                             });
}

Tensor expand(const Tensor& s, Shape shape) {
  require_defined(s, "expand");
  if (s.numel() != 1) throw DimensionError("expand: source must hold one value");
  auto n = shape_numel(shape);
  return Tensor::make_result(std::move(shape), std::vector<double>(n, s.data()[0]), {s},
                             [](const Tensor&, const Tensor& g) -> std::vector<Tensor> {
                               return {sum(g)};
                             });
}

Tensor sum_rows(const Tensor& a) {
  require_rank2(a, "sum_rows");
  const std::size_t m = a.shape()[0], n = a.shape()[1];
  auto d = a.data();
  std::vector<double> out(m, 0.0);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i] += d[i * n + j];
  return Tensor::make_result({m, 1}, std::move(out), {a},
                             [n](const Tensor&, const Tensor& g) -> std::vector<Tensor> {
                               return {broadcast_cols(g, n)};
                             });
}

Tensor sum_cols(const Tensor& a) {
  require_rank2(a, "sum_cols");
  const std::size_t m = a.shape()[0], n = a.shape()[1];
  auto d = a.data();
  std::vector<double> out(n, 0.0);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j] += d[i * n + j];
  return Tensor::make_result({1, n}, std::move(out), {a},
                             [m](const Tensor&, const Tensor& g) -> std::vector<Tensor> {
                               return {broadcast_rows(g, m)};
                             });
}

Tensor broadcast_cols(const Tensor& a, std::size_t n) {
  require_rank2(a, "broadcast_cols");
  if (a.shape()[1] != 1) throw DimensionError("broadcast_cols: expected m x 1");
  const std::size_t m = a.shape()[0];
  auto d = a.data();
  std::vector<double> out(m * n);
  for (std::size_t i = 0; i < m; ++i) std::fill_n(out.begin() + i * n, n, d[i]);
  return Tensor::make_result({m, n}, std::move(out), {a},
                             [](const Tensor&, const Tensor& g) -> std::vector<Tensor> {
                               return {sum_rows(g)};
                             });
}

Tensor broadcast_rows(const Tensor& a, std::size_t m) {
  require_defined(a, "broadcast_rows");
  if (a.rows() != 1 || a.rank() > 2) {
    throw DimensionError("broadcast_rows: expected 1 x n or [n], got " + shape_str(a.shape()));
  }
  const std::size_t n = a.cols();
  auto d = a.data();
  std::vector<double> out(m * n);
  for (std::size_t i = 0; i < m; ++i) std::copy(d.begin(), d.end(), out.begin() + i * n);
  Shape original = a.shape();
  return Tensor::make_result({m, n}, std::move(out), {a},
                             [original](const Tensor&, const Tensor& g) -> std::vector<Tensor> {
                               return {match_shape(sum_cols(g), original)};
                             });
}

// ---- concatenation and slicing ---------------------------------------------------

Tensor concat_cols(std::span<const Tensor> parts) {
  if (parts.empty()) throw ContractError("concat_cols: no inputs");
  const std::size_t m = parts[0].rows();
  std::size_t total = 0;
  for (const auto& p : parts) {
    require_rank2(p, "concat_cols");
    if (p.shape()[0] != m) throw DimensionError("concat_cols: row counts differ");
    total += p.shape()[1];
  }
  std::vector<double> out(m * total);
  std::vector<std::size_t> offsets;
  std::size_t off = 0;
  for (const auto& p : parts) {
    const std::size_t w = p.shape()[1];
    auto d = p.data();
    for (std::size_t i = 0; i < m; ++i)
      std::copy_n(d.begin() + i * w, w, out.begin() + i * total + off);
    offsets.push_back(off);
    off += w;
  }
  std::vector<Tensor> inputs(parts.begin(), parts.end());
  std::vector<std::size_t> widths;
  for (const auto& p : parts) widths.push_back(p.shape()[1]);
  return Tensor::make_result(
      {m, total}, std::move(out), std::move(inputs),
      [offsets, widths](const Tensor&, const Tensor& g) -> std::vector<Tensor> {
        std::vector<Tensor> gs;
        for (std::size_t i = 0; i < offsets.size(); ++i)
          gs.push_back(slice_cols(g, offsets[i], widths[i]));
        return gs;
      });
}

Tensor concat_rows(std::span<const Tensor> parts) {
  if (parts.empty()) throw ContractError("concat_rows: no inputs");
  const std::size_t n = parts[0].cols();
  std::size_t total = 0;
  std::vector<double> out;
  std::vector<std::size_t> offsets, heights;
  for (const auto& p : parts) {
    require_defined(p, "concat_rows");
    if (p.rank() > 2 || p.cols() != n) throw DimensionError("concat_rows: column counts differ");
    offsets.push_back(total);
    heights.push_back(p.rows());
    total += p.rows();
    auto d = p.data();
    out.insert(out.end(), d.begin(), d.end());
  }
  std::vector<Tensor> inputs(parts.begin(), parts.end());
  std::vector<Shape> shapes;
  for (const auto& p : parts) shapes.push_back(p.shape());
  return Tensor::make_result(
      {total, n}, std::move(out), std::move(inputs),
      [offsets, heights, shapes](const Tensor&, const Tensor& g) -> std::vector<Tensor> {
        std::vector<Tensor> gs;
        for (std::size_t i = 0; i < offsets.size(); ++i)
          gs.push_back(match_shape(slice_rows(g, offsets[i], heights[i]), shapes[i]));
        return gs;
      });
}

Tensor slice_cols(const Tensor& a, std::size_t offset, std::size_t width) {
  require_rank2(a, "slice_cols");
  const std::size_t m = a.shape()[0], n = a.shape()[1];
  if (width == 0 || offset + width > n) throw DimensionError("slice_cols: out of range");
  auto d = a.data();
  std::vector<double> out(m * width);
  for (std::size_t i = 0; i < m; ++i)
    std::copy_n(d.begin() + i * n + offset, width, out.begin() + i * width);
  return Tensor::make_result({m, width}, std::move(out), {a},
                             [offset, n](const Tensor&, const Tensor& g) -> std::vector<Tensor> {
                               return {pad_cols(g, offset, n)};
                             });
}

Tensor slice_rows(const Tensor& a, std::size_t offset, std::size_t height) {
  require_rank2(a, "slice_rows");
  const std::size_t m = a.shape()[0], n = a.shape()[1];
  if (height == 0 || offset + height > m) throw DimensionError("slice_rows: out of range");
  auto d = a.data();
  std::vector<double> out(d.begin() + offset * n, d.begin() + (offset + height) * n);
  return Tensor::make_result({height, n}, std::move(out), {a},
                             [offset, m](const Tensor&, const Tensor& g) -> std::vector<Tensor> {
                               return {pad_rows(g, offset, m)};
                             });
}

Tensor pad_cols(const Tensor& a, std::size_t offset, std::size_t total) {
  require_rank2(a, "pad_cols");
  const std::size_t m = a.shape()[0], w = a.shape()[1];
  if (offset + w > total) throw DimensionError("pad_cols: out of range");
  auto d = a.data();
  std::vector<double> out(m * total, 0.0);
  for (std::size_t i = 0; i < m; ++i)
    std::copy_n(d.begin() + i * w, w, out.begin() + i * total + offset);
  return Tensor::make_result({m, total}, std::move(out), {a},
                             [offset, w](const Tensor&, const Tensor& g) -> std::vector<Tensor> {
                               return {slice_cols(g, offset, w)};
                             });
}

Tensor pad_rows(const Tensor& a, std::size_t offset, std::size_t total) {
  require_rank2(a, "pad_rows");
  const std::size_t h = a.shape()[0], n = a.shape()[1];
  if (offset + h > total) throw DimensionError("pad_rows: out of range");
  auto d = a.data();
  std::vector<double> out(total * n, 0.0);
  std::copy(d.begin(), d.end(), out.begin() + offset * n);
  return Tensor::make_result({total, n}, std::move(out), {a},
                             [offset, h](const Tensor&, const Tensor& g) -> std::vector<Tensor> {
                               return {slice_rows(g, offset, h)};
                             });
}

Tensor row_max(const Tensor& a) {
  require_rank2(a, "row_max");
  const std::size_t m = a.shape()[0], n = a.shape()[1];
  auto d = a.data();
  std::vector<double> out(m);
  for (std::size_t i = 0; i < m; ++i)
    out[i] = *std::max_element(d.begin() + i * n, d.begin() + (i + 1) * n);
  return Tensor::from({m, 1}, std::move(out));
}

// ---- composites ------------------------------------------------------------------

Tensor mean(const Tensor& a) { return scale(sum(a), 1.0 / static_cast<double>(a.numel())); }

Tensor mean_rows(const Tensor& a) {
  require_rank2(a, "mean_rows");
  return scale(sum_cols(a), 1.0 / static_cast<double>(a.shape()[0]));
}

Tensor softmax_rows(const Tensor& a) {
  require_rank2(a, "softmax_rows");
  const std::size_t n = a.shape()[1];
  // Subtracting the (constant) row max leaves both value and gradient unchanged.
  Tensor shifted = sub(a, broadcast_cols(row_max(a), n));
  Tensor e = exp(shifted);
  return div(e, broadcast_cols(sum_rows(e), n));
}

Tensor log_softmax_rows(const Tensor& a) {
  require_rank2(a, "log_softmax_rows");
  const std::size_t n = a.shape()[1];
  Tensor shifted = sub(a, broadcast_cols(row_max(a), n));
  Tensor lse = log(sum_rows(exp(shifted)));
  return sub(shifted, broadcast_cols(lse, n));
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  require_rank2(x, "layer_norm");
  const std::size_t m = x.shape()[0], n = x.shape()[1];
  if (gamma.numel() != n || beta.numel() != n) {
    throw DimensionError("layer_norm: gamma/beta must have " + std::to_string(n) + " entries");
  }
  const double inv_n = 1.0 / static_cast<double>(n);
  Tensor mu = scale(sum_rows(x), inv_n);
  Tensor centered = sub(x, broadcast_cols(mu, n));
  Tensor var = scale(sum_rows(mul(centered, centered)), inv_n);
  Tensor stdev = sqrt(add_scalar(var, eps));
  Tensor normed = div(centered, broadcast_cols(stdev, n));
  return add(mul(normed, broadcast_rows(gamma, m)), broadcast_rows(beta, m));
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  Tensor y = matmul(x, w);
  if (b.numel() != y.shape()[1]) throw DimensionError("linear: bias width mismatch");
  return add(y, broadcast_rows(b, y.shape()[0]));
}

Tensor mse(const Tensor& a, const Tensor& b) {
  Tensor d = sub(a, b);
  return mean(mul(d, d));
}

Tensor cross_entropy(const Tensor& logits, std::span<const int> labels) {
  require_rank2(logits, "cross_entropy");
  const std::size_t m = logits.shape()[0], n = logits.shape()[1];
  if (labels.size() != m) {
    throw DimensionError("cross_entropy: " + std::to_string(labels.size()) + " labels for " +
                         std::to_string(m) + " rows");
  }
  std::vector<double> onehot(m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= n) {
      throw ContractError("cross_entropy: label " + std::to_string(labels[i]) +
                          " outside [0, " + std::to_string(n) + ")");
    }
    onehot[i * n + static_cast<std::size_t>(labels[i])] = 1.0;
  }
  Tensor picked = sum(mul(log_softmax_rows(logits), Tensor::from({m, n}, std::move(onehot))));
  return scale(picked, -1.0 / static_cast<double>(m));
}

Tensor l2_normalize_rows(const Tensor& a, double eps) {
  require_rank2(a, "l2_normalize_rows");
  const std::size_t n = a.shape()[1];
  Tensor norm = sqrt(add_scalar(sum_rows(mul(a, a)), eps));
  return div(a, broadcast_cols(norm, n));
}

// ---- optimizer -------------------------------------------------------------------

void zero_grad(Params& params) {
  for (auto& [name, p] : params) p.zero_grad();
}

void sgd_step(Params& params, SgdState& state, const LrScale& lr_scale) {
  for (auto& [name, p] : params) {
    if (!p.has_grad()) throw ContractError("sgd_step: parameter '" + name + "' has no gradient");
  }
  for (auto& [name, p] : params) {
    auto g = p.grad().data();
    auto theta = p.mutable_data();
    auto& v = state.velocity[name];
    if (v.empty()) v.assign(theta.size(), 0.0);
    if (v.size() != theta.size()) {
      throw DimensionError("sgd_step: velocity for '" + name + "' has wrong size");
    }
    const double lr = state.learning_rate * (lr_scale ? lr_scale(name) : 1.0);
    for (std::size_t i = 0; i < theta.size(); ++i) {
      v[i] = state.momentum * v[i] + g[i] + state.weight_decay * theta[i];
      theta[i] -= lr * v[i];
    }
  }
}

}  // namespace mmtfd
