#pragma once

// Dense row-major tensors with reverse-mode automatic differentiation.
//
// Every differentiable primitive expresses its backward rule in terms of
// other primitives. Running the backward pass with create_graph enabled
// therefore records the gradient computation itself, which is what
// second-order meta-learning needs.

#include <cstddef>
#include <functional>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace mmtfd {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

class Tensor;

namespace detail {

using BackwardFn =
    std::function<std::vector<Tensor>(const Tensor& out, const Tensor& grad_out)>;

struct Access;

struct Node {
  Shape shape;
  std::vector<double> value;
  bool requires_grad = false;
  std::vector<Tensor> inputs;
  BackwardFn backward;  // empty for leaves
  std::shared_ptr<Node> grad;
};

}  // namespace detail

class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);
  // Row-major nested list, mostly for tests.
  static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows,
                       bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t numel() const;
  // For rank-2 tensors; a rank-1 tensor [n] reports rows()==1, cols()==n.
  std::size_t rows() const;
  std::size_t cols() const;

  std::span<const double> data() const;
  // Writable view of a leaf's storage. Mutating a tensor that feeds a live
  // graph invalidates that graph.
  std::span<double> mutable_data();
  std::vector<double> to_vector() const;
  double item() const;
  double at(std::size_t i) const;
  double at(std::size_t r, std::size_t c) const;

  bool requires_grad() const;
  void set_requires_grad(bool flag);
  bool is_leaf() const;

  // Accumulated gradient; undefined Tensor when none has been written.
  Tensor grad() const;
  bool has_grad() const;
  void zero_grad();
  void set_grad(const Tensor& g);

  // Same values, no history, does not require grad.
  Tensor detach() const;
  // Deep copy of values; a fresh leaf.
  Tensor clone(bool requires_grad = false) const;

  const detail::Node* id() const { return node_.get(); }

  // Internal: build a result node, recording it when grad mode is on and any
  // input requires grad.
  static Tensor make_result(Shape shape, std::vector<double> values,
                            std::vector<Tensor> inputs, detail::BackwardFn backward);

 private:
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
  friend struct detail::Access;

  std::shared_ptr<detail::Node> node_;
};

// Disables recording for its lifetime (thread local).
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_enabled();

// While alive, every relu evaluated on this thread appends its input signs to
// `pattern`. Used to tell whether two evaluations sit on the same linear piece.
class KinkRecorder {
 public:
  KinkRecorder();
  ~KinkRecorder();
  KinkRecorder(const KinkRecorder&) = delete;
  KinkRecorder& operator=(const KinkRecorder&) = delete;

  std::vector<bool> pattern;

 private:
  KinkRecorder* previous_;
};

// Topologically ordered view of the graph that produced a tensor: every
// node appears after all of its inputs, and each node appears once.
class Tape {
 public:
  static Tape record_from(const Tensor& root);
  const std::vector<Tensor>& nodes() const { return nodes_; }
  std::size_t size() const { return nodes_.size(); }

 private:
  std::vector<Tensor> nodes_;
};

// d(loss)/d(wrt[i]). Inputs that do not influence the loss get zeros. With
// create_graph the returned tensors are themselves differentiable.
std::vector<Tensor> gradients(const Tensor& loss, std::span<const Tensor> wrt,
                              bool create_graph = false);

// Accumulates d(loss)/d(leaf) into every requires_grad leaf reachable from loss.
void backward(const Tensor& loss, bool create_graph = false);

// ---- primitives -----------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double c);
Tensor add_scalar(const Tensor& a, double c);
Tensor neg(const Tensor& a);
Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);
Tensor sqrt(const Tensor& a);
Tensor relu(const Tensor& a);

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
Tensor reshape(const Tensor& a, Shape shape);

Tensor sum(const Tensor& a);          // -> [1]
Tensor sum_rows(const Tensor& a);     // m x n -> m x 1
Tensor sum_cols(const Tensor& a);     // m x n -> 1 x n
Tensor broadcast_cols(const Tensor& a, std::size_t n);  // m x 1 -> m x n
Tensor broadcast_rows(const Tensor& a, std::size_t m);  // 1 x n (or [n]) -> m x n
Tensor expand(const Tensor& scalar, Shape shape);       // [1] -> shape

Tensor concat_cols(std::span<const Tensor> parts);
Tensor concat_rows(std::span<const Tensor> parts);
Tensor slice_cols(const Tensor& a, std::size_t offset, std::size_t width);
Tensor slice_rows(const Tensor& a, std::size_t offset, std::size_t height);
Tensor pad_cols(const Tensor& a, std::size_t offset, std::size_t total);
Tensor pad_rows(const Tensor& a, std::size_t offset, std::size_t total);

// Row-wise maximum as a constant (no gradient).
Tensor row_max(const Tensor& a);

// ---- composites -----------------------------------------------------------

Tensor mean(const Tensor& a);
Tensor mean_rows(const Tensor& a);  // m x n -> 1 x n, average over rows
Tensor softmax_rows(const Tensor& a);
Tensor log_softmax_rows(const Tensor& a);
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  double eps = 1e-5);
// x: m x in, w: in x out, b: [out] or 1 x out.
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b);
Tensor mse(const Tensor& a, const Tensor& b);
// Mean cross-entropy over rows of logits against integer class labels.
Tensor cross_entropy(const Tensor& logits, std::span<const int> labels);
// eps only guards all-zero rows; it is kept tiny so that scaling a row leaves
// the result unchanged to rounding.
Tensor l2_normalize_rows(const Tensor& a, double eps = 1e-24);

// ---- parameters and optimizer ---------------------------------------------

// Named parameter collection; std::map keeps iteration order deterministic.
using Params = std::map<std::string, Tensor>;

void zero_grad(Params& params);

struct SgdState {
  double learning_rate = 0.01;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  std::map<std::string, std::vector<double>> velocity;
};

// Per-parameter multiplier on the learning rate, keyed by parameter name.
using LrScale = std::function<double(std::string_view)>;

// v <- mu*v + g + wd*theta ; theta <- theta - lr*scale(name)*v
void sgd_step(Params& params, SgdState& state, const LrScale& lr_scale = {});

}  // namespace mmtfd
