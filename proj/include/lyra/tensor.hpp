#pragma once

// Reverse-mode automatic differentiation over dense row-major double tensors.
//
// Graphs are built define-by-run: every op returns a Tensor whose node keeps
// references to its inputs and a backward rule. Calling backward() on a scalar
// walks the nodes reachable from it in reverse topological order, visiting each
// exactly once. Intermediate nodes are released as soon as the last Tensor
// handle referencing them goes away, so a training step's tape dies with it.

#include <cstddef>
#include <functional>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace lyra {

using Shape = std::vector<std::size_t>;
using Rng = std::mt19937_64;

std::size_t shape_size(const Shape& shape);
std::string shape_string(const Shape& shape);

struct Node {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;
  bool requires_grad = false;
  std::string op;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  std::vector<double>& ensure_grad();
};

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<double> values,
                     bool requires_grad = false);
  static Tensor scalar(double value);
  static Tensor randn(Shape shape, double stddev, Rng& rng,
                      bool requires_grad = false);
  static Tensor uniform(Shape shape, double bound, Rng& rng,
                        bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t size() const { return node_->data.size(); }
  std::size_t dim(std::size_t axis) const { return node_->shape.at(axis); }
  std::size_t rows() const;
  std::size_t cols() const;

  std::span<double> data() { return node_->data; }
  std::span<const double> data() const { return node_->data; }
  const std::vector<double>& values() const { return node_->data; }
  double item() const;
  double at(std::size_t r, std::size_t c) const;

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool flag) { node_->requires_grad = flag; }
  bool has_grad() const { return !node_->grad.empty(); }
  std::span<const double> grad() const { return node_->grad; }
  std::vector<double>& mutable_grad() { return node_->ensure_grad(); }
  void zero_grad() { node_->grad.clear(); }

  // Independent leaf holding a copy of the values.
  Tensor detach_copy() const;

  Node* node() const { return node_.get(); }
  const std::shared_ptr<Node>& node_ptr() const { return node_; }

 private:
  std::shared_ptr<Node> node_;
};

// Disables graph recording on the current thread for its lifetime.
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

// Labels with this value are skipped by softmax_cross_entropy.
inline constexpr int kIgnoreLabel = -1;

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
// a[m×n] + row[1×n] broadcast over rows.
Tensor add_row(const Tensor& a, const Tensor& row);
Tensor matmul(const Tensor& a, const Tensor& b);
// Concatenation along the last axis of 2-D tensors with equal row counts.
Tensor concat(const std::vector<Tensor>& parts);
// Concatenation along the first axis of 2-D tensors with equal column counts.
Tensor concat_rows(const std::vector<Tensor>& parts);
Tensor slice_cols(const Tensor& a, std::size_t begin, std::size_t end);
Tensor reshape(const Tensor& a, Shape shape);
Tensor sigmoid(const Tensor& a);
Tensor tanh(const Tensor& a);
Tensor relu(const Tensor& a);
Tensor exp(const Tensor& a);
Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
Tensor embedding_lookup(const Tensor& table, std::span<const int> ids);
// Elementwise product with a precomputed mask (already scaled by 1/(1-p)).
Tensor dropout(const Tensor& a, std::span<const double> mask);
// x[C×H×W] * w[O×C×kh×kw] + b[O], valid padding, stride 1.
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b);
// 2×2 window, stride 2, trailing odd row/column dropped.
Tensor max_pool2d(const Tensor& x);
// Per-row maximum of a 2-D tensor, shape [m×1].
Tensor row_max(const Tensor& a);
// Row r taken from `when_set` if keep[r] != 0, else from `otherwise`.
Tensor row_blend(std::span<const double> keep, const Tensor& when_set,
                 const Tensor& otherwise);
// Sum of per-row cross entropies divided by `normalizer` (defaults to the
// row count, i.e. the mean). Rows labelled kIgnoreLabel contribute nothing.
Tensor softmax_cross_entropy(const Tensor& logits, std::span<const int> labels,
                             double normalizer = 0.0);

// Inverted-dropout mask: each entry is 0 with probability p, else 1/(1-p).
std::vector<double> make_dropout_mask(std::size_t n, double p, Rng& rng);

// Accumulates d(loss)/d(t) into every reachable tensor with requires_grad.
void backward(const Tensor& loss);

double relative_error(double analytic, double numeric);

// Largest relative error between tape and central-difference gradients of
// f at x, over every coordinate of x.
double grad_check(const std::function<Tensor(const Tensor&)>& f, Tensor x,
                  double h = 1e-5);
// Same, for a closure over several parameter tensors.
double grad_check(const std::function<Tensor()>& f, std::vector<Tensor> params,
                  double h = 1e-5);

}  // namespace lyra
