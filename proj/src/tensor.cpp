#include "lyra/tensor.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <unordered_set>

namespace lyra {

namespace {

using RowMatrix =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMatrix>;
using ConstMatMap = Eigen::Map<const RowMatrix>;

thread_local bool g_grad_enabled = true;

void require(bool cond, const std::string& message) {
  if (!cond) throw std::invalid_argument(message);
}

void require_2d(const Tensor& t, const char* op) {
  if (t.shape().size() != 2) {
    throw std::invalid_argument(std::string(op) + ": expected 2-D tensor, got " +
                                shape_string(t.shape()));
  }
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw std::invalid_argument(std::string(op) + ": shape mismatch " +
                                shape_string(a.shape()) + " vs " +
                                shape_string(b.shape()));
  }
}

// Builds an op result. Inputs are recorded only when the result participates
// in differentiation.
Tensor make_result(const char* op, Shape shape, std::vector<double> data,
                   std::initializer_list<Tensor> inputs,
                   std::function<void(Node&)> backward_fn) {
  for (double v : data) {
    if (!std::isfinite(v)) {
      throw std::domain_error(std::string("non-finite value produced by ") + op);
    }
  }
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->data = std::move(data);
  node->op = op;
  if (g_grad_enabled) {
    bool any = false;
    for (const auto& in : inputs) any = any || in.requires_grad();
    if (any) {
      node->requires_grad = true;
      for (const auto& in : inputs) node->parents.push_back(in.node_ptr());
      node->backward = std::move(backward_fn);
    }
  }
  return Tensor(std::move(node));
}

Tensor make_result_n(const char* op, Shape shape, std::vector<double> data,
                     const std::vector<Tensor>& inputs,
                     std::function<void(Node&)> backward_fn) {
  for (double v : data) {
    if (!std::isfinite(v)) {
      throw std::domain_error(std::string("non-finite value produced by ") + op);
    }
  }
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->data = std::move(data);
  node->op = op;
  if (g_grad_enabled) {
    bool any = false;
    for (const auto& in : inputs) any = any || in.requires_grad();
    if (any) {
      node->requires_grad = true;
      for (const auto& in : inputs) node->parents.push_back(in.node_ptr());
      node->backward = std::move(backward_fn);
    }
  }
  return Tensor(std::move(node));
}

double stable_sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

std::string shape_string(const Shape& shape) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out << 'x';
    out << shape[i];
  }
  out << ']';
  return out.str();
}

std::vector<double>& Node::ensure_grad() {
  if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
  return grad;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  const auto n = shape_size(shape);
  return from(std::move(shape), std::vector<double>(n, 0.0), requires_grad);
}

Tensor Tensor::from(Shape shape, std::vector<double> values,
                    bool requires_grad) {
  if (shape_size(shape) != values.size()) {
    throw std::invalid_argument("tensor data length " +
                                std::to_string(values.size()) +
                                " does not match shape " + shape_string(shape));
  }
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->data = std::move(values);
  node->requires_grad = requires_grad;
  node->op = "leaf";
  return Tensor(std::move(node));
}

Tensor Tensor::scalar(double value) { return from({}, {value}); }

Tensor Tensor::randn(Shape shape, double stddev, Rng& rng, bool requires_grad) {
  std::normal_distribution<double> dist(0.0, stddev);
  std::vector<double> values(shape_size(shape));
  for (auto& v : values) v = dist(rng);
  return from(std::move(shape), std::move(values), requires_grad);
}

Tensor Tensor::uniform(Shape shape, double bound, Rng& rng,
                       bool requires_grad) {
  std::uniform_real_distribution<double> dist(-bound, bound);
  std::vector<double> values(shape_size(shape));
  for (auto& v : values) v = dist(rng);
  return from(std::move(shape), std::move(values), requires_grad);
}

std::size_t Tensor::rows() const {
  if (shape().size() != 2) throw std::invalid_argument("rows() on non-matrix");
  return shape()[0];
}

std::size_t Tensor::cols() const {
  if (shape().size() != 2) throw std::invalid_argument("cols() on non-matrix");
  return shape()[1];
}

double Tensor::item() const {
  if (size() != 1) {
    throw std::invalid_argument("item() on tensor of shape " +
                                shape_string(shape()));
  }
  return node_->data[0];
}

double Tensor::at(std::size_t r, std::size_t c) const {
  return node_->data.at(r * cols() + c);
}

Tensor Tensor::detach_copy() const {
  return from(shape(), node_->data, false);
}

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) {
  g_grad_enabled = false;
}

NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

bool grad_enabled() { return g_grad_enabled; }

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] + b.data()[i];
  return make_result("add", a.shape(), std::move(out), {a, b}, [](Node& self) {
    for (auto& p : self.parents) {
      if (!p->requires_grad) continue;
      auto& g = p->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] - b.data()[i];
  return make_result("sub", a.shape(), std::move(out), {a, b}, [](Node& self) {
    const double sign[2] = {1.0, -1.0};
    for (std::size_t k = 0; k < 2; ++k) {
      auto& p = self.parents[k];
      if (!p->requires_grad) continue;
      auto& g = p->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += sign[k] * self.grad[i];
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * b.data()[i];
  return make_result("mul", a.shape(), std::move(out), {a, b}, [](Node& self) {
    auto& pa = self.parents[0];
    auto& pb = self.parents[1];
    // Read both inputs before writing either grad: a and b may be one node.
    if (pa->requires_grad) {
      auto& g = pa->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * pb->data[i];
    }
    if (pb->requires_grad) {
      auto& g = pb->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * pa->data[i];
    }
  });
}

Tensor scale(const Tensor& a, double factor) {
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * factor;
  return make_result("scale", a.shape(), std::move(out), {a},
                     [factor](Node& self) {
                       auto& g = self.parents[0]->ensure_grad();
                       for (std::size_t i = 0; i < g.size(); ++i)
                         g[i] += factor * self.grad[i];
                     });
}

Tensor add_row(const Tensor& a, const Tensor& row) {
  require_2d(a, "add_row");
  const std::size_t m = a.rows(), n = a.cols();
  require(row.size() == n, "add_row: row of shape " + shape_string(row.shape()) +
                               " does not broadcast over " +
                               shape_string(a.shape()));
  std::vector<double> out(a.size());
  for (std::size_t r = 0; r < m; ++r)
    for (std::size_t c = 0; c < n; ++c)
      out[r * n + c] = a.data()[r * n + c] + row.data()[c];
  return make_result("add_row", a.shape(), std::move(out), {a, row},
                     [m, n](Node& self) {
                       auto& pa = self.parents[0];
                       auto& pr = self.parents[1];
                       if (pa->requires_grad) {
                         auto& g = pa->ensure_grad();
                         for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
                       }
                       if (pr->requires_grad) {
                         auto& g = pr->ensure_grad();
                         for (std::size_t r = 0; r < m; ++r)
                           for (std::size_t c = 0; c < n; ++c)
                             g[c] += self.grad[r * n + c];
                       }
                     });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_2d(a, "matmul");
  require_2d(b, "matmul");
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  if (b.rows() != k) {
    throw std::invalid_argument("matmul: dimension mismatch " +
                                shape_string(a.shape()) + " x " +
                                shape_string(b.shape()));
  }
  std::vector<double> out(m * n);
  MatMap(out.data(), m, n).noalias() =
      ConstMatMap(a.data().data(), m, k) * ConstMatMap(b.data().data(), k, n);
  return make_result(
      "matmul", {m, n}, std::move(out), {a, b}, [m, k, n](Node& self) {
        auto& pa = self.parents[0];
        auto& pb = self.parents[1];
        ConstMatMap dc(self.grad.data(), m, n);
        if (pa->requires_grad) {
          auto& g = pa->ensure_grad();
          MatMap(g.data(), m, k).noalias() +=
              dc * ConstMatMap(pb->data.data(), k, n).transpose();
        }
        if (pb->requires_grad) {
          auto& g = pb->ensure_grad();
          MatMap(g.data(), k, n).noalias() +=
              ConstMatMap(pa->data.data(), m, k).transpose() * dc;
        }
      });
}

Tensor concat(const std::vector<Tensor>& parts) {
  require(!parts.empty(), "concat: no inputs");
  for (const auto& p : parts) require_2d(p, "concat");
  const std::size_t m = parts[0].rows();
  std::vector<std::size_t> widths;
  std::size_t total = 0;
  for (const auto& p : parts) {
    if (p.rows() != m) {
      throw std::invalid_argument("concat: row mismatch " +
                                  shape_string(parts[0].shape()) + " vs " +
                                  shape_string(p.shape()));
    }
    widths.push_back(p.cols());
    total += p.cols();
  }
  std::vector<double> out(m * total);
  std::size_t offset = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const auto w = widths[k];
    for (std::size_t r = 0; r < m; ++r)
      std::copy_n(parts[k].data().data() + r * w, w,
                  out.data() + r * total + offset);
    offset += w;
  }
  return make_result_n("concat", {m, total}, std::move(out), parts,
                       [m, total, widths](Node& self) {
                         std::size_t off = 0;
                         for (std::size_t k = 0; k < widths.size(); ++k) {
                           auto& p = self.parents[k];
                           const auto w = widths[k];
                           if (p->requires_grad) {
                             auto& g = p->ensure_grad();
                             for (std::size_t r = 0; r < m; ++r)
                               for (std::size_t c = 0; c < w; ++c)
                                 g[r * w + c] += self.grad[r * total + off + c];
                           }
                           off += w;
                         }
                       });
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
  require(!parts.empty(), "concat_rows: no inputs");
  for (const auto& p : parts) require_2d(p, "concat_rows");
  const std::size_t n = parts[0].cols();
  std::size_t total = 0;
  for (const auto& p : parts) {
    if (p.cols() != n) {
      throw std::invalid_argument("concat_rows: column mismatch " +
                                  shape_string(parts[0].shape()) + " vs " +
                                  shape_string(p.shape()));
    }
    total += p.rows();
  }
  std::vector<double> out;
  out.reserve(total * n);
  for (const auto& p : parts) out.insert(out.end(), p.data().begin(), p.data().end());
  return make_result_n("concat_rows", {total, n}, std::move(out), parts,
                       [](Node& self) {
                         std::size_t off = 0;
                         for (auto& p : self.parents) {
                           const auto len = p->data.size();
                           if (p->requires_grad) {
                             auto& g = p->ensure_grad();
                             for (std::size_t i = 0; i < len; ++i)
                               g[i] += self.grad[off + i];
                           }
                           off += len;
                         }
                       });
}

Tensor slice_cols(const Tensor& a, std::size_t begin, std::size_t end) {
  require_2d(a, "slice_cols");
  const std::size_t m = a.rows(), n = a.cols();
  require(begin < end && end <= n, "slice_cols: range [" + std::to_string(begin) +
                                       "," + std::to_string(end) +
                                       ") outside " + shape_string(a.shape()));
  const std::size_t w = end - begin;
  std::vector<double> out(m * w);
  for (std::size_t r = 0; r < m; ++r)
    std::copy_n(a.data().data() + r * n + begin, w, out.data() + r * w);
  return make_result("slice_cols", {m, w}, std::move(out), {a},
                     [m, n, w, begin](Node& self) {
                       auto& g = self.parents[0]->ensure_grad();
                       for (std::size_t r = 0; r < m; ++r)
                         for (std::size_t c = 0; c < w; ++c)
                           g[r * n + begin + c] += self.grad[r * w + c];
                     });
}

Tensor reshape(const Tensor& a, Shape shape) {
  require(shape_size(shape) == a.size(), "reshape: cannot view " +
                                             shape_string(a.shape()) + " as " +
                                             shape_string(shape));
  std::vector<double> out(a.data().begin(), a.data().end());
  return make_result("reshape", std::move(shape), std::move(out), {a},
                     [](Node& self) {
                       auto& g = self.parents[0]->ensure_grad();
                       for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
                     });
}

Tensor sigmoid(const Tensor& a) {
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = stable_sigmoid(a.data()[i]);
  return make_result("sigmoid", a.shape(), std::move(out), {a}, [](Node& self) {
    auto& g = self.parents[0]->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double s = self.data[i];
      g[i] += self.grad[i] * s * (1.0 - s);
    }
  });
}

Tensor tanh(const Tensor& a) {
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::tanh(a.data()[i]);
  return make_result("tanh", a.shape(), std::move(out), {a}, [](Node& self) {
    auto& g = self.parents[0]->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double t = self.data[i];
      g[i] += self.grad[i] * (1.0 - t * t);
    }
  });
}

Tensor relu(const Tensor& a) {
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::max(0.0, a.data()[i]);
  return make_result("relu", a.shape(), std::move(out), {a}, [](Node& self) {
    auto& p = self.parents[0];
    auto& g = p->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i)
      if (p->data[i] > 0.0) g[i] += self.grad[i];
  });
}

Tensor exp(const Tensor& a) {
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::exp(a.data()[i]);
  return make_result("exp", a.shape(), std::move(out), {a}, [](Node& self) {
    auto& g = self.parents[0]->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * self.data[i];
  });
}

Tensor sum(const Tensor& a) {
  double total = 0.0;
  for (double v : a.data()) total += v;
  return make_result("sum", {}, {total}, {a}, [](Node& self) {
    auto& g = self.parents[0]->ensure_grad();
    for (auto& v : g) v += self.grad[0];
  });
}

Tensor mean(const Tensor& a) {
  require(a.size() > 0, "mean: empty tensor");
  const double inv = 1.0 / static_cast<double>(a.size());
  double total = 0.0;
  for (double v : a.data()) total += v;
  return make_result("mean", {}, {total * inv}, {a}, [inv](Node& self) {
    auto& g = self.parents[0]->ensure_grad();
    for (auto& v : g) v += self.grad[0] * inv;
  });
}

Tensor embedding_lookup(const Tensor& table, std::span<const int> ids) {
  require_2d(table, "embedding_lookup");
  const std::size_t vocab = table.rows(), d = table.cols();
  std::vector<int> idx(ids.begin(), ids.end());
  std::vector<double> out(idx.size() * d);
  for (std::size_t r = 0; r < idx.size(); ++r) {
    if (idx[r] < 0 || static_cast<std::size_t>(idx[r]) >= vocab) {
      throw std::out_of_range("embedding_lookup: id " + std::to_string(idx[r]) +
                              " outside table of " + std::to_string(vocab) +
                              " rows");
    }
    std::copy_n(table.data().data() + idx[r] * d, d, out.data() + r * d);
  }
  return make_result("embedding_lookup", {idx.size(), d}, std::move(out),
                     {table}, [idx, d](Node& self) {
                       auto& g = self.parents[0]->ensure_grad();
                       for (std::size_t r = 0; r < idx.size(); ++r)
                         for (std::size_t c = 0; c < d; ++c)
                           g[idx[r] * d + c] += self.grad[r * d + c];
                     });
}

Tensor dropout(const Tensor& a, std::span<const double> mask) {
  require(mask.size() == a.size(), "dropout: mask length mismatch");
  std::vector<double> m(mask.begin(), mask.end());
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * m[i];
  return make_result("dropout", a.shape(), std::move(out), {a},
                     [m = std::move(m)](Node& self) {
                       auto& g = self.parents[0]->ensure_grad();
                       for (std::size_t i = 0; i < g.size(); ++i)
                         g[i] += self.grad[i] * m[i];
                     });
}

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b) {
  if (x.shape().size() != 3 || w.shape().size() != 4) {
    throw std::invalid_argument("conv2d: expected x[CxHxW] and w[OxCxkhxkw], got " +
                                shape_string(x.shape()) + " and " +
                                shape_string(w.shape()));
  }
  const std::size_t c_in = x.dim(0), h = x.dim(1), wd = x.dim(2);
  const std::size_t c_out = w.dim(0), kh = w.dim(2), kw = w.dim(3);
  if (w.dim(1) != c_in || b.size() != c_out || kh > h || kw > wd) {
    throw std::invalid_argument("conv2d: incompatible shapes " +
                                shape_string(x.shape()) + ", " +
                                shape_string(w.shape()) + ", " +
                                shape_string(b.shape()));
  }
  const std::size_t oh = h - kh + 1, ow = wd - kw + 1;
  const std::size_t patch = c_in * kh * kw, positions = oh * ow;

  // im2col: cols[patch × positions]
  auto cols = std::make_shared<std::vector<double>>(patch * positions);
  const double* xd = x.data().data();
  for (std::size_t c = 0; c < c_in; ++c)
    for (std::size_t i = 0; i < kh; ++i)
      for (std::size_t j = 0; j < kw; ++j) {
        double* row = cols->data() + ((c * kh + i) * kw + j) * positions;
        for (std::size_t y = 0; y < oh; ++y)
          std::copy_n(xd + (c * h + y + i) * wd + j, ow, row + y * ow);
      }

  std::vector<double> out(c_out * positions);
  MatMap om(out.data(), c_out, positions);
  om.noalias() = ConstMatMap(w.data().data(), c_out, patch) *
                 ConstMatMap(cols->data(), patch, positions);
  for (std::size_t o = 0; o < c_out; ++o) om.row(o).array() += b.data()[o];

  return make_result(
      "conv2d", {c_out, oh, ow}, std::move(out), {x, w, b},
      [=](Node& self) {
        auto& px = self.parents[0];
        auto& pw = self.parents[1];
        auto& pb = self.parents[2];
        ConstMatMap dout(self.grad.data(), c_out, positions);
        if (pw->requires_grad) {
          auto& g = pw->ensure_grad();
          MatMap(g.data(), c_out, patch).noalias() +=
              dout * ConstMatMap(cols->data(), patch, positions).transpose();
        }
        if (pb->requires_grad) {
          auto& g = pb->ensure_grad();
          for (std::size_t o = 0; o < c_out; ++o) g[o] += dout.row(o).sum();
        }
        if (px->requires_grad) {
          std::vector<double> dcols(patch * positions);
          MatMap(dcols.data(), patch, positions).noalias() =
              ConstMatMap(pw->data.data(), c_out, patch).transpose() * dout;
          auto& g = px->ensure_grad();
          for (std::size_t c = 0; c < c_in; ++c)
            for (std::size_t i = 0; i < kh; ++i)
              for (std::size_t j = 0; j < kw; ++j) {
                const double* row =
                    dcols.data() + ((c * kh + i) * kw + j) * positions;
                for (std::size_t y = 0; y < oh; ++y) {
                  double* dst = g.data() + (c * h + y + i) * wd + j;
                  const double* src = row + y * ow;
                  for (std::size_t xx = 0; xx < ow; ++xx) dst[xx] += src[xx];
                }
              }
        }
      });
}

Tensor max_pool2d(const Tensor& x) {
  if (x.shape().size() != 3) {
    throw std::invalid_argument("max_pool2d: expected [CxHxW], got " +
                                shape_string(x.shape()));
  }
  const std::size_t c_n = x.dim(0), h = x.dim(1), w = x.dim(2);
  const std::size_t oh = h / 2, ow = w / 2;
  require(oh > 0 && ow > 0, "max_pool2d: input " + shape_string(x.shape()) +
                                " too small for a 2x2 window");
  std::vector<double> out(c_n * oh * ow);
  std::vector<std::size_t> argmax(out.size());
  const double* xd = x.data().data();
  for (std::size_t c = 0; c < c_n; ++c)
    for (std::size_t y = 0; y < oh; ++y)
      for (std::size_t z = 0; z < ow; ++z) {
        std::size_t best = (c * h + 2 * y) * w + 2 * z;
        for (std::size_t dy = 0; dy < 2; ++dy)
          for (std::size_t dz = 0; dz < 2; ++dz) {
            const std::size_t idx = (c * h + 2 * y + dy) * w + 2 * z + dz;
            if (xd[idx] > xd[best]) best = idx;
          }
        const std::size_t o = (c * oh + y) * ow + z;
        out[o] = xd[best];
        argmax[o] = best;
      }
  return make_result("max_pool2d", {c_n, oh, ow}, std::move(out), {x},
                     [argmax = std::move(argmax)](Node& self) {
                       auto& g = self.parents[0]->ensure_grad();
                       for (std::size_t o = 0; o < argmax.size(); ++o)
                         g[argmax[o]] += self.grad[o];
                     });
}

Tensor row_max(const Tensor& a) {
  require_2d(a, "row_max");
  const std::size_t m = a.rows(), n = a.cols();
  require(n > 0, "row_max: zero columns");
  std::vector<double> out(m);
  std::vector<std::size_t> argmax(m);
  for (std::size_t r = 0; r < m; ++r) {
    std::size_t best = r * n;
    for (std::size_t c = 1; c < n; ++c)
      if (a.data()[r * n + c] > a.data()[best]) best = r * n + c;
    out[r] = a.data()[best];
    argmax[r] = best;
  }
  return make_result("row_max", {m, 1}, std::move(out), {a},
                     [argmax = std::move(argmax)](Node& self) {
                       auto& g = self.parents[0]->ensure_grad();
                       for (std::size_t r = 0; r < argmax.size(); ++r)
                         g[argmax[r]] += self.grad[r];
                     });
}

Tensor row_blend(std::span<const double> keep, const Tensor& when_set,
                 const Tensor& otherwise) {
  require_same_shape(when_set, otherwise, "row_blend");
  require_2d(when_set, "row_blend");
  const std::size_t m = when_set.rows(), n = when_set.cols();
  require(keep.size() == m, "row_blend: mask length mismatch");
  std::vector<bool> sel(m);
  for (std::size_t r = 0; r < m; ++r) sel[r] = keep[r] != 0.0;
  std::vector<double> out(m * n);
  for (std::size_t r = 0; r < m; ++r) {
    const auto& src = sel[r] ? when_set : otherwise;
    std::copy_n(src.data().data() + r * n, n, out.data() + r * n);
  }
  return make_result("row_blend", {m, n}, std::move(out), {when_set, otherwise},
                     [sel = std::move(sel), n](Node& self) {
                       for (std::size_t k = 0; k < 2; ++k) {
                         auto& p = self.parents[k];
                         if (!p->requires_grad) continue;
                         auto& g = p->ensure_grad();
                         for (std::size_t r = 0; r < sel.size(); ++r) {
                           if (sel[r] != (k == 0)) continue;
                           for (std::size_t c = 0; c < n; ++c)
                             g[r * n + c] += self.grad[r * n + c];
                         }
                       }
                     });
}

Tensor softmax_cross_entropy(const Tensor& logits, std::span<const int> labels,
                             double normalizer) {
  require_2d(logits, "softmax_cross_entropy");
  const std::size_t n = logits.rows(), k = logits.cols();
  require(labels.size() == n, "softmax_cross_entropy: " +
                                  std::to_string(labels.size()) + " labels for " +
                                  std::to_string(n) + " rows");
  if (normalizer <= 0.0) normalizer = static_cast<double>(n);
  std::vector<int> lab(labels.begin(), labels.end());
  auto probs = std::make_shared<std::vector<double>>(n * k);
  double loss = 0.0;
  for (std::size_t r = 0; r < n; ++r) {
    if (lab[r] == kIgnoreLabel) continue;
    if (lab[r] < 0 || static_cast<std::size_t>(lab[r]) >= k) {
      throw std::out_of_range("softmax_cross_entropy: label " +
                              std::to_string(lab[r]) + " outside [0," +
                              std::to_string(k) + ")");
    }
    const double* row = logits.data().data() + r * k;
    const double mx = *std::max_element(row, row + k);
    double z = 0.0;
    for (std::size_t c = 0; c < k; ++c) z += std::exp(row[c] - mx);
    const double lse = mx + std::log(z);
    for (std::size_t c = 0; c < k; ++c) (*probs)[r * k + c] = std::exp(row[c] - lse);
    loss += lse - row[lab[r]];
  }
  const double inv = 1.0 / normalizer;
  return make_result("softmax_cross_entropy", {}, {loss * inv}, {logits},
                     [probs, lab = std::move(lab), k, inv](Node& self) {
                       auto& g = self.parents[0]->ensure_grad();
                       const double up = self.grad[0] * inv;
                       for (std::size_t r = 0; r < lab.size(); ++r) {
                         if (lab[r] == kIgnoreLabel) continue;
                         for (std::size_t c = 0; c < k; ++c)
                           g[r * k + c] += up * (*probs)[r * k + c];
                         g[r * k + lab[r]] -= up;
                       }
                     });
}

std::vector<double> make_dropout_mask(std::size_t n, double p, Rng& rng) {
  if (p < 0.0 || p >= 1.0) throw std::invalid_argument("dropout p must be in [0,1)");
  std::vector<double> mask(n, 1.0);
  if (p == 0.0) return mask;
  std::bernoulli_distribution drop(p);
  const double keep_scale = 1.0 / (1.0 - p);
  for (auto& m : mask) m = drop(rng) ? 0.0 : keep_scale;
  return mask;
}

void backward(const Tensor& loss) {
  if (!loss.defined() || loss.size() != 1) {
    throw std::invalid_argument("backward: loss must be a scalar, got " +
                                (loss.defined() ? shape_string(loss.shape())
                                                : std::string("undefined")));
  }
  if (!loss.requires_grad()) return;

  // Iterative post-order DFS gives a topological order.
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, std::size_t>> stack{{loss.node(), 0}};
  visited.insert(loss.node());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* parent = node->parents[next++].get();
      if (parent->requires_grad && visited.insert(parent).second)
        stack.emplace_back(parent, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  loss.node()->ensure_grad()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* node = *it;
    if (node->backward && !node->grad.empty()) node->backward(*node);
  }
}

double relative_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) /
         std::max(1e-8, std::abs(analytic) + std::abs(numeric));
}

double grad_check(const std::function<Tensor(const Tensor&)>& f, Tensor x,
                  double h) {
  return grad_check([&] { return f(x); }, std::vector<Tensor>{x}, h);
}

double grad_check(const std::function<Tensor()>& f, std::vector<Tensor> params,
                  double h) {
  for (auto& p : params) {
    p.set_requires_grad(true);
    p.zero_grad();
  }
  backward(f());
  double worst = 0.0;
  NoGradGuard no_grad;
  for (auto& p : params) {
    std::vector<double> analytic(p.size(), 0.0);
    if (p.has_grad()) analytic.assign(p.grad().begin(), p.grad().end());
    auto values = p.data();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double orig = values[i];
      values[i] = orig + h;
      const double up = f().item();
      values[i] = orig - h;
      const double down = f().item();
      values[i] = orig;
      worst = std::max(worst, relative_error(analytic[i], (up - down) / (2 * h)));
    }
  }
  return worst;
}

}  // namespace lyra
