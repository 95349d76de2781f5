#include "wfkit/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <unordered_set>

#include "wfkit/error.hpp"
#include "wfkit/parallel.hpp"

namespace wfkit {

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += "x";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

std::span<double> Node::ensure_grad() {
  if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
  return grad;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), 0.0, requires_grad);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  auto node = std::make_shared<Node>();
  node->value.assign(shape_numel(shape), value);
  node->shape = std::move(shape);
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

Tensor Tensor::from(Shape shape, std::vector<double> values, bool requires_grad) {
  if (shape_numel(shape) != values.size()) {
    throw Error(ErrorCode::kShapeMismatch,
                "shape " + shape_str(shape) + " needs " + std::to_string(shape_numel(shape)) +
                    " values, got " + std::to_string(values.size()));
  }
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->value = std::move(values);
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return from({1}, {value}, requires_grad);
}

double Tensor::item() const {
  if (numel() != 1) throw Error(ErrorCode::kShapeMismatch, "item() on " + shape_str(shape()));
  return node_->value[0];
}

namespace {

thread_local bool t_grad_enabled = true;

[[noreturn]] void shape_error(const char* op, const std::string& detail) {
  throw Error(ErrorCode::kShapeMismatch, std::string(op) + ": " + detail);
}

// New node whose parents are recorded only when some input needs gradients.
Tensor make_result(Shape shape, std::initializer_list<const Tensor*> inputs, const char* op) {
  auto node = std::make_shared<Node>();
  node->value.assign(shape_numel(shape), 0.0);
  node->shape = std::move(shape);
  node->op = op;
  bool needs = false;
  if (t_grad_enabled) {
    for (const Tensor* in : inputs) needs = needs || (in->defined() && in->requires_grad());
  }
  node->requires_grad = needs;
  if (needs) {
    for (const Tensor* in : inputs) {
      if (in->defined()) node->parents.push_back(in->shared());
    }
  }
  return Tensor(std::move(node));
}

bool wants_grad(const Node& n) { return n.requires_grad; }

}  // namespace

NoGradGuard::NoGradGuard() : previous_(t_grad_enabled) { t_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { t_grad_enabled = previous_; }
bool grad_enabled() { return t_grad_enabled; }

Graph Graph::trace(const Tensor& root) {
  Graph g;
  if (!root.defined()) return g;
  std::unordered_set<Node*> visited;
  // Iterative post-order DFS.
  std::vector<std::pair<Node*, std::size_t>> stack;
  stack.emplace_back(root.node(), 0);
  visited.insert(root.node());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* parent = node->parents[next++].get();
      if (visited.insert(parent).second) stack.emplace_back(parent, 0);
    } else {
      g.order_.push_back(node);
      stack.pop_back();
    }
  }
  return g;
}

void backward(const Tensor& loss) {
  if (!loss.defined() || loss.numel() != 1) {
    throw Error(ErrorCode::kNotScalarLoss,
                "loss must have exactly one element, got " +
                    (loss.defined() ? shape_str(loss.shape()) : std::string("undefined")));
  }
  if (!loss.requires_grad()) return;
  const Graph graph = Graph::trace(loss);
  loss.node()->ensure_grad()[0] += 1.0;
  const auto& order = graph.order();
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* node = *it;
    if (node->backward && !node->grad.empty()) node->backward(*node);
  }
}

// ---------------------------------------------------------------------------
// elementwise

namespace {

// Eight fixed lanes so the loop vectorizes while the summation order stays
// the same on every call.
double dot(const double* a, const double* b, std::size_t n) {
  double lane[8] = {};
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    for (int q = 0; q < 8; ++q) lane[q] += a[i + q] * b[i + q];
  }
  double acc = ((lane[0] + lane[1]) + (lane[2] + lane[3])) + ((lane[4] + lane[5]) + (lane[6] + lane[7]));
  for (; i < n; ++i) acc += a[i] * b[i];
  return acc;
}

void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    shape_error(op, shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape("add", a, b);
  Tensor out = make_result(a.shape(), {&a, &b}, "add");
  auto o = out.mutable_data();
  const auto x = a.data();
  const auto y = b.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = x[i] + y[i];
  if (out.requires_grad()) {
    out.node()->backward = [](Node& self) {
      for (auto& parent : self.parents) {
        if (!wants_grad(*parent)) continue;
        auto g = parent->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
      }
    };
    // Same tensor on both sides shows up once in parents; account for it.
    if (a.node() == b.node()) {
      out.node()->backward = [](Node& self) {
        auto g = self.parents[0]->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += 2.0 * self.grad[i];
      };
      out.node()->parents.resize(1);
    }
  }
  return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape("sub", a, b);
  if (a.node() == b.node()) {
    NoGradGuard guard;
    return Tensor::zeros(a.shape());
  }
  Tensor out = make_result(a.shape(), {&a, &b}, "sub");
  auto o = out.mutable_data();
  const auto x = a.data();
  const auto y = b.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = x[i] - y[i];
  if (out.requires_grad()) {
    Node* pa = a.node();
    out.node()->backward = [pa](Node& self) {
      for (auto& parent : self.parents) {
        if (!wants_grad(*parent)) continue;
        const double sign = parent.get() == pa ? 1.0 : -1.0;
        auto g = parent->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += sign * self.grad[i];
      }
    };
  }
  return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape("mul", a, b);
  Tensor out = make_result(a.shape(), {&a, &b}, "mul");
  auto o = out.mutable_data();
  const auto x = a.data();
  const auto y = b.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = x[i] * y[i];
  if (out.requires_grad()) {
    auto na = a.shared();
    auto nb = b.shared();
    out.node()->backward = [na, nb](Node& self) {
      if (wants_grad(*na)) {
        auto g = na->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * nb->value[i];
      }
      if (wants_grad(*nb)) {
        auto g = nb->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * na->value[i];
      }
    };
  }
  return out;
}

Tensor scale(const Tensor& a, double factor) {
  Tensor out = make_result(a.shape(), {&a}, "scale");
  auto o = out.mutable_data();
  const auto x = a.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = x[i] * factor;
  if (out.requires_grad()) {
    out.node()->backward = [factor](Node& self) {
      auto g = self.parents[0]->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * factor;
    };
  }
  return out;
}

Tensor add_bias(const Tensor& a, const Tensor& b) {
  if (a.rank() == 0 || b.rank() != 1 || b.dim(0) != a.shape().back()) {
    shape_error("add_bias", shape_str(a.shape()) + " + " + shape_str(b.shape()));
  }
  Tensor out = make_result(a.shape(), {&a, &b}, "add_bias");
  const std::size_t c = b.dim(0);
  const std::size_t rows = a.numel() / c;
  auto o = out.mutable_data();
  const auto x = a.data();
  const auto y = b.data();
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t j = 0; j < c; ++j) o[r * c + j] = x[r * c + j] + y[j];
  }
  if (out.requires_grad()) {
    auto na = a.shared();
    auto nb = b.shared();
    out.node()->backward = [na, nb, rows, c](Node& self) {
      if (wants_grad(*na)) {
        auto g = na->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
      }
      if (wants_grad(*nb)) {
        auto g = nb->ensure_grad();
        for (std::size_t r = 0; r < rows; ++r) {
          for (std::size_t j = 0; j < c; ++j) g[j] += self.grad[r * c + j];
        }
      }
    };
  }
  return out;
}

Tensor relu(const Tensor& a) {
  Tensor out = make_result(a.shape(), {&a}, "relu");
  auto o = out.mutable_data();
  const auto x = a.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = x[i] > 0.0 ? x[i] : 0.0;
  if (out.requires_grad()) {
    out.node()->backward = [](Node& self) {
      Node& in = *self.parents[0];
      auto g = in.ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) {
        if (in.value[i] > 0.0) g[i] += self.grad[i];
      }
    };
  }
  return out;
}

Tensor sigmoid(const Tensor& a) {
  Tensor out = make_result(a.shape(), {&a}, "sigmoid");
  auto o = out.mutable_data();
  const auto x = a.data();
  for (std::size_t i = 0; i < o.size(); ++i) {
    o[i] = x[i] >= 0.0 ? 1.0 / (1.0 + std::exp(-x[i])) : std::exp(x[i]) / (1.0 + std::exp(x[i]));
  }
  if (out.requires_grad()) {
    out.node()->backward = [](Node& self) {
      auto g = self.parents[0]->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) {
        const double s = self.value[i];
        g[i] += self.grad[i] * s * (1.0 - s);
      }
    };
  }
  return out;
}

// ---------------------------------------------------------------------------
// reductions

Tensor sum(const Tensor& a) {
  Tensor out = make_result({1}, {&a}, "sum");
  double acc = 0.0;
  for (double v : a.data()) acc += v;
  out.mutable_data()[0] = acc;
  if (out.requires_grad()) {
    out.node()->backward = [](Node& self) {
      auto g = self.parents[0]->ensure_grad();
      for (double& v : g) v += self.grad[0];
    };
  }
  return out;
}

Tensor mean(const Tensor& a) {
  if (a.numel() == 0) shape_error("mean", "empty tensor");
  return scale(sum(a), 1.0 / static_cast<double>(a.numel()));
}

Tensor mean_over_sequence(const Tensor& a) {
  if (a.rank() != 3 || a.dim(1) == 0) shape_error("mean_over_sequence", shape_str(a.shape()));
  const std::size_t batch = a.dim(0);
  const std::size_t len = a.dim(1);
  const std::size_t c = a.dim(2);
  Tensor out = make_result({batch, c}, {&a}, "mean_over_sequence");
  auto o = out.mutable_data();
  const auto x = a.data();
  const double inv = 1.0 / static_cast<double>(len);
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t l = 0; l < len; ++l) {
      for (std::size_t j = 0; j < c; ++j) o[b * c + j] += x[(b * len + l) * c + j];
    }
    for (std::size_t j = 0; j < c; ++j) o[b * c + j] *= inv;
  }
  if (out.requires_grad()) {
    out.node()->backward = [batch, len, c, inv](Node& self) {
      auto g = self.parents[0]->ensure_grad();
      for (std::size_t b = 0; b < batch; ++b) {
        for (std::size_t l = 0; l < len; ++l) {
          for (std::size_t j = 0; j < c; ++j) g[(b * len + l) * c + j] += self.grad[b * c + j] * inv;
        }
      }
    };
  }
  return out;
}

// ---------------------------------------------------------------------------
// shape

Tensor reshape(const Tensor& a, Shape shape) {
  if (shape_numel(shape) != a.numel()) {
    shape_error("reshape", shape_str(a.shape()) + " -> " + shape_str(shape));
  }
  Tensor out = make_result(std::move(shape), {&a}, "reshape");
  std::copy(a.data().begin(), a.data().end(), out.mutable_data().begin());
  if (out.requires_grad()) {
    out.node()->backward = [](Node& self) {
      auto g = self.parents[0]->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    };
  }
  return out;
}

Tensor transpose(const Tensor& a) {
  if (a.rank() != 2 && a.rank() != 3) shape_error("transpose", shape_str(a.shape()));
  const std::size_t batch = a.rank() == 3 ? a.dim(0) : 1;
  const std::size_t rows = a.dim(a.rank() - 2);
  const std::size_t cols = a.dim(a.rank() - 1);
  Shape shape = a.shape();
  std::swap(shape[shape.size() - 1], shape[shape.size() - 2]);
  Tensor out = make_result(std::move(shape), {&a}, "transpose");
  auto o = out.mutable_data();
  const auto x = a.data();
  for (std::size_t b = 0; b < batch; ++b) {
    const std::size_t base = b * rows * cols;
    for (std::size_t i = 0; i < rows; ++i) {
      for (std::size_t j = 0; j < cols; ++j) o[base + j * rows + i] = x[base + i * cols + j];
    }
  }
  if (out.requires_grad()) {
    out.node()->backward = [batch, rows, cols](Node& self) {
      auto g = self.parents[0]->ensure_grad();
      for (std::size_t b = 0; b < batch; ++b) {
        const std::size_t base = b * rows * cols;
        for (std::size_t i = 0; i < rows; ++i) {
          for (std::size_t j = 0; j < cols; ++j) g[base + i * cols + j] += self.grad[base + j * rows + i];
        }
      }
    };
  }
  return out;
}

Tensor concat_last(const std::vector<Tensor>& parts) {
  if (parts.empty()) shape_error("concat_last", "no inputs");
  const Shape& first = parts.front().shape();
  const std::size_t rows = parts.front().numel() / first.back();
  std::size_t total = 0;
  std::vector<std::size_t> widths;
  for (const Tensor& p : parts) {
    if (p.rank() != first.size() ||
        !std::equal(first.begin(), first.end() - 1, p.shape().begin())) {
      shape_error("concat_last", shape_str(first) + " vs " + shape_str(p.shape()));
    }
    widths.push_back(p.shape().back());
    total += p.shape().back();
  }
  Shape shape = first;
  shape.back() = total;
  auto node = std::make_shared<Node>();
  node->shape = shape;
  node->value.assign(rows * total, 0.0);
  node->op = "concat_last";
  bool needs = false;
  if (t_grad_enabled) {
    for (const Tensor& p : parts) needs = needs || p.requires_grad();
  }
  node->requires_grad = needs;
  std::size_t offset = 0;
  for (const Tensor& p : parts) {
    const std::size_t w = p.shape().back();
    const auto x = p.data();
    for (std::size_t r = 0; r < rows; ++r) {
      std::copy_n(x.begin() + static_cast<std::ptrdiff_t>(r * w), w,
                  node->value.begin() + static_cast<std::ptrdiff_t>(r * total + offset));
    }
    offset += w;
  }
  if (needs) {
    for (const Tensor& p : parts) node->parents.push_back(p.shared());
    node->backward = [rows, total, widths](Node& self) {
      std::size_t offset = 0;
      for (std::size_t k = 0; k < self.parents.size(); ++k) {
        Node& parent = *self.parents[k];
        const std::size_t w = widths[k];
        if (wants_grad(parent)) {
          auto g = parent.ensure_grad();
          for (std::size_t r = 0; r < rows; ++r) {
            for (std::size_t j = 0; j < w; ++j) g[r * w + j] += self.grad[r * total + offset + j];
          }
        }
        offset += w;
      }
    };
  }
  return Tensor(std::move(node));
}

// ---------------------------------------------------------------------------
// matmul

namespace {

// c[m x n] += a[m x k] . b[k x n]
void gemm_nn(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
             std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    double* crow = c + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = a[i * k + p];
      if (av == 0.0) continue;
      const double* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// da[m x k] += dc[m x n] . b[k x n]^T
void gemm_nt(const double* dc, const double* b, double* da, std::size_t m, std::size_t k,
             std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* drow = dc + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double* brow = b + p * n;
      da[i * k + p] += dot(drow, brow, n);
    }
  }
}

// db[k x n] += a[m x k]^T . dc[m x n]
void gemm_tn(const double* a, const double* dc, double* db, std::size_t m, std::size_t k,
             std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* drow = dc + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = a[i * k + p];
      if (av == 0.0) continue;
      double* brow = db + p * n;
      for (std::size_t j = 0; j < n; ++j) brow[j] += av * drow[j];
    }
  }
}

// Row-block partitioned gemm_nn for the shared-weight case.
void par_gemm_nn(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
                 std::size_t n) {
  const std::size_t blocks = std::min<std::size_t>(m, 64);
  parallel_for(blocks, [&](std::size_t blk) {
    const std::size_t r0 = m * blk / blocks;
    const std::size_t r1 = m * (blk + 1) / blocks;
    gemm_nn(a + r0 * k, b, c + r0 * n, r1 - r0, k, n);
  });
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() == 2 && b.rank() == 2) {
    const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
    if (b.dim(0) != k) shape_error("matmul", shape_str(a.shape()) + " . " + shape_str(b.shape()));
    Tensor out = make_result({m, n}, {&a, &b}, "matmul");
    par_gemm_nn(a.data().data(), b.data().data(), out.mutable_data().data(), m, k, n);
    if (out.requires_grad()) {
      auto na = a.shared();
      auto nb = b.shared();
      out.node()->backward = [na, nb, m, k, n](Node& self) {
        if (wants_grad(*na)) {
          gemm_nt(self.grad.data(), nb->value.data(), na->ensure_grad().data(), m, k, n);
        }
        if (wants_grad(*nb)) {
          gemm_tn(na->value.data(), self.grad.data(), nb->ensure_grad().data(), m, k, n);
        }
      };
    }
    return out;
  }
  if (a.rank() == 3 && b.rank() == 2) {
    const std::size_t batch = a.dim(0), m = a.dim(1), k = a.dim(2), n = b.dim(1);
    if (b.dim(0) != k) shape_error("matmul", shape_str(a.shape()) + " . " + shape_str(b.shape()));
    Tensor out = make_result({batch, m, n}, {&a, &b}, "matmul");
    const std::size_t rows = batch * m;
    par_gemm_nn(a.data().data(), b.data().data(), out.mutable_data().data(), rows, k, n);
    if (out.requires_grad()) {
      auto na = a.shared();
      auto nb = b.shared();
      out.node()->backward = [na, nb, rows, k, n](Node& self) {
        if (wants_grad(*na)) {
          double* da = na->ensure_grad().data();
          const std::size_t blocks = std::min<std::size_t>(rows, 64);
          parallel_for(blocks, [&](std::size_t blk) {
            const std::size_t r0 = rows * blk / blocks;
            const std::size_t r1 = rows * (blk + 1) / blocks;
            gemm_nt(self.grad.data() + r0 * n, nb->value.data(), da + r0 * k, r1 - r0, k, n);
          });
        }
        if (wants_grad(*nb)) {
          gemm_tn(na->value.data(), self.grad.data(), nb->ensure_grad().data(), rows, k, n);
        }
      };
    }
    return out;
  }
  if (a.rank() == 3 && b.rank() == 3) {
    const std::size_t batch = a.dim(0), m = a.dim(1), k = a.dim(2), n = b.dim(2);
    if (b.dim(0) != batch || b.dim(1) != k) {
      shape_error("matmul", shape_str(a.shape()) + " . " + shape_str(b.shape()));
    }
    Tensor out = make_result({batch, m, n}, {&a, &b}, "matmul");
    const double* pa = a.data().data();
    const double* pb = b.data().data();
    double* pc = out.mutable_data().data();
    parallel_for(batch, [&](std::size_t s) {
      gemm_nn(pa + s * m * k, pb + s * k * n, pc + s * m * n, m, k, n);
    });
    if (out.requires_grad()) {
      auto na = a.shared();
      auto nb = b.shared();
      out.node()->backward = [na, nb, batch, m, k, n](Node& self) {
        double* da = wants_grad(*na) ? na->ensure_grad().data() : nullptr;
        double* db = wants_grad(*nb) ? nb->ensure_grad().data() : nullptr;
        parallel_for(batch, [&](std::size_t s) {
          const double* dc = self.grad.data() + s * m * n;
          if (da) gemm_nt(dc, nb->value.data() + s * k * n, da + s * m * k, m, k, n);
          if (db) gemm_tn(na->value.data() + s * m * k, dc, db + s * k * n, m, k, n);
        });
      };
    }
    return out;
  }
  shape_error("matmul", shape_str(a.shape()) + " . " + shape_str(b.shape()));
}

// ---------------------------------------------------------------------------
// conv / pool

Tensor conv1d(const Tensor& x, const Tensor& w, const Tensor& bias, Padding padding) {
  if ((x.rank() != 2 && x.rank() != 3) || w.rank() != 3) {
    shape_error("conv1d", shape_str(x.shape()) + " * " + shape_str(w.shape()));
  }
  const bool batched = x.rank() == 3;
  const std::size_t batch = batched ? x.dim(0) : 1;
  const std::size_t c_in = x.dim(batched ? 1 : 0);
  const std::size_t len = x.dim(batched ? 2 : 1);
  const std::size_t c_out = w.dim(0);
  const std::size_t k = w.dim(2);
  if (w.dim(1) != c_in || k == 0) {
    shape_error("conv1d", "input channels " + std::to_string(c_in) + " vs weight " +
                              shape_str(w.shape()));
  }
  if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != c_out)) {
    shape_error("conv1d", "bias " + shape_str(bias.shape()));
  }
  std::size_t out_len = len;
  std::ptrdiff_t pad = static_cast<std::ptrdiff_t>((k - 1) / 2);
  if (padding == Padding::kValid) {
    if (k > len) shape_error("conv1d", "kernel longer than input for valid padding");
    out_len = len - k + 1;
    pad = 0;
  }
  Shape shape = batched ? Shape{batch, c_out, out_len} : Shape{c_out, out_len};
  Tensor out = make_result(std::move(shape), {&x, &w, &bias}, "conv1d");

  const auto sl = static_cast<std::ptrdiff_t>(len);
  const auto so = static_cast<std::ptrdiff_t>(out_len);
  // For tap j the valid output range is [lo, hi) with input index l + j - pad.
  auto tap_range = [sl, so, pad](std::size_t j) {
    const std::ptrdiff_t off = static_cast<std::ptrdiff_t>(j) - pad;
    const std::ptrdiff_t lo = std::max<std::ptrdiff_t>(0, -off);
    const std::ptrdiff_t hi = std::min<std::ptrdiff_t>(so, sl - off);
    return std::tuple{off, lo, hi};
  };

  const double* px = x.data().data();
  const double* pw = w.data().data();
  double* po = out.mutable_data().data();
  const double* pbias = bias.defined() ? bias.data().data() : nullptr;
  parallel_for(batch * c_out, [&](std::size_t idx) {
    const std::size_t b = idx / c_out;
    const std::size_t co = idx % c_out;
    double* orow = po + (b * c_out + co) * out_len;
    if (pbias) std::fill(orow, orow + out_len, pbias[co]);
    for (std::size_t ci = 0; ci < c_in; ++ci) {
      const double* xrow = px + (b * c_in + ci) * len;
      for (std::size_t j = 0; j < k; ++j) {
        const double wv = pw[(co * c_in + ci) * k + j];
        const auto [off, lo, hi] = tap_range(j);
        for (std::ptrdiff_t l = lo; l < hi; ++l) orow[l] += wv * xrow[l + off];
      }
    }
  });

  if (out.requires_grad()) {
    auto nx = x.shared();
    auto nw = w.shared();
    auto nbias = bias.defined() ? bias.shared() : nullptr;
    out.node()->backward = [nx, nw, nbias, batch, c_in, c_out, k, len, out_len,
                            tap_range](Node& self) {
      const double* dout = self.grad.data();
      if (wants_grad(*nx)) {
        double* dx = nx->ensure_grad().data();
        const double* pw = nw->value.data();
        parallel_for(batch * c_in, [&](std::size_t idx) {
          const std::size_t b = idx / c_in;
          const std::size_t ci = idx % c_in;
          double* dxrow = dx + (b * c_in + ci) * len;
          for (std::size_t co = 0; co < c_out; ++co) {
            const double* drow = dout + (b * c_out + co) * out_len;
            for (std::size_t j = 0; j < k; ++j) {
              const double wv = pw[(co * c_in + ci) * k + j];
              const auto [off, lo, hi] = tap_range(j);
              for (std::ptrdiff_t l = lo; l < hi; ++l) dxrow[l + off] += wv * drow[l];
            }
          }
        });
      }
      if (wants_grad(*nw)) {
        double* dw = nw->ensure_grad().data();
        const double* px = nx->value.data();
        parallel_for(c_out, [&](std::size_t co) {
          for (std::size_t b = 0; b < batch; ++b) {
            const double* drow = dout + (b * c_out + co) * out_len;
            for (std::size_t ci = 0; ci < c_in; ++ci) {
              const double* xrow = px + (b * c_in + ci) * len;
              for (std::size_t j = 0; j < k; ++j) {
                const auto [off, lo, hi] = tap_range(j);
                if (hi > lo) {
                  dw[(co * c_in + ci) * k + j] +=
                      dot(drow + lo, xrow + lo + off, static_cast<std::size_t>(hi - lo));
                }
              }
            }
          }
        });
      }
      if (nbias && wants_grad(*nbias)) {
        auto db = nbias->ensure_grad();
        for (std::size_t b = 0; b < batch; ++b) {
          for (std::size_t co = 0; co < c_out; ++co) {
            const double* drow = dout + (b * c_out + co) * out_len;
            double acc = 0.0;
            for (std::size_t l = 0; l < out_len; ++l) acc += drow[l];
            db[co] += acc;
          }
        }
      }
    };
  }
  return out;
}

Tensor maxpool1d(const Tensor& x, std::size_t window, std::size_t stride) {
  if ((x.rank() != 2 && x.rank() != 3) || window == 0 || stride == 0) {
    shape_error("maxpool1d", shape_str(x.shape()));
  }
  const std::size_t len = x.shape().back();
  if (len < window) {
    shape_error("maxpool1d", "length " + std::to_string(len) + " < window " + std::to_string(window));
  }
  const std::size_t rows = x.numel() / len;
  const std::size_t out_len = (len - window) / stride + 1;
  Shape shape = x.shape();
  shape.back() = out_len;
  Tensor out = make_result(std::move(shape), {&x}, "maxpool1d");
  auto argmax = std::make_shared<std::vector<std::size_t>>(rows * out_len);
  const double* px = x.data().data();
  double* po = out.mutable_data().data();
  parallel_for(rows, [&](std::size_t r) {
    const double* xrow = px + r * len;
    for (std::size_t i = 0; i < out_len; ++i) {
      std::size_t best = i * stride;
      for (std::size_t j = best + 1; j < i * stride + window; ++j) {
        if (xrow[j] > xrow[best]) best = j;
      }
      po[r * out_len + i] = xrow[best];
      (*argmax)[r * out_len + i] = r * len + best;
    }
  });
  if (out.requires_grad()) {
    out.node()->backward = [argmax](Node& self) {
      auto g = self.parents[0]->ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[(*argmax)[i]] += self.grad[i];
    };
  }
  return out;
}

// ---------------------------------------------------------------------------
// softmax / masking / normalization

Tensor softmax_rowwise(const Tensor& x) {
  if (x.rank() == 0 || x.shape().back() == 0) shape_error("softmax_rowwise", shape_str(x.shape()));
  const std::size_t c = x.shape().back();
  const std::size_t rows = x.numel() / c;
  Tensor out = make_result(x.shape(), {&x}, "softmax_rowwise");
  const double* px = x.data().data();
  double* po = out.mutable_data().data();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = px + r * c;
    double* orow = po + r * c;
    const double mx = *std::max_element(xr, xr + c);
    double z = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      orow[j] = std::exp(xr[j] - mx);
      z += orow[j];
    }
    for (std::size_t j = 0; j < c; ++j) orow[j] /= z;
  }
  if (out.requires_grad()) {
    out.node()->backward = [rows, c](Node& self) {
      auto g = self.parents[0]->ensure_grad();
      for (std::size_t r = 0; r < rows; ++r) {
        const double* y = self.value.data() + r * c;
        const double* dy = self.grad.data() + r * c;
        double dot = 0.0;
        for (std::size_t j = 0; j < c; ++j) dot += dy[j] * y[j];
        for (std::size_t j = 0; j < c; ++j) g[r * c + j] += y[j] * (dy[j] - dot);
      }
    };
  }
  return out;
}

Tensor topm_mask(const Tensor& x, std::size_t m, double mask_value) {
  if (x.rank() == 0 || m == 0) shape_error("topm_mask", shape_str(x.shape()) + " m=" + std::to_string(m));
  const std::size_t c = x.shape().back();
  const std::size_t rows = x.numel() / c;
  Tensor out = make_result(x.shape(), {&x}, "topm_mask");
  auto keep = std::make_shared<std::vector<char>>(x.numel(), 1);
  const double* px = x.data().data();
  double* po = out.mutable_data().data();
  std::copy(px, px + x.numel(), po);
  if (m < c) {
    std::vector<std::size_t> idx(c);
    for (std::size_t r = 0; r < rows; ++r) {
      const double* xr = px + r * c;
      std::iota(idx.begin(), idx.end(), std::size_t{0});
      std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(m), idx.end(),
                        [xr](std::size_t a, std::size_t b) {
                          return xr[a] > xr[b] || (xr[a] == xr[b] && a < b);
                        });
      std::fill(keep->begin() + static_cast<std::ptrdiff_t>(r * c),
                keep->begin() + static_cast<std::ptrdiff_t>((r + 1) * c), 0);
      for (std::size_t t = 0; t < m; ++t) (*keep)[r * c + idx[t]] = 1;
      for (std::size_t j = 0; j < c; ++j) {
        if (!(*keep)[r * c + j]) po[r * c + j] = mask_value;
      }
    }
  }
  if (out.requires_grad()) {
    out.node()->backward = [keep](Node& self) {
      auto g = self.parents[0]->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) {
        if ((*keep)[i]) g[i] += self.grad[i];
      }
    };
  }
  return out;
}

Tensor layer_norm(const Tensor& x, const Tensor& g, const Tensor& b, double eps) {
  if (x.rank() == 0) shape_error("layer_norm", shape_str(x.shape()));
  const std::size_t c = x.shape().back();
  if (g.numel() != c || b.numel() != c || c == 0) {
    shape_error("layer_norm", shape_str(x.shape()) + " with gain " + shape_str(g.shape()));
  }
  const std::size_t rows = x.numel() / c;
  Tensor out = make_result(x.shape(), {&x, &g, &b}, "layer_norm");
  auto xhat = std::make_shared<std::vector<double>>(x.numel());
  auto inv_std = std::make_shared<std::vector<double>>(rows);
  const double* px = x.data().data();
  const double* pg = g.data().data();
  const double* pb = b.data().data();
  double* po = out.mutable_data().data();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = px + r * c;
    double mu = 0.0;
    for (std::size_t j = 0; j < c; ++j) mu += xr[j];
    mu /= static_cast<double>(c);
    double var = 0.0;
    for (std::size_t j = 0; j < c; ++j) var += (xr[j] - mu) * (xr[j] - mu);
    var /= static_cast<double>(c);
    const double is = 1.0 / std::sqrt(var + eps);
    (*inv_std)[r] = is;
    for (std::size_t j = 0; j < c; ++j) {
      const double h = (xr[j] - mu) * is;
      (*xhat)[r * c + j] = h;
      po[r * c + j] = h * pg[j] + pb[j];
    }
  }
  if (out.requires_grad()) {
    auto nx = x.shared();
    auto ng = g.shared();
    auto nb = b.shared();
    out.node()->backward = [nx, ng, nb, xhat, inv_std, rows, c](Node& self) {
      if (wants_grad(*nx)) {
        auto dx = nx->ensure_grad();
        std::vector<double> dh(c);
        for (std::size_t r = 0; r < rows; ++r) {
          double sum_dh = 0.0, sum_dh_h = 0.0;
          for (std::size_t j = 0; j < c; ++j) {
            dh[j] = self.grad[r * c + j] * ng->value[j];
            sum_dh += dh[j];
            sum_dh_h += dh[j] * (*xhat)[r * c + j];
          }
          const double k = (*inv_std)[r] / static_cast<double>(c);
          for (std::size_t j = 0; j < c; ++j) {
            dx[r * c + j] += k * (static_cast<double>(c) * dh[j] - sum_dh -
                                  (*xhat)[r * c + j] * sum_dh_h);
          }
        }
      }
      if (wants_grad(*ng)) {
        auto dg = ng->ensure_grad();
        for (std::size_t r = 0; r < rows; ++r) {
          for (std::size_t j = 0; j < c; ++j) dg[j] += self.grad[r * c + j] * (*xhat)[r * c + j];
        }
      }
      if (wants_grad(*nb)) {
        auto db = nb->ensure_grad();
        for (std::size_t r = 0; r < rows; ++r) {
          for (std::size_t j = 0; j < c; ++j) db[j] += self.grad[r * c + j];
        }
      }
    };
  }
  return out;
}

Tensor batch_norm1d(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                    BatchNormState& state, bool training) {
  if (x.rank() != 3) shape_error("batch_norm1d", shape_str(x.shape()));
  const std::size_t batch = x.dim(0), c = x.dim(1), len = x.dim(2);
  if (gamma.numel() != c || beta.numel() != c || state.running_mean.numel() != c ||
      state.running_var.numel() != c) {
    shape_error("batch_norm1d", "parameters do not match " + std::to_string(c) + " channels");
  }
  const std::size_t count = batch * len;
  Tensor out = make_result(x.shape(), {&x, &gamma, &beta}, "batch_norm1d");
  auto xhat = std::make_shared<std::vector<double>>(x.numel());
  auto inv_std = std::make_shared<std::vector<double>>(c);
  const double* px = x.data().data();
  double* po = out.mutable_data().data();
  const double* pg = gamma.data().data();
  const double* pb = beta.data().data();
  auto rm = state.running_mean.mutable_data();
  auto rv = state.running_var.mutable_data();
  const bool use_batch = training;
  parallel_for(c, [&](std::size_t ch) {
    double mu, var;
    if (use_batch) {
      mu = 0.0;
      for (std::size_t b = 0; b < batch; ++b) {
        const double* xr = px + (b * c + ch) * len;
        for (std::size_t l = 0; l < len; ++l) mu += xr[l];
      }
      mu /= static_cast<double>(count);
      var = 0.0;
      for (std::size_t b = 0; b < batch; ++b) {
        const double* xr = px + (b * c + ch) * len;
        for (std::size_t l = 0; l < len; ++l) var += (xr[l] - mu) * (xr[l] - mu);
      }
      const double unbiased = count > 1 ? var / static_cast<double>(count - 1) : 0.0;
      var /= static_cast<double>(count);
      rm[ch] = (1.0 - state.momentum) * rm[ch] + state.momentum * mu;
      rv[ch] = (1.0 - state.momentum) * rv[ch] + state.momentum * unbiased;
    } else {
      mu = rm[ch];
      var = rv[ch];
    }
    const double is = 1.0 / std::sqrt(var + state.eps);
    (*inv_std)[ch] = is;
    for (std::size_t b = 0; b < batch; ++b) {
      const std::size_t base = (b * c + ch) * len;
      for (std::size_t l = 0; l < len; ++l) {
        const double h = (px[base + l] - mu) * is;
        (*xhat)[base + l] = h;
        po[base + l] = h * pg[ch] + pb[ch];
      }
    }
  });
  if (out.requires_grad()) {
    auto nx = x.shared();
    auto ng = gamma.shared();
    auto nb = beta.shared();
    out.node()->backward = [nx, ng, nb, xhat, inv_std, batch, c, len, count,
                            use_batch](Node& self) {
      double* dx = wants_grad(*nx) ? nx->ensure_grad().data() : nullptr;
      double* dg = wants_grad(*ng) ? ng->ensure_grad().data() : nullptr;
      double* db = wants_grad(*nb) ? nb->ensure_grad().data() : nullptr;
      parallel_for(c, [&](std::size_t ch) {
        double sum_dy = 0.0, sum_dy_h = 0.0;
        for (std::size_t b = 0; b < batch; ++b) {
          const std::size_t base = (b * c + ch) * len;
          for (std::size_t l = 0; l < len; ++l) {
            sum_dy += self.grad[base + l];
            sum_dy_h += self.grad[base + l] * (*xhat)[base + l];
          }
        }
        if (dg) dg[ch] += sum_dy_h;
        if (db) db[ch] += sum_dy;
        if (!dx) return;
        const double gk = ng->value[ch] * (*inv_std)[ch];
        const double n = static_cast<double>(count);
        for (std::size_t b = 0; b < batch; ++b) {
          const std::size_t base = (b * c + ch) * len;
          for (std::size_t l = 0; l < len; ++l) {
            if (use_batch) {
              dx[base + l] += gk / n *
                              (n * self.grad[base + l] - sum_dy - (*xhat)[base + l] * sum_dy_h);
            } else {
              dx[base + l] += gk * self.grad[base + l];
            }
          }
        }
      });
    };
  }
  return out;
}

// ---------------------------------------------------------------------------
// regularizers

namespace {

Tensor apply_mask(const Tensor& x, std::shared_ptr<std::vector<double>> mask, const char* op) {
  Tensor out = make_result(x.shape(), {&x}, op);
  auto o = out.mutable_data();
  const auto v = x.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = v[i] * (*mask)[i];
  if (out.requires_grad()) {
    out.node()->backward = [mask](Node& self) {
      auto g = self.parents[0]->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * (*mask)[i];
    };
  }
  return out;
}

}  // namespace

Tensor dropout(const Tensor& x, double rate, Rng& rng, bool training) {
  if (!(rate >= 0.0 && rate < 1.0)) throw Error(ErrorCode::kBadRate, "dropout rate must be in [0, 1)");
  if (!training || rate == 0.0) return x;
  const double keep_scale = 1.0 / (1.0 - rate);
  auto mask = std::make_shared<std::vector<double>>(x.numel());
  for (double& m : *mask) m = rng.uniform() < rate ? 0.0 : keep_scale;
  return apply_mask(x, std::move(mask), "dropout");
}

Tensor droppath(const Tensor& x, double rate, Rng& rng, bool training) {
  if (!(rate >= 0.0 && rate <= 1.0)) throw Error(ErrorCode::kBadRate, "droppath rate must be in [0, 1]");
  if (!training || rate == 0.0) return x;
  if (x.rank() == 0) shape_error("droppath", "scalar input");
  const std::size_t samples = x.dim(0);
  const std::size_t per = x.numel() / std::max<std::size_t>(samples, 1);
  auto mask = std::make_shared<std::vector<double>>(x.numel(), 0.0);
  if (rate < 1.0) {
    const double keep_scale = 1.0 / (1.0 - rate);
    for (std::size_t s = 0; s < samples; ++s) {
      const double m = rng.uniform() < rate ? 0.0 : keep_scale;
      std::fill_n(mask->begin() + static_cast<std::ptrdiff_t>(s * per), per, m);
    }
  }
  return apply_mask(x, std::move(mask), "droppath");
}

// ---------------------------------------------------------------------------
// losses

Tensor bce_with_logits(const Tensor& logits, const Tensor& targets) {
  require_same_shape("bce_with_logits", logits, targets);
  if (logits.numel() == 0) shape_error("bce_with_logits", "empty input");
  Tensor out = make_result({1}, {&logits}, "bce_with_logits");
  const auto z = logits.data();
  const auto y = targets.data();
  double acc = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) {
    acc += std::max(z[i], 0.0) - z[i] * y[i] + std::log1p(std::exp(-std::abs(z[i])));
  }
  const double n = static_cast<double>(z.size());
  out.mutable_data()[0] = acc / n;
  if (out.requires_grad()) {
    auto ny = targets.shared();
    out.node()->backward = [ny, n](Node& self) {
      Node& in = *self.parents[0];
      auto g = in.ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) {
        const double zi = in.value[i];
        const double s = zi >= 0.0 ? 1.0 / (1.0 + std::exp(-zi)) : std::exp(zi) / (1.0 + std::exp(zi));
        g[i] += self.grad[0] * (s - ny->value[i]) / n;
      }
    };
  }
  return out;
}

}  // namespace wfkit
