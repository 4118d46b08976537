#include "molrl/nn.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <unordered_set>

namespace molrl::nn {

namespace {

thread_local bool g_grad_enabled = true;

constexpr double kNegInf = -std::numeric_limits<double>::infinity();
const double kHalfLog2Pi = 0.5 * std::log(2.0 * 3.14159265358979323846);

bool track(std::initializer_list<const Tensor*> inputs) {
  if (!g_grad_enabled) return false;
  for (const Tensor* t : inputs) {
    if (t->requires_grad()) return true;
  }
  return false;
}

Tensor make(int rows, int cols, std::vector<double> value) {
  auto n = std::make_shared<Node>();
  n->rows = rows;
  n->cols = cols;
  n->value = std::move(value);
  return Tensor(std::move(n));
}

// Attach parents and a backward closure to a freshly computed result.
void attach(Tensor& out, std::initializer_list<const Tensor*> inputs, std::function<void(Node&)> fn) {
  Node* n = out.node();
  n->requires_grad = true;
  n->is_leaf = false;
  for (const Tensor* t : inputs) n->parents.push_back(t->shared());
  n->backward = std::move(fn);
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + a.shape_str() + " vs " + b.shape_str());
  }
}

template <typename F, typename D>
Tensor unary(const Tensor& a, F f, D dfdx) {
  std::vector<double> v(a.size());
  const auto x = a.data();
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = f(x[i]);
  Tensor out = make(a.rows(), a.cols(), std::move(v));
  if (track({&a})) {
    Node* an = a.node();
    attach(out, {&a}, [an, dfdx](Node& self) {
      if (!an->requires_grad) return;
      an->ensure_grad();
      for (std::size_t i = 0; i < self.value.size(); ++i) {
        an->grad[i] += self.grad[i] * dfdx(an->value[i], self.value[i]);
      }
    });
  }
  return out;
}

}  // namespace

// ---------------------------------------------------------------------------

Tensor Tensor::constant(int rows, int cols, std::vector<double> data) {
  if (rows < 0 || cols < 0 || data.size() != static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols)) {
    throw ShapeError("Tensor::constant: data length " + std::to_string(data.size()) + " does not match [" +
                     std::to_string(rows) + " x " + std::to_string(cols) + "]");
  }
  return make(rows, cols, std::move(data));
}

Tensor Tensor::zeros(int rows, int cols) {
  return make(rows, cols, std::vector<double>(static_cast<std::size_t>(rows) * cols, 0.0));
}

Tensor Tensor::scalar(double v) { return make(1, 1, {v}); }

Tensor Tensor::column(std::vector<double> data) {
  const int n = static_cast<int>(data.size());
  return make(n, 1, std::move(data));
}

Tensor Tensor::parameter(int rows, int cols, std::vector<double> data) {
  Tensor t = constant(rows, cols, std::move(data));
  t.node()->requires_grad = true;
  return t;
}

int Tensor::rows() const { return node_->rows; }
int Tensor::cols() const { return node_->cols; }
std::size_t Tensor::size() const { return node_->value.size(); }
std::string Tensor::shape_str() const {
  return "[" + std::to_string(node_->rows) + " x " + std::to_string(node_->cols) + "]";
}
std::span<const double> Tensor::data() const { return node_->value; }
std::span<double> Tensor::mutable_data() { return node_->value; }
double Tensor::item() const {
  if (size() != 1) throw ShapeError("item() on non-scalar " + shape_str());
  return node_->value[0];
}
double Tensor::at(int r, int c) const { return node_->value[static_cast<std::size_t>(r) * node_->cols + c]; }
bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }
std::span<const double> Tensor::grad() const { return node_->grad; }
void Tensor::zero_grad() {
  node_->grad.clear();
  node_->backward_done = false;
}

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }
bool grad_enabled() { return g_grad_enabled; }

void backward(const Tensor& loss) {
  if (!loss.defined() || loss.size() != 1) {
    throw ShapeError("backward: loss must be a scalar, got " + (loss.defined() ? loss.shape_str() : "undefined"));
  }
  Node* root = loss.node();
  if (root->backward_done) throw std::logic_error("backward: graph already differentiated");
  if (!root->requires_grad) throw std::logic_error("backward: loss does not depend on any parameter");

  // Iterative post-order DFS over nodes that carry gradients.
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, std::size_t>> stack{{root, 0}};
  visited.insert(root);
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* p = node->parents[next++].get();
      if (p->requires_grad && visited.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  for (Node* n : order) {
    if (!n->is_leaf) n->grad.assign(n->value.size(), 0.0);
  }
  root->ensure_grad();
  root->grad[0] = 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    if ((*it)->backward) (*it)->backward(**it);
  }
  root->backward_done = true;
}

// ---------------------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.cols() != b.rows()) throw ShapeError("matmul: shape mismatch " + a.shape_str() + " x " + b.shape_str());
  const int n = a.rows(), k = a.cols(), m = b.cols();
  std::vector<double> c(static_cast<std::size_t>(n) * m, 0.0);
  const double* A = a.data().data();
  const double* B = b.data().data();
  for (int i = 0; i < n; ++i) {
    double* ci = c.data() + static_cast<std::size_t>(i) * m;
    for (int p = 0; p < k; ++p) {
      const double aip = A[static_cast<std::size_t>(i) * k + p];
      if (aip == 0.0) continue;
      const double* bp = B + static_cast<std::size_t>(p) * m;
      for (int j = 0; j < m; ++j) ci[j] += aip * bp[j];
    }
  }
  Tensor out = make(n, m, std::move(c));
  if (track({&a, &b})) {
    Node* an = a.node();
    Node* bn = b.node();
    attach(out, {&a, &b}, [an, bn, n, k, m](Node& self) {
      const double* G = self.grad.data();
      if (an->requires_grad) {
        an->ensure_grad();
        const double* Bv = bn->value.data();
        std::vector<double> bt(static_cast<std::size_t>(m) * k);
        for (int p = 0; p < k; ++p) {
          for (int j = 0; j < m; ++j) bt[static_cast<std::size_t>(j) * k + p] = Bv[static_cast<std::size_t>(p) * m + j];
        }
        for (int i = 0; i < n; ++i) {
          const double* gi = G + static_cast<std::size_t>(i) * m;
          double* dai = an->grad.data() + static_cast<std::size_t>(i) * k;
          for (int j = 0; j < m; ++j) {
            const double g = gi[j];
            if (g == 0.0) continue;
            const double* btj = bt.data() + static_cast<std::size_t>(j) * k;
            for (int p = 0; p < k; ++p) dai[p] += g * btj[p];
          }
        }
      }
      if (bn->requires_grad) {
        bn->ensure_grad();
        const double* Av = an->value.data();
        for (int i = 0; i < n; ++i) {
          const double* gi = G + static_cast<std::size_t>(i) * m;
          for (int p = 0; p < k; ++p) {
            const double aip = Av[static_cast<std::size_t>(i) * k + p];
            if (aip == 0.0) continue;
            double* dbp = bn->grad.data() + static_cast<std::size_t>(p) * m;
            for (int j = 0; j < m; ++j) dbp[j] += aip * gi[j];
          }
        }
      }
    });
  }
  return out;
}

namespace {

template <int Sign>
Tensor add_like(const Tensor& a, const Tensor& b, const char* name) {
  require_same_shape(a, b, name);
  std::vector<double> v(a.size());
  const auto x = a.data();
  const auto y = b.data();
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = x[i] + Sign * y[i];
  Tensor out = make(a.rows(), a.cols(), std::move(v));
  if (track({&a, &b})) {
    Node* an = a.node();
    Node* bn = b.node();
    attach(out, {&a, &b}, [an, bn](Node& self) {
      if (an->requires_grad) {
        an->ensure_grad();
        for (std::size_t i = 0; i < self.grad.size(); ++i) an->grad[i] += self.grad[i];
      }
      if (bn->requires_grad) {
        bn->ensure_grad();
        for (std::size_t i = 0; i < self.grad.size(); ++i) bn->grad[i] += Sign * self.grad[i];
      }
    });
  }
  return out;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) { return add_like<1>(a, b, "add"); }
Tensor sub(const Tensor& a, const Tensor& b) { return add_like<-1>(a, b, "sub"); }

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  std::vector<double> v(a.size());
  const auto x = a.data();
  const auto y = b.data();
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = x[i] * y[i];
  Tensor out = make(a.rows(), a.cols(), std::move(v));
  if (track({&a, &b})) {
    Node* an = a.node();
    Node* bn = b.node();
    attach(out, {&a, &b}, [an, bn](Node& self) {
      if (an->requires_grad) {
        an->ensure_grad();
        for (std::size_t i = 0; i < self.grad.size(); ++i) an->grad[i] += self.grad[i] * bn->value[i];
      }
      if (bn->requires_grad) {
        bn->ensure_grad();
        for (std::size_t i = 0; i < self.grad.size(); ++i) bn->grad[i] += self.grad[i] * an->value[i];
      }
    });
  }
  return out;
}

Tensor add_row(const Tensor& a, const Tensor& bias) {
  if (bias.rows() != 1 || bias.cols() != a.cols()) {
    throw ShapeError("add_row: shape mismatch " + a.shape_str() + " + " + bias.shape_str());
  }
  const int n = a.rows(), m = a.cols();
  std::vector<double> v(a.data().begin(), a.data().end());
  const auto b = bias.data();
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < m; ++j) v[static_cast<std::size_t>(i) * m + j] += b[j];
  }
  Tensor out = make(n, m, std::move(v));
  if (track({&a, &bias})) {
    Node* an = a.node();
    Node* bn = bias.node();
    attach(out, {&a, &bias}, [an, bn, n, m](Node& self) {
      if (an->requires_grad) {
        an->ensure_grad();
        for (std::size_t i = 0; i < self.grad.size(); ++i) an->grad[i] += self.grad[i];
      }
      if (bn->requires_grad) {
        bn->ensure_grad();
        for (int i = 0; i < n; ++i) {
          for (int j = 0; j < m; ++j) bn->grad[j] += self.grad[static_cast<std::size_t>(i) * m + j];
        }
      }
    });
  }
  return out;
}

Tensor mul_col(const Tensor& a, const Tensor& w) {
  if (w.cols() != 1 || w.rows() != a.rows()) {
    throw ShapeError("mul_col: shape mismatch " + a.shape_str() + " * " + w.shape_str());
  }
  const int n = a.rows(), m = a.cols();
  std::vector<double> v(a.size());
  const auto x = a.data();
  const auto c = w.data();
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < m; ++j) v[static_cast<std::size_t>(i) * m + j] = x[static_cast<std::size_t>(i) * m + j] * c[i];
  }
  Tensor out = make(n, m, std::move(v));
  if (track({&a, &w})) {
    Node* an = a.node();
    Node* wn = w.node();
    attach(out, {&a, &w}, [an, wn, n, m](Node& self) {
      if (an->requires_grad) {
        an->ensure_grad();
        for (int i = 0; i < n; ++i) {
          for (int j = 0; j < m; ++j) {
            const std::size_t k = static_cast<std::size_t>(i) * m + j;
            an->grad[k] += self.grad[k] * wn->value[i];
          }
        }
      }
      if (wn->requires_grad) {
        wn->ensure_grad();
        for (int i = 0; i < n; ++i) {
          double s = 0.0;
          for (int j = 0; j < m; ++j) {
            const std::size_t k = static_cast<std::size_t>(i) * m + j;
            s += self.grad[k] * an->value[k];
          }
          wn->grad[i] += s;
        }
      }
    });
  }
  return out;
}

Tensor scale(const Tensor& a, double s) {
  return unary(a, [s](double x) { return s * x; }, [s](double, double) { return s; });
}

Tensor add_scalar(const Tensor& a, double s) {
  return unary(a, [s](double x) { return x + s; }, [](double, double) { return 1.0; });
}

Tensor repeat_rows(const Tensor& x, int n) {
  if (x.rows() != 1) throw ShapeError("repeat_rows: expected a single row, got " + x.shape_str());
  const int m = x.cols();
  std::vector<double> v(static_cast<std::size_t>(n) * m);
  for (int i = 0; i < n; ++i) std::copy(x.data().begin(), x.data().end(), v.begin() + static_cast<long>(i) * m);
  Tensor out = make(n, m, std::move(v));
  if (track({&x})) {
    Node* xn = x.node();
    attach(out, {&x}, [xn, n, m](Node& self) {
      if (!xn->requires_grad) return;
      xn->ensure_grad();
      for (int i = 0; i < n; ++i) {
        for (int j = 0; j < m; ++j) xn->grad[j] += self.grad[static_cast<std::size_t>(i) * m + j];
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------

Tensor tanh(const Tensor& a) {
  return unary(a, [](double x) { return std::tanh(x); }, [](double, double y) { return 1.0 - y * y; });
}

Tensor sigmoid(const Tensor& a) {
  return unary(
      a,
      [](double x) { return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x)); },
      [](double, double y) { return y * (1.0 - y); });
}

namespace {
double stable_softplus(double x) { return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }
double stable_sigmoid(double x) { return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x)); }
}  // namespace

Tensor softplus(const Tensor& a) {
  return unary(a, stable_softplus, [](double x, double) { return stable_sigmoid(x); });
}

Tensor shifted_softplus(const Tensor& a) {
  static const double kLog2 = std::log(2.0);
  return unary(
      a, [](double x) { return stable_softplus(x) - kLog2; }, [](double x, double) { return stable_sigmoid(x); });
}

Tensor exp(const Tensor& a) {
  return unary(a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Tensor square(const Tensor& a) {
  return unary(a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

Tensor clamp(const Tensor& a, double lo, double hi) {
  return unary(
      a, [lo, hi](double x) { return std::clamp(x, lo, hi); },
      [lo, hi](double x, double) { return (x > lo && x < hi) ? 1.0 : 0.0; });
}

Tensor minimum(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "minimum");
  std::vector<double> v(a.size());
  const auto x = a.data();
  const auto y = b.data();
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = std::min(x[i], y[i]);
  Tensor out = make(a.rows(), a.cols(), std::move(v));
  if (track({&a, &b})) {
    Node* an = a.node();
    Node* bn = b.node();
    attach(out, {&a, &b}, [an, bn](Node& self) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) {
        const bool take_a = an->value[i] <= bn->value[i];
        Node* dst = take_a ? an : bn;
        if (!dst->requires_grad) continue;
        dst->ensure_grad();
        dst->grad[i] += self.grad[i];
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------

Tensor sum(const Tensor& a) {
  double s = 0.0;
  for (double x : a.data()) s += x;
  Tensor out = make(1, 1, {s});
  if (track({&a})) {
    Node* an = a.node();
    attach(out, {&a}, [an](Node& self) {
      if (!an->requires_grad) return;
      an->ensure_grad();
      for (double& g : an->grad) g += self.grad[0];
    });
  }
  return out;
}

Tensor mean(const Tensor& a) {
  if (a.size() == 0) throw ShapeError("mean of an empty tensor");
  return scale(sum(a), 1.0 / static_cast<double>(a.size()));
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no inputs");
  const int n = parts[0].rows();
  int m = 0;
  for (const auto& p : parts) {
    if (p.rows() != n) throw ShapeError("concat_cols: row mismatch " + parts[0].shape_str() + " vs " + p.shape_str());
    m += p.cols();
  }
  std::vector<double> v(static_cast<std::size_t>(n) * m);
  int offset = 0;
  for (const auto& p : parts) {
    const int pc = p.cols();
    const auto d = p.data();
    for (int i = 0; i < n; ++i) {
      std::copy(d.begin() + static_cast<long>(i) * pc, d.begin() + static_cast<long>(i + 1) * pc,
                v.begin() + static_cast<long>(i) * m + offset);
    }
    offset += pc;
  }
  Tensor out = make(n, m, std::move(v));
  bool any = false;
  if (g_grad_enabled) {
    for (const auto& p : parts) any = any || p.requires_grad();
  }
  if (any) {
    Node* on = out.node();
    on->requires_grad = true;
    on->is_leaf = false;
    std::vector<Node*> raw;
    for (const auto& p : parts) {
      on->parents.push_back(p.shared());
      raw.push_back(p.node());
    }
    on->backward = [raw, n, m](Node& self) {
      int off = 0;
      for (Node* p : raw) {
        const int pc = p->cols;
        if (p->requires_grad) {
          p->ensure_grad();
          for (int i = 0; i < n; ++i) {
            for (int j = 0; j < pc; ++j) {
              p->grad[static_cast<std::size_t>(i) * pc + j] += self.grad[static_cast<std::size_t>(i) * m + off + j];
            }
          }
        }
        off += pc;
      }
    };
  }
  return out;
}

Tensor gather_rows(const Tensor& x, std::span<const int> index) {
  const int m = x.cols();
  const int k = static_cast<int>(index.size());
  std::vector<double> v(static_cast<std::size_t>(k) * m);
  const auto d = x.data();
  for (int r = 0; r < k; ++r) {
    const int src = index[r];
    if (src < 0 || src >= x.rows()) throw ShapeError("gather_rows: index out of range for " + x.shape_str());
    std::copy(d.begin() + static_cast<long>(src) * m, d.begin() + static_cast<long>(src + 1) * m,
              v.begin() + static_cast<long>(r) * m);
  }
  Tensor out = make(k, m, std::move(v));
  if (track({&x})) {
    Node* xn = x.node();
    std::vector<int> idx(index.begin(), index.end());
    attach(out, {&x}, [xn, idx = std::move(idx), m](Node& self) {
      if (!xn->requires_grad) return;
      xn->ensure_grad();
      for (std::size_t r = 0; r < idx.size(); ++r) {
        double* dst = xn->grad.data() + static_cast<std::size_t>(idx[r]) * m;
        const double* g = self.grad.data() + r * m;
        for (int j = 0; j < m; ++j) dst[j] += g[j];
      }
    });
  }
  return out;
}

Tensor scatter_add_rows(const Tensor& x, std::span<const int> index, int out_rows) {
  if (static_cast<int>(index.size()) != x.rows()) {
    throw ShapeError("scatter_add_rows: " + std::to_string(index.size()) + " indices for " + x.shape_str());
  }
  const int m = x.cols();
  std::vector<double> v(static_cast<std::size_t>(out_rows) * m, 0.0);
  const auto d = x.data();
  for (std::size_t r = 0; r < index.size(); ++r) {
    const int dst = index[r];
    if (dst < 0 || dst >= out_rows) throw ShapeError("scatter_add_rows: index out of range");
    for (int j = 0; j < m; ++j) v[static_cast<std::size_t>(dst) * m + j] += d[r * m + j];
  }
  Tensor out = make(out_rows, m, std::move(v));
  if (track({&x})) {
    Node* xn = x.node();
    std::vector<int> idx(index.begin(), index.end());
    attach(out, {&x}, [xn, idx = std::move(idx), m](Node& self) {
      if (!xn->requires_grad) return;
      xn->ensure_grad();
      for (std::size_t r = 0; r < idx.size(); ++r) {
        const double* g = self.grad.data() + static_cast<std::size_t>(idx[r]) * m;
        double* dst = xn->grad.data() + r * m;
        for (int j = 0; j < m; ++j) dst[j] += g[j];
      }
    });
  }
  return out;
}

Tensor select_cols(const Tensor& x, std::span<const int> index) {
  if (static_cast<int>(index.size()) != x.rows()) {
    throw ShapeError("select_cols: " + std::to_string(index.size()) + " indices for " + x.shape_str());
  }
  const int m = x.cols();
  std::vector<double> v(index.size());
  for (std::size_t r = 0; r < index.size(); ++r) {
    if (index[r] < 0 || index[r] >= m) throw ShapeError("select_cols: column index out of range");
    v[r] = x.data()[r * m + index[r]];
  }
  Tensor out = Tensor::column(std::move(v));
  if (track({&x})) {
    Node* xn = x.node();
    std::vector<int> idx(index.begin(), index.end());
    attach(out, {&x}, [xn, idx = std::move(idx), m](Node& self) {
      if (!xn->requires_grad) return;
      xn->ensure_grad();
      for (std::size_t r = 0; r < idx.size(); ++r) xn->grad[r * m + idx[r]] += self.grad[r];
    });
  }
  return out;
}

// ---------------------------------------------------------------------------

namespace {

// Shared log-softmax over arbitrary groups of flat indices.
Tensor grouped_log_softmax(const Tensor& logits, const std::vector<std::vector<int>>& groups,
                           std::span<const std::uint8_t> mask) {
  std::vector<double> v(logits.size(), kNegInf);
  const auto x = logits.data();
  for (const auto& g : groups) {
    double mx = kNegInf;
    for (int i : g) {
      if (mask.empty() || mask[i]) mx = std::max(mx, x[i]);
    }
    if (mx == kNegInf) throw std::invalid_argument("log_softmax: every entry of a group is masked");
    double s = 0.0;
    for (int i : g) {
      if (mask.empty() || mask[i]) s += std::exp(x[i] - mx);
    }
    const double lse = mx + std::log(s);
    for (int i : g) {
      if (mask.empty() || mask[i]) v[i] = x[i] - lse;
    }
  }
  Tensor out = make(logits.rows(), logits.cols(), std::move(v));
  if (track({&logits})) {
    Node* ln = logits.node();
    attach(out, {&logits}, [ln, groups](Node& self) {
      if (!ln->requires_grad) return;
      ln->ensure_grad();
      for (const auto& g : groups) {
        double gs = 0.0;
        for (int i : g) {
          if (self.value[i] != kNegInf) gs += self.grad[i];
        }
        for (int i : g) {
          if (self.value[i] == kNegInf) continue;
          ln->grad[i] += self.grad[i] - std::exp(self.value[i]) * gs;
        }
      }
    });
  }
  return out;
}

}  // namespace

Tensor log_softmax_rows(const Tensor& logits, std::span<const std::uint8_t> mask) {
  if (!mask.empty() && mask.size() != logits.size()) throw ShapeError("log_softmax_rows: mask size mismatch");
  std::vector<std::vector<int>> groups(logits.rows());
  for (int r = 0; r < logits.rows(); ++r) {
    for (int c = 0; c < logits.cols(); ++c) groups[r].push_back(r * logits.cols() + c);
  }
  return grouped_log_softmax(logits, groups, mask);
}

Tensor segment_log_softmax(const Tensor& logits, std::span<const int> segment, int n_segments) {
  if (logits.cols() != 1 || static_cast<int>(segment.size()) != logits.rows()) {
    throw ShapeError("segment_log_softmax: expected a column matching the segment list, got " + logits.shape_str());
  }
  std::vector<std::vector<int>> groups(n_segments);
  for (std::size_t i = 0; i < segment.size(); ++i) {
    if (segment[i] < 0 || segment[i] >= n_segments) throw ShapeError("segment_log_softmax: bad segment id");
    groups[segment[i]].push_back(static_cast<int>(i));
  }
  std::erase_if(groups, [](const auto& g) { return g.empty(); });
  return grouped_log_softmax(logits, groups, {});
}

Tensor neg_plogp(const Tensor& log_p) {
  return unary(
      log_p, [](double l) { return l == kNegInf ? 0.0 : -std::exp(l) * l; },
      [](double l, double) { return l == kNegInf ? 0.0 : -std::exp(l) * (l + 1.0); });
}

Tensor gaussian_log_pdf(const Tensor& x, const Tensor& mu, const Tensor& log_sigma) {
  require_same_shape(x, mu, "gaussian_log_pdf");
  require_same_shape(x, log_sigma, "gaussian_log_pdf");
  const std::size_t n = x.size();
  std::vector<double> v(n), z(n);
  for (std::size_t i = 0; i < n; ++i) {
    z[i] = (x.data()[i] - mu.data()[i]) * std::exp(-log_sigma.data()[i]);
    v[i] = -0.5 * z[i] * z[i] - log_sigma.data()[i] - kHalfLog2Pi;
  }
  Tensor out = make(x.rows(), x.cols(), std::move(v));
  if (track({&x, &mu, &log_sigma})) {
    Node* xn = x.node();
    Node* mn = mu.node();
    Node* sn = log_sigma.node();
    attach(out, {&x, &mu, &log_sigma}, [xn, mn, sn, z = std::move(z)](Node& self) {
      for (std::size_t i = 0; i < z.size(); ++i) {
        const double inv_sigma = std::exp(-sn->value[i]);
        const double g = self.grad[i];
        if (xn->requires_grad) {
          xn->ensure_grad();
          xn->grad[i] -= g * z[i] * inv_sigma;
        }
        if (mn->requires_grad) {
          mn->ensure_grad();
          mn->grad[i] += g * z[i] * inv_sigma;
        }
        if (sn->requires_grad) {
          sn->ensure_grad();
          sn->grad[i] += g * (z[i] * z[i] - 1.0);
        }
      }
    });
  }
  return out;
}

Tensor radial_basis(const Tensor& distances, int count, double cutoff, double gamma) {
  if (distances.cols() != 1) throw ShapeError("radial_basis: expected a column, got " + distances.shape_str());
  if (count < 2) throw std::invalid_argument("radial_basis: need at least two centres");
  const int n = distances.rows();
  std::vector<double> centers(count);
  for (int k = 0; k < count; ++k) centers[k] = cutoff * k / (count - 1);
  std::vector<double> v(static_cast<std::size_t>(n) * count);
  for (int i = 0; i < n; ++i) {
    const double d = distances.data()[i];
    for (int k = 0; k < count; ++k) {
      const double t = d - centers[k];
      v[static_cast<std::size_t>(i) * count + k] = std::exp(-gamma * t * t);
    }
  }
  Tensor out = make(n, count, std::move(v));
  if (track({&distances})) {
    Node* dn = distances.node();
    attach(out, {&distances}, [dn, centers = std::move(centers), n, count, gamma](Node& self) {
      if (!dn->requires_grad) return;
      dn->ensure_grad();
      for (int i = 0; i < n; ++i) {
        double s = 0.0;
        for (int k = 0; k < count; ++k) {
          const std::size_t idx = static_cast<std::size_t>(i) * count + k;
          s += self.grad[idx] * (-2.0 * gamma * (dn->value[i] - centers[k]) * self.value[idx]);
        }
        dn->grad[i] += s;
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------

Tensor& ParamStore::add(const std::string& name, int rows, int cols, std::vector<double> init) {
  if (index_.count(name)) throw std::invalid_argument("duplicate parameter '" + name + "'");
  index_.emplace(name, params_.size());
  params_.emplace_back(name, Tensor::parameter(rows, cols, std::move(init)));
  return params_.back().second;
}

Tensor& ParamStore::get(const std::string& name) {
  const auto it = index_.find(name);
  if (it == index_.end()) throw std::out_of_range("no parameter '" + name + "'");
  return params_[it->second].second;
}

const Tensor& ParamStore::get(const std::string& name) const {
  const auto it = index_.find(name);
  if (it == index_.end()) throw std::out_of_range("no parameter '" + name + "'");
  return params_[it->second].second;
}

std::size_t ParamStore::parameter_count() const {
  std::size_t n = 0;
  for (const auto& [name, t] : params_) n += t.size();
  return n;
}

void ParamStore::zero_grad() {
  for (auto& [name, t] : params_) t.zero_grad();
}

ParamStore ParamStore::clone() const {
  ParamStore out;
  for (const auto& [name, t] : params_) {
    out.add(name, t.rows(), t.cols(), std::vector<double>(t.data().begin(), t.data().end()));
  }
  return out;
}

void ParamStore::assign(const ParamStore& other) {
  if (other.size() != size()) throw std::invalid_argument("ParamStore::assign: parameter count mismatch");
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto& [name, t] = params_[i];
    const auto& [oname, ot] = other.params_[i];
    if (name != oname || t.rows() != ot.rows() || t.cols() != ot.cols()) {
      throw std::invalid_argument("ParamStore::assign: mismatch at '" + name + "'");
    }
    std::copy(ot.data().begin(), ot.data().end(), t.mutable_data().begin());
  }
}

double global_grad_norm(const ParamStore& store) {
  double s = 0.0;
  for (const auto& [name, t] : store.items()) {
    for (double g : t.grad()) s += g * g;
  }
  return std::sqrt(s);
}

double Adam::step(ParamStore& store) {
  auto& items = store.items();
  for (const auto& [name, t] : items) {
    for (double g : t.grad()) {
      if (!std::isfinite(g)) throw std::runtime_error("non-finite gradient in parameter '" + name + "'");
    }
  }
  if (state_.m.size() != items.size()) {
    state_.m.assign(items.size(), {});
    state_.v.assign(items.size(), {});
    for (std::size_t i = 0; i < items.size(); ++i) {
      state_.m[i].assign(items[i].second.size(), 0.0);
      state_.v[i].assign(items[i].second.size(), 0.0);
    }
  }
  const double gnorm = global_grad_norm(store);
  const double clip = (cfg_.grad_clip > 0 && gnorm > cfg_.grad_clip) ? cfg_.grad_clip / gnorm : 1.0;
  ++state_.step;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(state_.step));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(state_.step));
  for (std::size_t i = 0; i < items.size(); ++i) {
    Tensor& p = items[i].second;
    const auto g = p.grad();
    auto values = p.mutable_data();
    auto& m = state_.m[i];
    auto& v = state_.v[i];
    for (std::size_t k = 0; k < values.size(); ++k) {
      const double gk = g.empty() ? 0.0 : g[k] * clip;
      m[k] = cfg_.beta1 * m[k] + (1.0 - cfg_.beta1) * gk;
      v[k] = cfg_.beta2 * v[k] + (1.0 - cfg_.beta2) * gk * gk;
      const double mhat = m[k] / bc1;
      const double vhat = v[k] / bc2;
      values[k] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
    }
  }
  return gnorm;
}

}  // namespace molrl::nn
