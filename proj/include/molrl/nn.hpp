#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace molrl::nn {

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct Node;

/// Handle to a dense row-major matrix in a reverse-mode graph. Scalars are 1x1.
/// Copies share the node; graphs are confined to one thread.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  static Tensor constant(int rows, int cols, std::vector<double> data);
  static Tensor zeros(int rows, int cols);
  static Tensor scalar(double v);
  static Tensor column(std::vector<double> data);
  /// Trainable leaf; gradients accumulate across backward passes until zero_grad().
  static Tensor parameter(int rows, int cols, std::vector<double> data);

  int rows() const;
  int cols() const;
  std::size_t size() const;
  std::string shape_str() const;

  std::span<const double> data() const;
  std::span<double> mutable_data();
  double item() const;
  double at(int r, int c) const;

  bool requires_grad() const;
  /// Empty until a backward pass reaches this tensor.
  std::span<const double> grad() const;
  void zero_grad();

  bool defined() const { return node_ != nullptr; }
  Node* node() const { return node_.get(); }
  const std::shared_ptr<Node>& shared() const { return node_; }

 private:
  std::shared_ptr<Node> node_;
};

struct Node {
  int rows = 0;
  int cols = 0;
  std::vector<double> value;
  std::vector<double> grad;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;
  bool requires_grad = false;
  bool is_leaf = true;
  bool backward_done = false;

  void ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
  }
};

/// Disables graph construction on this thread while alive (inference).
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

/// Reverse-mode pass from a 1x1 loss. A graph can be differentiated once.
void backward(const Tensor& loss);

// --- arithmetic --------------------------------------------------------------
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
/// a[n x m] + bias[1 x m] broadcast over rows.
Tensor add_row(const Tensor& a, const Tensor& bias);
/// a[n x m] * w[n x 1] broadcast over columns.
Tensor mul_col(const Tensor& a, const Tensor& w);
Tensor scale(const Tensor& a, double s);
Tensor add_scalar(const Tensor& a, double s);
/// x[1 x m] repeated to n rows.
Tensor repeat_rows(const Tensor& x, int n);

// --- elementwise --------------------------------------------------------------
Tensor tanh(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor softplus(const Tensor& a);
/// softplus(x) - log 2 (zero at the origin).
Tensor shifted_softplus(const Tensor& a);
Tensor exp(const Tensor& a);
Tensor square(const Tensor& a);
/// Gradient passes only where lo < a < hi.
Tensor clamp(const Tensor& a, double lo, double hi);
Tensor minimum(const Tensor& a, const Tensor& b);

// --- reductions / structure --------------------------------------------------
Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
Tensor concat_cols(const std::vector<Tensor>& parts);
Tensor gather_rows(const Tensor& x, std::span<const int> index);
Tensor scatter_add_rows(const Tensor& x, std::span<const int> index, int out_rows);
/// out[r] = x[r, index[r]] as a column.
Tensor select_cols(const Tensor& x, std::span<const int> index);

// --- distributions ----------------------------------------------------------
/// Row-wise log-softmax; entries with mask == 0 become -inf and receive no gradient.
Tensor log_softmax_rows(const Tensor& logits, std::span<const std::uint8_t> mask = {});
/// Log-softmax of a column within segments (segment[i] in [0, n_segments)).
Tensor segment_log_softmax(const Tensor& logits, std::span<const int> segment, int n_segments);
/// Elementwise -exp(l) * l, with 0 for l = -inf (entropy summands from log-probabilities).
Tensor neg_plogp(const Tensor& log_p);
/// -0.5((x - mu)/sigma)^2 - log sigma - 0.5 log 2pi, elementwise on equally shaped columns.
Tensor gaussian_log_pdf(const Tensor& x, const Tensor& mu, const Tensor& log_sigma);
/// Gaussian radial basis exp(-gamma (d - c_k)^2) for K centres evenly spaced on [0, cutoff].
Tensor radial_basis(const Tensor& distances, int count, double cutoff, double gamma);

// --- parameters and optimizer ------------------------------------------------

class ParamStore {
 public:
  Tensor& add(const std::string& name, int rows, int cols, std::vector<double> init);
  Tensor& get(const std::string& name);
  const Tensor& get(const std::string& name) const;
  bool contains(const std::string& name) const { return index_.count(name) > 0; }

  std::size_t size() const { return params_.size(); }
  const std::vector<std::pair<std::string, Tensor>>& items() const { return params_; }
  std::vector<std::pair<std::string, Tensor>>& items() { return params_; }
  std::size_t parameter_count() const;

  void zero_grad();
  /// Deep copy of the values (fresh leaves, no gradients).
  ParamStore clone() const;
  /// Copies values from `other` (same names and shapes).
  void assign(const ParamStore& other);

 private:
  std::vector<std::pair<std::string, Tensor>> params_;
  std::map<std::string, std::size_t> index_;
};

struct AdamConfig {
  double lr = 5e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double grad_clip = 0.5;  // global L2 norm; <= 0 disables
};

struct AdamState {
  long step = 0;
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;
};

class Adam {
 public:
  explicit Adam(AdamConfig cfg = {}) : cfg_(cfg) {}

  /// Clips gradients by global norm, then applies the bias-corrected update. Returns the
  /// pre-clip global gradient norm. Throws std::runtime_error naming a parameter with a NaN gradient.
  double step(ParamStore& store);

  AdamConfig& config() { return cfg_; }
  const AdamConfig& config() const { return cfg_; }
  AdamState& state() { return state_; }
  const AdamState& state() const { return state_; }

 private:
  AdamConfig cfg_;
  AdamState state_;
};

double global_grad_norm(const ParamStore& store);

}  // namespace molrl::nn
