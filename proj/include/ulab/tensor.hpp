#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace ulab {

// Token ids are plain ints everywhere; the vocabulary owns the mapping.
using TokenId = std::int32_t;

using Shape = std::vector<int>;

std::string shape_to_string(const Shape& shape);
std::int64_t shape_numel(const Shape& shape);

class Graph;

namespace detail {
struct TensorData {
  Shape shape;
  std::vector<double> values;
  bool requires_grad = false;
  std::vector<double> grad;  // empty until backward first touches this tensor
  int node = -1;             // id of the producing graph node, -1 for leaves
};
}  // namespace detail

// Shared-storage handle onto a row-major double array. Copying a Tensor
// aliases the same storage; deep copies go through Tensor::copy().
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from_values(Shape shape, std::vector<double> values, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return data_ != nullptr; }
  const Shape& shape() const { return data_->shape; }
  int rank() const { return static_cast<int>(data_->shape.size()); }
  std::int64_t numel() const { return static_cast<std::int64_t>(data_->values.size()); }
  int dim(int axis) const { return data_->shape[static_cast<std::size_t>(axis)]; }

  std::span<const double> values() const { return data_->values; }
  std::span<double> mutable_values() { return data_->values; }
  double at(int i) const { return data_->values[static_cast<std::size_t>(i)]; }
  double at(int row, int col) const {
    return data_->values[static_cast<std::size_t>(row) * dim(1) + col];
  }
  // Value of a one-element tensor; ContractError otherwise.
  double item() const;

  bool requires_grad() const { return data_->requires_grad; }
  bool has_grad() const { return !data_->grad.empty(); }
  std::span<const double> grad() const { return data_->grad; }
  std::span<double> mutable_grad() { return data_->grad; }
  void zero_grad();

  // Deep copy of values (grad and graph linkage are not copied).
  Tensor copy() const;

  bool same_storage(const Tensor& other) const { return data_ == other.data_; }

 private:
  std::shared_ptr<detail::TensorData> data_;
  friend class Graph;
  explicit Tensor(std::shared_ptr<detail::TensorData> data) : data_(std::move(data)) {}
};

// Append-only tape of executed ops. Ops are recorded only while recording
// is on and at least one input requires grad; values are computed by the
// same kernels either way. One graph per training step is the normal
// usage; backward walks the tape in reverse exactly once.
class Graph {
 public:
  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  bool recording() const { return recording_; }
  void set_recording(bool on) { recording_ = on; }
  std::size_t node_count() const { return nodes_.size(); }
  void clear();

  // Elementwise
  Tensor add(const Tensor& a, const Tensor& b);
  Tensor mul(const Tensor& a, const Tensor& b);
  Tensor scale(const Tensor& a, double factor);
  Tensor gelu(const Tensor& a);

  // Reductions
  Tensor sum(const Tensor& a);

  // Linear algebra
  Tensor matmul(const Tensor& a, const Tensor& b);
  Tensor transpose(const Tensor& a);

  // Structure
  Tensor gather_rows(const Tensor& table, std::span<const TokenId> rows);
  Tensor slice_cols(const Tensor& a, int col_begin, int col_end);
  Tensor concat_cols(std::span<const Tensor> parts);

  // Row-wise softmax family (last axis), max-subtracted for stability.
  Tensor softmax(const Tensor& a);
  Tensor log_softmax(const Tensor& a);

  // -log softmax(logits)[target] for a vector of logits.
  Tensor cross_entropy(const Tensor& logits, TokenId target);

  // Sum over the given rows of -log softmax(logits[row])[target]; the
  // building block for both training losses (divide by count via scale()).
  Tensor nll_rows(const Tensor& logits, std::span<const TokenId> targets,
                  std::span<const int> rows);

  // Per-row normalization with learned gain and bias.
  Tensor layer_norm(const Tensor& a, const Tensor& gain, const Tensor& bias);

  // Populates grad on every requires_grad tensor reachable from loss.
  // Gradients accumulate into any existing grad arrays.
  void backward(const Tensor& loss);

  static constexpr double kLayerNormEps = 1e-5;

 private:
  struct Node {
    const char* op;
    std::vector<std::shared_ptr<detail::TensorData>> inputs;
    std::shared_ptr<detail::TensorData> output;
    std::function<void(Node&)> backward_fn;
  };

  Tensor record(const char* op, std::vector<Tensor> inputs, Shape out_shape,
                std::vector<double> out_values, std::function<void(Node&)> backward_fn);

  std::vector<Node> nodes_;
  bool recording_ = true;
};

// While alive, turns recording off on the given graph (evaluation paths).
class NoGradGuard {
 public:
  explicit NoGradGuard(Graph& graph) : graph_(graph), prev_(graph.recording()) {
    graph_.set_recording(false);
  }
  ~NoGradGuard() { graph_.set_recording(prev_); }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  Graph& graph_;
  bool prev_;
};

// Optimizers operate in place on parameter tensors; missing grads count
// as zero. Moment arrays are allocated on first use and shape-checked
// against the parameters afterwards.
struct AdamState {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  long step = 0;
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;
};

void adam_step(std::span<Tensor> params, double lr, AdamState& state);
void sgd_step(std::span<Tensor> params, double lr);

// Scales all grads so their global L2 norm is at most max_norm.
// Returns the pre-clip norm.
double clip_global_grad_norm(std::span<Tensor> params, double max_norm);
void zero_grads(std::span<Tensor> params);

}  // namespace ulab
