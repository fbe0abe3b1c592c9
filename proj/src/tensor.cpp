#include "ulab/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "ulab/error.hpp"

namespace ulab {

std::string shape_to_string(const Shape& shape) {
  std::string out = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(shape[i]);
  }
  out += "]";
  return out;
}

std::int64_t shape_numel(const Shape& shape) {
  std::int64_t n = 1;
  for (int d : shape) n *= d;
  return n;
}

namespace {

void validate_shape(const Shape& shape) {
  for (int d : shape) {
    if (d <= 0) throw DimensionError("shape dimensions must be positive, got " + shape_to_string(shape));
  }
}

void require_rank(const Tensor& t, int rank, const char* op) {
  if (t.rank() != rank) {
    throw DimensionError(std::string(op) + ": expected rank " + std::to_string(rank) +
                         " tensor, got shape " + shape_to_string(t.shape()));
  }
}

// Rows/cols view of a rank-1 or rank-2 tensor: a vector is one row.
struct RowView {
  int rows;
  int cols;
};

RowView row_view(const Tensor& t, const char* op) {
  if (t.rank() == 1) return {1, t.dim(0)};
  if (t.rank() == 2) return {t.dim(0), t.dim(1)};
  throw DimensionError(std::string(op) + ": expected rank 1 or 2 tensor, got shape " +
                       shape_to_string(t.shape()));
}

std::vector<double>& ensure_grad(const std::shared_ptr<detail::TensorData>& d) {
  if (d->grad.empty()) d->grad.assign(d->values.size(), 0.0);
  return d->grad;
}

}  // namespace

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), 0.0, requires_grad);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  validate_shape(shape);
  auto data = std::make_shared<detail::TensorData>();
  data->values.assign(static_cast<std::size_t>(shape_numel(shape)), value);
  data->shape = std::move(shape);
  data->requires_grad = requires_grad;
  return Tensor(std::move(data));
}

Tensor Tensor::from_values(Shape shape, std::vector<double> values, bool requires_grad) {
  validate_shape(shape);
  if (shape_numel(shape) != static_cast<std::int64_t>(values.size())) {
    throw DimensionError("value count " + std::to_string(values.size()) +
                         " does not match shape " + shape_to_string(shape));
  }
  auto data = std::make_shared<detail::TensorData>();
  data->shape = std::move(shape);
  data->values = std::move(values);
  data->requires_grad = requires_grad;
  return Tensor(std::move(data));
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  auto data = std::make_shared<detail::TensorData>();
  data->shape = {};
  data->values = {value};
  data->requires_grad = requires_grad;
  return Tensor(std::move(data));
}

double Tensor::item() const {
  if (numel() != 1) {
    throw ContractError("item() requires a one-element tensor, got shape " +
                        shape_to_string(shape()));
  }
  return data_->values[0];
}

void Tensor::zero_grad() {
  if (!data_->grad.empty()) std::fill(data_->grad.begin(), data_->grad.end(), 0.0);
}

Tensor Tensor::copy() const {
  auto data = std::make_shared<detail::TensorData>();
  data->shape = data_->shape;
  data->values = data_->values;
  data->requires_grad = data_->requires_grad;
  return Tensor(std::move(data));
}

void Graph::clear() { nodes_.clear(); }

Tensor Graph::record(const char* op, std::vector<Tensor> inputs, Shape out_shape,
                     std::vector<double> out_values, std::function<void(Node&)> backward_fn) {
  bool needs_grad = false;
  for (const Tensor& in : inputs) needs_grad = needs_grad || in.requires_grad();

  auto out = std::make_shared<detail::TensorData>();
  out->shape = std::move(out_shape);
  out->values = std::move(out_values);

  if (recording_ && needs_grad) {
    out->requires_grad = true;
    out->node = static_cast<int>(nodes_.size());
    Node node;
    node.op = op;
    node.inputs.reserve(inputs.size());
    for (Tensor& in : inputs) node.inputs.push_back(in.data_);
    node.output = out;
    node.backward_fn = std::move(backward_fn);
    nodes_.push_back(std::move(node));
  }
  return Tensor(std::move(out));
}

void Graph::backward(const Tensor& loss) {
  if (!loss.defined() || loss.numel() != 1) {
    throw ContractError("backward requires a scalar loss");
  }
  const auto& data = loss.data_;
  if (data->node < 0 || static_cast<std::size_t>(data->node) >= nodes_.size() ||
      nodes_[static_cast<std::size_t>(data->node)].output != data) {
    throw ContractError("backward: loss was not produced by this graph");
  }
  ensure_grad(data)[0] += 1.0;
  for (int i = data->node; i >= 0; --i) {
    Node& node = nodes_[static_cast<std::size_t>(i)];
    if (node.output->grad.empty()) continue;  // does not feed the loss
    node.backward_fn(node);
  }
}

// ---------------------------------------------------------------------------
// Elementwise ops

Tensor Graph::add(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw DimensionError("add: shape mismatch " + shape_to_string(a.shape()) + " vs " +
                         shape_to_string(b.shape()));
  }
  std::vector<double> out(a.values().begin(), a.values().end());
  for (std::int64_t i = 0; i < b.numel(); ++i) out[static_cast<std::size_t>(i)] += b.at(static_cast<int>(i));
  return record("add", {a, b}, a.shape(), std::move(out), [](Node& n) {
    const auto& g = n.output->grad;
    for (int side = 0; side < 2; ++side) {
      const auto& in = n.inputs[static_cast<std::size_t>(side)];
      if (!in->requires_grad) continue;
      auto& ig = ensure_grad(in);
      for (std::size_t i = 0; i < g.size(); ++i) ig[i] += g[i];
    }
  });
}

Tensor Graph::mul(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw DimensionError("mul: shape mismatch " + shape_to_string(a.shape()) + " vs " +
                         shape_to_string(b.shape()));
  }
  std::vector<double> out(static_cast<std::size_t>(a.numel()));
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] * b.values()[i];
  return record("mul", {a, b}, a.shape(), std::move(out), [](Node& n) {
    const auto& g = n.output->grad;
    const auto& av = n.inputs[0]->values;
    const auto& bv = n.inputs[1]->values;
    if (n.inputs[0]->requires_grad) {
      auto& ig = ensure_grad(n.inputs[0]);
      for (std::size_t i = 0; i < g.size(); ++i) ig[i] += g[i] * bv[i];
    }
    if (n.inputs[1]->requires_grad) {
      auto& ig = ensure_grad(n.inputs[1]);
      for (std::size_t i = 0; i < g.size(); ++i) ig[i] += g[i] * av[i];
    }
  });
}

Tensor Graph::scale(const Tensor& a, double factor) {
  std::vector<double> out(static_cast<std::size_t>(a.numel()));
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] * factor;
  return record("scale", {a}, a.shape(), std::move(out), [factor](Node& n) {
    if (!n.inputs[0]->requires_grad) return;
    const auto& g = n.output->grad;
    auto& ig = ensure_grad(n.inputs[0]);
    for (std::size_t i = 0; i < g.size(); ++i) ig[i] += g[i] * factor;
  });
}

Tensor Graph::gelu(const Tensor& a) {
  // Exact GELU: 0.5 x (1 + erf(x / sqrt(2))).
  constexpr double kInvSqrt2 = 0.7071067811865475244;
  constexpr double kInvSqrt2Pi = 0.3989422804014326779;
  std::vector<double> out(static_cast<std::size_t>(a.numel()));
  for (std::size_t i = 0; i < out.size(); ++i) {
    double x = a.values()[i];
    out[i] = 0.5 * x * (1.0 + std::erf(x * kInvSqrt2));
  }
  return record("gelu", {a}, a.shape(), std::move(out), [=](Node& n) {
    if (!n.inputs[0]->requires_grad) return;
    const auto& g = n.output->grad;
    const auto& xv = n.inputs[0]->values;
    auto& ig = ensure_grad(n.inputs[0]);
    for (std::size_t i = 0; i < g.size(); ++i) {
      double x = xv[i];
      double cdf = 0.5 * (1.0 + std::erf(x * kInvSqrt2));
      double pdf = kInvSqrt2Pi * std::exp(-0.5 * x * x);
      ig[i] += g[i] * (cdf + x * pdf);
    }
  });
}

Tensor Graph::sum(const Tensor& a) {
  double total = 0.0;
  for (double v : a.values()) total += v;
  return record("sum", {a}, {}, {total}, [](Node& n) {
    if (!n.inputs[0]->requires_grad) return;
    double g = n.output->grad[0];
    auto& ig = ensure_grad(n.inputs[0]);
    for (double& v : ig) v += g;
  });
}

// ---------------------------------------------------------------------------
// Linear algebra

Tensor Graph::matmul(const Tensor& a, const Tensor& b) {
  require_rank(a, 2, "matmul");
  require_rank(b, 2, "matmul");
  const int m = a.dim(0), k = a.dim(1), k2 = b.dim(0), n = b.dim(1);
  if (k != k2) {
    throw DimensionError("matmul: inner dimensions disagree, " + shape_to_string(a.shape()) +
                         " x " + shape_to_string(b.shape()));
  }
  std::vector<double> out(static_cast<std::size_t>(m) * n, 0.0);
  const double* av = a.values().data();
  const double* bv = b.values().data();
  for (int i = 0; i < m; ++i) {
    double* c = out.data() + static_cast<std::size_t>(i) * n;
    const double* arow = av + static_cast<std::size_t>(i) * k;
    for (int p = 0; p < k; ++p) {
      const double f = arow[p];
      const double* brow = bv + static_cast<std::size_t>(p) * n;
      for (int j = 0; j < n; ++j) c[j] += f * brow[j];
    }
  }
  return record("matmul", {a, b}, {m, n}, std::move(out), [m, k, n](Node& nd) {
    const double* g = nd.output->grad.data();
    const double* av2 = nd.inputs[0]->values.data();
    const double* bv2 = nd.inputs[1]->values.data();
    if (nd.inputs[0]->requires_grad) {
      // dA = dC * B^T
      auto& ga = ensure_grad(nd.inputs[0]);
      for (int i = 0; i < m; ++i) {
        const double* grow = g + static_cast<std::size_t>(i) * n;
        double* garow = ga.data() + static_cast<std::size_t>(i) * k;
        for (int p = 0; p < k; ++p) {
          const double* brow = bv2 + static_cast<std::size_t>(p) * n;
          double acc = 0.0;
          for (int j = 0; j < n; ++j) acc += grow[j] * brow[j];
          garow[p] += acc;
        }
      }
    }
    if (nd.inputs[1]->requires_grad) {
      // dB = A^T * dC
      auto& gb = ensure_grad(nd.inputs[1]);
      for (int i = 0; i < m; ++i) {
        const double* grow = g + static_cast<std::size_t>(i) * n;
        const double* arow = av2 + static_cast<std::size_t>(i) * k;
        for (int p = 0; p < k; ++p) {
          const double f = arow[p];
          double* gbrow = gb.data() + static_cast<std::size_t>(p) * n;
          for (int j = 0; j < n; ++j) gbrow[j] += f * grow[j];
        }
      }
    }
  });
}

Tensor Graph::transpose(const Tensor& a) {
  require_rank(a, 2, "transpose");
  const int m = a.dim(0), n = a.dim(1);
  std::vector<double> out(static_cast<std::size_t>(m) * n);
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j)
      out[static_cast<std::size_t>(j) * m + i] = a.at(i, j);
  return record("transpose", {a}, {n, m}, std::move(out), [m, n](Node& nd) {
    if (!nd.inputs[0]->requires_grad) return;
    const auto& g = nd.output->grad;
    auto& ig = ensure_grad(nd.inputs[0]);
    for (int j = 0; j < n; ++j)
      for (int i = 0; i < m; ++i)
        ig[static_cast<std::size_t>(i) * n + j] += g[static_cast<std::size_t>(j) * m + i];
  });
}

// ---------------------------------------------------------------------------
// Structure ops

Tensor Graph::gather_rows(const Tensor& table, std::span<const TokenId> rows) {
  require_rank(table, 2, "gather_rows");
  const int n_rows = table.dim(0), cols = table.dim(1);
  for (TokenId r : rows) {
    if (r < 0 || r >= n_rows) {
      throw IndexError("gather_rows: row " + std::to_string(r) + " out of range [0," +
                       std::to_string(n_rows) + ")");
    }
  }
  if (rows.empty()) throw ContractError("gather_rows: empty row list");
  std::vector<double> out(rows.size() * static_cast<std::size_t>(cols));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const double* src = table.values().data() + static_cast<std::size_t>(rows[i]) * cols;
    std::copy(src, src + cols, out.data() + i * static_cast<std::size_t>(cols));
  }
  std::vector<TokenId> idx(rows.begin(), rows.end());
  return record("gather_rows", {table}, {static_cast<int>(rows.size()), cols}, std::move(out),
                [idx = std::move(idx), cols](Node& nd) {
                  if (!nd.inputs[0]->requires_grad) return;
                  const auto& g = nd.output->grad;
                  auto& ig = ensure_grad(nd.inputs[0]);
                  for (std::size_t i = 0; i < idx.size(); ++i) {
                    double* dst = ig.data() + static_cast<std::size_t>(idx[i]) * cols;
                    const double* src = g.data() + i * static_cast<std::size_t>(cols);
                    for (int c = 0; c < cols; ++c) dst[c] += src[c];
                  }
                });
}

Tensor Graph::slice_cols(const Tensor& a, int col_begin, int col_end) {
  require_rank(a, 2, "slice_cols");
  const int rows = a.dim(0), cols = a.dim(1);
  if (col_begin < 0 || col_end > cols || col_begin >= col_end) {
    throw IndexError("slice_cols: invalid column range [" + std::to_string(col_begin) + "," +
                     std::to_string(col_end) + ") for shape " + shape_to_string(a.shape()));
  }
  const int width = col_end - col_begin;
  std::vector<double> out(static_cast<std::size_t>(rows) * width);
  for (int i = 0; i < rows; ++i) {
    const double* src = a.values().data() + static_cast<std::size_t>(i) * cols + col_begin;
    std::copy(src, src + width, out.data() + static_cast<std::size_t>(i) * width);
  }
  return record("slice_cols", {a}, {rows, width}, std::move(out),
                [rows, cols, col_begin, width](Node& nd) {
                  if (!nd.inputs[0]->requires_grad) return;
                  const auto& g = nd.output->grad;
                  auto& ig = ensure_grad(nd.inputs[0]);
                  for (int i = 0; i < rows; ++i) {
                    double* dst = ig.data() + static_cast<std::size_t>(i) * cols + col_begin;
                    const double* src = g.data() + static_cast<std::size_t>(i) * width;
                    for (int c = 0; c < width; ++c) dst[c] += src[c];
                  }
                });
}

Tensor Graph::concat_cols(std::span<const Tensor> parts) {
  if (parts.empty()) throw ContractError("concat_cols: no parts");
  const int rows = parts[0].rank() == 2 ? parts[0].dim(0) : -1;
  if (rows < 0) require_rank(parts[0], 2, "concat_cols");
  int total_cols = 0;
  for (const Tensor& p : parts) {
    require_rank(p, 2, "concat_cols");
    if (p.dim(0) != rows) {
      throw DimensionError("concat_cols: row count mismatch " + shape_to_string(p.shape()));
    }
    total_cols += p.dim(1);
  }
  std::vector<double> out(static_cast<std::size_t>(rows) * total_cols);
  std::vector<int> widths;
  int offset = 0;
  for (const Tensor& p : parts) {
    const int w = p.dim(1);
    widths.push_back(w);
    for (int i = 0; i < rows; ++i) {
      const double* src = p.values().data() + static_cast<std::size_t>(i) * w;
      std::copy(src, src + w, out.data() + static_cast<std::size_t>(i) * total_cols + offset);
    }
    offset += w;
  }
  std::vector<Tensor> inputs(parts.begin(), parts.end());
  return record("concat_cols", std::move(inputs), {rows, total_cols}, std::move(out),
                [rows, total_cols, widths = std::move(widths)](Node& nd) {
                  const auto& g = nd.output->grad;
                  int off = 0;
                  for (std::size_t k = 0; k < nd.inputs.size(); ++k) {
                    const int w = widths[k];
                    if (nd.inputs[k]->requires_grad) {
                      auto& ig = ensure_grad(nd.inputs[k]);
                      for (int i = 0; i < rows; ++i) {
                        const double* src = g.data() + static_cast<std::size_t>(i) * total_cols + off;
                        double* dst = ig.data() + static_cast<std::size_t>(i) * w;
                        for (int c = 0; c < w; ++c) dst[c] += src[c];
                      }
                    }
                    off += w;
                  }
                });
}

// ---------------------------------------------------------------------------
// Softmax family

namespace {

// Stable row softmax into out; returns nothing. Row may hold large
// negative mask values; exp underflows to exactly zero for those.
void softmax_row(const double* x, double* out, int n) {
  double mx = x[0];
  for (int i = 1; i < n; ++i) mx = std::max(mx, x[i]);
  double total = 0.0;
  for (int i = 0; i < n; ++i) {
    out[i] = std::exp(x[i] - mx);
    total += out[i];
  }
  const double inv = 1.0 / total;
  for (int i = 0; i < n; ++i) out[i] *= inv;
}

void log_softmax_row(const double* x, double* out, int n) {
  double mx = x[0];
  for (int i = 1; i < n; ++i) mx = std::max(mx, x[i]);
  double total = 0.0;
  for (int i = 0; i < n; ++i) total += std::exp(x[i] - mx);
  const double lse = mx + std::log(total);
  for (int i = 0; i < n; ++i) out[i] = x[i] - lse;
}

}  // namespace

Tensor Graph::softmax(const Tensor& a) {
  const RowView rv = row_view(a, "softmax");
  std::vector<double> out(static_cast<std::size_t>(rv.rows) * rv.cols);
  for (int r = 0; r < rv.rows; ++r) {
    softmax_row(a.values().data() + static_cast<std::size_t>(r) * rv.cols,
                out.data() + static_cast<std::size_t>(r) * rv.cols, rv.cols);
  }
  return record("softmax", {a}, a.shape(), std::move(out), [rv](Node& nd) {
    if (!nd.inputs[0]->requires_grad) return;
    const auto& g = nd.output->grad;
    const auto& y = nd.output->values;
    auto& ig = ensure_grad(nd.inputs[0]);
    for (int r = 0; r < rv.rows; ++r) {
      const std::size_t base = static_cast<std::size_t>(r) * rv.cols;
      double dot = 0.0;
      for (int i = 0; i < rv.cols; ++i) dot += g[base + i] * y[base + i];
      for (int i = 0; i < rv.cols; ++i) ig[base + i] += y[base + i] * (g[base + i] - dot);
    }
  });
}

Tensor Graph::log_softmax(const Tensor& a) {
  const RowView rv = row_view(a, "log_softmax");
  std::vector<double> out(static_cast<std::size_t>(rv.rows) * rv.cols);
  for (int r = 0; r < rv.rows; ++r) {
    log_softmax_row(a.values().data() + static_cast<std::size_t>(r) * rv.cols,
                    out.data() + static_cast<std::size_t>(r) * rv.cols, rv.cols);
  }
  return record("log_softmax", {a}, a.shape(), std::move(out), [rv](Node& nd) {
    if (!nd.inputs[0]->requires_grad) return;
    const auto& g = nd.output->grad;
    const auto& y = nd.output->values;  // log-probs; exp gives probs
    auto& ig = ensure_grad(nd.inputs[0]);
    for (int r = 0; r < rv.rows; ++r) {
      const std::size_t base = static_cast<std::size_t>(r) * rv.cols;
      double gsum = 0.0;
      for (int i = 0; i < rv.cols; ++i) gsum += g[base + i];
      for (int i = 0; i < rv.cols; ++i) ig[base + i] += g[base + i] - std::exp(y[base + i]) * gsum;
    }
  });
}

Tensor Graph::cross_entropy(const Tensor& logits, TokenId target) {
  require_rank(logits, 1, "cross_entropy");
  const int n = logits.dim(0);
  if (target < 0 || target >= n) {
    throw IndexError("cross_entropy: target " + std::to_string(target) +
                     " out of range [0," + std::to_string(n) + ")");
  }
  std::vector<double> lsm(static_cast<std::size_t>(n));
  log_softmax_row(logits.values().data(), lsm.data(), n);
  const double value = -lsm[static_cast<std::size_t>(target)];
  return record("cross_entropy", {logits}, {}, {value}, [n, target](Node& nd) {
    if (!nd.inputs[0]->requires_grad) return;
    const double g = nd.output->grad[0];
    const double* x = nd.inputs[0]->values.data();
    std::vector<double> p(static_cast<std::size_t>(n));
    softmax_row(x, p.data(), n);
    auto& ig = ensure_grad(nd.inputs[0]);
    for (int i = 0; i < n; ++i) ig[static_cast<std::size_t>(i)] += g * (p[static_cast<std::size_t>(i)] - (i == target ? 1.0 : 0.0));
  });
}

Tensor Graph::nll_rows(const Tensor& logits, std::span<const TokenId> targets,
                       std::span<const int> rows) {
  require_rank(logits, 2, "nll_rows");
  const int n_rows = logits.dim(0), vocab = logits.dim(1);
  if (targets.size() != rows.size()) {
    throw DimensionError("nll_rows: targets/rows size mismatch");
  }
  if (rows.empty()) throw ContractError("nll_rows: no rows selected");
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] < 0 || rows[i] >= n_rows) {
      throw IndexError("nll_rows: row " + std::to_string(rows[i]) + " out of range [0," +
                       std::to_string(n_rows) + ")");
    }
    if (targets[i] < 0 || targets[i] >= vocab) {
      throw IndexError("nll_rows: target " + std::to_string(targets[i]) + " out of range [0," +
                       std::to_string(vocab) + ")");
    }
  }
  double total = 0.0;
  std::vector<double> lsm(static_cast<std::size_t>(vocab));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    log_softmax_row(logits.values().data() + static_cast<std::size_t>(rows[i]) * vocab, lsm.data(),
                    vocab);
    total -= lsm[static_cast<std::size_t>(targets[i])];
  }
  std::vector<TokenId> tg(targets.begin(), targets.end());
  std::vector<int> rw(rows.begin(), rows.end());
  return record("nll_rows", {logits}, {}, {total},
                [vocab, tg = std::move(tg), rw = std::move(rw)](Node& nd) {
                  if (!nd.inputs[0]->requires_grad) return;
                  const double g = nd.output->grad[0];
                  auto& ig = ensure_grad(nd.inputs[0]);
                  std::vector<double> p(static_cast<std::size_t>(vocab));
                  for (std::size_t i = 0; i < rw.size(); ++i) {
                    const std::size_t base = static_cast<std::size_t>(rw[i]) * vocab;
                    softmax_row(nd.inputs[0]->values.data() + base, p.data(), vocab);
                    double* dst = ig.data() + base;
                    for (int c = 0; c < vocab; ++c) dst[c] += g * p[static_cast<std::size_t>(c)];
                    dst[tg[i]] -= g;
                  }
                });
}

Tensor Graph::layer_norm(const Tensor& a, const Tensor& gain, const Tensor& bias) {
  require_rank(a, 2, "layer_norm");
  require_rank(gain, 1, "layer_norm");
  require_rank(bias, 1, "layer_norm");
  const int rows = a.dim(0), cols = a.dim(1);
  if (gain.dim(0) != cols || bias.dim(0) != cols) {
    throw DimensionError("layer_norm: gain/bias shape must be [" + std::to_string(cols) + "]");
  }
  std::vector<double> out(static_cast<std::size_t>(rows) * cols);
  std::vector<double> inv_std(static_cast<std::size_t>(rows));
  std::vector<double> means(static_cast<std::size_t>(rows));
  for (int r = 0; r < rows; ++r) {
    const double* x = a.values().data() + static_cast<std::size_t>(r) * cols;
    double mean = 0.0;
    for (int c = 0; c < cols; ++c) mean += x[c];
    mean /= cols;
    double var = 0.0;
    for (int c = 0; c < cols; ++c) var += (x[c] - mean) * (x[c] - mean);
    var /= cols;
    const double inv = 1.0 / std::sqrt(var + kLayerNormEps);
    means[static_cast<std::size_t>(r)] = mean;
    inv_std[static_cast<std::size_t>(r)] = inv;
    double* y = out.data() + static_cast<std::size_t>(r) * cols;
    for (int c = 0; c < cols; ++c) y[c] = (x[c] - mean) * inv * gain.at(c) + bias.at(c);
  }
  return record(
      "layer_norm", {a, gain, bias}, a.shape(), std::move(out),
      [rows, cols, means = std::move(means), inv_std = std::move(inv_std)](Node& nd) {
        const auto& g = nd.output->grad;
        const auto& xv = nd.inputs[0]->values;
        const auto& gainv = nd.inputs[1]->values;
        for (int r = 0; r < rows; ++r) {
          const std::size_t base = static_cast<std::size_t>(r) * cols;
          const double mean = means[static_cast<std::size_t>(r)];
          const double inv = inv_std[static_cast<std::size_t>(r)];
          // xhat, dxhat, and their means drive all three partials.
          double mean_dxhat = 0.0, mean_dxhat_xhat = 0.0;
          for (int c = 0; c < cols; ++c) {
            const double xhat = (xv[base + c] - mean) * inv;
            const double dxhat = g[base + c] * gainv[static_cast<std::size_t>(c)];
            mean_dxhat += dxhat;
            mean_dxhat_xhat += dxhat * xhat;
          }
          mean_dxhat /= cols;
          mean_dxhat_xhat /= cols;
          if (nd.inputs[0]->requires_grad) {
            auto& ig = ensure_grad(nd.inputs[0]);
            for (int c = 0; c < cols; ++c) {
              const double xhat = (xv[base + c] - mean) * inv;
              const double dxhat = g[base + c] * gainv[static_cast<std::size_t>(c)];
              ig[base + c] += inv * (dxhat - mean_dxhat - xhat * mean_dxhat_xhat);
            }
          }
          if (nd.inputs[1]->requires_grad) {
            auto& gg = ensure_grad(nd.inputs[1]);
            for (int c = 0; c < cols; ++c) {
              const double xhat = (xv[base + c] - mean) * inv;
              gg[static_cast<std::size_t>(c)] += g[base + c] * xhat;
            }
          }
          if (nd.inputs[2]->requires_grad) {
            auto& bg = ensure_grad(nd.inputs[2]);
            for (int c = 0; c < cols; ++c) bg[static_cast<std::size_t>(c)] += g[base + c];
          }
        }
      });
}

// ---------------------------------------------------------------------------
// Optimizers

namespace {

void check_param_grad(const Tensor& p, const char* who) {
  if (p.has_grad() && p.grad().size() != static_cast<std::size_t>(p.numel())) {
    throw DimensionError(std::string(who) + ": grad size mismatch for shape " +
                         shape_to_string(p.shape()));
  }
}

}  // namespace

void adam_step(std::span<Tensor> params, double lr, AdamState& state) {
  if (state.m.empty()) {
    state.m.resize(params.size());
    state.v.resize(params.size());
    for (std::size_t i = 0; i < params.size(); ++i) {
      state.m[i].assign(static_cast<std::size_t>(params[i].numel()), 0.0);
      state.v[i].assign(static_cast<std::size_t>(params[i].numel()), 0.0);
    }
  }
  if (state.m.size() != params.size()) {
    throw DimensionError("adam_step: state tracks " + std::to_string(state.m.size()) +
                         " params, got " + std::to_string(params.size()));
  }
  state.step += 1;
  const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& p = params[i];
    check_param_grad(p, "adam_step");
    if (state.m[i].size() != static_cast<std::size_t>(p.numel())) {
      throw DimensionError("adam_step: moment shape mismatch for param " + std::to_string(i));
    }
    auto vals = p.mutable_values();
    const bool has_grad = p.has_grad();
    for (std::size_t j = 0; j < vals.size(); ++j) {
      const double g = has_grad ? p.grad()[j] : 0.0;
      state.m[i][j] = state.beta1 * state.m[i][j] + (1.0 - state.beta1) * g;
      state.v[i][j] = state.beta2 * state.v[i][j] + (1.0 - state.beta2) * g * g;
      const double mhat = state.m[i][j] / bc1;
      const double vhat = state.v[i][j] / bc2;
      vals[j] -= lr * mhat / (std::sqrt(vhat) + state.eps);
    }
  }
}

void sgd_step(std::span<Tensor> params, double lr) {
  for (Tensor& p : params) {
    check_param_grad(p, "sgd_step");
    if (!p.has_grad()) continue;
    auto vals = p.mutable_values();
    for (std::size_t j = 0; j < vals.size(); ++j) vals[j] -= lr * p.grad()[j];
  }
}

double clip_global_grad_norm(std::span<Tensor> params, double max_norm) {
  double sq = 0.0;
  for (const Tensor& p : params) {
    for (double g : p.grad()) sq += g * g;
  }
  const double norm = std::sqrt(sq);
  if (norm > max_norm && norm > 0.0) {
    const double factor = max_norm / norm;
    for (Tensor& p : params) {
      for (double& g : p.mutable_grad()) g *= factor;
    }
  }
  return norm;
}

void zero_grads(std::span<Tensor> params) {
  for (Tensor& p : params) p.zero_grad();
}

}  // namespace ulab
