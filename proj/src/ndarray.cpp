#include "mtsmae/ndarray.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <unordered_set>

#include <fmt/format.h>

#include "mtsmae/error.hpp"

namespace mtsmae {

namespace {

thread_local bool g_grad_enabled = true;

[[noreturn]] void dimension_error(const std::string& what) {
  throw Error(ErrorKind::Dimension, what);
}

template <typename T>
void require_rank(const NDArray<T>& x, std::size_t rank, const char* op) {
  if (!x.defined()) dimension_error(fmt::format("{}: undefined array", op));
  if (x.rank() != rank) {
    dimension_error(fmt::format("{}: expected rank {} but got shape {}", op, rank,
                                shape_to_string(x.shape())));
  }
}

template <typename T>
void require_same_shape(const NDArray<T>& a, const NDArray<T>& b, const char* op) {
  if (a.shape() != b.shape()) {
    dimension_error(fmt::format("{}: shape mismatch {} vs {}", op, shape_to_string(a.shape()),
                                shape_to_string(b.shape())));
  }
}

template <typename T>
std::size_t last_dim(const NDArray<T>& x, const char* op) {
  if (x.rank() == 0) dimension_error(fmt::format("{}: scalar has no last axis", op));
  return x.shape().back();
}

}  // namespace

std::string dtype_name(DType dtype) { return dtype == DType::Float32 ? "float32" : "float64"; }

DType parse_dtype(std::string_view name) {
  if (name == "float32" || name == "f32") return DType::Float32;
  if (name == "float64" || name == "f64") return DType::Float64;
  throw Error(ErrorKind::Config, fmt::format("unknown dtype '{}' (expected float32 or float64)", name));
}

const char* error_kind_name(ErrorKind kind) noexcept {
  switch (kind) {
    case ErrorKind::Config: return "config";
    case ErrorKind::Dimension: return "dimension";
    case ErrorKind::Index: return "index";
    case ErrorKind::Data: return "data";
    case ErrorKind::Training: return "training";
    case ErrorKind::Transfer: return "transfer";
    case ErrorKind::Io: return "io";
  }
  return "unknown";
}

std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_to_string(const Shape& shape) {
  return fmt::format("[{}]", fmt::join(shape, ","));
}

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

bool grad_enabled() noexcept { return g_grad_enabled; }

// ---------------------------------------------------------------------------
// NDArray

template <typename T>
NDArray<T> NDArray<T>::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), T(0), requires_grad);
}

template <typename T>
NDArray<T> NDArray<T>::full(Shape shape, T fill, bool requires_grad) {
  std::vector<T> values(shape_numel(shape), fill);
  return from(std::move(shape), std::move(values), requires_grad);
}

template <typename T>
NDArray<T> NDArray<T>::from(Shape shape, std::vector<T> values, bool requires_grad) {
  if (shape_numel(shape) != values.size()) {
    dimension_error(fmt::format("array of shape {} needs {} values, got {}",
                                shape_to_string(shape), shape_numel(shape), values.size()));
  }
  auto node = std::make_shared<NodeT>();
  node->shape = std::move(shape);
  node->value = std::move(values);
  node->requires_grad = requires_grad;
  return NDArray(std::move(node));
}

template <typename T>
T NDArray<T>::item() const {
  if (size() != 1) {
    dimension_error(fmt::format("item() on array of shape {}", shape_to_string(shape())));
  }
  return node_->value[0];
}

template <typename T>
T NDArray<T>::at(std::size_t row, std::size_t col) const {
  require_rank(*this, 2, "at");
  if (row >= dim(0) || col >= dim(1)) {
    throw Error(ErrorKind::Index, fmt::format("at({}, {}) outside shape {}", row, col,
                                              shape_to_string(shape())));
  }
  return node_->value[row * dim(1) + col];
}

template <typename T>
NDArray<T> NDArray<T>::detach() const {
  return from(shape(), node_->value, false);
}

template <typename T>
NDArray<T> NDArray<T>::make_result(Shape shape, std::vector<T> values,
                                   const std::vector<NDArray>& inputs, Backward backward) {
  auto node = std::make_shared<NodeT>();
  node->shape = std::move(shape);
  node->value = std::move(values);
  if (g_grad_enabled) {
    bool any = std::any_of(inputs.begin(), inputs.end(),
                           [](const NDArray& in) { return in.requires_grad(); });
    if (any) {
      node->requires_grad = true;
      node->inputs.reserve(inputs.size());
      for (const auto& in : inputs) node->inputs.push_back(in.node_);
      node->backward = std::move(backward);
    }
  }
  return NDArray(std::move(node));
}

template <typename T>
void NDArray<T>::backward() const {
  if (size() != 1) {
    dimension_error(fmt::format("backward() needs a scalar, got shape {}",
                                shape_to_string(shape())));
  }
  if (!requires_grad()) return;

  // Iterative post-order DFS yields a topological order (inputs first).
  std::vector<NodeT*> order;
  std::unordered_set<NodeT*> visited;
  std::vector<std::pair<NodeT*, std::size_t>> stack;
  stack.emplace_back(node_.get(), 0);
  visited.insert(node_.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      NodeT* child = node->inputs[next++].get();
      if (child->requires_grad && visited.insert(child).second) stack.emplace_back(child, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  for (NodeT* node : order) {
    if (node->backward) node->grad.clear();
  }
  node_->ensure_grad();
  node_->grad[0] += T(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    NodeT* node = *it;
    if (node->backward && !node->grad.empty()) node->backward(*node);
  }
}

template class NDArray<float>;
template class NDArray<double>;

// ---------------------------------------------------------------------------
// Operations

namespace {

template <typename T>
detail::Node<T>& input(detail::Node<T>& self, std::size_t i) {
  return *self.inputs[i];
}

// Returns the input's grad buffer, or nullptr when it does not need one.
template <typename T>
T* grad_of(detail::Node<T>& self, std::size_t i) {
  auto& in = *self.inputs[i];
  if (!in.requires_grad) return nullptr;
  in.ensure_grad();
  return in.grad.data();
}

}  // namespace

template <typename T>
NDArray<T> matmul(const NDArray<T>& a, const NDArray<T>& b) {
  require_rank(a, 2, "matmul");
  require_rank(b, 2, "matmul");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) {
    dimension_error(fmt::format("matmul: inner dimensions differ, {} x {}",
                                shape_to_string(a.shape()), shape_to_string(b.shape())));
  }
  std::vector<T> out(m * n, T(0));
  const T* A = a.data().data();
  const T* B = b.data().data();
  for (std::size_t i = 0; i < m; ++i) {
    T* row = out.data() + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const T av = A[i * k + p];
      const T* brow = B + p * n;
      for (std::size_t j = 0; j < n; ++j) row[j] += av * brow[j];
    }
  }
  return NDArray<T>::make_result({m, n}, std::move(out), {a, b}, [m, k, n](detail::Node<T>& self) {
    const T* G = self.grad.data();
    const T* A = input(self, 0).value.data();
    const T* B = input(self, 1).value.data();
    if (T* dA = grad_of(self, 0)) {
      // dA = G * B^T
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
          T acc = T(0);
          const T* brow = B + p * n;
          const T* grow = G + i * n;
          for (std::size_t j = 0; j < n; ++j) acc += grow[j] * brow[j];
          dA[i * k + p] += acc;
        }
      }
    }
    if (T* dB = grad_of(self, 1)) {
      // dB = A^T * G
      for (std::size_t i = 0; i < m; ++i) {
        const T* grow = G + i * n;
        for (std::size_t p = 0; p < k; ++p) {
          const T av = A[i * k + p];
          T* drow = dB + p * n;
          for (std::size_t j = 0; j < n; ++j) drow[j] += av * grow[j];
        }
      }
    }
  });
}

template <typename T>
NDArray<T> conv1d(const NDArray<T>& x, const NDArray<T>& kernel, std::size_t stride,
                  std::size_t zero_pad) {
  require_rank(x, 2, "conv1d");
  require_rank(kernel, 3, "conv1d");
  if (stride == 0) throw Error(ErrorKind::Config, "conv1d: stride must be >= 1");
  const std::size_t len = x.dim(0), c_in = x.dim(1);
  const std::size_t width = kernel.dim(0), c_out = kernel.dim(2);
  if (kernel.dim(1) != c_in) {
    dimension_error(fmt::format("conv1d: input channels {} do not match kernel {}",
                                shape_to_string(x.shape()), shape_to_string(kernel.shape())));
  }
  const std::size_t padded = len + 2 * zero_pad;
  if (width == 0 || padded < width) {
    dimension_error(fmt::format("conv1d: window {} larger than padded input length {}", width,
                                padded));
  }
  const std::size_t out_len = (padded - width) / stride + 1;
  std::vector<T> out(out_len * c_out, T(0));
  const T* X = x.data().data();
  const T* W = kernel.data().data();
  for (std::size_t t = 0; t < out_len; ++t) {
    T* orow = out.data() + t * c_out;
    for (std::size_t k = 0; k < width; ++k) {
      const std::size_t pos = t * stride + k;
      if (pos < zero_pad || pos - zero_pad >= len) continue;
      const T* xrow = X + (pos - zero_pad) * c_in;
      for (std::size_t ci = 0; ci < c_in; ++ci) {
        const T xv = xrow[ci];
        const T* wrow = W + (k * c_in + ci) * c_out;
        for (std::size_t co = 0; co < c_out; ++co) orow[co] += xv * wrow[co];
      }
    }
  }
  return NDArray<T>::make_result(
      {out_len, c_out}, std::move(out), {x, kernel},
      [=](detail::Node<T>& self) {
        const T* G = self.grad.data();
        const T* X = input(self, 0).value.data();
        const T* W = input(self, 1).value.data();
        T* dX = grad_of(self, 0);
        T* dW = grad_of(self, 1);
        for (std::size_t t = 0; t < out_len; ++t) {
          const T* grow = G + t * c_out;
          for (std::size_t k = 0; k < width; ++k) {
            const std::size_t pos = t * stride + k;
            if (pos < zero_pad || pos - zero_pad >= len) continue;
            const std::size_t row = pos - zero_pad;
            for (std::size_t ci = 0; ci < c_in; ++ci) {
              const std::size_t wbase = (k * c_in + ci) * c_out;
              if (dX) {
                T acc = T(0);
                for (std::size_t co = 0; co < c_out; ++co) acc += grow[co] * W[wbase + co];
                dX[row * c_in + ci] += acc;
              }
              if (dW) {
                const T xv = X[row * c_in + ci];
                for (std::size_t co = 0; co < c_out; ++co) dW[wbase + co] += xv * grow[co];
              }
            }
          }
        }
      });
}

template <typename T>
NDArray<T> layer_norm(const NDArray<T>& x, const NDArray<T>& gamma, const NDArray<T>& beta,
                      T eps) {
  const std::size_t d = last_dim(x, "layer_norm");
  if (d == 0) dimension_error("layer_norm: normalized dimension is 0");
  if (gamma.size() != d || beta.size() != d) {
    dimension_error(fmt::format("layer_norm: last dimension {} vs gamma {} / beta {}", d,
                                shape_to_string(gamma.shape()), shape_to_string(beta.shape())));
  }
  const std::size_t rows = x.size() / d;
  std::vector<T> out(x.size());
  std::vector<T> xhat(x.size());
  std::vector<T> rstd(rows);
  const T* X = x.data().data();
  const T* g = gamma.data().data();
  const T* b = beta.data().data();
  for (std::size_t r = 0; r < rows; ++r) {
    const T* xr = X + r * d;
    T mu = T(0);
    for (std::size_t j = 0; j < d; ++j) mu += xr[j];
    mu /= static_cast<T>(d);
    T var = T(0);
    for (std::size_t j = 0; j < d; ++j) var += (xr[j] - mu) * (xr[j] - mu);
    var /= static_cast<T>(d);
    const T inv = T(1) / std::sqrt(var + eps);
    rstd[r] = inv;
    for (std::size_t j = 0; j < d; ++j) {
      const T h = (xr[j] - mu) * inv;
      xhat[r * d + j] = h;
      out[r * d + j] = h * g[j] + b[j];
    }
  }
  return NDArray<T>::make_result(
      x.shape(), std::move(out), {x, gamma, beta},
      [d, rows, xhat = std::move(xhat), rstd = std::move(rstd)](detail::Node<T>& self) {
        const T* G = self.grad.data();
        const T* g = input(self, 1).value.data();
        T* dX = grad_of(self, 0);
        T* dG = grad_of(self, 1);
        T* dB = grad_of(self, 2);
        for (std::size_t r = 0; r < rows; ++r) {
          const T* gr = G + r * d;
          const T* hr = xhat.data() + r * d;
          if (dG || dB) {
            for (std::size_t j = 0; j < d; ++j) {
              if (dG) dG[j] += gr[j] * hr[j];
              if (dB) dB[j] += gr[j];
            }
          }
          if (dX) {
            T mean_dy = T(0), mean_dyh = T(0);
            for (std::size_t j = 0; j < d; ++j) {
              const T dyh = gr[j] * g[j];
              mean_dy += dyh;
              mean_dyh += dyh * hr[j];
            }
            mean_dy /= static_cast<T>(d);
            mean_dyh /= static_cast<T>(d);
            for (std::size_t j = 0; j < d; ++j) {
              dX[r * d + j] += rstd[r] * (gr[j] * g[j] - mean_dy - hr[j] * mean_dyh);
            }
          }
        }
      });
}

template <typename T>
NDArray<T> softmax(const NDArray<T>& x) {
  const std::size_t n = last_dim(x, "softmax");
  if (n == 0) dimension_error("softmax: empty last axis");
  const std::size_t rows = x.size() / n;
  std::vector<T> out(x.size());
  const T* X = x.data().data();
  for (std::size_t r = 0; r < rows; ++r) {
    const T* xr = X + r * n;
    T* yr = out.data() + r * n;
    const T mx = *std::max_element(xr, xr + n);
    T total = T(0);
    for (std::size_t j = 0; j < n; ++j) {
      yr[j] = std::exp(xr[j] - mx);
      total += yr[j];
    }
    for (std::size_t j = 0; j < n; ++j) yr[j] /= total;
  }
  return NDArray<T>::make_result(x.shape(), out, {x}, [n, rows](detail::Node<T>& self) {
    T* dX = grad_of(self, 0);
    if (!dX) return;
    const T* G = self.grad.data();
    const T* Y = self.value.data();
    for (std::size_t r = 0; r < rows; ++r) {
      T dot = T(0);
      for (std::size_t j = 0; j < n; ++j) dot += G[r * n + j] * Y[r * n + j];
      for (std::size_t j = 0; j < n; ++j) dX[r * n + j] += Y[r * n + j] * (G[r * n + j] - dot);
    }
  });
}

template <typename T>
NDArray<T> causal_mask(const NDArray<T>& scores) {
  require_rank(scores, 2, "causal_mask");
  const std::size_t lq = scores.dim(0), lk = scores.dim(1);
  std::vector<T> out(scores.data().begin(), scores.data().end());
  for (std::size_t i = 0; i < lq; ++i) {
    for (std::size_t j = i + 1; j < lk; ++j) out[i * lk + j] = -std::numeric_limits<T>::infinity();
  }
  return NDArray<T>::make_result(scores.shape(), std::move(out), {scores},
                                 [lq, lk](detail::Node<T>& self) {
                                   T* dX = grad_of(self, 0);
                                   if (!dX) return;
                                   for (std::size_t i = 0; i < lq; ++i) {
                                     for (std::size_t j = 0; j <= i && j < lk; ++j) {
                                       dX[i * lk + j] += self.grad[i * lk + j];
                                     }
                                   }
                                 });
}

template <typename T>
NDArray<T> relu(const NDArray<T>& x) {
  std::vector<T> out(x.data().begin(), x.data().end());
  for (auto& v : out) v = v > T(0) ? v : T(0);
  return NDArray<T>::make_result(x.shape(), std::move(out), {x}, [](detail::Node<T>& self) {
    T* dX = grad_of(self, 0);
    if (!dX) return;
    const auto& xv = input(self, 0).value;
    for (std::size_t i = 0; i < xv.size(); ++i) {
      if (xv[i] > T(0)) dX[i] += self.grad[i];
    }
  });
}

template <typename T>
NDArray<T> add(const NDArray<T>& a, const NDArray<T>& b) {
  require_same_shape(a, b, "add");
  std::vector<T> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] + b.data()[i];
  return NDArray<T>::make_result(a.shape(), std::move(out), {a, b}, [](detail::Node<T>& self) {
    for (std::size_t k = 0; k < 2; ++k) {
      if (T* d = grad_of(self, k)) {
        for (std::size_t i = 0; i < self.grad.size(); ++i) d[i] += self.grad[i];
      }
    }
  });
}

template <typename T>
NDArray<T> sub(const NDArray<T>& a, const NDArray<T>& b) {
  require_same_shape(a, b, "sub");
  std::vector<T> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] - b.data()[i];
  return NDArray<T>::make_result(a.shape(), std::move(out), {a, b}, [](detail::Node<T>& self) {
    if (T* d = grad_of(self, 0)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) d[i] += self.grad[i];
    }
    if (T* d = grad_of(self, 1)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) d[i] -= self.grad[i];
    }
  });
}

template <typename T>
NDArray<T> mul(const NDArray<T>& a, const NDArray<T>& b) {
  require_same_shape(a, b, "mul");
  std::vector<T> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * b.data()[i];
  return NDArray<T>::make_result(a.shape(), std::move(out), {a, b}, [](detail::Node<T>& self) {
    const auto& av = input(self, 0).value;
    const auto& bv = input(self, 1).value;
    if (T* d = grad_of(self, 0)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) d[i] += self.grad[i] * bv[i];
    }
    if (T* d = grad_of(self, 1)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) d[i] += self.grad[i] * av[i];
    }
  });
}

template <typename T>
NDArray<T> scale(const NDArray<T>& x, T factor) {
  std::vector<T> out(x.data().begin(), x.data().end());
  for (auto& v : out) v *= factor;
  return NDArray<T>::make_result(x.shape(), std::move(out), {x}, [factor](detail::Node<T>& self) {
    if (T* d = grad_of(self, 0)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) d[i] += self.grad[i] * factor;
    }
  });
}

template <typename T>
NDArray<T> add_bias(const NDArray<T>& x, const NDArray<T>& bias) {
  const std::size_t n = last_dim(x, "add_bias");
  if (bias.size() != n) {
    dimension_error(fmt::format("add_bias: bias {} does not match last axis of {}",
                                shape_to_string(bias.shape()), shape_to_string(x.shape())));
  }
  std::vector<T> out(x.data().begin(), x.data().end());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bias.data()[i % n];
  return NDArray<T>::make_result(x.shape(), std::move(out), {x, bias}, [n](detail::Node<T>& self) {
    if (T* d = grad_of(self, 0)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) d[i] += self.grad[i];
    }
    if (T* d = grad_of(self, 1)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) d[i % n] += self.grad[i];
    }
  });
}

template <typename T>
NDArray<T> transpose(const NDArray<T>& x) {
  require_rank(x, 2, "transpose");
  const std::size_t r = x.dim(0), c = x.dim(1);
  std::vector<T> out(x.size());
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = x.data()[i * c + j];
  return NDArray<T>::make_result({c, r}, std::move(out), {x}, [r, c](detail::Node<T>& self) {
    if (T* d = grad_of(self, 0)) {
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) d[i * c + j] += self.grad[j * r + i];
    }
  });
}

template <typename T>
NDArray<T> concat_rows(const std::vector<NDArray<T>>& parts) {
  if (parts.empty()) dimension_error("concat_rows: no inputs");
  const std::size_t cols = parts.front().rank() == 2 ? parts.front().dim(1) : 0;
  std::size_t rows = 0;
  std::vector<std::size_t> offsets;
  for (const auto& p : parts) {
    require_rank(p, 2, "concat_rows");
    if (p.dim(1) != cols) {
      dimension_error(fmt::format("concat_rows: column mismatch {} vs {}", cols,
                                  shape_to_string(p.shape())));
    }
    offsets.push_back(rows * cols);
    rows += p.dim(0);
  }
  std::vector<T> out;
  out.reserve(rows * cols);
  for (const auto& p : parts) out.insert(out.end(), p.data().begin(), p.data().end());
  return NDArray<T>::make_result({rows, cols}, std::move(out), parts,
                                 [offsets](detail::Node<T>& self) {
                                   for (std::size_t k = 0; k < self.inputs.size(); ++k) {
                                     T* d = grad_of(self, k);
                                     if (!d) continue;
                                     const std::size_t n = self.inputs[k]->value.size();
                                     for (std::size_t i = 0; i < n; ++i) d[i] += self.grad[offsets[k] + i];
                                   }
                                 });
}

template <typename T>
NDArray<T> concat_cols(const std::vector<NDArray<T>>& parts) {
  if (parts.empty()) dimension_error("concat_cols: no inputs");
  const std::size_t rows = parts.front().rank() == 2 ? parts.front().dim(0) : 0;
  std::size_t cols = 0;
  std::vector<std::size_t> col_offsets;
  for (const auto& p : parts) {
    require_rank(p, 2, "concat_cols");
    if (p.dim(0) != rows) {
      dimension_error(fmt::format("concat_cols: row mismatch {} vs {}", rows,
                                  shape_to_string(p.shape())));
    }
    col_offsets.push_back(cols);
    cols += p.dim(1);
  }
  std::vector<T> out(rows * cols);
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const std::size_t pc = parts[k].dim(1);
    for (std::size_t i = 0; i < rows; ++i)
      for (std::size_t j = 0; j < pc; ++j) out[i * cols + col_offsets[k] + j] = parts[k].data()[i * pc + j];
  }
  return NDArray<T>::make_result({rows, cols}, std::move(out), parts,
                                 [rows, cols, col_offsets](detail::Node<T>& self) {
                                   for (std::size_t k = 0; k < self.inputs.size(); ++k) {
                                     T* d = grad_of(self, k);
                                     if (!d) continue;
                                     const std::size_t pc = self.inputs[k]->shape[1];
                                     for (std::size_t i = 0; i < rows; ++i)
                                       for (std::size_t j = 0; j < pc; ++j)
                                         d[i * pc + j] += self.grad[i * cols + col_offsets[k] + j];
                                   }
                                 });
}

template <typename T>
NDArray<T> slice_cols(const NDArray<T>& x, std::size_t begin, std::size_t end) {
  require_rank(x, 2, "slice_cols");
  const std::size_t rows = x.dim(0), cols = x.dim(1);
  if (begin > end || end > cols) {
    dimension_error(fmt::format("slice_cols: [{}, {}) outside {}", begin, end,
                                shape_to_string(x.shape())));
  }
  const std::size_t w = end - begin;
  std::vector<T> out(rows * w);
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < w; ++j) out[i * w + j] = x.data()[i * cols + begin + j];
  return NDArray<T>::make_result({rows, w}, std::move(out), {x},
                                 [rows, cols, begin, w](detail::Node<T>& self) {
                                   if (T* d = grad_of(self, 0)) {
                                     for (std::size_t i = 0; i < rows; ++i)
                                       for (std::size_t j = 0; j < w; ++j)
                                         d[i * cols + begin + j] += self.grad[i * w + j];
                                   }
                                 });
}

template <typename T>
NDArray<T> gather_rows(const NDArray<T>& x, std::span<const std::size_t> ids) {
  if (x.rank() != 1 && x.rank() != 2) {
    dimension_error(fmt::format("gather_rows: expected rank 1 or 2, got {}",
                                shape_to_string(x.shape())));
  }
  const std::size_t rows = x.rank() == 2 ? x.dim(0) : 1;
  const std::size_t cols = x.shape().back();
  std::vector<T> out(ids.size() * cols);
  for (std::size_t r = 0; r < ids.size(); ++r) {
    if (ids[r] >= rows) {
      throw Error(ErrorKind::Index,
                  fmt::format("gather_rows: row id {} outside [0, {})", ids[r], rows));
    }
    std::copy_n(x.data().begin() + static_cast<std::ptrdiff_t>(ids[r] * cols), cols,
                out.begin() + static_cast<std::ptrdiff_t>(r * cols));
  }
  std::vector<std::size_t> saved(ids.begin(), ids.end());
  return NDArray<T>::make_result({ids.size(), cols}, std::move(out), {x},
                                 [cols, saved = std::move(saved)](detail::Node<T>& self) {
                                   T* d = grad_of(self, 0);
                                   if (!d) return;
                                   for (std::size_t r = 0; r < saved.size(); ++r)
                                     for (std::size_t j = 0; j < cols; ++j)
                                       d[saved[r] * cols + j] += self.grad[r * cols + j];
                                 });
}

template <typename T>
NDArray<T> embedding_lookup(const NDArray<T>& table, std::span<const std::int64_t> ids) {
  require_rank(table, 2, "embedding_lookup");
  const auto vocab = static_cast<std::int64_t>(table.dim(0));
  std::vector<std::size_t> rows(ids.size());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || ids[i] >= vocab) {
      throw Error(ErrorKind::Index,
                  fmt::format("embedding_lookup: id {} outside vocabulary [0, {})", ids[i], vocab));
    }
    rows[i] = static_cast<std::size_t>(ids[i]);
  }
  return gather_rows(table, std::span<const std::size_t>(rows));
}

template <typename T>
NDArray<T> reshape(const NDArray<T>& x, Shape shape) {
  if (shape_numel(shape) != x.size()) {
    dimension_error(fmt::format("reshape: {} to {} changes element count",
                                shape_to_string(x.shape()), shape_to_string(shape)));
  }
  std::vector<T> out(x.data().begin(), x.data().end());
  return NDArray<T>::make_result(std::move(shape), std::move(out), {x}, [](detail::Node<T>& self) {
    if (T* d = grad_of(self, 0)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) d[i] += self.grad[i];
    }
  });
}

template <typename T>
NDArray<T> sum(const NDArray<T>& x) {
  T total = T(0);
  for (T v : x.data()) total += v;
  return NDArray<T>::make_result({}, {total}, {x}, [](detail::Node<T>& self) {
    if (T* d = grad_of(self, 0)) {
      const std::size_t n = self.inputs[0]->value.size();
      for (std::size_t i = 0; i < n; ++i) d[i] += self.grad[0];
    }
  });
}

template <typename T>
NDArray<T> mean(const NDArray<T>& x) {
  if (x.size() == 0) dimension_error("mean: empty array");
  return scale(sum(x), T(1) / static_cast<T>(x.size()));
}

template <typename T>
NDArray<T> square(const NDArray<T>& x) {
  std::vector<T> out(x.data().begin(), x.data().end());
  for (auto& v : out) v *= v;
  return NDArray<T>::make_result(x.shape(), std::move(out), {x}, [](detail::Node<T>& self) {
    if (T* d = grad_of(self, 0)) {
      const auto& xv = input(self, 0).value;
      for (std::size_t i = 0; i < xv.size(); ++i) d[i] += T(2) * xv[i] * self.grad[i];
    }
  });
}

template <typename T>
NDArray<T> dropout(const NDArray<T>& x, T rate, std::mt19937_64& rng) {
  if (rate < T(0) || rate >= T(1)) {
    throw Error(ErrorKind::Config, fmt::format("dropout: rate {} outside [0, 1)", rate));
  }
  if (rate == T(0)) return x;
  const T keep_scale = T(1) / (T(1) - rate);
  std::uniform_real_distribution<double> uniform(0.0, 1.0);
  std::vector<T> factor(x.size());
  for (auto& f : factor) f = uniform(rng) < static_cast<double>(rate) ? T(0) : keep_scale;
  std::vector<T> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x.data()[i] * factor[i];
  return NDArray<T>::make_result(x.shape(), std::move(out), {x},
                                 [factor = std::move(factor)](detail::Node<T>& self) {
                                   if (T* d = grad_of(self, 0)) {
                                     for (std::size_t i = 0; i < factor.size(); ++i)
                                       d[i] += self.grad[i] * factor[i];
                                   }
                                 });
}

double grad_check(const ScalarFunction& f, std::vector<NDArray<double>> inputs, double eps) {
  if (!(eps > 0.0)) throw Error(ErrorKind::Config, "grad_check: eps must be positive");
  for (auto& in : inputs) {
    in.set_requires_grad(true);
    in.zero_grad();
  }
  auto check_finite = [](double v, const char* where) {
    if (!std::isfinite(v)) {
      throw Error(ErrorKind::Training, fmt::format("grad_check: non-finite {} ({})", where, v));
    }
  };
  {
    NDArray<double> out = f(inputs);
    check_finite(out.item(), "function value");
    out.backward();
  }

  double worst = 0.0;
  for (auto& in : inputs) {
    std::vector<double> analytic(in.size(), 0.0);
    if (in.has_grad()) std::copy(in.grad().begin(), in.grad().end(), analytic.begin());
    auto values = in.mutable_data();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double original = values[i];
      double plus, minus;
      {
        NoGradGuard guard;
        values[i] = original + eps;
        plus = f(inputs).item();
        values[i] = original - eps;
        minus = f(inputs).item();
        values[i] = original;
      }
      check_finite(plus, "perturbed value");
      check_finite(minus, "perturbed value");
      check_finite(analytic[i], "analytic gradient");
      const double numeric = (plus - minus) / (2.0 * eps);
      const double err =
          std::abs(analytic[i] - numeric) / std::max(1e-8, std::abs(analytic[i]) + std::abs(numeric));
      worst = std::max(worst, err);
    }
  }
  return worst;
}

#define MTSMAE_INSTANTIATE_OPS(T)                                                              \
  template NDArray<T> matmul(const NDArray<T>&, const NDArray<T>&);                            \
  template NDArray<T> conv1d(const NDArray<T>&, const NDArray<T>&, std::size_t, std::size_t);  \
  template NDArray<T> layer_norm(const NDArray<T>&, const NDArray<T>&, const NDArray<T>&, T);  \
  template NDArray<T> softmax(const NDArray<T>&);                                              \
  template NDArray<T> causal_mask(const NDArray<T>&);                                          \
  template NDArray<T> relu(const NDArray<T>&);                                                 \
  template NDArray<T> add(const NDArray<T>&, const NDArray<T>&);                               \
  template NDArray<T> sub(const NDArray<T>&, const NDArray<T>&);                               \
  template NDArray<T> mul(const NDArray<T>&, const NDArray<T>&);                               \
  template NDArray<T> scale(const NDArray<T>&, T);                                             \
  template NDArray<T> add_bias(const NDArray<T>&, const NDArray<T>&);                          \
  template NDArray<T> transpose(const NDArray<T>&);                                            \
  template NDArray<T> concat_rows(const std::vector<NDArray<T>>&);                             \
  template NDArray<T> concat_cols(const std::vector<NDArray<T>>&);                             \
  template NDArray<T> slice_cols(const NDArray<T>&, std::size_t, std::size_t);                 \
  template NDArray<T> gather_rows(const NDArray<T>&, std::span<const std::size_t>);            \
  template NDArray<T> embedding_lookup(const NDArray<T>&, std::span<const std::int64_t>);      \
  template NDArray<T> reshape(const NDArray<T>&, Shape);                                       \
  template NDArray<T> sum(const NDArray<T>&);                                                  \
  template NDArray<T> mean(const NDArray<T>&);                                                 \
  template NDArray<T> square(const NDArray<T>&);                                               \
  template NDArray<T> dropout(const NDArray<T>&, T, std::mt19937_64&);

MTSMAE_INSTANTIATE_OPS(float)
MTSMAE_INSTANTIATE_OPS(double)

#undef MTSMAE_INSTANTIATE_OPS

}  // namespace mtsmae
