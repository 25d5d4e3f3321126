#pragma once

// Minimal differentiable arrays: row-major buffers plus a recorded op graph
// for first-order reverse-mode gradients. Only the operations the forecasting
// model needs are provided; there are no general broadcasting rules.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <type_traits>
#include <vector>

namespace mtsmae {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_to_string(const Shape& shape);

namespace detail {

template <typename T>
struct Node {
  Shape shape;
  std::vector<T> value;
  std::vector<T> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> inputs;
  // Reads this node's grad and accumulates into the inputs' grads.
  std::function<void(Node&)> backward;

  void ensure_grad() {
    if (grad.empty()) grad.assign(value.size(), T(0));
  }
};

}  // namespace detail

/// Disables graph recording on the current thread while alive.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_enabled() noexcept;

/// Handle to an array value and (optionally) its place in the op graph.
/// Copies share the underlying node. Values of op results are never mutated;
/// leaves (parameters) are updated in place by optimizers and loaders only.
template <typename T>
class NDArray {
 public:
  using value_type = T;
  using NodeT = detail::Node<T>;
  using Backward = std::function<void(NodeT&)>;

  NDArray() = default;

  static NDArray zeros(Shape shape, bool requires_grad = false);
  static NDArray full(Shape shape, T fill, bool requires_grad = false);
  static NDArray from(Shape shape, std::vector<T> values, bool requires_grad = false);

  bool defined() const noexcept { return static_cast<bool>(node_); }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t dim(std::size_t axis) const { return node_->shape.at(axis); }
  std::size_t size() const { return node_->value.size(); }

  std::span<const T> data() const { return node_->value; }
  std::span<T> mutable_data() { return node_->value; }
  T item() const;
  T at(std::size_t row, std::size_t col) const;

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool flag) { node_->requires_grad = flag; }
  bool has_grad() const { return !node_->grad.empty(); }
  std::span<const T> grad() const { return node_->grad; }
  std::span<T> mutable_grad() {
    node_->ensure_grad();
    return node_->grad;
  }
  void zero_grad() { node_->grad.clear(); }

  /// Runs reverse-mode differentiation from this scalar. Leaf gradients
  /// accumulate across calls; intermediate gradients are recomputed.
  void backward() const;

  /// New leaf holding a copy of the values, outside any graph.
  NDArray detach() const;

  /// Builds an op result. Graph links are recorded only when grad mode is on
  /// and at least one input requires gradients.
  static NDArray make_result(Shape shape, std::vector<T> values,
                             const std::vector<NDArray>& inputs, Backward backward);

  NodeT* node() const noexcept { return node_.get(); }

 private:
  explicit NDArray(std::shared_ptr<NodeT> node) : node_(std::move(node)) {}
  std::shared_ptr<NodeT> node_;
};

// Operations. 2-D arrays are [rows, cols]; "last axis" ops accept any rank.

template <typename T>
NDArray<T> matmul(const NDArray<T>& a, const NDArray<T>& b);

/// Cross-correlation (no kernel flip). x: [L, C_in], kernel: [K, C_in, C_out].
template <typename T>
NDArray<T> conv1d(const NDArray<T>& x, const NDArray<T>& kernel, std::size_t stride,
                  std::size_t zero_pad);

/// Population-variance normalization over the last axis.
template <typename T>
NDArray<T> layer_norm(const NDArray<T>& x, const NDArray<T>& gamma, const NDArray<T>& beta,
                      T eps = T(1e-5));

template <typename T>
NDArray<T> softmax(const NDArray<T>& x);

/// Sets entries above the diagonal of a [Lq, Lk] score matrix to -inf.
template <typename T>
NDArray<T> causal_mask(const NDArray<T>& scores);

template <typename T>
NDArray<T> relu(const NDArray<T>& x);

template <typename T>
NDArray<T> add(const NDArray<T>& a, const NDArray<T>& b);

template <typename T>
NDArray<T> sub(const NDArray<T>& a, const NDArray<T>& b);

template <typename T>
NDArray<T> mul(const NDArray<T>& a, const NDArray<T>& b);

template <typename T>
NDArray<T> scale(const NDArray<T>& x, T factor);

/// x: [..., n] plus bias: [n] added to every row.
template <typename T>
NDArray<T> add_bias(const NDArray<T>& x, const NDArray<T>& bias);

template <typename T>
NDArray<T> transpose(const NDArray<T>& x);

template <typename T>
NDArray<T> concat_rows(const std::vector<NDArray<T>>& parts);

template <typename T>
NDArray<T> concat_cols(const std::vector<NDArray<T>>& parts);

template <typename T>
NDArray<T> slice_cols(const NDArray<T>& x, std::size_t begin, std::size_t end);

/// Rows of a 2-D array (or a [d] vector treated as one row) at the given ids.
template <typename T>
NDArray<T> gather_rows(const NDArray<T>& x, std::span<const std::size_t> ids);

/// table: [V, d]; ids outside [0, V) raise an index error.
template <typename T>
NDArray<T> embedding_lookup(const NDArray<T>& table, std::span<const std::int64_t> ids);

template <typename T>
NDArray<T> reshape(const NDArray<T>& x, Shape shape);

template <typename T>
NDArray<T> sum(const NDArray<T>& x);

template <typename T>
NDArray<T> mean(const NDArray<T>& x);

template <typename T>
NDArray<T> square(const NDArray<T>& x);

/// Inverted dropout; identity when rate == 0.
template <typename T>
NDArray<T> dropout(const NDArray<T>& x, T rate, std::mt19937_64& rng);

using ScalarFunction =
    std::function<NDArray<double>(const std::vector<NDArray<double>>& inputs)>;

/// Compares reverse-mode gradients of f against central differences, element
/// by element, and returns max |g_a - g_n| / max(1e-8, |g_a| + |g_n|).
/// Inputs are perturbed in place and restored.
double grad_check(const ScalarFunction& f, std::vector<NDArray<double>> inputs,
                  double eps = 1e-5);

/// Run-wide element type.
enum class DType : std::uint8_t { Float32 = 1, Float64 = 2 };

template <typename T>
constexpr DType dtype_of() {
  static_assert(std::is_same_v<T, float> || std::is_same_v<T, double>);
  return std::is_same_v<T, float> ? DType::Float32 : DType::Float64;
}

/// "float32" / "float64"
std::string dtype_name(DType dtype);
DType parse_dtype(std::string_view name);

}  // namespace mtsmae
