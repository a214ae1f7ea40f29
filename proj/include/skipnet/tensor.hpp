#pragma once

// Dense 64-bit tensors with tape-based reverse-mode differentiation.
//
// A Tensor is a shared handle: copies alias the same storage and the same
// node of the computation graph. Every op that sees at least one input with
// requires_grad (while gradient recording is enabled) records its inputs and
// a backward rule on the output node. backward() linearizes the reachable
// graph into a tape in topological order and replays it in reverse.

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "skipnet/error.hpp"

namespace skipnet {

using Shape = std::vector<std::size_t>;

std::string shape_string(const Shape& shape);
std::size_t shape_numel(const Shape& shape);

namespace detail {
struct Node;
}

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0, bool requires_grad = false);
  Tensor(Shape shape, std::vector<double> values, bool requires_grad = false);

  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const;

  // Values are writable through a const handle: the handle is const, the
  // storage it points at is shared.
  std::span<double> data() const;
  // Empty until a backward pass reaches this tensor or zero_grad() runs.
  std::span<double> grad() const;
  bool has_grad() const;

  double item() const;
  double& at(std::size_t row, std::size_t col) const;

  bool requires_grad() const;
  void set_requires_grad(bool flag) const;
  void zero_grad() const;

  // New leaf holding a copy of the values; no history, no gradient.
  Tensor detach() const;

  // Throws ContractError when any value is NaN or infinite.
  void check_finite(const char* where) const;

  // Internal: used by ops to build the graph.
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
  const std::shared_ptr<detail::Node>& node() const { return node_; }

 private:
  std::shared_ptr<detail::Node> node_;
};

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> inputs;
  // Reads this->grad, accumulates into inputs[i]->grad.
  std::function<void(Node&)> backward;

  void ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
  }
};

// Creates an output node. When recording is on and any input needs a
// gradient, the inputs and the backward rule are attached.
Tensor make_result(Shape shape, std::vector<double> value,
                   std::vector<Tensor> inputs,
                   std::function<void(Node&)> backward);

}  // namespace detail

// Gradient recording is enabled by default; NoGradGuard disables it for the
// current thread (inference, finite differences).
bool grad_enabled();

class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

// Propagates d(loss)/d(tensor) into every reachable tensor that requires a
// gradient. Leaf gradients accumulate across calls; the caller zeroes them.
void backward(const Tensor& loss);

// ---------------------------------------------------------------------------
// Operations. Feature maps are [channels, time] row-major.

Tensor conv1d(const Tensor& input, const Tensor& weight, const Tensor& bias,
              std::size_t stride = 1, std::size_t padding = 0);

enum class BatchNormMode { Train, Eval };

struct BatchNormOptions {
  double epsilon = 1e-5;
  double momentum = 0.1;
};

// Per-channel normalization over the time axis. In Train mode the batch
// moments are used and the running buffers are updated in place (biased
// variance for normalization, unbiased for the running estimate); in Eval
// mode the running buffers are used.
Tensor batchnorm1d(const Tensor& input, const Tensor& gamma, const Tensor& beta,
                   BatchNormMode mode, const Tensor& running_mean,
                   const Tensor& running_var, BatchNormOptions options = {});

enum class Nonlinearity { Relu, Sigmoid, Hardtanh };

Nonlinearity parse_nonlinearity(const std::string& name);
std::string to_string(Nonlinearity kind);

Tensor pointwise(Nonlinearity kind, const Tensor& input);

// While alive, records the smallest distance between any relu/hardtanh input
// on this thread and the nearest kink of that nonlinearity. Finite-difference
// checks use it to reject evaluation points next to a kink.
class KinkMonitor {
 public:
  KinkMonitor();
  ~KinkMonitor();
  KinkMonitor(const KinkMonitor&) = delete;
  KinkMonitor& operator=(const KinkMonitor&) = delete;

  double min_distance() const { return min_distance_; }

 private:
  friend Tensor pointwise(Nonlinearity, const Tensor&);
  double min_distance_;
  KinkMonitor* previous_;
};

Tensor relu(const Tensor& input);
Tensor sigmoid(const Tensor& input);
Tensor hardtanh(const Tensor& input);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
// Elementwise product. `b` may also be [1, T] against `a` of shape [C, T]
// (one value per frame broadcast over channels).
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& input, double factor);
Tensor concat_channels(std::span<const Tensor> inputs);
// Per-frame affine map over channels: weight [C_out, C_in], bias [C_out].
Tensor affine(const Tensor& input, const Tensor& weight, const Tensor& bias);
// Normalizes each frame (column) over the channel axis.
Tensor log_softmax(const Tensor& input);
// [C, T] -> [C, 1]
Tensor mean_over_time(const Tensor& input);
// Sum of all elements, as a scalar tensor.
Tensor sum(const Tensor& input);

// Max over elements of |analytic - central difference| / max(1, |analytic|)
// for the scalar function `fn` at `x`. eps must lie in [1e-7, 1e-3].
double grad_check(const std::function<Tensor(const Tensor&)>& fn,
                  const Tensor& x, double eps = 1e-5);

// Same measure for a closure over parameters, perturbing each parameter in
// place. Parameters must require gradients; their grads are zeroed first.
double grad_check_params(const std::function<Tensor()>& fn,
                         std::span<const Tensor> params, double eps = 1e-5);

}  // namespace skipnet
