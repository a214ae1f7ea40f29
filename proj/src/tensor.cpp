#include "skipnet/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>
#include <unordered_set>

namespace skipnet {

namespace {

thread_local bool g_grad_enabled = true;
thread_local KinkMonitor* g_kink_monitor = nullptr;

void require(bool condition, const std::string& message) {
  if (!condition) throw DimensionError(message);
}

void require_rank2(const Tensor& t, const char* op) {
  if (!t.defined() || t.rank() != 2)
    throw DimensionError(std::string(op) + ": expected a [C, T] tensor, got " +
                         (t.defined() ? shape_string(t.shape()) : "undefined"));
}

// Input slot that wants a gradient, with its buffer allocated.
detail::Node* grad_target(detail::Node& self, std::size_t slot) {
  if (slot >= self.inputs.size()) return nullptr;
  auto& in = self.inputs[slot];
  if (!in || !in->requires_grad) return nullptr;
  in->ensure_grad();
  return in.get();
}

}  // namespace

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  os << ']';
  return os.str();
}

std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

// ---------------------------------------------------------------------------
// Tensor

Tensor::Tensor(Shape shape, double fill, bool requires_grad)
    : node_(std::make_shared<detail::Node>()) {
  for (std::size_t d : shape)
    if (d == 0) throw DimensionError("tensor dimensions must be positive, got " +
                                     shape_string(shape));
  node_->value.assign(shape_numel(shape), fill);
  node_->shape = std::move(shape);
  node_->requires_grad = requires_grad;
}

Tensor::Tensor(Shape shape, std::vector<double> values, bool requires_grad)
    : node_(std::make_shared<detail::Node>()) {
  for (std::size_t d : shape)
    if (d == 0) throw DimensionError("tensor dimensions must be positive, got " +
                                     shape_string(shape));
  if (values.size() != shape_numel(shape))
    throw DimensionError("tensor data length " + std::to_string(values.size()) +
                         " does not match shape " + shape_string(shape));
  node_->shape = std::move(shape);
  node_->value = std::move(values);
  node_->requires_grad = requires_grad;
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return Tensor(Shape{}, std::vector<double>{value}, requires_grad);
}

const Shape& Tensor::shape() const { return node_->shape; }

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= node_->shape.size())
    throw DimensionError("axis " + std::to_string(axis) + " out of range for " +
                         shape_string(node_->shape));
  return node_->shape[axis];
}

std::size_t Tensor::numel() const { return node_->value.size(); }

std::span<double> Tensor::data() const { return node_->value; }

std::span<double> Tensor::grad() const { return node_->grad; }

bool Tensor::has_grad() const { return node_->grad.size() == node_->value.size(); }

double Tensor::item() const {
  if (numel() != 1)
    throw ContractError("item() on tensor of shape " + shape_string(shape()));
  return node_->value[0];
}

double& Tensor::at(std::size_t row, std::size_t col) const {
  return node_->value[row * node_->shape.at(1) + col];
}

bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }

void Tensor::set_requires_grad(bool flag) const { node_->requires_grad = flag; }

void Tensor::zero_grad() const { node_->grad.assign(node_->value.size(), 0.0); }

Tensor Tensor::detach() const { return Tensor(node_->shape, node_->value, false); }

void Tensor::check_finite(const char* where) const {
  for (double v : node_->value)
    if (!std::isfinite(v))
      throw NonFiniteError(std::string(where) + ": non-finite value in tensor " +
                          shape_string(shape()));
}

// ---------------------------------------------------------------------------
// Graph

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

namespace detail {

Tensor make_result(Shape shape, std::vector<double> value,
                   std::vector<Tensor> inputs,
                   std::function<void(Node&)> backward) {
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  bool needs = false;
  if (g_grad_enabled)
    for (const auto& in : inputs) needs = needs || in.requires_grad();
  if (needs) {
    node->requires_grad = true;
    node->inputs.reserve(inputs.size());
    for (const auto& in : inputs) node->inputs.push_back(in.node());
    node->backward = std::move(backward);
  }
  return Tensor(std::move(node));
}

}  // namespace detail

void backward(const Tensor& loss) {
  if (!loss.defined() || loss.numel() != 1)
    throw ContractError("backward: loss must be a scalar, got " +
                        (loss.defined() ? shape_string(loss.shape()) : "undefined"));
  if (!loss.requires_grad())
    throw ContractError("backward: loss does not depend on any tensor requiring a gradient");

  // Post-order DFS gives a tape where every node follows its inputs.
  std::vector<detail::Node*> tape;
  std::unordered_set<detail::Node*> visited;
  std::vector<std::pair<detail::Node*, std::size_t>> stack;
  stack.emplace_back(loss.node().get(), 0);
  visited.insert(loss.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      detail::Node* child = node->inputs[next++].get();
      if (child && child->requires_grad && visited.insert(child).second)
        stack.emplace_back(child, 0);
    } else {
      tape.push_back(node);
      stack.pop_back();
    }
  }

  // Interior gradients are per-pass scratch; only leaves accumulate.
  for (detail::Node* node : tape)
    if (node->backward) node->grad.assign(node->value.size(), 0.0);
  detail::Node* root = loss.node().get();
  root->ensure_grad();
  root->grad[0] += 1.0;
  for (auto it = tape.rbegin(); it != tape.rend(); ++it)
    if ((*it)->backward) (*it)->backward(**it);
}

// ---------------------------------------------------------------------------
// conv1d

Tensor conv1d(const Tensor& input, const Tensor& weight, const Tensor& bias,
              std::size_t stride, std::size_t padding) {
  require_rank2(input, "conv1d");
  if (!weight.defined() || weight.rank() != 3)
    throw DimensionError("conv1d: weight must be [C_out, C_in, K]");
  const std::size_t c_in = input.dim(0), len = input.dim(1);
  const std::size_t c_out = weight.dim(0), kernel = weight.dim(2);
  if (weight.dim(1) != c_in)
    throw DimensionError("conv1d: weight expects " + std::to_string(weight.dim(1)) +
                         " input channels, input has " + std::to_string(c_in));
  if (bias.defined() && (bias.numel() != c_out))
    throw DimensionError("conv1d: bias length " + std::to_string(bias.numel()) +
                         " does not match " + std::to_string(c_out) + " output channels");
  if (stride < 1) throw ContractError("conv1d: stride must be >= 1");
  if (kernel > len + 2 * padding)
    throw DimensionError("conv1d: kernel " + std::to_string(kernel) +
                         " longer than padded input " + std::to_string(len + 2 * padding));
  const std::size_t out_len = (len + 2 * padding - kernel) / stride + 1;

  const auto x = input.data();
  const auto w = weight.data();
  std::vector<double> out(c_out * out_len, 0.0);
  // Output positions t read x[t * stride + k - padding]; valid t for tap k form
  // a contiguous range.
  auto valid_range = [=](std::size_t k) {
    const long shift = static_cast<long>(k) - static_cast<long>(padding);
    long lo = 0;
    if (shift < 0) lo = (-shift + static_cast<long>(stride) - 1) / static_cast<long>(stride);
    long hi_excl = static_cast<long>(out_len);
    // need t*stride + shift <= len - 1
    const long limit = static_cast<long>(len) - 1 - shift;
    if (limit < 0) return std::pair<long, long>{0, 0};
    hi_excl = std::min(hi_excl, limit / static_cast<long>(stride) + 1);
    return std::pair<long, long>{lo, std::max(lo, hi_excl)};
  };
  for (std::size_t o = 0; o < c_out; ++o) {
    double* orow = out.data() + o * out_len;
    if (bias.defined()) std::fill(orow, orow + out_len, bias.data()[o]);
    for (std::size_t i = 0; i < c_in; ++i) {
      const double* xrow = x.data() + i * len;
      for (std::size_t k = 0; k < kernel; ++k) {
        const double wv = w[(o * c_in + i) * kernel + k];
        const long shift = static_cast<long>(k) - static_cast<long>(padding);
        auto [lo, hi] = valid_range(k);
        for (long t = lo; t < hi; ++t)
          orow[t] += wv * xrow[t * static_cast<long>(stride) + shift];
      }
    }
  }

  return detail::make_result(
      {c_out, out_len}, std::move(out), {input, weight, bias.defined() ? bias : Tensor()},
      [=](detail::Node& self) {
        const double* dy = self.grad.data();
        detail::Node* dx = grad_target(self, 0);
        detail::Node* dw = grad_target(self, 1);
        detail::Node* db = grad_target(self, 2);
        const std::vector<double>& xv = self.inputs[0]->value;
        const std::vector<double>& wv = self.inputs[1]->value;
        for (std::size_t o = 0; o < c_out; ++o) {
          const double* grow = dy + o * out_len;
          if (db)
            for (std::size_t t = 0; t < out_len; ++t) db->grad[o] += grow[t];
          for (std::size_t i = 0; i < c_in; ++i) {
            for (std::size_t k = 0; k < kernel; ++k) {
              const std::size_t widx = (o * c_in + i) * kernel + k;
              const long shift = static_cast<long>(k) - static_cast<long>(padding);
              auto [lo, hi] = valid_range(k);
              if (dw) {
                double acc = 0.0;
                const double* xrow = xv.data() + i * len;
                for (long t = lo; t < hi; ++t)
                  acc += grow[t] * xrow[t * static_cast<long>(stride) + shift];
                dw->grad[widx] += acc;
              }
              if (dx) {
                const double wk = wv[widx];
                double* dxrow = dx->grad.data() + i * len;
                for (long t = lo; t < hi; ++t)
                  dxrow[t * static_cast<long>(stride) + shift] += wk * grow[t];
              }
            }
          }
        }
      });
}

// ---------------------------------------------------------------------------
// batchnorm1d

Tensor batchnorm1d(const Tensor& input, const Tensor& gamma, const Tensor& beta,
                   BatchNormMode mode, const Tensor& running_mean,
                   const Tensor& running_var, BatchNormOptions options) {
  require_rank2(input, "batchnorm1d");
  const std::size_t channels = input.dim(0), len = input.dim(1);
  require(gamma.numel() == channels && beta.numel() == channels,
          "batchnorm1d: gamma/beta must have " + std::to_string(channels) + " entries");
  if (!running_mean.defined() || !running_var.defined() ||
      running_mean.numel() != channels || running_var.numel() != channels)
    throw ContractError("batchnorm1d: running statistics not populated for " +
                        std::to_string(channels) + " channels");

  const auto x = input.data();
  std::vector<double> xhat(channels * len);
  std::vector<double> inv_std(channels);
  std::vector<double> out(channels * len);
  for (std::size_t c = 0; c < channels; ++c) {
    const double* row = x.data() + c * len;
    double mean, var;
    if (mode == BatchNormMode::Train) {
      mean = 0.0;
      for (std::size_t t = 0; t < len; ++t) mean += row[t];
      mean /= static_cast<double>(len);
      var = 0.0;
      for (std::size_t t = 0; t < len; ++t) var += (row[t] - mean) * (row[t] - mean);
      var /= static_cast<double>(len);
      const double unbiased = len > 1 ? var * len / (len - 1.0) : var;
      double& rm = running_mean.data()[c];
      double& rv = running_var.data()[c];
      rm = (1.0 - options.momentum) * rm + options.momentum * mean;
      rv = (1.0 - options.momentum) * rv + options.momentum * unbiased;
    } else {
      mean = running_mean.data()[c];
      var = running_var.data()[c];
    }
    inv_std[c] = 1.0 / std::sqrt(var + options.epsilon);
    const double g = gamma.data()[c], b = beta.data()[c];
    for (std::size_t t = 0; t < len; ++t) {
      const double h = (row[t] - mean) * inv_std[c];
      xhat[c * len + t] = h;
      out[c * len + t] = g * h + b;
    }
  }

  const bool train = mode == BatchNormMode::Train;
  return detail::make_result(
      {channels, len}, std::move(out), {input, gamma, beta},
      [=, xhat = std::move(xhat), inv_std = std::move(inv_std)](detail::Node& self) {
        const double* dy = self.grad.data();
        detail::Node* dx = grad_target(self, 0);
        detail::Node* dg = grad_target(self, 1);
        detail::Node* db = grad_target(self, 2);
        const std::vector<double>& g = self.inputs[1]->value;
        for (std::size_t c = 0; c < channels; ++c) {
          double sum_dy = 0.0, sum_dy_xhat = 0.0;
          for (std::size_t t = 0; t < len; ++t) {
            sum_dy += dy[c * len + t];
            sum_dy_xhat += dy[c * len + t] * xhat[c * len + t];
          }
          if (dg) dg->grad[c] += sum_dy_xhat;
          if (db) db->grad[c] += sum_dy;
          if (!dx) continue;
          const double scale = g[c] * inv_std[c];
          if (train) {
            const double n = static_cast<double>(len);
            for (std::size_t t = 0; t < len; ++t)
              dx->grad[c * len + t] +=
                  scale * (dy[c * len + t] - sum_dy / n - xhat[c * len + t] * sum_dy_xhat / n);
          } else {
            for (std::size_t t = 0; t < len; ++t) dx->grad[c * len + t] += scale * dy[c * len + t];
          }
        }
      });
}

// ---------------------------------------------------------------------------
// Pointwise

Nonlinearity parse_nonlinearity(const std::string& name) {
  if (name == "relu") return Nonlinearity::Relu;
  if (name == "sigmoid") return Nonlinearity::Sigmoid;
  if (name == "hardtanh") return Nonlinearity::Hardtanh;
  throw ConfigError("unknown nonlinearity '" + name + "' (expected relu, sigmoid or hardtanh)");
}

std::string to_string(Nonlinearity kind) {
  switch (kind) {
    case Nonlinearity::Relu: return "relu";
    case Nonlinearity::Sigmoid: return "sigmoid";
    case Nonlinearity::Hardtanh: return "hardtanh";
  }
  return "?";
}

KinkMonitor::KinkMonitor()
    : min_distance_(std::numeric_limits<double>::infinity()), previous_(g_kink_monitor) {
  g_kink_monitor = this;
}

KinkMonitor::~KinkMonitor() { g_kink_monitor = previous_; }

Tensor pointwise(Nonlinearity kind, const Tensor& input) {
  const auto x = input.data();
  if (g_kink_monitor && kind != Nonlinearity::Sigmoid) {
    double& closest = g_kink_monitor->min_distance_;
    for (double v : x) {
      if (kind == Nonlinearity::Relu)
        closest = std::min(closest, std::abs(v));
      else
        closest = std::min({closest, std::abs(v - 1.0), std::abs(v + 1.0)});
    }
  }
  std::vector<double> out(x.size());
  std::vector<double> slope(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    switch (kind) {
      case Nonlinearity::Relu:
        out[i] = x[i] > 0.0 ? x[i] : 0.0;
        slope[i] = x[i] > 0.0 ? 1.0 : 0.0;
        break;
      case Nonlinearity::Sigmoid: {
        const double s = x[i] >= 0.0 ? 1.0 / (1.0 + std::exp(-x[i]))
                                     : std::exp(x[i]) / (1.0 + std::exp(x[i]));
        out[i] = s;
        slope[i] = s * (1.0 - s);
        break;
      }
      case Nonlinearity::Hardtanh:
        out[i] = std::clamp(x[i], -1.0, 1.0);
        slope[i] = (x[i] > -1.0 && x[i] < 1.0) ? 1.0 : 0.0;
        break;
    }
  }
  return detail::make_result(input.shape(), std::move(out), {input},
                             [slope = std::move(slope)](detail::Node& self) {
                               if (auto* dx = grad_target(self, 0))
                                 for (std::size_t i = 0; i < slope.size(); ++i)
                                   dx->grad[i] += slope[i] * self.grad[i];
                             });
}

Tensor relu(const Tensor& input) { return pointwise(Nonlinearity::Relu, input); }
Tensor sigmoid(const Tensor& input) { return pointwise(Nonlinearity::Sigmoid, input); }
Tensor hardtanh(const Tensor& input) { return pointwise(Nonlinearity::Hardtanh, input); }

// ---------------------------------------------------------------------------
// Structural ops

Tensor add(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape())
    throw DimensionError("add: shape mismatch " + shape_string(a.shape()) + " vs " +
                         shape_string(b.shape()));
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] + b.data()[i];
  return detail::make_result(a.shape(), std::move(out), {a, b}, [](detail::Node& self) {
    for (std::size_t slot = 0; slot < 2; ++slot)
      if (auto* d = grad_target(self, slot))
        for (std::size_t i = 0; i < self.grad.size(); ++i) d->grad[i] += self.grad[i];
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape())
    throw DimensionError("sub: shape mismatch " + shape_string(a.shape()) + " vs " +
                         shape_string(b.shape()));
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] - b.data()[i];
  return detail::make_result(a.shape(), std::move(out), {a, b}, [](detail::Node& self) {
    if (auto* d = grad_target(self, 0))
      for (std::size_t i = 0; i < self.grad.size(); ++i) d->grad[i] += self.grad[i];
    if (auto* d = grad_target(self, 1))
      for (std::size_t i = 0; i < self.grad.size(); ++i) d->grad[i] -= self.grad[i];
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  const bool broadcast = a.shape() != b.shape();
  if (broadcast) {
    require_rank2(a, "mul");
    require_rank2(b, "mul");
    if (b.dim(0) != 1 || b.dim(1) != a.dim(1))
      throw DimensionError("mul: cannot broadcast " + shape_string(b.shape()) + " onto " +
                           shape_string(a.shape()));
  }
  const std::size_t n = a.numel();
  const std::size_t cols = broadcast ? a.dim(1) : n;
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = a.data()[i] * b.data()[broadcast ? i % cols : i];
  return detail::make_result(a.shape(), std::move(out), {a, b},
                             [broadcast, cols](detail::Node& self) {
                               const auto& av = self.inputs[0]->value;
                               const auto& bv = self.inputs[1]->value;
                               const std::size_t n = self.grad.size();
                               if (auto* da = grad_target(self, 0))
                                 for (std::size_t i = 0; i < n; ++i)
                                   da->grad[i] += self.grad[i] * bv[broadcast ? i % cols : i];
                               if (auto* db = grad_target(self, 1))
                                 for (std::size_t i = 0; i < n; ++i)
                                   db->grad[broadcast ? i % cols : i] += self.grad[i] * av[i];
                             });
}

Tensor scale(const Tensor& input, double factor) {
  std::vector<double> out(input.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = input.data()[i] * factor;
  return detail::make_result(input.shape(), std::move(out), {input},
                             [factor](detail::Node& self) {
                               if (auto* d = grad_target(self, 0))
                                 for (std::size_t i = 0; i < self.grad.size(); ++i)
                                   d->grad[i] += factor * self.grad[i];
                             });
}

Tensor concat_channels(std::span<const Tensor> inputs) {
  if (inputs.empty()) throw DimensionError("concat_channels: no inputs");
  for (const auto& t : inputs) require_rank2(t, "concat_channels");
  const std::size_t len = inputs.front().dim(1);
  std::size_t channels = 0;
  std::vector<std::size_t> offsets;
  for (const auto& t : inputs) {
    if (t.dim(1) != len)
      throw DimensionError("concat_channels: time length " + std::to_string(t.dim(1)) +
                           " differs from " + std::to_string(len));
    offsets.push_back(channels * len);
    channels += t.dim(0);
  }
  std::vector<double> out(channels * len);
  for (std::size_t i = 0; i < inputs.size(); ++i)
    std::copy(inputs[i].data().begin(), inputs[i].data().end(), out.begin() + offsets[i]);
  return detail::make_result({channels, len}, std::move(out),
                             std::vector<Tensor>(inputs.begin(), inputs.end()),
                             [offsets](detail::Node& self) {
                               for (std::size_t s = 0; s < self.inputs.size(); ++s)
                                 if (auto* d = grad_target(self, s))
                                   for (std::size_t i = 0; i < d->grad.size(); ++i)
                                     d->grad[i] += self.grad[offsets[s] + i];
                             });
}

Tensor affine(const Tensor& input, const Tensor& weight, const Tensor& bias) {
  require_rank2(input, "affine");
  require_rank2(weight, "affine");
  const std::size_t c_in = input.dim(0), len = input.dim(1), c_out = weight.dim(0);
  if (weight.dim(1) != c_in)
    throw DimensionError("affine: weight " + shape_string(weight.shape()) +
                         " does not match input channels " + std::to_string(c_in));
  if (bias.numel() != c_out)
    throw DimensionError("affine: bias must have " + std::to_string(c_out) + " entries");
  const auto x = input.data();
  const auto w = weight.data();
  std::vector<double> out(c_out * len);
  for (std::size_t o = 0; o < c_out; ++o) {
    double* orow = out.data() + o * len;
    std::fill(orow, orow + len, bias.data()[o]);
    for (std::size_t i = 0; i < c_in; ++i) {
      const double wv = w[o * c_in + i];
      const double* xrow = x.data() + i * len;
      for (std::size_t t = 0; t < len; ++t) orow[t] += wv * xrow[t];
    }
  }
  return detail::make_result(
      {c_out, len}, std::move(out), {input, weight, bias}, [=](detail::Node& self) {
        const auto& xv = self.inputs[0]->value;
        const auto& wv = self.inputs[1]->value;
        auto* dx = grad_target(self, 0);
        auto* dw = grad_target(self, 1);
        auto* db = grad_target(self, 2);
        for (std::size_t o = 0; o < c_out; ++o) {
          const double* g = self.grad.data() + o * len;
          if (db)
            for (std::size_t t = 0; t < len; ++t) db->grad[o] += g[t];
          for (std::size_t i = 0; i < c_in; ++i) {
            if (dw) {
              double acc = 0.0;
              for (std::size_t t = 0; t < len; ++t) acc += g[t] * xv[i * len + t];
              dw->grad[o * c_in + i] += acc;
            }
            if (dx) {
              const double w_oi = wv[o * c_in + i];
              for (std::size_t t = 0; t < len; ++t) dx->grad[i * len + t] += w_oi * g[t];
            }
          }
        }
      });
}

Tensor log_softmax(const Tensor& input) {
  require_rank2(input, "log_softmax");
  const std::size_t channels = input.dim(0), len = input.dim(1);
  const auto x = input.data();
  std::vector<double> out(channels * len);
  for (std::size_t t = 0; t < len; ++t) {
    double peak = x[t];
    for (std::size_t c = 1; c < channels; ++c) peak = std::max(peak, x[c * len + t]);
    double total = 0.0;
    for (std::size_t c = 0; c < channels; ++c) total += std::exp(x[c * len + t] - peak);
    const double lse = peak + std::log(total);
    for (std::size_t c = 0; c < channels; ++c) out[c * len + t] = x[c * len + t] - lse;
  }
  return detail::make_result({channels, len}, out, {input},
                             [channels, len, out](detail::Node& self) {
                               auto* dx = grad_target(self, 0);
                               if (!dx) return;
                               for (std::size_t t = 0; t < len; ++t) {
                                 double gsum = 0.0;
                                 for (std::size_t c = 0; c < channels; ++c)
                                   gsum += self.grad[c * len + t];
                                 for (std::size_t c = 0; c < channels; ++c)
                                   dx->grad[c * len + t] +=
                                       self.grad[c * len + t] - std::exp(out[c * len + t]) * gsum;
                               }
                             });
}

Tensor mean_over_time(const Tensor& input) {
  require_rank2(input, "mean_over_time");
  const std::size_t channels = input.dim(0), len = input.dim(1);
  std::vector<double> out(channels, 0.0);
  for (std::size_t c = 0; c < channels; ++c) {
    for (std::size_t t = 0; t < len; ++t) out[c] += input.data()[c * len + t];
    out[c] /= static_cast<double>(len);
  }
  return detail::make_result({channels, 1}, std::move(out), {input},
                             [channels, len](detail::Node& self) {
                               if (auto* dx = grad_target(self, 0))
                                 for (std::size_t c = 0; c < channels; ++c)
                                   for (std::size_t t = 0; t < len; ++t)
                                     dx->grad[c * len + t] += self.grad[c] / static_cast<double>(len);
                             });
}

Tensor sum(const Tensor& input) {
  double total = 0.0;
  for (double v : input.data()) total += v;
  return detail::make_result(Shape{}, {total}, {input}, [](detail::Node& self) {
    if (auto* dx = grad_target(self, 0))
      for (double& g : dx->grad) g += self.grad[0];
  });
}

// ---------------------------------------------------------------------------
// Finite differences

namespace {

void check_eps(double eps) {
  if (!(eps >= 1e-7 && eps <= 1e-3))
    throw ContractError("grad_check: eps must lie in [1e-7, 1e-3]");
}

double evaluate_scalar(const Tensor& out) {
  if (out.numel() != 1) throw ContractError("grad_check: function must return a scalar");
  return out.item();
}

double relative_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max(1.0, std::abs(analytic));
}

}  // namespace

double grad_check(const std::function<Tensor(const Tensor&)>& fn, const Tensor& x,
                  double eps) {
  check_eps(eps);
  Tensor probe = x.detach();
  probe.set_requires_grad(true);
  backward(fn(probe));
  std::vector<double> analytic(probe.grad().begin(), probe.grad().end());

  NoGradGuard no_grad;
  double worst = 0.0;
  auto values = probe.data();
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double original = values[i];
    values[i] = original + eps;
    const double plus = evaluate_scalar(fn(probe));
    values[i] = original - eps;
    const double minus = evaluate_scalar(fn(probe));
    values[i] = original;
    worst = std::max(worst, relative_error(analytic[i], (plus - minus) / (2.0 * eps)));
  }
  return worst;
}

double grad_check_params(const std::function<Tensor()>& fn, std::span<const Tensor> params,
                         double eps) {
  check_eps(eps);
  for (const auto& p : params) {
    if (!p.requires_grad()) throw ContractError("grad_check_params: parameter without gradient");
    p.zero_grad();
  }
  backward(fn());
  std::vector<std::vector<double>> analytic;
  for (const auto& p : params) analytic.emplace_back(p.grad().begin(), p.grad().end());

  NoGradGuard no_grad;
  double worst = 0.0;
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto values = params[k].data();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double original = values[i];
      values[i] = original + eps;
      const double plus = evaluate_scalar(fn());
      values[i] = original - eps;
      const double minus = evaluate_scalar(fn());
      values[i] = original;
      worst = std::max(worst, relative_error(analytic[k][i], (plus - minus) / (2.0 * eps)));
    }
  }
  return worst;
}

}  // namespace skipnet
