#include "skipnet/gradcheck.hpp"

#include <cmath>
#include <random>

#include "skipnet/ctc.hpp"

namespace skipnet {

namespace {

Tensor uniform(Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> dist(lo, hi);
  std::vector<double> values(shape_numel(shape));
  for (double& v : values) v = dist(rng);
  return Tensor(std::move(shape), std::move(values));
}

// Weighted sum with fixed random weights: a scalar with non-uniform upstream
// gradient.
Tensor project(const Tensor& y, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return sum(mul(y, uniform(y.shape(), rng)));
}

double kink_distance(const std::function<Tensor()>& fn) {
  NoGradGuard no_grad;
  KinkMonitor monitor;
  fn();
  return monitor.min_distance();
}

class SuiteRunner {
 public:
  explicit SuiteRunner(const GradSuiteOptions& options) : options_(options) {}

  // `check(rng)` draws its own evaluation point and returns the error, or a
  // negative value when the point sits next to a kink and must be re-drawn.
  void run(const std::string& name, const std::function<double(std::mt19937_64&)>& check) {
    double worst = 0.0;
    for (unsigned seed = 1; seed <= options_.seeds; ++seed) {
      std::mt19937_64 rng(seed * 7919 + results_.size());
      double err = -1.0;
      for (int attempt = 0; attempt < 100 && err < 0.0; ++attempt) err = check(rng);
      if (err < 0.0) err = std::numeric_limits<double>::infinity();
      worst = std::max(worst, err);
    }
    results_.push_back({name, worst, options_.tolerance, worst < options_.tolerance});
  }

  const GradSuiteOptions& options() const { return options_; }
  std::vector<GradSuiteResult> take() { return std::move(results_); }

 private:
  GradSuiteOptions options_;
  std::vector<GradSuiteResult> results_;
};

}  // namespace

ModelConfig tiny_model_config(ConnectivityKind kind, std::uint64_t seed) {
  ModelConfig c;
  c.connectivity = kind;
  c.input_features = 3;
  c.width = 4;
  c.body_layers = 7;
  c.body_kernel = 3;
  c.stride_kernel = 3;
  c.stride = 2;
  c.head_kernel = 5;
  c.alphabet_size = 2;
  c.growth_rate = 2;
  c.init_seed = seed;
  return c;
}

std::vector<GradSuiteResult> run_op_gradient_suites(const GradSuiteOptions& options) {
  SuiteRunner runner(options);
  const double eps = options.eps, margin = options.kink_margin;

  auto unary = [&](const std::string& name, std::function<Tensor(const Tensor&)> op, bool kinked) {
    runner.run(name, [=](std::mt19937_64& rng) {
      std::uniform_int_distribution<std::size_t> c(1, 8), t(2, 32);
      Tensor x = uniform({c(rng), t(rng)}, rng, -2.0, 2.0);
      const std::uint64_t seed = rng();
      auto fn = [=](const Tensor& v) { return project(op(v), seed); };
      if (kinked && kink_distance([&] { return fn(x); }) < margin) return -1.0;
      return grad_check(fn, x, eps);
    });
  };

  runner.run("conv1d", [=](std::mt19937_64& rng) {
    std::uniform_int_distribution<std::size_t> c(1, 8), t(8, 32), k(1, 5), s(1, 3);
    const std::size_t c_in = c(rng), c_out = c(rng), kernel = k(rng), stride = s(rng);
    Tensor x = uniform({c_in, t(rng)}, rng), w = uniform({c_out, c_in, kernel}, rng);
    Tensor b = uniform({c_out}, rng);
    const std::size_t pad = kernel / 2;
    const std::uint64_t seed = rng();
    double err = grad_check([&](const Tensor& v) { return project(conv1d(v, w, b, stride, pad), seed); }, x, eps);
    err = std::max(err, grad_check([&](const Tensor& v) { return project(conv1d(x, v, b, stride, pad), seed); }, w, eps));
    return std::max(err, grad_check([&](const Tensor& v) { return project(conv1d(x, w, v, stride, pad), seed); }, b, eps));
  });

  for (BatchNormMode mode : {BatchNormMode::Train, BatchNormMode::Eval}) {
    runner.run(mode == BatchNormMode::Train ? "batchnorm1d/train" : "batchnorm1d/eval",
               [=](std::mt19937_64& rng) {
                 std::uniform_int_distribution<std::size_t> c(1, 8), t(2, 32);
                 const std::size_t channels = c(rng);
                 Tensor x = uniform({channels, t(rng)}, rng, -3.0, 3.0);
                 Tensor gamma = uniform({channels}, rng, 0.5, 1.5), beta = uniform({channels}, rng);
                 Tensor rm = uniform({channels}, rng), rv = uniform({channels}, rng, 0.5, 2.0);
                 const std::uint64_t seed = rng();
                 auto bn = [&](const Tensor& a, const Tensor& g, const Tensor& b) {
                   return project(batchnorm1d(a, g, b, mode, rm, rv), seed);
                 };
                 double err = grad_check([&](const Tensor& v) { return bn(v, gamma, beta); }, x, eps);
                 err = std::max(err, grad_check([&](const Tensor& v) { return bn(x, v, beta); }, gamma, eps));
                 return std::max(err, grad_check([&](const Tensor& v) { return bn(x, gamma, v); }, beta, eps));
               });
  }

  unary("relu", [](const Tensor& v) { return relu(v); }, true);
  unary("sigmoid", [](const Tensor& v) { return sigmoid(v); }, false);
  unary("hardtanh", [](const Tensor& v) { return hardtanh(v); }, true);
  unary("add", [](const Tensor& v) { return add(v, scale(v, 2.0)); }, false);
  unary("sub", [](const Tensor& v) { return sub(scale(v, 0.5), sigmoid(v)); }, false);
  unary("mul", [](const Tensor& v) { return mul(v, sigmoid(v)); }, false);
  unary("scale", [](const Tensor& v) { return scale(v, -1.7); }, false);
  unary("concat_channels", [](const Tensor& v) {
    return concat_channels(std::vector<Tensor>{v, sigmoid(v), v});
  }, false);
  unary("log_softmax", [](const Tensor& v) { return log_softmax(v); }, false);
  unary("mean_over_time", [](const Tensor& v) { return mean_over_time(v); }, false);

  runner.run("mul/frame-broadcast", [=](std::mt19937_64& rng) {
    Tensor x = uniform({5, 9}, rng), g = uniform({1, 9}, rng);
    const std::uint64_t seed = rng();
    double err = grad_check([&](const Tensor& v) { return project(mul(v, g), seed); }, x, eps);
    return std::max(err, grad_check([&](const Tensor& v) { return project(mul(x, v), seed); }, g, eps));
  });

  runner.run("affine", [=](std::mt19937_64& rng) {
    std::uniform_int_distribution<std::size_t> c(1, 8), t(2, 32);
    const std::size_t c_in = c(rng), c_out = c(rng);
    Tensor x = uniform({c_in, t(rng)}, rng), w = uniform({c_out, c_in}, rng), b = uniform({c_out}, rng);
    const std::uint64_t seed = rng();
    double err = grad_check([&](const Tensor& v) { return project(affine(v, w, b), seed); }, x, eps);
    err = std::max(err, grad_check([&](const Tensor& v) { return project(affine(x, v, b), seed); }, w, eps));
    return std::max(err, grad_check([&](const Tensor& v) { return project(affine(x, w, v), seed); }, b, eps));
  });

  runner.run("ctc_loss", [=](std::mt19937_64& rng) {
    std::uniform_int_distribution<std::size_t> t(6, 20);
    Tensor logits = uniform({4, t(rng)}, rng, -2.0, 2.0);
    std::vector<std::size_t> target{1, 2, 2};
    return grad_check([&](const Tensor& v) { return ctc_loss_tensor(log_softmax(v), target); }, logits, eps);
  });

  runner.run("conv1d+relu+log_softmax", [=](std::mt19937_64& rng) {
    Tensor x = uniform({3, 16}, rng), w = uniform({5, 3, 3}, rng), b = uniform({5}, rng);
    const std::uint64_t seed = rng();
    auto fn = [&](const Tensor& v) { return project(log_softmax(relu(conv1d(v, w, b, 1, 1))), seed); };
    if (kink_distance([&] { return fn(x); }) < margin) return -1.0;
    return grad_check(fn, x, eps);
  });

  return runner.take();
}

std::vector<GradSuiteResult> run_block_gradient_suites(const GradSuiteOptions& options) {
  SuiteRunner runner(options);
  const double eps = options.eps, margin = options.kink_margin;

  auto block_suite = [&](const std::string& name,
                         std::function<std::unique_ptr<Block>(const BlockConfig&, std::mt19937_64&)> make) {
    runner.run(name, [=](std::mt19937_64& rng) {
      BlockConfig config;
      config.channels = 4;
      config.kernel_size = 3;
      config.growth_rate = 2;
      config.dense_block_depth = 3;
      config.gate_bias_init = -1.0;
      std::unique_ptr<Block> block = make(config, rng);
      Tensor x = uniform({4, 12}, rng, -1.5, 1.5);
      const std::uint64_t seed = rng();
      auto eval = [&](const Tensor& v) { return project(block->forward(v, Mode::Train), seed); };
      if (kink_distance([&] { return eval(x); }) < margin) return -1.0;
      ParameterRegistry registry;
      block->register_into("b", registry);
      std::vector<Tensor> params;
      for (const auto& p : registry.parameters()) params.push_back(p.tensor);
      const double err = grad_check(eval, x, eps);
      return std::max(err, grad_check_params([&] { return eval(x); }, params, eps));
    });
  };

  block_suite("block/plain", [](const BlockConfig& c, std::mt19937_64& rng) {
    return std::make_unique<PlainLayer>(c.channels, c, rng);
  });
  block_suite("block/residual", [](const BlockConfig& c, std::mt19937_64& rng) {
    return std::make_unique<ResidualBlock>(c, rng);
  });
  block_suite("block/highway", [](const BlockConfig& c, std::mt19937_64& rng) {
    return std::make_unique<HighwayBlock>(c, rng);
  });
  block_suite("block/highway-per-channel", [](const BlockConfig& c, std::mt19937_64& rng) {
    BlockConfig per_channel = c;
    per_channel.per_channel_gate = true;
    return std::make_unique<HighwayBlock>(per_channel, rng);
  });
  block_suite("block/dense", [](const BlockConfig& c, std::mt19937_64& rng) {
    return std::make_unique<DenseBlock>(c, c.channels, rng);
  });

  runner.run("block/transition", [=](std::mt19937_64& rng) {
    Transition transition(10, 5, rng);
    Tensor x = uniform({10, 7}, rng);
    const std::uint64_t seed = rng();
    std::vector<Tensor> params{transition.conv.weight, transition.conv.bias};
    const double err = grad_check([&](const Tensor& v) { return project(transition.forward(v), seed); }, x, eps);
    return std::max(err, grad_check_params([&] { return project(transition.forward(x), seed); }, params, eps));
  });

  return runner.take();
}

std::vector<GradSuiteResult> run_model_gradient_suites(const GradSuiteOptions& options) {
  SuiteRunner runner(options);
  const double eps = options.eps, margin = options.kink_margin;
  for (ConnectivityKind kind : kAllConnectivityKinds) {
    runner.run("model/" + to_string(kind), [=](std::mt19937_64& rng) {
      AcousticModel model(tiny_model_config(kind, rng()));
      Tensor features = uniform({3, 12}, rng, -2.0, 2.0);
      const std::vector<std::size_t> target{1, 2, 1};
      auto loss = [&](const Tensor& v) { return ctc_loss_tensor(model.forward(v, Mode::Train), target); };
      if (kink_distance([&] { return loss(features); }) < margin) return -1.0;
      const auto params = model.parameter_tensors();
      const double err = grad_check_params([&] { return loss(features); }, params, eps);
      return std::max(err, grad_check(loss, features, eps));
    });
  }
  return runner.take();
}

std::vector<GradSuiteResult> run_gradient_suites(const GradSuiteOptions& options) {
  std::vector<GradSuiteResult> all = run_op_gradient_suites(options);
  for (auto& r : run_block_gradient_suites(options)) all.push_back(std::move(r));
  for (auto& r : run_model_gradient_suites(options)) all.push_back(std::move(r));
  return all;
}

}  // namespace skipnet
