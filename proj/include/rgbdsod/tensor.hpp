#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

namespace rgbdsod {

/// Thrown when tensor extents or image sizes do not line up.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Thrown for invalid arguments and inconsistent configuration.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Thrown when a NaN or Inf shows up where a finite value is required.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_string(const Shape& shape);

/// Dense row-major float tensor with an optional gradient buffer.
///
/// Image-like data uses NCHW order. Value semantics: copies are deep.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, float fill = 0.0f);
  Tensor(Shape shape, std::vector<float> data);

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t numel() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  std::span<float> data() { return data_; }
  std::span<const float> data() const { return data_; }
  float& operator[](std::size_t i) { return data_[i]; }
  float operator[](std::size_t i) const { return data_[i]; }

  // 4-D accessors (N, C, H, W).
  float& at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) {
    return data_[((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
  }
  float at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const {
    return data_[((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
  }

  bool has_grad() const { return has_grad_; }
  /// Allocates a zeroed gradient buffer if none exists.
  std::span<float> grad();
  std::span<const float> grad() const { return grad_; }
  void zero_grad();
  void drop_grad() {
    grad_ = {};
    has_grad_ = false;
  }

  bool all_finite() const;

 private:
  Shape shape_;
  std::vector<float> data_;
  std::vector<float> grad_;
  bool has_grad_ = false;
};

/// A learnable tensor with its SGD momentum buffer.
struct Parameter {
  std::string name;
  Tensor value;
  std::vector<float> velocity;
};

/// Per-channel running statistics of one batch-normalization layer.
struct BatchNormState {
  Tensor running_mean;
  Tensor running_var;
};

/// Owns every learnable parameter and non-learnable buffer of a model.
///
/// Names are module path strings ("branch0/conv1_1/weight"). Registration
/// order is preserved and each name may be registered once.
class ParameterStore {
 public:
  ParameterStore() = default;
  ParameterStore(const ParameterStore& other);
  ParameterStore& operator=(const ParameterStore& other);
  ParameterStore(ParameterStore&&) noexcept = default;
  ParameterStore& operator=(ParameterStore&&) noexcept = default;

  Parameter& add(const std::string& name, Tensor init);
  BatchNormState& add_batchnorm_state(const std::string& name, std::size_t channels);

  Parameter& get(const std::string& name);
  const Parameter& get(const std::string& name) const;
  Parameter* find(const std::string& name);
  const Parameter* find(const std::string& name) const;
  BatchNormState& state(const std::string& name);
  const BatchNormState* find_state(const std::string& name) const;

  std::vector<Parameter*> parameters();
  std::vector<const Parameter*> parameters() const;
  const std::vector<std::string>& state_names() const { return state_order_; }

  void zero_grad();

 private:
  std::vector<std::unique_ptr<Parameter>> params_;
  std::unordered_map<std::string, std::size_t> index_;
  std::unordered_map<std::string, std::unique_ptr<BatchNormState>> states_;
  std::vector<std::string> state_order_;
};

class Graph;

/// Handle to a node in a Graph.
struct Var {
  Graph* graph = nullptr;
  std::size_t id = 0;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
};

/// Train: batch statistics, running statistics updated. Eval: running
/// statistics. Infer: batch statistics, running statistics untouched.
enum class Mode { Train, Eval, Infer };

/// Reverse-mode tape. Nodes are appended in topological order; backward
/// walks them in exact reverse order.
class Graph {
 public:
  /// Accumulates this node's gradient into its inputs' gradients.
  using BackwardFn = std::function<void(Graph& graph, std::size_t self)>;

  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  /// With gradients disabled, parameters act as constants and no backward
  /// closures are recorded (inference).
  void set_grad_enabled(bool enabled) { grad_enabled_ = enabled; }
  bool grad_enabled() const { return grad_enabled_; }

  Var constant(Tensor value);
  /// Leaf for a learnable parameter; the same parameter always maps to the
  /// same node, and its gradient accumulates into the parameter's buffer.
  Var parameter(Parameter& param);
  Var add_node(Tensor value, std::vector<std::size_t> inputs, BackwardFn backward);

  const Tensor& value(std::size_t id) const;
  /// Gradient of the node; allocated on first use.
  std::span<float> grad(std::size_t id);
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  const std::vector<std::size_t>& inputs(std::size_t id) const { return nodes_[id].inputs; }
  std::size_t size() const { return nodes_.size(); }

  /// Seeds d(loss)/d(loss) = 1 and propagates to every reachable leaf.
  void backward(Var loss);

 private:
  struct Node {
    Tensor value;
    Parameter* param = nullptr;
    std::vector<std::size_t> inputs;
    BackwardFn backward;
    bool requires_grad = false;
  };

  Tensor& node_tensor(std::size_t id);

  std::vector<Node> nodes_;
  std::unordered_map<const Parameter*, std::size_t> param_nodes_;
  bool grad_enabled_ = true;
};

// ---------------------------------------------------------------------------
// Differentiable operations.

Var conv2d(Var input, Var weight, Var bias, int stride, int pad);
Var relu(Var input);
Var maxpool2d(Var input, int kernel, int stride, int pad);
/// Bilinear 2x upsampling, half-pixel centers (align_corners = false).
Var upsample2x(Var input);
Var batchnorm(Var input, Var gamma, Var beta, BatchNormState& state, Mode mode,
              double eps = 1e-5, double momentum = 0.1);
/// Channel-axis concatenation of NCHW tensors.
Var concat(const std::vector<Var>& parts);
inline Var concat(Var a, Var b) { return concat(std::vector<Var>{a, b}); }
/// Mean binary cross-entropy on logits, numerically stable form.
Var sigmoid_bce(Var logits, const Tensor& target);
/// sum_i weights[i] * terms[i] over scalar nodes.
Var weighted_sum(const std::vector<Var>& terms, const std::vector<double>& weights);

/// Applies upsample2x repeatedly until the spatial size reaches (h, w).
/// Requires an exact power-of-two ratio.
Var upsample_to(Var input, std::size_t h, std::size_t w);
/// Applies 2x2/stride-2 max pooling until the spatial size reaches (h, w).
Var downsample_to(Var input, std::size_t h, std::size_t w);
/// Resamples up or down by powers of two to reach (h, w).
Var resample_to(Var input, std::size_t h, std::size_t w);

// ---------------------------------------------------------------------------
// Non-differentiable helpers.

Tensor sigmoid(const Tensor& logits);

/// SGD with momentum and L2 weight decay. Gradients accumulated over
/// iter_size passes are averaged, then zeroed after the update.
///   v <- momentum * v + grad / iter_size + weight_decay * param
///   param <- param - lr * v
void sgd_step(ParameterStore& params, double lr, double momentum, double weight_decay,
              int iter_size);
/// Same update restricted to a subset of parameters.
void sgd_step(const std::vector<Parameter*>& params, double lr, double momentum, double weight_decay,
              int iter_size);

}  // namespace rgbdsod
