#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace g2l::nn {

using Matrix = Eigen::MatrixXd;

struct Node {
  Matrix value;
  Matrix grad;  // allocated on first use
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  Matrix& grad_buffer() {
    if (grad.size() == 0) grad = Matrix::Zero(value.rows(), value.cols());
    return grad;
  }
};

// Handle to a 2-d value in a dynamically built computation graph. Copies share
// the same node.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  const Matrix& value() const { return node_->value; }
  Matrix& mutable_value() { return node_->value; }
  const Matrix& grad() const { return node_->grad_buffer(); }
  bool requires_grad() const { return node_->requires_grad; }
  Eigen::Index rows() const { return node_->value.rows(); }
  Eigen::Index cols() const { return node_->value.cols(); }
  std::vector<Eigen::Index> shape() const { return {rows(), cols()}; }
  double item() const { return node_->value(0, 0); }

  void zero_grad() { node_->grad.setZero(node_->value.rows(), node_->value.cols()); }
  bool valid() const { return static_cast<bool>(node_); }
  const std::shared_ptr<Node>& node() const { return node_; }

 private:
  std::shared_ptr<Node> node_;
};

Tensor constant(Matrix value);
Tensor parameter(Matrix value);
Tensor detach(const Tensor& x);

Tensor matmul(const Tensor& a, const Tensor& b);
// x (N x Din) * w (Din x Dout) + b (1 x Dout), row-broadcast.
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b);
Tensor relu(const Tensor& x);
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double s);
Tensor concat_cols(const std::vector<Tensor>& parts);
// 1 x D -> n x D.
Tensor broadcast_rows(const Tensor& x, Eigen::Index n);
// Column-wise max over rows; gradient goes to the first arg-max row.
Tensor max_pool_points(const Tensor& features);
Tensor mean_rows(const Tensor& x);
// Row-major reshape.
Tensor reshape(const Tensor& x, Eigen::Index rows, Eigen::Index cols);

Tensor mse_loss(const Tensor& pred, const Tensor& target);
// Sum of squared differences.
Tensor sum_squared_error(const Tensor& pred, const Tensor& target);
// Mean negative log-softmax of the true class; logits N x C.
Tensor cross_entropy(const Tensor& logits, const std::vector<int>& labels);

// Reverse pass from a 1 x 1 tensor. Gradients accumulate into every
// requires_grad node reached.
void backward(const Tensor& loss);

// --- parameters -----------------------------------------------------------

// Named parameters; iteration is in name order.
class ParamStore {
 public:
  Tensor& add(const std::string& name, Matrix init);
  Tensor& at(const std::string& name);
  const Tensor& at(const std::string& name) const;
  bool contains(const std::string& name) const { return params_.count(name) > 0; }
  void zero_grad();
  std::size_t size() const { return params_.size(); }
  std::size_t num_values() const;

  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

 private:
  std::map<std::string, Tensor> params_;
};


// Dense layer with PyTorch-style uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) init.
struct Linear {
  Tensor w;
  Tensor b;

  Linear() = default;
  Linear(ParamStore& store, const std::string& name, int in, int out,
         std::uint64_t seed);
  Tensor operator()(const Tensor& x) const { return linear(x, w, b); }
};

// Stack of Linear layers; ReLU between layers and optionally after the last.
struct Mlp {
  std::vector<Linear> layers;
  bool relu_last = false;

  Mlp() = default;
  Mlp(ParamStore& store, const std::string& name, int in,
      const std::vector<int>& widths, bool relu_last, std::uint64_t seed);
  Tensor operator()(const Tensor& x) const;
  int out_dim() const { return static_cast<int>(layers.back().w.cols()); }
};

// Same MLP applied to every row (point) independently.
Tensor shared_point_mlp(const Tensor& points, const Mlp& mlp);

// --- optimiser ------------------------------------------------------------

struct AdamState {
  double base_lr = 1e-3;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::uint64_t step_count = 0;
  int halve_every_epochs = 50;
  int max_epochs = 200;
  std::map<std::string, Matrix> first_moment;
  std::map<std::string, Matrix> second_moment;

  // Step schedule: base_lr * 0.5^floor(epoch / halve_every_epochs).
  double lr_for_epoch(int epoch) const;
  void set_epoch(int epoch) { learning_rate = lr_for_epoch(epoch); }
};

// One bias-corrected Adam update over every parameter in the store.
void adam_step(ParamStore& params, AdamState& state);

// --- checkpoint container --------------------------------------------------

struct CheckpointData {
  static constexpr std::uint32_t kVersion = 1;
  std::uint64_t config_hash = 0;
  std::uint32_t epoch = 0;
  std::string config_json;
  std::string metadata_json;
  std::map<std::string, Matrix> arrays;
  AdamState optimizer;
};

std::vector<std::uint8_t> encode_checkpoint(const CheckpointData& ckpt);
CheckpointData decode_checkpoint(const std::vector<std::uint8_t>& bytes);
void save_checkpoint(const CheckpointData& ckpt, const std::filesystem::path& path);
CheckpointData load_checkpoint(const std::filesystem::path& path);

std::uint64_t fnv1a64(const std::string& s);

}  // namespace g2l::nn
