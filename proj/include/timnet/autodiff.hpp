#pragma once

#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "timnet/errors.hpp"
#include "timnet/rng.hpp"
#include "timnet/tensor.hpp"

namespace timnet::diff {

enum class Mode { Train, Infer };

/// One entry in the computation record: a value, its accumulated gradient,
/// and the closure that pushes this node's gradient into its inputs.
struct Node {
  Tensor value;
  Tensor grad;
  bool requires_grad = false;
  bool grad_ready = false;
  std::string name;  // nonempty for parameters
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backprop;

  Tensor& ensure_grad();
};

/// Shared handle to a Node. Copying shares the underlying record.
class DiffValue {
public:
  DiffValue() = default;
  explicit DiffValue(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  bool valid() const { return node_ != nullptr; }
  const Tensor& value() const { return node_->value; }
  Tensor& value() { return node_->value; }
  const Tensor& grad() const { return node_->grad; }
  Tensor& grad() { return node_->ensure_grad(); }
  bool requires_grad() const { return node_->requires_grad; }
  const std::string& name() const { return node_->name; }
  Node* node() const { return node_.get(); }
  std::shared_ptr<Node> shared() const { return node_; }

private:
  std::shared_ptr<Node> node_;
};

/// Leaf with no gradient flow.
DiffValue constant(Tensor v);

/// Trainable leaf; gradients accumulate across backward() calls until
/// zero_grad is called.
DiffValue parameter(Tensor v, std::string name);

namespace detail {
/// Extension point for ops defined outside this translation unit. The
/// backprop closure receives the finished node and must accumulate into
/// parents that require gradients.
DiffValue make_node(Tensor value, std::vector<DiffValue> parents,
                    std::function<void(Node&)> backprop, const char* op_name);
void check_finite(const Tensor& t, const char* op_name);
}  // namespace detail

struct BatchNormState {
  DiffValue gamma;  // [C], trainable
  DiffValue beta;   // [C], trainable
  Tensor running_mean;
  Tensor running_var;
  double momentum = 0.99;
  double epsilon = 1e-5;
};

/// Fresh state with gamma=1, beta=0, running stats (0, 1).
BatchNormState make_batch_norm(std::size_t channels, const std::string& name_prefix);

// --- ops -------------------------------------------------------------------

DiffValue add(const DiffValue& a, const DiffValue& b);
DiffValue mul(const DiffValue& a, const DiffValue& b);  // elementwise
DiffValue relu(const DiffValue& x);
DiffValue sigmoid(const DiffValue& x);

/// Softmax over the last axis; rows are a probability simplex point.
DiffValue softmax(const DiffValue& x);

/// Causal dilated 1-D convolution with left zero padding of (k-1)*d, so
/// output length equals input length:
///   y[b,t,o] = bias[o] + sum_{i,c} w[i,c,o] * x[b, t-(k-1-i)*d, c]
/// x: [B,T,Cin], w: [k,Cin,Cout], bias: [Cout].
DiffValue dilated_causal_conv1d(const DiffValue& x, const DiffValue& w, const DiffValue& bias,
                                std::size_t dilation);

/// Per-channel normalization over the batch and time axes. Train mode uses
/// batch statistics (and, when update_running is set, folds them into the
/// running stats); infer mode applies the running stats as a fixed affine map.
DiffValue batch_norm(const DiffValue& x, BatchNormState& state, Mode mode,
                     bool update_running = true);

/// Zeroes whole channels per batch item (one mask draw per (b, c), shared by
/// all time steps) and rescales survivors by 1/(1-rate). Identity in infer
/// mode or at rate 0.
DiffValue spatial_dropout(const DiffValue& x, double rate, RngStream& rng, Mode mode);

/// [B,T,C] -> [B,C] average over the time axis.
DiffValue temporal_mean(const DiffValue& x);

/// [B,T,C] -> [B,T,C] with the time axis reversed.
DiffValue time_reverse(const DiffValue& x);

/// x [B,C] * w [C,K] + b [K] -> [B,K].
DiffValue dense(const DiffValue& x, const DiffValue& w, const DiffValue& b);

/// sum_j w[j] * gs[j]; gs are [B,C], w is [n].
DiffValue weighted_sum(std::span<const DiffValue> gs, const DiffValue& w);

/// Reverse-mode sweep from a scalar loss. Accumulates into .grad of every
/// node on a gradient path; parameters not connected to the loss keep their
/// current (zero) gradient.
void backward(const DiffValue& loss);

void zero_grad(std::span<DiffValue> params);

}  // namespace timnet::diff
