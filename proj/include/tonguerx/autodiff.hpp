#pragma once

#include <array>
#include <cstddef>
#include <vector>

#include "tonguerx/rng.hpp"
#include "tonguerx/tensor.hpp"

namespace tonguerx {

enum class Mode { Train, Infer };

/// Per-channel normalization state carried across training steps.
struct BatchNormState {
  Tensor running_mean;
  Tensor running_var;
  double momentum = 0.9;
  double epsilon = 1e-5;

  explicit BatchNormState(std::size_t channels = 0)
      : running_mean(Tensor::zeros({channels ? channels : 1})),
        running_var(Tensor::full({channels ? channels : 1}, 1.0)) {
    if (channels == 0) {
      running_mean = Tensor();
      running_var = Tensor();
    }
  }
};

using NodeId = std::size_t;

/// Gradients for the tape's differentiable leaves, indexed by NodeId.
struct GradientSet {
  std::vector<NodeId> leaves;
  std::vector<Tensor> grads;

  const Tensor& at(NodeId leaf) const;
};

enum class OpKind : std::uint8_t {
  Leaf,
  Conv2d,
  MaxPool2,
  Relu,
  Sigmoid,
  Softmax,
  Dense,
  BatchNorm,
  Dropout,
  Concat,
  Flatten,
  Sum,
  BceMean,
  KlMean,
  AddScaled,
};

/// One recorded operation: inputs precede it on the tape, and its saved
/// activations are enough to replay the forward pass bit-exactly.
struct TapeNode {
  OpKind op = OpKind::Leaf;
  std::array<NodeId, 3> in{0, 0, 0};
  int arity = 0;
  Tensor value;
  Tensor aux;                       // dropout scale mask, BN cache, loss target
  std::vector<std::size_t> indices; // maxpool argmax positions
  double p0 = 0.0;                  // op parameter (rate, lambda, epsilon)
  Mode mode = Mode::Infer;
  bool requires_grad = false;       // leaf flag / on-path flag
};

/// Records a forward computation and produces exact reverse-mode gradients.
/// One tape per training step; not shared across threads.
class Tape {
 public:
  NodeId leaf(Tensor value, bool requires_grad = false);

  // "Same" zero padding, stride 1, odd kernel extents.
  NodeId conv2d(NodeId input, NodeId kernels, NodeId bias);
  // 2x2 window, stride 2; odd extents padded by edge replication.
  NodeId maxpool2(NodeId input);
  NodeId relu(NodeId x);
  NodeId sigmoid(NodeId x);
  NodeId softmax(NodeId x);  // over last axis, max-subtracted
  NodeId dense(NodeId x, NodeId w, NodeId b);
  NodeId batchnorm2d(NodeId x, NodeId gamma, NodeId beta, BatchNormState& state,
                     Mode mode);
  NodeId dropout(NodeId x, double rate, Rng& rng, Mode mode);
  NodeId concat(NodeId a, NodeId b);
  NodeId flatten(NodeId x);  // [N, ...] -> [N, prod(rest)]
  NodeId sum(NodeId x);

  // Scalar losses; targets are constants, not tape nodes.
  NodeId bce_mean(NodeId probs, const Tensor& labels);
  NodeId kl_mean(NodeId probs, const Tensor& target);
  NodeId add_scaled(NodeId a, NodeId b, double lambda);

  const Tensor& value(NodeId id) const { return nodes_[id].value; }
  double scalar_value(NodeId id) const;
  std::size_t size() const { return nodes_.size(); }

  /// Reverse-mode gradients of a scalar loss w.r.t. every requires_grad leaf.
  GradientSet backward(NodeId loss) const;

  /// Re-runs the forward pass from leaf values; must match recorded values
  /// bit-exactly.
  Tensor replay(NodeId output) const;

 private:
  NodeId push(TapeNode node);
  Tensor forward_of(const TapeNode& node, const std::vector<Tensor>& values) const;

  std::vector<TapeNode> nodes_;
};

/// Clamp used before every log on probabilities.
inline double clamp_prob(double p) {
  if (p < 1e-7) return 1e-7;
  if (p > 1.0 - 1e-7) return 1.0 - 1e-7;
  return p;
}

}  // namespace tonguerx
