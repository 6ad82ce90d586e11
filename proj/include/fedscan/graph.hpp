#pragma once

#include <vector>

#include "fedscan/tensor.hpp"

namespace fedscan {

using NodeId = int;

enum class OpKind {
  kInput,
  kMatMul,
  kConv2d,
  kSigmoid,
  kTanh,
  kRelu,
  kAdd,
  kSub,
  kMul,
  kScale,
  kConcatChannels,
  kPoolAvg,
  kGlobalPoolAvg,
  kReshape,
  kBceWithLogits,
};

/// Output height/width of a 2-D convolution along one axis.
int conv_out_dim(int in, int kernel, int stride, int pad);

/// Overflow-safe logistic function, exact at both tails.
double stable_sigmoid(double z);

/// Reverse-mode autodiff tape. Nodes are append-only and topologically
/// ordered by construction: every input id is smaller than the node's own id.
/// Construction and backward are single-threaded per instance; independent
/// graphs carry no shared state.
class Graph {
 public:
  struct Node {
    OpKind kind;
    std::vector<NodeId> inputs;
    Tensor value;
    bool is_param = false;
    // per-op attributes
    int stride = 1;
    int pad = 0;
    int window = 1;
    double scalar = 0.0;
    Tensor targets;  // kBceWithLogits only; constant, not differentiated
  };

  /// Leaf node holding a tensor. Parameters are the leaves whose gradients
  /// backward() guarantees to materialize.
  NodeId input(Tensor value, bool is_param = false);

  NodeId matmul(NodeId a, NodeId b);
  NodeId conv2d(NodeId in, NodeId kernel, int stride, int pad);
  NodeId sigmoid(NodeId a);
  NodeId tanh(NodeId a);
  NodeId relu(NodeId a);
  NodeId add(NodeId a, NodeId b);
  NodeId sub(NodeId a, NodeId b);
  NodeId mul(NodeId a, NodeId b);
  NodeId scale(NodeId a, double factor);
  NodeId concat_channels(const std::vector<NodeId>& parts);
  NodeId pool_avg(NodeId a, int window);
  NodeId global_pool_avg(NodeId a);
  NodeId reshape(NodeId a, Shape shape);
  NodeId bce_with_logits(NodeId logits, Tensor targets);

  const Tensor& value(NodeId id) const { return nodes_[check_id(id)].value; }
  const Node& node(NodeId id) const { return nodes_[check_id(id)]; }
  std::size_t node_count() const { return nodes_.size(); }

  /// Reverse topological accumulation from a scalar root. Gradients add
  /// across fan-out; after the call every parameter node has a gradient
  /// (zero if the root does not depend on it).
  void backward(NodeId root);

  bool has_grad(NodeId id) const;
  const Tensor& grad(NodeId id) const;

 private:
  std::size_t check_id(NodeId id) const;
  NodeId push(Node node);
  Tensor& grad_slot(NodeId id);
  void backprop_node(NodeId id);

  std::vector<Node> nodes_;
  std::vector<Tensor> grads_;
  std::vector<char> grad_set_;
};

}  // namespace fedscan
