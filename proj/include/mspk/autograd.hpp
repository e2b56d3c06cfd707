#ifndef MSPK_AUTOGRAD_HPP
#define MSPK_AUTOGRAD_HPP

#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "mspk/tensor.hpp"

namespace mspk {

// Define-by-run reverse-mode tape. Nodes are created through the builder
// methods below and evaluated eagerly; backward() fills gradients by a
// reverse traversal. Gradients of parameter nodes are accumulated into the
// external storage passed to param().
class Graph {
 public:
  using NodeId = int;

  enum class Op {
    kInput,
    kParam,
    kAffine,
    kTdnnConv,
    kRelu,
    kBatchNorm,
    kDropout,
    kStatsPool,
    kConcatCols,
    kConcatRows,
    kRowSlice,
    kSqEuclidean,
    kNeg,
    kScale,
    kSum,
    kAdd,
    kReshape,
    kSoftmaxXent,
  };

  NodeId input(Tensor value);
  // Parameter backed by external storage; forward() re-reads *value and
  // backward() accumulates into *grad (when grad != nullptr).
  NodeId param(const std::string& name, const Tensor* value, Tensor* grad);

  // x: n x d, w: d x m, b: 1 x m -> n x m
  NodeId affine(NodeId x, NodeId w, NodeId b);
  // x: T x c_in, w: (context * c_in) x n, b: 1 x n, output T' x n with
  // T' = T - (context - 1) * dilation.
  NodeId tdnn_conv(NodeId x, NodeId w, NodeId b, int context, int dilation);
  NodeId relu(NodeId x);
  // Per-column batch normalization over rows. In training mode batch
  // statistics are used and running stats updated in place; in inference
  // mode running stats are used.
  NodeId batch_norm(NodeId x, NodeId gamma, NodeId beta, Tensor* running_mean,
                    Tensor* running_var, bool training, double momentum = 0.1,
                    double eps = 1e-5);
  NodeId dropout(NodeId x, double rate, std::mt19937_64& rng, bool training);
  // T x c -> 1 x 2c: per-channel mean then standard deviation over time.
  NodeId stats_pool(NodeId x, double var_floor = 1e-10);
  NodeId concat_cols(const std::vector<NodeId>& xs);
  NodeId concat_rows(const std::vector<NodeId>& xs);
  NodeId row_slice(NodeId x, std::size_t row);
  NodeId sq_euclidean(NodeId a, NodeId b);  // 1 x 1
  NodeId neg(NodeId x);
  NodeId scale(NodeId x, double c);
  NodeId sum(NodeId x);  // 1 x 1
  NodeId add(NodeId a, NodeId b);
  // Row-major reinterpretation; rows * cols must match.
  NodeId reshape(NodeId x, std::size_t rows, std::size_t cols);
  // logits: n x c, targets: n class indices -> 1 x 1 mean cross-entropy.
  NodeId softmax_xent(NodeId logits, std::vector<int> targets);

  // Recomputes every node in creation order (parameters re-read their
  // external values; dropout masks are reused).
  void forward();
  // Populates gradients of all nodes w.r.t. the scalar loss node and
  // accumulates parameter gradients into their external storage.
  void backward(NodeId loss);

  const Tensor& value(NodeId id) const { return nodes_[id].value; }
  const Tensor& grad(NodeId id) const { return nodes_[id].grad; }
  std::size_t num_nodes() const { return nodes_.size(); }

  // Max over parameters of |analytic - numeric| / max(|a|, |n|, 1e-12)
  // using central differences on the external parameter storage.
  double finite_diff_check(NodeId loss, double h = 1e-5);

 private:
  struct Node {
    Op op;
    std::vector<NodeId> parents;
    Tensor value;
    Tensor grad;
    // op-specific state
    std::string name;               // param
    const Tensor* ext_value = nullptr;  // param
    Tensor* ext_grad = nullptr;         // param
    int context = 0, dilation = 0;  // tdnn
    Tensor cols_buf;                // tdnn im2col cache
    Tensor* running_mean = nullptr;  // batch_norm
    Tensor* running_var = nullptr;
    bool training = false;
    double momentum = 0.1, eps = 1e-5;
    Tensor saved_mean, saved_var;  // batch stats used in forward
    double rate = 0.0;             // dropout
    std::vector<uint8_t> mask;     // dropout keep mask
    double var_floor = 0.0;        // stats_pool
    std::size_t row = 0;           // row_slice
    std::size_t new_rows = 0, new_cols = 0;  // reshape
    double factor = 1.0;           // scale
    std::vector<int> targets;      // softmax_xent
    Tensor softmax;                // softmax_xent cache
  };

  NodeId push(Node n);
  void eval(Node& n);
  void eval_backward(Node& n);
  void check_finite(const Node& n, NodeId id) const;

  std::vector<Node> nodes_;
  bool forward_done_ = false;
};

// Adam with bias correction. Parameter and gradient maps are keyed by name;
// moment buffers are created lazily on first use.
struct AdamState {
  std::map<std::string, Tensor> m;
  std::map<std::string, Tensor> v;
  long t = 0;
  double beta1 = 0.9;
  double beta2 = 0.99;
  double eps = 1e-8;
};

void adam_step(std::map<std::string, Tensor>& params,
               const std::map<std::string, Tensor>& grads, AdamState& state,
               double lr);

}  // namespace mspk

#endif
