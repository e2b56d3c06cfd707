#include "mspk/autograd.hpp"

#include <algorithm>
#include <cmath>

#include "mspk/error.hpp"
#include "mspk/kernels.hpp"

namespace mspk {

namespace {
const char* op_name(Graph::Op op) {
  switch (op) {
    case Graph::Op::kInput: return "input";
    case Graph::Op::kParam: return "param";
    case Graph::Op::kAffine: return "affine";
    case Graph::Op::kTdnnConv: return "tdnn_conv";
    case Graph::Op::kRelu: return "relu";
    case Graph::Op::kBatchNorm: return "batch_norm";
    case Graph::Op::kDropout: return "dropout";
    case Graph::Op::kStatsPool: return "stats_pool";
    case Graph::Op::kConcatCols: return "concat_cols";
    case Graph::Op::kConcatRows: return "concat_rows";
    case Graph::Op::kRowSlice: return "row_slice";
    case Graph::Op::kSqEuclidean: return "sq_euclidean";
    case Graph::Op::kNeg: return "neg";
    case Graph::Op::kScale: return "scale";
    case Graph::Op::kSum: return "sum";
    case Graph::Op::kAdd: return "add";
    case Graph::Op::kReshape: return "reshape";
    case Graph::Op::kSoftmaxXent: return "softmax_xent";
  }
  return "?";
}
}  // namespace

Graph::NodeId Graph::push(Node n) {
  eval(n);
  check_finite(n, static_cast<NodeId>(nodes_.size()));
  nodes_.push_back(std::move(n));
  forward_done_ = true;
  return static_cast<NodeId>(nodes_.size()) - 1;
}

void Graph::check_finite(const Node& n, NodeId id) const {
  for (double v : n.value.data)
    if (!std::isfinite(v))
      throw NumericError("non-finite value in node " + std::to_string(id) +
                         " (" + op_name(n.op) +
                         (n.name.empty() ? "" : ", " + n.name) + ")");
}

Graph::NodeId Graph::input(Tensor value) {
  Node n;
  n.op = Op::kInput;
  n.value = std::move(value);
  return push(std::move(n));
}

Graph::NodeId Graph::param(const std::string& name, const Tensor* value,
                           Tensor* grad) {
  Node n;
  n.op = Op::kParam;
  n.name = name;
  n.ext_value = value;
  n.ext_grad = grad;
  return push(std::move(n));
}

Graph::NodeId Graph::affine(NodeId x, NodeId w, NodeId b) {
  Node n;
  n.op = Op::kAffine;
  n.parents = {x, w, b};
  return push(std::move(n));
}

Graph::NodeId Graph::tdnn_conv(NodeId x, NodeId w, NodeId b, int context,
                               int dilation) {
  if (context < 1 || dilation < 1)
    throw UsageError("tdnn_conv: context and dilation must be >= 1");
  Node n;
  n.op = Op::kTdnnConv;
  n.parents = {x, w, b};
  n.context = context;
  n.dilation = dilation;
  return push(std::move(n));
}

Graph::NodeId Graph::relu(NodeId x) {
  Node n;
  n.op = Op::kRelu;
  n.parents = {x};
  return push(std::move(n));
}

Graph::NodeId Graph::batch_norm(NodeId x, NodeId gamma, NodeId beta,
                                Tensor* running_mean, Tensor* running_var,
                                bool training, double momentum, double eps) {
  Node n;
  n.op = Op::kBatchNorm;
  n.parents = {x, gamma, beta};
  n.running_mean = running_mean;
  n.running_var = running_var;
  n.training = training;
  n.momentum = momentum;
  n.eps = eps;
  return push(std::move(n));
}

Graph::NodeId Graph::dropout(NodeId x, double rate, std::mt19937_64& rng,
                             bool training) {
  if (rate < 0.0 || rate >= 1.0) throw UsageError("dropout: bad rate");
  Node n;
  n.op = Op::kDropout;
  n.parents = {x};
  n.rate = rate;
  n.training = training;
  if (training) {
    const Tensor& xv = nodes_[x].value;
    n.mask.resize(xv.size());
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (auto& m : n.mask) m = (u(rng) >= rate) ? 1 : 0;
  }
  return push(std::move(n));
}

Graph::NodeId Graph::stats_pool(NodeId x, double var_floor) {
  Node n;
  n.op = Op::kStatsPool;
  n.parents = {x};
  n.var_floor = var_floor;
  return push(std::move(n));
}

Graph::NodeId Graph::concat_cols(const std::vector<NodeId>& xs) {
  if (xs.empty()) throw UsageError("concat_cols: empty input list");
  Node n;
  n.op = Op::kConcatCols;
  n.parents = xs;
  return push(std::move(n));
}

Graph::NodeId Graph::concat_rows(const std::vector<NodeId>& xs) {
  if (xs.empty()) throw UsageError("concat_rows: empty input list");
  Node n;
  n.op = Op::kConcatRows;
  n.parents = xs;
  return push(std::move(n));
}

Graph::NodeId Graph::row_slice(NodeId x, std::size_t row) {
  if (row >= nodes_[x].value.rows)
    throw UsageError("row_slice: row out of range");
  Node n;
  n.op = Op::kRowSlice;
  n.parents = {x};
  n.row = row;
  return push(std::move(n));
}

Graph::NodeId Graph::sq_euclidean(NodeId a, NodeId b) {
  Node n;
  n.op = Op::kSqEuclidean;
  n.parents = {a, b};
  return push(std::move(n));
}

Graph::NodeId Graph::neg(NodeId x) {
  Node n;
  n.op = Op::kNeg;
  n.parents = {x};
  return push(std::move(n));
}

Graph::NodeId Graph::scale(NodeId x, double c) {
  Node n;
  n.op = Op::kScale;
  n.parents = {x};
  n.factor = c;
  return push(std::move(n));
}

Graph::NodeId Graph::sum(NodeId x) {
  Node n;
  n.op = Op::kSum;
  n.parents = {x};
  return push(std::move(n));
}

Graph::NodeId Graph::add(NodeId a, NodeId b) {
  Node n;
  n.op = Op::kAdd;
  n.parents = {a, b};
  return push(std::move(n));
}

Graph::NodeId Graph::reshape(NodeId x, std::size_t rows, std::size_t cols) {
  if (nodes_[x].value.size() != rows * cols)
    throw UsageError("reshape: element count mismatch");
  Node n;
  n.op = Op::kReshape;
  n.parents = {x};
  n.new_rows = rows;
  n.new_cols = cols;
  return push(std::move(n));
}

Graph::NodeId Graph::softmax_xent(NodeId logits, std::vector<int> targets) {
  if (targets.size() != nodes_[logits].value.rows)
    throw UsageError("softmax_xent: one target per logits row required");
  Node n;
  n.op = Op::kSoftmaxXent;
  n.parents = {logits};
  n.targets = std::move(targets);
  return push(std::move(n));
}

void Graph::eval(Node& n) {
  auto& nodes = nodes_;
  switch (n.op) {
    case Op::kInput:
      break;
    case Op::kParam:
      n.value = *n.ext_value;
      break;
    case Op::kAffine: {
      const Tensor& x = nodes[n.parents[0]].value;
      const Tensor& w = nodes[n.parents[1]].value;
      const Tensor& b = nodes[n.parents[2]].value;
      if (x.cols != w.rows || b.rows != 1 || b.cols != w.cols)
        throw NumericError("affine: shape mismatch");
      kernels::gemm(x, false, w, false, n.value);
      for (std::size_t i = 0; i < n.value.rows; ++i)
        for (std::size_t j = 0; j < n.value.cols; ++j)
          n.value.at(i, j) += b.at(0, j);
      break;
    }
    case Op::kTdnnConv: {
      const Tensor& x = nodes[n.parents[0]].value;
      const Tensor& w = nodes[n.parents[1]].value;
      const Tensor& b = nodes[n.parents[2]].value;
      const std::size_t span =
          static_cast<std::size_t>((n.context - 1) * n.dilation);
      if (x.rows <= span)
        throw NumericError("tdnn_conv: input has " + std::to_string(x.rows) +
                           " frames, receptive field needs " +
                           std::to_string(span + 1));
      if (w.rows != x.cols * static_cast<std::size_t>(n.context) ||
          b.cols != w.cols)
        throw NumericError("tdnn_conv: kernel shape mismatch");
      const std::size_t t_out = x.rows - span;
      n.cols_buf = Tensor(t_out, w.rows);
      for (std::size_t t = 0; t < t_out; ++t)
        for (int k = 0; k < n.context; ++k) {
          const double* src = x.row_ptr(t + k * n.dilation);
          std::copy(src, src + x.cols,
                    n.cols_buf.row_ptr(t) + k * x.cols);
        }
      kernels::gemm(n.cols_buf, false, w, false, n.value);
      for (std::size_t i = 0; i < t_out; ++i)
        for (std::size_t j = 0; j < n.value.cols; ++j)
          n.value.at(i, j) += b.at(0, j);
      break;
    }
    case Op::kRelu: {
      const Tensor& x = nodes[n.parents[0]].value;
      n.value = x;
      for (double& v : n.value.data) v = std::max(0.0, v);
      break;
    }
    case Op::kBatchNorm: {
      const Tensor& x = nodes[n.parents[0]].value;
      const Tensor& g = nodes[n.parents[1]].value;
      const Tensor& b = nodes[n.parents[2]].value;
      if (g.cols != x.cols || b.cols != x.cols)
        throw NumericError("batch_norm: parameter shape mismatch");
      n.value = Tensor(x.rows, x.cols);
      n.saved_mean = Tensor(1, x.cols);
      n.saved_var = Tensor(1, x.cols);
      if (n.training) {
        const double inv_n = 1.0 / static_cast<double>(x.rows);
        for (std::size_t j = 0; j < x.cols; ++j) {
          double mu = 0.0;
          for (std::size_t i = 0; i < x.rows; ++i) mu += x.at(i, j);
          mu *= inv_n;
          double var = 0.0;
          for (std::size_t i = 0; i < x.rows; ++i) {
            double d = x.at(i, j) - mu;
            var += d * d;
          }
          var *= inv_n;
          n.saved_mean.at(0, j) = mu;
          n.saved_var.at(0, j) = var;
          if (n.running_mean && n.running_var) {
            n.running_mean->at(0, j) =
                (1.0 - n.momentum) * n.running_mean->at(0, j) + n.momentum * mu;
            n.running_var->at(0, j) =
                (1.0 - n.momentum) * n.running_var->at(0, j) + n.momentum * var;
          }
        }
      } else {
        if (!n.running_mean || !n.running_var)
          throw NumericError("batch_norm: inference without running stats");
        n.saved_mean = *n.running_mean;
        n.saved_var = *n.running_var;
      }
      for (std::size_t j = 0; j < x.cols; ++j) {
        const double inv_std = 1.0 / std::sqrt(n.saved_var.at(0, j) + n.eps);
        for (std::size_t i = 0; i < x.rows; ++i)
          n.value.at(i, j) =
              g.at(0, j) * (x.at(i, j) - n.saved_mean.at(0, j)) * inv_std +
              b.at(0, j);
      }
      break;
    }
    case Op::kDropout: {
      const Tensor& x = nodes[n.parents[0]].value;
      n.value = x;
      if (n.training) {
        const double scale = 1.0 / (1.0 - n.rate);
        for (std::size_t i = 0; i < n.value.size(); ++i)
          n.value.data[i] = n.mask[i] ? n.value.data[i] * scale : 0.0;
      }
      break;
    }
    case Op::kStatsPool: {
      const Tensor& x = nodes[n.parents[0]].value;
      const std::size_t c = x.cols;
      n.value = Tensor(1, 2 * c);
      const double inv_t = 1.0 / static_cast<double>(x.rows);
      for (std::size_t j = 0; j < c; ++j) {
        double mu = 0.0;
        for (std::size_t i = 0; i < x.rows; ++i) mu += x.at(i, j);
        mu *= inv_t;
        double var = 0.0;
        for (std::size_t i = 0; i < x.rows; ++i) {
          double d = x.at(i, j) - mu;
          var += d * d;
        }
        var *= inv_t;
        n.value.at(0, j) = mu;
        n.value.at(0, c + j) = std::sqrt(var + n.var_floor);
      }
      break;
    }
    case Op::kConcatCols: {
      const std::size_t rows = nodes[n.parents[0]].value.rows;
      std::size_t cols = 0;
      for (NodeId p : n.parents) {
        if (nodes[p].value.rows != rows)
          throw NumericError("concat_cols: row count mismatch");
        cols += nodes[p].value.cols;
      }
      n.value = Tensor(rows, cols);
      std::size_t off = 0;
      for (NodeId p : n.parents) {
        const Tensor& x = nodes[p].value;
        for (std::size_t i = 0; i < rows; ++i)
          std::copy(x.row_ptr(i), x.row_ptr(i) + x.cols,
                    n.value.row_ptr(i) + off);
        off += x.cols;
      }
      break;
    }
    case Op::kConcatRows: {
      const std::size_t cols = nodes[n.parents[0]].value.cols;
      std::size_t rows = 0;
      for (NodeId p : n.parents) {
        if (nodes[p].value.cols != cols)
          throw NumericError("concat_rows: column count mismatch");
        rows += nodes[p].value.rows;
      }
      n.value = Tensor(rows, cols);
      std::size_t off = 0;
      for (NodeId p : n.parents) {
        const Tensor& x = nodes[p].value;
        std::copy(x.data.begin(), x.data.end(), n.value.data.begin() + off);
        off += x.size();
      }
      break;
    }
    case Op::kRowSlice: {
      const Tensor& x = nodes[n.parents[0]].value;
      n.value = Tensor(1, x.cols);
      std::copy(x.row_ptr(n.row), x.row_ptr(n.row) + x.cols,
                n.value.data.begin());
      break;
    }
    case Op::kSqEuclidean: {
      const Tensor& a = nodes[n.parents[0]].value;
      const Tensor& b = nodes[n.parents[1]].value;
      if (a.size() != b.size())
        throw NumericError("sq_euclidean: size mismatch");
      double acc = 0.0;
      for (std::size_t i = 0; i < a.size(); ++i) {
        double d = a.data[i] - b.data[i];
        acc += d * d;
      }
      n.value = Tensor(1, 1);
      n.value.data[0] = acc;
      break;
    }
    case Op::kNeg: {
      n.value = nodes[n.parents[0]].value;
      for (double& v : n.value.data) v = -v;
      break;
    }
    case Op::kScale: {
      n.value = nodes[n.parents[0]].value;
      for (double& v : n.value.data) v *= n.factor;
      break;
    }
    case Op::kSum: {
      const Tensor& x = nodes[n.parents[0]].value;
      double acc = 0.0;
      for (double v : x.data) acc += v;
      n.value = Tensor(1, 1);
      n.value.data[0] = acc;
      break;
    }
    case Op::kAdd: {
      const Tensor& a = nodes[n.parents[0]].value;
      const Tensor& b = nodes[n.parents[1]].value;
      if (!a.same_shape(b)) throw NumericError("add: shape mismatch");
      n.value = a;
      for (std::size_t i = 0; i < b.size(); ++i) n.value.data[i] += b.data[i];
      break;
    }
    case Op::kReshape: {
      const Tensor& x = nodes[n.parents[0]].value;
      n.value = Tensor(n.new_rows, n.new_cols);
      n.value.data = x.data;
      break;
    }
    case Op::kSoftmaxXent: {
      const Tensor& logits = nodes[n.parents[0]].value;
      n.softmax = Tensor(logits.rows, logits.cols);
      double loss = 0.0;
      for (std::size_t i = 0; i < logits.rows; ++i) {
        double mx = logits.at(i, 0);
        for (std::size_t j = 1; j < logits.cols; ++j)
          mx = std::max(mx, logits.at(i, j));
        double z = 0.0;
        for (std::size_t j = 0; j < logits.cols; ++j)
          z += std::exp(logits.at(i, j) - mx);
        const double log_z = std::log(z) + mx;
        for (std::size_t j = 0; j < logits.cols; ++j)
          n.softmax.at(i, j) = std::exp(logits.at(i, j) - log_z);
        const int t = n.targets[i];
        if (t < 0 || static_cast<std::size_t>(t) >= logits.cols)
          throw NumericError("softmax_xent: target out of range");
        loss -= logits.at(i, t) - log_z;
      }
      n.value = Tensor(1, 1);
      n.value.data[0] = loss / static_cast<double>(logits.rows);
      break;
    }
  }
}

void Graph::forward() {
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    eval(nodes_[i]);
    check_finite(nodes_[i], static_cast<NodeId>(i));
  }
  forward_done_ = true;
}

void Graph::eval_backward(Node& n) {
  auto& nodes = nodes_;
  const Tensor& dy = n.grad;
  switch (n.op) {
    case Op::kInput:
    case Op::kParam:
      break;
    case Op::kAffine:
    case Op::kTdnnConv: {
      const bool conv = (n.op == Op::kTdnnConv);
      Tensor& dx = nodes[n.parents[0]].grad;
      Tensor& dw = nodes[n.parents[1]].grad;
      Tensor& db = nodes[n.parents[2]].grad;
      const Tensor& x = conv ? n.cols_buf : nodes[n.parents[0]].value;
      const Tensor& w = nodes[n.parents[1]].value;
      kernels::gemm_acc(x, true, dy, false, dw);
      for (std::size_t i = 0; i < dy.rows; ++i)
        for (std::size_t j = 0; j < dy.cols; ++j) db.at(0, j) += dy.at(i, j);
      if (!conv) {
        kernels::gemm_acc(dy, false, w, true, dx);
      } else {
        Tensor dcols;
        kernels::gemm(dy, false, w, true, dcols);
        const std::size_t c_in = nodes[n.parents[0]].value.cols;
        for (std::size_t t = 0; t < dcols.rows; ++t)
          for (int k = 0; k < n.context; ++k) {
            double* dst = dx.row_ptr(t + k * n.dilation);
            const double* src = dcols.row_ptr(t) + k * c_in;
            for (std::size_t c = 0; c < c_in; ++c) dst[c] += src[c];
          }
      }
      break;
    }
    case Op::kRelu: {
      const Tensor& x = nodes[n.parents[0]].value;
      Tensor& dx = nodes[n.parents[0]].grad;
      for (std::size_t i = 0; i < x.size(); ++i)
        if (x.data[i] > 0.0) dx.data[i] += dy.data[i];
      break;
    }
    case Op::kBatchNorm: {
      const Tensor& x = nodes[n.parents[0]].value;
      const Tensor& g = nodes[n.parents[1]].value;
      Tensor& dx = nodes[n.parents[0]].grad;
      Tensor& dg = nodes[n.parents[1]].grad;
      Tensor& db = nodes[n.parents[2]].grad;
      const std::size_t rows = x.rows;
      for (std::size_t j = 0; j < x.cols; ++j) {
        const double mu = n.saved_mean.at(0, j);
        const double inv_std = 1.0 / std::sqrt(n.saved_var.at(0, j) + n.eps);
        double sum_dy = 0.0, sum_dy_xhat = 0.0;
        for (std::size_t i = 0; i < rows; ++i) {
          const double xhat = (x.at(i, j) - mu) * inv_std;
          sum_dy += dy.at(i, j);
          sum_dy_xhat += dy.at(i, j) * xhat;
        }
        dg.at(0, j) += sum_dy_xhat;
        db.at(0, j) += sum_dy;
        if (n.training) {
          const double inv_n = 1.0 / static_cast<double>(rows);
          for (std::size_t i = 0; i < rows; ++i) {
            const double xhat = (x.at(i, j) - mu) * inv_std;
            dx.at(i, j) += g.at(0, j) * inv_std *
                           (dy.at(i, j) - inv_n * sum_dy -
                            inv_n * xhat * sum_dy_xhat);
          }
        } else {
          for (std::size_t i = 0; i < rows; ++i)
            dx.at(i, j) += dy.at(i, j) * g.at(0, j) * inv_std;
        }
      }
      break;
    }
    case Op::kDropout: {
      Tensor& dx = nodes[n.parents[0]].grad;
      if (n.training) {
        const double scale = 1.0 / (1.0 - n.rate);
        for (std::size_t i = 0; i < dx.size(); ++i)
          if (n.mask[i]) dx.data[i] += dy.data[i] * scale;
      } else {
        for (std::size_t i = 0; i < dx.size(); ++i)
          dx.data[i] += dy.data[i];
      }
      break;
    }
    case Op::kStatsPool: {
      const Tensor& x = nodes[n.parents[0]].value;
      Tensor& dx = nodes[n.parents[0]].grad;
      const std::size_t c = x.cols;
      const double inv_t = 1.0 / static_cast<double>(x.rows);
      for (std::size_t j = 0; j < c; ++j) {
        double mu = 0.0;
        for (std::size_t i = 0; i < x.rows; ++i) mu += x.at(i, j);
        mu *= inv_t;
        const double s = n.value.at(0, c + j);
        const double d_mu = dy.at(0, j);
        const double d_s = dy.at(0, c + j);
        for (std::size_t i = 0; i < x.rows; ++i)
          dx.at(i, j) += d_mu * inv_t + d_s * (x.at(i, j) - mu) * inv_t / s;
      }
      break;
    }
    case Op::kConcatCols: {
      std::size_t off = 0;
      for (NodeId p : n.parents) {
        Tensor& dx = nodes[p].grad;
        for (std::size_t i = 0; i < dx.rows; ++i)
          for (std::size_t j = 0; j < dx.cols; ++j)
            dx.at(i, j) += dy.at(i, off + j);
        off += dx.cols;
      }
      break;
    }
    case Op::kConcatRows: {
      std::size_t off = 0;
      for (NodeId p : n.parents) {
        Tensor& dx = nodes[p].grad;
        for (std::size_t i = 0; i < dx.size(); ++i)
          dx.data[i] += dy.data[off + i];
        off += dx.size();
      }
      break;
    }
    case Op::kRowSlice: {
      Tensor& dx = nodes[n.parents[0]].grad;
      for (std::size_t j = 0; j < dy.cols; ++j)
        dx.at(n.row, j) += dy.at(0, j);
      break;
    }
    case Op::kSqEuclidean: {
      const Tensor& a = nodes[n.parents[0]].value;
      const Tensor& b = nodes[n.parents[1]].value;
      Tensor& da = nodes[n.parents[0]].grad;
      Tensor& db = nodes[n.parents[1]].grad;
      const double d = dy.data[0];
      for (std::size_t i = 0; i < a.size(); ++i) {
        const double diff = 2.0 * (a.data[i] - b.data[i]) * d;
        da.data[i] += diff;
        db.data[i] -= diff;
      }
      break;
    }
    case Op::kNeg: {
      Tensor& dx = nodes[n.parents[0]].grad;
      for (std::size_t i = 0; i < dx.size(); ++i) dx.data[i] -= dy.data[i];
      break;
    }
    case Op::kScale: {
      Tensor& dx = nodes[n.parents[0]].grad;
      for (std::size_t i = 0; i < dx.size(); ++i)
        dx.data[i] += dy.data[i] * n.factor;
      break;
    }
    case Op::kSum: {
      Tensor& dx = nodes[n.parents[0]].grad;
      const double d = dy.data[0];
      for (double& v : dx.data) v += d;
      break;
    }
    case Op::kAdd: {
      Tensor& da = nodes[n.parents[0]].grad;
      Tensor& db = nodes[n.parents[1]].grad;
      for (std::size_t i = 0; i < dy.size(); ++i) {
        da.data[i] += dy.data[i];
        db.data[i] += dy.data[i];
      }
      break;
    }
    case Op::kReshape: {
      Tensor& dx = nodes[n.parents[0]].grad;
      for (std::size_t i = 0; i < dy.size(); ++i) dx.data[i] += dy.data[i];
      break;
    }
    case Op::kSoftmaxXent: {
      Tensor& dlogits = nodes[n.parents[0]].grad;
      const double d = dy.data[0] / static_cast<double>(n.softmax.rows);
      for (std::size_t i = 0; i < n.softmax.rows; ++i)
        for (std::size_t j = 0; j < n.softmax.cols; ++j) {
          double v = n.softmax.at(i, j);
          if (static_cast<int>(j) == n.targets[i]) v -= 1.0;
          dlogits.at(i, j) += v * d;
        }
      break;
    }
  }
}

void Graph::backward(NodeId loss) {
  if (!forward_done_) throw NumericError("backward called before forward");
  if (nodes_[loss].value.size() != 1)
    throw NumericError("backward: loss node must be scalar");
  for (Node& n : nodes_) {
    n.grad = Tensor(n.value.rows, n.value.cols);
  }
  nodes_[loss].grad.data[0] = 1.0;
  for (NodeId i = loss; i >= 0; --i) eval_backward(nodes_[i]);
  for (Node& n : nodes_)
    if (n.op == Op::kParam && n.ext_grad) {
      if (!n.ext_grad->same_shape(n.grad))
        *n.ext_grad = Tensor(n.grad.rows, n.grad.cols);
      for (std::size_t i = 0; i < n.grad.size(); ++i)
        n.ext_grad->data[i] += n.grad.data[i];
    }
}

double Graph::finite_diff_check(NodeId loss, double h) {
  if (h <= 0.0) throw UsageError("finite_diff_check: h must be positive");
  forward();
  backward(loss);
  std::vector<std::pair<NodeId, Tensor>> analytic;
  for (std::size_t i = 0; i < nodes_.size(); ++i)
    if (nodes_[i].op == Op::kParam)
      analytic.emplace_back(static_cast<NodeId>(i), nodes_[i].grad);

  double max_err = 0.0;
  for (auto& [id, ga] : analytic) {
    // perturbation goes through the external storage the node reads from
    Tensor* pv = const_cast<Tensor*>(nodes_[id].ext_value);
    for (std::size_t i = 0; i < pv->size(); ++i) {
      const double orig = pv->data[i];
      pv->data[i] = orig + h;
      forward();
      const double lp = nodes_[loss].value.data[0];
      pv->data[i] = orig - h;
      forward();
      const double lm = nodes_[loss].value.data[0];
      pv->data[i] = orig;
      const double num = (lp - lm) / (2.0 * h);
      const double ana = ga.data[i];
      const double err = std::abs(ana - num) /
                         std::max({std::abs(ana), std::abs(num), 1e-12});
      max_err = std::max(max_err, err);
    }
  }
  forward();
  return max_err;
}

void adam_step(std::map<std::string, Tensor>& params,
               const std::map<std::string, Tensor>& grads, AdamState& state,
               double lr) {
  if (lr <= 0.0) throw UsageError("adam_step: lr must be positive");
  for (const auto& [name, g] : grads)
    for (double v : g.data)
      if (!std::isfinite(v))
        throw NumericError("adam_step: non-finite gradient for " + name);
  state.t += 1;
  const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.t));
  for (const auto& [name, g] : grads) {
    auto it = params.find(name);
    if (it == params.end())
      throw NumericError("adam_step: gradient for unknown parameter " + name);
    Tensor& p = it->second;
    if (!p.same_shape(g))
      throw NumericError("adam_step: gradient shape mismatch for " + name);
    Tensor& m = state.m.try_emplace(name, p.rows, p.cols).first->second;
    Tensor& v = state.v.try_emplace(name, p.rows, p.cols).first->second;
    for (std::size_t i = 0; i < p.size(); ++i) {
      m.data[i] = state.beta1 * m.data[i] + (1.0 - state.beta1) * g.data[i];
      v.data[i] =
          state.beta2 * v.data[i] + (1.0 - state.beta2) * g.data[i] * g.data[i];
      const double mhat = m.data[i] / bc1;
      const double vhat = v.data[i] / bc2;
      p.data[i] -= lr * mhat / (std::sqrt(vhat) + state.eps);
    }
  }
}

}  // namespace mspk
