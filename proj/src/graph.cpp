#include "fedscan/graph.hpp"

#include <cmath>
#include <cstddef>

namespace fedscan {

double stable_sigmoid(double z) {
  if (z >= 0.0) {
    return 1.0 / (1.0 + std::exp(-z));
  }
  const double e = std::exp(z);
  return e / (1.0 + e);
}

namespace {

void require_equal_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (!a.same_shape(b)) {
    throw ShapeError(std::string(op) + ": operand shapes differ, " +
                     shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
}

}  // namespace

int conv_out_dim(int in, int kernel, int stride, int pad) {
  return (in + 2 * pad - kernel) / stride + 1;
}

std::size_t Graph::check_id(NodeId id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= nodes_.size()) {
    throw ContractError("graph node id " + std::to_string(id) +
                        " out of range");
  }
  return static_cast<std::size_t>(id);
}

NodeId Graph::push(Node node) {
  for (NodeId in : node.inputs) {
    check_id(in);
  }
  nodes_.push_back(std::move(node));
  return static_cast<NodeId>(nodes_.size() - 1);
}

NodeId Graph::input(Tensor value, bool is_param) {
  checked_numel(value.shape());
  Node n;
  n.kind = OpKind::kInput;
  n.value = std::move(value);
  n.is_param = is_param;
  return push(std::move(n));
}

NodeId Graph::matmul(NodeId a, NodeId b) {
  const Tensor& av = value(a);
  const Tensor& bv = value(b);
  if (av.rank() != 2 || bv.rank() != 2 || av.dim(1) != bv.dim(0)) {
    throw ShapeError("matmul: incompatible shapes " + shape_str(av.shape()) +
                     " x " + shape_str(bv.shape()));
  }
  const int m = av.dim(0), k = av.dim(1), n = bv.dim(1);
  Tensor out = Tensor::zeros({m, n});
  for (int i = 0; i < m; ++i) {
    for (int p = 0; p < k; ++p) {
      const double aip = av[static_cast<std::size_t>(i) * k + p];
      if (aip == 0.0) continue;
      for (int j = 0; j < n; ++j) {
        out[static_cast<std::size_t>(i) * n + j] +=
            aip * bv[static_cast<std::size_t>(p) * n + j];
      }
    }
  }
  Node node;
  node.kind = OpKind::kMatMul;
  node.inputs = {a, b};
  node.value = std::move(out);
  return push(std::move(node));
}

NodeId Graph::conv2d(NodeId in, NodeId kernel, int stride, int pad) {
  const Tensor& x = value(in);
  const Tensor& k = value(kernel);
  if (stride < 1) {
    throw DomainError("conv2d: stride must be >= 1");
  }
  if (pad < 0) {
    throw DomainError("conv2d: pad must be >= 0");
  }
  if (x.rank() != 3 || k.rank() != 4) {
    throw ShapeError("conv2d: expected input [Cin,H,W] and kernel "
                     "[Cout,Cin,kh,kw], got " +
                     shape_str(x.shape()) + " and " + shape_str(k.shape()));
  }
  const int ci = x.dim(0), h = x.dim(1), w = x.dim(2);
  const int co = k.dim(0), kci = k.dim(1), kh = k.dim(2), kw = k.dim(3);
  if (kci != ci) {
    throw ShapeError("conv2d: kernel expects " + std::to_string(kci) +
                     " input channels, input has " + std::to_string(ci));
  }
  if (kh > h + 2 * pad || kw > w + 2 * pad) {
    throw ShapeError("conv2d: kernel " + std::to_string(kh) + "x" +
                     std::to_string(kw) + " larger than padded input " +
                     std::to_string(h + 2 * pad) + "x" +
                     std::to_string(w + 2 * pad));
  }
  const int ho = conv_out_dim(h, kh, stride, pad);
  const int wo = conv_out_dim(w, kw, stride, pad);

  Tensor out = Tensor::zeros({co, ho, wo});
  for (int oc = 0; oc < co; ++oc) {
    for (int ic = 0; ic < ci; ++ic) {
      const double* kbase =
          k.data() + (static_cast<std::size_t>(oc) * ci + ic) * kh * kw;
      const double* xbase = x.data() + static_cast<std::size_t>(ic) * h * w;
      double* obase = out.data() + static_cast<std::size_t>(oc) * ho * wo;
      for (int oy = 0; oy < ho; ++oy) {
        for (int ox = 0; ox < wo; ++ox) {
          double acc = 0.0;
          for (int ky = 0; ky < kh; ++ky) {
            const int iy = oy * stride + ky - pad;
            if (iy < 0 || iy >= h) continue;
            for (int kx = 0; kx < kw; ++kx) {
              const int ix = ox * stride + kx - pad;
              if (ix < 0 || ix >= w) continue;
              acc += xbase[iy * w + ix] * kbase[ky * kw + kx];
            }
          }
          obase[oy * wo + ox] += acc;
        }
      }
    }
  }

  Node node;
  node.kind = OpKind::kConv2d;
  node.inputs = {in, kernel};
  node.value = std::move(out);
  node.stride = stride;
  node.pad = pad;
  return push(std::move(node));
}

NodeId Graph::sigmoid(NodeId a) {
  const Tensor& x = value(a);
  Tensor out = Tensor::zeros(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) {
    out[i] = stable_sigmoid(x[i]);
  }
  Node node;
  node.kind = OpKind::kSigmoid;
  node.inputs = {a};
  node.value = std::move(out);
  return push(std::move(node));
}

NodeId Graph::tanh(NodeId a) {
  const Tensor& x = value(a);
  Tensor out = Tensor::zeros(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) {
    out[i] = std::tanh(x[i]);
  }
  Node node;
  node.kind = OpKind::kTanh;
  node.inputs = {a};
  node.value = std::move(out);
  return push(std::move(node));
}

NodeId Graph::relu(NodeId a) {
  const Tensor& x = value(a);
  Tensor out = Tensor::zeros(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) {
    out[i] = x[i] > 0.0 ? x[i] : 0.0;
  }
  Node node;
  node.kind = OpKind::kRelu;
  node.inputs = {a};
  node.value = std::move(out);
  return push(std::move(node));
}

NodeId Graph::add(NodeId a, NodeId b) {
  const Tensor& av = value(a);
  const Tensor& bv = value(b);
  require_equal_shape(av, bv, "add");
  Tensor out = Tensor::zeros(av.shape());
  for (std::size_t i = 0; i < av.size(); ++i) {
    out[i] = av[i] + bv[i];
  }
  Node node;
  node.kind = OpKind::kAdd;
  node.inputs = {a, b};
  node.value = std::move(out);
  return push(std::move(node));
}

NodeId Graph::sub(NodeId a, NodeId b) {
  const Tensor& av = value(a);
  const Tensor& bv = value(b);
  require_equal_shape(av, bv, "sub");
  Tensor out = Tensor::zeros(av.shape());
  for (std::size_t i = 0; i < av.size(); ++i) {
    out[i] = av[i] - bv[i];
  }
  Node node;
  node.kind = OpKind::kSub;
  node.inputs = {a, b};
  node.value = std::move(out);
  return push(std::move(node));
}

NodeId Graph::mul(NodeId a, NodeId b) {
  const Tensor& av = value(a);
  const Tensor& bv = value(b);
  require_equal_shape(av, bv, "mul");
  Tensor out = Tensor::zeros(av.shape());
  for (std::size_t i = 0; i < av.size(); ++i) {
    out[i] = av[i] * bv[i];
  }
  Node node;
  node.kind = OpKind::kMul;
  node.inputs = {a, b};
  node.value = std::move(out);
  return push(std::move(node));
}

NodeId Graph::scale(NodeId a, double factor) {
  const Tensor& av = value(a);
  Tensor out = Tensor::zeros(av.shape());
  for (std::size_t i = 0; i < av.size(); ++i) {
    out[i] = av[i] * factor;
  }
  Node node;
  node.kind = OpKind::kScale;
  node.inputs = {a};
  node.value = std::move(out);
  node.scalar = factor;
  return push(std::move(node));
}

NodeId Graph::concat_channels(const std::vector<NodeId>& parts) {
  if (parts.empty()) {
    throw ContractError("concat_channels: no operands");
  }
  const Tensor& first = value(parts[0]);
  if (first.rank() != 3) {
    throw ShapeError("concat_channels: operands must be [C,H,W], got " +
                     shape_str(first.shape()));
  }
  const int h = first.dim(1), w = first.dim(2);
  int total_c = 0;
  for (NodeId id : parts) {
    const Tensor& t = value(id);
    if (t.rank() != 3 || t.dim(1) != h || t.dim(2) != w) {
      throw ShapeError("concat_channels: spatial mismatch, " +
                       shape_str(first.shape()) + " vs " +
                       shape_str(t.shape()));
    }
    total_c += t.dim(0);
  }
  Tensor out = Tensor::zeros({total_c, h, w});
  std::size_t offset = 0;
  for (NodeId id : parts) {
    const Tensor& t = value(id);
    for (std::size_t i = 0; i < t.size(); ++i) {
      out[offset + i] = t[i];
    }
    offset += t.size();
  }
  Node node;
  node.kind = OpKind::kConcatChannels;
  node.inputs = parts;
  node.value = std::move(out);
  return push(std::move(node));
}

NodeId Graph::pool_avg(NodeId a, int window) {
  const Tensor& x = value(a);
  if (window < 1) {
    throw DomainError("pool_avg: window must be >= 1");
  }
  if (x.rank() != 3) {
    throw ShapeError("pool_avg: expected [C,H,W], got " +
                     shape_str(x.shape()));
  }
  const int c = x.dim(0), h = x.dim(1), w = x.dim(2);
  if (h % window != 0 || w % window != 0) {
    throw ShapeError("pool_avg: dims " + std::to_string(h) + "x" +
                     std::to_string(w) + " not divisible by window " +
                     std::to_string(window));
  }
  const int ho = h / window, wo = w / window;
  const double inv = 1.0 / (static_cast<double>(window) * window);
  Tensor out = Tensor::zeros({c, ho, wo});
  for (int ch = 0; ch < c; ++ch) {
    const double* xb = x.data() + static_cast<std::size_t>(ch) * h * w;
    double* ob = out.data() + static_cast<std::size_t>(ch) * ho * wo;
    for (int oy = 0; oy < ho; ++oy) {
      for (int ox = 0; ox < wo; ++ox) {
        double acc = 0.0;
        for (int dy = 0; dy < window; ++dy) {
          for (int dx = 0; dx < window; ++dx) {
            acc += xb[(oy * window + dy) * w + ox * window + dx];
          }
        }
        ob[oy * wo + ox] = acc * inv;
      }
    }
  }
  Node node;
  node.kind = OpKind::kPoolAvg;
  node.inputs = {a};
  node.value = std::move(out);
  node.window = window;
  return push(std::move(node));
}

NodeId Graph::global_pool_avg(NodeId a) {
  const Tensor& x = value(a);
  if (x.rank() != 3) {
    throw ShapeError("global_pool_avg: expected [C,H,W], got " +
                     shape_str(x.shape()));
  }
  const int c = x.dim(0), h = x.dim(1), w = x.dim(2);
  const double inv = 1.0 / (static_cast<double>(h) * w);
  Tensor out = Tensor::zeros({c});
  for (int ch = 0; ch < c; ++ch) {
    const double* xb = x.data() + static_cast<std::size_t>(ch) * h * w;
    double acc = 0.0;
    for (int i = 0; i < h * w; ++i) {
      acc += xb[i];
    }
    out[static_cast<std::size_t>(ch)] = acc * inv;
  }
  Node node;
  node.kind = OpKind::kGlobalPoolAvg;
  node.inputs = {a};
  node.value = std::move(out);
  return push(std::move(node));
}

NodeId Graph::reshape(NodeId a, Shape shape) {
  Node node;
  node.kind = OpKind::kReshape;
  node.inputs = {a};
  node.value = value(a).reshaped(std::move(shape));
  return push(std::move(node));
}

NodeId Graph::bce_with_logits(NodeId logits, Tensor targets) {
  const Tensor& z = value(logits);
  require_equal_shape(z, targets, "bce_with_logits");
  for (std::size_t i = 0; i < targets.size(); ++i) {
    if (targets[i] != 0.0 && targets[i] != 1.0) {
      throw DomainError("bce_with_logits: target " + std::to_string(i) +
                        " is not binary");
    }
  }
  // Mean over labels of the log-sum-exp form; never evaluates log(sigmoid).
  double total = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) {
    const double zi = z[i];
    const double ti = targets[i];
    total += std::max(zi, 0.0) - zi * ti + std::log1p(std::exp(-std::abs(zi)));
  }
  Tensor out = Tensor::full({1}, total / static_cast<double>(z.size()));
  Node node;
  node.kind = OpKind::kBceWithLogits;
  node.inputs = {logits};
  node.value = std::move(out);
  node.targets = std::move(targets);
  return push(std::move(node));
}

Tensor& Graph::grad_slot(NodeId id) {
  const std::size_t i = check_id(id);
  if (!grad_set_[i]) {
    grads_[i] = Tensor::zeros(nodes_[i].value.shape());
    grad_set_[i] = 1;
  }
  return grads_[i];
}

bool Graph::has_grad(NodeId id) const { return grad_set_[check_id(id)] != 0; }

const Tensor& Graph::grad(NodeId id) const {
  const std::size_t i = check_id(id);
  if (!grad_set_[i]) {
    throw ContractError("no gradient for node " + std::to_string(id));
  }
  return grads_[i];
}

void Graph::backward(NodeId root) {
  const std::size_t r = check_id(root);
  if (nodes_[r].value.size() != 1) {
    throw ContractError("backward: root must be scalar-valued, has shape " +
                        shape_str(nodes_[r].value.shape()));
  }
  grads_.assign(nodes_.size(), Tensor());
  grad_set_.assign(nodes_.size(), 0);
  grad_slot(root)[0] = 1.0;
  for (NodeId id = root; id >= 0; --id) {
    if (!grad_set_[static_cast<std::size_t>(id)]) continue;
    backprop_node(id);
  }
  // Parameters untouched by the root still expose a (zero) gradient.
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    if (nodes_[i].is_param && !grad_set_[i]) {
      grad_slot(static_cast<NodeId>(i));
    }
  }
}

void Graph::backprop_node(NodeId id) {
  const Node& n = nodes_[static_cast<std::size_t>(id)];
  const Tensor& g = grads_[static_cast<std::size_t>(id)];
  switch (n.kind) {
    case OpKind::kInput:
      break;
    case OpKind::kMatMul: {
      const Tensor& a = value(n.inputs[0]);
      const Tensor& b = value(n.inputs[1]);
      const int m = a.dim(0), k = a.dim(1), nn = b.dim(1);
      Tensor& da = grad_slot(n.inputs[0]);
      Tensor& db = grad_slot(n.inputs[1]);
      for (int i = 0; i < m; ++i) {
        for (int j = 0; j < nn; ++j) {
          const double gij = g[static_cast<std::size_t>(i) * nn + j];
          if (gij == 0.0) continue;
          for (int p = 0; p < k; ++p) {
            da[static_cast<std::size_t>(i) * k + p] +=
                gij * b[static_cast<std::size_t>(p) * nn + j];
            db[static_cast<std::size_t>(p) * nn + j] +=
                gij * a[static_cast<std::size_t>(i) * k + p];
          }
        }
      }
      break;
    }
    case OpKind::kConv2d: {
      const Tensor& x = value(n.inputs[0]);
      const Tensor& k = value(n.inputs[1]);
      const int ci = x.dim(0), h = x.dim(1), w = x.dim(2);
      const int co = k.dim(0), kh = k.dim(2), kw = k.dim(3);
      const int ho = n.value.dim(1), wo = n.value.dim(2);
      Tensor& dx = grad_slot(n.inputs[0]);
      Tensor& dk = grad_slot(n.inputs[1]);
      for (int oc = 0; oc < co; ++oc) {
        for (int ic = 0; ic < ci; ++ic) {
          const double* kbase =
              k.data() + (static_cast<std::size_t>(oc) * ci + ic) * kh * kw;
          const double* xbase = x.data() + static_cast<std::size_t>(ic) * h * w;
          const double* gbase =
              g.data() + static_cast<std::size_t>(oc) * ho * wo;
          double* dxbase = dx.data() + static_cast<std::size_t>(ic) * h * w;
          double* dkbase =
              dk.data() + (static_cast<std::size_t>(oc) * ci + ic) * kh * kw;
          for (int oy = 0; oy < ho; ++oy) {
            for (int ox = 0; ox < wo; ++ox) {
              const double go = gbase[oy * wo + ox];
              if (go == 0.0) continue;
              for (int ky = 0; ky < kh; ++ky) {
                const int iy = oy * n.stride + ky - n.pad;
                if (iy < 0 || iy >= h) continue;
                for (int kx = 0; kx < kw; ++kx) {
                  const int ix = ox * n.stride + kx - n.pad;
                  if (ix < 0 || ix >= w) continue;
                  dxbase[iy * w + ix] += go * kbase[ky * kw + kx];
                  dkbase[ky * kw + kx] += go * xbase[iy * w + ix];
                }
              }
            }
          }
        }
      }
      break;
    }
    case OpKind::kSigmoid: {
      Tensor& da = grad_slot(n.inputs[0]);
      for (std::size_t i = 0; i < g.size(); ++i) {
        const double y = n.value[i];
        da[i] += g[i] * y * (1.0 - y);
      }
      break;
    }
    case OpKind::kTanh: {
      Tensor& da = grad_slot(n.inputs[0]);
      for (std::size_t i = 0; i < g.size(); ++i) {
        const double y = n.value[i];
        da[i] += g[i] * (1.0 - y * y);
      }
      break;
    }
    case OpKind::kRelu: {
      const Tensor& x = value(n.inputs[0]);
      Tensor& da = grad_slot(n.inputs[0]);
      for (std::size_t i = 0; i < g.size(); ++i) {
        if (x[i] > 0.0) da[i] += g[i];
      }
      break;
    }
    case OpKind::kAdd: {
      Tensor& da = grad_slot(n.inputs[0]);
      Tensor& db = grad_slot(n.inputs[1]);
      for (std::size_t i = 0; i < g.size(); ++i) {
        da[i] += g[i];
        db[i] += g[i];
      }
      break;
    }
    case OpKind::kSub: {
      Tensor& da = grad_slot(n.inputs[0]);
      Tensor& db = grad_slot(n.inputs[1]);
      for (std::size_t i = 0; i < g.size(); ++i) {
        da[i] += g[i];
        db[i] -= g[i];
      }
      break;
    }
    case OpKind::kMul: {
      const Tensor& a = value(n.inputs[0]);
      const Tensor& b = value(n.inputs[1]);
      Tensor& da = grad_slot(n.inputs[0]);
      Tensor& db = grad_slot(n.inputs[1]);
      for (std::size_t i = 0; i < g.size(); ++i) {
        da[i] += g[i] * b[i];
        db[i] += g[i] * a[i];
      }
      break;
    }
    case OpKind::kScale: {
      Tensor& da = grad_slot(n.inputs[0]);
      for (std::size_t i = 0; i < g.size(); ++i) {
        da[i] += g[i] * n.scalar;
      }
      break;
    }
    case OpKind::kConcatChannels: {
      std::size_t offset = 0;
      for (NodeId in : n.inputs) {
        Tensor& da = grad_slot(in);
        for (std::size_t i = 0; i < da.size(); ++i) {
          da[i] += g[offset + i];
        }
        offset += da.size();
      }
      break;
    }
    case OpKind::kPoolAvg: {
      const Tensor& x = value(n.inputs[0]);
      const int c = x.dim(0), h = x.dim(1), w = x.dim(2);
      const int win = n.window;
      const int ho = h / win, wo = w / win;
      const double inv = 1.0 / (static_cast<double>(win) * win);
      Tensor& dx = grad_slot(n.inputs[0]);
      for (int ch = 0; ch < c; ++ch) {
        const double* gb = g.data() + static_cast<std::size_t>(ch) * ho * wo;
        double* dxb = dx.data() + static_cast<std::size_t>(ch) * h * w;
        for (int oy = 0; oy < ho; ++oy) {
          for (int ox = 0; ox < wo; ++ox) {
            const double go = gb[oy * wo + ox] * inv;
            for (int dy = 0; dy < win; ++dy) {
              for (int dx2 = 0; dx2 < win; ++dx2) {
                dxb[(oy * win + dy) * w + ox * win + dx2] += go;
              }
            }
          }
        }
      }
      break;
    }
    case OpKind::kGlobalPoolAvg: {
      const Tensor& x = value(n.inputs[0]);
      const int c = x.dim(0), h = x.dim(1), w = x.dim(2);
      const double inv = 1.0 / (static_cast<double>(h) * w);
      Tensor& dx = grad_slot(n.inputs[0]);
      for (int ch = 0; ch < c; ++ch) {
        const double go = g[static_cast<std::size_t>(ch)] * inv;
        double* dxb = dx.data() + static_cast<std::size_t>(ch) * h * w;
        for (int i = 0; i < h * w; ++i) {
          dxb[i] += go;
        }
      }
      break;
    }
    case OpKind::kReshape: {
      Tensor& da = grad_slot(n.inputs[0]);
      for (std::size_t i = 0; i < g.size(); ++i) {
        da[i] += g[i];
      }
      break;
    }
    case OpKind::kBceWithLogits: {
      const Tensor& z = value(n.inputs[0]);
      Tensor& dz = grad_slot(n.inputs[0]);
      const double gs = g[0] / static_cast<double>(z.size());
      for (std::size_t i = 0; i < z.size(); ++i) {
        dz[i] += gs * (stable_sigmoid(z[i]) - n.targets[i]);
      }
      break;
    }
  }
}

}  // namespace fedscan
