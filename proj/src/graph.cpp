#include "last/graph.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>

namespace last {

namespace {

using RowMat = Eigen::Matrix<real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;

ConstMap cmap(const Tensor& t, std::size_t r, std::size_t c) {
  return ConstMap(t.data.data(), Eigen::Index(r), Eigen::Index(c));
}

MutMap mmap(Tensor& t, std::size_t r, std::size_t c) {
  return MutMap(t.data.data(), Eigen::Index(r), Eigen::Index(c));
}

std::string node_tag(NodeId id) { return "node " + std::to_string(id); }

}  // namespace

NodeId Graph::push(Node n) {
  nodes_.push_back(std::move(n));
  return NodeId(nodes_.size() - 1);
}

void Graph::check_id(NodeId id, const char* what) const {
  if (id < 0 || std::size_t(id) >= nodes_.size()) {
    throw ShapeError(std::string(what) + ": invalid node id " + std::to_string(id));
  }
}

NodeId Graph::leaf(std::vector<std::size_t> shape, bool differentiable, std::string name) {
  Node n;
  n.op = OpKind::kLeaf;
  n.shape = std::move(shape);
  n.differentiable = differentiable;
  n.needs_grad = differentiable;
  n.name = std::move(name);
  return push(std::move(n));
}

NodeId Graph::affine(NodeId x, NodeId w, NodeId b) {
  check_id(x, "affine");
  check_id(w, "affine");
  check_id(b, "affine");
  const auto& xs = nodes_[x].shape;
  const auto& ws = nodes_[w].shape;
  const auto& bs = nodes_[b].shape;
  if (xs.size() != 2 || ws.size() != 2 || bs.size() != 1 || xs[1] != ws[0] || ws[1] != bs[0]) {
    throw ShapeError("affine at " + node_tag(NodeId(nodes_.size())) + ": x" + shape_str(xs) +
                     " w" + shape_str(ws) + " b" + shape_str(bs));
  }
  Node n;
  n.op = OpKind::kAffine;
  n.in0 = x;
  n.in1 = w;
  n.in2 = b;
  n.shape = {xs[0], ws[1]};
  n.needs_grad = nodes_[x].needs_grad || nodes_[w].needs_grad || nodes_[b].needs_grad;
  return push(std::move(n));
}

NodeId Graph::relu(NodeId x) {
  check_id(x, "relu");
  Node n;
  n.op = OpKind::kRelu;
  n.in0 = x;
  n.shape = nodes_[x].shape;
  n.needs_grad = nodes_[x].needs_grad;
  return push(std::move(n));
}

NodeId Graph::add(NodeId a, NodeId b) {
  check_id(a, "add");
  check_id(b, "add");
  if (nodes_[a].shape != nodes_[b].shape) {
    throw ShapeError("add at " + node_tag(NodeId(nodes_.size())) + ": " +
                     shape_str(nodes_[a].shape) + " vs " + shape_str(nodes_[b].shape));
  }
  Node n;
  n.op = OpKind::kAdd;
  n.in0 = a;
  n.in1 = b;
  n.shape = nodes_[a].shape;
  n.needs_grad = nodes_[a].needs_grad || nodes_[b].needs_grad;
  return push(std::move(n));
}

NodeId Graph::scale(NodeId x, real c) {
  check_id(x, "scale");
  Node n;
  n.op = OpKind::kScale;
  n.in0 = x;
  n.a0 = c;
  n.shape = nodes_[x].shape;
  n.needs_grad = nodes_[x].needs_grad;
  return push(std::move(n));
}

NodeId Graph::mul(NodeId a, NodeId b) {
  check_id(a, "mul");
  check_id(b, "mul");
  if (nodes_[a].shape != nodes_[b].shape) {
    throw ShapeError("mul at " + node_tag(NodeId(nodes_.size())) + ": " +
                     shape_str(nodes_[a].shape) + " vs " + shape_str(nodes_[b].shape));
  }
  Node n;
  n.op = OpKind::kMul;
  n.in0 = a;
  n.in1 = b;
  n.shape = nodes_[a].shape;
  n.needs_grad = nodes_[a].needs_grad || nodes_[b].needs_grad;
  return push(std::move(n));
}

NodeId Graph::sum(NodeId x) {
  check_id(x, "sum");
  Node n;
  n.op = OpKind::kSum;
  n.in0 = x;
  n.shape = {};
  n.needs_grad = nodes_[x].needs_grad;
  return push(std::move(n));
}

NodeId Graph::mean(NodeId x) {
  check_id(x, "mean");
  if (shape_numel(nodes_[x].shape) == 0) {
    throw ShapeError("mean at " + node_tag(NodeId(nodes_.size())) + ": empty input");
  }
  Node n;
  n.op = OpKind::kMean;
  n.in0 = x;
  n.shape = {};
  n.needs_grad = nodes_[x].needs_grad;
  return push(std::move(n));
}

NodeId Graph::log(NodeId x) {
  check_id(x, "log");
  Node n;
  n.op = OpKind::kLog;
  n.in0 = x;
  n.shape = nodes_[x].shape;
  n.needs_grad = nodes_[x].needs_grad;
  return push(std::move(n));
}

NodeId Graph::exp(NodeId x) {
  check_id(x, "exp");
  Node n;
  n.op = OpKind::kExp;
  n.in0 = x;
  n.shape = nodes_[x].shape;
  n.needs_grad = nodes_[x].needs_grad;
  return push(std::move(n));
}

NodeId Graph::max_reduce(NodeId x, int axis) {
  check_id(x, "max_reduce");
  const auto& xs = nodes_[x].shape;
  if (xs.size() != 2 || (axis != 0 && axis != 1)) {
    throw ShapeError("max_reduce at " + node_tag(NodeId(nodes_.size())) +
                     ": rank-2 input and axis 0/1 required, got " + shape_str(xs));
  }
  Node n;
  n.op = OpKind::kMaxReduce;
  n.in0 = x;
  n.axis = axis;
  n.shape = {axis == 0 ? xs[1] : xs[0]};
  n.needs_grad = nodes_[x].needs_grad;
  return push(std::move(n));
}

NodeId Graph::softmax_cross_entropy(NodeId logits, std::vector<int> labels) {
  check_id(logits, "softmax_cross_entropy");
  const auto& ls = nodes_[logits].shape;
  if (ls.size() != 2) {
    throw ShapeError("softmax_cross_entropy at " + node_tag(NodeId(nodes_.size())) +
                     ": logits must be rank 2, got " + shape_str(ls));
  }
  if (labels.size() != ls[0]) {
    throw ShapeError("softmax_cross_entropy at " + node_tag(NodeId(nodes_.size())) + ": " +
                     std::to_string(labels.size()) + " labels for batch " + std::to_string(ls[0]));
  }
  for (int v : labels) {
    if (v < 0 || std::size_t(v) >= ls[1]) {
      throw ValueError("softmax_cross_entropy: label " + std::to_string(v) +
                       " outside [0," + std::to_string(ls[1]) + ")");
    }
  }
  Node n;
  n.op = OpKind::kSoftmaxCrossEntropy;
  n.in0 = logits;
  n.labels = std::move(labels);
  n.shape = {ls[0]};
  n.needs_grad = nodes_[logits].needs_grad;
  return push(std::move(n));
}

NodeId Graph::kl_temperature(NodeId student, NodeId teacher, real tau) {
  check_id(student, "kl_temperature");
  check_id(teacher, "kl_temperature");
  if (tau <= real(0)) throw ValueError("kl_temperature: tau must be > 0");
  const auto& ss = nodes_[student].shape;
  const auto& ts = nodes_[teacher].shape;
  if (ss.size() != 2 || ss != ts) {
    throw ShapeError("kl_temperature at " + node_tag(NodeId(nodes_.size())) + ": " +
                     shape_str(ss) + " vs " + shape_str(ts));
  }
  Node n;
  n.op = OpKind::kKlTemperature;
  n.in0 = student;
  n.in1 = teacher;
  n.a0 = tau;
  n.shape = {ss[0]};
  n.needs_grad = nodes_[student].needs_grad || nodes_[teacher].needs_grad;
  return push(std::move(n));
}

NodeId Graph::clamp(NodeId x, real lo, real hi) {
  check_id(x, "clamp");
  if (!(lo <= hi)) throw ValueError("clamp: lo > hi");
  Node n;
  n.op = OpKind::kClamp;
  n.in0 = x;
  n.a0 = lo;
  n.a1 = hi;
  n.shape = nodes_[x].shape;
  n.needs_grad = nodes_[x].needs_grad;
  return push(std::move(n));
}

void Graph::bind(NodeId id, Tensor value) {
  check_id(id, "bind");
  Node& n = nodes_[id];
  if (n.op != OpKind::kLeaf) throw ShapeError("bind: " + node_tag(id) + " is not a leaf");
  if (value.shape != n.shape) {
    throw ShapeError("bind: " + node_tag(id) + " expects " + shape_str(n.shape) + ", got " +
                     shape_str(value.shape));
  }
  n.value = std::move(value);
  n.has_value = true;
  last_forward_ = -1;
}

void Graph::compute(NodeId id) {
  Node& n = nodes_[id];
  const Tensor* x = n.in0 >= 0 ? &nodes_[n.in0].value : nullptr;
  const Tensor* y = n.in1 >= 0 ? &nodes_[n.in1].value : nullptr;
  const Tensor* z = n.in2 >= 0 ? &nodes_[n.in2].value : nullptr;

  switch (n.op) {
    case OpKind::kLeaf:
      if (!n.has_value) {
        throw ShapeError("forward_eval: unbound leaf " + node_tag(id) +
                         (n.name.empty() ? "" : " (" + n.name + ")"));
      }
      return;  // finiteness of bound leaves checked below
    case OpKind::kAffine: {
      std::size_t b = x->shape[0], din = x->shape[1], dout = y->shape[1];
      n.value = Tensor::zeros(n.shape);
      mmap(n.value, b, dout).noalias() = cmap(*x, b, din) * cmap(*y, din, dout);
      for (std::size_t r = 0; r < b; ++r)
        for (std::size_t j = 0; j < dout; ++j) n.value.data[r * dout + j] += z->data[j];
      break;
    }
    case OpKind::kRelu: {
      n.value = Tensor::zeros(n.shape);
      for (std::size_t i = 0; i < x->numel(); ++i)
        n.value.data[i] = x->data[i] > real(0) ? x->data[i] : real(0);
      break;
    }
    case OpKind::kAdd: {
      n.value = *x;
      for (std::size_t i = 0; i < y->numel(); ++i) n.value.data[i] += y->data[i];
      break;
    }
    case OpKind::kScale: {
      n.value = *x;
      for (real& v : n.value.data) v *= n.a0;
      break;
    }
    case OpKind::kMul: {
      n.value = *x;
      for (std::size_t i = 0; i < y->numel(); ++i) n.value.data[i] *= y->data[i];
      break;
    }
    case OpKind::kSum: {
      real s = 0;
      for (real v : x->data) s += v;
      n.value = Tensor::scalar(s);
      break;
    }
    case OpKind::kMean: {
      real s = 0;
      for (real v : x->data) s += v;
      n.value = Tensor::scalar(s / real(x->numel()));
      break;
    }
    case OpKind::kLog: {
      n.value = *x;
      for (real& v : n.value.data) v = std::log(v);
      break;
    }
    case OpKind::kExp: {
      n.value = *x;
      for (real& v : n.value.data) v = std::exp(v);
      break;
    }
    case OpKind::kMaxReduce: {
      std::size_t rows = x->shape[0], cols = x->shape[1];
      n.value = Tensor::zeros(n.shape);
      n.saved = Tensor::zeros(n.shape);  // argmax indices, first max wins
      if (n.axis == 1) {
        for (std::size_t r = 0; r < rows; ++r) {
          std::size_t best = 0;
          for (std::size_t j = 1; j < cols; ++j)
            if (x->data[r * cols + j] > x->data[r * cols + best]) best = j;
          n.value.data[r] = x->data[r * cols + best];
          n.saved.data[r] = real(best);
        }
      } else {
        for (std::size_t j = 0; j < cols; ++j) {
          std::size_t best = 0;
          for (std::size_t r = 1; r < rows; ++r)
            if (x->data[r * cols + j] > x->data[best * cols + j]) best = r;
          n.value.data[j] = x->data[best * cols + j];
          n.saved.data[j] = real(best);
        }
      }
      break;
    }
    case OpKind::kSoftmaxCrossEntropy: {
      std::size_t b = x->shape[0], c = x->shape[1];
      n.value = Tensor::zeros(n.shape);
      n.saved = Tensor::zeros({b, c});  // softmax probabilities
      for (std::size_t r = 0; r < b; ++r) {
        const real* row = x->data.data() + r * c;
        real m = row[0];
        for (std::size_t j = 1; j < c; ++j) m = std::max(m, row[j]);
        real zsum = 0;
        for (std::size_t j = 0; j < c; ++j) zsum += std::exp(row[j] - m);
        real lse = m + std::log(zsum);
        n.value.data[r] = lse - row[n.labels[r]];
        for (std::size_t j = 0; j < c; ++j) n.saved.data[r * c + j] = std::exp(row[j] - lse);
      }
      break;
    }
    case OpKind::kKlTemperature: {
      std::size_t b = x->shape[0], c = x->shape[1];
      real tau = n.a0;
      n.value = Tensor::zeros(n.shape);
      // saved layout: rows 0..B-1 student probs q, rows B..2B-1 teacher probs p,
      // rows 2B..3B-1 log(p)-log(q)
      n.saved = Tensor::zeros({3 * b, c});
      auto logsm = [&](const Tensor& t, std::size_t r, real* out) {
        const real* row = t.data.data() + r * c;
        real m = row[0] / tau;
        for (std::size_t j = 1; j < c; ++j) m = std::max(m, row[j] / tau);
        real zsum = 0;
        for (std::size_t j = 0; j < c; ++j) zsum += std::exp(row[j] / tau - m);
        real lse = m + std::log(zsum);
        for (std::size_t j = 0; j < c; ++j) out[j] = row[j] / tau - lse;
      };
      std::vector<real> lq(c), lp(c);
      for (std::size_t r = 0; r < b; ++r) {
        logsm(*x, r, lq.data());
        logsm(*y, r, lp.data());
        real kl = 0;
        for (std::size_t j = 0; j < c; ++j) {
          real p = std::exp(lp[j]);
          real diff = lp[j] - lq[j];
          kl += p * diff;
          n.saved.data[r * c + j] = std::exp(lq[j]);
          n.saved.data[(b + r) * c + j] = p;
          n.saved.data[(2 * b + r) * c + j] = diff;
        }
        n.value.data[r] = kl;
      }
      break;
    }
    case OpKind::kClamp: {
      n.value = *x;
      for (real& v : n.value.data)
        v = std::min(std::max(v, n.a0), n.a1);
      break;
    }
  }
  n.has_value = true;
}

const Tensor& Graph::forward_eval(NodeId output) {
  check_id(output, "forward_eval");
  for (NodeId id = 0; id <= output; ++id) {
    compute(id);
    if (!nodes_[id].value.all_finite()) {
      throw NumericError("forward_eval: numerical-overflow (non-finite value) at " +
                         node_tag(id));
    }
  }
  last_forward_ = output;
  return nodes_[output].value;
}

std::map<NodeId, Tensor> Graph::backward_grad(NodeId loss) {
  check_id(loss, "backward_grad");
  if (last_forward_ < loss) {
    throw ShapeError("backward_grad: forward_eval must cover the loss node first");
  }
  if (!nodes_[loss].value.is_scalar()) {
    throw ShapeError("backward_grad: loss " + node_tag(loss) + " is not scalar");
  }

  std::vector<Tensor> grads(std::size_t(loss) + 1);
  std::vector<bool> live(std::size_t(loss) + 1, false);
  grads[loss] = Tensor::scalar(real(1));
  live[loss] = true;

  auto accum = [&](NodeId target, auto&& fn) {
    if (target < 0 || !nodes_[target].needs_grad) return;
    if (!live[target]) {
      grads[target] = Tensor::zeros(nodes_[target].shape);
      live[target] = true;
    }
    fn(grads[target]);
  };

  for (NodeId id = loss; id >= 0; --id) {
    if (!live[id] || !nodes_[id].needs_grad) continue;
    const Node& n = nodes_[id];
    const Tensor& g = grads[id];
    switch (n.op) {
      case OpKind::kLeaf:
        break;
      case OpKind::kAffine: {
        const Tensor& x = nodes_[n.in0].value;
        const Tensor& w = nodes_[n.in1].value;
        std::size_t b = x.shape[0], din = x.shape[1], dout = w.shape[1];
        accum(n.in0, [&](Tensor& gx) {
          mmap(gx, b, din).noalias() += cmap(g, b, dout) * cmap(w, din, dout).transpose();
        });
        accum(n.in1, [&](Tensor& gw) {
          mmap(gw, din, dout).noalias() += cmap(x, b, din).transpose() * cmap(g, b, dout);
        });
        accum(n.in2, [&](Tensor& gb) {
          for (std::size_t r = 0; r < b; ++r)
            for (std::size_t j = 0; j < dout; ++j) gb.data[j] += g.data[r * dout + j];
        });
        break;
      }
      case OpKind::kRelu: {
        const Tensor& x = nodes_[n.in0].value;
        accum(n.in0, [&](Tensor& gx) {
          // subgradient at 0 is 0
          for (std::size_t i = 0; i < x.numel(); ++i)
            if (x.data[i] > real(0)) gx.data[i] += g.data[i];
        });
        break;
      }
      case OpKind::kAdd: {
        accum(n.in0, [&](Tensor& gx) {
          for (std::size_t i = 0; i < g.numel(); ++i) gx.data[i] += g.data[i];
        });
        accum(n.in1, [&](Tensor& gy) {
          for (std::size_t i = 0; i < g.numel(); ++i) gy.data[i] += g.data[i];
        });
        break;
      }
      case OpKind::kScale: {
        accum(n.in0, [&](Tensor& gx) {
          for (std::size_t i = 0; i < g.numel(); ++i) gx.data[i] += n.a0 * g.data[i];
        });
        break;
      }
      case OpKind::kMul: {
        const Tensor& x = nodes_[n.in0].value;
        const Tensor& y = nodes_[n.in1].value;
        accum(n.in0, [&](Tensor& gx) {
          for (std::size_t i = 0; i < g.numel(); ++i) gx.data[i] += g.data[i] * y.data[i];
        });
        accum(n.in1, [&](Tensor& gy) {
          for (std::size_t i = 0; i < g.numel(); ++i) gy.data[i] += g.data[i] * x.data[i];
        });
        break;
      }
      case OpKind::kSum: {
        accum(n.in0, [&](Tensor& gx) {
          for (real& v : gx.data) v += g.data[0];
        });
        break;
      }
      case OpKind::kMean: {
        const real inv = real(1) / real(nodes_[n.in0].value.numel());
        accum(n.in0, [&](Tensor& gx) {
          for (real& v : gx.data) v += g.data[0] * inv;
        });
        break;
      }
      case OpKind::kLog: {
        const Tensor& x = nodes_[n.in0].value;
        accum(n.in0, [&](Tensor& gx) {
          for (std::size_t i = 0; i < g.numel(); ++i) gx.data[i] += g.data[i] / x.data[i];
        });
        break;
      }
      case OpKind::kExp: {
        accum(n.in0, [&](Tensor& gx) {
          for (std::size_t i = 0; i < g.numel(); ++i) gx.data[i] += g.data[i] * n.value.data[i];
        });
        break;
      }
      case OpKind::kMaxReduce: {
        const Tensor& x = nodes_[n.in0].value;
        std::size_t rows = x.shape[0], cols = x.shape[1];
        accum(n.in0, [&](Tensor& gx) {
          if (n.axis == 1) {
            for (std::size_t r = 0; r < rows; ++r)
              gx.data[r * cols + std::size_t(n.saved.data[r])] += g.data[r];
          } else {
            for (std::size_t j = 0; j < cols; ++j)
              gx.data[std::size_t(n.saved.data[j]) * cols + j] += g.data[j];
          }
        });
        break;
      }
      case OpKind::kSoftmaxCrossEntropy: {
        std::size_t b = n.saved.shape[0], c = n.saved.shape[1];
        accum(n.in0, [&](Tensor& gl) {
          for (std::size_t r = 0; r < b; ++r) {
            real gr = g.data[r];
            for (std::size_t j = 0; j < c; ++j)
              gl.data[r * c + j] += gr * n.saved.data[r * c + j];
            gl.data[r * c + std::size_t(n.labels[r])] -= gr;
          }
        });
        break;
      }
      case OpKind::kKlTemperature: {
        std::size_t b = n.shape[0], c = n.saved.shape[1];
        real inv_tau = real(1) / n.a0;
        accum(n.in0, [&](Tensor& gs) {
          for (std::size_t r = 0; r < b; ++r) {
            real gr = g.data[r] * inv_tau;
            for (std::size_t j = 0; j < c; ++j) {
              real q = n.saved.data[r * c + j];
              real p = n.saved.data[(b + r) * c + j];
              gs.data[r * c + j] += gr * (q - p);
            }
          }
        });
        accum(n.in1, [&](Tensor& gt) {
          for (std::size_t r = 0; r < b; ++r) {
            real gr = g.data[r] * inv_tau;
            real kl = n.value.data[r];
            for (std::size_t j = 0; j < c; ++j) {
              real p = n.saved.data[(b + r) * c + j];
              real diff = n.saved.data[(2 * b + r) * c + j];
              gt.data[r * c + j] += gr * p * (diff - kl);
            }
          }
        });
        break;
      }
      case OpKind::kClamp: {
        const Tensor& x = nodes_[n.in0].value;
        accum(n.in0, [&](Tensor& gx) {
          for (std::size_t i = 0; i < g.numel(); ++i)
            if (x.data[i] > n.a0 && x.data[i] < n.a1) gx.data[i] += g.data[i];
        });
        break;
      }
    }
  }

  std::map<NodeId, Tensor> out;
  for (NodeId id = 0; id <= loss; ++id) {
    const Node& n = nodes_[id];
    if (n.op == OpKind::kLeaf && n.differentiable) {
      out[id] = live[id] ? std::move(grads[id]) : Tensor::zeros(n.shape);
    }
  }
  // differentiable leaves created after the loss node are unreachable
  for (NodeId id = loss + 1; id < NodeId(nodes_.size()); ++id) {
    const Node& n = nodes_[id];
    if (n.op == OpKind::kLeaf && n.differentiable) out[id] = Tensor::zeros(n.shape);
  }
  return out;
}

real Graph::finite_diff_check(NodeId loss, NodeId leaf, real h) {
  if (sizeof(real) != 8) throw ValueError("finite_diff_check: 64-bit build required");
  if (h <= real(0)) throw ValueError("finite_diff_check: h must be > 0");
  check_id(leaf, "finite_diff_check");
  if (nodes_[leaf].op != OpKind::kLeaf || !nodes_[leaf].differentiable) {
    throw ValueError("finite_diff_check: target is not a differentiable leaf");
  }

  forward_eval(loss);
  Tensor analytic = backward_grad(loss).at(leaf);
  Tensor base = nodes_[leaf].value;

  real max_rel = 0;
  for (std::size_t i = 0; i < base.numel(); ++i) {
    real step = h * (real(1) + std::abs(base.data[i]));
    Tensor plus = base, minus = base;
    plus.data[i] += step;
    minus.data[i] -= step;
    bind(leaf, std::move(plus));
    real fp = forward_eval(loss).data[0];
    bind(leaf, std::move(minus));
    real fm = forward_eval(loss).data[0];
    if (!std::isfinite(fp) || !std::isfinite(fm)) {
      bind(leaf, base);
      throw NumericError("finite_diff_check: non-finite perturbed evaluation");
    }
    real numeric = (fp - fm) / (2 * step);
    real denom = std::max({std::abs(analytic.data[i]), std::abs(numeric), real(1e-8)});
    max_rel = std::max(max_rel, std::abs(analytic.data[i] - numeric) / denom);
  }
  bind(leaf, std::move(base));
  forward_eval(loss);
  return max_rel;
}

}  // namespace last
