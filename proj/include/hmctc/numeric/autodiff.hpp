#pragma once

#include "hmctc/numeric/ops.hpp"

#include <functional>
#include <memory>

namespace hmctc {

// Define-by-run reverse-mode tape. A tape is built for one computation,
// backward() is called once, and the tape is discarded.
class Tape {
 public:
  struct Var {
    std::size_t id;
  };

  using BackwardFn = std::function<void(Tape&, const Tensor& out_grad)>;

  Var constant(Tensor value) { return push(std::move(value), nullptr, false); }

  // A non-parameter input whose gradient is wanted (e.g. an encoder tap).
  Var leaf(Tensor value) { return push(std::move(value), nullptr, true); }

  Var param(Parameter& p) {
    Var v = push(p.value, nullptr, true);
    nodes_[v.id].param = &p;
    return v;
  }

  const Tensor& value(Var v) const { return nodes_[v.id].value; }

  // Gradient accumulated at v by the last backward(); zeros if none reached it.
  Tensor grad(Var v) const {
    const Node& n = nodes_[v.id];
    return n.grad.empty() ? Tensor(n.value.shape()) : n.grad;
  }

  // Adds g into the gradient slot of v. Used by custom backward functions.
  void accumulate(Var v, const Tensor& g) {
    Node& n = nodes_[v.id];
    if (!n.requires_grad) return;
    require_same_shape(n.value, g, "gradient accumulation");
    if (n.grad.empty()) {
      n.grad = g;
    } else {
      for (std::size_t i = 0; i < g.size(); ++i) n.grad[i] += g[i];
    }
  }

  bool requires_grad(Var v) const { return nodes_[v.id].requires_grad; }

  Var custom(std::vector<Var> inputs, Tensor value, BackwardFn fn) {
    bool rg = false;
    for (Var in : inputs) rg = rg || nodes_[in.id].requires_grad;
    return push(std::move(value), rg ? std::move(fn) : nullptr, rg);
  }

  Var matmul(Var a, Var b) {
    return custom({a, b}, hmctc::matmul(value(a), value(b)), [a, b](Tape& t, const Tensor& g) {
      if (t.requires_grad(a)) {
        Tensor ga(t.value(a).shape());
        ga.mat().noalias() = g.mat() * t.value(b).mat().transpose();
        t.accumulate(a, ga);
      }
      if (t.requires_grad(b)) {
        Tensor gb(t.value(b).shape());
        gb.mat().noalias() = t.value(a).mat().transpose() * g.mat();
        t.accumulate(b, gb);
      }
    });
  }

  Var add(Var a, Var b) {
    return custom({a, b}, elementwise(ElementwiseOp::add, value(a), &value(b)), [a, b](Tape& t, const Tensor& g) {
      t.accumulate(a, g);
      t.accumulate(b, g);
    });
  }

  // m[r, :] + row for every r; row is 1xC.
  Var add_row(Var m, Var row) {
    const Tensor& mv = value(m);
    const Tensor& rv = value(row);
    if (rv.rows() != 1 || rv.cols() != mv.cols()) {
      throw ShapeError("add_row: " + shape_string(rv.shape()) + " cannot broadcast over " +
                       shape_string(mv.shape()));
    }
    Tensor out = mv;
    out.mat().rowwise() += rv.mat().row(0);
    return custom({m, row}, std::move(out), [m, row](Tape& t, const Tensor& g) {
      t.accumulate(m, g);
      Tensor gr = Tensor::zeros(1, g.cols());
      gr.mat() = g.mat().colwise().sum();
      t.accumulate(row, gr);
    });
  }

  Var mul(Var a, Var b) {
    return custom({a, b}, elementwise(ElementwiseOp::mul, value(a), &value(b)), [a, b](Tape& t, const Tensor& g) {
      t.accumulate(a, elementwise(ElementwiseOp::mul, g, &t.value(b)));
      t.accumulate(b, elementwise(ElementwiseOp::mul, g, &t.value(a)));
    });
  }

  Var scale(Var a, double s) {
    Tensor out = value(a);
    for (auto& x : out.values()) x *= s;
    return custom({a}, std::move(out), [a, s](Tape& t, const Tensor& g) {
      Tensor ga = g;
      for (auto& x : ga.values()) x *= s;
      t.accumulate(a, ga);
    });
  }

  Var sigmoid(Var a) {
    Tensor out = elementwise(ElementwiseOp::sigmoid, value(a));
    Var v = custom({a}, out, {});
    set_backward(v, [a, out](Tape& t, const Tensor& g) {
      Tensor ga(g.shape());
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] = g[i] * out[i] * (1.0 - out[i]);
      t.accumulate(a, ga);
    });
    return v;
  }

  Var tanh(Var a) {
    Tensor out = elementwise(ElementwiseOp::tanh, value(a));
    Var v = custom({a}, out, {});
    set_backward(v, [a, out](Tape& t, const Tensor& g) {
      Tensor ga(g.shape());
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] = g[i] * (1.0 - out[i] * out[i]);
      t.accumulate(a, ga);
    });
    return v;
  }

  Var concat_lastdim(Var a, Var b) {
    const std::size_t ca = value(a).cols();
    return custom({a, b}, hmctc::concat_lastdim(value(a), value(b)), [a, b, ca](Tape& t, const Tensor& g) {
      Tensor ga = Tensor::zeros(g.rows(), ca);
      Tensor gb = Tensor::zeros(g.rows(), g.cols() - ca);
      ga.mat() = g.mat().leftCols(ca);
      gb.mat() = g.mat().rightCols(g.cols() - ca);
      t.accumulate(a, ga);
      t.accumulate(b, gb);
    });
  }

  Var dropout_apply(Var a, const Tensor& mask, double keep) {
    return custom({a}, hmctc::dropout_apply(value(a), mask, keep), [a, mask, keep](Tape& t, const Tensor& g) {
      t.accumulate(a, hmctc::dropout_apply(g, mask, keep));
    });
  }

  Var log_softmax_rows(Var a) {
    Tensor out = hmctc::log_softmax_rows(value(a));
    Var v = custom({a}, out, {});
    set_backward(v, [a, out](Tape& t, const Tensor& g) {
      // d/dx_j sum_k g_k (x_k - lse) = g_j - softmax_j * sum_k g_k
      Tensor ga(g.shape());
      const auto gm = g.mat().array();
      ga.mat().array() = gm - out.mat().array().exp().colwise() * gm.rowwise().sum();
      t.accumulate(a, ga);
    });
    return v;
  }

  Var sum(Var a) {
    double s = 0.0;
    for (double x : value(a).values()) s += x;
    return custom({a}, Tensor({1, 1}, std::vector<double>{s}), [a](Tape& t, const Tensor& g) {
      t.accumulate(a, Tensor(t.value(a).shape(), g[0]));
    });
  }

  // Runs reverse accumulation from a scalar root with seed 1, then adds every
  // parameter node's gradient into its Parameter::grad.
  void backward(Var root) {
    if (value(root).size() != 1) throw ShapeError("backward root must be a scalar");
    accumulate(root, Tensor(value(root).shape(), 1.0));
    for (std::size_t id = root.id + 1; id-- > 0;) {
      Node& n = nodes_[id];
      if (n.grad.empty()) continue;
      if (n.backward) n.backward(*this, n.grad);
      if (n.param) {
        auto& pg = n.param->grad;
        for (std::size_t i = 0; i < pg.size(); ++i) pg[i] += n.grad[i];
      }
    }
  }

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    BackwardFn backward;
    Parameter* param = nullptr;
    bool requires_grad = false;
  };

  Var push(Tensor value, BackwardFn fn, bool requires_grad) {
    nodes_.push_back(Node{std::move(value), Tensor(), std::move(fn), nullptr, requires_grad});
    return Var{nodes_.size() - 1};
  }

  void set_backward(Var v, BackwardFn fn) {
    if (nodes_[v.id].requires_grad) nodes_[v.id].backward = std::move(fn);
  }

  std::vector<Node> nodes_;
};

}  // namespace hmctc
