#include "flowbridge/autodiff.hpp"

#include <cassert>
#include <cmath>
#include <stdexcept>
#include <utility>

namespace flowbridge::autodiff {

Graph::Id Graph::push(Matrix value, bool requires_grad, std::function<void(Graph&)> back) {
  Node n;
  n.value = std::move(value);
  n.requires_grad = requires_grad;
  if (requires_grad) n.back = std::move(back);
  nodes_.push_back(std::move(n));
  return static_cast<Id>(nodes_.size()) - 1;
}

void Graph::ensure_grad(Id id) {
  Node& n = nodes_[id];
  if (n.grad.empty() && !n.value.empty()) n.grad = Matrix::zeros(n.value.rows(), n.value.cols());
}

Graph::Id Graph::constant(Matrix v) { return push(std::move(v), false, {}); }

Graph::Id Graph::parameter(const std::vector<double>& flat, size_t offset, int rows, int cols) {
  const size_t count = static_cast<size_t>(rows) * cols;
  if (offset + count > flat.size()) throw std::invalid_argument("Graph::parameter: slice out of range");
  Matrix m(rows, cols, std::vector<double>(flat.begin() + offset, flat.begin() + offset + count));
  const Id id = push(std::move(m), true, {});
  params_.emplace_back(id, offset);
  return id;
}

Graph::Id Graph::matmul(Id a, Id b) {
  Matrix v = flowbridge::matmul(value(a), value(b));
  const bool rg = requires_grad(a) || requires_grad(b);
  Id out;
  out = push(std::move(v), rg, [a, b, out_id = static_cast<Id>(nodes_.size())](Graph& g) {
    const Matrix& go = g.nodes_[out_id].grad;
    if (g.requires_grad(a)) {
      g.ensure_grad(a);
      add_A_Bt(g.nodes_[a].grad, go, g.value(b));
    }
    if (g.requires_grad(b)) {
      g.ensure_grad(b);
      add_At_B(g.nodes_[b].grad, g.value(a), go);
    }
  });
  return out;
}

Graph::Id Graph::matmul_const_left(Matrix c, Id a) {
  Matrix v = flowbridge::matmul(c, value(a));
  const bool rg = requires_grad(a);
  return push(std::move(v), rg, [a, c = std::move(c), out_id = static_cast<Id>(nodes_.size())](Graph& g) {
    if (!g.requires_grad(a)) return;
    g.ensure_grad(a);
    add_At_B(g.nodes_[a].grad, c, g.nodes_[out_id].grad);
  });
}

Graph::Id Graph::add(Id a, Id b) {
  const Matrix& va = value(a);
  const Matrix& vb = value(b);
  assert(va.same_shape(vb));
  Matrix v = va;
  for (size_t i = 0; i < v.size(); ++i) v[i] += vb[i];
  const bool rg = requires_grad(a) || requires_grad(b);
  return push(std::move(v), rg, [a, b, out_id = static_cast<Id>(nodes_.size())](Graph& g) {
    const Matrix& go = g.nodes_[out_id].grad;
    for (Id p : {a, b}) {
      if (!g.requires_grad(p)) continue;
      g.ensure_grad(p);
      Matrix& gp = g.nodes_[p].grad;
      for (size_t i = 0; i < go.size(); ++i) gp[i] += go[i];
    }
  });
}

Graph::Id Graph::sub(Id a, Id b) {
  const Matrix& va = value(a);
  const Matrix& vb = value(b);
  assert(va.same_shape(vb));
  Matrix v = va;
  for (size_t i = 0; i < v.size(); ++i) v[i] -= vb[i];
  const bool rg = requires_grad(a) || requires_grad(b);
  return push(std::move(v), rg, [a, b, out_id = static_cast<Id>(nodes_.size())](Graph& g) {
    const Matrix& go = g.nodes_[out_id].grad;
    if (g.requires_grad(a)) {
      g.ensure_grad(a);
      Matrix& ga = g.nodes_[a].grad;
      for (size_t i = 0; i < go.size(); ++i) ga[i] += go[i];
    }
    if (g.requires_grad(b)) {
      g.ensure_grad(b);
      Matrix& gb = g.nodes_[b].grad;
      for (size_t i = 0; i < go.size(); ++i) gb[i] -= go[i];
    }
  });
}

Graph::Id Graph::mul(Id a, Id b) {
  const Matrix& va = value(a);
  const Matrix& vb = value(b);
  assert(va.same_shape(vb));
  Matrix v = va;
  for (size_t i = 0; i < v.size(); ++i) v[i] *= vb[i];
  const bool rg = requires_grad(a) || requires_grad(b);
  return push(std::move(v), rg, [a, b, out_id = static_cast<Id>(nodes_.size())](Graph& g) {
    const Matrix& go = g.nodes_[out_id].grad;
    if (g.requires_grad(a)) {
      g.ensure_grad(a);
      Matrix& ga = g.nodes_[a].grad;
      const Matrix& vb2 = g.value(b);
      for (size_t i = 0; i < go.size(); ++i) ga[i] += go[i] * vb2[i];
    }
    if (g.requires_grad(b)) {
      g.ensure_grad(b);
      Matrix& gb = g.nodes_[b].grad;
      const Matrix& va2 = g.value(a);
      for (size_t i = 0; i < go.size(); ++i) gb[i] += go[i] * va2[i];
    }
  });
}

Graph::Id Graph::add_col_broadcast(Id m, Id col) {
  const Matrix& vm = value(m);
  const Matrix& vc = value(col);
  assert(vc.cols() == 1 && vc.rows() == vm.rows());
  Matrix v = vm;
  for (int r = 0; r < v.rows(); ++r)
    for (int c = 0; c < v.cols(); ++c) v(r, c) += vc(r, 0);
  const bool rg = requires_grad(m) || requires_grad(col);
  return push(std::move(v), rg, [m, col, out_id = static_cast<Id>(nodes_.size())](Graph& g) {
    const Matrix& go = g.nodes_[out_id].grad;
    if (g.requires_grad(m)) {
      g.ensure_grad(m);
      Matrix& gm = g.nodes_[m].grad;
      for (size_t i = 0; i < go.size(); ++i) gm[i] += go[i];
    }
    if (g.requires_grad(col)) {
      g.ensure_grad(col);
      Matrix& gc = g.nodes_[col].grad;
      for (int r = 0; r < go.rows(); ++r) {
        double s = 0.0;
        for (int c = 0; c < go.cols(); ++c) s += go(r, c);
        gc(r, 0) += s;
      }
    }
  });
}

Graph::Id Graph::scale(Id a, double s) {
  Matrix v = value(a);
  for (size_t i = 0; i < v.size(); ++i) v[i] *= s;
  return push(std::move(v), requires_grad(a), [a, s, out_id = static_cast<Id>(nodes_.size())](Graph& g) {
    if (!g.requires_grad(a)) return;
    g.ensure_grad(a);
    const Matrix& go = g.nodes_[out_id].grad;
    Matrix& ga = g.nodes_[a].grad;
    for (size_t i = 0; i < go.size(); ++i) ga[i] += s * go[i];
  });
}

Graph::Id Graph::add_scalar(Id a, double s) {
  Matrix v = value(a);
  for (size_t i = 0; i < v.size(); ++i) v[i] += s;
  return push(std::move(v), requires_grad(a), [a, out_id = static_cast<Id>(nodes_.size())](Graph& g) {
    if (!g.requires_grad(a)) return;
    g.ensure_grad(a);
    const Matrix& go = g.nodes_[out_id].grad;
    Matrix& ga = g.nodes_[a].grad;
    for (size_t i = 0; i < go.size(); ++i) ga[i] += go[i];
  });
}

Graph::Id Graph::vstack(const std::vector<Id>& parts) {
  assert(!parts.empty());
  const int cols = value(parts[0]).cols();
  int rows = 0;
  bool rg = false;
  for (Id p : parts) {
    assert(value(p).cols() == cols);
    rows += value(p).rows();
    rg = rg || requires_grad(p);
  }
  Matrix v(rows, cols);
  int r0 = 0;
  for (Id p : parts) {
    const Matrix& vp = value(p);
    for (int r = 0; r < vp.rows(); ++r)
      for (int c = 0; c < cols; ++c) v(r0 + r, c) = vp(r, c);
    r0 += vp.rows();
  }
  return push(std::move(v), rg, [parts, out_id = static_cast<Id>(nodes_.size())](Graph& g) {
    const Matrix& go = g.nodes_[out_id].grad;
    int r0b = 0;
    for (Id p : parts) {
      const int pr = g.value(p).rows();
      if (g.requires_grad(p)) {
        g.ensure_grad(p);
        Matrix& gp = g.nodes_[p].grad;
        for (int r = 0; r < pr; ++r)
          for (int c = 0; c < go.cols(); ++c) gp(r, c) += go(r0b + r, c);
      }
      r0b += pr;
    }
  });
}

Graph::Id Graph::tanh_(Id a) {
  Matrix v = value(a);
  for (size_t i = 0; i < v.size(); ++i) v[i] = std::tanh(v[i]);
  return push(std::move(v), requires_grad(a), [a, out_id = static_cast<Id>(nodes_.size())](Graph& g) {
    if (!g.requires_grad(a)) return;
    g.ensure_grad(a);
    const Matrix& go = g.nodes_[out_id].grad;
    const Matrix& vo = g.nodes_[out_id].value;
    Matrix& ga = g.nodes_[a].grad;
    for (size_t i = 0; i < go.size(); ++i) ga[i] += go[i] * (1.0 - vo[i] * vo[i]);
  });
}

Graph::Id Graph::exp_(Id a) {
  Matrix v = value(a);
  for (size_t i = 0; i < v.size(); ++i) v[i] = std::exp(v[i]);
  return push(std::move(v), requires_grad(a), [a, out_id = static_cast<Id>(nodes_.size())](Graph& g) {
    if (!g.requires_grad(a)) return;
    g.ensure_grad(a);
    const Matrix& go = g.nodes_[out_id].grad;
    const Matrix& vo = g.nodes_[out_id].value;
    Matrix& ga = g.nodes_[a].grad;
    for (size_t i = 0; i < go.size(); ++i) ga[i] += go[i] * vo[i];
  });
}

Graph::Id Graph::log_floor(Id a, double eps) {
  const Matrix& va = value(a);
  Matrix v = va;
  for (size_t i = 0; i < v.size(); ++i) v[i] = std::log(v[i] > eps ? v[i] : eps);
  return push(std::move(v), requires_grad(a), [a, eps, out_id = static_cast<Id>(nodes_.size())](Graph& g) {
    if (!g.requires_grad(a)) return;
    g.ensure_grad(a);
    const Matrix& go = g.nodes_[out_id].grad;
    const Matrix& va2 = g.value(a);
    Matrix& ga = g.nodes_[a].grad;
    for (size_t i = 0; i < go.size(); ++i)
      if (va2[i] > eps) ga[i] += go[i] / va2[i];
  });
}

Graph::Id Graph::sigmoid_(Id a) {
  Matrix v = value(a);
  for (size_t i = 0; i < v.size(); ++i) v[i] = 1.0 / (1.0 + std::exp(-v[i]));
  return push(std::move(v), requires_grad(a), [a, out_id = static_cast<Id>(nodes_.size())](Graph& g) {
    if (!g.requires_grad(a)) return;
    g.ensure_grad(a);
    const Matrix& go = g.nodes_[out_id].grad;
    const Matrix& vo = g.nodes_[out_id].value;
    Matrix& ga = g.nodes_[a].grad;
    for (size_t i = 0; i < go.size(); ++i) ga[i] += go[i] * vo[i] * (1.0 - vo[i]);
  });
}

Graph::Id Graph::softplus_(Id a) {
  Matrix v = value(a);
  for (size_t i = 0; i < v.size(); ++i) v[i] = std::log1p(std::exp(-std::abs(v[i]))) + std::max(v[i], 0.0);
  return push(std::move(v), requires_grad(a), [a, out_id = static_cast<Id>(nodes_.size())](Graph& g) {
    if (!g.requires_grad(a)) return;
    g.ensure_grad(a);
    const Matrix& go = g.nodes_[out_id].grad;
    const Matrix& va2 = g.value(a);
    Matrix& ga = g.nodes_[a].grad;
    for (size_t i = 0; i < go.size(); ++i) ga[i] += go[i] / (1.0 + std::exp(-va2[i]));
  });
}

Graph::Id Graph::square(Id a) {
  const Matrix& va = value(a);
  Matrix v = va;
  for (size_t i = 0; i < v.size(); ++i) v[i] *= v[i];
  return push(std::move(v), requires_grad(a), [a, out_id = static_cast<Id>(nodes_.size())](Graph& g) {
    if (!g.requires_grad(a)) return;
    g.ensure_grad(a);
    const Matrix& go = g.nodes_[out_id].grad;
    const Matrix& va2 = g.value(a);
    Matrix& ga = g.nodes_[a].grad;
    for (size_t i = 0; i < go.size(); ++i) ga[i] += 2.0 * go[i] * va2[i];
  });
}

Graph::Id Graph::mul_const(Id a, Matrix c) {
  const Matrix& va = value(a);
  assert(va.same_shape(c));
  Matrix v = va;
  for (size_t i = 0; i < v.size(); ++i) v[i] *= c[i];
  return push(std::move(v), requires_grad(a),
              [a, c = std::move(c), out_id = static_cast<Id>(nodes_.size())](Graph& g) {
                if (!g.requires_grad(a)) return;
                g.ensure_grad(a);
                const Matrix& go = g.nodes_[out_id].grad;
                Matrix& ga = g.nodes_[a].grad;
                for (size_t i = 0; i < go.size(); ++i) ga[i] += go[i] * c[i];
              });
}

Graph::Id Graph::add_const(Id a, Matrix c) {
  const Matrix& va = value(a);
  assert(va.same_shape(c));
  Matrix v = va;
  for (size_t i = 0; i < v.size(); ++i) v[i] += c[i];
  return push(std::move(v), requires_grad(a), [a, out_id = static_cast<Id>(nodes_.size())](Graph& g) {
    if (!g.requires_grad(a)) return;
    g.ensure_grad(a);
    const Matrix& go = g.nodes_[out_id].grad;
    Matrix& ga = g.nodes_[a].grad;
    for (size_t i = 0; i < go.size(); ++i) ga[i] += go[i];
  });
}

Graph::Id Graph::gather_cols(Id a, std::vector<int> idx) {
  const Matrix& va = value(a);
  Matrix v(va.rows(), static_cast<int>(idx.size()));
  for (size_t p = 0; p < idx.size(); ++p)
    for (int r = 0; r < va.rows(); ++r) v(r, static_cast<int>(p)) = va(r, idx[p]);
  return push(std::move(v), requires_grad(a),
              [a, idx = std::move(idx), out_id = static_cast<Id>(nodes_.size())](Graph& g) {
                if (!g.requires_grad(a)) return;
                g.ensure_grad(a);
                const Matrix& go = g.nodes_[out_id].grad;
                Matrix& ga = g.nodes_[a].grad;
                for (size_t p = 0; p < idx.size(); ++p)
                  for (int r = 0; r < go.rows(); ++r) ga(r, idx[p]) += go(r, static_cast<int>(p));
              });
}

Graph::Id Graph::scatter_add_cols(Id a, std::vector<int> dest, int out_cols) {
  const Matrix& va = value(a);
  assert(static_cast<size_t>(va.cols()) == dest.size());
  Matrix v(va.rows(), out_cols);
  for (size_t p = 0; p < dest.size(); ++p)
    for (int r = 0; r < va.rows(); ++r) v(r, dest[p]) += va(r, static_cast<int>(p));
  return push(std::move(v), requires_grad(a),
              [a, dest = std::move(dest), out_id = static_cast<Id>(nodes_.size())](Graph& g) {
                if (!g.requires_grad(a)) return;
                g.ensure_grad(a);
                const Matrix& go = g.nodes_[out_id].grad;
                Matrix& ga = g.nodes_[a].grad;
                for (size_t p = 0; p < dest.size(); ++p)
                  for (int r = 0; r < go.rows(); ++r) ga(r, static_cast<int>(p)) += go(r, dest[p]);
              });
}

Graph::Id Graph::weighted_sum_cols(Id weights, Matrix directions, std::vector<int> dest, int out_cols) {
  const Matrix& w = value(weights);
  assert(w.rows() == 1 && w.cols() == directions.cols());
  assert(static_cast<size_t>(directions.cols()) == dest.size());
  Matrix v(directions.rows(), out_cols);
  for (size_t p = 0; p < dest.size(); ++p)
    for (int r = 0; r < directions.rows(); ++r)
      v(r, dest[p]) += w(0, static_cast<int>(p)) * directions(r, static_cast<int>(p));
  return push(std::move(v), requires_grad(weights),
              [weights, directions = std::move(directions), dest = std::move(dest),
               out_id = static_cast<Id>(nodes_.size())](Graph& g) {
                if (!g.requires_grad(weights)) return;
                g.ensure_grad(weights);
                const Matrix& go = g.nodes_[out_id].grad;
                Matrix& gw = g.nodes_[weights].grad;
                for (size_t p = 0; p < dest.size(); ++p) {
                  double s = 0.0;
                  for (int r = 0; r < go.rows(); ++r)
                    s += go(r, dest[p]) * directions(r, static_cast<int>(p));
                  gw(0, static_cast<int>(p)) += s;
                }
              });
}

Graph::Id Graph::sum(Id a) {
  const Matrix& va = value(a);
  double s = 0.0;
  for (size_t i = 0; i < va.size(); ++i) s += va[i];
  return push(Matrix::scalar(s), requires_grad(a), [a, out_id = static_cast<Id>(nodes_.size())](Graph& g) {
    if (!g.requires_grad(a)) return;
    g.ensure_grad(a);
    const double go = g.nodes_[out_id].grad[0];
    Matrix& ga = g.nodes_[a].grad;
    for (size_t i = 0; i < ga.size(); ++i) ga[i] += go;
  });
}

Graph::Id Graph::colwise_sum(Id a) {
  const Matrix& va = value(a);
  Matrix v(1, va.cols());
  for (int r = 0; r < va.rows(); ++r)
    for (int c = 0; c < va.cols(); ++c) v(0, c) += va(r, c);
  return push(std::move(v), requires_grad(a), [a, out_id = static_cast<Id>(nodes_.size())](Graph& g) {
    if (!g.requires_grad(a)) return;
    g.ensure_grad(a);
    const Matrix& go = g.nodes_[out_id].grad;
    Matrix& ga = g.nodes_[a].grad;
    for (int r = 0; r < ga.rows(); ++r)
      for (int c = 0; c < ga.cols(); ++c) ga(r, c) += go(0, c);
  });
}

Graph::Id Graph::mean_all(Id a) {
  const Matrix& va = value(a);
  const double inv = va.size() ? 1.0 / static_cast<double>(va.size()) : 0.0;
  return scale(sum(a), inv);
}

Graph::Id Graph::dot_const(Id a, Matrix c) {
  const Matrix& va = value(a);
  assert(va.same_shape(c));
  double s = 0.0;
  for (size_t i = 0; i < va.size(); ++i) s += va[i] * c[i];
  return push(Matrix::scalar(s), requires_grad(a),
              [a, c = std::move(c), out_id = static_cast<Id>(nodes_.size())](Graph& g) {
                if (!g.requires_grad(a)) return;
                g.ensure_grad(a);
                const double go = g.nodes_[out_id].grad[0];
                Matrix& ga = g.nodes_[a].grad;
                for (size_t i = 0; i < ga.size(); ++i) ga[i] += go * c[i];
              });
}

Graph::Id Graph::softmax_cols(Id a) {
  const Matrix& va = value(a);
  Matrix v = va;
  for (int c = 0; c < v.cols(); ++c) {
    double mx = v(0, c);
    for (int r = 1; r < v.rows(); ++r) mx = std::max(mx, v(r, c));
    double z = 0.0;
    for (int r = 0; r < v.rows(); ++r) {
      v(r, c) = std::exp(v(r, c) - mx);
      z += v(r, c);
    }
    for (int r = 0; r < v.rows(); ++r) v(r, c) /= z;
  }
  return push(std::move(v), requires_grad(a), [a, out_id = static_cast<Id>(nodes_.size())](Graph& g) {
    if (!g.requires_grad(a)) return;
    g.ensure_grad(a);
    const Matrix& go = g.nodes_[out_id].grad;
    const Matrix& vo = g.nodes_[out_id].value;
    Matrix& ga = g.nodes_[a].grad;
    for (int c = 0; c < go.cols(); ++c) {
      double inner = 0.0;
      for (int r = 0; r < go.rows(); ++r) inner += go(r, c) * vo(r, c);
      for (int r = 0; r < go.rows(); ++r) ga(r, c) += vo(r, c) * (go(r, c) - inner);
    }
  });
}

void Graph::backward(Id root) {
  if (root < 0 || static_cast<size_t>(root) >= nodes_.size())
    throw std::invalid_argument("Graph::backward: bad root");
  if (nodes_[root].value.size() != 1) throw std::invalid_argument("Graph::backward: root must be scalar");
  ensure_grad(root);
  nodes_[root].grad[0] = 1.0;
  for (Id id = root; id >= 0; --id) {
    Node& n = nodes_[id];
    if (!n.requires_grad || !n.back || n.grad.empty()) continue;
    n.back(*this);
  }
}

void Graph::accumulate_param_grads(std::vector<double>& grad) const {
  for (const auto& [id, offset] : params_) {
    const Node& n = nodes_[id];
    if (n.grad.empty()) continue;
    for (size_t i = 0; i < n.grad.size(); ++i) grad[offset + i] += n.grad[i];
  }
}

}  // namespace flowbridge::autodiff
