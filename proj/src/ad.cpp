#include "stanet/ad.hpp"

#include "stanet/fft.hpp"
#include "stanet/stfa.hpp"

#include <cmath>
#include <utility>

namespace stanet::ad {

namespace {

void require(bool ok, const char* what) {
  if (!ok) throw ValidationError(what);
}

Matrix sigmoid_of(const Matrix& m) {
  return (1.0 / (1.0 + (-m.array()).exp())).matrix();
}

}  // namespace

Tape::Node& Tape::at(Ref r) {
  require(r.valid() && r.index() < nodes_.size(), "tape ref: invalid or foreign handle");
  return nodes_[r.index()];
}

const Tape::Node& Tape::at(Ref r) const {
  require(r.valid() && r.index() < nodes_.size(), "tape ref: invalid or foreign handle");
  return nodes_[r.index()];
}

Ref Tape::push(Matrix value, bool needs_grad, std::function<void()> back) {
  Node n;
  n.value = std::move(value);
  n.grad = Matrix::Zero(n.value.rows(), n.value.cols());
  n.back = needs_grad ? std::move(back) : nullptr;
  n.needs_grad = needs_grad;
  nodes_.push_back(std::move(n));
  return Ref(nodes_.size() - 1);
}

Ref Tape::constant(Matrix value) { return push(std::move(value), false, nullptr); }

Ref Tape::param(Matrix value) { return push(std::move(value), true, nullptr); }

const Matrix& Tape::grad(Ref r) const {
  const Node& n = at(r);
  require(n.needs_grad, "tape grad: node does not carry a gradient");
  return n.grad;
}

void Tape::backward(Ref root) {
  Node& r = at(root);
  require(r.value.rows() == 1 && r.value.cols() == 1, "backward: root must be 1x1");
  require(r.needs_grad, "backward: root does not depend on any parameter");
  r.grad(0, 0) = 1.0;
  for (std::size_t i = root.index() + 1; i-- > 0;) {
    if (nodes_[i].back) nodes_[i].back();
  }
}

Ref Tape::add(Ref a, Ref b) {
  Node& na = at(a);
  Node& nb = at(b);
  require(na.value.rows() == nb.value.rows() && na.value.cols() == nb.value.cols(),
          "add: shape mismatch");
  const bool ng = na.needs_grad || nb.needs_grad;
  Ref out = push(na.value + nb.value, ng, nullptr);
  Node* no = &nodes_[out.index()];
  Node* pa = &na;
  Node* pb = &nb;
  if (ng) {
    no->back = [no, pa, pb] {
      if (pa->needs_grad) pa->grad += no->grad;
      if (pb->needs_grad) pb->grad += no->grad;
    };
  }
  return out;
}

Ref Tape::sub(Ref a, Ref b) {
  Node& na = at(a);
  Node& nb = at(b);
  require(na.value.rows() == nb.value.rows() && na.value.cols() == nb.value.cols(),
          "sub: shape mismatch");
  const bool ng = na.needs_grad || nb.needs_grad;
  Ref out = push(na.value - nb.value, ng, nullptr);
  Node* no = &nodes_[out.index()];
  Node* pa = &na;
  Node* pb = &nb;
  if (ng) {
    no->back = [no, pa, pb] {
      if (pa->needs_grad) pa->grad += no->grad;
      if (pb->needs_grad) pb->grad -= no->grad;
    };
  }
  return out;
}

Ref Tape::hadamard(Ref a, Ref b) {
  Node& na = at(a);
  Node& nb = at(b);
  require(na.value.rows() == nb.value.rows() && na.value.cols() == nb.value.cols(),
          "hadamard: shape mismatch");
  const bool ng = na.needs_grad || nb.needs_grad;
  Ref out = push(na.value.cwiseProduct(nb.value), ng, nullptr);
  Node* no = &nodes_[out.index()];
  Node* pa = &na;
  Node* pb = &nb;
  if (ng) {
    no->back = [no, pa, pb] {
      if (pa->needs_grad) pa->grad += no->grad.cwiseProduct(pb->value);
      if (pb->needs_grad) pb->grad += no->grad.cwiseProduct(pa->value);
    };
  }
  return out;
}

Ref Tape::matmul(Ref a, Ref b) {
  Node& na = at(a);
  Node& nb = at(b);
  require(na.value.cols() == nb.value.rows(), "matmul: inner dimension mismatch");
  const bool ng = na.needs_grad || nb.needs_grad;
  Ref out = push(na.value * nb.value, ng, nullptr);
  Node* no = &nodes_[out.index()];
  Node* pa = &na;
  Node* pb = &nb;
  if (ng) {
    no->back = [no, pa, pb] {
      if (pa->needs_grad) pa->grad.noalias() += no->grad * pb->value.transpose();
      if (pb->needs_grad) pb->grad.noalias() += pa->value.transpose() * no->grad;
    };
  }
  return out;
}

Ref Tape::scale(Ref a, double s) {
  Node& na = at(a);
  Ref out = push(s * na.value, na.needs_grad, nullptr);
  Node* no = &nodes_[out.index()];
  Node* pa = &na;
  if (na.needs_grad) {
    no->back = [no, pa, s] { pa->grad += s * no->grad; };
  }
  return out;
}

Ref Tape::sigmoid(Ref a) {
  Node& na = at(a);
  Ref out = push(sigmoid_of(na.value), na.needs_grad, nullptr);
  Node* no = &nodes_[out.index()];
  Node* pa = &na;
  if (na.needs_grad) {
    no->back = [no, pa] {
      pa->grad.array() += no->grad.array() * no->value.array() * (1.0 - no->value.array());
    };
  }
  return out;
}

Ref Tape::tanh(Ref a) {
  Node& na = at(a);
  Ref out = push(na.value.array().tanh().matrix(), na.needs_grad, nullptr);
  Node* no = &nodes_[out.index()];
  Node* pa = &na;
  if (na.needs_grad) {
    no->back = [no, pa] {
      pa->grad.array() += no->grad.array() * (1.0 - no->value.array().square());
    };
  }
  return out;
}

Ref Tape::relu(Ref a) {
  Node& na = at(a);
  Ref out = push(na.value.cwiseMax(0.0), na.needs_grad, nullptr);
  Node* no = &nodes_[out.index()];
  Node* pa = &na;
  if (na.needs_grad) {
    no->back = [no, pa] {
      pa->grad.array() +=
          no->grad.array() * (pa->value.array() > 0.0).cast<double>();
    };
  }
  return out;
}

Ref Tape::conv2d_same(const Matrix& input, Ref kernel, Ref bias) {
  Node& nk = at(kernel);
  Node& nb = at(bias);
  require(nb.value.rows() == 1 && nb.value.cols() == 1, "conv2d_same: bias must be 1x1");
  const bool ng = nk.needs_grad || nb.needs_grad;
  Ref out = push(stfa::conv2d_same(input, nk.value, nb.value(0, 0)), ng, nullptr);
  Node* no = &nodes_[out.index()];
  Node* pk = &nk;
  Node* pb = &nb;
  if (ng) {
    no->back = [no, pk, pb, in = input] {
      const Eigen::Index h = in.rows(), w = in.cols();
      const Eigen::Index n = pk->value.rows(), c = n / 2;
      if (pk->needs_grad) {
        for (Eigen::Index a = 0; a < n; ++a) {
          for (Eigen::Index b = 0; b < n; ++b) {
            const Eigen::Index dr = a - c, dc = b - c;
            const Eigen::Index r0 = std::max<Eigen::Index>(0, -dr);
            const Eigen::Index r1 = std::min<Eigen::Index>(h, h - dr);
            const Eigen::Index c0 = std::max<Eigen::Index>(0, -dc);
            const Eigen::Index c1 = std::min<Eigen::Index>(w, w - dc);
            if (r0 >= r1 || c0 >= c1) continue;
            pk->grad(a, b) += no->grad.block(r0, c0, r1 - r0, c1 - c0)
                                  .cwiseProduct(in.block(r0 + dr, c0 + dc, r1 - r0, c1 - c0))
                                  .sum();
          }
        }
      }
      if (pb->needs_grad) pb->grad(0, 0) += no->grad.sum();
    };
  }
  return out;
}

Ref Tape::maxpool(Ref a, int window_rows, int window_cols) {
  Node& na = at(a);
  stfa::PoolResult pr = stfa::maxpool_argmax(na.value, window_rows, window_cols);
  Ref out = push(std::move(pr.pooled), na.needs_grad, nullptr);
  Node* no = &nodes_[out.index()];
  Node* pa = &na;
  if (na.needs_grad) {
    no->back = [no, pa, arg = std::move(pr.argmax)] {
      const Eigen::Index w = pa->value.cols();
      Eigen::Index cell = 0;
      for (Eigen::Index i = 0; i < no->grad.rows(); ++i) {
        for (Eigen::Index j = 0; j < no->grad.cols(); ++j, ++cell) {
          pa->grad(arg[cell] / w, arg[cell] % w) += no->grad(i, j);
        }
      }
    };
  }
  return out;
}

Ref Tape::real_fft(Ref a) {
  Node& na = at(a);
  require(na.value.cols() == 1, "real_fft: expected a column vector");
  Ref out = push(fft::real_fft(na.value.col(0)), na.needs_grad, nullptr);
  Node* no = &nodes_[out.index()];
  Node* pa = &na;
  if (na.needs_grad) {
    no->back = [no, pa] { pa->grad += fft::real_fft(no->grad.col(0)); };
  }
  return out;
}

Ref Tape::vstack(Ref a, Ref b) {
  Node& na = at(a);
  Node& nb = at(b);
  require(na.value.cols() == nb.value.cols(), "vstack: column mismatch");
  Matrix v(na.value.rows() + nb.value.rows(), na.value.cols());
  v.topRows(na.value.rows()) = na.value;
  v.bottomRows(nb.value.rows()) = nb.value;
  const bool ng = na.needs_grad || nb.needs_grad;
  Ref out = push(std::move(v), ng, nullptr);
  Node* no = &nodes_[out.index()];
  Node* pa = &na;
  Node* pb = &nb;
  if (ng) {
    no->back = [no, pa, pb] {
      if (pa->needs_grad) pa->grad += no->grad.topRows(pa->value.rows());
      if (pb->needs_grad) pb->grad += no->grad.bottomRows(pb->value.rows());
    };
  }
  return out;
}

Ref Tape::hstack(const std::vector<Ref>& parts) {
  require(!parts.empty(), "hstack: no parts");
  Eigen::Index rows = at(parts[0]).value.rows();
  Eigen::Index cols = 0;
  bool ng = false;
  for (Ref r : parts) {
    const Node& n = at(r);
    require(n.value.rows() == rows, "hstack: row mismatch");
    cols += n.value.cols();
    ng = ng || n.needs_grad;
  }
  Matrix v(rows, cols);
  Eigen::Index off = 0;
  std::vector<Node*> srcs;
  srcs.reserve(parts.size());
  for (Ref r : parts) {
    Node& n = at(r);
    v.middleCols(off, n.value.cols()) = n.value;
    off += n.value.cols();
    srcs.push_back(&n);
  }
  Ref out = push(std::move(v), ng, nullptr);
  Node* no = &nodes_[out.index()];
  if (ng) {
    no->back = [no, srcs = std::move(srcs)] {
      Eigen::Index off = 0;
      for (Node* s : srcs) {
        if (s->needs_grad) s->grad += no->grad.middleCols(off, s->value.cols());
        off += s->value.cols();
      }
    };
  }
  return out;
}

Ref Tape::stack_scalars(const std::vector<Ref>& scalars) {
  require(!scalars.empty(), "stack_scalars: no parts");
  Matrix v(static_cast<Eigen::Index>(scalars.size()), 1);
  bool ng = false;
  std::vector<Node*> srcs;
  srcs.reserve(scalars.size());
  for (std::size_t i = 0; i < scalars.size(); ++i) {
    Node& n = at(scalars[i]);
    require(n.value.rows() == 1 && n.value.cols() == 1, "stack_scalars: parts must be 1x1");
    v(static_cast<Eigen::Index>(i), 0) = n.value(0, 0);
    ng = ng || n.needs_grad;
    srcs.push_back(&n);
  }
  Ref out = push(std::move(v), ng, nullptr);
  Node* no = &nodes_[out.index()];
  if (ng) {
    no->back = [no, srcs = std::move(srcs)] {
      for (std::size_t i = 0; i < srcs.size(); ++i) {
        if (srcs[i]->needs_grad)
          srcs[i]->grad(0, 0) += no->grad(static_cast<Eigen::Index>(i), 0);
      }
    };
  }
  return out;
}

Ref Tape::softmax(Ref a) {
  Node& na = at(a);
  require(na.value.cols() == 1, "softmax: expected a column vector");
  Eigen::ArrayXd e = (na.value.col(0).array() - na.value.col(0).maxCoeff()).exp();
  Matrix y = (e / e.sum()).matrix();
  Ref out = push(std::move(y), na.needs_grad, nullptr);
  Node* no = &nodes_[out.index()];
  Node* pa = &na;
  if (na.needs_grad) {
    no->back = [no, pa] {
      const double dot = no->grad.col(0).dot(no->value.col(0));
      pa->grad.col(0).array() +=
          no->value.col(0).array() * (no->grad.col(0).array() - dot);
    };
  }
  return out;
}

Ref Tape::row_as_col(Ref a, Eigen::Index i) {
  Node& na = at(a);
  require(i >= 0 && i < na.value.rows(), "row_as_col: row out of range");
  Ref out = push(na.value.row(i).transpose(), na.needs_grad, nullptr);
  Node* no = &nodes_[out.index()];
  Node* pa = &na;
  if (na.needs_grad) {
    no->back = [no, pa, i] { pa->grad.row(i) += no->grad.col(0).transpose(); };
  }
  return out;
}

Ref Tape::flatten_to_row(Ref a) {
  Node& na = at(a);
  const Eigen::Index h = na.value.rows(), w = na.value.cols();
  Matrix v(1, h * w);
  for (Eigen::Index r = 0; r < h; ++r) v.middleCols(r * w, w) = na.value.row(r);
  Ref out = push(std::move(v), na.needs_grad, nullptr);
  Node* no = &nodes_[out.index()];
  Node* pa = &na;
  if (na.needs_grad) {
    no->back = [no, pa, h, w] {
      for (Eigen::Index r = 0; r < h; ++r) pa->grad.row(r) += no->grad.middleCols(r * w, w);
    };
  }
  return out;
}

Ref Tape::broadcast_rows(Ref row, Eigen::Index copies) {
  Node& na = at(row);
  require(na.value.rows() == 1, "broadcast_rows: expected a single row");
  require(copies >= 1, "broadcast_rows: copies must be positive");
  Ref out = push(na.value.replicate(copies, 1), na.needs_grad, nullptr);
  Node* no = &nodes_[out.index()];
  Node* pa = &na;
  if (na.needs_grad) {
    no->back = [no, pa] { pa->grad += no->grad.colwise().sum(); };
  }
  return out;
}

Ref Tape::squared_error(Ref pred, double target) {
  Node& np = at(pred);
  require(np.value.rows() == 1 && np.value.cols() == 1, "squared_error: pred must be 1x1");
  const double d = np.value(0, 0) - target;
  Ref out = push(Matrix::Constant(1, 1, d * d), np.needs_grad, nullptr);
  Node* no = &nodes_[out.index()];
  Node* pp = &np;
  if (np.needs_grad) {
    no->back = [no, pp, d] { pp->grad(0, 0) += 2.0 * d * no->grad(0, 0); };
  }
  return out;
}

Ref Tape::mean_scalars(const std::vector<Ref>& scalars) {
  require(!scalars.empty(), "mean_scalars: no parts");
  double sum = 0.0;
  bool ng = false;
  std::vector<Node*> srcs;
  srcs.reserve(scalars.size());
  for (Ref r : scalars) {
    Node& n = at(r);
    require(n.value.rows() == 1 && n.value.cols() == 1, "mean_scalars: parts must be 1x1");
    sum += n.value(0, 0);
    ng = ng || n.needs_grad;
    srcs.push_back(&n);
  }
  const double k = static_cast<double>(scalars.size());
  Ref out = push(Matrix::Constant(1, 1, sum / k), ng, nullptr);
  Node* no = &nodes_[out.index()];
  if (ng) {
    no->back = [no, srcs = std::move(srcs), k] {
      for (Node* s : srcs) {
        if (s->needs_grad) s->grad(0, 0) += no->grad(0, 0) / k;
      }
    };
  }
  return out;
}

Ref Tape::fgru_step(Ref h_prev, Ref x, Ref w_z, Ref w_r, Ref w, Ref b_z, Ref b_r, Ref b_h) {
  Node& nh = at(h_prev);
  Node& nx = at(x);
  Node& nwz = at(w_z);
  Node& nwr = at(w_r);
  Node& nw = at(w);
  Node& nbz = at(b_z);
  Node& nbr = at(b_r);
  Node& nbh = at(b_h);
  const Eigen::Index hidden = nh.value.rows();
  const Eigen::Index in = nx.value.rows();
  require(nh.value.cols() == 1 && nx.value.cols() == 1, "fgru_step: vector inputs expected");
  for (const Node* g : {&nwz, &nwr, &nw}) {
    require(g->value.rows() == hidden && g->value.cols() == hidden + in,
            "fgru_step: gate matrix shape mismatch");
  }
  for (const Node* b : {&nbz, &nbr, &nbh}) {
    require(b->value.rows() == hidden && b->value.cols() == 1,
            "fgru_step: gate bias shape mismatch");
  }

  Matrix u(hidden + in, 1);
  u.topRows(hidden) = nh.value;
  u.bottomRows(in) = nx.value;
  Matrix z = sigmoid_of(nwz.value * u + nbz.value);
  Matrix r = sigmoid_of(nwr.value * u + nbr.value);
  Matrix v(hidden + in, 1);
  v.topRows(hidden) = r.cwiseProduct(nh.value);
  v.bottomRows(in) = nx.value;
  Matrix c = (nw.value * v + nbh.value).array().tanh().matrix();
  Matrix out_h = (1.0 - z.array()).matrix().cwiseProduct(nh.value) + z.cwiseProduct(c);

  const bool ng = nh.needs_grad || nx.needs_grad || nwz.needs_grad || nwr.needs_grad ||
                  nw.needs_grad || nbz.needs_grad || nbr.needs_grad || nbh.needs_grad;
  Ref out = push(std::move(out_h), ng, nullptr);
  Node* no = &nodes_[out.index()];
  if (ng) {
    no->back = [no, ph = &nh, px = &nx, pwz = &nwz, pwr = &nwr, pw = &nw, pbz = &nbz,
                pbr = &nbr, pbh = &nbh, u = std::move(u), v = std::move(v), z = std::move(z),
                r = std::move(r), c = std::move(c), hidden, in] {
      const Matrix& g = no->grad;
      // out = (1-z)*h + z*c
      const Matrix gz = g.cwiseProduct(c - ph->value);
      const Matrix gc = g.cwiseProduct(z);
      if (ph->needs_grad) ph->grad += g.cwiseProduct((1.0 - z.array()).matrix());

      // c = tanh(W v + b_h)
      const Matrix dc = gc.cwiseProduct((1.0 - c.array().square()).matrix());
      if (pw->needs_grad) pw->grad.noalias() += dc * v.transpose();
      if (pbh->needs_grad) pbh->grad += dc;
      const Matrix gv = pw->value.transpose() * dc;
      const Matrix gr = gv.topRows(hidden).cwiseProduct(ph->value);
      if (ph->needs_grad) ph->grad += gv.topRows(hidden).cwiseProduct(r);
      if (px->needs_grad) px->grad += gv.bottomRows(in);

      // z and r gates share the concatenated input u = [h, x]
      const Matrix dz = gz.cwiseProduct(z.cwiseProduct((1.0 - z.array()).matrix()));
      const Matrix dr = gr.cwiseProduct(r.cwiseProduct((1.0 - r.array()).matrix()));
      if (pwz->needs_grad) pwz->grad.noalias() += dz * u.transpose();
      if (pbz->needs_grad) pbz->grad += dz;
      if (pwr->needs_grad) pwr->grad.noalias() += dr * u.transpose();
      if (pbr->needs_grad) pbr->grad += dr;
      if (ph->needs_grad || px->needs_grad) {
        Matrix gu = pwz->value.transpose() * dz;
        gu.noalias() += pwr->value.transpose() * dr;
        if (ph->needs_grad) ph->grad += gu.topRows(hidden);
        if (px->needs_grad) px->grad += gu.bottomRows(in);
      }
    };
  }
  return out;
}

Ref Tape::attn_score(Ref p, Ref q, Ref h) {
  Node& np = at(p);
  Node& nq = at(q);
  Node& nh = at(h);
  const Eigen::Index hidden = nh.value.rows();
  require(nh.value.cols() == 1, "attn_score: h must be a column vector");
  require(np.value.rows() == hidden && np.value.cols() == hidden,
          "attn_score: projection shape mismatch");
  require(nq.value.rows() == 1 && nq.value.cols() == hidden,
          "attn_score: query shape mismatch");

  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(hidden));
  Matrix th = (np.value * nh.value).array().tanh().matrix();
  const double s = (nq.value * th)(0, 0) * inv_sqrt;

  const bool ng = np.needs_grad || nq.needs_grad || nh.needs_grad;
  Ref out = push(Matrix::Constant(1, 1, s), ng, nullptr);
  Node* no = &nodes_[out.index()];
  if (ng) {
    no->back = [no, pp = &np, pq = &nq, ph = &nh, th = std::move(th), inv_sqrt] {
      const double gs = no->grad(0, 0) * inv_sqrt;
      if (pq->needs_grad) pq->grad += gs * th.transpose();
      const Matrix gth = gs * pq->value.transpose();
      const Matrix gpre = gth.cwiseProduct((1.0 - th.array().square()).matrix());
      if (pp->needs_grad) pp->grad.noalias() += gpre * ph->value.transpose();
      if (ph->needs_grad) ph->grad.noalias() += pp->value.transpose() * gpre;
    };
  }
  return out;
}

}  // namespace stanet::ad
