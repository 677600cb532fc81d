// Copyright 2026 The prosoflow Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "prosoflow/tensor.hpp"

#include <cmath>
#include <unordered_set>

#include "prosoflow/fft.hpp"

namespace prosoflow::ad {

namespace {

Var make_node(Mat val, std::vector<Var> parents,
              std::function<void(Node&)> backfn) {
  auto n = std::make_shared<Node>();
  n->val = std::move(val);
  n->parents = std::move(parents);
  for (const auto& p : n->parents)
    if (p->needs_grad) n->needs_grad = true;
  if (n->needs_grad) n->backfn = std::move(backfn);
  return n;
}

void check_same_shape(const Var& a, const Var& b, const char* op) {
  if (a->val.rows() != b->val.rows() || a->val.cols() != b->val.cols())
    throw std::invalid_argument(std::string(op) + ": shape mismatch");
}

using StridedMap = Eigen::Map<Mat, 0, Eigen::OuterStride<>>;
using ConstStridedMap = Eigen::Map<const Mat, 0, Eigen::OuterStride<>>;

}  // namespace

Var constant(Mat m) {
  auto n = std::make_shared<Node>();
  n->val = std::move(m);
  return n;
}

Var leaf(Mat m) {
  auto n = std::make_shared<Node>();
  n->val = std::move(m);
  n->needs_grad = true;
  return n;
}

void backward(const Var& root) {
  if (root->val.rows() != 1 || root->val.cols() != 1)
    throw std::invalid_argument("backward: root must be a scalar");
  // Iterative post-order over parents; reverse gives topological order.
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack;
  stack.emplace_back(root.get(), 0);
  seen.insert(root.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* p = node->parents[next++].get();
      if (p->needs_grad && !seen.count(p)) {
        seen.insert(p);
        stack.emplace_back(p, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  root->ensure_grad()(0, 0) = 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backfn && n->grad_ready) n->backfn(*n);
  }
}

// ---------------------------------------------------------------------------
// arithmetic
// ---------------------------------------------------------------------------

Var add(const Var& a, const Var& b) {
  check_same_shape(a, b, "add");
  return make_node(a->val + b->val, {a, b}, [a, b](Node& n) {
    if (a->needs_grad) a->ensure_grad() += n.grad;
    if (b->needs_grad) b->ensure_grad() += n.grad;
  });
}

Var sub(const Var& a, const Var& b) {
  check_same_shape(a, b, "sub");
  return make_node(a->val - b->val, {a, b}, [a, b](Node& n) {
    if (a->needs_grad) a->ensure_grad() += n.grad;
    if (b->needs_grad) b->ensure_grad() -= n.grad;
  });
}

Var cmul(const Var& a, const Var& b) {
  check_same_shape(a, b, "cmul");
  return make_node(a->val.cwiseProduct(b->val), {a, b}, [a, b](Node& n) {
    if (a->needs_grad) a->ensure_grad() += n.grad.cwiseProduct(b->val);
    if (b->needs_grad) b->ensure_grad() += n.grad.cwiseProduct(a->val);
  });
}

Var scale(const Var& a, double s) {
  return make_node(a->val * s, {a}, [a, s](Node& n) {
    if (a->needs_grad) a->ensure_grad() += n.grad * s;
  });
}

Var add_scalar(const Var& a, double s) {
  return make_node((a->val.array() + s).matrix(), {a}, [a](Node& n) {
    if (a->needs_grad) a->ensure_grad() += n.grad;
  });
}

Var matmul(const Var& a, const Var& b) {
  if (a->val.cols() != b->val.rows())
    throw std::invalid_argument("matmul: inner dimension mismatch");
  return make_node(a->val * b->val, {a, b}, [a, b](Node& n) {
    if (a->needs_grad) a->ensure_grad().noalias() += n.grad * b->val.transpose();
    if (b->needs_grad) b->ensure_grad().noalias() += a->val.transpose() * n.grad;
  });
}

Var matmul_tn(const Var& a, const Var& b) {
  if (a->val.rows() != b->val.rows())
    throw std::invalid_argument("matmul_tn: inner dimension mismatch");
  return make_node(a->val.transpose() * b->val, {a, b}, [a, b](Node& n) {
    if (a->needs_grad) a->ensure_grad().noalias() += b->val * n.grad.transpose();
    if (b->needs_grad) b->ensure_grad().noalias() += a->val * n.grad;
  });
}

Var matmul_nt(const Var& a, const Var& b) {
  if (a->val.cols() != b->val.cols())
    throw std::invalid_argument("matmul_nt: inner dimension mismatch");
  return make_node(a->val * b->val.transpose(), {a, b}, [a, b](Node& n) {
    if (a->needs_grad) a->ensure_grad().noalias() += n.grad * b->val;
    if (b->needs_grad) b->ensure_grad().noalias() += n.grad.transpose() * a->val;
  });
}

Var add_colvec(const Var& x, const Var& v) {
  if (v->val.cols() != 1 || v->val.rows() != x->val.rows())
    throw std::invalid_argument("add_colvec: v must be C x 1");
  return make_node(x->val.colwise() + Vec(v->val.col(0)), {x, v}, [x, v](Node& n) {
    if (x->needs_grad) x->ensure_grad() += n.grad;
    if (v->needs_grad) v->ensure_grad() += n.grad.rowwise().sum();
  });
}

Var mul_colvec(const Var& x, const Var& v) {
  if (v->val.cols() != 1 || v->val.rows() != x->val.rows())
    throw std::invalid_argument("mul_colvec: v must be C x 1");
  return make_node((x->val.array().colwise() * v->val.col(0).array()).matrix(),
                   {x, v}, [x, v](Node& n) {
    if (x->needs_grad)
      x->ensure_grad() +=
          (n.grad.array().colwise() * v->val.col(0).array()).matrix();
    if (v->needs_grad)
      v->ensure_grad() += n.grad.cwiseProduct(x->val).rowwise().sum();
  });
}

// ---------------------------------------------------------------------------
// shape
// ---------------------------------------------------------------------------

Var concat_rows(const std::vector<Var>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_rows: empty");
  const auto cols = parts[0]->val.cols();
  Eigen::Index rows = 0;
  for (const auto& p : parts) {
    if (p->val.cols() != cols)
      throw std::invalid_argument("concat_rows: column count mismatch");
    rows += p->val.rows();
  }
  Mat out(rows, cols);
  Eigen::Index r = 0;
  for (const auto& p : parts) {
    out.middleRows(r, p->val.rows()) = p->val;
    r += p->val.rows();
  }
  return make_node(std::move(out), parts, [parts](Node& n) {
    Eigen::Index r = 0;
    for (const auto& p : parts) {
      if (p->needs_grad)
        p->ensure_grad() += n.grad.middleRows(r, p->val.rows());
      r += p->val.rows();
    }
  });
}

Var concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_cols: empty");
  const auto rows = parts[0]->val.rows();
  Eigen::Index cols = 0;
  for (const auto& p : parts) {
    if (p->val.rows() != rows)
      throw std::invalid_argument("concat_cols: row count mismatch");
    cols += p->val.cols();
  }
  Mat out(rows, cols);
  Eigen::Index c = 0;
  for (const auto& p : parts) {
    out.middleCols(c, p->val.cols()) = p->val;
    c += p->val.cols();
  }
  return make_node(std::move(out), parts, [parts](Node& n) {
    Eigen::Index c = 0;
    for (const auto& p : parts) {
      if (p->needs_grad)
        p->ensure_grad() += n.grad.middleCols(c, p->val.cols());
      c += p->val.cols();
    }
  });
}

Var slice_rows(const Var& a, int r0, int n_rows) {
  if (r0 < 0 || r0 + n_rows > a->val.rows())
    throw std::invalid_argument("slice_rows: out of range");
  return make_node(a->val.middleRows(r0, n_rows), {a}, [a, r0, n_rows](Node& n) {
    if (a->needs_grad) a->ensure_grad().middleRows(r0, n_rows) += n.grad;
  });
}

Var slice_cols(const Var& a, int c0, int n_cols) {
  if (c0 < 0 || c0 + n_cols > a->val.cols())
    throw std::invalid_argument("slice_cols: out of range");
  return make_node(a->val.middleCols(c0, n_cols), {a}, [a, c0, n_cols](Node& n) {
    if (a->needs_grad) a->ensure_grad().middleCols(c0, n_cols) += n.grad;
  });
}

Var gather_cols(const Var& a, std::vector<int> idx) {
  Mat out(a->val.rows(), static_cast<Eigen::Index>(idx.size()));
  for (std::size_t j = 0; j < idx.size(); ++j) {
    if (idx[j] < 0 || idx[j] >= a->val.cols())
      throw std::invalid_argument("gather_cols: index out of range");
    out.col(static_cast<Eigen::Index>(j)) = a->val.col(idx[j]);
  }
  return make_node(std::move(out), {a}, [a, idx = std::move(idx)](Node& n) {
    if (!a->needs_grad) return;
    Mat& g = a->ensure_grad();
    for (std::size_t j = 0; j < idx.size(); ++j)
      g.col(idx[j]) += n.grad.col(static_cast<Eigen::Index>(j));
  });
}

Var segment_mean_cols(const Var& a, std::vector<std::pair<int, int>> spans) {
  Mat out = Mat::Zero(a->val.rows(), static_cast<Eigen::Index>(spans.size()));
  for (std::size_t j = 0; j < spans.size(); ++j) {
    const auto [s, e] = spans[j];
    if (s < 0 || e > a->val.cols() || s > e)
      throw std::invalid_argument("segment_mean_cols: bad span");
    if (e > s)
      out.col(static_cast<Eigen::Index>(j)) =
          a->val.middleCols(s, e - s).rowwise().mean();
  }
  return make_node(std::move(out), {a}, [a, spans = std::move(spans)](Node& n) {
    if (!a->needs_grad) return;
    Mat& g = a->ensure_grad();
    for (std::size_t j = 0; j < spans.size(); ++j) {
      const auto [s, e] = spans[j];
      if (e > s) {
        const double inv = 1.0 / (e - s);
        for (int c = s; c < e; ++c)
          g.col(c) += n.grad.col(static_cast<Eigen::Index>(j)) * inv;
      }
    }
  });
}

Var broadcast_col(const Var& v, int n_cols) {
  if (v->val.cols() != 1) throw std::invalid_argument("broadcast_col: not a column");
  return make_node(v->val.col(0).replicate(1, n_cols), {v}, [v](Node& n) {
    if (v->needs_grad) v->ensure_grad() += n.grad.rowwise().sum();
  });
}

Var diag_embed(const Var& v) {
  if (v->val.cols() != 1) throw std::invalid_argument("diag_embed: not a column");
  const auto n_dim = v->val.rows();
  Mat out = Mat::Zero(n_dim, n_dim);
  out.diagonal() = v->val.col(0);
  return make_node(std::move(out), {v}, [v](Node& n) {
    if (v->needs_grad) v->ensure_grad().col(0) += n.grad.diagonal();
  });
}

Var stop_grad(const Var& a) { return constant(a->val); }

Var spec_to_image(const Var& spec) {
  const int bins = static_cast<int>(spec->val.rows());
  const int frames = static_cast<int>(spec->val.cols());
  Mat out(1, static_cast<Eigen::Index>(frames) * bins);
  for (int f = 0; f < frames; ++f)
    for (int b = 0; b < bins; ++b)
      out(0, static_cast<Eigen::Index>(f) * bins + b) = spec->val(b, f);
  Var n = make_node(std::move(out), {spec}, [spec, bins, frames](Node& nd) {
    if (!spec->needs_grad) return;
    Mat& g = spec->ensure_grad();
    for (int f = 0; f < frames; ++f)
      for (int b = 0; b < bins; ++b)
        g(b, f) += nd.grad(0, static_cast<Eigen::Index>(f) * bins + b);
  });
  n->img_h = frames;
  n->img_w = bins;
  return n;
}

// ---------------------------------------------------------------------------
// reductions
// ---------------------------------------------------------------------------

Var sum_all(const Var& a) {
  Mat out(1, 1);
  out(0, 0) = a->val.sum();
  return make_node(std::move(out), {a}, [a](Node& n) {
    if (a->needs_grad) a->ensure_grad().array() += n.grad(0, 0);
  });
}

Var mean_all(const Var& a) {
  const double inv = 1.0 / static_cast<double>(a->val.size());
  Mat out(1, 1);
  out(0, 0) = a->val.sum() * inv;
  return make_node(std::move(out), {a}, [a, inv](Node& n) {
    if (a->needs_grad) a->ensure_grad().array() += n.grad(0, 0) * inv;
  });
}

Var mean_abs(const Var& a) {
  const double inv = 1.0 / static_cast<double>(a->val.size());
  Mat out(1, 1);
  out(0, 0) = a->val.array().abs().sum() * inv;
  return make_node(std::move(out), {a}, [a, inv](Node& n) {
    if (a->needs_grad)
      a->ensure_grad().array() +=
          n.grad(0, 0) * inv * a->val.array().sign();
  });
}

Var mean_sq(const Var& a) {
  const double inv = 1.0 / static_cast<double>(a->val.size());
  Mat out(1, 1);
  out(0, 0) = a->val.array().square().sum() * inv;
  return make_node(std::move(out), {a}, [a, inv](Node& n) {
    if (a->needs_grad)
      a->ensure_grad() += (2.0 * inv * n.grad(0, 0)) * a->val;
  });
}

// ---------------------------------------------------------------------------
// nonlinearities
// ---------------------------------------------------------------------------

Var tanh_v(const Var& a) {
  return make_node(a->val.array().tanh().matrix(), {a}, [a](Node& n) {
    if (a->needs_grad)
      a->ensure_grad().array() +=
          n.grad.array() * (1.0 - n.val.array().square());
  });
}

Var sigmoid_v(const Var& a) {
  Mat out = (1.0 / (1.0 + (-a->val.array()).exp())).matrix();
  return make_node(std::move(out), {a}, [a](Node& n) {
    if (a->needs_grad)
      a->ensure_grad().array() +=
          n.grad.array() * n.val.array() * (1.0 - n.val.array());
  });
}

Var exp_v(const Var& a) {
  return make_node(a->val.array().exp().matrix(), {a}, [a](Node& n) {
    if (a->needs_grad) a->ensure_grad().array() += n.grad.array() * n.val.array();
  });
}

Var log_v(const Var& a) {
  if ((a->val.array() <= 0.0).any())
    throw std::invalid_argument("log_v: non-positive input");
  return make_node(a->val.array().log().matrix(), {a}, [a](Node& n) {
    if (a->needs_grad)
      a->ensure_grad().array() += n.grad.array() / a->val.array();
  });
}

Var clamp_log(const Var& a, double floor) {
  Mat out = a->val.array().max(floor).log().matrix();
  return make_node(std::move(out), {a}, [a, floor](Node& n) {
    if (!a->needs_grad) return;
    a->ensure_grad().array() +=
        (a->val.array() > floor).cast<double>() * n.grad.array() /
        a->val.array().max(floor);
  });
}

Var leaky_relu(const Var& a, double slope) {
  Mat out = a->val.array().max(a->val.array() * slope).matrix();
  return make_node(std::move(out), {a}, [a, slope](Node& n) {
    if (!a->needs_grad) return;
    const auto mask =
        (a->val.array() > 0.0).cast<double>() * (1.0 - slope) + slope;
    a->ensure_grad().array() += n.grad.array() * mask;
  });
}

Var snake(const Var& x, const Var& alpha) {
  if (alpha->val.cols() != 1 || alpha->val.rows() != x->val.rows())
    throw std::invalid_argument("snake: alpha must be C x 1");
  const auto rows = x->val.rows();
  const auto cols = x->val.cols();
  Mat out(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    const double a = alpha->val(r, 0);
    for (Eigen::Index c = 0; c < cols; ++c) {
      const double s = std::sin(a * x->val(r, c));
      out(r, c) = x->val(r, c) + s * s / a;
    }
  }
  return make_node(std::move(out), {x, alpha}, [x, alpha](Node& n) {
    const auto rows = x->val.rows();
    const auto cols = x->val.cols();
    if (x->needs_grad) x->ensure_grad();
    for (Eigen::Index r = 0; r < rows; ++r) {
      const double a = alpha->val(r, 0);
      double da = 0.0;
      for (Eigen::Index c = 0; c < cols; ++c) {
        const double xv = x->val(r, c);
        const double g = n.grad(r, c);
        const double s2ax = std::sin(2.0 * a * xv);
        const double sax = std::sin(a * xv);
        if (x->needs_grad) x->grad(r, c) += g * (1.0 + s2ax);
        da += g * (xv * s2ax / a - sax * sax / (a * a));
      }
      if (alpha->needs_grad) alpha->ensure_grad()(r, 0) += da;
    }
  });
}

Var softmax_rows(const Var& a) {
  Mat out(a->val.rows(), a->val.cols());
  for (Eigen::Index r = 0; r < a->val.rows(); ++r) {
    const double mx = a->val.row(r).maxCoeff();
    Eigen::ArrayXd e = (a->val.row(r).array() - mx).exp();
    out.row(r) = (e / e.sum()).matrix();
  }
  return make_node(std::move(out), {a}, [a](Node& n) {
    if (!a->needs_grad) return;
    Mat& g = a->ensure_grad();
    for (Eigen::Index r = 0; r < n.val.rows(); ++r) {
      const double dot = n.grad.row(r).dot(n.val.row(r));
      g.row(r).array() +=
          n.val.row(r).array() * (n.grad.row(r).array() - dot);
    }
  });
}

Var layer_norm_cols(const Var& x, const Var& gamma, const Var& beta,
                    double eps) {
  const auto rows = x->val.rows();
  const auto cols = x->val.cols();
  if (gamma->val.rows() != rows || beta->val.rows() != rows)
    throw std::invalid_argument("layer_norm_cols: bad gain/bias shapes");
  Mat xhat(rows, cols);
  Vec inv_std(cols);
  for (Eigen::Index c = 0; c < cols; ++c) {
    const double mu = x->val.col(c).mean();
    const double var = (x->val.col(c).array() - mu).square().mean();
    inv_std(c) = 1.0 / std::sqrt(var + eps);
    xhat.col(c) = (x->val.col(c).array() - mu) * inv_std(c);
  }
  Mat out = ((xhat.array().colwise() * gamma->val.col(0).array()).colwise() +
             beta->val.col(0).array())
                .matrix();
  auto xhat_p = std::make_shared<Mat>(std::move(xhat));
  auto inv_p = std::make_shared<Vec>(std::move(inv_std));
  return make_node(std::move(out), {x, gamma, beta},
                   [x, gamma, beta, xhat_p, inv_p](Node& n) {
    const auto rows = x->val.rows();
    const auto cols = x->val.cols();
    if (gamma->needs_grad)
      gamma->ensure_grad().col(0) +=
          n.grad.cwiseProduct(*xhat_p).rowwise().sum();
    if (beta->needs_grad) beta->ensure_grad().col(0) += n.grad.rowwise().sum();
    if (!x->needs_grad) return;
    Mat& g = x->ensure_grad();
    const double inv_n = 1.0 / static_cast<double>(rows);
    for (Eigen::Index c = 0; c < cols; ++c) {
      Vec dy = n.grad.col(c).cwiseProduct(gamma->val.col(0));
      const double mean_dy = dy.mean();
      const double mean_dy_xhat = dy.dot(xhat_p->col(c)) * inv_n;
      g.col(c).array() += (*inv_p)(c) * (dy.array() - mean_dy -
                                         xhat_p->col(c).array() * mean_dy_xhat);
    }
  });
}

// ---------------------------------------------------------------------------
// convolutions
// ---------------------------------------------------------------------------

Var conv1d(const Var& x, const Var& weight, const Var& bias, int k, int stride,
           int pad, int dilation) {
  const int cin = static_cast<int>(x->val.rows());
  const int t_in = static_cast<int>(x->val.cols());
  if (weight->val.cols() != static_cast<Eigen::Index>(cin) * k)
    throw std::invalid_argument("conv1d: weight shape mismatch");
  const int span = (k - 1) * dilation + 1;
  const int t_out = (t_in + 2 * pad - span) / stride + 1;
  if (t_out <= 0) throw std::invalid_argument("conv1d: output would be empty");

  Mat xp = Mat::Zero(cin, t_in + 2 * pad);
  xp.middleCols(pad, t_in) = x->val;

  Mat out = bias->val.col(0).replicate(1, t_out);
  for (int kk = 0; kk < k; ++kk) {
    ConstStridedMap m(xp.data() + static_cast<std::ptrdiff_t>(kk) * dilation * cin,
                      cin, t_out, Eigen::OuterStride<>(stride * cin));
    out.noalias() += weight->val.middleCols(kk * cin, cin) * m;
  }
  return make_node(std::move(out), {x, weight, bias},
                   [x, weight, bias, k, stride, pad, dilation, cin, t_in,
                    t_out](Node& n) {
    if (bias->needs_grad) bias->ensure_grad().col(0) += n.grad.rowwise().sum();
    Mat xp = Mat::Zero(cin, t_in + 2 * pad);
    xp.middleCols(pad, t_in) = x->val;
    Mat dxp;
    if (x->needs_grad) dxp = Mat::Zero(cin, t_in + 2 * pad);
    for (int kk = 0; kk < k; ++kk) {
      const std::ptrdiff_t off = static_cast<std::ptrdiff_t>(kk) * dilation * cin;
      if (weight->needs_grad) {
        ConstStridedMap m(xp.data() + off, cin, t_out,
                          Eigen::OuterStride<>(stride * cin));
        weight->ensure_grad().middleCols(kk * cin, cin).noalias() +=
            n.grad * m.transpose();
      }
      if (x->needs_grad) {
        StridedMap dm(dxp.data() + off, cin, t_out,
                      Eigen::OuterStride<>(stride * cin));
        dm.noalias() +=
            weight->val.middleCols(kk * cin, cin).transpose() * n.grad;
      }
    }
    if (x->needs_grad) x->ensure_grad() += dxp.middleCols(pad, t_in);
  });
}

Var conv_transpose1d(const Var& x, const Var& weight, const Var& bias,
                     int rate) {
  if (rate < 2 || rate % 2 != 0)
    throw std::invalid_argument("conv_transpose1d: rate must be even");
  const int k = 2 * rate;
  const int pad = rate / 2;
  const int cin = static_cast<int>(x->val.rows());
  const int t_in = static_cast<int>(x->val.cols());
  const int cout = static_cast<int>(weight->val.rows());
  if (weight->val.cols() != static_cast<Eigen::Index>(cin) * k)
    throw std::invalid_argument("conv_transpose1d: weight shape mismatch");
  const int t_out = t_in * rate;

  Mat out = bias->val.col(0).replicate(1, t_out);
  for (int kk = 0; kk < k; ++kk) {
    const int off = kk - pad;  // output col = off + rate * t
    const int t_lo = off < 0 ? 1 : 0;
    const int t_hi = off >= rate ? t_in - 1 : t_in;
    if (t_hi <= t_lo) continue;
    StridedMap ym(out.data() +
                      static_cast<std::ptrdiff_t>(off + rate * t_lo) * cout,
                  cout, t_hi - t_lo, Eigen::OuterStride<>(rate * cout));
    ym.noalias() += weight->val.middleCols(kk * cin, cin) *
                    x->val.middleCols(t_lo, t_hi - t_lo);
  }
  return make_node(std::move(out), {x, weight, bias},
                   [x, weight, bias, rate, k, pad, cin, t_in, cout](Node& n) {
    if (bias->needs_grad) bias->ensure_grad().col(0) += n.grad.rowwise().sum();
    for (int kk = 0; kk < k; ++kk) {
      const int off = kk - pad;
      const int t_lo = off < 0 ? 1 : 0;
      const int t_hi = off >= rate ? t_in - 1 : t_in;
      if (t_hi <= t_lo) continue;
      ConstStridedMap gym(n.grad.data() +
                              static_cast<std::ptrdiff_t>(off + rate * t_lo) * cout,
                          cout, t_hi - t_lo, Eigen::OuterStride<>(rate * cout));
      if (weight->needs_grad)
        weight->ensure_grad().middleCols(kk * cin, cin).noalias() +=
            gym * x->val.middleCols(t_lo, t_hi - t_lo).transpose();
      if (x->needs_grad)
        x->ensure_grad().middleCols(t_lo, t_hi - t_lo).noalias() +=
            weight->val.middleCols(kk * cin, cin).transpose() * gym;
    }
  });
}

Var conv2d(const Var& x, const Var& weight, const Var& bias, int kh, int kw,
           int sh, int sw, int ph, int pw) {
  const int cin = static_cast<int>(x->val.rows());
  const int h = x->img_h, w = x->img_w;
  if (h <= 0 || w <= 0 || x->val.cols() != static_cast<Eigen::Index>(h) * w)
    throw std::invalid_argument("conv2d: input lacks image metadata");
  if (weight->val.cols() != static_cast<Eigen::Index>(cin) * kh * kw)
    throw std::invalid_argument("conv2d: weight shape mismatch");
  const int hout = (h + 2 * ph - kh) / sh + 1;
  const int wout = (w + 2 * pw - kw) / sw + 1;
  if (hout <= 0 || wout <= 0)
    throw std::invalid_argument("conv2d: output would be empty");

  auto col = std::make_shared<Mat>(
      Mat::Zero(static_cast<Eigen::Index>(cin) * kh * kw,
                static_cast<Eigen::Index>(hout) * wout));
  for (int oh = 0; oh < hout; ++oh) {
    for (int ow = 0; ow < wout; ++ow) {
      const Eigen::Index ocol = static_cast<Eigen::Index>(oh) * wout + ow;
      for (int ki = 0; ki < kh; ++ki) {
        const int ih = oh * sh - ph + ki;
        if (ih < 0 || ih >= h) continue;
        for (int kj = 0; kj < kw; ++kj) {
          const int iw = ow * sw - pw + kj;
          if (iw < 0 || iw >= w) continue;
          col->block(static_cast<Eigen::Index>(ki * kw + kj) * cin, ocol, cin, 1) =
              x->val.col(static_cast<Eigen::Index>(ih) * w + iw);
        }
      }
    }
  }
  Mat out = weight->val * (*col);
  out.colwise() += Vec(bias->val.col(0));
  Var node = make_node(std::move(out), {x, weight, bias},
                       [x, weight, bias, col, kh, kw, sh, sw, ph, pw, cin,
                        h, w, hout, wout](Node& n) {
    if (bias->needs_grad) bias->ensure_grad().col(0) += n.grad.rowwise().sum();
    if (weight->needs_grad)
      weight->ensure_grad().noalias() += n.grad * col->transpose();
    if (!x->needs_grad) return;
    Mat dcol = weight->val.transpose() * n.grad;
    Mat& g = x->ensure_grad();
    for (int oh = 0; oh < hout; ++oh) {
      for (int ow = 0; ow < wout; ++ow) {
        const Eigen::Index ocol = static_cast<Eigen::Index>(oh) * wout + ow;
        for (int ki = 0; ki < kh; ++ki) {
          const int ih = oh * sh - ph + ki;
          if (ih < 0 || ih >= h) continue;
          for (int kj = 0; kj < kw; ++kj) {
            const int iw = ow * sw - pw + kj;
            if (iw < 0 || iw >= w) continue;
            g.col(static_cast<Eigen::Index>(ih) * w + iw) +=
                dcol.block(static_cast<Eigen::Index>(ki * kw + kj) * cin, ocol,
                           cin, 1);
          }
        }
      }
    }
  });
  node->img_h = hout;
  node->img_w = wout;
  return node;
}

// ---------------------------------------------------------------------------
// signal
// ---------------------------------------------------------------------------

Var stft_magnitude(const Var& x, int n_fft, int hop) {
  if (x->val.rows() != 1)
    throw std::invalid_argument("stft_magnitude: expected 1 x T waveform");
  const int t = static_cast<int>(x->val.cols());
  if (t <= 0) throw std::invalid_argument("stft_magnitude: empty input");
  const int frames = (t + hop - 1) / hop;
  const int bins = n_fft / 2 + 1;
  static constexpr double kEps = 1e-12;

  const std::vector<double> win = hann_window(n_fft);
  auto re = std::make_shared<Mat>(bins, frames);
  auto im = std::make_shared<Mat>(bins, frames);
  Mat mag(bins, frames);
  std::vector<double> seg(n_fft);
  std::vector<double> fre, fim;
  for (int f = 0; f < frames; ++f) {
    const int start = f * hop;
    for (int i = 0; i < n_fft; ++i) {
      const int idx = start + i;
      seg[i] = (idx < t ? x->val(0, idx) : 0.0) * win[i];
    }
    rfft(seg.data(), n_fft, fre, fim);
    for (int b = 0; b < bins; ++b) {
      (*re)(b, f) = fre[b];
      (*im)(b, f) = fim[b];
      mag(b, f) = std::sqrt(fre[b] * fre[b] + fim[b] * fim[b] + kEps);
    }
  }
  return make_node(std::move(mag), {x},
                   [x, re, im, n_fft, hop, t, frames, bins](Node& n) {
    if (!x->needs_grad) return;
    const std::vector<double> win = hann_window(n_fft);
    Mat& g = x->ensure_grad();
    std::vector<double> dre(bins), dim(bins), dseg(n_fft);
    for (int f = 0; f < frames; ++f) {
      for (int b = 0; b < bins; ++b) {
        const double inv_m = n.grad(b, f) / n.val(b, f);
        dre[b] = (*re)(b, f) * inv_m;
        dim[b] = (*im)(b, f) * inv_m;
      }
      rfft_adjoint(dre, dim, n_fft, dseg.data());
      const int start = f * hop;
      const int lim = std::min(n_fft, t - start);
      for (int i = 0; i < lim; ++i) g(0, start + i) += dseg[i] * win[i];
    }
  });
}

}  // namespace prosoflow::ad
