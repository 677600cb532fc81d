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

#include <doctest.h>

#include <cmath>
#include <functional>

#include "prosoflow/nn.hpp"
#include "prosoflow/rng.hpp"
#include "prosoflow/tensor.hpp"

using namespace prosoflow;
using namespace prosoflow::ad;

namespace {

// Central finite differences against the analytic gradient for a scalar
// function of a list of leaves.
void check_grads(const std::vector<Var>& leaves,
                 const std::function<Var()>& build, double h = 1e-6,
                 double tol = 1e-5) {
  for (const auto& p : leaves) {
    p->grad_ready = false;
    p->grad.resize(0, 0);
  }
  Var out = build();
  backward(out);
  for (const auto& p : leaves) {
    REQUIRE(p->grad_ready);
    for (Eigen::Index r = 0; r < p->val.rows(); ++r) {
      for (Eigen::Index c = 0; c < p->val.cols(); ++c) {
        const double keep = p->val(r, c);
        p->val(r, c) = keep + h;
        const double up = build()->val(0, 0);
        p->val(r, c) = keep - h;
        const double dn = build()->val(0, 0);
        p->val(r, c) = keep;
        const double fd = (up - dn) / (2 * h);
        const double an = p->grad(r, c);
        const double err = std::abs(fd - an) / std::max({1.0, std::abs(fd), std::abs(an)});
        INFO("entry (", r, ",", c, ") fd=", fd, " an=", an);
        CHECK(err < tol);
      }
    }
  }
}

Var sum_sq_probe(const Var& v) {
  // Quadratic readout makes every output element matter with distinct weight.
  Mat w(v->val.rows(), v->val.cols());
  for (Eigen::Index r = 0; r < w.rows(); ++r)
    for (Eigen::Index c = 0; c < w.cols(); ++c)
      w(r, c) = 0.1 + 0.01 * static_cast<double>(r + 2 * c);
  return sum_all(cmul(v, cmul(v, constant(w))));
}

}  // namespace

TEST_CASE("gradients: elementwise and matmul ops") {
  Rng rng(1);
  Var a = leaf(rng.normal_mat(3, 4));
  Var b = leaf(rng.normal_mat(3, 4));
  Var m = leaf(rng.normal_mat(4, 5));

  check_grads({a, b}, [&] { return sum_sq_probe(add(a, b)); });
  check_grads({a, b}, [&] { return sum_sq_probe(sub(a, b)); });
  check_grads({a, b}, [&] { return sum_sq_probe(cmul(a, b)); });
  check_grads({a}, [&] { return sum_sq_probe(scale(a, -1.7)); });
  check_grads({a}, [&] { return sum_sq_probe(add_scalar(a, 0.3)); });
  check_grads({a, m}, [&] { return sum_sq_probe(matmul(a, m)); });
  check_grads({a, b}, [&] { return sum_sq_probe(matmul_tn(a, b)); });
  check_grads({a, b}, [&] { return sum_sq_probe(matmul_nt(a, b)); });
}

TEST_CASE("gradients: broadcast and shape ops") {
  Rng rng(2);
  Var x = leaf(rng.normal_mat(3, 6));
  Var v = leaf(rng.normal_mat(3, 1));

  check_grads({x, v}, [&] { return sum_sq_probe(add_colvec(x, v)); });
  check_grads({x, v}, [&] { return sum_sq_probe(mul_colvec(x, v)); });
  check_grads({v}, [&] { return sum_sq_probe(broadcast_col(v, 5)); });
  check_grads({v}, [&] { return sum_sq_probe(diag_embed(v)); });
  check_grads({x}, [&] { return sum_sq_probe(slice_rows(x, 1, 2)); });
  check_grads({x}, [&] { return sum_sq_probe(slice_cols(x, 2, 3)); });
  check_grads({x}, [&] {
    return sum_sq_probe(gather_cols(x, {0, 2, 2, 5, 1}));
  });
  check_grads({x}, [&] {
    return sum_sq_probe(segment_mean_cols(x, {{0, 2}, {2, 2}, {2, 6}}));
  });
  check_grads({x, v}, [&] {
    return sum_sq_probe(concat_rows({x, broadcast_col(v, 6)}));
  });
  check_grads({x}, [&] { return sum_sq_probe(spec_to_image(x)); });
}

TEST_CASE("gradients: reductions and nonlinearities") {
  Rng rng(3);
  Var x = leaf(rng.normal_mat(4, 5));
  Var pos = leaf((rng.normal_mat(4, 5).array().abs() + 0.5).matrix());
  Var alpha = leaf((rng.normal_mat(4, 1).array().abs() + 0.5).matrix());
  Var gamma = leaf(Mat::Ones(4, 1) + 0.1 * rng.normal_mat(4, 1));
  Var beta = leaf(0.1 * rng.normal_mat(4, 1));

  check_grads({x}, [&] { return mean_all(x); });
  check_grads({x}, [&] { return mean_abs(x); });
  check_grads({x}, [&] { return mean_sq(x); });
  check_grads({x}, [&] { return sum_sq_probe(tanh_v(x)); });
  check_grads({x}, [&] { return sum_sq_probe(sigmoid_v(x)); });
  check_grads({x}, [&] { return sum_sq_probe(exp_v(scale(x, 0.3))); });
  check_grads({pos}, [&] { return sum_sq_probe(log_v(pos)); });
  check_grads({pos}, [&] { return sum_sq_probe(clamp_log(pos, 1e-3)); });
  check_grads({x}, [&] { return sum_sq_probe(leaky_relu(x, 0.1)); });
  check_grads({x, alpha}, [&] { return sum_sq_probe(snake(x, alpha)); });
  check_grads({x}, [&] { return sum_sq_probe(softmax_rows(x)); });
  check_grads({x, gamma, beta}, [&] {
    return sum_sq_probe(layer_norm_cols(x, gamma, beta));
  }, 1e-6, 1e-4);
}

TEST_CASE("gradients: conv1d variants") {
  Rng rng(4);
  const int cin = 3, cout = 2, k = 3, t = 9;
  Var x = leaf(rng.normal_mat(cin, t));
  Var w = leaf(rng.normal_mat(cout, cin * k, 0.4));
  Var b = leaf(rng.normal_mat(cout, 1, 0.2));

  SUBCASE("stride 1, same pad") {
    check_grads({x, w, b}, [&] {
      return sum_sq_probe(conv1d(x, w, b, k, 1, 1, 1));
    });
  }
  SUBCASE("stride 2") {
    check_grads({x, w, b}, [&] {
      return sum_sq_probe(conv1d(x, w, b, k, 2, 1, 1));
    });
  }
  SUBCASE("dilation 2") {
    check_grads({x, w, b}, [&] {
      return sum_sq_probe(conv1d(x, w, b, k, 1, 2, 2));
    });
  }
  SUBCASE("stride 3 no pad") {
    check_grads({x, w, b}, [&] {
      return sum_sq_probe(conv1d(x, w, b, k, 3, 0, 1));
    });
  }
}

TEST_CASE("conv1d matches a naive loop") {
  Rng rng(5);
  const int cin = 2, cout = 3, k = 5, t = 11, stride = 2, pad = 2;
  Var x = leaf(rng.normal_mat(cin, t));
  Var w = leaf(rng.normal_mat(cout, cin * k));
  Var b = leaf(rng.normal_mat(cout, 1));
  Var y = conv1d(x, w, b, k, stride, pad, 1);

  const int t_out = (t + 2 * pad - k) / stride + 1;
  REQUIRE(static_cast<int>(y->val.cols()) == t_out);
  for (int j = 0; j < t_out; ++j) {
    for (int co = 0; co < cout; ++co) {
      double acc = b->val(co, 0);
      for (int kk = 0; kk < k; ++kk) {
        const int src = j * stride - pad + kk;
        if (src < 0 || src >= t) continue;
        for (int ci = 0; ci < cin; ++ci)
          acc += w->val(co, kk * cin + ci) * x->val(ci, src);
      }
      CHECK(y->val(co, j) == doctest::Approx(acc).epsilon(1e-12));
    }
  }
}

TEST_CASE("conv_transpose1d: length contract, upsampling identity, grads") {
  Rng rng(6);
  const int cin = 2, cout = 3, rate = 4, t = 5;
  Var x = leaf(rng.normal_mat(cin, t));
  Var w = leaf(rng.normal_mat(cout, cin * 2 * rate, 0.3));
  Var b = leaf(rng.normal_mat(cout, 1, 0.1));

  Var y = conv_transpose1d(x, w, b, rate);
  CHECK(y->val.cols() == t * rate);

  // Naive scatter oracle.
  Mat oracle = b->val.col(0).replicate(1, t * rate);
  for (int tt = 0; tt < t; ++tt) {
    for (int kk = 0; kk < 2 * rate; ++kk) {
      const int n = tt * rate + kk - rate / 2;
      if (n < 0 || n >= t * rate) continue;
      oracle.col(n) += w->val.middleCols(kk * cin, cin) * x->val.col(tt);
    }
  }
  CHECK((y->val - oracle).cwiseAbs().maxCoeff() < 1e-12);

  check_grads({x, w, b}, [&] {
    return sum_sq_probe(conv_transpose1d(x, w, b, rate));
  });
}

TEST_CASE("conv2d matches a naive loop and grads") {
  Rng rng(7);
  const int cin = 2, cout = 2, h = 5, w_img = 6;
  Var x = leaf(rng.normal_mat(cin, h * w_img));
  x->img_h = h;
  x->img_w = w_img;
  Var w = leaf(rng.normal_mat(cout, cin * 3 * 3, 0.3));
  Var b = leaf(rng.normal_mat(cout, 1, 0.1));

  Var y = conv2d(x, w, b, 3, 3, 2, 2, 1, 1);
  const int hout = (h + 2 - 3) / 2 + 1, wout = (w_img + 2 - 3) / 2 + 1;
  REQUIRE(y->img_h == hout);
  REQUIRE(y->img_w == wout);
  for (int oh = 0; oh < hout; ++oh) {
    for (int ow = 0; ow < wout; ++ow) {
      for (int co = 0; co < cout; ++co) {
        double acc = b->val(co, 0);
        for (int ki = 0; ki < 3; ++ki) {
          for (int kj = 0; kj < 3; ++kj) {
            const int ih = oh * 2 - 1 + ki, iw = ow * 2 - 1 + kj;
            if (ih < 0 || ih >= h || iw < 0 || iw >= w_img) continue;
            for (int ci = 0; ci < cin; ++ci)
              acc += w->val(co, (ki * 3 + kj) * cin + ci) * x->val(ci, ih * w_img + iw);
          }
        }
        CHECK(y->val(co, oh * wout + ow) == doctest::Approx(acc).epsilon(1e-12));
      }
    }
  }
  check_grads({x, w, b}, [&] {
    return sum_sq_probe(conv2d(x, w, b, 3, 3, 2, 2, 1, 1));
  });
}

TEST_CASE("stft_magnitude gradient and framing") {
  Rng rng(8);
  const int t = 700, n_fft = 256, hop = 128;
  Var x = leaf(rng.normal_mat(1, t, 0.4));
  Var mag = stft_magnitude(x, n_fft, hop);
  CHECK(mag->val.rows() == n_fft / 2 + 1);
  CHECK(mag->val.cols() == (t + hop - 1) / hop);

  check_grads({x}, [&] {
    return sum_sq_probe(stft_magnitude(x, n_fft, hop));
  }, 1e-6, 1e-4);
}

TEST_CASE("shared subgraphs accumulate gradients") {
  Var a = leaf(Mat::Constant(1, 1, 3.0));
  Var y = add(cmul(a, a), scale(a, 2.0));  // a^2 + 2a => dy/da = 2a + 2 = 8
  backward(y);
  CHECK(a->grad(0, 0) == doctest::Approx(8.0));
}

TEST_CASE("stop_grad blocks the path") {
  Var a = leaf(Mat::Constant(1, 1, 2.0));
  Var y = cmul(stop_grad(a), a);  // treated as c * a
  backward(y);
  CHECK(a->grad(0, 0) == doctest::Approx(2.0));
}

TEST_CASE("Adam: zero learning rate leaves parameters unchanged") {
  nn::ParamStore ps(9);
  Var w = ps.add_uniform("w", 3, 3, 3);
  const Mat before = w->val;
  nn::Adam opt;
  opt.lr = 0.0;
  opt.init(ps);
  Var loss = mean_sq(w);
  backward(loss);
  opt.step(ps);
  CHECK((w->val - before).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("Adam: deterministic and decreasing on a quadratic") {
  auto run = [] {
    nn::ParamStore ps(10);
    Var w = ps.add_normal("w", 4, 1, 1.0);
    nn::Adam opt;
    opt.lr = 0.05;
    opt.init(ps);
    std::vector<double> losses;
    for (int i = 0; i < 50; ++i) {
      Var loss = mean_sq(w);
      losses.push_back(loss->val(0, 0));
      backward(loss);
      opt.step(ps);
    }
    return losses;
  };
  auto a = run();
  auto b = run();
  CHECK(a == b);
  CHECK(a.back() < 0.05 * a.front());
}

TEST_CASE("gaussian_kl closed form") {
  // mu=0, sigma=1 -> 0; mu=1, sigma=1 -> 0.5 per dim.
  Var mu0 = leaf(Mat::Zero(4, 2));
  Var ls0 = leaf(Mat::Zero(4, 2));
  CHECK(nn::gaussian_kl(mu0, ls0)->val(0, 0) == doctest::Approx(0.0));
  Var mu1 = leaf(Mat::Ones(1, 1));
  Var ls1 = leaf(Mat::Zero(1, 1));
  CHECK(nn::gaussian_kl(mu1, ls1)->val(0, 0) == doctest::Approx(0.5));

  Rng rng(11);
  Var mu = leaf(rng.normal_mat(3, 2));
  Var ls = leaf(rng.normal_mat(3, 2, 0.3));
  check_grads({mu, ls}, [&] { return nn::gaussian_kl(mu, ls); });
}

TEST_CASE("transformer block is shape preserving and differentiable") {
  nn::ParamStore ps(12);
  nn::TransformerBlock block(ps, "blk", 8, 2, 16);
  Rng rng(13);
  Var x = leaf(rng.normal_mat(8, 5));
  Var y = block.forward(x);
  CHECK(y->val.rows() == 8);
  CHECK(y->val.cols() == 5);
  check_grads({x}, [&] { return sum_sq_probe(block.forward(x)); }, 1e-6, 1e-4);
}
