#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstddef>
#include <numeric>
#include <vector>

#include "dav/error.hpp"
#include "dav/graph.hpp"
#include "dav/rng.hpp"
#include "dav/tensor.hpp"

using namespace dav;

namespace {

Tensor rand_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(shape));
  for (std::size_t i = 0; i < t.numel(); ++i) t[i] = rng.uniform(lo, hi);
  return t;
}

std::vector<std::size_t> all_coords(std::size_t n) {
  std::vector<std::size_t> c(n);
  std::iota(c.begin(), c.end(), std::size_t{0});
  return c;
}

// Naive direct convolution, written independently of the graph kernel:
// walk output pixels, bounds-check every tap.
Tensor conv_ref(const Tensor& x, const Tensor& w, const Tensor& b, int s) {
  const std::size_t C = x.dim(0), H = x.dim(1), W = x.dim(2);
  const std::size_t O = w.dim(0), K = w.dim(2);
  const long P = (static_cast<long>(K) - 1) / 2;
  const std::size_t Ho = (H + 2 * P - K) / s + 1;
  const std::size_t Wo = (W + 2 * P - K) / s + 1;
  Tensor out({O, Ho, Wo});
  for (std::size_t o = 0; o < O; ++o) {
    for (std::size_t oy = 0; oy < Ho; ++oy) {
      for (std::size_t ox = 0; ox < Wo; ++ox) {
        double acc = b[o];
        for (std::size_t c = 0; c < C; ++c) {
          for (std::size_t ky = 0; ky < K; ++ky) {
            for (std::size_t kx = 0; kx < K; ++kx) {
              const long iy = static_cast<long>(oy) * s + static_cast<long>(ky) - P;
              const long ix = static_cast<long>(ox) * s + static_cast<long>(kx) - P;
              if (iy < 0 || iy >= static_cast<long>(H) || ix < 0 || ix >= static_cast<long>(W)) {
                continue;
              }
              acc += w[((o * C + c) * K + ky) * K + kx] *
                     x.at(c, static_cast<std::size_t>(iy), static_cast<std::size_t>(ix));
            }
          }
        }
        out.at(o, oy, ox) = acc;
      }
    }
  }
  return out;
}

}  // namespace

TEST_CASE("frozen values: relu, softplus, sigmoid chain") {
  Graph g;
  NodeId x = g.input("x");
  NodeId r = g.relu(x);
  NodeId sp = g.softplus(x);
  NodeId loss = g.reduce_mean(sp);

  Tensor xv({3}, {-1.0, 0.0, 2.0});
  Feed feed;
  feed.set("x", xv);
  g.forward(feed);

  const Tensor& rv = g.value(r);
  CHECK(rv[0] == 0.0);
  CHECK(rv[1] == 0.0);
  CHECK(rv[2] == 2.0);

  Tensor x0({1}, {0.0});
  Graph g0;
  NodeId i0 = g0.input("x");
  NodeId s0 = g0.softplus(i0);
  Feed f0;
  f0.set("x", x0);
  g0.forward(f0);
  // softplus(0) = ln 2
  CHECK(g0.value(s0)[0] == doctest::Approx(0.6931471805599453).epsilon(1e-15));

  Tensor x1({1}, {1.0});
  Graph g1;
  NodeId i1 = g1.input("x");
  NodeId s1 = g1.softplus(i1);
  Feed f1;
  f1.set("x", x1);
  g1.forward(f1);
  Tensor grad = g1.input_gradient(s1, "x");
  // d softplus / dx at 1 = sigma(1)
  CHECK(grad[0] == doctest::Approx(0.7310585786300049).epsilon(1e-15));
}

TEST_CASE("frozen values: upsample, mean, masked sum of squares, xent") {
  Graph g;
  NodeId x = g.input("x");
  NodeId up = g.upsample2x(x);
  Tensor xv({1, 2, 2}, {1.0, 2.0, 3.0, 4.0});
  Feed feed;
  feed.set("x", xv);
  g.forward(feed);
  const Tensor& uv = g.value(up);
  REQUIRE(uv.shape() == Shape{1, 4, 4});
  const std::vector<double> want = {1, 1, 2, 2, 1, 1, 2, 2, 3, 3, 4, 4, 3, 3, 4, 4};
  for (std::size_t i = 0; i < 16; ++i) CHECK(uv[i] == want[i]);

  Graph gm;
  NodeId z = gm.input("z");
  NodeId m = gm.input("m");
  NodeId mss = gm.masked_sum_squares(z, m);
  NodeId mean = gm.reduce_mean(z);
  Tensor zv({4}, {1.0, -2.0, 3.0, -4.0});
  Tensor mv({4}, {1.0, 0.0, 1.0, 0.0});
  Feed fm;
  fm.set("z", zv);
  fm.set("m", mv);
  gm.forward(fm);
  CHECK(gm.value(mss)[0] == 10.0);   // 1 + 9
  CHECK(gm.value(mean)[0] == -0.5);  // (1-2+3-4)/4

  // uniform logits -> per-pixel CE = ln K everywhere
  Graph gx;
  NodeId lg = gx.input("logits");
  NodeId lb = gx.input("labels");
  NodeId ce = gx.softmax_xent_per_pixel(lg, lb);
  Tensor logits = Tensor::full({4, 2, 2}, 0.25);
  Tensor labels({2, 2}, {0.0, 1.0, 2.0, 3.0});
  Feed fx;
  fx.set("logits", logits);
  fx.set("labels", labels);
  gx.forward(fx);
  for (std::size_t i = 0; i < 4; ++i) {
    CHECK(gx.value(ce)[i] == doctest::Approx(std::log(4.0)).epsilon(1e-14));
  }
}

TEST_CASE("conv2d matches a naive reference, stride 1 and 2") {
  Rng rng(0x5eed);
  for (int stride : {1, 2}) {
    for (std::size_t H : {5, 8}) {
      Tensor x = rand_tensor({3, H, H + 1}, rng);
      Tensor w = rand_tensor({4, 3, 3, 3}, rng);
      Tensor b = rand_tensor({4}, rng);
      Graph g;
      NodeId xi = g.input("x");
      NodeId wi = g.input("w");
      NodeId bi = g.input("b");
      NodeId y = g.conv2d(xi, wi, bi, stride);
      Feed feed;
      feed.set("x", x);
      feed.set("w", w);
      feed.set("b", b);
      g.forward(feed);
      Tensor ref = conv_ref(x, w, b, stride);
      REQUIRE(g.value(y).shape() == ref.shape());
      CHECK(max_abs_diff(g.value(y), ref) < 1e-12);
    }
  }

  // zero weights and bias -> zero output regardless of image
  Rng rng2(7);
  Tensor x = rand_tensor({2, 6, 6}, rng2, 0.0, 255.0);
  Tensor w({3, 2, 3, 3});
  Tensor b({3});
  Graph g;
  NodeId y = g.conv2d(g.input("x"), g.input("w"), g.input("b"), 1);
  Feed feed;
  feed.set("x", x);
  feed.set("w", w);
  feed.set("b", b);
  g.forward(feed);
  CHECK(max_abs(g.value(y)) == 0.0);
}

TEST_CASE("finite differences agree with backward for every primitive") {
  Rng rng(0xfd);
  const double h = 1e-4;

  SUBCASE("conv2d, both strides, all three inputs") {
    for (int stride : {1, 2}) {
      Graph g;
      NodeId x = g.input("x");
      NodeId w = g.input("w");
      NodeId b = g.input("b");
      NodeId y = g.conv2d(x, w, b, stride);
      NodeId ones = g.input("ones");
      NodeId loss = g.masked_sum_squares(y, ones);
      Tensor xv = rand_tensor({2, 6, 5}, rng);
      Tensor wv = rand_tensor({3, 2, 3, 3}, rng);
      Tensor bv = rand_tensor({3}, rng);
      Feed feed;
      feed.set("x", xv);
      feed.set("w", wv);
      feed.set("b", bv);
      Tensor onev = Tensor::full(conv_ref(xv, wv, bv, stride).shape(), 1.0);
      feed.set("ones", onev);
      g.forward(feed);
      CHECK(g.value(y).same_shape(onev));
      for (const char* name : {"x", "w", "b"}) {
        const Tensor* t = feed.find(name);
        auto coords = all_coords(t->numel());
        FdReport rep = finite_difference_check(g, feed, loss, name, coords, h);
        CHECK(rep.checked == t->numel());
        CHECK(rep.max_rel_err < 1e-6);
      }
    }
  }

  SUBCASE("softplus, upsample, add, scale") {
    Graph g;
    NodeId a = g.input("a");
    NodeId b = g.input("b");
    NodeId sum = g.add(g.softplus(a), g.scale(g.upsample2x(b), -0.75));
    NodeId m = g.input("m");
    NodeId loss = g.masked_sum_squares(sum, m);
    Tensor av = rand_tensor({1, 4, 4}, rng, -2.0, 2.0);
    Tensor bv = rand_tensor({1, 2, 2}, rng, -2.0, 2.0);
    Tensor mv = rand_tensor({1, 4, 4}, rng, 0.25, 1.0);
    Feed feed;
    feed.set("a", av);
    feed.set("b", bv);
    feed.set("m", mv);
    for (const char* name : {"a", "b", "m"}) {
      const Tensor* t = feed.find(name);
      auto coords = all_coords(t->numel());
      FdReport rep = finite_difference_check(g, feed, loss, name, coords, h);
      CHECK(rep.checked == t->numel());
      CHECK(rep.max_rel_err < 1e-6);
    }
  }

  SUBCASE("relu with kink coordinates skipped") {
    Graph g;
    NodeId x = g.input("x");
    NodeId m = g.input("m");
    NodeId loss = g.masked_sum_squares(g.relu(x), m);
    // one coordinate sits within h of zero: +h/-h passes straddle the kink
    Tensor xv({4}, {-0.8, 0.3, 3e-5, 1.4});
    Tensor mv = Tensor::full({4}, 1.0);
    Feed feed;
    feed.set("x", xv);
    feed.set("m", mv);
    auto coords = all_coords(4);
    FdReport rep = finite_difference_check(g, feed, loss, "x", coords, h);
    CHECK(rep.skipped_kinks == 1);
    CHECK(rep.checked == 3);
    CHECK(rep.max_rel_err < 1e-6);
  }

  SUBCASE("softmax cross entropy wrt logits") {
    Graph g;
    NodeId lg = g.input("logits");
    NodeId lb = g.input("labels");
    NodeId m = g.input("m");
    NodeId loss = g.masked_sum_squares(g.softmax_xent_per_pixel(lg, lb), m);
    Tensor logits = rand_tensor({4, 3, 3}, rng, -2.0, 2.0);
    Tensor labels({3, 3});
    for (std::size_t i = 0; i < 9; ++i) labels[i] = static_cast<double>(rng.below(4));
    Tensor mv = rand_tensor({3, 3}, rng, 0.25, 1.0);
    Feed feed;
    feed.set("logits", logits);
    feed.set("labels", labels);
    feed.set("m", mv);
    auto coords = all_coords(logits.numel());
    FdReport rep = finite_difference_check(g, feed, loss, "logits", coords, h);
    CHECK(rep.checked == logits.numel());
    CHECK(rep.max_rel_err < 1e-6);
  }

  SUBCASE("encoder-decoder style composite") {
    Graph g;
    NodeId x = g.input("x");
    NodeId w1 = g.input("w1");
    NodeId b1 = g.input("b1");
    NodeId w2 = g.input("w2");
    NodeId b2 = g.input("b2");
    NodeId h1 = g.relu(g.conv2d(x, w1, b1, 2));
    NodeId h2 = g.conv2d(g.upsample2x(h1), w2, b2, 1);
    NodeId d = g.softplus(h2);
    NodeId loss = g.reduce_mean(d);
    Rng r2(0xabc);
    Tensor xv = rand_tensor({1, 8, 8}, r2, 0.0, 1.0);
    Tensor w1v = rand_tensor({4, 1, 3, 3}, r2, -0.5, 0.5);
    Tensor b1v = rand_tensor({4}, r2, -0.1, 0.1);
    Tensor w2v = rand_tensor({1, 4, 3, 3}, r2, -0.5, 0.5);
    Tensor b2v = rand_tensor({1}, r2, -0.1, 0.1);
    Feed feed;
    feed.set("x", xv);
    feed.set("w1", w1v);
    feed.set("b1", b1v);
    feed.set("w2", w2v);
    feed.set("b2", b2v);
    auto coords = all_coords(xv.numel());
    FdReport rep = finite_difference_check(g, feed, loss, "x", coords, h);
    CHECK(rep.checked + rep.skipped_kinks == xv.numel());
    CHECK(rep.checked > 0);
    CHECK(rep.max_rel_err < 1e-4);
  }
}

TEST_CASE("gradients are linear in the loss") {
  Rng rng(11);
  Graph g;
  NodeId x = g.input("x");
  NodeId m = g.input("m");
  NodeId l1 = g.masked_sum_squares(g.softplus(x), m);
  NodeId l2 = g.reduce_mean(g.relu(x));
  NodeId combined = g.add(g.scale(l1, 0.375), g.scale(l2, -2.5));
  Tensor xv = rand_tensor({10}, rng, 0.1, 2.0);  // positive: stay off relu kinks
  Tensor mv = rand_tensor({10}, rng, 0.5, 1.0);
  Feed feed;
  feed.set("x", xv);
  feed.set("m", mv);
  g.forward(feed);
  Tensor g1 = g.input_gradient(l1, "x");
  Tensor g2 = g.input_gradient(l2, "x");
  Tensor gc = g.input_gradient(combined, "x");
  for (std::size_t i = 0; i < 10; ++i) {
    CHECK(gc[i] == doctest::Approx(0.375 * g1[i] - 2.5 * g2[i]).epsilon(1e-10));
  }
}

TEST_CASE("forward and backward are bit-reproducible") {
  Rng rng(42);
  auto build = [](Graph& g) {
    NodeId x = g.input("x");
    NodeId w = g.input("w");
    NodeId b = g.input("b");
    NodeId y = g.softplus(g.conv2d(g.relu(g.conv2d(x, w, b, 2)), w, b, 1));
    return g.reduce_mean(y);
  };
  Tensor xv = rand_tensor({2, 8, 8}, rng, -1.0, 1.0);
  Tensor wv = rand_tensor({2, 2, 3, 3}, rng, -0.5, 0.5);
  Tensor bv = rand_tensor({2}, rng, -0.2, 0.2);
  Feed feed;
  feed.set("x", xv);
  feed.set("w", wv);
  feed.set("b", bv);

  Graph ga, gb;
  NodeId la = build(ga);
  NodeId lb = build(gb);
  ga.forward(feed);
  Tensor grad_a1 = ga.input_gradient(la, "x");
  double loss_a1 = ga.value(la)[0];
  ga.forward(feed);
  Tensor grad_a2 = ga.input_gradient(la, "x");
  double loss_a2 = ga.value(la)[0];
  gb.forward(feed);
  Tensor grad_b = gb.input_gradient(lb, "x");

  CHECK(loss_a1 == loss_a2);
  CHECK(max_abs_diff(grad_a1, grad_a2) == 0.0);
  CHECK(loss_a1 == gb.value(lb)[0]);
  CHECK(max_abs_diff(grad_a1, grad_b) == 0.0);
}

TEST_CASE("a graph can be re-run on different image sizes") {
  Graph g;
  NodeId x = g.input("x");
  NodeId w = g.input("w");
  NodeId b = g.input("b");
  NodeId loss = g.reduce_mean(g.relu(g.conv2d(x, w, b, 1)));
  Rng rng(3);
  Tensor wv = rand_tensor({2, 1, 3, 3}, rng);
  Tensor bv = rand_tensor({2}, rng);
  Tensor small = rand_tensor({1, 4, 4}, rng);
  Tensor big = rand_tensor({1, 9, 7}, rng);
  Feed feed;
  feed.set("w", wv);
  feed.set("b", bv);
  feed.set("x", small);
  g.forward(feed);
  CHECK(g.value(loss).numel() == 1);
  feed.set("x", big);
  g.forward(feed);
  Tensor grad = g.input_gradient(loss, "x");
  CHECK(grad.shape() == big.shape());
}

TEST_CASE("graph rejects bad usage") {
  SUBCASE("missing binding") {
    Graph g;
    NodeId x = g.input("x");
    g.relu(x);
    Feed feed;
    CHECK_THROWS_AS(g.forward(feed), DataError);
  }
  SUBCASE("non-finite input") {
    Graph g;
    NodeId x = g.input("x");
    g.relu(x);
    Tensor bad({2}, {1.0, std::nan("")});
    Feed feed;
    feed.set("x", bad);
    CHECK_THROWS_AS(g.forward(feed), NumericError);
  }
  SUBCASE("backward before forward") {
    Graph g;
    NodeId x = g.input("x");
    NodeId loss = g.reduce_mean(x);
    CHECK_THROWS_AS(g.backward(loss), DataError);
  }
  SUBCASE("non-scalar loss") {
    Graph g;
    NodeId x = g.input("x");
    NodeId r = g.relu(x);
    Tensor xv({3}, {1.0, 2.0, 3.0});
    Feed feed;
    feed.set("x", xv);
    g.forward(feed);
    CHECK_THROWS_AS(g.backward(r), DataError);
  }
  SUBCASE("shape mismatch names the node") {
    Graph g;
    NodeId a = g.input("a");
    NodeId b = g.input("b");
    NodeId s = g.add(a, b);
    Tensor av({2}, {1.0, 2.0});
    Tensor bv({3}, {1.0, 2.0, 3.0});
    Feed feed;
    feed.set("a", av);
    feed.set("b", bv);
    try {
      g.forward(feed);
      FAIL("expected DataError");
    } catch (const DataError& e) {
      CHECK(std::string(e.what()).find(std::to_string(s)) != std::string::npos);
    }
  }
  SUBCASE("label out of range") {
    Graph g;
    NodeId lg = g.input("logits");
    NodeId lb = g.input("labels");
    g.softmax_xent_per_pixel(lg, lb);
    Tensor logits({2, 1, 1}, {0.0, 0.0});
    Tensor labels({1, 1}, {2.0});
    Feed feed;
    feed.set("logits", logits);
    feed.set("labels", labels);
    CHECK_THROWS_AS(g.forward(feed), DataError);
  }
  SUBCASE("duplicate input name") {
    Graph g;
    g.input("x");
    CHECK_THROWS_AS(g.input("x"), DataError);
  }
  SUBCASE("bad stride") {
    Graph g;
    NodeId x = g.input("x");
    NodeId w = g.input("w");
    NodeId b = g.input("b");
    CHECK_THROWS_AS(g.conv2d(x, w, b, 3), DataError);
  }
}
