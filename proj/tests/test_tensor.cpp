// Numerics tests: forward semantics against brute-force oracles written with
// plain loops, and every differentiable op against central finite differences.

#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstring>
#include <functional>
#include <vector>

#include "clf/tensor.hpp"

using clf::Rng;
using clf::Shape;
using clf::Tape;
using clf::Tensor;

namespace {

// --- independent oracles ----------------------------------------------------

// Triple-loop matrix product.
std::vector<double> matmul_oracle(const std::vector<double>& a,
                                  const std::vector<double>& b, std::size_t m,
                                  std::size_t k, std::size_t n) {
  std::vector<double> c(m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j)
      for (std::size_t p = 0; p < k; ++p)
        c[i * n + j] += a[i * k + p] * b[p * n + j];
  return c;
}

// Direct six-loop cross-correlation.
std::vector<double> conv_oracle(const std::vector<double>& x, std::size_t bn,
                                std::size_t cin, std::size_t h, std::size_t w,
                                const std::vector<double>& wt,
                                std::size_t cout, std::size_t kh,
                                std::size_t kw, std::size_t stride,
                                std::size_t pad) {
  std::size_t ho = (h + 2 * pad - kh) / stride + 1;
  std::size_t wo = (w + 2 * pad - kw) / stride + 1;
  std::vector<double> y(bn * cout * ho * wo, 0.0);
  for (std::size_t b = 0; b < bn; ++b)
    for (std::size_t co = 0; co < cout; ++co)
      for (std::size_t oy = 0; oy < ho; ++oy)
        for (std::size_t ox = 0; ox < wo; ++ox) {
          double acc = 0.0;
          for (std::size_t ci = 0; ci < cin; ++ci)
            for (std::size_t ki = 0; ki < kh; ++ki)
              for (std::size_t kj = 0; kj < kw; ++kj) {
                std::ptrdiff_t iy =
                    static_cast<std::ptrdiff_t>(oy * stride + ki) -
                    static_cast<std::ptrdiff_t>(pad);
                std::ptrdiff_t ix =
                    static_cast<std::ptrdiff_t>(ox * stride + kj) -
                    static_cast<std::ptrdiff_t>(pad);
                if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h) || ix < 0 ||
                    ix >= static_cast<std::ptrdiff_t>(w))
                  continue;
                acc += x[((b * cin + ci) * h + iy) * w + ix] *
                       wt[((co * cin + ci) * kh + ki) * kw + kj];
              }
          y[((b * cout + co) * ho + oy) * wo + ox] = acc;
        }
  return y;
}

// --- finite-difference harness ----------------------------------------------

using BuildFn =
    std::function<Tensor<double>(const std::vector<Tensor<double>>&)>;

// Weighted scalar readout with fixed weights so the incoming gradient is
// non-uniform across coordinates.
Tensor<double> weighted_sum(const Tensor<double>& out, unsigned tag) {
  Rng wr(9000u + tag);
  Tensor<double> w(out.shape());
  for (auto& v : w.values_mut()) v = wr.uniform(-1.0, 1.0);
  return clf::sum_all(clf::mul(out, w));
}

struct FdOptions {
  double lo = 0.2;
  double hi = 1.5;
  bool mixed_sign = true;              // draw |v| in [lo,hi], random sign
  std::vector<double> avoid;           // keep |v - a| > 0.02 for each a
  double tol = 1e-3;
};

void fd_check(const std::string& name, const std::vector<Shape>& shapes,
              const BuildFn& build, unsigned seed, FdOptions opt = {}) {
  Rng rng(1000u * seed + 17u);
  std::vector<Tensor<double>> inputs;
  for (const auto& s : shapes) {
    Tensor<double> t(s);
    for (auto& v : t.values_mut()) {
      for (;;) {
        double u = rng.uniform(opt.lo, opt.hi);
        if (opt.mixed_sign && rng.uniform() < 0.5) u = -u;
        bool ok = true;
        for (double a : opt.avoid)
          if (std::abs(u - a) < 0.02) ok = false;
        if (ok) {
          v = u;
          break;
        }
      }
    }
    t.set_requires_grad(true);
    inputs.push_back(t);
  }

  std::vector<std::vector<double>> analytic;
  {
    Tape<double> tape;
    auto loss = build(inputs);
    tape.backward(loss);
    for (auto& t : inputs) analytic.push_back(t.grad());
  }

  const double h = 1e-4;
  for (std::size_t ti = 0; ti < inputs.size(); ++ti) {
    auto& vals = inputs[ti].values_mut();
    for (std::size_t i = 0; i < vals.size(); ++i) {
      double orig = vals[i];
      vals[i] = orig + h;
      double lp = build(inputs).item();
      vals[i] = orig - h;
      double lm = build(inputs).item();
      vals[i] = orig;
      double fd = (lp - lm) / (2.0 * h);
      double an = analytic[ti][i];
      double rel =
          std::abs(fd - an) / std::max({std::abs(fd), std::abs(an), 1e-6});
      INFO(name << " seed " << seed << " input " << ti << " coord " << i
                << ": analytic " << an << " vs fd " << fd);
      REQUIRE(rel < opt.tol);
    }
  }
}

void fd_check_all_seeds(const std::string& name,
                        const std::vector<Shape>& shapes, const BuildFn& build,
                        FdOptions opt = {}) {
  for (unsigned seed = 1; seed <= 20; ++seed)
    fd_check(name, shapes, build, seed, opt);
}

struct FiniteCheckGuard {
  ~FiniteCheckGuard() { clf::set_finite_checks(true); }
};

}  // namespace

// ---------------------------------------------------------------------------
// Construction and access
// ---------------------------------------------------------------------------

TEST_CASE("shape bookkeeping and element access") {
  Tensor<double> t({2, 3}, 0.0);
  REQUIRE(t.numel() == 6);
  REQUIRE(t.rank() == 2);
  t.data_mut()[5] = 7.5;
  REQUIRE(t.at({1, 2}) == 7.5);
  REQUIRE_THROWS_AS(t.at({2, 0}), clf::dim_error);
  REQUIRE_THROWS_AS(t.at({0}), clf::dim_error);
  REQUIRE_THROWS_AS(t.item(), clf::contract_error);

  auto s = Tensor<double>::scalar(3.0);
  REQUIRE(s.rank() == 0);
  REQUIRE(s.numel() == 1);
  REQUIRE(s.item() == 3.0);

  REQUIRE_THROWS_AS(Tensor<double>::from_vector({2, 2}, {1.0, 2.0}),
                    clf::dim_error);

  Tensor<double> u;  // uninitialized handle
  REQUIRE_THROWS_AS(u.numel(), clf::contract_error);
}

TEST_CASE("grad storage present exactly when tracking is on") {
  Tensor<double> t({4}, 1.0);
  REQUIRE_THROWS_AS(t.grad(), clf::contract_error);
  t.set_requires_grad(true);
  REQUIRE(t.grad().size() == 4);
  t.set_requires_grad(false);
  REQUIRE_THROWS_AS(t.grad(), clf::contract_error);
}

// ---------------------------------------------------------------------------
// matmul / bmm
// ---------------------------------------------------------------------------

TEST_CASE("matmul identity and annihilator cases") {
  auto I = Tensor<double>::from_vector({2, 2}, {1, 0, 0, 1});
  auto A = Tensor<double>::from_vector({2, 2}, {1, 2, 3, 4});
  auto C = clf::matmul(I, A);
  REQUIRE(C.values() == std::vector<double>{1, 2, 3, 4});

  auto L = Tensor<double>::from_vector({2, 2}, {1, 0, 0, 0});
  auto R = Tensor<double>::from_vector({2, 2}, {0, 0, 0, 1});
  auto Z = clf::matmul(L, R);
  for (double v : Z.values()) REQUIRE(v == 0.0);
}

TEST_CASE("matmul matches a triple-loop oracle") {
  Rng rng(7);
  Tensor<double> a({5, 7});
  Tensor<double> b({7, 3});
  a.fill_uniform(rng, -2.0, 2.0);
  b.fill_uniform(rng, -2.0, 2.0);
  auto c = clf::matmul(a, b);
  auto ref = matmul_oracle(a.values(), b.values(), 5, 7, 3);
  for (std::size_t i = 0; i < ref.size(); ++i)
    REQUIRE(std::abs(c.values()[i] - ref[i]) < 1e-6);
}

TEST_CASE("matmul rejects mismatched shapes and names both") {
  Tensor<double> a({2, 3}, 1.0);
  Tensor<double> b({4, 5}, 1.0);
  try {
    clf::matmul(a, b);
    FAIL("expected dim_error");
  } catch (const clf::dim_error& e) {
    std::string msg = e.what();
    REQUIRE(msg.find("[2, 3]") != std::string::npos);
    REQUIRE(msg.find("[4, 5]") != std::string::npos);
  }
}

TEST_CASE("bmm identity batches and b=1 equivalence") {
  auto I = Tensor<double>::from_vector({2, 2, 2}, {1, 0, 0, 1, 1, 0, 0, 1});
  Rng rng(11);
  Tensor<double> x({2, 2, 2});
  x.fill_uniform(rng, -1.0, 1.0);
  auto y = clf::bmm(I, x);
  for (std::size_t i = 0; i < x.numel(); ++i)
    REQUIRE(y.values()[i] == Catch::Approx(x.values()[i]).margin(1e-15));

  Tensor<double> a({1, 3, 4});
  Tensor<double> b({1, 4, 2});
  a.fill_uniform(rng, -1.0, 1.0);
  b.fill_uniform(rng, -1.0, 1.0);
  auto c3 = clf::bmm(a, b);
  auto c2 = clf::matmul(clf::reshape(a, {3, 4}), clf::reshape(b, {4, 2}));
  REQUIRE(c3.values() == c2.values());
}

TEST_CASE("bmm equals slice-wise matmul exactly") {
  Rng rng(13);
  Tensor<double> a({4, 3, 2});
  Tensor<double> b({4, 2, 5});
  a.fill_uniform(rng, -2.0, 2.0);
  b.fill_uniform(rng, -2.0, 2.0);
  auto c = clf::bmm(a, b);
  for (std::size_t s = 0; s < 4; ++s) {
    std::vector<double> as(a.data() + s * 6, a.data() + (s + 1) * 6);
    std::vector<double> bs(b.data() + s * 10, b.data() + (s + 1) * 10);
    auto cs = clf::matmul(Tensor<double>::from_vector({3, 2}, as),
                          Tensor<double>::from_vector({2, 5}, bs));
    for (std::size_t i = 0; i < 15; ++i)
      REQUIRE(c.values()[s * 15 + i] == cs.values()[i]);
  }
  REQUIRE_THROWS_AS(clf::bmm(a, Tensor<double>({3, 2, 5}, 1.0)),
                    clf::dim_error);
}

// ---------------------------------------------------------------------------
// conv2d
// ---------------------------------------------------------------------------

TEST_CASE("conv2d 1x1 unit kernel is the identity") {
  Rng rng(3);
  Tensor<double> x({1, 1, 4, 5});
  x.fill_uniform(rng, -1.0, 1.0);
  auto w = Tensor<double>::from_vector({1, 1, 1, 1}, {1.0});
  auto y = clf::conv2d(x, w, 1, 0);
  REQUIRE(y.shape() == Shape{1, 1, 4, 5});
  REQUIRE(y.values() == x.values());
}

TEST_CASE("conv2d zero weights give zero output") {
  Rng rng(4);
  Tensor<double> x({2, 3, 6, 6});
  x.fill_uniform(rng, -1.0, 1.0);
  Tensor<double> w({4, 3, 3, 3}, 0.0);
  auto y = clf::conv2d(x, w, 1, 1);
  for (double v : y.values()) REQUIRE(v == 0.0);
}

TEST_CASE("conv2d matches a direct six-loop oracle") {
  Rng rng(5);
  Tensor<double> x({1, 2, 6, 6});
  Tensor<double> w({3, 2, 3, 3});
  x.fill_uniform(rng, -1.5, 1.5);
  w.fill_uniform(rng, -1.5, 1.5);
  auto y = clf::conv2d(x, w, 2, 1);
  auto ref = conv_oracle(x.values(), 1, 2, 6, 6, w.values(), 3, 3, 3, 2, 1);
  REQUIRE(y.shape() == Shape{1, 3, 3, 3});
  for (std::size_t i = 0; i < ref.size(); ++i)
    REQUIRE(std::abs(y.values()[i] - ref[i]) < 1e-6);
}

TEST_CASE("conv2d validates geometry") {
  Tensor<double> x({1, 2, 6, 6}, 1.0);
  Tensor<double> w({3, 2, 3, 3}, 1.0);
  Tensor<double> weven({3, 2, 2, 2}, 1.0);
  REQUIRE_THROWS_AS(clf::conv2d(x, weven, 1, 0), clf::dim_error);  // even kernel
  Tensor<double> wbadc({3, 5, 3, 3}, 1.0);
  REQUIRE_THROWS_AS(clf::conv2d(x, wbadc, 1, 1), clf::dim_error);  // channels
  Tensor<double> wbig({3, 2, 9, 9}, 1.0);
  REQUIRE_THROWS_AS(clf::conv2d(x, wbig, 1, 0), clf::dim_error);  // empty out
  REQUIRE_THROWS_AS(clf::conv2d(x, w, 3, 1), clf::dim_error);     // stride 3
  // Floor semantics: stride 2 on an extent where the window does not tile
  // exactly still yields floor((h+2p-kh)/s)+1 columns.
  auto y = clf::conv2d(x, w, 2, 0);
  REQUIRE(y.shape() == Shape{1, 3, 2, 2});
}

// ---------------------------------------------------------------------------
// elementwise and softmax
// ---------------------------------------------------------------------------

TEST_CASE("elu fixed points") {
  auto x = Tensor<double>::from_vector({3}, {0.0, 2.0, -1.0});
  auto y = clf::elu(x);
  REQUIRE(y.values()[0] == 0.0);
  REQUIRE(y.values()[1] == 2.0);
  REQUIRE(y.values()[2] == Catch::Approx(std::exp(-1.0) - 1.0).epsilon(1e-12));
}

TEST_CASE("softmax closed forms and shift invariance") {
  auto u = Tensor<double>::from_vector({1, 4}, {0.3, 0.3, 0.3, 0.3});
  auto pu = clf::softmax(u, 1);
  for (double v : pu.values()) REQUIRE(v == Catch::Approx(0.25).epsilon(1e-12));

  auto x = Tensor<double>::from_vector({1, 2}, {0.0, std::log(3.0)});
  auto p = clf::softmax(x, 1);
  REQUIRE(p.values()[0] == Catch::Approx(0.25).epsilon(1e-12));
  REQUIRE(p.values()[1] == Catch::Approx(0.75).epsilon(1e-12));

  auto xs = clf::add_scalar(x, 5.0);
  auto ps = clf::softmax(xs, 1);
  for (std::size_t i = 0; i < 2; ++i)
    REQUIRE(ps.values()[i] == Catch::Approx(p.values()[i]).epsilon(1e-12));
}

TEST_CASE("softmax rows sum to one and lie in [0,1]") {
  Rng rng(21);
  for (int it = 0; it < 25; ++it) {
    Tensor<double> x({4, 7});
    x.fill_uniform(rng, -8.0, 8.0);
    auto p = clf::softmax(x, 1);
    for (std::size_t r = 0; r < 4; ++r) {
      double s = 0.0;
      for (std::size_t c = 0; c < 7; ++c) {
        double v = p.at({r, c});
        REQUIRE(v >= 0.0);
        REQUIRE(v <= 1.0);
        s += v;
      }
      REQUIRE(std::abs(s - 1.0) < 1e-6);
    }
  }
}

TEST_CASE("log_softmax agrees with log of softmax") {
  Rng rng(22);
  Tensor<double> x({3, 5});
  x.fill_uniform(rng, -4.0, 4.0);
  auto a = clf::log_softmax(x, 1);
  auto b = clf::log(clf::softmax(x, 1));
  for (std::size_t i = 0; i < a.numel(); ++i)
    REQUIRE(a.values()[i] == Catch::Approx(b.values()[i]).margin(1e-12));
}

TEST_CASE("layer_norm of a constant row is zero") {
  auto x = Tensor<double>::from_vector({2, 4}, {3, 3, 3, 3, -1, -1, -1, -1});
  auto gamma = Tensor<double>::ones({4});
  auto beta = Tensor<double>::zeros({4});
  auto y = clf::layer_norm(x, gamma, beta);
  for (double v : y.values()) REQUIRE(std::abs(v) < 1e-9);
}

TEST_CASE("sums and scalar reductions") {
  auto ones = Tensor<double>::ones({2, 3});
  REQUIRE(clf::sum_all(ones).item() == 6.0);
  REQUIRE(clf::sum_all(ones).rank() == 0);

  auto x = Tensor<double>::from_vector({2, 3}, {1, 2, 3, 4, 5, 6});
  auto s0 = clf::sum(x, 0);
  REQUIRE(s0.shape() == Shape{3});
  REQUIRE(s0.values() == std::vector<double>{5, 7, 9});
  auto s1 = clf::sum(x, 1, /*keepdim=*/true);
  REQUIRE(s1.shape() == Shape{2, 1});
  REQUIRE(s1.values() == std::vector<double>{6, 15});
}

TEST_CASE("log is the inverse of exp on random values") {
  Rng rng(23);
  Tensor<double> x({40});
  x.fill_uniform(rng, -3.0, 3.0);
  auto y = clf::log(clf::exp(x));
  for (std::size_t i = 0; i < x.numel(); ++i)
    REQUIRE(std::abs(y.values()[i] - x.values()[i]) < 1e-6);
}

TEST_CASE("broadcasting follows trailing-dimension alignment") {
  auto a = Tensor<double>::from_vector({2, 3}, {1, 2, 3, 4, 5, 6});
  auto b = Tensor<double>::from_vector({3}, {10, 20, 30});
  auto c = clf::add(a, b);
  REQUIRE(c.values() == std::vector<double>{11, 22, 33, 14, 25, 36});

  auto col = Tensor<double>::from_vector({2, 1}, {100, 200});
  auto d = clf::add(a, col);
  REQUIRE(d.values() == std::vector<double>{101, 102, 103, 204, 205, 206});

  auto bad = Tensor<double>::from_vector({4}, {1, 2, 3, 4});
  try {
    clf::add(a, bad);
    FAIL("expected dim_error");
  } catch (const clf::dim_error& e) {
    std::string msg = e.what();
    REQUIRE(msg.find("[2, 3]") != std::string::npos);
    REQUIRE(msg.find("[4]") != std::string::npos);
  }
}

TEST_CASE("transpose, reshape and concat semantics") {
  auto x = Tensor<double>::from_vector({2, 3}, {1, 2, 3, 4, 5, 6});
  auto t = clf::transpose(x, 0, 1);
  REQUIRE(t.shape() == Shape{3, 2});
  REQUIRE(t.values() == std::vector<double>{1, 4, 2, 5, 3, 6});

  auto r = clf::reshape(x, {3, 2});
  REQUIRE(r.values() == x.values());
  REQUIRE_THROWS_AS(clf::reshape(x, {4, 2}), clf::dim_error);

  auto a = Tensor<double>::from_vector({2, 2}, {1, 2, 3, 4});
  auto b = Tensor<double>::from_vector({2, 1}, {7, 8});
  auto cat = clf::concat(a, b, 1);
  REQUIRE(cat.shape() == Shape{2, 3});
  REQUIRE(cat.values() == std::vector<double>{1, 2, 7, 3, 4, 8});
  REQUIRE_THROWS_AS(clf::concat(a, Tensor<double>({3, 2}, 0.0), 1),
                    clf::dim_error);
}

// ---------------------------------------------------------------------------
// Tape mechanics
// ---------------------------------------------------------------------------

TEST_CASE("backward of sum gives ones; of sum of squares gives 2x") {
  Rng rng(31);
  Tensor<double> x({3, 4});
  x.fill_uniform(rng, -2.0, 2.0);
  x.set_requires_grad(true);
  {
    Tape<double> tape;
    auto loss = clf::sum_all(x);
    tape.backward(loss);
  }
  for (double g : x.grad()) REQUIRE(g == 1.0);

  x.zero_grad();
  {
    Tape<double> tape;
    auto loss = clf::sum_all(clf::mul(x, x));
    tape.backward(loss);
  }
  for (std::size_t i = 0; i < x.numel(); ++i)
    REQUIRE(x.grad()[i] == Catch::Approx(2.0 * x.values()[i]).margin(1e-12));
}

TEST_CASE("reusing a tensor in two branches sums contributions") {
  Rng rng(32);
  Tensor<double> x({5});
  x.fill_uniform(rng, -1.0, 1.0);
  x.set_requires_grad(true);
  auto a = Tensor<double>::from_vector({5}, {1, 2, 3, 4, 5});
  auto b = Tensor<double>::from_vector({5}, {5, 4, 3, 2, 1});
  {
    Tape<double> tape;
    auto loss =
        clf::sum_all(clf::add(clf::mul(x, a), clf::mul(x, b)));
    tape.backward(loss);
  }
  // Single-expression oracle: d/dx sum(x*(a+b)) = a + b.
  for (std::size_t i = 0; i < 5; ++i)
    REQUIRE(x.grad()[i] ==
            Catch::Approx(a.values()[i] + b.values()[i]).margin(1e-12));
}

TEST_CASE("backward contract violations") {
  Tensor<double> x({2}, 1.0);
  x.set_requires_grad(true);
  {
    Tape<double> tape;  // nothing recorded on it
    auto loss = Tensor<double>::scalar(1.0);
    loss.set_requires_grad(true);
    REQUIRE_THROWS_AS(tape.backward(loss), clf::contract_error);
  }
  {
    Tape<double> tape;
    auto y = clf::mul(x, x);
    REQUIRE_THROWS_AS(tape.backward(y), clf::contract_error);  // non-scalar
  }
  {
    Tape<double> tape;
    auto loss = clf::sum_all(clf::mul(x, x));
    tape.backward(loss);
    REQUIRE_THROWS_AS(tape.backward(loss), clf::contract_error);  // consumed
  }
}

TEST_CASE("ops record only under an active tape") {
  Tensor<double> x({3}, 2.0);
  x.set_requires_grad(true);
  auto y = clf::mul(x, x);  // no tape
  REQUIRE_FALSE(y.requires_grad());

  Tape<double> tape;
  {
    clf::NoGradScope<double> ng;
    auto z = clf::mul(x, x);
    REQUIRE_FALSE(z.requires_grad());
  }
  REQUIRE(tape.size() == 0);
  auto w = clf::mul(x, x);
  REQUIRE(w.requires_grad());
  REQUIRE(tape.size() == 1);
}

TEST_CASE("gradient accumulation across tapes is additive") {
  Tensor<double> x({2}, 3.0);
  x.set_requires_grad(true);
  for (int pass = 0; pass < 2; ++pass) {
    Tape<double> tape;
    tape.backward(clf::sum_all(x));
  }
  for (double g : x.grad()) REQUIRE(g == 2.0);
  x.zero_grad();
  for (double g : x.grad()) REQUIRE(g == 0.0);
}

TEST_CASE("non-finite production is reported, and can be suppressed") {
  FiniteCheckGuard guard;
  auto x = Tensor<double>::from_vector({1}, {-1.0});
  REQUIRE_THROWS_AS(clf::log(x), clf::numeric_error);
  REQUIRE_THROWS_AS(clf::div(Tensor<double>::from_vector({1}, {1.0}),
                             Tensor<double>::from_vector({1}, {0.0})),
                    clf::numeric_error);
  clf::set_finite_checks(false);
  auto y = clf::log(x);
  REQUIRE(std::isnan(y.values()[0]));
  clf::set_finite_checks(true);
}

TEST_CASE("peak allocation tracker observes tensor creation") {
  clf::alloc_stats::reset();
  { Tensor<double> t({16, 16}); }
  REQUIRE(clf::alloc_stats::max_numel() >= 256);
  clf::alloc_stats::reset();
  REQUIRE(clf::alloc_stats::max_numel() == 0);
}

TEST_CASE("identical seeds give bit-identical pipelines") {
  auto run = [] {
    Rng rng(777);
    Tensor<double> a({6, 6});
    Tensor<double> b({6, 6});
    a.fill_uniform(rng, -1.0, 1.0);
    b.fill_normal(rng, 0.0, 1.0);
    auto y = clf::softmax(clf::matmul(a, clf::relu(b)), 1);
    return y.values();
  };
  auto v1 = run();
  auto v2 = run();
  REQUIRE(std::memcmp(v1.data(), v2.data(), v1.size() * sizeof(double)) == 0);
}

// ---------------------------------------------------------------------------
// Finite differences for every differentiable op, 20 seeds each
// ---------------------------------------------------------------------------

TEST_CASE("finite differences: elementwise binaries") {
  fd_check_all_seeds("add", {{2, 3}, {2, 3}}, [](auto& in) {
    return weighted_sum(clf::add(in[0], in[1]), 1);
  });
  fd_check_all_seeds("add broadcast", {{2, 3}, {3}}, [](auto& in) {
    return weighted_sum(clf::add(in[0], in[1]), 2);
  });
  fd_check_all_seeds("sub", {{2, 3}, {2, 3}}, [](auto& in) {
    return weighted_sum(clf::sub(in[0], in[1]), 3);
  });
  fd_check_all_seeds("mul broadcast", {{2, 1, 3}, {2, 3}}, [](auto& in) {
    return weighted_sum(clf::mul(in[0], in[1]), 4);
  });
  FdOptions pos;
  pos.mixed_sign = false;
  pos.lo = 0.3;
  pos.hi = 1.4;
  fd_check_all_seeds(
      "div", {{2, 3}, {2, 3}},
      [](auto& in) { return weighted_sum(clf::div(in[0], in[1]), 5); }, pos);
  fd_check_all_seeds(
      "div broadcast", {{2, 3}, {2, 1}},
      [](auto& in) { return weighted_sum(clf::div(in[0], in[1]), 6); }, pos);
}

TEST_CASE("finite differences: elementwise unaries") {
  fd_check_all_seeds("scale", {{2, 3}}, [](auto& in) {
    return weighted_sum(clf::scale(in[0], 2.5), 10);
  });
  fd_check_all_seeds("add_scalar", {{2, 3}}, [](auto& in) {
    return weighted_sum(clf::add_scalar(in[0], -0.7), 11);
  });
  fd_check_all_seeds("exp", {{2, 3}}, [](auto& in) {
    return weighted_sum(clf::exp(in[0]), 12);
  });
  FdOptions pos;
  pos.mixed_sign = false;
  pos.lo = 0.3;
  pos.hi = 1.6;
  fd_check_all_seeds(
      "log", {{2, 3}},
      [](auto& in) { return weighted_sum(clf::log(in[0]), 13); }, pos);
  fd_check_all_seeds(
      "sqrt", {{2, 3}},
      [](auto& in) { return weighted_sum(clf::sqrt(in[0]), 14); }, pos);
  fd_check_all_seeds("relu", {{2, 3}}, [](auto& in) {
    return weighted_sum(clf::relu(in[0]), 15);
  });
  fd_check_all_seeds("elu", {{2, 3}}, [](auto& in) {
    return weighted_sum(clf::elu(in[0]), 16);
  });
  FdOptions cl;
  cl.mixed_sign = false;
  cl.lo = 0.2;
  cl.hi = 1.5;
  cl.avoid = {0.5, 1.2};
  fd_check_all_seeds(
      "clamp", {{2, 3}},
      [](auto& in) { return weighted_sum(clf::clamp(in[0], 0.5, 1.2), 17); },
      cl);
  FdOptions cm;
  cm.avoid = {0.6, -0.6};
  fd_check_all_seeds(
      "clamp_min", {{2, 3}},
      [](auto& in) { return weighted_sum(clf::clamp_min(in[0], 0.6), 18); },
      cm);
}

TEST_CASE("finite differences: matrix products") {
  fd_check_all_seeds("matmul", {{3, 4}, {4, 2}}, [](auto& in) {
    return weighted_sum(clf::matmul(in[0], in[1]), 20);
  });
  fd_check_all_seeds("bmm", {{2, 2, 3}, {2, 3, 2}}, [](auto& in) {
    return weighted_sum(clf::bmm(in[0], in[1]), 21);
  });
}

TEST_CASE("finite differences: conv2d") {
  fd_check_all_seeds("conv2d s1", {{1, 2, 4, 4}, {3, 2, 3, 3}}, [](auto& in) {
    return weighted_sum(clf::conv2d(in[0], in[1], 1, 1), 22);
  });
  fd_check_all_seeds("conv2d s2", {{2, 2, 5, 5}, {2, 2, 3, 3}}, [](auto& in) {
    return weighted_sum(clf::conv2d(in[0], in[1], 2, 1), 23);
  });
}

TEST_CASE("finite differences: softmax family and reductions") {
  fd_check_all_seeds("softmax dim1", {{3, 4}}, [](auto& in) {
    return weighted_sum(clf::softmax(in[0], 1), 30);
  });
  fd_check_all_seeds("softmax dim0", {{3, 4}}, [](auto& in) {
    return weighted_sum(clf::softmax(in[0], 0), 31);
  });
  fd_check_all_seeds("log_softmax", {{3, 4}}, [](auto& in) {
    return weighted_sum(clf::log_softmax(in[0], 1), 32);
  });
  fd_check_all_seeds("sum dim", {{2, 3, 2}}, [](auto& in) {
    return weighted_sum(clf::sum(in[0], 1), 33);
  });
  fd_check_all_seeds("sum keepdim", {{2, 3}}, [](auto& in) {
    return weighted_sum(clf::sum(in[0], 1, true), 34);
  });
  fd_check_all_seeds("sum_all", {{3, 3}}, [](auto& in) {
    return clf::scale(clf::sum_all(in[0]), 1.7);
  });
  fd_check_all_seeds("mean_all", {{3, 3}}, [](auto& in) {
    return clf::scale(clf::mean_all(in[0]), 2.1);
  });
}

TEST_CASE("finite differences: shape ops") {
  fd_check_all_seeds("transpose", {{3, 4}}, [](auto& in) {
    return weighted_sum(clf::transpose(in[0], 0, 1), 40);
  });
  fd_check_all_seeds("transpose inner", {{2, 3, 4}}, [](auto& in) {
    return weighted_sum(clf::transpose(in[0], 1, 2), 41);
  });
  fd_check_all_seeds("reshape", {{2, 6}}, [](auto& in) {
    return weighted_sum(clf::reshape(in[0], {3, 4}), 42);
  });
  fd_check_all_seeds("concat", {{2, 2}, {2, 3}}, [](auto& in) {
    return weighted_sum(clf::concat(in[0], in[1], 1), 43);
  });
}

TEST_CASE("finite differences: normalization layers") {
  fd_check_all_seeds("layer_norm", {{3, 4}, {4}, {4}}, [](auto& in) {
    return weighted_sum(clf::layer_norm(in[0], in[1], in[2]), 50);
  });
  fd_check_all_seeds("group_norm", {{2, 4, 3, 3}, {4}, {4}}, [](auto& in) {
    return weighted_sum(clf::group_norm(in[0], in[1], in[2], 2), 51);
  });
}

TEST_CASE("finite differences: composite expression") {
  // exp/relu/matmul/softmax chained, gradients still correct end to end.
  fd_check_all_seeds("composite", {{3, 4}, {4, 3}}, [](auto& in) {
    auto h = clf::relu(clf::matmul(in[0], in[1]));
    auto p = clf::softmax(clf::add_scalar(h, 0.1), 1);
    return weighted_sum(clf::log(clf::add_scalar(p, 1.0)), 60);
  });
}
