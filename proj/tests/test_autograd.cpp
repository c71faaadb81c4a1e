// Reverse-mode tape: every op is checked against central finite differences
// in double precision, plus exact-value checks for the structural ops and
// the attention building blocks.

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <functional>
#include <random>

#include "doctest.h"
#include "langseg/nn.hpp"
#include "langseg/tape.hpp"

using namespace langseg::nn;
using Ref = Tape::Ref;

namespace {

// Runs `build` once with gradients to fill Param::grad, then re-runs it as a
// pure forward pass while finite-differencing every registered parameter.
struct FDHarness {
  ParamStore ps;
  std::mt19937_64 rng{42};

  void check_all(const std::function<Ref(Tape&)>& build, double tol = 1e-6,
                 int coords = 6) {
    ps.zero_grads();
    {
      Tape t;
      Ref loss = build(t);
      t.backward(loss);
      t.accumulate_param_grads();
    }
    auto loss_value = [&]() {
      Tape t;
      return t.val(build(t))[0];
    };
    for (const auto& p : ps.all()) {
      const double err = fd_check_param(*p, p->grad, loss_value, coords, rng);
      CAPTURE(p->name);
      CHECK(err < tol);
    }
  }
};

Tensor randt(std::vector<int> shape, std::mt19937_64& rng, double s = 1.0) {
  return Tensor::randn(std::move(shape), rng, s);
}

}  // namespace

TEST_CASE("elementwise chain matches finite differences") {
  FDHarness h;
  std::mt19937_64 seed(1);
  Param& a = h.ps.add("a", randt({3, 4}, seed));
  Param& b = h.ps.add("b", randt({3, 4}, seed));
  const Tensor r = randt({3, 4}, seed);
  h.check_all([&](Tape& t) {
    Ref x = t.leaf(a);
    Ref y = t.leaf(b);
    // keep log/div arguments strictly positive
    Ref pos = t.add_scalar(t.sigmoid(y), 0.5);
    Ref z = t.add(t.mul(x, t.gelu(x)), t.div(t.log(pos), pos));
    z = t.sub(t.scale(z, 0.7), t.clamp(x, -0.45, 0.45));
    z = t.add_scalar(z, 0.1);
    return t.mean_all(t.mul(z, t.constant(r)));
  });
}

TEST_CASE("sum_all routes a uniform gradient") {
  FDHarness h;
  std::mt19937_64 seed(2);
  Param& a = h.ps.add("a", randt({2, 5}, seed));
  h.check_all([&](Tape& t) { return t.sum_all(t.sigmoid(t.leaf(a))); });
}

TEST_CASE("matmul family matches finite differences") {
  FDHarness h;
  std::mt19937_64 seed(3);
  Param& a = h.ps.add("a", randt({3, 4}, seed, 0.5));
  Param& b = h.ps.add("b", randt({4, 5}, seed, 0.5));
  Param& c = h.ps.add("c", randt({6, 4}, seed, 0.5));
  Param& row = h.ps.add("row", randt({1, 5}, seed, 0.5));
  const Tensor r1 = randt({3, 5}, seed);
  const Tensor r2 = randt({3, 6}, seed);
  h.check_all([&](Tape& t) {
    Ref ab = t.add_row(t.matmul(t.leaf(a), t.leaf(b)), t.leaf(row));  // (3,5)
    Ref ac = t.matmul_nt(t.leaf(a), t.leaf(c));                       // (3,6)
    Ref l1 = t.mean_all(t.mul(ab, t.constant(r1)));
    Ref l2 = t.mean_all(t.mul(ac, t.constant(r2)));
    return t.add(l1, l2);
  });
}

TEST_CASE("softmax rows normalize, mask, and differentiate correctly") {
  std::mt19937_64 seed(4);
  FDHarness h;
  Param& s = h.ps.add("scores", randt({3, 5}, seed));
  const Tensor r = randt({3, 5}, seed);
  const std::vector<std::uint8_t> mask = {1, 0, 1, 1, 0};

  {
    Tape t;
    Ref y = t.softmax_rows(t.leaf(s), &mask);
    const Tensor& Y = t.val(y);
    for (int i = 0; i < 3; ++i) {
      double rowsum = 0;
      for (int j = 0; j < 5; ++j) rowsum += Y.at(i, j);
      CHECK(rowsum == doctest::Approx(1.0).epsilon(1e-12));
      CHECK(Y.at(i, 1) == 0.0);  // masked keys get exactly zero weight
      CHECK(Y.at(i, 4) == 0.0);
    }
  }

  h.check_all([&](Tape& t) {
    Ref y = t.softmax_rows(t.leaf(s), &mask);
    return t.mean_all(t.mul(y, t.constant(r)));
  }, 1e-5, 10);

  // Masked columns receive no gradient at all.
  CHECK(s.grad.at(0, 1) == 0.0);
  CHECK(s.grad.at(2, 4) == 0.0);

  Tape t;
  const std::vector<std::uint8_t> all_masked = {0, 0, 0};
  CHECK_THROWS(t.softmax_rows(t.constant(randt({2, 3}, seed)), &all_masked));
}

TEST_CASE("layernorm values and gradients") {
  std::mt19937_64 seed(5);
  FDHarness h;
  Param& x = h.ps.add("x", randt({4, 6}, seed));
  Param& g = h.ps.add("gamma", Tensor::full({1, 6}, 1.0));
  Param& b = h.ps.add("beta", Tensor::zeros({1, 6}));
  const Tensor r = randt({4, 6}, seed);

  {
    // A zero input row normalizes to zero, so the output is exactly beta.
    Tape t;
    Tensor beta({1, 3}, {0.3, -0.2, 0.9});
    Ref y = t.layernorm(t.constant(Tensor::zeros({2, 3})),
                        t.constant(Tensor::full({1, 3}, 1.0)), t.constant(beta));
    for (int i = 0; i < 2; ++i)
      for (int j = 0; j < 3; ++j)
        CHECK(t.val(y).at(i, j) == doctest::Approx(beta[j]));
    // Normalized rows have mean ~0 and variance ~1 for generic input.
    Ref z = t.layernorm(t.constant(randt({1, 64}, seed)),
                        t.constant(Tensor::full({1, 64}, 1.0)),
                        t.constant(Tensor::zeros({1, 64})));
    double mean = 0, var = 0;
    for (int j = 0; j < 64; ++j) mean += t.val(z).at(0, j);
    mean /= 64;
    for (int j = 0; j < 64; ++j) var += t.val(z).at(0, j) * t.val(z).at(0, j);
    var /= 64;
    CHECK(mean == doctest::Approx(0.0).epsilon(1e-10));
    CHECK(var == doctest::Approx(1.0).epsilon(1e-3));  // eps skews it slightly
  }

  h.check_all([&](Tape& t) {
    Ref y = t.layernorm(t.leaf(x), t.leaf(g), t.leaf(b));
    return t.mean_all(t.mul(y, t.constant(r)));
  }, 1e-5);
}

TEST_CASE("structural ops route gradients exactly") {
  std::mt19937_64 seed(6);
  FDHarness h;
  Param& a = h.ps.add("a", randt({2, 6}, seed));
  Param& b = h.ps.add("b", randt({3, 6}, seed));
  Param& tbl = h.ps.add("table", randt({5, 4}, seed));
  const Tensor r = randt({5, 4}, seed);
  const Tensor re = randt({4, 4}, seed);
  h.check_all([&](Tape& t) {
    Ref cat = t.concat_rows({t.leaf(a), t.leaf(b)});       // (5,6)
    Ref left = t.slice_cols(cat, 0, 2);                    // (5,2)
    Ref right = t.slice_cols(cat, 2, 6);                   // (5,4)
    Ref mixed = t.concat_cols({t.slice_cols(right, 0, 2), left});  // (5,4)
    Ref rs = t.reshape(t.slice_rows(mixed, 0, 5), {5, 4});
    Ref l1 = t.mean_all(t.mul(rs, t.constant(r)));
    // repeated ids must accumulate into the same table row
    Ref emb = t.embed_rows(t.leaf(tbl), {0, 2, 2, 4});
    Ref l2 = t.mean_all(t.mul(emb, t.constant(re)));
    return t.add(l1, l2);
  });

  // embed gradient lands only on referenced rows.
  CHECK(tbl.grad.at(1, 0) == 0.0);
  CHECK(tbl.grad.at(3, 2) == 0.0);
}

TEST_CASE("im2col3x3 extracts zero-padded neighborhoods") {
  std::mt19937_64 seed(7);
  const int hh = 3, ww = 4, c = 2;
  Tensor img = randt({hh * ww, c}, seed);
  Tape t;
  Ref y = t.im2col3x3(t.constant(img), hh, ww);
  const Tensor& Y = t.val(y);
  CHECK(Y.rows() == hh * ww);
  CHECK(Y.cols() == 9 * c);
  // Center tap (k=4) is the pixel itself.
  for (int p = 0; p < hh * ww; ++p)
    for (int ch = 0; ch < c; ++ch)
      CHECK(Y.at(p, 4 * c + ch) == img.at(p, ch));
  // Top-left pixel: all taps above/left fall outside and are zero.
  for (int k : {0, 1, 2, 3, 6})
    for (int ch = 0; ch < c; ++ch) CHECK(Y.at(0, k * c + ch) == 0.0);
  // Tap k=5 of pixel (0,0) is pixel (0,1).
  for (int ch = 0; ch < c; ++ch) CHECK(Y.at(0, 5 * c + ch) == img.at(1, ch));

  FDHarness h;
  Param& x = h.ps.add("x", randt({hh * ww, c}, seed));
  const Tensor r = randt({hh * ww, 9 * c}, seed);
  h.check_all([&](Tape& tp) {
    return tp.mean_all(tp.mul(tp.im2col3x3(tp.leaf(x), hh, ww), tp.constant(r)));
  });
}

TEST_CASE("space_to_depth and nearest upsampling are exact permutations") {
  std::mt19937_64 seed(8);
  const int hh = 4, ww = 4, c = 3;
  Tensor img = randt({hh * ww, c}, seed);
  Tape t;
  Ref d = t.space_to_depth(t.constant(img), hh, ww, 2);
  CHECK(t.val(d).rows() == 4);
  CHECK(t.val(d).cols() == 4 * c);
  // Block (0,0): pixels (0,0),(0,1),(1,0),(1,1) in that order.
  for (int ch = 0; ch < c; ++ch) {
    CHECK(t.val(d).at(0, 0 * c + ch) == img.at(0, ch));
    CHECK(t.val(d).at(0, 1 * c + ch) == img.at(1, ch));
    CHECK(t.val(d).at(0, 2 * c + ch) == img.at(ww, ch));
    CHECK(t.val(d).at(0, 3 * c + ch) == img.at(ww + 1, ch));
  }
  Ref u = t.upsample_nearest2x(t.constant(img), hh, ww);
  CHECK(t.val(u).rows() == 4 * hh * ww);
  for (int ch = 0; ch < c; ++ch) {
    CHECK(t.val(u).at(0, ch) == img.at(0, ch));
    CHECK(t.val(u).at(1, ch) == img.at(0, ch));
    CHECK(t.val(u).at(2 * ww, ch) == img.at(0, ch));
  }

  FDHarness h;
  Param& x = h.ps.add("x", randt({hh * ww, c}, seed));
  const Tensor r1 = randt({4, 4 * c}, seed);
  const Tensor r2 = randt({4 * hh * ww, c}, seed);
  h.check_all([&](Tape& tp) {
    Ref a = tp.mean_all(
        tp.mul(tp.space_to_depth(tp.leaf(x), hh, ww, 2), tp.constant(r1)));
    Ref b = tp.mean_all(
        tp.mul(tp.upsample_nearest2x(tp.leaf(x), hh, ww), tp.constant(r2)));
    return tp.add(a, b);
  });
}

TEST_CASE("bilinear upsampling preserves constants and differentiates") {
  std::mt19937_64 seed(9);
  {
    Tape t;
    Ref u = t.upsample_bilinear(t.constant(Tensor::full({2 * 3, 1}, 0.37)), 2, 3,
                                7, 11);
    for (std::int64_t i = 0; i < t.val(u).size(); ++i)
      CHECK(t.val(u)[i] == doctest::Approx(0.37).epsilon(1e-12));
    // Identity when output size equals input size (half-pixel centers align).
    Tensor img = randt({2 * 3, 2}, seed);
    Ref id = t.upsample_bilinear(t.constant(img), 2, 3, 2, 3);
    for (std::int64_t i = 0; i < img.size(); ++i)
      CHECK(t.val(id)[i] == doctest::Approx(img[i]).epsilon(1e-12));
  }
  FDHarness h;
  Param& x = h.ps.add("x", randt({2 * 3, 2}, seed));
  const Tensor r = randt({5 * 7, 2}, seed);
  h.check_all([&](Tape& tp) {
    return tp.mean_all(
        tp.mul(tp.upsample_bilinear(tp.leaf(x), 2, 3, 5, 7), tp.constant(r)));
  });
}

TEST_CASE("leaf nodes are memoized and gradients accumulate across tapes") {
  std::mt19937_64 seed(10);
  ParamStore ps;
  Param& a = ps.add("a", randt({2, 2}, seed));
  Tape t;
  Ref l1 = t.leaf(a);
  Ref l2 = t.leaf(a);
  CHECK(l1 == l2);

  // Using the leaf twice doubles its gradient contribution.
  Ref loss = t.sum_all(t.add(t.leaf(a), t.leaf(a)));
  t.backward(loss);
  t.accumulate_param_grads();
  CHECK(a.grad.at(0, 0) == doctest::Approx(2.0));

  // A second tape adds on top, scaled.
  Tape t2;
  t2.backward(t2.sum_all(t2.leaf(a)));
  t2.accumulate_param_grads(0.5);
  CHECK(a.grad.at(0, 0) == doctest::Approx(2.5));

  ps.zero_grads();
  CHECK(a.grad.at(0, 0) == 0.0);
  CHECK(ps.total_size() == 4);
}

TEST_CASE("multi-head attention: masking, singleton readout, gradients") {
  std::mt19937_64 rng(11);
  FDHarness h;
  MultiHeadAttention mha(h.ps, "mha", 6, 6, 8, 2, true, rng);
  std::mt19937_64 seed(12);
  const Tensor q = randt({3, 6}, seed);
  Tensor kv = randt({5, 6}, seed);
  const std::vector<std::uint8_t> mask = {1, 1, 1, 0, 0};
  const Tensor r = randt({3, 8}, seed);

  // Masked key rows cannot influence the output.
  Tensor out_before, out_after;
  {
    Tape t;
    out_before = t.val(mha.forward(t, t.constant(q), t.constant(kv), &mask));
  }
  kv.at(3, 0) += 100.0;
  kv.at(4, 2) -= 50.0;
  {
    Tape t;
    out_after = t.val(mha.forward(t, t.constant(q), t.constant(kv), &mask));
  }
  for (std::int64_t i = 0; i < out_before.size(); ++i)
    CHECK(out_before[i] == out_after[i]);

  h.check_all([&](Tape& t) {
    Ref y = mha.forward(t, t.constant(q), t.constant(kv), &mask);
    return t.mean_all(t.mul(y, t.constant(r)));
  }, 1e-5);

  // With a single key/value token and no output projection, every query
  // position reads exactly that token's value projection.
  ParamStore ps2;
  MultiHeadAttention plain(ps2, "ro", 6, 6, 8, 2, false, rng);
  const Tensor kv1 = randt({1, 6}, seed);
  Tape t;
  Ref got = plain.forward(t, t.constant(q), t.constant(kv1));
  Ref want = t.matmul(t.constant(kv1), t.leaf(*plain.wv()));
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 8; ++j)
      CHECK(t.val(got).at(i, j) == doctest::Approx(t.val(want).at(0, j)));
}

TEST_CASE("transformer block differentiates through every parameter") {
  std::mt19937_64 rng(13);
  FDHarness h;
  TransformerBlock blk(h.ps, "blk", 8, 2, 2, rng);
  std::mt19937_64 seed(14);
  const Tensor x = randt({5, 8}, seed);
  const Tensor r = randt({5, 8}, seed);
  h.check_all([&](Tape& t) {
    Ref y = blk.forward(t, t.constant(x));
    return t.mean_all(t.mul(y, t.constant(r)));
  }, 1e-4, 4);
}

TEST_CASE("linear layers with and without bias differentiate") {
  std::mt19937_64 rng(15);
  FDHarness h;
  Linear lb(h.ps, "lb", 4, 3, true, rng);
  Linear ln(h.ps, "ln", 4, 3, false, rng);
  std::mt19937_64 seed(16);
  const Tensor x = randt({6, 4}, seed);
  const Tensor r = randt({6, 3}, seed);
  CHECK(lb.bias() != nullptr);
  CHECK(ln.bias() == nullptr);
  h.check_all([&](Tape& t) {
    Ref y = t.add(lb.forward(t, t.constant(x)), ln.forward(t, t.constant(x)));
    return t.mean_all(t.mul(y, t.constant(r)));
  });
}

TEST_CASE("2-d sinusoidal positions encode row and column separately") {
  const int hh = 3, ww = 4, c = 8;
  Tensor p = sinusoidal_pos_2d(hh, ww, c);
  CHECK(p.rows() == hh * ww);
  CHECK(p.cols() == c);
  for (std::int64_t i = 0; i < p.size(); ++i) {
    CHECK(p[i] <= 1.0);
    CHECK(p[i] >= -1.0);
  }
  // First half of the channels depends only on the row index.
  for (int r = 0; r < hh; ++r)
    for (int col = 1; col < ww; ++col)
      for (int ch = 0; ch < c / 2; ++ch)
        CHECK(p.at(r * ww + col, ch) == p.at(r * ww, ch));
  // Second half depends only on the column index.
  for (int col = 0; col < ww; ++col)
    for (int r = 1; r < hh; ++r)
      for (int ch = c / 2; ch < c; ++ch)
        CHECK(p.at(r * ww + col, ch) == p.at(col, ch));
  // Distinct grid positions get distinct embeddings.
  for (int a = 0; a < hh * ww; ++a)
    for (int b = a + 1; b < hh * ww; ++b) {
      double diff = 0;
      for (int ch = 0; ch < c; ++ch) diff += std::abs(p.at(a, ch) - p.at(b, ch));
      CHECK(diff > 1e-9);
    }
  CHECK_THROWS(sinusoidal_pos_2d(2, 2, 6));
}
