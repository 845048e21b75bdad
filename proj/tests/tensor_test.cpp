#include <cmath>
#include <functional>
#include <random>

#include <gtest/gtest.h>

#include "mmtfd/errors.hpp"
#include "mmtfd/gradcheck.hpp"
#include "mmtfd/tensor.hpp"

using namespace mmtfd;

namespace {

Tensor randn(Shape shape, unsigned seed, bool grad = true) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g;
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = g(rng);
  return Tensor::from(std::move(shape), std::move(v), grad);
}

// Plain central differences on a copy of the values, written independently
// of the library's gradcheck helpers.
std::vector<double> fd_grad(const std::function<double(const std::vector<double>&)>& f,
                            std::vector<double> x, double h = 1e-3) {
  std::vector<double> g(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double keep = x[i];
    x[i] = keep + h;
    const double up = f(x);
    x[i] = keep - h;
    const double down = f(x);
    x[i] = keep;
    g[i] = (up - down) / (2 * h);
  }
  return g;
}

double rel_err(const std::vector<double>& a, const std::vector<double>& b) {
  double diff = 0, scale = 1e-6;
  for (std::size_t i = 0; i < a.size(); ++i) {
    diff = std::max(diff, std::abs(a[i] - b[i]));
    scale = std::max({scale, std::abs(a[i]), std::abs(b[i])});
  }
  return diff / scale;
}

void expect_matrix(const Tensor& t, std::vector<double> want, double tol = 1e-12) {
  ASSERT_EQ(t.numel(), want.size());
  for (std::size_t i = 0; i < want.size(); ++i) EXPECT_NEAR(t.data()[i], want[i], tol) << i;
}

}  // namespace

TEST(Matmul, IdentityAndInnerProduct) {
  const auto I = Tensor::matrix({{1, 0}, {0, 1}});
  const auto B = Tensor::matrix({{3, 4}, {5, 6}});
  expect_matrix(matmul(I, B), {3, 4, 5, 6});
  const auto r = matmul(Tensor::matrix({{1, 2}}), Tensor::matrix({{3}, {4}}));
  EXPECT_EQ(r.shape(), (Shape{1, 1}));
  EXPECT_DOUBLE_EQ(r.at(0), 11.0);
}

TEST(Matmul, ShapeMismatchIsDimensionError) {
  EXPECT_THROW(matmul(Tensor::zeros({2, 3}), Tensor::zeros({2, 3})), DimensionError);
  EXPECT_THROW(add(Tensor::zeros({2, 3}), Tensor::zeros({3, 2})), DimensionError);
}

TEST(Matmul, GradientOfSumMatchesCentralDifferences) {
  for (unsigned seed = 0; seed < 5; ++seed) {
    auto a = randn({5, 7}, seed), b = randn({7, 3}, seed + 100);
    backward(sum(matmul(a, b)));
    auto fa = [&](const std::vector<double>& v) {
      NoGradGuard ng;
      return sum(matmul(Tensor::from({5, 7}, v), b)).item();
    };
    auto fb = [&](const std::vector<double>& v) {
      NoGradGuard ng;
      return sum(matmul(a, Tensor::from({7, 3}, v))).item();
    };
    EXPECT_LE(rel_err(a.grad().to_vector(), fd_grad(fa, a.to_vector())), 1e-4);
    EXPECT_LE(rel_err(b.grad().to_vector(), fd_grad(fb, b.to_vector())), 1e-4);
  }
}

TEST(Softmax, Examples) {
  expect_matrix(softmax_rows(Tensor::matrix({{0, 0, 0}})), {1.0 / 3, 1.0 / 3, 1.0 / 3});
  expect_matrix(softmax_rows(Tensor::matrix({{1000, 0}})), {1, 0});
  expect_matrix(softmax_rows(Tensor::matrix({{1, 2}})), {0.26894, 0.73106}, 1e-5);
}

TEST(Softmax, RowsAreDistributions) {
  const auto s = softmax_rows(scale(randn({6, 9}, 3, false), 20.0));
  for (std::size_t r = 0; r < 6; ++r) {
    double total = 0;
    for (std::size_t c = 0; c < 9; ++c) {
      EXPECT_GE(s.at(r, c), 0.0);
      total += s.at(r, c);
    }
    EXPECT_NEAR(total, 1.0, 1e-6);
  }
}

TEST(Backward, QuadraticAndRelu) {
  auto t = Tensor::from({2}, {1, 2}, true);
  backward(scale(sum(mul(t, t)), 0.5));
  expect_matrix(t.grad(), {1, 2});

  auto u = Tensor::from({2}, {-1, 2}, true);
  backward(sum(relu(u)));
  expect_matrix(u.grad(), {0, 1});
}

TEST(Backward, RejectsNonScalarOrUntapedLoss) {
  auto t = randn({2, 2}, 1);
  EXPECT_THROW(backward(mul(t, t)), ContractError);
  EXPECT_THROW(backward(Tensor::scalar(1.0)), ContractError);
}

TEST(Backward, AccumulatesAcrossCalls) {
  auto t = Tensor::from({1}, {3}, true);
  backward(mul(t, t));
  backward(mul(t, t));
  EXPECT_DOUBLE_EQ(t.grad().item(), 12.0);
  t.zero_grad();
  EXPECT_FALSE(t.has_grad());
}

TEST(Backward, SecondOrderThroughCreateGraph) {
  // f = x^3 -> f' = 3x^2 -> f'' = 6x
  auto x = Tensor::from({1}, {2.0}, true);
  const Tensor xs[] = {x};
  auto g = gradients(mul(mul(x, x), x), xs, true);
  EXPECT_DOUBLE_EQ(g[0].item(), 12.0);
  auto gg = gradients(g[0], xs);
  EXPECT_DOUBLE_EQ(gg[0].item(), 12.0);
}

TEST(Backward, UnusedInputsGetZeros) {
  auto a = randn({2, 2}, 1), b = randn({3}, 2);
  const Tensor wrt[] = {a, b};
  auto g = gradients(sum(a), wrt);
  for (double v : g[1].data()) EXPECT_EQ(v, 0.0);
}

TEST(Backward, NoGradGuardStopsRecording) {
  auto a = randn({2, 2}, 1);
  NoGradGuard ng;
  EXPECT_FALSE(grad_enabled());
  EXPECT_FALSE(sum(a).requires_grad());
}

TEST(Tape, TopologicalAndUnique) {
  auto a = randn({3, 3}, 1);
  auto b = mul(a, a);
  auto loss = sum(add(b, b));  // b is shared
  const auto tape = Tape::record_from(loss);
  std::map<const detail::Node*, std::size_t> pos;
  for (std::size_t i = 0; i < tape.size(); ++i) {
    EXPECT_TRUE(pos.emplace(tape.nodes()[i].id(), i).second) << "node visited twice";
  }
  EXPECT_LT(pos.at(a.id()), pos.at(b.id()));
  EXPECT_EQ(pos.at(loss.id()), tape.size() - 1);
}

TEST(Sgd, FirstAndSecondStep) {
  Params p{{"w", Tensor::from({1}, {1.0}, true)}};
  SgdState st{0.1, 0.9, 0.0, {}};
  p["w"].set_grad(Tensor::from({1}, {1.0}));
  sgd_step(p, st);
  EXPECT_NEAR(p["w"].item(), 0.9, 1e-15);
  p["w"].set_grad(Tensor::from({1}, {1.0}));
  sgd_step(p, st);
  EXPECT_NEAR(st.velocity["w"][0], 1.9, 1e-15);
  EXPECT_NEAR(p["w"].item(), 0.71, 1e-15);
}

TEST(Sgd, ZeroGradientIsFixedPointAndMissingGradThrows) {
  Params p{{"w", Tensor::from({2}, {0.5, -2.0}, true)}};
  SgdState st{0.1, 0.9, 0.0, {}};
  p["w"].set_grad(Tensor::zeros({2}));
  sgd_step(p, st);
  expect_matrix(p["w"], {0.5, -2.0});
  p["w"].zero_grad();
  EXPECT_THROW(sgd_step(p, st), ContractError);
}

TEST(Sgd, WeightDecayFoldsIntoGradient) {
  Params p{{"w", Tensor::from({1}, {2.0}, true)}};
  SgdState st{0.1, 0.0, 0.5, {}};
  p["w"].set_grad(Tensor::zeros({1}));
  sgd_step(p, st);
  EXPECT_NEAR(p["w"].item(), 2.0 - 0.1 * 0.5 * 2.0, 1e-15);
}

TEST(Losses, CrossEntropyUniformAndMse) {
  const int labels[] = {2};
  EXPECT_NEAR(cross_entropy(Tensor::matrix({{0.3, 0.3, 0.3}}), labels).item(), std::log(3.0), 1e-12);
  EXPECT_NEAR(mse(Tensor::from({2}, {1, 2}), Tensor::from({2}, {0, 0})).item(), 2.5, 1e-12);
  const int bad[] = {3};
  EXPECT_THROW(cross_entropy(Tensor::matrix({{0, 0, 0}}), bad), ContractError);
}

TEST(Composites, LayerNormNormalizesRows) {
  const auto x = randn({4, 10}, 7, false);
  const auto y = layer_norm(x, Tensor::full({10}, 1.0), Tensor::zeros({10}), 0.0);
  for (std::size_t r = 0; r < 4; ++r) {
    double m = 0, v = 0;
    for (std::size_t c = 0; c < 10; ++c) m += y.at(r, c) / 10;
    for (std::size_t c = 0; c < 10; ++c) v += (y.at(r, c) - m) * (y.at(r, c) - m) / 10;
    EXPECT_NEAR(m, 0.0, 1e-12);
    EXPECT_NEAR(v, 1.0, 1e-9);
  }
}

TEST(Composites, LinearAndConcat) {
  const auto x = Tensor::matrix({{1, 2}});
  const auto w = Tensor::matrix({{1, 0, 2}, {0, 1, 3}});
  expect_matrix(linear(x, w, Tensor::from({3}, {1, 1, 1})), {2, 3, 9});
  const Tensor parts[] = {Tensor::matrix({{1}, {2}}), Tensor::matrix({{3, 4}, {5, 6}})};
  expect_matrix(concat_cols(parts), {1, 3, 4, 2, 5, 6});
  expect_matrix(transpose(Tensor::matrix({{1, 2, 3}})), {1, 2, 3});
  EXPECT_EQ(transpose(Tensor::matrix({{1, 2, 3}})).shape(), (Shape{3, 1}));
}

TEST(KinkRecorder, RecordsReluSigns) {
  KinkRecorder rec;
  relu(Tensor::from({3}, {-1.0, 0.0, 2.0}));
  EXPECT_EQ(rec.pattern, (std::vector<bool>{false, false, true}));
}

TEST(GradCheck, CompositeGraphMatches) {
  auto f = [](std::span<const Tensor> in) {
    auto h = relu(linear(in[0], in[1], in[2]));
    return mean(mul(softmax_rows(h), log_softmax_rows(h)));
  };
  const auto r = check_gradients("composite", f, {randn({4, 5}, 1), randn({5, 6}, 2), randn({6}, 3)});
  EXPECT_TRUE(r.passed) << r.max_rel_error;
  EXPECT_LE(r.max_rel_error, 1e-4);
}

TEST(GradCheck, DetectsAWrongGradient) {
  // A hand-built op whose backward is deliberately off by a factor of two.
  auto f = [](std::span<const Tensor> in) {
    const Tensor& a = in[0];
    std::vector<double> v = a.to_vector();
    for (auto& x : v) x = x * x;
    auto out = Tensor::make_result(a.shape(), v, {a}, [](const Tensor& o, const Tensor& g) {
      (void)o;
      return std::vector<Tensor>{scale(g, 1.0)};
    });
    return sum(out);
  };
  EXPECT_FALSE(check_gradients("bad", f, {randn({3}, 1)}).passed);
}
