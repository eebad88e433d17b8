#include <doctest.h>

#include <cmath>
#include <functional>
#include <random>

#include "adaptlm/autodiff.hpp"
#include "adaptlm/error.hpp"
#include "test_util.hpp"

using namespace adaptlm;

namespace {

// Gradient check harness. `build` maps input vars to an output var; the output
// is contracted with fixed random weights so every output element contributes.
// Analytic gradients (in T) are compared against double-precision central
// differences. Relative error uses a denominator floor of 1e-4 so that
// gradients that are zero up to roundoff do not dominate.
struct GradCase {
  std::vector<Tensor<double>> inputs;
  std::function<Var(Tape<double>&, const std::vector<Var>&)> build_d;
  std::function<Var(Tape<float>&, const std::vector<Var>&)> build_f;
};

template <Real T>
Var contract(Tape<T>& tape, Var out, std::uint64_t seed) {
  const auto& shape = tape.value(out).shape();
  Tensor<T> w(shape);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (auto& x : w.data()) x = static_cast<T>(u(rng));
  return ad::sum(tape, ad::mul(tape, out, tape.constant(std::move(w))));
}

double loss_double(const GradCase& c, const std::vector<Tensor<double>>& inputs) {
  Tape<double> tape;
  std::vector<Var> vars;
  for (const auto& t : inputs) vars.push_back(tape.variable(t));
  return tape.value(contract(tape, c.build_d(tape, vars), 17))[0];
}

template <Real T>
std::vector<Tensor<T>> analytic(const GradCase& c) {
  Tape<T> tape;
  std::vector<Var> vars;
  for (const auto& t : c.inputs) vars.push_back(tape.variable(t.template cast<T>()));
  Var out;
  if constexpr (std::is_same_v<T, double>) {
    out = c.build_d(tape, vars);
  } else {
    out = c.build_f(tape, vars);
  }
  tape.backward(contract(tape, out, 17));
  std::vector<Tensor<T>> grads;
  for (const auto v : vars) grads.push_back(tape.grad(v));
  return grads;
}

template <Real T>
double max_rel_error(const GradCase& c) {
  const auto grads = analytic<T>(c);
  const double h = 1e-6;
  double worst = 0.0;
  auto inputs = c.inputs;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    for (std::size_t j = 0; j < inputs[i].size(); ++j) {
      const double orig = inputs[i][j];
      inputs[i][j] = orig + h;
      const double up = loss_double(c, inputs);
      inputs[i][j] = orig - h;
      const double down = loss_double(c, inputs);
      inputs[i][j] = orig;
      const double numeric = (up - down) / (2 * h);
      worst = std::max(worst, testing::rel_error(static_cast<double>(grads[i][j]), numeric, 1e-4));
    }
  }
  return worst;
}

Tensor<double> random_tensor(Shape shape, std::uint64_t seed, double scale = 1.0) {
  Tensor<double> t(std::move(shape));
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, scale);
  for (auto& x : t.data()) x = n(rng);
  return t;
}

#define BOTH(expr)                                                                            \
  [](Tape<double>& tape, const std::vector<Var>& v) { using T = double; (void)sizeof(T); return expr; }, \
  [](Tape<float>& tape, const std::vector<Var>& v) { using T = float; (void)sizeof(T); return expr; }

void check_case(const GradCase& c) {
  CHECK(max_rel_error<double>(c) < 1e-5);
  CHECK(max_rel_error<float>(c) < 1e-4);
}

}  // namespace

TEST_CASE("gradient: add, mul, sum") {
  check_case({{random_tensor({3, 4}, 1), random_tensor({3, 4}, 2)}, BOTH(ad::add(tape, v[0], v[1]))});
  check_case({{random_tensor({3, 4}, 3), random_tensor({3, 4}, 4)}, BOTH(ad::mul(tape, v[0], v[1]))});
  check_case({{random_tensor({5}, 5)}, BOTH(ad::sum(tape, v[0]))});
  check_case({{random_tensor({2, 2}, 6)}, BOTH(ad::mul(tape, v[0], v[0]))});
}

TEST_CASE("gradient: matmul") {
  check_case({{random_tensor({3, 5}, 7), random_tensor({5, 4}, 8)}, BOTH(ad::matmul(tape, v[0], v[1]))});
}

TEST_CASE("gradient: embedding with repeated ids") {
  static const std::vector<TokenId> ids{2, 0, 2, 3};
  check_case({{random_tensor({4, 3}, 9)}, BOTH(ad::embedding(tape, v[0], ids))});
}

TEST_CASE("gradient: rmsnorm") {
  auto gain = random_tensor({6}, 11, 0.3);
  for (auto& g : gain.data()) g += 1.0;
  check_case({{random_tensor({4, 6}, 10), gain}, BOTH(ad::rmsnorm(tape, v[0], v[1], static_cast<T>(1e-5)))});
}

TEST_CASE("gradient: rope") {
  check_case({{random_tensor({6, 8}, 12)}, BOTH(ad::rope(tape, v[0], 3, 2, static_cast<T>(10000)))});
}

TEST_CASE("gradient: silu and softmax") {
  check_case({{random_tensor({3, 4}, 13, 2.0)}, BOTH(ad::silu(tape, v[0]))});
  check_case({{random_tensor({3, 5}, 14)}, BOTH(ad::softmax(tape, v[0]))});
}

TEST_CASE("gradient: causal attention") {
  check_case({{random_tensor({8, 6}, 15), random_tensor({8, 6}, 16), random_tensor({8, 6}, 17)},
              BOTH(ad::causal_attention(tape, v[0], v[1], v[2], 2, 4, 2))});
}

TEST_CASE("gradient: masked cross entropy with external denominator") {
  static const std::vector<TokenId> targets{1, 4, 0, 2};
  static const std::vector<std::uint8_t> mask{1, 0, 1, 1};
  check_case({{random_tensor({4, 5}, 18)}, BOTH(ad::cross_entropy(tape, v[0], targets, mask))});
  check_case({{random_tensor({4, 5}, 19)}, BOTH(ad::cross_entropy(tape, v[0], targets, mask, 7.0))});
}

TEST_CASE("softmax of [ln 1, ln 3] is [0.25, 0.75]") {
  Tape<double> tape;
  const auto x = tape.constant(Tensor<double>({1, 2}, std::vector<double>{std::log(1.0), std::log(3.0)}));
  const auto& p = tape.value(ad::softmax(tape, x));
  CHECK(p[0] == doctest::Approx(0.25).epsilon(1e-12));
  CHECK(p[1] == doctest::Approx(0.75).epsilon(1e-12));
}

TEST_CASE("uniform logits give cross entropy ln V") {
  Tape<double> tape;
  const auto logits = tape.constant(Tensor<double>({3, 50}, 0.25));
  const std::vector<TokenId> targets{0, 17, 49};
  const std::vector<std::uint8_t> mask{1, 1, 1};
  CHECK(tape.value(ad::cross_entropy(tape, logits, targets, mask))[0] == doctest::Approx(std::log(50.0)).epsilon(1e-12));
  const std::vector<std::uint8_t> none{0, 0, 0};
  CHECK_THROWS_AS(ad::cross_entropy(tape, logits, targets, none), Error);
}

TEST_CASE("rmsnorm is invariant to input scale") {
  Tape<double> tape;
  const auto x = random_tensor({2, 16}, 20);
  Tensor<double> scaled = x;
  for (auto& v : scaled.data()) v *= 37.0;
  const auto gain = tape.constant(Tensor<double>({16}, 1.0));
  const auto& a = tape.value(ad::rmsnorm(tape, tape.constant(x), gain, 0.0));
  const auto& b = tape.value(ad::rmsnorm(tape, tape.constant(scaled), gain, 0.0));
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i] == doctest::Approx(b[i]).epsilon(1e-12));
}

TEST_CASE("rope scores depend only on relative position") {
  const std::size_t d = 8, seq = 12;
  const auto q = random_tensor({1, d}, 21);
  const auto k = random_tensor({1, d}, 22);
  Tensor<double> qs({seq, d}), ks({seq, d});
  for (std::size_t r = 0; r < seq; ++r) {
    for (std::size_t j = 0; j < d; ++j) {
      qs[r * d + j] = q[j];
      ks[r * d + j] = k[j];
    }
  }
  Tape<double> tape;
  const auto& rq = tape.value(ad::rope(tape, tape.constant(qs), seq, 2, 10000.0));
  const auto& rk = tape.value(ad::rope(tape, tape.constant(ks), seq, 2, 10000.0));
  auto score = [&](std::size_t m, std::size_t n) {
    double s = 0;
    for (std::size_t j = 0; j < d; ++j) s += rq[m * d + j] * rk[n * d + j];
    return s;
  };
  CHECK(score(5, 2) == doctest::Approx(score(9, 6)).epsilon(1e-10));
  CHECK(score(3, 3) == doctest::Approx(score(0, 0)).epsilon(1e-10));
  CHECK(score(7, 1) == doctest::Approx(score(11, 5)).epsilon(1e-10));
}

TEST_CASE("non-finite values raise NumericError") {
  Tape<double> tape;
  const auto a = tape.constant(Tensor<double>({2}, std::vector<double>{1.0, std::nan("")}));
  const auto b = tape.constant(Tensor<double>({2}, 1.0));
  CHECK_THROWS_AS(ad::add(tape, a, b), NumericError);
  const auto big = tape.constant(Tensor<double>({1}, 1e300));
  CHECK_THROWS_AS(ad::mul(tape, big, big), NumericError);
}

TEST_CASE("backward requires a scalar on the same tape") {
  Tape<double> tape, other;
  const auto x = tape.variable(Tensor<double>({2}, 1.0));
  CHECK_THROWS_AS(tape.backward(x), Error);
  const auto y = other.variable(Tensor<double>({1}, 1.0));
  CHECK_THROWS_AS(tape.backward(y), Error);
  CHECK_THROWS_AS(ad::add(tape, x, y), Error);
}

TEST_CASE("gradients do not leak into constants and reset between backward calls") {
  Tape<double> tape;
  const auto x = tape.variable(Tensor<double>({1}, 3.0));
  const auto c = tape.constant(Tensor<double>({1}, 2.0));
  const auto y = ad::mul(tape, x, c);
  tape.backward(y);
  CHECK(tape.grad(x)[0] == 2.0);
  CHECK(tape.grad(c)[0] == 0.0);
  tape.backward(y);
  CHECK(tape.grad(x)[0] == 2.0);
}

TEST_CASE("the gradient harness notices a wrong backward rule") {
  // x -> x^2 recorded with a deliberately wrong derivative (x instead of 2x).
  auto bad_square = []<Real T>(Tape<T>& tape, const std::vector<Var>& v) {
    Tensor<T> out = tape.value(v[0]);
    for (auto& x : out.data()) x = x * x;
    const Var in = v[0];
    return tape.record(std::move(out), {in}, [in](Tape<T>& t, std::size_t self) {
      const auto& g = *t.node_grad(self);
      auto& gi = t.grad_buffer(in.index);
      for (std::size_t i = 0; i < g.size(); ++i) gi[i] += g[i] * t.value(in)[i];
    });
  };
  const GradCase c{{random_tensor({4}, 30)}, bad_square, bad_square};
  CHECK(max_rel_error<double>(c) > 0.1);
}
