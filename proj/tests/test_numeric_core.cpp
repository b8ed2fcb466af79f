// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <array>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>

#include "gradient_cases.hpp"
#include "kgattack/autodiff.hpp"
#include "kgattack/parameters.hpp"
#include "support.hpp"

using namespace kgattack;
using namespace kgattack::testing;

namespace {

Matrix col(std::initializer_list<double> v) { return Matrix::column(std::vector<double>(v)); }

std::filesystem::path scratch(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / "kgattack_tests";
  std::filesystem::create_directories(dir);
  return dir / name;
}

}  // namespace

TEST_CASE("softmax of equal logits is uniform") {
  Tape t;
  const Var p = softmax(t.constant(col({0.0, 0.0})));
  CHECK(p.value()[0] == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(p.value()[1] == doctest::Approx(0.5).epsilon(1e-15));
}

TEST_CASE("relu clips negatives") {
  Tape t;
  CHECK(relu(t.constant(col({-3.0}))).scalar() == 0.0);
  CHECK(relu(t.constant(col({2.5}))).scalar() == 2.5);
}

TEST_CASE("affine with identity weight and zero bias is the identity") {
  Tape t;
  const Matrix x = col({1.5, -2.0, 0.25});
  const Var y = affine(t.constant(Matrix::identity(3)), t.constant(x), t.constant(Matrix(3, 1)));
  for (std::size_t i = 0; i < 3; ++i) CHECK(y.value()[i] == x[i]);
}

TEST_CASE("elementwise ops match their definitions") {
  Tape t;
  const Matrix a = col({-1.0, 0.5, 2.0});
  const Matrix b = col({3.0, -4.0, 0.5});
  const Var va = t.constant(a), vb = t.constant(b);
  const Var h = hadamard(va, vb);
  const Var s = sigmoid(va);
  const Var th = tanh(va);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(h.value()[i] == a[i] * b[i]);
    CHECK(s.value()[i] == doctest::Approx(1.0 / (1.0 + std::exp(-a[i]))).epsilon(1e-15));
    CHECK(th.value()[i] == doctest::Approx(std::tanh(a[i])).epsilon(1e-15));
  }
  CHECK(dot(va, vb).scalar() == doctest::Approx(-3.0 - 2.0 + 1.0));
  const std::array<Var, 2> parts{va, vb};
  const Var c = concat(parts);
  REQUIRE(c.rows() == 6);
  CHECK(c.value()[4] == -4.0);
  const std::array<std::size_t, 2> idx{2, 0};
  const Var g = gather(va, idx);
  CHECK(g.value()[0] == 2.0);
  CHECK(g.value()[1] == -1.0);
  const Var sc = scatter_add(va, std::array<std::size_t, 3>{1, 1, 3}, 4);
  CHECK(sc.value()[0] == 0.0);
  CHECK(sc.value()[1] == -0.5);
  CHECK(sc.value()[3] == 2.0);
}

TEST_CASE("shape mismatch names the op") {
  Tape t;
  const Var a = t.constant(Matrix(2, 1));
  const Var b = t.constant(Matrix(3, 1));
  try {
    (void)add(a, b);
    FAIL("expected NumericError");
  } catch (const NumericError& e) {
    CHECK(std::string(e.what()).find("add") != std::string::npos);
    CHECK(std::string(e.what()).find("2x1") != std::string::npos);
  }
  CHECK_THROWS_AS((void)matmul(a, b), NumericError);
  CHECK_THROWS_AS((void)dot(a, b), NumericError);
}

TEST_CASE("softmax sums to one and ignores a common shift") {
  Rng rng(11);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 1 + rng.index(20);
    const Matrix logits = random_matrix(n, 1, rng, 30.0);
    Matrix shifted = logits;
    const double c = rng.uniform(-500.0, 500.0);
    for (double& v : shifted.values()) v += c;
    Tape t;
    const Var p = softmax(t.constant(logits));
    const Var q = softmax(t.constant(shifted));
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      total += p.value()[i];
      CHECK(std::abs(p.value()[i] - q.value()[i]) <= 1e-12);
    }
    CHECK(std::abs(total - 1.0) <= 1e-12);
  }
}

TEST_CASE("log_softmax agrees with log of softmax") {
  Rng rng(3);
  Tape t;
  const Var x = t.constant(random_matrix(7, 1, rng, 5.0));
  const Var a = log_softmax(x);
  const Var b = softmax(x);
  for (std::size_t i = 0; i < 7; ++i) CHECK(a.value()[i] == doctest::Approx(std::log(b.value()[i])));
}

TEST_CASE("gradient of a linear form is the other operand") {
  ParameterSet set;
  Parameter& w = set.add("w", col({3.0, 4.0}));
  Tape t;
  t.backward(dot(t.parameter(w), t.constant(col({1.0, 2.0}))));
  CHECK(w.grad[0] == 1.0);
  CHECK(w.grad[1] == 2.0);
}

TEST_CASE("a parameter the loss ignores gets a zero gradient") {
  ParameterSet set;
  Parameter& w = set.add("w", col({3.0, 4.0}));
  Parameter& v = set.add("v", col({1.0, 1.0}));
  Tape t;
  const Var vv = t.parameter(v);
  (void)scale(vv, 2.0);
  t.backward(sum(t.parameter(w)));
  CHECK(!v.grad_populated);
  CHECK(t.grad(vv).values()[0] == 0.0);
  CHECK(w.grad[0] == 1.0);
}

TEST_CASE("backward on a loss without parameters is rejected") {
  Tape t;
  const Var c = t.constant(col({1.0}));
  CHECK_THROWS_AS(t.backward(c), NumericError);
  ParameterSet set;
  Parameter& w = set.add("w", col({1.0}));
  CHECK_THROWS_AS(t.backward(detach(t.parameter(w))), NumericError);
  CHECK_THROWS_AS(t.backward(t.constant(Matrix(2, 1))), NumericError);
}

TEST_CASE("shared parameter reads accumulate") {
  ParameterSet set;
  Parameter& w = set.add("w", col({2.0}));
  Tape t;
  const Var a = t.parameter(w);
  const Var b = t.parameter(w);
  t.backward(hadamard(a, b));  // w^2
  CHECK(w.grad[0] == doctest::Approx(4.0));
}

TEST_CASE("adam: one step on w^2 moves toward zero") {
  ParameterSet set;
  Parameter& w = set.add("w", col({1.0}));
  Tape t;
  const Var v = t.parameter(w);
  t.backward(hadamard(v, v));
  set.adam_step({.lr = 0.1});
  CHECK(w.value[0] < 1.0);
  // First bias-corrected step has magnitude lr * g / (|g| + eps).
  CHECK(w.value[0] == doctest::Approx(1.0 - 0.1 * 2.0 / (2.0 + 1e-8)).epsilon(1e-14));
  CHECK(!w.grad_populated);
}

TEST_CASE("adam: zero gradient leaves a fresh parameter in place") {
  ParameterSet set;
  Parameter& w = set.add("w", col({0.7, -0.3}));
  Tape t;
  t.backward(sum(scale(t.parameter(w), 0.0)));
  set.adam_step({});
  CHECK(w.value[0] == 0.7);
  CHECK(w.value[1] == -0.3);
  CHECK(w.first_moment[0] == 0.0);
  CHECK(w.second_moment[0] == 0.0);
}

TEST_CASE("adam: zero gradient decays existing moments") {
  ParameterSet set;
  Parameter& w = set.add("w", col({1.0}));
  {
    Tape t;
    t.backward(scale(t.parameter(w), 3.0));
    set.adam_step({});
  }
  const double m = w.first_moment[0], v = w.second_moment[0];
  CHECK(m == doctest::Approx(0.1 * 3.0));
  CHECK(v == doctest::Approx(0.001 * 9.0));
  {
    Tape t;
    t.backward(scale(t.parameter(w), 0.0));
    set.adam_step({});
  }
  CHECK(w.first_moment[0] == doctest::Approx(0.9 * m).epsilon(1e-15));
  CHECK(w.second_moment[0] == doctest::Approx(0.999 * v).epsilon(1e-15));
}

TEST_CASE("adam: step without any gradient is an error") {
  ParameterSet set;
  set.add("w", col({1.0}));
  CHECK_THROWS_AS(set.adam_step({}), NumericError);
}

TEST_CASE("adam: 200 steps on a 2-d quadratic") {
  ParameterSet set;
  Parameter& w = set.add("w", col({1.5, -2.0}));
  const Matrix scales = col({1.0, 3.0});
  auto loss_of = [&](Tape& t) {
    const Var x = t.parameter(w);
    return dot(hadamard(x, t.constant(scales)), x);
  };
  for (int i = 0; i < 200; ++i) {
    Tape t;
    t.backward(loss_of(t));
    set.adam_step({.lr = 0.05});
  }
  Tape t;
  CHECK(loss_of(t).scalar() < 1e-3);
}

TEST_CASE("glorot initialization stays within its bound") {
  Rng rng(5);
  ParameterSet set("p");
  const Parameter& w = set.add_glorot("w", 30, 20, rng);
  const double a = std::sqrt(6.0 / 50.0);
  double lo = 1.0, hi = -1.0;
  for (double v : w.value.values()) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  CHECK(lo >= -a);
  CHECK(hi <= a);
  CHECK(hi - lo > a);  // actually spread over the interval
  CHECK(set.contains("w"));
  CHECK_THROWS_AS(set.add_zeros("w", 1, 1), std::invalid_argument);
}

TEST_CASE("forward values are bit-identical for identical seeds") {
  auto run = [] {
    Rng rng(99);
    Critic critic(4, 5, rng);
    Tape t;
    return critic.value(t, t.constant(random_matrix(4, 1, rng))).scalar();
  };
  const double a = run(), b = run();
  CHECK(std::memcmp(&a, &b, sizeof a) == 0);
}

TEST_CASE("gradient check of every trainable layer") {
  for (const GradientCase& c : gradient_cases()) {
    for (std::uint64_t point = 0; point < 10; ++point) {
      Rng rng = Rng::derive({0x67AD, point});
      const GradCheck r = c.run(rng);
      INFO(c.name << " point " << point << " worst tensor " << r.worst_tensor << " "
                  << r.worst_tensor_error);
      CHECK(r.entries > 0);
      CHECK(r.relative_error < 1e-4);
    }
  }
}

TEST_CASE("checkpoint round trip and byte layout") {
  Rng rng(8);
  ParameterSet a("net");
  a.add_glorot("w", 3, 2, rng);
  a.add_glorot("b", 3, 1, rng);
  const auto path = scratch("roundtrip.ckpt");
  save_checkpoint(path, checkpoint_of({&a}, R"({"kind":"test"})"));

  std::ifstream is(path, std::ios::binary);
  char magic[8];
  is.read(magic, 8);
  CHECK(std::string(magic, 8) == "KGACKPT1");
  unsigned char len_bytes[8];
  is.read(reinterpret_cast<char*>(len_bytes), 8);
  std::uint64_t len = 0;
  for (int i = 7; i >= 0; --i) len = (len << 8) | len_bytes[i];
  std::string header(len, '\0');
  is.read(header.data(), static_cast<std::streamsize>(len));
  CHECK(header.find("\"net.w\"") != std::string::npos);
  unsigned char first[8];
  is.read(reinterpret_cast<char*>(first), 8);
  std::uint64_t bits = 0;
  for (int i = 7; i >= 0; --i) bits = (bits << 8) | first[i];
  double v = 0.0;
  std::memcpy(&v, &bits, sizeof v);
  CHECK(v == a.get("w").value[0]);
  is.close();

  Rng other(9);
  ParameterSet b("net");
  b.add_glorot("w", 3, 2, other);
  b.add_glorot("b", 3, 1, other);
  const Checkpoint loaded = load_checkpoint(path);
  CHECK(loaded.meta_json == R"({"kind":"test"})");
  restore_checkpoint(loaded, {&b});
  for (std::size_t i = 0; i < 6; ++i) CHECK(b.get("w").value[i] == a.get("w").value[i]);
  for (std::size_t i = 0; i < 3; ++i) CHECK(b.get("b").value[i] == a.get("b").value[i]);

  ParameterSet c("net");
  c.add_zeros("w", 2, 3);
  c.add_zeros("b", 3, 1);
  CHECK_THROWS(restore_checkpoint(loaded, {&c}));

  const auto bad = scratch("bad.ckpt");
  std::ofstream(bad, std::ios::binary) << "NOTACKPT";
  CHECK_THROWS(load_checkpoint(bad));
}
