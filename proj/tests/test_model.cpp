#include "pregen/model.hpp"
#include "pregen/synth.hpp"

#include <doctest.h>

#include <numeric>

using namespace pregen;

namespace {

ModelConfig small_config(Variant variant = Variant::full) {
  ModelConfig c;
  c.num_layers = 6;
  c.dim = 16;
  c.heads = 4;
  c.mlp_hidden = 32;
  c.output_dim = 8;
  c.variant = variant;
  return c;
}

Matrix<double> random_matrix(Eigen::Index rows, Eigen::Index cols, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  return Matrix<double>::NullaryExpr(rows, cols, [&] { return normal(rng); });
}

double rel_diff(const Vector<double>& a, const Vector<double>& b) { return (a - b).norm() / std::max(a.norm(), b.norm()); }

}  // namespace

TEST_CASE("sinusoidal encodings") {
  SUBCASE("position 0: sin 0 on even indices, cos 0 on odd") {
    for (int d : {2, 8, 32}) {
      const auto pe = sinusoidal_pe<double>(0, d);
      for (int i = 0; i < d; ++i) CHECK(pe(i) == (i % 2 == 0 ? 0.0 : 1.0));
    }
  }
  SUBCASE("position 1, d = 4") {
    const auto pe = sinusoidal_pe<double>(1, 4);
    CHECK(pe(0) == doctest::Approx(0.841471).epsilon(1e-6));
    CHECK(pe(1) == doctest::Approx(0.540302).epsilon(1e-6));
    CHECK(pe(2) == doctest::Approx(0.0099998).epsilon(1e-5));
    CHECK(pe(3) == doctest::Approx(0.99995).epsilon(1e-6));
  }
  SUBCASE("position 2, d = 2") {
    const auto pe = sinusoidal_pe<double>(2, 2);
    CHECK(pe(0) == doctest::Approx(0.909297).epsilon(1e-6));
    CHECK(pe(1) == doctest::Approx(-0.416147).epsilon(1e-6));
  }
}

TEST_CASE("resolved sizes and validation") {
  ModelConfig c;
  c.num_layers = 4;
  c.dim = 32;
  const auto r = c.resolved();
  CHECK(r.ffn_dim == 128);
  CHECK(r.output_dim == 32);
  CHECK(c.heads == 8);
  CHECK(c.encoder_depth == 1);
  CHECK(c.mlp_depth == 2);
  CHECK(c.mlp_hidden == 14336);
  CHECK(c.dropout == 0.1);
  CHECK_NOTHROW(validate(r));

  auto rejects = [](ModelConfig m, const char* key) {
    try {
      validate(m.resolved());
    } catch (const Error& e) {
      return std::string(e.what()).find(key) != std::string::npos;
    }
    return false;
  };
  auto bad = r;
  bad.heads = 5;
  CHECK(rejects(bad, "model.heads"));
  bad = r;
  bad.dim = 9;
  CHECK(rejects(bad, "model.dim"));
  bad = r;
  bad.dropout = 1.0;
  CHECK(rejects(bad, "model.dropout"));

  CHECK(parse_variant("avg_pool") == Variant::avg_pool);
  CHECK(to_string(Variant::single_layer) == "single_layer");
  CHECK_THROWS_AS(parse_variant("cls"), Error);
}

TEST_CASE("initialisation") {
  const auto c = small_config().resolved();
  const auto a = init_params<double>(c, 11);
  const auto b = init_params<double>(c, 11);
  const auto other = init_params<double>(c, 12);
  const auto ta = tensors(a), tb = tensors(b), to = tensors(other);
  REQUIRE(ta.size() == tb.size());
  bool any_different = false;
  for (std::size_t i = 0; i < ta.size(); ++i) {
    CHECK(ta[i].name == tb[i].name);
    CHECK(ta[i].value == tb[i].value);
    any_different = any_different || ta[i].value != to[i].value;
  }
  CHECK(any_different);

  CHECK((a.blocks[0].attn_norm.gamma.array() == 1.0).all());
  CHECK((a.blocks[0].ffn_norm.gamma.array() == 1.0).all());
  CHECK((a.final_norm.gamma.array() == 1.0).all());
  CHECK((a.final_norm.beta.array() == 0.0).all());
  CHECK((a.blocks[0].query.bias.array() == 0.0).all());

  const double bound = std::sqrt(6.0 / 32.0);
  CHECK(bound == doctest::Approx(0.4330).epsilon(1e-4));
  const auto& wq = a.blocks[0].query.weight;
  CHECK(wq.rows() == 16);
  CHECK(wq.cols() == 16);
  CHECK(wq.cwiseAbs().maxCoeff() <= bound);
  CHECK(wq.cwiseAbs().maxCoeff() > 0.8 * bound);
  CHECK(std::abs(a.cls.mean()) < 0.02);
}

TEST_CASE("canonical tensor names and shapes") {
  const auto c = small_config().resolved();
  const auto p = init_params<float>(c, 1);
  const auto shapes = parameter_shapes(c);
  const auto t = tensors(p);
  REQUIRE(shapes.size() == t.size());
  for (std::size_t i = 0; i < t.size(); ++i) {
    CHECK(shapes[i].name == t[i].name);
    CHECK(shapes[i].rows == t[i].value.rows());
    CHECK(shapes[i].cols == t[i].value.cols());
  }
  CHECK(t.front().name == "cls");
  CHECK(t[1].name == "encoder.0.attn_norm.gamma");
  CHECK(t.back().name == "head.1.bias");
  CHECK(t.back().value.rows() == 8);

  auto wrong = c;
  wrong.mlp_hidden = 33;
  try {
    check_shapes(p, wrong);
    FAIL("expected a shape error");
  } catch (const Error& e) {
    CHECK(std::string(e.what()).find("head.0.weight") != std::string::npos);
  }
}

TEST_CASE("float and double paths agree") {
  const auto c = small_config().resolved();
  const auto pd = init_params<double>(c, 5);
  const auto pf = pd.cast<float>();
  const Matrix<double> x = random_matrix(6, 16, 1);
  const Vector<double> ed = forward(x, pd, c, Mode::eval);
  const Vector<float> ef = forward(Matrix<float>(x.cast<float>()), pf, c, Mode::eval);
  CHECK((ed - ef.cast<double>()).norm() / ed.norm() < 1e-5);
}

TEST_CASE("eval mode is deterministic; train mode without dropout equals eval") {
  auto c = small_config().resolved();
  const auto p = init_params<double>(c, 2);
  const Matrix<double> x = random_matrix(6, 16, 3);
  const Vector<double> e1 = forward(x, p, c, Mode::eval);
  const Vector<double> e2 = forward(x, p, c, Mode::eval);
  CHECK(e1 == e2);
  CHECK(e1.size() == 8);

  std::mt19937_64 rng(1);
  const Vector<double> dropped = forward(x, p, c, Mode::train, &rng);
  CHECK(dropped != e1);

  c.dropout = 0.0;
  CHECK(forward(x, p, c, Mode::train, &rng) == e1);
}

TEST_CASE("train mode with dropout needs an rng") {
  const auto c = small_config().resolved();
  const auto p = init_params<double>(c, 2);
  CHECK_THROWS_AS(forward(random_matrix(6, 16, 3), p, c, Mode::train), Error);
}

TEST_CASE("input shape and finiteness are checked") {
  const auto c = small_config().resolved();
  const auto p = init_params<double>(c, 2);
  CHECK_THROWS_AS(forward(random_matrix(5, 16, 3), p, c, Mode::eval), Error);
  Matrix<double> x = random_matrix(6, 16, 3);
  x(2, 2) = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(forward(x, p, c, Mode::eval), NonFiniteError);
}

TEST_CASE("layer order matters only through positional encodings") {
  // Zero-noise synthetic stacks: distinct structured rows.
  SynthConfig sc;
  sc.noise_sigma = 0.0;
  sc.num_layers = 6;
  sc.dim = 16;
  sc.num_concepts = 8;
  const auto data = generate_synthetic_dataset(sc).dataset;
  std::vector<int> order(6);
  std::iota(order.begin(), order.end(), 0);
  std::reverse(order.begin(), order.end());
  std::swap(order[1], order[4]);

  for (const auto& stack : {data.stacks()[0], data.stacks()[5]}) {
    const Matrix<double> x = stack.data.cast<double>();
    Matrix<double> permuted(x.rows(), x.cols());
    for (int i = 0; i < 6; ++i) permuted.row(i) = x.row(order[i]);

    const auto no_pe = small_config(Variant::no_pe).resolved();
    const auto p = init_params<double>(no_pe, 9);
    CHECK(rel_diff(forward(x, p, no_pe, Mode::eval), forward(permuted, p, no_pe, Mode::eval)) <= 1e-5);

    const auto avg = small_config(Variant::avg_pool).resolved();
    const Vector<double> pooled = forward(x, p, avg, Mode::eval);
    CHECK(pooled.size() == 8);

    const auto full = small_config(Variant::full).resolved();
    CHECK((forward(x, p, full, Mode::eval) - forward(permuted, p, full, Mode::eval)).norm() > 1e-3);
  }
}

TEST_CASE("single_layer reads only the last row") {
  const auto c = small_config(Variant::single_layer).resolved();
  const auto p = init_params<double>(c, 4);
  Matrix<double> x = random_matrix(6, 16, 8);
  const Vector<double> e = forward(x, p, c, Mode::eval);
  x.topRows(5).setRandom();
  CHECK(forward(x, p, c, Mode::eval) == e);
  x(5, 0) += 0.5;
  CHECK(forward(x, p, c, Mode::eval) != e);
}

TEST_CASE("backward basics") {
  for (Variant v : {Variant::full, Variant::single_layer, Variant::no_pe, Variant::avg_pool}) {
    CAPTURE(to_string(v));
    const auto c = small_config(v).resolved();
    const auto p = init_params<double>(c, 6);
    const Matrix<double> x = random_matrix(6, 16, 2);
    std::mt19937_64 rng(3);
    ForwardCache<double> cache;
    forward(x, p, c, Mode::train, &rng, &cache);

    auto zero = zeros_like(p);
    Matrix<double> grad_x;
    backward(cache, Vector<double>(Vector<double>::Zero(8)), p, c, zero, &grad_x);
    for (const auto& t : tensors(zero)) CHECK(t.value.isZero(0.0));
    CHECK(grad_x.isZero(0.0));

    const Vector<double> ge = Vector<double>::LinSpaced(8, -1.0, 1.0);
    auto g1 = zeros_like(p), g2 = zeros_like(p);
    backward(cache, ge, p, c, g1);
    backward(cache, ge, p, c, g2);
    const auto t1 = tensors(g1), t2 = tensors(g2);
    for (std::size_t i = 0; i < t1.size(); ++i) CHECK(t1[i].value == t2[i].value);

    // Accumulation: a second call adds the same gradient again.
    backward(cache, ge, p, c, g1);
    for (std::size_t i = 0; i < t1.size(); ++i) CHECK(t1[i].value.isApprox(2.0 * t2[i].value));
  }
}
