#include <gtest/gtest.h>

#include <cstring>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "corrnet/checkpoint.hpp"
#include "corrnet/ops.hpp"
#include "corrnet/optim.hpp"
#include "test_util.hpp"

using namespace corrnet;
namespace fs = std::filesystem;

namespace {

fs::path temp_path(const std::string& name) {
  auto dir = fs::temp_directory_path() / "corrnet_tests";
  fs::create_directories(dir);
  return dir / name;
}

}  // namespace

TEST(Tensor, ShapeAndDataMustAgree) {
  Tensor<double> t({2, 3}, 1.5);
  EXPECT_EQ(t.size(), 6u);
  EXPECT_EQ(t.rank(), 2u);
  EXPECT_THROW(Tensor<double>({2, 3}, std::vector<double>(5)), ShapeError);
  EXPECT_THROW(Tensor<double>({2, 0}), ShapeError);
  EXPECT_EQ(Tensor<float>::scalar(2.0f).item(), 2.0f);
  EXPECT_THROW(t.item(), ShapeError);
  EXPECT_THROW(t.reshaped({4}), ShapeError);
  EXPECT_EQ(t.reshaped({3, 2}).shape(), (Shape{3, 2}));
}

TEST(Tensor, CastRoundTripsThroughDouble) {
  Tensor<float> f({3}, std::vector<float>{0.1f, -2.5f, 3e-8f});
  EXPECT_EQ(f.cast<double>().cast<float>(), f);
}

TEST(Autograd, SumGivesOnes) {
  Tape<double> tape;
  auto p = testutil::param(Tensor<double>({3}, std::vector<double>{1, 2, 3}));
  auto loss = ops::sum(tape, p);
  tape.backward(loss);
  for (double g : p.grad().data()) EXPECT_EQ(g, 1.0);
}

TEST(Autograd, SumOfSquares) {
  Tape<double> tape;
  auto p = testutil::param(Tensor<double>({2}, std::vector<double>{1, 2}));
  auto loss = ops::sum(tape, ops::mul(tape, p, p));
  tape.backward(loss);
  EXPECT_EQ(p.grad()[0], 2.0);
  EXPECT_EQ(p.grad()[1], 4.0);
}

TEST(Autograd, NonScalarLossRejected) {
  Tape<double> tape;
  auto p = testutil::param(Tensor<double>({2}, 1.0));
  auto y = ops::scale(tape, p, 2.0);
  EXPECT_THROW(tape.backward(y), ShapeError);
}

TEST(Autograd, ReplayVisitsEveryOpOnceThenClears) {
  Tape<double> tape;
  auto p = testutil::param(Tensor<double>({2}, 0.3));
  auto y = ops::sigmoid(tape, ops::tanh(tape, ops::scale(tape, p, 3.0)));
  auto loss = ops::sum(tape, y);
  ASSERT_EQ(tape.size(), 4u);
  std::vector<std::string> seen;
  tape.set_visitor([&](const std::string& op) { seen.push_back(op); });
  tape.backward(loss);
  EXPECT_EQ(seen, (std::vector<std::string>{"sum", "sigmoid", "tanh", "scale"}));
  EXPECT_EQ(tape.size(), 0u);
}

TEST(Autograd, InferenceTapeRecordsNothing) {
  Tape<double> tape(Tape<double>::Mode::kInference);
  auto p = testutil::param(Tensor<double>({2}, 0.3));
  auto y = ops::sum(tape, ops::mul(tape, p, p));
  EXPECT_EQ(tape.size(), 0u);
  EXPECT_FALSE(y.requires_grad());
}

TEST(Autograd, ConstantsReceiveNoGradient) {
  Tape<double> tape;
  auto c = ops::constant(Tensor<double>({2}, 1.0));
  auto y = ops::sum(tape, ops::mul(tape, c, c));
  EXPECT_EQ(tape.size(), 0u);
  EXPECT_FALSE(y.requires_grad());
}

TEST(Autograd, ZeroGradClearsEveryLearnableParameter) {
  ParameterSet<double> ps;
  auto a = ps.add("a", Tensor<double>({2}, 1.0));
  auto frozen = ps.add("frozen", Tensor<double>({2}, 1.0), false);
  Tape<double> tape;
  auto loss = ops::sum(tape, ops::mul(tape, a, frozen));
  tape.backward(loss);
  EXPECT_EQ(a.grad()[0], 1.0);
  EXPECT_FALSE(frozen.has_grad());
  ps.zero_grad();
  for (double g : a.grad().data()) EXPECT_EQ(g, 0.0);
  EXPECT_THROW(ps.add("a", Tensor<double>({1})), std::invalid_argument);
}

TEST(Adam, ZeroGradientLeavesParametersUnchanged) {
  ParameterSet<double> ps;
  auto p = ps.add("p", Tensor<double>({3}, std::vector<double>{0.5, -1.0, 2.0}));
  const auto before = p.value();
  ps.zero_grad();
  Adam<double> adam({.lr = 0.1});
  adam.step(ps);
  adam.step(ps);
  EXPECT_EQ(p.value(), before);
}

TEST(Adam, FirstStepMovesByLearningRate) {
  ParameterSet<double> ps;
  auto p = ps.add("p", Tensor<double>::scalar(1.0));
  p.grad_buffer()[0] = 1.0;
  Adam<double> adam({.lr = 0.1});
  adam.step(ps);
  // m = 0.1, v = 0.001; bias-corrected m/sqrt(v) = 1 / (1 + 1e-8)
  const double expected = 1.0 - 0.1 * 1.0 / (1.0 + 1e-8);
  EXPECT_NEAR(p.value().item(), expected, 1e-15);
  EXPECT_NEAR(p.value().item(), 0.9, 1e-8);
}

TEST(Adam, MatchesScalarRecurrence) {
  ParameterSet<double> ps;
  auto p = ps.add("p", Tensor<double>::scalar(0.7));
  Adam<double> adam({.lr = 0.01, .beta1 = 0.9, .beta2 = 0.999, .eps = 1e-8, .weight_decay = 0.001});
  double x = 0.7, m = 0, v = 0;
  const double grads[] = {0.3, -1.2, 0.05, 2.0};
  for (int t = 1; t <= 4; ++t) {
    p.grad_buffer()[0] = grads[t - 1];
    adam.step(ps);
    const double g = grads[t - 1] + 0.001 * x;
    m = 0.9 * m + 0.1 * g;
    v = 0.999 * v + 0.001 * g * g;
    x -= 0.01 * (m / (1 - std::pow(0.9, t))) / (std::sqrt(v / (1 - std::pow(0.999, t))) + 1e-8);
    EXPECT_NEAR(p.value().item(), x, 1e-14);
  }
}

TEST(Adam, Deterministic) {
  auto run = [] {
    ParameterSet<float> ps;
    Rng rng(4);
    auto p = ps.add("p", rng.uniform_tensor<float>({5}, -1, 1));
    Adam<float> adam({.lr = 0.05});
    for (int s = 0; s < 2; ++s) {
      for (std::size_t i = 0; i < 5; ++i) p.grad_buffer()[i] = p.value()[i] * 2.0f;
      adam.step(ps);
    }
    return p.value();
  };
  EXPECT_EQ(run(), run());
}

TEST(Checkpoint, BitExactRoundTrip) {
  Rng rng(9);
  ParameterSet<float> a, b;
  a.add("w", rng.uniform_tensor<float>({3, 4}, -1, 1));
  a.add("s", Tensor<float>::scalar(std::nextafter(1.0f, 2.0f)));
  a.add("tiny", Tensor<float>({2}, std::vector<float>{1e-40f, -0.0f}));
  b.add("w", Tensor<float>({3, 4}));
  b.add("s", Tensor<float>::scalar(0.0f));
  b.add("tiny", Tensor<float>({2}));
  const auto path = temp_path("roundtrip.cnk");
  save_checkpoint(path, a);
  load_checkpoint(path, b);
  for (std::size_t k = 0; k < a.size(); ++k) {
    const auto& x = a.items()[k].var.value();
    const auto& y = b.items()[k].var.value();
    ASSERT_EQ(x.shape(), y.shape());
    EXPECT_EQ(std::memcmp(x.ptr(), y.ptr(), x.size() * sizeof(float)), 0);
  }
}

TEST(Checkpoint, HeaderLayout) {
  ParameterSet<double> a;
  a.add("ab", Tensor<double>({2}, std::vector<double>{1.0, 2.0}));
  const auto path = temp_path("layout.cnk");
  save_checkpoint(path, a);
  std::ifstream is(path, std::ios::binary);
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(is)), {});
  // magic, version, dtype, count, name_len, name, rank, extent, 2 doubles
  ASSERT_EQ(bytes.size(), 4u + 4 + 4 + 4 + 4 + 2 + 4 + 8 + 16);
  EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 4), "CNK1");
  EXPECT_EQ(bytes[4], 1);
  EXPECT_EQ(bytes[8], 2);
  EXPECT_EQ(bytes[12], 1);
  EXPECT_EQ(bytes[16], 2);
  EXPECT_EQ(bytes[20], 'a');
}

TEST(Checkpoint, ShapeMismatchNamesParameter) {
  ParameterSet<float> a, b;
  a.add("layer.weight", Tensor<float>({2, 2}));
  b.add("layer.weight", Tensor<float>({2, 3}));
  const auto path = temp_path("mismatch.cnk");
  save_checkpoint(path, a);
  try {
    load_checkpoint(path, b);
    FAIL() << "expected CheckpointError";
  } catch (const CheckpointError& e) {
    EXPECT_NE(std::string(e.what()).find("layer.weight"), std::string::npos);
  }
}

TEST(Checkpoint, DtypeConversionAndBadMagic) {
  ParameterSet<double> a;
  a.add("x", Tensor<double>({1}, std::vector<double>{0.25}));
  const auto path = temp_path("convert.cnk");
  save_checkpoint(path, a);
  ParameterSet<float> f;
  f.add("x", Tensor<float>({1}));
  load_checkpoint(path, f);
  EXPECT_EQ(f.items()[0].var.value()[0], 0.25f);

  const auto bad = temp_path("bad.cnk");
  std::ofstream(bad, std::ios::binary) << "NOPE0000";
  EXPECT_THROW(load_checkpoint(bad, f), CheckpointError);
}
