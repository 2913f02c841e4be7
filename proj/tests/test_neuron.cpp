#include <gtest/gtest.h>

#include "dista/gradcheck.hpp"
#include "dista/neuron.hpp"
#include "test_support.hpp"

using namespace dista;

namespace {

NeuronParams<double> params(double tau, double theta = 1.0) {
  NeuronParams<double> p;
  p.theta = theta;
  p.tau.values = Tensor<double>::scalar(tau);
  return p;
}

std::vector<Tensor<double>> constant_inputs(double value, std::size_t steps) {
  return std::vector<Tensor<double>>(steps, Tensor<double>({1, 1}, value));
}

// Membrane trace of a taped run, for checking V directly.
std::vector<double> membrane_trace(const std::vector<double>& currents, double tau, double theta) {
  Tape<double> tape(false);
  ForwardContext<double> ctx{&tape};
  std::vector<Var<double>> in;
  for (double c : currents) in.push_back(tape.constant(Tensor<double>({1, 1}, c)));
  const auto trace = lif_sequence<double>(ctx, in, tape.constant(Tensor<double>::scalar(tau)), theta, 1.0);
  std::vector<double> v;
  for (const auto& m : trace.membrane) v.push_back(m.value()[0]);
  return v;
}

}  // namespace

TEST(Heaviside, SignCasesAndBoundary) {
  const auto h = heaviside(Tensor<double>::vector({0.3, -0.1, 0.0}));
  EXPECT_EQ(testing_support::vec(h), (std::vector<double>{1, 0, 1}));
}

TEST(Surrogate, WindowCentreAndOutside) {
  const auto d = surrogate_pseudo_derivative(Tensor<double>::vector({1.0, 1.6, 0.45}), 1.0, 1.0);
  EXPECT_EQ(d[0], 1.0);
  EXPECT_EQ(d[1], 0.0);
  EXPECT_EQ(d[2], 0.0);
}

TEST(Surrogate, IntegratesToOneForAnyWidth) {
  for (double a : {0.25, 1.0, 3.0}) {
    const std::size_t n = 200000;
    const double lo = -5.0, hi = 5.0, h = (hi - lo) / n;
    Tensor<double> v({n});
    for (std::size_t i = 0; i < n; ++i) v[i] = lo + (i + 0.5) * h;
    double integral = 0;
    const auto d = surrogate_pseudo_derivative(v, 0.0, a);
    for (double x : d.values()) integral += x * h;
    EXPECT_NEAR(integral, 1.0, 1e-3) << "a = " << a;
  }
}

TEST(Surrogate, NonPositiveWidthIsADomainError) {
  EXPECT_THROW(surrogate_pseudo_derivative(Tensor<double>::scalar(0), 1.0, 0.0), DomainError);
}

TEST(LifStep, DirectEvaluation) {
  MembraneState<double> st{Tensor<double>({1}, 0.5), Tensor<double>({1}, 0.0)};
  const auto [next, s] = lif_step(st, Tensor<double>({1}, 0.8), params(2.0));
  EXPECT_NEAR(next.v[0], 1.05, 1e-15);
  EXPECT_EQ(s[0], 1.0);
}

TEST(LifStep, ResetAnnihilatesHistory) {
  for (double vprev : {-3.0, 0.0, 0.7, 42.0}) {
    MembraneState<double> st{Tensor<double>({1}, vprev), Tensor<double>({1}, 1.0)};
    const auto [next, s] = lif_step(st, Tensor<double>({1}, 0.3), params(2.0));
    EXPECT_EQ(next.v[0], 0.3);
    EXPECT_EQ(s[0], 0.0);
  }
}

TEST(LifStep, ZeroCase) {
  const auto [next, s] = lif_step(MembraneState<double>::zeros({1}), Tensor<double>({1}), params(2.0));
  EXPECT_EQ(next.v[0], 0.0);
  EXPECT_EQ(s[0], 0.0);
}

TEST(LifStep, TauAtOrBelowOneIsADomainError) {
  for (double tau : {1.0, 0.5, -2.0})
    EXPECT_THROW(lif_step(MembraneState<double>::zeros({1}), Tensor<double>({1}), params(tau)), DomainError);
}

TEST(LifStep, ShapeMismatchThrows) {
  EXPECT_THROW(lif_step(MembraneState<double>::zeros({2}), Tensor<double>({3}), params(2.0)), DimensionError);
}

TEST(LifStep, ResetInvarianceIsBitExact) {
  std::mt19937_64 rng(5);
  const auto input = testing_support::random_tensor<float>({4, 6}, rng);
  NeuronParams<float> p;
  p.tau.values = testing_support::random_tensor<float>({4, 6}, rng, 1.5f, 8.0f);
  const Tensor<float> fired({4, 6}, 1.0f);
  const auto a = lif_step(MembraneState<float>{testing_support::random_tensor<float>({4, 6}, rng), fired}, input, p);
  const auto b = lif_step(MembraneState<float>{testing_support::random_tensor<float>({4, 6}, rng), fired}, input, p);
  EXPECT_TRUE(bit_identical(a.first.v, b.first.v));
  EXPECT_TRUE(bit_identical(a.second, b.second));
}

TEST(LifSequence, ConstantCurrentHandIteration) {
  const auto v = membrane_trace({0.6, 0.6, 0.6}, 2.0, 1.0);
  EXPECT_NEAR(v[0], 0.6, 1e-15);
  EXPECT_NEAR(v[1], 0.9, 1e-15);
  EXPECT_NEAR(v[2], 1.05, 1e-15);
  const auto s = lif_sequence(constant_inputs(0.6, 3), params(2.0));
  EXPECT_EQ(s.steps[0][0], 0.0);
  EXPECT_EQ(s.steps[1][0], 0.0);
  EXPECT_EQ(s.steps[2][0], 1.0);
}

TEST(LifSequence, ZeroInputNeverFires) {
  const auto s = lif_sequence(constant_inputs(0.0, 6), params(3.0));
  for (const auto& st : s.steps) EXPECT_EQ(st[0], 0.0);
}

TEST(LifSequence, SuprathresholdInputFiresEveryStepAndRebuildsFromInput) {
  const std::vector<double> in{1.2, 1.0, 3.5, 1.1};
  const auto v = membrane_trace(in, 2.0, 1.0);
  for (std::size_t t = 0; t < in.size(); ++t) EXPECT_EQ(v[t], in[t]);
  std::vector<Tensor<double>> steps;
  for (double c : in) steps.push_back(Tensor<double>({1, 1}, c));
  for (const auto& st : lif_sequence(steps, params(2.0)).steps) EXPECT_EQ(st[0], 1.0);
}

TEST(LifSequence, OutputsAreBinaryForArbitraryInputs) {
  std::mt19937_64 rng(9);
  std::vector<Tensor<float>> steps;
  for (int t = 0; t < 10; ++t) steps.push_back(testing_support::random_tensor<float>({3, 5}, rng, -4.0f, 4.0f));
  NeuronParams<float> p;
  p.tau.values = Tensor<float>({3, 5}, 2.0f);
  EXPECT_TRUE(lif_sequence(steps, p).binary());
}

TEST(LifSequence, LargerTauKeepsMoreChargeWhenSilent) {
  std::mt19937_64 rng(10);
  std::vector<double> in(8);
  for (auto& c : in) c = std::uniform_real_distribution<double>(0.0, 0.1)(rng);
  std::vector<double> prev;
  for (double tau : {1.5, 2.0, 4.0, 16.0, 100.0}) {
    const auto v = membrane_trace(in, tau, 1e9);
    for (std::size_t t = 0; t < prev.size(); ++t) EXPECT_GE(v[t], prev[t]);
    prev = v;
  }
}

TEST(LifSequence, PerNeuronTauBroadcastsOverBatch) {
  // τ is [tokens × width]; a [2·tokens × width] membrane repeats it per batch element.
  Tensor<double> tau({2, 2}, {1.5, 2.0, 4.0, 8.0});
  NeuronParams<double> p;
  p.tau.values = tau;
  p.theta = 1e9;
  std::vector<Tensor<double>> steps(2, Tensor<double>({4, 2}, 1.0));
  Tape<double> tape(false);
  ForwardContext<double> ctx{&tape};
  std::vector<Var<double>> in;
  for (const auto& s : steps) in.push_back(tape.constant(s));
  const auto trace = lif_sequence<double>(ctx, in, tape.constant(tau), 1e9, 1.0);
  const auto& v = trace.membrane[1].value();
  for (std::size_t r = 0; r < 4; ++r)
    for (std::size_t c = 0; c < 2; ++c) EXPECT_DOUBLE_EQ(v(r, c), 2.0 - 1.0 / tau(r % 2, c));
  NeuronParams<double> bad = p;
  bad.tau.values = Tensor<double>({3, 2}, 2.0);
  EXPECT_THROW(lif_sequence(steps, bad), DimensionError);
}

TEST(TauGradient, SpikeFreeTwoStepClosedForm) {
  const double tau0 = 2.0;
  Tape<double> tape;
  ForwardContext<double> ctx{&tape};
  std::vector<Var<double>> in{tape.constant(Tensor<double>({1, 1}, 0.2)),
                              tape.constant(Tensor<double>({1, 1}, 0.0))};
  const auto tau = tape.leaf(Tensor<double>::scalar(tau0));
  const auto trace = lif_sequence<double>(ctx, in, tau, 1e9, 1.0);
  EXPECT_NEAR(trace.membrane[1].value()[0], (1 - 1 / tau0) * 0.2, 1e-15);
  tape.backward(sum(trace.membrane[1]), Tensor<double>::scalar(1));
  const double expected = 0.2 / (tau0 * tau0);
  EXPECT_NEAR(expected, 0.05, 1e-15);
  EXPECT_LT(std::abs(tape.grad(tau)[0] - expected) / expected, 1e-6);
}

TEST(TauGradient, MatchesFiniteDifferencesInSmoothMode) {
  std::mt19937_64 rng(21);
  std::vector<Tensor<double>> currents;
  for (int t = 0; t < 5; ++t) currents.push_back(testing_support::random_tensor<double>({3, 4}, rng, 0.0, 1.5));
  const auto tau0 = testing_support::random_tensor<double>({3, 4}, rng, 1.5, 5.0);
  auto loss = [&](Tape<double>& tape, Var<double> tau) {
    ForwardContext<double> ctx{&tape, BnMode::train, SpikeMode::smooth};
    std::vector<Var<double>> in;
    for (const auto& c : currents) in.push_back(tape.constant(c));
    const auto tr = lif_sequence<double>(ctx, in, tau, 1.0, 1.0);
    Var<double> acc = sum(tr.spikes[0]);
    for (std::size_t t = 1; t < tr.spikes.size(); ++t) acc = add(acc, scale(sum(tr.spikes[t]), double(t + 1)));
    return acc;
  };
  Tape<double> tape;
  const auto tau = tape.leaf(tau0);
  tape.backward(loss(tape, tau), Tensor<double>::scalar(1));
  const auto numeric = finite_diff_grad(
      [&](const Tensor<double>& t) {
        Tape<double> tp(false);
        return loss(tp, tp.constant(t)).value()[0];
      },
      tau0, 1e-6);
  EXPECT_LT(max_relative_error(tape.grad(tau), numeric), 1e-4);
}

TEST(ClampTau, LowerInteriorUpper) {
  TauParams<double> tau{Tensor<double>::vector({0.5, 50, 1000}), true};
  EXPECT_EQ(testing_support::vec(clamp_tau(tau).values), (std::vector<double>{1.01, 50, 100}));
}
