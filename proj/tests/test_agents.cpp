#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "maac/agents.hpp"
#include "test_support.hpp"

using namespace maac;

namespace {

// |observed - n p| <= 3 sqrt(n p (1 - p)) for every category.
void expect_within_three_sigma(const std::vector<int>& counts, const std::vector<double>& probs, int draws) {
  for (std::size_t k = 0; k < probs.size(); ++k) {
    const double mean = draws * probs[k];
    const double sd = std::sqrt(draws * probs[k] * (1.0 - probs[k]));
    EXPECT_LE(std::abs(counts[k] - mean), 3.0 * sd + 1e-9) << "category " << k;
  }
}

}  // namespace

TEST(Policy, ZeroFinalLayerGivesUniformDistribution) {
  Rng rng(1);
  DiscretePolicy pol("p", 6, 16, 5, rng);
  pol.output_layer().weight.value.set_zero();
  const auto p = pol.action_distribution(maac::testing::random_vector(6, rng));
  for (double x : p) EXPECT_NEAR(x, 0.2, 1e-15);
}

TEST(Policy, DistributionIsStrictlyPositiveAndNormalised) {
  Rng rng(2);
  DiscretePolicy pol("p", 4, 8, 5, rng);
  for (int trial = 0; trial < 200; ++trial) {
    const auto p = pol.action_distribution(maac::testing::random_vector(4, rng, 3.0));
    EXPECT_NEAR(std::accumulate(p.begin(), p.end(), 0.0), 1.0, 1e-12);
    for (double x : p) EXPECT_GT(x, 0.0);
    EXPECT_LE(entropy(p), std::log(5.0) + 1e-12);
  }
}

TEST(Policy, ObservationWidthMismatchThrows) {
  Rng rng(3);
  DiscretePolicy pol("p", 4, 8, 5, rng);
  EXPECT_THROW(pol.action_distribution(std::vector<double>(3, 0.0)), DimensionError);
}

TEST(Policy, InvariantToConstantShiftOfOutputBias) {
  Rng rng(4);
  DiscretePolicy pol("p", 3, 8, 5, rng);
  const auto obs = maac::testing::random_vector(3, rng);
  const auto before = pol.action_distribution(obs);
  for (double& b : pol.output_layer().bias.value.data()) b += 7.5;
  const auto after = pol.action_distribution(obs);
  for (std::size_t k = 0; k < before.size(); ++k) EXPECT_NEAR(before[k], after[k], 1e-12);
}

TEST(Policy, SampleLogProbMatchesProbability) {
  Rng rng(5);
  DiscretePolicy pol("p", 3, 8, 5, rng);
  for (int trial = 0; trial < 500; ++trial) {
    const auto obs = maac::testing::random_vector(3, rng, 2.0);
    const auto s = pol.sample(obs, rng);
    EXPECT_NEAR(s.log_prob, std::log(s.probs[static_cast<std::size_t>(s.action)]), 1e-12);
  }
}

TEST(Policy, SamplingIsDeterministicForASeed) {
  Rng init(6);
  DiscretePolicy pol("p", 3, 8, 5, init);
  const auto obs = maac::testing::random_vector(3, init);
  Rng a(42), b(42);
  for (int k = 0; k < 100; ++k) EXPECT_EQ(pol.sample(obs, a).action, pol.sample(obs, b).action);
}

TEST(Sampling, DegenerateDistributionAlwaysPicksItsAction) {
  Rng rng(7);
  const std::vector<double> p{1.0, 0.0, 0.0, 0.0, 0.0};
  for (int k = 0; k < 1000; ++k) EXPECT_EQ(sample_categorical(p, rng), 0);
  // Logits that put (numerically) all mass on action 0.
  const std::vector<double> z{800.0, 0.0, 0.0, 0.0, 0.0};
  for (int k = 0; k < 1000; ++k) EXPECT_EQ(DiscretePolicy::sample_from_logits(z, rng).action, 0);
}

TEST(Sampling, EmpiricalFrequenciesMatchProbabilities) {
  Rng init(8);
  DiscretePolicy pol("p", 3, 8, 5, init);
  const auto obs = maac::testing::random_vector(3, init, 2.0);
  const auto probs = pol.action_distribution(obs);
  const int draws = 100000;
  std::vector<int> counts(5, 0);
  Rng rng(9);
  for (int k = 0; k < draws; ++k) ++counts[static_cast<std::size_t>(pol.sample(obs, rng).action)];
  expect_within_three_sigma(counts, probs, draws);
}

TEST(Gumbel, RelaxedSampleSumsToOne) {
  Rng rng(10);
  for (int trial = 0; trial < 200; ++trial) {
    const auto z = maac::testing::random_vector(5, rng, 3.0);
    const auto s = gumbel_softmax(z, 1.0, rng, false);
    EXPECT_NEAR(std::accumulate(s.output.begin(), s.output.end(), 0.0), 1.0, 1e-12);
    EXPECT_EQ(s.output, s.relaxed);
  }
  EXPECT_THROW(gumbel_softmax(std::vector<double>{0.0, 1.0}, 0.0, rng, false), DimensionError);
}

TEST(Gumbel, LowTemperatureApproachesHardArgmax) {
  Rng rng(11);
  int checked = 0;
  for (int trial = 0; trial < 500; ++trial) {
    const auto z = maac::testing::random_vector(5, rng, 2.0);
    std::vector<double> noise(5);
    for (double& g : noise) g = draw_gumbel(rng);
    std::vector<double> perturbed(5);
    for (std::size_t k = 0; k < 5; ++k) perturbed[k] = z[k] + noise[k];
    std::vector<double> sorted = perturbed;
    std::sort(sorted.rbegin(), sorted.rend());
    // The limit statement needs a gap wider than T * ln(1e6) between the top two.
    if (sorted[0] - sorted[1] < 0.01 * std::log(1e7)) continue;
    const auto s = gumbel_softmax_with_noise(z, noise, 0.01, false);
    const std::size_t best = argmax(perturbed);
    for (std::size_t k = 0; k < 5; ++k) EXPECT_NEAR(s.output[k], k == best ? 1.0 : 0.0, 1e-6);
    ++checked;
  }
  EXPECT_GT(checked, 400);
}

TEST(Gumbel, StraightThroughOutputsHardOneHot) {
  Rng rng(12);
  const auto z = maac::testing::random_vector(5, rng);
  const auto s = gumbel_softmax(z, 1.0, rng, true);
  const std::size_t best = argmax(s.relaxed);
  for (std::size_t k = 0; k < 5; ++k) EXPECT_EQ(s.output[k], k == best ? 1.0 : 0.0);
}

TEST(Gumbel, ArgmaxFrequenciesMatchSoftmax) {
  Rng rng(13);
  const std::vector<double> z{0.5, -1.0, 1.2, 0.0, -0.3};
  const auto probs = softmax(z);
  const int draws = 100000;
  std::vector<int> counts(5, 0);
  for (int k = 0; k < draws; ++k) ++counts[argmax(gumbel_softmax(z, 1.0, rng, true).output)];
  expect_within_three_sigma(counts, probs, draws);
}

TEST(Gumbel, RelaxedGradientMatchesFiniteDifferences) {
  Rng rng(14);
  for (double temperature : {0.5, 1.0, 2.0}) {
    ParamTensor logits("logits", 1, 5);
    maac::testing::randomize(logits, rng, 1.5);
    std::vector<double> noise(5);
    for (double& g : noise) g = draw_gumbel(rng);
    const std::vector<double> weights{0.3, -1.2, 0.8, 2.0, -0.4};
    const auto loss = [&] {
      const auto s = gumbel_softmax_with_noise(logits.value.data(), noise, temperature, false);
      return std::inner_product(s.output.begin(), s.output.end(), weights.begin(), 0.0);
    };
    const auto s = gumbel_softmax_with_noise(logits.value.data(), noise, temperature, true);
    const auto dz = gumbel_softmax_backward(s, temperature, weights);
    std::copy(dz.begin(), dz.end(), logits.grad.data().begin());
    std::vector<ParamTensor*> params{&logits};
    EXPECT_LT(grad_check(loss, params).max_relative_error, 1e-5) << "temperature " << temperature;
  }
}

TEST(Policy, BackwardMatchesFiniteDifferences) {
  Rng rng(15);
  for (int attempt = 0; attempt < 100; ++attempt) {
    DiscretePolicy pol("p", 4, 6, 5, rng);
    maac::testing::randomize(pol.hidden_layer().bias, rng, 0.3);
    const Matrix obs = maac::testing::random_matrix(3, 4, rng);
    const auto tape = pol.forward(obs);
    if (!maac::testing::clear_of_kinks(tape.hidden_pre)) continue;
    const std::vector<int> acts{0, 3, 4};
    const auto loss = [&] {
      const auto t = pol.forward(obs);
      double s = 0.0;
      for (std::size_t b = 0; b < 3; ++b) s -= std::log(t.probs(b, static_cast<std::size_t>(acts[b])));
      return s;
    };
    Matrix dlogits(3, 5);
    for (std::size_t b = 0; b < 3; ++b)
      for (std::size_t k = 0; k < 5; ++k)
        dlogits(b, k) = tape.probs(b, k) - (static_cast<int>(k) == acts[b] ? 1.0 : 0.0);
    pol.backward(tape, dlogits);
    std::vector<ParamTensor*> params;
    pol.for_each_param([&](ParamTensor& p) { params.push_back(&p); });
    EXPECT_LT(grad_check(loss, params).max_relative_error, 1e-6);
    return;
  }
  FAIL() << "no kink-free instance found";
}
