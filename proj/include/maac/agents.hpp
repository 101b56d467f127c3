#pragma once

// Decentralised discrete policies and the Gumbel-Softmax relaxation.

#include <cmath>
#include <limits>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "maac/numcore.hpp"

namespace maac {

struct ActionSample {
  int action = 0;
  double log_prob = 0.0;
  std::vector<double> probs;
};

// Inverse-CDF draw from a probability vector.
inline int sample_categorical(std::span<const double> probs, Rng& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const double x = u(rng);
  double cum = 0.0;
  for (std::size_t k = 0; k < probs.size(); ++k) {
    cum += probs[k];
    if (x < cum) return static_cast<int>(k);
  }
  // Rounding left x past the final cumulative sum; return the last
  // action with non-zero mass.
  for (std::size_t k = probs.size(); k-- > 0;)
    if (probs[k] > 0.0) return static_cast<int>(k);
  return 0;
}

inline std::size_t argmax(std::span<const double> v) {
  std::size_t best = 0;
  for (std::size_t k = 1; k < v.size(); ++k)
    if (v[k] > v[best]) best = k;
  return best;
}

// Two-layer policy: obs -> leaky-ReLU hidden -> action logits.
class DiscretePolicy {
 public:
  struct Tape {
    Matrix obs;
    Matrix hidden_pre;
    Matrix hidden;
    Matrix logits;
    Matrix probs;
  };

  DiscretePolicy() = default;
  DiscretePolicy(const std::string& name, std::size_t obs_dim, std::size_t hidden,
                 std::size_t actions, Rng& rng)
      : hidden_(name + ".hidden", obs_dim, hidden, rng), out_(name + ".out", hidden, actions, rng) {}

  std::size_t obs_dim() const noexcept { return hidden_.in_dim(); }
  std::size_t action_count() const noexcept { return out_.out_dim(); }

  Tape forward(const Matrix& obs) const {
    if (obs.cols() != obs_dim())
      throw DimensionError("policy: observation width " + std::to_string(obs.cols()) +
                           " != " + std::to_string(obs_dim()));
    Tape t;
    t.obs = obs;
    t.hidden_pre = hidden_.forward(obs);
    t.hidden = leaky_relu(t.hidden_pre);
    t.logits = out_.forward(t.hidden);
    t.probs = softmax_rows(t.logits);
    return t;
  }

  // Accumulates parameter gradients for an upstream gradient on the logits.
  void backward(const Tape& t, const Matrix& dlogits) {
    const Matrix dhidden = out_.backward(t.hidden, dlogits);
    hidden_.backward(t.obs, leaky_relu_backward(t.hidden_pre, dhidden), false);
  }

  std::vector<double> logits(std::span<const double> obs) const {
    const Tape t = forward(Matrix::row_vector(obs));
    return {t.logits.data().begin(), t.logits.data().end()};
  }

  std::vector<double> action_distribution(std::span<const double> obs) const {
    const Tape t = forward(Matrix::row_vector(obs));
    return {t.probs.data().begin(), t.probs.data().end()};
  }

  ActionSample sample(std::span<const double> obs, Rng& rng) const {
    const auto z = logits(obs);
    return sample_from_logits(z, rng);
  }

  static ActionSample sample_from_logits(std::span<const double> z, Rng& rng) {
    ActionSample s;
    s.probs = softmax(z);
    s.action = sample_categorical(s.probs, rng);
    s.log_prob = log_softmax(z)[static_cast<std::size_t>(s.action)];
    return s;
  }

  Linear& hidden_layer() noexcept { return hidden_; }
  Linear& output_layer() noexcept { return out_; }
  const Linear& output_layer() const noexcept { return out_; }

  template <class F>
  void for_each_param(F&& f) {
    hidden_.for_each_param(f);
    out_.for_each_param(f);
  }
  template <class F>
  void for_each_param(F&& f) const {
    hidden_.for_each_param(f);
    out_.for_each_param(f);
  }

 private:
  Linear hidden_;
  Linear out_;
};

struct GumbelSample {
  std::vector<double> noise;
  std::vector<double> relaxed;  // softmax((z + g) / T)
  std::vector<double> output;   // relaxed, or its hard one-hot when straight-through
};

inline double draw_gumbel(Rng& rng) {
  std::uniform_real_distribution<double> u(std::numeric_limits<double>::min(), 1.0);
  return -std::log(-std::log(u(rng)));
}

inline GumbelSample gumbel_softmax_with_noise(std::span<const double> logits,
                                              std::span<const double> noise, double temperature,
                                              bool straight_through) {
  if (!(temperature > 0.0)) throw DimensionError("gumbel_softmax: temperature must be positive");
  GumbelSample s;
  s.noise.assign(noise.begin(), noise.end());
  s.relaxed.resize(logits.size());
  for (std::size_t k = 0; k < logits.size(); ++k)
    s.relaxed[k] = (logits[k] + noise[k]) / temperature;
  softmax_inplace(s.relaxed);
  if (straight_through) {
    s.output.assign(logits.size(), 0.0);
    s.output[argmax(s.relaxed)] = 1.0;
  } else {
    s.output = s.relaxed;
  }
  return s;
}

inline GumbelSample gumbel_softmax(std::span<const double> logits, double temperature, Rng& rng,
                                   bool straight_through) {
  std::vector<double> noise(logits.size());
  for (double& g : noise) g = draw_gumbel(rng);
  return gumbel_softmax_with_noise(logits, noise, temperature, straight_through);
}

// Gradient w.r.t. logits through the relaxed sample; the straight-through
// forward value does not enter.
inline std::vector<double> gumbel_softmax_backward(const GumbelSample& s, double temperature,
                                                   std::span<const double> doutput) {
  auto dz = softmax_backward(s.relaxed, doutput);
  for (double& v : dz) v /= temperature;
  return dz;
}

}  // namespace maac
