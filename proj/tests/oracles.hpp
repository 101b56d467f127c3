#pragma once

// Reference implementations written without the library's matrix code, used
// as oracles by the unit and acceptance tests.

#include <algorithm>
#include <cmath>
#include <vector>

#include "maac/critics.hpp"
#include "maac/envsim.hpp"

namespace maac::oracle {

using Vec = std::vector<double>;

inline double leaky(double x) { return x > 0.0 ? x : 0.01 * x; }

// y = x W (+ b), W stored in x rows by y cols.
inline Vec dense(const Vec& x, const Matrix& w, const Matrix* b) {
  Vec y(w.cols(), 0.0);
  for (std::size_t c = 0; c < w.cols(); ++c) {
    double s = b != nullptr ? (*b)(0, c) : 0.0;
    for (std::size_t r = 0; r < w.rows(); ++r) s += x[r] * w(r, c);
    y[c] = s;
  }
  return y;
}

inline Vec dense(const Vec& x, const Linear& l) {
  return dense(x, l.weight.value, l.has_bias ? &l.bias.value : nullptr);
}

inline Vec leaky(Vec v) {
  for (double& x : v) x = leaky(x);
  return v;
}

struct CriticOutput {
  Vec q;                            // per action of the querying agent
  std::vector<Vec> head_weights;    // per head, over the other agents in index order
};

// Evaluates one row of the attention critic for agent i by direct loops over
// the stored parameters. obs[j] and action[j] describe every agent.
inline CriticOutput attention_q(const AttentionCritic& c, std::size_t i, const std::vector<Vec>& obs,
                                const std::vector<int>& actions) {
  const std::size_t n = c.agents();
  const std::size_t heads = c.heads();
  const std::size_t dk = c.head_dim();
  std::vector<Vec> sa(n);
  for (std::size_t j = 0; j < n; ++j) {
    Vec in = obs[j];
    for (std::size_t a = 0; a < c.shapes()[j].actions; ++a) in.push_back(static_cast<int>(a) == actions[j] ? 1.0 : 0.0);
    sa[j] = leaky(dense(in, c.sa_encoder(j)));
  }
  const Vec own = leaky(dense(obs[i], c.obs_encoder(i)));

  CriticOutput out;
  Vec head_in = own;
  for (std::size_t h = 0; h < heads; ++h) {
    Vec weights;
    Vec x(dk, 0.0);
    if (n > 1) {
      const Vec q = dense(own, c.query(h).value, nullptr);
      Vec logits;
      for (std::size_t j = 0; j < n; ++j) {
        if (j == i) continue;
        if (c.mode() == AttentionMode::uniform) {
          logits.push_back(0.0);
          continue;
        }
        const Vec k = dense(sa[j], c.key(h).value, nullptr);
        double dot = 0.0;
        for (std::size_t d = 0; d < dk; ++d) dot += k[d] * q[d];
        logits.push_back(dot / std::sqrt(static_cast<double>(dk)));
      }
      double mx = logits[0];
      for (double l : logits) mx = std::max(mx, l);
      double z = 0.0;
      for (double l : logits) z += std::exp(l - mx);
      for (double l : logits) weights.push_back(std::exp(l - mx) / z);
      std::size_t k = 0;
      for (std::size_t j = 0; j < n; ++j) {
        if (j == i) continue;
        const Vec v = leaky(dense(sa[j], c.value(h).value, nullptr));
        for (std::size_t d = 0; d < dk; ++d) x[d] += weights[k] * v[d];
        ++k;
      }
    }
    out.head_weights.push_back(weights);
    head_in.insert(head_in.end(), x.begin(), x.end());
  }
  out.q = dense(leaky(dense(head_in, c.head_hidden(i))), c.head_out(i));
  return out;
}

// Scalar reference for one physics step over all entities.
struct Body {
  double px, py, vx, vy;
  double radius;
  bool movable, collide;
};

inline void integrate(std::vector<Body>& bodies, const std::vector<double>& fx_in,
                      const std::vector<double>& fy_in, const PhysicsConfig& cfg) {
  const std::size_t n = bodies.size();
  std::vector<double> fx = fx_in, fy = fy_in;
  for (std::size_t a = 0; a < n; ++a) {
    for (std::size_t b = 0; b < n; ++b) {
      if (a == b || !bodies[a].movable || !bodies[a].collide || !bodies[b].collide) continue;
      const double dx = bodies[a].px - bodies[b].px;
      const double dy = bodies[a].py - bodies[b].py;
      const double dist = std::sqrt(dx * dx + dy * dy);
      const double pen = bodies[a].radius + bodies[b].radius - dist;
      if (pen > 0.0 && dist > 0.0) {
        fx[a] += cfg.contact_stiffness * pen * dx / dist;
        fy[a] += cfg.contact_stiffness * pen * dy / dist;
      }
    }
  }
  for (std::size_t a = 0; a < n; ++a) {
    Body& e = bodies[a];
    if (!e.movable) {
      e.vx = e.vy = 0.0;
      continue;
    }
    const double w = cfg.arena_half_width;
    if (e.px > w) fx[a] -= cfg.boundary_stiffness * (e.px - w);
    if (e.px < -w) fx[a] += cfg.boundary_stiffness * (-w - e.px);
    if (e.py > w) fy[a] -= cfg.boundary_stiffness * (e.py - w);
    if (e.py < -w) fy[a] += cfg.boundary_stiffness * (-w - e.py);
    double vx = (1.0 - cfg.damping) * e.vx + fx[a] / cfg.mass * cfg.dt;
    double vy = (1.0 - cfg.damping) * e.vy + fy[a] / cfg.mass * cfg.dt;
    const double speed = std::sqrt(vx * vx + vy * vy);
    if (speed > cfg.max_speed) {
      vx *= cfg.max_speed / speed;
      vy *= cfg.max_speed / speed;
    }
    e.vx = vx;
    e.vy = vy;
    e.px += vx * cfg.dt;
    e.py += vy * cfg.dt;
  }
}

// Explicit sum over one agent's actions of pi(a) * Q(a).
inline double expected_value(const std::vector<double>& probs, const std::vector<double>& q) {
  double b = 0.0;
  for (std::size_t a = 0; a < probs.size(); ++a) b += probs[a] * q[a];
  return b;
}

}  // namespace maac::oracle
