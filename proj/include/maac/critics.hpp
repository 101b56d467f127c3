#pragma once

// Centralised critics.
//
// AttentionCritic: per-agent encoders and heads with multi-head attention
// over the other agents' state-action embeddings. Query/key/value maps are
// shared by all agents. The head for agent i sees only the observation
// embedding of i plus the attention contributions, and emits one value per
// action of i, so Q_i(o, (a_i', a_-i)) for every a_i' comes from one pass.
//
// ConcatCritic: per-agent MLP over all observations and the other agents'
// actions, with the same per-action output layout.
//
// IndependentCritic: per-agent MLP over (o_i, a_i) only, returning a scalar
// and the gradient with respect to the (relaxed) action input.

#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "maac/numcore.hpp"

namespace maac {

struct AgentShape {
  std::size_t obs_dim = 0;
  std::size_t actions = 0;
  friend bool operator==(const AgentShape&, const AgentShape&) = default;
};

// Per-agent B x dim blocks. Actions are one-hot (or relaxed) rows.
struct JointBatch {
  std::vector<Matrix> obs;
  std::vector<Matrix> actions;

  std::size_t agents() const noexcept { return obs.size(); }
  std::size_t batch_size() const noexcept { return obs.empty() ? 0 : obs.front().rows(); }
};

inline std::vector<std::size_t> other_agents(std::size_t i, std::size_t n) {
  std::vector<std::size_t> out;
  for (std::size_t j = 0; j < n; ++j)
    if (j != i) out.push_back(j);
  return out;
}

struct AttentionTrace {
  // weights[i][h] is B x (N-1); column k refers to agent others[i][k].
  std::vector<std::vector<Matrix>> weights;
  std::vector<std::vector<std::size_t>> others;

  double entropy(std::size_t agent, std::size_t head, std::size_t row) const {
    return maac::entropy(weights[agent][head].row(row));
  }

  double mean_entropy(std::size_t agent, std::size_t head) const {
    const Matrix& w = weights[agent][head];
    if (w.rows() == 0) return 0.0;
    double s = 0.0;
    for (std::size_t r = 0; r < w.rows(); ++r) s += maac::entropy(w.row(r));
    return s / static_cast<double>(w.rows());
  }
};

enum class AttentionMode { learned, uniform };

class AttentionCritic {
 public:
  struct Pass {
    std::vector<Matrix> sa_in, sa_pre, sa_emb;
    std::vector<Matrix> obs_in, obs_pre, obs_emb;
    std::vector<std::vector<Matrix>> keys, queries, value_pre, values;  // [head][agent]
    std::vector<std::vector<Matrix>> contribution;                      // [agent][head]
    AttentionTrace trace;
    std::vector<Matrix> head_in, hidden_pre, hidden;
    std::vector<Matrix> q;  // per agent B x |A_i|
  };

  AttentionCritic() = default;
  AttentionCritic(std::vector<AgentShape> agents, std::size_t hidden, std::size_t heads,
                  AttentionMode mode, Rng& rng)
      : agents_(std::move(agents)), embed_(hidden), heads_(heads), mode_(mode) {
    if (heads_ == 0 || embed_ % heads_ != 0)
      throw DimensionError("AttentionCritic: hidden size must be a multiple of the head count");
    head_dim_ = embed_ / heads_;
    for (std::size_t i = 0; i < agents_.size(); ++i) {
      const auto& a = agents_[i];
      const std::string tag = std::to_string(i);
      sa_encoder_.emplace_back("critic.sa_encoder." + tag, a.obs_dim + a.actions, embed_, rng);
      obs_encoder_.emplace_back("critic.obs_encoder." + tag, a.obs_dim, embed_, rng);
      head_hidden_.emplace_back("critic.head_hidden." + tag, head_input_width(), hidden, rng);
      head_out_.emplace_back("critic.head_out." + tag, hidden, a.actions, rng);
    }
    for (std::size_t h = 0; h < heads_; ++h) {
      const std::string tag = std::to_string(h);
      query_.emplace_back("critic.query." + tag, embed_, head_dim_);
      key_.emplace_back("critic.key." + tag, embed_, head_dim_);
      value_.emplace_back("critic.value." + tag, embed_, head_dim_);
      init_uniform_fan_in(query_.back(), embed_, rng);
      init_uniform_fan_in(key_.back(), embed_, rng);
      init_uniform_fan_in(value_.back(), embed_, rng);
    }
  }

  std::size_t agents() const noexcept { return agents_.size(); }
  const std::vector<AgentShape>& shapes() const noexcept { return agents_; }
  std::size_t embed_dim() const noexcept { return embed_; }
  std::size_t heads() const noexcept { return heads_; }
  std::size_t head_dim() const noexcept { return head_dim_; }
  AttentionMode mode() const noexcept { return mode_; }
  std::size_t encoder_input_width(std::size_t i) const {
    return agents_.at(i).obs_dim + agents_.at(i).actions;
  }
  std::size_t head_input_width() const noexcept { return embed_ + heads_ * head_dim_; }

  // e_i = leaky(g_i(o_i, a_i)) with the action one-hot.
  Matrix encode(std::size_t i, const Matrix& obs, const Matrix& action) const {
    return leaky_relu(sa_encoder_.at(i).forward(hconcat({&obs, &action})));
  }
  // e_i = leaky(g_i^o(o_i)).
  Matrix encode(std::size_t i, const Matrix& obs) const {
    return leaky_relu(obs_encoder_.at(i).forward(obs));
  }

  // alpha over the given others (B x others.size()) for one head.
  Matrix attention_weights(std::size_t head, const Matrix& query_embedding,
                           std::span<const Matrix> other_embeddings) const {
    std::vector<Matrix> keys;
    for (const Matrix& e : other_embeddings) keys.push_back(matmul(e, key_.at(head).value));
    return weights_from(matmul(query_embedding, query_.at(head).value), keys,
                        query_embedding.rows());
  }

  // x^(h) = sum_j alpha_j leaky(V e_j).
  Matrix contribution(std::size_t head, const Matrix& alpha,
                      std::span<const Matrix> other_embeddings) const {
    std::vector<Matrix> values;
    for (const Matrix& e : other_embeddings)
      values.push_back(leaky_relu(matmul(e, value_.at(head).value)));
    return mix(alpha, values, alpha.rows());
  }

  struct AgentValues {
    Matrix values;                   // B x |A_i|
    std::vector<Matrix> head_weights;  // per head B x (N-1)
  };

  AgentValues q_values(std::size_t i, const JointBatch& batch) const {
    Pass p = forward(batch);
    return {std::move(p.q.at(i)), std::move(p.trace.weights.at(i))};
  }

  Pass forward(const JointBatch& batch) const {
    const std::size_t n = agents_.size();
    check_batch(batch);
    const std::size_t rows = batch.batch_size();
    const bool learned = mode_ == AttentionMode::learned;
    Pass p;
    p.sa_in.resize(n);
    p.sa_pre.resize(n);
    p.sa_emb.resize(n);
    p.obs_in.resize(n);
    p.obs_pre.resize(n);
    p.obs_emb.resize(n);
    for (std::size_t j = 0; j < n; ++j) {
      p.sa_in[j] = hconcat({&batch.obs[j], &batch.actions[j]});
      p.sa_pre[j] = sa_encoder_[j].forward(p.sa_in[j]);
      p.sa_emb[j] = leaky_relu(p.sa_pre[j]);
      p.obs_in[j] = batch.obs[j];
      p.obs_pre[j] = obs_encoder_[j].forward(batch.obs[j]);
      p.obs_emb[j] = leaky_relu(p.obs_pre[j]);
    }
    p.keys.assign(heads_, std::vector<Matrix>(n));
    p.queries.assign(heads_, std::vector<Matrix>(n));
    p.value_pre.assign(heads_, std::vector<Matrix>(n));
    p.values.assign(heads_, std::vector<Matrix>(n));
    if (n > 1) {
      for (std::size_t h = 0; h < heads_; ++h) {
        for (std::size_t j = 0; j < n; ++j) {
          p.value_pre[h][j] = matmul(p.sa_emb[j], value_[h].value);
          p.values[h][j] = leaky_relu(p.value_pre[h][j]);
          if (learned) {
            p.keys[h][j] = matmul(p.sa_emb[j], key_[h].value);
            p.queries[h][j] = matmul(p.obs_emb[j], query_[h].value);
          }
        }
      }
    }
    p.trace.weights.assign(n, std::vector<Matrix>(heads_));
    p.trace.others.resize(n);
    p.contribution.assign(n, std::vector<Matrix>(heads_));
    p.head_in.resize(n);
    p.hidden_pre.resize(n);
    p.hidden.resize(n);
    p.q.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      const auto others = other_agents(i, n);
      p.trace.others[i] = others;
      std::vector<const Matrix*> blocks{&p.obs_emb[i]};
      for (std::size_t h = 0; h < heads_; ++h) {
        Matrix& alpha = p.trace.weights[i][h];
        std::vector<Matrix> vals;
        if (learned) {
          std::vector<Matrix> keys;
          for (std::size_t j : others) keys.push_back(p.keys[h][j]);
          alpha = weights_from(p.queries[h][i], keys, rows);
        } else {
          alpha = Matrix(rows, others.size(),
                         others.empty() ? 0.0 : 1.0 / static_cast<double>(others.size()));
        }
        for (std::size_t j : others) vals.push_back(p.values[h][j]);
        p.contribution[i][h] = others.empty() ? Matrix(rows, head_dim_) : mix(alpha, vals, rows);
        blocks.push_back(&p.contribution[i][h]);
      }
      p.head_in[i] = hconcat(std::span<const Matrix* const>(blocks));
      p.hidden_pre[i] = head_hidden_[i].forward(p.head_in[i]);
      p.hidden[i] = leaky_relu(p.hidden_pre[i]);
      p.q[i] = head_out_[i].forward(p.hidden[i]);
    }
    return p;
  }

  // Accumulates gradients of all parameters given dLoss/dq per agent.
  void backward(const Pass& p, std::span<const Matrix> dq) {
    const std::size_t n = agents_.size();
    if (dq.size() != n) throw DimensionError("AttentionCritic::backward: one gradient per agent");
    const std::size_t rows = p.q.empty() ? 0 : p.q.front().rows();
    const bool learned = mode_ == AttentionMode::learned;
    const double scale = 1.0 / std::sqrt(static_cast<double>(head_dim_));

    std::vector<Matrix> d_sa(n, Matrix(rows, embed_)), d_obs(n, Matrix(rows, embed_));
    std::vector<std::vector<Matrix>> d_values(heads_, std::vector<Matrix>(n, Matrix(rows, head_dim_)));
    std::vector<std::vector<Matrix>> d_keys = d_values, d_queries = d_values;

    for (std::size_t i = 0; i < n; ++i) {
      const Matrix dhidden = head_out_[i].backward(p.hidden[i], dq[i]);
      const Matrix dhead_in =
          head_hidden_[i].backward(p.head_in[i], leaky_relu_backward(p.hidden_pre[i], dhidden));
      d_obs[i] += column_block(dhead_in, 0, embed_);
      const auto& others = p.trace.others[i];
      if (others.empty()) continue;
      std::vector<double> dalpha(others.size());
      for (std::size_t h = 0; h < heads_; ++h) {
        const Matrix& alpha = p.trace.weights[i][h];
        const std::size_t offset = embed_ + h * head_dim_;
        for (std::size_t b = 0; b < rows; ++b) {
          const auto dx = dhead_in.row(b).subspan(offset, head_dim_);
          for (std::size_t k = 0; k < others.size(); ++k) {
            const std::size_t j = others[k];
            const auto v = p.values[h][j].row(b);
            auto dv = d_values[h][j].row(b);
            double s = 0.0;
            for (std::size_t c = 0; c < head_dim_; ++c) {
              s += dx[c] * v[c];
              dv[c] += alpha(b, k) * dx[c];
            }
            dalpha[k] = s;
          }
          if (!learned) continue;
          const auto dlogit = softmax_backward(alpha.row(b), dalpha);
          const auto q = p.queries[h][i].row(b);
          auto dq_row = d_queries[h][i].row(b);
          for (std::size_t k = 0; k < others.size(); ++k) {
            const std::size_t j = others[k];
            const auto key = p.keys[h][j].row(b);
            auto dk = d_keys[h][j].row(b);
            const double g = dlogit[k] * scale;
            for (std::size_t c = 0; c < head_dim_; ++c) {
              dq_row[c] += g * key[c];
              dk[c] += g * q[c];
            }
          }
        }
      }
    }

    if (n > 1) {
      for (std::size_t h = 0; h < heads_; ++h) {
        for (std::size_t j = 0; j < n; ++j) {
          const Matrix dpre = leaky_relu_backward(p.value_pre[h][j], d_values[h][j]);
          d_sa[j] += affine_backward(p.sa_emb[j], dpre, value_[h], nullptr);
          if (learned) {
            d_sa[j] += affine_backward(p.sa_emb[j], d_keys[h][j], key_[h], nullptr);
            d_obs[j] += affine_backward(p.obs_emb[j], d_queries[h][j], query_[h], nullptr);
          }
        }
      }
    }
    for (std::size_t j = 0; j < n; ++j) {
      sa_encoder_[j].backward(p.sa_in[j], leaky_relu_backward(p.sa_pre[j], d_sa[j]), false);
      obs_encoder_[j].backward(p.obs_in[j], leaky_relu_backward(p.obs_pre[j], d_obs[j]), false);
    }
  }

  template <class F>
  void for_each_param(F&& f) {
    for_each_param_impl(*this, f);
  }
  template <class F>
  void for_each_param(F&& f) const {
    for_each_param_impl(*this, f);
  }

  // Raw access for diagnostics and independent re-evaluation in tests.
  const Linear& sa_encoder(std::size_t i) const { return sa_encoder_.at(i); }
  const Linear& obs_encoder(std::size_t i) const { return obs_encoder_.at(i); }
  const Linear& head_hidden(std::size_t i) const { return head_hidden_.at(i); }
  const Linear& head_out(std::size_t i) const { return head_out_.at(i); }
  Linear& head_out(std::size_t i) { return head_out_.at(i); }
  const ParamTensor& query(std::size_t h) const { return query_.at(h); }
  const ParamTensor& key(std::size_t h) const { return key_.at(h); }
  const ParamTensor& value(std::size_t h) const { return value_.at(h); }

 private:
  template <class Self, class F>
  static void for_each_param_impl(Self& self, F& f) {
    for (auto& l : self.sa_encoder_) l.for_each_param(f);
    for (auto& l : self.obs_encoder_) l.for_each_param(f);
    for (auto& l : self.head_hidden_) l.for_each_param(f);
    for (auto& l : self.head_out_) l.for_each_param(f);
    for (auto& p : self.query_) f(p);
    for (auto& p : self.key_) f(p);
    for (auto& p : self.value_) f(p);
  }

  Matrix weights_from(const Matrix& queries, std::span<const Matrix> keys, std::size_t rows) const {
    Matrix alpha(rows, keys.size());
    if (keys.empty()) return alpha;
    const double scale = 1.0 / std::sqrt(static_cast<double>(head_dim_));
    for (std::size_t b = 0; b < rows; ++b) {
      auto a = alpha.row(b);
      const auto q = queries.row(b);
      for (std::size_t k = 0; k < keys.size(); ++k) {
        const auto key = keys[k].row(b);
        double s = 0.0;
        for (std::size_t c = 0; c < q.size(); ++c) s += key[c] * q[c];
        a[k] = s * scale;
      }
      softmax_inplace(a);
    }
    return alpha;
  }

  static Matrix mix(const Matrix& alpha, std::span<const Matrix> values, std::size_t rows) {
    const std::size_t width = values.empty() ? 0 : values.front().cols();
    Matrix x(rows, width);
    for (std::size_t b = 0; b < rows; ++b) {
      auto out = x.row(b);
      for (std::size_t k = 0; k < values.size(); ++k) {
        const auto v = values[k].row(b);
        const double w = alpha(b, k);
        for (std::size_t c = 0; c < width; ++c) out[c] += w * v[c];
      }
    }
    return x;
  }

  void check_batch(const JointBatch& batch) const {
    const std::size_t n = agents_.size();
    if (batch.obs.size() != n || batch.actions.size() != n)
      throw DimensionError("critic: batch must supply observations and actions for every agent");
    for (std::size_t j = 0; j < n; ++j) {
      if (batch.obs[j].cols() != agents_[j].obs_dim || batch.obs[j].rows() != batch.batch_size())
        throw DimensionError("critic: observation block " + std::to_string(j) + " has shape " +
                             shape_str(batch.obs[j]));
      if (batch.actions[j].cols() != agents_[j].actions ||
          batch.actions[j].rows() != batch.batch_size())
        throw DimensionError("critic: action block " + std::to_string(j) + " has shape " +
                             shape_str(batch.actions[j]));
    }
  }

  std::vector<AgentShape> agents_;
  std::size_t embed_ = 0;
  std::size_t heads_ = 0;
  std::size_t head_dim_ = 0;
  AttentionMode mode_ = AttentionMode::learned;
  std::vector<Linear> sa_encoder_, obs_encoder_, head_hidden_, head_out_;
  std::vector<ParamTensor> query_, key_, value_;
};

// Three-layer MLP with leaky-ReLU hidden activations.
struct Mlp3 {
  Linear l1, l2, l3;

  struct Tape {
    Matrix x, pre1, h1, pre2, h2, out;
  };

  Mlp3() = default;
  Mlp3(const std::string& name, std::size_t in, std::size_t hidden, std::size_t out, Rng& rng)
      : l1(name + ".l1", in, hidden, rng),
        l2(name + ".l2", hidden, hidden, rng),
        l3(name + ".l3", hidden, out, rng) {}

  Tape forward(Matrix x) const {
    Tape t;
    t.x = std::move(x);
    t.pre1 = l1.forward(t.x);
    t.h1 = leaky_relu(t.pre1);
    t.pre2 = l2.forward(t.h1);
    t.h2 = leaky_relu(t.pre2);
    t.out = l3.forward(t.h2);
    return t;
  }

  Matrix backward(const Tape& t, const Matrix& dout, bool need_dx) {
    const Matrix dh2 = l3.backward(t.h2, dout);
    const Matrix dh1 = l2.backward(t.h1, leaky_relu_backward(t.pre2, dh2));
    return l1.backward(t.x, leaky_relu_backward(t.pre1, dh1), need_dx);
  }

  template <class F>
  void for_each_param(F&& f) {
    l1.for_each_param(f);
    l2.for_each_param(f);
    l3.for_each_param(f);
  }
  template <class F>
  void for_each_param(F&& f) const {
    l1.for_each_param(f);
    l2.for_each_param(f);
    l3.for_each_param(f);
  }
};

class ConcatCritic {
 public:
  struct Pass {
    std::vector<Mlp3::Tape> tapes;
    std::vector<Matrix> q;
  };

  ConcatCritic() = default;
  ConcatCritic(std::vector<AgentShape> agents, std::size_t hidden, Rng& rng)
      : agents_(std::move(agents)) {
    for (std::size_t i = 0; i < agents_.size(); ++i)
      nets_.emplace_back("critic.concat." + std::to_string(i), input_width(i), hidden,
                         agents_[i].actions, rng);
  }

  std::size_t agents() const noexcept { return agents_.size(); }
  const std::vector<AgentShape>& shapes() const noexcept { return agents_; }

  std::size_t input_width(std::size_t i) const {
    std::size_t w = 0;
    for (std::size_t j = 0; j < agents_.size(); ++j) {
      w += agents_[j].obs_dim;
      if (j != i) w += agents_[j].actions;
    }
    return w;
  }

  // [o_1 .. o_N | a_j for j != i]
  Matrix input(std::size_t i, const JointBatch& batch) const {
    std::vector<const Matrix*> blocks;
    for (const Matrix& o : batch.obs) blocks.push_back(&o);
    for (std::size_t j = 0; j < agents_.size(); ++j)
      if (j != i) blocks.push_back(&batch.actions[j]);
    return hconcat(std::span<const Matrix* const>(blocks));
  }

  Pass forward(const JointBatch& batch) const {
    if (batch.obs.size() != agents_.size() || batch.actions.size() != agents_.size())
      throw DimensionError("critic: batch must supply observations and actions for every agent");
    Pass p;
    for (std::size_t i = 0; i < agents_.size(); ++i) {
      Matrix x = input(i, batch);
      if (x.cols() != input_width(i))
        throw DimensionError("ConcatCritic: input width " + std::to_string(x.cols()) +
                             " != " + std::to_string(input_width(i)));
      p.tapes.push_back(nets_[i].forward(std::move(x)));
      p.q.push_back(p.tapes.back().out);
    }
    return p;
  }

  Matrix q_values(std::size_t i, const JointBatch& batch) const { return forward(batch).q.at(i); }

  void backward(const Pass& p, std::span<const Matrix> dq) {
    for (std::size_t i = 0; i < agents_.size(); ++i) nets_[i].backward(p.tapes[i], dq[i], false);
  }

  Mlp3& net(std::size_t i) { return nets_.at(i); }

  template <class F>
  void for_each_param(F&& f) {
    for (auto& n : nets_) n.for_each_param(f);
  }
  template <class F>
  void for_each_param(F&& f) const {
    for (const auto& n : nets_) n.for_each_param(f);
  }

 private:
  std::vector<AgentShape> agents_;
  std::vector<Mlp3> nets_;
};

class IndependentCritic {
 public:
  struct Pass {
    std::vector<Mlp3::Tape> tapes;
    std::vector<Matrix> q;  // B x 1
  };

  IndependentCritic() = default;
  IndependentCritic(std::vector<AgentShape> agents, std::size_t hidden, Rng& rng)
      : agents_(std::move(agents)) {
    for (std::size_t i = 0; i < agents_.size(); ++i)
      nets_.emplace_back("critic.independent." + std::to_string(i), input_width(i), hidden, 1, rng);
  }

  std::size_t agents() const noexcept { return agents_.size(); }
  const std::vector<AgentShape>& shapes() const noexcept { return agents_; }
  std::size_t input_width(std::size_t i) const {
    return agents_.at(i).obs_dim + agents_.at(i).actions;
  }

  Pass forward(const JointBatch& batch) const {
    if (batch.obs.size() != agents_.size() || batch.actions.size() != agents_.size())
      throw DimensionError("critic: batch must supply observations and actions for every agent");
    Pass p;
    for (std::size_t i = 0; i < agents_.size(); ++i) {
      Matrix x = hconcat({&batch.obs[i], &batch.actions[i]});
      if (x.cols() != input_width(i)) throw DimensionError("IndependentCritic: input width mismatch");
      p.tapes.push_back(nets_[i].forward(std::move(x)));
      p.q.push_back(p.tapes.back().out);
    }
    return p;
  }

  // Accumulates parameter gradients; returns dLoss/d(action block) per agent.
  std::vector<Matrix> backward(const Pass& p, std::span<const Matrix> dq) {
    std::vector<Matrix> dact;
    for (std::size_t i = 0; i < agents_.size(); ++i) {
      const Matrix dx = nets_[i].backward(p.tapes[i], dq[i], true);
      dact.push_back(column_block(dx, agents_[i].obs_dim, agents_[i].actions));
    }
    return dact;
  }

  template <class F>
  void for_each_param(F&& f) {
    for (auto& n : nets_) n.for_each_param(f);
  }
  template <class F>
  void for_each_param(F&& f) const {
    for (const auto& n : nets_) n.for_each_param(f);
  }

 private:
  std::vector<AgentShape> agents_;
  std::vector<Mlp3> nets_;
};

}  // namespace maac
