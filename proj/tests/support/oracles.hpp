#pragma once

// Dense recomputations written directly from the model equations, with no
// calls into the library's ops. Vectors are rows; matrices are row-major
// nested vectors and act on the right (x * W).

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <random>
#include <span>
#include <vector>

#include "quad/decoder.hpp"
#include "quad/encoder.hpp"
#include "quad/kg_data.hpp"
#include "quad/tensor.hpp"

namespace quad::oracle {

using Vec = std::vector<double>;
using Mat = std::vector<Vec>;

inline Mat to_mat(const Tensor& t) {
  Mat m(t.rows(), Vec(t.cols()));
  for (std::size_t r = 0; r < t.rows(); ++r)
    for (std::size_t c = 0; c < t.cols(); ++c) m[r][c] = t.at(r, c);
  return m;
}

inline Vec to_vec(const Tensor& t) { return Vec(t.values().begin(), t.values().end()); }

inline Vec vecmat(const Vec& x, const Mat& w) {
  Vec out(w.empty() ? 0 : w[0].size(), 0.0);
  for (std::size_t i = 0; i < x.size(); ++i)
    for (std::size_t j = 0; j < out.size(); ++j) out[j] += x[i] * w[i][j];
  return out;
}

inline Vec plus(Vec a, const Vec& b) {
  for (std::size_t i = 0; i < a.size(); ++i) a[i] += b[i];
  return a;
}

inline Vec times(Vec a, double s) {
  for (double& v : a) v *= s;
  return a;
}

inline double dot(const Vec& a, const Vec& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline double norm(const Vec& a) { return std::sqrt(dot(a, a)); }

// x times the unit-modulus version of r, one complex pair at a time.
inline Vec rotate(const Vec& x, const Vec& r) {
  Vec out(x.size());
  for (std::size_t k = 0; k + 1 < x.size(); k += 2) {
    const double modulus = std::hypot(r[k], r[k + 1]);
    const double c = modulus > 0.0 ? r[k] / modulus : 0.0;
    const double s = modulus > 0.0 ? r[k + 1] / modulus : 0.0;
    out[k] = x[k] * c - x[k + 1] * s;
    out[k + 1] = x[k] * s + x[k + 1] * c;
  }
  return out;
}

inline double apply(Activation kind, double v) {
  switch (kind) {
    case Activation::kIdentity: return v;
    case Activation::kRelu: return v > 0.0 ? v : 0.0;
    case Activation::kTanh: return std::tanh(v);
    case Activation::kSigmoid: return 1.0 / (1.0 + std::exp(-v));
    case Activation::kGelu: {
      const double c = std::sqrt(2.0 / M_PI);
      return 0.5 * v * (1.0 + std::tanh(c * (v + 0.044715 * v * v * v)));
    }
  }
  return v;
}

inline Vec apply(Activation kind, Vec v) {
  for (double& x : v) x = apply(kind, x);
  return v;
}

inline Vec layer_norm(const Vec& x, const Vec& gain, const Vec& bias, double eps = 1e-5) {
  double mu = 0.0;
  for (double v : x) mu += v;
  mu /= static_cast<double>(x.size());
  double var = 0.0;
  for (double v : x) var += (v - mu) * (v - mu);
  var /= static_cast<double>(x.size());
  Vec out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = (x[i] - mu) / std::sqrt(var + eps) * gain[i] + bias[i];
  return out;
}

// h_q for one statement: (sum over pairs of phi(h_qr, h_qv)) W_q.
inline Vec qualifier_encoding(const Statement& s, const Mat& ent, const Mat& rel, const Mat& w_q) {
  Vec acc(ent[0].size(), 0.0);
  for (const auto& q : s.qualifiers) acc = plus(acc, rotate(rel[q.relation], ent[q.entity]));
  return vecmat(acc, w_q);
}

struct BaseOracleOut {
  Mat entities;
  Mat relations;
};

// One base layer, walking the statements for every entity: standard edges
// from subjects, inverse edges from objects, and the self-loop.
inline BaseOracleOut base_layer(const Mat& ent, const Mat& rel, std::span<const Statement> statements,
                                std::size_t num_entities, std::size_t num_forward,
                                const BaseLayerParams& layer, const EncoderConfig& config) {
  const Mat w_std = to_mat(layer.w_standard), w_inv = to_mat(layer.w_inverse), w_self = to_mat(layer.w_self);
  const Mat w_q = to_mat(layer.w_qualifier), w_rel = to_mat(layer.w_relation);
  const std::size_t d = ent[0].size();
  const auto self_loop = static_cast<RelationId>(2 * num_forward);

  auto message = [&](const Vec& h_u, const Vec& h_r, const Statement* s) {
    const bool qualified = s != nullptr && !s->qualifiers.empty();
    const double a = qualified || config.scale_plain_edges ? config.alpha : 1.0;
    if (!qualified) {
      if (config.mix == QualifierMix::kQuadMix) return times(rotate(h_u, h_r), a);
      return rotate(h_u, times(h_r, a));
    }
    const Vec h_q = qualifier_encoding(*s, ent, rel, w_q);
    if (config.mix == QualifierMix::kQuadMix) return plus(times(rotate(h_u, h_r), a), times(h_q, 1.0 - a));
    return rotate(h_u, plus(times(h_r, a), times(h_q, 1.0 - a)));
  };

  BaseOracleOut out{ent, rel};
  for (std::size_t v = 0; v < num_entities; ++v) {
    Vec std_sum(d, 0.0), inv_sum(d, 0.0);
    std::size_t n_std = 0, n_inv = 0;
    for (const auto& s : statements) {
      if (static_cast<std::size_t>(s.object) == v) {
        std_sum = plus(std_sum, vecmat(message(ent[s.subject], rel[s.relation], &s), w_std));
        ++n_std;
      }
      if (static_cast<std::size_t>(s.subject) == v) {
        const auto inv = static_cast<RelationId>(s.relation + num_forward);
        inv_sum = plus(inv_sum, vecmat(message(ent[s.object], rel[inv], &s), w_inv));
        ++n_inv;
      }
    }
    Vec total = vecmat(message(ent[v], rel[self_loop], nullptr), w_self);
    if (config.degree_norm) {
      if (n_std) std_sum = times(std_sum, 1.0 / static_cast<double>(n_std));
      if (n_inv) inv_sum = times(inv_sum, 1.0 / static_cast<double>(n_inv));
    }
    total = plus(plus(std_sum, inv_sum), total);
    out.entities[v] = apply(config.activation, total);
  }
  for (std::size_t r = 0; r < 2 * num_forward; ++r) out.relations[r] = vecmat(rel[r], w_rel);
  return out;
}

inline Vec triple_project(const Vec& h_v, const Vec& h_r, const Vec& h_u, const Mat& weight, const Vec& bias) {
  Vec cat = h_v;
  cat.insert(cat.end(), h_r.begin(), h_r.end());
  cat.insert(cat.end(), h_u.begin(), h_u.end());
  return plus(vecmat(cat, weight), bias);
}

// One qualifier layer: each qualifier entity becomes the activated mean of
// phi(h_t, h_qr) W over the base triples it qualifies.
inline Mat qual_layer(const Mat& ent, const Mat& rel, std::span<const Statement> statements,
                      const QualLayerParams& layer, const EncoderConfig& config) {
  const Mat w = to_mat(layer.w_message), proj = to_mat(layer.projection.weight);
  const Vec bias = to_vec(layer.projection.bias);
  std::map<EntityId, std::pair<Vec, std::size_t>> acc;
  for (const auto& s : statements) {
    const Vec h_t = triple_project(ent[s.subject], rel[s.relation], ent[s.object], proj, bias);
    for (const auto& q : s.qualifiers) {
      auto& [sum, n] = acc.try_emplace(q.entity, Vec(ent[0].size(), 0.0), 0).first->second;
      sum = plus(sum, vecmat(rotate(h_t, rel[q.relation]), w));
      ++n;
    }
  }
  Mat out = ent;
  for (auto& [e, entry] : acc) {
    auto& [sum, n] = entry;
    out[e] = apply(config.activation, config.degree_norm ? times(sum, 1.0 / static_cast<double>(n)) : sum);
  }
  return out;
}

// The decoder for one sequence, position by position.
inline Mat transformer(const TokenSequence& seq, const Mat& ent, const Mat& rel, const DecoderParams& params,
                       const DecoderConfig& config) {
  const std::size_t length = seq.tokens.size();
  const std::size_t entity_rows = ent.size();
  const Mat pos = to_mat(params.positions);
  Mat x(length);
  for (std::size_t i = 0; i < length; ++i) {
    const auto t = static_cast<std::size_t>(seq.tokens[i]);
    const Vec& emb = t < entity_rows ? ent[t] : rel[t - entity_rows];
    const std::size_t p = config.positions == PositionKind::kRole ? static_cast<std::size_t>(seq.roles[i]) : i;
    x[i] = plus(emb, pos[p]);
  }
  const std::size_t d = x[0].size();
  const std::size_t hd = d / config.heads;
  for (const auto& L : params.layers) {
    const Vec g1 = to_vec(L.norm1_gain), b1 = to_vec(L.norm1_bias);
    const Mat wq = to_mat(L.w_query), wk = to_mat(L.w_key), wv = to_mat(L.w_value), wo = to_mat(L.w_out);
    const Vec bq = to_vec(L.b_query), bk = to_vec(L.b_key), bv = to_vec(L.b_value), bo = to_vec(L.b_out);
    Mat q(length), k(length), v(length);
    for (std::size_t i = 0; i < length; ++i) {
      const Vec h = layer_norm(x[i], g1, b1);
      q[i] = plus(vecmat(h, wq), bq);
      k[i] = plus(vecmat(h, wk), bk);
      v[i] = plus(vecmat(h, wv), bv);
    }
    Mat attended(length, Vec(d, 0.0));
    for (std::size_t head = 0; head < config.heads; ++head) {
      for (std::size_t i = 0; i < length; ++i) {
        Vec logits(length, 0.0);
        double mx = -INFINITY;
        for (std::size_t j = 0; j < length; ++j) {
          if (!seq.live[j]) continue;
          double s = 0.0;
          for (std::size_t c = head * hd; c < (head + 1) * hd; ++c) s += q[i][c] * k[j][c];
          logits[j] = s / std::sqrt(static_cast<double>(hd));
          mx = std::max(mx, logits[j]);
        }
        double z = 0.0;
        for (std::size_t j = 0; j < length; ++j)
          if (seq.live[j]) z += std::exp(logits[j] - mx);
        for (std::size_t j = 0; j < length; ++j) {
          if (!seq.live[j]) continue;
          const double p = std::exp(logits[j] - mx) / z;
          for (std::size_t c = head * hd; c < (head + 1) * hd; ++c) attended[i][c] += p * v[j][c];
        }
      }
    }
    const Vec g2 = to_vec(L.norm2_gain), b2 = to_vec(L.norm2_bias);
    const Mat w1 = to_mat(L.w_ffn1), w2 = to_mat(L.w_ffn2);
    const Vec c1 = to_vec(L.b_ffn1), c2 = to_vec(L.b_ffn2);
    for (std::size_t i = 0; i < length; ++i) {
      x[i] = plus(x[i], plus(vecmat(attended[i], wo), bo));
      const Vec hidden = apply(config.ffn_activation, plus(vecmat(layer_norm(x[i], g2, b2), w1), c1));
      x[i] = plus(x[i], plus(vecmat(hidden, w2), c2));
    }
  }
  const Vec gf = to_vec(params.final_gain), bf = to_vec(params.final_bias);
  for (auto& row : x) row = layer_norm(row, gf, bf);
  return x;
}

inline Vec scores(const Vec& masked, const Mat& table, std::size_t num_entities, const DecoderParams& params,
                  const DecoderConfig& config) {
  const Vec h =
      apply(config.head_activation, plus(vecmat(masked, to_mat(params.head_weight)), to_vec(params.head_bias)));
  Vec out(num_entities);
  for (std::size_t e = 0; e < num_entities; ++e) out[e] = dot(h, table[e]);
  return out;
}

// Rank by sorting the surviving candidates; ties count half.
inline double sorted_rank(std::span<const double> scores, EntityId gold, std::span<const EntityId> filtered) {
  std::vector<double> kept;
  for (std::size_t j = 0; j < scores.size(); ++j) {
    const auto e = static_cast<EntityId>(j);
    if (e != gold && std::find(filtered.begin(), filtered.end(), e) != filtered.end()) continue;
    kept.push_back(scores[j]);
  }
  std::sort(kept.begin(), kept.end(), std::greater<>());
  const double g = scores[gold];
  const auto first = std::lower_bound(kept.begin(), kept.end(), g, std::greater<>());
  const auto last = std::upper_bound(kept.begin(), kept.end(), g, std::greater<>());
  const auto above = static_cast<double>(first - kept.begin());
  const auto tied_others = static_cast<double>(last - first) - 1.0;
  return 1.0 + above + 0.5 * tied_others;
}

inline double max_abs_diff(const Mat& a, const Mat& b) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = 0; j < a[i].size(); ++j) worst = std::max(worst, std::abs(a[i][j] - b[i][j]));
  return worst;
}

inline double max_abs_diff(const Vec& a, const Vec& b) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::abs(a[i] - b[i]));
  return worst;
}

}  // namespace quad::oracle
