#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string_view>
#include <vector>

#include "quad/tensor.hpp"

namespace quad {

using Rng = std::mt19937_64;

enum class Activation { kIdentity, kRelu, kTanh, kSigmoid, kGelu };

Activation parse_activation(std::string_view name);
std::string_view activation_name(Activation kind);

// Trainable leaf with entries drawn from U(-bound, bound).
Tensor uniform_param(Shape shape, double bound, Rng& rng);
// Glorot-uniform [fan_in x fan_out] trainable leaf.
Tensor xavier_param(std::size_t fan_in, std::size_t fan_out, Rng& rng);

// Linear algebra.
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);

// Pointwise arithmetic. The second operand may also be a one-element tensor.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
// x[n x d] + bias[d], bias broadcast over rows.
Tensor add_row(const Tensor& x, const Tensor& bias);
// Row i multiplied by the constant factors[i].
Tensor scale_rows(const Tensor& x, std::span<const double> factors);

Tensor sigmoid(const Tensor& x);
// Subgradient 0 at the kink.
Tensor relu(const Tensor& x);
Tensor tanh(const Tensor& x);
// Tanh approximation of the Gaussian error linear unit.
Tensor gelu(const Tensor& x);
Tensor activate(const Tensor& x, Activation kind);
// log(max(x, floor)); zero gradient where clamped.
Tensor log_clamped(const Tensor& x, double floor);

enum class ElementwiseKind { kAdd, kSub, kMul, kSigmoid, kRelu, kScale };
// Dispatch over the pointwise kernels above. Binary kinds use both operands,
// kScale uses `factor`, unary kinds ignore `b`.
Tensor elementwise(ElementwiseKind kind, const Tensor& a, const Tensor& b = {},
                   double factor = 1.0);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);

// Max-subtracted softmax. axis 1 normalizes each row, axis 0 each column;
// rank-1 inputs are a single row.
Tensor softmax(const Tensor& x, int axis = 1);
// Per-row normalization over the last axis followed by gain/bias.
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                  double epsilon = 1e-5);

// Indexing.
Tensor gather_rows(const Tensor& table, std::span<const std::int32_t> index);
// out[index[i]] += weight[i] * src[i]; unit weights when `weights` is empty.
Tensor index_add_rows(const Tensor& src, std::span<const std::int32_t> index,
                      std::span<const double> weights, std::size_t out_rows);
// Copy of `base` with row index[i] replaced by src[i]; indices must be unique.
Tensor replace_rows(const Tensor& base, std::span<const std::int32_t> index,
                    const Tensor& src);
Tensor slice_rows(const Tensor& x, std::size_t begin, std::size_t end);
Tensor concat_rows(const std::vector<Tensor>& parts);
Tensor concat_cols(const std::vector<Tensor>& parts);

// Row-wise complex rotation. Columns (2k, 2k+1) hold the real and imaginary
// parts of component k. Each component of `r` is normalized to unit modulus
// and multiplied into the matching component of `x`. `r` has the shape of
// `x` or is a single row broadcast over the rows of `x`.
Tensor rotate(const Tensor& x, const Tensor& r, double epsilon = 1e-12);

// Inverted dropout; the identity when rate is 0.
Tensor dropout(const Tensor& x, double rate, Rng& rng);

// Scaled dot-product attention for a batch of equal-length sequences packed
// as [batch*seq_len x d] with `heads` heads of width d/heads. Keys whose
// key_mask entry is 0 receive -inf logits.
Tensor multi_head_attention(const Tensor& q, const Tensor& k, const Tensor& v,
                            std::size_t batch, std::size_t seq_len, std::size_t heads,
                            std::span<const std::uint8_t> key_mask);

// Sum over rows b of weights[b] * mean_j bce(sigmoid(logits[b, j]), y[b, j]),
// where y is 1 - smoothing at targets[b] and smoothing / V elsewhere and
// log-probabilities are clamped at log(1e-12).
Tensor bce_with_logits(const Tensor& logits, std::span<const std::int32_t> targets,
                       double smoothing, std::span<const double> weights);

}  // namespace quad
