#include "quad/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <string>
#include <unordered_set>

#include "quad/errors.hpp"

namespace quad {

namespace {

using detail::Node;
using NodePtr = std::shared_ptr<Node>;
using BackwardFn = std::function<void(Node&)>;

Tensor make_result(const char* op, Shape shape, std::vector<double> value,
                   std::initializer_list<const Tensor*> inputs, BackwardFn fn) {
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  node->op = op;
  if (grad_enabled()) {
    for (const Tensor* t : inputs) {
      if (t->requires_grad()) {
        node->requires_grad = true;
        break;
      }
    }
  }
  if (node->requires_grad) {
    for (const Tensor* t : inputs) node->parents.push_back(t->node());
    node->backward = std::move(fn);
  }
  return Tensor(std::move(node));
}

Tensor make_result(const char* op, Shape shape, std::vector<double> value,
                   const std::vector<Tensor>& inputs, BackwardFn fn) {
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  node->op = op;
  if (grad_enabled()) {
    node->requires_grad = std::any_of(inputs.begin(), inputs.end(),
                                      [](const Tensor& t) { return t.requires_grad(); });
  }
  if (node->requires_grad) {
    for (const Tensor& t : inputs) node->parents.push_back(t.node());
    node->backward = std::move(fn);
  }
  return Tensor(std::move(node));
}

void require_defined(const Tensor& t, const char* op) {
  if (!t.defined()) throw ContractError(std::string(op) + ": undefined operand");
}

bool is_scalar(const Tensor& t) { return t.numel() == 1; }

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) +
                         " vs " + shape_string(b.shape()));
  }
}

Shape matrix_shape(std::size_t rows, std::size_t cols) { return {rows, cols}; }

constexpr double kLogProbFloor = -27.631021115928547;  // log(1e-12)

double softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

double sigmoid_scalar(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

// Binary op with optional scalar broadcast of `b`.
template <typename Forward, typename GradA, typename GradB>
Tensor binary(const char* op, const Tensor& a, const Tensor& b, Forward fwd, GradA ga, GradB gb) {
  require_defined(a, op);
  require_defined(b, op);
  const bool broadcast = is_scalar(b) && !is_scalar(a);
  if (!broadcast) check_same_shape(a, b, op);
  const auto av = a.values();
  const auto bv = b.values();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = fwd(av[i], bv[broadcast ? 0 : i]);
  auto na = a.node();
  auto nb = b.node();
  return make_result(op, a.shape(), std::move(out), {&a, &b},
                     [na, nb, broadcast, ga, gb](Node& self) {
                       const auto& g = self.grad;
                       if (na->requires_grad) {
                         double* da = na->grad_buffer();
                         for (std::size_t i = 0; i < g.size(); ++i)
                           da[i] += g[i] * ga(na->value[i], nb->value[broadcast ? 0 : i]);
                       }
                       if (nb->requires_grad) {
                         double* db = nb->grad_buffer();
                         for (std::size_t i = 0; i < g.size(); ++i)
                           db[broadcast ? 0 : i] +=
                               g[i] * gb(na->value[i], nb->value[broadcast ? 0 : i]);
                       }
                     });
}

// Unary op whose derivative is expressed through input x and output y.
template <typename Forward, typename Deriv>
Tensor unary(const char* op, const Tensor& x, Forward fwd, Deriv deriv) {
  require_defined(x, op);
  const auto xv = x.values();
  std::vector<double> out(xv.size());
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = fwd(xv[i]);
  auto nx = x.node();
  return make_result(op, x.shape(), std::move(out), {&x}, [nx, deriv](Node& self) {
    if (!nx->requires_grad) return;
    double* dx = nx->grad_buffer();
    for (std::size_t i = 0; i < self.grad.size(); ++i)
      dx[i] += self.grad[i] * deriv(nx->value[i], self.value[i]);
  });
}

}  // namespace

Activation parse_activation(std::string_view name) {
  if (name == "identity") return Activation::kIdentity;
  if (name == "relu") return Activation::kRelu;
  if (name == "tanh") return Activation::kTanh;
  if (name == "sigmoid") return Activation::kSigmoid;
  if (name == "gelu") return Activation::kGelu;
  throw ConfigError("unknown activation '" + std::string(name) + "'");
}

std::string_view activation_name(Activation kind) {
  switch (kind) {
    case Activation::kIdentity: return "identity";
    case Activation::kRelu: return "relu";
    case Activation::kTanh: return "tanh";
    case Activation::kSigmoid: return "sigmoid";
    case Activation::kGelu: return "gelu";
  }
  return "identity";
}

Tensor uniform_param(Shape shape, double bound, Rng& rng) {
  std::uniform_real_distribution<double> dist(-bound, bound);
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = dist(rng);
  return Tensor::from_values(std::move(shape), std::move(v), true);
}

Tensor xavier_param(std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  return uniform_param({fan_in, fan_out}, bound, rng);
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_defined(a, "matmul");
  require_defined(b, "matmul");
  if (b.rank() != 2 || a.cols() != b.rows()) {
    throw DimensionError("matmul: cannot multiply " + shape_string(a.shape()) + " by " +
                         shape_string(b.shape()));
  }
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  const auto av = a.values();
  const auto bv = b.values();
  std::vector<double> out(m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    double* c = out.data() + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double s = av[i * k + p];
      if (s == 0.0) continue;
      const double* brow = bv.data() + p * n;
      for (std::size_t j = 0; j < n; ++j) c[j] += s * brow[j];
    }
  }
  auto na = a.node();
  auto nb = b.node();
  return make_result("matmul", matrix_shape(m, n), std::move(out), {&a, &b},
                     [na, nb, m, k, n](Node& self) {
                       const double* g = self.grad.data();
                       if (na->requires_grad) {
                         double* da = na->grad_buffer();
                         // dA = G B^T, accumulated row by row against B^T.
                         std::vector<double> bt(k * n);
                         const double* bv = nb->value.data();
                         for (std::size_t p = 0; p < k; ++p)
                           for (std::size_t j = 0; j < n; ++j) bt[j * k + p] = bv[p * n + j];
                         for (std::size_t i = 0; i < m; ++i) {
                           const double* gi = g + i * n;
                           double* dai = da + i * k;
                           for (std::size_t j = 0; j < n; ++j) {
                             const double s = gi[j];
                             if (s == 0.0) continue;
                             const double* btj = bt.data() + j * k;
                             for (std::size_t p = 0; p < k; ++p) dai[p] += s * btj[p];
                           }
                         }
                       }
                       if (nb->requires_grad) {
                         double* db = nb->grad_buffer();
                         const double* av = na->value.data();
                         for (std::size_t i = 0; i < m; ++i) {
                           const double* gi = g + i * n;
                           for (std::size_t p = 0; p < k; ++p) {
                             const double s = av[i * k + p];
                             if (s == 0.0) continue;
                             double* dbp = db + p * n;
                             for (std::size_t j = 0; j < n; ++j) dbp[j] += s * gi[j];
                           }
                         }
                       }
                     });
}

Tensor transpose(const Tensor& a) {
  require_defined(a, "transpose");
  const std::size_t m = a.rows(), n = a.cols();
  const auto av = a.values();
  std::vector<double> out(m * n);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = av[i * n + j];
  auto na = a.node();
  return make_result("transpose", matrix_shape(n, m), std::move(out), {&a},
                     [na, m, n](Node& self) {
                       if (!na->requires_grad) return;
                       double* da = na->grad_buffer();
                       for (std::size_t i = 0; i < m; ++i)
                         for (std::size_t j = 0; j < n; ++j) da[i * n + j] += self.grad[j * m + i];
                     });
}

Tensor add(const Tensor& a, const Tensor& b) {
  return binary(
      "add", a, b, [](double x, double y) { return x + y; }, [](double, double) { return 1.0; },
      [](double, double) { return 1.0; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary(
      "sub", a, b, [](double x, double y) { return x - y; }, [](double, double) { return 1.0; },
      [](double, double) { return -1.0; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary(
      "mul", a, b, [](double x, double y) { return x * y; }, [](double, double y) { return y; },
      [](double x, double) { return x; });
}

Tensor scale(const Tensor& a, double factor) {
  return unary(
      "scale", a, [factor](double x) { return factor * x; },
      [factor](double, double) { return factor; });
}

Tensor add_row(const Tensor& x, const Tensor& bias) {
  require_defined(x, "add_row");
  require_defined(bias, "add_row");
  const std::size_t n = x.rows(), d = x.cols();
  if (bias.numel() != d) {
    throw DimensionError("add_row: bias " + shape_string(bias.shape()) + " does not match rows of " +
                         shape_string(x.shape()));
  }
  const auto xv = x.values();
  const auto bv = bias.values();
  std::vector<double> out(xv.begin(), xv.end());
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) out[i * d + j] += bv[j];
  auto nx = x.node();
  auto nb = bias.node();
  return make_result("add_row", x.shape(), std::move(out), {&x, &bias},
                     [nx, nb, n, d](Node& self) {
                       if (nx->requires_grad) {
                         double* dx = nx->grad_buffer();
                         for (std::size_t i = 0; i < n * d; ++i) dx[i] += self.grad[i];
                       }
                       if (nb->requires_grad) {
                         double* db = nb->grad_buffer();
                         for (std::size_t i = 0; i < n; ++i)
                           for (std::size_t j = 0; j < d; ++j) db[j] += self.grad[i * d + j];
                       }
                     });
}

Tensor scale_rows(const Tensor& x, std::span<const double> factors) {
  require_defined(x, "scale_rows");
  const std::size_t n = x.rows(), d = x.cols();
  if (factors.size() != n) {
    throw DimensionError("scale_rows: " + std::to_string(factors.size()) + " factors for " +
                         shape_string(x.shape()));
  }
  const auto xv = x.values();
  std::vector<double> out(xv.size());
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) out[i * d + j] = factors[i] * xv[i * d + j];
  auto nx = x.node();
  std::vector<double> f(factors.begin(), factors.end());
  return make_result("scale_rows", x.shape(), std::move(out), {&x},
                     [nx, f = std::move(f), d](Node& self) {
                       if (!nx->requires_grad) return;
                       double* dx = nx->grad_buffer();
                       for (std::size_t i = 0; i < f.size(); ++i)
                         for (std::size_t j = 0; j < d; ++j) dx[i * d + j] += f[i] * self.grad[i * d + j];
                     });
}

Tensor sigmoid(const Tensor& x) {
  return unary("sigmoid", x, sigmoid_scalar, [](double, double y) { return y * (1.0 - y); });
}

Tensor relu(const Tensor& x) {
  return unary(
      "relu", x, [](double v) { return v > 0.0 ? v : 0.0; },
      [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Tensor tanh(const Tensor& x) {
  return unary(
      "tanh", x, [](double v) { return std::tanh(v); }, [](double, double y) { return 1.0 - y * y; });
}

Tensor gelu(const Tensor& x) {
  constexpr double c = 0.7978845608028654;  // sqrt(2/pi)
  constexpr double k = 0.044715;
  return unary(
      "gelu", x,
      [](double v) { return 0.5 * v * (1.0 + std::tanh(c * (v + k * v * v * v))); },
      [](double v, double) {
        const double t = std::tanh(c * (v + k * v * v * v));
        return 0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * c * (1.0 + 3.0 * k * v * v);
      });
}

Tensor activate(const Tensor& x, Activation kind) {
  switch (kind) {
    case Activation::kIdentity: return x;
    case Activation::kRelu: return relu(x);
    case Activation::kTanh: return tanh(x);
    case Activation::kSigmoid: return sigmoid(x);
    case Activation::kGelu: return gelu(x);
  }
  return x;
}

Tensor log_clamped(const Tensor& x, double floor) {
  return unary(
      "log_clamped", x, [floor](double v) { return std::log(std::max(v, floor)); },
      [floor](double v, double) { return v > floor ? 1.0 / v : 0.0; });
}

Tensor elementwise(ElementwiseKind kind, const Tensor& a, const Tensor& b, double factor) {
  switch (kind) {
    case ElementwiseKind::kAdd: return add(a, b);
    case ElementwiseKind::kSub: return sub(a, b);
    case ElementwiseKind::kMul: return mul(a, b);
    case ElementwiseKind::kSigmoid: return sigmoid(a);
    case ElementwiseKind::kRelu: return relu(a);
    case ElementwiseKind::kScale: return scale(a, factor);
  }
  throw ContractError("elementwise: unknown kind");
}

Tensor sum(const Tensor& x) {
  require_defined(x, "sum");
  double total = 0.0;
  for (double v : x.values()) total += v;
  auto nx = x.node();
  return make_result("sum", {1}, {total}, {&x}, [nx](Node& self) {
    if (!nx->requires_grad) return;
    double* dx = nx->grad_buffer();
    for (std::size_t i = 0; i < nx->value.size(); ++i) dx[i] += self.grad[0];
  });
}

Tensor mean(const Tensor& x) { return scale(sum(x), 1.0 / static_cast<double>(x.numel())); }

Tensor softmax(const Tensor& x, int axis) {
  require_defined(x, "softmax");
  if (axis != 0 && axis != 1) throw DimensionError("softmax: axis must be 0 or 1");
  if (x.rank() == 1 && axis == 0) axis = 1;
  const std::size_t n = x.rows(), d = x.cols();
  // Iterate over `groups` slices of length `len` with element stride `stride`.
  const std::size_t groups = axis == 1 ? n : d;
  const std::size_t len = axis == 1 ? d : n;
  const std::size_t group_step = axis == 1 ? d : 1;
  const std::size_t stride = axis == 1 ? 1 : d;
  const auto xv = x.values();
  std::vector<double> out(xv.size());
  for (std::size_t g = 0; g < groups; ++g) {
    const std::size_t base = g * group_step;
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < len; ++i) mx = std::max(mx, xv[base + i * stride]);
    double z = 0.0;
    for (std::size_t i = 0; i < len; ++i) {
      const double e = std::exp(xv[base + i * stride] - mx);
      out[base + i * stride] = e;
      z += e;
    }
    for (std::size_t i = 0; i < len; ++i) out[base + i * stride] /= z;
  }
  auto nx = x.node();
  return make_result("softmax", x.shape(), std::move(out), {&x},
                     [nx, groups, len, group_step, stride](Node& self) {
                       if (!nx->requires_grad) return;
                       double* dx = nx->grad_buffer();
                       const auto& y = self.value;
                       const auto& g = self.grad;
                       for (std::size_t gi = 0; gi < groups; ++gi) {
                         const std::size_t base = gi * group_step;
                         double dot = 0.0;
                         for (std::size_t i = 0; i < len; ++i) {
                           const std::size_t p = base + i * stride;
                           dot += g[p] * y[p];
                         }
                         for (std::size_t i = 0; i < len; ++i) {
                           const std::size_t p = base + i * stride;
                           dx[p] += y[p] * (g[p] - dot);
                         }
                       }
                     });
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double epsilon) {
  require_defined(x, "layer_norm");
  const std::size_t n = x.rows(), d = x.cols();
  if (d < 2) throw DimensionError("layer_norm: normalized axis must have length >= 2");
  if (gain.numel() != d || bias.numel() != d) {
    throw DimensionError("layer_norm: gain " + shape_string(gain.shape()) + " / bias " +
                         shape_string(bias.shape()) + " do not match " + shape_string(x.shape()));
  }
  const auto xv = x.values();
  const auto gv = gain.values();
  const auto bv = bias.values();
  std::vector<double> out(xv.size());
  std::vector<double> xhat(xv.size());
  std::vector<double> inv_std(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double* row = xv.data() + i * d;
    double mu = 0.0;
    for (std::size_t j = 0; j < d; ++j) mu += row[j];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= static_cast<double>(d);
    inv_std[i] = 1.0 / std::sqrt(var + epsilon);
    for (std::size_t j = 0; j < d; ++j) {
      xhat[i * d + j] = (row[j] - mu) * inv_std[i];
      out[i * d + j] = xhat[i * d + j] * gv[j] + bv[j];
    }
  }
  auto nx = x.node();
  auto ng = gain.node();
  auto nb = bias.node();
  return make_result(
      "layer_norm", x.shape(), std::move(out), {&x, &gain, &bias},
      [nx, ng, nb, n, d, xhat = std::move(xhat), inv_std = std::move(inv_std)](Node& self) {
        const auto& g = self.grad;
        if (ng->requires_grad) {
          double* dg = ng->grad_buffer();
          for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < d; ++j) dg[j] += g[i * d + j] * xhat[i * d + j];
        }
        if (nb->requires_grad) {
          double* db = nb->grad_buffer();
          for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < d; ++j) db[j] += g[i * d + j];
        }
        if (nx->requires_grad) {
          double* dx = nx->grad_buffer();
          const double* gv = ng->value.data();
          const double dd = static_cast<double>(d);
          for (std::size_t i = 0; i < n; ++i) {
            double s1 = 0.0, s2 = 0.0;
            for (std::size_t j = 0; j < d; ++j) {
              const double dxh = g[i * d + j] * gv[j];
              s1 += dxh;
              s2 += dxh * xhat[i * d + j];
            }
            for (std::size_t j = 0; j < d; ++j) {
              const double dxh = g[i * d + j] * gv[j];
              dx[i * d + j] += inv_std[i] / dd * (dd * dxh - s1 - xhat[i * d + j] * s2);
            }
          }
        }
      });
}

Tensor gather_rows(const Tensor& table, std::span<const std::int32_t> index) {
  require_defined(table, "gather_rows");
  const std::size_t rows = table.rows(), d = table.cols();
  if (index.empty()) throw DimensionError("gather_rows: empty index");
  const auto tv = table.values();
  std::vector<double> out(index.size() * d);
  for (std::size_t i = 0; i < index.size(); ++i) {
    if (index[i] < 0 || static_cast<std::size_t>(index[i]) >= rows) {
      throw DimensionError("gather_rows: index " + std::to_string(index[i]) +
                           " out of range for " + shape_string(table.shape()));
    }
    std::copy_n(tv.data() + index[i] * d, d, out.data() + i * d);
  }
  auto nt = table.node();
  std::vector<std::int32_t> idx(index.begin(), index.end());
  return make_result("gather_rows", matrix_shape(index.size(), d), std::move(out), {&table},
                     [nt, idx = std::move(idx), d](Node& self) {
                       if (!nt->requires_grad) return;
                       double* dt = nt->grad_buffer();
                       for (std::size_t i = 0; i < idx.size(); ++i) {
                         double* dst = dt + idx[i] * d;
                         const double* src = self.grad.data() + i * d;
                         for (std::size_t j = 0; j < d; ++j) dst[j] += src[j];
                       }
                     });
}

Tensor index_add_rows(const Tensor& src, std::span<const std::int32_t> index,
                      std::span<const double> weights, std::size_t out_rows) {
  require_defined(src, "index_add_rows");
  const std::size_t n = src.rows(), d = src.cols();
  if (index.size() != n || (!weights.empty() && weights.size() != n)) {
    throw DimensionError("index_add_rows: index/weight length does not match " +
                         shape_string(src.shape()));
  }
  if (out_rows == 0) throw DimensionError("index_add_rows: zero output rows");
  const auto sv = src.values();
  std::vector<double> out(out_rows * d, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    if (index[i] < 0 || static_cast<std::size_t>(index[i]) >= out_rows) {
      throw DimensionError("index_add_rows: index " + std::to_string(index[i]) + " out of range");
    }
    const double w = weights.empty() ? 1.0 : weights[i];
    double* dst = out.data() + index[i] * d;
    for (std::size_t j = 0; j < d; ++j) dst[j] += w * sv[i * d + j];
  }
  auto ns = src.node();
  std::vector<std::int32_t> idx(index.begin(), index.end());
  std::vector<double> w(weights.begin(), weights.end());
  return make_result("index_add_rows", matrix_shape(out_rows, d), std::move(out), {&src},
                     [ns, idx = std::move(idx), w = std::move(w), d](Node& self) {
                       if (!ns->requires_grad) return;
                       double* ds = ns->grad_buffer();
                       for (std::size_t i = 0; i < idx.size(); ++i) {
                         const double wi = w.empty() ? 1.0 : w[i];
                         const double* g = self.grad.data() + idx[i] * d;
                         for (std::size_t j = 0; j < d; ++j) ds[i * d + j] += wi * g[j];
                       }
                     });
}

Tensor replace_rows(const Tensor& base, std::span<const std::int32_t> index, const Tensor& src) {
  require_defined(base, "replace_rows");
  require_defined(src, "replace_rows");
  const std::size_t rows = base.rows(), d = base.cols();
  if (src.cols() != d || src.rows() != index.size()) {
    throw DimensionError("replace_rows: source " + shape_string(src.shape()) + " for " +
                         std::to_string(index.size()) + " rows of " + shape_string(base.shape()));
  }
  std::unordered_set<std::int32_t> seen;
  for (auto i : index) {
    if (i < 0 || static_cast<std::size_t>(i) >= rows)
      throw DimensionError("replace_rows: index " + std::to_string(i) + " out of range");
    if (!seen.insert(i).second) throw ContractError("replace_rows: duplicate index");
  }
  const auto bv = base.values();
  const auto sv = src.values();
  std::vector<double> out(bv.begin(), bv.end());
  for (std::size_t i = 0; i < index.size(); ++i)
    std::copy_n(sv.data() + i * d, d, out.data() + index[i] * d);
  auto nb = base.node();
  auto ns = src.node();
  std::vector<std::int32_t> idx(index.begin(), index.end());
  return make_result("replace_rows", base.shape(), std::move(out), {&base, &src},
                     [nb, ns, idx = std::move(idx), d](Node& self) {
                       if (nb->requires_grad) {
                         double* db = nb->grad_buffer();
                         std::vector<double> g = self.grad;
                         for (auto i : idx) std::fill_n(g.data() + i * d, d, 0.0);
                         for (std::size_t i = 0; i < g.size(); ++i) db[i] += g[i];
                       }
                       if (ns->requires_grad) {
                         double* ds = ns->grad_buffer();
                         for (std::size_t i = 0; i < idx.size(); ++i)
                           for (std::size_t j = 0; j < d; ++j)
                             ds[i * d + j] += self.grad[idx[i] * d + j];
                       }
                     });
}

Tensor slice_rows(const Tensor& x, std::size_t begin, std::size_t end) {
  require_defined(x, "slice_rows");
  if (begin >= end || end > x.rows()) {
    throw DimensionError("slice_rows: [" + std::to_string(begin) + ", " + std::to_string(end) +
                         ") out of range for " + shape_string(x.shape()));
  }
  const std::size_t d = x.cols();
  const auto xv = x.values();
  std::vector<double> out(xv.begin() + begin * d, xv.begin() + end * d);
  auto nx = x.node();
  return make_result("slice_rows", matrix_shape(end - begin, d), std::move(out), {&x},
                     [nx, begin, d](Node& self) {
                       if (!nx->requires_grad) return;
                       double* dx = nx->grad_buffer() + begin * d;
                       for (std::size_t i = 0; i < self.grad.size(); ++i) dx[i] += self.grad[i];
                     });
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw DimensionError("concat_rows: no inputs");
  const std::size_t d = parts.front().cols();
  std::size_t rows = 0;
  std::vector<double> out;
  for (const auto& p : parts) {
    require_defined(p, "concat_rows");
    if (p.cols() != d) {
      throw DimensionError("concat_rows: column mismatch " + shape_string(parts.front().shape()) +
                           " vs " + shape_string(p.shape()));
    }
    rows += p.rows();
    out.insert(out.end(), p.values().begin(), p.values().end());
  }
  std::vector<NodePtr> nodes;
  for (const auto& p : parts) nodes.push_back(p.node());
  return make_result("concat_rows", matrix_shape(rows, d), std::move(out), parts,
                     [nodes](Node& self) {
                       std::size_t offset = 0;
                       for (const auto& n : nodes) {
                         const std::size_t len = n->value.size();
                         if (n->requires_grad) {
                           double* dn = n->grad_buffer();
                           for (std::size_t i = 0; i < len; ++i) dn[i] += self.grad[offset + i];
                         }
                         offset += len;
                       }
                     });
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw DimensionError("concat_cols: no inputs");
  const std::size_t n = parts.front().rows();
  std::size_t total = 0;
  for (const auto& p : parts) {
    require_defined(p, "concat_cols");
    if (p.rows() != n) {
      throw DimensionError("concat_cols: row mismatch " + shape_string(parts.front().shape()) +
                           " vs " + shape_string(p.shape()));
    }
    total += p.cols();
  }
  std::vector<double> out(n * total);
  std::size_t offset = 0;
  for (const auto& p : parts) {
    const std::size_t c = p.cols();
    const auto pv = p.values();
    for (std::size_t i = 0; i < n; ++i) std::copy_n(pv.data() + i * c, c, out.data() + i * total + offset);
    offset += c;
  }
  std::vector<NodePtr> nodes;
  for (const auto& p : parts) nodes.push_back(p.node());
  return make_result("concat_cols", matrix_shape(n, total), std::move(out), parts,
                     [nodes, n, total](Node& self) {
                       std::size_t off = 0;
                       for (const auto& node : nodes) {
                         const std::size_t c = node->shape.back();
                         if (node->requires_grad) {
                           double* dn = node->grad_buffer();
                           for (std::size_t i = 0; i < n; ++i)
                             for (std::size_t j = 0; j < c; ++j)
                               dn[i * c + j] += self.grad[i * total + off + j];
                         }
                         off += c;
                       }
                     });
}

Tensor rotate(const Tensor& x, const Tensor& r, double epsilon) {
  require_defined(x, "rotate");
  require_defined(r, "rotate");
  const std::size_t n = x.rows(), d = x.cols();
  if (d % 2 != 0) throw DimensionError("rotate: dimension " + std::to_string(d) + " is odd");
  const bool broadcast = r.rows() == 1 && n != 1;
  if (r.cols() != d || (!broadcast && r.rows() != n)) {
    throw DimensionError("rotate: shape mismatch " + shape_string(x.shape()) + " vs " +
                         shape_string(r.shape()));
  }
  const double eps2 = epsilon * epsilon;
  const auto xv = x.values();
  const auto rv = r.values();
  std::vector<double> out(xv.size());
  for (std::size_t i = 0; i < n; ++i) {
    const double* xr = xv.data() + i * d;
    const double* rr = rv.data() + (broadcast ? 0 : i * d);
    double* o = out.data() + i * d;
    for (std::size_t k = 0; k < d; k += 2) {
      const double m = std::sqrt(rr[k] * rr[k] + rr[k + 1] * rr[k + 1] + eps2);
      const double u = rr[k] / m, w = rr[k + 1] / m;
      o[k] = xr[k] * u - xr[k + 1] * w;
      o[k + 1] = xr[k] * w + xr[k + 1] * u;
    }
  }
  auto nx = x.node();
  auto nr = r.node();
  return make_result(
      "rotate", x.shape(), std::move(out), {&x, &r}, [nx, nr, n, d, broadcast, eps2](Node& self) {
        double* dx = nx->requires_grad ? nx->grad_buffer() : nullptr;
        double* dr = nr->requires_grad ? nr->grad_buffer() : nullptr;
        for (std::size_t i = 0; i < n; ++i) {
          const double* xr = nx->value.data() + i * d;
          const std::size_t roff = broadcast ? 0 : i * d;
          const double* rr = nr->value.data() + roff;
          const double* g = self.grad.data() + i * d;
          for (std::size_t k = 0; k < d; k += 2) {
            const double c = rr[k], e = rr[k + 1];
            const double m = std::sqrt(c * c + e * e + eps2);
            const double u = c / m, w = e / m;
            if (dx) {
              dx[i * d + k] += g[k] * u + g[k + 1] * w;
              dx[i * d + k + 1] += -g[k] * w + g[k + 1] * u;
            }
            if (dr) {
              const double du = g[k] * xr[k] + g[k + 1] * xr[k + 1];
              const double dw = -g[k] * xr[k + 1] + g[k + 1] * xr[k];
              const double m3 = m * m * m;
              dr[roff + k] += du * (1.0 / m - c * c / m3) - dw * (c * e / m3);
              dr[roff + k + 1] += -du * (c * e / m3) + dw * (1.0 / m - e * e / m3);
            }
          }
        }
      });
}

Tensor dropout(const Tensor& x, double rate, Rng& rng) {
  if (rate < 0.0 || rate >= 1.0) throw ConfigError("dropout rate must be in [0, 1)");
  if (rate == 0.0) return x;
  const double keep_scale = 1.0 / (1.0 - rate);
  std::bernoulli_distribution keep(1.0 - rate);
  std::vector<double> mask(x.numel());
  for (auto& m : mask) m = keep(rng) ? keep_scale : 0.0;
  const auto xv = x.values();
  std::vector<double> out(xv.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xv[i] * mask[i];
  auto nx = x.node();
  return make_result("dropout", x.shape(), std::move(out), {&x},
                     [nx, mask = std::move(mask)](Node& self) {
                       if (!nx->requires_grad) return;
                       double* dx = nx->grad_buffer();
                       for (std::size_t i = 0; i < mask.size(); ++i) dx[i] += self.grad[i] * mask[i];
                     });
}

Tensor multi_head_attention(const Tensor& q, const Tensor& k, const Tensor& v, std::size_t batch,
                            std::size_t seq_len, std::size_t heads,
                            std::span<const std::uint8_t> key_mask) {
  require_defined(q, "attention");
  check_same_shape(q, k, "attention");
  check_same_shape(q, v, "attention");
  const std::size_t d = q.cols();
  if (q.rows() != batch * seq_len || key_mask.size() != batch * seq_len) {
    throw DimensionError("attention: " + shape_string(q.shape()) + " is not " +
                         std::to_string(batch) + " sequences of length " + std::to_string(seq_len));
  }
  if (heads == 0 || d % heads != 0) {
    throw DimensionError("attention: " + std::to_string(heads) + " heads do not divide d=" +
                         std::to_string(d));
  }
  const std::size_t hd = d / heads;
  const double scale_factor = 1.0 / std::sqrt(static_cast<double>(hd));
  const auto qv = q.values();
  const auto kv = k.values();
  const auto vv = v.values();
  std::vector<double> out(qv.size(), 0.0);
  // probs[((b * heads + h) * L + i) * L + j]
  std::vector<double> probs(batch * heads * seq_len * seq_len, 0.0);
  std::vector<std::uint8_t> mask(key_mask.begin(), key_mask.end());
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t h = 0; h < heads; ++h) {
      for (std::size_t i = 0; i < seq_len; ++i) {
        const double* qi = qv.data() + (b * seq_len + i) * d + h * hd;
        double* p = probs.data() + ((b * heads + h) * seq_len + i) * seq_len;
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < seq_len; ++j) {
          if (!mask[b * seq_len + j]) continue;
          const double* kj = kv.data() + (b * seq_len + j) * d + h * hd;
          double s = 0.0;
          for (std::size_t t = 0; t < hd; ++t) s += qi[t] * kj[t];
          p[j] = s * scale_factor;
          mx = std::max(mx, p[j]);
        }
        if (mx == -std::numeric_limits<double>::infinity()) continue;
        double z = 0.0;
        for (std::size_t j = 0; j < seq_len; ++j) {
          if (!mask[b * seq_len + j]) continue;
          p[j] = std::exp(p[j] - mx);
          z += p[j];
        }
        double* oi = out.data() + (b * seq_len + i) * d + h * hd;
        for (std::size_t j = 0; j < seq_len; ++j) {
          if (!mask[b * seq_len + j]) continue;
          p[j] /= z;
          const double* vj = vv.data() + (b * seq_len + j) * d + h * hd;
          for (std::size_t t = 0; t < hd; ++t) oi[t] += p[j] * vj[t];
        }
      }
    }
  }
  auto nq = q.node();
  auto nk = k.node();
  auto nv = v.node();
  return make_result(
      "attention", q.shape(), std::move(out), {&q, &k, &v},
      [nq, nk, nv, batch, seq_len, heads, hd, d, scale_factor, probs = std::move(probs),
       mask = std::move(mask)](Node& self) {
        double* dq = nq->requires_grad ? nq->grad_buffer() : nullptr;
        double* dk = nk->requires_grad ? nk->grad_buffer() : nullptr;
        double* dv = nv->requires_grad ? nv->grad_buffer() : nullptr;
        const double* qv = nq->value.data();
        const double* kv = nk->value.data();
        const double* vv = nv->value.data();
        std::vector<double> dlogit(seq_len);
        for (std::size_t b = 0; b < batch; ++b) {
          for (std::size_t h = 0; h < heads; ++h) {
            for (std::size_t i = 0; i < seq_len; ++i) {
              const double* p = probs.data() + ((b * heads + h) * seq_len + i) * seq_len;
              const double* go = self.grad.data() + (b * seq_len + i) * d + h * hd;
              double dot = 0.0;
              for (std::size_t j = 0; j < seq_len; ++j) {
                dlogit[j] = 0.0;
                if (!mask[b * seq_len + j]) continue;
                const double* vj = vv + (b * seq_len + j) * d + h * hd;
                double dp = 0.0;
                for (std::size_t t = 0; t < hd; ++t) dp += go[t] * vj[t];
                dlogit[j] = dp;
                dot += p[j] * dp;
                if (dv) {
                  double* dvj = dv + (b * seq_len + j) * d + h * hd;
                  for (std::size_t t = 0; t < hd; ++t) dvj[t] += p[j] * go[t];
                }
              }
              const double* qi = qv + (b * seq_len + i) * d + h * hd;
              for (std::size_t j = 0; j < seq_len; ++j) {
                if (!mask[b * seq_len + j]) continue;
                const double ds = p[j] * (dlogit[j] - dot) * scale_factor;
                const double* kj = kv + (b * seq_len + j) * d + h * hd;
                if (dq) {
                  double* dqi = dq + (b * seq_len + i) * d + h * hd;
                  for (std::size_t t = 0; t < hd; ++t) dqi[t] += ds * kj[t];
                }
                if (dk) {
                  double* dkj = dk + (b * seq_len + j) * d + h * hd;
                  for (std::size_t t = 0; t < hd; ++t) dkj[t] += ds * qi[t];
                }
              }
            }
          }
        }
      });
}

Tensor bce_with_logits(const Tensor& logits, std::span<const std::int32_t> targets, double smoothing,
                       std::span<const double> weights) {
  require_defined(logits, "bce_with_logits");
  const std::size_t batch = logits.rows(), vocab = logits.cols();
  if (targets.size() != batch || weights.size() != batch) {
    throw DimensionError("bce_with_logits: " + std::to_string(targets.size()) + " targets / " +
                         std::to_string(weights.size()) + " weights for " +
                         shape_string(logits.shape()));
  }
  if (smoothing < 0.0 || smoothing >= 1.0) throw ConfigError("label smoothing must be in [0, 1)");
  const double off_target = smoothing / static_cast<double>(vocab);
  const double on_target = 1.0 - smoothing;
  const auto zv = logits.values();
  double total = 0.0;
  for (std::size_t b = 0; b < batch; ++b) {
    if (targets[b] < 0 || static_cast<std::size_t>(targets[b]) >= vocab) {
      throw ContractError("bce_with_logits: target " + std::to_string(targets[b]) + " out of range");
    }
    double row = 0.0;
    for (std::size_t j = 0; j < vocab; ++j) {
      const double z = zv[b * vocab + j];
      if (!std::isfinite(z)) throw NumericError("bce_with_logits: non-finite logit");
      const double y = static_cast<std::size_t>(targets[b]) == j ? on_target : off_target;
      const double log_p = std::max(-softplus(-z), kLogProbFloor);
      const double log_q = std::max(-softplus(z), kLogProbFloor);
      row -= y * log_p + (1.0 - y) * log_q;
    }
    total += weights[b] * row / static_cast<double>(vocab);
  }
  auto nz = logits.node();
  std::vector<std::int32_t> tgt(targets.begin(), targets.end());
  std::vector<double> w(weights.begin(), weights.end());
  return make_result(
      "bce_with_logits", {1}, {total}, {&logits},
      [nz, tgt = std::move(tgt), w = std::move(w), batch, vocab, on_target, off_target](Node& self) {
        if (!nz->requires_grad) return;
        double* dz = nz->grad_buffer();
        const double g = self.grad[0];
        for (std::size_t b = 0; b < batch; ++b) {
          const double rw = g * w[b] / static_cast<double>(vocab);
          for (std::size_t j = 0; j < vocab; ++j) {
            const double z = nz->value[b * vocab + j];
            const double y = static_cast<std::size_t>(tgt[b]) == j ? on_target : off_target;
            const double s = sigmoid_scalar(z);
            const double dlog_p = -softplus(-z) > kLogProbFloor ? 1.0 - s : 0.0;
            const double dlog_q = -softplus(z) > kLogProbFloor ? -s : 0.0;
            dz[b * vocab + j] -= rw * (y * dlog_p + (1.0 - y) * dlog_q);
          }
        }
      });
}

}  // namespace quad
