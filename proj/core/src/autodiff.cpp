#include "kno/autodiff.hpp"

#include <cmath>
#include <cstring>
#include <string>

#include "kno/errors.hpp"
#include "internal_gemm.hpp"

namespace kno {

namespace {
constexpr double kInvSqrt2 = 0.7071067811865475244;
constexpr double kInvSqrt2Pi = 0.3989422804014326779;
}  // namespace

double gelu_value(double x) { return 0.5 * x * (1.0 + std::erf(x * kInvSqrt2)); }

double gelu_derivative(double x) {
  double cdf = 0.5 * (1.0 + std::erf(x * kInvSqrt2));
  double pdf = kInvSqrt2Pi * std::exp(-0.5 * x * x);
  return cdf + x * pdf;
}

double softplus_value(double x) {
  // log(1 + e^x), stable for large |x|
  return std::log1p(std::exp(-std::abs(x))) + std::max(x, 0.0);
}

double softplus_derivative(double x) { return 1.0 / (1.0 + std::exp(-x)); }

double inverse_softplus(double y) {
  if (y <= 0.0) throw ContractViolation("inverse_softplus: argument must be positive");
  // x = log(e^y - 1), stable form
  return y + std::log1p(-std::exp(-y));
}

VarId Tape::leaf(Tensor value) { return push("leaf", std::move(value), {}, nullptr); }

VarId Tape::constant(Tensor value) { return push("const", std::move(value), {}, nullptr); }

VarId Tape::push(const char* op, Tensor value, std::vector<VarId> parents, BackwardFn backward) {
  if (finite_checks) value.check_finite(op);
  nodes_.push_back(Node{op, std::move(value), std::move(parents), std::move(backward)});
  return static_cast<VarId>(nodes_.size() - 1);
}

Tensor& grad_buffer(std::vector<Tensor>& grads, VarId id, const std::vector<std::int64_t>& shape) {
  Tensor& g = grads[static_cast<std::size_t>(id)];
  if (g.data.empty()) g = Tensor::zeros(shape);
  return g;
}

namespace {

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (!a.same_shape(b))
    throw ContractViolation(std::string(op) + ": shape mismatch " + a.shape_str() + " vs " +
                            b.shape_str());
}

// Elementwise unary with derivative computed during the forward pass.
template <typename F>
VarId unary_op(Tape& t, VarId a, const char* name, F value_and_deriv) {
  const Tensor& x = t.val(a);
  Tensor y = Tensor::zeros(x.shape);
  Tensor dydx = Tensor::zeros(x.shape);
  const std::int64_t n = x.size();
  for (std::int64_t i = 0; i < n; ++i) {
    double d;
    y[i] = value_and_deriv(x[i], d);
    dydx[i] = d;
  }
  return t.push(name, std::move(y), {a},
                [a, dydx = std::move(dydx)](const Tensor& gout, Tape& tt, std::vector<Tensor>& grads) {
                  Tensor& ga = grad_buffer(grads, a, tt.val(a).shape);
                  const std::int64_t m = gout.size();
                  for (std::int64_t i = 0; i < m; ++i) ga[i] += gout[i] * dydx[i];
                });
}

}  // namespace

VarId add(Tape& t, VarId a, VarId b) {
  const Tensor& x = t.val(a);
  const Tensor& y = t.val(b);
  require_same_shape(x, y, "add");
  Tensor z = x;
  for (std::int64_t i = 0; i < z.size(); ++i) z[i] += y[i];
  return t.push("add", std::move(z), {a, b},
                [a, b](const Tensor& gout, Tape& tt, std::vector<Tensor>& grads) {
                  Tensor& ga = grad_buffer(grads, a, tt.val(a).shape);
                  Tensor& gb = grad_buffer(grads, b, tt.val(b).shape);
                  for (std::int64_t i = 0; i < gout.size(); ++i) {
                    ga[i] += gout[i];
                    gb[i] += gout[i];
                  }
                });
}

VarId sub(Tape& t, VarId a, VarId b) {
  const Tensor& x = t.val(a);
  const Tensor& y = t.val(b);
  require_same_shape(x, y, "sub");
  Tensor z = x;
  for (std::int64_t i = 0; i < z.size(); ++i) z[i] -= y[i];
  return t.push("sub", std::move(z), {a, b},
                [a, b](const Tensor& gout, Tape& tt, std::vector<Tensor>& grads) {
                  Tensor& ga = grad_buffer(grads, a, tt.val(a).shape);
                  Tensor& gb = grad_buffer(grads, b, tt.val(b).shape);
                  for (std::int64_t i = 0; i < gout.size(); ++i) {
                    ga[i] += gout[i];
                    gb[i] -= gout[i];
                  }
                });
}

VarId mul(Tape& t, VarId a, VarId b) {
  const Tensor& x = t.val(a);
  const Tensor& y = t.val(b);
  require_same_shape(x, y, "mul");
  Tensor z = x;
  for (std::int64_t i = 0; i < z.size(); ++i) z[i] *= y[i];
  return t.push("mul", std::move(z), {a, b},
                [a, b](const Tensor& gout, Tape& tt, std::vector<Tensor>& grads) {
                  const Tensor& x = tt.val(a);
                  const Tensor& y = tt.val(b);
                  Tensor& ga = grad_buffer(grads, a, x.shape);
                  Tensor& gb = grad_buffer(grads, b, y.shape);
                  for (std::int64_t i = 0; i < gout.size(); ++i) {
                    ga[i] += gout[i] * y[i];
                    gb[i] += gout[i] * x[i];
                  }
                });
}

VarId scale(Tape& t, VarId a, double c) {
  Tensor z = t.val(a);
  for (std::int64_t i = 0; i < z.size(); ++i) z[i] *= c;
  return t.push("scale", std::move(z), {a},
                [a, c](const Tensor& gout, Tape& tt, std::vector<Tensor>& grads) {
                  Tensor& ga = grad_buffer(grads, a, tt.val(a).shape);
                  for (std::int64_t i = 0; i < gout.size(); ++i) ga[i] += gout[i] * c;
                });
}

VarId vexp(Tape& t, VarId a) {
  return unary_op(t, a, "exp", [](double x, double& d) {
    double y = std::exp(x);
    d = y;
    return y;
  });
}

VarId vcos(Tape& t, VarId a) {
  return unary_op(t, a, "cos", [](double x, double& d) {
    d = -std::sin(x);
    return std::cos(x);
  });
}

VarId vpow(Tape& t, VarId a, double p) {
  return unary_op(t, a, "pow", [p](double x, double& d) {
    double y = std::pow(x, p);
    d = p * std::pow(x, p - 1.0);
    return y;
  });
}

namespace {

// Uniform tables of the standard-normal CDF and PDF on [-8, 8] with cubic
// Lagrange interpolation (max error ~5e-14, well inside float64 noise of the
// erf form). Built once from std::erf / std::exp.
struct NormalTables {
  static constexpr double kLo = -8.0;
  static constexpr double kHi = 8.0;
  static constexpr int kCells = 16384;
  double inv_h;
  std::vector<double> cdf, pdf;

  NormalTables() : inv_h(kCells / (kHi - kLo)), cdf(kCells + 4), pdf(kCells + 4) {
    const double h = (kHi - kLo) / kCells;
    for (int i = 0; i < kCells + 4; ++i) {
      const double x = kLo + (i - 1) * h;  // one guard point on each side
      cdf[static_cast<std::size_t>(i)] = 0.5 * (1.0 + std::erf(x * kInvSqrt2));
      pdf[static_cast<std::size_t>(i)] = kInvSqrt2Pi * std::exp(-0.5 * x * x);
    }
  }

  // 4-point cubic interpolation, exact at the knots.
  static double cubic(const double* f, double u) {
    const double um1 = u + 1.0, us1 = u - 1.0, us2 = u - 2.0;
    return f[0] * (-u * us1 * us2 / 6.0) + f[1] * (um1 * us1 * us2 / 2.0) -
           f[2] * (um1 * u * us2 / 2.0) + f[3] * (um1 * u * us1 / 6.0);
  }

  void eval(double x, double& cdf_out, double& pdf_out) const {
    if (x <= kLo) {
      cdf_out = 0.0;
      pdf_out = 0.0;
      return;
    }
    if (x >= kHi) {
      cdf_out = 1.0;
      pdf_out = 0.0;
      return;
    }
    const double s = (x - kLo) * inv_h;
    const std::int64_t cell = static_cast<std::int64_t>(s);
    const double u = s - static_cast<double>(cell);
    cdf_out = cubic(cdf.data() + cell, u);
    pdf_out = cubic(pdf.data() + cell, u);
  }
};

const NormalTables& normal_tables() {
  static const NormalTables tables;
  return tables;
}

}  // namespace

VarId gelu(Tape& t, VarId a) {
  const NormalTables& tab = normal_tables();
  const Tensor& x = t.val(a);
  Tensor y = Tensor::zeros(x.shape);
  const std::int64_t n = x.size();
  for (std::int64_t i = 0; i < n; ++i) {
    double cdf, pdf;
    tab.eval(x[i], cdf, pdf);
    y[i] = x[i] * cdf;
  }
  // derivative is recomputed from the input in the backward pass; cheaper
  // than carrying a second activation-sized tensor through the tape
  return t.push("gelu", std::move(y), {a},
                [a, &tab](const Tensor& gout, Tape& tt, std::vector<Tensor>& grads) {
                  const Tensor& x = tt.val(a);
                  Tensor& ga = grad_buffer(grads, a, x.shape);
                  const std::int64_t m = gout.size();
                  for (std::int64_t i = 0; i < m; ++i) {
                    double cdf, pdf;
                    tab.eval(x[i], cdf, pdf);
                    ga[i] += gout[i] * (cdf + x[i] * pdf);
                  }
                });
}

VarId softplus(Tape& t, VarId a) {
  return unary_op(t, a, "softplus", [](double x, double& d) {
    d = softplus_derivative(x);
    return softplus_value(x);
  });
}

VarId sum(Tape& t, VarId a) {
  const Tensor& x = t.val(a);
  double s = 0.0;
  for (std::int64_t i = 0; i < x.size(); ++i) s += x[i];
  return t.push("sum", Tensor::scalar(s), {a},
                [a](const Tensor& gout, Tape& tt, std::vector<Tensor>& grads) {
                  Tensor& ga = grad_buffer(grads, a, tt.val(a).shape);
                  const double g = gout[0];
                  for (std::int64_t i = 0; i < ga.size(); ++i) ga[i] += g;
                });
}

VarId pick(Tape& t, VarId a, std::int64_t flat_index) {
  const Tensor& x = t.val(a);
  if (flat_index < 0 || flat_index >= x.size())
    throw ContractViolation("pick: index out of range");
  return t.push("pick", Tensor::scalar(x[flat_index]), {a},
                [a, flat_index](const Tensor& gout, Tape& tt, std::vector<Tensor>& grads) {
                  Tensor& ga = grad_buffer(grads, a, tt.val(a).shape);
                  ga[flat_index] += gout[0];
                });
}

VarId matmul(Tape& t, VarId a, VarId b) {
  const Tensor& A = t.val(a);
  const Tensor& B = t.val(b);
  if (A.rank() != 2 || B.rank() != 2 || A.shape[1] != B.shape[0])
    throw ContractViolation("matmul: incompatible shapes " + A.shape_str() + " x " + B.shape_str());
  const std::int64_t m = A.shape[0], k = A.shape[1], n = B.shape[1];
  Tensor C = Tensor::zeros({m, n});
  detail::gemm_nn(A.data.data(), B.data.data(), C.data.data(), m, k, n);
  return t.push("matmul", std::move(C), {a, b},
                [a, b, m, k, n](const Tensor& gout, Tape& tt, std::vector<Tensor>& grads) {
                  const Tensor& A = tt.val(a);
                  const Tensor& B = tt.val(b);
                  Tensor& ga = grad_buffer(grads, a, A.shape);
                  Tensor& gb = grad_buffer(grads, b, B.shape);
                  // dA = gout * B^T ; dB = A^T * gout
                  detail::gemm_nt(gout.data.data(), B.data.data(), ga.data.data(), m, n, k);
                  detail::gemm_tn(A.data.data(), gout.data.data(), gb.data.data(), k, m, n);
                });
}

VarId add_bias(Tape& t, VarId a, VarId b) {
  const Tensor& A = t.val(a);
  const Tensor& B = t.val(b);
  if (A.rank() != 2 || B.rank() != 2 || B.shape[0] != 1 || B.shape[1] != A.shape[1])
    throw ContractViolation("add_bias: expected [m,n] + [1,n], got " + A.shape_str() + " + " +
                            B.shape_str());
  Tensor C = A;
  const std::int64_t m = A.shape[0], n = A.shape[1];
  for (std::int64_t i = 0; i < m; ++i)
    for (std::int64_t j = 0; j < n; ++j) C.at(i, j) += B[j];
  return t.push("add_bias", std::move(C), {a, b},
                [a, b, m, n](const Tensor& gout, Tape& tt, std::vector<Tensor>& grads) {
                  Tensor& ga = grad_buffer(grads, a, tt.val(a).shape);
                  Tensor& gb = grad_buffer(grads, b, tt.val(b).shape);
                  for (std::int64_t i = 0; i < m; ++i)
                    for (std::int64_t j = 0; j < n; ++j) {
                      ga.at(i, j) += gout.at(i, j);
                      gb[j] += gout.at(i, j);
                    }
                });
}

VarId concat_channels(Tape& t, VarId a, VarId b) {
  const Tensor& A = t.val(a);
  const Tensor& B = t.val(b);
  if (A.rank() != 3 || B.rank() != 3 || A.shape[0] != B.shape[0] || A.shape[2] != B.shape[2])
    throw ContractViolation("concat_channels: incompatible " + A.shape_str() + " ++ " +
                            B.shape_str());
  const std::int64_t M = A.shape[0], c1 = A.shape[1], c2 = B.shape[1], N = A.shape[2];
  Tensor C = Tensor::zeros({M, c1 + c2, N});
  for (std::int64_t m = 0; m < M; ++m) {
    std::memcpy(&C.at(m, 0, 0), &A.at(m, 0, 0), static_cast<std::size_t>(c1 * N) * sizeof(double));
    std::memcpy(&C.at(m, c1, 0), &B.at(m, 0, 0), static_cast<std::size_t>(c2 * N) * sizeof(double));
  }
  return t.push("concat_channels", std::move(C), {a, b},
                [a, b, M, c1, c2, N](const Tensor& gout, Tape& tt, std::vector<Tensor>& grads) {
                  Tensor& ga = grad_buffer(grads, a, tt.val(a).shape);
                  Tensor& gb = grad_buffer(grads, b, tt.val(b).shape);
                  for (std::int64_t m = 0; m < M; ++m) {
                    for (std::int64_t c = 0; c < c1; ++c)
                      for (std::int64_t j = 0; j < N; ++j) ga.at(m, c, j) += gout.at(m, c, j);
                    for (std::int64_t c = 0; c < c2; ++c)
                      for (std::int64_t j = 0; j < N; ++j) gb.at(m, c, j) += gout.at(m, c1 + c, j);
                  }
                });
}

VarId append_const_channels(Tape& t, VarId a, Tensor extra) {
  const Tensor& A = t.val(a);
  if (A.rank() != 3 || extra.rank() != 2 || extra.shape[1] != A.shape[2])
    throw ContractViolation("append_const_channels: incompatible " + A.shape_str() + " ++ " +
                            extra.shape_str());
  const std::int64_t M = A.shape[0], c1 = A.shape[1], ce = extra.shape[0], N = A.shape[2];
  Tensor C = Tensor::zeros({M, c1 + ce, N});
  for (std::int64_t m = 0; m < M; ++m) {
    std::memcpy(&C.at(m, 0, 0), &A.at(m, 0, 0), static_cast<std::size_t>(c1 * N) * sizeof(double));
    std::memcpy(&C.at(m, c1, 0), extra.data.data(),
                static_cast<std::size_t>(ce * N) * sizeof(double));
  }
  return t.push("append_const_channels", std::move(C), {a},
                [a, M, c1, N](const Tensor& gout, Tape& tt, std::vector<Tensor>& grads) {
                  Tensor& ga = grad_buffer(grads, a, tt.val(a).shape);
                  for (std::int64_t m = 0; m < M; ++m)
                    for (std::int64_t c = 0; c < c1; ++c)
                      for (std::int64_t j = 0; j < N; ++j) ga.at(m, c, j) += gout.at(m, c, j);
                });
}

namespace {

// [M, C, N] <-> [C, M*N] transposes; both sides move whole N-rows, so these
// are plain row copies.
void to_channel_major(const Tensor& x, std::vector<double>& xt) {
  const std::int64_t M = x.shape[0], C = x.shape[1], N = x.shape[2];
  xt.resize(static_cast<std::size_t>(M * C * N));
  for (std::int64_t m = 0; m < M; ++m)
    for (std::int64_t c = 0; c < C; ++c)
      std::memcpy(xt.data() + (c * M + m) * N, &x.at(m, c, 0),
                  static_cast<std::size_t>(N) * sizeof(double));
}

void add_from_channel_major(const std::vector<double>& xt, Tensor& x) {
  const std::int64_t M = x.shape[0], C = x.shape[1], N = x.shape[2];
  for (std::int64_t m = 0; m < M; ++m)
    for (std::int64_t c = 0; c < C; ++c) {
      const double* src = xt.data() + (c * M + m) * N;
      double* dst = &x.at(m, c, 0);
      for (std::int64_t j = 0; j < N; ++j) dst[j] += src[j];
    }
}

}  // namespace

VarId linear_channels(Tape& t, VarId g, VarId w, VarId b) {
  const Tensor& G = t.val(g);
  const Tensor& W = t.val(w);
  if (G.rank() != 3 || W.rank() != 2 || W.shape[0] != G.shape[1])
    throw ContractViolation("linear_channels: incompatible " + G.shape_str() + " with W " +
                            W.shape_str());
  const std::int64_t M = G.shape[0], ci = G.shape[1], co = W.shape[1], N = G.shape[2];
  const std::int64_t MN = M * N;
  const bool has_bias = b >= 0;
  if (has_bias) {
    const Tensor& B = t.val(b);
    if (B.size() != co)
      throw ContractViolation("linear_channels: bias size " + B.shape_str() + " != " +
                              std::to_string(co));
  }
  // Run the channel contraction in [C, M*N] space so the inner axis is long
  // and contiguous. Scratch slabs persist across calls.
  thread_local std::vector<double> gt, ot;
  to_channel_major(G, gt);
  ot.assign(static_cast<std::size_t>(co * MN), 0.0);
  detail::gemm_tn(W.data.data(), gt.data(), ot.data(), co, ci, MN);
  Tensor out = Tensor::zeros({M, co, N});
  for (std::int64_t m = 0; m < M; ++m)
    for (std::int64_t c = 0; c < co; ++c) {
      const double* src = ot.data() + (c * M + m) * N;
      const double bv = has_bias ? t.val(b)[c] : 0.0;
      double* dst = &out.at(m, c, 0);
      for (std::int64_t j = 0; j < N; ++j) dst[j] = src[j] + bv;
    }
  std::vector<VarId> parents = has_bias ? std::vector<VarId>{g, w, b} : std::vector<VarId>{g, w};
  return t.push(
      "linear_channels", std::move(out), std::move(parents),
      [g, w, b, has_bias, M, ci, co, N, MN](const Tensor& gout, Tape& tt,
                                            std::vector<Tensor>& grads) {
        const Tensor& G = tt.val(g);
        const Tensor& W = tt.val(w);
        Tensor& gg = grad_buffer(grads, g, G.shape);
        Tensor& gw = grad_buffer(grads, w, W.shape);
        thread_local std::vector<double> gt, goutt, dgt;
        to_channel_major(G, gt);
        to_channel_major(gout, goutt);
        dgt.assign(static_cast<std::size_t>(ci * MN), 0.0);
        // dG = W gout ; dW += G gout^T, both on the long axis
        detail::gemm_nn(W.data.data(), goutt.data(), dgt.data(), ci, co, MN);
        add_from_channel_major(dgt, gg);
        detail::gemm_nt(gt.data(), goutt.data(), gw.data.data(), ci, MN, co);
        if (has_bias) {
          Tensor& gb = grad_buffer(grads, b, tt.val(b).shape);
          for (std::int64_t c = 0; c < co; ++c) {
            const double* row = goutt.data() + c * MN;
            double s = 0.0;
            for (std::int64_t j = 0; j < MN; ++j) s += row[j];
            gb[c] += s;
          }
        }
      });
}

VarId rel_mse_loss(Tape& t, VarId pred, const Tensor& targets) {
  const Tensor& P = t.val(pred);
  require_same_shape(P, targets, "rel_mse_loss");
  if (P.rank() < 2) throw ContractViolation("rel_mse_loss: need a leading sample axis");
  const std::int64_t M = P.shape[0];
  const std::int64_t n = P.size() / M;
  std::vector<double> inv_norm2(static_cast<std::size_t>(M));
  double loss = 0.0;
  for (std::int64_t m = 0; m < M; ++m) {
    const double* pm = P.data.data() + m * n;
    const double* tm = targets.data.data() + m * n;
    double num = 0.0, den = 0.0;
    for (std::int64_t i = 0; i < n; ++i) {
      const double d = pm[i] - tm[i];
      num += d * d;
      den += tm[i] * tm[i];
    }
    if (den <= 0.0)
      throw ContractViolation("rel_mse_loss: target sample " + std::to_string(m) +
                              " has zero norm");
    inv_norm2[static_cast<std::size_t>(m)] = 1.0 / den;
    loss += num / den;
  }
  loss /= static_cast<double>(M);
  return t.push("rel_mse_loss", Tensor::scalar(loss), {pred},
                [pred, targets, inv_norm2 = std::move(inv_norm2), M,
                 n](const Tensor& gout, Tape& tt, std::vector<Tensor>& grads) {
                  Tensor& gp = grad_buffer(grads, pred, tt.val(pred).shape);
                  const Tensor& P = tt.val(pred);
                  const double g0 = gout[0];
                  for (std::int64_t m = 0; m < M; ++m) {
                    const double* pm = P.data.data() + m * n;
                    const double* tm = targets.data.data() + m * n;
                    double* gm = gp.data.data() + m * n;
                    const double c =
                        g0 * 2.0 * inv_norm2[static_cast<std::size_t>(m)] / static_cast<double>(M);
                    for (std::int64_t i = 0; i < n; ++i) gm[i] += c * (pm[i] - tm[i]);
                  }
                });
}

std::unordered_map<VarId, Tensor> grad(Tape& t, VarId loss, const std::vector<VarId>& params) {
  const Tensor& lv = t.val(loss);
  if (!lv.is_scalar())
    throw ContractViolation("grad: loss must be scalar, got shape " + lv.shape_str());

  std::vector<Tensor> grads(static_cast<std::size_t>(t.size()));
  grads[static_cast<std::size_t>(loss)] = Tensor::scalar(1.0);

  // Nodes are appended in topological order, so one reverse sweep suffices and
  // visits each node exactly once. Every accumulated gradient (leaves
  // included) is scanned before use so a NaN is pinned to a node id.
  for (VarId id = loss; id >= 0; --id) {
    Tensor& g = grads[static_cast<std::size_t>(id)];
    if (g.data.empty()) continue;
    const auto& node = t.node(id);
    for (double v : g.data)
      if (std::isnan(v))
        throw NumericError("grad: NaN gradient at node " + std::to_string(id) + " (" + node.op +
                               ")",
                           id);
    if (node.backward) node.backward(g, t, grads);
  }

  std::unordered_map<VarId, Tensor> out;
  for (VarId p : params) {
    Tensor& g = grads[static_cast<std::size_t>(p)];
    if (g.data.empty())
      out.emplace(p, Tensor::zeros(t.val(p).shape));
    else
      out.emplace(p, std::move(g));
  }
  return out;
}

}  // namespace kno
