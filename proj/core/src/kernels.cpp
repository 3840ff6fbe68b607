#include "kno/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "kno/autodiff.hpp"
#include "kno/errors.hpp"

namespace kno {

namespace {
constexpr double kSqrt5 = 2.2360679774997896964;
constexpr double kTwoPi = 6.2831853071795864769;
constexpr double kTwoPiSq = 19.739208802178717238;
}  // namespace

const char* kernel_kind_name(KernelKind kind) {
  switch (kind) {
    case KernelKind::wendland_c4: return "wendland_c4";
    case KernelKind::gaussian: return "gaussian";
    case KernelKind::matern_c4: return "matern_c4";
    case KernelKind::spectral_mixture: return "spectral_mixture";
  }
  return "?";
}

KernelKind kernel_kind_from_name(const std::string& name) {
  if (name == "wendland_c4") return KernelKind::wendland_c4;
  if (name == "gaussian") return KernelKind::gaussian;
  if (name == "matern_c4") return KernelKind::matern_c4;
  if (name == "spectral_mixture") return KernelKind::spectral_mixture;
  throw ContractViolation("unknown kernel kind: " + name);
}

std::int64_t KernelSpec::raw_size(KernelKind kind, int dim) {
  return kind == KernelKind::spectral_mixture ? 2 * (1 + 2 * static_cast<std::int64_t>(dim)) : 1;
}

double KernelSpec::eps() const {
  if (kind == KernelKind::spectral_mixture)
    throw ContractViolation("KernelSpec::eps: spectral mixture has no single shape parameter");
  return softplus_value(raw[0]);
}

KernelSpec make_radial_spec(KernelKind kind, int dim, double raw_eps) {
  if (kind == KernelKind::spectral_mixture)
    throw ContractViolation("make_radial_spec: not a radial kind");
  if (dim < 1 || dim > 3) throw ContractViolation("make_radial_spec: dim must be in {1,2,3}");
  return KernelSpec{kind, dim, {raw_eps}};
}

KernelSpec make_spectral_mixture_spec(int dim, std::vector<double> raw) {
  if (static_cast<std::int64_t>(raw.size()) != KernelSpec::raw_size(KernelKind::spectral_mixture, dim))
    throw ContractViolation("make_spectral_mixture_spec: expected " +
                            std::to_string(KernelSpec::raw_size(KernelKind::spectral_mixture, dim)) +
                            " raw parameters");
  return KernelSpec{KernelKind::spectral_mixture, dim, std::move(raw)};
}

double wendland_c4(double r, double eps) {
  if (r < 0.0) throw ContractViolation("wendland_c4: r must be nonnegative");
  if (eps <= 0.0) throw ContractViolation("wendland_c4: eps must be positive");
  const double t = eps * r;
  if (t >= 1.0) return 0.0;
  const double u = 1.0 - t;
  const double u2 = u * u;
  const double u6 = u2 * u2 * u2;
  return u6 * (35.0 * t * t + 18.0 * t + 3.0);
}

double wendland_c4_dt(double t) {
  if (t >= 1.0) return 0.0;
  const double u = 1.0 - t;
  const double u2 = u * u;
  const double u5 = u2 * u2 * u;
  return -56.0 * t * (5.0 * t + 1.0) * u5;
}

double gaussian_kernel(double r, double eps) {
  const double t = eps * r;
  return std::exp(-t * t);
}

double gaussian_kernel_dt(double t) { return -2.0 * t * std::exp(-t * t); }

double matern_c4_kernel(double r, double eps) {
  const double t = eps * r;
  return (1.0 + kSqrt5 * t + (5.0 / 3.0) * t * t) * std::exp(-kSqrt5 * t);
}

double matern_c4_kernel_dt(double t) {
  return -(5.0 / 3.0) * t * (1.0 + kSqrt5 * t) * std::exp(-kSqrt5 * t);
}

double radial_profile(KernelKind kind, double t) {
  switch (kind) {
    case KernelKind::wendland_c4: {
      if (t >= 1.0) return 0.0;
      const double u = 1.0 - t;
      const double u2 = u * u;
      return u2 * u2 * u2 * (35.0 * t * t + 18.0 * t + 3.0);
    }
    case KernelKind::gaussian: return std::exp(-t * t);
    case KernelKind::matern_c4:
      return (1.0 + kSqrt5 * t + (5.0 / 3.0) * t * t) * std::exp(-kSqrt5 * t);
    default: throw ContractViolation("radial_profile: not a radial kernel");
  }
}

double radial_profile_dt(KernelKind kind, double t) {
  switch (kind) {
    case KernelKind::wendland_c4: return wendland_c4_dt(t);
    case KernelKind::gaussian: return gaussian_kernel_dt(t);
    case KernelKind::matern_c4: return matern_c4_kernel_dt(t);
    default: throw ContractViolation("radial_profile_dt: not a radial kernel");
  }
}

double spectral_mixture(const double* tau, int dim, const double* theta) {
  double psi = 0.0;
  for (int r = 0; r < 2; ++r) {
    const double* th = theta + r * (1 + 2 * dim);
    const double lambda = th[0];
    const double* mu = th + 1;
    const double* nu = th + 1 + dim;
    double prod = 1.0;
    for (int p = 0; p < dim; ++p) {
      if (nu[p] <= 0.0)
        throw ContractViolation("spectral_mixture: nu components must be positive");
      const double tp = tau[p];
      prod *= std::cos(kTwoPi * tp * mu[p]) * std::exp(-kTwoPiSq * tp * tp * nu[p]);
    }
    psi += lambda * prod;
  }
  return psi;
}

void spectral_mixture_grad(const double* tau, int dim, const double* theta, double coeff,
                           double* dtheta) {
  for (int r = 0; r < 2; ++r) {
    const int base = r * (1 + 2 * dim);
    const double lambda = theta[base];
    const double* mu = theta + base + 1;
    const double* nu = theta + base + 1 + dim;
    double c[3], e[3];
    double prod = 1.0;
    for (int p = 0; p < dim; ++p) {
      const double tp = tau[p];
      c[p] = std::cos(kTwoPi * tp * mu[p]);
      e[p] = std::exp(-kTwoPiSq * tp * tp * nu[p]);
      prod *= c[p] * e[p];
    }
    dtheta[base] += coeff * prod;
    for (int p = 0; p < dim; ++p) {
      const double tp = tau[p];
      double others = 1.0;
      for (int p2 = 0; p2 < dim; ++p2)
        if (p2 != p) others *= c[p2] * e[p2];
      const double s = std::sin(kTwoPi * tp * mu[p]);
      dtheta[base + 1 + p] += coeff * lambda * (-kTwoPi * tp * s) * e[p] * others;
      dtheta[base + 1 + dim + p] += coeff * lambda * (-kTwoPiSq * tp * tp) * c[p] * e[p] * others;
    }
  }
}

namespace {

double distance(const double* x, const double* y, int dim) {
  double s = 0.0;
  for (int a = 0; a < dim; ++a) {
    const double d = x[a] - y[a];
    s += d * d;
  }
  return std::sqrt(s);
}

}  // namespace

double kernel_eval(const KernelSpec& spec, const double* x, const double* y) {
  if (spec.kind == KernelKind::spectral_mixture) {
    double tau[3];
    std::vector<double> theta(spec.raw.size());
    for (int r = 0; r < 2; ++r) {
      const int base = r * (1 + 2 * spec.dim);
      theta[base] = spec.raw[base];
      for (int p = 0; p < spec.dim; ++p) {
        theta[base + 1 + p] = spec.raw[base + 1 + p];
        theta[base + 1 + spec.dim + p] = softplus_value(spec.raw[base + 1 + spec.dim + p]);
      }
    }
    for (int a = 0; a < spec.dim; ++a) tau[a] = x[a] - y[a];
    return spectral_mixture(tau, spec.dim, theta.data());
  }
  const double eps = softplus_value(spec.raw[0]);
  const double r = distance(x, y, spec.dim);
  return radial_profile(spec.kind, eps * r);
}

double kernel_eval(const KernelSpec& spec, const Tensor& x, const Tensor& y) {
  if (x.size() != spec.dim || y.size() != spec.dim)
    throw ContractViolation("kernel_eval: point dimension mismatch");
  return kernel_eval(spec, x.data.data(), y.data.data());
}

void kernel_eval_raw_grad(const KernelSpec& spec, const double* x, const double* y, double* grad) {
  if (spec.kind == KernelKind::spectral_mixture) {
    const int d = spec.dim;
    double tau[3];
    for (int a = 0; a < d; ++a) tau[a] = x[a] - y[a];
    std::vector<double> theta(spec.raw.size());
    for (int r = 0; r < 2; ++r) {
      const int base = r * (1 + 2 * d);
      theta[base] = spec.raw[base];
      for (int p = 0; p < d; ++p) {
        theta[base + 1 + p] = spec.raw[base + 1 + p];
        theta[base + 1 + d + p] = softplus_value(spec.raw[base + 1 + d + p]);
      }
    }
    std::vector<double> dtheta(spec.raw.size(), 0.0);
    spectral_mixture_grad(tau, d, theta.data(), 1.0, dtheta.data());
    for (int r = 0; r < 2; ++r) {
      const int base = r * (1 + 2 * d);
      grad[base] += dtheta[base];
      for (int p = 0; p < d; ++p) {
        grad[base + 1 + p] += dtheta[base + 1 + p];
        grad[base + 1 + d + p] +=
            dtheta[base + 1 + d + p] * softplus_derivative(spec.raw[base + 1 + d + p]);
      }
    }
    return;
  }
  const double eps = softplus_value(spec.raw[0]);
  const double r = distance(x, y, spec.dim);
  grad[0] += radial_profile_dt(spec.kind, eps * r) * r * softplus_derivative(spec.raw[0]);
}

Tensor CsrMatrix::to_dense() const {
  Tensor d = Tensor::zeros({rows, cols});
  for (std::int64_t i = 0; i < rows; ++i)
    for (std::int64_t k = row_ptr[i]; k < row_ptr[i + 1]; ++k) d.at(i, col[k]) = val[k];
  return d;
}

void CsrMatrix::apply(const double* x, double* y, double alpha) const {
  for (std::int64_t i = 0; i < rows; ++i) {
    double s = 0.0;
    for (std::int64_t k = row_ptr[i]; k < row_ptr[i + 1]; ++k) s += val[k] * x[col[k]];
    y[i] += alpha * s;
  }
}

void CsrMatrix::apply_transposed(const double* x, double* y, double alpha) const {
  for (std::int64_t i = 0; i < rows; ++i) {
    const double xi = alpha * x[i];
    if (xi == 0.0) continue;
    for (std::int64_t k = row_ptr[i]; k < row_ptr[i + 1]; ++k) y[col[k]] += val[k] * xi;
  }
}

namespace {

// Uniform cell grid over the bounding box of Y for radius queries.
struct CellList {
  int dim;
  double lo[3], cell_size[3];
  std::int64_t ncell[3];
  std::vector<std::vector<std::int32_t>> buckets;

  CellList(const Tensor& Y, double radius) : dim(static_cast<int>(Y.shape[1])) {
    const std::int64_t n = Y.shape[0];
    double hi[3];
    for (int a = 0; a < dim; ++a) {
      lo[a] = Y.at(0, a);
      hi[a] = Y.at(0, a);
    }
    for (std::int64_t j = 1; j < n; ++j)
      for (int a = 0; a < dim; ++a) {
        lo[a] = std::min(lo[a], Y.at(j, a));
        hi[a] = std::max(hi[a], Y.at(j, a));
      }
    const std::int64_t cap = std::max<std::int64_t>(
        1, static_cast<std::int64_t>(std::ceil(std::pow(static_cast<double>(n), 1.0 / dim))));
    std::int64_t total = 1;
    for (int a = 0; a < dim; ++a) {
      const double extent = hi[a] - lo[a];
      std::int64_t c = radius > 0.0 && std::isfinite(radius)
                           ? static_cast<std::int64_t>(std::floor(extent / radius))
                           : 1;
      ncell[a] = std::clamp<std::int64_t>(c, 1, cap);
      cell_size[a] = extent > 0.0 ? extent / static_cast<double>(ncell[a]) : 1.0;
      total *= ncell[a];
    }
    buckets.resize(static_cast<std::size_t>(total));
    for (std::int64_t j = 0; j < n; ++j)
      buckets[cell_of(&Y.at(j, 0))].push_back(static_cast<std::int32_t>(j));
  }

  std::size_t cell_of(const double* p) const {
    std::int64_t idx = 0;
    for (int a = 0; a < dim; ++a) {
      std::int64_t c = static_cast<std::int64_t>(std::floor((p[a] - lo[a]) / cell_size[a]));
      c = std::clamp<std::int64_t>(c, 0, ncell[a] - 1);
      idx = idx * ncell[a] + c;
    }
    return static_cast<std::size_t>(idx);
  }

  template <typename F>
  void for_candidates(const double* p, double radius, F&& f) const {
    std::int64_t cl[3], ch[3];
    for (int a = 0; a < dim; ++a) {
      cl[a] = std::clamp<std::int64_t>(
          static_cast<std::int64_t>(std::floor((p[a] - radius - lo[a]) / cell_size[a])), 0,
          ncell[a] - 1);
      ch[a] = std::clamp<std::int64_t>(
          static_cast<std::int64_t>(std::floor((p[a] + radius - lo[a]) / cell_size[a])), 0,
          ncell[a] - 1);
    }
    std::int64_t it[3] = {cl[0], dim > 1 ? cl[1] : 0, dim > 2 ? cl[2] : 0};
    while (true) {
      std::int64_t idx = 0;
      for (int a = 0; a < dim; ++a) idx = idx * ncell[a] + it[a];
      for (std::int32_t j : buckets[static_cast<std::size_t>(idx)]) f(j);
      int a = dim - 1;
      while (a >= 0) {
        if (++it[a] <= ch[a]) break;
        it[a] = cl[a];
        --a;
      }
      if (a < 0) break;
    }
  }
};

}  // namespace

CsrMatrix wendland_gram_csr(const Tensor& X, const Tensor& Y, double eps,
                            std::vector<double>* dists) {
  if (X.rank() != 2 || Y.rank() != 2 || X.shape[1] != Y.shape[1])
    throw ContractViolation("wendland_gram_csr: point sets must share a dimension");
  if (X.shape[0] == 0 || Y.shape[0] == 0)
    throw ContractViolation("wendland_gram_csr: empty point set");
  if (eps <= 0.0) throw ContractViolation("wendland_gram_csr: eps must be positive");
  const int dim = static_cast<int>(X.shape[1]);
  const std::int64_t nx = X.shape[0];
  const std::int64_t ny = Y.shape[0];
  const double radius = 1.0 / eps;

  CsrMatrix A;
  A.rows = nx;
  A.cols = ny;
  A.row_ptr.assign(static_cast<std::size_t>(nx) + 1, 0);
  std::vector<std::pair<std::int32_t, double>> all;
  all.reserve(static_cast<std::size_t>(nx) * 8);
  if (ny <= 96) {
    // direct scan; columns come out sorted for free
    for (std::int64_t i = 0; i < nx; ++i) {
      const double* xi = &X.at(i, 0);
      std::int64_t count = 0;
      for (std::int64_t j = 0; j < ny; ++j) {
        const double r = distance(xi, &Y.at(j, 0), dim);
        if (r < radius) {
          all.emplace_back(static_cast<std::int32_t>(j), r);
          ++count;
        }
      }
      A.row_ptr[static_cast<std::size_t>(i) + 1] = A.row_ptr[static_cast<std::size_t>(i)] + count;
    }
  } else {
    CellList cells(Y, radius);
    std::vector<std::pair<std::int32_t, double>> row;  // (col, distance)
    for (std::int64_t i = 0; i < nx; ++i) {
      row.clear();
      const double* xi = &X.at(i, 0);
      cells.for_candidates(xi, radius, [&](std::int32_t j) {
        const double r = distance(xi, &Y.at(j, 0), dim);
        if (r < radius) row.emplace_back(j, r);
      });
      std::sort(row.begin(), row.end());
      A.row_ptr[static_cast<std::size_t>(i) + 1] =
          A.row_ptr[static_cast<std::size_t>(i)] + static_cast<std::int64_t>(row.size());
      for (auto& [j, r] : row) all.emplace_back(j, r);
    }
  }
  A.col.resize(all.size());
  A.val.resize(all.size());
  if (dists) dists->resize(all.size());
  for (std::size_t k = 0; k < all.size(); ++k) {
    A.col[k] = all[k].first;
    A.val[k] = wendland_c4(all[k].second, eps);
    if (dists) (*dists)[k] = all[k].second;
  }
  return A;
}

double GramMatrix::value_at(std::int64_t i, std::int64_t j) const {
  if (!sparse) return dense.at(i, j);
  for (std::int64_t k = csr.row_ptr[i]; k < csr.row_ptr[i + 1]; ++k)
    if (csr.col[k] == j) return csr.val[k];
  return 0.0;
}

GramMatrix gram(const KernelSpec& spec, const Tensor& X, const Tensor& Y) {
  if (X.rank() != 2 || Y.rank() != 2)
    throw ContractViolation("gram: point sets must be [n,d] matrices");
  if (X.shape[0] == 0 || Y.shape[0] == 0) throw ContractViolation("gram: empty point set");
  if (X.shape[1] != spec.dim || Y.shape[1] != spec.dim)
    throw ContractViolation("gram: point dimension does not match kernel dim");
  GramMatrix G;
  if (spec.kind == KernelKind::wendland_c4) {
    G.sparse = true;
    G.csr = wendland_gram_csr(X, Y, spec.eps());
    return G;
  }
  G.sparse = false;
  G.dense = Tensor::zeros({X.shape[0], Y.shape[0]});
  for (std::int64_t i = 0; i < X.shape[0]; ++i)
    for (std::int64_t j = 0; j < Y.shape[0]; ++j)
      G.dense.at(i, j) = kernel_eval(spec, &X.at(i, 0), &Y.at(j, 0));
  return G;
}

}  // namespace kno
