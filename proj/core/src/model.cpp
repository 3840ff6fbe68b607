#include "kno/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

#include <json.hpp>

#include "kno/errors.hpp"
#include "kno/io.hpp"
#include "internal_gemm.hpp"

namespace kno {

using nlohmann::json;

// Keyed per op slot; an entry is reused while its key (the kernel parameters
// and evaluation geometry) is unchanged, so the batched chunks of one
// optimizer step share kernel matrices and factorizations.
struct OpCache {
  struct Entry {
    std::vector<double> key;
    std::shared_ptr<void> payload;
  };
  std::map<int, Entry> slots;

  template <typename T, typename Maker>
  std::shared_ptr<T> get(int slot, std::vector<double> key, Maker&& make) {
    Entry& e = slots[slot];
    if (e.payload && e.key == key) return std::static_pointer_cast<T>(e.payload);
    std::shared_ptr<T> p = make();
    e.key = std::move(key);
    e.payload = p;
    return p;
  }
};

ChannelIndexMap make_index_map(int p, int q) {
  if (q < 1 || q > p) throw ContractViolation("make_index_map: need 1 <= q <= p");
  ChannelIndexMap m;
  m.p = p;
  m.q = q;
  m.kernel_of_channel.resize(static_cast<std::size_t>(p));
  for (int j = 0; j < p; ++j) {
    // ceil((j+1) * q / p), stored zero-based
    const int k = static_cast<int>((static_cast<long>(j + 1) * q + p - 1) / p);
    m.kernel_of_channel[static_cast<std::size_t>(j)] = k - 1;
  }
  return m;
}

KnoModel make_model(const ModelConfig& config, QuadRule quad, Tensor train_grid) {
  if (config.q < 1 || config.q > config.p) throw ContractViolation("make_model: need 1 <= q <= p");
  if (train_grid.rank() != 2 || train_grid.shape[1] != config.d)
    throw ContractViolation("make_model: train_grid must be [N_T, d]");
  if (quad.dim() != config.d) throw ContractViolation("make_model: quadrature dim != d");
  KnoModel m;
  m.config = config;
  const int p = config.p, q = config.q, d = config.d;
  m.lift_W = Tensor::zeros({config.d_u + d, p});
  m.lift_b = Tensor::zeros({p});
  m.blocks.resize(static_cast<std::size_t>(config.L_minus_1));
  for (auto& blk : m.blocks) {
    blk.kind = config.block_kind;
    blk.raw_eps = Tensor::zeros({q});
    blk.W = Tensor::zeros({p, p});
    blk.b = Tensor::zeros({p});
  }
  m.final_block.kind = config.final_kind;
  if (config.final_kind == KernelKind::spectral_mixture) {
    m.final_block.lambda = Tensor::zeros({q, 2});
    m.final_block.mu = Tensor::zeros({q, 2 * d});
    m.final_block.raw_nu = Tensor::zeros({q, 2 * d});
  } else {
    m.final_block.raw_eps = Tensor::zeros({q});
  }
  m.proj_W1 = Tensor::zeros({p, p});
  m.proj_b1 = Tensor::zeros({p});
  m.proj_W2 = Tensor::zeros({p, p});
  m.proj_b2 = Tensor::zeros({p});
  m.proj_W3 = Tensor::zeros({p, config.d_y});
  m.proj_b3 = Tensor::zeros({config.d_y});
  m.index_map = make_index_map(p, q);
  m.quad = std::move(quad);
  m.train_grid = std::move(train_grid);
  m.interp_raw_eps = Tensor::zeros({1});
  m.op_cache = std::make_shared<OpCache>();
  return m;
}

std::vector<ParamRef> model_parameters(KnoModel& m) {
  std::vector<ParamRef> out;
  out.push_back({"lift.W", &m.lift_W, false, false, -1});
  out.push_back({"lift.b", &m.lift_b, false, false, -1});
  for (std::size_t l = 0; l < m.blocks.size(); ++l) {
    const std::string base = "block" + std::to_string(l) + ".";
    out.push_back({base + "raw_eps", &m.blocks[l].raw_eps, true, true, static_cast<int>(l)});
    out.push_back({base + "W", &m.blocks[l].W, false, false, static_cast<int>(l)});
    out.push_back({base + "b", &m.blocks[l].b, false, false, static_cast<int>(l)});
  }
  const int final_layer = static_cast<int>(m.blocks.size());
  if (m.final_block.kind == KernelKind::spectral_mixture) {
    out.push_back({"final.lambda", &m.final_block.lambda, true, false, final_layer});
    out.push_back({"final.mu", &m.final_block.mu, true, false, final_layer});
    out.push_back({"final.raw_nu", &m.final_block.raw_nu, true, true, final_layer});
  } else {
    out.push_back({"final.raw_eps", &m.final_block.raw_eps, true, true, final_layer});
  }
  out.push_back({"proj.W1", &m.proj_W1, false, false, -1});
  out.push_back({"proj.b1", &m.proj_b1, false, false, -1});
  out.push_back({"proj.W2", &m.proj_W2, false, false, -1});
  out.push_back({"proj.b2", &m.proj_b2, false, false, -1});
  out.push_back({"proj.W3", &m.proj_W3, false, false, -1});
  out.push_back({"proj.b3", &m.proj_b3, false, false, -1});
  out.push_back({"interp.raw_eps", &m.interp_raw_eps, true, true, -1});
  return out;
}

std::int64_t count_parameters(const KnoModel& m) {
  std::int64_t n = 0;
  n += m.lift_W.size() + m.lift_b.size();
  for (const auto& blk : m.blocks) n += blk.raw_eps.size() + blk.W.size() + blk.b.size();
  if (m.final_block.kind == KernelKind::spectral_mixture)
    n += m.final_block.lambda.size() + m.final_block.mu.size() + m.final_block.raw_nu.size();
  else
    n += m.final_block.raw_eps.size();
  n += m.proj_W1.size() + m.proj_b1.size() + m.proj_W2.size() + m.proj_b2.size() +
       m.proj_W3.size() + m.proj_b3.size();
  n += m.interp_raw_eps.size();
  return n;
}

namespace {

void flatten_final_sm(const FinalBlock& fb, int d, std::vector<double>& out) {
  const std::int64_t q = fb.lambda.shape[0];
  for (std::int64_t i = 0; i < q; ++i)
    for (int r = 0; r < 2; ++r) {
      out.push_back(fb.lambda.at(i, r));
      for (int a = 0; a < d; ++a) out.push_back(fb.mu.at(i, r * d + a));
      for (int a = 0; a < d; ++a) out.push_back(fb.raw_nu.at(i, r * d + a));
    }
}

void unflatten_final_sm(FinalBlock& fb, int d, const std::vector<double>& flat, std::size_t& at) {
  const std::int64_t q = fb.lambda.shape[0];
  for (std::int64_t i = 0; i < q; ++i)
    for (int r = 0; r < 2; ++r) {
      fb.lambda.at(i, r) = flat[at++];
      for (int a = 0; a < d; ++a) fb.mu.at(i, r * d + a) = flat[at++];
      for (int a = 0; a < d; ++a) fb.raw_nu.at(i, r * d + a) = flat[at++];
    }
}

}  // namespace

std::vector<double> flatten_parameters(const KnoModel& m) {
  std::vector<double> out;
  out.reserve(static_cast<std::size_t>(count_parameters(m)));
  auto put = [&out](const Tensor& t) { out.insert(out.end(), t.data.begin(), t.data.end()); };
  put(m.lift_W);
  put(m.lift_b);
  for (const auto& blk : m.blocks) {
    put(blk.raw_eps);
    put(blk.W);
    put(blk.b);
  }
  if (m.final_block.kind == KernelKind::spectral_mixture)
    flatten_final_sm(m.final_block, m.config.d, out);
  else
    put(m.final_block.raw_eps);
  put(m.proj_W1);
  put(m.proj_b1);
  put(m.proj_W2);
  put(m.proj_b2);
  put(m.proj_W3);
  put(m.proj_b3);
  put(m.interp_raw_eps);
  return out;
}

void unflatten_parameters(KnoModel& m, const std::vector<double>& flat) {
  if (static_cast<std::int64_t>(flat.size()) != count_parameters(m))
    throw ContractViolation("unflatten_parameters: expected " +
                            std::to_string(count_parameters(m)) + " values, got " +
                            std::to_string(flat.size()));
  std::size_t at = 0;
  auto take = [&](Tensor& t) {
    std::memcpy(t.data.data(), flat.data() + at, t.data.size() * sizeof(double));
    at += t.data.size();
  };
  take(m.lift_W);
  take(m.lift_b);
  for (auto& blk : m.blocks) {
    take(blk.raw_eps);
    take(blk.W);
    take(blk.b);
  }
  if (m.final_block.kind == KernelKind::spectral_mixture)
    unflatten_final_sm(m.final_block, m.config.d, flat, at);
  else
    take(m.final_block.raw_eps);
  take(m.proj_W1);
  take(m.proj_b1);
  take(m.proj_W2);
  take(m.proj_b2);
  take(m.proj_W3);
  take(m.proj_b3);
  take(m.interp_raw_eps);
}

// ---- checkpoint -------------------------------------------------------------

void save_checkpoint(const KnoModel& m, const std::string& path, std::uint64_t rng_seed) {
  json header;
  header["format"] = "kno-checkpoint";
  header["param_order_version"] = 1;
  header["rng_seed"] = rng_seed;
  header["config"] = {
      {"d", m.config.d},
      {"d_u", m.config.d_u},
      {"d_y", m.config.d_y},
      {"p", m.config.p},
      {"q", m.config.q},
      {"L_minus_1", m.config.L_minus_1},
      {"block_kernel", kernel_kind_name(m.config.block_kind)},
      {"final_kernel", kernel_kind_name(m.config.final_kind)},
      {"normalization", m.config.normalization},
  };
  header["train_grid"] = m.train_grid.data;
  header["n_t"] = m.train_grid.shape[0];
  header["quad"] = {{"points", m.quad.points.data},
                    {"weights", m.quad.weights.data},
                    {"n_q", m.quad.size()},
                    {"measure", m.quad.domain_measure}};
  header["param_count"] = count_parameters(m);

  std::ostringstream body;
  body << header.dump() << "\n";
  const std::vector<double> flat = flatten_parameters(m);
  body.write(reinterpret_cast<const char*>(flat.data()),
             static_cast<std::streamsize>(flat.size() * sizeof(double)));
  write_file_atomic(path, body.str());
}

KnoModel load_checkpoint(const std::string& path, std::uint64_t* rng_seed) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("load_checkpoint: cannot open " + path);
  std::string line;
  if (!std::getline(in, line)) throw IoError("load_checkpoint: missing header in " + path);
  json header = json::parse(line);
  if (header.value("format", "") != std::string("kno-checkpoint"))
    throw IoError("load_checkpoint: not a checkpoint file: " + path);
  if (header.value("param_order_version", 0) != 1)
    throw IoError("load_checkpoint: unsupported parameter ordering in " + path);

  ModelConfig cfg;
  const json& jc = header.at("config");
  cfg.d = jc.at("d").get<int>();
  cfg.d_u = jc.at("d_u").get<int>();
  cfg.d_y = jc.at("d_y").get<int>();
  cfg.p = jc.at("p").get<int>();
  cfg.q = jc.at("q").get<int>();
  cfg.L_minus_1 = jc.at("L_minus_1").get<int>();
  cfg.block_kind = kernel_kind_from_name(jc.at("block_kernel").get<std::string>());
  cfg.final_kind = kernel_kind_from_name(jc.at("final_kernel").get<std::string>());
  cfg.normalization = jc.at("normalization").get<std::string>();

  const std::int64_t n_t = header.at("n_t").get<std::int64_t>();
  Tensor grid({n_t, cfg.d}, header.at("train_grid").get<std::vector<double>>());
  const std::int64_t n_q = header.at("quad").at("n_q").get<std::int64_t>();
  QuadRule quad;
  quad.points = Tensor({n_q, cfg.d}, header.at("quad").at("points").get<std::vector<double>>());
  quad.weights = Tensor({n_q}, header.at("quad").at("weights").get<std::vector<double>>());
  quad.domain_measure = header.at("quad").at("measure").get<double>();

  KnoModel m = make_model(cfg, std::move(quad), std::move(grid));
  const std::int64_t n_params = header.at("param_count").get<std::int64_t>();
  if (n_params != count_parameters(m))
    throw IoError("load_checkpoint: parameter count mismatch in " + path);
  std::vector<double> flat(static_cast<std::size_t>(n_params));
  read_f64_block(in, flat.data(), flat.size(), path);
  unflatten_parameters(m, flat);
  if (rng_seed) *rng_seed = header.value("rng_seed", 0ULL);
  return m;
}

// ---- kernel contraction ops ---------------------------------------------------

namespace {

// Per-kernel Gram with pair distances; the compactly supported kind keeps the
// cell-list pattern, globally supported kinds store the full pattern.
struct GramHolder {
  CsrMatrix csr;
  std::vector<double> dists;
};

GramHolder build_gram_holder(KernelKind kind, const Tensor& X, const Tensor& Y, double eps) {
  GramHolder h;
  if (kind == KernelKind::wendland_c4) {
    h.csr = wendland_gram_csr(X, Y, eps, &h.dists);
    return h;
  }
  const std::int64_t rows = X.shape[0], cols = Y.shape[0];
  const std::int64_t d = X.shape[1];
  h.csr.rows = rows;
  h.csr.cols = cols;
  h.csr.row_ptr.resize(static_cast<std::size_t>(rows) + 1);
  h.csr.col.resize(static_cast<std::size_t>(rows * cols));
  h.csr.val.resize(static_cast<std::size_t>(rows * cols));
  h.dists.resize(static_cast<std::size_t>(rows * cols));
  for (std::int64_t i = 0; i < rows; ++i) {
    h.csr.row_ptr[static_cast<std::size_t>(i)] = i * cols;
    for (std::int64_t j = 0; j < cols; ++j) {
      double s = 0.0;
      for (std::int64_t a = 0; a < d; ++a) {
        const double diff = X.at(i, a) - Y.at(j, a);
        s += diff * diff;
      }
      const double r = std::sqrt(s);
      h.csr.col[static_cast<std::size_t>(i * cols + j)] = static_cast<std::int32_t>(j);
      h.csr.val[static_cast<std::size_t>(i * cols + j)] = radial_profile(kind, eps * r);
      h.dists[static_cast<std::size_t>(i * cols + j)] = r;
    }
  }
  h.csr.row_ptr[static_cast<std::size_t>(rows)] = rows * cols;
  return h;
}

// (m, channel) pairs served by each kernel, in deterministic batch order.
std::vector<std::vector<std::int64_t>> kernel_row_offsets(const ChannelIndexMap& map,
                                                          std::int64_t M, std::int64_t nq) {
  std::vector<std::vector<std::int64_t>> offsets(static_cast<std::size_t>(map.q));
  for (std::int64_t m = 0; m < M; ++m)
    for (int j = 0; j < map.p; ++j)
      offsets[static_cast<std::size_t>(map.kernel_of_channel[static_cast<std::size_t>(j)])]
          .push_back((m * map.p + j) * nq);
  return offsets;
}

// Z[b, r] = w[b] * g[row_r + b]: weighted transposed gather of the group rows.
void gather_weighted(const double* __restrict__ g, const double* __restrict__ w,
                     const std::vector<std::int64_t>& rows, std::int64_t nq,
                     double* __restrict__ Z) {
  const std::int64_t R = static_cast<std::int64_t>(rows.size());
  for (std::int64_t r = 0; r < R; ++r) {
    const double* src = g + rows[static_cast<std::size_t>(r)];
    for (std::int64_t b = 0; b < nq; ++b) Z[b * R + r] = w[b] * src[b];
  }
}

void gather_plain(const double* __restrict__ g, const std::vector<std::int64_t>& rows,
                  std::int64_t n, double* __restrict__ Z) {
  const std::int64_t R = static_cast<std::int64_t>(rows.size());
  for (std::int64_t r = 0; r < R; ++r) {
    const double* src = g + rows[static_cast<std::size_t>(r)];
    for (std::int64_t b = 0; b < n; ++b) Z[b * R + r] = src[b];
  }
}

// out[row_r + a] += Y[a, r]
void scatter_add(const double* __restrict__ Y, const std::vector<std::int64_t>& rows,
                 std::int64_t n, double* __restrict__ out) {
  const std::int64_t R = static_cast<std::int64_t>(rows.size());
  for (std::int64_t r = 0; r < R; ++r) {
    double* dst = out + rows[static_cast<std::size_t>(r)];
    for (std::int64_t a = 0; a < n; ++a) dst[a] += Y[a * R + r];
  }
}

// Y[a,:] += val_k * Z[col_k,:] over the stored pattern.
void csr_times_stack(const CsrMatrix& A, const double* __restrict__ Z, double* __restrict__ Y,
                     std::int64_t R) {
  for (std::int64_t a = 0; a < A.rows; ++a) {
    double* y = Y + a * R;
    for (std::int64_t k = A.row_ptr[a]; k < A.row_ptr[a + 1]; ++k) {
      const double v = A.val[k];
      const double* z = Z + static_cast<std::int64_t>(A.col[k]) * R;
      for (std::int64_t r = 0; r < R; ++r) y[r] += v * z[r];
    }
  }
}

// T[b,:] += val_k * S[a,:] over the stored pattern (transposed apply).
void csr_transposed_times_stack(const CsrMatrix& A, const double* __restrict__ S,
                                double* __restrict__ T, std::int64_t R) {
  for (std::int64_t a = 0; a < A.rows; ++a) {
    const double* s = S + a * R;
    for (std::int64_t k = A.row_ptr[a]; k < A.row_ptr[a + 1]; ++k) {
      double* t = T + static_cast<std::int64_t>(A.col[k]) * R;
      const double v = A.val[k];
      for (std::int64_t r = 0; r < R; ++r) t[r] += v * s[r];
    }
  }
}

// sum over stored (a,b) of dphi(a,b) * dot(S[a,:], Z[b,:])
double csr_eps_contraction(const CsrMatrix& A, const std::vector<double>& dists, KernelKind kind,
                           double eps, const double* __restrict__ S, const double* __restrict__ Z,
                           std::int64_t R) {
  double acc = 0.0;
  for (std::int64_t a = 0; a < A.rows; ++a) {
    const double* s = S + a * R;
    for (std::int64_t k = A.row_ptr[a]; k < A.row_ptr[a + 1]; ++k) {
      const double r_ab = dists[static_cast<std::size_t>(k)];
      const double dphi = r_ab * radial_profile_dt(kind, eps * r_ab);
      if (dphi == 0.0) continue;
      const double* z = Z + static_cast<std::int64_t>(A.col[k]) * R;
      double dot = 0.0;
      for (std::int64_t r = 0; r < R; ++r) dot += s[r] * z[r];
      acc += dphi * dot;
    }
  }
  return acc;
}

// Shared implementation of the radial contraction: rows = evaluation points
// (the quadrature points themselves for the hidden blocks, the output grid
// for a radial final block).
VarId radial_contract_impl(const char* name, Tape& t, VarId eps, VarId g, const Tensor& row_points,
                           const QuadRule& rule, const ChannelIndexMap& map, KernelKind kind,
                           OpCache* cache, int slot) {
  const Tensor& E = t.val(eps);
  const Tensor& G = t.val(g);
  if (E.size() != map.q)
    throw ContractViolation(std::string(name) + ": eps must have q entries");
  if (G.rank() != 3 || G.shape[1] != map.p || G.shape[2] != rule.size())
    throw ContractViolation(std::string(name) + ": activations must be [M,p,N_Q]");
  const std::int64_t M = G.shape[0], nq = G.shape[2];
  const std::int64_t n_out = row_points.shape[0];

  auto make_holders = [&] {
    auto h = std::make_shared<std::vector<GramHolder>>();
    h->reserve(static_cast<std::size_t>(map.q));
    for (int i = 0; i < map.q; ++i)
      h->push_back(build_gram_holder(kind, row_points, rule.points, E[i]));
    return h;
  };
  std::shared_ptr<std::vector<GramHolder>> holders;
  if (cache) {
    std::vector<double> key;
    key.reserve(2 + row_points.data.size() + E.data.size());
    key.push_back(static_cast<double>(kind));
    key.push_back(static_cast<double>(n_out));
    key.insert(key.end(), row_points.data.begin(), row_points.data.end());
    key.insert(key.end(), E.data.begin(), E.data.end());
    holders = cache->get<std::vector<GramHolder>>(slot, std::move(key), make_holders);
  } else {
    holders = make_holders();
  }

  auto offsets_in = std::make_shared<std::vector<std::vector<std::int64_t>>>(
      kernel_row_offsets(map, M, nq));
  auto offsets_out = std::make_shared<std::vector<std::vector<std::int64_t>>>(
      kernel_row_offsets(map, M, n_out));
  // weighted input stacks are reused by the backward pass
  auto stacks = std::make_shared<std::vector<std::vector<double>>>(static_cast<std::size_t>(map.q));

  const double* w = rule.weights.data.data();
  Tensor out = Tensor::zeros({M, static_cast<std::int64_t>(map.p), n_out});
  std::vector<double> Y;
  for (int i = 0; i < map.q; ++i) {
    const auto& rows_in = (*offsets_in)[static_cast<std::size_t>(i)];
    const std::int64_t R = static_cast<std::int64_t>(rows_in.size());
    auto& Z = (*stacks)[static_cast<std::size_t>(i)];
    Z.assign(static_cast<std::size_t>(nq * R), 0.0);
    gather_weighted(G.data.data(), w, rows_in, nq, Z.data());
    Y.assign(static_cast<std::size_t>(n_out * R), 0.0);
    csr_times_stack((*holders)[static_cast<std::size_t>(i)].csr, Z.data(), Y.data(), R);
    scatter_add(Y.data(), (*offsets_out)[static_cast<std::size_t>(i)], n_out, out.data.data());
  }

  Tensor weights = rule.weights;
  return t.push(
      name, std::move(out), {eps, g},
      [eps, g, holders, offsets_in, offsets_out, stacks, weights = std::move(weights), kind, nq,
       n_out](const Tensor& gout, Tape& tt, std::vector<Tensor>& grads) {
        const Tensor& G = tt.val(g);
        const Tensor& E = tt.val(eps);
        Tensor& gg = grad_buffer(grads, g, G.shape);
        Tensor& ge = grad_buffer(grads, eps, E.shape);
        const double* w = weights.data.data();
        const int q = static_cast<int>(E.size());
        std::vector<double> Sbar, T;
        for (int i = 0; i < q; ++i) {
          const auto& rows_in = (*offsets_in)[static_cast<std::size_t>(i)];
          const auto& rows_out = (*offsets_out)[static_cast<std::size_t>(i)];
          const std::int64_t R = static_cast<std::int64_t>(rows_in.size());
          const GramHolder& h = (*holders)[static_cast<std::size_t>(i)];
          Sbar.assign(static_cast<std::size_t>(n_out * R), 0.0);
          gather_plain(gout.data.data(), rows_out, n_out, Sbar.data());
          // dG = w ⊙ (Gram^T S̄)
          T.assign(static_cast<std::size_t>(nq * R), 0.0);
          csr_transposed_times_stack(h.csr, Sbar.data(), T.data(), R);
          for (std::int64_t b = 0; b < nq; ++b) {
            const double wb = w[b];
            double* trow = T.data() + b * R;
            for (std::int64_t r = 0; r < R; ++r) trow[r] *= wb;
          }
          scatter_add(T.data(), rows_in, nq, gg.data.data());
          // d(eps_i): contraction against the entrywise Gram derivative
          ge[i] += csr_eps_contraction(h.csr, h.dists, kind, E[i], Sbar.data(),
                                       (*stacks)[static_cast<std::size_t>(i)].data(), R);
        }
      });
}

}  // namespace

VarId gram_contract_op(Tape& t, VarId eps, VarId g, const QuadRule& rule,
                       const ChannelIndexMap& map, KernelKind kind, OpCache* cache, int slot) {
  return radial_contract_impl("gram_contract", t, eps, g, rule.points, rule, map, kind, cache,
                              slot);
}

VarId radial_final_contract_op(Tape& t, VarId eps, VarId g, const Tensor& out_points,
                               const QuadRule& rule, const ChannelIndexMap& map, KernelKind kind,
                               OpCache* cache, int slot) {
  return radial_contract_impl("radial_final_contract", t, eps, g, out_points, rule, map, kind,
                              cache, slot);
}

VarId mixture_contract_op(Tape& t, VarId lambda, VarId mu, VarId nu, VarId g,
                          const Tensor& out_points, const QuadRule& rule,
                          const ChannelIndexMap& map, OpCache* cache, int slot) {
  const Tensor& L = t.val(lambda);
  const Tensor& Mu = t.val(mu);
  const Tensor& Nu = t.val(nu);
  const Tensor& G = t.val(g);
  const int d = static_cast<int>(rule.points.shape[1]);
  const int q = map.q;
  if (L.rank() != 2 || L.shape[0] != q || L.shape[1] != 2)
    throw ContractViolation("mixture_contract: lambda must be [q,2]");
  if (Mu.shape[0] != q || Mu.shape[1] != 2 * d || !Mu.same_shape(Nu))
    throw ContractViolation("mixture_contract: mu/nu must be [q,2d]");
  if (G.rank() != 3 || G.shape[1] != map.p || G.shape[2] != rule.size())
    throw ContractViolation("mixture_contract: activations must be [M,p,N_Q]");
  const std::int64_t M = G.shape[0], nq = G.shape[2];
  const std::int64_t n_out = out_points.shape[0];

  // theta per kernel: [lambda_r, mu_r(d), nu_r(d)] for r = 1,2.
  const int tlen = 2 * (1 + 2 * d);
  auto thetas = std::make_shared<std::vector<double>>(static_cast<std::size_t>(q * tlen));
  for (int i = 0; i < q; ++i)
    for (int r = 0; r < 2; ++r) {
      double* th = thetas->data() + i * tlen + r * (1 + 2 * d);
      th[0] = L.at(i, r);
      for (int a = 0; a < d; ++a) {
        th[1 + a] = Mu.at(i, r * d + a);
        th[1 + d + a] = Nu.at(i, r * d + a);
      }
    }

  // Psi_i[t_out, b] = psi_i(x_t - y_b) plus (lazily) its parameter
  // derivatives; shared across chunks while the parameters are unchanged.
  struct MixtureTables {
    std::vector<Tensor> psis;
    Tensor dpsi;  // [q, tlen, n_out * nq], built on first backward use
    bool dpsi_ready = false;
  };
  auto make_tables = [&] {
    auto tab = std::make_shared<MixtureTables>();
    tab->psis.reserve(static_cast<std::size_t>(q));
    for (int i = 0; i < q; ++i) {
      Tensor psi = Tensor::zeros({n_out, nq});
      const double* th = thetas->data() + i * tlen;
      for (std::int64_t to = 0; to < n_out; ++to)
        for (std::int64_t b = 0; b < nq; ++b) {
          double tau[3];
          for (int a = 0; a < d; ++a) tau[a] = out_points.at(to, a) - rule.points.at(b, a);
          psi.at(to, b) = spectral_mixture(tau, d, th);
        }
      tab->psis.push_back(std::move(psi));
    }
    return tab;
  };
  std::shared_ptr<MixtureTables> tables;
  if (cache) {
    std::vector<double> key;
    key.reserve(1 + out_points.data.size() + thetas->size());
    key.push_back(static_cast<double>(n_out));
    key.insert(key.end(), out_points.data.begin(), out_points.data.end());
    key.insert(key.end(), thetas->begin(), thetas->end());
    tables = cache->get<MixtureTables>(slot, std::move(key), make_tables);
  } else {
    tables = make_tables();
  }
  const std::vector<Tensor>* psis_ptr = &tables->psis;

  auto offsets_in = std::make_shared<std::vector<std::vector<std::int64_t>>>(
      kernel_row_offsets(map, M, nq));
  auto offsets_out = std::make_shared<std::vector<std::vector<std::int64_t>>>(
      kernel_row_offsets(map, M, n_out));
  auto stacks = std::make_shared<std::vector<std::vector<double>>>(static_cast<std::size_t>(q));

  const double* w = rule.weights.data.data();
  Tensor out = Tensor::zeros({M, static_cast<std::int64_t>(map.p), n_out});
  std::vector<double> Y;
  for (int i = 0; i < q; ++i) {
    const auto& rows_in = (*offsets_in)[static_cast<std::size_t>(i)];
    const std::int64_t R = static_cast<std::int64_t>(rows_in.size());
    auto& Z = (*stacks)[static_cast<std::size_t>(i)];
    Z.assign(static_cast<std::size_t>(nq * R), 0.0);
    gather_weighted(G.data.data(), w, rows_in, nq, Z.data());
    Y.assign(static_cast<std::size_t>(n_out * R), 0.0);
    detail::gemm_nn((*psis_ptr)[static_cast<std::size_t>(i)].data.data(), Z.data(), Y.data(),
                    n_out, nq, R);
    scatter_add(Y.data(), (*offsets_out)[static_cast<std::size_t>(i)], n_out, out.data.data());
  }

  Tensor weights = rule.weights;
  Tensor opts = out_points;
  Tensor qpts = rule.points;
  return t.push(
      "mixture_contract", std::move(out), {lambda, mu, nu, g},
      [lambda, mu, nu, g, tables, thetas, offsets_in, offsets_out, stacks,
       weights = std::move(weights), opts = std::move(opts), qpts = std::move(qpts), d, q, tlen,
       nq, n_out](const Tensor& gout, Tape& tt, std::vector<Tensor>& grads) {
        const Tensor& G = tt.val(g);
        Tensor& gg = grad_buffer(grads, g, G.shape);
        Tensor& gl = grad_buffer(grads, lambda, tt.val(lambda).shape);
        Tensor& gm = grad_buffer(grads, mu, tt.val(mu).shape);
        Tensor& gn = grad_buffer(grads, nu, tt.val(nu).shape);
        const double* w = weights.data.data();
        // Parameter derivative tables are batch independent; build them once
        // per step and reuse across chunks.
        if (!tables->dpsi_ready) {
          tables->dpsi = Tensor::zeros({q, tlen, n_out * nq});
          std::vector<double> dtheta_pt(static_cast<std::size_t>(tlen));
          for (int i = 0; i < q; ++i) {
            const double* th = thetas->data() + i * tlen;
            for (std::int64_t to = 0; to < n_out; ++to)
              for (std::int64_t b = 0; b < nq; ++b) {
                double tau[3];
                for (int a = 0; a < d; ++a) tau[a] = opts.at(to, a) - qpts.at(b, a);
                std::fill(dtheta_pt.begin(), dtheta_pt.end(), 0.0);
                spectral_mixture_grad(tau, d, th, 1.0, dtheta_pt.data());
                for (int p2 = 0; p2 < tlen; ++p2)
                  tables->dpsi.at(i, p2, to * nq + b) = dtheta_pt[static_cast<std::size_t>(p2)];
              }
          }
          tables->dpsi_ready = true;
        }
        std::vector<double> Sbar, T, C2(static_cast<std::size_t>(n_out * nq));
        std::vector<double> dtheta(static_cast<std::size_t>(tlen));
        for (int i = 0; i < q; ++i) {
          const auto& rows_in = (*offsets_in)[static_cast<std::size_t>(i)];
          const auto& rows_out = (*offsets_out)[static_cast<std::size_t>(i)];
          const std::int64_t R = static_cast<std::int64_t>(rows_in.size());
          const Tensor& psi = tables->psis[static_cast<std::size_t>(i)];
          Sbar.assign(static_cast<std::size_t>(n_out * R), 0.0);
          gather_plain(gout.data.data(), rows_out, n_out, Sbar.data());
          // dG = w ⊙ (Psi^T S̄)
          T.assign(static_cast<std::size_t>(nq * R), 0.0);
          detail::gemm_tn(psi.data.data(), Sbar.data(), T.data(), nq, n_out, R);
          for (std::int64_t b = 0; b < nq; ++b) {
            const double wb = w[b];
            double* trow = T.data() + b * R;
            for (std::int64_t r = 0; r < R; ++r) trow[r] *= wb;
          }
          scatter_add(T.data(), rows_in, nq, gg.data.data());
          // kernel parameters: C2 = S̄ Z^T, then dot against the dPsi tables
          std::fill(C2.begin(), C2.end(), 0.0);
          detail::gemm_nt(Sbar.data(), (*stacks)[static_cast<std::size_t>(i)].data(), C2.data(),
                          n_out, R, nq);
          const std::int64_t cells = n_out * nq;
          for (int p2 = 0; p2 < tlen; ++p2) {
            const double* dp = &tables->dpsi.at(i, p2, 0);
            double s0 = 0.0, s1 = 0.0;
            std::int64_t cidx = 0;
            for (; cidx + 1 < cells; cidx += 2) {
              s0 += C2[static_cast<std::size_t>(cidx)] * dp[cidx];
              s1 += C2[static_cast<std::size_t>(cidx + 1)] * dp[cidx + 1];
            }
            for (; cidx < cells; ++cidx) s0 += C2[static_cast<std::size_t>(cidx)] * dp[cidx];
            dtheta[static_cast<std::size_t>(p2)] = s0 + s1;
          }
          for (int r = 0; r < 2; ++r) {
            const double* dt = dtheta.data() + r * (1 + 2 * d);
            gl.at(i, r) += dt[0];
            for (int a = 0; a < d; ++a) {
              gm.at(i, r * d + a) += dt[1 + a];
              gn.at(i, r * d + a) += dt[1 + d + a];
            }
          }
        }
      });
}

VarId interp_fit_op(Tape& t, VarId eps, const Tensor& values_cf, const Tensor& nodes,
                    OpCache* cache, int slot) {
  const Tensor& E = t.val(eps);
  if (!E.is_scalar()) throw ContractViolation("interp_fit_op: eps must be a scalar node");
  if (values_cf.rank() != 3 || values_cf.shape[2] != nodes.shape[0])
    throw ContractViolation("interp_fit_op: values must be [M,d_u,N_T]");
  const std::int64_t M = values_cf.shape[0], du = values_cf.shape[1], nt = values_cf.shape[2];

  auto make_fact = [&] {
    KernelSpec spec = make_radial_spec(KernelKind::wendland_c4, static_cast<int>(nodes.shape[1]),
                                       inverse_softplus(E[0]));
    return std::make_shared<InterpFactorization>(nodes, spec);
  };
  std::shared_ptr<InterpFactorization> fact =
      cache ? cache->get<InterpFactorization>(slot, {E[0], static_cast<double>(nt)}, make_fact)
            : make_fact();

  Tensor rhs = Tensor::zeros({nt, M * du});
  for (std::int64_t m = 0; m < M; ++m)
    for (std::int64_t c = 0; c < du; ++c)
      for (std::int64_t n = 0; n < nt; ++n) rhs.at(n, m * du + c) = values_cf.at(m, c, n);
  Tensor sol = fact->solve(rhs);  // [N_T, M*d_u]

  Tensor coeffs = Tensor::zeros({M, du, nt});
  for (std::int64_t m = 0; m < M; ++m)
    for (std::int64_t c = 0; c < du; ++c)
      for (std::int64_t n = 0; n < nt; ++n) coeffs.at(m, c, n) = sol.at(n, m * du + c);

  const double eps_val = E[0];
  return t.push(
      "interp_fit", std::move(coeffs), {eps},
      [eps, fact, sol = std::move(sol), eps_val, M, du, nt](const Tensor& gout, Tape& tt,
                                                            std::vector<Tensor>& grads) {
        Tensor& ge = grad_buffer(grads, eps, tt.val(eps).shape);
        // Adjoint: U = G^{-1} gout; d(eps) = -sum_{(a,b)} dphi(a,b) <U_a, C_b>.
        Tensor B = Tensor::zeros({nt, M * du});
        for (std::int64_t m = 0; m < M; ++m)
          for (std::int64_t c = 0; c < du; ++c)
            for (std::int64_t n = 0; n < nt; ++n) B.at(n, m * du + c) = gout.at(m, c, n);
        Tensor U = fact->solve(B);
        const CsrMatrix& A = fact->gram();
        const std::vector<double>& dists = fact->pair_dists();
        const std::int64_t k = M * du;
        double acc = 0.0;
        for (std::int64_t a = 0; a < nt; ++a)
          for (std::int64_t idx = A.row_ptr[a]; idx < A.row_ptr[a + 1]; ++idx) {
            const std::int32_t b = A.col[idx];
            const double r = dists[static_cast<std::size_t>(idx)];
            const double dphi = r * wendland_c4_dt(eps_val * r);
            if (dphi == 0.0) continue;
            const double* ua = &U.at(a, 0);
            const double* cb = &sol.at(b, 0);
            double dot = 0.0;
            for (std::int64_t col = 0; col < k; ++col) dot += ua[col] * cb[col];
            acc += dphi * dot;
          }
        ge[0] -= acc;
      });
}

VarId interp_eval_op(Tape& t, VarId eps, VarId coeffs, const Tensor& points, const Tensor& nodes,
                     OpCache* cache, int slot) {
  const Tensor& E = t.val(eps);
  const Tensor& C = t.val(coeffs);
  if (!E.is_scalar()) throw ContractViolation("interp_eval_op: eps must be a scalar node");
  if (C.rank() != 3 || C.shape[2] != nodes.shape[0])
    throw ContractViolation("interp_eval_op: coeffs must be [M,d_u,N_T]");
  if (points.shape[1] != nodes.shape[1])
    throw ContractViolation("interp_eval_op: point dimension mismatch");
  const std::int64_t M = C.shape[0], du = C.shape[1];
  const std::int64_t nq = points.shape[0];

  auto make_cross = [&] {
    auto cr = std::make_shared<std::pair<CsrMatrix, std::vector<double>>>();
    cr->first = wendland_gram_csr(points, nodes, E[0], &cr->second);
    return cr;
  };
  std::shared_ptr<std::pair<CsrMatrix, std::vector<double>>> cross;
  if (cache) {
    std::vector<double> key;
    key.reserve(2 + points.data.size());
    key.push_back(E[0]);
    key.push_back(static_cast<double>(nq));
    key.insert(key.end(), points.data.begin(), points.data.end());
    cross = cache->get<std::pair<CsrMatrix, std::vector<double>>>(slot, std::move(key), make_cross);
  } else {
    cross = make_cross();
  }

  Tensor out = Tensor::zeros({M, du, nq});
  for (std::int64_t m = 0; m < M; ++m)
    for (std::int64_t c = 0; c < du; ++c) {
      const double* cf = &C.at(m, c, 0);
      double* dst = &out.at(m, c, 0);
      const CsrMatrix& A = cross->first;
      for (std::int64_t a = 0; a < nq; ++a) {
        double s = 0.0;
        for (std::int64_t k = A.row_ptr[a]; k < A.row_ptr[a + 1]; ++k) s += A.val[k] * cf[A.col[k]];
        dst[a] = s;
      }
    }

  const double eps_val = E[0];
  return t.push(
      "interp_eval", std::move(out), {eps, coeffs},
      [eps, coeffs, cross, eps_val, M, du, nq](const Tensor& gout, Tape& tt,
                                               std::vector<Tensor>& grads) {
        const Tensor& C = tt.val(coeffs);
        Tensor& gc = grad_buffer(grads, coeffs, C.shape);
        Tensor& ge = grad_buffer(grads, eps, tt.val(eps).shape);
        const CsrMatrix& A = cross->first;
        const std::vector<double>& dists = cross->second;
        double acc = 0.0;
        for (std::int64_t m = 0; m < M; ++m)
          for (std::int64_t c = 0; c < du; ++c) {
            const double* grow = &gout.at(m, c, 0);
            const double* cf = &C.at(m, c, 0);
            double* dst = &gc.at(m, c, 0);
            for (std::int64_t a = 0; a < nq; ++a) {
              const double ga = grow[a];
              if (ga == 0.0) continue;
              for (std::int64_t k = A.row_ptr[a]; k < A.row_ptr[a + 1]; ++k) {
                const std::int32_t b = A.col[k];
                dst[b] += A.val[k] * ga;
                const double r = dists[static_cast<std::size_t>(k)];
                acc += ga * r * wendland_c4_dt(eps_val * r) * cf[b];
              }
            }
          }
        ge[0] += acc;
      });
}

// ---- forward ----------------------------------------------------------------

ForwardGraph build_forward(KnoModel& model, const Tensor& inputs_cf, const Tensor* output_points,
                           bool finite_checks) {
  const ModelConfig& cfg = model.config;
  if (inputs_cf.rank() != 3 || inputs_cf.shape[1] != cfg.d_u ||
      inputs_cf.shape[2] != model.train_grid.shape[0])
    throw ContractViolation("build_forward: inputs must be [M, d_u, N_T]");
  const Tensor& out_pts = output_points ? *output_points : model.train_grid;
  if (out_pts.rank() != 2 || out_pts.shape[1] != cfg.d)
    throw ContractViolation("build_forward: output points must be [N_out, d]");

  ForwardGraph fg;
  fg.tape = std::make_unique<Tape>();
  fg.tape->finite_checks = finite_checks;
  Tape& t = *fg.tape;

  auto params = model_parameters(model);
  std::map<std::string, VarId> leaf;
  for (const auto& pr : params) {
    VarId id = t.leaf(*pr.tensor);
    fg.leaves.push_back(id);
    if (pr.kernel_shape) fg.shape_leaves.push_back(id);
    leaf[pr.name] = id;
  }

  OpCache* cache = model.op_cache.get();
  // Slot ids: 0 interp fit, 1 interp eval, 2..L+1 blocks, 100 final block.
  // Interpolate the inputs from the training grid onto the quadrature points.
  VarId eps_interp = softplus(t, leaf.at("interp.raw_eps"));
  VarId coeffs = interp_fit_op(t, eps_interp, inputs_cf, model.train_grid, cache, 0);
  VarId u_q = interp_eval_op(t, eps_interp, coeffs, model.quad.points, model.train_grid, cache, 1);

  // Lift: concat quadrature coordinates as extra channels, dense map, GeLU.
  Tensor xq_t = Tensor::zeros({cfg.d, model.quad.size()});
  for (std::int64_t i = 0; i < model.quad.size(); ++i)
    for (int a = 0; a < cfg.d; ++a) xq_t.at(a, i) = model.quad.points.at(i, a);
  VarId g = append_const_channels(t, u_q, xq_t);
  g = gelu(t, linear_channels(t, g, leaf.at("lift.W"), leaf.at("lift.b")));

  // Integral blocks with pointwise convolutions; GeLU after each block.
  for (std::size_t l = 0; l < model.blocks.size(); ++l) {
    const std::string base = "block" + std::to_string(l) + ".";
    VarId eps_l = softplus(t, leaf.at(base + "raw_eps"));
    VarId s = gram_contract_op(t, eps_l, g, model.quad, model.index_map, model.blocks[l].kind,
                               cache, 2 + static_cast<int>(l));
    VarId affine = linear_channels(t, g, leaf.at(base + "W"), leaf.at(base + "b"));
    g = gelu(t, add(t, affine, s));
  }

  // Final block maps to the output points; no affine term.
  VarId h;
  if (model.final_block.kind == KernelKind::spectral_mixture) {
    VarId nu = softplus(t, leaf.at("final.raw_nu"));
    h = mixture_contract_op(t, leaf.at("final.lambda"), leaf.at("final.mu"), nu, g, out_pts,
                            model.quad, model.index_map, cache, 100);
  } else {
    VarId eps_f = softplus(t, leaf.at("final.raw_eps"));
    h = radial_final_contract_op(t, eps_f, g, out_pts, model.quad, model.index_map,
                                 model.final_block.kind, cache, 100);
  }
  g = gelu(t, h);

  // Projection: two GeLU dense layers, one linear output layer.
  g = gelu(t, linear_channels(t, g, leaf.at("proj.W1"), leaf.at("proj.b1")));
  g = gelu(t, linear_channels(t, g, leaf.at("proj.W2"), leaf.at("proj.b2")));
  fg.prediction = linear_channels(t, g, leaf.at("proj.W3"), leaf.at("proj.b3"));
  return fg;
}

Tensor forward(KnoModel& model, const Tensor& f_on_grid, const Tensor* output_points) {
  const std::int64_t nt = model.train_grid.shape[0];
  const int du = model.config.d_u;
  if (f_on_grid.rank() != 2 || f_on_grid.shape[0] != nt || f_on_grid.shape[1] != du)
    throw ContractViolation("forward: input must be [N_T, d_u]");
  f_on_grid.check_finite("forward input");
  Tensor batch = Tensor::zeros({1, du, nt});
  for (std::int64_t n = 0; n < nt; ++n)
    for (int c = 0; c < du; ++c) batch.at(0, c, n) = f_on_grid.at(n, c);
  ForwardGraph fg = build_forward(model, batch, output_points);
  const Tensor& pred = fg.tape->val(fg.prediction);  // [1, d_y, N_out]
  const std::int64_t n_out = pred.shape[2];
  Tensor out = Tensor::zeros({n_out, model.config.d_y});
  for (std::int64_t n = 0; n < n_out; ++n)
    for (int c = 0; c < model.config.d_y; ++c) out.at(n, c) = pred.at(0, c, n);
  return out;
}

double block_gram_zero_fraction(const KnoModel& model, int layer) {
  if (layer < 0 || layer >= static_cast<int>(model.blocks.size()))
    throw ContractViolation("block_gram_zero_fraction: layer out of range");
  const IntegralBlock& blk = model.blocks[static_cast<std::size_t>(layer)];
  if (blk.kind != KernelKind::wendland_c4)
    throw ContractViolation("block_gram_zero_fraction: layer has no compactly supported kernel");
  const std::int64_t nq = model.quad.size();
  const double total = static_cast<double>(nq) * static_cast<double>(nq);
  double mean = 0.0;
  for (std::int64_t i = 0; i < blk.raw_eps.size(); ++i) {
    const double eps = softplus_value(blk.raw_eps[i]);
    CsrMatrix A = wendland_gram_csr(model.quad.points, model.quad.points, eps);
    mean += 1.0 - static_cast<double>(A.nnz()) / total;
  }
  return mean / static_cast<double>(blk.raw_eps.size());
}

}  // namespace kno
