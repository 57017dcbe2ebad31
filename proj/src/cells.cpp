#include "sva/cells.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "sva/kernels.hpp"

namespace sva {

using kernels::dot;
using kernels::gemv_acc;
using kernels::gemv_t_acc;
using kernels::ger_acc;

std::string_view to_string(CellKind kind) {
  switch (kind) {
    case CellKind::LSTM: return "LSTM";
    case CellKind::GRU: return "GRU";
    case CellKind::ONLSTM: return "ONLSTM";
    case CellKind::DRNN: return "DRNN";
  }
  return "?";
}

CellKind parse_cell_kind(std::string_view name) {
  std::string up(name);
  std::transform(up.begin(), up.end(), up.begin(), [](unsigned char ch) { return std::toupper(ch); });
  for (CellKind k : kAllCellKinds)
    if (to_string(k) == up) return k;
  throw std::invalid_argument("unknown cell kind '" + std::string(name) + "'");
}

std::string_view to_string(Head head) { return head == Head::LanguageModel ? "lm" : "classifier"; }

Head parse_head(std::string_view name) {
  if (name == "lm") return Head::LanguageModel;
  if (name == "classifier") return Head::Classifier;
  throw std::invalid_argument("unknown objective '" + std::string(name) + "'");
}

std::size_t gate_count(CellKind kind) {
  switch (kind) {
    case CellKind::LSTM: return 4;
    case CellKind::GRU: return 3;
    case CellKind::ONLSTM: return 6;
    case CellKind::DRNN: return 0;
  }
  return 0;
}

bool has_cell_vector(CellKind kind) { return kind == CellKind::LSTM || kind == CellKind::ONLSTM; }

std::vector<std::string> param_names(CellKind kind) {
  switch (kind) {
    case CellKind::LSTM: return {"W_i", "W_f", "W_g", "W_o", "b_i", "b_f", "b_g", "b_o"};
    case CellKind::GRU: return {"W_r", "W_z", "W_x", "b_r", "b_z", "b_x"};
    case CellKind::ONLSTM:
      return {"W_f", "W_i", "W_o", "W_c", "W_mf", "W_mi", "b_f", "b_i", "b_o", "b_c", "b_mf", "b_mi"};
    case CellKind::DRNN: return {"W", "U", "b", "a"};
  }
  return {};
}

real CellParams::alpha() const { return sigmoid(p[slot::kA].value[0]); }

CellParams make_cell_params(CellKind kind, std::size_t hidden, std::size_t input) {
  if (hidden == 0 || input == 0) throw std::invalid_argument("cell sizes must be positive");
  CellParams cp;
  cp.kind = kind;
  cp.hidden = hidden;
  cp.input = input;
  if (kind == CellKind::DRNN) {
    cp.p.emplace_back(Matrix(hidden, hidden));
    cp.p.emplace_back(Matrix(hidden, input));
    cp.p.emplace_back(Matrix(1, hidden));
    cp.p.emplace_back(Matrix(1, 1));
    cp.dale.assign(hidden, 1);
    return cp;
  }
  const std::size_t g = gate_count(kind);
  for (std::size_t k = 0; k < g; ++k) cp.p.emplace_back(Matrix(hidden, hidden + input));
  for (std::size_t k = 0; k < g; ++k) cp.p.emplace_back(Matrix(1, hidden));
  return cp;
}

CellState CellState::zeros(CellKind kind, std::size_t hidden) {
  CellState s;
  s.h = Matrix(1, hidden);
  if (has_cell_vector(kind)) s.c = Matrix(1, hidden);
  return s;
}

CellGrads make_cell_grads(const CellParams& params) {
  CellGrads g;
  g.reserve(params.p.size());
  for (const Parameter& p : params.p) g.emplace_back(p.value.rows(), p.value.cols());
  return g;
}

OnlstmGates onlstm_master_gates(const StepCache& cache) {
  if (cache.kind != CellKind::ONLSTM) throw ContractError("onlstm_master_gates: cache is not from an ONLSTM step");
  return {cache.gates[4], cache.gates[5]};
}

namespace {

using Vec = std::vector<real>;

// pre = W z + b
Vec affine(const Matrix& w, const Matrix& b, std::span<const real> z) {
  Vec out(b.data());
  gemv_acc(w, z, out);
  return out;
}

void apply_sigmoid(Vec& v) {
  for (real& x : v) x = sigmoid(x);
}
void apply_tanh(Vec& v) {
  for (real& x : v) x = std::tanh(x);
}

// Gradient through y = cumsum(s), s = softmax(a): dy -> da.
Vec cumax_backward(std::span<const real> soft, std::span<const real> dy) {
  const std::size_t n = soft.size();
  Vec ds(n);
  real acc = 0;
  for (std::size_t k = n; k-- > 0;) {
    acc += dy[k];
    ds[k] = acc;
  }
  const real inner = dot(ds, soft);
  Vec da(n);
  for (std::size_t k = 0; k < n; ++k) da[k] = soft[k] * (ds[k] - inner);
  return da;
}

Vec cumsum_of(const Vec& soft) {
  Vec out(soft.size());
  real acc = 0;
  for (std::size_t k = 0; k < soft.size(); ++k) {
    acc += soft[k];
    out[k] = acc;
  }
  // Same clamping as cumax_inplace.
  for (real& x : out) x = std::clamp<real>(x, std::numeric_limits<real>::min(), 1);
  if (!out.empty()) out.back() = 1;
  return out;
}

void check_input(const CellParams& params, const CellState& state, std::span<const real> x) {
  if (x.size() != params.input) {
    throw DimensionError("cell_forward: input has " + std::to_string(x.size()) + " values, cell expects " +
                         std::to_string(params.input));
  }
  if (state.h.size() != params.hidden) {
    throw DimensionError("cell_forward: hidden state " + state.h.shape_str() + ", cell hidden size " +
                         std::to_string(params.hidden));
  }
  if (has_cell_vector(params.kind) && state.c.size() != params.hidden) {
    throw DimensionError("cell_forward: cell vector " + state.c.shape_str() + ", cell hidden size " +
                         std::to_string(params.hidden));
  }
}

}  // namespace

void cell_forward_into(const CellParams& params, const CellState& state, std::span<const real> x,
                       CellState& next, StepCache& cache) {
  check_input(params, state, x);
  const std::size_t H = params.hidden;
  cache.kind = params.kind;
  cache.owner = &params;
  cache.revision = params.revision;
  cache.h_prev.assign(state.h.span().begin(), state.h.span().end());
  cache.x.assign(x.begin(), x.end());
  cache.z.resize(H + params.input);
  std::copy(cache.h_prev.begin(), cache.h_prev.end(), cache.z.begin());
  std::copy(x.begin(), x.end(), cache.z.begin() + static_cast<std::ptrdiff_t>(H));
  cache.gates.clear();
  cache.aux.clear();

  next.h = Matrix(1, H);
  auto h_out = next.h.span();

  switch (params.kind) {
    case CellKind::LSTM: {
      cache.c_prev.assign(state.c.span().begin(), state.c.span().end());
      Vec i = affine(params[slot::kWi].value, params[slot::kBi].value, cache.z);
      Vec f = affine(params[slot::kWf].value, params[slot::kBf].value, cache.z);
      Vec g = affine(params[slot::kWg].value, params[slot::kBg].value, cache.z);
      Vec o = affine(params[slot::kWo].value, params[slot::kBo].value, cache.z);
      apply_sigmoid(i);
      apply_sigmoid(f);
      apply_tanh(g);
      apply_sigmoid(o);
      cache.c.resize(H);
      cache.tanh_c.resize(H);
      for (std::size_t k = 0; k < H; ++k) {
        cache.c[k] = f[k] * cache.c_prev[k] + i[k] * g[k];
        cache.tanh_c[k] = std::tanh(cache.c[k]);
        h_out[k] = o[k] * cache.tanh_c[k];
      }
      cache.gates = {std::move(i), std::move(f), std::move(g), std::move(o)};
      next.c = Matrix(1, H, cache.c);
      break;
    }
    case CellKind::GRU: {
      Vec r = affine(params[slot::kWr].value, params[slot::kBr].value, cache.z);
      Vec u = affine(params[slot::kWz].value, params[slot::kBz].value, cache.z);
      apply_sigmoid(r);
      apply_sigmoid(u);
      Vec z2 = cache.z;
      for (std::size_t k = 0; k < H; ++k) z2[k] = r[k] * cache.h_prev[k];
      Vec cand = affine(params[slot::kWx].value, params[slot::kBx].value, z2);
      apply_tanh(cand);
      for (std::size_t k = 0; k < H; ++k) h_out[k] = u[k] * cache.h_prev[k] + (1 - u[k]) * cand[k];
      cache.gates = {std::move(r), std::move(u), std::move(cand)};
      cache.aux = {std::move(z2)};
      break;
    }
    case CellKind::ONLSTM: {
      cache.c_prev.assign(state.c.span().begin(), state.c.span().end());
      Vec f = affine(params[slot::kOWf].value, params[slot::kOBf].value, cache.z);
      Vec i = affine(params[slot::kOWi].value, params[slot::kOBi].value, cache.z);
      Vec o = affine(params[slot::kOWo].value, params[slot::kOBo].value, cache.z);
      Vec cand = affine(params[slot::kOWc].value, params[slot::kOBc].value, cache.z);
      Vec soft_f = affine(params[slot::kOWft].value, params[slot::kOBft].value, cache.z);
      Vec soft_i = affine(params[slot::kOWit].value, params[slot::kOBit].value, cache.z);
      apply_sigmoid(f);
      apply_sigmoid(i);
      apply_sigmoid(o);
      apply_tanh(cand);
      softmax_inplace(soft_f);
      softmax_inplace(soft_i);
      Vec mf = cumsum_of(soft_f);
      Vec mi = cumsum_of(soft_i);
      for (real& v : mi) v = 1 - v;
      Vec omega(H), fhat(H), ihat(H);
      cache.c.resize(H);
      cache.tanh_c.resize(H);
      for (std::size_t k = 0; k < H; ++k) {
        omega[k] = mf[k] * mi[k];
        fhat[k] = f[k] * omega[k] + (mf[k] - omega[k]);
        ihat[k] = i[k] * omega[k] + (mi[k] - omega[k]);
        cache.c[k] = fhat[k] * cache.c_prev[k] + ihat[k] * cand[k];
        cache.tanh_c[k] = std::tanh(cache.c[k]);
        h_out[k] = o[k] * cache.tanh_c[k];
      }
      cache.gates = {std::move(f), std::move(i), std::move(o), std::move(cand), std::move(mf), std::move(mi)};
      cache.aux = {std::move(soft_f), std::move(soft_i), std::move(omega), std::move(fhat), std::move(ihat)};
      next.c = Matrix(1, H, cache.c);
      break;
    }
    case CellKind::DRNN: {
      const Matrix& w = params[slot::kW].value;
      const real alpha = params.alpha();
      Vec scaled(H);
      for (std::size_t j = 0; j < H; ++j) scaled[j] = params.dale[j] * cache.h_prev[j];
      Vec c(params[slot::kB].value.data());
      gemv_acc(params[slot::kU].value, x, c);
      for (std::size_t r = 0; r < H; ++r) {
        const real* wr = w.row_span(r).data();
        real s = 0;
        for (std::size_t j = 0; j < H; ++j) s += (wr[j] > 0 ? wr[j] : 0) * scaled[j];
        c[r] += s;
      }
      for (std::size_t k = 0; k < H; ++k) h_out[k] = std::tanh(alpha * cache.h_prev[k] + (1 - alpha) * c[k]);
      cache.aux = {std::move(c), std::move(scaled)};
      break;
    }
  }
  cache.h.assign(h_out.begin(), h_out.end());
}

std::pair<CellState, StepCache> cell_forward(const CellParams& params, const CellState& state, const Matrix& x) {
  CellState next;
  StepCache cache;
  cell_forward_into(params, state, x.span(), next, cache);
  return {std::move(next), std::move(cache)};
}

namespace {

// Accumulates dW += da z^T, db += da, dz += W^T da for one gate.
void gate_backward(const CellParams& params, std::size_t w_slot, std::size_t b_slot, std::span<const real> da,
                   std::span<const real> z, CellGrads& grads, std::span<real> dz) {
  ger_acc(grads[w_slot], da, z);
  auto db = grads[b_slot].span();
  for (std::size_t k = 0; k < da.size(); ++k) db[k] += da[k];
  gemv_t_acc(params[w_slot].value, da, dz);
}

void split_dz(std::span<const real> dz, std::size_t hidden, CellBackward& out) {
  out.dh_prev.assign(dz.begin(), dz.begin() + static_cast<std::ptrdiff_t>(hidden));
  out.dx.assign(dz.begin() + static_cast<std::ptrdiff_t>(hidden), dz.end());
}

}  // namespace

CellBackward cell_backward(const CellParams& params, const StepCache& cache, std::span<const real> dh,
                           std::span<const real> dc, CellGrads& grads) {
  if (cache.owner != &params || cache.kind != params.kind || cache.revision != params.revision) {
    throw ContractError("cell_backward: cache does not come from the current state of these parameters");
  }
  const std::size_t H = params.hidden;
  if (dh.size() != H) throw DimensionError("cell_backward: dh has wrong size");
  if (grads.size() != params.p.size()) throw DimensionError("cell_backward: gradient buffer mismatch");
  const bool cell_vec = has_cell_vector(params.kind);
  if (cell_vec && !dc.empty() && dc.size() != H) throw DimensionError("cell_backward: dc has wrong size");

  CellBackward out;
  Vec dz(H + params.input, 0);

  switch (params.kind) {
    case CellKind::LSTM: {
      const Vec &i = cache.gates[0], &f = cache.gates[1], &g = cache.gates[2], &o = cache.gates[3];
      Vec da_i(H), da_f(H), da_g(H), da_o(H);
      out.dc_prev.resize(H);
      for (std::size_t k = 0; k < H; ++k) {
        const real tc = cache.tanh_c[k];
        const real dct = (dc.empty() ? 0 : dc[k]) + dh[k] * o[k] * (1 - tc * tc);
        da_o[k] = dh[k] * tc * o[k] * (1 - o[k]);
        da_f[k] = dct * cache.c_prev[k] * f[k] * (1 - f[k]);
        da_i[k] = dct * g[k] * i[k] * (1 - i[k]);
        da_g[k] = dct * i[k] * (1 - g[k] * g[k]);
        out.dc_prev[k] = dct * f[k];
      }
      gate_backward(params, slot::kWi, slot::kBi, da_i, cache.z, grads, dz);
      gate_backward(params, slot::kWf, slot::kBf, da_f, cache.z, grads, dz);
      gate_backward(params, slot::kWg, slot::kBg, da_g, cache.z, grads, dz);
      gate_backward(params, slot::kWo, slot::kBo, da_o, cache.z, grads, dz);
      split_dz(dz, H, out);
      break;
    }
    case CellKind::GRU: {
      const Vec &r = cache.gates[0], &u = cache.gates[1], &cand = cache.gates[2];
      const Vec& z2 = cache.aux[0];
      Vec da_x(H), da_r(H), da_u(H);
      Vec dh_prev(H);
      for (std::size_t k = 0; k < H; ++k) {
        da_u[k] = dh[k] * (cache.h_prev[k] - cand[k]) * u[k] * (1 - u[k]);
        da_x[k] = dh[k] * (1 - u[k]) * (1 - cand[k] * cand[k]);
        dh_prev[k] = dh[k] * u[k];
      }
      Vec dz2(H + params.input, 0);
      gate_backward(params, slot::kWx, slot::kBx, da_x, z2, grads, dz2);
      for (std::size_t k = 0; k < H; ++k) {
        da_r[k] = dz2[k] * cache.h_prev[k] * r[k] * (1 - r[k]);
        dh_prev[k] += dz2[k] * r[k];
      }
      gate_backward(params, slot::kWr, slot::kBr, da_r, cache.z, grads, dz);
      gate_backward(params, slot::kWz, slot::kBz, da_u, cache.z, grads, dz);
      out.dh_prev.resize(H);
      for (std::size_t k = 0; k < H; ++k) out.dh_prev[k] = dz[k] + dh_prev[k];
      out.dx.resize(params.input);
      for (std::size_t k = 0; k < params.input; ++k) out.dx[k] = dz[H + k] + dz2[H + k];
      break;
    }
    case CellKind::ONLSTM: {
      const Vec &f = cache.gates[0], &i = cache.gates[1], &o = cache.gates[2], &cand = cache.gates[3];
      const Vec &mf = cache.gates[4], &mi = cache.gates[5];
      const Vec &soft_f = cache.aux[0], &soft_i = cache.aux[1], &omega = cache.aux[2];
      const Vec &fhat = cache.aux[3], &ihat = cache.aux[4];
      Vec da_f(H), da_i(H), da_o(H), da_c(H), dmf(H), dmi_cum(H);
      out.dc_prev.resize(H);
      for (std::size_t k = 0; k < H; ++k) {
        const real tc = cache.tanh_c[k];
        const real dct = (dc.empty() ? 0 : dc[k]) + dh[k] * o[k] * (1 - tc * tc);
        da_o[k] = dh[k] * tc * o[k] * (1 - o[k]);
        const real dfhat = dct * cache.c_prev[k];
        const real dihat = dct * cand[k];
        da_c[k] = dct * ihat[k] * (1 - cand[k] * cand[k]);
        out.dc_prev[k] = dct * fhat[k];
        da_f[k] = dfhat * omega[k] * f[k] * (1 - f[k]);
        da_i[k] = dihat * omega[k] * i[k] * (1 - i[k]);
        const real domega = dfhat * (f[k] - 1) + dihat * (i[k] - 1);
        dmf[k] = dfhat + domega * mi[k];
        // i~ = 1 - cumax(.), so the cumax sees the negated gradient.
        dmi_cum[k] = -(dihat + domega * mf[k]);
      }
      Vec da_ft = cumax_backward(soft_f, dmf);
      Vec da_it = cumax_backward(soft_i, dmi_cum);
      gate_backward(params, slot::kOWf, slot::kOBf, da_f, cache.z, grads, dz);
      gate_backward(params, slot::kOWi, slot::kOBi, da_i, cache.z, grads, dz);
      gate_backward(params, slot::kOWo, slot::kOBo, da_o, cache.z, grads, dz);
      gate_backward(params, slot::kOWc, slot::kOBc, da_c, cache.z, grads, dz);
      gate_backward(params, slot::kOWft, slot::kOBft, da_ft, cache.z, grads, dz);
      gate_backward(params, slot::kOWit, slot::kOBit, da_it, cache.z, grads, dz);
      split_dz(dz, H, out);
      break;
    }
    case CellKind::DRNN: {
      const Matrix& w = params[slot::kW].value;
      const Vec& c = cache.aux[0];
      const Vec& scaled = cache.aux[1];
      const real alpha = params.alpha();
      Vec dpre(H), dcv(H);
      real dalpha = 0;
      for (std::size_t k = 0; k < H; ++k) {
        dpre[k] = dh[k] * (1 - cache.h[k] * cache.h[k]);
        dalpha += dpre[k] * (cache.h_prev[k] - c[k]);
        dcv[k] = (1 - alpha) * dpre[k];
      }
      grads[slot::kA][0] += dalpha * alpha * (1 - alpha);
      auto db = grads[slot::kB].span();
      for (std::size_t k = 0; k < H; ++k) db[k] += dcv[k];
      ger_acc(grads[slot::kU], dcv, cache.x);
      out.dx.assign(params.input, 0);
      gemv_t_acc(params[slot::kU].value, dcv, out.dx);
      // Recurrent path through ReLU(W) * diag(dale).
      out.dh_prev.resize(H);
      Vec dscaled(H, 0);
      Matrix& dw = grads[slot::kW];
      for (std::size_t r = 0; r < H; ++r) {
        const real* wr = w.row_span(r).data();
        real* dwr = dw.row_span(r).data();
        const real dr = dcv[r];
        for (std::size_t j = 0; j < H; ++j) {
          if (wr[j] > 0) {
            dwr[j] += dr * scaled[j];
            dscaled[j] += wr[j] * dr;
          }
        }
      }
      for (std::size_t k = 0; k < H; ++k) out.dh_prev[k] = alpha * dpre[k] + params.dale[k] * dscaled[k];
      break;
    }
  }
  return out;
}

// ---------------------------------------------------------------- model

std::vector<Parameter*> StackedModel::parameters() {
  std::vector<Parameter*> out{&embedding};
  for (CellParams& l : layers)
    for (Parameter& p : l.p) out.push_back(&p);
  out.push_back(&output);
  out.push_back(&output_bias);
  return out;
}

std::vector<const Parameter*> StackedModel::parameters() const {
  std::vector<const Parameter*> out{&embedding};
  for (const CellParams& l : layers)
    for (const Parameter& p : l.p) out.push_back(&p);
  out.push_back(&output);
  out.push_back(&output_bias);
  return out;
}

std::size_t StackedModel::parameter_count() const {
  std::size_t n = 0;
  for (const Parameter* p : parameters()) n += p->value.size();
  return n;
}

void StackedModel::zero_grad() {
  for (Parameter* p : parameters()) p->zero_grad();
}

void StackedModel::bump_revision() {
  for (CellParams& l : layers) ++l.revision;
}

StackedModel init_model(CellKind kind, Head head, const ModelSizes& sizes, std::uint64_t seed,
                        const InitOptions& opts) {
  if (sizes.vocab == 0 || sizes.embed == 0 || sizes.hidden == 0 || sizes.layers == 0) {
    throw std::invalid_argument("init_model: sizes must be positive");
  }
  if (!(opts.dropout >= 0 && opts.dropout < 1)) throw std::invalid_argument("init_model: dropout must be in [0,1)");
  if (!(opts.excitatory_fraction >= 0 && opts.excitatory_fraction <= 1)) {
    throw std::invalid_argument("init_model: excitatory fraction must be in [0,1]");
  }
  StackedModel m;
  m.kind = kind;
  m.head = head;
  m.sizes = sizes;
  m.seed = seed;
  m.dropout = opts.dropout;
  m.excitatory_fraction = opts.excitatory_fraction;

  std::mt19937_64 rng(seed);
  const real bound = 1 / std::sqrt(static_cast<real>(sizes.hidden));
  std::uniform_real_distribution<real> uni(-bound, bound);
  auto fill = [&](Matrix& mat) {
    for (real& v : mat.span()) v = uni(rng);
  };

  m.embedding = Parameter(Matrix(sizes.vocab, sizes.embed));
  fill(m.embedding.value);
  for (std::size_t l = 0; l < sizes.layers; ++l) {
    CellParams cp = make_cell_params(kind, sizes.hidden, l == 0 ? sizes.embed : sizes.hidden);
    for (std::size_t k = 0; k < cp.p.size(); ++k) {
      if (kind == CellKind::DRNN && k == slot::kA) continue;  // a = 0, alpha = 0.5
      fill(cp.p[k].value);
    }
    if (kind == CellKind::DRNN) {
      const auto excit = static_cast<std::size_t>(
          std::ceil(opts.excitatory_fraction * static_cast<real>(sizes.hidden) - 1e-9));
      for (std::size_t j = 0; j < sizes.hidden; ++j) cp.dale[j] = j < excit ? 1 : -1;
    }
    m.layers.push_back(std::move(cp));
  }
  const std::size_t out_dim = m.output_dim();
  m.output = Parameter(Matrix(sizes.hidden, out_dim));
  fill(m.output.value);
  m.output_bias = Parameter(Matrix(1, out_dim));
  fill(m.output_bias.value);
  return m;
}

ModelGrads make_model_grads(const StackedModel& model) {
  ModelGrads g;
  g.embedding = Matrix(model.embedding.value.rows(), model.embedding.value.cols());
  for (const CellParams& l : model.layers) g.layers.push_back(make_cell_grads(l));
  g.output = Matrix(model.output.value.rows(), model.output.value.cols());
  g.output_bias = Matrix(model.output_bias.value.rows(), model.output_bias.value.cols());
  return g;
}

void ModelGrads::zero() {
  embedding.fill(0);
  for (CellGrads& l : layers)
    for (Matrix& m : l) m.fill(0);
  output.fill(0);
  output_bias.fill(0);
}

namespace {
void axpy(std::span<real> y, std::span<const real> x, real scale) {
  for (std::size_t i = 0; i < y.size(); ++i) y[i] += scale * x[i];
}
}  // namespace

void ModelGrads::add_to(StackedModel& model, real scale) const {
  axpy(model.embedding.grad.span(), embedding.span(), scale);
  for (std::size_t l = 0; l < layers.size(); ++l)
    for (std::size_t k = 0; k < layers[l].size(); ++k) axpy(model.layers[l].p[k].grad.span(), layers[l][k].span(), scale);
  axpy(model.output.grad.span(), output.span(), scale);
  axpy(model.output_bias.grad.span(), output_bias.span(), scale);
}

void ModelGrads::add(const ModelGrads& other) {
  axpy(embedding.span(), other.embedding.span(), 1);
  for (std::size_t l = 0; l < layers.size(); ++l)
    for (std::size_t k = 0; k < layers[l].size(); ++k) axpy(layers[l][k].span(), other.layers[l][k].span(), 1);
  axpy(output.span(), other.output.span(), 1);
  axpy(output_bias.span(), other.output_bias.span(), 1);
}

SequenceTrace forward_sequence(const StackedModel& model, std::span<const std::size_t> tokens, Mode mode,
                               std::uint64_t mask_seed) {
  if (tokens.empty()) throw std::invalid_argument("run_sequence: empty sequence");
  const std::size_t V = model.sizes.vocab;
  for (std::size_t t : tokens)
    if (t >= V) throw IndexError("run_sequence: token id " + std::to_string(t) + " >= vocab size " + std::to_string(V));

  const std::size_t T = tokens.size();
  const std::size_t L = model.layers.size();
  const std::size_t H = model.sizes.hidden;
  const bool drop = mode == Mode::Train && model.dropout > 0;
  const real keep_scale = drop ? 1 / (1 - model.dropout) : 1;

  SequenceTrace tr;
  tr.tokens.assign(tokens.begin(), tokens.end());
  tr.steps.assign(L, std::vector<StepCache>(T));
  tr.masks.assign(L, {});
  tr.top_hidden.resize(T);

  std::mt19937_64 rng(mask_seed);
  std::bernoulli_distribution keep(1 - model.dropout);

  std::vector<CellState> states;
  for (std::size_t l = 0; l < L; ++l) states.push_back(CellState::zeros(model.kind, H));
  if (drop)
    for (auto& m : tr.masks) m.resize(T);

  std::vector<real> input;
  CellState next;
  for (std::size_t t = 0; t < T; ++t) {
    auto emb = model.embedding.value.row_span(tokens[t]);
    input.assign(emb.begin(), emb.end());
    for (std::size_t l = 0; l < L; ++l) {
      if (drop) {
        auto& mask = tr.masks[l][t];
        mask.resize(input.size());
        for (std::size_t k = 0; k < input.size(); ++k) {
          mask[k] = keep(rng) ? keep_scale : 0;
          input[k] *= mask[k];
        }
      }
      cell_forward_into(model.layers[l], states[l], input, next, tr.steps[l][t]);
      states[l] = std::move(next);
      input.assign(states[l].h.span().begin(), states[l].h.span().end());
    }
    tr.top_hidden[t] = input;
  }

  const std::size_t out_dim = model.output_dim();
  if (model.head == Head::LanguageModel) {
    tr.logits = Matrix(T, out_dim);
    for (std::size_t t = 0; t < T; ++t) {
      auto row = tr.logits.row_span(t);
      std::copy(model.output_bias.value.span().begin(), model.output_bias.value.span().end(), row.begin());
      gemv_t_acc(model.output.value, tr.top_hidden[t], row);
    }
  } else {
    tr.logits = Matrix(1, 1);
    tr.logits[0] = model.output_bias.value[0] + dot(model.output.value.span(), tr.top_hidden[T - 1]);
  }
  for (const CellState& s : states) tr.final_hidden.push_back(s.h);
  return tr;
}

SequenceOutput run_sequence(const StackedModel& model, std::span<const std::size_t> tokens, Mode mode,
                            std::uint64_t mask_seed) {
  SequenceTrace tr = forward_sequence(model, tokens, mode, mask_seed);
  return {std::move(tr.logits), std::move(tr.final_hidden)};
}

void backward_sequence(const StackedModel& model, const SequenceTrace& trace, const Matrix& dlogits,
                       ModelGrads& grads) {
  if (!dlogits.same_shape(trace.logits)) {
    throw DimensionError("backward_sequence: dlogits " + dlogits.shape_str() + " vs logits " + trace.logits.shape_str());
  }
  const std::size_t T = trace.tokens.size();
  const std::size_t L = model.layers.size();
  const std::size_t H = model.sizes.hidden;

  // Gradient arriving at each step's top hidden state from the head.
  std::vector<std::vector<real>> from_above(T, std::vector<real>(H, 0));
  if (model.head == Head::LanguageModel) {
    for (std::size_t t = 0; t < T; ++t) {
      auto dl = dlogits.row_span(t);
      gemv_acc(model.output.value, dl, from_above[t]);
      ger_acc(grads.output, trace.top_hidden[t], dl);
      auto db = grads.output_bias.span();
      for (std::size_t v = 0; v < dl.size(); ++v) db[v] += dl[v];
    }
  } else {
    const real d = dlogits[0];
    auto w = model.output.value.span();
    for (std::size_t k = 0; k < H; ++k) from_above[T - 1][k] = d * w[k];
    auto dw = grads.output.span();
    for (std::size_t k = 0; k < H; ++k) dw[k] += d * trace.top_hidden[T - 1][k];
    grads.output_bias[0] += d;
  }

  const bool cell_vec = has_cell_vector(model.kind);
  for (std::size_t l = L; l-- > 0;) {
    const CellParams& cp = model.layers[l];
    std::vector<real> dh_next(H, 0), dc_next(cell_vec ? H : 0, 0), dh(H);
    std::vector<std::vector<real>> to_below(T);
    for (std::size_t t = T; t-- > 0;) {
      for (std::size_t k = 0; k < H; ++k) dh[k] = from_above[t][k] + dh_next[k];
      CellBackward b = cell_backward(cp, trace.steps[l][t], dh, dc_next, grads.layers[l]);
      dh_next = std::move(b.dh_prev);
      if (cell_vec) dc_next = std::move(b.dc_prev);
      if (!trace.masks[l].empty()) {
        const auto& mask = trace.masks[l][t];
        for (std::size_t k = 0; k < b.dx.size(); ++k) b.dx[k] *= mask[k];
      }
      to_below[t] = std::move(b.dx);
    }
    if (l > 0) {
      from_above = std::move(to_below);
    } else {
      for (std::size_t t = 0; t < T; ++t) {
        auto row = grads.embedding.row_span(trace.tokens[t]);
        for (std::size_t k = 0; k < row.size(); ++k) row[k] += to_below[t][k];
      }
    }
  }
}

real lm_loss(const Matrix& logits, std::span<const std::size_t> tokens, std::size_t eos, Matrix* dlogits) {
  const std::size_t T = tokens.size();
  if (logits.rows() != T) throw DimensionError("lm_loss: logits rows must equal sequence length");
  if (dlogits) *dlogits = Matrix(logits.rows(), logits.cols());
  real total = 0;
  std::vector<real> prob;
  for (std::size_t t = 0; t < T; ++t) {
    const std::size_t target = t + 1 < T ? tokens[t + 1] : eos;
    auto row = logits.row_span(t);
    total += cross_entropy(row, target);
    if (dlogits) {
      prob.assign(row.begin(), row.end());
      softmax_inplace(prob);
      auto d = dlogits->row_span(t);
      for (std::size_t v = 0; v < prob.size(); ++v) d[v] = prob[v];
      d[target] -= 1;
    }
  }
  return total;
}

real classifier_loss(const Matrix& logits, int label, Matrix* dlogits) {
  if (logits.size() != 1) throw DimensionError("classifier_loss: expected a single logit");
  const real z = logits[0];
  const real y = label ? 1 : 0;
  // softplus(z) - y z, stable for large |z|.
  const real softplus = z > 0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z));
  if (dlogits) *dlogits = Matrix(1, 1, sigmoid(z) - y);
  return softplus - y * z;
}

}  // namespace sva
