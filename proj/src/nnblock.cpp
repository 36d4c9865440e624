#include "scalevec/nnblock.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numeric>

#include "scalevec/error.hpp"
#include "scalevec/rng.hpp"

namespace scalevec {

namespace {

constexpr std::size_t kNone = static_cast<std::size_t>(-1);

enum Branch : std::size_t { kQ = 0, kK, kV, kGate, kUp, kBranches };

constexpr std::array<const char*, kBranches> kMatrixName = {"W_Q", "W_K", "W_V", "W_gate", "W_up"};
constexpr std::array<const char*, kBranches> kInName = {"q_in", "k_in", "v_in", "gate_in", "up_in"};
constexpr std::array<const char*, kBranches> kOutName = {"q_out", "k_out", "v_out", "gate_out", "up_out"};

bool has_output_side(Placement p) { return p != Placement::Standard; }
bool has_input_side(Placement p) { return p != Placement::AP; }

std::string in_slot_name(const BlockConfig& c, std::size_t b) {
  if (c.heterogeneous) return kInName[b];
  return b < kGate ? "attn_norm" : "ffn_norm";
}

struct Slot {
  std::string name;
  std::size_t dim = 0;
  NormRole role = NormRole::InputNorm;
  std::size_t first = kNone;   // gamma or alpha
  std::size_t second = kNone;  // beta
};

struct Layout {
  std::array<std::size_t, kBranches> matrix{};
  std::size_t w_o = 0;
  std::size_t w_down = 0;
  std::vector<Slot> slots;
  std::array<std::size_t, kBranches> in_slot{};
  std::array<std::size_t, kBranches> out_slot{};
};

struct SlotDecl {
  std::string name;
  std::size_t dim;
  NormRole role;
};

std::vector<SlotDecl> slot_decls(const BlockConfig& c) {
  std::vector<SlotDecl> out;
  if (has_input_side(c.placement)) {
    for (std::size_t b = 0; b < kBranches; ++b) {
      const std::string name = in_slot_name(c, b);
      if (std::none_of(out.begin(), out.end(), [&](const SlotDecl& s) { return s.name == name; })) {
        out.push_back({name, c.d_model, NormRole::InputNorm});
      }
    }
  }
  if (has_output_side(c.placement)) {
    for (std::size_t b = 0; b < kBranches; ++b) {
      out.push_back({kOutName[b], b < kGate ? c.d_model : c.d_ffn, NormRole::OutputNorm});
    }
  }
  return out;
}

Layout make_layout(const BlockParams& p) {
  Layout l;
  for (std::size_t b = 0; b < kBranches; ++b) l.matrix[b] = p.index(kMatrixName[b]);
  l.w_o = p.index("W_O");
  l.w_down = p.index("W_down");
  l.in_slot.fill(kNone);
  l.out_slot.fill(kNone);
  for (const SlotDecl& d : slot_decls(p.config)) {
    Slot s{d.name, d.dim, d.role};
    if (p.config.reparam == Reparam::None) {
      s.first = p.index(d.name + ".gamma");
    } else {
      s.first = p.index(d.name + ".alpha");
      s.second = p.index(d.name + ".beta");
    }
    l.slots.push_back(s);
  }
  auto find = [&](const std::string& name) {
    for (std::size_t i = 0; i < l.slots.size(); ++i)
      if (l.slots[i].name == name) return i;
    return kNone;
  };
  for (std::size_t b = 0; b < kBranches; ++b) {
    if (has_input_side(p.config.placement)) l.in_slot[b] = find(in_slot_name(p.config, b));
    if (has_output_side(p.config.placement)) l.out_slot[b] = find(kOutName[b]);
  }
  return l;
}

Vector slot_value(const BlockParams& p, const Slot& s) {
  const Vector& a = p.values[s.first];
  switch (p.config.reparam) {
    case Reparam::None: return a;
    case Reparam::OR: {
      Vector g = sphere_normalize(a);
      const double beta = p.values[s.second][0];
      for (double& x : g) x *= beta;
      return g;
    }
    case Reparam::ER: {
      const double mean = std::accumulate(a.begin(), a.end(), 0.0) / static_cast<double>(a.size());
      const double beta = p.values[s.second][0];
      Vector g(a.size());
      for (std::size_t k = 0; k < a.size(); ++k) g[k] = std::exp(beta + a[k] - mean);
      return g;
    }
  }
  return {};
}

// Pulls a gradient on the effective vector back to the slot's raw parameters.
void slot_backward(const BlockParams& p, const Slot& s, const Vector& g_gamma,
                   std::vector<Vector>& grads) {
  const Vector& a = p.values[s.first];
  const std::size_t d = a.size();
  Vector& ga = grads[s.first];
  switch (p.config.reparam) {
    case Reparam::None:
      for (std::size_t k = 0; k < d; ++k) ga[k] += g_gamma[k];
      return;
    case Reparam::OR: {
      const double beta = p.values[s.second][0];
      const double an = norm(a);
      const Vector q = sphere_normalize(a);
      const double along = dot(a, g_gamma) / an;
      const double gain = beta * std::sqrt(static_cast<double>(d)) / an;
      grads[s.second][0] += dot(q, g_gamma);
      for (std::size_t k = 0; k < d; ++k) ga[k] += gain * (g_gamma[k] - along * a[k] / an);
      return;
    }
    case Reparam::ER: {
      const Vector g = slot_value(p, s);
      double total = 0.0;
      for (std::size_t k = 0; k < d; ++k) total += g_gamma[k] * g[k];
      grads[s.second][0] += total;
      const double inv_d = 1.0 / static_cast<double>(d);
      for (std::size_t k = 0; k < d; ++k) ga[k] += g_gamma[k] * g[k] - inv_d * total;
      return;
    }
  }
}

// Row-wise (or per contiguous group of `group` columns) RMS normalization.
Matrix rms_rows(const Matrix& x, std::size_t group, double eps, Vector& rinv) {
  const std::size_t groups = x.cols() / group;
  Matrix y(x.rows(), x.cols());
  rinv.assign(x.rows() * groups, 0.0);
  for (std::size_t t = 0; t < x.rows(); ++t) {
    for (std::size_t g = 0; g < groups; ++g) {
      double ms = 0.0;
      for (std::size_t c = g * group; c < (g + 1) * group; ++c) ms += x(t, c) * x(t, c);
      const double r = 1.0 / std::sqrt(ms / static_cast<double>(group) + eps);
      rinv[t * groups + g] = r;
      for (std::size_t c = g * group; c < (g + 1) * group; ++c) y(t, c) = x(t, c) * r;
    }
  }
  return y;
}

Matrix rms_rows_backward(const Matrix& x, const Vector& rinv, std::size_t group, const Matrix& gy) {
  const std::size_t groups = x.cols() / group;
  Matrix gx(x.rows(), x.cols());
  for (std::size_t t = 0; t < x.rows(); ++t) {
    for (std::size_t g = 0; g < groups; ++g) {
      const double r = rinv[t * groups + g];
      double xg = 0.0;
      for (std::size_t c = g * group; c < (g + 1) * group; ++c) xg += x(t, c) * gy(t, c);
      const double coef = r * r * r * xg / static_cast<double>(group);
      for (std::size_t c = g * group; c < (g + 1) * group; ++c) gx(t, c) = r * gy(t, c) - coef * x(t, c);
    }
  }
  return gx;
}

// x (T x D) times W^T, W stored (O x D) row-major in w.
Matrix linear(const Matrix& x, const Vector& w, std::size_t out) {
  const std::size_t in = x.cols();
  Matrix z(x.rows(), out);
  for (std::size_t t = 0; t < x.rows(); ++t) {
    const auto xr = x.row(t);
    for (std::size_t o = 0; o < out; ++o) {
      const double* wr = w.data() + o * in;
      double s = 0.0;
      for (std::size_t c = 0; c < in; ++c) s += wr[c] * xr[c];
      z(t, o) = s;
    }
  }
  return z;
}

// Accumulates dW += gz^T x and returns gz W.
Matrix linear_backward(const Matrix& x, const Vector& w, const Matrix& gz, Vector& gw) {
  const std::size_t in = x.cols();
  const std::size_t out = gz.cols();
  Matrix gx(x.rows(), in);
  for (std::size_t t = 0; t < x.rows(); ++t) {
    const auto xr = x.row(t);
    auto gxr = gx.row(t);
    for (std::size_t o = 0; o < out; ++o) {
      const double g = gz(t, o);
      if (g == 0.0) continue;
      const double* wr = w.data() + o * in;
      double* gwr = gw.data() + o * in;
      for (std::size_t c = 0; c < in; ++c) {
        gwr[c] += g * xr[c];
        gxr[c] += g * wr[c];
      }
    }
  }
  return gx;
}

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

struct BranchCache {
  Matrix xn;  // normalized branch input
  Matrix h;   // input to W
  Matrix z;   // W h
  Matrix zn;  // after DNP normalization (copy of z otherwise)
  Vector rinv;
  Matrix out;
  Vector g_in;   // effective input-side scale (empty if none)
  Vector g_out;  // effective output-side scale (empty if none)
};

std::size_t branch_out_dim(const BlockConfig& c, std::size_t b) { return b < kGate ? c.d_model : c.d_ffn; }
std::size_t branch_group(const BlockConfig& c, std::size_t b) { return b < kGate ? c.d_head() : c.d_ffn; }

BranchCache branch_forward(const BlockParams& p, const Layout& l, std::size_t b, const Matrix& xn) {
  const BlockConfig& c = p.config;
  BranchCache bc;
  bc.xn = xn;
  bc.h = xn;
  if (l.in_slot[b] != kNone) {
    bc.g_in = slot_value(p, l.slots[l.in_slot[b]]);
    for (std::size_t t = 0; t < xn.rows(); ++t)
      for (std::size_t k = 0; k < xn.cols(); ++k) bc.h(t, k) *= bc.g_in[k];
  }
  bc.z = linear(bc.h, p.values[l.matrix[b]], branch_out_dim(c, b));
  bc.zn = c.placement == Placement::DNP ? rms_rows(bc.z, branch_group(c, b), c.rms_eps, bc.rinv) : bc.z;
  bc.out = bc.zn;
  if (l.out_slot[b] != kNone) {
    bc.g_out = slot_value(p, l.slots[l.out_slot[b]]);
    for (std::size_t t = 0; t < bc.out.rows(); ++t)
      for (std::size_t k = 0; k < bc.out.cols(); ++k) bc.out(t, k) *= bc.g_out[k];
  }
  return bc;
}

// Returns the gradient with respect to the normalized input xn.
Matrix branch_backward(const BlockParams& p, const Layout& l, std::size_t b, const BranchCache& bc,
                       const Matrix& g_out, std::vector<Vector>& grads) {
  const BlockConfig& c = p.config;
  Matrix g_zn = g_out;
  if (l.out_slot[b] != kNone) {
    Vector g_gamma(bc.g_out.size(), 0.0);
    for (std::size_t t = 0; t < g_out.rows(); ++t)
      for (std::size_t k = 0; k < g_out.cols(); ++k) {
        g_gamma[k] += g_out(t, k) * bc.zn(t, k);
        g_zn(t, k) *= bc.g_out[k];
      }
    slot_backward(p, l.slots[l.out_slot[b]], g_gamma, grads);
  }
  const Matrix g_z = c.placement == Placement::DNP
                         ? rms_rows_backward(bc.z, bc.rinv, branch_group(c, b), g_zn)
                         : g_zn;
  Matrix g_h = linear_backward(bc.h, p.values[l.matrix[b]], g_z, grads[l.matrix[b]]);
  if (l.in_slot[b] != kNone) {
    Vector g_gamma(bc.g_in.size(), 0.0);
    for (std::size_t t = 0; t < g_h.rows(); ++t)
      for (std::size_t k = 0; k < g_h.cols(); ++k) {
        g_gamma[k] += g_h(t, k) * bc.xn(t, k);
        g_h(t, k) *= bc.g_in[k];
      }
    slot_backward(p, l.slots[l.in_slot[b]], g_gamma, grads);
  }
  return g_h;
}

struct AttnCache {
  Matrix xn;
  Vector rinv;
  std::array<BranchCache, 3> br;
  std::vector<Matrix> probs;
  Matrix o;
  Matrix y;
};

struct FfnCache {
  Matrix yn;
  Vector rinv;
  std::array<BranchCache, 2> br;
  Matrix act;
  Matrix hidden;
  Matrix z;
};

AttnCache attn_cached(const BlockParams& p, const Layout& l, const Matrix& x) {
  const BlockConfig& c = p.config;
  if (x.cols() != c.d_model) throw Error(ErrorCode::DimensionMismatch, "token width differs from d_model");
  if (x.rows() == 0) throw Error(ErrorCode::DimensionMismatch, "empty sequence");
  AttnCache ac;
  ac.xn = rms_rows(x, c.d_model, c.rms_eps, ac.rinv);
  for (std::size_t b = kQ; b <= kV; ++b) ac.br[b] = branch_forward(p, l, b, ac.xn);
  const Matrix& q = ac.br[kQ].out;
  const Matrix& k = ac.br[kK].out;
  const Matrix& v = ac.br[kV].out;
  const std::size_t n = x.rows();
  const std::size_t dh = c.d_head();
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  ac.o = Matrix(n, c.d_model);
  ac.probs.assign(c.n_head, Matrix(n, n));
  for (std::size_t h = 0; h < c.n_head; ++h) {
    Matrix& pr = ac.probs[h];
    const std::size_t off = h * dh;
    for (std::size_t t = 0; t < n; ++t) {
      const std::size_t last = c.causal ? t + 1 : n;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t s = 0; s < last; ++s) {
        double sc = 0.0;
        for (std::size_t e = 0; e < dh; ++e) sc += q(t, off + e) * k(s, off + e);
        pr(t, s) = sc * scale;
        mx = std::max(mx, pr(t, s));
      }
      double z = 0.0;
      for (std::size_t s = 0; s < last; ++s) {
        pr(t, s) = std::exp(pr(t, s) - mx);
        z += pr(t, s);
      }
      for (std::size_t s = 0; s < last; ++s) pr(t, s) /= z;
      for (std::size_t s = last; s < n; ++s) pr(t, s) = 0.0;
      for (std::size_t s = 0; s < last; ++s) {
        const double w = pr(t, s);
        for (std::size_t e = 0; e < dh; ++e) ac.o(t, off + e) += w * v(s, off + e);
      }
    }
  }
  ac.y = linear(ac.o, p.values[l.w_o], c.d_model);
  for (std::size_t t = 0; t < n; ++t)
    for (std::size_t e = 0; e < c.d_model; ++e) ac.y(t, e) += x(t, e);
  return ac;
}

FfnCache ffn_cached(const BlockParams& p, const Layout& l, const Matrix& y) {
  const BlockConfig& c = p.config;
  if (y.cols() != c.d_model) throw Error(ErrorCode::DimensionMismatch, "token width differs from d_model");
  FfnCache fc;
  fc.yn = rms_rows(y, c.d_model, c.rms_eps, fc.rinv);
  fc.br[0] = branch_forward(p, l, kGate, fc.yn);
  fc.br[1] = branch_forward(p, l, kUp, fc.yn);
  const Matrix& g = fc.br[0].out;
  const Matrix& u = fc.br[1].out;
  fc.act = Matrix(g.rows(), g.cols());
  fc.hidden = Matrix(g.rows(), g.cols());
  for (std::size_t t = 0; t < g.rows(); ++t)
    for (std::size_t f = 0; f < g.cols(); ++f) {
      fc.act(t, f) = g(t, f) * sigmoid(g(t, f));
      fc.hidden(t, f) = fc.act(t, f) * u(t, f);
    }
  fc.z = linear(fc.hidden, p.values[l.w_down], c.d_model);
  for (std::size_t t = 0; t < y.rows(); ++t)
    for (std::size_t e = 0; e < c.d_model; ++e) fc.z(t, e) += y(t, e);
  return fc;
}

void add_into(Matrix& a, const Matrix& b) {
  for (std::size_t k = 0; k < a.size(); ++k) a.data()[k] += b.data()[k];
}

// Gradient with respect to the FFN input; parameter gradients accumulate.
Matrix ffn_backward(const BlockParams& p, const Layout& l, const Matrix& y, const FfnCache& fc,
                    const Matrix& gz, std::vector<Vector>& grads) {
  Matrix g_hidden = linear_backward(fc.hidden, p.values[l.w_down], gz, grads[l.w_down]);
  const Matrix& g = fc.br[0].out;
  const Matrix& u = fc.br[1].out;
  Matrix g_gate(g.rows(), g.cols());
  Matrix g_up(g.rows(), g.cols());
  for (std::size_t t = 0; t < g.rows(); ++t)
    for (std::size_t f = 0; f < g.cols(); ++f) {
      const double s = sigmoid(g(t, f));
      g_up(t, f) = g_hidden(t, f) * fc.act(t, f);
      g_gate(t, f) = g_hidden(t, f) * u(t, f) * s * (1.0 + g(t, f) * (1.0 - s));
    }
  Matrix g_yn = branch_backward(p, l, kGate, fc.br[0], g_gate, grads);
  add_into(g_yn, branch_backward(p, l, kUp, fc.br[1], g_up, grads));
  Matrix gy = rms_rows_backward(y, fc.rinv, p.config.d_model, g_yn);
  add_into(gy, gz);
  return gy;
}

Matrix attn_backward(const BlockParams& p, const Layout& l, const Matrix& x, const AttnCache& ac,
                     const Matrix& gy, std::vector<Vector>& grads) {
  const BlockConfig& c = p.config;
  const Matrix g_o = linear_backward(ac.o, p.values[l.w_o], gy, grads[l.w_o]);
  const Matrix& q = ac.br[kQ].out;
  const Matrix& k = ac.br[kK].out;
  const Matrix& v = ac.br[kV].out;
  const std::size_t n = x.rows();
  const std::size_t dh = c.d_head();
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  Matrix gq(n, c.d_model), gk(n, c.d_model), gv(n, c.d_model);
  Vector gp(n);
  for (std::size_t h = 0; h < c.n_head; ++h) {
    const Matrix& pr = ac.probs[h];
    const std::size_t off = h * dh;
    for (std::size_t t = 0; t < n; ++t) {
      double inner = 0.0;
      for (std::size_t s = 0; s < n; ++s) {
        double acc = 0.0;
        for (std::size_t e = 0; e < dh; ++e) acc += g_o(t, off + e) * v(s, off + e);
        gp[s] = acc;
        inner += pr(t, s) * acc;
        for (std::size_t e = 0; e < dh; ++e) gv(s, off + e) += pr(t, s) * g_o(t, off + e);
      }
      for (std::size_t s = 0; s < n; ++s) {
        const double gs = pr(t, s) * (gp[s] - inner) * scale;
        if (gs == 0.0) continue;
        for (std::size_t e = 0; e < dh; ++e) {
          gq(t, off + e) += gs * k(s, off + e);
          gk(s, off + e) += gs * q(t, off + e);
        }
      }
    }
  }
  Matrix g_xn = branch_backward(p, l, kQ, ac.br[kQ], gq, grads);
  add_into(g_xn, branch_backward(p, l, kK, ac.br[kK], gk, grads));
  add_into(g_xn, branch_backward(p, l, kV, ac.br[kV], gv, grads));
  Matrix gx = rms_rows_backward(x, ac.rinv, c.d_model, g_xn);
  add_into(gx, gy);
  return gx;
}

}  // namespace

std::string BlockConfig::label() const {
  std::vector<std::string> parts;
  if (heterogeneous) parts.emplace_back("hg");
  switch (placement) {
    case Placement::Standard: break;
    case Placement::AP: parts.emplace_back("ap"); break;
    case Placement::DP: parts.emplace_back("dp"); break;
    case Placement::DNP: parts.emplace_back("dnp"); break;
  }
  if (reparam == Reparam::OR) parts.emplace_back("or");
  if (reparam == Reparam::ER) parts.emplace_back("er");
  if (parts.empty()) return "standard";
  std::string out = parts.front();
  for (std::size_t i = 1; i < parts.size(); ++i) out += "+" + parts[i];
  return out;
}

BlockConfig parse_design(std::string_view label, BlockConfig base) {
  base.heterogeneous = false;
  base.placement = Placement::Standard;
  base.reparam = Reparam::None;
  bool placed = false;
  bool reparam = false;
  std::size_t start = 0;
  while (start <= label.size()) {
    const std::size_t end = std::min(label.find('+', start), label.size());
    const std::string_view tok = label.substr(start, end - start);
    auto place = [&](Placement p) {
      if (placed) throw Error(ErrorCode::ConfigError, "design '" + std::string(label) + "' has two placements");
      placed = true;
      base.placement = p;
    };
    auto rep = [&](Reparam r) {
      if (reparam) throw Error(ErrorCode::ConfigError, "design '" + std::string(label) + "' has two reparameterizations");
      reparam = true;
      base.reparam = r;
    };
    if (tok == "standard") place(Placement::Standard);
    else if (tok == "hg") {
      if (base.heterogeneous) throw Error(ErrorCode::ConfigError, "hg repeated");
      base.heterogeneous = true;
    } else if (tok == "ap") place(Placement::AP);
    else if (tok == "dp") place(Placement::DP);
    else if (tok == "dnp") place(Placement::DNP);
    else if (tok == "or") rep(Reparam::OR);
    else if (tok == "er") rep(Reparam::ER);
    else throw Error(ErrorCode::ConfigError, "unknown design token '" + std::string(tok) + "'");
    start = end + 1;
  }
  return base;
}

void validate(const BlockConfig& c) {
  if (c.d_model == 0 || c.n_head == 0 || c.d_ffn == 0) {
    throw Error(ErrorCode::ConfigError, "block sizes must be positive");
  }
  if (c.d_model % c.n_head != 0) throw Error(ErrorCode::ConfigError, "n_head must divide d_model");
  if (!(c.rms_eps >= 0.0)) throw Error(ErrorCode::ConfigError, "rms_eps must be non-negative");
}

std::vector<ParamSpec> param_layout(const BlockConfig& c) {
  validate(c);
  std::vector<ParamSpec> specs;
  const std::size_t dm = c.d_model;
  const std::size_t df = c.d_ffn;
  specs.push_back({"W_Q", dm, dm});
  specs.push_back({"W_K", dm, dm});
  specs.push_back({"W_V", dm, dm});
  specs.push_back({"W_O", dm, dm});
  specs.push_back({"W_gate", df, dm});
  specs.push_back({"W_up", df, dm});
  specs.push_back({"W_down", dm, df});
  for (const SlotDecl& s : slot_decls(c)) {
    if (c.reparam == Reparam::None) {
      specs.push_back({s.name + ".gamma", 1, s.dim, ParamKind::Scale, s.role});
    } else {
      specs.push_back({s.name + ".alpha", 1, s.dim, ParamKind::Scale, s.role});
      specs.push_back({s.name + ".beta", 1, 1, ParamKind::Scale, s.role});
    }
  }
  return specs;
}

std::vector<std::string> scale_slots(const BlockConfig& config) {
  std::vector<std::string> out;
  for (const SlotDecl& s : slot_decls(config)) out.push_back(s.name);
  return out;
}

std::size_t BlockParams::index(std::string_view name) const {
  for (std::size_t i = 0; i < specs.size(); ++i)
    if (specs[i].name == name) return i;
  throw Error(ErrorCode::ConfigError, "no parameter named '" + std::string(name) + "'");
}

std::size_t BlockParams::total_size() const {
  std::size_t n = 0;
  for (const auto& s : specs) n += s.size();
  return n;
}

BlockParams init_params(const BlockConfig& config, Rng& rng, double matrix_std) {
  BlockParams p;
  p.config = config;
  p.specs = param_layout(config);
  for (const ParamSpec& s : p.specs) {
    Vector v(s.size());
    if (s.kind == ParamKind::Matrix) {
      for (double& x : v) x = matrix_std * rng.normal();
    } else {
      std::fill(v.begin(), v.end(), config.reparam == Reparam::ER ? 0.0 : 1.0);
    }
    p.values.push_back(std::move(v));
  }
  return p;
}

void randomize_params(BlockParams& p, Rng& rng) {
  for (std::size_t i = 0; i < p.specs.size(); ++i) {
    for (double& v : p.values[i]) {
      if (p.specs[i].kind == ParamKind::Matrix) v = 0.4 * rng.normal();
      else if (p.config.reparam == Reparam::ER) v = 0.3 * rng.normal();
      else v = 1.0 + 0.3 * rng.normal();
    }
  }
}

Vector effective_scale(const BlockParams& params, std::string_view slot) {
  const Layout l = make_layout(params);
  for (const Slot& s : l.slots)
    if (s.name == slot) return slot_value(params, s);
  throw Error(ErrorCode::ConfigError, "no scale slot named '" + std::string(slot) + "'");
}

Matrix attn_forward(const BlockParams& params, const Matrix& x) {
  return attn_cached(params, make_layout(params), x).y;
}

Matrix ffn_forward(const BlockParams& params, const Matrix& x) {
  return ffn_cached(params, make_layout(params), x).z;
}

Matrix block_forward(const BlockParams& params, const Matrix& x) {
  const Layout l = make_layout(params);
  return ffn_cached(params, l, attn_cached(params, l, x).y).z;
}

std::vector<Vector> block_backward(const BlockParams& params, const Matrix& x,
                                   const Matrix& upstream) {
  const Layout l = make_layout(params);
  const AttnCache ac = attn_cached(params, l, x);
  const FfnCache fc = ffn_cached(params, l, ac.y);
  if (upstream.rows() != fc.z.rows() || upstream.cols() != fc.z.cols()) {
    throw Error(ErrorCode::DimensionMismatch, "upstream gradient shape differs from the output");
  }
  std::vector<Vector> grads;
  for (const auto& v : params.values) grads.emplace_back(v.size(), 0.0);
  const Matrix gy = ffn_backward(params, l, ac.y, fc, upstream, grads);
  attn_backward(params, l, x, ac, gy, grads);
  return grads;
}

}  // namespace scalevec

namespace scalevec {

BlockParams absorb_input_scales(const BlockParams& params) {
  const Layout l = make_layout(params);
  BlockParams out = params;
  for (std::size_t b = 0; b < kBranches; ++b) {
    if (l.in_slot[b] == kNone) continue;
    const Vector g = slot_value(params, l.slots[l.in_slot[b]]);
    Vector& w = out.values[l.matrix[b]];
    const std::size_t in = g.size();
    for (std::size_t k = 0; k < w.size(); ++k) w[k] *= g[k % in];
  }
  for (std::size_t b = 0; b < kBranches; ++b) {
    if (l.in_slot[b] == kNone) continue;
    const Slot& s = l.slots[l.in_slot[b]];
    Vector& first = out.values[s.first];
    std::fill(first.begin(), first.end(), params.config.reparam == Reparam::ER ? 0.0 : 1.0);
    if (s.second != kNone) out.values[s.second][0] = params.config.reparam == Reparam::ER ? 0.0 : 1.0;
  }
  return out;
}

std::vector<GradCheckRow> gradient_check(const BlockParams& params, const Matrix& x,
                                         const Matrix& upstream, double h) {
  const std::vector<Vector> analytic = block_backward(params, x, upstream);
  auto objective = [&](const BlockParams& p) {
    const Matrix y = block_forward(p, x);
    return dot(y.data(), upstream.data());
  };
  double global = 0.0;
  for (const Vector& g : analytic)
    for (double v : g) global = std::max(global, std::abs(v));
  std::vector<GradCheckRow> rows;
  BlockParams probe = params;
  for (std::size_t i = 0; i < params.values.size(); ++i) {
    const Vector& a = analytic[i];
    double amax = 0.0;
    for (double v : a) amax = std::max(amax, std::abs(v));
    double worst = 0.0;
    for (std::size_t k = 0; k < a.size(); ++k) {
      const double saved = probe.values[i][k];
      probe.values[i][k] = saved + h;
      const double up = objective(probe);
      probe.values[i][k] = saved - h;
      const double down = objective(probe);
      probe.values[i][k] = saved;
      const double f = (up - down) / (2.0 * h);
      const double denom = std::max({std::abs(a[k]), std::abs(f), 1e-3 * amax, 1e-4 * global, 1e-12});
      worst = std::max(worst, std::abs(a[k] - f) / denom);
    }
    rows.push_back({params.specs[i].name, worst});
  }
  return rows;
}

std::vector<NormRoleEntry> classify_norms(const BlockConfig& config, Architecture arch) {
  std::vector<NormRoleEntry> out;
  if (arch == Architecture::GemmaLike) {
    const std::array<std::pair<const char*, NormRole>, 6> nodes = {{
        {"attn_pre_norm", NormRole::InputNorm},
        {"q_norm", NormRole::OutputNorm},
        {"k_norm", NormRole::OutputNorm},
        {"attn_post_norm", NormRole::OutputNorm},
        {"ffn_pre_norm", NormRole::InputNorm},
        {"ffn_post_norm", NormRole::OutputNorm},
    }};
    for (const auto& [name, role] : nodes) out.push_back({name, role, role == NormRole::InputNorm});
    return out;
  }
  BlockConfig c = config;
  c.placement = arch == Architecture::LlamaDNP ? Placement::DNP : Placement::Standard;
  for (const SlotDecl& s : slot_decls(c)) out.push_back({s.name, s.role, s.role == NormRole::InputNorm});
  return out;
}

ParamCount count_params(std::size_t layers, std::size_t d_model, std::size_t norms_per_layer,
                        std::size_t final_norms, std::optional<std::size_t> total) {
  ParamCount pc;
  pc.scale_count = d_model * (layers * norms_per_layer + final_norms);
  if (total) {
    if (*total == 0) throw Error(ErrorCode::ConfigError, "total parameter count must be positive");
    pc.ratio = static_cast<double>(pc.scale_count) / static_cast<double>(*total);
  }
  return pc;
}

std::size_t scale_overhead(const BlockConfig& config) {
  std::size_t n = 0;
  for (const ParamSpec& s : param_layout(config))
    if (s.kind == ParamKind::Scale) n += s.size();
  return n;
}

BlockParams make_teacher(const BlockConfig& shape, std::uint64_t teacher_seed) {
  BlockConfig c = shape;
  c.heterogeneous = false;
  c.placement = Placement::Standard;
  c.reparam = Reparam::None;
  BlockParams p;
  p.config = c;
  p.specs = param_layout(c);
  Rng rng(teacher_seed);
  for (const ParamSpec& s : p.specs) {
    Vector v(s.size());
    if (s.kind == ParamKind::Matrix) {
      const double sd = 1.0 / std::sqrt(static_cast<double>(s.cols));
      for (double& x : v) x = sd * rng.normal();
    } else {
      for (double& x : v) x = std::exp(0.5 * rng.normal());
    }
    p.values.push_back(std::move(v));
  }
  return p;
}

double batch_mse(const BlockParams& student, const BlockParams& teacher,
                 const std::vector<Matrix>& batch) {
  double total = 0.0;
  std::size_t count = 0;
  for (const Matrix& x : batch) {
    const Matrix s = block_forward(student, x);
    const Matrix t = block_forward(teacher, x);
    for (std::size_t k = 0; k < s.size(); ++k) {
      const double r = s.data()[k] - t.data()[k];
      total += r * r;
    }
    count += s.size();
  }
  return count ? total / static_cast<double>(count) : 0.0;
}

TrainCurve train_toy(const BlockConfig& student, const BlockParams& teacher,
                     const TrainConfig& train, std::uint64_t seed) {
  if (train.steps == 0 || train.batch == 0 || train.seq_len == 0 || train.log_every == 0) {
    throw Error(ErrorCode::ConfigError, "steps, batch, seq_len and log_every must be positive");
  }
  if (student.d_model != teacher.config.d_model) {
    throw Error(ErrorCode::DimensionMismatch, "student and teacher widths differ");
  }
  Rng init_rng(seed);
  BlockParams p = init_params(student, init_rng);
  // Separate stream so the data does not depend on the parameter count.
  Rng data_rng(seed ^ 0xD1B54A32D192ED03ULL);

  std::vector<bool> decayed;
  for (const ParamSpec& s : p.specs) {
    bool d = true;
    if (s.kind == ParamKind::Scale) {
      d = train.policy == DecayPolicy::All ||
          (train.policy == DecayPolicy::Iwd && s.role == NormRole::InputNorm);
    }
    decayed.push_back(d);
  }
  std::vector<Vector> m, v;
  for (const Vector& x : p.values) {
    m.emplace_back(x.size(), 0.0);
    v.emplace_back(x.size(), 0.0);
  }

  TrainCurve curve;
  curve.design = student.label();
  curve.seed = seed;
  const std::size_t tail_start = train.steps - std::max<std::size_t>(1, train.steps / 10);
  double tail_sum = 0.0;
  double b1t = 1.0, b2t = 1.0;
  const std::size_t dm = student.d_model;

  for (std::size_t step = 0; step < train.steps; ++step) {
    std::vector<Vector> grads;
    for (const Vector& x : p.values) grads.emplace_back(x.size(), 0.0);
    double loss = 0.0;
    const double scale = 1.0 / static_cast<double>(train.batch * train.seq_len * dm);
    for (std::size_t b = 0; b < train.batch; ++b) {
      Matrix x(train.seq_len, dm);
      for (double& e : x.data()) e = data_rng.normal();
      const Matrix target = block_forward(teacher, x);
      Matrix resid = block_forward(p, x);
      for (std::size_t k = 0; k < resid.size(); ++k) {
        const double r = resid.data()[k] - target.data()[k];
        loss += r * r * scale;
        resid.data()[k] = 2.0 * r * scale;
      }
      const std::vector<Vector> g = block_backward(p, x, resid);
      for (std::size_t i = 0; i < g.size(); ++i)
        for (std::size_t k = 0; k < g[i].size(); ++k) grads[i][k] += g[i][k];
    }
    if (!std::isfinite(loss)) {
      throw Error(ErrorCode::Diverged, curve.design + " loss became non-finite at step " + std::to_string(step));
    }
    if (step % train.log_every == 0 || step + 1 == train.steps) {
      curve.steps.push_back(step);
      curve.losses.push_back(loss);
    }
    if (step >= tail_start) tail_sum += loss;

    b1t *= train.beta1;
    b2t *= train.beta2;
    for (std::size_t i = 0; i < p.values.size(); ++i) {
      Vector& w = p.values[i];
      const double wd = decayed[i] ? train.weight_decay : 0.0;
      for (std::size_t k = 0; k < w.size(); ++k) {
        const double g = grads[i][k];
        m[i][k] = train.beta1 * m[i][k] + (1.0 - train.beta1) * g;
        v[i][k] = train.beta2 * v[i][k] + (1.0 - train.beta2) * g * g;
        const double mh = m[i][k] / (1.0 - b1t);
        const double vh = v[i][k] / (1.0 - b2t);
        w[k] -= train.lr * wd * w[k];
        w[k] -= train.lr * mh / (std::sqrt(vh) + train.adam_eps);
      }
    }
  }
  curve.final_loss = tail_sum / static_cast<double>(train.steps - tail_start);
  return curve;
}

}  // namespace scalevec
