#pragma once

// The Hamiltonian network: node-wise interaction layers, diagonal and
// off-diagonal pair modules on the last two layers, and the expansion
// decoder producing one 14x14 full-orbital block per ordered atom pair.

#include <algorithm>
#include <array>
#include <cmath>
#include <memory>
#include <numbers>
#include <string>
#include <vector>

#include "qhnet/autodiff.hpp"
#include "qhnet/hamiltonian.hpp"
#include "qhnet/irreps.hpp"
#include "qhnet/ops.hpp"

namespace qhnet {

struct ModelConfig {
  int l_max = 4;
  int channels = 16;
  int layers = 5;
  int rbf_bins = 32;
  double rbf_r_max = 12.0;  // Bohr
  bool use_attentive_scores = true;
  bool use_norm_gate = true;
  std::uint64_t seed = 0;

  static constexpr int kHidden = 64;
  static constexpr int kEmbedding = 32;

  void validate() const {
    if (l_max < 2 * kMaxShellOrder) throw ConfigError("l_max must be at least 4 to cover d-d blocks");
    if (l_max > 6) throw ConfigError("l_max above 6 is not supported");
    if (channels < 1) throw ConfigError("channels must be positive");
    if (layers < 2) throw ConfigError("at least two interaction layers are required");
    if (rbf_bins < 2) throw ConfigError("rbf_bins must be at least 2");
    if (!(rbf_r_max > 0.0)) throw ConfigError("rbf_r_max must be positive");
  }
};

struct Molecule {
  std::vector<int> atoms;
  std::vector<Vec3> positions;  // Bohr
};

/// Gaussian radial basis with a cosine cutoff.
inline std::vector<double> rbf_embed(double r, int bins, double r_max) {
  require(r >= 0.0, "rbf_embed: negative distance");
  std::vector<double> out(static_cast<std::size_t>(bins), 0.0);
  if (r >= r_max) return out;
  const double gamma = (bins / r_max) * (bins / r_max);
  const double cutoff = 0.5 * (std::cos(std::numbers::pi * r / r_max) + 1.0);
  for (int k = 0; k < bins; ++k) {
    const double mu = k * r_max / (bins - 1);
    out[static_cast<std::size_t>(k)] = std::exp(-gamma * (r - mu) * (r - mu)) * cutoff;
  }
  return out;
}

/// Tensor-product invocation counter with sequential-depth tracking.
struct TpCounter {
  int total = 0;
  int max_sequential = 0;
  int invoke(int input_depth) {
    ++total;
    max_sequential = std::max(max_sequential, input_depth + 1);
    return input_depth + 1;
  }
};

inline std::size_t element_slot(int z) {
  switch (z) {
    case 1: return 0;
    case 6: return 1;
    case 7: return 2;
    case 8: return 3;
    default: throw DataError("unsupported element Z=" + std::to_string(z));
  }
}

namespace detail {

struct Dense {
  std::size_t w = 0, b = 0, in = 0, out = 0;
};

struct Mlp {
  std::vector<Dense> layers;
  std::size_t out() const { return layers.back().out; }
};

struct NormGateSi {
  bool gated = false;
  Mlp mlp;
  std::size_t si = 0;
};

struct Filter {
  bool attentive = false;
  std::size_t lin_q = 0, lin_k = 0;
  Mlp score;
  Mlp radial;
};

struct InteractionLayer {
  NormGateSi ng;
  Filter filter;
  std::size_t update = 0;
};

struct OffDiagonalPair {
  Filter filter;
  NormGateSi left, right, post;
};

struct DiagonalPair {
  NormGateSi left, right, post;
  std::size_t weights = 0;
};

}  // namespace detail

/// Node features after each layer plus pair representations, for inspection.
struct ForwardTrace {
  std::vector<ad::Var> node_features;  // one per interaction layer (n x layout)
  ad::Var pair_diagonal, pair_off;      // fused pair representations before expansion
  ad::Var blocks_diagonal, blocks_off;  // 14x14 blocks, atom order then pair order
};

struct ForwardOutput {
  ad::Var hamiltonian;  // N_orb x N_orb, row-major
  std::size_t n_orb = 0;
  TpCounter tp;
};

class QHNet {
 public:
  explicit QHNet(ModelConfig cfg, std::shared_ptr<const CGTable> cg = nullptr)
      : cfg_(cfg), layout_(cfg.l_max, cfg.channels), sh_(cfg.l_max, 1) {
    cfg_.validate();
    cg_ = cg ? std::move(cg) : shared_cg_table(cfg_.l_max);
    require(cg_->l_max() >= cfg_.l_max, "QHNet: CG table order too small");
    filter_plan_ = std::make_shared<ad::TensorProductPlan>(cg_, sh_, layout_, cfg_.l_max);
    pair_plan_ = std::make_shared<ad::TensorProductPlan>(cg_, layout_, layout_, cfg_.l_max);
    std::vector<ad::ExpansionPlan::Block> blocks;
    for (const auto& b : full_orbital_channels())
      blocks.push_back({b.l1, b.l2, b.channels(), b.row_offset, b.col_offset, {}, 0, 1.0});
    expansion_plan_ = std::make_shared<ad::ExpansionPlan>(cg_, layout_, kFullOrbitals, kFullOrbitals, blocks);
    build_parameters();
  }

  const ModelConfig& config() const { return cfg_; }
  const IrrepsLayout& layout() const { return layout_; }
  ad::ParamStore& params() { return store_; }
  const ad::ParamStore& params() const { return store_; }
  const CGTable& cg() const { return *cg_; }
  std::size_t filter_paths() const { return filter_plan_->paths().size(); }

  /// Records the full forward pass. `trace` receives intermediate handles.
  ForwardOutput forward(ad::Tape& t, const Molecule& mol, ForwardTrace* trace = nullptr) const {
    using namespace ad;
    const std::size_t n = mol.atoms.size();
    require(n >= 1, "forward: empty molecule");
    require(mol.positions.size() == n, "forward: positions do not match atoms");
    for (int z : mol.atoms) element_slot(z);

    // Ordered pairs i != j, row-major.
    Index src, dst;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j)
        if (i != j) {
          dst.push_back(static_cast<std::uint32_t>(i));
          src.push_back(static_cast<std::uint32_t>(j));
        }
    const std::size_t np = dst.size();
    Geometry geo = geometry(mol, dst, src);
    const Var rbf = t.constant(std::move(geo.rbf));
    const Var sh = t.constant(std::move(geo.sh));
    Index pair_rows(np);
    for (std::size_t p = 0; p < np; ++p) pair_rows[p] = static_cast<std::uint32_t>(p);

    // Embedding and initial invariant features.
    Index types;
    for (int z : mol.atoms) types.push_back(static_cast<std::uint32_t>(element_slot(z)));
    const Var emb = gather_rows(t, t.param(embed_), ModelConfig::kEmbedding, types);
    const std::size_t C = static_cast<std::size_t>(cfg_.channels);
    const Var x0 = dense(t, emb, n, init_);
    Var x = concat_cols(t, {x0, zeros(t, n * (layout_.size() - C))}, {C, layout_.size() - C}, n);

    TpCounter tp;
    int depth = 0;
    std::vector<Var> per_layer;
    std::vector<int> per_layer_depth;
    for (const auto& layer : interaction_) {
      const Var xh = norm_gate_si(t, x, n, layer.ng);
      const Var w = filter_weights(t, layer.filter, x, rbf, dst, src, np);
      const Var msg = tensor_product(t, filter_plan_, sh, xh, w, pair_rows, src);
      depth = tp.invoke(depth);
      const Var agg = scatter_sum_rows(t, msg, layout_.size(), dst, n);
      x = irreps_linear(t, add(t, xh, agg), t.param(layer.update), layout_, cfg_.channels, n);
      per_layer.push_back(x);
      per_layer_depth.push_back(depth);
    }

    // Pair modules on the last two layers, summed.
    Var f_diag, f_off;
    for (std::size_t k = 0; k < 2; ++k) {
      const std::size_t li = interaction_.size() - 2 + k;
      const Var xn = per_layer[li];
      const auto& dp = diagonal_[k];
      const Var xl = norm_gate_si(t, xn, n, dp.left);
      const Var xr = norm_gate_si(t, xn, n, dp.right);
      Index self(n);
      for (std::size_t i = 0; i < n; ++i) self[i] = static_cast<std::uint32_t>(i);
      Var fd = tensor_product(t, pair_plan_, xl, xr, t.param(dp.weights), self, self);
      tp.invoke(per_layer_depth[li]);
      fd = norm_gate_si(t, add(t, fd, xn), n, dp.post);

      const auto& op = off_[k];
      const Var w = filter_weights(t, op.filter, xn, rbf, dst, src, np);
      const Var xi = norm_gate_si(t, xn, n, op.left);
      const Var xj = norm_gate_si(t, xn, n, op.right);
      Var fo = tensor_product(t, pair_plan_, xi, xj, w, dst, src);
      tp.invoke(per_layer_depth[li]);
      fo = norm_gate_si(t, fo, np, op.post);

      f_diag = k == 0 ? fd : add(t, f_diag, fd);
      f_off = k == 0 ? fo : add(t, f_off, fo);
    }
    f_diag = scalar_bias(t, irreps_linear(t, f_diag, t.param(fuse_si_diag_), layout_, cfg_.channels, n), fuse_bias_diag_, n);
    f_off = scalar_bias(t, irreps_linear(t, f_off, t.param(fuse_si_off_), layout_, cfg_.channels, np), fuse_bias_off_, np);

    // Expansion weights from atom-type embeddings.
    const Var wd = mlp(t, emb, n, expand_diag_);
    const Var emb_i = gather_rows(t, emb, ModelConfig::kEmbedding, dst);
    const Var emb_j = gather_rows(t, emb, ModelConfig::kEmbedding, src);
    const Var emb_pair = concat_cols(t, {emb_i, emb_j}, {ModelConfig::kEmbedding, ModelConfig::kEmbedding}, np);
    const Var wo = mlp(t, emb_pair, np, expand_off_);
    const Var md = tensor_expansion(t, expansion_plan_, f_diag, wd);
    const Var mo = tensor_expansion(t, expansion_plan_, f_off, wo);

    const std::size_t bs = kFullOrbitals * kFullOrbitals;
    const Var all = concat_cols(t, {md, mo}, {n * bs, np * bs}, 1);
    auto slot = [n](std::size_t i, std::size_t j) {
      if (i == j) return i;
      return n + i * (n - 1) + (j < i ? j : j - 1);
    };
    auto index = std::make_shared<Index>(assembly_index(mol.atoms, slot));
    ForwardOutput out;
    out.hamiltonian = gather(t, all, index);
    out.n_orb = orbital_count(mol.atoms);
    out.tp = tp;
    if (trace) {
      trace->node_features = per_layer;
      trace->pair_diagonal = f_diag;
      trace->pair_off = f_off;
      trace->blocks_diagonal = md;
      trace->blocks_off = mo;
    }
    return out;
  }

  /// Forward pass returning the assembled (unsymmetrized) Hamiltonian.
  Matrix predict(const Molecule& mol) const {
    ad::Tape t(&store_);
    const auto out = forward(t, mol);
    const auto v = t.value(out.hamiltonian);
    return Matrix(out.n_orb, out.n_orb, std::vector<double>(v.begin(), v.end()));
  }

  /// Tensor-product counters for a molecule with the given atoms (geometry
  /// is irrelevant to the count).
  TpCounter count_tensor_products(const Molecule& mol) const {
    ad::Tape t(&store_);
    return forward(t, mol).tp;
  }

 private:
  struct Geometry {
    std::vector<double> rbf, sh;
  };

  Geometry geometry(const Molecule& mol, const ad::Index& dst, const ad::Index& src) const {
    Geometry g;
    g.rbf.reserve(dst.size() * static_cast<std::size_t>(cfg_.rbf_bins));
    g.sh.reserve(dst.size() * sh_.size());
    for (std::size_t p = 0; p < dst.size(); ++p) {
      const Vec3 d = mol.positions[src[p]] - mol.positions[dst[p]];
      const double r = norm(d);
      if (!(r >= 1e-6))
        throw DegenerateGeometry("atoms " + std::to_string(dst[p]) + " and " + std::to_string(src[p]) +
                                 " overlap (distance below 1e-6 Bohr)");
      const auto basis = rbf_embed(r, cfg_.rbf_bins, cfg_.rbf_r_max);
      g.rbf.insert(g.rbf.end(), basis.begin(), basis.end());
      const auto y = spherical_harmonics_upto(cfg_.l_max, {d[0] / r, d[1] / r, d[2] / r});
      g.sh.insert(g.sh.end(), y.begin(), y.end());
    }
    return g;
  }

  static ad::Var zeros(ad::Tape& t, std::size_t n) { return t.constant(std::vector<double>(n, 0.0)); }

  ad::Var dense(ad::Tape& t, ad::Var x, std::size_t rows, const detail::Dense& d) const {
    return ad::add_bias(t, ad::matmul(t, x, t.param(d.w), rows, d.in, d.out), t.param(d.b), rows);
  }

  ad::Var mlp(ad::Tape& t, ad::Var x, std::size_t rows, const detail::Mlp& m) const {
    for (std::size_t k = 0; k < m.layers.size(); ++k) {
      x = dense(t, x, rows, m.layers[k]);
      if (k + 1 < m.layers.size()) x = ad::silu(t, x);
    }
    return x;
  }

  ad::Var norm_gate_si(ad::Tape& t, ad::Var x, std::size_t rows, const detail::NormGateSi& m) const {
    using namespace ad;
    if (m.gated) {
      const std::size_t C = static_cast<std::size_t>(cfg_.channels);
      const std::size_t L = static_cast<std::size_t>(cfg_.l_max);
      const Var s = slice_cols(t, x, rows, layout_.size(), 0, C);
      const Var nrm = irreps_norms(t, x, layout_, rows);
      const Var g = mlp(t, concat_cols(t, {s, nrm}, {C, L * C}, rows), rows, m.mlp);
      x = gate(t, x, g, layout_, rows);
    }
    return irreps_linear(t, x, t.param(m.si), layout_, cfg_.channels, rows);
  }

  ad::Var scalar_bias(ad::Tape& t, ad::Var x, std::size_t bias, std::size_t rows) const {
    const std::size_t C = static_cast<std::size_t>(cfg_.channels);
    const ad::Var full = ad::concat_cols(t, {t.param(bias), zeros(t, layout_.size() - C)}, {C, layout_.size() - C}, 1);
    return ad::add_bias(t, x, full, rows);
  }

  /// Per-pair path weights: attentive score times radial response.
  ad::Var filter_weights(ad::Tape& t, const detail::Filter& f, ad::Var x, ad::Var rbf, const ad::Index& dst,
                         const ad::Index& src, std::size_t np) const {
    using namespace ad;
    const Var radial = mlp(t, rbf, np, f.radial);
    if (!f.attentive) return radial;
    const std::size_t C = static_cast<std::size_t>(cfg_.channels);
    const std::size_t L = static_cast<std::size_t>(cfg_.l_max);
    const std::size_t n = t.size(x) / layout_.size();
    const Var q = irreps_linear(t, x, t.param(f.lin_q), layout_, cfg_.channels, n);
    const Var k = irreps_linear(t, x, t.param(f.lin_k), layout_, cfg_.channels, n);
    const Var qi = gather_rows(t, q, layout_.size(), dst);
    const Var kj = gather_rows(t, k, layout_.size(), src);
    const Var inner = channel_cosine(t, qi, kj, layout_, np);
    const Var s = slice_cols(t, x, n, layout_.size(), 0, C);
    const Var si = gather_rows(t, s, C, dst);
    const Var sj = gather_rows(t, s, C, src);
    const Var feat = concat_cols(t, {si, sj, inner}, {C, C, L * C}, np);
    return mul(t, mlp(t, feat, np, f.score), radial);
  }

  // -------------------------------------------------------------------------
  // Parameter construction

  std::size_t add_uniform(const std::string& name, std::vector<std::size_t> shape, double bound) {
    std::size_t count = 1;
    for (auto s : shape) count *= s;
    std::vector<double> v(count);
    for (double& x : v) x = rng_.uniform(-bound, bound);
    return store_.add(name, std::move(shape), std::move(v));
  }

  std::size_t add_zeros(const std::string& name, std::vector<std::size_t> shape) {
    std::size_t count = 1;
    for (auto s : shape) count *= s;
    return store_.add(name, std::move(shape), std::vector<double>(count, 0.0));
  }

  detail::Dense make_dense(const std::string& name, std::size_t in, std::size_t out, double gain = 1.0) {
    detail::Dense d;
    d.in = in;
    d.out = out;
    d.w = add_uniform(name + ".weight", {out, in}, gain * std::sqrt(3.0 / static_cast<double>(in)));
    d.b = add_zeros(name + ".bias", {out});
    return d;
  }

  /// Hidden layers use SiLU; layers fed by a SiLU get a second-moment gain.
  /// `out_bias` optionally seeds the last layer's bias; `in_gain` scales the
  /// first layer.
  detail::Mlp make_mlp(const std::string& name, std::vector<std::size_t> widths, std::vector<double> out_bias = {},
                       double in_gain = 1.0) {
    detail::Mlp m;
    for (std::size_t k = 0; k + 1 < widths.size(); ++k)
      m.layers.push_back(
          make_dense(name + "." + std::to_string(k), widths[k], widths[k + 1], k == 0 ? in_gain : silu_gain()));
    if (!out_bias.empty()) {
      auto& b = store_[m.layers.back().b].value;
      require(out_bias.size() == b.size(), "make_mlp: bias seed size mismatch");
      b = std::move(out_bias);
    }
    return m;
  }

  /// 1 / sqrt(E[silu(z)^2]) for z ~ N(0, 1), by Gauss-Hermite-free midpoint
  /// quadrature on [-12, 12].
  static double silu_gain() {
    static const double g = [] {
      const int n = 24000;
      const double h = 24.0 / n;
      double m2 = 0.0;
      for (int k = 0; k < n; ++k) {
        const double z = -12.0 + (k + 0.5) * h;
        const double s = z * ad::sigmoid(z);
        m2 += s * s * std::exp(-0.5 * z * z);
      }
      m2 *= h / std::sqrt(2.0 * std::numbers::pi);
      return 1.0 / std::sqrt(m2);
    }();
    return g;
  }

  std::size_t make_si(const std::string& name) {
    const auto C = static_cast<std::size_t>(cfg_.channels);
    return add_uniform(name, {static_cast<std::size_t>(cfg_.l_max + 1), C, C}, std::sqrt(3.0 / static_cast<double>(C)));
  }

  detail::NormGateSi make_norm_gate(const std::string& name) {
    detail::NormGateSi m;
    m.gated = cfg_.use_norm_gate;
    const auto width = static_cast<std::size_t>((cfg_.l_max + 1) * cfg_.channels);
    if (m.gated) {
      // Scales start at exactly 1 (zero weights, unit bias); scalar outputs
      // keep their random weights and a zero bias.
      std::vector<double> bias(width, 1.0);
      std::fill_n(bias.begin(), cfg_.channels, 0.0);
      m.mlp = make_mlp(name + ".gate", {width, ModelConfig::kHidden, width}, std::move(bias));
      auto& w = store_[m.mlp.layers.back().w].value;
      std::fill(w.begin() + static_cast<std::ptrdiff_t>(cfg_.channels * ModelConfig::kHidden), w.end(), 0.0);
    }
    m.si = make_si(name + ".si");
    return m;
  }

  detail::Filter make_filter(const std::string& name, std::size_t paths) {
    detail::Filter f;
    const auto C = static_cast<std::size_t>(cfg_.channels);
    const auto L = static_cast<std::size_t>(cfg_.l_max);
    f.attentive = cfg_.use_attentive_scores;
    if (f.attentive) {
      f.lin_q = make_si(name + ".query");
      f.lin_k = make_si(name + ".key");
      // Scores start at exactly 1.
      f.score = make_mlp(name + ".score", {(2 + L) * C, ModelConfig::kHidden, paths * C},
                         std::vector<double>(paths * C, 1.0));
      auto& w = store_[f.score.layers.back().w].value;
      std::fill(w.begin(), w.end(), 0.0);
    }
    // The radial basis is a soft one-hot of unit squared norm, not a vector
    // of unit-variance entries.
    const auto bins = static_cast<std::size_t>(cfg_.rbf_bins);
    f.radial = make_mlp(name + ".radial", {bins, ModelConfig::kHidden, ModelConfig::kHidden, paths * C}, {},
                        std::sqrt(static_cast<double>(bins)));
    return f;
  }

  void build_parameters() {
    rng_ = Rng(cfg_.seed);
    const auto C = static_cast<std::size_t>(cfg_.channels);
    const auto E = static_cast<std::size_t>(ModelConfig::kEmbedding);
    std::vector<double> table(4 * E);
    for (double& v : table) v = rng_.normal();
    embed_ = store_.add("embedding", {4, E}, std::move(table));
    init_ = make_dense("init", E, C);

    const std::size_t fp = filter_plan_->paths().size();
    for (int l = 0; l < cfg_.layers; ++l) {
      const std::string p = "layer" + std::to_string(l);
      detail::InteractionLayer layer;
      layer.ng = make_norm_gate(p + ".node");
      layer.filter = make_filter(p + ".filter", fp);
      layer.update = make_si(p + ".update");
      interaction_.push_back(std::move(layer));
    }
    const std::size_t pp = pair_plan_->paths().size();
    for (int k = 0; k < 2; ++k) {
      const std::string p = "pair" + std::to_string(k);
      detail::DiagonalPair d;
      d.left = make_norm_gate(p + ".diag.left");
      d.right = make_norm_gate(p + ".diag.right");
      d.weights = add_uniform(p + ".diag.tp", {pp, C}, std::sqrt(3.0));
      d.post = make_norm_gate(p + ".diag.post");
      diagonal_.push_back(std::move(d));

      detail::OffDiagonalPair o;
      o.filter = make_filter(p + ".off.filter", pp);
      o.left = make_norm_gate(p + ".off.left");
      o.right = make_norm_gate(p + ".off.right");
      o.post = make_norm_gate(p + ".off.post");
      off_.push_back(std::move(o));
    }
    fuse_si_diag_ = make_si("fuse.diag.si");
    fuse_bias_diag_ = add_zeros("fuse.diag.bias", {C});
    fuse_si_off_ = make_si("fuse.off.si");
    fuse_bias_off_ = add_zeros("fuse.off.bias", {C});
    const std::size_t nw = expansion_plan_->weights_per_row();
    expand_diag_ = make_mlp("expand.diag", {E, ModelConfig::kHidden, nw});
    expand_off_ = make_mlp("expand.off", {2 * E, ModelConfig::kHidden, nw});
  }

  ModelConfig cfg_;
  IrrepsLayout layout_, sh_;
  std::shared_ptr<const CGTable> cg_;
  std::shared_ptr<const ad::TensorProductPlan> filter_plan_, pair_plan_;
  std::shared_ptr<const ad::ExpansionPlan> expansion_plan_;
  ad::ParamStore store_;
  Rng rng_{0};

  std::size_t embed_ = 0;
  detail::Dense init_;
  std::vector<detail::InteractionLayer> interaction_;
  std::vector<detail::DiagonalPair> diagonal_;
  std::vector<detail::OffDiagonalPair> off_;
  std::size_t fuse_si_diag_ = 0, fuse_bias_diag_ = 0, fuse_si_off_ = 0, fuse_bias_off_ = 0;
  detail::Mlp expand_diag_, expand_off_;
};

}  // namespace qhnet
