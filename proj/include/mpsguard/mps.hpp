#pragma once

#include <cstdint>
#include <istream>
#include <ostream>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "mpsguard/errors.hpp"
#include "mpsguard/linalg.hpp"
#include "mpsguard/rng.hpp"
#include "mpsguard/tensor.hpp"

namespace mpsguard {

/// Open-boundary matrix product state with one output leg.
///
/// Every site is stored with flat layout (left bond, leg, right bond); the
/// first site has no left bond and the last none on the right, so their
/// shapes are (leg, b) and (b, leg). The leg of `output_site` carries the
/// class index (extent `out_dim`); all other legs consume one embedded input
/// (extent `phys_dim`). Indices are 0-based.
struct MpsModel {
  std::vector<Tensor> sites;
  std::size_t output_site = 0;
  std::size_t phys_dim = 2;
  std::size_t out_dim = 2;
  std::size_t bond_dim = 2;

  std::size_t length() const noexcept { return sites.size(); }
  std::size_t num_inputs() const noexcept { return sites.size() - 1; }
  std::size_t leg_dim(std::size_t k) const noexcept { return k == output_site ? out_dim : phys_dim; }
  std::size_t left_bond(std::size_t k) const noexcept { return k == 0 ? 1 : bond_dim; }
  std::size_t right_bond(std::size_t k) const noexcept { return k + 1 == length() ? 1 : bond_dim; }

  Shape site_shape(std::size_t k) const {
    if (k == 0) return {leg_dim(k), bond_dim};
    if (k + 1 == length()) return {bond_dim, leg_dim(k)};
    return {bond_dim, leg_dim(k), bond_dim};
  }

  double entry(std::size_t k, std::size_t a, std::size_t s, std::size_t b) const {
    return sites[k].data()[(a * leg_dim(k) + s) * right_bond(k) + b];
  }

  std::size_t param_count() const {
    std::size_t n = 0;
    for (const auto& t : sites) n += t.size();
    return n;
  }

  /// Input index -> chain position (the output site is skipped).
  std::size_t site_of_input(std::size_t i) const noexcept { return i < output_site ? i : i + 1; }

  void validate() const {
    if (length() < 2) throw ShapeError("mps: need at least two sites");
    if (output_site >= length()) throw ShapeError("mps: output_site out of range");
    if (phys_dim == 0 || out_dim == 0 || bond_dim == 0) throw ShapeError("mps: zero dimension");
    for (std::size_t k = 0; k < length(); ++k)
      if (sites[k].shape() != site_shape(k))
        throw ShapeError("mps: site " + std::to_string(k) + " has shape " +
                         shape_string(sites[k].shape()) + ", expected " +
                         shape_string(site_shape(k)));
  }

  static MpsModel zeros(std::size_t n_sites, std::size_t phys_dim, std::size_t bond_dim,
                        std::size_t out_dim, std::size_t output_site) {
    MpsModel m;
    m.phys_dim = phys_dim;
    m.bond_dim = bond_dim;
    m.out_dim = out_dim;
    m.output_site = output_site;
    m.sites.resize(n_sites);
    if (n_sites < 2) throw ShapeError("mps: need at least two sites");
    if (output_site >= n_sites) throw ShapeError("mps: output_site out of range");
    for (std::size_t k = 0; k < n_sites; ++k) m.sites[k] = Tensor(m.site_shape(k));
    return m;
  }
};

inline std::size_t mps_param_count(std::size_t n_sites, std::size_t phys_dim, std::size_t bond_dim,
                                   std::size_t out_dim, std::size_t output_site) {
  return MpsModel::zeros(n_sites, phys_dim, bond_dim, out_dim, output_site).param_count();
}

/// Site k viewed as a (left bond * leg, right bond) matrix.
inline Tensor left_matrix(const MpsModel& m, std::size_t k) {
  return reshape(m.sites[k], {m.left_bond(k) * m.leg_dim(k), m.right_bond(k)});
}

/// Site k viewed as a (left bond, leg * right bond) matrix.
inline Tensor right_matrix(const MpsModel& m, std::size_t k) {
  return reshape(m.sites[k], {m.left_bond(k), m.leg_dim(k) * m.right_bond(k)});
}

/// Identity-biased random initialization: every leg slice is the identity
/// on matching bond indices plus gaussian noise of the given stddev.
inline MpsModel init_mps(std::size_t n_sites, std::size_t phys_dim, std::size_t bond_dim,
                         std::size_t out_dim, std::size_t output_site, std::uint64_t seed,
                         double noise = 0.5) {
  MpsModel m = MpsModel::zeros(n_sites, phys_dim, bond_dim, out_dim, output_site);
  Rng rng(seed);
  std::normal_distribution<double> nd(0.0, noise);
  for (std::size_t k = 0; k < n_sites; ++k) {
    const std::size_t bl = m.left_bond(k), leg = m.leg_dim(k), br = m.right_bond(k);
    auto data = m.sites[k].data();
    for (std::size_t a = 0; a < bl; ++a)
      for (std::size_t s = 0; s < leg; ++s)
        for (std::size_t b = 0; b < br; ++b) {
          // Boundary sites have a single bond; bias them toward the identity on (leg, bond).
          const bool diag = k == 0 ? s == b : (k + 1 == n_sites ? a == s : a == b);
          data[(a * leg + s) * br + b] = (diag ? 1.0 : 0.0) + nd(rng);
        }
  }
  return m;
}

inline MpsModel random_mps(std::size_t n_sites, std::size_t phys_dim, std::size_t bond_dim,
                           std::size_t out_dim, std::size_t output_site, std::uint64_t seed) {
  MpsModel m = MpsModel::zeros(n_sites, phys_dim, bond_dim, out_dim, output_site);
  Rng rng(seed);
  for (auto& t : m.sites) t = random_tensor(t.shape(), Gaussian{0.0, 1.0}, rng);
  return m;
}

// ---------------------------------------------------------------------------
// Feature embedding

struct BinaryNoisy {
  double level0 = 0.0;
  double level1 = 1.0;
};

struct ContinuousMinMax {
  double lo = 0.0;
  double hi = 1.0;
};

using FeatureEncoding = std::variant<BinaryNoisy, ContinuousMinMax>;

struct FeatureMap {
  double epsilon = 5e-2;
  std::vector<FeatureEncoding> features;

  void validate() const {
    if (!(epsilon > 0.0 && epsilon < 0.5)) throw Error("feature map: epsilon must lie in (0, 0.5)");
    for (const auto& f : features)
      if (const auto* c = std::get_if<ContinuousMinMax>(&f); c && !(c->lo < c->hi))
        throw Error("feature map: continuous bounds need lo < hi");
  }
};

struct Embedding {
  Tensor vectors;        // (inputs, 2): row i is (1 - x_i, x_i)
  bool clamped = false;  // some continuous value fell outside [lo, hi]
};

/// Maps each raw feature to x in [0,1] and then to (1 - x, x). Binary
/// features are drawn uniformly from [0, 1/2 - eps] or [1/2 + eps, 1].
inline Embedding embed(const FeatureMap& fm, std::span<const double> raw_row, Rng& rng) {
  if (raw_row.size() != fm.features.size())
    throw ShapeError("embed: row has " + std::to_string(raw_row.size()) + " values, feature map " +
                     std::to_string(fm.features.size()));
  Embedding e{Tensor({raw_row.size(), 2}), false};
  for (std::size_t i = 0; i < raw_row.size(); ++i) {
    double x = 0.0;
    if (const auto* b = std::get_if<BinaryNoisy>(&fm.features[i])) {
      const double v = raw_row[i];
      if (v != b->level0 && v != b->level1)
        throw Error("embed: binary feature " + std::to_string(i) + " has value " + std::to_string(v));
      const bool one = v == b->level1;
      std::uniform_real_distribution<double> band(one ? 0.5 + fm.epsilon : 0.0,
                                                   one ? 1.0 : 0.5 - fm.epsilon);
      x = band(rng);
    } else {
      const auto& c = std::get<ContinuousMinMax>(fm.features[i]);
      x = (raw_row[i] - c.lo) / (c.hi - c.lo);
      if (x < 0.0 || x > 1.0) {
        e.clamped = true;
        x = std::clamp(x, 0.0, 1.0);
      }
    }
    e.vectors(i, 0) = 1.0 - x;
    e.vectors(i, 1) = x;
  }
  return e;
}

inline Embedding embed(const FeatureMap& fm, std::span<const double> raw_row, std::uint64_t seed) {
  Rng rng(seed);
  return embed(fm, raw_row, rng);
}

// ---------------------------------------------------------------------------
// Evaluation

namespace detail {

inline void check_inputs(const MpsModel& m, const Tensor& inputs) {
  if (inputs.rank() != 2 || inputs.dim(0) != m.num_inputs() || inputs.dim(1) != m.phys_dim)
    throw ShapeError("forward: expected inputs of shape (" + std::to_string(m.num_inputs()) + "," +
                     std::to_string(m.phys_dim) + "), got " + shape_string(inputs.shape()));
}

/// Left boundary vector after absorbing sites [0, stop) with their inputs.
inline std::vector<double> left_environment(const MpsModel& m, const Tensor& inputs, std::size_t stop) {
  std::vector<double> env{1.0};
  for (std::size_t k = 0; k < stop; ++k) {
    const std::size_t i = k < m.output_site ? k : k - 1;
    const std::size_t bl = m.left_bond(k), leg = m.leg_dim(k), br = m.right_bond(k);
    std::vector<double> next(br, 0.0);
    auto a = m.sites[k].data();
    for (std::size_t l = 0; l < bl; ++l)
      for (std::size_t s = 0; s < leg; ++s) {
        const double w = env[l] * inputs(i, s);
        const double* row = &a[(l * leg + s) * br];
        for (std::size_t r = 0; r < br; ++r) next[r] += w * row[r];
      }
    env = std::move(next);
  }
  return env;
}

/// Right boundary vector after absorbing sites (start, N).
inline std::vector<double> right_environment(const MpsModel& m, const Tensor& inputs, std::size_t start) {
  std::vector<double> env{1.0};
  for (std::size_t k = m.length(); k-- > start + 1;) {
    const std::size_t i = k < m.output_site ? k : k - 1;
    const std::size_t bl = m.left_bond(k), leg = m.leg_dim(k), br = m.right_bond(k);
    std::vector<double> next(bl, 0.0);
    auto a = m.sites[k].data();
    for (std::size_t l = 0; l < bl; ++l)
      for (std::size_t s = 0; s < leg; ++s) {
        const double* row = &a[(l * leg + s) * br];
        double acc = 0.0;
        for (std::size_t r = 0; r < br; ++r) acc += row[r] * env[r];
        next[l] += inputs(i, s) * acc;
      }
    env = std::move(next);
  }
  return env;
}

}  // namespace detail

/// Logits of the model on one embedded input; linear in N, never builds the full tensor.
inline std::vector<double> forward(const MpsModel& m, const Tensor& inputs) {
  detail::check_inputs(m, inputs);
  const std::size_t o = m.output_site;
  const auto left = detail::left_environment(m, inputs, o);
  const auto right = detail::right_environment(m, inputs, o);
  const std::size_t bl = m.left_bond(o), br = m.right_bond(o);
  std::vector<double> logits(m.out_dim, 0.0);
  for (std::size_t l = 0; l < bl; ++l)
    for (std::size_t c = 0; c < m.out_dim; ++c)
      for (std::size_t r = 0; r < br; ++r) logits[c] += left[l] * m.entry(o, l, c, r) * right[r];
  return logits;
}

inline constexpr std::size_t kDefaultMaterializeCap = std::size_t{1} << 20;

/// The full tensor M with axes (output, input 0, input 1, ...).
inline Tensor materialize(const MpsModel& m, std::size_t cap = kDefaultMaterializeCap) {
  m.validate();
  double total = static_cast<double>(m.out_dim);
  for (std::size_t i = 0; i < m.num_inputs(); ++i) total *= static_cast<double>(m.phys_dim);
  if (total > static_cast<double>(cap))
    throw SizeCapError("materialize: " + std::to_string(static_cast<long double>(total)) +
                       " entries exceed cap " + std::to_string(cap));

  // Running product with rows over chain legs (in chain order) and one open bond.
  std::vector<double> acc(m.sites[0].values());
  std::size_t rows = m.leg_dim(0);
  for (std::size_t k = 1; k < m.length(); ++k) {
    const std::size_t bl = m.left_bond(k), leg = m.leg_dim(k), br = m.right_bond(k);
    std::vector<double> next(rows * leg * br, 0.0);
    auto a = m.sites[k].data();
    for (std::size_t p = 0; p < rows; ++p)
      for (std::size_t l = 0; l < bl; ++l) {
        const double w = acc[p * bl + l];
        if (w == 0.0) continue;
        for (std::size_t s = 0; s < leg; ++s) {
          const double* row = &a[(l * leg + s) * br];
          double* out = &next[(p * leg + s) * br];
          for (std::size_t r = 0; r < br; ++r) out[r] += w * row[r];
        }
      }
    acc = std::move(next);
    rows *= leg;
  }

  Shape chain_shape;
  for (std::size_t k = 0; k < m.length(); ++k) chain_shape.push_back(m.leg_dim(k));
  Tensor chain(chain_shape, std::move(acc));
  std::vector<std::size_t> perm{m.output_site};
  for (std::size_t k = 0; k < m.length(); ++k)
    if (k != m.output_site) perm.push_back(k);
  return transpose(chain, perm);
}

// ---------------------------------------------------------------------------
// Gauge transformations

/// One invertible b x b matrix per internal bond; bond k joins sites k and k+1.
struct GaugeTransform {
  std::vector<Tensor> bond_matrices;
};

/// B_k = Y_{k-1}^{-1} A_k Y_k on every site, leaving the materialized tensor unchanged.
inline MpsModel apply_gauge(const MpsModel& m, const GaugeTransform& g,
                            double cond_cap = kDefaultConditionCap) {
  m.validate();
  if (g.bond_matrices.size() + 1 != m.length())
    throw ShapeError("apply_gauge: expected " + std::to_string(m.length() - 1) + " bond matrices, got " +
                     std::to_string(g.bond_matrices.size()));
  std::vector<Tensor> inverses;
  inverses.reserve(g.bond_matrices.size());
  for (const auto& y : g.bond_matrices) {
    if (y.shape() != Shape{m.bond_dim, m.bond_dim})
      throw ShapeError("apply_gauge: bond matrix has shape " + shape_string(y.shape()));
    inverses.push_back(invert(y, cond_cap));
  }
  MpsModel out = m;
  for (std::size_t k = 0; k < m.length(); ++k) {
    Tensor site = m.sites[k];
    if (k > 0) {
      Tensor rm = reshape(site, {m.left_bond(k), m.leg_dim(k) * m.right_bond(k)});
      site = reshape(matmul(inverses[k - 1], rm), m.site_shape(k));
    }
    if (k + 1 < m.length()) {
      Tensor lm = reshape(site, {m.left_bond(k) * m.leg_dim(k), m.right_bond(k)});
      site = reshape(matmul(lm, g.bond_matrices[k]), m.site_shape(k));
    }
    out.sites[k] = std::move(site);
  }
  return out;
}

inline GaugeTransform inverse_gauge(const GaugeTransform& g, double cond_cap = kDefaultConditionCap) {
  GaugeTransform inv;
  for (const auto& y : g.bond_matrices) inv.bond_matrices.push_back(invert(y, cond_cap));
  return inv;
}

inline GaugeTransform identity_gauge(const MpsModel& m) {
  return GaugeTransform{std::vector<Tensor>(m.length() - 1, Tensor::identity(m.bond_dim))};
}

/// Gaussian bond matrices, each resampled until its condition number is below `cond_cap`.
inline GaugeTransform random_gauge(const MpsModel& m, std::uint64_t seed, double cond_cap = 1e3,
                                   int max_tries = 1000) {
  if (!(cond_cap > 1.0)) throw Error("random_gauge: cond_cap must exceed 1");
  Rng rng(seed);
  GaugeTransform g;
  for (std::size_t k = 0; k + 1 < m.length(); ++k) {
    int tries = 0;
    for (;;) {
      Tensor y = random_tensor({m.bond_dim, m.bond_dim}, Gaussian{0.0, 1.0}, rng);
      if (condition_number(y) < cond_cap) {
        g.bond_matrices.push_back(std::move(y));
        break;
      }
      if (++tries >= max_tries)
        throw Error("random_gauge: no matrix under the condition cap after " + std::to_string(max_tries) +
                    " draws");
    }
  }
  return g;
}

/// Diagonal bond matrices with i.i.d. uniform entries in {-1, +1}.
inline GaugeTransform sign_gauge(const MpsModel& m, std::uint64_t seed) {
  Rng rng(seed);
  std::bernoulli_distribution coin(0.5);
  GaugeTransform g;
  for (std::size_t k = 0; k + 1 < m.length(); ++k) {
    Tensor y({m.bond_dim, m.bond_dim});
    for (std::size_t i = 0; i < m.bond_dim; ++i) y(i, i) = coin(rng) ? 1.0 : -1.0;
    g.bond_matrices.push_back(std::move(y));
  }
  return g;
}

// ---------------------------------------------------------------------------
// Flat parameters and files

inline std::vector<double> flatten_params(const MpsModel& m) {
  std::vector<double> out;
  out.reserve(m.param_count());
  for (const auto& t : m.sites) out.insert(out.end(), t.data().begin(), t.data().end());
  return out;
}

inline MpsModel unflatten_params(const MpsModel& like, std::span<const double> flat) {
  if (flat.size() != like.param_count())
    throw ShapeError("unflatten: expected " + std::to_string(like.param_count()) + " values");
  MpsModel m = like;
  std::size_t off = 0;
  for (auto& t : m.sites) {
    std::copy_n(flat.begin() + static_cast<std::ptrdiff_t>(off), t.size(), t.data().begin());
    off += t.size();
  }
  return m;
}

// File layout: "mps N d b out_dim output_site" then one tensor record per site.

inline void write_model(std::ostream& os, const MpsModel& m) {
  os << "mps " << m.length() << ' ' << m.phys_dim << ' ' << m.bond_dim << ' ' << m.out_dim << ' '
     << m.output_site << '\n';
  for (const auto& t : m.sites) write_tensor(os, t);
}

inline MpsModel read_mps_body(std::istream& is) {
  std::size_t n = 0;
  MpsModel m;
  if (!(is >> n >> m.phys_dim >> m.bond_dim >> m.out_dim >> m.output_site))
    throw Error("read_model: truncated mps header");
  m.sites.reserve(n);
  for (std::size_t k = 0; k < n; ++k) m.sites.push_back(read_tensor(is));
  m.validate();
  return m;
}

inline MpsModel read_mps(std::istream& is) {
  std::string tag;
  if (!(is >> tag) || tag != "mps") throw Error("read_model: expected 'mps' header");
  return read_mps_body(is);
}

}  // namespace mpsguard
