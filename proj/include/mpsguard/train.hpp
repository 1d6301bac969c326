#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "mpsguard/data.hpp"
#include "mpsguard/errors.hpp"
#include "mpsguard/mps.hpp"
#include "mpsguard/neural.hpp"
#include "mpsguard/rng.hpp"
#include "mpsguard/tensor.hpp"

namespace mpsguard {

// ---------------------------------------------------------------------------
// Loss

struct LossAndGrad {
  double loss = 0.0;
  std::vector<double> grad;  // d loss / d logits
};

/// -log softmax(logits)[label] and its gradient softmax - onehot.
inline LossAndGrad cross_entropy(std::span<const double> logits, std::size_t label) {
  if (label >= logits.size())
    throw ShapeError("cross_entropy: label " + std::to_string(label) + " out of range for " +
                     std::to_string(logits.size()) + " logits");
  const double mx = *std::max_element(logits.begin(), logits.end());
  double z = 0.0;
  for (double l : logits) z += std::exp(l - mx);
  LossAndGrad r;
  r.loss = std::log(z) - (logits[label] - mx);
  r.grad.resize(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) r.grad[i] = std::exp(logits[i] - mx) / z;
  r.grad[label] -= 1.0;
  return r;
}

inline std::size_t argmax(std::span<const double> v) {
  return static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
}

// ---------------------------------------------------------------------------
// Adam

struct AdamState {
  std::vector<double> m;
  std::vector<double> v;
  std::uint64_t step = 0;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double l2 = 0.0;  // coupled: adds l2 * theta to the gradient

  AdamState() = default;
  AdamState(std::size_t n, double lr_, double l2_ = 0.0) : m(n, 0.0), v(n, 0.0), lr(lr_), l2(l2_) {}
};

inline void adam_step(AdamState& st, std::span<double> params, std::span<const double> grads) {
  if (params.size() != grads.size() || st.m.size() != params.size() || st.v.size() != params.size())
    throw ShapeError("adam_step: parameter, gradient and state sizes differ");
  ++st.step;
  const double c1 = 1.0 - std::pow(st.beta1, static_cast<double>(st.step));
  const double c2 = 1.0 - std::pow(st.beta2, static_cast<double>(st.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double g = grads[i] + st.l2 * params[i];
    st.m[i] = st.beta1 * st.m[i] + (1.0 - st.beta1) * g;
    st.v[i] = st.beta2 * st.v[i] + (1.0 - st.beta2) * g * g;
    params[i] -= st.lr * (st.m[i] / c1) / (std::sqrt(st.v[i] / c2) + st.eps);
  }
}

// ---------------------------------------------------------------------------
// MPS gradients

struct MpsBatchGradients {
  double loss = 0.0;            // mean cross-entropy
  std::size_t correct = 0;      // argmax hits in the batch
  std::vector<Tensor> sites;    // d mean loss / d site tensors
};

/// Exact gradient of the mean cross-entropy over a batch of embedded inputs.
///
/// Per sample, left environments run up to the output site and right ones
/// down to it; the logit gradient is then folded into whichever side it
/// travels, so every site's gradient is a product of three cached vectors.
inline MpsBatchGradients mps_gradients(const MpsModel& m, std::span<const Tensor> inputs,
                                       std::span<const int> labels) {
  if (inputs.empty() || inputs.size() != labels.size())
    throw ShapeError("mps_gradients: need a nonempty batch with one label per input");
  const std::size_t n = m.length(), o = m.output_site;
  MpsBatchGradients out;
  out.sites.reserve(n);
  for (const auto& t : m.sites) out.sites.emplace_back(t.shape());

  std::vector<std::vector<double>> left(n + 1), right(n + 1);
  for (std::size_t b = 0; b < inputs.size(); ++b) {
    const Tensor& x = inputs[b];
    detail::check_inputs(m, x);
    auto input_of = [&](std::size_t k) { return k < o ? k : k - 1; };

    // left[k]: contraction of sites [0, k) on their inputs, for k <= o
    left[0] = {1.0};
    for (std::size_t k = 0; k < o; ++k) {
      const std::size_t bl = m.left_bond(k), leg = m.leg_dim(k), br = m.right_bond(k);
      std::vector<double> next(br, 0.0);
      for (std::size_t a = 0; a < bl; ++a)
        for (std::size_t s = 0; s < leg; ++s) {
          const double w = left[k][a] * x(input_of(k), s);
          for (std::size_t c = 0; c < br; ++c) next[c] += w * m.entry(k, a, s, c);
        }
      left[k + 1] = std::move(next);
    }
    // right[k]: contraction of sites (k, N) on their inputs, for k >= o
    right[n - 1] = {1.0};
    for (std::size_t k = n - 1; k > o; --k) {
      const std::size_t bl = m.left_bond(k), leg = m.leg_dim(k), br = m.right_bond(k);
      std::vector<double> next(bl, 0.0);
      for (std::size_t a = 0; a < bl; ++a)
        for (std::size_t s = 0; s < leg; ++s) {
          double acc = 0.0;
          for (std::size_t c = 0; c < br; ++c) acc += m.entry(k, a, s, c) * right[k][c];
          next[a] += x(input_of(k), s) * acc;
        }
      right[k - 1] = std::move(next);
    }

    const std::size_t bl = m.left_bond(o), br = m.right_bond(o);
    std::vector<double> logits(m.out_dim, 0.0);
    for (std::size_t a = 0; a < bl; ++a)
      for (std::size_t c = 0; c < m.out_dim; ++c)
        for (std::size_t r = 0; r < br; ++r) logits[c] += left[o][a] * m.entry(o, a, c, r) * right[o][r];
    if (labels[b] < 0) throw DataError("mps_gradients: negative label");
    const auto ce = cross_entropy(logits, static_cast<std::size_t>(labels[b]));
    out.loss += ce.loss;
    out.correct += argmax(logits) == static_cast<std::size_t>(labels[b]);
    const std::vector<double>& g = ce.grad;

    // output site
    {
      auto gd = out.sites[o].data();
      for (std::size_t a = 0; a < bl; ++a)
        for (std::size_t c = 0; c < m.out_dim; ++c)
          for (std::size_t r = 0; r < br; ++r) gd[(a * m.out_dim + c) * br + r] += left[o][a] * g[c] * right[o][r];
    }
    // sites left of the output: carry gradient-weighted right vectors leftwards
    std::vector<double> carry(bl, 0.0);
    for (std::size_t a = 0; a < bl; ++a)
      for (std::size_t c = 0; c < m.out_dim; ++c)
        for (std::size_t r = 0; r < br; ++r) carry[a] += m.entry(o, a, c, r) * g[c] * right[o][r];
    for (std::size_t k = o; k-- > 0;) {
      const std::size_t kl = m.left_bond(k), leg = m.leg_dim(k), kr = m.right_bond(k);
      auto gd = out.sites[k].data();
      std::vector<double> next(kl, 0.0);
      for (std::size_t a = 0; a < kl; ++a)
        for (std::size_t s = 0; s < leg; ++s) {
          const double xs = x(input_of(k), s);
          for (std::size_t c = 0; c < kr; ++c) {
            gd[(a * leg + s) * kr + c] += left[k][a] * xs * carry[c];
            next[a] += m.entry(k, a, s, c) * xs * carry[c];
          }
        }
      carry = std::move(next);
    }
    // sites right of the output
    carry.assign(br, 0.0);
    for (std::size_t a = 0; a < bl; ++a)
      for (std::size_t c = 0; c < m.out_dim; ++c)
        for (std::size_t r = 0; r < br; ++r) carry[r] += left[o][a] * m.entry(o, a, c, r) * g[c];
    for (std::size_t k = o + 1; k < n; ++k) {
      const std::size_t kl = m.left_bond(k), leg = m.leg_dim(k), kr = m.right_bond(k);
      auto gd = out.sites[k].data();
      std::vector<double> next(kr, 0.0);
      for (std::size_t a = 0; a < kl; ++a)
        for (std::size_t s = 0; s < leg; ++s) {
          const double xs = x(input_of(k), s);
          for (std::size_t c = 0; c < kr; ++c) {
            gd[(a * leg + s) * kr + c] += carry[a] * xs * right[k][c];
            next[c] += carry[a] * xs * m.entry(k, a, s, c);
          }
        }
      carry = std::move(next);
    }
  }
  const double inv = 1.0 / static_cast<double>(inputs.size());
  out.loss *= inv;
  for (auto& t : out.sites) t *= inv;
  return out;
}

// ---------------------------------------------------------------------------
// Training loops

struct TrainConfig {
  std::size_t batch_size = 8;
  double learning_rate = 3e-4;
  double l2 = 0.0;
  std::size_t epochs = 10;
  double validation_fraction = 0.0;
  std::uint64_t seed = 0;
  /// MPS only: embed each row once with a per-row seed instead of redrawing every epoch.
  bool fixed_embedding = false;
  /// Stop after this many epochs without a new best validation accuracy (0 = never).
  std::size_t patience = 0;

  void validate() const {
    if (batch_size == 0) throw Error("train config: batch_size must be positive");
    if (!(learning_rate > 0.0)) throw Error("train config: learning_rate must be positive");
    if (!(l2 >= 0.0)) throw Error("train config: l2 must be nonnegative");
    if (!(validation_fraction >= 0.0 && validation_fraction < 1.0))
      throw Error("train config: validation_fraction must lie in [0, 1)");
  }
};

/// Feedforward baseline: batches of 8, Adam 3e-4, l2 6e-3, 1250 epochs, best-validation snapshot.
inline TrainConfig nn_train_defaults() { return {8, 3e-4, 6e-3, 1250, 0.1, 0, false, 0}; }

/// MPS: batches of 100, Adam 0.1, 20 epochs, final model.
inline TrainConfig mps_train_defaults() { return {100, 0.1, 0.0, 20, 0.0, 0, false, 0}; }

struct EpochRecord {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double train_acc = 0.0;
  double val_acc = std::numeric_limits<double>::quiet_NaN();  // NaN without a validation split
};

template <class Model>
struct TrainResult {
  Model model;
  std::vector<EpochRecord> history;
  std::size_t best_epoch = 0;  // 0 = initial model
};

inline void write_history_csv(std::ostream& os, const std::vector<EpochRecord>& h) {
  os << "epoch,train_loss,train_acc,val_acc\n";
  char buf[128];
  for (const auto& r : h) {
    std::snprintf(buf, sizeof buf, "%zu,%.6f,%.6f,%s\n", r.epoch, r.train_loss, r.train_acc,
                  std::isnan(r.val_acc) ? "" : std::to_string(r.val_acc).c_str());
    os << buf;
  }
}

namespace detail {

struct Split {
  std::vector<std::size_t> train;
  std::vector<std::size_t> val;
};

inline Split split_rows(const std::vector<int>& labels, double val_fraction, std::uint64_t seed) {
  std::vector<std::size_t> idx(labels.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  const auto n_val = static_cast<std::size_t>(std::floor(val_fraction * static_cast<double>(idx.size())));
  Split s;
  if (n_val > 0) {
    Rng rng(derive_seed(seed, {0x5B11}));
    std::shuffle(idx.begin(), idx.end(), rng);
  }
  s.val.assign(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_val));
  s.train.assign(idx.begin() + static_cast<std::ptrdiff_t>(n_val), idx.end());
  bool seen[2] = {false, false};
  for (std::size_t i : s.train)
    if (labels[i] == 0 || labels[i] == 1) seen[labels[i]] = true;
  if (!seen[0] || !seen[1])
    throw DataError("training split is missing class " + std::to_string(seen[0] ? 1 : 0));
  return s;
}

inline std::vector<std::size_t> shuffled(std::vector<std::size_t> idx, std::uint64_t seed, std::size_t epoch) {
  Rng rng(derive_seed(seed, {0xE90C, epoch}));
  std::shuffle(idx.begin(), idx.end(), rng);
  return idx;
}

}  // namespace detail

/// Fraction of rows the network classifies correctly (argmax of logits).
inline double mlp_accuracy(const Mlp& m, const std::vector<std::vector<double>>& x, const std::vector<int>& y,
                           std::span<const std::size_t> rows) {
  if (rows.empty()) return std::numeric_limits<double>::quiet_NaN();
  MlpCache cache;
  std::size_t hit = 0;
  for (std::size_t r : rows) hit += argmax(detail::mlp_forward_unchecked(m, x[r], cache)) == static_cast<std::size_t>(y[r]);
  return static_cast<double>(hit) / static_cast<double>(rows.size());
}

inline double mlp_accuracy(const Mlp& m, const EncodedTable& t) {
  std::vector<std::size_t> rows(t.x.size());
  std::iota(rows.begin(), rows.end(), std::size_t{0});
  return mlp_accuracy(m, t.x, t.y, rows);
}

/// Training on explicit row sets; `val_rows` may be empty.
inline TrainResult<Mlp> train_mlp(const Mlp& init, const EncodedTable& data, std::span<const std::size_t> train_rows,
                                  std::span<const std::size_t> val_rows, const TrainConfig& cfg) {
  cfg.validate();
  init.validate();
  if (train_rows.empty()) throw DataError("train_mlp: empty training split");
  for (const auto& row : data.x)
    if (row.size() != init.input_dim()) throw ShapeError("train_mlp: input width does not match the network");
  const detail::Split split{{train_rows.begin(), train_rows.end()}, {val_rows.begin(), val_rows.end()}};

  TrainResult<Mlp> res{init, {}, 0};
  Mlp model = init;
  auto params = flatten_params(model);
  AdamState st(params.size(), cfg.learning_rate, cfg.l2);
  double best = split.val.empty() ? 0.0 : mlp_accuracy(model, data.x, data.y, split.val);

  MlpCache cache;
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const auto order = detail::shuffled(split.train, cfg.seed, epoch);
    double loss_sum = 0.0;
    std::size_t hits = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t stop = std::min(order.size(), start + cfg.batch_size);
      MlpGradients g = detail::zero_gradients(model);
      for (std::size_t i = start; i < stop; ++i) {
        const std::size_t r = order[i];
        const auto logits = detail::mlp_forward_unchecked(model, data.x[r], cache);
        const auto ce = cross_entropy(logits, static_cast<std::size_t>(data.y[r]));
        loss_sum += ce.loss;
        hits += argmax(logits) == static_cast<std::size_t>(data.y[r]);
        detail::mlp_backward_accumulate(model, cache, ce.grad, g);
      }
      auto flat = g.flat();
      const double inv = 1.0 / static_cast<double>(stop - start);
      for (double& v : flat) v *= inv;
      adam_step(st, params, flat);
      model = unflatten_params(model, params);
    }
    EpochRecord rec{epoch, loss_sum / static_cast<double>(order.size()),
                    static_cast<double>(hits) / static_cast<double>(order.size())};
    if (!split.val.empty()) {
      rec.val_acc = mlp_accuracy(model, data.x, data.y, split.val);
      if (rec.val_acc > best) {
        best = rec.val_acc;
        res.model = model;
        res.best_epoch = epoch;
      }
    }
    res.history.push_back(rec);
    if (!split.val.empty() && cfg.patience > 0 && epoch - res.best_epoch >= cfg.patience) break;
  }
  if (split.val.empty()) {
    res.model = model;
    res.best_epoch = res.history.size();
  }
  return res;
}

/// Mini-batch Adam on the mean cross-entropy; returns the best-validation
/// snapshot when a validation split is configured, else the final model.
inline TrainResult<Mlp> train_mlp(const Mlp& init, const EncodedTable& data, const TrainConfig& cfg) {
  if (data.x.empty()) throw DataError("train_mlp: empty dataset");
  const auto split = detail::split_rows(data.y, cfg.validation_fraction, cfg.seed);
  return train_mlp(init, data, split.train, split.val, cfg);
}

inline TrainResult<Mlp> train_model(const Mlp& init, const Dataset& data, const TrainConfig& cfg) {
  return train_mlp(init, encode_onehot(data), cfg);
}

/// Embedded inputs of a dataset's rows.
inline std::vector<Tensor> embed_rows(const FeatureMap& fm, const Dataset& d, std::span<const std::size_t> rows,
                                      std::uint64_t seed) {
  std::vector<Tensor> out;
  out.reserve(rows.size());
  for (std::size_t r : rows) out.push_back(embed(fm, raw_inputs(d, r), derive_seed(seed, {r})).vectors);
  return out;
}

/// Accuracy of an MPS on the given rows, each embedded with a per-row seed.
inline double mps_accuracy(const MpsModel& m, const FeatureMap& fm, const Dataset& d,
                           std::span<const std::size_t> rows, std::uint64_t seed) {
  if (rows.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::size_t hit = 0;
  for (std::size_t r : rows) {
    const auto e = embed(fm, raw_inputs(d, r), derive_seed(seed, {r}));
    hit += argmax(forward(m, e.vectors)) == static_cast<std::size_t>(d.label_of(r));
  }
  return static_cast<double>(hit) / static_cast<double>(rows.size());
}

inline double mps_accuracy(const MpsModel& m, const Dataset& d, std::uint64_t seed) {
  std::vector<std::size_t> rows(d.size());
  std::iota(rows.begin(), rows.end(), std::size_t{0});
  return mps_accuracy(m, mps_feature_map(d), d, rows, seed);
}

inline TrainResult<MpsModel> train_mps(const MpsModel& init, const Dataset& data, const FeatureMap& fm,
                                       const TrainConfig& cfg) {
  cfg.validate();
  init.validate();
  fm.validate();
  if (data.size() == 0) throw DataError("train_mps: empty dataset");
  if (fm.features.size() != init.num_inputs())
    throw ShapeError("train_mps: feature map has " + std::to_string(fm.features.size()) + " features, model " +
                     std::to_string(init.num_inputs()) + " inputs");
  std::vector<int> labels(data.size());
  for (std::size_t r = 0; r < data.size(); ++r) labels[r] = data.label_of(r);
  const auto split = detail::split_rows(labels, cfg.validation_fraction, cfg.seed);
  const std::uint64_t val_seed = derive_seed(cfg.seed, {0x7A1});

  TrainResult<MpsModel> res{init, {}, 0};
  MpsModel model = init;
  auto params = flatten_params(model);
  AdamState st(params.size(), cfg.learning_rate, cfg.l2);
  double best = split.val.empty() ? 0.0 : mps_accuracy(model, fm, data, split.val, val_seed);

  std::vector<Tensor> fixed;
  if (cfg.fixed_embedding) fixed = embed_rows(fm, data, split.train, derive_seed(cfg.seed, {0xF1E}));
  std::vector<std::size_t> pos(data.size());
  for (std::size_t i = 0; i < split.train.size(); ++i) pos[split.train[i]] = i;

  std::vector<Tensor> batch;
  std::vector<int> batch_labels;
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const auto order = detail::shuffled(split.train, cfg.seed, epoch);
    Rng emb_rng(derive_seed(cfg.seed, {0xE3B, epoch}));
    double loss_sum = 0.0;
    std::size_t hits = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t stop = std::min(order.size(), start + cfg.batch_size);
      batch.clear();
      batch_labels.clear();
      for (std::size_t i = start; i < stop; ++i) {
        const std::size_t r = order[i];
        batch.push_back(cfg.fixed_embedding ? fixed[pos[r]] : embed(fm, raw_inputs(data, r), emb_rng).vectors);
        batch_labels.push_back(labels[r]);
      }
      const auto g = mps_gradients(model, batch, batch_labels);
      loss_sum += g.loss * static_cast<double>(stop - start);
      hits += g.correct;
      std::vector<double> flat;
      flat.reserve(params.size());
      for (const auto& t : g.sites) flat.insert(flat.end(), t.data().begin(), t.data().end());
      adam_step(st, params, flat);
      model = unflatten_params(model, params);
    }
    if (!std::all_of(params.begin(), params.end(), [](double v) { return std::isfinite(v); }))
      throw Error("train_mps: parameters diverged at epoch " + std::to_string(epoch));
    EpochRecord rec{epoch, loss_sum / static_cast<double>(order.size()),
                    static_cast<double>(hits) / static_cast<double>(order.size())};
    if (!split.val.empty()) {
      rec.val_acc = mps_accuracy(model, fm, data, split.val, val_seed);
      if (rec.val_acc > best) {
        best = rec.val_acc;
        res.model = model;
        res.best_epoch = epoch;
      }
    }
    res.history.push_back(rec);
    if (!split.val.empty() && cfg.patience > 0 && epoch - res.best_epoch >= cfg.patience) break;
  }
  if (split.val.empty()) {
    res.model = model;
    res.best_epoch = res.history.size();
  }
  return res;
}

inline TrainResult<MpsModel> train_model(const MpsModel& init, const Dataset& data, const TrainConfig& cfg) {
  return train_mps(init, data, mps_feature_map(data), cfg);
}

// ---------------------------------------------------------------------------
// Toy model (two inputs, sigmoid output, binary cross-entropy)

inline double toy_accuracy(const ToyModel& m, const Dataset& d) {
  const std::size_t xr = d.feature_index("x_rel"), xi = d.feature_index("x_irr");
  std::size_t hit = 0;
  for (std::size_t r = 0; r < d.size(); ++r)
    hit += (toy_preactivation(m, d.rows[r][xr], d.rows[r][xi]) > 0.0) == (d.label_of(r) == 1);
  return static_cast<double>(hit) / static_cast<double>(d.size());
}

inline TrainResult<ToyModel> train_toy(const ToyModel& init, const Dataset& data, const TrainConfig& cfg) {
  cfg.validate();
  if (data.size() == 0) throw DataError("train_toy: empty dataset");
  const std::size_t xr = data.feature_index("x_rel"), xi = data.feature_index("x_irr");
  std::vector<int> labels(data.size());
  for (std::size_t r = 0; r < data.size(); ++r) labels[r] = data.label_of(r);
  const auto split = detail::split_rows(labels, 0.0, cfg.seed);

  TrainResult<ToyModel> res{init, {}, 0};
  ToyModel model = init;
  std::vector<double> params{model.w_rel, model.w_irr, model.bias};
  AdamState st(3, cfg.learning_rate, cfg.l2);
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const auto order = detail::shuffled(split.train, cfg.seed, epoch);
    double loss_sum = 0.0;
    std::size_t hits = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t stop = std::min(order.size(), start + cfg.batch_size);
      std::vector<double> g(3, 0.0);
      for (std::size_t i = start; i < stop; ++i) {
        const std::size_t r = order[i];
        const auto l = toy_loss(model, data.rows[r][xr], data.rows[r][xi], labels[r]);
        loss_sum += l.loss;
        hits += (toy_preactivation(model, data.rows[r][xr], data.rows[r][xi]) > 0.0) == (labels[r] == 1);
        g[0] += l.grads.w_rel;
        g[1] += l.grads.w_irr;
        g[2] += l.grads.bias;
      }
      for (double& v : g) v /= static_cast<double>(stop - start);
      adam_step(st, params, g);
      model.w_rel = params[0];
      model.w_irr = params[1];
      model.bias = params[2];
    }
    res.history.push_back({epoch, loss_sum / static_cast<double>(order.size()),
                           static_cast<double>(hits) / static_cast<double>(order.size())});
  }
  res.model = model;
  res.best_epoch = cfg.epochs;
  return res;
}

}  // namespace mpsguard
