#pragma once

// Dense ELU networks for behaviour cloning. The multi-task network has a
// two-layer shared trunk and one (hidden, linear) head per task; the
// single-task baseline is the same stack with a single head. All parameters
// live in one flat vector, layer by layer (W column-major, then b), in the
// order trunk0, trunk1, head0.hidden, head0.out, head1.hidden, ...

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <string>
#include <string_view>
#include <vector>

#include "quadmtl/dataset.hpp"
#include "quadmtl/errors.hpp"
#include "quadmtl/rng.hpp"

namespace quadmtl {

enum class ArchKind : std::uint8_t { kMultiTask = 0, kSingleTask = 1 };

inline constexpr std::string_view arch_kind_name(ArchKind k) {
  return k == ArchKind::kMultiTask ? "mtl" : "single";
}

struct ArchSpec {
  ArchKind kind = ArchKind::kMultiTask;
  int input_dim = kObsDim;
  int output_dim = kActDim;
  int hidden = 128;
  int num_tasks = 3;  // heads; always 1 for the single-task kind
  std::uint64_t seed = 0;

  int num_heads() const { return kind == ArchKind::kSingleTask ? 1 : num_tasks; }

  void validate() const {
    if (input_dim != kObsDim || output_dim != kActDim)
      throw ShapeMismatch("network dims must be 34 -> 12");
    if (hidden < 1) throw ConfigError("train: hidden width must be >= 1");
    if (num_tasks < 1) throw ConfigError("train: num_tasks must be >= 1");
    if (kind == ArchKind::kSingleTask && num_tasks != 1)
      throw ConfigError("single-task network has exactly one head");
  }
};

inline std::size_t expected_param_count(const ArchSpec& a) {
  const std::size_t h = a.hidden, in = a.input_dim, out = a.output_dim;
  return h * (in + 1) + h * (h + 1) + a.num_heads() * (h * (h + 1) + out * (h + 1));
}

inline double elu(double x) { return x > 0.0 ? x : std::expm1(x); }

template <class Derived>
Eigen::MatrixXd elu(const Eigen::MatrixBase<Derived>& z) {
  return z.unaryExpr([](double x) { return elu(x); });
}

// d elu / dz expressed through the activation a = elu(z).
inline Eigen::MatrixXd elu_grad(const Eigen::MatrixXd& z, const Eigen::MatrixXd& a) {
  return (z.array() > 0.0).select(Eigen::MatrixXd::Ones(z.rows(), z.cols()), a.array() + 1.0);
}

struct LayerShape {
  int rows = 0;  // outputs
  int cols = 0;  // inputs
  std::size_t offset = 0;
  std::size_t size() const { return std::size_t(rows) * cols + rows; }
};

class MtlNetwork {
 public:
  MtlNetwork() = default;

  explicit MtlNetwork(const ArchSpec& arch) : arch_(arch) {
    arch.validate();
    const int h = arch.hidden;
    add_layer(h, arch.input_dim);
    add_layer(h, h);
    for (int k = 0; k < arch.num_heads(); ++k) {
      add_layer(h, h);
      add_layer(arch.output_dim, h);
    }
    params_ = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(total_));
  }

  const ArchSpec& arch() const { return arch_; }
  const NormStats& norm() const { return norm_; }
  NormStats& norm() { return norm_; }
  Eigen::VectorXd& params() { return params_; }
  const Eigen::VectorXd& params() const { return params_; }
  int num_layers() const { return static_cast<int>(layers_.size()); }
  const LayerShape& layer(int l) const { return layers_[l]; }

  static int head_hidden_layer(int head) { return 2 + 2 * head; }
  static int head_out_layer(int head) { return 3 + 2 * head; }

  Eigen::Map<Eigen::MatrixXd> weight(int l) { return weight_of(params_, l); }
  Eigen::Map<const Eigen::MatrixXd> weight(int l) const { return weight_of(params_, l); }
  Eigen::Map<Eigen::VectorXd> bias(int l) { return bias_of(params_, l); }
  Eigen::Map<const Eigen::VectorXd> bias(int l) const { return bias_of(params_, l); }

  // Views of layer l inside any vector laid out like the parameters.
  Eigen::Map<Eigen::MatrixXd> weight_of(Eigen::VectorXd& flat, int l) const {
    const LayerShape& s = layers_[l];
    return {flat.data() + s.offset, s.rows, s.cols};
  }
  Eigen::Map<const Eigen::MatrixXd> weight_of(const Eigen::VectorXd& flat, int l) const {
    const LayerShape& s = layers_[l];
    return {flat.data() + s.offset, s.rows, s.cols};
  }
  Eigen::Map<Eigen::VectorXd> bias_of(Eigen::VectorXd& flat, int l) const {
    const LayerShape& s = layers_[l];
    return {flat.data() + s.offset + std::size_t(s.rows) * s.cols, s.rows};
  }
  Eigen::Map<const Eigen::VectorXd> bias_of(const Eigen::VectorXd& flat, int l) const {
    const LayerShape& s = layers_[l];
    return {flat.data() + s.offset + std::size_t(s.rows) * s.cols, s.rows};
  }

  /// Head used for a task id. The single-task network ignores the id.
  int head_of(int task) const {
    if (arch_.kind == ArchKind::kSingleTask) return 0;
    if (task < 0 || task >= arch_.num_tasks)
      throw UnknownTask("task id " + std::to_string(task) + " not in [0, " +
                        std::to_string(arch_.num_tasks) + ")");
    return task;
  }

  /// Batched forward on normalised inputs (one column per sample).
  Eigen::MatrixXd forward_normalized(const Eigen::MatrixXd& x, int head) const {
    Eigen::MatrixXd a = elu((weight(0) * x).colwise() + bias(0));
    a = elu((weight(1) * a).colwise() + bias(1));
    const int lh = head_hidden_layer(head), lo = head_out_layer(head);
    a = elu((weight(lh) * a).colwise() + bias(lh));
    return (weight(lo) * a).colwise() + bias(lo);
  }

  /// Desired joint positions for a raw observation.
  JointVec forward(const ObsVec& obs, int task) const {
    const int head = head_of(task);
    const Eigen::MatrixXd x = norm_.apply(obs);
    return forward_normalized(x, head);
  }

  /// Rounds every parameter and the normalisation statistics to binary32,
  /// the precision of the weights file.
  void round_to_f32() {
    for (Eigen::Index i = 0; i < params_.size(); ++i)
      params_[i] = static_cast<double>(static_cast<float>(params_[i]));
    for (int i = 0; i < kObsDim; ++i) {
      norm_.mean[i] = static_cast<double>(static_cast<float>(norm_.mean[i]));
      norm_.std[i] = static_cast<double>(static_cast<float>(norm_.std[i]));
    }
  }

 private:
  void add_layer(int rows, int cols) {
    layers_.push_back({rows, cols, total_});
    total_ += layers_.back().size();
  }

  ArchSpec arch_;
  NormStats norm_;
  std::vector<LayerShape> layers_;
  std::size_t total_ = 0;
  Eigen::VectorXd params_;
};

/// He-style normal initialisation with the ELU gain sqrt(1.55); zero biases.
inline void init_params(MtlNetwork& net, std::uint64_t seed) {
  Rng rng(seed);
  for (int l = 0; l < net.num_layers(); ++l) {
    auto w = net.weight(l);
    const double sd = std::sqrt(1.55 / static_cast<double>(w.cols()));
    for (Eigen::Index c = 0; c < w.cols(); ++c)
      for (Eigen::Index r = 0; r < w.rows(); ++r) w(r, c) = sd * rng.normal();
    net.bias(l).setZero();
  }
}

// ---------------------------------------------------------------------------
// Loss and gradients

/// Normalised inputs and targets of one task, one column per sample.
struct TaskBatch {
  int head = 0;
  Eigen::MatrixXd x;  // input_dim x n
  Eigen::MatrixXd y;  // output_dim x n
};

struct LossValue {
  double sse = 0.0;      // sum over samples of |prediction - target|^2
  std::size_t count = 0;  // samples
  double mean() const { return count ? sse / static_cast<double>(count) : 0.0; }
};

/// Summed squared error over the batches (task order, then sample order). If
/// grad is non-null it receives d(sse / count)/d(params), laid out like the
/// parameter vector.
inline LossValue loss_and_gradient(const MtlNetwork& net, const std::vector<TaskBatch>& batches,
                                   Eigen::VectorXd* grad) {
  LossValue out;
  for (const TaskBatch& b : batches) out.count += static_cast<std::size_t>(b.x.cols());
  if (grad) grad->setZero(net.params().size());
  if (out.count == 0) return out;
  const double scale = 2.0 / static_cast<double>(out.count);

  for (const TaskBatch& b : batches) {
    if (b.x.cols() == 0) continue;
    const int lh = MtlNetwork::head_hidden_layer(b.head);
    const int lo = MtlNetwork::head_out_layer(b.head);

    const Eigen::MatrixXd z0 = (net.weight(0) * b.x).colwise() + net.bias(0);
    const Eigen::MatrixXd a0 = elu(z0);
    const Eigen::MatrixXd z1 = (net.weight(1) * a0).colwise() + net.bias(1);
    const Eigen::MatrixXd a1 = elu(z1);
    const Eigen::MatrixXd z2 = (net.weight(lh) * a1).colwise() + net.bias(lh);
    const Eigen::MatrixXd a2 = elu(z2);
    const Eigen::MatrixXd pred = (net.weight(lo) * a2).colwise() + net.bias(lo);
    const Eigen::MatrixXd err = pred - b.y;
    out.sse += err.squaredNorm();
    if (!grad) continue;

    Eigen::VectorXd& g = *grad;
    Eigen::MatrixXd d = scale * err;
    net.weight_of(g, lo).noalias() += d * a2.transpose();
    net.bias_of(g, lo) += d.rowwise().sum();
    d = (net.weight(lo).transpose() * d).cwiseProduct(elu_grad(z2, a2));
    net.weight_of(g, lh).noalias() += d * a1.transpose();
    net.bias_of(g, lh) += d.rowwise().sum();
    d = (net.weight(lh).transpose() * d).cwiseProduct(elu_grad(z1, a1));
    net.weight_of(g, 1).noalias() += d * a0.transpose();
    net.bias_of(g, 1) += d.rowwise().sum();
    d = (net.weight(1).transpose() * d).cwiseProduct(elu_grad(z0, a0));
    net.weight_of(g, 0).noalias() += d * b.x.transpose();
    net.bias_of(g, 0) += d.rowwise().sum();
  }
  return out;
}

// ---------------------------------------------------------------------------
// Optimiser

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  Eigen::VectorXd m;
  Eigen::VectorXd v;
  long t = 0;
};

/// One bias-corrected Adam update at learning rate lr.
inline void adam_step(Eigen::VectorXd& params, const Eigen::VectorXd& grad, AdamState& st,
                      const AdamConfig& cfg, double lr) {
  if (st.m.size() != params.size()) {
    st.m = Eigen::VectorXd::Zero(params.size());
    st.v = Eigen::VectorXd::Zero(params.size());
    st.t = 0;
  }
  ++st.t;
  st.m = cfg.beta1 * st.m + (1.0 - cfg.beta1) * grad;
  st.v = cfg.beta2 * st.v + (1.0 - cfg.beta2) * grad.cwiseAbs2();
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(st.t));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(st.t));
  params.array() -= lr * (st.m.array() / c1) / ((st.v.array() / c2).sqrt() + cfg.eps);
}

// ---------------------------------------------------------------------------
// Training

enum class LrSchedule { kConstant, kCosine };

struct TrainConfig {
  int epochs = 30;
  int batch_size = 256;
  AdamConfig adam;
  LrSchedule schedule = LrSchedule::kCosine;
  double lr_final_fraction = 0.05;  // cosine floor relative to adam.lr
  double val_fraction = 0.1;
  std::uint64_t seed = 0;

  void validate() const {
    if (epochs < 1) throw ConfigError("train: epochs must be >= 1");
    if (batch_size < 1) throw ConfigError("train: batch_size must be >= 1");
    if (!(adam.lr > 0)) throw ConfigError("train: learning_rate must be > 0");
    if (!(adam.beta1 >= 0 && adam.beta1 < 1 && adam.beta2 >= 0 && adam.beta2 < 1))
      throw ConfigError("train: adam betas must be in [0,1)");
    if (!(adam.eps > 0)) throw ConfigError("train: adam eps must be > 0");
    if (!(val_fraction > 0 && val_fraction <= 0.5))
      throw ConfigError("train: val_fraction must be in (0, 0.5]");
    if (!(lr_final_fraction > 0 && lr_final_fraction <= 1))
      throw ConfigError("train: lr_final_fraction must be in (0, 1]");
  }

  double lr_at(int epoch) const {  // epoch is 0-based
    if (schedule == LrSchedule::kConstant || epochs == 1) return adam.lr;
    const double u = static_cast<double>(epoch) / (epochs - 1);
    const double f = lr_final_fraction + (1.0 - lr_final_fraction) * 0.5 * (1.0 + std::cos(M_PI * u));
    return adam.lr * f;
  }
};

struct EpochLoss {
  int epoch = 0;                 // 1-based
  std::vector<double> train;     // per task, per-sample mean
  std::vector<double> val;       // per task, per-sample mean
  double val_total = 0.0;        // sum over tasks
};

struct TrainResult {
  MtlNetwork net;
  std::vector<EpochLoss> curve;
  int best_epoch = 0;
};

namespace detail {

inline void fill_columns(const std::vector<DemoRecord>& recs, const std::vector<std::size_t>& idx,
                         const NormStats& norm, Eigen::MatrixXd& x, Eigen::MatrixXd& y) {
  x.resize(kObsDim, static_cast<Eigen::Index>(idx.size()));
  y.resize(kActDim, static_cast<Eigen::Index>(idx.size()));
  for (std::size_t c = 0; c < idx.size(); ++c) {
    const DemoRecord& r = recs[idx[c]];
    for (int i = 0; i < kObsDim; ++i) x(i, c) = (r.obs[i] - norm.mean[i]) / norm.std[i];
    for (int i = 0; i < kActDim; ++i) y(i, c) = r.act[i];
  }
}

}  // namespace detail

using EpochCallback = std::function<void(const EpochLoss&)>;

/// Trains on per-task record groups (group k is task k). The multi-task
/// network routes group k to head k; the single-task network sends every
/// group through its one head. Returns the parameters of the epoch with the
/// lowest total validation loss, rounded to binary32.
inline TrainResult train(const std::vector<std::vector<DemoRecord>>& groups, ArchSpec arch,
                         const TrainConfig& cfg, const EpochCallback& on_epoch = {}) {
  cfg.validate();
  const int k_tasks = static_cast<int>(groups.size());
  if (k_tasks == 0) throw EmptyDataset("no task data");
  if (arch.kind == ArchKind::kMultiTask) arch.num_tasks = k_tasks;
  else arch.num_tasks = 1;
  arch.validate();

  // Per-task train/validation split.
  Rng split_rng(derive_seed(cfg.seed, "train.split"));
  std::vector<std::vector<std::size_t>> tr_idx(k_tasks), va_idx(k_tasks);
  std::vector<DemoRecord> fit_set;
  for (int k = 0; k < k_tasks; ++k) {
    const auto n = groups[k].size();
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = i;
    split_rng.shuffle(idx);
    const auto n_val = static_cast<std::size_t>(std::ceil(cfg.val_fraction * static_cast<double>(n)));
    if (n < 2 || n - n_val < 1 || n_val < 1)
      throw EmptyDataset("task " + std::to_string(k) + " has too few records (" +
                         std::to_string(n) + ")");
    va_idx[k].assign(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_val));
    tr_idx[k].assign(idx.begin() + static_cast<std::ptrdiff_t>(n_val), idx.end());
    std::sort(va_idx[k].begin(), va_idx[k].end());
    std::sort(tr_idx[k].begin(), tr_idx[k].end());
    for (std::size_t i : tr_idx[k]) fit_set.push_back(groups[k][i]);
  }
  std::size_t total_train = fit_set.size();
  if (total_train < static_cast<std::size_t>(cfg.batch_size))
    throw EmptyDataset("fewer training records than batch_size");

  MtlNetwork net(arch);
  net.norm() = fit_norm_stats(fit_set);
  fit_set.clear();
  fit_set.shrink_to_fit();
  net.round_to_f32();  // statistics at file precision from the start
  init_params(net, arch.seed);

  std::vector<Eigen::MatrixXd> xt(k_tasks), yt(k_tasks), xv(k_tasks), yv(k_tasks);
  for (int k = 0; k < k_tasks; ++k) {
    detail::fill_columns(groups[k], tr_idx[k], net.norm(), xt[k], yt[k]);
    detail::fill_columns(groups[k], va_idx[k], net.norm(), xv[k], yv[k]);
  }
  auto head_for = [&](int k) { return arch.kind == ArchKind::kMultiTask ? k : 0; };

  // Balanced minibatches: each batch draws an equal share from every task.
  // Smaller tasks cycle through fresh permutations.
  const int per_task = std::max(1, cfg.batch_size / k_tasks);
  std::size_t largest = 0;
  for (int k = 0; k < k_tasks; ++k) largest = std::max<std::size_t>(largest, xt[k].cols());
  const std::size_t batches = (largest + per_task - 1) / per_task;

  Rng shuffle_rng(derive_seed(cfg.seed, "train.shuffle"));
  std::vector<std::vector<std::size_t>> order(k_tasks);
  std::vector<std::size_t> cursor(k_tasks, 0);
  auto reshuffle = [&](int k) {
    order[k].resize(static_cast<std::size_t>(xt[k].cols()));
    for (std::size_t i = 0; i < order[k].size(); ++i) order[k][i] = i;
    shuffle_rng.shuffle(order[k]);
    cursor[k] = 0;
  };

  AdamState adam;
  Eigen::VectorXd grad;
  TrainResult res;
  double best = std::numeric_limits<double>::infinity();
  Eigen::VectorXd best_params = net.params();
  std::vector<TaskBatch> batch(k_tasks);

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (int k = 0; k < k_tasks; ++k) reshuffle(k);
    const double lr = cfg.lr_at(epoch);
    std::vector<LossValue> train_loss(k_tasks);

    for (std::size_t bi = 0; bi < batches; ++bi) {
      for (int k = 0; k < k_tasks; ++k) {
        TaskBatch& tb = batch[k];
        tb.head = head_for(k);
        tb.x.resize(kObsDim, per_task);
        tb.y.resize(kActDim, per_task);
        for (int c = 0; c < per_task; ++c) {
          if (cursor[k] == order[k].size()) reshuffle(k);
          const auto col = static_cast<Eigen::Index>(order[k][cursor[k]++]);
          tb.x.col(c) = xt[k].col(col);
          tb.y.col(c) = yt[k].col(col);
        }
      }
      loss_and_gradient(net, batch, &grad);
      for (int k = 0; k < k_tasks; ++k) {
        // Per-task bookkeeping uses the pre-update parameters.
        const double sse = (net.forward_normalized(batch[k].x, batch[k].head) - batch[k].y).squaredNorm();
        train_loss[k].sse += sse;
        train_loss[k].count += static_cast<std::size_t>(per_task);
      }
      if (!grad.allFinite())
        throw NonFiniteLoss(epoch + 1, "non-finite gradient at batch " + std::to_string(bi));
      adam_step(net.params(), grad, adam, cfg.adam, lr);
    }

    EpochLoss el;
    el.epoch = epoch + 1;
    for (int k = 0; k < k_tasks; ++k) {
      el.train.push_back(train_loss[k].mean());
      const double sse = (net.forward_normalized(xv[k], head_for(k)) - yv[k]).squaredNorm();
      el.val.push_back(sse / static_cast<double>(xv[k].cols()));
      el.val_total += el.val.back();
      if (!std::isfinite(el.train.back()) || !std::isfinite(el.val.back()))
        throw NonFiniteLoss(epoch + 1, "task " + std::to_string(k) + " loss is not finite");
    }
    if (el.val_total < best) {
      best = el.val_total;
      best_params = net.params();
      res.best_epoch = el.epoch;
    }
    res.curve.push_back(el);
    if (on_epoch) on_epoch(el);
  }

  net.params() = best_params;
  net.round_to_f32();
  res.net = std::move(net);
  return res;
}

// ---------------------------------------------------------------------------
// Summed objective over whole datasets

struct TotalLoss {
  double sum = 0.0;                // sum over tasks and samples of |pi - a|^2
  double mean = 0.0;               // sum / samples
  std::vector<double> per_task;    // per-task sums
};

/// groups[k] holds records of task k; each goes through that task's head.
inline TotalLoss total_loss(const MtlNetwork& net, const std::vector<std::vector<DemoRecord>>& groups) {
  TotalLoss out;
  std::size_t n = 0;
  for (std::size_t k = 0; k < groups.size(); ++k) {
    net.head_of(static_cast<int>(k));
    double s = 0.0;
    for (const DemoRecord& r : groups[k]) {
      ObsVec o;
      for (int i = 0; i < kObsDim; ++i) o[i] = r.obs[i];
      const JointVec p = net.forward(o, static_cast<int>(k));
      for (int i = 0; i < kActDim; ++i) {
        const double e = p[i] - r.act[i];
        s += e * e;
      }
    }
    out.per_task.push_back(s);
    out.sum += s;
    n += groups[k].size();
  }
  out.mean = n ? out.sum / static_cast<double>(n) : 0.0;
  return out;
}

}  // namespace quadmtl
