#include "rankpose/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <numeric>
#include <random>
#include <string>
#include <thread>

#include "rankpose/error.hpp"

namespace rankpose {
namespace {

// Runs fn(i) for i in [0, n) on up to `workers` threads with a static,
// contiguous split. Callers write to per-index slots only, so results do not
// depend on the worker count.
template <typename Fn>
void parallel_for(std::size_t n, std::size_t workers, Fn&& fn) {
  if (workers <= 1 || n < 2) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  workers = std::min(workers, n);
  std::vector<std::exception_ptr> errors(workers);
  std::vector<std::thread> threads;
  threads.reserve(workers);
  for (std::size_t w = 0; w < workers; ++w) {
    threads.emplace_back([&, w] {
      const std::size_t begin = n * w / workers;
      const std::size_t end = n * (w + 1) / workers;
      try {
        for (std::size_t i = begin; i < end; ++i) fn(i);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& t : threads) t.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

std::size_t heads_per_keypoint(OutputLayout layout) {
  return layout == OutputLayout::kSimCC ? 2 : 1;
}

struct HeadTarget {
  std::vector<double> labels;
  std::vector<double> distribution;  // KL only
  PixelPartition part;
};

// targets[sample][head]
using TargetTable = std::vector<std::vector<HeadTarget>>;

TargetTable build_targets(const SynthDataset& data, const TrainConfig& cfg,
                          const std::vector<Head>& heads) {
  TargetTable table(data.samples.size());
  const std::size_t per_kp = heads_per_keypoint(cfg.layout);
  const Annotation& ann = cfg.layout == OutputLayout::kSimCC ? cfg.annotation_1d : cfg.annotation;
  for (std::size_t n = 0; n < data.samples.size(); ++n) {
    const auto& sample = data.samples[n];
    table[n].resize(heads.size());
    for (std::size_t h = 0; h < heads.size(); ++h) {
      const std::size_t k = h / per_kp;
      const std::size_t cell = sample.gt_cells[k];
      const std::size_t target = heads[h].shape.mode == GridMode::kTwoD
                                     ? cell
                                     : axis_bin(data.spec.grid, cell, heads[h].shape);
      LabelField label = make_label(heads[h].shape, target, ann);
      HeadTarget& t = table[n][h];
      t.part = partition(label, cfg.loss_cfg.positivity_threshold);
      if (cfg.loss == TrainLoss::kKl) t.distribution = normalize_to_distribution(label).labels;
      t.labels = std::move(label.labels);
    }
  }
  return table;
}

struct KeypointLoss {
  double value = 0.0;
  std::vector<std::vector<double>> grads;  // one per head of the keypoint
};

KeypointLoss spatial_keypoint_loss(const TrainConfig& cfg,
                                   std::span<const std::vector<double>* const> logits,
                                   std::span<const HeadTarget* const> targets) {
  KeypointLoss out;
  const std::size_t heads = logits.size();
  out.grads.resize(heads);
  const double axis_weight = 1.0 / static_cast<double>(heads);
  const LossConfig& lc = cfg.loss_cfg;
  const SelfPair self = self_pair_of(lc);

  if (cfg.loss == TrainLoss::kKl) {
    LossOutput o = kl_loss(*logits[0], *logits[1], targets[0]->distribution,
                           targets[1]->distribution, cfg.kl_beta);
    out.value = o.value;
    const auto split = static_cast<std::ptrdiff_t>(logits[0]->size());
    out.grads[0].assign(o.grad.begin(), o.grad.begin() + split);
    out.grads[1].assign(o.grad.begin() + split, o.grad.end());
    return out;
  }

  LossConfig weights = lc;
  weights.isort_coeff = 0.0;
  if (cfg.loss == TrainLoss::kSpatialRank) weights.sort_coeff = 0.0;

  for (std::size_t h = 0; h < heads; ++h) {
    const std::vector<double>& z = *logits[h];
    const HeadTarget& t = *targets[h];
    LossOutput o;
    if (cfg.loss == TrainLoss::kMse) {
      o = mse_loss(z, t.labels);
    } else {
      const LossOutput rank = spatial_rank(z, t.part, lc.rank_delta, self);
      const LossOutput sort =
          weights.sort_coeff > 0.0 ? spatial_sort(z, t.part, lc.sort_delta, self) : LossOutput{};
      o = total_loss(rank, sort, LossOutput{}, weights);
    }
    out.value += axis_weight * o.value;
    for (double& g : o.grad) g *= axis_weight;
    out.grads[h] = std::move(o.grad);
  }
  return out;
}

struct KeypointReadout {
  Point2 coord;
  double confidence = 0.0;
  std::size_t argmax[2] = {0, 0};
};

KeypointReadout read_keypoint(const TrainConfig& cfg, std::span<const std::vector<double>* const> logits,
                              const std::vector<Head>& heads, std::size_t first_head,
                              const GridShape& grid) {
  KeypointReadout r;
  const auto argmax = [](const std::vector<double>& v) {
    return static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
  };
  if (cfg.layout == OutputLayout::kHeatmap2D) {
    r.argmax[0] = argmax(*logits[0]);
    const Cell c = cell_of(grid, r.argmax[0]);
    r.coord = {static_cast<double>(c.col), static_cast<double>(c.row)};
    r.confidence = (*logits[0])[r.argmax[0]];
  } else {
    r.argmax[0] = argmax(*logits[0]);
    r.argmax[1] = argmax(*logits[1]);
    const double kx = heads[first_head].shape.split_factor;
    const double ky = heads[first_head + 1].shape.split_factor;
    r.coord = {static_cast<double>(r.argmax[0]) / kx, static_cast<double>(r.argmax[1]) / ky};
    r.confidence = 0.5 * ((*logits[0])[r.argmax[0]] + (*logits[1])[r.argmax[1]]);
  }
  return r;
}

Point2 truth_point(const GridShape& grid, std::size_t cell) {
  const Cell c = cell_of(grid, cell);
  return {static_cast<double>(c.col), static_cast<double>(c.row)};
}

struct SampleWork {
  std::vector<std::vector<double>> logits;   // per head
  std::vector<std::vector<double>> dlogits;  // per head, unscaled spatial grads
  std::vector<KeypointReadout> readouts;     // per keypoint
  double spatial_value = 0.0;
  std::size_t fields = 0;
};

class Optimizer {
 public:
  Optimizer(const TrainConfig& cfg, const PoseModel& model) : kind_(cfg.optimizer) {
    if (kind_ == OptimizerKind::kAdam) {
      for (std::size_t h = 0; h < model.num_heads(); ++h) {
        m_.emplace_back(model.block_size(h), 0.0);
        v_.emplace_back(model.block_size(h), 0.0);
      }
    }
  }

  void step(PoseModel& model, const std::vector<std::vector<double>>& grads, double lr) {
    ++t_;
    const double b1 = 0.9, b2 = 0.999, eps = 1e-8;
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
    for (std::size_t h = 0; h < model.num_heads(); ++h) {
      auto p = model.params(h);
      const auto& g = grads[h];
      if (kind_ == OptimizerKind::kSgd) {
        for (std::size_t i = 0; i < p.size(); ++i) p[i] -= lr * g[i];
        continue;
      }
      auto& m = m_[h];
      auto& v = v_[h];
      for (std::size_t i = 0; i < p.size(); ++i) {
        m[i] = b1 * m[i] + (1.0 - b1) * g[i];
        v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
        p[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps);
      }
    }
  }

 private:
  OptimizerKind kind_;
  std::vector<std::vector<double>> m_;
  std::vector<std::vector<double>> v_;
  long t_ = 0;
};

void check_compatible(const SynthDataset& data, const TrainConfig& cfg) {
  if (data.samples.empty()) throw PreconditionError("train: empty dataset");
  for (const auto& s : data.samples) {
    if (s.features.size() != data.spec.feature_length() ||
        s.gt_cells.size() != data.spec.num_keypoints ||
        s.visibility.size() != data.spec.num_keypoints) {
      throw ShapeError("train: sample layout does not match the dataset spec");
    }
  }
  if (cfg.loss == TrainLoss::kKl && cfg.layout != OutputLayout::kSimCC) {
    throw ConfigError("KL loss requires the SimCC (1D) output layout");
  }
}

}  // namespace

void TrainConfig::validate() const {
  loss_cfg.validate();
  if (!(lr > 0.0)) throw ConfigError("lr must be positive");
  if (epochs < 1) throw ConfigError("epochs must be >= 1");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (!(lr_gamma > 0.0 && lr_gamma <= 1.0)) throw ConfigError("lr_gamma must lie in (0, 1]");
  if (!(holdout_fraction >= 0.0 && holdout_fraction < 1.0)) {
    throw ConfigError("holdout_fraction must lie in [0, 1)");
  }
  if (!(init_scale >= 0.0)) throw ConfigError("init_scale must be >= 0");
  if (!(kl_beta > 0.0)) throw ConfigError("kl_beta must be positive");
  if (layout == OutputLayout::kSimCC && split_factor < 1) throw ConfigError("split_factor must be >= 1");
  if (loss == TrainLoss::kKl && layout != OutputLayout::kSimCC) {
    throw ConfigError("KL loss requires the SimCC (1D) output layout");
  }
}

double lr_at_epoch(const TrainConfig& cfg, int epoch) {
  const auto decays = std::count_if(cfg.lr_decay_epochs.begin(), cfg.lr_decay_epochs.end(),
                                    [&](int e) { return e <= epoch; });
  return cfg.lr * std::pow(cfg.lr_gamma, static_cast<double>(decays));
}

bool uses_instance_sort(TrainLoss loss) { return loss == TrainLoss::kSpatialRSInstanceSort; }

std::vector<Head> make_heads(const SynthSpec& spec, OutputLayout layout, std::uint32_t split_factor) {
  std::vector<Head> heads;
  for (std::size_t k = 0; k < spec.num_keypoints; ++k) {
    const auto id = static_cast<std::uint32_t>(k);
    if (layout == OutputLayout::kHeatmap2D) {
      heads.push_back({spec.grid, id});
    } else {
      heads.push_back({GridShape::one_d_x(spec.grid.width, split_factor), id});
      heads.push_back({GridShape::one_d_y(spec.grid.height, split_factor), id});
    }
  }
  return heads;
}

PoseModel::PoseModel(ModelKind kind, std::vector<Head> heads, std::size_t input_dim,
                     std::size_t num_samples, std::size_t shared_dim)
    : kind_(kind),
      heads_(std::move(heads)),
      input_dim_(input_dim),
      num_samples_(num_samples),
      shared_dim_(shared_dim) {
  if (kind_ == ModelKind::kLinear && shared_dim_ > input_dim_) {
    throw ShapeError("shared inputs exceed the input width");
  }
  for (const auto& h : heads_) {
    const std::size_t cells = h.shape.cell_count();
    const std::size_t stride = input_dim_ - shared_dim_ + 1;
    params_.emplace_back(kind_ == ModelKind::kLinear ? (cells + 1) * stride : cells * num_samples_, 0.0);
  }
}

void PoseModel::init_random(double scale, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (auto& block : params_) {
    for (double& p : block) p = scale * normal(rng);
  }
  if (kind_ != ModelKind::kLinear) return;
  const std::size_t stride = input_dim_ - shared_dim_ + 1;
  for (std::size_t h = 0; h < heads_.size(); ++h) {
    const std::size_t last = heads_[h].shape.cell_count() * stride;
    std::fill(params_[h].begin() + static_cast<std::ptrdiff_t>(last + shared_dim_), params_[h].end(), 0.0);
  }
}

void PoseModel::forward(std::size_t h, std::size_t sample, std::span<const double> input,
                        std::span<double> logits) const {
  const std::size_t cells = heads_[h].shape.cell_count();
  const auto& p = params_[h];
  if (kind_ == ModelKind::kFreeLogits) {
    if (sample >= num_samples_) throw BoundsError("free-logit model has no such sample");
    std::copy_n(p.begin() + static_cast<std::ptrdiff_t>(sample * cells), cells, logits.begin());
    return;
  }
  if (input.size() != input_dim_) throw ShapeError("linear model input width mismatch");
  const std::size_t local = input_dim_ - shared_dim_;
  const std::size_t stride = local + 1;
  double offset = 0.0;
  for (std::size_t s = 0; s < shared_dim_; ++s) offset += p[cells * stride + s] * input[local + s];
  for (std::size_t c = 0; c < cells; ++c) {
    const double* w = p.data() + c * stride;
    double acc = w[local] + offset;
    for (std::size_t d = 0; d < local; ++d) acc += w[d] * input[d];
    logits[c] = acc;
  }
}

void PoseModel::backward(std::size_t h, std::size_t sample, std::span<const double> input,
                         std::span<const double> dlogits, std::span<double> grad) const {
  const std::size_t cells = heads_[h].shape.cell_count();
  if (kind_ == ModelKind::kFreeLogits) {
    double* g = grad.data() + sample * cells;
    for (std::size_t c = 0; c < cells; ++c) g[c] += dlogits[c];
    return;
  }
  const std::size_t local = input_dim_ - shared_dim_;
  const std::size_t stride = local + 1;
  double total = 0.0;
  for (std::size_t c = 0; c < cells; ++c) {
    const double dz = dlogits[c];
    if (dz == 0.0) continue;
    total += dz;
    double* g = grad.data() + c * stride;
    for (std::size_t d = 0; d < local; ++d) g[d] += dz * input[d];
    g[local] += dz;
  }
  for (std::size_t s = 0; s < shared_dim_; ++s) grad[cells * stride + s] += total * input[local + s];
}

std::vector<io::ParamBlock> PoseModel::to_param_blocks() const {
  std::vector<io::ParamBlock> blocks;
  for (std::size_t h = 0; h < heads_.size(); ++h) {
    io::ParamBlock b;
    b.shape = heads_[h].shape;
    b.keypoint_id = heads_[h].keypoint;
    b.model = static_cast<std::uint8_t>(kind_);
    const std::size_t cells = heads_[h].shape.cell_count();
    if (kind_ == ModelKind::kLinear) {
      b.rows = static_cast<std::uint32_t>(cells + 1);
      b.cols = static_cast<std::uint32_t>(input_dim_ - shared_dim_ + 1);
    } else {
      b.rows = static_cast<std::uint32_t>(num_samples_);
      b.cols = static_cast<std::uint32_t>(cells);
    }
    b.values = params_[h];
    blocks.push_back(std::move(b));
  }
  return blocks;
}

PoseModel PoseModel::from_param_blocks(std::span<const io::ParamBlock> blocks, std::size_t input_dim,
                                       std::size_t num_samples, std::size_t shared_dim) {
  if (blocks.empty()) throw FormatError("no parameter blocks");
  const auto kind = static_cast<ModelKind>(blocks.front().model);
  std::vector<Head> heads;
  for (const auto& b : blocks) heads.push_back({b.shape, b.keypoint_id});
  PoseModel model(kind, std::move(heads), input_dim, num_samples, shared_dim);
  for (std::size_t h = 0; h < blocks.size(); ++h) {
    if (blocks[h].values.size() != model.params_[h].size()) {
      throw FormatError("parameter block " + std::to_string(h) + " has the wrong size");
    }
    model.params_[h] = blocks[h].values;
  }
  return model;
}

std::vector<double> keypoint_input(const SynthSpec& spec, const SynthSample& sample,
                                   std::size_t keypoint) {
  const auto block = keypoint_block(spec, sample, keypoint);
  std::vector<double> input(block.begin(), block.end());
  if (spec.scale_feature) input.push_back(sample.features.back());
  return input;
}

KeypointCatalog catalog_for(std::size_t num_keypoints) {
  const KeypointCatalog coco = KeypointCatalog::coco();
  KeypointCatalog out;
  for (std::size_t k = 0; k < num_keypoints; ++k) {
    out.names.push_back(coco.names[k % coco.size()]);
    out.falloffs.push_back(coco.falloffs[k % coco.size()]);
  }
  return out;
}

std::vector<InstanceTruth> ground_truth(const SynthDataset& data, std::span<const std::size_t> indices) {
  std::vector<InstanceTruth> out;
  out.reserve(indices.size());
  for (std::size_t n : indices) {
    const auto& s = data.samples[n];
    InstanceTruth t;
    t.area = s.area;
    t.bbox_diag = s.area;
    for (std::size_t k = 0; k < s.gt_cells.size(); ++k) {
      const Point2 p = truth_point(data.spec.grid, s.gt_cells[k]);
      t.keypoints.push_back({p.x, p.y, static_cast<bool>(s.visibility[k])});
    }
    out.push_back(std::move(t));
  }
  return out;
}

namespace {

void forward_sample(const PoseModel& model, const SynthDataset& data, std::size_t n,
                    std::vector<std::vector<double>>& logits, std::size_t per_kp) {
  logits.resize(model.num_heads());
  for (std::size_t h = 0; h < model.num_heads(); ++h) {
    logits[h].resize(model.head(h).shape.cell_count());
    const std::size_t k = h / per_kp;
    const auto input = model.kind() == ModelKind::kLinear
                           ? keypoint_input(data.spec, data.samples[n], k)
                           : std::vector<double>{};
    model.forward(h, n, input, logits[h]);
  }
}

}  // namespace

std::vector<InstancePrediction> predict(const PoseModel& model, const SynthDataset& data,
                                        const TrainConfig& cfg, std::span<const std::size_t> indices) {
  const std::size_t per_kp = heads_per_keypoint(cfg.layout);
  const std::vector<Head> heads = make_heads(data.spec, cfg.layout, cfg.split_factor);
  std::vector<InstancePrediction> out(indices.size());
  parallel_for(indices.size(), cfg.workers, [&](std::size_t i) {
    std::vector<std::vector<double>> logits;
    forward_sample(model, data, indices[i], logits, per_kp);
    for (std::size_t k = 0; k < data.spec.num_keypoints; ++k) {
      const std::vector<double>* views[2] = {&logits[k * per_kp],
                                             per_kp == 2 ? &logits[k * per_kp + 1] : nullptr};
      const auto r = read_keypoint(cfg, std::span(views, per_kp), heads, k * per_kp, data.spec.grid);
      out[i].keypoints.push_back({r.coord.x, r.coord.y, r.confidence});
    }
  });
  return out;
}

namespace {

GradientMass probe_masses(const PoseModel& model, const SynthDataset& data, const TrainConfig& cfg,
                          const TargetTable& targets, std::span<const std::size_t> indices) {
  const std::size_t per_kp = heads_per_keypoint(cfg.layout);
  std::vector<GradientMass> slots(indices.size());
  parallel_for(indices.size(), cfg.workers, [&](std::size_t i) {
    const std::size_t n = indices[i];
    std::vector<std::vector<double>> logits;
    forward_sample(model, data, n, logits, per_kp);
    for (std::size_t k = 0; k < data.spec.num_keypoints; ++k) {
      if (!data.samples[n].visibility[k]) continue;
      const std::vector<double>* views[2] = {&logits[k * per_kp],
                                             per_kp == 2 ? &logits[k * per_kp + 1] : nullptr};
      const HeadTarget* tv[2] = {&targets[n][k * per_kp],
                                 per_kp == 2 ? &targets[n][k * per_kp + 1] : nullptr};
      const KeypointLoss kl = spatial_keypoint_loss(cfg, std::span(views, per_kp), std::span(tv, per_kp));
      for (std::size_t a = 0; a < per_kp; ++a) {
        const auto& part = tv[a]->part;
        for (std::size_t c : part.positives) slots[i].positive += std::abs(kl.grads[a][c]);
        for (std::size_t c : part.negatives) slots[i].negative += std::abs(kl.grads[a][c]);
      }
    }
  });
  GradientMass total;
  for (const auto& s : slots) {
    total.positive += s.positive;
    total.negative += s.negative;
  }
  return total;
}

}  // namespace

GradientMass gradient_mass_probe(const PoseModel& model, const SynthDataset& data,
                                 const TrainConfig& cfg, std::span<const std::size_t> indices) {
  const auto heads = make_heads(data.spec, cfg.layout, cfg.split_factor);
  return probe_masses(model, data, cfg, build_targets(data, cfg, heads), indices);
}

TrainResult train(const SynthDataset& data, const TrainConfig& cfg, std::optional<PoseModel> initial) {
  cfg.validate();
  check_compatible(data, cfg);

  const std::vector<Head> heads = make_heads(data.spec, cfg.layout, cfg.split_factor);
  const std::size_t per_kp = heads_per_keypoint(cfg.layout);
  const std::size_t num_kp = data.spec.num_keypoints;
  const std::size_t shared_dim = data.spec.scale_feature ? 1 : 0;
  const std::size_t input_dim = data.spec.feature_dim + shared_dim;
  const std::size_t total = data.samples.size();

  PoseModel model = initial ? std::move(*initial)
                            : PoseModel(cfg.model, heads, input_dim, total, shared_dim);
  if (initial) {
    if (model.kind() != cfg.model || model.num_heads() != heads.size()) {
      throw ConfigError("initial model does not match the training configuration");
    }
  } else {
    model.init_random(cfg.init_scale, cfg.seed ^ 0x5851f42d4c957f2dULL);
  }

  TrainResult result{{}, model, {}, {}, {}, {}};
  const auto holdout = cfg.model == ModelKind::kLinear
                           ? static_cast<std::size_t>(std::floor(static_cast<double>(total) * cfg.holdout_fraction))
                           : 0;
  for (std::size_t n = 0; n < total - holdout; ++n) result.train_indices.push_back(n);
  for (std::size_t n = total - holdout; n < total; ++n) result.eval_indices.push_back(n);
  if (result.eval_indices.empty()) result.eval_indices = result.train_indices;
  if (result.train_indices.empty()) throw PreconditionError("train: no training samples left");

  const TargetTable targets = build_targets(data, cfg, heads);
  const KeypointCatalog catalog = catalog_for(num_kp);
  const auto truths = ground_truth(data, result.eval_indices);
  const EvalOptions eval_opts;
  const LossConfig& lc = cfg.loss_cfg;
  const SelfPair self = self_pair_of(lc);

  Optimizer optimizer(cfg, model);
  std::mt19937_64 shuffle_rng(cfg.seed);
  std::vector<std::size_t> order = result.train_indices;
  std::vector<std::vector<double>> grads(model.num_heads());

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    EpochRecord rec;
    rec.epoch = epoch;
    rec.lr = lr_at_epoch(cfg, epoch);
    const GradientMass mass = probe_masses(model, data, cfg, targets, result.train_indices);
    rec.positive_mass = mass.positive;
    rec.negative_mass = mass.negative;

    std::shuffle(order.begin(), order.end(), shuffle_rng);
    double epoch_loss = 0.0;
    std::size_t batches = 0;

    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t stop = std::min(order.size(), start + cfg.batch_size);
      const std::span<const std::size_t> batch(order.data() + start, stop - start);
      std::vector<SampleWork> work(batch.size());

      parallel_for(batch.size(), cfg.workers, [&](std::size_t b) {
        const std::size_t n = batch[b];
        SampleWork& w = work[b];
        forward_sample(model, data, n, w.logits, per_kp);
        w.dlogits.resize(model.num_heads());
        w.readouts.resize(num_kp);
        for (std::size_t h = 0; h < model.num_heads(); ++h) w.dlogits[h].assign(w.logits[h].size(), 0.0);
        for (std::size_t k = 0; k < num_kp; ++k) {
          const std::vector<double>* views[2] = {&w.logits[k * per_kp],
                                                 per_kp == 2 ? &w.logits[k * per_kp + 1] : nullptr};
          w.readouts[k] = read_keypoint(cfg, std::span(views, per_kp), heads, k * per_kp, data.spec.grid);
          if (!data.samples[n].visibility[k]) continue;
          const HeadTarget* tv[2] = {&targets[n][k * per_kp],
                                     per_kp == 2 ? &targets[n][k * per_kp + 1] : nullptr};
          KeypointLoss kl = spatial_keypoint_loss(cfg, std::span(views, per_kp), std::span(tv, per_kp));
          w.spatial_value += kl.value;
          ++w.fields;
          for (std::size_t a = 0; a < per_kp; ++a) w.dlogits[k * per_kp + a] = std::move(kl.grads[a]);
        }
      });

      std::size_t fields = 0;
      double spatial = 0.0;
      for (const auto& w : work) {
        fields += w.fields;
        spatial += w.spatial_value;
      }
      if (fields == 0) continue;
      const double field_scale = 1.0 / static_cast<double>(fields);
      for (auto& w : work) {
        for (auto& d : w.dlogits) {
          for (double& g : d) g *= field_scale;
        }
      }
      double batch_loss = spatial * field_scale;

      if (uses_instance_sort(cfg.loss) && lc.isort_coeff > 0.0) {
        std::vector<LossOutput> per_type(num_kp);
        std::vector<std::vector<std::size_t>> members(num_kp);
        std::size_t active = 0;
        for (std::size_t k = 0; k < num_kp; ++k) {
          std::vector<double> conf;
          std::vector<double> ks;
          for (std::size_t b = 0; b < batch.size(); ++b) {
            const std::size_t n = batch[b];
            if (!data.samples[n].visibility[k]) continue;
            const auto& r = work[b].readouts[k];
            const Point2 gt = truth_point(data.spec.grid, data.samples[n].gt_cells[k]);
            conf.push_back(r.confidence);
            ks.push_back(keypoint_similarity(std::hypot(r.coord.x - gt.x, r.coord.y - gt.y),
                                             data.samples[n].area, catalog.falloffs[k]));
            members[k].push_back(b);
          }
          per_type[k] = instance_sort(conf, ks, lc.isort_delta, self);
          if (!per_type[k].skipped) ++active;
        }
        if (active > 0) {
          const double type_scale = lc.isort_coeff / static_cast<double>(active);
          const double axis_share = 1.0 / static_cast<double>(per_kp);
          for (std::size_t k = 0; k < num_kp; ++k) {
            if (per_type[k].skipped) continue;
            batch_loss += type_scale * per_type[k].value;
            for (std::size_t m = 0; m < members[k].size(); ++m) {
              SampleWork& w = work[members[k][m]];
              const double g = type_scale * per_type[k].grad[m];
              for (std::size_t a = 0; a < per_kp; ++a) {
                w.dlogits[k * per_kp + a][w.readouts[k].argmax[a]] += axis_share * g;
              }
            }
          }
        }
      }

      if (!std::isfinite(batch_loss)) {
        throw DivergenceError(epoch, "non-finite loss " + std::to_string(batch_loss));
      }

      parallel_for(model.num_heads(), cfg.workers, [&](std::size_t h) {
        grads[h].assign(model.block_size(h), 0.0);
        const std::size_t k = h / per_kp;
        for (std::size_t b = 0; b < batch.size(); ++b) {
          const std::size_t n = batch[b];
          if (!data.samples[n].visibility[k]) continue;
          const auto input = model.kind() == ModelKind::kLinear
                                 ? keypoint_input(data.spec, data.samples[n], k)
                                 : std::vector<double>{};
          model.backward(h, n, input, work[b].dlogits[h], grads[h]);
        }
      });
      optimizer.step(model, grads, rec.lr);
      epoch_loss += batch_loss;
      ++batches;
    }

    rec.loss = batches > 0 ? epoch_loss / static_cast<double>(batches) : 0.0;
    if (!std::isfinite(rec.loss)) throw DivergenceError(epoch, "non-finite epoch loss");

    const auto preds = predict(model, data, cfg, result.eval_indices);
    const EvalResult ev = evaluate(preds, truths, catalog, eval_opts);
    rec.mean_ks = ev.mean_ks;
    rec.spearman = ev.spearman;
    rec.map = ev.map;
    rec.mean_error = ev.mean_error;
    result.log.epochs.push_back(rec);
    if (epoch + 1 == cfg.epochs) {
      result.eval_predictions = preds;
      result.final_eval = ev;
    }
  }
  result.model = std::move(model);
  return result;
}

}  // namespace rankpose
