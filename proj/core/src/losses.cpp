#include "rankpose/losses.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "rankpose/error.hpp"

namespace rankpose {

void LossConfig::validate() const {
  if (!(rank_delta > 0.0) || !(sort_delta > 0.0) || !(isort_delta > 0.0)) {
    throw ParameterError("loss deltas must be positive");
  }
  if (rank_coeff < 0.0 || sort_coeff < 0.0 || isort_coeff < 0.0) {
    throw ParameterError("loss coefficients must be non-negative");
  }
  if (!(positivity_threshold >= 0.0 && positivity_threshold < 1.0)) {
    throw ParameterError("positivity threshold must lie in [0, 1)");
  }
}

LossConfig LossConfig::vitpose_b() { return {0.4, 1.0, 1.5, 2.0, 3.0, 0.25, 0.0, true}; }
LossConfig LossConfig::vitpose_h() { return {0.4, 1.0, 1.5, 2.0, 3.0, 1.5, 0.0, true}; }
LossConfig LossConfig::simcc_res50() { return {0.4, 1.0, 0.2, 0.25, 1.0, 0.0, 0.0, true}; }
LossConfig LossConfig::simcc_hrnet48() { return {0.3, 1.0, 1.2, 0.5, 0.5, 0.1, 0.0, true}; }

double smoothed_step(double x, double delta) {
  if (x < -delta) return 0.0;
  if (x > delta) return 1.0;
  return x / (2.0 * delta) + 0.5;
}

namespace {

void check_delta(double delta) {
  if (!(delta > 0.0)) throw ParameterError("delta must be positive");
}

void check_layout(std::span<const double> scores, const PixelPartition& part) {
  if (part.cell_count() != scores.size()) {
    throw ShapeError("partition covers " + std::to_string(part.cell_count()) +
                     " cells but the field has " + std::to_string(scores.size()));
  }
  if (part.positive_labels.size() != part.positives.size()) {
    throw ShapeError("partition labels do not match its positive set");
  }
}

// Sorted scores with weight prefix sums, answering weighted sums of the ramp
// step against an anchor in O(log n).
class RampIndex {
 public:
  RampIndex(std::vector<std::pair<double, double>> value_weight, double delta) : delta_(delta) {
    std::sort(value_weight.begin(), value_weight.end(),
              [](const auto& a, const auto& b) { return a.first < b.first; });
    values_.reserve(value_weight.size());
    w_.assign(1, 0.0);
    wv_.assign(1, 0.0);
    for (const auto& [v, w] : value_weight) {
      values_.push_back(v);
      w_.push_back(w_.back() + w);
      wv_.push_back(wv_.back() + w * v);
    }
  }

  // sum_k w_k H(v_k - anchor)
  double sum_above(double anchor) const {
    const std::size_t lo = upper(anchor - delta_);
    const std::size_t hi = upper(anchor + delta_);
    const double ramp_w = w_[hi] - w_[lo];
    const double ramp_wv = wv_[hi] - wv_[lo];
    return (w_.back() - w_[hi]) + (ramp_wv - anchor * ramp_w) / (2.0 * delta_) + 0.5 * ramp_w;
  }

  // sum_k w_k H(anchor - v_k)
  double sum_below(double anchor) const {
    const std::size_t lo = lower(anchor - delta_);
    const std::size_t hi = lower(anchor + delta_);
    const double ramp_w = w_[hi] - w_[lo];
    const double ramp_wv = wv_[hi] - wv_[lo];
    return w_[lo] + (anchor * ramp_w - ramp_wv) / (2.0 * delta_) + 0.5 * ramp_w;
  }

  // #{k : v_k > anchor}
  std::size_t count_above(double anchor) const { return values_.size() - upper(anchor); }

 private:
  std::size_t upper(double x) const {
    return static_cast<std::size_t>(std::upper_bound(values_.begin(), values_.end(), x) -
                                    values_.begin());
  }
  std::size_t lower(double x) const {
    return static_cast<std::size_t>(std::lower_bound(values_.begin(), values_.end(), x) -
                                    values_.begin());
  }

  double delta_;
  std::vector<double> values_;
  std::vector<double> w_;
  std::vector<double> wv_;
};

struct SortAccum {
  double value = 0.0;
  double hard_value = 0.0;
  std::vector<double> grad;
};

// Shared body of the spatial and instance sorting losses over m scored items
// with targets in [0, 1]. Returns unnormalised sums.
SortAccum sort_accumulate(std::span<const double> s, std::span<const double> target, double delta,
                          SelfPair self) {
  const std::size_t m = s.size();
  SortAccum acc;
  acc.grad.assign(m, 0.0);
  std::vector<double> h(m);
  for (std::size_t i = 0; i < m; ++i) {
    double w_hi = 0.0, a_hi = 0.0, w_lo = 0.0, a_lo = 0.0;
    double hw_hi = 0.0, ha_hi = 0.0, hw_lo = 0.0, ha_lo = 0.0;
    for (std::size_t j = 0; j < m; ++j) {
      const bool is_self = j == i;
      h[j] = (is_self && self == SelfPair::kExclude) ? 0.0 : smoothed_step(s[j] - s[i], delta);
      const double hard = (!is_self && s[j] > s[i]) ? 1.0 : 0.0;
      const double miss = 1.0 - target[j];
      if (target[j] >= target[i]) {
        w_hi += h[j];
        a_hi += h[j] * miss;
        hw_hi += hard;
        ha_hi += hard * miss;
      } else {
        w_lo += h[j];
        a_lo += h[j] * miss;
        hw_lo += hard;
        ha_lo += hard * miss;
      }
    }
    const double total_w = w_hi + w_lo;
    const double current = total_w > 0.0 ? (a_hi + a_lo) / total_w : 0.0;
    const double wanted = w_hi > 0.0 ? a_hi / w_hi : 0.0;
    const double err = current - wanted;
    acc.value += err;

    const double hard_total = hw_hi + hw_lo;
    const double hard_current = hard_total > 0.0 ? (ha_hi + ha_lo) / hard_total : 0.0;
    const double hard_wanted = hw_hi > 0.0 ? ha_hi / hw_hi : 0.0;
    acc.hard_value += hard_current - hard_wanted;

    if (w_lo > 0.0 && err != 0.0) {
      for (std::size_t j = 0; j < m; ++j) {
        if (target[j] >= target[i] || h[j] == 0.0) continue;
        const double share = err * h[j] / w_lo;
        acc.grad[j] += share;
        acc.grad[i] -= share;
      }
    }
  }
  return acc;
}

void check_finite_scores(std::span<const double> s) {
  for (double v : s) {
    if (!std::isfinite(v)) throw ParameterError("scores must be finite");
  }
}

}  // namespace

LossOutput spatial_rank(std::span<const double> scores, const PixelPartition& part, double delta,
                        SelfPair self) {
  check_delta(delta);
  check_layout(scores, part);
  if (part.positives.empty()) throw PreconditionError("spatial_rank: empty positive set");
  check_finite_scores(scores);

  std::vector<std::pair<double, double>> all;
  all.reserve(scores.size());
  for (double v : scores) all.emplace_back(v, 1.0);
  std::vector<std::pair<double, double>> neg;
  neg.reserve(part.negatives.size());
  for (std::size_t j : part.negatives) neg.emplace_back(scores[j], 1.0);
  const RampIndex all_index(std::move(all), delta);
  const RampIndex neg_index(std::move(neg), delta);

  const auto num_pos = static_cast<double>(part.positives.size());
  LossOutput out;
  out.grad.assign(scores.size(), 0.0);
  std::vector<std::pair<double, double>> pos_weighted;
  pos_weighted.reserve(part.positives.size());

  for (std::size_t i : part.positives) {
    const double s_i = scores[i];
    double rank = all_index.sum_above(s_i);
    if (self == SelfPair::kExclude) rank -= 0.5;
    const double false_pos = neg_index.sum_above(s_i);
    const double err = rank > 0.0 ? false_pos / rank : 0.0;
    out.value += err;
    out.grad[i] = -err / num_pos;
    pos_weighted.emplace_back(s_i, rank > 0.0 ? 1.0 / rank : 0.0);

    const auto hard_rank = static_cast<double>(all_index.count_above(s_i));
    if (hard_rank > 0.0) {
      out.hard_value += static_cast<double>(neg_index.count_above(s_i)) / hard_rank;
    }
  }
  out.value /= num_pos;
  out.hard_value /= num_pos;

  // Each negative j collects sum_{i in P} H(s_j - s_i) / rank(i).
  const RampIndex pos_index(std::move(pos_weighted), delta);
  for (std::size_t j : part.negatives) out.grad[j] = pos_index.sum_below(scores[j]) / num_pos;
  return out;
}

LossOutput spatial_rank(const HeatmapField& pred, const PixelPartition& part, double delta,
                        SelfPair self) {
  return spatial_rank(std::span<const double>(pred.values), part, delta, self);
}

LossOutput spatial_sort(std::span<const double> scores, const PixelPartition& part, double delta,
                        SelfPair self) {
  check_delta(delta);
  check_layout(scores, part);
  if (part.positives.empty()) throw PreconditionError("spatial_sort: empty positive set");
  check_finite_scores(scores);

  std::vector<double> pos_scores;
  pos_scores.reserve(part.positives.size());
  for (std::size_t i : part.positives) pos_scores.push_back(scores[i]);
  const SortAccum acc = sort_accumulate(pos_scores, part.positive_labels, delta, self);

  const auto num_pos = static_cast<double>(part.positives.size());
  LossOutput out;
  out.value = acc.value / num_pos;
  out.hard_value = acc.hard_value / num_pos;
  out.grad.assign(scores.size(), 0.0);
  for (std::size_t k = 0; k < part.positives.size(); ++k) {
    out.grad[part.positives[k]] = acc.grad[k] / num_pos;
  }
  return out;
}

LossOutput spatial_sort(const HeatmapField& pred, const PixelPartition& part, double delta,
                        SelfPair self) {
  return spatial_sort(std::span<const double>(pred.values), part, delta, self);
}

LossOutput instance_sort(std::span<const double> confidences, std::span<const double> similarity,
                         double delta, SelfPair self) {
  check_delta(delta);
  if (confidences.size() != similarity.size()) {
    throw ShapeError("instance_sort: confidences and similarities differ in length");
  }
  for (double ks : similarity) {
    if (!(ks >= 0.0 && ks <= 1.0)) throw ParameterError("keypoint similarity must lie in [0, 1]");
  }
  check_finite_scores(confidences);

  LossOutput out;
  out.grad.assign(confidences.size(), 0.0);
  if (confidences.size() < 2) {
    out.skipped = true;
    return out;
  }
  const SortAccum acc = sort_accumulate(confidences, similarity, delta, self);
  const auto count = static_cast<double>(confidences.size());
  out.value = acc.value / count;
  out.hard_value = acc.hard_value / count;
  for (std::size_t k = 0; k < acc.grad.size(); ++k) out.grad[k] = acc.grad[k] / count;
  return out;
}

LossOutput instance_sort(std::span<const InstanceRecord> batch, double delta, SelfPair self) {
  std::vector<double> conf;
  std::vector<double> ks;
  conf.reserve(batch.size());
  ks.reserve(batch.size());
  for (const auto& rec : batch) {
    if (rec.keypoint_id != batch.front().keypoint_id) {
      throw PreconditionError("instance_sort: batch mixes keypoint types");
    }
    conf.push_back(rec.confidence);
    ks.push_back(keypoint_similarity(rec));
  }
  return instance_sort(conf, ks, delta, self);
}

LossOutput mse_loss(std::span<const double> pred, std::span<const double> label) {
  if (pred.size() != label.size()) {
    throw ShapeError("mse_loss: prediction has " + std::to_string(pred.size()) +
                     " cells, label has " + std::to_string(label.size()));
  }
  if (pred.empty()) throw ShapeError("mse_loss: empty field");
  const auto n = static_cast<double>(pred.size());
  LossOutput out;
  out.grad.resize(pred.size());
  for (std::size_t c = 0; c < pred.size(); ++c) {
    const double diff = pred[c] - label[c];
    out.value += diff * diff;
    out.grad[c] = 2.0 * diff / n;
  }
  out.value /= n;
  out.hard_value = out.value;
  return out;
}

LossOutput mse_loss(const HeatmapField& pred, const LabelField& label) {
  if (!(pred.shape == label.shape)) throw ShapeError("mse_loss: field shapes differ");
  return mse_loss(std::span<const double>(pred.values), std::span<const double>(label.labels));
}

namespace {

// Adds one axis of the KL loss; writes beta * (q - y) / n into grad.
double kl_axis(std::span<const double> logits, std::span<const double> target, double beta,
               std::span<double> grad) {
  if (logits.size() != target.size()) throw ShapeError("kl_loss: logits and target differ in length");
  if (logits.empty()) throw ShapeError("kl_loss: empty axis");
  double total = 0.0;
  for (double y : target) {
    if (y < 0.0) throw NormalizationError("kl_loss: negative target probability");
    total += y;
  }
  if (std::abs(total - 1.0) > 1e-6) {
    throw NormalizationError("kl_loss: target sums to " + std::to_string(total) + ", not 1");
  }
  check_finite_scores(logits);

  double peak = beta * logits[0];
  for (double z : logits) peak = std::max(peak, beta * z);
  double norm = 0.0;
  for (double z : logits) norm += std::exp(beta * z - peak);
  const double log_norm = std::log(norm) + peak;

  const auto n = static_cast<double>(logits.size());
  double kl = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    const double log_q = beta * logits[i] - log_norm;
    if (target[i] > 0.0) kl += target[i] * (std::log(target[i]) - log_q);
    grad[i] = beta * (std::exp(log_q) - target[i]) / n;
  }
  return kl / n;
}

}  // namespace

LossOutput kl_loss(std::span<const double> logits_x, std::span<const double> logits_y,
                   std::span<const double> target_x, std::span<const double> target_y, double beta) {
  if (!(beta > 0.0)) throw ParameterError("kl_loss: beta must be positive");
  LossOutput out;
  out.grad.assign(logits_x.size() + logits_y.size(), 0.0);
  std::span<double> grad(out.grad);
  out.value = kl_axis(logits_x, target_x, beta, grad.first(logits_x.size())) +
              kl_axis(logits_y, target_y, beta, grad.subspan(logits_x.size()));
  out.hard_value = out.value;
  return out;
}

LossOutput kl_loss(const HeatmapField& logits_x, const HeatmapField& logits_y,
                   const LabelField& target_x, const LabelField& target_y, double beta) {
  if (logits_x.shape.mode != GridMode::kOneDX || logits_y.shape.mode != GridMode::kOneDY) {
    throw ShapeError("kl_loss: expects an x-axis and a y-axis 1D field");
  }
  if (!(logits_x.shape == target_x.shape) || !(logits_y.shape == target_y.shape)) {
    throw ShapeError("kl_loss: target shapes differ from logits");
  }
  return kl_loss(std::span<const double>(logits_x.values), std::span<const double>(logits_y.values),
                 std::span<const double>(target_x.labels), std::span<const double>(target_y.labels),
                 beta);
}

LossOutput total_loss(const LossOutput& rank, const LossOutput& sort, const LossOutput& isort,
                      const LossConfig& cfg) {
  cfg.validate();
  std::size_t cells = 0;
  for (const LossOutput* part : {&rank, &sort, &isort}) {
    if (part->grad.empty()) continue;
    if (cells != 0 && part->grad.size() != cells) {
      throw ShapeError("total_loss: component gradients have different layouts");
    }
    cells = part->grad.size();
  }
  LossOutput out;
  out.value = cfg.rank_coeff * rank.value + cfg.sort_coeff * sort.value + cfg.isort_coeff * isort.value;
  out.hard_value = cfg.rank_coeff * rank.hard_value + cfg.sort_coeff * sort.hard_value +
                   cfg.isort_coeff * isort.hard_value;
  out.grad.assign(cells, 0.0);
  const auto add = [&](const LossOutput& part, double coeff) {
    for (std::size_t c = 0; c < part.grad.size(); ++c) out.grad[c] += coeff * part.grad[c];
  };
  add(rank, cfg.rank_coeff);
  add(sort, cfg.sort_coeff);
  add(isort, cfg.isort_coeff);
  return out;
}

}  // namespace rankpose
