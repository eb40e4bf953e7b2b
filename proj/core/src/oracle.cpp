#include "rankpose/oracle.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "rankpose/error.hpp"

namespace rankpose::oracle {
namespace {

// Written out again rather than reusing smoothed_step.
double step(double x, double delta) {
  if (x <= -delta) return 0.0;
  if (x >= delta) return 1.0;
  return 0.5 * (x + delta) / delta;
}

double pair_step(std::size_t i, std::size_t j, double x, double delta, SelfPair self) {
  if (i == j && self == SelfPair::kExclude) return 0.0;
  return step(x, delta);
}

std::vector<double> error_driven(const PairTerms& pairs, double normaliser) {
  std::vector<double> grad(pairs.n, 0.0);
  for (std::size_t c = 0; c < pairs.n; ++c) {
    double incoming = 0.0;
    double outgoing = 0.0;
    for (std::size_t j = 0; j < pairs.n; ++j) {
      incoming += pairs.primary[pairs.idx(j, c)] * pairs.indicator[pairs.idx(j, c)];
      outgoing += pairs.primary[pairs.idx(c, j)] * pairs.indicator[pairs.idx(c, j)];
    }
    grad[c] = (incoming - outgoing) / normaliser;
  }
  return grad;
}

struct Membership {
  std::vector<bool> positive;
  std::vector<double> label;
};

Membership membership(std::size_t n, const PixelPartition& part) {
  if (part.positives.size() + part.negatives.size() != n) {
    throw ShapeError("oracle: partition does not cover the field");
  }
  Membership m{std::vector<bool>(n, false), std::vector<double>(n, 0.0)};
  for (std::size_t k = 0; k < part.positives.size(); ++k) {
    m.positive[part.positives[k]] = true;
    m.label[part.positives[k]] = part.positive_labels[k];
  }
  return m;
}

struct RankTerms {
  PairTerms pairs;
  double value = 0.0;
  double hard_value = 0.0;
};

RankTerms rank_terms(std::span<const double> s, const PixelPartition& part, double delta,
                     SelfPair self) {
  if (!(delta > 0.0)) throw ParameterError("delta must be positive");
  if (part.positives.empty()) throw PreconditionError("brute_rank: empty positive set");
  const std::size_t n = s.size();
  const Membership mem = membership(n, part);
  RankTerms out{PairTerms(n)};
  std::vector<double> rank(n, 0.0);

  for (std::size_t i = 0; i < n; ++i) {
    if (!mem.positive[i]) continue;
    double false_pos = 0.0;
    double hard_fp = 0.0;
    double hard_rank = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      const double h = pair_step(i, j, s[j] - s[i], delta, self);
      rank[i] += h;
      if (!mem.positive[j]) false_pos += h;
      if (s[j] > s[i]) {
        hard_rank += 1.0;
        if (!mem.positive[j]) hard_fp += 1.0;
      }
    }
    out.value += rank[i] > 0.0 ? false_pos / rank[i] : 0.0;
    out.hard_value += hard_rank > 0.0 ? hard_fp / hard_rank : 0.0;
  }

  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      const std::size_t k = out.pairs.idx(i, j);
      out.pairs.diff[k] = s[j] - s[i];
      out.pairs.indicator[k] = (mem.positive[i] && !mem.positive[j]) ? 1 : 0;
      if (out.pairs.indicator[k] && rank[i] > 0.0) {
        out.pairs.primary[k] = step(out.pairs.diff[k], delta) / rank[i];
      }
    }
  }
  const auto p = static_cast<double>(part.positives.size());
  out.value /= p;
  out.hard_value /= p;
  return out;
}

struct SortTerms {
  PairTerms pairs;
  double value = 0.0;
  double hard_value = 0.0;
};

// Sorting terms over the items flagged in `member`, targets in `label`.
SortTerms sort_terms(std::span<const double> s, const std::vector<bool>& member,
                     const std::vector<double>& label, double delta, SelfPair self) {
  const std::size_t n = s.size();
  SortTerms out{PairTerms(n)};
  std::vector<double> excess(n, 0.0);

  for (std::size_t i = 0; i < n; ++i) {
    if (!member[i]) continue;
    // current error: H-weighted mean of (1 - label) over members
    double num = 0.0, den = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      if (!member[j]) continue;
      const double h = pair_step(i, j, s[j] - s[i], delta, self);
      num += h * (1.0 - label[j]);
      den += h;
    }
    const double current = den > 0.0 ? num / den : 0.0;
    // target error: same, restricted to label_j >= label_i
    double tnum = 0.0, tden = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      if (!member[j] || label[j] < label[i]) continue;
      const double h = pair_step(i, j, s[j] - s[i], delta, self);
      tnum += h * (1.0 - label[j]);
      tden += h;
    }
    const double target = tden > 0.0 ? tnum / tden : 0.0;
    excess[i] = current - target;
    out.value += excess[i];

    double hnum = 0.0, hden = 0.0, htnum = 0.0, htden = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      if (!member[j] || j == i || !(s[j] > s[i])) continue;
      hnum += 1.0 - label[j];
      hden += 1.0;
      if (label[j] >= label[i]) {
        htnum += 1.0 - label[j];
        htden += 1.0;
      }
    }
    out.hard_value += (hden > 0.0 ? hnum / hden : 0.0) - (htden > 0.0 ? htnum / htden : 0.0);
  }

  for (std::size_t i = 0; i < n; ++i) {
    double lower_mass = 0.0;
    if (member[i]) {
      for (std::size_t k = 0; k < n; ++k) {
        if (member[k] && label[k] < label[i]) lower_mass += pair_step(i, k, s[k] - s[i], delta, self);
      }
    }
    for (std::size_t j = 0; j < n; ++j) {
      const std::size_t k = out.pairs.idx(i, j);
      out.pairs.diff[k] = s[j] - s[i];
      out.pairs.indicator[k] = (member[i] && member[j]) ? 1 : 0;
      if (out.pairs.indicator[k] && label[j] < label[i] && lower_mass > 0.0) {
        out.pairs.primary[k] = excess[i] * step(out.pairs.diff[k], delta) / lower_mass;
      }
    }
  }
  return out;
}

}  // namespace

LossOutput brute_rank(std::span<const double> scores, const PixelPartition& part, double delta,
                      SelfPair self) {
  RankTerms t = rank_terms(scores, part, delta, self);
  LossOutput out;
  out.value = t.value;
  out.hard_value = t.hard_value;
  out.grad = error_driven(t.pairs, static_cast<double>(part.positives.size()));
  return out;
}

PairTerms rank_pair_terms(std::span<const double> scores, const PixelPartition& part, double delta,
                          SelfPair self) {
  return rank_terms(scores, part, delta, self).pairs;
}

LossOutput brute_sort(std::span<const double> scores, const PixelPartition& part, double delta,
                      SelfPair self) {
  if (!(delta > 0.0)) throw ParameterError("delta must be positive");
  if (part.positives.empty()) throw PreconditionError("brute_sort: empty positive set");
  const Membership mem = membership(scores.size(), part);
  SortTerms t = sort_terms(scores, mem.positive, mem.label, delta, self);
  const auto p = static_cast<double>(part.positives.size());
  LossOutput out;
  out.value = t.value / p;
  out.hard_value = t.hard_value / p;
  out.grad = error_driven(t.pairs, p);
  return out;
}

PairTerms sort_pair_terms(std::span<const double> scores, const PixelPartition& part, double delta,
                          SelfPair self) {
  const Membership mem = membership(scores.size(), part);
  return sort_terms(scores, mem.positive, mem.label, delta, self).pairs;
}

LossOutput brute_isort(std::span<const double> confidences, std::span<const double> similarity,
                       double delta, SelfPair self) {
  if (!(delta > 0.0)) throw ParameterError("delta must be positive");
  if (confidences.size() != similarity.size()) throw ShapeError("brute_isort: length mismatch");
  LossOutput out;
  if (confidences.size() < 2) {
    out.grad.assign(confidences.size(), 0.0);
    out.skipped = true;
    return out;
  }
  const std::vector<bool> member(confidences.size(), true);
  const std::vector<double> label(similarity.begin(), similarity.end());
  SortTerms t = sort_terms(confidences, member, label, delta, self);
  const auto count = static_cast<double>(confidences.size());
  out.value = t.value / count;
  out.hard_value = t.hard_value / count;
  out.grad = error_driven(t.pairs, count);
  return out;
}

LossOutput brute_isort(std::span<const InstanceRecord> batch, double delta, SelfPair self) {
  std::vector<double> conf;
  std::vector<double> ks;
  for (const auto& rec : batch) {
    if (rec.keypoint_id != batch.front().keypoint_id) {
      throw PreconditionError("brute_isort: batch mixes keypoint types");
    }
    const double dx = rec.pred_coord.x - rec.gt_coord.x;
    const double dy = rec.pred_coord.y - rec.gt_coord.y;
    const double sk = rec.area * rec.falloff;
    conf.push_back(rec.confidence);
    ks.push_back(std::exp(-(dx * dx + dy * dy) / (2.0 * sk * sk)));
  }
  return brute_isort(conf, ks, delta, self);
}

const char* to_string(LossKind kind) {
  switch (kind) {
    case LossKind::kMse: return "mse";
    case LossKind::kKl: return "kl";
    case LossKind::kSpatialRank: return "spatial_rank";
    case LossKind::kSpatialSort: return "spatial_sort";
    case LossKind::kInstanceSort: return "instance_sort";
  }
  return "unknown";
}

FiniteDiffReport finite_diff_check(LossKind kind,
                                   const std::function<LossOutput(std::span<const double>)>& loss_fn,
                                   std::span<const double> input, double epsilon) {
  if (kind != LossKind::kMse && kind != LossKind::kKl) {
    throw ContractError(std::string("finite_diff_check: ") + to_string(kind) +
                        " uses an error-driven update; its true derivative vanishes almost "
                        "everywhere, so finite differences cannot validate it");
  }
  if (!(epsilon > 0.0)) throw ParameterError("finite_diff_check: epsilon must be positive");
  const LossOutput base = loss_fn(input);
  if (base.grad.size() != input.size()) {
    throw ShapeError("finite_diff_check: gradient layout differs from input");
  }
  FiniteDiffReport report;
  std::vector<double> probe(input.begin(), input.end());
  for (std::size_t c = 0; c < probe.size(); ++c) {
    const double saved = probe[c];
    probe[c] = saved + epsilon;
    const double up = loss_fn(probe).value;
    probe[c] = saved - epsilon;
    const double down = loss_fn(probe).value;
    probe[c] = saved;
    const double numeric = (up - down) / (2.0 * epsilon);
    const double abs_err = std::abs(numeric - base.grad[c]);
    const double rel_err = abs_err / std::max({std::abs(numeric), std::abs(base.grad[c]), 1e-3});
    report.max_abs_error = std::max(report.max_abs_error, abs_err);
    if (rel_err > report.max_rel_error) {
      report.max_rel_error = rel_err;
      report.worst_index = c;
    }
    ++report.evaluated;
  }
  return report;
}

SpatialCase random_spatial_case(std::mt19937_64& rng) {
  std::uniform_int_distribution<int> rows(1, 8);
  std::uniform_int_distribution<int> cols(1, 6);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> normal(0.0, 1.0);

  SpatialCase c;
  const auto n = static_cast<std::size_t>(rows(rng) * cols(rng));
  const bool quantised = unit(rng) < 0.3;
  c.scores.resize(n);
  for (double& v : c.scores) {
    v = quantised ? std::round(normal(rng) * 4.0) / 4.0 : normal(rng) * 2.0;
  }
  const std::size_t max_pos = std::min<std::size_t>(10, n);
  std::uniform_int_distribution<std::size_t> pos_count(1, max_pos);
  const std::size_t p = pos_count(rng);
  std::vector<std::size_t> cells(n);
  for (std::size_t i = 0; i < n; ++i) cells[i] = i;
  std::shuffle(cells.begin(), cells.end(), rng);
  std::vector<double> labels(n, 0.0);
  const bool tied_labels = unit(rng) < 0.2;
  for (std::size_t k = 0; k < p; ++k) {
    labels[cells[k]] = tied_labels ? std::round(1.0 + unit(rng) * 3.0) / 4.0 : 0.05 + 0.95 * unit(rng);
  }
  c.part = partition(std::span<const double>(labels), 0.0);
  c.delta = 0.05 + 1.95 * unit(rng);
  c.self = unit(rng) < 0.15 ? SelfPair::kExclude : SelfPair::kInclude;
  return c;
}

InstanceCase random_instance_case(std::mt19937_64& rng) {
  std::uniform_int_distribution<std::size_t> size(2, 16);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> normal(0.0, 1.0);
  InstanceCase c;
  const std::size_t m = size(rng);
  const bool quantised = unit(rng) < 0.3;
  for (std::size_t i = 0; i < m; ++i) {
    c.confidences.push_back(quantised ? std::round(normal(rng) * 2.0) / 2.0 : normal(rng) * 3.0);
    c.similarity.push_back(quantised ? std::round(unit(rng) * 4.0) / 4.0 : unit(rng));
  }
  c.delta = 0.1 + 3.9 * unit(rng);
  c.self = unit(rng) < 0.15 ? SelfPair::kExclude : SelfPair::kInclude;
  return c;
}

namespace {

void compare(const LossOutput& kernel, const LossOutput& brute, double tolerance, Discrepancy& d) {
  ++d.cases;
  const double value_err = std::abs(kernel.value - brute.value);
  double grad_err = kernel.grad.size() == brute.grad.size() ? 0.0 : INFINITY;
  for (std::size_t c = 0; c < std::min(kernel.grad.size(), brute.grad.size()); ++c) {
    grad_err = std::max(grad_err, std::abs(kernel.grad[c] - brute.grad[c]));
  }
  d.max_value_error = std::max(d.max_value_error, value_err);
  d.max_grad_error = std::max(d.max_grad_error, grad_err);
  if (!(value_err <= tolerance) || !(grad_err <= tolerance)) ++d.failures;
}

}  // namespace

EquivalenceReport run_equivalence(std::size_t cases, std::uint64_t seed, double tolerance) {
  EquivalenceReport report;
  report.tolerance = tolerance;
  std::mt19937_64 rng(seed);
  for (std::size_t k = 0; k < cases; ++k) {
    const SpatialCase sc = random_spatial_case(rng);
    compare(spatial_rank(sc.scores, sc.part, sc.delta, sc.self),
            brute_rank(sc.scores, sc.part, sc.delta, sc.self), tolerance, report.rank);
    compare(spatial_sort(sc.scores, sc.part, sc.delta, sc.self),
            brute_sort(sc.scores, sc.part, sc.delta, sc.self), tolerance, report.sort);
    const InstanceCase ic = random_instance_case(rng);
    compare(instance_sort(ic.confidences, ic.similarity, ic.delta, ic.self),
            brute_isort(ic.confidences, ic.similarity, ic.delta, ic.self), tolerance, report.isort);
  }
  return report;
}

}  // namespace rankpose::oracle
