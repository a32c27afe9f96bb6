#pragma once

#include <algorithm>
#include <functional>
#include <limits>
#include <map>
#include <optional>
#include <span>
#include <vector>

#include "fedet/data.hpp"
#include "fedet/enhancer_group.hpp"
#include "fedet/memory.hpp"

namespace fedet {

struct OptimizerSettings {
  double learning_rate = 0.05;
  int64_t max_steps = 100;
  int64_t batch_size = 8;
  // Plateau stop: no best-loss improvement of at least stop_delta within
  // stop_window consecutive steps ends training early. stop_window = 0
  // disables the rule and only max_steps applies.
  double stop_delta = 0.0;
  int64_t stop_window = 0;
  uint64_t seed = 0;  // batch shuffling
};

// --- segment-centered distillation targets ----------------------------------

namespace detail {

// Shared centering so the single-teacher global path reduces to the local
// one exactly, double for double.
inline std::vector<double> center_segments(std::span<const double> old_logits,
                                           std::span<const double> new_logits) {
  std::vector<double> out;
  out.reserve(old_logits.size() + new_logits.size());
  double mean_old = 0.0;
  for (double v : old_logits) mean_old += v;
  mean_old /= static_cast<double>(old_logits.size());
  double mean_new = 0.0;
  for (double v : new_logits) mean_new += v;
  mean_new /= static_cast<double>(new_logits.size());
  for (double v : old_logits) out.push_back(v - mean_old);
  for (double v : new_logits) out.push_back(v - mean_new);
  return out;
}

}  // namespace detail

// Targets for local double distillation: each segment of the concatenated
// teacher logits is shifted by its own mean.
inline std::vector<double> center_targets_local(std::span<const double> old_logits,
                                                std::span<const double> new_logits) {
  FEDET_CHECK(!old_logits.empty() && !new_logits.empty(),
              "center_targets_local: empty segment (m=" << old_logits.size()
                                                        << ", n=" << new_logits.size() << ")");
  return detail::center_segments(old_logits, new_logits);
}

// Targets for entropy-aware multiple distillation: the new segment is the
// entropy-weighted mixture of the uploaded teachers' new-class logits,
// centered by its own mean; the old segment is centered as in the local
// rule. All-zero entropies (every uploading task single-class) fall back to
// uniform weights 1/q.
inline std::vector<double> center_targets_global(
    std::span<const double> old_logits,
    const std::vector<std::vector<double>>& new_logits_per_client,
    std::span<const double> entropies) {
  const size_t q = new_logits_per_client.size();
  FEDET_CHECK(q >= 1, "center_targets_global: no uploaded teachers");
  FEDET_CHECK(entropies.size() == q,
              "center_targets_global: " << entropies.size() << " entropies for "
                                        << q << " teachers");
  const size_t n = new_logits_per_client[0].size();
  FEDET_CHECK(!old_logits.empty() && n > 0,
              "center_targets_global: empty segment");
  for (const auto& v : new_logits_per_client)
    FEDET_CHECK(v.size() == n, "center_targets_global: ragged teacher logits");

  double h_sum = 0.0;
  for (double h : entropies) {
    FEDET_CHECK(h >= 0.0, "center_targets_global: negative entropy " << h);
    h_sum += h;
  }

  std::vector<double> weights(q);
  if (h_sum > 0.0) {
    for (size_t k = 0; k < q; ++k) weights[k] = entropies[k] / h_sum;
  } else {
    for (size_t k = 0; k < q; ++k) weights[k] = 1.0 / static_cast<double>(q);
  }

  std::vector<double> mixed(n, 0.0);
  for (size_t k = 0; k < q; ++k)
    for (size_t i = 0; i < n; ++i) mixed[i] += weights[k] * new_logits_per_client[k][i];

  return detail::center_segments(old_logits, mixed);
}

// --- distillation losses -----------------------------------------------------

// L2 distance between consolidated logits and centered targets, averaged
// over the m+n entries.
inline Tensor double_distill_loss(const Tensor& logits,
                                  const std::vector<double>& targets) {
  FEDET_CHECK(logits.numel() == static_cast<int64_t>(targets.size()),
              "distill loss: " << logits.numel() << " logits vs "
                               << targets.size() << " targets");
  return mse(logits, Tensor::from_data({static_cast<int64_t>(targets.size())},
                                       targets));
}

inline double double_distill_loss(std::span<const double> logits,
                                  std::span<const double> targets) {
  FEDET_CHECK(logits.size() == targets.size(),
              "distill loss: " << logits.size() << " logits vs " << targets.size()
                               << " targets");
  double s = 0.0;
  for (size_t i = 0; i < logits.size(); ++i) {
    double d = logits[i] - targets[i];
    s += d * d;
  }
  return s / static_cast<double>(logits.size());
}

// The server-side loss has the same L2 form; only the targets differ.
inline Tensor emd_loss(const Tensor& logits, const std::vector<double>& targets) {
  return double_distill_loss(logits, targets);
}

inline double emd_loss(std::span<const double> logits,
                       std::span<const double> targets) {
  return double_distill_loss(logits, targets);
}

// --- training ------------------------------------------------------------------

namespace detail {

// Deterministic epoch shuffling over dataset indices.
class BatchSchedule {
public:
  BatchSchedule(size_t n, int64_t batch_size, uint64_t seed)
      : rng_(seed), batch_(static_cast<size_t>(std::max<int64_t>(1, batch_size))) {
    indices_.resize(n);
    for (size_t i = 0; i < n; ++i) indices_[i] = i;
    reshuffle();
  }

  std::vector<size_t> next() {
    std::vector<size_t> out;
    out.reserve(batch_);
    while (out.size() < batch_) {
      if (cursor_ == indices_.size()) reshuffle();
      out.push_back(indices_[cursor_++]);
    }
    return out;
  }

private:
  void reshuffle() {
    rng_.shuffle(indices_);
    cursor_ = 0;
  }

  Rng rng_;
  size_t batch_;
  std::vector<size_t> indices_;
  size_t cursor_ = 0;
};

inline int64_t domain_index(const EnhancerGroup& g, ClassId c) {
  auto it = std::find(g.domain.begin(), g.domain.end(), c);
  FEDET_CHECK(it != g.domain.end(),
              "class " << c << " not in group " << g.group_id << " domain");
  return static_cast<int64_t>(it - g.domain.begin());
}

}  // namespace detail

// Widened successor of a group: same enhancer weights, head extended with
// zero-initialized columns for the new classes (appended in ascending
// order). Old-class behavior is unchanged at step zero.
inline EnhancerGroup widen_group(const EnhancerGroup& old_group,
                                 std::vector<ClassId> new_classes,
                                 bool trainable) {
  std::sort(new_classes.begin(), new_classes.end());
  FEDET_CHECK(std::adjacent_find(new_classes.begin(), new_classes.end()) ==
                  new_classes.end(),
              "widen_group: duplicate new class");
  for (ClassId c : new_classes)
    FEDET_CHECK(std::find(old_group.domain.begin(), old_group.domain.end(), c) ==
                    old_group.domain.end(),
                "widen_group: class " << c << " already in domain of group "
                                      << old_group.group_id);

  EnhancerGroup g;
  g.group_id = old_group.group_id;
  for (const auto& e : old_group.enhancers) g.enhancers.push_back(e.clone(trainable));
  g.domain = old_group.domain;
  g.domain.insert(g.domain.end(), new_classes.begin(), new_classes.end());

  const int64_t d = g.hidden();
  const auto m = static_cast<int64_t>(old_group.domain.size());
  const auto c_total = static_cast<int64_t>(g.domain.size());
  std::vector<double> head(static_cast<size_t>(d * c_total), 0.0);
  if (m > 0) {
    const auto& old_head = old_group.head.data();
    for (int64_t r = 0; r < d; ++r)
      for (int64_t j = 0; j < m; ++j)
        head[static_cast<size_t>(r * c_total + j)] =
            old_head[static_cast<size_t>(r * m + j)];
  }
  g.head = Tensor::from_data({d, c_total}, std::move(head), trainable);
  return g;
}

// Mini-batch SGD on softmax cross-entropy over the group's domain. Only the
// group's parameters move; the backbone stays frozen by construction.
inline void train_cross_entropy(EnhancerGroup& group,
                                std::span<const Sample> data,
                                const FrozenBackbone& backbone,
                                const OptimizerSettings& opt,
                                Activation act = Activation::kGelu) {
  FEDET_CHECK(!data.empty(), "train: empty task data");
  group.validate_against(backbone);
  for (const auto& s : data) detail::domain_index(group, s.label);

  detail::BatchSchedule schedule(data.size(), opt.batch_size, opt.seed);
  auto params = group.parameters();
  for (int64_t step = 0; step < opt.max_steps; ++step) {
    auto batch = schedule.next();
    std::vector<Tensor> losses;
    losses.reserve(batch.size());
    for (size_t idx : batch) {
      const Sample& s = data[idx];
      auto logits = group_forward(s, group, backbone, act);
      auto logp = log_softmax_lastdim(logits);
      losses.push_back(scale(slice_lastdim(logp, detail::domain_index(group, s.label), 1),
                             -1.0));
    }
    Tensor loss = losses[0];
    for (size_t i = 1; i < losses.size(); ++i) loss = add(loss, losses[i]);
    loss = scale(loss, 1.0 / static_cast<double>(losses.size()));
    backward(sum_all(loss));
    for (auto& p : params) {
      p.sgd_step(opt.learning_rate);
      p.zero_grad();
    }
  }
}

// Alg. 1 lines 7-8: fresh identity-start group over the task's classes,
// trained on the task data alone. The head is seeded scaled-uniform so an
// untrained group still produces non-degenerate logits.
inline EnhancerGroup train_temp_group(std::span<const Sample> task,
                                      const std::vector<ClassId>& task_classes,
                                      const FrozenBackbone& backbone,
                                      int64_t bottleneck, uint64_t init_seed,
                                      const OptimizerSettings& opt,
                                      Activation act = Activation::kGelu) {
  FEDET_CHECK(!task.empty(), "train_temp_group: empty task data");
  FEDET_CHECK(!task_classes.empty(), "train_temp_group: no task classes");

  Rng rng(init_seed);
  EnhancerGroup g = EnhancerGroup::fresh(0, backbone.depth(), backbone.hidden(),
                                         bottleneck, rng);
  g.domain = task_classes;
  std::sort(g.domain.begin(), g.domain.end());
  const int64_t d = backbone.hidden();
  const auto c = static_cast<int64_t>(g.domain.size());
  double bound = 1.0 / std::sqrt(static_cast<double>(d));
  std::vector<double> head(static_cast<size_t>(d * c));
  for (auto& v : head) v = rng.uniform(-bound, bound);
  g.head = Tensor::from_data({d, c}, std::move(head), true);

  train_cross_entropy(g, task, backbone, opt, act);
  return g;
}

inline double evaluate_accuracy(const EnhancerGroup& group,
                                std::span<const Sample> data,
                                const FrozenBackbone& backbone,
                                Activation act = Activation::kGelu) {
  if (data.empty()) return 0.0;
  int64_t hits = 0;
  for (const auto& s : data) {
    auto logits = group_forward(s, group, backbone, act);
    int64_t best = 0;
    for (int64_t i = 1; i < logits.numel(); ++i)
      if (logits.at(i) > logits.at(best)) best = i;
    if (group.domain[static_cast<size_t>(best)] == s.label) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(data.size());
}

// --- consolidation -----------------------------------------------------------

struct TeacherUpload {
  EnhancerGroup group;
  double entropy = 0.0;
};

// Test/inspection hooks into the consolidation loop.
struct ConsolidationObserver {
  // dataset index -> centered target vector, fired when first computed
  std::function<void(size_t, std::span<const double>)> on_targets;
  // after each optimizer step: step index, batch loss, current state
  std::function<void(int64_t, double, const EnhancerGroup&)> on_step;
};

namespace detail {

// Resolves how a teacher's domain relates to the incoming new classes.
// Two legal layouts for the current group:
//   fresh:      domain = old classes only (the new ones get appended)
//   refinement: domain = old classes ++ sorted(new classes) already, from an
//               earlier consolidation of the same task; only the first m
//               logits act as the old segment
// Any other overlap is rejected.
struct DomainSplit {
  std::vector<ClassId> old_classes;
  std::vector<ClassId> new_sorted;
  bool refinement = false;

  size_t old_count() const { return old_classes.size(); }

  std::vector<ClassId> canonical() const {
    auto out = old_classes;
    out.insert(out.end(), new_sorted.begin(), new_sorted.end());
    return out;
  }

  static DomainSplit resolve(const EnhancerGroup& group,
                             std::vector<ClassId> new_classes,
                             const char* op) {
    std::sort(new_classes.begin(), new_classes.end());
    FEDET_CHECK(!new_classes.empty(), op << ": no new classes");
    FEDET_CHECK(std::adjacent_find(new_classes.begin(), new_classes.end()) ==
                    new_classes.end(),
                op << ": duplicate new class");
    DomainSplit split;
    split.new_sorted = std::move(new_classes);

    const auto& dom = group.domain;
    bool any_overlap = false;
    for (ClassId c : split.new_sorted)
      any_overlap = any_overlap ||
                    std::find(dom.begin(), dom.end(), c) != dom.end();
    if (!any_overlap) {
      split.old_classes = dom;
      return split;
    }
    // overlap is only legal as the exact refinement tail
    const size_t n = split.new_sorted.size();
    FEDET_CHECK(dom.size() >= n &&
                    std::equal(split.new_sorted.begin(), split.new_sorted.end(),
                               dom.end() - static_cast<int64_t>(n)),
                op << ": overlapping domains (group " << group.group_id
                   << " vs new classes)");
    split.old_classes.assign(dom.begin(), dom.end() - static_cast<int64_t>(n));
    for (ClassId c : split.old_classes)
      FEDET_CHECK(std::find(split.new_sorted.begin(), split.new_sorted.end(), c) ==
                      split.new_sorted.end(),
                  op << ": overlapping domains (group " << group.group_id << ")");
    split.refinement = true;
    return split;
  }
};

// Shared engine behind local and global consolidation. Teachers enter as a
// target function; everything else (init, batching, SGD, stopping) is
// identical, which is what makes the q=1 global run coincide with the local
// one step for step.
inline EnhancerGroup run_consolidation(
    const EnhancerGroup& old_group, const DomainSplit& split,
    const std::function<std::vector<double>(const Sample&)>& targets_for,
    const DistillDataset& data, const FrozenBackbone& backbone,
    const OptimizerSettings& opt, Activation act,
    const ConsolidationObserver* observer,
    const std::vector<ClassId>* required_cover) {
  FEDET_CHECK(data.size() > 0, "consolidation: empty distillation dataset");

  EnhancerGroup g = split.refinement
                        ? old_group.clone(/*trainable=*/true)
                        : widen_group(old_group, split.new_sorted, /*trainable=*/true);
  g.validate_against(backbone);

  // coverage check: the dataset must contain every required class (the whole
  // domain unless the caller explicitly restricts it)
  {
    std::map<ClassId, bool> seen;
    for (size_t i = 0; i < data.size(); ++i) seen[data.at(i).label] = true;
    const std::vector<ClassId>& cover = required_cover ? *required_cover : g.domain;
    for (ClassId c : cover)
      FEDET_CHECK(seen.count(c), "consolidation: dataset covers no sample of class " << c);
  }

  // teacher logits are pure functions of the (frozen) teachers and the
  // sample, so cache them per dataset index
  std::vector<std::optional<std::vector<double>>> target_cache(data.size());
  auto targets_at = [&](size_t idx) -> const std::vector<double>& {
    auto& slot = target_cache[idx];
    if (!slot.has_value()) {
      slot = targets_for(data.at(idx));
      if (observer && observer->on_targets) observer->on_targets(idx, *slot);
    }
    return *slot;
  };

  BatchSchedule schedule(data.size(), opt.batch_size, opt.seed);
  auto params = g.parameters();
  double best_loss = std::numeric_limits<double>::infinity();
  int64_t best_step = 0;
  for (int64_t step = 0; step < opt.max_steps; ++step) {
    auto batch = schedule.next();
    std::vector<Tensor> losses;
    losses.reserve(batch.size());
    for (size_t idx : batch) {
      Sample s = data.at(idx);
      auto logits = group_forward(s, g, backbone, act);
      losses.push_back(double_distill_loss(logits, targets_at(idx)));
    }
    Tensor loss = losses[0];
    for (size_t i = 1; i < losses.size(); ++i) loss = add(loss, losses[i]);
    loss = scale(loss, 1.0 / static_cast<double>(losses.size()));
    backward(loss);
    double loss_value = loss.value();
    for (auto& p : params) {
      p.sgd_step(opt.learning_rate);
      p.zero_grad();
    }
    if (observer && observer->on_step) observer->on_step(step, loss_value, g);

    if (loss_value < best_loss - opt.stop_delta) {
      best_loss = loss_value;
      best_step = step;
    } else if (opt.stop_window > 0 && step - best_step >= opt.stop_window) {
      break;
    }
  }
  return g;
}

inline std::vector<double> group_logits(const Sample& s, const EnhancerGroup& g,
                                        const FrozenBackbone& backbone,
                                        Activation act) {
  return group_forward(s, g, backbone, act).data();
}

}  // namespace detail

// Local double distillation (Alg. 1 DISTILLATION): teachers are the old
// group (old classes) and the task-trained temporary group (new classes).
// Returns the consolidated group over M^old and M^t; teachers are only read.
// An empty old group degenerates to distilling the temporary teacher alone
// (first task for this group), with the new segment centered as usual. When
// the old group already carries the new classes as its domain tail (a later
// round of the same task), only its first m logits serve as the old segment.
inline EnhancerGroup consolidate_local(const EnhancerGroup& old_group,
                                       const EnhancerGroup& temp_group,
                                       const DistillDataset& distill_data,
                                       const FrozenBackbone& backbone,
                                       const OptimizerSettings& opt,
                                       Activation act = Activation::kGelu,
                                       const ConsolidationObserver* observer = nullptr,
                                       const std::vector<ClassId>* required_cover = nullptr) {
  auto split = detail::DomainSplit::resolve(old_group, temp_group.domain,
                                            "consolidate_local");
  const size_t m = split.old_count();

  auto targets = [&, m](const Sample& s) -> std::vector<double> {
    auto new_logits = detail::group_logits(s, temp_group, backbone, act);
    if (m == 0) {
      double mean = 0.0;
      for (double v : new_logits) mean += v;
      mean /= static_cast<double>(new_logits.size());
      for (double& v : new_logits) v -= mean;
      return new_logits;
    }
    auto full_old = detail::group_logits(s, old_group, backbone, act);
    std::span<const double> old_segment(full_old.data(), m);
    return center_targets_local(old_segment, new_logits);
  };
  return detail::run_consolidation(old_group, split, targets, distill_data,
                                   backbone, opt, act, observer, required_cover);
}

// Server-side entropy-aware multiple distillation. Every upload must cover
// the identical canonical domain (old classes in the server's order followed
// by the sorted new classes); their new-segment logits are mixed with
// weights H^k / H_sum. `new_classes` names the segment being learned; the
// no-argument overload below derives it from the domain difference.
inline EnhancerGroup consolidate_global(const EnhancerGroup& old_group,
                                        const std::vector<TeacherUpload>& uploads,
                                        std::vector<ClassId> new_classes,
                                        const DistillDataset& auxiliary,
                                        const FrozenBackbone& backbone,
                                        const OptimizerSettings& opt,
                                        Activation act = Activation::kGelu,
                                        const ConsolidationObserver* observer = nullptr) {
  FEDET_CHECK(!uploads.empty(), "consolidate_global: no uploads");
  auto split = detail::DomainSplit::resolve(old_group, std::move(new_classes),
                                            "consolidate_global");
  const auto canonical = split.canonical();
  for (const auto& u : uploads)
    FEDET_CHECK(u.group.domain == canonical,
                "consolidate_global: domain mismatch across uploads for group "
                    << old_group.group_id);
  const size_t m = split.old_count();

  std::vector<double> entropies;
  entropies.reserve(uploads.size());
  for (const auto& u : uploads) entropies.push_back(u.entropy);

  auto targets = [&, m](const Sample& s) -> std::vector<double> {
    std::vector<std::vector<double>> new_segments;
    new_segments.reserve(uploads.size());
    for (const auto& u : uploads) {
      auto full = detail::group_logits(s, u.group, backbone, act);
      new_segments.emplace_back(full.begin() + static_cast<int64_t>(m), full.end());
    }
    if (m == 0) {
      // first task at the server: mix, then center the single segment
      std::vector<double> weights(uploads.size());
      double h_sum = 0.0;
      for (double h : entropies) h_sum += h;
      for (size_t k = 0; k < weights.size(); ++k)
        weights[k] = h_sum > 0.0 ? entropies[k] / h_sum
                                 : 1.0 / static_cast<double>(weights.size());
      std::vector<double> mixed(new_segments[0].size(), 0.0);
      for (size_t k = 0; k < new_segments.size(); ++k)
        for (size_t i = 0; i < mixed.size(); ++i)
          mixed[i] += weights[k] * new_segments[k][i];
      double mean = 0.0;
      for (double v : mixed) mean += v;
      mean /= static_cast<double>(mixed.size());
      for (double& v : mixed) v -= mean;
      return mixed;
    }
    auto full_old = detail::group_logits(s, old_group, backbone, act);
    std::span<const double> old_segment(full_old.data(), m);
    return center_targets_global(old_segment, new_segments, entropies);
  };
  return detail::run_consolidation(old_group, split, targets, auxiliary,
                                   backbone, opt, act, observer, nullptr);
}

inline EnhancerGroup consolidate_global(const EnhancerGroup& old_group,
                                        const std::vector<TeacherUpload>& uploads,
                                        const DistillDataset& auxiliary,
                                        const FrozenBackbone& backbone,
                                        const OptimizerSettings& opt,
                                        Activation act = Activation::kGelu,
                                        const ConsolidationObserver* observer = nullptr) {
  FEDET_CHECK(!uploads.empty(), "consolidate_global: no uploads");
  const auto& canonical = uploads[0].group.domain;
  FEDET_CHECK(canonical.size() > old_group.domain.size(),
              "consolidate_global: uploads carry no new classes");
  std::vector<ClassId> new_classes(
      canonical.begin() + static_cast<int64_t>(old_group.domain.size()),
      canonical.end());
  return consolidate_global(old_group, uploads, std::move(new_classes),
                            auxiliary, backbone, opt, act, observer);
}

}  // namespace fedet
