#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <span>
#include <vector>

#include "fedet/backbone.hpp"
#include "fedet/data.hpp"
#include "fedet/rng.hpp"

namespace fedet {

// Discrete distribution over class ids. Probabilities are nonnegative and
// sum to 1 within 1e-12.
class LabelDistribution {
public:
  LabelDistribution() = default;

  static LabelDistribution from_probs(std::map<ClassId, double> probs) {
    double sum = 0.0;
    for (const auto& [c, p] : probs) {
      FEDET_CHECK(p >= 0.0, "label distribution: negative probability for class " << c);
      sum += p;
    }
    FEDET_CHECK(std::abs(sum - 1.0) <= 1e-12,
                "label distribution: probabilities sum to " << sum);
    LabelDistribution d;
    d.p_ = std::move(probs);
    return d;
  }

  static LabelDistribution from_counts(const std::map<ClassId, int64_t>& counts) {
    int64_t total = 0;
    for (const auto& [c, n] : counts) {
      FEDET_CHECK(n >= 0, "label distribution: negative count for class " << c);
      total += n;
    }
    FEDET_CHECK(total > 0, "label distribution: no observations");
    std::map<ClassId, double> probs;
    for (const auto& [c, n] : counts)
      if (n > 0) probs[c] = static_cast<double>(n) / static_cast<double>(total);
    LabelDistribution d;
    d.p_ = std::move(probs);
    return d;
  }

  double prob(ClassId c) const {
    auto it = p_.find(c);
    return it == p_.end() ? 0.0 : it->second;
  }

  const std::map<ClassId, double>& probs() const { return p_; }
  bool empty() const { return p_.empty(); }

  // Conditional distribution given the support (renormalized).
  LabelDistribution restricted(std::span<const ClassId> support) const {
    std::map<ClassId, double> kept;
    double mass = 0.0;
    for (ClassId c : support) {
      double p = prob(c);
      if (p > 0.0) {
        kept[c] = p;
        mass += p;
      }
    }
    FEDET_CHECK(mass > 0.0, "label distribution: no mass on requested support");
    for (auto& [c, p] : kept) p /= mass;
    LabelDistribution d;
    d.p_ = std::move(kept);
    return d;
  }

private:
  std::map<ClassId, double> p_;
};

// H = -sum p ln p in nats, with 0 ln 0 = 0. The base is irrelevant to the
// aggregation weights H^k / H_sum (a base change rescales every term), which
// the distillation tests pin down as an invariant.
inline double entropy(const LabelDistribution& d) {
  FEDET_CHECK(!d.empty(), "entropy: empty distribution");
  double h = 0.0;
  for (const auto& [c, p] : d.probs())
    if (p > 0.0) h -= p * std::log(p);
  return h < 0.0 ? 0.0 : h;  // clamp -0.0 from rounding
}

// Per-client exemplar store. Per-class quota is floor(capacity / classes)
// with a hard floor of one exemplar; capacity must stay >= the number of
// learned classes. Exemplars are the samples nearest their class-mean
// embedding (a deterministic stand-in for "typical"); eviction removes the
// farthest first.
class SampleMemory {
public:
  SampleMemory(int64_t capacity, double store_ratio)
      : capacity_(capacity), store_ratio_(store_ratio) {
    FEDET_CHECK(capacity >= 1, "sample memory: capacity must be >= 1, got " << capacity);
    FEDET_CHECK(store_ratio > 0.0 && store_ratio <= 1.0,
                "sample memory: store ratio must be in (0,1], got " << store_ratio);
  }

  // Selects and stores exemplars for every class in `task` not seen before,
  // then re-evaluates quotas.
  void store_exemplars(std::span<const Sample> task, const FrozenBackbone& backbone) {
    std::map<ClassId, std::vector<const Sample*>> by_class;
    for (const auto& s : task)
      if (!store_.count(s.label)) by_class[s.label].push_back(&s);
    if (by_class.empty()) return;

    FEDET_CHECK(static_cast<int64_t>(store_.size() + by_class.size()) <= capacity_,
                "sample memory: capacity " << capacity_ << " cannot hold "
                                           << store_.size() + by_class.size()
                                           << " classes");

    for (auto& [label, samples] : by_class) {
      std::vector<std::vector<double>> embs;
      embs.reserve(samples.size());
      for (const Sample* s : samples) {
        auto enc = backbone.encode(backbone.embed(s->features));
        embs.push_back(enc.pooled.data());
      }
      std::vector<double> mean(embs[0].size(), 0.0);
      for (const auto& e : embs)
        for (size_t i = 0; i < e.size(); ++i) mean[i] += e[i];
      for (auto& v : mean) v /= static_cast<double>(embs.size());

      std::vector<Entry> entries;
      for (size_t k = 0; k < samples.size(); ++k) {
        double d2 = 0.0;
        for (size_t i = 0; i < mean.size(); ++i) {
          double diff = embs[k][i] - mean[i];
          d2 += diff * diff;
        }
        entries.push_back({*samples[k], std::sqrt(d2), k});
      }
      std::stable_sort(entries.begin(), entries.end(),
                       [](const Entry& a, const Entry& b) { return a.dist < b.dist; });

      auto eligible = static_cast<size_t>(std::max<int64_t>(
          1, static_cast<int64_t>(store_ratio_ * static_cast<double>(samples.size()))));
      entries.resize(std::min(entries.size(), eligible));
      store_[label] = std::move(entries);
    }
    enforce_quota();
  }

  int64_t quota() const {
    if (store_.empty()) return capacity_;
    return std::max<int64_t>(1, capacity_ / static_cast<int64_t>(store_.size()));
  }

  bool has_class(ClassId c) const { return store_.count(c) != 0; }

  std::vector<ClassId> classes() const {
    std::vector<ClassId> out;
    for (const auto& [c, _] : store_) out.push_back(c);
    return out;
  }

  int64_t total_stored() const {
    int64_t n = 0;
    for (const auto& [c, v] : store_) n += static_cast<int64_t>(v.size());
    return n;
  }

  int64_t stored_for(ClassId c) const {
    auto it = store_.find(c);
    return it == store_.end() ? 0 : static_cast<int64_t>(it->second.size());
  }

  const Sample& exemplar(ClassId c, size_t i) const {
    auto it = store_.find(c);
    FEDET_CHECK(it != store_.end(), "sample memory: no exemplar for class " << c);
    return it->second.at(i % it->second.size()).sample;
  }

  // Balanced (+-1) augmented dataset over `classes`: each element is a
  // stored exemplar plus seeded N(0, sigma^2) feature noise. sigma = 0
  // reproduces exemplars exactly. Extra samples (size % classes) go to the
  // earliest classes in the given order.
  VectorDataset build_distill_set(const std::vector<ClassId>& classes,
                                  int64_t size, double sigma,
                                  uint64_t seed) const {
    FEDET_CHECK(!classes.empty(), "distill set: no classes requested");
    FEDET_CHECK(size >= 0, "distill set: negative size");
    for (ClassId c : classes)
      FEDET_CHECK(has_class(c), "distill set: no exemplar stored for class " << c);

    Rng rng(seed);
    std::vector<Sample> out;
    out.reserve(static_cast<size_t>(size));
    const int64_t base = size / static_cast<int64_t>(classes.size());
    const int64_t extra = size % static_cast<int64_t>(classes.size());
    for (size_t ci = 0; ci < classes.size(); ++ci) {
      ClassId c = classes[ci];
      int64_t n = base + (static_cast<int64_t>(ci) < extra ? 1 : 0);
      for (int64_t i = 0; i < n; ++i) {
        const Sample& ex = exemplar(c, static_cast<size_t>(i));
        std::vector<double> aug = ex.features.data();
        for (auto& v : aug) v += rng.gaussian(0.0, sigma);
        out.push_back({Tensor::from_data(ex.features.shape(), std::move(aug)), c});
      }
    }
    return VectorDataset(std::move(out));
  }

private:
  struct Entry {
    Sample sample;
    double dist;   // embedding distance to the class mean at store time
    size_t order;  // original position, for stable ties
  };

  void enforce_quota() {
    int64_t q = quota();
    for (auto& [c, entries] : store_)
      if (static_cast<int64_t>(entries.size()) > q)
        entries.resize(static_cast<size_t>(q));  // sorted nearest-first
  }

  int64_t capacity_;
  double store_ratio_;
  std::map<ClassId, std::vector<Entry>> store_;
};

// Server-side pool of labeled public data, the "available data of a similar
// domain" used to build auxiliary datasets.
struct PublicPool {
  std::map<ClassId, std::vector<Sample>> samples;

  void add(Sample s) { samples[s.label].push_back(std::move(s)); }
  bool has(ClassId c) const {
    auto it = samples.find(c);
    return it != samples.end() && !it->second.empty();
  }
};

// Draws per-class counts by largest-remainder rounding of size * P_y, then
// serves samples lazily: nothing beyond the requested element is
// materialized, and the whole object is discarded after distillation.
class AuxiliaryDataset final : public DistillDataset {
public:
  AuxiliaryDataset(const LabelDistribution& target, const PublicPool& pool,
                   int64_t size, uint64_t seed)
      : pool_(&pool), seed_(seed) {
    FEDET_CHECK(size >= 0, "auxiliary dataset: negative size");
    for (const auto& [c, p] : target.probs())
      if (p > 0.0)
        FEDET_CHECK(pool.has(c),
                    "auxiliary dataset: class " << c << " has probability " << p
                                                << " but no public samples");

    // largest-remainder apportionment; ties favor the lower class id
    struct Part {
      ClassId c;
      int64_t base;
      double rem;
    };
    std::vector<Part> parts;
    int64_t assigned = 0;
    for (const auto& [c, p] : target.probs()) {
      if (p <= 0.0) continue;
      double exact = p * static_cast<double>(size);
      auto base = static_cast<int64_t>(std::floor(exact));
      parts.push_back({c, base, exact - static_cast<double>(base)});
      assigned += base;
    }
    std::stable_sort(parts.begin(), parts.end(), [](const Part& a, const Part& b) {
      return a.rem > b.rem;
    });
    for (int64_t i = 0; i < size - assigned; ++i)
      parts[static_cast<size_t>(i) % parts.size()].base += 1;

    counts_.clear();
    for (const auto& p : parts) counts_[p.c] = p.base;

    sequence_.reserve(static_cast<size_t>(size));
    for (const auto& [c, n] : counts_)
      for (int64_t i = 0; i < n; ++i) sequence_.push_back(c);
    Rng rng(derive_seed(seed, 0xau));
    rng.shuffle(sequence_);
  }

  size_t size() const override { return sequence_.size(); }

  Sample at(size_t i) const override {
    ClassId c = sequence_.at(i);
    const auto& bucket = pool_->samples.at(c);
    size_t pick = static_cast<size_t>(
        splitmix64(seed_ ^ splitmix64(static_cast<uint64_t>(i))) % bucket.size());
    return bucket[pick];
  }

  const std::map<ClassId, int64_t>& per_class_counts() const { return counts_; }

private:
  const PublicPool* pool_;  // must outlive the dataset
  uint64_t seed_;
  std::map<ClassId, int64_t> counts_;
  std::vector<ClassId> sequence_;
};

}  // namespace fedet
