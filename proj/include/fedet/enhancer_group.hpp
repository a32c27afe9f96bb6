#pragma once

#include <algorithm>
#include <map>
#include <optional>
#include <span>
#include <vector>

#include "fedet/backbone.hpp"
#include "fedet/data.hpp"
#include "fedet/enhancer.hpp"

namespace fedet {

// D enhancers plus a bias-free prediction head over the group's class domain.
// The head column order follows `domain`; logits are raw scores, never
// normalized here.
struct EnhancerGroup {
  uint32_t group_id = 0;
  std::vector<EnhancerParams> enhancers;
  Tensor head;                  // hidden x |domain|; undefined while domain is empty
  std::vector<ClassId> domain;  // ordered, duplicate-free

  bool empty() const { return domain.empty(); }
  int64_t hidden() const { return enhancers.at(0).hidden(); }
  int64_t bottleneck() const { return enhancers.at(0).bottleneck(); }
  int64_t depth() const { return static_cast<int64_t>(enhancers.size()); }

  int64_t trainable_parameter_count() const {
    int64_t n = 0;
    for (const auto& e : enhancers) n += e.parameter_count();
    if (head.defined()) n += head.numel();
    return n;
  }

  std::vector<Tensor> parameters() const {
    std::vector<Tensor> out;
    for (const auto& e : enhancers)
      for (auto& t : e.parameters()) out.push_back(t);
    if (head.defined()) out.push_back(head);
    return out;
  }

  EnhancerGroup clone(bool trainable) const {
    EnhancerGroup g;
    g.group_id = group_id;
    g.domain = domain;
    g.enhancers.reserve(enhancers.size());
    for (const auto& e : enhancers) g.enhancers.push_back(e.clone(trainable));
    if (head.defined())
      g.head = Tensor::from_data(head.shape(), head.data(), trainable);
    return g;
  }

  // Copy of this group with the given classes (and their head columns)
  // removed; used when another group becomes the canonical owner.
  EnhancerGroup without_classes(const std::vector<ClassId>& classes) const {
    EnhancerGroup g;
    g.group_id = group_id;
    for (const auto& e : enhancers) g.enhancers.push_back(e.clone(false));
    std::vector<int64_t> kept_cols;
    for (size_t i = 0; i < domain.size(); ++i)
      if (std::find(classes.begin(), classes.end(), domain[i]) == classes.end()) {
        g.domain.push_back(domain[i]);
        kept_cols.push_back(static_cast<int64_t>(i));
      }
    if (!g.domain.empty()) {
      const int64_t d = hidden();
      const auto old_c = static_cast<int64_t>(domain.size());
      const auto new_c = static_cast<int64_t>(kept_cols.size());
      std::vector<double> h(static_cast<size_t>(d * new_c));
      const auto& src = head.data();
      for (int64_t r = 0; r < d; ++r)
        for (int64_t j = 0; j < new_c; ++j)
          h[static_cast<size_t>(r * new_c + j)] =
              src[static_cast<size_t>(r * old_c + kept_cols[static_cast<size_t>(j)])];
      g.head = Tensor::from_data({d, new_c}, std::move(h), false);
    }
    return g;
  }

  void validate_against(const FrozenBackbone& backbone) const {
    FEDET_CHECK(depth() == backbone.depth(),
                "group " << group_id << ": " << depth() << " enhancers vs backbone depth "
                         << backbone.depth());
    for (const auto& e : enhancers)
      FEDET_CHECK(e.hidden() == backbone.hidden(),
                  "group " << group_id << ": enhancer width " << e.hidden()
                           << " vs backbone hidden " << backbone.hidden());
    if (!domain.empty()) {
      FEDET_CHECK(head.defined() && head.rank() == 2 &&
                      head.dim(0) == backbone.hidden() &&
                      head.dim(1) == static_cast<int64_t>(domain.size()),
                  "group " << group_id << ": head shape vs domain size "
                           << domain.size());
    }
    std::vector<ClassId> sorted = domain;
    std::sort(sorted.begin(), sorted.end());
    FEDET_CHECK(std::adjacent_find(sorted.begin(), sorted.end()) == sorted.end(),
                "group " << group_id << ": duplicate class in domain");
  }

  // Fresh group: identity-start enhancers, empty domain, no head.
  static EnhancerGroup fresh(uint32_t group_id, int64_t depth, int64_t hidden,
                             int64_t bottleneck, Rng& rng) {
    EnhancerGroup g;
    g.group_id = group_id;
    g.enhancers.reserve(static_cast<size_t>(depth));
    for (int64_t i = 0; i < depth; ++i)
      g.enhancers.push_back(EnhancerParams::init(hidden, bottleneck, rng));
    return g;
  }
};

// Raw logits over group.domain for one sample.
inline Tensor group_forward(const Sample& sample, const EnhancerGroup& group,
                            const FrozenBackbone& backbone,
                            Activation act = Activation::kGelu) {
  FEDET_CHECK(!group.empty(), "group_forward: group " << group.group_id
                                                      << " has an empty domain");
  group.validate_against(backbone);
  auto hidden = backbone.embed(sample.features);
  auto enc = backbone.encode(hidden, group.enhancers, act);
  return matmul(enc.pooled, group.head);
}

struct EnhancerPool {
  std::vector<EnhancerGroup> groups;

  EnhancerGroup& group(uint32_t id) {
    FEDET_CHECK(id < groups.size(), "unknown group id " << id);
    return groups[id];
  }
  const EnhancerGroup& group(uint32_t id) const {
    FEDET_CHECK(id < groups.size(), "unknown group id " << id);
    return groups[id];
  }

  // M^A: every class some group is responsible for.
  std::vector<ClassId> all_classes() const {
    std::vector<ClassId> out;
    for (const auto& g : groups)
      out.insert(out.end(), g.domain.begin(), g.domain.end());
    std::sort(out.begin(), out.end());
    return out;
  }

  std::optional<uint32_t> group_of_class(ClassId c) const {
    for (const auto& g : groups)
      if (std::find(g.domain.begin(), g.domain.end(), c) != g.domain.end())
        return g.group_id;
    return std::nullopt;
  }

  // Domains must partition M^A.
  void validate_disjoint() const {
    auto all = all_classes();
    FEDET_CHECK(std::adjacent_find(all.begin(), all.end()) == all.end(),
                "pool: class present in two group domains");
  }

  int64_t trainable_parameter_count() const {
    int64_t n = 0;
    for (const auto& g : groups) n += g.trainable_parameter_count();
    return n;
  }

  static EnhancerPool fresh(int64_t group_count, const FrozenBackbone& backbone,
                            int64_t bottleneck, uint64_t seed) {
    FEDET_CHECK(group_count >= 1, "pool: need at least one group");
    EnhancerPool pool;
    for (int64_t j = 0; j < group_count; ++j) {
      Rng rng(derive_seed(seed, 0x9001u, static_cast<uint64_t>(j)));
      pool.groups.push_back(EnhancerGroup::fresh(static_cast<uint32_t>(j),
                                                 backbone.depth(),
                                                 backbone.hidden(), bottleneck,
                                                 rng));
    }
    return pool;
  }
};

namespace detail {

inline double cosine(const std::vector<double>& a, const std::vector<double>& b) {
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0.0 || nb == 0.0) return 0.0;
  return dot / (std::sqrt(na) * std::sqrt(nb));
}

}  // namespace detail

// Frozen routing classifier: nearest class prototype over bare-backbone
// embeddings. Prototypes are registered once per class (at assignment) and
// never move afterwards.
class SelectModule {
public:
  explicit SelectModule(const FrozenBackbone& backbone) : backbone_(&backbone) {}

  // Pooled embedding with no enhancers attached.
  std::vector<double> embed_pooled(const Tensor& features) const {
    auto enc = backbone_->encode(backbone_->embed(features));
    return enc.pooled.data();
  }

  bool knows(ClassId c) const { return prototypes_.count(c) != 0; }

  const std::map<ClassId, std::vector<double>>& prototypes() const {
    return prototypes_;
  }

  std::optional<uint32_t> group_of(ClassId c) const {
    auto it = class_to_group_.find(c);
    if (it == class_to_group_.end()) return std::nullopt;
    return it->second;
  }

  void register_class(ClassId c, std::vector<double> prototype, uint32_t group) {
    FEDET_CHECK(static_cast<int64_t>(prototype.size()) == backbone_->hidden(),
                "prototype width " << prototype.size() << " vs hidden "
                                   << backbone_->hidden());
    prototypes_[c] = std::move(prototype);
    class_to_group_[c] = group;
  }

  void forget_class(ClassId c) {
    prototypes_.erase(c);
    class_to_group_.erase(c);
  }

  // Nearest prototype by cosine similarity; equidistant prototypes resolve
  // to the lowest class id (map iteration order is ascending, strict > keeps
  // the first seen).
  ClassId nearest_class(const std::vector<double>& embedding) const {
    FEDET_CHECK(!prototypes_.empty(), "selector has no prototypes");
    ClassId best = prototypes_.begin()->first;
    double best_sim = -2.0;
    for (const auto& [c, proto] : prototypes_) {
      double sim = detail::cosine(embedding, proto);
      if (sim > best_sim) {
        best_sim = sim;
        best = c;
      }
    }
    return best;
  }

  uint32_t select_group(const Tensor& features, const EnhancerPool& pool) const {
    FEDET_CHECK(!pool.groups.empty(), "select_group: empty pool");
    ClassId c = nearest_class(embed_pooled(features));
    auto g = group_of(c);
    FEDET_CHECK(g.has_value(), "select_group: class " << c << " mapped to no group");
    return *g;
  }

  // Routes a whole batch of new classes to one group: the first empty group
  // if any, otherwise the group whose prototypes are most similar on average
  // to the new-class mean embeddings. Registers prototypes (the per-class
  // mean embedding) for every new class.
  uint32_t assign_new_classes(std::span<const Sample> samples,
                              const std::vector<ClassId>& new_classes,
                              const EnhancerPool& pool) {
    FEDET_CHECK(!new_classes.empty(), "assign_new_classes: no new classes");
    FEDET_CHECK(!pool.groups.empty(), "assign_new_classes: empty pool");
    for (ClassId c : new_classes)
      FEDET_CHECK(!knows(c) && !pool.group_of_class(c).has_value(),
                  "assign_new_classes: class " << c << " already learned");

    std::map<ClassId, std::vector<double>> means;
    std::map<ClassId, int64_t> counts;
    for (const auto& s : samples) {
      if (std::find(new_classes.begin(), new_classes.end(), s.label) ==
          new_classes.end())
        continue;
      auto emb = embed_pooled(s.features);
      auto& acc = means[s.label];
      if (acc.empty()) acc.assign(emb.size(), 0.0);
      for (size_t i = 0; i < emb.size(); ++i) acc[i] += emb[i];
      counts[s.label]++;
    }
    for (ClassId c : new_classes)
      FEDET_CHECK(counts.count(c), "assign_new_classes: no samples for class " << c);
    for (auto& [c, acc] : means)
      for (auto& v : acc) v /= static_cast<double>(counts[c]);

    uint32_t chosen = 0;
    bool found_empty = false;
    for (const auto& g : pool.groups)
      if (g.empty()) {
        chosen = g.group_id;
        found_empty = true;
        break;
      }
    if (!found_empty) {
      double best_score = -2.0;
      for (const auto& g : pool.groups) {
        double score = 0.0;
        int64_t terms = 0;
        for (ClassId c : g.domain) {
          auto it = prototypes_.find(c);
          if (it == prototypes_.end()) continue;
          for (const auto& [nc, mean] : means) {
            score += detail::cosine(mean, it->second);
            ++terms;
          }
        }
        if (terms > 0) score /= static_cast<double>(terms);
        if (score > best_score) {
          best_score = score;
          chosen = g.group_id;
        }
      }
    }

    for (auto& [c, mean] : means) register_class(c, mean, chosen);
    return chosen;
  }

  // Per-group mean cosine similarity between new-class means and the group's
  // registered prototypes; exposed for tests that pin down the argmax.
  double group_affinity(const std::vector<std::vector<double>>& class_means,
                        const EnhancerGroup& g) const {
    double score = 0.0;
    int64_t terms = 0;
    for (ClassId c : g.domain) {
      auto it = prototypes_.find(c);
      if (it == prototypes_.end()) continue;
      for (const auto& mean : class_means) {
        score += detail::cosine(mean, it->second);
        ++terms;
      }
    }
    return terms > 0 ? score / static_cast<double>(terms) : 0.0;
  }

private:
  const FrozenBackbone* backbone_;
  std::map<ClassId, std::vector<double>> prototypes_;
  std::map<ClassId, uint32_t> class_to_group_;
};

}  // namespace fedet
