#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "fedet/memory.hpp"

using namespace fedet;

namespace {

BackboneConfig tiny_config() {
  BackboneConfig c;
  c.depth = 1;
  c.hidden = 8;
  c.heads = 2;
  c.ff_width = 12;
  c.max_seq_len = 6;
  c.feature_dim = 3;
  c.seed = 5;
  return c;
}

Tensor feat(Rng& rng, int64_t seq = 2, int64_t dim = 3) {
  std::vector<double> d(static_cast<size_t>(seq * dim));
  for (auto& v : d) v = rng.gaussian();
  return Tensor::from_data({seq, dim}, std::move(d));
}

}  // namespace

TEST_CASE("entropy values") {
  auto uniform4 = LabelDistribution::from_probs(
      {{0, 0.25}, {1, 0.25}, {2, 0.25}, {3, 0.25}});
  REQUIRE(entropy(uniform4) == Catch::Approx(std::log(4.0)).epsilon(1e-12));

  auto single = LabelDistribution::from_probs({{7, 1.0}});
  REQUIRE(entropy(single) == 0.0);

  auto skew = LabelDistribution::from_probs({{0, 0.5}, {1, 0.25}, {2, 0.25}});
  REQUIRE(entropy(skew) == Catch::Approx(1.039721).margin(1e-6));
}

TEST_CASE("label distribution validation") {
  REQUIRE_THROWS_AS(LabelDistribution::from_probs({{0, 0.5}, {1, 0.6}}), Error);
  REQUIRE_THROWS_AS(LabelDistribution::from_probs({{0, -0.1}, {1, 1.1}}), Error);
  REQUIRE_THROWS_AS(LabelDistribution::from_counts({{0, 0}}), Error);

  auto d = LabelDistribution::from_counts({{0, 3}, {1, 1}});
  REQUIRE(d.prob(0) == 0.75);
  REQUIRE(d.prob(2) == 0.0);

  std::vector<ClassId> support{0};
  auto r = d.restricted(support);
  REQUIRE(r.prob(0) == 1.0);
}

TEST_CASE("entropy is maximal exactly at uniform over a fixed support") {
  Rng rng(31);
  double h_uniform = entropy(LabelDistribution::from_probs(
      {{0, 1.0 / 3}, {1, 1.0 / 3}, {2, 1.0 - 2.0 / 3}}));
  for (int trial = 0; trial < 200; ++trial) {
    double a = rng.uniform(0.01, 1.0), b = rng.uniform(0.01, 1.0),
           c = rng.uniform(0.01, 1.0);
    double z = a + b + c;
    auto d = LabelDistribution::from_probs({{0, a / z}, {1, b / z}, {2, 1.0 - a / z - b / z}});
    REQUIRE(entropy(d) >= 0.0);
    REQUIRE(entropy(d) <= h_uniform + 1e-9);
  }
}

TEST_CASE("memory stores the single sample of a single class") {
  FrozenBackbone bb(tiny_config());
  SampleMemory mem(4, 1.0);
  Rng rng(1);
  std::vector<Sample> task{{feat(rng), 3}};
  mem.store_exemplars(task, bb);
  REQUIRE(mem.has_class(3));
  REQUIRE(mem.total_stored() == 1);
  REQUIRE(mem.exemplar(3, 0).features.data() == task[0].features.data());
}

TEST_CASE("quota arithmetic: capacity 4, four classes, one exemplar each") {
  FrozenBackbone bb(tiny_config());
  SampleMemory mem(4, 1.0);
  Rng rng(2);
  for (ClassId c = 0; c < 4; ++c) {
    std::vector<Sample> task;
    for (int i = 0; i < 5; ++i) task.push_back({feat(rng), c});
    mem.store_exemplars(task, bb);
  }
  REQUIRE(mem.classes().size() == 4);
  REQUIRE(mem.quota() == 1);
  for (ClassId c = 0; c < 4; ++c) REQUIRE(mem.stored_for(c) == 1);
  REQUIRE(mem.total_stored() == 4);
}

TEST_CASE("exemplar selection picks the nearest-to-mean sample (brute force)") {
  FrozenBackbone bb(tiny_config());
  SampleMemory mem(1, 1.0);  // quota 1: only the nearest survives
  Rng rng(7);
  std::vector<Sample> task;
  for (int i = 0; i < 3; ++i) task.push_back({feat(rng), 9});

  // independent recomputation of the embedding distances
  std::vector<std::vector<double>> embs;
  for (const auto& s : task)
    embs.push_back(bb.encode(bb.embed(s.features)).pooled.data());
  std::vector<double> mean(embs[0].size(), 0.0);
  for (const auto& e : embs)
    for (size_t i = 0; i < e.size(); ++i) mean[i] += e[i] / 3.0;
  size_t expect = 0;
  double best = 1e300;
  for (size_t k = 0; k < embs.size(); ++k) {
    double d2 = 0;
    for (size_t i = 0; i < mean.size(); ++i)
      d2 += (embs[k][i] - mean[i]) * (embs[k][i] - mean[i]);
    if (d2 < best) {
      best = d2;
      expect = k;
    }
  }

  mem.store_exemplars(task, bb);
  REQUIRE(mem.stored_for(9) == 1);
  REQUIRE(mem.exemplar(9, 0).features.data() == task[expect].features.data());
}

TEST_CASE("memory rejects zero capacity and over-capacity class counts") {
  REQUIRE_THROWS_AS(SampleMemory(0, 1.0), Error);
  FrozenBackbone bb(tiny_config());
  SampleMemory mem(2, 1.0);
  Rng rng(8);
  std::vector<Sample> task;
  for (ClassId c = 0; c < 3; ++c) task.push_back({feat(rng), c});
  REQUIRE_THROWS_AS(mem.store_exemplars(task, bb), Error);
}

TEST_CASE("store ratio caps the eligible exemplars per class") {
  FrozenBackbone bb(tiny_config());
  SampleMemory mem(100, 0.2);  // eligible = max(1, floor(0.2 * 10)) = 2
  Rng rng(9);
  std::vector<Sample> task;
  for (int i = 0; i < 10; ++i) task.push_back({feat(rng), 1});
  mem.store_exemplars(task, bb);
  REQUIRE(mem.stored_for(1) == 2);
}

TEST_CASE("memory never exceeds capacity over random task streams") {
  FrozenBackbone bb(tiny_config());
  Rng rng(10);
  for (int trial = 0; trial < 5; ++trial) {
    int64_t cap = 3 + static_cast<int64_t>(rng.next_below(6));
    SampleMemory mem(cap, 1.0);
    ClassId next_class = 0;
    for (int step = 0; step < 6; ++step) {
      std::vector<Sample> task;
      auto n_classes = 1 + rng.next_below(2);
      for (uint64_t c = 0; c < n_classes; ++c) {
        if (static_cast<int64_t>(next_class) >= cap) break;
        auto n = 1 + rng.next_below(4);
        for (uint64_t i = 0; i < n; ++i) task.push_back({feat(rng), next_class});
        ++next_class;
      }
      if (task.empty()) break;
      mem.store_exemplars(task, bb);
      REQUIRE(mem.total_stored() <= cap);
      for (ClassId c : mem.classes()) REQUIRE(mem.stored_for(c) >= 1);
    }
  }
}

TEST_CASE("distill set balance, degenerate sigma, determinism") {
  FrozenBackbone bb(tiny_config());
  SampleMemory mem(4, 1.0);
  Rng rng(11);
  std::vector<Sample> task{{feat(rng), 0}, {feat(rng), 1}};
  mem.store_exemplars(task, bb);

  auto u = mem.build_distill_set({0, 1}, 4, 0.0, 99);
  REQUIRE(u.size() == 4);
  std::map<ClassId, int> counts;
  for (size_t i = 0; i < u.size(); ++i) counts[u.at(i).label]++;
  REQUIRE(counts[0] == 2);
  REQUIRE(counts[1] == 2);

  // sigma = 0: samples equal exemplars exactly
  for (size_t i = 0; i < u.size(); ++i) {
    const auto& ex = mem.exemplar(u.at(i).label, 0);
    REQUIRE(u.at(i).features.data() == ex.features.data());
  }

  auto u2 = mem.build_distill_set({0, 1}, 4, 0.35, 123);
  auto u3 = mem.build_distill_set({0, 1}, 4, 0.35, 123);
  for (size_t i = 0; i < u2.size(); ++i)
    REQUIRE(u2.at(i).features.data() == u3.at(i).features.data());

  REQUIRE_THROWS_WITH(mem.build_distill_set({0, 5}, 4, 0.0, 1),
                      Catch::Matchers::ContainsSubstring("5"));
}

TEST_CASE("auxiliary dataset: apportionment and lazy access") {
  Rng rng(12);
  PublicPool pool;
  for (ClassId c = 0; c < 3; ++c)
    for (int i = 0; i < 6; ++i) pool.add({feat(rng), c});

  SECTION("uniform two classes, size 10 -> 5 + 5") {
    auto p = LabelDistribution::from_probs({{0, 0.5}, {1, 0.5}});
    AuxiliaryDataset aux(p, pool, 10, 42);
    REQUIRE(aux.per_class_counts().at(0) == 5);
    REQUIRE(aux.per_class_counts().at(1) == 5);
    REQUIRE(aux.size() == 10);
  }

  SECTION("largest remainder by hand: (0.5, 0.25, 0.25) x 8 -> (4,2,2)") {
    auto p = LabelDistribution::from_probs({{0, 0.5}, {1, 0.25}, {2, 0.25}});
    AuxiliaryDataset aux(p, pool, 8, 42);
    REQUIRE(aux.per_class_counts().at(0) == 4);
    REQUIRE(aux.per_class_counts().at(1) == 2);
    REQUIRE(aux.per_class_counts().at(2) == 2);
  }

  SECTION("size 0 -> empty") {
    auto p = LabelDistribution::from_probs({{0, 1.0}});
    AuxiliaryDataset aux(p, pool, 0, 42);
    REQUIRE(aux.size() == 0);
  }

  SECTION("positive-probability class missing from the pool is rejected") {
    auto p = LabelDistribution::from_probs({{0, 0.5}, {9, 0.5}});
    REQUIRE_THROWS_WITH(AuxiliaryDataset(p, pool, 4, 42),
                        Catch::Matchers::ContainsSubstring("9"));
  }

  SECTION("counts sum to size for random distributions") {
    Rng prng(13);
    for (int trial = 0; trial < 100; ++trial) {
      double a = prng.uniform(0.01, 1), b = prng.uniform(0.01, 1),
             c = prng.uniform(0.01, 1);
      double z = a + b + c;
      auto p = LabelDistribution::from_probs(
          {{0, a / z}, {1, b / z}, {2, 1.0 - a / z - b / z}});
      int64_t size = static_cast<int64_t>(prng.next_below(40));
      AuxiliaryDataset aux(p, pool, size, trial);
      int64_t total = 0;
      for (const auto& [cls, n] : aux.per_class_counts()) total += n;
      REQUIRE(total == size);
      REQUIRE(aux.size() == static_cast<size_t>(size));
    }
  }

  SECTION("access is deterministic and labels follow the sequence") {
    auto p = LabelDistribution::from_probs({{0, 0.5}, {1, 0.5}});
    AuxiliaryDataset a1(p, pool, 6, 7), a2(p, pool, 6, 7);
    std::map<ClassId, int> seen;
    for (size_t i = 0; i < a1.size(); ++i) {
      REQUIRE(a1.at(i).features.data() == a2.at(i).features.data());
      REQUIRE(a1.at(i).label == a2.at(i).label);
      seen[a1.at(i).label]++;
    }
    REQUIRE(seen[0] == 3);
    REQUIRE(seen[1] == 3);
  }
}
